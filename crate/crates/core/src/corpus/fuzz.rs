//! Type-aware stdin fuzzer.
//!
//! Four generators cover the usual competitive-programming input shapes.
//! All randomness comes from a `ChaCha8Rng` seeded per program, and every
//! generator draws in a fixed documented order so a sequence can be
//! reproduced by replaying the same calls on a fresh stream:
//!
//! * integer: `gen_bool(0.2)`; if true, `gen_range(0..k)` indexes the
//!   in-range subset of [`SPECIAL_INTEGERS`], otherwise `gen_range(lo..=hi)`.
//! * integer list: `gen_range(1..=20)` elements, each an integer draw,
//!   joined by single spaces.
//! * lowercase string: `gen_range(1..=50)` characters, each
//!   `gen_range(b'a'..=b'z')`.
//! * multi-line: `gen_range(2..=5)` lines, each line picks one of the three
//!   generators above with `gen_range(0..3)` and draws from it.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Program;
use crate::hashing::derive_seed;

/// Values that receive 20% of the integer generator's mass.
pub const SPECIAL_INTEGERS: [i64; 5] = [-1, 0, 1, 2, 10];

const MAX_ATTEMPTS_PER_INPUT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    IntegerLine,
    IntegerList,
    LowercaseString,
    MultiLine,
}

impl Generator {
    pub const ALL: [Generator; 4] = [
        Generator::IntegerLine,
        Generator::IntegerList,
        Generator::LowercaseString,
        Generator::MultiLine,
    ];
}

#[derive(Debug, Clone)]
pub struct Fuzzer {
    pub generators: Vec<Generator>,
    pub int_range: (i64, i64),
}

impl Default for Fuzzer {
    fn default() -> Self {
        Fuzzer {
            generators: Generator::ALL.to_vec(),
            int_range: (-1_000_000, 1_000_000),
        }
    }
}

impl Fuzzer {
    pub fn draw_integer(&self, rng: &mut ChaCha8Rng) -> i64 {
        let (lo, hi) = self.int_range;
        let specials: Vec<i64> = SPECIAL_INTEGERS
            .iter()
            .copied()
            .filter(|v| (lo..=hi).contains(v))
            .collect();
        if !specials.is_empty() && rng.gen_bool(0.2) {
            specials[rng.gen_range(0..specials.len())]
        } else {
            rng.gen_range(lo..=hi)
        }
    }

    pub fn generate(&self, generator: Generator, rng: &mut ChaCha8Rng) -> String {
        match generator {
            Generator::IntegerLine => self.draw_integer(rng).to_string(),
            Generator::IntegerList => {
                let len = rng.gen_range(1..=20);
                (0..len)
                    .map(|_| self.draw_integer(rng).to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            Generator::LowercaseString => {
                let len = rng.gen_range(1..=50);
                (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
            }
            Generator::MultiLine => {
                let lines = rng.gen_range(2..=5);
                (0..lines)
                    .map(|_| {
                        let inner = match rng.gen_range(0..3) {
                            0 => Generator::IntegerLine,
                            1 => Generator::IntegerList,
                            _ => Generator::LowercaseString,
                        };
                        self.generate(inner, rng)
                    })
                    .collect::<Vec<_>>()
                    .join("\n")
            }
        }
    }

    /// Up to `budget` distinct inputs, cycling through the enabled
    /// generators round-robin. Gives up after a bounded number of attempts,
    /// so the result may be shorter than `budget`.
    pub fn inputs(&self, budget: usize, seed: u64) -> Vec<String> {
        if self.generators.is_empty() {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(budget);
        let max_attempts = budget.saturating_mul(MAX_ATTEMPTS_PER_INPUT);
        let mut attempt = 0;
        while out.len() < budget && attempt < max_attempts {
            let generator = self.generators[attempt % self.generators.len()];
            attempt += 1;
            let candidate = self.generate(generator, &mut rng);
            if seen.insert(candidate.clone()) {
                out.push(candidate);
            }
        }
        out
    }
}

/// Inputs for one program with the default grammar. The per-program stream
/// is derived from `seed` and the program's identity, so results do not
/// depend on processing order.
pub fn fuzz_inputs(program: &Program, budget: usize, seed: u64) -> Vec<String> {
    let stream = derive_seed(seed, &[&program.problem_id, &program.submission_id]);
    Fuzzer::default().inputs(budget, stream)
}
