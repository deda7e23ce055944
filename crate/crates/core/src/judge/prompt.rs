//! Prompt rendering and verdict parsing.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::Verdict;
use crate::corpus::Triple;
use crate::hashing::sha256_parts;

pub const SYSTEM_INSTRUCTION: &str = "You will be shown a Python program, an input that is fed to the program on standard input, and a candidate output. Decide whether running the program on that input prints exactly the candidate output.";
const PROGRAM_HEADER: &str = "Program:\n```python\n";
const INPUT_HEADER: &str = "\n```\n\nInput:\n```\n";
const OUTPUT_HEADER: &str = "\n```\n\nCandidate output:\n```\n";
pub const QUESTION: &str = "\n```\n\nDoes the candidate output exactly match the program's output on this input? Answer with exactly \"yes\" or \"no\".";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

/// Hash of every fixed template piece; changes whenever the template does.
pub fn prompt_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        sha256_parts(&[SYSTEM_INSTRUCTION, PROGRAM_HEADER, INPUT_HEADER, OUTPUT_HEADER, QUESTION])[..16].to_string()
    })
}

pub fn render_prompt(triple: &Triple) -> Prompt {
    let mut user = String::with_capacity(
        PROGRAM_HEADER.len() + triple.code.len() + triple.input.len() + triple.output.len() + 256,
    );
    user.push_str(PROGRAM_HEADER);
    user.push_str(&triple.code);
    user.push_str(INPUT_HEADER);
    user.push_str(&triple.input);
    user.push_str(OUTPUT_HEADER);
    user.push_str(&triple.output);
    user.push_str(QUESTION);
    Prompt { system: SYSTEM_INSTRUCTION.to_string(), user }
}

/// Last standalone `yes`/`no` token, case-insensitive.
pub fn parse_judgment(response: &str) -> Verdict {
    response
        .split(|c: char| !c.is_alphanumeric())
        .rev()
        .find_map(|tok| {
            if tok.eq_ignore_ascii_case("yes") {
                Some(Verdict::Match)
            } else if tok.eq_ignore_ascii_case("no") {
                Some(Verdict::NoMatch)
            } else {
                None
            }
        })
        .unwrap_or(Verdict::Invalid)
}
