//! Size and lexical features.

use std::collections::HashSet;

use rustpython_parser::lexer::lex;
use rustpython_parser::{Mode, Tok};

use super::{FeatureMap, PARSE_FAILED};

pub const LEXICAL_FEATURES: [&str; 12] = [
    "code_chars",
    "code_lines",
    "token_count",
    "num_identifiers",
    "num_unique_identifiers",
    "avg_identifier_length",
    "num_comments",
    "comment_chars",
    "num_string_literals",
    "num_numeric_literals",
    "len_input",
    "len_output",
];

#[derive(Debug, Default)]
struct TokenStats {
    tokens: usize,
    identifiers: usize,
    unique_identifiers: usize,
    identifier_chars: usize,
    comments: usize,
    comment_chars: usize,
    strings: usize,
    numbers: usize,
    lex_failed: bool,
}

/// Single lexer pass. Stops at the first lexical error and keeps whatever
/// was counted up to that point.
fn scan_tokens(code: &str) -> TokenStats {
    let mut stats = TokenStats::default();
    let mut names = HashSet::new();
    for item in lex(code, Mode::Module) {
        let tok = match item {
            Ok((tok, _)) => tok,
            Err(_) => {
                stats.lex_failed = true;
                break;
            }
        };
        match tok {
            Tok::Newline
            | Tok::NonLogicalNewline
            | Tok::Indent
            | Tok::Dedent
            | Tok::EndOfFile
            | Tok::StartModule
            | Tok::StartInteractive
            | Tok::StartExpression => continue,
            Tok::Comment(text) => {
                stats.comments += 1;
                stats.comment_chars += text.chars().count();
                continue;
            }
            Tok::Name { name } => {
                stats.identifiers += 1;
                stats.identifier_chars += name.chars().count();
                names.insert(name);
            }
            Tok::String { .. } => stats.strings += 1,
            Tok::Int { .. } | Tok::Float { .. } | Tok::Complex { .. } => stats.numbers += 1,
            _ => {}
        }
        stats.tokens += 1;
    }
    stats.unique_identifiers = names.len();
    stats
}

pub(crate) fn lexical_features(code: &str, input: &str, output: &str, parse_failed: bool) -> FeatureMap {
    let stats = scan_tokens(code);
    let avg_ident = if stats.identifiers > 0 {
        stats.identifier_chars as f64 / stats.identifiers as f64
    } else {
        0.0
    };
    let values = [
        code.chars().count() as f64,
        code.lines().count() as f64,
        stats.tokens as f64,
        stats.identifiers as f64,
        stats.unique_identifiers as f64,
        avg_ident,
        stats.comments as f64,
        stats.comment_chars as f64,
        stats.strings as f64,
        stats.numbers as f64,
        input.chars().count() as f64,
        output.chars().count() as f64,
    ];
    let mut map: FeatureMap = LEXICAL_FEATURES
        .iter()
        .zip(values)
        .map(|(name, v)| (name.to_string(), v))
        .collect();
    map.insert(
        PARSE_FAILED.to_string(),
        if parse_failed || stats.lex_failed { 1.0 } else { 0.0 },
    );
    map
}

/// Size/lexical family for one triple. Unparseable code still gets
/// token-level counts from a best-effort lexer pass, with `parse_failed`
/// set to 1.
pub fn extract_lexical(code: &str, input: &str, output: &str) -> FeatureMap {
    let parse_failed = super::syntax::parse(code).is_err();
    lexical_features(code, input, output, parse_failed)
}
