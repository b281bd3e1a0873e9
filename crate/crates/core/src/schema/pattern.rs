//! Regular expressions for `pattern` validators.
//!
//! Matching runs on finite automata (no backtracking, no backreferences), so
//! time is linear in the input whatever the pattern. The whole value must
//! match.

use alloc::format;
use alloc::string::{String, ToString};

use regex_automata::meta::Regex;

const SIZE_LIMIT: usize = 1 << 20;

#[derive(Debug, Clone)]
pub struct Pattern {
    regex: Regex,
}

impl Pattern {
    pub fn compile(source: &str) -> Result<Pattern, String> {
        let anchored = format!("^(?:{source})$");
        Regex::builder()
            .configure(Regex::config().nfa_size_limit(Some(SIZE_LIMIT)))
            .build(&anchored)
            .map(|regex| Pattern { regex })
            .map_err(|e| e.to_string())
    }

    pub fn is_full_match(&self, text: &str) -> bool {
        self.regex.is_match(text)
    }
}
