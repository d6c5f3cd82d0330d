use std::sync::LazyLock;

use regex::Regex;

use crate::error::{Error, Result};

// An integer between dollar signs, optionally echoed inside the template's `{{ }}`.
static DOLLAR_INT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\$\s*(?:\{\{\s*)?([+-]?\d+)\s*(?:\}\}\s*)?\$").expect("valid regex"));

/// Extracts the 0-100 score from a judge reply.
///
/// The last dollar-wrapped integer wins. Replies without one, or whose last
/// one is outside 0-100, are errors so the caller can retry.
pub fn parse_score(response: &str) -> Result<u32> {
    let last = DOLLAR_INT
        .captures_iter(response)
        .last()
        .ok_or_else(|| Error::Parse("no dollar-wrapped integer in reply".into()))?;
    let digits = &last[1];
    let value: i64 = digits
        .parse()
        .map_err(|_| Error::Parse(format!("score `{digits}` is not a representable integer")))?;
    if !(0..=100).contains(&value) {
        return Err(Error::Parse(format!("score {value} is outside 0..=100")));
    }
    Ok(value as u32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_sentence() {
        assert_eq!(parse_score("…reasoning… The final score is $85$.").unwrap(), 85);
        assert_eq!(parse_score("The final score is $0$.").unwrap(), 0);
        assert_eq!(parse_score("The final score is $100$.").unwrap(), 100);
    }

    #[test]
    fn last_match_wins() {
        assert_eq!(parse_score("score $3$ … revised: The final score is $72$.").unwrap(), 72);
    }

    #[test]
    fn errors() {
        assert!(parse_score("The final score is 85.").is_err());
        assert!(parse_score("The final score is $101$.").is_err());
        assert!(parse_score("The final score is $-4$.").is_err());
        assert!(parse_score("$99999999999999999999999$").is_err());
        assert!(parse_score("").is_err());
    }

    #[test]
    fn compliant_render_round_trips() {
        for v in 0..=100u32 {
            let reply = format!("The caption is fine.\nThe final score is ${v}$.");
            assert_eq!(parse_score(&reply).unwrap(), v);
        }
    }
}
