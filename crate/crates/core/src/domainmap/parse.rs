use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EOS: &str = "[EOS]";
pub const DOMAIN_HEADER: &str = "NEW_DOMAIN";

/// Failure categories tallied by the generation report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    /// Transport or model error that survived every retry.
    ClientError,
    MissingDomainHeader,
    MisplacedEos,
    EmptyGeneration,
}

impl FailureKind {
    pub const ALL: [FailureKind; 4] = [
        FailureKind::ClientError,
        FailureKind::MissingDomainHeader,
        FailureKind::MisplacedEos,
        FailureKind::EmptyGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FailureKind::ClientError => "client-error",
            FailureKind::MissingDomainHeader => "missing-domain-header",
            FailureKind::MisplacedEos => "misplaced-eos",
            FailureKind::EmptyGeneration => "empty-generation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseFailure {
    #[error("no NEW_DOMAIN{{...}} header")]
    MissingDomainHeader,
    #[error("expected {expected} [EOS]-terminated utterances, found {found}")]
    MisplacedEos { expected: usize, found: usize },
    #[error("empty generation")]
    EmptyGeneration,
}

impl ParseFailure {
    pub fn kind(&self) -> FailureKind {
        match self {
            ParseFailure::MissingDomainHeader => FailureKind::MissingDomainHeader,
            ParseFailure::MisplacedEos { .. } => FailureKind::MisplacedEos,
            ParseFailure::EmptyGeneration => FailureKind::EmptyGeneration,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGeneration {
    pub domain_title: String,
    pub utterances: Vec<String>,
}

/// Locates `NEW_DOMAIN{title}` (or the doubled-brace `NEW_DOMAIN{{title}}`)
/// and returns the trimmed title plus the text after the header.
fn split_header(raw: &str) -> Option<(String, &str)> {
    let start = raw.find(DOMAIN_HEADER)? + DOMAIN_HEADER.len();
    let rest = raw[start..].trim_start();
    let open = rest.len() - rest.trim_start_matches('{').len();
    if open == 0 {
        return None;
    }
    let inner = &rest[open..];
    let close = inner.find('}')?;
    let title = inner[..close].trim();
    let after = &inner[close..];
    let closing = after.len() - after.trim_start_matches('}').len();
    let body = &after[closing.min(open)..];
    if title.is_empty() {
        return None;
    }
    Some((title.to_string(), body))
}

/// Drops a leading `A:` / `B:` speaker tag echoed back from the prompt.
fn strip_speaker_tag(s: &str) -> &str {
    for tag in ["A:", "B:"] {
        if let Some(rest) = s.strip_prefix(tag) {
            return rest.trim_start();
        }
    }
    s
}

/// Splits a model response into its domain title and utterances.
///
/// Every utterance must be terminated by `[EOS]`; empty segments between
/// consecutive markers are ignored, and any non-empty text after the final
/// marker counts as an unterminated utterance.
pub fn parse_generation(raw: &str, expected_count: usize) -> Result<ParsedGeneration, ParseFailure> {
    if raw.trim().is_empty() {
        return Err(ParseFailure::EmptyGeneration);
    }
    let (domain_title, body) = split_header(raw).ok_or(ParseFailure::MissingDomainHeader)?;

    let mut pieces: Vec<&str> = body.split(EOS).collect();
    let remainder = pieces.pop().unwrap_or("").trim();
    let utterances: Vec<String> = pieces
        .into_iter()
        .map(|p| strip_speaker_tag(p.trim()).trim())
        .filter(|p| !p.is_empty())
        .map(str::to_string)
        .collect();

    if utterances.is_empty() && remainder.is_empty() {
        return Err(ParseFailure::EmptyGeneration);
    }
    let found = utterances.len() + usize::from(!remainder.is_empty());
    if !remainder.is_empty() || utterances.len() != expected_count {
        return Err(ParseFailure::MisplacedEos { expected: expected_count, found });
    }
    Ok(ParsedGeneration { domain_title, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "NEW_DOMAIN{Antique Auction}\nHi! [EOS] Hello. [EOS]";

    #[test]
    fn parses_sample() {
        let p = parse_generation(SAMPLE, 2).unwrap();
        assert_eq!(p.domain_title, "Antique Auction");
        assert_eq!(p.utterances, vec!["Hi!", "Hello."]);
    }

    #[test]
    fn count_mismatch_is_misplaced_eos() {
        assert_eq!(parse_generation(SAMPLE, 3), Err(ParseFailure::MisplacedEos { expected: 3, found: 2 }));
    }

    #[test]
    fn missing_header() {
        assert_eq!(parse_generation("Hi! [EOS] Hello. [EOS]", 2), Err(ParseFailure::MissingDomainHeader));
        assert_eq!(parse_generation("NEW_DOMAIN Hi! [EOS]", 1), Err(ParseFailure::MissingDomainHeader));
        assert_eq!(parse_generation("NEW_DOMAIN{  }\nHi! [EOS]", 1), Err(ParseFailure::MissingDomainHeader));
    }

    #[test]
    fn empty_generation() {
        assert_eq!(parse_generation("  \n", 1), Err(ParseFailure::EmptyGeneration));
        assert_eq!(parse_generation("NEW_DOMAIN{X}\n [EOS] [EOS]", 1), Err(ParseFailure::EmptyGeneration));
    }

    #[test]
    fn doubled_braces_and_preamble() {
        let p = parse_generation("Sure.\nNEW_DOMAIN{{Film Rights}}\nA: One [EOS]\nB: Two [EOS]\n", 2).unwrap();
        assert_eq!(p.domain_title, "Film Rights");
        assert_eq!(p.utterances, vec!["One", "Two"]);
    }

    #[test]
    fn empty_segments_are_dropped() {
        let p = parse_generation("NEW_DOMAIN{X} a [EOS][EOS] b [EOS] [EOS]  ", 2).unwrap();
        assert_eq!(p.utterances, vec!["a", "b"]);
    }

    #[test]
    fn unterminated_last_utterance_fails() {
        let r = parse_generation("NEW_DOMAIN{X} a [EOS] b", 2);
        assert_eq!(r, Err(ParseFailure::MisplacedEos { expected: 2, found: 2 }));
    }

    #[test]
    fn merged_utterances_fail() {
        let r = parse_generation("NEW_DOMAIN{X} a b [EOS] c [EOS]", 3);
        assert_eq!(r.unwrap_err().kind(), FailureKind::MisplacedEos);
    }
}
