use serde::{Deserialize, Serialize};

use crate::error::{KcotError, Result};

pub const ASSIGNMENT_INSTRUCTION: &str = "Similar to cluster assignment in k-means, identify the shared aspects that contribute to their feature-space similarity, and discard nodes exhibiting low similarity.";

pub const UPDATE_INSTRUCTION: &str = "Similar to moving centroids in k-means, state the derived insights in a single, concise, and dense paragraph.\nFinally, integrate these insights into a compact, refined representation for the target node.";

pub const NO_CANDIDATES: &str = "[none]";

const HEAD: &str = "Given the central node ";
const MIDDLE: &str = ". The selected candidates (based on ";

/// Where the candidate list came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    /// Nearest neighbors in the current representation.
    Knn,
    /// Sampled graph neighbors.
    Neighbors,
}

impl CandidateSource {
    fn phrase(self) -> &'static str {
        match self {
            CandidateSource::Knn => "representation similarity",
            CandidateSource::Neighbors => "neighbors",
        }
    }
}

/// The Semantic Discriminating Prompt. Texts are embedded as JSON string
/// literals so arbitrary content (brackets, quotes, newlines) cannot break
/// the surrounding structure; the candidate list is therefore a JSON array.
#[derive(Clone, Copy, Debug, Default)]
pub struct PromptTemplate;

impl PromptTemplate {
    pub fn render(
        &self,
        target_text: &str,
        candidate_texts: &[&str],
        source: CandidateSource,
    ) -> Result<String> {
        if target_text.trim().is_empty() {
            return Err(KcotError::InvalidParameter(
                "prompt target text is empty".into(),
            ));
        }
        let candidates = if candidate_texts.is_empty() {
            NO_CANDIDATES.to_string()
        } else {
            let quoted: Vec<String> = candidate_texts.iter().map(|c| quote(c)).collect();
            format!("[{}]", quoted.join(", "))
        };
        Ok(format!(
            "{HEAD}{}{MIDDLE}{}) are {candidates}\n\n{ASSIGNMENT_INSTRUCTION}\n\n{UPDATE_INSTRUCTION}\n",
            quote(target_text),
            source.phrase(),
        ))
    }
}

pub fn render_prompt(
    target_text: &str,
    candidate_texts: &[&str],
    source: CandidateSource,
) -> Result<String> {
    PromptTemplate.render(target_text, candidate_texts, source)
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization cannot fail")
}

/// Components recovered from a rendered prompt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub target: String,
    pub candidates: Vec<String>,
    pub source: CandidateSource,
}

pub fn parse_prompt(prompt: &str) -> Result<ParsedPrompt> {
    let bad = |what: &str| KcotError::InvalidParameter(format!("not a rendered prompt: {what}"));
    let rest = prompt.strip_prefix(HEAD).ok_or_else(|| bad("missing header"))?;
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
    let target = stream
        .next()
        .ok_or_else(|| bad("missing target"))?
        .map_err(|_| bad("malformed target"))?;
    let rest = rest[stream.byte_offset()..]
        .strip_prefix(MIDDLE)
        .ok_or_else(|| bad("missing candidate clause"))?;
    let (source, rest) = [CandidateSource::Knn, CandidateSource::Neighbors]
        .into_iter()
        .find_map(|s| {
            rest.strip_prefix(s.phrase())
                .and_then(|r| r.strip_prefix(") are "))
                .map(|r| (s, r))
        })
        .ok_or_else(|| bad("unknown candidate source"))?;
    let candidates = if rest.starts_with(NO_CANDIDATES) {
        Vec::new()
    } else {
        let mut s = serde_json::Deserializer::from_str(rest).into_iter::<Vec<String>>();
        s.next()
            .ok_or_else(|| bad("missing candidates"))?
            .map_err(|_| bad("malformed candidates"))?
    };
    Ok(ParsedPrompt {
        target,
        candidates,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_golden_file() {
        let p = render_prompt(
            "Dirichlet mixtures for protein sequence modeling",
            &["Hidden Markov models of motifs", "Meta-MEME: motif-based HMMs"],
            CandidateSource::Knn,
        )
        .unwrap();
        assert_eq!(p, include_str!("../../tests/golden/prompt_knn_two_candidates.txt"));
    }

    #[test]
    fn neighbor_phrasing_and_key_phrases() {
        let p = render_prompt("a", &["b"], CandidateSource::Neighbors).unwrap();
        assert!(p.contains("(based on neighbors)"));
        assert!(p.contains("Similar to cluster assignment"));
        assert!(p.contains("Similar to moving centroids"));
    }

    #[test]
    fn empty_candidates_render_none_marker() {
        let p = render_prompt("target", &[], CandidateSource::Knn).unwrap();
        assert!(p.contains("are [none]"));
        assert!(p.contains("compact, refined representation for the target node"));
        assert_eq!(p, render_prompt("target", &[], CandidateSource::Knn).unwrap());
    }

    #[test]
    fn empty_target_rejected() {
        assert!(render_prompt("  ", &["x"], CandidateSource::Knn).is_err());
    }

    #[test]
    fn parse_inverts_render() {
        let cands = ["with \"quotes\"", "brackets ] [ and\nnewline", ""];
        for source in [CandidateSource::Knn, CandidateSource::Neighbors] {
            let p = render_prompt("target ) are [none]", &cands, source).unwrap();
            let parsed = parse_prompt(&p).unwrap();
            assert_eq!(parsed.target, "target ) are [none]");
            assert_eq!(parsed.candidates, cands);
            assert_eq!(parsed.source, source);
        }
        let p = render_prompt("t", &[], CandidateSource::Knn).unwrap();
        assert!(parse_prompt(&p).unwrap().candidates.is_empty());
        assert!(parse_prompt("hello").is_err());
    }
}
