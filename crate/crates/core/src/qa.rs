//! Question generation: renders the question/answer prompt for a photo,
//! parses the `Question###Answer;` reply and assembles the full plan
//! (WHO, the generated W-questions, then one open-ended question).

use thiserror::Error;
use tracing::warn;

use crate::domain::{FamilyMember, Photo, QaItem, QaKind, QaPair, QuestionPlan};
use crate::prompts::PromptCatalog;

pub const WHO_QUESTION: &str = "Do you recognize anyone in this photo?";
pub const OPEN_QUESTION: &str = "Anything else special about this photo?";
pub const NO_FAMILIAR_FACES: &str = "no familiar faces";
pub const MIN_PAIRS: usize = 3;

const PAIR_DELIMITER: &str = "###";
const SEGMENT_DELIMITER: char = ';';

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QaError {
    #[error("photo description is empty")]
    EmptyDescription,
    #[error("expected at least {MIN_PAIRS} question/answer pairs, parsed {found}")]
    TooFewPairs { found: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedSegment {
    pub index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQa {
    pub pairs: Vec<QaPair>,
    pub warnings: Vec<MalformedSegment>,
}

/// Neutralizes the reply delimiters inside caregiver text.
pub fn escape_description(description: &str) -> String {
    description
        .replace(PAIR_DELIMITER, "# # #")
        .replace(SEGMENT_DELIMITER, ",")
}

pub fn build_qa_prompt(catalog: &PromptCatalog, photo: &Photo) -> Result<String, QaError> {
    let description = photo.description.trim();
    if description.is_empty() {
        return Err(QaError::EmptyDescription);
    }
    let escaped = escape_description(description);
    Ok(catalog
        .qa_gen
        .render(&[("image_description", escaped.as_str())]))
}

fn trim_field(s: &str) -> &str {
    let quotes: &[char] = &['"', '\'', '\u{201c}', '\u{201d}', '\u{2018}', '\u{2019}', '`'];
    strip_list_marker(s.trim()).trim_matches(quotes).trim()
}

// "1. Where..." or "2) When..." as produced when the model numbers its output.
fn strip_list_marker(s: &str) -> &str {
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return s;
    }
    let rest = &s[digits..];
    match rest.strip_prefix(['.', ')']) {
        Some(after) if after.starts_with(char::is_whitespace) => after.trim_start(),
        _ => s,
    }
}

pub fn parse_qa_response(raw: &str) -> Result<ParsedQa, QaError> {
    let mut pairs = Vec::new();
    let mut warnings = Vec::new();
    for (index, segment) in raw.split(SEGMENT_DELIMITER).enumerate() {
        if segment.trim().is_empty() {
            continue;
        }
        let parsed = segment.split_once(PAIR_DELIMITER).and_then(|(q, a)| {
            let (q, a) = (trim_field(q), trim_field(a));
            (!q.is_empty() && !a.is_empty()).then(|| QaPair::new(q, a))
        });
        match parsed {
            Some(pair) => pairs.push(pair),
            None => {
                warn!(index, segment = segment.trim(), "malformed question/answer segment");
                warnings.push(MalformedSegment {
                    index,
                    text: segment.trim().to_string(),
                });
            }
        }
    }
    if pairs.len() < MIN_PAIRS {
        return Err(QaError::TooFewPairs { found: pairs.len() });
    }
    Ok(ParsedQa { pairs, warnings })
}

/// Inverse of [`parse_qa_response`] for well-formed pairs.
pub fn format_qa_pairs(pairs: &[QaPair]) -> String {
    pairs
        .iter()
        .map(|p| format!("{}{PAIR_DELIMITER}{}{SEGMENT_DELIMITER}", p.question, p.answer))
        .collect()
}

fn leading_interrogative(question: &str) -> Option<QaKind> {
    let word: String = question
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "where" => Some(QaKind::Where),
        "when" => Some(QaKind::When),
        "what" => Some(QaKind::What),
        _ => None,
    }
}

/// Kinds for the generated pairs. The first three follow their leading
/// interrogative when those name WHERE, WHEN and WHAT exactly once each;
/// otherwise they are positional. Any extra pair is a further WHAT.
pub fn assign_kinds(pairs: &[QaPair]) -> Vec<QaKind> {
    const POSITIONAL: [QaKind; 3] = [QaKind::Where, QaKind::When, QaKind::What];
    let head: Vec<Option<QaKind>> = pairs
        .iter()
        .take(POSITIONAL.len())
        .map(|p| leading_interrogative(&p.question))
        .collect();
    let is_permutation = head.len() == POSITIONAL.len()
        && POSITIONAL
            .iter()
            .all(|k| head.iter().filter(|h| **h == Some(*k)).count() == 1);
    (0..pairs.len())
        .map(|i| match i {
            i if i < POSITIONAL.len() && is_permutation => head[i].expect("checked above"),
            i if i < POSITIONAL.len() => POSITIONAL[i],
            _ => QaKind::What,
        })
        .collect()
}

pub fn who_expected_answer(photo: &Photo, roster: &[FamilyMember]) -> String {
    if photo.members_present.is_empty() {
        return NO_FAMILIAR_FACES.to_string();
    }
    photo
        .members_present
        .iter()
        .map(|name| {
            roster
                .iter()
                .find(|m| crate::domain::names_match(&m.name, name))
                .map(FamilyMember::label)
                .unwrap_or_else(|| name.clone())
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn assemble_question_plan(
    photo: &Photo,
    roster: &[FamilyMember],
    pairs: &[QaPair],
) -> Result<QuestionPlan, QaError> {
    if pairs.len() < MIN_PAIRS {
        return Err(QaError::TooFewPairs { found: pairs.len() });
    }
    let mut items = Vec::with_capacity(pairs.len() + 2);
    items.push(QaItem::new(
        QaKind::Who,
        WHO_QUESTION,
        who_expected_answer(photo, roster),
    ));
    items.extend(
        pairs
            .iter()
            .zip(assign_kinds(pairs))
            .map(|(pair, kind)| QaItem::new(kind, pair.question.clone(), pair.answer.clone())),
    );
    items.push(QaItem::new(QaKind::Open, OPEN_QUESTION, ""));
    Ok(QuestionPlan { items, cursor: 0 })
}
