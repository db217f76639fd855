//! Which family members appear in a photo.
//!
//! Face detection and embedding are outside this crate. Matchers work from
//! caregiver tags or from embeddings the caregiver supplies alongside the
//! photo and the roster.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{names_match, FamilyMember};

pub const DEFAULT_COSINE_THRESHOLD: f32 = 0.6;
pub const DEFAULT_EMBEDDING_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaceError {
    #[error("identity matcher unavailable: {0}")]
    MatcherUnavailable(String),
    #[error("embedding has {found} dimensions, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
}

/// What the caller knows about the faces in one photo.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaceInput {
    #[serde(default)]
    pub blob_ref: Option<String>,
    /// Roster names the caregiver ticked for this photo.
    #[serde(default)]
    pub tags: Vec<String>,
    /// One embedding per detected face.
    #[serde(default)]
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberMatch {
    pub name: String,
    pub confidence: f32,
}

pub trait IdentityMatcher: Send + Sync {
    fn identify(&self, input: &FaceInput, roster: &[FamilyMember]) -> Result<Vec<MemberMatch>, FaceError>;
}

/// Passes caregiver tags through at full confidence; unknown tags are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct CaregiverTags;

impl IdentityMatcher for CaregiverTags {
    fn identify(&self, input: &FaceInput, roster: &[FamilyMember]) -> Result<Vec<MemberMatch>, FaceError> {
        Ok(roster
            .iter()
            .filter(|m| input.tags.iter().any(|t| names_match(t, &m.name)))
            .map(|m| MemberMatch {
                name: m.name.clone(),
                confidence: 1.0,
            })
            .collect())
    }
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Matches roster members whose embedding is close to any face in the photo.
#[derive(Debug, Clone, Copy)]
pub struct CosineMatcher {
    pub threshold: f32,
    pub dimension: usize,
}

impl Default for CosineMatcher {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_COSINE_THRESHOLD,
            dimension: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl CosineMatcher {
    fn check_dim(&self, v: &[f32]) -> Result<(), FaceError> {
        if v.len() == self.dimension {
            Ok(())
        } else {
            Err(FaceError::DimensionMismatch {
                expected: self.dimension,
                found: v.len(),
            })
        }
    }
}

impl IdentityMatcher for CosineMatcher {
    fn identify(&self, input: &FaceInput, roster: &[FamilyMember]) -> Result<Vec<MemberMatch>, FaceError> {
        let known: Vec<(&FamilyMember, &Vec<f32>)> = roster
            .iter()
            .filter_map(|m| m.face_embedding.as_ref().map(|e| (m, e)))
            .collect();
        if known.is_empty() {
            return Err(FaceError::MatcherUnavailable(
                "no roster member has a reference embedding".into(),
            ));
        }
        for v in input.embeddings.iter().chain(known.iter().map(|(_, e)| *e)) {
            self.check_dim(v)?;
        }
        let mut matches = Vec::new();
        for (member, reference) in known {
            let best = input
                .embeddings
                .iter()
                .map(|face| cosine_similarity(face, reference))
                .fold(f32::NEG_INFINITY, f32::max);
            if best >= self.threshold {
                matches.push(MemberMatch {
                    name: member.name.clone(),
                    confidence: best.clamp(0.0, 1.0),
                });
            }
        }
        Ok(matches)
    }
}

/// Runs `matcher`; the result names only roster members.
pub fn identify_members(
    input: &FaceInput,
    roster: &[FamilyMember],
    matcher: &dyn IdentityMatcher,
) -> Result<Vec<MemberMatch>, FaceError> {
    let mut matches = matcher.identify(input, roster)?;
    matches.retain(|m| roster.iter().any(|r| names_match(&r.name, &m.name)));
    for m in &mut matches {
        m.confidence = m.confidence.clamp(0.0, 1.0);
    }
    Ok(matches)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIM: usize = 4;

    fn unit(i: usize) -> Vec<f32> {
        let mut v = vec![0.0; DIM];
        v[i] = 1.0;
        v
    }

    /// Unit vector at cosine `c` from `unit(0)`, in the plane of axes 0 and 1.
    fn at_cosine(c: f32) -> Vec<f32> {
        let mut v = vec![0.0; DIM];
        v[0] = c;
        v[1] = (1.0 - c * c).sqrt();
        v
    }

    fn roster_with_embedding() -> Vec<FamilyMember> {
        let mut grandson = FamilyMember::new("grandson", "grandson");
        grandson.face_embedding = Some(unit(0));
        vec![grandson, FamilyMember::new("daughter", "daughter")]
    }

    fn matcher() -> CosineMatcher {
        CosineMatcher {
            threshold: 0.8,
            dimension: DIM,
        }
    }

    #[test]
    fn tags_pass_through() {
        let roster = vec![
            FamilyMember::new("grandson", "grandson"),
            FamilyMember::new("daughter", "daughter"),
        ];
        let input = FaceInput {
            tags: vec!["Grandson".into(), "daughter".into(), "stranger".into()],
            ..Default::default()
        };
        let got = identify_members(&input, &roster, &CaregiverTags).unwrap();
        assert_eq!(
            got,
            vec![
                MemberMatch { name: "grandson".into(), confidence: 1.0 },
                MemberMatch { name: "daughter".into(), confidence: 1.0 },
            ]
        );
    }

    #[test]
    fn close_embedding_matches() {
        let input = FaceInput {
            embeddings: vec![at_cosine(0.98)],
            ..Default::default()
        };
        assert!((cosine_similarity(&input.embeddings[0], &unit(0)) - 0.98).abs() < 1e-6);
        let got = identify_members(&input, &roster_with_embedding(), &matcher()).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].name, "grandson");
        assert!((got[0].confidence - 0.98).abs() < 1e-5);
    }

    #[test]
    fn distant_embedding_does_not_match() {
        let input = FaceInput {
            embeddings: vec![at_cosine(0.5)],
            ..Default::default()
        };
        assert!(identify_members(&input, &roster_with_embedding(), &matcher())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cosine_is_symmetric() {
        let (a, b) = (vec![0.3, -1.2, 4.0, 0.5], vec![1.0, 2.0, -0.5, 3.0]);
        assert_eq!(cosine_similarity(&a, &b), cosine_similarity(&b, &a));
        assert_eq!(cosine_similarity(&a, &[0.0; 4]), 0.0);
    }

    #[test]
    fn matcher_needs_reference_embeddings() {
        let roster = vec![FamilyMember::new("grandson", "grandson")];
        let input = FaceInput {
            embeddings: vec![unit(0)],
            ..Default::default()
        };
        assert!(matches!(
            identify_members(&input, &roster, &matcher()),
            Err(FaceError::MatcherUnavailable(_))
        ));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let input = FaceInput {
            embeddings: vec![vec![1.0; 3]],
            ..Default::default()
        };
        assert_eq!(
            identify_members(&input, &roster_with_embedding(), &matcher()),
            Err(FaceError::DimensionMismatch { expected: DIM, found: 3 })
        );
    }
}
