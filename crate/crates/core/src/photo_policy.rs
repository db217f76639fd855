//! Next-photo selection.
//!
//! Candidates are ranked in four tiers:
//!
//! 1. never discussed and featuring the target person: newest upload first
//! 2. never discussed: newest upload first
//! 3. featuring the target person: longest since last discussed first
//! 4. everything else: longest since last discussed first
//!
//! Ties fall back to the photo id in ascending order.

use std::cmp::Ordering;

use thiserror::Error;

use crate::domain::{Photo, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("no photos to choose from")]
    NoPhotos,
}

fn tier(photo: &Photo, target: Option<&str>) -> u8 {
    let featured = target.is_some_and(|t| photo.features(t));
    match (photo.never_discussed(), featured) {
        (true, true) => 0,
        (true, false) => 1,
        (false, true) => 2,
        (false, false) => 3,
    }
}

/// Total order over candidates; the smallest is selected.
pub fn priority_cmp(a: &Photo, b: &Photo, target: Option<&str>) -> Ordering {
    let (ta, tb) = (tier(a, target), tier(b, target));
    ta.cmp(&tb)
        .then_with(|| {
            if ta <= 1 {
                b.uploaded_at.cmp(&a.uploaded_at)
            } else {
                a.last_discussed_at.cmp(&b.last_discussed_at)
            }
        })
        .then_with(|| a.photo_id.cmp(&b.photo_id))
}

pub fn select_next_photo<'a>(
    photos: &'a [Photo],
    target_person: Option<&str>,
) -> Result<&'a Photo, PolicyError> {
    photos
        .iter()
        .min_by(|a, b| priority_cmp(a, b, target_person))
        .ok_or(PolicyError::NoPhotos)
}

pub fn mark_discussed(photo: &Photo, now: Timestamp) -> Photo {
    let mut next = photo.clone();
    next.last_discussed_at = Some(now);
    next.discussed_count += 1;
    next
}
