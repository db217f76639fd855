//! select_next_photo against a sort-based oracle on random photo sets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reminisce_core::domain::Photo;
use reminisce_core::photo_policy::select_next_photo;

const NAMES: [&str; 4] = ["grandson", "daughter", "son", "wife"];

fn random_photos(rng: &mut ChaCha8Rng) -> Vec<Photo> {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|i| {
            // Narrow ranges force plenty of timestamp ties.
            let uploaded = rng.random_range(0..6);
            let members: Vec<&str> = NAMES.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            let mut p = Photo::new(format!("p{:02}", rng.random_range(0..50) * 100 + i), "u1", uploaded, "d")
                .with_members(members);
            if rng.random_bool(0.6) {
                p.last_discussed_at = Some(rng.random_range(10..16));
                p.discussed_count = rng.random_range(1..4);
            }
            p
        })
        .collect()
}

/// Sort by an explicit key and take the head.
fn oracle<'a>(photos: &'a [Photo], target: Option<&str>) -> &'a Photo {
    let key = |p: &Photo| {
        let fresh = p.last_discussed_at.is_none();
        let featured = target.is_some_and(|t| p.members_present.iter().any(|m| m.eq_ignore_ascii_case(t)));
        let tier = match (fresh, featured) {
            (true, true) => 1,
            (true, false) => 2,
            (false, true) => 3,
            (false, false) => 4,
        };
        let time: i128 = if fresh {
            -(p.uploaded_at as i128)
        } else {
            p.last_discussed_at.unwrap() as i128
        };
        (tier, time, p.photo_id.as_str().to_string())
    };
    let mut sorted: Vec<&Photo> = photos.iter().collect();
    sorted.sort_by_key(|p| key(p));
    sorted[0]
}

#[test]
fn matches_oracle_on_random_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..500 {
        let photos = random_photos(&mut rng);
        let target = match rng.random_range(0..3) {
            0 => None,
            _ => Some(NAMES[rng.random_range(0..NAMES.len())]),
        };
        let got = select_next_photo(&photos, target).unwrap();
        let want = oracle(&photos, target);
        assert_eq!(got.photo_id, want.photo_id, "case {case}, target {target:?}");

        if photos.iter().any(|p| p.never_discussed()) {
            assert!(got.never_discussed(), "case {case}: fresh photo available");
        }
        if let Some(t) = target {
            let fresh_featured = photos.iter().any(|p| p.never_discussed() && p.features(t));
            if fresh_featured {
                assert!(got.features(t), "case {case}: fresh target photo available");
            }
        }
    }
}
