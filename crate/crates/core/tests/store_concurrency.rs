use std::sync::{Arc, Barrier};
use std::thread;

use reminisce_core::domain::{Profile, UserId, UserRecord};
use reminisce_core::store::{Store, StoreError};

fn user(name: &str) -> UserRecord {
    UserRecord {
        user_id: UserId::new("u1"),
        display_name: name.into(),
        background: String::new(),
        profile: Profile::default(),
        family: vec![],
    }
}

#[test]
fn two_writers_on_one_version_yield_one_conflict() {
    for _ in 0..20 {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path()).unwrap());
        store.insert(&user("start")).unwrap();
        let barrier = Arc::new(Barrier::new(2));
        let handles: Vec<_> = ["left", "right"]
            .into_iter()
            .map(|name| {
                let (store, barrier) = (store.clone(), barrier.clone());
                thread::spawn(move || {
                    barrier.wait();
                    store.update(&user(name), 1)
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let ok = results.iter().filter(|r| matches!(r, Ok(2))).count();
        let conflicts = results
            .iter()
            .filter(|r| matches!(r, Err(StoreError::VersionConflict { .. })))
            .count();
        assert_eq!((ok, conflicts), (1, 1), "{results:?}");
        assert_eq!(store.get::<UserRecord>("u1").unwrap().version, 2);
    }
}

#[test]
fn two_stores_on_one_directory_share_nothing_but_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = Store::open(dir.path()).unwrap();
    a.insert(&user("first")).unwrap();
    let b = Store::open(dir.path()).unwrap();
    let seen = b.get::<UserRecord>("u1").unwrap();
    assert_eq!(seen.record.display_name, "first");
    b.update(&user("second"), seen.version).unwrap();
    assert_eq!(a.get::<UserRecord>("u1").unwrap().record.display_name, "second");
}
