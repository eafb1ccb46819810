#![allow(dead_code)]

pub mod gradcheck;
pub mod oracle;

use botcensus_core::ingest::{UserRecord, UserStore};
use botcensus_core::Label;
use chrono::{TimeZone, Utc};
use proptest::prelude::*;

pub fn user(id: &str, created_day: i64, label: Option<Label>) -> UserRecord {
    let snapshot = Utc.with_ymd_and_hms(2022, 6, 1, 0, 0, 0).unwrap();
    let created = snapshot - chrono::Duration::days(created_day);
    let mut u = UserRecord::new(id, created, snapshot);
    u.label = label;
    u
}

pub fn arb_label() -> impl Strategy<Value = Label> {
    prop_oneof![Just(Label::Human), Just(Label::Bot)]
}

/// Users with random counts, flags and short strings. Ids come from a small
/// space so that collisions across generated stores are common.
pub fn arb_user(id_space: u32) -> impl Strategy<Value = UserRecord> {
    (
        0..id_space,
        1i64..5000,
        proptest::collection::vec(0u64..100_000, 5),
        proptest::collection::vec(any::<bool>(), 5),
        "[a-zA-Z0-9_]{0,12}",
        "[a-z ]{0,30}",
        proptest::option::of(arb_label()),
    )
        .prop_map(|(id, age, counts, flags, name, desc, label)| {
            let mut u = user(&format!("u{id}"), age, label);
            u.status_count = counts[0];
            u.follower_count = counts[1];
            u.friend_count = counts[2];
            u.favorite_count = counts[3];
            u.listed_count = counts[4];
            u.default_profile = flags[0];
            u.profile_use_background_image = flags[1];
            u.verified = flags[2];
            u.protected = flags[3];
            u.has_location = flags[4];
            u.screen_name = name.clone();
            u.username = name;
            u.description = desc;
            u
        })
}

pub fn arb_store(source: &'static str, id_space: u32, max: usize) -> impl Strategy<Value = UserStore> {
    proptest::collection::vec(arb_user(id_space), 1..max).prop_map(move |users| {
        let mut seen = std::collections::BTreeSet::new();
        let unique: Vec<UserRecord> = users.into_iter().filter(|u| seen.insert(u.id.clone())).collect();
        UserStore::from_records(source, unique).unwrap()
    })
}
