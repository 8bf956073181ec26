mod common;

use momcc_core::domain::{covers, level_admits, version_at_least, Money, ResourceVector, SecurityLevel, Share, Version};
use proptest::prelude::*;

fn covers_oracle(a: &ResourceVector, b: &ResourceVector) -> bool {
    let a = [a.cpu, a.memory, a.storage, a.energy];
    let b = [b.cpu, b.memory, b.storage, b.energy];
    for i in 0..4 {
        if a[i] < b[i] {
            return false;
        }
    }
    true
}

fn padded(parts: &[u32]) -> (u32, u32, u32) {
    let get = |i: usize| parts.get(i).copied().unwrap_or(0);
    (get(0), get(1), get(2))
}

#[test]
fn admission_matrix_has_six_permits() {
    let permitted: Vec<_> = SecurityLevel::ALL
        .iter()
        .flat_map(|&h| SecurityLevel::ALL.iter().map(move |&s| (h, s)))
        .filter(|&(h, s)| level_admits(h, s))
        .collect();
    assert_eq!(permitted.len(), 6);
    assert!(level_admits(SecurityLevel::Medium, SecurityLevel::Medium));
    assert!(level_admits(SecurityLevel::High, SecurityLevel::Medium));
    assert!(!level_admits(SecurityLevel::Low, SecurityLevel::Medium));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn covers_matches_componentwise_loop(a in common::resource_vector(8), b in common::resource_vector(8)) {
        prop_assert_eq!(covers(&a, &b), covers_oracle(&a, &b));
    }
}

proptest! {
    #[test]
    fn covers_is_a_partial_order(a in common::resource_vector(6), b in common::resource_vector(6), c in common::resource_vector(6)) {
        prop_assert!(covers(&a, &a));
        if covers(&a, &b) && covers(&b, &a) {
            prop_assert_eq!(a, b);
        }
        if covers(&a, &b) && covers(&b, &c) {
            prop_assert!(covers(&a, &c));
        }
    }

    #[test]
    fn subtraction_undoes_addition(a in common::resource_vector(1000), b in common::resource_vector(1000)) {
        let sum = a.saturating_add(&b);
        prop_assert!(covers(&sum, &b));
        prop_assert_eq!(sum.checked_sub(&b), Some(a));
    }

    #[test]
    fn version_order_matches_padded_tuples(a in common::version_parts(), b in common::version_parts()) {
        let va = Version::new(&a).unwrap();
        let vb = Version::new(&b).unwrap();
        prop_assert_eq!(va.cmp(&vb), padded(&a).cmp(&padded(&b)));
        let text_a = va.to_string();
        let text_b = vb.to_string();
        prop_assert_eq!(version_at_least(&text_a, &text_b).unwrap(), padded(&a) >= padded(&b));
    }

    #[test]
    fn version_text_round_trips(v in common::version()) {
        let back: Version = v.to_string().parse().unwrap();
        prop_assert_eq!(back.components(), v.components());
    }

    #[test]
    fn money_text_round_trips(minor in 0u64..10_000_000_000) {
        let m = Money::from_minor(minor);
        prop_assert_eq!(m.to_string().parse::<Money>().unwrap(), m);
    }

    #[test]
    fn share_portion_never_exceeds_total(minor in 0u64..1_000_000_000, bp in 0u32..=10_000) {
        let share = Share::from_basis_points(bp).unwrap();
        let part = Money::from_minor(minor).portion(share);
        prop_assert!(part.minor() <= minor);
        prop_assert_eq!(part.minor(), (u128::from(minor) * u128::from(bp) / 10_000) as u64);
    }
}

#[test]
fn version_parsing_rejects_junk() {
    for bad in ["", "1.2.3.4", "a.b", "1..2", "-1", "1.2 "] {
        assert!(bad.parse::<Version>().is_err(), "{bad:?}");
    }
    assert_eq!("3.2".parse::<Version>().unwrap(), "3.2.0".parse::<Version>().unwrap());
}
