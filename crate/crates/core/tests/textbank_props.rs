use proptest::prelude::*;
use uniskel::textbank::{load_bank, synth_bank, LabelBank};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn synthetic_vectors_are_unit_and_stable(names in proptest::collection::btree_set("[a-z]{1,6}( [a-z]{1,6})?", 1..12), dim in 8usize..64, seed in any::<u64>()) {
        let names: Vec<String> = names.into_iter().collect();
        let a = synth_bank(&names, dim, seed).unwrap();
        for (_, e) in a.entries() {
            let n: f64 = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
        }
        let b = synth_bank(&names, dim, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loaded_vectors_are_unit(raw in proptest::collection::vec(proptest::collection::vec(0.1f64..100.0, 6), 1..10)) {
        let entries: Vec<_> = raw.into_iter().enumerate().map(|(i, v)| (i as u32, format!("l{i}"), v)).collect();
        let bank = LabelBank::new(entries, std::iter::empty(), std::iter::empty()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bank.json");
        bank.save(&p).unwrap();
        let back = load_bank(&p).unwrap();
        for (_, e) in back.entries() {
            let n: f64 = e.vector.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() <= 1e-9);
        }
        prop_assert_eq!(back.len(), bank.len());
    }
}
