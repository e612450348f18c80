use std::collections::BTreeMap;

use proptest::prelude::*;
use uniskel::motiongen::{canonical_samples, generate, GenSpec, Primitive};
use uniskel::skeleton::{RawSequence, SkeletonFormat, CANONICAL_JOINTS};

fn joints_of(seq: &RawSequence) -> BTreeMap<(usize, usize, String), Vec<f64>> {
    let f = SkeletonFormat::preset(&seq.format_id).unwrap();
    let mut out = BTreeMap::new();
    for (t, frame) in seq.frames.iter().enumerate() {
        for (m, member) in frame.iter().enumerate() {
            for (j, c) in member.iter().enumerate() {
                out.insert((t, m, f.joints[j].clone()), c.clone());
            }
        }
    }
    out
}

#[test]
fn noiseless_renderings_agree_across_formats() {
    let mut spec = GenSpec::toy(3, &["kinect-v1", "kinect-v2", "smpl-22", "pose-2d"], 12, 0.0, 11);
    spec.multi_label_fraction = 0.3;
    let c = generate(&spec, None).unwrap();
    let n = c.by_format["kinect-v1"].len();
    for i in 0..n {
        let maps: BTreeMap<&str, _> = c.by_format.iter().map(|(f, s)| (f.as_str(), joints_of(&s[i]))).collect();
        let three_d = ["kinect-v1", "kinect-v2", "smpl-22"];
        let mut shared = 0;
        for a in three_d {
            for b in three_d {
                for (k, va) in &maps[a] {
                    if let Some(vb) = maps[b].get(k) {
                        assert_eq!(va, vb, "{a} vs {b} at {k:?}");
                        shared += 1;
                    }
                }
            }
        }
        assert!(shared > 0);
        let mut projected = 0;
        for (k, flat) in &maps["pose-2d"] {
            if let Some(full) = three_d.iter().find_map(|f| maps[f].get(k)) {
                assert_eq!(flat.as_slice(), &full[..2], "{k:?}");
                projected += 1;
            }
        }
        assert!(projected > 0);
    }
}

#[test]
fn renderings_are_selections_of_the_canonical_trajectory() {
    let spec = GenSpec::toy(2, &["pose-2d", "kinect-v2"], 6, 0.0, 3);
    let samples = canonical_samples(&spec).unwrap();
    let c = generate(&spec, None).unwrap();
    for (fid, seqs) in &c.by_format {
        let f = SkeletonFormat::preset(fid).unwrap();
        for (s, r) in samples.iter().zip(seqs) {
            for (t, frame) in r.frames.iter().enumerate() {
                for (j, coords) in frame[0].iter().enumerate() {
                    let ci = CANONICAL_JOINTS.iter().position(|c| *c == f.joints[j]).unwrap();
                    assert_eq!(coords.as_slice(), &s.trajectory[t][0][ci][..f.coord_dims]);
                }
            }
        }
    }
}

fn nearest_centroid_accuracy(per_class: usize, seed: u64) -> (usize, usize) {
    let spec = GenSpec::toy(per_class, &["kinect-v2"], 24, 0.0, seed);
    let c = generate(&spec, None).unwrap();
    let seqs = &c.by_format["kinect-v2"];
    let flat = |s: &RawSequence| -> Vec<f64> { s.frames.iter().flatten().flatten().flatten().copied().collect() };
    let classes = Primitive::ALL.len();
    let dim = flat(&seqs[0]).len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for s in seqs {
        let k = s.label_ids[0] as usize;
        counts[k] += 1;
        centroids[k].iter_mut().zip(flat(s)).for_each(|(a, b)| *a += b);
    }
    for (cen, n) in centroids.iter_mut().zip(&counts) {
        cen.iter_mut().for_each(|x| *x /= *n as f64);
    }
    let correct = seqs
        .iter()
        .filter(|s| {
            let x = flat(s);
            let d = |c: &Vec<f64>| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            let best = (0..classes).min_by(|&a, &b| d(&centroids[a]).total_cmp(&d(&centroids[b]))).unwrap();
            best == s.label_ids[0] as usize
        })
        .count();
    (correct, seqs.len())
}

#[test]
fn nearest_centroid_separates_noiseless_classes() {
    for seed in 0..4 {
        let (correct, total) = nearest_centroid_accuracy(200, seed);
        assert_eq!(correct, total, "seed {seed}");
    }
}

#[test]
fn generation_is_deterministic() {
    let spec = GenSpec::toy(2, &["kinect-v2", "pose-2d"], 8, 0.05, 4);
    let (a, b) = (generate(&spec, None).unwrap(), generate(&spec, None).unwrap());
    assert_eq!(a.by_format, b.by_format);
    assert_eq!(a.manifest, b.manifest);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn per_class_counts_match_the_spec(counts in proptest::collection::vec(0usize..6, 8), seed in any::<u64>(), sigma in 0.0f64..0.1) {
        let mut spec = GenSpec::toy(1, &["pose-2d"], 4, sigma, seed);
        spec.samples_per_class = counts.clone();
        let c = generate(&spec, None).unwrap();
        let seqs = &c.by_format["pose-2d"];
        for (k, n) in counts.iter().enumerate() {
            prop_assert_eq!(seqs.iter().filter(|s| s.label_ids[0] == k as u32).count(), *n);
        }
        prop_assert!(seqs.iter().all(|s| s.frames.len() == 4));
    }
}
