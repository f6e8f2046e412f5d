mod common;

use common::{brute_auroc, rand_t, rng};
use mmfuse::tensor::Tensor;
use mmfuse::training::*;
use mmfuse::{Error, ParamStore, Tape};
use proptest::prelude::*;
use rand::Rng;

fn bce(probs: &[f64], labels: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_f64(&[probs.len()], probs).unwrap());
    let l = tape.bce_loss(p, labels).unwrap();
    tape.value(l).data()[0]
}

#[test]
fn bce_examples() {
    assert!((bce(&[0.5], &[1.0]) - 2f64.ln()).abs() < 1e-12);
    assert!((bce(&[0.9, 0.1], &[1.0, 0.0]) + 0.9f64.ln()).abs() < 1e-12);
    let clamped = bce(&[1.0], &[1.0]);
    assert!(clamped.is_finite() && (clamped - 1e-7).abs() < 1e-9, "{clamped}");
    assert!(bce(&[0.0], &[1.0]).is_finite());
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::from_f64(&[2], &[0.3, 0.6]).unwrap());
    assert!(matches!(tape.bce_loss(p, &[1.0, 2.0]), Err(Error::Data(_))));
}

#[test]
fn bce_is_non_negative() {
    let mut r = rng(1);
    for _ in 0..500 {
        let p: f64 = r.random();
        let y = f64::from(u8::from(r.random_bool(0.5)));
        assert!(bce(&[p], &[y]) >= 0.0);
    }
}

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::from_f64(&[1], &[v]).unwrap()
}

#[test]
fn sgd_examples() {
    let mut w = scalar(1.0);
    sgd_update(&mut w, &scalar(1.0), 0.1, 0.0).unwrap();
    assert!((w.data()[0] - 0.9).abs() < 1e-15);
    let mut w = scalar(1.0);
    sgd_update(&mut w, &scalar(1.0), 0.1, 0.01).unwrap();
    assert!((w.data()[0] - 0.899).abs() < 1e-15);

    // Two steps on f(w) = w², gradient 2w.
    let mut store = ParamStore::new();
    let id = store.add("w", scalar(1.0));
    for _ in 0..2 {
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let sq = tape.mul(w, w).unwrap();
        let f = tape.sum(sq).unwrap();
        tape.backward(f).unwrap();
        let grads = tape.param_grads();
        sgd_step(&mut store, &grads, 0.1, 0.0).unwrap();
    }
    assert!((store.get(id).data()[0] - 0.64).abs() < 1e-12);

    let mut w = scalar(1.0);
    assert!(matches!(sgd_update(&mut w, &Tensor::zeros(&[2]), 0.1, 0.0), Err(Error::Contract(_))));
}

#[test]
fn sgd_on_half_square_converges_monotonically() {
    for start in [-10.0, -3.7, -0.2, 0.5, 4.0, 10.0] {
        let mut w = scalar(start);
        let mut prev = f64::abs(start);
        for _ in 0..200 {
            let g = w.clone();
            sgd_update(&mut w, &g, 0.1, 0.0).unwrap();
            let now = w.data()[0].abs();
            assert!(now < prev || now == 0.0);
            prev = now;
        }
        assert!(prev < 1e-8);
    }
}

#[test]
fn metrics_reproduce_the_reference_confusion_row() {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    // 15 positives (10 caught), 28 negatives (4 false alarms).
    for i in 0..15 {
        scores.push(if i < 10 { 0.8 } else { 0.2 });
        labels.push(1);
    }
    for i in 0..28 {
        scores.push(if i < 4 { 0.7 } else { 0.1 });
        labels.push(0);
    }
    let m = compute_metrics(&scores, &labels, 0.5).unwrap();
    assert_eq!((m.tp, m.fp, m.tn, m.fn_), (10, 4, 24, 5));
    let want = [("acc", 0.791), ("f1", 0.690), ("specificity", 0.857), ("sensitivity", 0.667), ("ppv", 0.714), ("npv", 0.828)];
    let got: std::collections::HashMap<_, _> = m.named().into_iter().collect();
    for (name, v) in want {
        let g = got[name].unwrap();
        assert!((g - v).abs() < 5e-4, "{name}: {g}");
    }
}

#[test]
fn metric_edge_cases() {
    let m = compute_metrics(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
    assert_eq!(m.auroc, Some(1.0));
    let single = compute_metrics(&[0.2, 0.7, 0.4], &[1, 1, 1], 0.5).unwrap();
    assert_eq!(single.auroc, None);
    assert_eq!(single.specificity, None);
    assert_eq!(single.sensitivity, Some(1.0 / 3.0));
    assert!(compute_metrics(&[], &[], 0.5).is_err());
    // A score equal to the threshold is a positive call.
    assert_eq!(compute_metrics(&[0.5], &[1], 0.5).unwrap().tp, 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn auroc_matches_pairwise_count(
        pairs in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
    ) {
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = pairs.iter().map(|(s, _)| f64::from(*s) / 20.0).collect();
        let labels: Vec<u8> = pairs.iter().map(|(_, l)| u8::from(*l)).collect();
        let got = auroc(&scores, &labels).unwrap();
        let want = brute_auroc(&scores, &labels);
        match (got, want) {
            (Some(g), Some(w)) => prop_assert!((g - w).abs() < 1e-12),
            (None, None) => {}
            other => prop_assert!(false, "{other:?}"),
        }
    }

    #[test]
    fn confusion_ratios_are_consistent(
        scores in prop::collection::vec(0.0f64..1.0, 1..100),
        seed in any::<u64>()
    ) {
        let mut r = rng(seed);
        let labels: Vec<u8> = scores.iter().map(|_| u8::from(r.random_bool(0.4))).collect();
        let m = compute_metrics(&scores, &labels, 0.5).unwrap();
        prop_assert_eq!(m.count(), scores.len());
        let (tp, fp, tn, fn_) = (m.tp as f64, m.fp as f64, m.tn as f64, m.fn_ as f64);
        prop_assert!((m.acc.unwrap() - (tp + tn) / (tp + fp + tn + fn_)).abs() < 1e-15);
        if tp + fp + fn_ > 0.0 {
            prop_assert!((m.f1.unwrap() - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-15);
        }
    }
}

#[test]
fn default_cohort_splits_and_oversampling() {
    let data = synth_generate(&SynthConfig::default()).unwrap();
    let labels: Vec<u8> = data.samples.iter().map(|s| s.label).collect();
    assert_eq!(labels.iter().filter(|&&l| l == MINORITY).count(), 61);
    let count = |idx: &[usize], c: u8| idx.iter().filter(|&&i| labels[i] == c).count();
    let s = &data.splits;
    assert_eq!((count(&s.train, 1), count(&s.val, 1), count(&s.test, 1)), (34, 12, 15));
    assert_eq!((count(&s.train, 0), count(&s.val, 0), count(&s.test, 0)), (198, 25, 28));

    let over = oversample(&s.train, &labels, MINORITY, None, 3).unwrap();
    assert_eq!(count(&over, 1), 198);
    assert_eq!(count(&over, 0), 198);
    assert_eq!(&over[..s.train.len()], &s.train[..]);
    let mut distinct: Vec<usize> = over.iter().copied().filter(|&i| labels[i] == 1).collect();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), 34);
    assert!(over.iter().all(|i| !s.val.contains(i) && !s.test.contains(i)));
    assert_eq!(over, oversample(&s.train, &labels, MINORITY, None, 3).unwrap());
}

#[test]
fn oversampling_edge_cases() {
    let labels = [0, 1, 0, 1];
    let train = [0, 1, 2, 3];
    assert_eq!(oversample(&train, &labels, 1, None, 0).unwrap(), train);
    assert_eq!(oversample(&train, &labels, 1, Some(1), 0).unwrap(), train);
    assert_eq!(oversample(&train, &labels, 1, Some(5), 0).unwrap().len(), 7);
    assert!(matches!(oversample(&[0, 2], &labels, 1, None, 0), Err(Error::Data(_))));
}

#[test]
fn synthetic_generation_is_deterministic_and_checked() {
    let cfg = SynthConfig { n_majority: 20, n_minority: 8, seed: 11, ..Default::default() };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    assert_eq!(a.splits, b.splits);
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.volume.data(), y.volume.data());
        assert_eq!(x.record, y.record);
        assert_eq!(x.id, y.id);
    }
    a.validate().unwrap();
    let c = synth_generate(&SynthConfig { seed: 12, ..cfg.clone() }).unwrap();
    assert_ne!(a.samples[0].volume.data(), c.samples[0].volume.data());
    assert!(matches!(synth_generate(&SynthConfig { geometry: [2, 16, 16], ..cfg.clone() }), Err(Error::Config(_))));
    assert!(matches!(synth_generate(&SynthConfig { geometry: [4, 8, 16], ..cfg }), Err(Error::Config(_))));
}

#[test]
fn minority_volumes_are_brighter_on_average() {
    let data = synth_generate(&SynthConfig { n_majority: 30, n_minority: 30, ..Default::default() }).unwrap();
    let peak = |l: u8| {
        let v: Vec<f64> = data.samples.iter().filter(|s| s.label == l).map(|s| s.volume.sum()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    assert!(peak(1) > peak(0) + 20.0);
}

fn sharpen_oracle(slice: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = [[0.0, -1.0, 0.0], [-1.0, 5.0, -1.0], [0.0, -1.0, 0.0]];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                        acc += k[(dy + 1) as usize][(dx + 1) as usize] * slice[yy as usize * w + xx as usize];
                    }
                }
            }
            out[y as usize * w + x as usize] = acc;
        }
    }
    out
}

#[test]
fn augmentation_examples() {
    let v = rand_t(&[1, 3, 9, 11], 20);
    assert_eq!(rotate_inplane(&v, 0.0).data(), v.data());

    let n = normalize(&v.map(|x| 3.0 * x + 7.0));
    let m = n.sum() / n.numel() as f64;
    let var = n.data().iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n.numel() as f64;
    assert!(m.abs() < 1e-10 && (var - 1.0).abs() < 1e-6);
    let flat = normalize(&Tensor::<f64>::ones(&[1, 2, 3, 3]));
    assert!(flat.data().iter().all(|&x| x == 0.0));

    let s = sharpen(&v);
    for z in 0..3 {
        let want = sharpen_oracle(&v.data()[z * 99..(z + 1) * 99], 9, 11);
        for (a, b) in s.data()[z * 99..(z + 1) * 99].iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn rotation_moves_mass_about_the_centre() {
    // A single bright pixel right of centre goes to below centre after 90°.
    let mut v = Tensor::<f64>::zeros(&[1, 1, 9, 9]);
    v.data_mut()[4 * 9 + 6] = 1.0;
    let r = rotate_inplane(&v, 90.0);
    let (idx, _) = r.data().iter().enumerate().fold((0, f64::MIN), |b, (i, &x)| if x > b.1 { (i, x) } else { b });
    assert!(idx == 6 * 9 + 4 || idx == 2 * 9 + 4, "{idx}");
    assert!((r.sum() - 1.0).abs() < 1e-9);
    // Bilinear weights are a convex combination, so a constant slice stays
    // constant wherever the source footprint lies inside the slice.
    let c = rotate_inplane(&Tensor::<f64>::full(&[1, 1, 9, 9], 2.0), 15.0);
    assert!((c.data()[4 * 9 + 4] - 2.0).abs() < 1e-12);
    assert!(c.data().iter().all(|&x| (-1e-12..=2.0 + 1e-12).contains(&x)));
}

#[test]
fn augment_is_reproducible_under_a_seed() {
    let v = rand_t(&[1, 4, 16, 16], 30);
    let cfg = AugmentConfig::default();
    let a = augment(&v, &cfg, &mut rng(5));
    let b = augment(&v, &cfg, &mut rng(5));
    assert_eq!(a.data(), b.data());
    let off = AugmentConfig { rotate: false, sharpen: false, normalize: false };
    assert_eq!(augment(&v, &off, &mut rng(5)).data(), v.data());
}
