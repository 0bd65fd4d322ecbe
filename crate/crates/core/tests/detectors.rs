use phlink::features::{bin_features, FeatureVector};
use phlink::rnn::{detect_bits, sequence_loss, train_rnn, CellKind, RnnModel, Sequence, TrainConfig};
use phlink::slope::{classify_slope, train_slope};
use phlink::svm::{classify_svm, kkt_residual, train_svm, SvmParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fv_with_diff(idx: usize, value: f64) -> FeatureVector {
    let mut fv = bin_features(&[7.0; 8]).unwrap();
    fv.diffs[idx] = value;
    fv
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn slope_training_error_is_its_replay_count(
        pts in prop::collection::vec((-1.0f64..1.0, 0u8..2), 4..80),
        idx in 0usize..7,
    ) {
        prop_assume!(pts.iter().any(|p| p.1 == 0) && pts.iter().any(|p| p.1 == 1));
        prop_assume!(pts.iter().any(|p| p.0 != pts[0].0));
        let x: Vec<FeatureVector> = pts.iter().map(|p| fv_with_diff(idx, p.0)).collect();
        let y: Vec<u8> = pts.iter().map(|p| p.1).collect();
        let fit = train_slope(&x, &y).unwrap();
        let replay = x.iter().zip(&y).filter(|(f, &b)| classify_slope(&fit.model, f) != b).count();
        prop_assert_eq!(fit.errors, replay);
        // brute force over every midpoint of the one informative coordinate
        let mut values: Vec<f64> = pts.iter().map(|p| p.0).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let best = values
            .windows(2)
            .map(|w| {
                let t = 0.5 * (w[0] + w[1]);
                pts.iter().filter(|p| u8::from(p.0 >= t) != p.1).count()
            })
            .min()
            .unwrap();
        prop_assert_eq!(fit.errors, best);
    }

    #[test]
    fn svm_meets_kkt_on_random_data(seed in any::<u64>(), c_reg in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(10..120);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let bit = (i % 2) as u8;
            let c = if bit == 1 { 0.5 } else { -0.5 };
            x.push((0..5).map(|_| c + rng.random_range(-1.0..1.0)).collect::<Vec<f64>>());
            y.push(bit);
        }
        let t = train_svm(&x, &y, &SvmParams { c_reg, ..SvmParams::default() }).unwrap();
        prop_assert!(kkt_residual(&t, &x, &y) < 1e-3);
        prop_assert!(t.alpha.iter().all(|&a| (0.0..=c_reg).contains(&a)));
        // equality constraint sum_i a_i y_i = 0
        let s: f64 = t.alpha.iter().zip(&y).map(|(a, &b)| if b == 1 { *a } else { -a }).sum();
        prop_assert!(s.abs() < 1e-9);
    }

    #[test]
    fn rnn_outputs_are_causal(seed in any::<u64>(), cut in 1usize..9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = RnnModel::init(CellKind::Lstm, 3, 5, &mut rng);
        let a: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut b = a.clone();
        for row in &mut b[cut..] {
            row.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let pa = m.forward_sequence(&a).unwrap();
        let pb = m.forward_sequence(&b).unwrap();
        prop_assert_eq!(&pa[..cut], &pb[..cut]);
        for p in &pa {
            prop_assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn svm_learns_a_ring() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for _ in 0..300 {
        let v: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let r = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if (1.3..1.7).contains(&r) {
            continue;
        }
        y.push(u8::from(r < 1.5));
        x.push(v);
    }
    let t = train_svm(
        &x,
        &y,
        &SvmParams {
            sigma_sq: 0.5,
            c_reg: 10.0,
            ..SvmParams::default()
        },
    )
    .unwrap();
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(v, &b)| classify_svm(&t.model, v) == b)
        .count();
    assert!(correct as f64 / x.len() as f64 > 0.97);
}

#[test]
fn rnn_remembers_what_a_memoryless_rule_cannot() {
    // the label is the sign of the previous input: needs one step of memory
    let make = |seed: u64| -> Vec<Sequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..30)
            .map(|_| {
                let inputs: Vec<Vec<f64>> = (0..30).map(|_| vec![rng.random_range(-1.0..1.0)]).collect();
                let targets = (0..30)
                    .map(|k| {
                        if k == 0 {
                            0
                        } else {
                            u8::from(inputs[k - 1][0] > 0.0)
                        }
                    })
                    .collect();
                Sequence { inputs, targets }
            })
            .collect()
    };
    let cfg = TrainConfig {
        state_dim: 6,
        epochs: 40,
        sequence_length: 30,
        ..TrainConfig::default()
    };
    let model = train_rnn(&make(1), &cfg).unwrap().model;
    let test = make(2);
    let (mut ok, mut total) = (0, 0);
    for s in &test {
        let pmfs = model.forward_sequence(&s.inputs).unwrap();
        assert!(sequence_loss(&pmfs, &s.targets).unwrap().is_finite());
        let bits = detect_bits(&pmfs);
        ok += bits
            .iter()
            .zip(&s.targets)
            .skip(1)
            .filter(|(a, b)| a == b)
            .count();
        total += bits.len() - 1;
    }
    assert!(ok as f64 / total as f64 > 0.9, "{ok}/{total}");
}
