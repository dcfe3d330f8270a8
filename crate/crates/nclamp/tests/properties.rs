//! Property tests for the metric, calibrator, and clamping invariants.

mod common;

use nclamp::calibrators::LinearCalib;
use nclamp::clamping::{clamp_objective, focal_loss};
use nclamp::metrics::{
    accuracy, ace, argmax, ece, mean_entropy, nll, sce, softmax_rows, softmax_t, ProbBatch,
};
use nclamp::network::Batch;
use nclamp::Tensor;
use proptest::prelude::*;

/// Strategy: a probability batch with n rows, k classes, labels in range.
fn prob_batch_strategy() -> impl Strategy<Value = ProbBatch> {
    (1usize..24, 2usize..6).prop_flat_map(|(n, k)| {
        (
            proptest::collection::vec(0.01f64..1.0, n * k),
            proptest::collection::vec(0usize..k, n),
        )
            .prop_map(move |(raw, labels)| {
                let mut data = Vec::with_capacity(n * k);
                for row in raw.chunks(k) {
                    let sum: f64 = row.iter().sum();
                    data.extend(row.iter().map(|v| v / sum));
                }
                ProbBatch::new(Tensor::new(n, k, data).unwrap(), labels).unwrap()
            })
    })
}

fn logit_rows_strategy() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-6.0f64..6.0, 2..6)
}

proptest! {
    #[test]
    fn calibration_errors_stay_in_unit_interval(p in prob_batch_strategy(), m in 1usize..20) {
        let (e, _) = ece(&p, m).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let s = sce(&p, m).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        let r = 1 + m % p.len().max(1);
        if r <= p.len() {
            let a = ace(&p, r).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(p in prob_batch_strategy(), m in 1usize..16) {
        let n = p.len();
        // Deterministic permutation: reverse order.
        let order: Vec<usize> = (0..n).rev().collect();
        let k = p.class_count();
        let mut data = Vec::with_capacity(n * k);
        let mut labels = Vec::with_capacity(n);
        for &i in &order {
            data.extend_from_slice(p.probs().row(i));
            labels.push(p.labels()[i]);
        }
        let q = ProbBatch::new(Tensor::new(n, k, data).unwrap(), labels).unwrap();
        prop_assert!((ece(&p, m).unwrap().0 - ece(&q, m).unwrap().0).abs() < 1e-12);
        prop_assert!((sce(&p, m).unwrap() - sce(&q, m).unwrap()).abs() < 1e-12);
        let r = 1 + m % n;
        if r <= n {
            prop_assert!((ace(&p, r).unwrap() - ace(&q, r).unwrap()).abs() < 1e-12);
        }
        prop_assert!((nll(&p) - nll(&q)).abs() < 1e-9);
        prop_assert!((accuracy(&p) - accuracy(&q)).abs() < 1e-12);
        prop_assert!((mean_entropy(&p) - mean_entropy(&q)).abs() < 1e-12);
    }

    #[test]
    fn softmax_preserves_argmax_for_every_temperature(
        z in logit_rows_strategy(),
        t_exp in -2.0f64..2.0,
    ) {
        let t = 10f64.powf(t_exp);
        let p = softmax_t(&z, t).unwrap();
        prop_assert_eq!(argmax(&z), argmax(&p));
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn entropy_is_nondecreasing_in_temperature(z in logit_rows_strategy()) {
        // Skip near-constant rows where the ordering is vacuous anyway.
        let spread = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - z.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-9);
        let mut last = -1.0f64;
        let mut t = 0.1;
        while t <= 10.0 {
            let h: f64 = softmax_t(&z, t)
                .unwrap()
                .iter()
                .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
                .sum();
            prop_assert!(h >= last - 1e-12, "entropy dropped at t={}", t);
            last = h;
            t *= 1.25;
        }
    }

    #[test]
    fn backward_input_is_linear_in_upstream(seed in 0u64..200) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (net, m, k) = common::random_small_net(&mut rng);
        let batch = common::random_batch_for(&mut rng, m, k, 3);
        let x = &batch.features;
        let mk_dz = |r: &mut rand_chacha::ChaCha8Rng| {
            use rand::Rng;
            let data: Vec<f64> = (0..3 * k)
                .map(|_| r.sample::<f64, _>(rand_distr::StandardUniform) - 0.5)
                .collect();
            Tensor::new(3, k, data).unwrap()
        };
        let da = mk_dz(&mut rng);
        let db = mk_dz(&mut rng);
        let sum = Tensor::new(
            3,
            k,
            da.data().iter().zip(db.data()).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let ga = net.backward_input(x, &da).unwrap();
        let gb = net.backward_input(x, &db).unwrap();
        let gsum = net.backward_input(x, &sum).unwrap();
        for ((a, b), s) in ga.data().iter().zip(gb.data()).zip(gsum.data()) {
            prop_assert!((a + b - s).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_loss_never_exceeds_cross_entropy(
        raw in proptest::collection::vec(0.01f64..1.0, 2..6),
        y_pick in 0usize..6,
        gamma in 0.0f64..4.0,
    ) {
        let sum: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let y = y_pick % p.len();
        let ce = focal_loss(&p, y, 0.0);
        prop_assert!(focal_loss(&p, y, gamma) <= ce + 1e-12);
        // gamma = 0 replicates -ln p_y exactly.
        prop_assert!((ce - (-p[y].ln())).abs() < 1e-12);
    }

    #[test]
    fn clamp_objective_reduces_to_ts_nll(seed in 0u64..100, t_exp in -0.5f64..0.5) {
        use rand::SeedableRng;
        let t = 10f64.powf(t_exp);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (net, m, k) = common::random_small_net(&mut rng);
        let batch = common::random_batch_for(&mut rng, m, k, 5);
        let zero = vec![0.0; m];
        let obj = clamp_objective(&net, &batch, &zero, t, 0.0, 0.0).unwrap();
        let z = net.forward(&batch.features).unwrap();
        let p = ProbBatch::new(softmax_rows(&z, t).unwrap(), batch.labels.clone()).unwrap();
        prop_assert!((obj - nll(&p)).abs() < 1e-12, "objective {} vs nll {}", obj, nll(&p));
    }

    #[test]
    fn temperature_family_never_changes_predictions(
        seed in 0u64..100,
        t_exp in -2.0f64..2.0,
    ) {
        use rand::SeedableRng;
        let t = 10f64.powf(t_exp);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (net, m, k) = common::random_small_net(&mut rng);
        let batch = common::random_batch_for(&mut rng, m, k, 8);
        let z = net.forward(&batch.features).unwrap();
        let probs = LinearCalib::Temperature { t }.apply(&z).unwrap();
        for (zrow, prow) in z.iter_rows().zip(probs.iter_rows()) {
            prop_assert_eq!(argmax(zrow), argmax(prow));
        }
    }

    #[test]
    fn metric_reference_agreement_fuzz(seed in 0u64..150) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = common::random_prob_batch(&mut rng, 24, 6);
        let m = 1 + (seed as usize % 17);
        prop_assert!((ece(&p, m).unwrap().0 - common::ref_ece(&p, m)).abs() < 1e-12);
        prop_assert!((sce(&p, m).unwrap() - common::ref_sce(&p, m)).abs() < 1e-12);
        let r = 1 + (seed as usize % p.len());
        prop_assert!((ace(&p, r).unwrap() - common::ref_ace(&p, r)).abs() < 1e-12);
    }
}

#[test]
fn batch_select_preserves_rows() {
    let batch = Batch::new(
        Tensor::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
        vec![0, 1, 0],
    )
    .unwrap();
    let sub = batch.select(&[2, 0]);
    assert_eq!(sub.features.row(0), &[5.0, 6.0]);
    assert_eq!(sub.features.row(1), &[1.0, 2.0]);
    assert_eq!(sub.labels, vec![0, 0]);
}
