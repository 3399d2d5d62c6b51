use proptest::prelude::*;

use kgood_core::bounds::{gen_bound_l1, gen_bound_l2, rad_bound_l1, rad_bound_l2, BoundForm};
use kgood_core::goodness::{misclassification_rate, unit_norm_goodness};
use kgood_core::kernels::{combined_kernel, gram_matrix, kspace_map};
use kgood_core::optimize::{objective, solve};
use kgood_core::risk::{empirical_risk, ordered_pair_risk};
use kgood_core::{
    BaseKernel, BoundInputs, CombinationVector, DualPredictor, KappaVector, LabeledDataset, Regularizer, SolverConfig,
};

const DIM: usize = 2;

fn kernels() -> Vec<BaseKernel> {
    vec![
        BaseKernel::linear(2f64.sqrt()).unwrap(),
        BaseKernel::rbf(1.0).unwrap(),
        BaseKernel::polynomial(2, 1.0, 2f64.sqrt()).unwrap(),
        BaseKernel::linear(1.0).unwrap().on_features(vec![0]).unwrap(),
    ]
}

fn point() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, DIM)
}

fn dataset(min: usize, max: usize) -> impl Strategy<Value = LabeledDataset> {
    prop::collection::vec((point(), any::<bool>()), min..max).prop_map(|rows| {
        let (points, labels) = rows.into_iter().map(|(x, y)| (x, if y { 1.0 } else { -1.0 })).unzip();
        LabeledDataset::new(points, labels).unwrap()
    })
}

fn mu() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..3.0f64, 4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn combined_kernel_within_kappa(m in mu(), x in point(), x2 in point()) {
        let k = kernels();
        let kappa = KappaVector::from_kernels(&k);
        let bound: f64 = m.iter().zip(kappa.iter()).map(|(a, b)| a * b).sum();
        prop_assert!(combined_kernel(&m, &k, &x, &x2).unwrap().abs() <= bound + 1e-12);
        let pair = kspace_map(&k, (&x, 1.0), (&x2, -1.0)).unwrap();
        for (z, c) in pair.z.iter().zip(kappa.iter()) {
            prop_assert!(z.abs() <= c + 1e-12);
        }
        let norm: f64 = pair.z.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= kappa.l2() + 1e-12);
    }

    #[test]
    fn gram_is_positive_semidefinite(m in mu(), d in dataset(1, 12)) {
        let g = gram_matrix(&m, &kernels(), d.points()).unwrap();
        let scale = g.amax().max(1.0);
        let min = g.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-9 * scale * d.len() as f64, "{}", min);
    }

    #[test]
    fn risk_is_convex_in_mu(a in mu(), b in mu(), t in 0.0..1.0f64, d in dataset(2, 10)) {
        let k = kernels();
        let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
        let lhs = empirical_risk(&mid, &d, &k).unwrap();
        let rhs = t * empirical_risk(&a, &d, &k).unwrap() + (1.0 - t) * empirical_risk(&b, &d, &k).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
    }

    #[test]
    fn risk_ignores_sample_order(m in mu(), d in dataset(2, 10), seed in any::<u64>()) {
        let k = kernels();
        let mut order: Vec<usize> = (0..d.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = empirical_risk(&m, &d, &k).unwrap();
        let b = empirical_risk(&m, &d.permuted(&order), &k).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn mean_embedding_below_ordered_pair_risk(m in mu(), d in dataset(1, 10)) {
        let k = kernels();
        let me = kgood_core::goodness::mean_embedding_goodness(&m, &d, &d, &k).unwrap().epsilon_hat;
        prop_assert!(me <= ordered_pair_risk(&m, &d, &k).unwrap() + 1e-12);
    }

    #[test]
    fn unit_norm_goodness_is_scale_invariant(m in mu(), d in dataset(2, 10), c in 0.01..100.0f64) {
        let k = kernels();
        let mu = CombinationVector::new(m.iter().map(|v| v + 0.1).collect()).unwrap();
        let pred = DualPredictor::mean_embedding(d.clone(), mu.clone()).unwrap();
        let scaled = DualPredictor::new(pred.alphas.iter().map(|a| a * c).collect(), d.clone(), mu).unwrap();
        let a = unit_norm_goodness(&pred, &d, &k, 0.5).unwrap().epsilon_hat;
        let b = unit_norm_goodness(&scaled, &d, &k, 0.5).unwrap().epsilon_hat;
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0), "{} vs {}", a, b);
    }

    #[test]
    fn negating_predictor_flips_errors(m in mu(), d in dataset(2, 10)) {
        let k = kernels();
        let mu = CombinationVector::new(m.iter().map(|v| v + 0.1).collect()).unwrap();
        let pred = DualPredictor::mean_embedding(d.clone(), mu).unwrap();
        let f = pred.predict_all(&k, &d).unwrap();
        // ties count as errors both ways
        let ties = f.iter().filter(|v| **v == 0.0).count() as f64 / d.len() as f64;
        let a = misclassification_rate(&pred, &d, &k).unwrap();
        let b = misclassification_rate(&pred.negated(), &d, &k).unwrap();
        prop_assert!((a + b - 1.0 - ties).abs() < 1e-12);
    }

    #[test]
    fn bounds_shrink_with_n_and_grow_with_confidence(
        n in 2usize..5000,
        lambda in 0.01..10.0f64,
        delta in 0.001..0.9f64,
        p in 3usize..50,
    ) {
        let kappa = KappaVector::new(vec![1.0; p]).unwrap();
        let base = BoundInputs::new(n, &kappa, lambda, delta);
        let more = BoundInputs::new(n + 2, &kappa, lambda, delta);
        let surer = BoundInputs::new(n, &kappa, lambda, delta / 2.0);
        for form in [BoundForm::Exact, BoundForm::Simplified] {
            prop_assert!(gen_bound_l2(&more, form) <= gen_bound_l2(&base, form));
            prop_assert!(gen_bound_l2(&surer, form) >= gen_bound_l2(&base, form));
            if (p as f64).ln() > 1.0 {
                prop_assert!(gen_bound_l1(&more, form) <= gen_bound_l1(&base, form));
                prop_assert!(gen_bound_l1(&surer, form) >= gen_bound_l1(&base, form));
            }
        }
        let r = 2.0 / lambda;
        prop_assert!(rad_bound_l2(r, kappa.l2(), n + 2).unwrap() <= rad_bound_l2(r, kappa.l2(), n).unwrap());
        prop_assert!(rad_bound_l2(2.0 * r, kappa.l2(), n).unwrap() >= rad_bound_l2(r, kappa.l2(), n).unwrap());
        if (p as f64).ln() > 1.0 {
            prop_assert!(rad_bound_l1(r, 1.0, n + 2, p).unwrap() <= rad_bound_l1(r, 1.0, n, p).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn solver_output_is_feasible_and_beats_zero(d in dataset(2, 10), lambda in 0.05..5.0f64, l1 in any::<bool>()) {
        let k = kernels();
        let reg = if l1 { Regularizer::L1 } else { Regularizer::L2 };
        let sol = solve(reg, &d, &k, &SolverConfig::new(lambda).max_iters(2000)).unwrap();
        prop_assert!(sol.mu_hat.iter().all(|v| *v >= 0.0));
        let norm = match reg {
            Regularizer::L2 => sol.mu_hat.l2(),
            Regularizer::L1 => sol.mu_hat.l1(),
        };
        prop_assert!(norm <= reg.radius(lambda) + 1e-9);
        // mu = 0 has objective 1
        prop_assert!(sol.objective <= 1.0 + 1e-12);
        let again = objective(reg, &sol.mu_hat, &d, &k, lambda).unwrap();
        prop_assert!((again - sol.objective).abs() <= 1e-12);
    }
}
