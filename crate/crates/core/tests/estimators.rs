use activeu::estimators::*;
use activeu::harness::dgp::DgpKind;
use activeu::harness::trials::{run_estimation_trials, Method, SimConfig};
use activeu::kernels::{builtin_kernel, LabelValue};
use activeu::numeric::{mean, sample_variance};
use activeu::policy::draw_uniforms;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalars(v: &[f64]) -> Vec<LabelValue> {
    v.iter().map(|&y| LabelValue::Scalar(y)).collect()
}

/// `|mean - target| <= 3 * SE` over Monte Carlo draws.
fn assert_within_3se(draws: &[f64], target: f64, what: &str) {
    let m = mean(draws);
    let se = (sample_variance(draws) / draws.len() as f64).sqrt();
    assert!(
        (m - target).abs() <= 3.0 * se,
        "{what}: mean {m} vs target {target}, 3 SE = {}",
        3.0 * se
    );
}

fn redraw(probs: &[f64], labels: &[LabelValue], seed: u64) -> ActiveSample {
    let u = draw_uniforms(probs.len(), seed);
    ActiveSample::draw(probs.to_vec(), u, probs.iter().sum(), |i| labels[i]).unwrap()
}

#[test]
fn ipw_is_unbiased_under_uniform_sampling() {
    let gini = builtin_kernel("gini").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 5.0).collect();
    let labels = scalars(&y);
    let target = u_statistic(&labels, &gini).unwrap();
    let probs = vec![0.4; y.len()];
    let draws: Vec<f64> = (0..2000)
        .filter_map(|t| ipw_u(&redraw(&probs, &labels, t), &gini).ok())
        .collect();
    assert!(draws.len() >= 1990);
    assert_within_3se(&draws, target, "ipw");
}

#[test]
fn n_hat_is_unbiased_for_the_pair_count() {
    let labels = scalars(&[0.0; 20]);
    let probs = vec![0.5; 20];
    let draws: Vec<f64> = (0..5000)
        .map(|t| n_hat(&redraw(&probs, &labels, 1000 + t), 2).unwrap())
        .collect();
    assert_within_3se(&draws, 190.0, "n_hat");
}

#[test]
fn aipw_is_unbiased_under_a_skewed_policy() {
    let gini = builtin_kernel("gini").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 120;
    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 3.0).collect();
    let yhat: Vec<f64> = y.iter().map(|v| v + rng.random::<f64>() - 0.5).collect();
    let probs: Vec<f64> = (0..n).map(|i| 0.1 + 0.5 * (i as f64 / n as f64)).collect();
    let labels = scalars(&y);
    let target = u_statistic(&labels, &gini).unwrap();
    let draws: Vec<f64> = (0..2000)
        .map(|t| {
            let s = redraw(&probs, &labels, 5000 + t)
                .with_predictions(scalars(&yhat))
                .unwrap();
            aipw_u(&s, &gini).unwrap()
        })
        .collect();
    assert_within_3se(&draws, target, "aipw");
}

#[test]
fn normalized_aipw_is_centered_and_beats_unnormalized_mse() {
    let mut cfg = SimConfig::new(DgpKind::AppendixC1, 2000, 4, "gini", vec![200.0], 2000, 161);
    cfg.methods = vec![Method::Active, Method::ActiveUnnormalized];
    let out = run_estimation_trials(&cfg).unwrap();
    let target = out.fixed_target.unwrap();
    let norm = out.estimates(Method::Active, 200.0);
    assert_within_3se(&norm, target, "normalized aipw");
    let mse = |v: &[f64]| v.iter().map(|e| (e - target).powi(2)).sum::<f64>() / v.len() as f64;
    let unnorm = out.estimates(Method::ActiveUnnormalized, 200.0);
    assert!(mse(&norm) <= mse(&unnorm), "{} > {}", mse(&norm), mse(&unnorm));
}

#[test]
fn classical_is_hajek_ipw_under_uniform_sampling() {
    let gini = builtin_kernel("gini").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let y: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let labels = scalars(&y);
    let probs = vec![0.3; 50];
    let s = redraw(&probs, &labels, 3);
    let idx = s.labeled_indices();
    // Under uniform sampling the weights cancel: the mean of h over labeled pairs.
    let sub: Vec<LabelValue> = idx.iter().map(|&i| labels[i]).collect();
    let direct = u_statistic(&sub, &gini).unwrap();
    let hajek = hajek_ipw_u(&s, &gini).unwrap();
    assert!((hajek - direct).abs() <= 1e-12 * direct.abs());
    let sums = labeled_sums(&s, &gini).unwrap();
    assert!((sums.label_sum / sums.n_hat - direct).abs() <= 1e-12 * direct.abs());
}

#[test]
fn labeled_tuple_sums_equal_full_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for (name, n) in [("gini", 30), ("wilcoxon-pair", 25), ("third-central-moment", 18)] {
        let k = builtin_kernel(name).unwrap();
        let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        let probs: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..0.9)).collect();
        let labels = scalars(&y);
        let s = redraw(&probs, &labels, 14);
        let xi: Vec<f64> = s.labeled().iter().map(|&b| b as u8 as f64).collect();
        let w = |t: &[usize]| t.iter().map(|&i| xi[i] / probs[i]).product::<f64>();
        let (mut sum, mut nh) = (0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if k.degree() == 2 {
                    let wt = w(&[i, j]);
                    sum += wt * activeu::kernels::eval_kernel(&k, &[labels[i], labels[j]]).unwrap();
                    nh += wt;
                    continue;
                }
                for l in j + 1..n {
                    let wt = w(&[i, j, l]);
                    sum += wt * activeu::kernels::eval_kernel(&k, &[labels[i], labels[j], labels[l]]).unwrap();
                    nh += wt;
                }
            }
        }
        let sums = labeled_sums(&s, &k).unwrap();
        assert!((sums.label_sum - sum).abs() <= 1e-9 * sum.abs().max(1.0), "{name}");
        assert!((sums.n_hat - nh).abs() <= 1e-9 * nh, "{name}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn full_labeling_recovers_the_u_statistic(
        y in prop::collection::vec(-10.0f64..10.0, 3..40),
        shift in -1.0f64..1.0,
        name in prop::sample::select(vec!["gini", "wilcoxon-pair", "third-central-moment"]),
    ) {
        let k = builtin_kernel(name).unwrap();
        let labels = scalars(&y);
        let u = u_statistic(&labels, &k).unwrap();
        let preds: Vec<f64> = y.iter().map(|v| v + shift).collect();
        let full = ActiveSample::fully_labeled(labels).with_predictions(scalars(&preds)).unwrap();
        let tol = 1e-9 * u.abs().max(1.0);
        prop_assert!((ipw_u(&full, &k).unwrap() - u).abs() <= tol);
        prop_assert!((hajek_ipw_u(&full, &k).unwrap() - u).abs() <= tol);
        prop_assert!((aipw_u(&full, &k).unwrap() - u).abs() <= tol);
        prop_assert!((normalized_aipw_u(&full, &k).unwrap() - u).abs() <= tol);
    }

    #[test]
    fn perfect_predictions_give_the_plug_in(
        y in prop::collection::vec(-10.0f64..10.0, 4..40),
        p in 0.2f64..0.9,
        seed in any::<u64>(),
    ) {
        let k = builtin_kernel("gini").unwrap();
        let labels = scalars(&y);
        let probs = vec![p; y.len()];
        let s = redraw(&probs, &labels, seed).with_predictions(labels.clone()).unwrap();
        let plug = u_statistic(&labels, &k).unwrap();
        if let Ok(est) = aipw_u(&s, &k) {
            prop_assert!((est - plug).abs() <= 1e-9 * plug.abs().max(1.0));
        }
    }
}
