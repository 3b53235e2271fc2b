use activeu::estimators::ActiveSample;
use activeu::inference::*;
use activeu::kernels::LabelValue;
use activeu::numeric::{mean, sample_variance};
use activeu::policy::draw_uniforms;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sample(probs: &[f64], seed: u64) -> ActiveSample {
    let u = draw_uniforms(probs.len(), seed);
    ActiveSample::draw(probs.to_vec(), u, probs.iter().sum(), |_| LabelValue::Scalar(0.0)).unwrap()
}

#[test]
fn ht_first_moment_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h1: Vec<f64> = (0..60).map(|_| rng.random::<f64>() * 2.0 - 0.5).collect();
    let probs = vec![0.5; 60];
    let draws: Vec<f64> = (0..5000)
        .map(|t| ht_moments(&sample(&probs, t), &h1).unwrap().0)
        .collect();
    let se = (sample_variance(&draws) / draws.len() as f64).sqrt();
    assert!((mean(&draws) - mean(&h1)).abs() <= 3.0 * se);
}

#[test]
fn ht_second_moment_is_unbiased_under_unequal_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h1: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
    let probs: Vec<f64> = (0..40).map(|i| 0.2 + 0.6 * i as f64 / 40.0).collect();
    let target = h1.iter().map(|v| v * v).sum::<f64>() / 40.0;
    let draws: Vec<f64> = (0..5000)
        .map(|t| ht_moments(&sample(&probs, 9000 + t), &h1).unwrap().1)
        .collect();
    let se = (sample_variance(&draws) / draws.len() as f64).sqrt();
    assert!((mean(&draws) - target).abs() <= 3.0 * se);
}

#[test]
fn full_labeling_leaves_only_the_first_variance_term() {
    let h1: Vec<f64> = (0..10).map(|i| i as f64).collect();
    let s = ActiveSample::fully_labeled(vec![LabelValue::Scalar(0.0); 10]);
    let v = variance_estimate(&s, &h1, &[0.0; 10], 2, Centering::Hajek).unwrap();
    assert_eq!(v.var2, 0.0);
    // Population variance of 0..9 is 8.25; times r^2 = 4.
    assert!((v.var1 - 33.0).abs() < 1e-12);
    assert!(!v.clamped);
}

#[test]
fn interval_uses_the_normal_quantile() {
    let z = normal_quantile(0.95).unwrap();
    assert!((z - 1.6448536269514722).abs() < 1e-9);
    let (lo, hi) = confidence_interval(1.0, 4.0, 100, 0.1).unwrap();
    assert!((lo - (1.0 - z * 0.2)).abs() < 1e-12);
    assert!((hi - (1.0 + z * 0.2)).abs() < 1e-12);
    assert!(confidence_interval(1.0, -1.0, 10, 0.1).is_err());
    assert!(normal_quantile(1.0).is_err());
}
