use activeu::estimators::u_statistic;
use activeu::kernels::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn scalars(v: &[f64]) -> Vec<LabelValue> {
    v.iter().map(|&y| LabelValue::Scalar(y)).collect()
}

/// Average of the kernel over every r-subset, by explicit enumeration.
fn enumerate_u(kernel: &KernelSpec, values: &[LabelValue]) -> f64 {
    let n = values.len();
    let (mut sum, mut count) = (0.0, 0usize);
    match kernel.degree() {
        2 => {
            for i in 0..n {
                for j in i + 1..n {
                    sum += eval_kernel(kernel, &[values[i], values[j]]).unwrap();
                    count += 1;
                }
            }
        }
        3 => {
            for i in 0..n {
                for j in i + 1..n {
                    for k in j + 1..n {
                        sum += eval_kernel(kernel, &[values[i], values[j], values[k]]).unwrap();
                        count += 1;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    sum / count as f64
}

#[test]
fn gini_sum_of_one_two_three() {
    // Brute force over the three pairs: 1 + 2 + 1.
    assert_eq!(fast_gini_pairwise_sum(&[1.0, 2.0, 3.0]).unwrap(), 4.0);
    assert_eq!(naive_gini_pairwise_sum(&[1.0, 2.0, 3.0]), 4.0);
}

#[test]
fn gini_matches_double_loop_on_uniform_reals() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
    let mut naive = 0.0;
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            naive += (v[i] - v[j]).abs();
        }
    }
    assert!(rel_close(fast_gini_pairwise_sum(&v).unwrap(), naive, 1e-12));
}

#[test]
fn kendall_matches_double_loop_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let pairs: Vec<(f64, f64)> = (0..200)
        .map(|_| (rng.random_range(0..12) as f64, rng.random_range(0..9) as f64))
        .collect();
    let mut naive = 0.0;
    for i in 0..pairs.len() {
        for j in i + 1..pairs.len() {
            let (a, b) = (pairs[i].0 - pairs[j].0, pairs[i].1 - pairs[j].1);
            naive += (a * b).signum() * ((a * b != 0.0) as i32 as f64);
        }
    }
    assert_eq!(fast_kendall_sum(&pairs).unwrap(), naive);
}

#[test]
fn third_moment_on_symmetric_triple_by_expansion() {
    let (a, b, c) = (-1.0f64, 0.0f64, 1.0f64);
    // (1/3) sum y^3 - (1/2) sum_{i != j} y_i^2 y_j + 2 y1 y2 y3, term by term.
    let cubes = a.powi(3) + b.powi(3) + c.powi(3);
    let mixed = a * a * b + a * a * c + b * b * a + b * b * c + c * c * a + c * c * b;
    let expanded = cubes / 3.0 - mixed / 2.0 + 2.0 * a * b * c;
    assert_eq!(expanded, 0.0);
    let k = builtin_kernel("third-central-moment").unwrap();
    let t = scalars(&[a, b, c]);
    assert_eq!(eval_kernel(&k, &t).unwrap(), expanded);
    assert_eq!(third_central_moment_u(&[a, b, c]).unwrap(), 0.0);
}

#[test]
fn third_moment_fast_path_matches_triple_enumeration() {
    let k = builtin_kernel("third-central-moment").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [3, 4, 7, 25, 60] {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        let brute = enumerate_u(&k, &scalars(&v));
        assert!(rel_close(third_central_moment_u(&v).unwrap(), brute, 1e-10), "n = {n}");
        assert!(
            rel_close(u_statistic(&scalars(&v), &k).unwrap(), brute, 1e-10),
            "n = {n}"
        );
    }
}

#[test]
fn wilcoxon_fast_path_matches_enumeration() {
    let k = builtin_kernel("wilcoxon-pair").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [2, 3, 10, 101] {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5..6) as f64 / 2.0).collect();
        let brute = enumerate_u(&k, &scalars(&v)) * binomial(n, 2);
        assert_eq!(fast_wilcoxon_pair_count(&v).unwrap(), brute.round(), "n = {n}");
    }
}

#[test]
fn fast_paths_reject_bad_input() {
    assert!(fast_gini_pairwise_sum(&[1.0]).is_err());
    assert!(fast_gini_pairwise_sum(&[1.0, f64::NAN]).is_err());
    assert!(fast_kendall_sum(&[(0.0, 1.0)]).is_err());
    assert!(third_central_moment_u(&[1.0, 2.0]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn fast_gini_equals_naive(v in prop::collection::vec(-1e3f64..1e3, 2..500)) {
        let fast = fast_gini_pairwise_sum(&v).unwrap();
        prop_assert!(rel_close(fast, naive_gini_pairwise_sum(&v), 1e-9));
    }

    #[test]
    fn fast_kendall_equals_naive(
        v in prop::collection::vec((0i32..30, 0i32..30), 2..500),
        scale in 0.1f64..10.0,
    ) {
        let pairs: Vec<(f64, f64)> = v.iter().map(|&(a, b)| (a as f64 * scale, b as f64 - 15.0)).collect();
        prop_assert_eq!(fast_kendall_sum(&pairs).unwrap(), naive_kendall_sum(&pairs));
    }

    #[test]
    fn degree_two_kernels_are_symmetric(
        name in prop::sample::select(vec!["gini", "kendall", "wilcoxon-pair"]),
        a in (-100.0f64..100.0, -100.0f64..100.0),
        b in (-100.0f64..100.0, -100.0f64..100.0),
    ) {
        let k = builtin_kernel(name).unwrap();
        let (a, b) = match k.label_shape() {
            LabelShape::Scalar => (LabelValue::Scalar(a.0), LabelValue::Scalar(b.0)),
            LabelShape::Pair => (LabelValue::Pair(a.0, a.1), LabelValue::Pair(b.0, b.1)),
        };
        prop_assert_eq!(eval_kernel(&k, &[a, b]).unwrap(), eval_kernel(&k, &[b, a]).unwrap());
    }

    #[test]
    fn third_moment_kernel_is_symmetric(a in -50.0f64..50.0, b in -50.0f64..50.0, c in -50.0f64..50.0) {
        let k = builtin_kernel("third-central-moment").unwrap();
        let base = eval_kernel(&k, &scalars(&[a, b, c])).unwrap();
        for perm in [[a, c, b], [b, a, c], [b, c, a], [c, a, b], [c, b, a]] {
            prop_assert_eq!(eval_kernel(&k, &scalars(&perm)).unwrap(), base);
        }
    }
}
