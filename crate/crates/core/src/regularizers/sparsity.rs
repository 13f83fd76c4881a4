//! Nesterov-smoothed l2,1 norm of the feature columns.

use crate::error::{Error, Result};
use crate::features::{apply_g, FilterBank, GradientMode};
use crate::tensor::{FeatureMap, Image};

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("smoothing parameter must be positive, got {eps}")))
    }
}

/// Smoothed contribution of one descriptor of norm `n`.
#[inline]
pub fn smoothed_norm(n: f64, eps: f64) -> f64 {
    if n <= eps {
        n * n / (2.0 * eps)
    } else {
        n - 0.5 * eps
    }
}

/// `smoothed_norm(n, eps) + eps/2`, written as `n + (eps - n)^2 / (2 eps)` on
/// the quadratic branch so that it never rounds below `n` and is monotone in
/// `eps` under floating point.
#[inline]
pub fn shifted_smoothed_norm(n: f64, eps: f64) -> f64 {
    if n <= eps {
        let gap = eps - n;
        n + gap * gap / (2.0 * eps)
    } else {
        n
    }
}

/// `sum_i ||g_i||`, the unsmoothed l2,1 norm.
pub fn l21_norm(f: &FeatureMap) -> f64 {
    f.column_norms().iter().sum()
}

pub fn sparsity_value(f: &FeatureMap, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    Ok(f.column_norms().iter().map(|n| smoothed_norm(*n, eps)).sum())
}

/// Per-location `r_{eps,i} + eps/2`; sums to `sparsity_value + m eps / 2`.
pub fn shifted_location_terms(f: &FeatureMap, eps: f64) -> Result<Vec<f64>> {
    check_eps(eps)?;
    Ok(f.column_norms().iter().map(|n| shifted_smoothed_norm(*n, eps)).collect())
}

/// Cotangent of the sparsity term with respect to the features: column `i`
/// is `g_i / max(eps, ||g_i||)`.
pub fn sparsity_cotangent(f: &FeatureMap, eps: f64) -> Result<FeatureMap> {
    check_eps(eps)?;
    let scale: Vec<f64> = f.column_norms().iter().map(|n| 1.0 / n.max(eps)).collect();
    Ok(f.scale_columns(&scale))
}

/// `smoothed_norm(||b + d||) - smoothed_norm(||b||)` for descriptor `b` and
/// change `d` (with `a = b + d` precomputed), without cancellation between
/// the two values.
pub fn smoothed_norm_change(a: &[f64], b: &[f64], d: &[f64], eps: f64) -> f64 {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cross: f64 = a.iter().zip(b).zip(d).map(|((p, q), r)| (p + q) * r).sum();
    match (na <= eps, nb <= eps) {
        (true, true) => cross / (2.0 * eps),
        (a_quad, b_quad) => {
            // ||a|| - ||b||
            let dn = if na + nb > 0.0 { cross / (na + nb) } else { 0.0 };
            match (a_quad, b_quad) {
                (true, false) => dn + (eps - na).powi(2) / (2.0 * eps),
                (false, true) => dn - (eps - nb).powi(2) / (2.0 * eps),
                _ => dn,
            }
        }
    }
}

/// Sparsity change between features `fx` and `fy = fx + fd`.
pub fn sparsity_change(fx: &FeatureMap, fy: &FeatureMap, fd: &FeatureMap, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    let (c, m) = (fx.channels(), fx.locations());
    for other in [fy, fd] {
        if other.channels() != c || other.locations() != m {
            return Err(Error::Shape("feature maps of a change must share their shape".into()));
        }
    }
    let column = |f: &FeatureMap, i: usize| (0..c).map(|k| f.at(k, i)).collect::<Vec<_>>();
    Ok((0..m)
        .map(|i| smoothed_norm_change(&column(fy, i), &column(fx, i), &column(fd, i), eps))
        .sum())
}

pub fn sparsity_grad(x: &Image, fb: &FilterBank, eps: f64, mode: GradientMode) -> Result<Image> {
    let (f, state) = apply_g(x, fb)?;
    let cot = sparsity_cotangent(&f, eps)?;
    let g = state.transpose_apply_raw(fb, cot.values(), mode)?;
    x.with_values(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::apply_g_raw;

    #[test]
    fn norm_change_covers_all_branches() {
        let eps = 0.5;
        let cases: [(&[f64], &[f64]); 5] = [
            (&[0.1, 0.2], &[0.05, -0.1]),
            (&[3.0, 4.0], &[-1.0, 2.5]),
            (&[0.1, 0.1], &[2.0, 1.0]),
            (&[2.0, 1.0], &[0.1, 0.1]),
            (&[0.0, 0.0], &[0.0, 0.0]),
        ];
        for (b, a) in cases {
            let d: Vec<f64> = a.iter().zip(b).map(|(p, q)| p - q).collect();
            let n = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let direct = smoothed_norm(n(a), eps) - smoothed_norm(n(b), eps);
            assert!((smoothed_norm_change(a, b, &d, eps) - direct).abs() < 1e-14, "{a:?} {b:?}");
        }
    }

    #[test]
    fn norm_change_keeps_tiny_differences() {
        let eps = 1e-3;
        let b = [0.7, -0.2];
        let d = [3e-17, 1e-17];
        let a = [b[0] + d[0], b[1] + d[1]];
        let nb = (0.53f64).sqrt();
        let expect = (b[0] * d[0] + b[1] * d[1]) / nb;
        let got = smoothed_norm_change(&a, &b, &d, eps);
        assert!((got - expect).abs() < 1e-3 * expect.abs(), "{got} vs {expect}");
    }
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-scale..scale)).collect()
    }

    #[test]
    fn zero_features_give_zero() {
        assert_eq!(sparsity_value(&FeatureMap::zeros(3, 10), 0.1).unwrap(), 0.0);
    }

    #[test]
    fn hand_evaluated_large_branch() {
        let f = FeatureMap::new(2, 1, vec![3.0, 4.0]).unwrap();
        assert_eq!(sparsity_value(&f, 1.0).unwrap(), 4.5);
    }

    #[test]
    fn branches_agree_at_knot() {
        let eps = 0.37;
        assert_eq!(eps * eps / (2.0 * eps), eps / 2.0);
        assert!((smoothed_norm(eps, eps) - (eps - eps / 2.0)).abs() < 1e-16);
        assert_eq!(shifted_smoothed_norm(eps, eps), eps);
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let f = FeatureMap::zeros(1, 1);
        assert!(sparsity_value(&f, 0.0).is_err());
        assert!(sparsity_value(&f, -1.0).is_err());
        assert!(sparsity_cotangent(&f, f64::NAN).is_err());
    }

    #[test]
    fn zero_image_tv_has_zero_gradient() {
        let g = sparsity_grad(&Image::zeros(8, 8, 1.0), &FilterBank::tv(1.0), 1e-3, GradientMode::Exact).unwrap();
        assert!(g.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let n = 12;
        for (fb, eps, amp) in [
            (FilterBank::tv(1.0), 0.05, 0.1),
            (FilterBank::seeded_random(4, 3, 6), 0.02, 0.05),
            (FilterBank::dct8(2, 1.0), 0.03, 0.05),
        ] {
            let x = Image::new(n, n, 1.0, rand_vec(n * n, 17, amp)).unwrap();
            let u = rand_vec(n * n, 18, 1.0);
            let grad = sparsity_grad(&x, &fb, eps, GradientMode::Exact).unwrap();
            let analytic: f64 = grad.values().iter().zip(&u).map(|(a, b)| a * b).sum();
            let value = |t: f64| {
                let xs: Vec<f64> = x.values().iter().zip(&u).map(|(a, b)| a + t * b).collect();
                sparsity_value(&apply_g_raw(&xs, n, n, &fb).unwrap().0, eps).unwrap()
            };
            let h = 1e-6;
            let fd = (value(h) - value(-h)) / (2.0 * h);
            let rel = (fd - analytic).abs() / analytic.abs();
            assert!(rel <= 1e-5, "fd={fd} analytic={analytic}");
        }
    }

    #[test]
    fn gradient_independent_of_eps_on_large_branch() {
        let x = Image::new(6, 6, 1.0, (0..36).map(|k| ((k * 7) % 11) as f64).collect()).unwrap();
        let fb = FilterBank::tv(1.0);
        let (f, _) = apply_g(&x, &fb).unwrap();
        let min_norm = f.column_norms().into_iter().fold(f64::INFINITY, f64::min);
        assert!(min_norm > 0.5);
        let a = sparsity_grad(&x, &fb, 0.1, GradientMode::Exact).unwrap();
        let b = sparsity_grad(&x, &fb, 0.4, GradientMode::Exact).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn sandwich_against_l21() {
        let fb = FilterBank::seeded_random(3, 2, 4);
        for seed in 0..20 {
            let x = Image::new(8, 8, 1.0, rand_vec(64, seed, 0.05)).unwrap();
            let (f, _) = apply_g(&x, &fb).unwrap();
            let r = l21_norm(&f);
            for eps in [1e-3, 1e-2, 1e-1] {
                let rs = sparsity_value(&f, eps).unwrap();
                assert!(rs <= r + 1e-12);
                assert!(r <= rs + 64.0 * eps / 2.0 + 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn shifted_terms_decrease_with_eps(
            norms in proptest::collection::vec(0.0f64..2.0, 1..50),
            eps in 1e-4f64..1.0,
            gamma in 0.05f64..0.95,
        ) {
            let eps2 = gamma * eps;
            for n in norms {
                prop_assert!(shifted_smoothed_norm(n, eps2) <= shifted_smoothed_norm(n, eps));
                prop_assert!(shifted_smoothed_norm(n, eps) >= n);
            }
        }

        #[test]
        fn shifted_form_matches_definition(n in 0.0f64..2.0, eps in 1e-4f64..1.0) {
            let direct = smoothed_norm(n, eps) + eps / 2.0;
            prop_assert!((shifted_smoothed_norm(n, eps) - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }
}
