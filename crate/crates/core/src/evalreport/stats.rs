//! Student t test and principal-component variance ratios.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::ArrayView2;

use crate::error::{Error, Result};

/// Natural log of the gamma function (Lanczos, g = 7, 9 terms), `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the series in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for the incomplete beta function (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=500 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    inc_beta(df / 2.0, 0.5, df / (df + t * t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: usize,
    pub p: f64,
    /// Differences have zero variance, so `t` is undefined (NaN) and `p` is NaN.
    pub degenerate: bool,
    pub mean_diff: f64,
}

/// Paired two-sided t test on `a - b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Domain(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Domain("paired t test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var <= 0.0 {
        return Ok(TTest {
            t: f64::NAN,
            df,
            p: f64::NAN,
            degenerate: true,
            mean_diff: mean,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df as f64),
        degenerate: false,
        mean_diff: mean,
    })
}

/// Explained-variance ratios of the column-centered covariance, descending.
/// All-zero variance yields a vector of zeros.
pub fn pca_explained(x: ArrayView2<f64>) -> Result<Vec<f64>> {
    let (n, d) = x.dim();
    if n < 2 || d == 0 {
        return Err(Error::Domain(format!("PCA needs at least 2 rows and 1 column, got {n}x{d}")));
    }
    let means: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let centered = DMatrix::from_fn(n, d, |i, j| x[[i, j]] - means[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut vals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = vals.iter().sum();
    if total > 0.0 {
        vals.iter_mut().for_each(|v| *v /= total);
    }
    Ok(vals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, StandardNormal};
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn ln_gamma_known_values() {
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
        assert!((ln_gamma(10.0) - 362_880f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn t_test_matches_reference() {
        // d = (2, -1, 3, 0, 1): mean 1, sd sqrt(2.5), t = 1/sqrt(0.5).
        let a = [2.0, -1.0, 3.0, 0.0, 1.0];
        let r = paired_ttest(&a, &[0.0; 5]).unwrap();
        assert!((r.t - 2f64.sqrt()).abs() < 1e-12);
        let oracle = 2.0 * (1.0 - StudentsT::new(0.0, 1.0, 4.0).unwrap().cdf(2f64.sqrt()));
        assert!((r.p - oracle).abs() < 1e-8, "{} vs {oracle}", r.p);
        assert_eq!(r.df, 4);
    }

    #[test]
    fn t_test_degenerate_and_strong() {
        let a = [1.0, 2.0, 3.0];
        assert!(paired_ttest(&a, &a).unwrap().degenerate);
        let b: Vec<f64> = (0..5).map(|i| 1.0 + 1e-3 * i as f64).collect();
        let r = paired_ttest(&b, &[0.0; 5]).unwrap();
        assert!(r.p < 1e-6);
    }

    #[test]
    fn p_values_match_statrs_broadly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..300 {
            let df: f64 = rng.random_range(1..200) as f64;
            let t: f64 = rng.random_range(-8.0..8.0);
            let ours = student_t_two_sided(t, df);
            let oracle = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());
            assert!((ours - oracle).abs() < 1e-8, "t={t} df={df}: {ours} vs {oracle}");
        }
    }

    #[test]
    fn pca_rank_one_and_isotropic() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| i as f64 * (j as f64 + 1.0));
        let r = pca_explained(x.view()).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-10);
        assert!(r[1].abs() < 1e-10);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = Array2::from_shape_fn((10_000, 2), |_| StandardNormal.sample(&mut rng));
        let r = pca_explained(g.view()).unwrap();
        assert!((r[0] - 0.5).abs() < 0.02 && (r[1] - 0.5).abs() < 0.02, "{r:?}");
        assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
}
