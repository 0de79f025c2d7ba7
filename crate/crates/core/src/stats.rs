//! Two-sample Kolmogorov-Smirnov test.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Supremum distance between the two empirical CDFs.
    pub statistic: f64,
    /// Asymptotic p-value.
    pub p_value: f64,
}

pub fn ks_two_sample(sample1: &[f64], sample2: &[f64]) -> Result<KsResult> {
    if sample1.is_empty() || sample2.is_empty() {
        return Err(Error::EmptyInput("ks_two_sample needs two non-empty samples"));
    }
    if sample1.iter().chain(sample2).any(|x| x.is_nan()) {
        return Err(Error::Data("NaN in KS sample".into()));
    }
    let mut a = sample1.to_vec();
    let mut b = sample2.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    // step both ECDFs past each distinct pooled value
    while i < n1 && j < n2 {
        let x = a[i].min(b[j]);
        while i < n1 && a[i] <= x {
            i += 1;
        }
        while j < n2 && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 * n2) as f64 / (n1 + n2) as f64;
    let sq = ne.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(lambda),
    })
}

/// `P(K > lambda)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small lambda
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut sum = 0.0;
        let mut term = y;
        let y8 = y.powi(8);
        let mut k = 1i32;
        while k < 200 {
            sum += term;
            // y^((2k+1)^2) / y^((2k-1)^2) = y^(8k)
            term *= y8.powi(k);
            if term < 1e-300 {
                break;
            }
            k += 1;
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1..=100 {
            let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}
