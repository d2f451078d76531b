use super::DetectorError;

/// Minimum sample size on each side of a two-sample test.
pub const KS_MIN_SAMPLES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test on sorted samples.
///
/// The statistic is the largest gap between the two empirical CDFs over the
/// merged sample points; the p-value comes from the asymptotic Kolmogorov
/// distribution at `D·sqrt(n·m/(n+m))`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, DetectorError> {
    if a.len() < KS_MIN_SAMPLES || b.len() < KS_MIN_SAMPLES {
        return Err(DetectorError::TooFewSamples {
            needed: KS_MIN_SAMPLES,
            found: a.len().min(b.len()),
        });
    }
    debug_assert!(a.windows(2).all(|w| w[0] <= w[1]));
    debug_assert!(b.windows(2).all(|w| w[0] <= w[1]));

    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }

    let en = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(d * en.sqrt()),
    })
}

/// `Q(λ) = 2 Σ_{j≥1} (−1)^{j−1} exp(−2 j² λ²)`, clamped to [0, 1].
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    // Below this the series is 1 to well under 1e-10.
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=1000 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-10 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
