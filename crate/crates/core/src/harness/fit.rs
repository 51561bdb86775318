//! Least-squares convergence rates on log-log data.

use crate::error::{Error, Result};

/// `log err ≈ intercept + slope · log eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute deviation of a used point from the line, in natural log units.
    pub residual: f64,
    pub used: usize,
    /// `eps` values dropped by the floor guard.
    pub excluded: Vec<f64>,
}

/// Errors at or below `10 · machine epsilon · scale` are dropped as noise.
pub fn floor(scale: f64) -> f64 {
    10.0 * f64::EPSILON * scale.abs()
}

/// Fit a power law to `(eps, err)` pairs. `scale` is the magnitude the errors
/// are measured against (an eigenvalue, a norm of `H`), used by the floor guard.
pub fn fit_rate(points: &[(f64, f64)], scale: f64) -> Result<RateFit> {
    let cut = floor(scale);
    let mut excluded = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(eps, err) in points {
        if eps > 0.0 && err.is_finite() && err > cut {
            xs.push(eps.ln());
            ys.push(err.ln());
        } else {
            excluded.push(eps);
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::TooFewPoints { usable: n });
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::TooFewPoints { usable: 1 });
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Ok(RateFit { slope, intercept, residual, used: n, excluded })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const EPS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

    #[test]
    fn exact_cubic_law() {
        let pts: Vec<_> = EPS.iter().map(|&e| (e, e * e * e)).collect();
        let f = fit_rate(&pts, 1.0).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert_eq!(f.used, 4);
    }

    #[test]
    fn constant_error_has_zero_slope() {
        let pts: Vec<_> = EPS.iter().map(|&e| (e, 0.3)).collect();
        assert!(fit_rate(&pts, 1.0).unwrap().slope.abs() < 1e-12);
    }

    #[test]
    fn floor_guard_drops_noise() {
        let pts = [(0.2, 1e-3), (0.1, 1e-4), (0.05, 1e-5), (0.025, 1e-16)];
        let f = fit_rate(&pts, 10.0).unwrap();
        assert_eq!(f.excluded, vec![0.025]);
        assert!((f.slope - 10.0f64.ln() / 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts = [(0.2, 1e-3), (0.1, 0.0), (0.05, 1e-5)];
        assert!(matches!(fit_rate(&pts, 1.0), Err(Error::TooFewPoints { usable: 2 })));
    }

    proptest! {
        #[test]
        fn recovers_any_power_law(k in -1.0f64..5.0, c in 0.01f64..100.0) {
            let pts: Vec<_> = EPS.iter().map(|&e| (e, c * e.powf(k))).collect();
            let f = fit_rate(&pts, 1e-6).unwrap();
            prop_assert!((f.slope - k).abs() < 1e-9);
            prop_assert!((f.intercept - c.ln()).abs() < 1e-8);
        }
    }
}
