//! Crank-Nicolson (Cayley) propagation of `i ∂_t ψ = H ψ` for real symmetric `H`.

use ndarray::{Array1, Array2};
use ndarray_linalg::{c64, FactorizeInto, LUFactorized, Solve};

use crate::error::Result;

/// Factorised Cayley step `(1 + i dt H/2)^{-1} (1 - i dt H/2)`.
pub struct Stepper {
    h: Array2<f64>,
    dt: f64,
    lu: LUFactorized<ndarray::OwnedRepr<c64>>,
}

impl Stepper {
    pub fn new(h: &Array2<f64>, dt: f64) -> Result<Self> {
        let n = h.nrows();
        let a = Array2::from_shape_fn((n, n), |(i, j)| {
            let d = if i == j { 1.0 } else { 0.0 };
            c64::new(d, 0.5 * dt * h[[i, j]])
        });
        let lu = a.factorize_into()?;
        Ok(Stepper { h: h.clone(), dt, lu })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn step(&self, psi: &Array1<c64>) -> Result<Array1<c64>> {
        let re = psi.mapv(|z| z.re);
        let im = psi.mapv(|z| z.im);
        let hre = self.h.dot(&re);
        let him = self.h.dot(&im);
        let half = 0.5 * self.dt;
        // (1 - i dt H / 2) ψ
        let rhs = Array1::from_shape_fn(psi.len(), |k| psi[k] + c64::new(half * him[k], -half * hre[k]));
        Ok(self.lu.solve_into(rhs)?)
    }
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub state: Array1<c64>,
    pub steps: usize,
    pub dt: f64,
    /// Largest relative change of the norm over the run.
    pub norm_drift: f64,
}

fn norm(psi: &Array1<c64>) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Propagate to time `t` with steps no longer than `dt`.
pub fn propagate(h: &Array2<f64>, psi0: &Array1<c64>, t: f64, dt: f64) -> Result<Propagation> {
    let steps = ((t / dt).ceil() as usize).max(1);
    let stepper = Stepper::new(h, t / steps as f64)?;
    propagate_with(&stepper, psi0, steps)
}

/// Apply `steps` steps of a prepared stepper.
pub fn propagate_with(stepper: &Stepper, psi0: &Array1<c64>, steps: usize) -> Result<Propagation> {
    let n0 = norm(psi0);
    let mut psi = psi0.clone();
    let mut drift = 0.0f64;
    for _ in 0..steps {
        psi = stepper.step(&psi)?;
        drift = drift.max((norm(&psi) - n0).abs() / n0.max(f64::MIN_POSITIVE));
    }
    Ok(Propagation { state: psi, steps, dt: stepper.dt(), norm_drift: drift })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eigh;

    fn test_matrix(n: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                (i as f64 * 0.3).sin() + i as f64 * 0.1
            } else {
                0.05 / (1.0 + (i as f64 - j as f64).abs())
            }
        })
    }

    #[test]
    fn unitary_and_accurate() {
        let h = test_matrix(24);
        let psi0 = Array1::from_shape_fn(24, |k| c64::new((k as f64).cos(), 0.1 * k as f64));
        let t = 2.0;
        let p = propagate(&h, &psi0, t, 1e-3).unwrap();
        assert!(p.norm_drift < 1e-12);
        let (e, v) = eigh(&h).unwrap();
        let vc = v.mapv(|x| c64::new(x, 0.0));
        let coeff = vc.t().dot(&psi0);
        let evolved = Array1::from_shape_fn(24, |k| coeff[k] * c64::new(0.0, -e[k] * t).exp());
        let exact = vc.dot(&evolved);
        let err = norm(&(&p.state - &exact)) / norm(&psi0);
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn second_order_in_time() {
        let h = test_matrix(16);
        let psi0 = Array1::from_shape_fn(16, |k| c64::new(1.0 / (1.0 + k as f64), 0.0));
        let fine = propagate(&h, &psi0, 1.0, 1e-4).unwrap().state;
        let e1 = norm(&(&propagate(&h, &psi0, 1.0, 0.02).unwrap().state - &fine));
        let e2 = norm(&(&propagate(&h, &psi0, 1.0, 0.01).unwrap().state - &fine));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.2, "{ratio}");
    }
}
