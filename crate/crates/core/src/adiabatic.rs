//! Berry one-form, adiabatic potential, projected perturbation and the
//! adiabatic operator on the base grid.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::fibre::FibreBand;
use crate::geometry::{ModelGeometry, ModelKind};
use crate::linalg::{self, fourier_d1, fourier_neg_d2};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BerryRoute {
    GeneralQuadrature,
    ClosedFibreFormula,
}

#[derive(Debug, Clone)]
pub struct BerryData {
    /// Coefficient of the Berry one-form on `d/dx`, per node.
    pub omega: Array1<f64>,
    /// Adiabatic (Born-Huang) potential per node.
    pub va: Array1<f64>,
    /// `∫ |X* φ0|^2` over the fibre, per node.
    pub gradient_energy: Array1<f64>,
    pub route: BerryRoute,
}

/// Fibre quadrature of `φ0` and its horizontal lift at one node.
struct LiftSamples {
    /// Weights already multiplied by the fibre size.
    weights: Vec<f64>,
    phi: Vec<f64>,
    lifted: Vec<f64>,
    density: f64,
}

fn lift_samples(model: &ModelGeometry, band: &FibreBand, i: usize) -> LiftSamples {
    let basis = &band.basis;
    let (zq, wq) = basis.quadrature();
    let x = band.nodes[i];
    let s = model.fibre_size(x).v;
    let c = model.log_volume_derivative(x);
    let stretch = if model.kind == ModelKind::DirichletStrip { 1.0 } else { 0.0 };
    let v = band.vectors.row(i);
    let dv = band.derivatives.row(i);
    let root = s.sqrt();
    let mut phi = Vec::with_capacity(zq.len());
    let mut lifted = Vec::with_capacity(zq.len());
    for &z in &zq {
        let (f, df) = basis.synth(v, z);
        let (g, _) = basis.synth(dv, z);
        phi.push(f / root);
        lifted.push((g - c * (0.5 * f + stretch * z * df)) / root);
    }
    LiftSamples {
        weights: wq.iter().map(|w| w * s).collect(),
        phi,
        lifted,
        density: model.density_log_derivative(x),
    }
}

/// `ω^B = -½ ∫ |φ0|^2 (L_X vol / vol)` by fibre quadrature.
pub fn berry_one_form(band: &FibreBand, model: &ModelGeometry) -> Array1<f64> {
    Array1::from_shape_fn(band.n_x(), |i| {
        let q = lift_samples(model, band, i);
        -0.5 * q.weights.iter().zip(&q.phi).map(|(w, p)| w * p * p * q.density).sum::<f64>()
    })
}

/// `<φ0, X* φ0>` by fibre quadrature; equals [`berry_one_form`] for a real band.
pub fn berry_one_form_direct(band: &FibreBand, model: &ModelGeometry) -> Array1<f64> {
    Array1::from_shape_fn(band.n_x(), |i| {
        let q = lift_samples(model, band, i);
        q.weights.iter().zip(q.phi.iter().zip(&q.lifted)).map(|(w, (p, l))| w * p * l).sum()
    })
}

/// `∫ |X* φ0|^2` by fibre quadrature.
pub fn gradient_energy(band: &FibreBand, model: &ModelGeometry) -> Array1<f64> {
    Array1::from_shape_fn(band.n_x(), |i| {
        let q = lift_samples(model, band, i);
        q.weights.iter().zip(&q.lifted).map(|(w, l)| w * l * l).sum()
    })
}

/// `V_a = -(ω^B)' + ∫ |X* φ0|^2` with the derivative taken spectrally.
pub fn adiabatic_potential_general(band: &FibreBand, model: &ModelGeometry) -> BerryData {
    let omega = berry_one_form(band, model);
    let g = gradient_energy(band, model);
    let domega = linalg::spectral_derivative(omega.view(), model.base.length);
    BerryData { va: &g - &domega, omega, gradient_energy: g, route: BerryRoute::GeneralQuadrature }
}

/// Closed-fibre formula `½ (log l)'' + ¼ ((log l)')^2`, evaluated from the profile.
pub fn adiabatic_potential_closed(model: &ModelGeometry) -> Result<Array1<f64>> {
    if model.kind != ModelKind::WarpedCircleFibre {
        return Err(Error::UnsupportedKind { op: "adiabatic_potential_closed", kind: model.kind });
    }
    Ok(Array1::from_iter(model.base.nodes().into_iter().map(|x| {
        0.5 * model.log_volume_second_derivative(x) + 0.25 * model.log_volume_derivative(x).powi(2)
    })))
}

/// Berry data on the model's preferred route: fibre quadrature for the strip,
/// the closed-fibre formula for the warped model.
pub fn adiabatic_potential(band: &FibreBand, model: &ModelGeometry) -> Result<BerryData> {
    let general = adiabatic_potential_general(band, model);
    match model.kind {
        ModelKind::DirichletStrip => Ok(general),
        ModelKind::WarpedCircleFibre => {
            let omega = Array1::from_iter(
                band.nodes.iter().map(|&x| -0.5 * model.log_volume_derivative(x)),
            );
            Ok(BerryData {
                omega,
                va: adiabatic_potential_closed(model)?,
                gradient_energy: general.gradient_energy,
                route: BerryRoute::ClosedFibreFormula,
            })
        }
    }
}

/// `-d_x (s d_x)` on the grid: the mean of `s` multiplies the Fourier
/// `-d^2`, the rest goes through `D^T diag(s - mean) D`.
pub fn weighted_laplacian(s: ArrayView1<f64>, length: f64) -> Array2<f64> {
    let n = s.len();
    let mean = s.mean().unwrap_or(0.0);
    let mut out = fourier_neg_d2(n, length) * mean;
    if s.iter().any(|v| (v - mean).abs() > 0.0) {
        let d = fourier_d1(n, length);
        let mut sd = d.clone();
        for (i, mut row) in sd.rows_mut().into_iter().enumerate() {
            row *= s[i] - mean;
        }
        out += &d.t().dot(&sd);
    }
    linalg::symmetrize(&mut out);
    out
}

/// `P0 H1 P0` in the basis `b_i ⊗ φ0(x_i)`:
/// `eps^2 [-d_x s d_x + s ∫|X*φ0|^2 - (s ω^B)'] + eps v`.
pub fn project_h1(model: &ModelGeometry, band: &FibreBand) -> Result<Array2<f64>> {
    let n = band.n_x();
    if model.base.n_x != n {
        return Err(Error::GridMismatch(format!("band has {n} nodes, model {}", model.base.n_x)));
    }
    if !model.has_h1() {
        return Ok(Array2::zeros((n, n)));
    }
    let eps = model.eps;
    let s = Array1::from_iter(band.nodes.iter().map(|&x| model.h1_s(x)));
    let v = Array1::from_iter(band.nodes.iter().map(|&x| model.h1_v(x)));
    let omega = berry_one_form_direct(band, model);
    let g = gradient_energy(band, model);
    let s_omega_prime = linalg::spectral_derivative((&s * &omega).view(), model.base.length);
    let diag = &(&s * &g) - &s_omega_prime;
    let mut out = weighted_laplacian(s.view(), model.base.length) * (eps * eps);
    for i in 0..n {
        out[[i, i]] += eps * eps * diag[i] + eps * v[i];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectiveOrder {
    Adiabatic,
    AdiabaticWithM,
    Superadiabatic,
}

#[derive(Debug, Clone)]
pub struct EffectiveOperator {
    pub matrix: Array2<f64>,
    pub order: EffectiveOrder,
    pub eps: f64,
    /// Energy subtracted from the diagonal, if any.
    pub shift: Option<f64>,
}

impl EffectiveOperator {
    pub fn eigenvalues(&self) -> Result<Array1<f64>> {
        Ok(linalg::eigh(&self.matrix)?.0)
    }

    pub fn eigh(&self) -> Result<(Array1<f64>, Array2<f64>)> {
        linalg::eigh(&self.matrix)
    }

    /// Remove a constant from the diagonal and record it.
    pub fn shifted(mut self, lambda0: f64) -> Self {
        let total = self.shift.unwrap_or(0.0) + lambda0;
        for i in 0..self.matrix.nrows() {
            self.matrix[[i, i]] -= lambda0;
        }
        self.shift = Some(total);
        self
    }
}

/// `H_a = eps^2 (-Δ_B) + λ0 + eps P0 H1 P0 + eps^2 V_a`, optionally `+ M`.
pub fn assemble_adiabatic(
    model: &ModelGeometry,
    band: &FibreBand,
    berry: &BerryData,
    h1_proj: Option<&Array2<f64>>,
    correction: Option<&Array2<f64>>,
) -> Result<EffectiveOperator> {
    let n = band.n_x();
    let check = |what: &str, len: usize| {
        if len != n {
            Err(Error::GridMismatch(format!("{what} has size {len}, grid has {n}")))
        } else {
            Ok(())
        }
    };
    check("model grid", model.base.n_x)?;
    check("adiabatic potential", berry.va.len())?;
    let eps = model.eps;
    let mut h = fourier_neg_d2(n, model.base.length) * (eps * eps);
    for i in 0..n {
        h[[i, i]] += band.values[i] + eps * eps * berry.va[i];
    }
    if let Some(p) = h1_proj {
        check("projected perturbation", p.nrows())?;
        h.scaled_add(eps, p);
    }
    let order = match correction {
        Some(m) => {
            check("correction", m.nrows())?;
            h += m;
            EffectiveOrder::AdiabaticWithM
        }
        None => EffectiveOrder::Adiabatic,
    };
    linalg::symmetrize(&mut h);
    Ok(EffectiveOperator { matrix: h, order, eps, shift: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fibre::{solve_band, FibreBasis};
    use crate::geometry::{build_strip_model, build_warped_model, BaseCircle, H1Spec, Profile};
    use std::f64::consts::PI;

    fn strip(h: &str, n_x: usize, eps: f64, h1: Option<H1Spec>) -> ModelGeometry {
        build_strip_model(&Profile::parse(h).unwrap(), BaseCircle::standard(n_x).unwrap(), eps, None, h1)
            .unwrap()
    }

    fn warped(l: &str, n_x: usize) -> ModelGeometry {
        build_warped_model(&Profile::parse(l).unwrap(), BaseCircle::standard(n_x).unwrap(), 0.1, None)
            .unwrap()
    }

    fn band(m: &ModelGeometry, n_z: usize) -> FibreBand {
        solve_band(m, 0, FibreBasis::for_model(m, n_z).unwrap()).unwrap()
    }

    fn max_abs1(a: &Array1<f64>) -> f64 {
        a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    #[test]
    fn strip_berry_form_vanishes() {
        let m = strip("0.25 + 0.1*cos(x)", 32, 0.1, None);
        let b = band(&m, 16);
        assert!(max_abs1(&berry_one_form(&b, &m)) == 0.0);
        assert!(max_abs1(&berry_one_form_direct(&b, &m)) < 1e-13);
    }

    #[test]
    fn warped_berry_form() {
        let m = warped("2*pi*exp(0.1*sin(x))", 32);
        let b = band(&m, 9);
        let w = berry_one_form(&b, &m);
        let direct = berry_one_form_direct(&b, &m);
        for (i, &x) in b.nodes.iter().enumerate() {
            assert!((w[i] + 0.05 * x.cos()).abs() < 1e-14);
            assert!((direct[i] + 0.05 * x.cos()).abs() < 1e-14);
        }
        let flat = warped("2*pi", 32);
        assert!(max_abs1(&berry_one_form(&band(&flat, 9), &flat)) == 0.0);
    }

    #[test]
    fn flat_strip_potential_vanishes() {
        let m = strip("0", 32, 0.1, None);
        let d = adiabatic_potential(&band(&m, 16), &m).unwrap();
        assert_eq!(max_abs1(&d.va), 0.0);
    }

    #[test]
    fn strip_potential_closed_form() {
        // Oracle: Simpson on [0, a] of (d/da √(2/a) sin(πy/a))^2 times a'^2
        let m = strip("0.25 + 0.1*cos(x)", 64, 0.1, None);
        let d = adiabatic_potential(&band(&m, 24), &m).unwrap();
        for (i, &x) in m.base.nodes().iter().enumerate() {
            let a = 1.25 + 0.1 * x.cos();
            let da = -0.1 * x.sin();
            let n = 4000;
            let h = a / n as f64;
            let dphi = |y: f64| {
                let t = PI * y / a;
                -0.5 * (2.0f64).sqrt() * a.powf(-1.5) * t.sin() - (2.0 / a).sqrt() * t.cos() * t / a
            };
            let oracle: f64 = (0..=n)
                .map(|k| {
                    let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
                    w * dphi(k as f64 * h).powi(2)
                })
                .sum::<f64>()
                * h
                / 3.0
                * da
                * da;
            let closed = (PI * PI / 3.0 + 0.25) * (da / a).powi(2);
            assert!((oracle - closed).abs() < 1e-10);
            assert!((d.va[i] - closed).abs() < 1e-12);
            assert!(d.va[i] >= 0.0);
        }
    }

    #[test]
    fn warped_routes_agree() {
        let m = warped("2*pi*(1 + 0.2*cos(x))", 128);
        let b = band(&m, 9);
        let closed = adiabatic_potential(&b, &m).unwrap();
        assert_eq!(closed.route, BerryRoute::ClosedFibreFormula);
        let general = adiabatic_potential_general(&b, &m);
        assert!(max_abs1(&(&closed.va - &general.va)) < 1e-10);
    }

    #[test]
    fn flat_band_collapse() {
        let eps = 0.1;
        let m = strip("0", 32, eps, None);
        let b = band(&m, 16);
        let berry = adiabatic_potential(&b, &m).unwrap();
        let ha = assemble_adiabatic(&m, &b, &berry, None, None).unwrap();
        let expect = fourier_neg_d2(32, 2.0 * PI) * (eps * eps) + Array2::<f64>::eye(32) * (PI * PI);
        assert!((&ha.matrix - &expect).iter().all(|v| v.abs() < 1e-12));
        let e = ha.eigenvalues().unwrap();
        let mut expected: Vec<f64> = (-15i32..=16).map(|k| PI * PI + eps * eps * (k * k) as f64).collect();
        expected.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn projected_h1_flat_is_laplacian() {
        let eps = 0.2;
        let h1 = H1Spec { s: Profile::constant(1.0), v: Profile::zero() };
        let m = strip("0", 32, eps, Some(h1));
        let p = project_h1(&m, &band(&m, 12)).unwrap();
        let expect = fourier_neg_d2(32, 2.0 * PI) * (eps * eps);
        assert!((&p - &expect).iter().all(|v| v.abs() < 1e-12));
        let none = strip("0", 32, eps, None);
        assert!(project_h1(&none, &band(&none, 12)).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let m = strip("0", 32, 0.1, None);
        let b = band(&m, 12);
        let berry = adiabatic_potential(&b, &m).unwrap();
        let other = m.with_n_x(64).unwrap();
        assert!(matches!(assemble_adiabatic(&other, &b, &berry, None, None), Err(Error::GridMismatch(_))));
    }
}
