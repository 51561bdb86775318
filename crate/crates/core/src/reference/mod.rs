//! Full operator on the trivialised two-dimensional domain and the reference
//! computations built on it.
//!
//! Coefficient vectors are laid out node-major: entry `i * n_z + k` is the
//! coefficient of `χ_k(x_i)`. The Euclidean inner product on coefficients is
//! the `L^2` inner product up to the constant factor `Δx`.

mod dynamics;
mod eigen;
mod spectra;

pub use dynamics::{propagate, propagate_with, Propagation, Stepper};
pub use eigen::{eigenpairs_below, lowest_eigenpairs, DenseOperator, EigenOptions, EigenPairs, SymOperator};
pub use spectra::{
    eigenfunction_residual, pair_greedy, spectral_distance, spectral_distance_windowed, Pairing,
    Residuals,
};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};
use crate::fibre::{FibreBasis, FibreBasisKind, FibreSystem};
use crate::geometry::{ModelGeometry, ModelKind};
use crate::linalg::{fourier_d1, fourier_eigenbasis, fourier_neg_d2};

/// Default cap on `n_x * n_z`.
pub const DEFAULT_MAX_DIM: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FibreMeasure {
    /// `a(x) dz` on the strip.
    StripWidth,
    /// `(l(x) / 2π) dθ` on the circle.
    CircleLength,
}

/// Symmetric discretisation of `H = -eps^2 Δ_h + H_F + eps H1`, stored as
/// structured factors and applied matrix-free.
#[derive(Debug, Clone)]
pub struct FullOperator {
    pub kind: ModelKind,
    pub eps: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub length: f64,
    pub measure: FibreMeasure,
    pub basis: FibreBasisKind,
    /// Quadratic-form terms that were assembled.
    pub provenance: Vec<&'static str>,
    neg_d2: Array2<f64>,
    d1: Array2<f64>,
    /// Coefficient of `-D2 ⊗ I`.
    base_coeff: f64,
    /// `eps^3 (s_i - mean s)` for `D^T diag(.) D ⊗ I`, when `s` varies.
    s_dev: Option<Array1<f64>>,
    /// Horizontal weights `eps^2 (1 + eps s_i)`.
    weight: Array1<f64>,
    /// `A_i = conn_scale[i] * conn_base`.
    conn_scale: Array1<f64>,
    conn_base: Array2<f64>,
    /// `w_i G_i + H_F(x_i) + eps^2 v_i`.
    blocks: Vec<Array2<f64>>,
    /// Fibre kinetic diagonals and lifted Gram matrices for the `ε = 1` norm.
    kinetic: Vec<Array1<f64>>,
    gram: Vec<Array2<f64>>,
    fourier: Array2<f64>,
    fourier_eig: Array1<f64>,
    /// Smallest fibre-block diagonal entry per mode over the base.
    kappa: Array1<f64>,
    /// Lower bound for the spectrum.
    pub lower_bound: f64,
}

impl FullOperator {
    pub fn dim(&self) -> usize {
        self.n_x * self.n_z
    }

    /// `H c`.
    pub fn apply(&self, c: ArrayView1<f64>) -> Array1<f64> {
        let cm = c.to_shape((self.n_x, self.n_z)).expect("layout");
        let mut out = Array2::zeros((self.n_x, self.n_z));
        self.apply_into(cm.view(), out.view_mut());
        out.into_shape_with_order(self.dim()).expect("layout")
    }

    /// `H X` for a block of column vectors.
    pub fn apply_block(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for (j, col) in x.axis_iter(Axis(1)).enumerate() {
            out.column_mut(j).assign(&self.apply(col));
        }
        out
    }

    fn apply_into(&self, c: ArrayView2<f64>, mut out: ArrayViewMut2<f64>) {
        out.assign(&(self.neg_d2.dot(&c) * self.base_coeff));
        let dc = self.d1.dot(&c);
        let mut flux = Array2::zeros((self.n_x, self.n_z));
        // A_i c_i, weighted
        let ac = c.dot(&self.conn_base.t());
        for i in 0..self.n_x {
            let mut row = flux.row_mut(i);
            row.assign(&ac.row(i));
            row *= self.weight[i] * self.conn_scale[i];
        }
        if let Some(sd) = &self.s_dev {
            for i in 0..self.n_x {
                flux.row_mut(i).scaled_add(sd[i], &dc.row(i));
            }
        }
        out += &self.d1.t().dot(&flux);
        // A_i^T (w_i D c)_i
        let mut wdc = dc;
        for i in 0..self.n_x {
            let mut row = wdc.row_mut(i);
            row *= self.weight[i] * self.conn_scale[i];
        }
        out += &wdc.dot(&self.conn_base);
        for i in 0..self.n_x {
            let mut row = out.row_mut(i);
            row += &self.blocks[i].dot(&c.row(i));
        }
    }

    /// Dense matrix; intended for moderate dimensions.
    pub fn to_dense(&self) -> Array2<f64> {
        let (nx, nz) = (self.n_x, self.n_z);
        let n = self.dim();
        let mut h = Array2::zeros((n, n));
        let mut base = &self.neg_d2 * self.base_coeff;
        if let Some(sd) = &self.s_dev {
            let mut sdd = self.d1.clone();
            for (i, mut row) in sdd.rows_mut().into_iter().enumerate() {
                row *= sd[i];
            }
            base += &self.d1.t().dot(&sdd);
        }
        for i in 0..nx {
            for j in 0..nx {
                let b = base[[i, j]];
                let mut blk = h.slice_mut(s![i * nz..(i + 1) * nz, j * nz..(j + 1) * nz]);
                for k in 0..nz {
                    blk[[k, k]] += b;
                }
                // D_ji w_j A_j[k, l] + A_i[l, k] w_i D_ij
                let left = self.d1[[j, i]] * self.weight[j] * self.conn_scale[j];
                let right = self.d1[[i, j]] * self.weight[i] * self.conn_scale[i];
                if left != 0.0 || right != 0.0 {
                    blk.scaled_add(left, &self.conn_base);
                    blk.scaled_add(right, &self.conn_base.t());
                }
            }
            h.slice_mut(s![i * nz..(i + 1) * nz, i * nz..(i + 1) * nz]).scaled_add(1.0, &self.blocks[i]);
        }
        crate::linalg::symmetrize(&mut h);
        h
    }

    /// `<c, (-Δ_F - Δ_h + 1) c>` with unit adiabatic parameter, without potentials.
    pub fn w1_form(&self, c: ArrayView1<f64>) -> f64 {
        let cm = c.to_shape((self.n_x, self.n_z)).expect("layout");
        let mut out = self.neg_d2.dot(&cm);
        let dc = self.d1.dot(&cm);
        let ac = cm.dot(&self.conn_base.t());
        let mut flux = ac.clone();
        for i in 0..self.n_x {
            flux.row_mut(i).mapv_inplace(|v| v * self.conn_scale[i]);
        }
        out += &self.d1.t().dot(&flux);
        let mut sdc = dc;
        for i in 0..self.n_x {
            sdc.row_mut(i).mapv_inplace(|v| v * self.conn_scale[i]);
        }
        out += &sdc.dot(&self.conn_base);
        for i in 0..self.n_x {
            let mut row = out.row_mut(i);
            row += &self.gram[i].dot(&cm.row(i));
            row += &(&self.kinetic[i] * &cm.row(i));
            row += &cm.row(i);
        }
        (&out * &cm).sum()
    }

    /// Approximate inverse of `H - shift` diagonal in (base Fourier mode, fibre mode).
    pub fn precondition(&self, r: ArrayView1<f64>, shift: f64) -> Array1<f64> {
        let rm = r.to_shape((self.n_x, self.n_z)).expect("layout");
        let mut y = self.fourier.t().dot(&rm);
        let floor = 1e-3 * (1.0 + shift.abs());
        for m in 0..self.n_x {
            for k in 0..self.n_z {
                let d = self.base_coeff * self.fourier_eig[m] + self.kappa[k] - shift;
                y[[m, k]] /= d.max(floor);
            }
        }
        self.fourier.dot(&y).into_shape_with_order(self.dim()).expect("layout")
    }

    /// Horizontal connection matrix at node `i`.
    pub fn connection(&self, i: usize) -> Array2<f64> {
        &self.conn_base * self.conn_scale[i]
    }
}

/// Assemble the full operator of a model at the given resolution.
pub fn assemble_full(model: &ModelGeometry, n_x: usize, n_z: usize) -> Result<FullOperator> {
    assemble_full_capped(model, n_x, n_z, DEFAULT_MAX_DIM)
}

pub fn assemble_full_capped(model: &ModelGeometry, n_x: usize, n_z: usize, cap: usize) -> Result<FullOperator> {
    assemble_full_in(model, n_x, &FibreBasis::for_model(model, n_z)?, cap)
}

/// Assemble in an explicit fibre basis.
pub fn assemble_full_in(model: &ModelGeometry, n_x: usize, basis: &FibreBasis, cap: usize) -> Result<FullOperator> {
    let n_z = basis.n_z;
    if n_x * n_z > cap {
        return Err(Error::DimensionCap { dim: n_x * n_z, cap });
    }
    let model = if model.base.n_x == n_x { model.clone() } else { model.with_n_x(n_x)? };
    let sys = FibreSystem::new(&model, basis.clone())?;
    let nodes = model.base.nodes();
    let eps = model.eps;
    let length = model.base.length;
    let s = Array1::from_iter(nodes.iter().map(|&x| model.h1_s(x)));
    let v = Array1::from_iter(nodes.iter().map(|&x| model.h1_v(x)));
    let s_mean = s.mean().unwrap_or(0.0);
    let varies = s.iter().any(|x| (x - s_mean).abs() > 0.0);
    let weight = s.mapv(|s| eps * eps * (1.0 + eps * s));
    let conn_scale = Array1::from_iter(nodes.iter().map(|&x| -model.log_volume_derivative(x)));
    let conn_base = sys.connection_constant().clone();
    let mut blocks = Vec::with_capacity(n_x);
    let mut kinetic = Vec::with_capacity(n_x);
    let mut gram = Vec::with_capacity(n_x);
    let mut kappa = Array1::from_elem(n_z, f64::INFINITY);
    let mut lower = f64::INFINITY;
    for (i, &x) in nodes.iter().enumerate() {
        let g = sys.connection_gram(&model, x);
        let hf = sys.fibre_matrix(&model, x);
        let mut b = &g * weight[i] + &hf;
        for k in 0..n_z {
            b[[k, k]] += eps * eps * v[i];
            kappa[k] = kappa[k].min(b[[k, k]]);
        }
        let (e, _) = crate::linalg::eigh(&hf)?;
        lower = lower.min(e[0] + eps * eps * v[i]);
        blocks.push(b);
        kinetic.push(sys.kinetic_diag(&model, x));
        gram.push(g);
    }
    let (fourier, fourier_eig) = fourier_eigenbasis(n_x, length);
    let mut provenance = vec!["eps^2 (-D2) ⊗ I", "cross D^T W A + A^T W D", "lifted Gram w G", "fibre H_F"];
    if model.has_potential() {
        provenance.push("potential V");
    }
    if model.has_h1() {
        provenance.push("eps H1");
    }
    Ok(FullOperator {
        kind: model.kind,
        eps,
        n_x,
        n_z,
        length,
        measure: match model.kind {
            ModelKind::DirichletStrip => FibreMeasure::StripWidth,
            ModelKind::WarpedCircleFibre => FibreMeasure::CircleLength,
        },
        basis: basis.kind,
        provenance,
        neg_d2: fourier_neg_d2(n_x, length),
        d1: fourier_d1(n_x, length),
        base_coeff: eps * eps * (1.0 + eps * s_mean),
        s_dev: varies.then(|| s.mapv(|s| eps * eps * eps * (s - s_mean))),
        weight,
        conn_scale,
        conn_base,
        blocks,
        kinetic,
        gram,
        fourier,
        fourier_eig,
        kappa,
        lower_bound: lower,
    })
}

impl SymOperator for FullOperator {
    fn dim(&self) -> usize {
        FullOperator::dim(self)
    }

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        FullOperator::apply(self, x)
    }

    fn precondition(&self, r: ArrayView1<f64>, shift: f64) -> Array1<f64> {
        FullOperator::precondition(self, r, shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_strip_model, build_warped_model, BaseCircle, H1Spec, Potential, Profile};
    use crate::linalg::{asymmetry, eigh, seeded_vector};
    use std::f64::consts::PI;

    fn strip(h: &str, eps: f64) -> ModelGeometry {
        build_strip_model(&Profile::parse(h).unwrap(), BaseCircle::standard(16).unwrap(), eps, None, None)
            .unwrap()
    }

    fn decorated(eps: f64) -> ModelGeometry {
        let h1 = H1Spec { s: Profile::parse("0.5 + 0.3*sin(x)").unwrap(), v: Profile::parse("cos(x)").unwrap() };
        build_strip_model(
            &Profile::parse("0.25 + 0.1*cos(x)").unwrap(),
            BaseCircle::standard(16).unwrap(),
            eps,
            Some(Potential { base: Profile::parse("1 + 0.5*sin(2*x)").unwrap(), fibre: Profile::parse("x^2").unwrap() }),
            Some(h1),
        )
        .unwrap()
    }

    #[test]
    fn dense_matches_matrix_free() {
        let m = decorated(0.3);
        let op = assemble_full(&m, 16, 10).unwrap();
        let dense = op.to_dense();
        assert!(asymmetry(dense.view()) < 1e-12);
        for seed in 0..3 {
            let x = seeded_vector(op.dim(), seed);
            let diff = &dense.dot(&x) - &op.apply(x.view());
            assert!(diff.iter().all(|v| v.abs() < 1e-10));
        }
    }

    #[test]
    fn separable_strip_spectrum() {
        let eps = 0.1;
        let op = assemble_full(&strip("0", eps), 16, 8).unwrap();
        let (e, _) = eigh(&op.to_dense()).unwrap();
        let mut expect = Vec::new();
        for k in 1..=8 {
            for m in -7i32..=8 {
                expect.push(eps * eps * (m * m) as f64 + (k as f64 * PI).powi(2));
            }
        }
        expect.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10 * b);
        }
    }

    #[test]
    fn flat_torus_spectrum() {
        let eps = 0.2;
        let m = build_warped_model(&Profile::parse("2*pi").unwrap(), BaseCircle::standard(16).unwrap(), eps, None)
            .unwrap();
        let op = assemble_full(&m, 16, 9).unwrap();
        let (e, _) = eigh(&op.to_dense()).unwrap();
        let mut expect = Vec::new();
        for j in -4i32..=4 {
            for m in -7i32..=8 {
                expect.push(eps * eps * (m * m) as f64 + (j * j) as f64);
            }
        }
        expect.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }

    #[test]
    fn legendre_basis_matches_separable_spectrum() {
        let eps = 0.1;
        let basis = FibreBasis::new(crate::fibre::FibreBasisKind::Legendre, 12).unwrap();
        let op = assemble_full_in(&strip("0", eps), 16, &basis, DEFAULT_MAX_DIM).unwrap();
        let (e, _) = eigh(&op.to_dense()).unwrap();
        let mut expect = Vec::new();
        for k in 1..=2 {
            for m in -7i32..=8 {
                expect.push(eps * eps * (m * m) as f64 + (k as f64 * PI).powi(2));
            }
        }
        expect.sort_by(f64::total_cmp);
        for (a, b) in e.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn legendre_and_sine_agree_on_curved_strip() {
        let m = strip("0.25 + 0.1*cos(x)", 0.2);
        let legendre = FibreBasis::new(crate::fibre::FibreBasisKind::Legendre, 16).unwrap();
        let (el, _) = eigh(&assemble_full_in(&m, 16, &legendre, DEFAULT_MAX_DIM).unwrap().to_dense()).unwrap();
        let (es, _) = eigh(&assemble_full(&m, 16, 96).unwrap().to_dense()).unwrap();
        // sine converges like n_z^-3 here; 96 modes leave about 1e-9
        for j in 0..5 {
            assert!((el[j] - es[j]).abs() < 1e-8, "{} vs {}", el[j], es[j]);
        }
    }

    #[test]
    fn dimension_cap() {
        let m = strip("0", 0.1);
        assert!(matches!(assemble_full_capped(&m, 16, 10, 100), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn spectrum_respects_lower_bound() {
        let op = assemble_full(&decorated(0.2), 16, 10).unwrap();
        let (e, _) = eigh(&op.to_dense()).unwrap();
        assert!(e[0] >= op.lower_bound - 1e-10);
    }

    #[test]
    fn w1_form_is_positive() {
        let op = assemble_full(&decorated(0.2), 16, 10).unwrap();
        let x = seeded_vector(op.dim(), 4);
        assert!(op.w1_form(x.view()) >= x.dot(&x));
    }
}
