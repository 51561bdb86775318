//! Fibre operators `H_F(x)` in a moving orthonormal basis, their eigenbands,
//! gap certificates and reduced resolvents.
//!
//! Both models are written on the trivialised fibre coordinate `z in [0, 1]`
//! with fibre size `s(x)` (strip width or circle length) and fibre measure
//! `s dz`. The basis functions are `s^{-1/2} e_k(z)`.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use ndarray_linalg::{Cholesky, Inverse, UPLO};

use crate::error::{Error, Result};
use crate::geometry::{ModelGeometry, ModelKind};
use crate::linalg::{self, gauss_legendre};

/// Gaps at or below this value are treated as crossings.
pub const GAP_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FibreBasisKind {
    /// `√2 sin(kπz)`, `k = 1..n_z`, vanishing at both walls.
    Sine,
    /// `1, √2 cos(2πmz), √2 sin(2πmz)`, ordered by `m`.
    Fourier,
    /// Orthonormal polynomials vanishing at both walls that diagonalise
    /// `-d^2/dz^2` on their span. Spectrally accurate when the walls are
    /// curved, where the sine basis only converges algebraically.
    Legendre,
}

impl FibreBasisKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sine" => Some(FibreBasisKind::Sine),
            "fourier" => Some(FibreBasisKind::Fourier),
            "legendre" => Some(FibreBasisKind::Legendre),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FibreBasisKind::Sine => "sine",
            FibreBasisKind::Fourier => "fourier",
            FibreBasisKind::Legendre => "legendre",
        }
    }
}

/// `e_k = sum_j coeff[j, k] φ_j` with `φ_j(z) = L_j(2z-1) - L_{j+2}(2z-1)`.
#[derive(Debug)]
struct LegendreTable {
    coeff: Array2<f64>,
    kinetic: Array1<f64>,
}

impl LegendreTable {
    fn new(n: usize) -> Result<Self> {
        let mut mass = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let jf = j as f64;
            mass[[j, j]] = 1.0 / (2.0 * jf + 1.0) + 1.0 / (2.0 * jf + 5.0);
            if j + 2 < n {
                mass[[j, j + 2]] = -1.0 / (2.0 * jf + 5.0);
                mass[[j + 2, j]] = -1.0 / (2.0 * jf + 5.0);
            }
        }
        let chol = mass.cholesky(UPLO::Lower)?;
        let linv = chol.inv()?;
        // stiffness is diagonal: ∫ φ_j' φ_k' dz = 4 (2j + 3) δ_jk
        let mut c = Array2::<f64>::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                let mut acc = 0.0;
                for j in 0..=a.min(b) {
                    acc += linv[[a, j]] * 4.0 * (2.0 * j as f64 + 3.0) * linv[[b, j]];
                }
                c[[a, b]] = acc;
            }
        }
        let (mu, w) = linalg::eigh(&c)?;
        let mut coeff = linv.t().dot(&w);
        for k in 0..n {
            // orient like √2 sin((k+1)πz): positive slope at z = 0
            let slope: f64 = (0..n)
                .map(|j| {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    coeff[[j, k]] * 2.0 * (2.0 * j as f64 + 3.0) * sign
                })
                .sum();
            if slope < 0.0 {
                coeff.column_mut(k).mapv_inplace(|v| -v);
            }
        }
        Ok(LegendreTable { coeff, kinetic: mu })
    }

    fn eval_all(&self, z: f64) -> (Array1<f64>, Array1<f64>) {
        let n = self.coeff.nrows();
        let t = 2.0 * z - 1.0;
        let mut l = vec![0.0; n + 2];
        l[0] = 1.0;
        l[1] = t;
        for j in 1..n + 1 {
            let jf = j as f64;
            l[j + 1] = ((2.0 * jf + 1.0) * t * l[j] - jf * l[j - 1]) / (jf + 1.0);
        }
        let phi = Array1::from_shape_fn(n, |j| l[j] - l[j + 2]);
        let dphi = Array1::from_shape_fn(n, |j| -2.0 * (2.0 * j as f64 + 3.0) * l[j + 1]);
        (self.coeff.t().dot(&phi), self.coeff.t().dot(&dphi))
    }
}

#[derive(Debug, Clone)]
pub struct FibreBasis {
    pub n_z: usize,
    pub kind: FibreBasisKind,
    legendre: Option<Arc<LegendreTable>>,
}

impl PartialEq for FibreBasis {
    fn eq(&self, other: &Self) -> bool {
        self.n_z == other.n_z && self.kind == other.kind
    }
}

impl FibreBasis {
    pub fn new(kind: FibreBasisKind, n_z: usize) -> Result<Self> {
        if n_z < 8 {
            return Err(Error::TooFewModes(n_z));
        }
        let legendre = match kind {
            FibreBasisKind::Legendre => Some(Arc::new(LegendreTable::new(n_z)?)),
            _ => None,
        };
        Ok(FibreBasis { n_z, kind, legendre })
    }

    /// Sine basis on the strip, Fourier basis on the warped model.
    pub fn for_model(model: &ModelGeometry, n_z: usize) -> Result<Self> {
        let kind = match model.kind {
            ModelKind::DirichletStrip => FibreBasisKind::Sine,
            ModelKind::WarpedCircleFibre => FibreBasisKind::Fourier,
        };
        FibreBasis::new(kind, n_z)
    }

    pub fn matches(&self, kind: ModelKind) -> bool {
        matches!(
            (self.kind, kind),
            (FibreBasisKind::Sine | FibreBasisKind::Legendre, ModelKind::DirichletStrip)
                | (FibreBasisKind::Fourier, ModelKind::WarpedCircleFibre)
        )
    }

    /// Angular frequency of mode `k` in `z` for the trigonometric bases.
    fn frequency(&self, k: usize) -> f64 {
        match self.kind {
            FibreBasisKind::Sine => (k + 1) as f64 * PI,
            FibreBasisKind::Fourier => 2.0 * PI * k.div_ceil(2) as f64,
            FibreBasisKind::Legendre => self.kinetic(k).sqrt(),
        }
    }

    /// `(e_k(z), e_k'(z))`.
    pub fn eval(&self, k: usize, z: f64) -> (f64, f64) {
        let w = self.frequency(k);
        let r2 = std::f64::consts::SQRT_2;
        match self.kind {
            FibreBasisKind::Sine => (r2 * (w * z).sin(), r2 * w * (w * z).cos()),
            FibreBasisKind::Fourier if k == 0 => (1.0, 0.0),
            FibreBasisKind::Fourier if k % 2 == 1 => (r2 * (w * z).cos(), -r2 * w * (w * z).sin()),
            FibreBasisKind::Fourier => (r2 * (w * z).sin(), r2 * w * (w * z).cos()),
            FibreBasisKind::Legendre => {
                let (e, de) = self.eval_all(z);
                (e[k], de[k])
            }
        }
    }

    /// All basis functions and their derivatives at `z`.
    pub fn eval_all(&self, z: f64) -> (Array1<f64>, Array1<f64>) {
        if let Some(table) = &self.legendre {
            return table.eval_all(z);
        }
        let mut e = Array1::zeros(self.n_z);
        let mut de = Array1::zeros(self.n_z);
        for k in 0..self.n_z {
            (e[k], de[k]) = self.eval(k, z);
        }
        (e, de)
    }

    /// `∫ |e_k'|^2 dz`, the kinetic entry on a fibre of unit size.
    pub fn kinetic(&self, k: usize) -> f64 {
        match &self.legendre {
            Some(table) => table.kinetic[k],
            None => self.frequency(k).powi(2),
        }
    }

    /// `∫ e_k dz`.
    pub fn mean(&self, k: usize) -> f64 {
        match self.kind {
            FibreBasisKind::Sine => {
                let w = self.frequency(k);
                std::f64::consts::SQRT_2 * (1.0 - w.cos()) / w
            }
            FibreBasisKind::Fourier => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
            // only φ_0 has nonzero mean, and it is 1
            FibreBasisKind::Legendre => self.legendre.as_ref().expect("table").coeff[[0, k]],
        }
    }

    /// Quadrature on `[0, 1]` exact for products of two basis functions with
    /// their derivatives and a low-degree polynomial weight.
    pub fn quadrature(&self) -> (Vec<f64>, Vec<f64>) {
        match self.kind {
            FibreBasisKind::Sine | FibreBasisKind::Legendre => gauss_legendre(2 * self.n_z + 48),
            FibreBasisKind::Fourier => {
                let n = 2 * self.n_z + 8;
                ((0..n).map(|i| i as f64 / n as f64).collect(), vec![1.0 / n as f64; n])
            }
        }
    }

    /// Values of `sum_k c_k e_k` and its `z` derivative at `z`.
    pub fn synth(&self, c: ArrayView1<f64>, z: f64) -> (f64, f64) {
        let (e, de) = self.eval_all(z);
        (e.dot(&c), de.dot(&c))
    }
}

/// Model-dependent fibre matrices that do not vary along the base.
#[derive(Debug, Clone)]
pub struct FibreSystem {
    pub basis: FibreBasis,
    kinetic: Array1<f64>,
    /// Galerkin matrix of the fibre factor of the potential.
    potential: Option<Array2<f64>>,
    /// `B` with horizontal connection `A = -c B`.
    connection: Array2<f64>,
    /// `Γ` with lifted-derivative Gram matrix `G = c^2 Γ`.
    gram: Array2<f64>,
}

impl FibreSystem {
    pub fn new(model: &ModelGeometry, basis: FibreBasis) -> Result<Self> {
        if !basis.matches(model.kind) {
            return Err(Error::BasisMismatch(model.kind));
        }
        let n = basis.n_z;
        let kinetic = Array1::from_shape_fn(n, |k| basis.kinetic(k));
        let (zq, wq) = match basis.kind {
            FibreBasisKind::Sine | FibreBasisKind::Legendre => gauss_legendre(4 * n + 64),
            FibreBasisKind::Fourier => basis.quadrature(),
        };
        let mut e = Array2::zeros((zq.len(), n));
        let mut de = Array2::zeros((zq.len(), n));
        for (q, &z) in zq.iter().enumerate() {
            let (v, d) = basis.eval_all(z);
            e.row_mut(q).assign(&v);
            de.row_mut(q).assign(&d);
        }
        let weighted = |f: &dyn Fn(usize, f64) -> f64, m: &Array2<f64>| {
            let mut out = m.clone();
            for (q, &z) in zq.iter().enumerate() {
                let w = f(q, z);
                out.row_mut(q).mapv_inplace(|v| v * w);
            }
            out
        };
        let potential = if model.has_potential() {
            let ve = weighted(&|q, z| wq[q] * model.potential_fibre(z), &e);
            let mut w = e.t().dot(&ve);
            linalg::symmetrize(&mut w);
            Some(w)
        } else {
            None
        };
        let stretch = if model.kind == ModelKind::DirichletStrip { 1.0 } else { 0.0 };
        // horizontal lift of e_k / sqrt(s): -c (e_k / 2 + stretch * z e_k')
        let lifted = &e * 0.5 + &weighted(&|_, z| stretch * z, &de);
        let connection = e.t().dot(&weighted(&|q, _| wq[q], &lifted));
        let mut gram = lifted.t().dot(&weighted(&|q, _| wq[q], &lifted));
        linalg::symmetrize(&mut gram);
        Ok(FibreSystem { basis, kinetic, potential, connection, gram })
    }

    pub fn n_z(&self) -> usize {
        self.basis.n_z
    }

    /// Diagonal kinetic part `κ_k / s(x)^2`.
    pub fn kinetic_diag(&self, model: &ModelGeometry, x: f64) -> Array1<f64> {
        let s = model.fibre_size(x).v;
        self.kinetic.mapv(|k| k / (s * s))
    }

    /// `H_F(x)` in the moving basis.
    pub fn fibre_matrix(&self, model: &ModelGeometry, x: f64) -> Array2<f64> {
        let mut m = Array2::from_diag(&self.kinetic_diag(model, x));
        if let Some(w) = &self.potential {
            m.scaled_add(model.potential_base(x).v, w);
        }
        m
    }

    /// `d/dx H_F(x)` in the moving basis.
    pub fn fibre_matrix_derivative(&self, model: &ModelGeometry, x: f64) -> Array2<f64> {
        let s = model.fibre_size(x);
        let mut m = Array2::from_diag(&self.kinetic.mapv(|k| -2.0 * k * s.d1 / s.v.powi(3)));
        if let Some(w) = &self.potential {
            m.scaled_add(model.potential_base(x).d1, w);
        }
        m
    }

    /// Connection matrix `A(x)`: `X* χ_k = Σ_j A_jk χ_j + (orthogonal remainder)`.
    pub fn connection(&self, model: &ModelGeometry, x: f64) -> Array2<f64> {
        &self.connection * (-model.log_volume_derivative(x))
    }

    /// `G(x)_kl = <X* χ_k, X* χ_l>` over the whole fibre.
    pub fn connection_gram(&self, model: &ModelGeometry, x: f64) -> Array2<f64> {
        &self.gram * model.log_volume_derivative(x).powi(2)
    }

    pub fn potential_matrix(&self) -> Option<&Array2<f64>> {
        self.potential.as_ref()
    }

    /// Constant part `B` of the connection, `A(x) = -c(x) B`.
    pub fn connection_constant(&self) -> &Array2<f64> {
        &self.connection
    }

    /// Constant part `Γ` of the lifted Gram matrix.
    pub fn gram_constant(&self) -> &Array2<f64> {
        &self.gram
    }
}

/// `H_F(x)` for a single point; builds the fibre system on the fly.
pub fn fibre_matrix(model: &ModelGeometry, x: f64, basis: FibreBasis) -> Result<Array2<f64>> {
    Ok(FibreSystem::new(model, basis)?.fibre_matrix(model, x))
}

/// Eigenband of the fibre operator sampled on the base grid.
#[derive(Debug, Clone)]
pub struct FibreBand {
    pub band: usize,
    pub basis: FibreBasis,
    pub nodes: Vec<f64>,
    /// `λ_k(x_i)`.
    pub values: Array1<f64>,
    /// Coefficients of `φ_k(x_i)`, one row per node.
    pub vectors: Array2<f64>,
    /// Exact `x` derivative of the coefficient rows.
    pub derivatives: Array2<f64>,
    /// Whole fibre spectrum per node, ascending.
    pub levels: Array2<f64>,
    /// Fibre eigenvectors per node, as columns.
    eigvecs: Vec<Array2<f64>>,
    /// Distance from `λ_k(x_i)` to the rest of the fibre spectrum.
    pub gap: Array1<f64>,
    pub delta: f64,
    /// `min_x λ_0`.
    pub lambda0_min: f64,
    /// `min_x λ_1`.
    pub lambda1_min: f64,
    pub normalized: bool,
}

impl FibreBand {
    pub fn n_x(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_z(&self) -> usize {
        self.basis.n_z
    }

    /// `R_F(λ_k)` at node `i` in the computational basis.
    pub fn reduced_resolvent_at(&self, i: usize) -> Result<Array2<f64>> {
        if self.gap[i] <= GAP_THRESHOLD {
            return Err(Error::GapFailure { x: self.nodes[i], gap: self.gap[i] });
        }
        let u = &self.eigvecs[i];
        let lam = self.levels[[i, self.band]];
        let n = u.ncols();
        let mut scaled = u.clone();
        for j in 0..n {
            let f = if j == self.band { 0.0 } else { 1.0 / (self.levels[[i, j]] - lam) };
            scaled.column_mut(j).mapv_inplace(|v| v * f);
        }
        let mut r = scaled.dot(&u.t());
        linalg::symmetrize(&mut r);
        Ok(r)
    }

    /// Rank-one projector onto `φ_k(x_i)`.
    pub fn projector_at(&self, i: usize) -> Array2<f64> {
        let v = self.vectors.row(i);
        let col = v.insert_axis(ndarray::Axis(1));
        col.dot(&col.t())
    }

    /// Values of `φ_k(x_i, z)` at the given fibre points, in physical normalisation.
    pub fn sample(&self, model: &ModelGeometry, i: usize, z: &[f64]) -> Vec<f64> {
        let s = model.fibre_size(self.nodes[i]).v;
        z.iter().map(|&z| self.basis.synth(self.vectors.row(i), z).0 / s.sqrt()).collect()
    }
}

/// Per-node eigen-decomposition with sign tracking.
pub fn solve_band(model: &ModelGeometry, band: usize, basis: FibreBasis) -> Result<FibreBand> {
    let sys = FibreSystem::new(model, basis)?;
    solve_band_with(model, band, &sys)
}

pub fn solve_band_with(model: &ModelGeometry, band: usize, sys: &FibreSystem) -> Result<FibreBand> {
    let n_z = sys.n_z();
    if band + 1 >= n_z {
        return Err(Error::TooFewModes(n_z));
    }
    let nodes = model.base.nodes();
    let n_x = nodes.len();
    let mut levels = Array2::zeros((n_x, n_z));
    let mut eigvecs: Vec<Array2<f64>> = Vec::with_capacity(n_x);
    for (i, &x) in nodes.iter().enumerate() {
        let (vals, mut vecs) = linalg::eigh(&sys.fibre_matrix(model, x))
            .map_err(|e| Error::NonConvergence(format!("fibre eigensolve at x = {x}: {e}")))?;
        for j in 0..n_z {
            let flip = if i == 0 {
                seed_sign(&sys.basis, vecs.column(j), j == 0)
                    .ok_or(Error::DegenerateNormalization { band: j, x })?
            } else {
                vecs.column(j).dot(&eigvecs[i - 1].column(j)) < 0.0
            };
            if flip {
                vecs.column_mut(j).mapv_inplace(|v| -v);
            }
        }
        levels.row_mut(i).assign(&vals);
        eigvecs.push(vecs);
    }
    let mut vectors = Array2::zeros((n_x, n_z));
    let mut values = Array1::zeros(n_x);
    let mut gap = Array1::zeros(n_x);
    for i in 0..n_x {
        vectors.row_mut(i).assign(&eigvecs[i].column(band));
        values[i] = levels[[i, band]];
        let lam = values[i];
        gap[i] = (0..n_z)
            .filter(|&j| j != band)
            .map(|j| (levels[[i, j]] - lam).abs())
            .fold(f64::INFINITY, f64::min);
    }
    if band == 0 {
        for (i, &x) in nodes.iter().enumerate() {
            if mean_of(&sys.basis, vectors.row(i)) <= 0.0 {
                return Err(Error::DegenerateNormalization { band, x });
            }
        }
    }
    let lambda0_min = levels.column(0).fold(f64::INFINITY, |m, v| m.min(*v));
    let lambda1_min = levels.column(1).fold(f64::INFINITY, |m, v| m.min(*v));
    let delta = gap.fold(f64::INFINITY, |m, v| m.min(*v));
    let mut out = FibreBand {
        band,
        basis: sys.basis.clone(),
        nodes,
        values,
        derivatives: Array2::zeros((n_x, n_z)),
        vectors,
        levels,
        eigvecs,
        gap,
        delta,
        lambda0_min,
        lambda1_min,
        normalized: band == 0,
    };
    for i in 0..n_x {
        if out.gap[i] <= GAP_THRESHOLD {
            continue;
        }
        let r = out.reduced_resolvent_at(i)?;
        let dm = sys.fibre_matrix_derivative(model, out.nodes[i]);
        let d = -r.dot(&dm.dot(&out.vectors.row(i)));
        out.derivatives.row_mut(i).assign(&d);
    }
    Ok(out)
}

fn mean_of(basis: &FibreBasis, v: ArrayView1<f64>) -> f64 {
    (0..basis.n_z).map(|k| v[k] * basis.mean(k)).sum()
}

/// Whether to flip the sign of a fibre eigenvector at the first node.
/// `None` when the rule cannot decide.
fn seed_sign(basis: &FibreBasis, v: ArrayView1<f64>, ground: bool) -> Option<bool> {
    let norm = v.dot(&v).sqrt();
    if ground {
        let m = mean_of(basis, v);
        if m.abs() < 1e-12 * norm {
            return None;
        }
        return Some(m < 0.0);
    }
    let big = v.iter().fold(0.0f64, |b, &c| if c.abs() > b.abs() { c } else { b });
    Some(big < 0.0)
}

/// Gap data of a solved band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapCertificate {
    pub delta: f64,
    /// Node where the gap is smallest.
    pub x_min: f64,
    pub lambda0_min: f64,
    pub lambda1_min: f64,
}

pub fn check_gap(band: &FibreBand) -> Result<GapCertificate> {
    check_gap_levels(&band.nodes, &band.levels, band.band)
}

/// Gap certificate from per-node fibre levels (rows: nodes, ascending columns).
pub fn check_gap_levels(nodes: &[f64], levels: &Array2<f64>, band: usize) -> Result<GapCertificate> {
    let mut delta = f64::INFINITY;
    let mut x_min = nodes[0];
    for (i, &x) in nodes.iter().enumerate() {
        let lam = levels[[i, band]];
        let g = (0..levels.ncols())
            .filter(|&j| j != band)
            .map(|j| (levels[[i, j]] - lam).abs())
            .fold(f64::INFINITY, f64::min);
        if g < delta {
            delta = g;
            x_min = x;
        }
    }
    if delta <= GAP_THRESHOLD {
        return Err(Error::GapFailure { x: x_min, gap: delta });
    }
    let col_min = |j: usize| levels.column(j).fold(f64::INFINITY, |m, v| m.min(*v));
    Ok(GapCertificate { delta, x_min, lambda0_min: col_min(0), lambda1_min: col_min(1) })
}

/// `R_F(λ_k)` at an arbitrary base point.
pub fn reduced_resolvent(
    model: &ModelGeometry,
    x: f64,
    band: usize,
    basis: FibreBasis,
) -> Result<Array2<f64>> {
    let m = fibre_matrix(model, x, basis)?;
    let (vals, vecs) = linalg::eigh(&m)?;
    let lam = vals[band];
    let gap = (0..vals.len())
        .filter(|&j| j != band)
        .map(|j| (vals[j] - lam).abs())
        .fold(f64::INFINITY, f64::min);
    if gap <= GAP_THRESHOLD {
        return Err(Error::GapFailure { x, gap });
    }
    let mut scaled = vecs.clone();
    for j in 0..vals.len() {
        let f = if j == band { 0.0 } else { 1.0 / (vals[j] - lam) };
        scaled.column_mut(j).mapv_inplace(|v| v * f);
    }
    let mut r = scaled.dot(&vecs.t());
    linalg::symmetrize(&mut r);
    Ok(r)
}
