//! Lowest eigenpairs of a symmetric operator by shift-invert subspace
//! expansion with Rayleigh-Ritz on the operator itself.
//!
//! Each expansion step solves `(H - σ) z = r` by preconditioned conjugate
//! gradients for the residuals `r = Hu - θu` of the unconverged Ritz pairs.
//! The basis is kept orthonormal by repeated classical Gram-Schmidt.

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;


pub trait SymOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64>;
    fn precondition(&self, r: ArrayView1<f64>, _shift: f64) -> Array1<f64> {
        r.to_owned()
    }
}

/// Dense symmetric matrix with a Jacobi preconditioner.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    pub matrix: Array2<f64>,
}

impl SymOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.matrix.dot(&x)
    }

    fn precondition(&self, r: ArrayView1<f64>, shift: f64) -> Array1<f64> {
        let floor = 1e-3 * (1.0 + shift.abs());
        Array1::from_shape_fn(r.len(), |i| r[i] / (self.matrix[[i, i]] - shift).max(floor))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenOptions {
    /// Target residual `|Hv - λv|` for unit `v`.
    pub tol: f64,
    /// Largest accepted residual `|Hv - λv|` for unit `v`.
    pub accept: f64,
    pub max_basis: usize,
    pub block: usize,
    pub seed: u64,
    pub pcg_tol: f64,
    pub pcg_max_iter: usize,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-10,
            accept: 1e-9,
            max_basis: 900,
            block: 4,
            seed: 0,
            pcg_tol: 1e-10,
            pcg_max_iter: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Array1<f64>,
    /// Unit eigenvectors as columns.
    pub vectors: Array2<f64>,
    pub residuals: Array1<f64>,
    /// Shift used for the inner solves.
    pub shift: f64,
}

impl EigenPairs {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Eigenpairs with value at or below `cutoff`.
    pub fn below(&self, cutoff: f64) -> EigenPairs {
        let n = self.values.iter().take_while(|&&v| v <= cutoff).count();
        EigenPairs {
            values: self.values.slice(s![..n]).to_owned(),
            vectors: self.vectors.slice(s![.., ..n]).to_owned(),
            residuals: self.residuals.slice(s![..n]).to_owned(),
            shift: self.shift,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Lowest(usize),
    Below(f64),
}

/// The `m` smallest eigenpairs; `shift` must lie below the spectrum.
pub fn lowest_eigenpairs<O: SymOperator>(op: &O, m: usize, shift: f64, opts: &EigenOptions) -> Result<EigenPairs> {
    if m == 0 {
        return Err(Error::NonConvergence("at least one eigenpair must be requested".into()));
    }
    solve_with_retry(op, Target::Lowest(m), shift, opts)
}

/// All eigenpairs below `cutoff`, plus the first one above it.
pub fn eigenpairs_below<O: SymOperator>(op: &O, cutoff: f64, shift: f64, opts: &EigenOptions) -> Result<EigenPairs> {
    solve_with_retry(op, Target::Below(cutoff), shift, opts)
}

fn solve_with_retry<O: SymOperator>(op: &O, target: Target, shift: f64, opts: &EigenOptions) -> Result<EigenPairs> {
    let mut sigma = shift;
    let mut margin = 1.0f64.max(0.1 * shift.abs());
    for _ in 0..6 {
        match solve(op, target, sigma, opts) {
            Err(SolveError::Indefinite) => {
                sigma -= margin;
                margin *= 2.0;
            }
            Err(SolveError::Fatal(e)) => return Err(e),
            Ok(p) => return Ok(p),
        }
    }
    Err(Error::NonConvergence(format!("no shift below the spectrum found (last {sigma})")))
}

enum SolveError {
    Indefinite,
    Fatal(Error),
}

impl From<Error> for SolveError {
    fn from(e: Error) -> Self {
        SolveError::Fatal(e)
    }
}

/// Preconditioned CG for `(H - σ) x = b`; signals indefiniteness.
fn pcg<O: SymOperator>(op: &O, b: ArrayView1<f64>, sigma: f64, opts: &EigenOptions) -> std::result::Result<Array1<f64>, SolveError> {
    let bnorm = b.dot(&b).sqrt();
    let mut x = Array1::zeros(b.len());
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_owned();
    let mut z = op.precondition(r.view(), sigma);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for _ in 0..opts.pcg_max_iter {
        let mut ap = op.apply(p.view());
        ap.scaled_add(-sigma, &p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(SolveError::Indefinite);
        }
        let alpha = rz / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        if r.dot(&r).sqrt() <= opts.pcg_tol * bnorm {
            break;
        }
        z = op.precondition(r.view(), sigma);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + &(&p * beta);
    }
    Ok(x)
}

struct Basis {
    q: Array2<f64>,
    hq: Array2<f64>,
    t: Array2<f64>,
    k: usize,
}

impl Basis {
    fn new(n: usize, cap: usize) -> Self {
        Basis { q: Array2::zeros((n, cap)), hq: Array2::zeros((n, cap)), t: Array2::zeros((cap, cap)), k: 0 }
    }

    fn cap(&self) -> usize {
        self.q.ncols()
    }

    /// Orthogonalise `z` against the basis and append it. Returns false when
    /// nothing new remains.
    fn push<O: SymOperator>(&mut self, op: &O, mut z: Array1<f64>) -> bool {
        if self.k == self.cap() {
            return false;
        }
        let start = z.dot(&z).sqrt();
        if start == 0.0 || !start.is_finite() {
            return false;
        }
        let mut norm = start;
        for _ in 0..4 {
            let qk = self.q.slice(s![.., ..self.k]);
            let c = qk.t().dot(&z);
            z -= &qk.dot(&c);
            let after = z.dot(&z).sqrt();
            let settled = after > 0.5 * norm;
            norm = after;
            if norm <= 1e-12 * start {
                return false;
            }
            if settled {
                break;
            }
        }
        z /= norm;
        let hz = op.apply(z.view());
        let k = self.k;
        self.q.column_mut(k).assign(&z);
        self.hq.column_mut(k).assign(&hz);
        let col = self.q.slice(s![.., ..=k]).t().dot(&hz);
        for j in 0..=k {
            self.t[[j, k]] = col[j];
            self.t[[k, j]] = col[j];
        }
        self.k += 1;
        true
    }
}

struct Ritz {
    values: Array1<f64>,
    vectors: Array2<f64>,
    /// `H u_j - θ_j u_j` as columns.
    defects: Array2<f64>,
    residuals: Array1<f64>,
}

/// Rayleigh-Ritz on the first `basis.k` columns, keeping `look` pairs.
fn rayleigh_ritz(basis: &Basis, look: usize) -> Result<Ritz> {
    let k = basis.k;
    let (theta, y) = linalg::eigh(&basis.t.slice(s![..k, ..k]).to_owned())?;
    let look = look.min(k);
    let yw = y.slice(s![.., ..look]);
    let u = basis.q.slice(s![.., ..k]).dot(&yw);
    let mut defects = basis.hq.slice(s![.., ..k]).dot(&yw);
    for (j, mut col) in defects.axis_iter_mut(Axis(1)).enumerate() {
        col.scaled_add(-theta[j], &u.column(j));
    }
    let residuals = Array1::from_iter(defects.axis_iter(Axis(1)).map(|c| c.dot(&c).sqrt()));
    Ok(Ritz { values: theta, vectors: u, defects, residuals })
}

fn wanted_count(target: Target, values: &Array1<f64>) -> usize {
    let k = values.len();
    match target {
        Target::Lowest(m) => m.min(k),
        Target::Below(c) => (values.iter().filter(|&&t| t < c).count() + 1).min(k),
    }
}

/// Width below which neighbouring Ritz values count as one cluster.
const CLUSTER: f64 = 1e-6;

/// A vector inside a tight cluster cannot be pinned down much below the
/// cluster width, so clustered values only need the acceptance bound.
fn target_residual(values: &Array1<f64>, j: usize, opts: &EigenOptions) -> f64 {
    let near = |i: usize| (values[i] - values[j]).abs() < CLUSTER;
    if (j > 0 && near(j - 1)) || (j + 1 < values.len() && near(j + 1)) {
        opts.accept
    } else {
        opts.tol
    }
}

fn solve<O: SymOperator>(op: &O, target: Target, sigma: f64, opts: &EigenOptions) -> std::result::Result<EigenPairs, SolveError> {
    let n = op.dim();
    let cap = opts.max_basis.min(n);
    let block = opts.block.max(1);
    let mut basis = Basis::new(n, cap);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let random = |rng: &mut ChaCha8Rng| Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
    while basis.k < block.min(cap) {
        let v = random(&mut rng);
        let z = pcg(op, v.view(), sigma, opts)?;
        basis.push(op, z);
    }
    let finish = |ritz: &Ritz, count: usize| -> std::result::Result<EigenPairs, SolveError> {
        let worst = ritz.residuals.slice(s![..count]).fold(0.0f64, |m, v| m.max(*v));
        if worst > opts.accept {
            return Err(Error::NonConvergence(format!("residual {worst:.2e} above {:.1e}", opts.accept)).into());
        }
        Ok(EigenPairs {
            values: ritz.values.slice(s![..count]).to_owned(),
            vectors: ritz.vectors.slice(s![.., ..count]).to_owned(),
            residuals: ritz.residuals.slice(s![..count]).to_owned(),
            shift: sigma,
        })
    };
    loop {
        let k = basis.k;
        let (values, _) = linalg::eigh(&basis.t.slice(s![..k, ..k]).to_owned())?;
        let wanted = wanted_count(target, &values);
        let look = (wanted + block).min(k);
        let ritz = rayleigh_ritz(&basis, look)?;
        let enough = match target {
            Target::Lowest(m) => k >= m,
            Target::Below(_) => true,
        };
        let unconverged: Vec<usize> =
            (0..wanted).filter(|&j| ritz.residuals[j] > target_residual(&ritz.values, j, opts)).collect();
        if enough && unconverged.is_empty() {
            return finish(&ritz, wanted);
        }
        if basis.k + block > cap {
            let worst = unconverged.iter().map(|&j| ritz.residuals[j]).fold(0.0f64, f64::max);
            return Err(Error::NonConvergence(format!(
                "basis limit {cap} reached with {} unconverged (worst residual {worst:.2e})",
                unconverged.len()
            ))
            .into());
        }
        let mut picks: Vec<usize> = unconverged.iter().copied().take(block).collect();
        let mut extra = wanted;
        while picks.len() < block && extra < look {
            picks.push(extra);
            extra += 1;
        }
        let mut added = 0;
        for &j in &picks {
            // (H - σ)^{-1} r_j spans the same correction as (H - σ)^{-1} u_j
            // but keeps the inner tolerance relative to the small defect
            let z = pcg(op, ritz.defects.column(j), sigma, opts)?;
            if basis.push(op, z) {
                added += 1;
            }
        }
        if added == 0 {
            // stagnation: refresh with a random direction
            let v = random(&mut rng);
            let z = pcg(op, v.view(), sigma, opts)?;
            if !basis.push(op, z) {
                return Err(Error::NonConvergence("subspace expansion stalled".into()).into());
            }
        }
    }
}

impl EigenPairs {
    /// Column norms of `H V - V diag(λ)` recomputed from scratch.
    pub fn recompute_residuals<O: SymOperator>(&self, op: &O) -> Array1<f64> {
        Array1::from_iter(self.vectors.axis_iter(Axis(1)).zip(self.values.iter()).map(|(v, &l)| {
            let r = &op.apply(v) - &(&v * l);
            r.dot(&r).sqrt()
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_strip_model, BaseCircle, Profile};
    use crate::reference::assemble_full;
    use std::f64::consts::PI;

    fn model(h: &str, eps: f64, n_x: usize) -> crate::geometry::ModelGeometry {
        build_strip_model(&Profile::parse(h).unwrap(), BaseCircle::standard(n_x).unwrap(), eps, None, None)
            .unwrap()
    }

    #[test]
    fn separable_lowest_match_analytic() {
        let eps = 0.1;
        let op = assemble_full(&model("0", eps, 64), 64, 16).unwrap();
        let pairs = lowest_eigenpairs(&op, 20, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
        let mut expect = Vec::new();
        for k in 1..=3 {
            for m in -31i32..=32 {
                expect.push(eps * eps * (m * m) as f64 + (k as f64 * PI).powi(2));
            }
        }
        expect.sort_by(f64::total_cmp);
        for (a, b) in pairs.values.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-10 * b, "{a} vs {b}");
        }
        assert!(pairs.residuals.iter().all(|r| *r <= 1e-9));
    }

    #[test]
    fn matches_dense_solver() {
        let m = model("0.25 + 0.1*cos(x)", 0.2, 64);
        let op = assemble_full(&m, 64, 24).unwrap();
        let (dense, _) = linalg::eigh(&op.to_dense()).unwrap();
        let pairs = lowest_eigenpairs(&op, 12, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
        for j in 0..12 {
            assert!((pairs.values[j] - dense[j]).abs() < 1e-9);
        }
        let below = eigenpairs_below(&op, dense[7] + 1e-6, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
        assert_eq!(below.below(dense[7] + 1e-6).len(), 8);
        let r = pairs.recompute_residuals(&op);
        assert!(r.iter().all(|v| *v < 1e-9));
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let m = model("0.25 + 0.1*cos(x)", 0.2, 32);
        let op = assemble_full(&m, 32, 12).unwrap();
        let a = lowest_eigenpairs(&op, 5, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
        let b = lowest_eigenpairs(&op, 5, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn shift_inside_spectrum_is_recovered() {
        let m = model("0.25 + 0.1*cos(x)", 0.2, 32);
        let op = assemble_full(&m, 32, 12).unwrap();
        let (dense, _) = linalg::eigh(&op.to_dense()).unwrap();
        let pairs = lowest_eigenpairs(&op, 3, dense[1], &EigenOptions::default()).unwrap();
        assert!((pairs.values[0] - dense[0]).abs() < 1e-9);
    }

    #[test]
    fn dense_operator_works() {
        let n = 50;
        let a = Array2::from_shape_fn((n, n), |(i, j)| if i == j { i as f64 + 1.0 } else { 0.01 / (1.0 + (i + j) as f64) });
        let mut sym = a.clone();
        linalg::symmetrize(&mut sym);
        let (dense, _) = linalg::eigh(&sym).unwrap();
        let op = DenseOperator { matrix: sym };
        let pairs = lowest_eigenpairs(&op, 4, 0.0, &EigenOptions::default()).unwrap();
        for j in 0..4 {
            assert!((pairs.values[j] - dense[j]).abs() < 1e-10);
        }
    }
}
