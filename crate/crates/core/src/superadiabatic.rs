//! Super-adiabatic projections, the Sz.-Nagy unitary and the effective
//! matrices on the ground band.
//!
//! Every projection built here has its range inside a subspace spanned by the
//! lifted band `J` (columns `b_i ⊗ φ0(x_i)`) and a few images of the reduced
//! resolvent. They are stored as `Q S Q^T` with orthonormal `Q`, so all
//! polynomial and spectral maps act on the small matrix `S`.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use ndarray_linalg::SVD;

use crate::error::{Error, Result};
use crate::fibre::FibreBand;
use crate::linalg::{self, BlockDiag};
use crate::reference::{FullOperator, SymOperator};

/// Singular values below this are treated as rounding noise when the span of
/// a projection grows. The new directions are dimensionless.
const SPAN_TOL: f64 = 1e-13;

/// `H X` column by column.
pub fn apply_cols<O: SymOperator>(op: &O, x: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(x.raw_dim());
    for (j, col) in x.axis_iter(Axis(1)).enumerate() {
        out.column_mut(j).assign(&op.apply(col));
    }
    out
}

/// Symmetric operator `Q S Q^T` with orthonormal columns `Q`.
#[derive(Debug, Clone)]
pub struct LowRank {
    pub q: Array2<f64>,
    pub s: Array2<f64>,
}

impl LowRank {
    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn rank_bound(&self) -> usize {
        self.q.ncols()
    }

    pub fn apply_cols(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.q.dot(&self.s.dot(&self.q.t().dot(&x)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.q.dot(&self.s).dot(&self.q.t())
    }

    /// `|P^2 - P|`.
    pub fn idempotency_defect(&self) -> f64 {
        linalg::sym_norm((&self.s.dot(&self.s) - &self.s).view())
    }

    /// Number of eigenvalues above 1/2.
    pub fn rank(&self) -> Result<usize> {
        Ok(linalg::eigvalsh(&self.s)?.iter().filter(|&&v| v > 0.5).count())
    }

    /// `self` written in the coordinates of a larger orthonormal `q` whose span contains it.
    fn in_basis(&self, q: &Array2<f64>) -> Array2<f64> {
        let a = q.t().dot(&self.q);
        a.dot(&self.s).dot(&a.t())
    }
}

/// Columns `b_i ⊗ φ0(x_i)`, node-major.
pub fn lift_basis(band: &FibreBand) -> Array2<f64> {
    let (n_x, n_z) = (band.n_x(), band.n_z());
    let mut j = Array2::zeros((n_x * n_z, n_x));
    for i in 0..n_x {
        j.slice_mut(s![i * n_z..(i + 1) * n_z, i]).assign(&band.vectors.row(i));
    }
    j
}

/// Lift a base vector to the full space.
pub fn lift(band: &FibreBand, f: &Array1<f64>) -> Array1<f64> {
    let n_z = band.n_z();
    let mut out = Array1::zeros(band.n_x() * n_z);
    for i in 0..band.n_x() {
        out.slice_mut(s![i * n_z..(i + 1) * n_z]).assign(&(&band.vectors.row(i) * f[i]));
    }
    out
}

/// `P0` on the full space: the rank-one fibre projector at every node.
pub fn fibre_projector_full(band: &FibreBand) -> BlockDiag {
    BlockDiag { blocks: (0..band.n_x()).map(|i| band.projector_at(i)).collect() }
}

/// `R_F(λ0)` on the full space.
pub fn reduced_resolvent_full(band: &FibreBand) -> Result<BlockDiag> {
    Ok(BlockDiag { blocks: (0..band.n_x()).map(|i| band.reduced_resolvent_at(i)).collect::<Result<_>>()? })
}

fn check_grid(op: &FullOperator, band: &FibreBand) -> Result<()> {
    if op.n_x != band.n_x() || op.n_z != band.n_z() || op.basis != band.basis.kind {
        return Err(Error::GridMismatch(format!(
            "operator is {}x{} ({}), band is {}x{} ({})",
            op.n_x,
            op.n_z,
            op.basis.name(),
            band.n_x(),
            band.n_z(),
            band.basis.kind.name()
        )));
    }
    Ok(())
}

/// `[H, P0] = C J^T - J C^T` with `C = (1 - P0) H J`.
#[derive(Debug, Clone)]
pub struct Commutator {
    pub c: Array2<f64>,
    pub lift: Array2<f64>,
}

impl Commutator {
    /// Spectral norm; `C` is orthogonal to the range of `J`.
    pub fn norm(&self) -> f64 {
        linalg::norm2(self.c.view())
    }

    pub fn apply_cols(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.c.dot(&self.lift.t().dot(&x)) - self.lift.dot(&self.c.t().dot(&x))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        self.c.dot(&self.lift.t()) - self.lift.dot(&self.c.t())
    }
}

pub fn commutator_h_p0(op: &FullOperator, band: &FibreBand) -> Result<Commutator> {
    check_grid(op, band)?;
    let j = lift_basis(band);
    let hj = apply_cols(op, j.view());
    let c = &hj - &j.dot(&j.t().dot(&hj));
    Ok(Commutator { c, lift: j })
}

/// `[A, B]` for dense matrices.
pub fn commutator(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    a.dot(b) - b.dot(a)
}

/// Orthonormal basis of `span(q, y)` that starts with `q`.
fn extend_span(q: &Array2<f64>, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut r = y.to_owned();
    for _ in 0..2 {
        r = &r - &q.dot(&q.t().dot(&r));
    }
    let keep = |m: &Array2<f64>| -> Result<Array2<f64>> {
        let (u, sv, _) = m.svd(true, false)?;
        let u = u.expect("left vectors");
        let k = sv.iter().filter(|&&v| v > SPAN_TOL).count();
        Ok(u.slice(s![.., ..k]).to_owned())
    };
    let mut extra = keep(&r)?;
    if extra.ncols() == 0 {
        return Ok(q.clone());
    }
    // second pass restores orthogonality lost to small singular values
    extra = &extra - &q.dot(&q.t().dot(&extra));
    let extra = keep(&extra)?;
    Ok(concatenate(Axis(1), &[q.view(), extra.view()]).expect("same rows"))
}

/// The almost-projection `P^N` of the recursion, starting from `P^0 = P0`.
///
/// Each step adds `-P0 D P0 + P0⊥ D P0⊥ - R_F [H, P^N] P0 + P0 [H, P^N] R_F`
/// with `D = (P^N)^2 - P^N`.
pub fn build_pn(depth: usize, op: &FullOperator, band: &FibreBand) -> Result<LowRank> {
    check_grid(op, band)?;
    let rf = reduced_resolvent_full(band)?;
    let j = lift_basis(band);
    let hj = apply_cols(op, j.view());
    let mut p = LowRank { q: j.clone(), s: Array2::eye(band.n_x()) };
    for _ in 0..depth {
        let pj = p.apply_cols(j.view());
        let comm_j = apply_cols(op, pj.view()) - p.apply_cols(hj.view());
        let y = rf.mul_left(comm_j.view());
        let q = extend_span(&p.q, y.view())?;
        let old = p.in_basis(&q);
        let b = q.t().dot(&j);
        let c = q.t().dot(&y);
        let p0 = b.dot(&b.t());
        let perp = Array2::<f64>::eye(q.ncols()) - &p0;
        let defect = &old.dot(&old) - &old;
        let mut next = &old - &p0.dot(&defect).dot(&p0) + perp.dot(&defect).dot(&perp);
        next = next - c.dot(&b.t()) - b.dot(&c.t());
        linalg::symmetrize(&mut next);
        p = LowRank { q, s: next };
    }
    Ok(p)
}

/// Round an almost-projection to an orthogonal projection by iterating
/// `P <- 3P^2 - 2P^3`, which sends the spectrum near 1 to 1 and near 0 to 0.
pub fn round_projection(p: &LowRank) -> Result<LowRank> {
    let defect = p.idempotency_defect();
    if defect >= 0.25 {
        return Err(Error::SpectralSeparation(defect));
    }
    let mut s = p.s.clone();
    for _ in 0..200 {
        let s2 = s.dot(&s);
        if linalg::sym_norm((&s2 - &s).view()) <= 1e-14 {
            break;
        }
        s = &s2 * 3.0 - &s2.dot(&s) * 2.0;
        linalg::symmetrize(&mut s);
    }
    let out = LowRank { q: p.q.clone(), s };
    let defect = out.idempotency_defect();
    if defect > 1e-12 {
        return Err(Error::NonConvergence(format!("projection rounding stalled at {defect:.3e}")));
    }
    Ok(out)
}

/// `U = I + Q X Q^T`.
#[derive(Debug, Clone)]
pub struct NearIdentity {
    pub q: Array2<f64>,
    pub x: Array2<f64>,
}

impl NearIdentity {
    pub fn apply_cols(&self, v: ArrayView2<f64>) -> Array2<f64> {
        &v + &self.q.dot(&self.x.dot(&self.q.t().dot(&v)))
    }

    pub fn apply_t_cols(&self, v: ArrayView2<f64>) -> Array2<f64> {
        &v + &self.q.dot(&self.x.t().dot(&self.q.t().dot(&v)))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        Array2::<f64>::eye(self.q.nrows()) + self.q.dot(&self.x).dot(&self.q.t())
    }

    /// `|U^T U - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let k = self.x.nrows();
        let u = Array2::<f64>::eye(k) + &self.x;
        linalg::sym_norm((&u.t().dot(&u) - Array2::<f64>::eye(k)).view())
    }

    /// `|U - I|`.
    pub fn distance_from_identity(&self) -> f64 {
        linalg::norm2(self.x.view())
    }
}

/// Inverse square root of a symmetric positive definite matrix with spectrum
/// in `(0, 1]` by the coupled Newton-Schulz iteration.
pub fn inverse_sqrt_newton_schulz(m: &Array2<f64>) -> Result<Array2<f64>> {
    let n = m.nrows();
    let eye = Array2::<f64>::eye(n);
    let mut y = m.clone();
    let mut z = eye.clone();
    let mut settled = false;
    for _ in 0..100 {
        let t = (&eye * 3.0 - z.dot(&y)) * 0.5;
        let ny = y.dot(&t);
        let nz = t.dot(&z);
        let change = linalg::norm2((&nz - &z).view());
        y = ny;
        z = nz;
        // quadratic convergence: one more step after 1e-10 reaches rounding level
        if settled {
            linalg::symmetrize(&mut z);
            return Ok(z);
        }
        settled = change <= 1e-10;
    }
    Err(Error::NonConvergence("Newton-Schulz inverse square root".into()))
}

/// `U = (P P0 + (1 - P)(1 - P0)) (1 - (P0 - P)^2)^{-1/2}`, mapping the range
/// of `P0` onto the range of `P`. The span of `p` must contain `J`.
pub fn sz_nagy(p: &LowRank, lift: &Array2<f64>) -> Result<NearIdentity> {
    let k = p.q.ncols();
    let eye = Array2::<f64>::eye(k);
    let b = p.q.t().dot(lift);
    let p0 = b.dot(&b.t());
    let d = &p0 - &p.s;
    let dist = linalg::sym_norm(d.view());
    if dist >= 1.0 {
        return Err(Error::ProjectionDistance(dist));
    }
    let t = p.s.dot(&p0) + (&eye - &p.s).dot(&(&eye - &p0));
    let z = inverse_sqrt_newton_schulz(&(&eye - &d.dot(&d)))?;
    Ok(NearIdentity { q: p.q.clone(), x: t.dot(&z) - eye })
}

/// `M = P0 [H, P0] R_F [H, P0] P0` in the lifted basis, which equals
/// `-(HJ)^T R_F (HJ)`.
pub fn correction_m(op: &FullOperator, band: &FibreBand) -> Result<Array2<f64>> {
    check_grid(op, band)?;
    let rf = reduced_resolvent_full(band)?;
    let j = lift_basis(band);
    let hj = apply_cols(op, j.view());
    let mut m = -hj.t().dot(&rf.mul_left(hj.view()));
    linalg::symmetrize(&mut m);
    Ok(m)
}

/// `J^T H J`, the compression of `H` to the range of `P0`.
pub fn compressed_adiabatic(op: &FullOperator, band: &FibreBand) -> Result<Array2<f64>> {
    check_grid(op, band)?;
    let j = lift_basis(band);
    let mut h = j.t().dot(&apply_cols(op, j.view()));
    linalg::symmetrize(&mut h);
    Ok(h)
}

/// Everything the super-adiabatic construction produces at one `eps`.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub depth: usize,
    pub p0: BlockDiag,
    pub lift: Array2<f64>,
    pub pn: LowRank,
    pub p_eps: LowRank,
    pub unitary: NearIdentity,
    pub resolvent: BlockDiag,
}

impl ProjectionSet {
    pub fn build(op: &FullOperator, band: &FibreBand, depth: usize) -> Result<Self> {
        let pn = build_pn(depth, op, band)?;
        let p_eps = round_projection(&pn)?;
        let lift = lift_basis(band);
        let unitary = sz_nagy(&p_eps, &lift)?;
        Ok(ProjectionSet {
            depth,
            p0: fibre_projector_full(band),
            lift,
            pn,
            p_eps,
            unitary,
            resolvent: reduced_resolvent_full(band)?,
        })
    }

    /// `P U J`, the image of the lifted basis.
    pub fn transported_basis(&self) -> Array2<f64> {
        let uj = self.unitary.apply_cols(self.lift.view());
        self.p_eps.apply_cols(uj.view())
    }

    /// `|P - P0|`.
    pub fn projection_distance(&self) -> f64 {
        let b = self.p_eps.q.t().dot(&self.lift);
        linalg::sym_norm((&self.p_eps.s - &b.dot(&b.t())).view())
    }

    /// `|(1 - P) U P0|`.
    pub fn intertwining_defect(&self) -> f64 {
        let w = self.unitary.apply_cols(self.lift.view());
        linalg::norm2((&w - &self.p_eps.apply_cols(w.view())).view())
    }
}

/// `U^T P H P U` restricted to the range of `P0`, in the lifted basis.
pub fn effective_matrix(op: &FullOperator, set: &ProjectionSet) -> Result<Array2<f64>> {
    if op.dim() != set.lift.nrows() {
        return Err(Error::GridMismatch(format!("operator dimension {}, projections {}", op.dim(), set.lift.nrows())));
    }
    let w = set.transported_basis();
    let mut h = w.t().dot(&apply_cols(op, w.view()));
    linalg::symmetrize(&mut h);
    Ok(h)
}

/// `|[H, P] V|` for orthonormal columns `V`, the commutator on a spectral window.
pub fn windowed_commutator_norm(op: &FullOperator, p: &LowRank, v: ArrayView2<f64>) -> f64 {
    let pv = p.apply_cols(v);
    let hv = apply_cols(op, v);
    let c = apply_cols(op, pv.view()) - p.apply_cols(hv.view());
    linalg::norm2(c.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adiabatic::{adiabatic_potential, assemble_adiabatic};
    use crate::fibre::{solve_band, FibreBasis, FibreBasisKind};
    use crate::geometry::{build_strip_model, build_warped_model, BaseCircle, ModelGeometry, Profile};
    use crate::reference::{assemble_full_in, DEFAULT_MAX_DIM};
    use std::f64::consts::PI;

    fn setup(model: &ModelGeometry, kind: FibreBasisKind, n_z: usize) -> (FullOperator, FibreBand) {
        let basis = FibreBasis::new(kind, n_z).unwrap();
        let op = assemble_full_in(model, model.base.n_x, &basis, DEFAULT_MAX_DIM).unwrap();
        let band = solve_band(model, 0, basis).unwrap();
        (op, band)
    }

    fn strip(h: &str, n_x: usize, eps: f64) -> ModelGeometry {
        build_strip_model(&Profile::parse(h).unwrap(), BaseCircle::standard(n_x).unwrap(), eps, None, None)
            .unwrap()
    }

    fn warped(n_x: usize, eps: f64) -> ModelGeometry {
        build_warped_model(&Profile::parse("2*pi*(1 + 0.2*cos(x))").unwrap(), BaseCircle::standard(n_x).unwrap(), eps, None)
            .unwrap()
    }

    fn max_abs(a: &Array2<f64>) -> f64 {
        a.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    #[test]
    fn p0_is_a_projection_of_rank_n_x() {
        let m = strip("0.25 + 0.1*cos(x)", 16, 0.2);
        let (_, band) = setup(&m, FibreBasisKind::Legendre, 10);
        let p0 = fibre_projector_full(&band);
        let d = p0.to_dense();
        assert!(max_abs(&(&d.dot(&d) - &d)) < 1e-12);
        assert!(linalg::asymmetry(d.view()) < 1e-15);
        assert!((p0.trace() - 16.0).abs() < 1e-12);
        let f = Array1::from_shape_fn(16, |i| (i as f64).cos());
        let psi = lift(&band, &f);
        let back = p0.apply(psi.view());
        assert!((&back - &psi).iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn compression_identity_holds_for_any_matrix() {
        // P0 [A, P0] P0 = 0
        let m = strip("0.25 + 0.1*cos(x)", 16, 0.2);
        let (_, band) = setup(&m, FibreBasisKind::Sine, 8);
        let p0 = fibre_projector_full(&band).to_dense();
        let n = p0.nrows();
        let a = Array2::from_shape_fn((n, n), |(i, j)| ((i * 13 + j * 7) % 17) as f64 - 8.0);
        let c = p0.dot(&commutator(&a, &p0)).dot(&p0);
        assert!(max_abs(&c) < 1e-12 * max_abs(&a) * n as f64);
    }

    #[test]
    fn flat_strip_is_invariant() {
        let m = strip("0", 16, 0.2);
        let (op, band) = setup(&m, FibreBasisKind::Sine, 8);
        let comm = commutator_h_p0(&op, &band).unwrap();
        assert!(comm.norm() < 1e-12);
        let set = ProjectionSet::build(&op, &band, 2).unwrap();
        assert!(set.projection_distance() < 1e-12);
        assert!(set.unitary.distance_from_identity() < 1e-12);
        let mcorr = correction_m(&op, &band).unwrap();
        assert!(max_abs(&mcorr) < 1e-12);
        let heff = effective_matrix(&op, &set).unwrap();
        let expected = crate::linalg::fourier_neg_d2(16, 2.0 * PI) * 0.04 + Array2::<f64>::eye(16) * (PI * PI);
        assert!(max_abs(&(&heff - &expected)) < 1e-11);
    }

    #[test]
    fn warped_pipeline_collapses() {
        let m = warped(32, 0.1);
        let (op, band) = setup(&m, FibreBasisKind::Fourier, 9);
        assert!(commutator_h_p0(&op, &band).unwrap().norm() < 1e-12);
        for depth in 0..3 {
            let set = ProjectionSet::build(&op, &band, depth).unwrap();
            assert!(set.projection_distance() < 1e-11);
            assert!(set.unitary.distance_from_identity() < 1e-11);
        }
        assert!(max_abs(&correction_m(&op, &band).unwrap()) < 1e-11);
        let set = ProjectionSet::build(&op, &band, 1).unwrap();
        let heff = effective_matrix(&op, &set).unwrap();
        let berry = adiabatic_potential(&band, &m).unwrap();
        let ha = assemble_adiabatic(&m, &band, &berry, None, None).unwrap();
        // equal on the resolved half of the spectrum; the Nyquist mode is discretised differently
        let e1 = linalg::eigvalsh(&heff).unwrap();
        let e2 = linalg::eigvalsh(&ha.matrix).unwrap();
        for k in 0..16 {
            assert!((e1[k] - e2[k]).abs() < 1e-9, "{k}: {} {}", e1[k], e2[k]);
        }
    }

    #[test]
    fn recursion_matches_dense_formula() {
        let m = strip("0.25 + 0.1*cos(x)", 16, 0.3);
        let (op, band) = setup(&m, FibreBasisKind::Legendre, 10);
        let h = op.to_dense();
        let p0 = fibre_projector_full(&band).to_dense();
        let rf = reduced_resolvent_full(&band).unwrap().to_dense();
        let n = h.nrows();
        let perp = Array2::<f64>::eye(n) - &p0;
        let mut p = p0.clone();
        for _ in 0..2 {
            let d = &p.dot(&p) - &p;
            let c = commutator(&h, &p);
            p = &p - &p0.dot(&d).dot(&p0) + perp.dot(&d).dot(&perp) - perp.dot(&rf).dot(&c).dot(&p0)
                + p0.dot(&c).dot(&rf).dot(&perp);
        }
        let low = build_pn(2, &op, &band).unwrap();
        assert!(max_abs(&(&low.to_dense() - &p)) < 1e-12);
        // first step has no diagonal part
        let p1 = build_pn(1, &op, &band).unwrap().to_dense();
        let c0 = commutator(&h, &p0);
        let off = -perp.dot(&rf).dot(&c0).dot(&p0) + p0.dot(&c0).dot(&rf).dot(&perp);
        assert!(max_abs(&(&p1 - &p0 - &off)) < 1e-12);
    }

    #[test]
    fn projection_invariants_on_a_curved_strip() {
        let m = strip("0.25 + 0.1*cos(x)", 32, 0.2);
        let (op, band) = setup(&m, FibreBasisKind::Legendre, 12);
        let set = ProjectionSet::build(&op, &band, 1).unwrap();
        assert!(set.p_eps.idempotency_defect() <= 1e-12);
        assert_eq!(set.p_eps.rank().unwrap(), 32);
        assert!(set.unitary.orthogonality_defect() <= 1e-10);
        assert!(set.intertwining_defect() <= 1e-10);
        let dist = set.projection_distance();
        assert!(dist > 1e-4 && dist < 0.5, "{dist}");
        let u = set.unitary.to_dense();
        let w = set.transported_basis();
        assert!(max_abs(&(&w - &u.dot(&set.lift))) < 1e-12);
        let mcorr = correction_m(&op, &band).unwrap();
        assert!(linalg::eigvalsh(&mcorr).unwrap().iter().all(|&v| v <= 1e-12));
        assert!(linalg::asymmetry(effective_matrix(&op, &set).unwrap().view()) == 0.0);
    }

    #[test]
    fn rounding_fixes_projections_and_rejects_bad_input() {
        let n = 12;
        let q = Array2::<f64>::eye(n);
        let mut s0 = Array2::<f64>::zeros((n, n));
        for i in 0..4 {
            s0[[i, i]] = 1.0;
        }
        let exact = LowRank { q: q.clone(), s: s0.clone() };
        let r = round_projection(&exact).unwrap();
        assert!(max_abs(&(&r.s - &s0)) < 1e-12);
        let e = Array2::from_shape_fn((n, n), |(i, j)| ((i + j) as f64).sin());
        let e = &e / linalg::sym_norm(e.view());
        let r = round_projection(&LowRank { q: q.clone(), s: &s0 + &(&e * 1e-3) }).unwrap();
        assert!(r.idempotency_defect() <= 1e-12);
        assert_eq!(r.rank().unwrap(), 4);
        // eigenvalue x with x^2 - x = 0.3
        let mut bad = s0.clone();
        bad[[5, 5]] = 0.5 * (1.0 + 2.2f64.sqrt());
        let bad = LowRank { q, s: bad };
        assert!((bad.idempotency_defect() - 0.3).abs() < 1e-12);
        assert!(matches!(round_projection(&bad), Err(Error::SpectralSeparation(_))));
    }

    #[test]
    fn sz_nagy_is_identity_on_equal_projections() {
        let m = strip("0.25 + 0.1*cos(x)", 16, 0.2);
        let (_, band) = setup(&m, FibreBasisKind::Sine, 8);
        let j = lift_basis(&band);
        let p = LowRank { q: j.clone(), s: Array2::eye(16) };
        let u = sz_nagy(&p, &j).unwrap();
        assert!(u.distance_from_identity() < 1e-14);
    }

    #[test]
    fn newton_schulz_matches_eigen() {
        let n = 10;
        let a = Array2::from_shape_fn((n, n), |(i, j)| 0.03 * ((i * 3 + j * 3) as f64).cos());
        let m = Array2::<f64>::eye(n) - &a.dot(&a);
        let z = inverse_sqrt_newton_schulz(&m).unwrap();
        let (w, v) = linalg::eigh(&m).unwrap();
        let exact = v.dot(&Array2::from_diag(&w.mapv(|x| 1.0 / x.sqrt()))).dot(&v.t());
        assert!(max_abs(&(&z - &exact)) < 1e-13);
    }
}
