//! Small dense building blocks: Fourier differentiation on the circle,
//! Gauss-Legendre rules, block-diagonal matrices and norm estimates.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use std::os::raw::{c_char, c_int};

use ndarray::ShapeBuilder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Fourier first-derivative matrix on `n` equispaced nodes of a circle of length `length`.
/// The Nyquist mode is mapped to zero, so the matrix is exactly antisymmetric.
pub fn fourier_d1(n: usize, length: f64) -> Array2<f64> {
    let h = 2.0 * PI / n as f64;
    let scale = 2.0 * PI / length;
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            return 0.0;
        }
        let k = i as isize - j as isize;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        0.5 * sign / (0.5 * k as f64 * h).tan() * scale
    })
}

/// Fourier matrix of `-d^2/dx^2`. Its eigenvalues are `(2π m / L)^2` for
/// `|m| < n/2` and `(π n / L)^2` on the Nyquist mode.
pub fn fourier_neg_d2(n: usize, length: f64) -> Array2<f64> {
    let h = 2.0 * PI / n as f64;
    let scale = (2.0 * PI / length).powi(2);
    Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            return (PI * PI / (3.0 * h * h) + 1.0 / 6.0) * scale;
        }
        let k = i as isize - j as isize;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        sign * 0.5 / (0.5 * k as f64 * h).sin().powi(2) * scale
    })
}

/// Real orthonormal eigenbasis of [`fourier_neg_d2`] with matching eigenvalues:
/// constant, then cos/sin pairs, then the Nyquist alternation.
pub fn fourier_eigenbasis(n: usize, length: f64) -> (Array2<f64>, Array1<f64>) {
    let mut basis = Array2::zeros((n, n));
    let mut eig = Array1::zeros(n);
    let scale = (2.0 * PI / length).powi(2);
    let norm = (n as f64).sqrt();
    let x: Vec<f64> = (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect();
    basis.column_mut(0).fill(1.0 / norm);
    let mut col = 1;
    for m in 1..n / 2 {
        let f = (2.0 / n as f64).sqrt();
        for i in 0..n {
            basis[[i, col]] = f * (m as f64 * x[i]).cos();
            basis[[i, col + 1]] = f * (m as f64 * x[i]).sin();
        }
        eig[col] = (m * m) as f64 * scale;
        eig[col + 1] = eig[col];
        col += 2;
    }
    for i in 0..n {
        basis[[i, col]] = if i % 2 == 0 { 1.0 } else { -1.0 } / norm;
    }
    eig[col] = ((n / 2) * (n / 2)) as f64 * scale;
    (basis, eig)
}

/// Spectral derivative of periodic samples.
pub fn spectral_derivative(values: ArrayView1<f64>, length: f64) -> Array1<f64> {
    fourier_d1(values.len(), length).dot(&values)
}

/// Gauss-Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 0 { 1.0 } else { p1 };
            dp = n as f64 * (t * p - p0) / (t * t - 1.0);
            let dt = p / dp;
            t -= dt;
            if dt.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        nodes[i] = 0.5 * (1.0 - t);
        nodes[n - 1 - i] = 0.5 * (1.0 + t);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let t = a.t().to_owned();
    *a += &t;
    *a *= 0.5;
}

/// Largest entry of `|A - A^T|`.
pub fn asymmetry(a: ArrayView2<f64>) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            m = m.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    m
}

/// Eigen-decomposition of a symmetric matrix, ascending.
pub fn eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let (w, v) = syevd(a, true)?;
    Ok((w, v.expect("vectors requested")))
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn eigvalsh(a: &Array2<f64>) -> Result<Array1<f64>> {
    Ok(syevd(a, false)?.0)
}

/// Divide-and-conquer symmetric eigensolver (LAPACK `dsyevd`).
fn syevd(a: &Array2<f64>, vectors: bool) -> Result<(Array1<f64>, Option<Array2<f64>>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Linalg(format!("eigh needs a square matrix, got {:?}", a.dim())));
    }
    if n == 0 {
        return Ok((Array1::zeros(0), vectors.then(|| Array2::zeros((0, 0)))));
    }
    // symmetric input, so the row-major buffer is also the column-major matrix
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0; n];
    let jobz = if vectors { b'V' } else { b'N' } as c_char;
    let uplo = b'L' as c_char;
    let ni = n as c_int;
    let mut info: c_int = 0;
    let mut work_q = [0.0f64];
    let mut iwork_q: [c_int; 1] = [0];
    let query: c_int = -1;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            work_q.as_mut_ptr(), &query, iwork_q.as_mut_ptr(), &query, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd workspace query failed ({info})")));
    }
    let lwork = work_q[0] as c_int;
    let liwork = iwork_q[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork: Vec<c_int> = vec![0; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz, &uplo, &ni, buf.as_mut_ptr(), &ni, w.as_mut_ptr(),
            work.as_mut_ptr(), &lwork, iwork.as_mut_ptr(), &liwork, &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd failed ({info})")));
    }
    let v = vectors.then(|| Array2::from_shape_vec((n, n).f(), buf).expect("square buffer"));
    Ok((Array1::from(w), v))
}

/// Deterministic start vector with unit norm.
pub fn seeded_vector(n: usize, seed: u64) -> Array1<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
    let norm = v.dot(&v).sqrt();
    v / norm
}

/// Extreme-eigenvalue magnitude of a symmetric operator by Lanczos with full
/// reorthogonalisation. Exact when `steps >= n`.
pub fn lanczos_norm<F>(n: usize, apply: F) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    let steps = n.min(120);
    let mut q = Array2::<f64>::zeros((n, steps));
    q.column_mut(0).assign(&seeded_vector(n, 0x5eed));
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut last = f64::NAN;
    for k in 0..steps {
        let mut w = apply(q.column(k));
        let a = w.dot(&q.column(k));
        alpha.push(a);
        for _ in 0..2 {
            let qk = q.slice(s![.., ..=k]);
            let c = qk.t().dot(&w);
            w -= &qk.dot(&c);
        }
        let b = w.dot(&w).sqrt();
        let est = tridiagonal_extreme(&alpha, &beta);
        let done = (est - last).abs() <= 1e-13 * est.max(1e-300);
        last = est;
        if k + 1 == steps || b <= 1e-14 * est.max(1e-300) || (k >= 8 && done) {
            break;
        }
        beta.push(b);
        q.column_mut(k + 1).assign(&(w / b));
    }
    last
}

fn tridiagonal_extreme(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let mut t = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        t[[i, i]] = alpha[i];
        if i + 1 < k {
            t[[i, i + 1]] = beta[i];
            t[[i + 1, i]] = beta[i];
        }
    }
    match eigvalsh(&t) {
        Ok(e) => e.iter().fold(0.0, |m: f64, v| m.max(v.abs())),
        Err(_) => f64::NAN,
    }
}

/// Spectral norm of a symmetric matrix.
pub fn sym_norm(a: ArrayView2<f64>) -> f64 {
    if a.nrows() <= 200 {
        return exact_norm(a);
    }
    lanczos_norm(a.nrows(), |v| a.dot(&v))
}

/// Spectral norm of a general matrix via its smaller Gram matrix.
pub fn norm2(a: ArrayView2<f64>) -> f64 {
    let (r, c) = a.dim();
    if r.min(c) <= 400 {
        let g = if c <= r { a.t().dot(&a) } else { a.dot(&a.t()) };
        let e = eigvalsh(&g).expect("symmetric eigensolve");
        return e.iter().fold(0.0, |m: f64, v| m.max(*v)).sqrt();
    }
    lanczos_norm(c, |v| a.t().dot(&a.dot(&v))).sqrt()
}

fn exact_norm(a: ArrayView2<f64>) -> f64 {
    let mut m = a.to_owned();
    symmetrize(&mut m);
    let e = eigvalsh(&m).expect("symmetric eigensolve");
    e.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

/// Compares a BLAS matrix product and a LAPACK solve against plain loops.
/// Some OpenBLAS builds select broken kernels on recent CPUs; setting
/// `OPENBLAS_CORETYPE` (for example to `Haswell`) avoids them.
pub fn blas_self_check() -> Result<()> {
    use ndarray_linalg::Solve;
    let n = 96;
    let a = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            4.0 + i as f64 * 0.25
        } else {
            ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5
        }
    });
    let fast = a.dot(&a);
    let mut gemm_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let slow: f64 = (0..n).map(|k| a[[i, k]] * a[[k, j]]).sum();
            gemm_err = gemm_err.max((slow - fast[[i, j]]).abs());
        }
    }
    let b = Array1::from_shape_fn(n, |i| (i as f64).sin());
    let x = a.solve(&b)?;
    let solve_err = (&a.dot(&x) - &b).fold(0.0f64, |m, v| m.max(v.abs()));
    let slow_res: f64 = (0..n)
        .map(|i| ((0..n).map(|k| a[[i, k]] * x[k]).sum::<f64>() - b[i]).abs())
        .fold(0.0, f64::max);
    if gemm_err > 1e-10 || solve_err > 1e-10 || slow_res > 1e-10 {
        return Err(crate::Error::Linalg(format!(
            "BLAS self-check failed (gemm error {gemm_err:.2e}, solve residual {slow_res:.2e}); \
             set OPENBLAS_CORETYPE=Haswell"
        )));
    }
    Ok(())
}

/// Block-diagonal matrix with square blocks of equal size.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    pub blocks: Vec<Array2<f64>>,
}

impl BlockDiag {
    pub fn block_size(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn dim(&self) -> usize {
        self.blocks.len() * self.block_size()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let b = self.block_size();
        let mut out = Array2::zeros((self.dim(), self.dim()));
        for (i, blk) in self.blocks.iter().enumerate() {
            out.slice_mut(s![i * b..(i + 1) * b, i * b..(i + 1) * b]).assign(blk);
        }
        out
    }

    /// `self * m`.
    pub fn mul_left(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let b = self.block_size();
        let mut out = Array2::zeros((self.dim(), m.ncols()));
        for (i, blk) in self.blocks.iter().enumerate() {
            let rows = s![i * b..(i + 1) * b, ..];
            out.slice_mut(rows).assign(&blk.dot(&m.slice(rows)));
        }
        out
    }

    /// `m * self`.
    pub fn mul_right(&self, m: ArrayView2<f64>) -> Array2<f64> {
        let b = self.block_size();
        let mut out = Array2::zeros((m.nrows(), self.dim()));
        for (i, blk) in self.blocks.iter().enumerate() {
            let cols = s![.., i * b..(i + 1) * b];
            out.slice_mut(cols).assign(&m.slice(cols).dot(blk));
        }
        out
    }

    pub fn apply(&self, v: ArrayView1<f64>) -> Array1<f64> {
        let b = self.block_size();
        let mut out = Array1::zeros(self.dim());
        for (i, blk) in self.blocks.iter().enumerate() {
            out.slice_mut(s![i * b..(i + 1) * b]).assign(&blk.dot(&v.slice(s![i * b..(i + 1) * b])));
        }
        out
    }

    /// `I - self`.
    pub fn complement(&self) -> BlockDiag {
        let b = self.block_size();
        BlockDiag { blocks: self.blocks.iter().map(|blk| Array2::eye(b) - blk).collect() }
    }

    pub fn trace(&self) -> f64 {
        self.blocks.iter().map(|b| b.diag().sum()).sum()
    }

    pub fn mul_block(&self, other: &BlockDiag) -> BlockDiag {
        BlockDiag { blocks: self.blocks.iter().zip(&other.blocks).map(|(a, b)| a.dot(b)).collect() }
    }
}

/// Column norms of a matrix.
pub fn column_norms(a: ArrayView2<f64>) -> Array1<f64> {
    a.map_axis(Axis(0), |c| c.dot(&c).sqrt())
}
