//! Comparison of spectra and eigenfunctions.

use ndarray::ArrayView1;

use super::{EigenPairs, FullOperator};
use crate::error::{Error, Result};

fn nearest(x: f64, set: &[f64]) -> f64 {
    set.iter().map(|y| (x - y).abs()).fold(f64::INFINITY, f64::min)
}

fn truncate(values: &[f64], cutoff: f64) -> Vec<f64> {
    values.iter().copied().filter(|&v| v <= cutoff).collect()
}

/// Hausdorff distance between the parts of two spectra at or below `cutoff`.
pub fn spectral_distance(a: &[f64], b: &[f64], cutoff: f64) -> Result<f64> {
    let at = truncate(a, cutoff);
    let bt = truncate(b, cutoff);
    if at.is_empty() || bt.is_empty() {
        return Err(Error::EmptyTruncation(cutoff));
    }
    let d1 = at.iter().map(|&x| nearest(x, &bt)).fold(0.0, f64::max);
    let d2 = bt.iter().map(|&y| nearest(y, &at)).fold(0.0, f64::max);
    Ok(d1.max(d2))
}

/// Like [`spectral_distance`], but partners are searched in the complete
/// lists, so eigenvalues close to the cutoff are not penalised for a partner
/// that sits just above it. Both lists should extend past `cutoff`.
pub fn spectral_distance_windowed(a: &[f64], b: &[f64], cutoff: f64) -> Result<f64> {
    let at = truncate(a, cutoff);
    let bt = truncate(b, cutoff);
    if at.is_empty() || bt.is_empty() {
        return Err(Error::EmptyTruncation(cutoff));
    }
    let d1 = at.iter().map(|&x| nearest(x, b)).fold(0.0, f64::max);
    let d2 = bt.iter().map(|&y| nearest(y, a)).fold(0.0, f64::max);
    Ok(d1.max(d2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    /// `(index in effective, index in full)`.
    pub pairs: Vec<(usize, usize)>,
    pub gaps: Vec<f64>,
    /// Effective eigenvalues whose nearest full eigenvalue was already taken.
    pub collisions: usize,
}

impl Pairing {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }
}

/// Pair each effective eigenvalue, in ascending order, with the nearest
/// unused full eigenvalue.
pub fn pair_greedy(full: &[f64], effective: &[f64]) -> Pairing {
    let mut order: Vec<usize> = (0..effective.len()).collect();
    order.sort_by(|&i, &j| effective[i].total_cmp(&effective[j]));
    let mut used = vec![false; full.len()];
    let mut pairs = Vec::new();
    let mut gaps = Vec::new();
    let mut collisions = 0;
    for i in order {
        let mu = effective[i];
        let best = (0..full.len()).min_by(|&a, &b| (full[a] - mu).abs().total_cmp(&(full[b] - mu).abs()));
        let free = (0..full.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| (full[a] - mu).abs().total_cmp(&(full[b] - mu).abs()));
        let Some(j) = free else { break };
        if best.is_some_and(|b| used[b]) {
            collisions += 1;
        }
        used[j] = true;
        pairs.push((i, j));
        gaps.push((full[j] - mu).abs());
    }
    Pairing { pairs, gaps, collisions }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// Index of the matched full eigenpair.
    pub matched: usize,
    pub lambda: f64,
    /// Distance from `λ` to its nearest other full eigenvalue.
    pub gap: f64,
    pub r_l2: f64,
    /// Residual in the unit-parameter `W^{1,2}` norm.
    pub r_w1: f64,
}

/// Distance of `psi` from the eigenspace of the full eigenvalue nearest `mu`.
///
/// `psi` is normalised internally. The nearest full eigenvalue must lie within
/// `min_gap / 2` of `mu` and be separated from its neighbours by `min_gap`.
pub fn eigenfunction_residual(
    psi: ArrayView1<f64>,
    mu: f64,
    full: &EigenPairs,
    op: &FullOperator,
    min_gap: f64,
) -> Result<Residuals> {
    let values = full.values.as_slice().expect("contiguous");
    let (j, dist) = values
        .iter()
        .enumerate()
        .map(|(j, v)| (j, (v - mu).abs()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::NoMatch { mu, window: min_gap / 2.0 })?;
    if dist > min_gap / 2.0 {
        return Err(Error::NoMatch { mu, window: min_gap / 2.0 });
    }
    let lambda = values[j];
    let gap = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != j)
        .map(|(_, v)| (v - lambda).abs())
        .fold(f64::INFINITY, f64::min);
    if gap < min_gap {
        return Err(Error::NearDegenerate { mu, gap, required: min_gap });
    }
    let norm = psi.dot(&psi).sqrt();
    let psi = &psi / norm;
    let u = full.vectors.column(j);
    let phi = &psi - &(&u * u.dot(&psi));
    let r_l2 = phi.dot(&phi).sqrt();
    let r_w1 = op.w1_form(phi.view()).max(0.0).sqrt();
    Ok(Residuals { matched: j, lambda, gap, r_l2, r_w1 })
}
