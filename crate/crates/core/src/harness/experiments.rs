//! Experiment drivers. Each runs over the configured `eps` sweep and returns a
//! [`SpectralReport`] with its tables, rate fits and threshold checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2};
use ndarray_linalg::c64;

use super::config::ExperimentConfig;
use super::csv::{num, Table};
use super::fit::{fit_rate, RateFit};
use crate::adiabatic::{adiabatic_potential, assemble_adiabatic, project_h1, EffectiveOperator};
use crate::error::{Error, Result};
use crate::fibre::{check_gap, solve_band, FibreBand, GapCertificate};
use crate::geometry::ModelGeometry;
use crate::linalg::{self, eigh};
use crate::reference::{
    assemble_full_in, eigenfunction_residual, eigenpairs_below, lowest_eigenpairs, pair_greedy, propagate,
    spectral_distance_windowed, EigenPairs, FullOperator,
};
use crate::superadiabatic::{
    build_pn, correction_m, effective_matrix, lift, lift_basis, windowed_commutator_norm, ProjectionSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Bands,
    Effective,
    Full,
    Projections,
    Convergence,
    Dynamics,
    Verify,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::Bands,
        ExperimentKind::Effective,
        ExperimentKind::Full,
        ExperimentKind::Projections,
        ExperimentKind::Convergence,
        ExperimentKind::Dynamics,
        ExperimentKind::Verify,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Bands => "bands",
            ExperimentKind::Effective => "effective",
            ExperimentKind::Full => "full",
            ExperimentKind::Projections => "projections",
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::Dynamics => "dynamics",
            ExperimentKind::Verify => "verify",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn rate_bearing(self) -> bool {
        matches!(self, ExperimentKind::Projections | ExperimentKind::Convergence | ExperimentKind::Dynamics)
    }
}

/// One pass/fail line of a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub requirement: String,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct NamedFit {
    pub quantity: String,
    pub fit: RateFit,
}

/// Change of the lowest eigenvalues when the resolution is doubled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Guard {
    pub eps: f64,
    pub n_x: usize,
    pub n_z: usize,
    pub count: usize,
    pub change: f64,
    pub tol: f64,
}

impl Guard {
    pub fn passed(&self) -> bool {
        self.change < self.tol
    }
}

#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub kind: ExperimentKind,
    pub model_hash: String,
    pub n_x: usize,
    pub n_z: usize,
    pub tables: Vec<Table>,
    pub fits: Vec<NamedFit>,
    pub checks: Vec<Check>,
    pub guard: Option<Guard>,
}

impl SpectralReport {
    fn new(kind: ExperimentKind, cfg: &ExperimentConfig, hash: String) -> Self {
        SpectralReport {
            kind,
            model_hash: hash,
            n_x: cfg.numerics.n_x,
            n_z: cfg.numerics.n_z,
            tables: Vec::new(),
            fits: Vec::new(),
            checks: Vec::new(),
            guard: None,
        }
    }

    pub(super) fn new_verify(cfg: &ExperimentConfig, hash: String, n_x: usize, n_z: usize) -> Self {
        SpectralReport { n_x, n_z, ..Self::new(ExperimentKind::Verify, cfg, hash) }
    }

    pub(super) fn push_check(&mut self, name: String, value: f64, requirement: String, passed: bool) {
        self.check_value(name, value, requirement, passed);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.guard.is_none_or(|g| g.passed())
    }

    pub fn fit(&self, quantity: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.quantity == quantity).map(|f| &f.fit)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.name == name)
    }

    fn check_value(&mut self, name: impl Into<String>, value: f64, requirement: impl Into<String>, passed: bool) {
        self.checks.push(Check { name: name.into(), value, requirement: requirement.into(), passed });
    }

    fn at_most(&mut self, name: impl Into<String>, value: f64, limit: f64) {
        self.check_value(name, value, format!("<= {limit:e}"), value <= limit);
    }

    fn fit_with(&mut self, quantity: &str, points: &[(f64, f64)], scale: f64) -> Result<RateFit> {
        let fit = fit_rate(points, scale).map_err(|e| e.context(format!("fitting {quantity}")))?;
        self.fits.push(NamedFit { quantity: quantity.into(), fit: fit.clone() });
        Ok(fit)
    }

    fn slope_at_least(&mut self, quantity: &str, fit: &RateFit, min: f64) {
        self.check_value(format!("{quantity}.slope"), fit.slope, format!(">= {min}"), fit.slope >= min);
    }

    fn fits_table(&self, cfg: &ExperimentConfig) -> Table {
        let mut t = Table::new(&format!("{}_fits", self.kind.name()), &["quantity", "slope", "intercept", "residual", "used", "excluded"]);
        self.stamp(&mut t, cfg);
        for f in &self.fits {
            let ex: Vec<String> = f.fit.excluded.iter().map(|&e| num(e)).collect();
            t.push(vec![
                f.quantity.clone(),
                num(f.fit.slope),
                num(f.fit.intercept),
                num(f.fit.residual),
                f.fit.used.to_string(),
                ex.join(" "),
            ]);
        }
        t
    }

    fn stamp(&self, t: &mut Table, cfg: &ExperimentConfig) {
        let eps: Vec<String> = cfg.sweep.epsilon.iter().map(|&e| num(e)).collect();
        t.meta("model", &self.model_hash)
            .meta("kind", cfg.model.kind)
            .meta("profile", cfg.model.profile.source())
            .meta("epsilon", eps.join(" "))
            .meta("n_x", self.n_x)
            .meta("n_z", self.n_z)
            .meta("fibre_basis", cfg.numerics.fibre_basis.name())
            .meta("eig_tol", num(cfg.numerics.eigen.tol))
            .meta("eig_accept", num(cfg.numerics.eigen.accept))
            .meta("seed", cfg.numerics.eigen.seed);
        if let Some(g) = &self.guard {
            t.meta("guard", format!("eps {} doubling to {}x{} moved {} eigenvalues by {}", num(g.eps), 2 * g.n_x, 2 * g.n_z, g.count, num(g.change)));
        }
    }

    /// Human-readable summary, one check per line.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} (model {}, {}x{})", self.kind.name(), self.model_hash, self.n_x, self.n_z);
        for f in &self.fits {
            let _ = writeln!(
                out,
                "  fit {:<24} slope {:>7.3}  residual {:.3}  points {}",
                f.quantity, f.fit.slope, f.fit.residual, f.fit.used
            );
        }
        if let Some(g) = &self.guard {
            let _ = writeln!(
                out,
                "  {} guard: lowest {} eigenvalues at eps {} moved {:.2e} under doubling (limit {:.0e})",
                if g.passed() { "PASS" } else { "FAIL" },
                g.count,
                g.eps,
                g.change,
                g.tol
            );
        }
        for c in &self.checks {
            let _ = writeln!(
                out,
                "  {} {:<46} {:>12.4e}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value,
                c.requirement
            );
        }
        out
    }

    /// Write every table plus the fit table; returns the paths written.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for t in &self.tables {
            let mut t = t.clone();
            let mut stamped = Table::default();
            self.stamp(&mut stamped, cfg);
            stamped.meta.extend(t.meta);
            t.meta = stamped.meta;
            paths.push(t.write(dir)?);
        }
        if !self.fits.is_empty() {
            paths.push(self.fits_table(cfg).write(dir)?);
        }
        Ok(paths)
    }
}

/// Model, band, gap certificate and full operator at one `eps`.
pub struct Stage {
    pub eps: f64,
    pub model: ModelGeometry,
    pub band: FibreBand,
    pub gap: GapCertificate,
    pub op: FullOperator,
}

impl Stage {
    pub fn new(cfg: &ExperimentConfig, eps: f64) -> Result<Self> {
        Self::at(cfg, eps, cfg.numerics.n_x, cfg.numerics.n_z)
    }

    pub fn at(cfg: &ExperimentConfig, eps: f64, n_x: usize, n_z: usize) -> Result<Self> {
        let context = |e: Error| e.context(format!("eps = {eps}"));
        let model = cfg.build_model(eps, n_x).map_err(context)?;
        let basis = cfg.fibre_basis(n_z).map_err(context)?;
        let band = solve_band(&model, 0, basis.clone()).map_err(context)?;
        let gap = check_gap(&band).map_err(context)?;
        let cap = cfg.numerics.max_dim.max(n_x * n_z);
        let op = assemble_full_in(&model, n_x, &basis, cap).map_err(context)?;
        Ok(Stage { eps, model, band, gap, op })
    }

    pub fn cutoff(&self, cfg: &ExperimentConfig) -> f64 {
        cfg.sweep.cutoff.resolve(self.gap.lambda0_min, self.gap.lambda1_min)
    }

    /// `H_a`, or `H_a + M` when `with_m` is set.
    pub fn adiabatic(&self, with_m: bool) -> Result<EffectiveOperator> {
        let berry = adiabatic_potential(&self.band, &self.model)?;
        let h1 = project_h1(&self.model, &self.band)?;
        let h1 = self.model.has_h1().then_some(&h1);
        let m = if with_m { Some(correction_m(&self.op, &self.band)?) } else { None };
        assemble_adiabatic(&self.model, &self.band, &berry, h1, m.as_ref())
    }

    /// Eigenpairs of `H` at or below `cutoff` plus the first one above.
    pub fn window(&self, cfg: &ExperimentConfig, cutoff: f64) -> Result<EigenPairs> {
        if self.op.dim() <= cfg.numerics.dense_max_dim {
            let (values, vectors) = eigh(&self.op.to_dense())?;
            let n = (values.iter().take_while(|&&v| v <= cutoff).count() + 1).min(values.len());
            let vectors = vectors.slice(s![.., ..n]).to_owned();
            let values = values.slice(s![..n]).to_owned();
            let hv = self.op.apply_block(vectors.view());
            let residuals = Array1::from_iter((0..n).map(|j| {
                let d = &hv.column(j) - &(&vectors.column(j) * values[j]);
                d.dot(&d).sqrt()
            }));
            return Ok(EigenPairs { values, vectors, residuals, shift: f64::NAN });
        }
        eigenpairs_below(&self.op, cutoff, self.op.lower_bound - 1.0, &cfg.numerics.eigen)
            .map_err(|e| e.context(format!("eigenpairs below {cutoff} at eps = {}", self.eps)))
    }
}

/// Resolution-doubling check on the lowest eigenvalues at `eps`.
pub fn self_convergence(cfg: &ExperimentConfig, eps: f64) -> Result<Guard> {
    let (n_x, n_z) = (cfg.numerics.n_x, cfg.numerics.n_z);
    let count = cfg.numerics.guard_count;
    let lowest = |nx: usize, nz: usize| -> Result<Array1<f64>> {
        let st = Stage::at(cfg, eps, nx, nz)?;
        Ok(lowest_eigenpairs(&st.op, count, st.op.lower_bound - 1.0, &cfg.numerics.eigen)?.values)
    };
    let coarse = lowest(n_x, n_z)?;
    let fine = lowest(2 * n_x, 2 * n_z).map_err(|e| e.context("self-convergence guard"))?;
    let change = (&coarse - &fine).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(Guard { eps, n_x, n_z, count, change, tol: cfg.numerics.guard_tol })
}

/// Run one experiment. A failed self-convergence guard voids the run.
pub fn run_experiment(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<SpectralReport> {
    if kind.rate_bearing() {
        cfg.require_rate_sweep()?;
    }
    let mut report = match kind {
        ExperimentKind::Bands => bands(cfg),
        ExperimentKind::Effective => effective(cfg),
        ExperimentKind::Full => full(cfg),
        ExperimentKind::Projections => projections(cfg),
        ExperimentKind::Convergence => convergence(cfg),
        ExperimentKind::Dynamics => dynamics(cfg),
        ExperimentKind::Verify => super::verify::verify(cfg),
    }
    .map_err(|e| e.context(kind.name()))?;
    if cfg.sweep.guard && (kind == ExperimentKind::Full || kind.rate_bearing()) {
        let g = self_convergence(cfg, cfg.sweep.epsilon[0]).map_err(|e| e.context(kind.name()))?;
        report.guard = Some(g);
        if !g.passed() {
            return Err(Error::GuardViolation { change: g.change }.context(kind.name()));
        }
    }
    Ok(report)
}

fn first_stage(cfg: &ExperimentConfig) -> Result<Stage> {
    Stage::new(cfg, cfg.sweep.epsilon[0])
}

fn bands(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let st = first_stage(cfg)?;
    let mut r = SpectralReport::new(ExperimentKind::Bands, cfg, st.model.hash());
    let mut t = Table::new("bands", &["x", "lambda0", "lambda1", "delta"]);
    t.meta("Lambda0", num(st.gap.lambda0_min)).meta("Lambda1", num(st.gap.lambda1_min)).meta("delta", num(st.gap.delta));
    for (i, &x) in st.band.nodes.iter().enumerate() {
        t.push_nums(&[x, st.band.levels[[i, 0]], st.band.levels[[i, 1]], st.band.gap[i]]);
    }
    r.tables.push(t);
    r.check_value("gap.delta", st.gap.delta, "> 1e-8", st.gap.delta > 1e-8);
    Ok(r)
}

fn effective(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let st = first_stage(cfg)?;
    let mut r = SpectralReport::new(ExperimentKind::Effective, cfg, st.model.hash());
    let berry = adiabatic_potential(&st.band, &st.model)?;
    let mut t = Table::new("effective", &["x", "lambda0", "omega_b", "v_a"]);
    t.meta("route", format!("{:?}", berry.route));
    for (i, &x) in st.band.nodes.iter().enumerate() {
        t.push_nums(&[x, st.band.values[i], berry.omega[i], berry.va[i]]);
    }
    r.tables.push(t);
    let mut spec = Table::new("effective_spectrum", &["eps", "index", "mu"]);
    spec.meta("cutoff", cfg.sweep.cutoff.describe());
    for &eps in &cfg.sweep.epsilon {
        let st = Stage::new(cfg, eps)?;
        let ha = st.adiabatic(false)?;
        r.check_value(format!("eps={eps}.symmetry"), linalg::asymmetry(ha.matrix.view()), "<= 1e-12", linalg::asymmetry(ha.matrix.view()) <= 1e-12);
        let cutoff = st.cutoff(cfg);
        for (j, mu) in ha.eigenvalues()?.iter().take_while(|&&m| m <= cutoff).enumerate() {
            spec.push(vec![num(eps), j.to_string(), num(*mu)]);
        }
    }
    r.tables.push(spec);
    Ok(r)
}

fn full(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let mut r = SpectralReport::new(ExperimentKind::Full, cfg, first_stage(cfg)?.model.hash());
    let mut t = Table::new("full_spectrum", &["eps", "index", "lambda", "residual"]);
    t.meta("cutoff", cfg.sweep.cutoff.describe());
    for &eps in &cfg.sweep.epsilon {
        let st = Stage::new(cfg, eps)?;
        let pairs = st.window(cfg, st.cutoff(cfg))?;
        let worst = pairs.residuals.iter().fold(0.0f64, |m, v| m.max(*v));
        for j in 0..pairs.len() {
            t.push(vec![num(eps), j.to_string(), num(pairs.values[j]), num(pairs.residuals[j])]);
        }
        r.at_most(format!("eps={eps}.residual"), worst, cfg.numerics.eigen.accept);
    }
    r.tables.push(t);
    Ok(r)
}

/// Largest `r_L2` and `r_W1` over the `H_a` eigenfunctions in the low-energy window.
#[derive(Debug, Clone, Copy)]
struct ResidualRow {
    r_l2: f64,
    r_w1: f64,
    used: usize,
    skipped: usize,
}

fn residuals(cfg: &ExperimentConfig, st: &Stage, full: &EigenPairs, ha: &EffectiveOperator) -> Result<ResidualRow> {
    let scale = st.eps.powf(cfg.sweep.alpha);
    let top = st.gap.lambda0_min + cfg.sweep.window_c * scale;
    let min_gap = cfg.sweep.gap_c * scale;
    let (mu, vecs) = ha.eigh()?;
    let mut row = ResidualRow { r_l2: 0.0, r_w1: 0.0, used: 0, skipped: 0 };
    for j in (0..mu.len()).take_while(|&j| mu[j] <= top) {
        let psi = lift(&st.band, &vecs.column(j).to_owned());
        match eigenfunction_residual(psi.view(), mu[j], full, &st.op, min_gap) {
            Ok(res) => {
                row.r_l2 = row.r_l2.max(res.r_l2);
                row.r_w1 = row.r_w1.max(res.r_w1);
                row.used += 1;
            }
            Err(Error::NearDegenerate { .. }) | Err(Error::NoMatch { .. }) => row.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if row.used == 0 {
        return Err(Error::EmptyTruncation(top).context(format!("no separated H_a eigenvalue in the window at eps = {}", st.eps)));
    }
    Ok(row)
}

fn convergence(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let sw = &cfg.sweep;
    let mut r = SpectralReport::new(ExperimentKind::Convergence, cfg, first_stage(cfg)?.model.hash());
    let mut header = vec!["eps".to_string(), "cutoff".into(), "n_full".into(), "hausdorff_a".into(), "hausdorff_am".into()];
    header.extend((0..sw.pairs).map(|j| format!("gap_{j}")));
    header.extend(["r_l2", "r_w1", "residual_states", "skipped"].map(String::from));
    let mut t = Table { name: "convergence".into(), header, ..Default::default() };
    t.meta("cutoff", sw.cutoff.describe()).meta("alpha", sw.alpha).meta("window_c", sw.window_c).meta("gap_c", sw.gap_c);
    let mut cols: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4 + sw.pairs];
    let mut scale: f64 = 0.0;
    for &eps in &sw.epsilon {
        let st = Stage::new(cfg, eps)?;
        let cutoff = st.cutoff(cfg);
        let reach = st.gap.lambda0_min + (sw.window_c + sw.gap_c) * eps.powf(sw.alpha);
        let full = st.window(cfg, cutoff.max(reach))?;
        let values = full.values.to_vec();
        let ha = st.adiabatic(false)?;
        let mu = ha.eigenvalues()?.to_vec();
        let mu_m = st.adiabatic(true)?.eigenvalues()?.to_vec();
        let d_a = spectral_distance_windowed(&values, &mu, cutoff)?;
        let d_m = spectral_distance_windowed(&values, &mu_m, cutoff)?;
        let pairing = pair_greedy(&values, &mu[..sw.pairs.min(mu.len())]);
        if pairing.collisions > 0 {
            return Err(Error::NearDegenerate { mu: mu[0], gap: 0.0, required: 0.0 }.context(format!("eigenvalue pairing collided at eps = {eps}")));
        }
        let res = residuals(cfg, &st, &full, &ha)?;
        scale = scale.max(cutoff.abs());
        let mut row = vec![num(eps), num(cutoff), values.iter().filter(|&&v| v <= cutoff).count().to_string(), num(d_a), num(d_m)];
        row.extend(pairing.gaps.iter().map(|&g| num(g)));
        row.extend([num(res.r_l2), num(res.r_w1), res.used.to_string(), res.skipped.to_string()]);
        t.push(row);
        cols[0].push((eps, d_a));
        cols[1].push((eps, d_m));
        cols[2].push((eps, res.r_l2));
        cols[3].push((eps, res.r_w1));
        for (j, g) in pairing.gaps.iter().enumerate() {
            cols[4 + j].push((eps, *g));
        }
        r.at_most(format!("eps={eps}.eigen_residual"), full.residuals.iter().fold(0.0, |m: f64, v| m.max(*v)), cfg.numerics.eigen.accept);
    }
    r.tables.push(t);

    let a = sw.alpha;
    let beta = (1.0 + 0.5 * a).min(2.0 - 0.5 * a);
    for j in 0..sw.pairs {
        let q = format!("gap_{j}");
        let f = r.fit_with(&q, &cols[4 + j], scale)?;
        let (lo, hi) = (2.0 + a - 0.3, 2.0 + a + 0.5);
        r.check_value(format!("{q}.slope"), f.slope, format!("in [{lo}, {hi}]"), f.slope >= lo && f.slope <= hi);
    }
    let fa = r.fit_with("hausdorff_a", &cols[0], scale)?;
    r.slope_at_least("hausdorff_a", &fa, 1.8);
    let fm = r.fit_with("hausdorff_am", &cols[1], scale)?;
    r.slope_at_least("hausdorff_am", &fm, 2.6);
    r.check_value("hausdorff_am.improvement", fm.slope - fa.slope, ">= 0.5", fm.slope - fa.slope >= 0.5);
    let fl = r.fit_with("r_l2", &cols[2], 1.0)?;
    r.slope_at_least("r_l2", &fl, beta - 0.2);
    let fw = r.fit_with("r_w1", &cols[3], 1.0)?;
    r.slope_at_least("r_w1", &fw, a / 2.0 - 0.2);
    Ok(r)
}

fn projections(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let depth = cfg.sweep.depth;
    let mut r = SpectralReport::new(ExperimentKind::Projections, cfg, first_stage(cfg)?.model.hash());
    let mut header = vec!["eps".to_string(), "window".into()];
    header.extend((0..=depth).map(|k| format!("commutator_{k}")));
    header.extend(
        ["pn_idempotency", "p_eps_idempotency", "orthogonality", "intertwining", "p_distance", "u_distance", "rank", "m_norm", "heff_vs_ham"]
            .map(String::from),
    );
    let mut t = Table { name: "projections".into(), header, ..Default::default() };
    t.meta("cutoff", cfg.sweep.cutoff.describe()).meta("depth", depth);
    let mut comm: Vec<Vec<(f64, f64)>> = vec![Vec::new(); depth + 1];
    let mut dist = Vec::new();
    let mut pn_def = Vec::new();
    let mut m_norm = Vec::new();
    let mut scale: f64 = 0.0;
    for &eps in &cfg.sweep.epsilon {
        let st = Stage::new(cfg, eps)?;
        let cutoff = st.cutoff(cfg);
        let window = st.window(cfg, cutoff)?.below(cutoff);
        let set = ProjectionSet::build(&st.op, &st.band, depth).map_err(|e| e.context(format!("eps = {eps}")))?;
        let mut row = vec![num(eps), window.len().to_string()];
        for k in 0..=depth {
            let c = if k == depth {
                windowed_commutator_norm(&st.op, &set.pn, window.vectors.view())
            } else {
                windowed_commutator_norm(&st.op, &build_pn(k, &st.op, &st.band)?, window.vectors.view())
            };
            comm[k].push((eps, c));
            row.push(num(c));
        }
        let idem = set.p_eps.idempotency_defect();
        let orth = set.unitary.orthogonality_defect();
        let inter = set.intertwining_defect();
        let pd = set.projection_distance();
        let rank = set.p_eps.rank()?;
        let m = correction_m(&st.op, &st.band)?;
        let mn = linalg::sym_norm(m.view());
        let heff = linalg::eigvalsh(&effective_matrix(&st.op, &set)?)?.to_vec();
        let ham = st.adiabatic(true)?.eigenvalues()?.to_vec();
        let gap = spectral_distance_windowed(&heff, &ham, cutoff).unwrap_or(f64::NAN);
        row.extend([
            num(set.pn.idempotency_defect()),
            num(idem),
            num(orth),
            num(inter),
            num(pd),
            num(set.unitary.distance_from_identity()),
            rank.to_string(),
            num(mn),
            num(gap),
        ]);
        t.push(row);
        r.at_most(format!("eps={eps}.p_eps_idempotency"), idem, 1e-12);
        r.at_most(format!("eps={eps}.orthogonality"), orth, 1e-10);
        r.at_most(format!("eps={eps}.intertwining"), inter, 1e-10);
        r.check_value(format!("eps={eps}.rank"), rank as f64, format!("== {}", st.band.n_x()), rank == st.band.n_x());
        dist.push((eps, pd));
        pn_def.push((eps, set.pn.idempotency_defect()));
        m_norm.push((eps, mn));
        scale = scale.max(cutoff.abs());
    }
    r.tables.push(t);
    for (k, pts) in comm.iter().enumerate() {
        let q = format!("commutator_{k}");
        let f = r.fit_with(&q, pts, scale)?;
        r.slope_at_least(&q, &f, 0.9 * (k + 1) as f64);
        r.at_most(format!("{q}.residual"), f.residual, 0.15);
    }
    let f = r.fit_with("p_distance", &dist, 1.0)?;
    r.slope_at_least("p_distance", &f, 0.9);
    if depth > 0 {
        let f = r.fit_with("pn_idempotency", &pn_def, 1.0)?;
        r.slope_at_least("pn_idempotency", &f, 0.9 * (depth + 1) as f64);
    }
    let f = r.fit_with("m_norm", &m_norm, scale)?;
    r.slope_at_least("m_norm", &f, 1.8);
    Ok(r)
}

/// Cayley propagation through the eigen-decomposition of `H`: each step
/// multiplies mode `j` by `(1 - i h λ_j / 2) / (1 + i h λ_j / 2)`.
pub fn cayley_spectral(values: &Array1<f64>, vectors: &Array2<f64>, psi0: &Array1<f64>, t: f64, dt: f64) -> Array1<c64> {
    let steps = ((t / dt).ceil() as usize).max(1);
    let h = t / steps as f64;
    let coeff = vectors.t().dot(psi0);
    let mut re = Array1::zeros(psi0.len());
    let mut im = Array1::zeros(psi0.len());
    for (j, &lam) in values.iter().enumerate() {
        let z = c64::new(1.0, -0.5 * h * lam) / c64::new(1.0, 0.5 * h * lam);
        let w = z.powu(steps as u32) * coeff[j];
        re.scaled_add(w.re, &vectors.column(j));
        im.scaled_add(w.im, &vectors.column(j));
    }
    Array1::from_shape_fn(psi0.len(), |k| c64::new(re[k], im[k]))
}

/// Gaussian wave packet on the base centred at a quarter of the circle.
pub fn base_packet(st: &Stage) -> Array1<f64> {
    let centre = 0.25 * st.model.base.length;
    let width: f64 = 0.5;
    Array1::from_iter(st.band.nodes.iter().map(|&x| (-(x - centre).powi(2) / (2.0 * width * width)).exp()))
}

fn complex_distance(a: &Array1<c64>, b: &Array1<c64>) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy)]
struct DynamicsPoint {
    error: f64,
    dt: f64,
    change: f64,
    leak: f64,
}

fn dynamics_at(cfg: &ExperimentConfig, st: &Stage, depth: usize) -> Result<DynamicsPoint> {
    let sw = &cfg.sweep;
    if st.op.dim() > cfg.numerics.dense_max_dim {
        return Err(Error::Config(vec![format!(
            "dynamics needs the full eigen-decomposition: n_x * n_z = {} exceeds dense_max_dim = {}",
            st.op.dim(),
            cfg.numerics.dense_max_dim
        )]));
    }
    let shift = st.gap.lambda0_min;
    let (values, vectors) = eigh(&st.op.to_dense())?;
    let values = values.mapv(|v| v - shift);
    let cutoff = st.cutoff(cfg) - shift;
    let n_win = values.iter().take_while(|&&v| v <= cutoff).count();
    let win = vectors.slice(s![.., ..n_win]);
    let set = ProjectionSet::build(&st.op, &st.band, depth)?;
    let w = set.transported_basis();
    let mut heff = effective_matrix(&st.op, &set)?;
    for i in 0..heff.nrows() {
        heff[[i, i]] -= shift;
    }
    // ψ0 = P ρ(H) J g, normalised
    let psi = lift_basis(&st.band).dot(&base_packet(st));
    let psi = win.dot(&win.t().dot(&psi));
    let psi = set.p_eps.apply_cols(psi.view().insert_axis(ndarray::Axis(1))).column(0).to_owned();
    let psi = &psi / psi.dot(&psi).sqrt();
    let phi0 = w.t().dot(&psi).mapv(|v| c64::new(v, 0.0));
    let run = |dt: f64| -> Result<(f64, f64)> {
        let full = cayley_spectral(&values, &vectors, &psi, sw.time, dt);
        let eff = propagate(&heff, &phi0, sw.time, dt)?.state;
        let wr = w.dot(&eff.mapv(|z| z.re));
        let wi = w.dot(&eff.mapv(|z| z.im));
        let lifted = Array1::from_shape_fn(wr.len(), |k| c64::new(wr[k], wi[k]));
        let fr = full.mapv(|z| z.re);
        let fi = full.mapv(|z| z.im);
        let leak_r = &fr - &set.p_eps.apply_cols(fr.view().insert_axis(ndarray::Axis(1))).column(0);
        let leak_i = &fi - &set.p_eps.apply_cols(fi.view().insert_axis(ndarray::Axis(1))).column(0);
        Ok((complex_distance(&full, &lifted), (leak_r.dot(&leak_r) + leak_i.dot(&leak_i)).sqrt()))
    };
    let mut dt = sw.dt;
    let (mut err, mut leak) = run(dt)?;
    let mut change = f64::INFINITY;
    for _ in 0..12 {
        let (e2, l2) = run(dt / 2.0)?;
        change = (e2 - err).abs() / e2.max(f64::MIN_POSITIVE);
        dt /= 2.0;
        err = e2;
        leak = l2;
        if change < 0.01 {
            break;
        }
    }
    Ok(DynamicsPoint { error: err, dt, change, leak })
}

fn dynamics(cfg: &ExperimentConfig) -> Result<SpectralReport> {
    let depth = cfg.sweep.depth;
    let mut r = SpectralReport::new(ExperimentKind::Dynamics, cfg, first_stage(cfg)?.model.hash());
    let mut t = Table::new("dynamics", &["eps", "t", "error", "dt", "dt_change", "leak"]);
    t.meta("cutoff", cfg.sweep.cutoff.describe()).meta("depth", depth).meta("time", cfg.sweep.time);
    let mut pts = Vec::new();
    for &eps in &cfg.sweep.epsilon {
        let st = Stage::new(cfg, eps)?;
        let p = dynamics_at(cfg, &st, depth).map_err(|e| e.context(format!("eps = {eps}")))?;
        t.push_nums(&[eps, cfg.sweep.time, p.error, p.dt, p.change, p.leak]);
        r.check_value(format!("eps={eps}.dt_change"), p.change, "< 1e-2", p.change < 0.01);
        pts.push((eps, p.error));
    }
    r.tables.push(t);
    let f = r.fit_with("error", &pts, 1.0)?;
    r.slope_at_least("error", &f, 0.9 * (depth + 1) as f64);
    Ok(r)
}
