//! Experiment configuration.
//!
//! ```toml
//! [model]
//! kind = "strip"
//! profile = "0.25 + 0.1*cos(x)"
//!
//! [numerics]
//! n_x = 256
//! n_z = 32
//!
//! [sweep]
//! epsilon = [0.2, 0.141, 0.1, 0.071, 0.05]
//! cutoff = "lambda1 - 0.5"
//! ```

use std::f64::consts::PI;
use std::path::PathBuf;

use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::fibre::{FibreBasis, FibreBasisKind};
use crate::geometry::{
    build_strip_model, build_warped_model, BaseCircle, H1Spec, ModelGeometry, ModelKind, Potential, Profile,
};
use crate::reference::{EigenOptions, DEFAULT_MAX_DIM};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: RawModel,
    #[serde(default)]
    numerics: RawNumerics,
    sweep: RawSweep,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    kind: Spanned<String>,
    /// `h` for the strip, `l` for the warped model.
    profile: Spanned<String>,
    length: Option<f64>,
    potential: Option<RawPair>,
    h1: Option<RawH1>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    base: Spanned<String>,
    fibre: Spanned<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawH1 {
    #[serde(default)]
    s: Option<Spanned<String>>,
    #[serde(default)]
    v: Option<Spanned<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNumerics {
    n_x: usize,
    n_z: usize,
    fibre_basis: Option<Spanned<String>>,
    eig_tol: f64,
    eig_accept: f64,
    pcg_tol: f64,
    max_dim: usize,
    dense_max_dim: usize,
    guard_count: usize,
    guard_tol: f64,
    seed: u64,
}

impl Default for RawNumerics {
    fn default() -> Self {
        let e = EigenOptions::default();
        RawNumerics {
            n_x: 256,
            n_z: 32,
            fibre_basis: None,
            eig_tol: e.tol,
            eig_accept: e.accept,
            pcg_tol: e.pcg_tol,
            max_dim: DEFAULT_MAX_DIM,
            dense_max_dim: 4096,
            guard_count: 10,
            guard_tol: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    epsilon: Spanned<Vec<f64>>,
    cutoff: Option<Spanned<String>>,
    depth: Option<usize>,
    alpha: Option<f64>,
    window_c: Option<f64>,
    gap_c: Option<f64>,
    pairs: Option<usize>,
    time: Option<f64>,
    dt: Option<f64>,
    guard: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
}

/// Energy cutoff relative to the band minima.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cutoff {
    Absolute(f64),
    AboveLambda0(f64),
    AboveLambda1(f64),
}

impl Cutoff {
    /// `"lambda1 - 0.5"`, `"lambda0 + 2"`, `"lambda0"` or a number.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let t: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        let offset = |rest: &str| -> std::result::Result<f64, String> {
            if rest.is_empty() {
                return Ok(0.0);
            }
            let (sign, num) = match rest.split_at(1) {
                ("+", n) => (1.0, n),
                ("-", n) => (-1.0, n),
                _ => return Err(format!("expected `+` or `-` after the band name in `{text}`")),
            };
            num.parse::<f64>().map(|v| sign * v).map_err(|_| format!("bad offset `{num}` in `{text}`"))
        };
        if let Some(rest) = t.strip_prefix("lambda0") {
            return offset(rest).map(Cutoff::AboveLambda0);
        }
        if let Some(rest) = t.strip_prefix("lambda1") {
            return offset(rest).map(Cutoff::AboveLambda1);
        }
        t.parse::<f64>()
            .map(Cutoff::Absolute)
            .map_err(|_| format!("cutoff `{text}` is neither a number nor `lambda0 ± c` / `lambda1 ± c`"))
    }

    pub fn resolve(self, lambda0: f64, lambda1: f64) -> f64 {
        match self {
            Cutoff::Absolute(v) => v,
            Cutoff::AboveLambda0(c) => lambda0 + c,
            Cutoff::AboveLambda1(c) => lambda1 + c,
        }
    }

    pub fn describe(self) -> String {
        match self {
            Cutoff::Absolute(v) => format!("{v}"),
            Cutoff::AboveLambda0(c) => format!("lambda0 {:+}", c),
            Cutoff::AboveLambda1(c) => format!("lambda1 {:+}", c),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub profile: Profile,
    pub length: f64,
    pub potential: Option<Potential>,
    pub h1: Option<H1Spec>,
}

#[derive(Debug, Clone)]
pub struct Numerics {
    pub n_x: usize,
    pub n_z: usize,
    pub fibre_basis: FibreBasisKind,
    pub eigen: EigenOptions,
    pub max_dim: usize,
    /// Windows of operators up to this dimension are computed densely.
    pub dense_max_dim: usize,
    /// Eigenvalues compared by the self-convergence guard.
    pub guard_count: usize,
    pub guard_tol: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    /// Strictly decreasing.
    pub epsilon: Vec<f64>,
    pub cutoff: Cutoff,
    /// Recursion depth `N`.
    pub depth: usize,
    pub alpha: f64,
    /// `C` of the window `(-inf, Λ0 + C eps^alpha]`.
    pub window_c: f64,
    /// `C_μ`: required separation of a matched eigenvalue, in units of `eps^alpha`.
    pub gap_c: f64,
    /// Number of lowest eigenvalue gaps tracked.
    pub pairs: usize,
    pub time: f64,
    pub dt: f64,
    pub guard: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub numerics: Numerics,
    pub sweep: Sweep,
    pub output_dir: PathBuf,
}

/// 1-based line of a byte offset.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Collector<'a> {
    text: &'a str,
    errors: Vec<String>,
}

impl Collector<'_> {
    fn push<T>(&mut self, span: &Spanned<T>, msg: impl std::fmt::Display) {
        self.errors.push(format!("line {}: {msg}", line_of(self.text, span.span().start)));
    }

    fn plain(&mut self, msg: impl std::fmt::Display) {
        self.errors.push(msg.to_string());
    }

    fn profile(&mut self, key: &str, src: &Spanned<String>) -> Option<Profile> {
        match Profile::parse(src.get_ref()) {
            Ok(p) => Some(p),
            Err(e) => {
                self.push(src, format!("{key}: {e}"));
                None
            }
        }
    }
}

/// Parse and validate a configuration. Errors are reported together, each
/// with the line of the offending entry when known.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let loc = e.span().map(|s| format!("line {}: ", line_of(text, s.start))).unwrap_or_default();
        Error::Config(vec![format!("{loc}{}", e.message())])
    })?;
    let mut c = Collector { text, errors: Vec::new() };

    let kind = match raw.model.kind.get_ref().as_str() {
        "strip" => Some(ModelKind::DirichletStrip),
        "warped" => Some(ModelKind::WarpedCircleFibre),
        other => {
            c.push(&raw.model.kind, format!("model.kind: unknown kind `{other}` (expected `strip` or `warped`)"));
            None
        }
    };
    let profile = c.profile("model.profile", &raw.model.profile);
    let length = raw.model.length.unwrap_or(2.0 * PI);
    if !(length.is_finite() && length > 0.0) {
        c.plain(format!("model.length must be positive, got {length}"));
    }
    let potential = raw.model.potential.as_ref().and_then(|p| {
        let base = c.profile("model.potential.base", &p.base);
        let fibre = c.profile("model.potential.fibre", &p.fibre);
        Some(Potential { base: base?, fibre: fibre? })
    });
    let h1 = raw.model.h1.as_ref().and_then(|h| {
        let s = h.s.as_ref().map_or(Some(Profile::zero()), |s| c.profile("model.h1.s", s));
        let v = h.v.as_ref().map_or(Some(Profile::zero()), |v| c.profile("model.h1.v", v));
        Some(H1Spec { s: s?, v: v? })
    });

    let n = &raw.numerics;
    let fibre_basis = match (&n.fibre_basis, kind) {
        (Some(b), _) => match FibreBasisKind::parse(b.get_ref()) {
            Some(k) => Some(k),
            None => {
                c.push(b, format!("numerics.fibre_basis: unknown basis `{}`", b.get_ref()));
                None
            }
        },
        (None, Some(ModelKind::DirichletStrip)) => Some(FibreBasisKind::Legendre),
        (None, _) => Some(FibreBasisKind::Fourier),
    };
    if let (Some(b), Some(k)) = (fibre_basis, kind) {
        if FibreBasis::new(b, 8).is_ok_and(|probe| !probe.matches(k)) {
            c.plain(format!("numerics.fibre_basis `{}` does not fit the {k} model", b.name()));
        }
    }
    if n.n_x < 16 || n.n_x % 2 != 0 {
        c.plain(format!("numerics.n_x must be even and at least 16, got {}", n.n_x));
    }
    if n.n_z < 8 {
        c.plain(format!("numerics.n_z must be at least 8, got {}", n.n_z));
    }
    if n.n_x * n.n_z > n.max_dim {
        c.plain(format!("numerics: n_x * n_z = {} exceeds max_dim = {}", n.n_x * n.n_z, n.max_dim));
    }
    if !(n.eig_tol > 0.0 && n.eig_tol <= n.eig_accept) {
        c.plain("numerics: need 0 < eig_tol <= eig_accept");
    }
    if n.guard_count == 0 {
        c.plain("numerics.guard_count must be positive");
    }

    let s = &raw.sweep;
    let eps = s.epsilon.get_ref().clone();
    if eps.is_empty() {
        c.push(&s.epsilon, "sweep.epsilon is empty");
    }
    if let Some(bad) = eps.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        c.push(&s.epsilon, format!("sweep.epsilon: {bad} is outside (0, 1)"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        c.push(&s.epsilon, "sweep.epsilon must be strictly decreasing");
    }
    let cutoff = match &s.cutoff {
        Some(t) => match Cutoff::parse(t.get_ref()) {
            Ok(v) => Some(v),
            Err(e) => {
                c.push(t, format!("sweep.cutoff: {e}"));
                None
            }
        },
        None => Some(Cutoff::AboveLambda1(-0.5)),
    };
    let positive = |c: &mut Collector, key: &str, v: f64| {
        if !(v.is_finite() && v > 0.0) {
            c.plain(format!("sweep.{key} must be positive, got {v}"));
        }
    };
    let alpha = s.alpha.unwrap_or(1.0);
    if !(alpha > 0.0 && alpha <= 2.0) {
        c.plain(format!("sweep.alpha must lie in (0, 2], got {alpha}"));
    }
    let window_c = s.window_c.unwrap_or(3.0);
    positive(&mut c, "window_c", window_c);
    let gap_c = s.gap_c.unwrap_or(0.5);
    positive(&mut c, "gap_c", gap_c);
    let time = s.time.unwrap_or(1.0);
    positive(&mut c, "time", time);
    let dt = s.dt.unwrap_or(0.02);
    positive(&mut c, "dt", dt);
    let pairs = s.pairs.unwrap_or(3);
    if pairs == 0 {
        c.plain("sweep.pairs must be positive");
    }

    if !c.errors.is_empty() {
        return Err(Error::Config(c.errors));
    }
    Ok(ExperimentConfig {
        model: ModelSpec {
            kind: kind.expect("validated"),
            profile: profile.expect("validated"),
            length,
            potential,
            h1,
        },
        numerics: Numerics {
            n_x: n.n_x,
            n_z: n.n_z,
            fibre_basis: fibre_basis.expect("validated"),
            eigen: EigenOptions {
                tol: n.eig_tol,
                accept: n.eig_accept,
                pcg_tol: n.pcg_tol,
                seed: n.seed,
                ..EigenOptions::default()
            },
            max_dim: n.max_dim,
            dense_max_dim: n.dense_max_dim,
            guard_count: n.guard_count,
            guard_tol: n.guard_tol,
        },
        sweep: Sweep {
            epsilon: eps,
            cutoff: cutoff.expect("validated"),
            depth: s.depth.unwrap_or(1),
            alpha,
            window_c,
            gap_c,
            pairs,
            time,
            dt,
            guard: s.guard.unwrap_or(true),
        },
        output_dir: PathBuf::from(raw.output.dir.unwrap_or_else(|| "out".into())),
    })
}

impl ExperimentConfig {
    /// Replace the sweep, revalidating its ordering.
    pub fn with_epsilon(mut self, eps: Vec<f64>) -> Result<Self> {
        let mut errors = Vec::new();
        if eps.is_empty() {
            errors.push("--eps: empty list".to_string());
        }
        if eps.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            errors.push("--eps: values must lie in (0, 1)".to_string());
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            errors.push("--eps: values must be strictly decreasing".to_string());
        }
        if !errors.is_empty() {
            return Err(Error::Config(errors));
        }
        self.sweep.epsilon = eps;
        Ok(self)
    }

    pub fn fibre_basis(&self, n_z: usize) -> Result<FibreBasis> {
        FibreBasis::new(self.numerics.fibre_basis, n_z)
    }

    /// The model at one `eps` and base resolution.
    pub fn build_model(&self, eps: f64, n_x: usize) -> Result<ModelGeometry> {
        let m = &self.model;
        let base = BaseCircle::new(m.length, n_x)?;
        match m.kind {
            ModelKind::DirichletStrip => build_strip_model(&m.profile, base, eps, m.potential.clone(), m.h1.clone()),
            ModelKind::WarpedCircleFibre => {
                let model = build_warped_model(&m.profile, base, eps, m.h1.clone())?;
                match &m.potential {
                    Some(p) => model.with_potential(p.clone()),
                    None => Ok(model),
                }
            }
        }
    }

    /// Rate fits need at least four sweep points.
    pub fn require_rate_sweep(&self) -> Result<()> {
        let n = self.sweep.epsilon.len();
        if n < 4 {
            return Err(Error::Config(vec![format!(
                "sweep.epsilon: a rate study needs at least 4 values, got {n}"
            )]));
        }
        Ok(())
    }
}
