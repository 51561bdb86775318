//! Model fibre bundles over a circle: the Dirichlet strip `0 <= y <= a(x)`
//! and the circle fibre of varying length `l(x)`.

mod profile;

use std::f64::consts::PI;
use std::fmt;

use sha2::{Digest, Sha256};

pub use profile::{Func, Jet, ParseError, Profile};

use crate::error::{Error, Result};

/// Samples used for positivity and finiteness checks of profiles.
const CHECK_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    DirichletStrip,
    WarpedCircleFibre,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::DirichletStrip => f.write_str("strip"),
            ModelKind::WarpedCircleFibre => f.write_str("warped"),
        }
    }
}

/// Flat periodic base with a uniform grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseCircle {
    pub length: f64,
    pub n_x: usize,
}

impl BaseCircle {
    pub fn new(length: f64, n_x: usize) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidBase(format!("circumference must be positive, got {length}")));
        }
        if n_x < 16 || n_x % 2 != 0 {
            return Err(Error::InvalidBase(format!("n_x must be even and at least 16, got {n_x}")));
        }
        Ok(BaseCircle { length, n_x })
    }

    /// Circle of circumference 2π.
    pub fn standard(n_x: usize) -> Result<Self> {
        BaseCircle::new(2.0 * PI, n_x)
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n_x as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| i as f64 * self.spacing()).collect()
    }
}

/// Separable potential `V(x, z) = base(x) * fibre(z)` with `z` the
/// trivialised fibre coordinate in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potential {
    pub base: Profile,
    pub fibre: Profile,
}

/// Coefficients of the perturbation `-eps^2 d_x(s d_x) + eps v`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1Spec {
    pub s: Profile,
    pub v: Profile,
}

impl H1Spec {
    pub fn is_zero(&self) -> bool {
        self.s.is_zero() && self.v.is_zero()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGeometry {
    pub kind: ModelKind,
    pub base: BaseCircle,
    /// Fibre size: the width `a = 1 + h` for the strip, the circumference `l` for the warped model.
    pub profile: Profile,
    pub potential: Option<Potential>,
    pub h1: Option<H1Spec>,
    pub eps: f64,
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(eps))
    }
}

fn sample_points(base: &BaseCircle) -> impl Iterator<Item = f64> + '_ {
    let fine = (0..CHECK_SAMPLES).map(move |i| i as f64 * base.length / CHECK_SAMPLES as f64);
    fine.chain(base.nodes())
}

fn check_finite(p: &Profile, base: &BaseCircle) -> Result<()> {
    for x in sample_points(base) {
        if !p.eval(x).is_finite() {
            return Err(Error::NonFiniteProfile { expr: p.source().to_string(), x });
        }
    }
    Ok(())
}

fn check_positive(p: &Profile, base: &BaseCircle) -> Result<()> {
    check_finite(p, base)?;
    let (x, value) = sample_points(base)
        .map(|x| (x, p.value(x)))
        .fold((0.0, f64::INFINITY), |m, s| if s.1 < m.1 { s } else { m });
    if value <= 0.0 {
        return Err(Error::NonPositiveProfile { x, value });
    }
    Ok(())
}

fn check_extras(base: &BaseCircle, potential: &Option<Potential>, h1: &Option<H1Spec>) -> Result<()> {
    if let Some(p) = potential {
        check_finite(&p.base, base)?;
        for i in 0..=64 {
            let z = i as f64 / 64.0;
            if !p.fibre.eval(z).is_finite() {
                return Err(Error::NonFiniteProfile { expr: p.fibre.source().to_string(), x: z });
            }
        }
    }
    if let Some(h) = h1 {
        check_finite(&h.s, base)?;
        check_finite(&h.v, base)?;
    }
    Ok(())
}

/// Strip `{0 <= y <= 1 + h(x)}` with Dirichlet walls.
pub fn build_strip_model(
    h: &Profile,
    base: BaseCircle,
    eps: f64,
    potential: Option<Potential>,
    h1: Option<H1Spec>,
) -> Result<ModelGeometry> {
    check_eps(eps)?;
    let a = h.shifted(1.0);
    check_positive(&a, &base)?;
    check_extras(&base, &potential, &h1)?;
    Ok(ModelGeometry { kind: ModelKind::DirichletStrip, base, profile: a, potential, h1, eps })
}

/// Circle fibre of circumference `l(x)`.
pub fn build_warped_model(
    ell: &Profile,
    base: BaseCircle,
    eps: f64,
    h1: Option<H1Spec>,
) -> Result<ModelGeometry> {
    check_eps(eps)?;
    check_positive(ell, &base)?;
    check_extras(&base, &None, &h1)?;
    Ok(ModelGeometry {
        kind: ModelKind::WarpedCircleFibre,
        base,
        profile: ell.clone(),
        potential: None,
        h1,
        eps,
    })
}

impl ModelGeometry {
    /// Attach a separable potential. The warped model only accepts a fibre
    /// factor that is constant.
    pub fn with_potential(mut self, potential: Potential) -> Result<Self> {
        if self.kind == ModelKind::WarpedCircleFibre && !potential.fibre.is_constant() {
            return Err(Error::FibreDependentPotential);
        }
        let p = Some(potential);
        check_extras(&self.base, &p, &None)?;
        self.potential = p;
        Ok(self)
    }

    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        Ok(ModelGeometry { eps, ..self.clone() })
    }

    pub fn with_n_x(&self, n_x: usize) -> Result<Self> {
        let base = BaseCircle::new(self.base.length, n_x)?;
        Ok(ModelGeometry { base, ..self.clone() })
    }

    /// Fibre size `a` or `l` with derivatives.
    pub fn fibre_size(&self, x: f64) -> Jet {
        self.profile.eval(x)
    }

    /// Coefficient `c = a'/a` of the vertical correction field `Y = -c y d_y` of the strip.
    pub fn shift_field_coefficient(&self, x: f64) -> Result<f64> {
        match self.kind {
            ModelKind::DirichletStrip => {
                let a = self.fibre_size(x);
                Ok(a.d1 / a.v)
            }
            kind => Err(Error::UnsupportedKind { op: "shift_field_coefficient", kind }),
        }
    }

    /// `(log Vol F_x)'`: `a'/a` for the strip, `l'/l` for the warped model.
    pub fn log_volume_derivative(&self, x: f64) -> f64 {
        let s = self.fibre_size(x);
        s.d1 / s.v
    }

    /// `(log Vol F_x)''`.
    pub fn log_volume_second_derivative(&self, x: f64) -> f64 {
        let s = self.fibre_size(x);
        s.d2 / s.v - (s.d1 / s.v).powi(2)
    }

    /// Logarithmic derivative of the pointwise fibre volume density along the
    /// horizontal lift. The strip's density `dy` is invariant; the warped
    /// density `(l/2π) dθ` scales uniformly.
    pub fn density_log_derivative(&self, x: f64) -> f64 {
        match self.kind {
            ModelKind::DirichletStrip => 0.0,
            ModelKind::WarpedCircleFibre => self.log_volume_derivative(x),
        }
    }

    /// Base factor of the potential with derivatives; zero when absent.
    pub fn potential_base(&self, x: f64) -> Jet {
        match &self.potential {
            Some(p) => p.base.eval(x),
            None => Jet::constant(0.0),
        }
    }

    pub fn potential_fibre(&self, z: f64) -> f64 {
        match &self.potential {
            Some(p) => p.fibre.value(z),
            None => 0.0,
        }
    }

    pub fn has_potential(&self) -> bool {
        self.potential.as_ref().is_some_and(|p| !(p.base.is_zero() || p.fibre.is_zero()))
    }

    pub fn h1_s(&self, x: f64) -> f64 {
        self.h1.as_ref().map_or(0.0, |h| h.s.value(x))
    }

    pub fn h1_v(&self, x: f64) -> f64 {
        self.h1.as_ref().map_or(0.0, |h| h.v.value(x))
    }

    pub fn has_h1(&self) -> bool {
        self.h1.as_ref().is_some_and(|h| !h.is_zero())
    }

    /// Largest mismatch of the profiles' values and derivatives between
    /// `x = 0` and `x = L`. Nonzero means the profile is not periodic.
    pub fn periodicity_defect(&self) -> f64 {
        let l = self.base.length;
        let mut profiles = vec![&self.profile];
        if let Some(p) = &self.potential {
            profiles.push(&p.base);
        }
        if let Some(h) = &self.h1 {
            profiles.push(&h.s);
            profiles.push(&h.v);
        }
        profiles
            .iter()
            .map(|p| {
                let (a, b) = (p.eval(0.0), p.eval(l));
                (a.v - b.v).abs().max((a.d1 - b.d1).abs()).max((a.d2 - b.d2).abs())
            })
            .fold(0.0, f64::max)
    }

    /// Minimum of the fibre size over the check grid.
    pub fn min_fibre_size(&self) -> f64 {
        sample_points(&self.base).map(|x| self.profile.value(x)).fold(f64::INFINITY, f64::min)
    }

    /// Short stable hash of everything except the grid and `eps`.
    pub fn hash(&self) -> String {
        let mut text = format!("{}|L={:?}|profile={}", self.kind, self.base.length, self.profile);
        if let Some(p) = &self.potential {
            text.push_str(&format!("|V={} * {}", p.base, p.fibre));
        }
        if let Some(h) = &self.h1 {
            text.push_str(&format!("|s={}|v={}", h.s, h.v));
        }
        let digest = Sha256::digest(text.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> BaseCircle {
        BaseCircle::standard(64).unwrap()
    }

    #[test]
    fn flat_strip_has_unit_width() {
        let m = build_strip_model(&Profile::zero(), base(), 0.1, None, None).unwrap();
        for x in base().nodes() {
            assert_eq!(m.fibre_size(x).v, 1.0);
            assert_eq!(m.shift_field_coefficient(x).unwrap(), 0.0);
        }
    }

    #[test]
    fn cosine_strip_minimum_width() {
        let h = Profile::parse("0.25 + 0.1*cos(x)").unwrap();
        let m = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        assert!((m.min_fibre_size() - 1.15).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_width() {
        let h = Profile::constant(-1.2);
        let e = build_strip_model(&h, base(), 0.1, None, None).unwrap_err();
        assert!(e.to_string().contains("profile not positive"));
    }

    #[test]
    fn rejects_bad_eps() {
        for eps in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(
                build_strip_model(&Profile::zero(), base(), eps, None, None),
                Err(Error::InvalidEpsilon(_))
            ));
        }
    }

    #[test]
    fn warped_models() {
        let flat = Profile::parse("2*pi").unwrap();
        assert!(build_warped_model(&flat, base(), 0.1, None).is_ok());
        let ell = Profile::parse("2*pi*(1 + 0.2*cos(x))").unwrap();
        assert!(build_warped_model(&ell, base(), 0.1, None).is_ok());
        let crossing = Profile::parse("cos(x)").unwrap();
        assert!(build_warped_model(&crossing, base(), 0.1, None).is_err());
    }

    #[test]
    fn warped_rejects_fibre_dependent_potential() {
        let ell = Profile::parse("2*pi").unwrap();
        let m = build_warped_model(&ell, base(), 0.1, None).unwrap();
        let pot = Potential { base: Profile::constant(1.0), fibre: Profile::parse("x").unwrap() };
        assert!(matches!(m.clone().with_potential(pot), Err(Error::FibreDependentPotential)));
        let pot = Potential { base: Profile::parse("cos(x)").unwrap(), fibre: Profile::constant(2.0) };
        assert!(m.with_potential(pot).is_ok());
    }

    #[test]
    fn shift_field_at_quarter_turn() {
        let h = Profile::parse("0.25 + 0.1*cos(x)").unwrap();
        let m = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        let x = PI / 2.0;
        let c = m.shift_field_coefficient(x).unwrap();
        assert!((c + 0.08).abs() < 1e-14);
        let step = 1e-6;
        let fd = ((1.25 + 0.1 * (x + step).cos()).ln() - (1.25 + 0.1 * (x - step).cos()).ln())
            / (2.0 * step);
        assert!((c - fd).abs() < 1e-8);
        assert_eq!(c, m.log_volume_derivative(x));
    }

    #[test]
    fn shift_field_unsupported_on_warped() {
        let m = build_warped_model(&Profile::parse("2*pi").unwrap(), base(), 0.1, None).unwrap();
        assert!(matches!(m.shift_field_coefficient(0.0), Err(Error::UnsupportedKind { .. })));
    }

    #[test]
    fn log_volume_examples() {
        let ell = Profile::parse("2*pi*exp(0.1*sin(x))").unwrap();
        let m = build_warped_model(&ell, base(), 0.1, None).unwrap();
        assert!((m.log_volume_derivative(0.0) - 0.1).abs() < 1e-15);
        let h = Profile::parse("0.3*exp(-(x-pi)^2)").unwrap();
        let s = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        assert!(s.log_volume_derivative(PI).abs() < 1e-15);
        assert!(s.periodicity_defect() > 0.0);
    }

    #[test]
    fn commutator_with_vertical_laplacian() {
        // f vanishes on both walls; the identity itself is pointwise
        let h = Profile::parse("0.25 + 0.1*cos(x)").unwrap();
        let m = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        let a = |x: f64| 1.25 + 0.1 * x.cos();
        let f = |x: f64, y: f64| (PI * y / a(x)).sin() * (2.0 + x.sin()) * (0.3 * y).exp();
        let dh = 1e-3;
        let fyy = |x: f64, y: f64| (f(x, y + dh) - 2.0 * f(x, y) + f(x, y - dh)) / (dh * dh);
        let fy = |x: f64, y: f64| (f(x, y + dh) - f(x, y - dh)) / (2.0 * dh);
        // lifted derivative in physical coordinates: d_x + (a'/a) y d_y
        let lift = |g: &dyn Fn(f64, f64) -> f64, x: f64, y: f64| {
            let c = m.shift_field_coefficient(x).unwrap();
            (g(x + dh, y) - g(x - dh, y)) / (2.0 * dh) + c * y * (g(x, y + dh) - g(x, y - dh)) / (2.0 * dh)
        };
        for &(x, y) in &[(0.3, 0.4), (1.7, 0.9), (4.0, 0.2)] {
            let lhs_a = lift(&fyy, x, y);
            let lf = |xx: f64, yy: f64| {
                let c = m.shift_field_coefficient(xx).unwrap();
                (f(xx + dh, yy) - f(xx - dh, yy)) / (2.0 * dh) + c * yy * fy(xx, yy)
            };
            let lhs_b = (lf(x, y + dh) - 2.0 * lf(x, y) + lf(x, y - dh)) / (dh * dh);
            let rhs = -2.0 * m.shift_field_coefficient(x).unwrap() * fyy(x, y);
            assert!((lhs_a - lhs_b - rhs).abs() < 1e-3, "x={x} y={y}");
        }
    }

    #[test]
    fn deterministic_construction() {
        let h = Profile::parse("0.25 + 0.1*cos(x)").unwrap();
        let a = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        let b = build_strip_model(&h, base(), 0.1, None, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.hash(), b.hash());
    }
}
