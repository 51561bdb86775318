//! Acceptance criteria 1-10. Each test prints one PASS/FAIL line straight to
//! stdout so the lines survive output capture, then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use adiabat::adiabatic::{adiabatic_potential, adiabatic_potential_closed, adiabatic_potential_general, assemble_adiabatic};
use adiabat::fibre::{solve_band, FibreBasis, FibreBasisKind};
use adiabat::geometry::{build_strip_model, build_warped_model, BaseCircle, ModelGeometry, Profile};
use adiabat::harness::{parse_config, run_experiment, ExperimentConfig, ExperimentKind, SpectralReport};
use adiabat::linalg::eigvalsh;
use adiabat::reference::{assemble_full_in, lowest_eigenpairs, EigenOptions, DEFAULT_MAX_DIM};
use adiabat::superadiabatic::{commutator_h_p0, effective_matrix, lift_basis, ProjectionSet};

const N_X: usize = 256;
const N_Z: usize = 32;

fn line(n: usize, name: &str, ok: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
}

fn config(text: &str) -> ExperimentConfig {
    parse_config(text).expect("shipped config parses")
}

type Run = Result<SpectralReport, String>;

fn run(cell: &'static OnceLock<Run>, text: &str, kind: ExperimentKind) -> &'static Run {
    cell.get_or_init(|| run_experiment(&config(text), kind).map_err(|e| e.to_string()))
}

fn convergence() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    run(&CELL, include_str!("../../../configs/strip_convergence.toml"), ExperimentKind::Convergence)
}

fn projections() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    run(&CELL, include_str!("../../../configs/strip_projections.toml"), ExperimentKind::Projections)
}

fn dynamics() -> &'static Run {
    static CELL: OnceLock<Run> = OnceLock::new();
    run(&CELL, include_str!("../../../configs/strip_dynamics.toml"), ExperimentKind::Dynamics)
}

fn slope(r: &SpectralReport, q: &str) -> (f64, f64) {
    let f = r.fit(q).unwrap_or_else(|| panic!("fit {q} missing"));
    (f.slope, f.residual)
}

/// Evaluate a criterion on a study, printing a FAIL line if the study itself errored.
fn judge(n: usize, name: &str, study: &Run, eval: impl FnOnce(&SpectralReport) -> (bool, String)) {
    let (ok, detail) = match study {
        Ok(r) => eval(r),
        Err(e) => (false, format!("run failed: {e}")),
    };
    line(n, name, ok, detail.clone());
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn strip(h: &str, eps: f64) -> ModelGeometry {
    build_strip_model(&Profile::parse(h).unwrap(), BaseCircle::standard(N_X).unwrap(), eps, None, None).unwrap()
}

#[test]
fn c01_separable_exactness() {
    let eps = 0.1;
    let m = strip("0", eps);
    let basis = FibreBasis::new(FibreBasisKind::Sine, N_Z).unwrap();
    let band = solve_band(&m, 0, basis.clone()).unwrap();
    let op = assemble_full_in(&m, N_X, &basis, DEFAULT_MAX_DIM).unwrap();

    let mut analytic: Vec<f64> = (1..=N_Z)
        .flat_map(|k| (-(N_X as i32) / 2 + 1..=N_X as i32 / 2).map(move |j| eps * eps * (j * j) as f64 + (k as f64 * PI).powi(2)))
        .collect();
    analytic.sort_by(f64::total_cmp);
    let full = lowest_eigenpairs(&op, 20, op.lower_bound - 1.0, &EigenOptions::default()).unwrap();
    let h_err = (0..20).map(|j| (full.values[j] - analytic[j]).abs() / analytic[j]).fold(0.0, f64::max);

    // k = 1 family: every H_a and H_eff eigenvalue
    let mut family: Vec<f64> = (-(N_X as i32) / 2 + 1..=N_X as i32 / 2).map(|j| eps * eps * (j * j) as f64 + PI * PI).collect();
    family.sort_by(f64::total_cmp);
    let ha = eigvalsh(&assemble_adiabatic(&m, &band, &adiabatic_potential(&band, &m).unwrap(), None, None).unwrap().matrix).unwrap();
    let set = ProjectionSet::build(&op, &band, 1).unwrap();
    let heff = eigvalsh(&effective_matrix(&op, &set).unwrap()).unwrap();
    let rel = |v: &ndarray::Array1<f64>| (0..N_X).map(|j| (v[j] - family[j]).abs() / family[j]).fold(0.0, f64::max);
    let (a_err, e_err) = (rel(&ha), rel(&heff));
    let p_dist = set.projection_distance();
    let u_dist = set.unitary.distance_from_identity();

    let ok = h_err <= 1e-10 && a_err <= 1e-10 && e_err <= 1e-10 && p_dist <= 1e-11 && u_dist <= 1e-11;
    line(
        1,
        "separable exactness",
        ok,
        format!("H rel {h_err:.1e}, H_a rel {a_err:.1e}, H_eff rel {e_err:.1e} (<= 1e-10); |P-P0| {p_dist:.1e}, |U-I| {u_dist:.1e} (<= 1e-11)"),
    );
    assert!(ok);
}

#[test]
fn c02_warped_pipeline_collapse() {
    let mut worst = (0.0f64, 0.0f64, 0.0f64);
    for eps in [0.2, 0.1, 0.05] {
        let m = build_warped_model(&Profile::parse("2*pi*(1 + 0.2*cos(x))").unwrap(), BaseCircle::standard(N_X).unwrap(), eps, None)
            .unwrap();
        let basis = FibreBasis::new(FibreBasisKind::Fourier, N_Z + 1).unwrap();
        let band = solve_band(&m, 0, basis.clone()).unwrap();
        let op = assemble_full_in(&m, N_X, &basis, DEFAULT_MAX_DIM).unwrap();
        let comm = commutator_h_p0(&op, &band).unwrap().norm();
        let ha = eigvalsh(&assemble_adiabatic(&m, &band, &adiabatic_potential(&band, &m).unwrap(), None, None).unwrap().matrix)
            .unwrap();
        let j = lift_basis(&band);
        let sector = eigvalsh(&j.t().dot(&op.apply_block(j.view()))).unwrap();
        // the Nyquist mode of the base grid is resolved differently by the two
        // discretisations; the lower half of the spectrum is unaffected
        let spec = (0..N_X / 2).map(|k| (ha[k] - sector[k]).abs()).fold(0.0, f64::max);
        let va = (&adiabatic_potential_general(&band, &m).va - &adiabatic_potential_closed(&m).unwrap())
            .iter()
            .fold(0.0, |a: f64, v| a.max(v.abs()));
        worst = (worst.0.max(comm), worst.1.max(spec), worst.2.max(va));
    }
    let ok = worst.0 <= 1e-12 && worst.1 <= 1e-9 && worst.2 <= 1e-8;
    line(
        2,
        "warped pipeline collapse",
        ok,
        format!("|[H,P0]| {:.1e} (<= 1e-12), sector spectrum {:.1e} (<= 1e-9), V_a routes {:.1e} (<= 1e-8)", worst.0, worst.1, worst.2),
    );
    assert!(ok);
}

#[test]
fn c03_strip_adiabatic_potential_closed_form() {
    let m = strip("0.25 + 0.1*cos(x)", 0.1);
    let band = solve_band(&m, 0, FibreBasis::new(FibreBasisKind::Sine, N_Z).unwrap()).unwrap();
    let va = adiabatic_potential(&band, &m).unwrap().va;
    let err = m
        .base
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let a = 1.25 + 0.1 * x.cos();
            let da = -0.1 * x.sin();
            (va[i] - (PI * PI / 3.0 + 0.25) * (da / a).powi(2)).abs()
        })
        .fold(0.0, f64::max);
    let ok = err <= 1e-8;
    line(3, "strip V_a closed form", ok, format!("max nodal error {err:.1e} (<= 1e-8)"));
    assert!(ok);
}

#[test]
fn c04_commutator_hierarchy() {
    judge(4, "commutator hierarchy", projections(), |r| {
        let (s0, r0) = slope(r, "commutator_0");
        let (s1, r1) = slope(r, "commutator_1");
        let ok = s0 >= 0.9 && s1 >= 1.8 && r0 <= 0.15 && r1 <= 0.15;
        (ok, format!("slopes {s0:.3} (>= 0.9), {s1:.3} (>= 1.8); residuals {r0:.3}, {r1:.3} (<= 0.15)"))
    });
}

#[test]
fn c05_low_energy_eigenvalue_gaps() {
    judge(5, "low-energy eigenvalue gaps", convergence(), |r| {
        let s: Vec<f64> = (0..3).map(|j| slope(r, &format!("gap_{j}")).0).collect();
        let ok = s.iter().all(|&v| (2.7..=3.5).contains(&v));
        (ok, format!("slopes {:.3}, {:.3}, {:.3} (in [2.7, 3.5])", s[0], s[1], s[2]))
    });
}

#[test]
fn c06_bounded_energy_hausdorff_rates() {
    judge(6, "bounded-energy Hausdorff rates", convergence(), |r| {
        let (a, _) = slope(r, "hausdorff_a");
        let (am, _) = slope(r, "hausdorff_am");
        let ok = a >= 1.8 && am >= 2.6 && am - a >= 0.5;
        (ok, format!("H_a {a:.3} (>= 1.8), H_a+M {am:.3} (>= 2.6), gain {:.3} (>= 0.5)", am - a))
    });
}

#[test]
fn c07_projection_invariants() {
    judge(7, "projection and unitary invariants", projections(), |r| {
        let worst = |suffix: &str| {
            r.checks.iter().filter(|c| c.name.ends_with(suffix)).map(|c| c.value).fold(0.0, f64::max)
        };
        let (idem, orth, inter) = (worst(".p_eps_idempotency"), worst(".orthogonality"), worst(".intertwining"));
        let (sp, _) = slope(r, "p_distance");
        let ok = idem <= 1e-12 && orth <= 1e-10 && inter <= 1e-10 && sp >= 0.9;
        (ok, format!("|P^2-P| {idem:.1e} (<= 1e-12), |U^TU-I| {orth:.1e}, |(1-P)UP0| {inter:.1e} (<= 1e-10), |P-P0| slope {sp:.3} (>= 0.9)"))
    });
}

#[test]
fn c08_dynamics() {
    judge(8, "dynamics", dynamics(), |r| {
        let (s, _) = slope(r, "error");
        let dt = r.checks.iter().filter(|c| c.name.ends_with(".dt_change")).map(|c| c.value).fold(0.0, f64::max);
        let ok = s >= 1.8 && dt < 0.01;
        (ok, format!("error slope {s:.3} (>= 1.8), largest dt-halving change {:.2}% (< 1%)", 100.0 * dt))
    });
}

#[test]
fn c09_eigenfunction_residuals() {
    judge(9, "eigenfunction residuals", convergence(), |r| {
        let (w1, _) = slope(r, "r_w1");
        let (l2, _) = slope(r, "r_l2");
        let ok = w1 >= 0.3 && l2 >= 1.3;
        (ok, format!("r_W1 slope {w1:.3} (>= 0.3), r_L2 slope {l2:.3} (>= 1.3)"))
    });
}

#[test]
fn c10_self_convergence_guard() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, study) in [("convergence", convergence()), ("projections", projections()), ("dynamics", dynamics())] {
        match study {
            Ok(r) => match &r.guard {
                Some(g) => {
                    ok &= g.change < 1e-9;
                    parts.push(format!("{name} {:.1e}", g.change));
                }
                None => {
                    ok = false;
                    parts.push(format!("{name} missing"));
                }
            },
            Err(e) => {
                ok = false;
                parts.push(format!("{name} voided: {e}"));
            }
        }
    }
    line(10, "self-convergence guard", ok, format!("{} (< 1e-9)", parts.join(", ")));
    assert!(ok);
}
