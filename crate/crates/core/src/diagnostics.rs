//! Reported quantities (constraint violation, energy error, discrete
//! regularity measures, experimental orders of convergence) and the audit
//! of the exact discrete identities satisfied by the schemes.

use crate::fem::{block_form, NodalField, SparseMatrix};
use crate::flow::{Method, Metric};

/// Tolerance used by [`AuditSummary::passes`] for every identity residual.
pub const IDENTITY_TOL: f64 = 1e-8;
/// Slack allowed on nodal monotonicity of `|uⁿ(z)|`.
pub const MONOTONICITY_SLACK: f64 = 1e-9;

/// One row of the per-step trace.
///
/// Energy-law residuals are signed and share a fixed per-run scale, so the
/// telescoped identity can be audited by summing them.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub n: usize,
    pub time: f64,
    /// `‖u̇ⁿ‖_⋆` (BDF2, n ≥ 2) or `‖d_t uⁿ‖_⋆`.
    pub norm_rate_star: f64,
    /// `‖d_t uⁿ‖` in L².
    pub norm_dtu_l2: f64,
    pub energy: f64,
    pub delta_uni: f64,
    pub res_energy_law: f64,
    pub res_nodal_recursion: f64,
    /// `|δ_uni − closed form| / (1 + δ_uni)`; `None` when not recorded.
    pub res_closed_form: Option<f64>,
    /// `max_z (|uⁿ⁻¹(z)| − |uⁿ(z)|)⁺`.
    pub monotonicity_defect: Option<f64>,
}

impl StepRecord {
    pub const CSV_HEADER: &'static str =
        "n,time,norm_udot_star,norm_dtu_l2,energy,delta_uni,res_energy_law,res_nodal_recursion";

    /// Trace line with 17 significant digits.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.n,
            self.time,
            self.norm_rate_star,
            self.norm_dtu_l2,
            self.energy,
            self.delta_uni,
            self.res_energy_law,
            self.res_nodal_recursion
        )
    }

    pub fn from_csv(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return None;
        }
        let x = |i: usize| f[i].trim().parse::<f64>().ok();
        Some(StepRecord {
            n: f[0].trim().parse().ok()?,
            time: x(1)?,
            norm_rate_star: x(2)?,
            norm_dtu_l2: x(3)?,
            energy: x(4)?,
            delta_uni: x(5)?,
            res_energy_law: x(6)?,
            res_nodal_recursion: x(7)?,
            res_closed_form: None,
            monotonicity_defect: None,
        })
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// `‖u̇ⁿ‖_⋆ + ‖d_t uⁿ‖ ≤ ε_stop`.
    Tolerance,
    /// `nτ ≥ T`.
    FinalTime,
    MaxSteps,
}

/// Maximum residuals of the discrete identities; `None` marks an audit
/// that does not apply to the scheme or was not recorded.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AuditSummary {
    /// Energy equality of the initial Euler step.
    pub init_energy: Option<f64>,
    /// Nodal identity `|u¹|² − 1 = τ²|d_t u¹|²`.
    pub init_nodal: Option<f64>,
    /// Telescoped G-norm energy law of the BDF2 steps.
    pub energy_law: Option<f64>,
    /// Nodal three-term recursion of the BDF2 steps.
    pub nodal_recursion: Option<f64>,
    /// Closed form of `δ_uni` at the final step.
    pub closed_form: Option<f64>,
    pub monotonicity: Option<f64>,
}

impl AuditSummary {
    pub fn passes(&self) -> bool {
        let ok = |r: Option<f64>, tol: f64| r.map_or(true, |r| r.is_finite() && r <= tol);
        ok(self.init_energy, IDENTITY_TOL)
            && ok(self.init_nodal, IDENTITY_TOL)
            && ok(self.energy_law, IDENTITY_TOL)
            && ok(self.nodal_recursion, IDENTITY_TOL)
            && ok(self.closed_form, IDENTITY_TOL)
            && ok(self.monotonicity, MONOTONICITY_SLACK)
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let line = |name: &str, r: Option<f64>, tol: f64| match r {
            Some(r) => format!(
                "{name:<18} {r:.3e}  {}\n",
                if r.is_finite() && r <= tol { "pass" } else { "FAIL" }
            ),
            None => format!("{name:<18} skipped\n"),
        };
        let mut s = String::new();
        s += &line("init_energy", self.init_energy, IDENTITY_TOL);
        s += &line("init_nodal", self.init_nodal, IDENTITY_TOL);
        s += &line("energy_law", self.energy_law, IDENTITY_TOL);
        s += &line("nodal_recursion", self.nodal_recursion, IDENTITY_TOL);
        s += &line("closed_form", self.closed_form, IDENTITY_TOL);
        s += &line("monotonicity", self.monotonicity, MONOTONICITY_SLACK);
        s
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub method: Method,
    pub metric: Metric,
    pub tau: f64,
    pub n_stop: usize,
    pub converged: bool,
    pub stop_reason: StopReason,
    pub delta_uni: f64,
    pub delta_ener: Option<f64>,
    pub energy_final: f64,
    /// `τ² Σₙ₌₂^{N_stop} ‖d_t² uⁿ‖²`.
    pub a_sq: f64,
    /// `‖d_t u¹‖²`.
    pub b_sq: f64,
    pub trace: Vec<StepRecord>,
    pub audit: AuditSummary,
    pub final_state: NodalField,
}

/// `‖I_h(|u|² − 1)‖_{L¹}` by lumped quadrature.
pub fn constraint_violation(u: &NodalField, lumped_masses: &[f64]) -> f64 {
    u.nodal_norm_sq()
        .iter()
        .zip(lumped_masses)
        .map(|(s, m)| m * (s - 1.0).abs())
        .sum()
}

/// `|½ Σ uᵀKu − reference|`.
pub fn energy_error(u: &NodalField, stiffness: &SparseMatrix, reference_energy: f64) -> f64 {
    (0.5 * block_form(stiffness, u.as_slice(), u.as_slice()) - reference_energy).abs()
}

/// `log₂(coarse/fine)`; `None` unless both inputs are positive and finite.
pub fn eoc(coarse: f64, fine: f64) -> Option<f64> {
    (coarse > 0.0 && fine > 0.0 && coarse.is_finite() && fine.is_finite())
        .then(|| (coarse / fine).log2())
}

/// `max_z |3/2|uⁿ|² − 2|uⁿ⁻¹|² + ½|uⁿ⁻²|² − 3/2 τ⁴|d_t² uⁿ|²| / (1 + |uⁿ|²)`
/// over the given nodes.
pub fn nodal_recursion_residual(
    u_n: &NodalField,
    u_prev: &NodalField,
    u_prev2: &NodalField,
    nodes: &[usize],
) -> f64 {
    let sq = |v: [f64; 3]| v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    nodes
        .iter()
        .map(|&z| {
            let (a, b, c) = (u_n.node(z), u_prev.node(z), u_prev2.node(z));
            let d2 = [
                a[0] - 2.0 * b[0] + c[0],
                a[1] - 2.0 * b[1] + c[1],
                a[2] - 2.0 * b[2] + c[2],
            ];
            // τ⁴ |d_t² u|² = |uⁿ − 2uⁿ⁻¹ + uⁿ⁻²|²
            let r = 1.5 * sq(a) - 2.0 * sq(b) + 0.5 * sq(c) - 1.5 * sq(d2);
            r.abs() / (1.0 + sq(a))
        })
        .fold(0.0, f64::max)
}

/// Residual summary from a per-step trace.
///
/// The trace convention (see [`StepRecord`]) is: row `n = 1` carries the
/// initial-step identities, later rows the scheme's own per-step
/// identities, with energy residuals signed on a common scale.
pub fn audit_identities(trace: &[StepRecord], method: Method) -> AuditSummary {
    let mut s = AuditSummary::default();
    if let Some(first) = trace.iter().find(|r| r.n == 1) {
        s.init_energy = Some(first.res_energy_law.abs());
        s.init_nodal = Some(first.res_nodal_recursion.abs());
    }
    let later = trace.iter().filter(|r| r.n >= 2);
    if method == Method::Bdf2 && trace.iter().any(|r| r.n >= 2) {
        s.energy_law = Some(later.clone().map(|r| r.res_energy_law).sum::<f64>().abs());
        s.nodal_recursion = Some(
            later
                .clone()
                .map(|r| r.res_nodal_recursion.abs())
                .fold(0.0, f64::max),
        );
    }
    if let Some(last) = trace.last() {
        s.closed_form = last.res_closed_form.map(f64::abs);
    }
    let mono: Vec<f64> = trace.iter().filter_map(|r| r.monotonicity_defect).collect();
    if !mono.is_empty() {
        s.monotonicity = Some(mono.into_iter().fold(0.0, f64::max));
    }
    s
}

/// One row of a step-size sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub tau: f64,
    pub report: RunReport,
    pub eoc_uni: Option<f64>,
    pub eoc_ener: Option<f64>,
}

/// Rows in order of decreasing step size, each half the previous.
#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str =
        "tau,N_stop,delta_uni,eoc_uni,A2,B2,energy,delta_ener,eoc_ener,converged";

    /// Builds the table; rates involving a non-converged row are suppressed.
    pub fn from_reports(reports: Vec<RunReport>) -> crate::error::Result<Self> {
        for w in reports.windows(2) {
            if (w[1].tau * 2.0 - w[0].tau).abs() > 1e-12 * w[0].tau {
                return Err(crate::error::Error::InvalidArgument(format!(
                    "sweep step sizes must halve: {} then {}",
                    w[0].tau, w[1].tau
                )));
            }
        }
        let mut rows: Vec<SweepRow> = Vec::with_capacity(reports.len());
        for report in reports {
            let (eoc_uni, eoc_ener) = match rows.last() {
                Some(prev) if prev.report.converged && report.converged => (
                    eoc(prev.report.delta_uni, report.delta_uni),
                    match (prev.report.delta_ener, report.delta_ener) {
                        (Some(a), Some(b)) => eoc(a, b),
                        _ => None,
                    },
                ),
                _ => (None, None),
            };
            rows.push(SweepRow {
                tau: report.tau,
                report,
                eoc_uni,
                eoc_ener,
            });
        }
        Ok(SweepTable { rows })
    }

    /// CSV with a header row, 6 significant digits per float.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s += &csv_row(&r.report, r.eoc_uni, r.eoc_ener);
            s.push('\n');
        }
        s
    }
}

/// Six significant digits in scientific notation.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

fn opt6(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_default()
}

/// A single summary row in the sweep CSV schema.
pub fn csv_row(r: &RunReport, eoc_uni: Option<f64>, eoc_ener: Option<f64>) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        sig6(r.tau),
        r.n_stop,
        sig6(r.delta_uni),
        opt6(eoc_uni),
        sig6(r.a_sq),
        sig6(r.b_sq),
        sig6(r.energy_final),
        opt6(r.delta_ener),
        opt6(eoc_ener),
        r.converged
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble_stiffness, lumped_masses};
    use crate::mesh::{build_square_mesh, DirichletBoundary};

    #[test]
    fn eoc_examples() {
        assert!((eoc(4.0e-3, 1.0e-3).unwrap() - 2.0).abs() < 1e-15);
        assert!((eoc(2.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((eoc(1.288e-1, 1.130e-1).unwrap() - 0.19).abs() < 5e-3);
        assert_eq!(eoc(0.0, 1.0), None);
        assert_eq!(eoc(1.0, -1.0), None);
        for s in [1e-6, 3.0, 1e5] {
            assert!((eoc(5.0 * s, 1.3 * s).unwrap() - eoc(5.0, 1.3).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn constraint_violation_examples() {
        let m = build_square_mesh(4, [0.0, 0.0], 1.0, DirichletBoundary::None).unwrap();
        let lm = lumped_masses(&m);
        let n = m.num_vertices();
        let unit = NodalField::from_nodes(&vec![[0.0, 0.6, 0.8]; n]);
        assert!(constraint_violation(&unit, &lm) < 1e-15);
        let c: f64 = 0.21;
        let s = (1.0 + c).sqrt();
        let f = NodalField::from_nodes(&vec![[s, 0.0, 0.0]; n]);
        assert!((constraint_violation(&f, &lm) - c).abs() < 1e-14);
    }

    #[test]
    fn energy_error_examples() {
        let m = build_square_mesh(3, [0.0, 0.0], 1.0, DirichletBoundary::None).unwrap();
        let k = assemble_stiffness(&m);
        let n = m.num_vertices();
        let c = NodalField::from_nodes(&vec![[1.0, 0.0, 0.0]; n]);
        assert!((energy_error(&c, &k, 3.009) - 3.009).abs() < 1e-13);
        let lin = crate::fem::interpolate(&m, |x| [x[0], 0.0, 0.0]);
        assert!(energy_error(&lin, &k, 0.5) < 1e-13);
    }

    #[test]
    fn trace_csv_roundtrip() {
        let r = StepRecord {
            n: 3,
            time: 0.375,
            norm_rate_star: 1.0 / 3.0,
            norm_dtu_l2: 2.5e-7,
            energy: 3.1,
            delta_uni: 1e-4,
            res_energy_law: -2e-17,
            res_nodal_recursion: 0.0,
            res_closed_form: None,
            monotonicity_defect: None,
        };
        assert_eq!(StepRecord::from_csv(&r.to_csv()), Some(r));
        assert_eq!(StepRecord::from_csv("1,2,3"), None);
    }

    #[test]
    fn audit_skips_bdf2_identities_for_euler() {
        let rec = |n, e, r| StepRecord {
            n,
            time: n as f64,
            norm_rate_star: 0.0,
            norm_dtu_l2: 0.0,
            energy: 0.0,
            delta_uni: 0.0,
            res_energy_law: e,
            res_nodal_recursion: r,
            res_closed_form: Some(0.0),
            monotonicity_defect: Some(0.0),
        };
        let trace = vec![rec(1, 1e-15, 1e-16), rec(2, 1e-3, 1e-3)];
        let e = audit_identities(&trace, Method::Euler);
        assert_eq!(e.energy_law, None);
        assert_eq!(e.nodal_recursion, None);
        assert!(e.passes());
        let b = audit_identities(&trace, Method::Bdf2);
        assert_eq!(b.nodal_recursion, Some(1e-3));
        assert!(!b.passes());
        // signed residuals telescope
        let t = vec![rec(1, 0.0, 0.0), rec(2, 1e-3, 0.0), rec(3, -1e-3, 0.0)];
        assert_eq!(audit_identities(&t, Method::Bdf2).energy_law, Some(0.0));
    }
}
