//! Projection-free time stepping for constrained gradient flows.
//!
//! Each step solves for a rate (`d_t u¹` in the initial Euler step, the BDF2
//! derivative `u̇ⁿ` afterwards) in the space of fields that vanish on the
//! Dirichlet nodes and are orthogonal to a reference state at every free
//! node, then updates the state linearly. Iterates are never projected back
//! onto the sphere.

use std::fmt;
use std::str::FromStr;

use crate::diagnostics::{
    audit_identities, constraint_violation, RunReport, StepRecord, StopReason,
};
use crate::error::{Error, Result};
use crate::fem::{
    assemble_mass, assemble_stiffness, block_apply, block_diag3, block_form, linear_combination,
    lumped_masses, restrict, NodalField, SparseMatrix,
};
use crate::kkt::{assemble_constraint_rows, default_row_drop_tol, solve_kkt, KktSystem, DEFAULT_TOL};
use crate::mesh::TriMesh;
use crate::seq_calculus::{StepSize, G11, G12, G22};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Every step is a linearized implicit Euler step against the latest iterate.
    Euler,
    /// One Euler step, then BDF2 steps with extrapolated constraint.
    Bdf2,
}

/// Inner product defining the gradient flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    L2,
    H1,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Euler => "euler",
            Method::Bdf2 => "bdf2",
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::L2 => "l2",
            Metric::H1 => "h1",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Method::Euler),
            "bdf2" => Ok(Method::Bdf2),
            _ => Err(Error::Parse(format!("unknown method {s:?}"))),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Metric::L2),
            "h1" => Ok(Metric::H1),
            _ => Err(Error::Parse(format!("unknown metric {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FlowConfig {
    pub method: Method,
    pub metric: Metric,
    pub tau: StepSize,
    pub eps_stop: f64,
    pub t_max: f64,
    pub max_steps: usize,
    pub solver_tol: f64,
    /// Energy of the exact minimizer, used for `δ_ener`.
    pub reference_energy: Option<f64>,
    /// Keep the per-step trace in the report.
    pub record_trace: bool,
}

impl FlowConfig {
    pub fn new(method: Method, metric: Metric, tau: StepSize) -> Self {
        FlowConfig {
            method,
            metric,
            tau,
            eps_stop: 1e-3,
            t_max: 1e6,
            max_steps: 1_000_000,
            solver_tol: DEFAULT_TOL,
            reference_energy: None,
            record_trace: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps_stop > 0.0) {
            return Err(Error::InvalidArgument("eps_stop must be positive".into()));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidArgument("t_max must be positive".into()));
        }
        if self.max_steps < 2 {
            return Err(Error::InvalidArgument("max_steps must be at least 2".into()));
        }
        Ok(())
    }
}

/// Linearization of a pointwise constraint around a reference state.
pub trait LinearizedConstraint: Send + Sync {
    /// Rows of `g(û; ·)` acting on free-node unknowns (component-major).
    fn rows(&self, u_hat: &NodalField, free_nodes: &[usize]) -> SparseMatrix;

    /// Nodal values of `G(u)`.
    fn violation(&self, u: &NodalField) -> Vec<f64>;
}

/// `G(u) = |u|² − 1` imposed at the nodes.
#[derive(Debug, Clone, Copy, Default)]
pub struct SphereConstraint;

impl LinearizedConstraint for SphereConstraint {
    fn rows(&self, u_hat: &NodalField, free_nodes: &[usize]) -> SparseMatrix {
        assemble_constraint_rows(u_hat, free_nodes, default_row_drop_tol(u_hat, free_nodes))
    }

    fn violation(&self, u: &NodalField) -> Vec<f64> {
        u.nodal_norm_sq().into_iter().map(|s| s - 1.0).collect()
    }
}

/// Minimize `½ a(u,u) − b(u)` subject to a nodal constraint, with both flow
/// metrics available.
pub struct EnergySystem {
    num_nodes: usize,
    free_nodes: Vec<usize>,
    /// `a` on all nodes (scalar, applied per component).
    energy_form: SparseMatrix,
    /// `b`, component-major over all nodes.
    load: Vec<f64>,
    lumped: Vec<f64>,
    energy_ff: SparseMatrix,
    mass_ff: SparseMatrix,
    h1_ff: SparseMatrix,
    constraint: Box<dyn LinearizedConstraint>,
}

impl EnergySystem {
    /// General constructor from scalar forms on all nodes.
    pub fn new(
        energy_form: SparseMatrix,
        load: Vec<f64>,
        mass: &SparseMatrix,
        h1_form: &SparseMatrix,
        lumped: Vec<f64>,
        free_nodes: Vec<usize>,
        constraint: Box<dyn LinearizedConstraint>,
    ) -> Result<Self> {
        let n = energy_form.rows();
        for (what, found) in [
            ("load vector", load.len() / 3),
            ("mass matrix", mass.rows()),
            ("H1 form", h1_form.rows()),
            ("lumped masses", lumped.len()),
        ] {
            if found != n {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: n,
                    found,
                });
            }
        }
        if load.len() != 3 * n {
            return Err(Error::DimensionMismatch {
                what: "load vector",
                expected: 3 * n,
                found: load.len(),
            });
        }
        Ok(EnergySystem {
            num_nodes: n,
            energy_ff: restrict(&energy_form, &free_nodes),
            mass_ff: restrict(mass, &free_nodes),
            h1_ff: restrict(h1_form, &free_nodes),
            free_nodes,
            energy_form,
            load,
            lumped,
            constraint,
        })
    }

    /// Dirichlet energy with the nodal sphere constraint on a mesh.
    pub fn harmonic_map(mesh: &TriMesh) -> Self {
        let k = assemble_stiffness(mesh);
        let m = assemble_mass(mesh, false);
        let n = mesh.num_vertices();
        EnergySystem::new(
            k.clone(),
            vec![0.0; 3 * n],
            &m,
            &k,
            lumped_masses(mesh),
            mesh.free_nodes(),
            Box::new(SphereConstraint),
        )
        .expect("consistent assembly")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn energy_form(&self) -> &SparseMatrix {
        &self.energy_form
    }

    pub fn lumped_masses(&self) -> &[f64] {
        &self.lumped
    }

    fn metric_ff(&self, metric: Metric) -> &SparseMatrix {
        match metric {
            Metric::L2 => &self.mass_ff,
            Metric::H1 => &self.h1_ff,
        }
    }

    /// `½ a(u,u) − b(u)`.
    pub fn energy(&self, u: &NodalField) -> f64 {
        0.5 * block_form(&self.energy_form, u.as_slice(), u.as_slice()) - self.load_pairing(u.as_slice())
    }

    fn load_pairing(&self, x: &[f64]) -> f64 {
        self.load.iter().zip(x).map(|(b, x)| b * x).sum()
    }

    /// Free-node unknowns of a component-major vector on all nodes.
    pub fn gather(&self, full: &[f64]) -> Vec<f64> {
        let n = self.num_nodes;
        (0..3)
            .flat_map(|c| self.free_nodes.iter().map(move |&z| full[c * n + z]))
            .collect()
    }

    /// Extends free-node unknowns by zero on the Dirichlet nodes.
    pub fn scatter(&self, free: &[f64]) -> NodalField {
        let n = self.num_nodes;
        let nf = self.free_nodes.len();
        let mut out = NodalField::zeros(n);
        let data = out.as_mut_slice();
        for c in 0..3 {
            for (k, &z) in self.free_nodes.iter().enumerate() {
                data[c * n + z] = free[c * nf + k];
            }
        }
        out
    }

    /// `‖v‖_⋆` of a free-node vector.
    pub fn metric_norm(&self, metric: Metric, v_free: &[f64]) -> f64 {
        block_form(self.metric_ff(metric), v_free, v_free).max(0.0).sqrt()
    }

    /// L² norm of a free-node vector (consistent mass).
    pub fn l2_norm(&self, v_free: &[f64]) -> f64 {
        block_form(&self.mass_ff, v_free, v_free).max(0.0).sqrt()
    }

    /// `a(v, v)` of a free-node vector.
    pub fn energy_norm_sq(&self, v_free: &[f64]) -> f64 {
        block_form(&self.energy_ff, v_free, v_free)
    }
}

/// The last states of a run: `current = uⁿ`, `previous = uⁿ⁻¹`,
/// `before_previous = uⁿ⁻²` (unset until `n ≥ 2`), and `d_t u¹`.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    pub current: NodalField,
    pub previous: NodalField,
    pub before_previous: Option<NodalField>,
    pub dt_u1: NodalField,
    pub step: usize,
}

impl HistoryWindow {
    /// Window after the initial step.
    pub fn start(u0: NodalField, u1: NodalField, dt_u1: NodalField) -> Self {
        HistoryWindow {
            current: u1,
            previous: u0,
            before_previous: None,
            dt_u1,
            step: 1,
        }
    }

    pub fn push(&mut self, next: NodalField) {
        let prev = std::mem::replace(&mut self.current, next);
        let prev2 = std::mem::replace(&mut self.previous, prev);
        self.before_previous = Some(prev2);
        self.step += 1;
    }
}

/// Step operators of one run; the saddle-point matrices are assembled once.
pub struct FlowSolver<'a> {
    sys: &'a EnergySystem,
    cfg: FlowConfig,
    /// `metric + τ a` (Euler steps).
    euler_matrix: SparseMatrix,
    /// `metric + 2τ/3 a` (BDF2 steps).
    bdf2_matrix: SparseMatrix,
}

/// Result of one step: the new state and the solved rate.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: NodalField,
    pub rate: NodalField,
    /// Free-node unknowns of `rate`.
    pub rate_free: Vec<f64>,
}

impl<'a> FlowSolver<'a> {
    pub fn new(sys: &'a EnergySystem, cfg: FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let tau = cfg.tau.get();
        let metric = sys.metric_ff(cfg.metric);
        Ok(FlowSolver {
            sys,
            cfg,
            euler_matrix: block_diag3(&linear_combination(1.0, metric, tau, &sys.energy_ff)),
            bdf2_matrix: block_diag3(&linear_combination(
                1.0,
                metric,
                2.0 * tau / 3.0,
                &sys.energy_ff,
            )),
        })
    }

    fn constrained_rate(
        &self,
        matrix: &SparseMatrix,
        u_hat: &NodalField,
        force: &[f64],
    ) -> Result<(NodalField, Vec<f64>)> {
        let g = self.sys.constraint.rows(u_hat, &self.sys.free_nodes);
        let rhs = self.sys.gather(force);
        let sol = solve_kkt(
            &KktSystem {
                matrix,
                constraints: &g,
                rhs: &rhs,
            },
            self.cfg.solver_tol,
        )?;
        Ok((self.sys.scatter(&sol.primal), sol.primal))
    }

    /// Linearized implicit Euler step from `u_prev`:
    /// `(d_t u, v)_⋆ + a(u_prev + τ d_t u, v) = b(v)` with `d_t u · u_prev = 0`.
    pub fn euler_step(&self, u_prev: &NodalField) -> Result<StepOutput> {
        let au = block_apply(&self.sys.energy_form, u_prev.as_slice());
        let force: Vec<f64> = self.sys.load.iter().zip(&au).map(|(b, a)| b - a).collect();
        let (rate, rate_free) = self.constrained_rate(&self.euler_matrix, u_prev, &force)?;
        let tau = self.cfg.tau.get();
        let mut state = u_prev.clone();
        for (s, r) in state.as_mut_slice().iter_mut().zip(rate.as_slice()) {
            *s += tau * r;
        }
        Ok(StepOutput {
            state,
            rate,
            rate_free,
        })
    }

    /// BDF2 step from `(uⁿ⁻¹, uⁿ⁻²) = (hist.current, hist.previous)`:
    /// `(u̇, v)_⋆ + ⅓ a(4uⁿ⁻¹ − uⁿ⁻² + 2τ u̇, v) = b(v)` with `u̇ · ûⁿ = 0`.
    pub fn bdf2_step(&self, hist: &HistoryWindow) -> Result<StepOutput> {
        let u1 = hist.current.as_slice();
        let u0 = hist.previous.as_slice();
        let combo: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| 4.0 * a - b).collect();
        let u_hat: Vec<f64> = u1.iter().zip(u0).map(|(a, b)| 2.0 * a - b).collect();
        let u_hat = NodalField::from_component_major(self.sys.num_nodes, u_hat)?;
        let a_combo = block_apply(&self.sys.energy_form, &combo);
        let force: Vec<f64> = self
            .sys
            .load
            .iter()
            .zip(&a_combo)
            .map(|(b, a)| b - a / 3.0)
            .collect();
        let (rate, rate_free) = self.constrained_rate(&self.bdf2_matrix, &u_hat, &force)?;
        let tau = self.cfg.tau.get();
        let state: Vec<f64> = combo
            .iter()
            .zip(rate.as_slice())
            .map(|(c, r)| (c + 2.0 * tau * r) / 3.0)
            .collect();
        Ok(StepOutput {
            state: NodalField::from_component_major(self.sys.num_nodes, state)?,
            rate,
            rate_free,
        })
    }
}

/// Initial step: returns `(u¹, d_t u¹)`.
pub fn euler_init_step(
    u0: &NodalField,
    sys: &EnergySystem,
    cfg: &FlowConfig,
) -> Result<(NodalField, NodalField)> {
    let out = FlowSolver::new(sys, *cfg)?.euler_step(u0)?;
    Ok((out.state, out.rate))
}

/// One BDF2 step: returns `(uⁿ, u̇ⁿ)`.
pub fn bdf2_step(
    hist: &HistoryWindow,
    sys: &EnergySystem,
    cfg: &FlowConfig,
) -> Result<(NodalField, NodalField)> {
    let out = FlowSolver::new(sys, *cfg)?.bdf2_step(hist)?;
    Ok((out.state, out.rate))
}

fn sq3(v: [f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

fn diff(a: &NodalField, b: &NodalField, scale: f64) -> NodalField {
    let d: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y) * scale)
        .collect();
    NodalField::from_component_major(a.num_nodes(), d).expect("same size")
}

fn monotonicity_defect(new: &NodalField, old: &NodalField) -> f64 {
    (0..new.num_nodes())
        .map(|z| (sq3(old.node(z)).sqrt() - sq3(new.node(z)).sqrt()).max(0.0))
        .fold(0.0, f64::max)
}

/// Running sums for the closed form of the constraint violation.
#[derive(Default)]
struct ClosedForm {
    /// `‖d_t u¹‖²` in lumped quadrature.
    first_rate: f64,
    /// `Σ aᵢ`, `aᵢ = ‖d_t² uⁱ‖²_lumped`.
    sum: f64,
    /// `Σ 3^{-(n+1-i)} aᵢ`.
    damped: f64,
    /// Euler: `Σ ‖d_t uⁱ‖²_lumped`.
    euler_sum: f64,
}

impl ClosedForm {
    fn bdf2_value(&self, n: usize, tau: f64) -> f64 {
        1.5 * (1.0 - 3f64.powi(-(n as i32))) * tau * tau * self.first_rate
            + 1.5 * tau.powi(4) * (self.sum - self.damped)
    }
}

fn rel(defect: f64, scale: f64) -> f64 {
    defect / (1.0 + scale.abs())
}

/// Runs the flow until the stopping rule, the final time, or the step cap.
///
/// The report holds the per-step trace and the residuals of the discrete
/// identities; the iteration itself keeps only the last three states.
pub fn run_flow(u0: &NodalField, sys: &EnergySystem, cfg: &FlowConfig) -> Result<RunReport> {
    if u0.num_nodes() != sys.num_nodes() {
        return Err(Error::DimensionMismatch {
            what: "initial field",
            expected: sys.num_nodes(),
            found: u0.num_nodes(),
        });
    }
    let infeasible = sys.constraint.violation(u0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(infeasible <= 1e-10) {
        return Err(Error::InvalidArgument(format!(
            "initial field violates the constraint by {infeasible:e}"
        )));
    }
    let solver = FlowSolver::new(sys, *cfg)?;
    let tau = cfg.tau.get();
    let masses = sys.lumped_masses();
    let free = sys.free_nodes();
    let metric = cfg.metric;

    let mut trace: Vec<StepRecord> = Vec::new();
    let mut closed = ClosedForm::default();
    let mut a_sq = 0.0;

    // initial Euler step
    let e0 = sys.energy(u0);
    let init = solver.euler_step(u0)?;
    let (u1, dt_u1) = (init.state, init.rate);
    let norm_star = sys.metric_norm(metric, &init.rate_free);
    let norm_l2 = sys.l2_norm(&init.rate_free);
    let b_sq = norm_l2 * norm_l2;
    let e1 = sys.energy(&u1);
    let defect = e1 + tau * norm_star * norm_star + 0.5 * tau * tau * sys.energy_norm_sq(&init.rate_free) - e0;
    let init_nodal = free
        .iter()
        .map(|&z| {
            let r = sq3(u1.node(z)) - sq3(u0.node(z)) - tau * tau * sq3(dt_u1.node(z));
            r.abs() / (1.0 + sq3(u1.node(z)))
        })
        .fold(0.0, f64::max);
    closed.first_rate = crate::fem::lumped_norm_sq(&dt_u1, masses);
    closed.euler_sum = closed.first_rate;
    let delta1 = constraint_violation(&u1, masses);
    let first_closed = tau * tau * closed.first_rate;
    trace.push(StepRecord {
        n: 1,
        time: tau,
        norm_rate_star: norm_star,
        norm_dtu_l2: norm_l2,
        energy: e1,
        delta_uni: delta1,
        res_energy_law: rel(defect, e0),
        res_nodal_recursion: init_nodal,
        res_closed_form: Some(rel(delta1 - first_closed, delta1)),
        monotonicity_defect: Some(monotonicity_defect(&u1, u0)),
    });

    let mut hist = HistoryWindow::start(u0.clone(), u1, dt_u1);
    // G-energy Eⁿ = |(uⁿ, uⁿ⁻¹)|²_{G,a} − ½ b(3uⁿ − uⁿ⁻¹)
    let g_energy = |x: &NodalField, y: &NodalField| {
        let a = sys.energy_form();
        let (xs, ys) = (x.as_slice(), y.as_slice());
        let lin: Vec<f64> = xs.iter().zip(ys).map(|(p, q)| 3.0 * p - q).collect();
        G11 * block_form(a, xs, xs) + 2.0 * G12 * block_form(a, xs, ys) + G22 * block_form(a, ys, ys)
            - 0.5 * sys.load_pairing(&lin)
    };
    let mut g_prev = g_energy(&hist.current, &hist.previous);
    let g_scale = g_prev;

    let mut stop_reason = None;
    if cfg.method == Method::Euler && norm_star + norm_l2 <= cfg.eps_stop {
        stop_reason = Some(StopReason::Tolerance);
    }

    while stop_reason.is_none() {
        let n = hist.step + 1;
        if n as f64 * tau > cfg.t_max + 1e-12 * tau {
            stop_reason = Some(StopReason::FinalTime);
            break;
        }
        if n > cfg.max_steps {
            stop_reason = Some(StopReason::MaxSteps);
            break;
        }
        let e_prev = sys.energy(&hist.current);
        let out = match cfg.method {
            Method::Euler => solver.euler_step(&hist.current)?,
            Method::Bdf2 => solver.bdf2_step(&hist)?,
        };
        let new = out.state;
        let dtu = diff(&new, &hist.current, 1.0 / tau);
        let dtu_free = sys.gather(dtu.as_slice());
        let norm_l2 = sys.l2_norm(&dtu_free);
        let norm_star = sys.metric_norm(metric, &out.rate_free);
        let d2 = {
            let raw: Vec<f64> = new
                .as_slice()
                .iter()
                .zip(hist.current.as_slice())
                .zip(hist.previous.as_slice())
                .map(|((a, b), c)| (a - 2.0 * b + c) / (tau * tau))
                .collect();
            NodalField::from_component_major(new.num_nodes(), raw)?
        };
        let d2_free = sys.gather(d2.as_slice());
        a_sq += tau * tau * sys.l2_norm(&d2_free).powi(2);
        let energy = sys.energy(&new);
        let delta = constraint_violation(&new, masses);

        let (res_law, res_nodal, res_closed) = match cfg.method {
            Method::Bdf2 => {
                let g_new = g_energy(&new, &hist.current);
                let defect = tau * norm_star * norm_star + g_new - g_prev
                    + 0.25 * tau.powi(4) * sys.energy_norm_sq(&d2_free);
                g_prev = g_new;
                let nodal = crate::diagnostics::nodal_recursion_residual(
                    &new,
                    &hist.current,
                    &hist.previous,
                    free,
                );
                let a = crate::fem::lumped_norm_sq(&d2, masses);
                closed.sum += a;
                closed.damped = (closed.damped + a) / 3.0;
                let predicted = closed.bdf2_value(n, tau);
                (rel(defect, g_scale), nodal, rel(delta - predicted, delta))
            }
            Method::Euler => {
                let defect = energy + tau * norm_star * norm_star
                    + 0.5 * tau * tau * sys.energy_norm_sq(&out.rate_free)
                    - e_prev;
                let nodal = free
                    .iter()
                    .map(|&z| {
                        let r = sq3(new.node(z)) - sq3(hist.current.node(z))
                            - tau * tau * sq3(out.rate.node(z));
                        r.abs() / (1.0 + sq3(new.node(z)))
                    })
                    .fold(0.0, f64::max);
                closed.euler_sum += crate::fem::lumped_norm_sq(&out.rate, masses);
                let predicted = tau * tau * closed.euler_sum;
                (rel(defect, e0), nodal, rel(delta - predicted, delta))
            }
        };
        let mono = monotonicity_defect(&new, &hist.current);
        trace.push(StepRecord {
            n,
            time: n as f64 * tau,
            norm_rate_star: norm_star,
            norm_dtu_l2: norm_l2,
            energy,
            delta_uni: delta,
            res_energy_law: res_law,
            res_nodal_recursion: res_nodal,
            res_closed_form: Some(res_closed),
            monotonicity_defect: Some(mono),
        });
        hist.push(new);
        if norm_star + norm_l2 <= cfg.eps_stop {
            stop_reason = Some(StopReason::Tolerance);
        }
    }

    let stop_reason = stop_reason.expect("loop exits with a reason");
    let audit = audit_identities(&trace, cfg.method);
    let last = trace.last().expect("at least one step");
    let energy_final = last.energy;
    let report = RunReport {
        method: cfg.method,
        metric: cfg.metric,
        tau,
        n_stop: last.n,
        converged: stop_reason == StopReason::Tolerance,
        stop_reason,
        delta_uni: last.delta_uni,
        delta_ener: cfg.reference_energy.map(|r| (energy_final - r).abs()),
        energy_final,
        a_sq,
        b_sq,
        trace: if cfg.record_trace { trace } else { Vec::new() },
        audit,
        final_state: hist.current,
    };
    Ok(report)
}
