//! Primal-dual solver for the dual problem
//!
//! ```text
//! min B(m, w) = int u_T m(T) + int int K*(m)
//! s.t. m_t + div w = 0, m(0) = m_0, w in m c(x, A)
//! ```
//!
//! Discretisation: `m^1..m^N` and `w^0..w^{N-1}` on the nodes (`N = nt - 1`),
//! the constraint `(m^{k+1} - m^k) / dt + D w^k = 0` with `D` the centered
//! divergence, and left-endpoint time quadrature. The multiplier of constraint
//! `k` is `u^{k+1}`. Iterations are Chambolle-Pock with over-relaxation on the
//! primal variable.
//!
//! The discrete primal problem is
//!
//! ```text
//! A(u, f) = sum_{k<N} dt dx K(f^k) - sum dx u^0 m_0,
//! -(u^{k+1} - u^k) / dt + H(x, G u^{k+1}) <= f^k,  u^N = u_T
//! ```
//!
//! with `G = -D^T` the centered gradient, and `A + B >= 0` whenever `(m, w)`
//! satisfies the constraint exactly.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{DensityField, Point, ScalarField, TorusGrid, VecField, MAX_DIM};
use crate::hj;
use crate::model::SpeedVariant;
use crate::transport::{divergence_centered, gradient_centered, Neighbors};

pub use crate::problem::ProblemInstance;

/// Violation of the cone constraint beyond which `B` is reported infeasible.
pub const CONE_TOL: f64 = 1e-8;
/// Allowed mismatch between `u(T)` and `u_T` in [`evaluate_a`].
pub const TERMINAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Relative duality gap `|A + B| / max(|A|, |B|)` at which to stop.
    pub tol_gap: f64,
    /// Continuity residual `sum dt dx |m_t + div w| / mass` at which to stop.
    pub tol_cont: f64,
    /// Primal step; derived from the operator norm when absent.
    pub tau: Option<f64>,
    /// Dual step; derived from the operator norm when absent.
    pub sigma: Option<f64>,
    /// Over-relaxation `theta` in `[0, 1]`.
    pub over_relax: f64,
    /// `tau / sigma` used when the steps are derived from the operator norm.
    pub step_ratio: f64,
    pub step_rule: StepRule,
}

/// How step sizes are chosen when `tau` and `sigma` are not given.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    /// Scalar steps with `tau sigma |A|^2 = 1`, `|A|` by power iteration.
    #[default]
    Power,
    /// Per-variable steps from the row and column sums of `|A|`:
    /// `dt / 2` for `m`, `dx` for `w`, `1 / (2 / dt + sum 1 / dx)` for `u`.
    Diagonal,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            tol_gap: 1e-4,
            tol_cont: 1e-5,
            tau: None,
            sigma: None,
            over_relax: 1.0,
            step_ratio: 30.0,
            step_rule: StepRule::Power,
        }
    }
}

/// Value of `B`, or the worst cone violation when `(m, w)` is infeasible.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DualValue {
    Finite(f64),
    Infeasible { max_violation: f64, level: usize, node: usize },
}

impl DualValue {
    /// `+inf` when infeasible.
    pub fn value(&self) -> f64 {
        match self {
            DualValue::Finite(v) => *v,
            DualValue::Infeasible { .. } => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, DualValue::Finite(_))
    }
}

/// One row of the iteration history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub iter: usize,
    pub a: f64,
    pub b: f64,
    pub gap: f64,
    pub rel_gap: f64,
    pub cont_residual: f64,
    pub time_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub history: Vec<IterRecord>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_ms: f64,
    /// Primal step for `m` and for `w` (equal unless the diagonal rule is used).
    pub tau: (f64, f64),
    pub sigma: f64,
    pub op_norm: f64,
}

impl Diagnostics {
    pub fn last(&self) -> Option<&IterRecord> {
        self.history.last()
    }

    /// `iter,A,B,gap,cont_residual,time_ms`. Timings vary between runs, so the
    /// column is left empty unless `with_timing` is set.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut s = String::from("iter,A,B,gap,cont_residual,time_ms\n");
        for r in &self.history {
            let t = if with_timing { format!("{:.3}", r.time_ms) } else { String::new() };
            s.push_str(&format!("{},{:e},{:e},{:e},{:e},{}\n", r.iter, r.a, r.b, r.gap, r.cont_residual, t));
        }
        s
    }
}

/// Solver output. `u` is the multiplier with `u(T)` pinned to `u_T` and `u(0)`
/// from one backward step; `w` has zeros on the last level, which carries no
/// momentum.
#[derive(Clone, Debug)]
pub struct OptimalBundle {
    pub u: ScalarField,
    pub f: ScalarField,
    pub m: DensityField,
    pub w: VecField,
    pub diagnostics: Diagnostics,
}

impl OptimalBundle {
    pub fn converged(&self) -> bool {
        self.diagnostics.converged
    }
}

fn check_grid(problem: &ProblemInstance, g: &TorusGrid) -> Result<()> {
    if g != &problem.grid {
        return param("field is not on the problem grid");
    }
    Ok(())
}

pub fn evaluate_b(problem: &ProblemInstance, m: &DensityField, w: &VecField) -> Result<DualValue> {
    check_grid(problem, m.grid())?;
    check_grid(problem, w.grid())?;
    let grid = &problem.grid;
    let nt = grid.nt();
    let mut worst = (0.0, 0, 0);
    for k in 0..nt - 1 {
        for node in 0..grid.n_space() {
            let x = grid.node_point(node);
            let viol = problem.speed.cone_violation(&x, m.get(k, node), &w.get(k, node));
            if viol > worst.0 {
                worst = (viol, k, node);
            }
        }
    }
    if worst.0 > CONE_TOL {
        return Ok(DualValue::Infeasible {
            max_violation: worst.0,
            level: worst.1,
            node: worst.2,
        });
    }
    Ok(DualValue::Finite(b_value(problem, m.values())))
}

/// `B` without the feasibility check; `m` holds all `nt` levels.
fn b_value(problem: &ProblemInstance, m: &[f64]) -> f64 {
    let grid = &problem.grid;
    let n = grid.n_space();
    let last = (grid.nt() - 1) * n;
    let terminal: f64 = problem.terminal.iter().zip(&m[last..]).map(|(a, b)| a * b).sum();
    let running: f64 = (0..grid.nt() - 1)
        .map(|k| m[k * n..(k + 1) * n].iter().map(|&x| problem.cost.conj(x)).sum::<f64>() * grid.dt())
        .sum();
    (terminal + running) * grid.cell_volume()
}

pub fn evaluate_a(problem: &ProblemInstance, u: &ScalarField, f: &ScalarField) -> Result<f64> {
    check_grid(problem, u.grid())?;
    check_grid(problem, f.grid())?;
    let last = problem.grid.nt() - 1;
    let miss = u
        .level(last)
        .iter()
        .zip(&problem.terminal)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if miss > TERMINAL_TOL {
        return param(format!("u(T) differs from u_T by {miss:e}"));
    }
    Ok(a_value(problem, u.values(), f.values()))
}

fn a_value(problem: &ProblemInstance, u: &[f64], f: &[f64]) -> f64 {
    let grid = &problem.grid;
    let n = grid.n_space();
    let running: f64 = (0..grid.nt() - 1)
        .map(|k| f[k * n..(k + 1) * n].iter().map(|&x| problem.cost.cost(x)).sum::<f64>() * grid.dt())
        .sum();
    let reward: f64 = u[..n].iter().zip(&problem.initial).map(|(a, b)| a * b).sum();
    (running - reward) * grid.cell_volume()
}

/// `f = k(m)` nodewise.
pub fn recover_f(problem: &ProblemInstance, m: &DensityField) -> ScalarField {
    let values = m.values().iter().map(|&x| problem.cost.conj_deriv(x)).collect();
    ScalarField::new(m.grid().clone(), values).expect("k of a finite density is finite")
}

/// `v = w / m` where `m > floor`, zero elsewhere.
pub fn recover_velocity(m: &DensityField, w: &VecField, floor: f64) -> Result<VecField> {
    if m.grid() != w.grid() {
        return param("density and momentum live on different grids");
    }
    let d = m.grid().dim();
    let values = w
        .values()
        .chunks(d)
        .zip(m.values())
        .flat_map(|(wi, &mi)| wi.iter().map(move |&c| if mi > floor { c / mi } else { 0.0 }))
        .collect();
    VecField::new(m.grid().clone(), values)
}

/// Relative duality gap `|gap| / max(|A|, |B|)`, or `|gap|` when both vanish.
pub fn relative_gap(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale > 0.0 {
        (a + b).abs() / scale
    } else {
        (a + b).abs()
    }
}

/// Per-node data shared by the iteration.
struct Workspace<'a> {
    problem: &'a ProblemInstance,
    nb: Neighbors,
    points: Vec<Point>,
    /// Ball radius per node (Isotropic only).
    radius: Option<Vec<f64>>,
}

impl<'a> Workspace<'a> {
    fn new(problem: &'a ProblemInstance) -> Self {
        let grid = &problem.grid;
        let points: Vec<Point> = (0..grid.n_space()).map(|i| grid.node_point(i)).collect();
        let radius = match problem.speed.variant() {
            SpeedVariant::Isotropic { radius } => Some(points.iter().map(|x| radius.at(x)).collect()),
            SpeedVariant::FiniteControls { .. } => None,
        };
        Self {
            problem,
            nb: Neighbors::new(grid),
            points,
            radius,
        }
    }

    fn grid(&self) -> &TorusGrid {
        &self.problem.grid
    }

    /// `H(x_i, G u)` for one level.
    fn hamiltonian_level(&self, u: &[f64]) -> Vec<f64> {
        let d = self.grid().dim();
        let mut g = vec![0.0; u.len() * d];
        gradient_centered(self.grid(), &self.nb, u, &mut g);
        g.chunks(d)
            .enumerate()
            .map(|(i, gi)| {
                let mut p = [0.0; MAX_DIM];
                p[..d].copy_from_slice(gi);
                self.problem.speed.hamiltonian(&self.points[i], &p)
            })
            .collect()
    }

    /// Exact prox of `step K*(m) + indicator(w in m c(x, A))` at node `i` for the
    /// ball; prox then projection otherwise.
    ///
    /// With steps `tm` for `m` and `tw` for `w` the prox minimises
    /// `(m - m_bar)^2 / 2tm + |w - w_bar|^2 / 2tw + K*(m)` over the cone.
    fn prox_node(&self, i: usize, m_bar: f64, w_bar: &mut [f64], tm: f64, tw: f64) -> Result<f64> {
        let cost = &self.problem.cost;
        let d = w_bar.len();
        match &self.radius {
            Some(r) => {
                let c = r[i];
                let a = w_bar.iter().map(|x| x * x).sum::<f64>().sqrt();
                let m = cost.prox_conj(m_bar, tm)?;
                if c * m >= a {
                    return Ok(m);
                }
                // Cone active: w = c m w_bar / |w_bar|, and m solves a scalar prox.
                let s = 1.0 / tm + c * c / tw;
                let m = cost.prox_conj((m_bar / tm + c * a / tw) / s, 1.0 / s)?;
                let scale = c * m / a;
                w_bar.iter_mut().for_each(|x| *x *= scale);
                Ok(m)
            }
            None => {
                let m = cost.prox_conj(m_bar, tm)?;
                let mut w = [0.0; MAX_DIM];
                w[..d].copy_from_slice(w_bar);
                let (pm, pw) = self.problem.speed.project_cone(&self.points[i], m, &w);
                w_bar.copy_from_slice(&pw[..d]);
                Ok(pm)
            }
        }
    }
}

/// Primal iterate: all `nt` density levels (level 0 is `m_0`) and `nt - 1`
/// momentum levels.
#[derive(Clone)]
struct Primal {
    m: Vec<f64>,
    w: Vec<f64>,
}

fn apply_a(ws: &Workspace, x: &Primal, out: &mut [f64]) {
    let grid = ws.grid();
    let (n, d, dt) = (grid.n_space(), grid.dim(), grid.dt());
    out.par_chunks_mut(n).enumerate().for_each(|(k, ok)| {
        divergence_centered(grid, &ws.nb, &x.w[k * n * d..(k + 1) * n * d], ok);
        for i in 0..n {
            ok[i] += (x.m[(k + 1) * n + i] - x.m[k * n + i]) / dt;
        }
    });
}

/// `A^T y` with `A` acting on the free variables only (`m^0` is data).
fn apply_at(ws: &Workspace, y: &[f64], m_out: &mut [f64], w_out: &mut [f64]) {
    let grid = ws.grid();
    let (n, d, dt, nt) = (grid.n_space(), grid.dim(), grid.dt(), grid.nt());
    let big_n = nt - 1;
    m_out[..n].iter_mut().for_each(|x| *x = 0.0);
    m_out[n..].par_chunks_mut(n).enumerate().for_each(|(j0, mj)| {
        let j = j0 + 1;
        for i in 0..n {
            let prev = y[(j - 1) * n + i];
            let next = if j < big_n { y[j * n + i] } else { 0.0 };
            mj[i] = (prev - next) / dt;
        }
    });
    w_out.par_chunks_mut(n * d).enumerate().for_each(|(k, wk)| {
        gradient_centered(grid, &ws.nb, &y[k * n..(k + 1) * n], wk);
        wk.iter_mut().for_each(|x| *x = -*x);
    });
}

/// Operator norm of the constraint map by power iteration, padded by 2%.
fn operator_norm(ws: &Workspace) -> f64 {
    let grid = ws.grid();
    let (n, d, nt) = (grid.n_space(), grid.dim(), grid.nt());
    let mut x = Primal {
        m: vec![0.0; nt * n],
        w: vec![0.0; (nt - 1) * n * d],
    };
    // Deterministic start with energy on every mode.
    for (i, v) in x.m.iter_mut().enumerate().skip(n) {
        *v = ((i * 7919) % 97) as f64 / 97.0 - 0.5;
    }
    for (i, v) in x.w.iter_mut().enumerate() {
        *v = ((i * 104_729) % 89) as f64 / 89.0 - 0.5;
    }
    let mut y = vec![0.0; (nt - 1) * n];
    let mut lambda = 0.0;
    for _ in 0..100 {
        apply_a(ws, &x, &mut y);
        apply_at(ws, &y, &mut x.m, &mut x.w);
        let norm = x.m.iter().chain(&x.w).map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm;
        x.m.iter_mut().chain(x.w.iter_mut()).for_each(|v| *v /= norm);
    }
    1.02 * lambda.sqrt()
}

/// Multiplier `y` to the reported `u`: `u^N = u_T`, `u^0` by one backward step
/// with `f^0 = k(m_0)`.
fn multiplier_to_u(ws: &Workspace, y: &[f64]) -> Vec<f64> {
    let p = ws.problem;
    let grid = ws.grid();
    let (n, nt, dt) = (grid.n_space(), grid.nt(), grid.dt());
    let mut u = vec![0.0; nt * n];
    u[n..].copy_from_slice(y);
    u[(nt - 1) * n..].copy_from_slice(&p.terminal);
    let h = ws.hamiltonian_level(&u[n..2 * n]);
    for i in 0..n {
        u[i] = u[n + i] + dt * (p.cost.conj_deriv(p.initial[i]) - h[i]);
    }
    u
}

/// Smallest `f' >= f` for which `u` satisfies the discrete subsolution
/// inequality `-(u^{k+1} - u^k) / dt + H(x, G u^{k+1}) <= f'^k`. With this
/// `f'`, `A(u, f') + B(m, w) >= 0` for every constraint-feasible `(m, w)`;
/// at the discrete optimum `f' = k(m)`.
fn feasible_f_values(ws: &Workspace, u: &[f64], f: &[f64]) -> Vec<f64> {
    let grid = ws.grid();
    let (n, nt, dt) = (grid.n_space(), grid.nt(), grid.dt());
    let mut out = f.to_vec();
    for k in 0..nt - 1 {
        let h = ws.hamiltonian_level(&u[(k + 1) * n..(k + 2) * n]);
        for i in 0..n {
            let need = -(u[(k + 1) * n + i] - u[k * n + i]) / dt + h[i];
            let o = &mut out[k * n + i];
            *o = o.max(need);
        }
    }
    out
}

/// [`feasible_f_values`] on fields.
pub fn feasible_f(problem: &ProblemInstance, u: &ScalarField, f: &ScalarField) -> Result<ScalarField> {
    check_grid(problem, u.grid())?;
    check_grid(problem, f.grid())?;
    let ws = Workspace::new(problem);
    ScalarField::new(problem.grid.clone(), feasible_f_values(&ws, u.values(), f.values()))
}

/// `sum dt dx |(m^{k+1} - m^k) / dt + D w^k|`.
fn continuity_l1(ws: &Workspace, x: &Primal, scratch: &mut [f64]) -> f64 {
    apply_a(ws, x, scratch);
    let g = ws.grid();
    scratch.iter().map(|r| r.abs()).sum::<f64>() * g.dt() * g.cell_volume()
}

/// Centered continuity residual of a bundle, normalised by the initial mass.
pub fn continuity_residual(problem: &ProblemInstance, m: &DensityField, w: &VecField) -> Result<f64> {
    check_grid(problem, m.grid())?;
    check_grid(problem, w.grid())?;
    let ws = Workspace::new(problem);
    let g = &problem.grid;
    let x = Primal {
        m: m.values().to_vec(),
        w: w.values()[..(g.nt() - 1) * g.n_space() * g.dim()].to_vec(),
    };
    let mut scratch = vec![0.0; (g.nt() - 1) * g.n_space()];
    let r = continuity_l1(&ws, &x, &mut scratch);
    let mass = problem.initial_mass();
    Ok(if mass > 0.0 { r / mass } else { r })
}

pub fn optimize(problem: &ProblemInstance, config: &SolverConfig) -> Result<OptimalBundle> {
    let start = Instant::now();
    let grid = problem.grid.clone();
    let (n, d, nt, dt) = (grid.n_space(), grid.dim(), grid.nt(), grid.dt());
    if !(0.0..=1.0).contains(&config.over_relax) {
        return param(format!("over_relax must lie in [0, 1], got {}", config.over_relax));
    }
    if !(config.step_ratio > 0.0 && config.step_ratio.is_finite()) {
        return param("step_ratio must be positive");
    }
    let ws = Workspace::new(problem);
    let op_norm = operator_norm(&ws);
    let (tau_m, tau_w, sigma) = match (config.tau, config.sigma, config.step_rule) {
        (None, None, StepRule::Diagonal) => {
            let inv_dx: f64 = (0..d).map(|a| 1.0 / grid.dx(a)).sum();
            (0.5 * dt, grid.min_dx(), 1.0 / (2.0 / dt + inv_dx))
        }
        (Some(t), Some(s), _) => (t, t, s),
        (None, None, StepRule::Power) => {
            let t = config.step_ratio.sqrt() / op_norm;
            (t, t, 1.0 / (op_norm * op_norm * t))
        }
        (Some(t), None, _) => (t, t, 1.0 / (op_norm * op_norm * t)),
        (None, Some(s), _) => {
            let t = 1.0 / (op_norm * op_norm * s);
            (t, t, s)
        }
    };
    if config.tau.is_some() || config.sigma.is_some() {
        let (tau, product) = (tau_m, tau_m * sigma * op_norm * op_norm);
        if !(tau > 0.0 && sigma > 0.0) || product > 1.0 + 1e-9 {
            return param(format!(
                "step rule violated: tau sigma |A|^2 = {product:.4} with tau = {tau}, sigma = {sigma}, |A| = {op_norm:.4}"
            ));
        }
    }

    let mass = problem.initial_mass();
    if mass == 0.0 {
        log::warn!("zero initial mass: returning the trivial optimum");
        return trivial_bundle(problem, op_norm, (tau_m, tau_w), sigma, start);
    }

    let mut x = Primal {
        m: vec![mass / grid.volume(); nt * n],
        w: vec![0.0; (nt - 1) * n * d],
    };
    x.m[..n].copy_from_slice(&problem.initial);
    let mut y = vec![0.0; (nt - 1) * n];
    let mut x_old = x.clone();
    let mut x_bar = x.clone();
    let mut at_m = vec![0.0; nt * n];
    let mut at_w = vec![0.0; (nt - 1) * n * d];
    let mut ax = vec![0.0; (nt - 1) * n];

    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let theta = config.over_relax;

    for iter in 1..=config.max_iters {
        iterations = iter;
        // Primal step.
        apply_at(&ws, &y, &mut at_m, &mut at_w);
        std::mem::swap(&mut x_old, &mut x);
        let big_n = nt - 1;
        // Momentum at level 0 pairs with the fixed m_0.
        for i in 0..n {
            let mut wb = [0.0; MAX_DIM];
            for a in 0..d {
                wb[a] = x_old.w[i * d + a] + tau_w * at_w[i * d + a];
            }
            let p = problem.speed.project_scaled_set(&ws.points[i], problem.initial[i], &wb);
            x.w[i * d..(i + 1) * d].copy_from_slice(&p[..d]);
        }
        // Levels 1..N-1 carry K*(m) and the cone.
        x.m[n..big_n * n]
            .par_chunks_mut(n)
            .zip(x.w[n * d..].par_chunks_mut(n * d))
            .enumerate()
            .try_for_each(|(j0, (mj, wj))| -> Result<()> {
                let (bm, bw) = ((j0 + 1) * n, (j0 + 1) * n * d);
                for i in 0..n {
                    let m_bar = x_old.m[bm + i] + tau_m * at_m[bm + i];
                    let wi = &mut wj[i * d..(i + 1) * d];
                    for a in 0..d {
                        wi[a] = x_old.w[bw + i * d + a] + tau_w * at_w[bw + i * d + a];
                    }
                    mj[i] = ws.prox_node(i, m_bar, wi, tau_m, tau_w)?;
                }
                Ok(())
            })?;
        // Level N only sees the terminal reward.
        let bn = big_n * n;
        for i in 0..n {
            x.m[bn + i] = (x_old.m[bn + i] + tau_m * (at_m[bn + i] - problem.terminal[i] / dt)).max(0.0);
        }
        // Over-relaxation.
        for ((b, a), o) in x_bar.m.iter_mut().zip(&x.m).zip(&x_old.m) {
            *b = a + theta * (a - o);
        }
        for ((b, a), o) in x_bar.w.iter_mut().zip(&x.w).zip(&x_old.w) {
            *b = a + theta * (a - o);
        }
        // Dual step.
        apply_a(&ws, &x_bar, &mut ax);
        for (yi, r) in y.iter_mut().zip(&ax) {
            *yi -= sigma * r;
        }

        if let Some(pos) = x.m.iter().chain(&x.w).chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite iterate at iteration {iter} (entry {pos})")));
        }

        let record = measure(&ws, &x, &y, iter, &mut ax, start);
        history.push(record);
        if record.rel_gap <= config.tol_gap && record.cont_residual <= config.tol_cont {
            converged = true;
            break;
        }
    }

    let bundle = assemble(&ws, &x, &y)?;
    let diagnostics = Diagnostics {
        history,
        iterations,
        converged,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        tau: (tau_m, tau_w),
        sigma,
        op_norm,
    };
    if !converged {
        log::warn!("primal-dual solver stopped after {iterations} iterations without converging");
    }
    Ok(OptimalBundle { diagnostics, ..bundle })
}

fn measure(ws: &Workspace, x: &Primal, y: &[f64], iter: usize, scratch: &mut [f64], start: Instant) -> IterRecord {
    let p = ws.problem;
    let u = multiplier_to_u(ws, y);
    let f: Vec<f64> = x.m.iter().map(|&m| p.cost.conj_deriv(m)).collect();
    let f_feas = feasible_f_values(ws, &u, &f);
    let a = a_value(p, &u, &f_feas);
    let b = b_value(p, &x.m);
    let cont = continuity_l1(ws, x, scratch) / p.initial_mass();
    IterRecord {
        iter,
        a,
        b,
        gap: a + b,
        rel_gap: relative_gap(a, b),
        cont_residual: cont,
        time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

fn assemble(ws: &Workspace, x: &Primal, y: &[f64]) -> Result<OptimalBundle> {
    let p = ws.problem;
    let grid = p.grid.clone();
    let u = ScalarField::new(grid.clone(), multiplier_to_u(ws, y))?;
    let m = DensityField::new(grid.clone(), x.m.clone())?;
    let mut w_vals = x.w.clone();
    w_vals.extend(std::iter::repeat(0.0).take(grid.n_space() * grid.dim()));
    let w = VecField::new(grid, w_vals)?;
    let f = recover_f(p, &m);
    Ok(OptimalBundle {
        u,
        f,
        m,
        w,
        diagnostics: Diagnostics {
            history: Vec::new(),
            iterations: 0,
            converged: false,
            wall_time_ms: 0.0,
            tau: (0.0, 0.0),
            sigma: 0.0,
            op_norm: 0.0,
        },
    })
}

fn trivial_bundle(problem: &ProblemInstance, op_norm: f64, tau: (f64, f64), sigma: f64, start: Instant) -> Result<OptimalBundle> {
    let grid = problem.grid.clone();
    let zero = ScalarField::constant(&grid, 0.0);
    let u = hj::solve_value_function(problem, &zero)?;
    let m = DensityField::constant(&grid, 0.0)?;
    let a = evaluate_a(problem, &u, &zero)?;
    let b = b_value(problem, m.values());
    let record = IterRecord {
        iter: 0,
        a,
        b,
        gap: a + b,
        rel_gap: relative_gap(a, b),
        cont_residual: 0.0,
        time_ms: start.elapsed().as_secs_f64() * 1e3,
    };
    Ok(OptimalBundle {
        u,
        f: zero,
        w: VecField::zeros(&grid),
        m,
        diagnostics: Diagnostics {
            history: vec![record],
            iterations: 0,
            converged: true,
            wall_time_ms: record.time_ms,
            tau,
            sigma,
            op_norm,
        },
    })
}
