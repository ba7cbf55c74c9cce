//! Backward semi-Lagrangian solver for `-u_t + H(x, Du) = f`, `u(T) = u_T`.
//!
//! The scheme is the discrete dynamic programming principle
//!
//! ```text
//! u(t_k, x) = min_a I[u(t_{k+1}, .)](x + dt c(x, a)) + dt f(t_k, x)
//! ```
//!
//! with `I` the periodic multilinear interpolant and `a` ranging over a finite
//! sample of controls that always contains the rest state. Interpolation
//! weights are nonnegative, so the map `u(t_{k+1}) -> u(t_k)` is monotone and
//! the comparison principle holds exactly in floating point.

use rayon::prelude::*;

use crate::error::{param, Result};
use crate::grid::{apply_stencil, Point, ScalarField, TorusGrid, MAX_DIM};
use crate::model::SpeedVariant;
use crate::problem::ProblemInstance;

/// How controls are sampled at each node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ControlSampling {
    /// Rest, the `2N` axis directions and the `2^N` diagonals, scaled to the
    /// local radius (Isotropic); rest plus the given velocities (FiniteControls).
    #[default]
    Default,
    /// Rest plus `n` evenly spaced directions on the circle (2D Isotropic only;
    /// ignored otherwise).
    Directions(usize),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HjScheme {
    pub sampling: ControlSampling,
}

impl HjScheme {
    /// Velocities sampled at `x` for `problem`'s speed model, rest first.
    pub fn velocities(&self, problem: &ProblemInstance, x: &Point) -> Vec<Point> {
        let dim = problem.grid.dim();
        let mut out = vec![[0.0; MAX_DIM]];
        match problem.speed.variant() {
            SpeedVariant::Isotropic { radius } => {
                let r = radius.at(x);
                match (dim, self.sampling) {
                    (1, _) => {
                        out.push([r, 0.0]);
                        out.push([-r, 0.0]);
                    }
                    (_, ControlSampling::Directions(n)) if n > 0 => {
                        for i in 0..n {
                            let a = std::f64::consts::TAU * i as f64 / n as f64;
                            out.push([r * a.cos(), r * a.sin()]);
                        }
                    }
                    _ => {
                        let d = r / 2f64.sqrt();
                        out.extend_from_slice(&[[r, 0.0], [-r, 0.0], [0.0, r], [0.0, -r]]);
                        out.extend_from_slice(&[[d, d], [-d, d], [-d, -d], [d, -d]]);
                    }
                }
            }
            SpeedVariant::FiniteControls { velocities } => {
                out.extend(velocities.iter().map(|v| v.at(x)));
            }
        }
        out
    }
}

/// `c1 dt` in units of the cell diameter.
pub fn cfl_ratio(problem: &ProblemInstance) -> f64 {
    problem.speed.c1() * problem.grid.dt() / problem.grid.cell_diameter()
}

pub fn solve_value_function(problem: &ProblemInstance, f: &ScalarField) -> Result<ScalarField> {
    solve_value_function_with(problem, f, &HjScheme::default())
}

pub fn solve_value_function_with(
    problem: &ProblemInstance,
    f: &ScalarField,
    scheme: &HjScheme,
) -> Result<ScalarField> {
    let grid = &problem.grid;
    if f.grid() != grid {
        return param("obstacle field is not on the problem grid");
    }
    let cfl = cfl_ratio(problem);
    if cfl > 4.0 {
        log::warn!("c1 dt is {cfl:.2} cell diameters; the value function will be inaccurate");
    }
    let (n, nt, dt) = (grid.n_space(), grid.nt(), grid.dt());

    // Stencils do not depend on time: compute them once per node and control.
    let stencils: Vec<Vec<[(usize, f64); 4]>> = (0..n)
        .into_par_iter()
        .map(|node| {
            let x = grid.node_point(node);
            scheme
                .velocities(problem, &x)
                .iter()
                .map(|v| grid.stencil(&[x[0] + dt * v[0], x[1] + dt * v[1]]))
                .collect()
        })
        .collect();

    let mut values = vec![0.0; grid.n_total()];
    values[(nt - 1) * n..].copy_from_slice(&problem.terminal);
    for k in (0..nt - 1).rev() {
        let (head, tail) = values.split_at_mut((k + 1) * n);
        let next = &tail[..n];
        let fk = f.level(k);
        head[k * n..]
            .par_iter_mut()
            .enumerate()
            .for_each(|(node, out)| {
                let best = stencils[node]
                    .iter()
                    .map(|s| apply_stencil(s, next))
                    .fold(f64::INFINITY, f64::min);
                *out = best + dt * fk[node];
            });
    }
    ScalarField::new(grid.clone(), values)
}

/// Which part of the blocking example a point belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConeRegion {
    /// `|x - 1| <= t`: the obstacle is fully built.
    Cone,
    /// Within `eps` of the cone: the obstacle ramps down.
    Band,
    /// At least `eps` away from the cone: no obstacle.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CounterexampleValue {
    pub value: f64,
    pub region: ConeRegion,
}

fn check_counterexample_domain(eps: f64, t: f64, x: f64) -> Result<()> {
    const SLOP: f64 = 1e-12;
    if !(eps >= 0.0 && eps.is_finite()) {
        return param(format!("eps must be >= 0, got {eps}"));
    }
    if !(t >= -SLOP && t <= 1.0 + SLOP) {
        return param(format!("t = {t} outside [0, 1]"));
    }
    if !(x >= -SLOP && x <= 2.0 + SLOP) {
        return param(format!("x = {x} outside [0, 2]"));
    }
    Ok(())
}

/// Distance from `x` to the cone `[1 - t, 1 + t]`.
fn cone_distance(t: f64, x: f64) -> f64 {
    ((x - 1.0).abs() - t).max(0.0)
}

pub fn counterexample_region(eps: f64, t: f64, x: f64) -> ConeRegion {
    let d = cone_distance(t, x);
    if d == 0.0 {
        ConeRegion::Cone
    } else if d < eps {
        ConeRegion::Band
    } else {
        ConeRegion::Free
    }
}

/// Obstacle of the blocking example with speed 1 and `u_T = 0` on
/// `[0, 1] x [0, 2]`: one on the cone `|x - 1| <= t`, zero at distance `>= eps`
/// from it, linear in the distance in between.
pub fn counterexample_obstacle(eps: f64, t: f64, x: f64) -> Result<f64> {
    check_counterexample_domain(eps, t, x)?;
    Ok(obstacle_unchecked(eps, t, x))
}

pub(crate) fn obstacle_unchecked(eps: f64, t: f64, x: f64) -> f64 {
    let d = cone_distance(t, x);
    match counterexample_region(eps, t, x) {
        ConeRegion::Cone => 1.0,
        ConeRegion::Band => 1.0 - d / eps,
        ConeRegion::Free => 0.0,
    }
}

/// Value function of the blocking example. On the cone it is `1 - t`, off the
/// `eps`-band it is zero. In the band, the optimal path keeps its distance `d`
/// to the cone and pays `1 - d / eps` throughout, giving `(1 - t)(1 - d / eps)`.
/// With `eps = 0` this is the discontinuous limit `(1 - t) chi_{|x - 1| <= t}`.
pub fn counterexample_exact(eps: f64, t: f64, x: f64) -> Result<CounterexampleValue> {
    check_counterexample_domain(eps, t, x)?;
    let region = counterexample_region(eps, t, x);
    let value = match region {
        ConeRegion::Cone => 1.0 - t,
        ConeRegion::Band => (1.0 - t) * (1.0 - cone_distance(t, x) / eps),
        ConeRegion::Free => 0.0,
    };
    Ok(CounterexampleValue { value, region })
}

/// Which side of the level a front collects.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FrontMode {
    /// Nodes with `u <= level` (the burning region of a value function).
    #[default]
    SubLevel,
    /// Nodes with `value > level` (the obstacle region `{f > 0}`).
    SuperLevel,
}

/// Nodes of level `t` on the requested side of `level`, in increasing order.
pub fn extract_front(u: &ScalarField, t: usize, level: f64, mode: FrontMode) -> Result<Vec<usize>> {
    u.grid().check_level(t)?;
    Ok(u
        .level(t)
        .iter()
        .enumerate()
        .filter(|(_, &v)| match mode {
            FrontMode::SubLevel => v <= level,
            FrontMode::SuperLevel => v > level,
        })
        .map(|(n, _)| n)
        .collect())
}

/// Brute-force Hopf-Lax value for a constant isotropic speed and `f = 0`:
/// the minimum of `u_T` over nodes within reach `c (T - t)`.
pub fn hopf_lax_nodes(grid: &TorusGrid, terminal: &[f64], c: f64, t: f64, x: &Point) -> f64 {
    let reach = c * (grid.horizon() - t);
    (0..grid.n_space())
        .filter(|&n| {
            let d = grid.torus_delta(x, &grid.node_point(n));
            (d[0] * d[0] + d[1] * d[1]).sqrt() <= reach + 1e-12
        })
        .map(|n| terminal[n])
        .fold(f64::INFINITY, f64::min)
}
