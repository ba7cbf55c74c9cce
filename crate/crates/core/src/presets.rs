//! Named problem instances.
//!
//! The blocking example lives on `[0, 1] x [0, 2]` without boundary
//! conditions. It is embedded in a torus of period 4 covering `[-1, 3)`: the
//! obstacle band reaches `x = 1 +- (1 + eps)` as `t -> 1`, so a period-2 torus
//! would let the two ends of the band meet across the seam.

use crate::error::{param, Result};
use crate::grid::{Point, ScalarField, TorusGrid};
use crate::hj::{self, CounterexampleValue};
use crate::model::{CostModel, SpeedModel};
use crate::problem::ProblemInstance;

pub const TERMINAL_PRESETS: [&str; 3] = ["zero", "cosine", "one"];
pub const INITIAL_PRESETS: [&str; 3] = ["uniform", "gaussian", "zero"];

/// Torus period of the blocking example.
pub const COUNTEREXAMPLE_PERIOD: f64 = 4.0;
/// Torus coordinate `z` maps to the example's coordinate `x = z - 1`.
pub const COUNTEREXAMPLE_OFFSET: f64 = 1.0;

pub fn terminal_preset(name: &str, grid: &TorusGrid) -> Result<Vec<f64>> {
    let tau = std::f64::consts::TAU;
    let dim = grid.dim();
    let per = grid.period().to_vec();
    match name {
        "zero" => Ok(vec![0.0; grid.n_space()]),
        "one" => Ok(vec![1.0; grid.n_space()]),
        "cosine" => Ok(grid.sample(|x| {
            (0..dim).map(|a| (tau * x[a] / per[a]).cos()).sum::<f64>() / dim as f64
        })),
        _ => param(format!("unknown terminal preset {name:?}; expected one of {TERMINAL_PRESETS:?}")),
    }
}

/// Initial densities, all of mass 1 except `zero`.
pub fn initial_preset(name: &str, grid: &TorusGrid) -> Result<Vec<f64>> {
    match name {
        "uniform" => Ok(vec![1.0 / grid.volume(); grid.n_space()]),
        "zero" => Ok(vec![0.0; grid.n_space()]),
        "gaussian" => {
            let centre: Point = [grid.period()[0] / 2.0, grid.period().get(1).copied().unwrap_or(0.0) / 2.0];
            let width = 0.15 * grid.period()[0];
            let mut m = grid.sample(|x| {
                let d = grid.torus_delta(x, &centre);
                (-(d[0] * d[0] + d[1] * d[1]) / (2.0 * width * width)).exp()
            });
            let mass = grid.integrate_slice(&m);
            m.iter_mut().for_each(|v| *v /= mass);
            Ok(m)
        }
        _ => param(format!("unknown initial preset {name:?}; expected one of {INITIAL_PRESETS:?}")),
    }
}

/// 1D unit-torus instance with `c = 1`, `kappa = 1`, `p = 3`, `T = 1`.
pub fn standard(nx: usize, nt: usize, terminal: &str, initial: &str) -> Result<ProblemInstance> {
    let grid = TorusGrid::new(&[nx], nt, 1.0)?;
    let u_t = terminal_preset(terminal, &grid)?;
    let m0 = initial_preset(initial, &grid)?;
    ProblemInstance::new(
        grid,
        SpeedModel::isotropic_constant(1, 1.0)?,
        CostModel::new(3.0, 1.0)?,
        u_t,
        m0,
    )
}

/// `u_T = 0`, `m0 = 1`: the optimum is `m = 1`, `w = 0`, `f = 1`, `u = 1 - t`.
pub fn uniform(nx: usize, nt: usize) -> Result<ProblemInstance> {
    standard(nx, nt, "zero", "uniform")
}

/// Gaussian `m0` against a cosine `u_T`.
pub fn gaussian_cosine(nx: usize, nt: usize) -> Result<ProblemInstance> {
    standard(nx, nt, "cosine", "gaussian")
}

/// The blocking example: `c = 1`, `u_T = 0`, `T = 1`, obstacle `f_eps`.
#[derive(Clone, Debug)]
pub struct Counterexample {
    pub eps: f64,
    pub problem: ProblemInstance,
    pub obstacle: ScalarField,
}

impl Counterexample {
    /// Builds the example with spacing `dx` and `nt` time levels.
    pub fn new(eps: f64, dx: f64, nt: usize) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return param(format!("eps must be >= 0, got {eps}"));
        }
        if !(dx > 0.0) {
            return param(format!("dx must be positive, got {dx}"));
        }
        let nx = (COUNTEREXAMPLE_PERIOD / dx).round() as usize;
        let grid = TorusGrid::with_period(&[nx], nt, 1.0, &[COUNTEREXAMPLE_PERIOD])?;
        let obstacle = ScalarField::from_fn(&grid, |t, z| {
            hj::obstacle_unchecked(eps, t.min(1.0), z[0] - COUNTEREXAMPLE_OFFSET)
        })?;
        let m0 = vec![1.0 / COUNTEREXAMPLE_PERIOD; nx];
        let problem = ProblemInstance::new(
            grid,
            SpeedModel::isotropic_constant(1, 1.0)?,
            CostModel::new(3.0, 1.0)?,
            vec![0.0; nx],
            m0,
        )?;
        Ok(Self { eps, problem, obstacle })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.problem.grid
    }

    /// Coordinate of `node` in the example's frame.
    pub fn example_x(&self, node: usize) -> f64 {
        self.grid().node_point(node)[0] - COUNTEREXAMPLE_OFFSET
    }

    /// Exact value at `(level, node)`, or `None` off `[0, 2]`.
    pub fn exact(&self, level: usize, node: usize) -> Option<CounterexampleValue> {
        let x = self.example_x(node);
        if !(0.0..=2.0).contains(&x) {
            return None;
        }
        hj::counterexample_exact(self.eps, self.grid().time(level).min(1.0), x).ok()
    }

    /// The vanishing-width limit `(1 - t) chi_{|x - 1| <= t}`.
    pub fn limit(&self) -> Result<ScalarField> {
        ScalarField::from_fn(self.grid(), |t, z| {
            let (t, x) = (t.min(1.0), z[0] - COUNTEREXAMPLE_OFFSET);
            if (x - 1.0).abs() <= t {
                1.0 - t
            } else {
                0.0
            }
        })
    }

    pub fn solve(&self) -> Result<ScalarField> {
        hj::solve_value_function(&self.problem, &self.obstacle)
    }

    /// Largest error against the closed form on `[0, 2]`, skipping the band
    /// and nodes within `dx + dt` of the cone boundary `|x - 1| = t`.
    pub fn off_band_error(&self, u: &ScalarField) -> ErrorSummary {
        let grid = self.grid();
        let margin = grid.dx(0) + grid.dt();
        let mut out = ErrorSummary::default();
        for k in 0..grid.nt() {
            let t = grid.time(k);
            for node in 0..grid.n_space() {
                let Some(ex) = self.exact(k, node) else { continue };
                let x = self.example_x(node);
                if ex.region == hj::ConeRegion::Band || ((x - 1.0).abs() - t).abs() <= margin {
                    continue;
                }
                let err = (u.get(k, node) - ex.value).abs();
                out.count += 1;
                out.l1 += err * grid.dx(0) * grid.time_weight(k).max(0.0);
                if err > out.linf {
                    out.linf = err;
                    out.worst = (t, x);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorSummary {
    pub linf: f64,
    /// Space-time L1 error over the compared nodes.
    pub l1: f64,
    pub count: usize,
    /// `(t, x)` of the largest error.
    pub worst: (f64, f64),
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn presets_have_unit_mass() {
        let g = TorusGrid::new(&[32, 16], 3, 1.0).unwrap();
        for name in ["uniform", "gaussian"] {
            let m = initial_preset(name, &g).unwrap();
            assert_relative_eq!(g.integrate_slice(&m), 1.0, epsilon = 1e-12);
        }
        assert!(initial_preset("nope", &g).is_err());
        assert!(terminal_preset("nope", &g).is_err());
        let c = terminal_preset("cosine", &g).unwrap();
        assert_relative_eq!(c[0], 1.0);
    }

    #[test]
    fn counterexample_embedding() {
        let ce = Counterexample::new(0.1, 0.01, 11).unwrap();
        assert_eq!(ce.grid().nx()[0], 400);
        // Node 100 sits at x = 0, node 300 at x = 2.
        assert_relative_eq!(ce.example_x(100), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ce.example_x(300), 2.0, epsilon = 1e-12);
        assert!(ce.exact(0, 50).is_none());
        assert_eq!(ce.obstacle.get(0, 200), 1.0);
        assert_eq!(ce.obstacle.get(0, 100), 0.0);
    }
}
