use crate::error::{param, Result};
use crate::grid::{lipschitz_slice, TorusGrid};
use crate::model::{CostModel, SpeedModel};

/// One complete control problem: grid, velocity set, cost, terminal data
/// `u_T` and initial density `m_0`.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub grid: TorusGrid,
    pub speed: SpeedModel,
    pub cost: CostModel,
    /// `u_T` on the space nodes.
    pub terminal: Vec<f64>,
    /// `m_0` on the space nodes.
    pub initial: Vec<f64>,
}

impl ProblemInstance {
    pub fn new(
        grid: TorusGrid,
        speed: SpeedModel,
        cost: CostModel,
        terminal: Vec<f64>,
        initial: Vec<f64>,
    ) -> Result<Self> {
        let n = grid.n_space();
        if speed.dim() != grid.dim() {
            return param("speed model dimension does not match the grid");
        }
        if !(cost.p() > grid.dim() as f64 + 1.0) {
            return param(format!(
                "cost exponent p = {} must exceed N + 1 = {}",
                cost.p(),
                grid.dim() + 1
            ));
        }
        if terminal.len() != n || initial.len() != n {
            return param(format!("terminal and initial data need {n} values"));
        }
        if terminal.iter().any(|v| !v.is_finite()) {
            return param("terminal data must be finite");
        }
        if initial.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return param("initial density must be finite and nonnegative");
        }
        let p = Self {
            grid,
            speed,
            cost,
            terminal,
            initial,
        };
        if p.initial_mass() == 0.0 {
            log::warn!("initial density has zero mass; the dual problem is degenerate");
        }
        Ok(p)
    }

    pub fn initial_mass(&self) -> f64 {
        self.grid.integrate_slice(&self.initial)
    }

    /// Discrete Lipschitz constant of `u_T`.
    pub fn terminal_lipschitz(&self) -> f64 {
        lipschitz_slice(&self.grid, &self.terminal)
    }

    pub fn initial_max(&self) -> f64 {
        self.initial.iter().fold(0.0, |a, &b| a.max(b))
    }

    /// Same problem on a grid with a different time resolution or data.
    pub fn with_grid(&self, grid: TorusGrid) -> Result<Self> {
        Self::new(grid, self.speed.clone(), self.cost, self.terminal.clone(), self.initial.clone())
    }
}
