//! Uniform periodic space-time grids and the fields that live on them.
//!
//! Space is the torus `[0, L_1) x ... x [0, L_N)` (unit period unless stated
//! otherwise), sampled at `nx[a]` nodes per axis. Time runs over `nt` levels
//! `t_k = k * dt` with `dt = T / (nt - 1)`. Field values are stored time-major,
//! and row-major in space (axis 0 varies slowest).
//!
//! Space-time quadrature uses the left-endpoint rule in time (levels
//! `0..nt-1`, weight `dt`) and the nodal rule in space (weight `prod dx`).
//! This is the same rule the semi-Lagrangian scheme uses to accrue running
//! cost, so discrete objectives and value functions stay consistent.

use crate::error::{param, Error, Result};

/// Largest supported space dimension.
pub const MAX_DIM: usize = 2;

/// A point (or vector) in space. Unused trailing components are zero.
pub type Point = [f64; MAX_DIM];

pub fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: &Point) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorusGrid {
    nx: Vec<usize>,
    nt: usize,
    horizon: f64,
    period: Vec<f64>,
}

impl TorusGrid {
    /// Unit-period torus.
    pub fn new(nx: &[usize], nt: usize, horizon: f64) -> Result<Self> {
        Self::with_period(nx, nt, horizon, &vec![1.0; nx.len()])
    }

    pub fn with_period(nx: &[usize], nt: usize, horizon: f64, period: &[f64]) -> Result<Self> {
        if nx.is_empty() || nx.len() > MAX_DIM {
            return param(format!("dimension must be 1 or 2, got {}", nx.len()));
        }
        if period.len() != nx.len() {
            return param("period must have one entry per axis");
        }
        if let Some(n) = nx.iter().find(|&&n| n < 4) {
            return param(format!("need at least 4 nodes per axis, got {n}"));
        }
        if nt < 2 {
            return param(format!("need at least 2 time levels, got {nt}"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return param(format!("horizon must be positive, got {horizon}"));
        }
        if period.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return param("periods must be positive");
        }
        Ok(Self {
            nx: nx.to_vec(),
            nt,
            horizon,
            period: period.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    pub fn nx(&self) -> &[usize] {
        &self.nx
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn period(&self) -> &[f64] {
        &self.period
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.period[axis] / self.nx[axis] as f64
    }

    /// Smallest spacing over all axes.
    pub fn min_dx(&self) -> f64 {
        (0..self.dim()).map(|a| self.dx(a)).fold(f64::INFINITY, f64::min)
    }

    /// Largest spacing over all axes.
    pub fn max_dx(&self) -> f64 {
        (0..self.dim()).map(|a| self.dx(a)).fold(0.0, f64::max)
    }

    /// Diameter of one grid cell.
    pub fn cell_diameter(&self) -> f64 {
        (0..self.dim()).map(|a| self.dx(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.nt - 1) as f64
    }

    pub fn time(&self, level: usize) -> f64 {
        level as f64 * self.dt()
    }

    /// Number of space nodes per time level.
    pub fn n_space(&self) -> usize {
        self.nx.iter().product()
    }

    pub fn n_total(&self) -> usize {
        self.n_space() * self.nt
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.dx(a)).product()
    }

    /// Volume of the torus.
    pub fn volume(&self) -> f64 {
        self.period.iter().product()
    }

    /// Quadrature weight in time for a level (left-endpoint rule).
    pub fn time_weight(&self, level: usize) -> f64 {
        if level + 1 < self.nt {
            self.dt()
        } else {
            0.0
        }
    }

    /// Same grid with a different number of time levels.
    pub fn with_nt(&self, nt: usize) -> Result<Self> {
        Self::with_period(&self.nx, nt, self.horizon, &self.period)
    }

    pub fn check_level(&self, level: usize) -> Result<()> {
        if level < self.nt {
            Ok(())
        } else {
            Err(Error::Index(format!(
                "time level {level} out of range (nt = {})",
                self.nt
            )))
        }
    }

    /// Multi-index of a flat space index.
    pub fn multi_index(&self, node: usize) -> [usize; MAX_DIM] {
        match self.dim() {
            1 => [node, 0],
            _ => [node / self.nx[1], node % self.nx[1]],
        }
    }

    /// Flat space index of a (possibly out-of-range) multi-index; wraps periodically.
    pub fn flat_index(&self, idx: [isize; MAX_DIM]) -> usize {
        match self.dim() {
            1 => idx[0].rem_euclid(self.nx[0] as isize) as usize,
            _ => {
                let i = idx[0].rem_euclid(self.nx[0] as isize) as usize;
                let j = idx[1].rem_euclid(self.nx[1] as isize) as usize;
                i * self.nx[1] + j
            }
        }
    }

    /// Neighbour of `node` shifted by `offset` along `axis`.
    pub fn neighbor(&self, node: usize, axis: usize, offset: isize) -> usize {
        let mi = self.multi_index(node);
        let mut idx = [mi[0] as isize, mi[1] as isize];
        idx[axis] += offset;
        self.flat_index(idx)
    }

    pub fn node_point(&self, node: usize) -> Point {
        let mi = self.multi_index(node);
        let mut p = [0.0; MAX_DIM];
        for (a, pa) in p.iter_mut().enumerate().take(self.dim()) {
            *pa = mi[a] as f64 * self.dx(a);
        }
        p
    }

    /// Wrap a point into the fundamental domain.
    pub fn wrap_point(&self, x: Point) -> Point {
        let mut p = [0.0; MAX_DIM];
        for (a, pa) in p.iter_mut().enumerate().take(self.dim()) {
            let l = self.period[a];
            let mut v = x[a].rem_euclid(l);
            if v >= l {
                v = 0.0;
            }
            *pa = v;
        }
        p
    }

    /// Signed shortest displacement `b - a` on the torus.
    pub fn torus_delta(&self, a: &Point, b: &Point) -> Point {
        let mut d = [0.0; MAX_DIM];
        for (ax, da) in d.iter_mut().enumerate().take(self.dim()) {
            let l = self.period[ax];
            let mut v = (b[ax] - a[ax]).rem_euclid(l);
            if v > 0.5 * l {
                v -= l;
            }
            *da = v;
        }
        d
    }

    /// Nearest node to a point (periodic).
    pub fn nearest_node(&self, x: &Point) -> usize {
        let mut idx = [0isize; MAX_DIM];
        for (a, ia) in idx.iter_mut().enumerate().take(self.dim()) {
            *ia = (x[a] / self.dx(a)).round() as isize;
        }
        self.flat_index(idx)
    }

    /// Nodes and nonnegative weights (summing to one) of the periodic
    /// multilinear interpolant at `x`. Unused entries have weight zero.
    pub fn stencil(&self, x: &Point) -> [(usize, f64); 4] {
        match self.dim() {
            1 => {
                let s = x[0] / self.dx(0);
                let i = s.floor();
                let w = s - i;
                let i = i as isize;
                [
                    (self.flat_index([i, 0]), 1.0 - w),
                    (self.flat_index([i + 1, 0]), w),
                    (0, 0.0),
                    (0, 0.0),
                ]
            }
            _ => {
                let s0 = x[0] / self.dx(0);
                let s1 = x[1] / self.dx(1);
                let (i0, i1) = (s0.floor(), s1.floor());
                let (w0, w1) = (s0 - i0, s1 - i1);
                let (i, j) = (i0 as isize, i1 as isize);
                [
                    (self.flat_index([i, j]), (1.0 - w0) * (1.0 - w1)),
                    (self.flat_index([i, j + 1]), (1.0 - w0) * w1),
                    (self.flat_index([i + 1, j]), w0 * (1.0 - w1)),
                    (self.flat_index([i + 1, j + 1]), w0 * w1),
                ]
            }
        }
    }

    /// Periodic multilinear interpolation of one time slice.
    pub fn interpolate_slice(&self, values: &[f64], x: &Point) -> f64 {
        debug_assert_eq!(values.len(), self.n_space());
        apply_stencil(&self.stencil(x), values)
    }

    /// Nodal quadrature of one time slice.
    pub fn integrate_slice(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Sample a function of position at every node.
    pub fn sample(&self, mut func: impl FnMut(&Point) -> f64) -> Vec<f64> {
        (0..self.n_space()).map(|n| func(&self.node_point(n))).collect()
    }

    /// Sample a function of (time, position) at every space-time node.
    pub fn sample_space_time(&self, mut func: impl FnMut(f64, &Point) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_total());
        for k in 0..self.nt {
            let t = self.time(k);
            for n in 0..self.n_space() {
                out.push(func(t, &self.node_point(n)));
            }
        }
        out
    }
}

/// Evaluate an interpolation stencil on a slice.
pub fn apply_stencil(stencil: &[(usize, f64); 4], values: &[f64]) -> f64 {
    stencil
        .iter()
        .filter(|(_, w)| *w != 0.0)
        .map(|&(n, w)| w * values[n])
        .sum()
}

fn check_len(grid: &TorusGrid, len: usize, per_node: usize) -> Result<()> {
    let want = grid.n_total() * per_node;
    if len != want {
        return param(format!("expected {want} values, got {len}"));
    }
    Ok(())
}

/// Real values on every space-time node.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len(), 1)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value at flat index {pos}")));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Self {
        Self {
            values: vec![value; grid.n_total()],
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &TorusGrid, func: impl FnMut(f64, &Point) -> f64) -> Result<Self> {
        Self::new(grid.clone(), grid.sample_space_time(func))
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.n_space() + node]
    }

    /// Periodic multilinear interpolation at time level `t`.
    pub fn interpolate(&self, t: usize, x: &Point) -> Result<f64> {
        self.grid.check_level(t)?;
        Ok(self.grid.interpolate_slice(self.level(t), x))
    }

    pub fn integrate_space(&self, t: usize) -> Result<f64> {
        self.grid.check_level(t)?;
        Ok(self.grid.integrate_slice(self.level(t)))
    }

    /// Discrete space-time `L^p` norm.
    pub fn norm_lp(&self, p: f64) -> Result<f64> {
        norm_lp(&self.grid, &self.values, p)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }
}

/// Discrete space-time `L^p` norm of raw values laid out on `grid`.
pub fn norm_lp(grid: &TorusGrid, values: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return param(format!("norm exponent must be >= 1, got {p}"));
    }
    let n = grid.n_space();
    let mut acc = 0.0;
    for k in 0..grid.nt() {
        let w = grid.time_weight(k);
        if w == 0.0 {
            continue;
        }
        let s: f64 = values[k * n..(k + 1) * n].iter().map(|v| v.abs().powf(p)).sum();
        acc += s * w;
    }
    Ok((acc * grid.cell_volume()).powf(1.0 / p))
}

/// Nonnegative values on every space-time node.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len(), 1)?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return param(format!(
                "density must be finite and nonnegative (flat index {pos}: {})",
                values[pos]
            ));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &TorusGrid, value: f64) -> Result<Self> {
        Self::new(grid.clone(), vec![value; grid.n_total()])
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self, k: usize) -> &[f64] {
        let n = self.grid.n_space();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn get(&self, k: usize, node: usize) -> f64 {
        self.values[k * self.grid.n_space() + node]
    }

    pub fn mass(&self, t: usize) -> Result<f64> {
        self.grid.check_level(t)?;
        Ok(self.grid.integrate_slice(self.level(t)))
    }

    pub fn integrate_space(&self, t: usize) -> Result<f64> {
        self.mass(t)
    }

    pub fn as_scalar(&self) -> ScalarField {
        ScalarField {
            grid: self.grid.clone(),
            values: self.values.clone(),
        }
    }
}

/// An `N`-vector on every space-time node, components interleaved per node.
#[derive(Clone, Debug, PartialEq)]
pub struct VecField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl VecField {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        check_len(&grid, values.len(), grid.dim())?;
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite component at {pos}")));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: &TorusGrid) -> Self {
        Self {
            values: vec![0.0; grid.n_total() * grid.dim()],
            grid: grid.clone(),
        }
    }

    /// Same vector at every node.
    pub fn constant(grid: &TorusGrid, v: Point) -> Self {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.n_total() * d);
        for _ in 0..grid.n_total() {
            values.extend_from_slice(&v[..d]);
        }
        Self {
            values,
            grid: grid.clone(),
        }
    }

    pub fn from_fn(grid: &TorusGrid, mut func: impl FnMut(f64, &Point) -> Point) -> Result<Self> {
        let d = grid.dim();
        let mut values = Vec::with_capacity(grid.n_total() * d);
        for k in 0..grid.nt() {
            let t = grid.time(k);
            for n in 0..grid.n_space() {
                let v = func(t, &grid.node_point(n));
                values.extend_from_slice(&v[..d]);
            }
        }
        Self::new(grid.clone(), values)
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, k: usize, node: usize) -> Point {
        let d = self.grid.dim();
        let base = (k * self.grid.n_space() + node) * d;
        let mut p = [0.0; MAX_DIM];
        p[..d].copy_from_slice(&self.values[base..base + d]);
        p
    }

    /// Per-component slice of one time level, interleaved.
    pub fn level(&self, k: usize) -> &[f64] {
        let w = self.grid.n_space() * self.grid.dim();
        &self.values[k * w..(k + 1) * w]
    }

    /// Periodic multilinear interpolation of each component.
    pub fn interpolate(&self, t: usize, x: &Point) -> Result<Point> {
        self.grid.check_level(t)?;
        let d = self.grid.dim();
        let lvl = self.level(t);
        let mut out = [0.0; MAX_DIM];
        for (c, oc) in out.iter_mut().enumerate().take(d) {
            let comp: Vec<f64> = lvl.iter().skip(c).step_by(d).copied().collect();
            *oc = self.grid.interpolate_slice(&comp, x);
        }
        Ok(out)
    }

    pub fn max_norm(&self) -> f64 {
        let d = self.grid.dim();
        self.values
            .chunks(d)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Largest nodal difference quotient of a slice (discrete Lipschitz constant).
pub fn lipschitz_slice(grid: &TorusGrid, values: &[f64]) -> f64 {
    let mut lip: f64 = 0.0;
    for n in 0..grid.n_space() {
        for a in 0..grid.dim() {
            let nb = grid.neighbor(n, a, 1);
            lip = lip.max((values[nb] - values[n]).abs() / grid.dx(a));
        }
    }
    lip
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn g1(nx: usize) -> TorusGrid {
        TorusGrid::new(&[nx], 5, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(TorusGrid::new(&[3], 5, 1.0).is_err());
        assert!(TorusGrid::new(&[8], 1, 1.0).is_err());
        assert!(TorusGrid::new(&[8, 8, 8], 4, 1.0).is_err());
        assert!(TorusGrid::new(&[8], 4, 0.0).is_err());
    }

    #[test]
    fn periodic_indexing_wraps() {
        let g = TorusGrid::new(&[8, 6], 3, 1.0).unwrap();
        assert_eq!(g.flat_index([2, 3]), g.flat_index([10, -3]));
        assert_eq!(g.neighbor(0, 1, -1), 5);
        assert_eq!(g.neighbor(0, 0, -1), 7 * 6);
    }

    #[test]
    fn interpolate_constant_and_nodes() {
        let g = g1(8);
        let f = ScalarField::constant(&g, 3.5);
        assert_eq!(f.interpolate(2, &[0.123, 0.0]).unwrap(), 3.5);
        let f = ScalarField::from_fn(&g, |_, x| (x[0] * 10.0).sin()).unwrap();
        let x = g.node_point(3);
        assert_eq!(f.interpolate(1, &x).unwrap(), f.get(1, 3));
        assert!(matches!(f.interpolate(5, &x), Err(Error::Index(_))));
    }

    #[test]
    fn interpolate_midpoint_is_linear() {
        let g = g1(4);
        let mut vals = vec![0.0; g.n_total()];
        vals[1] = 1.0;
        let f = ScalarField::new(g.clone(), vals).unwrap();
        assert_relative_eq!(f.interpolate(0, &[g.dx(0) / 2.0, 0.0]).unwrap(), 0.5);
    }

    #[test]
    fn integrate_space_examples() {
        let g = g1(4);
        assert_relative_eq!(ScalarField::constant(&g, 2.0).integrate_space(0).unwrap(), 2.0);
        assert_eq!(ScalarField::constant(&g, 0.0).integrate_space(3).unwrap(), 0.0);
        let vals: Vec<f64> = (0..5).flat_map(|_| [1.0, 2.0, 3.0, 4.0]).collect();
        let f = ScalarField::new(g, vals).unwrap();
        assert_relative_eq!(f.integrate_space(0).unwrap(), 2.5);
    }

    #[test]
    fn norm_lp_examples() {
        let g = TorusGrid::new(&[16], 11, 1.0).unwrap();
        assert_eq!(ScalarField::constant(&g, 0.0).norm_lp(2.0).unwrap(), 0.0);
        assert_relative_eq!(
            ScalarField::constant(&g, -1.7).norm_lp(2.0).unwrap(),
            1.7,
            max_relative = 1e-14
        );
        let g = TorusGrid::new(&[16], 7, 3.0).unwrap();
        assert_relative_eq!(
            ScalarField::constant(&g, 2.0).norm_lp(3.0).unwrap(),
            2.0 * 3f64.powf(1.0 / 3.0),
            max_relative = 1e-14
        );
        assert!(ScalarField::constant(&g, 2.0).norm_lp(0.5).is_err());
    }

    #[test]
    fn density_rejects_negative() {
        let g = g1(4);
        let mut v = vec![1.0; g.n_total()];
        v[3] = -1e-3;
        assert!(DensityField::new(g, v).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_is_exact_on_affine_cells(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64,
            s in 0.0..1.0f64, r in 0.0..1.0f64,
        ) {
            // Affine data on an interior cell (no wrap) is reproduced.
            let g = TorusGrid::new(&[8, 8], 2, 1.0).unwrap();
            let f = ScalarField::from_fn(&g, |_, x| a + b * x[0] + c * x[1]).unwrap();
            let x = [g.dx(0) * (2.0 + s), g.dx(1) * (3.0 + r)];
            let got = f.interpolate(0, &x).unwrap();
            prop_assert!((got - (a + b * x[0] + c * x[1])).abs() < 1e-12);
        }

        #[test]
        fn interpolation_is_bounded_and_periodic(
            vals in proptest::collection::vec(-5.0..5.0f64, 36),
            x0 in -2.0..2.0f64, x1 in -2.0..2.0f64,
        ) {
            let g = TorusGrid::new(&[6, 6], 2, 1.0).unwrap();
            let mut all = vals.clone();
            all.extend_from_slice(&vals);
            let f = ScalarField::new(g.clone(), all).unwrap();
            let v = f.interpolate(0, &[x0, x1]).unwrap();
            let shifted = f.interpolate(0, &[x0 + 1.0, x1 - 1.0]).unwrap();
            prop_assert!((v - shifted).abs() < 1e-12);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }

        #[test]
        fn integration_is_linear(
            a in proptest::collection::vec(-5.0..5.0f64, 8),
            b in proptest::collection::vec(-5.0..5.0f64, 8),
        ) {
            let g = TorusGrid::new(&[8], 2, 1.0).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let lhs = g.integrate_slice(&sum);
            let rhs = g.integrate_slice(&a) + g.integrate_slice(&b);
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
