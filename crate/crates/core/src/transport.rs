//! Continuity equation `m_t + div(m v) = 0` and its Lagrangian picture.
//!
//! The Eulerian solver is first-order upwind finite volume with face velocities
//! averaged from the nodes:
//!
//! ```text
//! m^{k+1}_i = m^k_i - dt sum_a (F_{i+1/2} - F_{i-1/2}) / dx_a
//! F_{i+1/2} = v+_{i+1/2} m_i + v-_{i+1/2} m_{i+1}
//! ```
//!
//! [`advect_adjoint`] is the transpose of the flux divergence, so that
//!
//! ```text
//! sum dx [u^N m^N - u^0 m^0]
//!   = dt dx sum_k sum_i ( u^{k+1}_i R^k_i + m^k_i (D_t u^k + v^k . D u^{k+1})_i )
//! ```
//!
//! holds exactly for any `u`, `m` and `v`, where `R` is the continuity residual.
//! The certifiers pair `u` with transported densities through this identity.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{param, Error, Result};
use crate::grid::{DensityField, Point, TorusGrid, VecField, MAX_DIM};

/// Periodic neighbour table: `[minus, plus]` per axis.
#[derive(Clone, Debug)]
pub struct Neighbors {
    table: Vec<[[usize; 2]; MAX_DIM]>,
}

impl Neighbors {
    pub fn new(grid: &TorusGrid) -> Self {
        let table = (0..grid.n_space())
            .map(|n| {
                let mut e = [[n; 2]; MAX_DIM];
                for (a, ea) in e.iter_mut().enumerate().take(grid.dim()) {
                    *ea = [grid.neighbor(n, a, -1), grid.neighbor(n, a, 1)];
                }
                e
            })
            .collect();
        Self { table }
    }

    #[inline]
    pub fn minus(&self, node: usize, axis: usize) -> usize {
        self.table[node][axis][0]
    }

    #[inline]
    pub fn plus(&self, node: usize, axis: usize) -> usize {
        self.table[node][axis][1]
    }
}

/// Upwind flux divergence `div F(m, v)` of one level; `v` interleaved.
pub fn flux_divergence(grid: &TorusGrid, nb: &Neighbors, m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    (0..grid.n_space())
        .into_par_iter()
        .map(|i| {
            let mut div = 0.0;
            for a in 0..d {
                let (im, ip) = (nb.minus(i, a), nb.plus(i, a));
                let v_right = 0.5 * (v[i * d + a] + v[ip * d + a]);
                let v_left = 0.5 * (v[im * d + a] + v[i * d + a]);
                let f_right = v_right.max(0.0) * m[i] + v_right.min(0.0) * m[ip];
                let f_left = v_left.max(0.0) * m[im] + v_left.min(0.0) * m[i];
                div += (f_right - f_left) / grid.dx(a);
            }
            div
        })
        .collect()
}

/// The pairing `v . D u` adjoint to [`flux_divergence`]:
/// `(v . Du)_i = sum_a v+_{i+1/2} (u_{i+1} - u_i) / dx + v-_{i-1/2} (u_i - u_{i-1}) / dx`.
pub fn advect_adjoint(grid: &TorusGrid, nb: &Neighbors, u: &[f64], v: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    (0..grid.n_space())
        .into_par_iter()
        .map(|i| {
            let mut s = 0.0;
            for a in 0..d {
                let (im, ip) = (nb.minus(i, a), nb.plus(i, a));
                let v_right = 0.5 * (v[i * d + a] + v[ip * d + a]);
                let v_left = 0.5 * (v[im * d + a] + v[i * d + a]);
                s += (v_right.max(0.0) * (u[ip] - u[i]) + v_left.min(0.0) * (u[i] - u[im])) / grid.dx(a);
            }
            s
        })
        .collect()
}

/// Centered divergence of an interleaved vector slice (face-averaged `w`).
pub fn divergence_centered(grid: &TorusGrid, nb: &Neighbors, w: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    for (i, o) in out.iter_mut().enumerate() {
        let mut s = 0.0;
        for a in 0..d {
            s += (w[nb.plus(i, a) * d + a] - w[nb.minus(i, a) * d + a]) / (2.0 * grid.dx(a));
        }
        *o = s;
    }
}

/// Centered gradient, the negative adjoint of [`divergence_centered`].
pub fn gradient_centered(grid: &TorusGrid, nb: &Neighbors, u: &[f64], out: &mut [f64]) {
    let d = grid.dim();
    for (i, o) in out.chunks_mut(d).enumerate() {
        for (a, oa) in o.iter_mut().enumerate() {
            *oa = (u[nb.plus(i, a)] - u[nb.minus(i, a)]) / (2.0 * grid.dx(a));
        }
    }
}

/// Largest `dt sum_a (v+_{i+1/2} - v-_{i-1/2}) / dx_a` over all levels used by
/// the solver. The scheme is positive iff this is at most one.
pub fn outflow_ratio(v: &VecField) -> f64 {
    let grid = v.grid();
    let nb = Neighbors::new(grid);
    let d = grid.dim();
    let mut worst: f64 = 0.0;
    for k in 0..grid.nt() - 1 {
        let vk = v.level(k);
        for i in 0..grid.n_space() {
            let mut r = 0.0;
            for a in 0..d {
                let (im, ip) = (nb.minus(i, a), nb.plus(i, a));
                let v_right = 0.5 * (vk[i * d + a] + vk[ip * d + a]);
                let v_left = 0.5 * (vk[im * d + a] + vk[i * d + a]);
                r += (v_right.max(0.0) - v_left.min(0.0)) / grid.dx(a);
            }
            worst = worst.max(r * grid.dt());
        }
    }
    worst
}

/// Transports `m0` along `v` from level 0 to the last level.
///
/// Refuses to run when `max |v| dt > min dx` or when the local outflow ratio
/// exceeds one, since either can make `m` negative.
pub fn solve_continuity(m0: &[f64], v: &VecField) -> Result<DensityField> {
    let grid = v.grid();
    let n = grid.n_space();
    if m0.len() != n {
        return param(format!("initial density needs {n} values, got {}", m0.len()));
    }
    if m0.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return param("initial density must be finite and nonnegative");
    }
    let speed = v.max_norm();
    if speed * grid.dt() > grid.min_dx() * (1.0 + 1e-12) {
        return param(format!(
            "CFL violated: max |v| dt = {:.6} exceeds dx = {:.6}",
            speed * grid.dt(),
            grid.min_dx()
        ));
    }
    let ratio = outflow_ratio(v);
    if ratio > 1.0 + 1e-12 {
        return param(format!("CFL violated: local outflow ratio {ratio:.6} exceeds 1"));
    }
    let nb = Neighbors::new(grid);
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.n_total());
    values.extend_from_slice(m0);
    for k in 0..grid.nt() - 1 {
        let mk = &values[k * n..];
        let div = flux_divergence(grid, &nb, &mk[..n], v.level(k));
        let next: Vec<f64> = mk[..n]
            .iter()
            .zip(&div)
            .map(|(m, dv)| {
                let x = m - dt * dv;
                // Round-off can push an emptied cell a hair below zero.
                if x < 0.0 && x > -1e-13 * (1.0 + m.abs()) {
                    0.0
                } else {
                    x
                }
            })
            .collect();
        values.extend_from_slice(&next);
    }
    DensityField::new(grid.clone(), values)
}

/// Per-level residual `(m^{k+1} - m^k) / dt + div F(m^k, v^k)`, levels `0..nt-1`.
pub fn continuity_residual(m: &DensityField, v: &VecField) -> Vec<f64> {
    let grid = m.grid();
    let nb = Neighbors::new(grid);
    let mut out = Vec::with_capacity(grid.n_total() - grid.n_space());
    for k in 0..grid.nt() - 1 {
        let div = flux_divergence(grid, &nb, m.level(k), v.level(k));
        for ((a, b), dv) in m.level(k).iter().zip(m.level(k + 1)).zip(div) {
            out.push((b - a) / grid.dt() + dv);
        }
    }
    out
}

/// Relative mass drift `max_k |mass(k) - mass(0)| / max(mass(0), tiny)`.
pub fn mass_drift(m: &DensityField) -> f64 {
    let grid = m.grid();
    let masses: Vec<f64> = (0..grid.nt()).map(|k| grid.integrate_slice(m.level(k))).collect();
    let scale = masses[0].abs().max(f64::MIN_POSITIVE);
    masses.iter().map(|x| (x - masses[0]).abs() / scale).fold(0.0, f64::max)
}

/// Monte Carlo sample of a superposition measure: Euler polygons of `v`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    grid: TorusGrid,
    count: usize,
    /// Positions, `[path][level][component]` flattened.
    positions: Vec<f64>,
    weights: Vec<f64>,
}

impl TrajectoryEnsemble {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn position(&self, path: usize, level: usize) -> Point {
        let d = self.grid.dim();
        let base = (path * self.grid.nt() + level) * d;
        let mut p = [0.0; MAX_DIM];
        p[..d].copy_from_slice(&self.positions[base..base + d]);
        p
    }

    /// Rows `path_id,t,x_1..x_N,weight`, one per path and level.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut s = String::from("path_id,t");
        for a in 1..=d {
            let _ = write!(s, ",x_{a}");
        }
        s.push_str(",weight\n");
        for p in 0..self.count {
            for k in 0..self.grid.nt() {
                let x = self.position(p, k);
                let _ = write!(s, "{p},{}", self.grid.time(k));
                for xa in &x[..d] {
                    let _ = write!(s, ",{xa}");
                }
                let _ = writeln!(s, ",{}", self.weights[p]);
            }
        }
        s
    }
}

fn interpolate_vec(grid: &TorusGrid, level: &[f64], x: &Point) -> Point {
    let d = grid.dim();
    let st = grid.stencil(x);
    let mut out = [0.0; MAX_DIM];
    for (c, oc) in out.iter_mut().enumerate().take(d) {
        *oc = st
            .iter()
            .filter(|(_, w)| *w != 0.0)
            .map(|&(n, w)| w * level[n * d + c])
            .sum();
    }
    out
}

/// Draws `count` paths with initial points distributed as `m0 / mass`
/// (a node by mass, then uniform in its cell) and moves each by forward
/// Euler on the interpolated `v`. Path `i` uses its own ChaCha stream, so
/// the result does not depend on scheduling.
pub fn sample_trajectories(m0: &[f64], v: &VecField, count: usize, seed: u64) -> Result<TrajectoryEnsemble> {
    let grid = v.grid();
    let (n, d, nt) = (grid.n_space(), grid.dim(), grid.nt());
    if count == 0 {
        return param("need at least one trajectory");
    }
    if m0.len() != n || m0.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return param(format!("initial density needs {n} finite nonnegative values"));
    }
    let mass = grid.integrate_slice(m0);
    if mass <= 0.0 {
        return param("initial density has zero mass");
    }
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &x in m0 {
        acc += x;
        cdf.push(acc);
    }
    let total = acc;
    let dt = grid.dt();

    let positions: Vec<f64> = (0..count)
        .into_par_iter()
        .flat_map_iter(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let r: f64 = rng.gen::<f64>() * total;
            let node = cdf.partition_point(|&c| c <= r).min(n - 1);
            let centre = grid.node_point(node);
            let mut x = [0.0; MAX_DIM];
            for a in 0..d {
                x[a] = centre[a] + (rng.gen::<f64>() - 0.5) * grid.dx(a);
            }
            x = grid.wrap_point(x);
            let mut out = Vec::with_capacity(nt * d);
            for k in 0..nt {
                out.extend_from_slice(&x[..d]);
                if k + 1 < nt {
                    let vel = interpolate_vec(grid, v.level(k), &x);
                    x = grid.wrap_point([x[0] + dt * vel[0], x[1] + dt * vel[1]]);
                }
            }
            out
        })
        .collect();

    Ok(TrajectoryEnsemble {
        grid: grid.clone(),
        count,
        positions,
        weights: vec![mass / count as f64; count],
    })
}

/// L1 distance between the nearest-node histogram of the ensemble at level
/// `t` and `m(t)` as a probability vector. Lies in `[0, 2]`.
pub fn pushforward_distance(ens: &TrajectoryEnsemble, m: &DensityField, t: usize) -> Result<f64> {
    let grid = m.grid();
    if grid != ens.grid() {
        return param("ensemble and density live on different grids");
    }
    grid.check_level(t)?;
    let mass: f64 = m.level(t).iter().sum();
    let weight = ens.total_weight();
    if !(mass > 0.0 && weight > 0.0) {
        return Err(Error::Parameter("empty distribution".into()));
    }
    let mut hist = vec![0.0; grid.n_space()];
    for p in 0..ens.count() {
        hist[grid.nearest_node(&ens.position(p, t))] += ens.weights[p] / weight;
    }
    Ok(hist.iter().zip(m.level(t)).map(|(h, x)| (h - x / mass).abs()).sum())
}

/// Value of `v` interpolated at a point of level `k`, as the sampler sees it.
pub fn velocity_at(v: &VecField, k: usize, x: &Point) -> Result<Point> {
    v.grid().check_level(k)?;
    Ok(interpolate_vec(v.grid(), v.level(k), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn grid1(nx: usize, nt: usize) -> TorusGrid {
        TorusGrid::new(&[nx], nt, 1.0).unwrap()
    }

    fn bump(x: f64) -> f64 {
        let d = x - 0.5;
        (-d * d / 0.005).exp()
    }

    #[test]
    fn zero_velocity_keeps_density() {
        let g = grid1(32, 9);
        let m0 = g.sample(|x| bump(x[0]));
        let m = solve_continuity(&m0, &VecField::zeros(&g)).unwrap();
        for k in 0..9 {
            assert_eq!(m.level(k), &m0[..]);
        }
    }

    #[test]
    fn constant_density_constant_velocity() {
        let g = TorusGrid::new(&[16, 8], 17, 1.0).unwrap();
        let v = VecField::constant(&g, [0.3, -0.4]);
        let m = solve_continuity(&vec![1.0; g.n_space()], &v).unwrap();
        assert!(m.values().iter().all(|&x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn translation_error_is_first_order() {
        // Oracle: exact translate of the bump, sampled on the grid.
        let err = |nx: usize| {
            let g = TorusGrid::new(&[nx], 2 * nx + 1, 0.5).unwrap();
            let v = VecField::constant(&g, [0.5, 0.0]);
            let m0 = g.sample(|x| bump(x[0]));
            let m = solve_continuity(&m0, &v).unwrap();
            let exact = g.sample(|x| bump((x[0] - 0.25).rem_euclid(1.0)));
            let last = g.nt() - 1;
            g.integrate_slice(
                &m.level(last).iter().zip(&exact).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>(),
            )
        };
        let (e1, e2) = (err(128), err(256));
        assert!(e1 < 0.05 && e2 < e1);
        assert!((e1 / e2).log2() > 0.6, "order {}", (e1 / e2).log2());
    }

    #[test]
    fn cfl_is_enforced() {
        let g = grid1(16, 3);
        let v = VecField::constant(&g, [20.0, 0.0]);
        assert!(matches!(solve_continuity(&vec![1.0; 16], &v), Err(Error::Parameter(_))));
        // Diverging faces: |v| dt = dx but two outflow faces.
        let v = VecField::from_fn(&g, |_, x| [if x[0] < 0.5 { -8.0 } else { 8.0 }, 0.0]).unwrap();
        assert!(solve_continuity(&vec![1.0; 16], &v).is_err());
    }

    #[test]
    fn trajectories_basic() {
        let g = grid1(16, 5);
        let m0 = vec![1.0; 16];
        let ens = sample_trajectories(&m0, &VecField::zeros(&g), 10, 3).unwrap();
        for p in 0..10 {
            for k in 1..5 {
                assert_eq!(ens.position(p, k), ens.position(p, 0));
            }
        }
        assert_relative_eq!(ens.total_weight(), 1.0, epsilon = 1e-12);
        let vel = 0.3;
        let ens = sample_trajectories(&m0, &VecField::constant(&g, [vel, 0.0]), 10, 3).unwrap();
        for p in 0..10 {
            let d = g.torus_delta(&ens.position(p, 0), &ens.position(p, 4));
            assert!((d[0] - vel).abs() < 1e-12);
        }
        assert_eq!(ens, sample_trajectories(&m0, &VecField::constant(&g, [vel, 0.0]), 10, 3).unwrap());
        assert!(sample_trajectories(&vec![0.0; 16], &VecField::zeros(&g), 10, 3).is_err());
        assert!(sample_trajectories(&m0, &VecField::zeros(&g), 0, 3).is_err());
        let csv = ens.to_csv();
        assert!(csv.starts_with("path_id,t,x_1,weight\n"));
        assert_eq!(csv.lines().count(), 1 + 10 * 5);
    }

    #[test]
    fn pushforward_distances() {
        let g = grid1(64, 2);
        let m0 = vec![1.0; 64];
        let m = solve_continuity(&m0, &VecField::zeros(&g)).unwrap();
        let ens = sample_trajectories(&m0, &VecField::zeros(&g), 100_000, 11).unwrap();
        let dist = pushforward_distance(&ens, &m, 0).unwrap();
        // Expected binning error: 64 bins * E|N(0, p/n)| ~ 0.02.
        assert!(dist <= 0.05, "{dist}");

        let left = DensityField::new(g.clone(), (0..128).map(|i| ((i % 64) < 32) as u8 as f64).collect()).unwrap();
        let right_m0: Vec<f64> = (0..64).map(|i| (i >= 40) as u8 as f64).collect();
        let ens = sample_trajectories(&right_m0, &VecField::zeros(&g), 1000, 1).unwrap();
        assert_relative_eq!(pushforward_distance(&ens, &left, 0).unwrap(), 2.0);
    }

    fn adjointness_defect(seed: u64, dim: usize) -> f64 {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nx: &[usize] = if dim == 1 { &[12] } else { &[6, 5] };
        let g = TorusGrid::new(nx, 5, 0.7).unwrap();
        let nb = Neighbors::new(&g);
        let (n, d) = (g.n_space(), g.dim());
        let u: Vec<f64> = (0..g.n_total()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m: Vec<f64> = (0..g.n_total()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let v: Vec<f64> = (0..g.n_total() * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (dt, vol) = (g.dt(), g.cell_volume());
        let mut lhs = 0.0;
        for k in 0..g.nt() - 1 {
            let (mk, mk1) = (&m[k * n..(k + 1) * n], &m[(k + 1) * n..(k + 2) * n]);
            let (uk, uk1) = (&u[k * n..(k + 1) * n], &u[(k + 1) * n..(k + 2) * n]);
            let vk = &v[k * n * d..(k + 1) * n * d];
            let div = flux_divergence(&g, &nb, mk, vk);
            let adv = advect_adjoint(&g, &nb, uk1, vk);
            for i in 0..n {
                let r = (mk1[i] - mk[i]) / dt + div[i];
                let a = (uk1[i] - uk[i]) / dt + adv[i];
                lhs += dt * vol * (uk1[i] * r + mk[i] * a);
            }
        }
        let last = (g.nt() - 1) * n;
        let rhs: f64 = (0..n).map(|i| vol * (u[last + i] * m[last + i] - u[i] * m[i])).sum();
        (lhs - rhs).abs()
    }

    #[test]
    fn centered_operators_are_adjoint() {
        let g = TorusGrid::new(&[7, 5], 2, 1.0).unwrap();
        let nb = Neighbors::new(&g);
        let u: Vec<f64> = (0..35).map(|i| ((i * 7) % 11) as f64).collect();
        let w: Vec<f64> = (0..70).map(|i| ((i * 5) % 13) as f64 - 6.0).collect();
        let mut div = vec![0.0; 35];
        let mut grad = vec![0.0; 70];
        divergence_centered(&g, &nb, &w, &mut div);
        gradient_centered(&g, &nb, &u, &mut grad);
        let a: f64 = u.iter().zip(&div).map(|(x, y)| x * y).sum();
        let b: f64 = w.iter().zip(&grad).map(|(x, y)| x * y).sum();
        assert!((a + b).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn adjointness_identity(seed in any::<u64>(), dim in 1usize..=2) {
            prop_assert!(adjointness_defect(seed, dim) < 1e-10);
        }

        #[test]
        fn mass_and_positivity(seed in any::<u64>()) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = TorusGrid::new(&[10, 8], 11, 0.25).unwrap();
            let m0: Vec<f64> = (0..80).map(|_| rng.gen_range(0.0..3.0)).collect();
            let a: f64 = rng.gen_range(0.0..6.0);
            let v = VecField::from_fn(&g, |t, x| {
                let s = std::f64::consts::TAU;
                [0.25 * (s * (x[1] + a + t)).sin(), 0.2 * (s * (x[0] - a)).cos()]
            }).unwrap();
            let m = solve_continuity(&m0, &v).unwrap();
            prop_assert!(mass_drift(&m) < 1e-12);
            prop_assert!(m.values().iter().all(|&x| x >= 0.0));
            prop_assert!(continuity_residual(&m, &v).iter().all(|r| r.abs() < 1e-9));
        }
    }

    #[test]
    fn adjoint_of_constant_is_zero() {
        let g = grid1(8, 2);
        let nb = Neighbors::new(&g);
        let u = ScalarField::constant(&g, 2.0);
        let v = VecField::constant(&g, [0.7, 0.0]);
        assert!(advect_adjoint(&g, &nb, u.level(0), v.level(0)).iter().all(|&x| x == 0.0));
    }
}
