//! Admissible velocity sets and running costs.
//!
//! A [`SpeedModel`] describes the convex velocity set `c(x, A)` through its
//! support function (the Hamiltonian `H(x, p) = sup_a -c(x, a) . p`) and the
//! Euclidean projection onto the cone `{(m, w) : m >= 0, w in m c(x, A)}`.
//! A [`CostModel`] is the power-law cost `K(f) = kappa |f|^p / p` with its
//! conjugate `K*` and `k = dK*/dm`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{dot, norm, Point, TorusGrid, MAX_DIM};

/// Tolerance used for set-membership decisions.
pub const MEMBERSHIP_TOL: f64 = 1e-12;

/// A positive scalar function of position.
#[derive(Clone, Debug, PartialEq)]
pub enum RadiusProfile {
    Constant(f64),
    /// Nodal values on a grid, interpolated periodically.
    Nodal { grid: TorusGrid, values: Vec<f64> },
}

impl RadiusProfile {
    pub fn at(&self, x: &Point) -> f64 {
        match self {
            RadiusProfile::Constant(c) => *c,
            RadiusProfile::Nodal { grid, values } => grid.interpolate_slice(values, x),
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            RadiusProfile::Constant(c) => (*c, *c),
            RadiusProfile::Nodal { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v))),
        }
    }

    /// Points at which to sample the profile when validating.
    fn sample_points(&self) -> Vec<Point> {
        match self {
            RadiusProfile::Constant(_) => vec![[0.0; MAX_DIM]],
            RadiusProfile::Nodal { grid, .. } => (0..grid.n_space()).map(|n| grid.node_point(n)).collect(),
        }
    }
}

/// One control `a_i`: the velocity `c(x, a_i) = scale(x) * direction`.
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    pub direction: Point,
    pub scale: RadiusProfile,
}

impl Control {
    pub fn constant(direction: Point) -> Self {
        Self {
            direction,
            scale: RadiusProfile::Constant(1.0),
        }
    }

    pub fn at(&self, x: &Point) -> Point {
        let s = self.scale.at(x);
        [s * self.direction[0], s * self.direction[1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpeedVariant {
    /// `c(x, A)` is the closed ball of radius `c(x)`.
    Isotropic { radius: RadiusProfile },
    /// `c(x, A)` is the convex hull of finitely many velocities.
    FiniteControls { velocities: Vec<Control> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedModel {
    dim: usize,
    variant: SpeedVariant,
    c0: f64,
    c1: f64,
    lip: f64,
}

/// Vertices of the velocity polytope at one point, in counter-clockwise order (2D)
/// or as `[min, max]` (1D).
fn hull_vertices(dim: usize, pts: &[Point]) -> Vec<Point> {
    if dim == 1 {
        let lo = pts.iter().map(|p| p[0]).fold(0.0f64, f64::min);
        let hi = pts.iter().map(|p| p[0]).fold(0.0f64, f64::max);
        return vec![[lo, 0.0], [hi, 0.0]];
    }
    // Monotone chain; the origin is included since 0 is always admissible.
    let mut p: Vec<Point> = pts.to_vec();
    p.push([0.0, 0.0]);
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: &Point, a: &Point, b: &Point| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<Point> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for q in iter {
            while hull.len() >= start + 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(*q);
        }
        hull.pop();
    }
    hull
}

impl SpeedModel {
    /// Ball of constant radius `c` (so `c0 = c1 = c`, `L = 0`).
    pub fn isotropic_constant(dim: usize, c: f64) -> Result<Self> {
        Self::isotropic(dim, RadiusProfile::Constant(c), c, c, 0.0)
    }

    pub fn isotropic(dim: usize, radius: RadiusProfile, c0: f64, c1: f64, lip: f64) -> Result<Self> {
        check_common(dim, c0, c1, lip)?;
        let (lo, hi) = radius.bounds();
        if lo < c0 - MEMBERSHIP_TOL || hi > c1 + MEMBERSHIP_TOL {
            return param(format!("radius range [{lo}, {hi}] not within [c0, c1] = [{c0}, {c1}]"));
        }
        if let RadiusProfile::Nodal { grid, values } = &radius {
            if grid.dim() != dim || values.len() != grid.n_space() {
                return param("radius field does not match the model dimension");
            }
        }
        Ok(Self {
            dim,
            variant: SpeedVariant::Isotropic { radius },
            c0,
            c1,
            lip,
        })
    }

    pub fn finite_controls(dim: usize, velocities: Vec<Control>, c0: f64, c1: f64, lip: f64) -> Result<Self> {
        check_common(dim, c0, c1, lip)?;
        if velocities.is_empty() {
            return param("at least one control velocity is required");
        }
        let model = Self {
            dim,
            variant: SpeedVariant::FiniteControls { velocities },
            c0,
            c1,
            lip,
        };
        let SpeedVariant::FiniteControls { velocities } = &model.variant else {
            unreachable!()
        };
        let mut pts: Vec<Point> = velocities.iter().flat_map(|v| v.scale.sample_points()).collect();
        if pts.is_empty() {
            pts.push([0.0; MAX_DIM]);
        }
        for x in &pts {
            for v in velocities {
                let s = norm(&v.at(x));
                if s > c1 + MEMBERSHIP_TOL {
                    return param(format!("velocity of norm {s} exceeds c1 = {c1}"));
                }
            }
            for e in model.probe_directions() {
                let support = model.support(x, &e);
                if support < c0 - MEMBERSHIP_TOL {
                    return param(format!(
                        "velocity hull does not contain the ball of radius c0 = {c0} (support {support} in direction {e:?})"
                    ));
                }
            }
        }
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> &SpeedVariant {
        &self.variant
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn c1(&self) -> f64 {
        self.c1
    }

    pub fn lip(&self) -> f64 {
        self.lip
    }

    /// Whether the set is a ball of the same radius everywhere.
    pub fn constant_radius(&self) -> Option<f64> {
        match &self.variant {
            SpeedVariant::Isotropic {
                radius: RadiusProfile::Constant(c),
            } => Some(*c),
            _ => None,
        }
    }

    /// Unit directions at which ball containment is checked: 64 in 2D, 2 in 1D.
    pub fn probe_directions(&self) -> Vec<Point> {
        if self.dim == 1 {
            return vec![[1.0, 0.0], [-1.0, 0.0]];
        }
        (0..64)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / 64.0;
                [a.cos(), a.sin()]
            })
            .collect()
    }

    /// Velocities `c(x, a_i)` at `x` (FiniteControls) or `None` for the ball.
    pub fn control_velocities(&self, x: &Point) -> Option<Vec<Point>> {
        match &self.variant {
            SpeedVariant::FiniteControls { velocities } => Some(velocities.iter().map(|v| v.at(x)).collect()),
            SpeedVariant::Isotropic { .. } => None,
        }
    }

    /// Radius of the ball at `x` (Isotropic only).
    pub fn radius(&self, x: &Point) -> Option<f64> {
        match &self.variant {
            SpeedVariant::Isotropic { radius } => Some(radius.at(x)),
            SpeedVariant::FiniteControls { .. } => None,
        }
    }

    fn hull(&self, x: &Point) -> Vec<Point> {
        let pts = self.control_velocities(x).unwrap_or_default();
        hull_vertices(self.dim, &pts)
    }

    /// Support function `sup_{v in c(x,A)} v . e`.
    pub fn support(&self, x: &Point, e: &Point) -> f64 {
        match &self.variant {
            SpeedVariant::Isotropic { radius } => radius.at(x) * norm(e),
            SpeedVariant::FiniteControls { velocities } => velocities
                .iter()
                .map(|v| dot(&v.at(x), e))
                .fold(0.0, f64::max),
        }
    }

    /// `H(x, p) = sup_a -c(x, a) . p`.
    pub fn hamiltonian(&self, x: &Point, p: &Point) -> f64 {
        self.support(x, &[-p[0], -p[1]])
    }

    /// Whether `H*(x, q) = 0`, i.e. `q` lies in `-c(x, A)`.
    pub fn conjugate_membership(&self, x: &Point, q: &Point) -> bool {
        let v = [-q[0], -q[1]];
        self.contains_velocity(x, &v)
    }

    /// Whether `v` lies in `c(x, A)` (to [`MEMBERSHIP_TOL`]).
    pub fn contains_velocity(&self, x: &Point, v: &Point) -> bool {
        match &self.variant {
            SpeedVariant::Isotropic { radius } => norm(v) <= radius.at(x) + MEMBERSHIP_TOL,
            SpeedVariant::FiniteControls { .. } => {
                let hull = self.hull(x);
                if self.dim == 1 {
                    return v[0] >= hull[0][0] - MEMBERSHIP_TOL && v[0] <= hull[1][0] + MEMBERSHIP_TOL;
                }
                let n = hull.len();
                (0..n).all(|i| {
                    let a = hull[i];
                    let b = hull[(i + 1) % n];
                    let edge = [b[0] - a[0], b[1] - a[1]];
                    let len = norm(&edge);
                    // Outward normal of a counter-clockwise edge.
                    let nrm = [edge[1] / len, -edge[0] / len];
                    dot(&nrm, &[v[0] - a[0], v[1] - a[1]]) <= MEMBERSHIP_TOL
                })
            }
        }
    }

    /// Euclidean projection of `(m, w)` onto `{(m, w) : m >= 0, w in m c(x, A)}`.
    pub fn project_cone(&self, x: &Point, m: f64, w: &Point) -> (f64, Point) {
        match &self.variant {
            SpeedVariant::Isotropic { radius } => project_soc(radius.at(x), m, w),
            SpeedVariant::FiniteControls { .. } => self.project_polyhedral(x, m, w),
        }
    }

    /// Euclidean projection of `w` onto `s c(x, A)` for a fixed scale `s >= 0`.
    pub fn project_scaled_set(&self, x: &Point, s: f64, w: &Point) -> Point {
        let s = s.max(0.0);
        match &self.variant {
            SpeedVariant::Isotropic { radius } => {
                let r = s * radius.at(x);
                let nw = norm(w);
                if nw <= r {
                    *w
                } else {
                    [w[0] * r / nw, w[1] * r / nw]
                }
            }
            SpeedVariant::FiniteControls { .. } => {
                let hull = self.hull(x);
                if self.dim == 1 {
                    return [w[0].clamp(s * hull[0][0], s * hull[1][0]), 0.0];
                }
                if s == 0.0 {
                    return [0.0; MAX_DIM];
                }
                if self.contains_velocity(x, &[w[0] / s, w[1] / s]) {
                    return *w;
                }
                let n = hull.len();
                let mut best = [0.0; MAX_DIM];
                let mut best_d = f64::INFINITY;
                for i in 0..n {
                    let a = [s * hull[i][0], s * hull[i][1]];
                    let b = [s * hull[(i + 1) % n][0], s * hull[(i + 1) % n][1]];
                    let e = [b[0] - a[0], b[1] - a[1]];
                    let ee = dot(&e, &e);
                    let t = if ee > 0.0 {
                        (dot(&[w[0] - a[0], w[1] - a[1]], &e) / ee).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let c = [a[0] + t * e[0], a[1] + t * e[1]];
                    let dd = (w[0] - c[0]).powi(2) + (w[1] - c[1]).powi(2);
                    if dd < best_d {
                        best_d = dd;
                        best = c;
                    }
                }
                best
            }
        }
    }

    /// Maximum violation of the cone constraint at one node: `max(-m, dist(w, m c(x,A)))`
    /// measured through the projection.
    pub fn cone_violation(&self, x: &Point, m: f64, w: &Point) -> f64 {
        let (pm, pw) = self.project_cone(x, m, w);
        ((pm - m).powi(2) + (pw[0] - w[0]).powi(2) + (pw[1] - w[1]).powi(2)).sqrt()
    }

    fn project_polyhedral(&self, x: &Point, m: f64, w: &Point) -> (f64, Point) {
        if m > 0.0 {
            let v = [w[0] / m, w[1] / m];
            if self.contains_velocity(x, &v) {
                return (m, *w);
            }
        } else if m == 0.0 && w[0] == 0.0 && w[1] == 0.0 {
            return (0.0, *w);
        }
        // Nearest point over the faces of the cone: the apex, each extreme ray,
        // and (in 2D) each two-dimensional face spanned by adjacent rays.
        let hull = self.hull(x);
        let z = [m, w[0], w[1]];
        let gen = |v: &Point| [1.0, v[0], v[1]];
        let d3 = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let mut best = [0.0; 3];
        let mut best_d = d3(&z, &z);
        let mut consider = |c: [f64; 3]| {
            let diff = [z[0] - c[0], z[1] - c[1], z[2] - c[2]];
            let dd = d3(&diff, &diff);
            if dd < best_d {
                best_d = dd;
                best = c;
            }
        };
        for v in &hull {
            let g = gen(v);
            let t = d3(&z, &g) / d3(&g, &g);
            if t > 0.0 {
                consider([t * g[0], t * g[1], t * g[2]]);
            }
        }
        if self.dim == 2 && hull.len() >= 3 {
            let n = hull.len();
            for i in 0..n {
                let a = gen(&hull[i]);
                let b = gen(&hull[(i + 1) % n]);
                let (aa, ab, bb) = (d3(&a, &a), d3(&a, &b), d3(&b, &b));
                let (za, zb) = (d3(&z, &a), d3(&z, &b));
                let det = aa * bb - ab * ab;
                if det.abs() < 1e-300 {
                    continue;
                }
                let la = (za * bb - zb * ab) / det;
                let lb = (zb * aa - za * ab) / det;
                if la >= 0.0 && lb >= 0.0 {
                    consider([
                        la * a[0] + lb * b[0],
                        la * a[1] + lb * b[1],
                        la * a[2] + lb * b[2],
                    ]);
                }
            }
        }
        (best[0], [best[1], if self.dim == 2 { best[2] } else { 0.0 }])
    }
}

fn check_common(dim: usize, c0: f64, c1: f64, lip: f64) -> Result<()> {
    if !(1..=MAX_DIM).contains(&dim) {
        return param(format!("dimension must be 1 or 2, got {dim}"));
    }
    if !(c0 > 0.0 && c0 <= c1 && c1.is_finite()) {
        return param(format!("need 0 < c0 <= c1, got c0 = {c0}, c1 = {c1}"));
    }
    if !(lip >= 0.0 && lip.is_finite()) {
        return param(format!("Lipschitz constant must be >= 0, got {lip}"));
    }
    Ok(())
}

/// Projection onto the second-order cone `{(m, w) : |w| <= c m}`.
pub fn project_soc(c: f64, m: f64, w: &Point) -> (f64, Point) {
    let nw = norm(w);
    if nw <= c * m {
        return (m, *w);
    }
    if c * nw <= -m {
        return (0.0, [0.0; MAX_DIM]);
    }
    let mp = (m + c * nw) / (1.0 + c * c);
    let s = c * mp / nw;
    (mp, [s * w[0], s * w[1]])
}

/// Power-law running cost `K(f) = kappa |f|^p / p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    p: f64,
    kappa: f64,
}

const PROX_MAX_ITERS: usize = 200;
const PROX_TOL: f64 = 1e-12;

impl CostModel {
    /// Any exponent `p > 1`; dimension-specific growth requirements are checked by
    /// [`CostModel::for_dim`].
    pub fn new(p: f64, kappa: f64) -> Result<Self> {
        if !(p > 1.0 && p.is_finite()) {
            return param(format!("cost exponent must exceed 1, got {p}"));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return param(format!("cost coefficient must be positive, got {kappa}"));
        }
        Ok(Self { p, kappa })
    }

    /// Cost admissible in dimension `dim`: requires `p > dim + 1`.
    pub fn for_dim(p: f64, kappa: f64, dim: usize) -> Result<Self> {
        if !(p > dim as f64 + 1.0) {
            return param(format!("cost exponent p = {p} must exceed N + 1 = {}", dim + 1));
        }
        Self::new(p, kappa)
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.p / (self.p - 1.0)
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// `K(f)`.
    pub fn cost(&self, f: f64) -> f64 {
        self.kappa * f.abs().powf(self.p) / self.p
    }

    /// `K*(m)`.
    pub fn conj(&self, m: f64) -> f64 {
        let q = self.q();
        self.kappa.powf(1.0 - q) * m.abs().powf(q) / q
    }

    /// `k(m) = dK*/dm`.
    pub fn conj_deriv(&self, m: f64) -> f64 {
        let q = self.q();
        self.kappa.powf(1.0 - q) * m.signum() * m.abs().powf(q - 1.0)
    }

    /// `argmin_{m >= 0} (m - m_bar)^2 / 2 + step K*(m)`.
    pub fn prox_conj(&self, m_bar: f64, step: f64) -> Result<f64> {
        if !(step > 0.0) {
            return param(format!("prox step must be positive, got {step}"));
        }
        if !m_bar.is_finite() {
            return Err(Error::Numeric(format!("prox input is not finite: {m_bar}")));
        }
        if m_bar <= 0.0 {
            return Ok(0.0);
        }
        // Root of g(m) = m + c m^e - m_bar on [0, m_bar].
        let q = self.q();
        let c = step * self.kappa.powf(1.0 - q);
        let e = q - 1.0;
        let pow = |m: f64| if e == 0.5 { m.sqrt() } else { m.powf(e) };
        let (mut lo, mut hi) = (0.0f64, m_bar);
        // Start from the tangent step at m_bar, which is exact when e = 1.
        let pb = pow(m_bar);
        let mut m = m_bar - c * pb / (1.0 + c * e * pb / m_bar);
        if !(m > 0.0 && m < m_bar) {
            m = 0.5 * m_bar;
        }
        for _ in 0..PROX_MAX_ITERS {
            let pm = pow(m);
            let gm = m + c * pm - m_bar;
            if gm == 0.0 {
                return Ok(m);
            }
            if gm > 0.0 {
                hi = m;
            } else {
                lo = m;
            }
            if hi - lo <= PROX_TOL * m_bar.max(1.0) {
                return Ok(0.5 * (lo + hi));
            }
            let dg = 1.0 + c * e * pm / m;
            let delta = gm / dg;
            let newton = m - delta;
            m = if newton.is_finite() && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if delta.abs() <= 0.25 * PROX_TOL * m_bar.max(1.0) {
                return Ok(m);
            }
        }
        Err(Error::Numeric(format!(
            "prox of K* did not converge (m_bar = {m_bar}, step = {step}, p = {}, kappa = {})",
            self.p, self.kappa
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn iso(c: f64) -> SpeedModel {
        SpeedModel::isotropic_constant(2, c).unwrap()
    }

    fn square_controls() -> SpeedModel {
        // Square with vertices (+-1, +-1): contains the unit ball, inside radius sqrt 2.
        let v = [[1.0, 1.0], [-1.0, 1.0], [-1.0, -1.0], [1.0, -1.0]]
            .into_iter()
            .map(Control::constant)
            .collect();
        SpeedModel::finite_controls(2, v, 1.0, 2f64.sqrt(), 0.0).unwrap()
    }

    const X: Point = [0.3, 0.7];

    #[test]
    fn hamiltonian_examples() {
        assert_relative_eq!(iso(1.0).hamiltonian(&X, &[3.0, 4.0]), 5.0);
        assert_eq!(iso(1.0).hamiltonian(&X, &[0.0, 0.0]), 0.0);
        assert_eq!(square_controls().hamiltonian(&X, &[0.0, 0.0]), 0.0);
        assert_relative_eq!(iso(2.0).hamiltonian(&X, &[-1.0, 0.0]), 2.0);
        // Square: support in direction (1,0) is 1; in direction (1,1) is 2.
        assert_relative_eq!(square_controls().hamiltonian(&X, &[-1.0, 0.0]), 1.0);
        assert_relative_eq!(square_controls().hamiltonian(&X, &[-1.0, -1.0]), 2.0);
    }

    #[test]
    fn conjugate_membership_examples() {
        assert!(iso(1.0).conjugate_membership(&X, &[0.6, 0.8]));
        assert!(!iso(1.0).conjugate_membership(&X, &[1.1, 0.0]));
        assert!(iso(1.0).conjugate_membership(&X, &[0.0, 0.0]));
        assert!(square_controls().conjugate_membership(&X, &[0.0, 0.0]));
        assert!(square_controls().conjugate_membership(&X, &[0.99, -0.99]));
        assert!(!square_controls().conjugate_membership(&X, &[1.01, 0.0]));
    }

    #[test]
    fn project_cone_examples() {
        let s = iso(1.0);
        assert_eq!(s.project_cone(&X, 2.0, &[1.0, 0.0]), (2.0, [1.0, 0.0]));
        let (m, w) = s.project_cone(&X, 0.0, &[2.0, 0.0]);
        assert_relative_eq!(m, 1.0);
        assert_relative_eq!(w[0], 1.0);
        assert_eq!(s.project_cone(&X, -2.0, &[0.0, 0.0]), (0.0, [0.0, 0.0]));
    }

    #[test]
    fn rejects_bad_models() {
        assert!(SpeedModel::isotropic_constant(3, 1.0).is_err());
        assert!(SpeedModel::isotropic(1, RadiusProfile::Constant(0.5), 1.0, 2.0, 0.0).is_err());
        // Hull of two velocities in 2D cannot contain a ball.
        let v = vec![Control::constant([1.0, 0.0]), Control::constant([-1.0, 0.0])];
        assert!(SpeedModel::finite_controls(2, v, 0.5, 1.0, 0.0).is_err());
        let v = vec![Control::constant([1.0, 0.0]), Control::constant([-1.0, 0.0])];
        assert!(SpeedModel::finite_controls(1, v, 1.0, 1.0, 0.0).is_ok());
    }

    #[test]
    fn hamiltonian_bounds_hold() {
        let s = square_controls();
        for i in 0..50 {
            let a = i as f64 * 0.37;
            let p = [a.cos() * 1.3, a.sin() * 1.3];
            let h = s.hamiltonian(&X, &p);
            assert!(h >= s.c0() * norm(&p) - 1e-12 && h <= s.c1() * norm(&p) + 1e-12);
        }
    }

    #[test]
    fn nodal_radius_lipschitz_bound() {
        let g = TorusGrid::new(&[32], 2, 1.0).unwrap();
        let vals = g.sample(|x| 1.5 + 0.5 * (std::f64::consts::TAU * x[0]).sin());
        let lip = crate::grid::lipschitz_slice(&g, &vals);
        let s = SpeedModel::isotropic(1, RadiusProfile::Nodal { grid: g, values: vals }, 1.0, 2.0, lip).unwrap();
        for i in 0..40 {
            for j in 0..40 {
                let (x, y) = ([i as f64 / 40.0, 0.0], [j as f64 / 41.0, 0.0]);
                let p = [2.5, 0.0];
                let lhs = (s.hamiltonian(&x, &p) - s.hamiltonian(&y, &p)).abs();
                let dist = norm(&s_torus(&x, &y));
                assert!(lhs <= s.lip() * dist * norm(&p) + 1e-12);
            }
        }
        fn s_torus(a: &Point, b: &Point) -> Point {
            let mut d = (b[0] - a[0]).rem_euclid(1.0);
            if d > 0.5 {
                d -= 1.0;
            }
            [d, 0.0]
        }
    }

    #[test]
    fn cost_closed_forms() {
        let k = CostModel::new(3.0, 1.0).unwrap();
        assert_relative_eq!(k.conj(1.0), 2.0 / 3.0, max_relative = 1e-15);
        assert_relative_eq!(k.conj_deriv(4.0), 2.0, max_relative = 1e-15);
        assert_eq!(k.cost(0.0), 0.0);
        assert_eq!(k.conj(0.0), 0.0);
        assert_relative_eq!(k.cost(k.conj_deriv(1.0)) + k.conj(1.0), 1.0, max_relative = 1e-15);
        assert!(CostModel::for_dim(2.0, 1.0, 1).is_err());
        assert!(CostModel::for_dim(3.0, 1.0, 2).is_err());
        assert!(CostModel::for_dim(3.0, 1.0, 1).is_ok());
        assert!(CostModel::new(3.0, 0.0).is_err());
    }

    #[test]
    fn prox_examples() {
        let k3 = CostModel::new(3.0, 1.0).unwrap();
        assert_eq!(k3.prox_conj(-1.0, 0.7).unwrap(), 0.0);
        assert_eq!(k3.prox_conj(0.0, 0.7).unwrap(), 0.0);
        let k2 = CostModel::new(2.0, 1.0).unwrap();
        assert_relative_eq!(k2.prox_conj(3.0, 1.0).unwrap(), 1.5, max_relative = 1e-12);
        assert!(k3.prox_conj(1.0, 0.0).is_err());
    }

    /// Golden-section search on the prox objective; independent of the root finder.
    fn golden_prox(k: &CostModel, m_bar: f64, step: f64) -> f64 {
        let obj = |m: f64| 0.5 * (m - m_bar).powi(2) + step * k.conj(m);
        let (mut a, mut b) = (0.0, m_bar.max(0.0) + 1.0);
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - r * (b - a);
            let d = a + r * (b - a);
            if obj(c) < obj(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn prox_root_for_p3() {
        // Root of m + m^(1/2) = 2 is m = 1.
        let k = CostModel::new(3.0, 1.0).unwrap();
        let m = k.prox_conj(2.0, 1.0).unwrap();
        assert!((m + m.sqrt() - 2.0).abs() < 1e-12);
        assert!((m - 1.0).abs() < 1e-12);
        assert!((golden_prox(&k, 2.0, 1.0) - 1.0).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn prox_matches_golden_section(m_bar in -2.0..20.0f64, step in 0.01..10.0f64, p in 2.1..6.0f64, kappa in 0.2..4.0f64) {
            let k = CostModel::new(p, kappa).unwrap();
            let m = k.prox_conj(m_bar, step).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert!((m - golden_prox(&k, m_bar, step)).abs() < 1e-6 * (1.0 + m_bar.abs()));
        }

        #[test]
        fn fenchel_young(f in -5.0..5.0f64, m in 0.0..5.0f64, p in 2.1..6.0f64, kappa in 0.2..4.0f64) {
            let k = CostModel::new(p, kappa).unwrap();
            prop_assert!(k.cost(f) + k.conj(m) >= f * m - 1e-10);
            let fm = k.conj_deriv(m);
            let defect = k.cost(fm) + k.conj(m) - fm * m;
            prop_assert!(defect.abs() <= 1e-12 * (1.0 + (fm * m).abs()));
        }

        #[test]
        fn hamiltonian_homogeneous_subadditive(
            a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, d in -3.0..3.0f64, lam in 0.0..5.0f64,
        ) {
            for s in [iso(1.7), square_controls()] {
                let p = [a, b];
                let r = [c, d];
                let h = |v: &Point| s.hamiltonian(&X, v);
                prop_assert!((h(&[lam * a, lam * b]) - lam * h(&p)).abs() <= 1e-12 * (1.0 + lam * h(&p)));
                prop_assert!(h(&[a + c, b + d]) <= h(&p) + h(&r) + 1e-12);
            }
        }

        #[test]
        fn projection_idempotent_nonexpansive(
            m1 in -3.0..3.0f64, a1 in -3.0..3.0f64, b1 in -3.0..3.0f64,
            m2 in -3.0..3.0f64, a2 in -3.0..3.0f64, b2 in -3.0..3.0f64,
        ) {
            for s in [iso(1.3), square_controls()] {
                let (pm, pw) = s.project_cone(&X, m1, &[a1, b1]);
                let (qm, qw) = s.project_cone(&X, pm, &pw);
                prop_assert!((qm - pm).abs() < 1e-12 && (qw[0] - pw[0]).abs() < 1e-12 && (qw[1] - pw[1]).abs() < 1e-12);
                prop_assert!(pm >= 0.0);
                prop_assert!(pm == 0.0 || s.contains_velocity(&X, &[pw[0] / pm, pw[1] / pm]));
                let (rm, rw) = s.project_cone(&X, m2, &[a2, b2]);
                let before = ((m1 - m2).powi(2) + (a1 - a2).powi(2) + (b1 - b2).powi(2)).sqrt();
                let after = ((pm - rm).powi(2) + (pw[0] - rw[0]).powi(2) + (pw[1] - rw[1]).powi(2)).sqrt();
                prop_assert!(after <= before + 1e-12);
            }
        }

        #[test]
        fn polyhedral_projection_is_nearest(
            m in -3.0..3.0f64, a in -3.0..3.0f64, b in -3.0..3.0f64,
        ) {
            // Brute force: scan the cone with a fine sampling of (m, v) pairs.
            let s = square_controls();
            let (pm, pw) = s.project_cone(&X, m, &[a, b]);
            let d_proj = ((pm - m).powi(2) + (pw[0] - a).powi(2) + (pw[1] - b).powi(2)).sqrt();
            let mut best = f64::INFINITY;
            for i in 0..=60 {
                let mm = 4.0 * i as f64 / 60.0;
                for j in 0..=30 {
                    for l in 0..=30 {
                        let v = [-1.0 + 2.0 * j as f64 / 30.0, -1.0 + 2.0 * l as f64 / 30.0];
                        let d = ((mm - m).powi(2) + (mm * v[0] - a).powi(2) + (mm * v[1] - b).powi(2)).sqrt();
                        best = best.min(d);
                    }
                }
            }
            prop_assert!(d_proj <= best + 1e-12);
        }

        #[test]
        fn scaled_set_projection_is_nearest(s in 0.0..2.0f64, a in -3.0..3.0f64, b in -3.0..3.0f64) {
            let sq = square_controls();
            let p = sq.project_scaled_set(&X, s, &[a, b]);
            prop_assert!(p[0].abs() <= s + 1e-12 && p[1].abs() <= s + 1e-12);
            // The square scaled by s is a box: clamping is the projection.
            prop_assert!((p[0] - a.clamp(-s, s)).abs() < 1e-12);
            prop_assert!((p[1] - b.clamp(-s, s)).abs() < 1e-12);
            let q = iso(1.5).project_scaled_set(&X, s, &[a, b]);
            let r = (a * a + b * b).sqrt();
            prop_assert!((norm(&q) - r.min(1.5 * s)).abs() < 1e-12);
        }
    }
}
