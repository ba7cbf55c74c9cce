//! Subcommand drivers. Each returns the exit code for a completed run
//! (0 or 1) or a [`Failure`] carrying its own code.

use std::fmt::Write as _;
use std::path::PathBuf;

use frontsteer_core::certify::{self, CertReport, Fields};
use frontsteer_core::grid::{DensityField, ScalarField, TorusGrid, VecField};
use frontsteer_core::hj::{self, FrontMode};
use frontsteer_core::io::FieldFile;
use frontsteer_core::pdopt;
use frontsteer_core::presets::{Counterexample, ErrorSummary};
use frontsteer_core::transport;
use log::info;
use serde::Serialize;

use crate::config::{CounterexampleConfig, RunConfig, Source};
use crate::failure::Failure;
use crate::output::{front_csv, Output};

/// Largest off-band error accepted by `reproduce`.
pub const REPRODUCE_TOL: f64 = 0.05;
/// Obstacle widths reproduced by `reproduce`; zero is the discontinuous limit.
pub const REPRODUCE_EPS: [f64; 4] = [0.2, 0.1, 0.05, 0.0];
/// Allowed relative mass drift in `solve-transport`.
pub const MASS_TOL: f64 = 1e-12;

pub struct Invocation {
    pub config: RunConfig,
    pub refine: u32,
    pub f_file: Option<PathBuf>,
    pub v_file: Option<PathBuf>,
    pub bundle: Option<PathBuf>,
}

fn status(ok: bool) -> i32 {
    if ok {
        0
    } else {
        1
    }
}

fn core<T>(r: frontsteer_core::Result<T>) -> Result<T, Failure> {
    r.map_err(Failure::from_core)
}

#[derive(Serialize)]
struct RefineRow {
    level: u32,
    dx: f64,
    dt: f64,
    linf: Option<f64>,
    l1: Option<f64>,
}

/// Maps a node of a grid to the coincident node of its `2x` refinement.
fn fine_node(coarse: &TorusGrid, fine: &TorusGrid, node: usize) -> usize {
    let idx = coarse.multi_index(node);
    fine.flat_index([2 * idx[0] as isize, 2 * idx[1] as isize])
}

/// Max and space-time `L1` difference between a solution and its refinement at
/// shared nodes.
fn self_difference(coarse: &ScalarField, fine: &ScalarField) -> (f64, f64) {
    let (gc, gf) = (coarse.grid(), fine.grid());
    let (mut linf, mut l1) = (0.0_f64, 0.0);
    for k in 0..gc.nt() {
        for i in 0..gc.n_space() {
            let d = (coarse.get(k, i) - fine.get(2 * k, fine_node(gc, gf, i))).abs();
            linf = linf.max(d);
            l1 += d * gc.cell_volume() * gc.time_weight(k);
        }
    }
    (linf, l1)
}

fn refine_csv(rows: &[RefineRow]) -> String {
    let mut s = String::from("level,dx,dt,linf,l1,order_linf,order_l1\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
    for (j, r) in rows.iter().enumerate() {
        let order = |get: fn(&RefineRow) -> Option<f64>| match (j.checked_sub(1).map(|p| get(&rows[p])), get(r)) {
            (Some(Some(a)), Some(b)) if a > 0.0 && b > 0.0 => format!("{:.4}", (a / b).log2()),
            _ => String::new(),
        };
        let _ = writeln!(
            s,
            "{},{:e},{:e},{},{},{},{}",
            r.level,
            r.dx,
            r.dt,
            opt(r.linf),
            opt(r.l1),
            order(|r| r.linf),
            order(|r| r.l1)
        );
    }
    s
}

pub fn solve_hj(inv: &Invocation) -> Result<i32, Failure> {
    let mut cfg = inv.config.clone();
    if let Some(f) = &inv.f_file {
        cfg.problem.obstacle = Source::File(f.clone());
    }
    cfg.validate()?;
    let out = Output::create(&cfg.outputs)?;
    out.manifest("solve-hj", &cfg, inv.refine)?;

    let mut rows = Vec::new();
    let mut prev: Option<ScalarField> = None;
    let mut last = None;
    for j in 0..=inv.refine {
        let asm = cfg.refined(j).problem.assemble()?;
        let u = core(hj::solve_value_function(&asm.problem, &asm.obstacle))?;
        let g = &asm.problem.grid;
        info!("solve-hj level {j}: nx {:?}, nt {}", g.nx(), g.nt());
        let err = asm.counterexample.as_ref().map(|ce| ce.off_band_error(&u));
        rows.push(RefineRow {
            level: j,
            dx: g.max_dx(),
            dt: g.dt(),
            linf: err.map(|e| e.linf),
            l1: err.map(|e| e.l1),
        });
        // Without an oracle, each level is compared with the next finer one.
        if let (Some(p), None) = (&prev, err) {
            let (linf, l1) = self_difference(p, &u);
            let row = &mut rows[j as usize - 1];
            row.linf = Some(linf);
            row.l1 = Some(l1);
        }
        prev = Some(u.clone());
        last = Some((asm, u));
    }
    let (asm, u) = last.expect("at least one level");
    out.field("u.field", &FieldFile::from_scalar(&u))?;
    out.csv("front.csv", &front_csv(&u))?;
    out.pgm("u", &u)?;
    if inv.refine > 0 {
        out.csv("refinement.csv", &refine_csv(&rows))?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        nx: &'a [usize],
        nt: usize,
        cfl_ratio: f64,
        off_band: Option<ErrorJson>,
        refinement: &'a [RefineRow],
    }
    let summary = Summary {
        nx: asm.problem.grid.nx(),
        nt: asm.problem.grid.nt(),
        cfl_ratio: hj::cfl_ratio(&asm.problem),
        off_band: asm.counterexample.as_ref().map(|ce| ErrorJson::from(ce.off_band_error(&u))),
        refinement: &rows,
    };
    out.json("summary.json", &summary)?;
    Ok(0)
}

#[derive(Serialize)]
struct ErrorJson {
    linf: f64,
    l1: f64,
    count: usize,
    worst_t: f64,
    worst_x: f64,
}

impl From<ErrorSummary> for ErrorJson {
    fn from(e: ErrorSummary) -> Self {
        Self {
            linf: e.linf,
            l1: e.l1,
            count: e.count,
            worst_t: e.worst.0,
            worst_x: e.worst.1,
        }
    }
}

pub fn solve_transport(inv: &Invocation) -> Result<i32, Failure> {
    let mut cfg = inv.config.refined(inv.refine);
    if let Some(v) = &inv.v_file {
        cfg.transport.velocity = Source::File(v.clone());
    }
    cfg.validate()?;
    let out = Output::create(&cfg.outputs)?;
    out.manifest("solve-transport", &cfg, inv.refine)?;
    let asm = cfg.problem.assemble()?;
    let problem = &asm.problem;
    let v = cfg.transport.velocity(problem, cfg.seed)?;
    let m = core(transport::solve_continuity(&problem.initial, &v))?;
    let drift = transport::mass_drift(&m);
    let g = &problem.grid;

    let mut mass = String::from("level,t,mass\n");
    for k in 0..g.nt() {
        let _ = writeln!(mass, "{k},{},{:e}", g.time(k), core(m.mass(k))?);
    }
    out.field("m.field", &FieldFile::from_density(&m))?;
    out.csv("mass.csv", &mass)?;
    out.pgm("m", &m.as_scalar())?;

    let mut pushforward = None;
    if cfg.transport.trajectories > 0 {
        let ens = core(transport::sample_trajectories(&problem.initial, &v, cfg.transport.trajectories, cfg.seed))?;
        out.csv("trajectories.csv", &ens.to_csv())?;
        pushforward = Some(core(transport::pushforward_distance(&ens, &m, g.nt() - 1))?);
    }

    #[derive(Serialize)]
    struct Summary {
        mass_drift: f64,
        outflow_ratio: f64,
        pushforward_l1: Option<f64>,
        passed: bool,
    }
    let passed = drift <= MASS_TOL;
    out.json(
        "summary.json",
        &Summary {
            mass_drift: drift,
            outflow_ratio: transport::outflow_ratio(&v),
            pushforward_l1: pushforward,
            passed,
        },
    )?;
    Ok(status(passed))
}

fn write_reports(out: &Output, reports: &[CertReport]) -> Result<bool, Failure> {
    out.json("cert.json", &reports)?;
    for r in reports {
        info!(
            "{}: {} (lhs {:e}, rhs {:e}, slack {:e})",
            r.name,
            if r.passed { "pass" } else { "FAIL" },
            r.lhs,
            r.rhs,
            r.slack
        );
    }
    Ok(reports.iter().all(|r| r.passed))
}

pub fn optimize(inv: &Invocation) -> Result<i32, Failure> {
    let cfg = inv.config.refined(inv.refine);
    cfg.validate()?;
    let out = Output::create(&cfg.outputs)?;
    out.manifest("optimize", &cfg, inv.refine)?;
    let asm = cfg.problem.assemble()?;
    let problem = &asm.problem;
    let bundle = core(pdopt::optimize(problem, &cfg.solver))?;
    let d = &bundle.diagnostics;

    out.field("u.field", &FieldFile::from_scalar(&bundle.u))?;
    out.field("f.field", &FieldFile::from_scalar(&bundle.f))?;
    out.field("m.field", &FieldFile::from_density(&bundle.m))?;
    out.field("w.field", &FieldFile::from_vector(&bundle.w))?;
    out.csv("diagnostics.csv", &d.to_csv(cfg.outputs.record_timing))?;
    out.pgm("u", &bundle.u)?;
    out.pgm("m", &bundle.m.as_scalar())?;

    let fields = Fields {
        u: &bundle.u,
        f: &bundle.f,
        m: &bundle.m,
        w: &bundle.w,
    };
    let reports = core(certify::certify_all(problem, fields, cfg.seed))?;
    let checks = write_reports(&out, &reports)?;

    #[derive(Serialize)]
    struct Summary {
        converged: bool,
        iterations: usize,
        a: f64,
        b: f64,
        gap: f64,
        rel_gap: f64,
        cont_residual: f64,
        checks_passed: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        wall_time_ms: Option<f64>,
    }
    let last = d.last().copied().unwrap_or(pdopt::IterRecord {
        iter: 0,
        a: 0.0,
        b: 0.0,
        gap: 0.0,
        rel_gap: 0.0,
        cont_residual: 0.0,
        time_ms: 0.0,
    });
    out.json(
        "summary.json",
        &Summary {
            converged: d.converged,
            iterations: d.iterations,
            a: last.a,
            b: last.b,
            gap: last.gap,
            rel_gap: last.rel_gap,
            cont_residual: last.cont_residual,
            checks_passed: checks,
            wall_time_ms: cfg.outputs.record_timing.then_some(d.wall_time_ms),
        },
    )?;
    Ok(status(d.converged && checks))
}

pub fn certify(inv: &Invocation) -> Result<i32, Failure> {
    let cfg = inv.config.refined(inv.refine);
    cfg.validate()?;
    let dir = inv.bundle.clone().unwrap_or_else(|| cfg.outputs.directory.clone());
    let asm = cfg.problem.assemble()?;
    let problem = &asm.problem;
    let g = &problem.grid;
    let read = |name: &str| {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Failure::Io(format!("{}: no such file", path.display())));
        }
        FieldFile::read(&path).map_err(|e| Failure::from_core(e).context(&path.display().to_string()))
    };
    let u: ScalarField = core(read("u.field")?.into_scalar(g))?;
    let f: ScalarField = core(read("f.field")?.into_scalar(g))?;
    let m: DensityField = core(read("m.field")?.into_density(g))?;
    let w: VecField = core(read("w.field")?.into_vector(g))?;
    let out = Output::create(&cfg.outputs)?;
    out.manifest("certify", &cfg, inv.refine)?;
    let reports = core(certify::certify_all(problem, Fields { u: &u, f: &f, m: &m, w: &w }, cfg.seed))?;
    Ok(status(write_reports(&out, &reports)?))
}

#[derive(Serialize)]
struct ReproduceRow {
    eps: f64,
    level: u32,
    dx: f64,
    dt: f64,
    linf_off_band: f64,
    l1_off_band: f64,
    front_t1_cells: usize,
    within_tol: bool,
}

/// Nodes of `[0, 2]` in the sub-level set `{u(1) <= 0}`.
fn final_front(ce: &Counterexample, u: &ScalarField) -> Result<usize, Failure> {
    let last = ce.grid().nt() - 1;
    let cells = core(hj::extract_front(u, last, 0.0, FrontMode::SubLevel))?;
    Ok(cells.into_iter().filter(|&i| (0.0..=2.0).contains(&ce.example_x(i))).count())
}

pub fn reproduce(inv: &Invocation) -> Result<i32, Failure> {
    let mut cfg = inv.config.clone();
    if cfg.problem.counterexample.is_none() {
        cfg.problem.counterexample = Some(CounterexampleConfig { eps: 0.1, dx: 0.01 });
        cfg.problem.nt = 401;
    }
    let base = cfg.problem.counterexample.clone().expect("set above");
    let out = Output::create(&cfg.outputs)?;
    out.manifest("reproduce", &cfg, inv.refine)?;

    let mut rows = Vec::new();
    let mut slices = String::from("eps,t,x,u,exact\n");
    for &eps in &REPRODUCE_EPS {
        for j in 0..=inv.refine {
            let f = (1usize << j) as f64;
            let nt = (cfg.problem.nt - 1) * (1 << j) + 1;
            let ce = core(Counterexample::new(eps, base.dx / f, nt))?;
            let u = if eps > 0.0 { core(ce.solve())? } else { core(ce.limit())? };
            let err = ce.off_band_error(&u);
            let g = ce.grid();
            rows.push(ReproduceRow {
                eps,
                level: j,
                dx: g.dx(0),
                dt: g.dt(),
                linf_off_band: err.linf,
                l1_off_band: err.l1,
                front_t1_cells: final_front(&ce, &u)?,
                within_tol: err.linf <= REPRODUCE_TOL,
            });
            info!("reproduce eps {eps} level {j}: off-band max error {:.4}", err.linf);
            if j == inv.refine {
                for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
                    let k = ((t / g.dt()).round() as usize).min(g.nt() - 1);
                    for i in 0..g.n_space() {
                        if let Some(ex) = ce.exact(k, i) {
                            let _ = writeln!(slices, "{eps},{},{},{},{}", g.time(k), ce.example_x(i), u.get(k, i), ex.value);
                        }
                    }
                }
            }
        }
    }
    let mut table = String::from("eps,level,dx,dt,linf_off_band,l1_off_band,front_t1_cells,within_tol\n");
    for r in &rows {
        let _ = writeln!(
            table,
            "{},{},{:e},{:e},{:e},{:e},{},{}",
            r.eps, r.level, r.dx, r.dt, r.linf_off_band, r.l1_off_band, r.front_t1_cells, r.within_tol
        );
    }
    out.csv("reproduce_summary.csv", &table)?;
    out.csv("slices.csv", &slices)?;
    out.json("summary.json", &rows)?;
    let ok = rows.iter().filter(|r| r.level == inv.refine).all(|r| r.within_tol);
    Ok(status(ok))
}
