//! Writing run artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use frontsteer_core::grid::ScalarField;
use frontsteer_core::hj::{self, FrontMode};
use frontsteer_core::io::{Encoding, FieldFile};
use serde::Serialize;

use crate::config::{OutputConfig, RunConfig};
use crate::failure::Failure;

pub struct Output {
    pub dir: PathBuf,
    pub cfg: OutputConfig,
}

impl Output {
    pub fn create(cfg: &OutputConfig) -> Result<Self, Failure> {
        fs::create_dir_all(&cfg.directory).map_err(|e| Failure::Io(format!("{}: {e}", cfg.directory.display())))?;
        Ok(Self {
            dir: cfg.directory.clone(),
            cfg: cfg.clone(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn text(&self, name: &str, content: &str) -> Result<(), Failure> {
        write(&self.path(name), content.as_bytes())
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), Failure> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
        s.push('\n');
        self.text(name, &s)
    }

    /// CSV output, skipped unless `emit_csv`.
    pub fn csv(&self, name: &str, content: &str) -> Result<(), Failure> {
        if self.cfg.emit_csv {
            self.text(name, content)?;
        }
        Ok(())
    }

    pub fn field(&self, name: &str, file: &FieldFile) -> Result<(), Failure> {
        if !self.cfg.emit_fields {
            return Ok(());
        }
        let enc = if self.cfg.binary { Encoding::Binary } else { Encoding::Text };
        file.write(self.path(name), enc).map_err(Failure::from_core)
    }

    /// Grayscale frames of a scalar field, when `emit_pgm` is set.
    pub fn pgm(&self, stem: &str, f: &ScalarField) -> Result<(), Failure> {
        if !self.cfg.emit_pgm {
            return Ok(());
        }
        let dir = self.path("pgm");
        fs::create_dir_all(&dir)?;
        for (name, bytes) in pgm_frames(stem, f) {
            write(&dir.join(name), &bytes)?;
        }
        Ok(())
    }

    /// `manifest.json`: command and the fully resolved configuration.
    pub fn manifest(&self, command: &str, cfg: &RunConfig, refine: u32) -> Result<(), Failure> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            tool: &'static str,
            version: &'static str,
            command: &'a str,
            refine: u32,
            config: &'a RunConfig,
        }
        self.json(
            "manifest.json",
            &Manifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command,
                refine,
                config: cfg,
            },
        )
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Binary PGM frames, values mapped affinely from `[min, max]` to `0..=255`;
/// the range is recorded in a comment line. 2D fields give one frame per
/// level; a 1D field gives a single space-time frame with one row per level.
pub fn pgm_frames(stem: &str, f: &ScalarField) -> Vec<(String, Vec<u8>)> {
    let g = f.grid();
    let lo = f.values().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = f.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = if hi > lo { 255.0 / (hi - lo) } else { 0.0 };
    let pix = |v: f64| ((v - lo) * scale).round().clamp(0.0, 255.0) as u8;
    let frame = |w: usize, h: usize, vals: &[f64]| {
        let mut out = format!("P5\n# min={lo:e} max={hi:e}\n{w} {h}\n255\n").into_bytes();
        out.extend(vals.iter().map(|&v| pix(v)));
        out
    };
    if g.dim() == 1 {
        return vec![(format!("{stem}.pgm"), frame(g.nx()[0], g.nt(), f.values()))];
    }
    let (w, h) = (g.nx()[0], g.nx()[1]);
    (0..g.nt())
        .map(|k| {
            // First axis runs left to right, second axis bottom to top.
            let lvl = f.level(k);
            let mut vals = vec![0.0; w * h];
            for i in 0..w * h {
                let idx = g.multi_index(i);
                vals[(h - 1 - idx[1]) * w + idx[0]] = lvl[i];
            }
            (format!("{stem}_{k:04}.pgm"), frame(w, h, &vals))
        })
        .collect()
}

/// `level,t,node,x_1[,x_2]` for every cell with `u <= 0`.
pub fn front_csv(u: &ScalarField) -> String {
    let g = u.grid();
    let d = g.dim();
    let mut s = String::from("level,t,node");
    for a in 0..d {
        let _ = write!(s, ",x_{}", a + 1);
    }
    s.push('\n');
    for k in 0..g.nt() {
        let cells = hj::extract_front(u, k, 0.0, FrontMode::SubLevel).expect("level in range");
        for i in cells {
            let x = g.node_point(i);
            let _ = write!(s, "{k},{},{i}", g.time(k));
            for xa in &x[..d] {
                let _ = write!(s, ",{xa}");
            }
            s.push('\n');
        }
    }
    s
}
