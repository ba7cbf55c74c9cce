//! Field files.
//!
//! ```text
//! frontsteer-field v1 dim=<N> nx=<n1[,n2]> nt=<levels> T=<horizon> kind=<scalar|density|vector>
//! ```
//!
//! followed either by one text line per time level (whitespace separated,
//! vector components interleaved per node) or, for the binary variant, by
//! little-endian `f64` values in the same order. A non-unit torus period is
//! recorded as an extra trailing `period=<l1[,l2]>` key. Single slices
//! (terminal data, initial densities) are stored with `nt=1`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{DensityField, ScalarField, TorusGrid, VecField};

const MAGIC: &str = "frontsteer-field";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Density,
    Vector,
}

impl FieldKind {
    fn as_str(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Density => "density",
            FieldKind::Vector => "vector",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Text,
    Binary,
}

/// Raw contents of a field file.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldFile {
    pub nx: Vec<usize>,
    pub nt: usize,
    pub horizon: f64,
    pub period: Vec<f64>,
    pub kind: FieldKind,
    pub values: Vec<f64>,
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn fmt_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl FieldFile {
    pub fn dim(&self) -> usize {
        self.nx.len()
    }

    fn per_node(&self) -> usize {
        match self.kind {
            FieldKind::Vector => self.dim(),
            _ => 1,
        }
    }

    fn row_len(&self) -> usize {
        self.nx.iter().product::<usize>() * self.per_node()
    }

    pub fn header(&self) -> String {
        let mut h = format!(
            "{MAGIC} v1 dim={} nx={} nt={} T={} kind={}",
            self.dim(),
            join(&self.nx),
            self.nt,
            self.horizon,
            self.kind.as_str()
        );
        if self.period.iter().any(|&l| l != 1.0) {
            let _ = write!(h, " period={}", join(&self.period));
        }
        h
    }

    pub fn from_scalar(f: &ScalarField) -> Self {
        Self::from_parts(f.grid(), f.grid().nt(), FieldKind::Scalar, f.values().to_vec())
    }

    pub fn from_density(f: &DensityField) -> Self {
        Self::from_parts(f.grid(), f.grid().nt(), FieldKind::Density, f.values().to_vec())
    }

    pub fn from_vector(f: &VecField) -> Self {
        Self::from_parts(f.grid(), f.grid().nt(), FieldKind::Vector, f.values().to_vec())
    }

    /// A single space slice on `grid` (stored with `nt=1`).
    pub fn from_slice(grid: &TorusGrid, kind: FieldKind, values: Vec<f64>) -> Self {
        Self::from_parts(grid, 1, kind, values)
    }

    fn from_parts(grid: &TorusGrid, nt: usize, kind: FieldKind, values: Vec<f64>) -> Self {
        Self {
            nx: grid.nx().to_vec(),
            nt,
            horizon: grid.horizon(),
            period: grid.period().to_vec(),
            kind,
            values,
        }
    }

    fn check_space(&self, grid: &TorusGrid) -> Result<()> {
        if self.nx != grid.nx() || self.period != grid.period() {
            return Err(fmt_err(format!(
                "field grid nx={:?} period={:?} does not match problem grid nx={:?} period={:?}",
                self.nx,
                self.period,
                grid.nx(),
                grid.period()
            )));
        }
        Ok(())
    }

    /// Interpret as a full space-time scalar field on `grid`.
    pub fn into_scalar(self, grid: &TorusGrid) -> Result<ScalarField> {
        self.check_space(grid)?;
        if self.kind == FieldKind::Vector {
            return Err(fmt_err("expected a scalar field, found vector"));
        }
        if self.nt != grid.nt() {
            return Err(fmt_err(format!("expected nt={}, found {}", grid.nt(), self.nt)));
        }
        ScalarField::new(grid.clone(), self.values)
    }

    pub fn into_density(self, grid: &TorusGrid) -> Result<DensityField> {
        self.check_space(grid)?;
        if self.nt != grid.nt() {
            return Err(fmt_err(format!("expected nt={}, found {}", grid.nt(), self.nt)));
        }
        DensityField::new(grid.clone(), self.values)
    }

    pub fn into_vector(self, grid: &TorusGrid) -> Result<VecField> {
        self.check_space(grid)?;
        if self.kind != FieldKind::Vector {
            return Err(fmt_err("expected a vector field"));
        }
        if self.nt != grid.nt() {
            return Err(fmt_err(format!("expected nt={}, found {}", grid.nt(), self.nt)));
        }
        VecField::new(grid.clone(), self.values)
    }

    /// Interpret as one space slice on `grid`; a full field contributes its first level.
    pub fn into_slice(self, grid: &TorusGrid) -> Result<Vec<f64>> {
        self.check_space(grid)?;
        let n = grid.n_space();
        let mut v = self.values;
        v.truncate(n);
        Ok(v)
    }

    pub fn to_text(&self) -> String {
        let mut s = self.header();
        s.push('\n');
        let row = self.row_len();
        for chunk in self.values.chunks(row) {
            let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = self.header().into_bytes();
        out.push(b'\n');
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, encoding: Encoding) -> Result<()> {
        match encoding {
            Encoding::Text => fs::write(path, self.to_text())?,
            Encoding::Binary => fs::write(path, self.to_binary())?,
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::parse(&bytes)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| fmt_err("missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| fmt_err("header is not UTF-8"))?;
        let mut file = parse_header(header)?;
        let body = &bytes[nl + 1..];
        let count = file.row_len() * file.nt;
        let values = match std::str::from_utf8(body).ok().and_then(|t| parse_text(t, count)) {
            Some(v) => v,
            None if body.len() == count * 8 => body
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
            None => return Err(fmt_err(format!("expected {count} values in body"))),
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fmt_err("non-finite value in field file"));
        }
        file.values = values;
        Ok(file)
    }
}

fn parse_text(text: &str, count: usize) -> Option<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = text.split_whitespace().map(str::parse).collect();
    match vals {
        Ok(v) if v.len() == count => Some(v),
        _ => None,
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, key: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.parse().map_err(|_| fmt_err(format!("bad value for {key}: {s}"))))
        .collect()
}

fn parse_header(header: &str) -> Result<FieldFile> {
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) || tokens.next() != Some("v1") {
        return Err(fmt_err(format!("not a {MAGIC} v1 file")));
    }
    let (mut dim, mut nx, mut nt, mut horizon, mut kind, mut period) = (None, None, None, None, None, None);
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| fmt_err(format!("bad header token {tok}")))?;
        match k {
            "dim" => dim = Some(v.parse::<usize>().map_err(|_| fmt_err("bad dim"))?),
            "nx" => nx = Some(parse_list::<usize>(v, k)?),
            "nt" => nt = Some(v.parse::<usize>().map_err(|_| fmt_err("bad nt"))?),
            "T" => horizon = Some(v.parse::<f64>().map_err(|_| fmt_err("bad T"))?),
            "kind" => {
                kind = Some(match v {
                    "scalar" => FieldKind::Scalar,
                    "density" => FieldKind::Density,
                    "vector" => FieldKind::Vector,
                    _ => return Err(fmt_err(format!("unknown kind {v}"))),
                })
            }
            "period" => period = Some(parse_list::<f64>(v, k)?),
            _ => return Err(fmt_err(format!("unknown header key {k}"))),
        }
    }
    let nx = nx.ok_or_else(|| fmt_err("missing nx"))?;
    let dim = dim.ok_or_else(|| fmt_err("missing dim"))?;
    if nx.len() != dim || !(1..=2).contains(&dim) {
        return Err(fmt_err(format!("dim={dim} inconsistent with nx={nx:?}")));
    }
    let period = period.unwrap_or_else(|| vec![1.0; dim]);
    if period.len() != dim {
        return Err(fmt_err("period length must equal dim"));
    }
    Ok(FieldFile {
        nx,
        nt: nt.ok_or_else(|| fmt_err("missing nt"))?,
        horizon: horizon.ok_or_else(|| fmt_err("missing T"))?,
        period,
        kind: kind.ok_or_else(|| fmt_err("missing kind"))?,
        values: Vec::new(),
    })
}
