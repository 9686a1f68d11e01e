//! Files: field snapshots, checkpoints, run configuration, manifests,
//! diagnostics tables and reports.
//!
//! All floats are written with 17 significant digits so that a re-parse
//! reproduces them exactly.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_grid, Grid, Parity, RealField};
use crate::monitors::{MonitorConfig, MonitorRow, MonitorState};
use crate::solver::{run_with, Accumulators, InitialData, Physics, SolverConfig, Start, State, TimeStepping};

/// First line of every snapshot file.
pub const MAGIC: &str = "ANISOPEDE1";

/// Lossless decimal form of a float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_f64(path: &Path, key: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(path, format!("`{key}` is not a number: `{s}`")))
}

// ---------------------------------------------------------------- snapshots

/// Write one field: a text header of `key=value` lines closed by `end`,
/// then the values as little-endian f64 with x fastest.
pub fn write_field(path: &Path, name: &str, field: &RealField, time: f64) -> Result<()> {
    let g = field.grid();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!(
        "{MAGIC}\nnx={}\nny={}\nnz={}\nh={}\nfield={name}\nparity={}\ntime={}\nend\n",
        g.nx(),
        g.ny(),
        g.nz(),
        fmt_f64(g.h()),
        field.parity(),
        fmt_f64(time)
    );
    let mut body = Vec::with_capacity(header.len() + 8 * g.len());
    body.extend_from_slice(header.as_bytes());
    for v in field.values() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&body).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldHeader {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub h: f64,
    pub field: String,
    pub parity: Parity,
    pub time: f64,
}

/// Read a field written by [`write_field`].
pub fn read_field(path: &Path) -> Result<(FieldHeader, RealField)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    let mut next = |r: &mut BufReader<File>| -> Result<String> {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format(path, "header ends before `end`"));
        }
        Ok(line.trim_end_matches('\n').to_string())
    };
    if next(&mut r)? != MAGIC {
        return Err(Error::format(path, format!("missing `{MAGIC}` magic line")));
    }
    let mut kv = std::collections::BTreeMap::new();
    loop {
        let l = next(&mut r)?;
        if l == "end" {
            break;
        }
        let (k, v) = l
            .split_once('=')
            .ok_or_else(|| Error::format(path, format!("bad header line `{l}`")))?;
        kv.insert(k.to_string(), v.to_string());
        if kv.len() > 32 {
            return Err(Error::format(path, "header too long"));
        }
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| Error::format(path, format!("header lacks `{k}`")));
    let size = |k: &str| -> Result<usize> {
        get(k)?.parse().map_err(|_| Error::format(path, format!("`{k}` is not an integer")))
    };
    let header = FieldHeader {
        nx: size("nx")?,
        ny: size("ny")?,
        nz: size("nz")?,
        h: parse_f64(path, "h", get("h")?)?,
        field: get("field")?.clone(),
        parity: Parity::parse(get("parity")?).ok_or_else(|| Error::format(path, "unknown parity"))?,
        time: parse_f64(path, "time", get("time")?)?,
    };
    let grid = make_grid(header.nx, header.ny, header.nz, header.h)
        .map_err(|e| Error::format(path, format!("header grid: {e}")))?;
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * grid.len() {
        return Err(Error::format(
            path,
            format!("expected {} bytes of data, found {}", 8 * grid.len(), bytes.len()),
        ));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let field = RealField::new(&grid, values, header.parity).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((header, field))
}

// -------------------------------------------------------------- checkpoints

const FIELD_NAMES: [&str; 3] = ["v1", "v2", "temp"];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    step: usize,
    time: f64,
    eps: f64,
    f0: f64,
    grad_v: f64,
    eps_dz_v: f64,
    grad_t: f64,
    work: f64,
}

/// Write `v1.bin`, `v2.bin`, `temp.bin` and `checkpoint.toml` into `dir`.
/// Returns the written file paths.
pub fn write_checkpoint(dir: &Path, step: usize, state: &State, acc: &Accumulators) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for (name, f) in FIELD_NAMES.iter().zip([&state.v1, &state.v2, &state.temp]) {
        let p = dir.join(format!("{name}.bin"));
        write_field(&p, name, f, state.time)?;
        files.push(p);
    }
    let p = state.physics();
    let meta = format!(
        "step = {step}\ntime = {}\neps = {}\nf0 = {}\ngrad_v = {}\neps_dz_v = {}\ngrad_t = {}\nwork = {}\n",
        fmt_f64(state.time),
        fmt_f64(p.eps),
        fmt_f64(p.f0),
        fmt_f64(acc.grad_v),
        fmt_f64(acc.eps_dz_v),
        fmt_f64(acc.grad_t),
        fmt_f64(acc.work),
    );
    let mp = dir.join("checkpoint.toml");
    fs::write(&mp, meta).map_err(|e| Error::io(&mp, e))?;
    files.push(mp);
    Ok(files)
}

/// Read a checkpoint and check it against the expected grid and physics.
pub fn read_checkpoint(dir: &Path, grid: &Grid, physics: Physics) -> Result<Start> {
    let mp = dir.join("checkpoint.toml");
    let text = fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: CheckpointMeta = toml::from_str(&text).map_err(|e| Error::format(&mp, e.to_string()))?;
    if meta.eps != physics.eps || meta.f0 != physics.f0 {
        return Err(Error::Config(format!(
            "{}: checkpoint physics (eps={}, f0={}) differ from the configuration (eps={}, f0={})",
            mp.display(),
            meta.eps,
            meta.f0,
            physics.eps,
            physics.f0
        )));
    }
    let mut fields = Vec::new();
    for name in FIELD_NAMES {
        let p = dir.join(format!("{name}.bin"));
        let (h, f) = read_field(&p)?;
        if f.grid() != grid {
            return Err(Error::GridMismatch(format!(
                "{}: grid {}x{}x{} h={} does not match {}x{}x{} h={}",
                p.display(),
                h.nx,
                h.ny,
                h.nz,
                h.h,
                grid.nx(),
                grid.ny(),
                grid.nz(),
                grid.h()
            )));
        }
        if h.field != name || h.time != meta.time {
            return Err(Error::format(&p, "field name or time disagrees with the checkpoint"));
        }
        fields.push(f.with_parity(h.parity));
    }
    let temp = fields.pop().expect("three fields");
    let v2 = fields.pop().expect("three fields");
    let v1 = fields.pop().expect("three fields");
    let state = State::new(meta.time, v1, v2, temp, physics)?;
    let acc = Accumulators { grad_v: meta.grad_v, eps_dz_v: meta.eps_dz_v, grad_t: meta.grad_t, work: meta.work };
    Ok(Start { step: meta.step, state, acc })
}

// ------------------------------------------------------------ configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    #[serde(default = "default_h")]
    pub h: f64,
}

fn default_h() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default)]
    pub eps: f64,
    #[serde(default)]
    pub f0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
    /// With `adaptive`, `dt` is the largest step and the CFL limit decides.
    #[serde(default)]
    pub adaptive: bool,
    /// CFL safety factor.
    #[serde(default = "default_safety")]
    pub cfl: f64,
}

fn default_safety() -> f64 {
    0.5
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Steps between diagnostics rows.
    #[serde(default = "one")]
    pub cadence: usize,
    /// Output directory, relative to the working directory.
    #[serde(default = "default_dir")]
    pub directory: String,
    #[serde(default = "default_diag")]
    pub diagnostics: String,
    /// Checkpoint every this many rows; 0 writes only the final state.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_dir() -> String {
    ".".into()
}

fn default_diag() -> String {
    "diagnostics.csv".into()
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { cadence: 1, directory: default_dir(), diagnostics: default_diag(), checkpoint_every: 0 }
    }
}

/// Initial data: a builtin initializer or a checkpoint directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub builtin: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorSection {
    #[serde(default = "default_m")]
    pub m: f64,
    #[serde(default = "default_m")]
    pub q: f64,
    #[serde(default = "default_m")]
    pub r: f64,
    #[serde(default = "default_qmax")]
    pub qmax: usize,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_m() -> f64 {
    4.0
}
fn default_qmax() -> usize {
    128
}
fn default_r0() -> f64 {
    0.25
}
fn default_stride() -> usize {
    2
}

impl MonitorSection {
    pub fn config(&self) -> MonitorConfig {
        MonitorConfig { m: self.m, q: self.q, r: self.r, qmax: self.qmax, r0: self.r0, stride: self.stride }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabSection {
    #[serde(default = "default_band")]
    pub band: usize,
    #[serde(default = "default_qmax")]
    pub qmax: usize,
    #[serde(default = "default_p")]
    pub p: [f64; 3],
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_band() -> usize {
    6
}
fn default_p() -> [f64; 3] {
    [4.0; 3]
}
fn default_lambda() -> f64 {
    0.5
}
fn default_margin() -> f64 {
    1e-12
}

impl LabSection {
    pub fn options(&self) -> crate::lab::LabOptions {
        crate::lab::LabOptions {
            band: self.band,
            log_sobolev: crate::lab::LogSobolev { p: self.p, lambda: self.lambda, qmax: self.qmax },
            margin: self.margin,
            ..Default::default()
        }
    }
}

/// Contents of a run configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSection,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub time: TimeSection,
    pub initial: InitialSection,
    #[serde(default)]
    pub output: OutputSection,
    pub monitor: Option<MonitorSection>,
    pub lab: Option<LabSection>,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{origin}: {m}")),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let p = &self.physics;
        if !(p.eps >= 0.0 && p.eps.is_finite()) {
            return bad(format!("physics.eps = {} must be >= 0", p.eps));
        }
        if !p.f0.is_finite() {
            return bad(format!("physics.f0 = {} must be finite", p.f0));
        }
        let t = &self.time;
        if !(t.t_end > 0.0 && t.t_end.is_finite()) {
            return bad(format!("time.t_end = {} must be > 0", t.t_end));
        }
        if !(t.dt > 0.0 && t.dt.is_finite()) {
            return bad(format!("time.dt = {} must be > 0", t.dt));
        }
        if !(t.cfl > 0.0 && t.cfl.is_finite()) {
            return bad(format!("time.cfl = {} must be > 0", t.cfl));
        }
        if self.output.cadence == 0 {
            return bad("output.cadence must be >= 1".into());
        }
        self.grid().map_err(|e| Error::Config(format!("grid: {e}")))?;
        match (&self.initial.builtin, &self.initial.checkpoint) {
            (Some(b), None) => {
                b.parse::<InitialData>().map_err(|e| Error::Config(format!("initial.builtin: {e}")))?;
            }
            (None, Some(_)) => {}
            _ => return bad("initial needs exactly one of `builtin` or `checkpoint`".into()),
        }
        if let Some(m) = &self.monitor {
            m.config().validate().map_err(|e| match e {
                Error::Config(s) => Error::Config(format!("monitor.{s}")),
                o => o,
            })?;
        }
        if let Some(l) = &self.lab {
            l.options().log_sobolev.validate().map_err(|e| Error::Config(format!("lab: {e}")))?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        make_grid(self.grid.nx, self.grid.ny, self.grid.nz, self.grid.h)
    }

    pub fn physics(&self) -> Physics {
        Physics { eps: self.physics.eps, f0: self.physics.f0 }
    }

    /// Initial state; checkpoint paths are relative to `workdir`.
    pub fn initial_start(&self, workdir: &Path) -> Result<Start> {
        let grid = self.grid()?;
        match (&self.initial.builtin, &self.initial.checkpoint) {
            (Some(b), _) => Ok(Start::new(b.parse::<InitialData>()?.state(&grid, self.physics())?)),
            (None, Some(c)) => {
                let mut s = read_checkpoint(&workdir.join(c), &grid, self.physics())?;
                s.step = 0;
                Ok(s)
            }
            (None, None) => Err(Error::Config("initial needs `builtin` or `checkpoint`".into())),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let t = &self.time;
        SolverConfig {
            physics: self.physics(),
            stepping: if t.adaptive { TimeStepping::Adaptive { dt_max: t.dt } } else { TimeStepping::Fixed(t.dt) },
            cfl_safety: t.cfl,
            t_end: t.t_end,
            cadence: self.output.cadence,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Read and validate a run configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::parse(&text, &path.display().to_string())
}

// ------------------------------------------------------------------- tables

/// Write a comma-separated table; footer lines `key=value` follow the rows.
pub fn write_table(path: &Path, columns: &[&str], rows: &[Vec<f64>], footer: &[(&str, f64)]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(columns).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.iter().map(|&x| fmt_f64(x))).map_err(csv_err)?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    for (k, v) in footer {
        writeln!(inner, "{k}={}", fmt_f64(*v)).map_err(|e| Error::io(path, e))?;
    }
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Comma-separated numeric table with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// `key=value` lines after the rows.
    pub footer: Vec<(String, f64)>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn footer_value(&self, key: &str) -> Option<f64> {
        self.footer.iter().find(|(k, _)| k == key).map(|p| p.1)
    }
}

/// Read a table written by [`write_table`] or a diagnostics file.
pub fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut body = String::new();
    let mut footer = Vec::new();
    for (n, line) in text.lines().enumerate() {
        match line.split_once('=') {
            Some((k, v)) if !line.contains(',') => footer.push((k.to_string(), parse_f64(path, k, v)?)),
            _ if !footer.is_empty() => {
                return Err(Error::format(path, format!("line {}: row after footer", n + 1)));
            }
            _ => {
                body.push_str(line);
                body.push('\n');
            }
        }
    }
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let columns: Vec<String> = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let row = rec
            .iter()
            .zip(&columns)
            .map(|(s, c)| parse_f64(path, c, s))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { columns, rows, footer })
}

// -------------------------------------------------------------- diagnostics

/// Columns written before the optional monitor columns.
pub const DIAGNOSTIC_COLUMNS: &[&str] = &[
    "step",
    "t",
    "dt",
    "kinetic_energy",
    "thermal_energy",
    "max_speed",
    "barotropic_residual",
    "parity_residual",
    "w_boundary",
    "int_grad_h_v",
    "int_eps_dz_v",
    "int_grad_h_t",
    "int_work",
];

/// Append-only writer of the diagnostics table; every row is flushed.
pub struct DiagnosticsWriter {
    path: PathBuf,
    out: csv::Writer<File>,
    width: usize,
}

impl DiagnosticsWriter {
    /// `columns` is the full header. An existing file is kept when it has
    /// the same header and `keep_through` is given: rows with a larger step
    /// are dropped.
    pub fn open(path: &Path, columns: &[String], keep_through: Option<usize>) -> Result<DiagnosticsWriter> {
        let mut kept = Vec::new();
        if let (Some(step), true) = (keep_through, path.exists()) {
            let t = read_table(path)?;
            if t.columns != columns {
                return Err(Error::format(path, "existing diagnostics have different columns"));
            }
            kept = t.rows.into_iter().filter(|r| r[0] <= step as f64).collect();
        }
        let file = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut w = DiagnosticsWriter { path: path.to_path_buf(), out: csv::Writer::from_writer(file), width: columns.len() };
        w.out.write_record(columns).map_err(|e| Error::format(path, e.to_string()))?;
        for r in &kept {
            w.push_raw(r)?;
        }
        w.flush()?;
        Ok(w)
    }

    fn push_raw(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.width {
            return Err(Error::ShapeMismatch { expected: self.width, actual: row.len() });
        }
        let fields = row.iter().enumerate().map(|(i, &x)| if i == 0 { format!("{}", x as u64) } else { fmt_f64(x) });
        self.out.write_record(fields).map_err(|e| Error::format(&self.path, e.to_string()))
    }

    /// Write one row (first entry is the step) and flush it to disk.
    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        self.push_raw(row)?;
        self.flush()
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Diagnostics columns, with monitor columns (except time) appended.
pub fn diagnostic_columns(with_monitor: bool) -> Vec<String> {
    let mut c: Vec<String> = DIAGNOSTIC_COLUMNS.iter().map(|s| s.to_string()).collect();
    if with_monitor {
        c.extend(MonitorRow::COLUMNS.iter().skip(1).map(|s| format!("m_{s}")));
    }
    c
}

fn diagnostic_row(step: usize, dt: f64, state: &State, acc: &Accumulators) -> Vec<f64> {
    let ke = 0.5 * (state.v1.values().iter().chain(state.v2.values()).map(|v| v * v).sum::<f64>())
        * state.grid().cell_volume();
    let te = 0.5 * state.temp.values().iter().map(|v| v * v).sum::<f64>() * state.grid().cell_volume();
    vec![
        step as f64,
        state.time,
        dt,
        ke,
        te,
        state.max_speed(),
        state.barotropic_residual(),
        state.parity_residual(),
        state.w_boundary(),
        acc.grad_v,
        acc.eps_dz_v,
        acc.grad_t,
        acc.work,
    ]
}

/// Rebuild the monitor series from a diagnostics table with monitor columns.
pub fn monitor_from_table(table: &Table, config: MonitorConfig) -> Result<MonitorState> {
    let mut m = MonitorState::new(config)?;
    let t = table.column("t")?;
    let cols = MonitorRow::COLUMNS[1..]
        .iter()
        .map(|c| table.column(&format!("m_{c}")))
        .collect::<Result<Vec<_>>>()?;
    for (i, &ti) in t.iter().enumerate() {
        let mut v = vec![ti];
        v.extend(cols.iter().map(|c| c[i]));
        m.rows.push(MonitorRow::from_values(&v)?);
    }
    Ok(m)
}

// ----------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub step: usize,
    pub time: f64,
    pub dir: String,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub diagnostics: String,
    /// `complete`, `incomplete` or `failed: <reason>`.
    pub status: String,
    pub resumed_from: Option<String>,
    pub config: RunConfig,
    #[serde(default)]
    pub snapshots: Vec<SnapshotEntry>,
}

impl RunManifest {
    /// Write `manifest.toml` under `workdir`, checking the listed files.
    pub fn write(&self, workdir: &Path) -> Result<PathBuf> {
        for w in self.snapshots.windows(2) {
            if !(w[1].time > w[0].time) {
                return Err(Error::InvalidArgument("snapshot times must increase".into()));
            }
        }
        for s in &self.snapshots {
            for f in &s.files {
                let p = workdir.join(f);
                if !p.exists() {
                    return Err(Error::io(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
                }
            }
        }
        let p = workdir.join("manifest.toml");
        let text = toml::to_string(self).map_err(|e| Error::format(&p, e.to_string()))?;
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<RunManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

fn rel(workdir: &Path, p: &Path) -> String {
    p.strip_prefix(workdir).unwrap_or(p).to_string_lossy().into_owned()
}

/// Run a configuration: a diagnostics row every cadence, a checkpoint every
/// `checkpoint_every` rows and at the end, and `manifest.toml`, all in the
/// output directory under `workdir`. With `resume`, continue from that
/// checkpoint directory (relative to the output directory), keeping the
/// earlier diagnostics rows.
pub fn simulate(cfg: &RunConfig, workdir: &Path, resume: Option<&Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let out = workdir.join(&cfg.output.directory);
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let start = match resume {
        Some(dir) => read_checkpoint(&out.join(dir), &cfg.grid()?, cfg.physics())?,
        None => cfg.initial_start(workdir)?,
    };
    let workdir = out.as_path();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        diagnostics: cfg.output.diagnostics.clone(),
        status: "incomplete".into(),
        resumed_from: resume.map(|p| p.to_string_lossy().into_owned()),
        config: cfg.clone(),
        snapshots: Vec::new(),
    };
    if resume.is_some() {
        if let Ok(old) = RunManifest::read(&workdir.join("manifest.toml")) {
            manifest.snapshots = old.snapshots.into_iter().filter(|s| s.step <= start.step).collect();
        }
    }
    manifest.write(workdir)?;

    let mut monitor = cfg.monitor.as_ref().map(|m| MonitorState::new(m.config())).transpose()?;
    let columns = diagnostic_columns(monitor.is_some());
    let diag_path = workdir.join(&cfg.output.diagnostics);
    let mut diag = DiagnosticsWriter::open(&diag_path, &columns, resume.map(|_| start.step))?;
    let snap_root = workdir.join("snapshots");
    let solver = cfg.solver();
    let n_fixed = solver.fixed_steps();
    let every = cfg.output.checkpoint_every;
    let cadence = solver.cadence;
    let mut snapshots = std::mem::take(&mut manifest.snapshots);

    let summary = run_with(&solver, start, |s| {
        let mut row = diagnostic_row(s.step, s.dt, s.state, s.acc);
        if let Some(m) = monitor.as_mut() {
            row.extend(m.record(s.state, s.acc)?.values().into_iter().skip(1));
        }
        diag.push(&row)?;
        let last = match n_fixed {
            Some(n) => s.step == n,
            None => s.state.time >= solver.t_end * (1.0 - 1e-12),
        };
        let due = every > 0 && (s.step / cadence) % every == 0 && s.step > 0;
        if (due || last) && snapshots.last().is_none_or(|e| e.step < s.step) {
            let dir = snap_root.join(format!("step_{:08}", s.step));
            let files = write_checkpoint(&dir, s.step, s.state, s.acc)?;
            snapshots.push(SnapshotEntry {
                step: s.step,
                time: s.state.time,
                dir: rel(workdir, &dir),
                files: files.iter().map(|f| rel(workdir, f)).collect(),
            });
        }
        Ok(())
    });
    manifest.snapshots = snapshots;
    let summary = match summary {
        Ok(s) => s,
        Err(e) => {
            manifest.status = format!("failed: {e}");
            manifest.write(workdir)?;
            return Err(e);
        }
    };
    if let Some(e) = summary.failure {
        manifest.status = format!("failed: {e}");
        manifest.write(workdir)?;
        return Err(e);
    }
    manifest.status = "complete".into();
    manifest.write(workdir)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::sample;

    const MINIMAL: &str = r#"
[initial]
builtin = "taylor,A=1.0"
[grid]
nx = 8
ny = 8
nz = 4
[time]
t_end = 0.01
dt = 0.005
"#;

    #[test]
    fn minimal_config_gets_defaults_and_echoes() {
        let c = RunConfig::parse(MINIMAL, "mem").unwrap();
        assert_eq!(c.grid.h, 0.5);
        assert_eq!(c.physics, PhysicsSection::default());
        assert_eq!(c.output.cadence, 1);
        assert_eq!(c.time.cfl, 0.5);
        let init: InitialData = c.initial.builtin.as_deref().unwrap().parse().unwrap();
        assert_eq!(init, InitialData::Taylor { a: 1.0 });
        assert_eq!(init.to_string().parse::<InitialData>().unwrap(), init);
        let echo = RunConfig::parse(&c.to_toml(), "echo").unwrap();
        assert_eq!(echo, c);
    }

    #[test]
    fn config_errors_name_the_key() {
        let e = RunConfig::parse(&format!("{MINIMAL}[physics]\neps = -1.0\n"), "mem").unwrap_err().to_string();
        assert!(e.contains("physics.eps"), "{e}");
        let e = RunConfig::parse(&format!("{MINIMAL}[monitor]\nm = 2.0\n"), "mem").unwrap_err().to_string();
        assert!(e.contains("monitor.m"), "{e}");
        let e = RunConfig::parse(&MINIMAL.replace("dt = 0.005", "dt = 0.005\nbogus = 1"), "mem")
            .unwrap_err()
            .to_string();
        assert!(e.contains("bogus") && e.contains("line"), "{e}");
        let e = RunConfig::parse(&MINIMAL.replace("t_end = 0.01\n", ""), "mem").unwrap_err().to_string();
        assert!(e.contains("t_end"), "{e}");
        let e = RunConfig::parse(&MINIMAL.replace("nx = 8", "nx = \"eight\""), "mem").unwrap_err().to_string();
        assert!(e.contains("nx") || e.contains("integer"), "{e}");
    }

    #[test]
    fn field_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let g = make_grid(8, 6, 4, 0.5).unwrap();
        let f = sample(&g, |x, y, z| (x * 7.1).sin() + y * z / 3.0).unwrap().with_parity(Parity::None);
        let p = dir.path().join("f.bin");
        write_field(&p, "v1", &f, 0.125).unwrap();
        let (h, back) = read_field(&p).unwrap();
        assert_eq!(h.time, 0.125);
        assert_eq!(h.field, "v1");
        assert_eq!(back.values(), f.values());
        // corrupted header and truncated data
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format { .. })));
        write_field(&p, "v1", &f, 0.125).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_field(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn table_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![vec![0.1, 1.0 / 3.0, -2.5e-300], vec![std::f64::consts::PI, 1e300, 0.0]];
        write_table(&p, &["a", "b", "c"], &rows, &[("C_star", 0.7)]).unwrap();
        let t = read_table(&p).unwrap();
        assert_eq!(t.rows, rows);
        assert_eq!(t.footer_value("C_star"), Some(0.7));
        assert!(matches!(t.column("zz"), Err(Error::MissingColumn(_))));
    }

    #[test]
    fn empty_diagnostics_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let cols = diagnostic_columns(false);
        DiagnosticsWriter::open(&p, &cols, None).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(read_table(&p).unwrap().columns, cols);
    }

    #[test]
    fn simulate_writes_rows_checkpoints_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::parse(MINIMAL, "mem").unwrap();
        c.time.t_end = 0.02;
        c.output.checkpoint_every = 2;
        let m = simulate(&c, dir.path(), None).unwrap();
        assert_eq!(m.status, "complete");
        let t = read_table(&dir.path().join(&m.diagnostics)).unwrap();
        // 4 steps, cadence 1: n cadences give n + 1 rows plus the header
        assert_eq!(t.rows.len(), 5);
        let steps: Vec<usize> = m.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![2, 4]);
        let back = RunManifest::read(&dir.path().join("manifest.toml")).unwrap();
        assert_eq!(back, m);
        let g = c.grid().unwrap();
        let wrong = make_grid(16, 8, 4, 0.5).unwrap();
        let snap = dir.path().join(&m.snapshots[0].dir);
        assert!(read_checkpoint(&snap, &g, c.physics()).is_ok());
        assert!(matches!(read_checkpoint(&snap, &wrong, c.physics()), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn resumed_run_matches_straight_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::parse(&MINIMAL.replace("taylor,A=1.0", "smooth3d,amp=0.5,seed=2"), "mem").unwrap();
        c.physics.eps = 0.1;
        c.physics.f0 = 1.0;
        c.time.t_end = 0.03;
        c.output.checkpoint_every = 3;
        let straight = simulate(&c, dir.path(), None).unwrap();
        let last = straight.snapshots.last().unwrap().clone();
        let read_final = || {
            let g = c.grid().unwrap();
            read_checkpoint(&dir.path().join(&last.dir), &g, c.physics()).unwrap()
        };
        let a = read_final();
        let diag_a = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        let resumed = simulate(&c, dir.path(), Some(Path::new(&straight.snapshots[0].dir.clone()))).unwrap();
        assert_eq!(resumed.snapshots, straight.snapshots);
        let b = read_final();
        assert_eq!(a.state.v1.values(), b.state.v1.values());
        assert_eq!(a.state.temp.values(), b.state.temp.values());
        assert!((a.acc.grad_v - b.acc.grad_v).abs() <= 1e-13 * a.acc.grad_v.abs());
        let diag_b = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert_eq!(diag_a, diag_b);
    }

    #[test]
    fn initial_needs_one_source() {
        let both = MINIMAL.replace("builtin = \"taylor,A=1.0\"", "builtin = \"taylor,A=1.0\"\ncheckpoint = \"x\"");
        assert!(RunConfig::parse(&both, "mem").unwrap_err().to_string().contains("initial"));
        let bad = MINIMAL.replace("taylor,A=1.0", "vortex");
        assert!(RunConfig::parse(&bad, "mem").unwrap_err().to_string().contains("initial.builtin"));
    }
}
