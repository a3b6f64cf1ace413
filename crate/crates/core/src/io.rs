//! Run configuration, CSV tables and legacy VTK output.
//!
//! Configuration files are flat `key = value` lines; `#` starts a comment.
//! Command-line overrides use the same keys and take precedence.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshConfig};
use crate::mms::{EocTable, ErrorReport, StudyKind};
use crate::pump::{OutletProfile, PROFILES};
use crate::schemes::{check_bdf2_timestep, MaterialParams, SchemeKind, TimeGrid, TimestepCheck};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Converge,
    Pump,
    Run,
}

impl FromStr for Command {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "converge" => Ok(Command::Converge),
            "pump" => Ok(Command::Pump),
            "run" => Ok(Command::Run),
            other => Err(format!("unknown command `{other}` (expected converge, pump or run)")),
        }
    }
}

impl std::fmt::Display for Command {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Command::Converge => "converge",
            Command::Pump => "pump",
            Command::Run => "run",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileSelection {
    All,
    One(usize),
}

impl ProfileSelection {
    pub fn indices(self) -> Vec<usize> {
        match self {
            ProfileSelection::All => PROFILES.collect(),
            ProfileSelection::One(i) => vec![i],
        }
    }
}

impl FromStr for ProfileSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            return Ok(ProfileSelection::All);
        }
        match s.parse::<usize>() {
            Ok(i) if PROFILES.contains(&i) => Ok(ProfileSelection::One(i)),
            _ => Err(format!("profile must be `all` or an index in 1..=7, got `{s}`")),
        }
    }
}

impl std::fmt::Display for ProfileSelection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProfileSelection::All => f.write_str("all"),
            ProfileSelection::One(i) => write!(f, "{i}"),
        }
    }
}

/// Problem solved by the `run` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Manufactured,
    Pump,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mms" => Ok(ProblemKind::Manufactured),
            "pump" => Ok(ProblemKind::Pump),
            other => Err(format!("unknown problem `{other}` (expected mms or pump)")),
        }
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProblemKind::Manufactured => "mms",
            ProblemKind::Pump => "pump",
        })
    }
}

/// Inclusive range of refinement levels, written `a..b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Levels {
    pub first: usize,
    pub last: usize,
}

impl Levels {
    pub fn to_vec(self) -> Vec<usize> {
        (self.first..=self.last).collect()
    }
}

impl FromStr for Levels {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| format!("levels must look like `a..b`, got `{s}`"))
        };
        let (first, last) = match s.split_once("..") {
            Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
            None => {
                let v = parse(s)?;
                (v, v)
            }
        };
        if first > last || first < 1 || last > 8 {
            return Err(format!("levels `{s}` must satisfy 1 <= a <= b <= 8"));
        }
        Ok(Levels { first, last })
    }
}

impl std::fmt::Display for Levels {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.first, self.last)
    }
}

/// Every setting of a run. Keys in configuration files match field names,
/// except `final_time` (key `T`) and the material constants (`nu`, `nu_r`,
/// `c_a`, `c_d`, `c_0`, `j`).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub scheme: SchemeKind,
    pub params: MaterialParams,
    /// Mesh of the `run` command with the manufactured problem.
    pub mesh: MeshConfig,
    pub tau: f64,
    pub final_time: f64,
    pub kind: StudyKind,
    pub levels: Levels,
    pub output: PathBuf,
    pub profile: ProfileSelection,
    pub amplitude: f64,
    /// Channel length of the pump problem.
    pub length: f64,
    /// Cells per unit length of the pump problem.
    pub n: usize,
    pub problem: ProblemKind,
    pub assert_orders: bool,
}

/// Documented keys with their help text.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("command", "converge | pump | run"),
    ("scheme", "first_order | bdf2 (run only; studies and pump use first_order)"),
    ("nu", "kinematic viscosity"),
    ("nu_r", "microrotation viscosity"),
    ("c_a", "angular viscosity c_a"),
    ("c_d", "angular viscosity c_d"),
    ("c_0", "angular viscosity c_0"),
    ("j", "microinertia"),
    ("nx", "cells in x (run with problem = mms)"),
    ("ny", "cells in y (run with problem = mms)"),
    ("length_x", "domain width (run with problem = mms)"),
    ("length_y", "domain height (run with problem = mms)"),
    ("tau", "time step (pump, run)"),
    ("T", "final time"),
    ("kind", "h1_pressure | linf_l2 (converge)"),
    ("levels", "refinement levels a..b, h = 2^-i (converge)"),
    ("output", "output directory"),
    ("profile", "torque profile 1..7 or all (pump)"),
    ("amplitude", "torque scale (pump)"),
    ("length", "channel length (pump)"),
    ("n", "cells per unit length (pump)"),
    ("problem", "mms | pump (run)"),
    ("assert_orders", "true | false: exit with status 4 if observed orders miss their range (converge)"),
];

impl RunConfig {
    /// Documented defaults for a command.
    pub fn defaults(command: Command) -> Self {
        let (tau, final_time) = match command {
            Command::Converge => (1.0 / 16.0, 0.5),
            Command::Pump => (1.0 / 50.0, 1.0),
            Command::Run => (1.0 / 100.0, 0.5),
        };
        Self {
            command,
            scheme: SchemeKind::FirstOrder,
            params: MaterialParams::unit(),
            mesh: MeshConfig::unit_square(16),
            tau,
            final_time,
            kind: StudyKind::H1Pressure,
            levels: Levels { first: 2, last: 5 },
            output: PathBuf::from("output"),
            profile: ProfileSelection::All,
            amplitude: 1.0,
            length: 1.0,
            n: 40,
            problem: ProblemKind::Manufactured,
            assert_orders: false,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse::<T>()
                .map_err(|_| format!("expected a {}, got `{v}`", std::any::type_name::<T>()))
        }
        match key {
            "command" => self.command = value.parse()?,
            "scheme" => self.scheme = value.parse()?,
            "nu" => self.params.nu = num(value)?,
            "nu_r" => self.params.nu_r = num(value)?,
            "c_a" => self.params.c_a = num(value)?,
            "c_d" => self.params.c_d = num(value)?,
            "c_0" => self.params.c_0 = num(value)?,
            "j" => self.params.j = num(value)?,
            "nx" => self.mesh.nx = num(value)?,
            "ny" => self.mesh.ny = num(value)?,
            "length_x" => self.mesh.length_x = num(value)?,
            "length_y" => self.mesh.length_y = num(value)?,
            "tau" => self.tau = num(value)?,
            "T" => self.final_time = num(value)?,
            "kind" => self.kind = value.parse()?,
            "levels" => self.levels = value.parse()?,
            "output" => self.output = PathBuf::from(value),
            "profile" => self.profile = value.parse()?,
            "amplitude" => self.amplitude = num(value)?,
            "length" => self.length = num(value)?,
            "n" => self.n = num(value)?,
            "problem" => self.problem = value.parse()?,
            "assert_orders" => self.assert_orders = num(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Re-validates every module invariant. Returns warnings that do not
    /// prevent the run.
    pub fn validate(&self) -> Result<Vec<String>> {
        let err = |key: &str, message: String| Error::Config {
            key: key.into(),
            line: 0,
            message,
        };
        self.params
            .validate()
            .map_err(|e| err("nu, nu_r, c_a, c_d, c_0, j", e.to_string()))?;
        let mut warnings = Vec::new();
        match self.command {
            Command::Converge => {
                if !(self.final_time > 0.0 && self.final_time.is_finite()) {
                    return Err(err("T", format!("final time {} must be positive", self.final_time)));
                }
                for level in self.levels.to_vec() {
                    let h = 0.5f64.powi(level as i32);
                    TimeGrid::from_final_time(self.final_time, self.kind.tau(h))
                        .map_err(|e| err("T", e.to_string()))?;
                }
            }
            Command::Pump | Command::Run => {
                TimeGrid::from_final_time(self.final_time, self.tau).map_err(|e| err("tau", e.to_string()))?;
                if self.final_time <= 0.0 {
                    return Err(err("T", format!("final time {} must be positive", self.final_time)));
                }
            }
        }
        let pump = self.command == Command::Pump || (self.command == Command::Run && self.problem == ProblemKind::Pump);
        if pump {
            let cfg = crate::pump::PumpConfig {
                length: self.length,
                n: self.n,
                amplitude: self.amplitude,
                profile: self.profile.indices()[0],
                final_time: self.final_time,
                tau: self.tau,
                params: self.params,
            };
            cfg.validate().map_err(|e| err("length, n, amplitude, profile", e.to_string()))?;
        }
        if self.command == Command::Run && self.problem == ProblemKind::Manufactured {
            self.mesh.validate().map_err(|e| err("nx, ny, length_x, length_y", e.to_string()))?;
        }
        if self.command == Command::Run && self.scheme == SchemeKind::Bdf2 {
            if let TimestepCheck::Violated { bound } = check_bdf2_timestep(&self.params, self.tau) {
                warnings.push(format!(
                    "warning: tau = {} exceeds the BDF2 stability bound tau <= j nu / (8 nu_r^2) = {bound}; \
                     running anyway",
                    self.tau
                ));
            }
        }
        if self.scheme == SchemeKind::Bdf2 && self.command != Command::Run {
            warnings.push(format!("warning: scheme = bdf2 is ignored by `{}`", self.command));
        }
        Ok(warnings)
    }

    /// Flat `key = value` text that parses back to the same configuration.
    pub fn to_config_string(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        line("command", self.command.to_string());
        line("scheme", self.scheme.to_string());
        line("nu", format!("{:?}", p.nu));
        line("nu_r", format!("{:?}", p.nu_r));
        line("c_a", format!("{:?}", p.c_a));
        line("c_d", format!("{:?}", p.c_d));
        line("c_0", format!("{:?}", p.c_0));
        line("j", format!("{:?}", p.j));
        line("nx", self.mesh.nx.to_string());
        line("ny", self.mesh.ny.to_string());
        line("length_x", format!("{:?}", self.mesh.length_x));
        line("length_y", format!("{:?}", self.mesh.length_y));
        line("tau", format!("{:?}", self.tau));
        line("T", format!("{:?}", self.final_time));
        line("kind", self.kind.to_string());
        line("levels", self.levels.to_string());
        line("output", self.output.display().to_string());
        line("profile", self.profile.to_string());
        line("amplitude", format!("{:?}", self.amplitude));
        line("length", format!("{:?}", self.length));
        line("n", self.n.to_string());
        line("problem", self.problem.to_string());
        line("assert_orders", self.assert_orders.to_string());
        s
    }
}

/// Parses configuration text, then applies `overrides` (flags win), then
/// validates. `command` selects the defaults unless the text sets `command`.
pub fn parse_config(
    text: &str,
    command: Option<Command>,
    overrides: &[(String, String)],
) -> Result<(RunConfig, Vec<String>)> {
    let mut entries: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
            key: line.to_string(),
            line: idx + 1,
            message: "expected `key = value`".into(),
        })?;
        entries.push((idx + 1, k.trim().to_string(), v.trim().to_string()));
    }
    let file_command = entries
        .iter()
        .find(|(_, k, _)| k == "command")
        .map(|(line, k, v)| {
            v.parse::<Command>().map_err(|message| Error::Config {
                key: k.clone(),
                line: *line,
                message,
            })
        })
        .transpose()?;
    let command = overrides
        .iter()
        .find(|(k, _)| k == "command")
        .and_then(|(_, v)| v.parse().ok())
        .or(command)
        .or(file_command)
        .unwrap_or(Command::Run);
    let mut cfg = RunConfig::defaults(command);
    let with_line = entries
        .into_iter()
        .chain(overrides.iter().map(|(k, v)| (0, k.clone(), v.clone())));
    for (line, key, value) in with_line {
        cfg.set(&key, &value).map_err(|message| Error::Config {
            key: key.clone(),
            line,
            message,
        })?;
    }
    cfg.command = command;
    let warnings = cfg.validate()?;
    Ok((cfg, warnings))
}

pub fn read_config(path: &Path, command: Option<Command>, overrides: &[(String, String)]) -> Result<(RunConfig, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, command, overrides)
}

// ---------------------------------------------------------------------------
// CSV

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width");
        self.rows.push(row);
    }
}

/// 17 significant digits; parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(table: &Table, path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    w.write_record(&table.header).map_err(|e| csv_error(path, e))?;
    for row in &table.rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let kind = match e.kind() {
        csv::ErrorKind::Io(io) => io.kind(),
        _ => std::io::ErrorKind::Other,
    };
    Error::io(path, std::io::Error::new(kind, e.to_string()))
}

pub const ERROR_HEADER: [&str; 8] = ["level", "h", "tau", "linf_l2_u", "linf_l2_w", "l2_h1_u", "l2_h1_w", "l2_l2_p"];
pub const ORDER_HEADER: [&str; 7] = ["coarse_level", "fine_level", "linf_l2_u", "linf_l2_w", "l2_h1_u", "l2_h1_w", "l2_l2_p"];

pub fn error_table(reports: &[ErrorReport]) -> Table {
    let mut t = Table::new(&ERROR_HEADER);
    for r in reports {
        let mut row = vec![r.level.to_string(), fmt_f64(r.h), fmt_f64(r.tau)];
        row.extend(r.norms().iter().map(|&v| fmt_f64(v)));
        t.push(row);
    }
    t
}

pub fn order_table(table: &EocTable) -> Table {
    let mut t = Table::new(&ORDER_HEADER);
    for row in &table.orders {
        let mut r = vec![row.coarse_level.to_string(), row.fine_level.to_string()];
        r.extend(row.orders.iter().map(|&v| fmt_f64(v)));
        t.push(r);
    }
    t
}

/// Writes `errors.csv` and `orders.csv` into `dir`.
pub fn write_eoc(table: &EocTable, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (e, o) = (dir.join("errors.csv"), dir.join("orders.csv"));
    write_csv(&error_table(&table.reports), &e)?;
    write_csv(&order_table(table), &o)?;
    Ok((e, o))
}

pub fn outlet_table(profile: &OutletProfile) -> Table {
    let mut t = Table::new(&["y", "u_x"]);
    let mut pairs: Vec<(f64, f64)> = profile.y.iter().copied().zip(profile.u_x.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (y, u) in pairs {
        t.push(vec![fmt_f64(y), fmt_f64(u)]);
    }
    t
}

pub fn flux_table(profiles: &[OutletProfile]) -> Table {
    let mut t = Table::new(&["profile", "mean_flux"]);
    for p in profiles {
        t.push(vec![p.profile.to_string(), fmt_f64(p.mean_flux)]);
    }
    t
}

// ---------------------------------------------------------------------------
// VTK

/// Vertex values of the discrete fields.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexFields {
    pub velocity: Vec<[f64; 2]>,
    pub spin: Vec<f64>,
    pub pressure: Vec<f64>,
}

impl VertexFields {
    pub fn zeros(mesh: &Mesh) -> Self {
        let n = mesh.vertices.len();
        Self {
            velocity: vec![[0.0; 2]; n],
            spin: vec![0.0; n],
            pressure: vec![0.0; n],
        }
    }

    /// Restricts Q2 velocity and spin and Q1 pressure vectors to the mesh
    /// vertices.
    pub fn from_dofs(mesh: &Mesh, u: &[f64], w: &[f64], p: &[f64]) -> Self {
        let (nx, ny) = (mesh.nx(), mesh.ny());
        let lx2 = 2 * nx + 1;
        let n2 = lx2 * (2 * ny + 1);
        assert_eq!(u.len(), 2 * n2, "velocity length");
        assert_eq!(w.len(), n2, "spin length");
        assert_eq!(p.len(), mesh.vertices.len(), "pressure length");
        let mut out = Self::zeros(mesh);
        for jj in 0..=ny {
            for ii in 0..=nx {
                let v = jj * (nx + 1) + ii;
                let q2 = 2 * jj * lx2 + 2 * ii;
                out.velocity[v] = [u[q2], u[n2 + q2]];
                out.spin[v] = w[q2];
                out.pressure[v] = p[v];
            }
        }
        out
    }
}

/// Legacy ASCII VTK unstructured grid of quadrilaterals.
pub fn vtk_string(mesh: &Mesh, fields: &VertexFields) -> String {
    let n = mesh.vertices.len();
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\nmicropolar\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {n} double");
    for [x, y] in &mesh.vertices {
        let _ = writeln!(s, "{} {} 0", fmt_f64(*x), fmt_f64(*y));
    }
    let nc = mesh.n_cells();
    let _ = writeln!(s, "CELLS {nc} {}", 5 * nc);
    for c in &mesh.cells {
        let _ = writeln!(s, "4 {} {} {} {}", c[0], c[1], c[2], c[3]);
    }
    let _ = writeln!(s, "CELL_TYPES {nc}");
    for _ in 0..nc {
        s.push_str("9\n");
    }
    let _ = writeln!(s, "POINT_DATA {n}");
    s.push_str("VECTORS velocity double\n");
    for [a, b] in &fields.velocity {
        let _ = writeln!(s, "{} {} 0", fmt_f64(*a), fmt_f64(*b));
    }
    for (name, data) in [("spin", &fields.spin), ("pressure", &fields.pressure)] {
        let _ = writeln!(s, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in data {
            let _ = writeln!(s, "{}", fmt_f64(*v));
        }
    }
    s
}

pub fn write_vtk(mesh: &Mesh, fields: &VertexFields, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, vtk_string(mesh, fields)).map_err(|e| Error::io(path, e))
}
