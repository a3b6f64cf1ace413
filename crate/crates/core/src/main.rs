use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use micropolar::io::{
    self, flux_table, outlet_table, parse_config, read_config, write_csv, write_eoc, write_vtk, Command, ProblemKind,
    RunConfig, Table, VertexFields, CONFIG_KEYS,
};
use micropolar::mesh::generate_rect_mesh;
use micropolar::mms::{converge_study, step_errors, ErrorAccumulator, EocTable, ManufacturedSolution, StudyKind};
use micropolar::pump::{pump_problem, run_pump, PumpConfig};
use micropolar::schemes::{run, Discretization, InitialData, TimeGrid};
use micropolar::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_ORDERS: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "micropolar", version, about = "Micropolar Navier-Stokes finite element solver", after_help = key_help())]
struct Cli {
    /// Flat `key = value` configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set nu_r=0.5` (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output directory
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Spatial convergence study on the manufactured solution
    Converge(ConvergeArgs),
    /// Torque-driven channel flow; writes outlet profiles
    Pump(PumpArgs),
    /// A single simulation described by `--config`
    Run,
}

#[derive(Args, Debug)]
struct ConvergeArgs {
    /// h1_pressure (tau = h^2) or linf_l2 (tau = h^3)
    #[arg(long)]
    kind: Option<String>,
    /// Refinement levels a..b with h = 2^-i
    #[arg(long)]
    levels: Option<String>,
    /// Final time
    #[arg(long = "T")]
    final_time: Option<String>,
    /// Exit with status 4 if observed orders on the finest pair miss their range
    #[arg(long)]
    assert_orders: bool,
}

#[derive(Args, Debug)]
struct PumpArgs {
    /// Torque profile 1..7 or `all`
    #[arg(long)]
    profile: Option<String>,
    /// Cells per unit length
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    /// Final time
    #[arg(long = "T")]
    final_time: Option<String>,
}

fn key_help() -> String {
    let mut s = String::from("Configuration keys (file lines `key = value`, or `--set key=value`):\n");
    for (k, v) in CONFIG_KEYS {
        s.push_str(&format!("  {k:<14} {v}\n"));
    }
    s
}

enum Failure {
    Config(String),
    Solver(String),
    Orders(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. }
            | Error::InvalidParams(_)
            | Error::InvalidInput(_)
            | Error::InvalidMesh(_)
            | Error::InvalidTimeGrid(_) => Failure::Config(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Solver(m)) => {
            eprintln!("solver failure: {m}");
            ExitCode::from(EXIT_SOLVER)
        }
        Err(Failure::Orders(m)) => {
            eprintln!("order check failed: {m}");
            ExitCode::from(EXIT_ORDERS)
        }
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Failure::Config(format!("`--set {s}` must look like key=value")))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    let mut push = |k: &str, v: &Option<String>| {
        if let Some(v) = v {
            out.push((k.to_string(), v.clone()));
        }
    };
    match &cli.command {
        Sub::Converge(a) => {
            push("kind", &a.kind);
            push("levels", &a.levels);
            push("T", &a.final_time);
            if a.assert_orders {
                push("assert_orders", &Some("true".into()));
            }
        }
        Sub::Pump(a) => {
            push("profile", &a.profile);
            push("n", &a.n);
            push("tau", &a.tau);
            push("T", &a.final_time);
        }
        Sub::Run => {}
    }
    push("output", &cli.output.as_ref().map(|p| p.display().to_string()));
    Ok(out)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let command = match cli.command {
        Sub::Converge(_) => Command::Converge,
        Sub::Pump(_) => Command::Pump,
        Sub::Run => Command::Run,
    };
    if command == Command::Run && cli.config.is_none() {
        return Err(Failure::Config("`run` needs --config FILE".into()));
    }
    let flags = overrides(&cli)?;
    let (cfg, warnings) = match &cli.config {
        Some(path) => read_config(path, Some(command), &flags)?,
        None => parse_config("", Some(command), &flags)?,
    };
    for w in &warnings {
        eprintln!("{w}");
    }
    std::fs::create_dir_all(&cfg.output).map_err(|e| Failure::from(Error::io(&cfg.output, e)))?;
    std::fs::write(cfg.output.join("config.txt"), cfg.to_config_string())
        .map_err(|e| Failure::from(Error::io(cfg.output.join("config.txt"), e)))?;
    match (cfg.command, cfg.problem) {
        (Command::Converge, _) => converge(&cfg),
        (Command::Pump, _) | (Command::Run, ProblemKind::Pump) => pump(&cfg),
        (Command::Run, ProblemKind::Manufactured) => single_run(&cfg),
    }
}

fn order_range(kind: StudyKind) -> (f64, f64) {
    match kind {
        StudyKind::H1Pressure => (1.8, 2.3),
        StudyKind::LinfL2 => (2.7, 3.3),
    }
}

fn converge(cfg: &RunConfig) -> Result<(), Failure> {
    let levels = cfg.levels.to_vec();
    let table = converge_study(cfg.kind, &levels, cfg.params, cfg.final_time)?;
    let (e, o) = write_eoc(&table, &cfg.output)?;
    print_eoc(&table);
    println!("wrote {} and {}", e.display(), o.display());
    if !cfg.assert_orders {
        return Ok(());
    }
    let finest = table
        .finest()
        .ok_or_else(|| Failure::Config("--assert-orders needs at least two levels".into()))?;
    let (lo, hi) = order_range(cfg.kind);
    let mut misses = Vec::new();
    for norm in cfg.kind.target_norms() {
        let order = EocTable::order_of(finest, norm).unwrap_or(f64::NAN);
        let ok = (lo..=hi).contains(&order);
        println!("{norm}: order {order:.3} in [{lo}, {hi}]: {}", if ok { "ok" } else { "MISS" });
        if !ok {
            misses.push(format!("{norm} = {order:.3}"));
        }
    }
    if misses.is_empty() {
        Ok(())
    } else {
        Err(Failure::Orders(format!("outside [{lo}, {hi}]: {}", misses.join(", "))))
    }
}

fn print_eoc(table: &EocTable) {
    println!("{:>5} {:>10} {:>10} {:>11} {:>11} {:>11} {:>11} {:>11}", "level", "h", "tau", "linf_l2_u", "linf_l2_w", "l2_h1_u", "l2_h1_w", "l2_l2_p");
    for r in &table.reports {
        let n = r.norms();
        println!(
            "{:>5} {:>10.3e} {:>10.3e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e}",
            r.level, r.h, r.tau, n[0], n[1], n[2], n[3], n[4]
        );
    }
    for row in &table.orders {
        let o = row.orders;
        println!(
            "{:>2}->{:<2} {:>32} {:>11.3} {:>11.3} {:>11.3} {:>11.3} {:>11.3}",
            row.coarse_level, row.fine_level, "orders", o[0], o[1], o[2], o[3], o[4]
        );
    }
}

fn pump_config(cfg: &RunConfig, profile: usize) -> PumpConfig {
    PumpConfig {
        length: cfg.length,
        n: cfg.n,
        amplitude: cfg.amplitude,
        profile,
        final_time: cfg.final_time,
        tau: cfg.tau,
        params: cfg.params,
    }
}

fn pump(cfg: &RunConfig) -> Result<(), Failure> {
    let mut outlets = Vec::new();
    for i in cfg.profile.indices() {
        let pc = pump_config(cfg, i);
        pump_problem(&pc)?;
        let result = run_pump(&pc)?;
        let path = cfg.output.join(format!("outlet_profile_{i}.csv"));
        write_csv(&outlet_table(&result.outlet), &path)?;
        let s = result.final_state();
        let fields = VertexFields::from_dofs(&result.disc.mesh, &s.u, &s.w, &s.p);
        write_vtk(&result.disc.mesh, &fields, &cfg.output.join(format!("pump_{i}.vtk")))?;
        println!("profile {i}: mean outlet flux {:.6e}", result.outlet.mean_flux);
        outlets.push(result.outlet);
    }
    write_csv(&flux_table(&outlets), &cfg.output.join("fluxes.csv"))?;
    Ok(())
}

fn single_run(cfg: &RunConfig) -> Result<(), Failure> {
    let disc = Discretization::new(generate_rect_mesh(cfg.mesh)?)?;
    let exact = ManufacturedSolution::exact_fields();
    let problem = ManufacturedSolution::problem(cfg.params);
    let grid = TimeGrid::from_final_time(cfg.final_time, cfg.tau)?;
    let mut acc = ErrorAccumulator::new(cfg.tau);
    let mut failure = None;
    let summary = run(&disc, &problem, cfg.scheme, &grid, InitialData::Exact(&exact), |k, t, u, w, p| {
        if let Err(e) = acc.push(k, step_errors(&disc, &exact, t, u, w, p)) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e.into());
    }
    let report = acc.report(0, disc.mesh.hx().max(disc.mesh.hy()));
    write_csv(&io::error_table(&[report]), &cfg.output.join("errors.csv"))?;
    write_energy(&summary, &cfg.output.join("energy.csv"))?;
    let s = &summary.final_state;
    write_vtk(&disc.mesh, &VertexFields::from_dofs(&disc.mesh, &s.u, &s.w, &s.p), &cfg.output.join("final.vtk"))?;
    let n = report.norms();
    println!(
        "{} steps of {}: linf_l2_u {:.4e}  linf_l2_w {:.4e}  l2_h1_u {:.4e}  l2_h1_w {:.4e}  l2_l2_p {:.4e}",
        grid.steps, cfg.scheme, n[0], n[1], n[2], n[3], n[4]
    );
    println!("max |B U| = {:.3e}", summary.max_divergence_residual);
    Ok(())
}

fn write_energy(summary: &micropolar::schemes::RunSummary, path: &Path) -> Result<(), Failure> {
    let mut t = Table::new(&["k", "u_sq", "w_sq", "grad_u_sq", "grad_w_sq", "du_sq", "dw_sq"]);
    for r in &summary.energy.records {
        t.push(vec![
            r.k.to_string(),
            io::fmt_f64(r.u_sq),
            io::fmt_f64(r.w_sq),
            io::fmt_f64(r.grad_u_sq),
            io::fmt_f64(r.grad_w_sq),
            io::fmt_f64(r.du_sq),
            io::fmt_f64(r.dw_sq),
        ]);
    }
    write_csv(&t, path)?;
    Ok(())
}
