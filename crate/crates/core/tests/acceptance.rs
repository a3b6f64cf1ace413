//! Acceptance checks, one PASS/FAIL line each.
//!
//! Positional arguments select criteria by number. Set `MICROPOLAR_FULL=1`
//! to run the `linf_l2` study on levels 2..5 instead of 2..4.

mod common;

use std::time::Instant;

use micropolar::assembly::assemble_convection;
use micropolar::fem::BoundaryData;
use micropolar::mesh::{generate_rect_mesh, MeshConfig};
use micropolar::mms::{converge_study, step_errors, temporal_orders, temporal_study, ErrorAccumulator, EocTable, ManufacturedSolution, StudyKind};
use micropolar::pump::{run_pump, PumpConfig, PROFILES};
use micropolar::schemes::{
    run, Discretization, InitialData, MaterialParams, Problem, SchemeKind, Sources, TimeGrid, TimeState,
    TimestepCheck,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn finest_orders(table: &EocTable, norms: &[&str]) -> Vec<(String, f64)> {
    let row = table.finest().expect("at least two levels");
    norms
        .iter()
        .map(|n| (n.to_string(), EocTable::order_of(row, n).unwrap_or(f64::NAN)))
        .collect()
}

fn spatial(kind: StudyKind, levels: &[usize], lo: f64, hi: f64) -> Outcome {
    let table = match converge_study(kind, levels, MaterialParams::unit(), 0.5) {
        Ok(t) => t,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let orders = finest_orders(&table, kind.target_norms());
    let pass = orders.iter().all(|(_, o)| in_range(*o, lo, hi));
    let row = table.finest().unwrap();
    let list: Vec<String> = orders.iter().map(|(n, o)| format!("{n}={o:.3}")).collect();
    outcome(
        pass,
        format!(
            "levels {:?}, pair {}/{}: {} (range [{lo}, {hi}])",
            levels,
            row.coarse_level,
            row.fine_level,
            list.join(" ")
        ),
    )
}

fn criterion_1() -> Outcome {
    spatial(StudyKind::H1Pressure, &[2, 3, 4, 5], 1.8, 2.3)
}

fn criterion_2() -> Outcome {
    let full = std::env::var("MICROPOLAR_FULL").is_ok_and(|v| v == "1");
    let levels: &[usize] = if full { &[2, 3, 4, 5] } else { &[2, 3, 4] };
    spatial(StudyKind::LinfL2, levels, 2.7, 3.3)
}

fn criterion_3() -> Outcome {
    let taus = [0.1, 0.05, 0.025];
    let reports = match temporal_study(32, &taus, 0.5, SchemeKind::FirstOrder, MaterialParams::unit()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("study failed: {e}")),
    };
    let orders = temporal_orders(&reports).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for (pair, o) in orders.iter().enumerate() {
        // linf_l2_u and linf_l2_w
        for (idx, name) in [(0, "u"), (1, "w")] {
            pass &= in_range(o[idx], 0.8, 1.3);
            parts.push(format!("{name}[{}]={:.3}", pair, o[idx]));
        }
    }
    outcome(pass, format!("h=1/32, tau=1/10,1/20,1/40: {} (range [0.8, 1.3])", parts.join(" ")))
}

fn random_interior_state(disc: &Discretization, rng: &mut StdRng) -> TimeState {
    let mut s = TimeState::zeros(disc);
    let vb = disc.velocity.all_boundary_dofs();
    let sb = disc.spin.all_boundary_dofs();
    for (i, v) in s.u.iter_mut().enumerate() {
        if vb.binary_search(&i).is_err() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    for (i, v) in s.w.iter_mut().enumerate() {
        if sb.binary_search(&i).is_err() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    s
}

fn homogeneous_problem(params: MaterialParams) -> Problem {
    Problem {
        params,
        bcs: BoundaryData::no_slip(),
        sources: Sources::default(),
    }
}

fn disc(n: usize) -> Discretization {
    Discretization::new(generate_rect_mesh(MeshConfig::unit_square(n)).unwrap()).unwrap()
}

fn criterion_4() -> Outcome {
    let d = disc(8);
    let problem = homogeneous_problem(MaterialParams::unit());
    let mut rng = StdRng::seed_from_u64(4);
    let mut pass = true;
    let mut parts = Vec::new();
    for tau in [1e-3, 0.1, 10.0] {
        let init = random_interior_state(&d, &mut rng);
        let grid = TimeGrid::new(tau, 100).unwrap();
        match run(&d, &problem, SchemeKind::FirstOrder, &grid, InitialData::State(init), |_, _, _, _, _| {}) {
            Ok(s) => {
                let checked = s.energy.records.iter().filter(|r| r.slack.is_some()).count();
                let min = s.energy.min_relative_slack().unwrap_or(f64::NEG_INFINITY);
                let ww = problem.params.j + 4.0 * problem.params.nu_r * tau;
                let weighted: Vec<f64> = s.energy.records.iter().map(|r| r.u_sq + ww * r.w_sq).collect();
                let monotone = weighted.windows(2).all(|e| e[1] <= e[0] * (1.0 + 1e-10));
                pass &= checked == 100 && min >= -1e-10 && monotone;
                parts.push(format!(
                    "tau={tau:e}: {checked} steps, min relative slack {min:.3e}, weighted energy {:.3e} -> {:.3e} nonincreasing: {monotone}",
                    weighted[0],
                    weighted[100]
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("tau={tau:e}: {e}"));
            }
        }
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5() -> Outcome {
    let d = disc(8);
    let params = MaterialParams::unit();
    let problem = homogeneous_problem(params);
    let mut rng = StdRng::seed_from_u64(5);
    let init = random_interior_state(&d, &mut rng);
    let grid = TimeGrid::new(0.1, 200).unwrap();
    let stable = match run(&d, &problem, SchemeKind::Bdf2, &grid, InitialData::State(init.clone()), |_, _, _, _, _| {}) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("tau=0.1 run failed: {e}")),
    };
    let energy = stable.energy.kinetic(params.j);
    let start = energy[0].max(energy[1]);
    let max = energy.iter().copied().fold(0.0, f64::max);
    let bounded = energy.len() == 201 && max <= 1.0001 * start && stable.timestep_warning.is_none();

    let grid = TimeGrid::new(0.2, 200).unwrap();
    let warned = match run(&d, &problem, SchemeKind::Bdf2, &grid, InitialData::State(init), |_, _, _, _, _| {}) {
        Ok(s) => matches!(s.timestep_warning, Some(TimestepCheck::Violated { bound }) if bound == 0.125),
        Err(_) => false,
    };
    outcome(
        bounded && warned,
        format!(
            "tau=0.1: max energy {max:.6e} vs start-up {start:.6e} (ratio {:.6}); tau=0.2 completed with bound warning: {warned}",
            max / start
        ),
    )
}

fn criterion_6() -> Outcome {
    let d = disc(8);
    let mut rng = StdRng::seed_from_u64(6);
    let sb = d.spin.all_boundary_dofs();
    let vb = d.velocity.all_boundary_dofs();
    let free_s: Vec<usize> = (0..d.spin.n_dofs).filter(|i| sb.binary_search(i).is_err()).collect();
    let mut skew = 0.0f64;
    for _ in 0..20 {
        let u: Vec<f64> = (0..d.velocity.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let c = common::dense_of(&assemble_convection(&d.mesh, &d.spin, &d.velocity, &u, 1.0).unwrap());
        for &i in &free_s {
            for &j in &free_s {
                skew = skew.max((c[(i, j)] + c[(j, i)]).abs());
            }
        }
    }
    let rwu = common::dense_of(&d.ops.rwu);
    let ruw = common::dense_of(&d.ops.ruw);
    let mut adj = 0.0f64;
    for v in (0..d.velocity.n_dofs).filter(|v| vb.binary_search(v).is_err()) {
        for &s in &free_s {
            adj = adj.max((rwu[(v, s)] - ruw[(s, v)]).abs());
        }
    }
    outcome(
        skew <= 1e-12 && adj <= 1e-12,
        format!("8x8, 20 fields: max |C + C^T| = {skew:.2e}, max |Rwu - Ruw^T| = {adj:.2e} on free dofs (tol 1e-12)"),
    )
}

fn criterion_7() -> Outcome {
    let fo = common::steps::first_order_matches(2, 2, 1.0, 1.0, true, 71);
    let bdf = common::steps::bdf2_matches(2, 2, 1.0, 1.0, true, 72);
    outcome(
        fo <= 1e-10 && bdf <= 1e-10,
        format!("2x2: first-order {fo:.2e}, BDF2 {bdf:.2e} (tol 1e-10)"),
    )
}

fn criterion_8() -> Outcome {
    let mut fluxes = Vec::new();
    let mut nonzero = true;
    for i in PROFILES {
        match run_pump(&PumpConfig { profile: i, ..PumpConfig::default() }) {
            Ok(r) => {
                nonzero &= r.outlet.u_x.iter().any(|v| v.abs() > 1e-10);
                fluxes.push(r.outlet.mean_flux);
            }
            Err(e) => return outcome(false, format!("profile {i} failed: {e}")),
        }
    }
    let zero = match run_pump(&PumpConfig { amplitude: 0.0, ..PumpConfig::default() }) {
        Ok(r) => {
            let s = r.final_state();
            s.u.iter().chain(&s.w).chain(&s.p).fold(0.0f64, |m, v| m.max(v.abs()))
        }
        Err(_) => f64::INFINITY,
    };
    let opposite = fluxes[0] * fluxes[6] < 0.0;
    let list: Vec<String> = fluxes.iter().enumerate().map(|(i, f)| format!("{}:{f:.4e}", i + 1)).collect();
    outcome(
        nonzero && opposite && zero <= 1e-14,
        format!(
            "fluxes {}; i=1 and i=7 opposite: {opposite}; amplitude 0 max |field| {zero:.1e}",
            list.join(" ")
        ),
    )
}

fn criterion_9() -> Outcome {
    let d = disc(8);
    let exact = ManufacturedSolution::exact_fields();
    let mut worst_div = 0.0f64;
    let mut worst_mean = 0.0f64;
    let mut steps = 0;
    for scheme in [SchemeKind::FirstOrder, SchemeKind::Bdf2] {
        let problem = ManufacturedSolution::problem(MaterialParams::unit());
        let grid = TimeGrid::from_final_time(0.5, 1.0 / 64.0).unwrap();
        let mut acc = ErrorAccumulator::new(grid.tau);
        let r = run(&d, &problem, scheme, &grid, InitialData::Exact(&exact), |k, t, u, w, p| {
            if k > 0 {
                worst_div = worst_div.max(d.divergence_residual(u));
                worst_mean = worst_mean.max(d.pressure_mean(p).abs());
                steps += 1;
            }
            let _ = acc.push(k, step_errors(&d, &exact, t, u, w, p));
        });
        if let Err(e) = r {
            return outcome(false, format!("{scheme} run failed: {e}"));
        }
    }
    let pump = run_pump(&PumpConfig { n: 16, ..PumpConfig::default() });
    let pump_div = match pump {
        Ok(r) => r.summary.max_divergence_residual,
        Err(_) => f64::INFINITY,
    };
    outcome(
        worst_div <= 1e-9 && worst_mean <= 1e-12 && pump_div <= 1e-9,
        format!(
            "enclosed ({steps} steps): max |B U| {worst_div:.2e}, max |mean P| {worst_mean:.2e}; open channel max |B U| {pump_div:.2e}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 spatial order, energy norms", criterion_1),
        ("2 spatial order, L2 velocities", criterion_2),
        ("3 temporal order, first-order scheme", criterion_3),
        ("4 unconditional stability", criterion_4),
        ("5 BDF2 stability", criterion_5),
        ("6 discrete identities", criterion_6),
        ("7 oracle equivalence", criterion_7),
        ("8 pumping reproduction", criterion_8),
        ("9 incompressibility and mean pressure", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        let number = name.split(' ').next().unwrap_or("");
        if !filter.is_empty() && !filter.iter().any(|s| s == number) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
