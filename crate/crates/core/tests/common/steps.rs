//! Library step versus the dense reference step on identical data.

use micropolar::fem::{scalar_fn, vector_fn, BoundaryData, Prescription};
use micropolar::mesh::{generate_rect_mesh, BoundaryMarker, MeshConfig};
use micropolar::pump::pump_boundary_data;
use micropolar::schemes::{Discretization, Level, MaterialParams, Problem, Sources, Stepper, TimeState};
use nalgebra::DVector;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::*;

pub const PARAMS: MaterialParams = MaterialParams {
    nu: 0.7,
    nu_r: 0.4,
    c_a: 0.5,
    c_d: 0.3,
    c_0: 0.9,
    j: 1.3,
};

pub fn dense_params(p: &MaterialParams) -> Params {
    Params {
        nu: p.nu,
        nu_r: p.nu_r,
        c1: p.c1(),
        j: p.j,
    }
}

pub fn u_bc(x: f64, y: f64, t: f64) -> [f64; 2] {
    [(1.0 + t) * x * x + y, -(1.0 + t) * 2.0 * x * y + x]
}
pub fn w_bc(x: f64, y: f64, t: f64) -> f64 {
    x * y - 0.5 * y * y + t
}
pub fn f_src(x: f64, y: f64, t: f64) -> [f64; 2] {
    [(1.0 + t) * x * y * y, x * x - y * y * y + t]
}
pub fn g_src(x: f64, y: f64, t: f64) -> f64 {
    x * x * x - y + 2.0 * t
}

pub fn disc(nx: usize, ny: usize, lx: f64, ly: f64) -> Discretization {
    Discretization::new(generate_rect_mesh(MeshConfig::new(nx, ny, lx, ly)).unwrap()).unwrap()
}

pub fn problem(enclosed: bool) -> Problem {
    let bcs = if enclosed {
        BoundaryData::dirichlet_everywhere(vector_fn(u_bc), scalar_fn(w_bc))
    } else {
        let mut b = pump_boundary_data();
        for side in [BoundaryMarker::Bottom, BoundaryMarker::Top] {
            b.set_velocity(side, Prescription::Dirichlet(vector_fn(u_bc)));
            b.set_spin(side, Prescription::Dirichlet(scalar_fn(w_bc)));
        }
        b
    };
    Problem {
        params: PARAMS,
        bcs,
        sources: Sources {
            f: Some(vector_fn(f_src)),
            g: Some(scalar_fn(g_src)),
        },
    }
}

pub fn random_level(rng: &mut StdRng, d: &Discretization) -> Level {
    Level {
        u: (0..d.velocity.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        w: (0..d.spin.n_dofs).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

pub fn step_data<'a>(
    enclosed: bool,
    ub: &'a dyn Fn(f64, f64) -> [f64; 2],
    wb: &'a dyn Fn(f64, f64) -> f64,
    f: &'a dyn Fn(f64, f64) -> [f64; 2],
    g: &'a dyn Fn(f64, f64) -> f64,
) -> StepData<'a> {
    StepData {
        params: dense_params(&PARAMS),
        enclosed,
        u_bc: ub,
        w_bc: wb,
        f,
        g,
    }
}

pub fn first_order_matches(nx: usize, ny: usize, lx: f64, ly: f64, enclosed: bool, seed: u64) -> f64 {
    let d = disc(nx, ny, lx, ly);
    let prob = problem(enclosed);
    let ops = DenseOps::new(Grid::new(nx, ny, lx, ly));
    let mut rng = StdRng::seed_from_u64(seed);
    let old = random_level(&mut rng, &d);
    let (t0, tau) = (0.3, 0.05);
    let t = t0 + tau;

    let mut stepper = Stepper::new(&d, &prob).unwrap();
    let state = TimeState {
        k: 4,
        t: t0,
        u: old.u.clone(),
        w: old.w.clone(),
        p: vec![0.0; d.pressure.n_dofs],
        prev: None,
    };
    let next = stepper.step_first_order(&state, tau).unwrap();

    let ub = move |x, y| u_bc(x, y, t);
    let wb = move |x, y| w_bc(x, y, t);
    let f = move |x, y| f_src(x, y, t);
    let g = move |x, y| g_src(x, y, t);
    let data = step_data(enclosed, &ub, &wb, &f, &g);
    let a = 1.0 / tau;
    let uo = DVector::from_column_slice(&old.u);
    let wo = DVector::from_column_slice(&old.w);
    let (u, w, p) = reference_step(
        &ops,
        &data,
        StepInputs {
            a,
            hist_u: ops.block2(&ops.m2) * &uo * a,
            hist_w: &ops.m2 * &wo * (PARAMS.j * a),
            u_adv: &old.u,
            w_explicit: &old.w,
        },
    );
    assert_eq!(next.k, 5);
    assert!((next.t - t).abs() < 1e-15);
    let err = [
        max_abs_diff(&next.u, &u),
        max_abs_diff(&next.w, &w),
        max_abs_diff(&next.p, &p),
    ];
    err.into_iter().fold(0.0, f64::max)
}

pub fn bdf2_matches(nx: usize, ny: usize, lx: f64, ly: f64, enclosed: bool, seed: u64) -> f64 {
    let d = disc(nx, ny, lx, ly);
    let prob = problem(enclosed);
    let ops = DenseOps::new(Grid::new(nx, ny, lx, ly));
    let mut rng = StdRng::seed_from_u64(seed);
    let l0 = random_level(&mut rng, &d);
    let l1 = random_level(&mut rng, &d);
    let (t1, tau) = (0.2, 0.04);
    let t = t1 + tau;

    let mut stepper = Stepper::new(&d, &prob).unwrap();
    let state = TimeState {
        k: 1,
        t: t1,
        u: l1.u.clone(),
        w: l1.w.clone(),
        p: vec![0.0; d.pressure.n_dofs],
        prev: Some(l0.clone()),
    };
    let next = stepper.step_bdf2(&state, tau).unwrap();
    assert_eq!(next.prev.as_ref(), Some(&l1));

    let ub = move |x, y| u_bc(x, y, t);
    let wb = move |x, y| w_bc(x, y, t);
    let f = move |x, y| f_src(x, y, t);
    let g = move |x, y| g_src(x, y, t);
    let data = step_data(enclosed, &ub, &wb, &f, &g);
    let comb = |a: &[f64], b: &[f64]| DVector::from_iterator(a.len(), a.iter().zip(b).map(|(x, y)| 4.0 * x - y));
    let extrap: Vec<f64> = l1.u.iter().zip(&l0.u).map(|(x, y)| 2.0 * x - y).collect();
    let extrap_w: Vec<f64> = l1.w.iter().zip(&l0.w).map(|(x, y)| 2.0 * x - y).collect();
    let (u, w, p) = reference_step(
        &ops,
        &data,
        StepInputs {
            a: 1.5 / tau,
            hist_u: ops.block2(&ops.m2) * comb(&l1.u, &l0.u) / (2.0 * tau),
            hist_w: &ops.m2 * comb(&l1.w, &l0.w) * (PARAMS.j / (2.0 * tau)),
            u_adv: &extrap,
            w_explicit: &extrap_w,
        },
    );
    [
        max_abs_diff(&next.u, &u),
        max_abs_diff(&next.w, &w),
        max_abs_diff(&next.p, &p),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

