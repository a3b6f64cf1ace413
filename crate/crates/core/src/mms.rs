//! Manufactured solution on the unit square, discrete error norms and
//! observed orders of convergence.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{scalar_fn, vector_fn, BoundaryData, CellGeometry};
use crate::mesh::{generate_rect_mesh, MeshConfig};
use crate::schemes::{
    run, tensor_fn, Discretization, ExactFields, InitialData, MaterialParams, Problem, SchemeKind,
    Sources, TimeGrid,
};

const TWO_PI: f64 = 2.0 * PI;

/// `u = (sin a sin b, cos a cos b)`, `p = sin(2 pi (x - y) + t)`,
/// `w = sin a sin b` with `a = 2 pi x + t`, `b = 2 pi y + t`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ManufacturedSolution;

fn angles(x: f64, y: f64, t: f64) -> ((f64, f64), (f64, f64)) {
    ((TWO_PI * x + t).sin_cos(), (TWO_PI * y + t).sin_cos())
}

impl ManufacturedSolution {
    pub fn u(x: f64, y: f64, t: f64) -> [f64; 2] {
        let ((sa, ca), (sb, cb)) = angles(x, y, t);
        [sa * sb, ca * cb]
    }

    /// `[c][d] = d u_c / d x_d`.
    pub fn grad_u(x: f64, y: f64, t: f64) -> [[f64; 2]; 2] {
        let ((sa, ca), (sb, cb)) = angles(x, y, t);
        [
            [TWO_PI * ca * sb, TWO_PI * sa * cb],
            [-TWO_PI * sa * cb, -TWO_PI * ca * sb],
        ]
    }

    pub fn u_t(x: f64, y: f64, t: f64) -> [f64; 2] {
        let s = (TWO_PI * (x + y) + 2.0 * t).sin();
        [s, -s]
    }

    pub fn lap_u(x: f64, y: f64, t: f64) -> [f64; 2] {
        let u = Self::u(x, y, t);
        let k = -2.0 * TWO_PI * TWO_PI;
        [k * u[0], k * u[1]]
    }

    pub fn p(x: f64, y: f64, t: f64) -> f64 {
        (TWO_PI * (x - y) + t).sin()
    }

    pub fn grad_p(x: f64, y: f64, t: f64) -> [f64; 2] {
        let c = TWO_PI * (TWO_PI * (x - y) + t).cos();
        [c, -c]
    }

    pub fn w(x: f64, y: f64, t: f64) -> f64 {
        let ((sa, _), (sb, _)) = angles(x, y, t);
        sa * sb
    }

    pub fn grad_w(x: f64, y: f64, t: f64) -> [f64; 2] {
        let ((sa, ca), (sb, cb)) = angles(x, y, t);
        [TWO_PI * ca * sb, TWO_PI * sa * cb]
    }

    pub fn w_t(x: f64, y: f64, t: f64) -> f64 {
        (TWO_PI * (x + y) + 2.0 * t).sin()
    }

    pub fn lap_w(x: f64, y: f64, t: f64) -> f64 {
        -2.0 * TWO_PI * TWO_PI * Self::w(x, y, t)
    }

    pub fn exact_fields() -> ExactFields {
        ExactFields {
            u: vector_fn(Self::u),
            grad_u: tensor_fn(Self::grad_u),
            p: scalar_fn(Self::p),
            w: scalar_fn(Self::w),
            grad_w: vector_fn(Self::grad_w),
        }
    }

    /// Time-dependent Dirichlet data for both fields on every side.
    pub fn boundary_data() -> BoundaryData {
        BoundaryData::dirichlet_everywhere(vector_fn(Self::u), scalar_fn(Self::w))
    }

    pub fn sources(params: MaterialParams) -> Sources {
        Sources {
            f: Some(vector_fn(move |x, y, t| mms_forcing(&params, t, x, y).0)),
            g: Some(scalar_fn(move |x, y, t| mms_forcing(&params, t, x, y).1)),
        }
    }

    pub fn problem(params: MaterialParams) -> Problem {
        Problem {
            params,
            bcs: Self::boundary_data(),
            sources: Self::sources(params),
        }
    }
}

/// `(u, p, w)` at a point.
pub fn mms_fields(t: f64, x: f64, y: f64) -> ([f64; 2], f64, f64) {
    (
        ManufacturedSolution::u(x, y, t),
        ManufacturedSolution::p(x, y, t),
        ManufacturedSolution::w(x, y, t),
    )
}

/// Forcings `(f, g)` that make the manufactured fields an exact solution:
/// `f = u_t - nu0 lap u + (u . grad) u + grad p - 2 nu_r curl w`,
/// `g = j w_t - c1 lap w + j u . grad w + 4 nu_r w - 2 nu_r curl u`.
pub fn mms_forcing(params: &MaterialParams, t: f64, x: f64, y: f64) -> ([f64; 2], f64) {
    type M = ManufacturedSolution;
    let u = M::u(x, y, t);
    let gu = M::grad_u(x, y, t);
    let ut = M::u_t(x, y, t);
    let lu = M::lap_u(x, y, t);
    let gp = M::grad_p(x, y, t);
    let w = M::w(x, y, t);
    let gw = M::grad_w(x, y, t);
    let curl_w = [gw[1], -gw[0]];
    let curl_u = gu[1][0] - gu[0][1];
    let nu0 = params.nu0();
    let nr = params.nu_r;
    let mut f = [0.0; 2];
    for c in 0..2 {
        let conv = u[0] * gu[c][0] + u[1] * gu[c][1];
        f[c] = ut[c] - nu0 * lu[c] + conv + gp[c] - 2.0 * nr * curl_w[c];
    }
    let g = params.j * M::w_t(x, y, t) - params.c1() * M::lap_w(x, y, t)
        + params.j * (u[0] * gw[0] + u[1] * gw[1])
        + 4.0 * nr * w
        - 2.0 * nr * curl_u;
    (f, g)
}

// ---------------------------------------------------------------------------
// Error norms

/// Space-time errors of one run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorReport {
    pub level: usize,
    pub h: f64,
    pub tau: f64,
    pub linf_l2_u: f64,
    pub linf_l2_w: f64,
    pub l2_h1_u: f64,
    pub l2_h1_w: f64,
    pub l2_l2_p: f64,
}

impl ErrorReport {
    pub const NORMS: [&'static str; 5] = ["linf_l2_u", "linf_l2_w", "l2_h1_u", "l2_h1_w", "l2_l2_p"];

    pub fn norms(&self) -> [f64; 5] {
        [self.linf_l2_u, self.linf_l2_w, self.l2_h1_u, self.l2_h1_w, self.l2_l2_p]
    }
}

/// Spatial errors at one time level.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepErrors {
    pub l2_u: f64,
    pub l2_w: f64,
    pub h1_u: f64,
    pub h1_w: f64,
    /// L2 error of the pressure after removing the mean of the error.
    pub l2_p: f64,
}

/// Errors of discrete fields against exact ones, Q_FIELD quadrature.
pub fn step_errors(disc: &Discretization, exact: &ExactFields, t: f64, u: &[f64], w: &[f64], p: &[f64]) -> StepErrors {
    let tables = &disc.fields.tables;
    let (vm, sm, pm) = (&disc.velocity, &disc.spin, &disc.pressure);
    let nn = vm.n_nodes;
    let (mut eu, mut ew, mut gu, mut gw, mut ep, mut ep_mean) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for cell in 0..disc.mesh.n_cells() {
        let geo = CellGeometry::of(&disc.mesh, cell);
        let vn = vm.cell(cell);
        let sn = sm.cell(cell);
        let pn = pm.cell(cell);
        for (q, &wq) in tables.rule.weights.iter().enumerate() {
            let [x, y] = geo.map(tables.rule.points[q]);
            let wj = wq * geo.det_jacobian();
            let mut uh = [0.0; 2];
            let mut guh = [[0.0; 2]; 2];
            let mut wh = 0.0;
            let mut gwh = [0.0; 2];
            for a in 0..9 {
                let v = tables.q2.value(q, a);
                let d = geo.push_gradient(tables.q2.gradient(q, a));
                let (n, m) = (vn[a], sn[a]);
                for c in 0..2 {
                    let coef = u[c * nn + n];
                    uh[c] += coef * v;
                    guh[c][0] += coef * d[0];
                    guh[c][1] += coef * d[1];
                }
                wh += w[m] * v;
                gwh[0] += w[m] * d[0];
                gwh[1] += w[m] * d[1];
            }
            let ph: f64 = (0..4).map(|b| p[pn[b]] * tables.q1.value(q, b)).sum();

            let ue = (exact.u)(x, y, t);
            let gue = (exact.grad_u)(x, y, t);
            let we = (exact.w)(x, y, t);
            let gwe = (exact.grad_w)(x, y, t);
            let pe = (exact.p)(x, y, t);
            eu += wj * ((uh[0] - ue[0]).powi(2) + (uh[1] - ue[1]).powi(2));
            for c in 0..2 {
                for dd in 0..2 {
                    gu += wj * (guh[c][dd] - gue[c][dd]).powi(2);
                }
            }
            ew += wj * (wh - we).powi(2);
            gw += wj * ((gwh[0] - gwe[0]).powi(2) + (gwh[1] - gwe[1]).powi(2));
            let e = ph - pe;
            ep += wj * e * e;
            ep_mean += wj * e;
        }
    }
    let area = disc.mesh.area();
    StepErrors {
        l2_u: eu.sqrt(),
        l2_w: ew.sqrt(),
        h1_u: gu.sqrt(),
        h1_w: gw.sqrt(),
        l2_p: (ep - ep_mean * ep_mean / area).max(0.0).sqrt(),
    }
}

/// Accumulates discrete-in-time norms over the snapshots of a run.
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    tau: f64,
    next_k: usize,
    linf_u: f64,
    linf_w: f64,
    sum_h1_u: f64,
    sum_h1_w: f64,
    sum_p: f64,
}

impl ErrorAccumulator {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            next_k: 0,
            linf_u: 0.0,
            linf_w: 0.0,
            sum_h1_u: 0.0,
            sum_h1_w: 0.0,
            sum_p: 0.0,
        }
    }

    /// Adds level `k`; levels must arrive in order starting at 0.
    pub fn push(&mut self, k: usize, e: StepErrors) -> Result<()> {
        if k != self.next_k {
            return Err(Error::InvalidInput(format!(
                "snapshot for step {} missing (got step {k})",
                self.next_k
            )));
        }
        self.next_k += 1;
        self.linf_u = self.linf_u.max(e.l2_u);
        self.linf_w = self.linf_w.max(e.l2_w);
        self.sum_h1_u += self.tau * e.h1_u * e.h1_u;
        self.sum_h1_w += self.tau * e.h1_w * e.h1_w;
        self.sum_p += self.tau * e.l2_p * e.l2_p;
        Ok(())
    }

    pub fn steps_seen(&self) -> usize {
        self.next_k
    }

    pub fn report(&self, level: usize, h: f64) -> ErrorReport {
        ErrorReport {
            level,
            h,
            tau: self.tau,
            linf_l2_u: self.linf_u,
            linf_l2_w: self.linf_w,
            l2_h1_u: self.sum_h1_u.sqrt(),
            l2_h1_w: self.sum_h1_w.sqrt(),
            l2_l2_p: self.sum_p.sqrt(),
        }
    }
}

/// A stored snapshot `(k, t, U, W, P)`.
pub type Snapshot = (usize, f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// Error norms of a stored trajectory covering steps `0..=K`.
pub fn error_norms(
    disc: &Discretization,
    trajectory: &[Snapshot],
    exact: &ExactFields,
    tau: f64,
    level: usize,
) -> Result<ErrorReport> {
    if trajectory.is_empty() {
        return Err(Error::InvalidInput("empty trajectory".into()));
    }
    let mut acc = ErrorAccumulator::new(tau);
    for (k, t, u, w, p) in trajectory {
        acc.push(*k, step_errors(disc, exact, *t, u, w, p))?;
    }
    Ok(acc.report(level, disc.mesh.hx()))
}

// ---------------------------------------------------------------------------
// Orders of convergence

#[derive(Debug, Clone, PartialEq)]
pub struct EocRow {
    pub coarse_level: usize,
    pub fine_level: usize,
    /// In the order of [`ErrorReport::NORMS`].
    pub orders: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EocTable {
    pub reports: Vec<ErrorReport>,
    pub orders: Vec<EocRow>,
}

impl EocTable {
    /// Orders on the finest pair.
    pub fn finest(&self) -> Option<&EocRow> {
        self.orders.last()
    }

    pub fn order_of(row: &EocRow, norm: &str) -> Option<f64> {
        ErrorReport::NORMS.iter().position(|n| *n == norm).map(|i| row.orders[i])
    }
}

/// `log2(e_coarse / e_fine)` per norm and adjacent pair; `h` must halve.
pub fn eoc(reports: &[ErrorReport]) -> Result<EocTable> {
    let mut orders = Vec::new();
    for pair in reports.windows(2) {
        let (c, f) = (&pair[0], &pair[1]);
        if (c.h / f.h - 2.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "mesh sizes {} and {} are not consecutive halvings",
                c.h, f.h
            )));
        }
        orders.push(EocRow {
            coarse_level: c.level,
            fine_level: f.level,
            orders: rates(&c.norms(), &f.norms())?,
        });
    }
    Ok(EocTable {
        reports: reports.to_vec(),
        orders,
    })
}

fn rates(coarse: &[f64; 5], fine: &[f64; 5]) -> Result<[f64; 5]> {
    let mut out = [0.0; 5];
    for i in 0..5 {
        if !(coarse[i] > 0.0 && fine[i] > 0.0) {
            return Err(Error::InvalidInput(format!(
                "nonpositive error in {}: {} / {}",
                ErrorReport::NORMS[i],
                coarse[i],
                fine[i]
            )));
        }
        out[i] = (coarse[i] / fine[i]).log2();
    }
    Ok(out)
}

/// `log2(e(tau) / e(tau / 2))` per norm for reports with halving `tau`.
pub fn temporal_orders(reports: &[ErrorReport]) -> Result<Vec<[f64; 5]>> {
    reports
        .windows(2)
        .map(|pair| {
            if (pair[0].tau / pair[1].tau - 2.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!(
                    "time steps {} and {} are not consecutive halvings",
                    pair[0].tau, pair[1].tau
                )));
            }
            rates(&pair[0].norms(), &pair[1].norms())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Studies

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyKind {
    /// `tau = h^2`; energy norms of velocity and spin, pressure.
    H1Pressure,
    /// `tau = h^3`; L2 norms of velocity and spin.
    LinfL2,
}

impl StudyKind {
    pub fn tau(self, h: f64) -> f64 {
        match self {
            StudyKind::H1Pressure => h * h,
            StudyKind::LinfL2 => h * h * h,
        }
    }

    /// Norms whose orders the study is meant to measure.
    pub fn target_norms(self) -> &'static [&'static str] {
        match self {
            StudyKind::H1Pressure => &["l2_h1_u", "l2_h1_w", "l2_l2_p"],
            StudyKind::LinfL2 => &["linf_l2_u", "linf_l2_w"],
        }
    }
}

impl std::str::FromStr for StudyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "h1_pressure" => Ok(StudyKind::H1Pressure),
            "linf_l2" => Ok(StudyKind::LinfL2),
            other => Err(format!("unknown study kind `{other}` (expected h1_pressure or linf_l2)")),
        }
    }
}

impl std::fmt::Display for StudyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StudyKind::H1Pressure => "h1_pressure",
            StudyKind::LinfL2 => "linf_l2",
        })
    }
}

/// Runs the manufactured problem on an `n x n` mesh and returns its errors.
pub fn mms_run(n: usize, tau: f64, final_time: f64, scheme: SchemeKind, params: MaterialParams) -> Result<ErrorReport> {
    let mesh = generate_rect_mesh(MeshConfig::unit_square(n))?;
    let disc = Discretization::new(mesh)?;
    let exact = ManufacturedSolution::exact_fields();
    let problem = ManufacturedSolution::problem(params);
    let grid = TimeGrid::from_final_time(final_time, tau)?;
    let mut acc = ErrorAccumulator::new(tau);
    let mut failure = None;
    run(&disc, &problem, scheme, &grid, InitialData::Exact(&exact), |k, t, u, w, p| {
        if let Err(e) = acc.push(k, step_errors(&disc, &exact, t, u, w, p)) {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let level = n.trailing_zeros() as usize;
    Ok(acc.report(level, disc.mesh.hx()))
}

/// First-order runs on meshes `h = 2^-i` for each level `i`, with `tau`
/// tied to `h` by the study kind. Levels run concurrently.
pub fn converge_study(kind: StudyKind, levels: &[usize], params: MaterialParams, final_time: f64) -> Result<EocTable> {
    if let Some(bad) = levels.iter().find(|&&l| !(1..=8).contains(&l)) {
        return Err(Error::InvalidInput(format!("refinement level {bad} outside 1..=8")));
    }
    let reports: Vec<ErrorReport> = levels
        .par_iter()
        .map(|&level| {
            let n = 1usize << level;
            let h = 1.0 / n as f64;
            mms_run(n, kind.tau(h), final_time, SchemeKind::FirstOrder, params)
        })
        .collect::<Result<_>>()?;
    eoc(&reports)
}

/// Fixed mesh, several time steps.
pub fn temporal_study(n: usize, taus: &[f64], final_time: f64, scheme: SchemeKind, params: MaterialParams) -> Result<Vec<ErrorReport>> {
    taus.par_iter()
        .map(|&tau| mms_run(n, tau, final_time, scheme, params))
        .collect()
}
