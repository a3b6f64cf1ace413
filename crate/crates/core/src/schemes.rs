//! Decoupled time stepping: projections of initial data, the first-order
//! scheme, the BDF2 scheme and the discrete energy monitor.
//!
//! Each step solves the velocity-pressure saddle system first and the spin
//! system second. The momentum solve only reads the lagged (first order) or
//! extrapolated (BDF2) spin.

use std::collections::HashMap;
use std::sync::Arc;

use crate::assembly::{FieldAssembler, FieldFn, OperatorSet};
use crate::error::{Error, Result};
use crate::fem::{
    build_dof_map, interpolate_boundary, BoundaryData, CellGeometry, Constraints, DofMap,
    FieldKind, FieldPrescriptions, Prescription, ScalarFn, VectorFn,
};
use crate::mesh::Mesh;
use crate::sparse::{apply_dirichlet, dot, from_triplets, CsrMatrix, ReusingSolver, SolveOptions, Triplets};

/// `(x, y, t) -> grad[c][d] = d u_c / d x_d`.
pub type TensorFn = Arc<dyn Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync>;

pub fn tensor_fn(f: impl Fn(f64, f64, f64) -> [[f64; 2]; 2] + Send + Sync + 'static) -> TensorFn {
    Arc::new(f)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaterialParams {
    pub nu: f64,
    pub nu_r: f64,
    pub c_a: f64,
    pub c_d: f64,
    pub c_0: f64,
    pub j: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self::unit()
    }
}

impl MaterialParams {
    /// All constants equal to one.
    pub fn unit() -> Self {
        Self {
            nu: 1.0,
            nu_r: 1.0,
            c_a: 1.0,
            c_d: 1.0,
            c_0: 1.0,
            j: 1.0,
        }
    }

    pub fn nu0(&self) -> f64 {
        self.nu + self.nu_r
    }

    pub fn c1(&self) -> f64 {
        self.c_a + self.c_d
    }

    pub fn c2(&self) -> f64 {
        self.c_0 + self.c_d - self.c_a
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("nu", self.nu),
            ("nu_r", self.nu_r),
            ("c_a", self.c_a),
            ("c_d", self.c_d),
            ("c_0", self.c_0),
            ("j", self.j),
        ];
        if let Some((name, v)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParams(format!("{name} = {v} is not finite")));
        }
        let checks = [
            (self.nu >= 0.0, format!("nu = {} must be nonnegative", self.nu)),
            (self.nu_r >= 0.0, format!("nu_r = {} must be nonnegative", self.nu_r)),
            (self.c_d >= 0.0, format!("c_d = {} must be nonnegative", self.c_d)),
            (
                self.c_a + self.c_d >= 0.0,
                format!("c_a + c_d = {} must be nonnegative", self.c_a + self.c_d),
            ),
            (
                3.0 * self.c_0 + 2.0 * self.c_d >= 0.0,
                format!("3 c_0 + 2 c_d = {} must be nonnegative", 3.0 * self.c_0 + 2.0 * self.c_d),
            ),
            (
                (self.c_d - self.c_a).abs() <= self.c_a + self.c_d,
                format!(
                    "|c_d - c_a| = {} must not exceed c_a + c_d = {}",
                    (self.c_d - self.c_a).abs(),
                    self.c_a + self.c_d
                ),
            ),
            (self.c1() > 0.0, format!("c1 = c_a + c_d = {} must be positive", self.c1())),
            (self.c2() > 0.0, format!("c2 = c_0 + c_d - c_a = {} must be positive", self.c2())),
            (self.j > 0.0, format!("j = {} must be positive", self.j)),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::InvalidParams(format!(
                    "{msg} (thermodynamic admissibility of the material constants)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub tau: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(tau: f64, steps: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidTimeGrid(format!("tau = {tau} must be positive")));
        }
        Ok(Self { tau, steps })
    }

    /// Grid with `K = round(T / tau)` steps. `T` must be a multiple of `tau`
    /// up to 1e-9 relative.
    pub fn from_final_time(final_time: f64, tau: f64) -> Result<Self> {
        if !(final_time >= 0.0 && final_time.is_finite()) {
            return Err(Error::InvalidTimeGrid(format!("T = {final_time} must be nonnegative")));
        }
        let grid = Self::new(tau, 0)?;
        let k = (final_time / tau).round();
        if (k * tau - final_time).abs() > 1e-9 * final_time.max(tau) {
            return Err(Error::InvalidTimeGrid(format!(
                "T = {final_time} is not a multiple of tau = {tau}"
            )));
        }
        Ok(Self {
            steps: k as usize,
            ..grid
        })
    }

    pub fn final_time(&self) -> f64 {
        self.steps as f64 * self.tau
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.tau
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    FirstOrder,
    Bdf2,
}

impl std::str::FromStr for SchemeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "first_order" => Ok(SchemeKind::FirstOrder),
            "bdf2" => Ok(SchemeKind::Bdf2),
            other => Err(format!("unknown scheme `{other}` (expected first_order or bdf2)")),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SchemeKind::FirstOrder => "first_order",
            SchemeKind::Bdf2 => "bdf2",
        })
    }
}

/// Velocity and spin at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
}

/// Fields at level `k`, plus level `k - 1` once it exists.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeState {
    pub k: usize,
    pub t: f64,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub p: Vec<f64>,
    pub prev: Option<Level>,
}

impl TimeState {
    pub fn zeros(disc: &Discretization) -> Self {
        Self {
            k: 0,
            t: 0.0,
            u: vec![0.0; disc.velocity.n_dofs],
            w: vec![0.0; disc.spin.n_dofs],
            p: vec![0.0; disc.pressure.n_dofs],
            prev: None,
        }
    }

    pub fn level(&self) -> Level {
        Level {
            u: self.u.clone(),
            w: self.w.clone(),
        }
    }
}

/// Exact fields with the derivatives needed by the projections.
#[derive(Clone)]
pub struct ExactFields {
    pub u: VectorFn,
    pub grad_u: TensorFn,
    pub p: ScalarFn,
    pub w: ScalarFn,
    pub grad_w: VectorFn,
}

impl std::fmt::Debug for ExactFields {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("ExactFields { .. }")
    }
}

/// Forcing terms; `None` means identically zero.
#[derive(Clone, Default)]
pub struct Sources {
    pub f: Option<VectorFn>,
    pub g: Option<ScalarFn>,
}

impl std::fmt::Debug for Sources {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sources")
            .field("f", &self.f.is_some())
            .field("g", &self.g.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub params: MaterialParams,
    pub bcs: BoundaryData,
    pub sources: Sources,
}

/// Mesh, dof maps and the field-independent operators.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mesh: Mesh,
    pub velocity: DofMap,
    pub spin: DofMap,
    pub pressure: DofMap,
    pub ops: OperatorSet,
    pub fields: FieldAssembler,
}

impl Discretization {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let velocity = build_dof_map(&mesh, FieldKind::Velocity);
        let spin = build_dof_map(&mesh, FieldKind::Spin);
        let pressure = build_dof_map(&mesh, FieldKind::Pressure);
        let ops = OperatorSet::assemble(&mesh, &velocity, &spin, &pressure)?;
        let fields = FieldAssembler::new(&mesh, &spin)?;
        Ok(Self {
            mesh,
            velocity,
            spin,
            pressure,
            ops,
            fields,
        })
    }

    pub fn velocity_constraints(&self, bcs: &BoundaryData, t: f64) -> Constraints {
        interpolate_boundary(&self.velocity, FieldPrescriptions::Vector(&bcs.velocity), t)
    }

    pub fn spin_constraints(&self, bcs: &BoundaryData, t: f64) -> Constraints {
        interpolate_boundary(&self.spin, FieldPrescriptions::Scalar(&bcs.spin), t)
    }

    pub fn velocity_load(&self, f: Option<&VectorFn>, t: f64) -> Vec<f64> {
        match f {
            Some(f) => self.fields.load(&self.mesh, &self.velocity, &FieldFn::Vector(f.clone()), t),
            None => vec![0.0; self.velocity.n_dofs],
        }
    }

    pub fn spin_load(&self, g: Option<&ScalarFn>, t: f64) -> Vec<f64> {
        match g {
            Some(g) => self.fields.load(&self.mesh, &self.spin, &FieldFn::Scalar(g.clone()), t),
            None => vec![0.0; self.spin.n_dofs],
        }
    }

    /// Discrete divergence residual `max_q |(psi_q, div U)|`.
    pub fn divergence_residual(&self, u: &[f64]) -> f64 {
        self.ops
            .b
            .spmv(u)
            .expect("velocity vector length")
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `integral of P / |Omega|`.
    pub fn pressure_mean(&self, p: &[f64]) -> f64 {
        dot(&self.ops.mean_weights, p) / self.mesh.area()
    }
}

// ---------------------------------------------------------------------------
// Linear systems

/// Saddle system `[[a M + nu0 K + C, -B^T (, 0)], [-B, 0 (, r^T)] (, [0, r, 0])]`
/// with a fixed pattern; the convection block is added per step.
#[derive(Debug, Clone)]
struct MomentumSystem {
    matrix: CsrMatrix,
    base: Vec<f64>,
    /// Positions of each scalar-pattern entry in the two velocity blocks.
    slots: Vec<[usize; 2]>,
    bordered: bool,
}

impl MomentumSystem {
    fn new(disc: &Discretization, nu0: f64, mass_coef: f64, bordered: bool) -> Result<Self> {
        let ops = &disc.ops;
        let n = disc.velocity.n_nodes;
        let nv = disc.velocity.n_dofs;
        let np = disc.pressure.n_dofs;
        let size = nv + np + usize::from(bordered);
        let scalar = &disc.fields.scalar_q2.pattern;
        let a = CsrMatrix::linear_combination(&[(mass_coef, &ops.mu), (nu0, &ops.ku)])?;
        let bt = ops.b.transpose();

        let mut t = Triplets::with_capacity(size, size, a.nnz() + 2 * scalar.nnz() + 2 * ops.b.nnz() + 2 * np + 1);
        t.push_block(&a, 0, 0, 1.0);
        for (i, j) in pattern_entries(scalar) {
            t.push(i, j, 0.0);
            t.push(n + i, n + j, 0.0);
        }
        t.push_block(&bt, 0, nv, -1.0);
        t.push_block(&ops.b, nv, 0, -1.0);
        // structural pressure diagonal, needed for the pattern to admit pivoting
        for q in 0..np {
            t.push(nv + q, nv + q, 0.0);
        }
        if bordered {
            for (q, &r) in ops.mean_weights.iter().enumerate() {
                t.push(nv + q, nv + np, r);
                t.push(nv + np, nv + q, r);
            }
            t.push(nv + np, nv + np, 0.0);
        }
        let matrix = from_triplets(&t)?;
        let slots = pattern_entries(scalar)
            .map(|(i, j)| {
                [
                    matrix.position(i, j).expect("velocity block entry"),
                    matrix.position(n + i, n + j).expect("velocity block entry"),
                ]
            })
            .collect();
        Ok(Self {
            base: matrix.values.clone(),
            matrix,
            slots,
            bordered,
        })
    }

    /// Matrix for a given scalar convection operator (values on the scalar pattern).
    fn with_convection(&self, conv: Option<&[f64]>) -> CsrMatrix {
        let mut m = self.matrix.clone();
        m.values.copy_from_slice(&self.base);
        if let Some(c) = conv {
            for (s, v) in self.slots.iter().zip(c) {
                m.values[s[0]] += v;
                m.values[s[1]] += v;
            }
        }
        m
    }
}

fn pattern_entries(m: &CsrMatrix) -> impl Iterator<Item = (usize, usize)> + '_ {
    (0..m.n_rows).flat_map(move |i| (m.row_ptr[i]..m.row_ptr[i + 1]).map(move |k| (i, m.col_idx[k])))
}

fn check_finite(v: &[f64], step: usize, field: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { step, field })
    }
}

/// Right-hand side history terms of one step.
struct MomentumRhs<'a> {
    mass_coef: f64,
    /// `M * (history combination) / tau`, already multiplied.
    history: Vec<f64>,
    advecting: Option<&'a [f64]>,
    /// Spin field entering `2 nu_r (curl W, v)`.
    spin: &'a [f64],
}

/// Builds and solves the per-step systems, caching patterns, base matrices
/// and the symbolic factorizations.
#[derive(Debug)]
pub struct Stepper<'a> {
    pub disc: &'a Discretization,
    pub problem: &'a Problem,
    momentum: HashMap<u64, MomentumSystem>,
    momentum_lu: ReusingSolver,
    spin_lu: ReusingSolver,
    conv: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(disc: &'a Discretization, problem: &'a Problem) -> Result<Self> {
        problem.params.validate()?;
        let opts = SolveOptions::default();
        Ok(Self {
            disc,
            problem,
            momentum: HashMap::new(),
            momentum_lu: ReusingSolver::new(opts),
            spin_lu: ReusingSolver::new(opts),
            conv: vec![0.0; disc.fields.scalar_q2.pattern.nnz()],
        })
    }

    fn bordered(&self) -> bool {
        self.problem.bcs.velocity_enclosed()
    }

    fn momentum_system(&mut self, mass_coef: f64) -> Result<&MomentumSystem> {
        let key = mass_coef.to_bits();
        if !self.momentum.contains_key(&key) {
            let sys = MomentumSystem::new(self.disc, self.problem.params.nu0(), mass_coef, self.bordered())?;
            self.momentum.insert(key, sys);
        }
        Ok(&self.momentum[&key])
    }

    /// Solves the saddle system with extra right-hand side `extra` (velocity
    /// rows) and `div_rhs` (pressure rows), Dirichlet data `bc`.
    fn solve_saddle(
        &mut self,
        mass_coef: f64,
        advecting: Option<&[f64]>,
        extra: &[f64],
        div_rhs: Option<&[f64]>,
        bc: &Constraints,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let disc = self.disc;
        let nv = disc.velocity.n_dofs;
        let np = disc.pressure.n_dofs;
        let conv = match advecting {
            Some(u) => {
                let mut conv = std::mem::take(&mut self.conv);
                disc.fields.convection_values(&disc.mesh, &disc.velocity, u, 1.0, &mut conv);
                Some(conv)
            }
            None => None,
        };
        let sys = self.momentum_system(mass_coef)?;
        let bordered = sys.bordered;
        let mut a = sys.with_convection(conv.as_deref());
        if let Some(c) = conv {
            self.conv = c;
        }
        let mut rhs = vec![0.0; a.n_rows];
        rhs[..nv].copy_from_slice(extra);
        if let Some(d) = div_rhs {
            rhs[nv..nv + np].copy_from_slice(d);
        }
        apply_dirichlet(&mut a, &mut rhs, bc)?;
        let x = self.momentum_lu.solve(&a, &rhs)?;
        let u = x[..nv].to_vec();
        let mut p = x[nv..nv + np].to_vec();
        if bordered {
            let shift = disc.pressure_mean(&p);
            p.iter_mut().for_each(|v| *v -= shift);
        }
        Ok((u, p))
    }

    fn solve_momentum(&mut self, step: usize, t: f64, rhs: MomentumRhs<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let disc = self.disc;
        let params = self.problem.params;
        let mut extra = rhs.history;
        let f = disc.velocity_load(self.problem.sources.f.as_ref(), t);
        let curl = disc.ops.rwu.spmv(rhs.spin)?;
        for ((e, fi), ci) in extra.iter_mut().zip(&f).zip(&curl) {
            *e += fi + 2.0 * params.nu_r * ci;
        }
        let bc = disc.velocity_constraints(&self.problem.bcs, t);
        let (u, p) = self
            .solve_saddle(rhs.mass_coef, rhs.advecting, &extra, None, &bc)
            .map_err(|e| e.at_step(step))?;
        check_finite(&u, step, "velocity")?;
        check_finite(&p, step, "pressure")?;
        Ok((u, p))
    }

    /// `(j a + 4 nu_r) Mw + c1 Kw + j C(u_adv)` with right-hand side
    /// `history + 2 nu_r (curl U, .) + (g, .)`.
    fn solve_spin(&mut self, step: usize, t: f64, mass_coef: f64, history: Vec<f64>, u: &[f64]) -> Result<Vec<f64>> {
        let disc = self.disc;
        let params = self.problem.params;
        let ops = &disc.ops;
        let mut a = CsrMatrix::linear_combination(&[
            (params.j * mass_coef + 4.0 * params.nu_r, &ops.mw),
            (params.c1(), &ops.kw),
        ])?;
        debug_assert_eq!(a.col_idx, disc.fields.scalar_q2.pattern.col_idx);
        disc.fields
            .convection_values(&disc.mesh, &disc.velocity, u, params.j, &mut self.conv);
        for (v, c) in a.values.iter_mut().zip(&self.conv) {
            *v += c;
        }
        let g = disc.spin_load(self.problem.sources.g.as_ref(), t);
        let curl = ops.ruw.spmv(u)?;
        let mut rhs = history;
        for ((r, gi), ci) in rhs.iter_mut().zip(&g).zip(&curl) {
            *r += gi + 2.0 * params.nu_r * ci;
        }
        let bc = disc.spin_constraints(&self.problem.bcs, t);
        let w = (|| {
            apply_dirichlet(&mut a, &mut rhs, &bc)?;
            self.spin_lu.solve(&a, &rhs)
        })()
        .map_err(|e| e.at_step(step))?;
        check_finite(&w, step, "spin")?;
        Ok(w)
    }

    /// One step of the first-order scheme from `state` (level k-1) to level k.
    pub fn step_first_order(&mut self, state: &TimeState, tau: f64) -> Result<TimeState> {
        let k = state.k + 1;
        let t = state.t + tau;
        let ops = &self.disc.ops;
        let a = 1.0 / tau;
        let history_u: Vec<f64> = ops.mu.spmv(&state.u)?.into_iter().map(|v| v * a).collect();
        let (u, p) = self.solve_momentum(
            k,
            t,
            MomentumRhs {
                mass_coef: a,
                history: history_u,
                advecting: Some(&state.u),
                spin: &state.w,
            },
        )?;
        let j = self.problem.params.j;
        let history_w: Vec<f64> = ops.mw.spmv(&state.w)?.into_iter().map(|v| v * j * a).collect();
        let w = self.solve_spin(k, t, a, history_w, &u)?;
        Ok(TimeState {
            k,
            t,
            u,
            w,
            p,
            prev: Some(state.level()),
        })
    }

    /// One BDF2 step; `state` must carry level k-2 in `prev`.
    pub fn step_bdf2(&mut self, state: &TimeState, tau: f64) -> Result<TimeState> {
        let prev = state.prev.as_ref().ok_or_else(|| {
            Error::InvalidInput("BDF2 step needs two previous levels".into())
        })?;
        let k = state.k + 1;
        let t = state.t + tau;
        let ops = &self.disc.ops;
        let a = 1.5 / tau;
        let u_star = extrapolate(&state.u, &prev.u);
        let w_star = extrapolate(&state.w, &prev.w);
        let comb_u: Vec<f64> = state.u.iter().zip(&prev.u).map(|(a1, a2)| 4.0 * a1 - a2).collect();
        let history_u: Vec<f64> = ops.mu.spmv(&comb_u)?.into_iter().map(|v| v / (2.0 * tau)).collect();
        let (u, p) = self.solve_momentum(
            k,
            t,
            MomentumRhs {
                mass_coef: a,
                history: history_u,
                advecting: Some(&u_star),
                spin: &w_star,
            },
        )?;
        let j = self.problem.params.j;
        let comb_w: Vec<f64> = state.w.iter().zip(&prev.w).map(|(a1, a2)| 4.0 * a1 - a2).collect();
        let history_w: Vec<f64> = ops.mw.spmv(&comb_w)?.into_iter().map(|v| v * j / (2.0 * tau)).collect();
        let w = self.solve_spin(k, t, a, history_w, &u)?;
        Ok(TimeState {
            k,
            t,
            u,
            w,
            p,
            prev: Some(state.level()),
        })
    }

    /// Stokes projection of exact `(u, p)` at time `t`: the discrete pair with
    /// `nu0 (grad u_h, grad v) - (p_h, div v) = nu0 (grad u, grad v) - (p, div v)`
    /// and `(q, div u_h) = (q, div u)`. Dirichlet values come from the boundary
    /// prescriptions of the problem.
    pub fn stokes_projection(&mut self, exact: &ExactFields, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (rv, rp) = stokes_rhs(self.disc, self.problem.params.nu0(), exact, t);
        let bc = self.disc.velocity_constraints(&self.problem.bcs, t);
        let (u, p) = self.solve_saddle(0.0, None, &rv, Some(&rp), &bc)?;
        check_finite(&u, 0, "velocity")?;
        check_finite(&p, 0, "pressure")?;
        Ok((u, p))
    }

    /// Elliptic projection of exact `w`: `c1 (grad w_h, grad o) + 4 nu_r (w_h, o)`
    /// matches the same form applied to `w`.
    pub fn elliptic_projection(&mut self, exact: &ExactFields, t: f64) -> Result<Vec<f64>> {
        let disc = self.disc;
        let params = self.problem.params;
        let mut a = CsrMatrix::linear_combination(&[(4.0 * params.nu_r, &disc.ops.mw), (params.c1(), &disc.ops.kw)])?;
        let mut rhs = elliptic_rhs(disc, &params, exact, t);
        let bc = disc.spin_constraints(&self.problem.bcs, t);
        apply_dirichlet(&mut a, &mut rhs, &bc)?;
        let w = self.spin_lu.solve(&a, &rhs)?;
        check_finite(&w, 0, "spin")?;
        Ok(w)
    }

    /// Initial state from projections of exact data at `t`, or the rest state.
    pub fn init_first_order(&mut self, exact: Option<&ExactFields>, t: f64) -> Result<TimeState> {
        let mut state = TimeState::zeros(self.disc);
        state.t = t;
        if let Some(ex) = exact {
            let (u, p) = self.stokes_projection(ex, t)?;
            state.w = self.elliptic_projection(ex, t)?;
            state.u = u;
            state.p = p;
        }
        Ok(state)
    }
}

fn stokes_rhs(disc: &Discretization, nu0: f64, exact: &ExactFields, t: f64) -> (Vec<f64>, Vec<f64>) {
    let tables = &disc.fields.tables;
    let (vmap, pmap) = (&disc.velocity, &disc.pressure);
    let mut rv = vec![0.0; vmap.n_dofs];
    let mut rp = vec![0.0; pmap.n_dofs];
    for cell in 0..disc.mesh.n_cells() {
        let geo = CellGeometry::of(&disc.mesh, cell);
        let vn = vmap.cell(cell);
        let pn = pmap.cell(cell);
        for (q, &w) in tables.rule.weights.iter().enumerate() {
            let [x, y] = geo.map(tables.rule.points[q]);
            let wj = w * geo.det_jacobian();
            let g = (exact.grad_u)(x, y, t);
            let p = (exact.p)(x, y, t);
            let div = g[0][0] + g[1][1];
            for (a, &node) in vn.iter().enumerate() {
                let d = geo.push_gradient(tables.q2.gradient(q, a));
                for c in 0..2 {
                    rv[c * vmap.n_nodes + node] += wj * (nu0 * (g[c][0] * d[0] + g[c][1] * d[1]) - p * d[c]);
                }
            }
            for (b, &node) in pn.iter().enumerate() {
                rp[node] -= wj * div * tables.q1.value(q, b);
            }
        }
    }
    (rv, rp)
}

fn elliptic_rhs(disc: &Discretization, params: &MaterialParams, exact: &ExactFields, t: f64) -> Vec<f64> {
    let tables = &disc.fields.tables;
    let smap = &disc.spin;
    let mut r = vec![0.0; smap.n_dofs];
    for cell in 0..disc.mesh.n_cells() {
        let geo = CellGeometry::of(&disc.mesh, cell);
        for (q, &wq) in tables.rule.weights.iter().enumerate() {
            let [x, y] = geo.map(tables.rule.points[q]);
            let wj = wq * geo.det_jacobian();
            let w = (exact.w)(x, y, t);
            let gw = (exact.grad_w)(x, y, t);
            for (a, &node) in smap.cell(cell).iter().enumerate() {
                let d = geo.push_gradient(tables.q2.gradient(q, a));
                let v = tables.q2.value(q, a);
                r[node] += wj * (params.c1() * (gw[0] * d[0] + gw[1] * d[1]) + 4.0 * params.nu_r * w * v);
            }
        }
    }
    r
}

/// `2 a - b`.
pub fn extrapolate(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| 2.0 * x - y).collect()
}

/// `(3 phi_k - 4 phi_km1 + phi_km2) / 2`.
pub fn bdf2_difference(phi_k: &[f64], phi_km1: &[f64], phi_km2: &[f64]) -> Vec<f64> {
    phi_k
        .iter()
        .zip(phi_km1)
        .zip(phi_km2)
        .map(|((a, b), c)| 0.5 * (3.0 * a - 4.0 * b + c))
        .collect()
}

// ---------------------------------------------------------------------------
// Stability diagnostics

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimestepCheck {
    Ok,
    Violated { bound: f64 },
}

/// Sufficient BDF2 stability condition `tau <= j nu / (8 nu_r^2)`.
pub fn check_bdf2_timestep(params: &MaterialParams, tau: f64) -> TimestepCheck {
    let bound = bdf2_timestep_bound(params);
    if tau <= bound {
        TimestepCheck::Ok
    } else {
        TimestepCheck::Violated { bound }
    }
}

pub fn bdf2_timestep_bound(params: &MaterialParams) -> f64 {
    if params.nu_r == 0.0 {
        f64::INFINITY
    } else {
        params.j * params.nu / (8.0 * params.nu_r * params.nu_r)
    }
}

/// Norms of one step, as they enter the first-order energy inequality.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyRecord {
    pub k: usize,
    pub u_sq: f64,
    pub w_sq: f64,
    pub grad_u_sq: f64,
    pub grad_w_sq: f64,
    pub du_sq: f64,
    pub dw_sq: f64,
    /// `C_p^2 tau (||f||^2 / nu + ||g||^2 / c1)`.
    pub source: f64,
    /// Right minus left side of the inequality, when it applies.
    pub slack: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLog {
    pub records: Vec<EnergyRecord>,
}

impl EnergyLog {
    /// `||U||^2 + j ||W||^2` per record.
    pub fn kinetic(&self, j: f64) -> Vec<f64> {
        self.records.iter().map(|r| r.u_sq + j * r.w_sq).collect()
    }

    pub fn min_relative_slack(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.slack.map(|s| s / (r.u_sq + r.w_sq + r.source).max(f64::MIN_POSITIVE)))
            .reduce(f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub record: EnergyRecord,
}

impl EnergyCheck {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// Holds up to `rel_tol` relative to the right-hand side.
    pub fn holds(&self, rel_tol: f64) -> bool {
        self.slack() >= -rel_tol * self.rhs.abs()
    }
}

fn sq_norm(m: &CsrMatrix, x: &[f64]) -> f64 {
    m.bilinear(x, x).expect("vector length")
}

/// Norms of a state without the inequality.
pub fn energy_record(disc: &Discretization, prev: &TimeState, next: &TimeState) -> EnergyRecord {
    let ops = &disc.ops;
    let du: Vec<f64> = next.u.iter().zip(&prev.u).map(|(a, b)| a - b).collect();
    let dw: Vec<f64> = next.w.iter().zip(&prev.w).map(|(a, b)| a - b).collect();
    EnergyRecord {
        k: next.k,
        u_sq: sq_norm(&ops.mu, &next.u),
        w_sq: sq_norm(&ops.mw, &next.w),
        grad_u_sq: sq_norm(&ops.ku, &next.u),
        grad_w_sq: sq_norm(&ops.kw, &next.w),
        du_sq: sq_norm(&ops.mu, &du),
        dw_sq: sq_norm(&ops.mw, &dw),
        source: 0.0,
        slack: None,
    }
}

/// Checks the per-step energy inequality of the first-order scheme
/// (homogeneous Dirichlet data) with Poincare constant `diam(Omega)`:
///
/// ```text
/// ||U^k||^2 + (j + 4 nu_r tau) ||W^k||^2 + ||dU||^2 + j ||dW||^2
///   + tau nu ||grad U^k||^2 + tau c1 ||grad W^k||^2
///   <= ||U^{k-1}||^2 + (j + 4 nu_r tau) ||W^{k-1}||^2
///   + C_p^2 tau / nu ||f^k||^2 + C_p^2 tau / c1 ||g^k||^2
/// ```
///
/// `f_sq` and `g_sq` are the squared L2 norms of the sources at `t^k`.
pub fn energy_step_check(
    disc: &Discretization,
    prev: &TimeState,
    next: &TimeState,
    f_sq: f64,
    g_sq: f64,
    params: &MaterialParams,
    tau: f64,
) -> EnergyCheck {
    let mut rec = energy_record(disc, prev, next);
    let cp2 = disc.mesh.diameter().powi(2);
    let weighted = |x: f64, c: f64| if x == 0.0 { 0.0 } else { x / c };
    rec.source = cp2 * tau * (weighted(f_sq, params.nu) + weighted(g_sq, params.c1()));
    let ww = params.j + 4.0 * params.nu_r * tau;
    let lhs = rec.u_sq
        + ww * rec.w_sq
        + rec.du_sq
        + params.j * rec.dw_sq
        + tau * params.nu * rec.grad_u_sq
        + tau * params.c1() * rec.grad_w_sq;
    let rhs = sq_norm(&disc.ops.mu, &prev.u) + ww * sq_norm(&disc.ops.mw, &prev.w) + rec.source;
    rec.slack = Some(rhs - lhs);
    EnergyCheck { lhs, rhs, record: rec }
}

// ---------------------------------------------------------------------------
// Time loop

/// Where the run starts.
#[derive(Debug, Clone)]
pub enum InitialData<'e> {
    Rest,
    /// Projections of exact data; also used for the BDF2 start-up level.
    Exact(&'e ExactFields),
    /// A given state (and, for BDF2, its previous level if present).
    State(TimeState),
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub final_state: TimeState,
    pub energy: EnergyLog,
    pub max_divergence_residual: f64,
    pub max_pressure_mean: f64,
    pub timestep_warning: Option<TimestepCheck>,
}

/// Runs `grid.steps` steps, delivering `(k, t, U, W, P)` to `observer` for
/// the initial level and after every accepted step.
pub fn run(
    disc: &Discretization,
    problem: &Problem,
    scheme: SchemeKind,
    grid: &TimeGrid,
    initial: InitialData<'_>,
    mut observer: impl FnMut(usize, f64, &[f64], &[f64], &[f64]),
) -> Result<RunSummary> {
    let mut stepper = Stepper::new(disc, problem)?;
    let tau = grid.tau;
    let timestep_warning = match scheme {
        SchemeKind::Bdf2 => match check_bdf2_timestep(&problem.params, tau) {
            TimestepCheck::Ok => None,
            v => Some(v),
        },
        SchemeKind::FirstOrder => None,
    };

    let mut state = match &initial {
        InitialData::Rest => stepper.init_first_order(None, 0.0)?,
        InitialData::Exact(ex) => stepper.init_first_order(Some(ex), 0.0)?,
        InitialData::State(s) => s.clone(),
    };

    let enclosed = problem.bcs.velocity_enclosed() && problem.bcs.spin.iter().all(Prescription::is_dirichlet);
    let mut summary = RunSummary {
        final_state: state.clone(),
        energy: EnergyLog::default(),
        max_divergence_residual: 0.0,
        max_pressure_mean: 0.0,
        timestep_warning,
    };
    let track = |summary: &mut RunSummary, s: &TimeState| {
        summary.max_divergence_residual = summary.max_divergence_residual.max(disc.divergence_residual(&s.u));
        if enclosed {
            summary.max_pressure_mean = summary.max_pressure_mean.max(disc.pressure_mean(&s.p).abs());
        }
    };
    let rec0 = energy_record(disc, &state, &state);
    summary.energy.records.push(EnergyRecord {
        du_sq: 0.0,
        dw_sq: 0.0,
        ..rec0
    });
    observer(state.k, state.t, &state.u, &state.w, &state.p);

    for _ in 0..grid.steps {
        let next = match scheme {
            SchemeKind::FirstOrder => stepper.step_first_order(&state, tau)?,
            SchemeKind::Bdf2 if state.prev.is_none() => match &initial {
                InitialData::Exact(ex) => {
                    let t = state.t + tau;
                    let (u, p) = stepper.stokes_projection(ex, t).map_err(|e| e.at_step(1))?;
                    let w = stepper.elliptic_projection(ex, t).map_err(|e| e.at_step(1))?;
                    TimeState {
                        k: state.k + 1,
                        t,
                        u,
                        w,
                        p,
                        prev: Some(state.level()),
                    }
                }
                _ => stepper.step_first_order(&state, tau)?,
            },
            SchemeKind::Bdf2 => stepper.step_bdf2(&state, tau)?,
        };
        track(&mut summary, &next);

        let homogeneous = enclosed
            && disc.velocity_constraints(&problem.bcs, next.t).values.iter().all(|&v| v == 0.0)
            && disc.spin_constraints(&problem.bcs, next.t).values.iter().all(|&v| v == 0.0);
        let record = if scheme == SchemeKind::FirstOrder && homogeneous {
            let f_sq = problem
                .sources
                .f
                .as_ref()
                .map_or(0.0, |f| disc.fields.l2_norm_sq(&disc.mesh, &FieldFn::Vector(f.clone()), next.t));
            let g_sq = problem
                .sources
                .g
                .as_ref()
                .map_or(0.0, |g| disc.fields.l2_norm_sq(&disc.mesh, &FieldFn::Scalar(g.clone()), next.t));
            energy_step_check(disc, &state, &next, f_sq, g_sq, &problem.params, tau).record
        } else {
            energy_record(disc, &state, &next)
        };
        summary.energy.records.push(record);
        observer(next.k, next.t, &next.u, &next.w, &next.p);
        state = next;
    }
    summary.final_state = state;
    Ok(summary)
}
