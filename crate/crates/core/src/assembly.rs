//! Weak-form operators on the Q2/Q1 spaces.
//!
//! All matrices are assembled with unit coefficients unless a coefficient is
//! an explicit argument; material constants are applied where the operators
//! are combined into the time-stepping systems.
//!
//! Row index = test function, column index = trial function.

use crate::error::Result;
use crate::fem::{
    gauss_rule, CellGeometry, DofMap, FieldKind, QuadratureRule, ScalarFn, ShapeOrder, ShapeTable,
    VectorFn,
};
use crate::mesh::Mesh;
use crate::sparse::{from_triplets, CsrMatrix, Triplets};

/// Gauss points per direction for bilinear forms with constant coefficients.
pub const Q_BILINEAR: usize = 3;
/// Gauss points per direction wherever a discrete or analytic field enters.
pub const Q_FIELD: usize = 4;

/// Source or exact-solution callback.
#[derive(Clone)]
pub enum FieldFn {
    Scalar(ScalarFn),
    Vector(VectorFn),
}

impl std::fmt::Debug for FieldFn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldFn::Scalar(_) => f.write_str("FieldFn::Scalar(..)"),
            FieldFn::Vector(_) => f.write_str("FieldFn::Vector(..)"),
        }
    }
}

/// Quadrature rule with Q1 and Q2 tables on it.
#[derive(Debug, Clone)]
pub struct Tables {
    pub rule: QuadratureRule,
    pub q1: ShapeTable,
    pub q2: ShapeTable,
}

impl Tables {
    pub fn new(q: usize) -> Self {
        let rule = gauss_rule(q).expect("supported quadrature order");
        let q1 = ShapeTable::new(ShapeOrder::Q1, &rule);
        let q2 = ShapeTable::new(ShapeOrder::Q2, &rule);
        Self { rule, q1, q2 }
    }

    pub fn table(&self, order: ShapeOrder) -> &ShapeTable {
        match order {
            ShapeOrder::Q1 => &self.q1,
            ShapeOrder::Q2 => &self.q2,
        }
    }
}

// ---------------------------------------------------------------------------
// Element kernels (dense, row-major `n_local x n_local`)

pub fn element_mass(geo: &CellGeometry, table: &ShapeTable, rule: &QuadratureRule) -> Vec<f64> {
    let n = table.n_local;
    let mut m = vec![0.0; n * n];
    for (p, &w) in rule.weights.iter().enumerate() {
        let wj = w * geo.det_jacobian();
        for i in 0..n {
            let vi = table.value(p, i) * wj;
            for j in 0..n {
                m[i * n + j] += vi * table.value(p, j);
            }
        }
    }
    m
}

pub fn element_stiffness(geo: &CellGeometry, table: &ShapeTable, rule: &QuadratureRule) -> Vec<f64> {
    let n = table.n_local;
    let mut k = vec![0.0; n * n];
    let mut grads = vec![[0.0; 2]; n];
    for (p, &w) in rule.weights.iter().enumerate() {
        let wj = w * geo.det_jacobian();
        for (i, g) in grads.iter_mut().enumerate() {
            *g = geo.push_gradient(table.gradient(p, i));
        }
        for i in 0..n {
            for j in 0..n {
                k[i * n + j] += wj * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
            }
        }
    }
    k
}

/// `(psi_q, d phi_a / dx_c)` for pressure test `q`, velocity node `a`,
/// component `c`. Returned as `[c][q * 9 + a]`.
pub fn element_div(geo: &CellGeometry, tables: &Tables) -> [Vec<f64>; 2] {
    let (q1, q2) = (&tables.q1, &tables.q2);
    let mut out = [vec![0.0; 4 * 9], vec![0.0; 4 * 9]];
    for (p, &w) in tables.rule.weights.iter().enumerate() {
        let wj = w * geo.det_jacobian();
        for a in 0..9 {
            let g = geo.push_gradient(q2.gradient(p, a));
            for q in 0..4 {
                let psi = q1.value(p, q) * wj;
                out[0][q * 9 + a] += psi * g[0];
                out[1][q * 9 + a] += psi * g[1];
            }
        }
    }
    out
}

/// Curl couplings between velocity node `a` (component `c`) and spin node `b`:
/// `rwu[c][a * 9 + b] = (curl psi_b, phi_a e_c)` with `curl psi = (d_y psi, -d_x psi)`,
/// `ruw[c][b * 9 + a] = (psi_b, curl (phi_a e_c))` with `curl v = d_x v2 - d_y v1`.
pub fn element_curl(geo: &CellGeometry, table: &ShapeTable, rule: &QuadratureRule) -> ([Vec<f64>; 2], [Vec<f64>; 2]) {
    let mut rwu = [vec![0.0; 81], vec![0.0; 81]];
    let mut ruw = [vec![0.0; 81], vec![0.0; 81]];
    for (p, &w) in rule.weights.iter().enumerate() {
        let wj = w * geo.det_jacobian();
        for a in 0..9 {
            let phi = table.value(p, a);
            let ga = geo.push_gradient(table.gradient(p, a));
            for b in 0..9 {
                let psi = table.value(p, b);
                let gb = geo.push_gradient(table.gradient(p, b));
                rwu[0][a * 9 + b] += wj * gb[1] * phi;
                rwu[1][a * 9 + b] -= wj * gb[0] * phi;
                ruw[0][b * 9 + a] -= wj * psi * ga[1];
                ruw[1][b * 9 + a] += wj * psi * ga[0];
            }
        }
    }
    (rwu, ruw)
}

/// Skew-symmetrized convection on one cell for the scalar Q2 basis:
/// `c[i * 9 + j] = (u . grad phi_j, phi_i) + 1/2 (div u, phi_j phi_i)`,
/// with `u` given by its local Q2 nodal values.
pub fn element_convection(
    geo: &CellGeometry,
    table: &ShapeTable,
    rule: &QuadratureRule,
    u1: &[f64; 9],
    u2: &[f64; 9],
) -> [f64; 81] {
    let mut c = [0.0; 81];
    let mut grads = [[0.0; 2]; 9];
    for (p, &w) in rule.weights.iter().enumerate() {
        let wj = w * geo.det_jacobian();
        let (mut ux, mut uy, mut div) = (0.0, 0.0, 0.0);
        for a in 0..9 {
            let v = table.value(p, a);
            let g = geo.push_gradient(table.gradient(p, a));
            grads[a] = g;
            ux += u1[a] * v;
            uy += u2[a] * v;
            div += u1[a] * g[0] + u2[a] * g[1];
        }
        for i in 0..9 {
            let vi = table.value(p, i) * wj;
            for j in 0..9 {
                let adv = ux * grads[j][0] + uy * grads[j][1];
                c[i * 9 + j] += vi * (adv + 0.5 * div * table.value(p, j));
            }
        }
    }
    c
}

// ---------------------------------------------------------------------------
// Global assembly

fn scatter_scalar(t: &mut Triplets, map: &DofMap, cell: usize, ke: &[f64], offset: usize, scale: f64) {
    let nodes = map.cell(cell);
    let n = nodes.len();
    for (i, &gi) in nodes.iter().enumerate() {
        for (j, &gj) in nodes.iter().enumerate() {
            t.push(offset + gi, offset + gj, scale * ke[i * n + j]);
        }
    }
}

/// Galerkin L2 mass; block diagonal for the velocity map.
pub fn assemble_mass(mesh: &Mesh, map: &DofMap) -> Result<CsrMatrix> {
    let tables = Tables::new(Q_BILINEAR);
    let table = tables.table(map.field.order());
    let nl = map.n_local;
    let mut t = Triplets::with_capacity(map.n_dofs, map.n_dofs, mesh.n_cells() * nl * nl * map.field.n_components());
    for cell in 0..mesh.n_cells() {
        let me = element_mass(&CellGeometry::of(mesh, cell), table, &tables.rule);
        for c in 0..map.field.n_components() {
            scatter_scalar(&mut t, map, cell, &me, c * map.n_nodes, 1.0);
        }
    }
    from_triplets(&t)
}

/// `coefficient * (grad u, grad v)`, componentwise for the velocity map.
pub fn assemble_stiffness(mesh: &Mesh, map: &DofMap, coefficient: f64) -> Result<CsrMatrix> {
    let tables = Tables::new(Q_BILINEAR);
    let table = tables.table(map.field.order());
    let nl = map.n_local;
    let mut t = Triplets::with_capacity(map.n_dofs, map.n_dofs, mesh.n_cells() * nl * nl * map.field.n_components());
    for cell in 0..mesh.n_cells() {
        let ke = element_stiffness(&CellGeometry::of(mesh, cell), table, &tables.rule);
        for c in 0..map.field.n_components() {
            scatter_scalar(&mut t, map, cell, &ke, c * map.n_nodes, coefficient);
        }
    }
    from_triplets(&t)
}

/// `B[q, v] = (psi_q, div phi_v)`, pressure rows by velocity columns.
pub fn assemble_div(mesh: &Mesh, velocity: &DofMap, pressure: &DofMap) -> Result<CsrMatrix> {
    assert_eq!(velocity.field, FieldKind::Velocity);
    assert_eq!(pressure.field, FieldKind::Pressure);
    let tables = Tables::new(Q_BILINEAR);
    let mut t = Triplets::with_capacity(pressure.n_dofs, velocity.n_dofs, mesh.n_cells() * 72);
    for cell in 0..mesh.n_cells() {
        let be = element_div(&CellGeometry::of(mesh, cell), &tables);
        let vn = velocity.cell(cell);
        let pn = pressure.cell(cell);
        for (c, block) in be.iter().enumerate() {
            for (q, &gq) in pn.iter().enumerate() {
                for (a, &ga) in vn.iter().enumerate() {
                    t.push(gq, c * velocity.n_nodes + ga, block[q * 9 + a]);
                }
            }
        }
    }
    from_triplets(&t)
}

/// `(Rwu, Ruw)` with `Rwu[v, w] = (curl w, v)` and `Ruw[w, v] = (curl v, w)`.
pub fn assemble_curl_coupling(mesh: &Mesh, velocity: &DofMap, spin: &DofMap) -> Result<(CsrMatrix, CsrMatrix)> {
    assert_eq!(velocity.field, FieldKind::Velocity);
    assert_eq!(spin.field, FieldKind::Spin);
    let tables = Tables::new(Q_BILINEAR);
    let mut trwu = Triplets::with_capacity(velocity.n_dofs, spin.n_dofs, mesh.n_cells() * 162);
    let mut truw = Triplets::with_capacity(spin.n_dofs, velocity.n_dofs, mesh.n_cells() * 162);
    for cell in 0..mesh.n_cells() {
        let (rwu, ruw) = element_curl(&CellGeometry::of(mesh, cell), &tables.q2, &tables.rule);
        let vn = velocity.cell(cell);
        let sn = spin.cell(cell);
        for c in 0..2 {
            for (a, &ga) in vn.iter().enumerate() {
                for (b, &gb) in sn.iter().enumerate() {
                    let vdof = c * velocity.n_nodes + ga;
                    trwu.push(vdof, gb, rwu[c][a * 9 + b]);
                    truw.push(gb, vdof, ruw[c][b * 9 + a]);
                }
            }
        }
    }
    Ok((from_triplets(&trwu)?, from_triplets(&truw)?))
}

/// `(1, psi_q)` for every pressure basis function; `r . p = integral of p_h`.
pub fn assemble_mean_weights(mesh: &Mesh, pressure: &DofMap) -> Vec<f64> {
    let tables = Tables::new(Q_BILINEAR);
    let table = tables.table(pressure.field.order());
    let mut r = vec![0.0; pressure.n_dofs];
    for cell in 0..mesh.n_cells() {
        let geo = CellGeometry::of(mesh, cell);
        for (p, &w) in tables.rule.weights.iter().enumerate() {
            for (i, &g) in pressure.cell(cell).iter().enumerate() {
                r[g] += w * geo.det_jacobian() * table.value(p, i);
            }
        }
    }
    r
}

/// Local Q2 nodal values of a velocity vector on a cell.
pub fn local_velocity(velocity: &DofMap, u: &[f64], cell: usize) -> ([f64; 9], [f64; 9]) {
    let mut u1 = [0.0; 9];
    let mut u2 = [0.0; 9];
    for (a, &n) in velocity.cell(cell).iter().enumerate() {
        u1[a] = u[n];
        u2[a] = u[velocity.n_nodes + n];
    }
    (u1, u2)
}

/// Fixed sparsity pattern of a scalar Q2 (or Q1) operator together with the
/// value slot of every local element entry, so repeated assembly is a scatter.
#[derive(Debug, Clone)]
pub struct ScalarPattern {
    pub pattern: CsrMatrix,
    /// `slots[cell * n_local^2 + i * n_local + j]`
    pub slots: Vec<usize>,
    pub n_local: usize,
}

impl ScalarPattern {
    pub fn new(mesh: &Mesh, map: &DofMap) -> Result<Self> {
        let nl = map.n_local;
        let mut t = Triplets::with_capacity(map.n_nodes, map.n_nodes, mesh.n_cells() * nl * nl);
        for cell in 0..mesh.n_cells() {
            for &gi in map.cell(cell) {
                for &gj in map.cell(cell) {
                    t.push(gi, gj, 0.0);
                }
            }
        }
        let pattern = from_triplets(&t)?;
        let mut slots = Vec::with_capacity(mesh.n_cells() * nl * nl);
        for cell in 0..mesh.n_cells() {
            for &gi in map.cell(cell) {
                for &gj in map.cell(cell) {
                    slots.push(pattern.position(gi, gj).expect("entry in pattern"));
                }
            }
        }
        Ok(Self {
            pattern,
            slots,
            n_local: nl,
        })
    }
}

/// Assembles convection and load terms that depend on discrete or analytic
/// fields, reusing quadrature tables and the scalar Q2 pattern.
#[derive(Debug, Clone)]
pub struct FieldAssembler {
    pub tables: Tables,
    pub scalar_q2: ScalarPattern,
}

impl FieldAssembler {
    pub fn new(mesh: &Mesh, spin: &DofMap) -> Result<Self> {
        Ok(Self {
            tables: Tables::new(Q_FIELD),
            scalar_q2: ScalarPattern::new(mesh, spin)?,
        })
    }

    /// Scalar Q2 convection `b_h(u_adv, phi_j, phi_i) * weight` on the scalar
    /// pattern (indexing by scalar node).
    pub fn convection_scalar(&self, mesh: &Mesh, velocity: &DofMap, u_adv: &[f64], weight: f64) -> CsrMatrix {
        let mut m = self.scalar_q2.pattern.clone();
        self.convection_values(mesh, velocity, u_adv, weight, &mut m.values);
        m
    }

    /// Writes the convection values into `values` (laid out as the scalar pattern).
    pub fn convection_values(&self, mesh: &Mesh, velocity: &DofMap, u_adv: &[f64], weight: f64, values: &mut [f64]) {
        values.iter_mut().for_each(|v| *v = 0.0);
        if weight == 0.0 {
            return;
        }
        for cell in 0..mesh.n_cells() {
            let (u1, u2) = local_velocity(velocity, u_adv, cell);
            if u1.iter().chain(&u2).all(|&v| v == 0.0) {
                continue;
            }
            let ce = element_convection(&CellGeometry::of(mesh, cell), &self.tables.q2, &self.tables.rule, &u1, &u2);
            let slots = &self.scalar_q2.slots[cell * 81..(cell + 1) * 81];
            for (slot, v) in slots.iter().zip(ce.iter()) {
                values[*slot] += weight * v;
            }
        }
    }

    /// Load vector `(f(., t), phi)` on either map.
    pub fn load(&self, mesh: &Mesh, map: &DofMap, f: &FieldFn, t: f64) -> Vec<f64> {
        let table = self.tables.table(map.field.order());
        let mut out = vec![0.0; map.n_dofs];
        for cell in 0..mesh.n_cells() {
            let geo = CellGeometry::of(mesh, cell);
            let nodes = map.cell(cell);
            for (p, &w) in self.tables.rule.weights.iter().enumerate() {
                let [x, y] = geo.map(self.tables.rule.points[p]);
                let wj = w * geo.det_jacobian();
                match f {
                    FieldFn::Scalar(g) => {
                        let v = g(x, y, t) * wj;
                        for (i, &n) in nodes.iter().enumerate() {
                            out[n] += v * table.value(p, i);
                        }
                    }
                    FieldFn::Vector(g) => {
                        let v = g(x, y, t);
                        let stride = map.n_nodes;
                        for (i, &n) in nodes.iter().enumerate() {
                            let s = table.value(p, i) * wj;
                            out[n] += v[0] * s;
                            if map.field.n_components() == 2 {
                                out[stride + n] += v[1] * s;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// `||f(., t)||_{L2}^2` by quadrature.
    pub fn l2_norm_sq(&self, mesh: &Mesh, f: &FieldFn, t: f64) -> f64 {
        let mut s = 0.0;
        for cell in 0..mesh.n_cells() {
            let geo = CellGeometry::of(mesh, cell);
            for (p, &w) in self.tables.rule.weights.iter().enumerate() {
                let [x, y] = geo.map(self.tables.rule.points[p]);
                let v = match f {
                    FieldFn::Scalar(g) => g(x, y, t).powi(2),
                    FieldFn::Vector(g) => {
                        let v = g(x, y, t);
                        v[0] * v[0] + v[1] * v[1]
                    }
                };
                s += w * geo.det_jacobian() * v;
            }
        }
        s
    }
}

/// Convection matrix on a target map: the scalar operator for the spin map,
/// its block-diagonal copy for the velocity map.
pub fn assemble_convection(mesh: &Mesh, target: &DofMap, velocity: &DofMap, u_adv: &[f64], weight: f64) -> Result<CsrMatrix> {
    let spin_like = crate::fem::build_dof_map(mesh, FieldKind::Spin);
    let fa = FieldAssembler::new(mesh, &spin_like)?;
    let cs = fa.convection_scalar(mesh, velocity, u_adv, weight);
    match target.field {
        FieldKind::Spin => Ok(cs),
        FieldKind::Velocity => {
            let n = target.n_nodes;
            let mut t = Triplets::with_capacity(2 * n, 2 * n, 2 * cs.nnz());
            t.push_block(&cs, 0, 0, 1.0);
            t.push_block(&cs, n, n, 1.0);
            from_triplets(&t)
        }
        FieldKind::Pressure => Err(crate::error::Error::InvalidInput(
            "convection is not defined on the pressure space".into(),
        )),
    }
}

/// Load vector via Q_FIELD quadrature.
pub fn assemble_load(mesh: &Mesh, map: &DofMap, f: &FieldFn, t: f64) -> Result<Vec<f64>> {
    let spin_like = crate::fem::build_dof_map(mesh, FieldKind::Spin);
    Ok(FieldAssembler::new(mesh, &spin_like)?.load(mesh, map, f, t))
}

/// Operators that do not depend on the advecting field, assembled once per
/// mesh with unit coefficients.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    /// Velocity mass (block diagonal).
    pub mu: CsrMatrix,
    /// Velocity vector stiffness `(grad u, grad v)`.
    pub ku: CsrMatrix,
    /// `(q, div v)`, pressure rows.
    pub b: CsrMatrix,
    pub mw: CsrMatrix,
    pub kw: CsrMatrix,
    /// `(curl w, v)`, velocity rows.
    pub rwu: CsrMatrix,
    /// `(curl u, omega)`, spin rows.
    pub ruw: CsrMatrix,
    /// Pressure mass, used for pressure norms.
    pub mp: CsrMatrix,
    /// `(1, psi_q)`.
    pub mean_weights: Vec<f64>,
}

impl OperatorSet {
    pub fn assemble(mesh: &Mesh, velocity: &DofMap, spin: &DofMap, pressure: &DofMap) -> Result<Self> {
        let (rwu, ruw) = assemble_curl_coupling(mesh, velocity, spin)?;
        Ok(Self {
            mu: assemble_mass(mesh, velocity)?,
            ku: assemble_stiffness(mesh, velocity, 1.0)?,
            b: assemble_div(mesh, velocity, pressure)?,
            mw: assemble_mass(mesh, spin)?,
            kw: assemble_stiffness(mesh, spin, 1.0)?,
            rwu,
            ruw,
            mp: assemble_mass(mesh, pressure)?,
            mean_weights: assemble_mean_weights(mesh, pressure),
        })
    }
}
