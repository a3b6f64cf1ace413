//! Reference-element machinery on `[-1, 1]^2`: tensor Gauss-Legendre rules,
//! nodal Q1/Q2 Lagrange bases, global degree-of-freedom maps for the
//! Taylor-Hood pair and nodal interpolation of Dirichlet data.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryMarker, Mesh};

pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

/// Wraps a closure `(x, y, t) -> value` as a shareable scalar field.
pub fn scalar_fn(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> ScalarFn {
    Arc::new(f)
}

/// Wraps a closure `(x, y, t) -> [v1, v2]` as a shareable vector field.
pub fn vector_fn(f: impl Fn(f64, f64, f64) -> [f64; 2] + Send + Sync + 'static) -> VectorFn {
    Arc::new(f)
}

// ---------------------------------------------------------------------------
// Quadrature

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&[x, y], &w)| w * f(x, y))
            .sum()
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_q`.
pub fn gauss_legendre_1d(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; q];
    let mut weights = vec![0.0; q];
    for i in 0..q.div_ceil(2) {
        // Chebyshev-like initial guess, refined by Newton
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (q as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(q, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(q, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[q - 1 - i] = x;
        weights[i] = w;
        weights[q - 1 - i] = w;
    }
    if q % 2 == 1 {
        nodes[q / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Tensor Gauss rule with `q` points per direction, exact for degree `2q - 1`
/// in each variable.
pub fn gauss_rule(q: usize) -> Result<QuadratureRule> {
    if !(2..=5).contains(&q) {
        return Err(Error::UnsupportedQuadrature(q));
    }
    let (x, w) = gauss_legendre_1d(q);
    let mut points = Vec::with_capacity(q * q);
    let mut weights = Vec::with_capacity(q * q);
    for b in 0..q {
        for a in 0..q {
            points.push([x[a], x[b]]);
            weights.push(w[a] * w[b]);
        }
    }
    Ok(QuadratureRule { points, weights })
}

// ---------------------------------------------------------------------------
// Shape functions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeOrder {
    Q1,
    Q2,
}

impl ShapeOrder {
    pub fn n_1d(self) -> usize {
        match self {
            ShapeOrder::Q1 => 2,
            ShapeOrder::Q2 => 3,
        }
    }

    pub fn n_local(self) -> usize {
        self.n_1d() * self.n_1d()
    }

    /// Equispaced 1D nodes on `[-1, 1]`.
    pub fn nodes_1d(self) -> &'static [f64] {
        match self {
            ShapeOrder::Q1 => &[-1.0, 1.0],
            ShapeOrder::Q2 => &[-1.0, 0.0, 1.0],
        }
    }

    /// Reference coordinates of local node `k = a + n_1d * b`.
    pub fn node(self, k: usize) -> [f64; 2] {
        let n = self.n_1d();
        let nodes = self.nodes_1d();
        [nodes[k % n], nodes[k / n]]
    }
}

fn lagrange_1d(order: ShapeOrder, x: f64) -> ([f64; 3], [f64; 3]) {
    match order {
        ShapeOrder::Q1 => (
            [0.5 * (1.0 - x), 0.5 * (1.0 + x), 0.0],
            [-0.5, 0.5, 0.0],
        ),
        ShapeOrder::Q2 => (
            [0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)],
            [x - 0.5, -2.0 * x, x + 0.5],
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeValues {
    pub values: Vec<f64>,
    /// Gradients with respect to the reference coordinates.
    pub gradients: Vec<[f64; 2]>,
}

pub fn shape_eval(order: ShapeOrder, point: [f64; 2]) -> ShapeValues {
    let n = order.n_1d();
    let (vx, dx) = lagrange_1d(order, point[0]);
    let (vy, dy) = lagrange_1d(order, point[1]);
    let mut values = Vec::with_capacity(n * n);
    let mut gradients = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            values.push(vx[a] * vy[b]);
            gradients.push([dx[a] * vy[b], vx[a] * dy[b]]);
        }
    }
    ShapeValues { values, gradients }
}

/// Shape values and reference gradients tabulated at every point of a rule.
#[derive(Debug, Clone)]
pub struct ShapeTable {
    pub order: ShapeOrder,
    pub n_local: usize,
    /// `values[p * n_local + i]`
    pub values: Vec<f64>,
    /// `gradients[p * n_local + i]`, reference coordinates.
    pub gradients: Vec<[f64; 2]>,
}

impl ShapeTable {
    pub fn new(order: ShapeOrder, rule: &QuadratureRule) -> Self {
        let n_local = order.n_local();
        let mut values = Vec::with_capacity(rule.len() * n_local);
        let mut gradients = Vec::with_capacity(rule.len() * n_local);
        for &p in &rule.points {
            let s = shape_eval(order, p);
            values.extend(s.values);
            gradients.extend(s.gradients);
        }
        Self {
            order,
            n_local,
            values,
            gradients,
        }
    }

    #[inline]
    pub fn value(&self, point: usize, i: usize) -> f64 {
        self.values[point * self.n_local + i]
    }

    #[inline]
    pub fn gradient(&self, point: usize, i: usize) -> [f64; 2] {
        self.gradients[point * self.n_local + i]
    }
}

/// Affine map of one axis-aligned rectangular cell.
#[derive(Debug, Clone, Copy)]
pub struct CellGeometry {
    pub origin: [f64; 2],
    pub hx: f64,
    pub hy: f64,
}

impl CellGeometry {
    pub fn of(mesh: &Mesh, cell: usize) -> Self {
        Self {
            origin: mesh.cell_origin(cell),
            hx: mesh.hx(),
            hy: mesh.hy(),
        }
    }

    #[inline]
    pub fn map(&self, reference: [f64; 2]) -> [f64; 2] {
        [
            self.origin[0] + 0.5 * (reference[0] + 1.0) * self.hx,
            self.origin[1] + 0.5 * (reference[1] + 1.0) * self.hy,
        ]
    }

    #[inline]
    pub fn det_jacobian(&self) -> f64 {
        0.25 * self.hx * self.hy
    }

    /// Physical gradient from a reference gradient.
    #[inline]
    pub fn push_gradient(&self, g: [f64; 2]) -> [f64; 2] {
        [2.0 * g[0] / self.hx, 2.0 * g[1] / self.hy]
    }
}

// ---------------------------------------------------------------------------
// Degree-of-freedom maps

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    /// Two-component Q2, component-blocked: all `u1` dofs, then all `u2` dofs.
    Velocity,
    /// Scalar Q2.
    Spin,
    /// Scalar Q1.
    Pressure,
}

impl FieldKind {
    pub fn order(self) -> ShapeOrder {
        match self {
            FieldKind::Velocity | FieldKind::Spin => ShapeOrder::Q2,
            FieldKind::Pressure => ShapeOrder::Q1,
        }
    }

    pub fn n_components(self) -> usize {
        match self {
            FieldKind::Velocity => 2,
            FieldKind::Spin | FieldKind::Pressure => 1,
        }
    }
}

/// Nodal numbering on the lattice of Lagrange nodes of a structured mesh.
///
/// Node `(I, J)` of the `(px*nx + 1) x (px*ny + 1)` lattice (`px` = polynomial
/// degree) gets index `J * (px*nx + 1) + I`; component `c` of node `n` is dof
/// `c * n_nodes + n`.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub field: FieldKind,
    pub n_nodes: usize,
    pub n_dofs: usize,
    /// Scalar node indices of each cell, in local order (`n_local` per cell).
    pub cell_nodes: Vec<usize>,
    pub n_local: usize,
    pub node_coords: Vec<[f64; 2]>,
    /// Dofs (all components) on each side, indexed by [`BoundaryMarker::index`].
    pub boundary_dofs: [Vec<usize>; 4],
}

pub fn build_dof_map(mesh: &Mesh, field: FieldKind) -> DofMap {
    let order = field.order();
    let degree = order.n_1d() - 1;
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let (lx, ly) = (degree * nx + 1, degree * ny + 1);
    let n_nodes = lx * ly;
    let n_comp = field.n_components();
    let n_local = order.n_local();

    let mut node_coords = Vec::with_capacity(n_nodes);
    for jj in 0..ly {
        for ii in 0..lx {
            node_coords.push([
                mesh.config.length_x * ii as f64 / (lx - 1) as f64,
                mesh.config.length_y * jj as f64 / (ly - 1) as f64,
            ]);
        }
    }

    let mut cell_nodes = Vec::with_capacity(mesh.n_cells() * n_local);
    for cell in 0..mesh.n_cells() {
        let (i, j) = mesh.cell_ij(cell);
        for b in 0..=degree {
            for a in 0..=degree {
                cell_nodes.push((degree * j + b) * lx + degree * i + a);
            }
        }
    }

    let mut boundary_dofs: [Vec<usize>; 4] = Default::default();
    for (node, &[x, y]) in node_coords.iter().enumerate() {
        for marker in mesh.markers_at(x, y) {
            for c in 0..n_comp {
                boundary_dofs[marker.index()].push(c * n_nodes + node);
            }
        }
    }
    for list in &mut boundary_dofs {
        list.sort_unstable();
    }

    DofMap {
        field,
        n_nodes,
        n_dofs: n_comp * n_nodes,
        cell_nodes,
        n_local,
        node_coords,
        boundary_dofs,
    }
}

impl DofMap {
    #[inline]
    pub fn cell(&self, cell: usize) -> &[usize] {
        &self.cell_nodes[cell * self.n_local..(cell + 1) * self.n_local]
    }

    pub fn n_cells(&self) -> usize {
        self.cell_nodes.len() / self.n_local
    }

    /// Scalar node and component of a dof.
    pub fn node_of(&self, dof: usize) -> (usize, usize) {
        (dof % self.n_nodes, dof / self.n_nodes)
    }

    /// All boundary dofs, sorted and deduplicated.
    pub fn all_boundary_dofs(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.boundary_dofs.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    /// Nodal interpolant of a scalar function (scalar maps only).
    pub fn interpolate_scalar(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        assert_eq!(self.field.n_components(), 1, "scalar interpolation of a vector map");
        self.node_coords.iter().map(|&[x, y]| f(x, y)).collect()
    }

    /// Nodal interpolant of a vector function (velocity map only).
    pub fn interpolate_vector(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> Vec<f64> {
        assert_eq!(self.field.n_components(), 2, "vector interpolation of a scalar map");
        let mut out = vec![0.0; self.n_dofs];
        for (n, &[x, y]) in self.node_coords.iter().enumerate() {
            let v = f(x, y);
            out[n] = v[0];
            out[self.n_nodes + n] = v[1];
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Boundary data

pub enum Prescription<F> {
    Dirichlet(F),
    Natural,
}

impl<F: Clone> Clone for Prescription<F> {
    fn clone(&self) -> Self {
        match self {
            Prescription::Dirichlet(f) => Prescription::Dirichlet(f.clone()),
            Prescription::Natural => Prescription::Natural,
        }
    }
}

impl<F> std::fmt::Debug for Prescription<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Prescription::Dirichlet(_) => f.write_str("Dirichlet(..)"),
            Prescription::Natural => f.write_str("Natural"),
        }
    }
}

impl<F> Prescription<F> {
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, Prescription::Dirichlet(_))
    }
}

/// One prescription per side for velocity and spin, indexed by
/// [`BoundaryMarker::index`]. Pressure is never constrained on the boundary.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub velocity: [Prescription<VectorFn>; 4],
    pub spin: [Prescription<ScalarFn>; 4],
}

impl BoundaryData {
    /// Homogeneous Dirichlet data for both fields on every side.
    pub fn no_slip() -> Self {
        let zero_v = vector_fn(|_, _, _| [0.0, 0.0]);
        let zero_s = scalar_fn(|_, _, _| 0.0);
        Self::dirichlet_everywhere(zero_v, zero_s)
    }

    pub fn dirichlet_everywhere(velocity: VectorFn, spin: ScalarFn) -> Self {
        Self {
            velocity: std::array::from_fn(|_| Prescription::Dirichlet(velocity.clone())),
            spin: std::array::from_fn(|_| Prescription::Dirichlet(spin.clone())),
        }
    }

    pub fn set_velocity(&mut self, marker: BoundaryMarker, p: Prescription<VectorFn>) {
        self.velocity[marker.index()] = p;
    }

    pub fn set_spin(&mut self, marker: BoundaryMarker, p: Prescription<ScalarFn>) {
        self.spin[marker.index()] = p;
    }

    /// True if every side carries a Dirichlet velocity condition.
    pub fn velocity_enclosed(&self) -> bool {
        self.velocity.iter().all(Prescription::is_dirichlet)
    }
}

/// Constrained dofs of one field and the values prescribed at a given time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Constraints {
    /// Sorted, unique.
    pub dofs: Vec<usize>,
    pub values: Vec<f64>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        self.dofs.is_empty()
    }

    /// Dense mask of constrained dofs.
    pub fn mask(&self, n: usize) -> Vec<bool> {
        let mut m = vec![false; n];
        for &d in &self.dofs {
            m[d] = true;
        }
        m
    }

    /// Overwrites the constrained entries of `x`.
    pub fn impose(&self, x: &mut [f64]) {
        for (&d, &v) in self.dofs.iter().zip(&self.values) {
            x[d] = v;
        }
    }
}

/// Prescriptions per side for one field, as seen by interpolation.
pub enum FieldPrescriptions<'a> {
    Vector(&'a [Prescription<VectorFn>; 4]),
    Scalar(&'a [Prescription<ScalarFn>; 4]),
}

/// Nodal interpolation of Dirichlet data at time `t`. A node on two sides takes
/// the first Dirichlet prescription in marker order.
pub fn interpolate_boundary(
    dofmap: &DofMap,
    prescriptions: FieldPrescriptions<'_>,
    t: f64,
) -> Constraints {
    let mut per_node: Vec<(usize, usize)> = Vec::new(); // (node, marker)
    for marker in BoundaryMarker::ALL {
        let dirichlet = match &prescriptions {
            FieldPrescriptions::Vector(p) => p[marker.index()].is_dirichlet(),
            FieldPrescriptions::Scalar(p) => p[marker.index()].is_dirichlet(),
        };
        if !dirichlet {
            continue;
        }
        for &dof in &dofmap.boundary_dofs[marker.index()] {
            let (node, comp) = dofmap.node_of(dof);
            if comp == 0 {
                per_node.push((node, marker.index()));
            }
        }
    }
    per_node.sort_unstable();
    per_node.dedup_by_key(|(node, _)| *node);

    let n_comp = dofmap.field.n_components();
    let mut pairs: Vec<(usize, f64)> = Vec::with_capacity(per_node.len() * n_comp);
    for &(node, marker) in &per_node {
        let [x, y] = dofmap.node_coords[node];
        match &prescriptions {
            FieldPrescriptions::Vector(p) => {
                if let Prescription::Dirichlet(f) = &p[marker] {
                    let v = f(x, y, t);
                    pairs.push((node, v[0]));
                    pairs.push((dofmap.n_nodes + node, v[1]));
                }
            }
            FieldPrescriptions::Scalar(p) => {
                if let Prescription::Dirichlet(f) = &p[marker] {
                    pairs.push((node, f(x, y, t)));
                }
            }
        }
    }
    pairs.sort_unstable_by_key(|&(d, _)| d);
    let (dofs, values) = pairs.into_iter().unzip();
    Constraints { dofs, values }
}
