//! Dense reference implementation of the discrete operators and time steps.
//!
//! Shares only the node numbering with the library: node `(I, J)` of a
//! degree-`d` lattice is `J * (d * nx + 1) + I`, vector dofs are
//! `component * n_nodes + node`.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub mod steps;

/// Gauss-Legendre nodes and weights on `[0, 1]` via Golub-Welsch.
pub fn gauss_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let kf = k as f64;
        let b = kf / (4.0 * kf * kf - 1.0).sqrt();
        j[(k - 1, k)] = b;
        j[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (0.5 * (eig.eigenvalues[i] + 1.0), v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Lagrange polynomial `a` on nodes `xs` and its derivative at `x`.
fn lagrange(xs: &[f64], a: usize, x: f64) -> (f64, f64) {
    let mut value = 1.0;
    for (m, &xm) in xs.iter().enumerate() {
        if m != a {
            value *= (x - xm) / (xs[a] - xm);
        }
    }
    let mut deriv = 0.0;
    for (m, &xm) in xs.iter().enumerate() {
        if m == a {
            continue;
        }
        let mut term = 1.0 / (xs[a] - xm);
        for (n, &xn) in xs.iter().enumerate() {
            if n != a && n != m {
                term *= (x - xn) / (xs[a] - xn);
            }
        }
        deriv += term;
    }
    (value, deriv)
}

/// Basis functions of one degree that are nonzero on a cell, evaluated at a point.
pub struct Local {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Self {
        Self { nx, ny, lx, ly }
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn n_nodes(&self, deg: usize) -> usize {
        (deg * self.nx + 1) * (deg * self.ny + 1)
    }

    pub fn coords(&self, deg: usize, node: usize) -> [f64; 2] {
        let w = deg * self.nx + 1;
        let (ii, jj) = (node % w, node / w);
        [
            ii as f64 * self.hx() / deg as f64,
            jj as f64 * self.hy() / deg as f64,
        ]
    }

    pub fn on_boundary(&self, deg: usize, node: usize) -> bool {
        let w = deg * self.nx + 1;
        let (ii, jj) = (node % w, node / w);
        ii == 0 || jj == 0 || ii == deg * self.nx || jj == deg * self.ny
    }

    /// On the walls `y = 0` or `y = ly` only.
    pub fn on_wall(&self, deg: usize, node: usize) -> bool {
        let w = deg * self.nx + 1;
        let jj = node / w;
        jj == 0 || jj == deg * self.ny
    }

    pub fn local(&self, deg: usize, cell: (usize, usize), x: f64, y: f64) -> Local {
        let (i, j) = cell;
        let (hx, hy) = (self.hx(), self.hy());
        let xs: Vec<f64> = (0..=deg).map(|a| i as f64 * hx + a as f64 * hx / deg as f64).collect();
        let ys: Vec<f64> = (0..=deg).map(|b| j as f64 * hy + b as f64 * hy / deg as f64).collect();
        let w = deg * self.nx + 1;
        let mut out = Local {
            nodes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
        };
        for b in 0..=deg {
            let (vy, dy) = lagrange(&ys, b, y);
            for a in 0..=deg {
                let (vx, dx) = lagrange(&xs, a, x);
                out.nodes.push((deg * j + b) * w + deg * i + a);
                out.values.push(vx * vy);
                out.grads.push([dx * vy, vx * dy]);
            }
        }
        out
    }

    /// `(cell, x, y, weight)` for a tensor Gauss rule with `q` points per direction.
    pub fn quadrature(&self, q: usize) -> Vec<((usize, usize), f64, f64, f64)> {
        let (gx, gw) = gauss_01(q);
        let (hx, hy) = (self.hx(), self.hy());
        let mut out = Vec::new();
        for j in 0..self.ny {
            for i in 0..self.nx {
                for (py, wy) in gx.iter().zip(&gw) {
                    for (px, wx) in gx.iter().zip(&gw) {
                        out.push(((i, j), (i as f64 + px) * hx, (j as f64 + py) * hy, wx * wy * hx * hy));
                    }
                }
            }
        }
        out
    }
}

const Q: usize = 5;

/// Values of a Q2 vector field (`2 n2` coefficients) at a point.
fn eval_vector(grid: &Grid, u: &[f64], cell: (usize, usize), x: f64, y: f64) -> ([f64; 2], f64) {
    let n2 = grid.n_nodes(2);
    let l = grid.local(2, cell, x, y);
    let (mut v, mut div) = ([0.0; 2], 0.0);
    for (k, &node) in l.nodes.iter().enumerate() {
        v[0] += u[node] * l.values[k];
        v[1] += u[n2 + node] * l.values[k];
        div += u[node] * l.grads[k][0] + u[n2 + node] * l.grads[k][1];
    }
    (v, div)
}

pub struct DenseOps {
    pub grid: Grid,
    /// Scalar Q2 mass and stiffness.
    pub m2: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    /// Q1 mass.
    pub m1: DMatrix<f64>,
    /// `(psi_q, div v)`.
    pub b: DMatrix<f64>,
    /// `(curl w, v)` with `curl w = (w_y, -w_x)`.
    pub rwu: DMatrix<f64>,
    /// `(w, v2_x - v1_y)`.
    pub ruw: DMatrix<f64>,
    /// `integral psi_q`.
    pub mean: DVector<f64>,
}

impl DenseOps {
    pub fn new(grid: Grid) -> Self {
        let n2 = grid.n_nodes(2);
        let n1 = grid.n_nodes(1);
        let mut m2 = DMatrix::zeros(n2, n2);
        let mut k2 = DMatrix::zeros(n2, n2);
        let mut m1 = DMatrix::zeros(n1, n1);
        let mut b = DMatrix::zeros(n1, 2 * n2);
        let mut rwu = DMatrix::zeros(2 * n2, n2);
        let mut ruw = DMatrix::zeros(n2, 2 * n2);
        let mut mean = DVector::zeros(n1);
        for (cell, x, y, w) in grid.quadrature(Q) {
            let l2 = grid.local(2, cell, x, y);
            let l1 = grid.local(1, cell, x, y);
            for (i, &gi) in l2.nodes.iter().enumerate() {
                let (vi, di) = (l2.values[i], l2.grads[i]);
                for (j, &gj) in l2.nodes.iter().enumerate() {
                    let (vj, dj) = (l2.values[j], l2.grads[j]);
                    m2[(gi, gj)] += w * vi * vj;
                    k2[(gi, gj)] += w * (di[0] * dj[0] + di[1] * dj[1]);
                    // velocity test gi, spin trial gj
                    rwu[(gi, gj)] += w * dj[1] * vi;
                    rwu[(n2 + gi, gj)] -= w * dj[0] * vi;
                    // spin test gj, velocity trial gi
                    ruw[(gj, n2 + gi)] += w * vj * di[0];
                    ruw[(gj, gi)] -= w * vj * di[1];
                }
            }
            for (q, &gq) in l1.nodes.iter().enumerate() {
                let psi = l1.values[q];
                mean[gq] += w * psi;
                for (r, &gr) in l1.nodes.iter().enumerate() {
                    m1[(gq, gr)] += w * psi * l1.values[r];
                }
                for (a, &ga) in l2.nodes.iter().enumerate() {
                    b[(gq, ga)] += w * psi * l2.grads[a][0];
                    b[(gq, n2 + ga)] += w * psi * l2.grads[a][1];
                }
            }
        }
        Self {
            grid,
            m2,
            k2,
            m1,
            b,
            rwu,
            ruw,
            mean,
        }
    }

    pub fn n2(&self) -> usize {
        self.grid.n_nodes(2)
    }

    pub fn n1(&self) -> usize {
        self.grid.n_nodes(1)
    }

    /// `(u . grad phi_j + 1/2 div u phi_j, phi_i)` on the scalar Q2 space.
    pub fn convection(&self, u: &[f64]) -> DMatrix<f64> {
        let n2 = self.n2();
        let mut c = DMatrix::zeros(n2, n2);
        for (cell, x, y, w) in self.grid.quadrature(Q) {
            let (uv, div) = eval_vector(&self.grid, u, cell, x, y);
            let l = self.grid.local(2, cell, x, y);
            for (i, &gi) in l.nodes.iter().enumerate() {
                for (j, &gj) in l.nodes.iter().enumerate() {
                    let adv = uv[0] * l.grads[j][0] + uv[1] * l.grads[j][1];
                    c[(gi, gj)] += w * l.values[i] * (adv + 0.5 * div * l.values[j]);
                }
            }
        }
        c
    }

    pub fn load_scalar(&self, f: impl Fn(f64, f64) -> f64) -> DVector<f64> {
        let mut r = DVector::zeros(self.n2());
        for (cell, x, y, w) in self.grid.quadrature(Q) {
            let fv = f(x, y);
            let l = self.grid.local(2, cell, x, y);
            for (i, &gi) in l.nodes.iter().enumerate() {
                r[gi] += w * fv * l.values[i];
            }
        }
        r
    }

    pub fn load_vector(&self, f: impl Fn(f64, f64) -> [f64; 2]) -> DVector<f64> {
        let n2 = self.n2();
        let mut r = DVector::zeros(2 * n2);
        for (cell, x, y, w) in self.grid.quadrature(Q) {
            let fv = f(x, y);
            let l = self.grid.local(2, cell, x, y);
            for (i, &gi) in l.nodes.iter().enumerate() {
                r[gi] += w * fv[0] * l.values[i];
                r[n2 + gi] += w * fv[1] * l.values[i];
            }
        }
        r
    }

    pub fn block2(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n2 = self.n2();
        let mut out = DMatrix::zeros(2 * n2, 2 * n2);
        out.view_mut((0, 0), (n2, n2)).copy_from(m);
        out.view_mut((n2, n2), (n2, n2)).copy_from(m);
        out
    }
}

/// Solves `a x = b` with `x[d] = value` prescribed for every `(d, value)`.
pub fn solve_constrained(a: &DMatrix<f64>, b: &DVector<f64>, fixed: &[(usize, f64)]) -> DVector<f64> {
    let n = a.nrows();
    let mut is_fixed = vec![None; n];
    for &(d, v) in fixed {
        is_fixed[d] = Some(v);
    }
    let free: Vec<usize> = (0..n).filter(|&i| is_fixed[i].is_none()).collect();
    let mut x = DVector::zeros(n);
    for &(d, v) in fixed {
        x[d] = v;
    }
    let ax = a * &x;
    let af = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let bf = DVector::from_fn(free.len(), |i, _| b[free[i]] - ax[free[i]]);
    let xf = af.lu().solve(&bf).expect("nonsingular reduced system");
    for (k, &i) in free.iter().enumerate() {
        x[i] = xf[k];
    }
    x
}

#[derive(Debug, Clone, Copy)]
pub struct Params {
    pub nu: f64,
    pub nu_r: f64,
    pub c1: f64,
    pub j: f64,
}

impl Params {
    pub fn nu0(&self) -> f64 {
        self.nu + self.nu_r
    }
}

/// Problem data for one reference step.
pub struct StepData<'a> {
    pub params: Params,
    /// All four sides Dirichlet; otherwise only the walls `y = 0`, `y = ly`.
    pub enclosed: bool,
    pub u_bc: &'a dyn Fn(f64, f64) -> [f64; 2],
    pub w_bc: &'a dyn Fn(f64, f64) -> f64,
    pub f: &'a dyn Fn(f64, f64) -> [f64; 2],
    pub g: &'a dyn Fn(f64, f64) -> f64,
}

/// Monolithic momentum solve then spin solve, with history terms and
/// extrapolated coefficients passed in explicitly.
pub struct StepInputs<'a> {
    /// Coefficient of the mass term in the time derivative.
    pub a: f64,
    /// Velocity history vector `M (combination)` already formed.
    pub hist_u: DVector<f64>,
    pub hist_w: DVector<f64>,
    pub u_adv: &'a [f64],
    pub w_explicit: &'a [f64],
}

pub fn reference_step(ops: &DenseOps, data: &StepData<'_>, inp: StepInputs<'_>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n2, n1) = (ops.n2(), ops.n1());
    let nv = 2 * n2;
    let p = data.params;
    let grid = ops.grid;
    let boundary = |node: usize| {
        if data.enclosed {
            grid.on_boundary(2, node)
        } else {
            grid.on_wall(2, node)
        }
    };

    let c = ops.convection(inp.u_adv);
    let a_vel = ops.block2(&(&ops.m2 * inp.a + &ops.k2 * p.nu0() + &c));
    let mut big = DMatrix::zeros(nv + n1, nv + n1);
    big.view_mut((0, 0), (nv, nv)).copy_from(&a_vel);
    big.view_mut((0, nv), (nv, n1)).copy_from(&(-ops.b.transpose()));
    big.view_mut((nv, 0), (n1, nv)).copy_from(&(-&ops.b));
    let w_exp = DVector::from_column_slice(inp.w_explicit);
    let mut rhs = DVector::zeros(nv + n1);
    let ru = inp.hist_u + ops.load_vector(data.f) + &ops.rwu * &w_exp * (2.0 * p.nu_r);
    rhs.rows_mut(0, nv).copy_from(&ru);

    let mut fixed = Vec::new();
    for node in 0..n2 {
        if boundary(node) {
            let [x, y] = grid.coords(2, node);
            let v = (data.u_bc)(x, y);
            fixed.push((node, v[0]));
            fixed.push((n2 + node, v[1]));
        }
    }
    if data.enclosed {
        fixed.push((nv, 0.0));
    }
    let x = solve_constrained(&big, &rhs, &fixed);
    let u: Vec<f64> = x.rows(0, nv).iter().copied().collect();
    let mut pr: Vec<f64> = x.rows(nv, n1).iter().copied().collect();
    if data.enclosed {
        let area = ops.mean.sum();
        let mean = ops.mean.iter().zip(&pr).map(|(r, v)| r * v).sum::<f64>() / area;
        pr.iter_mut().for_each(|v| *v -= mean);
    }

    let un = DVector::from_column_slice(&u);
    let s = &ops.m2 * (p.j * inp.a + 4.0 * p.nu_r) + &ops.k2 * p.c1 + ops.convection(&u) * p.j;
    let rw = inp.hist_w + ops.load_scalar(data.g) + &ops.ruw * &un * (2.0 * p.nu_r);
    let wfixed: Vec<(usize, f64)> = (0..n2)
        .filter(|&node| boundary(node))
        .map(|node| {
            let [x, y] = grid.coords(2, node);
            (node, (data.w_bc)(x, y))
        })
        .collect();
    let w: Vec<f64> = solve_constrained(&s, &rw, &wfixed).iter().copied().collect();
    (u, w, pr)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dense_of(m: &micropolar::sparse::CsrMatrix) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(m.n_rows, m.n_cols);
    for i in 0..m.n_rows {
        for (j, v) in m.row(i) {
            d[(i, j)] += v;
        }
    }
    d
}

pub fn max_abs_matrix(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Tridiagonal solve; `lower[0]` and `upper[n-1]` are ignored.
pub fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Finite-difference solution of the x-invariant channel problem
/// `u_t - nu0 u'' = 2 nu_r w'` (with `w` lagged one step) and
/// `j w_t - c1 w'' + 4 nu_r w = -2 nu_r u' + g`, zero walls, backward Euler.
/// Returns `(y, u, w)` on `m + 1` equispaced points.
pub fn channel_fd(
    p: Params,
    m: usize,
    tau: f64,
    steps: usize,
    g: impl Fn(f64, f64) -> f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let h = 1.0 / m as f64;
    let y: Vec<f64> = (0..=m).map(|i| i as f64 * h).collect();
    let mut u = vec![0.0; m + 1];
    let mut w = vec![0.0; m + 1];
    let n = m - 1;
    let deriv = |f: &[f64], i: usize| (f[i + 1] - f[i - 1]) / (2.0 * h);
    for k in 1..=steps {
        let t = k as f64 * tau;
        let lo = vec![-p.nu0() / (h * h); n];
        let di = vec![1.0 / tau + 2.0 * p.nu0() / (h * h); n];
        let rhs: Vec<f64> = (1..m).map(|i| u[i] / tau + 2.0 * p.nu_r * deriv(&w, i)).collect();
        let inner = thomas(&lo, &di, &lo, &rhs);
        u[1..m].copy_from_slice(&inner);
        let lo = vec![-p.c1 / (h * h); n];
        let di = vec![p.j / tau + 2.0 * p.c1 / (h * h) + 4.0 * p.nu_r; n];
        let rhs: Vec<f64> = (1..m)
            .map(|i| p.j * w[i] / tau - 2.0 * p.nu_r * deriv(&u, i) + g(t, y[i]))
            .collect();
        let inner = thomas(&lo, &di, &lo, &rhs);
        w[1..m].copy_from_slice(&inner);
    }
    (y, u, w)
}
