//! Structured quadrilateral meshes of axis-aligned rectangles.
//!
//! Cell `(i, j)` covers `[i*hx, (i+1)*hx] x [j*hy, (j+1)*hy]` and is stored at
//! index `j*nx + i`. Vertices are numbered row by row, `J*(nx+1) + I`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub length_x: f64,
    pub length_y: f64,
}

impl MeshConfig {
    pub fn new(nx: usize, ny: usize, length_x: f64, length_y: f64) -> Self {
        Self {
            nx,
            ny,
            length_x,
            length_y,
        }
    }

    /// `n x n` cells on the unit square.
    pub fn unit_square(n: usize) -> Self {
        Self::new(n, n, 1.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::InvalidMesh(format!(
                "cell counts must be positive, got nx={}, ny={}",
                self.nx, self.ny
            )));
        }
        if !(self.length_x > 0.0 && self.length_y > 0.0)
            || !self.length_x.is_finite()
            || !self.length_y.is_finite()
        {
            return Err(Error::InvalidMesh(format!(
                "lengths must be positive and finite, got {} x {}",
                self.length_x, self.length_y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BoundaryMarker {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundaryMarker {
    pub const ALL: [BoundaryMarker; 4] = [
        BoundaryMarker::Left,
        BoundaryMarker::Right,
        BoundaryMarker::Bottom,
        BoundaryMarker::Top,
    ];

    pub fn index(self) -> usize {
        match self {
            BoundaryMarker::Left => 0,
            BoundaryMarker::Right => 1,
            BoundaryMarker::Bottom => 2,
            BoundaryMarker::Top => 3,
        }
    }
}

/// A boundary edge: owning cell, local edge (0 bottom, 1 right, 2 top, 3 left)
/// and the side it lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryEdge {
    pub cell: usize,
    pub local_edge: usize,
    pub marker: BoundaryMarker,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub config: MeshConfig,
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex indices, starting at the lower-left corner.
    pub cells: Vec<[usize; 4]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

pub fn generate_rect_mesh(config: MeshConfig) -> Result<Mesh> {
    config.validate()?;
    let MeshConfig {
        nx,
        ny,
        length_x,
        length_y,
    } = config;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([
                length_x * i as f64 / nx as f64,
                length_y * j as f64 / ny as f64,
            ]);
        }
    }

    let vid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut cells = Vec::with_capacity(nx * ny);
    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for j in 0..ny {
        for i in 0..nx {
            let cell = cells.len();
            cells.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
            if j == 0 {
                boundary_edges.push(BoundaryEdge {
                    cell,
                    local_edge: 0,
                    marker: BoundaryMarker::Bottom,
                });
            }
            if i == nx - 1 {
                boundary_edges.push(BoundaryEdge {
                    cell,
                    local_edge: 1,
                    marker: BoundaryMarker::Right,
                });
            }
            if j == ny - 1 {
                boundary_edges.push(BoundaryEdge {
                    cell,
                    local_edge: 2,
                    marker: BoundaryMarker::Top,
                });
            }
            if i == 0 {
                boundary_edges.push(BoundaryEdge {
                    cell,
                    local_edge: 3,
                    marker: BoundaryMarker::Left,
                });
            }
        }
    }

    Ok(Mesh {
        config,
        vertices,
        cells,
        boundary_edges,
    })
}

impl Mesh {
    pub fn nx(&self) -> usize {
        self.config.nx
    }

    pub fn ny(&self) -> usize {
        self.config.ny
    }

    pub fn hx(&self) -> f64 {
        self.config.length_x / self.config.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.config.length_y / self.config.ny as f64
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    /// `(i, j)` grid position of a cell.
    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.config.nx, cell / self.config.nx)
    }

    /// Lower-left corner of a cell.
    pub fn cell_origin(&self, cell: usize) -> [f64; 2] {
        self.vertices[self.cells[cell][0]]
    }

    /// Signed area from the shoelace formula (positive for counterclockwise cells).
    pub fn cell_area(&self, cell: usize) -> f64 {
        let c = &self.cells[cell];
        let mut twice = 0.0;
        for k in 0..4 {
            let [x0, y0] = self.vertices[c[k]];
            let [x1, y1] = self.vertices[c[(k + 1) % 4]];
            twice += x0 * y1 - x1 * y0;
        }
        0.5 * twice
    }

    pub fn area(&self) -> f64 {
        self.config.length_x * self.config.length_y
    }

    pub fn diameter(&self) -> f64 {
        self.config.length_x.hypot(self.config.length_y)
    }

    /// Which sides a point lies on, with a tolerance relative to the cell size.
    pub fn markers_at(&self, x: f64, y: f64) -> impl Iterator<Item = BoundaryMarker> {
        let tol = 1e-9 * self.hx().min(self.hy());
        let lx = self.config.length_x;
        let ly = self.config.length_y;
        let hits = [
            (x.abs() <= tol, BoundaryMarker::Left),
            ((x - lx).abs() <= tol, BoundaryMarker::Right),
            (y.abs() <= tol, BoundaryMarker::Bottom),
            ((y - ly).abs() <= tol, BoundaryMarker::Top),
        ];
        hits.into_iter().filter(|(hit, _)| *hit).map(|(_, m)| m)
    }
}
