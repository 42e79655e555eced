//! Structured triangulations of axis-aligned squares.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Which boundary vertices carry Dirichlet data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DirichletBoundary {
    WholeBoundary,
    None,
}

/// A triangulation with counterclockwise cells and a sorted list of
/// Dirichlet vertices.
///
/// Vertices of structured meshes are ordered lexicographically by
/// `(row, column)`, which fixes the sparsity pattern of every assembled
/// matrix.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 3]>,
    pub dirichlet_nodes: Vec<usize>,
    pub h: f64,
}

impl TriMesh {
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    /// Signed area of a cell; positive for counterclockwise orientation.
    pub fn signed_area(&self, cell: usize) -> f64 {
        let [a, b, c] = self.cells[cell].map(|i| self.vertices[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Vertices not marked Dirichlet, in increasing order.
    pub fn free_nodes(&self) -> Vec<usize> {
        let mut is_dirichlet = vec![false; self.num_vertices()];
        for &d in &self.dirichlet_nodes {
            is_dirichlet[d] = true;
        }
        (0..self.num_vertices()).filter(|&i| !is_dirichlet[i]).collect()
    }

    pub fn is_dirichlet_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.num_vertices()];
        for &d in &self.dirichlet_nodes {
            mask[d] = true;
        }
        mask
    }

    /// Plain-text dump: `v x y`, `c i j k`, `d i` lines, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            writeln!(s, "v {:.16e} {:.16e}", v[0], v[1]).unwrap();
        }
        for c in &self.cells {
            writeln!(s, "c {} {} {}", c[0], c[1], c[2]).unwrap();
        }
        for d in &self.dirichlet_nodes {
            writeln!(s, "d {d}").unwrap();
        }
        s
    }

    /// Inverse of [`TriMesh::to_text`]. The grid spacing is recovered as the
    /// shortest edge of the first cell.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut cells = Vec::new();
        let mut dirichlet_nodes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut it = line.split_whitespace();
            let bad = || Error::Parse(format!("mesh line {}: {line:?}", lineno + 1));
            match it.next() {
                None => continue,
                Some("v") => {
                    let x = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                    let y = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                    vertices.push([x, y]);
                }
                Some("c") => {
                    let mut c = [0usize; 3];
                    for k in &mut c {
                        *k = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                    }
                    cells.push(c);
                }
                Some("d") => {
                    dirichlet_nodes.push(it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?)
                }
                Some(_) => return Err(bad()),
            }
        }
        if cells.iter().flatten().chain(&dirichlet_nodes).any(|&i| i >= vertices.len()) {
            return Err(Error::Parse("mesh references a missing vertex".into()));
        }
        dirichlet_nodes.sort_unstable();
        dirichlet_nodes.dedup();
        let h = cells
            .first()
            .map(|c| {
                let p: [[f64; 2]; 3] = c.map(|i| vertices[i]);
                (0..3)
                    .map(|k| {
                        let (a, b) = (p[k], p[(k + 1) % 3]);
                        f64::hypot(a[0] - b[0], a[1] - b[1])
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .unwrap_or(0.0);
        Ok(TriMesh {
            vertices,
            cells,
            dirichlet_nodes,
            h,
        })
    }
}

/// Uniform `n × n` triangulation of the square `[x0, x0+side] × [y0, y0+side]`,
/// each lattice square split along its south-west to north-east diagonal.
pub fn build_square_mesh(
    n: usize,
    lower_left: [f64; 2],
    side: f64,
    dirichlet: DirichletBoundary,
) -> Result<TriMesh> {
    if n == 0 {
        return Err(Error::InvalidArgument("mesh needs at least one cell per side".into()));
    }
    if !(side.is_finite() && side > 0.0) {
        return Err(Error::InvalidArgument(format!("side length must be positive, got {side}")));
    }
    let h = side / n as f64;
    let stride = n + 1;
    let mut vertices = Vec::with_capacity(stride * stride);
    for row in 0..stride {
        for col in 0..stride {
            vertices.push([lower_left[0] + col as f64 * h, lower_left[1] + row as f64 * h]);
        }
    }
    let idx = |row: usize, col: usize| row * stride + col;
    let mut cells = Vec::with_capacity(2 * n * n);
    for row in 0..n {
        for col in 0..n {
            let sw = idx(row, col);
            let se = idx(row, col + 1);
            let nw = idx(row + 1, col);
            let ne = idx(row + 1, col + 1);
            cells.push([sw, se, ne]);
            cells.push([sw, ne, nw]);
        }
    }
    let dirichlet_nodes = match dirichlet {
        DirichletBoundary::None => Vec::new(),
        DirichletBoundary::WholeBoundary => (0..stride)
            .flat_map(|row| (0..stride).map(move |col| (row, col)))
            .filter(|&(row, col)| row == 0 || col == 0 || row == n || col == n)
            .map(|(row, col)| idx(row, col))
            .collect(),
    };
    Ok(TriMesh {
        vertices,
        cells,
        dirichlet_nodes,
        h,
    })
}

/// The square `(-1/2, 1/2)²` with Dirichlet data on the whole boundary.
pub fn centered_unit_square(n: usize) -> Result<TriMesh> {
    build_square_mesh(n, [-0.5, -0.5], 1.0, DirichletBoundary::WholeBoundary)
}
