//! Piecewise affine (P1) finite elements for ℝ³-valued fields on a
//! triangulation.
//!
//! Scalar matrices are assembled once and applied to each of the three
//! components. Vector fields are stored component-major: all first
//! components, then all second, then all third.

use std::fmt::Write as _;

use sprs::{CsMat, TriMat};

use crate::error::{Error, Result};
use crate::mesh::TriMesh;

/// Compressed sparse row matrix used for every assembled operator.
pub type SparseMatrix = CsMat<f64>;

/// Per-vertex ℝ³ values, component-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    num_nodes: usize,
    data: Vec<f64>,
}

impl NodalField {
    pub fn zeros(num_nodes: usize) -> Self {
        NodalField {
            num_nodes,
            data: vec![0.0; 3 * num_nodes],
        }
    }

    pub fn from_nodes(values: &[[f64; 3]]) -> Self {
        let n = values.len();
        let mut f = Self::zeros(n);
        for (i, v) in values.iter().enumerate() {
            f.set_node(i, *v);
        }
        f
    }

    /// Wraps component-major storage of length `3 * num_nodes`.
    pub fn from_component_major(num_nodes: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * num_nodes {
            return Err(Error::DimensionMismatch {
                what: "nodal field storage",
                expected: 3 * num_nodes,
                found: data.len(),
            });
        }
        Ok(NodalField { num_nodes, data })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.data[c * self.num_nodes..(c + 1) * self.num_nodes]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.num_nodes;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn node(&self, i: usize) -> [f64; 3] {
        let n = self.num_nodes;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    #[inline]
    pub fn set_node(&mut self, i: usize, v: [f64; 3]) {
        let n = self.num_nodes;
        self.data[i] = v[0];
        self.data[n + i] = v[1];
        self.data[2 * n + i] = v[2];
    }

    /// `|u(z)|²` at every node.
    pub fn nodal_norm_sq(&self) -> Vec<f64> {
        (0..self.num_nodes)
            .map(|i| {
                let v = self.node(i);
                v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Plain-text dump, one `u i vx vy vz` line per node, 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for i in 0..self.num_nodes {
            let v = self.node(i);
            writeln!(s, "u {i} {:.16e} {:.16e} {:.16e}", v[0], v[1], v[2]).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut nodes: Vec<(usize, [f64; 3])> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens.is_empty() {
                continue;
            }
            let bad = || Error::Parse(format!("field line {}: {line:?}", lineno + 1));
            if tokens.len() != 5 || tokens[0] != "u" {
                return Err(bad());
            }
            let i: usize = tokens[1].parse().map_err(|_| bad())?;
            let mut v = [0.0; 3];
            for (k, t) in tokens[2..].iter().enumerate() {
                v[k] = t.parse().map_err(|_| bad())?;
            }
            nodes.push((i, v));
        }
        let n = nodes.len();
        let mut f = NodalField::zeros(n);
        let mut seen = vec![false; n];
        for (i, v) in nodes {
            if i >= n || seen[i] {
                return Err(Error::Parse(format!("node index {i} duplicated or out of range")));
            }
            seen[i] = true;
            f.set_node(i, v);
        }
        Ok(f)
    }
}

/// Sparse matrix-vector product for CSR matrices.
pub fn spmv(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    debug_assert!(a.is_csr());
    debug_assert_eq!(a.cols(), x.len());
    a.outer_iterator()
        .map(|row| row.iter().map(|(j, v)| v * x[j]).sum())
        .collect()
}

/// `xᵀ A y` for a scalar matrix.
pub fn quad_form(a: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
    a.outer_iterator()
        .enumerate()
        .map(|(i, row)| x[i] * row.iter().map(|(j, v)| v * y[j]).sum::<f64>())
        .sum()
}

/// `Σ_c x_cᵀ A y_c` for component-major vectors of length `3 * A.rows()`.
pub fn block_form(a: &SparseMatrix, x: &[f64], y: &[f64]) -> f64 {
    let n = a.rows();
    (0..3)
        .map(|c| quad_form(a, &x[c * n..(c + 1) * n], &y[c * n..(c + 1) * n]))
        .sum()
}

/// Applies a scalar matrix to each component of a component-major vector.
pub fn block_apply(a: &SparseMatrix, x: &[f64]) -> Vec<f64> {
    let n = a.cols();
    (0..3).flat_map(|c| spmv(a, &x[c * n..(c + 1) * n])).collect()
}

/// `blockdiag(A, A, A)` in component-major ordering.
pub fn block_diag3(a: &SparseMatrix) -> SparseMatrix {
    let (r, c) = (a.rows(), a.cols());
    let mut t = TriMat::with_capacity((3 * r, 3 * c), 3 * a.nnz());
    for b in 0..3 {
        for (v, (i, j)) in a.iter() {
            t.add_triplet(b * r + i, b * c + j, *v);
        }
    }
    t.to_csr()
}

/// Principal submatrix on the index list `keep` (sorted, unique).
pub fn restrict(a: &SparseMatrix, keep: &[usize]) -> SparseMatrix {
    let mut map = vec![usize::MAX; a.cols()];
    for (k, &i) in keep.iter().enumerate() {
        map[i] = k;
    }
    let mut t = TriMat::new((keep.len(), keep.len()));
    for (k, &i) in keep.iter().enumerate() {
        if let Some(row) = a.outer_view(i) {
            for (j, v) in row.iter() {
                if map[j] != usize::MAX {
                    t.add_triplet(k, map[j], *v);
                }
            }
        }
    }
    t.to_csr()
}

/// `a·x + b·y` for two matrices with the same shape.
pub fn linear_combination(alpha: f64, a: &SparseMatrix, beta: f64, b: &SparseMatrix) -> SparseMatrix {
    let mut t = TriMat::with_capacity(a.shape(), a.nnz() + b.nnz());
    for (v, (i, j)) in a.iter() {
        t.add_triplet(i, j, alpha * v);
    }
    for (v, (i, j)) in b.iter() {
        t.add_triplet(i, j, beta * v);
    }
    t.to_csr()
}

fn cell_geometry(mesh: &TriMesh, cell: usize) -> (f64, [f64; 3], [f64; 3]) {
    let p = mesh.cells[cell].map(|i| mesh.vertices[i]);
    let area = mesh.signed_area(cell);
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[k][1];
        c[i] = p[k][0] - p[j][0];
    }
    (area, b, c)
}

/// P1 stiffness matrix `K_ij = ∫ ∇φ_i·∇φ_j`.
pub fn assemble_stiffness(mesh: &TriMesh) -> SparseMatrix {
    let n = mesh.num_vertices();
    let mut t = TriMat::with_capacity((n, n), 9 * mesh.num_cells());
    for (cell, idx) in mesh.cells.iter().enumerate() {
        let (area, b, c) = cell_geometry(mesh, cell);
        let s = 1.0 / (4.0 * area);
        for i in 0..3 {
            for j in 0..3 {
                t.add_triplet(idx[i], idx[j], s * (b[i] * b[j] + c[i] * c[j]));
            }
        }
    }
    t.to_csr()
}

/// Row sums of the consistent mass matrix: `m_z = Σ_{T ∋ z} |T|/3`.
pub fn lumped_masses(mesh: &TriMesh) -> Vec<f64> {
    let mut m = vec![0.0; mesh.num_vertices()];
    for (cell, idx) in mesh.cells.iter().enumerate() {
        let a3 = mesh.signed_area(cell) / 3.0;
        for &i in idx {
            m[i] += a3;
        }
    }
    m
}

/// Consistent (`∫ φ_i φ_j`) or lumped (diagonal row-sum) mass matrix.
pub fn assemble_mass(mesh: &TriMesh, lumped: bool) -> SparseMatrix {
    let n = mesh.num_vertices();
    if lumped {
        let m = lumped_masses(mesh);
        let mut t = TriMat::with_capacity((n, n), n);
        for (i, v) in m.into_iter().enumerate() {
            t.add_triplet(i, i, v);
        }
        return t.to_csr();
    }
    let mut t = TriMat::with_capacity((n, n), 9 * mesh.num_cells());
    for (cell, idx) in mesh.cells.iter().enumerate() {
        let a12 = mesh.signed_area(cell) / 12.0;
        for i in 0..3 {
            for j in 0..3 {
                let w = if i == j { 2.0 } else { 1.0 };
                t.add_triplet(idx[i], idx[j], w * a12);
            }
        }
    }
    t.to_csr()
}

/// Nodal interpolation of `f`.
pub fn interpolate<F>(mesh: &TriMesh, f: F) -> NodalField
where
    F: Fn([f64; 2]) -> [f64; 3],
{
    let values: Vec<[f64; 3]> = mesh.vertices.iter().map(|&x| f(x)).collect();
    NodalField::from_nodes(&values)
}

/// `½ Σ_c u_cᵀ K u_c`.
pub fn dirichlet_energy(u: &NodalField, stiffness: &SparseMatrix) -> f64 {
    0.5 * block_form(stiffness, u.as_slice(), u.as_slice())
}

/// `Σ_z m_z |w(z)|` with precomputed lumped masses.
pub fn l1_lumped(w: &[f64], masses: &[f64]) -> f64 {
    w.iter().zip(masses).map(|(w, m)| m * w.abs()).sum()
}

/// Lumped-quadrature L¹ norm of the P1 interpolant of nodal values `w`.
pub fn l1_nodal_norm(w: &[f64], mesh: &TriMesh) -> Result<f64> {
    if w.len() != mesh.num_vertices() {
        return Err(Error::DimensionMismatch {
            what: "nodal values",
            expected: mesh.num_vertices(),
            found: w.len(),
        });
    }
    Ok(l1_lumped(w, &lumped_masses(mesh)))
}

/// `Σ_z m_z |v(z)|²` for a vector field.
pub fn lumped_norm_sq(v: &NodalField, masses: &[f64]) -> f64 {
    v.nodal_norm_sq().iter().zip(masses).map(|(a, m)| a * m).sum()
}
