//! Linearly constrained linear systems
//!
//! ```text
//! [ A  Gᵀ ] [ p ]   [ rhs ]
//! [ G  0  ] [ λ ] = [  0  ]
//! ```
//!
//! with `A` symmetric and positive definite on the kernel of `G`.
//!
//! The solver eliminates the constraints: rows of `G` are grouped into
//! clusters with overlapping column supports, each cluster's support gets a
//! local orthonormal kernel basis from a Householder QR of its rows, and the
//! reduced system `Tᵀ A T y = Tᵀ rhs` is factored with a sparse LDLᵀ. For
//! nodal sphere constraints every cluster is a single node, so `T` maps two
//! tangent coordinates per node into ℝ³ and the reduced matrix keeps the
//! sparsity of `A`. The multiplier is recovered from `G Gᵀ λ = G (rhs − A p)`.

use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::fem::{spmv, NodalField, SparseMatrix};

/// Default relative residual tolerance.
pub const DEFAULT_TOL: f64 = 1e-12;

/// Smallest admissible ratio of smallest to largest LDLᵀ pivot.
const PIVOT_RATIO_FLOOR: f64 = 1e-14;

const MAX_REFINEMENT_STEPS: usize = 4;

#[derive(Debug, Clone, Copy)]
pub struct KktSystem<'a> {
    /// `N × N` symmetric matrix.
    pub matrix: &'a SparseMatrix,
    /// `M × N` constraint rows.
    pub constraints: &'a SparseMatrix,
    pub rhs: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct KktSolution {
    pub primal: Vec<f64>,
    pub multiplier: Vec<f64>,
    /// `‖A p + Gᵀ λ − rhs‖`.
    pub stationarity_residual: f64,
    /// `‖G p‖`.
    pub feasibility_residual: f64,
}

/// Default drop tolerance `1e-12 · max_z |û(z)|` over the free nodes.
pub fn default_row_drop_tol(u_hat: &NodalField, free_nodes: &[usize]) -> f64 {
    let max = free_nodes
        .iter()
        .map(|&z| {
            let v = u_hat.node(z);
            (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
        })
        .fold(0.0, f64::max);
    1e-12 * max
}

/// Rows `v(z)·û(z) = 0` for every free node `z` with `|û(z)| ≥ row_drop_tol`.
///
/// Columns index the free-node unknowns component-major: column `c·n_f + k`
/// is component `c` of the `k`-th free node.
pub fn assemble_constraint_rows(
    u_hat: &NodalField,
    free_nodes: &[usize],
    row_drop_tol: f64,
) -> SparseMatrix {
    let nf = free_nodes.len();
    let mut rows: Vec<[f64; 3]> = Vec::with_capacity(nf);
    let mut at: Vec<usize> = Vec::with_capacity(nf);
    for (k, &z) in free_nodes.iter().enumerate() {
        let v = u_hat.node(z);
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm >= row_drop_tol && norm > 0.0 {
            rows.push(v);
            at.push(k);
        }
    }
    let mut t = TriMat::with_capacity((rows.len(), 3 * nf), 3 * rows.len());
    for (r, (v, &k)) in rows.iter().zip(&at).enumerate() {
        for c in 0..3 {
            if v[c] != 0.0 {
                t.add_triplet(r, c * nf + k, v[c]);
            }
        }
    }
    t.to_csr()
}

/// Orthonormal basis of `ker G` as a sparse `N × R` matrix together with
/// its transpose.
struct KernelBasis {
    t: SparseMatrix,
    tt: SparseMatrix,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Householder QR of the dense `s × k` column-major matrix `b`; returns the
/// `s − k` trailing columns of `Q`.
fn local_kernel(b: &mut [Vec<f64>], s: usize) -> Result<Vec<Vec<f64>>> {
    let k = b.len();
    let scale = b
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    if k > s {
        return Err(Error::RankDeficientConstraints { pivot: 0.0 });
    }
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(k);
    for j in 0..k {
        let x = &b[j][j..];
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 * scale {
            return Err(Error::RankDeficientConstraints { pivot: norm });
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv: f64 = v.iter().map(|a| a * a).sum();
        for col in b.iter_mut().skip(j) {
            let d: f64 = v.iter().zip(&col[j..]).map(|(a, c)| a * c).sum();
            let f = 2.0 * d / vv;
            for (c, a) in col[j..].iter_mut().zip(&v) {
                *c -= f * a;
            }
        }
        reflectors.push(v);
    }
    let mut out = Vec::with_capacity(s - k);
    for e in k..s {
        let mut q = vec![0.0; s];
        q[e] = 1.0;
        for (j, v) in reflectors.iter().enumerate().rev() {
            let vv: f64 = v.iter().map(|a| a * a).sum();
            let d: f64 = v.iter().zip(&q[j..]).map(|(a, c)| a * c).sum();
            let f = 2.0 * d / vv;
            for (c, a) in q[j..].iter_mut().zip(v) {
                *c -= f * a;
            }
        }
        out.push(q);
    }
    Ok(out)
}

fn kernel_basis(g: &SparseMatrix, n: usize) -> Result<KernelBasis> {
    let m = g.rows();
    let mut parent: Vec<usize> = (0..m).collect();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    for (i, row) in g.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            if v == 0.0 {
                continue;
            }
            match owner[j] {
                None => owner[j] = Some(i),
                Some(r) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, r));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }

    // Blocks: one per cluster of rows, one per unconstrained column.
    // Ordered by their smallest column so the reduced numbering follows
    // the original one.
    let mut cluster_of_root: Vec<Option<usize>> = vec![None; m];
    let mut clusters: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..m {
        let r = find(&mut parent, i);
        let c = *cluster_of_root[r].get_or_insert_with(|| {
            clusters.push((Vec::new(), Vec::new()));
            clusters.len() - 1
        });
        clusters[c].0.push(i);
    }
    for (j, o) in owner.iter().enumerate() {
        if let Some(i) = o {
            let r = find(&mut parent, *i);
            let c = cluster_of_root[r].expect("row has a cluster");
            clusters[c].1.push(j);
        }
    }

    enum Block {
        Free(usize),
        Cluster(usize),
    }
    let mut blocks: Vec<(usize, Block)> = owner
        .iter()
        .enumerate()
        .filter(|(_, o)| o.is_none())
        .map(|(j, _)| (j, Block::Free(j)))
        .collect();
    for (c, (_, support)) in clusters.iter().enumerate() {
        match support.first() {
            Some(&j) => blocks.push((j, Block::Cluster(c))),
            None => return Err(Error::RankDeficientConstraints { pivot: 0.0 }),
        }
    }
    blocks.sort_by_key(|(j, _)| *j);

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut r = 0;
    for (_, block) in &blocks {
        match *block {
            Block::Free(j) => {
                triplets.push((j, r, 1.0));
                r += 1;
            }
            Block::Cluster(c) => {
                let (rows, support) = &clusters[c];
                let s = support.len();
                let mut b: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|&i| {
                        let row = g.outer_view(i).expect("row in range");
                        support
                            .iter()
                            .map(|&j| row.get(j).copied().unwrap_or(0.0))
                            .collect()
                    })
                    .collect();
                for q in local_kernel(&mut b, s)? {
                    for (&j, &v) in support.iter().zip(&q) {
                        if v != 0.0 {
                            triplets.push((j, r, v));
                        }
                    }
                    r += 1;
                }
            }
        }
    }
    let mut t = TriMat::with_capacity((n, r), triplets.len());
    for &(i, j, v) in &triplets {
        t.add_triplet(i, j, v);
    }
    let mut tt = TriMat::with_capacity((r, n), triplets.len());
    for &(i, j, v) in &triplets {
        tt.add_triplet(j, i, v);
    }
    Ok(KernelBasis {
        t: t.to_csr(),
        tt: tt.to_csr(),
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn transpose(a: &SparseMatrix) -> SparseMatrix {
    let mut t = TriMat::with_capacity((a.cols(), a.rows()), a.nnz());
    for (v, (i, j)) in a.iter() {
        t.add_triplet(j, i, *v);
    }
    t.to_csr()
}

fn symmetrize(a: &SparseMatrix) -> SparseMatrix {
    let mut t = TriMat::with_capacity(a.shape(), 2 * a.nnz());
    for (v, (i, j)) in a.iter() {
        t.add_triplet(i, j, 0.5 * v);
        t.add_triplet(j, i, 0.5 * v);
    }
    t.to_csr()
}

/// LDLᵀ factorization of a matrix expected to be positive definite.
enum SpdFactor {
    Ldl(LdlNumeric<f64, usize>),
    /// Orders 0 and 1, which the sparse symbolic phase does not accept.
    Scalar(Option<f64>),
}

impl SpdFactor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            SpdFactor::Ldl(l) => l.solve(rhs),
            SpdFactor::Scalar(d) => rhs.iter().map(|r| r / d.unwrap_or(1.0)).collect(),
        }
    }
}

fn factor_spd(a: &SparseMatrix) -> Result<SpdFactor> {
    let (factor, d) = if a.rows() <= 1 {
        let d = (a.rows() == 1).then(|| a.get(0, 0).copied().unwrap_or(0.0));
        (SpdFactor::Scalar(d), d.into_iter().collect::<Vec<_>>())
    } else {
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(a.view())
            .map_err(|_| Error::SingularSystem {
                min_pivot: 0.0,
                max_pivot: 0.0,
            })?;
        let d = ldl.d().to_vec();
        (SpdFactor::Ldl(ldl), d)
    };
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !d.is_empty() && !(min > 0.0 && min.is_finite() && max.is_finite() && min >= PIVOT_RATIO_FLOOR * max) {
        return Err(Error::SingularSystem {
            min_pivot: min,
            max_pivot: max,
        });
    }
    Ok(factor)
}

fn check_dims(sys: &KktSystem) -> Result<usize> {
    let n = sys.matrix.rows();
    if sys.matrix.cols() != n {
        return Err(Error::DimensionMismatch {
            what: "KKT matrix columns",
            expected: n,
            found: sys.matrix.cols(),
        });
    }
    if sys.constraints.cols() != n && sys.constraints.rows() > 0 {
        return Err(Error::DimensionMismatch {
            what: "constraint columns",
            expected: n,
            found: sys.constraints.cols(),
        });
    }
    if sys.rhs.len() != n {
        return Err(Error::DimensionMismatch {
            what: "right-hand side",
            expected: n,
            found: sys.rhs.len(),
        });
    }
    Ok(n)
}

/// Solves the saddle-point system so that
/// `‖A p + Gᵀλ − rhs‖ ≤ tol (1 + ‖rhs‖)` and `‖G p‖ ≤ tol (1 + ‖p‖)`.
pub fn solve_kkt(sys: &KktSystem, tol: f64) -> Result<KktSolution> {
    let n = check_dims(sys)?;
    let g = sys.constraints;
    let m = g.rows();
    if !sys.matrix.is_csr() || !g.is_csr() {
        return Err(Error::InvalidArgument("KKT blocks must be stored CSR".into()));
    }

    let basis = kernel_basis(g, n)?;
    let at: CsMat<f64> = sys.matrix * &basis.t;
    let reduced = symmetrize(&(&basis.tt * &at));
    let ldl = factor_spd(&reduced)?;

    let rhs_norm = norm(sys.rhs);
    let mut y: Vec<f64> = ldl.solve(&spmv(&basis.tt, sys.rhs)[..]);
    let mut primal = spmv(&basis.t, &y);
    for _ in 0..MAX_REFINEMENT_STEPS {
        let ap = spmv(sys.matrix, &primal);
        let r: Vec<f64> = sys.rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
        let rr = spmv(&basis.tt, &r);
        if norm(&rr) <= 1e-3 * tol * (1.0 + rhs_norm) {
            break;
        }
        let dy: Vec<f64> = ldl.solve(&rr[..]);
        for (a, d) in y.iter_mut().zip(&dy) {
            *a += d;
        }
        primal = spmv(&basis.t, &y);
    }

    let ap = spmv(sys.matrix, &primal);
    let residual: Vec<f64> = sys.rhs.iter().zip(&ap).map(|(b, a)| b - a).collect();
    let multiplier = if m == 0 {
        Vec::new()
    } else {
        let gt = transpose(g);
        let ggt = symmetrize(&(g * &gt));
        let ldl_g = factor_spd(&ggt)?;
        let mut lam: Vec<f64> = ldl_g.solve(&spmv(g, &residual)[..]);
        // one refinement sweep on the normal equations
        let glam = spmv(&gt, &lam);
        let r2: Vec<f64> = residual.iter().zip(&glam).map(|(r, q)| r - q).collect();
        let corr: Vec<f64> = ldl_g.solve(&spmv(g, &r2)[..]);
        for (l, c) in lam.iter_mut().zip(&corr) {
            *l += c;
        }
        lam
    };

    let stationarity = if m == 0 {
        norm(&residual)
    } else {
        let gtl = spmv(&transpose(g), &multiplier);
        let r: Vec<f64> = residual.iter().zip(&gtl).map(|(r, q)| r - q).collect();
        norm(&r)
    };
    let feasibility = if m == 0 { 0.0 } else { norm(&spmv(g, &primal)) };
    if !(stationarity <= tol * (1.0 + rhs_norm) && feasibility <= tol * (1.0 + norm(&primal))) {
        return Err(Error::ToleranceNotReached {
            stationarity,
            feasibility,
        });
    }
    Ok(KktSolution {
        primal,
        multiplier,
        stationarity_residual: stationarity,
        feasibility_residual: feasibility,
    })
}
