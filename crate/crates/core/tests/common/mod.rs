//! Dense reference solvers and random problem generators shared by the
//! integration tests.

#![allow(dead_code)]

use harmflow::fem::SparseMatrix;
use rand::rngs::StdRng;
use rand::Rng;
use sprs::TriMat;

/// Row-major dense matrix.
pub type Dense = Vec<Vec<f64>>;

pub fn to_sparse(a: &Dense, cols: usize) -> SparseMatrix {
    let mut t = TriMat::new((a.len(), cols));
    for (i, row) in a.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                t.add_triplet(i, j, v);
            }
        }
    }
    t.to_csr()
}

pub fn matvec(a: &Dense, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

pub fn transpose(a: &Dense, cols: usize) -> Dense {
    (0..cols).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Gaussian elimination with full pivoting.
pub fn dense_solve(a: &Dense, b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut m: Dense = a.clone();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut pi, mut pj, mut best) = (k, k, -1.0);
        for i in k..n {
            for j in k..n {
                if m[i][j].abs() > best {
                    best = m[i][j].abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        assert!(best > 0.0, "singular reference system");
        m.swap(k, pi);
        rhs.swap(k, pi);
        for row in m.iter_mut() {
            row.swap(k, pj);
        }
        perm.swap(k, pj);
        for i in k + 1..n {
            let f = m[i][k] / m[k][k];
            if f != 0.0 {
                for j in k..n {
                    m[i][j] -= f * m[k][j];
                }
                rhs[i] -= f * rhs[k];
            }
        }
    }
    let mut y = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| m[k][j] * y[j]).sum();
        y[k] = (rhs[k] - s) / m[k][k];
    }
    let mut x = vec![0.0; n];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = y[k];
    }
    x
}

/// Full saddle-point matrix `[A Gᵀ; G 0]` solved densely; returns `(p, λ)`.
pub fn dense_kkt(a: &Dense, g: &Dense, rhs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = rhs.len();
    let m = g.len();
    let mut k = vec![vec![0.0; n + m]; n + m];
    for i in 0..n {
        k[i][..n].copy_from_slice(&a[i]);
        for r in 0..m {
            k[i][n + r] = g[r][i];
            k[n + r][i] = g[r][i];
        }
    }
    let mut b = rhs.to_vec();
    b.resize(n + m, 0.0);
    let x = dense_solve(&k, &b);
    (x[..n].to_vec(), x[n..].to_vec())
}

/// A random saddle-point problem with a well-conditioned SPD block.
pub struct RandomKkt {
    pub a: Dense,
    pub g: Dense,
    pub rhs: Vec<f64>,
}

impl RandomKkt {
    pub fn generate(rng: &mut StdRng, n: usize, m: usize) -> Self {
        let b: Dense = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let a: Dense = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let s: f64 = (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>() / n as f64;
                        s + if i == j { 0.5 } else { 0.0 }
                    })
                    .collect()
            })
            .collect();
        // sparse-ish rows so that several constraint clusters appear
        // a nonzero on the diagonal keeps the rows structurally independent
        let g: Dense = (0..m)
            .map(|r| {
                (0..n)
                    .map(|j| {
                        if j == r {
                            rng.gen_range(0.5..1.0)
                        } else if rng.gen_bool(0.3) {
                            rng.gen_range(-1.0..1.0)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let rhs = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        RandomKkt { a, g, rhs }
    }

    /// Projection of `w` onto the kernel of `G`.
    pub fn kernel_vector(&self, w: &[f64]) -> Vec<f64> {
        let m = self.g.len();
        if m == 0 {
            return w.to_vec();
        }
        let n = w.len();
        let ggt: Dense = (0..m)
            .map(|i| (0..m).map(|j| dot(&self.g[i], &self.g[j])).collect())
            .collect();
        let c = dense_solve(&ggt, &matvec(&self.g, w));
        let gt = transpose(&self.g, n);
        let back = matvec(&gt, &c);
        w.iter().zip(&back).map(|(a, b)| a - b).collect()
    }
}

/// Largest relative deviation of the sparse solver from the dense oracle
/// and largest Galerkin orthogonality residual over `trials` problems.
pub fn kkt_oracle_sweep(rng: &mut StdRng, trials: usize) -> (f64, f64) {
    let (mut dev, mut orth) = (0.0f64, 0.0f64);
    for _ in 0..trials {
        let n = rng.gen_range(1..=50);
        let m = rng.gen_range(0..=10.min(n));
        let p = RandomKkt::generate(rng, n, m);
        let (a, g) = (to_sparse(&p.a, n), to_sparse(&p.g, n));
        let sol = harmflow::solve_kkt(
            &harmflow::KktSystem {
                matrix: &a,
                constraints: &g,
                rhs: &p.rhs,
            },
            harmflow::kkt::DEFAULT_TOL,
        )
        .expect("random KKT system solves");
        let (pr, lr) = dense_kkt(&p.a, &p.g, &p.rhs);
        // relative to the reference, floored by the data scale so that a
        // fully constrained (zero) solution does not divide by round-off
        let floor = norm(&p.rhs);
        let diff = |x: &[f64], y: &[f64]| {
            let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            norm(&d) / norm(y).max(floor)
        };
        dev = dev.max(diff(&sol.primal, &pr));
        if m > 0 {
            dev = dev.max(diff(&sol.multiplier, &lr));
        }
        // (A p − rhs, v) = 0 for v in ker G
        let ap = matvec(&p.a, &sol.primal);
        let r: Vec<f64> = ap.iter().zip(&p.rhs).map(|(x, y)| x - y).collect();
        for _ in 0..3 {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = p.kernel_vector(&w);
            let scale = norm(&v) * (1.0 + norm(&p.rhs));
            // a trivial kernel leaves only round-off in v
            if norm(&v) > 1e-8 * norm(&w) {
                orth = orth.max(dot(&r, &v).abs() / scale);
            }
        }
    }
    (dev, orth)
}
