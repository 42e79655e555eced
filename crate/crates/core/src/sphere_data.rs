//! Boundary and initial data: inverse stereographic projection onto the
//! unit sphere, plus seeded perturbed and random interior values.
//!
//! Random draws come from SplitMix64 started with `state = seed`. Each
//! 64-bit output `z` is mapped to the open unit interval as
//! `((z >> 11) + 0.5) · 2⁻⁵³`, so any implementation of SplitMix64 reproduces
//! the same fields bit for bit.

use std::f64::consts::PI;

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::fem::NodalField;
use crate::mesh::TriMesh;

/// How interior nodal values of the initial field are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitKind {
    Exact,
    Perturbed { amplitude: f64 },
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitSpec {
    pub kind: InitKind,
    pub seed: u64,
}

impl InitSpec {
    pub fn exact() -> Self {
        InitSpec {
            kind: InitKind::Exact,
            seed: 0,
        }
    }

    pub fn perturbed(amplitude: f64, seed: u64) -> Self {
        InitSpec {
            kind: InitKind::Perturbed { amplitude },
            seed,
        }
    }

    pub fn random(seed: u64) -> Self {
        InitSpec {
            kind: InitKind::Random,
            seed,
        }
    }
}

/// `π⁻¹(x) = (2x, 1 − |x|²) / (|x|² + 1)`.
pub fn inverse_stereographic(x: [f64; 2]) -> [f64; 3] {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let s = 1.0 / (r2 + 1.0);
    [2.0 * x[0] * s, 2.0 * x[1] * s, (1.0 - r2) * s]
}

/// Deterministic uniform source on the open interval `(0, 1)`.
#[derive(Debug, Clone)]
pub struct UnitUniform(SplitMix64);

impl UnitUniform {
    pub fn new(seed: u64) -> Self {
        UnitUniform(SplitMix64::from_seed(seed.to_le_bytes()))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    pub fn next_open01(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(lo, hi)`.
    pub fn next_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_open01()
    }
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-8).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

/// Builds the initial field. Dirichlet nodes always carry `π⁻¹(z)`;
/// interior nodes are visited in increasing index order.
pub fn make_initial(mesh: &TriMesh, spec: InitSpec) -> NodalField {
    let dirichlet = mesh.is_dirichlet_mask();
    let mut rng = UnitUniform::new(spec.seed);
    let values: Vec<[f64; 3]> = mesh
        .vertices
        .iter()
        .zip(&dirichlet)
        .map(|(&x, &on_boundary)| {
            let exact = inverse_stereographic(x);
            if on_boundary {
                return exact;
            }
            match spec.kind {
                InitKind::Exact => exact,
                InitKind::Random => {
                    let a1 = rng.next_in(-PI / 2.0, PI / 2.0);
                    let a2 = rng.next_in(-PI, PI);
                    [a1.cos() * a2.cos(), a1.cos() * a2.sin(), a1.sin()]
                }
                InitKind::Perturbed { amplitude } => loop {
                    let xi = [
                        rng.next_in(-1.0, 1.0),
                        rng.next_in(-1.0, 1.0),
                        rng.next_in(-1.0, 1.0),
                    ];
                    let v = [
                        exact[0] + amplitude * xi[0],
                        exact[1] + amplitude * xi[1],
                        exact[2] + amplitude * xi[2],
                    ];
                    if let Some(u) = normalize(v) {
                        break u;
                    }
                },
            }
        })
        .collect();
    NodalField::from_nodes(&values)
}
