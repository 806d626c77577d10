//! As-affine-as-possible deformation machinery: the per-vertex transform
//! parameterization, the quadratic energy and its Schur complement, the
//! constrained displacement solve between nearby shapes, and the
//! structure-preserving regularizer evaluation.

pub mod basis;
pub mod constraints;
pub mod kkt;
pub mod system;

pub use basis::{AffineParams, ConformalBasis, TransformModel};
pub use constraints::{
    constraint_matrices, projection_constraints, ConstraintSet, LatentConstraints,
};
pub use kkt::{KktSolver, KktSymbolic};
pub use system::{DeformationSystem, EnergyParams, SystemDiagnostics};

use crate::error::Result;
use crate::generator::Shape;
use crate::meshing::SurfaceMesh;
use nalgebra::{DMatrix, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Relative ridge weight for the KKT solve (scaled by the mean diagonal of
/// `L`); keeps the factorization finite without perturbing the minimizer.
pub const DEFAULT_MU_REL: f64 = 1e-10;
/// Constraint rows with spatial gradients below this norm are dropped.
pub const GRAD_DROP_TOL: f64 = 1e-8;
/// Smoothing of the robust norm: rho(r) = sqrt(r^2 + delta^2) - delta.
pub const ROBUST_DELTA: f64 = 1e-6;

/// A displacement field `d` over the mesh vertices, tied to the latent
/// direction that produced it.
#[derive(Debug, Clone)]
pub struct DisplacementField {
    pub d: Vec<f64>,
    pub direction: Vec<f64>,
}

impl DisplacementField {
    pub fn vertex(&self, i: usize) -> Vector3<f64> {
        Vector3::new(self.d[3 * i], self.d[3 * i + 1], self.d[3 * i + 2])
    }
}

/// A deformation system factored together with its latent constraints: the
/// reusable per-shape solve state realizing the displacement map `M(z)`.
pub struct ShapeOperator {
    pub system: DeformationSystem,
    pub constraints: LatentConstraints,
    pub solver: KktSolver,
}

impl ShapeOperator {
    /// Assembles the energy on the mesh geometry at `shape` and factors the
    /// KKT system once for reuse across latent directions.
    pub fn build(
        shape: &Shape<'_>,
        mesh: &SurfaceMesh,
        params: EnergyParams,
        reuse: Option<&KktSymbolic>,
    ) -> Result<Self> {
        Self::build_at(shape, &mesh.vertices, mesh.neighborhoods(), params, reuse)
    }

    /// Same, on explicit positions (used for propagated point sets).
    pub fn build_at(
        shape: &Shape<'_>,
        positions: &[Vector3<f64>],
        neighborhoods: &[Vec<usize>],
        params: EnergyParams,
        reuse: Option<&KktSymbolic>,
    ) -> Result<Self> {
        let system = DeformationSystem::assemble(positions, neighborhoods, params, None);
        let constraints = constraint_matrices(shape, positions, GRAD_DROP_TOL);
        let solver = KktSolver::factor(system.l_matrix(), &constraints.set, DEFAULT_MU_REL, reuse)?;
        Ok(ShapeOperator {
            system,
            constraints,
            solver,
        })
    }

    /// Minimum-energy displacement for the latent direction `v`.
    pub fn solve_displacement(&self, v: &[f64]) -> DisplacementField {
        let rhs = self.constraints.rhs_for(v);
        let d = self.solver.solve(&rhs);
        DisplacementField {
            d,
            direction: v.to_vec(),
        }
    }

    /// Materializes the displacement map column by column: the `3n x q`
    /// matrix sending latent directions to displacement fields.
    pub fn materialize_m(&self) -> DMatrix<f64> {
        let q = self.constraints.f_mat.ncols();
        let n3 = 3 * self.system.vertex_count();
        let mut m = DMatrix::zeros(n3, q);
        for j in 0..q {
            let mut v = vec![0.0; q];
            v[j] = 1.0;
            let d = self.solve_displacement(&v);
            for r in 0..n3 {
                m[(r, j)] = d.d[r];
            }
        }
        m
    }
}

/// Norm selector for the regularizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegularizerNorm {
    /// alpha = 1 with the smoothed absolute value.
    Robust,
    /// alpha = 2.
    L2,
}

/// Smoothed robust penalty; zero at zero residual.
pub fn robust_penalty(r: f64, delta: f64) -> f64 {
    (r * r + delta * delta).sqrt() - delta
}

/// Monte Carlo estimate of the structure-preserving regularizer: the mean
/// over unit latent directions of the summed per-edge residual penalties of
/// the induced displacement fields.
pub struct RegularizerReport {
    pub value: f64,
    /// Mean per-directed-edge penalty accumulated over sampled directions,
    /// in `directed_edges` order.
    pub per_edge: Vec<f64>,
}

pub fn evaluate_regularizer(
    op: &ShapeOperator,
    n_directions: usize,
    norm: RegularizerNorm,
    seed: u64,
) -> RegularizerReport {
    assert!(n_directions >= 1, "need at least one direction");
    let q = op.constraints.f_mat.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_edges: usize = op
        .system
        .neighborhoods()
        .iter()
        .map(|l| l.len() - 1)
        .sum();
    let mut per_edge = vec![0.0; n_edges];
    let mut total = 0.0;
    for _ in 0..n_directions {
        // uniform on the unit sphere in latent space
        let mut v = vec![0.0; q];
        loop {
            let mut norm2 = 0.0;
            for vj in v.iter_mut() {
                *vj = gaussian(&mut rng);
                norm2 += *vj * *vj;
            }
            if norm2 > 1e-12 {
                let inv = norm2.sqrt().recip();
                for vj in v.iter_mut() {
                    *vj *= inv;
                }
                break;
            }
        }
        let d = op.solve_displacement(&v);
        let y = op.system.recover_transforms(&d.d);
        let residuals = op.system.edge_residuals(&d.d, &y);
        for (k, r) in residuals.iter().enumerate() {
            let p = match norm {
                RegularizerNorm::Robust => robust_penalty(*r, ROBUST_DELTA),
                RegularizerNorm::L2 => r * r,
            };
            per_edge[k] += p;
            total += p;
        }
    }
    let inv = (n_directions as f64).recip();
    for p in per_edge.iter_mut() {
        *p *= inv;
    }
    RegularizerReport {
        value: total * inv,
        per_edge,
    }
}

/// Vertices whose 1-ring spans two part owners or whose ownership gap is
/// inside the blend tolerance; used to localize part interfaces.
pub fn interface_vertices(shape: &Shape<'_>, mesh: &SurfaceMesh) -> Vec<usize> {
    let tie = 4.0 * shape.generator().blend_radius() + 1e-3;
    let owners: Vec<(usize, f64)> = mesh.vertices.iter().map(|p| shape.ownership(p)).collect();
    (0..mesh.vertex_count())
        .filter(|&i| {
            if owners[i].1 < tie {
                return true;
            }
            mesh.neighborhood(i)
                .iter()
                .any(|&j| owners[j].0 != owners[i].0)
        })
        .collect()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::family::builtin;
    use crate::meshing::{extract_mesh, GridSpec};

    fn mesh_for<'g>(
        fam: &'g crate::generator::ShapeFamily,
        idx: usize,
        res: usize,
        target: usize,
    ) -> (Shape<'g>, SurfaceMesh) {
        let shape = fam.generator.at(&fam.instances[idx]).unwrap();
        let mesh = extract_mesh(&shape, &GridSpec::cube(res, 1.1), Some(target), 1e-5).unwrap();
        (shape, mesh)
    }

    #[test]
    fn zero_direction_zero_displacement() {
        let fam = builtin::two_box_affine();
        let (shape, mesh) = mesh_for(&fam, 0, 40, 400);
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let d = op.solve_displacement(&[0.0]);
        let max = d.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-12, "nonzero displacement {max}");
    }

    #[test]
    fn constraint_residuals_below_threshold() {
        let fam = builtin::two_box_attached();
        let (shape, mesh) = mesh_for(&fam, 0, 44, 500);
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let v = vec![0.7];
        let d = op.solve_displacement(&v);
        let rhs = op.constraints.rhs_for(&v);
        let res = op.constraints.set.residuals(&d.d, &rhs);
        let worst = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(worst < 1e-8, "constraint residual {worst}");
    }

    #[test]
    fn two_box_translation_axis_solved_field() {
        // latent axis translates box 2; solved displacement should be ~u on
        // box-2 vertices and ~0 on box-1 vertices
        let gen = crate::generator::ImplicitGenerator::new(
            vec![
                crate::generator::PartSpec {
                    kind: crate::generator::PrimitiveKind::Box,
                    half_extents: [0.3, 0.3, 0.3],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    translation: [-0.5, 0.0, 0.0],
                    label: 0,
                },
                crate::generator::PartSpec {
                    kind: crate::generator::PrimitiveKind::Box,
                    half_extents: [0.25, 0.25, 0.25],
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    translation: [0.55, 0.0, 0.0],
                    label: 1,
                },
            ],
            vec![crate::generator::LatentAxisMap {
                part: 1,
                axis: 0,
                linear: [0.0; 9],
                translation: [0.0, 0.12, 0.0],
            }],
            0.0,
            1,
        )
        .unwrap();
        let z = crate::generator::LatentCode::zeros(1);
        let shape = gen.at(&z).unwrap();
        let mesh = extract_mesh(&shape, &GridSpec::cube(48, 1.1), Some(600), 1e-5).unwrap();
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let d = op.solve_displacement(&[1.0]);
        let u = Vector3::new(0.0, 0.12, 0.0);
        let mut worst = 0.0f64;
        for (i, p) in mesh.vertices.iter().enumerate() {
            let expect = if p.x > 0.0 { u } else { Vector3::zeros() };
            worst = worst.max((d.vertex(i) - expect).norm());
        }
        assert!(worst < 0.05 * u.norm(), "field deviation {worst}");
    }

    #[test]
    fn unused_latent_axis_gives_zero_field() {
        // a sphere with an axis that does not act on it: F = 0, so C d = 0
        // and the ridge picks d = 0
        let gen = crate::generator::ImplicitGenerator::new(
            vec![crate::generator::PartSpec {
                kind: crate::generator::PrimitiveKind::Capsule,
                half_extents: [0.8, 0.8, 0.0],
                rotation: [1.0, 0.0, 0.0, 0.0],
                translation: [0.0, 0.0, 0.0],
                label: 0,
            }],
            vec![],
            0.0,
            1,
        )
        .unwrap();
        let z = crate::generator::LatentCode::zeros(1);
        let shape = gen.at(&z).unwrap();
        let mesh = extract_mesh(&shape, &GridSpec::cube(40, 1.0), Some(300), 1e-5).unwrap();
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let d = op.solve_displacement(&[1.0]);
        let rhs = op.constraints.rhs_for(&[1.0]);
        let res = op.constraints.set.residuals(&d.d, &rhs);
        assert!(res.iter().all(|r| r.abs() < 1e-8));
        let max = d.d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max < 1e-8);
    }

    #[test]
    fn rigid_family_regularizer_vanishes() {
        let fam = builtin::rigid_pair();
        let (shape, mesh) = mesh_for(&fam, 0, 40, 400);
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let rep = evaluate_regularizer(&op, 4, RegularizerNorm::Robust, 11);
        assert!(rep.value < 1e-6, "rigid regularizer {}", rep.value);
    }

    #[test]
    fn robust_residual_concentrates_at_interface() {
        let fam = builtin::two_box_attached();
        let (shape, mesh) = mesh_for(&fam, 0, 48, 500);
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let rep = evaluate_regularizer(&op, 8, RegularizerNorm::Robust, 3);

        let seeds = interface_vertices(&shape, &mesh);
        assert!(!seeds.is_empty());
        let hops = mesh.hop_distances(&seeds);
        let mut near = 0.0;
        let mut total = 0.0;
        let mut cursor = 0;
        for i in 0..mesh.vertex_count() {
            for &j in mesh.neighborhood(i) {
                if j == i {
                    continue;
                }
                let p = rep.per_edge[cursor];
                cursor += 1;
                total += p;
                if hops[i].min(hops[j]) <= 2 {
                    near += p;
                }
            }
        }
        assert!(
            near / total >= 0.9,
            "interface share {:.3} below 0.9",
            near / total
        );
    }

    #[test]
    fn l2_residual_spread_wider_than_robust() {
        let fam = builtin::two_box_attached();
        let (shape, mesh) = mesh_for(&fam, 0, 56, 900);
        let op = ShapeOperator::build(&shape, &mesh, EnergyParams::default(), None).unwrap();
        let robust = evaluate_regularizer(&op, 8, RegularizerNorm::Robust, 3);
        let l2 = evaluate_regularizer(&op, 8, RegularizerNorm::L2, 3);
        let iqr = |per_edge: &[f64]| {
            let mut v: Vec<f64> = per_edge.to_vec();
            let norm: f64 = v.iter().sum::<f64>().max(1e-300);
            for x in v.iter_mut() {
                *x /= norm;
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let q = |f: f64| v[(f * (v.len() - 1) as f64) as usize];
            q(0.75) - q(0.25)
        };
        // identical fields, different penalties: the squared penalty
        // concentrates normalized mass on the few large interface residuals,
        // so the robust distribution is the wider one
        assert!(iqr(&l2.per_edge) <= iqr(&robust.per_edge) + 1e-12);
    }

    use nalgebra::Vector3;
}
