//! Shape-family construction: JSON spec parsing plus the bundled synthetic
//! families used by the benchmarks and the test corpus.

use super::{ImplicitGenerator, LatentAxisMap, LatentCode, PartSpec, PrimitiveKind};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Versioned on-disk description of a shape family.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FamilySpec {
    pub version: u32,
    pub name: String,
    pub q: usize,
    pub blend_radius: f64,
    pub parts: Vec<PartSpec>,
    pub axes: Vec<LatentAxisMap>,
    pub instances: Vec<InstanceSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub z: Vec<f64>,
}

/// A generator shared by a set of latent-code instances.
#[derive(Debug, Clone)]
pub struct ShapeFamily {
    pub name: String,
    pub generator: ImplicitGenerator,
    pub instances: Vec<LatentCode>,
}

impl ShapeFamily {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn to_spec(&self) -> FamilySpec {
        FamilySpec {
            version: 1,
            name: self.name.clone(),
            q: self.generator.latent_dim(),
            blend_radius: self.generator.blend_radius(),
            parts: self.generator.parts().to_vec(),
            axes: self.generator.axes().to_vec(),
            instances: self
                .instances
                .iter()
                .map(|z| InstanceSpec {
                    z: z.as_slice().to_vec(),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_spec())?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

impl FamilySpec {
    pub fn into_family(self) -> Result<ShapeFamily> {
        if self.version != 1 {
            return Err(Error::InvalidSpec(format!(
                "unsupported family spec version {}",
                self.version
            )));
        }
        let generator = ImplicitGenerator::new(self.parts, self.axes, self.blend_radius, self.q)?;
        let mut instances = Vec::with_capacity(self.instances.len());
        for inst in self.instances {
            if inst.z.len() != self.q {
                return Err(Error::InvalidSpec(format!(
                    "instance latent dimension {} does not match q = {}",
                    inst.z.len(),
                    self.q
                )));
            }
            instances.push(LatentCode::new(inst.z)?);
        }
        Ok(ShapeFamily {
            name: self.name,
            generator,
            instances,
        })
    }
}

/// Parses a family spec file, reporting the line of malformed JSON.
pub fn build_family(path: &Path) -> Result<ShapeFamily> {
    let text = std::fs::read_to_string(path)?;
    let spec: FamilySpec = serde_json::from_str(&text).map_err(|e| Error::SpecParse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    spec.into_family()
}

fn box_part(half: [f64; 3], center: [f64; 3], label: u32) -> PartSpec {
    PartSpec {
        kind: PrimitiveKind::Box,
        half_extents: half,
        rotation: [1.0, 0.0, 0.0, 0.0],
        translation: center,
        label,
    }
}

fn diag_map(part: usize, axis: usize, d: [f64; 3], b: [f64; 3]) -> LatentAxisMap {
    LatentAxisMap {
        part,
        axis,
        linear: [d[0], 0.0, 0.0, 0.0, d[1], 0.0, 0.0, 0.0, d[2]],
        translation: b,
    }
}

fn rot_z_map(part: usize, axis: usize, theta: f64, pivot: [f64; 3]) -> LatentAxisMap {
    // A = theta * (e3 x), b = -A * pivot keeps the pivot fixed
    LatentAxisMap {
        part,
        axis,
        linear: [0.0, -theta, 0.0, theta, 0.0, 0.0, 0.0, 0.0, 0.0],
        translation: [theta * pivot[1], -theta * pivot[0], 0.0],
    }
}

fn translation_map(part: usize, axis: usize, dir: [f64; 3]) -> LatentAxisMap {
    LatentAxisMap {
        part,
        axis,
        linear: [0.0; 9],
        translation: dir,
    }
}

/// Bundled synthetic families with exact piecewise-affine ground truth.
pub mod builtin {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    pub fn names() -> &'static [&'static str] {
        &[
            "two_box_affine",
            "two_box_attached",
            "bend_chain",
            "rigid_pair",
            "rotator",
            "partial_pair",
            "boxes_row_2",
            "boxes_row_3",
            "boxes_row_4",
            "boxes_row_5",
            "boxes_row_6",
            "chairs20",
        ]
    }

    pub fn build(name: &str) -> Option<ShapeFamily> {
        match name {
            "two_box_affine" => Some(two_box_affine()),
            "two_box_attached" => Some(two_box_attached()),
            "bend_chain" => Some(bend_chain()),
            "rigid_pair" => Some(rigid_pair()),
            "rotator" => Some(rotator()),
            "partial_pair" => Some(partial_pair()),
            "boxes_row_2" => Some(boxes_row(2)),
            "boxes_row_3" => Some(boxes_row(3)),
            "boxes_row_4" => Some(boxes_row(4)),
            "boxes_row_5" => Some(boxes_row(5)),
            "boxes_row_6" => Some(boxes_row(6)),
            "chairs20" => Some(chairs20()),
            _ => None,
        }
    }

    /// Two disjoint boxes; the second undergoes an anisotropic scaling with a
    /// small shear. Hard-min union, so ownership is exact everywhere.
    pub fn two_box_affine() -> ShapeFamily {
        let parts = vec![
            box_part([0.28, 0.30, 0.32], [-0.5, 0.0, 0.0], 0),
            box_part([0.22, 0.26, 0.30], [0.55, 0.0, 0.0], 1),
        ];
        // stretch about the part center: b = -A * t0
        let a = [0.45, 0.0, 0.10, 0.0, -0.30, 0.0, 0.0, 0.0, 0.20];
        let t0 = [0.55, 0.0, 0.0];
        let b = [
            -(a[0] * t0[0] + a[1] * t0[1] + a[2] * t0[2]),
            -(a[3] * t0[0] + a[4] * t0[1] + a[5] * t0[2]),
            -(a[6] * t0[0] + a[7] * t0[1] + a[8] * t0[2]),
        ];
        let axes = vec![LatentAxisMap {
            part: 1,
            axis: 0,
            linear: a,
            translation: b,
        }];
        let generator = ImplicitGenerator::new(parts, axes, 0.0, 1).unwrap();
        ShapeFamily {
            name: "two_box_affine".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![1.0]).unwrap(),
            ],
        }
    }

    /// Two attached boxes with differing cross sections; the second stretches
    /// anisotropically about the joint plane. Smooth-min union.
    pub fn two_box_attached() -> ShapeFamily {
        let parts = vec![
            box_part([0.45, 0.28, 0.28], [-0.25, 0.0, 0.0], 0),
            box_part([0.35, 0.20, 0.20], [0.50, 0.0, 0.0], 1),
        ];
        // anisotropic cross-section scaling about the part center: keeps the
        // joint attached while the moving faces stay constraint-pinned
        let a = [0.0, 0.0, 0.0, 0.0, -0.30, 0.0, 0.0, 0.0, 0.25];
        let axes = vec![LatentAxisMap {
            part: 1,
            axis: 0,
            linear: a,
            translation: [0.0, 0.0, 0.0],
        }];
        let generator = ImplicitGenerator::new(parts, axes, 0.02, 1).unwrap();
        ShapeFamily {
            name: "two_box_attached".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![1.0]).unwrap(),
            ],
        }
    }

    /// Four-part chain whose single axis stretches the first segment and
    /// progressively rotates the rest: an affine motion plus a bend.
    pub fn bend_chain() -> ShapeFamily {
        let centers = [-0.66, -0.22, 0.22, 0.66];
        let parts: Vec<PartSpec> = centers
            .iter()
            .enumerate()
            .map(|(k, &x)| box_part([0.23, 0.18, 0.18], [x, 0.0, 0.0], k as u32))
            .collect();
        let mut axes = vec![diag_map(0, 0, [0.3, 0.0, 0.0], [0.3 * 0.89, 0.0, 0.0])];
        for k in 1..4 {
            let joint = (centers[k - 1] + centers[k]) / 2.0;
            axes.push(rot_z_map(k, 0, 0.12 * k as f64, [joint, 0.0, 0.0]));
        }
        let generator = ImplicitGenerator::new(parts, axes, 0.02, 1).unwrap();
        ShapeFamily {
            name: "bend_chain".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![1.0]).unwrap(),
            ],
        }
    }

    /// Both parts share one rigid latent motion (rotation + translation), so
    /// every tangent field is exactly rigid.
    pub fn rigid_pair() -> ShapeFamily {
        let parts = vec![
            box_part([0.3, 0.25, 0.2], [-0.45, 0.0, 0.0], 0),
            box_part([0.22, 0.3, 0.26], [0.45, 0.1, 0.0], 1),
        ];
        let mut axes = Vec::new();
        for part in 0..2 {
            axes.push(LatentAxisMap {
                part,
                axis: 0,
                linear: [0.0, -0.35, 0.0, 0.35, 0.0, 0.0, 0.0, 0.0, 0.0],
                translation: [0.08, 0.05, 0.0],
            });
        }
        let generator = ImplicitGenerator::new(parts, axes, 0.0, 1).unwrap();
        ShapeFamily {
            name: "rigid_pair".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![0.6]).unwrap(),
            ],
        }
    }

    /// An anchor box plus a box that rotates by a large angle: the point
    /// trajectories curve, so one-shot transport is visibly worse than
    /// stepping through intermediates.
    pub fn rotator() -> ShapeFamily {
        let parts = vec![
            box_part([0.25, 0.25, 0.25], [-0.55, 0.0, 0.0], 0),
            box_part([0.38, 0.16, 0.22], [0.45, 0.0, 0.0], 1),
        ];
        let axes = vec![rot_z_map(1, 0, 0.55, [0.45, 0.0, 0.0])];
        let generator = ImplicitGenerator::new(parts, axes, 0.0, 1).unwrap();
        ShapeFamily {
            name: "rotator".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![1.0]).unwrap(),
            ],
        }
    }

    /// Attached pair where the second part shrinks into the interior of the
    /// first as the axis goes to 1: a structurally partial counterpart.
    pub fn partial_pair() -> ShapeFamily {
        let parts = vec![
            box_part([0.35, 0.30, 0.30], [-0.30, 0.0, 0.0], 0),
            box_part([0.25, 0.20, 0.20], [0.28, 0.0, 0.0], 1),
        ];
        // P(1) = 0.1 I, target center inside part 0
        let a = [-0.9, 0.0, 0.0, 0.0, -0.9, 0.0, 0.0, 0.0, -0.9];
        let target = [-0.30, 0.0, 0.0];
        let b = [target[0] - 0.1 * 0.28, target[1], target[2]];
        let axes = vec![LatentAxisMap {
            part: 1,
            axis: 0,
            linear: a,
            translation: b,
        }];
        let generator = ImplicitGenerator::new(parts, axes, 0.02, 1).unwrap();
        ShapeFamily {
            name: "partial_pair".into(),
            generator,
            instances: vec![
                LatentCode::new(vec![0.0]).unwrap(),
                LatentCode::new(vec![1.0]).unwrap(),
            ],
        }
    }

    /// `k` disjoint boxes in a row, each translated by its own latent axis.
    pub fn boxes_row(k: usize) -> ShapeFamily {
        assert!((2..=6).contains(&k));
        let pitch = 0.34;
        let dirs = [
            [0.0, 0.0, 0.22],
            [0.0, 0.20, 0.0],
            [0.0, 0.12, 0.18],
            [0.0, -0.2, 0.05],
            [0.0, 0.05, -0.21],
            [0.0, -0.14, -0.14],
        ];
        let mut parts = Vec::new();
        let mut axes = Vec::new();
        for i in 0..k {
            let x = (i as f64 - (k as f64 - 1.0) / 2.0) * pitch;
            parts.push(box_part([0.15, 0.22, 0.26], [x, 0.0, 0.0], i as u32));
            axes.push(translation_map(i, i, dirs[i]));
        }
        let generator = ImplicitGenerator::new(parts, axes, 0.0, k).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let instances = (0..4)
            .map(|_| {
                LatentCode::new((0..k).map(|_| rng.random::<f64>() * 1.2 - 0.6).collect()).unwrap()
            })
            .collect();
        ShapeFamily {
            name: format!("boxes_row_{k}"),
            generator,
            instances,
        }
    }

    /// Twenty chair-like shapes: seat, back, and four legs, with axes for leg
    /// length, back tilt, back height, a structural back-removal axis, global
    /// scale, lean, seat thickness, and a rigid translation.
    pub fn chairs20() -> ShapeFamily {
        let seat = box_part([0.45, 0.40, 0.05], [0.0, 0.0, 0.0], 0);
        let back = box_part([0.42, 0.05, 0.35], [0.0, -0.33, 0.38], 1);
        let leg_positions = [
            [0.36, 0.32, -0.31],
            [-0.36, 0.32, -0.31],
            [0.36, -0.32, -0.31],
            [-0.36, -0.32, -0.31],
        ];
        let mut parts = vec![seat, back];
        for p in leg_positions {
            parts.push(box_part([0.05, 0.05, 0.28], p, 2));
        }

        let mut axes = Vec::new();
        // axis 0: leg lengthening about the attachment plane z = -0.03
        for leg in 2..6 {
            axes.push(diag_map(leg, 0, [0.0, 0.0, 0.35], [0.0, 0.0, 0.35 * 0.03]));
        }
        // axis 1: back tilt about the seat-back joint line
        {
            let theta = 0.30;
            let pivot = [0.0, -0.28, 0.03];
            // A = theta * (e1 x): rotates y toward z
            axes.push(LatentAxisMap {
                part: 1,
                axis: 1,
                linear: [0.0, 0.0, 0.0, 0.0, 0.0, -theta, 0.0, theta, 0.0],
                translation: [0.0, theta * pivot[2], -theta * pivot[1]],
            });
        }
        // axis 2: back height about its bottom edge z = 0.03
        axes.push(diag_map(1, 2, [0.0, 0.0, 0.30], [0.0, 0.0, -0.30 * 0.03]));
        // axis 3: structural back removal (shrink + sink into the seat)
        {
            let a = [-0.88, 0.0, 0.0, 0.0, -0.88, 0.0, 0.0, 0.0, -0.95];
            let p1 = [0.12 * 0.0, 0.12 * -0.33, 0.05 * 0.38];
            let target = [0.0, -0.10, 0.0];
            axes.push(LatentAxisMap {
                part: 1,
                axis: 3,
                linear: a,
                translation: [target[0] - p1[0], target[1] - p1[1], target[2] - p1[2]],
            });
        }
        // axis 4: global uniform scale about the origin
        for part in 0..6 {
            axes.push(LatentAxisMap {
                part,
                axis: 4,
                linear: [0.08, 0.0, 0.0, 0.0, 0.08, 0.0, 0.0, 0.0, 0.08],
                translation: [0.0, 0.0, 0.0],
            });
        }
        // axis 5: legs lean sideways together (shared shear about z = -0.03)
        for leg in 2..6 {
            axes.push(LatentAxisMap {
                part: leg,
                axis: 5,
                linear: [0.0, 0.0, 0.22, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                translation: [0.22 * 0.03, 0.0, 0.0],
            });
        }
        // axis 6: seat thickness about its top plane z = 0.05
        axes.push(diag_map(0, 6, [0.0, 0.0, 0.30], [0.0, 0.0, -0.30 * 0.05]));
        // axis 7: rigid translation of the whole shape
        for part in 0..6 {
            axes.push(translation_map(part, 7, [0.15, 0.0, 0.0]));
        }

        let generator = ImplicitGenerator::new(parts, axes, 0.02, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut instances = Vec::new();
        for i in 0..20 {
            let sunk = i % 4 == 3; // five structurally partial members
            let mut z = vec![0.0; 8];
            z[0] = rng.random::<f64>() * 1.2 - 0.4;
            z[1] = rng.random::<f64>() * 1.0 - 0.5;
            z[2] = rng.random::<f64>() * 1.0 - 0.4;
            z[3] = if sunk { 1.0 } else { 0.0 };
            z[4] = rng.random::<f64>() * 0.8 - 0.4;
            z[5] = rng.random::<f64>() * 1.0 - 0.5;
            z[6] = rng.random::<f64>() * 1.0 - 0.4;
            z[7] = rng.random::<f64>() * 0.8 - 0.4;
            instances.push(LatentCode::new(z).unwrap());
        }
        ShapeFamily {
            name: "chairs20".into(),
            generator,
            instances,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::{ground_truth_correspondence, GroundTruth};
    use nalgebra::Vector3;
    use rand::prelude::*;

    #[test]
    fn family_spec_roundtrip() {
        let fam = builtin::two_box_affine();
        let spec = fam.to_spec();
        let text = serde_json::to_string(&spec).unwrap();
        let back: FamilySpec = serde_json::from_str(&text).unwrap();
        let fam2 = back.into_family().unwrap();
        assert_eq!(fam2.len(), fam.len());
        assert_eq!(fam2.generator.parts().len(), 2);
    }

    #[test]
    fn malformed_spec_reports_line() {
        let dir = std::env::temp_dir().join("coshape_family_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("broken.json");
        std::fs::write(&path, "{\n  \"version\": 1,\n  bad\n}").unwrap();
        match build_family(&path) {
            Err(Error::SpecParse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_part_list_rejected() {
        let spec = FamilySpec {
            version: 1,
            name: "empty".into(),
            q: 1,
            blend_radius: 0.0,
            parts: vec![],
            axes: vec![],
            instances: vec![],
        };
        assert!(spec.into_family().is_err());
    }

    #[test]
    fn builtin_families_build_and_validate() {
        for name in builtin::names() {
            let fam = builtin::build(name).unwrap();
            assert!(!fam.is_empty(), "{name} has no instances");
            for z in &fam.instances {
                fam.generator.at(z).unwrap();
            }
        }
    }

    #[test]
    fn two_box_family_is_exactly_piecewise_affine() {
        let fam = builtin::two_box_affine();
        let z0 = &fam.instances[0];
        let z1 = &fam.instances[1];
        let shape = fam.generator.at(z0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut tested = 0;
        while tested < 40 {
            let raw = Vector3::new(
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
                rng.random::<f64>() * 2.0 - 1.0,
            );
            let x = shape.project_newton(&raw, 1e-12, 60);
            if shape.value(&x).abs() > 1e-9 {
                continue;
            }
            tested += 1;
            match ground_truth_correspondence(&fam.generator, &x, z0, z1, 1e-6, 1e-9).unwrap() {
                GroundTruth::Owned { mapped, .. } => {
                    let target = fam.generator.at(z1).unwrap();
                    assert!(target.value(&mapped).abs() < 1e-6);
                }
                GroundTruth::BlendZone => {}
            }
        }
    }

    #[test]
    fn chairs_have_five_partial_members() {
        let fam = builtin::chairs20();
        assert_eq!(fam.len(), 20);
        let sunk = fam
            .instances
            .iter()
            .filter(|z| z.as_slice()[3] > 0.5)
            .count();
        assert_eq!(sunk, 5);
    }
}
