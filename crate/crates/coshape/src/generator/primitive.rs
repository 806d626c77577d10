//! Signed distance functions for the rest-pose primitives, with analytic
//! gradients and a conservative smoothness margin used to detect evaluation
//! points near gradient kinks (surface creases, medial sets, tie loci).

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Axis-aligned box with the given half-extents.
    Box,
    /// Capsule along the local z axis: half-length `h.z`, radius `h.x`
    /// (`h.y` ignored). A zero half-length gives a sphere.
    Capsule,
    /// Finite cylinder along the local z axis: radius `h.x`, half-height `h.z`.
    Cylinder,
}

#[derive(Debug, Clone, Copy)]
pub struct SdfSample {
    pub value: f64,
    pub gradient: Vector3<f64>,
    /// Distance (in the local frame) to the nearest gradient discontinuity.
    /// Crossing a box face is C1 and does not reduce the margin; creases,
    /// interior medial ties, and core axes do.
    pub smooth_margin: f64,
}

pub fn sample(kind: PrimitiveKind, h: &Vector3<f64>, u: &Vector3<f64>) -> SdfSample {
    match kind {
        PrimitiveKind::Box => sample_box(h, u),
        PrimitiveKind::Capsule => sample_capsule(h.x, h.z, u),
        PrimitiveKind::Cylinder => sample_cylinder(h.x, h.z, u),
    }
}

/// Distance from `u` to the nearest box edge or corner (the surface creases).
fn box_crease_distance(h: &Vector3<f64>, u: &Vector3<f64>) -> f64 {
    let a = Vector3::new(u.x.abs(), u.y.abs(), u.z.abs());
    let mut best = f64::INFINITY;
    for i in 0..3 {
        for j in 0..3 {
            if j <= i {
                continue;
            }
            let k = 3 - i - j;
            let di = a[i] - h[i];
            let dj = a[j] - h[j];
            // nearest point on the infinite edge line, clamped along axis k
            let dk = (a[k] - h[k]).max(0.0);
            let d = (di * di + dj * dj + dk * dk).sqrt();
            best = best.min(d);
        }
    }
    best
}

fn sample_box(h: &Vector3<f64>, u: &Vector3<f64>) -> SdfSample {
    let q = Vector3::new(u.x.abs() - h.x, u.y.abs() - h.y, u.z.abs() - h.z);
    let crease = box_crease_distance(h, u);
    let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0));
    let out_norm = outside.norm();
    if out_norm > 0.0 {
        let mut grad = Vector3::zeros();
        for k in 0..3 {
            if q[k] > 0.0 {
                grad[k] = u[k].signum() * outside[k] / out_norm;
            }
        }
        SdfSample {
            value: out_norm,
            gradient: grad,
            smooth_margin: crease,
        }
    } else {
        let mut kmax = 0;
        for k in 1..3 {
            if q[k] > q[kmax] {
                kmax = k;
            }
        }
        let mut grad = Vector3::zeros();
        grad[kmax] = u[kmax].signum();
        // interior kinks: arg-max ties (medial set) and the central plane of
        // the owning axis
        let mut gap = f64::INFINITY;
        for k in 0..3 {
            if k != kmax {
                gap = gap.min(q[kmax] - q[k]);
            }
        }
        let margin = crease.min(gap).min(u[kmax].abs());
        SdfSample {
            value: q[kmax],
            gradient: grad,
            smooth_margin: margin.max(0.0),
        }
    }
}

fn sample_capsule(radius: f64, half_len: f64, u: &Vector3<f64>) -> SdfSample {
    let c = u.z.clamp(-half_len, half_len);
    let d = Vector3::new(u.x, u.y, u.z - c);
    let n = d.norm();
    if n < 1e-15 {
        // on the core segment; gradient direction is arbitrary
        return SdfSample {
            value: -radius,
            gradient: Vector3::new(1.0, 0.0, 0.0),
            smooth_margin: 0.0,
        };
    }
    SdfSample {
        value: n - radius,
        gradient: d / n,
        smooth_margin: n,
    }
}

fn sample_cylinder(radius: f64, half_h: f64, u: &Vector3<f64>) -> SdfSample {
    let rxy = (u.x * u.x + u.y * u.y).sqrt();
    let dr = rxy - radius;
    let dz = u.z.abs() - half_h;
    let rim = (dr * dr + dz * dz).sqrt();
    let er = if rxy > 1e-15 {
        Vector3::new(u.x / rxy, u.y / rxy, 0.0)
    } else {
        Vector3::new(1.0, 0.0, 0.0)
    };
    let ez = Vector3::new(0.0, 0.0, u.z.signum());
    if dr > 0.0 || dz > 0.0 {
        let vr = dr.max(0.0);
        let vz = dz.max(0.0);
        let out = (vr * vr + vz * vz).sqrt();
        let grad = (er * vr + ez * vz) / out;
        let mut margin = rim;
        if dr > 0.0 {
            margin = margin.min(rxy); // radial direction undefined on the axis
        }
        SdfSample {
            value: out,
            gradient: grad,
            smooth_margin: margin.max(1e-12),
        }
    } else {
        let (value, grad) = if dr > dz { (dr, er) } else { (dz, ez) };
        let mut margin = rim.min((dr - dz).abs());
        if dr > dz {
            margin = margin.min(rxy);
        } else {
            margin = margin.min(u.z.abs());
        }
        SdfSample {
            value,
            gradient: grad,
            smooth_margin: margin.max(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn box_center_and_axis_points() {
        let h = Vector3::new(0.5, 0.5, 0.5);
        let at = |x: f64, y: f64, z: f64| sample_box(&h, &Vector3::new(x, y, z));
        assert_relative_eq!(at(0.0, 0.0, 0.0).value, -0.5);
        assert_relative_eq!(at(1.5, 0.0, 0.0).value, 1.0);
        assert_relative_eq!(at(1.5, 0.0, 0.0).gradient, Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(at(0.0, 0.0, 0.5).value, 0.0);
        let s = at(1.5, 1.5, 0.0);
        assert_relative_eq!(s.value, 2.0_f64.sqrt());
    }

    #[test]
    fn near_face_points_keep_healthy_margin() {
        let h = Vector3::new(0.5, 0.4, 0.3);
        // just outside / just inside a face, far from edges
        let s_out = sample_box(&h, &Vector3::new(0.5001, 0.0, 0.0));
        let s_in = sample_box(&h, &Vector3::new(0.4999, 0.0, 0.0));
        assert!(s_out.smooth_margin > 0.2);
        assert!(s_in.smooth_margin > 0.05);
        // near an edge the margin collapses
        let s_edge = sample_box(&h, &Vector3::new(0.5, 0.4, 0.0));
        assert!(s_edge.smooth_margin < 1e-12);
    }

    #[test]
    fn capsule_is_sphere_at_zero_length() {
        let s = sample_capsule(1.0, 0.0, &Vector3::new(0.0, 2.0, 0.0));
        assert_relative_eq!(s.value, 1.0);
        assert_relative_eq!(s.gradient, Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn cylinder_side_and_cap() {
        let side = sample_cylinder(1.0, 0.5, &Vector3::new(2.0, 0.0, 0.0));
        assert_relative_eq!(side.value, 1.0);
        assert_relative_eq!(side.gradient, Vector3::new(1.0, 0.0, 0.0));
        let cap = sample_cylinder(1.0, 0.5, &Vector3::new(0.0, 0.0, 2.0));
        assert_relative_eq!(cap.value, 1.5);
        assert_relative_eq!(cap.gradient, Vector3::new(0.0, 0.0, 1.0));
        let inside = sample_cylinder(1.0, 0.5, &Vector3::new(0.0, 0.2, 0.0));
        assert!(inside.value < 0.0);
    }

    #[test]
    fn gradients_match_finite_differences_away_from_kinks() {
        let h = Vector3::new(0.4, 0.3, 0.6);
        let cases = [
            (PrimitiveKind::Box, Vector3::new(0.9, 0.1, 0.2)),
            (PrimitiveKind::Box, Vector3::new(0.1, 0.05, 0.2)),
            (PrimitiveKind::Box, Vector3::new(0.41, 0.1, 0.2)),
            (PrimitiveKind::Capsule, Vector3::new(0.5, 0.2, 0.9)),
            (PrimitiveKind::Cylinder, Vector3::new(0.6, 0.1, 0.2)),
            (PrimitiveKind::Cylinder, Vector3::new(0.1, 0.05, 0.9)),
        ];
        let eps = 1e-6;
        for (kind, u) in cases {
            let s = sample(kind, &h, &u);
            assert!(s.smooth_margin > 10.0 * eps, "test point too close to kink");
            for k in 0..3 {
                let mut up = u;
                let mut um = u;
                up[k] += eps;
                um[k] -= eps;
                let fd = (sample(kind, &h, &up).value - sample(kind, &h, &um).value) / (2.0 * eps);
                assert_relative_eq!(s.gradient[k], fd, epsilon = 1e-6);
            }
        }
    }
}
