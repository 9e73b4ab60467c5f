//! Contact geometry and penalty forces.
//!
//! Dynamic boxes are sampled at their corners and edge midpoints; each sample
//! inside another box produces a contact along that box's closest face.
//! Spheres use exact closest-point tests.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::FramePose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Cuboid { half: [f64; 3] },
    Sphere { radius: f64 },
}

/// Static axis-aligned box (table, bump).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub name: String,
    pub center: Vector3<f64>,
    pub half: Vector3<f64>,
    pub friction: f64,
}

impl Obstacle {
    pub fn top(&self) -> f64 {
        self.center.z + self.half.z
    }

    pub fn corners(&self) -> [Vector3<f64>; 8] {
        box_corners(&self.half).map(|c| c + self.center)
    }
}

/// Geometric contact. `normal` points from the other shape into the shape
/// being pushed; `point` is where the force acts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub depth: f64,
}

pub fn box_corners(half: &Vector3<f64>) -> [Vector3<f64>; 8] {
    std::array::from_fn(|i| {
        let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
        Vector3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z)
    })
}

/// Corners plus the 12 edge midpoints, in the box frame.
pub fn box_samples(half: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let mut out = box_corners(half).to_vec();
    for axis in 0..3 {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        for sa in [-1.0, 1.0] {
            for sb in [-1.0, 1.0] {
                let mut p = Vector3::zeros();
                p[a] = sa * half[a];
                p[b] = sb * half[b];
                out.push(p);
            }
        }
    }
    out
}

/// Local point inside a centred box: outward normal of the nearest face and depth.
fn inside_box(p: &Vector3<f64>, half: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    if (0..3).any(|k| p[k].abs() >= half[k]) {
        return None;
    }
    let mut best = (Vector3::zeros(), f64::INFINITY);
    for k in 0..3 {
        for sign in [1.0, -1.0] {
            let depth = half[k] - sign * p[k];
            if depth < best.1 {
                let mut n = Vector3::zeros();
                n[k] = sign;
                best = (n, depth);
            }
        }
    }
    Some(best)
}

pub fn point_in_aabb(p: &Vector3<f64>, obstacle: &Obstacle) -> Option<(Vector3<f64>, f64)> {
    inside_box(&(p - obstacle.center), &obstacle.half)
}

pub fn point_in_obb(
    p: &Vector3<f64>,
    pose: &FramePose,
    half: &Vector3<f64>,
) -> Option<(Vector3<f64>, f64)> {
    let local = pose.inverse().transform_point(p);
    inside_box(&local, half).map(|(n, d)| (pose.rotation * n, d))
}

/// Sphere against a box given in its own frame (`to_world` maps box to world).
fn sphere_box_local(
    center_local: &Vector3<f64>,
    radius: f64,
    half: &Vector3<f64>,
) -> Option<(Vector3<f64>, Vector3<f64>, f64)> {
    let closest = Vector3::from_fn(|k, _| center_local[k].clamp(-half[k], half[k]));
    let diff = center_local - closest;
    let dist = diff.norm();
    if dist > 1e-12 {
        if dist >= radius {
            return None;
        }
        return Some((closest, diff / dist, radius - dist));
    }
    let (n, depth) = inside_box(center_local, half)?;
    let surface = center_local + n * depth;
    Some((surface, n, depth + radius))
}

/// Sphere (the pushed shape) against a static box.
pub fn sphere_vs_aabb(center: &Vector3<f64>, radius: f64, obstacle: &Obstacle) -> Option<Contact> {
    sphere_box_local(&(center - obstacle.center), radius, &obstacle.half).map(|(p, n, d)| Contact {
        point: p + obstacle.center,
        normal: n,
        depth: d,
    })
}

/// Sphere (the pushed shape) against an oriented box.
pub fn sphere_vs_obb(
    center: &Vector3<f64>,
    radius: f64,
    pose: &FramePose,
    half: &Vector3<f64>,
) -> Option<Contact> {
    let local = pose.inverse().transform_point(center);
    sphere_box_local(&local, radius, half).map(|(p, n, d)| Contact {
        point: pose.transform_point(&p),
        normal: pose.rotation * n,
        depth: d,
    })
}

pub fn sphere_vs_sphere(
    a: &Vector3<f64>,
    ra: f64,
    b: &Vector3<f64>,
    rb: f64,
) -> Option<Contact> {
    let diff = a - b;
    let dist = diff.norm();
    if dist >= ra + rb || dist < 1e-12 {
        return None;
    }
    let n = diff / dist;
    Some(Contact {
        point: b + n * rb,
        normal: n,
        depth: ra + rb - dist,
    })
}

/// Oriented box (pushed) against a static box: box samples inside the
/// obstacle, plus obstacle corners inside the box.
pub fn obb_vs_aabb(pose: &FramePose, half: &Vector3<f64>, obstacle: &Obstacle) -> Vec<Contact> {
    let mut out = Vec::new();
    let reach = half.norm();
    let gap = (pose.translation - obstacle.center).abs() - obstacle.half;
    if gap.iter().any(|g| *g > reach) {
        return out;
    }
    for s in box_samples(half) {
        let p = pose.transform_point(&s);
        if let Some((n, depth)) = point_in_aabb(&p, obstacle) {
            out.push(Contact {
                point: p,
                normal: n,
                depth,
            });
        }
    }
    for c in obstacle.corners() {
        if let Some((n, depth)) = point_in_obb(&c, pose, half) {
            out.push(Contact {
                point: c,
                normal: -n,
                depth,
            });
        }
    }
    out
}

/// Penalty parameters resolved for one contact.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyLaw {
    pub stiffness: f64,
    pub damping_ratio: f64,
    pub friction: f64,
    pub reg_velocity: f64,
    /// Integration step, used to bound stiffness and viscous friction for stability.
    pub step: f64,
    pub stiffness_stability: f64,
    pub damping_stability: f64,
    pub friction_stability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForce {
    /// Force on the pushed shape.
    pub force: Vector3<f64>,
    pub normal: f64,
    pub tangential: f64,
}

impl PenaltyLaw {
    /// Spring-damper normal force clamped at zero and regularised Coulomb
    /// friction (`|f_t| ≤ μ f_n`, linear in slip below `reg_velocity`).
    /// `v_rel` is the velocity of the pushed shape relative to the other at the
    /// contact point; `effective_mass` is the reduced mass along the normal.
    pub fn force(&self, contact: &Contact, v_rel: &Vector3<f64>, effective_mass: f64) -> ContactForce {
        let omega_max = self.stiffness_stability / self.step;
        let k = self.stiffness.min(effective_mass * omega_max * omega_max);
        let c = (2.0 * self.damping_ratio * (k * effective_mass).sqrt())
            .min(self.damping_stability * effective_mass / self.step);
        let n = contact.normal;
        let vn = v_rel.dot(&n);
        let f_n = (k * contact.depth - c * vn).max(0.0);
        let v_t = v_rel - n * vn;
        let limit = self.friction * f_n;
        let viscous = (limit / self.reg_velocity).min(self.friction_stability * effective_mass / self.step);
        let mut f_t = -v_t * viscous;
        let mag = f_t.norm();
        if mag > limit {
            f_t *= limit / mag;
        }
        ContactForce {
            force: n * f_n + f_t,
            normal: f_n,
            tangential: f_t.norm(),
        }
    }
}

/// Reduced mass of a free rigid body along `n` at lever arm `r` from its COM.
pub fn body_effective_mass(
    mass: f64,
    inertia_world_inv: &nalgebra::Matrix3<f64>,
    r: &Vector3<f64>,
    n: &Vector3<f64>,
) -> f64 {
    let rn = r.cross(n);
    1.0 / (1.0 / mass + rn.dot(&(inertia_world_inv * rn)))
}

pub fn pose_of(position: &Vector3<f64>, orientation: &UnitQuaternion<f64>) -> FramePose {
    FramePose::new(orientation.to_rotation_matrix(), *position)
}
