//! Canonical surface samplers for the eight shape classes. These produce
//! points on the un-posed parametric surface; pose, scale, jitter, and
//! normalization happen in `generate_shape`.

use rand::Rng;

use super::ShapeKind;
use crate::rng::normal;

pub const CUBE_HALF_WIDTH: f64 = 1.0;

const CYLINDER_RADIUS: f64 = 1.0;
const CYLINDER_HALF_HEIGHT: f64 = 1.0;
const TORUS_MAJOR: f64 = 0.7;
const TORUS_MINOR: f64 = 0.3;
const ELLIPSOID_AXES: [f64; 3] = [1.0, 0.45, 0.25];
const PYRAMID_BASE_Z: f64 = -0.8;
const PYRAMID_APEX: [f64; 3] = [0.0, 0.0, 1.0];

pub fn sample_surface<G: Rng>(kind: ShapeKind, n: usize, rng: &mut G) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| match kind {
            ShapeKind::Sphere => sphere(rng),
            ShapeKind::Cube => cube(rng),
            ShapeKind::Cylinder => cylinder(rng),
            ShapeKind::Cone => cone(rng),
            ShapeKind::Torus => torus(rng),
            ShapeKind::Pyramid => pyramid(rng),
            ShapeKind::Ellipsoid => ellipsoid(rng),
            ShapeKind::PlaneCross => plane_cross(rng),
        })
        .collect()
}

fn sphere<G: Rng>(rng: &mut G) -> [f64; 3] {
    loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-9 {
            return [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    }
}

fn cube<G: Rng>(rng: &mut G) -> [f64; 3] {
    let face = rng.gen_range(0..6u8);
    let u = rng.gen_range(-CUBE_HALF_WIDTH..CUBE_HALF_WIDTH);
    let v = rng.gen_range(-CUBE_HALF_WIDTH..CUBE_HALF_WIDTH);
    let w = CUBE_HALF_WIDTH * if face % 2 == 0 { 1.0 } else { -1.0 };
    match face / 2 {
        0 => [w, u, v],
        1 => [u, w, v],
        _ => [u, v, w],
    }
}

fn cylinder<G: Rng>(rng: &mut G) -> [f64; 3] {
    let lateral_area = std::f64::consts::TAU * CYLINDER_RADIUS * 2.0 * CYLINDER_HALF_HEIGHT;
    let cap_area = 2.0 * std::f64::consts::PI * CYLINDER_RADIUS * CYLINDER_RADIUS;
    if rng.gen::<f64>() < lateral_area / (lateral_area + cap_area) {
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = rng.gen_range(-CYLINDER_HALF_HEIGHT..CYLINDER_HALF_HEIGHT);
        [CYLINDER_RADIUS * theta.cos(), CYLINDER_RADIUS * theta.sin(), z]
    } else {
        let z = CYLINDER_HALF_HEIGHT * if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let r = CYLINDER_RADIUS * rng.gen::<f64>().sqrt();
        let theta = rng.gen_range(0.0..std::f64::consts::TAU);
        [r * theta.cos(), r * theta.sin(), z]
    }
}

fn cone<G: Rng>(rng: &mut G) -> [f64; 3] {
    // Apex (0,0,1), base disk radius 1 at z = -1.
    let slant = 5.0f64.sqrt();
    let lateral_area = std::f64::consts::PI * slant;
    let base_area = std::f64::consts::PI;
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    if rng.gen::<f64>() < lateral_area / (lateral_area + base_area) {
        // Uniform over the lateral surface: radial density grows linearly
        // from the apex.
        let s = rng.gen::<f64>().sqrt();
        [s * theta.cos(), s * theta.sin(), 1.0 - 2.0 * s]
    } else {
        let r = rng.gen::<f64>().sqrt();
        [r * theta.cos(), r * theta.sin(), -1.0]
    }
}

fn torus<G: Rng>(rng: &mut G) -> [f64; 3] {
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    // Rejection on the tube angle corrects for the varying circumference.
    let phi = loop {
        let phi = rng.gen_range(0.0..std::f64::consts::TAU);
        let accept = (TORUS_MAJOR + TORUS_MINOR * phi.cos()) / (TORUS_MAJOR + TORUS_MINOR);
        if rng.gen::<f64>() < accept {
            break phi;
        }
    };
    let ring = TORUS_MAJOR + TORUS_MINOR * phi.cos();
    [ring * theta.cos(), ring * theta.sin(), TORUS_MINOR * phi.sin()]
}

fn pyramid<G: Rng>(rng: &mut G) -> [f64; 3] {
    let corners = [
        [-1.0, -1.0, PYRAMID_BASE_Z],
        [1.0, -1.0, PYRAMID_BASE_Z],
        [1.0, 1.0, PYRAMID_BASE_Z],
        [-1.0, 1.0, PYRAMID_BASE_Z],
    ];
    let face_area = triangle_area(PYRAMID_APEX, corners[0], corners[1]);
    let base_area = 4.0;
    let total = 4.0 * face_area + base_area;
    if rng.gen::<f64>() < base_area / total {
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), PYRAMID_BASE_Z]
    } else {
        let f = rng.gen_range(0..4usize);
        sample_triangle(PYRAMID_APEX, corners[f], corners[(f + 1) % 4], rng)
    }
}

fn ellipsoid<G: Rng>(rng: &mut G) -> [f64; 3] {
    let p = sphere(rng);
    [p[0] * ELLIPSOID_AXES[0], p[1] * ELLIPSOID_AXES[1], p[2] * ELLIPSOID_AXES[2]]
}

fn plane_cross<G: Rng>(rng: &mut G) -> [f64; 3] {
    let u = rng.gen_range(-1.0..1.0);
    let v = rng.gen_range(-1.0..1.0);
    if rng.gen::<bool>() {
        [u, v, 0.0]
    } else {
        [u, 0.0, v]
    }
}

fn triangle_area(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let cx = ab[1] * ac[2] - ab[2] * ac[1];
    let cy = ab[2] * ac[0] - ab[0] * ac[2];
    let cz = ab[0] * ac[1] - ab[1] * ac[0];
    0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
}

fn sample_triangle<G: Rng>(a: [f64; 3], b: [f64; 3], c: [f64; 3], rng: &mut G) -> [f64; 3] {
    let (mut u, mut v) = (rng.gen::<f64>(), rng.gen::<f64>());
    if u + v > 1.0 {
        u = 1.0 - u;
        v = 1.0 - v;
    }
    std::array::from_fn(|d| a[d] + u * (b[d] - a[d]) + v * (c[d] - a[d]))
}
