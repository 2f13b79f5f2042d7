//! Conformation type and small vector-geometry helpers shared by the
//! builders, samplers and metrics.

use crate::error::{Error, Result};

/// Cartesian coordinates of one conformation, one `[x, y, z]` row per atom.
pub type Conformation = Vec<[f64; 3]>;

pub fn centroid(c: &[[f64; 3]]) -> [f64; 3] {
    let n = c.len().max(1) as f64;
    let mut m = [0.0; 3];
    for p in c {
        for k in 0..3 {
            m[k] += p[k];
        }
    }
    for k in 0..3 {
        m[k] /= n;
    }
    m
}

/// Subtracts the centroid, returning a zero-mean copy.
pub fn centered(c: &[[f64; 3]]) -> Conformation {
    let m = centroid(c);
    c.iter()
        .map(|p| [p[0] - m[0], p[1] - m[1], p[2] - m[2]])
        .collect()
}

/// Projects in place to zero mean per spatial axis.
pub fn project_com(c: &mut [[f64; 3]]) {
    let m = centroid(c);
    for p in c.iter_mut() {
        for k in 0..3 {
            p[k] -= m[k];
        }
    }
}

pub fn flatten(c: &[[f64; 3]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * c.len());
    for p in c {
        out.extend_from_slice(p);
    }
    out
}

pub fn unflatten(x: &[f64]) -> Result<Conformation> {
    if !x.len().is_multiple_of(3) {
        return Err(Error::Shape(format!(
            "flat coordinate vector of length {} is not a multiple of 3",
            x.len()
        )));
    }
    Ok(x.chunks_exact(3).map(|p| [p[0], p[1], p[2]]).collect())
}

pub fn all_finite(c: &[[f64; 3]]) -> bool {
    c.iter().all(|p| p.iter().all(|v| v.is_finite()))
}

pub fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub fn normalize(a: [f64; 3]) -> Result<[f64; 3]> {
    let n = norm(a);
    if n < 1e-12 {
        return Err(Error::DegenerateGeometry(
            "cannot normalize a near-zero vector".into(),
        ));
    }
    Ok(scale(a, 1.0 / n))
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm(sub(a, b))
}

/// Interior angle a-b-c in degrees.
pub fn bond_angle_deg(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> Result<f64> {
    let u = normalize(sub(a, b))?;
    let v = normalize(sub(c, b))?;
    Ok(dot(u, v).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Signed dihedral a-b-c-d in degrees, in (-180, 180].
///
/// Fails with a degenerate-geometry error when either bonded triple is
/// collinear, which leaves the torsion undefined.
pub fn dihedral_deg(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> Result<f64> {
    let b1 = sub(b, a);
    let b2 = sub(c, b);
    let b3 = sub(d, c);
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let scale_ref = norm(b1).max(norm(b2)).max(norm(b3));
    let tol = 1e-9 * scale_ref * scale_ref;
    if norm(n1) <= tol || norm(n2) <= tol {
        return Err(Error::DegenerateGeometry(
            "collinear atom triple leaves the dihedral undefined".into(),
        ));
    }
    let y = dot(cross(n1, n2), normalize(b2)?);
    let x = dot(n1, n2);
    let mut phi = y.atan2(x).to_degrees();
    if phi <= -180.0 {
        phi += 360.0;
    }
    Ok(phi)
}

/// Wraps an angle in degrees to (-180, 180].
pub fn wrap_deg(mut a: f64) -> f64 {
    a = a.rem_euclid(360.0);
    if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Applies `R p + t` to every atom.
pub fn rigid_transform(c: &[[f64; 3]], r: &[[f64; 3]; 3], t: [f64; 3]) -> Conformation {
    c.iter()
        .map(|p| {
            [
                r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
                r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
                r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2],
            ]
        })
        .collect()
}
