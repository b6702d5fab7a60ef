//! Seeded synthetic shape clouds standing in for benchmark datasets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::models::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    /// Sphere body (part 0) with a half-ring handle (part 1).
    TwoPart,
}

impl ShapeKind {
    pub const CLASSES: [ShapeKind; 4] = [ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cylinder, ShapeKind::Torus];

    pub fn name(&self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::TwoPart => "two_part",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "cylinder" => Ok(ShapeKind::Cylinder),
            "torus" => Ok(ShapeKind::Torus),
            "two_part" => Ok(ShapeKind::TwoPart),
            other => Err(Error::InvalidArgument(format!("unknown shape kind {other:?}"))),
        }
    }
}

type Sample = ([f64; 3], [f64; 3]);

fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

fn sphere_point<R: Rng + ?Sized>(rng: &mut R, radius: f64) -> Sample {
    let u = unit_vector(rng);
    (u.map(|c| c * radius), u)
}

fn cube_point<R: Rng + ?Sized>(rng: &mut R) -> Sample {
    let face = rng.random_range(0..6);
    let axis = face / 2;
    let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
    let mut p = [0.0; 3];
    let mut n = [0.0; 3];
    for (i, v) in p.iter_mut().enumerate() {
        *v = if i == axis { sign } else { rng.random::<f64>() * 2.0 - 1.0 };
    }
    n[axis] = sign;
    (p, n)
}

fn cylinder_point<R: Rng + ?Sized>(rng: &mut R) -> Sample {
    // Side area 4π against 2π for both caps together.
    if rng.random::<f64>() < 2.0 / 3.0 {
        let t = rng.random::<f64>() * 2.0 * PI;
        let z = rng.random::<f64>() * 2.0 - 1.0;
        ([t.cos(), t.sin(), z], [t.cos(), t.sin(), 0.0])
    } else {
        let t = rng.random::<f64>() * 2.0 * PI;
        let r = rng.random::<f64>().sqrt();
        let s = if rng.random::<bool>() { 1.0 } else { -1.0 };
        ([r * t.cos(), r * t.sin(), s], [0.0, 0.0, s])
    }
}

/// Area-uniform sample of a torus tube around a circle in the plane spanned by
/// `e1`, `e2`, centred at `centre`, restricted to ring angles `arc`.
fn tube_point<R: Rng + ?Sized>(
    rng: &mut R,
    centre: [f64; 3],
    e1: [f64; 3],
    e2: [f64; 3],
    major: f64,
    minor: f64,
    arc: (f64, f64),
) -> Sample {
    let e3 = [
        e1[1] * e2[2] - e1[2] * e2[1],
        e1[2] * e2[0] - e1[0] * e2[2],
        e1[0] * e2[1] - e1[1] * e2[0],
    ];
    loop {
        let u = arc.0 + rng.random::<f64>() * (arc.1 - arc.0);
        let v = rng.random::<f64>() * 2.0 * PI;
        // Surface element scales with the distance from the ring axis.
        if rng.random::<f64>() * (major + minor) > major + minor * v.cos() {
            continue;
        }
        let radial = [0, 1, 2].map(|i| u.cos() * e1[i] + u.sin() * e2[i]);
        let n = [0, 1, 2].map(|i| v.cos() * radial[i] + v.sin() * e3[i]);
        let p = [0, 1, 2].map(|i| centre[i] + major * radial[i] + minor * n[i]);
        return (p, n);
    }
}

fn torus_point<R: Rng + ?Sized>(rng: &mut R) -> Sample {
    tube_point(rng, [0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 0.7, 0.3, (0.0, 2.0 * PI))
}

fn handle_point<R: Rng + ?Sized>(rng: &mut R) -> Sample {
    tube_point(
        rng,
        [0.5, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        0.4,
        0.08,
        (-PI / 2.0, PI / 2.0),
    )
}

/// Samples `n_points` from the surface of `kind` with unit normals and, for
/// [`ShapeKind::TwoPart`], part labels (exactly `n_points / 4` handle points).
/// Positions get isotropic Gaussian jitter of std `noise_std`.
pub fn generate_shapes<R: Rng + ?Sized>(kind: ShapeKind, n_points: usize, noise_std: f64, rng: &mut R) -> Result<PointCloud> {
    if n_points < 8 {
        return Err(Error::InvalidArgument(format!("need at least 8 points, got {n_points}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {noise_std}")));
    }
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let handle = if kind == ShapeKind::TwoPart { n_points / 4 } else { 0 };
    let mut positions = Vec::with_capacity(3 * n_points);
    let mut normals = Vec::with_capacity(3 * n_points);
    let mut labels = Vec::with_capacity(n_points);
    for i in 0..n_points {
        let (p, n) = match kind {
            ShapeKind::Sphere => sphere_point(rng, 1.0),
            ShapeKind::Cube => cube_point(rng),
            ShapeKind::Cylinder => cylinder_point(rng),
            ShapeKind::Torus => torus_point(rng),
            ShapeKind::TwoPart if i < n_points - handle => sphere_point(rng, 0.6),
            ShapeKind::TwoPart => handle_point(rng),
        };
        labels.push(usize::from(i >= n_points - handle));
        for c in 0..3 {
            let jitter = if noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
            positions.push((p[c] + jitter) as f32);
        }
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        normals.extend(n.iter().map(|&c| (c / len) as f32));
    }
    let labels = (kind == ShapeKind::TwoPart).then_some(labels);
    PointCloud::new(positions, Some(normals), labels)
}

/// Rotates a cloud about the z axis, positions and normals alike.
pub fn rotate_z(cloud: &PointCloud, angle: f64) -> Result<PointCloud> {
    let (s, c) = angle.sin_cos();
    let rot = |v: &[f32]| -> Vec<f32> {
        v.chunks_exact(3)
            .flat_map(|p| {
                let (x, y) = (p[0] as f64, p[1] as f64);
                [(c * x - s * y) as f32, (s * x + c * y) as f32, p[2]]
            })
            .collect()
    };
    PointCloud::new(
        rot(cloud.positions()),
        cloud.normals().map(rot),
        cloud.labels().map(<[usize]>::to_vec),
    )
}

/// Balanced classification set over `kinds` (label = position in `kinds`),
/// each cloud randomly rotated about z. Deterministic in `seed`.
pub fn classification_set(kinds: &[ShapeKind], per_class: usize, n_points: usize, noise_std: f64, seed: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(kinds.len() * per_class);
    for _ in 0..per_class {
        for (label, &kind) in kinds.iter().enumerate() {
            let cloud = generate_shapes(kind, n_points, noise_std, &mut rng)?;
            let cloud = rotate_z(&cloud, rng.random::<f64>() * 2.0 * PI)?;
            out.push(Example { cloud, label });
        }
    }
    Ok(out)
}

/// Two-part segmentation set (category 0), randomly rotated about z.
pub fn segmentation_set(count: usize, n_points: usize, noise_std: f64, seed: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let cloud = generate_shapes(ShapeKind::TwoPart, n_points, noise_std, &mut rng)?;
            let cloud = rotate_z(&cloud, rng.random::<f64>() * 2.0 * PI)?;
            Ok(Example { cloud, label: 0 })
        })
        .collect()
}
