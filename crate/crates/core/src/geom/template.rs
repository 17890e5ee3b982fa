//! Canonical object geometry: primitives and triangle meshes with signed
//! distance queries and an area-uniform surface sample cache.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("sdf cache header mismatch: {0}")]
    SdfHeader(String),
    #[error("invalid geometry parameter: {0}")]
    BadParameter(&'static str),
}

fn io_err(path: &Path, source: std::io::Error) -> TemplateError {
    TemplateError::Io { path: path.display().to_string(), source }
}

/// Object geometry kinds. Primitives are axis-aligned in the canonical frame
/// with the centroid at the origin; meshes are recentered on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GeometryKind {
    Sphere { radius: f64 },
    Box { half_extents: [f64; 3] },
    /// Capsule along z: segment half-length plus cap radius.
    Capsule { half_height: f64, radius: f64 },
    /// Cylinder along z.
    Cylinder { half_height: f64, radius: f64 },
    /// Triangle soup referenced by file when serialized.
    Mesh {
        #[serde(skip)]
        vertices: Vec<[f64; 3]>,
        #[serde(skip)]
        triangles: Vec<[usize; 3]>,
        file: String,
    },
}

/// Trilinear-interpolated signed distance grid for mesh templates.
#[derive(Debug)]
pub struct SdfGrid {
    pub resolution: usize,
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
    /// resolution^3 values, x-fastest then y then z.
    pub values: Vec<f32>,
    /// Incremented whenever a query falls outside the grid extents.
    pub out_of_bounds: AtomicU64,
}

impl SdfGrid {
    fn idx(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.resolution + y) * self.resolution + x
    }

    /// Trilinear sample; outside the extents, clamps to the boundary and adds
    /// the Euclidean distance to the grid box (flagged via `out_of_bounds`).
    pub fn sample(&self, p: &Vector3<f64>) -> f64 {
        let size = self.max - self.min;
        let mut inside = true;
        let mut q = *p;
        for k in 0..3 {
            if q[k] < self.min[k] {
                q[k] = self.min[k];
                inside = false;
            }
            if q[k] > self.max[k] {
                q[k] = self.max[k];
                inside = false;
            }
        }
        let outside_dist = if inside {
            0.0
        } else {
            self.out_of_bounds.fetch_add(1, Ordering::Relaxed);
            (p - q).norm()
        };
        let n = self.resolution;
        let cell = |k: usize| {
            let t = (q[k] - self.min[k]) / size[k] * (n - 1) as f64;
            let i = (t.floor() as usize).min(n - 2);
            (i, t - i as f64)
        };
        let (ix, fx) = cell(0);
        let (iy, fy) = cell(1);
        let (iz, fz) = cell(2);
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let w = (if dx == 0 { 1.0 - fx } else { fx })
                        * (if dy == 0 { 1.0 - fy } else { fy })
                        * (if dz == 0 { 1.0 - fz } else { fz });
                    acc += w * self.values[self.idx(ix + dx, iy + dy, iz + dz)] as f64;
                }
            }
        }
        acc + outside_dist
    }
}

/// Canonical object geometry plus caches: surface samples and, for meshes, a
/// precomputed SDF grid. Immutable after construction and safe to share.
#[derive(Debug)]
pub struct ObjectTemplate {
    pub object_id: String,
    pub kind: GeometryKind,
    /// Canonical surface sample cache, centroid at the origin.
    pub surface_samples: Vec<Vector3<f64>>,
    pub sample_seed: u64,
    pub sdf_grid: Option<SdfGrid>,
    /// Centroid-minus-hand offset used by the data generator's carry logic.
    pub grip_offset: Vector3<f64>,
}

/// Grid resolution for mesh SDF caches.
pub const MESH_SDF_RESOLUTION: usize = 64;
/// Mesh SDF grids cover the bounding box scaled by this factor.
pub const MESH_SDF_BOX_SCALE: f64 = 1.2;

impl ObjectTemplate {
    /// Builds a template, sampling `sample_count` canonical surface points
    /// with `seed`; meshes are recentered to put the surface-area centroid at
    /// the origin and get an SDF grid built by ray-parity sign tests.
    pub fn new(
        object_id: impl Into<String>,
        mut kind: GeometryKind,
        sample_count: usize,
        seed: u64,
        grip_offset: Vector3<f64>,
    ) -> Result<Self, TemplateError> {
        validate_kind(&kind)?;
        if let GeometryKind::Mesh { vertices, triangles, .. } = &mut kind {
            recenter_mesh(vertices, triangles);
        }
        let sdf_grid = match &kind {
            GeometryKind::Mesh { vertices, triangles, .. } => {
                Some(build_mesh_sdf(vertices, triangles, MESH_SDF_RESOLUTION))
            }
            _ => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surface_samples = sample_surface(&kind, sample_count, &mut rng);
        Ok(Self {
            object_id: object_id.into(),
            kind,
            surface_samples,
            sample_seed: seed,
            sdf_grid,
            grip_offset,
        })
    }

    /// Signed distance in the canonical frame, negative inside.
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match &self.kind {
            GeometryKind::Sphere { radius } => p.norm() - radius,
            GeometryKind::Box { half_extents } => {
                let b = Vector3::from(*half_extents);
                let q = Vector3::new(p.x.abs() - b.x, p.y.abs() - b.y, p.z.abs() - b.z);
                let outside = Vector3::new(q.x.max(0.0), q.y.max(0.0), q.z.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            GeometryKind::Capsule { half_height, radius } => {
                let z = p.z.clamp(-half_height, *half_height);
                (p - Vector3::new(0.0, 0.0, z)).norm() - radius
            }
            GeometryKind::Cylinder { half_height, radius } => {
                let dr = (p.x * p.x + p.y * p.y).sqrt() - radius;
                let dz = p.z.abs() - half_height;
                let outside = (dr.max(0.0).powi(2) + dz.max(0.0).powi(2)).sqrt();
                outside + dr.max(dz).min(0.0)
            }
            GeometryKind::Mesh { .. } => {
                self.sdf_grid.as_ref().expect("mesh template has an SDF grid").sample(p)
            }
        }
    }

    /// Extent of the geometry along +z (top face / cap), used to derive
    /// top-grip offsets in the data generator.
    pub fn top_extent(&self) -> f64 {
        self.surface_samples.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn bottom_extent(&self) -> f64 {
        self.surface_samples.iter().map(|p| p.z).fold(f64::INFINITY, f64::min)
    }

    /// Bounding radius of the canonical samples.
    pub fn bounding_radius(&self) -> f64 {
        self.surface_samples.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    /// Writes `<id>.json` (descriptor) plus, for meshes, `<id>.off` and the
    /// SDF cache (`<id>.sdf.json` header + `<id>.sdf.f32` payload).
    pub fn save_to_dir(&self, dir: &Path) -> Result<(), TemplateError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        if let GeometryKind::Mesh { vertices, triangles, file } = &self.kind {
            let mesh_path = dir.join(file);
            write_off(&mesh_path, vertices, triangles)?;
            let grid = self.sdf_grid.as_ref().expect("mesh template has an SDF grid");
            let header = SdfHeader {
                resolution: grid.resolution,
                min: grid.min.into(),
                max: grid.max.into(),
            };
            let hp = dir.join(format!("{}.sdf.json", self.object_id));
            std::fs::write(&hp, serde_json::to_vec_pretty(&header).unwrap())
                .map_err(|e| io_err(&hp, e))?;
            let vp = dir.join(format!("{}.sdf.f32", self.object_id));
            let mut bytes = Vec::with_capacity(grid.values.len() * 4);
            for v in &grid.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(&vp, bytes).map_err(|e| io_err(&vp, e))?;
        }
        let desc = TemplateDescriptor {
            object_id: self.object_id.clone(),
            kind: self.kind.clone(),
            sample_count: self.surface_samples.len(),
            seed: self.sample_seed,
            grip_offset: self.grip_offset.into(),
        };
        let dp = dir.join(format!("{}.json", self.object_id));
        std::fs::write(&dp, serde_json::to_vec_pretty(&desc).unwrap()).map_err(|e| io_err(&dp, e))
    }

    /// Loads a template saved by [`save_to_dir`]. The SDF cache is reused
    /// when present and rebuilt otherwise.
    pub fn load_from_dir(dir: &Path, object_id: &str) -> Result<Self, TemplateError> {
        let dp = dir.join(format!("{object_id}.json"));
        let bytes = std::fs::read(&dp).map_err(|e| io_err(&dp, e))?;
        let desc: TemplateDescriptor = serde_json::from_slice(&bytes).map_err(|e| {
            TemplateError::Parse { path: dp.display().to_string(), reason: e.to_string() }
        })?;
        let mut kind = desc.kind;
        if let GeometryKind::Mesh { vertices, triangles, file } = &mut kind {
            let mp = dir.join(file.as_str());
            let (v, t) = read_mesh(&mp)?;
            *vertices = v;
            *triangles = t;
        }
        let mut template =
            Self::new(desc.object_id, kind, desc.sample_count, desc.seed, desc.grip_offset.into())?;
        // Prefer the cached grid so load never depends on rebuild cost.
        let hp = dir.join(format!("{object_id}.sdf.json"));
        if hp.exists() {
            let header: SdfHeader = serde_json::from_slice(
                &std::fs::read(&hp).map_err(|e| io_err(&hp, e))?,
            )
            .map_err(|e| TemplateError::Parse {
                path: hp.display().to_string(),
                reason: e.to_string(),
            })?;
            let vp = dir.join(format!("{object_id}.sdf.f32"));
            let raw = std::fs::read(&vp).map_err(|e| io_err(&vp, e))?;
            let expect = header.resolution.pow(3) * 4;
            if raw.len() != expect {
                return Err(TemplateError::SdfHeader(format!(
                    "payload is {} bytes, header implies {expect}",
                    raw.len()
                )));
            }
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            template.sdf_grid = Some(SdfGrid {
                resolution: header.resolution,
                min: header.min.into(),
                max: header.max.into(),
                values,
                out_of_bounds: AtomicU64::new(0),
            });
        }
        Ok(template)
    }
}

#[derive(Serialize, Deserialize)]
struct TemplateDescriptor {
    object_id: String,
    kind: GeometryKind,
    sample_count: usize,
    seed: u64,
    grip_offset: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct SdfHeader {
    resolution: usize,
    min: [f64; 3],
    max: [f64; 3],
}

fn validate_kind(kind: &GeometryKind) -> Result<(), TemplateError> {
    let ok = match kind {
        GeometryKind::Sphere { radius } => *radius > 0.0,
        GeometryKind::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
        GeometryKind::Capsule { half_height, radius }
        | GeometryKind::Cylinder { half_height, radius } => *half_height > 0.0 && *radius > 0.0,
        GeometryKind::Mesh { triangles, .. } => return if triangles.is_empty() {
            Err(TemplateError::EmptyMesh)
        } else {
            Ok(())
        },
    };
    if ok {
        Ok(())
    } else {
        Err(TemplateError::BadParameter("non-positive extent"))
    }
}

fn triangle_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

/// Shifts vertices so the area-weighted surface centroid sits at the origin.
fn recenter_mesh(vertices: &mut [[f64; 3]], triangles: &[[usize; 3]]) {
    let mut total = 0.0;
    let mut acc = Vector3::zeros();
    for t in triangles {
        let a = Vector3::from(vertices[t[0]]);
        let b = Vector3::from(vertices[t[1]]);
        let c = Vector3::from(vertices[t[2]]);
        let area = triangle_area(&a, &b, &c);
        acc += (a + b + c) / 3.0 * area;
        total += area;
    }
    if total > 0.0 {
        let centroid = acc / total;
        for v in vertices.iter_mut() {
            v[0] -= centroid.x;
            v[1] -= centroid.y;
            v[2] -= centroid.z;
        }
    }
}

/// Samples `m` points uniformly by surface area.
fn sample_surface(kind: &GeometryKind, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut out = Vec::with_capacity(m);
    match kind {
        GeometryKind::Sphere { radius } => {
            for _ in 0..m {
                out.push(random_unit(rng) * *radius);
            }
        }
        GeometryKind::Box { half_extents } => {
            let b = Vector3::from(*half_extents);
            // Face areas per axis pair (two faces each).
            let areas = [b.y * b.z, b.x * b.z, b.x * b.y].map(|a| 8.0 * a);
            let total: f64 = areas.iter().sum::<f64>() / 2.0;
            for _ in 0..m {
                let mut pick = rng.gen_range(0.0..total) * 2.0;
                let mut axis = 2;
                for (k, &a) in areas.iter().enumerate() {
                    if pick < a {
                        axis = k;
                        break;
                    }
                    pick -= a;
                }
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let mut p = Vector3::new(
                    rng.gen_range(-b.x..=b.x),
                    rng.gen_range(-b.y..=b.y),
                    rng.gen_range(-b.z..=b.z),
                );
                p[axis] = sign * b[axis];
                out.push(p);
            }
        }
        GeometryKind::Capsule { half_height, radius } => {
            let side = 2.0 * std::f64::consts::PI * radius * (2.0 * half_height);
            let caps = 4.0 * std::f64::consts::PI * radius * radius;
            for _ in 0..m {
                if rng.gen_range(0.0..side + caps) < side {
                    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                    let z = rng.gen_range(-half_height..=*half_height);
                    out.push(Vector3::new(radius * theta.cos(), radius * theta.sin(), z));
                } else {
                    let dir = random_unit(rng);
                    let z_off = if dir.z >= 0.0 { *half_height } else { -half_height };
                    out.push(Vector3::new(0.0, 0.0, z_off) + dir * *radius);
                }
            }
        }
        GeometryKind::Cylinder { half_height, radius } => {
            let side = 2.0 * std::f64::consts::PI * radius * (2.0 * half_height);
            let disks = 2.0 * std::f64::consts::PI * radius * radius;
            for _ in 0..m {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                if rng.gen_range(0.0..side + disks) < side {
                    let z = rng.gen_range(-half_height..=*half_height);
                    out.push(Vector3::new(radius * theta.cos(), radius * theta.sin(), z));
                } else {
                    let r = radius * rng.gen_range(0.0f64..1.0).sqrt();
                    let z = if rng.gen_bool(0.5) { *half_height } else { -half_height };
                    out.push(Vector3::new(r * theta.cos(), r * theta.sin(), z));
                }
            }
        }
        GeometryKind::Mesh { vertices, triangles, .. } => {
            let mut cumulative = Vec::with_capacity(triangles.len());
            let mut total = 0.0;
            for t in triangles {
                total += triangle_area(
                    &Vector3::from(vertices[t[0]]),
                    &Vector3::from(vertices[t[1]]),
                    &Vector3::from(vertices[t[2]]),
                );
                cumulative.push(total);
            }
            for _ in 0..m {
                let pick = rng.gen_range(0.0..total);
                let ti = cumulative.partition_point(|&c| c < pick).min(triangles.len() - 1);
                let t = triangles[ti];
                let (mut u, mut v) = (rng.gen_range(0.0f64..1.0), rng.gen_range(0.0f64..1.0));
                if u + v > 1.0 {
                    u = 1.0 - u;
                    v = 1.0 - v;
                }
                let a = Vector3::from(vertices[t[0]]);
                let b = Vector3::from(vertices[t[1]]);
                let c = Vector3::from(vertices[t[2]]);
                out.push(a + (b - a) * u + (c - a) * v);
            }
        }
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(-1.0f64..1.0),
        );
        let n = v.norm();
        if n > 1e-6 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Unsigned distance from a point to a triangle (Ericson, Real-Time
/// Collision Detection 5.1.5).
fn point_triangle_distance(
    p: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> f64 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return ap.norm();
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return bp.norm();
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (ap - ab * v).norm();
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return cp.norm();
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (ap - ac * w).norm();
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (bp - (c - b) * w).norm();
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (p - (a + ab * v + ac * w)).norm()
}

fn ray_hits_triangle(
    origin: &Vector3<f64>,
    dir: &Vector3<f64>,
    a: &Vector3<f64>,
    b: &Vector3<f64>,
    c: &Vector3<f64>,
) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-12 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&h) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 0.0
}

/// Builds a signed distance grid over 1.2x the mesh bounding box; signs come
/// from a ray-parity test (odd crossings = inside). An irrational-ish ray
/// direction avoids edge-on intersections on axis-aligned meshes.
fn build_mesh_sdf(vertices: &[[f64; 3]], triangles: &[[usize; 3]], resolution: usize) -> SdfGrid {
    let vs: Vec<Vector3<f64>> = vertices.iter().map(|v| Vector3::from(*v)).collect();
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for v in &vs {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let center = (lo + hi) / 2.0;
    let half = (hi - lo) / 2.0 * MESH_SDF_BOX_SCALE;
    let min = center - half;
    let max = center + half;
    let dir = Vector3::new(0.5377, 0.3319, 0.7715).normalize();
    let n = resolution;
    let mut values = vec![0.0f32; n * n * n];
    use rayon::prelude::*;
    values.par_chunks_mut(n * n).enumerate().for_each(|(z, plane)| {
        for y in 0..n {
            for x in 0..n {
                let p = Vector3::new(
                    min.x + (max.x - min.x) * x as f64 / (n - 1) as f64,
                    min.y + (max.y - min.y) * y as f64 / (n - 1) as f64,
                    min.z + (max.z - min.z) * z as f64 / (n - 1) as f64,
                );
                let mut dist = f64::INFINITY;
                let mut crossings = 0u32;
                for t in triangles {
                    let (a, b, c) = (&vs[t[0]], &vs[t[1]], &vs[t[2]]);
                    dist = dist.min(point_triangle_distance(&p, a, b, c));
                    if ray_hits_triangle(&p, &dir, a, b, c) {
                        crossings += 1;
                    }
                }
                let sign = if crossings % 2 == 1 { -1.0 } else { 1.0 };
                plane[y * n + x] = (sign * dist) as f32;
            }
        }
    });
    SdfGrid { resolution: n, min, max, values, out_of_bounds: AtomicU64::new(0) }
}

fn write_off(path: &Path, vertices: &[[f64; 3]], triangles: &[[usize; 3]]) -> Result<(), TemplateError> {
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut s = format!("OFF\n{} {} 0\n", vertices.len(), triangles.len());
    for v in vertices {
        s.push_str(&format!("{} {} {}\n", v[0], v[1], v[2]));
    }
    for t in triangles {
        s.push_str(&format!("3 {} {} {}\n", t[0], t[1], t[2]));
    }
    f.write_all(s.as_bytes()).map_err(|e| io_err(path, e))
}

/// Reads an ASCII OFF or OBJ triangle soup by extension.
pub fn read_mesh(path: &Path) -> Result<(Vec<[f64; 3]>, Vec<[usize; 3]>), TemplateError> {
    let mut text = String::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| io_err(path, e))?;
    let parse_err = |reason: &str| TemplateError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("obj") {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let mut v = [0.0; 3];
                    for x in v.iter_mut() {
                        *x = it
                            .next()
                            .and_then(|s| s.parse().ok())
                            .ok_or_else(|| parse_err("bad vertex line"))?;
                    }
                    vertices.push(v);
                }
                Some("f") => {
                    let idx: Vec<usize> = it
                        .map(|tok| {
                            tok.split('/')
                                .next()
                                .and_then(|s| s.parse::<usize>().ok())
                                .map(|i| i - 1)
                        })
                        .collect::<Option<_>>()
                        .ok_or_else(|| parse_err("bad face line"))?;
                    for k in 1..idx.len().saturating_sub(1) {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        if triangles.is_empty() {
            return Err(TemplateError::EmptyMesh);
        }
        Ok((vertices, triangles))
    } else {
        let mut toks = text
            .lines()
            .filter(|l| !l.trim_start().starts_with('#'))
            .flat_map(|l| l.split_whitespace())
            .peekable();
        if toks.peek() == Some(&"OFF") {
            toks.next();
        }
        let mut next_num = |what: &str| -> Result<f64, TemplateError> {
            toks.next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| parse_err(&format!("expected {what}")))
        };
        let nv = next_num("vertex count")? as usize;
        let nf = next_num("face count")? as usize;
        let _ne = next_num("edge count")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([next_num("x")?, next_num("y")?, next_num("z")?]);
        }
        let mut triangles = Vec::with_capacity(nf);
        for _ in 0..nf {
            let arity = next_num("face arity")? as usize;
            let idx: Vec<usize> =
                (0..arity).map(|_| next_num("index").map(|v| v as usize)).collect::<Result<_, _>>()?;
            for k in 1..arity.saturating_sub(1) {
                triangles.push([idx[0], idx[k], idx[k + 1]]);
            }
        }
        if triangles.is_empty() {
            return Err(TemplateError::EmptyMesh);
        }
        Ok((vertices, triangles))
    }
}

/// Axis-aligned unit-cube-style box mesh, used by datagen's mesh objects.
pub fn box_mesh(half: [f64; 3]) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let [hx, hy, hz] = half;
    let v = vec![
        [-hx, -hy, -hz],
        [hx, -hy, -hz],
        [hx, hy, -hz],
        [-hx, hy, -hz],
        [-hx, -hy, hz],
        [hx, -hy, hz],
        [hx, hy, hz],
        [-hx, hy, hz],
    ];
    let t = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [2, 3, 7],
        [2, 7, 6],
        [1, 2, 6],
        [1, 6, 5],
        [3, 0, 4],
        [3, 4, 7],
    ];
    (v, t)
}

/// Octahedron with per-axis radii.
pub fn octahedron_mesh(rx: f64, ry: f64, rz: f64) -> (Vec<[f64; 3]>, Vec<[usize; 3]>) {
    let v = vec![
        [rx, 0.0, 0.0],
        [-rx, 0.0, 0.0],
        [0.0, ry, 0.0],
        [0.0, -ry, 0.0],
        [0.0, 0.0, rz],
        [0.0, 0.0, -rz],
    ];
    let t = vec![
        [0, 2, 4],
        [2, 1, 4],
        [1, 3, 4],
        [3, 0, 4],
        [2, 0, 5],
        [1, 2, 5],
        [3, 1, 5],
        [0, 3, 5],
    ];
    (v, t)
}
