//! Deterministic synthetic scenes with exact ground truth.
//!
//! Scenes are built from a few analytic primitives, textured with
//! world-anchored multi-octave value noise and rendered with Lambertian
//! shading. View 0 sits at the origin looking down +z; the remaining views
//! lie on a circle of radius `baseline` around it and converge on the scene.

use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::benchmark::{SparseModel, SparsePoint};
use crate::error::{Error, Result};
use crate::fusion::PointCloud;
use crate::geometry::{look_at, Camera, NamedCamera, Pixel, Point3};
use crate::imagery::{DepthMap, GroundTruthDepth, Image};

/// Scene layout. Distances are in world units before `scale` is applied.
#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    /// Plane at `depth` on the optical axis of view 0, rotated by `tilt_deg`
    /// about the vertical axis.
    TexturedPlane { depth: f64, tilt_deg: f64 },
    /// Background plane with a floating rectangle in front of it.
    PlanesWithOccluder {
        background_depth: f64,
        occluder_depth: f64,
        /// Occluder center offset from the optical axis of view 0, (x, y).
        occluder_offset: (f64, f64),
        occluder_half_size: (f64, f64),
    },
    /// Sphere resting against a fronto-parallel background plane.
    SphereOnPlane { plane_depth: f64, radius: f64 },
}

impl Geometry {
    pub fn plane(depth: f64, tilt_deg: f64) -> Self {
        Self::TexturedPlane { depth, tilt_deg }
    }

    pub fn occluder() -> Self {
        Self::PlanesWithOccluder {
            background_depth: 6.0,
            occluder_depth: 3.5,
            occluder_offset: (0.35, 0.0),
            occluder_half_size: (0.55, 0.9),
        }
    }

    pub fn sphere() -> Self {
        Self::SphereOnPlane {
            plane_depth: 6.0,
            radius: 1.3,
        }
    }

    /// Depth of the point views converge on.
    fn focus_depth(&self) -> f64 {
        match self {
            Self::TexturedPlane { depth, .. } => *depth,
            Self::PlanesWithOccluder {
                background_depth, ..
            } => *background_depth,
            Self::SphereOnPlane { plane_depth, .. } => *plane_depth,
        }
    }
}

/// Everything that determines a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub geometry: Geometry,
    pub n_views: usize,
    pub baseline: f64,
    pub texture_seed: u64,
    /// Per-view gain is drawn from `1 ± gain_amplitude`.
    pub gain_amplitude: f64,
    /// Per-view bias is drawn from `± bias_amplitude`.
    pub bias_amplitude: f64,
    /// Number of non-reference views rendered with unrelated texture.
    pub outlier_views: usize,
    /// Uniform scale applied to all geometry and camera positions.
    pub scale: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::plane(5.0, 25.0),
            n_views: 5,
            baseline: 1.0,
            texture_seed: 1,
            gain_amplitude: 0.0,
            bias_amplitude: 0.0,
            outlier_views: 0,
            scale: 1.0,
            width: 128,
            height: 128,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_views < 2 {
            return Err(Error::invalid("a scene needs at least 2 views"));
        }
        if self.outlier_views >= self.n_views {
            return Err(Error::invalid("the reference view cannot be an outlier"));
        }
        if !(self.gain_amplitude >= 0.0 && self.bias_amplitude >= 0.0) {
            return Err(Error::invalid("perturbation amplitudes must be non-negative"));
        }
        if self.gain_amplitude >= 1.0 {
            return Err(Error::invalid("gain amplitude must be below 1"));
        }
        if !(self.baseline > 0.0 && self.scale > 0.0) {
            return Err(Error::invalid("baseline and scale must be positive"));
        }
        if self.width < 2 || self.height < 2 {
            return Err(Error::invalid("image must be at least 2x2"));
        }
        let degenerate = match self.geometry {
            Geometry::TexturedPlane { depth, tilt_deg } => !(depth > 0.0 && tilt_deg.abs() < 60.0),
            Geometry::PlanesWithOccluder {
                background_depth,
                occluder_depth,
                occluder_half_size: (hx, hy),
                ..
            } => !(0.0 < occluder_depth && occluder_depth < background_depth && hx > 0.0 && hy > 0.0),
            Geometry::SphereOnPlane {
                plane_depth,
                radius,
            } => !(radius > 0.0 && plane_depth > 2.0 * radius),
        };
        if degenerate {
            return Err(Error::DegenerateGeometry);
        }
        Ok(())
    }

    /// Parses `key = value` lines (`#` comments).
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SceneSpec::default();
        let mut kind = "plane".to_string();
        let mut depth = None;
        let mut tilt = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("line {}: expected key = value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            let num = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| Error::invalid(format!("line {}: bad number {v:?} for {k}", i + 1)))
            };
            let int = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::invalid(format!("line {}: bad integer {v:?} for {k}", i + 1)))
            };
            match k {
                "geometry" => kind = v.to_string(),
                "depth" => depth = Some(num(v)?),
                "tilt" => tilt = Some(num(v)?),
                "views" => spec.n_views = int(v)?,
                "baseline" => spec.baseline = num(v)?,
                "seed" => spec.texture_seed = int(v)? as u64,
                "gain" => spec.gain_amplitude = num(v)?,
                "bias" => spec.bias_amplitude = num(v)?,
                "outliers" => spec.outlier_views = int(v)?,
                "scale" => spec.scale = num(v)?,
                "width" => spec.width = int(v)?,
                "height" => spec.height = int(v)?,
                other => return Err(Error::invalid(format!("line {}: unknown key {other:?}", i + 1))),
            }
        }
        spec.geometry = match kind.as_str() {
            "plane" => Geometry::plane(depth.unwrap_or(5.0), tilt.unwrap_or(25.0)),
            "occluder" => Geometry::occluder(),
            "sphere" => Geometry::sphere(),
            other => return Err(Error::invalid(format!("unknown geometry {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy)]
enum Primitive {
    Plane {
        point: Point3,
        normal: Vector3<f64>,
        seed: u64,
    },
    Rect {
        center: Point3,
        axis_u: Vector3<f64>,
        axis_v: Vector3<f64>,
        half: (f64, f64),
        normal: Vector3<f64>,
        seed: u64,
    },
    Sphere {
        center: Point3,
        radius: f64,
        seed: u64,
    },
}

const HIT_EPS: f64 = 1e-9;

impl Primitive {
    /// Ray parameter of the first intersection with `t > HIT_EPS`.
    fn intersect(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<f64> {
        match *self {
            Primitive::Plane { point, normal, .. } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(point - origin)) / denom;
                (t > HIT_EPS).then_some(t)
            }
            Primitive::Rect {
                center,
                axis_u,
                axis_v,
                half,
                normal,
                ..
            } => {
                let denom = normal.dot(dir);
                if denom.abs() < 1e-12 {
                    return None;
                }
                let t = normal.dot(&(center - origin)) / denom;
                if t <= HIT_EPS {
                    return None;
                }
                let rel = origin + dir * t - center;
                (rel.dot(&axis_u).abs() <= half.0 && rel.dot(&axis_v).abs() <= half.1).then_some(t)
            }
            Primitive::Sphere { center, radius, .. } => {
                let oc = origin - center;
                let a = dir.dot(dir);
                let b = oc.dot(dir);
                let c = oc.dot(&oc) - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                [(-b - sq) / a, (-b + sq) / a]
                    .into_iter()
                    .find(|t| *t > HIT_EPS)
            }
        }
    }

    fn normal_at(&self, x: &Point3) -> Vector3<f64> {
        match *self {
            Primitive::Plane { normal, .. } | Primitive::Rect { normal, .. } => normal,
            Primitive::Sphere { center, .. } => (x - center).normalize(),
        }
    }

    fn seed(&self) -> u64 {
        match *self {
            Primitive::Plane { seed, .. }
            | Primitive::Rect { seed, .. }
            | Primitive::Sphere { seed, .. } => seed,
        }
    }
}

/// Analytic scene geometry, usable for ray casting and visibility queries.
#[derive(Debug, Clone)]
pub struct SceneGeometry {
    primitives: Vec<Primitive>,
    scale: f64,
}

impl SceneGeometry {
    fn new(geometry: &Geometry, scale: f64, seed: u64) -> Self {
        let s = scale;
        let prims = match *geometry {
            Geometry::TexturedPlane { depth, tilt_deg } => {
                let tilt = tilt_deg.to_radians();
                vec![Primitive::Plane {
                    point: Point3::new(0.0, 0.0, depth * s),
                    normal: Vector3::new(tilt.sin(), 0.0, -tilt.cos()),
                    seed,
                }]
            }
            Geometry::PlanesWithOccluder {
                background_depth,
                occluder_depth,
                occluder_offset: (ox, oy),
                occluder_half_size: (hx, hy),
            } => vec![
                Primitive::Plane {
                    point: Point3::new(0.0, 0.0, background_depth * s),
                    normal: -Vector3::z(),
                    seed,
                },
                Primitive::Rect {
                    center: Point3::new(ox * s, oy * s, occluder_depth * s),
                    axis_u: Vector3::x(),
                    axis_v: Vector3::y(),
                    half: (hx * s, hy * s),
                    normal: -Vector3::z(),
                    seed: seed.wrapping_add(101),
                },
            ],
            Geometry::SphereOnPlane {
                plane_depth,
                radius,
            } => vec![
                Primitive::Plane {
                    point: Point3::new(0.0, 0.0, plane_depth * s),
                    normal: -Vector3::z(),
                    seed,
                },
                Primitive::Sphere {
                    center: Point3::new(0.0, 0.0, (plane_depth - radius) * s),
                    radius: radius * s,
                    seed: seed.wrapping_add(202),
                },
            ],
        };
        Self {
            primitives: prims,
            scale,
        }
    }

    /// Nearest hit along the ray: `(t, primitive index)`.
    fn cast(&self, origin: &Point3, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.intersect(origin, dir).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Camera-frame depth of the first surface seen through pixel `p`.
    pub fn depth_at(&self, cam: &Camera, p: Pixel) -> Option<f64> {
        let ray = cam.rotation.transpose() * cam.ray(p);
        // The camera ray has unit z in the camera frame, so t is the depth.
        self.cast(&cam.center(), &ray).map(|(t, _)| t)
    }

    /// Whether `x` is the first surface point seen from `cam` along its ray
    /// and lies in front of the camera (image bounds are not checked).
    pub fn unoccluded_from(&self, cam: &Camera, x: &Point3) -> bool {
        let c = cam.center();
        let dir = x - c;
        let dist = dir.norm();
        if dist == 0.0 || cam.world_to_camera(x).z <= 0.0 {
            return false;
        }
        let dir = dir / dist;
        self.primitives
            .iter()
            .filter_map(|p| p.intersect(&c, &dir))
            .all(|t| t >= dist * (1.0 - 1e-9))
    }

    fn albedo(&self, prim: usize, x: &Point3, seed_shift: u64, channel: usize) -> f64 {
        let seed = self.primitives[prim]
            .seed()
            .wrapping_add(seed_shift)
            .wrapping_mul(3)
            .wrapping_add(channel as u64);
        let xs = x / self.scale;
        0.1 + 0.8 * fractal_noise(&xs, seed)
    }

    fn shading(&self, prim: usize, x: &Point3, view_center: &Point3) -> f64 {
        let mut n = self.primitives[prim].normal_at(x);
        if n.dot(&(view_center - x)) < 0.0 {
            n = -n;
        }
        let light = Vector3::new(-0.3, -0.5, -1.0).normalize();
        0.55 + 0.45 * n.dot(&light).max(0.0)
    }
}

fn hash3(ix: i64, iy: i64, iz: i64, seed: u64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [ix, iy, iz] {
        h ^= v as u64;
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
        h = h.wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 29;
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn value_noise(p: &Point3, seed: u64) -> f64 {
    let base = p.map(f64::floor);
    let f = p - base;
    let (bx, by, bz) = (base.x as i64, base.y as i64, base.z as i64);
    let (u, v, w) = (fade(f.x), fade(f.y), fade(f.z));
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c = |dx, dy, dz| hash3(bx + dx, by + dy, bz + dz, seed);
    lerp(
        lerp(lerp(c(0, 0, 0), c(1, 0, 0), u), lerp(c(0, 1, 0), c(1, 1, 0), u), v),
        lerp(lerp(c(0, 0, 1), c(1, 0, 1), u), lerp(c(0, 1, 1), c(1, 1, 1), u), v),
        w,
    )
}

/// Multi-octave value noise in `[0, 1]`; the finest octave has cell size 0.1.
fn fractal_noise(p: &Point3, seed: u64) -> f64 {
    let mut total = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut freq = 1.25;
    for octave in 0..4u64 {
        total += amp * value_noise(&(p * freq), seed.wrapping_add(octave * 7919));
        norm += amp;
        amp *= 0.65;
        freq *= 2.0;
    }
    let v = total / norm;
    // Stretch the contrast of the averaged octaves back toward [0, 1].
    ((v - 0.5) * 2.2 + 0.5).clamp(0.0, 1.0)
}

/// A generated scene with exact ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub spec: SceneSpec,
    pub geometry: SceneGeometry,
    pub cameras: Vec<NamedCamera>,
    pub images: Vec<Image>,
    pub gt_depths: Vec<GroundTruthDepth>,
    pub gt_cloud: PointCloud,
    pub sparse: SparseModel,
    /// Indices of views rendered with unrelated texture.
    pub outliers: Vec<usize>,
}

impl Scene {
    pub fn camera(&self, i: usize) -> &Camera {
        &self.cameras[i].camera
    }

    pub fn plain_cameras(&self) -> Vec<Camera> {
        self.cameras.iter().map(|c| c.camera.clone()).collect()
    }

    pub fn depth_maps(&self) -> Vec<DepthMap> {
        self.gt_depths.iter().map(|g| g.depth.clone()).collect()
    }
}

fn build_cameras(spec: &SceneSpec) -> Result<Vec<NamedCamera>> {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let f = 0.9 * w;
    let target = Point3::new(0.0, 0.0, spec.geometry.focus_depth() * spec.scale);
    let up = Vector3::new(0.0, -1.0, 0.0);
    (0..spec.n_views)
        .map(|k| {
            let center = if k == 0 {
                Point3::zeros()
            } else {
                let a = std::f64::consts::TAU * (k - 1) as f64 / (spec.n_views - 1) as f64;
                Point3::new(a.cos(), a.sin(), 0.0) * (spec.baseline * spec.scale)
            };
            let rot = look_at(&center, &target, &up)?;
            let camera = Camera::from_center(
                f,
                f,
                (w - 1.0) / 2.0,
                (h - 1.0) / 2.0,
                rot,
                center,
                spec.width,
                spec.height,
            )?;
            Ok(NamedCamera {
                name: format!("view_{k:03}"),
                camera,
            })
        })
        .collect()
}

/// Renders a scene. Output is a pure function of `spec`.
pub fn generate(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let geometry = SceneGeometry::new(&spec.geometry, spec.scale, spec.texture_seed);
    let cameras = build_cameras(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed ^ 0x5EED_0F_5CE4E);

    let mut candidates: Vec<usize> = (1..spec.n_views).collect();
    let mut outliers = Vec::new();
    for _ in 0..spec.outlier_views {
        let k = rng.random_range(0..candidates.len());
        outliers.push(candidates.remove(k));
    }
    outliers.sort_unstable();

    let photometric: Vec<(f64, f64)> = (0..spec.n_views)
        .map(|_| {
            let g = 1.0 + spec.gain_amplitude * rng.random_range(-1.0..=1.0);
            let b = spec.bias_amplitude * rng.random_range(-1.0..=1.0);
            (g, b)
        })
        .collect();

    let mut images = Vec::with_capacity(spec.n_views);
    let mut gt_depths = Vec::with_capacity(spec.n_views);
    for (k, nc) in cameras.iter().enumerate() {
        let shift = if outliers.contains(&k) {
            0xA5A5_0000 + k as u64
        } else {
            0
        };
        let (img, depth) = render_view(&geometry, &nc.camera, shift, photometric[k])?;
        images.push(img);
        gt_depths.push(GroundTruthDepth::from_depth(depth));
    }

    let gt_cloud = ground_truth_cloud(&cameras, &gt_depths, &images);
    let sparse = sparse_model(&geometry, &cameras, &mut rng);
    Ok(Scene {
        spec: spec.clone(),
        geometry,
        cameras,
        images,
        gt_depths,
        gt_cloud,
        sparse,
        outliers,
    })
}

const SUBSAMPLES: [f64; 2] = [-0.25, 0.25];

fn render_view(
    geometry: &SceneGeometry,
    cam: &Camera,
    texture_shift: u64,
    (gain, bias): (f64, f64),
) -> Result<(Image, DepthMap)> {
    let (w, h) = (cam.width, cam.height);
    let center = cam.center();
    let rt = cam.rotation.transpose();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut colors = Vec::with_capacity(w * 3);
            let mut depths = Vec::with_capacity(w);
            for x in 0..w {
                let p = Pixel::new(x as f64, y as f64);
                depths.push(geometry.depth_at(cam, p).unwrap_or(f64::NAN));
                let mut rgb = [0.0; 3];
                let mut hits = 0.0;
                for dy in SUBSAMPLES {
                    for dx in SUBSAMPLES {
                        let ray = rt * cam.ray(Pixel::new(p.u + dx, p.v + dy));
                        if let Some((t, prim)) = geometry.cast(&center, &ray) {
                            let xw = center + ray * t;
                            let shade = geometry.shading(prim, &xw, &center);
                            for (c, v) in rgb.iter_mut().enumerate() {
                                *v += shade * geometry.albedo(prim, &xw, texture_shift, c);
                            }
                            hits += 1.0;
                        }
                    }
                }
                for v in rgb {
                    let lit = if hits > 0.0 { v / hits } else { 0.0 };
                    let q = ((gain * lit + bias).clamp(0.0, 1.0) * 255.0).round() / 255.0;
                    colors.push(q);
                }
            }
            (colors, depths)
        })
        .collect();
    let (colors, depths): (Vec<Vec<f64>>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let img = Image::new(w, h, 3, colors.concat())?;
    let depth = DepthMap::from_values(w, h, depths.concat())?;
    Ok((img, depth))
}

fn ground_truth_cloud(
    cameras: &[NamedCamera],
    depths: &[GroundTruthDepth],
    images: &[Image],
) -> PointCloud {
    const STEP: usize = 2;
    let mut cloud = PointCloud::default();
    let mut colors = Vec::new();
    for ((nc, gt), img) in cameras.iter().zip(depths).zip(images) {
        let d = &gt.depth;
        for y in (0..d.height()).step_by(STEP) {
            for x in (0..d.width()).step_by(STEP) {
                if let Some(z) = d.get(x, y) {
                    let p = Pixel::new(x as f64, y as f64);
                    cloud.points.push(nc.camera.camera_to_world(&(nc.camera.ray(p) * z)));
                    cloud.support.push(1);
                    let px = crate::imagery::Grid::at(img, x, y);
                    colors.push([0, 1, 2].map(|c| (px[c] * 255.0).round() as u8));
                }
            }
        }
    }
    cloud.colors = Some(colors);
    cloud
}

/// Simulated structure-from-motion output: surface points with the views
/// that see them unoccluded.
fn sparse_model(
    geometry: &SceneGeometry,
    cameras: &[NamedCamera],
    rng: &mut ChaCha8Rng,
) -> SparseModel {
    const POINTS_PER_VIEW: usize = 400;
    let mut points3d = Vec::new();
    for nc in cameras {
        let cam = &nc.camera;
        for _ in 0..POINTS_PER_VIEW {
            let p = Pixel::new(
                rng.random_range(0.0..(cam.width - 1) as f64),
                rng.random_range(0.0..(cam.height - 1) as f64),
            );
            let Some(z) = geometry.depth_at(cam, p) else {
                continue;
            };
            let x = cam.camera_to_world(&(cam.ray(p) * z));
            let views: Vec<usize> = cameras
                .iter()
                .enumerate()
                .filter(|(_, other)| {
                    other
                        .camera
                        .project_world(&x)
                        .is_some_and(|(q, _)| other.camera.in_bounds(q))
                        && geometry.unoccluded_from(&other.camera, &x)
                })
                .map(|(i, _)| i)
                .collect();
            points3d.push(SparsePoint {
                id: points3d.len(),
                position: x,
                views,
            });
        }
    }
    SparseModel {
        points3d,
        views: cameras.to_vec(),
    }
}

/// Per-pixel visibility of view `a`'s surface in view `b`: the surface
/// point seen through each pixel of `a` projects inside `b` and is not
/// hidden behind other geometry from `b`.
pub fn zbuffer_visibility(scene: &Scene, a: usize, b: usize) -> Result<Vec<bool>> {
    let n = scene.cameras.len();
    if a >= n {
        return Err(Error::UnknownView(a));
    }
    if b >= n {
        return Err(Error::UnknownView(b));
    }
    let (ca, cb) = (scene.camera(a), scene.camera(b));
    let depth = &scene.gt_depths[a].depth;
    Ok((0..ca.width * ca.height)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % ca.width, i / ca.width);
            let Some(z) = depth.get(x, y) else {
                return false;
            };
            let xw = ca.camera_to_world(&(ca.ray(Pixel::new(x as f64, y as f64)) * z));
            cb.project_world(&xw).is_some_and(|(q, _)| cb.in_bounds(q))
                && scene.geometry.unoccluded_from(cb, &xw)
        })
        .collect())
}

/// Writes `cameras.txt`, `images/*.ppm`, `depths/*.pfm`, `points3d.txt`
/// and `gt_cloud.ply` under `dir`.
pub fn write_scene(dir: &Path, scene: &Scene) -> Result<()> {
    for sub in ["images", "depths"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    crate::geometry::write_cameras(&dir.join("cameras.txt"), &scene.cameras)?;
    for ((nc, img), gt) in scene.cameras.iter().zip(&scene.images).zip(&scene.gt_depths) {
        crate::imagery::save_image(&dir.join("images").join(format!("{}.ppm", nc.name)), img)?;
        crate::imagery::save_depth_pfm(&dir.join("depths").join(format!("{}.pfm", nc.name)), &gt.depth)?;
    }
    scene.sparse.write_points(&dir.join("points3d.txt"))?;
    scene.gt_cloud.write_ply(&dir.join("gt_cloud.ply"))
}
