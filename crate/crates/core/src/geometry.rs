//! Pinhole cameras, projection between views and depth-hypothesis sampling.
//!
//! Poses follow the COLMAP convention: a world point `X` maps to the camera
//! frame as `R * X + t`. Pixel `(0, 0)` is the center of the top-left pixel.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;

const ROTATION_TOL: f64 = 1e-9;

/// Minimum camera-frame depth for a point to count as in front of a camera.
pub const MIN_VISIBLE_DEPTH: f64 = 1e-9;

/// Continuous image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }
}

/// Pinhole camera with a world-to-camera pose.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Builds a camera, checking the intrinsic and pose invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `center` with the given world-to-camera rotation.
    #[allow(clippy::too_many_arguments)]
    pub fn from_center(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Matrix3<f64>,
        center: Point3,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let translation = -(rotation * center);
        Self::new(fx, fy, cx, cy, rotation, translation, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.rotation.iter())
            .chain(self.translation.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("camera parameters must be finite"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::invalid(format!(
                "focal lengths must be positive, got fx={} fy={}",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("camera image size must be at least 1x1"));
        }
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        let det = r.determinant();
        if ortho > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::invalid(format!(
                "rotation is not a proper rotation (orthonormality error {ortho:.3e}, det {det})"
            )));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_camera(&self, x: &Point3) -> Point3 {
        self.rotation * x + self.translation
    }

    pub fn camera_to_world(&self, x: &Point3) -> Point3 {
        self.rotation.transpose() * (x - self.translation)
    }

    /// Normalized ray `K^-1 (u, v, 1)` in the camera frame.
    pub fn ray(&self, p: Pixel) -> Vector3<f64> {
        Vector3::new((p.u - self.cx) / self.fx, (p.v - self.cy) / self.fy, 1.0)
    }

    /// Projects a camera-frame point; `None` when it is not in front of the camera.
    pub fn project_camera_point(&self, x: &Point3) -> Option<Pixel> {
        if x.z <= MIN_VISIBLE_DEPTH || !x.iter().all(|c| c.is_finite()) {
            return None;
        }
        Some(Pixel::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        ))
    }

    /// Projects a world point, returning the pixel and its camera-frame depth.
    pub fn project_world(&self, x: &Point3) -> Option<(Pixel, f64)> {
        let xc = self.world_to_camera(x);
        self.project_camera_point(&xc).map(|p| (p, xc.z))
    }

    pub fn in_bounds(&self, p: Pixel) -> bool {
        p.u >= 0.0 && p.v >= 0.0 && p.u < self.width as f64 && p.v < self.height as f64
    }

    /// Camera of the same view on a grid downsampled by `stride`, where
    /// coarse cell `i` covers fine pixels `stride*i .. stride*i + stride - 1`.
    pub fn downsampled(&self, stride: usize) -> Camera {
        let s = stride as f64;
        let offset = (s - 1.0) / 2.0;
        Camera {
            fx: self.fx / s,
            fy: self.fy / s,
            cx: (self.cx - offset) / s,
            cy: (self.cy - offset) / s,
            rotation: self.rotation,
            translation: self.translation,
            width: self.width / stride,
            height: self.height / stride,
        }
    }

    /// The same camera with its translation scaled, i.e. the camera of a
    /// scene uniformly scaled by `s` about the world origin.
    pub fn scaled_scene(&self, s: f64) -> Camera {
        Camera {
            translation: self.translation * s,
            ..self.clone()
        }
    }
}

/// Result of projecting a reference pixel into another view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Pixel,
    pub visible: bool,
    /// Depth of the point in the target camera frame (NaN when degenerate).
    pub depth: f64,
}

/// Sentinel pixel reported for projections that are undefined.
pub const SENTINEL_PIXEL: Pixel = Pixel { u: -1.0, v: -1.0 };

/// World point at camera-frame depth `d` on the ray through `p`.
pub fn backproject(cam: &Camera, p: Pixel, d: f64) -> Result<Point3> {
    if !p.is_finite() || !d.is_finite() {
        return Err(Error::invalid("backproject requires finite pixel and depth"));
    }
    if d <= 0.0 {
        return Err(Error::invalid(format!("depth must be positive, got {d}")));
    }
    Ok(cam.camera_to_world(&(cam.ray(p) * d)))
}

/// Projection of the reference pixel `p` at depth `d` into `src`.
pub fn project(reference: &Camera, src: &Camera, p: Pixel, d: f64) -> Result<Projection> {
    let x = backproject(reference, p, d)?;
    Ok(project_world(src, &x))
}

/// Projects a world point into `cam`, flagging visibility.
pub fn project_world(cam: &Camera, x: &Point3) -> Projection {
    match cam.project_world(x) {
        Some((pixel, depth)) => Projection {
            pixel,
            visible: cam.in_bounds(pixel),
            depth,
        },
        None => Projection {
            pixel: SENTINEL_PIXEL,
            visible: false,
            depth: f64::NAN,
        },
    }
}

/// Angle in degrees between the rays from the two camera centers to `x`.
pub fn triangulation_angle(cam_a: &Camera, cam_b: &Camera, x: &Point3) -> Result<f64> {
    angle_between_centers(&cam_a.center(), &cam_b.center(), x)
}

pub(crate) fn angle_between_centers(a: &Point3, b: &Point3, x: &Point3) -> Result<f64> {
    let ra = x - a;
    let rb = x - b;
    let (na, nb) = (ra.norm(), rb.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let cos = (ra.dot(&rb) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

/// Depth bounds of a scene as seen from one view.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRange {
    pub d_min: f64,
    pub d_max: f64,
}

impl DepthRange {
    pub fn new(d_min: f64, d_max: f64) -> Result<Self> {
        if !(d_min.is_finite() && d_max.is_finite() && 0.0 < d_min && d_min < d_max) {
            return Err(Error::invalid(format!(
                "depth range must satisfy 0 < d_min < d_max, got ({d_min}, {d_max})"
            )));
        }
        Ok(Self { d_min, d_max })
    }

    pub fn span(&self) -> f64 {
        self.d_max - self.d_min
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(self.d_min * s, self.d_max * s)
    }
}

/// Regularly spaced candidate depths.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthHypotheses {
    values: Vec<f64>,
}

impl DepthHypotheses {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn count(&self) -> usize {
        self.values.len()
    }

    pub fn first(&self) -> f64 {
        self.values[0]
    }

    pub fn last(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        (self.last() - self.first()) / (self.count() - 1) as f64
    }
}

/// `n` uniformly spaced depths from `d_min` to `d_max`, both included.
pub fn sample_hypotheses(range: DepthRange, n: usize) -> Result<DepthHypotheses> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 depth hypotheses, got {n}"
        )));
    }
    let step = range.span() / (n - 1) as f64;
    let mut values: Vec<f64> = (0..n).map(|i| range.d_min + step * i as f64).collect();
    values[n - 1] = range.d_max;
    Ok(DepthHypotheses { values })
}

/// A camera together with its image name, as stored in `cameras.txt`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedCamera {
    pub name: String,
    pub camera: Camera,
}

/// Parses the one-camera-per-line text format:
/// `name fx fy cx cy r11 .. r33 tx ty tz width height`.
pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<NamedCamera>> {
    let malformed = |line: usize, reason: String| Error::Malformed {
        kind: "camera file",
        path: path.to_path_buf(),
        reason: format!("line {line}: {reason}"),
    };
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 19 {
            return Err(malformed(
                i + 1,
                format!("expected 19 fields, found {}", fields.len()),
            ));
        }
        let mut nums = [0.0f64; 16];
        for (k, slot) in nums.iter_mut().enumerate() {
            *slot = fields[k + 1]
                .parse()
                .map_err(|_| malformed(i + 1, format!("bad number {:?}", fields[k + 1])))?;
        }
        let parse_dim = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| malformed(i + 1, format!("bad image size {s:?}")))
        };
        let width = parse_dim(fields[17])?;
        let height = parse_dim(fields[18])?;
        let rotation = Matrix3::from_row_slice(&nums[4..13]);
        let translation = Vector3::new(nums[13], nums[14], nums[15]);
        let camera = Camera::new(
            nums[0],
            nums[1],
            nums[2],
            nums[3],
            rotation,
            translation,
            width,
            height,
        )
        .map_err(|e| malformed(i + 1, e.to_string()))?;
        out.push(NamedCamera {
            name: fields[0].to_string(),
            camera,
        });
    }
    Ok(out)
}

pub fn read_cameras(path: &Path) -> Result<Vec<NamedCamera>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn format_cameras(cameras: &[NamedCamera]) -> String {
    let mut s = String::from(
        "# image_name fx fy cx cy r11 r12 r13 r21 r22 r23 r31 r32 r33 tx ty tz width height\n",
    );
    for nc in cameras {
        let c = &nc.camera;
        let _ = write!(s, "{} {} {} {} {}", nc.name, c.fx, c.fy, c.cx, c.cy);
        for r in 0..3 {
            for col in 0..3 {
                let _ = write!(s, " {}", c.rotation[(r, col)]);
            }
        }
        let t = &c.translation;
        let _ = writeln!(s, " {} {} {} {} {}", t.x, t.y, t.z, c.width, c.height);
    }
    s
}

pub fn write_cameras(path: &Path, cameras: &[NamedCamera]) -> Result<()> {
    std::fs::write(path, format_cameras(cameras)).map_err(|e| Error::io(path, e))
}

/// Rotation by `angle` radians about the y axis.
pub fn rotation_y(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// World-to-camera rotation for a camera at `center` looking at `target`,
/// with image-down roughly along world `up`'s negation.
pub fn look_at(center: &Point3, target: &Point3, up: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let z = target - center;
    if z.norm() == 0.0 {
        return Err(Error::DegenerateGeometry);
    }
    let z = z.normalize();
    let x = (-up).cross(&z);
    if x.norm() < 1e-12 {
        return Err(Error::DegenerateGeometry);
    }
    let x = x.normalize();
    let y = z.cross(&x);
    Ok(Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]))
}
