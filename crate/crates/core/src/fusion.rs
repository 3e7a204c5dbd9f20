//! Multi-view consistency filtering and fusion of depth maps into a point cloud.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{angle_between_centers, backproject, Camera, Pixel, Point3};
use crate::imagery::{DepthMap, Grid, Image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    /// Allowed relative disagreement between the reprojected and stored depth.
    pub rel_depth_tol: f64,
    /// Round-trip reprojection tolerance in pixels.
    pub reproj_tol: f64,
    /// Minimum triangulation angle in degrees.
    pub min_tri_angle: f64,
    /// Views a point must be consistent in, counting its own.
    pub min_views: usize,
    /// Emit each surface element once by consuming contributing pixels.
    pub consume: bool,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            rel_depth_tol: 0.01,
            reproj_tol: 1.0,
            min_tri_angle: 1.0,
            min_views: 3,
            consume: true,
        }
    }
}

impl FusionParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.rel_depth_tol, self.reproj_tol, self.min_tri_angle]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if !positive || self.min_views < 1 {
            return Err(Error::invalid(format!("invalid fusion parameters {self:?}")));
        }
        Ok(())
    }
}

/// A corroborating view for a reference pixel.
#[derive(Debug, Clone, Copy)]
struct Observation {
    view: usize,
    pixel: Pixel,
    point: Point3,
}

fn observations(ref_idx: usize, p: Pixel, depths: &[DepthMap], cams: &[Camera], params: &FusionParams) -> Vec<Observation> {
    let (x, y) = (p.u.round() as usize, p.v.round() as usize);
    let Some(d) = depths[ref_idx].get(x, y) else {
        return Vec::new();
    };
    let rcam = &cams[ref_idx];
    let Ok(xw) = backproject(rcam, p, d) else {
        return Vec::new();
    };
    let rcenter = rcam.center();
    let mut out = Vec::new();
    for (s, (scam, sdepth)) in cams.iter().zip(depths).enumerate() {
        if s == ref_idx {
            continue;
        }
        let Some((q, z)) = scam.project_world(&xw) else { continue };
        if !scam.in_bounds(q) {
            continue;
        }
        let Some(ds) = sdepth.sample(q) else { continue };
        if (ds - z).abs() / z > params.rel_depth_tol {
            continue;
        }
        let Ok(xs) = backproject(scam, q, ds) else { continue };
        let Some((back, _)) = rcam.project_world(&xs) else { continue };
        if back.distance(&p) > params.reproj_tol {
            continue;
        }
        match angle_between_centers(&rcenter, &scam.center(), &xw) {
            Ok(a) if a >= params.min_tri_angle => {}
            _ => continue,
        }
        out.push(Observation {
            view: s,
            pixel: q,
            point: xs,
        });
    }
    out
}

/// Number of other views in which the depth at `p` in view `ref_idx` is
/// geometrically consistent.
pub fn consistency_count(
    ref_idx: usize,
    p: Pixel,
    depths: &[DepthMap],
    cams: &[Camera],
    params: &FusionParams,
) -> Result<usize> {
    check_inputs(depths, cams)?;
    if ref_idx >= cams.len() {
        return Err(Error::UnknownView(ref_idx));
    }
    Ok(observations(ref_idx, p, depths, cams, params).len())
}

fn check_inputs(depths: &[DepthMap], cams: &[Camera]) -> Result<()> {
    if depths.len() != cams.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} cameras", depths.len()),
            got: format!("{}", cams.len()),
        });
    }
    for (d, c) in depths.iter().zip(cams) {
        if d.width() != c.width || d.height() != c.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} depth map", c.width, c.height),
                got: format!("{}x{}", d.width(), d.height()),
            });
        }
    }
    Ok(())
}

fn to_rgb(px: &[f64]) -> [u8; 3] {
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    match px {
        [g] => [q(*g); 3],
        [r, g, b, ..] => [q(*r), q(*g), q(*b)],
        _ => [255; 3],
    }
}

/// Fuses per-view depth maps into one cloud. Views are swept in index order;
/// with `params.consume` set, pixels that already contributed to a point are
/// not emitted again.
pub fn fuse(depths: &[DepthMap], cams: &[Camera], images: Option<&[Image]>, params: &FusionParams) -> Result<PointCloud> {
    Ok(fuse_with_origins(depths, cams, images, params)?.0)
}

/// As [`fuse`], also returning the view and pixel each point was emitted from.
pub fn fuse_with_origins(
    depths: &[DepthMap],
    cams: &[Camera],
    images: Option<&[Image]>,
    params: &FusionParams,
) -> Result<(PointCloud, Vec<(usize, Pixel)>)> {
    params.validate()?;
    check_inputs(depths, cams)?;
    if let Some(images) = images {
        if images.len() != cams.len() || images.iter().zip(cams).any(|(i, c)| i.width() != c.width || i.height() != c.height) {
            return Err(Error::DimensionMismatch {
                expected: "one full-resolution image per camera".into(),
                got: format!("{} images", images.len()),
            });
        }
    }
    let needed = params.min_views.saturating_sub(1);
    let mut consumed: Vec<Vec<bool>> = depths.iter().map(|d| vec![false; d.values().len()]).collect();
    let mut cloud = PointCloud::default();
    let mut colors = Vec::new();
    let mut origins = Vec::new();
    for (v, dmap) in depths.iter().enumerate() {
        let w = dmap.width();
        let per_pixel: Vec<Option<Vec<Observation>>> = (0..dmap.values().len())
            .into_par_iter()
            .map(|i| {
                if !dmap.validity()[i] {
                    return None;
                }
                let p = Pixel::new((i % w) as f64, (i / w) as f64);
                let obs = observations(v, p, depths, cams, params);
                (obs.len() >= needed).then_some(obs)
            })
            .collect();
        for (i, obs) in per_pixel.into_iter().enumerate() {
            let Some(obs) = obs else { continue };
            if params.consume && consumed[v][i] {
                continue;
            }
            let (x, y) = (i % w, i / w);
            let own = backproject(&cams[v], Pixel::new(x as f64, y as f64), dmap.values()[i])?;
            let sum = obs.iter().fold(own, |acc, o| acc + o.point);
            cloud.points.push(sum / (obs.len() + 1) as f64);
            cloud.support.push(obs.len() as u32 + 1);
            origins.push((v, Pixel::new(x as f64, y as f64)));
            if let Some(images) = images {
                colors.push(to_rgb(images[v].at(x, y)));
            }
            if params.consume {
                consumed[v][i] = true;
                for o in &obs {
                    let (sx, sy) = (o.pixel.u.round() as usize, o.pixel.v.round() as usize);
                    let sw = depths[o.view].width();
                    if sx < sw && sy < depths[o.view].height() {
                        consumed[o.view][sy * sw + sx] = true;
                    }
                }
            }
        }
    }
    if images.is_some() {
        cloud.colors = Some(colors);
    }
    Ok((cloud, origins))
}

/// Fused or reference reconstruction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub colors: Option<Vec<[u8; 3]>>,
    /// Number of consistent views behind each point.
    pub support: Vec<u32>,
}

impl PointCloud {
    pub fn from_points(points: Vec<Point3>) -> Self {
        let support = vec![1; points.len()];
        Self {
            points,
            colors: None,
            support,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| p * s).collect(),
            ..self.clone()
        }
    }

    /// ASCII PLY with `x y z red green blue support` per vertex.
    pub fn to_ply(&self) -> String {
        let mut s = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\n\
             property float x\nproperty float y\nproperty float z\n\
             property uchar red\nproperty uchar green\nproperty uchar blue\n\
             property uint support\nend_header\n",
            self.points.len()
        );
        for (i, p) in self.points.iter().enumerate() {
            let [r, g, b] = self.colors.as_ref().map_or([255; 3], |c| c[i]);
            let _ = writeln!(s, "{} {} {} {r} {g} {b} {}", p.x, p.y, p.z, self.support[i]);
        }
        s
    }

    pub fn write_ply(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ply()).map_err(|e| Error::io(path, e))
    }

    /// Reads an ASCII PLY vertex list. `x y z` are required; colors and
    /// support are picked up when present.
    pub fn read_ply(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Malformed {
            kind: "PLY file",
            path: path.to_path_buf(),
            reason,
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("ply") {
            return Err(bad("missing ply magic".into()));
        }
        let mut count = None;
        let mut props = Vec::new();
        let mut in_vertex = false;
        for line in lines.by_ref() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            match toks.as_slice() {
                ["format", fmt, ..] if *fmt != "ascii" => {
                    return Err(bad(format!("only ascii PLY is supported, got {fmt}")))
                }
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count {n:?}")))?);
                    in_vertex = true;
                }
                ["element", ..] => in_vertex = false,
                ["property", _, name] if in_vertex => props.push(name.to_string()),
                ["end_header"] => break,
                _ => {}
            }
        }
        let count = count.ok_or_else(|| bad("no vertex element".into()))?;
        let col = |name: &str| props.iter().position(|p| p == name);
        let (ix, iy, iz) = match (col("x"), col("y"), col("z")) {
            (Some(x), Some(y), Some(z)) => (x, y, z),
            _ => return Err(bad("vertex element lacks x/y/z".into())),
        };
        let rgb = match (col("red"), col("green"), col("blue")) {
            (Some(r), Some(g), Some(b)) => Some([r, g, b]),
            _ => None,
        };
        let isupport = col("support");
        let mut cloud = PointCloud::default();
        let mut colors = Vec::new();
        for k in 0..count {
            let line = lines.next().ok_or_else(|| bad(format!("expected {count} vertices, found {k}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad value {t:?}"))))
                .collect::<Result<_>>()?;
            if vals.len() < props.len() {
                return Err(bad(format!("vertex {k} has {} values", vals.len())));
            }
            cloud.points.push(Point3::new(vals[ix], vals[iy], vals[iz]));
            if let Some([r, g, b]) = rgb {
                colors.push([vals[r] as u8, vals[g] as u8, vals[b] as u8]);
            }
            cloud.support.push(isupport.map_or(1, |i| vals[i] as u32));
        }
        if rgb.is_some() {
            cloud.colors = Some(colors);
        }
        Ok(cloud)
    }
}
