//! Evaluation protocol: depth-map metrics normalized by the depth range,
//! point-cloud precision/recall at a data-derived threshold, DTU-style
//! distances, and source-view / depth-range selection from a sparse model.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fusion::PointCloud;
use crate::geometry::{angle_between_centers, DepthRange, NamedCamera, Pixel, Point3};
use crate::imagery::{DepthMap, GroundTruthDepth};

/// Number of depth-range subdivisions errors are expressed in.
pub const DEPTH_SCALE_BINS: f64 = 128.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthMetrics {
    pub epe: f64,
    pub e1: f64,
    pub e3: f64,
}

/// Depth errors in units of `(d_max - d_min) / 128`, over pixels that are
/// in the ground-truth mask and valid in the prediction.
pub fn depth_metrics(d: &DepthMap, gt: &GroundTruthDepth, range: DepthRange) -> Result<DepthMetrics> {
    if !d.same_size(&gt.depth) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", gt.depth.width(), gt.depth.height()),
            got: format!("{}x{}", d.width(), d.height()),
        });
    }
    let unit = range.span() / DEPTH_SCALE_BINS;
    let errors: Vec<f64> = (0..d.values().len())
        .filter(|&i| gt.mask()[i] && d.validity()[i])
        .map(|i| (d.values()[i] - gt.depth.values()[i]).abs() / unit)
        .collect();
    if errors.is_empty() {
        return Err(Error::Empty("no pixel is both masked and predicted".into()));
    }
    let n = errors.len() as f64;
    let pct = |thr: f64| 100.0 * errors.iter().filter(|e| **e > thr).count() as f64 / n;
    Ok(DepthMetrics {
        epe: errors.iter().sum::<f64>() / n,
        e1: pct(1.0),
        e3: pct(3.0),
    })
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    Some(if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    })
}

/// Median over images of the median camera-frame distance between the 3D
/// points of valid pixel pairs two pixels apart along an image axis.
pub fn reconstruction_threshold(gt_depths: &[GroundTruthDepth], cams: &[&crate::geometry::Camera]) -> Result<f64> {
    if gt_depths.len() != cams.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} cameras", gt_depths.len()),
            got: format!("{}", cams.len()),
        });
    }
    let mut per_image = Vec::new();
    for (gt, cam) in gt_depths.iter().zip(cams) {
        let d = &gt.depth;
        let (w, h) = (d.width(), d.height());
        let point = |x: usize, y: usize| -> Option<Point3> {
            let i = y * w + x;
            gt.mask()[i].then(|| cam.ray(Pixel::new(x as f64, y as f64)) * d.values()[i])
        };
        let mut dists = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let Some(p) = point(x, y) else { continue };
                for (nx, ny) in [(x + 2, y), (x, y + 2)] {
                    if nx < w && ny < h {
                        if let Some(q) = point(nx, ny) {
                            dists.push((p - q).norm());
                        }
                    }
                }
            }
        }
        if let Some(m) = median(&mut dists) {
            per_image.push(m);
        }
    }
    median(&mut per_image).ok_or_else(|| Error::Empty("no valid pixel pairs at distance 2".into()))
}

/// Exact nearest-neighbour queries over a uniform grid of buckets.
pub struct NearestNeighbors<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    lo: [i64; 3],
    hi: [i64; 3],
}

impl<'a> NearestNeighbors<'a> {
    pub fn new(points: &'a [Point3]) -> Self {
        let (mut min, mut max) = (Point3::repeat(f64::INFINITY), Point3::repeat(f64::NEG_INFINITY));
        for p in points {
            min = min.inf(p);
            max = max.sup(p);
        }
        let extent = if points.is_empty() { 0.0 } else { (max - min).max() };
        // About n^(1/3) cells along the longest axis keeps buckets small for
        // volumetric, planar and linear clouds alike.
        let cell = extent / (points.len() as f64).cbrt().max(1.0);
        let cell = if cell.is_finite() && cell > 0.0 { cell } else { 1.0 };
        let mut nn = Self {
            points,
            cell,
            buckets: HashMap::new(),
            lo: [i64::MAX; 3],
            hi: [i64::MIN; 3],
        };
        for (i, p) in points.iter().enumerate() {
            let k = nn.key(p);
            for a in 0..3 {
                nn.lo[a] = nn.lo[a].min(k[a]);
                nn.hi[a] = nn.hi[a].max(k[a]);
            }
            nn.buckets.entry(k).or_default().push(i);
        }
        nn
    }

    fn key(&self, p: &Point3) -> [i64; 3] {
        [0, 1, 2].map(|a| (p[a] / self.cell).floor() as i64)
    }

    /// Distance to the nearest stored point (`None` when empty).
    pub fn nearest_distance(&self, q: &Point3) -> Option<f64> {
        if self.points.is_empty() {
            return None;
        }
        let k = self.key(q);
        // Chebyshev ring radii that can touch the occupied cell range.
        let gap = |a: usize| (self.lo[a] - k[a]).max(k[a] - self.hi[a]).max(0);
        let reach = |a: usize| (k[a] - self.lo[a]).abs().max((self.hi[a] - k[a]).abs());
        let first_ring = (0..3).map(gap).max().unwrap_or(0);
        let last_ring = (0..3).map(reach).max().unwrap_or(0);
        let clip = |a: usize, r: i64| ((self.lo[a] - k[a]).max(-r), (self.hi[a] - k[a]).min(r));
        let mut best = f64::INFINITY;
        for r in first_ring..=last_ring {
            let (x0, x1) = clip(0, r);
            let (y0, y1) = clip(1, r);
            let (z0, z1) = clip(2, r);
            for dx in x0..=x1 {
                for dy in y0..=y1 {
                    let on_shell = dx.abs() == r || dy.abs() == r;
                    let mut visit = |dz: i64| {
                        if let Some(ids) = self.buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                            for &i in ids {
                                best = best.min((self.points[i] - q).norm());
                            }
                        }
                    };
                    if on_shell {
                        (z0..=z1).for_each(&mut visit);
                    } else if r == 0 {
                        visit(0);
                    } else {
                        for dz in [-r, r] {
                            if (z0..=z1).contains(&dz) {
                                visit(dz);
                            }
                        }
                    }
                }
            }
            // Anything in ring r+1 or beyond is more than r cells away.
            if best <= r as f64 * self.cell {
                break;
            }
        }
        Some(best)
    }

    pub fn distances(&self, queries: &[Point3]) -> Vec<f64> {
        queries
            .par_iter()
            .map(|q| self.nearest_distance(q).unwrap_or(f64::INFINITY))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReconMetrics {
    /// Percentage of reconstructed points near the reference.
    pub precision: f64,
    /// Percentage of reference points near the reconstruction.
    pub recall: f64,
    /// Harmonic mean of precision and recall as fractions, in `[0, 1]`.
    pub f_score: f64,
    pub threshold: f64,
}

pub fn precision_recall(recon: &PointCloud, reference: &PointCloud, t: f64) -> Result<ReconMetrics> {
    if reference.is_empty() {
        return Err(Error::Empty("reference cloud is empty".into()));
    }
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("threshold must be positive, got {t}")));
    }
    let within = |d: &[f64]| d.iter().filter(|x| **x <= t).count() as f64;
    let precision = if recon.is_empty() {
        0.0
    } else {
        let d = NearestNeighbors::new(&reference.points).distances(&recon.points);
        within(&d) / d.len() as f64
    };
    let d = NearestNeighbors::new(&recon.points).distances(&reference.points);
    let recall = within(&d) / d.len() as f64;
    let f_score = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(ReconMetrics {
        precision: 100.0 * precision,
        recall: 100.0 * recall,
        f_score,
        threshold: t,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DtuMetrics {
    pub accuracy: f64,
    pub completeness: f64,
    pub overall: f64,
}

pub fn dtu_metrics(recon: &PointCloud, gt: &PointCloud) -> Result<DtuMetrics> {
    if recon.is_empty() || gt.is_empty() {
        return Err(Error::Empty("DTU metrics need two non-empty clouds".into()));
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let accuracy = mean(NearestNeighbors::new(&gt.points).distances(&recon.points));
    let completeness = mean(NearestNeighbors::new(&recon.points).distances(&gt.points));
    Ok(DtuMetrics {
        accuracy,
        completeness,
        overall: 0.5 * (accuracy + completeness),
    })
}

/// Structure-from-motion point with the indices of the views observing it.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePoint {
    pub id: usize,
    pub position: Point3,
    pub views: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseModel {
    pub points3d: Vec<SparsePoint>,
    pub views: Vec<NamedCamera>,
}

impl SparseModel {
    pub fn new(points3d: Vec<SparsePoint>, views: Vec<NamedCamera>) -> Result<Self> {
        if let Some(p) = points3d.iter().find(|p| p.views.iter().any(|v| *v >= views.len())) {
            return Err(Error::invalid(format!(
                "point {} references a view outside 0..{}",
                p.id,
                views.len()
            )));
        }
        Ok(Self { points3d, views })
    }

    /// Scales point positions and camera translations by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points3d: self
                .points3d
                .iter()
                .map(|p| SparsePoint {
                    position: p.position * s,
                    ..p.clone()
                })
                .collect(),
            views: self
                .views
                .iter()
                .map(|v| NamedCamera {
                    name: v.name.clone(),
                    camera: v.camera.scaled_scene(s),
                })
                .collect(),
        }
    }

    pub fn format_points(&self) -> String {
        let mut s = String::from("# id x y z view_id...\n");
        for p in &self.points3d {
            let _ = write!(s, "{} {} {} {}", p.id, p.position.x, p.position.y, p.position.z);
            for v in &p.views {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn write_points(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.format_points()).map_err(|e| Error::io(path, e))
    }

    /// Reads `points3d.txt` (`id x y z view_id...`, view ids index `views`).
    pub fn read(points_path: &Path, views: Vec<NamedCamera>) -> Result<Self> {
        let text = std::fs::read_to_string(points_path).map_err(|e| Error::io(points_path, e))?;
        let bad = |line: usize, reason: String| Error::Malformed {
            kind: "points3d file",
            path: points_path.to_path_buf(),
            reason: format!("line {line}: {reason}"),
        };
        let mut points = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < 4 {
                return Err(bad(i + 1, "expected id x y z view_id...".into()));
            }
            let id = toks[0].parse().map_err(|_| bad(i + 1, format!("bad id {:?}", toks[0])))?;
            let mut xyz = [0.0; 3];
            for (a, t) in xyz.iter_mut().zip(&toks[1..4]) {
                *a = t.parse().map_err(|_| bad(i + 1, format!("bad coordinate {t:?}")))?;
            }
            let obs = toks[4..]
                .iter()
                .map(|t| {
                    let v: usize = t.parse().map_err(|_| bad(i + 1, format!("bad view id {t:?}")))?;
                    if v >= views.len() {
                        return Err(bad(i + 1, format!("view id {v} out of range")));
                    }
                    Ok(v)
                })
                .collect::<Result<Vec<_>>>()?;
            points.push(SparsePoint {
                id,
                position: Point3::from(xyz),
                views: obs,
            });
        }
        Self::new(points, views)
    }
}

/// Default minimum number of shared points (strict) for a source view.
pub const DEFAULT_MIN_SHARED_POINTS: usize = 100;
/// Default minimum median triangulation angle (degrees, strict).
pub const DEFAULT_MIN_SELECTION_ANGLE: f64 = 5.0;

/// Views sharing more than `min_points` sparse points with `reference`
/// whose median triangulation angle over those points exceeds `min_angle`.
/// Ordered by shared-point count, most first, then by view index.
pub fn select_source_views(
    model: &SparseModel,
    reference: usize,
    min_points: usize,
    min_angle: f64,
) -> Result<Vec<usize>> {
    let n = model.views.len();
    if reference >= n {
        return Err(Error::UnknownView(reference));
    }
    let ref_center = model.views[reference].camera.center();
    let mut scored = Vec::new();
    for v in (0..n).filter(|v| *v != reference) {
        let center = model.views[v].camera.center();
        let mut angles: Vec<f64> = model
            .points3d
            .iter()
            .filter(|p| p.views.contains(&reference) && p.views.contains(&v))
            .filter_map(|p| angle_between_centers(&ref_center, &center, &p.position).ok())
            .collect();
        let shared = angles.len();
        if shared > min_points && median(&mut angles).is_some_and(|m| m > min_angle) {
            scored.push((shared, v));
        }
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, v)| v).collect())
}

/// Relative margin added on each side of a sparse depth range.
pub const DEPTH_RANGE_MARGIN: f64 = 0.01;

/// Reference-frame depth range of the sparse points observed by at least
/// three views of `views` (which should include the reference), widened
/// by 1% on each side.
pub fn depth_range_from_sparse(model: &SparseModel, reference: usize, views: &[usize]) -> Result<DepthRange> {
    if reference >= model.views.len() {
        return Err(Error::UnknownView(reference));
    }
    let cam = &model.views[reference].camera;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &model.points3d {
        let seen = p.views.iter().filter(|v| views.contains(v)).count();
        if seen < 3 {
            continue;
        }
        let z = cam.world_to_camera(&p.position).z;
        if z > 0.0 {
            lo = lo.min(z);
            hi = hi.max(z);
        }
    }
    if !lo.is_finite() {
        return Err(Error::Empty("no sparse point is observed by three selected views".into()));
    }
    DepthRange::new(lo * (1.0 - DEPTH_RANGE_MARGIN), hi * (1.0 + DEPTH_RANGE_MARGIN))
}
