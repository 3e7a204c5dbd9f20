//! Plane-sweep cost volumes: per-view feature aggregation (variance or
//! softmin), fixed box-filter regularization and soft-argmin depth readout.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Camera, DepthHypotheses, Pixel, MIN_VISIBLE_DEPTH};
use crate::imagery::{bilinear_sample_into, DepthMap, FeatureMap, Grid};

/// Cost assigned to cells no source view observes.
pub const SENTINEL_COST: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationKind {
    Variance,
    Softmin,
}

impl std::str::FromStr for AggregationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "variance" => Ok(Self::Variance),
            "softmin" => Ok(Self::Softmin),
            other => Err(Error::invalid(format!(
                "aggregation must be variance or softmin, got {other:?}"
            ))),
        }
    }
}

impl std::fmt::Display for AggregationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Variance => "variance",
            Self::Softmin => "softmin",
        })
    }
}

/// Choice of aggregation function and the softmin sharpness `lambda`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationParams {
    pub kind: AggregationKind,
    pub lambda: f64,
}

impl AggregationParams {
    pub fn variance() -> Self {
        Self {
            kind: AggregationKind::Variance,
            lambda: 0.0,
        }
    }

    pub fn softmin(lambda: f64) -> Self {
        Self {
            kind: AggregationKind::Softmin,
            lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite, got {}", self.lambda)));
        }
        Ok(())
    }
}

fn check_sources(f_r: &[f64], f_s: &[&[f64]]) -> Result<()> {
    if f_s.is_empty() {
        return Err(Error::Empty("aggregation needs at least one source vector".into()));
    }
    if let Some(bad) = f_s.iter().find(|f| f.len() != f_r.len()) {
        return Err(Error::DimensionMismatch {
            expected: format!("{} channels", f_r.len()),
            got: format!("{} channels", bad.len()),
        });
    }
    Ok(())
}

/// Channel-wise population variance over the reference and all sources.
pub fn aggregate_variance(f_r: &[f64], f_s: &[&[f64]]) -> Result<Vec<f64>> {
    check_sources(f_r, f_s)?;
    let mut out = vec![0.0; f_r.len()];
    variance_into(f_r, f_s.iter().copied(), f_s.len(), &mut out);
    Ok(out)
}

fn variance_into<'a>(
    f_r: &[f64],
    f_s: impl Iterator<Item = &'a [f64]> + Clone,
    n_src: usize,
    out: &mut [f64],
) {
    let n = (n_src + 1) as f64;
    for (c, o) in out.iter_mut().enumerate() {
        let mean = (f_r[c] + f_s.clone().map(|f| f[c]).sum::<f64>()) / n;
        let ss = (f_r[c] - mean).powi(2) + f_s.clone().map(|f| (f[c] - mean).powi(2)).sum::<f64>();
        *o = ss / n;
    }
}

/// Softmin weights `exp(-lambda |f_r - f_s|^2)` normalized over the sources.
pub fn softmin_weights(f_r: &[f64], f_s: &[&[f64]], lambda: f64) -> Result<Vec<f64>> {
    check_sources(f_r, f_s)?;
    let mut w: Vec<f64> = f_s.iter().map(|f| sq_dist(f_r, f)).collect();
    normalize_softmin(&mut w, lambda);
    Ok(w)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Turns squared distances into softmin weights in place (max-shifted).
fn normalize_softmin(dists: &mut [f64], lambda: f64) {
    let max_logit = dists
        .iter()
        .map(|d| -lambda * d)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for d in dists.iter_mut() {
        *d = (-lambda * *d - max_logit).exp();
        total += *d;
    }
    dists.iter_mut().for_each(|w| *w /= total);
}

/// Softmin-weighted mean of the element-wise squared residuals to the reference.
pub fn aggregate_softmin(f_r: &[f64], f_s: &[&[f64]], lambda: f64) -> Result<Vec<f64>> {
    let w = softmin_weights(f_r, f_s, lambda)?;
    let mut out = vec![0.0; f_r.len()];
    for (f, wk) in f_s.iter().zip(&w) {
        for ((o, r), s) in out.iter_mut().zip(f_r).zip(f.iter()) {
            *o += wk * (r - s).powi(2);
        }
    }
    Ok(out)
}

/// Mean over channels of the aggregated vector, computed without allocation
/// from `n` source vectors stored contiguously in `samples`.
fn aggregate_scalar(
    f_r: &[f64],
    samples: &[f64],
    n: usize,
    params: &AggregationParams,
    scratch: &mut [f64],
) -> f64 {
    let c = f_r.len();
    let srcs = samples[..n * c].chunks_exact(c);
    match params.kind {
        AggregationKind::Variance => {
            let out = &mut scratch[..c];
            variance_into(f_r, srcs, n, out);
            out.iter().sum::<f64>() / c as f64
        }
        AggregationKind::Softmin => {
            let (w, dists) = scratch[..2 * n].split_at_mut(n);
            for ((wk, dk), f) in w.iter_mut().zip(dists.iter_mut()).zip(srcs) {
                *dk = sq_dist(f_r, f);
                *wk = *dk;
            }
            // The channel mean of sum_k w_k (f_r - f_k)^2 is sum_k w_k |f_r - f_k|^2 / c.
            normalize_softmin(w, params.lambda);
            w.iter().zip(dists.iter()).map(|(wk, d)| wk * d).sum::<f64>() / c as f64
        }
    }
}

/// Matching cost per feature pixel and depth plane.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    width: usize,
    height: usize,
    planes: usize,
    cost: Vec<f64>,
    coverage: Vec<u32>,
}

impl CostVolume {
    /// Builds a volume from raw `[y][x][plane]` costs and coverage counts.
    pub fn from_parts(
        width: usize,
        height: usize,
        planes: usize,
        cost: Vec<f64>,
        coverage: Vec<u32>,
    ) -> Result<Self> {
        let n = width * height * planes;
        if cost.len() != n || coverage.len() != n {
            return Err(Error::DimensionMismatch {
                expected: format!("{n} cells"),
                got: format!("{} costs / {} coverage", cost.len(), coverage.len()),
            });
        }
        if cost.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid("costs must be finite and non-negative"));
        }
        Ok(Self {
            width,
            height,
            planes,
            cost,
            coverage,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    fn index(&self, x: usize, y: usize, d: usize) -> usize {
        (y * self.width + x) * self.planes + d
    }

    pub fn cost(&self, x: usize, y: usize, d: usize) -> f64 {
        self.cost[self.index(x, y, d)]
    }

    pub fn coverage(&self, x: usize, y: usize, d: usize) -> u32 {
        self.coverage[self.index(x, y, d)]
    }

    /// Costs of one pixel across all planes.
    pub fn pixel_costs(&self, x: usize, y: usize) -> &[f64] {
        let i = self.index(x, y, 0);
        &self.cost[i..i + self.planes]
    }

    /// Plane index of the minimum cost at a pixel (first on ties).
    pub fn argmin(&self, x: usize, y: usize) -> usize {
        let costs = self.pixel_costs(x, y);
        (0..self.planes).fold(0, |best, d| if costs[d] < costs[best] { d } else { best })
    }

    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    /// Writes the costs as little-endian `f32` to `<prefix>.raw` and the
    /// dimensions and hypotheses to `<prefix>.txt`.
    pub fn dump(&self, prefix: &Path, hyps: &DepthHypotheses) -> Result<()> {
        let raw = prefix.with_extension("raw");
        let mut bytes = Vec::with_capacity(self.cost.len() * 4);
        for c in &self.cost {
            bytes.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        std::fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))?;
        let mut side = format!(
            "layout y x plane\nwidth {}\nheight {}\nplanes {}\nhypotheses",
            self.width, self.height, self.planes
        );
        for h in hyps.values() {
            let _ = write!(side, " {h}");
        }
        side.push('\n');
        let txt = prefix.with_extension("txt");
        std::fs::File::create(&txt)
            .and_then(|mut f| f.write_all(side.as_bytes()))
            .map_err(|e| Error::io(&txt, e))
    }
}

/// Sweeps the reference feature grid through every depth hypothesis,
/// sampling each source at the projected position and aggregating the
/// valid samples. Cameras are given at full image resolution.
pub fn build_cost_volume(
    ref_feat: &FeatureMap,
    src_feats: &[&FeatureMap],
    ref_cam: &Camera,
    src_cams: &[&Camera],
    hyps: &DepthHypotheses,
    params: &AggregationParams,
) -> Result<CostVolume> {
    params.validate()?;
    if src_feats.is_empty() {
        return Err(Error::Empty("cost volume needs at least one source view".into()));
    }
    if src_feats.len() != src_cams.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} source cameras", src_feats.len()),
            got: format!("{}", src_cams.len()),
        });
    }
    if hyps.count() == 0 {
        return Err(Error::Empty("no depth hypotheses".into()));
    }
    let channels = ref_feat.channels();
    let grid_camera = |feat: &FeatureMap, cam: &Camera| -> Result<Camera> {
        let g = cam.downsampled(feat.stride());
        if g.width != feat.width() || g.height != feat.height() || feat.channels() != channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}x{}", g.width, g.height, channels),
                got: format!("{}x{}x{}", feat.width(), feat.height(), feat.channels()),
            });
        }
        Ok(g)
    };
    let ref_grid = grid_camera(ref_feat, ref_cam)?;
    // Relative poses: X_s = R_s R_r^T (X_r - t_r) + t_s.
    struct SourceGeom<'a> {
        feat: &'a FeatureMap,
        cam: Camera,
        rot: Matrix3<f64>,
        trans: Vector3<f64>,
    }
    let sources = src_feats
        .iter()
        .zip(src_cams)
        .map(|(f, c)| {
            let cam = grid_camera(f, c)?;
            let rot = c.rotation * ref_cam.rotation.transpose();
            let trans = c.translation - rot * ref_cam.translation;
            Ok(SourceGeom {
                feat: f,
                cam,
                rot,
                trans,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let (w, h, planes, n_src) = (ref_feat.width(), ref_feat.height(), hyps.count(), sources.len());
    let mut cost = vec![0.0; w * h * planes];
    let mut coverage = vec![0u32; w * h * planes];
    cost.par_chunks_mut(w * planes)
        .zip(coverage.par_chunks_mut(w * planes))
        .enumerate()
        .for_each(|(y, (cost_row, cov_row))| {
            let mut samples = vec![0.0; n_src * channels];
            let mut scratch = vec![0.0; channels.max(2 * n_src)];
            let mut rays = vec![Vector3::zeros(); n_src];
            for x in 0..w {
                let f_r = ref_feat.at(x, y);
                let ray = ref_grid.ray(Pixel::new(x as f64, y as f64));
                for (r, s) in rays.iter_mut().zip(&sources) {
                    *r = s.rot * ray;
                }
                for (d, depth) in hyps.values().iter().enumerate() {
                    let mut n = 0;
                    for (s, ray_s) in sources.iter().zip(&rays) {
                        let xs = ray_s * *depth + s.trans;
                        if xs.z <= MIN_VISIBLE_DEPTH {
                            continue;
                        }
                        let q = Pixel::new(
                            s.cam.fx * xs.x / xs.z + s.cam.cx,
                            s.cam.fy * xs.y / xs.z + s.cam.cy,
                        );
                        let slot = &mut samples[n * channels..(n + 1) * channels];
                        if bilinear_sample_into(s.feat, q, slot) {
                            n += 1;
                        }
                    }
                    let i = x * planes + d;
                    cov_row[i] = n as u32;
                    cost_row[i] = if n == 0 {
                        SENTINEL_COST
                    } else {
                        aggregate_scalar(f_r, &samples, n, params, &mut scratch)
                    };
                }
            }
        });
    CostVolume::from_parts(w, h, planes, cost, coverage)
}

/// Separable box filter of the given radius along width, height and planes.
/// Cells without coverage keep the sentinel and are excluded from averages.
pub fn regularize(vol: &CostVolume, radius: usize) -> CostVolume {
    if radius == 0 {
        return vol.clone();
    }
    let (w, h, p) = (vol.width, vol.height, vol.planes);
    let live: Vec<bool> = vol.coverage.iter().map(|c| *c > 0).collect();
    // (axis length, element stride) for x, y and plane axes in [y][x][plane] layout.
    let axes = [(w, p), (h, w * p), (p, 1)];
    let mut cost = vol.cost.clone();
    for (len, stride) in axes {
        let src = cost.clone();
        cost.par_iter_mut().enumerate().for_each(|(i, out)| {
            if !live[i] {
                return;
            }
            let pos = (i / stride) % len;
            let lo = pos.saturating_sub(radius);
            let hi = (pos + radius).min(len - 1);
            let base = i - pos * stride;
            let (mut sum, mut n) = (0.0, 0usize);
            for k in lo..=hi {
                let j = base + k * stride;
                if live[j] {
                    sum += src[j];
                    n += 1;
                }
            }
            *out = sum / n as f64;
        });
    }
    CostVolume {
        cost,
        ..vol.clone()
    }
}

/// Per-pixel soft-argmin readout: softmax over planes of `-cost / temperature`,
/// expected hypothesis depth, and the maximum weight as confidence.
/// Pixels without coverage on any plane are invalid.
pub fn softargmin_depth(
    vol: &CostVolume,
    hyps: &DepthHypotheses,
    temperature: f64,
) -> Result<(DepthMap, Vec<f64>)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if hyps.count() != vol.planes {
        return Err(Error::DimensionMismatch {
            expected: format!("{} hypotheses", vol.planes),
            got: format!("{}", hyps.count()),
        });
    }
    let planes = vol.planes;
    let per_pixel: Vec<(f64, f64)> = (0..vol.width * vol.height)
        .into_par_iter()
        .map(|i| {
            let costs = &vol.cost[i * planes..(i + 1) * planes];
            let cover = &vol.coverage[i * planes..(i + 1) * planes];
            if cover.iter().all(|c| *c == 0) {
                return (f64::NAN, 0.0);
            }
            let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
            let (mut total, mut depth, mut best) = (0.0, 0.0, 0.0f64);
            for (c, d) in costs.iter().zip(hyps.values()) {
                let wgt = (-(c - min) / temperature).exp();
                total += wgt;
                depth += wgt * d;
                best = best.max(wgt);
            }
            let depth = (depth / total).clamp(hyps.first(), hyps.last());
            (depth, best / total)
        })
        .collect();
    let (values, confidence): (Vec<f64>, Vec<f64>) = per_pixel.into_iter().unzip();
    Ok((DepthMap::from_values(vol.width, vol.height, values)?, confidence))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_hypotheses, DepthRange};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn variance_examples() {
        assert_eq!(
            aggregate_variance(&[1.0, 2.0], &[&[1.0, 2.0], &[1.0, 2.0]]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_abs_diff_eq!(aggregate_variance(&[0.0], &[&[2.0]]).unwrap()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            aggregate_variance(&[0.0], &[&[1.0], &[-1.0]]).unwrap()[0],
            2.0 / 3.0,
            epsilon = 1e-15
        );
        assert!(matches!(aggregate_variance(&[0.0], &[]), Err(Error::Empty(_))));
        assert!(aggregate_variance(&[0.0], &[&[1.0, 2.0]]).is_err());
    }

    #[test]
    fn softmin_examples() {
        let srcs: [&[f64]; 2] = [&[1.0], &[3.0]];
        assert_abs_diff_eq!(aggregate_softmin(&[0.0], &srcs, 0.0).unwrap()[0], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(aggregate_softmin(&[0.0], &srcs, 1e6).unwrap()[0], 1.0, epsilon = 1e-6);
        // (e^-1 * 1 + e^-9 * 9) / (e^-1 + e^-9)
        let (a, b) = ((-1.0f64).exp(), (-9.0f64).exp());
        let expected = (a + 9.0 * b) / (a + b);
        let got = aggregate_softmin(&[0.0], &srcs, 1.0).unwrap()[0];
        assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(got, 1.00268, epsilon = 1e-4);
        assert!(aggregate_softmin(&[0.0], &[], 1.0).is_err());
        // Strongly negative lambda stays finite and favours the outlier.
        assert_abs_diff_eq!(aggregate_softmin(&[0.0], &srcs, -1e3).unwrap()[0], 9.0, epsilon = 1e-9);
    }

    #[test]
    fn scalar_path_matches_vector_path() {
        let f_r = [0.3, -1.0, 2.0];
        let srcs = [[0.1, -0.5, 1.0], [2.0, 2.0, -1.0], [0.3, -1.1, 2.2]];
        let flat: Vec<f64> = srcs.iter().flatten().copied().collect();
        let refs: Vec<&[f64]> = srcs.iter().map(|s| s.as_slice()).collect();
        let mut scratch = vec![0.0; 6];
        for params in [AggregationParams::variance(), AggregationParams::softmin(0.7)] {
            let v = match params.kind {
                AggregationKind::Variance => aggregate_variance(&f_r, &refs).unwrap(),
                AggregationKind::Softmin => aggregate_softmin(&f_r, &refs, 0.7).unwrap(),
            };
            let expected = v.iter().sum::<f64>() / 3.0;
            let got = aggregate_scalar(&f_r, &flat, 3, &params, &mut scratch);
            assert_abs_diff_eq!(got, expected, epsilon = 1e-12);
        }
    }

    fn identity_cam(size: usize) -> Camera {
        Camera::new(
            size as f64,
            size as f64,
            (size as f64 - 1.0) / 2.0,
            (size as f64 - 1.0) / 2.0,
            Matrix3::identity(),
            Vector3::zeros(),
            size,
            size,
        )
        .unwrap()
    }

    fn feature_grid(w: usize, h: usize, c: usize) -> FeatureMap {
        let data = (0..w * h * c).map(|i| ((i * 37) % 11) as f64 / 3.0).collect();
        FeatureMap::new(w, h, c, 1, data).unwrap()
    }

    #[test]
    fn identical_views_give_zero_variance() {
        let f = feature_grid(6, 5, 3);
        let mut cam = identity_cam(6);
        cam.height = 5;
        let hyps = sample_hypotheses(DepthRange::new(1.0, 4.0).unwrap(), 7).unwrap();
        let vol = build_cost_volume(&f, &[&f], &cam, &[&cam], &hyps, &AggregationParams::variance()).unwrap();
        assert!(vol.costs().iter().all(|c| c.abs() < 1e-24));
        assert!((0..7).all(|d| vol.coverage(2, 2, d) == 1));
    }

    #[test]
    fn out_of_view_sources_get_sentinel() {
        let f = feature_grid(4, 4, 2);
        let cam = identity_cam(4);
        // Source looking the opposite way sees nothing in front of the reference.
        let back = Camera::new(
            4.0, 4.0, 1.5, 1.5,
            crate::geometry::rotation_y(std::f64::consts::PI),
            Vector3::zeros(), 4, 4,
        )
        .unwrap();
        let hyps = sample_hypotheses(DepthRange::new(1.0, 2.0).unwrap(), 3).unwrap();
        let vol = build_cost_volume(&f, &[&f], &cam, &[&back], &hyps, &AggregationParams::softmin(1.0)).unwrap();
        assert!(vol.costs().iter().all(|c| *c == SENTINEL_COST));
        let (depth, _) = softargmin_depth(&vol, &hyps, 1.0).unwrap();
        assert_eq!(depth.valid_count(), 0);
        assert!(build_cost_volume(&f, &[], &cam, &[], &hyps, &AggregationParams::variance()).is_err());
    }

    fn volume(w: usize, h: usize, p: usize, f: impl Fn(usize, usize, usize) -> f64) -> CostVolume {
        let mut cost = Vec::new();
        for y in 0..h {
            for x in 0..w {
                for d in 0..p {
                    cost.push(f(x, y, d));
                }
            }
        }
        CostVolume::from_parts(w, h, p, cost, vec![1; w * h * p]).unwrap()
    }

    #[test]
    fn regularize_examples() {
        let v = volume(5, 4, 6, |x, y, d| (x * 7 + y * 3 + d) as f64 * 0.1);
        assert_eq!(regularize(&v, 0), v);

        let c = volume(5, 4, 6, |_, _, _| 2.5);
        let r = regularize(&c, 2);
        assert!(r.costs().iter().all(|v| (v - 2.5).abs() < 1e-12));

        // Box-filter oracle: an interior spike spreads uniformly over (2r+1)^3 cells.
        let spike = volume(9, 9, 9, |x, y, d| if (x, y, d) == (4, 4, 4) { 27.0 } else { 0.0 });
        let r = regularize(&spike, 1);
        for y in 0..9 {
            for x in 0..9 {
                for d in 0..9 {
                    let inside = [x, y, d].iter().all(|c| (3..=5).contains(c));
                    let expected = if inside { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(r.cost(x, y, d), expected, epsilon = 1e-12);
                }
            }
        }
        assert_abs_diff_eq!(r.costs().iter().sum::<f64>(), 27.0, epsilon = 1e-9);
    }

    #[test]
    fn regularize_skips_sentinels() {
        let mut v = volume(3, 1, 1, |x, _, _| x as f64);
        v.cost[1] = SENTINEL_COST;
        v.coverage[1] = 0;
        let r = regularize(&v, 1);
        assert_eq!(r.costs(), &[0.0, SENTINEL_COST, 2.0]);
    }

    #[test]
    fn softargmin_examples() {
        let hyps = sample_hypotheses(DepthRange::new(2.0, 10.0).unwrap(), 5).unwrap();
        let uniform = volume(1, 1, 5, |_, _, _| 0.3);
        let (d, conf) = softargmin_depth(&uniform, &hyps, 1.0).unwrap();
        assert_abs_diff_eq!(d.get(0, 0).unwrap(), 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(conf[0], 0.2, epsilon = 1e-12);

        let onehot = volume(1, 1, 5, |_, _, d| if d == 3 { 0.0 } else { 1e6 });
        let (d, conf) = softargmin_depth(&onehot, &hyps, 1.0).unwrap();
        assert_abs_diff_eq!(d.get(0, 0).unwrap(), 8.0, epsilon = 1e-9);
        assert_abs_diff_eq!(conf[0], 1.0, epsilon = 1e-9);

        let two = volume(1, 1, 5, |_, _, d| if d == 1 || d == 4 { 0.0 } else { 50.0 });
        let (d, _) = softargmin_depth(&two, &hyps, 1.0).unwrap();
        assert_abs_diff_eq!(d.get(0, 0).unwrap(), 7.0, epsilon = 1e-9);

        assert!(softargmin_depth(&uniform, &hyps, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn softmin_weights_sum_to_one(f_r in prop::collection::vec(-3.0f64..3.0, 4),
                                      srcs in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 4), 1..10),
                                      lambda in -5.0f64..50.0) {
            let refs: Vec<&[f64]> = srcs.iter().map(|s| s.as_slice()).collect();
            let w = softmin_weights(&f_r, &refs, lambda).unwrap();
            prop_assert!(w.iter().all(|x| *x >= 0.0));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn single_source_softmin_is_squared_residual(f_r in prop::collection::vec(-3.0f64..3.0, 5),
                                                     f_s in prop::collection::vec(-3.0f64..3.0, 5),
                                                     lambda in -10.0f64..10.0) {
            let out = aggregate_softmin(&f_r, &[&f_s], lambda).unwrap();
            for ((o, r), s) in out.iter().zip(&f_r).zip(&f_s) {
                prop_assert!((o - (r - s).powi(2)).abs() < 1e-12);
            }
        }

        #[test]
        fn permutation_invariance(vals in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 3), 3..7),
                                  rot in 0usize..7, lambda in 0.0f64..3.0) {
            let all: Vec<&[f64]> = vals.iter().map(|v| v.as_slice()).collect();
            let var = aggregate_variance(all[0], &all[1..]).unwrap();
            // Variance: rotate the whole set, including the reference.
            let k = rot % all.len();
            let rotated: Vec<&[f64]> = all[k..].iter().chain(&all[..k]).copied().collect();
            let var2 = aggregate_variance(rotated[0], &rotated[1..]).unwrap();
            for (a, b) in var.iter().zip(&var2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            // Softmin: permute the sources only.
            let mut srcs = all[1..].to_vec();
            let sm = aggregate_softmin(all[0], &srcs, lambda).unwrap();
            srcs.reverse();
            let sm2 = aggregate_softmin(all[0], &srcs, lambda).unwrap();
            for (a, b) in sm.iter().zip(&sm2) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn softargmin_stays_in_range(costs in prop::collection::vec(0.0f64..20.0, 12),
                                     t in 0.01f64..10.0) {
            let hyps = sample_hypotheses(DepthRange::new(1.5, 9.0).unwrap(), 6).unwrap();
            let vol = CostVolume::from_parts(2, 1, 6, costs, vec![1; 12]).unwrap();
            let (d, conf) = softargmin_depth(&vol, &hyps, t).unwrap();
            for x in 0..2 {
                let v = d.get(x, 0).unwrap();
                prop_assert!((1.5..=9.0).contains(&v));
                prop_assert!(conf[x] >= 1.0 / 6.0 - 1e-12 && conf[x] <= 1.0);
            }
        }
    }
}
