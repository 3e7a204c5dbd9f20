//! End-to-end depth estimation: features, cost volume, smoothing, soft-argmin
//! and upsampling, plus the multi-reference training batch used to fit lambda.

use crate::benchmark::{depth_range_from_sparse, SparseModel};
use crate::costvolume::{build_cost_volume, regularize, softargmin_depth, AggregationKind, AggregationParams};
use crate::error::{Error, Result};
use crate::fusion::FusionParams;
use crate::geometry::{sample_hypotheses, Camera, DepthRange};
use crate::imagery::{extract_features, upsample_depth, DepthMap, FeatureMap, Image};
use crate::photoloss::{unsupervised_loss, LossOptions, LossReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub aggregation: AggregationParams,
    pub hypotheses: usize,
    pub stride: usize,
    /// Maximum number of source views per reference.
    pub source_views: usize,
    pub radius: usize,
    pub temperature: f64,
    pub loss: LossOptions,
    pub fusion: FusionParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            aggregation: AggregationParams::variance(),
            hypotheses: 128,
            stride: 4,
            source_views: 4,
            radius: 1,
            temperature: 0.02,
            loss: LossOptions::default(),
            fusion: FusionParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.aggregation.validate()?;
        self.fusion.validate()?;
        if self.hypotheses < 2 {
            return Err(Error::invalid(format!("need at least 2 hypotheses, got {}", self.hypotheses)));
        }
        if self.stride == 0 || self.source_views == 0 {
            return Err(Error::invalid("stride and source view count must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.loss.window % 2 == 0 {
            return Err(Error::invalid(format!("SSIM window must be odd, got {}", self.loss.window)));
        }
        if let Some(t) = self.loss.occlusion_tol {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid(format!("occlusion tolerance must be positive, got {t}")));
            }
        }
        Ok(())
    }

    pub fn with_softmin(&self, lambda: f64) -> Self {
        Self {
            aggregation: AggregationParams::softmin(lambda),
            ..*self
        }
    }

    /// Sets one option by name. Names match the `key = value` config format.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::invalid(format!("bad value {value:?} for {key}")))
        }
        match key {
            "agg" | "aggregation" => self.aggregation.kind = value.parse()?,
            "lambda" => self.aggregation.lambda = num(key, value)?,
            "hyps" | "hypotheses" => self.hypotheses = num(key, value)?,
            "stride" => self.stride = num(key, value)?,
            "views" => self.source_views = num(key, value)?,
            "radius" => self.radius = num(key, value)?,
            "temp" | "temperature" => self.temperature = num(key, value)?,
            "window" => self.loss.window = num(key, value)?,
            "occlusion_tol" => self.loss.occlusion_tol = Some(num(key, value)?),
            "occlusion" => {
                self.loss.occlusion_tol = match value {
                    "on" | "true" | "1" => Some(self.loss.occlusion_tol.unwrap_or(0.01)),
                    "off" | "false" | "0" => None,
                    _ => return Err(Error::invalid(format!("occlusion is on or off, got {value:?}"))),
                }
            }
            "rel_depth_tol" => self.fusion.rel_depth_tol = num(key, value)?,
            "reproj_tol" => self.fusion.reproj_tol = num(key, value)?,
            "min_angle" => self.fusion.min_tri_angle = num(key, value)?,
            "min_views" => self.fusion.min_views = num(key, value)?,
            "consume" => self.fusion.consume = num(key, value)?,
            _ => return Err(Error::invalid(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("expected key = value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn is_softmin(&self) -> bool {
        self.aggregation.kind == AggregationKind::Softmin
    }
}

/// Z-normalized features for every image.
pub fn view_features(images: &[Image], stride: usize) -> Result<Vec<FeatureMap>> {
    images
        .iter()
        .map(|img| Ok(extract_features(img, stride)?.z_normalized()))
        .collect()
}

/// Full-resolution depth for `reference` from precomputed features.
pub fn estimate_depth_from_features(
    feats: &[FeatureMap],
    cams: &[Camera],
    reference: usize,
    sources: &[usize],
    range: DepthRange,
    cfg: &PipelineConfig,
) -> Result<DepthMap> {
    cfg.validate()?;
    if let Some(bad) = std::iter::once(reference).chain(sources.iter().copied()).find(|v| *v >= feats.len() || *v >= cams.len()) {
        return Err(Error::UnknownView(bad));
    }
    let hyps = sample_hypotheses(range, cfg.hypotheses)?;
    let src_feats: Vec<&FeatureMap> = sources.iter().map(|s| &feats[*s]).collect();
    let src_cams: Vec<&Camera> = sources.iter().map(|s| &cams[*s]).collect();
    let vol = build_cost_volume(&feats[reference], &src_feats, &cams[reference], &src_cams, &hyps, &cfg.aggregation)?;
    let vol = regularize(&vol, cfg.radius);
    let (coarse, _) = softargmin_depth(&vol, &hyps, cfg.temperature)?;
    upsample_depth(&coarse, feats[reference].stride())
}

/// Full-resolution depth for `reference` matched against `sources`.
pub fn estimate_depth(
    images: &[Image],
    cams: &[Camera],
    reference: usize,
    sources: &[usize],
    range: DepthRange,
    cfg: &PipelineConfig,
) -> Result<DepthMap> {
    if images.len() != cams.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} cameras", images.len()),
            got: format!("{}", cams.len()),
        });
    }
    let feats = view_features(images, cfg.stride)?;
    estimate_depth_from_features(&feats, cams, reference, sources, range, cfg)
}

/// A set of views matched against each other during training; every view is
/// a reference once, with all the others as its sources.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub images: Vec<Image>,
    pub cameras: Vec<Camera>,
    pub ranges: Vec<DepthRange>,
}

impl TrainingBatch {
    pub fn new(images: Vec<Image>, cameras: Vec<Camera>, ranges: Vec<DepthRange>) -> Result<Self> {
        if images.len() < 2 || images.len() != cameras.len() || images.len() != ranges.len() {
            return Err(Error::invalid(format!(
                "training batch needs matching images, cameras and ranges for at least 2 views (got {}, {}, {})",
                images.len(),
                cameras.len(),
                ranges.len()
            )));
        }
        Ok(Self { images, cameras, ranges })
    }

    /// Depth ranges come from the sparse model's points seen in the batch.
    pub fn from_sparse(images: Vec<Image>, model: &SparseModel) -> Result<Self> {
        let all: Vec<usize> = (0..model.views.len()).collect();
        let ranges = all
            .iter()
            .map(|r| depth_range_from_sparse(model, *r, &all))
            .collect::<Result<Vec<_>>>()?;
        let cameras = model.views.iter().map(|v| v.camera.clone()).collect();
        Self::new(images, cameras, ranges)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Estimated full-resolution depth for every view.
    pub fn depths(&self, cfg: &PipelineConfig) -> Result<Vec<DepthMap>> {
        let feats = view_features(&self.images, cfg.stride)?;
        (0..self.len())
            .map(|r| {
                let sources: Vec<usize> = (0..self.len()).filter(|s| *s != r).collect();
                estimate_depth_from_features(&feats, &self.cameras, r, &sources, self.ranges[r], cfg)
            })
            .collect()
    }
}

/// Unsupervised loss of the batch with depths estimated under `cfg`.
pub fn batch_loss(batch: &TrainingBatch, cfg: &PipelineConfig) -> Result<LossReport> {
    let depths = batch.depths(cfg)?;
    unsupervised_loss(&batch.images, &depths, &batch.cameras, &cfg.loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parse_and_override() {
        let cfg = PipelineConfig::parse("# comment\nagg = softmin\nlambda=2.5\nhyps = 64\nocclusion = off\n").unwrap();
        assert!(cfg.is_softmin());
        assert_eq!(cfg.aggregation.lambda, 2.5);
        assert_eq!(cfg.hypotheses, 64);
        assert_eq!(cfg.loss.occlusion_tol, None);
        assert_eq!(cfg.stride, 4);
        assert!(PipelineConfig::parse("nope = 1").is_err());
        assert!(PipelineConfig::parse("hyps = many").is_err());
        assert!(PipelineConfig::parse("window = 4").is_err());
    }
}
