//! Python bindings. Images and depth maps cross the boundary as flat
//! row-major lists with explicit sizes; invalid depths come back as NaN.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use wildmvs::benchmark::{self, SparseModel};
use wildmvs::costvolume;
use wildmvs::fusion::{self, FusionParams, PointCloud};
use wildmvs::geometry::{self, Camera, DepthRange, Pixel, Point3};
use wildmvs::imagery::{DepthMap, GroundTruthDepth, Grid, Image};
use wildmvs::photoloss::{self, LossOptions};
use wildmvs::pipeline::{self, PipelineConfig, TrainingBatch};
use wildmvs::synthdata::{self, SceneSpec};

fn err(e: wildmvs::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.code(), e))
}

fn config(text: Option<&str>) -> PyResult<PipelineConfig> {
    text.map_or(Ok(PipelineConfig::default()), |t| PipelineConfig::parse(t).map_err(err))
}

#[pyclass(name = "Camera", module = "wildmvs_py", skip_from_py_object)]
#[derive(Clone)]
struct PyCamera(Camera);

#[pymethods]
impl PyCamera {
    /// `rotation` is row-major world-to-camera, `translation` the matching t.
    #[new]
    #[allow(clippy::too_many_arguments)]
    fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: [f64; 9],
        translation: [f64; 3],
        width: usize,
        height: usize,
    ) -> PyResult<Self> {
        let r = nalgebra::Matrix3::from_row_slice(&rotation);
        let t = nalgebra::Vector3::from(translation);
        Camera::new(fx, fy, cx, cy, r, t, width, height).map(Self).map_err(err)
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        let c = self.0.center();
        [c.x, c.y, c.z]
    }

    #[getter]
    fn size(&self) -> (usize, usize) {
        (self.0.width, self.0.height)
    }

    /// World point to `(u, v, depth)`, or None behind the camera.
    fn project(&self, x: [f64; 3]) -> Option<(f64, f64, f64)> {
        self.0.project_world(&Point3::from(x)).map(|(p, z)| (p.u, p.v, z))
    }

    fn backproject(&self, u: f64, v: f64, depth: f64) -> PyResult<[f64; 3]> {
        let x = geometry::backproject(&self.0, Pixel::new(u, v), depth).map_err(err)?;
        Ok([x.x, x.y, x.z])
    }

    fn __repr__(&self) -> String {
        format!("Camera(fx={}, fy={}, {}x{})", self.0.fx, self.0.fy, self.0.width, self.0.height)
    }
}

#[pyclass(name = "Image", module = "wildmvs_py", skip_from_py_object)]
#[derive(Clone)]
struct PyImage(Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> PyResult<Self> {
        Image::new(width, height, channels, data).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.0.height(), self.0.width(), self.0.channels())
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.0.data().to_vec()
    }
}

#[pyclass(name = "DepthMap", module = "wildmvs_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDepthMap(DepthMap);

#[pymethods]
impl PyDepthMap {
    /// Non-finite or non-positive values are invalid.
    #[new]
    fn new(width: usize, height: usize, values: Vec<f64>) -> PyResult<Self> {
        DepthMap::from_values(width, height, values).map(Self).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.0.height(), self.0.width())
    }

    #[getter]
    fn values(&self) -> Vec<f64> {
        self.0.to_f32_with_nan().into_iter().map(f64::from).collect()
    }

    fn valid_count(&self) -> usize {
        self.0.valid_count()
    }

    fn scaled(&self, s: f64) -> Self {
        Self(self.0.scaled(s))
    }
}

#[pyclass(name = "PointCloud", module = "wildmvs_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPointCloud(PointCloud);

#[pymethods]
impl PyPointCloud {
    #[new]
    fn new(points: Vec<[f64; 3]>) -> Self {
        Self(PointCloud::from_points(points.into_iter().map(Point3::from).collect()))
    }

    #[getter]
    fn points(&self) -> Vec<[f64; 3]> {
        self.0.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    #[getter]
    fn support(&self) -> Vec<u32> {
        self.0.support.clone()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn write_ply(&self, path: std::path::PathBuf) -> PyResult<()> {
        self.0.write_ply(&path).map_err(err)
    }

    #[staticmethod]
    fn read_ply(path: std::path::PathBuf) -> PyResult<Self> {
        PointCloud::read_ply(&path).map(Self).map_err(err)
    }
}

#[pyclass(name = "Scene", module = "wildmvs_py")]
struct PyScene(synthdata::Scene);

#[pymethods]
impl PyScene {
    /// Builds a synthetic scene from `key = value` spec text.
    #[new]
    #[pyo3(signature = (spec = ""))]
    fn new(spec: &str) -> PyResult<Self> {
        let spec = SceneSpec::parse(spec).map_err(err)?;
        synthdata::generate(&spec).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.cameras.len()
    }

    #[getter]
    fn cameras(&self) -> Vec<PyCamera> {
        self.0.plain_cameras().into_iter().map(PyCamera).collect()
    }

    #[getter]
    fn images(&self) -> Vec<PyImage> {
        self.0.images.iter().cloned().map(PyImage).collect()
    }

    #[getter]
    fn gt_depths(&self) -> Vec<PyDepthMap> {
        self.0.depth_maps().into_iter().map(PyDepthMap).collect()
    }

    #[getter]
    fn gt_cloud(&self) -> PyPointCloud {
        PyPointCloud(self.0.gt_cloud.clone())
    }

    #[getter]
    fn outliers(&self) -> Vec<usize> {
        self.0.outliers.clone()
    }

    /// Source views for `reference` ranked by shared sparse points.
    fn source_views(&self, reference: usize) -> PyResult<Vec<usize>> {
        benchmark::select_source_views(
            &self.0.sparse,
            reference,
            benchmark::DEFAULT_MIN_SHARED_POINTS,
            benchmark::DEFAULT_MIN_SELECTION_ANGLE,
        )
        .map_err(err)
    }

    /// `(d_min, d_max)` from sparse points seen by `views`.
    fn depth_range(&self, reference: usize, views: Vec<usize>) -> PyResult<(f64, f64)> {
        let r = benchmark::depth_range_from_sparse(&self.0.sparse, reference, &views).map_err(err)?;
        Ok((r.d_min, r.d_max))
    }

    fn write(&self, dir: std::path::PathBuf) -> PyResult<()> {
        synthdata::write_scene(&dir, &self.0).map_err(err)
    }
}

impl PyScene {
    fn sparse(&self) -> &SparseModel {
        &self.0.sparse
    }
}

fn slices(v: &[Vec<f64>]) -> Vec<&[f64]> {
    v.iter().map(|s| s.as_slice()).collect()
}

#[pyfunction]
fn aggregate_variance(f_r: Vec<f64>, f_s: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    costvolume::aggregate_variance(&f_r, &slices(&f_s)).map_err(err)
}

#[pyfunction]
fn aggregate_softmin(f_r: Vec<f64>, f_s: Vec<Vec<f64>>, lam: f64) -> PyResult<Vec<f64>> {
    costvolume::aggregate_softmin(&f_r, &slices(&f_s), lam).map_err(err)
}

#[pyfunction]
fn softmin_weights(f_r: Vec<f64>, f_s: Vec<Vec<f64>>, lam: f64) -> PyResult<Vec<f64>> {
    costvolume::softmin_weights(&f_r, &slices(&f_s), lam).map_err(err)
}

fn unwrap_all<T: Clone, W>(items: &[PyRef<'_, W>], f: impl Fn(&W) -> &T) -> Vec<T>
where
    W: pyo3::PyClass,
{
    items.iter().map(|w| f(w).clone()).collect()
}

/// `config` is `key = value` text as accepted by the CLI's `--config`.
#[pyfunction]
#[pyo3(signature = (images, cameras, reference, sources, d_min, d_max, config = None))]
fn estimate_depth(
    py: Python<'_>,
    images: Vec<PyRef<'_, PyImage>>,
    cameras: Vec<PyRef<'_, PyCamera>>,
    reference: usize,
    sources: Vec<usize>,
    d_min: f64,
    d_max: f64,
    config: Option<&str>,
) -> PyResult<PyDepthMap> {
    let cfg = self::config(config)?;
    let imgs = unwrap_all(&images, |i| &i.0);
    let cams = unwrap_all(&cameras, |c| &c.0);
    let range = DepthRange::new(d_min, d_max).map_err(err)?;
    py.detach(|| pipeline::estimate_depth(&imgs, &cams, reference, &sources, range, &cfg))
        .map(PyDepthMap)
        .map_err(err)
}

/// `{"epe", "e1", "e3"}` with errors in hypothesis-spacing units.
#[pyfunction]
fn depth_metrics<'py>(
    py: Python<'py>,
    pred: PyRef<'_, PyDepthMap>,
    gt: PyRef<'_, PyDepthMap>,
    d_min: f64,
    d_max: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let range = DepthRange::new(d_min, d_max).map_err(err)?;
    let m = benchmark::depth_metrics(&pred.0, &GroundTruthDepth::from_depth(gt.0.clone()), range).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("epe", m.epe)?;
    d.set_item("e1", m.e1)?;
    d.set_item("e3", m.e3)?;
    Ok(d)
}

/// `{"precision", "recall", "f_score", "threshold"}`.
#[pyfunction]
fn precision_recall<'py>(
    py: Python<'py>,
    recon: PyRef<'_, PyPointCloud>,
    reference: PyRef<'_, PyPointCloud>,
    threshold: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = benchmark::precision_recall(&recon.0, &reference.0, threshold).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f_score", m.f_score)?;
    d.set_item("threshold", m.threshold)?;
    Ok(d)
}

#[pyfunction]
#[pyo3(signature = (depths, cameras, config = None))]
fn fuse(depths: Vec<PyRef<'_, PyDepthMap>>, cameras: Vec<PyRef<'_, PyCamera>>, config: Option<&str>) -> PyResult<PyPointCloud> {
    let params: FusionParams = self::config(config)?.fusion;
    let ds = unwrap_all(&depths, |d| &d.0);
    let cams = unwrap_all(&cameras, |c| &c.0);
    fusion::fuse(&ds, &cams, None, &params).map(PyPointCloud).map_err(err)
}

/// Photometric loss of a set of views under the given depths.
#[pyfunction]
#[pyo3(signature = (images, depths, cameras, window = 7, occlusion_tol = Some(0.01)))]
fn unsupervised_loss(
    images: Vec<PyRef<'_, PyImage>>,
    depths: Vec<PyRef<'_, PyDepthMap>>,
    cameras: Vec<PyRef<'_, PyCamera>>,
    window: usize,
    occlusion_tol: Option<f64>,
) -> PyResult<(f64, usize)> {
    let imgs = unwrap_all(&images, |i| &i.0);
    let ds = unwrap_all(&depths, |d| &d.0);
    let cams = unwrap_all(&cameras, |c| &c.0);
    let opts = LossOptions { window, occlusion_tol };
    let r = photoloss::unsupervised_loss(&imgs, &ds, &cams, &opts).map_err(err)?;
    Ok((r.value, r.valid_pixel_count))
}

/// Fits the softmin lambda on synthetic scenes; returns `(lambda, trace)`.
#[pyfunction]
#[pyo3(signature = (scenes, init = 0.0, steps = 8, step_size = 0.05, config = None))]
fn fit_lambda(
    py: Python<'_>,
    scenes: Vec<PyRef<'_, PyScene>>,
    init: f64,
    steps: usize,
    step_size: f64,
    config: Option<&str>,
) -> PyResult<(f64, Vec<(f64, f64)>)> {
    let cfg = self::config(config)?;
    let batches = scenes
        .iter()
        .map(|s| TrainingBatch::from_sparse(s.0.images.clone(), s.sparse()))
        .collect::<wildmvs::Result<Vec<_>>>()
        .map_err(err)?;
    let d = py
        .detach(|| photoloss::fit_lambda(&batches, &cfg, init, steps, step_size))
        .map_err(err)?;
    Ok((d.x, d.trace))
}

#[pymodule]
fn wildmvs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyDepthMap>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(aggregate_variance, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_softmin, m)?)?;
    m.add_function(wrap_pyfunction!(softmin_weights, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_depth, m)?)?;
    m.add_function(wrap_pyfunction!(depth_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(unsupervised_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lambda, m)?)?;
    Ok(())
}
