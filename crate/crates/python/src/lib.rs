//! Python bindings for point-cloud I/O, geometry kernels, losses, encoders
//! and the command-line pipeline.

use std::path::PathBuf;

use pointmix::dataio::{read_cloud, synth_generate, write_cloud, Checkpoint, ShapeKind, SynthParams, SynthSpec};
use pointmix::geom::{self, Point3};
use pointmix::losses;
use pointmix::model::{encode_cls, encode_seg, onehot, Branch};
use pointmix::train::config::encoder_from_map;
use pointmix::train::{derive_rng, stream};
use pointmix::Error;
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError};
use pyo3::prelude::*;

create_exception!(pointmix_py, PointmixError, PyException);
create_exception!(pointmix_py, DataError, PointmixError, "Malformed files, missing labels, bad clouds.");
create_exception!(pointmix_py, NumericError, PointmixError, "NaN/Inf or a zero-norm embedding.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(io) => PyOSError::new_err(io.to_string()),
        e if e.is_data() => DataError::new_err(e.to_string()),
        e if e.is_numeric() => NumericError::new_err(e.to_string()),
        e => PointmixError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for pointmix::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Points with optional per-point part labels and a category id.
#[pyclass(name = "PointCloud", module = "pointmix_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyPointCloud {
    inner: geom::PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, labels=None, category=None))]
    fn new(points: Vec<Point3>, labels: Option<Vec<u32>>, category: Option<u32>) -> PyResult<Self> {
        Ok(Self {
            inner: geom::PointCloud::with_labels(points, labels, category).py()?,
        })
    }

    /// Reads `.pcdb` (binary) or text.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_cloud(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_cloud(&path, &self.inner).py()
    }

    #[getter]
    fn points(&self) -> Vec<Point3> {
        self.inner.points.clone()
    }

    #[getter]
    fn labels(&self) -> Option<Vec<u32>> {
        self.inner.part_labels.clone()
    }

    #[getter]
    fn category(&self) -> Option<u32> {
        self.inner.category
    }

    fn centroid(&self) -> Point3 {
        self.inner.centroid()
    }

    /// Centered, farthest point at norm 1.
    fn normalized(&self) -> Self {
        Self {
            inner: geom::normalize_unit_sphere(&self.inner).cloud,
        }
    }

    #[pyo3(signature = (n, seed=0))]
    fn subsample(&self, n: usize, seed: u64) -> PyResult<Self> {
        let mut rng = derive_rng(seed, stream::SAMPLE, 0, 0);
        Ok(Self {
            inner: geom::subsample(&self.inner, n, &mut rng).py()?,
        })
    }

    /// Conditional coordinates: one random axis of each point set to zero.
    /// Returns `(coords, axes)`.
    #[pyo3(signature = (seed=0))]
    fn erase(&self, seed: u64) -> (Vec<Point3>, Vec<u8>) {
        let e = geom::erase_coordinate(&self.inner, &mut derive_rng(seed, stream::SAMPLE, 0, 0));
        (e.coords, e.axes)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PointCloud(n={}, labels={}, category={:?})",
            self.inner.len(),
            self.inner.part_labels.is_some(),
            self.inner.category
        )
    }
}

/// A saved model: configuration snapshot plus named parameter tensors.
#[pyclass(name = "Checkpoint", module = "pointmix_py")]
pub struct PyCheckpoint {
    inner: Checkpoint,
}

#[pymethods]
impl PyCheckpoint {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn config(&self) -> std::collections::BTreeMap<String, String> {
        self.inner.config.clone()
    }

    #[getter]
    fn task(&self) -> PyResult<String> {
        Ok(self.inner.config_value("task").py()?.to_string())
    }

    #[getter]
    fn step(&self) -> u64 {
        self.inner.step
    }

    #[getter]
    fn epoch(&self) -> u64 {
        self.inner.epoch
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.params.names().map(str::to_string).collect()
    }

    /// `(shape, flat values)` of one parameter.
    fn param(&self, name: &str) -> PyResult<(Vec<usize>, Vec<f64>)> {
        let t = self
            .inner
            .params
            .get(name)
            .ok_or_else(|| PointmixError::new_err(format!("no parameter named {name:?}")))?;
        Ok((t.shape().to_vec(), t.data().to_vec()))
    }

    /// Embedding of a cloud, used as given (no subsampling or normalization).
    /// Segmentation checkpoints need `category`.
    #[pyo3(signature = (cloud, category=None))]
    fn embed(&self, cloud: &PyPointCloud, category: Option<usize>) -> PyResult<Vec<f64>> {
        let encoder = encoder_from_map(&self.inner.config).py()?;
        match encoder.branch {
            Branch::Classification => encode_cls(&cloud.inner.points, &encoder, &self.inner.params).py(),
            Branch::Segmentation => {
                let cat = category
                    .or(cloud.inner.category.map(|c| c as usize))
                    .ok_or_else(|| DataError::new_err("segmentation embedding needs a category"))?;
                let one = onehot(cat, encoder.num_categories).py()?;
                Ok(encode_seg(&cloud.inner.points, &one, &encoder, &self.inner.params).py()?.1)
            }
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "Checkpoint(task={:?}, params={}, step={})",
            self.inner.config.get("task").map_or("?", String::as_str),
            self.inner.params.len(),
            self.inner.step
        )
    }
}

/// Symmetric Chamfer distance: mean nearest-neighbor Euclidean distance, both ways.
#[pyfunction]
fn chamfer_distance(a: Vec<Point3>, b: Vec<Point3>) -> PyResult<f64> {
    geom::chamfer_distance(&a, &b).py()
}

/// Exact k nearest neighbors of each row, ties to the smaller index.
#[pyfunction]
fn knn_graph(features: Vec<Vec<f64>>, k: usize) -> PyResult<Vec<Vec<usize>>> {
    let cols = features.first().map_or(0, Vec::len);
    if features.iter().any(|r| r.len() != cols) {
        return Err(PointmixError::new_err("rows must have equal length"));
    }
    let g = geom::knn_graph(&features.concat(), cols, k).py()?;
    Ok(g.rows().map(<[usize]>::to_vec).collect())
}

#[pyfunction]
fn contrastive_loss(embeddings: Vec<Vec<f64>>) -> PyResult<f64> {
    losses::contrastive_value(&embeddings).py()
}

/// Mixes half the points of `a` with half of `b`. Returns `(mixed, cond_a, cond_b)`.
#[pyfunction]
#[pyo3(signature = (a, b, seed=0))]
fn mix(a: &PyPointCloud, b: &PyPointCloud, seed: u64) -> PyResult<(PyPointCloud, Vec<Point3>, Vec<Point3>)> {
    let s = geom::mix(&a.inner, &b.inner, &mut derive_rng(seed, stream::SAMPLE, 0, 0)).py()?;
    Ok((PyPointCloud { inner: s.mixed }, s.cond_a.coords, s.cond_b.coords))
}

/// One normalized synthetic shape with part labels.
#[pyfunction]
#[pyo3(signature = (kind, n_points, seed=0, variation=0.2))]
fn synth(kind: &str, n_points: usize, seed: u64, variation: f64) -> PyResult<PyPointCloud> {
    let kind = ShapeKind::parse(kind).py()?;
    let mut rng = derive_rng(seed, stream::SAMPLE, 0, 0);
    Ok(PyPointCloud {
        inner: synth_generate(kind, n_points, &SynthParams { variation }, &mut rng).py()?,
    })
}

/// Synthetic dataset as a list of `(cloud, split)` pairs.
#[pyfunction]
fn synthetic_dataset(spec: &str) -> PyResult<Vec<(PyPointCloud, String)>> {
    let data = SynthSpec::parse(spec).py()?.generate().py()?;
    Ok((0..data.len())
        .map(|i| {
            (
                PyPointCloud {
                    inner: data.cloud(i).clone(),
                },
                data.split(i).dir_name().to_string(),
            )
        })
        .collect())
}

/// Runs the command-line tool in-process. Returns `(exit_code, stdout, stderr)`.
#[pyfunction]
fn run_cli(args: Vec<String>) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("pointmix".to_string()).chain(args);
    let code = pointmix::cli::run(argv, &mut out, &mut err);
    (code, String::from_utf8_lossy(&out).into_owned(), String::from_utf8_lossy(&err).into_owned())
}

#[pymodule]
fn pointmix_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyCheckpoint>()?;
    m.add_function(wrap_pyfunction!(chamfer_distance, m)?)?;
    m.add_function(wrap_pyfunction!(knn_graph, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add_function(wrap_pyfunction!(mix, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add("PointmixError", m.py().get_type::<PointmixError>())?;
    m.add("DataError", m.py().get_type::<DataError>())?;
    m.add("NumericError", m.py().get_type::<NumericError>())?;
    Ok(())
}
