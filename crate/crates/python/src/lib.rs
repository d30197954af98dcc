//! Python bindings: synthetic cameras, corpora, calibration and model I/O.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use rankcal::dataset::{self, RmseDomain, SubsetKind, SubsetSpec};
use rankcal::model::{backward_parameter_count, parameter_count};
use rankcal::pipeline::{self, CalibrationConfig};
use rankcal::simulator::{self, CameraConfig, GamutMode, SyntheticCamera, ToneFamily};
use rankcal::{PipelineModel, PixelPairSet, Rgb};

type Triple = (f64, f64, f64);

fn to_rgb(t: Triple) -> Rgb {
    Rgb::new(t.0, t.1, t.2)
}

fn to_triple(v: Rgb) -> Triple {
    (v.r, v.g, v.b)
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A synthetic camera with known colour matrix, tone curve and gamut map.
#[pyclass(name = "Camera", module = "rankcal_py")]
struct PyCamera {
    inner: SyntheticCamera,
}

#[pymethods]
impl PyCamera {
    #[new]
    #[pyo3(signature = (seed=0, gamma=2.2, gamut="affine", noise=0.0, perturbation=0.3, quantize=false))]
    fn new(seed: u64, gamma: f64, gamut: &str, noise: f64, perturbation: f64, quantize: bool) -> PyResult<Self> {
        let gamut = match gamut {
            "none" => GamutMode::None,
            "affine" => GamutMode::Affine,
            "warped" => GamutMode::Warped,
            other => return Err(PyValueError::new_err(format!("unknown gamut mode `{other}`"))),
        };
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(PyValueError::new_err("gamma must be positive"));
        }
        let cfg = CameraConfig {
            id: format!("synthetic-{seed}"),
            perturbation,
            tone: ToneFamily::Gamma(1.0 / gamma),
            gamut,
            noise_sigma: noise,
            quantize,
        };
        let inner = SyntheticCamera::random(&cfg, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Ground-truth colour matrix as three row tuples.
    #[getter]
    fn matrix(&self) -> Vec<Triple> {
        self.inner.matrix.rows.iter().map(|r| (r[0], r[1], r[2])).collect()
    }

    /// Noise-free rendering of one raw triple.
    fn render(&self, raw: Triple) -> Triple {
        to_triple(self.inner.render(to_rgb(raw)))
    }

    #[pyo3(signature = (patches, illuminants=1, exposures=1, seed=0))]
    fn corpus(&self, patches: usize, illuminants: usize, exposures: usize, seed: u64) -> PyResult<PyCorpus> {
        if illuminants == 0 || exposures == 0 {
            return Err(PyValueError::new_err("need at least one illuminant and exposure"));
        }
        let set = simulator::make_corpus(
            &self.inner,
            patches,
            &simulator::default_illuminants(illuminants),
            &simulator::default_exposures(exposures),
            seed,
        )
        .map_err(value_err)?;
        Ok(PyCorpus { inner: set })
    }

    /// A single shaded image as a row-major corpus of `width * height` pairs.
    #[pyo3(signature = (width, height, seed=0))]
    fn image(&self, width: usize, height: usize, seed: u64) -> PyCorpus {
        PyCorpus { inner: simulator::make_image(&self.inner, width, height, seed) }
    }

    fn describe(&self) -> String {
        self.inner.describe()
    }
}

/// RAW / rendered pixel pairs, normalized to [0, 1].
#[pyclass(name = "Corpus", module = "rankcal_py")]
struct PyCorpus {
    inner: PixelPairSet,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        Ok(Self { inner: dataset::parse_corpus(text).map_err(value_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        dataset::load_corpus(path)
            .map(|inner| Self { inner })
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[pyo3(signature = (white_level=16383.0))]
    fn to_csv(&self, white_level: f64) -> String {
        dataset::write_corpus(&self.inner, white_level)
    }

    /// Subset drawn by a spec string such as `uniform:140` or `exp:2,illu:1`.
    #[pyo3(signature = (spec, seed=0))]
    fn subset(&self, spec: &str, seed: u64) -> PyResult<Self> {
        let kind: SubsetKind = spec.parse().map_err(value_err)?;
        let inner = dataset::select_subset(&self.inner, &SubsetSpec { kind, rng_seed: seed }).map_err(value_err)?;
        Ok(Self { inner })
    }

    fn raws(&self) -> Vec<Triple> {
        self.inner.entries.iter().map(|e| to_triple(e.raw)).collect()
    }

    fn rendered(&self) -> Vec<Triple> {
        self.inner.entries.iter().map(|e| to_triple(e.rendered)).collect()
    }

    fn saturated(&self) -> Vec<bool> {
        self.inner.entries.iter().map(|e| e.saturated).collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A calibrated RAW ↔ rendered pipeline.
#[pyclass(name = "Model", module = "rankcal_py")]
struct PyModel {
    inner: PipelineModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn deserialize(text: &str) -> PyResult<Self> {
        Ok(Self { inner: rankcal::deserialize_model(text).map_err(value_err)? })
    }

    fn serialize(&self) -> String {
        rankcal::serialize_model(&self.inner)
    }

    #[getter]
    fn matrix(&self) -> Vec<Triple> {
        self.inner.matrix.rows.iter().map(|r| (r[0], r[1], r[2])).collect()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        parameter_count(&self.inner)
    }

    #[getter]
    fn backward_parameter_count(&self) -> usize {
        backward_parameter_count(&self.inner)
    }

    /// RAW triples → rendered triples.
    fn forward(&self, py: Python<'_>, raws: Vec<Triple>) -> Vec<Triple> {
        let raws: Vec<Rgb> = raws.into_iter().map(to_rgb).collect();
        let out = py.detach(|| pipeline::predict_forward(&self.inner, &raws));
        out.into_iter().map(to_triple).collect()
    }

    /// Rendered triples → RAW triples.
    fn backward(&self, py: Python<'_>, rendered: Vec<Triple>) -> Vec<Triple> {
        let rendered: Vec<Rgb> = rendered.into_iter().map(to_rgb).collect();
        let out = py.detach(|| pipeline::predict_backward(&self.inner, &rendered));
        out.into_iter().map(to_triple).collect()
    }
}

/// Fits a model to a corpus; the GIL is released while the solvers run.
#[pyfunction]
#[pyo3(signature = (corpus, seed=0, sphere_points=None, trials=None))]
fn calibrate(
    py: Python<'_>,
    corpus: &PyCorpus,
    seed: u64,
    sphere_points: Option<usize>,
    trials: Option<usize>,
) -> PyResult<PyModel> {
    let mut cfg = CalibrationConfig { rng_seed: seed, ..CalibrationConfig::default() };
    if let Some(n) = sphere_points {
        cfg.rank.sphere_points = n;
    }
    if let Some(t) = trials {
        cfg.rank.trials = t;
    }
    let set = corpus.inner.clone();
    py.detach(|| pipeline::calibrate(&set, &cfg))
        .map(|inner| PyModel { inner })
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// RMSE over all samples and channels; `domain` is `rendered255` or `raw01`.
#[pyfunction]
#[pyo3(signature = (predictions, truth, domain="rendered255"))]
fn rmse(predictions: Vec<Triple>, truth: Vec<Triple>, domain: &str) -> PyResult<f64> {
    let domain = match domain {
        "rendered255" => RmseDomain::Rendered255,
        "raw01" => RmseDomain::Raw01,
        other => return Err(PyValueError::new_err(format!("unknown domain `{other}`"))),
    };
    let p: Vec<Rgb> = predictions.into_iter().map(to_rgb).collect();
    let t: Vec<Rgb> = truth.into_iter().map(to_rgb).collect();
    dataset::rmse(&p, &t, domain).map_err(value_err)
}

#[pymodule]
fn rankcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCamera>()?;
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    Ok(())
}
