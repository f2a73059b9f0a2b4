//! Python bindings: corpora, training, evaluation, the gradient check and a
//! few of the numeric building blocks.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sfnet_core::checkpoint::Checkpoint;
use sfnet_core::config::TrainConfig;
use sfnet_core::data::{FeatureCorpus, Split, SyntheticSpec};
use sfnet_core::eval::temporal_iou;
use sfnet_core::harness::{evaluate_params, gradcheck as run_gradcheck, param_name, summarize, GradcheckSpec};
use sfnet_core::inference::Segment;
use sfnet_core::mining::ExpansionMode;
use sfnet_core::model::ModelDims;
use sfnet_core::numeric::{Tape, Tensor};
use sfnet_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        Error::Config(_) | Error::Argument(_) | Error::Parse { .. } | Error::Shape { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::NonFinite(_) | Error::Divergence { .. } => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Text form of a Python scalar as the config parser expects it.
fn setting_text(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(b.to_string());
    }
    Ok(v.str()?.to_string())
}

fn settings(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    if let Some(d) = overrides {
        for (k, v) in d.iter() {
            out.push((k.extract::<String>()?, setting_text(&v)?));
        }
    }
    Ok(out)
}

fn config(base: TrainConfig, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
    base.with_overrides(settings(overrides)?).map_err(to_py)
}

fn split(name: &str) -> PyResult<Split> {
    name.parse().map_err(to_py)
}

type SegmentTuple = (u32, usize, usize, usize, f64);

fn segment(t: SegmentTuple) -> Segment {
    Segment {
        video: t.0,
        start: t.1,
        end: t.2,
        class: t.3,
        confidence: t.4,
    }
}

/// A feature corpus held in memory.
#[pyclass(module = "sfnet", frozen)]
struct Corpus {
    inner: FeatureCorpus,
}

#[pymethods]
impl Corpus {
    /// Generate a synthetic corpus; keyword settings override the defaults.
    #[staticmethod]
    #[pyo3(signature = (**spec))]
    fn generate(spec: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let text: String = settings(spec)?
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect();
        let spec = SyntheticSpec::parse(&text).map_err(to_py)?;
        let inner = sfnet_core::data::generate_corpus(&spec).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = sfnet_core::data::load_corpus(&path).map_err(to_py)?;
        Ok(Corpus { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        sfnet_core::data::save_corpus(&self.inner, &path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    fn __len__(&self) -> usize {
        self.inner.videos.len()
    }

    fn video_ids(&self, split_name: &str) -> PyResult<Vec<u32>> {
        Ok(self.inner.split(split(split_name)?).iter().map(|v| v.id).collect())
    }

    /// `length × dim` feature rows of one video.
    fn features(&self, video: u32) -> PyResult<Vec<Vec<f32>>> {
        let v = self
            .inner
            .video(video)
            .ok_or_else(|| PyValueError::new_err(format!("no video {video}")))?;
        Ok(v.features.chunks(self.inner.dim).map(<[f32]>::to_vec).collect())
    }

    /// Ground truth as `(video, start, end, class)` tuples.
    #[pyo3(signature = (split_name = "test"))]
    fn ground_truth(&self, split_name: &str) -> PyResult<Vec<(u32, usize, usize, usize)>> {
        Ok(self
            .inner
            .ground_truth(split(split_name)?)
            .iter()
            .map(|s| (s.video, s.start, s.end, s.class))
            .collect())
    }

    fn summary(&self) -> String {
        summarize(&self.inner).to_string()
    }
}

/// Trained weights with the config that produced them.
#[pyclass(module = "sfnet", frozen)]
struct Model {
    checkpoint: Checkpoint,
}

impl Model {
    fn config(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<TrainConfig> {
        config(TrainConfig::parse(&self.checkpoint.config).map_err(to_py)?, overrides)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            checkpoint: Checkpoint::load(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(to_py)
    }

    #[getter]
    fn config_text(&self) -> &str {
        &self.checkpoint.config
    }

    /// Metric name to value on one split. Keyword settings adjust inference.
    #[pyo3(signature = (corpus, split_name = "test", **overrides))]
    fn evaluate(
        &self,
        corpus: &Corpus,
        split_name: &str,
        overrides: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<BTreeMap<String, f64>> {
        let cfg = self.config(overrides)?;
        let (_, report) =
            evaluate_params(&self.checkpoint.params, &corpus.inner, split(split_name)?, &cfg).map_err(to_py)?;
        Ok(report.rows.into_iter().collect())
    }

    /// Predicted segments as `(video, start, end, class, confidence)`.
    #[pyo3(signature = (corpus, split_name = "test", **overrides))]
    fn predict(
        &self,
        corpus: &Corpus,
        split_name: &str,
        overrides: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Vec<SegmentTuple>> {
        let cfg = self.config(overrides)?;
        let (preds, _) =
            evaluate_params(&self.checkpoint.params, &corpus.inner, split(split_name)?, &cfg).map_err(to_py)?;
        Ok(preds
            .iter()
            .flat_map(|p| p.segments.iter().map(|s| (s.video, s.start, s.end, s.class, s.confidence)))
            .collect())
    }
}

/// Train on the corpus's training split. Keyword settings override the
/// defaults, e.g. `train(c, preset="sfbae", iterations=100)`.
#[pyfunction]
#[pyo3(signature = (corpus, **overrides))]
fn train(py: Python<'_>, corpus: &Corpus, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<(Model, Vec<f64>)> {
    let cfg = config(TrainConfig::default(), overrides)?;
    let outcome = py
        .detach(|| sfnet_core::train::train(&corpus.inner, &cfg))
        .map_err(to_py)?;
    let losses = outcome.log.iter().map(|r| r.loss.total).collect();
    let model = Model {
        checkpoint: Checkpoint {
            params: outcome.params,
            config: cfg.to_text(),
            iterations: cfg.iterations,
        },
    };
    Ok((model, losses))
}

/// Full-objective gradient check on a toy batch:
/// `(max relative error, worst parameter block)`.
#[pyfunction]
#[pyo3(signature = (classes = 3, seed = 0))]
fn gradcheck(classes: usize, seed: u64) -> PyResult<(f64, String)> {
    let spec = GradcheckSpec {
        classes,
        seed,
        ..GradcheckSpec::default()
    };
    let report = run_gradcheck(&spec, None).map_err(to_py)?;
    let dims = ModelDims {
        input_dim: spec.dim,
        hidden: spec.hidden,
        num_classes: spec.classes,
        kernel_width: spec.kernel_width,
    };
    let worst = report.worst().map_or("", |w| param_name(&dims, w.param));
    Ok((report.max_rel_error(), worst.to_string()))
}

/// Row-wise softmax.
#[pyfunction]
fn softmax(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let x = Tensor::new(vec![rows.len(), width], rows.concat()).map_err(to_py)?;
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let y = tape.softmax(v);
    Ok(tape.value(y).data().chunks(width.max(1)).map(<[f64]>::to_vec).collect())
}

/// Mean of the `k` largest values.
#[pyfunction]
fn topk_mean(values: Vec<f64>, k: usize) -> PyResult<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::from_vec(values));
    let y = tape.topk_mean(v, k).map_err(to_py)?;
    Ok(tape.value(y).item())
}

/// Frame-count IoU of two inclusive `(start, end)` intervals.
#[pyfunction]
fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let s = |(start, end): (usize, usize)| segment((0, start, end, 1, 1.0));
    temporal_iou(&s(a), &s(b))
}

/// Average precision of `(video, start, end, class, confidence)` predictions
/// against `(video, start, end, class)` ground truth for one class.
#[pyfunction]
fn segment_ap(
    predictions: Vec<SegmentTuple>,
    ground_truth: Vec<(u32, usize, usize, usize)>,
    class_id: usize,
    iou_threshold: f64,
) -> f64 {
    let preds: Vec<Segment> = predictions.into_iter().map(segment).collect();
    let gt: Vec<Segment> = ground_truth
        .into_iter()
        .map(|(v, s, e, c)| segment((v, s, e, c, 1.0)))
        .collect();
    sfnet_core::eval::segment_ap(&preds, &gt, class_id, iou_threshold)
}

/// Frames gained by growing one annotated frame over `scores[t][class]`.
#[pyfunction]
#[pyo3(signature = (scores, anchor, class_id, radius = 5, xi = 0.9, scan_all = false))]
fn expand_anchor(
    scores: Vec<Vec<f64>>,
    anchor: usize,
    class_id: usize,
    radius: usize,
    xi: f64,
    scan_all: bool,
) -> PyResult<Vec<usize>> {
    let classes = scores.first().map_or(0, Vec::len);
    if classes == 0 || scores.iter().any(|r| r.len() != classes) {
        return Err(PyValueError::new_err("scores must be a non-empty rectangular matrix"));
    }
    let mode = if scan_all {
        ExpansionMode::ScanAll
    } else {
        ExpansionMode::StopOnFailure
    };
    sfnet_core::mining::expand_anchor(&scores.concat(), classes, anchor, class_id, radius, xi, mode).map_err(to_py)
}

#[pymodule]
fn sfnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(topk_mean, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(segment_ap, m)?)?;
    m.add_function(wrap_pyfunction!(expand_anchor, m)?)?;
    Ok(())
}
