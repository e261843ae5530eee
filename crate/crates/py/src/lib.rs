//! Python bindings: `import drumcritic_py`.
//!
//! Audio crosses the boundary as lists of floats and MFCCs as lists of
//! rows, so the module has no numpy dependency.

use std::path::PathBuf;
use std::sync::Arc;

use drumcritic::audio::synth::synth_library;
use drumcritic::features::MfccExtractor;
use drumcritic::pattern::{STEPS, TRACKS};
use drumcritic::sampler::score;
use drumcritic::session::{ensemble_rank as core_ensemble_rank, run_simulation as core_run_simulation};
use drumcritic::session::{ProxyRater, SessionConfig, SessionPhase};
use drumcritic::{
    CriticArch, CriticParams, DrumPattern, InstrumentAssignment, Label, LoopId, MfccMatrix, MfccSettings, Waveform,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

create_exception!(drumcritic_py, DrumcriticError, PyException);

fn err(e: drumcritic::Error) -> PyErr {
    DrumcriticError::new_err(e.to_string())
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for drumcritic::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn parse_config(config_json: Option<&str>) -> PyResult<SessionConfig> {
    let cfg: SessionConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| DrumcriticError::new_err(format!("config: {e}")))?,
        None => SessionConfig::default(),
    };
    cfg.validate().py()?;
    Ok(cfg)
}

fn parse_label(rating: &str) -> PyResult<Label> {
    match rating {
        "like" => Ok(Label::Like),
        "dislike" => Ok(Label::Dislike),
        other => Err(DrumcriticError::new_err(format!("rating must be `like` or `dislike`, got `{other}`"))),
    }
}

fn phase_name(p: SessionPhase) -> &'static str {
    match p {
        SessionPhase::PhaseOne => "I",
        SessionPhase::BuildingPhase2 | SessionPhase::PhaseTwo => "II",
        SessionPhase::Complete => "complete",
    }
}

/// A one-bar loop: a 4x16 hit grid plus one sample id per track.
#[pyclass(name = "DrumLoop", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyDrumLoop(drumcritic::DrumLoop);

#[pymethods]
impl PyDrumLoop {
    #[new]
    fn new(id: String, grid: Vec<Vec<bool>>, instruments: Vec<String>) -> PyResult<Self> {
        if grid.len() != TRACKS || grid.iter().any(|r| r.len() != STEPS) {
            return Err(DrumcriticError::new_err(format!("grid must be {TRACKS}x{STEPS}")));
        }
        let instruments: [String; TRACKS] = instruments
            .try_into()
            .map_err(|_| DrumcriticError::new_err(format!("need {TRACKS} instruments")))?;
        let mut p = DrumPattern::empty();
        for (t, row) in grid.iter().enumerate() {
            for (s, &hit) in row.iter().enumerate() {
                p.set(t, s, hit);
            }
        }
        Ok(Self(drumcritic::DrumLoop::new(LoopId::new(id), p, InstrumentAssignment::new(instruments))))
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id().to_string()
    }

    #[getter]
    fn grid(&self) -> Vec<Vec<bool>> {
        self.0.pattern().grid().iter().map(|r| r.to_vec()).collect()
    }

    #[getter]
    fn instruments(&self) -> Vec<String> {
        self.0.instruments().samples().to_vec()
    }

    #[getter]
    fn hits(&self) -> usize {
        self.0.pattern().hits()
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&drumcritic::loop_to_record(&self.0)).expect("records serialize")
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        drumcritic::pattern::record_from_json(text).py().map(Self)
    }

    fn __repr__(&self) -> String {
        format!("DrumLoop(id={:?}, hits={})", self.0.id().as_str(), self.0.pattern().hits())
    }
}

/// Named one-shot samples; either the generated kit or a WAV directory.
#[pyclass(name = "SampleLibrary", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySampleLibrary(Arc<drumcritic::SampleLibrary>);

#[pymethods]
impl PySampleLibrary {
    #[staticmethod]
    #[pyo3(signature = (seed = 7, per_kind = 4, harsh = 4))]
    fn synth(seed: u64, per_kind: usize, harsh: usize) -> PyResult<Self> {
        Ok(Self(Arc::new(synth_library(seed, per_kind, harsh).py()?)))
    }

    #[staticmethod]
    fn load(directory: PathBuf) -> PyResult<Self> {
        Ok(Self(Arc::new(drumcritic::load_library(directory).py()?)))
    }

    fn ids(&self) -> Vec<String> {
        self.0.ids().to_vec()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn random_loop(&self, seed: u64) -> PyResult<PyDrumLoop> {
        drumcritic::random_loop(&self.0, &mut ChaCha8Rng::seed_from_u64(seed)).py().map(PyDrumLoop)
    }

    /// One proposal of the default perturbation kernel.
    fn perturb(&self, drum_loop: &PyDrumLoop, seed: u64) -> PyDrumLoop {
        let params = drumcritic::PerturbParams::default();
        PyDrumLoop(drumcritic::perturb(&drum_loop.0, &params, &mut ChaCha8Rng::seed_from_u64(seed), &self.0))
    }
}

#[pyfunction]
fn render_bar(drum_loop: &PyDrumLoop, library: &PySampleLibrary) -> PyResult<Vec<f32>> {
    Ok(drumcritic::render_bar(&drum_loop.0, &library.0).py()?.into_samples())
}

#[pyfunction]
fn render_presentation(drum_loop: &PyDrumLoop, library: &PySampleLibrary) -> PyResult<Vec<f32>> {
    Ok(drumcritic::render_presentation(&drum_loop.0, &library.0).py()?.into_samples())
}

#[pyfunction]
fn encode_wav<'py>(py: Python<'py>, samples: Vec<f32>) -> Bound<'py, PyBytes> {
    PyBytes::new(py, &drumcritic::encode_wav(&Waveform::new(samples)))
}

#[pyfunction]
fn decode_wav(data: &[u8]) -> PyResult<Vec<f32>> {
    Ok(drumcritic::decode_wav(data).py()?.into_samples())
}

fn settings(n_mfcc: usize, hop: usize, n_mels: usize) -> PyResult<MfccSettings> {
    let s = MfccSettings {
        n_mfcc,
        hop,
        n_mels,
        ..Default::default()
    };
    s.validate().py()?;
    Ok(s)
}

/// Standardized MFCCs of a 44.1 kHz mono signal, one row per coefficient.
#[pyfunction]
#[pyo3(signature = (samples, n_mfcc = 32, hop = 256, n_mels = 64))]
fn mfcc(samples: Vec<f32>, n_mfcc: usize, hop: usize, n_mels: usize) -> PyResult<Vec<Vec<f64>>> {
    let m = MfccExtractor::new(settings(n_mfcc, hop, n_mels)?).py()?.compute(&Waveform::new(samples)).py()?;
    Ok((0..m.n_coeffs()).map(|k| (0..m.n_frames()).map(|t| m.get(k, t)).collect()).collect())
}

/// The CNN critic, in single precision.
#[pyclass(name = "Critic", frozen, from_py_object)]
#[derive(Clone)]
struct PyCritic(CriticParams);

#[pymethods]
impl PyCritic {
    /// A freshly initialized critic for the given feature settings.
    #[staticmethod]
    #[pyo3(signature = (seed, n_mfcc = 32, hop = 256, n_mels = 64))]
    fn init(seed: u64, n_mfcc: usize, hop: usize, n_mels: usize) -> PyResult<Self> {
        let arch = CriticArch::for_settings(&settings(n_mfcc, hop, n_mels)?);
        CriticParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(seed)).py().map(Self)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        drumcritic::load_checkpoint(path).py().map(Self)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        drumcritic::save_checkpoint(&self.0, path).py()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.0.param_count()
    }

    /// (coefficients, frames) expected by `predict`.
    #[getter]
    fn input_shape(&self) -> (usize, usize) {
        (self.0.arch().input_coeffs, self.0.arch().input_frames)
    }

    /// P(like) for an MFCC matrix given as rows.
    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<f64> {
        let rows = features.len();
        let cols = features.first().map_or(0, Vec::len);
        if features.iter().any(|r| r.len() != cols) {
            return Err(DrumcriticError::new_err("feature rows differ in length"));
        }
        let m = MfccMatrix::new(rows, cols, features.concat(), MfccSettings::default()).py()?;
        self.0.predict(&m).py()
    }

    /// P(like) for a loop, rendered and featurized with matching settings.
    #[pyo3(signature = (drum_loop, library, hop = 256, n_mels = 64))]
    fn score(&self, drum_loop: &PyDrumLoop, library: &PySampleLibrary, hop: usize, n_mels: usize) -> PyResult<f64> {
        let ex = MfccExtractor::new(settings(self.0.arch().input_coeffs, hop, n_mels)?).py()?;
        score(&self.0, &drum_loop.0, &library.0, &ex).py()
    }
}

/// One listener's 80 + 60 rating session.
#[pyclass(name = "Session")]
struct PySession(drumcritic::session::Session);

fn outcome<'py>(py: Python<'py>, phase: &str, remaining: usize) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("phase", phase)?;
    d.set_item("remaining", remaining)?;
    Ok(d)
}

#[pymethods]
impl PySession {
    /// `config_json` holds any subset of the session settings, e.g.
    /// `{"sampler": {"burn_in_steps": 50}, "mfcc": {"hop": 512}}`.
    #[new]
    #[pyo3(signature = (id, library, seed, config_json = None))]
    fn new(id: String, library: &PySampleLibrary, seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let cfg = parse_config(config_json)?;
        drumcritic::session::Session::create(id, cfg, library.0.clone(), seed).py().map(Self)
    }

    #[staticmethod]
    fn load(directory: PathBuf, library: &PySampleLibrary) -> PyResult<Self> {
        drumcritic::session::Session::load(directory, library.0.clone()).py().map(Self)
    }

    fn persist(&self, directory: PathBuf) -> PyResult<()> {
        self.0.persist(directory).py()
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id().to_string()
    }

    #[getter]
    fn phase(&self) -> &'static str {
        phase_name(self.0.phase())
    }

    #[getter]
    fn ratings(&self) -> usize {
        self.0.ratings().len()
    }

    /// `{"loop_id", "phase", "index"}`; repeats the pending loop until rated.
    fn next_loop<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let n = py.detach(|| self.0.next_loop()).py()?;
        let d = PyDict::new(py);
        d.set_item("loop_id", n.loop_id.as_str())?;
        d.set_item("phase", phase_name(self.0.phase()))?;
        d.set_item("index", n.index)?;
        Ok(d)
    }

    fn presentation_audio(&self, loop_id: &str) -> PyResult<Vec<f32>> {
        Ok(self.0.presentation_audio(loop_id).py()?.into_samples())
    }

    /// Rate the pending loop with `"like"` or `"dislike"`. The rating that
    /// closes Phase I also builds the Phase II queue before returning.
    fn submit_rating<'py>(&mut self, py: Python<'py>, loop_id: &str, rating: &str) -> PyResult<Bound<'py, PyDict>> {
        let label = parse_label(rating)?;
        let out = py.detach(|| self.0.submit_rating(loop_id, label)).py()?;
        outcome(py, phase_name(out.phase), out.remaining)
    }

    fn results<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let r = self.0.compute_results().py()?;
        let d = PyDict::new(py);
        d.set_item("theta_init", r.theta_init)?;
        d.set_item("theta_final", r.theta_final)?;
        d.set_item("delta_theta", r.delta_theta)?;
        Ok(d)
    }

    fn initial_critic(&self) -> PyCritic {
        PyCritic(self.0.initial_critic().clone())
    }

    fn final_critic(&self) -> Option<PyCritic> {
        self.0.final_critic().cloned().map(PyCritic)
    }
}

/// A complete proxy-rated session: `always_like`, `always_dislike` or `density`.
#[pyfunction]
#[pyo3(signature = (proxy, library, seed, config_json = None))]
fn run_simulation<'py>(
    py: Python<'py>,
    proxy: &str,
    library: &PySampleLibrary,
    seed: u64,
    config_json: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let rater = ProxyRater::by_name(proxy).py()?;
    let cfg = parse_config(config_json)?;
    let lib = library.0.clone();
    let report = py.detach(|| core_run_simulation(&rater, &cfg, lib, seed)).py()?;
    let d = PyDict::new(py);
    d.set_item("seed", report.seed)?;
    d.set_item("theta_init", report.result.theta_init)?;
    d.set_item("theta_final", report.result.theta_final)?;
    d.set_item("delta_theta", report.result.delta_theta)?;
    d.set_item("phase1_likes", report.phase1_likes)?;
    d.set_item(
        "threshold_violations",
        report.threshold_violations(cfg.sampler.phase2_threshold).len(),
    )?;
    Ok(d)
}

/// `(loop_id, mean score)` pairs, best first.
#[pyfunction]
#[pyo3(signature = (critics, loops, library, hop = 256, n_mels = 64))]
fn ensemble_rank(
    critics: Vec<PyCritic>,
    loops: Vec<PyDrumLoop>,
    library: &PySampleLibrary,
    hop: usize,
    n_mels: usize,
) -> PyResult<Vec<(String, f64)>> {
    let critics: Vec<CriticParams> = critics.into_iter().map(|c| c.0).collect();
    let n_mfcc = critics.first().map_or(32, |c| c.arch().input_coeffs);
    let ex = MfccExtractor::new(settings(n_mfcc, hop, n_mels)?).py()?;
    let loops: Vec<drumcritic::DrumLoop> = loops.into_iter().map(|l| l.0).collect();
    let ranked = core_ensemble_rank(&critics, &loops, &library.0, &ex).py()?;
    Ok(ranked.into_iter().map(|(l, s)| (l.id().to_string(), s)).collect())
}

#[pymodule]
fn drumcritic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DrumcriticError", m.py().get_type::<DrumcriticError>())?;
    m.add("BAR_SAMPLES", drumcritic::BAR_SAMPLES)?;
    m.add("PRESENTATION_SAMPLES", drumcritic::PRESENTATION_SAMPLES)?;
    m.add_class::<PyDrumLoop>()?;
    m.add_class::<PySampleLibrary>()?;
    m.add_class::<PyCritic>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(render_bar, m)?)?;
    m.add_function(wrap_pyfunction!(render_presentation, m)?)?;
    m.add_function(wrap_pyfunction!(encode_wav, m)?)?;
    m.add_function(wrap_pyfunction!(decode_wav, m)?)?;
    m.add_function(wrap_pyfunction!(mfcc, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_rank, m)?)?;
    Ok(())
}
