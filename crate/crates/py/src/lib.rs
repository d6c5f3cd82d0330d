//! Python bindings: records, matrices, rank metrics, the ensemble and the simulator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use philautia::matrix as mx;
use philautia::pomms::{self, ElasticNetParams, SfsOptions, SupervisedSplit, DEFAULT_SPLIT_FRACTIONS};
use philautia::report::{self, ColorScale, ReportFormat};
use philautia::simulator::{self, SimConfig};
use philautia::{HumanJudgmentRecord, ModelId, RunManifest, ScoreRecord, Setting};
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

create_exception!(philautia_py, PhilautiaError, PyValueError);

fn err(e: philautia::Error) -> PyErr {
    PhilautiaError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn json_err(e: serde_json::Error) -> PyErr {
    PhilautiaError::new_err(e.to_string())
}

fn id(s: &str) -> PyResult<ModelId> {
    ModelId::new(s).map_err(err)
}

fn ids(v: &[String]) -> PyResult<Vec<ModelId>> {
    v.iter().map(|s| id(s)).collect()
}

fn names(v: &[ModelId]) -> Vec<String> {
    v.iter().map(|m| m.to_string()).collect()
}

fn setting(s: &str) -> PyResult<Setting> {
    s.parse().map_err(err)
}

type DiagZ = (f64, f64, f64, Option<f64>);
type Grid = (Vec<Vec<f64>>, Vec<usize>, Vec<usize>);

fn by_name(m: BTreeMap<ModelId, f64>) -> BTreeMap<String, f64> {
    m.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

#[pyclass(name = "ScoreRecord", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScoreRecord(ScoreRecord);

#[pymethods]
impl PyScoreRecord {
    #[new]
    #[pyo3(signature = (image_id, generator, evaluator, setting, raw_score))]
    fn new(image_id: String, generator: &str, evaluator: &str, setting: &str, raw_score: u32) -> PyResult<Self> {
        ScoreRecord::new(image_id, id(generator)?, id(evaluator)?, self::setting(setting)?, raw_score)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn image_id(&self) -> &str {
        &self.0.image_id
    }
    #[getter]
    fn generator(&self) -> String {
        self.0.generator.to_string()
    }
    #[getter]
    fn evaluator(&self) -> String {
        self.0.evaluator.to_string()
    }
    #[getter]
    fn setting(&self) -> &'static str {
        self.0.setting.as_str()
    }
    #[getter]
    fn raw_score(&self) -> u32 {
        self.0.raw_score
    }
    #[getter]
    fn score(&self) -> f64 {
        self.0.score
    }

    fn to_json(&self) -> PyResult<String> {
        philautia::model::to_canonical_line(&self.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreRecord({:?}, {:?}, {:?}, {:?}, {})",
            self.0.image_id,
            self.0.generator.as_str(),
            self.0.evaluator.as_str(),
            self.0.setting.as_str(),
            self.0.raw_score
        )
    }
}

#[pyclass(name = "HumanJudgment", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyJudgment(HumanJudgmentRecord);

#[pymethods]
impl PyJudgment {
    #[new]
    #[pyo3(signature = (image_id, generator, candidate, human_score, references=Vec::new()))]
    fn new(image_id: String, generator: &str, candidate: String, human_score: f64, references: Vec<String>) -> PyResult<Self> {
        Ok(PyJudgment(HumanJudgmentRecord {
            image_id,
            generator: id(generator)?,
            candidate,
            references,
            human_score,
            split: None,
            extra: BTreeMap::new(),
        }))
    }

    #[getter]
    fn image_id(&self) -> &str {
        &self.0.image_id
    }
    #[getter]
    fn generator(&self) -> String {
        self.0.generator.to_string()
    }
    #[getter]
    fn candidate(&self) -> &str {
        &self.0.candidate
    }
    #[getter]
    fn human_score(&self) -> f64 {
        self.0.human_score
    }
}

#[pyclass(name = "RunManifest", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyManifest(RunManifest);

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        RunManifest::load(&path).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let m: RunManifest = serde_json::from_str(text).map_err(json_err)?;
        m.validate().map_err(err)?;
        Ok(Self(m))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn generators(&self) -> Vec<String> {
        names(&self.0.generators)
    }
    #[getter]
    fn evaluators(&self) -> Vec<String> {
        names(&self.0.evaluators)
    }
    #[getter]
    fn image_ids(&self) -> Vec<String> {
        self.0.image_ids().map(str::to_string).collect()
    }
}

fn records(scores: &[PyRef<'_, PyScoreRecord>]) -> Vec<ScoreRecord> {
    scores.iter().map(|r| r.0.clone()).collect()
}

fn judgments(js: &[PyRef<'_, PyJudgment>]) -> Vec<HumanJudgmentRecord> {
    js.iter().map(|r| r.0.clone()).collect()
}

#[pyfunction]
fn load_scores(path: PathBuf) -> PyResult<Vec<PyScoreRecord>> {
    let recs: Vec<ScoreRecord> = philautia::model::read_records(&path).map_err(err)?;
    Ok(recs.into_iter().map(PyScoreRecord).collect())
}

#[pyfunction]
fn load_judgments(path: PathBuf) -> PyResult<Vec<PyJudgment>> {
    let recs: Vec<HumanJudgmentRecord> = philautia::model::read_records(&path).map_err(err)?;
    Ok(recs.into_iter().map(PyJudgment).collect())
}

#[pyfunction]
fn write_scores(path: PathBuf, scores: Vec<PyRef<'_, PyScoreRecord>>) -> PyResult<()> {
    philautia::model::write_records(&path, &records(&scores)).map_err(err)
}

#[pyclass(name = "ScoreMatrix", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyScoreMatrix(mx::ScoreMatrix);

#[pymethods]
impl PyScoreMatrix {
    #[new]
    #[pyo3(signature = (generators, evaluators, values, setting="ref-free"))]
    fn new(generators: Vec<String>, evaluators: Vec<String>, values: Vec<Vec<f64>>, setting: &str) -> PyResult<Self> {
        mx::ScoreMatrix::from_values(ids(&generators)?, ids(&evaluators)?, values, self::setting(setting)?)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn generators(&self) -> Vec<String> {
        names(&self.0.generators)
    }
    #[getter]
    fn evaluators(&self) -> Vec<String> {
        names(&self.0.evaluators)
    }
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values.clone()
    }
    #[getter]
    fn counts(&self) -> Vec<Vec<usize>> {
        self.0.counts.clone()
    }
    #[getter]
    fn setting(&self) -> &'static str {
        self.0.setting.as_str()
    }

    fn get(&self, generator: &str, evaluator: &str) -> PyResult<Option<f64>> {
        Ok(self.0.get(&id(generator)?, &id(evaluator)?))
    }

    fn standardize(&self) -> PyResult<PyStandardized> {
        mx::standardize(&self.0).map(PyStandardized).map_err(err)
    }

    fn minmax_baseline(&self) -> PyResult<Vec<Vec<f64>>> {
        mx::minmax_baseline(&self.0).map_err(err)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

#[pyclass(name = "StandardizedMatrix", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyStandardized(mx::StandardizedMatrix);

#[pymethods]
impl PyStandardized {
    #[getter]
    fn generators(&self) -> Vec<String> {
        names(&self.0.generators)
    }
    #[getter]
    fn evaluators(&self) -> Vec<String> {
        names(&self.0.evaluators)
    }
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values.clone()
    }
    #[getter]
    fn degenerate_rows(&self) -> Vec<String> {
        names(&self.0.degenerate_rows)
    }
    #[getter]
    fn degenerate_columns(&self) -> Vec<String> {
        names(&self.0.degenerate_columns)
    }

    fn get(&self, generator: &str, evaluator: &str) -> PyResult<Option<f64>> {
        Ok(self.0.get(&id(generator)?, &id(evaluator)?))
    }

    fn philautia_scores(&self) -> PyResult<BTreeMap<String, f64>> {
        mx::philautia_scores(&self.0).map(by_name).map_err(err)
    }

    /// `{model: (diag, col_mean, col_std, z or None)}`.
    fn diagonal_zscores(&self) -> PyResult<BTreeMap<String, DiagZ>> {
        let z = mx::diagonal_zscores(&self.0).map_err(err)?;
        Ok(z.into_iter().map(|(k, d)| (k.to_string(), (d.diag, d.col_mean, d.col_std, d.z))).collect())
    }

    /// `[(members, positive_offdiag)]`, best first.
    fn submatrix_scan(&self, k: usize) -> PyResult<Vec<(Vec<String>, usize)>> {
        let scan = mx::submatrix_scan(&self.0, k).map_err(err)?;
        Ok(scan.into_iter().map(|s| (names(&s.ids), s.positive_offdiag)).collect())
    }

    #[pyo3(signature = (title=None, minmax=false))]
    fn heatmap_svg(&self, title: Option<&str>, minmax: bool) -> PyResult<String> {
        let scale = if minmax { ColorScale::MinMax } else { ColorScale::Diverging };
        report::render_heatmap_svg(&self.0.generators, &self.0.evaluators, &self.0.values, scale, title).map_err(err)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }
}

#[pyfunction]
#[pyo3(signature = (scores, manifest, setting="ref-free", min_coverage=0.95))]
fn build_phi(scores: Vec<PyRef<'_, PyScoreRecord>>, manifest: &PyManifest, setting: &str, min_coverage: f64) -> PyResult<PyScoreMatrix> {
    mx::build_phi(&records(&scores), &manifest.0, self::setting(setting)?, min_coverage)
        .map(PyScoreMatrix)
        .map_err(err)
}

/// Standardises a plain value grid; returns `(values, degenerate_rows, degenerate_cols)`.
#[pyfunction]
fn standardize_values(values: Vec<Vec<f64>>) -> PyResult<Grid> {
    let s = mx::standardize_values(&values).map_err(err)?;
    Ok((s.values, s.degenerate_rows, s.degenerate_cols))
}

#[pyfunction]
#[pyo3(signature = (scores, manifest, setting="ref-free", drop_evaluators=Vec::new(), drop_generators=Vec::new(), min_coverage=0.95))]
fn exclude_models(
    scores: Vec<PyRef<'_, PyScoreRecord>>,
    manifest: &PyManifest,
    setting: &str,
    drop_evaluators: Vec<String>,
    drop_generators: Vec<String>,
    min_coverage: f64,
) -> PyResult<PyStandardized> {
    let de: BTreeSet<ModelId> = ids(&drop_evaluators)?.into_iter().collect();
    let dg: BTreeSet<ModelId> = ids(&drop_generators)?.into_iter().collect();
    mx::exclude_models(&records(&scores), &manifest.0, self::setting(setting)?, &de, &dg, min_coverage)
        .map(PyStandardized)
        .map_err(err)
}

#[pyfunction]
fn settings_delta(ref_based: &PyStandardized, ref_free: &PyStandardized) -> PyResult<BTreeMap<String, f64>> {
    mx::settings_delta(&ref_based.0, &ref_free.0).map(by_name).map_err(err)
}

#[pyfunction]
fn kendall_tau_b(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    philautia::rank::kendall_tau_b(&x, &y).map_err(err)
}

#[pyfunction]
fn kendall_tau_c(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    philautia::rank::kendall_tau_c(&x, &y).map_err(err)
}

/// Integer score from a judge reply, or None when the reply has none.
#[pyfunction]
fn parse_score(reply: &str) -> Option<u32> {
    philautia::collector::parse_score(reply).ok()
}

#[pyclass(name = "ElasticNetFit", module = "philautia_py", frozen, skip_from_py_object)]
struct PyFit(pomms::ElasticNetFit);

#[pymethods]
impl PyFit {
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }
    #[getter]
    fn intercept(&self) -> f64 {
        self.0.intercept
    }
    #[getter]
    fn sweeps(&self) -> usize {
        self.0.sweeps
    }
    #[getter]
    fn objective_trace(&self) -> Vec<f64> {
        self.0.objective_trace.clone()
    }

    fn predict(&self, rows: Vec<Vec<f64>>) -> Vec<f64> {
        rows.iter().map(|r| self.0.predict(r)).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (x, y, lam, alpha, standardize=true, tol=1e-6, max_iter=10_000))]
fn fit_elastic_net(x: Vec<Vec<f64>>, y: Vec<f64>, lam: f64, alpha: f64, standardize: bool, tol: f64, max_iter: usize) -> PyResult<PyFit> {
    let params = ElasticNetParams { lambda: lam, alpha, tol, max_iter, standardize };
    pomms::fit_elastic_net(&x, &y, &params).map(PyFit).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (x, y, alpha, standardize=true))]
fn lambda_max(x: Vec<Vec<f64>>, y: Vec<f64>, alpha: f64, standardize: bool) -> PyResult<f64> {
    pomms::lambda_max(&x, &y, alpha, standardize).map_err(err)
}

#[pyclass(name = "EnsembleSpec", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyEnsemble(pomms::EnsembleSpec);

#[pymethods]
impl PyEnsemble {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let spec: pomms::EnsembleSpec = serde_json::from_str(text).map_err(json_err)?;
        spec.validate().map_err(err)?;
        Ok(Self(spec))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    #[getter]
    fn members(&self) -> Vec<String> {
        names(&self.0.members)
    }
    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }
    #[getter]
    fn intercept(&self) -> f64 {
        self.0.intercept
    }
    #[getter]
    fn hyperparameters(&self) -> (f64, f64) {
        (self.0.lambda, self.0.alpha)
    }

    /// Prediction from member scores given in member order.
    fn predict(&self, member_scores: Vec<f64>) -> PyResult<f64> {
        if member_scores.len() != self.0.members.len() {
            return Err(PhilautiaError::new_err(format!(
                "expected {} member scores, got {}",
                self.0.members.len(),
                member_scores.len()
            )));
        }
        Ok(self.0.predict(&member_scores))
    }
}

/// Trains the ensemble; returns `(spec, trace_json, test_tau_b, test_tau_c)`.
#[pyfunction]
#[pyo3(signature = (judgments, scores, evaluators, setting="ref-free", seed=0, max_size=6))]
fn train_pomms(
    judgments: Vec<PyRef<'_, PyJudgment>>,
    scores: Vec<PyRef<'_, PyScoreRecord>>,
    evaluators: Vec<String>,
    setting: &str,
    seed: u64,
    max_size: usize,
) -> PyResult<(PyEnsemble, String, f64, f64)> {
    let cands = ids(&evaluators)?;
    let split = SupervisedSplit::from_records(
        &self::judgments(&judgments),
        &records(&scores),
        &cands,
        self::setting(setting)?,
        DEFAULT_SPLIT_FRACTIONS,
        seed,
    )
    .map_err(err)?;
    let opts = SfsOptions { max_size, ..Default::default() };
    let (spec, trace) = pomms::sfs_select(&cands, &split, &opts).map_err(err)?;
    let eval = pomms::evaluate_ensemble(&spec, &split).map_err(err)?;
    let trace = serde_json::to_string(&trace).map_err(json_err)?;
    Ok((PyEnsemble(spec), trace, eval.tau_b, eval.tau_c))
}

/// `{evaluator: (n, tau_b, tau_c)}` against human judgments.
#[pyfunction]
#[pyo3(signature = (judgments, scores, evaluators, setting="ref-free"))]
fn correlate_evaluators(
    judgments: Vec<PyRef<'_, PyJudgment>>,
    scores: Vec<PyRef<'_, PyScoreRecord>>,
    evaluators: Vec<String>,
    setting: &str,
) -> PyResult<BTreeMap<String, (usize, f64, f64)>> {
    let out = pomms::correlate_evaluators(&self::judgments(&judgments), &records(&scores), &ids(&evaluators)?, self::setting(setting)?)
        .map_err(err)?;
    Ok(out.into_iter().map(|c| (c.evaluator.to_string(), (c.n, c.tau_b, c.tau_c))).collect())
}

#[pyfunction]
#[pyo3(signature = (scores, manifest, spec, setting="ref-free", min_coverage=0.95))]
fn augment_with_ensemble(
    scores: Vec<PyRef<'_, PyScoreRecord>>,
    manifest: &PyManifest,
    spec: &PyEnsemble,
    setting: &str,
    min_coverage: f64,
) -> PyResult<PyStandardized> {
    pomms::augment_phi_with_ensemble(&records(&scores), &manifest.0, self::setting(setting)?, &spec.0, min_coverage)
        .map(PyStandardized)
        .map_err(err)
}

#[pyclass(name = "AuditReport", module = "philautia_py", frozen, skip_from_py_object)]
struct PyAudit(report::AuditReport);

#[pymethods]
impl PyAudit {
    #[getter]
    fn philautia(&self) -> BTreeMap<String, f64> {
        by_name(self.0.philautia.clone())
    }
    #[getter]
    fn notes(&self) -> Vec<String> {
        self.0.notes.clone()
    }
    #[getter]
    fn phi_tilde(&self) -> PyStandardized {
        PyStandardized(self.0.phi_tilde.clone())
    }

    fn flagged(&self) -> Vec<String> {
        self.0.flagged().into_iter().map(|m| m.to_string()).collect()
    }

    /// Renders as "markdown", "csv" or "json".
    #[pyo3(signature = (format="markdown"))]
    fn render(&self, format: &str) -> PyResult<String> {
        let fmt: ReportFormat = format.parse().map_err(err)?;
        report::render_report(&self.0, fmt).map_err(err)
    }
}

#[pyfunction]
fn audit(phi: &PyScoreMatrix) -> PyResult<PyAudit> {
    report::build_audit(phi.0.clone()).map(PyAudit).map_err(err)
}

#[pyclass(name = "SimConfig", module = "philautia_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySim(SimConfig);

#[pymethods]
impl PySim {
    /// Panel with random evaluator offsets/scales and the given self-bias.
    #[staticmethod]
    #[pyo3(signature = (m, n, diag_bias, noise_std=0.02, seed=0, item_quality_std=0.0, human_noise_std=0.0))]
    fn self_biased(
        m: usize,
        n: usize,
        diag_bias: Vec<f64>,
        noise_std: f64,
        seed: u64,
        item_quality_std: f64,
        human_noise_std: f64,
    ) -> PyResult<Self> {
        let cfg = SimConfig {
            item_quality_std,
            human_noise_std,
            ..SimConfig::self_biased(m, n, &diag_bias, noise_std, seed)
        };
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(json_err)?;
        cfg.validate().map_err(err)?;
        Ok(Self(cfg))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.0).map_err(json_err)
    }

    fn ids(&self) -> Vec<String> {
        names(&self.0.ids())
    }

    fn manifest(&self) -> PyManifest {
        PyManifest(self.0.manifest())
    }

    fn simulate_scores(&self) -> PyResult<Vec<PyScoreRecord>> {
        Ok(simulator::simulate_scores(&self.0).map_err(err)?.into_iter().map(PyScoreRecord).collect())
    }

    fn simulate_judgments(&self) -> PyResult<Vec<PyJudgment>> {
        Ok(simulator::simulate_judgments(&self.0).map_err(err)?.into_iter().map(PyJudgment).collect())
    }

    /// `(diag_sign_accuracy, diag_rank_correlation or None)`.
    fn recovery_report(&self, phi_tilde: &PyStandardized) -> PyResult<(f64, Option<f64>)> {
        let r = simulator::recovery_report(&phi_tilde.0, &self.0).map_err(err)?;
        Ok((r.diag_sign_accuracy, r.diag_rank_correlation))
    }
}

#[pymodule]
fn philautia_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PhilautiaError", m.py().get_type::<PhilautiaError>())?;
    m.add_class::<PyScoreRecord>()?;
    m.add_class::<PyJudgment>()?;
    m.add_class::<PyManifest>()?;
    m.add_class::<PyScoreMatrix>()?;
    m.add_class::<PyStandardized>()?;
    m.add_class::<PyFit>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyAudit>()?;
    m.add_class::<PySim>()?;
    m.add_function(wrap_pyfunction!(load_scores, m)?)?;
    m.add_function(wrap_pyfunction!(load_judgments, m)?)?;
    m.add_function(wrap_pyfunction!(write_scores, m)?)?;
    m.add_function(wrap_pyfunction!(build_phi, m)?)?;
    m.add_function(wrap_pyfunction!(standardize_values, m)?)?;
    m.add_function(wrap_pyfunction!(exclude_models, m)?)?;
    m.add_function(wrap_pyfunction!(settings_delta, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_b, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau_c, m)?)?;
    m.add_function(wrap_pyfunction!(parse_score, m)?)?;
    m.add_function(wrap_pyfunction!(fit_elastic_net, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_max, m)?)?;
    m.add_function(wrap_pyfunction!(train_pomms, m)?)?;
    m.add_function(wrap_pyfunction!(correlate_evaluators, m)?)?;
    m.add_function(wrap_pyfunction!(augment_with_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    Ok(())
}
