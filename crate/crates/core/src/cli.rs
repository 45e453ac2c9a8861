//! Run configuration, pipelines and reports behind the `metaspde` binary.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kramers::{transition_time_continuum, transition_time_discrete, LandscapeSpectra, TransitionEstimate};
use crate::landscape::{build_skeleton, find_stationary_points, SkeletonGraph, StationaryPoint};
use crate::montecarlo::{
    arrhenius_fit, default_max_time, estimate_mean, exponentiality_test, Endpoints, Scheme, SimulationConfig,
    MIN_KS_SAMPLES,
};
use crate::potential::{make_grid, BoundaryCondition, PotentialKind, PotentialSpec};
use crate::spectral::{determinant_ratio, discrete_determinant_ratio, point_spectra, PointSpectra};

/// Number of eigenvalues in the truncated product of the `detratio` mode.
pub const DETRATIO_TRUNCATION: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialName {
    DoubleWell,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialBlock {
    pub kind: PotentialName,
    /// Ascending coefficients of `V`, for `kind = "polynomial"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    pub gamma: f64,
    pub bc: BoundaryCondition,
}

impl PotentialBlock {
    pub fn spec(&self) -> Result<PotentialSpec> {
        let kind = match (self.kind, &self.coefficients) {
            (PotentialName::DoubleWell, None) => PotentialKind::DoubleWell,
            (PotentialName::DoubleWell, Some(_)) => {
                return Err(config_error("potential.coefficients", "not used by the double well"))
            }
            (PotentialName::Polynomial, Some(c)) => PotentialKind::Polynomial(c.clone()),
            (PotentialName::Polynomial, None) => {
                return Err(config_error("potential.coefficients", "required for a polynomial potential"))
            }
        };
        PotentialSpec::new(kind, self.gamma, self.bc).map_err(|e| match e {
            Error::InvalidArgument(m) if m.contains("gamma") => config_error("potential.gamma", m),
            Error::InvalidArgument(m) => config_error("potential.coefficients", m),
            other => other,
        })
    }
}

/// One grid size or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSizes {
    One(usize),
    Many(Vec<usize>),
}

impl GridSizes {
    pub fn to_vec(&self) -> Vec<usize> {
        match self {
            GridSizes::One(n) => vec![*n],
            GridSizes::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub n: GridSizes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKeyword {
    /// Minima with energy strictly below the source.
    Lower,
    /// All minima other than the source.
    Others,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetSelection {
    Keyword(TargetKeyword),
    Ranks(Vec<usize>),
}

impl Default for TargetSelection {
    fn default() -> Self {
        TargetSelection::Keyword(TargetKeyword::Others)
    }
}

pub const DEFAULT_ETA: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KramersBlock {
    /// Energy rank of the source minimum; the highest minimum when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
    #[serde(default)]
    pub targets: TargetSelection,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

impl Default for KramersBlock {
    fn default() -> Self {
        Self { source: None, targets: TargetSelection::default(), eta: DEFAULT_ETA }
    }
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateBlock {
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Time cap; `50 A e^{E/ε}` from the discrete prediction when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<f64>,
}

fn default_rho() -> f64 {
    0.4
}
fn default_dt() -> f64 {
    1e-3
}
fn default_scheme() -> Scheme {
    Scheme::SemiImplicit
}
fn default_samples() -> usize {
    500
}
fn default_seed() -> u64 {
    1
}

impl Default for SimulateBlock {
    fn default() -> Self {
        Self {
            epsilon: Vec::new(),
            rho: default_rho(),
            dt: default_dt(),
            scheme: default_scheme(),
            samples: default_samples(),
            seed: default_seed(),
            max_time: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    #[serde(default)]
    pub format: Format,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// Pass/fail thresholds of the `validate` mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesBlock {
    /// Allowed relative error of the fitted activation energy.
    #[serde(default = "default_activation_tol")]
    pub activation_relative: f64,
    /// Allowed factor between fitted and predicted prefactor.
    #[serde(default = "default_prefactor_factor")]
    pub prefactor_factor: f64,
    /// Significance level of the exponential-law test at the smallest ε.
    #[serde(default = "default_ks_alpha")]
    pub ks_alpha: f64,
}

fn default_activation_tol() -> f64 {
    0.2
}
fn default_prefactor_factor() -> f64 {
    3.0
}
fn default_ks_alpha() -> f64 {
    0.01
}

impl Default for TolerancesBlock {
    fn default() -> Self {
        Self {
            activation_relative: default_activation_tol(),
            prefactor_factor: default_prefactor_factor(),
            ks_alpha: default_ks_alpha(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialBlock,
    pub grid: GridBlock,
    #[serde(default)]
    pub kramers: KramersBlock,
    #[serde(default)]
    pub simulate: SimulateBlock,
    #[serde(default)]
    pub output: OutputBlock,
    #[serde(default)]
    pub tolerances: TolerancesBlock,
}

fn config_error(key: &str, message: impl Into<String>) -> Error {
    Error::Config { key: key.into(), message: message.into() }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates a TOML run configuration, filling defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().trim().to_string();
        let key = message
            .split('`')
            .nth(1)
            .filter(|_| message.starts_with("missing field") || message.starts_with("unknown field"))
            .unwrap_or("document")
            .to_string();
        let at = e.span().map(|s| format!(" (line {})", line_of(text, s.start))).unwrap_or_default();
        config_error(&key, format!("{message}{at}"))
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.potential.spec()?;
        let sizes = self.grid.n.to_vec();
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(config_error("grid.n", "grid sizes must be positive and non-empty"));
        }
        if !(self.kramers.eta.is_finite() && self.kramers.eta >= 0.0) {
            return Err(config_error("kramers.eta", "must be non-negative"));
        }
        let s = &self.simulate;
        if let Some(e) = s.epsilon.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(config_error("simulate.epsilon", format!("values must be positive, got {e}")));
        }
        if !(s.rho.is_finite() && s.rho > 0.0) {
            return Err(config_error("simulate.rho", "must be positive"));
        }
        if !(s.dt.is_finite() && s.dt > 0.0) {
            return Err(config_error("simulate.dt", "must be positive"));
        }
        if let Some(t) = s.max_time.filter(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(config_error("simulate.max_time", format!("must be positive, got {t}")));
        }
        let t = &self.tolerances;
        if !(t.activation_relative > 0.0 && t.prefactor_factor >= 1.0 && t.ks_alpha > 0.0 && t.ks_alpha < 1.0) {
            return Err(config_error("tolerances", "need activation_relative > 0, prefactor_factor >= 1, 0 < ks_alpha < 1"));
        }
        Ok(())
    }

    /// The normalized document: all defaults written out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes to TOML")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Analyze,
    Predict,
    Simulate,
    Validate,
    Detratio,
}

impl Mode {
    fn needs_epsilon(self) -> bool {
        matches!(self, Mode::Predict | Mode::Simulate | Mode::Validate)
    }
    fn simulates(self) -> bool {
        matches!(self, Mode::Simulate | Mode::Validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub mode: Mode,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryRow {
    pub n: usize,
    pub id: usize,
    pub energy: f64,
    pub index: usize,
    pub mean: f64,
    pub grad_norm: f64,
    /// Lowest eigenvalue of `H S_N / h` at saddles.
    pub neg_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeRow {
    pub n: usize,
    pub saddle: usize,
    pub endpoints: (usize, usize),
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeterminantRow {
    pub n: usize,
    pub id: usize,
    pub continuum_det: f64,
    pub continuum_neg: Option<f64>,
    pub discrete_log_det: f64,
    pub discrete_det_sign: f64,
    pub discrete_neg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRow {
    pub n: usize,
    pub epsilon: f64,
    /// `"continuum"` or `"discrete"`.
    pub formula: &'static str,
    pub source: usize,
    pub targets: Vec<usize>,
    pub activation_energy: f64,
    pub prefactor: f64,
    pub predicted_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationRow {
    pub n: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub dt: f64,
    pub rho: f64,
    pub scheme: Scheme,
    pub max_time: f64,
    pub requested: usize,
    pub uncapped: usize,
    pub capped: usize,
    pub mean: f64,
    pub std_error: f64,
    pub ks_statistic: Option<f64>,
    pub ks_p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArrheniusRow {
    pub n: usize,
    pub e_hat: f64,
    pub ln_a_hat: f64,
    pub a_hat: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetRatioRow {
    pub n: usize,
    pub saddle: usize,
    pub minimum: usize,
    pub shooting_ratio: f64,
    pub truncated_product: f64,
    pub truncation: usize,
    pub discrepancy: f64,
    pub discrete_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub n: usize,
    pub value: f64,
    pub reference: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub passed: bool,
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metadata: Metadata,
    pub stationary_points: Vec<StationaryRow>,
    pub edges: Vec<EdgeRow>,
    pub determinants: Vec<DeterminantRow>,
    pub predictions: Vec<PredictionRow>,
    pub simulations: Vec<SimulationRow>,
    pub arrhenius: Vec<ArrheniusRow>,
    pub determinant_ratios: Vec<DetRatioRow>,
    pub verdict: Option<Verdict>,
}

/// An error tagged with the pipeline stage that raised it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("stage `{stage}` failed: {error}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub error: Error,
}

impl PipelineError {
    /// Process exit code: 2 for configuration problems, 3 for numerical ones.
    pub fn exit_code(&self) -> i32 {
        match self.error {
            Error::Config { .. } | Error::InvalidArgument(_) | Error::Precondition(_) => 2,
            _ => 3,
        }
    }
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, PipelineError> {
        self.map_err(|error| PipelineError { stage, error })
    }
}

struct Landscape {
    n: usize,
    points: Vec<StationaryPoint>,
    point_spectra: Vec<PointSpectra>,
    graph: SkeletonGraph,
    spectra: LandscapeSpectra,
}

fn analyze_grid(spec: &PotentialSpec, n: usize) -> std::result::Result<Landscape, PipelineError> {
    let grid = make_grid(spec.bc(), n).stage("config")?;
    let points = find_stationary_points(spec, &grid, None).stage("landscape")?;
    let graph = build_skeleton(spec, &points).stage("landscape")?;
    let point_spectra: Vec<PointSpectra> = points
        .iter()
        .map(|p| point_spectra(spec, &p.profile, p.index))
        .collect::<Result<_>>()
        .stage("spectral")?;
    let spectra = LandscapeSpectra {
        vertices: graph.vertices.iter().map(|v| point_spectra[v.id].clone()).collect(),
        edges: graph.edges.iter().map(|e| point_spectra[e.saddle.id].clone()).collect(),
    };
    Ok(Landscape { n, points, point_spectra, graph, spectra })
}

/// Source and target vertices of the skeleton graph for the kramers block.
pub fn resolve_endpoints(block: &KramersBlock, graph: &SkeletonGraph) -> Result<(usize, Vec<usize>)> {
    let m = graph.vertex_count();
    if m < 2 {
        return Err(config_error("kramers.targets", format!("the landscape has {m} minimum, nothing to transition to")));
    }
    let energy = |v: usize| graph.vertices[v].energy;
    let tol = |e: f64| 1e-12 * (1.0 + e.abs());
    let source = match block.source {
        Some(s) if s < m => s,
        Some(s) => return Err(config_error("kramers.source", format!("rank {s} does not exist ({m} minima)"))),
        None => {
            let top = (0..m).map(energy).fold(f64::NEG_INFINITY, f64::max);
            (0..m).find(|&v| energy(v) >= top - tol(top)).unwrap_or(0)
        }
    };
    let targets: Vec<usize> = match &block.targets {
        TargetSelection::Keyword(TargetKeyword::Others) => (0..m).filter(|&v| v != source).collect(),
        TargetSelection::Keyword(TargetKeyword::Lower) => {
            (0..m).filter(|&v| energy(v) < energy(source) - tol(energy(source))).collect()
        }
        TargetSelection::Ranks(r) => {
            if let Some(&bad) = r.iter().find(|&&t| t >= m || t == source) {
                return Err(config_error(
                    "kramers.targets",
                    format!("rank {bad} is the source or does not exist ({m} minima)"),
                ));
            }
            let mut r = r.clone();
            r.sort_unstable();
            r.dedup();
            r
        }
    };
    if targets.is_empty() {
        return Err(config_error("kramers.targets", "selection is empty"));
    }
    Ok((source, targets))
}

fn prediction_row(n: usize, formula: &'static str, source: usize, targets: &[usize], e: &TransitionEstimate) -> PredictionRow {
    PredictionRow {
        n,
        epsilon: e.epsilon,
        formula,
        source,
        targets: targets.to_vec(),
        activation_energy: e.activation_energy,
        prefactor: e.prefactor,
        predicted_mean: e.predicted_mean,
    }
}

fn check_inputs(cfg: &RunConfig, mode: Mode) -> Result<()> {
    cfg.validate()?;
    if mode.needs_epsilon() && cfg.simulate.epsilon.is_empty() {
        return Err(Error::invalid("simulate.epsilon must list at least one value"));
    }
    if mode.simulates() && cfg.simulate.samples < 2 {
        return Err(Error::invalid(format!("simulate.samples must be at least 2, got {}", cfg.simulate.samples)));
    }
    if mode == Mode::Validate {
        let mut eps = cfg.simulate.epsilon.clone();
        eps.sort_by(f64::total_cmp);
        eps.dedup();
        if eps.len() < 3 {
            return Err(Error::invalid("validate needs at least 3 distinct epsilon values"));
        }
        if cfg.simulate.samples < MIN_KS_SAMPLES {
            return Err(Error::invalid(format!("validate needs at least {MIN_KS_SAMPLES} samples")));
        }
    }
    Ok(())
}

/// Runs one pipeline mode. The report is a deterministic function of the
/// configuration apart from `metadata.timestamp`.
pub fn run_pipeline(cfg: &RunConfig, mode: Mode) -> std::result::Result<Report, PipelineError> {
    check_inputs(cfg, mode).stage("config")?;
    let spec = cfg.potential.spec().stage("config")?;
    let sizes = cfg.grid.n.to_vec();
    let sim = &cfg.simulate;
    let mut report = Report {
        metadata: Metadata {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            mode,
            timestamp: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config: cfg.clone(),
            seeds: if mode.simulates() {
                (0..sim.epsilon.len() as u64).map(|j| sim.seed.wrapping_add(j)).collect()
            } else {
                Vec::new()
            },
        },
        stationary_points: Vec::new(),
        edges: Vec::new(),
        determinants: Vec::new(),
        predictions: Vec::new(),
        simulations: Vec::new(),
        arrhenius: Vec::new(),
        determinant_ratios: Vec::new(),
        verdict: None,
    };
    let mut checks = Vec::new();

    for &n in &sizes {
        let land = analyze_grid(&spec, n)?;
        report.stationary_points.extend(land.points.iter().map(|p| StationaryRow {
            n,
            id: p.id,
            energy: p.energy,
            index: p.index,
            mean: p.mean(),
            grad_norm: p.grad_norm,
            neg_eigenvalue: p.neg_eigenvalue,
        }));
        report.edges.extend(land.graph.edges.iter().map(|e| EdgeRow {
            n,
            saddle: e.saddle.id,
            endpoints: e.endpoints,
            energy: e.saddle.energy,
        }));
        report.determinants.extend(land.points.iter().zip(&land.point_spectra).map(|(p, s)| DeterminantRow {
            n,
            id: p.id,
            continuum_det: s.continuum_det,
            continuum_neg: s.continuum_neg,
            discrete_log_det: s.discrete_log_det,
            discrete_det_sign: s.discrete_det_sign,
            discrete_neg: s.discrete_neg,
        }));

        if mode == Mode::Detratio {
            report.determinant_ratios.push(detratio_row(&spec, &land, &cfg.kramers)?);
            continue;
        }
        if mode == Mode::Analyze {
            continue;
        }

        let (source, targets) = resolve_endpoints(&cfg.kramers, &land.graph).stage("kramers")?;
        let eta = Some(cfg.kramers.eta);
        let mut continuum = Vec::new();
        if mode != Mode::Simulate {
            for &eps in &sim.epsilon {
                let c = transition_time_continuum(&land.graph, &land.spectra, source, &targets, eps, eta).stage("kramers")?;
                let d = transition_time_discrete(&land.graph, &land.spectra, source, &targets, eps, eta).stage("kramers")?;
                report.predictions.push(prediction_row(n, "continuum", source, &targets, &c));
                report.predictions.push(prediction_row(n, "discrete", source, &targets, &d));
                continuum.push(c);
            }
        }
        if !mode.simulates() {
            continue;
        }

        let endpoints = Endpoints::from_graph(&land.graph, source, &targets).stage("simulate")?;
        let mut points = Vec::new();
        let mut smallest: Option<(f64, Option<f64>)> = None;
        for (j, &eps) in sim.epsilon.iter().enumerate() {
            let max_time = sim
                .max_time
                .unwrap_or_else(|| default_max_time(&spec, &land.graph, source, &targets, eps));
            let sc = SimulationConfig {
                spec: spec.clone(),
                n,
                epsilon: eps,
                dt: sim.dt,
                rho: sim.rho,
                scheme: sim.scheme,
                seed: sim.seed.wrapping_add(j as u64),
                max_time,
                start: source,
                targets: targets.clone(),
            };
            let est = estimate_mean(&sc, &endpoints, sim.samples).stage("simulate")?;
            let times = est.uncapped_times();
            let ks = (times.len() >= MIN_KS_SAMPLES)
                .then(|| exponentiality_test(&times))
                .transpose()
                .stage("simulate")?;
            report.simulations.push(SimulationRow {
                n,
                epsilon: eps,
                seed: sc.seed,
                dt: sc.dt,
                rho: sc.rho,
                scheme: sc.scheme,
                max_time,
                requested: sim.samples,
                uncapped: times.len(),
                capped: est.capped,
                mean: est.mean,
                std_error: est.std_error,
                ks_statistic: ks.map(|k| k.statistic),
                ks_p_value: ks.map(|k| k.p_value),
            });
            points.push((eps, est.mean));
            if smallest.is_none_or(|(e, _)| eps < e) {
                smallest = Some((eps, ks.map(|k| k.p_value)));
            }
        }

        if mode == Mode::Validate {
            let fit = arrhenius_fit(&points).stage("validate")?;
            report.arrhenius.push(ArrheniusRow {
                n,
                e_hat: fit.e_hat,
                ln_a_hat: fit.ln_a_hat,
                a_hat: fit.ln_a_hat.exp(),
                r_squared: fit.r_squared,
            });
            let reference = &continuum[0];
            let tol = &cfg.tolerances;
            let rel = (fit.e_hat - reference.activation_energy).abs() / reference.activation_energy.abs();
            checks.push(Check {
                name: "activation_energy".into(),
                n,
                value: fit.e_hat,
                reference: reference.activation_energy,
                passed: rel <= tol.activation_relative,
            });
            let factor = (fit.ln_a_hat - reference.prefactor.ln()).abs().exp();
            checks.push(Check {
                name: "prefactor".into(),
                n,
                value: fit.ln_a_hat.exp(),
                reference: reference.prefactor,
                passed: factor <= tol.prefactor_factor,
            });
            let p = smallest.and_then(|(_, p)| p).unwrap_or(0.0);
            checks.push(Check { name: "exponential_law".into(), n, value: p, reference: tol.ks_alpha, passed: p > tol.ks_alpha });
        }
    }

    if mode == Mode::Validate {
        report.verdict = Some(Verdict { passed: checks.iter().all(|c| c.passed), checks });
    }
    report.check_finite().stage("report")?;
    Ok(report)
}

fn detratio_row(spec: &PotentialSpec, land: &Landscape, block: &KramersBlock) -> std::result::Result<DetRatioRow, PipelineError> {
    let (source, _) = resolve_endpoints(block, &land.graph).stage("detratio")?;
    let minimum = &land.graph.vertices[source];
    let saddle = land
        .points
        .iter()
        .filter(|p| p.index == 1)
        .min_by(|a, b| a.energy.total_cmp(&b.energy))
        .ok_or_else(|| Error::Degenerate("no index-1 saddle on this grid".into()))
        .stage("detratio")?;
    let r = determinant_ratio(spec, &saddle.profile, &minimum.profile, Some(DETRATIO_TRUNCATION)).stage("detratio")?;
    let discrete = discrete_determinant_ratio(spec, &saddle.profile, &minimum.profile).stage("detratio")?;
    let product = r.truncated_product.unwrap_or(f64::NAN);
    Ok(DetRatioRow {
        n: land.n,
        saddle: saddle.id,
        minimum: minimum.id,
        shooting_ratio: r.ratio,
        truncated_product: product,
        truncation: DETRATIO_TRUNCATION,
        discrepancy: r.discrepancy.unwrap_or(f64::NAN),
        discrete_ratio: discrete,
    })
}

fn finite(x: f64, what: &str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("{what} is not finite")))
    }
}

impl Report {
    /// Every number in the report must be finite.
    pub fn check_finite(&self) -> Result<()> {
        let value = serde_json::to_value(self).map_err(|e| Error::Numerical(e.to_string()))?;
        fn walk(v: &serde_json::Value, path: &mut String) -> Result<()> {
            match v {
                serde_json::Value::Number(n) => finite(n.as_f64().unwrap_or(f64::NAN), path),
                serde_json::Value::Array(a) => a.iter().try_for_each(|x| walk(x, path)),
                serde_json::Value::Object(o) => o.iter().try_for_each(|(k, x)| {
                    let len = path.len();
                    path.push('.');
                    path.push_str(k);
                    let r = walk(x, path);
                    path.truncate(len);
                    r
                }),
                _ => Ok(()),
            }
        }
        // serde_json writes non-finite floats as null, so look at the typed rows too
        for r in &self.stationary_points {
            finite(r.energy, "stationary energy")?;
        }
        for r in &self.simulations {
            finite(r.mean, "simulation mean")?;
            finite(r.std_error, "simulation standard error")?;
        }
        for r in &self.predictions {
            finite(r.predicted_mean, "predicted mean")?;
            finite(r.prefactor, "prefactor")?;
        }
        for r in &self.determinants {
            finite(r.continuum_det, "functional determinant")?;
            finite(r.discrete_log_det, "discrete log-determinant")?;
        }
        for r in &self.determinant_ratios {
            finite(r.shooting_ratio, "determinant ratio")?;
            finite(r.truncated_product, "truncated product")?;
            finite(r.discrete_ratio, "discrete determinant ratio")?;
        }
        walk(&value, &mut String::from("report"))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes to JSON");
        s.push('\n');
        s
    }

    /// Long-format CSV: one row per quantity, ε and N.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# {} {} mode={:?} timestamp={}", self.metadata.tool, self.metadata.version, self.metadata.mode, self.metadata.timestamp);
        out.push_str("section,quantity,n,epsilon,id,value\n");
        let mut row = |section: &str, quantity: &str, n: usize, eps: Option<f64>, id: String, value: f64| {
            let eps = eps.map(|e| e.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{section},{quantity},{n},{eps},{id},{value}");
        };
        for r in &self.stationary_points {
            let id = r.id.to_string();
            row("stationary", "energy", r.n, None, id.clone(), r.energy);
            row("stationary", "index", r.n, None, id.clone(), r.index as f64);
            row("stationary", "mean", r.n, None, id.clone(), r.mean);
            if let Some(l) = r.neg_eigenvalue {
                row("stationary", "neg_eigenvalue", r.n, None, id, l);
            }
        }
        for r in &self.edges {
            row("edge", "energy", r.n, None, format!("{}:{}-{}", r.saddle, r.endpoints.0, r.endpoints.1), r.energy);
        }
        for r in &self.determinants {
            let id = r.id.to_string();
            row("determinant", "continuum_det", r.n, None, id.clone(), r.continuum_det);
            row("determinant", "discrete_log_det", r.n, None, id.clone(), r.discrete_log_det);
            row("determinant", "discrete_det_sign", r.n, None, id, r.discrete_det_sign);
        }
        for r in &self.predictions {
            let id = r.formula.to_string();
            row("prediction", "activation_energy", r.n, Some(r.epsilon), id.clone(), r.activation_energy);
            row("prediction", "prefactor", r.n, Some(r.epsilon), id.clone(), r.prefactor);
            row("prediction", "predicted_mean", r.n, Some(r.epsilon), id, r.predicted_mean);
        }
        for r in &self.simulations {
            let id = r.seed.to_string();
            row("simulation", "mean", r.n, Some(r.epsilon), id.clone(), r.mean);
            row("simulation", "std_error", r.n, Some(r.epsilon), id.clone(), r.std_error);
            row("simulation", "uncapped", r.n, Some(r.epsilon), id.clone(), r.uncapped as f64);
            row("simulation", "capped", r.n, Some(r.epsilon), id.clone(), r.capped as f64);
            if let Some(p) = r.ks_p_value {
                row("simulation", "ks_p_value", r.n, Some(r.epsilon), id.clone(), p);
            }
            if let Some(d) = r.ks_statistic {
                row("simulation", "ks_statistic", r.n, Some(r.epsilon), id, d);
            }
        }
        for r in &self.arrhenius {
            row("arrhenius", "e_hat", r.n, None, String::new(), r.e_hat);
            row("arrhenius", "ln_a_hat", r.n, None, String::new(), r.ln_a_hat);
            row("arrhenius", "r_squared", r.n, None, String::new(), r.r_squared);
        }
        for r in &self.determinant_ratios {
            let id = format!("{}/{}", r.saddle, r.minimum);
            row("detratio", "shooting_ratio", r.n, None, id.clone(), r.shooting_ratio);
            row("detratio", "truncated_product", r.n, None, id.clone(), r.truncated_product);
            row("detratio", "discrepancy", r.n, None, id.clone(), r.discrepancy);
            row("detratio", "discrete_ratio", r.n, None, id, r.discrete_ratio);
        }
        if let Some(v) = &self.verdict {
            for c in &v.checks {
                row("verdict", &c.name, c.n, None, if c.passed { "pass" } else { "fail" }.into(), c.value);
            }
        }
        out
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[potential]
kind = "double-well"
gamma = 1.0
bc = "neumann"

[grid]
n = 16
"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.simulate.dt, 1e-3);
        assert_eq!(cfg.simulate.scheme, Scheme::SemiImplicit);
        assert_eq!(cfg.kramers.eta, 1e-8);
        assert_eq!(cfg.output.format, Format::Json);
        assert_eq!(cfg.grid.n.to_vec(), vec![16]);
        assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn bad_documents_name_the_key() {
        let neg = format!("{MINIMAL}\n[simulate]\nepsilon = [-0.1]\n");
        match parse_config(&neg) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "simulate.epsilon"),
            other => panic!("{other:?}"),
        }
        let unknown = format!("{MINIMAL}\n[simulate]\nepsilonn = [0.1]\n");
        match parse_config(&unknown) {
            Err(Error::Config { key, message }) => {
                assert_eq!(key, "epsilonn");
                assert!(message.contains("line"));
            }
            other => panic!("{other:?}"),
        }
        match parse_config("[grid]\nn = 4\n") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "potential"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn analyze_and_predict_double_well() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        let r = run_pipeline(&cfg, Mode::Analyze).unwrap();
        let idx: Vec<usize> = r.stationary_points.iter().map(|s| s.index).collect();
        assert_eq!(idx, vec![0, 0, 1]);

        cfg.simulate.epsilon = vec![0.1];
        let r = run_pipeline(&cfg, Mode::Predict).unwrap();
        let c = r.predictions.iter().find(|p| p.formula == "continuum").unwrap();
        assert!((c.activation_energy - 0.25).abs() < 1e-12);
        assert!((c.prefactor - 3.48412).abs() < 1e-5);
        assert!((c.predicted_mean - 42.45).abs() < 0.01);
        assert_eq!((c.source, c.targets.clone()), (0, vec![1]));
    }

    #[test]
    fn validate_rejects_zero_samples_up_front() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.simulate.epsilon = vec![0.1, 0.12, 0.15];
        cfg.simulate.samples = 0;
        let err = run_pipeline(&cfg, Mode::Validate).unwrap_err();
        assert_eq!(err.stage, "config");
        assert!(matches!(err.error, Error::InvalidArgument(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn lower_targets_need_a_deeper_minimum() {
        let mut cfg = parse_config(MINIMAL).unwrap();
        cfg.kramers.targets = TargetSelection::Keyword(TargetKeyword::Lower);
        cfg.simulate.epsilon = vec![0.1];
        let err = run_pipeline(&cfg, Mode::Predict).unwrap_err();
        assert!(matches!(err.error, Error::Config { .. }));

        // tilted well: x⁴/4 - x²/2 + 0.05 x has its deep minimum on the left
        let tilted = MINIMAL.replace(
            "kind = \"double-well\"",
            "kind = \"polynomial\"\ncoefficients = [0.0, 0.05, -0.5, 0.0, 0.25]",
        );
        let mut cfg = parse_config(&tilted).unwrap();
        cfg.kramers.targets = TargetSelection::Keyword(TargetKeyword::Lower);
        cfg.simulate.epsilon = vec![0.1];
        let r = run_pipeline(&cfg, Mode::Predict).unwrap();
        assert_eq!(r.predictions[0].source, 1);
        assert_eq!(r.predictions[0].targets, vec![0]);
    }

    #[test]
    fn csv_has_one_value_per_row() {
        let cfg = parse_config(MINIMAL).unwrap();
        let csv = run_pipeline(&cfg, Mode::Analyze).unwrap().to_csv();
        let rows: Vec<&str> = csv.lines().skip(2).collect();
        assert!(rows.iter().all(|r| r.split(',').count() == 6));
        assert!(rows.iter().any(|r| r.starts_with("stationary,index,16,,2,1")));
    }
}
