//! Edge weights, graph conductance and Eyring-Kramers transition times.
//!
//! Weights and conductances are carried in log form: discrete weights contain
//! `det H S_N = h^N det(H S_N / h)` and `e^{-S/ε}`, both of which leave the
//! double range at moderate `N` or small `ε`. The conductance is homogeneous
//! of degree one in the weights, so it is computed on weights normalized by
//! the largest one and shifted back in log space.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::landscape::{default_eta, relevant_saddles, valleys_below, SkeletonGraph};
use crate::spectral::{point_spectra, PointSpectra};
use crate::potential::PotentialSpec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum WeightVariant {
    /// `|λ⁻| / √|Det H S|` from the Sturm-Liouville operator.
    Continuum,
    /// `|λ⁻_N| e^{-S_N/ε} / √|det H S_N|` from the unscaled discrete Hessian.
    Discrete { epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedEdge {
    /// Index into `SkeletonGraph::edges`.
    pub edge: usize,
    /// Id of the saddle stationary point.
    pub saddle_id: usize,
    pub endpoints: (usize, usize),
    pub log_weight: f64,
    pub variant: WeightVariant,
}

impl WeightedEdge {
    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    /// An edge with an explicit weight, for hand-built networks.
    pub fn with_weight(endpoints: (usize, usize), weight: f64) -> Self {
        Self {
            edge: 0,
            saddle_id: 0,
            endpoints,
            log_weight: weight.ln(),
            variant: WeightVariant::Continuum,
        }
    }
}

/// Spectral data of every vertex and edge saddle of a skeleton graph.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LandscapeSpectra {
    pub vertices: Vec<PointSpectra>,
    pub edges: Vec<PointSpectra>,
}

impl LandscapeSpectra {
    pub fn compute(spec: &PotentialSpec, graph: &SkeletonGraph) -> Result<Self> {
        let vertices = graph
            .vertices
            .iter()
            .map(|v| point_spectra(spec, &v.profile, v.index))
            .collect::<Result<_>>()?;
        let edges = graph
            .edges
            .iter()
            .map(|e| point_spectra(spec, &e.saddle.profile, e.saddle.index))
            .collect::<Result<_>>()?;
        Ok(Self { vertices, edges })
    }
}

/// Weights of the selected edges (indices into `graph.edges`).
pub fn edge_weights(
    graph: &SkeletonGraph,
    spectra: &LandscapeSpectra,
    selection: &[usize],
    variant: WeightVariant,
) -> Result<Vec<WeightedEdge>> {
    selection
        .iter()
        .map(|&i| {
            let edge = graph
                .edges
                .get(i)
                .ok_or_else(|| Error::invalid(format!("edge {i} out of range")))?;
            let data = spectra
                .edges
                .get(i)
                .ok_or_else(|| Error::invalid(format!("no spectral data for edge {i}")))?;
            let saddle = &edge.saddle;
            let log_weight = match variant {
                WeightVariant::Continuum => {
                    let lambda = data.continuum_neg.ok_or_else(|| {
                        Error::Degenerate(format!("saddle {} has no negative eigenvalue", saddle.id))
                    })?;
                    if lambda >= 0.0 || data.continuum_det == 0.0 {
                        return Err(Error::Degenerate(format!(
                            "saddle {} has λ⁻ = {lambda} and Det = {}",
                            saddle.id, data.continuum_det
                        )));
                    }
                    lambda.abs().ln() - 0.5 * data.continuum_det.abs().ln()
                }
                WeightVariant::Discrete { epsilon } => {
                    let lambda = data.discrete_neg.ok_or_else(|| {
                        Error::Degenerate(format!("saddle {} has no negative eigenvalue", saddle.id))
                    })?;
                    if lambda >= 0.0 || data.discrete_det_sign == 0.0 {
                        return Err(Error::Degenerate(format!(
                            "saddle {} has a singular discrete Hessian",
                            saddle.id
                        )));
                    }
                    let grid = saddle.profile.grid();
                    let ln_h = grid.h().ln();
                    let log_det_unscaled = grid.n() as f64 * ln_h + data.discrete_log_det;
                    ln_h + lambda.abs().ln() - saddle.energy / epsilon - 0.5 * log_det_unscaled
                }
            };
            Ok(WeightedEdge {
                edge: i,
                saddle_id: saddle.id,
                endpoints: edge.endpoints,
                log_weight,
                variant,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConductanceResult {
    pub value: f64,
    pub log_value: f64,
    /// Minimizing vertex potentials: 1 at the source, 0 at the targets.
    pub minimizer: Vec<f64>,
    pub source: usize,
    pub targets: Vec<usize>,
}

/// `Q(a) = Σ w (a₊ - a₋)²`.
pub fn quadratic_form(edges: &[WeightedEdge], a: &[f64]) -> f64 {
    edges
        .iter()
        .map(|e| e.weight() * (a[e.endpoints.0] - a[e.endpoints.1]).powi(2))
        .sum()
}

/// Equivalent conductance between `source` and `targets` on a graph with
/// `vertex_count` vertices.
pub fn conductance(
    edges: &[WeightedEdge],
    source: usize,
    targets: &[usize],
    vertex_count: usize,
) -> Result<ConductanceResult> {
    if targets.is_empty() {
        return Err(Error::invalid("target set is empty"));
    }
    if source >= vertex_count || targets.iter().any(|&t| t >= vertex_count) {
        return Err(Error::invalid("vertex id out of range"));
    }
    if targets.contains(&source) {
        return Err(Error::invalid("source must not be a target"));
    }
    if let Some(e) = edges.iter().find(|e| e.endpoints.0 >= vertex_count || e.endpoints.1 >= vertex_count) {
        return Err(Error::invalid(format!("edge endpoints {:?} out of range", e.endpoints)));
    }
    if edges.iter().any(|e| !e.log_weight.is_finite()) {
        return Err(Error::invalid("edge weights must be positive and finite"));
    }
    let edges: Vec<&WeightedEdge> = edges.iter().filter(|e| e.endpoints.0 != e.endpoints.1).collect();

    let mut is_target = vec![false; vertex_count];
    targets.iter().for_each(|&t| is_target[t] = true);

    // component of the source, not expanding through targets
    let mut reached = vec![false; vertex_count];
    reached[source] = true;
    let mut stack = vec![source];
    let mut hits_target = false;
    while let Some(v) = stack.pop() {
        for e in &edges {
            let (a, b) = e.endpoints;
            let next = if a == v { b } else if b == v { a } else { continue };
            if is_target[next] {
                hits_target = true;
                continue;
            }
            if !reached[next] {
                reached[next] = true;
                stack.push(next);
            }
        }
    }
    if !hits_target {
        return Err(Error::Disconnected(format!(
            "source {source} is not connected to targets {targets:?}: infinite resistance"
        )));
    }

    let log_scale = edges.iter().map(|e| e.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let free: Vec<usize> = (0..vertex_count).filter(|&v| reached[v] && v != source).collect();
    let mut position = vec![usize::MAX; vertex_count];
    free.iter().enumerate().for_each(|(i, &v)| position[v] = i);

    let mut a = vec![0.0; vertex_count];
    a[source] = 1.0;
    if !free.is_empty() {
        let k = free.len();
        let mut lap = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DVector::<f64>::zeros(k);
        for e in &edges {
            let w = (e.log_weight - log_scale).exp();
            let (u, v) = e.endpoints;
            for (x, y) in [(u, v), (v, u)] {
                if position[x] == usize::MAX {
                    continue;
                }
                let i = position[x];
                lap[(i, i)] += w;
                if position[y] != usize::MAX {
                    lap[(i, position[y])] -= w;
                } else if y == source {
                    rhs[i] += w;
                }
            }
        }
        let sol = lap
            .cholesky()
            .ok_or_else(|| Error::Numerical("conductance system is not positive definite".into()))?
            .solve(&rhs);
        for (i, &v) in free.iter().enumerate() {
            a[v] = sol[i].clamp(0.0, 1.0);
        }
    }

    let normalized: f64 = edges
        .iter()
        .map(|e| (e.log_weight - log_scale).exp() * (a[e.endpoints.0] - a[e.endpoints.1]).powi(2))
        .sum();
    let log_value = log_scale + normalized.ln();
    Ok(ConductanceResult {
        value: log_value.exp(),
        log_value,
        minimizer: a,
        source,
        targets: targets.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "formula", rename_all = "snake_case")]
pub enum Provenance {
    ContinuumFormula,
    DiscreteFormula { n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionEstimate {
    pub activation_energy: f64,
    pub prefactor: f64,
    pub epsilon: f64,
    /// `prefactor * exp(activation_energy / epsilon)`.
    pub predicted_mean: f64,
    pub provenance: Provenance,
    /// Edges (indices into the skeleton graph) that entered the conductance.
    pub saddles: Vec<usize>,
}

impl TransitionEstimate {
    fn new(activation_energy: f64, log_prefactor: f64, epsilon: f64, provenance: Provenance, saddles: Vec<usize>) -> Self {
        let prefactor = log_prefactor.exp();
        Self {
            activation_energy,
            prefactor,
            epsilon,
            predicted_mean: prefactor * (activation_energy / epsilon).exp(),
            provenance,
            saddles,
        }
    }
}

struct Reduced {
    height: f64,
    edges: Vec<WeightedEdge>,
    source: usize,
    targets: Vec<usize>,
    selection: Vec<usize>,
}

/// Selects the relevant saddles and merges minima joined below the saddle
/// height into single valleys.
fn reduce(
    graph: &SkeletonGraph,
    spectra: &LandscapeSpectra,
    source: usize,
    targets: &[usize],
    eta: Option<f64>,
    variant: WeightVariant,
) -> Result<Reduced> {
    let m = graph.vertex_count();
    if source >= m || targets.iter().any(|&t| t >= m) {
        return Err(Error::invalid("vertex id out of range"));
    }
    let source_energy = graph.vertices[source].energy;
    if let Some(&t) = targets
        .iter()
        .find(|&&t| graph.vertices[t].energy > source_energy + 1e-12 * (1.0 + source_energy.abs()))
    {
        return Err(Error::Precondition(format!(
            "target {t} lies above the source {source}; only downhill transitions are metastable"
        )));
    }
    let height = graph.height_to(source, targets);
    let eta = eta.unwrap_or_else(|| default_eta(height));
    let selection = relevant_saddles(graph, source, targets, eta)?;
    let valley = valleys_below(graph, selection.height - eta);
    let mut edges = edge_weights(graph, spectra, &selection.edges, variant)?;
    edges.iter_mut().for_each(|e| e.endpoints = (valley[e.endpoints.0], valley[e.endpoints.1]));
    let mut mapped_targets: Vec<usize> = targets.iter().map(|&t| valley[t]).collect();
    mapped_targets.sort_unstable();
    mapped_targets.dedup();
    Ok(Reduced {
        height: selection.height,
        edges,
        source: valley[source],
        targets: mapped_targets,
        selection: selection.edges,
    })
}

/// Continuum Eyring-Kramers estimate `A e^{E/ε}` with
/// `E = Ŝ - S(source)` and `A = 2π / (C* √Det H_source S)`.
pub fn transition_time_continuum(
    graph: &SkeletonGraph,
    spectra: &LandscapeSpectra,
    source: usize,
    targets: &[usize],
    epsilon: f64,
    eta: Option<f64>,
) -> Result<TransitionEstimate> {
    check_epsilon(epsilon)?;
    let r = reduce(graph, spectra, source, targets, eta, WeightVariant::Continuum)?;
    let c = conductance(&r.edges, r.source, &r.targets, graph.vertex_count())?;
    let det = spectra.vertices[source].continuum_det;
    if det <= 0.0 {
        return Err(Error::Degenerate(format!(
            "source minimum has non-positive functional determinant {det}"
        )));
    }
    let log_prefactor = (2.0 * PI).ln() - c.log_value - 0.5 * det.ln();
    let energy = r.height - graph.vertices[source].energy;
    Ok(TransitionEstimate::new(energy, log_prefactor, epsilon, Provenance::ContinuumFormula, r.selection))
}

/// Finite-`N` estimate in physical time:
/// `E[τ] = 2π h e^{-S_N(x*)/ε} / (C*(N, ε) √det H S_N(x*))`.
pub fn transition_time_discrete(
    graph: &SkeletonGraph,
    spectra: &LandscapeSpectra,
    source: usize,
    targets: &[usize],
    epsilon: f64,
    eta: Option<f64>,
) -> Result<TransitionEstimate> {
    check_epsilon(epsilon)?;
    let r = reduce(graph, spectra, source, targets, eta, WeightVariant::Discrete { epsilon })?;
    let c = conductance(&r.edges, r.source, &r.targets, graph.vertex_count())?;
    let vertex = &graph.vertices[source];
    let data = &spectra.vertices[source];
    if data.discrete_det_sign <= 0.0 {
        return Err(Error::Degenerate("source minimum has a non-positive discrete determinant".into()));
    }
    let grid = vertex.profile.grid();
    let ln_h = grid.h().ln();
    let log_det_unscaled = grid.n() as f64 * ln_h + data.discrete_log_det;
    let log_mean = (2.0 * PI).ln() + ln_h - vertex.energy / epsilon - c.log_value - 0.5 * log_det_unscaled;
    let energy = r.height - vertex.energy;
    Ok(TransitionEstimate::new(
        energy,
        log_mean - energy / epsilon,
        epsilon,
        Provenance::DiscreteFormula { n: grid.n() },
        r.selection,
    ))
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")))
    }
}
