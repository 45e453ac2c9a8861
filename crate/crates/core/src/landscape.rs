//! Stationary points of `S_N`, their Morse indices, and the skeleton graph
//! of minima joined by index-1 saddles.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::{
    discrete_energy, discrete_gradient, discrete_hessian, l2_distance, BoundaryCondition,
    FieldProfile, Grid, PotentialSpec, TridiagonalOperator,
};
use crate::spectral::tridiagonal_eigenvalue;

/// Tolerances for the stationary-point search and the gradient-flow descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapeConfig {
    /// Newton stops once `|∇S_N|_∞ <= newton_rel_tol * (1 + |∇S_N(seed)|_∞)`.
    pub newton_rel_tol: f64,
    pub max_newton_iter: usize,
    /// Sup-norm distance below which two converged points are merged.
    pub dedup_tol: f64,
    /// Eigenvalues of `H S_N / h` closer than this to zero are degenerate.
    pub degeneracy_tol: f64,
    /// Discrete-L² size of the push off a saddle along its unstable direction.
    pub descent_delta: f64,
    /// Discrete-L² radius at which the descending flow is captured by a minimum.
    pub capture_radius: f64,
    pub max_flow_time: f64,
    /// Amplitude and number of cosine modes used to perturb seed constants.
    pub seed_amplitude: f64,
    pub seed_modes: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            newton_rel_tol: 1e-10,
            max_newton_iter: 100,
            dedup_tol: 1e-6,
            degeneracy_tol: 1e-8,
            descent_delta: 1e-3,
            capture_radius: 1e-3,
            max_flow_time: 1e3,
            seed_amplitude: 0.1,
            seed_modes: 4,
        }
    }
}

/// Tolerance on `|∇S_N|_∞` accepted by [`classify_point`] for hand-built profiles.
const STATIONARITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryPoint {
    pub id: usize,
    pub profile: FieldProfile,
    /// `S_N` at the profile.
    pub energy: f64,
    /// `|∇S_N|_∞`.
    pub grad_norm: f64,
    /// Morse index: negative eigenvalues of `H S_N / h`.
    pub index: usize,
    /// The negative eigenvalue of `H S_N / h` when `index == 1`.
    pub neg_eigenvalue: Option<f64>,
}

impl StationaryPoint {
    pub fn mean(&self) -> f64 {
        let v = self.profile.values();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Default seeds: constants at every critical point of V, the same constants
/// perturbed by `±a cos(kπx)`, and for Dirichlet also `c sin(kπx)`.
pub fn default_seeds(spec: &PotentialSpec, grid: &Grid, config: &LandscapeConfig) -> Vec<FieldProfile> {
    let mut seeds = Vec::new();
    let a = config.seed_amplitude;
    for c in spec.critical_points() {
        seeds.push(FieldProfile::constant(grid, c));
        for k in 1..=config.seed_modes {
            let w = k as f64 * PI;
            for sign in [1.0, -1.0] {
                seeds.push(FieldProfile::from_fn(grid, |x| c + sign * a * (w * x).cos()).expect("finite seed"));
            }
            if grid.bc() == BoundaryCondition::Dirichlet && c != 0.0 {
                seeds.push(FieldProfile::from_fn(grid, |x| c * (w * x).sin()).expect("finite seed"));
            }
        }
    }
    seeds
}

/// Damped Newton iteration on `∇S_N = 0`. Returns `None` when it does not converge.
pub fn newton_solve(spec: &PotentialSpec, seed: &FieldProfile, config: &LandscapeConfig) -> Result<Option<FieldProfile>> {
    let grid = seed.grid().clone();
    let mut u = seed.clone();
    let mut g = discrete_gradient(spec, &u)?;
    let tol = config.newton_rel_tol * (1.0 + sup_norm(&g));
    for _ in 0..config.max_newton_iter {
        if sup_norm(&g) <= tol {
            return Ok(Some(u));
        }
        let hess = discrete_hessian(spec, &u, false)?;
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let Ok(step) = hess.solve(&rhs) else {
            return Ok(None);
        };
        let norm0 = l2(&g);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = u.values().iter().zip(&step).map(|(x, s)| x + alpha * s).collect();
            if trial.iter().all(|v| v.is_finite() && v.abs() < 1e6) {
                let cand = FieldProfile::new(grid.clone(), trial)?;
                let gc = discrete_gradient(spec, &cand)?;
                if l2(&gc) <= (1.0 - 1e-4 * alpha) * norm0 || sup_norm(&gc) <= tol {
                    u = cand;
                    g = gc;
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-6 {
                return Ok(None);
            }
        }
    }
    Ok((sup_norm(&g) <= tol).then_some(u))
}

/// Morse index and negative eigenvalue of a stationary profile.
pub fn classify_point(spec: &PotentialSpec, profile: &FieldProfile) -> Result<(usize, Option<f64>)> {
    classify_point_with(spec, profile, &LandscapeConfig::default())
}

pub fn classify_point_with(
    spec: &PotentialSpec,
    profile: &FieldProfile,
    config: &LandscapeConfig,
) -> Result<(usize, Option<f64>)> {
    let g = discrete_gradient(spec, profile)?;
    if sup_norm(&g) > STATIONARITY_TOL {
        return Err(Error::Precondition(format!(
            "profile is not stationary (|grad S_N| = {:e})",
            sup_norm(&g)
        )));
    }
    let hess = discrete_hessian(spec, profile, true)?;
    let tol = config.degeneracy_tol;
    if hess.count_below(tol) != hess.count_below(-tol) {
        let energy = discrete_energy(spec, profile)?;
        let mean = profile.values().iter().sum::<f64>() / profile.values().len() as f64;
        return Err(Error::Degenerate(format!(
            "stationary point with energy {energy:.6} and mean {mean:.6} has a Hessian eigenvalue within {tol:e} of zero"
        )));
    }
    let index = hess.count_below(0.0);
    let neg = (index == 1).then(|| tridiagonal_eigenvalue(&hess, 0));
    Ok((index, neg))
}

fn energy_order(a: &StationaryPoint, b: &StationaryPoint) -> std::cmp::Ordering {
    let tie = 1e-12 * (1.0 + a.energy.abs().max(b.energy.abs()));
    if (a.energy - b.energy).abs() <= tie {
        a.mean().total_cmp(&b.mean())
    } else {
        a.energy.total_cmp(&b.energy)
    }
}

/// Runs Newton from every seed, merges duplicates and classifies the result.
///
/// Points are returned sorted by Morse index, then energy, then mean value;
/// `id` is the position in that order.
pub fn find_stationary_points(
    spec: &PotentialSpec,
    grid: &Grid,
    seeds: Option<&[FieldProfile]>,
) -> Result<Vec<StationaryPoint>> {
    find_stationary_points_with(spec, grid, seeds, &LandscapeConfig::default())
}

pub fn find_stationary_points_with(
    spec: &PotentialSpec,
    grid: &Grid,
    seeds: Option<&[FieldProfile]>,
    config: &LandscapeConfig,
) -> Result<Vec<StationaryPoint>> {
    if grid.bc() != spec.bc() {
        return Err(Error::invalid("grid and potential use different boundary conditions"));
    }
    let seeds: Vec<FieldProfile> = match seeds {
        Some(s) => s.to_vec(),
        None => default_seeds(spec, grid, config),
    };
    let converged: Vec<Option<FieldProfile>> = seeds
        .par_iter()
        .map(|s| newton_solve(spec, s, config))
        .collect::<Result<_>>()?;

    let mut unique: Vec<(FieldProfile, f64)> = Vec::new();
    for u in converged.into_iter().flatten() {
        let gn = sup_norm(&discrete_gradient(spec, &u)?);
        match unique.iter_mut().find(|(v, _)| v.sup_distance(&u) < config.dedup_tol) {
            Some(existing) if gn < existing.1 => *existing = (u, gn),
            Some(_) => {}
            None => unique.push((u, gn)),
        }
    }

    let mut points = unique
        .into_iter()
        .map(|(profile, grad_norm)| {
            let (index, neg_eigenvalue) = classify_point_with(spec, &profile, config)?;
            Ok(StationaryPoint {
                id: 0,
                energy: discrete_energy(spec, &profile)?,
                profile,
                grad_norm,
                index,
                neg_eigenvalue,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| a.index.cmp(&b.index).then_with(|| energy_order(a, b)));
    for (i, p) in points.iter_mut().enumerate() {
        p.id = i;
    }
    Ok(points)
}

/// Unit (discrete-L²) eigenvector of `op` for the eigenvalue `lambda`, by
/// inverse iteration. The sign makes the largest component positive.
pub fn eigenvector(op: &TridiagonalOperator, lambda: f64) -> Result<Vec<f64>> {
    let n = op.dim();
    let shift = lambda - 1e-9 * (1.0 + lambda.abs());
    let shifted = TridiagonalOperator::new(
        op.diag().iter().map(|d| d - shift).collect(),
        op.offdiag().to_vec(),
        op.scale(),
    );
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sin()).collect();
    for _ in 0..4 {
        v = shifted.solve(&v)?;
        let norm = l2(&v);
        v.iter_mut().for_each(|x| *x /= norm);
    }
    let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    let scale = (n as f64).sqrt() * pivot.signum();
    v.iter_mut().for_each(|x| *x *= scale);
    Ok(v)
}

/// Follows `du/dt = γ Δ^N u - V'(u)` until the state comes within the capture
/// radius of one of `minima`, returning its position in the slice.
///
/// Steps are linearly implicit in the Laplacian with step-doubling error control.
pub fn flow_to_minimum(
    spec: &PotentialSpec,
    start: &FieldProfile,
    minima: &[StationaryPoint],
    config: &LandscapeConfig,
) -> Result<usize> {
    let lap = start.grid().laplacian();
    let implicit = |dt: f64| {
        TridiagonalOperator::new(
            lap.diag().iter().map(|d| 1.0 - dt * spec.gamma() * d).collect(),
            lap.offdiag().iter().map(|e| -dt * spec.gamma() * e).collect(),
            1.0,
        )
    };
    // reaction-only drift: γΔ handled implicitly
    let step = |y: &[f64], dt: f64| -> Result<Vec<f64>> {
        let rhs: Vec<f64> = y.iter().map(|&v| v - dt * spec.dv(v)).collect();
        implicit(dt).solve(&rhs)
    };
    let capture = |y: &[f64]| {
        minima
            .iter()
            .position(|m| l2_distance(y, m.profile.values()) <= config.capture_radius)
    };

    let mut y = start.values().to_vec();
    let mut t = 0.0;
    let mut dt: f64 = 1e-3;
    let tol = 1e-6;
    while t < config.max_flow_time {
        if let Some(i) = capture(&y) {
            return Ok(i);
        }
        let full = step(&y, dt)?;
        let half = step(&step(&y, 0.5 * dt)?, 0.5 * dt)?;
        let err = l2_distance(&full, &half);
        if err <= tol || dt <= 1e-8 {
            y = half;
            t += dt;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::ConnectionFailure("gradient flow became non-finite".into()));
            }
        }
        let factor = if err > 0.0 { 0.9 * (tol / err).sqrt() } else { 2.0 };
        dt = (dt * factor.clamp(0.2, 2.0)).clamp(1e-8, 0.5);
    }
    Err(Error::ConnectionFailure(format!(
        "gradient flow not captured by any minimum within t = {}",
        config.max_flow_time
    )))
}

/// Endpoints of the two unstable branches leaving an index-1 saddle, as
/// positions in `minima`; the first comes from the `+v⁻` side.
pub fn descend_connections(
    spec: &PotentialSpec,
    saddle: &StationaryPoint,
    minima: &[StationaryPoint],
) -> Result<(usize, usize)> {
    descend_connections_with(spec, saddle, minima, &LandscapeConfig::default())
}

pub fn descend_connections_with(
    spec: &PotentialSpec,
    saddle: &StationaryPoint,
    minima: &[StationaryPoint],
    config: &LandscapeConfig,
) -> Result<(usize, usize)> {
    if saddle.index != 1 {
        return Err(Error::Precondition(format!(
            "descent needs an index-1 saddle, point {} has index {}",
            saddle.id, saddle.index
        )));
    }
    let hess = discrete_hessian(spec, &saddle.profile, true)?;
    let lambda = saddle
        .neg_eigenvalue
        .unwrap_or_else(|| tridiagonal_eigenvalue(&hess, 0));
    let v = eigenvector(&hess, lambda)?;
    let side = |sign: f64| -> Result<usize> {
        let start: Vec<f64> = saddle
            .profile
            .values()
            .iter()
            .zip(&v)
            .map(|(u, d)| u + sign * config.descent_delta * d)
            .collect();
        let start = FieldProfile::new(saddle.profile.grid().clone(), start)?;
        flow_to_minimum(spec, &start, minima, config)
    };
    Ok((side(1.0)?, side(-1.0)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonEdge {
    pub saddle: StationaryPoint,
    /// Vertex ids of the two minima the saddle connects.
    pub endpoints: (usize, usize),
}

impl SkeletonEdge {
    pub fn is_self_loop(&self) -> bool {
        self.endpoints.0 == self.endpoints.1
    }
}

/// Minima (vertices, sorted by energy) and index-1 saddles (edges), with the
/// minimax saddle heights between every pair of minima.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonGraph {
    pub vertices: Vec<StationaryPoint>,
    pub edges: Vec<SkeletonEdge>,
    /// `minimax[i][j]`: lowest achievable maximal energy on a path from i to j.
    pub minimax: Vec<Vec<f64>>,
    pub connected: bool,
}

impl SkeletonGraph {
    /// Assembles the graph and computes bottleneck heights. Vertices must
    /// already be in their final order; edge endpoints index into them.
    pub fn new(vertices: Vec<StationaryPoint>, edges: Vec<SkeletonEdge>) -> Result<Self> {
        let m = vertices.len();
        if let Some(e) = edges.iter().find(|e| e.endpoints.0 >= m || e.endpoints.1 >= m) {
            return Err(Error::invalid(format!(
                "edge endpoints {:?} out of range for {m} vertices",
                e.endpoints
            )));
        }
        if let Some(e) = edges.iter().find(|e| e.saddle.index != 1) {
            return Err(Error::invalid(format!(
                "edge saddle {} has index {}",
                e.saddle.id, e.saddle.index
            )));
        }
        let mut mm = vec![vec![f64::INFINITY; m]; m];
        for (i, v) in vertices.iter().enumerate() {
            mm[i][i] = v.energy;
        }
        for e in edges.iter().filter(|e| !e.is_self_loop()) {
            let (a, b) = e.endpoints;
            let cost = e.saddle.energy.max(vertices[a].energy).max(vertices[b].energy);
            if cost < mm[a][b] {
                mm[a][b] = cost;
                mm[b][a] = cost;
            }
        }
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    let via = mm[i][k].max(mm[k][j]);
                    if via < mm[i][j] {
                        mm[i][j] = via;
                    }
                }
            }
        }
        let connected = mm.iter().flatten().all(|x| x.is_finite());
        Ok(Self {
            vertices,
            edges,
            minimax: mm,
            connected,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// `Ŝ(source, targets)`: the lowest minimax height to any target.
    pub fn height_to(&self, source: usize, targets: &[usize]) -> f64 {
        targets
            .iter()
            .map(|&t| self.minimax[source][t])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Builds the skeleton graph from classified stationary points. Points of
/// index 2 and higher are ignored.
pub fn build_skeleton(spec: &PotentialSpec, points: &[StationaryPoint]) -> Result<SkeletonGraph> {
    build_skeleton_with(spec, points, &LandscapeConfig::default())
}

pub fn build_skeleton_with(
    spec: &PotentialSpec,
    points: &[StationaryPoint],
    config: &LandscapeConfig,
) -> Result<SkeletonGraph> {
    let mut vertices: Vec<StationaryPoint> = points.iter().filter(|p| p.index == 0).cloned().collect();
    vertices.sort_by(energy_order);
    let saddles: Vec<&StationaryPoint> = points.iter().filter(|p| p.index == 1).collect();
    let edges = saddles
        .par_iter()
        .map(|s| {
            descend_connections_with(spec, s, &vertices, config).map(|endpoints| SkeletonEdge {
                saddle: (*s).clone(),
                endpoints,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SkeletonGraph::new(vertices, edges)
}

/// Default edge-selection window around the saddle height.
pub fn default_eta(height: f64) -> f64 {
    1e-8 * (1.0 + height.abs())
}

/// Saddles that govern the transition from `source` to `targets`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleSelection {
    /// `Ŝ₀`, the minimax height from the source to the nearest target.
    pub height: f64,
    /// Indices into `graph.edges`.
    pub edges: Vec<usize>,
}

/// Edges whose saddle energy lies within `eta` of `Ŝ₀` and which lie on a
/// simple source-to-target path staying below `Ŝ₀ + eta`. Paths stop at the
/// first target they reach.
pub fn relevant_saddles(graph: &SkeletonGraph, source: usize, targets: &[usize], eta: f64) -> Result<SaddleSelection> {
    let m = graph.vertex_count();
    if targets.is_empty() {
        return Err(Error::invalid("target set is empty"));
    }
    if source >= m || targets.iter().any(|&t| t >= m) {
        return Err(Error::invalid("vertex id out of range"));
    }
    if targets.contains(&source) {
        return Err(Error::invalid("source must not be a target"));
    }
    let height = graph.height_to(source, targets);
    if !height.is_finite() {
        return Err(Error::Disconnected(format!(
            "no path from vertex {source} to targets {targets:?}"
        )));
    }
    let ceiling = height + eta;
    let usable: Vec<usize> = (0..graph.edges.len())
        .filter(|&i| {
            let e = &graph.edges[i];
            !e.is_self_loop() && e.saddle.energy <= ceiling
        })
        .collect();

    let mut is_target = vec![false; m];
    targets.iter().for_each(|&t| is_target[t] = true);
    let mut on_path = vec![false; graph.edges.len()];
    let mut visited = vec![false; m];
    let mut path: Vec<usize> = Vec::new();

    fn dfs(
        v: usize,
        graph: &SkeletonGraph,
        usable: &[usize],
        is_target: &[bool],
        visited: &mut [bool],
        path: &mut Vec<usize>,
        on_path: &mut [bool],
    ) {
        if is_target[v] {
            path.iter().for_each(|&e| on_path[e] = true);
            return;
        }
        visited[v] = true;
        for &ei in usable {
            let (a, b) = graph.edges[ei].endpoints;
            let next = if a == v {
                b
            } else if b == v {
                a
            } else {
                continue;
            };
            if visited[next] {
                continue;
            }
            path.push(ei);
            dfs(next, graph, usable, is_target, visited, path, on_path);
            path.pop();
        }
        visited[v] = false;
    }
    dfs(source, graph, &usable, &is_target, &mut visited, &mut path, &mut on_path);

    let edges = usable
        .into_iter()
        .filter(|&i| on_path[i] && (graph.edges[i].saddle.energy - height).abs() < eta)
        .collect();
    Ok(SaddleSelection { height, edges })
}

/// Maps each vertex to a valley label: vertices joined by saddles lower than
/// `level` share a label. Labels are the smallest vertex id in each valley.
pub fn valleys_below(graph: &SkeletonGraph, level: f64) -> Vec<usize> {
    let m = graph.vertex_count();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for e in graph.edges.iter().filter(|e| !e.is_self_loop() && e.saddle.energy < level) {
        let (a, b) = (find(&mut parent, e.endpoints.0), find(&mut parent, e.endpoints.1));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    (0..m).map(|v| find(&mut parent, v)).collect()
}
