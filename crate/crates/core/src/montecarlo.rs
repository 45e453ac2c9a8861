//! Monte Carlo simulation of the finite-difference SPDE and the statistical
//! checks applied to its hitting times.
//!
//! Every trajectory draws from its own ChaCha8 stream, selected by the
//! trajectory index, so results do not depend on how trajectories are spread
//! over threads.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{Error, Result};
use crate::kramers::{transition_time_discrete, LandscapeSpectra};
use crate::landscape::{build_skeleton, find_stationary_points, SkeletonGraph};
use crate::potential::{discrete_energy, drift_into, l2_distance, make_grid, FieldProfile, Grid, PotentialSpec};

/// Fraction of capped trajectories above which a mean is rejected.
pub const MAX_CAPPED_FRACTION: f64 = 0.2;
/// Time cap used when no transition-time prediction is available.
pub const FALLBACK_MAX_TIME: f64 = 1e6;
/// Minimum number of samples for the exponential-law test.
pub const MIN_KS_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Laplacian implicit, nonlinearity and noise explicit.
    SemiImplicit,
    Explicit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub spec: PotentialSpec,
    pub n: usize,
    pub epsilon: f64,
    pub dt: f64,
    /// Radius of the target balls in the discrete L² distance.
    pub rho: f64,
    pub scheme: Scheme,
    pub seed: u64,
    pub max_time: f64,
    /// Skeleton vertex (minimum) the trajectories start from.
    pub start: usize,
    pub targets: Vec<usize>,
}

impl SimulationConfig {
    pub fn grid(&self) -> Result<Grid> {
        make_grid(self.spec.bc(), self.n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::invalid(format!("rho must be positive, got {}", self.rho)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be non-negative, got {}", self.epsilon)));
        }
        if !(self.max_time > 0.0) {
            return Err(Error::invalid("max_time must be positive"));
        }
        let grid = self.grid()?;
        if self.scheme == Scheme::Explicit {
            let limit = grid.h() * grid.h() / (4.0 * self.spec.gamma());
            if self.dt > limit {
                return Err(Error::invalid(format!(
                    "explicit scheme needs dt <= h^2/(4 gamma) = {limit:.6e}, got {}",
                    self.dt
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingSample {
    /// Physical hitting time `steps * dt`.
    pub tau: f64,
    pub steps: u64,
    pub seed: u64,
    /// Trajectory index, which selects the random stream.
    pub stream: u64,
    pub capped: bool,
}

/// The generator of trajectory `stream` under `seed`.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One standard normal draw by inverting the normal CDF.
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    // uniform on (0, 1), never 0 or 1
    let u = ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * u)
}

/// Time stepper for one configuration; holds the factorized implicit matrix
/// and scratch space.
#[derive(Debug, Clone)]
pub struct Integrator {
    spec: PotentialSpec,
    grid: Grid,
    dt: f64,
    scheme: Scheme,
    noise_scale: f64,
    // Thomas factors of I - dt γ Δ^N
    sub: Vec<f64>,
    inv_pivot: Vec<f64>,
    upper: Vec<f64>,
    work: Vec<f64>,
}

impl Integrator {
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.grid()?;
        let n = grid.n();
        let lap = grid.laplacian();
        let a = cfg.dt * cfg.spec.gamma();
        let diag: Vec<f64> = lap.diag().iter().map(|d| 1.0 - a * d).collect();
        let sub: Vec<f64> = lap.offdiag().iter().map(|e| -a * e).collect();
        let mut inv_pivot = vec![0.0; n];
        let mut upper = vec![0.0; n.saturating_sub(1)];
        let mut pivot = diag[0];
        for i in 0..n {
            if i > 0 {
                pivot = diag[i] - sub[i - 1] * upper[i - 1];
            }
            inv_pivot[i] = 1.0 / pivot;
            if i + 1 < n {
                upper[i] = sub[i] * inv_pivot[i];
            }
        }
        Ok(Self {
            spec: cfg.spec.clone(),
            noise_scale: (2.0 * cfg.epsilon * cfg.dt / grid.h()).sqrt(),
            grid,
            dt: cfg.dt,
            scheme: cfg.scheme,
            sub,
            inv_pivot,
            upper,
            work: vec![0.0; n],
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Advances `x` by one step in place.
    pub fn step(&mut self, x: &mut [f64], rng: &mut impl RngCore) {
        let h = self.grid.h();
        let bc = self.grid.bc();
        match self.scheme {
            Scheme::Explicit => {
                drift_into(&self.spec, bc, h, x, &mut self.work);
                for (xi, d) in x.iter_mut().zip(&self.work) {
                    *xi += self.dt * d + self.noise_scale * standard_normal(rng);
                }
            }
            Scheme::SemiImplicit => {
                for (w, &xi) in self.work.iter_mut().zip(x.iter()) {
                    *w = xi - self.dt * self.spec.dv(xi) + self.noise_scale * standard_normal(rng);
                }
                let n = x.len();
                // forward sweep then back substitution
                x[0] = self.work[0] * self.inv_pivot[0];
                for i in 1..n {
                    x[i] = (self.work[i] - self.sub[i - 1] * x[i - 1]) * self.inv_pivot[i];
                }
                for i in (0..n - 1).rev() {
                    x[i] -= self.upper[i] * x[i + 1];
                }
            }
        }
    }
}

/// One step of the scheme from `state`.
pub fn step_field(state: &FieldProfile, cfg: &SimulationConfig, rng: &mut impl RngCore) -> Result<FieldProfile> {
    let mut integrator = Integrator::new(cfg)?;
    if state.grid() != integrator.grid() {
        return Err(Error::invalid("state grid does not match the configuration"));
    }
    let mut x = state.values().to_vec();
    integrator.step(&mut x, rng);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp { step: 1, reason: "non-finite state".into() });
    }
    FieldProfile::new(state.grid().clone(), x)
}

/// Start and target profiles of a simulation, resolved from the landscape.
#[derive(Debug, Clone, PartialEq)]
pub struct Endpoints {
    pub start: FieldProfile,
    pub targets: Vec<FieldProfile>,
    /// Blow-up threshold on `|X|_∞`.
    pub guard: f64,
}

impl Endpoints {
    pub fn new(start: FieldProfile, targets: Vec<FieldProfile>) -> Self {
        let largest = std::iter::once(&start)
            .chain(&targets)
            .flat_map(|p| p.values().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        Self { start, targets, guard: 10.0 * (1.0 + largest) }
    }

    /// Minima `start` and `targets` of the skeleton graph.
    pub fn from_graph(graph: &SkeletonGraph, start: usize, targets: &[usize]) -> Result<Self> {
        let m = graph.vertex_count();
        let pick = |v: usize| {
            graph
                .vertices
                .get(v)
                .map(|p| p.profile.clone())
                .ok_or_else(|| Error::invalid(format!("vertex {v} does not exist ({m} minima)")))
        };
        let mut out = Self::new(pick(start)?, targets.iter().map(|&t| pick(t)).collect::<Result<_>>()?);
        let largest = graph
            .vertices
            .iter()
            .flat_map(|p| p.profile.values().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        out.guard = 10.0 * (1.0 + largest);
        Ok(out)
    }
}

/// Runs the landscape analysis for the configuration's grid.
pub fn skeleton_for(cfg: &SimulationConfig) -> Result<SkeletonGraph> {
    let grid = cfg.grid()?;
    let points = find_stationary_points(&cfg.spec, &grid, None)?;
    build_skeleton(&cfg.spec, &points)
}

/// `50 A e^{E/ε}` from the discrete transition-time formula, or
/// [`FALLBACK_MAX_TIME`] when no prediction is possible.
pub fn default_max_time(spec: &PotentialSpec, graph: &SkeletonGraph, start: usize, targets: &[usize], epsilon: f64) -> f64 {
    LandscapeSpectra::compute(spec, graph)
        .and_then(|s| transition_time_discrete(graph, &s, start, targets, epsilon, None))
        .map(|e| 50.0 * e.predicted_mean)
        .ok()
        .filter(|t| t.is_finite() && *t > 0.0)
        .unwrap_or(FALLBACK_MAX_TIME)
}

fn hit(x: &[f64], targets: &[FieldProfile], rho: f64) -> bool {
    targets.iter().any(|t| l2_distance(x, t.values()) <= rho)
}

/// Hitting time of the union of target balls for trajectory `stream`.
pub fn sample_hitting_time(cfg: &SimulationConfig, endpoints: &Endpoints, stream: u64) -> Result<HittingSample> {
    let mut integrator = Integrator::new(cfg)?;
    if endpoints.start.grid() != integrator.grid()
        || endpoints.targets.iter().any(|t| t.grid() != integrator.grid())
    {
        return Err(Error::invalid("start or target grid does not match the configuration"));
    }
    if endpoints.targets.is_empty() {
        return Err(Error::invalid("no target profiles"));
    }
    let mut x = endpoints.start.values().to_vec();
    if hit(&x, &endpoints.targets, cfg.rho) {
        return Err(Error::Precondition("start lies inside a target ball".into()));
    }
    let mut rng = trajectory_rng(cfg.seed, stream);
    let max_steps = (cfg.max_time / cfg.dt).ceil() as u64;
    let mut steps = 0u64;
    while steps < max_steps {
        integrator.step(&mut x, &mut rng);
        steps += 1;
        let sup = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !sup.is_finite() || sup > endpoints.guard {
            return Err(Error::BlowUp {
                step: steps,
                reason: format!("|X|_inf = {sup:e} exceeds {}", endpoints.guard),
            });
        }
        if hit(&x, &endpoints.targets, cfg.rho) {
            return Ok(HittingSample { tau: steps as f64 * cfg.dt, steps, seed: cfg.seed, stream, capped: false });
        }
    }
    Ok(HittingSample { tau: steps as f64 * cfg.dt, steps, seed: cfg.seed, stream, capped: true })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// All samples in trajectory order, capped ones included.
    pub samples: Vec<HittingSample>,
    pub capped: usize,
}

impl MeanEstimate {
    pub fn uncapped_times(&self) -> Vec<f64> {
        self.samples.iter().filter(|s| !s.capped).map(|s| s.tau).collect()
    }
}

/// Mean hitting time over trajectories `0..count`, in parallel on the
/// current rayon pool.
pub fn estimate_mean(cfg: &SimulationConfig, endpoints: &Endpoints, count: usize) -> Result<MeanEstimate> {
    if count < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {count}")));
    }
    cfg.validate()?;
    let samples = (0..count as u64)
        .into_par_iter()
        .map(|i| sample_hitting_time(cfg, endpoints, i))
        .collect::<Result<Vec<_>>>()?;
    let capped = samples.iter().filter(|s| s.capped).count();
    if capped as f64 > MAX_CAPPED_FRACTION * count as f64 {
        return Err(Error::Unreliable { capped, total: count });
    }
    let times: Vec<f64> = samples.iter().filter(|s| !s.capped).map(|s| s.tau).collect();
    let (mean, std_error) = mean_and_error(&times);
    Ok(MeanEstimate { mean, std_error, samples, capped })
}

/// Resolves the endpoints from the landscape and estimates the mean.
pub fn estimate_mean_from_config(cfg: &SimulationConfig, count: usize) -> Result<MeanEstimate> {
    let graph = skeleton_for(cfg)?;
    let endpoints = Endpoints::from_graph(&graph, cfg.start, &cfg.targets)?;
    estimate_mean(cfg, &endpoints, count)
}

fn mean_and_error(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov-Smirnov test of `samples / mean(samples)` against the unit
/// exponential law.
pub fn exponentiality_test(samples: &[f64]) -> Result<KsResult> {
    if samples.len() < MIN_KS_SAMPLES {
        return Err(Error::invalid(format!(
            "exponential-law test needs at least {MIN_KS_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("samples must be finite and non-negative"));
    }
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(Error::invalid("samples have zero mean"));
    }
    let mut x: Vec<f64> = samples.iter().map(|v| v / mean).collect();
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = x
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = -(-v).exp_m1();
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let sn = nf.sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * statistic;
    Ok(KsResult { statistic, p_value: ks_survival(lambda), n })
}

/// `Q(λ) = 2 Σ (-1)^{k-1} e^{-2k²λ²}`, the limiting KS tail probability.
pub fn ks_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-300 || term < 1e-17 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArrheniusFit {
    pub e_hat: f64,
    pub ln_a_hat: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `ln(mean) = ln A + E/ε`. Repeated ε values are
/// merged by averaging their means.
pub fn arrhenius_fit(points: &[(f64, f64)]) -> Result<ArrheniusFit> {
    if points.iter().any(|&(e, m)| !(e > 0.0 && e.is_finite() && m > 0.0 && m.is_finite())) {
        return Err(Error::invalid("Arrhenius data needs positive finite epsilon and mean"));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64, usize)> = Vec::new();
    for (e, m) in sorted {
        match merged.last_mut() {
            Some(last) if last.0 == e => {
                last.1 += m;
                last.2 += 1;
            }
            _ => merged.push((e, m, 1)),
        }
    }
    if merged.len() < 3 {
        return Err(Error::invalid(format!(
            "Arrhenius fit needs at least 3 distinct epsilon values, got {}",
            merged.len()
        )));
    }
    let xs: Vec<f64> = merged.iter().map(|p| 1.0 / p.0).collect();
    let ys: Vec<f64> = merged.iter().map(|p| (p.1 / p.2 as f64).ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let e_hat = sxy / sxx;
    let ln_a_hat = my - e_hat * mx;
    let ss_res: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ln_a_hat - e_hat * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(ArrheniusFit { e_hat, ln_a_hat, r_squared })
}

/// Energy of the deterministic flow (`ε = 0`) along `steps` steps from `start`.
pub fn energy_trace(cfg: &SimulationConfig, start: &FieldProfile, steps: usize) -> Result<Vec<f64>> {
    let mut quiet = cfg.clone();
    quiet.epsilon = 0.0;
    let mut integrator = Integrator::new(&quiet)?;
    let mut rng = trajectory_rng(cfg.seed, 0);
    let mut x = start.values().to_vec();
    let mut out = Vec::with_capacity(steps + 1);
    out.push(discrete_energy(&cfg.spec, start)?);
    for _ in 0..steps {
        integrator.step(&mut x, &mut rng);
        out.push(discrete_energy(&cfg.spec, &FieldProfile::new(start.grid().clone(), x.clone())?)?);
    }
    Ok(out)
}
