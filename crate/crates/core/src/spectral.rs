//! Discrete and continuum spectra of Hessians, and functional determinants.
//!
//! The continuum Hessian at a stationary profile `φ` is the Sturm-Liouville
//! operator `f ↦ -γ f'' + V''(φ(x)) f` on `[0, 1]`. Its coefficient between
//! grid nodes comes from a natural cubic spline through `V''(φ(x_i))`.
//!
//! Functional determinants use the initial-value route: solve `H f = 0` from
//! the left end and read the determinant off the right end. The pairing is
//!
//! | boundary  | f(0) | f'(0) | Det   |
//! |-----------|------|-------|-------|
//! | Dirichlet | 0    | 1     | f(1)  |
//! | Neumann   | 1    | 0     | f'(1) |
//!
//! which is the one for which ratios of determinants equal ratios of
//! eigenvalue products. [`determinant_convention_holds`] re-checks this
//! numerically the first time a determinant is requested.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::potential::{discrete_hessian, BoundaryCondition, FieldProfile, PotentialSpec, TridiagonalOperator};

/// RK4 steps on `[0, 1]` for shooting and determinant integration.
pub const DEFAULT_SHOOTING_STEPS: usize = 4096;

/// Determinants smaller than this in magnitude are treated as singular.
pub const DETERMINANT_DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SpectrumKind {
    DiscreteFull,
    ContinuumPartial { k_max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    pub eigenvalues: Vec<f64>,
    pub kind: SpectrumKind,
    /// Stationary profile whose Hessian this is, when known.
    pub profile: Option<FieldProfile>,
}

impl SpectrumResult {
    /// Number of negative eigenvalues.
    pub fn negative_count(&self) -> usize {
        self.eigenvalues.iter().filter(|&&l| l < 0.0).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalDeterminant {
    pub value: f64,
    pub bc: BoundaryCondition,
    pub profile: FieldProfile,
}

/// `k`-th smallest eigenvalue (0-based) by Sturm bisection to full precision.
pub fn tridiagonal_eigenvalue(op: &TridiagonalOperator, k: usize) -> f64 {
    let (mut lo, mut hi) = op.gershgorin();
    let pad = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
    lo -= pad;
    hi += pad;
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if op.count_below(mid) > k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
}

/// All eigenvalues of a symmetric tridiagonal operator, ascending.
pub fn tridiagonal_eigen(op: &TridiagonalOperator) -> SpectrumResult {
    let eigenvalues = (0..op.dim())
        .into_par_iter()
        .map(|k| tridiagonal_eigenvalue(op, k))
        .collect();
    SpectrumResult {
        eigenvalues,
        kind: SpectrumKind::DiscreteFull,
        profile: None,
    }
}

/// Natural cubic spline on uniformly spaced nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x0: f64,
    dx: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x0: f64, dx: f64, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 2 || !(dx > 0.0) {
            return Err(Error::invalid("spline needs at least two uniformly spaced nodes"));
        }
        let mut m = vec![0.0; n];
        if n > 2 {
            let inner = n - 2;
            let rhs: Vec<f64> = (1..n - 1)
                .map(|i| 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (dx * dx))
                .collect();
            let sys = TridiagonalOperator::new(vec![4.0; inner], vec![1.0; inner - 1], 1.0);
            let sol = sys.solve(&rhs)?;
            m[1..n - 1].copy_from_slice(&sol);
        }
        Ok(Self { x0, dx, y, m })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let s = (x - self.x0) / self.dx;
        let i = (s.floor().max(0.0) as usize).min(n - 2);
        let t = s - i as f64;
        let (a, b) = (1.0 - t, t);
        let h2 = self.dx * self.dx;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h2 / 6.0
    }
}

/// Coefficient `q(x)` of the operator `-γ f'' + q f`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Spline(CubicSpline),
}

impl Coefficient {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Spline(s) => s.eval(x),
        }
    }
}

/// Regular Sturm-Liouville problem `-γ f'' + q(x) f = λ f` on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct SturmLiouville {
    gamma: f64,
    bc: BoundaryCondition,
    steps: usize,
    /// `q` at `j / (2 steps)`, `j = 0..=2 steps`.
    q_half: Vec<f64>,
}

impl SturmLiouville {
    pub fn new(gamma: f64, bc: BoundaryCondition, q: &Coefficient, steps: usize) -> Result<Self> {
        if !(gamma > 0.0) || steps < 1 {
            return Err(Error::invalid("Sturm-Liouville problem needs gamma > 0 and steps >= 1"));
        }
        let q_half = (0..=2 * steps)
            .map(|j| q.eval(j as f64 / (2 * steps) as f64))
            .collect();
        Ok(Self {
            gamma,
            bc,
            steps,
            q_half,
        })
    }

    /// Hessian operator of `S` at a (discrete) stationary profile.
    pub fn hessian_at(spec: &PotentialSpec, profile: &FieldProfile, steps: usize) -> Result<Self> {
        let grid = profile.grid();
        let curvature: Vec<f64> = profile.extended().iter().map(|&y| spec.d2v(y)).collect();
        let q = if curvature.iter().all(|&c| c == curvature[0]) {
            Coefficient::Constant(curvature[0])
        } else {
            Coefficient::Spline(CubicSpline::new(grid.nodes()[0], grid.h(), curvature)?)
        };
        Self::new(spec.gamma(), spec.bc(), &q, steps)
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    fn q_range(&self) -> (f64, f64, f64) {
        let lo = self.q_half.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.q_half.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = self.q_half.iter().sum::<f64>() / self.q_half.len() as f64;
        (lo, hi, mean)
    }

    /// Scaled Prüfer angle at `x = 1` for spectral parameter `lambda`.
    fn prufer_angle(&self, lambda: f64, scale: f64) -> f64 {
        let g = self.gamma;
        let rhs = |theta: f64, q: f64| {
            let (s, c) = theta.sin_cos();
            scale / g * c * c + (lambda - q) / scale * s * s
        };
        let dt = 1.0 / self.steps as f64;
        let mut theta = match self.bc {
            BoundaryCondition::Dirichlet => 0.0,
            BoundaryCondition::Neumann => 0.5 * PI,
        };
        for j in 0..self.steps {
            let (q0, qm, q1) = (self.q_half[2 * j], self.q_half[2 * j + 1], self.q_half[2 * j + 2]);
            let k1 = rhs(theta, q0);
            let k2 = rhs(theta + 0.5 * dt * k1, qm);
            let k3 = rhs(theta + 0.5 * dt * k2, qm);
            let k4 = rhs(theta + dt * k3, q1);
            theta += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        theta
    }

    /// The `k`-th eigenvalue (0-based), by oscillation counting on the Prüfer
    /// angle and Illinois-safeguarded bracketing on `λ`.
    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        let (q_lo, q_hi, q_mean) = self.q_range();
        let (target, modes) = match self.bc {
            BoundaryCondition::Dirichlet => ((k + 1) as f64 * PI, (k + 1) as f64),
            BoundaryCondition::Neumann => (0.5 * PI + k as f64 * PI, k as f64),
        };
        let g = self.gamma;
        let estimate = q_mean + g * PI * PI * modes * modes;
        let scale = (g * (estimate - q_mean).max(1.0)).sqrt();
        let f = |lambda: f64| self.prufer_angle(lambda, scale) - target;

        let mut lo = q_lo - 1.0;
        let mut hi = q_hi + g * PI * PI * (modes + 1.0) * (modes + 1.0) + 1.0;
        let mut f_lo = f(lo);
        let mut f_hi = f(hi);
        let mut tries = 0;
        while f_lo > 0.0 || f_hi < 0.0 {
            tries += 1;
            if tries > 60 || !f_lo.is_finite() || !f_hi.is_finite() {
                return Err(Error::Numerical(format!(
                    "could not bracket Sturm-Liouville eigenvalue k = {k}"
                )));
            }
            let width = hi - lo;
            if f_lo > 0.0 {
                lo -= width;
                f_lo = f(lo);
            }
            if f_hi < 0.0 {
                hi += width;
                f_hi = f(hi);
            }
        }

        let mut side = 0i8;
        for _ in 0..300 {
            let width = hi - lo;
            if width <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
                break;
            }
            let mut x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            // regula falsi stalls near a convex end; fall back to bisection
            if !(x > lo && x < hi) || (x - lo).min(hi - x) < 1e-3 * width && side.abs() > 2 {
                x = 0.5 * (lo + hi);
            }
            let fx = f(x);
            if fx == 0.0 {
                return Ok(x);
            }
            if fx < 0.0 {
                lo = x;
                f_lo = fx;
                if side < 0 {
                    f_hi *= 0.5;
                }
                side = side.min(0) - 1;
            } else {
                hi = x;
                f_hi = fx;
                if side > 0 {
                    f_lo *= 0.5;
                }
                side = side.max(0) + 1;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// First `k_max` eigenvalues, ascending.
    pub fn eigenvalues(&self, k_max: usize) -> Result<Vec<f64>> {
        (0..k_max).into_par_iter().map(|k| self.eigenvalue(k)).collect()
    }

    /// Shooting determinant with the boundary-condition pairing in the module docs.
    pub fn determinant(&self) -> f64 {
        let g = self.gamma;
        let (mut f, mut df) = match self.bc {
            BoundaryCondition::Dirichlet => (0.0, 1.0),
            BoundaryCondition::Neumann => (1.0, 0.0),
        };
        let dt = 1.0 / self.steps as f64;
        for j in 0..self.steps {
            let (q0, qm, q1) = (self.q_half[2 * j], self.q_half[2 * j + 1], self.q_half[2 * j + 2]);
            let (k1f, k1d) = (df, q0 / g * f);
            let (k2f, k2d) = (df + 0.5 * dt * k1d, qm / g * (f + 0.5 * dt * k1f));
            let (k3f, k3d) = (df + 0.5 * dt * k2d, qm / g * (f + 0.5 * dt * k2f));
            let (k4f, k4d) = (df + dt * k3d, q1 / g * (f + dt * k3f));
            f += dt / 6.0 * (k1f + 2.0 * k2f + 2.0 * k3f + k4f);
            df += dt / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d);
        }
        match self.bc {
            BoundaryCondition::Dirichlet => f,
            BoundaryCondition::Neumann => df,
        }
    }
}

/// First `k_max` eigenvalues of the continuum Hessian at `profile`.
pub fn sturm_liouville_eigen(spec: &PotentialSpec, profile: &FieldProfile, k_max: usize) -> Result<SpectrumResult> {
    if k_max < 1 {
        return Err(Error::invalid("k_max must be at least 1"));
    }
    let op = SturmLiouville::hessian_at(spec, profile, DEFAULT_SHOOTING_STEPS)?;
    Ok(SpectrumResult {
        eigenvalues: op.eigenvalues(k_max)?,
        kind: SpectrumKind::ContinuumPartial { k_max },
        profile: Some(profile.clone()),
    })
}

static CONVENTION: OnceLock<bool> = OnceLock::new();

/// Checks, once per process, that shooting-determinant ratios agree with
/// truncated eigenvalue products for constant coefficients under both
/// boundary conditions.
pub fn determinant_convention_holds() -> bool {
    *CONVENTION.get_or_init(|| {
        const K: usize = 64;
        [BoundaryCondition::Dirichlet, BoundaryCondition::Neumann]
            .into_iter()
            .all(|bc| {
                let build = |c| SturmLiouville::new(1.0, bc, &Coefficient::Constant(c), DEFAULT_SHOOTING_STEPS);
                let (Ok(a), Ok(b)) = (build(-1.0), build(2.0)) else {
                    return false;
                };
                let (Ok(la), Ok(lb)) = (a.eigenvalues(K), b.eigenvalues(K)) else {
                    return false;
                };
                let product: f64 = la.iter().zip(&lb).map(|(x, y)| x / y).product();
                let ratio = a.determinant() / b.determinant();
                (product - ratio).abs() <= 5.0 / K as f64
            })
    })
}

/// `Det(H_φ S)` by RK4 shooting.
pub fn functional_determinant(spec: &PotentialSpec, profile: &FieldProfile) -> Result<FunctionalDeterminant> {
    functional_determinant_with_steps(spec, profile, DEFAULT_SHOOTING_STEPS)
}

pub fn functional_determinant_with_steps(
    spec: &PotentialSpec,
    profile: &FieldProfile,
    steps: usize,
) -> Result<FunctionalDeterminant> {
    if !determinant_convention_holds() {
        return Err(Error::Numerical(
            "shooting determinants disagree with eigenvalue products".into(),
        ));
    }
    let value = SturmLiouville::hessian_at(spec, profile, steps)?.determinant();
    if !value.is_finite() || value.abs() < DETERMINANT_DEGENERACY_TOL {
        return Err(Error::Degenerate(format!(
            "functional determinant {value:e} is numerically zero"
        )));
    }
    Ok(FunctionalDeterminant {
        value,
        bc: spec.bc(),
        profile: profile.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeterminantRatio {
    /// `Det(H_φ S) / Det(H_ψ S)` from shooting.
    pub ratio: f64,
    /// `Π_{k<K} λ_k(φ)/λ_k(ψ)` when a truncation `K` was requested.
    pub truncated_product: Option<f64>,
    pub discrepancy: Option<f64>,
}

pub fn determinant_ratio(
    spec: &PotentialSpec,
    phi: &FieldProfile,
    psi: &FieldProfile,
    check_k: Option<usize>,
) -> Result<DeterminantRatio> {
    let ratio = functional_determinant(spec, phi)?.value / functional_determinant(spec, psi)?.value;
    let truncated_product = match check_k {
        None => None,
        Some(k) => {
            let a = sturm_liouville_eigen(spec, phi, k)?.eigenvalues;
            let b = sturm_liouville_eigen(spec, psi, k)?.eigenvalues;
            Some(a.iter().zip(&b).map(|(x, y)| x / y).product::<f64>())
        }
    };
    Ok(DeterminantRatio {
        ratio,
        truncated_product,
        discrepancy: truncated_product.map(|p| (p - ratio).abs()),
    })
}

/// `det(H S_N(φ)) / det(H S_N(ψ))` via log-determinants of the normalized Hessians.
pub fn discrete_determinant_ratio(spec: &PotentialSpec, phi: &FieldProfile, psi: &FieldProfile) -> Result<f64> {
    if phi.grid() != psi.grid() {
        return Err(Error::invalid("profiles live on different grids"));
    }
    let (la, sa) = discrete_hessian(spec, phi, true)?.log_det();
    let (lb, sb) = discrete_hessian(spec, psi, true)?.log_det();
    if sb == 0.0 {
        return Err(Error::Degenerate("denominator Hessian is singular".into()));
    }
    Ok(sa * sb * (la - lb).exp())
}

/// Spectral data of one stationary point used by the transition-time formulas.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSpectra {
    /// Shooting determinant of the continuum Hessian.
    pub continuum_det: f64,
    /// Negative Sturm-Liouville eigenvalue, for index-1 points.
    pub continuum_neg: Option<f64>,
    /// `log|det(H S_N / h)|` and its sign.
    pub discrete_log_det: f64,
    pub discrete_det_sign: f64,
    /// Negative eigenvalue of `H S_N / h`, for index-1 points.
    pub discrete_neg: Option<f64>,
}

pub fn point_spectra(spec: &PotentialSpec, profile: &FieldProfile, index: usize) -> Result<PointSpectra> {
    let det = functional_determinant(spec, profile)?;
    let hess = discrete_hessian(spec, profile, true)?;
    let (discrete_log_det, discrete_det_sign) = hess.log_det();
    let (continuum_neg, discrete_neg) = if index == 1 {
        let sl = SturmLiouville::hessian_at(spec, profile, DEFAULT_SHOOTING_STEPS)?;
        (Some(sl.eigenvalue(0)?), Some(tridiagonal_eigenvalue(&hess, 0)))
    } else {
        (None, None)
    };
    Ok(PointSpectra {
        continuum_det: det.value,
        continuum_neg,
        discrete_log_det,
        discrete_det_sign,
        discrete_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::make_grid;
    use approx::assert_abs_diff_eq;

    fn neumann_constant(c: f64, n: usize) -> (PotentialSpec, FieldProfile) {
        let spec = PotentialSpec::double_well(1.0, BoundaryCondition::Neumann).unwrap();
        let g = make_grid(BoundaryCondition::Neumann, n).unwrap();
        (spec, FieldProfile::constant(&g, c))
    }

    #[test]
    fn small_tridiagonal_spectra() {
        let (spec, u) = neumann_constant(0.0, 2);
        let op = discrete_hessian(&spec, &u, true).unwrap();
        let ev = tridiagonal_eigen(&op).eigenvalues;
        assert_abs_diff_eq!(ev[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 7.0, epsilon = 1e-12);

        let (spec, u) = neumann_constant(1.0, 2);
        let ev = tridiagonal_eigen(&discrete_hessian(&spec, &u, true).unwrap()).eigenvalues;
        assert_abs_diff_eq!(ev[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 10.0, epsilon = 1e-12);

        let ev = tridiagonal_eigen(&TridiagonalOperator::from_diagonal(vec![5.0, -3.0])).eigenvalues;
        assert_eq!(ev, vec![-3.0, 5.0]);
    }

    #[test]
    fn discrete_neumann_laplacian_spectrum() {
        let n = 64;
        let (spec, u) = neumann_constant(0.0, n);
        let ev = tridiagonal_eigen(&discrete_hessian(&spec, &u, true).unwrap()).eigenvalues;
        assert_eq!(ev.len(), n);
        for (k, l) in ev.iter().enumerate() {
            let s = (k as f64 * PI / (2 * n) as f64).sin();
            let exact = 4.0 * (n * n) as f64 * s * s - 1.0;
            assert!((l - exact).abs() < 1e-9, "k={k}: {l} vs {exact}");
        }
        assert!(ev.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn spline_reproduces_cubics_in_the_interior_and_lines_exactly() {
        let s = CubicSpline::new(0.0, 0.25, vec![1.0, 1.5, 2.0, 2.5, 3.0]).unwrap();
        for x in [0.0, 0.1, 0.33, 0.8, 1.0] {
            assert_abs_diff_eq!(s.eval(x), 1.0 + 2.0 * x, epsilon = 1e-14);
        }
        let nodes: Vec<f64> = (0..41).map(|i| (i as f64 * 0.025 * 3.0).sin()).collect();
        let s = CubicSpline::new(0.0, 0.025, nodes).unwrap();
        assert_abs_diff_eq!(s.eval(0.5), (1.5f64).sin(), epsilon = 1e-6);
    }

    #[test]
    fn sturm_liouville_constant_coefficients() {
        let (spec, u) = neumann_constant(0.0, 16);
        let ev = sturm_liouville_eigen(&spec, &u, 6).unwrap().eigenvalues;
        for (k, l) in ev.iter().enumerate() {
            assert_abs_diff_eq!(*l, PI * PI * (k * k) as f64 - 1.0, epsilon = 1e-8);
        }
        let spec = PotentialSpec::double_well(1.0, BoundaryCondition::Dirichlet).unwrap();
        let g = make_grid(BoundaryCondition::Dirichlet, 16).unwrap();
        // V''(1) = 2 on a constant coefficient
        let sl = SturmLiouville::new(spec.gamma(), spec.bc(), &Coefficient::Constant(2.0), 4096).unwrap();
        for k in 0..6 {
            let exact = PI * PI * ((k + 1) * (k + 1)) as f64 + 2.0;
            assert_abs_diff_eq!(sl.eigenvalue(k).unwrap(), exact, epsilon = 1e-8);
        }
        // the zero profile under Dirichlet has V'' = -1 everywhere
        let ev = sturm_liouville_eigen(&spec, &FieldProfile::constant(&g, 0.0), 3).unwrap().eigenvalues;
        assert_abs_diff_eq!(ev[0], PI * PI - 1.0, epsilon = 1e-8);
    }

    #[test]
    fn sturm_liouville_variable_coefficient_against_fine_discretization() {
        // q(x) = 3 cos(2πx), Dirichlet: compare with a fine finite-difference matrix,
        // corrected by the known O(h²) Laplacian bias.
        let q = |x: f64| 3.0 * (2.0 * PI * x).cos();
        let n = 2000;
        let h = 1.0 / (n + 1) as f64;
        let diag = (1..=n).map(|i| 2.0 / (h * h) + q(i as f64 * h)).collect();
        let op = TridiagonalOperator::new(diag, vec![-1.0 / (h * h); n - 1], 1.0);
        let nodes: Vec<f64> = (0..=200).map(|i| q(i as f64 / 200.0)).collect();
        let coeff = Coefficient::Spline(CubicSpline::new(0.0, 1.0 / 200.0, nodes).unwrap());
        let sl = SturmLiouville::new(1.0, BoundaryCondition::Dirichlet, &coeff, 4096).unwrap();
        for k in 0..4 {
            let m = (k + 1) as f64;
            let fd = tridiagonal_eigenvalue(&op, k);
            let fd_bias = (4.0 / (h * h)) * (m * PI * h / 2.0).sin().powi(2) - (m * PI).powi(2);
            let shot = sl.eigenvalue(k).unwrap();
            assert!((shot - (fd - fd_bias)).abs() < 1e-4, "k={k}: {shot} vs {}", fd - fd_bias);
        }
    }

    #[test]
    fn determinants_match_closed_forms() {
        let sqrt2 = 2f64.sqrt();
        let (spec, one) = neumann_constant(1.0, 8);
        let d = functional_determinant(&spec, &one).unwrap().value;
        assert_abs_diff_eq!(d, sqrt2 * sqrt2.sinh(), epsilon = 1e-10);
        let (spec, zero) = neumann_constant(0.0, 8);
        let d = functional_determinant(&spec, &zero).unwrap().value;
        assert_abs_diff_eq!(d, -(1f64.sin()), epsilon = 1e-10);

        let spec = PotentialSpec::double_well(1.0, BoundaryCondition::Dirichlet).unwrap();
        let g = make_grid(BoundaryCondition::Dirichlet, 8).unwrap();
        // a constant 1 is not a Dirichlet stationary point but the operator is still defined
        let d = functional_determinant(&spec, &FieldProfile::constant(&g, 1.0));
        // the profile is extended by zeros at the boundary, so the coefficient is not constant
        assert!(d.is_ok());
        let sl = SturmLiouville::new(1.0, BoundaryCondition::Dirichlet, &Coefficient::Constant(2.0), 4096).unwrap();
        assert_abs_diff_eq!(sl.determinant(), sqrt2.sinh() / sqrt2, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_determinant_is_rejected() {
        // -γ f'' - f with γ = 1/π² under Dirichlet: f = sin(πx)/π vanishes at 1
        let spec = PotentialSpec::double_well(1.0 / (PI * PI), BoundaryCondition::Dirichlet).unwrap();
        let g = make_grid(BoundaryCondition::Dirichlet, 8).unwrap();
        let err = functional_determinant(&spec, &FieldProfile::constant(&g, 0.0)).unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn ratio_examples() {
        let (spec, zero) = neumann_constant(0.0, 8);
        let one = FieldProfile::constant(zero.grid(), 1.0);
        let r = determinant_ratio(&spec, &zero, &one, None).unwrap();
        let exact = -(1f64.sin()) / (2f64.sqrt() * 2f64.sqrt().sinh());
        assert_abs_diff_eq!(r.ratio, exact, epsilon = 1e-9);
        assert_abs_diff_eq!(r.ratio, -0.307489, epsilon = 1e-6);
        let same = determinant_ratio(&spec, &one, &one, Some(5)).unwrap();
        assert_eq!(same.ratio, 1.0);
        assert_eq!(same.truncated_product, Some(1.0));
    }

    #[test]
    fn convention_check_passes() {
        assert!(determinant_convention_holds());
    }

    #[test]
    fn discrete_ratio_small_case() {
        let (spec, zero) = neumann_constant(0.0, 2);
        let one = FieldProfile::constant(zero.grid(), 1.0);
        assert_abs_diff_eq!(discrete_determinant_ratio(&spec, &zero, &one).unwrap(), -7.0 / 20.0, epsilon = 1e-13);
    }

    #[test]
    fn point_spectra_of_saddle() {
        let (spec, zero) = neumann_constant(0.0, 16);
        let ps = point_spectra(&spec, &zero, 1).unwrap();
        assert_abs_diff_eq!(ps.continuum_neg.unwrap(), -1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ps.discrete_neg.unwrap(), -1.0, epsilon = 1e-10);
        assert_eq!(ps.discrete_det_sign, -1.0);
        assert!(ps.continuum_det < 0.0);
    }
}
