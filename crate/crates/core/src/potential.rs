//! Local potentials, finite-difference grids and the discretized energy.
//!
//! The discrete energy of a profile `y` on a grid of step `h` is
//!
//! ```text
//! S_N(y) = (γ / 2h) Σ_edges (y_{i+1} - y_i)² + h Σ_{i=1..N} V(y_i)
//! ```
//!
//! where the edge set runs over `i = 0..N` for Dirichlet (boundary values
//! pinned at zero) and over `i = 1..N-1` for Neumann. With this convention
//! `∇S_N / h` is exactly the drift `γ Δ^N y - V'(y)` of the finite-difference
//! SPDE, with `Δ^N` the Dirichlet or Neumann discrete Laplacian.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary condition shared by the continuum problem and its discretization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialKind {
    /// `V(x) = x⁴/4 - x²/2`.
    DoubleWell,
    /// `V(x) = Σ c_k x^k`, coefficients in ascending order.
    Polynomial(Vec<f64>),
}

/// A local potential `V`, the diffusion coefficient `γ` and the boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSpec {
    kind: PotentialKind,
    gamma: f64,
    bc: BoundaryCondition,
    /// Coefficients of V, V', V'', V''' (ascending).
    derivatives: [Vec<f64>; 4],
}

fn poly_derivative(c: &[f64]) -> Vec<f64> {
    c.iter()
        .enumerate()
        .skip(1)
        .map(|(k, &a)| k as f64 * a)
        .collect()
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

impl PotentialSpec {
    pub fn new(kind: PotentialKind, gamma: f64, bc: BoundaryCondition) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
        }
        let base = match &kind {
            PotentialKind::DoubleWell => vec![0.0, 0.0, -0.5, 0.0, 0.25],
            PotentialKind::Polynomial(c) => {
                if c.iter().any(|a| !a.is_finite()) {
                    return Err(Error::invalid("polynomial coefficients must be finite"));
                }
                let mut c = c.clone();
                while c.last() == Some(&0.0) {
                    c.pop();
                }
                let degree = c.len().saturating_sub(1);
                if degree < 2 || degree % 2 != 0 {
                    return Err(Error::invalid(format!(
                        "polynomial potential needs even degree >= 2, got degree {degree}"
                    )));
                }
                if c[degree] <= 0.0 {
                    return Err(Error::invalid(
                        "polynomial potential needs a positive leading coefficient",
                    ));
                }
                c
            }
        };
        let d1 = poly_derivative(&base);
        let d2 = poly_derivative(&d1);
        let d3 = poly_derivative(&d2);
        Ok(Self {
            kind,
            gamma,
            bc,
            derivatives: [base, d1, d2, d3],
        })
    }

    pub fn double_well(gamma: f64, bc: BoundaryCondition) -> Result<Self> {
        Self::new(PotentialKind::DoubleWell, gamma, bc)
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    /// Same potential with a different diffusion coefficient.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.kind.clone(), gamma, self.bc)
    }

    pub fn with_bc(&self, bc: BoundaryCondition) -> Self {
        Self { bc, ..self.clone() }
    }

    /// Ascending coefficients of the `order`-th derivative of V.
    pub fn coefficients(&self, order: usize) -> &[f64] {
        &self.derivatives[order.min(3)]
    }

    /// `V`, `V'`, `V''` or `V'''` at `x`.
    pub fn eval(&self, x: f64, order: usize) -> Result<f64> {
        if order > 3 {
            return Err(Error::invalid(format!("derivative order {order} not in 0..=3")));
        }
        Ok(self.derivative(x, order))
    }

    #[inline]
    pub(crate) fn derivative(&self, x: f64, order: usize) -> f64 {
        match (&self.kind, order) {
            (PotentialKind::DoubleWell, 0) => {
                let x2 = x * x;
                0.25 * x2 * x2 - 0.5 * x2
            }
            (PotentialKind::DoubleWell, 1) => x * x * x - x,
            (PotentialKind::DoubleWell, 2) => 3.0 * x * x - 1.0,
            (PotentialKind::DoubleWell, 3) => 6.0 * x,
            _ => horner(&self.derivatives[order], x),
        }
    }

    #[inline]
    pub fn v(&self, x: f64) -> f64 {
        self.derivative(x, 0)
    }

    #[inline]
    pub fn dv(&self, x: f64) -> f64 {
        self.derivative(x, 1)
    }

    #[inline]
    pub fn d2v(&self, x: f64) -> f64 {
        self.derivative(x, 2)
    }

    /// Real critical points of V in increasing order.
    pub fn critical_points(&self) -> Vec<f64> {
        real_roots(&self.derivatives[1])
    }
}

/// Free-standing alias of [`PotentialSpec::eval`].
pub fn eval_potential(spec: &PotentialSpec, x: f64, order: usize) -> Result<f64> {
    spec.eval(x, order)
}

/// Real roots of a polynomial (ascending coefficients), sorted.
///
/// Roots of the derivative split the line into monotone pieces; each piece
/// holds at most one root, which bisection then isolates. Multiple roots are
/// reported once.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let mut c = c.to_vec();
    while c.last() == Some(&0.0) {
        c.pop();
    }
    match c.len() {
        0 | 1 => return Vec::new(),
        2 => return vec![-c[0] / c[1]],
        _ => {}
    }
    let lead = *c.last().unwrap();
    let bound = 1.0 + c[..c.len() - 1].iter().map(|a| (a / lead).abs()).fold(0.0, f64::max);
    let turning = real_roots(&poly_derivative(&c));
    let mut knots = Vec::with_capacity(turning.len() + 2);
    knots.push(-bound);
    knots.extend(turning.iter().copied().filter(|t| t.abs() < bound));
    knots.push(bound);

    let scale = c.iter().map(|a| a.abs()).fold(0.0, f64::max);
    let mut roots: Vec<f64> = Vec::new();
    let push = |r: f64, roots: &mut Vec<f64>| {
        if roots.last().is_none_or(|&last| (r - last).abs() > 1e-10 * (1.0 + r.abs())) {
            roots.push(r);
        }
    };
    for w in knots.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (horner(&c, a), horner(&c, b));
        if fa.abs() <= 1e-14 * scale {
            push(a, &mut roots);
            continue;
        }
        if fb.abs() <= 1e-14 * scale {
            push(b, &mut roots);
            continue;
        }
        if fa.signum() == fb.signum() {
            continue;
        }
        let sa = fa.signum();
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = horner(&c, m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == sa {
                a = m;
            } else {
                b = m;
            }
        }
        push(0.5 * (a + b), &mut roots);
    }
    roots
}

/// Uniform finite-difference grid on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    n: usize,
    bc: BoundaryCondition,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid {
    /// Dirichlet: `h = 1/(N+1)`, `x_i = i h`. Neumann: `h = 1/N`,
    /// `x_i = i/N - 1/(2N)`. Nodes `x_0` and `x_{N+1}` are boundary or ghost nodes.
    pub fn new(bc: BoundaryCondition, n: usize) -> Result<Self> {
        if n < 1 {
            return Err(Error::invalid("grid needs at least one interior point"));
        }
        let (h, nodes) = match bc {
            BoundaryCondition::Dirichlet => {
                let m = (n + 1) as f64;
                (1.0 / m, (0..=n + 1).map(|i| i as f64 / m).collect())
            }
            BoundaryCondition::Neumann => {
                let m = n as f64;
                (
                    1.0 / m,
                    (0..=n + 1).map(|i| i as f64 / m - 0.5 / m).collect(),
                )
            }
        };
        Ok(Self { n, bc, h, nodes })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// All `N + 2` nodes including the boundary or ghost nodes.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// The `N` interior nodes.
    pub fn interior(&self) -> &[f64] {
        &self.nodes[1..=self.n]
    }

    /// Discrete Laplacian `Δ^N` as a tridiagonal matrix.
    pub fn laplacian(&self) -> TridiagonalOperator {
        let inv_h2 = 1.0 / (self.h * self.h);
        let mut diag = vec![-2.0 * inv_h2; self.n];
        if self.bc == BoundaryCondition::Neumann {
            diag[0] += inv_h2;
            diag[self.n - 1] += inv_h2;
        }
        TridiagonalOperator::new(diag, vec![inv_h2; self.n - 1], 1.0)
    }
}

/// Builds a grid for the given boundary condition.
pub fn make_grid(bc: BoundaryCondition, n: usize) -> Result<Grid> {
    Grid::new(bc, n)
}

/// Interior values of a discretized field.
///
/// Boundary values are implied by the grid: zero for Dirichlet, reflected for
/// Neumann.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldProfile {
    grid: Grid,
    values: Vec<f64>,
}

impl FieldProfile {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n() {
            return Err(Error::invalid(format!(
                "profile has {} values for a grid of {} interior points",
                values.len(),
                grid.n()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("profile values must be finite"));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            values: vec![c; grid.n()],
            grid: grid.clone(),
        }
    }

    /// Samples `f` at the interior nodes.
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid.clone(), grid.interior().iter().map(|&x| f(x)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Values at all `N + 2` nodes with the boundary rule applied.
    pub fn extended(&self) -> Vec<f64> {
        let n = self.values.len();
        let (left, right) = match self.grid.bc {
            BoundaryCondition::Dirichlet => (0.0, 0.0),
            BoundaryCondition::Neumann => (self.values[0], self.values[n - 1]),
        };
        let mut out = Vec::with_capacity(n + 2);
        out.push(left);
        out.extend_from_slice(&self.values);
        out.push(right);
        out
    }

    /// Discrete L² distance `|x - y|₂ / √N`.
    pub fn l2_distance(&self, other: &FieldProfile) -> f64 {
        l2_distance(&self.values, &other.values)
    }

    pub fn sup_distance(&self, other: &FieldProfile) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Discrete L² distance `|x - y|₂ / √N` of two equally long vectors.
pub fn l2_distance(x: &[f64], y: &[f64]) -> f64 {
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (s / x.len() as f64).sqrt()
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TridiagonalOperator {
    diag: Vec<f64>,
    offdiag: Vec<f64>,
    /// Factor relating the stored entries to the unscaled Hessian of `S_N`
    /// (1 for the Hessian itself, `1/h` for the spectrally normalized one).
    scale: f64,
}

impl TridiagonalOperator {
    pub fn new(diag: Vec<f64>, offdiag: Vec<f64>, scale: f64) -> Self {
        assert_eq!(
            offdiag.len() + 1,
            diag.len().max(1),
            "off-diagonal must be one shorter than the diagonal"
        );
        Self {
            diag,
            offdiag,
            scale,
        }
    }

    pub fn from_diagonal(diag: Vec<f64>) -> Self {
        let n = diag.len();
        Self::new(diag, vec![0.0; n.saturating_sub(1)], 1.0)
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn offdiag(&self) -> &[f64] {
        &self.offdiag
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Largest absolute row sum, an upper bound on the spectral radius.
    pub fn norm_inf(&self) -> f64 {
        (0..self.dim())
            .map(|i| {
                let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
                let right = self.offdiag.get(i).map_or(0.0, |e| e.abs());
                self.diag[i].abs() + left + right
            })
            .fold(0.0, f64::max)
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.dim() {
            let left = if i > 0 { self.offdiag[i - 1].abs() } else { 0.0 };
            let right = self.offdiag.get(i).map_or(0.0, |e| e.abs());
            lo = lo.min(self.diag[i] - left - right);
            hi = hi.max(self.diag[i] + left + right);
        }
        (lo, hi)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut m = vec![vec![0.0; n]; n];
        for i in 0..n {
            m[i][i] = self.diag[i];
            if i + 1 < n {
                m[i][i + 1] = self.offdiag[i];
                m[i + 1][i] = self.offdiag[i];
            }
        }
        m
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.offdiag[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.offdiag[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn scaled_by(&self, factor: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|d| d * factor).collect(),
            offdiag: self.offdiag.iter().map(|e| e * factor).collect(),
            scale: self.scale * factor,
        }
    }

    /// Number of eigenvalues strictly below `shift` (Sturm sequence / LDLᵀ inertia).
    pub fn count_below(&self, shift: f64) -> usize {
        let n = self.dim();
        if n == 0 {
            return 0;
        }
        let guard = f64::MIN_POSITIVE.sqrt() * (1.0 + self.norm_inf());
        let mut count = 0;
        let mut q = self.diag[0] - shift;
        for i in 0..n {
            if i > 0 {
                let prev = if q == 0.0 { guard } else { q };
                let e = self.offdiag[i - 1];
                q = (self.diag[i] - shift) - e * e / prev;
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    }

    /// `(log|det|, sign)` from the LDLᵀ pivots. A singular matrix gives `(-∞, 0)`.
    pub fn log_det(&self) -> (f64, f64) {
        let n = self.dim();
        let mut log_abs = 0.0;
        let mut sign = 1.0;
        let mut q = 0.0;
        for i in 0..n {
            q = if i == 0 {
                self.diag[0]
            } else {
                if q == 0.0 {
                    return (f64::NEG_INFINITY, 0.0);
                }
                let e = self.offdiag[i - 1];
                self.diag[i] - e * e / q
            };
            if q == 0.0 && i + 1 == n {
                return (f64::NEG_INFINITY, 0.0);
            }
            if q < 0.0 {
                sign = -sign;
            }
            log_abs += q.abs().ln();
        }
        (log_abs, sign)
    }

    /// Solves `T x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::invalid("right-hand side length mismatch"));
        }
        if n == 1 {
            if self.diag[0] == 0.0 {
                return Err(Error::Numerical("singular tridiagonal system".into()));
            }
            return Ok(vec![b[0] / self.diag[0]]);
        }
        // Rows hold (d, u, u2) after elimination; u2 appears from row swaps.
        let mut d = self.diag.clone();
        let mut du = self.offdiag.clone();
        du.push(0.0);
        let mut dl = self.offdiag.clone();
        let mut du2 = vec![0.0; n];
        let mut x = b.to_vec();
        for i in 0..n - 1 {
            if d[i].abs() >= dl[i].abs() {
                if d[i] == 0.0 {
                    return Err(Error::Numerical("singular tridiagonal system".into()));
                }
                let f = dl[i] / d[i];
                d[i + 1] -= f * du[i];
                x[i + 1] -= f * x[i];
                if i + 1 < n - 1 {
                    du2[i] = 0.0;
                }
            } else {
                let f = d[i] / dl[i];
                d[i] = dl[i];
                let tmp = d[i + 1];
                d[i + 1] = du[i] - f * tmp;
                du[i] = tmp;
                if i + 1 < n - 1 {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du2[i];
                }
                x.swap(i, i + 1);
                x[i + 1] -= f * x[i];
            }
            dl[i] = 0.0;
        }
        if d[n - 1] == 0.0 {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        x[n - 1] /= d[n - 1];
        x[n - 2] = (x[n - 2] - du[n - 2] * x[n - 1]) / d[n - 2];
        for i in (0..n.saturating_sub(2)).rev() {
            x[i] = (x[i] - du[i] * x[i + 1] - du2[i] * x[i + 2]) / d[i];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("tridiagonal solve produced non-finite values".into()));
        }
        Ok(x)
    }
}

fn check_profile(spec: &PotentialSpec, u: &FieldProfile) -> Result<()> {
    if u.grid().bc() != spec.bc() {
        return Err(Error::invalid(format!(
            "profile grid uses {:?} boundary conditions but the potential uses {:?}",
            u.grid().bc(),
            spec.bc()
        )));
    }
    if u.values().len() != u.grid().n() {
        return Err(Error::invalid("profile length does not match its grid"));
    }
    Ok(())
}

/// Discretized energy `S_N(u)`.
pub fn discrete_energy(spec: &PotentialSpec, u: &FieldProfile) -> Result<f64> {
    check_profile(spec, u)?;
    let h = u.grid().h();
    let y = u.values();
    let mut elastic: f64 = y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    if spec.bc() == BoundaryCondition::Dirichlet {
        elastic += y[0] * y[0] + y[y.len() - 1] * y[y.len() - 1];
    }
    let local: f64 = y.iter().map(|&v| spec.v(v)).sum();
    Ok(spec.gamma() / (2.0 * h) * elastic + h * local)
}

/// The finite-difference drift `γ Δ^N u - V'(u)`, written into `out`.
pub(crate) fn drift_into(spec: &PotentialSpec, bc: BoundaryCondition, h: f64, y: &[f64], out: &mut [f64]) {
    let n = y.len();
    let c = spec.gamma() / (h * h);
    for i in 0..n {
        let left = if i > 0 {
            y[i - 1]
        } else if bc == BoundaryCondition::Neumann {
            y[0]
        } else {
            0.0
        };
        let right = if i + 1 < n {
            y[i + 1]
        } else if bc == BoundaryCondition::Neumann {
            y[n - 1]
        } else {
            0.0
        };
        out[i] = c * (left - 2.0 * y[i] + right) - spec.dv(y[i]);
    }
}

/// Gradient `∇S_N(u)`; equals `-h (γ Δ^N u - V'(u))`.
pub fn discrete_gradient(spec: &PotentialSpec, u: &FieldProfile) -> Result<Vec<f64>> {
    check_profile(spec, u)?;
    let h = u.grid().h();
    let mut g = vec![0.0; u.values().len()];
    drift_into(spec, spec.bc(), h, u.values(), &mut g);
    g.iter_mut().for_each(|v| *v *= -h);
    Ok(g)
}

/// Hessian of `S_N`. With `scaled`, returns `H S_N / h = -γ Δ^N + diag V''(u)`,
/// whose low eigenvalues approximate the Sturm-Liouville spectrum.
pub fn discrete_hessian(spec: &PotentialSpec, u: &FieldProfile, scaled: bool) -> Result<TridiagonalOperator> {
    check_profile(spec, u)?;
    let h = u.grid().h();
    let lap = u.grid().laplacian();
    let diag = lap
        .diag()
        .iter()
        .zip(u.values())
        .map(|(d, &y)| -spec.gamma() * d + spec.d2v(y))
        .collect();
    let off = lap.offdiag().iter().map(|e| -spec.gamma() * e).collect();
    let normalized = TridiagonalOperator::new(diag, off, 1.0 / h);
    Ok(if scaled { normalized } else { normalized.scaled_by(h) })
}

/// Continuum energy `∫ (γ/2)|φ'|² + V(φ)` of a profile sampled uniformly on
/// `[0, 1]` (endpoints included). Derivatives by second-order differences,
/// integral by the trapezoid rule.
pub fn continuum_energy(spec: &PotentialSpec, samples: &[f64]) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::invalid("continuum energy needs at least two samples"));
    }
    let dx = 1.0 / (m - 1) as f64;
    let deriv = |i: usize| -> f64 {
        if m == 2 {
            (samples[1] - samples[0]) / dx
        } else if i == 0 {
            (-3.0 * samples[0] + 4.0 * samples[1] - samples[2]) / (2.0 * dx)
        } else if i == m - 1 {
            (3.0 * samples[m - 1] - 4.0 * samples[m - 2] + samples[m - 3]) / (2.0 * dx)
        } else {
            (samples[i + 1] - samples[i - 1]) / (2.0 * dx)
        }
    };
    let density = |i: usize| 0.5 * spec.gamma() * deriv(i).powi(2) + spec.v(samples[i]);
    let inner: f64 = (1..m - 1).map(density).sum();
    Ok(dx * (inner + 0.5 * (density(0) + density(m - 1))))
}
