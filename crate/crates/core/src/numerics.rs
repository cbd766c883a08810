//! Shared numerical substrate.
//!
//! Everything downstream lives on a uniform [`TimeGrid`] and integrates
//! against the bracket measure `d<M>_t`. ODEs written in `<M>`-time are
//! stepped in ordinary time with the density `m'(t)` folded into the
//! right-hand side, so a system `dY/d<M> = F(t, Y)` becomes
//! `dY/dt = m'(t) F(t, Y)`.

use std::ops::{Add, Mul};

use nalgebra::{DMatrix, DVector, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Floor applied to `m'(t)` before dividing by it.
pub const M_PRIME_FLOOR: f64 = 1e-12;

/// Uniform discretization `t_i = i T / n` of `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if n_steps < 2 {
            return Err(Error::Domain(format!(
                "grid needs at least 2 steps, got {n_steps}"
            )));
        }
        Ok(Self { horizon, n_steps })
    }

    /// Grid with the given horizon and (approximately) the given step.
    pub fn with_step(horizon: f64, dt: f64) -> Result<Self> {
        let n = (horizon / dt).round().max(2.0) as usize;
        Self::new(horizon, n)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.n_steps as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes()).map(|i| self.node(i)).collect()
    }
}

/// Node weights of the trapezoidal rule in the measure `d<M>`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureWeights {
    weights: Vec<f64>,
}

impl MeasureWeights {
    /// Weights from bracket values `m(t_i)`: `w_i = (Δm_{i-1} + Δm_i) / 2`.
    pub fn from_bracket(m: &[f64]) -> Self {
        let n = m.len();
        let mut weights = vec![0.0; n];
        for i in 0..n.saturating_sub(1) {
            let half = 0.5 * (m[i + 1] - m[i]);
            weights[i] += half;
            weights[i + 1] += half;
        }
        Self { weights }
    }

    /// Ordinary `dt` trapezoid weights on a grid.
    pub fn lebesgue(grid: &TimeGrid) -> Self {
        let dt = grid.dt();
        let mut weights = vec![dt; grid.n_nodes()];
        weights[0] = 0.5 * dt;
        weights[grid.n_steps()] = 0.5 * dt;
        Self { weights }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Trapezoidal approximation of `∫ f d<M>` from node values.
pub fn integrate(values: &[f64], weights: &MeasureWeights) -> Result<f64> {
    check_len("integrand values", weights.len(), values.len())?;
    Ok(values
        .iter()
        .zip(weights.as_slice())
        .map(|(f, w)| f * w)
        .sum())
}

/// Centered differences in `t` (one-sided at the ends).
pub fn centered_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut out = vec![0.0; n];
    out[0] = (f[1] - f[0]) / dt;
    out[n - 1] = (f[n - 1] - f[n - 2]) / dt;
    for i in 1..n - 1 {
        out[i] = (f[i + 1] - f[i - 1]) / (2.0 * dt);
    }
    out
}

/// `df/d<M>` at the nodes: `(df/dt) / max(m'(t), floor)`.
pub fn derivative_in_measure(f: &[f64], dt: f64, m_prime: &[f64]) -> Result<Vec<f64>> {
    check_len("bracket density", f.len(), m_prime.len())?;
    let mut d = centered_derivative(f, dt);
    for (di, mp) in d.iter_mut().zip(m_prime) {
        *di /= mp.max(M_PRIME_FLOOR);
    }
    Ok(d)
}

/// Linear interpolation of node values at an arbitrary time.
pub fn interpolate(values: &[f64], grid: &TimeGrid, t: f64) -> f64 {
    let x = (t / grid.dt()).clamp(0.0, grid.n_steps() as f64);
    let i = (x.floor() as usize).min(grid.n_steps() - 1);
    let frac = x - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// State types that the one-step integrator can advance.
pub trait OdeState: Copy + Add<Output = Self> + Mul<f64, Output = Self> {
    fn is_finite(&self) -> bool;
}

impl<const R: usize, const C: usize> OdeState for SMatrix<f64, R, C> {
    fn is_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }
}

/// Which system a trajectory solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OdeLabel {
    Phi,
    PhiInverse,
    P,
    Gamma,
    GammaZ,
    Psi,
    Generic,
}

/// Solution values at every grid node.
#[derive(Debug, Clone)]
pub struct OdeTrajectory<S> {
    pub grid: TimeGrid,
    pub label: OdeLabel,
    pub values: Vec<S>,
}

impl<S: Copy> OdeTrajectory<S> {
    pub fn last(&self) -> S {
        *self
            .values
            .last()
            .expect("trajectory has at least one node")
    }
}

/// Classical fourth-order Runge-Kutta for `dY/dt = m'(t) F(t, Y)`.
///
/// `m'` is interpolated linearly between nodes for the half-step stages;
/// `rhs` receives that interpolated density so coefficient tables can be
/// formed consistently (e.g. `ψ = 1/m'`).
pub fn ode_step<S, F>(
    y0: S,
    grid: &TimeGrid,
    m_prime: &[f64],
    label: OdeLabel,
    mut rhs: F,
) -> Result<OdeTrajectory<S>>
where
    S: OdeState,
    F: FnMut(f64, f64, &S) -> S,
{
    check_len("bracket density", grid.n_nodes(), m_prime.len())?;
    let dt = grid.dt();
    let mut values = Vec::with_capacity(grid.n_nodes());
    values.push(y0);
    let mut y = y0;
    for i in 0..grid.n_steps() {
        y = rk4_step(&y, grid.node(i), dt, (m_prime[i], m_prime[i + 1]), &mut rhs);
        if !y.is_finite() {
            return Err(Error::BlowUp {
                node: i + 1,
                time: grid.node(i + 1),
            });
        }
        values.push(y);
    }
    Ok(OdeTrajectory {
        grid: *grid,
        label,
        values,
    })
}

/// One RK4 step of `dY/dt = m'(t) F(t, Y)` from `t0` to `t0 + dt`, with `m'`
/// given at both ends and averaged at the midpoint.
pub fn rk4_step<S, F>(y: &S, t0: f64, dt: f64, m_prime: (f64, f64), rhs: &mut F) -> S
where
    S: OdeState,
    F: FnMut(f64, f64, &S) -> S,
{
    let (mp0, mp1) = m_prime;
    let mph = 0.5 * (mp0 + mp1);
    let th = t0 + 0.5 * dt;
    let y = *y;
    let k1 = rhs(t0, mp0, &y) * mp0;
    let k2 = rhs(th, mph, &(y + k1 * (0.5 * dt))) * mph;
    let k3 = rhs(th, mph, &(y + k2 * (0.5 * dt))) * mph;
    let k4 = rhs(t0 + dt, mp1, &(y + k3 * dt)) * mp1;
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
}

/// Linear system `dY/d<M> = C(t) Y` with `C` built from `(t, m'(t))`.
pub fn ode_step_linear<const R: usize, const K: usize, F>(
    y0: SMatrix<f64, R, K>,
    grid: &TimeGrid,
    m_prime: &[f64],
    label: OdeLabel,
    mut coefficient: F,
) -> Result<OdeTrajectory<SMatrix<f64, R, K>>>
where
    F: FnMut(f64, f64) -> SMatrix<f64, R, R>,
{
    ode_step(y0, grid, m_prime, label, |t, mp, y| coefficient(t, mp) * y)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power iteration.
///
/// Stops once successive Rayleigh quotients agree to `1e-10` relative and the
/// residual `‖Av − λv‖` is below `1e-9 max(1, λ)`.
pub fn top_eigenvalue(a: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    const MAX_ITER: usize = 100_000;
    let n = a.nrows();
    check_len("square matrix columns", n, a.ncols())?;
    if n == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut asym = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }

    // Deterministic start with a small ramp so it is not orthogonal to the
    // leading eigenvector of structured matrices.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 1e-3 * i as f64);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..MAX_ITER {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok((0.0, v));
        }
        let next = v.dot(&w);
        let residual = (&w - &v * next).norm();
        let converged =
            (next - lambda).abs() < 1e-10 * next.abs() && residual <= 1e-9 * next.abs().max(1.0);
        lambda = next;
        v = w / norm;
        if converged {
            return Ok((lambda, v));
        }
    }
    Err(Error::IterationLimit {
        iterations: MAX_ITER,
    })
}

/// Kahan-compensated running sum, used for order-stable moment reductions.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix1, Matrix2};

    fn flat_bracket(grid: &TimeGrid) -> (Vec<f64>, Vec<f64>) {
        (grid.nodes(), vec![1.0; grid.n_nodes()])
    }

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::new(3.0, 7).unwrap();
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(7), 3.0);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(-1.0, 10).is_err());
    }

    #[test]
    fn integrate_examples() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (m, _) = flat_bracket(&grid);
        let w = MeasureWeights::from_bracket(&m);
        assert_eq!(integrate(&vec![0.0; 101], &w).unwrap(), 0.0);
        let one = integrate(&vec![1.0; 101], &w).unwrap();
        assert!((one - w.total()).abs() < 1e-12);
        assert!((one - 1.0).abs() < 1e-12);
        let t = integrate(&grid.nodes(), &w).unwrap();
        assert!((t - 0.5).abs() < 1e-3);
        assert!(matches!(
            integrate(&[1.0; 5], &w),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn constant_solution() {
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let (_, mp) = flat_bracket(&grid);
        let traj = ode_step_linear(
            Matrix2::identity(),
            &grid,
            &mp,
            OdeLabel::Generic,
            |_, _| Matrix2::zeros(),
        )
        .unwrap();
        assert!(traj.values.iter().all(|y| *y == Matrix2::identity()));
    }

    fn exp_error(n: usize) -> f64 {
        let grid = TimeGrid::new(1.0, n).unwrap();
        let (_, mp) = flat_bracket(&grid);
        let traj = ode_step_linear(Matrix1::new(1.0), &grid, &mp, OdeLabel::Generic, |_, _| {
            Matrix1::new(-1.0)
        })
        .unwrap();
        (traj.last()[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn exponential_decay_and_order() {
        assert!(exp_error(200) < 1e-8);
        for n in [5, 10, 20] {
            let ratio = exp_error(n) / exp_error(2 * n);
            assert!(ratio >= 8.0, "n={n} ratio={ratio}");
        }
    }

    #[test]
    fn antisymmetric_generator_preserves_determinant() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let (_, mp) = flat_bracket(&grid);
        let gen = Matrix2::new(0.0, 2.0, -2.0, 0.0);
        let traj = ode_step_linear(
            Matrix2::identity(),
            &grid,
            &mp,
            OdeLabel::Generic,
            |_, _| gen,
        )
        .unwrap();
        for y in &traj.values {
            assert!((y.determinant() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn blow_up_reports_node() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let (_, mp) = flat_bracket(&grid);
        let err = ode_step(
            Matrix1::new(1.0),
            &grid,
            &mp,
            OdeLabel::Generic,
            |_, _, y| *y * 1e200,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BlowUp { node: 1, .. }));
    }

    #[test]
    fn eigen_trivial_cases() {
        let (l, _) = top_eigenvalue(&DMatrix::identity(3, 3)).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (l, v) = top_eigenvalue(&d).unwrap();
        assert!((l - 3.0).abs() < 1e-9);
        assert!((&d * &v - &v * l).norm() <= 1e-8 * v.norm());
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(
            top_eigenvalue(&bad),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn derivative_in_measure_divides_density() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let f: Vec<f64> = grid.nodes().iter().map(|t| 3.0 * t).collect();
        let mp = vec![2.0; 11];
        let d = derivative_in_measure(&f, grid.dt(), &mp).unwrap();
        assert!(d.iter().all(|x| (x - 1.5).abs() < 1e-12));
        let zero = vec![0.0; 11];
        let d = derivative_in_measure(&f, grid.dt(), &zero).unwrap();
        assert!(d.iter().all(|x| x.is_finite()));
    }
}
