//! Laplace transforms of quadratic functionals of `ζ`, evaluated through
//! linear and Riccati ODE systems, with their closed-form large-`T` limits.
//!
//! Two parameterizations appear. `psi_laplace(a)` transforms `∫ 𝒳_t² dt`
//! for the centered process with covariance operator `𝒦_T`, and `a` may be
//! negative down to `−θ²/2`. The `Γ/Z` family transforms `λ ∫ Q² d<M>` with
//! `λ = μ/T` (normalized) or `λ = μ` (rate form), `μ ≥ 0`.

use nalgebra::{Matrix2, SMatrix, Vector2};
use serde::{Deserialize, Serialize};

use crate::design::{
    a_matrix, b_vector, ell_vector, input_profile, r_matrix, solve_p, step_propagators,
};
use crate::error::{Error, Result};
use crate::kernel::KernelBundle;
use crate::numerics::{integrate, ode_step, rk4_step, OdeLabel, OdeState, OdeTrajectory};
use crate::process::InputSignal;

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must be > 0, got {theta}")));
    }
    Ok(())
}

/// Result of the `Ψ₁/Ψ₂` system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiLaplace {
    pub a: f64,
    pub theta: f64,
    pub horizon: f64,
    /// `log L_T(a)`.
    pub log_value: f64,
    /// `log det Ψ₁(T)`.
    pub log_det_psi1: f64,
    /// Quadrature of `∫ ψ d<M>`, which should equal `T`.
    pub psi_integral: f64,
}

impl PsiLaplace {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

type PsiState = SMatrix<f64, 2, 4>;

fn psi_generator(psi: f64, theta: f64, a: f64) -> SMatrix<f64, 4, 4> {
    let am = a_matrix(psi);
    let b = b_vector(psi);
    let l = ell_vector(psi);
    let mut g = SMatrix::<f64, 4, 4>::zeros();
    g.fixed_view_mut::<2, 2>(0, 0)
        .copy_from(&(am * (0.5 * theta)));
    g.fixed_view_mut::<2, 2>(0, 2)
        .copy_from(&(b * b.transpose() * (-0.5 * a)));
    g.fixed_view_mut::<2, 2>(2, 0)
        .copy_from(&(-(l * l.transpose())));
    g.fixed_view_mut::<2, 2>(2, 2)
        .copy_from(&(am.transpose() * (-0.5 * theta)));
    g
}

/// `L_T(a) = exp(−½ ∫ tr 𝒜 d<M>) (det Ψ₁(T))^{−1/2}` with
/// `d(Ψ₁, Ψ₂)/d<M> = (Ψ₁, Ψ₂) [[(θ/2)A, −(a/2)bb*], [−ℓℓ*, −(θ/2)A*]]`.
///
/// `∫ tr 𝒜 d<M> = −θT` is used exactly. The rows of the state are
/// re-orthonormalized every step and the discarded factor is carried in the log.
pub fn psi_laplace(a: f64, theta: f64, kernel: &KernelBundle) -> Result<PsiLaplace> {
    check_theta(theta)?;
    if !(a > -0.5 * theta * theta) {
        return Err(Error::Domain(format!(
            "a must exceed -theta^2/2 = {}, got {a}",
            -0.5 * theta * theta
        )));
    }
    let grid = &kernel.grid;
    let dt = grid.dt();
    let mut y = PsiState::zeros();
    y[(0, 0)] = 1.0;
    y[(1, 1)] = 1.0;
    let mut log_scale = 0.0;
    let mut sign = 1.0;
    let mut rhs = |_t: f64, mp: f64, y: &PsiState| y * psi_generator(1.0 / mp, theta, a);
    for i in 0..grid.n_steps() {
        y = rk4_step(
            &y,
            grid.node(i),
            dt,
            (kernel.m_prime[i], kernel.m_prime[i + 1]),
            &mut rhs,
        );
        if !y.is_finite() {
            return Err(Error::BlowUp {
                node: i + 1,
                time: grid.node(i + 1),
            });
        }
        // Rows of (Ψ₁, Ψ₂) may be recombined freely: the flow acts on the right.
        let qr = y.transpose().qr();
        let r = qr.r();
        let det_r = r.determinant();
        if det_r == 0.0 {
            return Err(Error::Solvability {
                node: i + 1,
                det: 0.0,
            });
        }
        log_scale += det_r.abs().ln();
        sign *= det_r.signum();
        y = qr.q().transpose();
        let det = sign * y.fixed_view::<2, 2>(0, 0).determinant();
        if !(det > 0.0) {
            return Err(Error::Solvability {
                node: i + 1,
                det: det * log_scale.exp(),
            });
        }
    }
    let det = y.fixed_view::<2, 2>(0, 0).determinant();
    let log_det_psi1 = (sign * det).ln() + log_scale;
    let horizon = kernel.horizon();
    let psi_integral = integrate(&kernel.psi_diag, &kernel.weights())?;
    Ok(PsiLaplace {
        a,
        theta,
        horizon,
        log_value: 0.5 * theta * horizon - 0.5 * log_det_psi1,
        log_det_psi1,
        psi_integral,
    })
}

/// `x₁ = √(θ²/4 + a/2)`; `2x₁` is the growth rate of `log det Ψ₁`.
pub fn psi_growth_rate(a: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    let d = 0.25 * theta * theta + 0.5 * a;
    if d < 0.0 {
        return Err(Error::Domain(format!("a must be >= -theta^2/2, got {a}")));
    }
    Ok(d.sqrt())
}

/// Record of `log E exp(−λ ∫ Q² d<M>) = −λ ∫ [tr(ΓR) + Z*RZ] d<M>`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticLaplace {
    pub lambda: f64,
    pub theta: f64,
    pub horizon: f64,
    /// `−λ ∫ tr(ΓR) d<M>`.
    pub log_trace: f64,
    /// `−λ ∫ Z*RZ d<M>`.
    pub log_mean: f64,
}

impl QuadraticLaplace {
    pub fn log_value(&self) -> f64 {
        self.log_trace + self.log_mean
    }

    pub fn value(&self) -> f64 {
        self.log_value().exp()
    }

    /// `−(1/T) log 𝓛`.
    pub fn rate(&self) -> f64 {
        -self.log_value() / self.horizon
    }
}

/// `Γ` and the tilted mean `Z` for weight `λ`:
/// `dΓ/d<M> = −(θ/2)(AΓ + ΓA*) + bb* − 2λ ΓRΓ`,
/// `dZ/d<M> = −(θ/2)AZ + bv − 2λ ΓRZ`.
pub fn solve_gamma_z(
    lambda: f64,
    theta: f64,
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<OdeTrajectory<SMatrix<f64, 2, 3>>> {
    check_theta(theta)?;
    let v = input_profile(input, &kernel.grid)?;
    ode_step(
        SMatrix::<f64, 2, 3>::zeros(),
        &kernel.grid,
        &kernel.m_prime,
        OdeLabel::GammaZ,
        |t, mp, y| {
            let psi = 1.0 / mp;
            let a = a_matrix(psi);
            let b = b_vector(psi);
            let r = r_matrix(psi);
            let g: Matrix2<f64> = y.fixed_view::<2, 2>(0, 0).into();
            let z: Vector2<f64> = y.fixed_view::<2, 1>(0, 2).into();
            let fb = g * r * (2.0 * lambda);
            let dg = (a * g + g * a.transpose()) * (-0.5 * theta) + b * b.transpose() - fb * g;
            let dz = a * z * (-0.5 * theta) + b * v(t, mp) - fb * z;
            let mut out = SMatrix::<f64, 2, 3>::zeros();
            out.fixed_view_mut::<2, 2>(0, 0).copy_from(&dg);
            out.fixed_view_mut::<2, 1>(0, 2).copy_from(&dz);
            out
        },
    )
}

fn assemble(
    lambda: f64,
    theta: f64,
    gamma: &[Matrix2<f64>],
    z: &[Vector2<f64>],
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    let w = kernel.weights();
    let mut trace = Vec::with_capacity(gamma.len());
    let mut mean = Vec::with_capacity(gamma.len());
    for ((g, z), &psi) in gamma.iter().zip(z).zip(&kernel.psi_diag) {
        let r = r_matrix(psi);
        trace.push((g * r).trace());
        mean.push(z.dot(&(r * z)));
    }
    Ok(QuadraticLaplace {
        lambda,
        theta,
        horizon: kernel.horizon(),
        log_trace: -lambda * integrate(&trace, &w)?,
        log_mean: -lambda * integrate(&mean, &w)?,
    })
}

/// `E exp(−λ ∫ Q² d<M>)` for an arbitrary weight `λ ≥ 0`.
pub fn quadratic_laplace(
    lambda: f64,
    theta: f64,
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("weight must be >= 0, got {lambda}")));
    }
    let traj = solve_gamma_z(lambda, theta, input, kernel)?;
    let gamma: Vec<Matrix2<f64>> = traj
        .values
        .iter()
        .map(|y| y.fixed_view::<2, 2>(0, 0).into())
        .collect();
    let z: Vec<Vector2<f64>> = traj
        .values
        .iter()
        .map(|y| y.fixed_view::<2, 1>(0, 2).into())
        .collect();
    assemble(lambda, theta, &gamma, &z, kernel)
}

/// `𝓛_T(μ) = E exp(−(μ/T) ∫ Q² d<M>)`.
pub fn gamma_z_laplace(
    mu: f64,
    theta: f64,
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu must be >= 0, got {mu}")));
    }
    quadratic_laplace(mu / kernel.horizon(), theta, input, kernel)
}

/// Same transform with `Z` from the integral equation
/// `Z(t) = P(t) − 2λ ∫_0^t φ(t)φ⁻¹(s) Γ(s) R(s) Z(s) d<M>_s`,
/// trapezoid in `<M>` and forward substitution.
pub fn gamma_z_laplace_volterra(
    mu: f64,
    theta: f64,
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu must be >= 0, got {mu}")));
    }
    let lambda = mu / kernel.horizon();
    let traj = solve_gamma_z(lambda, theta, input, kernel)?;
    let gamma: Vec<Matrix2<f64>> = traj
        .values
        .iter()
        .map(|y| y.fixed_view::<2, 2>(0, 0).into())
        .collect();
    let p = solve_p(input, theta, kernel)?;
    let steps = step_propagators(&kernel.grid, &kernel.m_prime, |psi| {
        a_matrix(psi) * (-0.5 * theta)
    });
    let n = kernel.grid.n_nodes();
    let kmat: Vec<Matrix2<f64>> = gamma
        .iter()
        .zip(&kernel.psi_diag)
        .map(|(g, &psi)| g * r_matrix(psi) * (2.0 * lambda))
        .collect();
    let mut z = Vec::with_capacity(n);
    z.push(p.values[0]);
    // acc_j = ∫_0^{t_j} φ(t_j)φ⁻¹(s) K(s) Z(s) d<M>_s, excluding the implicit endpoint term.
    let mut acc = Vector2::zeros();
    for j in 0..n - 1 {
        let half = 0.5 * (kernel.m[j + 1] - kernel.m[j]);
        let f_j = kmat[j] * z[j];
        acc = steps[j] * (acc + f_j * half);
        let lhs = Matrix2::identity() + kmat[j + 1] * half;
        let rhs = p.values[j + 1] - acc;
        let zj = lhs.lu().solve(&rhs).ok_or(Error::BlowUp {
            node: j + 1,
            time: kernel.grid.node(j + 1),
        })?;
        acc += kmat[j + 1] * zj * half;
        z.push(zj);
    }
    assemble(lambda, theta, &gamma, &z, kernel)
}

/// Transform with constant drift `u ≡ α`, whose `v` is computed by the
/// kernel transform.
pub fn constant_drift_laplace(
    mu: f64,
    theta: f64,
    alpha: f64,
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    let input = InputSignal::constant(alpha, kernel)?;
    gamma_z_laplace(mu, theta, &input, kernel)
}

/// `−(1/T) log E exp(−μ ∫ Q² d<M>)` (unnormalized weight).
pub fn log_laplace_rate(
    mu: f64,
    theta: f64,
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<QuadraticLaplace> {
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu must be >= 0, got {mu}")));
    }
    quadratic_laplace(mu, theta, input, kernel)
}

/// `μ/θ² + θ/2 − √(θ²/4 + μ/2)`.
pub fn kat_limit(mu: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(mu > -0.5 * theta * theta) {
        return Err(Error::Domain(format!(
            "mu must exceed -theta^2/2 = {}, got {mu}",
            -0.5 * theta * theta
        )));
    }
    Ok(mu / (theta * theta) + 0.5 * theta - (0.25 * theta * theta + 0.5 * mu).sqrt())
}

/// Stationary value of `−(1/T) log E exp(−μ ∫ Q² d<M>)` under `v_opt`:
/// `√(θ²/4 + μ/2) − θ/2 + μ/(θ² + 2μ)`.
pub fn log_laplace_rate_limit(mu: f64, theta: f64) -> Result<f64> {
    check_theta(theta)?;
    if !(mu >= 0.0) {
        return Err(Error::Domain(format!("mu must be >= 0, got {mu}")));
    }
    Ok((0.25 * theta * theta + 0.5 * mu).sqrt() - 0.5 * theta + mu / (theta * theta + 2.0 * mu))
}

/// `log` of the large-`T` limit of `𝓛_T(μ)` under `v_opt`: `−μ(1/(2θ) + 1/θ²)`.
pub fn optimal_laplace_log_limit(mu: f64, theta: f64) -> Result<f64> {
    Ok(-mu * crate::estimator::asymptotic_fisher(theta)?)
}

/// `log` of the large-`T` limit under `u ≡ α`: `−μ/(2θ)` for `H > 1/2`,
/// `−μ(1/(2θ) + (α/θ)²)` for `H < 1/2`.
pub fn constant_laplace_log_limit(
    mu: f64,
    theta: f64,
    alpha: f64,
    long_memory: bool,
) -> Result<f64> {
    check_theta(theta)?;
    let mean = if long_memory {
        0.0
    } else {
        (alpha / theta).powi(2)
    };
    Ok(-mu * (0.5 / theta + mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::optimal_v;
    use crate::mfbm::HurstParam;
    use crate::numerics::TimeGrid;

    fn kernel(h: f64, t: f64, n: usize) -> KernelBundle {
        KernelBundle::build(&TimeGrid::new(t, n).unwrap(), HurstParam::new(h).unwrap()).unwrap()
    }

    #[test]
    fn kat_limit_examples() {
        assert!(kat_limit(0.0, 1.0).unwrap().abs() < 1e-15);
        assert!((kat_limit(1.0, 1.0).unwrap() - (1.5 - 0.75f64.sqrt())).abs() < 1e-15);
        assert!((kat_limit(1.0, 1.0).unwrap() - 0.6340).abs() < 1e-4);
        assert!((kat_limit(2.0, 1.0).unwrap() - 1.3820).abs() < 1e-4);
        assert!(kat_limit(-0.6, 1.0).is_err());
    }

    #[test]
    fn psi_laplace_at_zero() {
        let k = kernel(0.7, 10.0, 500);
        let r = psi_laplace(0.0, 1.0, &k).unwrap();
        assert!((r.value() - 1.0).abs() < 1e-3, "{}", r.value());
        assert!((r.psi_integral / 10.0 - 1.0).abs() < 5e-3);
    }

    #[test]
    fn psi_laplace_rejects_small_a() {
        let k = kernel(0.7, 2.0, 50);
        assert!(matches!(psi_laplace(-0.6, 1.0, &k), Err(Error::Domain(_))));
    }

    #[test]
    fn gamma_z_at_zero_is_one() {
        let k = kernel(0.7, 5.0, 100);
        let r = gamma_z_laplace(0.0, 1.0, &optimal_v(&k), &k).unwrap();
        assert_eq!(r.value(), 1.0);
    }

    #[test]
    fn volterra_route_matches_ode_route() {
        for h in [0.3, 0.7] {
            let k = kernel(h, 20.0, 800);
            let v = optimal_v(&k);
            let a = gamma_z_laplace(1.0, 1.0, &v, &k).unwrap();
            let b = gamma_z_laplace_volterra(1.0, 1.0, &v, &k).unwrap();
            assert_eq!(a.log_trace, b.log_trace);
            assert!(
                (a.log_mean - b.log_mean).abs() < 1e-3 * a.log_mean.abs(),
                "H={h} {a:?} {b:?}"
            );
        }
    }

    #[test]
    fn completely_monotone_in_mu() {
        let k = kernel(0.7, 10.0, 400);
        let v = optimal_v(&k);
        let logs: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&mu| gamma_z_laplace(mu, 1.0, &v, &k).unwrap().log_value())
            .collect();
        for w in logs.windows(2) {
            assert!(w[1] < w[0]);
        }
        // Convexity of log 𝓛 in μ on the (non-uniform) sample points.
        let mus = [0.5, 1.0, 2.0, 4.0];
        for i in 0..2 {
            let (x0, x1, x2) = (mus[i], mus[i + 1], mus[i + 2]);
            let interp = logs[i] + (logs[i + 2] - logs[i]) * (x1 - x0) / (x2 - x0);
            assert!(logs[i + 1] <= interp + 1e-12);
        }
    }

    #[test]
    fn constant_drift_with_zero_alpha_has_no_mean_part() {
        let k = kernel(0.3, 10.0, 200);
        let r = constant_drift_laplace(1.0, 1.0, 0.0, &k).unwrap();
        assert_eq!(r.log_mean, 0.0);
    }
}
