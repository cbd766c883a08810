//! Optimal input, mean path `P`, fundamental matrix `φ`, the Fisher
//! information split `I = I₁ + I₂` and the covariance operator `𝒦_T`.
//!
//! All systems are written in `<M>`-time, `d/d<M> = ψ d/dt`, and integrated
//! in `t` with the bracket density supplied by the kernel.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::KernelBundle;
use crate::numerics::{
    centered_derivative, integrate, interpolate, ode_step, ode_step_linear, top_eigenvalue,
    OdeLabel, OdeTrajectory, TimeGrid,
};
use crate::process::{transform_input, InputKind, InputSignal};

/// `A(t) = b ℓ*` for `ψ = ψ(t,t)`.
pub fn a_matrix(psi: f64) -> Matrix2<f64> {
    Matrix2::new(psi, 1.0, psi * psi, psi)
}

/// `b(t) = (1, ψ)`.
pub fn b_vector(psi: f64) -> Vector2<f64> {
    Vector2::new(1.0, psi)
}

/// `ℓ(t) = (ψ, 1)`.
pub fn ell_vector(psi: f64) -> Vector2<f64> {
    Vector2::new(psi, 1.0)
}

/// `R(t) = ℓ ℓ* / 4`, so that `Q² = ζ* R ζ`.
pub fn r_matrix(psi: f64) -> Matrix2<f64> {
    let l = ell_vector(psi);
    l * l.transpose() * 0.25
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must be > 0, got {theta}")));
    }
    Ok(())
}

/// `v(t)` as a function of `(t, m'(t))` for use inside ODE stages.
pub(crate) fn input_profile<'a>(
    input: &'a InputSignal,
    grid: &'a TimeGrid,
) -> Result<impl Fn(f64, f64) -> f64 + 'a> {
    check_len("input v", grid.n_nodes(), input.v.len())?;
    let exact = input.kind == InputKind::Optimal && input.u.is_none();
    Ok(move |t: f64, mp: f64| {
        if exact {
            1.0 / mp.sqrt()
        } else {
            interpolate(&input.v, grid, t)
        }
    })
}

/// `v_opt(t) = √ψ(t,t)`; saturates the unit-energy constraint.
pub fn optimal_v(kernel: &KernelBundle) -> InputSignal {
    InputSignal {
        kind: InputKind::Optimal,
        u: None,
        v: kernel.psi_diag.iter().map(|p| p.sqrt()).collect(),
    }
}

/// Time-domain control producing `v`:
/// `u(t) = d/dt ∫_0^t ĝ(s,t) v(s) d<M>_s`.
///
/// The returned signal carries `u` together with its forward transform, which
/// is the `v` an observer of the resulting process actually sees.
pub fn optimal_u(kernel: &mut KernelBundle, v: &InputSignal) -> Result<InputSignal> {
    let n = kernel.grid.n_nodes();
    check_len("input v", n, v.v.len())?;
    let dm = kernel.dm();
    let dt = kernel.grid.dt();
    let table = kernel.ghat()?;
    let integral: Vec<f64> = (0..n)
        .map(|j| {
            table
                .row(j)
                .iter()
                .zip(&v.v)
                .zip(&dm)
                .map(|((g, v), d)| g * v * d)
                .sum()
        })
        .collect();
    let u = centered_derivative(&integral, dt);
    let realized = transform_input(&u, kernel)?;
    Ok(InputSignal {
        kind: InputKind::Optimal,
        u: Some(u),
        v: realized,
    })
}

/// Mean path `P = E ζ`: `dP/d<M> = −(θ/2) A P + b v`, `P(0) = 0`.
pub fn solve_p(
    input: &InputSignal,
    theta: f64,
    kernel: &KernelBundle,
) -> Result<OdeTrajectory<Vector2<f64>>> {
    check_theta(theta)?;
    let v = input_profile(input, &kernel.grid)?;
    ode_step(
        Vector2::zeros(),
        &kernel.grid,
        &kernel.m_prime,
        OdeLabel::P,
        |t, mp, p| {
            let psi = 1.0 / mp;
            a_matrix(psi) * p * (-0.5 * theta) + b_vector(psi) * v(t, mp)
        },
    )
}

/// RK4 one-step maps `S_k` with `Y(t_{k+1}) = S_k Y(t_k)` for
/// `dY/d<M> = C(ψ) Y`, using the same stages as [`ode_step`].
pub(crate) fn step_propagators<F>(
    grid: &TimeGrid,
    m_prime: &[f64],
    coefficient: F,
) -> Vec<Matrix2<f64>>
where
    F: Fn(f64) -> Matrix2<f64>,
{
    let h = grid.dt();
    let id = Matrix2::identity();
    let gen = |mp: f64| coefficient(1.0 / mp) * mp;
    (0..grid.n_steps())
        .map(|k| {
            let (mp0, mp1) = (m_prime[k], m_prime[k + 1]);
            let (g0, gh, g1) = (gen(mp0), gen(0.5 * (mp0 + mp1)), gen(mp1));
            let k1 = g0;
            let k2 = gh * (id + k1 * (0.5 * h));
            let k3 = gh * (id + k2 * (0.5 * h));
            let k4 = g1 * (id + k3 * h);
            id + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
        })
        .collect()
}

/// Fundamental matrix of `dφ/d<M> = −(θ/2) A φ` with its inverse and the
/// one-step propagators.
#[derive(Debug, Clone)]
pub struct PhiSolution {
    pub phi: OdeTrajectory<Matrix2<f64>>,
    pub phi_inverse: OdeTrajectory<Matrix2<f64>>,
    pub steps: Vec<Matrix2<f64>>,
}

impl PhiSolution {
    /// `φ(t_j) φ⁻¹(t_i)` for `i ≤ j`, as a product of one-step maps.
    pub fn propagator(&self, i: usize, j: usize) -> Matrix2<f64> {
        assert!(i <= j, "propagator needs i <= j");
        self.steps[i..j]
            .iter()
            .fold(Matrix2::identity(), |acc, s| s * acc)
    }
}

/// `φ` and `φ⁻¹` (the latter from `dφ⁻¹/d<M> = (θ/2) φ⁻¹ A`).
pub fn solve_phi(theta: f64, kernel: &KernelBundle) -> Result<PhiSolution> {
    if !(theta >= 0.0) {
        return Err(Error::Domain(format!("theta must be >= 0, got {theta}")));
    }
    let grid = &kernel.grid;
    let phi = ode_step_linear(
        Matrix2::identity(),
        grid,
        &kernel.m_prime,
        OdeLabel::Phi,
        |_, mp| a_matrix(1.0 / mp) * (-0.5 * theta),
    )?;
    for (node, p) in phi.values.iter().enumerate() {
        let det = p.determinant();
        if det.abs() < 1e-300 {
            return Err(Error::Underflow { node, det });
        }
    }
    let phi_inverse = ode_step(
        Matrix2::identity(),
        grid,
        &kernel.m_prime,
        OdeLabel::PhiInverse,
        |_, mp, y| y * a_matrix(1.0 / mp) * (0.5 * theta),
    )?;
    let steps = step_propagators(grid, &kernel.m_prime, |psi| a_matrix(psi) * (-0.5 * theta));
    Ok(PhiSolution {
        phi,
        phi_inverse,
        steps,
    })
}

/// Stationary-free covariance of `ζ − Eζ`:
/// `dΓ/d<M> = −(θ/2)(AΓ + ΓA*) + bb*`, `Γ(0) = 0`.
pub fn solve_covariance(theta: f64, kernel: &KernelBundle) -> Result<OdeTrajectory<Matrix2<f64>>> {
    check_theta(theta)?;
    ode_step(
        Matrix2::zeros(),
        &kernel.grid,
        &kernel.m_prime,
        OdeLabel::Gamma,
        |_, mp, g| {
            let psi = 1.0 / mp;
            let a = a_matrix(psi);
            let b = b_vector(psi);
            (a * g + g * a.transpose()) * (-0.5 * theta) + b * b.transpose()
        },
    )
}

/// `I₁ = ∫ tr(Γ R) d<M>`, the information carried by the centered part of `Q`.
pub fn fisher_i1(theta: f64, kernel: &KernelBundle) -> Result<f64> {
    let gamma = solve_covariance(theta, kernel)?;
    let values: Vec<f64> = gamma
        .values
        .iter()
        .zip(&kernel.psi_diag)
        .map(|(g, &psi)| (g * r_matrix(psi)).trace())
        .collect();
    integrate(&values, &kernel.weights())
}

/// `I₂ = ¼ ∫ (ℓ* P)² d<M>`, the information carried by the input.
pub fn fisher_i2(input: &InputSignal, theta: f64, kernel: &KernelBundle) -> Result<f64> {
    let p = solve_p(input, theta, kernel)?;
    let values: Vec<f64> = p
        .values
        .iter()
        .zip(&kernel.psi_diag)
        .map(|(p, &psi)| 0.25 * ell_vector(psi).dot(p).powi(2))
        .collect();
    integrate(&values, &kernel.weights())
}

/// Fisher information table for one `(θ, T, H)` and input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherBreakdown {
    pub i1: f64,
    pub i2: f64,
    pub total: f64,
    pub horizon: f64,
    pub asymptotic: f64,
}

pub fn fisher_breakdown(
    input: &InputSignal,
    theta: f64,
    kernel: &KernelBundle,
) -> Result<FisherBreakdown> {
    let i1 = fisher_i1(theta, kernel)?;
    let i2 = fisher_i2(input, theta, kernel)?;
    Ok(FisherBreakdown {
        i1,
        i2,
        total: i1 + i2,
        horizon: kernel.horizon(),
        asymptotic: crate::estimator::asymptotic_fisher(theta)?,
    })
}

fn trapezoid_weights(n_nodes: usize, dt: f64) -> Vec<f64> {
    (0..n_nodes)
        .map(|i| {
            if i == 0 || i + 1 == n_nodes {
                0.5 * dt
            } else {
                dt
            }
        })
        .collect()
}

/// Discretized `𝒦_T(s,σ) = ∫_{max(s,σ)}^T 𝒢(t,s) 𝒢(t,σ) dt`, with quadrature
/// weights folded in so that its eigenvalues approximate those of the operator
/// on `L²[0,T]`.
#[derive(Debug, Clone)]
pub struct OperatorTable {
    pub grid: TimeGrid,
    pub theta: f64,
    pub matrix: DMatrix<f64>,
    /// Norm weights `ω_i` of the `L²[0,T]` inner product.
    pub weights: Vec<f64>,
}

impl OperatorTable {
    pub fn top_eigenvalue(&self) -> Result<f64> {
        Ok(top_eigenvalue(&self.matrix)?.0)
    }

    /// All eigenvalues, descending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        ev
    }

    /// `∫∫ 𝒦_T(s,σ) y(s) y(σ) ds dσ`.
    pub fn quadratic_form(&self, y: &[f64]) -> Result<f64> {
        check_len("operator argument", self.weights.len(), y.len())?;
        let yt = DVector::from_iterator(
            y.len(),
            y.iter().zip(&self.weights).map(|(y, w)| y * w.sqrt()),
        );
        Ok(yt.dot(&(&self.matrix * &yt)))
    }

    /// `log ∏ (1 + 2a ν_i)^{-1/2}`, by Cholesky of `I + 2a 𝒦`.
    pub fn log_laplace(&self, a: f64) -> Result<f64> {
        let n = self.matrix.nrows();
        let m = DMatrix::identity(n, n) + &self.matrix * (2.0 * a);
        let chol = m.cholesky().ok_or(Error::Solvability {
            node: n,
            det: f64::NAN,
        })?;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        Ok(-0.5 * log_det)
    }
}

/// `𝒢(t,σ) = ½ ψ(t)^{-1/2} ℓ(t)* φ(t)φ⁻¹(σ) b(σ) ψ(σ)^{-1/2}` on the kernel grid,
/// folded into `𝒦_T`. Cost `O(n³)`.
pub fn build_operator(theta: f64, kernel: &KernelBundle) -> Result<OperatorTable> {
    check_theta(theta)?;
    let grid = kernel.grid;
    let n = grid.n_nodes();
    let dt = grid.dt();
    let psi = &kernel.psi_diag;
    let steps = step_propagators(&grid, &kernel.m_prime, |p| a_matrix(p) * (-0.5 * theta));
    let omega = trapezoid_weights(n, dt);

    // Column i: 𝒢(t_j, σ_i) for j ≥ i, times the inner quadrature weight.
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut col = vec![0.0; n];
            let mut w = b_vector(psi[i]) / psi[i].sqrt();
            for j in i..n {
                if j > 0 {
                    let inner = if i == 0 || i == j { 0.5 * dt } else { dt };
                    let g = 0.5 * ell_vector(psi[j]).dot(&w) / psi[j].sqrt();
                    col[j] = omega[j].sqrt() * inner * g / omega[i].sqrt();
                }
                if j < n - 1 {
                    w = steps[j] * w;
                }
            }
            col
        })
        .collect();
    let gm = DMatrix::from_fn(n, n, |j, i| columns[i][j]);
    let mut k = gm.transpose() * &gm;
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = avg;
            k[(j, i)] = avg;
        }
    }
    if !k.iter().all(|x| x.is_finite()) {
        return Err(Error::BlowUp {
            node: n - 1,
            time: grid.horizon(),
        });
    }
    Ok(OperatorTable {
        grid,
        theta,
        matrix: k,
        weights: omega,
    })
}

/// `I₂` through the operator: `∫∫ 𝒦_T ṽ ṽ` with `ṽ = v ψ^{-1/2}`.
pub fn fisher_i2_operator(
    input: &InputSignal,
    op: &OperatorTable,
    kernel: &KernelBundle,
) -> Result<f64> {
    check_len("input v", kernel.grid.n_nodes(), input.v.len())?;
    let y: Vec<f64> = input
        .v
        .iter()
        .zip(&kernel.psi_diag)
        .map(|(v, p)| v / p.sqrt())
        .collect();
    op.quadratic_form(&y)
}

/// `J₂ = T · sup_{‖ṽ‖ ≤ 1} (𝒦_T ṽ, ṽ) = T ν₁(T)`.
pub fn j2_supremum(op: &OperatorTable) -> Result<f64> {
    Ok(op.grid.horizon() * op.top_eigenvalue()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfbm::HurstParam;

    fn kernel(h: f64, t: f64, n: usize) -> KernelBundle {
        KernelBundle::build(&TimeGrid::new(t, n).unwrap(), HurstParam::new(h).unwrap()).unwrap()
    }

    #[test]
    fn a_is_rank_one() {
        let a = a_matrix(2.5);
        assert!(a.determinant().abs() < 1e-12);
        assert!((a.trace() - 5.0).abs() < 1e-15);
        let ba = b_vector(2.5) * ell_vector(2.5).transpose();
        assert_eq!(a, ba);
    }

    #[test]
    fn optimal_v_has_unit_energy() {
        for h in [0.3, 0.7] {
            let k = kernel(h, 10.0, 400);
            let e = optimal_v(&k).energy(&k).unwrap();
            assert!((e - 1.0).abs() < 5e-3, "H={h} energy={e}");
        }
    }

    #[test]
    fn zero_input_gives_zero_mean_path() {
        let k = kernel(0.7, 5.0, 100);
        let p = solve_p(&InputSignal::zero(&k.grid), 1.0, &k).unwrap();
        assert!(p.values.iter().all(|v| v.norm() == 0.0));
        assert_eq!(
            fisher_i2(&InputSignal::zero(&k.grid), 1.0, &k).unwrap(),
            0.0
        );
    }

    #[test]
    fn phi_is_identity_without_drift() {
        let k = kernel(0.7, 5.0, 100);
        let s = solve_phi(0.0, &k).unwrap();
        assert!(s.phi.values.iter().all(|p| *p == Matrix2::identity()));
    }

    #[test]
    fn phi_determinant_follows_liouville() {
        for h in [0.3, 0.7] {
            let k = kernel(h, 10.0, 1000);
            let s = solve_phi(1.0, &k).unwrap();
            for (j, p) in s.phi.values.iter().enumerate() {
                let want = (-k.grid.node(j)).exp();
                assert!(
                    (p.determinant() - want).abs() < 1e-6 * want.max(1e-3),
                    "H={h} j={j}"
                );
            }
        }
    }

    #[test]
    fn phi_inverse_and_propagators_agree() {
        let k = kernel(0.7, 5.0, 500);
        let s = solve_phi(1.0, &k).unwrap();
        for j in [10, 250, 500] {
            let prod = s.phi.values[j] * s.phi_inverse.values[j];
            assert!((prod - Matrix2::identity()).norm() < 1e-6);
            let direct = s.propagator(0, j);
            assert!((direct - s.phi.values[j]).norm() < 1e-10 * s.phi.values[j].norm());
        }
    }

    #[test]
    fn variation_of_constants_matches_p() {
        let k = kernel(0.7, 5.0, 500);
        let theta = 0.8;
        let s = solve_phi(theta, &k).unwrap();
        let mut state = 17u64;
        for _ in 0..3 {
            let coeffs: Vec<f64> = (0..3)
                .map(|_| {
                    state = state
                        .wrapping_mul(6364136223846793005)
                        .wrapping_add(1442695040888963407);
                    (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let v: Vec<f64> = k
                .grid
                .nodes()
                .iter()
                .map(|t| coeffs[0] + coeffs[1] * (t).sin() + coeffs[2] * t / 5.0)
                .collect();
            let input = InputSignal {
                kind: InputKind::Tabulated,
                u: None,
                v,
            };
            let p = solve_p(&input, theta, &k).unwrap();
            // [φ⁻¹ | ∫ φ⁻¹ b v d<M>] integrated jointly.
            let vp = input_profile(&input, &k.grid).unwrap();
            let mut y0 = nalgebra::SMatrix::<f64, 2, 3>::zeros();
            y0[(0, 0)] = 1.0;
            y0[(1, 1)] = 1.0;
            let aug = ode_step(y0, &k.grid, &k.m_prime, OdeLabel::Generic, |t, mp, y| {
                let psi = 1.0 / mp;
                let inv: Matrix2<f64> = y.fixed_view::<2, 2>(0, 0).into();
                let mut out = nalgebra::SMatrix::<f64, 2, 3>::zeros();
                out.fixed_view_mut::<2, 2>(0, 0)
                    .copy_from(&(inv * a_matrix(psi) * (0.5 * theta)));
                out.fixed_view_mut::<2, 1>(0, 2)
                    .copy_from(&(inv * b_vector(psi) * vp(t, mp)));
                out
            })
            .unwrap();
            let mut worst: f64 = 0.0;
            for j in 1..k.grid.n_nodes() {
                let integral: Vector2<f64> = aug.values[j].fixed_view::<2, 1>(0, 2).into();
                let pj = s.phi.values[j] * integral;
                worst = worst.max((pj - p.values[j]).norm() / p.values[j].norm().max(1e-3));
            }
            assert!(worst < 1e-6, "worst {worst}");
        }
    }

    #[test]
    fn operator_is_symmetric_psd() {
        let k = kernel(0.7, 5.0, 100);
        let op = build_operator(1.0, &k).unwrap();
        let ev = op.eigenvalues();
        assert!(ev[ev.len() - 1] >= -1e-8 * ev[0]);
        assert!((op.top_eigenvalue().unwrap() - ev[0]).abs() < 1e-8 * ev[0]);
    }

    #[test]
    fn laplace_at_zero_is_one() {
        let k = kernel(0.7, 2.0, 50);
        let op = build_operator(1.0, &k).unwrap();
        assert_eq!(op.log_laplace(0.0).unwrap(), 0.0);
    }

    #[test]
    fn optimal_u_reproduces_optimal_v() {
        let mut k = kernel(0.7, 10.0, 500);
        let target = optimal_v(&k);
        let realized = optimal_u(&mut k, &target).unwrap();
        let start = 50;
        let (mut err, mut norm) = (0.0, 0.0);
        for j in start..k.grid.n_nodes() {
            err += (realized.v[j] - target.v[j]).powi(2);
            norm += target.v[j].powi(2);
        }
        let rel = (err / norm).sqrt();
        assert!(rel < 5e-3, "{rel}");
        let e = realized.energy(&k).unwrap();
        assert!((e - 1.0).abs() < 1e-2, "{e}");
    }
}
