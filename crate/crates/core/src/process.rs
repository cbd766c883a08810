//! Observation `X`, fundamental semimartingale `Z`, the process `Q` and the
//! martingale `M`, all on the kernel grid.
//!
//! Stochastic integrals are left-point (Itô) sums. Kernel tables are indexed
//! by cell, so `Σ_{i<j} g(i, t_j) ΔX_i` pairs cell `i` of `g(·, t_j)` with the
//! increment over the same cell.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::KernelBundle;
use crate::mfbm::NoisePath;
use crate::numerics::{integrate, TimeGrid};

/// How an input signal was specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputKind {
    Zero,
    Constant { alpha: f64 },
    Optimal,
    Tabulated,
}

impl InputKind {
    pub fn name(&self) -> &'static str {
        match self {
            InputKind::Zero => "zero",
            InputKind::Constant { .. } => "constant",
            InputKind::Optimal => "optimal",
            InputKind::Tabulated => "tabulated",
        }
    }
}

/// Drift input `u(t)` together with its transform `v(t)` in `<M>`-time.
///
/// `u` may be absent for a design that only exists in transformed form
/// (e.g. `v_opt` before the inverse transform is applied).
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal {
    pub kind: InputKind,
    pub u: Option<Vec<f64>>,
    pub v: Vec<f64>,
}

impl InputSignal {
    pub fn zero(grid: &TimeGrid) -> Self {
        Self {
            kind: InputKind::Zero,
            u: Some(vec![0.0; grid.n_nodes()]),
            v: vec![0.0; grid.n_nodes()],
        }
    }

    /// Constant `u ≡ α`; `v` is computed through the transform, not assumed.
    pub fn constant(alpha: f64, kernel: &KernelBundle) -> Result<Self> {
        let u = vec![alpha; kernel.grid.n_nodes()];
        Self::from_u(InputKind::Constant { alpha }, u, kernel)
    }

    /// Input given by `u`; `v = d/d<M>_t ∫_0^t g(s,t) u(s) ds`.
    pub fn from_u(kind: InputKind, u: Vec<f64>, kernel: &KernelBundle) -> Result<Self> {
        let v = transform_input(&u, kernel)?;
        Ok(Self {
            kind,
            u: Some(u),
            v,
        })
    }

    pub fn u(&self) -> Result<&[f64]> {
        self.u.as_deref().ok_or(Error::MissingControl)
    }

    /// Energy `(1/T) ∫ v² d<M>`.
    pub fn energy(&self, kernel: &KernelBundle) -> Result<f64> {
        let sq: Vec<f64> = self.v.iter().map(|v| v * v).collect();
        Ok(integrate(&sq, &kernel.weights())? / kernel.horizon())
    }
}

/// `Σ_{i<j} g(i, t_j) f_i Δ` for every node `j` (the `ds`-integral against `g`).
fn integrate_against_g(f: &[f64], kernel: &KernelBundle) -> Vec<f64> {
    let dt = kernel.grid.dt();
    (0..kernel.grid.n_nodes())
        .map(|j| {
            dt * kernel
                .g()
                .row(j)
                .iter()
                .zip(f)
                .map(|(g, f)| g * f)
                .sum::<f64>()
        })
        .collect()
}

/// Cell-wise derivative `(F_{j+1} − F_j) / Δm_j`; the last node repeats the last cell.
fn cell_derivative_in_measure(f: &[f64], kernel: &KernelBundle) -> Vec<f64> {
    let n = kernel.grid.n_steps();
    let mut out: Vec<f64> = (0..n)
        .map(|j| (f[j + 1] - f[j]) / (kernel.m[j + 1] - kernel.m[j]))
        .collect();
    out.push(out[n - 1]);
    out
}

/// `v(t) = d/d<M>_t ∫_0^t g(s,t) u(s) ds`.
///
/// Differences are taken per cell so that `Σ_{i<j} v_i Δm_i` reproduces the
/// discrete integral `Σ_{i<j} g(i, t_j) u_i Δ` exactly.
pub fn transform_input(u: &[f64], kernel: &KernelBundle) -> Result<Vec<f64>> {
    check_len("input values", kernel.grid.n_nodes(), u.len())?;
    Ok(cell_derivative_in_measure(
        &integrate_against_g(u, kernel),
        kernel,
    ))
}

/// Euler scheme `X_{i+1} = X_i + (−θ X_i + u_i) Δ + Δξ_i`, `X_0 = 0`.
pub fn simulate_x(noise: &NoisePath, theta: f64, input: &InputSignal) -> Result<Vec<f64>> {
    if !(theta >= 0.0) {
        return Err(Error::Domain(format!("theta must be >= 0, got {theta}")));
    }
    let u = input.u()?;
    let grid = &noise.grid;
    check_len("input values", grid.n_nodes(), u.len())?;
    let dt = grid.dt();
    let mut x = Vec::with_capacity(grid.n_nodes());
    let mut cur = 0.0;
    x.push(cur);
    for (i, dxi) in noise.increments.iter().enumerate() {
        cur += (-theta * cur + u[i]) * dt + dxi;
        x.push(cur);
    }
    Ok(x)
}

/// `Z_{t_j} = Σ_{i<j} g(i, t_j) (X_{i+1} − X_i)`.
pub fn transform_z(x: &[f64], kernel: &KernelBundle) -> Result<Vec<f64>> {
    check_len("path length", kernel.grid.n_nodes(), x.len())?;
    let dx: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    Ok((0..x.len())
        .map(|j| kernel.g().row(j).iter().zip(&dx).map(|(g, d)| g * d).sum())
        .collect())
}

/// `Q_t = ∫_0^t ψ(s,t) dZ_s` with `ψ(s,t) = (ψ(t,t) + ψ(s,s)) / 2`:
/// `Q_{t_j} = [ψ_j Z_j + Σ_{i<j} ψ_i ΔZ_i] / 2`.
pub fn compute_q(z: &[f64], kernel: &KernelBundle) -> Result<Vec<f64>> {
    check_len("path length", kernel.grid.n_nodes(), z.len())?;
    let psi = &kernel.psi_diag;
    let mut q = Vec::with_capacity(z.len());
    let mut acc = 0.0;
    for j in 0..z.len() {
        q.push(0.5 * (psi[j] * z[j] + acc));
        if j + 1 < z.len() {
            acc += psi[j] * (z[j + 1] - z[j]);
        }
    }
    Ok(q)
}

/// `Q_t = d/d<M>_t ∫_0^t g(s,t) X_s ds`, differenced per cell.
///
/// With this form `Z_{t_j} = Σ_{i<j} (v_i − θ Q_i) Δm_i + M_{t_j}` holds exactly
/// on the grid for Euler paths.
pub fn compute_q_derivative(x: &[f64], kernel: &KernelBundle) -> Result<Vec<f64>> {
    check_len("path length", kernel.grid.n_nodes(), x.len())?;
    Ok(cell_derivative_in_measure(
        &integrate_against_g(x, kernel),
        kernel,
    ))
}

/// `M_{t_j} = Z_{t_j} − Σ_{i<j} (v_i − θ Q_i) Δm_i`.
pub fn extract_m(
    z: &[f64],
    q: &[f64],
    input: &InputSignal,
    theta: f64,
    kernel: &KernelBundle,
) -> Result<Vec<f64>> {
    let n = kernel.grid.n_nodes();
    check_len("Z path", n, z.len())?;
    check_len("Q path", n, q.len())?;
    check_len("input v", n, input.v.len())?;
    let mut m = Vec::with_capacity(n);
    let mut drift = 0.0;
    for j in 0..n {
        m.push(z[j] - drift);
        if j + 1 < n {
            drift += (input.v[j] - theta * q[j]) * (kernel.m[j + 1] - kernel.m[j]);
        }
    }
    Ok(m)
}

/// Two-dimensional state `ζ` with `Q = ℓ(t)* ζ / 2`, `ℓ = (ψ(t,t), 1)`.
///
/// `ζ¹ = Z` and `ζ² = ∫ ψ(s,s) dZ_s`, accumulated from the same increments.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaPath {
    pub grid: TimeGrid,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl ZetaPath {
    pub fn accumulate(z: &[f64], kernel: &KernelBundle) -> Result<Self> {
        check_len("path length", kernel.grid.n_nodes(), z.len())?;
        let mut second = Vec::with_capacity(z.len());
        let mut acc = 0.0;
        for j in 0..z.len() {
            second.push(acc);
            if j + 1 < z.len() {
                acc += kernel.psi_diag[j] * (z[j + 1] - z[j]);
            }
        }
        Ok(Self {
            grid: kernel.grid,
            first: z.to_vec(),
            second,
        })
    }

    /// `Q_t = ½ ℓ(t)* ζ_t`.
    pub fn q(&self, kernel: &KernelBundle) -> Vec<f64> {
        self.first
            .iter()
            .zip(&self.second)
            .zip(&kernel.psi_diag)
            .map(|((a, b), p)| 0.5 * (p * a + b))
            .collect()
    }
}

/// Which discretization of `Q` a pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QForm {
    /// `∫ ψ(s,t) dZ_s`.
    Psi,
    /// `d/d<M>_t ∫ g(s,t) X_s ds`.
    #[default]
    Derivative,
}

/// One replication: noise, observation and derived processes.
#[derive(Debug, Clone)]
pub struct PathBundle {
    pub grid: TimeGrid,
    pub theta_true: f64,
    pub input: InputSignal,
    pub xi: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub q: Vec<f64>,
    pub m: Vec<f64>,
}

impl PathBundle {
    pub fn simulate(
        noise: &NoisePath,
        theta: f64,
        input: &InputSignal,
        kernel: &KernelBundle,
        q_form: QForm,
    ) -> Result<Self> {
        check_len("noise steps", kernel.grid.n_steps(), noise.increments.len())?;
        let x = simulate_x(noise, theta, input)?;
        let z = transform_z(&x, kernel)?;
        let q = match q_form {
            QForm::Psi => compute_q(&z, kernel)?,
            QForm::Derivative => compute_q_derivative(&x, kernel)?,
        };
        let m = extract_m(&z, &q, input, theta, kernel)?;
        Ok(Self {
            grid: kernel.grid,
            theta_true: theta,
            input: input.clone(),
            xi: noise.values(),
            x,
            z,
            q,
            m,
        })
    }

    /// CSV with columns `t,xi,X,Z,Q,M`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,xi,X,Z,Q,M\n");
        for j in 0..self.x.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.grid.node(j),
                self.xi[j],
                self.x[j],
                self.z[j],
                self.q[j],
                self.m[j]
            ));
        }
        out
    }
}

/// Recover `X_{t_j} = Σ_{k<j} ĝ(s_k, t_j) ΔZ_k`.
pub fn invert_z(z: &[f64], kernel: &mut KernelBundle) -> Result<Vec<f64>> {
    check_len("path length", kernel.grid.n_nodes(), z.len())?;
    let dz: Vec<f64> = z.windows(2).map(|w| w[1] - w[0]).collect();
    let table = kernel.ghat()?;
    Ok((0..z.len())
        .map(|j| table.row(j).iter().zip(&dz).map(|(g, d)| g * d).sum())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfbm::HurstParam;

    fn kernel(h: f64, t: f64, n: usize) -> KernelBundle {
        KernelBundle::build(&TimeGrid::new(t, n).unwrap(), HurstParam::new(h).unwrap()).unwrap()
    }

    #[test]
    fn zero_noise_zero_input() {
        let k = kernel(0.7, 2.0, 50);
        let noise = NoisePath::zero(&k.grid);
        let input = InputSignal::zero(&k.grid);
        let x = simulate_x(&noise, 1.0, &input).unwrap();
        assert!(x.iter().all(|&v| v == 0.0));
        let z = transform_z(&x, &k).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let q = compute_q(&z, &k).unwrap();
        assert!(q.iter().all(|&v| v == 0.0));
        let m = extract_m(&z, &q, &input, 1.0, &k).unwrap();
        assert!(m.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_constant_drift_follows_exponential() {
        let k = kernel(0.7, 5.0, 1000);
        let noise = NoisePath::zero(&k.grid);
        let (alpha, theta) = (1.5, 0.8);
        let input = InputSignal::constant(alpha, &k).unwrap();
        let x = simulate_x(&noise, theta, &input).unwrap();
        let exact = alpha / theta * (1.0 - (-theta * 5.0f64).exp());
        assert!((x[1000] - exact).abs() < 2.0 * k.grid.dt() * alpha);
    }

    #[test]
    fn constant_input_transforms_to_constant() {
        for h in [0.3, 0.7] {
            let k = kernel(h, 3.0, 120);
            let input = InputSignal::constant(2.0, &k).unwrap();
            assert!(input.v.iter().all(|v| (v - 2.0).abs() < 1e-10));
        }
    }

    #[test]
    fn zeta_reproduces_q() {
        let k = kernel(0.3, 2.0, 80);
        let z: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
        let q = compute_q(&z, &k).unwrap();
        let zeta = ZetaPath::accumulate(&z, &k).unwrap();
        for (a, b) in zeta.q(&k).iter().zip(&q) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
        }
        assert_eq!(zeta.first[0], 0.0);
        assert_eq!(zeta.second[0], 0.0);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let k = kernel(0.7, 1.0, 10);
        assert!(matches!(
            transform_z(&[0.0; 5], &k),
            Err(Error::Dimension { .. })
        ));
        assert!(compute_q(&[0.0; 5], &k).is_err());
    }

    #[test]
    fn missing_control_is_an_error() {
        let k = kernel(0.7, 1.0, 10);
        let input = InputSignal {
            kind: InputKind::Optimal,
            u: None,
            v: vec![1.0; 11],
        };
        let noise = NoisePath::zero(&k.grid);
        assert!(matches!(
            simulate_x(&noise, 1.0, &input),
            Err(Error::MissingControl)
        ));
    }

    #[test]
    fn discrete_martingale_has_bracket_covariance() {
        use crate::mfbm::increment_covariance;
        let k = kernel(0.7, 3.0, 60);
        let cov = increment_covariance(&k.grid, k.hurst);
        let n = k.grid.n_nodes();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut r = vec![0.0; n - 1];
                r[..j].copy_from_slice(k.g().row(j));
                r
            })
            .collect();
        for a in [5, 20, 41, 60] {
            for b in [5, 33, 60] {
                let c: f64 = (0..n - 1)
                    .map(|i| rows[a][i] * (0..n - 1).map(|l| cov[(i, l)] * rows[b][l]).sum::<f64>())
                    .sum();
                let expected = k.m[a.min(b)];
                assert!((c - expected).abs() < 1e-9 * expected.max(1.0), "{a},{b}");
            }
        }
    }

    #[test]
    fn q_forms_agree_on_fine_grid() {
        use crate::mfbm::NoiseSampler;
        let k = kernel(0.7, 5.0, 1000);
        let noise = NoiseSampler::new(&k.grid, k.hurst).unwrap().sample(3);
        let input = InputSignal::constant(1.0, &k).unwrap();
        let x = simulate_x(&noise, 1.0, &input).unwrap();
        let z = transform_z(&x, &k).unwrap();
        let qa = compute_q(&z, &k).unwrap();
        let qb = compute_q_derivative(&x, &k).unwrap();
        let num: f64 = qa.iter().zip(&qb).map(|(a, b)| (a - b).powi(2)).sum();
        let den: f64 = qb.iter().map(|b| b * b).sum();
        assert!((num / den).sqrt() < 2e-2);
    }

    #[test]
    fn observation_mean_follows_deterministic_solution() {
        use crate::mfbm::sample_paths;
        let k = kernel(0.3, 2.0, 100);
        let (theta, alpha) = (1.0, 1.0);
        let input = InputSignal::constant(alpha, &k).unwrap();
        let paths = sample_paths(&k.grid, k.hurst, 2000, 5).unwrap();
        let ends: Vec<f64> = paths
            .iter()
            .map(|p| simulate_x(p, theta, &input).unwrap()[100])
            .collect();
        let mean = ends.iter().sum::<f64>() / 2000.0;
        let var = ends.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 1999.0;
        let deterministic = simulate_x(&NoisePath::zero(&k.grid), theta, &input).unwrap()[100];
        assert!((mean - deterministic).abs() < 4.0 * (var / 2000.0).sqrt());
    }
}
