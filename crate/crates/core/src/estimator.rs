//! Maximum likelihood estimation of the drift parameter from `(Z, Q)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::kernel::KernelBundle;
use crate::mfbm::HurstParam;
use crate::process::{InputKind, InputSignal};

/// Denominators at or below this are treated as degenerate paths.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub theta_hat: f64,
    /// `∫ v Q d<M> − ∫ Q dZ`.
    pub numerator: f64,
    /// `∫ Q² d<M>`.
    pub denominator: f64,
    pub horizon: f64,
    pub input: InputKind,
}

/// `ϑ̂ = (∫ v Q d<M> − ∫ Q dZ) / ∫ Q² d<M>`, left-point sums.
pub fn mle(
    z: &[f64],
    q: &[f64],
    input: &InputSignal,
    kernel: &KernelBundle,
) -> Result<EstimationResult> {
    let n = kernel.grid.n_nodes();
    check_len("Z path", n, z.len())?;
    check_len("Q path", n, q.len())?;
    check_len("input v", n, input.v.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n - 1 {
        let dm = kernel.m[i + 1] - kernel.m[i];
        num += input.v[i] * q[i] * dm - q[i] * (z[i + 1] - z[i]);
        den += q[i] * q[i] * dm;
    }
    if !(den > DENOMINATOR_FLOOR) {
        return Err(Error::DegeneratePath {
            denominator: den,
            threshold: DENOMINATOR_FLOOR,
        });
    }
    let theta_hat = num / den;
    if !theta_hat.is_finite() {
        return Err(Error::DegeneratePath {
            denominator: den,
            threshold: DENOMINATOR_FLOOR,
        });
    }
    Ok(EstimationResult {
        theta_hat,
        numerator: num,
        denominator: den,
        horizon: kernel.horizon(),
        input: input.kind,
    })
}

/// `−Σ Q ΔM / Σ Q² Δm`; equals `ϑ̂ − θ` when `M` was extracted with the true `θ`.
pub fn estimation_error(q: &[f64], m: &[f64], kernel: &KernelBundle) -> Result<f64> {
    let n = kernel.grid.n_nodes();
    check_len("Q path", n, q.len())?;
    check_len("M path", n, m.len())?;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..n - 1 {
        num += q[i] * (m[i + 1] - m[i]);
        den += q[i] * q[i] * (kernel.m[i + 1] - kernel.m[i]);
    }
    if !(den > DENOMINATOR_FLOOR) {
        return Err(Error::DegeneratePath {
            denominator: den,
            threshold: DENOMINATOR_FLOOR,
        });
    }
    Ok(-num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Constant,
    Optimal,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Constant => "constant",
            Regime::Optimal => "optimal",
        }
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("theta must be > 0, got {theta}")));
    }
    Ok(())
}

/// `𝓘(ϑ) = 1/(2ϑ) + 1/ϑ²`.
pub fn asymptotic_fisher(theta: f64) -> Result<f64> {
    check_theta(theta)?;
    Ok(0.5 / theta + 1.0 / (theta * theta))
}

/// Limiting variance of `√T(ϑ̂ − ϑ)`.
pub fn theoretical_variance(
    hurst: HurstParam,
    theta: f64,
    alpha: f64,
    regime: Regime,
) -> Result<f64> {
    check_theta(theta)?;
    Ok(match regime {
        Regime::Optimal => 1.0 / asymptotic_fisher(theta)?,
        Regime::Constant if hurst.is_long_memory() => 2.0 * theta,
        Regime::Constant => 2.0 * theta * theta / (2.0 * alpha * alpha + theta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::TimeGrid;
    use proptest::prelude::*;

    fn kernel(h: f64) -> KernelBundle {
        KernelBundle::build(
            &TimeGrid::new(4.0, 80).unwrap(),
            HurstParam::new(h).unwrap(),
        )
        .unwrap()
    }

    fn noiseless(k: &KernelBundle, theta: f64, v: &[f64], q: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0];
        for i in 0..q.len() - 1 {
            let dm = k.m[i + 1] - k.m[i];
            z.push(z[i] + (v[i] - theta * q[i]) * dm);
        }
        z
    }

    #[test]
    fn zero_q_is_degenerate() {
        let k = kernel(0.7);
        let n = k.grid.n_nodes();
        let input = InputSignal::zero(&k.grid);
        let err = mle(&vec![0.0; n], &vec![0.0; n], &input, &k).unwrap_err();
        assert!(matches!(err, Error::DegeneratePath { .. }));
    }

    #[test]
    fn noiseless_path_is_identified() {
        let k = kernel(0.3);
        let n = k.grid.n_nodes();
        let q: Vec<f64> = (0..n).map(|i| (0.1 * i as f64).sin() + 0.3).collect();
        let input = InputSignal::constant(1.0, &k).unwrap();
        let z = noiseless(&k, 1.7, &input.v, &q);
        let r = mle(&z, &q, &input, &k).unwrap();
        assert!((r.theta_hat - 1.7).abs() < 1e-10);
    }

    #[test]
    fn error_identity() {
        let k = kernel(0.7);
        let n = k.grid.n_nodes();
        let q: Vec<f64> = (0..n).map(|i| (0.05 * i as f64).cos()).collect();
        let noise: Vec<f64> = (0..n)
            .map(|i| 0.01 * ((i * 7919) % 13) as f64 - 0.06)
            .collect();
        let input = InputSignal::constant(0.5, &k).unwrap();
        let mut z = noiseless(&k, 1.0, &input.v, &q);
        for i in 1..n {
            z[i] += noise[..i].iter().sum::<f64>();
        }
        let m = crate::process::extract_m(&z, &q, &input, 1.0, &k).unwrap();
        let r = mle(&z, &q, &input, &k).unwrap();
        let e = estimation_error(&q, &m, &k).unwrap();
        assert!((r.theta_hat - 1.0 - e).abs() < 1e-10);
    }

    #[test]
    fn fisher_values() {
        assert_eq!(asymptotic_fisher(1.0).unwrap(), 1.5);
        assert_eq!(asymptotic_fisher(2.0).unwrap(), 0.5);
        assert!(asymptotic_fisher(0.0).is_err());
        let mut last = f64::INFINITY;
        for i in 0..100 {
            let f = asymptotic_fisher(1.0 + i as f64).unwrap();
            assert!(f < last);
            last = f;
        }
    }

    #[test]
    fn variance_targets() {
        let h7 = HurstParam::new(0.7).unwrap();
        let h3 = HurstParam::new(0.3).unwrap();
        assert_eq!(
            theoretical_variance(h7, 1.0, 1.0, Regime::Constant).unwrap(),
            2.0
        );
        let c = theoretical_variance(h3, 1.0, 1.0, Regime::Constant).unwrap();
        assert!((c - 2.0 / 3.0).abs() < 1e-15);
        let o = theoretical_variance(h7, 1.0, 1.0, Regime::Optimal).unwrap();
        assert!((o - 2.0 / 3.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn optimal_beats_long_memory_constant(theta in 0.01f64..50.0) {
            let h = HurstParam::new(0.7).unwrap();
            let o = theoretical_variance(h, theta, 1.0, Regime::Optimal).unwrap();
            let c = theoretical_variance(h, theta, 1.0, Regime::Constant).unwrap();
            prop_assert!(o < c);
        }

        #[test]
        fn scale_equivariance(c in 0.1f64..10.0, seed in 0u64..1000) {
            let k = kernel(0.7);
            let n = k.grid.n_nodes();
            let q: Vec<f64> = (0..n).map(|i| ((i as u64 * 31 + seed) % 17) as f64 / 17.0 - 0.3).collect();
            let z: Vec<f64> = (0..n).map(|i| ((i as u64 * 7 + seed) % 11) as f64 / 11.0).collect();
            let input = InputSignal::constant(1.0, &k).unwrap();
            let a = mle(&z, &q, &input, &k).unwrap();
            let scaled = InputSignal { v: input.v.iter().map(|v| v * c).collect(), ..input.clone() };
            let zc: Vec<f64> = z.iter().map(|x| x * c).collect();
            let qc: Vec<f64> = q.iter().map(|x| x * c).collect();
            let b = mle(&zc, &qc, &scaled, &k).unwrap();
            prop_assert!((a.theta_hat - b.theta_hat).abs() <= 1e-10 * (1.0 + a.theta_hat.abs()));
        }
    }
}
