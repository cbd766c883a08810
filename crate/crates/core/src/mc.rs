//! Monte Carlo harness: replicate simulate → transform → estimate and
//! summarize the distribution of `√T(ϑ̂ − ϑ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::design::{fisher_i1, fisher_i2, optimal_u, optimal_v};
use crate::error::{Error, Result};
use crate::estimator::{mle, theoretical_variance, Regime};
use crate::kernel::KernelBundle;
use crate::mfbm::{split_seed, HurstParam, NoiseSampler};
use crate::numerics::{CompensatedSum, TimeGrid};
use crate::process::{InputKind, InputSignal, PathBundle, QForm};

/// Input used by every replication of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSpec {
    Zero,
    Constant { alpha: f64 },
    Optimal,
    Tabulated { u: Vec<f64> },
}

impl InputSpec {
    pub fn regime(&self) -> Regime {
        match self {
            InputSpec::Optimal => Regime::Optimal,
            _ => Regime::Constant,
        }
    }

    pub fn alpha(&self) -> f64 {
        match self {
            InputSpec::Constant { alpha } => *alpha,
            _ => 0.0,
        }
    }

    /// Materialize on a kernel grid.
    pub fn build(&self, kernel: &mut KernelBundle) -> Result<InputSignal> {
        match self {
            InputSpec::Zero => Ok(InputSignal::zero(&kernel.grid)),
            InputSpec::Constant { alpha } => InputSignal::constant(*alpha, kernel),
            InputSpec::Optimal => {
                let v = optimal_v(kernel);
                optimal_u(kernel, &v)
            }
            InputSpec::Tabulated { u } => {
                InputSignal::from_u(InputKind::Tabulated, u.clone(), kernel)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub hurst: f64,
    pub theta: f64,
    pub input: InputSpec,
    pub horizon: f64,
    pub n_steps: usize,
    pub n_reps: usize,
    pub seed: u64,
    #[serde(default)]
    pub q_form: QForm,
}

impl McConfig {
    pub fn validate(&self) -> Result<(HurstParam, TimeGrid)> {
        let h = HurstParam::new(self.hurst)?;
        if !(self.theta > 0.0) || !self.theta.is_finite() {
            return Err(Error::Domain(format!(
                "theta must be > 0, got {}",
                self.theta
            )));
        }
        if self.n_reps < 2 {
            return Err(Error::Domain(format!(
                "reps must be >= 2, got {}",
                self.n_reps
            )));
        }
        let grid = TimeGrid::new(self.horizon, self.n_steps)?;
        if let InputSpec::Tabulated { u } = &self.input {
            crate::error::check_len("tabulated input", grid.n_nodes(), u.len())?;
        }
        Ok((h, grid))
    }
}

/// One replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    /// `NaN` for a degenerate replication.
    pub theta_hat: f64,
    pub sqrt_t_error: f64,
    pub denominator: f64,
}

impl Replication {
    pub fn is_degenerate(&self) -> bool {
        !self.theta_hat.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub config: McConfig,
    pub version: String,
    pub n_effective: usize,
    pub n_degenerate: usize,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `variance` under normality, `s² √(2/(n−1))`.
    pub variance_se: f64,
    pub mean_squared_error: f64,
    pub median_abs_error: f64,
    pub target_variance: f64,
    pub normality_statistic: f64,
    pub normality_threshold: f64,
    pub normality_pass: bool,
    /// `(I₁ + I₂ at v_opt) · E(ϑ̂ − ϑ)²`.
    pub efficiency_ratio: Option<f64>,
    pub input_energy: f64,
    #[serde(skip)]
    pub replications: Vec<Replication>,
}

/// Build the kernel and run the study.
pub fn run_study(config: &McConfig) -> Result<McSummary> {
    let (h, grid) = config.validate()?;
    let mut kernel = KernelBundle::build(&grid, h)?;
    run_study_with_kernel(config, &mut kernel)
}

/// Run the study on a prebuilt kernel (e.g. loaded from the cache).
pub fn run_study_with_kernel(config: &McConfig, kernel: &mut KernelBundle) -> Result<McSummary> {
    let (h, grid) = config.validate()?;
    if kernel.grid != grid || kernel.hurst != h {
        return Err(Error::Domain("kernel does not match the study grid".into()));
    }
    let input = config.input.build(kernel)?;
    let sampler = NoiseSampler::new(&grid, h)?;
    let kernel_ref: &KernelBundle = kernel;
    let sqrt_t = config.horizon.sqrt();
    let reps: Vec<Replication> = (0..config.n_reps)
        .into_par_iter()
        .map(|rep| -> Result<Replication> {
            let seed = split_seed(config.seed, rep as u64);
            let noise = sampler.sample(seed);
            let path =
                PathBundle::simulate(&noise, config.theta, &input, kernel_ref, config.q_form)?;
            Ok(match mle(&path.z, &path.q, &input, kernel_ref) {
                Ok(r) => Replication {
                    rep,
                    seed,
                    theta_hat: r.theta_hat,
                    sqrt_t_error: sqrt_t * (r.theta_hat - config.theta),
                    denominator: r.denominator,
                },
                Err(Error::DegeneratePath { denominator, .. }) => Replication {
                    rep,
                    seed,
                    theta_hat: f64::NAN,
                    sqrt_t_error: f64::NAN,
                    denominator,
                },
                Err(e) => return Err(e),
            })
        })
        .collect::<Result<_>>()?;

    let n_degenerate = reps.iter().filter(|r| r.is_degenerate()).count();
    if n_degenerate * 20 > config.n_reps {
        return Err(Error::StudyInvalid {
            degenerate: n_degenerate,
            total: config.n_reps,
        });
    }
    let samples: Vec<f64> = reps
        .iter()
        .filter(|r| !r.is_degenerate())
        .map(|r| r.sqrt_t_error)
        .collect();
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: n,
        });
    }
    let (mean, variance) = mean_variance(&samples);
    let mut mse = CompensatedSum::default();
    for s in &samples {
        mse.add(s * s / config.horizon);
    }
    let mean_squared_error = mse.value() / n as f64;
    let mut abs: Vec<f64> = samples.iter().map(|s| (s / sqrt_t).abs()).collect();
    abs.sort_by(f64::total_cmp);
    let median_abs_error = if n % 2 == 1 {
        abs[n / 2]
    } else {
        0.5 * (abs[n / 2 - 1] + abs[n / 2])
    };
    let target_variance =
        theoretical_variance(h, config.theta, config.input.alpha(), config.input.regime())?;
    let (normality_statistic, normality_threshold) = if n >= 50 {
        (
            normality_check(&samples, target_variance)?,
            normality_threshold(n),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let efficiency = if config.input.regime() == Regime::Optimal {
        Some(efficiency_ratio(
            mean_squared_error,
            config.theta,
            kernel_ref,
        )?)
    } else {
        None
    };
    Ok(McSummary {
        config: config.clone(),
        version: crate::VERSION.to_string(),
        n_effective: n,
        n_degenerate,
        mean,
        variance,
        variance_se: variance * (2.0 / (n as f64 - 1.0)).sqrt(),
        mean_squared_error,
        median_abs_error,
        target_variance,
        normality_statistic,
        normality_threshold,
        normality_pass: normality_statistic <= normality_threshold,
        efficiency_ratio: efficiency,
        input_energy: input.energy(kernel_ref)?,
        replications: reps,
    })
}

fn mean_variance(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mut s = CompensatedSum::default();
    for x in samples {
        s.add(*x);
    }
    let mean = s.value() / n;
    let mut ss = CompensatedSum::default();
    for x in samples {
        ss.add((x - mean) * (x - mean));
    }
    (mean, ss.value() / (n - 1.0))
}

/// Rejection threshold `1.5 · 1.36/√n` for [`normality_check`].
pub fn normality_threshold(n: usize) -> f64 {
    1.5 * 1.36 / (n as f64).sqrt()
}

/// Sup distance between the empirical CDF and `N(0, target_variance)`.
pub fn normality_check(samples: &[f64], target_variance: f64) -> Result<f64> {
    if samples.len() < 50 {
        return Err(Error::TooFewSamples {
            required: 50,
            got: samples.len(),
        });
    }
    if !(target_variance > 0.0) {
        return Err(Error::Domain(format!(
            "target variance must be > 0, got {target_variance}"
        )));
    }
    let normal =
        Normal::new(0.0, target_variance.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        // Ties share one jump of the empirical CDF.
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = normal.cdf(x);
        d = d
            .max((f - i as f64 / n).abs())
            .max((j as f64 / n - f).abs());
        i = j;
    }
    Ok(d)
}

/// `(I₁ + I₂ at v_opt) · MSE`; tends to 1 for an efficient estimator.
pub fn efficiency_ratio(mean_squared_error: f64, theta: f64, kernel: &KernelBundle) -> Result<f64> {
    let info = fisher_i1(theta, kernel)? + fisher_i2(&optimal_v(kernel), theta, kernel)?;
    Ok(info * mean_squared_error)
}

/// Monte Carlo estimate of `E exp(−(μ/T) ∫ Q² d<M>)` with its standard error,
/// from the per-replication denominators of a study.
pub fn laplace_estimate(summary: &McSummary, mu: f64) -> Result<(f64, f64)> {
    let vals: Vec<f64> = summary
        .replications
        .iter()
        .filter(|r| !r.is_degenerate())
        .map(|r| (-mu / summary.config.horizon * r.denominator).exp())
        .collect();
    if vals.len() < 2 {
        return Err(Error::TooFewSamples {
            required: 2,
            got: vals.len(),
        });
    }
    let (mean, var) = mean_variance(&vals);
    Ok((mean, (var / vals.len() as f64).sqrt()))
}

impl McSummary {
    /// Per-replication CSV: `rep,seed,theta_hat,sqrtT_error,denom`.
    pub fn replications_csv(&self) -> String {
        let mut out = String::from("rep,seed,theta_hat,sqrtT_error,denom\n");
        for r in &self.replications {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.rep, r.seed, r.theta_hat, r.sqrt_t_error, r.denominator
            ));
        }
        out
    }
}
