use std::collections::HashMap;
use std::error::Error;
use std::path::Path;

use mfou::design::fisher_breakdown;
use mfou::estimator::mle;
use mfou::kernel::default_cache_dir;
use mfou::laplace::{
    constant_drift_laplace, constant_laplace_log_limit, gamma_z_laplace, log_laplace_rate,
    log_laplace_rate_limit, optimal_laplace_log_limit, psi_growth_rate, psi_laplace,
};
use mfou::mc::{run_study_with_kernel, InputSpec, McConfig};
use mfou::process::{compute_q_derivative, transform_z};
use mfou::{HurstParam, InputSignal, KernelBundle, NoiseSampler, PathBundle, QForm, TimeGrid};

use crate::manifest::{Run, RunManifest};
use crate::table::Table;
use crate::{Command, Common, EstimateArgs, InputArg, LaplaceArgs, PlotArgs, RerunArgs, Transform};

type CmdResult = Result<(), Box<dyn Error>>;

const MU_SWEEP: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
const A_SWEEP: [f64; 5] = [-0.2, -0.1, 0.1, 0.2, 0.5];
const HORIZON_FRACTIONS: [f64; 4] = [0.125, 0.25, 0.5, 1.0];

pub fn dispatch(command: Command) -> CmdResult {
    let params = serde_json::to_value(&command)?;
    match &command {
        Command::Kernel(c) => kernel(c, params),
        Command::Simulate(c) => simulate(c, params),
        Command::Estimate(a) => estimate(a, params),
        Command::DesignInput(c) => design_input(c, params),
        Command::Fisher(c) => fisher(c, params),
        Command::Laplace(a) => laplace(a, params),
        Command::McStudy(c) => mc_study(c, params),
        Command::Plot(a) => plot(a, params),
        Command::Rerun(a) => rerun(a),
    }
}

fn setup(c: &Common) -> mfou::Result<(HurstParam, TimeGrid)> {
    Ok((
        HurstParam::new(c.hurst)?,
        TimeGrid::new(c.horizon, c.steps)?,
    ))
}

fn load_kernel(grid: &TimeGrid, h: HurstParam, run: &mut Run) -> mfou::Result<KernelBundle> {
    let kernel = KernelBundle::load_or_build(grid, h, &default_cache_dir())?;
    run.set_kernel_hash(KernelBundle::cache_key(grid, h));
    Ok(kernel)
}

fn input_spec(c: &Common, default: InputArg, grid: &TimeGrid) -> Result<InputSpec, Box<dyn Error>> {
    Ok(match c.input.clone().unwrap_or(default) {
        InputArg::Zero => InputSpec::Zero,
        InputArg::Constant => InputSpec::Constant { alpha: c.alpha },
        InputArg::Optimal => InputSpec::Optimal,
        InputArg::File(path) => {
            let table = Table::read(&path)?;
            let u = table
                .column("u")
                .ok_or_else(|| format!("{}: no numeric column 'u'", path.display()))?;
            if u.len() != grid.n_nodes() {
                return Err(format!(
                    "{}: input has {} rows but the grid has {} nodes",
                    path.display(),
                    u.len(),
                    grid.n_nodes()
                )
                .into());
            }
            InputSpec::Tabulated { u }
        }
    })
}

fn input_label(spec: &InputSpec) -> &'static str {
    match spec {
        InputSpec::Zero => "zero",
        InputSpec::Constant { .. } => "constant",
        InputSpec::Optimal => "optimal",
        InputSpec::Tabulated { .. } => "tabulated",
    }
}

fn kernel(c: &Common, params: serde_json::Value) -> CmdResult {
    let (h, grid) = setup(c)?;
    let mut run = Run::start("kernel", params, c.seed, &c.out, c.format)?;
    let k = load_kernel(&grid, h, &mut run)?;
    let mut table = Table::new(&["t", "m", "m_prime", "psi", "g_diag"]);
    for j in 0..grid.n_nodes() {
        table.push(vec![
            grid.node(j).into(),
            k.m[j].into(),
            k.m_prime[j].into(),
            k.psi_diag[j].into(),
            k.diagonal_g(j).unwrap_or(f64::NAN).into(),
        ]);
    }
    run.table("kernel", &table)?;
    println!(
        "kernel {}: H={} T={} n={} <M>_T={} cache={}",
        KernelBundle::cache_key(&grid, h),
        h.value(),
        grid.horizon(),
        grid.n_steps(),
        k.m[grid.n_steps()],
        KernelBundle::cache_path(&default_cache_dir(), &grid, h).display()
    );
    run.finish()?;
    Ok(())
}

fn simulate(c: &Common, params: serde_json::Value) -> CmdResult {
    let (h, grid) = setup(c)?;
    let spec = input_spec(c, InputArg::Constant, &grid)?;
    let reps = c.reps.unwrap_or(1);
    let mut run = Run::start("simulate", params, c.seed, &c.out, c.format)?;
    let mut k = load_kernel(&grid, h, &mut run)?;
    let input = spec.build(&mut k)?;
    let sampler = NoiseSampler::new(&grid, h)?;
    for rep in 0..reps {
        let noise = sampler.sample_indexed(c.seed, rep as u64);
        let path = PathBundle::simulate(&noise, c.theta, &input, &k, QForm::default())?;
        let mut table = Table::new(&["t", "xi", "X", "Z", "Q", "M"]);
        for j in 0..grid.n_nodes() {
            table.push(vec![
                grid.node(j).into(),
                path.xi[j].into(),
                path.x[j].into(),
                path.z[j].into(),
                path.q[j].into(),
                path.m[j].into(),
            ]);
        }
        let written = run.table(&format!("paths_{rep:04}"), &table)?;
        println!("{}", written.display());
    }
    run.finish()?;
    Ok(())
}

/// Recover the grid from a `t` column written by `simulate`.
fn grid_from_nodes(t: &[f64], file: &Path) -> Result<TimeGrid, Box<dyn Error>> {
    let bad = |why: &str| format!("{}: {why}", file.display());
    if t.len() < 2 || t[0] != 0.0 {
        return Err(bad("column t must start at 0 and have at least two rows").into());
    }
    let grid = TimeGrid::new(t[t.len() - 1], t.len() - 1)?;
    let tol = 1e-9 * grid.horizon();
    if t.iter()
        .enumerate()
        .any(|(j, &s)| (s - grid.node(j)).abs() > tol)
    {
        return Err(bad("column t is not a uniform grid").into());
    }
    Ok(grid)
}

fn estimate(a: &EstimateArgs, params: serde_json::Value) -> CmdResult {
    let c = &a.common;
    let h = HurstParam::new(c.hurst)?;
    let mut run = Run::start("estimate", params, c.seed, &c.out, c.format)?;
    let mut kernels: HashMap<(u64, usize), (KernelBundle, InputSignal, InputSpec)> = HashMap::new();
    let mut table = Table::new(&[
        "seed",
        "H",
        "theta",
        "alpha",
        "regime",
        "T",
        "n",
        "theta_hat",
    ]);
    for file in &a.paths {
        let data = Table::read(file)?;
        let t = data
            .column("t")
            .ok_or_else(|| format!("{}: no column t", file.display()))?;
        let x = data
            .column("X")
            .ok_or_else(|| format!("{}: no column X", file.display()))?;
        let grid = grid_from_nodes(&t, file)?;
        let key = (grid.horizon().to_bits(), grid.n_steps());
        if let std::collections::hash_map::Entry::Vacant(e) = kernels.entry(key) {
            let mut k = load_kernel(&grid, h, &mut run)?;
            let spec = input_spec(c, InputArg::Constant, &grid)?;
            let input = spec.build(&mut k)?;
            e.insert((k, input, spec));
        }
        let (k, input, spec) = &kernels[&key];
        let z = transform_z(&x, k)?;
        let q = compute_q_derivative(&x, k)?;
        let r = mle(&z, &q, input, k)?;
        println!("{}: theta_hat = {}", file.display(), r.theta_hat);
        table.push(vec![
            c.seed.into(),
            c.hurst.into(),
            c.theta.into(),
            spec.alpha().into(),
            input_label(spec).into(),
            grid.horizon().into(),
            grid.n_steps().into(),
            r.theta_hat.into(),
        ]);
    }
    run.table("results", &table)?;
    run.finish()?;
    Ok(())
}

fn design_input(c: &Common, params: serde_json::Value) -> CmdResult {
    let (h, grid) = setup(c)?;
    let spec = input_spec(c, InputArg::Optimal, &grid)?;
    let mut run = Run::start("design-input", params, c.seed, &c.out, c.format)?;
    let mut k = load_kernel(&grid, h, &mut run)?;
    let input = spec.build(&mut k)?;
    let u = input.u()?;
    let mut table = Table::new(&["t", "u", "v"]);
    for (j, (u, v)) in u.iter().zip(&input.v).enumerate() {
        table.push(vec![grid.node(j).into(), (*u).into(), (*v).into()]);
    }
    let written = run.table("design", &table)?;
    println!(
        "{}: {} input, energy (1/T)∫v²d<M> = {}",
        written.display(),
        input_label(&spec),
        input.energy(&k)?
    );
    run.finish()?;
    Ok(())
}

fn fisher(c: &Common, params: serde_json::Value) -> CmdResult {
    let (h, grid) = setup(c)?;
    let spec = input_spec(c, InputArg::Optimal, &grid)?;
    let mut run = Run::start("fisher", params, c.seed, &c.out, c.format)?;
    let mut k = load_kernel(&grid, h, &mut run)?;
    let input = spec.build(&mut k)?;
    let f = fisher_breakdown(&input, c.theta, &k)?;
    let mut table = Table::new(&[
        "theta",
        "H",
        "T",
        "n",
        "input",
        "I1",
        "I2",
        "total",
        "total_over_T",
        "asymptotic",
    ]);
    table.push(vec![
        c.theta.into(),
        c.hurst.into(),
        grid.horizon().into(),
        grid.n_steps().into(),
        input_label(&spec).into(),
        f.i1.into(),
        f.i2.into(),
        f.total.into(),
        (f.total / f.horizon).into(),
        f.asymptotic.into(),
    ]);
    run.table("fisher", &table)?;
    println!("I1          = {}", f.i1);
    println!("I2          = {}", f.i2);
    println!("(I1+I2)/T   = {}", f.total / f.horizon);
    println!("I(theta)    = {}", f.asymptotic);
    run.finish()?;
    Ok(())
}

fn laplace(a: &LaplaceArgs, params: serde_json::Value) -> CmdResult {
    let c = &a.common;
    let (h, _) = setup(c)?;
    let mut run = Run::start("laplace", params, c.seed, &c.out, c.format)?;
    let mut table = Table::new(&["theta", "mu_or_a", "T", "H", "value", "target", "rel_err"]);
    let dt = c.horizon / c.steps as f64;
    for frac in HORIZON_FRACTIONS {
        let steps = ((c.steps as f64 * frac).round() as usize).max(8);
        let horizon = dt * steps as f64;
        let grid = TimeGrid::new(horizon, steps)?;
        let k = KernelBundle::load_or_build(&grid, h, &default_cache_dir())?;
        if frac == 1.0 {
            run.set_kernel_hash(KernelBundle::cache_key(&grid, h));
        }
        let v_opt = mfou::design::optimal_v(&k);
        let params: Vec<f64> = match a.transform {
            Transform::Psi => A_SWEEP
                .into_iter()
                .filter(|&x| x > -0.5 * c.theta * c.theta)
                .collect(),
            _ => MU_SWEEP.to_vec(),
        };
        for p in params {
            let (value, target) = match a.transform {
                Transform::Optimal => (
                    gamma_z_laplace(p, c.theta, &v_opt, &k)?.log_value(),
                    optimal_laplace_log_limit(p, c.theta)?,
                ),
                Transform::Constant => (
                    constant_drift_laplace(p, c.theta, c.alpha, &k)?.log_value(),
                    constant_laplace_log_limit(p, c.theta, c.alpha, h.is_long_memory())?,
                ),
                Transform::Rate => (
                    log_laplace_rate(p, c.theta, &v_opt, &k)?.rate(),
                    log_laplace_rate_limit(p, c.theta)?,
                ),
                Transform::Psi => (
                    psi_laplace(p, c.theta, &k)?.log_value,
                    horizon * (0.5 * c.theta - psi_growth_rate(p, c.theta)?),
                ),
            };
            let rel_err = (value - target).abs() / target.abs();
            table.push(vec![
                c.theta.into(),
                p.into(),
                horizon.into(),
                c.hurst.into(),
                value.into(),
                target.into(),
                rel_err.into(),
            ]);
        }
    }
    let written = run.table("laplace", &table)?;
    println!("{}", written.display());
    run.finish()?;
    Ok(())
}

fn mc_study(c: &Common, params: serde_json::Value) -> CmdResult {
    let (h, grid) = setup(c)?;
    let config = McConfig {
        hurst: c.hurst,
        theta: c.theta,
        input: input_spec(c, InputArg::Constant, &grid)?,
        horizon: c.horizon,
        n_steps: c.steps,
        n_reps: c.reps.unwrap_or(400),
        seed: c.seed,
        q_form: QForm::default(),
    };
    config.validate()?;
    let mut run = Run::start("mc-study", params, c.seed, &c.out, c.format)?;
    let mut k = load_kernel(&grid, h, &mut run)?;
    let summary = run_study_with_kernel(&config, &mut k)?;
    let mut table = Table::new(&["rep", "seed", "theta_hat", "sqrtT_error", "denom"]);
    for r in &summary.replications {
        table.push(vec![
            r.rep.into(),
            r.seed.into(),
            r.theta_hat.into(),
            r.sqrt_t_error.into(),
            r.denominator.into(),
        ]);
    }
    run.table("replications", &table)?;
    let written = run.json("summary.json", serde_json::to_value(&summary)?)?;
    println!(
        "{}: variance {} (target {}), KS {} vs {} -> {}",
        written.display(),
        summary.variance,
        summary.target_variance,
        summary.normality_statistic,
        summary.normality_threshold,
        if summary.normality_pass {
            "normal"
        } else {
            "not normal"
        }
    );
    run.finish()?;
    Ok(())
}

fn plot(a: &PlotArgs, params: serde_json::Value) -> CmdResult {
    let c = &a.common;
    let data = Table::read(&a.file)?;
    let stem = a
        .file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "plot".into());
    let svg = if data.columns.iter().any(|col| col == "sqrtT_error") && a.y.is_empty() {
        let errors = data.column("sqrtT_error").unwrap_or_default();
        let spec = input_spec(c, InputArg::Constant, &TimeGrid::new(c.horizon, c.steps)?)?;
        let target = mfou::estimator::theoretical_variance(
            HurstParam::new(c.hurst)?,
            c.theta,
            spec.alpha(),
            spec.regime(),
        )?;
        crate::plot::histogram(&stem, &errors, target)?
    } else {
        let x = a.x.clone().unwrap_or_else(|| data.columns[0].clone());
        let ys: Vec<String> = if a.y.is_empty() {
            data.columns
                .iter()
                .filter(|col| **col != x && data.column(col).is_some())
                .cloned()
                .collect()
        } else {
            a.y.clone()
        };
        crate::plot::lines(&stem, &data, &x, &ys)?
    };
    let mut run = Run::start("plot", params, c.seed, &c.out, c.format)?;
    let written = run.raw(&format!("{stem}.svg"), &svg)?;
    println!("{}", written.display());
    run.finish()?;
    Ok(())
}

fn rerun(a: &RerunArgs) -> CmdResult {
    let manifest = RunManifest::read(&a.manifest)?;
    let mut command: Command = serde_json::from_value(manifest.params)?;
    match command.common_mut() {
        Some(common) => common.out = a.out.clone(),
        None => return Err("manifest records a rerun; refusing to recurse".into()),
    }
    dispatch(command)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_nodes_give_grid() {
        let t: Vec<f64> = (0..=10).map(|j| j as f64 * 0.3).collect();
        let g = grid_from_nodes(&t, Path::new("x")).unwrap();
        assert_eq!(g.n_steps(), 10);
        let mut bad = t.clone();
        bad[4] += 0.01;
        assert!(grid_from_nodes(&bad, Path::new("x")).is_err());
    }
}
