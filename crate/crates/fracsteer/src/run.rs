use std::path::Path;
use std::time::Instant;

use fracsteer_core::control::lambda_sweep;
use fracsteer_core::noise::{
    fbm_covariance, fbm_integral, fbm_paths_cholesky, fbm_paths_volterra, kernel_covariance, wiener_paths, FbmMethod,
    FbmParams, NoiseGenerator, QStructure,
};
use fracsteer_core::seed::{self, tag};
use fracsteer_core::solver::{ledger_evaluate, simulate, IntervalKind};
use nalgebra::DMatrix;
use rand::Rng;

use crate::config::{serialize_config, RunConfig};
use crate::error::CliError;
use crate::output::{self, num};
use crate::report::{ExperimentReport, MetricTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    FbmValidate,
    Solve,
    Ledger,
    ControlSweep,
    All,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::FbmValidate => "fbm-validate",
            Command::Solve => "solve",
            Command::Ledger => "ledger",
            Command::ControlSweep => "control-sweep",
            Command::All => "all",
        }
    }
}

/// Runs `cmd`, writing CSV files and `report.json` into `out`.
pub fn run(cmd: Command, config: &RunConfig, out: &Path) -> Result<ExperimentReport, CliError> {
    let start = Instant::now();
    std::fs::create_dir_all(out)?;
    let mut report = ExperimentReport::new(cmd.name(), config.seed, serialize_config(config));
    match cmd {
        Command::FbmValidate => fbm_validate(config, out, &mut report)?,
        Command::Solve => solve(config, out, &mut report)?,
        Command::Ledger => ledger(config, out, &mut report)?,
        Command::ControlSweep => control_sweep(config, out, &mut report)?,
        Command::All => {
            fbm_validate(config, out, &mut report)?;
            solve(config, out, &mut report)?;
            ledger(config, out, &mut report)?;
            control_sweep(config, out, &mut report)?;
        }
    }
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report.write_json(&out.join("report.json"))?;
    Ok(report)
}

fn mean_se(x: impl ExactSizeIterator<Item = f64> + Clone) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.clone().sum::<f64>() / n;
    let v = x.map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn column_products(p: &DMatrix<f64>, i: usize, j: usize) -> (f64, f64) {
    mean_se((0..p.ncols()).map(|m| p[(i, m)] * p[(j, m)]))
}

fn fbm_validate(c: &RunConfig, out: &Path, report: &mut ExperimentReport) -> Result<(), CliError> {
    let h = c.heat.hurst;
    let paths = c.fbm_paths;

    let params = FbmParams::new(h)?;
    let points = [0.25, 0.5, 1.0, 2.0];
    let mut worst: f64 = 0.0;
    for (i, &t) in points.iter().enumerate() {
        for &s in &points[..=i] {
            let got = kernel_covariance(&params, t, s)?;
            let exact = fbm_covariance(h, t, s);
            worst = worst.max(((got - exact) / exact).abs());
        }
    }
    report.check(
        "fbm kernel covariance",
        worst < 1e-3,
        format!("max relative error {worst:.2e} over 10 pairs (tolerance 1e-3)"),
    );

    let grid: Vec<f64> = (1..=8).map(|k| k as f64 / 8.0).collect();
    let chol = fbm_paths_cholesky(h, &grid, paths, seed::mix(c.seed, 0, tag::TEST))?;
    let (volt, _) = fbm_paths_volterra(h, &grid, paths, seed::mix(c.seed, 1, tag::TEST))?;
    let mut table = MetricTable::new("fbm_covariance", &["t", "s", "exact", "cholesky", "volterra", "z"]);
    let mut max_z: f64 = 0.0;
    for i in 0..8 {
        for j in i..8 {
            let (a, sa) = column_products(&chol, i, j);
            let (b, sb) = column_products(&volt, i, j);
            let z = (a - b).abs() / (sa * sa + sb * sb).sqrt();
            max_z = max_z.max(z);
            table
                .rows
                .push(vec![grid[j], grid[i], fbm_covariance(h, grid[j], grid[i]), a, b, z]);
        }
    }
    report.tables.push(table);
    report.check(
        "fbm generators agree",
        max_z < 3.0,
        format!("max |Cholesky - Volterra| = {max_z:.2} SE over 36 covariances ({paths} paths each)"),
    );

    let (var1, se1) = mean_se((0..chol.ncols()).map(|m| chol[(7, m)].powi(2)));
    report.check(
        "fbm unit variance",
        (var1 - 1.0).abs() < 3.0 * se1,
        format!("E[B(1)^2] = {var1:.4} ± {se1:.4}"),
    );

    let steps = 16;
    let wgrid: Vec<f64> = (0..=steps).map(|k| k as f64 / steps as f64).collect();
    let w = wiener_paths(&mut seed::rng(c.seed, 2, tag::TEST), &wgrid, paths);
    let (wv, wse) = mean_se((0..paths).map(|m| (w[(5, m)] - w[(4, m)]).powi(2)));
    let dt = 1.0 / steps as f64;
    report.check(
        "wiener increment variance",
        (wv - dt).abs() < 3.0 * wse,
        format!("E[dW^2] = {wv:.5} ± {wse:.5} (dt = {dt})"),
    );

    let gen = NoiseGenerator::new(wgrid, 1, 1, h, FbmMethod::Cholesky)?;
    let unit = QStructure::new(vec![1.0])?;
    let reals: Vec<_> = (0..paths as u64).map(|r| gen.realize(c.seed, r)).collect();
    let mut rng = seed::rng(c.seed, 3, tag::TEST);
    let mut ok = true;
    let mut worst_margin = f64::INFINITY;
    for _ in 0..5 {
        let psi = DMatrix::from_fn(steps, 1, |_, _| rng.random_range(-2.0..2.0));
        let sq: Vec<f64> = reals
            .iter()
            .map(|r| fbm_integral(&psi, r, &unit).map(|v| v[0] * v[0]))
            .collect::<Result<_, _>>()?;
        let (m, se) = mean_se(sq.iter().copied());
        let l2: f64 = psi.iter().map(|v| v * v * dt).sum();
        let bound = 2.0 * h * l2;
        ok &= m <= bound + 3.0 * se;
        worst_margin = worst_margin.min((bound - m) / bound);
    }
    report.check(
        "fbm second-moment bound",
        ok,
        format!("5 step integrands on [0,1]; smallest relative margin {worst_margin:.3}"),
    );

    let p = c.heat.problem()?;
    let horizon = p.partition.horizon();
    let n = (horizon / c.heat.dt).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|k| k as f64 * c.heat.dt).collect();
    let gen = NoiseGenerator::new(grid, c.heat.modes, c.heat.modes, h, FbmMethod::Cholesky)?;
    let real = gen.realize(c.seed, 0);
    output::write_csv(
        &out.join("noise_paths.csv"),
        &output::NOISE_HEADER,
        output::noise_rows(&real, &p.wiener_q, &p.fbm_q),
    )?;
    Ok(())
}

fn solve(c: &RunConfig, out: &Path, report: &mut ExperimentReport) -> Result<(), CliError> {
    let p = c.heat.problem()?;
    let tr = simulate(&p, c.seed)?;
    let finite = tr.path.raw().iter().all(|v| v.is_finite());
    report.check("solution finite", finite, format!("{} grid values", tr.path.raw().len()));
    report.check(
        "embedding bound at partition points",
        tr.embedding_holds,
        format!("{} partition points", p.partition.points().len()),
    );
    let mut table = MetricTable::new("picard", &["interval_index", "flow", "iterations", "last_residual"]);
    for r in &tr.reports {
        table.rows.push(vec![
            r.index as f64,
            if r.kind == IntervalKind::Flow { 1.0 } else { 0.0 },
            r.iterations as f64,
            r.residuals.last().copied().unwrap_or(0.0),
        ]);
    }
    report.tables.push(table);
    let z = tr.terminal();
    report.note(format!("solve: |z(T)| = {}", num(z.norm())));
    output::write_csv(&out.join("trajectory.csv"), &output::TRAJECTORY_HEADER, output::trajectory_rows(&tr))?;
    Ok(())
}

fn ledger(c: &RunConfig, out: &Path, report: &mut ExperimentReport) -> Result<(), CliError> {
    let p = c.heat.problem()?;
    let l = ledger_evaluate(&p, &p.bounds()?, c.radius)?;
    let mut rows: Vec<(String, f64)> = vec![("eta0".into(), l.eta0)];
    rows.extend(l.eta.iter().enumerate().map(|(i, v)| (format!("eta{}", i + 1), *v)));
    rows.push(("l_r".into(), l.l_r));
    rows.push(("kappa0".into(), l.kappa0));
    rows.extend(l.kappa.iter().enumerate().map(|(i, v)| (format!("kappa{}", i + 1), *v)));
    rows.push(("l_hr".into(), l.l_hr));
    for (k, v) in [
        ("lambda1", l.lambda1),
        ("lambda2", l.lambda2),
        ("lambda3", l.lambda3),
        ("growth_max", l.growth_max),
        ("r", l.r),
        ("varpi", l.varpi),
        ("m1", l.m1),
        ("m2", l.m2),
        ("phi_norm", l.phi_norm),
    ] {
        rows.push((k.into(), v));
    }
    for (k, v) in &rows {
        report.note(format!("ledger: {k} = {}", num(*v)));
    }
    let flag = |b: bool| if b { "holds" } else { "does not hold" };
    report.note(format!("ledger: flag L_R < 1 {}", flag(l.contraction_holds())));
    report.note(format!("ledger: flag L_HR < 1 {}", flag(l.l_hr_holds())));
    report.note(format!("ledger: flag growth < r {}", flag(l.growth_holds())));
    let sane = rows.iter().all(|(_, v)| v.is_finite() && *v >= 0.0);
    report.check("ledger finite", sane, format!("{} quantities", rows.len()));
    output::write_csv(
        &out.join("ledger.csv"),
        &output::LEDGER_HEADER,
        rows.into_iter().map(|(k, v)| vec![k, num(v)]),
    )?;
    Ok(())
}

fn control_sweep(c: &RunConfig, out: &Path, report: &mut ExperimentReport) -> Result<(), CliError> {
    let p = c.heat.problem()?;
    let stochastic = p.is_stochastic();
    let reps = if stochastic { c.replicates } else { 1 };
    let target = c.heat.target(c.final_only)?;
    let table = lambda_sweep(&p, &c.heat.actuator(), &target, &c.lambdas, reps, c.seed)?;
    for &i in &table.intervals {
        if stochastic {
            let f = table
                .noise_floor(i)
                .ok_or_else(|| CliError::Usage(format!("interval {i} missing from sweep")))?;
            let floor = match (f.floor_lambda, f.floor_error) {
                (Some(l), Some(e)) => format!("floor {} at lambda {}", num(e), num(l)),
                _ => "no floor reached".into(),
            };
            report.note(format!("control-sweep: interval {i} {floor}"));
            report.check(
                format!("error decreases to floor (interval {i})"),
                f.monotone_to_floor,
                format!("{reps} replicates, {floor}"),
            );
        } else {
            let col = table.error_column(i);
            let shown: Vec<String> = col.iter().map(|v| num(*v)).collect();
            report.check(
                format!("error strictly decreasing (interval {i})"),
                table.strictly_decreasing(i),
                shown.join(" > "),
            );
        }
    }
    let mut mt = MetricTable::new("sweep", &output::SWEEP_HEADER);
    for r in &table.rows {
        mt.rows.push(vec![
            r.lambda,
            r.interval_index as f64,
            r.mean_sq_error,
            r.std_error,
            r.replicates as f64,
        ]);
    }
    report.tables.push(mt);
    output::write_csv(&out.join("sweep.csv"), &output::SWEEP_HEADER, output::sweep_rows(&table))?;
    Ok(())
}
