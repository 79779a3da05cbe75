use std::path::PathBuf;

use anyhow::{bail, Result};
use rayon::prelude::*;
use rcpb_core::experiments::figures::figure3_initial;
use rcpb_core::experiments::output::{convergence_plot, figure3_plot, figure4_plot, PlotSpec, ScenarioDir, Series};
use rcpb_core::experiments::{
    merge_replications, nominal_message_rate, predicted_delay, replicate, run_convergence_study, run_figure3,
    run_figure4, run_interchange_check, run_sweep_with_runs, ComparisonRecord, ConvergenceConfig, Figure4Config,
    Scenario, SweepAxes,
};
use rcpb_core::fluid::{
    equilibrium, integrate, power_of_d_delay, power_of_d_equilibrium, Annotation, FluidParams, FluidSolution,
};
use rcpb_core::io::{describe_params, version, write_header, write_key_values};
use rcpb_core::model::{weighted_norm, OccupancyVector, Regime, SystemParams};
use rcpb_core::sim::output::{write_occupancy, write_summary, write_tokens, write_trajectory};
use rcpb_core::sim::{run_trajectory, SimError, SteadyStateRun};
use serde::Serialize;

use crate::config::{Config, ExperimentSection};
use crate::Preset;

pub struct Context {
    pub config: Config,
    pub seed: u64,
    pub output: PathBuf,
}

impl Context {
    fn experiment(&self, horizon: Option<f64>) -> ExperimentSection {
        let mut exp = self.config.experiment();
        if horizon.is_some() {
            exp.horizon = horizon;
        }
        exp
    }

    fn dir(&self) -> Result<ScenarioDir> {
        Ok(ScenarioDir::create(&self.output)?)
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Keeps successful runs, warning about under-sampled ones.
fn successful(results: Vec<Result<SteadyStateRun, SimError>>, seeds: &[u64]) -> Result<Vec<SteadyStateRun>> {
    let mut ok = Vec::new();
    for (r, seed) in results.into_iter().zip(seeds) {
        match r {
            Ok(r) => ok.push(r),
            Err(e @ SimError::UnderSampled { .. }) => eprintln!("warning: seed {seed} flagged: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    if ok.is_empty() {
        bail!("every replication was under-sampled; increase experiment.horizon");
    }
    Ok(ok)
}

pub fn simulate(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let params = ctx.config.system_params()?;
    let exp = ctx.experiment(horizon);
    let run = exp.run_config(1000.0);
    let seeds = exp.seeds(ctx.seed, 1)?;
    let results = replicate(&params, &run, &seeds);
    let est = merge_replications(&results);
    let runs = successful(results, &seeds)?;

    let dir = ctx.dir()?;
    dir.write_meta(&[
        ("name", exp.name.clone().unwrap_or_else(|| "simulate".into())),
        ("command", "simulate".into()),
        ("version", version()),
        ("seeds", join(&seeds)),
        ("params", describe_params(&params)),
        ("horizon", run.horizon.to_string()),
        ("warmup", run.warmup.to_string()),
        ("levels", run.levels.to_string()),
        ("batches", run.batches.to_string()),
        ("min_samples", run.min_samples.to_string()),
    ])?;
    dir.write_with("summary.csv", |w| write_summary(w, &runs))?;
    for r in &runs {
        dir.write_with(&format!("points/occupancy_seed{}.csv", r.seed), |w| write_occupancy(w, r))?;
        dir.write_with(&format!("points/tokens_seed{}.csv", r.seed), |w| write_tokens(w, r))?;
    }
    if let Some(dt) = exp.sample_interval {
        let initial = exp.initial()?;
        let paths: Vec<_> = seeds
            .par_iter()
            .map(|&s| run_trajectory(&params, &initial, run.horizon, dt, run.levels, s))
            .collect();
        for p in paths {
            let p = p?;
            dir.write_with(&format!("points/trajectory_seed{}.csv", p.seed), |w| write_trajectory(w, &p))?;
        }
    }

    println!("{}", describe_params(&params));
    println!(
        "delay={:.6} ci=±{:.6} replications={} waits={}{}",
        est.mean,
        est.half_width,
        est.replications,
        est.samples,
        if est.flagged { " (flagged)" } else { "" }
    );
    println!(
        "message_rate={:.4} nominal={:.4} mean_l1={:.6}",
        est.message_rate,
        nominal_message_rate(&params),
        est.mean_l1
    );
    if params.capacity() > 0 {
        let k = runs.len() as f64;
        let mean_tokens = runs.iter().map(|r| r.tokens.mean()).sum::<f64>() / k;
        let empty = runs.iter().map(|r| r.tokens.empty_fraction()).sum::<f64>() / k;
        let hist: Vec<String> = runs[0].tokens.fractions.iter().take(8).map(|f| format!("{f:.4}")).collect();
        println!("tokens: mean={mean_tokens:.4} P(M=0)={empty:.4} histogram=[{}]", hist.join(" "));
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}

/// `(P0*, s*, delay)`; `P0*` is `None` for power-of-d.
fn fixed_point(params: &FluidParams) -> Result<(Option<f64>, OccupancyVector, f64)> {
    match params.regime {
        Regime::PowerOfD { d } => Ok((
            None,
            power_of_d_equilibrium(params.lambda, d, params.truncation),
            power_of_d_delay(params.lambda, d),
        )),
        _ => {
            let eq = equilibrium(params)?;
            Ok((Some(eq.p0_star), eq.s_star, eq.delay))
        }
    }
}

fn print_fixed_point(p0: Option<f64>, s_star: &OccupancyVector, delay: f64) {
    match p0 {
        Some(p) => println!("P0*={p} delay={delay}"),
        None => println!("P0*=n/a delay={delay}"),
    }
    let prefix: Vec<String> = (1..=6).map(|i| format!("{:.6}", s_star.get(i))).collect();
    println!("s*=[{}, ...]", prefix.join(", "));
}

fn print_events(sol: &FluidSolution) {
    for (t, a) in sol.events() {
        let s = sol.at(t);
        println!("{} t={t:.6} s_1={:.6} s_2={:.6}", a.label(), s.get(1), s.get(2));
    }
}

pub fn fluid(ctx: &Context, horizon: Option<f64>, equilibrium_only: bool) -> Result<()> {
    let params = ctx.config.fluid_params()?;
    let horizon = horizon.unwrap_or_else(|| ctx.config.fluid_horizon());
    let initial = ctx.config.fluid_initial()?;
    let (p0, s_star, delay) = fixed_point(&params)?;

    let dir = ctx.dir()?;
    dir.write_meta(&[
        ("command", "fluid".into()),
        ("version", version()),
        ("lambda", params.lambda.to_string()),
        ("regime", params.regime.name().into()),
        ("truncation", params.truncation.to_string()),
        ("horizon", horizon.to_string()),
        ("output_interval", params.output_interval.to_string()),
        ("rtol", params.rtol.to_string()),
        ("atol", params.atol.to_string()),
        ("initial", join(&initial.as_slice()[1..])),
    ])?;
    dir.write_with("equilibrium.txt", |w| {
        write_header(w, None, "equilibrium")?;
        let prefix: Vec<String> = (1..=6).map(|i| s_star.get(i).to_string()).collect();
        write_key_values(
            w,
            &[
                ("lambda", params.lambda.to_string()),
                ("regime", params.regime.name().into()),
                ("p0_star", p0.map_or("n/a".into(), |p| p.to_string())),
                ("delay", delay.to_string()),
                ("s_star_prefix", prefix.join(",")),
            ],
        )
    })?;
    print_fixed_point(p0, &s_star, delay);

    if !equilibrium_only {
        let sol = integrate(&initial, &params, horizon)?;
        dir.write_with("fluid.csv", |w| sol.write_csv(w))?;
        print_events(&sol);
        println!("final_gap={:e} t={horizon}", weighted_norm(sol.final_state(), &s_star));
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}

pub fn sweep(ctx: &Context, preset: Option<Preset>, horizon: Option<f64>) -> Result<()> {
    match preset {
        None => generic_sweep(ctx, horizon),
        Some(Preset::Figure4) => figure4(ctx, horizon),
        Some(Preset::Convergence) => convergence(ctx, horizon),
        Some(Preset::Interchange) => interchange(ctx, horizon),
        Some(Preset::Figure3) => figure3(ctx, horizon),
    }
}

fn sweep_meta(ctx: &Context, name: &str, seeds: &[u64], extra: Vec<(&str, String)>) -> Result<ScenarioDir> {
    let dir = ctx.dir()?;
    let mut pairs = vec![
        ("name", name.to_string()),
        ("command", "sweep".into()),
        ("version", version()),
        ("seeds", join(seeds)),
    ];
    pairs.extend(extra);
    dir.write_meta(&pairs)?;
    Ok(dir)
}

fn generic_sweep(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let params = ctx.config.system_params()?;
    let exp = ctx.experiment(horizon);
    let axes = SweepAxes {
        lambdas: exp.lambdas.clone().unwrap_or_default(),
        ns: exp.ns.clone().unwrap_or_default(),
        cs: exp.cs.clone().unwrap_or_default(),
        alphas: exp.alphas.clone().unwrap_or_default(),
        ds: exp.ds.clone().unwrap_or_default(),
    };
    let scenario = Scenario {
        name: exp.name.clone().unwrap_or_else(|| "sweep".into()),
        system: params,
        run: exp.run_config(1000.0),
        seeds: exp.seeds(ctx.seed, 8)?,
        axes,
    };
    let (records, runs) = run_sweep_with_runs(&scenario)?;
    let dir = sweep_meta(
        ctx,
        &scenario.name,
        &scenario.seeds,
        vec![
            ("params", describe_params(&params)),
            ("horizon", scenario.run.horizon.to_string()),
            ("warmup", scenario.run.warmup.to_string()),
            ("points", records.len().to_string()),
        ],
    )?;
    for (i, r) in runs.iter().enumerate() {
        dir.write_with(&format!("points/point_{i:03}.csv"), |w| write_summary(w, r))?;
    }
    dir.write_summary(&format!("sweep {}", scenario.name), &records)?;
    dir.write_plot(&sweep_plot())?;
    print_records(&records);
    println!("wrote {}", dir.root().display());
    Ok(())
}

fn sweep_plot() -> PlotSpec {
    PlotSpec {
        title: "Simulated vs predicted delay".into(),
        data: "summary.csv".into(),
        x: "lambda".into(),
        x_label: "lambda".into(),
        y_label: "mean waiting time".into(),
        log_y: false,
        series: vec![
            Series {
                label: "simulated".into(),
                y: "sim_delay".into(),
                error: Some("sim_ci".into()),
                filter: None,
                style: "marker=square".into(),
            },
            Series {
                label: "fluid".into(),
                y: "fluid_delay".into(),
                error: None,
                filter: None,
                style: "line=dashed".into(),
            },
        ],
    }
}

fn print_records(records: &[ComparisonRecord]) {
    for r in records {
        let gap = r.trajectory_gap.map(|g| format!(" trajectory_gap={g:.6}")).unwrap_or_default();
        println!(
            "n={} lambda={} regime={} sim_delay={:.6}±{:.6} fluid_delay={:.6}{gap} message_rate={:.3} nominal={:.3}{}",
            r.n,
            r.lambda,
            r.regime,
            r.sim_delay,
            r.sim_ci,
            r.fluid_delay,
            r.message_rate,
            r.nominal_message_rate,
            if r.flagged { " (flagged)" } else { "" }
        );
    }
}

fn figure4(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let exp = ctx.experiment(horizon);
    let defaults = Figure4Config::default();
    let regime = ctx.config.regime.clone().unwrap_or_default();
    let first = |v: &Option<Vec<usize>>| v.as_ref().and_then(|v| v.first().copied());
    let horizon = exp.horizon.unwrap_or(defaults.horizon);
    let cfg = Figure4Config {
        lambdas: exp.lambdas.clone().unwrap_or(defaults.lambdas),
        n: first(&exp.ns)
            .or(ctx.config.system.as_ref().and_then(|s| s.n))
            .unwrap_or(defaults.n),
        c: first(&exp.cs).or(regime.c).unwrap_or(defaults.c),
        d: first(&exp.ds).or(regime.d).unwrap_or(defaults.d),
        seeds: exp.seeds(ctx.seed, defaults.seeds.len())?,
        warmup: exp
            .warmup
            .unwrap_or(if exp.horizon.is_some() { 0.3 * horizon } else { defaults.warmup }),
        horizon,
    };
    let rows = run_figure4(&cfg)?;
    let dir = sweep_meta(
        ctx,
        "figure4",
        &cfg.seeds,
        vec![
            ("lambdas", join(&cfg.lambdas)),
            ("n", cfg.n.to_string()),
            ("c", cfg.c.to_string()),
            ("d", cfg.d.to_string()),
            ("alpha", "lambda".into()),
            ("horizon", cfg.horizon.to_string()),
            ("warmup", cfg.warmup.to_string()),
        ],
    )?;
    let mut points = Vec::new();
    for row in &rows {
        let runs: Vec<SteadyStateRun> = row.runs.iter().flatten().filter_map(|r| r.as_ref().ok().cloned()).collect();
        dir.write_with(&format!("points/lambda_{}.csv", row.lambda), |w| write_summary(w, &runs))?;
        points.extend(row.points(&cfg));
    }
    dir.write_summary("figure4", &points)?;
    dir.write_plot(&figure4_plot())?;
    for p in &points {
        println!(
            "lambda={} policy={} delay={:.6}±{:.6} predicted={:.6}{}",
            p.lambda,
            p.policy,
            p.sim_delay,
            p.ci_half_width,
            p.predicted,
            if p.flagged { " (flagged)" } else { "" }
        );
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}

/// Base parameters for the studies: the configured system, or Constrained
/// `lambda = 0.9, mu = 9, c = 2`.
fn study_params(ctx: &Context, n: usize) -> Result<SystemParams> {
    if ctx.config.system.is_some() || ctx.config.regime.is_some() {
        ctx.config.system_params()
    } else {
        Ok(SystemParams::new(n, 0.9, Regime::Constrained { c: 2, mu: 9.0 }))
    }
}

fn convergence(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let exp = ctx.experiment(horizon);
    let params = study_params(ctx, 100)?;
    let mut cfg = ConvergenceConfig::new(
        exp.ns.clone().unwrap_or_else(|| vec![100, 1000, 10_000]),
        params,
        exp.horizon.unwrap_or(20.0),
        exp.seeds(ctx.seed, 8)?,
    );
    if let Some(dt) = exp.sample_interval {
        cfg.sample_interval = dt;
    }
    if let Some(l) = exp.levels {
        cfg.levels = l;
    }
    cfg.initial = exp.initial()?;
    let table = run_convergence_study(&cfg)?;
    let dir = sweep_meta(
        ctx,
        "convergence",
        &cfg.seeds,
        vec![
            ("params", describe_params(&params)),
            ("ns", join(&cfg.ns)),
            ("horizon", cfg.horizon.to_string()),
            ("sample_interval", cfg.sample_interval.to_string()),
            ("levels", cfg.levels.to_string()),
        ],
    )?;
    dir.write_summary("convergence", &table.rows)?;
    dir.write_plot(&convergence_plot())?;
    for r in &table.rows {
        println!("n={} gap={:.6}±{:.6}", r.n, r.mean_gap, r.half_width);
    }
    if table.decreasing == Some(false) {
        eprintln!("warning: gap is not strictly decreasing in n");
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}

#[derive(Serialize)]
struct LevelRow {
    level: usize,
    averaged: f64,
    s_star: f64,
    abs_gap: f64,
}

fn interchange(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let exp = ctx.experiment(horizon);
    let params = study_params(ctx, 5000)?;
    let run = exp.run_config(1000.0);
    let seeds = exp.seeds(ctx.seed, 1)?;
    let rec = run_interchange_check(&params, &run, &seeds)?;
    let dir = sweep_meta(
        ctx,
        "interchange",
        &seeds,
        vec![
            ("params", describe_params(&params)),
            ("horizon", run.horizon.to_string()),
            ("warmup", run.warmup.to_string()),
        ],
    )?;
    let rows: Vec<LevelRow> = (1..=rec.levels)
        .map(|i| LevelRow {
            level: i,
            averaged: rec.averaged[i],
            s_star: rec.s_star[i],
            abs_gap: (rec.averaged[i] - rec.s_star[i]).abs(),
        })
        .collect();
    dir.write_summary("interchange", &rows)?;
    for r in &rows {
        println!("S_{}={:.6} s*={:.6}", r.level, r.averaged, r.s_star);
    }
    println!("max_gap={:.6}{}", rec.max_gap, if rec.flagged { " (flagged)" } else { "" });
    println!("wrote {}", dir.root().display());
    Ok(())
}

#[derive(Serialize)]
struct Figure3Row {
    hit_time: Option<f64>,
    release_time: Option<f64>,
    s2_at_release: Option<f64>,
    final_gap: f64,
}

fn figure3(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    let (params, initial) = if ctx.config.system.is_some() {
        (ctx.config.fluid_params()?, ctx.config.fluid_initial()?)
    } else {
        (FluidParams::new(0.9, Regime::HighMessage { c: 1 }), figure3_initial())
    };
    let horizon = horizon
        .or(ctx.config.fluid.as_ref().and_then(|f| f.horizon))
        .unwrap_or(200.0);
    let r = run_figure3(&params, &initial, horizon)?;
    let dir = sweep_meta(
        ctx,
        "figure3",
        &[],
        vec![
            ("lambda", params.lambda.to_string()),
            ("regime", params.regime.name().into()),
            ("initial", join(&initial.as_slice()[1..])),
            ("horizon", horizon.to_string()),
        ],
    )?;
    dir.write_with("points/trajectory.csv", |w| r.solution.write_csv(w))?;
    dir.write_summary(
        "figure3",
        &[Figure3Row {
            hit_time: r.hit_time,
            release_time: r.release_time,
            s2_at_release: r.s2_at_release,
            final_gap: r.final_gap,
        }],
    )?;
    dir.write_plot(&figure3_plot("points/trajectory.csv"))?;
    print_events(&r.solution);
    println!("final_gap={:e} t={horizon}", r.final_gap);
    println!("wrote {}", dir.root().display());
    Ok(())
}

pub fn compare(ctx: &Context, horizon: Option<f64>) -> Result<()> {
    if ctx.config.fluid.is_none() {
        bail!("compare requires a [fluid] section in the config");
    }
    let params = ctx.config.system_params()?;
    let fparams = ctx.config.fluid_params()?;
    let exp = ctx.experiment(horizon);
    let run = exp.run_config(1000.0);
    let seeds = exp.seeds(ctx.seed, 4)?;

    let results = replicate(&params, &run, &seeds);
    let est = merge_replications(&results);
    let runs = successful(results, &seeds)?;

    let fh = ctx.config.fluid_horizon();
    let initial = ctx.config.fluid_initial()?;
    let sol = integrate(&initial, &fparams, fh)?;
    let paths: Vec<_> = seeds
        .par_iter()
        .map(|&s| run_trajectory(&params, &initial, fh, fparams.output_interval, fparams.truncation, s))
        .collect::<Result<_, _>>()?;
    let gaps: Vec<f64> = paths
        .iter()
        .map(|p| {
            p.times
                .iter()
                .zip(&p.occupancy)
                .map(|(&t, s)| weighted_norm(s, &sol.at(t)))
                .fold(0.0, f64::max)
        })
        .collect();
    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;

    let record = ComparisonRecord {
        scenario: exp.name.clone().unwrap_or_else(|| "compare".into()),
        n: params.n,
        lambda: params.lambda,
        regime: params.regime.name().into(),
        sim_delay: est.mean,
        sim_ci: est.half_width,
        fluid_delay: predicted_delay(params.lambda, &params.regime)?,
        trajectory_gap: Some(gap),
        message_rate: est.message_rate,
        nominal_message_rate: nominal_message_rate(&params),
        samples: est.samples,
        flagged: est.flagged,
    };

    let dir = ctx.dir()?;
    dir.write_meta(&[
        ("name", record.scenario.clone()),
        ("command", "compare".into()),
        ("version", version()),
        ("seeds", join(&seeds)),
        ("params", describe_params(&params)),
        ("horizon", run.horizon.to_string()),
        ("warmup", run.warmup.to_string()),
        ("fluid_horizon", fh.to_string()),
        ("truncation", fparams.truncation.to_string()),
        ("output_interval", fparams.output_interval.to_string()),
        ("initial", join(&initial.as_slice()[1..])),
    ])?;
    dir.write_summary("compare", std::slice::from_ref(&record))?;
    dir.write_with("fluid.csv", |w| sol.write_csv(w))?;
    dir.write_with("points/steady_state.csv", |w| write_summary(w, &runs))?;
    for p in &paths {
        dir.write_with(&format!("points/trajectory_seed{}.csv", p.seed), |w| write_trajectory(w, p))?;
    }
    print_records(std::slice::from_ref(&record));
    let boundary = sol.events().iter().any(|e| e.1 != Annotation::Sample);
    if boundary {
        print_events(&sol);
    }
    println!("wrote {}", dir.root().display());
    Ok(())
}
