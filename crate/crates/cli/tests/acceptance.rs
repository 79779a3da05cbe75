//! End-to-end acceptance checks. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stdout (bypassing capture) before asserting.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rcpb_core::experiments::figures::figure3_initial;
use rcpb_core::experiments::{
    replicate, replication_seeds, run_convergence_study, run_figure3, run_figure4, run_interchange_check,
    ConvergenceConfig, Figure4Config, Figure4Row,
};
use rcpb_core::fluid::{
    constrained_delay, delay_from_equilibrium, equilibrium, fluid_drift, integrate, phase_transition_limit,
    power_of_d_delay, uniform_delay_bound, Annotation, FluidParams, PhaseTransition,
};
use rcpb_core::model::{OccupancyVector, Regime, SystemParams};
use rcpb_core::sim::stats::mean_and_half_width;
use rcpb_core::sim::{run_steady_state, RunConfig, SteadyStateRun};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {id:>2} [{name}]: {status}  {detail}").unwrap();
    out.flush().unwrap();
}

struct Check {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Self {
        Check { failures: Vec::new(), notes: Vec::new() }
    }

    fn require(&mut self, ok: bool, msg: impl Into<String>) {
        if !ok {
            self.failures.push(msg.into());
        }
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(msg.into());
    }

    fn finish(self, id: u32, name: &str) {
        let pass = self.failures.is_empty();
        let detail = if pass { self.notes.join("; ") } else { self.failures.join("; ") };
        report(id, name, pass, &detail);
        assert!(pass, "criterion {id} failed: {}", self.failures.join("; "));
    }
}

fn token_regime(rng: &mut StdRng, lambda: f64) -> Regime {
    match rng.random_range(0..3) {
        0 => Regime::HighMemory { mu: rng.random_range(0.05..20.0) },
        1 => Regime::HighMessage { c: rng.random_range(1..10) },
        _ => {
            let alpha = rng.random_range(0.05..2.0);
            Regime::constrained_with_alpha(lambda, alpha, rng.random_range(1..12))
        }
    }
}

/// Closed-form asymptotic delay for each token regime.
fn closed_form_delay(lambda: f64, regime: Regime) -> f64 {
    match regime {
        Regime::HighMessage { .. } => 0.0,
        Regime::HighMemory { mu } => {
            let alpha = mu * (1.0 - lambda);
            if alpha >= lambda {
                0.0
            } else {
                (lambda - alpha) / (1.0 - lambda + alpha)
            }
        }
        Regime::Constrained { c, mu } => constrained_delay(lambda, mu * (1.0 - lambda), c),
        _ => unreachable!(),
    }
}

#[test]
fn criterion_01_equilibrium_consistency() {
    let mut check = Check::new();
    let mut rng = StdRng::seed_from_u64(20_240_601);
    let (mut worst_drift, mut worst_delay) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let lambda = rng.random_range(0.05..0.97);
        let regime = token_regime(&mut rng, lambda);
        let params = FluidParams::new(lambda, regime);
        let eq = equilibrium(&params).unwrap();
        let drift = fluid_drift(&eq.s_star, &params).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let delay_err = (delay_from_equilibrium(&eq.s_star, lambda) - closed_form_delay(lambda, regime)).abs();
        worst_drift = worst_drift.max(drift);
        worst_delay = worst_delay.max(delay_err);
        check.require(drift <= 1e-10, format!("drift {drift:e} at lambda={lambda} {regime:?}"));
        check.require(delay_err <= 1e-12, format!("delay error {delay_err:e} at lambda={lambda} {regime:?}"));
    }
    check.note(format!("max |F(s*)|={worst_drift:.2e}, max delay error={worst_delay:.2e} over 200 draws"));
    check.finish(1, "equilibrium consistency");
}

#[test]
fn criterion_02_high_message_boundary_path() {
    let mut check = Check::new();
    let start = Instant::now();
    let params = FluidParams::new(0.9, Regime::HighMessage { c: 1 });
    let r = run_figure3(&params, &figure3_initial(), 200.0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (hit, release) = (r.hit_time, r.release_time);
    check.require(hit.is_some(), "s_1 never reaches 1");
    check.require(release.is_some(), "no boundary release");
    if let (Some(h), Some(rel)) = (hit, release) {
        check.require(rel > h, "plateau has no length");
        let plateau_ok = r
            .solution
            .times
            .iter()
            .zip(&r.solution.states)
            .filter(|(t, _)| **t >= h && **t <= rel)
            .all(|(_, s)| s.get(1) >= 1.0 - 1e-9);
        check.require(plateau_ok, "s_1 leaves 1 during the plateau");
        check.note(format!("hit t={h:.4}, release t={rel:.4}"));
    }
    let s2 = r.s2_at_release.unwrap_or(f64::NAN);
    check.require((s2 - 0.1).abs() <= 1e-3, format!("s_2 at release {s2}"));
    check.require(r.final_gap <= 1e-4, format!("final gap {:e}", r.final_gap));
    check.require(elapsed < 1.0, format!("runtime {elapsed:.3}s"));
    let events = r.solution.events();
    check.require(
        events.iter().filter(|e| e.1 == Annotation::BoundaryHit).count() == 1
            && events.iter().filter(|e| e.1 == Annotation::BoundaryRelease).count() == 1,
        "expected exactly one hit and one release annotation",
    );
    check.note(format!("s_2(release)={s2:.6}, gap(200)={:.2e}, runtime {elapsed:.3}s", r.final_gap));
    check.finish(2, "high message boundary path");
}

fn figure4_rows() -> &'static (Figure4Config, Vec<Figure4Row>) {
    static ROWS: OnceLock<(Figure4Config, Vec<Figure4Row>)> = OnceLock::new();
    ROWS.get_or_init(|| {
        let cfg = Figure4Config {
            lambdas: vec![0.5, 0.9, 0.99],
            ..Figure4Config::default()
        };
        let rows = run_figure4(&cfg).unwrap();
        (cfg, rows)
    })
}

#[test]
fn criterion_03_delay_vs_load() {
    let mut check = Check::new();
    let (cfg, rows) = figure4_rows();
    assert_eq!((cfg.n, cfg.c, cfg.seeds.len()), (500, 2, 8));
    for row in rows {
        let lambda = row.lambda;
        let target = lambda / (1.0 - lambda + cfg.c as f64);
        let rcpb = row.rcpb.mean;
        let rel = (rcpb - target).abs() / target;
        check.require(
            rel <= 0.10,
            format!("lambda={lambda}: RCPB delay {rcpb:.4}±{:.4} is {:.1}% from {target:.4}", row.rcpb.half_width, 100.0 * rel),
        );
        let formula = power_of_d_delay(lambda, cfg.d);
        let pod = row.power_of_d.mean;
        let rel_pod = (pod - formula).abs() / formula;
        check.require(
            rel_pod <= 0.10,
            format!("lambda={lambda}: power-of-2 delay {pod:.4} is {:.1}% from {formula:.4}", 100.0 * rel_pod),
        );
        let bound = uniform_delay_bound(lambda, cfg.c);
        check.require(rcpb <= bound, format!("lambda={lambda}: RCPB delay {rcpb:.4} above (a+a^2)^-1={bound:.4}"));
        check.require(!row.rcpb.flagged && !row.power_of_d.flagged, format!("lambda={lambda}: flagged runs"));
        check.note(format!(
            "lambda={lambda}: rcpb {rcpb:.4} vs {target:.4}, pod {pod:.4} vs {formula:.4}, bound {bound:.4}"
        ));
    }
    if let Some(row) = rows.iter().find(|r| r.lambda == 0.9) {
        check.require((power_of_d_delay(0.9, 2) - 1.6140574).abs() < 1e-7, "power-of-2 formula at 0.9");
        check.note(format!("pull(0.9)={:.4}", row.pull.mean));
    }
    check.finish(3, "delay vs load at n=500");
}

#[test]
fn criterion_04_mm1_oracle() {
    let mut check = Check::new();
    let p = SystemParams::new(1, 0.5, Regime::RandomRouting);
    let run = run_steady_state(&p, &RunConfig::new(200_000.0), 1).unwrap();
    let w = &run.waits;
    check.require(w.contains(1.0), format!("mean wait {:.4}±{:.4} excludes 1", w.mean, w.half_width));
    for k in 1..=5 {
        let (m, h) = (run.occupancy.mean[k], run.occupancy.half_width[k]);
        let exact = 0.5f64.powi(k as i32);
        check.require((m - exact).abs() <= h, format!("P(Q>={k})={m:.5}±{h:.5} excludes {exact}"));
    }
    check.note(format!(
        "W={:.4}±{:.4} over {} waits; P(Q>=1..5)=[{}]",
        w.mean,
        w.half_width,
        w.count,
        (1..=5).map(|k| format!("{:.4}", run.occupancy.mean[k])).collect::<Vec<_>>().join(", ")
    ));
    check.finish(4, "M/M/1 oracle");
}

#[test]
fn criterion_05_sample_path_convergence() {
    let mut check = Check::new();
    let p = SystemParams::new(1, 0.9, Regime::Constrained { c: 2, mu: 9.0 });
    let cfg = ConvergenceConfig::new(vec![100, 1000, 10_000], p, 20.0, replication_seeds(1, 8));
    let table = run_convergence_study(&cfg).unwrap();
    check.require(table.decreasing == Some(true), "mean gap not strictly decreasing in n");
    let last = table.rows.last().unwrap().mean_gap;
    check.require(last <= 0.03, format!("gap at n=10000 is {last:.4}"));
    check.note(
        table
            .rows
            .iter()
            .map(|r| format!("n={} gap={:.4}", r.n, r.mean_gap))
            .collect::<Vec<_>>()
            .join(", "),
    );
    check.finish(5, "sample-path convergence");
}

#[test]
fn criterion_06_interchange() {
    let mut check = Check::new();
    let p = SystemParams::new(5000, 0.9, Regime::Constrained { c: 2, mu: 9.0 });
    let rec = run_interchange_check(&p, &RunConfig::new(1000.0), &[1]).unwrap();
    for i in 1..=6 {
        let exact = 0.9 * 0.3f64.powi(i as i32 - 1);
        check.require((rec.s_star[i] - exact).abs() < 1e-12, format!("s*_{i} {}", rec.s_star[i]));
        let gap = (rec.averaged[i] - exact).abs();
        check.require(gap <= 0.02, format!("|S_{i} - s*_{i}| = {gap:.4}"));
    }
    check.require(!rec.flagged, "run flagged");
    check.note(format!("max gap {:.5} over i<=6", rec.max_gap));
    check.finish(6, "interchange of limits");
}

/// Mean and across-replication half-width of a per-run statistic.
fn across(runs: &[&SteadyStateRun], f: impl Fn(&SteadyStateRun) -> f64) -> (f64, f64) {
    let v: Vec<f64> = runs.iter().map(|r| f(r)).collect();
    let (m, h) = mean_and_half_width(&v);
    (m, if h.is_finite() { h } else { 0.0 })
}

#[test]
fn criterion_07_tail_bounds() {
    let mut check = Check::new();
    let (cfg, rows) = figure4_rows();
    let run = RunConfig::new(cfg.horizon).with_warmup(cfg.warmup);
    let seeds = replication_seeds(1, 4);
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0;
    for lambda in [0.5, 0.9] {
        let row = rows.iter().find(|r| r.lambda == lambda).unwrap();
        let mut groups: Vec<(String, Vec<SteadyStateRun>)> = ["rcpb", "power_of_2", "pull"]
            .iter()
            .zip(&row.runs)
            .map(|(name, rs)| (name.to_string(), rs.iter().filter_map(|r| r.as_ref().ok().cloned()).collect()))
            .collect();
        for regime in [
            Regime::HighMemory { mu: 1.0 },
            Regime::HighMessage { c: 1 },
            Regime::RandomRouting,
        ] {
            let p = SystemParams::new(cfg.n, lambda, regime);
            let rs = replicate(&p, &run, &seeds).into_iter().map(|r| r.unwrap()).collect();
            groups.push((regime.name().to_string(), rs));
        }
        for (name, rs) in &groups {
            let rs: Vec<&SteadyStateRun> = rs.iter().collect();
            check.require(!rs.is_empty(), format!("{name} at {lambda}: no runs"));
            for k in 1..=10 {
                let (m, h) = across(&rs, |r| r.occupancy.mean[k]);
                let bound = (1.0 / (2.0 - lambda)).powf(k as f64 / 2.0);
                worst = worst.max(m - bound - 3.0 * h);
                check.require(
                    m <= bound + 3.0 * h,
                    format!("{name} lambda={lambda}: P(Q>={k})={m:.4} above {bound:.4}+3*{h:.4}"),
                );
            }
            let (l1, h1) = across(&rs, |r| r.occupancy.mean_l1);
            let bound = 2.0 + 2.0 / (1.0 - lambda);
            check.require(l1 <= bound + 3.0 * h1, format!("{name} lambda={lambda}: ||S||_1={l1:.4} above {bound}"));
            checked += 1;
        }
    }
    check.note(format!("{checked} (policy, lambda) groups; max excess over bound {worst:.4}"));
    check.finish(7, "tail bounds");
}

/// Nonincreasing vector in [0,1] with zeros beyond level 10.
fn random_tail(rng: &mut StdRng) -> Vec<f64> {
    let mut v = Vec::with_capacity(10);
    let mut prev = 1.0f64;
    for _ in 0..10 {
        prev *= rng.random_range(0.0..1.0f64).powf(0.5);
        v.push(prev);
    }
    v
}

#[test]
fn criterion_08_monotonicity() {
    let mut check = Check::new();
    let mut rng = StdRng::seed_from_u64(43);
    let mut compared = 0usize;
    for regime_id in 0..3 {
        for _ in 0..50 {
            let lambda = rng.random_range(0.2..0.9);
            let regime = match regime_id {
                0 => Regime::HighMemory { mu: rng.random_range(0.1..10.0) },
                1 => Regime::HighMessage { c: 1 },
                _ => Regime::constrained_with_alpha(lambda, rng.random_range(0.1..2.0), rng.random_range(1..6)),
            };
            let upper = random_tail(&mut rng);
            let mut lower = Vec::with_capacity(upper.len());
            let mut prev = 1.0f64;
            for &u in &upper {
                prev = prev.min(u * rng.random_range(0.0..1.0));
                lower.push(prev);
            }
            let params = FluidParams::new(lambda, regime).with_output_interval(0.05);
            let hi = integrate(&OccupancyVector::from_tail(&upper).unwrap(), &params, 20.0).unwrap();
            let lo = integrate(&OccupancyVector::from_tail(&lower).unwrap(), &params, 20.0).unwrap();
            let hs: Vec<_> = hi.samples().collect();
            let ls: Vec<_> = lo.samples().collect();
            check.require(hs.len() == ls.len(), "grids differ");
            for ((t, a), (t2, b)) in hs.iter().zip(&ls) {
                check.require((t - t2).abs() < 1e-12, "grid times differ");
                if !a.dominates(b, 1e-6) {
                    check.require(false, format!("{regime:?} lambda={lambda}: order violated at t={t}"));
                    break;
                }
                compared += 1;
            }
        }
    }
    check.note(format!("150 pairs, {compared} grid times compared"));
    check.finish(8, "monotonicity");
}

#[test]
fn criterion_09_phase_transition() {
    let mut check = Check::new();
    let mut rng = StdRng::seed_from_u64(9);
    for _ in 0..100 {
        let lambda = rng.random_range(0.05..0.99);
        // alpha > lambda
        let alpha = lambda + rng.random_range(0.01..2.0);
        let pt = phase_transition_limit(lambda, alpha);
        check.require(matches!(pt, PhaseTransition::Exponential { .. }), "alpha>lambda misclassified");
        for c in 1..=20 {
            let d = constrained_delay(lambda, alpha, c);
            check.require(
                d <= (lambda / alpha).powi(c as i32),
                format!("alpha>lambda: delay {d:e} above (lambda/alpha)^{c} at lambda={lambda} alpha={alpha}"),
            );
        }
        // alpha = lambda
        for c in 1..=20 {
            let closed = constrained_delay(lambda, lambda, c);
            let fluid = equilibrium(&FluidParams::new(lambda, Regime::constrained_with_alpha(lambda, lambda, c)))
                .unwrap()
                .delay;
            for (what, d) in [("closed form", closed), ("equilibrium", fluid)] {
                let err = (d * (1.0 - lambda + c as f64) - lambda).abs();
                check.require(err <= 1e-12, format!("alpha=lambda {what}: residual {err:e} at lambda={lambda} c={c}"));
                check.require(d <= 1.0 / c as f64, format!("alpha=lambda: {d} above 1/{c}"));
            }
        }
        // alpha < lambda
        let alpha = lambda * rng.random_range(0.01..0.99);
        match phase_transition_limit(lambda, alpha) {
            PhaseTransition::Saturating { limit, closed_form, .. } => {
                check.require(limit > 1e-6 * lambda, format!("limit {limit:e} not bounded away from 0"));
                check.require(
                    (limit - closed_form).abs() <= 1e-9,
                    format!("limit {limit} vs closed form {closed_form} at lambda={lambda} alpha={alpha}"),
                );
                let big_c = constrained_delay(lambda, alpha, 10_000);
                check.require((big_c - limit).abs() <= 1e-9, format!("c=10000 delay {big_c} vs limit {limit}"));
            }
            other => check.require(false, format!("alpha<lambda misclassified: {other:?}")),
        }
    }
    if let PhaseTransition::Saturating { limit, closed_form, alternate_form } = phase_transition_limit(0.9, 0.5) {
        check.note(format!(
            "lambda=0.9 alpha=0.5: numeric limit {limit:.9}, closed form {closed_form:.9}, \
             printed variant with +1 gives {alternate_form:.9}"
        ));
    }
    check.note("alpha=lambda satisfies delay*(1-lambda+c)=lambda; 1/(1-lambda+c) differs by a factor lambda");
    check.finish(9, "phase transition");
}

fn run_cli(args: &[&str], dir: &Path) {
    let out = Command::new(env!("CARGO_BIN_EXE_rcpb"))
        .args(args)
        .arg("--output")
        .arg(dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let mut check = Check::new();
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        "[system]\nn = 200\nlambda = 0.9\n\n[regime]\nkind = \"constrained\"\nc = 2\nmu = 9.0\n\n\
         [fluid]\nhorizon = 20.0\ninitial = [0.5, 0.2]\n\n\
         [experiment]\nhorizon = 300.0\nreplications = 2\nsample_interval = 1.0\n",
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let mut files = 0;
    for (cmd, extra) in [("simulate", vec!["--seed", "17"]), ("fluid", vec![]), ("compare", vec!["--seed", "3"])] {
        let a = tmp.path().join(format!("{cmd}_a"));
        let b = tmp.path().join(format!("{cmd}_b"));
        let mut args = vec!["--config", cfg, cmd];
        args.extend(&extra);
        run_cli(&args, &a);
        run_cli(&args, &b);
        let (ta, tb) = (tree(&a), tree(&b));
        check.require(!ta.is_empty(), format!("{cmd}: no files written"));
        check.require(ta == tb, format!("{cmd}: outputs differ"));
        files += ta.len();
    }
    check.note(format!("{files} files byte-identical across repeated simulate/fluid/compare runs"));
    check.finish(10, "determinism");
}
