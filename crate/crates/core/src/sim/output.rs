//! CSV serialization of simulator runs.
//!
//! Trajectory files have one row per sample time with columns
//! `t,S_1,...,S_K,M`; summary files one row per run. Both start with a
//! `#` header line carrying the version, seed and parameters.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::run::{measure_message_rate, SteadyStateRun, TrajectoryRun};
use crate::io::{csv_reader, describe_params, write_header};

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_trajectory<W: Write>(mut w: W, run: &TrajectoryRun) -> io::Result<()> {
    write_header(&mut w, Some(run.seed), &describe_params(&run.params))?;
    let k = run.occupancy.first().map_or(0, |s| s.truncation());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("S_{i}")));
    header.push("M".into());
    out.write_record(&header).map_err(csv_err)?;
    for ((t, s), m) in run.times.iter().zip(&run.occupancy).zip(&run.tokens) {
        let mut row = vec![t.to_string()];
        row.extend(s.as_slice()[1..].iter().map(f64::to_string));
        row.push(m.to_string());
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()
}

/// Rows of a trajectory file: `(t, [S_1..S_K], M)`.
pub fn read_trajectory<R: Read>(r: R) -> io::Result<Vec<(f64, Vec<f64>, usize)>> {
    let mut rows = Vec::new();
    for rec in csv_reader(r).records() {
        let rec = rec.map_err(csv_err)?;
        let parse = |s: &str| s.parse::<f64>().map_err(io::Error::other);
        let t = parse(&rec[0])?;
        let s = (1..rec.len() - 1).map(|i| parse(&rec[i])).collect::<io::Result<Vec<_>>>()?;
        let m = rec[rec.len() - 1].parse::<usize>().map_err(io::Error::other)?;
        rows.push((t, s, m));
    }
    Ok(rows)
}

/// One summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub seed: u64,
    pub n: usize,
    pub lambda: f64,
    pub regime: String,
    pub mean_wait: f64,
    pub ci_half_width: f64,
    pub wait_samples: u64,
    pub message_rate: f64,
    pub mean_l1: f64,
    pub l1_half_width: f64,
    pub mean_tokens: f64,
    pub p_no_token: f64,
}

impl SummaryRow {
    pub fn from_run(run: &SteadyStateRun) -> Self {
        SummaryRow {
            seed: run.seed,
            n: run.params.n,
            lambda: run.params.lambda,
            regime: run.params.regime.name().to_string(),
            mean_wait: run.waits.mean,
            ci_half_width: run.waits.half_width,
            wait_samples: run.waits.count,
            message_rate: measure_message_rate(run),
            mean_l1: run.occupancy.mean_l1,
            l1_half_width: run.occupancy.l1_half_width,
            mean_tokens: run.tokens.mean(),
            p_no_token: run.tokens.empty_fraction(),
        }
    }
}

pub fn write_summary<W: Write>(mut w: W, runs: &[SteadyStateRun]) -> io::Result<()> {
    if let Some(first) = runs.first() {
        let seeds: Vec<String> = runs.iter().map(|r| r.seed.to_string()).collect();
        write_header(
            &mut w,
            None,
            &format!(
                "seeds={} {} horizon={} warmup={}",
                seeds.join(","),
                describe_params(&first.params),
                first.config.horizon,
                first.config.warmup
            ),
        )?;
    }
    let mut out = csv::Writer::from_writer(w);
    for run in runs {
        out.serialize(SummaryRow::from_run(run)).map_err(csv_err)?;
    }
    out.flush()
}

pub fn read_summary<R: Read>(r: R) -> io::Result<Vec<SummaryRow>> {
    csv_reader(r)
        .deserialize()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_err)
}

/// Per-level time-averaged occupancy with half-widths.
pub fn write_occupancy<W: Write>(mut w: W, run: &SteadyStateRun) -> io::Result<()> {
    write_header(&mut w, Some(run.seed), &describe_params(&run.params))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["level", "mean", "half_width"]).map_err(csv_err)?;
    for (i, (m, h)) in run.occupancy.mean.iter().zip(&run.occupancy.half_width).enumerate().skip(1) {
        out.write_record([i.to_string(), m.to_string(), h.to_string()]).map_err(csv_err)?;
    }
    out.flush()
}

/// Token-count histogram `m,fraction`.
pub fn write_tokens<W: Write>(mut w: W, run: &SteadyStateRun) -> io::Result<()> {
    write_header(&mut w, Some(run.seed), &describe_params(&run.params))?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["m", "fraction"]).map_err(csv_err)?;
    for (m, f) in run.tokens.fractions.iter().enumerate() {
        out.write_record([m.to_string(), f.to_string()]).map_err(csv_err)?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{OccupancyVector, Regime, SystemParams};
    use crate::sim::{run_steady_state, run_trajectory, RunConfig};

    #[test]
    fn trajectory_csv_round_trips() {
        let p = SystemParams::new(40, 0.9, Regime::Constrained { c: 2, mu: 9.0 });
        let init = OccupancyVector::from_tail(&[0.5, 0.25]).unwrap();
        let tr = run_trajectory(&p, &init, 2.0, 0.5, 6, 4).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &tr).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# rcpb v"));
        assert!(text.contains("seed=4"));
        assert!(text.lines().nth(1).unwrap().starts_with("t,S_1,S_2"));
        let rows = read_trajectory(&buf[..]).unwrap();
        assert_eq!(rows.len(), tr.times.len());
        for ((t, s, m), i) in rows.iter().zip(0..) {
            assert_eq!(*t, tr.times[i]);
            assert_eq!(&s[..], &tr.occupancy[i].as_slice()[1..]);
            assert_eq!(*m, tr.tokens[i]);
        }
    }

    #[test]
    fn summary_csv_round_trips() {
        let p = SystemParams::new(20, 0.6, Regime::Pull);
        let run = run_steady_state(&p, &RunConfig::new(1500.0), 2).unwrap();
        let mut buf = Vec::new();
        write_summary(&mut buf, std::slice::from_ref(&run)).unwrap();
        let rows = read_summary(&buf[..]).unwrap();
        assert_eq!(rows, vec![SummaryRow::from_run(&run)]);
    }
}
