//! Adaptive Dormand–Prince 5(4) integration of the fluid model.
//!
//! In the High Message regime (and its PULL limit) the drift jumps at
//! `s_1 = 1`. Trajectories are integrated piecewise: in free mode `P_0 = 0`;
//! when `s_1` reaches 1 while `s_2 > 1 - lambda` the solution slides along
//! the boundary with `P_0 = 1 - (1 - s_2)/lambda`, which makes `ds_1/dt = 0`;
//! it leaves the boundary once `s_2` falls to `1 - lambda`. Both switching
//! times are located by bisection on the step fraction.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use super::drift::{drift_into, p0_raw, sliding_p0, FluidParams};
use super::FluidError;
use crate::io::{csv_reader, write_header};
use crate::model::{weighted_norm, OccupancyVector};

/// Why a grid point was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Sample,
    /// `s_1` reached 1 and the solution started sliding on the boundary.
    BoundaryHit,
    /// `s_2` fell to `1 - lambda` and the solution left the boundary.
    BoundaryRelease,
}

impl Annotation {
    pub fn label(&self) -> &'static str {
        match self {
            Annotation::Sample => "",
            Annotation::BoundaryHit => "boundary_hit",
            Annotation::BoundaryRelease => "boundary_release",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidSolution {
    pub params: FluidParams,
    pub times: Vec<f64>,
    pub states: Vec<OccupancyVector>,
    pub annotations: Vec<Annotation>,
}

impl FluidSolution {
    pub fn final_state(&self) -> &OccupancyVector {
        self.states.last().expect("solution has at least one point")
    }

    /// Boundary events as `(time, kind)`.
    pub fn events(&self) -> Vec<(f64, Annotation)> {
        self.times
            .iter()
            .zip(&self.annotations)
            .filter(|(_, a)| **a != Annotation::Sample)
            .map(|(t, a)| (*t, *a))
            .collect()
    }

    /// Regular grid points only.
    pub fn samples(&self) -> impl Iterator<Item = (f64, &OccupancyVector)> {
        self.times
            .iter()
            .zip(&self.states)
            .zip(&self.annotations)
            .filter(|(_, a)| **a == Annotation::Sample)
            .map(|((t, s), _)| (*t, s))
    }

    /// Linear interpolation between recorded points, clamped to the range.
    pub fn at(&self, t: f64) -> OccupancyVector {
        let i = self.times.partition_point(|&x| x <= t);
        if i == 0 {
            return self.states[0].clone();
        }
        if i == self.times.len() {
            return self.final_state().clone();
        }
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let (a, b) = (self.states[i - 1].as_slice(), self.states[i].as_slice());
        if t1 <= t0 {
            return self.states[i].clone();
        }
        let w = (t - t0) / (t1 - t0);
        OccupancyVector::project(a.iter().zip(b).map(|(x, y)| x + w * (y - x)).collect())
    }

    /// `sup_t ||s(t) - other(t)||_w` over this solution's grid.
    pub fn sup_gap(&self, other: impl Fn(f64) -> OccupancyVector) -> f64 {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| weighted_norm(s, &other(t)))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `t,s_1..s_K,event`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_header(
            &mut w,
            None,
            &format!(
                "fluid lambda={} regime={} K={}",
                self.params.lambda,
                self.params.regime.name(),
                self.params.truncation
            ),
        )?;
        let k = self.params.truncation;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=k).map(|i| format!("s_{i}")));
        header.push("event".into());
        out.write_record(&header).map_err(io::Error::other)?;
        for ((t, s), a) in self.times.iter().zip(&self.states).zip(&self.annotations) {
            let mut row = vec![t.to_string()];
            row.extend((1..=k).map(|i| s.get(i).to_string()));
            row.push(a.label().to_string());
            out.write_record(&row).map_err(io::Error::other)?;
        }
        out.flush()
    }
}

/// Rows `(t, [s_1..s_K], event)` of a fluid CSV file.
pub fn read_fluid_csv<R: Read>(r: R) -> io::Result<Vec<(f64, Vec<f64>, String)>> {
    let mut rows = Vec::new();
    for rec in csv_reader(r).records() {
        let rec = rec.map_err(io::Error::other)?;
        let parse = |s: &str| s.parse::<f64>().map_err(io::Error::other);
        let t = parse(&rec[0])?;
        let s = (1..rec.len() - 1).map(|i| parse(&rec[i])).collect::<io::Result<Vec<_>>>()?;
        rows.push((t, s, rec[rec.len() - 1].to_string()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Free,
    Pinned,
}

struct Integrator<'a> {
    params: &'a FluidParams,
    mode: Mode,
    k: [Vec<f64>; 7],
    scratch: Vec<f64>,
}

// Autonomous system, so the stage nodes c_i never appear.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Fifth-order minus embedded fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

impl<'a> Integrator<'a> {
    fn new(params: &'a FluidParams, dim: usize) -> Self {
        Integrator {
            params,
            mode: Mode::Free,
            k: std::array::from_fn(|_| vec![0.0; dim]),
            scratch: vec![0.0; dim],
        }
    }

    fn drift(&self, s: &[f64], out: &mut [f64]) {
        let lambda = self.params.lambda;
        if self.params.has_boundary() {
            match self.mode {
                Mode::Free => drift_into(s, self.params, Some(0.0), out),
                Mode::Pinned => {
                    drift_into(s, self.params, Some(sliding_p0(s[2], lambda)), out);
                    out[1] = 0.0;
                }
            }
        } else {
            drift_into(s, self.params, p0_raw(s, self.params), out);
        }
    }

    /// One Dormand–Prince step; writes the fifth-order solution into `out`
    /// and returns the scaled error norm.
    fn step(&mut self, y: &[f64], h: f64, out: &mut [f64]) -> f64 {
        let dim = y.len();
        let mut k = std::mem::take(&mut self.k);
        let mut stage = std::mem::take(&mut self.scratch);
        self.drift(y, &mut k[0]);
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = 0.0;
                for (j, a) in A[s].iter().enumerate().take(s) {
                    acc += a * k[j][i];
                }
                stage[i] = y[i] + h * acc;
            }
            self.drift(&stage, &mut k[s]);
        }
        // stage 7 is evaluated at the fifth-order solution (FSAL)
        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut acc = 0.0;
            for (j, a) in A[6].iter().enumerate() {
                acc += a * k[j][i];
            }
            out[i] = y[i] + h * acc;
            let mut e = 0.0;
            for (j, w) in E.iter().enumerate() {
                e += w * k[j][i];
            }
            let scale = self.params.atol + self.params.rtol * y[i].abs().max(out[i].abs());
            err_sq += (h * e / scale).powi(2);
        }
        self.k = k;
        self.scratch = stage;
        (err_sq / dim as f64).sqrt()
    }

    /// Event function for the current mode; a sign change from negative to
    /// nonnegative triggers the switch.
    fn event(&self, y: &[f64]) -> Option<f64> {
        if !self.params.has_boundary() {
            return None;
        }
        let tol = self.params.boundary_tol;
        match self.mode {
            Mode::Free => Some(y[1] - (1.0 - tol)),
            Mode::Pinned => Some((1.0 - self.params.lambda + tol) - y[2]),
        }
    }

    fn project(&self, y: &mut Vec<f64>) {
        let v = OccupancyVector::project(std::mem::take(y)).into_vec();
        *y = v;
        if self.mode == Mode::Pinned {
            y[1] = 1.0;
        }
    }
}

/// Integrates the fluid model from `initial` over `[0, horizon]`.
///
/// Grid points are recorded every `params.output_interval` and at boundary
/// events. Fails if `s_K` exceeds `params.tail_tol`.
pub fn integrate(
    initial: &OccupancyVector,
    params: &FluidParams,
    horizon: f64,
) -> Result<FluidSolution, FluidError> {
    let params = params.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(FluidError::InvalidHorizon(horizon));
    }
    let kmax = params.truncation;
    if initial.truncation() > kmax {
        if let Some(level) = (kmax + 1..=initial.truncation()).find(|&i| initial.get(i) > 0.0) {
            return Err(FluidError::TailOverflow {
                level,
                value: initial.get(level),
                time: 0.0,
            });
        }
    }
    let mut y = initial.resized(kmax).into_vec();
    if y[kmax] > params.tail_tol {
        return Err(FluidError::TailOverflow {
            level: kmax,
            value: y[kmax],
            time: 0.0,
        });
    }

    let dim = kmax + 1;
    let mut integ = Integrator::new(&params, dim);
    let lambda = params.lambda;
    let tol = params.boundary_tol;

    let mut sol = FluidSolution {
        params,
        times: Vec::new(),
        states: Vec::new(),
        annotations: Vec::new(),
    };
    let mut t = 0.0f64;
    if params.has_boundary() && y[1] >= 1.0 - tol && y[2] > 1.0 - lambda + tol {
        integ.mode = Mode::Pinned;
        integ.project(&mut y);
        sol.push(t, &y, Annotation::BoundaryHit);
    }
    integ.project(&mut y);
    sol.push(t, &y, Annotation::Sample);

    let mut next_out = 1usize;
    let out_time = |j: usize| (j as f64 * params.output_interval).min(horizon);
    let mut h = params.max_step.min(1e-2);
    let mut y_new = vec![0.0; dim];
    let mut y_mid = vec![0.0; dim];

    while t < horizon {
        let target = out_time(next_out);
        let clipped = t + h >= target;
        let h_try = if clipped { target - t } else { h };
        if h_try <= 0.0 {
            next_out += 1;
            continue;
        }
        let err = integ.step(&y, h_try, &mut y_new);
        if !err.is_finite() || err > 1.0 {
            let factor = if err.is_finite() { (0.9 * err.powf(-0.2)).max(0.2) } else { 0.2 };
            h = h_try * factor;
            if h < 1e-14 {
                return Err(FluidError::StepUnderflow { time: t });
            }
            continue;
        }

        if let (Some(g0), Some(g1)) = (integ.event(&y), integ.event(&y_new)) {
            if g0 < 0.0 && g1 >= 0.0 {
                // bisection on the step fraction
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                y_mid.copy_from_slice(&y_new);
                for _ in 0..200 {
                    if (hi - lo) * h_try < 1e-14 {
                        break;
                    }
                    let mid = 0.5 * (lo + hi);
                    let mut trial = vec![0.0; dim];
                    integ.step(&y, mid * h_try, &mut trial);
                    if integ.event(&trial).unwrap() >= 0.0 {
                        hi = mid;
                        y_mid.copy_from_slice(&trial);
                    } else {
                        lo = mid;
                    }
                }
                t += hi * h_try;
                y.copy_from_slice(&y_mid);
                match integ.mode {
                    Mode::Free => {
                        y[1] = 1.0;
                        if y[2] > 1.0 - lambda + tol {
                            integ.mode = Mode::Pinned;
                            integ.project(&mut y);
                            sol.push(t, &y, Annotation::BoundaryHit);
                        } else {
                            integ.project(&mut y);
                        }
                    }
                    Mode::Pinned => {
                        integ.mode = Mode::Free;
                        integ.project(&mut y);
                        sol.push(t, &y, Annotation::BoundaryRelease);
                    }
                }
                continue;
            }
        }

        y.copy_from_slice(&y_new);
        integ.project(&mut y);
        if clipped {
            t = target;
        } else {
            t += h_try;
        }
        if y[kmax] > params.tail_tol {
            return Err(FluidError::TailOverflow {
                level: kmax,
                value: y[kmax],
                time: t,
            });
        }
        if clipped {
            sol.push(t, &y, Annotation::Sample);
            next_out += 1;
        }
        let grow = if err > 0.0 { (0.9 * err.powf(-0.2)).min(5.0) } else { 5.0 };
        h = (h_try * grow).min(params.max_step);
    }
    Ok(sol)
}

impl FluidSolution {
    fn push(&mut self, t: f64, y: &[f64], a: Annotation) {
        self.times.push(t);
        self.states.push(OccupancyVector::project(y.to_vec()));
        self.annotations.push(a);
    }
}
