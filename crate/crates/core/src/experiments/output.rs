//! Scenario directory layout: `scenario.meta`, per-point CSVs under
//! `points/`, `summary.csv`, and a declarative `plot.spec`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::ExperimentError;
use crate::io::{csv_reader, write_header, write_key_values};

/// Rows of any serializable table after a `#` header line.
pub fn write_table<W: Write, T: Serialize>(mut w: W, fields: &str, rows: &[T]) -> io::Result<()> {
    write_header(&mut w, None, fields)?;
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(io::Error::other)?;
    }
    out.flush()
}

pub fn read_table<R: Read, T: DeserializeOwned>(r: R) -> io::Result<Vec<T>> {
    csv_reader(r)
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .map_err(io::Error::other)
}

/// One series of a plot: `y` (with optional error column) against `x`,
/// restricted to rows where `filter_column == filter_value`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub y: String,
    pub error: Option<String>,
    pub filter: Option<(String, String)>,
    pub style: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub data: String,
    pub x: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

impl PlotSpec {
    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        write_header(&mut w, None, "plot")?;
        write_key_values(
            &mut w,
            &[
                ("title", self.title.clone()),
                ("data", self.data.clone()),
                ("x", self.x.clone()),
                ("x_label", self.x_label.clone()),
                ("y_label", self.y_label.clone()),
                ("y_scale", if self.log_y { "log" } else { "linear" }.into()),
            ],
        )?;
        for s in &self.series {
            writeln!(w)?;
            writeln!(w, "[series]")?;
            let mut pairs = vec![("label", s.label.clone()), ("y", s.y.clone())];
            if let Some(e) = &s.error {
                pairs.push(("error", e.clone()));
            }
            if let Some((col, val)) = &s.filter {
                pairs.push(("where", format!("{col}=={val}")));
            }
            pairs.push(("style", s.style.clone()));
            write_key_values(&mut w, &pairs)?;
        }
        Ok(())
    }
}

/// Writes into a scenario output directory, creating it on demand.
#[derive(Debug, Clone)]
pub struct ScenarioDir {
    root: PathBuf,
}

impl ScenarioDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, ExperimentError> {
        let root = root.into();
        fs::create_dir_all(root.join("points")).map_err(|e| io_err(&root, e))?;
        Ok(ScenarioDir { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Opens `rel` for writing and runs `f` on a buffered writer.
    pub fn write_with(
        &self,
        rel: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    ) -> Result<PathBuf, ExperimentError> {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| io_err(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| io_err(&path, e))?;
        Ok(path)
    }

    pub fn write_meta(&self, pairs: &[(&str, String)]) -> Result<PathBuf, ExperimentError> {
        self.write_with("scenario.meta", |w| {
            write_header(w, None, "scenario")?;
            write_key_values(w, pairs)
        })
    }

    pub fn write_summary<T: Serialize>(&self, fields: &str, rows: &[T]) -> Result<PathBuf, ExperimentError> {
        self.write_with("summary.csv", |w| write_table(w, fields, rows))
    }

    pub fn write_point<T: Serialize>(&self, name: &str, fields: &str, rows: &[T]) -> Result<PathBuf, ExperimentError> {
        self.write_with(&format!("points/{name}.csv"), |w| write_table(w, fields, rows))
    }

    pub fn write_plot(&self, spec: &PlotSpec) -> Result<PathBuf, ExperimentError> {
        self.write_with("plot.spec", |w| spec.write(w))
    }
}

pub(crate) fn io_err(path: &Path, source: io::Error) -> ExperimentError {
    ExperimentError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Delay against `ln(1/(1-lambda))`, one series per policy plus the two
/// formula curves.
pub fn figure4_plot() -> PlotSpec {
    let policy = |p: &str| Some(("policy".to_string(), p.to_string()));
    PlotSpec {
        title: "Average delay vs load".into(),
        data: "summary.csv".into(),
        x: "x".into(),
        x_label: "log(1/(1-lambda))".into(),
        y_label: "mean waiting time".into(),
        log_y: false,
        series: vec![
            Series {
                label: "power-of-2 (sim)".into(),
                y: "sim_delay".into(),
                error: Some("ci_half_width".into()),
                filter: policy("power_of_d"),
                style: "marker=circle color=red".into(),
            },
            Series {
                label: "RCPB (sim)".into(),
                y: "sim_delay".into(),
                error: Some("ci_half_width".into()),
                filter: policy("rcpb"),
                style: "marker=square color=blue".into(),
            },
            Series {
                label: "PULL (sim)".into(),
                y: "sim_delay".into(),
                error: Some("ci_half_width".into()),
                filter: policy("pull"),
                style: "marker=triangle color=black".into(),
            },
            Series {
                label: "RCPB fluid".into(),
                y: "predicted".into(),
                error: None,
                filter: policy("rcpb"),
                style: "line=dashed color=blue".into(),
            },
            Series {
                label: "power-of-2 formula".into(),
                y: "predicted".into(),
                error: None,
                filter: policy("power_of_d"),
                style: "line=dashed color=red".into(),
            },
        ],
    }
}

/// `s_1, s_2, s_3` against time, events marked.
pub fn figure3_plot(data: &str) -> PlotSpec {
    let line = |i: usize| Series {
        label: format!("s_{i}"),
        y: format!("s_{i}"),
        error: None,
        filter: None,
        style: "line=solid".into(),
    };
    let mut series = vec![line(1), line(2), line(3)];
    series.push(Series {
        label: "non-differentiable points".into(),
        y: "s_1".into(),
        error: None,
        filter: Some(("event".into(), "!sample".into())),
        style: "marker=x".into(),
    });
    PlotSpec {
        title: "High Message fluid trajectory".into(),
        data: data.into(),
        x: "t".into(),
        x_label: "t".into(),
        y_label: "s_i(t)".into(),
        log_y: false,
        series,
    }
}

pub fn convergence_plot() -> PlotSpec {
    PlotSpec {
        title: "Trajectory gap vs n".into(),
        data: "summary.csv".into(),
        x: "n".into(),
        x_label: "n".into(),
        y_label: "sup_t ||S^n(t) - s(t)||_w".into(),
        log_y: true,
        series: vec![Series {
            label: "mean gap".into(),
            y: "mean_gap".into(),
            error: Some("half_width".into()),
            filter: None,
            style: "marker=circle line=solid".into(),
        }],
    }
}
