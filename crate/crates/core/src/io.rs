//! Shared helpers for the CSV and key-value files written by every module.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::model::{Regime, SystemParams};

/// Version tag recorded in every output header.
pub fn version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// One-line description of a parameter set.
pub fn describe_params(params: &SystemParams) -> String {
    let mut s = format!("n={} lambda={} regime={}", params.n, params.lambda, params.regime.name());
    match params.regime {
        Regime::Constrained { c, mu } => write!(s, " c={c} mu={mu}").unwrap(),
        Regime::HighMemory { mu } => write!(s, " mu={mu}").unwrap(),
        Regime::HighMessage { c } => write!(s, " c={c}").unwrap(),
        Regime::PowerOfD { d } => write!(s, " d={d}").unwrap(),
        Regime::RandomRouting | Regime::Pull => {}
    }
    write!(s, " c(n)={} mu(n)={}", params.capacity(), params.message_rate()).unwrap();
    s
}

/// `# rcpb <version> seed=<seed> <fields>` header comment line.
pub fn write_header<W: Write>(w: &mut W, seed: Option<u64>, fields: &str) -> io::Result<()> {
    match seed {
        Some(seed) => writeln!(w, "# rcpb {} seed={} {}", version(), seed, fields),
        None => writeln!(w, "# rcpb {} {}", version(), fields),
    }
}

/// CSV reader that skips `#` header lines.
pub fn csv_reader<R: io::Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r)
}

/// `key=value` lines, in the given order.
pub fn write_key_values<W: Write>(w: &mut W, pairs: &[(&str, String)]) -> io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

/// Parses `key=value` lines, ignoring blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('=').map(|(k, v)| (k.trim().to_string(), v.trim().to_string())))
        .collect()
}
