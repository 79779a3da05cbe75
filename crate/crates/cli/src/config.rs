//! TOML configuration with `[system]`, `[regime]`, `[fluid]` and
//! `[experiment]` sections. Unknown keys are rejected. Any key can be
//! overridden from the environment as `RCPB_<SECTION>_<KEY>`, e.g.
//! `RCPB_SYSTEM_LAMBDA=0.95` or `RCPB_FLUID_OUTPUT_INTERVAL=0.5`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rcpb_core::fluid::FluidParams;
use rcpb_core::model::{ModelError, OccupancyVector, Regime, Schedule, SystemParams};
use rcpb_core::sim::RunConfig;
use serde::Deserialize;

pub const ENV_PREFIX: &str = "RCPB_";
pub const SECTIONS: [&str; 4] = ["system", "regime", "fluid", "experiment"];

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: Option<SystemSection>,
    pub regime: Option<RegimeSection>,
    pub fluid: Option<FluidSection>,
    pub experiment: Option<ExperimentSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub n: Option<usize>,
    pub lambda: Option<f64>,
    /// Overrides the regime's dispatcher memory c(n).
    pub memory: Option<Schedule>,
    /// Overrides the regime's per-server message rate mu(n).
    pub idle_rate: Option<Schedule>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegimeSection {
    pub kind: Option<String>,
    pub c: Option<usize>,
    pub mu: Option<f64>,
    /// Per-server message budget; sets `mu = alpha / (1 - lambda)`.
    pub alpha: Option<f64>,
    pub d: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub horizon: Option<f64>,
    pub truncation: Option<usize>,
    pub output_interval: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub max_step: Option<f64>,
    pub tail_tol: Option<f64>,
    pub boundary_tol: Option<f64>,
    /// `s_1, s_2, ...` at time 0; empty system by default.
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: Option<String>,
    pub preset: Option<String>,
    pub horizon: Option<f64>,
    pub warmup: Option<f64>,
    pub replications: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub levels: Option<usize>,
    pub batches: Option<usize>,
    pub min_samples: Option<u64>,
    /// When set, `simulate` also records the occupancy path at this spacing.
    pub sample_interval: Option<f64>,
    /// Initial `s_1, s_2, ...` for recorded paths.
    pub initial: Option<Vec<f64>>,
    pub lambdas: Option<Vec<f64>>,
    pub ns: Option<Vec<usize>>,
    pub cs: Option<Vec<usize>>,
    pub alphas: Option<Vec<f64>>,
    pub ds: Option<Vec<usize>>,
}

impl Config {
    /// Reads `path` (or starts empty) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?,
            None => String::new(),
        };
        Self::parse(&text, std::env::vars())
    }

    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| anyhow!("invalid config: {e}"))?;
        let mut overrides: Vec<(String, String)> =
            env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (var, raw) in overrides {
            apply_override(&mut table, &var, &raw)?;
        }
        let merged = toml::to_string(&table)?;
        toml::from_str(&merged).map_err(|e| anyhow!("invalid config: {e}"))
    }

    pub fn experiment(&self) -> ExperimentSection {
        self.experiment.clone().unwrap_or_default()
    }

    /// System parameters from `[system]` and `[regime]`.
    pub fn system_params(&self) -> Result<SystemParams> {
        let sys = self.system.as_ref().ok_or_else(|| anyhow!("missing [system] section"))?;
        let reg = self.regime.as_ref().ok_or_else(|| anyhow!("missing [regime] section"))?;
        let lambda = sys.lambda.ok_or_else(|| anyhow!("system.lambda is required"))?;
        let regime = reg.resolve(lambda)?;
        let mut p = SystemParams::new(sys.n.unwrap_or(100), lambda, regime);
        if let Some(m) = sys.memory {
            p = p.with_memory(m);
        }
        if let Some(r) = sys.idle_rate {
            p = p.with_idle_rate(r);
        }
        p.validate().map_err(|e| keyed(e, reg.alpha.is_some()))
    }

    /// Fluid parameters; `lambda` and the regime come from `[system]` and
    /// `[regime]`.
    pub fn fluid_params(&self) -> Result<FluidParams> {
        let sys = self.system.as_ref().ok_or_else(|| anyhow!("missing [system] section"))?;
        let reg = self.regime.as_ref().ok_or_else(|| anyhow!("missing [regime] section"))?;
        let lambda = sys.lambda.ok_or_else(|| anyhow!("system.lambda is required"))?;
        let regime = reg.resolve(lambda)?;
        let f = self.fluid.clone().unwrap_or_default();
        let mut p = FluidParams::new(lambda, regime);
        if let Some(k) = f.truncation {
            p = p.with_truncation(k);
        }
        if let Some(dt) = f.output_interval {
            p = p.with_output_interval(dt);
        }
        macro_rules! set {
            ($($field:ident),*) => { $( if let Some(v) = f.$field { p.$field = v; } )* };
        }
        set!(rtol, atol, max_step, tail_tol, boundary_tol);
        p.validate().map_err(|e| match e {
            ModelError::LambdaOutOfRange(_) => anyhow!("system.lambda: {e}"),
            ModelError::NonPositiveRate { name, .. } if name != "mu" => anyhow!("fluid.{name}: {e}"),
            ModelError::InvalidOccupancy(_) => anyhow!("fluid.truncation: {e}"),
            other => keyed(other, reg.alpha.is_some()),
        })
    }

    pub fn fluid_horizon(&self) -> f64 {
        self.fluid.as_ref().and_then(|f| f.horizon).unwrap_or(100.0)
    }

    pub fn fluid_initial(&self) -> Result<OccupancyVector> {
        let tail = self.fluid.as_ref().and_then(|f| f.initial.clone()).unwrap_or_default();
        occupancy("fluid.initial", &tail)
    }
}

impl RegimeSection {
    pub fn resolve(&self, lambda: f64) -> Result<Regime> {
        let kind = self.kind.as_deref().ok_or_else(|| anyhow!("regime.kind is required"))?;
        let allowed: &[&str] = match kind {
            "constrained" => &["c", "mu", "alpha"],
            "high_memory" => &["mu", "alpha"],
            "high_message" => &["c"],
            "power_of_d" => &["d"],
            "random_routing" | "pull" => &[],
            other => bail!(
                "regime.kind: unknown regime {other:?}; expected one of constrained, high_memory, \
                 high_message, random_routing, power_of_d, pull"
            ),
        };
        for (key, set) in [
            ("c", self.c.is_some()),
            ("mu", self.mu.is_some()),
            ("alpha", self.alpha.is_some()),
            ("d", self.d.is_some()),
        ] {
            if set && !allowed.contains(&key) {
                bail!("regime.{key} does not apply to regime {kind}");
            }
        }
        let mu = || -> Result<f64> {
            match (self.mu, self.alpha) {
                (Some(_), Some(_)) => bail!("regime.alpha conflicts with regime.mu; give one"),
                (Some(mu), None) => Ok(mu),
                (None, Some(alpha)) => Ok(alpha / (1.0 - lambda)),
                (None, None) => bail!("regime.mu (or regime.alpha) is required for {kind}"),
            }
        };
        let c = || self.c.ok_or_else(|| anyhow!("regime.c is required for {kind}"));
        let regime = match kind {
            "constrained" => Regime::Constrained { c: c()?, mu: mu()? },
            "high_memory" => Regime::HighMemory { mu: mu()? },
            "high_message" => Regime::HighMessage { c: c()? },
            "power_of_d" => Regime::PowerOfD { d: self.d.unwrap_or(2) },
            "random_routing" => Regime::RandomRouting,
            _ => Regime::Pull,
        };
        Ok(regime)
    }
}

impl ExperimentSection {
    pub fn run_config(&self, default_horizon: f64) -> RunConfig {
        let mut run = RunConfig::new(self.horizon.unwrap_or(default_horizon));
        if let Some(w) = self.warmup {
            run = run.with_warmup(w);
        }
        if let Some(l) = self.levels {
            run = run.with_levels(l);
        }
        if let Some(b) = self.batches {
            run.batches = b;
        }
        if let Some(m) = self.min_samples {
            run = run.with_min_samples(m);
        }
        run
    }

    /// Explicit `seeds`, or `replications` consecutive seeds from `base`.
    pub fn seeds(&self, base: u64, default_replications: usize) -> Result<Vec<u64>> {
        if let Some(s) = &self.seeds {
            if s.is_empty() {
                bail!("experiment.seeds must not be empty");
            }
            if self.replications.is_some_and(|r| r != s.len()) {
                bail!("experiment.replications disagrees with the length of experiment.seeds");
            }
            let mut sorted = s.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                bail!("experiment.seeds must be distinct");
            }
            return Ok(s.clone());
        }
        let reps = self.replications.unwrap_or(default_replications);
        if reps == 0 {
            bail!("experiment.replications must be positive");
        }
        Ok(rcpb_core::experiments::replication_seeds(base, reps))
    }

    pub fn initial(&self) -> Result<OccupancyVector> {
        occupancy("experiment.initial", self.initial.as_deref().unwrap_or(&[]))
    }
}

fn occupancy(key: &str, tail: &[f64]) -> Result<OccupancyVector> {
    OccupancyVector::from_tail(tail).map_err(|e| anyhow!("{key}: {e}"))
}

/// Attaches the config key responsible for a validation failure.
fn keyed(e: ModelError, alpha_given: bool) -> anyhow::Error {
    let key = match &e {
        ModelError::LambdaOutOfRange(_) => "system.lambda",
        ModelError::NoServers => "system.n",
        ModelError::MemoryExceedsN { .. } => "system.memory (or regime.c)",
        ModelError::NonPositiveRate { name: "mu", .. } if alpha_given => "regime.alpha",
        ModelError::NonPositiveRate { name: "mu", .. } => "regime.mu",
        ModelError::NonPositiveRate { .. } => "system.idle_rate",
        ModelError::InvalidRegime(msg) if msg.contains(" c ") => "regime.c",
        ModelError::InvalidRegime(msg) if msg.contains(" d ") => "regime.d",
        ModelError::InvalidRegime(_) => "regime",
        ModelError::InvalidOccupancy(_) => "initial",
    };
    anyhow!("{key}: {e}")
}

fn apply_override(table: &mut toml::Table, var: &str, raw: &str) -> Result<()> {
    let rest = &var[ENV_PREFIX.len()..].to_ascii_lowercase();
    let (section, key) = SECTIONS
        .iter()
        .find_map(|s| rest.strip_prefix(s).and_then(|k| k.strip_prefix('_')).map(|k| (*s, k)))
        .ok_or_else(|| anyhow!("environment override {var}: expected {ENV_PREFIX}<SECTION>_<KEY>"))?;
    if key.is_empty() {
        bail!("environment override {var}: missing key");
    }
    let value = parse_value(raw);
    let entry = table
        .entry(section)
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let sec = entry
        .as_table_mut()
        .ok_or_else(|| anyhow!("{section} must be a table"))?;
    sec.insert(key.to_string(), value);
    Ok(())
}

/// A TOML literal when it parses as one (`0.5`, `[1, 2]`, `true`), otherwise
/// a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const CONSTRAINED: &str = r#"
[system]
n = 500
lambda = 0.9

[regime]
kind = "constrained"
c = 2
mu = 9.0
"#;

    fn parse(text: &str) -> Result<Config> {
        Config::parse(text, Vec::new())
    }

    #[test]
    fn constrained_example() {
        let p = parse(CONSTRAINED).unwrap().system_params().unwrap();
        assert_eq!(p.regime, Regime::Constrained { c: 2, mu: 9.0 });
        assert_eq!(p.capacity(), 2);
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse("[system]\nlamda = 0.5\n").unwrap_err().to_string();
        assert!(err.contains("lamda"), "{err}");
        let err = parse("[sytem]\n").unwrap_err().to_string();
        assert!(err.contains("sytem"), "{err}");
    }

    #[test]
    fn bad_lambda_names_key() {
        let err = parse(&CONSTRAINED.replace("0.9", "1.5")).unwrap().system_params().unwrap_err();
        assert!(err.to_string().starts_with("system.lambda"), "{err}");
    }

    #[test]
    fn alpha_sets_mu() {
        let text = CONSTRAINED.replace("mu = 9.0", "alpha = 0.9");
        let p = parse(&text).unwrap().system_params().unwrap();
        match p.regime {
            Regime::Constrained { mu, .. } => assert!((mu - 9.0).abs() < 1e-12),
            _ => panic!(),
        }
        let both = CONSTRAINED.replace("mu = 9.0", "mu = 9.0\nalpha = 0.9");
        assert!(parse(&both).unwrap().system_params().is_err());
    }

    #[test]
    fn irrelevant_regime_key_rejected() {
        let err = parse("[system]\nlambda=0.5\n[regime]\nkind=\"pull\"\nc=3\n")
            .unwrap()
            .system_params()
            .unwrap_err();
        assert!(err.to_string().contains("regime.c"));
    }

    #[test]
    fn env_overrides_apply() {
        let env = vec![
            ("RCPB_SYSTEM_LAMBDA".to_string(), "0.95".to_string()),
            ("RCPB_FLUID_OUTPUT_INTERVAL".to_string(), "0.5".to_string()),
            ("RCPB_EXPERIMENT_NAME".to_string(), "from env".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ];
        let cfg = Config::parse(CONSTRAINED, env).unwrap();
        assert_eq!(cfg.system.as_ref().unwrap().lambda, Some(0.95));
        assert_eq!(cfg.fluid_params().unwrap().output_interval, 0.5);
        assert_eq!(cfg.experiment().name.as_deref(), Some("from env"));
    }

    #[test]
    fn env_override_for_unknown_key_rejected() {
        let env = vec![("RCPB_SYSTEM_LAMDA".to_string(), "0.5".to_string())];
        assert!(Config::parse(CONSTRAINED, env).is_err());
        let env = vec![("RCPB_NOPE".to_string(), "1".to_string())];
        assert!(Config::parse(CONSTRAINED, env).is_err());
    }

    #[test]
    fn schedules_parse() {
        let text = format!("{CONSTRAINED}\n[experiment]\nseeds = [4, 5]\n")
            .replace("lambda = 0.9", "lambda = 0.9\nmemory = { kind = \"log\", a = 2.0 }");
        let cfg = parse(&text).unwrap();
        let p = cfg.system_params().unwrap();
        assert_eq!(p.capacity(), (2.0 * 500f64.ln()).floor() as usize);
        assert_eq!(cfg.experiment().seeds(1, 3).unwrap(), vec![4, 5]);
    }

    #[test]
    fn seeds_default_from_base() {
        let e = ExperimentSection::default();
        assert_eq!(e.seeds(7, 3).unwrap(), vec![7, 8, 9]);
        let dup = ExperimentSection { seeds: Some(vec![1, 1]), ..Default::default() };
        assert!(dup.seeds(1, 2).is_err());
    }
}
