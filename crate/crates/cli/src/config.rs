//! Run configuration: a JSON file, overridden field by field by flags.

use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use collusion_lab::checker::SearchOptions;
use collusion_lab::prior::{make_prior, WorldModel};
use collusion_lab::scoring::RuleConfig;
use collusion_lab::{BinaryPrior, CanonicalDeviation, Exec, ScoringRule, Setting, Signal, Strategy};
use serde::{Deserialize, Serialize};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Budget(u64),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Budget(nodes) => write!(f, "node budget exhausted after {nodes} evaluations"),
        }
    }
}

impl From<collusion_lab::Error> for CliError {
    fn from(e: collusion_lab::Error) -> Self {
        match e {
            collusion_lab::Error::BudgetExceeded { nodes } => CliError::Budget(nodes),
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum ConceptArg {
    ExAnte,
    Bayesian,
    InterimD,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DeviationArg {
    AllH,
    AllL,
    AllLie,
    Truthful,
}

impl DeviationArg {
    pub fn strategy(self) -> Strategy {
        match self {
            DeviationArg::AllH => CanonicalDeviation::AllH.strategy(),
            DeviationArg::AllL => CanonicalDeviation::AllL.strategy(),
            DeviationArg::AllLie => CanonicalDeviation::AllLie.strategy(),
            DeviationArg::Truthful => Strategy::TRUTHFUL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
pub enum SweepParam {
    #[serde(rename = "n")]
    #[value(name = "n")]
    N,
    #[serde(rename = "p_h")]
    #[value(name = "p_h")]
    PH,
    #[serde(rename = "p_h_given_h")]
    #[value(name = "p_h_given_h")]
    PHGivenH,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub param: SweepParam,
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingConfig {
    pub n: Option<usize>,
    pub prior: Option<BinaryPrior>,
    pub world_model: Option<WorldModel>,
    pub rule: Option<RuleConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub setting: SettingConfig,
    pub k: Option<usize>,
    pub concept: Option<ConceptArg>,
    pub deviation: Option<DeviationArg>,
    /// Explicit deviator strategies for `simulate`; overrides `k` and `deviation`.
    pub profile: Option<Vec<Strategy>>,
    /// Coalition signals for `interim_d`.
    pub types: Option<Vec<Signal>>,
    pub grid_steps: Option<usize>,
    pub budget: Option<u64>,
    pub deterministic: Option<bool>,
    pub trials: Option<u64>,
    pub seed: Option<u64>,
    pub sweep: Option<Sweep>,
    pub format: Option<Format>,
    pub tolerance: Option<f64>,
    pub exec: Option<Exec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleName {
    Brier,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecArg {
    Parallel,
    Sequential,
}

/// Flags shared by every subcommand; each overrides the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON run configuration
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Number of agents
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Pr(h)
    #[arg(long, global = true)]
    pub p_h: Option<f64>,
    /// Pr(h | h)
    #[arg(long = "p-hh", global = true)]
    pub p_h_given_h: Option<f64>,
    /// World model as `Pr(state 0),Pr(h | state 0),Pr(h | state 1)`
    #[arg(long, global = true, value_delimiter = ',')]
    pub world_model: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub rule: Option<RuleName>,
    /// Logarithm base for `--rule log`
    #[arg(long, global = true)]
    pub log_base: Option<f64>,
    /// Coalition size (bound)
    #[arg(long, short, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub concept: Option<ConceptArg>,
    #[arg(long, global = true)]
    pub deviation: Option<DeviationArg>,
    /// Coalition signals for interim_d, e.g. `h,l`
    #[arg(long, global = true, value_delimiter = ',')]
    pub types: Option<Vec<String>>,
    #[arg(long, global = true)]
    pub grid_steps: Option<usize>,
    /// Maximum utility evaluations per search
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Return any certificate rather than the first in enumeration order
    #[arg(long, global = true)]
    pub fast: bool,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Sweep parameter for `scan`
    #[arg(long, global = true)]
    pub sweep: Option<SweepParam>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub from: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub to: Option<f64>,
    #[arg(long, global = true)]
    pub step: Option<f64>,
    #[arg(long, global = true)]
    pub format: Option<Format>,
    /// Numerical tolerance [default: 1e-9]
    #[arg(long, global = true)]
    pub tolerance: Option<f64>,
    #[arg(long, global = true)]
    pub exec: Option<ExecArg>,
}

/// Parses a config file, reporting the line and column of any error.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    parse(&text, &path.display().to_string())
}

pub fn parse<T: serde::de::DeserializeOwned>(text: &str, origin: &str) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        let msg = msg.rsplit_once(" at line ").map_or(msg.as_str(), |(m, _)| m);
        config_err(format!("{origin}:{}:{}: {msg}", e.line(), e.column()))
    })
}

fn reference_prior() -> BinaryPrior {
    make_prior(2.0 / 3.0, 0.8).expect("valid prior")
}

impl RunConfig {
    /// File values (if any) with flags applied on top.
    pub fn resolve(flags: &Flags) -> CliResult<RunConfig> {
        let mut cfg = match &flags.config {
            Some(p) => load(p)?,
            None => RunConfig::default(),
        };
        let s = &mut cfg.setting;
        if flags.n.is_some() {
            s.n = flags.n;
        }
        if flags.p_h.is_some() || flags.p_h_given_h.is_some() {
            let base = s.prior.unwrap_or_else(reference_prior);
            let p_h = flags.p_h.unwrap_or(base.p_h());
            let p_hh = flags.p_h_given_h.unwrap_or(base.p_h_given_h());
            s.prior = Some(make_prior(p_h, p_hh)?);
            s.world_model = None;
        }
        if let Some(w) = &flags.world_model {
            if w.len() != 3 {
                return Err(config_err(format!("--world-model takes 3 numbers, got {}", w.len())));
            }
            s.world_model = Some(WorldModel::new([w[0], 1.0 - w[0]], [w[1], w[2]])?);
            s.prior = None;
        }
        match (flags.rule, flags.log_base) {
            (Some(RuleName::Brier), None) => s.rule = Some(RuleConfig::Brier {}),
            (Some(RuleName::Brier), Some(_)) => return Err(config_err("--log-base needs --rule log")),
            (Some(RuleName::Log), base) | (None, base @ Some(_)) => {
                s.rule = Some(RuleConfig::Log { base: base.unwrap_or(std::f64::consts::E) })
            }
            (None, None) => {}
        }
        macro_rules! over {
            ($($field:ident),*) => { $( if flags.$field.is_some() { cfg.$field = flags.$field; } )* };
        }
        over!(k, concept, deviation, grid_steps, budget, trials, seed, format, tolerance);
        if flags.fast {
            cfg.deterministic = Some(false);
        }
        if let Some(e) = flags.exec {
            cfg.exec = Some(match e {
                ExecArg::Parallel => Exec::Parallel,
                ExecArg::Sequential => Exec::Sequential,
            });
        }
        if let Some(types) = &flags.types {
            let parsed = types
                .iter()
                .map(|t| match t.trim() {
                    "h" => Ok(Signal::High),
                    "l" => Ok(Signal::Low),
                    other => Err(config_err(format!("signal must be h or l, got {other:?}"))),
                })
                .collect::<CliResult<Vec<_>>>()?;
            cfg.types = Some(parsed);
        }
        if let Some(param) = flags.sweep {
            let (from, to, step) = match (flags.from, flags.to, flags.step) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(config_err("--sweep needs --from, --to and --step")),
            };
            cfg.sweep = Some(Sweep { param, from, to, step });
        }
        if let Some(t) = cfg.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(config_err(format!("tolerance must be finite and non-negative, got {t}")));
            }
        }
        Ok(cfg)
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance.unwrap_or(collusion_lab::DEFAULT_TOLERANCE)
    }

    pub fn exec(&self) -> Exec {
        self.exec.unwrap_or_default()
    }

    pub fn rule(&self) -> CliResult<ScoringRule> {
        Ok(ScoringRule::try_from(self.setting.rule.unwrap_or(RuleConfig::Brier {}))?)
    }

    pub fn prior(&self) -> CliResult<BinaryPrior> {
        match (&self.setting.prior, &self.setting.world_model) {
            (Some(_), Some(_)) => Err(config_err("setting takes a prior or a world_model, not both")),
            (Some(p), None) => Ok(*p),
            (None, Some(wm)) => Ok(collusion_lab::prior::induce_prior(wm)?),
            (None, None) => Ok(reference_prior()),
        }
    }

    /// The configured setting; defaults to 100 agents, Pr(h) = 2/3,
    /// Pr(h|h) = 0.8 and the Brier rule.
    pub fn setting(&self) -> CliResult<Setting> {
        let n = self.setting.n.unwrap_or(100);
        let rule = self.rule()?;
        self.prior()?;
        let s = match self.setting.world_model {
            Some(wm) => Setting::from_world_model(n, wm, rule)?,
            None => Setting::new(n, self.prior()?, rule)?,
        };
        Ok(s.with_tolerance(self.tolerance())?)
    }

    pub fn search_options(&self) -> SearchOptions {
        let d = SearchOptions::default();
        SearchOptions {
            grid_steps: self.grid_steps.unwrap_or(d.grid_steps),
            budget: self.budget.unwrap_or(d.budget),
            deterministic: self.deterministic.unwrap_or(d.deterministic),
            exec: self.exec(),
            tolerance: self.tolerance(),
        }
    }

    pub fn require_k(&self) -> CliResult<usize> {
        match self.k {
            Some(0) => Err(config_err("k must be at least 1")),
            Some(k) => Ok(k),
            None => Err(config_err("k is required")),
        }
    }
}
