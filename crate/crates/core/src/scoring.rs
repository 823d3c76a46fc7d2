//! Proper scoring rules over the binary outcome space `{l, h}`.
//!
//! A scoring rule `PS(s, q)` pays a forecaster who announced the
//! distribution `q` when outcome `s` is realised. The built-in rules are the
//! logarithmic rule (any base `b > 1`) and the Brier/quadratic rule
//! `PS(s, q) = 2 q(s) - |q|^2`. Table rules are affine in `q(h)` per
//! outcome and custom rules wrap an arbitrary closure.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::BinaryPrior;

/// A binary signal, report or outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Signal {
    #[serde(rename = "l")]
    Low,
    #[serde(rename = "h")]
    High,
}

impl Signal {
    pub const ALL: [Signal; 2] = [Signal::Low, Signal::High];

    /// `0` for `l`, `1` for `h`; the action/type index used by game encodings.
    pub fn index(self) -> usize {
        match self {
            Signal::Low => 0,
            Signal::High => 1,
        }
    }

    pub fn from_index(index: usize) -> Option<Signal> {
        match index {
            0 => Some(Signal::Low),
            1 => Some(Signal::High),
            _ => None,
        }
    }

    pub fn flip(self) -> Signal {
        match self {
            Signal::Low => Signal::High,
            Signal::High => Signal::Low,
        }
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Signal::Low => "l",
            Signal::High => "h",
        })
    }
}

/// A distribution on `{l, h}`, stored as the probability of `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryDist {
    p_h: f64,
}

impl BinaryDist {
    pub fn new(p_h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_h) {
            return Err(Error::InvalidDist(p_h));
        }
        Ok(BinaryDist { p_h })
    }

    /// The point mass `delta_s`.
    pub fn point(s: Signal) -> Self {
        BinaryDist {
            p_h: match s {
                Signal::Low => 0.0,
                Signal::High => 1.0,
            },
        }
    }

    pub fn p_h(self) -> f64 {
        self.p_h
    }

    pub fn p_l(self) -> f64 {
        1.0 - self.p_h
    }

    pub fn prob(self, s: Signal) -> f64 {
        match s {
            Signal::Low => self.p_l(),
            Signal::High => self.p_h,
        }
    }

    /// Squared 2-norm `p_h^2 + p_l^2`.
    pub fn norm_sq(self) -> f64 {
        self.p_h * self.p_h + self.p_l() * self.p_l()
    }
}

/// Per-outcome affine scores: `PS(s, q) = intercept_s + slope_s * q(h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineTable {
    /// `[intercept, slope]` for outcome `l`.
    pub l: [f64; 2],
    /// `[intercept, slope]` for outcome `h`.
    pub h: [f64; 2],
}

impl AffineTable {
    pub const ZERO: AffineTable = AffineTable {
        l: [0.0, 0.0],
        h: [0.0, 0.0],
    };
}

type ScoreFn = dyn Fn(Signal, BinaryDist) -> f64 + Send + Sync;

/// A caller-supplied scoring function.
#[derive(Clone)]
pub struct CustomRule {
    name: String,
    strict: bool,
    score: Arc<ScoreFn>,
}

impl CustomRule {
    /// `strict` is the caller's claim about strict properness; it is what
    /// [`ScoringRule::is_strictly_proper`] reports and can be checked with
    /// [`verify_properness`].
    pub fn new<F>(name: impl Into<String>, strict: bool, score: F) -> Self
    where
        F: Fn(Signal, BinaryDist) -> f64 + Send + Sync + 'static,
    {
        CustomRule {
            name: name.into(),
            strict,
            score: Arc::new(score),
        }
    }
}

impl fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomRule")
            .field("name", &self.name)
            .field("strict", &self.strict)
            .finish_non_exhaustive()
    }
}

/// A scoring rule on the binary outcome space.
#[derive(Debug, Clone)]
pub enum ScoringRule {
    /// `log_base(q(s))`; the base must exceed 1.
    Log { base: f64 },
    Brier,
    Table(AffineTable),
    Custom(CustomRule),
}

/// Serializable description of a built-in or table rule, e.g.
/// `{"rule": "brier"}` or `{"rule": "log", "base": 2.718281828459045}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase", deny_unknown_fields)]
pub enum RuleConfig {
    Brier {},
    Log {
        #[serde(default = "natural_base")]
        base: f64,
    },
    Table {
        l: [f64; 2],
        h: [f64; 2],
    },
}

fn natural_base() -> f64 {
    std::f64::consts::E
}

impl ScoringRule {
    /// Log rule with base `e`.
    pub fn log() -> Self {
        ScoringRule::Log {
            base: std::f64::consts::E,
        }
    }

    pub fn log_base(base: f64) -> Result<Self> {
        let rule = ScoringRule::Log { base };
        rule.validate()?;
        Ok(rule)
    }

    /// The rule that pays zero for everything. Proper, not strictly proper.
    pub fn constant_zero() -> Self {
        ScoringRule::Table(AffineTable::ZERO)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScoringRule::Log { base } if !(base.is_finite() && *base > 1.0) => Err(
                Error::InvalidRule(format!("log base must be finite and > 1, got {base}")),
            ),
            ScoringRule::Table(t) if !t.l.iter().chain(&t.h).all(|c| c.is_finite()) => Err(
                Error::InvalidRule("table coefficients must be finite".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> String {
        match self {
            ScoringRule::Log { base } if (*base - std::f64::consts::E).abs() < 1e-15 => {
                "log".into()
            }
            ScoringRule::Log { base } => format!("log(base {base})"),
            ScoringRule::Brier => "brier".into(),
            ScoringRule::Table(_) => "table".into(),
            ScoringRule::Custom(c) => c.name.clone(),
        }
    }

    /// Whether the rule is (claimed to be) strictly proper.
    pub fn is_strictly_proper(&self) -> bool {
        match self {
            ScoringRule::Log { .. } | ScoringRule::Brier => true,
            // Expected score under an affine rule is affine in the report, so
            // it can never have a unique interior maximiser.
            ScoringRule::Table(_) => false,
            ScoringRule::Custom(c) => c.strict,
        }
    }

    /// `PS(outcome, dist)`.
    pub fn score(&self, outcome: Signal, dist: BinaryDist) -> Result<f64> {
        let value = match self {
            ScoringRule::Log { base } => {
                let p = dist.prob(outcome);
                if p <= 0.0 {
                    return Err(Error::LogOfZero);
                }
                p.ln() / base.ln()
            }
            ScoringRule::Brier => 2.0 * dist.prob(outcome) - dist.norm_sq(),
            ScoringRule::Table(t) => {
                let [a, b] = match outcome {
                    Signal::Low => t.l,
                    Signal::High => t.h,
                };
                a + b * dist.p_h()
            }
            ScoringRule::Custom(c) => (c.score)(outcome, dist),
        };
        Ok(value)
    }

    pub fn config(&self) -> Option<RuleConfig> {
        match self {
            ScoringRule::Log { base } => Some(RuleConfig::Log { base: *base }),
            ScoringRule::Brier => Some(RuleConfig::Brier {}),
            ScoringRule::Table(t) => Some(RuleConfig::Table { l: t.l, h: t.h }),
            ScoringRule::Custom(_) => None,
        }
    }
}

impl TryFrom<RuleConfig> for ScoringRule {
    type Error = Error;

    fn try_from(cfg: RuleConfig) -> Result<Self> {
        let rule = match cfg {
            RuleConfig::Brier {} => ScoringRule::Brier,
            RuleConfig::Log { base } => ScoringRule::Log { base },
            RuleConfig::Table { l, h } => ScoringRule::Table(AffineTable { l, h }),
        };
        rule.validate()?;
        Ok(rule)
    }
}

/// `E_{s ~ p}[PS(s, q)]`. Outcomes with zero weight under `p` are skipped,
/// so the log rule only fails when `p` puts mass where `q` does not.
pub fn expected_score(rule: &ScoringRule, p: BinaryDist, q: BinaryDist) -> Result<f64> {
    let mut total = 0.0;
    for s in Signal::ALL {
        let w = p.prob(s);
        if w > 0.0 {
            total += w * rule.score(s, q)?;
        }
    }
    Ok(total)
}

/// Outcome of a grid check of (strict) properness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProperReport {
    pub proper: bool,
    pub strict: bool,
    /// `max over grid pairs of E_p[PS(., q)] - E_p[PS(., p)]`; positive
    /// values are violations of properness.
    pub worst_violation: f64,
    /// Smallest `E_p[PS(., p)] - E_p[PS(., q)]` over pairs with `p != q`.
    pub min_strict_gap: f64,
    /// Pairs skipped because the expected score was unbounded (log rule
    /// reporting zero probability on an outcome that can occur).
    pub skipped: usize,
}

/// Checks `E_p[PS(., p)] >= E_p[PS(., q)]` on the uniform grid
/// `{0, 1/(steps-1), ..., 1}^2`.
pub fn verify_properness(rule: &ScoringRule, grid_steps: usize, tol: f64) -> Result<ProperReport> {
    if grid_steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "grid_steps must be at least 2, got {grid_steps}"
        )));
    }
    let grid: Vec<BinaryDist> = (0..grid_steps)
        .map(|i| BinaryDist::new(i as f64 / (grid_steps - 1) as f64))
        .collect::<Result<_>>()?;

    let mut worst_violation = f64::NEG_INFINITY;
    let mut min_strict_gap = f64::INFINITY;
    let mut skipped = 0;
    for (pi, &p) in grid.iter().enumerate() {
        let truthful = expected_score(rule, p, p)?;
        for (qi, &q) in grid.iter().enumerate() {
            let misreport = match expected_score(rule, p, q) {
                Ok(v) => v,
                Err(Error::LogOfZero) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            worst_violation = worst_violation.max(misreport - truthful);
            if pi != qi {
                min_strict_gap = min_strict_gap.min(truthful - misreport);
            }
        }
    }
    let proper = worst_violation <= tol;
    Ok(ProperReport {
        proper,
        strict: proper && min_strict_gap > tol,
        worst_violation,
        min_strict_gap,
        skipped,
    })
}

/// The four scores `PS(outcome, q_belief)` at the two posteriors of a prior.
///
/// `get(belief, outcome)` is the reward of an agent who reported `belief`
/// when the compared peer reported `outcome`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// `scores[belief][outcome]`, indexed by [`Signal::index`].
    pub scores: [[f64; 2]; 2],
}

impl ScoreTable {
    pub fn new(rule: &ScoringRule, prior: &BinaryPrior) -> Result<Self> {
        let mut scores = [[0.0; 2]; 2];
        for belief in Signal::ALL {
            let q = prior.posterior(belief);
            for outcome in Signal::ALL {
                let v = rule.score(outcome, q)?;
                if !v.is_finite() {
                    return Err(Error::InvalidRule(format!(
                        "score PS({outcome}, q_{belief}) is not finite"
                    )));
                }
                scores[belief.index()][outcome.index()] = v;
            }
        }
        Ok(ScoreTable { scores })
    }

    #[inline]
    pub fn get(&self, belief: Signal, outcome: Signal) -> f64 {
        self.scores[belief.index()][outcome.index()]
    }

    /// Expected score of belief `q_belief` when outcomes follow `q_truth`.
    pub fn expected(&self, prior: &BinaryPrior, truth: Signal, belief: Signal) -> f64 {
        let q = prior.posterior(truth);
        q.p_h() * self.get(belief, Signal::High) + q.p_l() * self.get(belief, Signal::Low)
    }
}

/// Score gaps at the two posteriors of a prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    /// `PS(h, q_h) - PS(h, q_l)`.
    pub delta_h: f64,
    /// `PS(l, q_l) - PS(l, q_h)`.
    pub delta_l: f64,
    /// Largest minus smallest of the four scores.
    pub spread: f64,
    /// `PS(h, q_h) - PS(l, q_h)`.
    pub margin_h: f64,
    /// `PS(l, q_l) - PS(h, q_l)`.
    pub margin_l: f64,
    /// `E_{s ~ q_h}[PS(s, q_h) - PS(s, q_l)]`.
    pub expected_gain_h: f64,
    /// `E_{s ~ q_l}[PS(s, q_l) - PS(s, q_h)]`.
    pub expected_gain_l: f64,
    pub scores: ScoreTable,
}

impl GapReport {
    pub fn from_scores(scores: ScoreTable, prior: &BinaryPrior) -> Self {
        use Signal::{High as H, Low as L};
        let all = scores.scores.iter().flatten().copied();
        let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        GapReport {
            delta_h: scores.get(H, H) - scores.get(L, H),
            delta_l: scores.get(L, L) - scores.get(H, L),
            spread: hi - lo,
            margin_h: scores.get(H, H) - scores.get(H, L),
            margin_l: scores.get(L, L) - scores.get(L, H),
            expected_gain_h: scores.expected(prior, H, H) - scores.expected(prior, H, L),
            expected_gain_l: scores.expected(prior, L, L) - scores.expected(prior, L, H),
            scores,
        }
    }

    /// `delta_h + delta_l`, the curvature constant shared by every
    /// self-play reward.
    pub fn curvature(&self) -> f64 {
        self.delta_h + self.delta_l
    }
}

pub fn gap_report(rule: &ScoringRule, prior: &BinaryPrior) -> Result<GapReport> {
    Ok(GapReport::from_scores(ScoreTable::new(rule, prior)?, prior))
}
