//! Closed-form coalition thresholds and checks of the canonical deviations.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::mechanism::{member_utilities, truthful_ex_ante, truthful_interim, DeviationProfile, Setting, Strategy};
use crate::prior::{make_prior, BinaryPrior};
use crate::scoring::{gap_report, GapReport, ScoringRule};
use crate::DEFAULT_TOLERANCE;

/// Values this close to an integer are treated as that integer before
/// rounding.
pub const SNAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Concept {
    ExAnte,
    Bayesian,
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Concept::ExAnte => "ex_ante",
            Concept::Bayesian => "bayesian",
        })
    }
}

/// The corner profiles that bind in the threshold analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalDeviation {
    #[serde(rename = "all_h")]
    AllH,
    #[serde(rename = "all_l")]
    AllL,
    #[serde(rename = "all_lie")]
    AllLie,
}

impl CanonicalDeviation {
    pub const ALL: [CanonicalDeviation; 3] = [Self::AllH, Self::AllL, Self::AllLie];

    pub fn strategy(self) -> Strategy {
        match self {
            Self::AllH => Strategy::ALWAYS_H,
            Self::AllL => Strategy::ALWAYS_L,
            Self::AllLie => Strategy::LIAR,
        }
    }
}

impl fmt::Display for CanonicalDeviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::AllH => "all_h",
            Self::AllL => "all_l",
            Self::AllLie => "all_lie",
        })
    }
}

/// A per-side threshold, or `Unbounded` when its denominator is not
/// positive. Serializes as an integer or the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SideThreshold {
    Finite(usize),
    Unbounded,
}

impl SideThreshold {
    /// The value entering `min(k_h, k_l, n)`.
    pub fn capped(self, n: usize) -> usize {
        match self {
            SideThreshold::Finite(k) => k.min(n),
            SideThreshold::Unbounded => n,
        }
    }

    pub fn finite(self) -> Option<usize> {
        match self {
            SideThreshold::Finite(k) => Some(k),
            SideThreshold::Unbounded => None,
        }
    }
}

impl fmt::Display for SideThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SideThreshold::Finite(k) => write!(f, "{k}"),
            SideThreshold::Unbounded => f.write_str("inf"),
        }
    }
}

impl Serialize for SideThreshold {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SideThreshold::Finite(k) => s.serialize_u64(*k as u64),
            SideThreshold::Unbounded => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for SideThreshold {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Str(String),
        }
        match Repr::deserialize(de)? {
            Repr::Int(k) => Ok(SideThreshold::Finite(k as usize)),
            Repr::Str(s) if s == "inf" => Ok(SideThreshold::Unbounded),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("expected integer or \"inf\", got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub concept: Concept,
    pub n: usize,
    pub k_h: SideThreshold,
    pub k_l: SideThreshold,
    /// `min(k_h, k_l, n)`, unbounded sides counting as `n`.
    pub k: usize,
    pub numerator_h: f64,
    pub denominator_h: f64,
    pub numerator_l: f64,
    pub denominator_l: f64,
}

fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP_TOLERANCE {
        r
    } else {
        x
    }
}

fn to_count(x: f64) -> usize {
    if x <= 0.0 {
        0
    } else {
        x as usize
    }
}

fn floor_plus_one(num: f64, den: f64, tol: f64) -> SideThreshold {
    if den > tol {
        SideThreshold::Finite(to_count(snap(num / den).floor()) + 1)
    } else {
        SideThreshold::Unbounded
    }
}

fn ceil_side(num: f64, den: f64, tol: f64) -> SideThreshold {
    if den > tol {
        SideThreshold::Finite(to_count(snap(num / den).ceil()).max(1))
    } else {
        SideThreshold::Unbounded
    }
}

/// The thresholds assume truthful reporting is strictly better than any
/// unilateral misreport; that fails when an expected gain is not positive.
fn checked_gaps(setting: &Setting) -> Result<GapReport> {
    let g = setting.gaps();
    let tol = setting.tolerance();
    if g.expected_gain_h <= tol || g.expected_gain_l <= tol {
        return Err(Error::InvalidSetting(format!(
            "rule {} is not strictly proper on this prior (expected gains {}, {})",
            setting.rule().name(),
            g.expected_gain_h,
            g.expected_gain_l
        )));
    }
    Ok(g)
}

pub fn k_ex_ante(setting: &Setting) -> Result<ThresholdReport> {
    let g = checked_gaps(setting)?;
    let n = setting.n();
    let tol = setting.tolerance();
    let m = (n - 1) as f64;
    let (num_h, den_h) = (m * g.expected_gain_l, g.margin_h);
    let (num_l, den_l) = (m * g.expected_gain_h, g.margin_l);
    let k_h = floor_plus_one(num_h, den_h, tol);
    let k_l = floor_plus_one(num_l, den_l, tol);
    Ok(ThresholdReport {
        concept: Concept::ExAnte,
        n,
        k_h,
        k_l,
        k: k_h.capped(n).min(k_l.capped(n)),
        numerator_h: num_h,
        denominator_h: den_h,
        numerator_l: num_l,
        denominator_l: den_l,
    })
}

pub fn k_bayesian(setting: &Setting) -> Result<ThresholdReport> {
    let g = checked_gaps(setting)?;
    let n = setting.n();
    let tol = setting.tolerance();
    let p = setting.prior();
    let m = (n - 1) as f64;
    let (num_h, den_h) = (m * g.expected_gain_l, p.p_l_given_l() * g.margin_h);
    let (num_l, den_l) = (m * g.expected_gain_h, p.p_h_given_h() * g.margin_l);
    let k_h = ceil_side(num_h, den_h, tol);
    let k_l = ceil_side(num_l, den_l, tol);
    Ok(ThresholdReport {
        concept: Concept::Bayesian,
        n,
        k_h,
        k_l,
        k: k_h.capped(n).min(k_l.capped(n)),
        numerator_h: num_h,
        denominator_h: den_h,
        numerator_l: num_l,
        denominator_l: den_l,
    })
}

pub fn threshold(setting: &Setting, concept: Concept) -> Result<ThresholdReport> {
    match concept {
        Concept::ExAnte => k_ex_ante(setting),
        Concept::Bayesian => k_bayesian(setting),
    }
}

/// Coalition size at which every member lying about its signal first pays
/// off ex-ante; not capped at `n`.
pub fn liar_threshold(setting: &Setting) -> SideThreshold {
    let g = setting.gaps();
    let p = setting.prior();
    let num = p.p_h() * g.expected_gain_h + p.p_l() * g.expected_gain_l;
    let den = p.p_h() * (p.p_h_given_h() - p.p_l_given_h()) * g.margin_l
        + p.p_l() * (p.p_l_given_l() - p.p_h_given_l()) * g.margin_h;
    floor_plus_one((setting.n() - 1) as f64 * num, den, setting.tolerance())
}

/// The two bounding constants `[b_h, b_l]` at agent count `n`.
pub fn b_bar(gaps: &GapReport, n: usize) -> [f64; 2] {
    let c = gaps.curvature();
    let m = (n.max(2) - 1) as f64;
    [
        4.0 * gaps.spread * (c + gaps.margin_l) / (m * c * gaps.expected_gain_h),
        4.0 * gaps.spread * (c + gaps.margin_h) / (m * c * gaps.expected_gain_l),
    ]
}

/// Truth values of the six lower-bound conditions at `n`, in order:
/// `b_h < 1/4`, the conditional `b_h` margin bound, the `b_h` gain bound,
/// then the same three for `b_l`. Strict inequalities must clear `tol`,
/// weak ones may miss by `tol`.
pub fn n_zero_conditions(prior: &BinaryPrior, gaps: &GapReport, n: usize, tol: f64) -> [bool; 6] {
    let c = gaps.curvature();
    let [b_h, b_l] = b_bar(gaps, n);
    [
        b_h < 0.25 - tol,
        gaps.margin_h <= tol || b_h <= gaps.margin_h / c + tol,
        b_h <= gaps.expected_gain_h / (prior.p_h_given_h() * c) + tol,
        b_l < 0.25 - tol,
        gaps.margin_l <= tol || b_l <= gaps.margin_l / c + tol,
        b_l <= gaps.expected_gain_l / (prior.p_l_given_l() * c) + tol,
    ]
}

/// Smallest `n >= 2` satisfying all six conditions. The conditions only
/// tighten as `n` shrinks, so this is also the point from which they hold.
pub fn n_zero(prior: &BinaryPrior, rule: &ScoringRule) -> Result<usize> {
    n_zero_with_tolerance(prior, rule, DEFAULT_TOLERANCE)
}

pub fn n_zero_with_tolerance(prior: &BinaryPrior, rule: &ScoringRule, tol: f64) -> Result<usize> {
    let g = gap_report(rule, prior)?;
    let c = g.curvature();
    if !(c > 0.0) || !(g.expected_gain_h > 0.0) || !(g.expected_gain_l > 0.0) {
        return Err(Error::NoFiniteN(format!(
            "curvature {c} and expected gains {}, {} must all be positive",
            g.expected_gain_h, g.expected_gain_l
        )));
    }
    // A / (n - 1) < 1/4 needs n - 1 > 4A; A / (n - 1) <= B needs n - 1 >= A / B
    let [a_h, a_l] = b_bar(&g, 2);
    let mut need = vec![4.0 * a_h, 4.0 * a_l];
    need.push(a_h / (g.expected_gain_h / (prior.p_h_given_h() * c)));
    need.push(a_l / (g.expected_gain_l / (prior.p_l_given_l() * c)));
    if g.margin_h > tol {
        need.push(a_h / (g.margin_h / c));
    }
    if g.margin_l > tol {
        need.push(a_l / (g.margin_l / c));
    }
    let worst = need.iter().copied().fold(0.0, f64::max);
    if !worst.is_finite() || worst > 1e15 {
        return Err(Error::NoFiniteN(format!("required n - 1 >= {worst} is not representable")));
    }
    let holds = |n: usize| n_zero_conditions(prior, &g, n, tol).iter().all(|b| *b);
    let mut n = (worst.floor() as usize + 1).max(2);
    while !holds(n) {
        n += 1;
    }
    while n > 2 && holds(n - 1) {
        n -= 1;
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyVerdict {
    pub k: usize,
    pub deviation: CanonicalDeviation,
    pub concept: Concept,
    pub succeeded: bool,
    /// Per member: one ex-ante delta, or interim deltas `[given l, given h]`.
    pub deltas: Vec<Vec<f64>>,
}

/// "Weakly better for all, strictly better for one" under `tol`.
pub fn deviation_succeeds<'a>(deltas: impl IntoIterator<Item = &'a f64>, tol: f64) -> bool {
    let mut strict = false;
    for d in deltas {
        if *d < -tol {
            return false;
        }
        strict |= *d > tol;
    }
    strict
}

/// Tests whether `k` agents all playing `deviation` profit against
/// universal truth-telling.
pub fn dichotomy_check(
    setting: &Setting,
    k: usize,
    deviation: CanonicalDeviation,
    concept: Concept,
) -> Result<DichotomyVerdict> {
    let profile = DeviationProfile::uniform(k, deviation.strategy());
    let members = member_utilities(setting, &profile)?;
    let deltas: Vec<Vec<f64>> = match concept {
        Concept::ExAnte => {
            let base = truthful_ex_ante(setting);
            members.iter().map(|m| vec![m.ex_ante - base]).collect()
        }
        Concept::Bayesian => {
            let base = truthful_interim(setting);
            members
                .iter()
                .map(|m| vec![m.interim[0] - base[0], m.interim[1] - base[1]])
                .collect()
        }
    };
    let succeeded = deviation_succeeds(deltas.iter().flatten(), setting.tolerance());
    Ok(DichotomyVerdict {
        k,
        deviation,
        concept,
        succeeded,
        deltas,
    })
}

/// Smallest coalition size at which some canonical deviation succeeds,
/// with the first such deviation in [`CanonicalDeviation::ALL`] order.
pub fn first_canonical_success(setting: &Setting, concept: Concept) -> Result<Option<(usize, CanonicalDeviation)>> {
    for k in 1..=setting.n() {
        for dev in CanonicalDeviation::ALL {
            if dichotomy_check(setting, k, dev, concept)?.succeeded {
                return Ok(Some((k, dev)));
            }
        }
    }
    Ok(None)
}

/// One point of a threshold sweep.
#[derive(Debug, Clone)]
pub struct ScanPoint {
    pub n: usize,
    pub p_h: f64,
    pub p_h_given_h: f64,
    pub rule: ScoringRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub n: usize,
    pub ex_ante: ThresholdReport,
    pub bayesian: ThresholdReport,
    pub n_zero: usize,
}

fn scan_row(point: &ScanPoint) -> Result<ScanRow> {
    let prior = make_prior(point.p_h, point.p_h_given_h)?;
    let setting = Setting::new(point.n, prior, point.rule.clone())?;
    Ok(ScanRow {
        n: point.n,
        ex_ante: k_ex_ante(&setting)?,
        bayesian: k_bayesian(&setting)?,
        n_zero: n_zero(&prior, &point.rule)?,
    })
}

/// Thresholds at every point, in input order. Invalid points yield their
/// error instead of a row.
pub fn scan(points: &[ScanPoint], exec: Exec) -> Vec<Result<ScanRow>> {
    map_indexed(exec, points.len(), |i| scan_row(&points[i]))
}
