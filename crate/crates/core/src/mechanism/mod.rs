//! The derandomized peer prediction mechanism: every agent is paid the
//! average of `PS(r_j, q_{r_i})` over all other agents `j`.

mod simulate;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prior::{induce_prior, BinaryPrior, WorldModel};
use crate::scoring::{GapReport, ScoreTable, ScoringRule, Signal};
use crate::DEFAULT_TOLERANCE;

pub use simulate::{simulate, RoleEstimate, SimulationOptions, SimulationReport, BLOCK_SIZE};

/// Probabilities of reporting `h` after observing `l` and `h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Strategy {
    #[serde(rename = "bl")]
    pub beta_l: f64,
    #[serde(rename = "bh")]
    pub beta_h: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StrategyRepr {
    bl: f64,
    bh: f64,
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = StrategyRepr::deserialize(de)?;
        Strategy::new(r.bl, r.bh).map_err(serde::de::Error::custom)
    }
}

impl Strategy {
    pub const TRUTHFUL: Strategy = Strategy { beta_l: 0.0, beta_h: 1.0 };
    pub const ALWAYS_H: Strategy = Strategy { beta_l: 1.0, beta_h: 1.0 };
    pub const ALWAYS_L: Strategy = Strategy { beta_l: 0.0, beta_h: 0.0 };
    pub const LIAR: Strategy = Strategy { beta_l: 1.0, beta_h: 0.0 };

    pub fn new(beta_l: f64, beta_h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_l) || !(0.0..=1.0).contains(&beta_h) {
            return Err(Error::InvalidStrategy { beta_l, beta_h });
        }
        Ok(Strategy { beta_l, beta_h })
    }

    /// Probability of reporting `h` given signal `s`.
    #[inline]
    pub fn report_h_prob(&self, s: Signal) -> f64 {
        match s {
            Signal::High => self.beta_h,
            Signal::Low => self.beta_l,
        }
    }

    /// Probability of reporting `r` given signal `s`.
    #[inline]
    pub fn report_prob(&self, s: Signal, r: Signal) -> f64 {
        let p = self.report_h_prob(s);
        match r {
            Signal::High => p,
            Signal::Low => 1.0 - p,
        }
    }
}

/// Mechanism parameters: agent count, prior, scoring rule.
#[derive(Debug, Clone)]
pub struct Setting {
    n: usize,
    prior: BinaryPrior,
    rule: ScoringRule,
    scores: ScoreTable,
    world_model: Option<WorldModel>,
    tolerance: f64,
}

impl Setting {
    pub fn new(n: usize, prior: BinaryPrior, rule: ScoringRule) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSetting(format!("n = {n}, need at least 2 agents")));
        }
        rule.validate()?;
        let scores = ScoreTable::new(&rule, &prior)?;
        Ok(Setting {
            n,
            prior,
            rule,
            scores,
            world_model: None,
            tolerance: DEFAULT_TOLERANCE,
        })
    }

    /// A setting whose prior is induced by `wm`; required for simulation.
    pub fn from_world_model(n: usize, wm: WorldModel, rule: ScoringRule) -> Result<Self> {
        let mut s = Setting::new(n, induce_prior(&wm)?, rule)?;
        s.world_model = Some(wm);
        Ok(s)
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Result<Self> {
        if !(tolerance >= 0.0 && tolerance.is_finite()) {
            return Err(Error::InvalidSetting(format!("tolerance {tolerance} must be finite and >= 0")));
        }
        self.tolerance = tolerance;
        Ok(self)
    }

    /// Same prior and rule with a different agent count.
    pub fn with_n(&self, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSetting(format!("n = {n}, need at least 2 agents")));
        }
        let mut s = self.clone();
        s.n = n;
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn prior(&self) -> &BinaryPrior {
        &self.prior
    }
    pub fn rule(&self) -> &ScoringRule {
        &self.rule
    }
    pub fn scores(&self) -> &ScoreTable {
        &self.scores
    }
    pub fn world_model(&self) -> Option<&WorldModel> {
        self.world_model.as_ref()
    }
    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
    pub fn gaps(&self) -> GapReport {
        GapReport::from_scores(self.scores, &self.prior)
    }
}

/// The deviating coalition; every agent not listed reports truthfully.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationProfile {
    pub deviators: Vec<Strategy>,
}

impl DeviationProfile {
    pub fn new(deviators: Vec<Strategy>) -> Self {
        DeviationProfile { deviators }
    }

    /// `k` deviators all playing `sigma`.
    pub fn uniform(k: usize, sigma: Strategy) -> Self {
        DeviationProfile {
            deviators: vec![sigma; k],
        }
    }

    pub fn k(&self) -> usize {
        self.deviators.len()
    }

    /// Component-wise mean of the deviators' strategies.
    pub fn average_strategy(&self) -> Option<Strategy> {
        if self.deviators.is_empty() {
            return None;
        }
        let k = self.deviators.len() as f64;
        let (bl, bh) = self
            .deviators
            .iter()
            .fold((0.0, 0.0), |(a, b), s| (a + s.beta_l, b + s.beta_h));
        Some(Strategy {
            beta_l: bl / k,
            beta_h: bh / k,
        })
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let k = self.k();
        if k == 0 || k > n {
            return Err(Error::InvalidProfile(format!(
                "coalition size {k} must lie in 1..={n}"
            )));
        }
        Ok(())
    }
}

/// Whose utility to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Position in [`DeviationProfile::deviators`].
    Deviator(usize),
    /// Any agent outside the coalition.
    Truthful,
}

/// Aggregate of a group of peers: since a peer's reward contribution is
/// affine in its strategy, only the count and the strategy sums matter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct PeerMass {
    pub count: f64,
    pub sum_bl: f64,
    pub sum_bh: f64,
}

impl PeerMass {
    pub fn of(count: f64, sigma: Strategy) -> Self {
        PeerMass {
            count,
            sum_bl: count * sigma.beta_l,
            sum_bh: count * sigma.beta_h,
        }
    }

    pub fn plus(self, o: PeerMass) -> Self {
        PeerMass {
            count: self.count + o.count,
            sum_bl: self.sum_bl + o.sum_bl,
            sum_bh: self.sum_bh + o.sum_bh,
        }
    }

    pub fn minus(self, sigma: Strategy) -> Self {
        PeerMass {
            count: self.count - 1.0,
            sum_bl: self.sum_bl - sigma.beta_l,
            sum_bh: self.sum_bh - sigma.beta_h,
        }
    }

    fn sum_for(&self, s: Signal) -> f64 {
        match s {
            Signal::High => self.sum_bh,
            Signal::Low => self.sum_bl,
        }
    }
}

/// Summed reward over the peers in `mass` for an agent whose peers' signals
/// are drawn with weights `weight(s_j)` and who reports `h` w.p. `own_h`.
fn reward_sum(scores: &ScoreTable, own_h: f64, mass: PeerMass, weight: impl Fn(Signal) -> f64) -> f64 {
    let mut total = 0.0;
    for r_i in Signal::ALL {
        let p_r = match r_i {
            Signal::High => own_h,
            Signal::Low => 1.0 - own_h,
        };
        if p_r == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for s_j in Signal::ALL {
            let w = weight(s_j);
            let h = mass.sum_for(s_j);
            inner += w * (h * scores.get(r_i, Signal::High) + (mass.count - h) * scores.get(r_i, Signal::Low));
        }
        total += p_r * inner;
    }
    total
}

pub(crate) fn interim_with_mass(setting: &Setting, own: Strategy, peers: PeerMass, s: Signal) -> f64 {
    let prior = &setting.prior;
    reward_sum(&setting.scores, own.report_h_prob(s), peers, |s_j| prior.conditional(s_j, s))
        / (setting.n - 1) as f64
}

/// Ex-ante utility evaluated over the joint `(s_i, s_j)` lattice directly.
pub(crate) fn ex_ante_with_mass(setting: &Setting, own: Strategy, peers: PeerMass) -> f64 {
    let prior = &setting.prior;
    let mut total = 0.0;
    for s_i in Signal::ALL {
        total += reward_sum(&setting.scores, own.report_h_prob(s_i), peers, |s_j| prior.pair(s_i, s_j));
    }
    total / (setting.n - 1) as f64
}

/// The own strategy and the aggregate of all other agents for `role`.
fn split(setting: &Setting, profile: &DeviationProfile, role: Role) -> Result<(Strategy, PeerMass)> {
    profile.validate(setting.n)?;
    let k = profile.k();
    let dev = profile
        .deviators
        .iter()
        .fold(PeerMass::default(), |m, s| m.plus(PeerMass::of(1.0, *s)));
    match role {
        Role::Deviator(i) => {
            let own = *profile.deviators.get(i).ok_or(Error::IndexOutOfRange { index: i, len: k })?;
            let truthful = PeerMass::of((setting.n - k) as f64, Strategy::TRUTHFUL);
            Ok((own, dev.minus(own).plus(truthful)))
        }
        Role::Truthful => {
            if k == setting.n {
                return Err(Error::InvalidProfile(
                    "every agent deviates, so there is no truthful agent".into(),
                ));
            }
            let truthful = PeerMass::of((setting.n - k - 1) as f64, Strategy::TRUTHFUL);
            Ok((Strategy::TRUTHFUL, dev.plus(truthful)))
        }
    }
}

/// `PS(report_j, q_{report_i})`.
pub fn reward(setting: &Setting, report_i: Signal, report_j: Signal) -> f64 {
    setting.scores.get(report_i, report_j)
}

pub fn ex_ante_utility(setting: &Setting, profile: &DeviationProfile, role: Role) -> Result<f64> {
    let (own, peers) = split(setting, profile, role)?;
    Ok(ex_ante_with_mass(setting, own, peers))
}

pub fn interim_utility(setting: &Setting, profile: &DeviationProfile, role: Role, s: Signal) -> Result<f64> {
    let (own, peers) = split(setting, profile, role)?;
    Ok(interim_with_mass(setting, own, peers, s))
}

/// Utility of any agent when everybody is truthful.
pub fn truthful_ex_ante(setting: &Setting) -> f64 {
    let peers = PeerMass::of((setting.n - 1) as f64, Strategy::TRUTHFUL);
    ex_ante_with_mass(setting, Strategy::TRUTHFUL, peers)
}

/// Interim utility `[given l, given h]` of any agent when everybody is
/// truthful.
pub fn truthful_interim(setting: &Setting) -> [f64; 2] {
    let peers = PeerMass::of((setting.n - 1) as f64, Strategy::TRUTHFUL);
    Signal::ALL.map(|s| interim_with_mass(setting, Strategy::TRUTHFUL, peers, s))
}

/// Ex-ante and interim utilities of one coalition member.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemberUtility {
    pub ex_ante: f64,
    /// Indexed by [`Signal::index`]: `[given l, given h]`.
    pub interim: [f64; 2],
}

/// Utilities of every deviator in one pass, O(k).
pub fn member_utilities(setting: &Setting, profile: &DeviationProfile) -> Result<Vec<MemberUtility>> {
    profile.validate(setting.n)?;
    let k = profile.k();
    let all = profile
        .deviators
        .iter()
        .fold(PeerMass::default(), |m, s| m.plus(PeerMass::of(1.0, *s)))
        .plus(PeerMass::of((setting.n - k) as f64, Strategy::TRUTHFUL));
    Ok(profile
        .deviators
        .iter()
        .map(|own| {
            let peers = all.minus(*own);
            MemberUtility {
                ex_ante: ex_ante_with_mass(setting, *own, peers),
                interim: Signal::ALL.map(|s| interim_with_mass(setting, *own, peers, s)),
            }
        })
        .collect())
}

/// Expected reward of an agent with signal `side` who reports `h` with
/// probability `beta_own`, against a single peer playing `peer`.
pub fn f_side(setting: &Setting, side: Signal, beta_own: f64, peer: Strategy) -> f64 {
    let prior = &setting.prior;
    reward_sum(&setting.scores, beta_own, PeerMass::of(1.0, peer), |s_j| {
        prior.conditional(s_j, side)
    })
}

/// `f_side` with the agent and the peer playing the same strategy.
pub fn g_side(setting: &Setting, side: Signal, sigma: Strategy) -> f64 {
    f_side(setting, side, sigma.report_h_prob(side), sigma)
}

/// Ex-ante reward of an agent against one peer when both play `sigma`.
pub fn self_play_reward(setting: &Setting, sigma: Strategy) -> f64 {
    Signal::ALL
        .iter()
        .map(|s| setting.prior.marginal(*s) * g_side(setting, *s, sigma))
        .sum()
}

/// Hessian of [`self_play_reward`] in `(beta_l, beta_h)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairHessian {
    /// Row/column 0 is `beta_l`, 1 is `beta_h`.
    pub matrix: [[f64; 2]; 2],
    /// Principal minors `[H00, H11, det H]`.
    pub minors: [f64; 3],
    pub psd: bool,
}

pub fn pair_reward_hessian(setting: &Setting) -> PairHessian {
    let p = &setting.prior;
    let c = setting.gaps().curvature();
    let cross = p.p_l() * p.p_h_given_l() + p.p_h() * p.p_l_given_h();
    let m00 = c * 2.0 * p.p_l() * p.p_l_given_l();
    let m11 = c * 2.0 * p.p_h() * p.p_h_given_h();
    let m01 = c * cross;
    let det = m00 * m11 - m01 * m01;
    let tol = setting.tolerance;
    PairHessian {
        matrix: [[m00, m01], [m01, m11]],
        minors: [m00, m11, det],
        psd: m00 >= -tol && m11 >= -tol && det >= -tol,
    }
}
