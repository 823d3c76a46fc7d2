//! The symmetric binary common prior and a two-state world model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{BinaryDist, Signal};

/// Pairwise view of a symmetric common prior over binary signals.
///
/// Built from `Pr(h)` and `Pr(h|h)`; `Pr(h|l)` is derived so that
/// `Pr(h) Pr(l|h) = Pr(l) Pr(h|l)` holds by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryPrior {
    p_h: f64,
    p_hh: f64,
    p_hl: f64,
}

/// Serialized form of a prior: `{"p_h": .., "p_h_given_h": ..}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub p_h: f64,
    pub p_h_given_h: f64,
}

impl<'de> Deserialize<'de> for BinaryPrior {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let cfg = PriorConfig::deserialize(de)?;
        make_prior(cfg.p_h, cfg.p_h_given_h).map_err(serde::de::Error::custom)
    }
}

/// Builds a prior from the marginal `Pr(h)` and the conditional `Pr(h|h)`.
pub fn make_prior(p_h: f64, p_hh: f64) -> Result<BinaryPrior> {
    if !(p_h > 0.0 && p_h < 1.0) {
        return Err(Error::InvalidPrior(format!("Pr(h) = {p_h} must lie in (0, 1)")));
    }
    if !(p_hh > 0.0 && p_hh < 1.0) {
        return Err(Error::InvalidPrior(format!("Pr(h|h) = {p_hh} must lie in (0, 1)")));
    }
    let p_hl = p_h * (1.0 - p_hh) / (1.0 - p_h);
    if !(p_hl > 0.0 && p_hl < 1.0) {
        return Err(Error::InvalidPrior(format!(
            "derived Pr(h|l) = {p_hl} must lie in (0, 1)"
        )));
    }
    if p_hh <= p_hl {
        return Err(Error::InvalidPrior(format!(
            "Pr(h|h) = {p_hh} must exceed Pr(h|l) = {p_hl}"
        )));
    }
    Ok(BinaryPrior { p_h, p_hh, p_hl })
}

impl BinaryPrior {
    pub fn config(&self) -> PriorConfig {
        PriorConfig {
            p_h: self.p_h,
            p_h_given_h: self.p_hh,
        }
    }

    /// Marginal `Pr(s)`.
    pub fn marginal(&self, s: Signal) -> f64 {
        match s {
            Signal::High => self.p_h,
            Signal::Low => 1.0 - self.p_h,
        }
    }

    /// `Pr(peer = s | own = given)`.
    pub fn conditional(&self, s: Signal, given: Signal) -> f64 {
        let p_h = match given {
            Signal::High => self.p_hh,
            Signal::Low => self.p_hl,
        };
        match s {
            Signal::High => p_h,
            Signal::Low => 1.0 - p_h,
        }
    }

    /// Joint probability that one agent holds `a` and another holds `b`.
    pub fn pair(&self, a: Signal, b: Signal) -> f64 {
        self.marginal(a) * self.conditional(b, a)
    }

    /// The posterior `q_s = Pr(. | s)` about another agent's signal.
    pub fn posterior(&self, s: Signal) -> BinaryDist {
        BinaryDist::new(self.conditional(Signal::High, s))
            .expect("validated prior has conditionals in (0, 1)")
    }

    pub fn p_h(&self) -> f64 {
        self.p_h
    }
    pub fn p_l(&self) -> f64 {
        1.0 - self.p_h
    }
    pub fn p_h_given_h(&self) -> f64 {
        self.p_hh
    }
    pub fn p_h_given_l(&self) -> f64 {
        self.p_hl
    }
    pub fn p_l_given_h(&self) -> f64 {
        1.0 - self.p_hh
    }
    pub fn p_l_given_l(&self) -> f64 {
        1.0 - self.p_hl
    }
}

/// Alias of [`BinaryPrior::posterior`].
pub fn posterior(prior: &BinaryPrior, s: Signal) -> BinaryDist {
    prior.posterior(s)
}

/// Two latent world states; given the state, signals are iid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WorldModel {
    p_state: [f64; 2],
    p_h_given_state: [f64; 2],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldModelConfig {
    p_state: Vec<f64>,
    p_h_given_state: Vec<f64>,
}

impl<'de> Deserialize<'de> for WorldModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let cfg = WorldModelConfig::deserialize(de)?;
        let pair = |v: Vec<f64>, name: &str| -> std::result::Result<[f64; 2], D::Error> {
            <[f64; 2]>::try_from(v)
                .map_err(|v| D::Error::custom(format!("{name} needs 2 entries, got {}", v.len())))
        };
        WorldModel::new(
            pair(cfg.p_state, "p_state")?,
            pair(cfg.p_h_given_state, "p_h_given_state")?,
        )
        .map_err(D::Error::custom)
    }
}

const WORLD_SUM_TOL: f64 = 1e-12;

impl WorldModel {
    pub fn new(p_state: [f64; 2], p_h_given_state: [f64; 2]) -> Result<Self> {
        if p_state.iter().chain(&p_h_given_state).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidWorldModel(
                "all probabilities must lie in [0, 1]".into(),
            ));
        }
        if (p_state[0] + p_state[1] - 1.0).abs() > WORLD_SUM_TOL {
            return Err(Error::InvalidWorldModel(format!(
                "state probabilities sum to {}",
                p_state[0] + p_state[1]
            )));
        }
        Ok(WorldModel {
            p_state,
            p_h_given_state,
        })
    }

    /// A world model whose induced prior is `prior`, with state 0 having
    /// weight `weight` and the larger signal rate.
    pub fn realizing(prior: &BinaryPrior, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "state weight {weight} must lie in (0, 1)"
            )));
        }
        let mean = prior.p_h();
        // variance of the state's signal rate
        let var = prior.p_h() * prior.p_h_given_h() - mean * mean;
        let a = mean + (var * (1.0 - weight) / weight).sqrt();
        let b = mean - (var * weight / (1.0 - weight)).sqrt();
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) {
            return Err(Error::InvalidArgument(format!(
                "no two-state model with weight {weight} realizes this prior"
            )));
        }
        WorldModel::new([weight, 1.0 - weight], [a, b])
    }

    pub fn p_state(&self) -> [f64; 2] {
        self.p_state
    }

    pub fn p_h_given_state(&self) -> [f64; 2] {
        self.p_h_given_state
    }

    /// Probability of one specific signal vector.
    pub fn joint_probability(&self, signals: &[Signal]) -> f64 {
        let h = signals.iter().filter(|s| **s == Signal::High).count() as i32;
        let l = signals.len() as i32 - h;
        (0..2)
            .map(|w| {
                let p = self.p_h_given_state[w];
                self.p_state[w] * p.powi(h) * (1.0 - p).powi(l)
            })
            .sum()
    }
}

/// The pairwise prior induced by a world model.
pub fn induce_prior(wm: &WorldModel) -> Result<BinaryPrior> {
    let p_h: f64 = (0..2).map(|w| wm.p_state[w] * wm.p_h_given_state[w]).sum();
    if !(p_h > 0.0 && p_h < 1.0) {
        return Err(Error::InvalidPrior(format!(
            "world model induces degenerate Pr(h) = {p_h}"
        )));
    }
    let both_h: f64 = (0..2)
        .map(|w| wm.p_state[w] * wm.p_h_given_state[w].powi(2))
        .sum();
    make_prior(p_h, both_h / p_h)
}

/// Probability that a fresh agent's signal is `h` after the world state has
/// been updated on `count_h` high and `count_l` low signals.
pub fn coalition_posterior(wm: &WorldModel, count_h: usize, count_l: usize) -> Result<BinaryDist> {
    if count_h + count_l == 0 {
        return Err(Error::InvalidArgument(
            "at least one observed signal is required".into(),
        ));
    }
    // log-likelihoods keep large counts from underflowing
    let log_weight = |w: usize| -> f64 {
        let p = wm.p_h_given_state[w];
        let term = |count: usize, prob: f64| {
            if count == 0 {
                0.0
            } else {
                count as f64 * prob.ln()
            }
        };
        wm.p_state[w].ln() + term(count_h, p) + term(count_l, 1.0 - p)
    };
    let lw = [log_weight(0), log_weight(1)];
    let top = lw[0].max(lw[1]);
    if top == f64::NEG_INFINITY {
        return Err(Error::ZeroLikelihood);
    }
    let weights = [(lw[0] - top).exp(), (lw[1] - top).exp()];
    let total = weights[0] + weights[1];
    let p = (weights[0] * wm.p_h_given_state[0] + weights[1] * wm.p_h_given_state[1]) / total;
    BinaryDist::new(p.clamp(0.0, 1.0))
}
