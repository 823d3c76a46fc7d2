//! Random instance generators shared by the integration tests.
#![allow(dead_code)]

use collusion_lab::checker::{FiniteBayesianGame, MixedProfile};
use collusion_lab::prior::{make_prior, WorldModel};
use collusion_lab::{BinaryPrior, ScoringRule, Setting, Strategy};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Valid priors need `Pr(h) < Pr(h|h) < 1`.
pub fn random_prior(r: &mut ChaCha8Rng) -> BinaryPrior {
    let p_h = r.random_range(0.05..0.95);
    let p_hh = p_h + (1.0 - p_h) * r.random_range(0.05..0.95);
    make_prior(p_h, p_hh).unwrap()
}

pub fn random_rule(r: &mut ChaCha8Rng) -> ScoringRule {
    if r.random_bool(0.5) {
        ScoringRule::Brier
    } else {
        ScoringRule::log()
    }
}

pub fn random_setting(r: &mut ChaCha8Rng, n_lo: usize, n_hi: usize) -> Setting {
    let prior = random_prior(r);
    let rule = random_rule(r);
    Setting::new(r.random_range(n_lo..=n_hi), prior, rule).unwrap()
}

pub fn random_world_model(r: &mut ChaCha8Rng) -> WorldModel {
    loop {
        let w: f64 = r.random_range(0.05..0.95);
        let a: f64 = r.random_range(0.02..0.98);
        let b: f64 = r.random_range(0.02..0.98);
        if (a - b).abs() > 0.05 {
            return WorldModel::new([w, 1.0 - w], [a, b]).unwrap();
        }
    }
}

pub fn random_strategy(r: &mut ChaCha8Rng) -> Strategy {
    Strategy::new(r.random_range(0.0..=1.0), r.random_range(0.0..=1.0)).unwrap()
}

pub fn random_distribution(r: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let mut d: Vec<f64> = raw.iter().map(|x| x / total).collect();
    // push rounding into the last entry so rows sum to one exactly enough
    let head: f64 = d[..m - 1].iter().sum();
    d[m - 1] = 1.0 - head;
    d
}

/// Small games: 2 or 3 agents, 1 or 2 types, 2 actions each.
pub fn random_game(r: &mut ChaCha8Rng) -> FiniteBayesianGame {
    let agents = r.random_range(2..=3);
    let types: Vec<usize> = (0..agents).map(|_| r.random_range(1..=2)).collect();
    let actions = vec![2; agents];
    let n_types: usize = types.iter().product();
    let n_actions: usize = actions.iter().product();
    let prior = random_distribution(r, n_types);
    let utility = types
        .iter()
        .map(|t| (0..t * n_actions).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    FiniteBayesianGame::new(agents, types, actions, prior, utility).unwrap()
}

/// Mixed rows, or pure rows with probability one half.
pub fn random_profile(r: &mut ChaCha8Rng, game: &FiniteBayesianGame) -> MixedProfile {
    let pure = r.random_bool(0.5);
    let strategies = (0..game.agents())
        .map(|i| {
            (0..game.types()[i])
                .map(|_| {
                    let m = game.actions()[i];
                    if pure {
                        let a = r.random_range(0..m);
                        (0..m).map(|x| if x == a { 1.0 } else { 0.0 }).collect()
                    } else {
                        random_distribution(r, m)
                    }
                })
                .collect()
        })
        .collect();
    MixedProfile::new(strategies)
}
