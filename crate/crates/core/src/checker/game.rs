//! Finite Bayesian games with enumerated types and actions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{Setting, Strategy};
use crate::scoring::Signal;

const SUM_TOL: f64 = 1e-12;

/// A finite Bayesian game.
///
/// Type and action vectors are flattened in mixed radix with agent 0 as the
/// most significant digit. `utility[i][t_i * A + a]` is agent `i`'s payoff
/// with own type `t_i` under action vector index `a`, where `A` is the
/// number of action vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteBayesianGame {
    agents: usize,
    types: Vec<usize>,
    actions: Vec<usize>,
    prior: Vec<f64>,
    utility: Vec<Vec<f64>>,
    #[serde(skip)]
    marginals: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GameRepr {
    agents: usize,
    types: Vec<usize>,
    actions: Vec<usize>,
    prior: Vec<f64>,
    utility: Vec<Vec<f64>>,
}

impl<'de> Deserialize<'de> for FiniteBayesianGame {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let r = GameRepr::deserialize(de)?;
        FiniteBayesianGame::new(r.agents, r.types, r.actions, r.prior, r.utility).map_err(serde::de::Error::custom)
    }
}

/// Number of entries in a mixed-radix space, or `None` on overflow past
/// `limit`.
fn radix_len(dims: &[usize], limit: usize) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d).filter(|v| *v <= limit))
}

/// Advances a mixed-radix counter; returns false after the last value.
pub(crate) fn odometer(digits: &mut [usize], dims: &[usize]) -> bool {
    for j in (0..digits.len()).rev() {
        digits[j] += 1;
        if digits[j] < dims[j] {
            return true;
        }
        digits[j] = 0;
    }
    false
}

/// Upper bound on type or action vectors; keeps tables in memory.
pub const MAX_VECTORS: usize = 1 << 20;

impl FiniteBayesianGame {
    pub fn new(
        agents: usize,
        types: Vec<usize>,
        actions: Vec<usize>,
        prior: Vec<f64>,
        utility: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidGame(m));
        if agents == 0 {
            return bad("a game needs at least one agent".into());
        }
        if types.len() != agents || actions.len() != agents || utility.len() != agents {
            return Err(Error::DimensionMismatch(format!(
                "{agents} agents but {} type sets, {} action sets, {} utility tables",
                types.len(),
                actions.len(),
                utility.len()
            )));
        }
        if types.iter().chain(&actions).any(|c| *c == 0) {
            return bad("every agent needs at least one type and one action".into());
        }
        let (Some(n_types), Some(n_actions)) = (radix_len(&types, MAX_VECTORS), radix_len(&actions, MAX_VECTORS)) else {
            return bad(format!("more than {MAX_VECTORS} type or action vectors"));
        };
        if prior.len() != n_types {
            return Err(Error::DimensionMismatch(format!(
                "prior has {} entries, expected {n_types}",
                prior.len()
            )));
        }
        if prior.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("prior entries must be finite and non-negative".into());
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return bad(format!("prior sums to {total}"));
        }
        for (i, u) in utility.iter().enumerate() {
            if u.len() != types[i] * n_actions {
                return Err(Error::DimensionMismatch(format!(
                    "utility table of agent {i} has {} entries, expected {}",
                    u.len(),
                    types[i] * n_actions
                )));
            }
            if u.iter().any(|v| !v.is_finite()) {
                return bad(format!("utility table of agent {i} has a non-finite entry"));
            }
        }
        let mut marginals: Vec<Vec<f64>> = types.iter().map(|t| vec![0.0; *t]).collect();
        let mut digits = vec![0; agents];
        for p in &prior {
            for (j, d) in digits.iter().enumerate() {
                marginals[j][*d] += p;
            }
            odometer(&mut digits, &types);
        }
        for (i, m) in marginals.iter().enumerate() {
            if let Some(t) = m.iter().position(|p| *p <= 0.0) {
                return bad(format!("type {t} of agent {i} has zero marginal probability"));
            }
        }
        Ok(FiniteBayesianGame {
            agents,
            types,
            actions,
            prior,
            utility,
            marginals,
        })
    }

    pub fn agents(&self) -> usize {
        self.agents
    }
    pub fn types(&self) -> &[usize] {
        &self.types
    }
    pub fn actions(&self) -> &[usize] {
        &self.actions
    }
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }
    pub fn utility(&self) -> &[Vec<f64>] {
        &self.utility
    }
    /// `Pr(t_i = t)`.
    pub fn marginal(&self, agent: usize, t: usize) -> f64 {
        self.marginals[agent][t]
    }
    pub fn action_vectors(&self) -> usize {
        self.utility[0].len() / self.types[0]
    }

    /// True when relabelling agents leaves the prior and payoffs unchanged.
    /// Checked on a generating set of the symmetric group (a transposition
    /// and a full cycle).
    pub fn is_symmetric(&self) -> bool {
        let n = self.agents;
        if n == 1 {
            return true;
        }
        if self.types.iter().any(|t| *t != self.types[0]) || self.actions.iter().any(|a| *a != self.actions[0]) {
            return false;
        }
        let swap: Vec<usize> = (0..n).map(|i| if i < 2 { 1 - i } else { i }).collect();
        let cycle: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        self.invariant_under(&swap) && self.invariant_under(&cycle)
    }

    /// Agent `j` becomes agent `perm[j]`.
    fn invariant_under(&self, perm: &[usize]) -> bool {
        let n = self.agents;
        let close = |a: f64, b: f64| (a - b).abs() <= SUM_TOL * (1.0 + a.abs().max(b.abs()));
        let index = |digits: &[usize], dims: &[usize]| digits.iter().zip(dims).fold(0, |acc, (d, m)| acc * m + d);
        let mut t = vec![0; n];
        let mut moved = vec![0; n];
        loop {
            for j in 0..n {
                moved[perm[j]] = t[j];
            }
            if !close(self.prior[index(&t, &self.types)], self.prior[index(&moved, &self.types)]) {
                return false;
            }
            if !odometer(&mut t, &self.types) {
                break;
            }
        }
        let n_actions = self.action_vectors();
        let mut a = vec![0; n];
        loop {
            for j in 0..n {
                moved[perm[j]] = a[j];
            }
            let (ia, im) = (index(&a, &self.actions), index(&moved, &self.actions));
            for i in 0..n {
                for ty in 0..self.types[i] {
                    let v = self.utility[i][ty * n_actions + ia];
                    let w = self.utility[perm[i]][ty * n_actions + im];
                    if !close(v, w) {
                        return false;
                    }
                }
            }
            if !odometer(&mut a, &self.actions) {
                break;
            }
        }
        true
    }
}

/// `strategies[agent][type]` is a distribution over that agent's actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixedProfile {
    pub strategies: Vec<Vec<Vec<f64>>>,
}

pub(crate) fn validate_rows(game: &FiniteBayesianGame, agent: usize, rows: &[Vec<f64>]) -> Result<()> {
    if rows.len() != game.types[agent] {
        return Err(Error::DimensionMismatch(format!(
            "agent {agent} has {} types, strategy gives {} rows",
            game.types[agent],
            rows.len()
        )));
    }
    for (t, row) in rows.iter().enumerate() {
        if row.len() != game.actions[agent] {
            return Err(Error::DimensionMismatch(format!(
                "agent {agent} type {t}: {} actions, row has {}",
                game.actions[agent],
                row.len()
            )));
        }
        if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!(
                "agent {agent} type {t}: row is not a probability distribution"
            )));
        }
    }
    Ok(())
}

impl MixedProfile {
    pub fn new(strategies: Vec<Vec<Vec<f64>>>) -> Self {
        MixedProfile { strategies }
    }

    /// `choice[agent][type]` is the action taken with certainty.
    pub fn pure(choice: &[Vec<usize>], game: &FiniteBayesianGame) -> Self {
        let strategies = choice
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .map(|a| {
                        let mut d = vec![0.0; game.actions[i]];
                        d[*a] = 1.0;
                        d
                    })
                    .collect()
            })
            .collect();
        MixedProfile { strategies }
    }

    /// Peer prediction strategies in the encoding of [`peer_prediction_game`].
    pub fn from_strategies(strategies: &[Strategy]) -> Self {
        MixedProfile {
            strategies: strategies.iter().map(|s| strategy_rows(*s)).collect(),
        }
    }

    pub fn validate(&self, game: &FiniteBayesianGame) -> Result<()> {
        if self.strategies.len() != game.agents {
            return Err(Error::DimensionMismatch(format!(
                "profile has {} agents, game has {}",
                self.strategies.len(),
                game.agents
            )));
        }
        for (i, rows) in self.strategies.iter().enumerate() {
            validate_rows(game, i, rows)?;
        }
        Ok(())
    }

    /// True when every agent plays the same per-type mixture.
    pub fn is_symmetric(&self) -> bool {
        self.strategies.iter().all(|s| *s == self.strategies[0])
    }
}

/// Per-type rows `[[Pr(l|l), Pr(h|l)], [Pr(l|h), Pr(h|h)]]` of a strategy.
pub fn strategy_rows(s: Strategy) -> Vec<Vec<f64>> {
    vec![vec![1.0 - s.beta_l, s.beta_l], vec![1.0 - s.beta_h, s.beta_h]]
}

/// Largest agent count accepted by [`peer_prediction_game`].
pub const MAX_PEER_GAME_AGENTS: usize = 10;

/// The mechanism as an explicit game: types and actions are `{l, h}` with
/// index 0 for `l`, and the joint prior is the setting's world model.
pub fn peer_prediction_game(setting: &Setting) -> Result<FiniteBayesianGame> {
    let wm = setting.world_model().ok_or(Error::MissingWorldModel)?;
    let n = setting.n();
    if n > MAX_PEER_GAME_AGENTS {
        return Err(Error::InvalidArgument(format!(
            "explicit games are limited to {MAX_PEER_GAME_AGENTS} agents, got {n}"
        )));
    }
    let dims = vec![2; n];
    let size = 1usize << n;
    let signal = |bit: usize| if bit == 1 { Signal::High } else { Signal::Low };
    let mut prior = Vec::with_capacity(size);
    let mut digits = vec![0; n];
    let mut signals = vec![Signal::Low; n];
    for _ in 0..size {
        for (s, d) in signals.iter_mut().zip(&digits) {
            *s = signal(*d);
        }
        prior.push(wm.joint_probability(&signals));
        odometer(&mut digits, &dims);
    }
    // renormalize rounding so the sum check is exact to 1e-12
    let total: f64 = prior.iter().sum();
    prior.iter_mut().for_each(|p| *p /= total);
    let scores = setting.scores();
    let mut utility = vec![Vec::with_capacity(2 * size); n];
    for (i, table) in utility.iter_mut().enumerate() {
        let mut row = Vec::with_capacity(size);
        let mut a = vec![0; n];
        for _ in 0..size {
            let own = signal(a[i]);
            let total: f64 = (0..n).filter(|j| *j != i).map(|j| scores.get(own, signal(a[j]))).sum();
            row.push(total / (n - 1) as f64);
            odometer(&mut a, &dims);
        }
        // payoffs do not depend on the own type
        table.extend_from_slice(&row);
        table.extend_from_slice(&row);
    }
    FiniteBayesianGame::new(n, dims.clone(), dims, prior, utility)
}

/// Supplies per-type action distributions, possibly overriding some agents.
pub(crate) trait StrategyView: Sync {
    fn row(&self, agent: usize, ty: usize) -> &[f64];
}

impl StrategyView for MixedProfile {
    fn row(&self, agent: usize, ty: usize) -> &[f64] {
        &self.strategies[agent][ty]
    }
}

/// A profile with coalition members' strategies replaced.
pub(crate) struct Overlay<'a> {
    pub base: &'a MixedProfile,
    pub coalition: &'a [usize],
    pub replacement: &'a [&'a [Vec<f64>]],
}

impl StrategyView for Overlay<'_> {
    fn row(&self, agent: usize, ty: usize) -> &[f64] {
        match self.coalition.iter().position(|c| *c == agent) {
            Some(pos) => &self.replacement[pos][ty],
            None => &self.base.strategies[agent][ty],
        }
    }
}

/// Expected utilities of one agent: ex-ante and per own type.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AgentValues {
    pub ex_ante: f64,
    pub interim: Vec<f64>,
}

/// Sums `Q(t) * E_a[v_i(t_i, a)]` over the type vectors accepted by `keep`,
/// binned by agent `i`'s own type.
fn accumulate(
    game: &FiniteBayesianGame,
    view: &dyn StrategyView,
    i: usize,
    keep: &dyn Fn(&[usize]) -> bool,
) -> (Vec<f64>, Vec<f64>) {
    let n = game.agents;
    let n_actions = game.action_vectors();
    let mut value = vec![0.0; game.types[i]];
    let mut mass = vec![0.0; game.types[i]];
    let mut work = vec![0.0; n_actions];
    let mut t = vec![0; n];
    for q in &game.prior {
        if *q > 0.0 && keep(&t) {
            let own = t[i];
            work.copy_from_slice(&game.utility[i][own * n_actions..(own + 1) * n_actions]);
            // contract the least significant agent first
            let mut len = n_actions;
            for j in (0..n).rev() {
                let w = view.row(j, t[j]);
                let m = game.actions[j];
                len /= m;
                for p in 0..len {
                    let base = p * m;
                    let mut acc = 0.0;
                    for (x, wx) in w.iter().enumerate() {
                        acc += work[base + x] * wx;
                    }
                    work[p] = acc;
                }
            }
            value[own] += q * work[0];
            mass[own] += q;
        }
        odometer(&mut t, &game.types);
    }
    (value, mass)
}

pub(crate) fn agent_values(game: &FiniteBayesianGame, view: &dyn StrategyView, i: usize) -> AgentValues {
    let (value, _) = accumulate(game, view, i, &|_| true);
    AgentValues {
        ex_ante: value.iter().sum(),
        interim: value.iter().enumerate().map(|(t, v)| v / game.marginals[i][t]).collect(),
    }
}

/// Utility of agent `i` conditioned on the listed `(agent, type)` pairs.
pub(crate) fn conditional_value(
    game: &FiniteBayesianGame,
    view: &dyn StrategyView,
    i: usize,
    given: &[(usize, usize)],
) -> Result<f64> {
    let (value, mass) = accumulate(game, view, i, &|t| given.iter().all(|(a, ty)| t[*a] == *ty));
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroLikelihood);
    }
    Ok(value.iter().sum::<f64>() / total)
}

fn check_agent(game: &FiniteBayesianGame, i: usize) -> Result<()> {
    if i >= game.agents {
        return Err(Error::IndexOutOfRange { index: i, len: game.agents });
    }
    Ok(())
}

pub fn game_ex_ante_utility(game: &FiniteBayesianGame, profile: &MixedProfile, i: usize) -> Result<f64> {
    profile.validate(game)?;
    check_agent(game, i)?;
    Ok(agent_values(game, profile, i).ex_ante)
}

pub fn game_interim_utility(game: &FiniteBayesianGame, profile: &MixedProfile, i: usize, s_i: usize) -> Result<f64> {
    profile.validate(game)?;
    check_agent(game, i)?;
    if s_i >= game.types[i] {
        return Err(Error::IndexOutOfRange { index: s_i, len: game.types[i] });
    }
    Ok(agent_values(game, profile, i).interim[s_i])
}

/// Utility of agent `i` given that each listed agent holds the listed type.
pub fn game_conditional_utility(
    game: &FiniteBayesianGame,
    profile: &MixedProfile,
    i: usize,
    given: &[(usize, usize)],
) -> Result<f64> {
    profile.validate(game)?;
    check_agent(game, i)?;
    for (a, t) in given {
        check_agent(game, *a)?;
        if *t >= game.types[*a] {
            return Err(Error::IndexOutOfRange { index: *t, len: game.types[*a] });
        }
    }
    conditional_value(game, profile, i, given)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::{ex_ante_utility, interim_utility, DeviationProfile, Role};
    use crate::prior::{make_prior, WorldModel};
    use crate::scoring::ScoringRule;

    fn constant_game(c: f64) -> FiniteBayesianGame {
        FiniteBayesianGame::new(2, vec![2, 1], vec![2, 3], vec![0.3, 0.7], vec![vec![c; 12], vec![c; 6]]).unwrap()
    }

    /// Each agent knows a type that does not affect payoffs; row player
    /// wins on matching actions.
    pub(crate) fn matching_pennies() -> FiniteBayesianGame {
        let row = vec![1.0, -1.0, -1.0, 1.0];
        let col: Vec<f64> = row.iter().map(|v| -v).collect();
        FiniteBayesianGame::new(
            2,
            vec![2, 2],
            vec![2, 2],
            vec![0.25; 4],
            vec![[row.clone(), row].concat(), [col.clone(), col].concat()],
        )
        .unwrap()
    }

    #[test]
    fn constant_utility() {
        let g = constant_game(2.5);
        let p = MixedProfile::new(vec![
            vec![vec![0.5, 0.5], vec![1.0, 0.0]],
            vec![vec![0.2, 0.3, 0.5]],
        ]);
        assert!((game_ex_ante_utility(&g, &p, 0).unwrap() - 2.5).abs() < 1e-12);
        assert!((game_interim_utility(&g, &p, 1, 0).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn matching_pennies_uniform_is_zero() {
        let g = matching_pennies();
        let p = MixedProfile::new(vec![vec![vec![0.5, 0.5]; 2]; 2]);
        assert!(game_ex_ante_utility(&g, &p, 0).unwrap().abs() < 1e-12);
        assert!(!g.is_symmetric());
    }

    #[test]
    fn validation_errors() {
        assert!(FiniteBayesianGame::new(1, vec![2], vec![1], vec![0.5, 0.4], vec![vec![0.0; 2]]).is_err());
        assert!(matches!(
            FiniteBayesianGame::new(1, vec![2], vec![1], vec![1.0, 0.0], vec![vec![0.0; 2]]),
            Err(Error::InvalidGame(_))
        ));
        assert!(matches!(
            FiniteBayesianGame::new(1, vec![2], vec![1], vec![0.5, 0.5], vec![vec![0.0; 3]]),
            Err(Error::DimensionMismatch(_))
        ));
        let g = matching_pennies();
        let short = MixedProfile::new(vec![vec![vec![1.0, 0.0]; 2]]);
        assert!(matches!(game_ex_ante_utility(&g, &short, 0), Err(Error::DimensionMismatch(_))));
    }

    fn pp_setting(n: usize) -> Setting {
        let prior = make_prior(2.0 / 3.0, 0.8).unwrap();
        let wm = WorldModel::realizing(&prior, 0.6).unwrap();
        Setting::from_world_model(n, wm, ScoringRule::Brier).unwrap()
    }

    #[test]
    fn peer_game_matches_mechanism() {
        let s = pp_setting(4);
        let g = peer_prediction_game(&s).unwrap();
        assert!(g.is_symmetric());
        let devs = vec![Strategy::new(0.3, 0.8).unwrap(), Strategy::ALWAYS_H];
        let mut all = devs.clone();
        all.extend([Strategy::TRUTHFUL; 2]);
        let mp = MixedProfile::from_strategies(&all);
        let dp = DeviationProfile::new(devs);
        for (i, role) in [(0, Role::Deviator(0)), (1, Role::Deviator(1)), (3, Role::Truthful)] {
            let a = game_ex_ante_utility(&g, &mp, i).unwrap();
            let b = ex_ante_utility(&s, &dp, role).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            for sig in Signal::ALL {
                let a = game_interim_utility(&g, &mp, i, sig.index()).unwrap();
                let b = interim_utility(&s, &dp, role, sig).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(!mp.is_symmetric());
    }

    #[test]
    fn conditional_on_everything_given_is_own_interim_for_one_agent() {
        let s = pp_setting(3);
        let g = peer_prediction_game(&s).unwrap();
        let p = MixedProfile::from_strategies(&[Strategy::TRUTHFUL; 3]);
        let a = game_conditional_utility(&g, &p, 0, &[(0, 1)]).unwrap();
        let b = game_interim_utility(&g, &p, 0, 1).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn peer_game_size_limit() {
        assert!(peer_prediction_game(&pp_setting(11)).is_err());
        let plain = Setting::new(3, make_prior(0.5, 0.7).unwrap(), ScoringRule::Brier).unwrap();
        assert_eq!(peer_prediction_game(&plain), Err(Error::MissingWorldModel));
    }

    #[test]
    fn game_json_round_trip() {
        let g = matching_pennies();
        let text = serde_json::to_string(&g).unwrap();
        let back: FiniteBayesianGame = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        let bad = r#"{"agents":1,"types":[1],"actions":[1],"prior":[1.0],"utility":[[0.0]],"extra":1}"#;
        assert!(serde_json::from_str::<FiniteBayesianGame>(bad).is_err());
    }
}
