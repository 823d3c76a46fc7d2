//! Grid-based coalition deviation falsifiers.
//!
//! The search runs in stages. Phase 1 lets each coalition member pick, per
//! type, a pure action or its current mixture; phase 2 uses a uniform grid
//! on each per-type simplex. Within a phase, coalition sizes grow from 1 to
//! `k`. Each stage is enumerated in a fixed lexicographic order and
//! evaluated in chunks, so the certificate returned in deterministic mode
//! is the first one in that order no matter how many threads run.

use serde::{Deserialize, Serialize};

use super::certificate::{conditions_hold, mechanism_deltas, CertificateKind, DeviationCertificate};
use super::game::{agent_values, odometer, strategy_rows, AgentValues, FiniteBayesianGame, MixedProfile, Overlay};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::mechanism::{Setting, Strategy};
use crate::thresholds::Concept;
use crate::DEFAULT_TOLERANCE;

const CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    /// Points per simplex edge in phase 2; 11 gives steps of 1/10.
    pub grid_steps: usize,
    /// Maximum number of member utility evaluations.
    pub budget: u64,
    /// Return the first certificate in enumeration order. When false the
    /// parallel scan may return any certificate of the first successful
    /// chunk.
    pub deterministic: bool,
    pub exec: Exec,
    pub tolerance: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            grid_steps: 11,
            budget: 10_000_000,
            deterministic: true,
            exec: Exec::Parallel,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub certificate: Option<DeviationCertificate>,
    /// Member utility evaluations performed.
    pub nodes: u64,
}

fn check_args(n: usize, k: usize, opts: &SearchOptions) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("coalition bound k = {k} must lie in 1..={n}")));
    }
    if opts.grid_steps < 2 {
        return Err(Error::InvalidArgument(format!("grid_steps = {} must be at least 2", opts.grid_steps)));
    }
    Ok(())
}

/// All points of the `actions`-simplex with coordinates in multiples of
/// `1 / (steps - 1)`, in lexicographic order of the integer compositions.
fn simplex_grid(actions: usize, steps: usize) -> Vec<Vec<f64>> {
    let total = steps - 1;
    let mut out = Vec::new();
    let mut parts = vec![0usize; actions];
    fn rec(i: usize, left: usize, total: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if i + 1 == parts.len() {
            parts[i] = left;
            out.push(parts.iter().map(|p| *p as f64 / total as f64).collect());
            return;
        }
        for v in 0..=left {
            parts[i] = v;
            rec(i + 1, left - v, total, parts, out);
        }
    }
    rec(0, total, total, &mut parts, &mut out);
    out
}

fn pure(actions: usize, a: usize) -> Vec<f64> {
    (0..actions).map(|x| if x == a { 1.0 } else { 0.0 }).collect()
}

fn same_row(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12)
}

/// Candidate strategies of one agent: the product over types of per-type
/// options, each type's current mixture appended when not already present.
fn agent_options(game: &FiniteBayesianGame, profile: &MixedProfile, agent: usize, phase: u8, steps: usize) -> Vec<Vec<Vec<f64>>> {
    let m = game.actions()[agent];
    let per_type: Vec<Vec<Vec<f64>>> = (0..game.types()[agent])
        .map(|t| {
            let mut opts: Vec<Vec<f64>> = match phase {
                1 => (0..m).map(|a| pure(m, a)).collect(),
                _ => simplex_grid(m, steps),
            };
            let current = &profile.strategies[agent][t];
            if !opts.iter().any(|o| same_row(o, current)) {
                opts.push(current.clone());
            }
            opts
        })
        .collect();
    let dims: Vec<usize> = per_type.iter().map(|o| o.len()).collect();
    let mut digits = vec![0; dims.len()];
    let mut out = Vec::new();
    loop {
        out.push(digits.iter().enumerate().map(|(t, d)| per_type[t][*d].clone()).collect());
        if !odometer(&mut digits, &dims) {
            break;
        }
    }
    out
}

/// Next `d`-subset of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let d = c.len();
    for i in (0..d).rev() {
        if c[i] < n - d + i {
            c[i] += 1;
            for j in i + 1..d {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Next non-decreasing tuple over `0..m`.
fn next_multiset(c: &mut [usize], m: usize) -> bool {
    for i in (0..c.len()).rev() {
        if c[i] + 1 < m {
            c[i] += 1;
            let v = c[i];
            for x in &mut c[i + 1..] {
                *x = v;
            }
            return true;
        }
    }
    false
}

/// Lazily enumerates `(coalition, option choice)` pairs of one stage.
struct StageIter<'a> {
    n: usize,
    symmetric: bool,
    options: &'a [Vec<Vec<Vec<f64>>>],
    coalition: Vec<usize>,
    choice: Vec<usize>,
    done: bool,
}

impl<'a> StageIter<'a> {
    fn new(n: usize, d: usize, symmetric: bool, options: &'a [Vec<Vec<Vec<f64>>>]) -> Self {
        StageIter {
            n,
            symmetric,
            options,
            coalition: (0..d).collect(),
            choice: vec![0; d],
            done: false,
        }
    }
}

impl Iterator for StageIter<'_> {
    type Item = (Vec<usize>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = (self.coalition.clone(), self.choice.clone());
        let advanced = if self.symmetric {
            next_multiset(&mut self.choice, self.options[0].len())
        } else {
            let dims: Vec<usize> = self.coalition.iter().map(|a| self.options[*a].len()).collect();
            odometer(&mut self.choice, &dims)
        };
        if !advanced {
            if self.symmetric || !next_combination(&mut self.coalition, self.n) {
                self.done = true;
            } else {
                self.choice.iter_mut().for_each(|c| *c = 0);
            }
        }
        Some(item)
    }
}

/// Evaluates chunks of candidates until one meets the conditions.
///
/// `cost` gives the nodes charged for a candidate and `eval` its deltas
/// when successful.
fn scan<C, F>(
    candidates: &mut dyn Iterator<Item = C>,
    opts: &SearchOptions,
    nodes: &mut u64,
    cost: impl Fn(&C) -> u64,
    eval: F,
) -> Result<Option<DeviationCertificate>>
where
    C: Send + Sync,
    F: Fn(&C) -> Option<DeviationCertificate> + Sync + Send,
{
    loop {
        let mut chunk = Vec::with_capacity(CHUNK);
        let mut truncated = false;
        let mut planned = *nodes;
        for c in &mut *candidates {
            let w = cost(&c);
            if planned + w > opts.budget {
                truncated = true;
                break;
            }
            planned += w;
            chunk.push(c);
            if chunk.len() == CHUNK {
                break;
            }
        }
        if chunk.is_empty() {
            if truncated {
                return Err(Error::BudgetExceeded { nodes: *nodes });
            }
            return Ok(None);
        }
        let found = if opts.deterministic {
            let results = map_indexed(opts.exec, chunk.len(), |i| eval(&chunk[i]));
            let first = results.iter().position(|r| r.is_some());
            if let Some(p) = first {
                *nodes += chunk[..=p].iter().map(&cost).sum::<u64>();
            } else {
                *nodes = planned;
            }
            first.and_then(|p| results.into_iter().nth(p).flatten())
        } else {
            *nodes = planned;
            find_any(opts.exec, &chunk, &eval)
        };
        if found.is_some() {
            return Ok(found);
        }
        if truncated {
            return Err(Error::BudgetExceeded { nodes: *nodes });
        }
    }
}

fn find_any<C, F>(exec: Exec, chunk: &[C], eval: &F) -> Option<DeviationCertificate>
where
    C: Sync,
    F: Fn(&C) -> Option<DeviationCertificate> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return chunk.par_iter().find_map_any(eval);
    }
    let _ = exec;
    chunk.iter().find_map(eval)
}

fn deltas_for(kind: CertificateKind, new: &AgentValues, old: &AgentValues) -> Vec<f64> {
    match kind {
        CertificateKind::ExAnte => vec![new.ex_ante - old.ex_ante],
        _ => new.interim.iter().zip(&old.interim).map(|(a, b)| a - b).collect(),
    }
}

/// Searches for a coalition of at most `k` agents that profitably deviates
/// from `profile`. `None` means no deviation exists on the searched grid,
/// not that the profile is an equilibrium.
pub fn find_deviation(
    game: &FiniteBayesianGame,
    profile: &MixedProfile,
    k: usize,
    concept: Concept,
    opts: &SearchOptions,
) -> Result<SearchOutcome> {
    profile.validate(game)?;
    let n = game.agents();
    check_args(n, k, opts)?;
    let kind = CertificateKind::from(concept);
    let symmetric = game.is_symmetric() && profile.is_symmetric();
    let base: Vec<AgentValues> = (0..n).map(|i| agent_values(game, profile, i)).collect();
    let mut nodes = 0u64;
    for phase in [1u8, 2] {
        let options: Vec<Vec<Vec<Vec<f64>>>> = (0..n)
            .map(|a| agent_options(game, profile, a, phase, opts.grid_steps))
            .collect();
        for d in 1..=k {
            let mut stage = StageIter::new(n, d, symmetric, &options);
            let eval = |(coalition, choice): &(Vec<usize>, Vec<usize>)| {
                let strategies: Vec<&[Vec<f64>]> = coalition
                    .iter()
                    .zip(choice)
                    .map(|(a, c)| options[*a][*c].as_slice())
                    .collect();
                let view = Overlay {
                    base: profile,
                    coalition,
                    replacement: &strategies,
                };
                let deltas: Vec<Vec<f64>> = coalition
                    .iter()
                    .map(|i| deltas_for(kind, &agent_values(game, &view, *i), &base[*i]))
                    .collect();
                conditions_hold(kind, &deltas, opts.tolerance).then(|| DeviationCertificate {
                    concept: kind,
                    coalition: coalition.clone(),
                    strategies: strategies.iter().map(|s| s.to_vec()).collect(),
                    deltas,
                    conditioning_types: None,
                    tolerance: opts.tolerance,
                })
            };
            let found = scan(&mut stage, opts, &mut nodes, |c| c.0.len() as u64, eval)?;
            if found.is_some() {
                return Ok(SearchOutcome { certificate: found, nodes });
            }
        }
    }
    Ok(SearchOutcome { certificate: None, nodes })
}

const PURE: [Strategy; 4] = [Strategy::ALWAYS_L, Strategy::TRUTHFUL, Strategy::LIAR, Strategy::ALWAYS_H];

/// Falsifier against universal truth-telling in the mechanism itself,
/// using closed-form utilities so any `n` is feasible.
///
/// Phase 1 tries every pure strategy played by the whole coalition, then
/// every split of the coalition into two groups with distinct pure
/// strategies. Phase 2 tries every symmetric grid strategy. Coalition
/// sizes grow from 1 to `k` within each phase.
pub fn find_mechanism_deviation(setting: &Setting, k: usize, concept: Concept, opts: &SearchOptions) -> Result<SearchOutcome> {
    check_args(setting.n(), k, opts)?;
    let kind = CertificateKind::from(concept);
    let tol = opts.tolerance;
    let grid: Vec<f64> = (0..opts.grid_steps).map(|i| i as f64 / (opts.grid_steps - 1) as f64).collect();
    let mut nodes = 0u64;
    for phase in [1u8, 2] {
        for d in 1..=k {
            let mut cands: Vec<Vec<(usize, Strategy)>> = Vec::new();
            if phase == 1 {
                cands.extend(PURE.iter().map(|s| vec![(d, *s)]));
                for x in 0..PURE.len() {
                    for y in x + 1..PURE.len() {
                        cands.extend((1..d).map(|a| vec![(a, PURE[x]), (d - a, PURE[y])]));
                    }
                }
            } else {
                for bl in &grid {
                    for bh in &grid {
                        cands.push(vec![(d, Strategy { beta_l: *bl, beta_h: *bh })]);
                    }
                }
            }
            let eval = |groups: &Vec<(usize, Strategy)>| {
                let members: Vec<Strategy> = groups.iter().flat_map(|(c, s)| std::iter::repeat_n(*s, *c)).collect();
                let deltas = mechanism_deltas(setting, &members, concept).ok()?;
                conditions_hold(kind, &deltas, tol).then(|| DeviationCertificate {
                    concept: kind,
                    coalition: (0..members.len()).collect(),
                    strategies: members.iter().map(|s| strategy_rows(*s)).collect(),
                    deltas,
                    conditioning_types: None,
                    tolerance: tol,
                })
            };
            let mut it = cands.into_iter();
            let found = scan(&mut it, opts, &mut nodes, |_| d as u64, eval)?;
            if found.is_some() {
                return Ok(SearchOutcome { certificate: found, nodes });
            }
        }
    }
    Ok(SearchOutcome { certificate: None, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::certificate::verify_certificate;

    #[test]
    fn grid_points() {
        let g = simplex_grid(2, 11);
        assert_eq!(g.len(), 11);
        assert_eq!(g[0], vec![0.0, 1.0]);
        assert_eq!(simplex_grid(3, 3).len(), 6);
    }

    #[test]
    fn combinations_and_multisets() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all.len(), 6);
        let mut m = vec![0, 0, 0];
        let mut count = 1;
        while next_multiset(&mut m, 4) {
            count += 1;
        }
        assert_eq!(count, 20);
    }

    /// Both agents gain by jointly cooperating, neither alone.
    fn prisoners() -> FiniteBayesianGame {
        // actions: 0 = cooperate, 1 = defect; index a0 * 2 + a1
        let u0 = vec![3.0, 0.0, 4.0, 1.0];
        let u1 = vec![3.0, 4.0, 0.0, 1.0];
        FiniteBayesianGame::new(2, vec![1, 1], vec![2, 2], vec![1.0], vec![u0, u1]).unwrap()
    }

    #[test]
    fn prisoners_dilemma_pair_deviation() {
        let g = prisoners();
        let defect = MixedProfile::pure(&[vec![1], vec![1]], &g);
        let opts = SearchOptions::default();
        assert!(find_deviation(&g, &defect, 1, Concept::ExAnte, &opts).unwrap().certificate.is_none());
        let out = find_deviation(&g, &defect, 2, Concept::ExAnte, &opts).unwrap();
        let cert = out.certificate.unwrap();
        assert_eq!(cert.coalition, vec![0, 1]);
        assert!(verify_certificate(&g, &defect, &cert).unwrap());
    }

    #[test]
    fn budget_is_reported() {
        let g = prisoners();
        let defect = MixedProfile::pure(&[vec![1], vec![1]], &g);
        let opts = SearchOptions { budget: 3, ..SearchOptions::default() };
        let err = find_deviation(&g, &defect, 2, Concept::ExAnte, &opts).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { nodes } if nodes <= 3));
    }

    #[test]
    fn argument_errors() {
        let g = prisoners();
        let p = MixedProfile::pure(&[vec![1], vec![1]], &g);
        let opts = SearchOptions::default();
        assert!(find_deviation(&g, &p, 0, Concept::ExAnte, &opts).is_err());
        assert!(find_deviation(&g, &p, 3, Concept::ExAnte, &opts).is_err());
        let coarse = SearchOptions { grid_steps: 1, ..opts };
        assert!(find_deviation(&g, &p, 1, Concept::ExAnte, &coarse).is_err());
    }

    /// One type per agent; deviating a little from (0, 0) toward (1, 1)
    /// helps both agents, but only for small moves.
    pub(crate) fn planted() -> FiniteBayesianGame {
        // index a0 * 2 + a1; agent 1 mirrors agent 0
        let u0 = vec![0.0, 1.075, -1.0, -0.925];
        let u1 = vec![0.0, -1.0, 1.075, -0.925];
        FiniteBayesianGame::new(2, vec![1, 1], vec![2, 2], vec![1.0], vec![u0, u1]).unwrap()
    }

    #[test]
    fn planted_instance_needs_fine_grid() {
        let g = planted();
        let p = MixedProfile::pure(&[vec![0], vec![0]], &g);
        let coarse = SearchOptions::default();
        assert!(find_deviation(&g, &p, 2, Concept::ExAnte, &coarse).unwrap().certificate.is_none());
        let fine = SearchOptions { grid_steps: 21, ..coarse };
        let cert = find_deviation(&g, &p, 2, Concept::ExAnte, &fine).unwrap().certificate.unwrap();
        assert!(verify_certificate(&g, &p, &cert).unwrap());
    }

    #[test]
    fn deterministic_modes_agree() {
        let g = planted();
        let p = MixedProfile::pure(&[vec![0], vec![0]], &g);
        let seq = SearchOptions { grid_steps: 41, exec: Exec::Sequential, ..SearchOptions::default() };
        let par = SearchOptions { exec: Exec::Parallel, ..seq };
        let a = find_deviation(&g, &p, 2, Concept::ExAnte, &seq).unwrap();
        let b = find_deviation(&g, &p, 2, Concept::ExAnte, &par).unwrap();
        assert_eq!(a, b);
    }
}
