//! Seeded Monte Carlo estimate of realized utilities.
//!
//! Trials are split into fixed blocks of [`BLOCK_SIZE`]. Block `b` draws
//! from `ChaCha8Rng::seed_from_u64(seed)` switched to stream `b`, so the
//! output depends only on `(seed, trials)` and never on thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeviationProfile, Role, Setting, Strategy};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Exec};
use crate::scoring::Signal;

pub const BLOCK_SIZE: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub trials: u64,
    pub seed: u64,
    #[serde(default)]
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleEstimate {
    pub role: Role,
    pub mean: f64,
    /// Standard error of the mean; `None` with a single trial.
    pub stderr: Option<f64>,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub trials: u64,
    pub seed: u64,
    pub roles: Vec<RoleEstimate>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    // Chan et al. pairwise combination
    fn merge(self, o: Welford) -> Welford {
        if self.count == 0 {
            return o;
        }
        if o.count == 0 {
            return self;
        }
        let n = self.count + o.count;
        let d = o.mean - self.mean;
        let mean = self.mean + d * o.count as f64 / n as f64;
        let m2 = self.m2 + o.m2 + d * d * (self.count as f64 * o.count as f64) / n as f64;
        Welford { count: n, mean, m2 }
    }

    fn stderr(&self) -> Option<f64> {
        (self.count >= 2).then(|| (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt())
    }
}

fn draw(rng: &mut ChaCha8Rng, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn simulate(setting: &Setting, profile: &DeviationProfile, opts: SimulationOptions) -> Result<SimulationReport> {
    let wm = *setting.world_model().ok_or(Error::MissingWorldModel)?;
    profile.validate(setting.n())?;
    if opts.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let n = setting.n();
    let k = profile.k();
    let has_truthful = k < n;
    let roles = k + usize::from(has_truthful);
    let scores = *setting.scores();
    let strategies: Vec<Strategy> = profile.deviators.clone();
    let blocks = opts.trials.div_ceil(BLOCK_SIZE);
    let denom = (n - 1) as f64;

    let per_block = map_indexed(opts.exec, blocks as usize, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(b as u64);
        let start = b as u64 * BLOCK_SIZE;
        let len = BLOCK_SIZE.min(opts.trials - start);
        let mut acc = vec![Welford::default(); roles];
        let mut reports = vec![Signal::Low; n];
        let p_state = wm.p_state();
        let p_h_state = wm.p_h_given_state();
        for _ in 0..len {
            let w = if draw(&mut rng, p_state[0]) { 0 } else { 1 };
            let mut count_h = 0usize;
            for (i, r) in reports.iter_mut().enumerate() {
                let s = if draw(&mut rng, p_h_state[w]) { Signal::High } else { Signal::Low };
                let sigma = strategies.get(i).copied().unwrap_or(Strategy::TRUTHFUL);
                let p = sigma.report_h_prob(s);
                // pure strategies consume no extra randomness
                let says_h = if p == 0.0 || p == 1.0 { p == 1.0 } else { draw(&mut rng, p) };
                *r = if says_h { Signal::High } else { Signal::Low };
                count_h += usize::from(says_h);
            }
            let pay = |r: Signal| {
                let others_h = (count_h - usize::from(r == Signal::High)) as f64;
                let others_l = (n - 1) as f64 - others_h;
                (others_h * scores.get(r, Signal::High) + others_l * scores.get(r, Signal::Low)) / denom
            };
            for (i, acc_i) in acc.iter_mut().enumerate().take(k) {
                acc_i.push(pay(reports[i]));
            }
            if has_truthful {
                let total: f64 = reports[k..].iter().map(|r| pay(*r)).sum();
                acc[k].push(total / (n - k) as f64);
            }
        }
        acc
    });

    let mut total = vec![Welford::default(); roles];
    for block in per_block {
        for (t, b) in total.iter_mut().zip(block) {
            *t = t.merge(b);
        }
    }
    let roles = total
        .iter()
        .enumerate()
        .map(|(i, w)| RoleEstimate {
            role: if i < k { Role::Deviator(i) } else { Role::Truthful },
            mean: w.mean,
            stderr: w.stderr(),
            trials: w.count,
            seed: opts.seed,
        })
        .collect();
    Ok(SimulationReport {
        trials: opts.trials,
        seed: opts.seed,
        roles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::truthful_ex_ante;
    use crate::prior::{make_prior, WorldModel};
    use crate::scoring::ScoringRule;

    fn setting(n: usize) -> Setting {
        let prior = make_prior(2.0 / 3.0, 0.8).unwrap();
        let wm = WorldModel::realizing(&prior, 0.5).unwrap();
        Setting::from_world_model(n, wm, ScoringRule::Brier).unwrap()
    }

    #[test]
    fn needs_world_model() {
        let s = Setting::new(5, make_prior(0.5, 0.7).unwrap(), ScoringRule::Brier).unwrap();
        let opts = SimulationOptions { trials: 10, seed: 1, exec: Exec::Sequential };
        let p = DeviationProfile::uniform(1, Strategy::TRUTHFUL);
        assert_eq!(simulate(&s, &p, opts), Err(Error::MissingWorldModel));
    }

    #[test]
    fn truthful_mean_matches_closed_form() {
        let s = setting(20);
        let p = DeviationProfile::uniform(1, Strategy::TRUTHFUL);
        let opts = SimulationOptions { trials: 20_000, seed: 7, exec: Exec::Parallel };
        let r = simulate(&s, &p, opts).unwrap();
        let est = &r.roles[0];
        assert!((est.mean - truthful_ex_ante(&s)).abs() < 4.0 * est.stderr.unwrap());
    }

    #[test]
    fn all_h_has_zero_variance() {
        let s = setting(6);
        let p = DeviationProfile::uniform(6, Strategy::ALWAYS_H);
        let opts = SimulationOptions { trials: 5000, seed: 3, exec: Exec::Sequential };
        let r = simulate(&s, &p, opts).unwrap();
        assert_eq!(r.roles.len(), 6);
        for est in &r.roles {
            assert!((est.mean - 0.92).abs() < 1e-12);
            assert!(est.stderr.unwrap() < 1e-12);
        }
    }

    #[test]
    fn deterministic_across_exec_modes() {
        let s = setting(8);
        let p = DeviationProfile::new(vec![Strategy::new(0.3, 0.6).unwrap(), Strategy::LIAR]);
        let a = simulate(&s, &p, SimulationOptions { trials: 9000, seed: 11, exec: Exec::Sequential }).unwrap();
        let b = simulate(&s, &p, SimulationOptions { trials: 9000, seed: 11, exec: Exec::Parallel }).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = simulate(&s, &p, SimulationOptions { trials: 9000, seed: 12, exec: Exec::Parallel }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn welford_merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut one = Welford::default();
        xs.iter().for_each(|x| one.push(*x));
        let (mut a, mut b) = (Welford::default(), Welford::default());
        xs[..37].iter().for_each(|x| a.push(*x));
        xs[37..].iter().for_each(|x| b.push(*x));
        let m = a.merge(b);
        assert!((m.mean - one.mean).abs() < 1e-12 && (m.m2 - one.m2).abs() < 1e-10);
    }
}
