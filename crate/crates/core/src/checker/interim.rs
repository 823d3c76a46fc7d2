//! Coalitions whose members know each other's signals.
//!
//! Given the members' signals `s_D`, every outside agent's signal is `h`
//! with probability `p = Pr(h | s_D)`. All members then report the signal
//! whose posterior scores better against that prediction, breaking ties
//! toward the larger of `PS(h, q_h)` and `PS(l, q_l)`.

use super::certificate::{CertificateKind, DeviationCertificate};
use super::game::strategy_rows;
use crate::error::{Error, Result};
use crate::mechanism::{Setting, Strategy};
use crate::prior::{coalition_posterior, WorldModel};
use crate::scoring::{ScoreTable, ScoringRule, Signal};

/// Conditional utilities of every member when each reports `reports[i]`.
fn member_values(scores: &ScoreTable, n: usize, p: f64, types: &[Signal], reports: &[Signal]) -> Vec<f64> {
    let d = types.len();
    let outside = (n - d) as f64;
    (0..d)
        .map(|i| {
            let r_i = reports[i];
            let inside: f64 = (0..d).filter(|j| *j != i).map(|j| scores.get(r_i, reports[j])).sum();
            let expected = p * scores.get(r_i, Signal::High) + (1.0 - p) * scores.get(r_i, Signal::Low);
            (inside + outside * expected) / (n - 1) as f64
        })
        .collect()
}

/// The coordinated report chosen for a coalition with posterior `p`.
pub fn coordinated_report(scores: &ScoreTable, p: f64) -> Signal {
    use Signal::{High as H, Low as L};
    let t_h = p * scores.get(H, H) + (1.0 - p) * scores.get(H, L);
    let t_l = p * scores.get(L, H) + (1.0 - p) * scores.get(L, L);
    if t_h > t_l {
        H
    } else if t_h < t_l {
        L
    } else if scores.get(H, H) >= scores.get(L, L) {
        H
    } else {
        L
    }
}

/// A certificate that truthful reporting is not an interim equilibrium for
/// the coalition with signals `types`, or `None` when some member does not
/// strictly gain.
///
/// The coalition is agents `0..d`; the certificate's strategies report the
/// coordinated signal at every type.
pub fn interim_d_deviation(
    wm: &WorldModel,
    rule: &ScoringRule,
    n: usize,
    types: &[Signal],
    tolerance: f64,
) -> Result<Option<DeviationCertificate>> {
    let d = types.len();
    if d == 0 || d > n {
        return Err(Error::InvalidArgument(format!("coalition of {d} signals must fit in {n} agents")));
    }
    let setting = Setting::from_world_model(n, *wm, rule.clone())?;
    let scores = setting.scores();
    let count_h = types.iter().filter(|t| **t == Signal::High).count();
    let p = coalition_posterior(wm, count_h, d - count_h)?.p_h();
    let report = coordinated_report(scores, p);
    let truthful = member_values(scores, n, p, types, types);
    let deviated = member_values(scores, n, p, types, &vec![report; d]);
    let deltas: Vec<Vec<f64>> = deviated.iter().zip(&truthful).map(|(a, b)| vec![a - b]).collect();
    if !deltas.iter().all(|x| x[0] > tolerance) {
        return Ok(None);
    }
    let constant = match report {
        Signal::High => Strategy::ALWAYS_H,
        Signal::Low => Strategy::ALWAYS_L,
    };
    Ok(Some(DeviationCertificate {
        concept: CertificateKind::InterimD,
        coalition: (0..d).collect(),
        strategies: vec![strategy_rows(constant); d],
        deltas,
        conditioning_types: Some(types.iter().map(|t| t.index()).collect()),
        tolerance,
    }))
}
