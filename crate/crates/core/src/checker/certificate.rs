//! Deviation certificates and their independent re-verification.

use serde::{Deserialize, Serialize};

use super::game::{agent_values, conditional_value, validate_rows, FiniteBayesianGame, MixedProfile, Overlay};
use crate::error::{Error, Result};
use crate::mechanism::{member_utilities, truthful_ex_ante, truthful_interim, DeviationProfile, Setting, Strategy};
use crate::thresholds::{deviation_succeeds, Concept};

/// Recorded and recomputed deltas must agree to this relative accuracy.
pub const RECOMPUTE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    ExAnte,
    Bayesian,
    /// Members know every member's type and all must strictly gain.
    InterimD,
}

impl std::fmt::Display for CertificateKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CertificateKind::ExAnte => "ex_ante",
            CertificateKind::Bayesian => "bayesian",
            CertificateKind::InterimD => "interim_d",
        })
    }
}

impl From<Concept> for CertificateKind {
    fn from(c: Concept) -> Self {
        match c {
            Concept::ExAnte => CertificateKind::ExAnte,
            Concept::Bayesian => CertificateKind::Bayesian,
        }
    }
}

/// A coalition, its replacement strategies and the utility gains they earn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviationCertificate {
    pub concept: CertificateKind,
    pub coalition: Vec<usize>,
    /// `strategies[member][type]`: action distribution replacing the
    /// member's strategy.
    pub strategies: Vec<Vec<Vec<f64>>>,
    /// Per member: `[ex-ante delta]`, one delta per own type, or
    /// `[conditional delta]` for `interim_d`.
    pub deltas: Vec<Vec<f64>>,
    /// Types of the coalition members, `interim_d` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditioning_types: Option<Vec<usize>>,
    pub tolerance: f64,
}

impl DeviationCertificate {
    /// Whether the recorded deltas meet the concept's conditions.
    pub fn conditions_hold(&self) -> bool {
        conditions_hold(self.concept, &self.deltas, self.tolerance)
    }
}

pub(crate) fn conditions_hold(kind: CertificateKind, deltas: &[Vec<f64>], tol: f64) -> bool {
    match kind {
        CertificateKind::ExAnte | CertificateKind::Bayesian => deviation_succeeds(deltas.iter().flatten(), tol),
        CertificateKind::InterimD => !deltas.is_empty() && deltas.iter().flatten().all(|d| *d > tol),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= RECOMPUTE_TOL * (1.0 + a.abs().max(b.abs()))
}

fn check_shape(game: &FiniteBayesianGame, cert: &DeviationCertificate) -> Result<()> {
    let n = game.agents();
    if cert.coalition.is_empty() || cert.coalition.len() != cert.strategies.len() || cert.coalition.len() != cert.deltas.len() {
        return Err(Error::DimensionMismatch(format!(
            "coalition of {} members with {} strategies and {} delta rows",
            cert.coalition.len(),
            cert.strategies.len(),
            cert.deltas.len()
        )));
    }
    for (pos, a) in cert.coalition.iter().enumerate() {
        if *a >= n {
            return Err(Error::IndexOutOfRange { index: *a, len: n });
        }
        if cert.coalition[..pos].contains(a) {
            return Err(Error::InvalidArgument(format!("agent {a} listed twice in the coalition")));
        }
        validate_rows(game, *a, &cert.strategies[pos])?;
    }
    if cert.concept == CertificateKind::InterimD {
        let types = cert.conditioning_types.as_ref().ok_or_else(|| {
            Error::InvalidArgument("interim_d certificate without conditioning types".into())
        })?;
        if types.len() != cert.coalition.len() {
            return Err(Error::DimensionMismatch("one conditioning type per member required".into()));
        }
        for (a, t) in cert.coalition.iter().zip(types) {
            if *t >= game.types()[*a] {
                return Err(Error::IndexOutOfRange { index: *t, len: game.types()[*a] });
            }
        }
    }
    Ok(())
}

/// Deltas of a coalition deviation computed from scratch.
pub fn certificate_deltas(
    game: &FiniteBayesianGame,
    profile: &MixedProfile,
    kind: CertificateKind,
    coalition: &[usize],
    strategies: &[Vec<Vec<f64>>],
    conditioning_types: Option<&[usize]>,
) -> Result<Vec<Vec<f64>>> {
    profile.validate(game)?;
    let replacement: Vec<&[Vec<f64>]> = strategies.iter().map(|s| s.as_slice()).collect();
    let view = Overlay {
        base: profile,
        coalition,
        replacement: &replacement,
    };
    coalition
        .iter()
        .map(|i| match kind {
            CertificateKind::ExAnte => {
                let new = agent_values(game, &view, *i).ex_ante;
                Ok(vec![new - agent_values(game, profile, *i).ex_ante])
            }
            CertificateKind::Bayesian => {
                let new = agent_values(game, &view, *i).interim;
                let old = agent_values(game, profile, *i).interim;
                Ok(new.iter().zip(&old).map(|(a, b)| a - b).collect())
            }
            CertificateKind::InterimD => {
                let types = conditioning_types
                    .ok_or_else(|| Error::InvalidArgument("interim_d deltas need conditioning types".into()))?;
                let given: Vec<(usize, usize)> = coalition.iter().copied().zip(types.iter().copied()).collect();
                let new = conditional_value(game, &view, *i, &given)?;
                let old = conditional_value(game, profile, *i, &given)?;
                Ok(vec![new - old])
            }
        })
        .collect()
}

/// Recomputes every delta and checks the concept's conditions. Shape
/// problems are errors; wrong numbers or unmet conditions give `false`.
pub fn verify_certificate(game: &FiniteBayesianGame, profile: &MixedProfile, cert: &DeviationCertificate) -> Result<bool> {
    check_shape(game, cert)?;
    let fresh = certificate_deltas(
        game,
        profile,
        cert.concept,
        &cert.coalition,
        &cert.strategies,
        cert.conditioning_types.as_deref(),
    )?;
    let same = fresh.len() == cert.deltas.len()
        && fresh
            .iter()
            .zip(&cert.deltas)
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y)));
    Ok(same && conditions_hold(cert.concept, &fresh, cert.tolerance))
}

/// Folds per-type deltas into ex-ante deltas with the members' type
/// marginals.
pub fn to_ex_ante(game: &FiniteBayesianGame, cert: &DeviationCertificate) -> Result<DeviationCertificate> {
    if cert.concept != CertificateKind::Bayesian {
        return Err(Error::InvalidArgument(format!("cannot fold a {:?} certificate", cert.concept)));
    }
    check_shape(game, cert)?;
    let deltas = cert
        .coalition
        .iter()
        .zip(&cert.deltas)
        .map(|(a, row)| {
            if row.len() != game.types()[*a] {
                return Err(Error::DimensionMismatch(format!("agent {a} needs one delta per type")));
            }
            Ok(vec![row.iter().enumerate().map(|(t, d)| game.marginal(*a, t) * d).sum()])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DeviationCertificate {
        concept: CertificateKind::ExAnte,
        deltas,
        ..cert.clone()
    })
}

/// Outcome of a Bayesian Nash check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BneReport {
    pub holds: bool,
    /// Largest interim gain from a unilateral pure switch (may be negative).
    pub worst_violation: f64,
    /// `(agent, type, action)` achieving it.
    pub witness: Option<(usize, usize, usize)>,
}

/// Interim utility is affine in the agent's own mixture at each type, so
/// checking pure replacements suffices.
pub fn bne_check(game: &FiniteBayesianGame, profile: &MixedProfile, tol: f64) -> Result<BneReport> {
    profile.validate(game)?;
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for i in 0..game.agents() {
        let base = agent_values(game, profile, i).interim;
        for t in 0..game.types()[i] {
            for a in 0..game.actions()[i] {
                let mut rows = profile.strategies[i].clone();
                rows[t] = (0..game.actions()[i]).map(|x| if x == a { 1.0 } else { 0.0 }).collect();
                let replacement = [rows.as_slice()];
                let view = Overlay {
                    base: profile,
                    coalition: &[i],
                    replacement: &replacement,
                };
                let gain = agent_values(game, &view, i).interim[t] - base[t];
                if gain > worst {
                    worst = gain;
                    witness = Some((i, t, a));
                }
            }
        }
    }
    Ok(BneReport {
        holds: worst <= tol,
        worst_violation: worst,
        witness,
    })
}

fn rows_to_strategy(rows: &[Vec<f64>]) -> Result<Strategy> {
    if rows.len() != 2 || rows.iter().any(|r| r.len() != 2) {
        return Err(Error::DimensionMismatch("peer prediction strategies are 2x2".into()));
    }
    Strategy::new(rows[0][1], rows[1][1])
}

/// Mechanism-level deltas of a coalition against universal truth-telling.
pub fn mechanism_deltas(setting: &Setting, strategies: &[Strategy], concept: Concept) -> Result<Vec<Vec<f64>>> {
    let members = member_utilities(setting, &DeviationProfile::new(strategies.to_vec()))?;
    Ok(match concept {
        Concept::ExAnte => {
            let base = truthful_ex_ante(setting);
            members.iter().map(|m| vec![m.ex_ante - base]).collect()
        }
        Concept::Bayesian => {
            let base = truthful_interim(setting);
            members.iter().map(|m| vec![m.interim[0] - base[0], m.interim[1] - base[1]]).collect()
        }
    })
}

/// Re-verifies a certificate against the truthful profile of the
/// mechanism using the closed-form utilities, for any `n`.
pub fn verify_mechanism_certificate(setting: &Setting, cert: &DeviationCertificate) -> Result<bool> {
    let concept = match cert.concept {
        CertificateKind::ExAnte => Concept::ExAnte,
        CertificateKind::Bayesian => Concept::Bayesian,
        CertificateKind::InterimD => {
            return Err(Error::InvalidArgument(
                "interim_d certificates are verified against an explicit game".into(),
            ))
        }
    };
    if cert.coalition.len() != cert.strategies.len() || cert.coalition.iter().any(|a| *a >= setting.n()) {
        return Err(Error::DimensionMismatch("coalition does not fit the setting".into()));
    }
    let strategies = cert.strategies.iter().map(|r| rows_to_strategy(r)).collect::<Result<Vec<_>>>()?;
    let fresh = mechanism_deltas(setting, &strategies, concept)?;
    let same = fresh.len() == cert.deltas.len()
        && fresh
            .iter()
            .zip(&cert.deltas)
            .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| close(*x, *y)));
    Ok(same && conditions_hold(cert.concept, &fresh, cert.tolerance))
}
