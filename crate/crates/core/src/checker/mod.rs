//! Explicit finite Bayesian games and coalition-deviation falsifiers.
//!
//! A falsifier that returns no certificate has only searched a grid; it
//! does not prove an equilibrium. Certificates it returns are re-checked by
//! [`verify_certificate`], which recomputes every delta from scratch.

mod certificate;
mod game;
mod interim;
mod search;

pub use certificate::{
    bne_check, certificate_deltas, mechanism_deltas, to_ex_ante, verify_certificate, verify_mechanism_certificate,
    BneReport, CertificateKind, DeviationCertificate, RECOMPUTE_TOL,
};
pub use game::{
    game_conditional_utility, game_ex_ante_utility, game_interim_utility, peer_prediction_game, strategy_rows,
    FiniteBayesianGame, MixedProfile, MAX_PEER_GAME_AGENTS, MAX_VECTORS,
};
pub use interim::{coordinated_report, interim_d_deviation};
pub use search::{find_deviation, find_mechanism_deviation, SearchOptions, SearchOutcome};
