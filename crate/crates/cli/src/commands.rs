use std::fmt::Write as _;
use std::path::Path;

use collusion_lab::checker::{
    bne_check, find_deviation, find_mechanism_deviation, interim_d_deviation, verify_certificate, BneReport,
    DeviationCertificate, FiniteBayesianGame, MixedProfile, SearchOutcome,
};
use collusion_lab::mechanism::{ex_ante_utility, simulate as run_simulation, SimulationOptions, SimulationReport};
use collusion_lab::thresholds::{k_bayesian, k_ex_ante, liar_threshold, n_zero, scan as run_scan};
use collusion_lab::{
    Concept, DeviationProfile, Role, ScanPoint, ScanRow, Setting, SideThreshold, Signal, Strategy, ThresholdReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{config_err, parse, CliResult, ConceptArg, DeviationArg, Format, RunConfig, SweepParam};
use crate::Status;

pub const SCAN_HEADER: &str = "n,k_E_h,k_E_l,k_E,k_B_h,k_B_l,k_B,n_zero";

pub fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn side(t: SideThreshold) -> String {
    match t {
        SideThreshold::Finite(k) => k.to_string(),
        SideThreshold::Unbounded => "inf".into(),
    }
}

fn csv_cells(row: &ScanRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        row.n,
        side(row.ex_ante.k_h),
        side(row.ex_ante.k_l),
        row.ex_ante.k,
        side(row.bayesian.k_h),
        side(row.bayesian.k_l),
        row.bayesian.k,
        row.n_zero
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdsOutput {
    pub rule: String,
    pub ex_ante: ThresholdReport,
    pub bayesian: ThresholdReport,
    /// Bayesian thresholds are only guaranteed once `n >= n_zero`.
    pub n_zero: usize,
    pub bayesian_guaranteed: bool,
    pub liar: SideThreshold,
}

pub fn thresholds(cfg: &RunConfig) -> CliResult<Status> {
    let s = cfg.setting()?;
    let out = ThresholdsOutput {
        rule: s.rule().name(),
        ex_ante: k_ex_ante(&s)?,
        bayesian: k_bayesian(&s)?,
        n_zero: n_zero(s.prior(), s.rule())?,
        bayesian_guaranteed: false,
        liar: liar_threshold(&s),
    };
    let out = ThresholdsOutput { bayesian_guaranteed: s.n() >= out.n_zero, ..out };
    match cfg.format.unwrap_or(Format::Text) {
        Format::Json => print_json(&out),
        Format::Csv => {
            println!("{SCAN_HEADER}");
            println!(
                "{}",
                csv_cells(&ScanRow { n: s.n(), ex_ante: out.ex_ante.clone(), bayesian: out.bayesian.clone(), n_zero: out.n_zero })
            );
        }
        Format::Text => {
            let p = s.prior();
            println!("n = {}, Pr(h) = {}, Pr(h|h) = {}, rule = {}", s.n(), p.p_h(), p.p_h_given_h(), out.rule);
            println!("{:<10} {:>8} {:>8} {:>8}", "concept", "k_h", "k_l", "k");
            for r in [&out.ex_ante, &out.bayesian] {
                println!("{:<10} {:>8} {:>8} {:>8}", r.concept.to_string(), side(r.k_h), side(r.k_l), r.k);
            }
            let note = if out.bayesian_guaranteed { "" } else { " (bayesian thresholds not guaranteed below n_zero)" };
            println!("n_zero = {}{note}", out.n_zero);
            println!("liar threshold = {}", side(out.liar));
        }
    }
    Ok(Status::Ok)
}

pub fn falsify(cfg: &RunConfig) -> CliResult<Status> {
    let s = cfg.setting()?;
    let format = cfg.format.unwrap_or(Format::Json);
    if format == Format::Csv {
        return Err(config_err("falsify writes json or text"));
    }
    let concept = match cfg.concept.unwrap_or(ConceptArg::ExAnte) {
        ConceptArg::ExAnte => Concept::ExAnte,
        ConceptArg::Bayesian => Concept::Bayesian,
        ConceptArg::InterimD => return interim_d(cfg, &s, format),
    };
    let k = cfg.require_k()?;
    let out = find_mechanism_deviation(&s, k, concept, &cfg.search_options())?;
    match format {
        Format::Text => match &out.certificate {
            Some(c) => print!("{}", describe_certificate(c)),
            None => println!("no {concept} deviation with at most {k} members on the searched grid ({} nodes)", out.nodes),
        },
        _ => print_json(&out),
    }
    Ok(if out.certificate.is_some() { Status::Ok } else { Status::NotFound })
}

fn interim_d(cfg: &RunConfig, s: &Setting, format: Format) -> CliResult<Status> {
    let wm = s.world_model().ok_or_else(|| config_err("interim_d needs a world_model"))?;
    let types = cfg.types.clone().unwrap_or(vec![Signal::High, Signal::Low]);
    let cert = interim_d_deviation(wm, s.rule(), s.n(), &types, cfg.tolerance())?;
    match (format, &cert) {
        (Format::Text, Some(c)) => print!("{}", describe_certificate(c)),
        (Format::Text, None) => println!("some member of the coalition does not strictly gain"),
        _ => print_json(&cert),
    }
    Ok(if cert.is_some() { Status::Ok } else { Status::NotFound })
}

fn describe_certificate(c: &DeviationCertificate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} deviation by {} members (tolerance {})", c.concept, c.coalition.len(), c.tolerance);
    for ((agent, rows), deltas) in c.coalition.iter().zip(&c.strategies).zip(&c.deltas) {
        let _ = writeln!(out, "  agent {agent}: strategy {rows:?}, gains {deltas:?}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClosedForm {
    pub role: Role,
    pub ex_ante: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOutput {
    pub simulation: SimulationReport,
    pub closed_form: Vec<ClosedForm>,
}

pub fn simulate(cfg: &RunConfig) -> CliResult<Status> {
    let s = cfg.setting()?;
    let profile = match &cfg.profile {
        Some(p) => DeviationProfile::new(p.clone()),
        None => {
            let sigma = cfg.deviation.map_or(Strategy::TRUTHFUL, DeviationArg::strategy);
            DeviationProfile::uniform(cfg.k.unwrap_or(1), sigma)
        }
    };
    let opts = SimulationOptions {
        trials: cfg.trials.unwrap_or(100_000),
        seed: cfg.seed.unwrap_or(0),
        exec: cfg.exec(),
    };
    let simulation = run_simulation(&s, &profile, opts)?;
    let closed_form = simulation
        .roles
        .iter()
        .map(|r| Ok(ClosedForm { role: r.role, ex_ante: ex_ante_utility(&s, &profile, r.role)? }))
        .collect::<CliResult<Vec<_>>>()?;
    let out = SimulateOutput { simulation, closed_form };
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => print_json(&out),
        Format::Text => {
            println!("{:<14} {:>12} {:>12} {:>12}", "role", "mean", "stderr", "closed form");
            for (r, c) in out.simulation.roles.iter().zip(&out.closed_form) {
                let se = r.stderr.map_or("-".into(), |x| format!("{x:.6}"));
                println!("{:<14} {:>12.6} {:>12} {:>12.6}", format!("{:?}", r.role), r.mean, se, c.ex_ante);
            }
        }
        Format::Csv => return Err(config_err("simulate writes json or text")),
    }
    Ok(Status::Ok)
}

/// Sweep points in order; `from > to` gives none.
fn sweep_values(from: f64, to: f64, step: f64) -> CliResult<Vec<f64>> {
    if !(step > 0.0 && step.is_finite() && from.is_finite() && to.is_finite()) {
        return Err(config_err(format!("sweep needs finite bounds and a positive step, got step {step}")));
    }
    if from > to {
        return Ok(Vec::new());
    }
    let count = ((to - from) / step + 1e-9).floor() as usize + 1;
    if count > 1_000_000 {
        return Err(config_err(format!("sweep has {count} points; the limit is 1000000")));
    }
    Ok((0..count).map(|i| from + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanEntry {
    pub n: usize,
    pub p_h: f64,
    pub p_h_given_h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<ScanRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn scan(cfg: &RunConfig) -> CliResult<Status> {
    let sweep = cfg.sweep.ok_or_else(|| config_err("scan needs a sweep"))?;
    let rule = cfg.rule()?;
    let base = cfg.prior()?;
    let n = cfg.setting.n.unwrap_or(100);
    let values = sweep_values(sweep.from, sweep.to, sweep.step)?;
    let points: Vec<ScanPoint> = match sweep.param {
        SweepParam::N => {
            if [sweep.from, sweep.step].iter().any(|v| v.fract() != 0.0) {
                return Err(config_err("an n sweep needs integer bounds and step"));
            }
            if !values.is_empty() && sweep.from < 2.0 {
                return Err(config_err(format!("n must be at least 2, sweep starts at {}", sweep.from)));
            }
            values
                .iter()
                .map(|v| ScanPoint { n: *v as usize, p_h: base.p_h(), p_h_given_h: base.p_h_given_h(), rule: rule.clone() })
                .collect()
        }
        SweepParam::PH | SweepParam::PHGivenH => values
            .iter()
            .map(|v| {
                let (p_h, p_h_given_h) =
                    if sweep.param == SweepParam::PH { (*v, base.p_h_given_h()) } else { (base.p_h(), *v) };
                ScanPoint { n, p_h, p_h_given_h, rule: rule.clone() }
            })
            .collect(),
    };
    let rows = run_scan(&points, cfg.exec());
    let prior_sweep = sweep.param != SweepParam::N;
    if !prior_sweep {
        if let Some(Err(e)) = rows.iter().find(|r| r.is_err()) {
            return Err(config_err(e.to_string()));
        }
    }
    let entries: Vec<ScanEntry> = points
        .iter()
        .zip(rows)
        .map(|(p, r)| {
            let (row, error) = match r {
                Ok(row) => (Some(row), None),
                Err(e) => (None, Some(e.to_string())),
            };
            ScanEntry { n: p.n, p_h: p.p_h, p_h_given_h: p.p_h_given_h, row, error }
        })
        .collect();
    match cfg.format.unwrap_or(Format::Csv) {
        Format::Json => print_json(&entries),
        Format::Csv => {
            let mut out = String::from(SCAN_HEADER);
            if prior_sweep {
                out.push_str(",p_h,p_h_given_h,error");
            }
            out.push('\n');
            for e in &entries {
                let cells = match &e.row {
                    Some(r) => csv_cells(r),
                    None => format!("{},,,,,,,", e.n),
                };
                out.push_str(&cells);
                if prior_sweep {
                    let err = e.error.as_deref().unwrap_or("").replace('"', "'");
                    let err = if err.is_empty() { err } else { format!("\"{err}\"") };
                    let _ = write!(out, ",{},{},{err}", e.p_h, e.p_h_given_h);
                }
                out.push('\n');
            }
            print!("{out}");
        }
        Format::Text => return Err(config_err("scan writes csv or json")),
    }
    Ok(Status::Ok)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub game: FiniteBayesianGame,
    pub profile: MixedProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameCheckOutput {
    pub bne: BneReport,
    pub search: SearchOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyOutput {
    pub verified: bool,
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

pub fn game_check(cfg: &RunConfig, game: &Path, certificate: Option<&Path>) -> CliResult<Status> {
    let file: GameFile = parse(&read(game)?, &game.display().to_string())?;
    file.profile.validate(&file.game)?;
    if let Some(path) = certificate {
        let cert: DeviationCertificate = parse(&read(path)?, &path.display().to_string())?;
        let verified = verify_certificate(&file.game, &file.profile, &cert)?;
        print_json(&VerifyOutput { verified });
        return Ok(if verified { Status::Ok } else { Status::NotFound });
    }
    let concept = match cfg.concept.unwrap_or(ConceptArg::ExAnte) {
        ConceptArg::ExAnte => Concept::ExAnte,
        ConceptArg::Bayesian => Concept::Bayesian,
        ConceptArg::InterimD => return Err(config_err("game-check searches ex_ante or bayesian deviations")),
    };
    let k = cfg.k.unwrap_or(1);
    if k == 0 {
        return Err(config_err("k must be at least 1"));
    }
    let bne = bne_check(&file.game, &file.profile, cfg.tolerance())?;
    let search = find_deviation(&file.game, &file.profile, k, concept, &cfg.search_options())?;
    let found = search.certificate.is_some();
    match cfg.format.unwrap_or(Format::Json) {
        Format::Json => print_json(&GameCheckOutput { bne, search }),
        Format::Text => {
            println!("bayesian nash: {} (worst unilateral gain {:.3e})", bne.holds, bne.worst_violation);
            match &search.certificate {
                Some(c) => print!("{}", describe_certificate(c)),
                None => println!("no {concept} deviation with at most {k} members ({} nodes)", search.nodes),
            }
        }
        Format::Csv => return Err(config_err("game-check writes json or text")),
    }
    Ok(if found { Status::Ok } else { Status::NotFound })
}
