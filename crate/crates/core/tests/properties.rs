//! Randomized invariants of scoring, priors, utilities and thresholds.

mod common;

use collusion_lab::mechanism::{
    ex_ante_utility, f_side, g_side, interim_utility, member_utilities, pair_reward_hessian, self_play_reward, simulate,
    truthful_ex_ante, truthful_interim, SimulationOptions,
};
use collusion_lab::prior::{coalition_posterior, induce_prior, make_prior, WorldModel};
use collusion_lab::scoring::{expected_score, gap_report, verify_properness};
use collusion_lab::thresholds::{k_bayesian, k_ex_ante, liar_threshold, n_zero};
use collusion_lab::{
    BinaryDist, BinaryPrior, DeviationProfile, Exec, Role, ScoringRule, Setting, SideThreshold, Signal, Strategy,
};
use proptest::prelude::*;
use proptest::strategy::Strategy as Gen;
use Signal::{High as H, Low as L};

fn arb_prior() -> impl Gen<Value = BinaryPrior> {
    (0.05f64..0.95, 0.05f64..0.95).prop_map(|(p_h, u)| make_prior(p_h, p_h + (1.0 - p_h) * u).unwrap())
}

fn arb_rule() -> impl Gen<Value = ScoringRule> {
    prop_oneof![Just(ScoringRule::Brier), Just(ScoringRule::log())]
}

fn arb_setting(n_lo: usize, n_hi: usize) -> impl Gen<Value = Setting> {
    (arb_prior(), arb_rule(), n_lo..=n_hi).prop_map(|(p, r, n)| Setting::new(n, p, r).unwrap())
}

fn arb_strategy() -> impl Gen<Value = Strategy> {
    (0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(l, h)| Strategy::new(l, h).unwrap())
}

fn arb_world_model() -> impl Gen<Value = WorldModel> {
    (0.05f64..0.95, 0.02f64..0.98, 0.02f64..0.98)
        .prop_filter("states must differ", |(_, a, b)| (a - b).abs() > 0.05)
        .prop_map(|(w, a, b)| WorldModel::new([w, 1.0 - w], [a, b]).unwrap())
}

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, failure_persistence: None, ..ProptestConfig::default() }
}

fn grid21() -> impl Iterator<Item = (f64, f64)> {
    (0..21).flat_map(|i| (0..21).map(move |j| (i as f64 / 20.0, j as f64 / 20.0)))
}

#[test]
fn properness_holds_on_fine_grids() {
    for steps in [11, 12, 17, 21, 33, 41] {
        for rule in [ScoringRule::Brier, ScoringRule::log()] {
            let rep = verify_properness(&rule, steps, 1e-12).unwrap();
            assert!(rep.proper && rep.strict, "{} at {steps}: {rep:?}", rule.name());
        }
    }
}

#[test]
fn truthful_is_best_lone_deviation() {
    let s = Setting::new(100, make_prior(2.0 / 3.0, 0.8).unwrap(), ScoringRule::Brier).unwrap();
    let base = truthful_ex_ante(&s);
    for (l, h) in grid21() {
        let p = DeviationProfile::uniform(1, Strategy::new(l, h).unwrap());
        let u = ex_ante_utility(&s, &p, Role::Deviator(0)).unwrap();
        if (l, h) == (0.0, 1.0) {
            assert!((u - base).abs() < 1e-12);
        } else {
            assert!(u < base - 1e-12, "({l}, {h}) reaches {u} vs {base}");
        }
    }
}

/// Symmetric coalitions of size `k <= k_B` inside either triangle never
/// beat truth-telling at the corresponding signal.
#[test]
fn triangle_dominance() {
    let mut r = common::rng(11);
    for _ in 0..40 {
        let s = common::random_setting(&mut r, 5, 120);
        let kb = k_bayesian(&s).unwrap();
        let p = s.prior();
        let truth = truthful_interim(&s);
        let alpha_h = p.p_l_given_h() / p.p_h_given_h();
        let alpha_l = p.p_l_given_l() / p.p_h_given_l();
        let ks = [1, (kb.k + 1) / 2, kb.k];
        for k in ks {
            for (bl, bh) in grid21() {
                let prof = DeviationProfile::uniform(k, Strategy::new(bl, bh).unwrap());
                let truthful_point = (bl, bh) == (0.0, 1.0);
                if bh + alpha_h * bl <= 1.0 + 1e-12 {
                    let u = interim_utility(&s, &prof, Role::Deviator(0), H).unwrap();
                    check_dominated(u, truth[H.index()], truthful_point, (k, bl, bh, "h"));
                }
                if bh + alpha_l * bl >= 1.0 - 1e-12 {
                    let u = interim_utility(&s, &prof, Role::Deviator(0), L).unwrap();
                    check_dominated(u, truth[L.index()], truthful_point, (k, bl, bh, "l"));
                }
            }
        }
    }
}

fn check_dominated(u: f64, truth: f64, at_truth: bool, ctx: (usize, f64, f64, &str)) {
    if at_truth {
        assert!((u - truth).abs() < 1e-12, "{ctx:?}");
    } else {
        assert!(u < truth + 1e-12, "{ctx:?}: {u} > {truth}");
    }
}

#[test]
fn hessian_matches_finite_differences() {
    let mut r = common::rng(5);
    let eps = 1e-3;
    for _ in 0..200 {
        let s = common::random_setting(&mut r, 2, 50);
        let hess = pair_reward_hessian(&s);
        assert!(hess.psd);
        let x = [0.2 + 0.6 * rand::Rng::random::<f64>(&mut r), 0.2 + 0.6 * rand::Rng::random::<f64>(&mut r)];
        let f = |a: f64, b: f64| self_play_reward(&s, Strategy::new(a, b).unwrap());
        let d00 = (f(x[0] + eps, x[1]) - 2.0 * f(x[0], x[1]) + f(x[0] - eps, x[1])) / (eps * eps);
        let d11 = (f(x[0], x[1] + eps) - 2.0 * f(x[0], x[1]) + f(x[0], x[1] - eps)) / (eps * eps);
        let d01 = (f(x[0] + eps, x[1] + eps) - f(x[0] + eps, x[1] - eps) - f(x[0] - eps, x[1] + eps)
            + f(x[0] - eps, x[1] - eps))
            / (4.0 * eps * eps);
        let scale = 1.0f64.max(hess.matrix[1][1].abs());
        for (fd, exact) in [(d00, hess.matrix[0][0]), (d11, hess.matrix[1][1]), (d01, hess.matrix[0][1])] {
            assert!((fd - exact).abs() <= 1e-6 * scale, "{fd} vs {exact}");
        }
    }
}

#[test]
fn g_derivative_identities() {
    let mut r = common::rng(6);
    let eps = 1e-4;
    for _ in 0..200 {
        let s = common::random_setting(&mut r, 2, 50);
        let p = *s.prior();
        let sc = *s.scores();
        let c = s.gaps().curvature();
        let g = |side: Signal, l: f64, h: f64| g_side(&s, side, Strategy::new(l, h).unwrap());
        let (l, h) = (0.3 + 0.4 * rand::Rng::random::<f64>(&mut r), 0.3 + 0.4 * rand::Rng::random::<f64>(&mut r));
        let second = |side, dl: f64, dh: f64| {
            (g(side, l + dl, h + dh) - 2.0 * g(side, l, h) + g(side, l - dl, h - dh)) / (eps * eps)
        };
        let tol = 1e-8 * 1.0f64.max(c);
        assert!((second(H, 0.0, eps) - 2.0 * p.p_h_given_h() * c).abs() < tol * 1e2);
        assert!(second(H, eps, 0.0).abs() < tol * 1e2);
        assert!((second(L, eps, 0.0) - 2.0 * p.p_l_given_l() * c).abs() < tol * 1e2);
        assert!(second(L, 0.0, eps).abs() < tol * 1e2);

        // along beta_l = alpha_h (b - beta_h) the peer's chance of saying h is fixed
        let diff_h = sc.get(H, H) - sc.get(L, H);
        let diff_l = sc.get(H, L) - sc.get(L, L);
        let alpha_h = p.p_h_given_h() / p.p_l_given_h();
        let b = h + l / alpha_h;
        let along = |t: f64| g(H, alpha_h * (b - t), t);
        let dir = (along(h + eps) - along(h - eps)) / (2.0 * eps);
        let m = b * p.p_h_given_h();
        let want = m * diff_h + (1.0 - m) * diff_l;
        assert!((dir - want).abs() < tol, "{dir} vs {want}");
        let own = (f_side(&s, H, h + eps, Strategy::new(alpha_h * (b - h), h).unwrap())
            - f_side(&s, H, h - eps, Strategy::new(alpha_h * (b - h), h).unwrap()))
            / (2.0 * eps);
        assert!((own - want).abs() < tol);

        let alpha_l = p.p_l_given_l() / p.p_h_given_l();
        let b = h + alpha_l * l;
        let along = |t: f64| g(L, t, b - alpha_l * t);
        let dir = (along(l + eps) - along(l - eps)) / (2.0 * eps);
        let m = b * p.p_h_given_l();
        let want = m * diff_h + (1.0 - m) * diff_l;
        assert!((dir - want).abs() < tol, "{dir} vs {want}");
    }
}

#[test]
fn monte_carlo_agrees_with_closed_form() {
    let mut r = common::rng(7);
    for case in 0..20u64 {
        let wm = common::random_world_model(&mut r);
        let n = rand::Rng::random_range(&mut r, 3..=30);
        let s = Setting::from_world_model(n, wm, common::random_rule(&mut r)).unwrap();
        let k = rand::Rng::random_range(&mut r, 1..n);
        let prof = DeviationProfile::new((0..k).map(|_| common::random_strategy(&mut r)).collect());
        let opts = SimulationOptions { trials: 20_000, seed: 1000 + case, exec: Exec::default() };
        let rep = simulate(&s, &prof, opts).unwrap();
        for est in &rep.roles {
            let exact = ex_ante_utility(&s, &prof, est.role).unwrap();
            let se = est.stderr.unwrap();
            assert!((est.mean - exact).abs() <= 4.0 * se + 1e-12, "{est:?} vs {exact}");
        }
    }
}

/// Linear scan over `n`, written against the raw condition definitions.
fn n_zero_oracle(prior: &BinaryPrior, rule: &ScoringRule) -> usize {
    let g = gap_report(rule, prior).unwrap();
    let tol = 1e-9;
    let c = g.delta_h + g.delta_l;
    let holds = |n: usize| {
        let m = (n - 1) as f64;
        let bh = 4.0 * g.spread * (c + g.margin_l) / (m * c * g.expected_gain_h);
        let bl = 4.0 * g.spread * (c + g.margin_h) / (m * c * g.expected_gain_l);
        bh < 0.25 - tol
            && bl < 0.25 - tol
            && (g.margin_h <= tol || bh <= g.margin_h / c + tol)
            && (g.margin_l <= tol || bl <= g.margin_l / c + tol)
            && bh <= g.expected_gain_h / (prior.p_h_given_h() * c) + tol
            && bl <= g.expected_gain_l / (prior.p_l_given_l() * c) + tol
    };
    (2..).find(|n| holds(*n)).unwrap()
}

#[test]
fn n_zero_is_minimal() {
    let mut r = common::rng(8);
    for _ in 0..60 {
        let prior = common::random_prior(&mut r);
        let rule = common::random_rule(&mut r);
        let oracle = n_zero_oracle(&prior, &rule);
        assert_eq!(n_zero(&prior, &rule).unwrap(), oracle, "{prior:?} {}", rule.name());
    }
    assert_eq!(n_zero(&make_prior(2.0 / 3.0, 0.8).unwrap(), &ScoringRule::Brier).unwrap(), 107);
}

proptest! {
    #![proptest_config(cases(1000))]

    #[test]
    fn score_gaps_are_positive(prior in arb_prior(), rule in arb_rule()) {
        let g = gap_report(&rule, &prior).unwrap();
        prop_assert!(g.delta_h > 0.0 && g.delta_l > 0.0);
        prop_assert!(g.margin_h > 0.0 || g.margin_l > 0.0);
        prop_assert!(g.spread >= g.delta_h.max(g.delta_l) - 1e-12);
        prop_assert!(g.expected_gain_h > 0.0 && g.expected_gain_l > 0.0);
    }

    #[test]
    fn brier_self_score_is_squared_norm(p in 0.0f64..=1.0) {
        let d = BinaryDist::new(p).unwrap();
        let sum: f64 = Signal::ALL.iter().map(|s| d.prob(*s) * ScoringRule::Brier.score(*s, d).unwrap()).sum();
        let e = expected_score(&ScoringRule::Brier, d, d).unwrap();
        prop_assert!((e - (p * p + (1.0 - p) * (1.0 - p))).abs() < 1e-12);
        prop_assert!((e - sum).abs() < 1e-12);
    }

    #[test]
    fn priors_are_exchangeable(prior in arb_prior()) {
        let lhs = prior.p_h() * prior.p_l_given_h();
        let rhs = prior.p_l() * prior.p_h_given_l();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!(prior.p_h_given_l() > 0.0 && prior.p_h_given_l() < prior.p_h_given_h());
    }

    #[test]
    fn single_signal_posterior_matches_induced_prior(wm in arb_world_model()) {
        let prior = induce_prior(&wm).unwrap();
        for s in Signal::ALL {
            let (h, l) = if s == H { (1, 0) } else { (0, 1) };
            let direct = coalition_posterior(&wm, h, l).unwrap().p_h();
            prop_assert!((direct - prior.posterior(s).p_h()).abs() < 1e-12);
        }
    }

    #[test]
    fn utilities_are_total(s in arb_setting(2, 60), sigmas in prop::collection::vec(arb_strategy(), 1..8)) {
        prop_assume!(sigmas.len() <= s.n());
        let prof = DeviationProfile::new(sigmas);
        let p = *s.prior();
        let mut roles: Vec<Role> = (0..prof.k()).map(Role::Deviator).collect();
        if prof.k() < s.n() {
            roles.push(Role::Truthful);
        }
        for role in roles {
            let ea = ex_ante_utility(&s, &prof, role).unwrap();
            let tot = p.p_h() * interim_utility(&s, &prof, role, H).unwrap()
                + p.p_l() * interim_utility(&s, &prof, role, L).unwrap();
            prop_assert!((ea - tot).abs() < 1e-12);
        }
    }

    #[test]
    fn f_side_is_bilinear(s in arb_setting(2, 10), peer in arb_strategy(), t in 0.0f64..=1.0) {
        for side in Signal::ALL {
            let at = |b: f64, q: Strategy| f_side(&s, side, b, q);
            let mix = at(t, peer);
            prop_assert!((mix - (t * at(1.0, peer) + (1.0 - t) * at(0.0, peer))).abs() < 1e-12);
            let ql = |x| Strategy::new(x, peer.beta_h).unwrap();
            let qh = |x| Strategy::new(peer.beta_l, x).unwrap();
            prop_assert!((at(0.5, ql(t)) - (t * at(0.5, ql(1.0)) + (1.0 - t) * at(0.5, ql(0.0)))).abs() < 1e-12);
            prop_assert!((at(0.5, qh(t)) - (t * at(0.5, qh(1.0)) + (1.0 - t) * at(0.5, qh(0.0)))).abs() < 1e-12);
        }
    }

    #[test]
    fn g_is_f_on_the_diagonal(s in arb_setting(2, 10), sigma in arb_strategy()) {
        prop_assert_eq!(g_side(&s, H, sigma), f_side(&s, H, sigma.beta_h, sigma));
        prop_assert_eq!(g_side(&s, L, sigma), f_side(&s, L, sigma.beta_l, sigma));
    }

    #[test]
    fn liar_threshold_dominates_ex_ante(s in arb_setting(2, 500)) {
        let ke = k_ex_ante(&s).unwrap();
        match liar_threshold(&s) {
            SideThreshold::Finite(k) => prop_assert!(k >= ke.k, "{} < {}", k, ke.k),
            SideThreshold::Unbounded => {}
        }
    }

    #[test]
    fn bayesian_threshold_dominates_ex_ante(s in arb_setting(2, 500)) {
        let ke = k_ex_ante(&s).unwrap();
        let kb = k_bayesian(&s).unwrap();
        let n = s.n();
        prop_assert!(kb.k_h.capped(1 << 40) + 1 >= ke.k_h.capped(1 << 40));
        prop_assert!(kb.k_l.capped(1 << 40) + 1 >= ke.k_l.capped(1 << 40));
        prop_assert!(kb.k >= ke.k);
        prop_assert!(ke.k >= 1 && ke.k <= n && kb.k >= 1 && kb.k <= n);
    }

    #[test]
    fn threshold_ratio_is_scale_free(prior in arb_prior(), rule in arb_rule(), n in 2usize..400, m in 2usize..400) {
        let a = k_ex_ante(&Setting::new(n, prior, rule.clone()).unwrap()).unwrap();
        let b = k_ex_ante(&Setting::new(m, prior, rule).unwrap()).unwrap();
        let ra = a.numerator_h / a.denominator_h / (n - 1) as f64;
        let rb = b.numerator_h / b.denominator_h / (m - 1) as f64;
        prop_assert!((ra - rb).abs() <= 1e-12 * ra.abs().max(1.0));
        // the rounded count tracks the raw ratio to within one agent
        if let SideThreshold::Finite(k) = a.k_h {
            prop_assert!(((k - 1) as f64 - ra * (n - 1) as f64).abs() <= 1.0 + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(cases(500))]

    /// Coalitions within the ex-ante threshold cannot raise their mean utility.
    #[test]
    fn average_utility_is_bounded(s in arb_setting(3, 150), seed in any::<u64>()) {
        let ke = k_ex_ante(&s).unwrap();
        let mut r = common::rng(seed);
        let k = rand::Rng::random_range(&mut r, 1..=ke.k.min(s.n()));
        let prof = DeviationProfile::new((0..k).map(|_| common::random_strategy(&mut r)).collect());
        let mean = member_utilities(&s, &prof).unwrap().iter().map(|m| m.ex_ante).sum::<f64>() / k as f64;
        prop_assert!(mean <= truthful_ex_ante(&s) + 1e-9, "k = {}, mean {}", k, mean);
    }
}
