//! Sampling checks against values computed here, independently of the library.

use bernoulli_factory::protocol::{g1_coin, h_coin, p_coin, power_coin, von_neumann};
use bernoulli_factory::rng::{bernoulli_known, cumulative, sample_index, DyadicExpansion, RationalExpansion};
use bernoulli_factory::spb::{g_coin, sample_coupled, BoundingLevel, SearchConfig, SpbCertificate, SpbChain};
use bernoulli_factory::verify::{chi_square_counts, estimate_bias, estimate_with, wilson_interval, SIGMA};
use bernoulli_factory::{BellOutcome, BitSource, CoinSource, HiddenBias, RandomStream};

const TRIALS: u64 = 100_000;
const BUDGET: u64 = 10_000_000;

fn bias(p: f64) -> HiddenBias {
    HiddenBias::new(p).unwrap()
}

fn within(heads: u64, n: u64, want: f64) -> bool {
    let (lo, hi) = wilson_interval(heads, n, SIGMA);
    lo <= want && want <= hi
}

fn h(a: f64, p: f64) -> f64 {
    let d = (p * (1.0 - a)).sqrt() - (a * (1.0 - p)).sqrt();
    d * d
}

fn binomial_pmf(n: u32, k: u32, p: f64) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c = c * (n - i) as f64 / (i + 1) as f64;
    }
    c * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)
}

/// Lower and upper bounding functions of a level, rebuilt from its parameters.
fn bounds_oracle(level: &BoundingLevel, p: f64) -> (f64, f64) {
    let n = level.params.n;
    let b: f64 = (0..=n).map(|j| binomial_pmf(n, j, p) * level.node_values[j as usize]).sum();
    let t = |at: f64, m: u32, big_m: u32| (1.0 - (1.0 - h(at, p)).powi(m as i32)).powi(big_m as i32);
    let tz: f64 = level.params.zero_heavisides.iter().map(|x| t(x.at, x.m, x.big_m)).product();
    let tw: f64 = level.params.one_heavisides.iter().map(|x| t(x.at, x.m, x.big_m)).product();
    let lower = 2.0 / 3.0 * b * tz;
    let upper = (1.0 / 3.0 + 2.0 / 3.0 * b) * tw + 1.0 - tw;
    (lower, upper)
}

const SQUARE: &str = r#"{"f": "(2*p-1)^2", "lipschitz": 4.0,
  "zeros": [{"at": 0.5, "c": 4.0, "k": 1, "delta": 0.25}],
  "ones": [{"at": 0.0, "c": 2.0, "k": 1, "delta": 0.25}, {"at": 1.0, "c": 2.0, "k": 1, "delta": 0.25}]}"#;

const IDENTITY: &str = r#"{"f": "p", "lipschitz": 1.0,
  "zeros": [{"at": 0.0, "c": 1.0, "k": 1, "delta": 0.25}],
  "ones": [{"at": 1.0, "c": 1.0, "k": 1, "delta": 0.25}]}"#;

#[test]
fn known_bias_bits() {
    let cases: [(f64, u64, u64); 4] = [(0.1, 1, 10), (1.0 / 3.0, 1, 3), (0.5, 0, 0), (0.9, 0, 0)];
    for (i, (q, num, den)) in cases.into_iter().enumerate() {
        let stats = estimate_with(bias(0.5), TRIALS, 41, i as u64 * TRIALS, BUDGET, |src| {
            if den > 0 {
                bernoulli_known(&mut RationalExpansion::new(num, den)?, src.bits())
            } else {
                bernoulli_known(&mut DyadicExpansion::new(q)?, src.bits())
            }
        })
        .unwrap();
        assert_eq!(stats.completed, TRIALS);
        assert!(stats.contains(q), "q = {q}: {}", stats.estimate());
        // one fair bit decides with probability 1/2 at each digit
        assert!(stats.ledger.fair_bit as f64 / TRIALS as f64 <= 2.05);
    }
}

#[test]
fn dyadic_index_distribution() {
    let weights = [0.5, 0.25, 0.125, 0.125];
    let mut bits = BitSource::unlimited(RandomStream::new(42, 0));
    let mut counts = [0u64; 4];
    for _ in 0..TRIALS {
        counts[sample_index(cumulative(&weights), &mut bits).unwrap() - 1] += 1;
    }
    let report = chi_square_counts(counts, weights, 0.01);
    assert!(!report.reject, "{report:?}");
}

#[test]
fn bell_pairs_conditional_on_informative_outcome() {
    for (i, p) in [0.1, 0.3, 0.5].into_iter().enumerate() {
        let mut src = CoinSource::new(bias(p), RandomStream::new(43, i as u64), u64::MAX);
        let (mut informative, mut psi_plus) = (0u64, 0u64);
        for _ in 0..TRIALS {
            match src.bell_measure().unwrap() {
                BellOutcome::PhiPlus => {}
                BellOutcome::PsiPlus => {
                    informative += 1;
                    psi_plus += 1;
                }
                BellOutcome::PhiMinus => informative += 1,
                BellOutcome::PsiMinus => panic!("PsiMinus observed at p = {p}"),
            }
        }
        assert!(within(informative, TRIALS, 0.5), "p = {p}");
        assert!(within(psi_plus, informative, 4.0 * p * (1.0 - p)), "p = {p}");
    }
}

#[test]
fn rotated_quoin_at_one_half() {
    for (i, p) in [0.2, 0.6].into_iter().enumerate() {
        let stats = estimate_bias(&h_coin(0.5), bias(p), TRIALS, 44, i as u64 * TRIALS, BUDGET).unwrap();
        let want = 0.5 - (p * (1.0 - p)).sqrt();
        assert!(stats.contains(want), "p = {p}: {} vs {want}", stats.estimate());
        assert_eq!(stats.ledger.h_coin(0.5), TRIALS);
    }
}

#[test]
fn von_neumann_is_fair_with_geometric_cost() {
    for (i, p) in [0.1, 0.3, 0.7].into_iter().enumerate() {
        let stats = estimate_bias(&von_neumann(p_coin()), bias(p), TRIALS, 45, i as u64 * TRIALS, BUDGET).unwrap();
        assert!(stats.contains(0.5), "p = {p}: {}", stats.estimate());
        if p == 0.3 {
            // rounds are geometric with success 2p(1-p), two flips each
            let q = 2.0 * p * (1.0 - p);
            let mean = 2.0 / q;
            let sd = 2.0 * ((1.0 - q) / (q * q)).sqrt();
            let got = stats.ledger.p_coin as f64 / TRIALS as f64;
            assert!((got - mean).abs() <= SIGMA * sd / (TRIALS as f64).sqrt(), "{got} vs {mean}");
        }
    }
}

#[test]
fn g1_bias_and_rounds() {
    let p = 0.3;
    let stats = estimate_bias(&g1_coin(), bias(p), TRIALS, 46, 0, BUDGET).unwrap();
    assert!(stats.contains(4.0 * p * (1.0 - p)));
    // rounds are geometric with success 1/2; each Bell measurement takes two quoins
    let rounds = stats.ledger.quoin as f64 / 2.0 / TRIALS as f64;
    let sd = 2f64.sqrt();
    assert!((rounds - 2.0).abs() <= SIGMA * sd / (TRIALS as f64).sqrt(), "{rounds}");
}

#[test]
fn cubed_g1() {
    let p = 0.3;
    let stats = estimate_bias(&power_coin(g1_coin(), 3), bias(p), TRIALS, 47, 0, BUDGET).unwrap();
    let want = (4.0 * p * (1.0 - p)).powi(3);
    assert!((want - 0.592704).abs() < 1e-12);
    assert!(stats.contains(want), "{}", stats.estimate());
}

#[test]
fn coupled_draws_for_constant_half() {
    let cert = SpbCertificate::from_json(r#"{"f": "0.5", "lipschitz": 1.0, "zeros": [], "ones": []}"#).unwrap();
    let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
    let level = chain.level(1).unwrap();
    let mut src = CoinSource::new(bias(0.3), RandomStream::new(48, 0), u64::MAX);
    let mut counts = [0u64; 4];
    for _ in 0..TRIALS {
        let (l, u) = sample_coupled(&level.level, &mut src).unwrap();
        counts[match (l, u) {
            (true, true) => 0,
            (false, true) => 1,
            (false, false) => 2,
            (true, false) => 3,
        }] += 1;
    }
    let report = chi_square_counts(counts, [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0], 0.01);
    assert!(!report.reject && !report.impossible_outcome, "{report:?}");
}

#[test]
fn coupled_marginals_and_g_coin() {
    let cert = SpbCertificate::from_json(SQUARE).unwrap();
    let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
    let level = chain.level(1).unwrap();
    for (i, p) in [0.2, 0.45].into_iter().enumerate() {
        let (lower, upper) = bounds_oracle(&level.level, p);
        assert!((lower - level.level.lower(p)).abs() < 1e-12);
        assert!((upper - level.level.upper(p)).abs() < 1e-12);
        let mut src = CoinSource::new(bias(p), RandomStream::new(49, i as u64), u64::MAX);
        let (mut ls, mut us) = (0u64, 0u64);
        for _ in 0..TRIALS {
            let (l, u) = sample_coupled(&level.level, &mut src).unwrap();
            assert!(!l || u);
            ls += l as u64;
            us += u as u64;
        }
        assert!(within(ls, TRIALS, lower), "p = {p}: L = {lower}, {ls}");
        assert!(within(us, TRIALS, upper), "p = {p}: U = {upper}, {us}");

        let g = lower / (1.0 - upper + lower);
        let stats = estimate_with(bias(p), TRIALS, 50, i as u64 * TRIALS, BUDGET, |src| {
            g_coin(&level.level, src, None)
        })
        .unwrap();
        assert!(stats.contains(g), "p = {p}: g = {g}, {}", stats.estimate());
    }
}

#[test]
fn identity_chain_brackets_target() {
    let cert = SpbCertificate::from_json(IDENTITY).unwrap();
    let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
    for k in 1..=5 {
        let level = chain.level(k).unwrap();
        assert!(level.recursion_bounds_hold && level.inherited_bounds_hold);
        for i in 0..=10_000 {
            let p = i as f64 / 10_000.0;
            let (lower, upper) = bounds_oracle(&level.level, p);
            assert!(lower <= p + 1e-12 && p <= upper + 1e-12, "level {k} at {p}: {lower} {upper}");
            assert!(upper - lower < 0.5);
        }
    }
}

#[test]
fn square_chain_keeps_interior_zero() {
    let cert = SpbCertificate::from_json(SQUARE).unwrap();
    let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
    for k in 1..=10 {
        let level = chain.level(k).unwrap();
        let mid = level.fine[level.fine.len() / 2];
        assert!(mid <= 1e-12, "f_{k}(1/2) = {mid}");
        assert!(level.level.g(0.5) <= 1e-12);
    }
}
