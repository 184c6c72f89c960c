//! Acceptance run: one line per criterion, nonzero exit if any fails.
//!
//! Run with `cargo test -p bernoulli-factory --test acceptance`.

use std::time::Instant;

use bernoulli_factory::interval::{build_cover, pinpoint_interval, DomainSpec, DyadicPlan, PiecewiseTarget, PinpointPlan};
use bernoulli_factory::protocol::{
    bernstein_coin, bernstein_values, convex_mix, f_wedge_ladder, f_wedge_series, g1_coin, h_coin, p_coin, power_coin,
    primitive, t_coin, BernsteinMode,
};
use bernoulli_factory::spb::{spb_sample, CouplingTally, SearchConfig, SpbCertificate, SpbChain};
use bernoulli_factory::verify::{
    agreement_test, chi_square_bell, closed_form, estimate_bias, estimate_with, exact_prob_enum, ClosedForm,
    ReportRow, RunStats, SimulationReport, SIGMA,
};
use bernoulli_factory::{CoinSource, HiddenBias, Protocol, RandomStream, Source};
use statrs::distribution::{Binomial, DiscreteCDF};

const SEED: u64 = 0x5eed_2024;
const BUDGET: u64 = 10_000_000;
const ALPHA: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn bias(p: f64) -> HiddenBias {
    HiddenBias::new(p).unwrap()
}

fn tag(s: &RunStats) -> String {
    let mut t = format!("{:.5} [{:.5}, {:.5}]", s.estimate(), s.wilson_low, s.wilson_high);
    if s.exhausted + s.failed > 0 {
        t += &format!(" ({} exhausted, {} failed)", s.exhausted, s.failed);
    }
    t
}

fn clean(s: &RunStats) -> bool {
    s.completed == s.trials
}

fn f_wedge(p: f64) -> f64 {
    (2.0 * p).min(2.0 * (1.0 - p))
}

fn f_wedge_correctness() -> Outcome {
    let proto = f_wedge_series();
    let mut pass = true;
    let mut parts = vec![];
    for (i, p) in [0.1, 0.25, 0.4, 0.9].into_iter().enumerate() {
        let s = estimate_bias(&proto, bias(p), 100_000, SEED, i as u64 * 100_000, BUDGET).unwrap();
        let want = f_wedge(p);
        let ok = clean(&s) && s.contains(want);
        pass &= ok;
        parts.push(format!("p={p}: {} vs {want}", tag(&s)));
    }
    let s = estimate_bias(&proto, bias(0.5), 100_000, SEED, 1 << 40, BUDGET).unwrap();
    pass &= s.heads == s.trials;
    parts.push(format!(
        "p=0.5: {} heads of {} ({} tails, {} exhausted)",
        s.heads,
        s.trials,
        s.completed - s.heads,
        s.exhausted
    ));
    outcome(pass, parts.join("; "))
}

fn series_vs_ladder() -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for (i, p) in [0.1, 0.25, 0.4].into_iter().enumerate() {
        let seeds = (SEED + 10 + i as u64, SEED + 20 + i as u64);
        let (r, a, b) =
            agreement_test(&f_wedge_series(), &f_wedge_ladder(), bias(p), 100_000, seeds, BUDGET, ALPHA).unwrap();
        // the test runs on completed trials; exhaustions are reported alongside
        pass &= a.failed == 0 && b.failed == 0 && !r.reject;
        parts.push(format!(
            "p={p}: z={:.3} pval={:.3} (exhausted: series {}, ladder {})",
            r.statistic, r.p_value, a.exhausted, b.exhausted
        ));
    }
    outcome(pass, parts.join("; "))
}

fn bell_statistics() -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for (i, p) in [0.0, 0.3, 0.5, 1.0].into_iter().enumerate() {
        let r = chi_square_bell(bias(p), 100_000, SEED + 30 + i as u64, ALPHA).unwrap();
        let ok = !r.reject && !r.impossible_outcome && r.counts[3] == 0;
        pass &= ok;
        parts.push(format!("p={p}: chi2={:.3} pval={:.3} psi-={}", r.statistic, r.p_value, r.counts[3]));
    }
    outcome(pass, parts.join("; "))
}

fn oracle_equality() -> Outcome {
    let mut stream = RandomStream::new(SEED, 7);
    let ps: Vec<f64> = (0..20).map(|_| (stream.next_word() >> 11) as f64 / (1u64 << 53) as f64).collect();
    let mut cases: Vec<(String, Protocol, ClosedForm)> = vec![];
    for a in [0.0, 0.25, 0.5] {
        cases.push((format!("h_{a}"), h_coin(a), ClosedForm::HCoin { a }));
    }
    cases.push(("g1".into(), g1_coin(), ClosedForm::G1));
    for k in 1..=4 {
        let base = Box::new(ClosedForm::PCoin);
        cases.push((format!("p^{k}"), power_coin(p_coin(), k), ClosedForm::Power { k, base }));
        let base = Box::new(ClosedForm::G1);
        cases.push((format!("g1^{k}"), power_coin(g1_coin(), k), ClosedForm::Power { k, base }));
    }
    for m in 1..=4 {
        for big_m in 1..=3 {
            for z in [0.0, 0.5, 0.75] {
                cases.push((format!("T({m},{big_m},{z})"), t_coin(m, big_m, z), ClosedForm::THeaviside { m, big_m, z }));
            }
        }
    }
    for n in 1..=10 {
        for (name, f) in [("const", (|_| 0.3) as fn(f64) -> f64), ("identity", |x| x)] {
            for mode in [BernsteinMode::A, BernsteinMode::B] {
                let values = bernstein_values(f, n);
                cases.push((
                    format!("bernstein {mode:?} n={n} {name}"),
                    bernstein_coin(values.clone(), mode),
                    ClosedForm::Bernstein { mode, values },
                ));
            }
        }
    }
    let mut worst = (0.0f64, String::new());
    let mut errors = vec![];
    for (name, proto, form) in &cases {
        for &p in &ps {
            match (exact_prob_enum(proto, p), closed_form(form, p)) {
                (Ok(x), Ok(y)) => {
                    let d = (x - y).abs();
                    // NaN counts as worst
                    if d.is_nan() || d > worst.0 {
                        worst = (d, format!("{name} at p={p}"));
                    }
                }
                (x, y) => errors.push(format!("{name}: {:?} {:?}", x.err(), y.err())),
            }
        }
    }
    let pass = errors.is_empty() && worst.0 <= 1e-12;
    outcome(
        pass,
        format!("{} forms x {} points, max diff {:.2e} ({}), {} errors", cases.len(), ps.len(), worst.0, worst.1, errors.len()),
    )
}

const SQUARE: &str = r#"{"f": "(2*p-1)^2", "lipschitz": 4.0,
  "zeros": [{"at": 0.5, "c": 4.0, "k": 1, "delta": 0.25}],
  "ones": [{"at": 0.0, "c": 2.0, "k": 1, "delta": 0.25}, {"at": 1.0, "c": 2.0, "k": 1, "delta": 0.25}]}"#;

const COUPLED_DRAWS: u64 = 1_000_000;

/// Criteria 5 and 6 share the compiled chain and the coupling tally.
fn spb_end_to_end() -> (Outcome, Outcome) {
    let start = Instant::now();
    let cert = SpbCertificate::from_json(SQUARE).unwrap();
    let chain = match SpbChain::compile(&cert, &SearchConfig::default()) {
        Ok(c) => c,
        Err(e) => {
            let fail = outcome(false, format!("compile failed: {e}"));
            return (fail, outcome(false, "no chain".into()));
        }
    };
    let compiled = start.elapsed().as_secs_f64();
    let level = chain.level(1).unwrap();
    let mut audit_ok = true;
    let mut max_gap = 0.0f64;
    for i in 0..10_000 {
        let p = i as f64 / 9_999.0;
        let f = (2.0 * p - 1.0) * (2.0 * p - 1.0);
        let (lower, upper) = (level.level.lower(p), level.level.upper(p));
        audit_ok &= lower <= f && f <= upper;
        max_gap = max_gap.max(upper - lower);
    }
    audit_ok &= max_gap < 0.5;

    let tally = CouplingTally::default();
    let mut pass = audit_ok;
    let mut parts = vec![format!("compiled in {compiled:.1}s, n={}, grid audit ok={audit_ok}, max gap {max_gap:.4}", level.level.params.n)];
    for (i, p) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let s = estimate_with(bias(p), 100_000, SEED, (40 + i as u64) << 32, BUDGET, |src| {
            spb_sample(&chain, src, Some(&tally))
        })
        .unwrap();
        let want = (2.0 * p - 1.0) * (2.0 * p - 1.0);
        let ok = clean(&s) && if p == 0.5 { s.heads == 0 } else { s.contains(want) };
        pass &= ok;
        parts.push(format!("p={p}: {} vs {want:.4}", tag(&s)));
    }
    let from_five = tally.snapshot()[0];
    // more criterion-5 sampling if the three runs drew fewer coupled pairs than required
    let mut round = 0u64;
    while tally.snapshot()[0] < COUPLED_DRAWS {
        for (i, p) in [0.2, 0.5, 0.8].into_iter().enumerate() {
            estimate_with(bias(p), 50_000, SEED, ((50 + round) << 40) + ((i as u64) << 32), BUDGET, |src| {
                spb_sample(&chain, src, Some(&tally))
            })
            .unwrap();
        }
        round += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed <= 600.0;
    parts.push(format!("chain depth {}, {elapsed:.0}s", chain.depth()));
    let [draws, both, only_upper, neither, violations] = tally.snapshot();
    let nesting = outcome(
        draws >= COUPLED_DRAWS && violations == 0,
        format!(
            "{draws} coupled draws ({from_five} from the estimates, {round} extra rounds): both {both}, upper only {only_upper}, neither {neither}, lower only {violations}"
        ),
    );
    (outcome(pass, parts.join("; ")), nesting)
}

fn decomposition_convergence() -> Outcome {
    let cert = SpbCertificate::from_json(
        r#"{"f": "p", "lipschitz": 1.0,
            "zeros": [{"at": 0.0, "c": 1.0, "k": 1, "delta": 0.25}],
            "ones": [{"at": 1.0, "c": 1.0, "k": 1, "delta": 0.25}]}"#,
    )
    .unwrap();
    let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
    let sum = chain.partial_sum(20, 0.37).unwrap();
    let err = (sum - 0.37).abs();
    let bound = 0.75f64.powi(19);
    outcome(err <= bound, format!("partial sum {sum:.15}, error {err:.3e}, bound {bound:.3e}"))
}

fn step_target() -> Outcome {
    let start = Instant::now();
    let spec = DomainSpec::new(vec![0.5], vec![0.5], 1).unwrap();
    let target = PiecewiseTarget::step(&spec, &[0.2, 0.8]).unwrap();
    let plan = match DyadicPlan::certify(&target, &spec, 32) {
        Ok(p) => p,
        Err(e) => return outcome(false, format!("certification failed: {e}")),
    };
    let mut pass = true;
    let mut parts = vec![format!("accuracy {}", plan.accuracy())];
    for (i, (p, want)) in [(0.3, 0.2), (0.7, 0.8)].into_iter().enumerate() {
        let s = estimate_with(bias(p), 10_000, SEED, (60 + i as u64) << 32, u64::MAX, |src| {
            bernoulli_factory::interval::dyadic_sample(&plan, src)
        })
        .unwrap();
        let ok = clean(&s) && s.contains(want);
        pass &= ok;
        parts.push(format!("p={p}: {} vs {want}", tag(&s)));
    }

    let cover = build_cover(&target, &spec, 1, 100).unwrap();
    let pin = PinpointPlan::new(&spec, &cover, 1).unwrap();
    for (i, p) in [0.3, 0.7].into_iter().enumerate() {
        let trials = 10_000u64;
        let (mut wrong, mut errors) = (0u64, 0u64);
        for t in 0..trials {
            let mut coins = CoinSource::new(bias(p), RandomStream::new(SEED, ((70 + i as u64) << 32) + t), BUDGET);
            match pinpoint_interval(&pin, &mut coins) {
                Ok(out) => wrong += !pin.cover.intervals[out.index].contains(p) as u64,
                Err(_) => errors += 1,
            }
        }
        pass &= errors == 0;
        let bound = spec.a_poly(p);
        // H0: wrong-interval rate <= a(p); reject when the count is improbably high
        let tail = if wrong == 0 { 1.0 } else { Binomial::new(bound, trials).unwrap().sf(wrong - 1) };
        let ok = tail >= ALPHA;
        pass &= ok;
        parts.push(format!("pinpoint p={p}: {wrong}/{trials} wrong, {errors} errors, a(p)={bound:.5}, tail {tail:.3}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed <= 600.0;
    parts.push(format!("{elapsed:.0}s"));
    outcome(pass, parts.join("; "))
}

fn resource_advantage() -> Outcome {
    let (alpha, a, p) = (0.99, 0.25, 0.75);
    let proto = convex_mix(vec![alpha, 1.0 - alpha], vec![h_coin(a), primitive(Source::Tails)]);
    let trials = 100_000;
    let s = estimate_bias(&proto, bias(p), trials, SEED + 80, 0, BUDGET).unwrap();
    let direct = {
        let d = (p * (1.0 - a)).sqrt() - (a * (1.0 - p)).sqrt();
        alpha * d * d
    };
    let form = closed_form(&ClosedForm::FAlpha { alpha, a }, p).unwrap();
    let quoins = s.ledger.quoins_consumed() as f64 / trials as f64;
    let fair = s.ledger.fair_bit as f64 / trials as f64;
    let classical = s.ledger.p_coin;
    let pass = clean(&s)
        && (direct - 0.2475).abs() < 1e-12
        && (form - direct).abs() < 1e-12
        && s.contains(direct)
        && quoins <= 1.0
        && fair <= 4.0
        && classical == 0;
    outcome(
        pass,
        format!("{} vs {direct}; per trial {quoins:.4} quoins, {fair:.3} fair bits, {classical} p-coins", tag(&s)),
    )
}

fn report_bytes(threads: usize) -> String {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let mut out = String::new();
        for proto in [f_wedge_series(), f_wedge_ladder(), g1_coin(), t_coin(3, 2, 0.25)] {
            let rows = [0.1, 0.35, 0.6]
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let s = estimate_bias(&proto, bias(p), 2_000, SEED, (i as u64) << 32, BUDGET).unwrap();
                    ReportRow::new(p, None, &s)
                })
                .collect();
            let report = SimulationReport {
                source: "protocol".into(),
                subject: proto.to_json(),
                master_seed: SEED,
                budget: BUDGET,
                sigma: SIGMA,
                rows,
            };
            out += &report.to_json();
            out.push('\n');
        }
        out
    })
}

fn determinism() -> Outcome {
    let a = report_bytes(1);
    let b = report_bytes(1);
    let c = report_bytes(4);
    outcome(a == b && a == c, format!("{} report bytes, replay identical {}, across thread counts {}", a.len(), a == b, a == c))
}

fn report(n: u32, name: &str, o: &Outcome) {
    println!("[{}] {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn main() {
    let mut failed = vec![];
    let mut record = |n: u32, name: &str, o: Outcome| {
        report(n, name, &o);
        if !o.pass {
            failed.push(n.to_string());
        }
    };
    record(1, "f-wedge series", f_wedge_correctness());
    record(2, "series vs ladder", series_vs_ladder());
    record(3, "Bell statistics", bell_statistics());
    record(4, "oracle equality", oracle_equality());
    let (spb, nesting) = spb_end_to_end();
    record(5, "SPB end to end", spb);
    record(6, "coupling nesting", nesting);
    record(7, "decomposition convergence", decomposition_convergence());
    record(8, "step target", step_target());
    record(9, "resource advantage", resource_advantage());
    record(10, "determinism", determinism());

    if failed.is_empty() {
        println!("acceptance: all 10 criteria pass");
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
