//! Numeric search for bounding parameters.
//!
//! For each Bernstein degree `n = 1, 2, 4, ...` the search picks at most one
//! Heaviside factor per zero (for `L`) and per one (for `U`) by coordinate
//! descent, one critical point at a time. Node values are solved from the
//! chosen factors so that `g` meets its aim at the nodes. Feasible pairs
//! satisfy `L <= f <= U` and `max(U - L) + slack < 1/2` on the grid, where
//! the slack is the largest change of `U - L` between neighbouring grid
//! points. Among feasible pairs the search prefers those whose next chain
//! level stays closest to the first, then the cheapest.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::numeric::{binomial_row, unit_grid};
use crate::quoin::h_value;
use crate::spb::bounds::{t_value, BoundingLevel, BoundingParams, Heaviside};
use crate::spb::certificate::{CriticalPoint, SpbCertificate};
use crate::spb::FINE_POINTS;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Largest Bernstein degree tried; a power of two dividing `FINE_POINTS - 1`.
    pub n_max: u32,
    /// Block sizes tried run from 1 to `2^m_exponent_max`.
    pub m_exponent_max: u32,
    /// Block sizes tried per doubling.
    pub m_steps_per_octave: u32,
    /// Block counts tried are `1 ..= big_m_max`.
    pub big_m_max: u32,
    /// Accept the first degree whose best pair keeps the drift within this factor.
    pub drift_target: f64,
    /// Coordinate descent sweeps over the critical points.
    pub sweeps: u32,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_max: 2048,
            m_exponent_max: 16,
            m_steps_per_octave: 2,
            big_m_max: 3,
            drift_target: 1.02,
            sweeps: 2,
        }
    }
}

/// What the accepted pair looks like on the verification grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub n: u32,
    /// Largest ratio between the next chain level and the first, see [`search_level`].
    pub drift: f64,
    pub max_gap: f64,
    pub gap_slack: f64,
    /// `min (f - L)` over the grid.
    pub lower_margin: f64,
    /// `min (U - f)` over the grid.
    pub upper_margin: f64,
    /// `n` plus the h-coin block budget of all factors.
    pub cost: u64,
    /// Where each active factor is small: `{p : h(p) <= 1/m}`.
    pub intervals: Vec<(f64, f64)>,
    pub degrees_tried: Vec<u32>,
}

struct FactorOption {
    factor: Heaviside,
    interval: (f64, f64),
    /// Factor values on the coarse grid.
    values: Vec<f64>,
}

/// The options for one critical point; index 0 means no factor.
struct PointOptions {
    at: f64,
    is_zero: bool,
    options: Vec<FactorOption>,
}

impl PointOptions {
    fn factor(&self, choice: usize) -> Option<&FactorOption> {
        choice.checked_sub(1).map(|i| &self.options[i])
    }
}

/// Binomial weights of one grid point, with negligible tails cut.
struct WeightRow {
    first: usize,
    weights: Vec<f64>,
}

impl WeightRow {
    fn apply(&self, values: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&values[self.first..])
            .map(|(w, v)| w * v)
            .sum()
    }
}

/// Weight rows on the search grid and at the nodes `j / n`.
struct Rows {
    grid: Vec<WeightRow>,
    nodes: Vec<WeightRow>,
}

impl Rows {
    fn new(n: u32, pc: &[f64]) -> Self {
        let nodes: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        Rows {
            grid: weight_rows(n, pc),
            nodes: weight_rows(n, &nodes),
        }
    }
}

fn weight_rows(n: u32, pc: &[f64]) -> Vec<WeightRow> {
    pc.iter()
        .map(|&p| {
            let row = binomial_row(n as u64, p);
            let keep = |w: &f64| *w > 1e-18;
            let first = row.iter().position(keep).unwrap_or(0);
            let last = row.iter().rposition(keep).unwrap_or(0);
            WeightRow {
                first,
                weights: row[first..=last.max(first)].to_vec(),
            }
        })
        .collect()
}

struct Evaluation {
    violation: f64,
    drift: f64,
    cost: u64,
    nodes: Vec<f64>,
    lower_excess: (f64, f64),
    upper_excess: (f64, f64),
    gap: f64,
}

impl Evaluation {
    fn better_than(&self, other: &Evaluation, target: f64) -> bool {
        if self.violation > 0.0 || other.violation > 0.0 {
            return self.violation < other.violation;
        }
        let (a, b) = (self.drift <= target, other.drift <= target);
        match (a, b) {
            (true, false) => true,
            (false, true) => false,
            (true, true) => (self.cost, self.drift) < (other.cost, other.drift),
            (false, false) => (self.drift, self.cost) < (other.drift, other.cost),
        }
    }
}

struct Problem<'a> {
    pc: &'a [f64],
    fc: &'a [f64],
    rc: &'a [f64],
    aim: &'a [f64],
    points: Vec<PointOptions>,
}

impl Problem<'_> {
    fn evaluate(&self, n: u32, rows: &Rows, choice: &[usize]) -> Evaluation {
        let (rows, node_rows) = (&rows.grid, &rows.nodes);
        let stride = (FINE_POINTS - 1) / n as usize;
        let mut tz = vec![1.0; self.pc.len()];
        let mut tw = vec![1.0; self.pc.len()];
        let mut cost = n as u64;
        let mut nodes_tz = vec![1.0; n as usize + 1];
        let mut nodes_tw = vec![1.0; n as usize + 1];
        for (pt, &c) in self.points.iter().zip(choice) {
            let Some(opt) = pt.factor(c) else { continue };
            let (t, nt) = if pt.is_zero { (&mut tz, &mut nodes_tz) } else { (&mut tw, &mut nodes_tw) };
            for (v, f) in t.iter_mut().zip(&opt.values) {
                *v *= f;
            }
            for (j, v) in nt.iter_mut().enumerate() {
                *v *= opt.factor.value(j as f64 / n as f64);
            }
            cost += opt.factor.m as u64 * opt.factor.big_m as u64;
        }
        let solved = solve_nodes(
            (0..=n as usize).map(|j| self.aim[j * stride]),
            &nodes_tz,
            &nodes_tw,
        );
        // subtract the Bernstein bias once
        let nodes: Vec<f64> = node_rows
            .iter()
            .zip(&solved)
            .map(|(row, v)| (2.0 * v - row.apply(&solved)).clamp(0.0, 1.0))
            .collect();
        let mut l = Vec::with_capacity(self.pc.len());
        let mut u = Vec::with_capacity(self.pc.len());
        for (i, row) in rows.iter().enumerate() {
            let b = row.apply(&nodes);
            l.push((2.0 / 3.0) * b * tz[i]);
            u.push((1.0 / 3.0 + (2.0 / 3.0) * b) * tw[i] + 1.0 - tw[i]);
        }
        let lower_excess = worst(&l, self.fc, self.pc, |l, f| l - f);
        let upper_excess = worst(&u, self.fc, self.pc, |u, f| f - u);
        let (gap, slack) = gap_and_slack(&l, &u);
        let violation = lower_excess.0.max(0.0) + upper_excess.0.max(0.0) + (gap + slack - 0.5 + 1e-12).max(0.0);
        Evaluation {
            violation,
            drift: drift_of(self.rc, self.fc, &l, &u),
            cost,
            nodes,
            lower_excess,
            upper_excess,
            gap: gap + slack,
        }
    }
}

/// Node values `v` with `v Tz / ((1 - v) Tw + v Tz) = aim`, the g-coin of a
/// pair whose Bernstein part equals `v` exactly. Where both sides vanish the
/// neighbours' mean is used.
fn solve_nodes(aim: impl Iterator<Item = f64>, tz: &[f64], tw: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = aim
        .zip(tz.iter().zip(tw))
        .map(|(a, (&z, &w))| {
            let den = z * (1.0 - a) + a * w;
            if den > 0.0 {
                (a * w / den).clamp(0.0, 1.0)
            } else {
                f64::NAN
            }
        })
        .collect();
    for j in 0..v.len() {
        if v[j].is_nan() {
            let near: Vec<f64> = [j.checked_sub(1), Some(j + 1)]
                .into_iter()
                .flatten()
                .filter_map(|i| v.get(i).copied())
                .filter(|x| !x.is_nan())
                .collect();
            v[j] = if near.is_empty() { 0.5 } else { near.iter().sum::<f64>() / near.len() as f64 };
        }
    }
    v
}

/// Level-one search straight from a certificate.
pub fn search_bounding_params(
    cert: &SpbCertificate,
    cfg: &SearchConfig,
) -> Result<(BoundingLevel, SearchReport)> {
    let target = cert.target()?;
    let fine: Vec<f64> = target
        .eval_grid(&unit_grid(FINE_POINTS))?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    search_level(&fine, &fine, &cert.zeros, &cert.ones, cfg)
}

/// Searches bounding parameters for a chain level `fine`, both it and the
/// first level `reference` tabulated on the fine grid.
///
/// The aim for `g_k` is `4 f_k - 3 f_1`, the value that would return the
/// next level to `f_1`. Errors then do not compound down the chain: the
/// next level differs from `f_1` by a third of this level's approximation
/// error.
pub fn search_level(
    fine: &[f64],
    reference: &[f64],
    zeros: &[CriticalPoint],
    ones: &[CriticalPoint],
    cfg: &SearchConfig,
) -> Result<(BoundingLevel, SearchReport)> {
    if fine.len() != FINE_POINTS || reference.len() != FINE_POINTS {
        return Err(FactoryError::Config(format!(
            "target must be tabulated on {FINE_POINTS} points"
        )));
    }
    let span = FINE_POINTS - 1;
    if !cfg.n_max.is_power_of_two() || !span.is_multiple_of(cfg.n_max as usize) {
        return Err(FactoryError::Config(format!(
            "n_max must be a power of two dividing {span}"
        )));
    }
    let fine_grid = unit_grid(FINE_POINTS);
    // every other fine point, plus every point close to a critical point
    let span_f = span as f64;
    let near: Vec<usize> = zeros
        .iter()
        .chain(ones)
        .map(|pt| (pt.at * span_f).round() as usize)
        .chain([0, span])
        .collect();
    let coarse: Vec<usize> = (0..FINE_POINTS)
        .filter(|&i| i % 2 == 0 || near.iter().any(|&c| c.abs_diff(i) <= 16))
        .collect();
    let pc: Vec<f64> = coarse.iter().map(|&i| fine_grid[i]).collect();
    let fc: Vec<f64> = coarse.iter().map(|&i| fine[i]).collect();
    let rc: Vec<f64> = coarse.iter().map(|&i| reference[i]).collect();
    let aim: Vec<f64> = fine
        .iter()
        .zip(reference)
        .map(|(f, r)| (4.0 * f - 3.0 * r).clamp(0.0, 1.0))
        .collect();
    let points = zeros
        .iter()
        .map(|z| (z, true))
        .chain(ones.iter().map(|w| (w, false)))
        .map(|(pt, is_zero)| PointOptions {
            at: pt.at,
            is_zero,
            options: factor_options(pt, &pc, cfg),
        })
        .collect();
    let problem = Problem {
        pc: &pc,
        fc: &fc,
        rc: &rc,
        aim: &aim,
        points,
    };

    let mut best: Option<(Evaluation, BoundingLevel, SearchReport)> = None;
    let mut closest: Option<Evaluation> = None;
    let mut tried = Vec::new();
    let mut n = 1u32;
    while n <= cfg.n_max {
        tried.push(n);
        let rows = Rows::new(n, &pc);
        let mut choice = vec![0usize; problem.points.len()];
        let mut current = problem.evaluate(n, &rows, &choice);
        for _ in 0..cfg.sweeps {
            let mut moved = false;
            for i in 0..choice.len() {
                let mut pick = choice[i];
                for c in 0..=problem.points[i].options.len() {
                    if c == pick {
                        continue;
                    }
                    choice[i] = c;
                    let e = problem.evaluate(n, &rows, &choice);
                    if e.better_than(&current, cfg.drift_target) {
                        current = e;
                        pick = c;
                        moved = true;
                    }
                    choice[i] = pick;
                }
            }
            if !moved {
                break;
            }
        }
        if current.violation > 0.0 {
            if closest.as_ref().is_none_or(|c| current.violation < c.violation) {
                closest = Some(current);
            }
        } else {
            let (zero_factors, one_factors, intervals) = problem.factors(&choice);
            let params = BoundingParams {
                n,
                zero_heavisides: zero_factors,
                one_heavisides: one_factors,
                grid: FINE_POINTS,
            };
            let level = BoundingLevel::new(params, current.nodes.clone())?;
            if let Some(mut report) = fine_check(&level, fine, &fine_grid) {
                report.drift = current.drift;
                report.cost = current.cost;
                report.intervals = intervals;
                if best.as_ref().is_none_or(|b| current.better_than(&b.0, cfg.drift_target)) {
                    best = Some((current, level, report));
                }
            }
        }
        if best.as_ref().is_some_and(|b| b.0.drift <= cfg.drift_target) {
            break;
        }
        n *= 2;
    }
    match (best, closest) {
        (Some((_, level, mut report)), _) => {
            report.degrees_tried = tried;
            Ok((level, report))
        }
        (None, Some(c)) => Err(FactoryError::Certification(format!(
            "no bounding pair up to n = {}: closest candidate has L above f by {:.3e} at p = {:.4}, \
             U below f by {:.3e} at p = {:.4}, gap plus slack {:.4}",
            cfg.n_max, c.lower_excess.0, c.lower_excess.1, c.upper_excess.0, c.upper_excess.1, c.gap
        ))),
        (None, None) => Err(FactoryError::Certification(format!(
            "no bounding pair up to n = {} passes the fine grid check",
            cfg.n_max
        ))),
    }
}

impl Problem<'_> {
    fn factors(&self, choice: &[usize]) -> (Vec<Heaviside>, Vec<Heaviside>, Vec<(f64, f64)>) {
        let mut zeros = Vec::new();
        let mut ones = Vec::new();
        let mut intervals = Vec::new();
        for (pt, &c) in self.points.iter().zip(choice) {
            if let Some(opt) = pt.factor(c) {
                debug_assert_eq!(opt.factor.at, pt.at);
                if pt.is_zero { &mut zeros } else { &mut ones }.push(opt.factor.clone());
                intervals.push(opt.interval);
            }
        }
        (zeros, ones, intervals)
    }
}

/// Block sizes `round(2^(i / steps))`, without repeats.
fn block_sizes(m_exponent_max: u32, steps: u32) -> Vec<u32> {
    let mut sizes: Vec<u32> = (0..=m_exponent_max * steps)
        .map(|i| (i as f64 / steps as f64).exp2().round() as u32)
        .collect();
    sizes.dedup();
    sizes
}

fn factor_options(pt: &CriticalPoint, pc: &[f64], cfg: &SearchConfig) -> Vec<FactorOption> {
    let (lo, hi) = pt.window();
    let h: Vec<f64> = pc.iter().map(|&p| h_value(pt.at, p)).collect();
    let mut out = Vec::new();
    for m in block_sizes(cfg.m_exponent_max, cfg.m_steps_per_octave.max(1)) {
        for big_m in 1..=cfg.big_m_max {
            let factor = Heaviside { at: pt.at, m, big_m };
            let interval = factor.interval();
            // the factor's small region must sit inside the certified window
            if interval.0 >= lo && interval.1 <= hi {
                let values = h.iter().map(|&x| t_value(m, big_m, x)).collect();
                out.push(FactorOption { factor, interval, values });
            }
        }
    }
    out
}

/// Largest `excess(bound, f)` and where it occurs.
fn worst(bound: &[f64], f: &[f64], p: &[f64], excess: impl Fn(f64, f64) -> f64) -> (f64, f64) {
    let mut w = (f64::NEG_INFINITY, 0.0);
    for i in 0..bound.len() {
        let e = excess(bound[i], f[i]);
        if e > w.0 {
            w = (e, p[i]);
        }
    }
    w
}

fn gap_and_slack(l: &[f64], u: &[f64]) -> (f64, f64) {
    let mut gap = f64::NEG_INFINITY;
    let mut slack: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for (a, b) in l.iter().zip(u) {
        let d = b - a;
        gap = gap.max(d);
        if let Some(q) = prev {
            slack = slack.max((d - q).abs());
        }
        prev = Some(d);
    }
    (gap, slack)
}

/// Largest ratio, either way round, between the next level
/// `f_next = (4/3)(f - g/4)` and the first level, and between their
/// complements, over the grid.
pub(crate) fn drift_of(reference: &[f64], f: &[f64], l: &[f64], u: &[f64]) -> f64 {
    let mut r: f64 = 1.0;
    for i in 0..f.len() {
        let g = l[i] / (1.0 - u[i] + l[i]);
        let next = ((4.0 / 3.0) * (f[i] - g / 4.0)).clamp(0.0, 1.0);
        let base = reference[i];
        if base > 0.0 {
            r = r.max(next / base).max(base / next);
        }
        if base < 1.0 {
            r = r.max((1.0 - next) / (1.0 - base)).max((1.0 - base) / (1.0 - next));
        }
    }
    r
}

/// Re-checks a pair on every fine grid point.
fn fine_check(level: &BoundingLevel, fine: &[f64], grid: &[f64]) -> Option<SearchReport> {
    let l: Vec<f64> = grid.iter().map(|&p| level.lower(p)).collect();
    let u: Vec<f64> = grid.iter().map(|&p| level.upper(p)).collect();
    let mut lower_margin = f64::INFINITY;
    let mut upper_margin = f64::INFINITY;
    for i in 0..grid.len() {
        lower_margin = lower_margin.min(fine[i] - l[i]);
        upper_margin = upper_margin.min(u[i] - fine[i]);
    }
    let (max_gap, gap_slack) = gap_and_slack(&l, &u);
    if lower_margin < 0.0 || upper_margin < 0.0 || max_gap + gap_slack >= 0.5 {
        return None;
    }
    Some(SearchReport {
        n: level.params.n,
        drift: 0.0,
        max_gap,
        gap_slack,
        lower_margin,
        upper_margin,
        cost: 0,
        intervals: vec![],
        degrees_tried: vec![],
    })
}
