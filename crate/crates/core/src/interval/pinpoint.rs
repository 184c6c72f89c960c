//! Guessing which cover interval holds the unknown bias, wrong with
//! probability below `a^k(p)`.
//!
//! Three stages: stopping-time tests that rule out small windows around the
//! extended points and the ends of [0, 1], a choice of closed cells inside the
//! surviving region, and a frequency estimate with enough flips that landing
//! in a cell whose interval misses p is rarer than the smallest `a^k` left.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::interval::cover::CoverSpec;
use crate::interval::domain::DomainSpec;
use crate::numeric::{ln_choose, unit_grid};
use crate::quoin::{h_value, CoinSource};
use crate::rng::Resource;

/// Finest window radius is `2^-MAX_SCALE`.
const MAX_SCALE: u32 = 60;
/// Share of the error budget spent on the windows; the rest goes to the estimate.
const WINDOW_SHARE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
enum Window {
    /// Around an extended point, driven by the `h_a` test.
    Point { at: f64 },
    /// Near 0, driven by the heads count of the p-coin test.
    Low,
    /// Near 1, driven by the tails count of the p-coin test.
    High,
}

impl Window {
    fn center(self) -> f64 {
        match self {
            Window::Point { at } => at,
            Window::Low => 0.0,
            Window::High => 1.0,
        }
    }

    /// Probability of the outcome the test counts.
    fn rate(self, p: f64) -> f64 {
        match self {
            Window::Point { at } => h_value(at, p),
            Window::Low => p,
            Window::High => 1.0 - p,
        }
    }

    fn bounds(self, radius: f64) -> (f64, f64) {
        let c = self.center();
        ((c - radius).max(0.0), (c + radius).min(1.0))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct WindowTable {
    window: Window,
    /// First usable scale; wider windows would reach another extended point.
    first_scale: u32,
    /// `max_flips[j]` is the largest stopping time that still rules out the
    /// window of radius `2^-(first_scale + j)`, or 0 when none does.
    max_flips: Vec<u64>,
}

impl WindowTable {
    fn scale_for(&self, m: u64) -> Option<u32> {
        self.max_flips
            .iter()
            .position(|&top| m <= top)
            .map(|j| self.first_scale + j as u32)
    }
}

/// Everything about pinpointing that does not depend on the flips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinpointPlan {
    pub spec: DomainSpec,
    pub cover: CoverSpec,
    /// Exponent of the guarantee `P(wrong) < a^accuracy(p)`.
    pub accuracy: u32,
    /// Events each stopping-time test waits for.
    pub required: u64,
    tables: Vec<WindowTable>,
}

/// One run of the pinpointing procedure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinpointOutcome {
    /// 0-based index into the cover's intervals.
    pub index: usize,
    pub m_max: u64,
    /// Radius of each ruled-out window, in the order extended points, 0, 1.
    pub radii: Vec<f64>,
    /// `ln` of the confidence floor over the surviving region.
    pub ln_delta: f64,
    pub gamma: f64,
    pub estimate_flips: u64,
    pub estimate: f64,
}

/// Upper bound on `ln(rate^r / a^k)` over the window `0 < |p - c| <= radius`.
fn window_sup(spec: &DomainSpec, w: Window, radius: f64, r: u64, k: u32) -> f64 {
    let c = w.center();
    let mut sup = f64::NEG_INFINITY;
    for j in 0..=200 {
        let d = radius * (-(j as f64) / 5.0).exp2();
        for p in [c - d, c + d] {
            if p <= 0.0 || p >= 1.0 {
                continue;
            }
            let v = r as f64 * w.rate(p).ln() - k as f64 * spec.ln_a_poly(p);
            if v.is_nan() {
                continue;
            }
            sup = sup.max(v);
        }
    }
    sup
}

impl PinpointPlan {
    pub fn new(spec: &DomainSpec, cover: &CoverSpec, accuracy: u32) -> Result<Self> {
        spec.validate()?;
        if accuracy == 0 {
            return Err(FactoryError::Config(
                "pinpoint accuracy must be at least 1".into(),
            ));
        }
        if cover.intervals.is_empty() {
            return Err(FactoryError::Cover("cover has no intervals".into()));
        }
        let k = accuracy as u64;
        let required = spec.extended.len() as u64 * k + 2 * k + 1;
        let mut centers = vec![0.0];
        centers.extend(&spec.extended);
        centers.push(1.0);
        let mut windows: Vec<Window> = spec
            .extended
            .iter()
            .map(|&at| Window::Point { at })
            .collect();
        windows.push(Window::Low);
        windows.push(Window::High);
        let ln_eta = WINDOW_SHARE.ln();
        let tables = windows
            .into_iter()
            .map(|w| {
                let c = w.center();
                let gap = centers
                    .iter()
                    .filter(|&&x| x != c)
                    .map(|&x| (x - c).abs())
                    .fold(f64::INFINITY, f64::min);
                let first_scale = (-(gap / 2.0).log2()).ceil().max(1.0) as u32;
                let max_flips = (first_scale..=MAX_SCALE)
                    .map(|s| {
                        let sup = window_sup(spec, w, (-(s as f64)).exp2(), required, accuracy);
                        // Radii at successive scales share the budget as 1/2, 1/4, ...
                        let allowed =
                            ln_eta - (s - first_scale + 1) as f64 * std::f64::consts::LN_2 - sup;
                        max_flips_within(required, allowed)
                    })
                    .collect();
                WindowTable {
                    window: w,
                    first_scale,
                    max_flips,
                }
            })
            .collect();
        Ok(PinpointPlan {
            spec: spec.clone(),
            cover: cover.clone(),
            accuracy,
            required,
            tables,
        })
    }

    /// Runs the stopping-time tests and returns `m_max`.
    fn stopping_times(&self, coins: &mut CoinSource) -> Result<u64> {
        let r = self.required;
        let mut m_max = 0;
        for &a in &self.spec.extended {
            let (mut m, mut hits) = (0u64, 0u64);
            while hits < r {
                m += 1;
                hits += coins.h_coin(a)? as u64;
            }
            m_max = m_max.max(m);
        }
        let (mut m, mut heads, mut tails) = (0u64, 0u64, 0u64);
        while heads < r || tails < r {
            m += 1;
            if coins.p_coin()? {
                heads += 1;
            } else {
                tails += 1;
            }
        }
        Ok(m_max.max(m))
    }
}

/// Largest `m >= r` with `ln C(m, r) <= allowed`, or 0 if even `m = r` fails.
fn max_flips_within(r: u64, allowed: f64) -> u64 {
    if allowed < 0.0 {
        return 0;
    }
    let (mut lo, mut hi) = (r, r);
    while ln_choose(hi, r) <= allowed {
        lo = hi;
        if hi > u64::MAX / 4 {
            return hi;
        }
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ln_choose(mid, r) <= allowed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Closed intervals left after removing the open windows from [0, 1].
fn surviving(windows: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut cut: Vec<(f64, f64)> = windows.to_vec();
    cut.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut from = 0.0;
    for (lo, hi) in cut {
        if lo > from {
            out.push((from, lo));
        }
        from = from.max(hi);
    }
    if from < 1.0 {
        out.push((from, 1.0));
    }
    out
}

fn intersect(a: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    a.iter()
        .filter_map(|&(x, y)| {
            let (l, h) = (x.max(lo), y.min(hi));
            (l <= h).then_some((l, h))
        })
        .collect()
}

fn distance(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let mut d = f64::INFINITY;
    for &(x0, x1) in a {
        for &(y0, y1) in b {
            d = d.min((y0 - x1).max(x0 - y1).max(0.0));
        }
    }
    d
}

fn point_distance(a: &[(f64, f64)], p: f64) -> f64 {
    a.iter()
        .map(|&(x, y)| (x - p).max(p - y).max(0.0))
        .fold(f64::INFINITY, f64::min)
}

/// Parts of `r` outside the open interval `(lo, hi)`.
fn outside(r: &[(f64, f64)], lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for &(x, y) in r {
        if x <= lo {
            out.push((x, y.min(lo)));
        }
        if y >= hi {
            out.push((x.max(hi), y));
        }
    }
    out
}

/// Pinpoints the bias to a cover interval.
pub fn pinpoint_interval(plan: &PinpointPlan, coins: &mut CoinSource) -> Result<PinpointOutcome> {
    let m_max = plan.stopping_times(coins)?;
    let mut radii = Vec::with_capacity(plan.tables.len());
    let mut windows = Vec::with_capacity(plan.tables.len());
    for t in &plan.tables {
        let s = t.scale_for(m_max).ok_or_else(|| {
            FactoryError::Cover(format!(
                "stopping time {m_max} too large to rule out any window around {}",
                t.window.center()
            ))
        })?;
        let radius = (-(s as f64)).exp2();
        radii.push(radius);
        windows.push(t.window.bounds(radius));
    }
    let region = surviving(&windows);
    let k = plan.accuracy as f64;

    let mut ln_min_a = f64::INFINITY;
    for &(lo, hi) in &region {
        let mut probe: Vec<f64> = unit_grid(1025)
            .into_iter()
            .map(|u| lo + (hi - lo) * u)
            .collect();
        probe.extend(crate::interval::cover::probe_points(lo, hi));
        for p in probe {
            ln_min_a = ln_min_a.min(plan.spec.ln_a_poly(p));
        }
    }
    let ln_delta = 0.5f64.ln() + k * ln_min_a;

    let cells: Vec<Vec<(f64, f64)>> = plan
        .cover
        .intervals
        .iter()
        .map(|w| intersect(&region, w.core_lo, w.core_hi))
        .collect();
    let mut separation = f64::INFINITY;
    for (cell, w) in cells.iter().zip(&plan.cover.intervals) {
        if !cell.is_empty() {
            separation = separation.min(distance(cell, &outside(&region, w.lo, w.hi)));
        }
    }
    let gamma = 0.5 * separation;
    let live: Vec<usize> = (0..cells.len()).filter(|&i| !cells[i].is_empty()).collect();
    if live.is_empty() {
        return Err(FactoryError::Cover(
            "no cover cell meets the surviving region".into(),
        ));
    }

    let (estimate_flips, estimate) = if gamma.is_infinite() || live.len() == 1 {
        (0, f64::NAN)
    } else {
        // Hoeffding: P(|f_N - p| >= gamma) <= 2 exp(-2 N gamma^2) <= delta / 2
        let n = ((2f64.ln() + 2f64.ln() - ln_delta) / (2.0 * gamma * gamma)).ceil() as u64;
        coins.bits().charge(Resource::PCoin, n)?;
        let p = coins.bias_value();
        let stream = coins.bits().stream_mut();
        let heads = (0..n).filter(|_| stream.uniform_below(p)).count() as u64;
        (n, heads as f64 / n as f64)
    };

    let index = if estimate_flips == 0 {
        live[0]
    } else if let Some(i) = live
        .iter()
        .copied()
        .find(|&i| point_distance(&cells[i], estimate) == 0.0)
    {
        i
    } else if point_distance(&region, estimate) == 0.0 {
        return Err(FactoryError::Cover(format!(
            "estimate {estimate} lies in no cover cell; cover too coarse"
        )));
    } else {
        *live
            .iter()
            .min_by(|&&i, &&j| {
                point_distance(&cells[i], estimate).total_cmp(&point_distance(&cells[j], estimate))
            })
            .expect("live is non-empty")
    };
    Ok(PinpointOutcome {
        index,
        m_max,
        radii,
        ln_delta,
        gamma,
        estimate_flips,
        estimate,
    })
}
