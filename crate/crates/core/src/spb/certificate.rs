//! Certificates: an evaluable target with declared zeros and ones and the
//! local polynomial bounds that hold around them.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FactoryError, Result};
use crate::numeric::unit_grid;

/// A declared zero or one of the target with its local bound: near a zero,
/// `c (p - at)^(2k) <= f(p)`; near a one, `f(p) <= 1 - c (p - at)^(2k)`,
/// for `|p - at| <= delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub at: f64,
    pub c: f64,
    pub k: u32,
    pub delta: f64,
}

impl CriticalPoint {
    pub fn bound(&self, p: f64) -> f64 {
        self.c * (p - self.at).powi(2 * self.k as i32)
    }

    pub fn window(&self) -> (f64, f64) {
        (
            (self.at - self.delta).max(0.0),
            (self.at + self.delta).min(1.0),
        )
    }

    pub fn in_window(&self, p: f64) -> bool {
        (p - self.at).abs() <= self.delta
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpbCertificate {
    /// Expression in the variable `p`.
    pub f: String,
    pub lipschitz: f64,
    #[serde(default)]
    pub zeros: Vec<CriticalPoint>,
    #[serde(default)]
    pub ones: Vec<CriticalPoint>,
}

impl SpbCertificate {
    pub fn from_json(text: &str) -> Result<Self> {
        let cert: SpbCertificate = serde_json::from_str(text).map_err(|e| {
            FactoryError::Config(format!(
                "certificate JSON at line {} column {}: {e}",
                e.line(),
                e.column()
            ))
        })?;
        cert.target()?;
        Ok(cert)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificates always serialize")
    }

    pub fn target(&self) -> Result<TargetFn> {
        TargetFn::parse(&self.f)
    }

    /// Hex SHA-256 of the compact JSON form; used to key compiled caches.
    pub fn hash_hex(&self) -> String {
        let compact = serde_json::to_string(self).expect("certificates always serialize");
        hex::encode(Sha256::digest(compact.as_bytes()))
    }

    /// The same certificate with every `c` scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let scale = |v: &Vec<CriticalPoint>| {
            v.iter()
                .map(|z| CriticalPoint {
                    c: z.c * factor,
                    ..z.clone()
                })
                .collect()
        };
        SpbCertificate {
            zeros: scale(&self.zeros),
            ones: scale(&self.ones),
            ..self.clone()
        }
    }
}

/// A parsed target expression.
#[derive(Clone, Debug)]
pub struct TargetFn {
    source: String,
    expr: meval::Expr,
}

impl TargetFn {
    pub fn parse(source: &str) -> Result<Self> {
        let expr: meval::Expr = source
            .parse()
            .map_err(|e| FactoryError::Config(format!("cannot parse target `{source}`: {e}")))?;
        let t = TargetFn {
            source: source.to_string(),
            expr,
        };
        t.eval(0.5)?;
        Ok(t)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, p: f64) -> Result<f64> {
        let mut ctx = meval::Context::new();
        ctx.var("p", p);
        self.expr.eval_with_context(ctx).map_err(|e| {
            FactoryError::Config(format!("cannot evaluate target `{}`: {e}", self.source))
        })
    }

    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        let mut ctx = meval::Context::new();
        grid.iter()
            .map(|&p| {
                ctx.var("p", p);
                self.expr.eval_with_context(&ctx).map_err(|e| {
                    FactoryError::Config(format!("cannot evaluate target `{}`: {e}", self.source))
                })
            })
            .collect()
    }
}

/// One failed check of a certificate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// 1: continuity, 2: finitely many zeros and ones, 3: polynomial bound at
    /// a zero, 4: polynomial bound at a one; 0 for structural problems.
    pub condition: u8,
    pub p: f64,
    pub detail: String,
    /// How far the check is from holding (positive means violated).
    pub excess: f64,
}

/// Local log-log slopes of `f` approaching a declared zero, as a diagnostic of
/// polynomial versus faster decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub at: f64,
    pub distances: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Slopes stay bounded by the declared degree plus one.
    pub polynomial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpbReport {
    pub pass: bool,
    pub grid_points: usize,
    /// The worst violation per condition, in condition order.
    pub violations: Vec<Violation>,
    pub zero_decay: Vec<DecayFit>,
}

impl SpbReport {
    pub fn violated(&self, condition: u8) -> bool {
        self.violations.iter().any(|v| v.condition == condition)
    }
}

/// Checks the certificate's conditions on a uniform grid of `grid_points`.
pub fn verify_spb(cert: &SpbCertificate, grid_points: usize) -> Result<SpbReport> {
    let target = cert.target()?;
    let grid = unit_grid(grid_points.max(2));
    let f = target.eval_grid(&grid)?;
    let mut worst: [Option<Violation>; 5] = Default::default();
    let mut note = |v: Violation| {
        let slot = &mut worst[v.condition as usize];
        if slot.as_ref().is_none_or(|w| v.excess > w.excess) {
            *slot = Some(v);
        }
    };

    let all: Vec<(&CriticalPoint, bool)> = cert
        .zeros
        .iter()
        .map(|z| (z, true))
        .chain(cert.ones.iter().map(|w| (w, false)))
        .collect();
    for (i, (a, _)) in all.iter().enumerate() {
        if !(0.0..=1.0).contains(&a.at) || !(a.c > 0.0) || !(a.delta > 0.0) || a.k == 0 {
            note(Violation {
                condition: 0,
                p: a.at,
                detail: format!(
                    "critical point at {} needs c > 0, delta > 0, k >= 1 and a location in [0, 1]",
                    a.at
                ),
                excess: 1.0,
            });
        }
        for (b, _) in all.iter().skip(i + 1) {
            if a.in_window(b.at) || b.in_window(a.at) {
                note(Violation {
                    condition: 0,
                    p: a.at,
                    detail: format!(
                        "windows of critical points {} and {} overlap each other's centres",
                        a.at, b.at
                    ),
                    excess: 1.0,
                });
            }
        }
    }
    if !(cert.lipschitz > 0.0) {
        note(Violation {
            condition: 0,
            p: 0.0,
            detail: "lipschitz bound must be positive".into(),
            excess: 1.0,
        });
    }

    let step = grid[1] - grid[0];
    let is_declared =
        |pts: &[CriticalPoint], p: f64| pts.iter().any(|z| (p - z.at).abs() <= step / 2.0);
    for (i, (&p, &v)) in grid.iter().zip(&f).enumerate() {
        if !v.is_finite() || !(-1e-12..=1.0 + 1e-12).contains(&v) {
            note(Violation {
                condition: 1,
                p,
                detail: format!("f({p}) = {v} is not a probability"),
                excess: 1.0,
            });
            continue;
        }
        if i + 1 < grid.len() {
            let d = (f[i + 1] - v).abs() - cert.lipschitz * step;
            if d > 1e-12 {
                note(Violation {
                    condition: 1,
                    p,
                    detail: format!("|f({}) - f({p})| exceeds lipschitz * step", grid[i + 1]),
                    excess: d,
                });
            }
        }
        if v <= 0.0 && !is_declared(&cert.zeros, p) {
            note(Violation {
                condition: 2,
                p,
                detail: format!("undeclared zero at {p}"),
                excess: 1.0,
            });
        }
        if v >= 1.0 && !is_declared(&cert.ones, p) {
            note(Violation {
                condition: 2,
                p,
                detail: format!("undeclared one at {p}"),
                excess: 1.0,
            });
        }
        for z in &cert.zeros {
            if z.in_window(p) {
                let d = z.bound(p) - v;
                if d > 1e-12 {
                    note(Violation {
                        condition: 3,
                        p,
                        detail: format!("c (p - {})^{} exceeds f near the zero", z.at, 2 * z.k),
                        excess: d,
                    });
                }
            }
        }
        for w in &cert.ones {
            if w.in_window(p) {
                let d = v - (1.0 - w.bound(p));
                if d > 1e-12 {
                    note(Violation {
                        condition: 4,
                        p,
                        detail: format!("f exceeds 1 - c (p - {})^{} near the one", w.at, 2 * w.k),
                        excess: d,
                    });
                }
            }
        }
    }
    for z in &cert.zeros {
        let v = target.eval(z.at)?;
        if v.abs() > 1e-12 {
            note(Violation {
                condition: 2,
                p: z.at,
                detail: format!("declared zero has f = {v}"),
                excess: v.abs(),
            });
        }
    }
    for w in &cert.ones {
        let v = target.eval(w.at)?;
        if (1.0 - v).abs() > 1e-12 {
            note(Violation {
                condition: 2,
                p: w.at,
                detail: format!("declared one has f = {v}"),
                excess: (1.0 - v).abs(),
            });
        }
    }

    let zero_decay = cert
        .zeros
        .iter()
        .map(|z| decay_fit(&target, z))
        .collect::<Result<Vec<_>>>()?;
    let violations: Vec<Violation> = worst.into_iter().flatten().collect();
    Ok(SpbReport {
        pass: violations.is_empty(),
        grid_points: grid.len(),
        violations,
        zero_decay,
    })
}

fn decay_fit(target: &TargetFn, z: &CriticalPoint) -> Result<DecayFit> {
    let mut distances = Vec::new();
    let mut slopes = Vec::new();
    let side = if z.at + 1e-1 <= 1.0 { 1.0 } else { -1.0 };
    let mut prev: Option<(f64, f64)> = None;
    for e in 1..=8 {
        let d = 10f64.powi(-e);
        let v = target.eval(z.at + side * d)?;
        if v > 0.0 {
            if let Some((pd, pv)) = prev {
                distances.push(d);
                slopes.push((pv.ln() - v.ln()) / (pd.ln() - d.ln()));
            }
            prev = Some((d, v));
        } else {
            distances.push(d);
            slopes.push(f64::INFINITY);
            prev = None;
        }
    }
    let polynomial = slopes
        .iter()
        .all(|s| s.is_finite() && *s <= (2 * z.k) as f64 + 1.0);
    Ok(DecayFit {
        at: z.at,
        distances,
        slopes,
        polynomial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> SpbCertificate {
        SpbCertificate {
            f: "(2*p-1)^2".into(),
            lipschitz: 4.0,
            zeros: vec![CriticalPoint {
                at: 0.5,
                c: 4.0,
                k: 1,
                delta: 0.25,
            }],
            ones: vec![
                CriticalPoint {
                    at: 0.0,
                    c: 1.0,
                    k: 1,
                    delta: 0.25,
                },
                CriticalPoint {
                    at: 1.0,
                    c: 1.0,
                    k: 1,
                    delta: 0.25,
                },
            ],
        }
    }

    #[test]
    fn square_passes() {
        let r = verify_spb(&square(), 10_001).unwrap();
        assert!(r.pass, "{:?}", r.violations);
        assert!(r.zero_decay[0].polynomial);
    }

    #[test]
    fn identity_passes() {
        let cert = SpbCertificate {
            f: "p".into(),
            lipschitz: 1.0,
            zeros: vec![CriticalPoint {
                at: 0.0,
                c: 1.0,
                k: 1,
                delta: 0.25,
            }],
            ones: vec![CriticalPoint {
                at: 1.0,
                c: 1.0,
                k: 1,
                delta: 0.25,
            }],
        };
        assert!(verify_spb(&cert, 1001).unwrap().pass);
    }

    #[test]
    fn constant_passes() {
        let cert = SpbCertificate {
            f: "0.5".into(),
            lipschitz: 1.0,
            zeros: vec![],
            ones: vec![],
        };
        assert!(verify_spb(&cert, 1001).unwrap().pass);
    }

    #[test]
    fn exponential_zero_fails_condition_three() {
        let cert = SpbCertificate {
            f: "exp(-1/p)".into(),
            lipschitz: 1.0,
            zeros: vec![CriticalPoint {
                at: 0.0,
                c: 1.0,
                k: 2,
                delta: 0.25,
            }],
            ones: vec![],
        };
        let r = verify_spb(&cert, 10_001).unwrap();
        assert!(!r.pass);
        assert!(r.violated(3), "{:?}", r.violations);
        assert!(!r.zero_decay[0].polynomial);
    }

    #[test]
    fn undeclared_zero_fails_condition_two() {
        let mut cert = square();
        cert.zeros.clear();
        assert!(verify_spb(&cert, 1001).unwrap().violated(2));
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(square().hash_hex(), square().hash_hex());
        assert_ne!(square().hash_hex(), square().scaled(0.5).hash_hex());
    }
}
