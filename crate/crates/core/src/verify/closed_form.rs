//! Analytic values of the catalogued targets.

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::interval::DomainSpec;
use crate::numeric::bernstein_sum;
use crate::protocol::BernsteinMode;
use crate::quoin::h_value;
use crate::spb::BoundingLevel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "kebab-case")]
pub enum ClosedForm {
    PCoin,
    HCoin {
        a: f64,
    },
    G1,
    /// `1 - sqrt(1 - 4p(1-p))`
    FWedge,
    Power {
        k: u32,
        base: Box<ClosedForm>,
    },
    Negate {
        base: Box<ClosedForm>,
    },
    /// `(1 - (1 - h_z)^m)^M`
    THeaviside {
        m: u32,
        #[serde(rename = "M")]
        big_m: u32,
        z: f64,
    },
    Bernstein {
        mode: BernsteinMode,
        values: Vec<f64>,
    },
    VonNeumann,
    /// `alpha * h_a`
    FAlpha {
        alpha: f64,
        a: f64,
    },
    Lower {
        level: Box<BoundingLevel>,
    },
    Upper {
        level: Box<BoundingLevel>,
    },
    /// `L / (1 - U + L)`
    GCoin {
        level: Box<BoundingLevel>,
    },
    APoly {
        domain: DomainSpec,
    },
}

pub fn closed_form(target: &ClosedForm, p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(FactoryError::Config(format!("bias {p} outside [0, 1]")));
    }
    Ok(match target {
        ClosedForm::PCoin => p,
        ClosedForm::HCoin { a } => h_value(*a, p),
        ClosedForm::G1 => 4.0 * p * (1.0 - p),
        ClosedForm::FWedge => 1.0 - (1.0 - 4.0 * p * (1.0 - p)).max(0.0).sqrt(),
        ClosedForm::Power { k, base } => closed_form(base, p)?.powi(*k as i32),
        ClosedForm::Negate { base } => 1.0 - closed_form(base, p)?,
        ClosedForm::THeaviside { m, big_m, z } => {
            (1.0 - (1.0 - h_value(*z, p)).powi(*m as i32)).powi(*big_m as i32)
        }
        ClosedForm::Bernstein { mode, values } => {
            if values.len() < 2 {
                return Err(FactoryError::Config(
                    "bernstein target needs at least two values".into(),
                ));
            }
            let thresholds: Vec<f64> = values.iter().map(|v| mode.threshold(*v)).collect();
            bernstein_sum(&thresholds, p)
        }
        ClosedForm::VonNeumann => 0.5,
        ClosedForm::FAlpha { alpha, a } => alpha * h_value(*a, p),
        ClosedForm::Lower { level } => level.lower(p),
        ClosedForm::Upper { level } => level.upper(p),
        ClosedForm::GCoin { level } => level.g(p),
        ClosedForm::APoly { domain } => domain.a_poly(p),
    })
}

/// Looks a target up by its kebab-case name with JSON parameters.
pub fn closed_form_named(name: &str, params: &serde_json::Value, p: f64) -> Result<f64> {
    let mut obj = match params {
        serde_json::Value::Object(m) => m.clone(),
        serde_json::Value::Null => serde_json::Map::new(),
        _ => {
            return Err(FactoryError::Config(
                "target parameters must be a JSON object".into(),
            ))
        }
    };
    obj.insert("target".into(), serde_json::Value::String(name.into()));
    let target: ClosedForm =
        serde_json::from_value(serde_json::Value::Object(obj)).map_err(|e| {
            FactoryError::Config(format!("unknown target `{name}` or bad parameters: {e}"))
        })?;
    closed_form(&target, p)
}
