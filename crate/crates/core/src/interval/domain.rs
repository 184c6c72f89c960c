use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::quoin::h_value;

/// Excluded points, the extended list the error budget is built from, and the
/// accuracy exponent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub exclusions: Vec<f64>,
    pub extended: Vec<f64>,
    pub k: u32,
}

impl DomainSpec {
    pub fn new(exclusions: Vec<f64>, extended: Vec<f64>, k: u32) -> Result<Self> {
        let spec = DomainSpec {
            exclusions,
            extended,
            k,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered_inside =
            |v: &[f64]| v.iter().all(|x| *x > 0.0 && *x < 1.0) && v.windows(2).all(|w| w[0] < w[1]);
        if !ordered_inside(&self.exclusions) || !ordered_inside(&self.extended) {
            return Err(FactoryError::Config(
                "points must be strictly increasing and inside (0, 1)".into(),
            ));
        }
        if !self.exclusions.iter().all(|x| self.extended.contains(x)) {
            return Err(FactoryError::Config(
                "extended points must include every exclusion".into(),
            ));
        }
        if self.k == 0 {
            return Err(FactoryError::Config(
                "accuracy exponent k must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// `a(p) = p (1 - p) prod_i h_{a_i}(p) (1 - h_{a_i}(p))` over the extended list.
    pub fn a_poly(&self, p: f64) -> f64 {
        let mut a = p * (1.0 - p);
        for &x in &self.extended {
            let h = h_value(x, p);
            a *= h * (1.0 - h);
        }
        a
    }

    /// `ln a(p)`, finite wherever `a(p) > 0`.
    pub fn ln_a_poly(&self, p: f64) -> f64 {
        let mut l = p.ln() + (1.0 - p).ln();
        for &x in &self.extended {
            let h = h_value(x, p);
            l += h.ln() + (1.0 - h).ln();
        }
        l
    }

    /// The open pieces of (0, 1) between consecutive exclusions.
    pub fn pieces(&self) -> Vec<(f64, f64)> {
        let mut cuts = vec![0.0];
        cuts.extend(&self.exclusions);
        cuts.push(1.0);
        cuts.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_list_is_binomial_variance() {
        let d = DomainSpec::new(vec![], vec![], 1).unwrap();
        assert_eq!(d.a_poly(0.5), 0.25);
    }

    #[test]
    fn vanishes_at_extended_points() {
        let d = DomainSpec::new(vec![0.5], vec![0.25, 0.5], 1).unwrap();
        assert_eq!(d.a_poly(0.5), 0.0);
        assert_eq!(d.a_poly(0.25), 0.0);
    }

    #[test]
    fn check_value_at_point_three() {
        let d = DomainSpec::new(vec![], vec![0.5], 1).unwrap();
        let h = (1.0 - 2.0 * 0.21f64.sqrt()) / 2.0;
        let expect = 0.21 * h * (1.0 - h);
        assert!((d.a_poly(0.3) - expect).abs() < 1e-15);
        assert!((d.a_poly(0.3) - 8.40e-3).abs() < 5e-6);
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(DomainSpec::new(vec![0.5], vec![], 1).is_err());
        assert!(DomainSpec::new(vec![], vec![0.6, 0.4], 1).is_err());
        assert!(DomainSpec::new(vec![], vec![], 0).is_err());
    }
}
