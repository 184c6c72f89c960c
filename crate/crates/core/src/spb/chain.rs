//! The chain `f_1 = f`, `f_{k+1} = (4/3)(f_k - g_k/4)` and the sampler that
//! picks a level with probability `(3/4)^(k-1) (1/4)` and flips its g-coin.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{FactoryError, Result};
use crate::numeric::unit_grid;
use crate::quoin::CoinSource;
use crate::rng::sample_index;
use crate::spb::bounds::{g_coin, BoundingLevel, CouplingTally};
use crate::spb::certificate::{verify_spb, CriticalPoint, SpbCertificate, SpbReport};
use crate::spb::search::{search_level, SearchConfig, SearchReport};
use crate::spb::FINE_POINTS;

/// Grid used when a certificate is checked before compiling.
pub const CERTIFICATE_GRID: usize = 10_001;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChainLevel {
    pub k: usize,
    pub level: BoundingLevel,
    pub report: SearchReport,
    /// Zeros and ones with their constants inherited from the first level, `c` scaled by `(2/3)^(k-1)`.
    pub zeros: Vec<CriticalPoint>,
    pub ones: Vec<CriticalPoint>,
    /// The inherited local bounds hold for `f_k` on the fine grid.
    pub inherited_bounds_hold: bool,
    /// `(2/3) f_{k-1} < f_k` and `1 - f_k > (2/3)(1 - f_{k-1})` on the fine grid (level one: true).
    pub recursion_bounds_hold: bool,
    /// `f_k` on the fine grid.
    #[serde(skip)]
    pub fine: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ChainCache {
    certificate_hash: String,
    config: SearchConfig,
    levels: Vec<BoundingLevel>,
}

/// A lazily extended chain of bounding pairs for one certificate.
///
/// Extension is serialized by a mutex; built levels are shared read-only.
pub struct SpbChain {
    certificate: SpbCertificate,
    config: SearchConfig,
    verification: SpbReport,
    max_depth: usize,
    levels: Mutex<Vec<Arc<ChainLevel>>>,
}

impl SpbChain {
    /// Verifies the certificate and builds the first level.
    pub fn compile(certificate: &SpbCertificate, config: &SearchConfig) -> Result<Self> {
        let verification = verify_spb(certificate, CERTIFICATE_GRID)?;
        if !verification.pass {
            let worst: Vec<String> = verification
                .violations
                .iter()
                .map(|v| format!("condition {} at p = {}: {}", v.condition, v.p, v.detail))
                .collect();
            return Err(FactoryError::Certification(worst.join("; ")));
        }
        let chain = SpbChain {
            certificate: certificate.clone(),
            config: config.clone(),
            verification,
            max_depth: 500,
            levels: Mutex::new(Vec::new()),
        };
        chain.level(1)?;
        Ok(chain)
    }

    pub fn certificate(&self) -> &SpbCertificate {
        &self.certificate
    }

    pub fn verification(&self) -> &SpbReport {
        &self.verification
    }

    pub fn depth(&self) -> usize {
        self.levels.lock().expect("chain lock").len()
    }

    pub fn levels(&self) -> Vec<Arc<ChainLevel>> {
        self.levels.lock().expect("chain lock").clone()
    }

    /// Level `k` (1-based), building it and any missing predecessors.
    pub fn level(&self, k: usize) -> Result<Arc<ChainLevel>> {
        if k == 0 || k > self.max_depth {
            return Err(FactoryError::Config(format!(
                "chain level {k} outside 1..={}",
                self.max_depth
            )));
        }
        let mut levels = self.levels.lock().expect("chain lock");
        while levels.len() < k {
            let next = self.build_next(&levels)?;
            levels.push(Arc::new(next));
        }
        Ok(levels[k - 1].clone())
    }

    fn build_next(&self, levels: &[Arc<ChainLevel>]) -> Result<ChainLevel> {
        let k = levels.len() + 1;
        let grid = unit_grid(FINE_POINTS);
        let fine = match levels.last() {
            None => first_fine(&self.certificate)?,
            Some(prev) => next_fine(prev, &grid),
        };
        let scale = (2.0f64 / 3.0).powi(k as i32 - 1);
        let inherited = self.certificate.scaled(scale);
        let reference = levels.first().map_or(&fine, |first| &first.fine);
        let (level, report) = search_level(&fine, reference, &inherited.zeros, &inherited.ones, &self.config)
            .map_err(|e| FactoryError::Certification(format!("chain level {k}: {e}")))?;
        let inherited_bounds_hold = inherited_hold(&inherited, &fine, &grid);
        let recursion_bounds_hold = levels
            .last()
            .is_none_or(|prev| recursion_hold(&prev.fine, &fine));
        Ok(ChainLevel {
            k,
            level,
            report,
            zeros: inherited.zeros,
            ones: inherited.ones,
            inherited_bounds_hold,
            recursion_bounds_hold,
            fine,
        })
    }

    /// `g_k(p)` from the closed form of level `k`.
    pub fn g(&self, k: usize, p: f64) -> Result<f64> {
        Ok(self.level(k)?.level.g(p))
    }

    /// `sum_{k <= depth} (3/4)^(k-1) (1/4) g_k(p)`.
    pub fn partial_sum(&self, depth: usize, p: f64) -> Result<f64> {
        let mut total = 0.0;
        let mut w = 0.25;
        for k in 1..=depth {
            total += w * self.g(k, p)?;
            w *= 0.75;
        }
        Ok(total)
    }

    fn cache_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.json", self.certificate.hash_hex()))
    }

    /// Writes the built levels to `dir/<certificate hash>.json`.
    pub fn save_cache(&self, dir: &Path) -> Result<PathBuf> {
        let cache = ChainCache {
            certificate_hash: self.certificate.hash_hex(),
            config: self.config.clone(),
            levels: self.levels().iter().map(|l| l.level.clone()).collect(),
        };
        let path = self.cache_path(dir);
        std::fs::create_dir_all(dir)
            .map_err(|e| FactoryError::Config(format!("cache dir: {e}")))?;
        let text = serde_json::to_string(&cache).expect("cache serializes");
        std::fs::write(&path, text)
            .map_err(|e| FactoryError::Config(format!("writing {}: {e}", path.display())))?;
        Ok(path)
    }

    /// Compiles, reusing cached levels from `dir` when they match this
    /// certificate and configuration. Cached levels are re-derived and
    /// compared before use; a mismatch falls back to a fresh search.
    pub fn compile_cached(
        certificate: &SpbCertificate,
        config: &SearchConfig,
        dir: &Path,
    ) -> Result<Self> {
        let chain = SpbChain::compile(certificate, config)?;
        let path = chain.cache_path(dir);
        let Ok(text) = std::fs::read_to_string(&path) else {
            return Ok(chain);
        };
        let Ok(cache) = serde_json::from_str::<ChainCache>(&text) else {
            return Ok(chain);
        };
        if cache.certificate_hash != certificate.hash_hex() || &cache.config != config {
            return Ok(chain);
        }
        let depth = cache.levels.len();
        if depth > 1 {
            chain.level(depth)?;
        }
        let same = chain
            .levels()
            .iter()
            .zip(&cache.levels)
            .all(|(a, b)| &a.level == b);
        if same {
            Ok(chain)
        } else {
            Err(FactoryError::Certification(format!(
                "cache {} disagrees with a fresh compile",
                path.display()
            )))
        }
    }
}

fn first_fine(cert: &SpbCertificate) -> Result<Vec<f64>> {
    let target = cert.target()?;
    Ok(target
        .eval_grid(&unit_grid(FINE_POINTS))?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect())
}

fn next_fine(prev: &ChainLevel, grid: &[f64]) -> Vec<f64> {
    grid.iter()
        .zip(&prev.fine)
        .map(|(&p, &f)| ((4.0 / 3.0) * (f - prev.level.g(p) / 4.0)).clamp(0.0, 1.0))
        .collect()
}

fn inherited_hold(cert: &SpbCertificate, fine: &[f64], grid: &[f64]) -> bool {
    grid.iter().zip(fine).all(|(&p, &f)| {
        cert.zeros
            .iter()
            .all(|z| !z.in_window(p) || z.bound(p) <= f + 1e-12)
            && cert
                .ones
                .iter()
                .all(|w| !w.in_window(p) || f <= 1.0 - w.bound(p) + 1e-12)
    })
}

fn recursion_hold(prev: &[f64], next: &[f64]) -> bool {
    prev.iter().zip(next).all(|(&a, &b)| {
        (a <= 0.0 || (2.0 / 3.0) * a < b) && (a >= 1.0 || 1.0 - b > (2.0 / 3.0) * (1.0 - a))
    })
}

/// Exact sample of the certified target: level `k` with probability
/// `(3/4)^(k-1) (1/4)`, then that level's g-coin.
pub fn spb_sample(
    chain: &SpbChain,
    src: &mut CoinSource,
    tally: Option<&CouplingTally>,
) -> Result<bool> {
    let mut w = 1.0;
    let sums = std::iter::from_fn(move || {
        w *= 0.75;
        Some(1.0 - w)
    });
    let k = sample_index(sums, src.bits())?;
    let level = chain.level(k)?;
    g_coin(&level.level, src, tally)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_half_is_a_fixed_point() {
        let cert = SpbCertificate {
            f: "0.5".into(),
            lipschitz: 1.0,
            zeros: vec![],
            ones: vec![],
        };
        let chain = SpbChain::compile(&cert, &SearchConfig::default()).unwrap();
        for k in 1..=5 {
            let lv = chain.level(k).unwrap();
            assert!(lv.fine.iter().all(|&v| (v - 0.5).abs() < 1e-15));
            assert!((lv.level.g(0.3) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn rejected_certificate_names_condition() {
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
        let err = SpbChain::compile(&cert, &SearchConfig::default())
            .err()
            .unwrap();
        assert!(err.to_string().contains("condition 3"), "{err}");
    }
}
