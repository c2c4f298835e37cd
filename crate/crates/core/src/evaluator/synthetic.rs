use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::features::{Matrix, TimeCourses};
use crate::rng::{derive_indexed, seeded, standard_normal};

/// Two-class time-course generator with known discriminative structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub regions: usize,
    pub time_points: usize,
    pub subjects_per_class: usize,
    /// 1-based region pairs sharing a latent factor.
    pub pairs: Vec<(usize, usize)>,
    /// Pair correlation for class 0 and class 1.
    pub rho: (f64, f64),
    /// AR(1) coefficient on discriminative regions for class 0 and class 1.
    pub ar: (f64, f64),
    /// 1-based regions whose noise colour depends on the class.
    pub discriminative: Vec<usize>,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            regions: 8,
            time_points: 64,
            subjects_per_class: 200,
            pairs: vec![(2, 5)],
            rho: (0.8, 0.0),
            ar: (0.8, 0.0),
            discriminative: vec![2, 5],
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    /// Same structure for both classes: no class signal at all.
    pub fn chance(&self) -> Self {
        SyntheticConfig { rho: (self.rho.0, self.rho.0), ar: (self.ar.0, self.ar.0), ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.regions < 2 || self.time_points < 2 {
            return Err(EvalError::InvalidSynthetic("need at least 2 regions and 2 time points"));
        }
        if self.subjects_per_class == 0 {
            return Err(EvalError::InvalidSynthetic("subjects_per_class must be positive"));
        }
        let open = |r: f64| r > -1.0 && r < 1.0;
        if !open(self.rho.0) || !open(self.rho.1) || !open(self.ar.0) || !open(self.ar.1) {
            return Err(EvalError::InvalidSynthetic("correlations and AR coefficients must lie in (-1, 1)"));
        }
        let in_range = |r: usize| (1..=self.regions).contains(&r);
        if !self.discriminative.iter().all(|r| in_range(*r)) {
            return Err(EvalError::InvalidSynthetic("discriminative regions must lie in 1..=regions"));
        }
        let mut used = vec![false; self.regions + 1];
        for &(a, b) in &self.pairs {
            if !in_range(a) || !in_range(b) || a == b || used[a] || used[b] {
                return Err(EvalError::InvalidSynthetic("pairs must be distinct, disjoint regions in 1..=regions"));
            }
            used[a] = true;
            used[b] = true;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub tc: TimeCourses,
    pub label: usize,
}

/// Subjects `0..n` are class 0 and `n..2n` class 1; each subject draws from
/// its own seed derived from the config seed and its index.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Vec<Subject>, EvalError> {
    cfg.validate()?;
    let n = cfg.subjects_per_class;
    Ok((0..2 * n).map(|i| generate_subject(cfg, i, usize::from(i >= n))).collect())
}

fn generate_subject(cfg: &SyntheticConfig, index: usize, label: usize) -> Subject {
    let mut rng = seeded(derive_indexed(cfg.seed, "subject", index as u64));
    let (phi, b) = (cfg.time_points, cfg.regions);
    let mut m = Matrix::zeros(phi, b);
    for t in 0..phi {
        for r in 0..b {
            m.set(t, r, standard_normal(&mut rng));
        }
    }
    let rho = if label == 0 { cfg.rho.0 } else { cfg.rho.1 };
    for &(a, c) in &cfg.pairs {
        let w = libm::sqrt(rho.abs());
        let noise = libm::sqrt(1.0 - rho.abs());
        for t in 0..phi {
            let z = standard_normal(&mut rng);
            m.set(t, a - 1, w * z + noise * m.get(t, a - 1));
            m.set(t, c - 1, rho.signum() * w * z + noise * m.get(t, c - 1));
        }
    }
    let ar = if label == 0 { cfg.ar.0 } else { cfg.ar.1 };
    let innov = libm::sqrt(1.0 - ar * ar);
    for &r in &cfg.discriminative {
        let mut prev = m.get(0, r - 1);
        for t in 1..phi {
            prev = ar * prev + innov * m.get(t, r - 1);
            m.set(t, r - 1, prev);
        }
    }
    let tc = TimeCourses::new(format!("sub-{:04}", index + 1), m).expect("generated values are finite");
    Subject { tc, label }
}
