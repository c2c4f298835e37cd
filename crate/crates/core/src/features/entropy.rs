//! Multi-scale dispersion entropy.
//!
//! Each component is coarse-grained at every requested scale, mapped to `c`
//! class labels through the normal CDF of its own standardised values, and
//! summarised by the Shannon entropy (natural log) of its dispersion patterns:
//! embedding vectors of `beta` labels spaced `tau` apart.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{mean, FeatureError, Matrix, TimeCourses};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    /// Normal CDF of `(x - mean) / std` of the series itself.
    #[default]
    Ncdf,
    /// Min-max normalisation to `[0, 1]`.
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MsdeParams {
    pub classes: u32,
    pub embedding: usize,
    pub delay: usize,
    pub scales: Vec<usize>,
    pub discretization: Discretization,
}

impl Default for MsdeParams {
    fn default() -> Self {
        MsdeParams { classes: 6, embedding: 2, delay: 1, scales: alloc::vec![1, 2, 4], discretization: Discretization::Ncdf }
    }
}

impl MsdeParams {
    /// Scales `1..=max` where `max` is the largest scale leaving at least
    /// `min_len` coarse-grained points out of `time_points`.
    pub fn scales_up_to(time_points: usize, min_len: usize) -> Vec<usize> {
        (1..=time_points).take_while(|s| time_points / s >= min_len.max(1)).collect()
    }

    /// Upper bound of any entry: `ln(c^beta)`.
    pub fn max_entropy(&self) -> f64 {
        self.embedding as f64 * libm::log(f64::from(self.classes))
    }
}

/// Scales by rows, components by columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsdeMatrix {
    pub data: Matrix,
    pub params: MsdeParams,
}

/// Means over consecutive non-overlapping bins of `scale` points; a trailing
/// partial bin is dropped.
pub fn coarse_grain(signal: &[f64], scale: usize) -> Vec<f64> {
    assert!(scale >= 1, "scale must be at least 1");
    if scale == 1 {
        return signal.to_vec();
    }
    signal.chunks_exact(scale).map(|bin| bin.iter().sum::<f64>() / scale as f64).collect()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// `round(c * theta + 0.5)` with half-up rounding, clamped to `1..=c`.
fn label(theta: f64, classes: u32) -> u32 {
    let c = f64::from(classes);
    let v = libm::floor(c * theta + 0.5 + 0.5);
    v.clamp(1.0, c) as u32
}

/// Normal-CDF class labels. A constant series gets the midpoint label.
pub fn ncdf_map(signal: &[f64], classes: u32) -> Vec<u32> {
    map_to_classes(signal, classes, Discretization::Ncdf)
}

pub fn map_to_classes(signal: &[f64], classes: u32, method: Discretization) -> Vec<u32> {
    assert!(classes >= 2, "need at least two classes");
    let mid = label(0.5, classes);
    match method {
        Discretization::Ncdf => {
            let n = signal.len();
            let avg = mean(signal);
            let sd = if n > 1 { libm::sqrt(signal.iter().map(|v| (v - avg) * (v - avg)).sum::<f64>() / (n - 1) as f64) } else { 0.0 };
            if sd.is_nan() || sd <= 0.0 || signal.iter().all(|v| *v == signal[0]) {
                return alloc::vec![mid; n];
            }
            signal.iter().map(|v| label(normal_cdf((v - avg) / sd), classes)).collect()
        }
        Discretization::MinMax => {
            let lo = signal.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi.is_nan() || hi <= lo {
                return alloc::vec![mid; signal.len()];
            }
            signal.iter().map(|v| label((v - lo) / (hi - lo), classes)).collect()
        }
    }
}

/// Shannon entropy (nats) of the dispersion-pattern distribution.
pub fn dispersion_entropy(labels: &[u32], classes: u32, embedding: usize, delay: usize) -> Result<f64, FeatureError> {
    if embedding == 0 || delay == 0 {
        return Err(FeatureError::InvalidParam("embedding dimension and delay must be at least 1"));
    }
    let needed = embedding * delay;
    if labels.len() < needed {
        return Err(FeatureError::SeriesTooShort { len: labels.len(), needed });
    }
    if let Some(&bad) = labels.iter().find(|l| **l == 0 || **l > classes) {
        return Err(FeatureError::InvalidLabel { label: bad, classes });
    }
    let span = (embedding - 1) * delay;
    let count = labels.len() - span;
    let mut tally: BTreeMap<u64, usize> = BTreeMap::new();
    for i in 0..count {
        let code = (0..embedding).fold(0u64, |acc, k| acc * u64::from(classes) + u64::from(labels[i + k * delay] - 1));
        *tally.entry(code).or_insert(0) += 1;
    }
    let total = count as f64;
    let h = tally
        .values()
        .map(|&n| {
            let p = n as f64 / total;
            -p * libm::log(p)
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

pub fn msde(tc: &TimeCourses, params: &MsdeParams) -> Result<MsdeMatrix, FeatureError> {
    if params.classes < 2 {
        return Err(FeatureError::InvalidParam("need at least two classes"));
    }
    if params.scales.is_empty() || params.scales.contains(&0) {
        return Err(FeatureError::InvalidParam("scales must be non-empty and positive"));
    }
    let needed = params.embedding * params.delay;
    let mut data = Matrix::zeros(params.scales.len(), tc.components());
    for component in 0..tc.components() {
        let series = tc.data.column(component);
        for (row, &scale) in params.scales.iter().enumerate() {
            let coarse = coarse_grain(&series, scale);
            if coarse.len() < needed {
                return Err(FeatureError::ScaleTooLarge { scale, component });
            }
            let labels = map_to_classes(&coarse, params.classes, params.discretization);
            data.set(row, component, dispersion_entropy(&labels, params.classes, params.embedding, params.delay)?);
        }
    }
    Ok(MsdeMatrix { data, params: params.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::vec;
    use rand::Rng;

    #[test]
    fn coarse_grain_examples() {
        assert_eq!(coarse_grain(&[1.0, 3.0, 5.0, 7.0], 2), vec![2.0, 6.0]);
        assert_eq!(coarse_grain(&[1.0, 2.0, 3.5], 1), vec![1.0, 2.0, 3.5]);
        assert_eq!(coarse_grain(&[1.0; 7], 3).len(), 2);
    }

    #[test]
    fn midpoint_and_tails() {
        let labels = ncdf_map(&[-1.0, 0.0, 1.0], 6);
        assert_eq!(labels[1], 4);
        // CDF endpoints: theta = 0 gives label 1, theta = 1 clamps to c.
        assert_eq!((label(0.0, 6), label(1.0, 6)), (1, 6));
        assert_eq!((label(normal_cdf(-40.0), 6), label(normal_cdf(40.0), 6)), (1, 6));
        assert_eq!(ncdf_map(&[2.0; 5], 6), vec![4; 5]);
    }

    #[test]
    fn label_bands_match_normal_cdf() {
        // round(c * theta + 0.5) = k exactly when theta lies in
        // [(k - 1) / c, k / c), so each of the c bands has mass 1 / c.
        let mut r = rng::seeded(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| rng::standard_normal(&mut r)).collect();
        let labels = ncdf_map(&xs, 6);
        let mut counts = [0usize; 6];
        for l in labels {
            counts[l as usize - 1] += 1;
        }
        let expected = [1.0 / 6.0; 6];
        for (c, e) in counts.iter().zip(expected) {
            assert!((*c as f64 / n as f64 - e).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn constant_series_has_zero_entropy() {
        assert_eq!(dispersion_entropy(&[3; 50], 6, 2, 1).unwrap(), 0.0);
    }

    #[test]
    fn alternating_labels_give_ln2() {
        let h = dispersion_entropy(&[1, 2, 1, 2, 1], 6, 2, 1).unwrap();
        assert!((h - core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn uniform_labels_approach_the_bound() {
        let mut r = rng::seeded(2);
        let labels: Vec<u32> = (0..100_000).map(|_| r.gen_range(1..=6)).collect();
        let h = dispersion_entropy(&labels, 6, 2, 1).unwrap();
        let bound = libm::log(36.0);
        assert!(h <= bound && (bound - h) / bound < 0.02);
    }

    #[test]
    fn entropy_errors() {
        assert_eq!(dispersion_entropy(&[1], 6, 2, 1).unwrap_err(), FeatureError::SeriesTooShort { len: 1, needed: 2 });
        assert_eq!(dispersion_entropy(&[1, 7], 6, 2, 1).unwrap_err(), FeatureError::InvalidLabel { label: 7, classes: 6 });
    }

    #[test]
    fn msde_shapes_and_errors() {
        let mut r = rng::seeded(4);
        let data: Vec<f64> = (0..64 * 8).map(|_| rng::standard_normal(&mut r)).collect();
        let tc = TimeCourses::new("s", Matrix::from_rows(64, 8, data).unwrap()).unwrap();
        let m = msde(&tc, &MsdeParams::default()).unwrap();
        assert_eq!((m.data.rows, m.data.cols), (3, 8));
        assert!(m.data.data.iter().all(|v| (0.0..=libm::log(36.0)).contains(v)));
        let p = MsdeParams { scales: vec![1, 40], ..MsdeParams::default() };
        assert_eq!(msde(&tc, &p).unwrap_err(), FeatureError::ScaleTooLarge { scale: 40, component: 0 });
        let p = MsdeParams { discretization: Discretization::MinMax, classes: 10, ..MsdeParams::default() };
        let m = msde(&tc, &p).unwrap();
        assert!(m.data.data.iter().all(|v| (0.0..=libm::log(100.0)).contains(v)));
    }

    #[test]
    fn scale_bound_helper() {
        assert_eq!(MsdeParams::scales_up_to(10, 4), vec![1, 2]);
    }
}
