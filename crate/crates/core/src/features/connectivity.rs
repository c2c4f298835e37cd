use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{FeatureError, Matrix, TimeCourses};

/// Correlations are clipped to `1 - FISHER_Z_CLIP` in magnitude before the
/// Fisher transform so perfectly correlated pairs stay finite.
pub const FISHER_Z_CLIP: f64 = 1e-7;

/// Static functional network connectivity: Fisher-Z of pairwise Pearson
/// correlations, zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FncMatrix(pub Matrix);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DfncWarning {
    pub window: usize,
    pub i: usize,
    pub j: usize,
}

/// Windowed connectivity: one row per window, columns are the upper triangle
/// `(i < j)` in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfncMatrix {
    pub data: Matrix,
    pub window: usize,
    pub step: usize,
    /// Pairs whose window had zero variance; their entry is 0.
    pub warnings: Vec<DfncWarning>,
}

pub fn fisher_z(r: f64) -> f64 {
    let bound = 1.0 - FISHER_Z_CLIP;
    libm::atanh(r.clamp(-bound, bound))
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if is_constant(x) || is_constant(y) || sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Columns of `tc` restricted to rows `start..start + len`.
fn window_columns(tc: &TimeCourses, start: usize, len: usize) -> Vec<Vec<f64>> {
    (0..tc.components()).map(|c| (start..start + len).map(|r| tc.data.get(r, c)).collect()).collect()
}

pub fn fnc(tc: &TimeCourses) -> Result<FncMatrix, FeatureError> {
    let b = tc.components();
    let cols = window_columns(tc, 0, tc.time_points());
    if let Some(component) = cols.iter().position(|c| is_constant(c)) {
        return Err(FeatureError::ZeroVariance { component });
    }
    let mut m = Matrix::zeros(b, b);
    for i in 0..b {
        for j in i + 1..b {
            let z = fisher_z(pearson(&cols[i], &cols[j]).ok_or(FeatureError::ZeroVariance { component: i })?);
            m.set(i, j, z);
            m.set(j, i, z);
        }
    }
    Ok(FncMatrix(m))
}

/// Number of windows of length `window` advanced by `step`.
pub fn window_count(len: usize, window: usize, step: usize) -> usize {
    (len - window) / step + 1
}

pub fn dfnc(tc: &TimeCourses, window: usize, step: usize) -> Result<DfncMatrix, FeatureError> {
    let phi = tc.time_points();
    if window > phi {
        return Err(FeatureError::WindowTooLarge { window, len: phi });
    }
    if step == 0 {
        return Err(FeatureError::InvalidParam("step must be at least 1"));
    }
    if window < 2 {
        return Err(FeatureError::InvalidParam("window must cover at least 2 time points"));
    }
    let b = tc.components();
    let rows = window_count(phi, window, step);
    let mut data = Matrix::zeros(rows, b * (b - 1) / 2);
    let mut warnings = Vec::new();
    for w in 0..rows {
        let cols = window_columns(tc, w * step, window);
        let mut k = 0;
        for i in 0..b {
            for j in i + 1..b {
                let z = match pearson(&cols[i], &cols[j]) {
                    Some(r) => fisher_z(r),
                    None => {
                        warnings.push(super::DfncWarning { window: w, i, j });
                        0.0
                    }
                };
                data.set(w, k, z);
                k += 1;
            }
        }
    }
    Ok(DfncMatrix { data, window, step, warnings })
}

impl FncMatrix {
    /// Upper triangle `(i < j)` in row-major order.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let b = self.0.rows;
        let mut out = Vec::with_capacity(b * (b - 1) / 2);
        for i in 0..b {
            for j in i + 1..b {
                out.push(self.0.get(i, j));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn tc(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> TimeCourses {
        let data = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        TimeCourses::new("s", Matrix::from_rows(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn orthogonal_columns_have_zero_z() {
        // cos and sin over a full period are uncorrelated.
        let t = tc(8, 2, |r, c| {
            let a = core::f64::consts::TAU * r as f64 / 8.0;
            if c == 0 {
                libm::cos(a)
            } else {
                libm::sin(a)
            }
        });
        assert!(fnc(&t).unwrap().0.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn scaled_copy_hits_the_clip() {
        let t = tc(20, 2, |r, c| {
            let x = libm::sin(r as f64 * 0.7) + r as f64 * 0.01;
            if c == 0 {
                x
            } else {
                2.0 * x
            }
        });
        let expected = libm::atanh(1.0 - 1e-7);
        assert!((fnc(&t).unwrap().0.get(0, 1) - expected).abs() < 1e-9);
        assert!((expected - 8.406).abs() < 1e-3);
    }

    #[test]
    fn zero_variance_names_component() {
        let t = tc(10, 3, |r, c| if c == 1 { 4.0 } else { (r * (c + 1)) as f64 });
        assert_eq!(fnc(&t).unwrap_err(), FeatureError::ZeroVariance { component: 1 });
    }

    #[test]
    fn dfnc_shape_and_full_window() {
        let t = tc(100, 5, |r, c| libm::sin(r as f64 * (0.1 + c as f64 * 0.37)) + (r * c % 7) as f64 * 0.1);
        let d = dfnc(&t, 10, 1).unwrap();
        assert_eq!((d.data.rows, d.data.cols), (91, 10));
        let full = dfnc(&t, 100, 1).unwrap();
        assert_eq!(full.data.rows, 1);
        assert_eq!(full.data.row(0), fnc(&t).unwrap().upper_triangle().as_slice());
    }

    #[test]
    fn shifted_sinusoids_saturate_every_window() {
        // A constant offset leaves the correlation at exactly 1 in every window.
        let t = tc(40, 2, |r, c| libm::sin(r as f64 * 0.9) + c as f64 * 3.0);
        let d = dfnc(&t, 8, 2).unwrap();
        let clipped = libm::atanh(1.0 - 1e-7);
        assert!(d.data.data.iter().all(|z| (z - clipped).abs() < 1e-6));
    }

    #[test]
    fn dfnc_zero_variance_window_emits_zero_with_warning() {
        let t = tc(12, 2, |r, c| if c == 0 && r < 6 { 1.0 } else { (r as f64 * 1.3).sin() + c as f64 });
        let d = dfnc(&t, 4, 4).unwrap();
        assert_eq!(d.data.get(0, 0), 0.0);
        assert_eq!(d.warnings, vec![DfncWarning { window: 0, i: 0, j: 1 }]);
    }

    #[test]
    fn dfnc_rejects_bad_windows() {
        let t = tc(10, 2, |r, c| (r + c) as f64 * if c == 0 { 1.0 } else { -0.5 });
        assert_eq!(dfnc(&t, 11, 1).unwrap_err(), FeatureError::WindowTooLarge { window: 11, len: 10 });
        assert!(dfnc(&t, 5, 0).is_err());
    }
}
