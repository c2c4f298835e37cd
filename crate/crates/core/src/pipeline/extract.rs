use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{PipelineError, Stream, StreamFlags};
use crate::features::{dfnc, fnc, msde, Matrix, MsdeParams, TimeCourses};
use crate::graph::Shape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureParams {
    pub window: usize,
    pub step: usize,
    pub msde: MsdeParams,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams { window: 16, step: 4, msde: MsdeParams::default() }
    }
}

/// Parameters the features were computed with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub subject_id: String,
    pub time_points: usize,
    pub components: usize,
    pub params: FeatureParams,
    pub streams: StreamFlags,
    /// `(window, i, j)` of zero-variance dFNC windows, 0-based.
    pub dfnc_warnings: Vec<(usize, usize, usize)>,
}

/// Extracted features. TC is `time x components`, FNC `components x
/// components`, dFNC `windows x pairs`, MsDE `scales x components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatures {
    pub tc: Option<Matrix>,
    pub fnc: Option<Matrix>,
    pub dfnc: Option<Matrix>,
    pub msde: Option<Matrix>,
    pub provenance: Provenance,
}

impl SubjectFeatures {
    pub fn matrix(&self, s: Stream) -> Option<&Matrix> {
        match s {
            Stream::Tc => self.tc.as_ref(),
            Stream::Fnc => self.fnc.as_ref(),
            Stream::Dfnc => self.dfnc.as_ref(),
            Stream::Msde => self.msde.as_ref(),
        }
    }

    /// Encoder input for a stream as a `positions x channels` sequence.
    /// MsDE is transposed so that its positions are components.
    pub fn stream_input(&self, s: Stream) -> Option<(Shape, Vec<f64>)> {
        let m = self.matrix(s)?;
        let m = if s == Stream::Msde { m.transpose() } else { m.clone() };
        Some((Shape::seq(m.rows, m.cols), m.data))
    }
}

pub fn extract_all(tc: &TimeCourses, params: &FeatureParams, streams: StreamFlags) -> Result<SubjectFeatures, PipelineError> {
    let wrap = |source| PipelineError::Feature { subject: tc.subject_id.clone(), source };
    let mut warnings = Vec::new();
    let dfnc_m = if streams.dfnc {
        let d = dfnc(tc, params.window, params.step).map_err(wrap)?;
        warnings = d.warnings.iter().map(|w| (w.window, w.i, w.j)).collect();
        Some(d.data)
    } else {
        None
    };
    Ok(SubjectFeatures {
        tc: streams.tc.then(|| tc.zscored()),
        fnc: if streams.fnc { Some(fnc(tc).map_err(wrap)?.0) } else { None },
        dfnc: dfnc_m,
        msde: if streams.msde { Some(msde(tc, &params.msde).map_err(wrap)?.data) } else { None },
        provenance: Provenance {
            subject_id: tc.subject_id.clone(),
            time_points: tc.time_points(),
            components: tc.components(),
            params: params.clone(),
            streams,
            dfnc_warnings: warnings,
        },
    })
}
