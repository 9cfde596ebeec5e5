//! Serialized reports. Field order is fixed by the struct definitions so that
//! reruns produce identical bytes.

use std::path::Path;

use nalgebra::Matrix3;
use rigidkit_core::evalkit::{ErrorRates, FlowScores};
use rigidkit_core::rigidfit::RigidBodyFit;
use rigidkit_core::segment::InstanceInfo;
use rigidkit_core::RigidTransform;
use serde::Serialize;

use crate::pipeline::{EgoRun, Scores};
use crate::{CliError, CliResult};

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

#[derive(Debug, Clone, Serialize)]
pub struct TransformReport {
    /// Row-major rotation.
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformReport {
    fn from(t: &RigidTransform) -> Self {
        Self { rotation: rows(&t.rotation), translation: t.translation.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EgoReport {
    /// Camera motion with `P0 = R·P1 + T`; `T` has unit length unless degenerate.
    pub camera_motion: TransformReport,
    pub degenerate: bool,
    pub n_correspondences: usize,
    pub n_inliers: usize,
    pub residual_median: f64,
    pub gamma: Option<f64>,
    pub cost_maps: Vec<String>,
}

impl EgoReport {
    pub fn new(ego: &EgoRun, gamma: Option<f64>, cost_maps: Vec<String>) -> Self {
        let e = &ego.estimate;
        Self {
            camera_motion: (&e.transform).into(),
            degenerate: e.degenerate,
            n_correspondences: ego.n_correspondences,
            n_inliers: e.n_inliers(),
            residual_median: e.residual_median,
            gamma,
            cost_maps,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceReport {
    pub id: u32,
    pub area: usize,
    pub centroid: [f64; 2],
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentationReport {
    pub n_background: usize,
    pub n_invalid: usize,
    pub instances: Vec<InstanceReport>,
}

impl SegmentationReport {
    pub fn new(n_background: usize, n_invalid: usize, instances: &[InstanceInfo]) -> Self {
        Self {
            n_background,
            n_invalid,
            instances: instances
                .iter()
                .map(|i| InstanceReport { id: i.id, area: i.area, centroid: [i.centroid.u, i.centroid.v] })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub id: u32,
    /// Frame-0 to frame-1 motion, `P1 = R·P0 + T`.
    pub transform: TransformReport,
    pub scale: f64,
    pub n_inliers: usize,
    pub mean_parallax: f64,
    pub valid_fraction: f64,
    pub updated: bool,
    pub rms_reprojection: Option<f64>,
    pub pnp_warning: bool,
    pub failure: Option<String>,
}

impl From<&RigidBodyFit> for FitReport {
    fn from(f: &RigidBodyFit) -> Self {
        Self {
            id: f.id,
            transform: (&f.transform).into(),
            scale: f.scale,
            n_inliers: f.n_inliers,
            mean_parallax: f.mean_parallax,
            valid_fraction: f.valid_fraction,
            updated: f.updated,
            rms_reprojection: f.rms_reprojection,
            pnp_warning: f.pnp_warning,
            failure: f.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneFlowReport {
    pub segments: Vec<FitReport>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::stage("report", e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub const CSV_HEADER: &str = "bg_iou,obj_fmeasure,precision,recall,n_pred,n_gt,n_matched,\
d1_all,d2_all,fl_all,sf_all,n_all,d1_fg,d2_fg,fl_fg,sf_fg,d1_bg,d2_bg,fl_bg,sf_bg";

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn rate_cells(r: Option<&ErrorRates>, out: &mut Vec<String>) {
    for v in [r.map(|r| r.d1), r.map(|r| r.d2), r.map(|r| r.fl), r.map(|r| r.sf)] {
        out.push(cell(v));
    }
}

/// One CSV row matching [`CSV_HEADER`]; absent scores are empty cells.
pub fn csv_row(scores: &Scores) -> String {
    let s = scores.segmentation.as_ref();
    let mut out = vec![
        cell(s.map(|s| s.bg_iou)),
        cell(s.map(|s| s.obj_fmeasure)),
        cell(s.map(|s| s.precision)),
        cell(s.map(|s| s.recall)),
        cell(s.map(|s| s.n_pred)),
        cell(s.map(|s| s.n_gt)),
        cell(s.map(|s| s.n_matched)),
    ];
    let f: Option<&FlowScores> = scores.flow.as_ref();
    rate_cells(f.map(|f| &f.all), &mut out);
    out.push(cell(f.map(|f| f.all.n_valid)));
    rate_cells(f.and_then(|f| f.fg.as_ref()), &mut out);
    rate_cells(f.and_then(|f| f.bg.as_ref()), &mut out);
    out.join(",")
}
