//! Segmentation and scene-flow scoring, and median scale alignment.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::field::{DenseField, FieldKind, Mask};
use crate::stats::median;
use crate::{Error, Result};

/// Minimum IoU for a predicted instance to match a ground-truth instance.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub bg_iou: f64,
    pub obj_fmeasure: f64,
    pub precision: f64,
    pub recall: f64,
    pub n_pred: usize,
    pub n_gt: usize,
    pub n_matched: usize,
}

/// Background IoU and instance F-measure over pixels valid in both label maps.
/// Instances are matched greedily by decreasing IoU, requiring IoU ≥ 0.5.
pub fn score_segmentation(pred: &DenseField, gt: &DenseField) -> Result<SegScores> {
    pred.ensure_same_dims(gt, "predicted vs ground-truth labels")?;
    let mut bg_inter = 0usize;
    let mut bg_union = 0usize;
    let mut area_pred: BTreeMap<u32, usize> = BTreeMap::new();
    let mut area_gt: BTreeMap<u32, usize> = BTreeMap::new();
    let mut inter: BTreeMap<(u32, u32), usize> = BTreeMap::new();
    for i in 0..pred.len() {
        let (Some(p), Some(g)) = (pred.label(i), gt.label(i)) else { continue };
        if p == 0 || g == 0 {
            bg_union += 1;
            if p == 0 && g == 0 {
                bg_inter += 1;
            }
        }
        if p > 0 {
            *area_pred.entry(p).or_default() += 1;
        }
        if g > 0 {
            *area_gt.entry(g).or_default() += 1;
        }
        if p > 0 && g > 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }
    let bg_iou = if bg_union == 0 { 1.0 } else { bg_inter as f64 / bg_union as f64 };

    let mut pairs: Vec<(f64, u32, u32)> = inter
        .iter()
        .map(|(&(p, g), &n)| (n as f64 / (area_pred[&p] + area_gt[&g] - n) as f64, p, g))
        .filter(|(iou, _, _)| *iou >= MATCH_IOU)
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = std::collections::BTreeSet::new();
    let mut used_g = std::collections::BTreeSet::new();
    for (_, p, g) in pairs {
        if !used_p.contains(&p) && !used_g.contains(&g) {
            used_p.insert(p);
            used_g.insert(g);
        }
    }
    let (n_pred, n_gt, n_matched) = (area_pred.len(), area_gt.len(), used_p.len());
    let (precision, recall, f) = if n_pred == 0 && n_gt == 0 {
        (1.0, 1.0, 1.0)
    } else {
        let p = if n_pred == 0 { 0.0 } else { n_matched as f64 / n_pred as f64 };
        let r = if n_gt == 0 { 0.0 } else { n_matched as f64 / n_gt as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    };
    Ok(SegScores {
        bg_iou,
        obj_fmeasure: f,
        precision,
        recall,
        n_pred,
        n_gt,
        n_matched,
    })
}

/// Error rates (percent) over one pixel subset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    pub d1: f64,
    pub d2: f64,
    pub fl: f64,
    pub sf: f64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowScores {
    pub all: ErrorRates,
    pub fg: Option<ErrorRates>,
    pub bg: Option<ErrorRates>,
}

/// Predicted and ground-truth fields for [`score_flow`].
#[derive(Debug, Clone, Copy)]
pub struct FlowEvalInputs<'a> {
    pub pred_flow: &'a DenseField,
    pub gt_flow: &'a DenseField,
    pub pred_z0: &'a DenseField,
    pub pred_z1: &'a DenseField,
    pub gt_z0: &'a DenseField,
    pub gt_z1: &'a DenseField,
    /// `baseline · fx`; disparity is this constant divided by depth.
    pub disparity_factor: f64,
}

/// Outlier rule: error above 3 px and above 5% of the true magnitude.
pub fn is_outlier(error: f64, magnitude: f64) -> bool {
    !(error <= 3.0 || error <= 0.05 * magnitude)
}

#[derive(Default)]
struct Counts {
    d1: usize,
    d2: usize,
    fl: usize,
    sf: usize,
    n: usize,
}

impl Counts {
    fn rates(&self) -> ErrorRates {
        let pct = |k: usize| 100.0 * k as f64 / self.n as f64;
        ErrorRates { d1: pct(self.d1), d2: pct(self.d2), fl: pct(self.fl), sf: pct(self.sf), n_valid: self.n }
    }
}

/// D1/D2/Fl/SF outlier percentages over pixels with valid ground truth.
/// Non-finite predictions count as outliers. `fg` splits into foreground
/// (true) and background pixels.
pub fn score_flow(inputs: &FlowEvalInputs<'_>, fg: Option<&Mask>) -> Result<FlowScores> {
    let FlowEvalInputs { pred_flow, gt_flow, pred_z0, pred_z1, gt_z0, gt_z1, disparity_factor } = *inputs;
    for (f, what) in [
        (pred_flow, "predicted flow"),
        (pred_z0, "predicted Z0"),
        (pred_z1, "predicted Z1"),
        (gt_z0, "ground-truth Z0"),
        (gt_z1, "ground-truth Z1"),
    ] {
        gt_flow.ensure_same_dims(f, what)?;
    }
    if let Some(m) = fg {
        if m.dims() != gt_flow.dims() {
            return Err(Error::DimensionMismatch("foreground mask vs flow".into()));
        }
    }
    let disparity = |z: f64| disparity_factor / z;
    let mut all = Counts::default();
    let mut fg_c = Counts::default();
    let mut bg_c = Counts::default();
    for i in 0..gt_flow.len() {
        let (gz0, gz1) = (gt_z0.value(i), gt_z1.value(i));
        if !gt_flow.is_valid_at(i) || !(gz0 > 0.0) || !(gz1 > 0.0) || !gz0.is_finite() || !gz1.is_finite() {
            continue;
        }
        let disp_outlier = |pz: f64, gz: f64| {
            let (pd, gd) = (disparity(pz), disparity(gz));
            !pd.is_finite() || is_outlier((pd - gd).abs(), gd.abs())
        };
        let d1 = disp_outlier(pred_z0.value(i), gz0);
        let d2 = disp_outlier(pred_z1.value(i), gz1);
        let (g, p) = (gt_flow.at(i), pred_flow.at(i));
        let err = (p[0] - g[0]).hypot(p[1] - g[1]);
        let fl = !err.is_finite() || is_outlier(err, g[0].hypot(g[1]));
        let sf = d1 || d2 || fl;
        let bucket = |c: &mut Counts| {
            c.n += 1;
            c.d1 += d1 as usize;
            c.d2 += d2 as usize;
            c.fl += fl as usize;
            c.sf += sf as usize;
        };
        bucket(&mut all);
        if let Some(m) = fg {
            bucket(if m.get(i) { &mut fg_c } else { &mut bg_c });
        }
    }
    if all.n == 0 {
        return Err(Error::InvalidInput("no valid ground-truth pixels".into()));
    }
    let split = |c: &Counts| (c.n > 0).then(|| c.rates());
    Ok(FlowScores {
        all: all.rates(),
        fg: fg.and_then(|_| split(&fg_c)),
        bg: fg.and_then(|_| split(&bg_c)),
    })
}

/// Multiplies `pred` by `median(gt) / median(pred)` over `validity` pixels where
/// both depths are finite and positive.
pub fn median_scale_align(pred: &DenseField, gt: &DenseField, validity: &Mask) -> Result<DenseField> {
    pred.ensure_same_dims(gt, "predicted vs ground-truth depth")?;
    if validity.dims() != pred.dims() {
        return Err(Error::DimensionMismatch("validity mask vs depth".into()));
    }
    let ok = |v: f64| v > 0.0 && v.is_finite();
    let idx: Vec<usize> = (0..pred.len())
        .filter(|&i| validity.get(i) && ok(pred.value(i)) && ok(gt.value(i)))
        .collect();
    if idx.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mp = median(&idx.iter().map(|&i| pred.value(i)).collect::<Vec<_>>()).expect("non-empty");
    let mg = median(&idx.iter().map(|&i| gt.value(i)).collect::<Vec<_>>()).expect("non-empty");
    if mp == 0.0 {
        return Err(Error::InvalidInput("median of prediction is zero".into()));
    }
    let factor = mg / mp;
    Ok(pred.map(FieldKind::Depth, |v| v * factor))
}
