//! Threshold segmentation of cost maps, connected-component instances and the
//! 36-ray polar instance representation.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::field::{DenseField, FieldKind, Mask, LABEL_INVALID};
use crate::geometry::{Pixel, RigidTransform};
use crate::{Error, Result};

/// Per-cost thresholds and the minimum instance size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    /// Squared pixels.
    pub t_epi: f64,
    /// Squared pixels.
    pub t_hom: f64,
    /// Normalized scene-flow units.
    pub t_pp3d: f64,
    /// Log-depth units.
    pub t_depth: f64,
    pub min_instance_area: usize,
    /// Use `c_hom` in place of `c_epi` (set when the egomotion is degenerate).
    pub use_hom_instead_of_epi: bool,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            t_epi: 1.0,
            t_hom: 1.0,
            t_pp3d: 0.05,
            t_depth: 0.15,
            min_instance_area: 50,
            use_hom_instead_of_epi: false,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        let t = [self.t_epi, self.t_hom, self.t_pp3d, self.t_depth];
        if t.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput(format!("thresholds must be positive: {t:?}")));
        }
        if self.min_instance_area < 1 {
            return Err(Error::InvalidInput("min_instance_area must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cost maps fed to [`segment_moving`]; absent maps are ignored.
#[derive(Debug, Clone, Copy, Default)]
pub struct CostSet<'a> {
    pub epi: Option<&'a DenseField>,
    pub hom: Option<&'a DenseField>,
    pub pp3d: Option<&'a DenseField>,
    pub depth: Option<&'a DenseField>,
}

impl<'a> CostSet<'a> {
    pub fn from_maps(maps: &'a crate::costmaps::CostMaps) -> Self {
        Self {
            epi: maps.epi.as_ref(),
            hom: maps.hom.as_ref(),
            pp3d: maps.pp3d.as_ref(),
            depth: maps.depth.as_ref(),
        }
    }

    /// The maps used under `cfg`, paired with their thresholds.
    fn active(&self, cfg: &ThresholdConfig) -> Vec<(&'a DenseField, f64)> {
        let first = if cfg.use_hom_instead_of_epi {
            self.hom.map(|m| (m, cfg.t_hom))
        } else {
            self.epi.map(|m| (m, cfg.t_epi))
        };
        [first, self.pp3d.map(|m| (m, cfg.t_pp3d)), self.depth.map(|m| (m, cfg.t_depth))]
            .into_iter()
            .flatten()
            .collect()
    }
}

/// A pixel moves iff any active cost exceeds its threshold. NaN costs count as
/// no evidence.
pub fn segment_moving(costs: &CostSet<'_>, cfg: &ThresholdConfig) -> Result<Mask> {
    let active = costs.active(cfg);
    let Some((first, _)) = active.first() else {
        return Err(Error::InvalidInput("no cost maps supplied".into()));
    };
    for (m, _) in &active[1..] {
        first.ensure_same_dims(m, "cost maps")?;
    }
    let (w, h) = first.dims();
    let data = (0..w * h).map(|i| active.iter().any(|(m, t)| m.value(i) > *t)).collect();
    Mask::from_data(w, h, data)
}

/// 4-connected components of `moving`. Components smaller than `min_area` become
/// background (0); the rest get ids `1..=N` in raster order of their first pixel.
pub fn connected_components(moving: &Mask, min_area: usize) -> DenseField {
    let (w, h) = moving.dims();
    let mut labels = vec![0.0; w * h];
    let mut seen = vec![false; w * h];
    let mut next_id = 1u32;
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if !moving.get(start) || seen[start] {
            continue;
        }
        members.clear();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (r, c) = (i / w, i % w);
            let mut visit = |j: usize| {
                if moving.get(j) && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            };
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < w {
                visit(i + 1);
            }
            if r > 0 {
                visit(i - w);
            }
            if r + 1 < h {
                visit(i + w);
            }
        }
        if members.len() >= min_area {
            for &i in &members {
                labels[i] = next_id as f64;
            }
            next_id += 1;
        }
    }
    DenseField::from_data(w, h, FieldKind::Label, labels).expect("sizes match")
}

/// Summary of one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceInfo {
    pub id: u32,
    pub area: usize,
    pub centroid: Pixel,
    pub transform: Option<RigidTransform>,
    pub scale: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub background: Mask,
    /// 0 = background, `1..=N` instances, [`LABEL_INVALID`] where inputs were invalid.
    pub labels: DenseField,
    pub instances: Vec<InstanceInfo>,
}

/// Thresholds the costs, labels instances and marks pixels outside
/// `input_valid` with the invalid sentinel.
pub fn segment_scene(costs: &CostSet<'_>, cfg: &ThresholdConfig, input_valid: &Mask) -> Result<SegmentationResult> {
    cfg.validate()?;
    let mut moving = segment_moving(costs, cfg)?;
    if moving.dims() != input_valid.dims() {
        return Err(Error::DimensionMismatch("validity mask vs cost maps".into()));
    }
    moving = moving.and(input_valid);
    let mut labels = connected_components(&moving, cfg.min_instance_area);
    for i in 0..labels.len() {
        if !input_valid.get(i) {
            labels.at_mut(i)[0] = LABEL_INVALID as f64;
        }
    }
    let (w, h) = labels.dims();
    let background = Mask::from_data(w, h, (0..w * h).map(|i| labels.label(i) == Some(0)).collect())?;
    let instances = instance_summaries(&labels);
    Ok(SegmentationResult { background, labels, instances })
}

/// Area and centroid of every positive label id, in id order.
pub fn instance_summaries(labels: &DenseField) -> Vec<InstanceInfo> {
    let mut acc: std::collections::BTreeMap<u32, (usize, f64, f64)> = Default::default();
    for i in 0..labels.len() {
        if let Some(id) = labels.label(i).filter(|&id| id > 0) {
            let p = labels.pixel_center(i);
            let e = acc.entry(id).or_insert((0, 0.0, 0.0));
            e.0 += 1;
            e.1 += p.u;
            e.2 += p.v;
        }
    }
    acc.into_iter()
        .map(|(id, (n, su, sv))| InstanceInfo {
            id,
            area: n,
            centroid: Pixel::new(su / n as f64, sv / n as f64),
            transform: None,
            scale: None,
            valid: true,
        })
        .collect()
}

/// Number of rays of a [`PolarMask`].
pub const POLAR_RAYS: usize = 36;

/// Star-convex mask: a centre and the extent along 36 evenly spaced rays
/// (angle `2πk/36`, measured from +u towards +v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarMask {
    pub center: Pixel,
    pub radii: Vec<f64>,
}

fn ray_direction(k: usize) -> (f64, f64) {
    let a = TAU * k as f64 / POLAR_RAYS as f64;
    (a.cos(), a.sin())
}

/// Centroid of the mask's pixel centres, and per ray the projected distance of
/// the farthest mask pixel whose square the ray crosses.
pub fn polar_encode(mask: &Mask) -> Result<PolarMask> {
    let (w, _) = mask.dims();
    let pts: Vec<Pixel> = (0..mask.data().len())
        .filter(|&i| mask.get(i))
        .map(|i| Pixel::center(i / w, i % w))
        .collect();
    if pts.is_empty() {
        return Err(Error::EmptyMask);
    }
    let n = pts.len() as f64;
    let center = Pixel::new(pts.iter().map(|p| p.u).sum::<f64>() / n, pts.iter().map(|p| p.v).sum::<f64>() / n);
    let radii = (0..POLAR_RAYS)
        .map(|k| {
            let (cx, cy) = ray_direction(k);
            // half-width of a pixel square measured across the ray
            let reach = 0.5 * (cx.abs() + cy.abs());
            pts.iter()
                .filter_map(|p| {
                    let (du, dv) = (p.u - center.u, p.v - center.v);
                    let along = du * cx + dv * cy;
                    let across = (du * cy - dv * cx).abs();
                    (along >= 0.0 && across <= reach).then_some(along)
                })
                .fold(0.0f64, f64::max)
        })
        .collect();
    Ok(PolarMask { center, radii })
}

/// Radial slack, in pixels, of [`polar_decode`]. The radii reach boundary pixel
/// centres, so the polygon edges cut through boundary pixels.
pub const DECODE_MARGIN: f64 = 0.5;

/// Rasterizes the 36-gon: a pixel is set when its centre lies within
/// [`DECODE_MARGIN`] of the polygon along the ray from the centre, which keeps the
/// result star-convex. All-zero radii give an empty mask.
pub fn polar_decode(pm: &PolarMask, width: usize, height: usize) -> Result<Mask> {
    if pm.radii.len() != POLAR_RAYS || pm.radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
        return Err(Error::InvalidInput("polar mask needs 36 finite non-negative radii".into()));
    }
    let c = pm.center;
    if !(c.u >= 0.0 && c.u <= width as f64 && c.v >= 0.0 && c.v <= height as f64) {
        return Err(Error::InvalidInput(format!("polar centre ({}, {}) outside image", c.u, c.v)));
    }
    if pm.radii.iter().all(|&r| r == 0.0) {
        return Ok(Mask::new(width, height, false));
    }
    let vertex = |k: usize| {
        let (dx, dy) = ray_direction(k % POLAR_RAYS);
        let r = pm.radii[k % POLAR_RAYS];
        (r * dx, r * dy)
    };
    let sector = TAU / POLAR_RAYS as f64;
    Ok(Mask::from_fn(width, height, |row, col| {
        let p = Pixel::center(row, col);
        let (x, y) = (p.u - c.u, p.v - c.v);
        if x == 0.0 && y == 0.0 {
            return true;
        }
        let angle = y.atan2(x).rem_euclid(TAU);
        let k = ((angle / sector).floor() as usize).min(POLAR_RAYS - 1);
        let (ax, ay) = vertex(k);
        let (bx, by) = vertex(k + 1);
        // polygon boundary along the direction of p: ray ∩ edge a→b
        let (ex, ey) = (bx - ax, by - ay);
        let dist = x.hypot(y);
        let (ux, uy) = (x / dist, y / dist);
        let den = ux * ey - uy * ex;
        let boundary = if den.abs() < 1e-15 { ax.hypot(ay).max(bx.hypot(by)) } else { (ax * ey - ay * ex) / den };
        dist <= boundary + DECODE_MARGIN
    }))
}

/// Pixels where the background map and the instance labels disagree become
/// invalid: an instance pixel claimed by the background, or a background-labelled
/// pixel the background map rejects.
pub fn resolve_stream_conflicts(background: &Mask, labels: &DenseField) -> Result<DenseField> {
    if background.dims() != labels.dims() {
        return Err(Error::DimensionMismatch("background mask vs labels".into()));
    }
    let mut out = labels.clone();
    for i in 0..labels.len() {
        let conflict = match labels.label(i) {
            Some(0) => !background.get(i),
            Some(_) => background.get(i),
            None => false,
        };
        if conflict {
            out.at_mut(i)[0] = LABEL_INVALID as f64;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn squares() -> Mask {
        Mask::from_fn(40, 20, |r, c| (2..12).contains(&r) && ((2..12).contains(&c) || (20..30).contains(&c)))
    }

    #[test]
    fn zero_costs_are_static() {
        let z = DenseField::zeros(5, 4, FieldKind::Cost);
        let costs = CostSet { epi: Some(&z), pp3d: Some(&z), depth: Some(&z), hom: None };
        assert_eq!(segment_moving(&costs, &ThresholdConfig::default()).unwrap().count(), 0);
    }

    #[test]
    fn nan_costs_are_static() {
        let z = DenseField::filled(5, 4, FieldKind::Cost, f64::NAN);
        let costs = CostSet { epi: Some(&z), ..Default::default() };
        assert_eq!(segment_moving(&costs, &ThresholdConfig::default()).unwrap().count(), 0);
    }

    #[test]
    fn hom_replaces_epi_when_degenerate() {
        let hi = DenseField::filled(3, 3, FieldKind::Cost, 10.0);
        let lo = DenseField::zeros(3, 3, FieldKind::Cost);
        let costs = CostSet { epi: Some(&lo), hom: Some(&hi), ..Default::default() };
        let cfg = ThresholdConfig::default();
        assert_eq!(segment_moving(&costs, &cfg).unwrap().count(), 0);
        let cfg = ThresholdConfig { use_hom_instead_of_epi: true, ..cfg };
        assert_eq!(segment_moving(&costs, &cfg).unwrap().count(), 9);
    }

    #[test]
    fn mismatched_maps_error() {
        let a = DenseField::zeros(3, 3, FieldKind::Cost);
        let b = DenseField::zeros(4, 3, FieldKind::Cost);
        let costs = CostSet { epi: Some(&a), pp3d: Some(&b), ..Default::default() };
        assert!(segment_moving(&costs, &ThresholdConfig::default()).is_err());
    }

    #[test]
    fn two_squares_get_two_labels() {
        let labels = connected_components(&squares(), 50);
        let info = instance_summaries(&labels);
        assert_eq!(info.iter().map(|i| (i.id, i.area)).collect::<Vec<_>>(), vec![(1, 100), (2, 100)]);
        let labels = connected_components(&squares(), 101);
        assert!(labels.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_pixels_are_not_connected() {
        let m = Mask::from_fn(2, 2, |r, c| r == c);
        let labels = connected_components(&m, 1);
        assert_eq!(labels.data(), &[1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn invalid_pixels_get_sentinel() {
        let cost = DenseField::from_fn(40, 20, FieldKind::Cost, |r, c| [if squares().at(r, c) { 5.0 } else { 0.0 }]);
        let valid = Mask::from_fn(40, 20, |r, _| r != 0);
        let seg = segment_scene(&CostSet { epi: Some(&cost), ..Default::default() }, &ThresholdConfig::default(), &valid).unwrap();
        let invalid = (0..seg.labels.len()).filter(|&i| seg.labels.label(i).is_none()).count();
        assert_eq!(invalid, 40);
        let inst: usize = seg.instances.iter().map(|i| i.area).sum();
        assert_eq!(inst + seg.background.count() + invalid, 800);
    }

    #[test]
    fn disk_radii() {
        let r = 12.0;
        let m = Mask::from_fn(60, 60, |row, col| {
            let p = Pixel::center(row, col);
            (p.u - 30.0).hypot(p.v - 30.0) <= r
        });
        let pm = polar_encode(&m).unwrap();
        assert!(pm.radii.iter().all(|&x| (x - r).abs() <= 1.0), "{:?}", pm.radii);
        let back = polar_decode(&pm, 60, 60).unwrap();
        assert!(m.iou(&back) >= 0.95);
    }

    #[test]
    fn single_pixel_and_empty() {
        let mut m = Mask::new(10, 10, false);
        m.set(34, true);
        let pm = polar_encode(&m).unwrap();
        assert!(pm.radii.iter().all(|&x| x == 0.0));
        assert!(polar_decode(&pm, 10, 10).unwrap().count() <= 1);
        assert!(matches!(polar_encode(&Mask::new(3, 3, false)), Err(Error::EmptyMask)));
        let bad = PolarMask { center: Pixel::new(20.0, 1.0), radii: vec![1.0; 36] };
        assert!(polar_decode(&bad, 10, 10).is_err());
    }

    proptest! {
        #[test]
        fn convex_round_trip(cx in 20.0..44.0f64, cy in 20.0..44.0f64, a in 6.0..18.0f64, b in 6.0..18.0f64, rot in 0.0..3.14f64) {
            let (s, c) = rot.sin_cos();
            let m = Mask::from_fn(64, 64, |row, col| {
                let p = Pixel::center(row, col);
                let (x, y) = (p.u - cx, p.v - cy);
                let (u, v) = (c * x + s * y, -s * x + c * y);
                (u / a).powi(2) + (v / b).powi(2) <= 1.0
            });
            prop_assume!(m.count() > 0);
            let back = polar_decode(&polar_encode(&m).unwrap(), 64, 64).unwrap();
            prop_assert!(m.iou(&back) >= 0.95, "iou {}", m.iou(&back));
        }

        #[test]
        fn raising_thresholds_shrinks_mask(scale in 1.0..10.0f64, seed in 0u64..1000) {
            let cost = DenseField::from_fn(16, 16, FieldKind::Cost, |r, c| {
                [((r * 31 + c * 17 + seed as usize) % 23) as f64 / 10.0]
            });
            let lo = ThresholdConfig::default();
            let hi = ThresholdConfig { t_epi: lo.t_epi * scale, ..lo };
            let set = CostSet { epi: Some(&cost), ..Default::default() };
            let a = segment_moving(&set, &lo).unwrap();
            let b = segment_moving(&set, &hi).unwrap();
            prop_assert_eq!(b.and(&a), b);
        }
    }

    #[test]
    fn decoded_masks_are_star_convex() {
        let pm = PolarMask {
            center: Pixel::new(20.0, 20.0),
            radii: (0..36).map(|k| 5.0 + 4.0 * ((k as f64) * 0.7).sin().abs()).collect(),
        };
        let m = polar_decode(&pm, 40, 40).unwrap();
        // every set pixel's segment to the centre stays inside the mask
        for row in 0..40 {
            for col in 0..40 {
                if !m.at(row, col) {
                    continue;
                }
                let p = Pixel::center(row, col);
                for s in 1..10 {
                    let t = s as f64 / 10.0;
                    let q = Pixel::new(20.0 + t * (p.u - 20.0), 20.0 + t * (p.v - 20.0));
                    let (r, c) = (q.v.floor() as usize, q.u.floor() as usize);
                    let centre = Pixel::center(r, c);
                    if (centre.u - q.u).abs() < 1e-9 && (centre.v - q.v).abs() < 1e-9 {
                        assert!(m.at(r, c));
                    }
                }
            }
        }
    }

    #[test]
    fn stream_conflicts() {
        let labels = DenseField::from_data(4, 1, FieldKind::Label, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let bg = Mask::from_data(4, 1, vec![true, false, false, true]).unwrap();
        assert_eq!(resolve_stream_conflicts(&bg, &labels).unwrap(), labels);
        let bg = Mask::from_data(4, 1, vec![true, true, false, false]).unwrap();
        let out = resolve_stream_conflicts(&bg, &labels).unwrap();
        assert_eq!(out.data(), &[0.0, 65535.0, 1.0, 65535.0]);
    }
}
