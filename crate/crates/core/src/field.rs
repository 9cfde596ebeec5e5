//! Dense per-pixel rasters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Pixel;
use crate::{Error, Result};

/// Label value marking a pixel with no usable label.
pub const LABEL_INVALID: u32 = 65535;

/// What a [`DenseField`] carries. Determines the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// 2 channels `(du, dv)` in pixels.
    Flow,
    /// Optical expansion τ = Z1/Z0.
    Expansion,
    Depth,
    /// Values in `[0, 1]`.
    Confidence,
    /// Non-negative cost; NaN marks invalid pixels.
    Cost,
    /// 3 channels, depth-normalized units.
    SceneFlow,
    /// 3 channels, scene units.
    Points,
    /// Integer ids stored as floats; [`LABEL_INVALID`] is the sentinel.
    Label,
}

impl FieldKind {
    pub fn channels(self) -> usize {
        match self {
            FieldKind::Flow => 2,
            FieldKind::SceneFlow | FieldKind::Points => 3,
            _ => 1,
        }
    }
}

/// Row-major `width × height × channels` raster of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseField {
    width: usize,
    height: usize,
    kind: FieldKind,
    data: Vec<f64>,
}

impl DenseField {
    pub fn filled(width: usize, height: usize, kind: FieldKind, value: f64) -> Self {
        Self {
            width,
            height,
            kind,
            data: vec![value; width * height * kind.channels()],
        }
    }

    pub fn zeros(width: usize, height: usize, kind: FieldKind) -> Self {
        Self::filled(width, height, kind, 0.0)
    }

    pub fn invalid(width: usize, height: usize, kind: FieldKind) -> Self {
        let fill = if kind == FieldKind::Label { LABEL_INVALID as f64 } else { f64::NAN };
        Self::filled(width, height, kind, fill)
    }

    pub fn from_data(width: usize, height: usize, kind: FieldKind, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * kind.channels();
        if data.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{kind:?} field {width}x{height} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { width, height, kind, data })
    }

    /// Builds a field by evaluating `f(row, col)` at each pixel; `f` returns all channels.
    pub fn from_fn<const C: usize>(
        width: usize,
        height: usize,
        kind: FieldKind,
        mut f: impl FnMut(usize, usize) -> [f64; C],
    ) -> Self {
        assert_eq!(C, kind.channels(), "channel count does not match {kind:?}");
        let mut data = Vec::with_capacity(width * height * C);
        for row in 0..height {
            for col in 0..width {
                data.extend_from_slice(&f(row, col));
            }
        }
        Self { width, height, kind, data }
    }

    /// Row-parallel counterpart of [`DenseField::from_fn`]; `f` receives the linear
    /// pixel index. Output does not depend on the thread count.
    pub fn par_from_index_fn<const C: usize>(
        width: usize,
        height: usize,
        kind: FieldKind,
        f: impl Fn(usize) -> [f64; C] + Sync,
    ) -> Self {
        assert_eq!(C, kind.channels(), "channel count does not match {kind:?}");
        let mut data = vec![0.0; width * height * C];
        if width > 0 {
            data.par_chunks_mut(width * C).enumerate().for_each(|(row, out)| {
                for col in 0..width {
                    out[col * C..(col + 1) * C].copy_from_slice(&f(row * width + col));
                }
            });
        }
        Self { width, height, kind, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn channels(&self) -> usize {
        self.kind.channels()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Channels of the pixel with linear index `idx = row * width + col`.
    pub fn at(&self, idx: usize) -> &[f64] {
        let c = self.channels();
        &self.data[idx * c..(idx + 1) * c]
    }

    pub fn at_mut(&mut self, idx: usize) -> &mut [f64] {
        let c = self.channels();
        &mut self.data[idx * c..(idx + 1) * c]
    }

    pub fn get(&self, row: usize, col: usize) -> &[f64] {
        self.at(row * self.width + col)
    }

    /// First channel at `idx`.
    pub fn value(&self, idx: usize) -> f64 {
        self.data[idx * self.channels()]
    }

    /// Flow target `p0 + flow(p0)` for a flow field.
    pub fn flow_target(&self, idx: usize) -> Pixel {
        let p0 = self.pixel_center(idx);
        let f = self.at(idx);
        Pixel::new(p0.u + f[0], p0.v + f[1])
    }

    pub fn pixel_center(&self, idx: usize) -> Pixel {
        Pixel::center(idx / self.width, idx % self.width)
    }

    pub fn is_valid_at(&self, idx: usize) -> bool {
        if self.kind == FieldKind::Label {
            return self.value(idx) != LABEL_INVALID as f64;
        }
        self.at(idx).iter().all(|v| v.is_finite())
    }

    /// Label id at `idx`, or `None` for the invalid sentinel.
    pub fn label(&self, idx: usize) -> Option<u32> {
        let v = self.value(idx);
        if v == LABEL_INVALID as f64 || !v.is_finite() {
            None
        } else {
            Some(v as u32)
        }
    }

    pub fn same_dims(&self, other: &DenseField) -> bool {
        self.dims() == other.dims()
    }

    pub fn ensure_same_dims(&self, other: &DenseField, what: &str) -> Result<()> {
        if self.same_dims(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Maps every sample through `f`, keeping dimensions and kind.
    pub fn map(&self, kind: FieldKind, f: impl Fn(f64) -> f64) -> DenseField {
        assert_eq!(kind.channels(), self.channels());
        DenseField {
            width: self.width,
            height: self.height,
            kind,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Checks the per-kind value invariants (non-negative cost, τ > 0, confidence in
    /// `[0, 1]`), ignoring NaN samples.
    pub fn check_invariants(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(format!("{:?} field: {msg}", self.kind)));
        let finite = self.data.iter().copied().filter(|v| !v.is_nan());
        match self.kind {
            FieldKind::Expansion => {
                if finite.clone().any(|v| v <= 0.0) {
                    return bad("expansion must be positive");
                }
            }
            FieldKind::Confidence => {
                if finite.clone().any(|v| !(0.0..=1.0).contains(&v)) {
                    return bad("confidence must lie in [0, 1]");
                }
            }
            FieldKind::Cost => {
                if finite.clone().any(|v| v < 0.0 || v.is_infinite()) {
                    return bad("cost must be finite and non-negative");
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Binary raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "mask {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, idx: usize) -> bool {
        self.data[idx]
    }

    pub fn at(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, idx: usize, value: bool) {
        self.data[idx] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a && b)
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.zip(other, |a, b| a || b)
    }

    fn zip(&self, other: &Mask, f: impl Fn(bool, bool) -> bool) -> Mask {
        assert_eq!(self.dims(), other.dims(), "mask dimensions differ");
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Intersection over union; 1 when both masks are empty.
    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.and(other).count();
        let union = self.or(other).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Pixels where `field` is valid (all channels finite / label not sentinel).
    pub fn valid_of(field: &DenseField) -> Mask {
        Mask {
            width: field.width(),
            height: field.height(),
            data: (0..field.len()).map(|i| field.is_valid_at(i)).collect(),
        }
    }

    /// Pixels of `labels` equal to `id`.
    pub fn from_label(labels: &DenseField, id: u32) -> Mask {
        Mask {
            width: labels.width(),
            height: labels.height(),
            data: (0..labels.len()).map(|i| labels.label(i) == Some(id)).collect(),
        }
    }
}
