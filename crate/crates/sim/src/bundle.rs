//! On-disk layout of a rendered scene.
//!
//! A bundle directory holds the ground truth (`flow.flo`, `expansion.pfm`,
//! `z0.pfm`, `z1.pfm`, `confidence.pfm`, `labels.pgm`, `k0.json`, `k1.json`),
//! the corrupted observations when the noise model is not the identity
//! (`input_*.{flo,pfm}`), and `manifest.json` listing all of them together with
//! the camera and body motions.

use std::fs;
use std::path::Path;

use rigidkit_core::{io, CameraIntrinsics, DenseField, FieldKind, Mask, RigidTransform};
use serde::{Deserialize, Serialize};

use crate::corrupt::{CorruptedInputs, CONFIDENCE_INLIER};
use crate::render::{BodyTruth, GroundTruth};
use crate::scene::NoiseConfig;
use crate::{Result, SimError};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub role: String,
    pub path: String,
}

impl ManifestEntry {
    fn new(role: &str, path: &str) -> Self {
        Self { role: role.into(), path: path.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub files: Vec<ManifestEntry>,
    #[serde(default)]
    pub inputs: Vec<ManifestEntry>,
    pub ego: RigidTransform,
    pub bodies: Vec<BodyTruth>,
    pub noise: NoiseConfig,
}

impl Manifest {
    pub fn file(&self, role: &str) -> Option<&str> {
        self.files.iter().find(|e| e.role == role).map(|e| e.path.as_str())
    }

    pub fn input(&self, role: &str) -> Option<&str> {
        self.inputs.iter().find(|e| e.role == role).map(|e| e.path.as_str())
    }
}

/// Contents of a bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub manifest: Manifest,
    pub k0: CameraIntrinsics,
    pub k1: CameraIntrinsics,
    pub flow: DenseField,
    pub expansion: DenseField,
    pub z0: DenseField,
    pub z1: DenseField,
    pub confidence: DenseField,
    pub labels: DenseField,
    pub inputs: Option<CorruptedInputs>,
}

const GT_FILES: [(&str, &str); 8] = [
    ("flow", "flow.flo"),
    ("expansion", "expansion.pfm"),
    ("z0", "z0.pfm"),
    ("z1", "z1.pfm"),
    ("confidence", "confidence.pfm"),
    ("labels", "labels.pgm"),
    ("k0", "k0.json"),
    ("k1", "k1.json"),
];

const INPUT_FILES: [(&str, &str); 4] = [
    ("flow", "input_flow.flo"),
    ("expansion", "input_expansion.pfm"),
    ("depth_prior", "input_depth_prior.pfm"),
    ("confidence", "input_confidence.pfm"),
];

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn context(file: &str) -> impl Fn(rigidkit_core::Error) -> SimError + '_ {
    move |e| SimError::Bundle(format!("{file}: {e}"))
}

/// Writes ground truth and, when the noise model perturbs anything, the corrupted inputs.
pub fn write_bundle(
    dir: &Path,
    gt: &GroundTruth,
    inputs: Option<&CorruptedInputs>,
    noise: &NoiseConfig,
) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    io::save_flo(dir.join("flow.flo"), &gt.flow).map_err(context("flow.flo"))?;
    io::save_pfm(dir.join("expansion.pfm"), &gt.expansion).map_err(context("expansion.pfm"))?;
    io::save_pfm(dir.join("z0.pfm"), &gt.z0).map_err(context("z0.pfm"))?;
    io::save_pfm(dir.join("z1.pfm"), &gt.z1).map_err(context("z1.pfm"))?;
    io::save_pfm(dir.join("confidence.pfm"), &gt.confidence).map_err(context("confidence.pfm"))?;
    io::save_pgm16(dir.join("labels.pgm"), &gt.labels).map_err(context("labels.pgm"))?;
    write_json(&dir.join("k0.json"), &gt.k0)?;
    write_json(&dir.join("k1.json"), &gt.k1)?;

    let mut input_entries = Vec::new();
    if let Some(inp) = inputs.filter(|_| !noise.is_identity()) {
        io::save_flo(dir.join(INPUT_FILES[0].1), &inp.flow).map_err(context(INPUT_FILES[0].1))?;
        io::save_pfm(dir.join(INPUT_FILES[1].1), &inp.expansion).map_err(context(INPUT_FILES[1].1))?;
        io::save_pfm(dir.join(INPUT_FILES[2].1), &inp.depth_prior).map_err(context(INPUT_FILES[2].1))?;
        io::save_pfm(dir.join(INPUT_FILES[3].1), &inp.confidence).map_err(context(INPUT_FILES[3].1))?;
        input_entries = INPUT_FILES.iter().map(|(r, p)| ManifestEntry::new(r, p)).collect();
    }

    let manifest = Manifest {
        width: gt.width(),
        height: gt.height(),
        files: GT_FILES.iter().map(|(r, p)| ManifestEntry::new(r, p)).collect(),
        inputs: input_entries,
        ego: gt.ego,
        bodies: gt.bodies.clone(),
        noise: *noise,
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn required<'a>(m: &'a Manifest, role: &str) -> Result<&'a str> {
    m.file(role).ok_or_else(|| SimError::Bundle(format!("manifest has no '{role}' entry")))
}

fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = fs::read_to_string(path).map_err(|e| SimError::Bundle(format!("{}: {e}", path.display())))?;
    let k: CameraIntrinsics = serde_json::from_str(&text)?;
    k.validate()?;
    Ok(k)
}

pub fn load_bundle(dir: &Path) -> Result<Bundle> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| SimError::Bundle(format!("{}: {e}", mpath.display())))?;
    let manifest: Manifest = serde_json::from_str(&text)?;

    let p = |role: &str| -> Result<std::path::PathBuf> { Ok(dir.join(required(&manifest, role)?)) };
    let ctx = |role: &'static str| move |e: rigidkit_core::Error| SimError::Bundle(format!("{role}: {e}"));
    let flow = io::load_flo(p("flow")?).map_err(ctx("flow"))?;
    let expansion = io::load_pfm(p("expansion")?, FieldKind::Expansion).map_err(ctx("expansion"))?;
    let z0 = io::load_pfm(p("z0")?, FieldKind::Depth).map_err(ctx("z0"))?;
    let z1 = io::load_pfm(p("z1")?, FieldKind::Depth).map_err(ctx("z1"))?;
    let confidence = io::load_pfm(p("confidence")?, FieldKind::Confidence).map_err(ctx("confidence"))?;
    let labels = io::load_pgm16(p("labels")?).map_err(ctx("labels"))?;
    let k0 = read_intrinsics(&p("k0")?)?;
    let k1 = read_intrinsics(&p("k1")?)?;
    for (name, f) in [("expansion", &expansion), ("z0", &z0), ("z1", &z1), ("confidence", &confidence), ("labels", &labels)] {
        flow.ensure_same_dims(f, name)?;
    }
    if flow.dims() != (manifest.width, manifest.height) {
        return Err(SimError::Bundle("field dimensions disagree with manifest".into()));
    }

    let inputs = if manifest.inputs.is_empty() {
        None
    } else {
        let ip = |role: &str| -> Result<std::path::PathBuf> {
            manifest
                .input(role)
                .map(|f| dir.join(f))
                .ok_or_else(|| SimError::Bundle(format!("manifest has no input '{role}' entry")))
        };
        let iflow = io::load_flo(ip("flow")?).map_err(ctx("input flow"))?;
        let iexp = io::load_pfm(ip("expansion")?, FieldKind::Expansion).map_err(ctx("input expansion"))?;
        let iprior = io::load_pfm(ip("depth_prior")?, FieldKind::Depth).map_err(ctx("input depth prior"))?;
        let iconf = io::load_pfm(ip("confidence")?, FieldKind::Confidence).map_err(ctx("input confidence"))?;
        for (name, f) in [("input expansion", &iexp), ("input depth prior", &iprior), ("input confidence", &iconf)] {
            iflow.ensure_same_dims(f, name)?;
        }
        flow.ensure_same_dims(&iflow, "input flow")?;
        let (w, h) = iconf.dims();
        let outliers = Mask::from_fn(w, h, |r, c| {
            let v = iconf.get(r, c)[0];
            v > 0.0 && v < CONFIDENCE_INLIER - 1e-6
        });
        Some(CorruptedInputs { flow: iflow, expansion: iexp, depth_prior: iprior, confidence: iconf, outliers })
    };

    Ok(Bundle { manifest, k0, k1, flow, expansion, z0, z1, confidence, labels, inputs })
}

impl Bundle {
    /// Observations for the estimation pipeline: the corrupted inputs when
    /// present, otherwise the ground truth itself.
    pub fn observations(&self) -> CorruptedInputs {
        match &self.inputs {
            Some(i) => i.clone(),
            None => CorruptedInputs {
                flow: self.flow.clone(),
                expansion: self.expansion.clone(),
                depth_prior: self.z0.clone(),
                confidence: self.confidence.clone(),
                outliers: Mask::new(self.flow.width(), self.flow.height(), false),
            },
        }
    }

    /// Ground truth as rendered. Occlusion is not stored and reads back as all clear.
    pub fn ground_truth(&self) -> GroundTruth {
        GroundTruth {
            k0: self.k0,
            k1: self.k1,
            flow: self.flow.clone(),
            expansion: self.expansion.clone(),
            z0: self.z0.clone(),
            z1: self.z1.clone(),
            labels: self.labels.clone(),
            confidence: self.confidence.clone(),
            occluded: Mask::new(self.flow.width(), self.flow.height(), false),
            ego: self.manifest.ego,
            bodies: self.manifest.bodies.clone(),
        }
    }

    pub fn transform_of(&self, label: u32) -> Option<RigidTransform> {
        self.ground_truth().transform_of(label)
    }
}
