use std::path::{Path, PathBuf};

use log::info;
use rigidkit_core::costmaps::{compute_cost_maps, CostInputs, CostMaps, MotionContext};
use rigidkit_core::egomotion::{estimate_egomotion_ransac, sample_correspondences, EgomotionEstimate, RansacParams, CONFIDENCE_GATE};
use rigidkit_core::evalkit::{score_flow, score_segmentation, FlowEvalInputs, FlowScores, SegScores};
use rigidkit_core::rigidfit::{assemble_scene_flow, fit_all_segments, refine_pnp_lm, RigidBodyFit, SceneFlowOutput, SegmentInputs};
use rigidkit_core::segment::{segment_scene, CostSet, SegmentationResult, ThresholdConfig};
use rigidkit_core::{io, CameraIntrinsics, DenseField, FieldKind, Mask};
use rigidkit_sim::MANIFEST_FILE;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Sampson distance in normalized image coordinates.
    pub threshold: f64,
    pub confidence: f64,
    pub degeneracy_ratio: f64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        let p = RansacParams::default();
        Self { iterations: p.iterations, threshold: p.threshold, confidence: p.confidence, degeneracy_ratio: p.degeneracy_ratio }
    }
}

/// Tunables shared by all commands; read from `--config`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub thresholds: ThresholdConfig,
    pub ransac: RansacConfig,
    /// Correspondences sampled for egomotion estimation.
    pub max_correspondences: usize,
    /// Refine each updated segment by PnP against the depth prior.
    pub pnp_refine: bool,
    /// `baseline · fx` used to turn depth into disparity when scoring.
    pub disparity_factor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            thresholds: ThresholdConfig::default(),
            ransac: RansacConfig::default(),
            max_correspondences: 4000,
            pnp_refine: false,
            disparity_factor: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.thresholds.validate().map_err(|e| CliError::input(format!("config: {e}")))?;
        let r = &self.ransac;
        if r.iterations == 0 || !(r.threshold > 0.0) || !(r.confidence > 0.0 && r.confidence < 1.0) || !(r.degeneracy_ratio > 0.0) {
            return Err(CliError::input("config: invalid ransac parameters"));
        }
        if self.max_correspondences < 5 {
            return Err(CliError::input("config: max_correspondences must be at least 5"));
        }
        if !(self.disparity_factor > 0.0) || !self.disparity_factor.is_finite() {
            return Err(CliError::input("config: disparity_factor must be positive"));
        }
        Ok(())
    }

    pub fn ransac_params(&self, seed: u64) -> RansacParams {
        RansacParams {
            iterations: self.ransac.iterations,
            threshold: self.ransac.threshold,
            confidence: self.ransac.confidence,
            seed,
            degeneracy_ratio: self.ransac.degeneracy_ratio,
        }
    }
}

/// Dense observations of one frame pair.
#[derive(Debug, Clone)]
pub struct Observations {
    pub flow: DenseField,
    pub expansion: DenseField,
    pub depth_prior: DenseField,
    pub confidence: DenseField,
    pub k0: CameraIntrinsics,
    pub k1: CameraIntrinsics,
}

impl Observations {
    pub fn check(&self) -> CliResult<()> {
        for (f, what) in [(&self.expansion, "expansion"), (&self.depth_prior, "depth prior"), (&self.confidence, "confidence")] {
            self.flow.ensure_same_dims(f, what).map_err(CliError::input)?;
        }
        Ok(())
    }

    /// Pixels with finite flow and confidence above the gate.
    pub fn input_valid(&self) -> Mask {
        let (w, h) = self.flow.dims();
        Mask::from_fn(w, h, |r, c| {
            let i = r * w + c;
            self.flow.is_valid_at(i) && self.confidence.value(i) > CONFIDENCE_GATE
        })
    }
}

/// Where to find each input. Explicit paths win; otherwise the directory is
/// searched, preferring corrupted observations listed in its manifest.
#[derive(Debug, Clone, Default)]
pub struct InputPaths {
    pub dir: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub expansion: Option<PathBuf>,
    pub depth: Option<PathBuf>,
    pub confidence: Option<PathBuf>,
    pub k0: Option<PathBuf>,
    pub k1: Option<PathBuf>,
}

fn manifest_inputs(dir: &Path) -> Vec<(String, String)> {
    let Ok(text) = std::fs::read_to_string(dir.join(MANIFEST_FILE)) else {
        return Vec::new();
    };
    match serde_json::from_str::<rigidkit_sim::Manifest>(&text) {
        Ok(m) => m.inputs.into_iter().map(|e| (e.role, e.path)).collect(),
        Err(_) => Vec::new(),
    }
}

impl InputPaths {
    fn resolve(&self, explicit: &Option<PathBuf>, role: &str, default: &str, listed: &[(String, String)]) -> Option<PathBuf> {
        if let Some(p) = explicit {
            return Some(p.clone());
        }
        let dir = self.dir.as_ref()?;
        let name = listed.iter().find(|(r, _)| r == role).map(|(_, p)| p.as_str()).unwrap_or(default);
        Some(dir.join(name))
    }

    pub fn load(&self) -> CliResult<Observations> {
        let listed = self.dir.as_deref().map(manifest_inputs).unwrap_or_default();
        let need = |p: Option<PathBuf>, what: &str| -> CliResult<PathBuf> {
            let p = p.ok_or_else(|| CliError::input(format!("{what}: no path given")))?;
            if !p.exists() {
                return Err(CliError::input(format!("{what}: {} not found", p.display())));
            }
            Ok(p)
        };
        let read_err = |what: &'static str| move |e: rigidkit_core::Error| CliError::input(format!("{what}: {e}"));

        let flow_p = need(self.resolve(&self.flow, "flow", "flow.flo", &listed), "flow")?;
        let exp_p = need(self.resolve(&self.expansion, "expansion", "expansion.pfm", &listed), "expansion")?;
        let depth_p = need(self.resolve(&self.depth, "depth_prior", "z0.pfm", &listed), "depth prior")?;
        let k0_p = need(self.resolve(&self.k0, "k0", "k0.json", &[]), "k0")?;
        let k1_p = need(self.resolve(&self.k1, "k1", "k1.json", &[]), "k1")?;

        let flow = io::load_flo(&flow_p).map_err(read_err("flow"))?;
        let expansion = io::load_pfm(&exp_p, FieldKind::Expansion).map_err(read_err("expansion"))?;
        let depth_prior = io::load_pfm(&depth_p, FieldKind::Depth).map_err(read_err("depth prior"))?;
        let confidence = match self.resolve(&self.confidence, "confidence", "confidence.pfm", &listed) {
            Some(p) if p.exists() || self.confidence.is_some() => {
                io::load_pfm(&p, FieldKind::Confidence).map_err(read_err("confidence"))?
            }
            _ => {
                let (w, h) = flow.dims();
                DenseField::from_fn(w, h, FieldKind::Confidence, |r, c| [if flow.is_valid_at(r * w + c) { 1.0 } else { 0.0 }])
            }
        };
        let obs = Observations {
            flow,
            expansion,
            depth_prior,
            confidence,
            k0: load_intrinsics(&k0_p, "k0")?,
            k1: load_intrinsics(&k1_p, "k1")?,
        };
        obs.check()?;
        Ok(obs)
    }
}

pub fn load_intrinsics(path: &Path, what: &str) -> CliResult<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{what}: {}: {e}", path.display())))?;
    let k: CameraIntrinsics = serde_json::from_str(&text).map_err(|e| CliError::input(format!("{what}: {e}")))?;
    k.validate().map_err(|e| CliError::input(format!("{what}: {e}")))?;
    Ok(k)
}

/// Egomotion estimate together with the number of correspondences it used.
#[derive(Debug, Clone)]
pub struct EgoRun {
    pub estimate: EgomotionEstimate,
    pub n_correspondences: usize,
}

pub fn estimate_egomotion(obs: &Observations, cfg: &PipelineConfig, seed: u64) -> CliResult<EgoRun> {
    let corr = sample_correspondences(&obs.flow, &obs.confidence, cfg.max_correspondences, seed)
        .map_err(|e| CliError::stage("egomotion", e))?;
    let estimate = estimate_egomotion_ransac(&corr, &obs.k0, &obs.k1, &cfg.ransac_params(seed))
        .map_err(|e| CliError::stage("egomotion", e))?;
    info!(
        "egomotion: {} of {} inliers, degenerate {}",
        estimate.n_inliers(),
        corr.len(),
        estimate.degenerate
    );
    Ok(EgoRun { estimate, n_correspondences: corr.len() })
}

pub fn cost_maps_for(obs: &Observations, ego: &EgomotionEstimate) -> CliResult<CostMaps> {
    let mut ctx = MotionContext::new(obs.k0, obs.k1, ego.clone());
    compute_cost_maps(
        CostInputs { flow: &obs.flow, expansion: &obs.expansion, depth_prior: &obs.depth_prior, confidence: &obs.confidence },
        &mut ctx,
    )
    .map_err(|e| CliError::stage("costmaps", e))
}

#[derive(Debug, Clone)]
pub struct SegmentRun {
    pub ego: EgoRun,
    pub maps: CostMaps,
    pub segmentation: SegmentationResult,
}

/// Thresholds actually applied: a degenerate egomotion swaps `c_epi` for `c_hom`.
pub fn effective_thresholds(cfg: &PipelineConfig, maps: &CostMaps) -> ThresholdConfig {
    let mut t = cfg.thresholds;
    if maps.epi.is_none() {
        t.use_hom_instead_of_epi = true;
    }
    t
}

pub fn segment_with(obs: &Observations, maps: &CostMaps, cfg: &PipelineConfig) -> CliResult<SegmentationResult> {
    let t = effective_thresholds(cfg, maps);
    segment_scene(&CostSet::from_maps(maps), &t, &obs.input_valid()).map_err(|e| CliError::stage("segmentation", e))
}

pub fn run_segment(obs: &Observations, cfg: &PipelineConfig, seed: u64) -> CliResult<SegmentRun> {
    let ego = estimate_egomotion(obs, cfg, seed)?;
    let maps = cost_maps_for(obs, &ego.estimate)?;
    let segmentation = segment_with(obs, &maps, cfg)?;
    info!("segmentation: {} instances", segmentation.instances.len());
    Ok(SegmentRun { ego, maps, segmentation })
}

#[derive(Debug, Clone)]
pub struct SceneFlowRun {
    pub fits: Vec<RigidBodyFit>,
    pub output: SceneFlowOutput,
}

pub fn run_sceneflow(obs: &Observations, labels: &DenseField, cfg: &PipelineConfig, seed: u64) -> CliResult<SceneFlowRun> {
    obs.flow.ensure_same_dims(labels, "labels").map_err(CliError::input)?;
    let inputs = SegmentInputs {
        labels,
        flow: &obs.flow,
        confidence: &obs.confidence,
        depth_prior: &obs.depth_prior,
        k0: &obs.k0,
        k1: &obs.k1,
    };
    let mut fits = fit_all_segments(&inputs, seed).map_err(|e| CliError::stage("rigidfit", e))?;
    if cfg.pnp_refine {
        for fit in fits.iter_mut().filter(|f| f.updated) {
            match refine_pnp_lm(fit, &obs.depth_prior, &obs.flow, labels, &obs.k0, &obs.k1) {
                Ok(r) => *fit = r,
                Err(e) => log::warn!("PnP refinement of segment {} skipped: {e}", fit.id),
            }
        }
    }
    let output = assemble_scene_flow(labels, &fits, &obs.depth_prior, &obs.flow, &obs.expansion, &obs.k0, &obs.k1)
        .map_err(|e| CliError::stage("sceneflow", e))?;
    Ok(SceneFlowRun { fits, output })
}

/// Scored quantities; each part is present when both sides provide it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scores {
    pub segmentation: Option<SegScores>,
    pub flow: Option<FlowScores>,
}

/// Prediction or ground-truth fields as found in a directory.
#[derive(Debug, Clone, Default)]
pub struct FieldSet {
    pub labels: Option<DenseField>,
    pub flow: Option<DenseField>,
    pub z0: Option<DenseField>,
    pub z1: Option<DenseField>,
}

impl FieldSet {
    pub const FILES: [&'static str; 4] = ["labels.pgm", "flow.flo", "z0.pfm", "z1.pfm"];

    /// Loads `labels.pgm`, `flow.flo`, `z0.pfm` and `z1.pfm`. With `require_all`
    /// a missing file is an error; otherwise it is skipped.
    pub fn load_dir(dir: &Path, what: &str, require_all: bool) -> CliResult<Self> {
        if !dir.is_dir() {
            return Err(CliError::input(format!("{what}: {} is not a directory", dir.display())));
        }
        if require_all {
            if let Some(missing) = Self::FILES.iter().find(|f| !dir.join(f).exists()) {
                return Err(CliError::input(format!("{what}: {missing} not found in {}", dir.display())));
            }
        }
        let opt = |name: &str| -> Option<PathBuf> { Some(dir.join(name)).filter(|p| p.exists()) };
        let err = |name: &str| {
            let label = format!("{what} {name}");
            move |e: rigidkit_core::Error| CliError::input(format!("{label}: {e}"))
        };
        Ok(Self {
            labels: opt("labels.pgm").map(io::load_pgm16).transpose().map_err(err("labels.pgm"))?,
            flow: opt("flow.flo").map(io::load_flo).transpose().map_err(err("flow.flo"))?,
            z0: opt("z0.pfm").map(|p| io::load_pfm(p, FieldKind::Depth)).transpose().map_err(err("z0.pfm"))?,
            z1: opt("z1.pfm").map(|p| io::load_pfm(p, FieldKind::Depth)).transpose().map_err(err("z1.pfm"))?,
        })
    }

    fn has_flow(&self) -> bool {
        self.flow.is_some() && self.z0.is_some() && self.z1.is_some()
    }
}

pub fn evaluate(pred: &FieldSet, gt: &FieldSet, cfg: &PipelineConfig) -> CliResult<Scores> {
    let stage = |e: rigidkit_core::Error| match e {
        rigidkit_core::Error::DimensionMismatch(_) => CliError::input(e),
        e => CliError::stage("evaluation", e),
    };
    let segmentation = match (&pred.labels, &gt.labels) {
        (Some(p), Some(g)) => Some(score_segmentation(p, g).map_err(stage)?),
        _ => None,
    };
    let flow = if pred.has_flow() && gt.has_flow() {
        let gt_flow = gt.flow.as_ref().expect("checked");
        let fg = gt.labels.as_ref().map(|l| {
            let (w, h) = l.dims();
            Mask::from_fn(w, h, |r, c| l.label(r * w + c).is_some_and(|id| id > 0))
        });
        if let Some(m) = &fg {
            if m.dims() != gt_flow.dims() {
                return Err(CliError::input("ground-truth labels and flow differ in size"));
            }
        }
        let inputs = FlowEvalInputs {
            pred_flow: pred.flow.as_ref().expect("checked"),
            gt_flow,
            pred_z0: pred.z0.as_ref().expect("checked"),
            pred_z1: pred.z1.as_ref().expect("checked"),
            gt_z0: gt.z0.as_ref().expect("checked"),
            gt_z1: gt.z1.as_ref().expect("checked"),
            disparity_factor: cfg.disparity_factor,
        };
        Some(score_flow(&inputs, fg.as_ref()).map_err(stage)?)
    } else {
        None
    };
    if segmentation.is_none() && flow.is_none() {
        return Err(CliError::input("nothing to evaluate: no matching labels or flow/depth files"));
    }
    Ok(Scores { segmentation, flow })
}
