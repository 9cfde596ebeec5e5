use std::fs;

use rigidkit_sim::{
    corrupt, load_bundle, make_degenerate_scenario, render, write_bundle, NoiseConfig, PriorModel, ScenarioKind, MANIFEST_FILE,
};

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn noise_free_bundle_has_eight_files_and_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = render(&make_degenerate_scenario(ScenarioKind::Collinear, 0)).unwrap();
    let noise = NoiseConfig::default();
    let c = corrupt(&gt, &noise).unwrap();
    let m = write_bundle(tmp.path(), &gt, Some(&c), &noise).unwrap();
    assert_eq!(m.files.len(), 8);
    assert!(m.inputs.is_empty());
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 9);

    let b = load_bundle(tmp.path()).unwrap();
    assert_eq!(b.manifest, m);
    assert!(b.inputs.is_none());
    assert_eq!(b.labels, gt.labels);
    assert_eq!(b.k0, gt.k0);
    let f32s = |f: &rigidkit_core::DenseField| f.data().iter().map(|v| (*v as f32).to_bits()).collect::<Vec<_>>();
    assert_eq!(f32s(&b.flow), f32s(&gt.flow));
    assert_eq!(f32s(&b.z0), f32s(&gt.z0));
    let back = b.ground_truth();
    assert_eq!(back.bodies, gt.bodies);
    assert_eq!(back.ego, gt.ego);
}

#[test]
fn noisy_bundle_carries_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let gt = render(&make_degenerate_scenario(ScenarioKind::General, 1)).unwrap();
    let noise = NoiseConfig { flow_sigma: 0.5, outlier_fraction: 0.1, prior: PriorModel::Scaled { k: 2.0 }, seed: 2, ..Default::default() };
    let c = corrupt(&gt, &noise).unwrap();
    let m = write_bundle(tmp.path(), &gt, Some(&c), &noise).unwrap();
    assert_eq!(m.files.len(), 8);
    assert_eq!(m.inputs.len(), 4);
    let b = load_bundle(tmp.path()).unwrap();
    let inp = b.inputs.as_ref().unwrap();
    assert_eq!(inp.outliers, c.outliers);
    assert_eq!(b.observations().confidence, inp.confidence);
    assert_eq!(b.manifest.noise, noise);
}

#[test]
fn bundle_bytes_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let gt = render(&make_degenerate_scenario(ScenarioKind::General, 3)).unwrap();
        let noise = NoiseConfig { flow_sigma: 0.3, seed: 1, ..Default::default() };
        let c = corrupt(&gt, &noise).unwrap();
        write_bundle(d.path(), &gt, Some(&c), &noise).unwrap();
    }
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
}

#[test]
fn missing_files_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(load_bundle(tmp.path()).is_err());
    let gt = render(&make_degenerate_scenario(ScenarioKind::Static, 0)).unwrap();
    write_bundle(tmp.path(), &gt, None, &NoiseConfig::default()).unwrap();
    fs::remove_file(tmp.path().join("expansion.pfm")).unwrap();
    let err = load_bundle(tmp.path()).unwrap_err().to_string();
    assert!(err.contains("expansion"), "{err}");
    assert!(tmp.path().join(MANIFEST_FILE).exists());
}
