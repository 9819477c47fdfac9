use std::path::{Path, PathBuf};

use latscope_core::experiment::{render, Endpoints, TermSpec, MANIFEST_FILE};
use latscope_core::image::ImageBuffer;
use latscope_core::latent::format_latents;
use latscope_core::{
    dcgan64_architecture, rerun_check, run, sample_latents, save_model, traverse, AnchorSet,
    AnchorStore, Error, ExperimentKind, ExperimentSpec, GeneratorModel, LatentSpace, RunManifest,
    RunOptions, Sign, TraversalKind,
};

fn model(dir: &Path) -> (PathBuf, GeneratorModel) {
    let p = dir.join("m.lgw1");
    let m = dcgan64_architecture(5, 1.0 / 32.0).unwrap();
    save_model(&m, &p).unwrap();
    (p, m)
}

fn store(dir: &Path, dim: usize) -> PathBuf {
    let p = dir.join("anchors.json");
    let mut s = AnchorStore::open(&p).unwrap();
    for (i, name) in ["a", "b", "c"].iter().enumerate() {
        let zs = sample_latents(LatentSpace::UniformCube, dim, 3, i as u64).unwrap();
        s.put(&AnchorSet::new(*name, ["t"], zs).unwrap(), false)
            .unwrap();
    }
    p
}

fn terms(spec: &[(Sign, &str)]) -> Vec<TermSpec> {
    spec.iter()
        .map(|(sign, n)| TermSpec {
            sign: *sign,
            anchor_set: n.to_string(),
        })
        .collect()
}

#[test]
fn interpolate_writes_sixteen_tiles_grid_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let out = dir.path().join("out");
    let spec = ExperimentSpec::new(ExperimentKind::Interpolate, &mp, &out);
    let m = run(&spec, RunOptions::default()).unwrap();
    assert_eq!(m.files.len(), 17);
    assert_eq!(m.latents.len(), 16);
    let grid =
        ImageBuffer::from_png(&std::fs::read(out.join("interpolate_grid.png")).unwrap()).unwrap();
    assert_eq!((grid.width(), grid.height()), (256, 256));
    assert!(out.join("interpolate_00.png").exists());
    assert!(out.join("interpolate_15.png").exists());
    assert!(out.join(MANIFEST_FILE).exists());
    let m2 = RunManifest::from_file(out.join(MANIFEST_FILE)).unwrap();
    assert_eq!(m2.files, m.files);
}

#[test]
fn grid_tile_order_follows_traversal_order() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let out = dir.path().join("out");
    let spec = ExperimentSpec::new(ExperimentKind::CircularPaper, &mp, &out);
    run(&spec, RunOptions::default()).unwrap();
    let grid = ImageBuffer::from_png(&std::fs::read(out.join("circular_paper_grid.png")).unwrap())
        .unwrap();
    for (i, (x0, y0)) in [(0, 0), (64, 0), (0, 64), (192, 192)].iter().enumerate() {
        let idx = [0, 1, 4, 15][i];
        let tile = ImageBuffer::from_png(
            &std::fs::read(out.join(format!("circular_paper_{idx:02}.png"))).unwrap(),
        )
        .unwrap();
        for (x, y) in [(0, 0), (31, 17), (63, 63)] {
            assert_eq!(grid.pixel(x0 + x, y0 + y), tile.pixel(x, y), "tile {idx}");
        }
    }
}

#[test]
fn traversal_latents_match_latent_ops() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let mut spec = ExperimentSpec::new(ExperimentKind::Slerp, &mp, dir.path().join("o"));
    spec.seed = 9;
    spec.n = 5;
    let r = render(&spec, RunOptions::default()).unwrap();
    let pair = sample_latents(LatentSpace::UniformCube, 100, 2, 9).unwrap();
    let want = traverse(TraversalKind::Slerp, &pair[0], &pair[1], 5, 1.0).unwrap();
    assert_eq!(r.latents, want.points);
}

#[test]
fn extrapolate_same_seed_twice_gives_identical_tiles() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let mut spec = ExperimentSpec::new(ExperimentKind::Extrapolate, &mp, dir.path().join("o"));
    spec.endpoints = Some(Endpoints::Seeds([4, 4]));
    let r = render(&spec, RunOptions::default()).unwrap();
    let tiles: Vec<_> = r
        .files
        .iter()
        .filter(|(n, _)| !n.ends_with("grid.png"))
        .collect();
    assert_eq!(tiles.len(), 16);
    assert!(tiles.iter().all(|(_, b)| b == &tiles[0].1));
}

#[test]
fn endpoint_files_are_used() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let zs = sample_latents(LatentSpace::UniformCube, 100, 2, 77).unwrap();
    let (fa, fb) = (dir.path().join("a.latent"), dir.path().join("b.latent"));
    std::fs::write(&fa, format_latents(&zs[..1])).unwrap();
    std::fs::write(&fb, format_latents(&zs[1..])).unwrap();
    let mut spec = ExperimentSpec::new(ExperimentKind::Interpolate, &mp, dir.path().join("o"));
    spec.n = 3;
    spec.endpoints = Some(Endpoints::Files([fa, fb]));
    let r = render(&spec, RunOptions::default()).unwrap();
    assert_eq!(r.latents[0], zs[0]);
    assert_eq!(r.latents[2], zs[1]);
}

#[test]
fn dim_mismatch_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let sp = store(dir.path(), 64);
    let out = dir.path().join("out");
    let mut spec = ExperimentSpec::new(ExperimentKind::Arithmetic, &mp, &out);
    spec.store_path = Some(sp);
    spec.terms = terms(&[(Sign::Plus, "a")]);
    let err = run(&spec, RunOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Validation { .. }), "{err:?}");
    assert!(!out.exists());

    let zs = sample_latents(LatentSpace::UniformCube, 8, 2, 1).unwrap();
    let (fa, fb) = (dir.path().join("a.latent"), dir.path().join("b.latent"));
    std::fs::write(&fa, format_latents(&zs[..1])).unwrap();
    std::fs::write(&fb, format_latents(&zs[1..])).unwrap();
    let mut spec = ExperimentSpec::new(ExperimentKind::Interpolate, &mp, &out);
    spec.endpoints = Some(Endpoints::Files([fa, fb]));
    assert!(matches!(
        run(&spec, RunOptions::default()),
        Err(Error::Validation { .. })
    ));
    assert!(!out.exists());
}

#[test]
fn unknown_anchor_and_missing_inputs_are_resolution_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let sp = store(dir.path(), 100);
    let mut spec = ExperimentSpec::new(ExperimentKind::Arithmetic, &mp, dir.path().join("o"));
    spec.store_path = Some(sp);
    spec.terms = terms(&[(Sign::Plus, "a"), (Sign::Minus, "nope")]);
    assert!(matches!(
        run(&spec, RunOptions::default()),
        Err(Error::Resolution(_))
    ));

    let spec = ExperimentSpec::new(
        ExperimentKind::Samples,
        dir.path().join("absent.lgw1"),
        dir.path().join("o"),
    );
    assert!(matches!(
        run(&spec, RunOptions::default()),
        Err(Error::Resolution(_))
    ));
}

#[test]
fn arithmetic_outputs_strip_and_result_latent() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let sp = store(dir.path(), 100);
    let out = dir.path().join("out");
    let mut spec = ExperimentSpec::new(ExperimentKind::Arithmetic, &mp, &out);
    spec.store_path = Some(sp);
    spec.terms = terms(&[(Sign::Plus, "a"), (Sign::Minus, "b"), (Sign::Plus, "c")]);
    let m = run(&spec, RunOptions::default()).unwrap();
    let names: Vec<&str> = m.files.iter().map(|f| f.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "arithmetic_00.png",
            "arithmetic_01.png",
            "arithmetic_02.png",
            "arithmetic_03.png",
            "arithmetic_grid.png",
            "arithmetic_result.latent"
        ]
    );
    let strip =
        ImageBuffer::from_png(&std::fs::read(out.join("arithmetic_grid.png")).unwrap()).unwrap();
    assert_eq!((strip.width(), strip.height()), (256, 64));
    let result = std::fs::read_to_string(out.join("arithmetic_result.latent")).unwrap();
    assert_eq!(result.trim_end(), m.latents[3]);
}

#[test]
fn single_term_arithmetic_is_the_mean() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let mut spec = ExperimentSpec::new(ExperimentKind::Arithmetic, &mp, dir.path().join("o"));
    spec.store_path = Some(store(dir.path(), 100));
    spec.terms = terms(&[(Sign::Plus, "b")]);
    let r = render(&spec, RunOptions::default()).unwrap();
    assert_eq!(r.latents[0], r.latents[1]);
    assert_eq!(r.files[0].1, r.files[1].1);
}

#[test]
fn parallel_jobs_match_sequential() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let spec = ExperimentSpec::new(ExperimentKind::Samples, &mp, dir.path().join("o"));
    let a = render(&spec, RunOptions { jobs: 1 }).unwrap();
    let b = render(&spec, RunOptions { jobs: 4 }).unwrap();
    assert_eq!(a.files, b.files);
}

#[test]
fn rerun_check_names_deleted_file() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let out = dir.path().join("out");
    let mut spec = ExperimentSpec::new(ExperimentKind::Samples, &mp, &out);
    spec.n = 4;
    run(&spec, RunOptions::default()).unwrap();
    let manifest = out.join(MANIFEST_FILE);
    assert!(rerun_check(&manifest, RunOptions::default())
        .unwrap()
        .all_match());

    std::fs::remove_file(out.join("samples_02.png")).unwrap();
    let report = rerun_check(&manifest, RunOptions::default()).unwrap();
    assert!(!report.all_match());
    assert_eq!(report.divergent_files(), ["samples_02.png"]);
    assert_eq!(report.missing, ["samples_02.png"]);
}

#[test]
fn rerun_check_flags_every_image_after_seed_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let out = dir.path().join("out");
    let mut spec = ExperimentSpec::new(ExperimentKind::Interpolate, &mp, &out);
    spec.seed = 1;
    let original = run(&spec, RunOptions::default()).unwrap();

    let manifest = out.join(MANIFEST_FILE);
    let mut m = RunManifest::from_file(&manifest).unwrap();
    m.spec.seed = 2;
    std::fs::write(&manifest, serde_json::to_vec(&m).unwrap()).unwrap();

    // oracle: the tampered seed really yields different endpoints
    let a = sample_latents(LatentSpace::UniformCube, 100, 2, 1).unwrap();
    let b = sample_latents(LatentSpace::UniformCube, 100, 2, 2).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x != y));

    let report = rerun_check(&manifest, RunOptions::default()).unwrap();
    let pngs: Vec<String> = original
        .files
        .iter()
        .map(|f| f.name.clone())
        .filter(|n| n.ends_with(".png"))
        .collect();
    assert_eq!(report.diverged, pngs);
    assert!(report.missing.is_empty() && report.modified.is_empty());
}

#[test]
fn rerun_check_missing_model_is_resolution_error() {
    let dir = tempfile::tempdir().unwrap();
    let (mp, _) = model(dir.path());
    let out = dir.path().join("out");
    let mut spec = ExperimentSpec::new(ExperimentKind::Samples, &mp, &out);
    spec.n = 2;
    run(&spec, RunOptions::default()).unwrap();
    std::fs::remove_file(&mp).unwrap();
    assert!(matches!(
        rerun_check(out.join(MANIFEST_FILE), RunOptions::default()),
        Err(Error::Resolution(_))
    ));
}
