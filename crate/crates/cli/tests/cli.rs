use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dcrf_core::depthprep::depth_stats;
use dcrf_core::ingest::{
    load_depth, load_depth_raster, load_label_map, load_rgb, load_unary, save_depth,
    save_label_map, save_rgb,
};
use dcrf_core::{ClassPalette, CrfParams, DepthImage, LabelMap, RgbImage};

fn dcrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcrf"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = dcrf(args);
    assert!(
        out.status.success(),
        "dcrf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes depth-edge scenes and returns the dataset root.
fn synth(dir: &Path, size: usize, count: usize, seed: u64) -> PathBuf {
    let root = dir.join("scenes");
    let (size, count, seed) = (size.to_string(), count.to_string(), seed.to_string());
    ok(&[
        "synth", "--preset", "depth-edge", "--out", s(&root), "--width", &size, "--height", &size,
        "--count", &count, "--seed", &seed,
    ]);
    root
}

fn scene_paths(root: &Path, id: &str) -> [PathBuf; 4] {
    [
        root.join("rgb").join(format!("{id}.png")),
        root.join("depth").join(format!("{id}.png")),
        root.join("unary").join(format!("{id}.unr")),
        root.join("gt").join(format!("{id}.png")),
    ]
}

fn refine(root: &Path, id: &str, out: &Path, extra: &[&str]) -> String {
    let [rgb, depth, unary, _] = scene_paths(root, id);
    let mut args = vec![
        "refine", "--rgb", s(&rgb), "--depth", s(&depth), "--unary", s(&unary), "--classes", "2",
        "--out", s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args)
}

fn score(text: &str, name: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(name))
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| panic!("no {name} line in {text}"))
}

fn palette2() -> ClassPalette {
    ClassPalette::generic(2).unwrap()
}

#[test]
fn zero_iterations_reproduce_the_unary_argmax() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 32, 1, 3);
    let out = dir.path().join("labels.png");
    let text = refine(&root, "scene_0000", &out, &["--iters", "0"]);
    assert!(text.contains("0 iterations"), "{text}");
    let labels = load_label_map(&out, &palette2()).unwrap();
    let unary = load_unary(&scene_paths(&root, "scene_0000")[2]).unwrap();
    assert_eq!(labels, unary.argmax());
}

#[test]
fn joint_kernel_beats_color_only_on_depth_edges() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 64, 1, 5);
    let gt = &scene_paths(&root, "scene_0000")[3];
    let mut iou = Vec::new();
    for kernel in ["joint", "rgb"] {
        let out = dir.path().join(format!("{kernel}.png"));
        refine(&root, "scene_0000", &out, &["--kernel", kernel]);
        let text = ok(&["evaluate", "--pred", s(&out), "--gt", s(gt), "--classes", "2"]);
        iou.push(score(&text, "IoU"));
    }
    assert!(iou[0] >= iou[1] + 5.0, "joint {} vs color-only {}", iou[0], iou[1]);
}

#[test]
fn backends_agree_on_small_images() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 24, 1, 7);
    let brute = dir.path().join("brute.png");
    let lattice = dir.path().join("lattice.png");
    refine(&root, "scene_0000", &brute, &["--backend", "brute", "--sa", "8"]);
    refine(&root, "scene_0000", &lattice, &["--backend", "lattice", "--sa", "8"]);
    let a = load_label_map(&brute, &palette2()).unwrap();
    let b = load_label_map(&lattice, &palette2()).unwrap();
    assert!(a.agreement(&b) >= 0.99, "agreement {}", a.agreement(&b));
}

#[test]
fn overlay_is_written_at_image_size() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 20, 1, 1);
    let overlay = dir.path().join("overlay.png");
    refine(&root, "scene_0000", &dir.path().join("l.png"), &["--out-overlay", s(&overlay)]);
    let img = load_rgb(&overlay).unwrap();
    assert_eq!((img.width(), img.height()), (20, 20));
}

fn write_labels(path: &Path, labels: Vec<u8>) {
    let map = LabelMap::new(labels.len(), 1, labels).unwrap();
    save_label_map(&map, &palette2(), path, None).unwrap();
}

#[test]
fn evaluate_prints_fixture_scores() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred.png"), dir.path().join("gt.png"));
    write_labels(&gt, vec![0, 0, 0, 0, 1, 1, 1, 1]);
    write_labels(&pred, vec![0, 0, 0, 1, 1, 1, 1, 1]);
    let csv = dir.path().join("scores.csv");
    let text = ok(&[
        "evaluate", "--pred", s(&pred), "--gt", s(&gt), "--classes", "2", "--classwise", "--csv",
        s(&csv),
    ]);
    assert_eq!(score(&text, "Pixel"), 87.5);
    assert_eq!(score(&text, "Mean"), 87.5);
    assert_eq!(score(&text, "IoU"), 77.5);
    let written = fs::read_to_string(&csv).unwrap();
    assert!(written.starts_with("Pixel,Mean,IoU\n0.875000,0.875000,0.775000\n"), "{written}");

    let same = ok(&["evaluate", "--pred", s(&gt), "--gt", s(&gt), "--classes", "2"]);
    assert_eq!(score(&same, "IoU"), 100.0);
}

#[test]
fn evaluate_reports_unmatched_ids() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = (dir.path().join("pred"), dir.path().join("gt"));
    fs::create_dir_all(&pred).unwrap();
    fs::create_dir_all(&gt).unwrap();
    write_labels(&pred.join("a.png"), vec![0, 1]);
    write_labels(&gt.join("a.png"), vec![0, 1]);
    write_labels(&gt.join("orphan.png"), vec![0, 1]);
    let out = dcrf(&["evaluate", "--pred", s(&pred), "--gt", s(&gt), "--classes", "2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("orphan"));
}

#[test]
fn tuning_is_reproducible_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 16, 2, 11);
    let mut outputs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("best{run}.cfg"));
        ok(&[
            "tune", "--val", s(&root), "--rounds", "2", "--samples", "3", "--seed", "4", "--out",
            s(&out), "--classes", "2",
        ]);
        let log = fs::read_to_string(dir.path().join(format!("best{run}.cfg.log"))).unwrap();
        assert_eq!(log.lines().filter(|l| !l.trim().is_empty()).count(), 6, "{log}");
        outputs.push((fs::read_to_string(&out).unwrap(), log));
    }
    assert_eq!(outputs[0], outputs[1]);
    let params = CrfParams::parse_config(&outputs[0].0).unwrap();
    assert!((5.0..=11.0).contains(&params.omega1));
    assert_eq!(CrfParams::parse_config(&params.to_config_string()).unwrap(), params);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = synth(a.path(), 16, 2, 9);
    let rb = synth(b.path(), 16, 2, 9);
    for id in ["scene_0000", "scene_0001"] {
        for (x, y) in scene_paths(&ra, id).iter().zip(scene_paths(&rb, id).iter()) {
            assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap(), "{}", x.display());
        }
    }
    let gt = load_label_map(&scene_paths(&ra, "scene_0000")[3], &palette2()).unwrap();
    assert!(gt.labels().contains(&0) && gt.labels().contains(&1));
}

#[test]
fn blocks_preset_uses_the_requested_classes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("b");
    ok(&[
        "synth", "--preset", "blocks", "--out", s(&root), "--width", "30", "--height", "30",
        "--classes", "5",
    ]);
    let gt = load_label_map(&scene_paths(&root, "scene_0000")[3], &ClassPalette::generic(5).unwrap())
        .unwrap();
    for class in 0..5 {
        assert!(gt.labels().contains(&class), "class {class} missing");
    }
}

fn half_invalid(dir: &Path) -> (PathBuf, PathBuf) {
    let depth = dir.join("depth.png");
    let rgb = dir.join("rgb.png");
    let data = (0..16).map(|i| if i % 2 == 0 { 0 } else { 2000 + i as u16 }).collect();
    save_depth(&DepthImage::new(4, 4, data).unwrap(), &depth).unwrap();
    save_rgb(&RgbImage::new(4, 4, (0..48).map(|i| (i * 5) as u8).collect()).unwrap(), &rgb).unwrap();
    (depth, rgb)
}

#[test]
fn depthprep_flags_half_invalid_depth() {
    let dir = tempfile::tempdir().unwrap();
    let (depth, rgb) = half_invalid(dir.path());
    let text = ok(&["depthprep", "--depth", s(&depth), "--rgb", s(&rgb), "--check-only"]);
    assert!(text.contains("unusable (invalid 50.0% > 45%)"), "{text}");
    assert!(!depth.with_extension("ndp").exists());
}

#[test]
fn depthprep_writes_a_raster_matching_rgb_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let root = synth(dir.path(), 16, 1, 2);
    let [rgb, depth, ..] = scene_paths(&root, "scene_0000");
    let out = dir.path().join("norm.ndp");
    let text = ok(&["depthprep", "--depth", s(&depth), "--rgb", s(&rgb), "--out", s(&out)]);
    let stats = depth_stats(&load_depth(&depth).unwrap());
    assert!(text.contains(&format!("depth mean {:.3}", stats.mean.unwrap())), "{text}");

    let (w, h, data) = load_depth_raster(&out).unwrap();
    assert_eq!((w, h), (16, 16));
    let n = data.len() as f64;
    let mean = data.iter().map(|&v| v as f64).sum::<f64>() / n;
    let std = (data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
    let (mu, sigma) = load_rgb(&rgb).unwrap().pooled_stats();
    assert!((mean - mu).abs() < 1e-3 && (std - sigma).abs() < 1e-3, "{mean} {std} vs {mu} {sigma}");

    let refined = dir.path().join("from_raster.png");
    let [_, _, unary, _] = scene_paths(&root, "scene_0000");
    ok(&[
        "refine", "--rgb", s(&rgb), "--depth", s(&out), "--unary", s(&unary), "--classes", "2",
        "--out", s(&refined),
    ]);
    assert!(refined.exists());
}

#[test]
fn unusable_depth_falls_back_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let (depth, rgb) = half_invalid(dir.path());
    let unary = dir.path().join("u.unr");
    dcrf_core::ingest::save_unary(
        &dcrf_core::UnaryField::new(4, 4, 2, (0..32).map(|i| (i % 3) as f64).collect()).unwrap(),
        &unary,
    )
    .unwrap();
    let out = dir.path().join("l.png");
    let base = ["refine", "--rgb", s(&rgb), "--depth", s(&depth), "--unary", s(&unary), "--classes", "2", "--out", s(&out)];
    let text = ok(&base);
    assert!(text.contains("rgb kernel"), "{text}");

    let mut strict = base.to_vec();
    strict.push("--strict");
    let failed = dcrf(&strict);
    assert!(!failed.status.success());
    assert!(String::from_utf8_lossy(&failed.stderr).contains("50.0%"));
}

#[test]
fn receptive_field_sizes() {
    assert_eq!(ok(&["receptive-field", "3", "3", "3"]).trim(), "7");
    assert_eq!(ok(&["receptive-field", "3:1", "3:2", "3:4"]).trim(), "15");
    assert_eq!(ok(&["receptive-field", "1"]).trim(), "1");
    assert!(!dcrf(&["receptive-field", "3:0"]).status.success());
}
