use std::path::Path;
use std::process::{Command, Output};

use dualens::data::{save_feature_set, FeatureMatrix, LabeledDataset};
use dualens::imgprep::{self, GrayImage};

fn dualens(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualens")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Two-class features whose first column separates the classes by `shift`.
fn write_set(dir: &Path, id: &str, shift: f64, salt: u64) {
    let mut state = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut noise = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let raw: Vec<i64> = (0..120).map(|i| i % 2).collect();
    let rows: Vec<Vec<f64>> = raw.iter().map(|&l| vec![l as f64 * shift + noise(), noise(), noise()]).collect();
    let ds = LabeledDataset::from_raw_labels(FeatureMatrix::from_rows(&rows).unwrap(), &raw, id).unwrap();
    save_feature_set(&dir.join(format!("{id}.fset")), &ds).unwrap();
}

fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let features = dir.path().join("features");
    std::fs::create_dir(&features).unwrap();
    write_set(&features, "alphanet", 1.5, 1);
    write_set(&features, "betanet", 0.8, 2);
    write_set(&features, "gammanet", 0.1, 3);
    std::fs::write(
        dir.path().join("run.cfg"),
        "# small run\nfeatures_dir = features\noutput_dir = out\nk_top = 2\nfamilies = KNN, GaussianNB, SVM_linear\n",
    )
    .unwrap();
    dir
}

#[test]
fn run_writes_the_report() {
    let dir = workspace();
    let cfg = dir.path().join("run.cfg");
    let o = dualens(&["--config", cfg.to_str().unwrap(), "--seed", "7", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("selection:"));
    for f in ["evaluation.csv", "fusion.csv", "vote.csv", "report.json", "summary.txt"] {
        assert!(dir.path().join("out").join(f).is_file(), "{f}");
    }
    let report = std::fs::read_to_string(dir.path().join("out/report.json")).unwrap();
    assert!(report.contains("\"seed\": 7"));

    let o = dualens(&["--config", cfg.to_str().unwrap(), "select"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("selected: alphanet, betanet"), "{}", stdout(&o));
}

#[test]
fn stage_commands() {
    let dir = workspace();
    let cfg = dir.path().join("run.cfg");
    let cfg = cfg.to_str().unwrap();
    let out = dir.path().join("elsewhere");

    let o = dualens(&["--config", cfg, "--out", out.to_str().unwrap(), "evaluate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("evaluation.csv").is_file());

    let fused = dir.path().join("fused.fset");
    let o = dualens(&["--config", cfg, "fuse", "--ids", "alphanet,betanet", "--output", fused.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let back = dualens::data::load_feature_set(&fused).unwrap();
    assert_eq!((back.len(), back.features.cols(), back.source_tag.as_str()), (120, 6, "alphanet+betanet"));

    let model = dir.path().join("knn.bin");
    let o = dualens(&["--config", cfg, "tune", "--ids", "alphanet", "--family", "KNN", "--model", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("test accuracy"));
    dualens::classifiers::FittedModel::from_blob(&std::fs::read(&model).unwrap()).unwrap();

    let o = dualens(&["--config", cfg, "vote", "--ids", "alphanet,betanet", "--families", "KNN,GaussianNB,SVM_linear"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("alphanet+betanet vote: test accuracy"));
}

#[test]
fn replay_selection_prints_the_trace() {
    let table = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/bt_large_4c.csv");
    let o = dualens(&["replay-selection", table.to_str().unwrap(), "--k", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("selected: vit_small_patch32_224, mnasnet0_5, vgg16"), "{text}");
    assert_eq!(text.lines().count(), 26);
}

#[test]
fn exit_codes() {
    let dir = workspace();
    assert_eq!(dualens(&["run"]).status.code(), Some(2));

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "features_dir = features\nfamilys = KNN\n").unwrap();
    let o = dualens(&["--config", bad.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let missing = dir.path().join("missing.cfg");
    std::fs::write(&missing, "features_dir = nowhere\n").unwrap();
    assert_eq!(dualens(&["--config", missing.to_str().unwrap(), "run"]).status.code(), Some(2));

    let table = dir.path().join("t.csv");
    std::fs::write(&table, "Model,KNN\nresnet50,zero\n").unwrap();
    let o = dualens(&["replay-selection", table.to_str().unwrap(), "--k", "1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    std::fs::write(dir.path().join("features/gammanet.labels"), "0\n1\n").unwrap();
    let cfg = dir.path().join("run.cfg");
    assert_eq!(dualens(&["--config", cfg.to_str().unwrap(), "evaluate"]).status.code(), Some(3));
}

#[test]
fn crop_rectangle_and_fallback() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = GrayImage::filled(50, 70, 5);
    for y in 10..=30 {
        for x in 15..=60 {
            img.set(y, x, 220);
        }
    }
    let src = dir.path().join("in.pgm");
    let dst = dir.path().join("out.pgm");
    imgprep::write_pgm(&src, &img).unwrap();
    let o = dualens(&["crop", "--in", src.to_str().unwrap(), "--output", dst.to_str().unwrap(), "--blur", "0", "--size", "24"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = imgprep::read_pgm(&dst).unwrap();
    assert_eq!((out.height(), out.width()), (24, 24));
    assert!(out.pixels().iter().all(|&v| v == 220));

    imgprep::write_pgm(&src, &GrayImage::filled(50, 70, 5)).unwrap();
    let o = dualens(&["crop", "--in", src.to_str().unwrap(), "--output", dst.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("resized the full image"));
    assert_eq!(imgprep::read_pgm(&dst).unwrap().height(), 224);
}
