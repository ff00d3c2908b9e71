use std::path::Path;
use std::process::{Command, Output};

fn csk(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csk"))
        .args(args)
        .env_remove("CSK_THREADS")
        .output()
        .expect("run csk")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

const BOXES: &str = "image_id,cu,cv,w,h\na,10.25,12.5,8,6\na,40,30.75,20,14.5\nb,5.5,5.5,9,9\n";

#[test]
fn help_lists_config_keys_and_defaults() {
    let help = stdout(&csk(&["--help"]));
    for key in ["n", "min_iou", "top_k", "score_thresh", "mask_thresh", "k", "beta_sample", "D", "seed"] {
        assert!(help.contains(&format!("  {key} ")), "missing {key}");
    }
    for default in ["[default: 4]", "[default: 0.7]", "[default: 0.75]", "[default: 8]"] {
        assert!(help.contains(default), "missing {default}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "n = 4\nwarp = 9\n").unwrap();
    let o = csk(&["--config", p(&cfg), "grad-check", "--instances", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp"));

    assert_eq!(csk(&["decode"]).status.code(), Some(2));
    assert_eq!(csk(&["--beta-sample", "7", "grad-check"]).status.code(), Some(2));
}

#[test]
fn malformed_data_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("bad.fmap");
    std::fs::write(&mask, b"not a raster").unwrap();
    let o = csk(&["sample-points", "--mask", p(&mask)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.fmap"));

    let boxes = dir.path().join("b.csv");
    std::fs::write(&boxes, "image_id,cu,cv,w,h\na,1,1,zero,1\n").unwrap();
    let o = csk(&["encode-gt", "--boxes", p(&boxes), "--height", "16", "--width", "16", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn encode_then_decode_recovers_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.csv");
    std::fs::write(&gt, BOXES).unwrap();
    let maps = dir.path().join("maps");
    let dets = dir.path().join("dets.csv");
    stdout(&csk(&["encode-gt", "--boxes", p(&gt), "--height", "64", "--width", "64", "--out", p(&maps)]));
    stdout(&csk(&["decode", "--maps", p(&maps), "--out", p(&dets)]));
    let text = std::fs::read_to_string(&dets).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("image_id,cu,cv,w,h,score"));
    let mut got: Vec<Vec<String>> = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    got.sort();
    let mut want: Vec<Vec<String>> = BOXES.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    want.sort();
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want) {
        assert_eq!(g[0], w[0]);
        for i in 1..5 {
            let (a, b): (f64, f64) = (g[i].parse().unwrap(), w[i].parse().unwrap());
            assert!((a - b).abs() < 1e-4, "{g:?} vs {w:?}");
        }
        assert_eq!(g[5], "1");
    }
}

#[test]
fn ground_truth_scores_perfectly_against_itself() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("scenes");
    stdout(&csk(&[
        "synth-gen", "--out", p(&scenes), "--scenes", "2", "--height", "96", "--width", "96", "--max-size", "32",
    ]));
    let metrics = stdout(&csk(&["eval-ap", "--pred", p(&scenes), "--gt", p(&scenes), "--leaf"]));
    assert!(metrics.lines().any(|l| l == "AP_mean,1"), "{metrics}");
    assert!(metrics.lines().any(|l| l.starts_with("bestDice,") && l.ends_with(",1")), "{metrics}");

    let gt_boxes = scenes.join("gt_boxes.csv");
    let metrics = stdout(&csk(&["eval-ap", "--kind", "box", "--pred", p(&gt_boxes), "--gt", p(&gt_boxes)]));
    assert!(metrics.lines().any(|l| l == "AP_mean,1"), "{metrics}");
}

#[test]
fn sample_points_follow_strategy_counts() {
    let dir = tempfile::tempdir().unwrap();
    let scenes = dir.path().join("s");
    stdout(&csk(&["synth-gen", "--out", p(&scenes), "--height", "64", "--width", "64", "--max-size", "32"]));
    let pyramid = scenes.join("scene_0000").join("pyramid_s1.fmap");
    // channel 0 is the union mask; sample-points wants one channel
    let map = csk_core::io::read_fmap(&pyramid).unwrap().extract_channel(0).unwrap();
    let mask = dir.path().join("m.fmap");
    csk_core::io::write_fmap(&mask, &map).unwrap();
    let rows = |extra: &[&str]| {
        let mut args = vec!["sample-points", "--mask", p(&mask)];
        args.extend_from_slice(extra);
        stdout(&csk(&args)).lines().count() - 1
    };
    assert_eq!(rows(&[]), 384);
    assert_eq!(rows(&["--strategy", "uniform"]), 1536);
    assert_eq!(rows(&["--strategy", "none"]), 0);
    assert_eq!(rows(&["--D", "16", "--beta-sample", "1"]), 256);
    assert_eq!(csk(&["sample-points", "--mask", p(&mask), "--strategy", "wild"]).status.code(), Some(2));
}
