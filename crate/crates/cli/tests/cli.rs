//! End-to-end checks of the command-line surface via the built binary.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mea-reservoir"))
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("mea-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn pattern_gen_and_validate() {
    let dir = workdir("pattern");
    let file = dir.join("digit8.txt");
    let out = bin()
        .args([
            "pattern", "gen", "--scenario", "digits", "--center", "20,20", "--digit", "8",
            "--label", "2",
        ])
        .arg("--out")
        .arg(&file)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("19 pairs"));

    let out = bin().args(["pattern", "validate", "--file"]).arg(&file).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok: 19 pairs"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn validate_rejects_broken_pattern_with_exit_code_1() {
    let dir = workdir("badpattern");
    let file = dir.join("bad.txt");
    // poles five apart: adjacency violation
    std::fs::write(&file, "pulse,monophasic,10,20,0\n0,pointwise,0,0,5,5\n").unwrap();
    let out = bin().args(["pattern", "validate", "--file"]).arg(&file).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("not 4-neighbors"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_file_gives_io_exit_code() {
    let out = bin()
        .args(["pattern", "validate", "--file", "/nonexistent/nowhere.txt"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn esn_build_reports_scaling() {
    let dir = workdir("esn");
    let config = dir.join("esn.cfg");
    std::fs::write(&config, "esn.n_units = 256\nesn.seed = 5\n").unwrap();
    let out = bin().args(["esn", "build", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("n_units 256 nnz 6554"), "{stdout}");
    assert!(stdout.contains("scaled to 0.9"), "{stdout}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn detect_reads_trace_files() {
    let dir = workdir("detect");
    let trace_path = dir.join("one.trace");
    let template = mea_reservoir_core::detect::default_template();
    let trace = mea_reservoir_core::detect::synthesize_trace(
        &[5_000, 10_000],
        20_000,
        6.0,
        &template,
        mea_reservoir_core::mea::ElectrodeCoord::new(3, 4).unwrap(),
        11,
    )
    .unwrap();
    mea_reservoir_core::detect::write_trace(&trace, &trace_path).unwrap();
    let out = bin().args(["detect", "--trace"]).arg(&trace_path).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    let detections: Vec<i64> = stdout.lines().map(|l| l.trim().parse().unwrap()).collect();
    assert_eq!(detections.len(), 2, "{stdout}");
    assert!((detections[0] - 5_000).abs() <= 5);
    assert!((detections[1] - 10_000).abs() <= 5);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn simulate_features_train_eval_flow() {
    let dir = workdir("flow");
    // two quiet-but-distinct pointwise patterns, simulated with a fast config
    let culture = dir.join("culture.cfg");
    std::fs::write(
        &culture,
        "culture.neurons_per_electrode = 2\nculture.background_rate_hz = 2\nculture.seed = 3\n",
    )
    .unwrap();
    for (label, center) in [(0u32, "15,15"), (1u32, "45,45")] {
        let pattern = dir.join(format!("pattern_{label}.txt"));
        let out = bin()
            .args([
                "pattern", "gen", "--scenario", "pointwise", "--center", center, "--label",
                &label.to_string(),
            ])
            .arg("--out")
            .arg(&pattern)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let trials_dir = dir.join(format!("trials_{label}"));
        let out = bin()
            .args(["simulate", "protocol", "--repetitions", "25", "--seed", "9"])
            .arg("--config")
            .arg(&culture)
            .arg("--pattern")
            .arg(&pattern)
            .arg("--out-dir")
            .arg(&trials_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let features = dir.join(format!("features_{label}.csv"));
        let out = bin()
            .args(["features", "extract"])
            .arg("--trials")
            .arg(&trials_dir)
            .arg("--pattern")
            .arg(&pattern)
            .arg("--out")
            .arg(&features)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let model = dir.join("model.txt");
    let out = bin()
        .args(["clf", "train", "--seed", "4"])
        .arg("--features")
        .arg(dir.join("features_0.csv"))
        .arg("--features")
        .arg(dir.join("features_1.csv"))
        .arg("--out")
        .arg(&model)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = bin()
        .args(["clf", "eval"])
        .arg("--model")
        .arg(&model)
        .arg("--features")
        .arg(dir.join("features_0.csv"))
        .arg("--features")
        .arg(dir.join("features_1.csv"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.starts_with("accuracy,"), "{stdout}");
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn respmap_from_trials() {
    let dir = workdir("respmap");
    let culture = dir.join("culture.cfg");
    std::fs::write(&culture, "culture.seed = 8\n").unwrap();
    let pattern = dir.join("p.txt");
    bin()
        .args(["pattern", "gen", "--scenario", "pointwise", "--center", "30,30"])
        .arg("--out")
        .arg(&pattern)
        .output()
        .unwrap();
    let trials_dir = dir.join("trials");
    let out = bin()
        .args(["simulate", "protocol", "--repetitions", "25", "--seed", "2"])
        .arg("--config")
        .arg(&culture)
        .arg("--pattern")
        .arg(&pattern)
        .arg("--out-dir")
        .arg(&trials_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args(["respmap"])
        .arg("--trials")
        .arg(&trials_dir)
        .arg("--out")
        .arg(dir.join("map"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ppm = std::fs::read(dir.join("map.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n64 64\n255\n"));
    let csv = std::fs::read_to_string(dir.join("map.csv")).unwrap();
    assert!(csv.starts_with("row,col,mean,sd,category\n"));
    // the stimulated pole must show a strongly positive response
    let pole_line = csv.lines().find(|l| l.starts_with("30,30,")).unwrap();
    assert!(pole_line.contains("pos99"), "{pole_line}");
    std::fs::remove_dir_all(&dir).unwrap();
}
