//! End-to-end runs of the `diastereo` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use diastereo::cli::{meta_path, sha256_hex, PipelineMeta};
use diastereo::curate::read_manifest;
use diastereo::raster::read_raster;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_diastereo"));
    c.env_remove("DIASTEREO_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Last stderr line, parsed as the JSON diagnostic.
fn diagnostic(out: &Output) -> serde_json::Value {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().expect("diagnostic line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

/// One synthetic box scene shared by every test in this file.
fn scene() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        let out = run(&["synth", "--preset", "box", "--out-dir", s(d.path())]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        d
    })
    .path()
}

fn pipeline_args(out: &Path, extra: &[&str]) -> Vec<String> {
    let sc = scene();
    let mut v: Vec<String> = [
        "pipeline",
        "--left",
        s(&sc.join("left.dsrast")),
        "--right",
        s(&sc.join("right.dsrast")),
        "--rpc-left",
        s(&sc.join("left.rpc.json")),
        "--rpc-right",
        s(&sc.join("right.rpc.json")),
        "--ref",
        s(&sc.join("dsm.dsrast")),
        "--out-dir",
        s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect();
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn printed_mae(out: &Output) -> f64 {
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("MAE:")).expect("MAE line");
    line.trim_start_matches("MAE:").trim().trim_end_matches('m').trim().parse().unwrap()
}

#[test]
fn synth_writes_views_cameras_and_sidecars() {
    let sc = scene();
    for f in ["dsm.dsrast", "left.dsrast", "right.dsrast", "left.rpc.json", "right.rpc.json", "left_alt.dsrast", "scene.json"] {
        assert!(sc.join(f).is_file(), "{f}");
    }
    let meta = PipelineMeta::read(&meta_path(&sc.join("left.dsrast"))).unwrap();
    assert_eq!(meta.stage, "synth");
    let left = fs::read(sc.join("left.dsrast")).unwrap();
    assert_eq!(meta.outputs["left"].sha256, sha256_hex(&left));
    let alt = read_raster(sc.join("left_alt.dsrast")).unwrap();
    let img = read_raster(sc.join("left.dsrast")).unwrap();
    assert_eq!((alt.width(), alt.height()), (img.width(), img.height()));
}

#[test]
fn pipeline_with_gt_disparity_meets_tolerance() {
    let out = tempfile::tempdir().unwrap();
    let dsm = scene().join("dsm.dsrast");
    let args = pipeline_args(out.path(), &["--disp-source", "gt", "--dsm", s(&dsm)]);
    let o = bin().args(&args).output().unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mae = printed_mae(&o);
    assert!(mae <= 0.15, "MAE {mae}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("report.json")).unwrap()).unwrap();
    assert!((report["mae_m"].as_f64().unwrap() - mae).abs() < 1e-4);
    // every chained stage recorded the digest of what it consumed
    let tri = PipelineMeta::read(&meta_path(&out.path().join("alt.dsrast"))).unwrap();
    let disp = fs::read(out.path().join("disp.pfm")).unwrap();
    assert_eq!(tri.inputs["disparity"].sha256, sha256_hex(&disp));
}

#[test]
fn pipeline_with_block_matching_is_thread_count_independent() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let o1 = bin().args(pipeline_args(a.path(), &["--threads", "1"])).output().unwrap();
    let o4 = bin().env("DIASTEREO_THREADS", "4").args(pipeline_args(b.path(), &[])).output().unwrap();
    assert!(o1.status.success() && o4.status.success());
    for f in ["rect/rect_left.dsrast", "rect/meta.json", "disp.pfm", "alt.dsrast", "dsm.dsrast"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between thread counts");
    }
    assert!(printed_mae(&o1) <= 0.5);
}

#[test]
fn staged_commands_and_tamper_detection() {
    let sc = scene();
    let w = tempfile::tempdir().unwrap();
    let rect = w.path().join("rect");
    let o = run(&[
        "rectify",
        "--left",
        s(&sc.join("right.dsrast")),
        "--right",
        s(&sc.join("left.dsrast")),
        "--rpc-left",
        s(&sc.join("right.rpc.json")),
        "--rpc-right",
        s(&sc.join("left.rpc.json")),
        "--dsm",
        s(&sc.join("dsm.dsrast")),
        "--out-dir",
        s(&rect),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let meta: serde_json::Value = serde_json::from_slice(&fs::read(rect.join("meta.json")).unwrap()).unwrap();
    // arguments given in reverse order: the rectification swaps them back
    assert_eq!(meta["swapped"], serde_json::Value::Bool(true));
    for k in ["t", "s", "z_avg"] {
        assert!(meta[k].is_number(), "{k}");
    }
    for f in ["H_L.json", "H_R.json", "rect_right.dsrast", "rpc_left.json", "rpc_right.json"] {
        assert!(rect.join(f).is_file(), "{f}");
    }

    let gt = w.path().join("gt.pfm");
    let conf = w.path().join("conf.dsrast");
    let o = run(&["gt-disp", "--rect-dir", s(&rect), "--dsm", s(&sc.join("dsm.dsrast")), "--out", s(&gt), "--confidence", s(&conf)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let d = read_raster(&gt).unwrap();
    let (lo, _) = d.valid_range(0).unwrap();
    assert!(lo >= -0.5, "min GT disparity {lo}");

    let alt = w.path().join("alt.dsrast");
    assert!(run(&["triangulate", "--rect-dir", s(&rect), "--disp", s(&gt), "--out", s(&alt)]).status.success());
    let dsm = w.path().join("dsm.dsrast");
    assert!(run(&["grid", "--alt", s(&alt), "--rect-dir", s(&rect), "--out", s(&dsm), "--agg", "median"]).status.success());
    let rep = w.path().join("reports/aoi1/p.json");
    let o = run(&["eval", "--pred", s(&dsm), "--ref", s(&sc.join("dsm.dsrast")), "--json", s(&rep)]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("MAE"));

    let ppm = w.path().join("dsm.ppm");
    assert!(run(&["plot", "--in", s(&dsm), "--out", s(&ppm), "--cmap", "turbo"]).status.success());
    let img = fs::read(&ppm).unwrap();
    let r = read_raster(&dsm).unwrap();
    let header = format!("P6\n{} {}\n255\n", r.width(), r.height());
    assert!(img.starts_with(header.as_bytes()));
    assert_eq!(img.len(), header.len() + 3 * r.data().len());
    let o = run(&["plot", "--in", s(&dsm), "--out", s(&ppm), "--range", "1;2"]);
    assert_eq!(o.status.code(), Some(1));

    // a stage refuses an input that no longer matches its producer's record
    let mut bytes = fs::read(rect.join("rect_left.dsrast")).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 1;
    fs::write(rect.join("rect_left.dsrast"), bytes).unwrap();
    let o = run(&["match", "--rect-dir", s(&rect), "--out", s(&w.path().join("bm.pfm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["error"], "HashMismatch");
}

#[test]
fn usage_errors_exit_one_with_usage_text() {
    let o = run(&["rectify", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("Usage"), "{err}");
    assert_eq!(diagnostic(&o)["error"], "UsageError");
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let o = run(&["pipeline", "--left", "x"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_errors_exit_two_with_diagnostics() {
    let sc = scene();
    let w = tempfile::tempdir().unwrap();
    let o = run(&[
        "rectify",
        "--left",
        s(&sc.join("left.dsrast")),
        "--right",
        s(&sc.join("right.dsrast")),
        "--rpc-left",
        s(&w.path().join("missing.rpc.json")),
        "--rpc-right",
        s(&sc.join("right.rpc.json")),
        "--out-dir",
        s(w.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let d = diagnostic(&o);
    assert_eq!(d["error"], "IoError");
    assert!(d["message"].as_str().unwrap().contains("missing.rpc.json"));

    let bad = w.path().join("bad.rpc.json");
    fs::write(&bad, r#"{"line_off": 0.0, "samp_off": 0.0}"#).unwrap();
    let o = run(&[
        "rectify",
        "--left",
        s(&sc.join("left.dsrast")),
        "--right",
        s(&sc.join("right.dsrast")),
        "--rpc-left",
        s(&bad),
        "--rpc-right",
        s(&sc.join("right.rpc.json")),
        "--out-dir",
        s(w.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["error"], "MissingCoefficient");

    // a disparity map holding both signs
    let bip = w.path().join("bip.pfm");
    let r = diastereo::Raster::new(2, 1, 1, vec![-1.0, 2.0]).unwrap();
    diastereo::raster::write_raster(&r, &bip, diastereo::RasterFormat::Pfm).unwrap();
    let out = w.path().join("imp.pfm");
    let o = run(&["import-disp", "--in", s(&bip), "--out", s(&out), "--strict-unipolar"]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(diagnostic(&o)["error"], "BipolarDisparityError");
    let o = run(&["import-disp", "--in", s(&bip), "--out", s(&out), "--negate"]);
    assert!(o.status.success());
    assert_eq!(read_raster(&out).unwrap().data(), &[1.0, -2.0]);
}

#[test]
fn numerical_failures_exit_three() {
    let sc = scene();
    let w = tempfile::tempdir().unwrap();
    let o = run(&[
        "rectify",
        "--left",
        s(&sc.join("left.dsrast")),
        "--right",
        s(&sc.join("left.dsrast")),
        "--rpc-left",
        s(&sc.join("left.rpc.json")),
        "--rpc-right",
        s(&sc.join("left.rpc.json")),
        "--out-dir",
        s(w.path()),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(diagnostic(&o)["error"], "DegenerateGeometry");
}

#[test]
fn pipeline_config_file_with_flag_override() {
    let sc = scene();
    let w = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "left": s(&sc.join("left.dsrast")),
        "right": s(&sc.join("right.dsrast")),
        "rpc-left": s(&sc.join("left.rpc.json")),
        "rpc-right": s(&sc.join("right.rpc.json")),
        "dsm": s(&sc.join("dsm.dsrast")),
        "disp-source": "gt",
        "ref": s(&sc.join("dsm.dsrast")),
        "cell": 1.0,
        "out-dir": "run",
    });
    let path = w.path().join("config.json");
    fs::write(&path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let o = run(&["pipeline", "--config", s(&path), "--cell", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // relative out-dir resolves against the config file; the flag wins over the file
    let dsm = read_raster(w.path().join("run/dsm.dsrast")).unwrap();
    assert_eq!(dsm.geotransform().unwrap().cell_size().0, 0.5);
    let recorded: serde_json::Value = serde_json::from_slice(&fs::read(w.path().join("run/pipeline.json")).unwrap()).unwrap();
    assert_eq!(recorded["cell"], 0.5);

    fs::write(&path, br#"{"unknown-key": 1}"#).unwrap();
    assert_eq!(run(&["pipeline", "--config", s(&path)]).status.code(), Some(2));
}

#[test]
fn curate_and_eval_agg() {
    let w = tempfile::tempdir().unwrap();
    let images = serde_json::json!([
        {"image_id": "a1", "aoi_id": "A", "acq_date": "2015-01-01"},
        {"image_id": "a2", "aoi_id": "A", "acq_date": "2015-01-10"},
        {"image_id": "a3", "aoi_id": "A", "acq_date": "2015-07-01"},
        {"image_id": "b1", "aoi_id": "B", "acq_date": "2016-03-01T10:00:00Z"},
        {"image_id": "b2", "aoi_id": "B", "acq_date": "2017-03-05T10:00:00Z"},
    ]);
    let meta = w.path().join("images.json");
    fs::write(&meta, serde_json::to_vec(&images).unwrap()).unwrap();
    let md = w.path().join("matches");
    fs::create_dir_all(&md).unwrap();
    let csv = |n: usize| {
        let mut t = String::from("# uL,vL,uR,vR,score\n");
        for i in 0..n {
            t.push_str(&format!("{i},1,{i},1,0.9\n"));
        }
        t
    };
    fs::write(md.join("a1_a2.csv"), csv(100)).unwrap();
    fs::write(md.join("a3_a1.csv"), csv(5)).unwrap();
    fs::write(md.join("a2_a3.csv"), csv(60)).unwrap();
    fs::write(md.join("b1_b2.csv"), "# uL,vL,uR,vR,score\n").unwrap();
    let out = w.path().join("manifest.jsonl");
    let args = [
        "curate",
        "--meta",
        s(&meta),
        "--matches-dir",
        s(&md),
        "--dia-per-aoi",
        "1",
        "--sync-per-aoi",
        "1",
        "--seed",
        "7",
        "--out",
        s(&out),
    ];
    let o = run(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(&out).unwrap();
    let entries = read_manifest(std::str::from_utf8(&first).unwrap()).unwrap();
    // A: a1-a2 is 9 days apart with many matches; a1-a3 is half a year apart
    // with 5 matches; a2-a3 fails one rule only. B: exactly a year apart.
    let find = |l: &str, r: &str| entries.iter().find(|e| e.left_id == l && e.right_id == r);
    assert_eq!(find("a1", "a2").unwrap().label.to_string(), "synchronic");
    assert_eq!(find("a1", "a3").unwrap().label.to_string(), "diachronic");
    assert!(find("a2", "a3").is_none());
    // B's only pair is unlabeled-ambiguous; quota shortfalls are warnings
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("InsufficientPairs"), "{err}");
    assert!(run(&args).status.success());
    assert_eq!(fs::read(&out).unwrap(), first, "manifest depends only on inputs and seed");

    // eval-agg over reports grouped by directory
    let reports = w.path().join("reports");
    for (aoi, maes) in [("A", vec![1.0, 2.0, 4.0]), ("B", vec![3.0, 5.0])] {
        fs::create_dir_all(reports.join(aoi)).unwrap();
        for (i, m) in maes.iter().enumerate() {
            let r = serde_json::json!({"pair_id": format!("p{i}"), "mae_m": m, "rmse_m": m, "completeness": 1.0, "n_eval": 10});
            fs::write(reports.join(aoi).join(format!("p{i}.json")), serde_json::to_vec(&r).unwrap()).unwrap();
        }
    }
    let summary = w.path().join("summary.json");
    let o = run(&["eval-agg", "--reports", s(&reports), "--json", s(&summary)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&summary).unwrap()).unwrap();
    // medians 2 and 4: mean 3, population std 1
    assert_eq!(v["dataset_mean"], 3.0);
    assert_eq!(v["dataset_std"], 1.0);
    assert_eq!(v["aois"][0]["aoi_id"], "A");
    let empty = w.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    assert_eq!(run(&["eval-agg", "--reports", s(&empty)]).status.code(), Some(2));
}
