//! CLI behavior: exit codes, error messages, determinism, and cross-checks
//! of command output against library oracles.

use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use nalgebra::DMatrix;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_pose9d")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn tmp_path(name: &str) -> PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("pose9d-cli-{}-{name}", std::process::id()));
    p
}

fn default_config_json() -> serde_json::Value {
    serde_json::from_str(include_str!("default_config.json")).unwrap()
}

fn write_scene_file(path: &PathBuf, lines: &[String]) {
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

/// A single-object scene whose prediction sits at the ground-truth pose
/// shifted by `dx` laterally and `dz` in depth.
fn scene_line(id: &str, conf: f64, dx: f64, dz: f64) -> String {
    let rot = "[1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0]";
    format!(
        concat!(
            "{{\"schema_version\":\"1\",\"scene_id\":\"{id}\",",
            "\"intrinsics\":{{\"fx\":600.0,\"fy\":600.0,\"cx\":320.0,\"cy\":240.0,",
            "\"width\":640.0,\"height\":480.0}},",
            "\"gts\":[{{\"category\":\"mug\",\"pose\":{{\"rotation\":{rot},",
            "\"translation\":[0.0,0.0,2.0],\"scale\":[0.2,0.2,0.2]}}}}],",
            "\"preds\":[{{\"category\":\"mug\",\"confidence\":{conf},",
            "\"pose\":{{\"rotation\":{rot},\"translation\":[{x},0.0,{z}],",
            "\"scale\":[0.2,0.2,0.2]}}}}]}}"
        ),
        id = id,
        conf = conf,
        x = dx,
        z = 2.0 + dz,
        rot = rot
    )
}

#[test]
fn malformed_line_exits_2_and_cites_line() {
    let scenes = tmp_path("malformed.jsonl");
    let mut lines: Vec<String> = (0..6).map(|i| scene_line(&format!("s{i}"), 0.9, 0.0, 0.0)).collect();
    lines.push("{this is not json".to_string());
    write_scene_file(&scenes, &lines);

    let out = run(&["evaluate", "--scenes", scenes.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 7"), "stderr: {stderr}");
    let _ = fs::remove_file(&scenes);
}

#[test]
fn invariant_violation_exits_3() {
    let scenes = tmp_path("invariant.jsonl");
    write_scene_file(&scenes, &[scene_line("s0", 1.5, 0.0, 0.0)]);
    let out = run(&["evaluate", "--scenes", scenes.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("confidence"), "stderr: {stderr}");
    let _ = fs::remove_file(&scenes);
}

#[test]
fn missing_file_exits_4() {
    let out = run(&["evaluate", "--scenes", "/nonexistent/scenes.jsonl"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn bad_config_exits_2() {
    let config = tmp_path("bad-config.json");
    let mut v = default_config_json();
    v.as_object_mut()
        .unwrap()
        .insert("unknown_key".into(), serde_json::Value::Bool(true));
    fs::write(&config, serde_json::to_string(&v).unwrap()).unwrap();

    let scenes = tmp_path("ok.jsonl");
    write_scene_file(&scenes, &[scene_line("s0", 0.9, 0.0, 0.0)]);
    let out = run(&[
        "evaluate",
        "--scenes",
        scenes.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let _ = fs::remove_file(&config);
    let _ = fs::remove_file(&scenes);
}

#[test]
fn synth_is_deterministic_and_zero_count_is_valid() {
    let a = tmp_path("synth-a.jsonl");
    let b = tmp_path("synth-b.jsonl");
    for path in [&a, &b] {
        let out = run(&[
            "synth",
            "--count",
            "20",
            "--seed",
            "5",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let empty = tmp_path("synth-empty.jsonl");
    let out = run(&["synth", "--count", "0", "--out", empty.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(fs::read_to_string(&empty).unwrap(), "");
    // An empty file evaluates to an all-zero report rather than an error.
    let out = run(&["evaluate", "--scenes", empty.to_str().unwrap()]);
    assert!(out.status.success());

    for p in [a, b, empty] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn match_dump_matches_brute_force_oracle() {
    let scenes_path = tmp_path("match-scenes.jsonl");
    let out_path = tmp_path("match-report.json");
    let synth = run(&[
        "synth",
        "--count",
        "6",
        "--seed",
        "11",
        "--out",
        scenes_path.to_str().unwrap(),
    ]);
    assert!(synth.status.success());

    let out = run(&[
        "match",
        "--scenes",
        scenes_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    // Rebuild each scene's cost matrix with the library and verify the CLI's
    // total equals the exhaustive optimum.
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let file = fs::File::open(&scenes_path).unwrap();
    let mut scenes = pose9d::scene::parse_scenes(std::io::BufReader::new(file)).unwrap();
    pose9d::scene::derive_boxes(&mut scenes, false);
    let cats: Vec<String> = pose9d::metrics::DEFAULT_CATEGORIES
        .iter()
        .map(|s| s.to_string())
        .collect();
    let table = pose9d::metrics::default_symmetry_table();

    for (scene, dump) in scenes.iter().zip(report["scenes"].as_array().unwrap()) {
        if scene.gts.len() > 8 || scene.gts.is_empty() {
            continue;
        }
        let preds: Vec<pose9d::matching::MatchCandidate> = scene
            .preds
            .iter()
            .map(|p| {
                let mut probs = vec![0.0; cats.len()];
                probs[cats.iter().position(|c| c == &p.category).unwrap()] = p.confidence;
                pose9d::matching::MatchCandidate {
                    class_probs: probs,
                    bbox: p.bbox.unwrap(),
                    pose: p.pose,
                }
            })
            .collect();
        let gts: Vec<pose9d::matching::GtLabel> = scene
            .gts
            .iter()
            .map(|g| pose9d::matching::GtLabel {
                class_index: cats.iter().position(|c| c == &g.category).unwrap(),
                bbox: g.bbox.unwrap(),
                pose: g.pose,
            })
            .collect();
        let syms: Vec<pose9d::SymmetrySpec> = scene
            .gts
            .iter()
            .map(|g| table.get(&g.category).cloned().unwrap_or(pose9d::SymmetrySpec::None))
            .collect();
        let cost: DMatrix<f64> = pose9d::matching::build_cost_matrix(
            &preds,
            &gts,
            &pose9d::matching::CostWeights::default(),
            &syms,
        )
        .unwrap();
        let oracle = pose9d::matching::brute_force_assignment(&cost).unwrap();
        let oracle_total = pose9d::matching::assignment_cost(&cost, &oracle);
        let cli_total = dump["total_cost"].as_f64().unwrap();
        assert!(
            (cli_total - oracle_total).abs() < 1e-9,
            "scene {}: cli {cli_total} vs oracle {oracle_total}",
            scene.scene_id
        );
    }

    let _ = fs::remove_file(&scenes_path);
    let _ = fs::remove_file(&out_path);
}

#[test]
fn translation_only_weights_assign_by_nearest_translation() {
    // Two ground truths at x = 0 and x = 1; two predictions slightly off.
    // With only the translation term active, assignment follows proximity.
    let rot = "[1.0,0.0,0.0,0.0,1.0,0.0,0.0,0.0,1.0]";
    let line = format!(
        concat!(
            "{{\"schema_version\":\"1\",\"scene_id\":\"s0\",",
            "\"intrinsics\":{{\"fx\":600.0,\"fy\":600.0,\"cx\":320.0,\"cy\":240.0,",
            "\"width\":640.0,\"height\":480.0}},",
            "\"gts\":[",
            "{{\"category\":\"mug\",\"pose\":{{\"rotation\":{rot},\"translation\":[0.0,0.0,2.0],\"scale\":[0.2,0.2,0.2]}}}},",
            "{{\"category\":\"mug\",\"pose\":{{\"rotation\":{rot},\"translation\":[1.0,0.0,2.0],\"scale\":[0.2,0.2,0.2]}}}}",
            "],",
            "\"preds\":[",
            "{{\"category\":\"mug\",\"confidence\":0.9,\"pose\":{{\"rotation\":{rot},\"translation\":[0.9,0.0,2.0],\"scale\":[0.2,0.2,0.2]}}}},",
            "{{\"category\":\"mug\",\"confidence\":0.9,\"pose\":{{\"rotation\":{rot},\"translation\":[0.1,0.0,2.0],\"scale\":[0.2,0.2,0.2]}}}}",
            "]}}"
        ),
        rot = rot
    );
    let scenes = tmp_path("trans-only.jsonl");
    write_scene_file(&scenes, &[line]);

    let config = tmp_path("trans-only-config.json");
    let mut v = default_config_json();
    v["cost_weights"] = serde_json::json!({
        "lambda_cls": 0.0, "lambda_bbox": 0.0, "lambda_iou": 0.0,
        "lambda_trans": 1.0, "lambda_rot": 0.0
    });
    fs::write(&config, serde_json::to_string(&v).unwrap()).unwrap();

    let out_path = tmp_path("trans-only-report.json");
    let out = run(&[
        "match",
        "--scenes",
        scenes.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let pairs = report["scenes"][0]["pairs"].as_array().unwrap();
    let mut mapping: Vec<(u64, u64)> = pairs
        .iter()
        .map(|p| (p["pred"].as_u64().unwrap(), p["gt"].as_u64().unwrap()))
        .collect();
    mapping.sort();
    assert_eq!(mapping, vec![(0, 1), (1, 0)]);
    let total = report["scenes"][0]["total_cost"].as_f64().unwrap();
    assert!((total - 0.2).abs() < 1e-9, "total {total}");

    for p in [scenes, config, out_path] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn report_config_round_trips() {
    let scenes = tmp_path("roundtrip.jsonl");
    write_scene_file(&scenes, &[scene_line("s0", 0.9, 0.0, 0.0)]);
    let out_path = tmp_path("roundtrip-report.json");
    let out = run(&[
        "evaluate",
        "--scenes",
        scenes.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    // The embedded config re-parses and equals the shipped defaults.
    let echoed = serde_json::to_string(&report["config"]).unwrap();
    let reference = serde_json::to_string(&default_config_json()).unwrap();
    assert_eq!(echoed, reference);

    let _ = fs::remove_file(&scenes);
    let _ = fs::remove_file(&out_path);
}

#[test]
fn losses_aggregate_is_sum_of_scenes() {
    let scenes = tmp_path("losses-agg.jsonl");
    write_scene_file(
        &scenes,
        &[
            scene_line("a", 0.9, 0.05, 0.3),
            scene_line("b", 0.8, 0.0, 0.1),
            scene_line("c", 0.7, 0.1, 0.0),
        ],
    );
    let out_path = tmp_path("losses-agg-report.json");
    let out = run(&[
        "losses",
        "--scenes",
        scenes.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
    let scenes_arr = report["scenes"].as_array().unwrap();
    assert_eq!(scenes_arr.len(), 3);
    for field in ["cls", "bbox", "iou", "center2d", "depth", "rot", "scale", "total"] {
        let sum: f64 = scenes_arr
            .iter()
            .map(|s| s["breakdown"][field].as_f64().unwrap())
            .sum();
        let agg = report["aggregate"][field].as_f64().unwrap();
        assert_eq!(agg, sum, "aggregate {field} must be the plain sum");
    }

    let _ = fs::remove_file(&scenes);
    let _ = fs::remove_file(&out_path);
}

#[test]
fn losses_scale_linearly_with_weights() {
    let scenes = tmp_path("losses.jsonl");
    // Prediction offset in depth so the depth term is nonzero.
    write_scene_file(&scenes, &[scene_line("s0", 0.9, 0.0, 0.5)]);

    let run_with_depth_weight = |w: f64| -> serde_json::Value {
        let config = tmp_path(&format!("losses-config-{w}.json"));
        let mut v = default_config_json();
        v["loss_weights"]["w_depth"] = serde_json::json!(w);
        fs::write(&config, serde_json::to_string(&v).unwrap()).unwrap();
        let out_path = tmp_path(&format!("losses-report-{w}.json"));
        let out = run(&[
            "losses",
            "--scenes",
            scenes.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            out_path.to_str().unwrap(),
        ]);
        assert!(
            out.status.success(),
            "stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        let report = serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
        let _ = fs::remove_file(&config);
        let _ = fs::remove_file(&out_path);
        report
    };

    let base = run_with_depth_weight(50.0);
    let doubled = run_with_depth_weight(100.0);
    let term = base["aggregate"]["depth"].as_f64().unwrap();
    assert!(term > 0.0, "depth term should be nonzero");
    assert_eq!(
        doubled["aggregate"]["depth"].as_f64().unwrap(),
        term,
        "raw term is weight-independent"
    );
    let t0 = base["aggregate"]["total"].as_f64().unwrap();
    let t1 = doubled["aggregate"]["total"].as_f64().unwrap();
    assert!(
        ((t1 - t0) - 50.0 * term).abs() < 1e-9,
        "doubling w_depth must add exactly 50 x depth term"
    );

    let _ = fs::remove_file(&scenes);
}
