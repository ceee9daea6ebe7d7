//! End-to-end runs of the `pnp-tamp` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pnp_tamp::geometry::{Aabb, Vec3};
use pnp_tamp::tamp::{relaxed_indicator_count, Delivery, EndEffector, Scenario, SCENARIO_SCHEMA};
use serde_json::Value;

fn desk(deliveries: Vec<Delivery>) -> Scenario {
    Scenario {
        schema: SCENARIO_SCHEMA.into(),
        workspace: Aabb::new(Vec3::new(0.4, 0.0, 0.15), Vec3::new(0.8, 0.4, 0.3)),
        end_effectors: vec![EndEffector {
            width_m: Vec3::splat(0.05),
            initial_m: Vec3::new(0.4, 0.0, 0.25),
            max_speed_mps: Vec3::new(0.4, 0.2, 0.2),
            margin_m: Vec3::new(0.0, 0.0, 0.02),
        }],
        deliveries,
        obstacles: vec![Aabb::new(Vec3::new(0.4, 0.0, 0.08), Vec3::new(0.06, 0.16, 0.1))],
    }
}

fn block(start: Vec3, target: Vec3) -> Delivery {
    Delivery { width_m: Vec3::new(0.05, 0.05, 0.04), initial_m: start, target_m: target }
}

fn one_block() -> Scenario {
    desk(vec![block(Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.65, -0.1, 0.02))])
}

fn save(dir: &Path, name: &str, s: &Scenario) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, s.to_json()).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pnp-tamp")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn plan_then_verify_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = save(dir.path(), "scene.json", &one_block());
    let plan = dir.path().join("plan.json");
    let trace = dir.path().join("trace.csv");
    let o = run(&[
        "plan", "--scenario", s(&scenario), "--variant", "hard", "--steps", "10",
        "--branching", "lowest_index", "--out", s(&plan), "--trace", s(&trace),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stats: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["status"], "optimal");
    assert_eq!(stats["verified"], true);
    assert!(stats["completion_step"].as_u64().unwrap() <= 10);
    assert!(std::fs::read_to_string(&trace).unwrap().starts_with("t,i,x,y,z,action"));

    let o = run(&["verify", "--plan", s(&plan), "--scenario", s(&scenario)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    // drag the gripper through the obstacle at one step
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    doc["ee_pos_m"][0][3] = serde_json::json!([0.4, 0.0, 0.08]);
    std::fs::write(&plan, doc.to_string()).unwrap();
    let o = run(&["verify", "--plan", s(&plan), "--scenario", s(&scenario)]);
    assert_eq!(code(&o), 1);
}

#[test]
fn soft_variant_reports_route_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = save(dir.path(), "scene.json", &one_block());
    let plan = dir.path().join("plan.json");
    let o = run(&[
        "plan", "--scenario", s(&scenario), "--variant", "hard_soft", "--steps", "10",
        "--branching", "lowest_index", "--out", s(&plan),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let stats: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(stats["j_route"].as_f64().is_some());
}

#[test]
fn inspect_shows_the_binary_reduction() {
    let dir = tempfile::tempdir().unwrap();
    let two = desk(vec![
        block(Vec3::new(0.15, 0.1, 0.02), Vec3::new(0.65, -0.1, 0.02)),
        block(Vec3::new(0.6, 0.1, 0.02), Vec3::new(0.2, -0.1, 0.02)),
    ]);
    let scenario = save(dir.path(), "two.json", &two);
    let binaries = |variant: &str| {
        let o = run(&["inspect", "--scenario", s(&scenario), "--variant", variant, "--steps", "4"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v: Value = serde_json::from_slice(&o.stdout).unwrap();
        assert!(v["report"]["per_tag"]["ee_dynamics"].as_u64().unwrap() > 0);
        v["report"]["binaries"].as_u64().unwrap() as usize
    };
    assert_eq!(binaries("baseline") - binaries("hard"), relaxed_indicator_count(2, 1, 6, 4));
}

#[test]
fn delivery_inside_obstacle_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = one_block();
    bad.deliveries.push(block(Vec3::new(0.4, 0.0, 0.05), Vec3::new(0.6, 0.1, 0.02)));
    let scenario = save(dir.path(), "bad.json", &bad);
    let o = run(&["plan", "--scenario", s(&scenario), "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("delivery 1"));
}

#[test]
fn too_short_horizon_is_infeasible() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = save(dir.path(), "scene.json", &one_block());
    let o = run(&["plan", "--scenario", s(&scenario), "--steps", "2", "--out", s(&dir.path().join("p.json"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bad_input_exits_with_input_code() {
    let o = run(&["plan", "--scenario", "/nonexistent/scene.json", "--out", "/tmp/unused.json"]);
    assert_eq!(code(&o), 4);
    let dir = tempfile::tempdir().unwrap();
    let scenario = save(dir.path(), "scene.json", &one_block());
    let o = run(&["inspect", "--scenario", s(&scenario), "--steps", "0"]);
    assert_eq!(code(&o), 4);
}

#[test]
fn bench_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    let o = run(&[
        "bench", "--seed", "5", "--instances", "2", "--n-dlv", "1", "--steps", "6",
        "--variants", "baseline,hard", "--branching", "lowest_index", "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let records = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + 2 * 2);
    assert!(records.lines().next().unwrap().starts_with("scenario_id,"));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["groups"].as_array().unwrap().len(), 2);
    assert!(out.join("scenarios/0000.json").exists());
}
