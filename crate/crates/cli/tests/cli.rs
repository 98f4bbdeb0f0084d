use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn setrend(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_setrend")).args(args).current_dir(dir).env_remove("SETREND_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const HEAD_ON: &str = r#"{
    "name": "head-on",
    "regions": [{"type": "ball", "center": [0, 0], "radius": 5}, {"type": "ball", "center": [0, 0], "radius": 5}],
    "graph": {"nodes": 2, "edges": []},
    "controller": {"law": "collision", "k": 0.001, "R": 2, "r": 0.2},
    "initial": {"q": [[-1, 0], [1, 0]], "qdot": [[40, 0], [-40, 0]]},
    "dt": 0.01, "t_end": 1
}"#;

/// Ring on nodes 1–4 plus a path to node 5 that is never active.
const ISOLATED: &str = r#"{
    "name": "isolated",
    "regions": [
        {"type": "ball", "center": [0, 0], "radius": 1},
        {"type": "ball", "center": [0, 0], "radius": 1},
        {"type": "ball", "center": [0, 0], "radius": 1},
        {"type": "ball", "center": [0, 0], "radius": 1},
        {"type": "ball", "center": [0, 0], "radius": 1}
    ],
    "schedule": {
        "graphs": [
            {"nodes": 5, "edges": [[1, 2, 1], [2, 3, 1]]},
            {"nodes": 5, "edges": [[3, 4, 1], [4, 1, 1]]}
        ],
        "switch_times": [0, 5, 10, 15],
        "period": [0, 1],
        "dwell": 5
    },
    "controller": {"law": "fixed", "k": 1},
    "initial": {"q": [[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]], "qdot": [[0, 0], [0, 0], [0, 0], [0, 0], [0, 0]]},
    "t_end": 20
}"#;

#[test]
fn run_writes_artifacts_and_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = setrend(&["run", "paper_4c1_circles.json", "--t-end", "2", "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trajectory.csv", "report.json", "trails.svg", "speed.svg", "min_pairwise.svg", "lyapunov.svg"] {
        assert!(dir.path().join("o").join(f).is_file(), "{f} missing");
    }
    let csv = fs::read_to_string(dir.path().join("o/trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,agent,qx,qy,"));
    assert!(stdout(&o).contains("termination   completed"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = setrend(&["run", "paper_5b_star.json", "--t-end", "3", "--out", out], dir.path());
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["trajectory.csv", "report.json", "trails.svg"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn invalid_gain_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = setrend(&["run", "paper_4c2_switching.json", "--k", "1", "--t-end", "1"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold"));
    let bad = write(dir.path(), "bad.json", r#"{"name": "x", "unknown": 1}"#);
    assert_eq!(setrend(&["run", &bad], dir.path()).status.code(), Some(3));
    assert_eq!(setrend(&["run", "missing.json"], dir.path()).status.code(), Some(3));
}

#[test]
fn safety_violation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = write(dir.path(), "head_on.json", HEAD_ON);
    let o = setrend(&["run", &path, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(String::from_utf8_lossy(&o.stderr).contains("safety"));
    assert!(dir.path().join("o/report.json").is_file());
}

#[test]
fn check_graph_reports_joint_connectivity() {
    let dir = tempfile::tempdir().unwrap();
    let o = setrend(&["check-graph", "paper_4c2_switching.json", "--window", "10"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("UJC=true"), "{text}");
    assert!(text.contains("exceeds threshold = true"));

    let path = write(dir.path(), "isolated.json", ISOLATED);
    let o = setrend(&["check-graph", &path, "--window", "10"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("UJC=false"), "{text}");
    assert!(text.contains("components 3"));
}

#[test]
fn replicate_nonconvex_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = setrend(&["replicate", "4c3", "--out", "r"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS 4c3 aggregation not achieved"));
    assert!(text.trim_end().ends_with("PASS"));
    assert!(dir.path().join("r/4c3/paper_4c3_nonconvex/report.json").is_file());
}
