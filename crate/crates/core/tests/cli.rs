use std::path::{Path, PathBuf};
use std::process::Command;

use nalgebra::DMatrix;
use serde_json::{json, Value};
use tempfile::TempDir;
use varineq::cli::report::{emit_report, parse_report, Certificate, Format, Status};
use varineq::cli::schema::{parse_problem, ProblemFile};
use varineq::cli::{bimatrix_file, canonical_write, revalidate, run_file, Action, Flags};
use varineq::games::{support_enumeration, SvVerdict};
use varineq::vi::Verdict;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_varineq"))
}

fn write(dir: &TempDir, name: &str, v: &Value) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, serde_json::to_vec_pretty(v).unwrap()).unwrap();
    p
}

fn flags(path: &Path) -> Flags {
    Flags {
        problem: path.to_path_buf(),
        no_timing: true,
        ..Flags::default()
    }
}

fn pennies() -> (DMatrix<f64>, DMatrix<f64>) {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
    (a.clone(), -a)
}

fn empty_vi() -> Value {
    json!({
        "version": "1",
        "kind": "vi",
        "payload": {
            "set": {"kind": "polyhedron", "a": [[1.0], [-1.0]], "b": [-1.0, -1.0], "bbox": {"lo": [-2.0], "hi": [2.0]}},
            "operator": {"kind": "affine", "matrix": [[1.0]], "offset": [0.0]}
        },
        "tolerances": {"beta": 1e-3}
    })
}

#[test]
fn matching_pennies_reduce_then_solve() {
    let dir = TempDir::new().unwrap();
    let (a, b) = pennies();
    let game = write(&dir, "game.json", &bimatrix_file(&a, &b, 1e-3).to_json());
    let vi = dir.path().join("vi.json");
    let status = bin().args(["reduce"]).arg(&game).arg("--out").arg(&vi).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let (file, _) = parse_problem(&vi, false).unwrap();
    assert_eq!(file.kind.name(), "vi");

    let out = run_file(Action::Solve, &vi, &flags(&vi), None).unwrap().unwrap();
    assert_eq!(out.report.status, Status::Solved);
    let Certificate::Solution(c) = &out.report.certificate else { panic!() };
    assert!(c.residual[0] >= -1e-3);
    // the unique equilibrium from support enumeration
    let eqs = support_enumeration(&a, &b);
    assert_eq!(eqs.len(), 1);
    let (p, q) = &eqs[0];
    let truth: Vec<f64> = p.iter().chain(q.iter()).copied().collect();
    let gap = c.x_star.iter().zip(&truth).map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
    assert!(gap < 0.02, "{gap}");
}

#[test]
fn bad_candidate_is_rejected_with_entries() {
    let dir = TempDir::new().unwrap();
    let (a, b) = pennies();
    let game = write(&dir, "game.json", &bimatrix_file(&a, &b, 1e-3).to_json());
    let cand = write(&dir, "cand.json", &json!({"profile": [1.0, 0.0, 1.0, 0.0]}));
    let out = bin().arg("check").arg(&game).arg("--candidate").arg(&cand).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let report = parse_report(&out.stdout).unwrap();
    assert_eq!(report.status, Status::Rejected);
    let Certificate::Checked { verdict: Verdict::Reject(entries), .. } = report.certificate else { panic!() };
    assert!(!entries.is_empty());
}

#[test]
fn gadget_then_check_uniform_profile() {
    let dir = TempDir::new().unwrap();
    let cnf = dir.path().join("phi.cnf");
    std::fs::write(&cnf, "c satisfiable\np cnf 3 2\n1 2 3 0\n-1 2 -3 0\n").unwrap();
    let game = dir.path().join("game.json");
    let status = bin().arg("gadget").arg(&cnf).arg("--out").arg(&game).status().unwrap();
    assert_eq!(status.code(), Some(0));
    // x1 = false, x2 = true, x3 = false satisfies both clauses
    let cand = write(&dir, "cand.json", &json!({"assignment": [false, true, false]}));
    let out = run_file(Action::Check, &game, &flags(&game), Some(&serde_json::from_slice(&std::fs::read(&cand).unwrap()).unwrap()))
        .unwrap()
        .unwrap();
    assert_eq!(out.report.status, Status::Accepted);
    let Certificate::Gadget { verdict: SvVerdict::Accept { payoff }, .. } = out.report.certificate else { panic!() };
    assert_eq!(payoff, 3 - 1);
}

#[test]
fn empty_set_exit_code_and_text() {
    let dir = TempDir::new().unwrap();
    let vi = write(&dir, "vi.json", &empty_vi());
    let out = bin().arg("solve").arg(&vi).arg("--format").arg("text").output().unwrap();
    assert_eq!(out.status.code(), Some(4));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("status:   empty"), "{text}");
    assert!(text.contains("set index 0"), "{text}");
}

#[test]
fn emptiness_certificate_revalidates_from_report() {
    let dir = TempDir::new().unwrap();
    let vi = write(&dir, "vi.json", &empty_vi());
    let out = bin().arg("solve").arg(&vi).arg("--no-timing").output().unwrap();
    let report = parse_report(&out.stdout).unwrap();
    assert_eq!(report.status, Status::Empty);
    let (file, _) = parse_problem(&vi, false).unwrap();
    assert!(revalidate(&file, &report).unwrap());
    // check on the saved report reproduces the status
    let saved = dir.path().join("report.json");
    std::fs::write(&saved, &out.stdout).unwrap();
    let again = bin().arg("check").arg(&vi).arg("--candidate").arg(&saved).status().unwrap();
    assert_eq!(again.code(), Some(4));
}

#[test]
fn schema_and_usage_exit_codes() {
    let dir = TempDir::new().unwrap();
    let mut v = empty_vi();
    v["tolerances"] = json!({});
    let bad = write(&dir, "bad.json", &v);
    let out = bin().arg("solve").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(65));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/tolerances/beta"));

    let good = write(&dir, "vi.json", &empty_vi());
    assert_eq!(bin().arg("gadget").arg(&good).status().unwrap().code(), Some(64));
    assert_eq!(bin().arg("check").arg(&good).status().unwrap().code(), Some(64));
    assert_eq!(bin().arg("frobnicate").status().unwrap().code(), Some(64));

    v = empty_vi();
    v["payload"]["extra"] = json!(1);
    let unknown = write(&dir, "unknown.json", &v);
    assert_eq!(bin().arg("solve").arg(&unknown).status().unwrap().code(), Some(65));
    let lenient = bin().arg("solve").arg(&unknown).arg("--lenient").output().unwrap();
    assert_eq!(lenient.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&lenient.stderr).contains("/payload/extra"));
}

#[test]
fn reports_are_deterministic_without_timing() {
    let dir = TempDir::new().unwrap();
    let (a, b) = pennies();
    let game = write(&dir, "game.json", &bimatrix_file(&a, &b, 1e-3).to_json());
    let run = || bin().arg("solve").arg(&game).arg("--no-timing").arg("--seed").arg("7").output().unwrap().stdout;
    let first = run();
    assert_eq!(first, run());
    let parsed = parse_report(&first).unwrap();
    assert_eq!(parsed.seed, 7);
    assert_eq!(emit_report(&parsed, Format::Json).unwrap(), first);
    let (file, _) = parse_problem(&game, false).unwrap();
    assert!(revalidate(&file, &parsed).unwrap());
}

#[test]
fn resilience_solve_on_quadratic_game() {
    let dir = TempDir::new().unwrap();
    // u_i = −(x_i − c_i)² + 0.1 x_i x_j: separable enough to solve exactly
    let util = |i: usize, c: f64| {
        let mut q = [[0.0; 3]; 3];
        q[i][i] = -2.0;
        q[i][(i + 1) % 3] = 0.1;
        let mut l = [0.0; 3];
        l[i] = 2.0 * c;
        json!({"kind": "quadratic", "q": q, "linear": l, "constant": 0.0})
    };
    let game = json!({
        "version": "1",
        "kind": "game",
        "payload": {
            "blocks": [1, 1, 1],
            "utilities": [util(0, 0.2), util(1, 0.5), util(2, 0.8)],
            "strategy_sets": [
                {"kind": "box", "lo": [0.0], "hi": [1.0]},
                {"kind": "box", "lo": [0.0], "hi": [1.0]},
                {"kind": "box", "lo": [0.0], "hi": [1.0]}
            ]
        },
        "tolerances": {"beta": 1e-3}
    });
    let path = write(&dir, "game.json", &game);
    let mut f = flags(&path);
    f.t = Some(1);
    let out = run_file(Action::Solve, &path, &f, None).unwrap().unwrap();
    assert_eq!(out.report.status, Status::Accepted);
    let (file, _) = parse_problem(&path, false).unwrap();
    assert!(revalidate(&file, &out.report).unwrap());
    // the reduced MVI has one column per (coalition, member, block)
    let mvi = dir.path().join("mvi.json");
    let status = bin().arg("reduce").arg(&path).arg("--t").arg("2").arg("--out").arg(&mvi).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let (m, _) = parse_problem(&mvi, false).unwrap();
    assert_eq!(m.payload["columns"].as_array().unwrap().len(), 3 + 3 * 4);
}

#[test]
fn mlf_solve_and_check() {
    let dir = TempDir::new().unwrap();
    let q = |a: f64, b: f64| json!([[a, 0.0, 0.0], [0.0, b, 0.0], [0.0, 0.0, 2.0]]);
    let mlf = json!({
        "version": "1",
        "kind": "mlf",
        "payload": {
            "followers": [{
                "m": [[1.0]], "a_i": [], "a_ii": [], "b": [[]], "c_i": [], "c_ii": [], "d": [],
                "c_map": [[1.0, 1.0]], "c_offset": [0.0]
            }],
            "leader_sets": [{"kind": "box", "lo": [-1.0], "hi": [1.0]}, {"kind": "box", "lo": [-1.0], "hi": [1.0]}],
            "losses": [
                {"kind": "quadratic", "q": q(2.0, 0.0), "linear": [-1.0, 0.0, 0.0], "constant": 0.25},
                {"kind": "quadratic", "q": q(0.0, 2.0), "linear": [0.0, 1.0, 0.0], "constant": 0.25}
            ],
            "follower_box": {"lo": [-10.0], "hi": [10.0]},
            "multiplier_bound": 100.0
        },
        "tolerances": {"beta": 1e-2}
    });
    let path = write(&dir, "mlf.json", &mlf);
    let cand = json!({"x_i": [0.5], "y_i": [0.0], "x_ii": [-0.5], "y_ii": [0.0]});
    let out = run_file(Action::Check, &path, &flags(&path), Some(&cand)).unwrap().unwrap();
    assert_eq!(out.report.status, Status::Accepted);
    let solved = run_file(Action::Solve, &path, &flags(&path), None).unwrap().unwrap();
    assert_eq!(solved.report.status, Status::Solved);
    let Certificate::Remedial { x_i, x_ii, .. } = &solved.report.certificate else { panic!() };
    assert!((x_i[0] - 0.5).abs() < 0.05 && (x_ii[0] + 0.5).abs() < 0.05, "{x_i:?} {x_ii:?}");
    let (file, _) = parse_problem(&path, false).unwrap();
    assert!(revalidate(&file, &solved.report).unwrap());
}

#[test]
fn cnf_solve_and_unsat() {
    let dir = TempDir::new().unwrap();
    let sat = write(&dir, "sat.json", &json!({"version": "1", "kind": "cnf", "payload": {"n": 2, "clauses": [[1, 2, 2], [-1, -1, 2]]}, "tolerances": {"beta": 1e-3}}));
    let out = run_file(Action::Solve, &sat, &flags(&sat), None).unwrap().unwrap();
    let Certificate::Assignment { assignment, satisfied: true } = &out.report.certificate else { panic!() };
    assert!(assignment[1]);
    let clauses: Vec<[i64; 3]> = vec![[1, 1, 1], [-1, -1, -1]];
    let unsat = write(&dir, "unsat.json", &json!({"version": "1", "kind": "cnf", "payload": {"n": 1, "clauses": clauses}, "tolerances": {"beta": 1e-3}}));
    let out = run_file(Action::Solve, &unsat, &flags(&unsat), None).unwrap().unwrap();
    assert_eq!(out.report.status, Status::Rejected);
    let (file, _): (ProblemFile, _) = parse_problem(&unsat, false).unwrap();
    assert!(revalidate(&file, &out.report).unwrap());
}

#[test]
fn reduce_output_is_canonical() {
    let dir = TempDir::new().unwrap();
    let (a, b) = pennies();
    let game = write(&dir, "game.json", &bimatrix_file(&a, &b, 1e-3).to_json());
    let out = bin().arg("reduce").arg(&game).output().unwrap();
    let (file, _) = varineq::cli::schema::parse_problem_bytes(&out.stdout, false, false).unwrap();
    assert_eq!(canonical_write(&file), out.stdout);
}
