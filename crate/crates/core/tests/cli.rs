//! End-to-end tests of the command-line interface: file layouts, manifest
//! contents, and exit-code conventions (0 success, 1 runtime failure,
//! 2 usage error).

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gamblet"))
}

fn read_json(path: impl AsRef<Path>) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_problem_fem2d_layout() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let status = bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "3"])
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    for file in [
        "A.mtx",
        "b_smooth.mtx",
        "b_dirac.mtx",
        "coeff.mtx",
        "problem.json",
    ] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    // 2^q × 2^q interior nodes → 64 rows at q = 3
    let a = gamblet::sparse::mm::read_matrix(out.join("A.mtx")).unwrap();
    assert_eq!(a.nrows(), 64);
    let meta = read_json(out.join("problem.json"));
    assert_eq!(meta["n"].as_u64(), Some(64));
    assert_eq!(meta["q"].as_u64(), Some(3));
    assert!(meta["contrast"].as_f64().unwrap() > 1.0);
}

#[test]
fn gen_problem_graph_from_edge_list() {
    let dir = tempfile::tempdir().unwrap();
    let edges = dir.path().join("tri.txt");
    std::fs::write(&edges, "0 1\n1 2\n0 2\n").unwrap();
    let out = dir.path().join("g");
    let status = bin()
        .args(["gen-problem", "--kind", "graph", "--reg", "1e-3"])
        .arg("--edges")
        .arg(&edges)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let a = gamblet::sparse::mm::read_matrix(out.join("A.mtx")).unwrap();
    assert_eq!(a.nrows(), 3);
    assert!((a.get(0, 0) - 2.001).abs() < 1e-12);
    assert_eq!(a.get(0, 1), -1.0);
}

#[test]
fn gen_problem_missing_q_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["gen-problem", "--kind", "fem2d"])
        .arg("--out")
        .arg(dir.path().join("x"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn solve_exact_writes_solution_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "3"])
        .arg("--out")
        .arg(&p)
        .status()
        .unwrap();
    let s = dir.path().join("s");
    let status = bin()
        .args(["solve", "--mode", "exact"])
        .arg("--matrix")
        .arg(p.join("A.mtx"))
        .arg("--rhs")
        .arg(p.join("b_smooth.mtx"))
        .arg("--out")
        .arg(&s)
        .arg("--export-hierarchy")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = read_json(s.join("manifest.json"));
    assert!(manifest["residual"].as_f64().unwrap() <= 1e-8);
    assert_eq!(manifest["mode"].as_str(), Some("exact"));
    assert_eq!(manifest["q"].as_u64(), Some(3));
    assert!(s.join("u.mtx").exists());
    for k in 1..=3 {
        assert!(s.join(format!("subbands/v_{k}.mtx")).exists());
        assert!(s.join(format!("hierarchy/A_{k}.mtx")).exists());
        assert!(s.join(format!("hierarchy/Psi_{k}.mtx")).exists());
    }
    assert!(s.join("hierarchy/B_2.mtx").exists());
    assert!(s.join("hierarchy/R_2.mtx").exists());
}

#[test]
fn solve_fast_full_radius_matches_exact_solution_file() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "3"])
        .arg("--out")
        .arg(&p)
        .status()
        .unwrap();
    let exact_out = dir.path().join("se");
    bin()
        .args(["solve", "--mode", "exact"])
        .arg("--matrix")
        .arg(p.join("A.mtx"))
        .arg("--rhs")
        .arg(p.join("b_smooth.mtx"))
        .arg("--out")
        .arg(&exact_out)
        .status()
        .unwrap();
    let fast_out = dir.path().join("sf");
    let status = bin()
        .args([
            "solve",
            "--mode",
            "fast",
            "--rho",
            "99,99,99",
            "--epsilon",
            "1e-9",
        ])
        .arg("--matrix")
        .arg(p.join("A.mtx"))
        .arg("--rhs")
        .arg(p.join("b_smooth.mtx"))
        .arg("--out")
        .arg(&fast_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let ue = gamblet::sparse::mm::read_vector(exact_out.join("u.mtx")).unwrap();
    let uf = gamblet::sparse::mm::read_vector(fast_out.join("u.mtx")).unwrap();
    let diff: f64 = ue
        .iter()
        .zip(&uf)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = ue.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff <= 1e-8 * scale, "fast/exact mismatch {diff}");
    let manifest = read_json(fast_out.join("manifest.json"));
    assert!(manifest["schedule"]["rho"].as_array().is_some());
    assert!(manifest["nnz_per_level"].as_array().unwrap().len() == 3);
}

#[test]
fn solve_bogus_mode_is_usage_error() {
    let status = bin()
        .args([
            "solve", "--mode", "bogus", "--matrix", "x", "--rhs", "y", "--out", "z",
        ])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn solve_with_exported_and_reloaded_ops() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "3"])
        .arg("--out")
        .arg(&p)
        .status()
        .unwrap();
    let s1 = dir.path().join("s1");
    bin()
        .args(["solve", "--mode", "exact", "--export-ops"])
        .arg("--matrix")
        .arg(p.join("A.mtx"))
        .arg("--rhs")
        .arg(p.join("b_smooth.mtx"))
        .arg("--out")
        .arg(&s1)
        .status()
        .unwrap();
    assert!(s1.join("ops/ops.json").exists());
    assert!(s1.join("ops/pi_1.mtx").exists());
    assert!(s1.join("ops/w_2.mtx").exists());
    // solve again, loading the operators from files (fast mode exercises the
    // tree reconstruction too)
    let s2 = dir.path().join("s2");
    let status = bin()
        .args(["solve", "--mode", "fast", "--epsilon", "1e-6"])
        .arg("--matrix")
        .arg(p.join("A.mtx"))
        .arg("--rhs")
        .arg(p.join("b_smooth.mtx"))
        .arg("--ops")
        .arg(s1.join("ops"))
        .arg("--out")
        .arg(&s2)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let u1 = gamblet::sparse::mm::read_vector(s1.join("u.mtx")).unwrap();
    let u2 = gamblet::sparse::mm::read_vector(s2.join("u.mtx")).unwrap();
    let diff: f64 = u1
        .iter()
        .zip(&u2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    assert!(diff <= 1e-4);
}

#[test]
fn diagnose_conditioning_and_decay() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "4"])
        .arg("--out")
        .arg(&p)
        .status()
        .unwrap();
    let report_path = dir.path().join("report.json");
    let status = bin()
        .args(["diagnose", "--checks", "conditioning,decay"])
        .arg("--problem")
        .arg(&p)
        .arg("--out")
        .arg(&report_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let report = read_json(&report_path);
    for k in 2..=4 {
        assert!(
            report["metrics"][format!("cond_B_{k}")].as_f64().unwrap() > 1.0,
            "cond_B_{k} missing"
        );
    }
    assert!(report["metrics"]["decay_slope_mean"].as_f64().unwrap() < 0.0);
}

#[test]
fn diagnose_rejects_unknown_and_empty_checks() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("p");
    bin()
        .args(["gen-problem", "--kind", "fem2d", "--q", "3"])
        .arg("--out")
        .arg(&p)
        .status()
        .unwrap();
    for checks in ["bogus", ""] {
        let status = bin()
            .args(["diagnose", "--checks", checks])
            .arg("--problem")
            .arg(&p)
            .arg("--out")
            .arg(dir.path().join("r.json"))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(2), "checks={checks:?}");
    }
}

#[test]
fn non_cellular_ops_work_exact_but_not_fast() {
    use gamblet::SparseMatrix;
    let dir = tempfile::tempdir().unwrap();
    // depth-2 hierarchy over four unknowns with a NON-cellular wavelet matrix
    // (rows straddle both cells while still spanning Ker(π))
    let r = 0.5f64.sqrt();
    let pi = SparseMatrix::from_triplets(2, 4, vec![(0, 0, r), (0, 1, r), (1, 2, r), (1, 3, r)]);
    let w = SparseMatrix::from_triplets(
        2,
        4,
        vec![
            (0, 0, 0.5),
            (0, 1, -0.5),
            (0, 2, 0.5),
            (0, 3, -0.5),
            (1, 0, 0.5),
            (1, 1, -0.5),
            (1, 2, -0.5),
            (1, 3, 0.5),
        ],
    );
    let ops =
        gamblet::HierarchyOperators::new(vec![2, 4], vec![pi], vec![w], None, true, false).unwrap();
    let ops_dir = dir.path().join("ops");
    ops.save(&ops_dir).unwrap();
    let a = SparseMatrix::from_triplets(
        4,
        4,
        (0..4)
            .map(|i| (i, i, 2.0))
            .chain((0..3).flat_map(|i| [(i, i + 1, -0.5), (i + 1, i, -0.5)]))
            .collect::<Vec<_>>(),
    );
    let a_path = dir.path().join("A.mtx");
    gamblet::sparse::mm::write_matrix(&a_path, &a).unwrap();
    let b_path = dir.path().join("b.mtx");
    gamblet::sparse::mm::write_vector(&b_path, &[1.0, 0.0, 0.0, 1.0]).unwrap();

    let exact_out = dir.path().join("se");
    let status = bin()
        .args(["solve", "--mode", "exact"])
        .arg("--matrix")
        .arg(&a_path)
        .arg("--rhs")
        .arg(&b_path)
        .arg("--ops")
        .arg(&ops_dir)
        .arg("--out")
        .arg(&exact_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let manifest = read_json(exact_out.join("manifest.json"));
    assert!(manifest["residual"].as_f64().unwrap() <= 1e-9);

    // fast mode needs cellular wavelets to reconstruct the tree
    let fast_out = dir.path().join("sf");
    let status = bin()
        .args(["solve", "--mode", "fast"])
        .arg("--matrix")
        .arg(&a_path)
        .arg("--rhs")
        .arg(&b_path)
        .arg("--ops")
        .arg(&ops_dir)
        .arg("--out")
        .arg(&fast_out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
}

#[test]
fn solver_failure_exits_one_with_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    // an indefinite matrix: the transform must reject it at runtime
    let m = gamblet::SparseMatrix::from_triplets(
        4,
        4,
        vec![(0, 0, 1.0), (1, 1, -1.0), (2, 2, 1.0), (3, 3, 1.0)],
    );
    let a_path = dir.path().join("bad.mtx");
    gamblet::sparse::mm::write_matrix(&a_path, &m).unwrap();
    let b_path = dir.path().join("b.mtx");
    gamblet::sparse::mm::write_vector(&b_path, &[1.0, 1.0, 1.0, 1.0]).unwrap();
    let out = dir.path().join("s");
    let status = bin()
        .args(["solve", "--mode", "exact", "--dim", "1"])
        .arg("--matrix")
        .arg(&a_path)
        .arg("--rhs")
        .arg(&b_path)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    let manifest = read_json(out.join("manifest.json"));
    assert!(!manifest["error"].as_str().unwrap().is_empty());
}
