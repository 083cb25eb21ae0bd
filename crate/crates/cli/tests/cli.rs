use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use postslm::{PointSet, WeightSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

fn postslm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_postslm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str]) -> Vec<u8> {
    let out = postslm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn no_subcommand_prints_usage() {
    let out = postslm(&[]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stderr) + String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("Usage"), "{text}");
}

#[test]
fn bad_flag_is_usage_error() {
    assert_eq!(postslm(&["fit", "--bogus"]).status.code(), Some(1));
    let grid = postslm(&[
        "sweep",
        "--input",
        p(&data("sim1.csv")),
        "--aux",
        p(&data("sim1_aux.csv")),
        "--zeta-grid",
        "1",
    ]);
    assert_eq!(grid.status.code(), Some(1));
}

#[test]
fn data_and_numerical_exit_codes() {
    let missing = postslm(&["fit", "--input", "/nonexistent/points.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    let wrong_layout = postslm(&["fit", "--input", p(&data("city/listings.csv"))]);
    assert_eq!(wrong_layout.status.code(), Some(2));
    let collinear = postslm(&[
        "fit",
        "--input",
        p(&data("fit12.csv")),
        "--covariates",
        "covariate,covariate",
    ]);
    assert_eq!(collinear.status.code(), Some(3));
}

#[test]
fn fit_matches_golden() {
    let out = run_ok(&["fit", "--input", p(&data("fit12.csv"))]);
    let golden = std::fs::read(data("fit12_golden.json")).unwrap();
    assert_eq!(
        String::from_utf8(out).unwrap(),
        String::from_utf8(golden).unwrap()
    );
}

/// Brute-force profile likelihood: dense determinant on a 1e-5 grid,
/// refined by one parabolic step.
fn grid_oracle(y: &DVector<f64>, x: &DMatrix<f64>, w: &DMatrix<f64>) -> (f64, DVector<f64>) {
    let n = y.len();
    let beta_at = |rho: f64| {
        let a = DMatrix::identity(n, n) - w * rho;
        let ay = &a * y;
        let b = (x.transpose() * x).try_inverse().unwrap() * x.transpose() * &ay;
        (a, ay, b)
    };
    let ll = |rho: f64| {
        let (a, ay, b) = beta_at(rho);
        let e = ay - x * b;
        let s2 = e.norm_squared() / n as f64;
        a.determinant().abs().ln() - 0.5 * n as f64 * s2.ln()
    };
    let eig = w.clone().complex_eigenvalues();
    let lo = 1.0 / eig.iter().map(|c| c.re).fold(f64::INFINITY, f64::min) + 1e-6;
    let hi = 1.0 / eig.iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max) - 1e-6;
    let step = 1e-5;
    let (mut best, mut best_ll) = (lo, f64::NEG_INFINITY);
    let mut r = lo;
    while r <= hi {
        let v = ll(r);
        if v > best_ll {
            best_ll = v;
            best = r;
        }
        r += step;
    }
    let (a, b, c) = (ll(best - step), best_ll, ll(best + step));
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        best += 0.5 * step * (a - c) / denom;
    }
    (best, beta_at(best).2)
}

#[test]
fn golden_agrees_with_grid_oracle() {
    let golden: serde_json::Value =
        serde_json::from_slice(&std::fs::read(data("fit12_golden.json")).unwrap()).unwrap();
    let points = PointSet::read_csv(std::fs::File::open(data("fit12.csv")).unwrap()).unwrap();
    let w = WeightSpec::threshold().build(&points).unwrap().to_dense();
    let y = DVector::from_column_slice(points.attr("outcome").unwrap());
    let x = DMatrix::from_column_slice(points.len(), 1, points.attr("covariate").unwrap());
    let (rho, beta) = grid_oracle(&y, &x, &w);
    let g_rho = golden["rho"].as_f64().unwrap();
    let g_beta = golden["beta"][0].as_f64().unwrap();
    assert!((g_rho - rho).abs() < 1e-4, "{g_rho} vs {rho}");
    assert!(
        (g_beta - beta[0]).abs() / beta[0].abs() < 1e-6,
        "{g_beta} vs {}",
        beta[0]
    );
}

#[test]
fn sweep_on_sim1_fixture() {
    let out = run_ok(&[
        "sweep",
        "--input",
        p(&data("sim1.csv")),
        "--aux",
        p(&data("sim1_aux.csv")),
        "--intercept",
        "--zeta-grid",
        "0,0.2,0.4,0.6,0.8,1",
    ]);
    let text = String::from_utf8(out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "zeta,n,beta_hat,rho_hat,avar_beta,bias,mse,selected"
    );
    assert_eq!(lines.len(), 7);
    let selected = lines[1..].iter().filter(|l| l.ends_with(",1")).count();
    assert_eq!(selected, 1);
    let sizes: Vec<&str> = lines[1..]
        .iter()
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(sizes, ["270", "222", "174", "126", "89", "70"]);
}

#[test]
fn postsample_plan_json() {
    let out = run_ok(&[
        "postsample",
        "--input",
        p(&data("sim1.csv")),
        "--aux",
        p(&data("sim1_aux.csv")),
        "--zeta",
        "1",
        "--seed",
        "3",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out).unwrap();
    let targets: Vec<u64> = (1..=4)
        .map(|s| v["targets"][s.to_string()].as_u64().unwrap())
        .collect();
    assert_eq!(targets, [25, 3, 12, 30]);
    assert_eq!(v["retained_ids"].as_array().unwrap().len(), 70);
}

#[test]
fn ingest_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("l.csv");
    std::fs::write(
        &input,
        "id,lon,lat,price,size\n1,9.19,45.46,0,80\n2,9.20,45.47,450000,110\n3,9.18,45.45,200000,55\n",
    )
    .unwrap();
    let out = postslm(&["ingest", "--input", p(&input)]);
    assert!(out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rejected line 2 (id 1)"), "{err}");
    assert!(err.contains("2 listings kept, 1 rejected"), "{err}");
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn hedonic_on_bundled_city() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("report.json");
    let out = run_ok(&[
        "hedonic",
        "--input",
        p(&data("city/listings.csv")),
        "--aux",
        p(&data("city/strata.csv")),
        "--polygons",
        p(&data("city/polygons.csv")),
        "--report",
        p(&report),
    ]);
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("zeta,sample_size,rho_hat,beta_hat,relative_bias,mse,selected\n"));
    assert_eq!(text.lines().count(), 7);
    let via_geojson = run_ok(&[
        "hedonic",
        "--input",
        p(&data("city/listings.csv")),
        "--geojson",
        p(&data("city/strata.geojson")),
    ]);
    assert_eq!(String::from_utf8(via_geojson).unwrap(), text);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
    assert_eq!(r["listings"], 1000);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<Vec<(String, Vec<u8>)>> = (0..2)
        .map(|k| {
            let d = dir.path().join(k.to_string());
            std::fs::create_dir_all(&d).unwrap();
            let sim = d.join("sim.csv");
            run_ok(&[
                "simulate",
                "--config",
                p(&data("mc_small.cfg")),
                "--seed",
                "4",
                "--out",
                p(&sim),
            ]);
            let sweep = d.join("sweep.csv");
            run_ok(&[
                "sweep",
                "--input",
                p(&data("sim1.csv")),
                "--aux",
                p(&data("sim1_aux.csv")),
                "--seed",
                "5",
                "--replicates",
                "3",
                "--intercept",
                "--out",
                p(&sweep),
            ]);
            let mc = d.join("mc");
            run_ok(&[
                "mc",
                "--config",
                p(&data("mc_small.cfg")),
                "--seed",
                "9",
                "--out",
                p(&mc),
            ]);
            let cmp = d.join("cmp");
            run_ok(&[
                "mc",
                "--config",
                p(&data("mc_small.cfg")),
                "--compare-schemes",
                "--replicates",
                "4",
                "--out",
                p(&cmp),
            ]);
            [
                sim,
                sweep,
                mc.join("curves.csv"),
                mc.join("manifest.json"),
                cmp.join("curves.csv"),
                cmp.join("manifest.json"),
            ]
            .into_iter()
            .map(|f| {
                (
                    f.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&f).unwrap(),
                )
            })
            .collect()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let curves = String::from_utf8(runs[0][4].1.clone()).unwrap();
    for scheme in ["threshold", "knn", "idist"] {
        assert!(curves.contains(&format!("\n{scheme},")), "{curves}");
    }
}
