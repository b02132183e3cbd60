use std::path::Path;
use std::process::Command;

use bsde_chaos::oracles::bs_call_price;
use bsde_chaos::problems::ProblemId;
use bsde_chaos::schemes::Scheme;
use bsde_cli::*;

fn bsde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_bsde")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn small(problem: ProblemId) -> RunConfig {
    let mut c = RunConfig::new(problem);
    c.m = 4;
    c.cells = 4;
    c.order = 2;
    c.samples = 2_000;
    c
}

#[test]
fn negative_order_fails_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.json", r#"{"problem": "example1", "P": -1}"#);
    let out = bsde(&["run", "--config", &cfg]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("'P'") && err.contains("line 1"), "{err}");
}

#[test]
fn run_rejects_sweep_block() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "bt_squared", "sweep": {"axis": "P", "values": [1]}}"#,
    );
    assert!(!bsde(&["run", "--config", &cfg]).status.success());
}

#[test]
fn constant_problem_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "constant", "value": 2.5, "m": 3, "M": 3, "P": 1, "N": 100}"#,
    );
    let out = dir.path().join("r.csv");
    let o = bsde(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("schema,scheme,problem,m,M,P,N,Q,seed,run,y0,z0_1,wall_ms\n"));
    let rows = read_results(&out).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].y0 - 2.5).abs() < 1e-12);
    assert!(config_echo_path(&out).exists());
}

#[test]
fn repeat_rows_distinct_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ProblemId::Example2);
    c.repetitions = Some(2);
    c.out = Some(dir.path().join("a.csv"));
    let a = cmd_repeat(&c).unwrap();
    assert_eq!(a.len(), 2);
    assert_eq!((a[0].seed, a[1].seed), (c.seed, c.seed + 1));
    assert_ne!(a[0].y0, a[1].y0);
    c.out = Some(dir.path().join("b.csv"));
    let b = cmd_repeat(&c).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.same_numbers(y));
    }
}

#[test]
fn single_repetition_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ProblemId::Example1);
    c.out = Some(dir.path().join("a.csv"));
    let run = cmd_run(&c).unwrap();
    c.repetitions = Some(1);
    c.out = Some(dir.path().join("b.csv"));
    let rep = cmd_repeat(&c).unwrap();
    assert!(run[0].same_numbers(&rep[0]));
}

#[test]
fn echoed_config_reproduces_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ProblemId::Example1);
    c.scheme = Scheme::Picard;
    c.iterations = 3;
    c.seed = 40;
    c.repetitions = Some(3);
    let out = dir.path().join("rep.csv");
    c.out = Some(out.clone());
    cmd_repeat(&c).unwrap();

    let base = RunConfig::load(&config_echo_path(&out)).unwrap();
    let rows = read_results(&out).unwrap();
    let mut again = rows[2].config(&base);
    again.out = Some(dir.path().join("again.csv"));
    let rerun = cmd_run(&again).unwrap();
    assert_eq!(rerun[0].seed, 42);
    assert_eq!(rerun[0].y0.to_bits(), rows[2].y0.to_bits());
    assert_eq!(rerun[0].z0, rows[2].z0);
}

#[test]
fn sweep_single_value_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ProblemId::BtSquared);
    c.sweep = Some(Sweep {
        axis: SweepAxis::Cells,
        values: vec![3],
    });
    c.out = Some(dir.path().join("s.csv"));
    let rows = cmd_sweep(&c).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].cells, 3);
}

/// `Y_0` is the sample mean of `ξ` at every order, so the order shows in the
/// projected second moment `E[ξ_P²]`, which reaches `E[B_T⁴] = 3` at `P = 2`.
#[test]
fn sweep_order_on_bt_squared() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ProblemId::BtSquared);
    c.m = 5;
    c.cells = 5;
    c.samples = 100_000;
    c.sweep = Some(Sweep {
        axis: SweepAxis::Order,
        values: vec![0, 1, 2],
    });
    c.out = Some(dir.path().join("s.csv"));
    let diag = dir.path().join("d.csv");
    c.diagnostics = Some(diag.clone());
    let rows = cmd_sweep(&c).unwrap();
    assert_eq!(rows.iter().map(|r| r.order).collect::<Vec<_>>(), [0, 1, 2]);
    for r in &rows {
        assert!((r.y0 - 1.0).abs() < 0.02);
        assert_eq!(r.y0.to_bits(), rows[0].y0.to_bits());
    }
    let mut rd = csv::Reader::from_path(&diag).unwrap();
    let terminal: Vec<f64> = rd
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[2] == "terminal")
        .map(|r| r[6].parse().unwrap())
        .collect();
    let err: Vec<f64> = terminal.iter().map(|m| (m - 3.0).abs()).collect();
    assert!(err[0] > 1.5 && err[1] > 1.5, "{err:?}");
    assert!(err[2] < 0.15, "{err:?}");
}

#[test]
fn sweep_steps_on_vanilla_call() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ProblemId::VanillaCall);
    c.samples = 50_000;
    c.repetitions = Some(3);
    c.sweep = Some(Sweep {
        axis: SweepAxis::Steps,
        values: vec![10, 20, 40],
    });
    c.out = Some(dir.path().join("s.csv"));
    let rows = cmd_sweep(&c).unwrap();
    let (s0, k, r, vol) = VANILLA;
    let bs = bs_call_price(s0, k, r, vol, 1.0);
    let stats: Vec<(f64, f64)> = rows
        .chunks(3)
        .map(|g| {
            let mean = g.iter().map(|r| r.y0).sum::<f64>() / 3.0;
            let sd = (g.iter().map(|r| (r.y0 - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
            ((mean - bs).abs(), sd / 3f64.sqrt())
        })
        .collect();
    for w in stats.windows(2) {
        let band = 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        assert!(w[1].0 <= w[0].0 + band.max(1e-4), "{stats:?}");
    }
}

#[test]
fn constant_paths_are_flat() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small(ProblemId::Constant);
    c.value = Some(-1.5);
    c.samples = 20_000;
    c.paths = Some(3);
    c.out = Some(dir.path().join("p.csv"));
    let t = cmd_paths(&c).unwrap();
    assert_eq!(t.rows.len(), 3 * (c.m + 1));
    // Flat up to the sampling noise of the non-constant coefficients.
    for r in &t.rows {
        assert!((r.y + 1.5).abs() < 0.05, "{r:?}");
    }
    assert!((t.rows[0].y + 1.5).abs() < 1e-9);
    let header = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    assert!(header.starts_with("path,t,y,z_1\n"));
}

#[test]
fn example3_paths_carry_hedges() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ProblemId::Example3);
    c.m = 2;
    c.cells = 2;
    c.order = 1;
    c.samples = 1_000;
    c.paths = Some(2);
    c.out = Some(dir.path().join("p.csv"));
    cmd_paths(&c).unwrap();
    let text = std::fs::read_to_string(dir.path().join("p.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "path,t,y,z_1,z_2,z_3,z_4,z_5,h_1,h_2,h_3,h_4,h_5");
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}

#[test]
fn paths_need_euler() {
    let mut c = small(ProblemId::Constant);
    c.paths = Some(1);
    c.scheme = Scheme::Picard;
    assert!(cmd_paths(&c).is_err());
}

#[test]
fn oracle_rows_for_barrier() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::new(ProblemId::Example1);
    c.samples = 10_000;
    c.repetitions = Some(2);
    c.out = Some(dir.path().join("o.csv"));
    let rows = cmd_oracle(&c).unwrap();
    let q: Vec<_> = rows.iter().map(|r| (r.quantity, r.run)).collect();
    assert_eq!(q, [("price", 0), ("z0", 0), ("price", 1), ("z0", 1)]);
    assert!(rows.iter().all(|r| r.stderr > 0.0));
    let text = std::fs::read_to_string(dir.path().join("o.csv")).unwrap();
    assert!(text.starts_with("schema,problem,quantity,component,run,seed,value,stderr,samples\n"));
}

#[test]
fn oracle_rejects_nonlinear_driver() {
    let mut c = RunConfig::new(ProblemId::Example2);
    c.samples = 100;
    c.out = Some(tempfile::tempdir().unwrap().path().join("o.csv"));
    assert!(oracle_rows(&c).is_err());
}

#[test]
fn seed_flag_overrides_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "example2", "m": 3, "M": 3, "P": 1, "N": 500, "seed": 1}"#,
    );
    let out = dir.path().join("r.csv");
    let o = bsde(&["run", "--config", &cfg, "--seed", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(read_results(&out).unwrap()[0].seed, 9);
}

#[test]
fn thread_count_does_not_change_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"problem": "example1", "scheme": "picard", "m": 5, "M": 5, "P": 2, "N": 5000, "Q": 3, "repetitions": 2}"#,
    );
    let mut rows = Vec::new();
    for t in ["1", "3"] {
        let out = dir.path().join(format!("t{t}.csv"));
        let o = bsde(&["repeat", "--config", &cfg, "--threads", t, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        rows.push(read_results(&out).unwrap());
    }
    for (a, b) in rows[0].iter().zip(&rows[1]) {
        assert!(a.same_numbers(b));
    }
}
