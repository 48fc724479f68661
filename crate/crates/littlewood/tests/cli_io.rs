//! End-to-end checks of the command-line surface: config handling, exit
//! codes, output schemas and byte-for-byte reproducibility.

use littlewood::cli;

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn small_campaign(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("campaign.cfg");
    std::fs::write(
        &path,
        "\
alpha 3
omega 1,1.4142135623730951
theta 0.2,0.7
term 1,0 0.1 0
term 0,1 0 0.05
seed 11
theta_samples 2
orbits 3
n_max 12
cal_i0_min 1e4
cal_i0_max 3e4
burn_in 4
",
    )
    .unwrap();
    path
}

#[test]
fn ensemble_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_campaign(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let code = cli::run(&args(&[
            "ensemble",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]));
        assert_eq!(code, 0);
    }
    for name in ["ensemble.csv", "ensemble.json"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical reruns");
    }
}

#[test]
fn seed_flag_changes_the_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_campaign(dir.path());
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_eq!(
        cli::run(&args(&[
            "ensemble",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_a.to_str().unwrap()
        ])),
        0
    );
    assert_eq!(
        cli::run(&args(&[
            "ensemble",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out_b.to_str().unwrap(),
            "--seed",
            "12",
        ])),
        0
    );
    let a = std::fs::read(out_a.join("ensemble.csv")).unwrap();
    let b = std::fs::read(out_b.join("ensemble.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn orbit_csv_has_the_documented_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("orbit.cfg");
    std::fs::write(&cfg_path, "n_max 8\nv0 -80\nt0 0.5\n").unwrap();
    let code = cli::run(&args(&[
        "orbit",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("orbit.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().contains("schema 1"));
    assert_eq!(
        lines.next().unwrap(),
        "orbit_id,n,t,v,varphi,cal_i,theta0,theta1,left_domain,escape_suspect"
    );
    // rows sorted by (orbit_id, n), velocities negative, full round trip
    let mut last_n = -1i64;
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 10);
        let n: i64 = fields[1].parse().unwrap();
        assert!(n > last_n);
        last_n = n;
        let v: f64 = fields[3].parse().unwrap();
        assert!(v < 0.0);
        rows += 1;
    }
    assert_eq!(rows, 9, "start plus eight iterates");
    assert!(dir.path().join("orbit.json").exists());
}

#[test]
fn zero_forcing_verify_passes_with_skips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("zero.cfg");
    // omega without term lines leaves the forcing empty
    std::fs::write(&cfg_path, "alpha 3\nomega 1,1.4142135623730951\nsafety 1\n").unwrap();
    let code = cli::run(&args(&[
        "verify",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], true);
    let checks = report["checks"].as_array().unwrap();
    assert!(
        checks.iter().any(|c| c["skipped"] == true),
        "scaling fits should be skipped"
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    // usage error
    assert_eq!(cli::run(&args(&["wat"])), 2);
    assert_eq!(cli::run(&args(&[])), 2);
    // config error
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "alpha 2.0\n").unwrap();
    assert_eq!(
        cli::run(&args(&["params", "--config", bad.to_str().unwrap()])),
        2
    );
    // numeric/domain failure: successor start above v_star
    let slow = dir.path().join("slow.cfg");
    std::fs::write(&slow, "v0 -1\n").unwrap();
    assert_eq!(
        cli::run(&args(&[
            "successor",
            "--config",
            slow.to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap()
        ])),
        3
    );
    // help is success
    assert_eq!(cli::run(&args(&["--help"])), 0);
}

#[test]
fn params_json_is_machine_readable() {
    let dir = tempfile::tempdir().unwrap();
    let code = cli::run(&args(&["params", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("params.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    let lambda = report["params"]["lambda"].as_f64().unwrap();
    assert!((lambda - 1.1803406).abs() < 1e-6);
    assert!(report["thresholds"]["v_star"].as_f64().unwrap() < 0.0);
    assert!(report["identity_checks"].as_array().unwrap().len() >= 4);
}
