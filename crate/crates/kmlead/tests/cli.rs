use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use kmlead::config::PipelineConfig;
use kmlead::demo::{demo_config, write_demo};
use kmlead::error::{EXIT_DIAGNOSTICS, EXIT_VALIDATION};
use kmlead_core::casestudy::{baseline_profiles, CM227, CM9LA, K189, K407, POSEIDON};
use kmlead_core::io::{render_baseline, write_file};
use serde_json::Value;

fn kmlead(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kmlead"))
        .args(args)
        .env_remove("KMLEAD_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn table1_baseline(dir: &Path) -> PathBuf {
    let path = dir.join("baseline.csv");
    write_file(&path, &render_baseline(&baseline_profiles())).unwrap();
    path
}

fn clusters(path: &Path) -> Vec<(String, BTreeSet<BTreeSet<String>>)> {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v.as_array()
        .unwrap()
        .iter()
        .map(|r| {
            let groups = r["clusters"]
                .as_array()
                .unwrap()
                .iter()
                .map(|c| {
                    c["members"]
                        .as_array()
                        .unwrap()
                        .iter()
                        .map(|m| m.as_str().unwrap().to_string())
                        .collect()
                })
                .collect();
            (r["mode"].as_str().unwrap().to_string(), groups)
        })
        .collect()
}

fn case_study_partition() -> BTreeSet<BTreeSet<String>> {
    let set = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<BTreeSet<_>>();
    [set(&[K189]), set(&[K407]), set(&[CM227, CM9LA, POSEIDON])].into_iter().collect()
}

#[test]
fn cluster_reproduces_case_study_memberships() {
    let dir = tempfile::tempdir().unwrap();
    let baseline = table1_baseline(dir.path());
    let out = dir.path().join("avg");
    let o = kmlead(&["cluster", "--baseline", s(&baseline), "--mode", "average", "--k", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got = clusters(&out.join("clusters.json"));
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].0, "average");
    assert_eq!(got[0].1, case_study_partition());
    assert!(out.join("dissimilarity.csv").exists());
    assert!(out.join("heatmap_average.csv").exists());

    // both modes, POSEIDON by its dual-checkpoint arm
    let out = dir.path().join("dual");
    let o = kmlead(&[
        "cluster",
        "--baseline",
        s(&baseline),
        "--k",
        "3",
        "--arm",
        "POSEIDON/Treme+Durva+CT",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let got = clusters(&out.join("clusters.json"));
    assert_eq!(got.len(), 2);
    for (_, partition) in got {
        assert_eq!(partition, case_study_partition());
    }
}

#[test]
fn cluster_rejects_unknown_covariate() {
    let dir = tempfile::tempdir().unwrap();
    let baseline = table1_baseline(dir.path());
    let o = kmlead(&["cluster", "--baseline", s(&baseline), "--covariates", "age,bmi", "--out", s(dir.path())]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    assert!(String::from_utf8_lossy(&o.stderr).contains("bmi"));
}

#[test]
fn validate_flags_non_monotone_risk_table() {
    let dir = tempfile::tempdir().unwrap();
    let risk = dir.path().join("risk_table.csv");
    fs::write(
        &risk,
        "# km-lead v1\nstudy_id,arm,time_months,n_risk\nS,A,0,100\nS,A,3,90\nS,A,6,95\nS,A,9,80\n",
    )
    .unwrap();
    let o = kmlead(&["validate", "--risk", s(&risk)]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("error["), "{stdout}");
}

#[test]
fn malformed_csv_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let risk = dir.path().join("risk_table.csv");
    fs::write(&risk, "# km-lead v1\nstudy_id,arm,time_months,n_risk\nS,A,0,lots\n").unwrap();
    let o = kmlead(&["validate", "--risk", s(&risk)]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":3:4:"));
    let o = kmlead(&["validate", "--risk", s(&dir.path().join("missing.csv"))]);
    assert_eq!(code(&o), 1);
}

#[test]
fn demo_inputs_validate_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_demo(dir.path(), 1).unwrap();
    let o = kmlead(&["validate", "--dir", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}

/// Demo config with a short sampler, written next to the demo inputs.
fn quick_config(dir: &Path, tweak: impl FnOnce(&mut PipelineConfig)) -> PathBuf {
    write_demo(dir, 1).unwrap();
    let mut cfg = demo_config();
    cfg.synthesis.iters = 3000;
    cfg.synthesis.burn_in = 1500;
    cfg.synthesis.thin = 3;
    cfg.synthesis.draws = 1000;
    tweak(&mut cfg);
    let path = dir.join("quick.toml");
    fs::write(&path, cfg.to_toml()).unwrap();
    path
}

fn run_seed(out: &Path) -> u64 {
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    v["seed"].as_u64().unwrap()
}

#[test]
fn seed_precedence_flag_env_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), |_| {});
    let out = dir.path().join("o");
    let base = ["pipeline", "--config", s(&cfg), "--out", s(&out)];

    let o = kmlead(&base);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(run_seed(&out), 7);

    let with_env = |extra: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_kmlead"))
            .args(base)
            .args(extra)
            .env("KMLEAD_SEED", "11")
            .output()
            .unwrap()
    };
    assert_eq!(code(&with_env(&[])), 0);
    assert_eq!(run_seed(&out), 11);
    assert_eq!(code(&with_env(&["--seed", "13"])), 0);
    assert_eq!(run_seed(&out), 13);
}

#[test]
fn short_chains_fail_diagnostics_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), |c| {
        c.synthesis.iters = 40;
        c.synthesis.burn_in = 20;
        c.synthesis.thin = 1;
    });
    let o = kmlead(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(code(&o), EXIT_DIAGNOSTICS, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("R-hat"));
}

#[test]
fn bad_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(dir.path(), |c| c.classes.truncate(1));
    let o = kmlead(&["pipeline", "--config", s(&cfg)]);
    assert_eq!(code(&o), EXIT_VALIDATION);
    assert!(String::from_utf8_lossy(&o.stderr).contains("exactly 2 classes"));
}

#[test]
fn stage_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    write_demo(dir.path(), 2).unwrap();
    let d = dir.path();
    let ipd = d.join("ipd.csv");
    let o = kmlead(&["reconstruct", "--xy", s(&d.join("xy.csv")), "--risk", s(&d.join("risk_table.csv")), "--out", s(&ipd)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let mut predictive = Vec::new();
    for (name, arms) in [
        ("mono", vec!["CheckMate-227/Nivo", "POSEIDON/Durva+CT"]),
        ("dual", vec!["CheckMate-227/Nivo+Ipi", "CheckMate-9LA/Nivo+Ipi+CT"]),
    ] {
        let out = d.join(name);
        let mut args = vec![
            "synthesize", "--ipd", s(&ipd), "--risk", s(&d.join("risk_table.csv")), "--iters", "3000",
            "--burn-in", "1500", "--thin", "3", "--draws", "500", "--horizon", "48", "--out", s(&out),
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
        for a in arms {
            args.push("--arm".into());
            args.push(a.into());
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = kmlead(&refs);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["posterior.csv", "predictive.csv", "bsp_fit.json"] {
            assert!(out.join(f).exists(), "{name}/{f}");
        }
        predictive.push(format!("{name}={}", out.join("predictive.csv").display()));
    }

    let out = d.join("proj");
    let o = kmlead(&[
        "project", "--a", &predictive[0], "--b", &predictive[1], "--times", "12,24", "--margin", "3", "--xy",
        s(&d.join("xy.csv")), "--out", s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("P(delta median >= 3)"));
    let os = fs::read_to_string(out.join("os_table.csv")).unwrap();
    assert_eq!(os.lines().count(), 4);
    assert!(os.lines().nth(1).unwrap().starts_with("time_months,mono_estimate"));
    let fan = fs::read_to_string(out.join("fan.csv")).unwrap();
    assert!(fan.contains(",published,"));
}
