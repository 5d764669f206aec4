//! End-to-end tests against the compiled binary: exit codes, file layout,
//! CSV content, determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn stinesim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stinesim"))
        .args(args)
        .output()
        .expect("spawning the binary")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

/// Parses CSV emitted by the binary: header row plus string fields.
fn csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(str::to_string).collect();
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    (header, rows)
}

fn num(field: &str) -> f64 {
    field.parse().unwrap_or_else(|_| panic!("not a number: {field:?}"))
}

#[test]
fn bell_default_emits_four_rows_with_equal_correlations() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bell.csv");
    let cfg = write_config(
        dir.path(),
        "bell.json",
        &format!(
            r#"{{"scenario":"bell","params":{{}},"seed":7,"output":{{"path":{:?},"format":"csv"}}}}"#,
            out
        ),
    );
    let r = stinesim(&["run", "--config", cfg.to_str().unwrap()]);
    assert!(r.status.success(), "stderr: {}", String::from_utf8_lossy(&r.stderr));

    let (header, rows) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(header, ["m0", "m1", "probability", "parity", "correlation"]);
    assert_eq!(rows.len(), 4);
    let p: Vec<f64> = rows.iter().map(|r| num(&r[2])).collect();
    assert!((p[0] - 0.5).abs() < 1e-12 && (p[3] - 0.5).abs() < 1e-12);
    assert!(p[1].abs() < 1e-12 && p[2].abs() < 1e-12);
    // same-basis measurements agree on every branch: correlation column is
    // constant and equal to 1
    assert!(rows.iter().all(|r| r[4] == rows[0][4]));
    assert!((num(&rows[0][4]) - 1.0).abs() < 1e-12);
}

#[test]
fn crossed_basis_bell_has_constant_zero_correlation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("zx.csv");
    let cfg = write_config(
        dir.path(),
        "zx.json",
        &format!(
            r#"{{"scenario":"bell","params":{{"basis_b":"x"}},"seed":7,"output":{{"path":{:?},"format":"csv"}}}}"#,
            out
        ),
    );
    assert!(stinesim(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    let (_, rows) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!((num(&row[2]) - 0.25).abs() < 1e-12);
        assert!(num(&row[4]).abs() < 1e-12);
    }
}

#[test]
fn photodetect_oracle_column_matches_library_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("pd.csv");
    let cfg = write_config(
        dir.path(),
        "pd.json",
        &format!(
            r#"{{"scenario":"photodetect","params":{{"n":5,"zeta":2.0}},"seed":1,"output":{{"path":{:?},"format":"csv"}}}}"#,
            out
        ),
    );
    assert!(stinesim(&["run", "--config", cfg.to_str().unwrap()]).status.success());

    let (header, rows) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(header, ["k", "p_k", "p_k_exact"]);
    let want = stinesim::photocount_distribution(5, 2.0).unwrap();
    assert_eq!(rows.len(), want.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], k.to_string());
        // 17-digit formatting round-trips doubles, so the oracle column must
        // reproduce the library value bit for bit
        assert_eq!(num(&row[2]).to_bits(), want[k].to_bits(), "k = {k}");
    }
    // the finite chain converges to the closed form but is not it
    let tv: f64 = rows.iter().enumerate().map(|(k, r)| (num(&r[1]) - want[k]).abs()).sum::<f64>() / 2.0;
    assert!(tv > 0.0 && tv < 0.25, "chain/closed-form total variation {tv}");
}

#[test]
fn malformed_config_exits_one_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let cfg = write_config(dir.path(), "bad.json", "{ not json");
    let r = stinesim(&["run", "--config", cfg.to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(!out.exists());
    assert!(!dir.path().join("x.csv.manifest.json").exists());
}

#[test]
fn unknown_keys_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    // top level
    let cfg = write_config(
        dir.path(),
        "extra.json",
        r#"{"scenario":"bell","params":{},"seed":1,"bogus":1,"output":{"path":"o.csv","format":"csv"}}"#,
    );
    let r = stinesim(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("bogus"));
    // inside params
    let cfg2 = write_config(
        dir.path(),
        "extra2.json",
        r#"{"scenario":"photodetect","params":{"n":5,"zeta":2.0,"typo":3},"seed":1,"output":{"path":"o.csv","format":"csv"}}"#,
    );
    assert_eq!(stinesim(&["validate", "--config", cfg2.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn grid_escape_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sg.csv");
    // the override grid passes the static containment margins at t = 0 but
    // cannot hold the packet once it spreads to sigma(1) = 2.5
    let cfg = write_config(
        dir.path(),
        "tight.json",
        &format!(
            r#"{{"scenario":"sterngerlach","params":{{
                "mass":1.0,"b":0.5,"mu_b":1.0,"b0":10.0,"v":2.0,"length":2.0,
                "z0":0.0,"delta":0.2,
                "c_plus":[0.7071067811865476,0.0],"c_minus":[0.0,0.7071067811865476],
                "n_steps":64,"grid":{{"min":-3.0,"step":0.02,"n":301}}}},
                "seed":1,"output":{{"path":{:?},"format":"csv"}}}}"#,
            out
        ),
    );
    let r = stinesim(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("numerical guard"));
    assert!(!out.exists());
}

#[test]
fn reruns_are_byte_identical_and_seed_changes_samples() {
    let dir = tempfile::tempdir().unwrap();
    let proto = r#"{"scenario":"protocol","params":{
        "registers":[
            {"label":"q","dim":2,"kind":"physical"},
            {"label":"m","dim":2,"kind":"stinespring"}],
        "instructions":[
            {"type":"unitary","op":{"layout":[{"label":"q","dim":2,"kind":"physical"}],
             "re":[0.7071067811865476,0.7071067811865476,0.7071067811865476,-0.7071067811865476],
             "im":[0.0,0.0,0.0,0.0]},"targets":["q"]},
            {"type":"measure","observable":{"layout":[{"label":"q","dim":2,"kind":"physical"}],
             "re":[0.0,0.0,0.0,1.0],"im":[0.0,0.0,0.0,0.0]},"target":["q"],"ss_label":"m"}],
        "trajectories":64},
        "seed":5,"output":{"path":"PLACEHOLDER","format":"csv"}}"#;
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg = write_config(dir.path(), "p.json", &proto.replace("PLACEHOLDER", "unused.csv"));
    for path in [&a, &b] {
        let args = ["run", "--config", cfg.to_str().unwrap(), "--output", path.to_str().unwrap()];
        assert!(stinesim(&args).status.success());
    }
    let (ba, bb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ba, bb, "same config and seed must reproduce bytes");

    // The seed probe uses a scenario with continuous sampled values: discrete
    // trajectory tallies can coincide across seeds, Haar averages cannot.
    let deco = r#"{"scenario":"decohere","params":{
        "amplitudes":[[0.6,0.0],[0.8,0.0]],"blocks":[1,2],"samples":8},
        "seed":5,"output":{"path":"unused.csv","format":"csv"}}"#;
    let cfg = write_config(dir.path(), "d.json", deco);
    let c = dir.path().join("c.csv");
    let d = dir.path().join("d.csv");
    for (path, seed) in [(&c, None), (&d, Some("99"))] {
        let mut args = vec!["run", "--config", cfg.to_str().unwrap(), "--output", path.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(stinesim(&args).status.success());
    }
    let (bc, bd) = (std::fs::read(&c).unwrap(), std::fs::read(&d).unwrap());
    assert_ne!(bc, bd, "the seed override must reach the sampler");
}

#[test]
fn protocol_feedback_copies_the_first_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fb.csv");
    // H on q0, measure q0, X on q1 iff outcome 1, measure q1: the two pointer
    // records agree trajectory by trajectory
    let cfg_text = format!(
        r#"{{"scenario":"protocol","params":{{
        "registers":[
            {{"label":"q0","dim":2,"kind":"physical"}},
            {{"label":"q1","dim":2,"kind":"physical"}},
            {{"label":"m0","dim":2,"kind":"stinespring"}},
            {{"label":"m1","dim":2,"kind":"stinespring"}}],
        "instructions":[
            {{"type":"unitary","op":{{"layout":[{{"label":"q0","dim":2,"kind":"physical"}}],
             "re":[0.7071067811865476,0.7071067811865476,0.7071067811865476,-0.7071067811865476],
             "im":[0.0,0.0,0.0,0.0]}},"targets":["q0"]}},
            {{"type":"measure","observable":{{"layout":[{{"label":"q0","dim":2,"kind":"physical"}}],
             "re":[0.0,0.0,0.0,1.0],"im":[0.0,0.0,0.0,0.0]}},"target":["q0"],"ss_label":"m0"}},
            {{"type":"feedback","condition":{{"any_of":[[{{"ss_label":"m0","required_outcome":1}}]]}},
             "op":{{"layout":[{{"label":"q1","dim":2,"kind":"physical"}}],
             "re":[0.0,1.0,1.0,0.0],"im":[0.0,0.0,0.0,0.0]}},"targets":["q1"]}},
            {{"type":"measure","observable":{{"layout":[{{"label":"q1","dim":2,"kind":"physical"}}],
             "re":[0.0,0.0,0.0,1.0],"im":[0.0,0.0,0.0,0.0]}},"target":["q1"],"ss_label":"m1"}}],
        "trajectories":200}},
        "seed":11,"output":{{"path":{out:?},"format":"csv"}}}}"#
    );
    let cfg = write_config(dir.path(), "fb.json", &cfg_text);
    assert!(stinesim(&["run", "--config", cfg.to_str().unwrap()]).status.success());

    let (header, rows) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(header, ["label", "outcome", "p_exact", "p_sampled"]);
    assert_eq!(rows.len(), 4);
    for row in &rows {
        assert!((num(&row[2]) - 0.5).abs() < 1e-12);
    }
    // the feedback writes m0's record onto q1, so the sampled frequencies of
    // m0 and m1 coincide exactly, not just statistically
    assert_eq!(rows[0][3], rows[2][3]);
    assert_eq!(rows[1][3], rows[3][3]);
}

#[test]
fn homodyne_emits_sum_and_difference_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hd.csv");
    let cfg = write_config(
        dir.path(),
        "hd.json",
        &format!(
            r#"{{"scenario":"homodyne","params":{{
                "beta_abs":2.0,"phi":0.0,"n_max":20,"d_abs_max":6,
                "input":{{"type":"coherent","alpha":0.8,"cutoff":8}}}},
                "seed":3,"output":{{"path":{out:?},"format":"csv"}}}}"#
        ),
    );
    assert!(stinesim(&["run", "--config", cfg.to_str().unwrap()]).status.success());

    let (hn, rn) = csv_rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(hn, ["n", "p_n"]);
    assert_eq!(rn.len(), 21);
    assert!((rn.iter().map(|r| num(&r[1])).sum::<f64>() - 1.0).abs() < 1e-9);

    let pd_path = dir.path().join("hd_pd.csv");
    let (hd, rd) = csv_rows(&std::fs::read_to_string(&pd_path).unwrap());
    assert_eq!(hd, ["d", "p_d", "p_d_exact"]);
    assert_eq!(rd.len(), 13);
    assert!((rd.iter().map(|r| num(&r[1])).sum::<f64>() - 1.0).abs() < 1e-9);
    assert!((rd.iter().map(|r| num(&r[2])).sum::<f64>() - 1.0).abs() < 1e-9);

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("hd.csv.manifest.json")).unwrap())
            .unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config"]["seed"], 3);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
    assert!(manifest["library_version"].is_string());
}

#[test]
fn json_format_emits_parseable_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.json");
    let cfg = write_config(
        dir.path(),
        "m.json.cfg",
        &format!(
            r#"{{"scenario":"measure","params":{{
                "observable":[[[1.0,0.0],[0.0,-0.5]],[[0.0,0.5],[2.0,0.0]]],
                "state":[[1.0,0.0],[0.0,0.0]]}},
                "seed":1,"output":{{"path":{out:?},"format":"json"}}}}"#
        ),
    );
    assert!(stinesim(&["run", "--config", cfg.to_str().unwrap()]).status.success());
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(
        doc["columns"],
        serde_json::json!(["outcome", "eigenvalue", "multiplicity", "probability"])
    );
    let rows = doc["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let p: f64 = rows.iter().map(|r| r[3].as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-12);
}

#[test]
fn validate_accepts_every_example_config() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let r = stinesim(&["validate", "--config", path.to_str().unwrap()]);
        assert!(
            r.status.success(),
            "{} rejected: {}",
            path.display(),
            String::from_utf8_lossy(&r.stderr)
        );
        seen += 1;
    }
    assert_eq!(seen, 9, "expected one example config per scenario");
}
