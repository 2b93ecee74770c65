use std::process::Command;

fn cadre() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cadre"))
}

fn config(name: &str) -> String {
    format!("{}/../../configs/{name}", env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn simulate_writes_report_and_render_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = cadre()
        .args([
            "simulate",
            "-c",
            &config("imbalance_two_clients.yaml"),
            "--timestamp",
            "2026-01-01T00:00:00Z",
            "--out",
        ])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("two-client-imbalance"));
    let rendered = dir.path().join("again.html");
    let status = cadre()
        .arg("render")
        .arg("-i")
        .arg(dir.path().join("report.json"))
        .arg("-o")
        .arg(&rendered)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    assert_eq!(
        std::fs::read(dir.path().join("report.html")).unwrap(),
        std::fs::read(rendered).unwrap()
    );
    assert!(dir.path().join("run.log").exists());
}

#[test]
fn invalid_config_exits_one_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.yaml");
    std::fs::write(
        &bad,
        "experiment_id: x\nclients:\n  - client_id: a\n    data: { synth: { type: tabular, n_rows: 10, n_features: 2, n_groups: 2, n_classes: 2 } }\ncadre_modules:\n  - name: duplicate_management\n    max_iterations: -3\n",
    )
    .unwrap();
    let out = cadre()
        .arg("validate-config")
        .arg("-c")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("max_iterations"), "{err}");
}

#[test]
fn unknown_module_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.yaml");
    std::fs::write(
        &bad,
        "experiment_id: x\nclients:\n  - client_id: a\n    data: { synth: { type: tabular, n_rows: 10, n_features: 2, n_groups: 2, n_classes: 2 } }\ncadre_modules:\n  - name: teleport\n",
    )
    .unwrap();
    let out = cadre()
        .arg("validate-config")
        .arg("-c")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_example_config_validates() {
    for entry in std::fs::read_dir(format!("{}/../../configs", env!("CARGO_MANIFEST_DIR"))).unwrap()
    {
        let path = entry.unwrap().path();
        let out = cadre()
            .arg("validate-config")
            .arg("-c")
            .arg(&path)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}: {}",
            path.display(),
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn pollute_writes_polluted_copy() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    std::fs::write(&input, "x,y\n1,a\n2,b\n3,c\n4,d\n5,e\n").unwrap();
    let recipe = dir.path().join("r.yaml");
    std::fs::write(&recipe, "{ type: duplicate_rows, fraction: 0.4 }\n").unwrap();
    let output = dir.path().join("out.csv");
    let status = cadre()
        .arg("pollute")
        .arg("-i")
        .arg(&input)
        .arg("-o")
        .arg(&output)
        .arg("-r")
        .arg(&recipe)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let text = std::fs::read_to_string(output).unwrap();
    assert_eq!(text.lines().count(), 1 + 7);
}

#[test]
fn bad_arguments_exit_two() {
    let out = cadre().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
