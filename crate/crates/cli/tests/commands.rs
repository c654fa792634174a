use std::fs;
use std::process::{Command, Output};

fn muskat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_muskat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env("MUSKAT_THREADS", "2")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn oracle_check_passes_on_small_instances() {
    let o = muskat(&["oracle-check", "--max-size", "6", "--seed", "3"]);
    assert!(
        o.status.success(),
        "{}\n{}",
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 4);
    assert!(out.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn oracle_check_rejects_tiny_sizes() {
    let o = muskat(&["oracle-check", "--max-size", "2"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--max-size"));
}

#[test]
fn probes_print_json_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "preset = fig1\nnx = 64\n").unwrap();
    for name in muskat_cli::PROBES {
        let o = muskat(&["probe", name, cfg.to_str().unwrap()]);
        assert!(
            o.status.success(),
            "{name}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        for line in stdout(&o).lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert_eq!(v["name"], *name);
        }
    }
    let o = muskat(&["probe", "nonsense", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown probe"));
}

#[test]
fn preset_and_run_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    let o = muskat(&[
        "preset",
        "fig2",
        "--nx",
        "24",
        "--steps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).starts_with("3 steps"));
    assert_eq!(
        fs::read_to_string(out.join("energy.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );

    let cfg = dir.path().join("c.txt");
    let run_out = dir.path().join("r");
    fs::write(
        &cfg,
        format!(
            "preset = fig3\nnx = 24\nn_steps = 2\nout = {}\n",
            run_out.display()
        ),
    )
    .unwrap();
    let o = muskat(&["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(run_out.join("final_rho1.raw").exists());
}

#[test]
fn bad_inputs_fail_with_context() {
    let o = muskat(&["run", "/nonexistent/config.txt"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent/config.txt"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.txt");
    fs::write(&cfg, "preset = fig1\nsigma = lots\n").unwrap();
    let o = muskat(&["run", cfg.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sigma"));

    let o = muskat(&["preset", "fig9"]);
    assert!(!o.status.success());
}
