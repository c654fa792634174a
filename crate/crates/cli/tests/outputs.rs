use std::fs;
use std::path::Path;

use muskat::{PhaseField, ScalarField};
use muskat_cli::{parse_config, read_pgm, run, write_pgm, SimConfig, ENERGY_HEADER};

fn small(out: &Path) -> SimConfig {
    let text = format!(
        "preset = fig1\nnx = 24\nn_steps = 6\nframe_stride = 4\nstop_when_stationary = false\nout = {}\n",
        out.display()
    );
    parse_config(&text).unwrap()
}

#[test]
fn a_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path());
    let s = run(&cfg).unwrap();
    assert_eq!(s.steps, 6);
    assert_eq!(s.components.len(), 7);

    let reparsed =
        parse_config(&fs::read_to_string(dir.path().join("config.txt")).unwrap()).unwrap();
    assert_eq!(reparsed, cfg);

    let energy = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
    let lines: Vec<&str> = energy.lines().collect();
    assert_eq!(lines[0], ENERGY_HEADER);
    assert_eq!(lines.len(), 7);
    let columns = ENERGY_HEADER.split(',').count();
    for (k, l) in lines[1..].iter().enumerate() {
        let cells: Vec<&str> = l.split(',').collect();
        assert_eq!(cells.len(), columns);
        assert_eq!(cells[0], (k + 1).to_string());
        assert!(cells.iter().all(|c| c.parse::<f64>().is_ok()));
    }

    let frames: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(dir.path().join("frames"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    assert_eq!(
        frames,
        ["rho1_00000.pgm", "rho1_00004.pgm", "rho1_00006.pgm"]
    );
    let (w, h, px) = read_pgm(&dir.path().join("frames/rho1_00006.pgm")).unwrap();
    assert_eq!((w, h), (24, 24));
    let expect: Vec<u8> = s
        .pair
        .rho1
        .values()
        .iter()
        .map(|v| (v * 255.0) as u8)
        .collect();
    assert_eq!(px, expect);

    let raw = fs::File::open(dir.path().join("final_rho1.raw")).unwrap();
    assert_eq!(&ScalarField::read_raw(raw).unwrap(), s.pair.rho1.field());
    let raw = fs::File::open(dir.path().join("final_pressure.raw")).unwrap();
    assert_eq!(Some(ScalarField::read_raw(raw).unwrap()), s.pressure);

    let log = fs::read_to_string(dir.path().join("bfm_log.csv")).unwrap();
    assert!(log.lines().count() > 6);
    let mut names = Vec::new();
    for l in fs::read_to_string(dir.path().join("diagnostics.jsonl"))
        .unwrap()
        .lines()
    {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["inputs"].as_str().unwrap().len(), 64);
        names.push(v["name"].as_str().unwrap().to_string());
    }
    for want in ["mixed_measure", "shape", "stationarity", "holder"] {
        assert!(names.iter().any(|n| n == want), "missing {want}");
    }
}

#[test]
fn runs_are_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(&small(a.path())).unwrap();
    run(&small(b.path())).unwrap();
    for f in [
        "energy.csv",
        "bfm_log.csv",
        "final_rho1.raw",
        "frames/rho1_00006.pgm",
    ] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn pgm_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let g = muskat::Grid::new(5).unwrap();
    let rho = PhaseField::from_indicator(g, |x, y| x > y);
    let path = dir.path().join("f.pgm");
    write_pgm(&path, &rho).unwrap();
    let (w, h, px) = read_pgm(&path).unwrap();
    assert_eq!((w, h), (5, 5));
    let back: Vec<bool> = px.iter().map(|&p| p == 255).collect();
    assert_eq!(PhaseField::from_mask(g, &back).unwrap(), rho);
    assert!(px.iter().all(|&p| p == 0 || p == 255));

    fs::write(&path, b"P2\n5 5\n255\n").unwrap();
    assert!(read_pgm(&path).is_err());
    fs::write(&path, b"P5\n5 5\n255\n\x00\x00").unwrap();
    assert!(read_pgm(&path).is_err());
}

#[test]
fn unwritable_output_reports_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let err = run(&small(&blocker.join("sub"))).unwrap_err();
    assert!(format!("{err:#}").contains("sub"), "{err:#}");
}
