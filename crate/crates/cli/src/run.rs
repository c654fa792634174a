//! Simulation driver and its on-disk outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use log::{info, warn};
use serde_json::json;

use muskat::diagnostics::{
    connected_components, holder_constant, inputs_digest, interface_pressure_jump,
    mixed_measure_check, shape_classify, DiagnosticRecord, ShapeReport,
};
use muskat::jko::{run_flow, EnergyReport};
use muskat::kernels::{gaussian_blur, HeatKernelParams};
use muskat::{recover_pressure, PhaseField, PhasePair, ScalarField};

use crate::config::SimConfig;

pub const ENERGY_HEADER: &str = "step,time,HC,potential,total,W2sq_1,W2sq_2,dissipation_slack,tv_perimeter,p_min,p_max,bfm_iters,residual";

/// Mixed-measure levels checked on every frame.
pub const MIXED_ALPHAS: [f64; 3] = [0.1, 0.25, 0.4];

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub steps: usize,
    pub stationary: bool,
    pub history: Vec<EnergyReport>,
    /// Phase-1 component count after each step, starting with the initial state.
    pub components: Vec<usize>,
    /// Steps whose dissipation slack fell below `-(1e-6 + 2 h sigma)`.
    pub dissipation_violations: Vec<usize>,
    /// Frames whose blurred phase broke the mixed-measure bound.
    pub mixed_measure_failures: usize,
    pub shape: ShapeReport,
    pub initial: PhasePair,
    pub pair: PhasePair,
    pub pressure: Option<ScalarField>,
}

/// 8-bit binary PGM with `rho = 0` black and `rho = 1` white. Row `j = 0` is written first, so
/// the image's vertical axis points along `-y`.
pub fn write_pgm(path: &Path, rho: &PhaseField) -> std::io::Result<()> {
    let g = rho.grid();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", g.nx(), g.ny())?;
    let bytes: Vec<u8> = rho
        .values()
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    w.flush()
}

/// Reads back a frame written by [`write_pgm`].
pub fn read_pgm(path: &Path) -> anyhow::Result<(usize, usize, Vec<u8>)> {
    let data = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        anyhow::ensure!(start < pos, "truncated PGM header");
        fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    anyhow::ensure!(
        fields[0] == "P5" && fields[3] == "255",
        "not an 8-bit P5 image"
    );
    let (w, h): (usize, usize) = (fields[1].parse()?, fields[2].parse()?);
    let pixels = data[pos + 1..].to_vec();
    anyhow::ensure!(pixels.len() == w * h, "pixel count mismatch");
    Ok((w, h, pixels))
}

pub fn energy_csv_row(r: &EnergyReport) -> String {
    format!(
        "{},{:.6e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{:.17e}",
        r.step,
        r.time,
        r.hc,
        r.potential,
        r.total,
        r.w2sq[0],
        r.w2sq[1],
        r.dissipation_slack,
        r.tv_perimeter,
        r.p_min,
        r.p_max,
        r.bfm_iters,
        r.residual
    )
}

fn mixed_records(
    rho1: &PhaseField,
    params: &HeatKernelParams,
    hc: f64,
    step: usize,
) -> Result<Vec<DiagnosticRecord>> {
    let blurred = gaussian_blur(rho1.field(), params);
    let digest = inputs_digest(
        rho1.grid(),
        &[&blurred],
        &[params.eps(), params.sigma(), hc],
    );
    MIXED_ALPHAS
        .iter()
        .map(|&alpha| {
            let m = mixed_measure_check(&blurred, alpha, params.eps(), params.sigma(), hc)?;
            Ok(DiagnosticRecord::new(
                "mixed_measure",
                digest.clone(),
                json!({ "step": step, "alpha": alpha, "measure": m.measure, "bound": m.bound }),
                Some(m.pass),
            ))
        })
        .collect()
}

/// Runs a configured simulation, writing frames, logs and the final state under `cfg.out`.
pub fn run(cfg: &SimConfig) -> Result<RunSummary> {
    let out = &cfg.out;
    fs::create_dir_all(out.join("frames"))
        .with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.txt"), cfg.serialize())?;
    let grid = cfg.grid();
    let step_cfg = cfg.step_config();
    let params = step_cfg.kernel(&grid)?;
    let tol = step_cfg.dissipation_tolerance(&grid);
    let rho1 = cfg.shape.rasterize(grid);
    let initial = PhasePair::from_phase1(rho1, cfg.b1, cfg.b2)?;

    let mut energy = BufWriter::new(File::create(out.join("energy.csv"))?);
    writeln!(energy, "{ENERGY_HEADER}")?;
    let mut bfm_log = BufWriter::new(File::create(out.join("bfm_log.csv"))?);
    writeln!(bfm_log, "step,iteration,J,residual_l1,step_size")?;
    let mut diag = BufWriter::new(File::create(out.join("diagnostics.jsonl"))?);

    let frame = |step: usize, rho: &PhaseField| -> Result<()> {
        let path = out.join("frames").join(format!("rho1_{step:05}.pgm"));
        write_pgm(&path, rho).with_context(|| format!("writing {}", path.display()))
    };
    frame(0, &initial.rho1)?;
    let hc0 = muskat::heat_content(&initial, &params);
    for rec in mixed_records(&initial.rho1, &params, hc0, 0)? {
        writeln!(diag, "{}", rec.to_json_line())?;
    }

    let mut components = vec![connected_components(&initial.rho1).0];
    let mut violations = Vec::new();
    let mut mixed_failures = 0;
    let flow = run_flow(
        &initial,
        &step_cfg,
        cfg.n_steps,
        cfg.stop_when_stationary,
        |view| {
            let r = view.report;
            let io = |e: std::io::Error| muskat::Error::Callback(e.to_string());
            writeln!(energy, "{}", energy_csv_row(r)).map_err(io)?;
            for it in &view.dual.history {
                writeln!(
                    bfm_log,
                    "{},{},{:.17e},{:.6e},{:.6e}",
                    view.step, it.iteration, it.value, it.residual_l1, it.step
                )
                .map_err(io)?;
            }
            components.push(connected_components(&view.pair.rho1).0);
            if r.dissipation_slack < -tol {
                violations.push(view.step);
                let rec = DiagnosticRecord::new(
                    "dissipation",
                    inputs_digest(view.pair.grid(), &[view.pair.rho1.field()], &[]),
                    json!({ "step": view.step, "slack": r.dissipation_slack, "tolerance": tol }),
                    Some(false),
                );
                writeln!(diag, "{}", rec.to_json_line()).map_err(io)?;
            }
            if view.step % cfg.frame_stride == 0 {
                write_pgm(
                    &out.join("frames")
                        .join(format!("rho1_{:05}.pgm", view.step)),
                    &view.pair.rho1,
                )
                .map_err(io)?;
                let recs = mixed_records(&view.pair.rho1, &params, r.hc, view.step)
                    .map_err(|e| muskat::Error::Callback(e.to_string()))?;
                for rec in recs {
                    if rec.pass == Some(false) {
                        mixed_failures += 1;
                    }
                    writeln!(diag, "{}", rec.to_json_line()).map_err(io)?;
                }
            }
            if view.step % 50 == 0 {
                info!(
                    "step {}: E = {:.6}, W2^2 = ({:.2e}, {:.2e})",
                    view.step, r.total, r.w2sq[0], r.w2sq[1]
                );
            }
            Ok(())
        },
    )
    .context("simulation failed")?;
    energy.flush()?;
    bfm_log.flush()?;

    let steps = flow.history.len();
    if steps % cfg.frame_stride != 0 {
        frame(steps, &flow.pair.rho1)?;
    }
    let mut f = BufWriter::new(File::create(out.join("final_rho1.raw"))?);
    flow.pair.rho1.field().write_raw(&mut f)?;
    f.flush()?;

    let shape = shape_classify(&flow.pair.rho1)?;
    let digest = inputs_digest(&grid, &[flow.pair.rho1.field()], &[]);
    let rec = DiagnosticRecord::new("shape", digest.clone(), serde_json::to_value(&shape)?, None);
    writeln!(diag, "{}", rec.to_json_line())?;
    let rec = DiagnosticRecord::new(
        "stationarity",
        digest.clone(),
        json!({ "steps": steps, "stationary": flow.stationary }),
        Some(flow.stationary),
    );
    writeln!(diag, "{}", rec.to_json_line())?;
    let c = holder_constant(&flow.history, cfg.tau);
    let rec = DiagnosticRecord::new(
        "holder",
        digest.clone(),
        json!({ "constant": c }),
        Some(c.is_finite()),
    );
    writeln!(diag, "{}", rec.to_json_line())?;
    let pressure = flow.pressure.clone();
    if let Some(p) = &pressure {
        let mut f = BufWriter::new(File::create(out.join("final_pressure.raw"))?);
        p.write_raw(&mut f)?;
        f.flush()?;
        let margin = 4.0 * params.eps().sqrt();
        match interface_pressure_jump(&flow.pair, p, &params, margin) {
            Ok(j) => {
                let rec =
                    DiagnosticRecord::new("pressure_jump", digest, serde_json::to_value(j)?, None);
                writeln!(diag, "{}", rec.to_json_line())?;
            }
            Err(e) => warn!("pressure jump not measured: {e}"),
        }
    }
    diag.flush()?;
    if !violations.is_empty() {
        warn!(
            "{} steps violated the dissipation tolerance",
            violations.len()
        );
    }
    Ok(RunSummary {
        steps,
        stationary: flow.stationary,
        history: flow.history,
        components,
        dissipation_violations: violations,
        mixed_measure_failures: mixed_failures,
        shape,
        initial,
        pair: flow.pair,
        pressure,
    })
}

/// Pressure of the pair's last dual solve, recomputed from a fresh step (used by probes).
pub fn pressure_after_step(pair: &PhasePair, cfg: &SimConfig) -> Result<ScalarField> {
    let out = muskat::jko_step(pair, &cfg.step_config(), None)?;
    Ok(recover_pressure(&out.dual))
}
