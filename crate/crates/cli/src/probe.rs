//! One-shot diagnostic probes and the oracle cross-validation suite.

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use muskat::diagnostics::{
    concavity_probe, connected_components, inputs_digest, interface_pressure_jump,
    mixed_measure_check, shape_classify, DiagnosticRecord,
};
use muskat::kernels::{gaussian_blur, heat_content};
use muskat::oracle::{ctransform_scan, hc_direct, linearized_primal_lp, ot_lp};
use muskat::{
    jko_step, quadratic_ctransform, recover_pressure, solve_dual, BfmOptions, Grid,
    HeatKernelParams, PhaseField, PhasePair, ScalarField,
};

use crate::config::SimConfig;
use crate::run::MIXED_ALPHAS;

pub const PROBES: &[&str] = &[
    "heat-content",
    "mixed-measure",
    "concavity",
    "shape",
    "components",
    "step",
    "pressure-jump",
];

/// Runs probe `name` on the initial state of `cfg`, returning one record per evaluation.
pub fn run_probe(name: &str, cfg: &SimConfig) -> Result<Vec<DiagnosticRecord>> {
    let grid = cfg.grid();
    let step_cfg = cfg.step_config();
    let params = step_cfg.kernel(&grid)?;
    let pair = PhasePair::from_phase1(cfg.shape.rasterize(grid), cfg.b1, cfg.b2)?;
    let digest = inputs_digest(&grid, &[pair.rho1.field()], &[params.eps(), params.sigma()]);
    let hc = heat_content(&pair, &params);
    let rec = |metrics, pass| DiagnosticRecord::new(name, digest.clone(), metrics, pass);
    Ok(match name {
        "heat-content" => vec![rec(
            json!({ "hc": hc, "eps": params.eps(), "sigma": params.sigma() }),
            None,
        )],
        "mixed-measure" => {
            let blurred = gaussian_blur(pair.rho1.field(), &params);
            MIXED_ALPHAS
                .iter()
                .map(|&alpha| {
                    let m = mixed_measure_check(&blurred, alpha, params.eps(), params.sigma(), hc)?;
                    Ok(rec(
                        json!({ "alpha": alpha, "measure": m.measure, "bound": m.bound }),
                        Some(m.pass),
                    ))
                })
                .collect::<Result<_>>()?
        }
        "concavity" => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let other = random_pair(&mut rng, grid, cfg.b1, cfg.b2)?;
            let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
            let r = concavity_probe(&pair, &other, &ts, &params)?;
            vec![rec(
                json!({ "min_slack": r.min_slack, "margin": r.margin, "seed": cfg.seed }),
                Some(r.pass),
            )]
        }
        "shape" => vec![rec(
            serde_json::to_value(shape_classify(&pair.rho1)?)?,
            None,
        )],
        "components" => vec![rec(
            json!({ "components": connected_components(&pair.rho1).0 }),
            None,
        )],
        "step" => {
            let out = jko_step(&pair, &step_cfg, None)?;
            let tol = step_cfg.dissipation_tolerance(&grid);
            let pass = out.report.dissipation_slack >= -tol;
            vec![rec(serde_json::to_value(&out.report)?, Some(pass))]
        }
        "pressure-jump" => {
            let out = jko_step(&pair, &step_cfg, None)?;
            let p = recover_pressure(&out.dual);
            let j = interface_pressure_jump(&pair, &p, &params, 4.0 * params.eps().sqrt())?;
            vec![rec(serde_json::to_value(j)?, None)]
        }
        _ => bail!("unknown probe `{name}` (known: {})", PROBES.join(", ")),
    })
}

fn random_pair(rng: &mut ChaCha8Rng, grid: Grid, b1: f64, b2: f64) -> Result<PhasePair> {
    let mut mask: Vec<bool> = (0..grid.len()).map(|_| rng.random_bool(0.4)).collect();
    mask[0] = true;
    mask[1] = false;
    Ok(PhasePair::from_phase1(
        PhaseField::from_mask(grid, &mask)?,
        b1,
        b2,
    )?)
}

fn random_field(rng: &mut ChaCha8Rng, grid: Grid, lo: f64, hi: f64) -> ScalarField {
    ScalarField::from_vec(
        grid,
        (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect(),
    )
    .expect("finite samples")
}

/// Outcome of one oracle comparison family.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub name: &'static str,
    pub instances: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn pass(&self) -> bool {
        self.worst <= self.tolerance
    }
}

/// Cross-validates every fast path against its brute-force oracle on instances up to
/// `max_size` cells per side (clamped to each oracle's cap).
pub fn oracle_check(max_size: usize, seed: u64) -> Result<Vec<OracleCheck>> {
    if max_size < 4 {
        bail!("--max-size must be at least 4");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = 4 + k % (max_size.min(16) - 3);
        let g = Grid::new(n)?;
        let mut f = random_field(&mut rng, g, -1.0, 1.0);
        if k % 3 == 0 {
            for v in f.values_mut().iter_mut().step_by(3) {
                *v = f64::INFINITY;
            }
        }
        let w = rng.random_range(0.1..20.0);
        let fast = quadratic_ctransform(&f, w)?;
        let (slow, _) = ctransform_scan(&f, w)?;
        for (a, b) in fast.values.values().iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    out.push(OracleCheck {
        name: "c-transform vs scan",
        instances: 100,
        worst,
        tolerance: 1e-12,
    });

    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let n = 4 + k % (max_size.min(32) - 3);
        let g = Grid::new(n)?;
        let pair = random_pair(&mut rng, g, 1.0, 1.0)?;
        let eps = g.area() * rng.random_range(1.0..20.0);
        let sigma = rng.random_range(0.05..1.0);
        let params = HeatKernelParams::new(&g, eps, sigma)?;
        let fast = heat_content(&pair, &params);
        let slow = hc_direct(&pair, eps, sigma)?;
        worst = worst.max((fast - slow).abs());
    }
    out.push(OracleCheck {
        name: "heat content vs dense sum",
        instances: 10,
        worst,
        tolerance: 1e-9,
    });

    let mut worst: f64 = 0.0;
    let lp_n = max_size.min(6);
    for _ in 0..25 {
        let g = Grid::new(lp_n)?;
        let (b1, b2) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
        let pair = random_pair(&mut rng, g, b1, b2)?;
        let psi1 = random_field(&mut rng, g, -1.0, 1.0);
        let psi2 = random_field(&mut rng, g, -1.0, 1.0);
        let tau = rng.random_range(0.005..0.05);
        let dual = solve_dual(&pair, &psi1, &psi2, tau, &BfmOptions::default(), None)?;
        let lp = linearized_primal_lp(&pair, &psi1, &psi2, tau)?;
        worst = worst.max((dual.value - lp.value).abs());
    }
    out.push(OracleCheck {
        name: "dual optimum vs transport-plan LP",
        instances: 25,
        worst,
        tolerance: 1e-6,
    });

    // Optimal cost never exceeds the cost of a random feasible plan (product coupling).
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let m = 36;
        let mu: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = mu.iter().sum();
        let mut nu: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|v| *v *= total / s);
        let cost: Vec<f64> = (0..m * m).map(|_| rng.random_range(0.0..1.0)).collect();
        let (opt, plan) = ot_lp(&mu, &nu, &cost)?;
        let product: f64 = (0..m)
            .flat_map(|i| (0..m).map(move |j| (i, j)))
            .map(|(i, j)| mu[i] * nu[j] / total * cost[i * m + j])
            .sum();
        worst = worst.max(opt - product);
        for (a, b) in plan.row_sums().iter().zip(&mu) {
            worst = worst.max((a - b).abs());
        }
    }
    out.push(OracleCheck {
        name: "LP optimum vs product coupling",
        instances: 10,
        worst: worst.max(0.0),
        tolerance: 1e-9,
    });
    Ok(out)
}
