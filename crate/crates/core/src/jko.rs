//! One linearized minimizing-movements step and the time loop around it.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::bfm::{recover_velocity, solve_dual, BfmOptions, DualState};
use crate::error::{invalid, Result};
use crate::fields::{
    integrate, tv_perimeter, Grid, PhaseField, PhasePair, ScalarField, VectorField,
};
use crate::kernels::{hc_first_variation, HeatKernelParams};
use crate::levelset::{advect, signed_distance, threshold_with_mass, transport_by_map};

/// External potentials `Phi_1`, `Phi_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PotentialSpec {
    Zero,
    /// `Phi_i(x, y) = -w_i y`.
    Gravity {
        w1: f64,
        w2: f64,
    },
    /// `Phi_1 = 1/2 - |y - 1/2|` above the midline and `5/4` of that below; `Phi_2 = 0`.
    Ripping,
    /// Piecewise-linear profiles in `y`, given as sorted `(y, value)` knots; constant beyond the ends.
    Table {
        phase1: Vec<(f64, f64)>,
        phase2: Vec<(f64, f64)>,
    },
}

impl PotentialSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::Gravity { w1, w2 } if !(w1.is_finite() && w2.is_finite()) => {
                Err(invalid("potential", "gravity weights must be finite"))
            }
            PotentialSpec::Table { phase1, phase2 } => {
                for t in [phase1, phase2] {
                    if t.is_empty() {
                        return Err(invalid("potential", "table needs at least one knot"));
                    }
                    if t.iter().any(|(y, v)| !y.is_finite() || !v.is_finite()) {
                        return Err(invalid("potential", "table knots must be finite"));
                    }
                    if t.windows(2).any(|w| w[1].0 <= w[0].0) {
                        return Err(invalid("potential", "table knots must increase in y"));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, phase: usize, y: f64) -> f64 {
        match self {
            PotentialSpec::Zero => 0.0,
            PotentialSpec::Gravity { w1, w2 } => -[*w1, *w2][phase] * y,
            PotentialSpec::Ripping => {
                if phase == 1 {
                    0.0
                } else if y > 0.5 {
                    0.5 - (y - 0.5).abs()
                } else {
                    1.25 * (0.5 - (y - 0.5).abs())
                }
            }
            PotentialSpec::Table { phase1, phase2 } => {
                interpolate(if phase == 0 { phase1 } else { phase2 }, y)
            }
        }
    }

    pub fn fields(&self, grid: &Grid) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_fn(*grid, |_, y| self.value(0, y)),
            ScalarField::from_fn(*grid, |_, y| self.value(1, y)),
        )
    }
}

fn interpolate(knots: &[(f64, f64)], y: f64) -> f64 {
    let first = knots[0];
    let last = knots[knots.len() - 1];
    if y <= first.0 {
        return first.1;
    }
    if y >= last.0 {
        return last.1;
    }
    let k = knots.partition_point(|(ky, _)| *ky <= y);
    let (y0, v0) = knots[k - 1];
    let (y1, v1) = knots[k];
    v0 + (v1 - v0) * (y - y0) / (y1 - y0)
}

/// How the level set is carried over one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transport {
    /// First-order upwind advection by the recovered velocity.
    Upwind,
    /// Level-set values follow the cell maps of the dual solution.
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSetOptions {
    pub cfl: f64,
    pub transport: Transport,
}

impl Default for LevelSetOptions {
    fn default() -> Self {
        LevelSetOptions {
            cfl: 0.5,
            transport: Transport::Map,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepConfig {
    pub tau: f64,
    /// `None` selects `16 h^2`.
    pub eps: Option<f64>,
    pub sigma: f64,
    pub b1: f64,
    pub b2: f64,
    pub potential: PotentialSpec,
    pub bfm: BfmOptions,
    pub levelset: LevelSetOptions,
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(invalid(
                "tau",
                format!("must be positive, got {}", self.tau),
            ));
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return Err(invalid("eps", format!("must be positive, got {e}")));
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid(
                "sigma",
                format!("must be nonnegative, got {}", self.sigma),
            ));
        }
        for (name, b) in [("b1", self.b1), ("b2", self.b2)] {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {b}")));
            }
        }
        if !(self.levelset.cfl > 0.0 && self.levelset.cfl <= 1.0) {
            return Err(invalid(
                "cfl",
                format!("must lie in (0, 1], got {}", self.levelset.cfl),
            ));
        }
        self.potential.validate()
    }

    pub fn kernel(&self, grid: &Grid) -> Result<HeatKernelParams> {
        match self.eps {
            Some(e) => HeatKernelParams::new(grid, e, self.sigma),
            None => HeatKernelParams::new(grid, 16.0 * grid.area(), self.sigma),
        }
    }

    /// Allowed dissipation defect `1e-6 + 2 h sigma`.
    pub fn dissipation_tolerance(&self, grid: &Grid) -> f64 {
        1e-6 + 2.0 * grid.h() * self.sigma
    }

    pub fn weights(&self) -> [f64; 2] {
        [self.b1 / (2.0 * self.tau), self.b2 / (2.0 * self.tau)]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub step: usize,
    pub time: f64,
    pub hc: f64,
    pub potential: f64,
    pub total: f64,
    pub w2sq: [f64; 2],
    /// `E(rho^n) - E(rho^{n+1}) - sum_i b_i W2_i^2 / (2 tau)`.
    pub dissipation_slack: f64,
    pub tv_perimeter: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub bfm_iters: usize,
    pub residual: f64,
    pub mass: [f64; 2],
    pub threshold_level: f64,
    pub auction_bids: usize,
}

/// `h^2 sum (Phi_1 rho_1 + Phi_2 rho_2)`.
pub fn potential_energy(pair: &PhasePair, phi1: &ScalarField, phi2: &ScalarField) -> f64 {
    let h2 = pair.grid().area();
    let a: f64 = pair
        .rho1
        .values()
        .iter()
        .zip(phi1.values())
        .map(|(r, f)| r * f)
        .sum();
    let b: f64 = pair
        .rho2
        .values()
        .iter()
        .zip(phi2.values())
        .map(|(r, f)| r * f)
        .sum();
    h2 * (a + b)
}

/// `tau^2 h^2 sum |v|^2 rho`.
pub fn w2_estimate(rho: &PhaseField, v: &VectorField, tau: f64) -> f64 {
    let h2 = rho.grid().area();
    let s: f64 = rho
        .values()
        .iter()
        .zip(v.x.iter().zip(&v.y))
        .map(|(r, (a, b))| r * (a * a + b * b))
        .sum();
    tau * tau * h2 * s
}

/// Total energy `HC_eps + Phi` of a state.
pub fn total_energy(
    pair: &PhasePair,
    params: &HeatKernelParams,
    phi1: &ScalarField,
    phi2: &ScalarField,
) -> (f64, f64) {
    let k2 = hc_first_variation(&pair.rho2, params);
    let hc = pair.grid().area()
        * k2.values()
            .iter()
            .zip(pair.rho1.values())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    (hc, potential_energy(pair, phi1, phi2))
}

/// Output of [`jko_step`].
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub pair: PhasePair,
    pub dual: DualState,
    pub report: EnergyReport,
}

/// Advances the phases by one linearized step. `p_warm` seeds the pressure solve.
pub fn jko_step(
    pair: &PhasePair,
    cfg: &StepConfig,
    p_warm: Option<&ScalarField>,
) -> Result<StepOutcome> {
    cfg.validate()?;
    pair.rho1.require_characteristic()?;
    let grid = *pair.grid();
    let params = cfg.kernel(&grid)?;
    let (pot1, pot2) = cfg.potential.fields(&grid);

    let k2 = hc_first_variation(&pair.rho2, &params);
    let k1 = hc_first_variation(&pair.rho1, &params);
    let h2 = grid.area();
    let hc_old = h2
        * k2.values()
            .iter()
            .zip(pair.rho1.values())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    let pot_old = potential_energy(pair, &pot1, &pot2);
    let psi1 = k2.zip_map(&pot1, |a, b| a + b);
    let psi2 = k1.zip_map(&pot2, |a, b| a + b);

    let dual = solve_dual(pair, &psi1, &psi2, cfg.tau, &cfg.bfm, p_warm)?;
    let v1 = recover_velocity(&dual, 0, cfg.tau);
    let v2 = recover_velocity(&dual, 1, cfg.tau);
    let w2sq = [
        w2_estimate(&pair.rho1, &v1, cfg.tau),
        w2_estimate(&pair.rho2, &v2, cfg.tau),
    ];

    let m1 = pair.rho1.mass();
    let (rho1_new, level) = match signed_distance(&pair.rho1) {
        Ok(ls) => {
            let moved = match cfg.levelset.transport {
                Transport::Upwind => {
                    let mut v = v1.clone();
                    for (k, &l) in dual.labels.iter().enumerate() {
                        if l == 1 {
                            v.x[k] = v2.x[k];
                            v.y[k] = v2.y[k];
                        }
                    }
                    advect(&ls, &v, cfg.tau, cfg.levelset.cfl)?
                }
                Transport::Map => {
                    let map: Vec<usize> = dual
                        .labels
                        .iter()
                        .enumerate()
                        .map(|(x, &l)| dual.maps[l as usize][x])
                        .collect();
                    transport_by_map(&ls, &map)?
                }
            };
            let t = threshold_with_mass(&moved, m1)?;
            (t.phase, t.level)
        }
        // A single phase fills the domain: nothing can move.
        Err(crate::Error::EmptyPhase) => (pair.rho1.clone(), 0.0),
        Err(e) => return Err(e),
    };
    let next = PhasePair::from_phase1(rho1_new, pair.b1, pair.b2)?;

    let (hc_new, pot_new) = total_energy(&next, &params, &pot1, &pot2);
    let w = cfg.weights();
    let slack = (hc_old + pot_old) - (hc_new + pot_new) - w[0] * w2sq[0] - w[1] * w2sq[1];
    if slack < -cfg.dissipation_tolerance(&grid) {
        warn!("dissipation defect {slack:.3e} exceeds tolerance");
    }
    let p = crate::bfm::recover_pressure(&dual);
    let report = EnergyReport {
        step: 0,
        time: 0.0,
        hc: hc_new,
        potential: pot_new,
        total: hc_new + pot_new,
        w2sq,
        dissipation_slack: slack,
        tv_perimeter: tv_perimeter(&next.rho1),
        p_min: p.min(),
        p_max: p.max(),
        bfm_iters: dual.iterations,
        residual: dual.residual_l1(),
        mass: [integrate(next.rho1.field()), integrate(next.rho2.field())],
        threshold_level: level,
        auction_bids: dual.auction_bids,
    };
    debug!(
        "step: E={:.9} slack={:.3e} W2=({:.3e},{:.3e}) iters={} bids={}",
        report.total, slack, w2sq[0], w2sq[1], dual.iterations, dual.auction_bids
    );
    Ok(StepOutcome {
        pair: next,
        dual,
        report,
    })
}

/// What the loop hands to the per-step callback.
pub struct StepView<'a> {
    pub step: usize,
    pub pair: &'a PhasePair,
    pub dual: &'a DualState,
    pub report: &'a EnergyReport,
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub pair: PhasePair,
    pub history: Vec<EnergyReport>,
    pub stationary: bool,
    /// Final pressure, usable as a warm start.
    pub pressure: Option<ScalarField>,
}

/// Runs up to `n_steps` steps, stopping early once [`crate::diagnostics::stationarity`] holds
/// if `stop_when_stationary` is set.
pub fn run_flow(
    pair0: &PhasePair,
    cfg: &StepConfig,
    n_steps: usize,
    stop_when_stationary: bool,
    mut on_step: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<FlowResult> {
    cfg.validate()?;
    let mut pair = pair0.clone();
    let mut history: Vec<EnergyReport> = Vec::with_capacity(n_steps);
    let mut pressure: Option<ScalarField> = None;
    let mut stationary = false;
    let h = pair.grid().h();
    for step in 1..=n_steps {
        let mut out = jko_step(&pair, cfg, pressure.as_ref())?;
        out.report.step = step;
        out.report.time = step as f64 * cfg.tau;
        on_step(&StepView {
            step,
            pair: &out.pair,
            dual: &out.dual,
            report: &out.report,
        })?;
        pressure = Some(out.dual.p.clone());
        pair = out.pair;
        history.push(out.report);
        if crate::diagnostics::stationarity(&history, h) {
            stationary = true;
            if stop_when_stationary {
                break;
            }
        }
    }
    Ok(FlowResult {
        pair,
        history,
        stationary,
        pressure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gravity_energy_of_lower_half() {
        let g = Grid::new(64).unwrap();
        let rho = PhaseField::from_indicator(g, |_, y| y < 0.5);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let (a, b) = PotentialSpec::Gravity { w1: 5.0, w2: 1.0 }.fields(&g);
        assert!((potential_energy(&pair, &a, &b) + 1.0).abs() < 1e-12);
        let zero = ScalarField::zeros(g);
        assert_eq!(potential_energy(&pair, &zero, &zero), 0.0);
    }

    #[test]
    fn swapping_phases_flips_antisymmetric_potential() {
        let g = Grid::new(32).unwrap();
        let rho = PhaseField::from_indicator(g, |x, y| x * y < 0.2);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let swapped = PhasePair::new(pair.rho2.clone(), pair.rho1.clone(), 1.0, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x - y * y);
        let nf = f.map(|v| -v);
        let a = potential_energy(&pair, &f, &nf);
        let b = potential_energy(&swapped, &f, &nf);
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn translation_estimate() {
        let g = Grid::new(32).unwrap();
        let rho = PhaseField::from_indicator(g, |x, _| x < 0.25);
        let mut v = VectorField::zeros(g);
        let (tau, d) = (0.1, 3.0 * g.h());
        v.x.iter_mut().for_each(|c| *c = d / tau);
        let est = w2_estimate(&rho, &v, tau);
        assert!((est - rho.mass() * d * d).abs() < 1e-14);
        assert_eq!(w2_estimate(&rho, &VectorField::zeros(g), tau), 0.0);
    }

    #[test]
    fn table_interpolates_and_clamps() {
        let t = PotentialSpec::Table {
            phase1: vec![(0.0, 0.0), (1.0, 2.0)],
            phase2: vec![(0.5, 3.0)],
        };
        t.validate().unwrap();
        assert!((t.value(0, 0.25) - 0.5).abs() < 1e-15);
        assert_eq!(t.value(1, 0.0), 3.0);
        assert_eq!(t.value(1, 0.9), 3.0);
        let bad = PotentialSpec::Table {
            phase1: vec![(0.5, 0.0), (0.5, 1.0)],
            phase2: vec![(0.0, 0.0)],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn ripping_potential_profile() {
        let r = PotentialSpec::Ripping;
        assert!((r.value(0, 0.75) - 0.25).abs() < 1e-15);
        assert!((r.value(0, 0.25) - 1.25 * 0.25).abs() < 1e-15);
        assert_eq!(r.value(1, 0.3), 0.0);
        assert_eq!(r.value(0, 0.0), 0.0);
    }
}
