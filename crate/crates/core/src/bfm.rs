//! Dual pressure solve for the linearized step.
//!
//! `J(p) = h^2 sum [ (p + psi_1)^{c_1} rho_1 + (p + psi_2)^{c_2} rho_2 - p ]` is concave in `p`;
//! its supergradient is `(T_1)# rho_1 + (T_2)# rho_2 - 1`. The solver alternates a
//! preconditioned ascent step on the pressure `p` with one on the source potential `phi`
//! (the back-and-forth structure), then finishes with an epsilon-scaled auction so the maps
//! form an exact bijection of cells.

use std::io::{self, Write};

use log::debug;

use crate::auction::{self, Assignment};
use crate::ctransform::{ctransform_into, CTransformScratch};
use crate::error::{invalid, Error, Result};
use crate::fields::{Grid, PhasePair, ScalarField, VectorField};
use crate::precond::NeumannSolver;

#[derive(Debug, Clone, PartialEq)]
pub struct BfmOptions {
    pub max_iters: usize,
    /// Target for `h^2 sum |r|`.
    pub tol_res: f64,
    /// Stop ascending once the relative dual increase stays below this for three iterations.
    pub tol_dual: f64,
    pub alpha: f64,
    /// Defaults to `tau / max(b1, b2)` when unset.
    pub beta: Option<f64>,
    pub initial_step: f64,
    /// Finish with the auction so the residual is exactly zero.
    pub polish: bool,
    /// Final auction tolerance; bounds the duality gap of the returned state.
    pub eps_final: f64,
    pub max_bids: usize,
}

impl Default for BfmOptions {
    fn default() -> Self {
        BfmOptions {
            max_iters: 40,
            tol_res: 1e-10,
            tol_dual: 1e-7,
            alpha: 1.0,
            beta: None,
            initial_step: 1.0,
            polish: true,
            eps_final: 1e-9,
            max_bids: 200_000_000,
        }
    }
}

impl BfmOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 && !self.polish {
            return Err(invalid("max_iters", "must be positive"));
        }
        for (name, v) in [
            ("tol_res", self.tol_res),
            ("tol_dual", self.tol_dual),
            ("alpha", self.alpha),
            ("initial_step", self.initial_step),
            ("eps_final", self.eps_final),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return Err(invalid("beta", format!("must be positive, got {b}")));
            }
        }
        Ok(())
    }
}

/// One line of the convergence log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iteration: usize,
    pub value: f64,
    pub residual_l1: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub p: ScalarField,
    /// `(p + psi_i)^{c_i}` on every cell.
    pub phi: [ScalarField; 2],
    /// `T_i`: target cell of every cell of phase `i`; c-transform argmin on the other cells.
    pub maps: [Vec<usize>; 2],
    /// `(T_1)# rho_1 + (T_2)# rho_2 - 1`.
    pub residual: ScalarField,
    pub value: f64,
    /// Phase of every cell (0 or 1).
    pub labels: Vec<u8>,
    pub iterations: usize,
    pub auction_bids: usize,
    pub history: Vec<IterRecord>,
}

impl DualState {
    pub fn residual_l1(&self) -> f64 {
        self.p.grid().area() * self.residual.values().iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn write_log_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "iteration,J,residual_l1,step")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{:.17e},{:.6e},{:.6e}",
                r.iteration, r.value, r.residual_l1, r.step
            )?;
        }
        Ok(())
    }

    /// Transport cost `sum_i w_i h^2 sum_{x in phase i} |T_i(x) - x|^2` of the maps.
    pub fn transport_cost(&self, w: [f64; 2]) -> f64 {
        let g = self.p.grid();
        let mut total = 0.0;
        for (x, &l) in self.labels.iter().enumerate() {
            let l = l as usize;
            let (a, b) = g.center_of(x);
            let (c, d) = g.center_of(self.maps[l][x]);
            total += w[l] * ((a - c).powi(2) + (b - d).powi(2));
        }
        total * g.area()
    }
}

/// Exact `J(p)` for arbitrary (not necessarily characteristic) phases.
pub fn dual_value(
    p: &ScalarField,
    psi1: &ScalarField,
    psi2: &ScalarField,
    pair: &PhasePair,
    tau: f64,
) -> Result<f64> {
    let g = *p.grid();
    let mut scratch = CTransformScratch::new(&g);
    let mut phi = vec![0.0; g.len()];
    let mut arg = vec![0; g.len()];
    let mut total = -p.values().iter().sum::<f64>();
    for (i, psi) in [psi1, psi2].into_iter().enumerate() {
        let f: Vec<f64> = p
            .values()
            .iter()
            .zip(psi.values())
            .map(|(a, b)| a + b)
            .collect();
        let w = pair.mobility(i) / (2.0 * tau);
        ctransform_into(&g, &f, w, &mut scratch, &mut phi, &mut arg)?;
        total += phi
            .iter()
            .zip(pair.phase(i).values())
            .map(|(a, r)| a * r)
            .sum::<f64>();
    }
    Ok(g.area() * total)
}

struct Evaluator<'a> {
    grid: Grid,
    labels: &'a [u8],
    psi: [&'a [f64]; 2],
    w: [f64; 2],
    has: [bool; 2],
    scratch: CTransformScratch,
    buf: Vec<f64>,
    phi: [Vec<f64>; 2],
    map: [Vec<usize>; 2],
    hval: [Vec<f64>; 2],
    harg: [Vec<usize>; 2],
    /// Backward pass: `p_phi` and its source map.
    p_phi: Vec<f64>,
    src: Vec<usize>,
    counts: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(grid: Grid, labels: &'a [u8], psi: [&'a [f64]; 2], w: [f64; 2]) -> Self {
        let len = grid.len();
        let has = [labels.contains(&0), labels.contains(&1)];
        Evaluator {
            grid,
            labels,
            psi,
            w,
            has,
            scratch: CTransformScratch::new(&grid),
            buf: vec![0.0; len],
            phi: [vec![0.0; len], vec![0.0; len]],
            map: [vec![0; len], vec![0; len]],
            hval: [vec![0.0; len], vec![0.0; len]],
            harg: [vec![0; len], vec![0; len]],
            p_phi: vec![0.0; len],
            src: vec![0; len],
            counts: vec![0.0; len],
        }
    }

    /// `J(p)`; leaves `phi`, `map` and the supergradient in `counts`.
    fn forward(&mut self, p: &[f64]) -> Result<f64> {
        for l in 0..2 {
            for ((b, a), s) in self.buf.iter_mut().zip(p).zip(self.psi[l]) {
                *b = a + s;
            }
            ctransform_into(
                &self.grid,
                &self.buf,
                self.w[l],
                &mut self.scratch,
                &mut self.phi[l],
                &mut self.map[l],
            )?;
        }
        self.counts.iter_mut().for_each(|c| *c = -1.0);
        let mut total = 0.0;
        for (x, &l) in self.labels.iter().enumerate() {
            let l = l as usize;
            total += self.phi[l][x];
            self.counts[self.map[l][x]] += 1.0;
        }
        total -= p.iter().sum::<f64>();
        Ok(self.grid.area() * total)
    }

    /// Source potential of the current forward pass.
    fn source_potential(&self) -> Vec<f64> {
        self.labels
            .iter()
            .enumerate()
            .map(|(x, &l)| self.phi[l as usize][x])
            .collect()
    }

    /// `I(phi) = h^2 (sum phi - sum p_phi)`; leaves `p_phi`, `src` and `1 - S#1` in `counts`.
    fn backward(&mut self, phi: &[f64]) -> Result<f64> {
        for l in 0..2 {
            if !self.has[l] {
                continue;
            }
            for (x, b) in self.buf.iter_mut().enumerate() {
                *b = if self.labels[x] as usize == l {
                    -phi[x]
                } else {
                    f64::INFINITY
                };
            }
            ctransform_into(
                &self.grid,
                &self.buf,
                self.w[l],
                &mut self.scratch,
                &mut self.hval[l],
                &mut self.harg[l],
            )?;
        }
        self.counts.iter_mut().for_each(|c| *c = 1.0);
        let mut total = phi.iter().sum::<f64>();
        for y in 0..self.grid.len() {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for l in 0..2 {
                if !self.has[l] {
                    continue;
                }
                let v = -self.psi[l][y] - self.hval[l][y];
                if v > best {
                    best = v;
                    arg = self.harg[l][y];
                }
            }
            self.p_phi[y] = best;
            self.src[y] = arg;
            self.counts[arg] -= 1.0;
            total -= best;
        }
        Ok(self.grid.area() * total)
    }

    fn residual_l1(&self) -> f64 {
        self.grid.area() * self.counts.iter().map(|c| c.abs()).sum::<f64>()
    }
}

/// Gains at rounding level are treated as ties so the iteration does not depend on the gauge
/// of the starting pressure.
fn improves(v: f64, base: f64) -> bool {
    v > base + 1e-13 * base.abs().max(1.0)
}

fn subtract_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Maximizes the dual of the linearized step. `p0` warm-starts the pressure.
pub fn solve_dual(
    pair: &PhasePair,
    psi1: &ScalarField,
    psi2: &ScalarField,
    tau: f64,
    opts: &BfmOptions,
    p0: Option<&ScalarField>,
) -> Result<DualState> {
    opts.validate()?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be positive, got {tau}")));
    }
    let grid = *pair.grid();
    let labels = pair.labels()?;
    let w = [pair.b1 / (2.0 * tau), pair.b2 / (2.0 * tau)];
    let beta = opts.beta.unwrap_or(tau / pair.b1.max(pair.b2));
    let mut ev = Evaluator::new(grid, &labels, [psi1.values(), psi2.values()], w);
    let mut precond = NeumannSolver::new(&grid);

    let mut p = match p0 {
        Some(p0) => p0.values().to_vec(),
        None => vec![0.0; grid.len()],
    };
    subtract_mean(&mut p);
    let mut value = ev.forward(&p)?;
    let mut res = ev.residual_l1();
    let mut history = vec![IterRecord {
        iteration: 0,
        value,
        residual_l1: res,
        step: 0.0,
    }];
    let (mut sf, mut sb) = (opts.initial_step, opts.initial_step);
    let mut stalls = 0;
    let mut iterations = 0;
    let mut dir = vec![0.0; grid.len()];

    while iterations < opts.max_iters && res > opts.tol_res {
        iterations += 1;
        let before = value;

        // Ascent on p along the preconditioned supergradient.
        dir.copy_from_slice(&ev.counts);
        precond.solve(&mut dir, opts.alpha, beta);
        let mut trial = vec![0.0; grid.len()];
        let mut moved = false;
        for _ in 0..40 {
            for ((t, a), d) in trial.iter_mut().zip(&p).zip(&dir) {
                *t = a + sf * d;
            }
            let v = ev.forward(&trial)?;
            if improves(v, value) {
                std::mem::swap(&mut p, &mut trial);
                value = v;
                moved = true;
                sf *= 2.0;
                break;
            }
            sf *= 0.5;
        }
        if !moved {
            value = ev.forward(&p)?;
        }

        // Ascent on the source potential, then back to the pressure it induces.
        let mut phi = ev.source_potential();
        let mut back = ev.backward(&phi)?;
        dir.copy_from_slice(&ev.counts);
        precond.solve(&mut dir, opts.alpha, beta);
        let mut moved_b = false;
        let mut trial_phi = vec![0.0; grid.len()];
        for _ in 0..40 {
            for ((t, a), d) in trial_phi.iter_mut().zip(&phi).zip(&dir) {
                *t = a + sb * d;
            }
            let v = ev.backward(&trial_phi)?;
            if improves(v, back) {
                std::mem::swap(&mut phi, &mut trial_phi);
                back = v;
                moved_b = true;
                sb *= 2.0;
                break;
            }
            sb *= 0.5;
        }
        if !moved_b {
            ev.backward(&phi)?;
        }
        let _ = back;
        let mut candidate = ev.p_phi.clone();
        subtract_mean(&mut candidate);
        let v = ev.forward(&candidate)?;
        if improves(v, value) {
            p = candidate;
            value = v;
        } else {
            value = ev.forward(&p)?;
        }
        res = ev.residual_l1();
        history.push(IterRecord {
            iteration: iterations,
            value,
            residual_l1: res,
            step: sf,
        });
        if value - before <= opts.tol_dual * value.abs().max(1e-3) {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    debug!("ascent: {iterations} iterations, J={value:.12e}, |r|_1={res:.3e}");

    let mut maps = [ev.map[0].clone(), ev.map[1].clone()];
    let mut auction_bids = 0;
    if res > opts.tol_res {
        if !opts.polish {
            let state = assemble(&ev, p, maps, value, &labels, iterations, 0, history);
            return Err(Error::NonConvergence {
                residual: res,
                iterations,
                state: Box::new(state),
            });
        }
        let problem = Assignment {
            grid,
            labels: &labels,
            psi: [psi1.values(), psi2.values()],
            w,
        };
        let eps_start = (16.0 * w[0].min(w[1]) * grid.area()).max(opts.eps_final);
        let out = auction::solve(
            &problem,
            p.clone(),
            eps_start,
            opts.eps_final,
            opts.max_bids,
        )?;
        auction_bids = out.bids;
        p = out.prices;
        subtract_mean(&mut p);
        value = ev.forward(&p)?;
        maps = [ev.map[0].clone(), ev.map[1].clone()];
        ev.counts.iter_mut().for_each(|c| *c = -1.0);
        for (x, &l) in labels.iter().enumerate() {
            maps[l as usize][x] = out.target[x];
            ev.counts[out.target[x]] += 1.0;
        }
        res = ev.residual_l1();
        debug!(
            "auction: {} bids in {} phases, J={value:.12e}, |r|_1={res:.1e}",
            out.bids, out.phases
        );
        history.push(IterRecord {
            iteration: iterations + 1,
            value,
            residual_l1: res,
            step: opts.eps_final,
        });
    }
    Ok(assemble(
        &ev,
        p,
        maps,
        value,
        &labels,
        iterations,
        auction_bids,
        history,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    ev: &Evaluator<'_>,
    p: Vec<f64>,
    maps: [Vec<usize>; 2],
    value: f64,
    labels: &[u8],
    iterations: usize,
    auction_bids: usize,
    history: Vec<IterRecord>,
) -> DualState {
    let g = ev.grid;
    let field = |v: Vec<f64>| ScalarField::from_vec(g, v).expect("finite dual field");
    DualState {
        p: field(p),
        phi: [field(ev.phi[0].clone()), field(ev.phi[1].clone())],
        maps,
        residual: field(ev.counts.clone()),
        value,
        labels: labels.to_vec(),
        iterations,
        auction_bids,
        history,
    }
}

/// `v_i(x) = (T_i(x) - x) / tau` on cells of phase `i`, zero elsewhere.
pub fn recover_velocity(state: &DualState, i: usize, tau: f64) -> VectorField {
    let g = *state.p.grid();
    let mut v = VectorField::zeros(g);
    for (x, &l) in state.labels.iter().enumerate() {
        if l as usize != i {
            continue;
        }
        let (a, b) = g.center_of(x);
        let (c, d) = g.center_of(state.maps[i][x]);
        v.x[x] = (c - a) / tau;
        v.y[x] = (d - b) / tau;
    }
    v
}

/// Pressure with zero mean over the domain.
pub fn recover_pressure(state: &DualState) -> ScalarField {
    let mut v = state.p.values().to_vec();
    subtract_mean(&mut v);
    ScalarField::from_vec(*state.p.grid(), v).expect("finite pressure")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::PhaseField;
    use crate::oracle::linearized_primal_lp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(
        rng: &mut ChaCha8Rng,
        n: usize,
    ) -> (PhasePair, ScalarField, ScalarField, f64) {
        let g = Grid::new(n).unwrap();
        let mut mask: Vec<bool> = (0..g.len()).map(|_| rng.random_bool(0.4)).collect();
        mask[0] = true;
        mask[1] = false;
        let rho = PhaseField::from_mask(g, &mask).unwrap();
        let b1 = rng.random_range(0.5..2.0);
        let b2 = rng.random_range(0.5..2.0);
        let pair = PhasePair::from_phase1(rho, b1, b2).unwrap();
        let psi1 = ScalarField::from_vec(
            g,
            (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let psi2 = ScalarField::from_vec(
            g,
            (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let tau = rng.random_range(0.005..0.05);
        (pair, psi1, psi2, tau)
    }

    #[test]
    fn zero_forcing_gives_zero_pressure() {
        let g = Grid::new(8).unwrap();
        let rho = PhaseField::from_indicator(g, |x, y| x + y < 0.9);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let zero = ScalarField::zeros(g);
        assert_eq!(dual_value(&zero, &zero, &zero, &pair, 0.1).unwrap(), 0.0);
        let s = solve_dual(&pair, &zero, &zero, 0.1, &BfmOptions::default(), None).unwrap();
        assert_eq!(s.residual_l1(), 0.0);
        assert!(s.p.values().iter().all(|v| v.abs() < 1e-12));
        for x in 0..g.len() {
            assert_eq!(s.maps[s.labels[x] as usize][x], x);
        }
    }

    #[test]
    fn dual_value_is_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (pair, psi1, psi2, tau) = random_instance(&mut rng, 6);
        let p = ScalarField::from_fn(*pair.grid(), |x, y| (3.0 * x).sin() - y);
        let shifted = p.map(|v| v + 7.25);
        let a = dual_value(&p, &psi1, &psi2, &pair, tau).unwrap();
        let b = dual_value(&shifted, &psi1, &psi2, &pair, tau).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn matches_primal_lp_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let (pair, psi1, psi2, tau) = random_instance(&mut rng, 6);
            let s = solve_dual(&pair, &psi1, &psi2, tau, &BfmOptions::default(), None).unwrap();
            let lp = linearized_primal_lp(&pair, &psi1, &psi2, tau).unwrap();
            assert!(
                (s.value - lp.value).abs() < 1e-6,
                "dual {} lp {}",
                s.value,
                lp.value
            );
            assert_eq!(s.residual_l1(), 0.0);
            // the recovered maps are optimal for the primal as well
            let g = pair.grid();
            let w = [pair.b1 / (2.0 * tau), pair.b2 / (2.0 * tau)];
            let primal: f64 = s.transport_cost(w)
                + g.area()
                    * s.labels
                        .iter()
                        .enumerate()
                        .map(|(x, &l)| [&psi1, &psi2][l as usize].values()[s.maps[l as usize][x]])
                        .sum::<f64>();
            assert!((primal - lp.value).abs() < 1e-6);
        }
    }

    #[test]
    fn equal_potentials_keep_cells_in_place() {
        let g = Grid::new(10).unwrap();
        let rho = PhaseField::from_indicator(g, |x, _| x < 0.35);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| (5.0 * x).cos() + y * y);
        let s = solve_dual(&pair, &psi, &psi, 0.02, &BfmOptions::default(), None).unwrap();
        for x in 0..g.len() {
            assert_eq!(s.maps[s.labels[x] as usize][x], x);
        }
        let v = recover_velocity(&s, 0, 0.02);
        assert_eq!(v.max_norm(), 0.0);
    }

    #[test]
    fn pressure_has_zero_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let (pair, psi1, psi2, tau) = random_instance(&mut rng, 8);
        let s = solve_dual(&pair, &psi1, &psi2, tau, &BfmOptions::default(), None).unwrap();
        let p = recover_pressure(&s);
        assert!(p.values().iter().sum::<f64>().abs() / (g_len(&p) as f64) < 1e-12);
    }

    fn g_len(f: &ScalarField) -> usize {
        f.grid().len()
    }

    #[test]
    fn residual_sums_to_zero_every_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (pair, psi1, psi2, tau) = random_instance(&mut rng, 8);
        let opts = BfmOptions {
            polish: false,
            max_iters: 5,
            ..BfmOptions::default()
        };
        let s = match solve_dual(&pair, &psi1, &psi2, tau, &opts, None) {
            Ok(s) => s,
            Err(Error::NonConvergence { state, .. }) => *state,
            Err(e) => panic!("{e}"),
        };
        assert!(s.residual.values().iter().sum::<f64>().abs() < 1e-10);
        for w in s.history.windows(2) {
            assert!(w[1].value >= w[0].value);
        }
    }
}
