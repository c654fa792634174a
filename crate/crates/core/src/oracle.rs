//! Slow reference computations for small instances: exact transport LPs by the
//! transportation simplex, dense heat content, and brute-force c-transforms.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::fields::{PhaseField, PhasePair, ScalarField};

/// Largest grid (cells) accepted by [`ot_lp`].
pub const OT_CAP: usize = 144;
/// Largest grid (cells) accepted by [`linearized_primal_lp`].
pub const PRIMAL_CAP: usize = 64;
/// Largest grid (cells) accepted by [`hc_direct`].
pub const HC_CAP: usize = 1024;

/// Dense coupling between `m` sources and `n` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub m: usize,
    pub n: usize,
    pub gamma: Vec<f64>,
}

impl TransportPlan {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.gamma[i * self.n + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.gamma.chunks(self.n).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for r in self.gamma.chunks(self.n) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn cost(&self, cost: &[f64]) -> f64 {
        self.gamma.iter().zip(cost).map(|(g, c)| g * c).sum()
    }
}

/// Minimizes `sum gamma_ij c_ij` over couplings of `mu` and `nu`.
pub fn ot_lp(mu: &[f64], nu: &[f64], cost: &[f64]) -> Result<(f64, TransportPlan)> {
    if mu.len() > OT_CAP || nu.len() > OT_CAP {
        return Err(Error::TooLarge {
            cells: mu.len().max(nu.len()),
            cap: OT_CAP,
        });
    }
    transport_simplex(mu, nu, cost)
}

/// Squared-distance transport cost between two densities on the same grid.
pub fn w2_squared_lp(mu: &ScalarField, nu: &ScalarField) -> Result<f64> {
    let g = mu.grid();
    let a: Vec<f64> = mu.values().iter().map(|v| v * g.area()).collect();
    let b: Vec<f64> = nu.values().iter().map(|v| v * g.area()).collect();
    let n = g.len();
    let mut cost = vec![0.0; n * n];
    for x in 0..n {
        let (x0, x1) = g.center_of(x);
        for y in 0..n {
            let (y0, y1) = g.center_of(y);
            cost[x * n + y] = (x0 - y0).powi(2) + (x1 - y1).powi(2);
        }
    }
    ot_lp(&a, &b, &cost).map(|(c, _)| c)
}

/// Optimum of the linearized step in plan form.
#[derive(Debug, Clone)]
pub struct LinearizedPrimal {
    pub value: f64,
    /// Per-phase plans, source cell by target cell, in mass units (`h^2` per full cell).
    pub plans: [TransportPlan; 2],
}

impl LinearizedPrimal {
    /// Target density of phase `i`.
    pub fn target_marginal(&self, i: usize, cell_area: f64) -> Vec<f64> {
        self.plans[i]
            .col_sums()
            .iter()
            .map(|v| v / cell_area)
            .collect()
    }
}

/// Minimizes `sum_i sum gamma_i(x, y) [psi_i(y) + b_i |x - y|^2 / (2 tau)]` over plans whose
/// source marginals are `rho_i h^2` and whose summed target marginal is `h^2` per cell.
#[allow(clippy::needless_range_loop)]
pub fn linearized_primal_lp(
    pair: &PhasePair,
    psi1: &ScalarField,
    psi2: &ScalarField,
    tau: f64,
) -> Result<LinearizedPrimal> {
    let g = *pair.grid();
    let n = g.len();
    if n > PRIMAL_CAP {
        return Err(Error::TooLarge {
            cells: n,
            cap: PRIMAL_CAP,
        });
    }
    let h2 = g.area();
    let psis = [psi1, psi2];
    let mut supply = Vec::new();
    let mut owner = Vec::new();
    let mut cost = Vec::new();
    for i in 0..2 {
        let w = pair.mobility(i) / (2.0 * tau);
        for x in 0..n {
            let m = pair.phase(i).values()[x];
            if m <= 0.0 {
                continue;
            }
            supply.push(m * h2);
            owner.push((i, x));
            let (x0, x1) = g.center_of(x);
            for y in 0..n {
                let (y0, y1) = g.center_of(y);
                cost.push(psis[i].values()[y] + w * ((x0 - y0).powi(2) + (x1 - y1).powi(2)));
            }
        }
    }
    let demand = vec![h2; n];
    let (value, plan) = transport_simplex(&supply, &demand, &cost)?;
    let mut plans = [
        TransportPlan {
            m: n,
            n,
            gamma: vec![0.0; n * n],
        },
        TransportPlan {
            m: n,
            n,
            gamma: vec![0.0; n * n],
        },
    ];
    for (r, &(i, x)) in owner.iter().enumerate() {
        for y in 0..n {
            plans[i].gamma[x * n + y] = plan.get(r, y);
        }
    }
    Ok(LinearizedPrimal { value, plans })
}

/// Dense double sum `sigma sqrt(2 pi / eps) h^4 sum_x sum_x' G_eps(x - x') rho1(x') rho2(x)`.
pub fn hc_direct(pair: &PhasePair, eps: f64, sigma: f64) -> Result<f64> {
    hc_direct_of(&pair.rho1, &pair.rho2, eps, sigma)
}

pub fn hc_direct_of(rho1: &PhaseField, rho2: &PhaseField, eps: f64, sigma: f64) -> Result<f64> {
    let g = *rho1.grid();
    let n = g.len();
    if n > HC_CAP {
        return Err(Error::TooLarge {
            cells: n,
            cap: HC_CAP,
        });
    }
    let norm = 1.0 / (4.0 * std::f64::consts::PI * eps);
    let mut total = 0.0;
    for x in 0..n {
        let b = rho2.values()[x];
        if b == 0.0 {
            continue;
        }
        let (x0, x1) = g.center_of(x);
        let mut acc = 0.0;
        for y in 0..n {
            let a = rho1.values()[y];
            if a == 0.0 {
                continue;
            }
            let (y0, y1) = g.center_of(y);
            let d2 = (x0 - y0).powi(2) + (x1 - y1).powi(2);
            acc += norm * (-d2 / (4.0 * eps)).exp() * a;
        }
        total += acc * b;
    }
    let h4 = g.area() * g.area();
    Ok(sigma * (2.0 * std::f64::consts::PI / eps).sqrt() * h4 * total)
}

/// Brute-force `min_y f(y) + w |y - x|^2` with the smallest minimizing index.
pub fn ctransform_scan(f: &ScalarField, w: f64) -> Result<(Vec<f64>, Vec<usize>)> {
    let g = *f.grid();
    let n = g.len();
    if f.values().iter().all(|v| *v == f64::INFINITY) {
        return Err(Error::AllInfinite);
    }
    let mut val = vec![f64::INFINITY; n];
    let mut arg = vec![usize::MAX; n];
    for x in 0..n {
        let (x0, x1) = g.center_of(x);
        for y in 0..n {
            let fy = f.values()[y];
            if fy == f64::INFINITY {
                continue;
            }
            let (y0, y1) = g.center_of(y);
            let c = fy + w * ((x0 - y0).powi(2) + (x1 - y1).powi(2));
            if c < val[x] {
                val[x] = c;
                arg[x] = y;
            }
        }
    }
    Ok((val, arg))
}

/// Transportation simplex: northwest-corner start, u-v potentials, tree cycles.
/// Dantzig pricing, switching to Bland's rule after a run of degenerate pivots.
#[allow(clippy::needless_range_loop)]
fn transport_simplex(supply: &[f64], demand: &[f64], cost: &[f64]) -> Result<(f64, TransportPlan)> {
    let m = supply.len();
    let n = demand.len();
    if m == 0 || n == 0 {
        return Err(Error::Infeasible("empty marginal".into()));
    }
    if cost.len() != m * n {
        return Err(Error::LengthMismatch {
            expected: m * n,
            got: cost.len(),
        });
    }
    if let Some(k) = supply
        .iter()
        .chain(demand)
        .position(|v| !(v.is_finite() && *v >= 0.0))
    {
        return Err(Error::Infeasible(format!(
            "marginal entry {k} is negative or non-finite"
        )));
    }
    let ts: f64 = supply.iter().sum();
    let td: f64 = demand.iter().sum();
    if (ts - td).abs() > 1e-12 * ts.max(td).max(1e-300) {
        return Err(Error::Infeasible(format!(
            "total supply {ts} != total demand {td}"
        )));
    }
    let scale = cost.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1.0);
    let tol = 1e-12 * scale;

    let mut x = vec![0.0; m * n];
    let mut basic = vec![false; m * n];
    {
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let q = s[i].min(d[j]).max(0.0);
            x[i * n + j] = q;
            basic[i * n + j] = true;
            s[i] -= q;
            d[j] -= q;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && s[i] <= d[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let mut u = vec![0.0; m];
    let mut v = vec![0.0; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); m + n];
    let mut degenerate_run = 0usize;
    let max_iter = 50 * (m + n) * (m + n) + 1000;
    for _ in 0..max_iter {
        for a in adj.iter_mut() {
            a.clear();
        }
        for (k, _) in basic.iter().enumerate().filter(|(_, b)| **b) {
            let (i, j) = (k / n, k % n);
            adj[i].push(m + j);
            adj[m + j].push(i);
        }
        // potentials with u_0 = 0
        let mut seen = vec![false; m + n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        u[0] = 0.0;
        while let Some(a) = queue.pop_front() {
            for &b in &adj[a] {
                if seen[b] {
                    continue;
                }
                seen[b] = true;
                if a < m {
                    v[b - m] = cost[a * n + (b - m)] - u[a];
                } else {
                    u[b] = cost[b * n + (a - m)] - v[a - m];
                }
                queue.push_back(b);
            }
        }
        debug_assert!(seen.iter().all(|s| *s), "basis is not a spanning tree");

        let bland = degenerate_run > m + n;
        let mut enter = None;
        let mut best = -tol;
        'scan: for i in 0..m {
            for j in 0..n {
                let k = i * n + j;
                if basic[k] {
                    continue;
                }
                let r = cost[k] - u[i] - v[j];
                if r < best {
                    enter = Some(k);
                    if bland {
                        break 'scan;
                    }
                    best = r;
                }
            }
        }
        let Some(k_in) = enter else {
            let total = x.iter().zip(cost).map(|(a, c)| a * c).sum();
            return Ok((total, TransportPlan { m, n, gamma: x }));
        };

        let (ei, ej) = (k_in / n, k_in % n);
        let path = tree_path(&adj, ei, m + ej, m + n);
        // path runs row ei -> ... -> column ej; consecutive nodes name basic cells.
        let mut cells = Vec::with_capacity(path.len());
        for w in path.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (i, j) = if a < m { (a, b - m) } else { (b, a - m) };
            cells.push(i * n + j);
        }
        // Entering cell gets +; cells along the path alternate -, +, -, ...
        let mut theta = f64::INFINITY;
        let mut leave = usize::MAX;
        for (t, &c) in cells.iter().enumerate() {
            if t % 2 == 0 && (x[c] < theta || (x[c] == theta && c < leave)) {
                theta = x[c];
                leave = c;
            }
        }
        if theta <= 0.0 {
            degenerate_run += 1;
        } else {
            degenerate_run = 0;
        }
        x[k_in] += theta;
        for (t, &c) in cells.iter().enumerate() {
            if t % 2 == 0 {
                x[c] -= theta;
            } else {
                x[c] += theta;
            }
        }
        x[leave] = 0.0;
        basic[leave] = false;
        basic[k_in] = true;
    }
    Err(Error::Infeasible(
        "transportation simplex hit its iteration cap".into(),
    ))
}

fn tree_path(adj: &[Vec<usize>], from: usize, to: usize, nodes: usize) -> Vec<usize> {
    let mut prev = vec![usize::MAX; nodes];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(a) = queue.pop_front() {
        if a == to {
            break;
        }
        for &b in &adj[a] {
            if prev[b] == usize::MAX {
                prev[b] = a;
                queue.push_back(b);
            }
        }
    }
    let mut path = vec![to];
    let mut c = to;
    while c != from {
        c = prev[c];
        path.push(c);
    }
    path.reverse();
    path
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::Grid;
    use crate::kernels::{heat_content, HeatKernelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_marginals_cost_nothing() {
        let g = Grid::new(4).unwrap();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + x * y);
        assert!(w2_squared_lp(&f, &f).unwrap().abs() < 1e-14);
    }

    #[test]
    fn swapped_point_masses() {
        let mu = [1.0, 0.0];
        let nu = [0.0, 1.0];
        let d: f64 = 0.3;
        let cost = [0.0, d * d, d * d, 0.0];
        let (c, plan) = ot_lp(&mu, &nu, &cost).unwrap();
        assert!((c - d * d).abs() < 1e-15);
        assert_eq!(plan.get(0, 1), 1.0);
    }

    #[test]
    fn rejects_unbalanced_and_oversized() {
        assert!(matches!(
            ot_lp(&[1.0], &[2.0], &[0.0]),
            Err(Error::Infeasible(_))
        ));
        let big = vec![1.0; OT_CAP + 1];
        assert!(matches!(
            ot_lp(&big, &big, &vec![0.0; big.len() * big.len()]),
            Err(Error::TooLarge { .. })
        ));
    }

    #[test]
    fn optimum_beats_random_feasible_plans() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 36;
        let mut mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut nu: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let (sm, sn): (f64, f64) = (mu.iter().sum(), nu.iter().sum());
        mu.iter_mut().for_each(|v| *v /= sm);
        nu.iter_mut().for_each(|v| *v /= sn);
        let cost: Vec<f64> = (0..k * k).map(|_| rng.random_range(0.0..1.0)).collect();
        let (best, plan) = ot_lp(&mu, &nu, &cost).unwrap();
        for (a, b) in plan.row_sums().iter().zip(&mu) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in plan.col_sums().iter().zip(&nu) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(plan.gamma.iter().all(|v| *v >= 0.0));
        for _ in 0..1000 {
            // random feasible plan by greedy filling in a random order
            let mut s = mu.clone();
            let mut d = nu.clone();
            let mut order: Vec<usize> = (0..k * k).collect();
            for t in (1..order.len()).rev() {
                order.swap(t, rng.random_range(0..=t));
            }
            let mut total = 0.0;
            for c in order {
                let (i, j) = (c / k, c % k);
                let q = s[i].min(d[j]);
                s[i] -= q;
                d[j] -= q;
                total += q * cost[c];
            }
            assert!(best <= total + 1e-12);
        }
    }

    #[test]
    fn hc_direct_matches_separable_convolution() {
        let g = Grid::new(24).unwrap();
        let p = HeatKernelParams::auto(&g, 0.15).unwrap();
        let rho = PhaseField::from_indicator(g, |x, y| (x - 0.4).hypot(y - 0.55) < 0.27);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let fast = heat_content(&pair, &p);
        let slow = hc_direct(&pair, p.eps(), p.sigma()).unwrap();
        assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        let swapped = PhasePair::new(pair.rho2.clone(), pair.rho1.clone(), 1.0, 1.0).unwrap();
        assert!((hc_direct(&swapped, p.eps(), p.sigma()).unwrap() - slow).abs() < 1e-12);
    }

    #[test]
    fn trivial_linearized_problem_stays_put() {
        let g = Grid::new(4).unwrap();
        let rho = PhaseField::from_indicator(g, |x, _| x < 0.5);
        let pair = PhasePair::from_phase1(rho, 1.0, 1.0).unwrap();
        let zero = ScalarField::zeros(g);
        let sol = linearized_primal_lp(&pair, &zero, &zero, 0.1).unwrap();
        assert!(sol.value.abs() < 1e-14);
        for i in 0..2 {
            for x in 0..16 {
                for y in 0..16 {
                    let want = if x == y {
                        pair.phase(i).values()[x] * g.area()
                    } else {
                        0.0
                    };
                    assert!((sol.plans[i].get(x, y) - want).abs() < 1e-14);
                }
            }
        }
    }
}
