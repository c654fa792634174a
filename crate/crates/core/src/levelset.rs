//! Level-set representation of the interface: signed distance, upwind transport and
//! mass-preserving re-thresholding.

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::fields::{upwind_gradient, Grid, PhaseField, ScalarField, VectorField};

/// Level-set function, negative inside phase 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    phi: ScalarField,
}

impl LevelSet {
    pub fn new(phi: ScalarField) -> Self {
        LevelSet { phi }
    }

    #[inline]
    pub fn field(&self) -> &ScalarField {
        &self.phi
    }

    pub fn into_field(self) -> ScalarField {
        self.phi
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    /// Indicator of `{phi < 0}`.
    pub fn inside(&self) -> PhaseField {
        let mask: Vec<bool> = self.phi.values().iter().map(|&v| v < 0.0).collect();
        PhaseField::from_mask(*self.grid(), &mask).expect("indicator is a valid phase")
    }
}

/// Signed distance to the boundary of phase 1 by fast sweeping.
///
/// Cells with a face neighbor in the other phase sit half a cell from the interface and seed
/// the sweep; the interface is placed on the shared face.
pub fn signed_distance(rho1: &PhaseField) -> Result<LevelSet> {
    rho1.require_characteristic()?;
    let g = *rho1.grid();
    let n = g.nx();
    let h = g.h();
    let v = rho1.values();
    let full = v.iter().filter(|&&x| x == 1.0).count();
    if full == 0 || full == g.len() {
        return Err(Error::EmptyPhase);
    }
    let mut d = vec![f64::INFINITY; g.len()];
    let mut fixed = vec![false; g.len()];
    for j in 0..n {
        for i in 0..n {
            let k = g.index(i, j);
            let c = v[k];
            let seed = (i > 0 && v[k - 1] != c)
                || (i + 1 < n && v[k + 1] != c)
                || (j > 0 && v[k - n] != c)
                || (j + 1 < n && v[k + n] != c);
            if seed {
                d[k] = 0.5 * h;
                fixed[k] = true;
            }
        }
    }
    fast_sweep(&g, &mut d, &fixed);
    let phi: Vec<f64> = d
        .iter()
        .zip(v)
        .map(|(&dist, &r)| if r == 1.0 { -dist } else { dist })
        .collect();
    Ok(LevelSet::new(ScalarField::from_vec(g, phi)?))
}

/// Godunov fast sweeping for `|grad d| = 1`; `fixed` cells keep their values.
fn fast_sweep(g: &Grid, d: &mut [f64], fixed: &[bool]) {
    let n = g.nx();
    let h = g.h();
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];
    for _ in 0..8 {
        let mut changed = false;
        for &(rev_i, rev_j) in &orders {
            for jj in 0..n {
                let j = if rev_j { n - 1 - jj } else { jj };
                for ii in 0..n {
                    let i = if rev_i { n - 1 - ii } else { ii };
                    let k = j * n + i;
                    if fixed[k] {
                        continue;
                    }
                    let west = if i > 0 { d[k - 1] } else { f64::INFINITY };
                    let east = if i + 1 < n { d[k + 1] } else { f64::INFINITY };
                    let south = if j > 0 { d[k - n] } else { f64::INFINITY };
                    let north = if j + 1 < n { d[k + n] } else { f64::INFINITY };
                    let a = west.min(east);
                    let b = south.min(north);
                    if a == f64::INFINITY && b == f64::INFINITY {
                        continue;
                    }
                    let cand = if (a - b).abs() >= h {
                        a.min(b) + h
                    } else {
                        0.5 * (a + b + (2.0 * h * h - (a - b) * (a - b)).sqrt())
                    };
                    if cand < d[k] {
                        d[k] = cand;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

/// First-order upwind transport `phi_t + v . grad phi = 0` for total time `tau`.
pub fn advect(ls: &LevelSet, v: &VectorField, tau: f64, cfl: f64) -> Result<LevelSet> {
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(invalid("tau", format!("must be nonnegative, got {tau}")));
    }
    if !(cfl > 0.0 && cfl <= 1.0) {
        return Err(invalid("cfl", format!("must lie in (0, 1], got {cfl}")));
    }
    if let Some(k) = v.x.iter().chain(&v.y).position(|c| !c.is_finite()) {
        return Err(Error::NonFinite(k % v.x.len()));
    }
    let vmax = v.max_norm();
    if vmax == 0.0 || tau == 0.0 {
        return Ok(ls.clone());
    }
    let h = ls.grid().h();
    let mut phi = ls.phi.clone();
    let mut remaining = tau;
    while remaining > 0.0 {
        let dt = remaining.min(cfl * h / vmax);
        let grad = upwind_gradient(&phi, v);
        for (k, val) in phi.values_mut().iter_mut().enumerate() {
            *val -= dt * (v.x[k] * grad.x[k] + v.y[k] * grad.y[k]);
        }
        remaining -= dt;
        if remaining < 1e-15 * tau {
            break;
        }
    }
    Ok(LevelSet::new(phi))
}

/// Moves level-set values along a bijective cell map: `phi'(T(x)) = phi(x)`.
pub fn transport_by_map(ls: &LevelSet, map: &[usize]) -> Result<LevelSet> {
    let g = *ls.grid();
    let mut out = vec![f64::NAN; g.len()];
    for (x, &y) in map.iter().enumerate() {
        if y >= g.len() || !out[y].is_nan() {
            return Err(invalid("map", "is not a bijection of grid cells"));
        }
        out[y] = ls.phi.values()[x];
    }
    Ok(LevelSet::new(ScalarField::from_vec(g, out)?))
}

/// Result of [`threshold_with_mass`].
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub phase: PhaseField,
    /// Level `c` with `{phi < c}` of the requested mass.
    pub level: f64,
}

/// Indicator of the `round(M1 / h^2)` cells with the smallest `phi` (ties by index).
pub fn threshold_with_mass(ls: &LevelSet, mass: f64) -> Result<Thresholded> {
    let g = *ls.grid();
    let h2 = g.area();
    if !mass.is_finite() || mass < -0.5 * h2 || mass > 1.0 + 0.5 * h2 {
        return Err(Error::Unreachable { mass });
    }
    let len = g.len();
    let k = ((mass / h2).round() as usize).min(len);
    let vals = ls.phi.values();
    let mut order: Vec<usize> = (0..len).collect();
    let key = |a: &usize, b: &usize| vals[*a].total_cmp(&vals[*b]).then(a.cmp(b));
    let level = if k == 0 {
        order.sort_unstable_by(key);
        vals[order[0]] - g.h()
    } else if k == len {
        order.sort_unstable_by(key);
        vals[order[len - 1]] + g.h()
    } else {
        order.select_nth_unstable_by(k, key);
        let above = vals[order[k]];
        let below = order[..k]
            .iter()
            .map(|&i| vals[i])
            .fold(f64::NEG_INFINITY, f64::max);
        0.5 * (above + below)
    };
    let mut mask = vec![false; len];
    for &i in &order[..k] {
        mask[i] = true;
    }
    if level.abs() > g.h() {
        warn!("mass-fixing threshold moved the level to {level:.3e} (|c| > h)");
    }
    Ok(Thresholded {
        phase: PhaseField::from_mask(g, &mask)?,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::integrate;

    #[test]
    fn disc_distance_is_accurate() {
        let g = Grid::new(64).unwrap();
        let (cx, cy, r) = (0.5, 0.45, 0.2);
        let rho = PhaseField::from_indicator(g, |x, y| (x - cx).hypot(y - cy) < r);
        let ls = signed_distance(&rho).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let (x, y) = g.center_of(k);
            let exact = (x - cx).hypot(y - cy) - r;
            if exact.abs() > 2.0 * g.h() {
                worst = worst.max((ls.field().values()[k] - exact).abs());
            }
        }
        assert!(worst < 2.0 * g.h(), "worst {worst}");
    }

    #[test]
    fn half_plane_distance() {
        let g = Grid::new(32).unwrap();
        let rho = PhaseField::from_indicator(g, |x, _| x < 0.5);
        let ls = signed_distance(&rho).unwrap();
        for k in 0..g.len() {
            let (x, _) = g.center_of(k);
            assert!((ls.field().values()[k] - (x - 0.5)).abs() < 2.0 * g.h());
        }
        assert_eq!(ls.inside(), rho);
    }

    #[test]
    fn empty_phase_is_rejected() {
        let g = Grid::new(8).unwrap();
        let rho = PhaseField::from_indicator(g, |_, _| false);
        assert!(matches!(signed_distance(&rho), Err(Error::EmptyPhase)));
    }

    #[test]
    fn zero_velocity_leaves_phi_untouched() {
        let g = Grid::new(16).unwrap();
        let ls = LevelSet::new(ScalarField::from_fn(g, |x, y| x * y - 0.2));
        let out = advect(&ls, &VectorField::zeros(g), 0.3, 0.5).unwrap();
        assert_eq!(out, ls);
    }

    #[test]
    fn constant_advection_translates_a_plane() {
        let g = Grid::new(64).unwrap();
        let ls = LevelSet::new(ScalarField::from_fn(g, |x, _| x - 0.3));
        let mut v = VectorField::zeros(g);
        v.x.iter_mut().for_each(|c| *c = 2.0);
        let tau = 0.1;
        let out = advect(&ls, &v, tau, 0.5).unwrap();
        let rho = out.inside();
        for j in 0..64 {
            let count = (0..64).filter(|&i| rho.field().at(i, j) == 1.0).count();
            let front = count as f64 * g.h();
            assert!((front - 0.5).abs() <= g.h(), "front at {front}");
        }
    }

    #[test]
    fn threshold_hits_the_requested_mass() {
        let g = Grid::new(64).unwrap();
        let ls = LevelSet::new(ScalarField::from_fn(g, |x, _| x - 0.3));
        let t = threshold_with_mass(&ls, 0.5).unwrap();
        assert!((integrate(t.phase.field()) - 0.5).abs() <= 0.5 * g.area());
        assert!((t.level - 0.2).abs() < g.h());
        assert!(threshold_with_mass(&ls, 1.5).is_err());
    }

    #[test]
    fn map_transport_rejects_collisions() {
        let g = Grid::new(4).unwrap();
        let ls = LevelSet::new(ScalarField::from_fn(g, |x, _| x - 0.5));
        let id: Vec<usize> = (0..16).collect();
        assert_eq!(transport_by_map(&ls, &id).unwrap(), ls);
        assert!(transport_by_map(&ls, &[0; 16]).is_err());
    }
}
