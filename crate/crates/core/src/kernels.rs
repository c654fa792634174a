//! Gaussian heat kernel with zero extension outside the unit square, and the heat-content energy.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::fields::{Grid, PhaseField, PhasePair, ScalarField};

/// Number of standard deviations (in units of `sqrt(eps)`) kept by the truncated stencil.
const CUTOFF: f64 = 13.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatKernelParams {
    eps: f64,
    sigma: f64,
    r_cut: usize,
}

impl HeatKernelParams {
    pub fn new(grid: &Grid, eps: f64, sigma: f64) -> Result<Self> {
        let h2 = grid.area();
        if !eps.is_finite() || eps < h2 * (1.0 - 1e-12) {
            return Err(invalid(
                "eps",
                format!("{eps} is below the floor h^2 = {h2}"),
            ));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(invalid(
                "sigma",
                format!("must be nonnegative, got {sigma}"),
            ));
        }
        let r_cut = (CUTOFF * eps.sqrt() / grid.h()).ceil() as usize;
        Ok(HeatKernelParams { eps, sigma, r_cut })
    }

    /// `eps = 16 h^2`.
    pub fn auto(grid: &Grid, sigma: f64) -> Result<Self> {
        Self::new(grid, 16.0 * grid.area(), sigma)
    }

    #[inline]
    pub fn eps(&self) -> f64 {
        self.eps
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn r_cut(&self) -> usize {
        self.r_cut
    }

    /// Prefactor `sigma * sqrt(2 pi / eps)` turning `G_eps` into `K_eps`.
    #[inline]
    pub fn prefactor(&self) -> f64 {
        self.sigma * (2.0 * std::f64::consts::PI / self.eps).sqrt()
    }

    /// One-dimensional stencil `h g(k h)` for `k in -r..=r`, normalized to unit sum.
    pub fn stencil(&self, h: f64) -> Vec<f64> {
        let r = self.r_cut as i64;
        let norm = (4.0 * std::f64::consts::PI * self.eps).sqrt();
        let mut w: Vec<f64> = (-r..=r)
            .map(|k| {
                let s = k as f64 * h;
                h * (-s * s / (4.0 * self.eps)).exp() / norm
            })
            .collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        w
    }
}

/// Discrete `G_eps * f` restricted to the grid, treating `f` as zero outside the domain.
pub fn gaussian_blur(f: &ScalarField, params: &HeatKernelParams) -> ScalarField {
    let g = *f.grid();
    let n = g.nx();
    let w = params.stencil(g.h());
    let r = params.r_cut as isize;
    let src = f.values();

    let mut tmp = vec![0.0; g.len()];
    tmp.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let line = &src[j * n..(j + 1) * n];
        for (i, out) in row.iter_mut().enumerate() {
            let lo = (i as isize - r).max(0) as usize;
            let hi = (i as isize + r).min(n as isize - 1) as usize;
            let mut acc = 0.0;
            for (m, v) in line.iter().enumerate().take(hi + 1).skip(lo) {
                acc += w[(m as isize - i as isize + r) as usize] * v;
            }
            *out = acc;
        }
    });

    let mut out = vec![0.0; g.len()];
    out.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
        let lo = (j as isize - r).max(0) as usize;
        let hi = (j as isize + r).min(n as isize - 1) as usize;
        for m in lo..=hi {
            let wk = w[(m as isize - j as isize + r) as usize];
            let line = &tmp[m * n..(m + 1) * n];
            for (o, v) in row.iter_mut().zip(line) {
                *o += wk * v;
            }
        }
    });
    ScalarField::from_vec(g, out).expect("blur of finite field is finite")
}

/// `G_eps * f` evaluated on the grid extended by `r_cut` cells on every side.
/// Returns the padded values row-major and the padded side length.
pub fn blur_extended(f: &ScalarField, params: &HeatKernelParams) -> (Vec<f64>, usize) {
    let g = *f.grid();
    let n = g.nx();
    let r = params.r_cut;
    let m = n + 2 * r;
    let mut padded = vec![0.0; m * m];
    for j in 0..n {
        padded[(j + r) * m + r..(j + r) * m + r + n]
            .copy_from_slice(&f.values()[j * n..(j + 1) * n]);
    }
    let w = params.stencil(g.h());
    let mut tmp = vec![0.0; m * m];
    for j in 0..m {
        for i in 0..m {
            let lo = i.saturating_sub(r);
            let hi = (i + r).min(m - 1);
            tmp[j * m + i] = (lo..=hi).map(|k| w[k + r - i] * padded[j * m + k]).sum();
        }
    }
    let mut out = vec![0.0; m * m];
    for j in 0..m {
        let lo = j.saturating_sub(r);
        let hi = (j + r).min(m - 1);
        for k in lo..=hi {
            let wk = w[k + r - j];
            for i in 0..m {
                out[j * m + i] += wk * tmp[k * m + i];
            }
        }
    }
    (out, m)
}

/// Per-cell integrand `K_eps * rho1 * rho2`; its `h^2`-weighted sum is the heat content.
pub fn heat_content_density(
    rho1: &PhaseField,
    rho2: &PhaseField,
    params: &HeatKernelParams,
) -> ScalarField {
    let blurred = gaussian_blur(rho1.field(), params);
    let c = params.prefactor();
    blurred.zip_map(rho2.field(), |a, b| c * a * b)
}

/// `HC_eps = sigma sqrt(2 pi / eps) h^2 sum (G_eps * rho1) rho2`.
pub fn heat_content(pair: &PhasePair, params: &HeatKernelParams) -> f64 {
    heat_content_of(&pair.rho1, &pair.rho2, params)
}

pub fn heat_content_of(rho1: &PhaseField, rho2: &PhaseField, params: &HeatKernelParams) -> f64 {
    if params.sigma == 0.0 {
        return 0.0;
    }
    let d = heat_content_density(rho1, rho2, params);
    d.grid().area() * d.values().iter().sum::<f64>()
}

/// First variation of the heat content with respect to the other phase: `K_eps * other`.
pub fn hc_first_variation(other: &PhaseField, params: &HeatKernelParams) -> ScalarField {
    let c = params.prefactor();
    if c == 0.0 {
        return ScalarField::zeros(*other.grid());
    }
    gaussian_blur(other.field(), params).map(|v| c * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize) -> (Grid, HeatKernelParams) {
        let g = Grid::new(n).unwrap();
        let p = HeatKernelParams::auto(&g, 0.15).unwrap();
        (g, p)
    }

    #[test]
    fn rejects_eps_below_floor() {
        let g = Grid::new(32).unwrap();
        assert!(HeatKernelParams::new(&g, 0.5 * g.area(), 0.15).is_err());
        assert!(HeatKernelParams::new(&g, g.area(), 0.15).is_ok());
        let p = HeatKernelParams::auto(&g, 0.15).unwrap();
        assert!(p.r_cut() as f64 * g.h() >= 13.0 * p.eps().sqrt());
    }

    #[test]
    fn stencil_sums_to_one_and_is_symmetric() {
        let (g, p) = setup(64);
        let w = p.stencil(g.h());
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for k in 0..w.len() {
            assert_eq!(w[k], w[w.len() - 1 - k]);
        }
    }

    #[test]
    fn blur_of_constant_leaks_only_near_walls() {
        let n = 128;
        let (g, p) = setup(n);
        let b = gaussian_blur(&ScalarField::constant(g, 1.0), &p);
        let r = p.r_cut();
        for j in 0..n {
            for i in 0..n {
                let v = b.at(i, j);
                let interior = (r..n - r).contains(&i) && (r..n - r).contains(&j);
                if interior {
                    assert!(v >= 1.0 - 1e-12);
                }
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    assert!(v < 1.0);
                }
            }
        }
    }

    #[test]
    fn blur_of_delta_is_symmetric() {
        let (g, p) = setup(32);
        let mut v = vec![0.0; g.len()];
        v[g.index(16, 16)] = 1.0;
        let b = gaussian_blur(&ScalarField::from_vec(g, v).unwrap(), &p);
        for j in 0..32 {
            for i in 0..32 {
                assert!((b.at(i, j) - b.at(j, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heat_content_is_symmetric_and_decays() {
        let (g, p) = setup(64);
        let a = PhaseField::from_indicator(g, |x, y| x < 0.45 && y > 0.3);
        let pair = PhasePair::from_phase1(a, 1.0, 1.0).unwrap();
        let swapped = PhasePair::new(pair.rho2.clone(), pair.rho1.clone(), 1.0, 1.0).unwrap();
        assert!((heat_content(&pair, &p) - heat_content(&swapped, &p)).abs() < 1e-10);

        let c1 = PhaseField::from_indicator(g, |x, y| x < 0.1 && y < 0.1);
        let c2 = PhaseField::from_indicator(g, |x, y| x > 0.9 && y > 0.9);
        assert!(heat_content_of(&c1, &c2, &p) < 1e-10);
    }

    #[test]
    fn first_variation_matches_finite_difference() {
        let (g, p) = setup(32);
        let rho1 = PhaseField::from_indicator(g, |x, y| (x - 0.5).hypot(y - 0.5) < 0.25);
        let rho2 = rho1.complement();
        let dir = ScalarField::from_fn(g, |x, y| (7.0 * x).sin() * (3.0 * y).cos());
        let t = 1e-6;
        let moved = PhaseField::new(
            rho1.field()
                .zip_map(&dir, |a, d| (a + t * d).clamp(0.0, 1.0)),
        )
        .unwrap();
        let delta = moved.field().zip_map(rho1.field(), |a, b| (a - b) / t);
        let fd = (heat_content_of(&moved, &rho2, &p) - heat_content_of(&rho1, &rho2, &p)) / t;
        let var = hc_first_variation(&rho2, &p);
        let lin = g.area()
            * var
                .values()
                .iter()
                .zip(delta.values())
                .map(|(a, b)| a * b)
                .sum::<f64>();
        assert!(((fd - lin) / lin).abs() < 1e-6, "fd={fd} lin={lin}");
    }

    #[test]
    fn first_variation_of_empty_phase_vanishes() {
        let (g, p) = setup(16);
        let zero = PhaseField::from_indicator(g, |_, _| false);
        assert!(hc_first_variation(&zero, &p)
            .values()
            .iter()
            .all(|&v| v == 0.0));
    }
}
