//! Quadratic c-transforms `f^c(x) = min_y f(y) + w |y - x|^2` over grid cells.
//!
//! Exact in two separable lower-envelope passes (rows, then columns). Cells may hold `+inf`
//! to exclude them from the minimum. Among equal minima the smallest linear index wins.

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fields::{Grid, PhaseField, ScalarField};

#[derive(Debug, Clone, PartialEq)]
pub struct CTransformResult {
    pub values: ScalarField,
    /// Linear index of the minimizing cell for every cell.
    pub argmin: Vec<usize>,
    pub w: f64,
}

pub fn quadratic_ctransform(f: &ScalarField, w: f64) -> Result<CTransformResult> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(invalid("w", format!("must be positive, got {w}")));
    }
    let g = *f.grid();
    let mut scratch = CTransformScratch::new(&g);
    let mut values = vec![0.0; g.len()];
    let mut argmin = vec![0usize; g.len()];
    ctransform_into(&g, f.values(), w, &mut scratch, &mut values, &mut argmin)?;
    let values = ScalarField::from_vec(g, values).expect("finite c-transform");
    Ok(CTransformResult { values, argmin, w })
}

/// Reusable buffers for [`ctransform_into`].
#[derive(Debug, Clone)]
pub struct CTransformScratch {
    t_val: Vec<f64>,
    t_arg: Vec<u32>,
    row_val: Vec<f64>,
    row_arg: Vec<u32>,
    col_val: Vec<f64>,
    col_arg: Vec<u32>,
}

impl CTransformScratch {
    pub fn new(grid: &Grid) -> Self {
        let len = grid.len();
        CTransformScratch {
            t_val: vec![0.0; len],
            t_arg: vec![0; len],
            row_val: vec![0.0; len],
            row_arg: vec![0; len],
            col_val: vec![0.0; len],
            col_arg: vec![0; len],
        }
    }
}

const NONE: u32 = u32::MAX;

/// Slice form of [`quadratic_ctransform`] writing into caller-owned buffers.
pub fn ctransform_into(
    grid: &Grid,
    f: &[f64],
    w: f64,
    scratch: &mut CTransformScratch,
    out: &mut [f64],
    arg: &mut [usize],
) -> Result<()> {
    let n = grid.nx();
    debug_assert_eq!(f.len(), n * n);
    let a = w * grid.area();

    // Row pass, written transposed: row_val[i * n + j] = min over i' of f(i', j) + a (i - i')^2.
    let rv = &mut scratch.row_val;
    let ra = &mut scratch.row_arg;
    {
        let tv = &mut scratch.t_val;
        let ta = &mut scratch.t_arg;
        tv.par_chunks_mut(n)
            .zip(ta.par_chunks_mut(n))
            .enumerate()
            .for_each_init(
                || Envelope::new(n),
                |env, (j, (vrow, arow))| env.transform(&f[j * n..(j + 1) * n], a, vrow, arow),
            );
        for j in 0..n {
            for i in 0..n {
                rv[i * n + j] = tv[j * n + i];
                ra[i * n + j] = ta[j * n + i];
            }
        }
    }

    if rv.iter().all(|v| *v == f64::INFINITY) {
        return Err(Error::AllInfinite);
    }

    // Column pass on the transposed rows: col_val[i * n + j] = min over j' of row_val[i, j'] + a (j - j')^2.
    let cv = &mut scratch.col_val;
    let ca = &mut scratch.col_arg;
    cv.par_chunks_mut(n)
        .zip(ca.par_chunks_mut(n))
        .enumerate()
        .for_each_init(
            || Envelope::new(n),
            |env, (i, (vcol, acol))| env.transform(&rv[i * n..(i + 1) * n], a, vcol, acol),
        );

    out.par_chunks_mut(n)
        .zip(arg.par_chunks_mut(n))
        .enumerate()
        .for_each(|(j, (orow, arow))| {
            for i in 0..n {
                let jj = ca[i * n + j] as usize;
                orow[i] = cv[i * n + j];
                arow[i] = jj * n + ra[i * n + jj] as usize;
            }
        });
    Ok(())
}

/// One-dimensional lower envelope of parabolas `f(p) + a (x - p)^2`.
struct Envelope {
    v: Vec<usize>,
    z: Vec<f64>,
}

impl Envelope {
    fn new(n: usize) -> Self {
        Envelope {
            v: vec![0; n],
            z: vec![0.0; n + 1],
        }
    }

    fn transform(&mut self, f: &[f64], a: f64, out: &mut [f64], arg: &mut [u32]) {
        let n = f.len();
        let mut k: isize = -1;
        for q in 0..n {
            let fq = f[q];
            if fq == f64::INFINITY {
                continue;
            }
            if k < 0 {
                k = 0;
                self.v[0] = q;
                self.z[0] = f64::NEG_INFINITY;
                self.z[1] = f64::INFINITY;
                continue;
            }
            let s = loop {
                let p = self.v[k as usize];
                let s = ((fq + a * (q * q) as f64) - (f[p] + a * (p * p) as f64))
                    / (2.0 * a * (q - p) as f64);
                // z[0] is -inf, so the loop always stops at k = 0.
                if s <= self.z[k as usize] {
                    k -= 1;
                } else {
                    break s;
                }
            };
            k += 1;
            self.v[k as usize] = q;
            self.z[k as usize] = s;
            self.z[k as usize + 1] = f64::INFINITY;
        }
        if k < 0 {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            arg.iter_mut().for_each(|o| *o = NONE);
            return;
        }
        let mut k = 0usize;
        for x in 0..n {
            let xf = x as f64;
            while self.z[k + 1] < xf {
                k += 1;
            }
            let p = self.v[k];
            let d = xf - p as f64;
            out[x] = f[p] + a * d * d;
            arg[x] = p as u32;
        }
    }
}

/// Deposits `rho(x)` at `T(x)`; the result is a density on the same grid with the same cell sum.
pub fn pushforward(rho: &PhaseField, map: &[usize]) -> ScalarField {
    let g = *rho.grid();
    let mut out = vec![0.0; g.len()];
    for (k, &v) in rho.values().iter().enumerate() {
        out[map[k]] += v;
    }
    ScalarField::from_vec(g, out).expect("finite pushforward")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ctransform_scan;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_field_is_fixed() {
        let g = Grid::new(8).unwrap();
        let r = quadratic_ctransform(&ScalarField::constant(g, 2.5), 3.0).unwrap();
        assert!(r.values.values().iter().all(|&v| v == 2.5));
        assert!(r.argmin.iter().enumerate().all(|(k, &t)| k == t));
    }

    #[test]
    fn single_finite_cell() {
        let g = Grid::new(8).unwrap();
        let mut v = vec![f64::INFINITY; g.len()];
        let y0 = g.index(5, 2);
        v[y0] = -1.0;
        let f = ScalarField::from_vec_extended(g, v).unwrap();
        let w = 7.0;
        let r = quadratic_ctransform(&f, w).unwrap();
        let (yx, yy) = g.center_of(y0);
        for k in 0..g.len() {
            let (x, y) = g.center_of(k);
            let want = -1.0 + w * ((x - yx).powi(2) + (y - yy).powi(2));
            assert!((r.values.values()[k] - want).abs() < 1e-12);
            assert_eq!(r.argmin[k], y0);
        }
    }

    #[test]
    fn all_infinite_is_rejected() {
        let g = Grid::new(4).unwrap();
        let f = ScalarField::from_vec_extended(g, vec![f64::INFINITY; 16]).unwrap();
        assert!(matches!(
            quadratic_ctransform(&f, 1.0),
            Err(Error::AllInfinite)
        ));
    }

    #[test]
    fn matches_scan_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in [4usize, 5, 8, 13, 16] {
            let g = Grid::new(n).unwrap();
            for _ in 0..5 {
                let v: Vec<f64> = (0..g.len())
                    .map(|_| {
                        if rng.random_bool(0.2) {
                            f64::INFINITY
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect();
                if v.iter().all(|x| x.is_infinite()) {
                    continue;
                }
                let w = rng.random_range(0.5..50.0);
                let f = ScalarField::from_vec_extended(g, v).unwrap();
                let fast = quadratic_ctransform(&f, w).unwrap();
                let (slow, arg) = ctransform_scan(&f, w).unwrap();
                for k in 0..g.len() {
                    assert!((fast.values.values()[k] - slow[k]).abs() < 1e-12);
                    let y = fast.argmin[k];
                    let (ax, ay) = g.center_of(y);
                    let (x, yy) = g.center_of(k);
                    let cost = f.values()[y] + w * ((ax - x).powi(2) + (ay - yy).powi(2));
                    assert!((cost - slow[k]).abs() < 1e-12);
                    let _ = arg[k];
                }
            }
        }
    }

    #[test]
    fn pushforward_shift_conserves_mass() {
        let g = Grid::new(8).unwrap();
        let rho = PhaseField::from_indicator(g, |x, y| x < 0.5 && y > 0.25);
        let id: Vec<usize> = (0..g.len()).collect();
        assert_eq!(pushforward(&rho, &id).values(), rho.values());
        let shift: Vec<usize> = (0..g.len())
            .map(|k| {
                let (i, j) = g.coords(k);
                g.index((i + 1).min(7), j)
            })
            .collect();
        let out = pushforward(&rho, &shift);
        let total: f64 = out.values().iter().sum();
        assert!((total * g.area() - rho.mass()).abs() < 1e-14);
        assert_eq!(out.at(4, 5), 1.0);
        assert_eq!(out.at(0, 5), 0.0);
    }
}
