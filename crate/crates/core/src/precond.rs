//! `(alpha I - beta Laplacian)^{-1}` with homogeneous Neumann walls, diagonalized by the
//! orthonormal cosine basis that matches the cell-centered five-point stencil.

use crate::fields::Grid;

#[derive(Debug, Clone)]
pub struct NeumannSolver {
    n: usize,
    /// Row-major `c[k * n + i] = s_k cos(pi k (i + 1/2) / n)`.
    basis: Vec<f64>,
    /// Eigenvalues of `-Laplacian` along one axis.
    lambda: Vec<f64>,
    scratch: Vec<f64>,
}

impl NeumannSolver {
    pub fn new(grid: &Grid) -> Self {
        let n = grid.nx();
        let h2 = grid.area();
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let s = if k == 0 {
                (1.0 / n as f64).sqrt()
            } else {
                (2.0 / n as f64).sqrt()
            };
            for i in 0..n {
                basis[k * n + i] =
                    s * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n as f64).cos();
            }
        }
        let lambda = (0..n)
            .map(|k| (2.0 - 2.0 * (std::f64::consts::PI * k as f64 / n as f64).cos()) / h2)
            .collect();
        NeumannSolver {
            n,
            basis,
            lambda,
            scratch: vec![0.0; n * n],
        }
    }

    /// Overwrites `r` with the solution `u` of `(alpha - beta Laplacian) u = r`.
    pub fn solve(&mut self, r: &mut [f64], alpha: f64, beta: f64) {
        let n = self.n;
        self.forward(r);
        for l in 0..n {
            for k in 0..n {
                r[l * n + k] /= alpha + beta * (self.lambda[l] + self.lambda[k]);
            }
        }
        self.inverse(r);
    }

    /// `r <- C r C^T` (coefficients indexed `[ky * n + kx]`).
    fn forward(&mut self, r: &mut [f64]) {
        let n = self.n;
        let c = &self.basis;
        let t = &mut self.scratch;
        for j in 0..n {
            let row = &r[j * n..(j + 1) * n];
            for k in 0..n {
                t[j * n + k] = dot(row, &c[k * n..(k + 1) * n]);
            }
        }
        r.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..n {
            let out = &mut r[l * n..(l + 1) * n];
            for j in 0..n {
                axpy(c[l * n + j], &t[j * n..(j + 1) * n], out);
            }
        }
    }

    /// `r <- C^T r C`.
    fn inverse(&mut self, r: &mut [f64]) {
        let n = self.n;
        let c = &self.basis;
        let t = &mut self.scratch;
        t.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..n {
            let row = &r[l * n..(l + 1) * n];
            for k in 0..n {
                axpy(row[k], &c[k * n..(k + 1) * n], &mut t[l * n..(l + 1) * n]);
            }
        }
        r.iter_mut().for_each(|v| *v = 0.0);
        for l in 0..n {
            for j in 0..n {
                let coef = c[l * n + j];
                let (src, dst) = (&t[l * n..(l + 1) * n], &mut r[j * n..(j + 1) * n]);
                axpy(coef, src, dst);
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (o, v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `(alpha - beta Laplacian) u` with mirrored ghost cells.
    fn apply_operator(grid: &Grid, u: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
        let n = grid.nx();
        let h2 = grid.area();
        let mut out = vec![0.0; n * n];
        for j in 0..n {
            for i in 0..n {
                let k = j * n + i;
                let mut lap = 0.0;
                if i > 0 {
                    lap += u[k - 1] - u[k];
                }
                if i + 1 < n {
                    lap += u[k + 1] - u[k];
                }
                if j > 0 {
                    lap += u[k - n] - u[k];
                }
                if j + 1 < n {
                    lap += u[k + n] - u[k];
                }
                out[k] = alpha * u[k] - beta * lap / h2;
            }
        }
        out
    }

    #[test]
    fn inverts_the_neumann_operator() {
        let g = Grid::new(12).unwrap();
        let u: Vec<f64> = (0..g.len())
            .map(|k| ((k * 37 % 11) as f64 - 5.0) * 0.1)
            .collect();
        let mut r = apply_operator(&g, &u, 1.0, 0.003);
        let mut s = NeumannSolver::new(&g);
        s.solve(&mut r, 1.0, 0.003);
        for (a, b) in r.iter().zip(&u) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_when_beta_vanishes() {
        let g = Grid::new(8).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|k| (k as f64).sin()).collect();
        let mut r = u.clone();
        NeumannSolver::new(&g).solve(&mut r, 2.0, 0.0);
        for (a, b) in r.iter().zip(&u) {
            assert!((a - b / 2.0).abs() < 1e-13);
        }
    }
}
