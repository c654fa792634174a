//! Cell-centered fields on the unit square.
//!
//! Every field is stored row-major with the x index running fastest:
//! cell `(i, j)` lives at `j * nx + i` and has center `((i + 1/2) h, (j + 1/2) h)`.

use std::io::{self, Read, Write};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};

/// Uniform square grid on `[0, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    h: f64,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_dims(n, n)
    }

    /// The domain is always the unit square, so `nx` and `ny` must agree.
    pub fn with_dims(nx: usize, ny: usize) -> Result<Self> {
        if nx != ny || nx < 4 {
            return Err(Error::BadGrid { nx, ny });
        }
        Ok(Grid {
            nx,
            ny,
            h: 1.0 / nx as f64,
        })
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell area.
    #[inline]
    pub fn area(&self) -> f64 {
        self.h * self.h
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.h, (j as f64 + 0.5) * self.h)
    }

    #[inline]
    pub fn center_of(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.coords(k);
        self.center(i, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        ScalarField {
            grid,
            data: vec![value; grid.len()],
        }
    }

    /// Wraps raw values; rejects NaN and infinities.
    pub fn from_vec(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: data.len(),
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(ScalarField { grid, data })
    }

    /// Like [`ScalarField::from_vec`] but lets `+inf` through (c-transform sentinels).
    pub fn from_vec_extended(grid: Grid, data: Vec<f64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::LengthMismatch {
                expected: grid.len(),
                got: data.len(),
            });
        }
        if let Some(k) = data
            .iter()
            .position(|v| v.is_nan() || *v == f64::NEG_INFINITY)
        {
            return Err(Error::NonFinite(k));
        }
        Ok(ScalarField { grid, data })
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let data = (0..grid.len())
            .map(|k| {
                let (x, y) = grid.center_of(k);
                f(x, y)
            })
            .collect();
        ScalarField { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64 + Sync) -> ScalarField {
        ScalarField {
            grid: self.grid,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64 + Sync) -> ScalarField {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            data: self
                .data
                .par_iter()
                .zip(other.data.par_iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        integrate(self)
    }

    /// Rotates the field by 90 degrees: `(i, j) -> (n - 1 - j, i)`.
    pub fn rotate90(&self) -> ScalarField {
        let n = self.grid.nx;
        let mut out = vec![0.0; self.data.len()];
        for j in 0..n {
            for i in 0..n {
                out[self.grid.index(n - 1 - j, i)] = self.data[self.grid.index(i, j)];
            }
        }
        ScalarField {
            grid: self.grid,
            data: out,
        }
    }

    /// Mirrors the field in x: `(i, j) -> (n - 1 - i, j)`.
    pub fn mirror_x(&self) -> ScalarField {
        let n = self.grid.nx;
        let mut out = vec![0.0; self.data.len()];
        for j in 0..n {
            for i in 0..n {
                out[self.grid.index(n - 1 - i, j)] = self.data[self.grid.index(i, j)];
            }
        }
        ScalarField {
            grid: self.grid,
            data: out,
        }
    }

    /// Little-endian dump: `u32 nx`, `u32 ny`, then `nx * ny` f64 values row-major.
    pub fn write_raw<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.grid.nx as u32).to_le_bytes())?;
        w.write_all(&(self.grid.ny as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(8 * self.data.len());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_raw<R: Read>(mut r: R) -> io::Result<ScalarField> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let nx = u32::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let ny = u32::from_le_bytes(word) as usize;
        let grid = Grid::with_dims(nx, ny)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))?;
        let mut bytes = vec![0u8; 8 * grid.len()];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(ScalarField { grid, data })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn from_components(grid: Grid, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        for c in [&x, &y] {
            if c.len() != grid.len() {
                return Err(Error::LengthMismatch {
                    expected: grid.len(),
                    got: c.len(),
                });
            }
            if let Some(k) = c.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(k));
            }
        }
        Ok(VectorField { grid, x, y })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Largest Euclidean norm over all cells.
    pub fn max_norm(&self) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .map(|(a, b)| a.hypot(*b))
            .fold(0.0, f64::max)
    }
}

/// One phase's relative concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseField {
    rho: ScalarField,
    characteristic: bool,
    mass: f64,
}

impl PhaseField {
    /// Validates `0 <= rho <= 1`; the characteristic flag is detected from the values.
    pub fn new(rho: ScalarField) -> Result<Self> {
        let mut characteristic = true;
        for (k, &v) in rho.values().iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRange { index: k, value: v });
            }
            if v != 0.0 && v != 1.0 {
                characteristic = false;
            }
        }
        let mass = integrate(&rho);
        Ok(PhaseField {
            rho,
            characteristic,
            mass,
        })
    }

    pub fn from_indicator(grid: Grid, inside: impl Fn(f64, f64) -> bool) -> Self {
        let rho = ScalarField::from_fn(grid, |x, y| if inside(x, y) { 1.0 } else { 0.0 });
        let mass = integrate(&rho);
        PhaseField {
            rho,
            characteristic: true,
            mass,
        }
    }

    pub fn from_mask(grid: Grid, mask: &[bool]) -> Result<Self> {
        let data = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        PhaseField::new(ScalarField::from_vec(grid, data)?)
    }

    /// `1 - rho`, i.e. the complementary phase.
    pub fn complement(&self) -> PhaseField {
        let rho = self.rho.map(|v| 1.0 - v);
        let mass = integrate(&rho);
        PhaseField {
            rho,
            characteristic: self.characteristic,
            mass,
        }
    }

    #[inline]
    pub fn field(&self) -> &ScalarField {
        &self.rho
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        self.rho.values()
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.rho.grid()
    }

    #[inline]
    pub fn is_characteristic(&self) -> bool {
        self.characteristic
    }

    /// `h^2 * sum(rho)`.
    #[inline]
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Number of cells with `rho == 1`.
    pub fn count_full(&self) -> usize {
        self.values().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn require_characteristic(&self) -> Result<()> {
        if self.characteristic {
            return Ok(());
        }
        let k = self
            .values()
            .iter()
            .position(|&v| v != 0.0 && v != 1.0)
            .unwrap_or(0);
        Err(Error::NotCharacteristic(k))
    }
}

/// Two incompressible phases with their mobilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePair {
    pub rho1: PhaseField,
    pub rho2: PhaseField,
    pub b1: f64,
    pub b2: f64,
}

impl PhasePair {
    /// Builds the pair with `rho2 = 1 - rho1`.
    pub fn from_phase1(rho1: PhaseField, b1: f64, b2: f64) -> Result<Self> {
        let rho2 = rho1.complement();
        Self::new(rho1, rho2, b1, b2)
    }

    pub fn new(rho1: PhaseField, rho2: PhaseField, b1: f64, b2: f64) -> Result<Self> {
        if !(b1 > 0.0 && b1.is_finite()) {
            return Err(invalid(
                "b1",
                format!("mobility must be positive, got {b1}"),
            ));
        }
        if !(b2 > 0.0 && b2.is_finite()) {
            return Err(invalid(
                "b2",
                format!("mobility must be positive, got {b2}"),
            ));
        }
        if rho1.grid() != rho2.grid() {
            return Err(invalid("rho2", "phases live on different grids"));
        }
        for (k, (a, b)) in rho1.values().iter().zip(rho2.values()).enumerate() {
            let s = a + b;
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::NotIncompressible { index: k, sum: s });
            }
        }
        Ok(PhasePair { rho1, rho2, b1, b2 })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.rho1.grid()
    }

    pub fn phase(&self, i: usize) -> &PhaseField {
        match i {
            0 => &self.rho1,
            1 => &self.rho2,
            _ => panic!("phase index {i} out of range"),
        }
    }

    pub fn mobility(&self, i: usize) -> f64 {
        match i {
            0 => self.b1,
            1 => self.b2,
            _ => panic!("phase index {i} out of range"),
        }
    }

    pub fn is_characteristic(&self) -> bool {
        self.rho1.is_characteristic() && self.rho2.is_characteristic()
    }

    /// Phase label per cell (0 for phase 1, 1 for phase 2); requires characteristic phases.
    pub fn labels(&self) -> Result<Vec<u8>> {
        self.rho1.require_characteristic()?;
        Ok(self
            .rho1
            .values()
            .iter()
            .map(|&v| if v == 1.0 { 0 } else { 1 })
            .collect())
    }
}

/// `h^2 * sum(f)`.
pub fn integrate(f: &ScalarField) -> f64 {
    f.grid().area() * f.values().iter().sum::<f64>()
}

/// Central differences in the interior, first-order one-sided differences on boundary cells.
pub fn gradient_central(f: &ScalarField) -> VectorField {
    let g = *f.grid();
    let (n, h) = (g.nx(), g.h());
    let v = f.values();
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    for j in 0..n {
        for i in 0..n {
            let k = g.index(i, j);
            gx[k] = if i == 0 {
                (v[k + 1] - v[k]) / h
            } else if i == n - 1 {
                (v[k] - v[k - 1]) / h
            } else {
                (v[k + 1] - v[k - 1]) / (2.0 * h)
            };
            gy[k] = if j == 0 {
                (v[k + n] - v[k]) / h
            } else if j == n - 1 {
                (v[k] - v[k - n]) / h
            } else {
                (v[k + n] - v[k - n]) / (2.0 * h)
            };
        }
    }
    VectorField {
        grid: g,
        x: gx,
        y: gy,
    }
}

/// Upwind one-sided differences: backward where the velocity component is positive,
/// forward otherwise. A missing neighbor at the wall counts as a copy of the cell itself.
pub fn upwind_gradient(f: &ScalarField, vel: &VectorField) -> VectorField {
    let g = *f.grid();
    let (n, h) = (g.nx(), g.h());
    let v = f.values();
    let mut gx = vec![0.0; g.len()];
    let mut gy = vec![0.0; g.len()];
    gx.par_chunks_mut(n)
        .zip(gy.par_chunks_mut(n))
        .enumerate()
        .for_each(|(j, (rx, ry))| {
            for i in 0..n {
                let k = g.index(i, j);
                let west = if i > 0 { v[k - 1] } else { v[k] };
                let east = if i + 1 < n { v[k + 1] } else { v[k] };
                let south = if j > 0 { v[k - n] } else { v[k] };
                let north = if j + 1 < n { v[k + n] } else { v[k] };
                rx[i] = if vel.x[k] > 0.0 {
                    (v[k] - west) / h
                } else {
                    (east - v[k]) / h
                };
                ry[i] = if vel.y[k] > 0.0 {
                    (v[k] - south) / h
                } else {
                    (north - v[k]) / h
                };
            }
        });
    VectorField {
        grid: g,
        x: gx,
        y: gy,
    }
}

/// Total variation `|D rho|(Omega)` from jumps across interior cell faces, each weighted by the
/// face length `h`. Exact for axis-aligned interfaces and invariant under quarter turns.
pub fn tv_perimeter(rho: &PhaseField) -> f64 {
    let g = rho.grid();
    let (n, h) = (g.nx(), g.h());
    let v = rho.values();
    let mut total = 0.0;
    for j in 0..n {
        for i in 0..n {
            let k = g.index(i, j);
            if i + 1 < n {
                total += (v[k + 1] - v[k]).abs();
            }
            if j + 1 < n {
                total += (v[k + n] - v[k]).abs();
            }
        }
    }
    total * h
}
