//! Forward auction with epsilon scaling for the cell assignment problem behind the dual step.
//!
//! Every cell `x` carries one unit of its phase `l(x)` and must land on a distinct cell `y`,
//! paying `psi_l(y) + a_l |x - y|^2` (indices in cell units, `a_l = w_l h^2`). Prices only rise,
//! so block minima of `psi_l + price` stay valid lower bounds for pruning the bid search.

use log::trace;

use crate::ctransform::{ctransform_into, CTransformScratch};
use crate::error::{Error, Result};
use crate::fields::Grid;

const UNSET: usize = usize::MAX;
const BLOCK: usize = 4;

pub(crate) struct Assignment<'a> {
    pub grid: Grid,
    pub labels: &'a [u8],
    pub psi: [&'a [f64]; 2],
    /// Quadratic weights `w_l` in physical units.
    pub w: [f64; 2],
}

pub(crate) struct AuctionOutcome {
    /// Target of every source cell.
    pub target: Vec<usize>,
    pub prices: Vec<f64>,
    pub bids: usize,
    pub phases: usize,
}

struct Blocks {
    nb: usize,
    side: usize,
    n: usize,
    min: [Vec<f64>; 2],
}

impl Blocks {
    fn new(n: usize) -> Self {
        let side = BLOCK.min(n);
        let nb = n.div_ceil(side);
        Blocks {
            nb,
            side,
            n,
            min: [vec![0.0; nb * nb], vec![0.0; nb * nb]],
        }
    }

    #[inline]
    fn of(&self, y: usize) -> usize {
        let (i, j) = (y % self.n, y / self.n);
        (j / self.side) * self.nb + i / self.side
    }

    #[inline]
    fn span(&self, b: usize) -> (usize, usize, usize, usize) {
        let (bi, bj) = (b % self.nb, b / self.nb);
        let i0 = bi * self.side;
        let j0 = bj * self.side;
        (
            i0,
            (i0 + self.side).min(self.n),
            j0,
            (j0 + self.side).min(self.n),
        )
    }

    fn refresh(&mut self, b: usize, psi: [&[f64]; 2], prices: &[f64]) {
        let (i0, i1, j0, j1) = self.span(b);
        for (l, psi_l) in psi.iter().enumerate() {
            let mut m = f64::INFINITY;
            for j in j0..j1 {
                for i in i0..i1 {
                    let y = j * self.n + i;
                    m = m.min(psi_l[y] + prices[y]);
                }
            }
            self.min[l][b] = m;
        }
    }
}

#[inline]
fn gap(v: usize, lo: usize, hi: usize) -> f64 {
    if v < lo {
        (lo - v) as f64
    } else if v >= hi {
        (v + 1 - hi) as f64
    } else {
        0.0
    }
}

/// Runs epsilon-scaled auction rounds from `prices` until every source holds a target whose
/// reduced cost is within `eps_final` of its best alternative.
pub(crate) fn solve(
    problem: &Assignment<'_>,
    mut prices: Vec<f64>,
    eps_start: f64,
    eps_final: f64,
    max_bids: usize,
) -> Result<AuctionOutcome> {
    let g = problem.grid;
    let n = g.nx();
    let len = g.len();
    let a = [problem.w[0] * g.area(), problem.w[1] * g.area()];
    let labels = problem.labels;
    let psi = problem.psi;

    let mut target = vec![UNSET; len];
    let mut owner = vec![UNSET; len];
    let mut blocks = Blocks::new(n);
    for b in 0..blocks.nb * blocks.nb {
        blocks.refresh(b, psi, &prices);
    }

    let mut scratch = CTransformScratch::new(&g);
    let mut best = [vec![0.0; len], vec![0.0; len]];
    let mut arg = [vec![0usize; len], vec![0usize; len]];
    let mut f = vec![0.0; len];
    let mut queue: Vec<usize> = Vec::with_capacity(len);

    let mut eps = eps_start.max(eps_final);
    let mut bids = 0usize;
    let mut phases = 0usize;
    loop {
        phases += 1;
        for l in 0..2 {
            for y in 0..len {
                f[y] = psi[l][y] + prices[y];
            }
            ctransform_into(
                &g,
                &f,
                problem.w[l],
                &mut scratch,
                &mut best[l],
                &mut arg[l],
            )?;
        }
        // Prices only rise, so these stay lower bounds on every block minimum for the phase.
        let floor = [0, 1].map(|l| blocks.min[l].iter().copied().fold(f64::INFINITY, f64::min));
        queue.clear();
        for x in 0..len {
            let l = labels[x] as usize;
            let y = target[x];
            if y != UNSET {
                let dx = (x % n).abs_diff(y % n) as f64;
                let dy = (x / n).abs_diff(y / n) as f64;
                let c = psi[l][y] + prices[y] + a[l] * (dx * dx + dy * dy);
                if c <= best[l][x] + eps {
                    continue;
                }
                owner[y] = UNSET;
                target[x] = UNSET;
            }
        }
        // Cheap start: hand every free target to the first free source whose best it is.
        for x in 0..len {
            if target[x] != UNSET {
                continue;
            }
            let y = arg[labels[x] as usize][x];
            if owner[y] == UNSET {
                owner[y] = x;
                target[x] = y;
            } else {
                queue.push(x);
            }
        }
        trace!(
            "auction phase {phases}: eps={eps:.3e} unassigned={}",
            queue.len()
        );

        while let Some(x) = queue.pop() {
            bids += 1;
            if bids > max_bids {
                return Err(Error::Infeasible(format!(
                    "auction exceeded {max_bids} bids at eps {eps:.3e}"
                )));
            }
            let l = labels[x] as usize;
            let (y1, v1, v2) = best_two(x, l, &blocks, floor[l], psi[l], &prices, a[l], n);
            prices[y1] += v2 - v1 + eps;
            let prev = owner[y1];
            owner[y1] = x;
            target[x] = y1;
            if prev != UNSET {
                target[prev] = UNSET;
                queue.push(prev);
            }
            blocks.refresh(blocks.of(y1), psi, &prices);
        }

        if eps <= eps_final {
            break;
        }
        eps = (eps / 8.0).max(eps_final);
    }
    Ok(AuctionOutcome {
        target,
        prices,
        bids,
        phases,
    })
}

/// Best and second-best value of `psi(y) + price(y) + a |x - y|^2` over all cells, searching
/// rings of blocks outward until `floor` plus the ring's distance cost cannot beat the runner-up.
#[allow(clippy::too_many_arguments)]
fn best_two(
    x: usize,
    l: usize,
    blocks: &Blocks,
    floor: f64,
    psi: &[f64],
    prices: &[f64],
    a: f64,
    n: usize,
) -> (usize, f64, f64) {
    let (ix, jx) = (x % n, x / n);
    let mut y1 = UNSET;
    let mut v1 = f64::INFINITY;
    let mut v2 = f64::INFINITY;
    let scan = |b: usize, y1: &mut usize, v1: &mut f64, v2: &mut f64| {
        let (i0, i1, j0, j1) = blocks.span(b);
        for j in j0..j1 {
            let dy = j as f64 - jx as f64;
            let row = j * n;
            for i in i0..i1 {
                let dx = i as f64 - ix as f64;
                let y = row + i;
                let v = psi[y] + prices[y] + a * (dx * dx + dy * dy);
                if v < *v1 {
                    *v2 = *v1;
                    *v1 = v;
                    *y1 = y;
                } else if v < *v2 {
                    *v2 = v;
                }
            }
        }
    };
    let home = blocks.of(x);
    let (hbi, hbj) = (home % blocks.nb, home / blocks.nb);
    let nb = blocks.nb;
    for bj in hbj.saturating_sub(1)..(hbj + 2).min(nb) {
        for bi in hbi.saturating_sub(1)..(hbi + 2).min(nb) {
            scan(bj * nb + bi, &mut y1, &mut v1, &mut v2);
        }
    }
    // Rings of blocks at Chebyshev block distance r are at least (r - 1) side + 1 cells away.
    for r in 2..nb {
        if hbi < r && hbj < r && hbi + r >= nb && hbj + r >= nb {
            break;
        }
        let gap_min = ((r - 1) * blocks.side + 1) as f64;
        if floor + a * gap_min * gap_min >= v2 {
            break;
        }
        let j_lo = hbj.saturating_sub(r);
        let j_hi = (hbj + r).min(nb - 1);
        let i_lo = hbi.saturating_sub(r);
        let i_hi = (hbi + r).min(nb - 1);
        for bj in j_lo..=j_hi {
            let edge_row = bj + r == hbj || bj == hbj + r;
            let mut bi = i_lo;
            while bi <= i_hi {
                let on_ring = edge_row || bi + r == hbi || bi == hbi + r;
                if on_ring {
                    let b = bj * nb + bi;
                    let (i0, i1, j0, j1) = blocks.span(b);
                    let (dx, dy) = (gap(ix, i0, i1), gap(jx, j0, j1));
                    if blocks.min[l][b] + a * (dx * dx + dy * dy) < v2 {
                        scan(b, &mut y1, &mut v1, &mut v2);
                    }
                    bi += 1;
                } else {
                    // Jump across the interior of the ring.
                    bi = if hbi + r <= i_hi { hbi + r } else { i_hi + 1 };
                }
            }
        }
    }
    (y1, v1, v2)
}
