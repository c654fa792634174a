//! Runtime probes: almost-characteristic bound, concavity of the heat content, equilibrium
//! shape classification, stationarity and the interface pressure jump.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::fields::{Grid, PhaseField, PhasePair, ScalarField};
use crate::jko::EnergyReport;
use crate::kernels::{hc_first_variation, heat_content_of, HeatKernelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixedMeasure {
    pub measure: f64,
    pub bound: f64,
    pub pass: bool,
}

/// Area of `{alpha <= rho <= 1 - alpha}` against `3 sqrt(eps) HC / (sigma sqrt(2 pi) alpha (1 - alpha))`.
pub fn mixed_measure_check(
    rho: &ScalarField,
    alpha: f64,
    eps: f64,
    sigma: f64,
    hc: f64,
) -> Result<MixedMeasure> {
    if !(alpha > 0.0 && alpha < 0.5) {
        return Err(invalid(
            "alpha",
            format!("must lie in (0, 1/2), got {alpha}"),
        ));
    }
    if !(eps > 0.0 && sigma > 0.0) {
        return Err(invalid("eps", "eps and sigma must be positive"));
    }
    let count = rho
        .values()
        .iter()
        .filter(|&&v| v >= alpha && v <= 1.0 - alpha)
        .count();
    let measure = count as f64 * rho.grid().area();
    let bound = 3.0 * eps.sqrt() * hc
        / (sigma * (2.0 * std::f64::consts::PI).sqrt() * alpha * (1.0 - alpha));
    Ok(MixedMeasure {
        measure,
        bound,
        pass: measure <= bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub ts: Vec<f64>,
    pub hc: Vec<f64>,
    /// `HC(t) - ((1 - t) HC(0) + t HC(1))` at each sample.
    pub slack: Vec<f64>,
    pub min_slack: f64,
    /// Smallest `slack / (t (1 - t))` over interior samples; positive means strictly concave.
    pub margin: f64,
    pub pass: bool,
}

/// Heat content along the segment `(1 - t) A + t B` compared with its chord.
pub fn concavity_probe(
    a: &PhasePair,
    b: &PhasePair,
    ts: &[f64],
    params: &HeatKernelParams,
) -> Result<ConcavityReport> {
    if a.grid() != b.grid() {
        return Err(invalid("pair", "pairs live on different grids"));
    }
    if let Some(t) = ts.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(invalid("t", format!("samples must lie in [0, 1], got {t}")));
    }
    let g = *a.grid();
    let hc_a = heat_content_of(&a.rho1, &a.rho2, params);
    let hc_b = heat_content_of(&b.rho1, &b.rho2, params);
    let mut hc = Vec::with_capacity(ts.len());
    let mut slack = Vec::with_capacity(ts.len());
    let mut margin = f64::INFINITY;
    for &t in ts {
        let mix = |p: &PhaseField, q: &PhaseField| -> Result<PhaseField> {
            let v = p
                .values()
                .iter()
                .zip(q.values())
                .map(|(x, y)| ((1.0 - t) * x + t * y).clamp(0.0, 1.0))
                .collect();
            PhaseField::new(ScalarField::from_vec(g, v)?)
        };
        let r1 = mix(&a.rho1, &b.rho1)?;
        let r2 = r1.complement();
        let value = heat_content_of(&r1, &r2, params);
        let s = value - ((1.0 - t) * hc_a + t * hc_b);
        if t > 0.0 && t < 1.0 {
            margin = margin.min(s / (t * (1.0 - t)));
        }
        hc.push(value);
        slack.push(s);
    }
    let min_slack = slack.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ConcavityReport {
        ts: ts.to_vec(),
        hc,
        slack,
        min_slack,
        margin,
        pass: min_slack >= -1e-10,
    })
}

/// Equilibrium templates: a half disc on one wall, a wall-to-wall strip, quarter discs in
/// corners, and a disc touching no wall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    HalfDisc,
    Strip,
    CornerDrops,
    PendantDisc,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeReport {
    pub class: ShapeClass,
    /// RMS distance of interface points to the chosen model (worst over interface pieces).
    pub residual: f64,
    /// Angle in degrees between interface and wall, measured through phase 1.
    pub contact_angle: Option<f64>,
    pub components: usize,
    /// Circle of the first interface piece when a circle model was chosen.
    pub circle: Option<Circle>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// 4-connected components of `{rho >= 1/2}`: count and per-cell label (`usize::MAX` outside).
pub fn connected_components(rho: &PhaseField) -> (usize, Vec<usize>) {
    let g = rho.grid();
    let n = g.nx();
    let v = rho.values();
    let mut label = vec![usize::MAX; g.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..g.len() {
        if v[start] < 0.5 || label[start] != usize::MAX {
            continue;
        }
        label[start] = count;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (i, j) = (k % n, k / n);
            let mut visit = |q: usize| {
                if v[q] >= 0.5 && label[q] == usize::MAX {
                    label[q] = count;
                    stack.push(q);
                }
            };
            if i > 0 {
                visit(k - 1);
            }
            if i + 1 < n {
                visit(k + 1);
            }
            if j > 0 {
                visit(k - n);
            }
            if j + 1 < n {
                visit(k + n);
            }
        }
        count += 1;
    }
    (count, label)
}

/// 0.5-crossings of `rho` on segments joining adjacent cell centers, tagged with the
/// component label of the cell on the `rho >= 1/2` side.
fn interface_points(rho: &PhaseField, label: &[usize]) -> Vec<(f64, f64, usize)> {
    let g = rho.grid();
    let n = g.nx();
    let v = rho.values();
    let mut pts = Vec::new();
    let mut edge = |a: usize, b: usize| {
        let (va, vb) = (v[a], v[b]);
        if (va >= 0.5) == (vb >= 0.5) {
            return;
        }
        let t = (0.5 - va) / (vb - va);
        let (xa, ya) = g.center_of(a);
        let (xb, yb) = g.center_of(b);
        let inside = if va >= 0.5 { a } else { b };
        pts.push((xa + t * (xb - xa), ya + t * (yb - ya), label[inside]));
    };
    for j in 0..n {
        for i in 0..n {
            let k = g.index(i, j);
            if i + 1 < n {
                edge(k, k + 1);
            }
            if j + 1 < n {
                edge(k, k + n);
            }
        }
    }
    pts
}

/// Algebraic fit `x^2 + y^2 + D x + E y + F = 0` refined by Gauss-Newton on geometric distance.
fn fit_circle(pts: &[(f64, f64)]) -> Option<Circle> {
    if pts.len() < 3 {
        return None;
    }
    let (mut a, mut rhs) = ([[0.0; 3]; 3], [0.0; 3]);
    for &(x, y) in pts {
        let row = [x, y, 1.0];
        let z = -(x * x + y * y);
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += row[r] * row[c];
            }
            rhs[r] += row[r] * z;
        }
    }
    let [d, e, f] = solve3(a, rhs)?;
    let (mut cx, mut cy) = (-d / 2.0, -e / 2.0);
    let mut r = (cx * cx + cy * cy - f).max(0.0).sqrt();
    for _ in 0..50 {
        let (mut jtj, mut jtr) = ([[0.0; 3]; 3], [0.0; 3]);
        for &(x, y) in pts {
            let dist = (x - cx).hypot(y - cy).max(1e-300);
            let res = dist - r;
            let jac = [-(x - cx) / dist, -(y - cy) / dist, -1.0];
            for p in 0..3 {
                for q in 0..3 {
                    jtj[p][q] += jac[p] * jac[q];
                }
                jtr[p] += jac[p] * res;
            }
        }
        let [dx, dy, dr] = solve3(jtj, jtr)?;
        cx -= dx;
        cy -= dy;
        r -= dr;
        if dx.abs() + dy.abs() + dr.abs() < 1e-14 {
            break;
        }
    }
    (r.is_finite() && r > 0.0).then_some(Circle { cx, cy, r: r.abs() })
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |m: &[[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let d = det(&a);
    if d.abs() < 1e-300 {
        return None;
    }
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let mut m = a;
        for r in 0..3 {
            m[r][c] = b[r];
        }
        *o = det(&m) / d;
    }
    Some(out)
}

fn circle_rms(c: &Circle, pts: &[(f64, f64)]) -> f64 {
    let s: f64 = pts
        .iter()
        .map(|&(x, y)| ((x - c.cx).hypot(y - c.cy) - c.r).powi(2))
        .sum();
    (s / pts.len() as f64).sqrt()
}

/// Total-least-squares line: centroid, unit direction and RMS perpendicular distance.
fn fit_line(pts: &[(f64, f64)]) -> ((f64, f64), (f64, f64), f64) {
    let m = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x / m, b + y / m));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
    let dir = (theta.cos(), theta.sin());
    let s: f64 = pts
        .iter()
        .map(|&(x, y)| ((x - mx) * dir.1 - (y - my) * dir.0).powi(2))
        .sum();
    ((mx, my), dir, (s / m).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    /// Signed distance of a point from the wall, positive inside the unit square.
    fn depth(self, x: f64, y: f64) -> f64 {
        match self {
            Wall::Left => x,
            Wall::Right => 1.0 - x,
            Wall::Bottom => y,
            Wall::Top => 1.0 - y,
        }
    }

    fn opposite(self) -> Wall {
        match self {
            Wall::Left => Wall::Right,
            Wall::Right => Wall::Left,
            Wall::Bottom => Wall::Top,
            Wall::Top => Wall::Bottom,
        }
    }

    /// Unit tangent.
    fn tangent(self) -> (f64, f64) {
        match self {
            Wall::Left | Wall::Right => (0.0, 1.0),
            Wall::Bottom | Wall::Top => (1.0, 0.0),
        }
    }
}

const WALLS: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

struct Piece {
    class: ShapeClass,
    residual: f64,
    angle: Option<f64>,
    circle: Option<Circle>,
}

fn classify_piece(pts: &[(f64, f64)], inside: (f64, f64), h: f64) -> Piece {
    let walls: Vec<Wall> = WALLS
        .iter()
        .copied()
        .filter(|w| pts.iter().any(|&(x, y)| w.depth(x, y) <= 0.75 * h))
        .collect();
    let tol = 2.0 * h;
    let (_, dir, line_res) = fit_line(pts);
    let spans = walls.iter().any(|w| walls.contains(&w.opposite()));
    if line_res < tol && spans && walls.len() == 2 {
        let worst = walls
            .iter()
            .map(|w| {
                let t = w.tangent();
                (dir.0 * t.0 + dir.1 * t.1)
                    .abs()
                    .min(1.0)
                    .acos()
                    .to_degrees()
            })
            .fold(90.0, |acc: f64, a| {
                if (a - 90.0).abs() > (acc - 90.0).abs() {
                    a
                } else {
                    acc
                }
            });
        return Piece {
            class: ShapeClass::Strip,
            residual: line_res,
            angle: Some(worst),
            circle: None,
        };
    }
    let Some(c) = fit_circle(pts) else {
        return Piece {
            class: ShapeClass::Other,
            residual: line_res,
            angle: None,
            circle: None,
        };
    };
    let res = circle_rms(&c, pts);
    if res >= tol || c.r > 1.0 {
        return Piece {
            class: ShapeClass::Other,
            residual: res.min(line_res),
            angle: None,
            circle: Some(c),
        };
    }
    let phase1_inside = (inside.0 - c.cx).hypot(inside.1 - c.cy) < c.r;
    let angle = walls
        .iter()
        .map(|w| {
            let d = (w.depth(c.cx, c.cy) / c.r).clamp(-1.0, 1.0);
            let a = d.asin().to_degrees();
            if phase1_inside {
                90.0 + a
            } else {
                90.0 - a
            }
        })
        .fold(None, |acc: Option<f64>, a| match acc {
            Some(b) if (b - 90.0).abs() >= (a - 90.0).abs() => Some(b),
            _ => Some(a),
        });
    let class = match walls.len() {
        0 => ShapeClass::PendantDisc,
        1 => ShapeClass::HalfDisc,
        2 if !spans => ShapeClass::CornerDrops,
        _ => ShapeClass::Other,
    };
    Piece {
        class,
        residual: res,
        angle,
        circle: Some(c),
    }
}

/// Fits circle and line models to each interface piece (the crossings bordering one
/// phase-1 component) and matches the result against the equilibrium templates.
///
/// Fit residual below `2h` accepts a model. A piece is a strip when a line fits and it joins
/// two opposite walls; otherwise a fitted circle is a pendant disc, half disc or corner drop
/// by the number of walls it reaches. All pieces must agree for the field to get that class.
pub fn shape_classify(rho1: &PhaseField) -> Result<ShapeReport> {
    rho1.require_characteristic()?;
    let full = rho1.count_full();
    let g = *rho1.grid();
    if full == 0 || full == g.len() {
        return Err(Error::EmptyPhase);
    }
    let h = g.h();
    let (components, label) = connected_components(rho1);
    let pts = interface_points(rho1, &label);
    let mut pieces = Vec::new();
    for comp in 0..components {
        let own: Vec<(f64, f64)> = pts
            .iter()
            .filter(|p| p.2 == comp)
            .map(|p| (p.0, p.1))
            .collect();
        if own.is_empty() {
            continue;
        }
        let (mut sx, mut sy, mut m) = (0.0, 0.0, 0.0);
        for (k, &l) in label.iter().enumerate() {
            if l == comp {
                let (x, y) = g.center_of(k);
                sx += x;
                sy += y;
                m += 1.0;
            }
        }
        pieces.push(classify_piece(&own, (sx / m, sy / m), h));
    }
    let first = pieces[0].class;
    let agree = pieces.iter().all(|p| p.class == first);
    let residual = pieces.iter().map(|p| p.residual).fold(0.0, f64::max);
    let contact_angle = pieces
        .iter()
        .filter_map(|p| p.angle)
        .fold(None, |acc: Option<f64>, a| match acc {
            Some(b) if (b - 90.0).abs() >= (a - 90.0).abs() => Some(b),
            _ => Some(a),
        });
    let class = if agree { first } else { ShapeClass::Other };
    Ok(ShapeReport {
        class,
        residual,
        contact_angle,
        components,
        circle: pieces[0].circle,
    })
}

/// True once the last 10 steps all moved each phase by an RMS displacement below `h / 10`,
/// i.e. `W2_i^2 <= (h / 10)^2 M_i`.
pub fn stationarity(history: &[EnergyReport], h: f64) -> bool {
    const WINDOW: usize = 10;
    if history.len() < WINDOW {
        return false;
    }
    let lim = (h / 10.0).powi(2);
    history[history.len() - WINDOW..]
        .iter()
        .all(|r| (0..2).all(|i| r.w2sq[i] <= lim * r.mass[i]))
}

/// Smallest `C` with `sum_{s < k <= t} W2_k <= C sqrt(t - s + tau)` over all windows, worst phase.
pub fn holder_constant(history: &[EnergyReport], tau: f64) -> f64 {
    let mut c: f64 = 0.0;
    for i in 0..2 {
        let w: Vec<f64> = history.iter().map(|r| r.w2sq[i].max(0.0).sqrt()).collect();
        for s in 0..w.len() {
            let mut acc = 0.0;
            for (t, wk) in w.iter().enumerate().skip(s) {
                acc += wk;
                let span = (t + 1 - s) as f64 * tau;
                c = c.max(acc / (span + tau).sqrt());
            }
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PressureJump {
    /// Mean of `P_1 - P_2` over the sampled faces.
    pub mean: f64,
    pub std: f64,
    pub faces: usize,
}

/// Jump of the phase pressures `P_1 = p + K * rho_2`, `P_2 = p + K * rho_1` across interface
/// faces whose cells sit at least `margin` away from every wall.
pub fn interface_pressure_jump(
    pair: &PhasePair,
    p: &ScalarField,
    params: &HeatKernelParams,
    margin: f64,
) -> Result<PressureJump> {
    let labels = pair.labels()?;
    let g = *pair.grid();
    if p.grid() != &g {
        return Err(invalid("p", "pressure lives on a different grid"));
    }
    let k2 = hc_first_variation(&pair.rho2, params);
    let k1 = hc_first_variation(&pair.rho1, params);
    let n = g.nx();
    let far = |k: usize| {
        let (x, y) = g.center_of(k);
        x.min(1.0 - x).min(y).min(1.0 - y) >= margin
    };
    let mut jumps = Vec::new();
    let mut face = |a: usize, b: usize| {
        if labels[a] == labels[b] || !far(a) || !far(b) {
            return;
        }
        let (one, two) = if labels[a] == 0 { (a, b) } else { (b, a) };
        let p1 = p.values()[one] + k2.values()[one];
        let p2 = p.values()[two] + k1.values()[two];
        jumps.push(p1 - p2);
    };
    for j in 0..n {
        for i in 0..n {
            let k = g.index(i, j);
            if i + 1 < n {
                face(k, k + 1);
            }
            if j + 1 < n {
                face(k, k + n);
            }
        }
    }
    if jumps.is_empty() {
        return Err(invalid(
            "margin",
            "no interface face lies away from the walls",
        ));
    }
    let m = jumps.len() as f64;
    let mean = jumps.iter().sum::<f64>() / m;
    let var = jumps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    Ok(PressureJump {
        mean,
        std: var.sqrt(),
        faces: jumps.len(),
    })
}

/// One JSON-lines record per probe invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub name: String,
    /// Hex SHA-256 of the probe inputs.
    pub inputs: String,
    pub metrics: serde_json::Value,
    pub pass: Option<bool>,
}

impl DiagnosticRecord {
    pub fn new(
        name: impl Into<String>,
        inputs: String,
        metrics: serde_json::Value,
        pass: Option<bool>,
    ) -> Self {
        DiagnosticRecord {
            name: name.into(),
            inputs,
            metrics,
            pass,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// Digest of a grid, its fields and any extra scalars.
pub fn inputs_digest(grid: &Grid, fields: &[&ScalarField], scalars: &[f64]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((grid.nx() as u64).to_le_bytes());
    hasher.update((grid.ny() as u64).to_le_bytes());
    for f in fields {
        for v in f.values() {
            hasher.update(v.to_le_bytes());
        }
    }
    for s in scalars {
        hasher.update(s.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}
