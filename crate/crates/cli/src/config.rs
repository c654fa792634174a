//! Line-oriented `key = value` simulation configs and the figure presets.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use muskat::{BfmOptions, Grid, LevelSetOptions, PhaseField, PotentialSpec, StepConfig, Transport};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("bad value for `{0}`")]
    BadValue(String),
    #[error("missing required key `{0}`")]
    MissingRequired(String),
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
}

/// Initial phase-1 region.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Square {
        center: (f64, f64),
        side: f64,
    },
    Rect {
        center: (f64, f64),
        width: f64,
        height: f64,
    },
    Disc {
        center: (f64, f64),
        r: f64,
    },
    /// Phase 1 fills `{coordinate < level}`.
    HalfPlane {
        axis: Axis,
        level: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

impl Shape {
    pub fn rasterize(&self, grid: Grid) -> PhaseField {
        match *self {
            Shape::Square { center, side } => PhaseField::from_indicator(grid, |x, y| {
                (x - center.0).abs() < side / 2.0 && (y - center.1).abs() < side / 2.0
            }),
            Shape::Rect {
                center,
                width,
                height,
            } => PhaseField::from_indicator(grid, |x, y| {
                (x - center.0).abs() < width / 2.0 && (y - center.1).abs() < height / 2.0
            }),
            Shape::Disc { center, r } => {
                PhaseField::from_indicator(grid, |x, y| (x - center.0).hypot(y - center.1) < r)
            }
            Shape::HalfPlane { axis, level } => {
                PhaseField::from_indicator(grid, |x, y| match axis {
                    Axis::X => x < level,
                    Axis::Y => y < level,
                })
            }
        }
    }
}

/// Kernel width, either absolute or in units of `h^2` so it follows `nx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eps {
    Absolute(f64),
    CellsSq(f64),
}

impl Eps {
    pub fn value(self, grid: &Grid) -> f64 {
        match self {
            Eps::Absolute(e) => e,
            Eps::CellsSq(k) => k * grid.area(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub nx: usize,
    pub tau: f64,
    pub eps: Eps,
    pub sigma: f64,
    pub b1: f64,
    pub b2: f64,
    pub n_steps: usize,
    pub potential: PotentialSpec,
    pub shape: Shape,
    pub out: PathBuf,
    pub frame_stride: usize,
    pub stop_when_stationary: bool,
    pub transport: Transport,
    pub cfl: f64,
    pub bfm_max_iters: usize,
    pub bfm_tol: f64,
    pub auction_eps: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
}

impl std::str::FromStr for Preset {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, ConfigError> {
        match s {
            "fig1" => Ok(Preset::Fig1),
            "fig2" => Ok(Preset::Fig2),
            "fig3" => Ok(Preset::Fig3),
            _ => Err(ConfigError::BadValue("preset".into())),
        }
    }
}

impl Preset {
    pub fn config(self) -> SimConfig {
        let base = SimConfig {
            nx: 128,
            tau: 0.03,
            eps: Eps::CellsSq(16.0),
            sigma: 0.15,
            b1: 1.0,
            b2: 1.0,
            n_steps: 400,
            potential: PotentialSpec::Gravity { w1: 5.0, w2: 1.0 },
            shape: Shape::Square {
                center: (0.5, 0.5),
                side: 0.2,
            },
            out: PathBuf::from("out"),
            frame_stride: 10,
            stop_when_stationary: true,
            transport: Transport::Map,
            cfl: 0.5,
            bfm_max_iters: BfmOptions::default().max_iters,
            bfm_tol: BfmOptions::default().tol_res,
            auction_eps: BfmOptions::default().eps_final,
            seed: 0,
        };
        match self {
            Preset::Fig1 => SimConfig {
                shape: Shape::Square {
                    center: (0.5, 0.65),
                    side: 0.2,
                },
                out: PathBuf::from("out/fig1"),
                ..base
            },
            Preset::Fig2 => SimConfig {
                shape: Shape::Square {
                    center: (0.5, 0.5),
                    side: 0.6,
                },
                n_steps: 600,
                auction_eps: 1e-6,
                out: PathBuf::from("out/fig2"),
                ..base
            },
            // At 16 h^2 the linearized heat content pins this drop in place on a 128 grid.
            Preset::Fig3 => SimConfig {
                potential: PotentialSpec::Ripping,
                eps: Eps::CellsSq(64.0),
                shape: Shape::Rect {
                    center: (0.5, 0.5),
                    width: 0.25,
                    height: 0.9,
                },
                n_steps: 300,
                auction_eps: 1e-6,
                out: PathBuf::from("out/fig3"),
                ..base
            },
        }
    }
}

const KEYS: &[&str] = &[
    "preset",
    "nx",
    "tau",
    "eps",
    "sigma",
    "b1",
    "b2",
    "n_steps",
    "potential",
    "w1",
    "w2",
    "table1",
    "table2",
    "shape",
    "center",
    "side",
    "width",
    "height",
    "radius",
    "axis",
    "level",
    "out",
    "frame_stride",
    "stop_when_stationary",
    "transport",
    "cfl",
    "bfm_max_iters",
    "bfm_tol",
    "auction_eps",
    "seed",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError::BadValue(key.into()))
}

fn positive(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = num(key, v)?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(ConfigError::BadValue(key.into()))
    }
}

fn point(key: &str, v: &str) -> Result<(f64, f64), ConfigError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((num(key, a)?, num(key, b)?)),
        _ => Err(ConfigError::BadValue(key.into())),
    }
}

/// `y:value, y:value, ...`
fn table(key: &str, v: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
    v.split(',')
        .map(|kv| {
            let (y, val) = kv
                .split_once(':')
                .ok_or_else(|| ConfigError::BadValue(key.into()))?;
            Ok((num(key, y.trim())?, num(key, val.trim())?))
        })
        .collect()
}

/// Parses a config. Keys override the values of `preset` when one is given; without a preset
/// the grid, time step, surface tension, step count, potential and initial shape are required.
pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or(ConfigError::Syntax(lineno + 1))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(ConfigError::UnknownKey(k.into()));
        }
        if kv.insert(k, v).is_some() {
            return Err(ConfigError::BadValue(k.into()));
        }
    }
    let preset = kv.get("preset").map(|p| p.parse::<Preset>()).transpose()?;
    let get = |k: &str| -> Result<&str, ConfigError> {
        kv.get(k)
            .copied()
            .ok_or_else(|| ConfigError::MissingRequired(k.into()))
    };
    let mut c = match preset {
        Some(p) => p.config(),
        None => {
            for k in ["nx", "tau", "sigma", "n_steps", "potential", "shape"] {
                get(k)?;
            }
            SimConfig {
                out: PathBuf::from("out"),
                ..Preset::Fig1.config()
            }
        }
    };

    if let Some(v) = kv.get("nx") {
        c.nx = num("nx", v)?;
        if c.nx < 4 {
            return Err(ConfigError::BadValue("nx".into()));
        }
    }
    if let Some(v) = kv.get("tau") {
        c.tau = positive("tau", v)?;
    }
    if let Some(v) = kv.get("eps") {
        c.eps = match v.strip_suffix("h2") {
            _ if *v == "auto" => Eps::CellsSq(16.0),
            Some(k) => Eps::CellsSq(positive("eps", k.trim())?),
            None => Eps::Absolute(positive("eps", v)?),
        };
    }
    if let Some(v) = kv.get("sigma") {
        let s: f64 = num("sigma", v)?;
        if !(s >= 0.0 && s.is_finite()) {
            return Err(ConfigError::BadValue("sigma".into()));
        }
        c.sigma = s;
    }
    if let Some(v) = kv.get("b1") {
        c.b1 = positive("b1", v)?;
    }
    if let Some(v) = kv.get("b2") {
        c.b2 = positive("b2", v)?;
    }
    if let Some(v) = kv.get("n_steps") {
        c.n_steps = num("n_steps", v)?;
    }

    let pot_kind = kv.get("potential").copied().unwrap_or(match c.potential {
        PotentialSpec::Zero => "zero",
        PotentialSpec::Gravity { .. } => "gravity",
        PotentialSpec::Ripping => "ripping",
        PotentialSpec::Table { .. } => "table",
    });
    c.potential = match pot_kind {
        "zero" => PotentialSpec::Zero,
        "ripping" => PotentialSpec::Ripping,
        "gravity" => {
            let (mut w1, mut w2) = match c.potential {
                PotentialSpec::Gravity { w1, w2 } => (w1, w2),
                _ => (5.0, 1.0),
            };
            if let Some(v) = kv.get("w1") {
                w1 = num("w1", v)?;
            }
            if let Some(v) = kv.get("w2") {
                w2 = num("w2", v)?;
            }
            if !(w1.is_finite() && w2.is_finite()) {
                return Err(ConfigError::BadValue("w1".into()));
            }
            PotentialSpec::Gravity { w1, w2 }
        }
        "table" => PotentialSpec::Table {
            phase1: table("table1", get("table1")?)?,
            phase2: table("table2", get("table2")?)?,
        },
        _ => return Err(ConfigError::BadValue("potential".into())),
    };
    if let PotentialSpec::Table { .. } = c.potential {
        c.potential
            .validate()
            .map_err(|_| ConfigError::BadValue("table1".into()))?;
    }

    let shape_kind = kv.get("shape").copied().unwrap_or(match c.shape {
        Shape::Square { .. } => "square",
        Shape::Rect { .. } => "rect",
        Shape::Disc { .. } => "disc",
        Shape::HalfPlane { .. } => "halfplane",
    });
    let center = match kv.get("center") {
        Some(v) => Some(point("center", v)?),
        None => None,
    };
    c.shape = match (shape_kind, &c.shape) {
        ("square", prev) => {
            let (pc, ps) = match prev {
                Shape::Square { center, side } => (Some(*center), Some(*side)),
                _ => (None, None),
            };
            let side = match kv.get("side") {
                Some(v) => positive("side", v)?,
                None => ps.ok_or_else(|| ConfigError::MissingRequired("side".into()))?,
            };
            let center = center
                .or(pc)
                .ok_or_else(|| ConfigError::MissingRequired("center".into()))?;
            Shape::Square { center, side }
        }
        ("rect", prev) => {
            let (pc, pw, ph) = match prev {
                Shape::Rect {
                    center,
                    width,
                    height,
                } => (Some(*center), Some(*width), Some(*height)),
                _ => (None, None, None),
            };
            let width = match kv.get("width") {
                Some(v) => positive("width", v)?,
                None => pw.ok_or_else(|| ConfigError::MissingRequired("width".into()))?,
            };
            let height = match kv.get("height") {
                Some(v) => positive("height", v)?,
                None => ph.ok_or_else(|| ConfigError::MissingRequired("height".into()))?,
            };
            let center = center
                .or(pc)
                .ok_or_else(|| ConfigError::MissingRequired("center".into()))?;
            Shape::Rect {
                center,
                width,
                height,
            }
        }
        ("disc", prev) => {
            let (pc, pr) = match prev {
                Shape::Disc { center, r } => (Some(*center), Some(*r)),
                _ => (None, None),
            };
            let r = match kv.get("radius") {
                Some(v) => positive("radius", v)?,
                None => pr.ok_or_else(|| ConfigError::MissingRequired("radius".into()))?,
            };
            let center = center
                .or(pc)
                .ok_or_else(|| ConfigError::MissingRequired("center".into()))?;
            Shape::Disc { center, r }
        }
        ("halfplane", prev) => {
            let (pa, pl) = match prev {
                Shape::HalfPlane { axis, level } => (Some(*axis), Some(*level)),
                _ => (None, None),
            };
            let axis = match kv.get("axis") {
                Some(&"x") => Axis::X,
                Some(&"y") => Axis::Y,
                Some(_) => return Err(ConfigError::BadValue("axis".into())),
                None => pa.ok_or_else(|| ConfigError::MissingRequired("axis".into()))?,
            };
            let level = match kv.get("level") {
                Some(v) => num("level", v)?,
                None => pl.ok_or_else(|| ConfigError::MissingRequired("level".into()))?,
            };
            Shape::HalfPlane { axis, level }
        }
        _ => return Err(ConfigError::BadValue("shape".into())),
    };

    if let Some(v) = kv.get("out") {
        c.out = PathBuf::from(v);
    }
    if let Some(v) = kv.get("frame_stride") {
        c.frame_stride = num("frame_stride", v)?;
        if c.frame_stride == 0 {
            return Err(ConfigError::BadValue("frame_stride".into()));
        }
    }
    if let Some(v) = kv.get("stop_when_stationary") {
        c.stop_when_stationary = num("stop_when_stationary", v)?;
    }
    if let Some(v) = kv.get("transport") {
        c.transport = match *v {
            "map" => Transport::Map,
            "upwind" => Transport::Upwind,
            _ => return Err(ConfigError::BadValue("transport".into())),
        };
    }
    if let Some(v) = kv.get("cfl") {
        c.cfl = positive("cfl", v)?;
        if c.cfl > 1.0 {
            return Err(ConfigError::BadValue("cfl".into()));
        }
    }
    if let Some(v) = kv.get("bfm_max_iters") {
        c.bfm_max_iters = num("bfm_max_iters", v)?;
    }
    if let Some(v) = kv.get("bfm_tol") {
        c.bfm_tol = positive("bfm_tol", v)?;
    }
    if let Some(v) = kv.get("auction_eps") {
        c.auction_eps = positive("auction_eps", v)?;
    }
    if let Some(v) = kv.get("seed") {
        c.seed = num("seed", v)?;
    }

    let mass = c.initial_mass();
    if !(mass > 0.0 && mass < 1.0) {
        return Err(ConfigError::BadValue("shape".into()));
    }
    Ok(c)
}

impl SimConfig {
    pub fn grid(&self) -> Grid {
        Grid::new(self.nx).expect("nx validated at parse time")
    }

    pub fn initial_mass(&self) -> f64 {
        match Grid::new(self.nx) {
            Ok(g) => self.shape.rasterize(g).mass(),
            Err(_) => 0.0,
        }
    }

    pub fn step_config(&self) -> StepConfig {
        StepConfig {
            tau: self.tau,
            eps: Some(self.eps.value(&self.grid())),
            sigma: self.sigma,
            b1: self.b1,
            b2: self.b2,
            potential: self.potential.clone(),
            bfm: BfmOptions {
                max_iters: self.bfm_max_iters,
                tol_res: self.bfm_tol,
                eps_final: self.auction_eps,
                ..BfmOptions::default()
            },
            levelset: LevelSetOptions {
                cfl: self.cfl,
                transport: self.transport,
            },
        }
    }

    /// Every key written explicitly, so the text reparses without a preset.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("nx", self.nx.to_string());
        kv("tau", self.tau.to_string());
        kv(
            "eps",
            match self.eps {
                Eps::Absolute(e) => e.to_string(),
                Eps::CellsSq(k) => format!("{k}h2"),
            },
        );
        kv("sigma", self.sigma.to_string());
        kv("b1", self.b1.to_string());
        kv("b2", self.b2.to_string());
        kv("n_steps", self.n_steps.to_string());
        match &self.potential {
            PotentialSpec::Zero => kv("potential", "zero".into()),
            PotentialSpec::Ripping => kv("potential", "ripping".into()),
            PotentialSpec::Gravity { w1, w2 } => {
                kv("potential", "gravity".into());
                kv("w1", w1.to_string());
                kv("w2", w2.to_string());
            }
            PotentialSpec::Table { phase1, phase2 } => {
                let fmt = |t: &[(f64, f64)]| {
                    t.iter()
                        .map(|(y, v)| format!("{y}:{v}"))
                        .collect::<Vec<_>>()
                        .join(", ")
                };
                kv("potential", "table".into());
                kv("table1", fmt(phase1));
                kv("table2", fmt(phase2));
            }
        }
        match self.shape {
            Shape::Square { center, side } => {
                kv("shape", "square".into());
                kv("center", format!("{}, {}", center.0, center.1));
                kv("side", side.to_string());
            }
            Shape::Rect {
                center,
                width,
                height,
            } => {
                kv("shape", "rect".into());
                kv("center", format!("{}, {}", center.0, center.1));
                kv("width", width.to_string());
                kv("height", height.to_string());
            }
            Shape::Disc { center, r } => {
                kv("shape", "disc".into());
                kv("center", format!("{}, {}", center.0, center.1));
                kv("radius", r.to_string());
            }
            Shape::HalfPlane { axis, level } => {
                kv("shape", "halfplane".into());
                kv("axis", if axis == Axis::X { "x" } else { "y" }.into());
                kv("level", level.to_string());
            }
        }
        kv("out", self.out.display().to_string());
        kv("frame_stride", self.frame_stride.to_string());
        kv(
            "stop_when_stationary",
            self.stop_when_stationary.to_string(),
        );
        kv(
            "transport",
            match self.transport {
                Transport::Map => "map",
                Transport::Upwind => "upwind",
            }
            .into(),
        );
        kv("cfl", self.cfl.to_string());
        kv("bfm_max_iters", self.bfm_max_iters.to_string());
        kv("bfm_tol", self.bfm_tol.to_string());
        kv("auction_eps", self.auction_eps.to_string());
        kv("seed", self.seed.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_only() {
        let c = parse_config("preset = fig1\n").unwrap();
        assert_eq!(c.sigma, 0.15);
        assert_eq!(c.potential, PotentialSpec::Gravity { w1: 5.0, w2: 1.0 });
        assert!(matches!(c.shape, Shape::Square { side, .. } if side < 0.3));
    }

    #[test]
    fn errors_name_the_key() {
        assert_eq!(
            parse_config("preset = fig1\nsigma = -1").unwrap_err(),
            ConfigError::BadValue("sigma".into())
        );
        assert_eq!(
            parse_config("preset = fig1\ncolour = red").unwrap_err(),
            ConfigError::UnknownKey("colour".into())
        );
        assert_eq!(
            parse_config("nx = 32").unwrap_err(),
            ConfigError::MissingRequired("tau".into())
        );
        assert_eq!(parse_config("nx 32").unwrap_err(), ConfigError::Syntax(1));
    }

    #[test]
    fn comments_and_overrides() {
        let c = parse_config("# small run\npreset = fig2 # larger drop\nnx = 32\neps = 0.02\n")
            .unwrap();
        assert_eq!(c.nx, 32);
        assert_eq!(c.eps, Eps::Absolute(0.02));
        assert!(matches!(c.shape, Shape::Square { side, .. } if side > 0.4));
    }

    #[test]
    fn table_and_halfplane_round_trip() {
        let text = "nx = 16\ntau = 0.01\nsigma = 0.1\nn_steps = 3\npotential = table\n\
                    table1 = 0:0, 1:2.5\ntable2 = 0.5:1\nshape = halfplane\naxis = y\nlevel = 0.3\n";
        let c = parse_config(text).unwrap();
        assert_eq!(parse_config(&c.serialize()).unwrap(), c);
    }

    #[test]
    fn eps_in_cell_units_follows_nx() {
        let c = parse_config(
            "preset = fig3
nx = 64
",
        )
        .unwrap();
        assert_eq!(c.eps, Eps::CellsSq(64.0));
        assert!((c.step_config().eps.unwrap() - 64.0 / 4096.0).abs() < 1e-15);
        assert!(matches!(c.shape, Shape::Rect { height, .. } if height > 0.8));
        assert_eq!(parse_config(&c.serialize()).unwrap(), c);
    }
}
