//! Seeded synthetic atmosphere with a known precipitation mapping.
//!
//! Each (variable, level) field is a standardized anomaly built from four
//! spatial modes (one uniform, three sinusoids with random phases) whose
//! amplitudes follow AR(1) processes across 6-hour steps, plus white noise.
//! Amplitudes share a per-variable component across levels, so levels are
//! correlated but not identical. Stored values are
//! `offset(kind, p) + scale(kind, p) · anomaly`.
//!
//! The daily target is, with `⟨·⟩` the anomaly averaged over the central mask,
//! `q` the humidity variable and `T` the temperature variable:
//!
//! ```text
//! z = a·⟨q925@15⟩ + b·(⟨q925@15⟩ − ⟨q500@15⟩)·⟨T850@15⟩ + c·(⟨q925@15⟩ − ⟨q925@03⟩)
//! precip = max(0, softplus(z) + ε),   ε ~ N(0, noise_std²)
//! ```
//!
//! Each pressure in the formula resolves to the nearest level present. The
//! anomalies are recovered from the stored (precision-rounded) stack, so the
//! target is a pure function of what is on disk when `noise_std = 0`.

use std::ops::Range;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AtmosDataset, SLOTS_PER_DAY};
use crate::channelizer::LevelSet;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// Lag-one autocorrelation of mode amplitudes per 6-hour step.
pub const AR_COEFFICIENT: f64 = 0.8;
/// Standard deviation of the per-cell white noise, in anomaly units.
pub const CELL_NOISE_STD: f64 = 0.1;

const SHARED_WEIGHT: f64 = 0.8;
const LEVEL_WEIGHT: f64 = 0.6;
const WAVEVECTORS: [(f64, f64); 3] = [(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)];
const MODES: usize = 1 + WAVEVECTORS.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Humidity,
    MeridionalWind,
    ZonalWind,
    VerticalWind,
    Temperature,
}

impl VariableKind {
    pub fn short_name(self) -> &'static str {
        match self {
            VariableKind::Humidity => "q",
            VariableKind::MeridionalWind => "v",
            VariableKind::ZonalWind => "u",
            VariableKind::VerticalWind => "w",
            VariableKind::Temperature => "t",
        }
    }

    /// Climatological value at `hpa` (g/kg, m/s, Pa/s or K).
    pub fn offset(self, hpa: f64) -> f64 {
        let s = hpa / 1000.0;
        match self {
            VariableKind::Humidity => 16.0 * s.powi(3),
            VariableKind::MeridionalWind => 0.0,
            VariableKind::ZonalWind => 5.0 + 20.0 * (1.0 - s),
            VariableKind::VerticalWind => 0.0,
            VariableKind::Temperature => 288.0 * s.powf(0.19),
        }
    }

    /// Size of one anomaly unit at `hpa`.
    pub fn scale(self, hpa: f64) -> f64 {
        let s = hpa / 1000.0;
        match self {
            VariableKind::Humidity => 2.5 * s * s,
            VariableKind::MeridionalWind => 6.0,
            VariableKind::ZonalWind => 8.0,
            VariableKind::VerticalWind => 0.3,
            VariableKind::Temperature => 3.0,
        }
    }
}

/// Variable 0 is humidity, the last is temperature, the rest cycle through
/// the wind components.
pub fn variable_kind(index: usize, count: usize) -> VariableKind {
    const WINDS: [VariableKind; 3] = [
        VariableKind::MeridionalWind,
        VariableKind::ZonalWind,
        VariableKind::VerticalWind,
    ];
    if index == 0 {
        VariableKind::Humidity
    } else if index + 1 == count {
        VariableKind::Temperature
    } else {
        WINDS[(index - 1) % WINDS.len()]
    }
}

fn variable_names(count: usize) -> Vec<String> {
    (0..count)
        .map(|i| {
            let kind = variable_kind(i, count);
            let cycle = if i == 0 || i + 1 == count { 0 } else { (i - 1) / 3 };
            if cycle == 0 {
                kind.short_name().to_string()
            } else {
                format!("{}{}", kind.short_name(), cycle + 1)
            }
        })
        .collect()
}

/// Rows and columns of the central averaging mask.
pub fn central_mask(height: usize, width: usize) -> (Range<usize>, Range<usize>) {
    (height / 4..height - height / 4, width / 4..width - width / 4)
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Weights of the humidity, vertical-difference and temporal-difference terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Default for Coefficients {
    fn default() -> Self {
        Coefficients { a: 1.0, b: 1.0, c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub days: usize,
    pub height: usize,
    pub width: usize,
    pub levels: LevelSet,
    pub variables: usize,
    pub seed: u64,
    pub noise_std: f64,
    pub start_date: NaiveDate,
    pub precision: Precision,
    pub coefficients: Coefficients,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            days: 730,
            height: 8,
            width: 8,
            levels: LevelSet::v1(),
            variables: 4,
            seed: 0,
            noise_std: 0.0,
            start_date: NaiveDate::from_ymd_opt(1980, 1, 1).unwrap(),
            precision: Precision::Double,
            coefficients: Coefficients::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::invalid("need at least 1 day"));
        }
        if self.height < 3 || self.width < 3 {
            return Err(Error::invalid(format!(
                "grid {}x{} is smaller than a 3x3 kernel",
                self.height, self.width
            )));
        }
        if self.variables < 2 {
            return Err(Error::invalid(
                "need at least 2 variables (humidity and temperature)",
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::invalid(format!("noise_std {} must be ≥ 0", self.noise_std)));
        }
        let c = self.coefficients;
        if ![c.a, c.b, c.c].iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("mapping coefficients must be finite"));
        }
        Ok(())
    }
}

struct Ar1 {
    state: Vec<f64>,
}

impl Ar1 {
    fn new(n: usize, rng: &mut ChaCha8Rng) -> Self {
        Ar1 {
            state: (0..n).map(|_| rng.sample(StandardNormal)).collect(),
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) {
        let innovation = (1.0 - AR_COEFFICIENT * AR_COEFFICIENT).sqrt();
        for x in &mut self.state {
            let e: f64 = rng.sample(StandardNormal);
            *x = AR_COEFFICIENT * *x + innovation * e;
        }
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<AtmosDataset> {
    spec.validate()?;
    let (d, s, v, l, h, w) = (
        spec.days,
        SLOTS_PER_DAY,
        spec.variables,
        spec.levels.len(),
        spec.height,
        spec.width,
    );
    let plane = h * w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tau = std::f64::consts::TAU;

    // basis[v][l][k] over the grid
    let mut basis = vec![0.0; v * l * MODES * plane];
    for vl in 0..v * l {
        for k in 0..MODES {
            let phase: f64 = if k == 0 { 0.0 } else { rng.random::<f64>() * tau };
            let at = (vl * MODES + k) * plane;
            for i in 0..h {
                for j in 0..w {
                    basis[at + i * w + j] = if k == 0 {
                        1.0
                    } else {
                        let (ky, kx) = WAVEVECTORS[k - 1];
                        2f64.sqrt()
                            * (tau * (ky * i as f64 / h as f64 + kx * j as f64 / w as f64) + phase).sin()
                    };
                }
            }
        }
    }

    let mut shared = Ar1::new(v * MODES, &mut rng);
    let mut own = Ar1::new(v * l * MODES, &mut rng);
    let mut stack = vec![0.0; d * s * v * l * plane];
    let norm = 1.0 / (MODES as f64).sqrt();
    for step in 0..d * s {
        if step > 0 {
            shared.step(&mut rng);
            own.step(&mut rng);
        }
        for vi in 0..v {
            let kind = variable_kind(vi, v);
            for (li, &p) in spec.levels.hpa().iter().enumerate() {
                let vl = vi * l + li;
                let out = (step * v * l + vl) * plane;
                for cell in 0..plane {
                    let mut anomaly = 0.0;
                    for k in 0..MODES {
                        let amp = SHARED_WEIGHT * shared.state[vi * MODES + k]
                            + LEVEL_WEIGHT * own.state[vl * MODES + k];
                        anomaly += amp * basis[(vl * MODES + k) * plane + cell];
                    }
                    let noise: f64 = rng.sample(StandardNormal);
                    anomaly = anomaly * norm + CELL_NOISE_STD * noise;
                    stack[out + cell] = spec.precision.round(kind.offset(p) + kind.scale(p) * anomaly);
                }
            }
        }
    }
    let stack = Tensor::from_vec(&[d, s, v, l, h, w], stack)?;

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let targets = (0..d)
        .map(|day| {
            let z = mapping(&stack, day, &spec.levels, spec.coefficients);
            let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (softplus(z) + eps).max(0.0)
        })
        .collect();

    AtmosDataset::new(
        stack,
        targets,
        spec.start_date,
        variable_names(v),
        spec.levels.clone(),
        spec.precision,
    )
}

/// The deterministic part of the target, before softplus.
fn mapping(stack: &Tensor, day: usize, levels: &LevelSet, coef: Coefficients) -> f64 {
    let dims = stack.dims();
    let (v, l, h, w) = (dims[2], dims[3], dims[4], dims[5]);
    let (rows, cols) = central_mask(h, w);
    let cells = (rows.len() * cols.len()) as f64;
    let masked = |slot: usize, var: usize, level: usize| {
        let kind = variable_kind(var, v);
        let p = levels.hpa()[level];
        let base = (((day * SLOTS_PER_DAY + slot) * v + var) * l + level) * h * w;
        let mut sum = 0.0;
        for i in rows.clone() {
            for j in cols.clone() {
                sum += (stack.data()[base + i * w + j] - kind.offset(p)) / kind.scale(p);
            }
        }
        sum / cells
    };
    let (q, t) = (0, v - 1);
    let (l925, l500, l850) = (levels.nearest(925.0), levels.nearest(500.0), levels.nearest(850.0));
    let q15 = masked(2, q, l925);
    let q03 = masked(0, q, l925);
    let q500 = masked(2, q, l500);
    let t850 = masked(2, t, l850);
    coef.a * q15 + coef.b * (q15 - q500) * t850 + coef.c * (q15 - q03)
}
