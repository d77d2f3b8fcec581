//! Arranges (variable, level, time) atmospheric samples into the input layout
//! of each network variant.
//!
//! A raw sample is `[V, L, T, H, W]`. The layouts are:
//!
//! | variant   | output              | channel index       | depth axis |
//! |-----------|---------------------|---------------------|------------|
//! | `2d`      | `[V·L·T, H, W]`     | `(v·L + l)·T + t`   | none       |
//! | `3d-time` | `[V·L, T, H, W]`    | `v·L + l`           | time       |
//! | `3d-vert` | `[V·T, L, H, W]`    | `v·T + t`           | level      |

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataio::{AtmosDataset, SLOTS_PER_DAY};
use crate::error::{Error, Result};
use crate::network::Variant;
use crate::tensor::Tensor;

/// Sub-daily slot indices: 0 = 03:00, 1 = 09:00, 2 = 15:00, 3 = 21:00 local time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeSteps {
    /// 03:00 and 15:00.
    #[serde(rename = "ts2")]
    Ts2,
    /// All four slots of the day.
    #[serde(rename = "ts4")]
    Ts4,
    /// 21:00 of the previous day, the four slots, and 03:00 of the next day.
    #[serde(rename = "ts6")]
    Ts6,
}

impl TimeSteps {
    /// `(day offset, slot)` pairs in chronological order.
    pub fn offsets(self) -> &'static [(i64, usize)] {
        match self {
            TimeSteps::Ts2 => &[(0, 0), (0, 2)],
            TimeSteps::Ts4 => &[(0, 0), (0, 1), (0, 2), (0, 3)],
            TimeSteps::Ts6 => &[(-1, 3), (0, 0), (0, 1), (0, 2), (0, 3), (1, 0)],
        }
    }

    pub fn count(self) -> usize {
        self.offsets().len()
    }

    fn reach(self) -> (usize, usize) {
        match self {
            TimeSteps::Ts6 => (1, 1),
            _ => (0, 0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TimeSteps::Ts2 => "ts2",
            TimeSteps::Ts4 => "ts4",
            TimeSteps::Ts6 => "ts6",
        }
    }
}

impl fmt::Display for TimeSteps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TimeSteps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ts2" => Ok(TimeSteps::Ts2),
            "ts4" => Ok(TimeSteps::Ts4),
            "ts6" => Ok(TimeSteps::Ts6),
            other => Err(Error::invalid(format!(
                "unknown time-step selector `{other}` (expected ts2, ts4 or ts6)"
            ))),
        }
    }
}

/// Pressure levels in hPa, strictly increasing (top of the atmosphere first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct LevelSet(Vec<f64>);

impl LevelSet {
    pub fn new(hpa: Vec<f64>) -> Result<Self> {
        if hpa.is_empty() {
            return Err(Error::invalid("level set must not be empty"));
        }
        if hpa.iter().any(|p| !p.is_finite() || *p <= 0.0) {
            return Err(Error::invalid(format!("invalid pressure level in {hpa:?}")));
        }
        if hpa.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "pressure levels must be strictly increasing: {hpa:?}"
            )));
        }
        Ok(LevelSet(hpa))
    }

    /// 500, 700, 850, 925, 1000 hPa.
    pub fn v1() -> Self {
        LevelSet(vec![500.0, 700.0, 850.0, 925.0, 1000.0])
    }

    /// [`LevelSet::v1`] plus 300 hPa.
    pub fn v2() -> Self {
        LevelSet(vec![300.0, 500.0, 700.0, 850.0, 925.0, 1000.0])
    }

    /// Twelve levels from 200 to 1000 hPa.
    pub fn v3() -> Self {
        LevelSet(vec![
            200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 750.0, 800.0, 850.0, 900.0, 950.0, 1000.0,
        ])
    }

    pub fn hpa(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the level closest to `hpa` (the lower index on ties).
    pub fn nearest(&self, hpa: f64) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if (p - hpa).abs() < (self.0[best] - hpa).abs() {
                best = i;
            }
        }
        best
    }

    /// Positions of `subset`'s levels inside `self`.
    pub fn indices_of(&self, subset: &LevelSet) -> Result<Vec<usize>> {
        subset
            .0
            .iter()
            .map(|p| {
                self.0.iter().position(|q| q == p).ok_or_else(|| {
                    Error::Dataset(format!("level {p} hPa is not present in {:?}", self.0))
                })
            })
            .collect()
    }
}

impl TryFrom<Vec<f64>> for LevelSet {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        LevelSet::new(v)
    }
}

impl From<LevelSet> for Vec<f64> {
    fn from(l: LevelSet) -> Self {
        l.0
    }
}

impl FromStr for LevelSet {
    type Err = Error;

    /// `v1`, `v2`, `v3`, or a comma-separated list of hPa values.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v1" => Ok(LevelSet::v1()),
            "v2" => Ok(LevelSet::v2()),
            "v3" => Ok(LevelSet::v3()),
            list => {
                let hpa = list
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::invalid(format!("bad pressure level `{p}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                LevelSet::new(hpa)
            }
        }
    }
}

/// One sample: a day plus the sub-daily slots it draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleWindow {
    pub day: usize,
    pub time_steps: TimeSteps,
}

impl SampleWindow {
    /// `(day, slot)` pairs this window reads, chronologically.
    pub fn slots(&self) -> Vec<(usize, usize)> {
        self.time_steps
            .offsets()
            .iter()
            .map(|&(off, slot)| ((self.day as i64 + off) as usize, slot))
            .collect()
    }
}

/// Input channels seen by the first layer.
pub fn num_channels(variant: Variant, variables: usize, levels: usize, time_steps: usize) -> usize {
    match variant {
        Variant::Cnn2d => variables * levels * time_steps,
        Variant::Cnn3dTime => variables * levels,
        Variant::Cnn3dVert => variables * time_steps,
    }
}

/// Per-sample input shape for a variant, without the batch axis.
pub fn input_shape(
    variant: Variant,
    variables: usize,
    levels: usize,
    time_steps: usize,
    height: usize,
    width: usize,
) -> Vec<usize> {
    let channels = num_channels(variant, variables, levels, time_steps);
    match variant {
        Variant::Cnn2d => vec![channels, height, width],
        Variant::Cnn3dTime => vec![channels, time_steps, height, width],
        Variant::Cnn3dVert => vec![channels, levels, height, width],
    }
}

/// Rearranges a `[V, L, T, H, W]` sample into the layout of `variant`.
pub fn channelize(sample: &Tensor, variant: Variant) -> Result<Tensor> {
    let &[v, l, t, h, w] = sample.dims() else {
        return Err(Error::InvalidShape(format!(
            "raw sample must be [V, L, T, H, W], got {:?}",
            sample.dims()
        )));
    };
    let out_dims = input_shape(variant, v, l, t, h, w);
    let plane = h * w;
    let src = sample.data();
    let mut out = vec![0.0; src.len()];
    for vi in 0..v {
        for li in 0..l {
            for ti in 0..t {
                let from = ((vi * l + li) * t + ti) * plane;
                let to = match variant {
                    Variant::Cnn2d => ((vi * l + li) * t + ti) * plane,
                    Variant::Cnn3dTime => ((vi * l + li) * t + ti) * plane,
                    Variant::Cnn3dVert => ((vi * t + ti) * l + li) * plane,
                };
                out[to..to + plane].copy_from_slice(&src[from..from + plane]);
            }
        }
    }
    Tensor::from_vec(&out_dims, out)
}

/// Windows for every eligible day inside `days`. Windows that need a
/// neighbouring day (ts6) never reach outside the range.
pub fn make_windows_in(days: Range<usize>, time_steps: TimeSteps) -> Result<Vec<SampleWindow>> {
    let (before, after) = time_steps.reach();
    let first = days.start + before;
    let end = days.end.saturating_sub(after);
    let windows: Vec<SampleWindow> = (first..end.max(first))
        .map(|day| SampleWindow { day, time_steps })
        .collect();
    if windows.is_empty() {
        return Err(Error::Dataset(format!(
            "no day in {days:?} has the neighbours {time_steps} requires"
        )));
    }
    Ok(windows)
}

pub fn make_windows(dataset: &AtmosDataset, time_steps: TimeSteps) -> Result<Vec<SampleWindow>> {
    make_windows_in(0..dataset.dims().days, time_steps)
}

/// Channel layout of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub variant: Variant,
    pub time_steps: TimeSteps,
    pub variables: usize,
    pub levels: LevelSet,
    pub height: usize,
    pub width: usize,
}

impl Layout {
    pub fn channels(&self) -> usize {
        num_channels(
            self.variant,
            self.variables,
            self.levels.len(),
            self.time_steps.count(),
        )
    }

    pub fn input_shape(&self) -> Vec<usize> {
        input_shape(
            self.variant,
            self.variables,
            self.levels.len(),
            self.time_steps.count(),
            self.height,
            self.width,
        )
    }
}

/// Channelized inputs `[N, ...]` with their targets in mm/day.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
    pub days: Vec<usize>,
    pub layout: Layout,
}

/// Reads the `[V, L, T, H, W]` sample of `window` from a `[D, S, V, L, H, W]`
/// stack, keeping only the levels at `level_idx`.
pub fn gather_sample(stack: &Tensor, window: &SampleWindow, level_idx: &[usize]) -> Result<Tensor> {
    let &[d, s, v, l, h, w] = stack.dims() else {
        return Err(Error::InvalidShape(format!(
            "stack must be [D, S, V, L, H, W], got {:?}",
            stack.dims()
        )));
    };
    if s != SLOTS_PER_DAY {
        return Err(Error::Dataset(format!("expected {SLOTS_PER_DAY} slots per day, got {s}")));
    }
    if level_idx.is_empty() || level_idx.iter().any(|&i| i >= l) {
        return Err(Error::invalid(format!("level indices {level_idx:?} out of range for {l} levels")));
    }
    let slots = window.slots();
    if slots.iter().any(|&(day, _)| day >= d) || window.day < window.time_steps.reach().0 {
        return Err(Error::Dataset(format!(
            "window on day {} reaches outside the {d}-day record",
            window.day
        )));
    }
    let plane = h * w;
    let (t, nl) = (slots.len(), level_idx.len());
    let src = stack.data();
    let mut out = vec![0.0; v * nl * t * plane];
    for vi in 0..v {
        for (li, &level) in level_idx.iter().enumerate() {
            for (ti, &(day, slot)) in slots.iter().enumerate() {
                let from = ((((day * s + slot) * v + vi) * l) + level) * plane;
                let to = ((vi * nl + li) * t + ti) * plane;
                out[to..to + plane].copy_from_slice(&src[from..from + plane]);
            }
        }
    }
    Tensor::from_vec(&[v, nl, t, h, w], out)
}

/// Builds a batch for `windows` from a (typically standardized) stack.
pub fn assemble_batch(
    stack: &Tensor,
    targets: &[f64],
    windows: &[SampleWindow],
    layout: &Layout,
    level_idx: &[usize],
) -> Result<InputBatch> {
    if windows.is_empty() {
        return Err(Error::Dataset("cannot assemble an empty batch".into()));
    }
    let sample_shape = layout.input_shape();
    let mut inputs = Vec::with_capacity(windows.len() * sample_shape.iter().product::<usize>());
    let mut ys = Vec::with_capacity(windows.len());
    for window in windows {
        let raw = gather_sample(stack, window, level_idx)?;
        let x = channelize(&raw, layout.variant)?;
        if x.dims() != sample_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: sample_shape.clone(),
                actual: x.dims().to_vec(),
            });
        }
        inputs.extend_from_slice(x.data());
        ys.push(*targets.get(window.day).ok_or_else(|| {
            Error::Dataset(format!("no target for day {}", window.day))
        })?);
    }
    let mut dims = vec![windows.len()];
    dims.extend(&sample_shape);
    Ok(InputBatch {
        inputs: Tensor::from_vec(&dims, inputs)?,
        targets: Tensor::from_vec(&[windows.len()], ys)?,
        days: windows.iter().map(|w| w.day).collect(),
        layout: layout.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(v: usize, l: usize, t: usize, h: usize, w: usize) -> Tensor {
        let n = v * l * t * h * w;
        Tensor::from_vec(&[v, l, t, h, w], (0..n).map(|i| i as f64 * 1.5 - 7.0).collect()).unwrap()
    }

    #[test]
    fn paper_channel_counts() {
        assert_eq!(num_channels(Variant::Cnn2d, 4, 5, 6), 120);
        assert_eq!(num_channels(Variant::Cnn3dVert, 4, 12, 6), 24);
        assert_eq!(num_channels(Variant::Cnn3dTime, 4, 5, 2), 20);
        for variant in Variant::ALL {
            assert_eq!(num_channels(variant, 1, 1, 1), 1);
        }
    }

    #[test]
    fn single_channel_time_layout_is_verbatim() {
        let s = sample(1, 1, 4, 3, 3);
        let x = channelize(&s, Variant::Cnn3dTime).unwrap();
        assert_eq!(x.dims(), &[1, 4, 3, 3]);
        assert_eq!(x.data(), s.data());
    }

    /// Independent decoder: which raw index feeds output position (c, d, i, j)?
    fn decode(variant: Variant, dims: [usize; 5], c: usize, d: usize) -> (usize, usize, usize) {
        let [_, l, t, _, _] = dims;
        match variant {
            Variant::Cnn2d => (c / (l * t), (c / t) % l, c % t),
            Variant::Cnn3dTime => (c / l, c % l, d),
            Variant::Cnn3dVert => (c / t, d, c % t),
        }
    }

    #[test]
    fn brute_force_index_check() {
        let dims = [2, 2, 2, 3, 3];
        let s = sample(2, 2, 2, 3, 3);
        for variant in Variant::ALL {
            let x = channelize(&s, variant).unwrap();
            let depth = if variant == Variant::Cnn2d { 1 } else { x.dims()[1] };
            for c in 0..x.dims()[0] {
                for d in 0..depth {
                    for i in 0..3 {
                        for j in 0..3 {
                            let (v, l, t) = decode(variant, dims, c, d);
                            let out = if variant == Variant::Cnn2d {
                                x.get(&[c, i, j]).unwrap()
                            } else {
                                x.get(&[c, d, i, j]).unwrap()
                            };
                            assert_eq!(out, s.get(&[v, l, t, i, j]).unwrap(), "{variant} c={c} d={d}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn channelize_rejects_wrong_rank() {
        assert!(channelize(&Tensor::zeros(&[2, 3, 3]).unwrap(), Variant::Cnn2d).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows_in(0..10, TimeSteps::Ts2).unwrap().len(), 10);
        let ts6 = make_windows_in(0..10, TimeSteps::Ts6).unwrap();
        assert_eq!(ts6.len(), 8);
        assert_eq!(ts6.first().unwrap().day, 1);
        assert_eq!(ts6.last().unwrap().day, 8);
        assert!(make_windows_in(0..1, TimeSteps::Ts6).is_err());
        assert!(make_windows_in(0..2, TimeSteps::Ts6).is_err());
        assert_eq!(make_windows_in(5..8, TimeSteps::Ts6).unwrap().len(), 1);
    }

    #[test]
    fn ts6_slots_are_chronological() {
        let w = SampleWindow {
            day: 3,
            time_steps: TimeSteps::Ts6,
        };
        assert_eq!(w.slots(), vec![(2, 3), (3, 0), (3, 1), (3, 2), (3, 3), (4, 0)]);
    }

    #[test]
    fn level_sets() {
        assert_eq!(LevelSet::v1().len(), 5);
        assert_eq!(LevelSet::v2().len(), 6);
        assert_eq!(LevelSet::v3().len(), 12);
        assert!(LevelSet::new(vec![]).is_err());
        assert!(LevelSet::new(vec![850.0, 500.0]).is_err());
        assert_eq!("v2".parse::<LevelSet>().unwrap(), LevelSet::v2());
        assert_eq!(
            "500, 850".parse::<LevelSet>().unwrap().hpa(),
            &[500.0, 850.0]
        );
        assert_eq!(LevelSet::v3().nearest(925.0), 9);
        assert_eq!(LevelSet::v3().indices_of(&LevelSet::v1()).is_err(), true);
        assert_eq!(
            LevelSet::v2().indices_of(&LevelSet::v1()).unwrap(),
            vec![1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn gather_reads_the_right_slots() {
        // stack value encodes (day, slot, var, level) in the plane's first cell
        let (d, s, v, l, h, w) = (4, 4, 2, 3, 2, 2);
        let mut data = vec![0.0; d * s * v * l * h * w];
        for di in 0..d {
            for si in 0..s {
                for vi in 0..v {
                    for li in 0..l {
                        let at = ((((di * s + si) * v + vi) * l) + li) * h * w;
                        data[at] = (1000 * di + 100 * si + 10 * vi + li) as f64;
                    }
                }
            }
        }
        let stack = Tensor::from_vec(&[d, s, v, l, h, w], data).unwrap();
        let win = SampleWindow {
            day: 1,
            time_steps: TimeSteps::Ts6,
        };
        let x = gather_sample(&stack, &win, &[0, 2]).unwrap();
        assert_eq!(x.dims(), &[2, 2, 6, 2, 2]);
        assert_eq!(x.get(&[1, 1, 0, 0, 0]).unwrap(), 312.0);
        assert_eq!(x.get(&[0, 0, 5, 0, 0]).unwrap(), 2000.0);
        let edge = SampleWindow {
            day: 0,
            time_steps: TimeSteps::Ts6,
        };
        assert!(gather_sample(&stack, &edge, &[0]).is_err());
    }

    proptest! {
        #[test]
        fn channelize_is_a_bijection(v in 1usize..4, l in 1usize..4, t in 1usize..4, h in 1usize..4, w in 1usize..4) {
            let s = sample(v, l, t, h, w);
            let mut raw: Vec<f64> = s.data().to_vec();
            raw.sort_by(f64::total_cmp);
            for variant in Variant::ALL {
                let x = channelize(&s, variant).unwrap();
                prop_assert_eq!(x.dims()[0], num_channels(variant, v, l, t));
                let mut got = x.data().to_vec();
                got.sort_by(f64::total_cmp);
                prop_assert_eq!(&got, &raw);
                prop_assert_eq!(x.sum(), s.sum());
            }
        }
    }
}
