//! Atmospheric dataset container, calendar splits, standardization and the
//! synthetic generator.

mod format;
mod split;
mod stats;
mod synthetic;

pub use format::{load_dataset, read_blob, save_dataset, write_blob, Manifest, FORMAT_VERSION};
pub use split::{DateRange, Period, SplitIndices, SplitSpec};
pub use stats::{standardize, ChannelStats, TargetStats};
pub use synthetic::{
    central_mask, generate_synthetic, softplus, variable_kind, Coefficients, SyntheticSpec,
    VariableKind, AR_COEFFICIENT, CELL_NOISE_STD,
};

use chrono::{Days, NaiveDate};

use crate::channelizer::LevelSet;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const SLOTS_PER_DAY: usize = 4;

/// Local-time labels of the four sub-daily slots.
pub const SLOT_LABELS: [&str; SLOTS_PER_DAY] = ["03:00", "09:00", "15:00", "21:00"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetDims {
    pub days: usize,
    pub slots: usize,
    pub variables: usize,
    pub levels: usize,
    pub height: usize,
    pub width: usize,
}

impl DatasetDims {
    pub fn as_array(&self) -> [usize; 6] {
        [
            self.days,
            self.slots,
            self.variables,
            self.levels,
            self.height,
            self.width,
        ]
    }
}

/// Gridded fields `[D, S, V, L, H, W]` on a contiguous daily calendar plus the
/// daily basin-average precipitation (mm/day).
///
/// Values are rounded to `precision` on construction, so what is held in
/// memory is exactly what gets written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct AtmosDataset {
    stack: Tensor,
    targets: Vec<f64>,
    start_date: NaiveDate,
    variables: Vec<String>,
    levels: LevelSet,
    precision: Precision,
}

impl AtmosDataset {
    pub fn new(
        mut stack: Tensor,
        mut targets: Vec<f64>,
        start_date: NaiveDate,
        variables: Vec<String>,
        levels: LevelSet,
        precision: Precision,
    ) -> Result<Self> {
        let &[d, s, v, l, _, _] = stack.dims() else {
            return Err(Error::InvalidShape(format!(
                "stack must be [D, S, V, L, H, W], got {:?}",
                stack.dims()
            )));
        };
        if s != SLOTS_PER_DAY {
            return Err(Error::Dataset(format!("expected {SLOTS_PER_DAY} slots per day, got {s}")));
        }
        if v != variables.len() || l != levels.len() || d != targets.len() {
            return Err(Error::Dataset(format!(
                "stack {:?} disagrees with {} variables, {} levels, {} targets",
                stack.dims(),
                variables.len(),
                levels.len(),
                targets.len()
            )));
        }
        if !stack.is_finite() {
            return Err(Error::Dataset("stack contains non-finite values".into()));
        }
        if let Some(bad) = targets.iter().find(|t| !t.is_finite() || **t < 0.0) {
            return Err(Error::Dataset(format!("target {bad} is not a non-negative number")));
        }
        if start_date.checked_add_days(Days::new(d as u64 - 1)).is_none() {
            return Err(Error::Dataset("calendar overflows the supported date range".into()));
        }
        stack.data_mut().iter_mut().for_each(|x| *x = precision.round(*x));
        targets.iter_mut().for_each(|x| *x = precision.round(*x));
        Ok(AtmosDataset {
            stack,
            targets,
            start_date,
            variables,
            levels,
            precision,
        })
    }

    pub fn dims(&self) -> DatasetDims {
        let d = self.stack.dims();
        DatasetDims {
            days: d[0],
            slots: d[1],
            variables: d[2],
            levels: d[3],
            height: d[4],
            width: d[5],
        }
    }

    pub fn stack(&self) -> &Tensor {
        &self.stack
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date_of(self.dims().days - 1)
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn levels(&self) -> &LevelSet {
        &self.levels
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.start_date + Days::new(day as u64)
    }

    /// Day index of `date`, if it lies on the calendar.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start_date).num_days();
        (0..self.dims().days as i64)
            .contains(&offset)
            .then_some(offset as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(days: usize) -> Result<AtmosDataset> {
        AtmosDataset::new(
            Tensor::zeros(&[days, 4, 1, 1, 2, 2])?,
            vec![1.0; days],
            NaiveDate::from_ymd_opt(2000, 2, 28).unwrap(),
            vec!["q".into()],
            LevelSet::new(vec![850.0])?,
            Precision::Double,
        )
    }

    #[test]
    fn calendar_crosses_leap_day() {
        let ds = tiny(3).unwrap();
        assert_eq!(ds.date_of(1), NaiveDate::from_ymd_opt(2000, 2, 29).unwrap());
        assert_eq!(ds.end_date(), NaiveDate::from_ymd_opt(2000, 3, 1).unwrap());
        assert_eq!(ds.index_of(ds.end_date()), Some(2));
        assert_eq!(ds.index_of(NaiveDate::from_ymd_opt(2000, 3, 2).unwrap()), None);
    }

    #[test]
    fn invariants_enforced() {
        let date = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let levels = LevelSet::new(vec![850.0]).unwrap();
        let stack = || Tensor::zeros(&[2, 4, 1, 1, 2, 2]).unwrap();
        let make = |stack, targets, vars: Vec<&str>| {
            AtmosDataset::new(
                stack,
                targets,
                date,
                vars.into_iter().map(String::from).collect(),
                levels.clone(),
                Precision::Double,
            )
        };
        assert!(make(stack(), vec![1.0, -0.1], vec!["q"]).is_err());
        assert!(make(stack(), vec![1.0], vec!["q"]).is_err());
        assert!(make(stack(), vec![1.0, 2.0], vec!["q", "t"]).is_err());
        assert!(make(Tensor::zeros(&[2, 3, 1, 1, 2, 2]).unwrap(), vec![1.0, 2.0], vec!["q"]).is_err());
        assert!(make(stack(), vec![1.0, 2.0], vec!["q"]).is_ok());
    }

    #[test]
    fn single_precision_rounds_on_construction() {
        let mut stack = Tensor::zeros(&[1, 4, 1, 1, 1, 1]).unwrap();
        stack.data_mut()[0] = 0.1;
        let ds = AtmosDataset::new(
            stack,
            vec![0.1],
            NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
            vec!["q".into()],
            LevelSet::new(vec![850.0]).unwrap(),
            Precision::Single,
        )
        .unwrap();
        assert_eq!(ds.stack().data()[0], 0.1f32 as f64);
        assert_eq!(ds.targets()[0], 0.1f32 as f64);
    }
}
