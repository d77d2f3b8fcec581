use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::AtmosDataset;
use crate::error::{Error, Result};

/// Inclusive calendar range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if start > end {
            return Err(Error::invalid(format!("date range {start}..{end} is reversed")));
        }
        Ok(DateRange { start, end })
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }
}

impl fmt::Display for DateRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl FromStr for DateRange {
    type Err = Error;

    /// `YYYY-MM-DD:YYYY-MM-DD`
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| Error::invalid(format!("date range `{s}` is not START:END")))?;
        let parse = |t: &str| {
            NaiveDate::parse_from_str(t.trim(), "%Y-%m-%d")
                .map_err(|e| Error::invalid(format!("bad date `{t}`: {e}")))
        };
        DateRange::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Train,
    Validation,
    Test,
}

impl Period {
    pub const ALL: [Period; 3] = [Period::Train, Period::Validation, Period::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Period::Train => "train",
            Period::Validation => "validation",
            Period::Test => "test",
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Period {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Period::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown period `{s}` (expected train, validation or test)")))
    }
}

/// Train, validation and test date ranges: ordered, disjoint and contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: DateRange,
    pub validation: DateRange,
    pub test: DateRange,
}

impl Default for SplitSpec {
    /// 1980–2005 / 2006–2010 / 2011–2015.
    fn default() -> Self {
        let ymd = |y, m, d| NaiveDate::from_ymd_opt(y, m, d).unwrap();
        SplitSpec {
            train: DateRange { start: ymd(1980, 1, 1), end: ymd(2005, 12, 31) },
            validation: DateRange { start: ymd(2006, 1, 1), end: ymd(2010, 12, 31) },
            test: DateRange { start: ymd(2011, 1, 1), end: ymd(2015, 12, 31) },
        }
    }
}

/// Day-index ranges into a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitIndices {
    pub fn period(&self, period: Period) -> Range<usize> {
        match period {
            Period::Train => self.train.clone(),
            Period::Validation => self.validation.clone(),
            Period::Test => self.test.clone(),
        }
    }
}

impl SplitSpec {
    pub fn new(train: DateRange, validation: DateRange, test: DateRange) -> Result<Self> {
        let spec = SplitSpec { train, validation, test };
        spec.validate()?;
        Ok(spec)
    }

    /// Splits `days` consecutive days starting at `start` by fractions of the
    /// record; the test period takes the remainder.
    pub fn by_fraction(start: NaiveDate, days: usize, train: f64, validation: f64) -> Result<Self> {
        let n_train = (days as f64 * train).round() as u64;
        let n_val = (days as f64 * validation).round() as u64;
        if n_train == 0 || n_val == 0 || n_train + n_val >= days as u64 {
            return Err(Error::invalid(format!(
                "fractions {train}/{validation} leave an empty period in {days} days"
            )));
        }
        let day = |i: u64| start + Days::new(i);
        SplitSpec::new(
            DateRange::new(day(0), day(n_train - 1))?,
            DateRange::new(day(n_train), day(n_train + n_val - 1))?,
            DateRange::new(day(n_train + n_val), day(days as u64 - 1))?,
        )
    }

    pub fn range(&self, period: Period) -> DateRange {
        match period {
            Period::Train => self.train,
            Period::Validation => self.validation,
            Period::Test => self.test,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for p in Period::ALL {
            let r = self.range(p);
            if r.start > r.end {
                return Err(Error::invalid(format!("{p} range {r} is reversed")));
            }
        }
        for (a, b) in [(Period::Train, Period::Validation), (Period::Validation, Period::Test)] {
            let (ra, rb) = (self.range(a), self.range(b));
            if rb.start <= ra.end {
                return Err(Error::invalid(format!(
                    "{a} range {ra} overlaps or follows {b} range {rb}"
                )));
            }
            if ra.end.succ_opt() != Some(rb.start) {
                return Err(Error::invalid(format!(
                    "gap between {a} range {ra} and {b} range {rb}"
                )));
            }
        }
        Ok(())
    }

    /// Day indices of each period; the dataset calendar must cover all of them.
    pub fn indices(&self, dataset: &AtmosDataset) -> Result<SplitIndices> {
        self.validate()?;
        let locate = |p: Period| -> Result<Range<usize>> {
            let r = self.range(p);
            match (dataset.index_of(r.start), dataset.index_of(r.end)) {
                (Some(a), Some(b)) => Ok(a..b + 1),
                _ => Err(Error::Dataset(format!(
                    "{p} range {r} is not covered by the dataset calendar {}..{}",
                    dataset.start_date(),
                    dataset.end_date()
                ))),
            }
        };
        Ok(SplitIndices {
            train: locate(Period::Train)?,
            validation: locate(Period::Validation)?,
            test: locate(Period::Test)?,
        })
    }
}
