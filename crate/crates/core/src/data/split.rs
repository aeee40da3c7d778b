use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SeriesFrame;
use crate::error::{Error, Result};

/// Chronological train/validation/test partition of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    Fractions {
        train: f64,
        val: f64,
        test: f64,
    },
    Ranges {
        train: [usize; 2],
        val: [usize; 2],
        test: [usize; 2],
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Row ranges for each partition. Fractions are rounded to whole steps for
/// train and validation; test takes the remainder.
pub fn split_ranges(steps: usize, spec: &SplitSpec) -> Result<SplitRanges> {
    let ranges = match spec {
        SplitSpec::Fractions { train, val, test } => {
            for (name, f) in [("split.train", train), ("split.val", val), ("split.test", test)] {
                if !(0.0..=1.0).contains(f) {
                    return Err(Error::config(name, format!("fraction {f} outside [0, 1]")));
                }
            }
            if (train + val + test - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "split",
                    format!("fractions sum to {}, expected 1", train + val + test),
                ));
            }
            let n_train = (steps as f64 * train).round() as usize;
            let n_val = ((steps as f64 * val).round() as usize).min(steps - n_train.min(steps));
            let n_train = n_train.min(steps);
            SplitRanges {
                train: 0..n_train,
                val: n_train..n_train + n_val,
                test: n_train + n_val..steps,
            }
        }
        SplitSpec::Ranges { train, val, test } => {
            let r = |a: &[usize; 2]| a[0]..a[1];
            let out = SplitRanges {
                train: r(train),
                val: r(val),
                test: r(test),
            };
            if out.train.end > out.val.start || out.val.end > out.test.start || out.test.end > steps {
                return Err(Error::config(
                    "split",
                    format!(
                        "ranges {:?}, {:?}, {:?} must be ordered, disjoint, and within {steps} steps",
                        out.train, out.val, out.test
                    ),
                ));
            }
            out
        }
    };
    for (name, r) in [
        ("split.train", &ranges.train),
        ("split.val", &ranges.val),
        ("split.test", &ranges.test),
    ] {
        if r.is_empty() {
            return Err(Error::config(
                name,
                format!("partition is empty for a series of {steps} steps"),
            ));
        }
    }
    Ok(ranges)
}

/// Cuts the frame into its three partitions.
pub fn split(frame: &SeriesFrame, spec: &SplitSpec) -> Result<(SeriesFrame, SeriesFrame, SeriesFrame)> {
    let r = split_ranges(frame.steps(), spec)?;
    Ok((
        frame.rows(r.train.start, r.train.end)?,
        frame.rows(r.val.start, r.val.end)?,
        frame.rows(r.test.start, r.test.end)?,
    ))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn seven_two_one() {
        let r = split_ranges(100, &SplitSpec::default()).unwrap();
        assert_eq!((r.train, r.val, r.test), (0..70, 70..90, 90..100));
    }

    #[test]
    fn invalid_fractions() {
        let bad = SplitSpec::Fractions {
            train: 0.7,
            val: 0.2,
            test: 0.2,
        };
        assert!(matches!(split_ranges(100, &bad), Err(Error::Config { .. })));
        let empty = SplitSpec::Fractions {
            train: 1.0,
            val: 0.0,
            test: 0.0,
        };
        assert!(split_ranges(100, &empty).is_err());
    }

    #[test]
    fn explicit_ranges() {
        let spec = SplitSpec::Ranges {
            train: [0, 50],
            val: [50, 60],
            test: [60, 80],
        };
        let r = split_ranges(80, &spec).unwrap();
        assert_eq!(r.test, 60..80);
        let overlapping = SplitSpec::Ranges {
            train: [0, 55],
            val: [50, 60],
            test: [60, 80],
        };
        assert!(split_ranges(80, &overlapping).is_err());
    }

    proptest! {
        #[test]
        fn partitions_are_ordered_and_disjoint(steps in 10usize..5000, a in 0.1f64..0.8) {
            let rest = 1.0 - a;
            let spec = SplitSpec::Fractions { train: a, val: rest / 2.0, test: rest / 2.0 };
            if let Ok(r) = split_ranges(steps, &spec) {
                prop_assert_eq!(r.train.start, 0);
                prop_assert_eq!(r.train.end, r.val.start);
                prop_assert_eq!(r.val.end, r.test.start);
                prop_assert_eq!(r.test.end, steps);
            }
        }
    }
}
