use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Contiguous, order-preserving train/validation/test step ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRanges {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Train,
    Val,
    Test,
}

impl Segment {
    pub fn name(self) -> &'static str {
        match self {
            Segment::Train => "train",
            Segment::Val => "val",
            Segment::Test => "test",
        }
    }
}

impl SplitRanges {
    pub fn get(&self, seg: Segment) -> Range<usize> {
        match seg {
            Segment::Train => self.train.clone(),
            Segment::Val => self.val.clone(),
            Segment::Test => self.test.clone(),
        }
    }
}

/// Split `t` steps by `ratios`. Every segment with a non-zero ratio must
/// hold at least one `window`-step sample.
pub fn split_ranges(t: usize, ratios: [f64; 3], window: usize) -> Result<SplitRanges> {
    let total: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let n_train = ((t as f64 * ratios[0]) + 1e-9).floor() as usize;
    let n_val = ((t as f64 * ratios[1]) + 1e-9).floor() as usize;
    let n_val = n_val.min(t - n_train);
    let n_test = t - n_train - n_val;
    let ranges = SplitRanges {
        train: 0..n_train,
        val: n_train..n_train + n_val,
        test: n_train + n_val..t,
    };
    for (seg, len, r) in [
        (Segment::Train, n_train, ratios[0]),
        (Segment::Val, n_val, ratios[1]),
        (Segment::Test, n_test, ratios[2]),
    ] {
        if r > 0.0 && len < window {
            return Err(Error::InsufficientData {
                segment: seg.name(),
                len,
                needed: window,
            });
        }
    }
    Ok(ranges)
}

/// Steps `range` of a tensor whose leading axis is time.
pub fn slice_time(x: &Tensor, range: Range<usize>) -> Result<Tensor> {
    let s = x.shape();
    if range.end > s[0] || range.start > range.end {
        return Err(Error::Argument(format!("time range {range:?} outside {} steps", s[0])));
    }
    let inner: usize = s[1..].iter().product();
    let mut shape = s.to_vec();
    shape[0] = range.len();
    Tensor::new(shape, x.data()[range.start * inner..range.end * inner].to_vec())
}

/// The three segments of a `T × N × 1` series.
pub fn chronological_split(series: &Tensor, ratios: [f64; 3], window: usize) -> Result<(Tensor, Tensor, Tensor)> {
    let r = split_ranges(series.shape()[0], ratios, window)?;
    Ok((
        slice_time(series, r.train)?,
        slice_time(series, r.val)?,
        slice_time(series, r.test)?,
    ))
}

/// Start offsets of every `t1`-in/`t2`-out window inside a segment of
/// `len` steps, taking every `stride`-th one.
pub fn window_starts(len: usize, t1: usize, t2: usize, stride: usize) -> Vec<usize> {
    if len < t1 + t2 {
        return Vec::new();
    }
    (0..=len - t1 - t2).step_by(stride.max(1)).collect()
}

/// Stack windows of `series` (`T × N × C`) starting at `offset + start`
/// for each start, each `len` steps long, into `[B, len, N, C]`.
pub fn gather_windows(series: &Tensor, offset: usize, starts: &[usize], len: usize) -> Tensor {
    let s = series.shape();
    let inner: usize = s[1..].iter().product();
    let mut data = Vec::with_capacity(starts.len() * len * inner);
    for &st in starts {
        let a = (offset + st) * inner;
        data.extend_from_slice(&series.data()[a..a + len * inner]);
    }
    let mut shape = vec![starts.len(), len];
    shape.extend_from_slice(&s[1..]);
    Tensor::new(shape, data).expect("window shape")
}
