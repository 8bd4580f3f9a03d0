use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Shape, Tensor};

/// Undoes [`pad_to_multiple`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRecord {
    pub bottom: usize,
    pub right: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRecord {
    pub fn is_empty(&self) -> bool {
        self.bottom == 0 && self.right == 0
    }

    pub fn apply<T: Scalar>(&self, t: &Tensor<T>) -> Result<Tensor<T>> {
        t.crop(self.height, self.width)
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let k = i % period;
    if k < n {
        k
    } else {
        period - k
    }
}

/// Reflection-pad bottom and right so both extents are multiples of `d`.
pub fn pad_to_multiple<T: Scalar>(t: &Tensor<T>, d: usize) -> Result<(Tensor<T>, CropRecord)> {
    if d == 0 {
        return Err(Error::InvalidConfig("padding multiple must be at least 1".into()));
    }
    let s = t.shape();
    let (h, w) = (s.h.div_ceil(d) * d, s.w.div_ceil(d) * d);
    let record = CropRecord {
        bottom: h - s.h,
        right: w - s.w,
        height: s.h,
        width: s.w,
    };
    if record.is_empty() {
        return Ok((t.clone(), record));
    }
    let out = Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, y, x| {
        t.get(n, c, reflect(y, s.h), reflect(x, s.w))
    })?;
    Ok((out, record))
}
