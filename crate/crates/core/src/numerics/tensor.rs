use std::fmt::Debug;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage precision of a [`Tensor`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// 32-bit floats, used for training runs.
    Standard,
    /// 64-bit floats, used for oracles and gradient checks.
    High,
}

impl Precision {
    pub fn tag(self) -> u32 {
        match self {
            Precision::Standard => 0,
            Precision::High => 1,
        }
    }

    pub fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(Precision::Standard),
            1 => Some(Precision::High),
            _ => None,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "standard" | "f32" => Ok(Precision::Standard),
            "high" | "f64" => Ok(Precision::High),
            other => Err(format!("unknown precision `{other}` (expected standard|high)")),
        }
    }
}

/// Element type of a tensor: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Default + Debug + Send + Sync + 'static
{
    const PRECISION: Precision;
    const BYTES: usize;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const PRECISION: Precision = Precision::Standard;
    const BYTES: usize = 4;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const PRECISION: Precision = Precision::High;
    const BYTES: usize = 8;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Extents of an NCHW tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense row-major NCHW array.
///
/// Every constructor and every public operation verifies that all elements
/// are finite; a NaN or infinity is reported as [`Error::NonFinite`].
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T: Scalar = f64> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape(format!("all extents must be positive, got {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Tensor { shape, data }.finite("Tensor::new")
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    /// Uniform samples in `[lo, hi)`.
    pub fn random_uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| T::of(rng.random_range(lo..hi))).collect();
        Tensor { shape, data }
    }

    pub(crate) fn from_raw(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn finite(self, op: &'static str) -> Result<Self> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[self.offset(n, c, y, x)]
    }

    /// Contiguous `h * w` slice of one channel plane.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::shape(format!("cannot reshape {} into {shape}", self.shape)));
        }
        Ok(Tensor { shape, data: self.data })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
        .finite("map")
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.same_shape(other, "zip_map")?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor {
            shape: self.shape,
            data,
        }
        .finite("zip_map")
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Result<Self> {
        self.map(|v| v * s)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, other: &Self, s: T) -> Result<Self> {
        self.zip_map(other, |a, b| a + s * b)
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.same_shape(other, "dot")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub(crate) fn same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("{op}: {} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// One batch item as an `(1, c, h, w)` tensor.
    pub fn batch_item(&self, i: usize) -> Result<Self> {
        if i >= self.shape.n {
            return Err(Error::shape(format!("batch index {i} out of range for {}", self.shape)));
        }
        let per = self.shape.c * self.shape.plane();
        let shape = Shape { n: 1, ..self.shape };
        Ok(Tensor {
            shape,
            data: self.data[i * per..(i + 1) * per].to_vec(),
        })
    }

    /// Concatenate along the batch axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("stack of zero tensors"))?;
        let s = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.len()).sum());
        let mut n = 0;
        for t in items {
            if (t.shape.c, t.shape.h, t.shape.w) != (s.c, s.h, s.w) {
                return Err(Error::shape(format!("stack: {} vs {}", s, t.shape)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape.n;
        }
        Ok(Tensor {
            shape: Shape { n, ..s },
            data,
        })
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let s = first.shape;
        for t in items {
            if (t.shape.n, t.shape.h, t.shape.w) != (s.n, s.h, s.w) {
                return Err(Error::shape(format!("concat_channels: {} vs {}", s, t.shape)));
            }
        }
        let c: usize = items.iter().map(|t| t.shape.c).sum();
        let mut data = Vec::with_capacity(s.n * c * s.plane());
        for n in 0..s.n {
            for t in items {
                let per = t.shape.c * t.shape.plane();
                data.extend_from_slice(&t.data[n * per..(n + 1) * per]);
            }
        }
        Ok(Tensor {
            shape: Shape { c, ..s },
            data,
        })
    }

    /// Top-left `h x w` window.
    pub fn crop(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h == 0 || w == 0 || h > s.h || w > s.w {
            return Err(Error::shape(format!("crop to {h}x{w} from {s}")));
        }
        let mut data = Vec::with_capacity(s.n * s.c * h * w);
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let row = self.offset(n, c, y, 0);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Ok(Tensor {
            shape: Shape { h, w, ..s },
            data,
        })
    }

    /// Embed into a zero tensor of spatial size `h x w` at the top-left corner.
    pub fn zero_extend(&self, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if h < s.h || w < s.w {
            return Err(Error::shape(format!("zero_extend to {h}x{w} from {s}")));
        }
        let mut out = Tensor::zeros(Shape { h, w, ..s });
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..s.h {
                    let src = self.offset(n, c, y, 0);
                    let dst = out.offset(n, c, y, 0);
                    out.data[dst..dst + s.w].copy_from_slice(&self.data[src..src + s.w]);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        let s = Shape::new(1, 1, 2, 2);
        assert!(matches!(Tensor::<f64>::new(s, vec![0.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(
            Tensor::<f64>::new(s, vec![0.0, 1.0, f64::NAN, 2.0]),
            Err(Error::NonFinite { .. })
        ));
        let big = Tensor::<f32>::full(s, f32::MAX);
        assert!(big.add(&big).is_err());
    }

    #[test]
    fn concat_and_crop() {
        let a = Tensor::<f64>::full(Shape::new(2, 1, 2, 3), 1.0);
        let b = Tensor::<f64>::full(Shape::new(2, 2, 2, 3), 2.0);
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), Shape::new(2, 3, 2, 3));
        assert_eq!(c.get(1, 0, 1, 2), 1.0);
        assert_eq!(c.get(1, 2, 0, 0), 2.0);
        let cropped = c.crop(1, 2).unwrap();
        assert_eq!(cropped.shape(), Shape::new(2, 3, 1, 2));
        let back = cropped.zero_extend(2, 3).unwrap();
        assert_eq!(back.get(0, 0, 1, 2), 0.0);
        assert_eq!(back.get(0, 1, 0, 1), 2.0);
    }
}
