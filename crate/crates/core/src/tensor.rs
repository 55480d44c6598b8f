//! Dense row-major tensors over `f32` (training) or `f64` (gradient checks).

use crate::error::{Error, Result};

/// Element dtype tag used by the checkpoint format.
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 1,
            Dtype::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Real scalar backing a tensor. Only `f32` and `f64` implement this.
pub trait Scalar:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        f64::from(self)
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4-byte f32"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8-byte f64"))
    }
}

/// Dense row-major array. Rank 0 holds a single scalar, rank 2 is the
/// workhorse `[rows, cols]` layout used by the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {expect} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![E::ZERO; len] }
    }

    pub fn full(shape: &[usize], value: E) -> Self {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; len] }
    }

    pub fn scalar(value: E) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> E) -> Self {
        let len: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..len).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// The single element of a rank-0 tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// (rows, cols) of a rank-2 tensor; rank-1 is treated as a single row.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.len() {
            2 => Ok((self.shape[0], self.shape[1])),
            1 => Ok((1, self.shape[0])),
            _ => Err(Error::ShapeMismatch(format!(
                "expected rank <= 2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn row(&self, r: usize) -> &[E] {
        let (_, cols) = self.dims2().expect("row() on rank <= 2 tensor");
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(E, E) -> E) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "elementwise op on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    /// `self += other * scale`, shapes must match.
    pub fn add_scaled(&mut self, other: &Self, scale: E) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "add_scaled on {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b * scale;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: E) {
        self.data.fill(value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product `[n,k] x [k,m] -> [n,m]`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let (n, k) = self.dims2()?;
        let (k2, m) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul {:?} x {:?}: inner dims {k} vs {k2}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![E::ZERO; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            // Two k-steps per pass keeps a pair of independent accumulator
            // streams in flight and lets the row update vectorize.
            let mut kk = 0;
            while kk + 1 < k {
                let a0 = a_row[kk];
                let a1 = a_row[kk + 1];
                let b0 = &rhs.data[kk * m..(kk + 1) * m];
                let b1 = &rhs.data[(kk + 1) * m..(kk + 2) * m];
                for ((o, &x0), &x1) in o_row.iter_mut().zip(b0).zip(b1) {
                    *o += a0 * x0 + a1 * x1;
                }
                kk += 2;
            }
            if kk < k {
                let a0 = a_row[kk];
                let b0 = &rhs.data[kk * m..(kk + 1) * m];
                for (o, &x0) in o_row.iter_mut().zip(b0) {
                    *o += a0 * x0;
                }
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// `self^T x rhs`: `[n,k]^T x [n,m] -> [k,m]`.
    pub fn t_matmul(&self, rhs: &Self) -> Result<Self> {
        let (n, k) = self.dims2()?;
        let (n2, m) = rhs.dims2()?;
        if n != n2 {
            return Err(Error::ShapeMismatch(format!(
                "t_matmul {:?} x {:?}: row dims {n} vs {n2}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![E::ZERO; k * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let b_row = &rhs.data[i * m..(i + 1) * m];
            for (kk, &a) in a_row.iter().enumerate() {
                let o_row = &mut out[kk * m..(kk + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![k, m], out)
    }

    /// `self x rhs^T`: `[n,k] x [m,k]^T -> [n,m]`. Transposes `rhs` once so
    /// the product runs on the row-streaming kernel.
    pub fn matmul_t(&self, rhs: &Self) -> Result<Self> {
        let (_, k) = self.dims2()?;
        let (m, k2) = rhs.dims2()?;
        if k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul_t {:?} x {:?}: inner dims {k} vs {k2}",
                self.shape, rhs.shape
            )));
        }
        let mut transposed = vec![E::ZERO; k * m];
        for j in 0..m {
            let b_row = &rhs.data[j * k..(j + 1) * k];
            for (kk, &b) in b_row.iter().enumerate() {
                transposed[kk * m + j] = b;
            }
        }
        self.matmul(&Tensor { shape: vec![k, m], data: transposed })
    }
}
