//! Dense tensors and sliding-window patch transforms.
//!
//! A [`Tensor`] is a row-major array of `f64` with up to four extents. Signals
//! are laid out batch × channel × height × width. [`im2col`] turns every
//! receptive field into one row of a [`PatchMatrix`], so that a convolution is a
//! matrix product and a distance convolution is a row-wise reduction;
//! [`col2im`] is its adjoint (scatter-add).

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that `data` fills `shape` exactly.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        check_shape(shape).expect("invalid tensor shape");
        let len: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents as `[batch, channels, height, width]`; the tensor must be 4-D.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::shape(format!(
                "expected a 4-D signal, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "dot of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn abs_mean(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// One sample of a batched tensor, keeping the leading axis with extent 1.
    pub fn sample(&self, index: usize) -> Result<Tensor> {
        let n = self.shape[0];
        if index >= n {
            return Err(Error::invalid(format!("sample {index} of batch {n}")));
        }
        let stride = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor::new(shape, self.data[index * stride..(index + 1) * stride].to_vec())
    }

    /// Gathers samples along the leading axis.
    pub fn select(&self, indices: &[usize]) -> Result<Tensor> {
        if indices.is_empty() {
            return Err(Error::invalid("empty selection"));
        }
        let n = self.shape[0];
        let stride = self.data.len() / n;
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= n {
                return Err(Error::invalid(format!("sample {i} of batch {n}")));
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::new(shape, data)
    }

    /// FNV-1a over the shape and the bit patterns of the values.
    pub fn checksum(&self) -> u64 {
        let mut hash = Fnv::default();
        for &d in &self.shape {
            hash.write(&(d as u64).to_le_bytes());
        }
        for v in &self.data {
            hash.write(&v.to_bits().to_le_bytes());
        }
        hash.0
    }
}

pub(crate) struct Fnv(pub u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.len() > 4 {
        return Err(Error::shape(format!(
            "rank must be 1..=4, got shape {shape:?}"
        )));
    }
    if shape.contains(&0) {
        return Err(Error::shape(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

/// Population mean and standard deviation over all elements.
pub fn moments(t: &Tensor) -> (f64, f64) {
    let n = t.len() as f64;
    let mean = t.sum() / n;
    let var = t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sliding-window geometry shared by im2col, col2im and the convolution layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub window: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PatchGeometry {
    pub fn new(
        input: [usize; 4],
        window: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let [batch, channels, height, width] = input;
        if window == 0 {
            return Err(Error::invalid("window must be at least 1"));
        }
        if stride == 0 {
            return Err(Error::invalid("stride must be at least 1"));
        }
        let (ph, pw) = (height + 2 * pad, width + 2 * pad);
        if window > ph || window > pw {
            return Err(Error::WindowExceedsInput {
                window,
                extent: ph.min(pw),
            });
        }
        Ok(PatchGeometry {
            batch,
            channels,
            height,
            width,
            window,
            stride,
            pad,
            out_h: (ph - window) / stride + 1,
            out_w: (pw - window) / stride + 1,
        })
    }

    /// Patch dimensionality: channels × window².
    pub fn cols(&self) -> usize {
        self.channels * self.window * self.window
    }

    /// batch × out_h × out_w.
    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    fn is_consistent(&self) -> bool {
        matches!(
            PatchGeometry::new(self.input_shape(), self.window, self.stride, self.pad),
            Ok(g) if g == *self
        )
    }
}

/// One vectorised receptive field per row, ordered (batch, i, j); within a row
/// the layout is channel-major, then window row, then window column.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    geometry: PatchGeometry,
    data: Vec<f64>,
}

impl PatchMatrix {
    pub fn from_parts(geometry: PatchGeometry, data: Vec<f64>) -> Result<Self> {
        if !geometry.is_consistent() {
            return Err(Error::shape(format!(
                "inconsistent patch geometry {geometry:?}"
            )));
        }
        if data.len() != geometry.rows() * geometry.cols() {
            return Err(Error::shape(format!(
                "patch matrix needs {}×{} values, got {}",
                geometry.rows(),
                geometry.cols(),
                data.len()
            )));
        }
        Ok(PatchMatrix { geometry, data })
    }

    pub fn zeros(geometry: PatchGeometry) -> Self {
        PatchMatrix {
            data: vec![0.0; geometry.rows() * geometry.cols()],
            geometry,
        }
    }

    pub fn geometry(&self) -> &PatchGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows()
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let n = self.cols();
        &self.data[r * n..(r + 1) * n]
    }
}

pub fn im2col(input: &Tensor, window: usize, stride: usize, pad: usize) -> Result<PatchMatrix> {
    let geometry = PatchGeometry::new(input.dims4()?, window, stride, pad)?;
    let g = geometry;
    let mut data = vec![0.0; g.rows() * g.cols()];
    let src = input.data();
    let mut dst = 0;
    for b in 0..g.batch {
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * g.height * g.width;
                    for ki in 0..g.window {
                        let y = (i * g.stride + ki) as isize - g.pad as isize;
                        for kj in 0..g.window {
                            let x = (j * g.stride + kj) as isize - g.pad as isize;
                            if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                                data[dst] = src[plane + y as usize * g.width + x as usize];
                            }
                            dst += 1;
                        }
                    }
                }
            }
        }
    }
    Ok(PatchMatrix { geometry, data })
}

/// Adjoint of [`im2col`]: every row is added back onto its receptive field;
/// entries that fell on padding are dropped.
pub fn col2im(patches: &PatchMatrix) -> Result<Tensor> {
    let g = patches.geometry;
    if !g.is_consistent() || patches.data.len() != g.rows() * g.cols() {
        return Err(Error::shape(format!("inconsistent patch geometry {g:?}")));
    }
    let mut out = Tensor::zeros(&g.input_shape());
    let dst = out.data_mut();
    let mut src = patches.data.iter();
    for b in 0..g.batch {
        for i in 0..g.out_h {
            for j in 0..g.out_w {
                for c in 0..g.channels {
                    let plane = (b * g.channels + c) * g.height * g.width;
                    for ki in 0..g.window {
                        let y = (i * g.stride + ki) as isize - g.pad as isize;
                        for kj in 0..g.window {
                            let x = (j * g.stride + kj) as isize - g.pad as isize;
                            let v = *src.next().expect("length checked above");
                            if y >= 0 && x >= 0 && (y as usize) < g.height && (x as usize) < g.width {
                                dst[plane + y as usize * g.width + x as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// `c = alpha·op(a)·op(b) + beta·c` for row-major `a` (m×k after op), `b`
/// (k×n after op) and `c` (m×n).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slice lengths are asserted above and the strides describe
    // exactly those row-major buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
