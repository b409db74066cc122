//! Lowering of convolution, pooling, square and flatten layers to slot operations.
//!
//! Tensors are flattened channel-major, then row, then column:
//! element `(c, y, x)` of a `c × d × d` tensor has index `c·d² + y·d + x`.

use rand::Rng;

use crate::error::{HeError, Result};
use crate::matvec::WeightMatrix;
use crate::refmodel::Tensor3;
use crate::scalar::Scalar;
use crate::slotvec::{add, mul, rotate_right, MeterContext, SlotVector};
use crate::sparse::SparseMatrix;

/// Square, equal-stride convolution or pooling window geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvShape {
    pub d_in: usize,
    pub d_out: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel_k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn new(d_in: usize, c_in: usize, c_out: usize, kernel_k: usize, stride: usize) -> Result<Self> {
        if d_in == 0 || c_in == 0 || c_out == 0 || kernel_k == 0 || stride == 0 {
            return Err(HeError::shape("convolution dimensions must be positive"));
        }
        if kernel_k > d_in {
            return Err(HeError::shape(format!("kernel {kernel_k} larger than input side {d_in}")));
        }
        let d_out = (d_in - kernel_k) / stride + 1;
        Ok(ConvShape { d_in, d_out, c_in, c_out, kernel_k, stride })
    }

    /// Per-channel pooling window: `c_out = c_in`.
    pub fn pool(d_in: usize, channels: usize, kernel_k: usize, stride: usize) -> Result<Self> {
        Self::new(d_in, channels, channels, kernel_k, stride)
    }

    pub fn taps(&self) -> usize {
        self.kernel_k * self.kernel_k * self.c_in
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.d_in * self.d_in
    }

    pub fn output_len(&self) -> usize {
        self.c_out * self.d_out * self.d_out
    }

    fn in_index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.d_in + y) * self.d_in + x
    }
}

/// Filters in `[c_out][c_in][k][k]` order plus one bias per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T> {
    pub c_out: usize,
    pub c_in: usize,
    pub kernel_k: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(c_out: usize, c_in: usize, kernel_k: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != c_out * c_in * kernel_k * kernel_k || bias.len() != c_out {
            return Err(HeError::shape(format!(
                "filter bank {c_out}x{c_in}x{kernel_k}x{kernel_k} got {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(FilterBank { c_out, c_in, kernel_k, weights, bias })
    }

    /// Weights uniform in `±1/√fan_in` so activations stay O(1) through deep stacks.
    pub fn random(c_out: usize, c_in: usize, kernel_k: usize, rng: &mut impl Rng) -> Self {
        let fan_in = (c_in * kernel_k * kernel_k) as f64;
        let scale = fan_in.sqrt().recip();
        let weights = (0..c_out * c_in * kernel_k * kernel_k).map(|_| T::of(rng.gen_range(-scale..scale))).collect();
        let bias = (0..c_out).map(|_| T::of(rng.gen_range(-0.1..0.1))).collect();
        FilterBank { c_out, c_in, kernel_k, weights, bias }
    }

    pub fn zeros(c_out: usize, c_in: usize, kernel_k: usize) -> Self {
        FilterBank {
            c_out,
            c_in,
            kernel_k,
            weights: vec![T::zero(); c_out * c_in * kernel_k * kernel_k],
            bias: vec![T::zero(); c_out],
        }
    }

    pub fn weight(&self, o: usize, c: usize, dy: usize, dx: usize) -> T {
        let k = self.kernel_k;
        self.weights[((o * self.c_in + c) * k + dy) * k + dx]
    }

    /// Weight applied to packed tap `i = (c·k + dy)·k + dx` for output channel `o`.
    pub fn tap(&self, o: usize, i: usize) -> T {
        self.weights[o * self.c_in * self.kernel_k * self.kernel_k + i]
    }

    pub fn check(&self, shape: &ConvShape) -> Result<()> {
        if self.c_out != shape.c_out || self.c_in != shape.c_in || self.kernel_k != shape.kernel_k {
            return Err(HeError::shape(format!(
                "filters {}x{}x{k}x{k} do not match convolution {}x{}x{kk}x{kk}",
                self.c_out,
                self.c_in,
                shape.c_out,
                shape.c_in,
                k = self.kernel_k,
                kk = shape.kernel_k
            )));
        }
        Ok(())
    }
}

/// First-layer input as `k²·c_in` ciphertexts; vector `i` holds, at slot
/// `p·d_out + q`, the pixel that filter tap `i` meets at output position `(p, q)`.
#[derive(Clone, Debug)]
pub struct ConvPackedInput<T> {
    pub vectors: Vec<SlotVector<T>>,
    pub shape: ConvShape,
}

/// Client-side convolution packing. Not metered.
pub fn conv_pack<T: Scalar>(image: &Tensor3<T>, shape: ConvShape, n_slots: usize) -> Result<ConvPackedInput<T>> {
    if image.dims() != (shape.c_in, shape.d_in, shape.d_in) {
        return Err(HeError::shape(format!(
            "image {:?} does not match convolution input ({}, {}, {})",
            image.dims(),
            shape.c_in,
            shape.d_in,
            shape.d_in
        )));
    }
    let used = shape.d_out * shape.d_out;
    if used > n_slots {
        return Err(HeError::capacity(format!("d_out² = {used} > N = {n_slots}")));
    }
    let k = shape.kernel_k;
    let mut vectors = Vec::with_capacity(shape.taps());
    for z in 0..shape.c_in {
        for dy in 0..k {
            for dx in 0..k {
                let mut vals = Vec::with_capacity(used);
                for p in 0..shape.d_out {
                    for q in 0..shape.d_out {
                        vals.push(image.get(z, p * shape.stride + dy, q * shape.stride + dx));
                    }
                }
                vectors.push(SlotVector::pack(&vals, n_slots, crate::slotvec::Kind::Ciphertext)?);
            }
        }
    }
    Ok(ConvPackedInput { vectors, shape })
}

/// Scalar-times-ciphertext accumulation over packed taps.
///
/// Output map `o` is `Σ_i vectors[i]·g_o[i] + bias_o`, with every plaintext
/// restricted to slots `0..width` so the outputs are zero beyond the map.
/// Costs `taps·c_out` mul_pc, `(taps - 1)·c_out` add_cc and `c_out` add_pc.
pub fn packed_forward<T: Scalar>(
    vectors: &[SlotVector<T>],
    width: usize,
    filters: &FilterBank<T>,
    ctx: &mut MeterContext,
) -> Result<Vec<SlotVector<T>>> {
    let taps = filters.c_in * filters.kernel_k * filters.kernel_k;
    if vectors.len() != taps {
        return Err(HeError::shape(format!("{} packed vectors for {taps} filter taps", vectors.len())));
    }
    let n_slots = vectors[0].n_slots();
    (0..filters.c_out)
        .map(|o| {
            let mut acc: Option<SlotVector<T>> = None;
            for (i, v) in vectors.iter().enumerate() {
                let g = SlotVector::masked_scalar(filters.tap(o, i), 0..width, n_slots)?;
                let t = mul(v, &g, ctx)?;
                acc = Some(match acc {
                    None => t,
                    Some(s) => add(&s, &t, ctx)?,
                });
            }
            let b = SlotVector::masked_scalar(filters.bias[o], 0..width, n_slots)?;
            add(&acc.expect("at least one tap"), &b, ctx)
        })
        .collect()
}

pub fn conv_packed_forward<T: Scalar>(
    input: &ConvPackedInput<T>,
    filters: &FilterBank<T>,
    ctx: &mut MeterContext,
) -> Result<Vec<SlotVector<T>>> {
    filters.check(&input.shape)?;
    packed_forward(&input.vectors, input.shape.d_out * input.shape.d_out, filters, ctx)
}

/// Convolution as a sparse `d_out²·c_out × d_in²·c_in` matrix plus the per-output bias.
pub fn conv_to_sparse<T: Scalar>(shape: &ConvShape, filters: &FilterBank<T>) -> Result<(SparseMatrix<T>, Vec<T>)> {
    filters.check(shape)?;
    let k = shape.kernel_k;
    let mut rows = Vec::with_capacity(shape.output_len());
    let mut bias = Vec::with_capacity(shape.output_len());
    for o in 0..shape.c_out {
        for p in 0..shape.d_out {
            for q in 0..shape.d_out {
                let mut row = Vec::with_capacity(shape.taps());
                for c in 0..shape.c_in {
                    for dy in 0..k {
                        for dx in 0..k {
                            let col = shape.in_index(c, p * shape.stride + dy, q * shape.stride + dx);
                            row.push((col, filters.weight(o, c, dy, dx)));
                        }
                    }
                }
                rows.push(row);
                bias.push(filters.bias[o]);
            }
        }
    }
    Ok((SparseMatrix::from_rows(shape.input_len(), rows)?, bias))
}

pub fn conv_to_matrix<T: Scalar>(shape: &ConvShape, filters: &FilterBank<T>) -> Result<(WeightMatrix<T>, Vec<T>)> {
    let (a, b) = conv_to_sparse(shape, filters)?;
    Ok((a.to_dense(), b))
}

/// Average pooling (`c_in = c_out`) as a sparse matrix with `1/k²` per window tap.
pub fn pool_to_sparse<T: Scalar>(shape: &ConvShape) -> Result<SparseMatrix<T>> {
    if shape.c_in != shape.c_out {
        return Err(HeError::shape("pooling keeps the channel count"));
    }
    let k = shape.kernel_k;
    let w = T::of(1.0 / (k * k) as f64);
    let mut rows = Vec::with_capacity(shape.output_len());
    for c in 0..shape.c_in {
        for p in 0..shape.d_out {
            for q in 0..shape.d_out {
                let row = (0..k)
                    .flat_map(|dy| (0..k).map(move |dx| (dy, dx)))
                    .map(|(dy, dx)| (shape.in_index(c, p * shape.stride + dy, q * shape.stride + dx), w))
                    .collect();
                rows.push(row);
            }
        }
    }
    SparseMatrix::from_rows(shape.input_len(), rows)
}

pub fn pool_to_matrix<T: Scalar>(shape: &ConvShape) -> Result<WeightMatrix<T>> {
    Ok(pool_to_sparse(shape)?.to_dense())
}

/// Element-wise square: one ciphertext-ciphertext multiplication.
pub fn square_layer<T: Scalar>(v: &SlotVector<T>, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    mul(v, v, ctx)
}

/// Concatenates `maps` (each zero beyond `width` slots) into one dense
/// ciphertext: map `j` lands at slots `j·width..(j+1)·width`.
pub fn merge_maps<T: Scalar>(maps: &[SlotVector<T>], width: usize, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    let first = maps.first().ok_or_else(|| HeError::shape("no maps to merge"))?;
    let n_slots = first.n_slots();
    if maps.len() * width > n_slots {
        return Err(HeError::capacity(format!(
            "{} maps of {width} slots need {} > N = {n_slots}",
            maps.len(),
            maps.len() * width
        )));
    }
    let mut acc = first.clone();
    for (j, m) in maps.iter().enumerate().skip(1) {
        let r = rotate_right(m, j * width, ctx)?;
        acc = add(&acc, &r, ctx)?;
    }
    Ok(acc)
}
