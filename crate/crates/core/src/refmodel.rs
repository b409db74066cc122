//! Cleartext reference network: textbook convolution, pooling, square and
//! dense layers. Every encrypted-path result is checked against this module.

use rand::Rng;

use crate::convlower::FilterBank;
use crate::error::{HeError, Result};
use crate::matvec::WeightMatrix;
use crate::netcompile::{LayerKind, LayerWeights, ModelSpec, ModelWeights};
use crate::scalar::Scalar;

/// `c × h × w` tensor stored channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor3<T> {
    c: usize,
    h: usize,
    w: usize,
    values: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn new(c: usize, h: usize, w: usize, values: Vec<T>) -> Result<Self> {
        if values.len() != c * h * w {
            return Err(HeError::shape(format!("{} values for a {c}x{h}x{w} tensor", values.len())));
        }
        Ok(Tensor3 { c, h, w, values })
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Tensor3 { c, h, w, values: vec![T::zero(); c * h * w] }
    }

    /// Values uniform in `[0, 1)`, like normalized pixel intensities.
    pub fn random(c: usize, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let values = (0..c * h * w).map(|_| T::of(rng.gen_range(0.0..1.0))).collect();
        Tensor3 { c, h, w, values }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.values[(c * self.h + y) * self.w + x]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn flatten(self) -> Self {
        let n = self.values.len();
        Tensor3 { c: n, h: 1, w: 1, values: self.values }
    }
}

/// Valid (unpadded) convolution with equal strides.
pub fn ref_conv<T: Scalar>(input: &Tensor3<T>, filters: &FilterBank<T>, stride: usize) -> Result<Tensor3<T>> {
    let (c, h, w) = input.dims();
    let k = filters.kernel_k;
    if c != filters.c_in || k > h || k > w || stride == 0 {
        return Err(HeError::shape(format!(
            "cannot convolve {c}x{h}x{w} with {}x{}x{k}x{k} filters at stride {stride}",
            filters.c_out, filters.c_in
        )));
    }
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let mut out = Vec::with_capacity(filters.c_out * ho * wo);
    for o in 0..filters.c_out {
        for p in 0..ho {
            for q in 0..wo {
                let mut acc = T::zero();
                for z in 0..c {
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += filters.weight(o, z, dy, dx) * input.get(z, p * stride + dy, q * stride + dx);
                        }
                    }
                }
                out.push(acc + filters.bias[o]);
            }
        }
    }
    Tensor3::new(filters.c_out, ho, wo, out)
}

pub fn ref_avgpool<T: Scalar>(input: &Tensor3<T>, k: usize, stride: usize) -> Result<Tensor3<T>> {
    let (c, h, w) = input.dims();
    if k == 0 || k > h || k > w || stride == 0 {
        return Err(HeError::shape(format!("cannot pool {c}x{h}x{w} with window {k} stride {stride}")));
    }
    let (ho, wo) = ((h - k) / stride + 1, (w - k) / stride + 1);
    let scale = T::of(1.0 / (k * k) as f64);
    let mut out = Vec::with_capacity(c * ho * wo);
    for z in 0..c {
        for p in 0..ho {
            for q in 0..wo {
                let mut acc = T::zero();
                for dy in 0..k {
                    for dx in 0..k {
                        acc += input.get(z, p * stride + dy, q * stride + dx);
                    }
                }
                out.push(acc * scale);
            }
        }
    }
    Tensor3::new(c, ho, wo, out)
}

pub fn ref_square<T: Scalar>(input: &Tensor3<T>) -> Tensor3<T> {
    let (c, h, w) = input.dims();
    Tensor3 { c, h, w, values: input.values.iter().map(|&x| x * x).collect() }
}

/// Naive `A·v` with row-major accumulation.
pub fn ref_matvec<T: Scalar>(a: &WeightMatrix<T>, v: &[T]) -> Result<Vec<T>> {
    if v.len() != a.cols() {
        return Err(HeError::shape(format!("vector of length {} for {} columns", v.len(), a.cols())));
    }
    Ok((0..a.rows())
        .map(|i| {
            let mut acc = T::zero();
            for (&x, &y) in a.row(i).iter().zip(v) {
                acc += x * y;
            }
            acc
        })
        .collect())
}

pub fn ref_dense<T: Scalar>(v: &[T], w: &WeightMatrix<T>, b: &[T]) -> Result<Vec<T>> {
    if b.len() != w.rows() {
        return Err(HeError::shape(format!("{} biases for {} outputs", b.len(), w.rows())));
    }
    Ok(ref_matvec(w, v)?.into_iter().zip(b).map(|(x, &b)| x + b).collect())
}

/// Applies every layer in order, unfused; the final tensor is returned flattened.
pub fn ref_forward<T: Scalar>(model: &ModelSpec, weights: &ModelWeights<T>, input: &Tensor3<T>) -> Result<Vec<T>> {
    let [c, d, _] = model.input;
    if input.dims() != (c, d, d) {
        return Err(HeError::shape(format!("input {:?} but model expects ({c}, {d}, {d})", input.dims())));
    }
    weights.check(model)?;
    let mut t = input.clone();
    for (layer, lw) in model.layers.iter().zip(&weights.layers) {
        t = match (layer.kind, lw) {
            (LayerKind::Conv | LayerKind::SubConv, LayerWeights::Conv(f)) => ref_conv(&t, f, layer.stride())?,
            (LayerKind::AvgPool, _) => ref_avgpool(&t, layer.kernel(), layer.stride())?,
            (LayerKind::Square, _) => ref_square(&t),
            (LayerKind::Flatten, _) => t.flatten(),
            (LayerKind::Dense, LayerWeights::Dense { matrix, bias }) => {
                let out = ref_dense(t.values(), matrix, bias)?;
                Tensor3::new(out.len(), 1, 1, out)?
            }
            _ => return Err(HeError::shape(format!("weights do not match layer {}", layer.label))),
        };
    }
    Ok(t.into_values())
}
