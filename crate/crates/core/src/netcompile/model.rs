use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convlower::{ConvShape, FilterBank};
use crate::error::{HeError, Result};
use crate::matvec::{Kernel, WeightMatrix};
use crate::refmodel::Tensor3;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    SubConv,
    AvgPool,
    Square,
    Flatten,
    Dense,
}

impl LayerKind {
    pub fn is_linear(self) -> bool {
        !matches!(self, LayerKind::Square)
    }

    pub fn is_conv(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::SubConv)
    }

    pub fn has_weights(self) -> bool {
        matches!(self, LayerKind::Conv | LayerKind::SubConv | LayerKind::Dense)
    }
}

/// How a linear stage is evaluated on ciphertexts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelPolicy {
    ConvPack,
    Hs,
    LolaDense,
    LolaStacked,
}

impl KernelPolicy {
    pub fn kernel(self) -> Option<Kernel> {
        match self {
            KernelPolicy::ConvPack => None,
            KernelPolicy::Hs => Some(Kernel::Hs),
            KernelPolicy::LolaDense => Some(Kernel::LolaDense),
            KernelPolicy::LolaStacked => Some(Kernel::LolaStacked),
        }
    }
}

impl From<Kernel> for KernelPolicy {
    fn from(k: Kernel) -> Self {
        match k {
            Kernel::Hs => KernelPolicy::Hs,
            Kernel::LolaDense => KernelPolicy::LolaDense,
            Kernel::LolaStacked => KernelPolicy::LolaStacked,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub kind: LayerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_channels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<KernelPolicy>,
    pub label: String,
}

impl LayerSpec {
    fn bare(kind: LayerKind, label: &str) -> Self {
        LayerSpec { kind, k: None, s: None, out_channels: None, units: None, policy: None, label: label.to_string() }
    }

    pub fn conv(k: usize, s: usize, out_channels: usize, label: &str) -> Self {
        LayerSpec { k: Some(k), s: Some(s), out_channels: Some(out_channels), ..Self::bare(LayerKind::Conv, label) }
    }

    pub fn avg_pool(k: usize, s: usize, label: &str) -> Self {
        LayerSpec { k: Some(k), s: Some(s), ..Self::bare(LayerKind::AvgPool, label) }
    }

    pub fn square(label: &str) -> Self {
        Self::bare(LayerKind::Square, label)
    }

    pub fn flatten(label: &str) -> Self {
        Self::bare(LayerKind::Flatten, label)
    }

    pub fn dense(units: usize, label: &str) -> Self {
        LayerSpec { units: Some(units), ..Self::bare(LayerKind::Dense, label) }
    }

    pub fn with_policy(mut self, policy: KernelPolicy) -> Self {
        self.policy = Some(policy);
        self
    }

    pub fn kernel(&self) -> usize {
        self.k.unwrap_or(1)
    }

    pub fn stride(&self) -> usize {
        self.s.unwrap_or(1)
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(HeError::Model(format!("layer {}: {what}", self.label)));
        let (k, s, oc, u) = (self.k.is_some(), self.s.is_some(), self.out_channels.is_some(), self.units.is_some());
        let ok = match self.kind {
            LayerKind::Conv | LayerKind::SubConv => k && s && oc && !u,
            LayerKind::AvgPool => k && s && !oc && !u,
            LayerKind::Square | LayerKind::Flatten => !k && !s && !oc && !u,
            LayerKind::Dense => u && !k && !s && !oc,
        };
        if !ok {
            return bad("parameters do not match the layer kind");
        }
        if [self.k, self.s, self.out_channels, self.units].contains(&Some(0)) {
            return bad("parameters must be positive");
        }
        if self.policy.is_some() && !self.kind.is_linear() {
            return bad("square layers take no kernel policy");
        }
        if self.policy == Some(KernelPolicy::ConvPack) && !self.kind.is_conv() {
            return bad("conv-pack applies to convolutions only");
        }
        if self.label.is_empty() {
            return bad("empty label");
        }
        Ok(())
    }
}

/// Shape `(channels, height, width)` of an intermediate tensor.
pub type TensorShape = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub input: [usize; 3],
    pub n_slots: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let m: ModelSpec = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) || self.input[1] != self.input[2] {
            return Err(HeError::Model(format!("input {:?} must be (c, d, d) with positive sides", self.input)));
        }
        if self.n_slots == 0 || !self.n_slots.is_power_of_two() {
            return Err(HeError::Model(format!("n_slots = {} is not a power of two", self.n_slots)));
        }
        for l in &self.layers {
            l.validate()?;
        }
        self.shapes().map(|_| ())
    }

    /// Input shape followed by the output shape of every layer.
    pub fn shapes(&self) -> Result<Vec<TensorShape>> {
        let [c, d, _] = self.input;
        let mut shapes = vec![(c, d, d)];
        for l in &self.layers {
            let (c, h, w) = *shapes.last().expect("non-empty");
            let next = match l.kind {
                LayerKind::Conv | LayerKind::SubConv | LayerKind::AvgPool => {
                    if h != w {
                        return Err(HeError::shape(format!("layer {}: input {h}x{w} is not square", l.label)));
                    }
                    let c_out = if l.kind == LayerKind::AvgPool { c } else { l.out_channels.unwrap_or(1) };
                    let s = ConvShape::new(h, c, c_out, l.kernel(), l.stride())
                        .map_err(|e| HeError::shape(format!("layer {}: {e}", l.label)))?;
                    (c_out, s.d_out, s.d_out)
                }
                LayerKind::Square => (c, h, w),
                LayerKind::Flatten => (c * h * w, 1, 1),
                LayerKind::Dense => (l.units.unwrap_or(1), 1, 1),
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    /// Window geometry of convolution or pooling layer `i`.
    pub fn conv_shape(&self, i: usize) -> Result<ConvShape> {
        let shapes = self.shapes()?;
        let l = &self.layers[i];
        let (c, d, _) = shapes[i];
        match l.kind {
            LayerKind::Conv | LayerKind::SubConv => ConvShape::new(d, c, l.out_channels.unwrap_or(1), l.kernel(), l.stride()),
            LayerKind::AvgPool => ConvShape::pool(d, c, l.kernel(), l.stride()),
            _ => Err(HeError::shape(format!("layer {} has no window", l.label))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerWeights<T> {
    None,
    Conv(FilterBank<T>),
    Dense { matrix: WeightMatrix<T>, bias: Vec<T> },
}

/// Parameters for every layer of a model, in layer order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights<T> {
    pub layers: Vec<LayerWeights<T>>,
}

fn dense_dims(shapes: &[TensorShape], i: usize, units: usize) -> (usize, usize) {
    let (c, h, w) = shapes[i];
    (units, c * h * w)
}

impl<T: Scalar> ModelWeights<T> {
    fn build(model: &ModelSpec, mut f: impl FnMut(LayerKind, usize, usize, usize) -> LayerWeights<T>) -> Result<Self> {
        let shapes = model.shapes()?;
        let layers = model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match l.kind {
                LayerKind::Conv | LayerKind::SubConv => {
                    f(l.kind, l.out_channels.unwrap_or(1), shapes[i].0, l.kernel())
                }
                LayerKind::Dense => {
                    let (m, n) = dense_dims(&shapes, i, l.units.unwrap_or(1));
                    f(l.kind, m, n, 0)
                }
                _ => LayerWeights::None,
            })
            .collect();
        Ok(ModelWeights { layers })
    }

    /// Seeded random weights scaled by `1/√fan_in`.
    pub fn random(model: &ModelSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(model, |kind, a, b, k| match kind {
            LayerKind::Dense => {
                let scale = (b as f64).sqrt().recip();
                let e = (0..a * b).map(|_| T::of(rng.gen_range(-scale..scale))).collect();
                let bias = (0..a).map(|_| T::of(rng.gen_range(-0.1..0.1))).collect();
                LayerWeights::Dense { matrix: WeightMatrix::new(a, b, e).expect("dims"), bias }
            }
            _ => LayerWeights::Conv(FilterBank::random(a, b, k, &mut rng)),
        })
    }

    pub fn zeros(model: &ModelSpec) -> Result<Self> {
        Self::build(model, |kind, a, b, k| match kind {
            LayerKind::Dense => LayerWeights::Dense {
                matrix: WeightMatrix::new(a, b, vec![T::zero(); a * b]).expect("dims"),
                bias: vec![T::zero(); a],
            },
            _ => LayerWeights::Conv(FilterBank::zeros(a, b, k)),
        })
    }

    pub fn check(&self, model: &ModelSpec) -> Result<()> {
        let shapes = model.shapes()?;
        if self.layers.len() != model.layers.len() {
            return Err(HeError::shape(format!(
                "{} weight entries for {} layers",
                self.layers.len(),
                model.layers.len()
            )));
        }
        for (i, (l, w)) in model.layers.iter().zip(&self.layers).enumerate() {
            let ok = match (l.kind, w) {
                (LayerKind::Conv | LayerKind::SubConv, LayerWeights::Conv(f)) => model.conv_shape(i).and_then(|s| f.check(&s)).is_ok(),
                (LayerKind::Dense, LayerWeights::Dense { matrix, bias }) => {
                    let (m, n) = dense_dims(&shapes, i, l.units.unwrap_or(1));
                    matrix.rows() == m && matrix.cols() == n && bias.len() == m
                }
                (k, LayerWeights::None) => !k.has_weights(),
                _ => false,
            };
            if !ok {
                return Err(HeError::shape(format!("weights do not match layer {}", l.label)));
            }
        }
        Ok(())
    }

    /// Reads a little-endian `f32` stream: per weighted layer, conv filters in
    /// `[c_out][c_in][k][k]` order or dense weights row-major, then its biases.
    pub fn read_f32(model: &ModelSpec, reader: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let floats = decode_f32(&bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<Vec<T>> {
            let chunk = floats
                .get(pos..pos + n)
                .ok_or_else(|| HeError::shape(format!("weights stream ended after {} floats", floats.len())))?;
            pos += n;
            Ok(chunk.iter().map(|&x| T::of(f64::from(x))).collect())
        };
        let mut failed = None;
        let weights = Self::build(model, |kind, a, b, k| {
            let res = match kind {
                LayerKind::Dense => take(a * b).and_then(|e| {
                    Ok(LayerWeights::Dense { matrix: WeightMatrix::new(a, b, e)?, bias: take(a)? })
                }),
                _ => take(a * b * k * k).and_then(|w| Ok(LayerWeights::Conv(FilterBank::new(a, b, k, w, take(a)?)?))),
            };
            res.unwrap_or_else(|e| {
                failed.get_or_insert(e);
                LayerWeights::None
            })
        })?;
        if let Some(e) = failed {
            return Err(e);
        }
        if pos != floats.len() {
            return Err(HeError::shape(format!("{} trailing floats in weights stream", floats.len() - pos)));
        }
        Ok(weights)
    }

    pub fn write_f32(&self, writer: &mut impl Write) -> Result<()> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                LayerWeights::None => {}
                LayerWeights::Conv(f) => out.extend(f.weights.iter().chain(&f.bias)),
                LayerWeights::Dense { matrix, bias } => out.extend(matrix.entries().iter().chain(bias)),
            }
        }
        write_f32(writer, out.into_iter().copied())
    }
}

fn decode_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if !bytes.len().is_multiple_of(4) {
        return Err(HeError::shape(format!("float stream of {} bytes is not a multiple of 4", bytes.len())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn write_f32<T: Scalar>(writer: &mut impl Write, values: impl Iterator<Item = T>) -> Result<()> {
    for v in values {
        writer.write_all(&(v.as_f64() as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads a channel-major `f32` input tensor for `model`.
pub fn read_input<T: Scalar>(model: &ModelSpec, reader: &mut impl Read) -> Result<Tensor3<T>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let [c, d, _] = model.input;
    let vals = decode_f32(&bytes)?.into_iter().map(|x| T::of(f64::from(x))).collect();
    Tensor3::new(c, d, d, vals)
}

pub fn random_input<T: Scalar>(model: &ModelSpec, seed: u64) -> Tensor3<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, d, _] = model.input;
    Tensor3::random(c, d, d, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelSpec {
        ModelSpec {
            name: "tiny".into(),
            input: [1, 6, 6],
            n_slots: 64,
            layers: vec![
                LayerSpec::conv(3, 1, 2, "Conv1"),
                LayerSpec::square("Sq"),
                LayerSpec::avg_pool(2, 2, "Pool"),
                LayerSpec::flatten("Flat"),
                LayerSpec::dense(3, "Dense"),
            ],
        }
    }

    #[test]
    fn shapes_follow_layers() {
        assert_eq!(tiny().shapes().unwrap(), vec![(1, 6, 6), (2, 4, 4), (2, 4, 4), (2, 2, 2), (8, 1, 1), (3, 1, 1)]);
    }

    #[test]
    fn json_round_trip_and_unknown_fields() {
        let m = tiny();
        assert_eq!(ModelSpec::from_json(&m.to_json()).unwrap(), m);
        let bad = r#"{"name":"x","input":[1,4,4],"n_slots":16,"layers":[],"extra":1}"#;
        assert!(ModelSpec::from_json(bad).is_err());
        let bad = r#"{"name":"x","input":[1,4,4],"n_slots":16,"layers":[{"kind":"square","label":"s","k":2}]}"#;
        assert!(matches!(ModelSpec::from_json(bad), Err(HeError::Model(_))));
        let bad = r#"{"name":"x","input":[1,4,4],"n_slots":16,"layers":[{"kind":"dense","units":2,"label":"d","bogus":1}]}"#;
        assert!(ModelSpec::from_json(bad).is_err());
        let bad = r#"{"name":"x","input":[1,4,4],"n_slots":12,"layers":[]}"#;
        assert!(ModelSpec::from_json(bad).is_err());
    }

    #[test]
    fn oversized_kernel_is_a_shape_error() {
        let mut m = tiny();
        m.layers[0] = LayerSpec::conv(7, 1, 2, "Conv1");
        assert!(matches!(m.validate(), Err(HeError::Shape(_))));
    }

    #[test]
    fn weights_stream_round_trip() {
        let m = tiny();
        let w = ModelWeights::<f64>::random(&m, 3).unwrap();
        let mut buf = Vec::new();
        w.write_f32(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 * (2 * 9 + 2 + 3 * 8 + 3));
        let back = ModelWeights::<f64>::read_f32(&m, &mut buf.as_slice()).unwrap();
        back.check(&m).unwrap();
        let rounded = |x: f64| f64::from(x as f32);
        if let (LayerWeights::Conv(a), LayerWeights::Conv(b)) = (&w.layers[0], &back.layers[0]) {
            assert!(a.weights.iter().zip(&b.weights).all(|(x, y)| rounded(*x) == *y));
        } else {
            panic!("conv weights expected");
        }
        assert!(ModelWeights::<f64>::read_f32(&m, &mut &buf[..buf.len() - 4]).is_err());
        let mut longer = buf.clone();
        longer.extend([0u8; 4]);
        assert!(ModelWeights::<f64>::read_f32(&m, &mut longer.as_slice()).is_err());
    }
}
