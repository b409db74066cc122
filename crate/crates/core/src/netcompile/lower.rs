use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use crate::convlower::ConvShape;
use crate::error::{HeError, Result};
use crate::matvec::{ceil_div, delta, hs_plan, predict_lola_stacked, HsBranch, HsOptions, Kernel};

use super::fuse::{fuse_linear, unfused_stages, FusedStage, StageKind};
use super::model::{KernelPolicy, LayerKind, ModelSpec, TensorShape};

/// Logical elements `start..start + slots.len()` of a tensor, element
/// `start + t` held in slot `slots[t]` of one ciphertext.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Placement {
    pub start: usize,
    pub slots: Vec<usize>,
}

impl Placement {
    pub fn contiguous(start: usize, len: usize) -> Self {
        Placement { start, slots: (0..len).collect() }
    }

    pub fn width(&self) -> usize {
        self.slots.iter().max().map_or(0, |&s| s + 1)
    }
}

/// Encrypted representation of the tensor flowing between stages.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Repr {
    /// Client-side image, packed by the first conv stage.
    Image,
    /// One ciphertext per feature map, map in slots `0..width`, zero elsewhere.
    Maps { count: usize, width: usize },
    /// One ciphertext per placement group. `clean` means every slot outside
    /// the placement is zero.
    Slots { groups: Vec<Placement>, clean: bool },
    /// One ciphertext per element, value in slot 0.
    Sparse { count: usize },
}

impl Repr {
    fn dense(len: usize) -> Self {
        Repr::Slots { groups: vec![Placement::contiguous(0, len)], clean: true }
    }

    pub fn ciphertexts(&self) -> usize {
        match self {
            Repr::Image => 0,
            Repr::Maps { count, .. } | Repr::Sparse { count } => *count,
            Repr::Slots { groups, .. } => groups.len(),
        }
    }
}

impl fmt::Display for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Repr::Image => write!(f, "client image"),
            Repr::Maps { count, width } => write!(f, "{count} maps of {width} slots"),
            Repr::Slots { groups, .. } => {
                let identity = groups.iter().all(|g| g.slots.iter().enumerate().all(|(t, &s)| t == s));
                let len: usize = groups.iter().map(|g| g.slots.len()).sum();
                match (groups.len(), identity) {
                    (1, true) => write!(f, "element i in slot i"),
                    (1, false) => write!(f, "{len} elements in one ciphertext, interleaved"),
                    (g, _) => write!(f, "{len} elements over {g} ciphertexts"),
                }
            }
            Repr::Sparse { count } => write!(f, "element i in slot 0 of ciphertext i ({count} ciphertexts)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum StageOp {
    /// First-layer convolution over client-packed taps.
    ConvPack { layer: usize, shape: ConvShape },
    /// 1×1 convolution on encrypted maps; input channel `c` is read from
    /// ciphertext `channels[c].0` after a left rotation by `channels[c].1`.
    PackedConv { layer: usize, shape: ConvShape, channels: Vec<(usize, usize)> },
    /// Concatenates consecutive maps into one ciphertext per range.
    Merge { width: usize, groups: Vec<Range<usize>> },
    /// Collects slot 0 of every ciphertext into one.
    Gather { count: usize },
    Square,
    /// Composed linear layers applied with one kernel call per input group.
    Linear { layers: Range<usize>, kernel: Kernel, m: usize, widths: Vec<usize>, block: usize, mask_input: bool, biased: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub label: String,
    pub op: StageOp,
    pub input: Repr,
    pub output: Repr,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoweredProgram {
    pub model: ModelSpec,
    pub input: Repr,
    pub stages: Vec<Stage>,
    pub output: Repr,
    pub hs: HsOptions,
}

impl LoweredProgram {
    pub fn n_slots(&self) -> usize {
        self.model.n_slots
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LowerOptions {
    /// Kernel for every linear stage, overriding per-layer policies.
    pub policy: Option<Kernel>,
    pub fuse: bool,
    pub hs: HsOptions,
}

impl Default for LowerOptions {
    fn default() -> Self {
        LowerOptions { policy: None, fuse: true, hs: HsOptions::default() }
    }
}

fn volume((c, h, w): TensorShape) -> usize {
    c * h * w
}

struct Lowering<'a> {
    model: &'a ModelSpec,
    shapes: Vec<TensorShape>,
    n: usize,
    opts: &'a LowerOptions,
    labels: HashSet<String>,
}

impl Lowering<'_> {
    fn kernel(&self, f: &FusedStage) -> Kernel {
        self.opts.policy.or(f.policy.and_then(KernelPolicy::kernel)).unwrap_or(Kernel::Hs)
    }

    fn unique(&mut self, label: &str) -> String {
        let mut l = label.to_string();
        let mut k = 2;
        while !self.labels.insert(l.clone()) {
            l = format!("{label}#{k}");
            k += 1;
        }
        l
    }

    fn conv_pack(&self, f: &FusedStage, repr: &Repr) -> Result<(StageOp, Repr)> {
        let layer = f.layers.start;
        let shape = self.model.conv_shape(layer)?;
        let width = shape.d_out * shape.d_out;
        if width > self.n {
            return Err(HeError::capacity(format!("d_out² = {width} > N = {}", self.n)));
        }
        let out = Repr::Maps { count: shape.c_out, width };
        if *repr == Repr::Image {
            return Ok((StageOp::ConvPack { layer, shape }, out));
        }
        if shape.kernel_k != 1 || shape.stride != 1 {
            return Err(HeError::Model(format!(
                "conv-pack on encrypted maps needs a 1x1 kernel at stride 1, got {}x{} at stride {}",
                shape.kernel_k, shape.kernel_k, shape.stride
            )));
        }
        let channels = match repr {
            Repr::Maps { count, .. } => (0..*count).map(|j| (j, 0)).collect(),
            Repr::Slots { groups, .. } => (0..shape.c_in)
                .map(|c| locate_channel(groups, c * width, width))
                .collect::<Result<Vec<_>>>()?,
            other => {
                return Err(HeError::Layout { expected: "maps or slot placement", found: other.to_string() });
            }
        };
        Ok((StageOp::PackedConv { layer, shape, channels }, out))
    }

    fn linear(&self, f: &FusedStage, kernel: Kernel, repr: &Repr) -> Result<(StageOp, Repr)> {
        let (groups, clean) = match repr {
            Repr::Slots { groups, clean } => (groups, *clean),
            other => return Err(HeError::Layout { expected: "slot placement", found: other.to_string() }),
        };
        let n_in = volume(self.shapes[f.layers.start]);
        let m = volume(self.shapes[f.layers.end]);
        let covered: usize = groups.iter().map(|g| g.slots.len()).sum();
        if covered != n_in {
            return Err(HeError::shape(format!("{covered} encrypted elements for a stage input of {n_in}")));
        }
        let widths: Vec<usize> = groups.iter().map(Placement::width).collect();
        let n = self.n;
        let (block, out) = match kernel {
            Kernel::Hs => {
                for &w in &widths {
                    hs_plan(m, w, n)?;
                }
                (0, Repr::Slots { groups: vec![Placement::contiguous(0, m)], clean: false })
            }
            Kernel::LolaDense => {
                if let Some(&w) = widths.iter().find(|&&w| w > n) {
                    return Err(HeError::capacity(format!("n = {w} > N = {n}")));
                }
                (0, Repr::Sparse { count: m })
            }
            Kernel::LolaStacked => {
                let widest = widths.iter().copied().max().unwrap_or(1);
                predict_lola_stacked(m, widest, n)?;
                let block = delta(widest);
                let k = n / block;
                let slots = (0..m).map(|i| (i % k) * block + i / k).collect();
                (block, Repr::Slots { groups: vec![Placement { start: 0, slots }], clean: ceil_div(m, k) > 1 })
            }
        };
        let biased = self.model.layers[f.layers.clone()]
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Conv | LayerKind::SubConv | LayerKind::Dense));
        let op = StageOp::Linear {
            layers: f.layers.clone(),
            kernel,
            m,
            widths,
            block,
            mask_input: kernel == Kernel::LolaStacked && !clean,
            biased,
        };
        Ok((op, out))
    }

    /// Maps per merged ciphertext: the most that keep the next diagonal
    /// product on its no-wrap branch, else the most that fit.
    fn merge_group(&self, count: usize, width: usize, next: &FusedStage) -> usize {
        let cap = (self.n / width).clamp(1, count);
        if self.kernel(next) == Kernel::Hs {
            let m = volume(self.shapes[next.layers.end]);
            if let Some(g) = (1..=cap)
                .rev()
                .find(|&g| hs_plan(m, g * width, self.n).is_ok_and(|p| p.branch == HsBranch::NoWrap))
            {
                return g;
            }
        }
        cap
    }
}

fn locate_channel(groups: &[Placement], start: usize, width: usize) -> Result<(usize, usize)> {
    for (gi, g) in groups.iter().enumerate() {
        if start >= g.start && start + width <= g.start + g.slots.len() {
            let run = &g.slots[start - g.start..start - g.start + width];
            if run.windows(2).all(|w| w[1] == w[0] + 1) {
                return Ok((gi, run[0]));
            }
            break;
        }
    }
    Err(HeError::Layout { expected: "each channel in consecutive slots", found: format!("channel at element {start} is split") })
}

/// Compiles `model` to a sequence of metered slot-level stages.
pub fn lower(model: &ModelSpec, opts: &LowerOptions) -> Result<LoweredProgram> {
    model.validate()?;
    let fused = if opts.fuse { fuse_linear(model)? } else { unfused_stages(model)? };
    let mut lw = Lowering { model, shapes: model.shapes()?, n: model.n_slots, opts, labels: HashSet::new() };
    let n = lw.n;

    let input = match fused.first() {
        Some(f) if f.kind == StageKind::ConvPack && f.layers.start == 0 => Repr::Image,
        _ => {
            let len = volume(lw.shapes[0]);
            if len > n {
                return Err(HeError::capacity(format!("input of {len} values > N = {n}")).at_stage("input"));
            }
            Repr::dense(len)
        }
    };
    let mut repr = input.clone();
    let mut stages = Vec::new();
    let (mut flat, mut pack) = (0, 0);
    for (si, f) in fused.iter().enumerate() {
        let (op, out) = match f.kind {
            StageKind::Square => Ok((StageOp::Square, repr.clone())),
            StageKind::ConvPack => lw.conv_pack(f, &repr),
            StageKind::Linear => lw.linear(f, lw.kernel(f), &repr),
        }
        .map_err(|e| e.at_stage(&f.label))?;
        let label = lw.unique(&f.label);
        stages.push(Stage { label, op, input: repr, output: out.clone() });
        repr = out;

        let Some(next) = fused[si + 1..].iter().find(|g| g.kind != StageKind::Square) else { continue };
        let conversion = match (&repr, next.kind) {
            (Repr::Maps { count, width }, StageKind::Linear) => {
                let g = lw.merge_group(*count, *width, next);
                let ranges: Vec<Range<usize>> = (0..*count).step_by(g).map(|s| s..(s + g).min(*count)).collect();
                let groups = ranges.iter().map(|r| Placement::contiguous(r.start * width, r.len() * width)).collect();
                flat += 1;
                Some((format!("Flat{flat}"), StageOp::Merge { width: *width, groups: ranges }, Repr::Slots { groups, clean: true }))
            }
            (Repr::Sparse { count }, _) => {
                pack += 1;
                let label = format!("Pack{pack}");
                if *count > n {
                    return Err(HeError::capacity(format!("{count} outputs > N = {n}")).at_stage(&label));
                }
                Some((label, StageOp::Gather { count: *count }, Repr::dense(*count)))
            }
            _ => None,
        };
        if let Some((label, op, out)) = conversion {
            let label = lw.unique(&label);
            stages.push(Stage { label, op, input: repr, output: out.clone() });
            repr = out;
        }
    }
    Ok(LoweredProgram { model: model.clone(), input, stages, output: repr, hs: opts.hs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcompile::model::LayerSpec;

    fn small() -> ModelSpec {
        ModelSpec {
            name: "small".into(),
            input: [1, 8, 8],
            n_slots: 256,
            layers: vec![
                LayerSpec::conv(3, 1, 4, "Conv1"),
                LayerSpec::square("Square1"),
                LayerSpec::avg_pool(2, 2, "Pool1"),
                LayerSpec::flatten("Flatten"),
                LayerSpec::dense(8, "Dense1"),
                LayerSpec::square("Square2"),
                LayerSpec::dense(3, "Dense2"),
            ],
        }
    }

    #[test]
    fn stage_sequence() {
        let p = lower(&small(), &LowerOptions::default()).unwrap();
        let labels: Vec<_> = p.stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["Conv1", "Flat1", "Square1", "Pool1-Dense1", "Square2", "Dense2"]);
        assert_eq!(p.input, Repr::Image);
        assert_eq!(p.stages[0].output, Repr::Maps { count: 4, width: 36 });
        assert!(matches!(&p.stages[1].op, StageOp::Merge { groups, .. } if groups.len() == 1 && groups[0] == (0..4)));
    }

    #[test]
    fn lola_dense_inserts_gather() {
        let opts = LowerOptions { policy: Some(Kernel::LolaDense), ..Default::default() };
        let p = lower(&small(), &opts).unwrap();
        let labels: Vec<_> = p.stages.iter().map(|s| s.label.as_str()).collect();
        assert_eq!(labels, ["Conv1", "Flat1", "Square1", "Pool1-Dense1", "Pack1", "Square2", "Dense2"]);
        assert_eq!(p.output, Repr::Sparse { count: 3 });
    }

    #[test]
    fn capacity_error_names_stage() {
        let mut m = small();
        m.n_slots = 16;
        let e = lower(&m, &LowerOptions::default()).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("Conv1") && msg.contains("36 > N = 16"), "{msg}");
    }

    #[test]
    fn split_merge_when_wrap_would_occur() {
        let mut m = small();
        m.input = [1, 10, 10];
        m.layers[0] = LayerSpec::conv(3, 1, 6, "Conv1");
        m.n_slots = 512;
        m.layers[4] = LayerSpec::dense(100, "Dense1");
        let p = lower(&m, &LowerOptions::default()).unwrap();
        // 6 maps of 64 slots; 100 + 64g - 1 must fold inside 512 slots
        if let StageOp::Merge { groups, .. } = &p.stages[1].op {
            assert_eq!(groups.len(), 2);
        } else {
            panic!("merge expected");
        }
    }
}
