use std::ops::Range;

use crate::convlower::{conv_pack, conv_packed_forward, conv_to_sparse, merge_maps, packed_forward, pool_to_sparse, square_layer};
use crate::error::{HeError, Result};
use crate::matvec::{hs_matvec_with, lola_dense_matvec, lola_stacked_with_block, Encoded, Kernel};
use crate::refmodel::Tensor3;
use crate::scalar::Scalar;
use crate::slotvec::{add, mul, rotate_left, rotate_right, Kind, MeterContext, SlotVector};
use crate::sparse::SparseMatrix;

use super::lower::{LoweredProgram, Placement, Repr, Stage, StageOp};
use super::model::{random_input, LayerKind, LayerWeights, ModelWeights};
use super::report::OpReport;

fn filters<T>(weights: &ModelWeights<T>, layer: usize) -> Result<&crate::convlower::FilterBank<T>> {
    match &weights.layers[layer] {
        LayerWeights::Conv(f) => Ok(f),
        _ => Err(HeError::shape(format!("layer {layer} has no filters"))),
    }
}

/// Composed matrix and bias of `layers`, multiplied from the last layer back.
pub fn fused_affine<T: Scalar>(
    program: &LoweredProgram,
    weights: &ModelWeights<T>,
    layers: Range<usize>,
) -> Result<(SparseMatrix<T>, Vec<T>)> {
    let model = &program.model;
    let shapes = model.shapes()?;
    let (c, h, w) = shapes[layers.start];
    let mut bias = vec![T::zero(); c * h * w];
    let mut mats = Vec::new();
    for i in layers {
        let (a, b) = match (model.layers[i].kind, &weights.layers[i]) {
            (LayerKind::Conv | LayerKind::SubConv, LayerWeights::Conv(f)) => {
                let (a, b) = conv_to_sparse(&model.conv_shape(i)?, f)?;
                (a, Some(b))
            }
            (LayerKind::AvgPool, _) => (pool_to_sparse(&model.conv_shape(i)?)?, None),
            (LayerKind::Dense, LayerWeights::Dense { matrix, bias }) => (SparseMatrix::from_dense(matrix), Some(bias.clone())),
            (LayerKind::Flatten, _) => continue,
            _ => return Err(HeError::shape(format!("layer {} cannot be fused", model.layers[i].label))),
        };
        bias = a.apply(&bias)?;
        if let Some(b) = b {
            bias.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        mats.push(a);
    }
    let mut it = mats.into_iter().rev();
    let mut acc = it.next().ok_or_else(|| HeError::shape("empty linear stage"))?;
    for a in it {
        acc = acc.compose(&a)?;
    }
    Ok((acc, bias))
}

fn sum_all<T: Scalar>(mut cts: impl Iterator<Item = SlotVector<T>>, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    let first = cts.next().ok_or_else(|| HeError::shape("nothing to sum"))?;
    cts.try_fold(first, |acc, c| add(&acc, &c, ctx))
}

fn placed_plain<T: Scalar>(values: &[T], placement: &Placement, n_slots: usize) -> Result<SlotVector<T>> {
    let mut slots = vec![T::zero(); n_slots];
    for (t, &s) in placement.slots.iter().enumerate() {
        slots[s] = values[placement.start + t];
    }
    SlotVector::from_slots(slots, Kind::Plaintext)
}

fn placement_of(repr: &Repr) -> Result<&[Placement]> {
    match repr {
        Repr::Slots { groups, .. } => Ok(groups),
        other => Err(HeError::Layout { expected: "slot placement", found: other.to_string() }),
    }
}

struct Runner<'a, T> {
    program: &'a LoweredProgram,
    weights: &'a ModelWeights<T>,
    input: &'a Tensor3<T>,
}

impl<T: Scalar> Runner<'_, T> {
    fn stage(&self, stage: &Stage, cts: Vec<SlotVector<T>>, ctx: &mut MeterContext) -> Result<Vec<SlotVector<T>>> {
        let n = self.program.n_slots();
        match &stage.op {
            StageOp::ConvPack { layer, shape } => {
                let packed = conv_pack(self.input, *shape, n)?;
                conv_packed_forward(&packed, filters(self.weights, *layer)?, ctx)
            }
            StageOp::PackedConv { layer, shape, channels } => {
                let vectors = channels
                    .iter()
                    .map(|&(ci, offset)| rotate_left(&cts[ci], offset, ctx))
                    .collect::<Result<Vec<_>>>()?;
                packed_forward(&vectors, shape.d_out * shape.d_out, filters(self.weights, *layer)?, ctx)
            }
            StageOp::Merge { width, groups } => groups.iter().map(|r| merge_maps(&cts[r.clone()], *width, ctx)).collect(),
            StageOp::Gather { .. } => {
                let e0 = SlotVector::masked_scalar(T::one(), [0], n)?;
                let mut parts = Vec::with_capacity(cts.len());
                for (i, c) in cts.iter().enumerate() {
                    parts.push(rotate_right(&mul(c, &e0, ctx)?, i, ctx)?);
                }
                Ok(vec![sum_all(parts.into_iter(), ctx)?])
            }
            StageOp::Square => cts.iter().map(|c| square_layer(c, ctx)).collect(),
            StageOp::Linear { layers, kernel, m, widths, block, mask_input, biased } => {
                let (fused, bias) = fused_affine(self.program, self.weights, layers.clone())?;
                let groups = placement_of(&stage.input)?;
                let mut outs: Vec<Vec<SlotVector<T>>> = Vec::with_capacity(groups.len());
                for ((g, ct), &w) in groups.iter().zip(&cts).zip(widths) {
                    let cols: Vec<usize> = (g.start..g.start + g.slots.len()).collect();
                    let a = fused.scatter_columns(&cols, &g.slots, w)?;
                    let ct = if *mask_input {
                        mul(ct, &SlotVector::masked_scalar(T::one(), g.slots.iter().copied(), n)?, ctx)?
                    } else {
                        ct.clone()
                    };
                    let v = Encoded::dense(ct);
                    outs.push(match kernel {
                        Kernel::Hs => vec![hs_matvec_with(&a, &v, self.program.hs, ctx)?],
                        Kernel::LolaDense => lola_dense_matvec(&a, &v, ctx)?,
                        Kernel::LolaStacked => vec![lola_stacked_with_block(&a, &v, *block, ctx)?.ct],
                    });
                }
                let width = outs.first().map_or(0, Vec::len);
                let mut summed = Vec::with_capacity(width);
                for j in 0..width {
                    summed.push(sum_all(outs.iter().map(|o| o[j].clone()), ctx)?);
                }
                if !*biased {
                    return Ok(summed);
                }
                match &stage.output {
                    Repr::Sparse { .. } => summed
                        .iter()
                        .zip(&bias)
                        .map(|(c, &b)| add(c, &SlotVector::masked_scalar(b, [0], n)?, ctx))
                        .collect(),
                    out => {
                        let p = placement_of(out)?;
                        debug_assert_eq!(p[0].slots.len(), *m);
                        Ok(vec![add(&summed[0], &placed_plain(&bias, &p[0], n)?, ctx)?])
                    }
                }
            }
        }
    }
}

/// Reads the logical output vector out of the final ciphertexts.
pub fn decode<T: Scalar>(repr: &Repr, cts: &[SlotVector<T>]) -> Result<Vec<T>> {
    if repr.ciphertexts() != cts.len() {
        return Err(HeError::shape(format!("{} ciphertexts for {repr}", cts.len())));
    }
    Ok(match repr {
        Repr::Image => Vec::new(),
        Repr::Maps { width, .. } => cts.iter().flat_map(|c| c.slots()[..*width].iter().copied()).collect(),
        Repr::Slots { groups, .. } => {
            let len: usize = groups.iter().map(|g| g.slots.len()).sum();
            let mut out = vec![T::zero(); len];
            for (g, c) in groups.iter().zip(cts) {
                for (t, &s) in g.slots.iter().enumerate() {
                    out[g.start + t] = c.slot(s);
                }
            }
            out
        }
        Repr::Sparse { .. } => cts.iter().map(|c| c.slot(0)).collect(),
    })
}

/// Runs `program` on encrypted `input`, metering every stage into `ctx`.
/// Returns the decoded output vector and the per-stage report.
pub fn execute<T: Scalar>(
    program: &LoweredProgram,
    weights: &ModelWeights<T>,
    input: &Tensor3<T>,
    ctx: &mut MeterContext,
) -> Result<(Vec<T>, OpReport)> {
    let model = &program.model;
    weights.check(model)?;
    let [c, d, _] = model.input;
    if input.dims() != (c, d, d) {
        return Err(HeError::shape(format!("input {:?} but model expects ({c}, {d}, {d})", input.dims())));
    }
    let mut cts = match program.input {
        Repr::Image => Vec::new(),
        _ => vec![SlotVector::pack(input.values(), model.n_slots, Kind::Ciphertext)?],
    };
    if program.stages.is_empty() {
        return Ok((input.values().to_vec(), OpReport::from_context(program, ctx)));
    }
    let runner = Runner { program, weights, input };
    for stage in &program.stages {
        ctx.begin_layer(&stage.label);
        let res = runner.stage(stage, cts, ctx);
        ctx.end_layer();
        cts = res.map_err(|e| e.at_stage(&stage.label))?;
    }
    let out = decode(&program.output, &cts)?;
    Ok((out, OpReport::from_context(program, ctx)))
}

/// Executes with seeded random weights and input.
pub fn execute_random(program: &LoweredProgram, seed: u64) -> Result<(Vec<f64>, OpReport)> {
    let weights = ModelWeights::random(&program.model, seed)?;
    let input = random_input(&program.model, seed.wrapping_add(1));
    execute(program, &weights, &input, &mut MeterContext::new())
}
