use std::ops::Range;

use crate::error::{HeError, Result};

use super::model::{KernelPolicy, LayerKind, ModelSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageKind {
    /// Convolution evaluated by scalar multiplication of packed taps.
    ConvPack,
    /// One or more linear layers composed into a single matrix.
    Linear,
    Square,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FusedStage {
    pub label: String,
    pub kind: StageKind,
    pub layers: Range<usize>,
    pub policy: Option<KernelPolicy>,
}

fn linear_stage(model: &ModelSpec, layers: Range<usize>) -> Result<Option<FusedStage>> {
    let members: Vec<_> = model.layers[layers.clone()].iter().filter(|l| l.kind != LayerKind::Flatten).collect();
    let (first, last) = match (members.first(), members.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Ok(None),
    };
    let label = if members.len() == 1 { first.label.clone() } else { format!("{}-{}", first.label, last.label) };
    let mut policy = None;
    for l in &members {
        match (policy, l.policy) {
            (_, None) => {}
            (None, p) => policy = p,
            (Some(a), Some(b)) if a != b => {
                return Err(HeError::Model(format!("conflicting kernel policies inside fused stage {label}")));
            }
            _ => {}
        }
    }
    Ok(Some(FusedStage { label, kind: StageKind::Linear, layers, policy }))
}

fn is_conv_pack(model: &ModelSpec, i: usize) -> bool {
    let l = &model.layers[i];
    l.kind.is_conv() && (l.policy == Some(KernelPolicy::ConvPack) || (i == 0 && l.policy.is_none()))
}

/// Groups layers into stages, composing maximal runs of linear layers between
/// square activations. Conv-packed convolutions always stand alone; a
/// leading convolution is conv-packed unless it names another policy.
pub fn fuse_linear(model: &ModelSpec) -> Result<Vec<FusedStage>> {
    stages(model, true)
}

/// One stage per layer (flatten layers dropped, they do not move data).
pub fn unfused_stages(model: &ModelSpec) -> Result<Vec<FusedStage>> {
    stages(model, false)
}

fn stages(model: &ModelSpec, fuse: bool) -> Result<Vec<FusedStage>> {
    let mut out = Vec::new();
    let mut run_start: Option<usize> = None;
    let flush = |out: &mut Vec<FusedStage>, start: &mut Option<usize>, end: usize| -> Result<()> {
        if let Some(s) = start.take() {
            out.extend(linear_stage(model, s..end)?);
        }
        Ok(())
    };
    for (i, l) in model.layers.iter().enumerate() {
        if l.kind == LayerKind::Square {
            flush(&mut out, &mut run_start, i)?;
            out.push(FusedStage { label: l.label.clone(), kind: StageKind::Square, layers: i..i + 1, policy: None });
        } else if is_conv_pack(model, i) {
            flush(&mut out, &mut run_start, i)?;
            out.push(FusedStage {
                label: l.label.clone(),
                kind: StageKind::ConvPack,
                layers: i..i + 1,
                policy: Some(KernelPolicy::ConvPack),
            });
        } else if fuse {
            run_start.get_or_insert(i);
        } else {
            out.extend(linear_stage(model, i..i + 1)?);
        }
    }
    flush(&mut out, &mut run_start, model.layers.len())?;
    Ok(out)
}
