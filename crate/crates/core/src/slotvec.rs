//! Simulated SIMD ciphertexts.
//!
//! A [`SlotVector`] stands in for one ciphertext or one encoded plaintext: a
//! vector of `N` real slots, `N` a power of two. The free functions in this
//! module are the only way to combine vectors and each of them reports its
//! cost to a [`MeterContext`]. Operations never mutate their inputs.
//!
//! Metering rules:
//! - rotating a ciphertext by a nonzero amount costs one `rot`; rotating by zero
//!   and rotating plaintexts are free,
//! - add/mul with two ciphertexts is `*_cc`, with exactly one plaintext `*_pc`,
//! - plaintext-plaintext arithmetic and encoding ([`SlotVector::pack`]) are free.

use std::fmt;

use indexmap::IndexMap;

use crate::error::{HeError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Kind {
    Ciphertext,
    Plaintext,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlotVector<T> {
    slots: Vec<T>,
    kind: Kind,
}

fn check_slot_count(n_slots: usize) -> Result<()> {
    if n_slots == 0 || !n_slots.is_power_of_two() {
        return Err(HeError::capacity(format!("slot count {n_slots} is not a positive power of two")));
    }
    Ok(())
}

impl<T: Scalar> SlotVector<T> {
    /// Encodes `values` into the leading slots; the remaining slots are zero.
    pub fn pack(values: &[T], n_slots: usize, kind: Kind) -> Result<Self> {
        check_slot_count(n_slots)?;
        if values.len() > n_slots {
            return Err(HeError::capacity(format!(
                "cannot pack {} values into {n_slots} slots",
                values.len()
            )));
        }
        let mut slots = vec![T::zero(); n_slots];
        slots[..values.len()].copy_from_slice(values);
        Ok(SlotVector { slots, kind })
    }

    pub fn zeros(n_slots: usize, kind: Kind) -> Result<Self> {
        Self::pack(&[], n_slots, kind)
    }

    /// Plaintext holding `value` at each listed slot and zero elsewhere.
    pub fn masked_scalar(value: T, positions: impl IntoIterator<Item = usize>, n_slots: usize) -> Result<Self> {
        let mut v = Self::zeros(n_slots, Kind::Plaintext)?;
        for p in positions {
            if p >= n_slots {
                return Err(HeError::Range { what: "slot", value: p, bound: n_slots });
            }
            v.slots[p] = value;
        }
        Ok(v)
    }

    /// Builds a vector from a full slot array.
    pub fn from_slots(slots: Vec<T>, kind: Kind) -> Result<Self> {
        check_slot_count(slots.len())?;
        Ok(SlotVector { slots, kind })
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn kind(&self) -> Kind {
        self.kind
    }

    pub fn is_ciphertext(&self) -> bool {
        self.kind == Kind::Ciphertext
    }

    pub fn slots(&self) -> &[T] {
        &self.slots
    }

    pub fn slot(&self, i: usize) -> T {
        self.slots[i]
    }

    pub fn into_slots(self) -> Vec<T> {
        self.slots
    }

    /// True when every slot is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.slots.iter().all(|x| x.is_zero())
    }
}

/// The five metered operation classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpClass {
    AddPc,
    AddCc,
    MulPc,
    MulCc,
    Rot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct OpTally {
    pub add_pc: u64,
    pub add_cc: u64,
    pub mul_pc: u64,
    pub mul_cc: u64,
    pub rot: u64,
}

impl OpTally {
    pub fn total(&self) -> u64 {
        self.add_pc + self.add_cc + self.mul_pc + self.mul_cc + self.rot
    }

    pub fn record(&mut self, op: OpClass) {
        match op {
            OpClass::AddPc => self.add_pc += 1,
            OpClass::AddCc => self.add_cc += 1,
            OpClass::MulPc => self.mul_pc += 1,
            OpClass::MulCc => self.mul_cc += 1,
            OpClass::Rot => self.rot += 1,
        }
    }

    /// Counters in report column order: add_pc, add_cc, mul_pc, mul_cc, rot.
    pub fn columns(&self) -> [u64; 5] {
        [self.add_pc, self.add_cc, self.mul_pc, self.mul_cc, self.rot]
    }
}

impl std::ops::Add for OpTally {
    type Output = OpTally;

    fn add(self, o: OpTally) -> OpTally {
        OpTally {
            add_pc: self.add_pc + o.add_pc,
            add_cc: self.add_cc + o.add_cc,
            mul_pc: self.mul_pc + o.mul_pc,
            mul_cc: self.mul_cc + o.mul_cc,
            rot: self.rot + o.rot,
        }
    }
}

impl std::ops::AddAssign for OpTally {
    fn add_assign(&mut self, o: OpTally) {
        *self = *self + o;
    }
}

impl std::iter::Sum for OpTally {
    fn sum<I: Iterator<Item = OpTally>>(iter: I) -> OpTally {
        iter.fold(OpTally::default(), |a, b| a + b)
    }
}

impl fmt::Display for OpTally {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={} add_pc={} add_cc={} mul_pc={} mul_cc={} rot={}",
            self.total(),
            self.add_pc,
            self.add_cc,
            self.mul_pc,
            self.mul_cc,
            self.rot
        )
    }
}

/// Operation counters for one execution, with a per-layer breakdown.
///
/// Operations are attributed to the layer opened by the most recent
/// [`MeterContext::begin_layer`]; operations recorded before any layer is
/// opened only reach the global tally.
#[derive(Clone, Debug, Default)]
pub struct MeterContext {
    tally: OpTally,
    per_layer: IndexMap<String, OpTally>,
    current: Option<usize>,
}

impl MeterContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_layer(&mut self, label: &str) {
        let entry = self.per_layer.entry(label.to_string());
        self.current = Some(entry.index());
        entry.or_default();
    }

    pub fn end_layer(&mut self) {
        self.current = None;
    }

    pub fn record(&mut self, op: OpClass) {
        self.tally.record(op);
        if let Some(i) = self.current {
            self.per_layer[i].record(op);
        }
    }

    pub fn tally(&self) -> OpTally {
        self.tally
    }

    pub fn per_layer(&self) -> &IndexMap<String, OpTally> {
        &self.per_layer
    }
}

fn check_rotation<T: Scalar>(v: &SlotVector<T>, r: usize) -> Result<()> {
    if r >= v.n_slots() {
        return Err(HeError::Range { what: "rotation", value: r, bound: v.n_slots() });
    }
    Ok(())
}

fn meter_rotation<T: Scalar>(v: &SlotVector<T>, r: usize, ctx: &mut MeterContext) {
    if r != 0 && v.is_ciphertext() {
        ctx.record(OpClass::Rot);
    }
}

/// Output slot `j` holds `v[(j - r) mod N]`.
pub fn rotate_right<T: Scalar>(v: &SlotVector<T>, r: usize, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    check_rotation(v, r)?;
    meter_rotation(v, r, ctx);
    let mut out = v.clone();
    out.slots.rotate_right(r);
    Ok(out)
}

/// Output slot `j` holds `v[(j + r) mod N]`.
pub fn rotate_left<T: Scalar>(v: &SlotVector<T>, r: usize, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    check_rotation(v, r)?;
    meter_rotation(v, r, ctx);
    let mut out = v.clone();
    out.slots.rotate_left(r);
    Ok(out)
}

fn binary<T: Scalar>(
    a: &SlotVector<T>,
    b: &SlotVector<T>,
    pc: OpClass,
    cc: OpClass,
    ctx: &mut MeterContext,
    f: impl Fn(T, T) -> T,
) -> Result<SlotVector<T>> {
    if a.n_slots() != b.n_slots() {
        return Err(HeError::shape(format!("slot counts differ: {} vs {}", a.n_slots(), b.n_slots())));
    }
    let kind = match (a.kind, b.kind) {
        (Kind::Ciphertext, Kind::Ciphertext) => {
            ctx.record(cc);
            Kind::Ciphertext
        }
        (Kind::Plaintext, Kind::Plaintext) => Kind::Plaintext,
        _ => {
            ctx.record(pc);
            Kind::Ciphertext
        }
    };
    let slots = a.slots.iter().zip(&b.slots).map(|(&x, &y)| f(x, y)).collect();
    Ok(SlotVector { slots, kind })
}

pub fn add<T: Scalar>(a: &SlotVector<T>, b: &SlotVector<T>, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    binary(a, b, OpClass::AddPc, OpClass::AddCc, ctx, |x, y| x + y)
}

pub fn mul<T: Scalar>(a: &SlotVector<T>, b: &SlotVector<T>, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    binary(a, b, OpClass::MulPc, OpClass::MulCc, ctx, |x, y| x * y)
}

/// Left-fold sum of a non-empty sequence.
pub fn sum<'a, T: Scalar>(
    vs: impl IntoIterator<Item = &'a SlotVector<T>>,
    ctx: &mut MeterContext,
) -> Result<SlotVector<T>> {
    let mut it = vs.into_iter();
    let first = it.next().ok_or_else(|| HeError::shape("sum of an empty sequence"))?;
    it.try_fold(first.clone(), |acc, v| add(&acc, v, ctx))
}
