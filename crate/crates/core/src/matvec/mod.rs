//! Encrypted matrix-vector products over packed ciphertexts.
//!
//! Three kernels are provided, each with a closed-form cost predictor:
//! - [`hs_matvec`]: generalized-diagonal (Halevi-Shoup) method with row padding,
//! - [`lola_dense_matvec`]: one multiplication and one rotate-and-sum per row,
//! - [`lola_stacked_matvec`]: rows processed in stacked batches of `N / δ(n)`.

mod diagonals;
mod hs;
mod lola;

pub use diagonals::{diagonal_mask, extract_diagonals, GeneralizedDiagonals};
pub use hs::{hs_matvec, hs_matvec_with, hs_plan, predict_hs, HsBranch, HsOptions, HsPlan};
pub use lola::{
    lola_dense_matvec, lola_stacked_matvec, lola_stacked_with_block, predict_lola_dense, predict_lola_stacked,
    StackedProduct,
};

use rand::Rng;

use crate::error::{HeError, Result};
use crate::scalar::Scalar;
use crate::slotvec::{add, rotate_left, MeterContext, SlotVector};

/// Dense row-major `m × n` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<T>,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn new(rows: usize, cols: usize, entries: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(HeError::shape(format!("matrix must be non-empty, got {rows}x{cols}")));
        }
        if entries.len() != rows * cols {
            return Err(HeError::shape(format!(
                "{} entries for a {rows}x{cols} matrix",
                entries.len()
            )));
        }
        Ok(WeightMatrix { rows, cols, entries })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(HeError::shape("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut e = vec![T::zero(); n * n];
        for i in 0..n {
            e[i * n + i] = T::one();
        }
        Self::new(n, n, e)
    }

    /// Entries drawn uniformly from `[-1, 1)`.
    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Self> {
        let e = (0..rows * cols).map(|_| T::of(rng.gen_range(-1.0..1.0))).collect();
        Self::new(rows, cols, e)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Appends zero rows up to `rows` total.
    pub fn padded(&self, rows: usize) -> Self {
        let mut entries = self.entries.clone();
        entries.resize(rows.max(self.rows) * self.cols, T::zero());
        WeightMatrix { rows: rows.max(self.rows), cols: self.cols, entries }
    }
}

/// How a logical vector is laid out over ciphertext slots.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VectorLayout {
    /// Element `i` in slot `i` of a single ciphertext.
    Dense,
    /// Element `i` in its own ciphertext (only slot 0 is guaranteed).
    Sparse,
    /// Several copies of a dense vector at a fixed power-of-two stride.
    Stacked,
    /// Element `i` in slot `permutation[i]` of a single ciphertext.
    Interleaved(Vec<usize>),
}

impl VectorLayout {
    fn name(&self) -> &'static str {
        match self {
            VectorLayout::Dense => "dense",
            VectorLayout::Sparse => "sparse",
            VectorLayout::Stacked => "stacked",
            VectorLayout::Interleaved(_) => "interleaved",
        }
    }
}

/// A ciphertext together with its slot layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<T> {
    pub ct: SlotVector<T>,
    pub layout: VectorLayout,
}

impl<T: Scalar> Encoded<T> {
    pub fn dense(ct: SlotVector<T>) -> Self {
        Encoded { ct, layout: VectorLayout::Dense }
    }

    pub(crate) fn expect_dense_ciphertext(&self) -> Result<()> {
        if self.layout != VectorLayout::Dense {
            return Err(HeError::Layout { expected: "dense", found: self.layout.name().to_string() });
        }
        if !self.ct.is_ciphertext() {
            return Err(HeError::Layout { expected: "ciphertext", found: "plaintext".into() });
        }
        Ok(())
    }
}

/// Predicted operation counts of one kernel invocation.
///
/// `mask_multiplications` counts the extra plaintext multiplications the
/// stacked kernel needs to clear partial sums before merging batches; it is
/// zero for the other kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatvecCost {
    pub rotations: u64,
    pub multiplications: u64,
    pub additions: u64,
    pub mask_multiplications: u64,
}

impl MatvecCost {
    pub fn total_multiplications(&self) -> u64 {
        self.multiplications + self.mask_multiplications
    }
}

/// Kernel selector shared by the predictors, the sweep and the compiler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Kernel {
    Hs,
    LolaDense,
    LolaStacked,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Hs, Kernel::LolaDense, Kernel::LolaStacked];

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Hs => "hs",
            Kernel::LolaDense => "lola-dense",
            Kernel::LolaStacked => "lola-stacked",
        }
    }

    pub fn predict(self, m: usize, n: usize, n_slots: usize) -> Result<MatvecCost> {
        match self {
            Kernel::Hs => predict_hs(m, n, n_slots),
            Kernel::LolaDense => {
                if n > n_slots {
                    return Err(HeError::capacity(format!("n = {n} > N = {n_slots}")));
                }
                predict_lola_dense(m, n)
            }
            Kernel::LolaStacked => predict_lola_stacked(m, n, n_slots),
        }
    }

    /// Runs the kernel on `a` and a dense encryption of `v`, returning the
    /// product in logical order.
    pub fn run<T: Scalar>(self, a: &WeightMatrix<T>, v: &[T], n_slots: usize, ctx: &mut MeterContext) -> Result<Vec<T>> {
        let enc = Encoded::dense(SlotVector::pack(v, n_slots, crate::slotvec::Kind::Ciphertext)?);
        Ok(match self {
            Kernel::Hs => {
                let out = hs_matvec(a, &enc, ctx)?;
                out.slots()[..a.rows()].to_vec()
            }
            Kernel::LolaDense => lola_dense_matvec(a, &enc, ctx)?.iter().map(|c| c.slot(0)).collect(),
            Kernel::LolaStacked => lola_stacked_matvec(a, &enc, ctx)?.values(),
        })
    }
}

impl std::fmt::Display for Kernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Kernel {
    type Err = HeError;

    fn from_str(s: &str) -> Result<Self> {
        Kernel::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HeError::Model(format!("unknown kernel {s:?} (expected hs, lola-dense or lola-stacked)")))
    }
}

/// `⌈log2 x⌉` for `x ≥ 1` (and 0 for `x = 0`).
pub fn ceil_log2(x: usize) -> u32 {
    if x <= 1 {
        0
    } else {
        usize::BITS - (x - 1).leading_zeros()
    }
}

/// `δ(n)`: the smallest power of two not less than `n`.
pub fn delta(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

pub(crate) fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Number of folds [`rotate_and_sum`] performs for `span` slots in blocks of `block`.
pub fn fold_count(span: usize, block: usize) -> u32 {
    ceil_log2(ceil_div(span.max(block), block))
}

/// Log-depth reduction of slot residue classes.
///
/// Folds `⌈log2⌈span/block⌉⌉` times with left rotations by `block·2^t`, largest
/// step first. Afterwards slot `r < block` holds the sum of all slots
/// `r + q·block` below the padded span `block·2^folds`. The padded span must
/// fit in the ciphertext.
pub fn rotate_and_sum<T: Scalar>(
    v: &SlotVector<T>,
    span: usize,
    block: usize,
    ctx: &mut MeterContext,
) -> Result<SlotVector<T>> {
    let n = v.n_slots();
    if block == 0 || block > n {
        return Err(HeError::Range { what: "fold block", value: block, bound: n + 1 });
    }
    let folds = fold_count(span, block);
    if block << folds > n {
        return Err(HeError::capacity(format!(
            "folding {span} slots in blocks of {block} needs {} slots, have {n}",
            block << folds
        )));
    }
    let mut s = v.clone();
    for t in (0..folds).rev() {
        let r = rotate_left(&s, block << t, ctx)?;
        s = add(&s, &r, ctx)?;
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slotvec::Kind;

    #[test]
    fn log_helpers() {
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(2), 1);
        assert_eq!(ceil_log2(3), 2);
        assert_eq!(ceil_log2(4096), 12);
        assert_eq!(ceil_log2(4097), 13);
        assert_eq!(delta(3), 4);
        assert_eq!(delta(4096), 4096);
        assert_eq!(delta(845), 1024);
    }

    #[test]
    fn rotate_and_sum_examples() {
        let mut ctx = MeterContext::new();
        let vals: Vec<f64> = (1..=8).map(f64::from).collect();
        let v = SlotVector::pack(&vals, 16, Kind::Ciphertext).unwrap();
        let s = rotate_and_sum(&v, 8, 1, &mut ctx).unwrap();
        assert_eq!(s.slot(0), 36.0);
        assert_eq!(ctx.tally().rot, 3);

        let mut ctx = MeterContext::new();
        let s = rotate_and_sum(&v, 4, 4, &mut ctx).unwrap();
        assert_eq!(s, v);
        assert_eq!(ctx.tally().rot, 0);

        let mut ctx = MeterContext::new();
        let v = SlotVector::pack(&[5., 39., 12., 0.], 4, Kind::Ciphertext).unwrap();
        let s = rotate_and_sum(&v, 3, 2, &mut ctx).unwrap();
        assert_eq!(&s.slots()[..2], &[17., 39.]);
        assert_eq!(ctx.tally().rot, 1);
        assert_eq!(ctx.tally().add_cc, 1);
    }

    #[test]
    fn rotate_and_sum_errors() {
        let mut ctx = MeterContext::new();
        let v = SlotVector::<f64>::zeros(4, Kind::Ciphertext).unwrap();
        assert!(matches!(rotate_and_sum(&v, 8, 8, &mut ctx), Err(HeError::Range { .. })));
        assert!(matches!(rotate_and_sum(&v, 8, 0, &mut ctx), Err(HeError::Range { .. })));
        // 3 blocks of 3 pad to 4 blocks = 12 slots > 4
        assert!(matches!(rotate_and_sum(&v, 4, 3, &mut ctx), Err(HeError::Capacity(_))));
    }

    #[test]
    fn padded_appends_zero_rows() {
        let a = WeightMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap().padded(4);
        assert_eq!(a.rows(), 4);
        assert_eq!(a.row(3), &[0.0, 0.0]);
        assert!(WeightMatrix::<f64>::new(2, 2, vec![1.0]).is_err());
        assert!(WeightMatrix::<f64>::new(0, 2, vec![]).is_err());
    }
}
