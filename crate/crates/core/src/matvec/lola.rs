use crate::error::{HeError, Result};
use crate::scalar::Scalar;
use crate::slotvec::{add, mul, rotate_right, Kind, MeterContext, SlotVector};

use super::{ceil_div, ceil_log2, delta, rotate_and_sum, Encoded, MatvecCost, WeightMatrix};

/// Closed-form cost of [`lola_dense_matvec`].
pub fn predict_lola_dense(m: usize, n: usize) -> Result<MatvecCost> {
    if m == 0 || n == 0 {
        return Err(HeError::shape(format!("empty {m}x{n} matrix")));
    }
    let folds = u64::from(ceil_log2(n));
    Ok(MatvecCost {
        rotations: m as u64 * folds,
        multiplications: m as u64,
        additions: m as u64 * folds,
        mask_multiplications: 0,
    })
}

/// Dense input to sparse output: one product and one rotate-and-sum per row.
///
/// Output `i` holds `(A·v)_i` in slot 0; other slots carry partial sums.
pub fn lola_dense_matvec<T: Scalar>(
    a: &WeightMatrix<T>,
    v: &Encoded<T>,
    ctx: &mut MeterContext,
) -> Result<Vec<SlotVector<T>>> {
    v.expect_dense_ciphertext()?;
    let n_slots = v.ct.n_slots();
    if a.cols() > n_slots {
        return Err(HeError::capacity(format!("n = {} > N = {n_slots}", a.cols())));
    }
    (0..a.rows())
        .map(|i| {
            let row = SlotVector::pack(a.row(i), n_slots, Kind::Plaintext)?;
            let p = mul(&v.ct, &row, ctx)?;
            rotate_and_sum(&p, a.cols(), 1, ctx)
        })
        .collect()
}

/// Result of the stacked kernel: row `i` of the product sits in slot
/// `permutation[i]`. When `clean` is false the remaining slots hold partial sums.
#[derive(Clone, Debug)]
pub struct StackedProduct<T> {
    pub ct: SlotVector<T>,
    pub permutation: Vec<usize>,
    pub clean: bool,
}

impl<T: Scalar> StackedProduct<T> {
    pub fn values(&self) -> Vec<T> {
        self.permutation.iter().map(|&p| self.ct.slot(p)).collect()
    }
}

/// Closed-form cost of [`lola_stacked_matvec`].
///
/// With `k = N/δ(n)` copies per ciphertext and `b = ⌈m/k⌉` batches this is
/// `b(k + ⌈log2 n⌉ - 1) + b - 1` rotations and `b` row multiplications. Merging
/// more than one batch additionally costs `b` masking multiplications.
pub fn predict_lola_stacked(m: usize, n: usize, n_slots: usize) -> Result<MatvecCost> {
    let block = delta(n);
    stacked_cost(m, n, n_slots, block)
}

fn stacked_cost(m: usize, n: usize, n_slots: usize, block: usize) -> Result<MatvecCost> {
    if m == 0 || n == 0 {
        return Err(HeError::shape(format!("empty {m}x{n} matrix")));
    }
    if block > n_slots {
        return Err(HeError::capacity(format!("δ(n) = {block} > N = {n_slots}")));
    }
    if m > n_slots {
        return Err(HeError::capacity(format!("m = {m} > N = {n_slots}")));
    }
    let k = (n_slots / block) as u64;
    let b = ceil_div(m, n_slots / block) as u64;
    let folds = u64::from(ceil_log2(n));
    Ok(MatvecCost {
        rotations: b * (k + folds - 1) + b - 1,
        multiplications: b,
        additions: b * (k - 1 + folds) + b - 1,
        mask_multiplications: if b > 1 { b } else { 0 },
    })
}

/// Dense input to interleaved output using stacked copies of the input.
pub fn lola_stacked_matvec<T: Scalar>(
    a: &WeightMatrix<T>,
    v: &Encoded<T>,
    ctx: &mut MeterContext,
) -> Result<StackedProduct<T>> {
    lola_stacked_with_block(a, v, delta(a.cols()), ctx)
}

/// As [`lola_stacked_matvec`] with an explicit copy stride `block`, a power of
/// two with `n ≤ block ≤ N`. The input must be zero outside slots `0..n`.
pub fn lola_stacked_with_block<T: Scalar>(
    a: &WeightMatrix<T>,
    v: &Encoded<T>,
    block: usize,
    ctx: &mut MeterContext,
) -> Result<StackedProduct<T>> {
    v.expect_dense_ciphertext()?;
    let n_slots = v.ct.n_slots();
    let (m, n) = (a.rows(), a.cols());
    if !block.is_power_of_two() || block < n {
        return Err(HeError::shape(format!("stride {block} is not a power of two ≥ n = {n}")));
    }
    stacked_cost(m, n, n_slots, block)?;
    if v.ct.slots()[n..].iter().any(|x| !x.is_zero()) {
        return Err(HeError::Layout { expected: "dense with zero tail", found: "nonzero slots beyond n".into() });
    }
    let k = n_slots / block;
    let batches = ceil_div(m, k);
    let mut permutation = vec![0; m];
    let mut acc: Option<SlotVector<T>> = None;
    for b in 0..batches {
        let mut stacked = v.ct.clone();
        for c in 1..k {
            let r = rotate_right(&v.ct, c * block, ctx)?;
            stacked = add(&stacked, &r, ctx)?;
        }
        let rows: Vec<usize> = (b * k..m.min((b + 1) * k)).collect();
        let mut plain = vec![T::zero(); n_slots];
        for (c, &i) in rows.iter().enumerate() {
            plain[c * block..c * block + n].copy_from_slice(a.row(i));
            permutation[i] = c * block + b;
        }
        let p = mul(&stacked, &SlotVector::from_slots(plain, Kind::Plaintext)?, ctx)?;
        let mut folded = rotate_and_sum(&p, n, 1, ctx)?;
        if batches > 1 {
            let mask = SlotVector::masked_scalar(T::one(), (0..rows.len()).map(|c| c * block), n_slots)?;
            folded = mul(&folded, &mask, ctx)?;
        }
        let placed = rotate_right(&folded, b, ctx)?;
        acc = Some(match acc {
            None => placed,
            Some(s) => add(&s, &placed, ctx)?,
        });
    }
    let ct = acc.expect("at least one batch");
    Ok(StackedProduct { ct, permutation, clean: batches > 1 })
}
