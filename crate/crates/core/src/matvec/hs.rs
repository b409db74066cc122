use crate::error::{HeError, Result};
use crate::scalar::Scalar;
use crate::slotvec::{add, mul, rotate_right, Kind, MeterContext, SlotVector};

use super::diagonals::diagonal_mask;
use super::{ceil_div, ceil_log2, rotate_and_sum, Encoded, MatvecCost, WeightMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HsBranch {
    /// Rotated diagonals never wrap; fold over `m + n - 1` slots in blocks of `m`.
    NoWrap,
    /// Rows padded to `m' = 2^⌈log2 m⌉`, which divides `N`; fold the whole ciphertext.
    Padded,
}

/// Schedule parameters of one diagonal-method product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HsPlan {
    pub m: usize,
    pub n: usize,
    pub n_slots: usize,
    pub branch: HsBranch,
    pub m_eff: usize,
    pub fold_span: usize,
    pub folds: u32,
}

/// Chooses the branch for an `m × n` product in `n_slots` slots.
///
/// The no-wrap branch needs the folded span `m·2^⌈log2((m+n-1)/m)⌉` to fit,
/// which implies `N ≥ m + n - 1`. It is preferred whenever it applies.
pub fn hs_plan(m: usize, n: usize, n_slots: usize) -> Result<HsPlan> {
    if m == 0 || n == 0 {
        return Err(HeError::shape(format!("empty {m}x{n} matrix")));
    }
    if m > n_slots {
        return Err(HeError::capacity(format!("m = {m} > N = {n_slots}")));
    }
    if n > n_slots {
        return Err(HeError::capacity(format!("n = {n} > N = {n_slots}")));
    }
    let span = m + n - 1;
    let folds = ceil_log2(ceil_div(span, m));
    if span <= n_slots && m << folds <= n_slots {
        return Ok(HsPlan { m, n, n_slots, branch: HsBranch::NoWrap, m_eff: m, fold_span: span, folds });
    }
    let m_eff = m.next_power_of_two();
    Ok(HsPlan {
        m,
        n,
        n_slots,
        branch: HsBranch::Padded,
        m_eff,
        fold_span: n_slots,
        folds: (n_slots / m_eff).trailing_zeros(),
    })
}

/// Closed-form cost of [`hs_matvec`] without zero-diagonal skipping.
pub fn predict_hs(m: usize, n: usize, n_slots: usize) -> Result<MatvecCost> {
    let plan = hs_plan(m, n, n_slots)?;
    let diagonals = plan.m_eff as u64;
    let folds = u64::from(plan.folds);
    Ok(MatvecCost {
        rotations: diagonals - 1 + folds,
        multiplications: diagonals,
        additions: diagonals - 1 + folds,
        mask_multiplications: 0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HsOptions {
    /// Skip diagonals whose mask is entirely zero (no mul, rotate or add).
    pub skip_zero_diagonals: bool,
}

impl Default for HsOptions {
    fn default() -> Self {
        HsOptions { skip_zero_diagonals: true }
    }
}

/// `A·v` by the generalized-diagonal method.
///
/// Each diagonal mask multiplies the stationary input and the product is
/// rotated right by its diagonal index; the products are summed and folded.
/// Slots `0..m` of the result hold `A·v`. Slots `m..m_eff` hold zeros from pad
/// rows; higher slots are unspecified.
pub fn hs_matvec<T: Scalar>(a: &WeightMatrix<T>, v: &Encoded<T>, ctx: &mut MeterContext) -> Result<SlotVector<T>> {
    hs_matvec_with(a, v, HsOptions::default(), ctx)
}

pub fn hs_matvec_with<T: Scalar>(
    a: &WeightMatrix<T>,
    v: &Encoded<T>,
    opts: HsOptions,
    ctx: &mut MeterContext,
) -> Result<SlotVector<T>> {
    v.expect_dense_ciphertext()?;
    let n_slots = v.ct.n_slots();
    let plan = hs_plan(a.rows(), a.cols(), n_slots)?;
    let mut acc: Option<SlotVector<T>> = None;
    for i in 0..plan.m_eff {
        let mask = diagonal_mask(a, plan.m_eff, i, n_slots)?;
        if opts.skip_zero_diagonals && mask.is_zero() {
            continue;
        }
        let t = mul(&v.ct, &mask, ctx)?;
        let t = rotate_right(&t, i, ctx)?;
        acc = Some(match acc {
            None => t,
            Some(s) => add(&s, &t, ctx)?,
        });
    }
    let s = match acc {
        Some(s) => s,
        None => SlotVector::zeros(n_slots, Kind::Ciphertext)?,
    };
    rotate_and_sum(&s, plan.fold_span, plan.m_eff, ctx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive(a: &WeightMatrix<f64>, v: &[f64]) -> Vec<f64> {
        (0..a.rows()).map(|i| (0..a.cols()).map(|j| a.get(i, j) * v[j]).sum()).collect()
    }

    fn enc(v: &[f64], n: usize) -> Encoded<f64> {
        Encoded::dense(SlotVector::pack(v, n, Kind::Ciphertext).unwrap())
    }

    #[test]
    fn worked_two_by_two() {
        let a = WeightMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut ctx = MeterContext::new();
        let r = hs_matvec(&a, &enc(&[5.0, 6.0], 4), &mut ctx).unwrap();
        assert_eq!(&r.slots()[..2], &[17.0, 39.0]);
        assert_eq!(ctx.tally().mul_pc, 2);
        assert_eq!(ctx.tally().rot, 2);
        assert_eq!(ctx.tally().add_cc, 2);
    }

    #[test]
    fn identity_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
        let mut ctx = MeterContext::new();
        let r = hs_matvec(&WeightMatrix::identity(4).unwrap(), &enc(&v, 8), &mut ctx).unwrap();
        assert_eq!(&r.slots()[..4], &v[..]);
        assert_eq!(ctx.tally().mul_pc, 1);
        // only the fold rotation remains
        assert_eq!(ctx.tally().rot, 1);
    }

    #[test]
    fn predict_examples() {
        assert_eq!(
            predict_hs(64, 4096, 16384).unwrap(),
            MatvecCost { rotations: 70, multiplications: 64, additions: 70, mask_multiplications: 0 }
        );
        let p = predict_hs(3, 4, 4).unwrap();
        assert_eq!((p.rotations, p.multiplications), (3, 4));
        let p = predict_hs(1, 1, 4).unwrap();
        assert_eq!((p.rotations, p.multiplications), (0, 1));
        let p = predict_hs(100, 845, 8192).unwrap();
        assert_eq!((p.rotations, p.multiplications), (103, 100));
    }

    #[test]
    fn wrap_without_clean_fold_uses_padding() {
        // N >= m+n-1 holds but the padded fold span 3·4 = 12 exceeds 8
        let plan = hs_plan(3, 6, 8).unwrap();
        assert_eq!(plan.branch, HsBranch::Padded);
        assert_eq!(plan.m_eff, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = WeightMatrix::random(3, 6, &mut rng).unwrap();
        let v = [0.5, -1.0, 2.0, 0.25, 1.5, -0.75];
        let mut ctx = MeterContext::new();
        let r = hs_matvec(&a, &enc(&v, 8), &mut ctx).unwrap();
        for (x, y) in r.slots()[..3].iter().zip(naive(&a, &v)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn figure_case_padding() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..4).map(|j| (1 + i * 4 + j) as f64).collect()).collect();
        let a = WeightMatrix::from_rows(&rows).unwrap();
        let v = [1.0, -2.0, 3.0, 0.5];
        let mut ctx = MeterContext::new();
        let opts = HsOptions { skip_zero_diagonals: false };
        let r = hs_matvec_with(&a, &enc(&v, 4), opts, &mut ctx).unwrap();
        assert_eq!(&r.slots()[..3], &naive(&a, &v)[..]);
        assert_eq!(r.slot(3), 0.0);
        assert_eq!(ctx.tally().rot, 3);
        assert_eq!(ctx.tally().mul_pc, 4);
    }

    #[test]
    fn layout_and_capacity_errors() {
        let a = WeightMatrix::<f64>::identity(2).unwrap();
        let mut ctx = MeterContext::new();
        let mut v = enc(&[1.0, 2.0], 4);
        v.layout = super::super::VectorLayout::Sparse;
        assert!(matches!(hs_matvec(&a, &v, &mut ctx), Err(HeError::Layout { .. })));
        let big = WeightMatrix::<f64>::identity(8).unwrap();
        assert!(matches!(hs_matvec(&big, &enc(&[1.0], 4), &mut ctx), Err(HeError::Capacity(_))));
    }

    #[test]
    fn zero_matrix_yields_zero() {
        let a = WeightMatrix::<f64>::new(2, 3, vec![0.0; 6]).unwrap();
        let mut ctx = MeterContext::new();
        let r = hs_matvec(&a, &enc(&[1.0, 2.0, 3.0], 8), &mut ctx).unwrap();
        assert!(r.is_zero());
        assert_eq!(ctx.tally().mul_pc, 0);
    }
}
