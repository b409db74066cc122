use crate::error::{HeError, Result};
use crate::scalar::Scalar;
use crate::slotvec::{Kind, SlotVector};

use super::hs::hs_plan;
use super::WeightMatrix;

/// Generalized diagonals of a (possibly row-padded) matrix.
///
/// `masks[i][j] = A[(i + j) mod m_eff, j]` for `j < n`, zero elsewhere, where
/// rows `m..m_eff` of `A` are zero padding.
#[derive(Clone, Debug)]
pub struct GeneralizedDiagonals<T> {
    pub m: usize,
    pub n: usize,
    pub m_eff: usize,
    pub masks: Vec<SlotVector<T>>,
}

impl<T: Scalar> GeneralizedDiagonals<T> {
    /// Number of mask positions that map to a real (non-padding) row.
    pub fn structural_positions(&self) -> usize {
        (0..self.m_eff).map(|i| (0..self.n).filter(|j| (i + j) % self.m_eff < self.m).count()).sum()
    }
}

/// The `i`-th generalized diagonal of `a` taken modulo `m_eff` rows.
pub fn diagonal_mask<T: Scalar>(a: &WeightMatrix<T>, m_eff: usize, i: usize, n_slots: usize) -> Result<SlotVector<T>> {
    if a.cols() > n_slots {
        return Err(HeError::capacity(format!("n = {} > N = {n_slots}", a.cols())));
    }
    let mut slots = vec![T::zero(); n_slots];
    for (j, slot) in slots.iter_mut().enumerate().take(a.cols()) {
        let r = (i + j) % m_eff;
        if r < a.rows() {
            *slot = a.get(r, j);
        }
    }
    SlotVector::from_slots(slots, Kind::Plaintext)
}

pub fn extract_diagonals<T: Scalar>(a: &WeightMatrix<T>, n_slots: usize) -> Result<GeneralizedDiagonals<T>> {
    let plan = hs_plan(a.rows(), a.cols(), n_slots)?;
    let masks = (0..plan.m_eff).map(|i| diagonal_mask(a, plan.m_eff, i, n_slots)).collect::<Result<_>>()?;
    Ok(GeneralizedDiagonals { m: a.rows(), n: a.cols(), m_eff: plan.m_eff, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let a = WeightMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let d = extract_diagonals(&a, 4).unwrap();
        assert_eq!(d.m_eff, 2);
        assert_eq!(&d.masks[0].slots()[..2], &[1.0, 4.0]);
        assert_eq!(&d.masks[1].slots()[..2], &[3.0, 2.0]);
        assert_eq!(&d.masks[1].slots()[2..], &[0.0, 0.0]);
    }

    #[test]
    fn padding_case_appends_one_row() {
        let rows: Vec<Vec<f64>> = (0..3).map(|i| (0..4).map(|j| (i * 4 + j + 1) as f64).collect()).collect();
        let a = WeightMatrix::from_rows(&rows).unwrap();
        let d = extract_diagonals(&a, 4).unwrap();
        assert_eq!(d.m_eff, 4);
        assert_eq!(d.masks.len(), 4);
        // diagonal 1: rows 1,2,3(pad),0
        assert_eq!(d.masks[1].slots(), &[5.0, 10.0, 0.0, 4.0]);
        assert_eq!(d.structural_positions(), 12);
    }

    #[test]
    fn identity_diagonals() {
        let d = extract_diagonals(&WeightMatrix::<f64>::identity(4).unwrap(), 4).unwrap();
        assert_eq!(d.masks[0].slots(), &[1.0; 4]);
        assert!(d.masks[1..].iter().all(SlotVector::is_zero));
    }

    #[test]
    fn capacity_errors() {
        let a = WeightMatrix::<f64>::new(5, 1, vec![1.0; 5]).unwrap();
        assert!(matches!(extract_diagonals(&a, 4), Err(HeError::Capacity(_))));
        let a = WeightMatrix::<f64>::new(1, 5, vec![1.0; 5]).unwrap();
        assert!(matches!(extract_diagonals(&a, 4), Err(HeError::Capacity(_))));
    }
}
