//! Predicted and measured kernel costs over a grid of shapes.

use std::fmt::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{HeError, Result};
use crate::matvec::{Kernel, MatvecCost, WeightMatrix};
use crate::slotvec::{MeterContext, OpTally};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GridPoint {
    pub kernel: Kernel,
    pub n: usize,
    pub m: usize,
    pub n_slots: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub point: GridPoint,
    pub predicted: MatvecCost,
    pub measured: Option<OpTally>,
}

/// Powers of two from `lo` to `hi` inclusive, written `lo:hi`.
pub fn parse_range(s: &str) -> Result<Vec<usize>> {
    let bad = || HeError::Model(format!("range {s:?} must be lo:hi with power-of-two bounds"));
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if !lo.is_power_of_two() || !hi.is_power_of_two() || lo > hi {
        return Err(bad());
    }
    Ok(std::iter::successors(Some(lo), |&x| Some(x * 2)).take_while(|&x| x <= hi).collect())
}

/// Every combination, sorted by kernel, `n`, `m`, `N`.
pub fn grid(kernels: &[Kernel], ns: &[usize], ms: &[usize], slot_counts: &[usize]) -> Vec<GridPoint> {
    let mut pts = Vec::new();
    for &kernel in kernels {
        for &n in ns {
            for &m in ms {
                for &n_slots in slot_counts {
                    pts.push(GridPoint { kernel, n, m, n_slots });
                }
            }
        }
    }
    pts.sort();
    pts.dedup();
    pts
}

fn point_seed(p: &GridPoint, seed: u64) -> u64 {
    let k = p.kernel as u64;
    seed ^ (k << 60) ^ ((p.n as u64) << 40) ^ ((p.m as u64) << 20) ^ p.n_slots as u64
}

/// Prediction for `p`, plus a metered run on a random matrix when `measure` is set.
pub fn evaluate(p: GridPoint, measure: bool, seed: u64) -> Result<SweepRow> {
    let predicted = p.kernel.predict(p.m, p.n, p.n_slots)?;
    let measured = if measure {
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed(&p, seed));
        let a = WeightMatrix::<f64>::random(p.m, p.n, &mut rng)?;
        let v: Vec<f64> = (0..p.n).map(|j| (j % 7) as f64 - 3.0).collect();
        let mut ctx = MeterContext::new();
        p.kernel.run(&a, &v, p.n_slots, &mut ctx)?;
        Some(ctx.tally())
    } else {
        None
    };
    Ok(SweepRow { point: p, predicted, measured })
}

pub fn csv_header(measure: bool) -> &'static str {
    if measure {
        "method,n,m,N,rotations,multiplications,mask_multiplications,measured_rotations,measured_multiplications"
    } else {
        "method,n,m,N,rotations,multiplications,mask_multiplications"
    }
}

pub fn to_csv(rows: &[SweepRow], measure: bool) -> String {
    let mut out = format!("{}\n", csv_header(measure));
    for r in rows {
        let p = r.point;
        write!(
            out,
            "{},{},{},{},{},{},{}",
            p.kernel, p.n, p.m, p.n_slots, r.predicted.rotations, r.predicted.multiplications, r.predicted.mask_multiplications
        )
        .unwrap();
        if let (true, Some(t)) = (measure, r.measured) {
            write!(out, ",{},{}", t.rot, t.mul_pc).unwrap();
        }
        out.push('\n');
    }
    out
}
