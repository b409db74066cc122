//! Randomized self-checks: every kernel and every lowered program against
//! the cleartext reference.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::matvec::{hs_matvec_with, hs_plan, predict_hs, Encoded, HsBranch, HsOptions, Kernel, WeightMatrix};
use crate::netcompile::{
    builtin, execute, lower, random_input, LayerSpec, LowerOptions, ModelSpec, ModelWeights, BUILTIN_NAMES,
};
use crate::refmodel::{ref_forward, ref_matvec};
use crate::slotvec::{Kind, MeterContext, SlotVector};

/// `max|x - y| / max|y|`, or the absolute error when `y` is zero.
pub fn relative_error(x: &[f64], y: &[f64]) -> f64 {
    if x.len() != y.len() {
        return f64::INFINITY;
    }
    let diff = x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = y.iter().map(|b| b.abs()).fold(0.0, f64::max);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub tolerance: f64,
    pub max_error: f64,
    pub failures: Vec<String>,
}

impl CheckResult {
    fn new(name: impl Into<String>, tolerance: f64) -> Self {
        CheckResult { name: name.into(), cases: 0, tolerance, max_error: 0.0, failures: Vec::new() }
    }

    fn error(&mut self, what: impl FnOnce() -> String, err: f64) {
        self.max_error = self.max_error.max(err);
        if err.is_nan() || err >= self.tolerance {
            self.fail(format!("{}: error {err:.3e}", what()));
        }
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < 10 {
            self.failures.push(msg);
        }
        if self.max_error < self.tolerance {
            self.max_error = self.max_error.max(self.tolerance);
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        write!(
            f,
            "{verdict} {:<34} cases={:<5} max_err={:.3e} tol={:.0e}",
            self.name, self.cases, self.max_error, self.tolerance
        )?;
        for m in &self.failures {
            write!(f, "\n    {m}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VerifyOptions {
    pub cases: usize,
    pub model_draws: usize,
    pub seed: u64,
    /// Corrupts one kernel output so the failure path can be exercised.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { cases: 500, model_draws: 20, seed: 0, inject_fault: false }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        write!(f, "{}", if self.passed() { "all checks passed" } else { "verification FAILED" })
    }
}

fn random_vec(len: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Each kernel on random `(m, n, N)` with `m, n ≤ N`; values and counts
/// are compared with the oracle and the predictors.
pub fn kernel_suite(cases: usize, seed: u64, inject_fault: bool) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<CheckResult> =
        Kernel::ALL.iter().map(|k| CheckResult::new(format!("kernel {k} vs oracle"), 1e-9)).collect();
    for case in 0..cases {
        let n_slots = 1 << rng.gen_range(4..=8);
        let m = rng.gen_range(1..=n_slots.min(48));
        let n = rng.gen_range(1..=n_slots.min(48));
        let a = WeightMatrix::random(m, n, &mut rng)?;
        let v = random_vec(n, &mut rng);
        let want = ref_matvec(&a, &v)?;
        for (check, kernel) in out.iter_mut().zip(Kernel::ALL) {
            check.cases += 1;
            let mut ctx = MeterContext::new();
            let mut got = kernel.run(&a, &v, n_slots, &mut ctx)?;
            if inject_fault && case == 0 && kernel == Kernel::Hs {
                got[0] += 1.0;
            }
            check.error(|| format!("{kernel} m={m} n={n} N={n_slots}"), relative_error(&got, &want));
            let p = kernel.predict(m, n, n_slots)?;
            let t = ctx.tally();
            if !counts_agree(kernel, m, n, n_slots, t.rot, t.mul_pc)? {
                check.fail(format!(
                    "{kernel} m={m} n={n} N={n_slots}: measured rot={} mul={} predicted {}/{}",
                    t.rot,
                    t.mul_pc,
                    p.rotations,
                    p.total_multiplications()
                ));
            }
        }
    }
    Ok(out)
}

/// Measured counts equal the prediction, except on the padded diagonal
/// branch where skipped all-zero diagonals may lower them.
pub fn counts_agree(kernel: Kernel, m: usize, n: usize, n_slots: usize, rot: u64, mul: u64) -> Result<bool> {
    let p = kernel.predict(m, n, n_slots)?;
    let padded = kernel == Kernel::Hs && hs_plan(m, n, n_slots)?.branch == HsBranch::Padded;
    Ok(if padded {
        rot <= p.rotations && mul <= p.total_multiplications()
    } else {
        rot == p.rotations && mul == p.total_multiplications()
    })
}

/// Diagonal method where `N < m + n - 1`, with zero skipping off; the
/// rotation count must be `m' - 1 + log2(N/m')`.
pub fn padding_suite(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let mut check = CheckResult::new("hs padding branch", 1e-9);
    let opts = HsOptions { skip_zero_diagonals: false };
    while check.cases < cases {
        let n_slots: usize = [16, 32, 64][rng.gen_range(0..3)];
        let m = rng.gen_range(1..=n_slots);
        let n = rng.gen_range(1..=n_slots);
        if n_slots >= m + n - 1 || m.next_power_of_two() > n_slots {
            continue;
        }
        check.cases += 1;
        let a = WeightMatrix::random(m, n, &mut rng)?;
        let v = random_vec(n, &mut rng);
        let mut ctx = MeterContext::new();
        let enc = Encoded::dense(SlotVector::pack(&v, n_slots, Kind::Ciphertext)?);
        let got = hs_matvec_with(&a, &enc, opts, &mut ctx)?;
        check.error(|| format!("m={m} n={n} N={n_slots}"), relative_error(&got.slots()[..m], &ref_matvec(&a, &v)?));
        let mp = m.next_power_of_two();
        let want = (mp - 1) as u64 + u64::from((n_slots / mp).trailing_zeros());
        let pred = predict_hs(m, n, n_slots)?.rotations;
        if ctx.tally().rot != want || pred != want {
            check.fail(format!("m={m} n={n} N={n_slots}: rot={} predicted={pred} expected={want}", ctx.tally().rot));
        }
    }
    Ok(check)
}

/// A small random network that fits in `n_slots ≥ 256` slots.
pub fn random_model(rng: &mut impl Rng, n_slots: usize) -> ModelSpec {
    let c = rng.gen_range(1..=2);
    let d: usize = rng.gen_range(5..=9);
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut side = d;
    let label = |layers: &Vec<LayerSpec>, prefix: &str| format!("{prefix}{}", layers.len() + 1);
    let conv = |rng: &mut dyn rand::RngCore, side: usize, label: String| {
        let k = rng.gen_range(1..=side.min(3));
        LayerSpec::conv(k, rng.gen_range(1..=2), rng.gen_range(1..=3), &label)
    };
    for i in 0..1 + rng.gen_range(0..=3) {
        let l = match if i == 0 { 2 } else { rng.gen_range(0..3) } {
            0 => LayerSpec::square(&label(&layers, "Square")),
            1 => {
                let k = rng.gen_range(1..=side.min(2));
                LayerSpec::avg_pool(k, rng.gen_range(1..=2), &label(&layers, "Pool"))
            }
            _ => conv(rng, side, label(&layers, "Conv")),
        };
        if l.k.is_some() {
            side = (side - l.kernel()) / l.stride() + 1;
        }
        layers.push(l);
    }
    if rng.gen_bool(0.5) {
        layers.push(LayerSpec::flatten(&label(&layers, "Flatten")));
    }
    layers.push(LayerSpec::dense(rng.gen_range(1..=6), &label(&layers, "Dense")));
    if rng.gen_bool(0.5) {
        layers.push(LayerSpec::square(&label(&layers, "Square")));
        layers.push(LayerSpec::dense(rng.gen_range(1..=4), &label(&layers, "Dense")));
    }
    ModelSpec { name: "random".into(), input: [c, d, d], n_slots, layers }
}

/// Random networks under every kernel policy: fused and unfused programs
/// must agree with each other and with the reference forward pass.
pub fn fusion_suite(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut check = CheckResult::new("fused vs unfused", 1e-9);
    for case in 0..cases {
        let model = random_model(&mut rng, 1024);
        let policy = [None, Some(Kernel::Hs), Some(Kernel::LolaDense), Some(Kernel::LolaStacked)][case % 4];
        let weights = ModelWeights::<f64>::random(&model, rng.gen())?;
        let input = random_input(&model, rng.gen());
        let want = ref_forward(&model, &weights, &input)?;
        let fused = lower(&model, &LowerOptions { policy, ..Default::default() })?;
        let unfused = lower(&model, &LowerOptions { policy, fuse: false, ..Default::default() })?;
        let (a, _) = execute(&fused, &weights, &input, &mut MeterContext::new())?;
        let (b, _) = execute(&unfused, &weights, &input, &mut MeterContext::new())?;
        check.cases += 1;
        let what = || format!("case {case} policy {policy:?}: {}", model.to_json().replace(char::is_whitespace, ""));
        check.error(what, relative_error(&a, &b).max(relative_error(&a, &want)));
    }
    Ok(check)
}

/// Builtin networks end to end against the reference forward pass.
pub fn model_suite(draws: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for name in BUILTIN_NAMES {
        let model = builtin(name)?;
        let program = lower(&model, &LowerOptions::default())?;
        let mut check = CheckResult::new(format!("{name} end to end"), 1e-7);
        for draw in 0..draws {
            let s = seed.wrapping_mul(1000).wrapping_add(draw as u64);
            let weights = ModelWeights::<f64>::random(&model, s)?;
            let input = random_input(&model, s ^ 0xabcd);
            let (got, _) = execute(&program, &weights, &input, &mut MeterContext::new())?;
            check.cases += 1;
            check.error(|| format!("draw {draw}"), relative_error(&got, &ref_forward(&model, &weights, &input)?));
        }
        out.push(check);
    }
    Ok(out)
}

pub fn verify_all(opts: &VerifyOptions) -> Result<VerifyReport> {
    let mut checks = kernel_suite(opts.cases, opts.seed, opts.inject_fault)?;
    checks.push(padding_suite(opts.cases.clamp(1, 200), opts.seed)?);
    checks.push(fusion_suite(opts.cases.clamp(1, 100), opts.seed)?);
    checks.extend(model_suite(opts.model_draws, opts.seed)?);
    Ok(VerifyReport { checks })
}
