//! Scalar numerics shared by the forward and gradient code.

/// Logistic function, evaluated through the branch that only ever
/// exponentiates a nonpositive argument.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)`, finite for every finite `x`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `ln Σ exp(v)` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    if max == f64::INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// `ln(e^a + e^b)`.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Writes `ln softmax(logits)` into `out`.
pub fn log_softmax_into(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let lse = log_sum_exp(logits);
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = l - lse;
    }
}

/// Smallest probability passed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-300;

/// `ln(PROB_FLOOR)`; log-probabilities are clamped from below at this value.
pub fn log_prob_floor() -> f64 {
    PROB_FLOOR.ln()
}

/// Dot product of a weight row with a binary input encoded as 0/1 bytes.
#[inline]
pub(crate) fn dot_bits(weights: &[f64], bits: &[u8]) -> f64 {
    debug_assert_eq!(weights.len(), bits.len());
    weights.iter().zip(bits).map(|(w, &b)| w * f64::from(b)).sum()
}
