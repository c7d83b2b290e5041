//! Empirical log-likelihood of one conditional and its exact gradient.
//!
//! For a two-layer conditional the gradient is the posterior expectation
//! over intermediate configurations: with
//! `p_i(f) ∝ p(x_{k+1} | f; θ₂) p(f | prefix; θ₁)` normalized by `W_i`,
//!
//! * `∂L/∂θ₁ = mean_i E_{p_i}[∂ ln p(F | prefix; θ₁)]`
//! * `∂L/∂θ₂ = mean_i E_{p_i}[∂ ln p(x_{k+1} | F; θ₂)]`
//!
//! both evaluated exactly by enumerating all `2^l` configurations. Because
//! `p(F | prefix)` factorizes over blocks, the first expectation collapses to
//! `(A_i − B_i) / W_i · ∂q_i` per block, where `A_i`/`B_i` are the second-layer
//! likelihood averaged with `F_i` pinned to one/zero.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{log_prob_floor, log_sigmoid, log_sum_exp, PROB_FLOOR};
use crate::model::{
    check_symbol, latent_log_prior_into, latent_prior_into, mask_bits_into, BlockScratch, ConditionalKind,
    ConditionalModel, EvalScratch, LatentTable, MixtureView, SwitchBlock,
};

/// Identical `(prefix, target)` pairs of a batch, merged with counts.
#[derive(Clone, Debug)]
pub struct BatchGroup<'a> {
    pub prefix: &'a [u8],
    /// Occurrences with target 0 and target 1.
    pub counts: [usize; 2],
}

/// A multiset of `(prefix, target)` samples for one conditional.
///
/// Samples sharing a prefix are merged on construction; the objective and
/// gradient are sums over samples, so merging only changes how much work is
/// repeated. Groups keep first-occurrence order, which keeps floating-point
/// reductions deterministic.
#[derive(Clone, Debug)]
pub struct Batch<'a> {
    prefix_len: usize,
    groups: Vec<BatchGroup<'a>>,
    total: usize,
}

impl<'a> Batch<'a> {
    pub fn new<I>(prefix_len: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [u8], u8)>,
    {
        let mut index: HashMap<&'a [u8], usize> = HashMap::new();
        let mut groups: Vec<BatchGroup<'a>> = Vec::new();
        let mut total = 0;
        for (prefix, target) in pairs {
            check_dim("batch prefix", prefix_len, prefix.len())?;
            check_symbol(target)?;
            let slot = *index.entry(prefix).or_insert_with(|| {
                groups.push(BatchGroup { prefix, counts: [0, 0] });
                groups.len() - 1
            });
            groups[slot].counts[usize::from(target)] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(Self {
            prefix_len,
            groups,
            total,
        })
    }

    /// Samples for conditional `k` taken from full data rows.
    pub fn from_rows<I>(k: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let mut pairs = Vec::new();
        for row in rows {
            if row.len() <= k {
                return Err(Error::DimensionMismatch {
                    context: "data row for conditional",
                    expected: k + 1,
                    actual: row.len(),
                });
            }
            pairs.push((&row[..k], row[k]));
        }
        Self::new(k, pairs)
    }

    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    /// Number of samples, counting repeats.
    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn groups(&self) -> &[BatchGroup<'a>] {
        &self.groups
    }

    /// Every sample, repeats expanded.
    pub fn samples(&self) -> impl Iterator<Item = (&'a [u8], u8)> + '_ {
        self.groups
            .iter()
            .flat_map(|g| (0..2u8).flat_map(move |t| std::iter::repeat_n((g.prefix, t), g.counts[usize::from(t)])))
    }
}

/// Gradient of a conditional's objective, block-aligned with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    blocks: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(cm: &ConditionalModel) -> Self {
        Self {
            blocks: cm.blocks().iter().map(|b| vec![0.0; b.params().len()]).collect(),
        }
    }

    pub fn from_flat(cm: &ConditionalModel, flat: &[f64]) -> Result<Self> {
        check_dim("gradient length", cm.num_params(), flat.len())?;
        let mut rest = flat;
        let mut blocks = Vec::new();
        for b in cm.blocks() {
            let (head, tail) = rest.split_at(b.params().len());
            blocks.push(head.to_vec());
            rest = tail;
        }
        Ok(Self { blocks })
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    pub fn flat(&self) -> Vec<f64> {
        self.blocks.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks.iter().flatten().fold(0.0, |acc: f64, g| acc.max(g.abs()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.blocks.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().flatten().all(|g| g.is_finite())
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &GradientSet, scale: f64) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.blocks.iter_mut().flatten().for_each(|g| *g *= factor);
    }

    /// Euclidean distance to another gradient of the same shape.
    pub fn l2_distance(&self, other: &GradientSet) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest entrywise `|a − b| / max(|a|, |b|, floor)`.
    pub fn max_relative_error(&self, other: &GradientSet, floor: f64) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .zip(other.blocks.iter().flatten())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    pub(crate) fn block_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.blocks[i]
    }
}

/// `θ ← θ + lr · grad` (ascent on the log-likelihood).
pub fn ascend(cm: &mut ConditionalModel, grad: &GradientSet, lr: f64) {
    for (block, g) in cm.blocks_mut().into_iter().zip(grad.blocks()) {
        for (p, d) in block.params_mut().iter_mut().zip(g) {
            *p += lr * d;
        }
    }
}

fn check_batch(cm: &ConditionalModel, batch: &Batch<'_>) -> Result<()> {
    check_dim("batch prefix length", cm.index(), batch.prefix_len())?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(())
}

/// Mean log-likelihood of the batch in nats per sample.
pub fn loglik(cm: &ConditionalModel, batch: &Batch<'_>) -> Result<f64> {
    check_batch(cm, batch)?;
    let table = match cm.kind() {
        ConditionalKind::SingleLayer(_) => None,
        ConditionalKind::TwoLayer { .. } => Some(cm.latent_table()?),
    };
    let floor = log_prob_floor();
    let mut scratch = EvalScratch::default();
    let mut sum = 0.0;
    for g in batch.groups() {
        let (lp1, lp0) = cm.log_probs_both(g.prefix, table.as_ref(), &mut scratch);
        sum += g.counts[0] as f64 * lp0.max(floor) + g.counts[1] as f64 * lp1.max(floor);
    }
    Ok(sum / batch.len() as f64)
}

/// Monte-Carlo estimate of [`loglik`] for two-layer conditionals too wide
/// to enumerate: per group, `ln mean_s p(x_{k+1} | f_s)` over `draws`
/// configurations `f_s ~ p(F | prefix)`. By Jensen's inequality the estimate
/// is biased low; the bias shrinks as `draws` grows.
pub fn loglik_sampled<R: Rng + ?Sized>(
    cm: &ConditionalModel,
    batch: &Batch<'_>,
    draws: usize,
    rng: &mut R,
) -> Result<f64> {
    check_batch(cm, batch)?;
    let ConditionalKind::TwoLayer { first, second } = cm.kind() else {
        return Err(Error::UnsupportedArchitecture);
    };
    if draws == 0 {
        return Err(Error::InvalidArgument("at least one draw is required".into()));
    }
    let floor = log_prob_floor();
    let ln_draws = (draws as f64).ln();
    let mut scratch = BlockScratch::default();
    let mut bits = vec![0u8; first.len()];
    let mut logs = [vec![0.0; draws], vec![0.0; draws]];
    let mut sum = 0.0;
    for g in batch.groups() {
        let q = cm.first_layer_probs(g.prefix)?;
        for s in 0..draws {
            for (b, &qi) in bits.iter_mut().zip(&q) {
                *b = u8::from(rng.random::<f64>() < qi);
            }
            let (lp1, lp0) = second.log_mixture(&bits, &mut scratch);
            logs[0][s] = lp0;
            logs[1][s] = lp1;
        }
        for (log, &count) in logs.iter().zip(&g.counts) {
            if count > 0 {
                let lp = log_sum_exp(log) - ln_draws;
                sum += count as f64 * lp.max(floor);
            }
        }
    }
    Ok(sum / batch.len() as f64)
}

/// Adds `coef_aux[j] · (x, 1)` to the aux rows and `coef_switch[j] · (x, 1)`
/// to the switch rows of a block-shaped gradient.
pub(crate) fn add_block_terms(
    block: &SwitchBlock,
    input: &[u8],
    coef_aux: &[f64],
    coef_switch: &[f64],
    out: &mut [f64],
) {
    let d = block.input_dim();
    let m = block.width();
    let (aux_w, rest) = out.split_at_mut(m * d);
    let (aux_b, rest) = rest.split_at_mut(m);
    let (sw_w, sw_b) = rest.split_at_mut(m * d);
    for j in 0..m {
        let ca = coef_aux[j];
        let cs = coef_switch[j];
        aux_b[j] += ca;
        sw_b[j] += cs;
        let row_a = &mut aux_w[j * d..(j + 1) * d];
        let row_s = &mut sw_w[j * d..(j + 1) * d];
        for t in 0..d {
            let x = f64::from(input[t]);
            row_a[t] += ca * x;
            row_s[t] += cs * x;
        }
    }
}

/// Coefficients of `∂ ln p(out = target)` with respect to the aux and switch
/// logits, from a `log_mixture` evaluation left in `scratch`. With
/// responsibilities `r_j = π_j y^t_j / q^t`:
/// `∂/∂a_j = ±r_j (1 − y^t_j)`, `∂/∂s_j = r_j − π_j`.
pub(crate) fn log_output_coefs(
    scratch: MixtureView<'_>,
    target: u8,
    log_q: f64,
    scale: f64,
    coef_aux: &mut Vec<f64>,
    coef_switch: &mut Vec<f64>,
) {
    let m = scratch.aux_logits.len();
    coef_aux.resize(m, 0.0);
    coef_switch.resize(m, 0.0);
    let (sign, y_t, y_other) = if target == 1 {
        (1.0, &scratch.aux_on, &scratch.aux_off)
    } else {
        (-1.0, &scratch.aux_off, &scratch.aux_on)
    };
    let linear = log_q > -600.0;
    let inv_q = if linear { (-log_q).exp() } else { 0.0 };
    for j in 0..m {
        let r = if linear {
            scratch.switch[j] * y_t[j] * inv_q
        } else {
            (scratch.log_switch[j] + log_sigmoid(sign * scratch.aux_logits[j]) - log_q).exp()
        };
        coef_aux[j] = scale * sign * r * y_other[j];
        coef_switch[j] = scale * (r - scratch.switch[j]);
    }
}

/// Coefficients of `∂ q` (probability of emitting one, not its log):
/// `∂q/∂a_j = π_j y_j (1 − y_j)`, `∂q/∂s_j = π_j (y_j − q)`.
pub(crate) fn prob_coefs(
    scratch: MixtureView<'_>,
    q: f64,
    scale: f64,
    coef_aux: &mut Vec<f64>,
    coef_switch: &mut Vec<f64>,
) {
    let m = scratch.aux_logits.len();
    coef_aux.resize(m, 0.0);
    coef_switch.resize(m, 0.0);
    for j in 0..m {
        let pi = scratch.switch[j];
        let y = scratch.aux_on[j];
        coef_aux[j] = scale * pi * y * scratch.aux_off[j];
        coef_switch[j] = scale * pi * (y - q);
    }
}

/// Adds `scale · ∂ ln p(out = target | input)` of one block into `out`.
/// Contributions whose probability is below the floor are dropped, matching
/// the clamped objective.
pub(crate) fn add_log_output_grad(
    block: &SwitchBlock,
    input: &[u8],
    target: u8,
    scale: f64,
    scratch: &mut GradScratch,
    out: &mut [f64],
) {
    let (lp1, lp0) = block.log_mixture(input, &mut scratch.block);
    let log_q = if target == 1 { lp1 } else { lp0 };
    if log_q < log_prob_floor() {
        return;
    }
    log_output_coefs(
        scratch.block.view(),
        target,
        log_q,
        scale,
        &mut scratch.coef_aux,
        &mut scratch.coef_switch,
    );
    add_block_terms(block, input, &scratch.coef_aux, &scratch.coef_switch, out);
}

#[derive(Debug, Default)]
pub(crate) struct GradScratch {
    pub block: BlockScratch,
    pub eval: EvalScratch,
    pub coef_aux: Vec<f64>,
    pub coef_switch: Vec<f64>,
    pub log_post: Vec<f64>,
    pub post: Vec<f64>,
    pub sum_aux: Vec<f64>,
    pub sum_switch: Vec<f64>,
}

/// Exact gradient of [`loglik`] with respect to every parameter of `cm`.
pub fn grad(cm: &ConditionalModel, batch: &Batch<'_>) -> Result<GradientSet> {
    check_batch(cm, batch)?;
    let mut out = GradientSet::zeros_like(cm);
    let inv_total = 1.0 / batch.len() as f64;
    let mut scratch = GradScratch::default();
    match cm.kind() {
        ConditionalKind::SingleLayer(block) => {
            for g in batch.groups() {
                for t in 0..2u8 {
                    let c = g.counts[usize::from(t)];
                    if c == 0 {
                        continue;
                    }
                    add_log_output_grad(block, g.prefix, t, c as f64 * inv_total, &mut scratch, out.block_mut(0));
                }
            }
        }
        ConditionalKind::TwoLayer { first, second } => {
            let table = cm.latent_table_with_mixtures()?;
            two_layer_grad(first, second, &table, batch, inv_total, &mut scratch, &mut out);
        }
    }
    Ok(out)
}

fn two_layer_grad(
    first: &[SwitchBlock],
    second: &SwitchBlock,
    table: &LatentTable,
    batch: &Batch<'_>,
    inv_total: f64,
    s: &mut GradScratch,
    out: &mut GradientSet,
) {
    let l = first.len();
    let size = 1usize << l;
    // accumulated posterior mass per (target, configuration)
    let mut second_weight = [vec![0.0; size], vec![0.0; size]];
    let mut dq = vec![0.0; l];

    for g in batch.groups() {
        s.eval.first_layer(first, g.prefix);
        dq.iter_mut().for_each(|v| *v = 0.0);
        let any = if s.eval.linear_safe(table) {
            posterior_linear(table, g.counts, inv_total, s, &mut second_weight, &mut dq)
        } else {
            posterior_log(table, g.counts, inv_total, s, &mut second_weight, &mut dq)
        };
        if !any {
            continue;
        }
        for (i, block) in first.iter().enumerate() {
            let view = s.eval.first[i].view();
            prob_coefs(view, s.eval.log_q1[i].exp(), dq[i], &mut s.coef_aux, &mut s.coef_switch);
            add_block_terms(block, g.prefix, &s.coef_aux, &s.coef_switch, out.block_mut(i));
        }
    }

    // second layer: both targets of a configuration share one evaluation
    let floor = log_prob_floor();
    let mixtures = table.mixtures.as_ref().expect("gradient table keeps mixtures");
    let mut bits = vec![0u8; l];
    let m = second.width();
    for mask in 0..size {
        let w = [second_weight[0][mask], second_weight[1][mask]];
        if w == [0.0, 0.0] {
            continue;
        }
        mask_bits_into(mask, &mut bits);
        let view = mixtures.view(mask);
        let (lp1, lp0) = (table.log_out[1][mask], table.log_out[0][mask]);
        s.sum_aux.clear();
        s.sum_aux.resize(m, 0.0);
        s.sum_switch.clear();
        s.sum_switch.resize(m, 0.0);
        for (t, log_q) in [(0u8, lp0), (1u8, lp1)] {
            let wt = w[usize::from(t)];
            if wt == 0.0 || log_q < floor {
                continue;
            }
            log_output_coefs(view, t, log_q, wt, &mut s.coef_aux, &mut s.coef_switch);
            for j in 0..m {
                s.sum_aux[j] += s.coef_aux[j];
                s.sum_switch[j] += s.coef_switch[j];
            }
        }
        add_block_terms(second, &bits, &s.sum_aux, &s.sum_switch, out.block_mut(l));
    }
}

/// Posterior over configurations for both targets of one group, formed in
/// linear space. Adds into `second_weight` and `dq`; false if every target
/// was below the probability floor.
fn posterior_linear(
    table: &LatentTable,
    counts: [usize; 2],
    inv_total: f64,
    s: &mut GradScratch,
    second_weight: &mut [Vec<f64>; 2],
    dq: &mut [f64],
) -> bool {
    let l = dq.len();
    let size = 1usize << l;
    latent_prior_into(&s.eval.log_q1, &s.eval.log_q0, &mut s.eval.prior);
    let mut any = false;
    for t in 0..2usize {
        if counts[t] == 0 {
            continue;
        }
        s.post.clear();
        s.post
            .extend(s.eval.prior.iter().zip(&table.out[t]).map(|(a, b)| a * b));
        let total: f64 = s.post.iter().sum();
        if total < PROB_FLOOR {
            continue;
        }
        any = true;
        let w = counts[t] as f64 * inv_total;
        let norm = w / total;
        for (acc, p) in second_weight[t].iter_mut().zip(&s.post) {
            *acc += norm * p;
        }
        // per-bit marginals by folding the posterior in half, top bit first
        let mut len = size;
        for i in (0..l).rev() {
            let half = len / 2;
            let (lo, hi) = s.post[..len].split_at_mut(half);
            let off: f64 = lo.iter().sum();
            let on: f64 = hi.iter().sum();
            for (a, b) in lo.iter_mut().zip(hi.iter()) {
                *a += b;
            }
            dq[i] += norm * (on / s.eval.log_q1[i].exp() - off / s.eval.log_q0[i].exp());
            len = half;
        }
    }
    any
}

/// Log-space version of [`posterior_linear`] for extreme probabilities.
fn posterior_log(
    table: &LatentTable,
    counts: [usize; 2],
    inv_total: f64,
    s: &mut GradScratch,
    second_weight: &mut [Vec<f64>; 2],
    dq: &mut [f64],
) -> bool {
    let size = 1usize << dq.len();
    let floor = log_prob_floor();
    latent_log_prior_into(&s.eval.log_q1, &s.eval.log_q0, &mut s.eval.log_prior);
    let mut any = false;
    for t in 0..2usize {
        if counts[t] == 0 {
            continue;
        }
        let w = counts[t] as f64 * inv_total;
        s.log_post.resize(size, 0.0);
        for mask in 0..size {
            s.log_post[mask] = s.eval.log_prior[mask] + table.log_out[t][mask];
        }
        let log_w = log_sum_exp(&s.log_post);
        if log_w < floor {
            continue;
        }
        any = true;
        s.post.resize(size, 0.0);
        for mask in 0..size {
            s.log_post[mask] -= log_w;
            let p = s.log_post[mask].exp();
            s.post[mask] = p;
            second_weight[t][mask] += w * p;
        }
        for (i, d) in dq.iter_mut().enumerate() {
            let bit = 1usize << i;
            let (mut on, mut off) = (0.0, 0.0);
            for (mask, p) in s.post.iter().enumerate() {
                if mask & bit != 0 {
                    on += p;
                } else {
                    off += p;
                }
            }
            let a = pinned_ratio(on, s.eval.log_q1[i], &s.log_post, bit, true);
            let b = pinned_ratio(off, s.eval.log_q0[i], &s.log_post, bit, false);
            *d += w * (a - b);
        }
    }
    any
}

/// `Σ_{f : f_i = v} p_i(f) / p(F_i = v)`, i.e. `A_i / W_i` or `B_i / W_i`.
/// Falls back to log-space when the marginal is too small to divide by.
fn pinned_ratio(mass: f64, log_marginal: f64, log_post: &[f64], bit: usize, on: bool) -> f64 {
    if log_marginal > -600.0 {
        return mass / log_marginal.exp();
    }
    log_post
        .iter()
        .enumerate()
        .filter(|(mask, _)| (mask & bit != 0) == on)
        .map(|(_, lp)| (lp - log_marginal).exp())
        .sum()
}

/// Central finite differences of [`loglik`], one parameter at a time.
pub fn finite_diff_grad(cm: &ConditionalModel, batch: &Batch<'_>, eps: f64) -> Result<GradientSet> {
    // Negated so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    check_batch(cm, batch)?;
    let mut probe = cm.clone();
    let mut flat = Vec::with_capacity(cm.num_params());
    for p in 0..cm.num_params() {
        let orig = *probe.param_mut(p);
        *probe.param_mut(p) = orig + eps;
        let up = loglik(&probe, batch)?;
        *probe.param_mut(p) = orig - eps;
        let down = loglik(&probe, batch)?;
        *probe.param_mut(p) = orig;
        flat.push((up - down) / (2.0 * eps));
    }
    GradientSet::from_flat(cm, &flat)
}
