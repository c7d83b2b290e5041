//! Parameter containers and forward probabilities for single- and two-layer
//! switch networks.
//!
//! A [`SwitchBlock`] is one adaptive switch: `m` logistic separators (the
//! auxiliary units) and an `m`-way softmax that picks between them, both
//! driven by the same `d`-bit input. The probability of emitting a one is the
//! switch-weighted mixture of the separator probabilities.
//!
//! A [`ConditionalModel`] models `p(x_{k+1} | x_{1..k})`. In the two-layer
//! form, `l` first-layer blocks read the prefix and each emit an intermediate
//! bit; a second block reads those `l` bits. The output probability sums over
//! all `2^l` intermediate configurations exactly.
//!
//! Binary symbols are bytes holding `0` or `1`. Intermediate configurations
//! are also addressed by bit masks, with bit `i` of the mask holding the
//! output of first-layer block `i`.

use std::fmt;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math::{dot_bits, log_prob_floor, log_sigmoid, log_softmax_into, log_sum_exp, sigmoid};
use crate::rng;

/// Half-width of the uniform interval used for parameter initialization.
pub const INIT_SCALE: f64 = 0.05;

/// Largest `l` for which exact enumeration over intermediate configurations
/// is allowed.
pub const MAX_EXACT_LATENT: usize = 16;

/// Network shape shared by every conditional of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    Single { m: usize },
    Two { m1: usize, l: usize, m2: usize },
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Architecture::Single { m: 0 } => {
                Err(Error::InvalidConfig("single-layer width m must be positive".into()))
            }
            Architecture::Two { m1, l, m2 } if m1 == 0 || l == 0 || m2 == 0 => Err(Error::InvalidConfig(
                "two-layer widths (m1, l, m2) must all be positive".into(),
            )),
            _ => Ok(()),
        }
    }

    /// Number of intermediate variables (zero for single-layer networks).
    pub fn latent(&self) -> usize {
        match *self {
            Architecture::Single { .. } => 0,
            Architecture::Two { l, .. } => l,
        }
    }

    pub fn is_two_layer(&self) -> bool {
        matches!(self, Architecture::Two { .. })
    }

    /// Number of real parameters of the conditional with prefix length `k`.
    pub fn conditional_params(&self, k: usize) -> usize {
        match *self {
            Architecture::Single { m } => SwitchBlock::param_count(k, m),
            Architecture::Two { m1, l, m2 } => l * SwitchBlock::param_count(k, m1) + SwitchBlock::param_count(l, m2),
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Architecture::Single { m } => write!(f, "single(m={m})"),
            Architecture::Two { m1, l, m2 } => write!(f, "two(m1={m1},l={l},m2={m2})"),
        }
    }
}

/// One adaptive switch over a `d`-dimensional binary input.
///
/// Parameters live in one flat vector in the canonical order
/// `aux_weights (m×d, row-major), aux_biases (m), switch_weights (m×d),
/// switch_biases (m)`. The same order is used by gradients and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchBlock {
    input_dim: usize,
    width: usize,
    params: Vec<f64>,
}

impl SwitchBlock {
    pub fn param_count(input_dim: usize, width: usize) -> usize {
        2 * width * (input_dim + 1)
    }

    pub fn zeros(input_dim: usize, width: usize) -> Result<Self> {
        Self::from_flat(input_dim, width, vec![0.0; Self::param_count(input_dim, width)])
    }

    /// I.i.d. uniform parameters in `[-scale, scale]`.
    pub fn random_uniform<R: Rng + ?Sized>(input_dim: usize, width: usize, scale: f64, rng: &mut R) -> Result<Self> {
        let params = (0..Self::param_count(input_dim, width))
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self::from_flat(input_dim, width, params)
    }

    pub fn from_flat(input_dim: usize, width: usize, params: Vec<f64>) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidArgument("switch block width must be positive".into()));
        }
        check_dim(
            "switch block parameters",
            Self::param_count(input_dim, width),
            params.len(),
        )?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("switch block parameters must be finite".into()));
        }
        Ok(Self {
            input_dim,
            width,
            params,
        })
    }

    /// Builds a block from its four parameter groups, one row per separator.
    pub fn from_parts(
        aux_weights: &[Vec<f64>],
        aux_biases: &[f64],
        switch_weights: &[Vec<f64>],
        switch_biases: &[f64],
    ) -> Result<Self> {
        let width = aux_biases.len();
        let input_dim = aux_weights.first().map_or(0, Vec::len);
        check_dim("aux weight rows", width, aux_weights.len())?;
        check_dim("switch weight rows", width, switch_weights.len())?;
        check_dim("switch biases", width, switch_biases.len())?;
        let mut params = Vec::with_capacity(Self::param_count(input_dim, width));
        for row in aux_weights {
            check_dim("aux weight row", input_dim, row.len())?;
            params.extend_from_slice(row);
        }
        params.extend_from_slice(aux_biases);
        for row in switch_weights {
            check_dim("switch weight row", input_dim, row.len())?;
            params.extend_from_slice(row);
        }
        params.extend_from_slice(switch_biases);
        Self::from_flat(input_dim, width, params)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn aux_bias_offset(&self) -> usize {
        self.width * self.input_dim
    }

    fn switch_weight_offset(&self) -> usize {
        self.width * (self.input_dim + 1)
    }

    fn switch_bias_offset(&self) -> usize {
        self.width * (2 * self.input_dim + 1)
    }

    pub fn aux_weights(&self, j: usize) -> &[f64] {
        let d = self.input_dim;
        &self.params[j * d..(j + 1) * d]
    }

    pub fn aux_bias(&self, j: usize) -> f64 {
        self.params[self.aux_bias_offset() + j]
    }

    pub fn switch_weights(&self, j: usize) -> &[f64] {
        let d = self.input_dim;
        let off = self.switch_weight_offset();
        &self.params[off + j * d..off + (j + 1) * d]
    }

    pub fn switch_bias(&self, j: usize) -> f64 {
        self.params[self.switch_bias_offset() + j]
    }

    pub fn aux_weights_mut(&mut self, j: usize) -> &mut [f64] {
        let d = self.input_dim;
        &mut self.params[j * d..(j + 1) * d]
    }

    pub fn aux_bias_mut(&mut self, j: usize) -> &mut f64 {
        let off = self.aux_bias_offset();
        &mut self.params[off + j]
    }

    pub fn switch_weights_mut(&mut self, j: usize) -> &mut [f64] {
        let d = self.input_dim;
        let off = self.switch_weight_offset();
        &mut self.params[off + j * d..off + (j + 1) * d]
    }

    pub fn switch_bias_mut(&mut self, j: usize) -> &mut f64 {
        let off = self.switch_bias_offset();
        &mut self.params[off + j]
    }

    pub(crate) fn aux_logits_into(&self, input: &[u8], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot_bits(self.aux_weights(j), input) + self.aux_bias(j);
        }
    }

    pub(crate) fn switch_logits_into(&self, input: &[u8], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = dot_bits(self.switch_weights(j), input) + self.switch_bias(j);
        }
    }

    /// Softmax distribution of the switch variable.
    pub fn switch_probs(&self, input: &[u8]) -> Result<Vec<f64>> {
        check_dim("switch block input", self.input_dim, input.len())?;
        let mut logits = vec![0.0; self.width];
        self.switch_logits_into(input, &mut logits);
        let mut log_probs = vec![0.0; self.width];
        log_softmax_into(&logits, &mut log_probs);
        Ok(log_probs.into_iter().map(f64::exp).collect())
    }

    /// Success probability of each auxiliary separator.
    pub fn aux_probs(&self, input: &[u8]) -> Result<Vec<f64>> {
        check_dim("switch block input", self.input_dim, input.len())?;
        let mut logits = vec![0.0; self.width];
        self.aux_logits_into(input, &mut logits);
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// `Σ_j p(switch = j) · p(aux_j = 1)`.
    pub fn mixture_prob(&self, input: &[u8]) -> Result<f64> {
        let switch = self.switch_probs(input)?;
        let aux = self.aux_probs(input)?;
        Ok(switch.iter().zip(&aux).map(|(s, a)| s * a).sum())
    }

    /// Log-probabilities `(ln p(out = 1), ln p(out = 0))`. Leaves the aux
    /// logits, switch probabilities (linear and log) and `σ(±a_j)` in
    /// `scratch`.
    pub(crate) fn log_mixture(&self, input: &[u8], scratch: &mut BlockScratch) -> (f64, f64) {
        debug_assert_eq!(input.len(), self.input_dim);
        scratch.ensure(self.width);
        self.aux_logits_into(input, &mut scratch.aux_logits);
        self.switch_logits_into(input, &mut scratch.tmp);
        scratch.finish()
    }
}

/// Below this a mixture probability is recomputed in log space.
const LINEAR_MIN: f64 = 1e-280;

/// Reusable per-block work buffers.
#[derive(Debug, Default, Clone)]
pub(crate) struct BlockScratch {
    pub aux_logits: Vec<f64>,
    /// `σ(a_j)` and `σ(−a_j)`.
    pub aux_on: Vec<f64>,
    pub aux_off: Vec<f64>,
    pub switch: Vec<f64>,
    pub log_switch: Vec<f64>,
    pub tmp: Vec<f64>,
}

impl BlockScratch {
    pub fn ensure(&mut self, width: usize) {
        if self.aux_logits.len() != width {
            for v in [
                &mut self.aux_logits,
                &mut self.aux_on,
                &mut self.aux_off,
                &mut self.switch,
                &mut self.log_switch,
                &mut self.tmp,
            ] {
                v.resize(width, 0.0);
            }
        }
    }

    pub fn view(&self) -> MixtureView<'_> {
        MixtureView {
            aux_logits: &self.aux_logits,
            aux_on: &self.aux_on,
            aux_off: &self.aux_off,
            switch: &self.switch,
            log_switch: &self.log_switch,
        }
    }

    /// Completes a mixture evaluation from aux logits in `aux_logits` and
    /// switch logits in `tmp`.
    fn finish(&mut self) -> (f64, f64) {
        let width = self.aux_logits.len();
        let max = self.tmp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, &s) in self.switch.iter_mut().zip(&self.tmp) {
            *p = (s - max).exp();
            sum += *p;
        }
        let log_norm = max + sum.ln();
        let (mut q1, mut q0) = (0.0, 0.0);
        for j in 0..width {
            self.switch[j] /= sum;
            self.log_switch[j] = self.tmp[j] - log_norm;
            // both tails from one exponential of a nonpositive argument
            let a = self.aux_logits[j];
            let e = (-a.abs()).exp();
            let (big, small) = (1.0 / (1.0 + e), e / (1.0 + e));
            let (y1, y0) = if a >= 0.0 { (big, small) } else { (small, big) };
            self.aux_on[j] = y1;
            self.aux_off[j] = y0;
            q1 += self.switch[j] * y1;
            q0 += self.switch[j] * y0;
        }
        if q1 > LINEAR_MIN && q0 > LINEAR_MIN {
            return (q1.ln(), q0.ln());
        }

        for j in 0..width {
            self.tmp[j] = self.log_switch[j] + log_sigmoid(self.aux_logits[j]);
        }
        let lp1 = log_sum_exp(&self.tmp);
        for j in 0..width {
            self.tmp[j] = self.log_switch[j] + log_sigmoid(-self.aux_logits[j]);
        }
        let lp0 = log_sum_exp(&self.tmp);
        (lp1, lp0)
    }
}

/// Values of the `l` intermediate variables of a two-layer conditional.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntermediateConfig {
    bits: Vec<u8>,
}

impl IntermediateConfig {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("intermediate bits must be 0 or 1".into()));
        }
        Ok(Self { bits })
    }

    /// Configuration whose bit `i` is bit `i` of `mask`.
    pub fn from_mask(mask: usize, l: usize) -> Self {
        Self {
            bits: (0..l).map(|i| ((mask >> i) & 1) as u8).collect(),
        }
    }

    pub fn mask(&self) -> usize {
        self.bits
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (usize::from(b) << i))
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }
}

pub(crate) fn mask_bits_into(mask: usize, out: &mut [u8]) {
    for (i, b) in out.iter_mut().enumerate() {
        *b = ((mask >> i) & 1) as u8;
    }
}

/// `ln p(f | prefix)` for every mask `f`, from per-block `ln q_i` and
/// `ln (1 - q_i)`. Built by doubling so each entry is a plain sum.
pub(crate) fn latent_log_prior_into(log_q1: &[f64], log_q0: &[f64], out: &mut Vec<f64>) {
    let l = log_q1.len();
    out.clear();
    out.resize(1 << l, 0.0);
    for i in 0..l {
        let half = 1usize << i;
        for mask in 0..half {
            let base = out[mask];
            out[mask] = base + log_q0[i];
            out[mask | half] = base + log_q1[i];
        }
    }
}

/// Linear-space counterpart of [`latent_log_prior_into`].
pub(crate) fn latent_prior_into(log_q1: &[f64], log_q0: &[f64], out: &mut Vec<f64>) {
    let l = log_q1.len();
    out.clear();
    out.resize(1 << l, 1.0);
    for i in 0..l {
        let half = 1usize << i;
        let (q1, q0) = (log_q1[i].exp(), log_q0[i].exp());
        let (lo, hi) = out[..2 * half].split_at_mut(half);
        for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
            *b = *a * q1;
            *a *= q0;
        }
    }
}

/// Whether a product of `factors` probabilities, each at least `exp(min_log)`,
/// stays far from the subnormal range so that linear-space sums are as
/// accurate as log-space ones.
pub(crate) fn linear_safe(min_log: f64, factors: usize) -> bool {
    min_log * factors as f64 > -690.0
}

pub(crate) fn min_log(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::min)
}

/// Per-component quantities of one mixture evaluation.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MixtureView<'a> {
    pub aux_logits: &'a [f64],
    pub aux_on: &'a [f64],
    pub aux_off: &'a [f64],
    pub switch: &'a [f64],
    pub log_switch: &'a [f64],
}

/// Mixture internals of the second block for every configuration, kept for
/// gradient computations (`2^l × m2` values per field).
#[derive(Clone, Debug, Default)]
pub(crate) struct MixtureCache {
    width: usize,
    aux_logits: Vec<f64>,
    aux_on: Vec<f64>,
    aux_off: Vec<f64>,
    switch: Vec<f64>,
    log_switch: Vec<f64>,
}

impl MixtureCache {
    fn push(&mut self, s: &BlockScratch) {
        self.aux_logits.extend_from_slice(&s.aux_logits);
        self.aux_on.extend_from_slice(&s.aux_on);
        self.aux_off.extend_from_slice(&s.aux_off);
        self.switch.extend_from_slice(&s.switch);
        self.log_switch.extend_from_slice(&s.log_switch);
    }

    pub fn view(&self, mask: usize) -> MixtureView<'_> {
        let r = mask * self.width..(mask + 1) * self.width;
        MixtureView {
            aux_logits: &self.aux_logits[r.clone()],
            aux_on: &self.aux_on[r.clone()],
            aux_off: &self.aux_off[r.clone()],
            switch: &self.switch[r.clone()],
            log_switch: &self.log_switch[r],
        }
    }
}

/// Second-layer output log-probabilities for every intermediate configuration.
#[derive(Clone, Debug)]
pub struct LatentTable {
    /// `log_out[t][mask] = ln p(x_{k+1} = t | f = mask)`.
    pub log_out: [Vec<f64>; 2],
    /// `exp` of `log_out`.
    pub(crate) out: [Vec<f64>; 2],
    /// Smallest entry of `log_out`.
    pub(crate) min_log: f64,
    pub(crate) mixtures: Option<MixtureCache>,
}

impl LatentTable {
    pub fn build(second: &SwitchBlock) -> Self {
        Self::build_inner(second, false)
    }

    pub(crate) fn with_mixtures(second: &SwitchBlock) -> Self {
        Self::build_inner(second, true)
    }

    fn build_inner(second: &SwitchBlock, keep: bool) -> Self {
        let l = second.input_dim();
        let m = second.width();
        let size = 1usize << l;
        // weight sums for every mask by doubling; adding bit i's column in
        // increasing i reproduces the summation order of a direct evaluation
        let mut aux_sum = vec![0.0; size * m];
        let mut sw_sum = vec![0.0; size * m];
        for i in 0..l {
            let half = 1usize << i;
            for mask in 0..half {
                for j in 0..m {
                    aux_sum[(mask | half) * m + j] = aux_sum[mask * m + j] + second.aux_weights(j)[i];
                    sw_sum[(mask | half) * m + j] = sw_sum[mask * m + j] + second.switch_weights(j)[i];
                }
            }
        }
        let mut scratch = BlockScratch::default();
        scratch.ensure(m);
        let mut cache = keep.then(|| MixtureCache {
            width: m,
            ..MixtureCache::default()
        });
        let mut log_out = [vec![0.0; size], vec![0.0; size]];
        for mask in 0..size {
            for j in 0..m {
                scratch.aux_logits[j] = aux_sum[mask * m + j] + second.aux_bias(j);
                scratch.tmp[j] = sw_sum[mask * m + j] + second.switch_bias(j);
            }
            let (lp1, lp0) = scratch.finish();
            log_out[1][mask] = lp1;
            log_out[0][mask] = lp0;
            if let Some(c) = cache.as_mut() {
                c.push(&scratch);
            }
        }
        let out = [
            log_out[0].iter().map(|v| v.exp()).collect(),
            log_out[1].iter().map(|v| v.exp()).collect(),
        ];
        let min_log = min_log(&log_out[0]).min(min_log(&log_out[1]));
        Self {
            log_out,
            out,
            min_log,
            mixtures: cache,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConditionalKind {
    SingleLayer(SwitchBlock),
    TwoLayer {
        first: Vec<SwitchBlock>,
        second: SwitchBlock,
    },
}

/// Parameters of the conditional `p(x_{k+1} | x_{1..k})`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalModel {
    index: usize,
    kind: ConditionalKind,
}

impl ConditionalModel {
    pub fn new(index: usize, kind: ConditionalKind) -> Result<Self> {
        match &kind {
            ConditionalKind::SingleLayer(block) => {
                check_dim("single-layer block input", index, block.input_dim())?;
            }
            ConditionalKind::TwoLayer { first, second } => {
                if first.is_empty() {
                    return Err(Error::InvalidArgument(
                        "two-layer conditional needs at least one first-layer block".into(),
                    ));
                }
                let m1 = first[0].width();
                for block in first {
                    check_dim("first-layer block input", index, block.input_dim())?;
                    check_dim("first-layer block width", m1, block.width())?;
                }
                check_dim("second-layer block input", first.len(), second.input_dim())?;
            }
        }
        Ok(Self { index, kind })
    }

    pub fn zeros(index: usize, arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let kind = match arch {
            Architecture::Single { m } => ConditionalKind::SingleLayer(SwitchBlock::zeros(index, m)?),
            Architecture::Two { m1, l, m2 } => ConditionalKind::TwoLayer {
                first: (0..l).map(|_| SwitchBlock::zeros(index, m1)).collect::<Result<_>>()?,
                second: SwitchBlock::zeros(l, m2)?,
            },
        };
        Self::new(index, kind)
    }

    /// I.i.d. uniform initialization in `[-scale, scale]`, blocks drawn in
    /// canonical order.
    pub fn random_uniform<R: Rng + ?Sized>(index: usize, arch: Architecture, scale: f64, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let kind = match arch {
            Architecture::Single { m } => {
                ConditionalKind::SingleLayer(SwitchBlock::random_uniform(index, m, scale, rng)?)
            }
            Architecture::Two { m1, l, m2 } => {
                let first = (0..l)
                    .map(|_| SwitchBlock::random_uniform(index, m1, scale, rng))
                    .collect::<Result<Vec<_>>>()?;
                let second = SwitchBlock::random_uniform(l, m2, scale, rng)?;
                ConditionalKind::TwoLayer { first, second }
            }
        };
        Self::new(index, kind)
    }

    /// Default initialization: uniform in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init<R: Rng + ?Sized>(index: usize, arch: Architecture, rng: &mut R) -> Result<Self> {
        Self::random_uniform(index, arch, INIT_SCALE, rng)
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn kind(&self) -> &ConditionalKind {
        &self.kind
    }

    pub fn architecture(&self) -> Architecture {
        match &self.kind {
            ConditionalKind::SingleLayer(b) => Architecture::Single { m: b.width() },
            ConditionalKind::TwoLayer { first, second } => Architecture::Two {
                m1: first[0].width(),
                l: first.len(),
                m2: second.width(),
            },
        }
    }

    /// Blocks in canonical order: the single block, or the first-layer
    /// blocks in index order followed by the second-layer block.
    pub fn blocks(&self) -> Vec<&SwitchBlock> {
        match &self.kind {
            ConditionalKind::SingleLayer(b) => vec![b],
            ConditionalKind::TwoLayer { first, second } => first.iter().chain(std::iter::once(second)).collect(),
        }
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut SwitchBlock> {
        match &mut self.kind {
            ConditionalKind::SingleLayer(b) => vec![b],
            ConditionalKind::TwoLayer { first, second } => first.iter_mut().chain(std::iter::once(second)).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.params().len()).sum()
    }

    /// All parameters concatenated in canonical order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.params().iter().copied()).collect()
    }

    /// Mutable access to parameter `p` in canonical flat order.
    pub fn param_mut(&mut self, mut p: usize) -> &mut f64 {
        for block in self.blocks_mut() {
            let len = block.params().len();
            if p < len {
                return &mut block.params_mut()[p];
            }
            p -= len;
        }
        panic!("parameter index out of range");
    }

    pub fn max_abs_param(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.params().iter())
            .fold(0.0, |acc: f64, p| acc.max(p.abs()))
    }

    fn check_enumerable(&self) -> Result<()> {
        let l = self.architecture().latent();
        if l > MAX_EXACT_LATENT {
            return Err(Error::EnumerationBudget {
                latent: l,
                limit: MAX_EXACT_LATENT,
            });
        }
        Ok(())
    }

    /// Second-layer lookup table (two-layer conditionals only).
    pub fn latent_table(&self) -> Result<LatentTable> {
        match &self.kind {
            ConditionalKind::SingleLayer(_) => Err(Error::UnsupportedArchitecture),
            ConditionalKind::TwoLayer { second, .. } => {
                self.check_enumerable()?;
                Ok(LatentTable::build(second))
            }
        }
    }

    pub(crate) fn latent_table_with_mixtures(&self) -> Result<LatentTable> {
        match &self.kind {
            ConditionalKind::SingleLayer(_) => Err(Error::UnsupportedArchitecture),
            ConditionalKind::TwoLayer { second, .. } => {
                self.check_enumerable()?;
                Ok(LatentTable::with_mixtures(second))
            }
        }
    }

    /// `p(F_i = 1 | prefix)` for each first-layer block.
    pub fn first_layer_probs(&self, prefix: &[u8]) -> Result<Vec<f64>> {
        check_dim("conditional prefix", self.index, prefix.len())?;
        match &self.kind {
            ConditionalKind::SingleLayer(_) => Err(Error::UnsupportedArchitecture),
            ConditionalKind::TwoLayer { first, .. } => first.iter().map(|b| b.mixture_prob(prefix)).collect(),
        }
    }

    /// `p(x_{k+1} = 1 | prefix)`, exact.
    pub fn conditional_prob(&self, prefix: &[u8]) -> Result<f64> {
        Ok(self.log_prob(prefix, 1)?.exp())
    }

    /// `ln p(x_{k+1} = target | prefix)`, clamped below at `ln 1e-300`.
    pub fn log_prob(&self, prefix: &[u8], target: u8) -> Result<f64> {
        check_dim("conditional prefix", self.index, prefix.len())?;
        check_symbol(target)?;
        let table = match &self.kind {
            ConditionalKind::SingleLayer(_) => None,
            ConditionalKind::TwoLayer { .. } => Some(self.latent_table()?),
        };
        let mut scratch = EvalScratch::default();
        Ok(self.log_prob_with(prefix, target, table.as_ref(), &mut scratch))
    }

    /// Unchecked hot-path variant; `table` must be this model's latent table
    /// for two-layer conditionals.
    pub(crate) fn log_prob_with(
        &self,
        prefix: &[u8],
        target: u8,
        table: Option<&LatentTable>,
        scratch: &mut EvalScratch,
    ) -> f64 {
        let (lp1, lp0) = self.log_probs_both(prefix, table, scratch);
        let lp = if target == 1 { lp1 } else { lp0 };
        lp.max(log_prob_floor())
    }

    /// Unclamped `(ln p(1 | prefix), ln p(0 | prefix))`.
    pub(crate) fn log_probs_both(
        &self,
        prefix: &[u8],
        table: Option<&LatentTable>,
        scratch: &mut EvalScratch,
    ) -> (f64, f64) {
        match &self.kind {
            ConditionalKind::SingleLayer(block) => block.log_mixture(prefix, &mut scratch.block),
            ConditionalKind::TwoLayer { first, .. } => {
                let table = table.expect("two-layer evaluation needs a latent table");
                scratch.first_layer(first, prefix);
                if scratch.linear_safe(table) {
                    latent_prior_into(&scratch.log_q1, &scratch.log_q0, &mut scratch.prior);
                    let mut out = [0.0; 2];
                    for (t, o) in out.iter_mut().enumerate() {
                        *o = scratch
                            .prior
                            .iter()
                            .zip(&table.out[t])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            .ln();
                    }
                    return (out[1], out[0]);
                }
                latent_log_prior_into(&scratch.log_q1, &scratch.log_q0, &mut scratch.log_prior);
                let size = scratch.log_prior.len();
                scratch.terms.resize(size, 0.0);
                let mut out = [0.0; 2];
                for (t, o) in out.iter_mut().enumerate() {
                    for mask in 0..size {
                        scratch.terms[mask] = scratch.log_prior[mask] + table.log_out[t][mask];
                    }
                    *o = log_sum_exp(&scratch.terms);
                }
                (out[1], out[0])
            }
        }
    }
}

pub(crate) fn check_symbol(target: u8) -> Result<()> {
    if target > 1 {
        return Err(Error::InvalidArgument(format!(
            "binary symbol must be 0 or 1, got {target}"
        )));
    }
    Ok(())
}

/// Work buffers for conditional evaluation.
#[derive(Debug, Default, Clone)]
pub(crate) struct EvalScratch {
    pub block: BlockScratch,
    pub first: Vec<BlockScratch>,
    pub log_q1: Vec<f64>,
    pub log_q0: Vec<f64>,
    pub log_prior: Vec<f64>,
    pub prior: Vec<f64>,
    pub terms: Vec<f64>,
}

impl EvalScratch {
    /// After [`Self::first_layer`]: whether posterior products over the
    /// latent configurations can be formed in linear space.
    pub fn linear_safe(&self, table: &LatentTable) -> bool {
        let m = min_log(&self.log_q1).min(min_log(&self.log_q0)).min(table.min_log);
        linear_safe(m, self.log_q1.len() + 1)
    }

    /// Evaluates every first-layer block, keeping each block's internals in
    /// `first[i]`.
    pub fn first_layer(&mut self, first: &[SwitchBlock], prefix: &[u8]) {
        self.log_q1.clear();
        self.log_q0.clear();
        self.first.resize_with(first.len(), BlockScratch::default);
        for (block, scratch) in first.iter().zip(&mut self.first) {
            let (lp1, lp0) = block.log_mixture(prefix, scratch);
            self.log_q1.push(lp1);
            self.log_q0.push(lp0);
        }
    }
}

/// A full autoregressive model over `n` binary variables.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchNetworkModel {
    architecture: Architecture,
    conditionals: Vec<ConditionalModel>,
}

impl SwitchNetworkModel {
    pub fn new(architecture: Architecture, conditionals: Vec<ConditionalModel>) -> Result<Self> {
        architecture.validate()?;
        if conditionals.is_empty() {
            return Err(Error::InvalidArgument("a model needs at least one conditional".into()));
        }
        for (k, cm) in conditionals.iter().enumerate() {
            check_dim("conditional index", k, cm.index())?;
            if cm.architecture() != architecture {
                return Err(Error::InvalidArgument(format!(
                    "conditional {k} has architecture {} but the model is {architecture}",
                    cm.architecture()
                )));
            }
        }
        Ok(Self {
            architecture,
            conditionals,
        })
    }

    pub fn zeros(n: usize, architecture: Architecture) -> Result<Self> {
        let conditionals = (0..n)
            .map(|k| ConditionalModel::zeros(k, architecture))
            .collect::<Result<_>>()?;
        Self::new(architecture, conditionals)
    }

    /// Default initialization with one random stream per conditional, the
    /// same streams the trainer starts from.
    pub fn init(n: usize, architecture: Architecture, seed: u64) -> Result<Self> {
        let conditionals = (0..n)
            .map(|k| ConditionalModel::init(k, architecture, &mut rng::conditional_stream(seed, k)))
            .collect::<Result<_>>()?;
        Self::new(architecture, conditionals)
    }

    pub fn n(&self) -> usize {
        self.conditionals.len()
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn conditionals(&self) -> &[ConditionalModel] {
        &self.conditionals
    }

    pub fn conditional(&self, k: usize) -> &ConditionalModel {
        &self.conditionals[k]
    }

    pub fn conditional_mut(&mut self, k: usize) -> &mut ConditionalModel {
        &mut self.conditionals[k]
    }

    pub fn into_conditionals(self) -> Vec<ConditionalModel> {
        self.conditionals
    }

    /// Precomputes second-layer tables so that many evaluations share them.
    pub fn prepare(&self) -> Result<PreparedModel<'_>> {
        let tables = self
            .conditionals
            .iter()
            .map(|cm| match cm.kind() {
                ConditionalKind::SingleLayer(_) => Ok(None),
                ConditionalKind::TwoLayer { .. } => cm.latent_table().map(Some),
            })
            .collect::<Result<_>>()?;
        Ok(PreparedModel { model: self, tables })
    }

    /// `Σ_k ln p(x_{k+1} | x_{1..k})` in nats.
    pub fn joint_log_prob(&self, x: &[u8]) -> Result<f64> {
        self.prepare()?.joint_log_prob(x)
    }

    /// Ancestral sample at temperature one.
    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<u8>> {
        Ok(self.prepare()?.sample_vector(rng))
    }
}

/// A model together with its precomputed second-layer tables.
pub struct PreparedModel<'a> {
    model: &'a SwitchNetworkModel,
    tables: Vec<Option<LatentTable>>,
}

impl PreparedModel<'_> {
    pub fn model(&self) -> &SwitchNetworkModel {
        self.model
    }

    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn joint_log_prob(&self, x: &[u8]) -> Result<f64> {
        check_dim("joint configuration", self.model.n(), x.len())?;
        check_bits(x)?;
        let mut scratch = EvalScratch::default();
        Ok(self.joint_log_prob_unchecked(x, &mut scratch))
    }

    pub(crate) fn joint_log_prob_unchecked(&self, x: &[u8], scratch: &mut EvalScratch) -> f64 {
        self.model
            .conditionals
            .iter()
            .zip(&self.tables)
            .map(|(cm, table)| {
                let k = cm.index();
                cm.log_prob_with(&x[..k], x[k], table.as_ref(), scratch)
            })
            .sum()
    }

    /// `p(x_{k+1} = 1 | prefix)` for conditional `k`.
    pub fn conditional_prob(&self, k: usize, prefix: &[u8]) -> Result<f64> {
        let cm = &self.model.conditionals[k];
        check_dim("conditional prefix", cm.index(), prefix.len())?;
        let mut scratch = EvalScratch::default();
        Ok(cm.log_prob_with(prefix, 1, self.tables[k].as_ref(), &mut scratch).exp())
    }

    pub fn sample_vector<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let n = self.model.n();
        let mut x = Vec::with_capacity(n);
        let mut scratch = EvalScratch::default();
        for (cm, table) in self.model.conditionals.iter().zip(&self.tables) {
            let (lp1, _) = cm.log_probs_both(&x, table.as_ref(), &mut scratch);
            let u: f64 = rng.random();
            x.push(u8::from(u < lp1.exp()));
        }
        x
    }
}

pub(crate) fn check_bits(x: &[u8]) -> Result<()> {
    match x.iter().find(|&&b| b > 1) {
        Some(b) => Err(Error::InvalidArgument(format!("binary vectors hold 0 or 1, found {b}"))),
        None => Ok(()),
    }
}
