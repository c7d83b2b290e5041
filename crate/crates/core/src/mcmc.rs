//! Metropolis–Hastings estimate of the two-layer gradient.
//!
//! The exact gradient needs the posterior `p_i(f)` over all `2^l`
//! intermediate configurations. Here each sample instead runs `r`
//! independent chains of `t` steps whose proposal is the first-layer
//! distribution `p(f | prefix; θ₁)`. Proposal terms cancel against the prior
//! part of `p_i`, so the acceptance ratio is just the ratio of second-layer
//! likelihoods, and the normalizer `W_i` is never needed. The integrands are
//! evaluated at each chain's final state and averaged.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::likelihood::{add_block_terms, add_log_output_grad, prob_coefs, Batch, GradScratch, GradientSet};
use crate::math::{log_sum_exp, PROB_FLOOR};
use crate::model::{
    check_symbol, latent_log_prior_into, BlockScratch, ConditionalKind, ConditionalModel, IntermediateConfig,
    SwitchBlock,
};
use crate::rng;

/// Chain settings: `rounds` independent chains of `steps` steps per sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McmcConfig {
    pub rounds: usize,
    pub steps: usize,
    pub seed: u64,
}

impl McmcConfig {
    pub fn new(rounds: usize, steps: usize, seed: u64) -> Result<Self> {
        let cfg = Self { rounds, steps, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.steps == 0 {
            return Err(Error::InvalidConfig(
                "mcmc rounds and steps must both be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Unnormalized posterior weight `p(x_{k+1} | f; θ₂) · p(f | prefix; θ₁)`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct PosteriorWeight(f64);

impl PosteriorWeight {
    pub fn value(self) -> f64 {
        self.0
    }
}

fn two_layer(cm: &ConditionalModel) -> Result<(&[SwitchBlock], &SwitchBlock)> {
    match cm.kind() {
        ConditionalKind::TwoLayer { first, second } => Ok((first, second)),
        ConditionalKind::SingleLayer(_) => Err(Error::UnsupportedArchitecture),
    }
}

fn check_config(second: &SwitchBlock, f: &IntermediateConfig) -> Result<()> {
    check_dim("intermediate configuration", second.input_dim(), f.len())
}

pub fn posterior_weight(
    cm: &ConditionalModel,
    prefix: &[u8],
    target: u8,
    f: &IntermediateConfig,
) -> Result<PosteriorWeight> {
    let (first, second) = two_layer(cm)?;
    check_dim("conditional prefix", cm.index(), prefix.len())?;
    check_config(second, f)?;
    check_symbol(target)?;
    let mut prior = 1.0;
    for (block, &bit) in first.iter().zip(f.bits()) {
        let q = block.mixture_prob(prefix)?;
        prior *= if bit == 1 { q } else { 1.0 - q };
    }
    let s = second.mixture_prob(f.bits())?;
    let like = if target == 1 { s } else { 1.0 - s };
    Ok(PosteriorWeight(like * prior))
}

/// Exact posterior `p_i(f)` over all masks, by enumeration.
pub fn exact_posterior(cm: &ConditionalModel, prefix: &[u8], target: u8) -> Result<Vec<f64>> {
    let (first, _) = two_layer(cm)?;
    check_dim("conditional prefix", cm.index(), prefix.len())?;
    check_symbol(target)?;
    let table = cm.latent_table()?;
    let mut scratch = BlockScratch::default();
    let (mut lq1, mut lq0) = (Vec::new(), Vec::new());
    for block in first {
        let (a, b) = block.log_mixture(prefix, &mut scratch);
        lq1.push(a);
        lq0.push(b);
    }
    let mut prior = Vec::new();
    latent_log_prior_into(&lq1, &lq0, &mut prior);
    let joint: Vec<f64> = prior
        .iter()
        .zip(&table.log_out[usize::from(target)])
        .map(|(p, s)| p + s)
        .collect();
    let log_w = log_sum_exp(&joint);
    Ok(joint.iter().map(|v| (v - log_w).exp()).collect())
}

/// First-layer probabilities `q_i`, cached for a fixed prefix.
struct ChainContext<'m> {
    second: &'m SwitchBlock,
    q: Vec<f64>,
    target: u8,
    scratch: BlockScratch,
}

impl<'m> ChainContext<'m> {
    fn new(first: &[SwitchBlock], second: &'m SwitchBlock, prefix: &[u8], target: u8) -> Self {
        let mut scratch = BlockScratch::default();
        let q = first
            .iter()
            .map(|b| b.log_mixture(prefix, &mut scratch).0.exp())
            .collect();
        Self {
            second,
            q,
            target,
            scratch,
        }
    }

    fn propose_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [u8]) {
        for (b, &q) in out.iter_mut().zip(&self.q) {
            let u: f64 = rng.random();
            *b = u8::from(u < q);
        }
    }

    fn log_like(&mut self, f: &[u8]) -> f64 {
        let (lp1, lp0) = self.second.log_mixture(f, &mut self.scratch);
        if self.target == 1 {
            lp1
        } else {
            lp0
        }
    }

    /// Runs one chain, leaving the final state in `state`.
    fn run<R: Rng + ?Sized>(&mut self, steps: usize, rng: &mut R, state: &mut [u8], prop: &mut [u8]) {
        self.propose_into(rng, state);
        let mut cur = self.log_like(state);
        for _ in 0..steps {
            self.propose_into(rng, prop);
            let next = self.log_like(prop);
            let accept = acceptance_from_logs(cur, next);
            let u: f64 = rng.random();
            if u < accept {
                state.copy_from_slice(prop);
                cur = next;
            }
        }
    }
}

/// `min(1, e^next / e^cur)`, or 1 when the current likelihood is
/// numerically zero.
fn acceptance_from_logs(cur: f64, next: f64) -> f64 {
    if cur.exp() < PROB_FLOOR {
        return 1.0;
    }
    (next - cur).min(0.0).exp()
}

/// Draws `f` from the first-layer distribution `p(f | prefix; θ₁)`.
pub fn propose<R: Rng + ?Sized>(cm: &ConditionalModel, prefix: &[u8], rng: &mut R) -> Result<IntermediateConfig> {
    let (first, second) = two_layer(cm)?;
    check_dim("conditional prefix", cm.index(), prefix.len())?;
    let ctx = ChainContext::new(first, second, prefix, 1);
    let mut bits = vec![0u8; first.len()];
    ctx.propose_into(rng, &mut bits);
    IntermediateConfig::new(bits)
}

/// Metropolis–Hastings acceptance probability for moving from `f_cur` to
/// `f_prop` when the proposal is the first-layer distribution.
pub fn acceptance_ratio(
    cm: &ConditionalModel,
    target: u8,
    f_cur: &IntermediateConfig,
    f_prop: &IntermediateConfig,
) -> Result<f64> {
    let (_, second) = two_layer(cm)?;
    check_config(second, f_cur)?;
    check_config(second, f_prop)?;
    check_symbol(target)?;
    let mut scratch = BlockScratch::default();
    let pick = |(lp1, lp0): (f64, f64)| if target == 1 { lp1 } else { lp0 };
    let cur = pick(second.log_mixture(f_cur.bits(), &mut scratch));
    let next = pick(second.log_mixture(f_prop.bits(), &mut scratch));
    Ok(acceptance_from_logs(cur, next))
}

/// Final state of a `steps`-step chain started from a proposal draw.
pub fn mh_chain<R: Rng + ?Sized>(
    cm: &ConditionalModel,
    prefix: &[u8],
    target: u8,
    steps: usize,
    rng: &mut R,
) -> Result<IntermediateConfig> {
    let (first, second) = two_layer(cm)?;
    check_dim("conditional prefix", cm.index(), prefix.len())?;
    check_symbol(target)?;
    if steps == 0 {
        return Err(Error::InvalidArgument("chain length must be at least 1".into()));
    }
    let mut ctx = ChainContext::new(first, second, prefix, target);
    let mut state = vec![0u8; first.len()];
    let mut prop = vec![0u8; first.len()];
    ctx.run(steps, rng, &mut state, &mut prop);
    IntermediateConfig::new(state)
}

/// Transition matrix of one MH step over all `2^l` masks:
/// `P[a][b]` is the probability of moving from `a` to `b`.
pub fn transition_matrix(cm: &ConditionalModel, prefix: &[u8], target: u8) -> Result<Vec<Vec<f64>>> {
    let (first, _) = two_layer(cm)?;
    check_dim("conditional prefix", cm.index(), prefix.len())?;
    check_symbol(target)?;
    let l = first.len();
    let size = 1usize << l;
    let q: Vec<f64> = first.iter().map(|b| b.mixture_prob(prefix)).collect::<Result<_>>()?;
    let proposal: Vec<f64> = (0..size)
        .map(|mask| {
            (0..l)
                .map(|i| if mask >> i & 1 == 1 { q[i] } else { 1.0 - q[i] })
                .product()
        })
        .collect();
    let configs: Vec<IntermediateConfig> = (0..size).map(|m| IntermediateConfig::from_mask(m, l)).collect();
    let mut matrix = vec![vec![0.0; size]; size];
    for a in 0..size {
        let mut stay = 1.0;
        for b in 0..size {
            if a == b {
                continue;
            }
            let move_prob = proposal[b] * acceptance_ratio(cm, target, &configs[a], &configs[b])?;
            matrix[a][b] = move_prob;
            stay -= move_prob;
        }
        matrix[a][a] = stay;
    }
    Ok(matrix)
}

/// Monte-Carlo estimate of [`crate::likelihood::grad`] for a two-layer
/// conditional.
pub fn mcmc_grad(cm: &ConditionalModel, batch: &Batch<'_>, cfg: &McmcConfig) -> Result<GradientSet> {
    let (first, second) = two_layer(cm)?;
    cfg.validate()?;
    check_dim("batch prefix length", cm.index(), batch.prefix_len())?;
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let l = first.len();
    let mut out = GradientSet::zeros_like(cm);
    let mut scratch = GradScratch::default();
    let mut state = vec![0u8; l];
    let mut prop = vec![0u8; l];
    let mut dq = vec![0.0; l];
    let per_chain = 1.0 / (batch.len() * cfg.rounds) as f64;
    let mut sample_id = 0u64;

    for g in batch.groups() {
        dq.iter_mut().for_each(|v| *v = 0.0);
        for target in 0..2u8 {
            let mut ctx = ChainContext::new(first, second, g.prefix, target);
            for _ in 0..g.counts[usize::from(target)] {
                let mut stream = rng::child(cfg.seed, sample_id, 0);
                sample_id += 1;
                for _ in 0..cfg.rounds {
                    ctx.run(cfg.steps, &mut stream, &mut state, &mut prop);
                    for (i, d) in dq.iter_mut().enumerate() {
                        let q = ctx.q[i];
                        *d += per_chain * if state[i] == 1 { 1.0 / q } else { -1.0 / (1.0 - q) };
                    }
                    add_log_output_grad(second, &state, target, per_chain, &mut scratch, out.block_mut(l));
                }
            }
        }
        for (i, block) in first.iter().enumerate() {
            let (lp1, _) = block.log_mixture(g.prefix, &mut scratch.block);
            prob_coefs(
                scratch.block.view(),
                lp1.exp(),
                dq[i],
                &mut scratch.coef_aux,
                &mut scratch.coef_switch,
            );
            add_block_terms(
                block,
                g.prefix,
                &scratch.coef_aux,
                &scratch.coef_switch,
                out.block_mut(i),
            );
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::grad;
    use crate::model::Architecture;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_two_layer(k: usize, m1: usize, l: usize, m2: usize, seed: u64) -> ConditionalModel {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        ConditionalModel::random_uniform(k, Architecture::Two { m1, l, m2 }, 1.5, &mut r).unwrap()
    }

    fn zero_second_layer(cm: &mut ConditionalModel) {
        let l = cm.architecture().latent();
        cm.blocks_mut()[l].params_mut().iter_mut().for_each(|p| *p = 0.0);
    }

    #[test]
    fn config_requires_positive_rounds_and_steps() {
        assert!(McmcConfig::new(0, 5, 1).is_err());
        assert!(McmcConfig::new(3, 0, 1).is_err());
        assert!(McmcConfig::new(1, 1, 1).is_ok());
    }

    #[test]
    fn proposal_from_zero_first_layer_is_fair() {
        let cm = ConditionalModel::zeros(3, Architecture::Two { m1: 2, l: 3, m2: 2 }).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut ones = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let f = propose(&cm, &[1, 0, 1], &mut r).unwrap();
            for (c, &b) in ones.iter_mut().zip(f.bits()) {
                *c += usize::from(b);
            }
        }
        for c in ones {
            let freq = c as f64 / draws as f64;
            assert!((0.47..=0.53).contains(&freq), "{freq}");
        }
    }

    #[test]
    fn saturated_first_layer_proposes_all_ones() {
        let mut cm = ConditionalModel::zeros(2, Architecture::Two { m1: 2, l: 4, m2: 2 }).unwrap();
        for block in cm.blocks_mut().into_iter().take(4) {
            for j in 0..2 {
                *block.aux_bias_mut(j) = 50.0;
            }
        }
        let mut r = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(propose(&cm, &[0, 1], &mut r).unwrap().bits(), &[1, 1, 1, 1]);
        }
    }

    #[test]
    fn proposals_are_reproducible() {
        let cm = random_two_layer(4, 2, 5, 2, 3);
        let draw = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..20)
                .map(|_| propose(&cm, &[1, 1, 0, 1], &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    #[test]
    fn acceptance_identity_and_constant_second_layer() {
        let mut cm = random_two_layer(2, 2, 3, 3, 4);
        let a = IntermediateConfig::from_mask(0b101, 3);
        let b = IntermediateConfig::from_mask(0b010, 3);
        assert_eq!(acceptance_ratio(&cm, 1, &a, &a).unwrap(), 1.0);
        zero_second_layer(&mut cm);
        for t in 0..2 {
            assert_eq!(acceptance_ratio(&cm, t, &a, &b).unwrap(), 1.0);
        }
    }

    #[test]
    fn acceptance_matches_enumerated_posterior_ratio() {
        let cm = random_two_layer(3, 2, 3, 2, 5);
        let prefix = [0u8, 1, 1];
        for target in 0..2u8 {
            let post = exact_posterior(&cm, &prefix, target).unwrap();
            let q = cm.first_layer_probs(&prefix).unwrap();
            let g = |mask: usize| -> f64 {
                (0..3)
                    .map(|i| if mask >> i & 1 == 1 { q[i] } else { 1.0 - q[i] })
                    .product()
            };
            for cur in 0..8 {
                for next in 0..8 {
                    // full MH form: p_i ratio times reverse/forward proposal ratio
                    let expected = (post[next] / post[cur] * g(cur) / g(next)).min(1.0);
                    let got = acceptance_ratio(
                        &cm,
                        target,
                        &IntermediateConfig::from_mask(cur, 3),
                        &IntermediateConfig::from_mask(next, 3),
                    )
                    .unwrap();
                    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
                }
            }
        }
    }

    #[test]
    fn posterior_weight_normalizes_to_exact_posterior() {
        let cm = random_two_layer(2, 3, 3, 2, 6);
        let prefix = [1u8, 0];
        let weights: Vec<f64> = (0..8)
            .map(|m| {
                posterior_weight(&cm, &prefix, 0, &IntermediateConfig::from_mask(m, 3))
                    .unwrap()
                    .value()
            })
            .collect();
        let w: f64 = weights.iter().sum();
        let post = exact_posterior(&cm, &prefix, 0).unwrap();
        for (a, b) in weights.iter().zip(&post) {
            assert!((a / w - b).abs() < 1e-12);
        }
        let p0 = cm.log_prob(&prefix, 0).unwrap().exp();
        assert!((w - p0).abs() < 1e-12);
    }

    #[test]
    fn transition_matrix_fixes_posterior() {
        for (l, seed) in [(1, 7), (2, 8), (3, 9)] {
            let cm = random_two_layer(3, 2, l, 3, seed);
            for target in 0..2u8 {
                let pi = exact_posterior(&cm, &[1, 0, 1], target).unwrap();
                let p = transition_matrix(&cm, &[1, 0, 1], target).unwrap();
                let residual: f64 = (0..pi.len())
                    .map(|b| {
                        let flow: f64 = (0..pi.len()).map(|a| pi[a] * p[a][b]).sum();
                        (flow - pi[b]).abs()
                    })
                    .sum();
                assert!(residual < 1e-10, "l={l} residual {residual}");
                for row in &p {
                    assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn long_chains_match_posterior() {
        let cm = random_two_layer(3, 2, 3, 3, 10);
        let prefix = [1u8, 1, 0];
        let post = exact_posterior(&cm, &prefix, 1).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(11);
        let chains = 20_000;
        let mut hist = vec![0usize; 8];
        for _ in 0..chains {
            hist[mh_chain(&cm, &prefix, 1, 30, &mut r).unwrap().mask()] += 1;
        }
        let tv: f64 = hist
            .iter()
            .zip(&post)
            .map(|(&h, p)| (h as f64 / chains as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.05, "tv {tv}");
    }

    #[test]
    fn chains_are_deterministic() {
        let cm = random_two_layer(2, 2, 4, 2, 12);
        let run = || {
            let mut r = ChaCha8Rng::seed_from_u64(13);
            mh_chain(&cm, &[0, 1], 0, 15, &mut r).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn constant_second_layer_chain_is_proposal() {
        let mut cm = random_two_layer(2, 2, 2, 2, 14);
        zero_second_layer(&mut cm);
        let prefix = [1u8, 0];
        let q = cm.first_layer_probs(&prefix).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(15);
        let chains = 20_000;
        let mut ones = [0usize; 2];
        for _ in 0..chains {
            let f = mh_chain(&cm, &prefix, 1, 5, &mut r).unwrap();
            ones[0] += usize::from(f.bits()[0]);
            ones[1] += usize::from(f.bits()[1]);
        }
        for i in 0..2 {
            let freq = ones[i] as f64 / chains as f64;
            let se = (q[i] * (1.0 - q[i]) / chains as f64).sqrt();
            assert!((freq - q[i]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn constant_second_layer_theta2_is_exact() {
        let mut cm = random_two_layer(3, 2, 3, 2, 16);
        zero_second_layer(&mut cm);
        let rows = vec![vec![1u8, 0, 1, 1], vec![0, 0, 1, 0], vec![1, 1, 1, 1]];
        let batch = Batch::from_rows(3, rows.iter().map(Vec::as_slice)).unwrap();
        let exact = grad(&cm, &batch).unwrap();
        let est = mcmc_grad(&cm, &batch, &McmcConfig::new(3, 4, 17).unwrap()).unwrap();
        // every integrand entry that does not multiply an intermediate bit is
        // constant in f: aux biases, switch weights and switch biases
        let (l, m2) = (3, 2);
        let second_exact = &exact.blocks()[l];
        let second_est = &est.blocks()[l];
        for p in m2 * l..second_exact.len() {
            assert!((second_exact[p] - second_est[p]).abs() < 1e-12, "entry {p}");
        }
    }

    #[test]
    fn single_layer_is_rejected() {
        let cm = ConditionalModel::zeros(1, Architecture::Single { m: 2 }).unwrap();
        let rows = vec![vec![1u8, 0]];
        let batch = Batch::from_rows(1, rows.iter().map(Vec::as_slice)).unwrap();
        assert!(matches!(
            mcmc_grad(&cm, &batch, &McmcConfig::new(1, 1, 0).unwrap()),
            Err(Error::UnsupportedArchitecture)
        ));
    }

    #[test]
    fn estimator_converges_to_exact_gradient() {
        let cm = random_two_layer(4, 2, 3, 2, 18);
        let mut r = ChaCha8Rng::seed_from_u64(19);
        let rows: Vec<Vec<u8>> = (0..16)
            .map(|_| {
                let mut row: Vec<u8> = (0..4).map(|_| u8::from(r.random_bool(0.5))).collect();
                row.push(1);
                row
            })
            .collect();
        let batch = Batch::from_rows(4, rows.iter().map(Vec::as_slice)).unwrap();
        let exact = grad(&cm, &batch).unwrap();
        let mut mean = GradientSet::zeros_like(&cm);
        let trials = 50;
        for s in 0..trials {
            let est = mcmc_grad(&cm, &batch, &McmcConfig::new(50, 20, s).unwrap()).unwrap();
            mean.add_scaled(&est, 1.0 / trials as f64);
        }
        let rel = mean.l2_distance(&exact) / exact.l2_norm();
        assert!(rel < 0.05, "relative error {rel}");
    }
}
