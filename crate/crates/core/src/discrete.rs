//! Discrete channel: diffusion on probability simplexes.
//!
//! The forward kernel mixes a categorical distribution toward uniform,
//! `p_t = (1 - beta_t) p_{t-1} + beta_t u`, and the reverse kernel reweights
//! that same mixture by exponentiated network logits and renormalizes.
//! States are carried as distributions end to end; categories are only
//! materialized by the final argmax.

use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::Rng as _;

use crate::denoiser::{ConditioningContext, DenoiserParams};
use crate::encode::{argmax, Layout};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng;
use crate::schedule::{NoiseSchedule, TimestepPlan};

use crate::continuous::LossGrad;

/// `(1 - beta) p + beta u`.
pub fn lh_forward_step(p: ArrayView1<f64>, beta: f64) -> Vec<f64> {
    let u = 1.0 / p.len() as f64;
    p.iter().map(|&v| (1.0 - beta) * v + beta * u).collect()
}

/// Closed-form `t`-step marginal: `gamma_t p0 + (1 - gamma_t) u`.
pub fn lh_forward_marginal(p0: ArrayView1<f64>, t: usize, schedule: &NoiseSchedule) -> Vec<f64> {
    let gamma = schedule.alpha_bar(t);
    let u = 1.0 / p0.len() as f64;
    p0.iter().map(|&v| gamma * v + (1.0 - gamma) * u).collect()
}

/// Reverse kernel: `p_prev ∝ exp(logits) ⊙ ((1 - beta) p_t + beta u)`,
/// normalized in log space.
pub fn lh_reverse_step(
    logits: ArrayView1<f64>,
    p_t: ArrayView1<f64>,
    beta: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; p_t.len()];
    reverse_into(logits, p_t, beta, ArrayViewMut1::from(out.as_mut_slice()))?;
    Ok(out)
}

fn reverse_into(
    logits: ArrayView1<f64>,
    p_t: ArrayView1<f64>,
    beta: f64,
    mut out: ArrayViewMut1<f64>,
) -> Result<()> {
    let k = p_t.len();
    let u = 1.0 / k as f64;
    let mut max = f64::NEG_INFINITY;
    for i in 0..k {
        let mix = (1.0 - beta) * p_t[i] + beta * u;
        let lw = if mix > 0.0 {
            logits[i] + mix.ln()
        } else {
            f64::NEG_INFINITY
        };
        out[i] = lw;
        max = max.max(lw);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite(
            "reverse kernel has no mass on any category".into(),
        ));
    }
    let mut total = 0.0;
    for v in out.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in out.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Effective mixing weight between two plan timesteps: the kernel that maps
/// the `t_prev` marginal to the `t` marginal. Equals `beta_t` for adjacent steps.
pub fn effective_beta(schedule: &NoiseSchedule, t_prev: usize, t: usize) -> f64 {
    1.0 - schedule.alpha_bar(t) / schedule.alpha_bar(t_prev)
}

/// Per-block distributions for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexState {
    /// `n x cat_width`; observed blocks hold their one-hot value.
    pub p: Array2<f64>,
    /// `n x n_blocks`; 1 where the block is being imputed.
    pub hidden: Array2<f64>,
    pub t: usize,
}

impl SimplexState {
    /// Uniform distributions at withheld blocks.
    pub fn uniform(ctx: &ConditioningContext, t: usize) -> Self {
        let layout = ctx.layout();
        let mut p = ctx.obs_cat.clone();
        for i in 0..p.nrows() {
            for (b, block) in layout.blocks.iter().enumerate() {
                if ctx.hidden_cat[[i, b]] == 1.0 {
                    p.slice_mut(s![i, block.offset..block.offset + block.k])
                        .fill(1.0 / block.k as f64);
                }
            }
        }
        SimplexState {
            p,
            hidden: ctx.hidden_cat.clone(),
            t,
        }
    }

    /// Network view: withheld blocks only, zero elsewhere.
    pub fn network_view(&self, layout: &Layout) -> Array2<f64> {
        let mut v = self.p.clone();
        zero_visible_blocks(&mut v, &self.hidden, layout);
        v
    }
}

fn zero_visible_blocks(m: &mut Array2<f64>, hidden: &Array2<f64>, layout: &Layout) {
    for i in 0..m.nrows() {
        for (b, block) in layout.blocks.iter().enumerate() {
            if hidden[[i, b]] != 1.0 {
                m.slice_mut(s![i, block.offset..block.offset + block.k])
                    .fill(0.0);
            }
        }
    }
}

/// Applies the reverse kernel to every withheld block with explicit logits.
pub fn reverse_apply(
    state: &SimplexState,
    logits: &Array2<f64>,
    layout: &Layout,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<SimplexState> {
    let beta = effective_beta(schedule, t_prev, state.t);
    let mut p = state.p.clone();
    for i in 0..p.nrows() {
        for (b, block) in layout.blocks.iter().enumerate() {
            if state.hidden[[i, b]] != 1.0 {
                continue;
            }
            let range = block.offset..block.offset + block.k;
            let cur = state.p.slice(s![i, range.clone()]);
            let l = logits.slice(s![i, range.clone()]);
            reverse_into(l, cur, beta, p.slice_mut(s![i, range]))?;
        }
    }
    Ok(SimplexState {
        p,
        hidden: state.hidden.clone(),
        t: t_prev,
    })
}

/// One reverse step `t -> t_prev` with the network's logits at `t`.
pub fn reverse_step(
    params: &DenoiserParams,
    state: &SimplexState,
    ctx: &ConditioningContext,
    t_prev: usize,
    schedule: &NoiseSchedule,
) -> Result<(SimplexState, Array2<f64>)> {
    let layout = ctx.layout();
    let n = ctx.n_rows();
    let logits = params.predict_logits(
        state.network_view(layout).view(),
        &vec![state.t; n],
        ctx,
    )?;
    let next = reverse_apply(state, &logits, layout, t_prev, schedule)?;
    Ok((next, logits))
}

/// Full reverse pass from uniform at `T` down to `t = 0`. Returns the final
/// distributions (observed blocks keep their one-hot values).
pub fn sample_disc(
    params: &DenoiserParams,
    ctx: &ConditioningContext,
    plan: &TimestepPlan,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    if plan.last() > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "plan ends at {} but the schedule has T = {}",
            plan.last(),
            schedule.steps()
        )));
    }
    let mut state = SimplexState::uniform(ctx, plan.last());
    for (_, t_prev) in plan.reverse_pairs() {
        state = reverse_step(params, &state, ctx, t_prev, schedule)?.0;
    }
    Ok(state.p)
}

/// Argmax category (1-based) of every block; ties go to the lowest index.
pub fn decode_argmax(p: &Array2<f64>, layout: &Layout) -> Array2<usize> {
    Array2::from_shape_fn((p.nrows(), layout.n_blocks()), |(i, b)| {
        let block = layout.blocks[b];
        argmax(p.slice(s![i, block.offset..block.offset + block.k])) + 1
    })
}

/// Per-row timesteps for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscDraws {
    pub t: Vec<usize>,
}

impl DiscDraws {
    pub fn sample(n: usize, total_steps: usize, rng: &mut rng::Rng) -> Self {
        DiscDraws {
            t: (0..n).map(|_| rng.random_range(1..=total_steps)).collect(),
        }
    }
}

/// Training input: targets get the forward marginal of their one-hot value,
/// other withheld blocks are uniform, visible blocks zero.
pub fn training_state(
    p0: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    hidden: ArrayView2<f64>,
    layout: &Layout,
    t: &[usize],
    schedule: &NoiseSchedule,
) -> Array2<f64> {
    let mut p_t = Array2::zeros(p0.dim());
    for i in 0..p0.nrows() {
        for (b, block) in layout.blocks.iter().enumerate() {
            if hidden[[i, b]] != 1.0 {
                continue;
            }
            let range = block.offset..block.offset + block.k;
            let mut dst = p_t.slice_mut(s![i, range.clone()]);
            if targets[[i, b]] == 1.0 {
                let m = lh_forward_marginal(p0.slice(s![i, range]), t[i], schedule);
                for (d, v) in dst.iter_mut().zip(m) {
                    *d = v;
                }
            } else {
                dst.fill(1.0 / block.k as f64);
            }
        }
    }
    p_t
}

/// Mean cross-entropy between one-hot targets and `softmax(logits)` over
/// target blocks, with its gradient with respect to the logits.
pub fn masked_cross_entropy(
    logits: ArrayView2<f64>,
    p0: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    layout: &Layout,
) -> (f64, Array2<f64>, usize) {
    let count = targets.iter().filter(|&&m| m == 1.0).count();
    let mut grad = Array2::zeros(logits.dim());
    if count == 0 {
        return (0.0, grad, 0);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    for i in 0..logits.nrows() {
        for (b, block) in layout.blocks.iter().enumerate() {
            if targets[[i, b]] != 1.0 {
                continue;
            }
            let range = block.offset..block.offset + block.k;
            let l = logits.slice(s![i, range.clone()]);
            let y = p0.slice(s![i, range.clone()]);
            let max = l.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
            let lse = max + l.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            let mut g = grad.slice_mut(s![i, range]);
            for k in 0..block.k {
                let prob = (l[k] - lse).exp();
                loss -= y[k] * (l[k] - lse);
                g[k] = (prob - y[k]) * scale;
            }
        }
    }
    (loss * scale, grad, count)
}

/// Cross-entropy denoising loss over target blocks.
pub fn loss_disc(
    params: &DenoiserParams,
    p0: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    ctx: &ConditioningContext,
    schedule: &NoiseSchedule,
    draws: &DiscDraws,
) -> Result<LossGrad> {
    let net: &Mlp = params.disc_net()?;
    let layout = ctx.layout();
    let p_t = training_state(p0, targets, ctx.hidden_cat.view(), layout, &draws.t, schedule);
    let (logits, tape) = params.predict_logits_tape(p_t.view(), &draws.t, ctx)?;
    let (loss, d_out, count) = masked_cross_entropy(logits.view(), p0, targets, layout);
    let mut grads = net.zeros_like();
    if count > 0 {
        net.backward(&tape, d_out.view(), &mut grads);
    }
    Ok(LossGrad { loss, grads, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::CatBlock;
    use ndarray::{array, Array1};

    #[test]
    fn forward_step_examples() {
        let p = array![0.2, 0.5, 0.3];
        assert_eq!(lh_forward_step(p.view(), 0.0), vec![0.2, 0.5, 0.3]);
        let full = lh_forward_step(p.view(), 1.0);
        assert!(full.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let half = lh_forward_step(array![1.0, 0.0, 0.0].view(), 0.5);
        let expected = [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for (a, b) in half.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn marginal_reduces_to_one_step_and_to_uniform() {
        let s = NoiseSchedule::linear(10, 0.1, 0.9).unwrap();
        let p0 = array![0.0, 1.0, 0.0, 0.0];
        let one = lh_forward_marginal(p0.view(), 1, &s);
        let step = lh_forward_step(p0.view(), s.beta(1));
        for (a, b) in one.iter().zip(&step) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = NoiseSchedule::from_betas(vec![0.999_999_999_999; 4]).unwrap();
        let end = lh_forward_marginal(p0.view(), 4, &s);
        assert!(end.iter().all(|&v| (v - 0.25).abs() < 1e-12));
    }

    #[test]
    fn zero_logits_leave_the_mixture() {
        let p = array![0.7, 0.2, 0.1];
        let out = lh_reverse_step(Array1::zeros(3).view(), p.view(), 0.3).unwrap();
        let mix = lh_forward_step(p.view(), 0.3);
        for (a, b) in out.iter().zip(&mix) {
            assert!((a - b).abs() < 1e-15);
        }
        let u = Array1::from_elem(5, 0.2);
        let out = lh_reverse_step(Array1::zeros(5).view(), u.view(), 0.4).unwrap();
        assert_eq!(out, vec![0.2; 5]);
    }

    #[test]
    fn large_logit_gives_near_one_hot() {
        let p = array![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
        let out = lh_reverse_step(array![50.0, 0.0, 0.0].view(), p.view(), 0.1).unwrap();
        assert!(out[0] > 1.0 - 1e-12 && out[1] < 1e-20 && out[2] < 1e-20);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let err = lh_reverse_step(array![0.0, 0.0].view(), array![0.0, 0.0].view(), 0.0);
        assert!(err.is_err());
    }

    #[test]
    fn adjacent_effective_beta_is_beta() {
        let s = NoiseSchedule::linear(5, 0.1, 0.3).unwrap();
        for t in 1..=5 {
            assert!((effective_beta(&s, t - 1, t) - s.beta(t)).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let layout = Layout {
            cont_dims: vec![],
            blocks: vec![CatBlock { column: 0, offset: 0, k: 4 }],
            n_columns: 1,
        };
        let y = array![[0.0, 0.0, 1.0, 0.0]];
        let targets = array![[1.0]];
        let (ce, _, _) = masked_cross_entropy(Array2::zeros((1, 4)).view(), y.view(), targets.view(), &layout);
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!((ce - 1.3863).abs() < 1e-4);
        let confident = array![[0.0, 0.0, 50.0, 0.0]];
        let (ce, _, _) = masked_cross_entropy(confident.view(), y.view(), targets.view(), &layout);
        assert!(ce < 1e-20);
        let (ce, g, n) = masked_cross_entropy(confident.view(), y.view(), array![[0.0]].view(), &layout);
        assert_eq!((ce, n), (0.0, 0));
        assert!(g.iter().all(|&v| v == 0.0));
    }
}
