//! Continuous channel: masked forward noising, the noise-prediction loss,
//! stochastic DDPM steps and (generalized) DDIM steps.

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::denoiser::{ConditioningContext, DenoiserParams};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::rng;
use crate::schedule::{sigma_from_alpha_bars, NoiseSchedule, TimestepPlan};

/// Bound applied to the predicted clean value inside the sampler, in
/// standardized units.
pub const DEFAULT_X0_CLIP: f64 = 5.0;

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`, elementwise.
pub fn forward_noise(
    x0: ArrayView2<f64>,
    t: usize,
    schedule: &NoiseSchedule,
    noise: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    if t > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "timestep {t} outside 0..={}",
            schedule.steps()
        )));
    }
    if x0.dim() != noise.dim() {
        return Err(Error::Shape("noise must match x0".into()));
    }
    let a = schedule.alpha_bar(t);
    Ok(Zip::from(x0)
        .and(noise)
        .map_collect(|&x, &e| a.sqrt() * x + (1.0 - a).sqrt() * e))
}

/// Clean-value estimate implied by a noise prediction.
pub fn predicted_x0(x_t: f64, eps: f64, alpha_bar_t: f64) -> f64 {
    (x_t - (1.0 - alpha_bar_t).sqrt() * eps) / alpha_bar_t.sqrt()
}

/// Generalized DDIM update from `abar_t` to `abar_prev`:
/// `sqrt(abar_prev) x0_hat + sqrt(1 - abar_prev - sigma^2) eps + sigma z`.
pub fn ddim_update(
    x_t: f64,
    eps: f64,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
    sigma: f64,
    z: f64,
) -> f64 {
    let x0 = predicted_x0(x_t, eps, alpha_bar_t);
    let dir = (1.0 - alpha_bar_prev - sigma * sigma).max(0.0).sqrt();
    alpha_bar_prev.sqrt() * x0 + dir * eps + sigma * z
}

/// DDPM posterior mean `(x_t - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t)`.
pub fn ddpm_mean(x_t: f64, eps: f64, schedule: &NoiseSchedule, t: usize) -> f64 {
    let beta = schedule.beta(t);
    (x_t - beta / (1.0 - schedule.alpha_bar(t)).sqrt() * eps) / (1.0 - beta).sqrt()
}

/// Noise estimate `sqrt(1 - abar_t) x_t + sqrt(abar_t) f(x_t, t)` where `f`
/// is the continuous network.
///
/// The first term is the exact estimate for standard normal data, so the
/// network only models the deviation from it. The implied clean value
/// `sqrt(abar_t) x_t - sqrt(1 - abar_t) f` stays bounded as `abar_t -> 0`.
pub fn estimate_noise(
    params: &DenoiserParams,
    x_t: ArrayView2<f64>,
    t: &[usize],
    ctx: &ConditioningContext,
    schedule: &NoiseSchedule,
) -> Result<Array2<f64>> {
    let raw = params.predict_noise(x_t, t, ctx)?;
    Ok(precondition(raw, x_t, t, schedule))
}

fn precondition(mut raw: Array2<f64>, x_t: ArrayView2<f64>, t: &[usize], schedule: &NoiseSchedule) -> Array2<f64> {
    for (i, mut row) in raw.rows_mut().into_iter().enumerate() {
        let a = schedule.alpha_bar(t[i]);
        let (skip, out) = ((1.0 - a).sqrt(), a.sqrt());
        row.zip_mut_with(&x_t.row(i), |f, &x| *f = skip * x + out * *f);
    }
    raw
}

/// Reverse-process state over the continuous coordinates of a batch.
///
/// `x` holds the current value at withheld coordinates and the frozen
/// observed value everywhere else.
#[derive(Debug, Clone, PartialEq)]
pub struct ContState {
    pub x: Array2<f64>,
    /// 1 at coordinates being imputed, 0 at observed ones.
    pub hidden: Array2<f64>,
    pub t: usize,
}

impl ContState {
    /// Starting state at `t`: standard normal draws at withheld coordinates.
    pub fn init(ctx: &ConditioningContext, t: usize, seed: u64) -> Self {
        let mut rng = rng::rng(seed);
        let mut x = ctx.obs_cont.clone();
        Zip::from(&mut x).and(&ctx.hidden_cont).for_each(|v, &h| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if h == 1.0 {
                *v = z;
            }
        });
        ContState {
            x,
            hidden: ctx.hidden_cont.clone(),
            t,
        }
    }

    /// State as fed to the network: withheld coordinates only.
    pub fn network_view(&self) -> Array2<f64> {
        &self.x * &self.hidden
    }

    /// Current values at withheld coordinates, observed values elsewhere.
    pub fn values(&self) -> &Array2<f64> {
        &self.x
    }
}

/// One ancestral DDPM step `t -> t - 1` with variance `beta_t`
/// (no noise on the final step to `t = 0`).
pub fn ddpm_step(
    params: &DenoiserParams,
    state: &ContState,
    ctx: &ConditioningContext,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<ContState> {
    let t = state.t;
    if t == 0 || t > schedule.steps() {
        return Err(Error::InvalidArgument(format!("ddpm step from t = {t}")));
    }
    let n = ctx.n_rows();
    let eps = estimate_noise(params, state.network_view().view(), &vec![t; n], ctx, schedule)?;
    let std = if t > 1 { schedule.beta(t).sqrt() } else { 0.0 };
    let mut rng = rng::rng(seed);
    let mut x = state.x.clone();
    Zip::from(&mut x)
        .and(&eps)
        .and(&state.hidden)
        .for_each(|v, &e, &h| {
            let z: f64 = StandardNormal.sample(&mut rng);
            if h == 1.0 {
                *v = ddpm_mean(*v, e, schedule, t) + std * z;
            }
        });
    Ok(ContState {
        x,
        hidden: state.hidden.clone(),
        t: t - 1,
    })
}

/// Sampler knobs beyond the plan itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimOptions {
    /// Bound on the predicted clean value; `None` disables clipping.
    pub clip_x0: Option<f64>,
}

impl Default for DdimOptions {
    fn default() -> Self {
        DdimOptions {
            clip_x0: Some(DEFAULT_X0_CLIP),
        }
    }
}

/// Output of a DDIM step: the new state and the clean-value estimate.
pub struct DdimStepOutput {
    pub state: ContState,
    pub x0_hat: Array2<f64>,
}

/// Applies a DDIM update given an explicit noise prediction.
#[allow(clippy::too_many_arguments)]
pub fn ddim_apply(
    state: &ContState,
    eps: &Array2<f64>,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    options: DdimOptions,
    noise_rng: &mut rng::Rng,
) -> Result<DdimStepOutput> {
    let t = state.t;
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!("ddim step {t} -> {t_prev}")));
    }
    let a_t = schedule.alpha_bar(t);
    let a_prev = schedule.alpha_bar(t_prev);
    let sigma = if eta == 0.0 {
        0.0
    } else {
        sigma_from_alpha_bars(a_prev, a_t, eta)?
    };
    let mut x = state.x.clone();
    let mut x0_hat = state.x.clone();
    Zip::from(&mut x)
        .and(&mut x0_hat)
        .and(eps)
        .and(&state.hidden)
        .for_each(|v, x0_out, &e, &h| {
            let z: f64 = if sigma > 0.0 {
                StandardNormal.sample(noise_rng)
            } else {
                0.0
            };
            if h != 1.0 {
                return;
            }
            let mut e = e;
            let mut x0 = predicted_x0(*v, e, a_t);
            if let Some(c) = options.clip_x0 {
                if x0.abs() > c {
                    x0 = x0.clamp(-c, c);
                    e = (*v - a_t.sqrt() * x0) / (1.0 - a_t).sqrt();
                }
            }
            *x0_out = x0;
            let dir = (1.0 - a_prev - sigma * sigma).max(0.0).sqrt();
            *v = a_prev.sqrt() * x0 + dir * e + sigma * z;
        });
    Ok(DdimStepOutput {
        state: ContState {
            x,
            hidden: state.hidden.clone(),
            t: t_prev,
        },
        x0_hat,
    })
}

/// One DDIM step `t -> t_prev` using the network's noise prediction.
#[allow(clippy::too_many_arguments)]
pub fn ddim_step(
    params: &DenoiserParams,
    state: &ContState,
    ctx: &ConditioningContext,
    t_prev: usize,
    schedule: &NoiseSchedule,
    eta: f64,
    options: DdimOptions,
    noise_rng: &mut rng::Rng,
) -> Result<DdimStepOutput> {
    let n = ctx.n_rows();
    let eps = estimate_noise(params, state.network_view().view(), &vec![state.t; n], ctx, schedule)?;
    ddim_apply(state, &eps, t_prev, schedule, eta, options, noise_rng)
}

/// Full reverse pass over `plan`, starting from standard normal noise
/// seeded by `init_seed`. Injected noise (eta > 0) is drawn from `noise_seed`.
/// Returns the continuous block with imputed withheld coordinates.
pub fn sample_cont(
    params: &DenoiserParams,
    ctx: &ConditioningContext,
    plan: &TimestepPlan,
    schedule: &NoiseSchedule,
    init_seed: u64,
    noise_seed: u64,
    options: DdimOptions,
) -> Result<Array2<f64>> {
    if plan.last() > schedule.steps() {
        return Err(Error::InvalidArgument(format!(
            "plan ends at {} but the schedule has T = {}",
            plan.last(),
            schedule.steps()
        )));
    }
    let mut state = ContState::init(ctx, plan.last(), init_seed);
    let mut noise_rng = rng::rng(noise_seed);
    for (_, t_prev) in plan.reverse_pairs() {
        state = ddim_step(
            params,
            &state,
            ctx,
            t_prev,
            schedule,
            plan.eta(),
            options,
            &mut noise_rng,
        )?
        .state;
    }
    Ok(state.x)
}

/// Per-row timesteps and per-coordinate noise for one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContDraws {
    pub t: Vec<usize>,
    pub noise: Array2<f64>,
}

impl ContDraws {
    pub fn sample(n: usize, width: usize, total_steps: usize, rng: &mut rng::Rng) -> Self {
        let t = (0..n).map(|_| rng.random_range(1..=total_steps)).collect();
        let noise = Array2::from_shape_simple_fn((n, width), || StandardNormal.sample(rng));
        ContDraws { t, noise }
    }
}

/// Scalar loss with gradients for one network.
pub struct LossGrad {
    pub loss: f64,
    pub grads: Mlp,
    /// Number of supervised cells.
    pub count: usize,
}

/// Mean squared error over `targets` (1 = supervised), with its gradient
/// with respect to `pred`.
pub fn masked_mse(
    pred: ArrayView2<f64>,
    truth: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> (f64, Array2<f64>, usize) {
    let count = targets.iter().filter(|&&m| m == 1.0).count();
    if count == 0 {
        return (0.0, Array2::zeros(pred.dim()), 0);
    }
    let scale = 1.0 / count as f64;
    let mut loss = 0.0;
    let grad = Zip::from(pred).and(truth).and(targets).map_collect(|&p, &y, &m| {
        if m == 1.0 {
            let r = p - y;
            loss += r * r;
            2.0 * r * scale
        } else {
            0.0
        }
    });
    (loss * scale, grad, count)
}

/// Noisy network input for training: targets get the forward-noised truth,
/// other withheld coordinates get pure noise around zero, observed ones zero.
pub fn training_state(
    x0: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    hidden: ArrayView2<f64>,
    draws: &ContDraws,
    schedule: &NoiseSchedule,
) -> Array2<f64> {
    let mut x_t = Array2::zeros(x0.dim());
    for ((i, j), v) in x_t.indexed_iter_mut() {
        if hidden[[i, j]] != 1.0 {
            continue;
        }
        let a = schedule.alpha_bar(draws.t[i]);
        let clean = if targets[[i, j]] == 1.0 { x0[[i, j]] } else { 0.0 };
        *v = a.sqrt() * clean + (1.0 - a).sqrt() * draws.noise[[i, j]];
    }
    x_t
}

/// Noise-prediction loss over target coordinates.
///
/// `x0` is the encoded continuous block; `targets` marks supervised
/// coordinates (a subset of `ctx.hidden_cont`).
pub fn loss_cont(
    params: &DenoiserParams,
    x0: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    ctx: &ConditioningContext,
    schedule: &NoiseSchedule,
    draws: &ContDraws,
) -> Result<LossGrad> {
    let net = params.cont_net()?;
    let x_t = training_state(x0, targets, ctx.hidden_cont.view(), draws, schedule);
    let (raw, tape) = params.predict_noise_tape(x_t.view(), &draws.t, ctx)?;
    let eps_hat = precondition(raw, x_t.view(), &draws.t, schedule);
    let (loss, mut d_out, count) = masked_mse(eps_hat.view(), draws.noise.view(), targets);
    for (i, mut row) in d_out.rows_mut().into_iter().enumerate() {
        row *= schedule.alpha_bar(draws.t[i]).sqrt();
    }
    let mut grads = net.zeros_like();
    if count > 0 {
        net.backward(&tape, d_out.view(), &mut grads);
    }
    Ok(LossGrad { loss, grads, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_noise_examples() {
        let s = NoiseSchedule::from_betas(vec![0.36]).unwrap();
        let x = forward_noise(array![[1.0]].view(), 1, &s, array![[0.5]].view()).unwrap();
        assert!((x[[0, 0]] - 1.1).abs() < 1e-15);
        let same = forward_noise(array![[1.0]].view(), 0, &s, array![[0.5]].view()).unwrap();
        assert_eq!(same[[0, 0]], 1.0);
        assert!(forward_noise(array![[1.0]].view(), 2, &s, array![[0.5]].view()).is_err());
    }

    #[test]
    fn pure_noise_endpoint() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        let x = forward_noise(array![[3.0]].view(), 1000, &s, array![[0.7]].view()).unwrap();
        assert!((x[[0, 0]] - 0.7).abs() < 1e-2);
    }

    #[test]
    fn ddpm_mean_hand_value() {
        // alpha_t = 0.9, beta_t = 0.1, abar_t = 0.72
        let s = NoiseSchedule::from_betas(vec![0.2, 0.1]).unwrap();
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
        let mu = ddpm_mean(1.0, 0.2, &s, 2);
        let expected = (1.0 / 0.9f64.sqrt()) * (1.0 - (0.1 / 0.28f64.sqrt()) * 0.2);
        assert!((mu - expected).abs() < 1e-12);
        assert!((mu - 1.0142).abs() < 1e-4);
        assert_eq!(ddpm_mean(0.0, 0.0, &s, 2), 0.0);
    }

    #[test]
    fn oracle_noise_inverts_exactly() {
        let s = NoiseSchedule::cosine(100).unwrap();
        for t in [1, 10, 50, 99] {
            let (x0, e) = (0.37, -1.3);
            let a = s.alpha_bar(t);
            let x_t = a.sqrt() * x0 + (1.0 - a).sqrt() * e;
            assert!((predicted_x0(x_t, e, a) - x0).abs() < 1e-10);
            assert!((ddim_update(x_t, e, a, 1.0, 0.0, 0.0) - x0).abs() < 1e-10);
        }
    }

    #[test]
    fn masked_mse_examples() {
        let eps = array![[0.5, -1.0], [2.0, 0.1]];
        let targets = array![[1.0, 0.0], [1.0, 1.0]];
        let (loss, _, n) = masked_mse(eps.view(), eps.view(), targets.view());
        assert_eq!((loss, n), (0.0, 3));
        let zero = Array2::zeros((2, 2));
        let (loss, _, _) = masked_mse(zero.view(), eps.view(), targets.view());
        assert!((loss - (0.25 + 4.0 + 0.01) / 3.0).abs() < 1e-15);
        let (loss, grad, n) = masked_mse(zero.view(), eps.view(), Array2::zeros((2, 2)).view());
        assert_eq!((loss, n), (0.0, 0));
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn training_state_ignores_non_target_values() {
        let s = NoiseSchedule::cosine(10).unwrap();
        let draws = ContDraws {
            t: vec![4, 7],
            noise: array![[0.3, -0.2], [1.0, 0.5]],
        };
        let targets = array![[1.0, 0.0], [0.0, 0.0]];
        let hidden = array![[1.0, 1.0], [0.0, 1.0]];
        let a = training_state(array![[2.0, 9.0], [9.0, 9.0]].view(), targets.view(), hidden.view(), &draws, &s);
        let b = training_state(array![[2.0, -5.0], [0.0, 3.0]].view(), targets.view(), hidden.view(), &draws, &s);
        assert_eq!(a, b);
        assert_eq!(a[[1, 0]], 0.0);
    }
}
