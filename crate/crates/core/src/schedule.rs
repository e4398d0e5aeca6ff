//! Noise schedules, sampling subsequences and the eta-controlled variance.

use crate::error::{Error, Result};

/// Offset of the cosine schedule.
pub const COSINE_OFFSET: f64 = 0.008;
/// Upper clip applied to cosine betas.
pub const MAX_BETA: f64 = 0.999;

/// Betas and cumulative products for timesteps `1..=T`.
///
/// Index `t` of [`alpha_bar`](Self::alpha_bar) uses the convention
/// `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidArgument(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// Cosine schedule with offset 0.008 and betas clipped to 0.999.
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        let f = |t: f64| {
            let x = (t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let f0 = f(0.0);
        let betas = (1..=steps)
            .map(|t| {
                let prev = f((t - 1) as f64) / f0;
                let cur = f(t as f64) / f0;
                (1.0 - cur / prev).clamp(1e-8, MAX_BETA)
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Betas linearly spaced from `beta_min` to `beta_max`.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max) {
            return Err(Error::InvalidArgument(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    /// Linear kernel for the discrete channel. Starts at `0.02 * 100 / T`
    /// (capped at 0.5) and ends where the terminal retention
    /// `prod(1 - beta_t)` reaches `terminal`.
    pub fn linear_to_terminal(steps: usize, terminal: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
        }
        if !(terminal > 0.0 && terminal < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "terminal retention {terminal} outside (0, 1)"
            )));
        }
        let start = (2.0 / steps as f64).min(0.5);
        let retention = |end: f64| {
            Self::linear(steps, start.min(end), end)
                .map(|s| s.alpha_bar(steps))
                .unwrap_or(0.0)
        };
        if steps == 1 {
            return Self::linear(1, 1.0 - terminal, 1.0 - terminal);
        }
        if retention(start) <= terminal {
            return Self::linear(steps, start, start);
        }
        let (mut lo, mut hi) = (start, MAX_BETA);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if retention(mid) > terminal {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Self::linear(steps, start, hi)
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Cumulative product up to `t`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Uniform,
    Quadratic,
}

impl std::str::FromStr for Spacing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Spacing::Uniform),
            "quadratic" => Ok(Spacing::Quadratic),
            other => Err(Error::InvalidArgument(format!("unknown spacing '{other}'"))),
        }
    }
}

/// Strictly increasing timestep subsequence ending at `T`, plus `eta`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TimestepPlan {
    timesteps: Vec<usize>,
    eta: f64,
}

impl TimestepPlan {
    pub fn new(timesteps: Vec<usize>, eta: f64) -> Result<Self> {
        if timesteps.is_empty() {
            return Err(Error::InvalidArgument("timestep plan is empty".into()));
        }
        if timesteps[0] == 0 || timesteps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "timesteps must be strictly increasing and >= 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
        }
        Ok(TimestepPlan { timesteps, eta })
    }

    /// Ascending timesteps `tau_1 < ... < tau_S = T`.
    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidArgument(format!("eta {eta} outside [0, 1]")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    pub fn last(&self) -> usize {
        *self.timesteps.last().expect("non-empty plan")
    }

    /// Reverse-order `(t, t_prev)` pairs, ending with `(tau_1, 0)`.
    pub fn reverse_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::with_capacity(self.timesteps.len());
        for i in (0..self.timesteps.len()).rev() {
            let prev = if i == 0 { 0 } else { self.timesteps[i - 1] };
            pairs.push((self.timesteps[i], prev));
        }
        pairs
    }
}

/// Subsequence of `steps` timesteps out of `1..=T`, always containing `T`.
pub fn make_subsequence(total: usize, steps: usize, spacing: Spacing) -> Result<TimestepPlan> {
    if steps == 0 || steps > total {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= steps <= T, got steps = {steps}, T = {total}"
        )));
    }
    let mut taus: Vec<usize> = (1..=steps)
        .map(|i| {
            let frac = i as f64 / steps as f64;
            let x = match spacing {
                Spacing::Uniform => frac,
                Spacing::Quadratic => frac * frac,
            };
            ((x * total as f64).round() as usize).clamp(1, total)
        })
        .collect();
    // Quadratic spacing can collide near t = 1; push collisions upward.
    for i in 1..taus.len() {
        if taus[i] <= taus[i - 1] {
            taus[i] = taus[i - 1] + 1;
        }
    }
    // ...and pull back down from T if that overflowed.
    let last = taus.len() - 1;
    taus[last] = total;
    for i in (0..last).rev() {
        if taus[i] >= taus[i + 1] {
            taus[i] = taus[i + 1] - 1;
        }
    }
    TimestepPlan::new(taus, 0.0)
}

/// Standard deviation injected when stepping from `t` back to `t_prev`:
/// `eta * sqrt((1 - a_prev) / (1 - a_t)) * sqrt(1 - a_t / a_prev)`.
pub fn sigma_eta(schedule: &NoiseSchedule, t_prev: usize, t: usize, eta: f64) -> Result<f64> {
    if t_prev >= t {
        return Err(Error::InvalidArgument(format!(
            "need t_prev < t, got ({t_prev}, {t})"
        )));
    }
    sigma_from_alpha_bars(schedule.alpha_bar(t_prev), schedule.alpha_bar(t), eta)
}

/// [`sigma_eta`] evaluated on explicit cumulative products.
pub fn sigma_from_alpha_bars(alpha_bar_prev: f64, alpha_bar_t: f64, eta: f64) -> Result<f64> {
    if alpha_bar_t >= 1.0 {
        return Err(Error::InvalidArgument(
            "alpha_bar_t = 1 makes the variance ratio undefined".into(),
        ));
    }
    let ratio = ((1.0 - alpha_bar_prev) / (1.0 - alpha_bar_t)).max(0.0);
    let step = (1.0 - alpha_bar_t / alpha_bar_prev).max(0.0);
    Ok(eta * ratio.sqrt() * step.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_two_step_products() {
        let s = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.72).abs() < 1e-15);
    }

    #[test]
    fn cosine_thousand_ends_near_zero() {
        let s = NoiseSchedule::cosine(1000).unwrap();
        assert!(s.alpha_bar(1000) < 1e-3);
        // direct evaluation of the cosine formula at t = T is exactly 0; the
        // clipped product stays positive
        assert!(s.alpha_bar(1000) > 0.0);
    }

    #[test]
    fn schedules_are_monotone() {
        for s in [
            NoiseSchedule::cosine(100).unwrap(),
            NoiseSchedule::cosine(1).unwrap(),
            NoiseSchedule::linear(50, 1e-4, 0.02).unwrap(),
            NoiseSchedule::linear_to_terminal(100, 0.005).unwrap(),
        ] {
            let t = s.steps();
            assert!(s.alpha_bar(t) <= s.alpha_bar(1) && s.alpha_bar(1) < 1.0);
            for t in 1..s.steps() {
                assert!(s.alpha_bar(t + 1) < s.alpha_bar(t));
            }
        }
    }

    #[test]
    fn stored_products_match_brute_force() {
        let s = NoiseSchedule::cosine(100).unwrap();
        for t in 1..=100 {
            let brute: f64 = s.betas()[..t].iter().map(|b| 1.0 - b).product();
            assert!((brute - s.alpha_bar(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn discrete_kernel_destroys_information() {
        for steps in [1, 2, 20, 100, 1000] {
            let s = NoiseSchedule::linear_to_terminal(steps, 0.005).unwrap();
            assert!(s.alpha_bar(steps) < 0.01, "T = {steps}");
            assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn invalid_schedules_are_errors() {
        assert!(NoiseSchedule::cosine(0).is_err());
        assert!(NoiseSchedule::linear(10, 0.2, 0.1).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.1).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.5, 1.0]).is_err());
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_from_alpha_bars(0.9, 0.8, 0.0).unwrap(), 0.0);
        let full = sigma_from_alpha_bars(0.9, 0.8, 1.0).unwrap();
        let expected = (0.1f64 / 0.2).sqrt() * (1.0f64 - 0.8 / 0.9).sqrt();
        assert!((full - expected).abs() < 1e-15);
        assert!((full - 0.2357).abs() < 1e-4);
        let half = sigma_from_alpha_bars(0.9, 0.8, 0.5).unwrap();
        assert!((half - 0.5 * full).abs() < 1e-15);
        assert!(sigma_from_alpha_bars(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_is_monotone_in_eta() {
        let s = NoiseSchedule::cosine(100).unwrap();
        let mut last = -1.0;
        for k in 0..=10 {
            let v = sigma_eta(&s, 40, 50, k as f64 / 10.0).unwrap();
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn subsequence_examples() {
        let full = make_subsequence(7, 7, Spacing::Uniform).unwrap();
        assert_eq!(full.timesteps(), &[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(make_subsequence(9, 1, Spacing::Uniform).unwrap().timesteps(), &[9]);
        let plan = make_subsequence(100, 20, Spacing::Uniform).unwrap();
        let expected: Vec<usize> = (1..=20).map(|i| 5 * i).collect();
        assert_eq!(plan.timesteps(), expected.as_slice());
        assert!(make_subsequence(100, 200, Spacing::Uniform).is_err());
    }

    #[test]
    fn quadratic_subsequences_are_valid() {
        for total in [1, 5, 20, 100] {
            for steps in 1..=total {
                let p = make_subsequence(total, steps, Spacing::Quadratic).unwrap();
                assert_eq!(p.len(), steps);
                assert_eq!(p.last(), total);
            }
        }
    }

    #[test]
    fn reverse_pairs_end_at_zero() {
        let p = make_subsequence(10, 2, Spacing::Uniform).unwrap();
        assert_eq!(p.reverse_pairs(), vec![(10, 5), (5, 0)]);
    }
}
