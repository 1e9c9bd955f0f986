//! Variance schedules and the closed-form diffusion quantities they induce:
//! forward kernels, marginals, posteriors and per-step loss weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Conformation;

/// The per-step variances `β_t` together with every derived quantity used by
/// the forward and reverse chains (1-based step indices, `t = 1..=T`).
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
    gamma: Vec<f64>,
}

/// Named presets surfaced through run configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    /// T = 5000, β₁ = 1e-7, β_T = 2e-3.
    PaperDefault,
    /// T = 1000, β₁ = 1e-7, β_T = 9e-3.
    PaperAblation,
    /// T = 100, β₁ = 1e-4, β_T = 0.05; sized for commodity-CPU runs.
    Desk,
}

impl SchedulePreset {
    pub fn params(self) -> (usize, f64, f64) {
        match self {
            SchedulePreset::PaperDefault => (5000, 1e-7, 2e-3),
            SchedulePreset::PaperAblation => (1000, 1e-7, 9e-3),
            SchedulePreset::Desk => (100, 1e-4, 0.05),
        }
    }

    pub fn build(self) -> VarianceSchedule {
        let (t, b1, bt) = self.params();
        make_sigmoid_schedule(t, b1, bt).expect("preset parameters are valid")
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulePreset::PaperDefault => "paper-default",
            SchedulePreset::PaperAblation => "paper-ablation",
            SchedulePreset::Desk => "desk",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "paper-default" => SchedulePreset::PaperDefault,
            "paper-ablation" => SchedulePreset::PaperAblation,
            "desk" => SchedulePreset::Desk,
            other => return Err(Error::invalid(format!("unknown schedule preset '{other}'"))),
        })
    }
}

/// Logistic-shaped schedule, endpoint-normalized so `β` hits `beta_1` and
/// `beta_t_max` exactly. Shape parameter fixed at 6.
pub fn make_sigmoid_schedule(t_max: usize, beta_1: f64, beta_t_max: f64) -> Result<VarianceSchedule> {
    make_sigmoid_schedule_shaped(t_max, beta_1, beta_t_max, 6.0)
}

pub fn make_sigmoid_schedule_shaped(
    t_max: usize,
    beta_1: f64,
    beta_t_max: f64,
    shape: f64,
) -> Result<VarianceSchedule> {
    if t_max < 2 {
        return Err(Error::invalid(format!("schedule needs T >= 2, got {t_max}")));
    }
    if !(beta_1 > 0.0 && beta_1 < beta_t_max && beta_t_max < 1.0) {
        return Err(Error::invalid(format!(
            "schedule needs 0 < beta_1 < beta_T < 1, got ({beta_1}, {beta_t_max})"
        )));
    }
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let lo = sigmoid(-shape);
    let hi = sigmoid(shape);
    // u runs over [-1, 1] inclusive so both endpoints are reproduced exactly.
    let beta: Vec<f64> = (1..=t_max)
        .map(|t| {
            let u = 2.0 * (t - 1) as f64 / (t_max - 1) as f64 - 1.0;
            beta_1 + (beta_t_max - beta_1) * (sigmoid(shape * u) - lo) / (hi - lo)
        })
        .collect();
    VarianceSchedule::from_betas(beta)
}

impl VarianceSchedule {
    /// Builds every derived quantity from the raw `β` vector.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 2 {
            return Err(Error::invalid("schedule needs at least 2 steps"));
        }
        if beta.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::invalid("all beta values must lie in (0, 1)"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        // Running product, not exp-of-sum.
        let mut alpha_bar = Vec::with_capacity(beta.len());
        let mut prod = 1.0;
        for &a in &alpha {
            prod *= a;
            alpha_bar.push(prod);
        }
        // alpha_bar[t-2] with the convention alpha_bar_0 = 1.
        let prev_bar = |idx: usize| if idx == 0 { 1.0 } else { alpha_bar[idx - 1] };
        let beta_tilde: Vec<f64> = (0..beta.len())
            .map(|idx| (1.0 - prev_bar(idx)) / (1.0 - alpha_bar[idx]) * beta[idx])
            .collect();
        let gamma: Vec<f64> = (0..beta.len())
            .map(|idx| {
                if idx == 0 {
                    1.0 / (2.0 * alpha[0])
                } else {
                    beta[idx] / (2.0 * alpha[idx] * (1.0 - prev_bar(idx)))
                }
            })
            .collect();
        Ok(Self { beta, alpha, alpha_bar, beta_tilde, gamma })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::invalid(format!("step {t} out of range 1..={}", self.len())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.beta[self.check_t(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alpha[self.check_t(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bar[self.check_t(t)?])
    }

    /// `β̃_t`, the posterior variance (with `ᾱ₀ ≡ 1`, so `β̃₁ = 0`).
    pub fn beta_tilde(&self, t: usize) -> Result<f64> {
        Ok(self.beta_tilde[self.check_t(t)?])
    }

    /// KL-to-L2 weight: `γ_t = β_t / (2 α_t (1 − ᾱ_{t−1}))` for t > 1,
    /// `γ₁ = 1/(2α₁)`.
    pub fn gamma(&self, t: usize) -> Result<f64> {
        Ok(self.gamma[self.check_t(t)?])
    }

    /// Parameters of the closed-form marginal `q(C^t | C^0)`:
    /// `(√ᾱ_t, 1 − ᾱ_t)`.
    pub fn marginal(&self, t: usize) -> Result<(f64, f64)> {
        let idx = self.check_t(t)?;
        Ok((self.alpha_bar[idx].sqrt(), 1.0 - self.alpha_bar[idx]))
    }

    /// Reparameterized forward draw `C^t = √ᾱ_t C^0 + √(1−ᾱ_t) ε`.
    pub fn sample_forward(
        &self,
        t: usize,
        c0: &Conformation,
        noise: &Conformation,
    ) -> Result<Conformation> {
        if c0.atom_count() != noise.atom_count() {
            return Err(Error::shape("sample_forward noise", c0.atom_count(), noise.atom_count()));
        }
        let (mean_coef, var) = self.marginal(t)?;
        let sd = var.sqrt();
        let coords = c0
            .coords()
            .iter()
            .zip(noise.coords())
            .map(|(x, e)| [mean_coef * x[0] + sd * e[0], mean_coef * x[1] + sd * e[1], mean_coef * x[2] + sd * e[2]])
            .collect();
        Conformation::new(coords)
    }

    /// Mean and variance of the forward-process posterior
    /// `q(C^{t−1} | C^t, C^0)`.
    pub fn posterior(
        &self,
        t: usize,
        c0: &Conformation,
        ct: &Conformation,
    ) -> Result<(Vec<[f64; 3]>, f64)> {
        let idx = self.check_t(t)?;
        if c0.atom_count() != ct.atom_count() {
            return Err(Error::shape("posterior", c0.atom_count(), ct.atom_count()));
        }
        let prev_bar = if idx == 0 { 1.0 } else { self.alpha_bar[idx - 1] };
        let denom = 1.0 - self.alpha_bar[idx];
        let w0 = prev_bar.sqrt() * self.beta[idx] / denom;
        let wt = self.alpha[idx].sqrt() * (1.0 - prev_bar) / denom;
        let mean = c0
            .coords()
            .iter()
            .zip(ct.coords())
            .map(|(x0, xt)| [w0 * x0[0] + wt * xt[0], w0 * x0[1] + wt * xt[1], w0 * x0[2] + wt * xt[2]])
            .collect();
        Ok((mean, self.beta_tilde[idx]))
    }

    /// Reverse-kernel mean from a noise estimate:
    /// `μ = (C^t − β_t/√(1−ᾱ_t)·ε) / √α_t`.
    pub fn mu_from_eps(
        &self,
        t: usize,
        ct: &Conformation,
        eps: &[[f64; 3]],
    ) -> Result<Conformation> {
        let idx = self.check_t(t)?;
        if eps.len() != ct.atom_count() {
            return Err(Error::shape("mu_from_eps", ct.atom_count(), eps.len()));
        }
        let coef = self.beta[idx] / (1.0 - self.alpha_bar[idx]).sqrt();
        let inv_sqrt_alpha = 1.0 / self.alpha[idx].sqrt();
        let coords = ct
            .coords()
            .iter()
            .zip(eps)
            .map(|(x, e)| {
                [
                    (x[0] - coef * e[0]) * inv_sqrt_alpha,
                    (x[1] - coef * e[1]) * inv_sqrt_alpha,
                    (x[2] - coef * e[2]) * inv_sqrt_alpha,
                ]
            })
            .collect();
        Conformation::new(coords)
    }
}
