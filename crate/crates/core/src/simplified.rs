//! Two tasks, identity covariances, equal task sizes and `γ₁ = γ₂ = γ`.
//!
//! [`coefficients`] and [`test_risk_simplified`] are the compact closed forms written in terms of
//! `c₀ = n/d`. [`exact_isotropic_two_task`] is the exact deterministic-equivalent risk in the same
//! setting, reduced to scalars through the eigenvectors `(1, ±1)/√2` of `G`.

use crate::error::{Error, Result};

/// `(‖W₁‖², ‖W₂‖², W₁ᵀW₂)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignalStats {
    pub w1_sq: f64,
    pub w2_sq: f64,
    pub cross: f64,
}

impl SignalStats {
    pub fn zero() -> Self {
        SignalStats { w1_sq: 0.0, w2_sq: 0.0, cross: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        if self.w1_sq < 0.0 || self.w2_sq < 0.0 {
            return Err(Error::InvalidInput("squared norms must be >= 0".into()));
        }
        let bound = (self.w1_sq * self.w2_sq).sqrt();
        if self.cross.abs() > bound * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::InvalidInput(format!(
                "|W1'W2| = {} exceeds the Cauchy-Schwarz bound {bound}",
                self.cross.abs()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplifiedParams {
    pub c0: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub signal: SignalStats,
    pub noise_trace: f64,
}

impl SimplifiedParams {
    pub fn validate(&self) -> Result<()> {
        check_scalars(self.c0, self.lambda, self.gamma)?;
        if !(self.noise_trace > 0.0) {
            return Err(Error::InvalidInput(format!("noise trace must be > 0, got {}", self.noise_trace)));
        }
        self.signal.validate()
    }
}

fn check_scalars(c0: f64, lambda: f64, gamma: f64) -> Result<()> {
    if !(c0 > 0.0 && c0.is_finite()) {
        return Err(Error::InvalidInput(format!("c0 must be > 0, got {c0}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidInput(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Independent-learning, multi-task and negative-transfer coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub d_il: f64,
    pub c_mtl: f64,
    pub n_nt: f64,
}

pub fn coefficients(c0: f64, lambda: f64, gamma: f64) -> Result<Coefficients> {
    check_scalars(c0, lambda, gamma)?;
    let a = lambda + gamma;
    let p = c0 * a + 1.0;
    let r = c0 * lambda;
    let den = p * p - r * r;
    let num_n = c0 * a * a + a - c0 * lambda * lambda;
    Ok(Coefficients {
        d_il: (p * p + r * r) / den,
        c_mtl: -2.0 * c0 * lambda * p / den,
        n_nt: (num_n * num_n + lambda * lambda) / (den * den),
    })
}

/// `D_IL(‖W₁‖² + ‖W₂‖²) + C_MTL W₁ᵀW₂ + N_NT tr Σ_N`.
pub fn test_risk_simplified(params: &SimplifiedParams) -> Result<f64> {
    params.validate()?;
    let k = coefficients(params.c0, params.lambda, params.gamma)?;
    let s = params.signal;
    Ok(k.d_il * (s.w1_sq + s.w2_sq) + k.c_mtl * s.cross + k.n_nt * params.noise_trace)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaStar {
    /// Unconstrained stationary point; may be negative.
    pub raw: f64,
    /// `max(raw, 0)`.
    pub clamped: f64,
    pub snr: f64,
}

/// `λ* = (n/d)·SNR − γ/2` with `SNR = (‖W₁‖² + ‖W₂‖² + W₁ᵀW₂)/tr Σ_N`.
pub fn lambda_star(n: f64, d: f64, signal: SignalStats, noise_trace: f64, gamma: f64) -> Result<LambdaStar> {
    if !(noise_trace > 0.0) {
        return Err(Error::InvalidInput(format!("noise trace must be > 0, got {noise_trace}")));
    }
    if !(n > 0.0 && d > 0.0) {
        return Err(Error::InvalidInput("n and d must be > 0".into()));
    }
    let snr = (signal.w1_sq + signal.w2_sq + signal.cross) / noise_trace;
    let raw = n / d * snr - gamma / 2.0;
    Ok(LambdaStar { raw, clamped: raw.max(0.0), snr })
}

/// Exact asymptotic test risk of the two-task isotropic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactTwoTask {
    pub delta: f64,
    pub signal_term: f64,
    pub noise_term: f64,
    pub test_risk: f64,
}

/// `signal` holds raw squared norms of `d`-dimensional weights; `n_t = c₀d/2` per task.
pub fn exact_isotropic_two_task(
    d: usize,
    c0: f64,
    lambda: f64,
    gamma: f64,
    signal: SignalStats,
    noise_trace: f64,
) -> Result<ExactTwoTask> {
    check_scalars(c0, lambda, gamma)?;
    signal.validate()?;
    if d == 0 {
        return Err(Error::InvalidInput("d must be >= 1".into()));
    }
    let mu = [gamma + 2.0 * lambda, gamma];
    let c = c0 / 4.0;
    let f = |delta: f64| {
        let s = c / (1.0 + delta);
        0.25 * mu.iter().map(|m| m / (1.0 + s * m)).sum::<f64>()
    };
    // δ − f(δ) is increasing from a negative value at 0 and nonnegative at ¼Σμ.
    let (mut lo, mut hi) = (0.0_f64, 0.25 * (mu[0] + mu[1]));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid - f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let delta = 0.5 * (lo + hi);
    let s = c / (1.0 + delta);
    let onep = 1.0 + delta;
    let b = 0.25 * mu.iter().map(|m| m * m / (1.0 + s * m).powi(2)).sum::<f64>();
    let e = b / (1.0 - c * b / (onep * onep));
    let k = 1.0 + c * e / (onep * onep);
    let h: Vec<f64> = mu.iter().map(|m| k / (1.0 + s * m).powi(2)).collect();
    let (h11, h12) = ((h[0] + h[1]) / 2.0, (h[0] - h[1]) / 2.0);
    let signal_term = (h11 * (signal.w1_sq + signal.w2_sq) + 2.0 * h12 * signal.cross) / (4.0 * d as f64);
    let first: f64 = mu.iter().map(|m| m / (1.0 + s * m)).sum();
    let second: f64 = mu.iter().map(|m| m / (1.0 + s * m).powi(2)).sum();
    let noise_term = noise_trace * (first - k * second) / 4.0;
    Ok(ExactTwoTask { delta, signal_term, noise_term, test_risk: signal_term + noise_term + noise_trace })
}
