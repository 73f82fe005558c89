//! Numeric evaluation of the privacy-based generalization-bound
//! quantities: the per-step epsilon, its T-fold composition, and the final
//! high-probability gap statement. Pure functions of the parameter record;
//! no noise is injected anywhere in the simulator.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundParams {
    /// Training sample size N.
    pub n: u64,
    /// Batch size tau.
    pub tau: u64,
    /// Iteration count T.
    pub iterations: u64,
    /// Union mask density beta in (0, 1].
    pub beta: f64,
    /// Gradient-space diameter D_g >= 0.
    pub grad_diameter: f64,
    /// Gaussian noise scale sigma > 0.
    pub sigma: f64,
    /// Per-step probability parameter delta in (0, 1).
    pub delta: f64,
    /// Composition slack delta-tilde in (0, 1).
    pub delta_tilde: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        if self.tau == 0 || self.tau > self.n {
            return Err(Error::Domain(format!(
                "need 1 <= tau <= N, got tau={}, N={}",
                self.tau, self.n
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Domain("need T >= 1".into()));
        }
        if !(self.beta >= 0.0 && self.beta <= 1.0) {
            return Err(Error::Domain(format!("beta {} out of [0, 1]", self.beta)));
        }
        if self.grad_diameter < 0.0 {
            return Err(Error::Domain("grad_diameter must be >= 0".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain("sigma must be > 0".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Domain(format!("delta {} out of (0, 1)", self.delta)));
        }
        if !(self.delta_tilde > 0.0 && self.delta_tilde < 1.0) {
            return Err(Error::Domain(format!(
                "delta_tilde {} out of (0, 1)",
                self.delta_tilde
            )));
        }
        Ok(())
    }
}

/// Per-step epsilon after subsampling amplification:
/// `log((N - tau)/N + (tau/N) * exp((sqrt(2) beta D_g sigma (1/tau)
/// sqrt(log(1/delta)) + beta^2 D_g^2 / tau^2) / (2 sigma^2)))`.
///
/// The formula is evaluated exactly as displayed; the sigma appearing both
/// in the numerator and squared in the denominator is kept verbatim.
pub fn eps_tilde(p: &BoundParams) -> Result<f64> {
    p.validate()?;
    let n = p.n as f64;
    let tau = p.tau as f64;
    let bd = p.beta * p.grad_diameter;
    let numerator = std::f64::consts::SQRT_2 * bd * p.sigma / tau * (1.0 / p.delta).ln().sqrt()
        + bd * bd / (tau * tau);
    let exponent = numerator / (2.0 * p.sigma * p.sigma);
    // ln((N - tau)/N + tau/N * e^x) via ln_1p for accuracy near x = 0
    let value = (tau / n * exponent.exp_m1()).ln_1p();
    if value.is_nan() {
        return Err(Error::Domain("eps_tilde overflowed to NaN".into()));
    }
    Ok(value)
}

/// `(eps', delta')` after T-fold composition of an `eps_step` mechanism.
///
/// `eps' = sqrt(2 T log(1/delta_tilde) eps^2) + T eps (e^eps - 1)/(e^eps + 1)`.
/// `delta'` has a pole at `T eps = eps'` and is undefined (negative bases
/// under real exponents) when `T eps < eps'`; both cases return
/// [`Error::CompositionPole`]. Large exponents are evaluated in log space;
/// overflow yields an infinity sentinel.
pub fn compose(p: &BoundParams, eps_step: f64) -> Result<(f64, f64)> {
    p.validate()?;
    if eps_step < 0.0 {
        return Err(Error::Domain("eps_step must be >= 0".into()));
    }
    let t = p.iterations as f64;
    let eps = eps_step;
    let eps_prime = (2.0 * t * (1.0 / p.delta_tilde).ln() * eps * eps).sqrt()
        + t * eps * eps.exp_m1() / (eps.exp() + 1.0);
    if eps == 0.0 {
        // eps' = 0; delta' is the eps -> 0 limit with eps' held at 0:
        // the first composition factor tends to 1 and with ceil(eps'/eps) = 0
        // the display reduces to 3 - 2 (1 - delta/2)^T
        let a = p.delta / 2.0;
        let delta_prime = 3.0 - 2.0 * (t * (1.0 - a).ln()).exp();
        return Ok((0.0, delta_prime));
    }
    let te = t * eps;
    if te <= eps_prime {
        return Err(Error::CompositionPole);
    }
    // first term in log space: overflow degrades to +inf rather than NaN
    let ln_first = -(eps_prime + te) / 2.0
        + t * ((2.0 * te / (te - eps_prime)).ln() - eps.exp().ln_1p())
        - (eps_prime + te) / (2.0 * eps) * ((te + eps_prime) / (te - eps_prime)).ln();
    let first = ln_first.exp();
    let a = p.delta / (1.0 + eps.exp());
    let c = (eps_prime / eps).ceil();
    let second = 2.0
        - (c * (1.0 - eps.exp() * a).ln() + (t - c) * (1.0 - a).ln()).exp();
    let third = (t * (1.0 - a).ln()).exp();
    Ok((eps_prime, first + second - third))
}

#[derive(Debug, Clone, Serialize)]
pub struct GapBound {
    pub eps_prime: f64,
    pub delta_prime: f64,
    /// The high-probability gap 9 * eps'.
    pub gap: f64,
    /// `(e^{-eps'} delta' / eps') * log(2 / eps')`.
    pub failure_prob: f64,
    /// Whether `N >= (2 / eps'^2) * log(16 / (e^{-eps'} delta'))` holds.
    pub sample_condition: bool,
    /// True when eps' is outside (0, 2) and the statement says nothing.
    pub vacuous: bool,
}

/// Evaluate the full chain eps_tilde -> (eps', delta') -> gap statement.
pub fn generalization_gap_bound(p: &BoundParams) -> Result<GapBound> {
    let eps_step = eps_tilde(p)?;
    let (eps_prime, delta_prime) = compose(p, eps_step)?;
    let vacuous = !(eps_prime > 0.0 && eps_prime < 2.0);
    let (failure_prob, sample_condition) = if vacuous {
        (f64::NAN, false)
    } else {
        let fp = (-eps_prime).exp() * delta_prime / eps_prime * (2.0 / eps_prime).ln();
        let required = 2.0 / (eps_prime * eps_prime)
            * (16.0 / ((-eps_prime).exp() * delta_prime)).ln();
        (fp, p.n as f64 >= required)
    };
    Ok(GapBound {
        eps_prime,
        delta_prime,
        gap: 9.0 * eps_prime,
        failure_prob,
        sample_condition,
        vacuous,
    })
}
