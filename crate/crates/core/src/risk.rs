//! Law-invariant risk measures on scalar random variables.
//!
//! Four measures are supported, nested by restrictiveness: expectation,
//! value-at-risk, conditional value-at-risk, and entropic value-at-risk.
//! Each has an exact closed form for Gaussian variables
//! (`ρ(Y) = μ + σ·R(α)`) and an empirical estimator over samples.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiskError {
    #[error("tail mass alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("empirical risk of an empty sample set")]
    EmptySamples,
    #[error("sample set contains a non-finite value")]
    NonFiniteSample,
    #[error("entropic value-at-risk search failed: {0}")]
    EvarSearchFailure(String),
    #[error("unknown risk measure '{0}' (expected e, var, cvar or evar)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskKind {
    #[serde(alias = "e", alias = "mean")]
    Expectation,
    Var,
    Cvar,
    Evar,
}

impl RiskKind {
    pub const ALL: [RiskKind; 4] = [RiskKind::Expectation, RiskKind::Var, RiskKind::Cvar, RiskKind::Evar];

    /// Short label used in file names and CSV columns.
    pub fn label(self) -> &'static str {
        match self {
            RiskKind::Expectation => "e",
            RiskKind::Var => "var",
            RiskKind::Cvar => "cvar",
            RiskKind::Evar => "evar",
        }
    }
}

impl fmt::Display for RiskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for RiskKind {
    type Err = RiskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "e" | "mean" | "expectation" => Ok(RiskKind::Expectation),
            "var" => Ok(RiskKind::Var),
            "cvar" => Ok(RiskKind::Cvar),
            "evar" => Ok(RiskKind::Evar),
            other => Err(RiskError::UnknownKind(other.to_string())),
        }
    }
}

/// A risk measure together with its tail mass `α` (confidence level `1 − α`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRiskSpec", into = "RawRiskSpec")]
pub struct RiskSpec {
    kind: RiskKind,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawRiskSpec {
    kind: RiskKind,
    alpha: f64,
}

impl TryFrom<RawRiskSpec> for RiskSpec {
    type Error = RiskError;

    fn try_from(raw: RawRiskSpec) -> Result<Self, Self::Error> {
        RiskSpec::new(raw.kind, raw.alpha)
    }
}

impl From<RiskSpec> for RawRiskSpec {
    fn from(spec: RiskSpec) -> Self {
        RawRiskSpec { kind: spec.kind, alpha: spec.alpha }
    }
}

/// Mean and standard deviation of a Gaussian scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianScalar {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianScalar {
    pub fn new(mu: f64, sigma: f64) -> Self {
        assert!(sigma >= 0.0, "standard deviation must be nonnegative");
        GaussianScalar { mu, sigma }
    }
}

impl RiskSpec {
    pub fn new(kind: RiskKind, alpha: f64) -> Result<Self, RiskError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(RiskError::InvalidAlpha(alpha));
        }
        Ok(RiskSpec { kind, alpha })
    }

    pub fn expectation() -> Self {
        RiskSpec { kind: RiskKind::Expectation, alpha: 0.5 }
    }

    pub fn kind(&self) -> RiskKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `R(α)` such that `ρ(Y) = μ + σ·R(α)` for Gaussian `Y`.
    pub fn coefficient(&self) -> f64 {
        let a = self.alpha;
        match self.kind {
            RiskKind::Expectation => 0.0,
            RiskKind::Var => inverse_normal_cdf(1.0 - a),
            RiskKind::Cvar => normal_pdf(inverse_normal_cdf(1.0 - a)) / a,
            RiskKind::Evar => (-2.0 * a.ln()).sqrt(),
        }
    }

    pub fn gaussian(&self, y: GaussianScalar) -> f64 {
        y.mu + y.sigma * self.coefficient()
    }

    /// Risk of a zero-mean Gaussian with the given variance.
    pub fn gaussian_backoff(&self, variance: f64) -> f64 {
        variance.max(0.0).sqrt() * self.coefficient()
    }

    /// Empirical estimate of the risk of the law that puts mass `1/n` on
    /// each sample.
    pub fn empirical(&self, samples: &[f64]) -> Result<f64, RiskError> {
        if samples.is_empty() {
            return Err(RiskError::EmptySamples);
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::NonFiniteSample);
        }
        match self.kind {
            RiskKind::Expectation => Ok(mean(samples)),
            RiskKind::Var => {
                let mut work = samples.to_vec();
                Ok(empirical_var(&mut work, self.alpha))
            }
            RiskKind::Cvar => {
                let mut work = samples.to_vec();
                Ok(empirical_cvar(&mut work, self.alpha))
            }
            RiskKind::Evar => empirical_evar(samples, self.alpha, None).map(|r| r.value),
        }
    }

    /// True if shifting every sample by `c` shifts the empirical risk by `c`.
    pub fn translativity_check(&self, samples: &[f64], c: f64) -> bool {
        let shifted: Vec<f64> = samples.iter().map(|y| y + c).collect();
        match (self.empirical(samples), self.empirical(&shifted)) {
            (Ok(base), Ok(moved)) => (moved - base - c).abs() <= 1e-9 * (1.0 + c.abs()),
            _ => false,
        }
    }
}

impl fmt::Display for RiskSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RiskKind::Expectation => write!(f, "E"),
            k => write!(f, "{}_{}", k.label().to_uppercase(), 1.0 - self.alpha),
        }
    }
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Index (0-based) of the smallest order statistic whose empirical CDF
/// reaches `1 − α`.
fn var_index(n: usize, alpha: f64) -> usize {
    let target = (1.0 - alpha) * n as f64;
    // guard against 0.6*10 = 6.000000000000001 style rounding
    let k = (target - 1e-9).ceil().max(1.0) as usize;
    k.min(n) - 1
}

/// Empirical value-at-risk; reorders `work`.
pub fn empirical_var(work: &mut [f64], alpha: f64) -> f64 {
    let idx = var_index(work.len(), alpha);
    let (_, v, _) = work.select_nth_unstable_by(idx, f64::total_cmp);
    *v
}

/// Empirical CVaR in the Rockafellar–Uryasev form `t + E[(Y − t)₊]/α`
/// with `t` the empirical VaR; reorders `work`.
pub fn empirical_cvar(work: &mut [f64], alpha: f64) -> f64 {
    let t = empirical_var(work, alpha);
    let excess: f64 = work.iter().map(|&y| (y - t).max(0.0)).sum();
    t + excess / (work.len() as f64 * alpha)
}

/// Result of the empirical EVaR minimization.
#[derive(Debug, Clone, Copy)]
pub struct EvarEstimate {
    pub value: f64,
    /// Minimizing MGF argument; `None` when the infimum is reached only as
    /// `z → ∞` (the estimate is then the sample maximum).
    pub z: Option<f64>,
}

struct TiltedMoments {
    /// ln of the empirical MGF at z, minus z·max
    log_mgf_shifted: f64,
    /// tilted mean of (y − max)
    mean_shifted: f64,
    /// tilted variance
    variance: f64,
}

fn tilted_moments(samples: &[f64], max: f64, z: f64) -> TiltedMoments {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &y in samples {
        let d = y - max;
        let w = (z * d).exp();
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
    }
    let m1 = s1 / s0;
    TiltedMoments {
        log_mgf_shifted: (s0 / samples.len() as f64).ln(),
        mean_shifted: m1,
        variance: (s2 / s0 - m1 * m1).max(0.0),
    }
}

/// Empirical entropic value-at-risk `inf_{z>0} z⁻¹ ln(M̂(z)/α)`.
///
/// The objective's derivative has the sign of
/// `h(z) = z·m(z) − ln M̂(z) + ln α`, where `m(z)` is the exponentially
/// tilted mean; `h` is increasing (`h'(z) = z·Var_z`), so the minimizer is
/// the root of `h`, found by Newton steps safeguarded with bisection.
/// `z_hint` seeds the bracket, which helps when re-estimating on bootstrap
/// resamples of the same data.
pub fn empirical_evar(samples: &[f64], alpha: f64, z_hint: Option<f64>) -> Result<EvarEstimate, RiskError> {
    let n = samples.len();
    if n == 0 {
        return Err(RiskError::EmptySamples);
    }
    let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
    if !max.is_finite() || !min.is_finite() {
        return Err(RiskError::NonFiniteSample);
    }
    let ln_alpha = alpha.ln();
    // h(z) → ln(α n / #{y = max}) as z → ∞; if that limit is ≤ 0 the
    // objective decreases monotonically towards the sample maximum.
    let at_max = samples.iter().filter(|&&y| y == max).count();
    if (at_max as f64) >= alpha * n as f64 {
        return Ok(EvarEstimate { value: max, z: None });
    }
    let objective = |z: f64, t: &TiltedMoments| max + (t.log_mgf_shifted - ln_alpha) / z;
    let h = |z: f64, t: &TiltedMoments| z * t.mean_shifted - t.log_mgf_shifted + ln_alpha;

    let spread = max - min;
    let sd = {
        let m = mean(samples);
        (samples.iter().map(|y| (y - m) * (y - m)).sum::<f64>() / n as f64).sqrt()
    };
    let scale = if sd > 0.0 { sd } else { spread };
    // Newton from the hint or a Gaussian-based guess; the bracket [lo, hi]
    // is tightened from the sign of h and used to safeguard each step.
    let mut z = z_hint.filter(|z| z.is_finite() && *z > 0.0).unwrap_or((-2.0 * ln_alpha).sqrt() / scale);
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let z_cap = 1e6 * (1.0 + 1.0 / scale);
    let mut converged = false;
    for _ in 0..400 {
        let t = tilted_moments(samples, max, z);
        let hv = h(z, &t);
        if !hv.is_finite() {
            return Err(RiskError::EvarSearchFailure(format!("non-finite stationarity at z = {z:e}")));
        }
        if hv > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let slope = z * t.variance;
        let newton = if slope > 0.0 { z - hv / slope } else { f64::NAN };
        let next = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else if hi.is_infinite() {
            2.0 * z
        } else {
            0.5 * (lo + hi)
        };
        if hv == 0.0 || (next - z).abs() <= 1e-13 * z || (hi.is_finite() && hi - lo <= 1e-13 * hi) {
            z = if hv == 0.0 { z } else { next };
            converged = true;
            break;
        }
        if next > z_cap {
            return Err(RiskError::EvarSearchFailure(format!("no bracket below z = {z_cap:e}")));
        }
        z = next;
    }
    if !converged {
        return Err(RiskError::EvarSearchFailure("search did not converge".into()));
    }
    let t = tilted_moments(samples, max, z);
    let value = objective(z, &t);
    if !value.is_finite() {
        return Err(RiskError::EvarSearchFailure("non-finite objective at the minimizer".into()));
    }
    Ok(EvarEstimate { value, z: Some(z) })
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of the standard normal CDF (Wichura's AS 241, PPND16), with
/// relative accuracy around 1e-16 over the open unit interval.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "probability must lie in (0, 1)");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
                + 45921.953931549871457)
                * r
                + 13731.693765509461125)
                * r
                + 1971.5909503065514427)
                * r
                + 133.14166789178437745)
                * r
                + 3.387132872796366608)
            / (((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
                + 21213.794301586595867)
                * r
                + 5394.1960214247511077)
                * r
                + 687.1870074920579083)
                * r
                + 42.313330701600911252)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734)
            / (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
                * r
                + 0.14810397642748007459)
                * r
                + 0.68976733498510000455)
                * r
                + 1.6763848301838038494)
                * r
                + 2.05319162663775882187)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772)
            / (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                + 1.8463183175100546818e-5)
                * r
                + 7.868691311456132591e-4)
                * r
                + 0.0148753612908506148525)
                * r
                + 0.13692988092273580531)
                * r
                + 0.59983220655588793769)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}
