//! Statistical baseline: the symmetric limit rule `S(x; l, m, s)` and its
//! closed-form rejection probability.
//!
//! For a tuple of `n` measurements where `k` are `N(mu, sigma^2)` and the
//! rest `N(0, 1)`, the rule with limit `l` rejects with probability
//!
//! ```text
//! P(n, k, mu, sigma; l) = 1 - erf(l / sqrt 2)^(n-k) * A(l, mu, sigma)^k
//! A(l, mu, sigma)       = (erf((mu + l) / (sigma sqrt 2)) - erf((mu - l) / (sigma sqrt 2))) / 2
//! ```
//!
//! and the limit that yields a false-rejection rate `p` on in-control
//! n-tuples is `l = sqrt 2 * erf_inv((1 - p)^(1/n))`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datasets::MAX_N;
use crate::error::{domain, Result};
use crate::numerics::{erf, erf_inv, erfc};
use crate::scalar::Scalar;

/// Rejects a tuple iff some coordinate satisfies `|x - m| > l * s`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatQcFunction<S> {
    pub l: S,
    pub m: S,
    pub s: S,
}

impl<S: Scalar> StatQcFunction<S> {
    /// Standardized rule: `m = 0`, `s = 1`.
    pub fn new(l: S) -> Result<Self> {
        Self::with_center(l, S::zero(), S::one())
    }

    pub fn with_center(l: S, m: S, s: S) -> Result<Self> {
        if !(l > S::zero()) || !(s > S::zero()) || !m.is_finite() {
            return Err(domain(format!("invalid rule (l = {l}, m = {m}, s = {s})")));
        }
        Ok(Self { l, m, s })
    }

    #[inline]
    pub fn rejects(&self, x: &[S]) -> bool {
        let limit = self.l * self.s;
        x.iter().any(|&v| (v - self.m).abs() > limit)
    }
}

pub fn stat_reject<S: Scalar>(x: &[S], f: &StatQcFunction<S>) -> bool {
    f.rejects(x)
}

/// Contamination scenario `(n, k, mu, sigma)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario<S> {
    pub n: usize,
    pub k: usize,
    pub mu: S,
    pub sigma: S,
}

impl<S: Scalar> Scenario<S> {
    pub fn new(n: usize, k: usize, mu: S, sigma: S) -> Result<Self> {
        if !(1..=MAX_N).contains(&n) || k > n {
            return Err(domain(format!("invalid scenario sizes n = {n}, k = {k}")));
        }
        if !mu.is_finite() || !(sigma >= S::zero()) {
            return Err(domain(format!("invalid shift mu = {mu}, sigma = {sigma}")));
        }
        if k == 0 && (mu != S::zero() || sigma != S::one()) {
            return Err(domain("k = 0 requires (mu, sigma) = (0, 1)"));
        }
        Ok(Self { n, k, mu, sigma })
    }

    pub fn in_control(n: usize) -> Result<Self> {
        Self::new(n, 0, S::zero(), S::one())
    }
}

/// Probability that one `N(mu, sigma^2)` measurement lies within `[-l, l]`.
pub fn acceptance_out<S: Scalar>(l: S, mu: S, sigma: S) -> Result<S> {
    if !(sigma > S::zero()) {
        return Err(domain(format!("sigma must be positive, got {sigma}")));
    }
    if !(l > S::zero()) {
        return Err(domain(format!("limit must be positive, got {l}")));
    }
    let scale = sigma * S::lit(std::f64::consts::SQRT_2);
    let hi = (mu + l) / scale;
    let lo = (mu - l) / scale;
    let half = S::lit(0.5);
    // Work in the tail that avoids cancellation between two values near 1.
    let p = if lo > S::zero() {
        half * (erfc(lo) - erfc(hi))
    } else if hi < S::zero() {
        half * (erfc(-hi) - erfc(-lo))
    } else {
        half * (erf(hi) - erf(lo))
    };
    Ok(p.max(S::zero()).min(S::one()))
}

/// Closed-form rejection probability of the limit rule for a scenario.
pub fn p_reject_closed<S: Scalar>(scn: &Scenario<S>, l: S) -> Result<S> {
    let inside = erf(l / S::lit(std::f64::consts::SQRT_2));
    let mut accept = inside.powi((scn.n - scn.k) as i32);
    if scn.k > 0 {
        accept *= acceptance_out(l, scn.mu, scn.sigma)?.powi(scn.k as i32);
    } else if !(l > S::zero()) {
        return Err(domain(format!("limit must be positive, got {l}")));
    }
    Ok(S::one() - accept)
}

/// Limit `l` whose false-rejection rate on in-control `n`-tuples equals `p_fr`.
///
/// Closed form via `erf_inv`, then one Newton step on the rejection
/// probability itself.
pub fn decision_limit<S: Scalar>(p_fr: S, n: usize) -> Result<S> {
    if !(p_fr > S::zero() && p_fr < S::one()) {
        return Err(domain(format!("false-rejection rate must lie in (0, 1), got {p_fr}")));
    }
    if n == 0 {
        return Err(domain("n must be at least 1"));
    }
    let nf = S::lit(n as f64);
    let sqrt2 = S::lit(std::f64::consts::SQRT_2);
    let target = ((-p_fr).ln_1p() / nf).exp();
    let mut l = sqrt2 * erf_inv(target)?;
    let inside = erf(l / sqrt2);
    let p = S::one() - inside.powi(n as i32);
    let density = S::lit((2.0 / std::f64::consts::PI).sqrt()) * (-l * l / S::lit(2.0)).exp();
    let slope = -nf * inside.powi(n as i32 - 1) * density;
    if slope != S::zero() {
        l -= (p - p_fr) / slope;
    }
    Ok(l)
}

/// Scenario axes: a sigma sweep at `mu = 0` and a `|mu|` sweep at `sigma = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAxes {
    pub sigma_values: Vec<f64>,
    pub mu_values: Vec<f64>,
}

impl Default for GridAxes {
    /// sigma = 1.1, 1.2, ..., 7.0 and |mu| = 0.1, 0.2, ..., 6.0.
    fn default() -> Self {
        Self {
            sigma_values: (11..=70).map(|i| i as f64 / 10.0).collect(),
            mu_values: (1..=60).map(|i| i as f64 / 10.0).collect(),
        }
    }
}

fn parse_axis(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').map(str::trim).collect();
    let nums = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|e| domain(format!("grid axis {spec:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    match nums[..] {
        [lo, hi, step] if step > 0.0 && hi >= lo => {
            let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
            // Round to 12 digits so 1.1 + 0.1 * i prints as expected.
            Ok((0..count)
                .map(|i| ((lo + step * i as f64) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(domain(format!("grid axis {spec:?} must be LO:HI:STEP with STEP > 0"))),
    }
}

impl GridAxes {
    /// Coarse axes for quick runs: sigma = 1.5..7.0 step 0.5, |mu| = 0.5..6.0 step 0.5.
    pub fn coarse() -> Self {
        Self {
            sigma_values: (3..=14).map(|i| i as f64 / 2.0).collect(),
            mu_values: (1..=12).map(|i| i as f64 / 2.0).collect(),
        }
    }

    /// `default`, `coarse`, or `SLO:SHI:SSTEP;MLO:MHI:MSTEP`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.trim() {
            "default" => Ok(Self::default()),
            "coarse" => Ok(Self::coarse()),
            other => {
                let (s, m) = other
                    .split_once(';')
                    .ok_or_else(|| domain(format!("grid {other:?}: expected SIGMA_AXIS;MU_AXIS")))?;
                let g = Self {
                    sigma_values: parse_axis(s)?,
                    mu_values: parse_axis(m)?,
                };
                g.validate()?;
                Ok(g)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_values.iter().any(|&s| !(s > 1.0 && s.is_finite())) {
            return Err(domain("sigma grid values must exceed 1"));
        }
        if self.mu_values.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(domain("mu grid values must be positive"));
        }
        Ok(())
    }

    /// Points per k: sigma sweep first, then mu sweep.
    pub fn points(&self) -> Vec<(f64, f64)> {
        self.sigma_values
            .iter()
            .map(|&s| (0.0, s))
            .chain(self.mu_values.iter().map(|&m| (m, 1.0)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.sigma_values.len() + self.mu_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsRow<S> {
    pub scenario: Scenario<S>,
    pub p_s: S,
}

/// Closed-form rejection probabilities for `k = 1..=n` over the grid.
pub fn build_ps_grid<S: Scalar>(n: usize, l: S, grid: &GridAxes) -> Result<Vec<PsRow<S>>> {
    grid.validate()?;
    let mut rows = Vec::with_capacity(n * grid.len());
    for k in 1..=n {
        for (mu, sigma) in grid.points() {
            let scenario = Scenario::new(n, k, S::lit(mu), S::lit(sigma))?;
            rows.push(PsRow {
                scenario,
                p_s: p_reject_closed(&scenario, l)?,
            });
        }
    }
    Ok(rows)
}

/// CSV `n,k,a,mu,sigma,l,p_s` with six decimals.
pub fn write_ps_grid_csv<S: Scalar, W: Write>(mut out: W, a: u32, l: S, rows: &[PsRow<S>]) -> Result<()> {
    writeln!(out, "n,k,a,mu,sigma,l,p_s")?;
    for r in rows {
        let s = &r.scenario;
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            s.n,
            s.k,
            a,
            s.mu.as_f64(),
            s.sigma.as_f64(),
            l.as_f64(),
            r.p_s.as_f64()
        )?;
    }
    Ok(())
}
