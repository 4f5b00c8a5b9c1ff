//! Monte Carlo rejection probabilities of a classifier, compared against the
//! closed-form limit rule at a matched false-rejection rate.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{decision_limit, p_reject_closed, GridAxes, Scenario, StatQcFunction};
use crate::cnn::{count_rejections, NetworkSpec, Parameters};
use crate::datasets::{build_test_set, TestSetSpec, TupleRecord, DEFAULT_IN_CONTROL_COUNT, DEFAULT_REPLICATES};
use crate::error::{domain, format_err, Error, FormatErrorCode, Result};
use crate::numerics::{erfc, RngState};
use crate::scalar::Scalar;

/// A QC decision rule on `n`-tuples; `true` rejects the run.
pub trait Classifier<S: Scalar>: Sync {
    fn n(&self) -> usize;

    fn rejects(&self, x: &[S]) -> bool;

    fn count_rejections(&self, records: &[TupleRecord<S>]) -> u64 {
        records.iter().filter(|r| self.rejects(r.values())).count() as u64
    }
}

/// The limit rule applied to `n`-tuples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatClassifier<S> {
    pub n: usize,
    pub rule: StatQcFunction<S>,
}

impl<S: Scalar> Classifier<S> for StatClassifier<S> {
    fn n(&self) -> usize {
        self.n
    }

    fn rejects(&self, x: &[S]) -> bool {
        self.rule.rejects(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedClassifier<S> {
    pub spec: NetworkSpec,
    pub params: Parameters<S>,
}

impl<S: Scalar> Classifier<S> for TrainedClassifier<S> {
    fn n(&self) -> usize {
        self.spec.n()
    }

    fn rejects(&self, x: &[S]) -> bool {
        crate::cnn::classify(&self.spec, &self.params, x).expect("input length checked by caller")
    }

    fn count_rejections(&self, records: &[TupleRecord<S>]) -> u64 {
        count_rejections(&self.spec, &self.params, records).expect("input length checked by caller")
    }
}

/// Always returns `verdict`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantClassifier {
    pub n: usize,
    pub verdict: bool,
}

impl<S: Scalar> Classifier<S> for ConstantClassifier {
    fn n(&self) -> usize {
        self.n
    }

    fn rejects(&self, _: &[S]) -> bool {
        self.verdict
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McEstimate {
    pub rejections: u64,
    pub sample_size: u64,
}

impl McEstimate {
    pub fn p_hat(&self) -> f64 {
        self.rejections as f64 / self.sample_size as f64
    }

    /// Binomial standard error at the estimate.
    pub fn standard_error(&self) -> f64 {
        let p = self.p_hat();
        (p * (1.0 - p) / self.sample_size as f64).sqrt()
    }
}

/// Rejection rate of `classifier` over a freshly generated testing set.
///
/// Chunks are generated and scored in parallel; the count does not depend
/// on the number of workers.
pub fn estimate_p_mc<S, C>(classifier: &C, spec: &TestSetSpec, rng: &RngState) -> Result<McEstimate>
where
    S: Scalar,
    C: Classifier<S> + ?Sized,
{
    if classifier.n() != spec.n {
        return Err(Error::Shape(format!(
            "classifier takes {} inputs, testing set has n = {}",
            classifier.n(),
            spec.n
        )));
    }
    let stream = build_test_set(spec, rng)?;
    let rejections = (0..stream.chunk_count())
        .into_par_iter()
        .map(|c| classifier.count_rejections(&stream.chunk::<S>(c)))
        .sum();
    Ok(McEstimate {
        rejections,
        sample_size: stream.len(),
    })
}

pub fn delta_p(p_n: f64, p_s: f64) -> f64 {
    p_n - p_s
}

pub fn delta_p_rel(p_n: f64, p_s: f64) -> Result<f64> {
    if p_s == 0.0 {
        return Err(domain("relative difference undefined for p_s = 0"));
    }
    Ok(delta_p(p_n, p_s) / p_s)
}

/// Two-sided normal-approximation test of `successes / n` against `p0`.
pub fn proportion_p_value(successes: u64, n: u64, p0: f64) -> Result<f64> {
    if n == 0 || successes > n {
        return Err(domain(format!("invalid counts {successes} / {n}")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(domain(format!("p0 must lie in [0, 1], got {p0}")));
    }
    let var = n as f64 * p0 * (1.0 - p0);
    if var < 5.0 {
        return Err(Error::DegenerateVariance(var));
    }
    let z = (successes as f64 - n as f64 * p0) / var.sqrt();
    Ok(erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0))
}

/// `P(X <= x)` for `X ~ Poisson(lambda)`.
fn poisson_cdf(x: u64, lambda: f64) -> f64 {
    let mut term = (-lambda).exp();
    let mut sum = term;
    for i in 1..=x {
        term *= lambda / i as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum.min(1.0)
}

/// Two-sided tail probability of an observed count under the exact
/// rejection probability `p0`.
///
/// Uses the normal approximation where it is valid and otherwise a Poisson
/// approximation on the rare outcome (`N * min(p0, 1 - p0) < 5`).
pub fn null_tail_probability(rejections: u64, n: u64, p0: f64) -> Result<f64> {
    match proportion_p_value(rejections, n, p0) {
        Err(Error::DegenerateVariance(_)) => {
            let (rare, q) = if p0 <= 0.5 {
                (rejections, p0)
            } else {
                (n - rejections, 1.0 - p0)
            };
            let lambda = n as f64 * q;
            let lower = poisson_cdf(rare, lambda);
            let upper = if rare == 0 { 1.0 } else { 1.0 - poisson_cdf(rare - 1, lambda) };
            Ok((2.0 * lower.min(upper)).min(1.0))
        }
        other => other,
    }
}

/// Two-sided normal tail beyond `z` standard errors.
pub fn normal_two_sided_tail(z: f64) -> f64 {
    erfc(z / std::f64::consts::SQRT_2)
}

/// One compared scenario.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub a: u32,
    pub n: usize,
    pub k: usize,
    pub mu: f64,
    pub sigma: f64,
    pub sample_size: u64,
    pub rejections: u64,
    pub p_n: f64,
    pub p_s: f64,
    pub delta_p: f64,
    pub delta_p_rel: f64,
    /// `None` when `N * p_s * (1 - p_s) < 5`.
    pub p_value: Option<f64>,
}

impl EvalRow {
    pub fn new(a: u32, scenario: &Scenario<f64>, estimate: McEstimate, p_s: f64) -> Result<Self> {
        let p_n = estimate.p_hat();
        let p_value = match proportion_p_value(estimate.rejections, estimate.sample_size, p_s) {
            Ok(p) => Some(p),
            Err(Error::DegenerateVariance(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            a,
            n: scenario.n,
            k: scenario.k,
            mu: scenario.mu,
            sigma: scenario.sigma,
            sample_size: estimate.sample_size,
            rejections: estimate.rejections,
            p_n,
            p_s,
            delta_p: delta_p(p_n, p_s),
            delta_p_rel: delta_p_rel(p_n, p_s)?,
            p_value,
        })
    }

    /// Binomial standard error of `p_n` under the closed-form value.
    pub fn null_standard_error(&self) -> f64 {
        (self.p_s * (1.0 - self.p_s) / self.sample_size as f64).sqrt()
    }

    /// Whether the observed count is within `z` standard errors of `p_s`,
    /// judged by tail probability so that rows with very small variance
    /// are treated consistently.
    pub fn consistent_with_rule(&self, z: f64) -> Result<bool> {
        Ok(null_tail_probability(self.rejections, self.sample_size, self.p_s)? >= normal_two_sided_tail(z))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Tuples per position mask for shifted scenarios.
    pub replicates_per_pattern: u64,
    /// Size of the in-control set used to measure false rejection.
    pub in_control_count: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            replicates_per_pattern: DEFAULT_REPLICATES,
            in_control_count: DEFAULT_IN_CONTROL_COUNT,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates_per_pattern == 0 || self.in_control_count == 0 {
            return Err(Error::Config("evaluation sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Measured false-rejection rate and the limit that matches it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedLimit {
    pub estimate: McEstimate,
    pub p_fr: f64,
    pub l: f64,
}

pub fn matched_limit<S, C>(classifier: &C, in_control_count: u64, rng: &RngState) -> Result<MatchedLimit>
where
    S: Scalar,
    C: Classifier<S> + ?Sized,
{
    let spec = TestSetSpec::in_control(classifier.n()).with_in_control_count(in_control_count);
    let estimate = estimate_p_mc(classifier, &spec, rng)?;
    let p_fr = estimate.p_hat();
    let l = decision_limit(p_fr, classifier.n())
        .map_err(|_| domain(format!("measured false-rejection rate {p_fr} has no matching limit")))?;
    Ok(MatchedLimit { estimate, p_fr, l })
}

/// `P_N` (Monte Carlo) against `P_S` (closed form, limit `l`) for every
/// `k = 1..=n` and grid point. Scenario `i` in output order uses substream
/// `i` of `rng`.
pub fn compare<S, C>(a: u32, classifier: &C, l: f64, grid: &GridAxes, eval: &EvalConfig, rng: &RngState) -> Result<Vec<EvalRow>>
where
    S: Scalar,
    C: Classifier<S> + ?Sized,
{
    eval.validate()?;
    grid.validate()?;
    let n = classifier.n();
    let scenarios = (1..=n)
        .flat_map(|k| grid.points().into_iter().map(move |(mu, sigma)| (k, mu, sigma)))
        .map(|(k, mu, sigma)| Scenario::new(n, k, mu, sigma))
        .collect::<Result<Vec<_>>>()?;
    scenarios
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let spec = TestSetSpec::shifted(n, s.k, s.mu, s.sigma).with_replicates(eval.replicates_per_pattern);
            let est = estimate_p_mc(classifier, &spec, &rng.derive_substream(i as u64))?;
            EvalRow::new(a, s, est, p_reject_closed(s, l)?)
        })
        .collect()
}

const EVAL_HEADER: &str = "a,n,k,mu,sigma,N,p_n,p_s,delta_p,delta_p_rel,p_value";

/// CSV `a,n,k,mu,sigma,N,p_n,p_s,delta_p,delta_p_rel,p_value`, six decimals;
/// `p_value` is empty where the test is degenerate.
pub fn write_eval_csv<W: Write>(mut out: W, rows: &[EvalRow]) -> Result<()> {
    writeln!(out, "{EVAL_HEADER}")?;
    for r in rows {
        write!(
            out,
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},",
            r.a, r.n, r.k, r.mu, r.sigma, r.sample_size, r.p_n, r.p_s, r.delta_p, r.delta_p_rel
        )?;
        if let Some(p) = r.p_value {
            write!(out, "{p:.6}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Parses [`write_eval_csv`] output. `rejections` is recovered as `round(p_n * N)`.
pub fn read_eval_csv<R: BufRead>(input: R) -> Result<Vec<EvalRow>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some(EVAL_HEADER) {
        return Err(format_err(FormatErrorCode::BadMagic, "missing evaluation CSV header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |msg: String| format_err(FormatErrorCode::Inconsistent, format!("line {}: {msg}", i + 2));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(bad(format!("expected 11 fields, got {}", f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let int = |s: &str| s.trim().parse::<u64>().map_err(|e| bad(format!("{s:?}: {e}")));
        let sample_size = int(f[5])?;
        let p_n = num(f[6])?;
        rows.push(EvalRow {
            a: int(f[0])? as u32,
            n: int(f[1])? as usize,
            k: int(f[2])? as usize,
            mu: num(f[3])?,
            sigma: num(f[4])?,
            sample_size,
            rejections: (p_n * sample_size as f64).round() as u64,
            p_n,
            p_s: num(f[7])?,
            delta_p: num(f[8])?,
            delta_p_rel: num(f[9])?,
            p_value: if f[10].trim().is_empty() { None } else { Some(num(f[10])?) },
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(rows)
}

/// Counts of positive and negative differences per `(n, k)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignSummary {
    pub n: usize,
    pub k: usize,
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
    /// Rows with `p_value < 0.01`, by sign.
    pub significant_positive: usize,
    pub significant_negative: usize,
}

pub fn sign_summary(rows: &[EvalRow]) -> Vec<SignSummary> {
    let mut map: BTreeMap<(usize, usize), SignSummary> = BTreeMap::new();
    for r in rows {
        let s = map.entry((r.n, r.k)).or_insert(SignSummary {
            n: r.n,
            k: r.k,
            ..SignSummary::default()
        });
        let significant = r.p_value.is_some_and(|p| p < 0.01);
        if r.delta_p > 0.0 {
            s.positive += 1;
            s.significant_positive += usize::from(significant);
        } else if r.delta_p < 0.0 {
            s.negative += 1;
            s.significant_negative += usize::from(significant);
        } else {
            s.zero += 1;
        }
    }
    map.into_values().collect()
}

/// Kolmogorov-Smirnov distance between `values` and the uniform law on [0, 1].
pub fn ks_uniform(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    Ok(v.iter().enumerate().fold(0.0, |d: f64, (i, &x)| {
        d.max((i + 1) as f64 / n - x).max(x - i as f64 / n)
    }))
}

/// Standardized critical errors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalErrorConfig {
    pub mu_c: f64,
    pub sigma_c: f64,
}

impl Default for CriticalErrorConfig {
    fn default() -> Self {
        Self {
            mu_c: 2.67,
            sigma_c: 3.33,
        }
    }
}

impl CriticalErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_c > 0.0 && self.sigma_c > 1.0) {
            return Err(Error::Config(format!(
                "critical errors need mu_c > 0 and sigma_c > 1, got {} and {}",
                self.mu_c, self.sigma_c
            )));
        }
        Ok(())
    }
}

/// Closed-form rejection probabilities at `(mu_c, 1)` and `(0, sigma_c)`.
pub fn critical_ps(n: usize, k: usize, l: f64, config: &CriticalErrorConfig) -> Result<(f64, f64)> {
    Ok((
        p_reject_closed(&Scenario::new(n, k, config.mu_c, 1.0)?, l)?,
        p_reject_closed(&Scenario::new(n, k, 0.0, config.sigma_c)?, l)?,
    ))
}

/// A classifier with its measured false-rejection rate and matched limit.
pub struct CriticalModel<'a, S> {
    pub a: u32,
    pub classifier: &'a dyn Classifier<S>,
    pub matched: MatchedLimit,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    pub n: usize,
    pub k: usize,
    pub a: u32,
    pub p_fr: f64,
    pub l: f64,
    /// At `(mu_c, 1)`.
    pub shift: EvalRow,
    /// At `(0, sigma_c)`.
    pub spread: EvalRow,
}

/// Critical-error detection for every model and `k = 2..=n`, sorted by `(n, k, a)`.
///
/// Model `i`, position `k` uses substreams `2k` (shift) and `2k + 1`
/// (spread) of substream `i` of `rng`.
pub fn critical_error_report<S: Scalar>(
    models: &[CriticalModel<'_, S>],
    config: &CriticalErrorConfig,
    eval: &EvalConfig,
    rng: &RngState,
) -> Result<Vec<CriticalRow>> {
    config.validate()?;
    eval.validate()?;
    let mut rows = Vec::new();
    for (i, m) in models.iter().enumerate() {
        let n = m.classifier.n();
        let base = rng.derive_substream(i as u64);
        for k in 2..=n {
            let one = |mu: f64, sigma: f64, stream: u64| -> Result<EvalRow> {
                let s = Scenario::new(n, k, mu, sigma)?;
                let spec = TestSetSpec::shifted(n, k, mu, sigma).with_replicates(eval.replicates_per_pattern);
                let est = estimate_p_mc(m.classifier, &spec, &base.derive_substream(stream))?;
                EvalRow::new(m.a, &s, est, p_reject_closed(&s, m.matched.l)?)
            };
            let shift = one(config.mu_c, 1.0, 2 * k as u64)?;
            let spread = one(0.0, config.sigma_c, 2 * k as u64 + 1)?;
            rows.push(CriticalRow {
                n,
                k,
                a: m.a,
                p_fr: m.matched.p_fr,
                l: m.matched.l,
                shift,
                spread,
            });
        }
    }
    rows.sort_by_key(|r| (r.n, r.k, r.a));
    Ok(rows)
}

pub fn write_critical_csv<W: Write>(mut out: W, rows: &[CriticalRow]) -> Result<()> {
    writeln!(
        out,
        "n,k,a,p_fr,l,N,p_n_mu,p_s_mu,delta_p_mu,delta_p_rel_mu,p_n_sigma,p_s_sigma,delta_p_sigma,delta_p_rel_sigma"
    )?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.n,
            r.k,
            r.a,
            r.p_fr,
            r.l,
            r.shift.sample_size,
            r.shift.p_n,
            r.shift.p_s,
            r.shift.delta_p,
            r.shift.delta_p_rel,
            r.spread.p_n,
            r.spread.p_s,
            r.spread.delta_p,
            r.spread.delta_p_rel
        )?;
    }
    Ok(())
}

/// A pair of rows that breaks an expected ordering by more than the tolerance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    /// Which ordering: 1 |mu|, 2 sigma, 3 k, 4 a (decreasing), 5 n at k = n, 6 n at fixed k (decreasing).
    pub item: u8,
    pub description: String,
    /// Row expected to have the smaller probability, and its probability.
    pub lower: (u32, usize, usize, f64, f64),
    pub p_lower: f64,
    pub higher: (u32, usize, usize, f64, f64),
    pub p_higher: f64,
    /// 4 x combined standard error.
    pub tolerance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs_checked: usize,
    pub findings: Vec<Finding>,
}

fn row_se(r: &EvalRow) -> f64 {
    if r.sample_size == 0 {
        0.0
    } else {
        (r.p_n * (1.0 - r.p_n) / r.sample_size as f64).sqrt()
    }
}

fn key(r: &EvalRow) -> (u32, usize, usize, f64, f64) {
    (r.a, r.n, r.k, r.mu, r.sigma)
}

/// Checks the orderings of `p_n` between neighbouring rows. Only adjacent
/// pairs along each axis are compared; a pair is flagged when the expected
/// smaller value exceeds the larger by more than 4 combined standard errors.
pub fn monotonicity_scan(rows: &[EvalRow]) -> MonotonicityReport {
    type GroupKey = (u64, u64, u64, u64);
    let bits = |v: f64| v.to_bits();
    let mut report = MonotonicityReport::default();
    // (item, row filter, group key, axis value, ordering is increasing)
    type Axis = (u8, &'static str, fn(&EvalRow) -> bool, fn(&EvalRow) -> GroupKey, fn(&EvalRow) -> f64, bool);
    let axes: [Axis; 6] = [
        (1, "increasing in |mu| at sigma = 1", |r| r.sigma == 1.0 && r.mu != 0.0, |r| (r.a as u64, r.n as u64, r.k as u64, 0), |r| r.mu.abs(), true),
        (2, "increasing in sigma at mu = 0", |r| r.mu == 0.0, |r| (r.a as u64, r.n as u64, r.k as u64, 0), |r| r.sigma, true),
        (3, "increasing in k", |_| true, |r| (r.a as u64, r.n as u64, r.mu.to_bits(), r.sigma.to_bits()), |r| r.k as f64, true),
        (4, "decreasing in a", |_| true, |r| (r.n as u64, r.k as u64, r.mu.to_bits(), r.sigma.to_bits()), |r| r.a as f64, false),
        (5, "increasing in n at k = n", |r| r.k == r.n, |r| (r.a as u64, 0, r.mu.to_bits(), r.sigma.to_bits()), |r| r.n as f64, true),
        (6, "decreasing in n at fixed k", |_| true, |r| (r.a as u64, r.k as u64, r.mu.to_bits(), r.sigma.to_bits()), |r| r.n as f64, false),
    ];
    for (item, description, filter, group, axis, increasing) in axes {
        let mut groups: BTreeMap<GroupKey, Vec<&EvalRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| filter(r)) {
            groups.entry(group(r)).or_default().push(r);
        }
        for mut g in groups.into_values() {
            g.sort_by(|x, y| axis(x).total_cmp(&axis(y)));
            for w in g.windows(2) {
                if bits(axis(w[0])) == bits(axis(w[1])) {
                    continue;
                }
                report.pairs_checked += 1;
                let (lo, hi) = if increasing { (w[0], w[1]) } else { (w[1], w[0]) };
                let tolerance = 4.0 * (row_se(lo).powi(2) + row_se(hi).powi(2)).sqrt();
                if hi.p_n < lo.p_n - tolerance {
                    report.findings.push(Finding {
                        item,
                        description: description.to_string(),
                        lower: key(lo),
                        p_lower: lo.p_n,
                        higher: key(hi),
                        p_higher: hi.p_n,
                        tolerance,
                    });
                }
            }
        }
    }
    report
}

/// Rows whose `p_n` is the closed-form value itself (no sampling noise).
pub fn analytic_rows(a: u32, n: usize, l: f64, grid: &GridAxes) -> Result<Vec<EvalRow>> {
    crate::analytic::build_ps_grid(n, l, grid)?
        .into_iter()
        .map(|r| {
            Ok(EvalRow {
                a,
                n,
                k: r.scenario.k,
                mu: r.scenario.mu,
                sigma: r.scenario.sigma,
                sample_size: 0,
                rejections: 0,
                p_n: r.p_s,
                p_s: r.p_s,
                delta_p: 0.0,
                delta_p_rel: 0.0,
                p_value: None,
            })
        })
        .collect()
}
