//! Statistical tests: Fisher's exact test, Cohen's h, Wald odds-ratio
//! intervals, the Cochran-Mantel-Haenszel test with Robins-Breslow-Greenland
//! intervals, Monte-Carlo Bayes factors, and a relative-tolerance
//! regression check.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("contingency table {0:?} has an empty margin")]
    EmptyMargin(ContingencyTable),
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("at least two usable strata are required, found {0}")]
    TooFewStrata(usize),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("reference and recomputed keys differ (missing: {missing:?}, extra: {extra:?})")]
    KeyMismatch { missing: Vec<String>, extra: Vec<String> },
}

/// 2x2 table. Rows are groups, columns are (success, failure):
///
/// ```text
///            success  failure
/// group 1       a        b
/// group 2       c        d
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub a: u64,
    pub b: u64,
    pub c: u64,
    pub d: u64,
}

impl ContingencyTable {
    pub fn new(a: u64, b: u64, c: u64, d: u64) -> Self {
        Self { a, b, c, d }
    }

    /// Table from successes out of totals per group.
    pub fn from_rates(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<Self, StatsError> {
        if k1 > n1 || k2 > n2 {
            return Err(StatsError::InvalidCounts(format!("{k1}/{n1} vs {k2}/{n2}")));
        }
        Ok(Self::new(k1, n1 - k1, k2, n2 - k2))
    }

    pub fn n(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    pub fn row_totals(&self) -> (u64, u64) {
        (self.a + self.b, self.c + self.d)
    }

    pub fn col_totals(&self) -> (u64, u64) {
        (self.a + self.c, self.b + self.d)
    }

    pub fn has_empty_margin(&self) -> bool {
        let (r1, r2) = self.row_totals();
        let (c1, c2) = self.col_totals();
        r1 == 0 || r2 == 0 || c1 == 0 || c2 == 0
    }

    /// Success proportions of the two rows.
    pub fn rates(&self) -> Option<(f64, f64)> {
        let (r1, r2) = self.row_totals();
        (r1 > 0 && r2 > 0).then(|| (self.a as f64 / r1 as f64, self.c as f64 / r2 as f64))
    }

    pub fn swap_rows(&self) -> Self {
        Self::new(self.c, self.d, self.a, self.b)
    }

    pub fn swap_cols(&self) -> Self {
        Self::new(self.b, self.a, self.d, self.c)
    }

    pub fn as_array(&self) -> [u64; 4] {
        [self.a, self.b, self.c, self.d]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    TwoSided,
    /// Alternative: group 1 has the higher success odds.
    OneTailedGreater,
}

// ---------------------------------------------------------------------------
// Fisher

/// Relative slack when comparing table probabilities to the observed one,
/// so that ties lost to rounding still count as "as extreme".
const FISHER_RELATIVE_TOLERANCE: f64 = 1e-7;

/// Fisher's exact test. `a` follows a hypergeometric distribution given the
/// margins; the two-sided p-value sums every table no more probable than the
/// observed one.
pub fn fisher_exact(t: &ContingencyTable, sided: Sided) -> Result<f64, StatsError> {
    if t.has_empty_margin() {
        return Err(StatsError::EmptyMargin(*t));
    }
    let n = t.n();
    let (r1, _) = t.row_totals();
    let (c1, _) = t.col_totals();
    let lo = (r1 + c1).saturating_sub(n);
    let hi = r1.min(c1);
    let ln_denominator = ln_binomial(n, r1);
    let pmf = |x: u64| (ln_binomial(c1, x) + ln_binomial(n - c1, r1 - x) - ln_denominator).exp();
    let p = match sided {
        Sided::OneTailedGreater => (t.a..=hi).map(pmf).sum::<f64>(),
        Sided::TwoSided => {
            let observed = pmf(t.a);
            (lo..=hi).map(pmf).filter(|&p| p <= observed * (1.0 + FISHER_RELATIVE_TOLERANCE)).sum::<f64>()
        }
    };
    Ok(p.min(1.0))
}

// ---------------------------------------------------------------------------
// Effect sizes

/// Cohen's h, signed: positive when `p1 > p2`.
pub fn cohens_h(p1: f64, p2: f64) -> Result<f64, StatsError> {
    for (name, value) in [("p1", p1), ("p2", p2)] {
        if !(0.0..=1.0).contains(&value) {
            return Err(StatsError::OutOfRange { name, value });
        }
    }
    Ok(2.0 * (p1.sqrt().asin() - p2.sqrt().asin()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub odds_ratio: f64,
    pub lower: f64,
    pub upper: f64,
    /// Whether 0.5 was added to every cell.
    pub corrected: bool,
}

fn z_for(level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::OutOfRange { name: "level", value: level });
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(1.0 - (1.0 - level) / 2.0))
}

/// Odds ratio `ad/bc` with a Wald interval on the log scale. If any cell is
/// zero, 0.5 is added to every cell (Haldane-Anscombe).
pub fn odds_ratio_ci(t: &ContingencyTable, level: f64) -> Result<OddsRatio, StatsError> {
    let z = z_for(level)?;
    let corrected = t.as_array().contains(&0);
    let shift = if corrected { 0.5 } else { 0.0 };
    let [a, b, c, d] = t.as_array().map(|x| x as f64 + shift);
    let or = a * d / (b * c);
    let se = (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt();
    Ok(OddsRatio { odds_ratio: or, lower: (or.ln() - z * se).exp(), upper: (or.ln() + z * se).exp(), corrected })
}

// ---------------------------------------------------------------------------
// Cochran-Mantel-Haenszel

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmhResult {
    /// Continuity-corrected MH chi-square statistic (1 df).
    pub statistic: f64,
    pub p_value: f64,
    pub common_odds_ratio: f64,
    pub lower: f64,
    pub upper: f64,
    /// Indices of strata skipped because of an empty margin.
    pub skipped: Vec<usize>,
}

/// Stratified test of a common odds ratio. Strata with an empty margin carry
/// no information and are skipped; their indices are reported.
pub fn cmh(strata: &[ContingencyTable], level: f64) -> Result<CmhResult, StatsError> {
    let z = z_for(level)?;
    let mut skipped = Vec::new();
    let mut used = Vec::new();
    for (i, t) in strata.iter().enumerate() {
        if t.has_empty_margin() || t.n() < 2 {
            skipped.push(i);
        } else {
            used.push(*t);
        }
    }
    if used.len() < 2 {
        return Err(StatsError::TooFewStrata(used.len()));
    }

    let (mut observed, mut expected, mut variance) = (0.0, 0.0, 0.0);
    let (mut r_sum, mut s_sum) = (0.0, 0.0);
    let (mut pr, mut ps_qr, mut qs) = (0.0, 0.0, 0.0);
    for t in &used {
        let [a, b, c, d] = t.as_array().map(|x| x as f64);
        let n = a + b + c + d;
        let (r1, r2, c1, c2) = (a + b, c + d, a + c, b + d);
        observed += a;
        expected += r1 * c1 / n;
        variance += r1 * r2 * c1 * c2 / (n * n * (n - 1.0));

        let r = a * d / n;
        let s = b * c / n;
        let p = (a + d) / n;
        let q = (b + c) / n;
        r_sum += r;
        s_sum += s;
        pr += p * r;
        ps_qr += p * s + q * r;
        qs += q * s;
    }
    let deviation = ((observed - expected).abs() - 0.5).max(0.0);
    let statistic = deviation * deviation / variance;
    let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
    let p_value = 1.0 - chi2.cdf(statistic);

    let common = r_sum / s_sum;
    let var_log =
        pr / (2.0 * r_sum * r_sum) + ps_qr / (2.0 * r_sum * s_sum) + qs / (2.0 * s_sum * s_sum);
    let se = var_log.sqrt();
    Ok(CmhResult {
        statistic,
        p_value,
        common_odds_ratio: common,
        lower: (common.ln() - z * se).exp(),
        upper: (common.ln() + z * se).exp(),
        skipped,
    })
}

// ---------------------------------------------------------------------------
// Bayes factors

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BfConvention {
    /// P / (1 - P)
    PosteriorOdds,
    /// P / 0.5
    ProbOverHalf,
}

pub const DEFAULT_DRAWS: u64 = 1_000_000;
/// Draws per independently seeded chunk.
pub const BF_CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfRequest {
    pub k1: u64,
    pub n1: u64,
    pub k2: u64,
    pub n2: u64,
    pub draws: u64,
    pub convention: BfConvention,
    pub seed: u64,
}

impl BfRequest {
    pub fn new(k1: u64, n1: u64, k2: u64, n2: u64) -> Self {
        Self { k1, n1, k2, n2, draws: DEFAULT_DRAWS, convention: BfConvention::PosteriorOdds, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactor {
    /// Monte-Carlo estimate of P(p1 > p2 | data).
    pub probability: f64,
    pub posterior_odds: f64,
    pub prob_over_half: f64,
    /// The value under the requested convention.
    pub value: f64,
}

/// Directional Bayes factor from Beta(k+1, n-k+1) posteriors. Draws are
/// split into fixed-size chunks, each seeded from `(seed, chunk index)`, so
/// the result does not depend on the thread count.
pub fn bayes_factor(req: &BfRequest) -> Result<BayesFactor, StatsError> {
    if req.k1 > req.n1 || req.k2 > req.n2 || req.draws == 0 {
        return Err(StatsError::InvalidCounts(format!("{req:?}")));
    }
    let beta1 = Beta::new((req.k1 + 1) as f64, (req.n1 - req.k1 + 1) as f64).expect("positive parameters");
    let beta2 = Beta::new((req.k2 + 1) as f64, (req.n2 - req.k2 + 1) as f64).expect("positive parameters");
    let chunks = req.draws.div_ceil(BF_CHUNK);
    let wins: u64 = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
            rng.set_stream(i);
            let len = BF_CHUNK.min(req.draws - i * BF_CHUNK);
            (0..len).filter(|_| beta1.sample(&mut rng) > beta2.sample(&mut rng)).count() as u64
        })
        .sum();
    let probability = wins as f64 / req.draws as f64;
    let posterior_odds = probability / (1.0 - probability);
    let prob_over_half = probability / 0.5;
    let value = match req.convention {
        BfConvention::PosteriorOdds => posterior_odds,
        BfConvention::ProbOverHalf => prob_over_half,
    };
    Ok(BayesFactor { probability, posterior_odds, prob_over_half, value })
}

// ---------------------------------------------------------------------------
// Regression check

pub const REGRESSION_TOLERANCE: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionFailure {
    pub key: String,
    pub reference: f64,
    pub recomputed: f64,
    pub relative_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionReport {
    pub tolerance: f64,
    pub checked: usize,
    pub failures: Vec<RegressionFailure>,
}

impl RegressionReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Relative difference `|x - r| / |r|`; absolute when the reference is 0.
pub fn relative_difference(reference: f64, recomputed: f64) -> f64 {
    let diff = (recomputed - reference).abs();
    if reference == 0.0 { diff } else { diff / reference.abs() }
}

/// Compare two keyed value sets. Keys must match exactly.
pub fn regression_check(
    reference: &BTreeMap<String, f64>,
    recomputed: &BTreeMap<String, f64>,
    tolerance: f64,
) -> Result<RegressionReport, StatsError> {
    let missing: Vec<String> = reference.keys().filter(|k| !recomputed.contains_key(*k)).cloned().collect();
    let extra: Vec<String> = recomputed.keys().filter(|k| !reference.contains_key(*k)).cloned().collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(StatsError::KeyMismatch { missing, extra });
    }
    let failures = reference
        .iter()
        .filter_map(|(key, &r)| {
            let x = recomputed[key];
            let rel = relative_difference(r, x);
            (rel.is_nan() || rel > tolerance).then(|| RegressionFailure {
                key: key.clone(),
                reference: r,
                recomputed: x,
                relative_difference: rel,
            })
        })
        .collect();
    Ok(RegressionReport { tolerance, checked: reference.len(), failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fisher_identical_rows() {
        let t = ContingencyTable::new(5, 5, 5, 5);
        assert!((fisher_exact(&t, Sided::TwoSided).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fisher_rejects_empty_margin() {
        assert!(matches!(fisher_exact(&ContingencyTable::new(3, 0, 4, 0), Sided::TwoSided), Err(StatsError::EmptyMargin(_))));
    }

    #[test]
    fn cohens_h_bounds() {
        assert_eq!(cohens_h(0.3, 0.3).unwrap(), 0.0);
        assert!(cohens_h(1.2, 0.3).is_err());
    }

    #[test]
    fn odds_ratio_zero_cell() {
        let r = odds_ratio_ci(&ContingencyTable::new(0, 5, 3, 2), 0.95).unwrap();
        assert!(r.corrected);
        assert!((r.odds_ratio - (0.5 * 2.5) / (5.5 * 3.5)).abs() < 1e-12);
    }

    #[test]
    fn cmh_needs_two_strata() {
        let t = ContingencyTable::new(3, 2, 1, 4);
        assert_eq!(cmh(&[t, ContingencyTable::new(0, 0, 1, 1)], 0.95), Err(StatsError::TooFewStrata(1)));
    }

    #[test]
    fn regression_flags_key() {
        let r: BTreeMap<String, f64> = [("x".to_string(), 1.0), ("y".to_string(), 2.0)].into();
        let mut x = r.clone();
        assert!(regression_check(&r, &x, REGRESSION_TOLERANCE).unwrap().passed());
        x.insert("y".into(), 2.0 * 1.005);
        let report = regression_check(&r, &x, REGRESSION_TOLERANCE).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].key, "y");
        x.remove("x");
        assert!(matches!(regression_check(&r, &x, 0.002), Err(StatsError::KeyMismatch { .. })));
    }

    #[test]
    fn bayes_factor_is_thread_independent() {
        let req = BfRequest { draws: 200_000, ..BfRequest::new(9, 10, 6, 10) };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| bayes_factor(&req).unwrap());
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| bayes_factor(&req).unwrap());
        assert_eq!(one, four);
    }
}
