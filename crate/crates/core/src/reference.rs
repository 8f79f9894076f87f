//! Shipped reference statistics and their recomputation.
//!
//! Each entry names a statistic, the contingency counts it is computed from,
//! the pinned full-precision value and (optionally) the rounded published
//! value. `verify` recomputes every entry and runs the regression check.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::harness::Tier;
use crate::metrics::RunSummary;
use crate::stats::{
    BfConvention, BfRequest, ContingencyTable, RegressionReport, Sided, StatsError, bayes_factor, cmh, cohens_h,
    fisher_exact, odds_ratio_ci, regression_check,
};

pub const SHIPPED_REFERENCE: &str = include_str!("../config/reference_values.toml");
pub const REFERENCE_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    FisherTwoSided,
    FisherOneTailed,
    CohensH,
    OddsRatio,
    OddsRatioLower,
    OddsRatioUpper,
    CmhP,
    CmhOddsRatio,
    CmhLower,
    CmhUpper,
    BayesFactorOdds,
    BayesFactorProb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceEntry {
    pub key: String,
    pub statistic: StatisticKind,
    /// Tables as `[a, b, c, d]`; one per stratum for CMH.
    pub tables: Vec<[u64; 4]>,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub published: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub draws: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTable {
    pub version: String,
    pub tolerance: f64,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(rename = "reference")]
    pub entries: Vec<ReferenceEntry>,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, thiserror::Error)]
pub enum ReferenceError {
    #[error("reference file {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("reference table: {0}")]
    Parse(String),
    #[error("reference entry {key}: {message}")]
    Entry { key: String, message: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl ReferenceTable {
    pub fn shipped() -> Self {
        Self::from_toml(SHIPPED_REFERENCE).expect("shipped reference table is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self, ReferenceError> {
        let table: ReferenceTable = toml::from_str(text).map_err(|e| ReferenceError::Parse(e.to_string()))?;
        if table.version != REFERENCE_VERSION {
            return Err(ReferenceError::Parse(format!("unsupported version {:?}", table.version)));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &table.entries {
            if !seen.insert(e.key.as_str()) {
                return Err(ReferenceError::Entry { key: e.key.clone(), message: "duplicate key".into() });
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, ReferenceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ReferenceError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn values(&self) -> BTreeMap<String, f64> {
        self.entries.iter().map(|e| (e.key.clone(), e.value)).collect()
    }

    pub fn entry(&self, key: &str) -> Option<&ReferenceEntry> {
        self.entries.iter().find(|e| e.key == key)
    }

    /// Recompute every entry from its counts.
    pub fn recompute(&self) -> Result<BTreeMap<String, f64>, ReferenceError> {
        self.entries.iter().map(|e| Ok((e.key.clone(), recompute_entry(e, self.level)?))).collect()
    }

    pub fn verify(&self) -> Result<RegressionReport, ReferenceError> {
        Ok(regression_check(&self.values(), &self.recompute()?, self.tolerance)?)
    }

    /// Entries whose key starts with `prefix`, with counts replaced by the
    /// ones observed in `summaries`. Keys have the form
    /// `<prefix>.<metric>.<first>_vs_<second>.<statistic>` where metric is
    /// `re_accuracy`, `exactly_n` or `raw_accuracy` and the agents are
    /// `base`, `cg` or `cgdb`.
    pub fn rebuild_from_summaries(&self, prefix: &str, summaries: &[RunSummary]) -> Result<ReferenceTable, ReferenceError> {
        let mut entries = Vec::new();
        for e in self.entries.iter().filter(|e| e.key.starts_with(&format!("{prefix}."))) {
            let bad = |m: &str| ReferenceError::Entry { key: e.key.clone(), message: m.to_string() };
            let parts: Vec<&str> = e.key[prefix.len() + 1..].split('.').collect();
            let [metric, pair, _] = parts.as_slice() else { return Err(bad("unrecognised key layout")) };
            let (first, second) = pair.split_once("_vs_").ok_or_else(|| bad("expected <first>_vs_<second>"))?;
            let counts = |agent: &str| -> Result<[u64; 2], ReferenceError> {
                let tier = match agent {
                    "base" => Tier::Base,
                    "cg" => Tier::Cg,
                    "cgdb" => Tier::CgDb,
                    _ => return Err(bad("unknown agent")),
                };
                let s = summaries.iter().find(|s| s.tier == tier).ok_or_else(|| bad("agent missing from run"))?;
                let (k, n) = match *metric {
                    "re_accuracy" => (s.re_correct, s.re_count),
                    "exactly_n" => (s.exactly_n_count, s.n),
                    "raw_accuracy" => (s.raw_correct, s.n),
                    _ => return Err(bad("unknown metric")),
                };
                Ok([k as u64, (n - k) as u64])
            };
            let [a, b] = counts(first)?;
            let [c, d] = counts(second)?;
            entries.push(ReferenceEntry { tables: vec![[a, b, c, d]], ..e.clone() });
        }
        Ok(ReferenceTable { entries, ..self.clone() })
    }
}

fn single(e: &ReferenceEntry) -> Result<ContingencyTable, ReferenceError> {
    match e.tables.as_slice() {
        [[a, b, c, d]] => Ok(ContingencyTable::new(*a, *b, *c, *d)),
        _ => Err(ReferenceError::Entry { key: e.key.clone(), message: "expected exactly one table".into() }),
    }
}

pub fn recompute_entry(e: &ReferenceEntry, level: f64) -> Result<f64, ReferenceError> {
    use StatisticKind::*;
    let v = match e.statistic {
        FisherTwoSided => fisher_exact(&single(e)?, Sided::TwoSided)?,
        FisherOneTailed => fisher_exact(&single(e)?, Sided::OneTailedGreater)?,
        CohensH => {
            let t = single(e)?;
            let (p1, p2) = t
                .rates()
                .ok_or_else(|| ReferenceError::Entry { key: e.key.clone(), message: "empty row".into() })?;
            cohens_h(p1, p2)?
        }
        OddsRatio => odds_ratio_ci(&single(e)?, level)?.odds_ratio,
        OddsRatioLower => odds_ratio_ci(&single(e)?, level)?.lower,
        OddsRatioUpper => odds_ratio_ci(&single(e)?, level)?.upper,
        CmhP | CmhOddsRatio | CmhLower | CmhUpper => {
            let strata: Vec<ContingencyTable> =
                e.tables.iter().map(|[a, b, c, d]| ContingencyTable::new(*a, *b, *c, *d)).collect();
            let r = cmh(&strata, level)?;
            match e.statistic {
                CmhP => r.p_value,
                CmhOddsRatio => r.common_odds_ratio,
                CmhLower => r.lower,
                _ => r.upper,
            }
        }
        BayesFactorOdds | BayesFactorProb => {
            let t = single(e)?;
            let convention =
                if e.statistic == BayesFactorOdds { BfConvention::PosteriorOdds } else { BfConvention::ProbOverHalf };
            let mut req = BfRequest::new(t.a, t.a + t.b, t.c, t.c + t.d);
            req.convention = convention;
            req.draws = e.draws.unwrap_or(req.draws);
            req.seed = e.seed.unwrap_or(req.seed);
            bayes_factor(&req)?.value
        }
    };
    Ok(v)
}
