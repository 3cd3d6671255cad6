//! Tier assignment and the aggregate tables.
//!
//! Per-tier state lives in a [`TierAccumulator`]. Its `merge` is associative
//! and order-insensitive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::classifier::ClassificationResult;
use crate::detector::UnsafeReport;
use crate::model::{ChangeType, Corpus, LibraryRecord, Outcome, Tier, UnsafeFeature};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("library `{0}` has no dependents rank")]
    MissingRank(String),
    #[error("per-library statistics need at least one library")]
    EmptyTierSample,
    #[error("invalid tier config: {0}")]
    InvalidConfig(String),
    #[error("library `{0}`: number of reports does not match number of pull requests")]
    ReportMismatch(String),
    #[error("library `{library}`: pull request `{pr}` has no classification")]
    MissingClassification { library: String, pr: String },
}

/// Thresholds that define the three tiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierConfig {
    pub top_n: u64,
    pub middle_low: u64,
    pub middle_high: u64,
    pub bottom_dependents: u64,
    pub sample_per_tier: usize,
}

impl Default for TierConfig {
    fn default() -> Self {
        TierConfig {
            top_n: 500,
            middle_low: 500,
            middle_high: 1000,
            bottom_dependents: 1,
            sample_per_tier: 500,
        }
    }
}

impl TierConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.top_n < 1 {
            return Err(StatsError::InvalidConfig("top_n must be at least 1".into()));
        }
        if self.middle_low > self.middle_high {
            return Err(StatsError::InvalidConfig(format!(
                "middle range [{}, {}] is empty",
                self.middle_low, self.middle_high
            )));
        }
        if self.sample_per_tier < 1 {
            return Err(StatsError::InvalidConfig("sample_per_tier must be at least 1".into()));
        }
        Ok(())
    }
}

/// Tier of a single library. Precedence is Top, then Middle, then Bottom.
pub fn assign_tier(lib: &LibraryRecord, cfg: &TierConfig) -> Result<Tier, StatsError> {
    let rank = lib
        .dependents_rank
        .ok_or_else(|| StatsError::MissingRank(lib.name.clone()))?;
    Ok(if rank <= cfg.top_n {
        Tier::Top
    } else if (cfg.middle_low..=cfg.middle_high).contains(&lib.dependents) {
        Tier::Middle
    } else if lib.dependents == cfg.bottom_dependents {
        Tier::Bottom
    } else {
        Tier::Unsampled
    })
}

/// Ranks libraries by descending dependents, ties broken by name. The
/// ranking population is the corpus plus any extra `(name, dependents)`
/// entries; an extra entry with the same name as a corpus library overrides
/// its dependents count.
pub fn rank_libraries(corpus: &mut Corpus, population: &[(String, u64)]) {
    let mut deps: BTreeMap<&str, u64> = BTreeMap::new();
    for (name, d) in population {
        deps.insert(name, *d);
    }
    let overrides: Vec<Option<u64>> = corpus
        .libraries
        .iter()
        .map(|l| deps.get(l.name.as_str()).copied())
        .collect();
    for (lib, o) in corpus.libraries.iter_mut().zip(overrides) {
        if let Some(d) = o {
            lib.dependents = d;
        }
    }
    let mut all: BTreeMap<&str, u64> = deps;
    for lib in &corpus.libraries {
        all.insert(&lib.name, lib.dependents);
    }
    let mut order: Vec<(&str, u64)> = all.into_iter().collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let ranks: BTreeMap<String, u64> = order
        .iter()
        .enumerate()
        .map(|(i, (name, _))| (name.to_string(), i as u64 + 1))
        .collect();
    for lib in &mut corpus.libraries {
        lib.dependents_rank = ranks.get(&lib.name).copied();
    }
}

/// Assigns a tier to every corpus library and caps each tier at
/// `sample_per_tier` libraries. Top keeps the best ranked; Middle and Bottom
/// keep a reproducible pseudo-random sample ordered by a hash of the name.
pub fn assign_tiers(corpus: &Corpus, cfg: &TierConfig) -> Result<Vec<Tier>, StatsError> {
    cfg.validate()?;
    let mut tiers = corpus
        .libraries
        .iter()
        .map(|l| assign_tier(l, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    for tier in Tier::SAMPLED {
        let mut members: Vec<usize> = (0..tiers.len()).filter(|&i| tiers[i] == tier).collect();
        if members.len() <= cfg.sample_per_tier {
            continue;
        }
        let lib = |i: usize| &corpus.libraries[i];
        if tier == Tier::Top {
            members.sort_by_key(|&i| lib(i).dependents_rank);
        } else {
            members.sort_by_cached_key(|&i| Sha256::digest(lib(i).name.as_bytes()).to_vec());
        }
        for &i in &members[cfg.sample_per_tier..] {
            tiers[i] = Tier::Unsampled;
        }
    }
    Ok(tiers)
}

/// Rounds `count / denom` to a whole percent, halves rounding up.
/// A zero denominator yields 0.
pub fn percent_half_up(count: u64, denom: u64) -> u64 {
    if denom == 0 {
        return 0;
    }
    (200 * count + denom) / (2 * denom)
}

/// Truncates towards zero at two decimals and formats, e.g. `58.566 -> "58.56"`.
pub fn format_truncated_2dp(x: f64) -> String {
    // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
    let cents = (x * 100.0 + 1e-9).floor() as i64;
    format!("{}.{:02}", cents / 100, cents % 100)
}

/// Population or sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdKind {
    #[default]
    Population,
    Sample,
}

/// Mean, median and standard deviation of per-library PR counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerLibStats {
    pub libs: u64,
    pub total: u64,
    pub mean: f64,
    pub median: f64,
    pub sd_population: f64,
    pub sd_sample: f64,
}

impl PerLibStats {
    /// Mean truncated to two decimals, computed on exact integers.
    pub fn mean_display(&self) -> String {
        let cents = self.total * 100 / self.libs;
        format!("{}.{:02}", cents / 100, cents % 100)
    }

    pub fn median_display(&self) -> String {
        format!("{:.1}", self.median)
    }

    pub fn sd(&self, kind: SdKind) -> f64 {
        match kind {
            SdKind::Population => self.sd_population,
            SdKind::Sample => self.sd_sample,
        }
    }

    pub fn sd_display(&self, kind: SdKind) -> String {
        format_truncated_2dp(self.sd(kind))
    }
}

pub fn per_lib_pr_stats(counts: &[u64]) -> Result<PerLibStats, StatsError> {
    if counts.is_empty() {
        return Err(StatsError::EmptyTierSample);
    }
    let n = counts.len();
    let total: u64 = counts.iter().sum();
    let mean = total as f64 / n as f64;
    let mut sorted = counts.to_vec();
    sorted.sort_unstable();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    };
    let ss: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum();
    let sd_population = (ss / n as f64).sqrt();
    let sd_sample = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(PerLibStats {
        libs: n as u64,
        total,
        mean,
        median,
        sd_population,
        sd_sample,
    })
}

/// PR count and per-type counts on one side of the attention split.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct SplitCounts {
    pub pr_count: u64,
    pub type_counts: BTreeMap<ChangeType, u64>,
}

impl SplitCounts {
    /// Types with non-zero counts, most frequent first.
    pub fn ranked(&self) -> Vec<(ChangeType, u64)> {
        let mut v: Vec<_> = self
            .type_counts
            .iter()
            .filter(|(_, &c)| c > 0)
            .map(|(&t, &c)| (t, c))
            .collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v
    }

    fn merge(&mut self, other: &SplitCounts) {
        self.pr_count += other.pr_count;
        for (t, c) in &other.type_counts {
            *self.type_counts.entry(*t).or_default() += c;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct AttentionSplit {
    pub with: SplitCounts,
    pub without: SplitCounts,
    pub merged_closed_total: u64,
}

/// Everything the report tables need for one tier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TierStats {
    pub tier: Tier,
    pub lib_count: u64,
    pub dependents_max: Option<u64>,
    pub dependents_min: Option<u64>,
    pub pr_count: u64,
    pub update_related_pr_count: u64,
    pub update_related_per_lib: Option<PerLibStats>,
    pub unsafe_lib_count: u64,
    pub unsafe_pr_count: u64,
    pub unsafe_per_lib: Option<PerLibStats>,
    pub outcome_counts: BTreeMap<Outcome, u64>,
    pub feature_counts: BTreeMap<UnsafeFeature, u64>,
    pub attention_split: AttentionSplit,
}

impl TierStats {
    pub fn unsafe_lib_percent(&self) -> u64 {
        percent_half_up(self.unsafe_lib_count, self.lib_count)
    }

    pub fn outcome_count(&self, o: Outcome) -> u64 {
        self.outcome_counts.get(&o).copied().unwrap_or(0)
    }

    pub fn outcome_percent(&self, o: Outcome) -> u64 {
        percent_half_up(self.outcome_count(o), self.unsafe_pr_count)
    }

    /// Unsafe PRs as a share of update-related PRs.
    pub fn unsafe_share_percent(&self) -> u64 {
        percent_half_up(self.unsafe_pr_count, self.update_related_pr_count)
    }
}

/// Order-insensitive running totals for one tier.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TierAccumulator {
    dependents: Vec<u64>,
    pr_count: u64,
    update_counts: Vec<u64>,
    unsafe_counts: Vec<u64>,
    outcomes: BTreeMap<Outcome, u64>,
    features: BTreeMap<UnsafeFeature, u64>,
    attention: AttentionSplit,
}

impl TierAccumulator {
    /// Adds one library. `classes`, when given, must be parallel to
    /// `lib.pulls`; without it the attention split stays empty.
    pub fn add_library(
        &mut self,
        lib: &LibraryRecord,
        reports: &[UnsafeReport],
        classes: Option<&[ClassificationResult]>,
    ) -> Result<(), StatsError> {
        if reports.len() != lib.pulls.len() {
            return Err(StatsError::ReportMismatch(lib.name.clone()));
        }
        if classes.is_some_and(|c| c.len() != lib.pulls.len()) {
            return Err(StatsError::ReportMismatch(lib.name.clone()));
        }
        self.dependents.push(lib.dependents);
        self.pr_count += lib.pulls.len() as u64;
        let mut update = 0;
        let mut unsafe_prs = 0;
        for (i, (pr, report)) in lib.pulls.iter().zip(reports).enumerate() {
            if report.update_related {
                update += 1;
            }
            if !report.is_unsafe() {
                continue;
            }
            unsafe_prs += 1;
            *self.outcomes.entry(pr.outcome).or_default() += 1;
            for f in &report.features_present {
                *self.features.entry(*f).or_default() += 1;
            }
            if pr.outcome == Outcome::Opened {
                continue;
            }
            self.attention.merged_closed_total += 1;
            if let Some(classes) = classes {
                let c = &classes[i];
                if c.pr_id != pr.id {
                    return Err(StatsError::MissingClassification {
                        library: lib.name.clone(),
                        pr: pr.id.clone(),
                    });
                }
                let side = if c.attention {
                    &mut self.attention.with
                } else {
                    &mut self.attention.without
                };
                side.pr_count += 1;
                for t in &c.types {
                    *side.type_counts.entry(*t).or_default() += 1;
                }
            }
        }
        self.update_counts.push(update);
        self.unsafe_counts.push(unsafe_prs);
        Ok(())
    }

    pub fn merge(&mut self, other: &TierAccumulator) {
        self.dependents.extend(&other.dependents);
        self.pr_count += other.pr_count;
        self.update_counts.extend(&other.update_counts);
        self.unsafe_counts.extend(&other.unsafe_counts);
        for (k, v) in &other.outcomes {
            *self.outcomes.entry(*k).or_default() += v;
        }
        for (k, v) in &other.features {
            *self.features.entry(*k).or_default() += v;
        }
        self.attention.with.merge(&other.attention.with);
        self.attention.without.merge(&other.attention.without);
        self.attention.merged_closed_total += other.attention.merged_closed_total;
    }

    pub fn finish(&self, tier: Tier) -> TierStats {
        let mut outcome_counts: BTreeMap<Outcome, u64> =
            Outcome::ALL.into_iter().map(|o| (o, 0)).collect();
        outcome_counts.extend(self.outcomes.iter().map(|(k, v)| (*k, *v)));
        let mut feature_counts: BTreeMap<UnsafeFeature, u64> =
            UnsafeFeature::ALL.into_iter().map(|f| (f, 0)).collect();
        feature_counts.extend(self.features.iter().map(|(k, v)| (*k, *v)));
        TierStats {
            tier,
            lib_count: self.dependents.len() as u64,
            dependents_max: self.dependents.iter().max().copied(),
            dependents_min: self.dependents.iter().min().copied(),
            pr_count: self.pr_count,
            update_related_pr_count: self.update_counts.iter().sum(),
            update_related_per_lib: per_lib_pr_stats(&self.update_counts).ok(),
            unsafe_lib_count: self.unsafe_counts.iter().filter(|&&c| c > 0).count() as u64,
            unsafe_pr_count: self.unsafe_counts.iter().sum(),
            unsafe_per_lib: per_lib_pr_stats(&self.unsafe_counts).ok(),
            outcome_counts,
            feature_counts,
            attention_split: self.attention.clone(),
        }
    }
}

/// Builds [`TierStats`] for Top, Middle and Bottom, in that order.
///
/// `tiers` and `reports` are parallel to `corpus.libraries`; each inner
/// report vector is parallel to that library's pulls.
pub fn tier_stats(
    corpus: &Corpus,
    tiers: &[Tier],
    reports: &[Vec<UnsafeReport>],
    classes: Option<&[Vec<ClassificationResult>]>,
) -> Result<Vec<TierStats>, StatsError> {
    let n = corpus.libraries.len();
    if tiers.len() != n || reports.len() != n || classes.is_some_and(|c| c.len() != n) {
        return Err(StatsError::ReportMismatch("<corpus>".into()));
    }
    let mut acc: BTreeMap<Tier, TierAccumulator> = BTreeMap::new();
    for (i, lib) in corpus.libraries.iter().enumerate() {
        if tiers[i] == Tier::Unsampled {
            continue;
        }
        acc.entry(tiers[i])
            .or_default()
            .add_library(lib, &reports[i], classes.map(|c| c[i].as_slice()))?;
    }
    Ok(Tier::SAMPLED
        .into_iter()
        .map(|t| acc.get(&t).cloned().unwrap_or_default().finish(t))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateRelatedRow {
    pub tier: Tier,
    pub dependents_max: Option<u64>,
    pub dependents_min: Option<u64>,
    pub pr_count: u64,
    pub update_related_pr_count: u64,
    pub per_lib: Option<PerLibStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrevalenceRow {
    pub tier: Tier,
    pub lib_count: u64,
    pub unsafe_lib_count: u64,
    pub unsafe_lib_percent: u64,
    pub unsafe_pr_count: u64,
    pub per_lib: Option<PerLibStats>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AcceptanceRow {
    pub tier: Tier,
    pub counts: BTreeMap<Outcome, u64>,
    pub percents: BTreeMap<Outcome, u64>,
    pub unsafe_pr_count: u64,
    pub update_related_pr_count: u64,
    pub unsafe_share_percent: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttentionRow {
    pub tier: Tier,
    pub merged_closed_total: u64,
    pub with: SplitCounts,
    pub without: SplitCounts,
}

impl From<&TierStats> for UpdateRelatedRow {
    fn from(s: &TierStats) -> Self {
        UpdateRelatedRow {
            tier: s.tier,
            dependents_max: s.dependents_max,
            dependents_min: s.dependents_min,
            pr_count: s.pr_count,
            update_related_pr_count: s.update_related_pr_count,
            per_lib: s.update_related_per_lib.clone(),
        }
    }
}

impl From<&TierStats> for PrevalenceRow {
    fn from(s: &TierStats) -> Self {
        PrevalenceRow {
            tier: s.tier,
            lib_count: s.lib_count,
            unsafe_lib_count: s.unsafe_lib_count,
            unsafe_lib_percent: s.unsafe_lib_percent(),
            unsafe_pr_count: s.unsafe_pr_count,
            per_lib: s.unsafe_per_lib.clone(),
        }
    }
}

impl From<&TierStats> for AcceptanceRow {
    fn from(s: &TierStats) -> Self {
        AcceptanceRow {
            tier: s.tier,
            counts: s.outcome_counts.clone(),
            percents: Outcome::ALL
                .into_iter()
                .map(|o| (o, s.outcome_percent(o)))
                .collect(),
            unsafe_pr_count: s.unsafe_pr_count,
            update_related_pr_count: s.update_related_pr_count,
            unsafe_share_percent: s.unsafe_share_percent(),
        }
    }
}

impl From<&TierStats> for AttentionRow {
    fn from(s: &TierStats) -> Self {
        AttentionRow {
            tier: s.tier,
            merged_closed_total: s.attention_split.merged_closed_total,
            with: s.attention_split.with.clone(),
            without: s.attention_split.without.clone(),
        }
    }
}

pub fn update_related_summary(
    corpus: &Corpus,
    tiers: &[Tier],
    reports: &[Vec<UnsafeReport>],
) -> Result<Vec<UpdateRelatedRow>, StatsError> {
    Ok(tier_stats(corpus, tiers, reports, None)?.iter().map(Into::into).collect())
}

/// Unsafe library share and unsafe-PR statistics per tier. The percentage
/// denominator is the number of sampled libraries in the tier.
pub fn prevalence_summary(
    corpus: &Corpus,
    tiers: &[Tier],
    reports: &[Vec<UnsafeReport>],
) -> Result<Vec<PrevalenceRow>, StatsError> {
    Ok(tier_stats(corpus, tiers, reports, None)?.iter().map(Into::into).collect())
}

/// Outcomes of unsafe PRs per tier. Percentages are rounded per cell and are
/// not forced to add up to 100.
pub fn acceptance_summary(
    corpus: &Corpus,
    tiers: &[Tier],
    reports: &[Vec<UnsafeReport>],
) -> Result<Vec<AcceptanceRow>, StatsError> {
    Ok(tier_stats(corpus, tiers, reports, None)?.iter().map(Into::into).collect())
}

/// Merged and closed unsafe PRs split by the attention flag, with per-type
/// counts on each side.
pub fn attention_breakdown(
    corpus: &Corpus,
    tiers: &[Tier],
    reports: &[Vec<UnsafeReport>],
    classes: &[Vec<ClassificationResult>],
) -> Result<Vec<AttentionRow>, StatsError> {
    Ok(tier_stats(corpus, tiers, reports, Some(classes))?
        .iter()
        .map(Into::into)
        .collect())
}

/// Number of PRs exhibiting each feature. A PR counts once per feature no
/// matter how many hits it has.
pub fn feature_frequency<'a>(
    reports: impl IntoIterator<Item = &'a UnsafeReport>,
) -> BTreeMap<UnsafeFeature, u64> {
    let mut out: BTreeMap<UnsafeFeature, u64> =
        UnsafeFeature::ALL.into_iter().map(|f| (f, 0)).collect();
    for r in reports {
        for f in &r.features_present {
            *out.entry(*f).or_default() += 1;
        }
    }
    out
}

/// Features ordered by descending frequency, ties in declaration order.
pub fn ranked_features(freq: &BTreeMap<UnsafeFeature, u64>) -> Vec<(UnsafeFeature, u64)> {
    let mut v: Vec<_> = freq.iter().map(|(&f, &c)| (f, c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v
}
