//! Report assembly and rendering (JSON, long-format CSV, Markdown, SVG).
//!
//! Percentages are derived from counts while rendering. The JSON layout is
//! versioned by [`REPORT_SCHEMA_VERSION`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classifier::{classify, ClassificationResult, KeywordTaxonomy};
use crate::detector::{scan_pull_request, ScanOptions, UnsafeReport, RULE_CATALOG_VERSION};
use crate::model::{ChangeType, Corpus, Outcome, Tier, UnsafeFeature};
use crate::stats::{
    feature_frequency, ranked_features, tier_stats, AcceptanceRow, AttentionRow, PerLibStats,
    PrevalenceRow, SdKind, SplitCounts, StatsError, TierStats, UpdateRelatedRow,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unknown report format `{0}` (expected json, csv or md)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
    Md,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            "md" | "markdown" => Ok(Format::Md),
            _ => Err(ReportError::UnknownFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportMetadata {
    pub tool_version: String,
    pub rule_catalog_version: String,
    pub taxonomy_hash: String,
    pub snapshot_at: Option<DateTime<Utc>>,
    pub sd_kind: SdKind,
}

impl ReportMetadata {
    pub fn new(taxonomy: &KeywordTaxonomy, snapshot_at: Option<DateTime<Utc>>) -> Self {
        ReportMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rule_catalog_version: RULE_CATALOG_VERSION.to_string(),
            taxonomy_hash: taxonomy.hash(),
            snapshot_at,
            sd_kind: SdKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub table1: Vec<UpdateRelatedRow>,
    pub table2: Vec<PrevalenceRow>,
    pub table3: Vec<AcceptanceRow>,
    pub table4: Vec<AttentionRow>,
    pub fig1: BTreeMap<UnsafeFeature, u64>,
    pub metadata: ReportMetadata,
}

impl ReportBundle {
    /// A bundle with no tier rows and all-zero feature counts.
    pub fn empty(metadata: ReportMetadata) -> Self {
        ReportBundle {
            table1: Vec::new(),
            table2: Vec::new(),
            table3: Vec::new(),
            table4: Vec::new(),
            fig1: feature_frequency(std::iter::empty()),
            metadata,
        }
    }

    pub fn from_stats(
        stats: &[TierStats],
        fig1: BTreeMap<UnsafeFeature, u64>,
        metadata: ReportMetadata,
    ) -> Self {
        ReportBundle {
            table1: stats.iter().map(Into::into).collect(),
            table2: stats.iter().map(Into::into).collect(),
            table3: stats.iter().map(Into::into).collect(),
            table4: stats.iter().map(Into::into).collect(),
            fig1,
            metadata,
        }
    }
}

/// Everything the scan stage produced for one corpus.
#[derive(Debug, Clone)]
pub struct ScanOutput {
    pub reports: Vec<Vec<UnsafeReport>>,
    pub classes: Vec<Vec<ClassificationResult>>,
    pub stats: Vec<TierStats>,
    pub bundle: ReportBundle,
}

/// Scans and classifies every PR, then aggregates the sampled tiers.
/// `tiers` is parallel to `corpus.libraries`.
pub fn run_scan(
    corpus: &Corpus,
    tiers: &[Tier],
    scan: &ScanOptions,
    taxonomy: &KeywordTaxonomy,
) -> Result<ScanOutput, StatsError> {
    let reports: Vec<Vec<UnsafeReport>> = corpus
        .libraries
        .iter()
        .map(|l| l.pulls.iter().map(|p| scan_pull_request(p, scan)).collect())
        .collect();
    let classes: Vec<Vec<ClassificationResult>> = corpus
        .libraries
        .iter()
        .map(|l| l.pulls.iter().map(|p| classify(p, taxonomy)).collect())
        .collect();
    let stats = tier_stats(corpus, tiers, &reports, Some(&classes))?;
    let sampled = reports
        .iter()
        .zip(tiers)
        .filter(|(_, t)| **t != Tier::Unsampled)
        .flat_map(|(r, _)| r.iter());
    let fig1 = feature_frequency(sampled);
    let bundle = ReportBundle::from_stats(&stats, fig1, ReportMetadata::new(taxonomy, corpus.snapshot_at));
    Ok(ScanOutput {
        reports,
        classes,
        stats,
        bundle,
    })
}

pub fn emit_report(bundle: &ReportBundle, format: Format) -> String {
    match format {
        Format::Json => render_json(bundle),
        Format::Csv => render_csv(bundle),
        Format::Md => render_md(bundle),
    }
}

/// `1234567` becomes `1,234,567`.
pub fn group_thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn tier_label(t: Tier) -> &'static str {
    match t {
        Tier::Top => "Top",
        Tier::Middle => "Middle",
        Tier::Bottom => "Bottom",
        Tier::Unsampled => "Unsampled",
    }
}

fn outcome_label(o: Outcome) -> &'static str {
    match o {
        Outcome::Merged => "merged PRs",
        Outcome::Closed => "closed PRs",
        Outcome::Opened => "opened PRs",
    }
}

/// Display strings for mean, median and SD; `-` when the tier is empty.
fn spread(stats: &Option<PerLibStats>, kind: SdKind) -> [String; 3] {
    match stats {
        Some(s) => [s.mean_display(), s.median_display(), s.sd_display(kind)],
        None => ["-".into(), "-".into(), "-".into()],
    }
}

fn opt_count(v: Option<u64>) -> String {
    v.map(group_thousands).unwrap_or_else(|| "-".into())
}

fn opt_raw(v: Option<u64>) -> String {
    v.map(|n| n.to_string()).unwrap_or_default()
}

// JSON

fn decimal(s: &str) -> Value {
    s.parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

fn spread_json(stats: &Option<PerLibStats>, kind: SdKind) -> Value {
    match stats {
        Some(s) => json!({
            "libs": s.libs,
            "total": s.total,
            "mean": decimal(&s.mean_display()),
            "median": decimal(&s.median_display()),
            "sd": decimal(&s.sd_display(kind)),
        }),
        None => Value::Null,
    }
}

fn split_json(s: &SplitCounts) -> Value {
    json!({
        "pr_count": s.pr_count,
        "types": s.ranked().iter().map(|(t, n)| json!({"type": t.key(), "count": n})).collect::<Vec<_>>(),
    })
}

fn render_json(b: &ReportBundle) -> String {
    let kind = b.metadata.sd_kind;
    let table1: Vec<Value> = b
        .table1
        .iter()
        .map(|r| {
            json!({
                "tier": r.tier.as_str(),
                "dependents_max": r.dependents_max,
                "dependents_min": r.dependents_min,
                "pr_count": r.pr_count,
                "update_related_pr_count": r.update_related_pr_count,
                "per_lib": spread_json(&r.per_lib, kind),
            })
        })
        .collect();
    let table2: Vec<Value> = b
        .table2
        .iter()
        .map(|r| {
            json!({
                "tier": r.tier.as_str(),
                "lib_count": r.lib_count,
                "unsafe_lib_count": r.unsafe_lib_count,
                "unsafe_lib_percent": r.unsafe_lib_percent,
                "unsafe_pr_count": r.unsafe_pr_count,
                "per_lib": spread_json(&r.per_lib, kind),
            })
        })
        .collect();
    let table3: Vec<Value> = b
        .table3
        .iter()
        .map(|r| {
            let outcomes: serde_json::Map<String, Value> = Outcome::ALL
                .iter()
                .map(|o| {
                    (
                        o.as_str().to_string(),
                        json!({"count": r.counts.get(o).copied().unwrap_or(0), "percent": r.percents[o]}),
                    )
                })
                .collect();
            json!({
                "tier": r.tier.as_str(),
                "outcomes": outcomes,
                "unsafe_pr_count": r.unsafe_pr_count,
                "update_related_pr_count": r.update_related_pr_count,
                "unsafe_share_percent": r.unsafe_share_percent,
            })
        })
        .collect();
    let table4: Vec<Value> = b
        .table4
        .iter()
        .map(|r| {
            json!({
                "tier": r.tier.as_str(),
                "merged_closed_total": r.merged_closed_total,
                "with_attention": split_json(&r.with),
                "without_attention": split_json(&r.without),
            })
        })
        .collect();
    let fig1: Vec<Value> = ranked_features(&b.fig1)
        .iter()
        .map(|(f, n)| json!({"feature": f.as_str(), "pr_count": n}))
        .collect();
    let m = &b.metadata;
    let doc = json!({
        "report_schema_version": REPORT_SCHEMA_VERSION,
        "metadata": {
            "tool_version": m.tool_version,
            "rule_catalog_version": m.rule_catalog_version,
            "taxonomy_hash": m.taxonomy_hash,
            "snapshot_at": m.snapshot_at.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true)),
            "sd_kind": match kind { SdKind::Population => "population", SdKind::Sample => "sample" },
        },
        "table1": table1,
        "table2": table2,
        "table3": table3,
        "table4": table4,
        "fig1": fig1,
    });
    let mut s = serde_json::to_string_pretty(&doc).expect("report serializes");
    s.push('\n');
    s
}

// CSV

/// Long-format rows: `(table, tier, metric, value)`.
pub fn report_rows(b: &ReportBundle) -> Vec<[String; 4]> {
    let kind = b.metadata.sd_kind;
    let mut rows: Vec<[String; 4]> = Vec::new();
    let mut push = |table: &str, tier: &str, metric: String, value: String| {
        rows.push([table.to_string(), tier.to_string(), metric, value]);
    };
    let m = &b.metadata;
    push("metadata", "", "report_schema_version".into(), REPORT_SCHEMA_VERSION.to_string());
    push("metadata", "", "tool_version".into(), m.tool_version.clone());
    push("metadata", "", "rule_catalog_version".into(), m.rule_catalog_version.clone());
    push("metadata", "", "taxonomy_hash".into(), m.taxonomy_hash.clone());
    push(
        "metadata",
        "",
        "snapshot_at".into(),
        m.snapshot_at
            .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
            .unwrap_or_default(),
    );
    for r in &b.table1 {
        let t = r.tier.as_str();
        let [mean, median, sd] = spread(&r.per_lib, kind);
        push("table1", t, "dependents_max".into(), opt_raw(r.dependents_max));
        push("table1", t, "dependents_min".into(), opt_raw(r.dependents_min));
        push("table1", t, "pr_count".into(), r.pr_count.to_string());
        push("table1", t, "update_related_pr_count".into(), r.update_related_pr_count.to_string());
        push("table1", t, "mean".into(), mean);
        push("table1", t, "median".into(), median);
        push("table1", t, "sd".into(), sd);
    }
    for r in &b.table2 {
        let t = r.tier.as_str();
        let [mean, median, sd] = spread(&r.per_lib, kind);
        push("table2", t, "lib_count".into(), r.lib_count.to_string());
        push("table2", t, "unsafe_lib_count".into(), r.unsafe_lib_count.to_string());
        push("table2", t, "unsafe_lib_percent".into(), r.unsafe_lib_percent.to_string());
        push("table2", t, "unsafe_pr_count".into(), r.unsafe_pr_count.to_string());
        push("table2", t, "mean".into(), mean);
        push("table2", t, "median".into(), median);
        push("table2", t, "sd".into(), sd);
    }
    for r in &b.table3 {
        let t = r.tier.as_str();
        for o in Outcome::ALL {
            let c = r.counts.get(&o).copied().unwrap_or(0);
            push("table3", t, format!("{}_count", o.as_str()), c.to_string());
            push("table3", t, format!("{}_percent", o.as_str()), r.percents[&o].to_string());
        }
        push("table3", t, "unsafe_pr_count".into(), r.unsafe_pr_count.to_string());
        push("table3", t, "update_related_pr_count".into(), r.update_related_pr_count.to_string());
        push("table3", t, "unsafe_share_percent".into(), r.unsafe_share_percent.to_string());
    }
    for r in &b.table4 {
        let t = r.tier.as_str();
        push("table4", t, "merged_closed_total".into(), r.merged_closed_total.to_string());
        for (side, split) in [("with_attention", &r.with), ("without_attention", &r.without)] {
            push("table4", t, format!("{side}_pr_count"), split.pr_count.to_string());
            for ty in ChangeType::ALL {
                let n = split.type_counts.get(&ty).copied().unwrap_or(0);
                push("table4", t, format!("{side}_{}", ty.key()), n.to_string());
            }
        }
    }
    for (f, n) in ranked_features(&b.fig1) {
        push("fig1", "", f.as_str().to_string(), n.to_string());
    }
    rows
}

fn render_csv(b: &ReportBundle) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["table", "tier", "metric", "value"])
        .expect("write to memory");
    for row in report_rows(b) {
        w.write_record(&row).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
}

// Markdown

fn md_table(out: &mut String, title: &str, header: &[&str], align: &[bool], rows: &[Vec<String>]) {
    let _ = writeln!(out, "### {title}\n");
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let seps: Vec<&str> = align.iter().map(|r| if *r { "---:" } else { "---" }).collect();
    let _ = writeln!(out, "| {} |", seps.join(" | "));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

fn types_cell(s: &SplitCounts) -> String {
    s.ranked()
        .iter()
        .filter(|(_, n)| *n > 0)
        .map(|(t, n)| format!("{} ({})", t.label(), group_thousands(*n)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_md(b: &ReportBundle) -> String {
    let kind = b.metadata.sd_kind;
    let mut out = String::new();
    let m = &b.metadata;
    let _ = writeln!(out, "# Unsafe dependency update report\n");
    let _ = writeln!(out, "- report schema: {REPORT_SCHEMA_VERSION}");
    let _ = writeln!(out, "- tool version: {}", m.tool_version);
    let _ = writeln!(out, "- rule catalog: {}", m.rule_catalog_version);
    let _ = writeln!(out, "- taxonomy: {}", m.taxonomy_hash);
    let snap = m
        .snapshot_at
        .map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| "-".into());
    let _ = writeln!(out, "- snapshot: {snap}\n");

    let rows: Vec<Vec<String>> = b
        .table1
        .iter()
        .map(|r| {
            let [mean, median, sd] = spread(&r.per_lib, kind);
            vec![
                tier_label(r.tier).into(),
                opt_count(r.dependents_max),
                opt_count(r.dependents_min),
                group_thousands(r.pr_count),
                group_thousands(r.update_related_pr_count),
                mean,
                median,
                sd,
            ]
        })
        .collect();
    md_table(
        &mut out,
        "Update-related pull requests",
        &["Tier", "Dependents max", "Dependents min", "# PRs", "# update-related PRs", "Mean", "Median", "SD"],
        &[false, true, true, true, true, true, true, true],
        &rows,
    );

    let mut rows: Vec<Vec<String>> = b
        .table2
        .iter()
        .map(|r| {
            let [mean, median, sd] = spread(&r.per_lib, kind);
            vec![
                tier_label(r.tier).into(),
                format!("{} ({}%)", group_thousands(r.unsafe_lib_count), r.unsafe_lib_percent),
                group_thousands(r.unsafe_pr_count),
                mean,
                median,
                sd,
            ]
        })
        .collect();
    if !b.table2.is_empty() {
        let libs: u64 = b.table2.iter().map(|r| r.unsafe_lib_count).sum();
        let prs: u64 = b.table2.iter().map(|r| r.unsafe_pr_count).sum();
        rows.push(vec![
            "**Total**".into(),
            format!("**{}**", group_thousands(libs)),
            format!("**{}**", group_thousands(prs)),
            String::new(),
            String::new(),
            String::new(),
        ]);
    }
    md_table(
        &mut out,
        "Unsafe dependency updates per tier",
        &["Tier", "# unsafe lib", "# unsafe PRs", "Mean", "Median", "SD"],
        &[false, true, true, true, true, true],
        &rows,
    );

    let mut rows = Vec::new();
    for r in &b.table3 {
        for (i, o) in Outcome::ALL.into_iter().enumerate() {
            let c = r.counts.get(&o).copied().unwrap_or(0);
            rows.push(vec![
                if i == 0 { tier_label(r.tier).into() } else { String::new() },
                outcome_label(o).into(),
                group_thousands(c),
                format!("{}%", r.percents[&o]),
            ]);
        }
        rows.push(vec![
            String::new(),
            "**Total**".into(),
            format!(
                "**{}** ({}% of update-related PRs)",
                group_thousands(r.unsafe_pr_count),
                r.unsafe_share_percent
            ),
            String::new(),
        ]);
    }
    md_table(
        &mut out,
        "Unsafe dependency update outcomes per tier",
        &["Tier", "Outcome", "# unsafe PRs", "%"],
        &[false, false, true, true],
        &rows,
    );

    let mut rows: Vec<Vec<String>> = b
        .table4
        .iter()
        .map(|r| {
            vec![
                tier_label(r.tier).into(),
                group_thousands(r.merged_closed_total),
                group_thousands(r.with.pr_count),
                types_cell(&r.with),
                group_thousands(r.without.pr_count),
                types_cell(&r.without),
            ]
        })
        .collect();
    if !b.table4.is_empty() {
        let total = |f: fn(&AttentionRow) -> u64| group_thousands(b.table4.iter().map(f).sum());
        rows.push(vec![
            "**Total**".into(),
            format!("**{}**", total(|r| r.merged_closed_total)),
            format!("**{}**", total(|r| r.with.pr_count)),
            String::new(),
            format!("**{}**", total(|r| r.without.pr_count)),
            String::new(),
        ]);
    }
    md_table(
        &mut out,
        "Change types of unsafe PRs by attention keywords",
        &[
            "Tier",
            "# merged & closed PRs",
            "# PRs (attention)",
            "PR types (attention)",
            "# PRs (no attention)",
            "PR types (no attention)",
        ],
        &[false, true, true, false, true, false],
        &rows,
    );

    let rows: Vec<Vec<String>> = ranked_features(&b.fig1)
        .iter()
        .map(|(f, n)| vec![f.label().to_string(), group_thousands(*n)])
        .collect();
    md_table(&mut out, "Feature frequency", &["Feature", "# PRs"], &[false, true], &rows);
    out.truncate(out.trim_end().len());
    out.push('\n');
    out
}

// SVG

/// Horizontal bar chart of feature frequency, most frequent on top.
pub fn render_fig1_svg(fig1: &BTreeMap<UnsafeFeature, u64>) -> String {
    const BAR_MAX: f64 = 360.0;
    const ROW: u32 = 28;
    const LEFT: u32 = 110;
    let ranked = ranked_features(fig1);
    let max = ranked.iter().map(|(_, n)| *n).max().unwrap_or(0).max(1);
    let height = ROW * ranked.len() as u32 + 20;
    let width = LEFT + BAR_MAX as u32 + 90;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="13">"#
    );
    for (i, (f, n)) in ranked.iter().enumerate() {
        let y = 10 + ROW * i as u32;
        let w = (*n as f64 / max as f64 * BAR_MAX).round() as u32;
        let _ = writeln!(
            out,
            r#"  <text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 8,
            y + 15,
            f.label()
        );
        let _ = writeln!(
            out,
            r##"  <rect x="{LEFT}" y="{y}" width="{w}" height="20" fill="#4a78a8"/>"##
        );
        let _ = writeln!(
            out,
            r#"  <text x="{}" y="{}">{}</text>"#,
            LEFT + w + 6,
            y + 15,
            group_thousands(*n)
        );
    }
    out.push_str("</svg>\n");
    out
}
