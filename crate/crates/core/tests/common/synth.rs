//! A synthetic corpus built to target per-tier counts: 500 libraries per
//! tier with given totals, zero counts, medians and standard deviations of
//! PRs per library, plus outcome and attention splits of the unsafe PRs.

use tailguard::diff::ExtensionPolicy;
use tailguard::{Corpus, FileChange, LibraryRecord, Outcome, PullRequest};

pub const LIBS_PER_TIER: usize = 500;

/// Target shape of a per-library count distribution.
#[derive(Clone, Copy, Debug)]
pub struct Shape {
    pub total: u64,
    pub zeros: usize,
    pub median: u64,
    /// Population SD, truncated to two decimals, times 100.
    pub sd_centi: Option<u64>,
}

#[derive(Clone, Copy, Debug)]
pub struct TierTarget {
    pub prefix: &'static str,
    pub dependents_max: u64,
    pub dependents_min: u64,
    pub pr_total: u64,
    pub update_related: Shape,
    pub unsafe_prs: Shape,
    pub merged: u64,
    pub closed: u64,
    pub opened: u64,
    pub attention: u64,
}

pub const TARGETS: [TierTarget; 3] = [
    TierTarget {
        prefix: "top",
        dependents_max: 850_362,
        dependents_min: 46_221,
        pr_total: 40_941,
        update_related: Shape { total: 29_283, zeros: 0, median: 10, sd_centi: Some(34_590) },
        unsafe_prs: Shape { total: 6_167, zeros: 95, median: 2, sd_centi: Some(5_649) },
        merged: 4_333,
        closed: 1_508,
        opened: 326,
        attention: 1_406,
    },
    TierTarget {
        prefix: "middle",
        dependents_max: 1_000,
        dependents_min: 572,
        pr_total: 39_341,
        update_related: Shape { total: 28_088, zeros: 0, median: 14, sd_centi: Some(11_686) },
        unsafe_prs: Shape { total: 5_212, zeros: 98, median: 3, sd_centi: Some(2_787) },
        merged: 3_704,
        closed: 1_242,
        opened: 266,
        attention: 1_136,
    },
    TierTarget {
        prefix: "bottom",
        dependents_max: 1,
        dependents_min: 1,
        pr_total: 8_134,
        update_related: Shape { total: 6_458, zeros: 0, median: 2, sd_centi: Some(7_170) },
        unsafe_prs: Shape { total: 1_086, zeros: 280, median: 0, sd_centi: Some(1_258) },
        merged: 863,
        closed: 173,
        opened: 50,
        attention: 149,
    },
];

fn sum_sq(v: &[u64]) -> u128 {
    v.iter().map(|&x| x as u128 * x as u128).sum()
}

/// Truncated population SD times 100, from exact integer sums.
pub fn sd_centi(v: &[u64]) -> u64 {
    let n = v.len() as f64;
    let s: u64 = v.iter().sum();
    let var = (sum_sq(v) as f64 - (s as f64) * (s as f64) / n) / n;
    (var.sqrt() * 100.0 + 1e-9).floor() as u64
}

/// Builds a count vector of length `n` with the given shape. With `floors`,
/// entry `i` is kept at or above `floors[i]` and the result keeps its index
/// order; without, the result is sorted ascending.
pub fn shape_counts(n: usize, shape: Shape, floors: Option<&[u64]>) -> Result<Vec<u64>, String> {
    let mid_lo = (n - 1) / 2;
    let mid_hi = n / 2;
    if shape.median == 0 && shape.zeros <= mid_hi {
        return Err("median 0 needs more than half zeros".into());
    }
    let mut v = vec![0u64; n];
    for x in v.iter_mut().skip(shape.zeros) {
        *x = 1;
    }
    if shape.median > 0 {
        v[mid_lo] = shape.median;
        v[mid_hi] = shape.median;
    }
    // Free block: everything above the median pair, or every nonzero entry
    // when the median is zero.
    let free_start = if shape.median == 0 { shape.zeros } else { mid_hi + 1 };
    let base = shape.median.max(1);
    let floor: Vec<u64> = (0..n)
        .map(|i| base.max(floors.map_or(0, |f| f[i])))
        .collect();
    if let Some(f) = floors {
        if let Some(i) = (0..free_start).find(|&i| v[i] < f[i]) {
            return Err(format!("entry {i} is fixed at {} below its floor {}", v[i], f[i]));
        }
    }
    let fixed: u64 = v[..free_start].iter().sum();
    let floor_sum: u64 = floor[free_start..].iter().sum();
    let rest = shape
        .total
        .checked_sub(fixed + floor_sum)
        .ok_or_else(|| format!("total {} too small for the floors", shape.total))?;
    let m = (n - free_start) as u64;
    for (k, i) in (free_start..n).enumerate() {
        v[i] = floor[i] + rest / m + u64::from((k as u64) >= m - rest % m);
    }
    if let Some(target) = shape.sd_centi {
        raise_spread(&mut v, free_start, &floor, target)?;
    }
    if floors.is_none() {
        v.sort_unstable();
    }
    Ok(v)
}

/// Moves units between free entries until the truncated SD reaches
/// `target`. Works on the exact integer window of admissible sums of squares.
fn raise_spread(v: &mut [u64], free_start: usize, floor: &[u64], target: u64) -> Result<(), String> {
    let n = v.len() as i128;
    let s: i128 = v.iter().map(|&x| x as i128).sum();
    // SD in [target, target + 1) hundredths, scaled to integers.
    let lo = (target as i128).pow(2) * n * n;
    let hi = (target as i128 + 1).pow(2) * n * n;
    let scaled = |sq: i128| 10_000 * (n * sq - s * s);
    let mut sq: i128 = v.iter().map(|&x| (x as i128).pow(2)).sum();
    loop {
        let f = scaled(sq);
        if f >= hi {
            return Err(format!("overshot SD target {target}"));
        }
        if f >= lo {
            return Ok(());
        }
        // Largest admissible gain in the sum of squares.
        let max_gain = (hi - 1 - f) / (10_000 * n);
        let mut order: Vec<usize> = (free_start..v.len()).collect();
        order.sort_by_key(|&i| v[i]);
        let mut best: Option<(usize, usize, u64, i128)> = None;
        'search: for &r in order.iter().rev() {
            for &d in &order {
                if d == r || v[d] <= floor[d] || v[d] > v[r] {
                    continue;
                }
                let delta = (v[r] - v[d]) as i128;
                let gain = |k: i128| 2 * k * delta + 2 * k * k;
                let mut k = (v[d] - floor[d]) as i128;
                while k > 0 && gain(k) > max_gain {
                    k /= 2;
                }
                if k > 0 {
                    best = Some((d, r, k as u64, gain(k)));
                    break 'search;
                }
            }
        }
        let Some((d, r, k, gain)) = best else {
            return Err(format!("cannot reach SD target {target}"));
        };
        v[d] -= k;
        v[r] += k;
        sq += gain;
    }
}

fn js_file(patch: &str) -> FileChange {
    FileChange::from_patch("lib/index.js", patch, ExtensionPolicy::JsOnly).expect("valid patch")
}

pub struct SynthTier {
    pub update_related: Vec<u64>,
    pub unsafe_prs: Vec<u64>,
    pub pr_counts: Vec<u64>,
}

pub fn tier_vectors(t: &TierTarget) -> Result<SynthTier, String> {
    let unsafe_prs = shape_counts(LIBS_PER_TIER, t.unsafe_prs, None)
        .map_err(|e| format!("{} unsafe: {e}", t.prefix))?;
    let update_related = shape_counts(LIBS_PER_TIER, t.update_related, Some(&unsafe_prs))
        .map_err(|e| format!("{} update-related: {e}", t.prefix))?;
    for (i, (u, r)) in unsafe_prs.iter().zip(&update_related).enumerate() {
        if u > r {
            return Err(format!("{} lib {i}: {u} unsafe > {r} update-related", t.prefix));
        }
    }
    let extra = t.pr_total - t.update_related.total;
    let pr_counts = update_related
        .iter()
        .enumerate()
        .map(|(i, r)| r + extra / LIBS_PER_TIER as u64 + u64::from((i as u64) < extra % LIBS_PER_TIER as u64))
        .collect();
    Ok(SynthTier {
        update_related,
        unsafe_prs,
        pr_counts,
    })
}

/// Builds the full synthetic corpus (1,500 libraries).
pub fn synthetic_corpus() -> Result<Corpus, String> {
    let unsafe_file = js_file("@@ -0,0 +1 @@\n+const loader = require('./loader');");
    let safe_file = js_file("@@ -1 +1 @@\n-let retries = 1;\n+let retries = 2;");
    let doc_file =
        FileChange::from_patch("README.md", "@@ -1 +1 @@\n-old\n+new", ExtensionPolicy::JsOnly).unwrap();
    let mut libraries = Vec::new();
    for t in &TARGETS {
        let v = tier_vectors(t)?;
        let mut unsafe_seq = 0u64;
        let mut merged_closed_seq = 0u64;
        for i in 0..LIBS_PER_TIER {
            // Library 0 holds the largest counts and the most dependents.
            let j = LIBS_PER_TIER - 1 - i;
            let span = t.dependents_max - t.dependents_min;
            let dependents = t.dependents_max - span * i as u64 / (LIBS_PER_TIER as u64 - 1);
            let mut lib = LibraryRecord::new(format!("{}-{i:03}", t.prefix), dependents);
            let (n_unsafe, n_related, n_all) = (v.unsafe_prs[j], v.update_related[j], v.pr_counts[j]);
            for k in 0..n_all {
                let id = format!("{}", k + 1);
                let pr = if k < n_unsafe {
                    let outcome = if unsafe_seq < t.merged {
                        Outcome::Merged
                    } else if unsafe_seq < t.merged + t.closed {
                        Outcome::Closed
                    } else {
                        Outcome::Opened
                    };
                    unsafe_seq += 1;
                    let mut title = "Add plugin loader".to_string();
                    if outcome != Outcome::Opened {
                        if merged_closed_seq < t.attention {
                            title = "Breaking: add plugin loader".into();
                        }
                        merged_closed_seq += 1;
                    }
                    PullRequest::new(id, &lib.name, outcome)
                        .with_title(title)
                        .with_file(unsafe_file.clone())
                } else if k < n_related {
                    PullRequest::new(id, &lib.name, Outcome::Merged)
                        .with_title("Tune retries")
                        .with_file(safe_file.clone())
                } else {
                    PullRequest::new(id, &lib.name, Outcome::Merged)
                        .with_title("Update docs")
                        .with_file(doc_file.clone())
                };
                lib.pulls.push(pr);
            }
            libraries.push(lib);
        }
        assert_eq!(unsafe_seq, t.merged + t.closed + t.opened, "{} outcomes", t.prefix);
    }
    Ok(Corpus {
        libraries,
        snapshot_at: None,
    })
}
