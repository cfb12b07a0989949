//! Alignment metrics between judge scores and human ratings.
//!
//! Rank correlations (Spearman's rho via mid-ranks, Kendall's tau-b with tie
//! correction, Pearson's r), Krippendorff's alpha for inter-rater
//! reliability (interval and ordinal levels, missing ratings allowed),
//! longest-common-subsequence lexical overlap, affine score normalization,
//! and the per-dimension alignment report.
//!
//! A correlation that is mathematically undefined (constant input, every
//! pair tied) is reported as undefined — never coerced to zero, which would
//! fabricate "no correlation" out of "no information".

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::debate::ScoreScale;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("need at least {needed} paired items, got {got}")]
    TooFewItems { needed: usize, got: usize },
    #[error("input lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn check_paired(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(MetricError::TooFewItems {
            needed: 3,
            got: x.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(MetricError::InvalidInput("non-finite value".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_paired(x, y)?;
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut covariance = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        let dx = xi - mean_x;
        let dy = yi - mean_y;
        covariance += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(MetricError::UndefinedCorrelation(
            "an input vector is constant (zero variance)".into(),
        ));
    }
    Ok((covariance / (var_x * var_y).sqrt()).clamp(-1.0, 1.0))
}

/// Mid-ranks (1-based); tied values share the average of the ranks they span.
pub fn mid_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share the mean of ranks i+1..=j+1
        let shared = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: mid-ranks, then Pearson on the ranks.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_paired(x, y)?;
    pearson_r(&mid_ranks(x), &mid_ranks(y))
}

/// Kendall's tau-b with tie correction, by exhaustive pair enumeration.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_paired(x, y)?;
    let n = x.len();
    let mut concordant = 0u64;
    let mut discordant = 0u64;
    let mut tied_x_only = 0u64;
    let mut tied_y_only = 0u64;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = x[i].partial_cmp(&x[j]).expect("finite values");
            let dy = y[i].partial_cmp(&y[j]).expect("finite values");
            use std::cmp::Ordering::Equal;
            match (dx == Equal, dy == Equal) {
                (true, true) => {}
                (true, false) => tied_x_only += 1,
                (false, true) => tied_y_only += 1,
                (false, false) => {
                    if dx == dy {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
            }
        }
    }
    let comparable_x = (concordant + discordant + tied_y_only) as f64;
    let comparable_y = (concordant + discordant + tied_x_only) as f64;
    let denominator = (comparable_x * comparable_y).sqrt();
    if denominator == 0.0 {
        return Err(MetricError::UndefinedCorrelation(
            "every pair is tied in one of the inputs".into(),
        ));
    }
    Ok(((concordant as f64 - discordant as f64) / denominator).clamp(-1.0, 1.0))
}

/// Distance metric level for Krippendorff's alpha.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaLevel {
    Interval,
    Ordinal,
}

/// Krippendorff's alpha over a raters-by-items matrix with missing ratings.
///
/// Alpha is `1 - D_o / D_e` with the observed disagreement taken over
/// within-item rating pairs and the expected disagreement over the pooled
/// value margins. Items with fewer than two ratings are excluded (their
/// single values are not pairable). When the expected disagreement is zero —
/// every pairable rating is identical — agreement is perfect and alpha is
/// 1.0 by convention.
pub fn krippendorff_alpha(
    ratings: &[Vec<Option<f64>>],
    level: AlphaLevel,
) -> Result<f64, MetricError> {
    if ratings.len() < 2 {
        return Err(MetricError::InvalidInput(
            "alpha needs at least two raters".into(),
        ));
    }
    let n_items = ratings[0].len();
    if ratings.iter().any(|row| row.len() != n_items) {
        return Err(MetricError::InvalidInput(
            "rater rows have different item counts".into(),
        ));
    }
    if ratings
        .iter()
        .flatten()
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(MetricError::InvalidInput("non-finite rating".into()));
    }

    // Pairable units: items rated by at least two raters.
    let mut units: Vec<Vec<f64>> = Vec::new();
    for item in 0..n_items {
        let unit: Vec<f64> = ratings.iter().filter_map(|row| row[item]).collect();
        if unit.len() >= 2 {
            units.push(unit);
        }
    }
    if units.is_empty() {
        return Err(MetricError::InvalidInput(
            "no item has two or more ratings".into(),
        ));
    }

    // Margins over pairable values.
    let mut distinct: Vec<f64> = units.iter().flatten().copied().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    let index_of = |v: f64| distinct.iter().position(|&d| d == v).expect("present");
    let mut margins = vec![0.0f64; distinct.len()];
    for unit in &units {
        for &v in unit {
            margins[index_of(v)] += 1.0;
        }
    }
    let n: f64 = margins.iter().sum();

    // Squared distance between two distinct-value indices.
    let delta_sq = |a: usize, b: usize| -> f64 {
        match level {
            AlphaLevel::Interval => {
                let d = distinct[a] - distinct[b];
                d * d
            }
            AlphaLevel::Ordinal => {
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                let between: f64 = margins[lo..=hi].iter().sum();
                let d = between - (margins[lo] + margins[hi]) / 2.0;
                d * d
            }
        }
    };

    // Observed disagreement over ordered within-unit pairs.
    let mut observed = 0.0;
    for unit in &units {
        let m = unit.len() as f64;
        let mut unit_sum = 0.0;
        for (i, &a) in unit.iter().enumerate() {
            for (j, &b) in unit.iter().enumerate() {
                if i != j {
                    unit_sum += delta_sq(index_of(a), index_of(b));
                }
            }
        }
        observed += unit_sum / (m - 1.0);
    }
    let d_o = observed / n;

    // Expected disagreement over ordered margin pairs.
    let mut expected = 0.0;
    for a in 0..distinct.len() {
        for b in 0..distinct.len() {
            if a != b {
                expected += margins[a] * margins[b] * delta_sq(a, b);
            }
        }
    }
    let d_e = expected / (n * (n - 1.0));

    if d_e == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 - d_o / d_e)
}

/// Lowercased alphanumeric-run tokens.
fn lexical_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Longest-common-subsequence F1 between a candidate and a reference text.
pub fn rouge_l_f1(candidate: &str, reference: &str) -> Result<f64, MetricError> {
    let cand = lexical_tokens(candidate);
    let refr = lexical_tokens(reference);
    if cand.is_empty() || refr.is_empty() {
        return Err(MetricError::InvalidInput(
            "a text has no alphanumeric tokens".into(),
        ));
    }
    // LCS length by dynamic programming over a rolling row.
    let mut previous = vec![0usize; refr.len() + 1];
    let mut current = vec![0usize; refr.len() + 1];
    for c in &cand {
        for (j, r) in refr.iter().enumerate() {
            current[j + 1] = if c == r {
                previous[j] + 1
            } else {
                previous[j + 1].max(current[j])
            };
        }
        std::mem::swap(&mut previous, &mut current);
    }
    let lcs = previous[refr.len()] as f64;
    if lcs == 0.0 {
        return Ok(0.0);
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / refr.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Named vector of per-item scores.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatingVector {
    pub dimension: String,
    pub item_ids: Vec<String>,
    pub values: Vec<f64>,
}

impl RatingVector {
    pub fn new(
        dimension: impl Into<String>,
        pairs: impl IntoIterator<Item = (String, f64)>,
    ) -> Result<Self, MetricError> {
        let mut item_ids = Vec::new();
        let mut values = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (id, value) in pairs {
            if !value.is_finite() {
                return Err(MetricError::InvalidInput(format!(
                    "non-finite value for item {id:?}"
                )));
            }
            if !seen.insert(id.clone()) {
                return Err(MetricError::InvalidInput(format!(
                    "duplicate item id {id:?}"
                )));
            }
            item_ids.push(id);
            values.push(value);
        }
        Ok(RatingVector {
            dimension: dimension.into(),
            item_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn as_map(&self) -> BTreeMap<&str, f64> {
        self.item_ids
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().copied())
            .collect()
    }
}

/// Affine rescaling of scores onto [0, 1]: `(v - min) / (max - min)`.
/// A value outside the scale is an error, not a silent clamp.
pub fn normalize_scores(vector: &RatingVector, scale: &ScoreScale) -> Result<RatingVector, MetricError> {
    let values = vector
        .values
        .iter()
        .zip(&vector.item_ids)
        .map(|(&v, id)| {
            if !scale.contains(v) {
                Err(MetricError::InvalidInput(format!(
                    "score {v} for item {id:?} outside scale [{}, {}]",
                    scale.min, scale.max
                )))
            } else {
                Ok(scale.normalized(v))
            }
        })
        .collect::<Result<Vec<f64>, MetricError>>()?;
    Ok(RatingVector {
        dimension: vector.dimension.clone(),
        item_ids: vector.item_ids.clone(),
        values,
    })
}

/// Alignment of one judge against one human dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionAlignment {
    /// Overlapping items the coefficients were computed on.
    pub n_items: usize,
    /// Items present on only one side, dropped pairwise.
    pub dropped_items: usize,
    /// `None` means the coefficient is undefined on this data.
    pub spearman_rho: Option<f64>,
    pub kendall_tau: Option<f64>,
    pub pearson_r: Option<f64>,
}

/// Alignment of one judge against every human dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub judge_id: String,
    /// Items the judge scored.
    pub n_items: usize,
    pub dimensions: BTreeMap<String, DimensionAlignment>,
    /// Dimensions skipped for having fewer than three overlapping items,
    /// with the overlap they did have.
    pub skipped_dimensions: BTreeMap<String, usize>,
    /// Inter-rater reliability of the judge's internal raters, when the
    /// judge has more than one (for example one score per stakeholder group).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub krippendorff_alpha: Option<f64>,
}

/// Name used for the synthesized all-dimensions-mean column.
pub const OVERALL_DIMENSION: &str = "overall";

fn is_overall_name(name: &str) -> bool {
    let lowered = name.to_lowercase();
    lowered == "overall" || lowered == "overall quality"
}

/// Correlates a judge's per-item scores against each human dimension.
///
/// Items missing from either side are dropped pairwise (counted per
/// dimension); a dimension with fewer than three overlapping items is
/// skipped with a warning. When the human ratings have several dimensions
/// and none is already an overall column, a synthesized `overall` dimension
/// (per-item mean of the available dimensions) is reported as well.
pub fn build_alignment_report(
    judge_id: &str,
    judge: &RatingVector,
    human_dimensions: &[RatingVector],
    krippendorff_alpha: Option<f64>,
) -> AlignmentReport {
    let mut report = AlignmentReport {
        judge_id: judge_id.to_string(),
        n_items: judge.len(),
        dimensions: BTreeMap::new(),
        skipped_dimensions: BTreeMap::new(),
        krippendorff_alpha,
    };

    let mut dimensions: Vec<RatingVector> = human_dimensions.to_vec();
    let has_overall = dimensions.iter().any(|d| is_overall_name(&d.dimension));
    if dimensions.len() > 1 && !has_overall {
        // Per-item mean over whichever dimensions rated the item.
        let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for dim in &dimensions {
            for (id, v) in dim.item_ids.iter().zip(&dim.values) {
                let slot = sums.entry(id.clone()).or_insert((0.0, 0));
                slot.0 += v;
                slot.1 += 1;
            }
        }
        let pairs = sums
            .into_iter()
            .map(|(id, (sum, count))| (id, sum / count as f64));
        if let Ok(overall) = RatingVector::new(OVERALL_DIMENSION, pairs) {
            dimensions.push(overall);
        }
    }

    let judge_map = judge.as_map();
    for dim in &dimensions {
        let dim_map = dim.as_map();
        let mut overlap_ids: Vec<&str> = judge_map
            .keys()
            .filter(|id| dim_map.contains_key(**id))
            .copied()
            .collect();
        overlap_ids.sort_unstable();
        let dropped =
            (judge_map.len() - overlap_ids.len()) + (dim_map.len() - overlap_ids.len());
        if dropped > 0 {
            log::warn!(
                "dimension {:?}: dropped {dropped} unpaired item(s)",
                dim.dimension
            );
        }
        if overlap_ids.len() < 3 {
            log::warn!(
                "dimension {:?}: skipped, only {} overlapping item(s)",
                dim.dimension,
                overlap_ids.len()
            );
            report
                .skipped_dimensions
                .insert(dim.dimension.clone(), overlap_ids.len());
            continue;
        }
        let judge_values: Vec<f64> = overlap_ids.iter().map(|id| judge_map[id]).collect();
        let human_values: Vec<f64> = overlap_ids.iter().map(|id| dim_map[id]).collect();
        let as_option = |r: Result<f64, MetricError>, name: &str| match r {
            Ok(v) => Some(v),
            Err(MetricError::UndefinedCorrelation(reason)) => {
                log::warn!("dimension {:?}: {name} undefined: {reason}", dim.dimension);
                None
            }
            Err(other) => {
                log::warn!("dimension {:?}: {name} failed: {other}", dim.dimension);
                None
            }
        };
        report.dimensions.insert(
            dim.dimension.clone(),
            DimensionAlignment {
                n_items: overlap_ids.len(),
                dropped_items: dropped,
                spearman_rho: as_option(spearman_rho(&judge_values, &human_values), "spearman"),
                kendall_tau: as_option(kendall_tau(&judge_values, &human_values), "kendall"),
                pearson_r: as_option(pearson_r(&judge_values, &human_values), "pearson"),
            },
        );
    }
    report
}
