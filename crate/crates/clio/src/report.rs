//! Accuracy accounting. Percentages are exact decimals rounded half away
//! from zero to 2 places, which is round-half-up for the non-negative
//! values reported here.

use std::collections::BTreeMap;

use clio_core::{RunConfig, RunMode, SCHEMA_VERSION};
use rust_decimal::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::bench::BenchmarkRecord;
use crate::BenchError;

fn round2(d: Decimal) -> Decimal {
    d.round_dp_with_strategy(2, RoundingStrategy::MidpointAwayFromZero)
}

fn pct(d: Decimal) -> String {
    format!("{:.2}%", round2(d))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    /// `"34/152"`
    pub fraction: String,
    /// `"22.37%"`
    pub percent: String,
}

impl Accuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        Self {
            correct,
            total,
            fraction: format!("{correct}/{total}"),
            percent: pct(Self::exact(correct, total)),
        }
    }

    /// Unrounded percentage; zero for an empty denominator.
    pub fn exact(correct: usize, total: usize) -> Decimal {
        if total == 0 {
            return Decimal::ZERO;
        }
        Decimal::from(correct) * Decimal::ONE_HUNDRED / Decimal::from(total)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub category: String,
    #[serde(flatten)]
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAccuracy {
    pub run: usize,
    #[serde(flatten)]
    pub accuracy: Accuracy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub schema_version: u32,
    /// Sorted by category name. Counts are over every (question, run) pair.
    pub categories: Vec<CategoryRow>,
    pub total: Accuracy,
    pub per_run: Vec<RunAccuracy>,
    /// Mean of the per-run percentages.
    pub mean_percent: String,
    /// Sample standard deviation of the per-run percentages; absent for one run.
    pub sd_percent: Option<String>,
}

pub fn accuracy_report(records: &[BenchmarkRecord]) -> Result<AccuracyReport, BenchError> {
    if records.is_empty() {
        return Err(BenchError::EmptyRecords);
    }
    let mut by_cat: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let k = records.iter().map(|r| r.runs.len()).max().unwrap_or(0);
    let mut per_run = vec![(0usize, 0usize); k];
    for r in records {
        let cell = by_cat.entry(r.category.as_str()).or_default();
        for (i, run) in r.runs.iter().enumerate() {
            cell.0 += run.correct as usize;
            cell.1 += 1;
            per_run[i].0 += run.correct as usize;
            per_run[i].1 += 1;
        }
    }
    let categories: Vec<CategoryRow> = by_cat
        .iter()
        .map(|(c, &(n, d))| CategoryRow {
            category: c.to_string(),
            accuracy: Accuracy::new(n, d),
        })
        .collect();
    let (n, d) = by_cat
        .values()
        .fold((0, 0), |(a, b), &(n, d)| (a + n, b + d));
    let percents: Vec<f64> = per_run
        .iter()
        .map(|&(n, d)| Accuracy::exact(n, d).to_f64().unwrap_or(0.0))
        .collect();
    let mean = percents.iter().copied().mean();
    let sd = (percents.len() > 1).then(|| percents.iter().copied().std_dev());
    let dec = |x: f64| pct(Decimal::from_f64(x).unwrap_or_default());
    Ok(AccuracyReport {
        schema_version: SCHEMA_VERSION,
        categories,
        total: Accuracy::new(n, d),
        per_run: per_run
            .into_iter()
            .enumerate()
            .map(|(run, (n, d))| RunAccuracy {
                run,
                accuracy: Accuracy::new(n, d),
            })
            .collect(),
        mean_percent: dec(mean),
        sd_percent: sd.map(dec),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Improvement {
    /// Percentage points, rounded to 2 places.
    pub net: Decimal,
    /// Percent of the baseline, rounded to 2 places.
    pub relative: Decimal,
}

impl Improvement {
    pub fn net_str(&self) -> String {
        format!("{:.2}", self.net)
    }

    pub fn relative_str(&self) -> String {
        format!("{:.2}%", self.relative)
    }
}

/// Net and relative gain of `candidate_pct` over `baseline_pct`. The inputs
/// are read as their shortest decimal form, so `22.37` is exactly 22.37.
pub fn improvement_report(
    candidate_pct: f64,
    baseline_pct: f64,
) -> Result<Improvement, BenchError> {
    let c = Decimal::from_f64(candidate_pct).unwrap_or_default();
    let b = Decimal::from_f64(baseline_pct).unwrap_or_default();
    if b.is_zero() {
        return Err(BenchError::ZeroBaseline);
    }
    let net = c - b;
    Ok(Improvement {
        net: round2(net),
        relative: round2(net / b * Decimal::ONE_HUNDRED),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub mode: RunMode,
    pub k: usize,
    pub config: RunConfig,
    pub accuracy: AccuracyReport,
    /// Runs that did not complete.
    pub failures: usize,
    pub records: Vec<BenchmarkRecord>,
}

impl BenchReport {
    pub fn new(
        mode: RunMode,
        k: usize,
        config: RunConfig,
        records: Vec<BenchmarkRecord>,
    ) -> Result<Self, BenchError> {
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            mode,
            k,
            config,
            accuracy: accuracy_report(&records)?,
            failures: records
                .iter()
                .flat_map(|r| &r.runs)
                .filter(|r| r.failed())
                .count(),
            records,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// One row per question: correct runs out of k and each run's prediction.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "question_id",
            "category",
            "answer_type",
            "gold_answer",
            "correct_runs",
            "k",
            "pass_at_1",
            "predictions",
        ])
        .expect("in-memory write");
        for r in &self.records {
            let answer_type = serde_json::to_value(r.answer_type).expect("serializes");
            let pass: Vec<&str> = r
                .pass_at_1
                .iter()
                .map(|&p| if p { "1" } else { "0" })
                .collect();
            let preds: Vec<&str> = r
                .runs
                .iter()
                .map(|o| o.prediction.as_deref().unwrap_or(""))
                .collect();
            w.write_record([
                r.question_id.as_str(),
                r.category.as_str(),
                answer_type.as_str().unwrap_or(""),
                r.gold_answer.as_str(),
                &r.pass_at_1.iter().filter(|&&p| p).count().to_string(),
                &r.runs.len().to_string(),
                &pass.join(";"),
                &preds.join(" | "),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
