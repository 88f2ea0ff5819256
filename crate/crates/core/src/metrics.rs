//! Binary-classification scoring of probe verdicts.
//!
//! "yes" is the positive class. An unparseable answer is counted in its own
//! counter; under [`UnparseablePolicy::Fold`] it is scored as a false
//! negative when the true label is yes and as a true negative when it is
//! no, and under [`UnparseablePolicy::Exclude`] it is left out of every
//! denominator.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datamodel::{Category, Label, Parsed, ProbeQuestion, ProbeVerdict};
use crate::error::MetricsError;
use crate::scalar::{Percent, Rational, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unparseable: u64,
    /// How many of the unparseable answers had ground truth "yes".
    #[serde(default)]
    pub unparseable_yes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    #[default]
    Fold,
    Exclude,
}

/// Raw scores as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet<S> {
    pub accuracy: S,
    pub precision: S,
    pub recall: S,
    pub f1: S,
    /// Set when any score hit a 0/0 and was defined as 0.
    pub degenerate: bool,
}

/// Scores as two-decimal percentages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedMetrics {
    pub accuracy: Percent,
    pub precision: Percent,
    pub recall: Percent,
    pub f1: Percent,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub degenerate: bool,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_ + self.unparseable
    }

    pub fn record(&mut self, label: Label, parsed: Parsed) {
        match (label, parsed) {
            (Label::Yes, Parsed::Yes) => self.tp += 1,
            (Label::No, Parsed::Yes) => self.fp += 1,
            (Label::No, Parsed::No) => self.tn += 1,
            (Label::Yes, Parsed::No) => self.fn_ += 1,
            (label, Parsed::Unparseable) => {
                self.unparseable += 1;
                if label == Label::Yes {
                    self.unparseable_yes += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
        self.unparseable += other.unparseable;
        self.unparseable_yes += other.unparseable_yes;
    }

    /// `(tp, fp, tn, fn)` after applying the unparseable policy.
    pub fn effective(&self, policy: UnparseablePolicy) -> (u64, u64, u64, u64) {
        match policy {
            UnparseablePolicy::Fold => (
                self.tp,
                self.fp,
                self.tn + (self.unparseable - self.unparseable_yes),
                self.fn_ + self.unparseable_yes,
            ),
            UnparseablePolicy::Exclude => (self.tp, self.fp, self.tn, self.fn_),
        }
    }

    /// Share of answers that could not be parsed.
    pub fn unparseable_rate(&self) -> Percent {
        if self.total() == 0 {
            return Percent::ZERO;
        }
        Percent::from_fraction(Rational::from_ratio(self.unparseable, self.total()))
    }

    pub fn metrics<S: Scalar>(&self, policy: UnparseablePolicy) -> Result<MetricSet<S>, MetricsError> {
        let (tp, fp, tn, fn_) = self.effective(policy);
        let total = tp + fp + tn + fn_;
        if total == 0 {
            return Err(MetricsError::Empty);
        }
        let mut degenerate = false;
        let mut ratio = |num: u64, den: u64| {
            if den == 0 {
                degenerate = true;
                S::zero()
            } else {
                S::from_ratio(num, den)
            }
        };
        let accuracy = ratio(tp + tn, total);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == S::zero() {
            degenerate = true;
            S::zero()
        } else {
            f1_from_precision_recall(precision, recall)
        };
        Ok(MetricSet {
            accuracy,
            precision,
            recall,
            f1,
            degenerate,
        })
    }

    /// Percent scores computed exactly and rounded half-up.
    pub fn reported(&self, policy: UnparseablePolicy) -> Result<ReportedMetrics, MetricsError> {
        Ok(self.metrics::<Rational>(policy)?.into())
    }
}

/// Harmonic mean of precision and recall; both in the same unit.
pub fn f1_from_precision_recall<S: Scalar>(precision: S, recall: S) -> S {
    let two = S::one() + S::one();
    two * precision * recall / (precision + recall)
}

impl<S: Scalar> From<MetricSet<S>> for ReportedMetrics {
    fn from(m: MetricSet<S>) -> Self {
        ReportedMetrics {
            accuracy: Percent::from_fraction(m.accuracy),
            precision: Percent::from_fraction(m.precision),
            recall: Percent::from_fraction(m.recall),
            f1: Percent::from_fraction(m.f1),
            degenerate: m.degenerate,
        }
    }
}

impl ReportedMetrics {
    /// Scores in Table column order: accuracy, precision, recall, F1.
    pub fn columns(&self) -> [Percent; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }

    pub fn delta(&self, baseline: &ReportedMetrics) -> MetricDeltas {
        MetricDeltas {
            accuracy: self.accuracy - baseline.accuracy,
            precision: self.precision - baseline.precision,
            recall: self.recall - baseline.recall,
            f1: self.f1 - baseline.f1,
        }
    }
}

/// Confusion counts over a bank, overall and per question category.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tally {
    pub policy: UnparseablePolicy,
    pub overall: ConfusionCounts,
    pub per_category: BTreeMap<Category, ConfusionCounts>,
}

/// Joins verdicts to questions by id and counts outcomes.
pub fn tally(
    questions: &[ProbeQuestion],
    verdicts: &[ProbeVerdict],
    exclude_unparseable: bool,
) -> Result<Tally, MetricsError> {
    if questions.len() != verdicts.len() {
        return Err(MetricsError::Mismatch(format!(
            "{} questions but {} verdicts",
            questions.len(),
            verdicts.len()
        )));
    }
    let mut by_id: HashMap<&str, &ProbeVerdict> = HashMap::with_capacity(verdicts.len());
    for v in verdicts {
        if by_id.insert(v.question_id.as_str(), v).is_some() {
            return Err(MetricsError::Mismatch(format!(
                "verdict `{}` appears twice",
                v.question_id
            )));
        }
    }
    let mut per_category: BTreeMap<Category, ConfusionCounts> = BTreeMap::new();
    for category in Category::ALL {
        let mut counts = ConfusionCounts::default();
        let mut any = false;
        for q in questions.iter().filter(|q| q.category == category) {
            let v = by_id.get(q.question_id.as_str()).ok_or_else(|| {
                MetricsError::Mismatch(format!("no verdict for question `{}`", q.question_id))
            })?;
            counts.record(q.label, v.parsed);
            any = true;
        }
        if any {
            per_category.insert(category, counts);
        }
    }
    let mut overall = ConfusionCounts::default();
    per_category.values().for_each(|c| overall.merge(c));
    Ok(Tally {
        policy: if exclude_unparseable {
            UnparseablePolicy::Exclude
        } else {
            UnparseablePolicy::Fold
        },
        overall,
        per_category,
    })
}

/// Content hash identifying a question bank: ids, labels and categories.
pub fn bank_id(questions: &[ProbeQuestion]) -> String {
    let mut rows: Vec<String> = questions
        .iter()
        .map(|q| format!("{}\t{}\t{}\n", q.question_id, q.label, q.category))
        .collect();
    rows.sort();
    let mut hasher = Sha256::new();
    for row in &rows {
        hasher.update(row.as_bytes());
    }
    hex::encode(&hasher.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub counts: ConfusionCounts,
    pub metrics: ReportedMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_name: String,
    pub bank_id: String,
    #[serde(default)]
    pub unparseable_policy: UnparseablePolicy,
    pub counts: ConfusionCounts,
    pub metrics: ReportedMetrics,
    #[serde(default)]
    pub per_category: BTreeMap<Category, CategoryReport>,
}

impl EvalReport {
    pub fn from_tally(model_name: &str, bank_id: String, tally: &Tally) -> Result<Self, MetricsError> {
        let mut per_category = BTreeMap::new();
        for (category, counts) in &tally.per_category {
            // a category whose questions were all excluded has no scores
            if let Ok(metrics) = counts.reported(tally.policy) {
                per_category.insert(
                    *category,
                    CategoryReport {
                        counts: *counts,
                        metrics,
                    },
                );
            }
        }
        Ok(EvalReport {
            model_name: model_name.to_string(),
            bank_id,
            unparseable_policy: tally.policy,
            counts: tally.overall,
            metrics: tally.overall.reported(tally.policy)?,
            per_category,
        })
    }

    pub fn evaluate(
        model_name: &str,
        questions: &[ProbeQuestion],
        verdicts: &[ProbeVerdict],
        exclude_unparseable: bool,
    ) -> Result<Self, MetricsError> {
        let t = tally(questions, verdicts, exclude_unparseable)?;
        Self::from_tally(model_name, bank_id(questions), &t)
    }

    /// Scores from published numbers alone, with no counts behind them.
    pub fn metrics_only(model_name: &str, bank_id: &str, metrics: ReportedMetrics) -> Self {
        EvalReport {
            model_name: model_name.to_string(),
            bank_id: bank_id.to_string(),
            unparseable_policy: UnparseablePolicy::Fold,
            counts: ConfusionCounts::default(),
            metrics,
            per_category: BTreeMap::new(),
        }
    }

    /// Checks that the stored scores follow from the stored counts. Reports
    /// with all-zero counts carry transcribed scores and are accepted as is.
    pub fn check_consistency(&self) -> Result<(), MetricsError> {
        let fail = |reason: String| MetricsError::Inconsistent {
            model: self.model_name.clone(),
            reason,
        };
        if self.counts.total() == 0 {
            return Ok(());
        }
        let recomputed = self.counts.reported(self.unparseable_policy)?;
        if recomputed != self.metrics {
            return Err(fail(format!(
                "stored metrics {:?} differ from recomputed {:?}",
                self.metrics, recomputed
            )));
        }
        let mut sum = ConfusionCounts::default();
        for (category, c) in &self.per_category {
            let m = c.counts.reported(self.unparseable_policy)?;
            if m != c.metrics {
                return Err(fail(format!(
                    "category {category} metrics do not match its counts"
                )));
            }
            sum.merge(&c.counts);
        }
        if !self.per_category.is_empty() && sum != self.counts {
            return Err(fail("category counts do not sum to the overall counts".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub accuracy: Percent,
    pub precision: Percent,
    pub recall: Percent,
    pub f1: Percent,
}

impl MetricDeltas {
    pub fn columns(&self) -> [Percent; 4] {
        [self.accuracy, self.precision, self.recall, self.f1]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelScores {
    pub model_name: String,
    pub metrics: ReportedMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryDelta {
    pub baseline_f1: Percent,
    pub treated_f1: Percent,
    pub delta: Percent,
}

/// Signed metric changes from a baseline model to a treated one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub bank_id: String,
    pub baseline: ModelScores,
    pub treated: ModelScores,
    pub delta: MetricDeltas,
    #[serde(default)]
    pub per_category: BTreeMap<Category, CategoryDelta>,
}

pub fn compare(baseline: &EvalReport, treated: &EvalReport) -> Result<DeltaReport, MetricsError> {
    if baseline.bank_id != treated.bank_id {
        return Err(MetricsError::BankMismatch {
            baseline: baseline.bank_id.clone(),
            treated: treated.bank_id.clone(),
        });
    }
    let per_category = baseline
        .per_category
        .iter()
        .filter_map(|(category, b)| {
            treated.per_category.get(category).map(|t| {
                (
                    *category,
                    CategoryDelta {
                        baseline_f1: b.metrics.f1,
                        treated_f1: t.metrics.f1,
                        delta: t.metrics.f1 - b.metrics.f1,
                    },
                )
            })
        })
        .collect();
    Ok(DeltaReport {
        bank_id: baseline.bank_id.clone(),
        baseline: ModelScores {
            model_name: baseline.model_name.clone(),
            metrics: baseline.metrics,
        },
        treated: ModelScores {
            model_name: treated.model_name.clone(),
            metrics: treated.metrics,
        },
        delta: treated.metrics.delta(&baseline.metrics),
        per_category,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Format::Markdown),
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!(
                "unknown format `{other}` (expected markdown, csv or json)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Renderable {
    Report(EvalReport),
    Delta(DeltaReport),
}

const METRIC_HEADERS: [&str; 4] = ["Accuracy", "Precision", "Recall", "F1 Score"];

fn md_row(cells: &[String]) -> String {
    format!("| {} |\n", cells.join(" | "))
}

fn md_header(first: &str, rest: &[&str]) -> String {
    let mut cells = vec![first.to_string()];
    cells.extend(rest.iter().map(|s| s.to_string()));
    let mut out = md_row(&cells);
    let mut rule = vec!["---".to_string()];
    rule.extend(rest.iter().map(|_| "---:".to_string()));
    out.push_str(&md_row(&rule));
    out
}

fn category_f1(report: &EvalReport, category: Category) -> Option<Percent> {
    report.per_category.get(&category).map(|c| c.metrics.f1)
}

fn has_fine_grained(report: &EvalReport) -> bool {
    Category::FINE_GRAINED
        .iter()
        .any(|c| report.per_category.contains_key(c))
}

fn fine_grained_headers() -> Vec<&'static str> {
    Category::FINE_GRAINED.iter().map(|c| c.title()).collect()
}

fn markdown_reports(reports: &[&EvalReport]) -> String {
    let mut out = md_header("Model", &METRIC_HEADERS);
    for r in reports {
        let mut cells = vec![r.model_name.clone()];
        cells.extend(r.metrics.columns().iter().map(Percent::to_string));
        out.push_str(&md_row(&cells));
    }
    if reports.iter().any(|r| has_fine_grained(r)) {
        out.push('\n');
        out.push_str(&md_header("Model", &fine_grained_headers()));
        for r in reports {
            let mut cells = vec![r.model_name.clone()];
            cells.extend(
                Category::FINE_GRAINED
                    .iter()
                    .map(|c| category_f1(r, *c).map_or_else(|| "-".to_string(), |p| p.to_string())),
            );
            out.push_str(&md_row(&cells));
        }
    }
    out
}

fn markdown_delta(d: &DeltaReport) -> String {
    let mut out = md_header("Model", &METRIC_HEADERS);
    for scores in [&d.baseline, &d.treated] {
        let mut cells = vec![scores.model_name.clone()];
        cells.extend(scores.metrics.columns().iter().map(Percent::to_string));
        out.push_str(&md_row(&cells));
    }
    let mut cells = vec![String::new()];
    cells.extend(d.delta.columns().iter().map(|p| format!("({})", p.signed())));
    out.push_str(&md_row(&cells));
    let fine: Vec<_> = Category::FINE_GRAINED
        .iter()
        .filter(|c| d.per_category.contains_key(c))
        .collect();
    if !fine.is_empty() {
        out.push('\n');
        out.push_str(&md_header("Model", &fine_grained_headers()));
        let cell = |c: &Category, f: fn(&CategoryDelta) -> String| {
            d.per_category.get(c).map_or_else(|| "-".to_string(), f)
        };
        let mut base = vec![d.baseline.model_name.clone()];
        let mut treat = vec![d.treated.model_name.clone()];
        let mut delta = vec![String::new()];
        for c in Category::FINE_GRAINED.iter() {
            base.push(cell(c, |x| x.baseline_f1.to_string()));
            treat.push(cell(c, |x| x.treated_f1.to_string()));
            delta.push(cell(c, |x| format!("({})", x.delta.signed())));
        }
        out.push_str(&md_row(&base));
        out.push_str(&md_row(&treat));
        out.push_str(&md_row(&delta));
    }
    out
}

pub const CSV_HEADER: [&str; 9] = [
    "kind",
    "model",
    "accuracy",
    "precision",
    "recall",
    "f1",
    "multi_object_f1",
    "attribute_f1",
    "behavior_f1",
];

fn csv_row(kind: &str, model: &str, cols: [Percent; 4], cats: [Option<Percent>; 3]) -> Vec<String> {
    let mut row = vec![kind.to_string(), model.to_string()];
    row.extend(cols.iter().map(Percent::to_string));
    row.extend(cats.iter().map(|c| c.map(|p| p.to_string()).unwrap_or_default()));
    row
}

/// Renders reports and deltas. Metric columns follow the order accuracy,
/// precision, recall, F1; category columns follow multi-object,
/// attribute, behavior.
pub fn render(items: &[Renderable], format: Format) -> Result<String, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::NothingToRender);
    }
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(items)?;
            s.push('\n');
            Ok(s)
        }
        Format::Markdown => {
            let reports: Vec<&EvalReport> = items
                .iter()
                .filter_map(|i| match i {
                    Renderable::Report(r) => Some(r),
                    Renderable::Delta(_) => None,
                })
                .collect();
            let mut blocks = Vec::new();
            if !reports.is_empty() {
                blocks.push(markdown_reports(&reports));
            }
            for item in items {
                if let Renderable::Delta(d) = item {
                    blocks.push(markdown_delta(d));
                }
            }
            Ok(blocks.join("\n"))
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for item in items {
                match item {
                    Renderable::Report(r) => {
                        let cats = Category::FINE_GRAINED.map(|c| category_f1(r, c));
                        w.write_record(csv_row("report", &r.model_name, r.metrics.columns(), cats))?;
                    }
                    Renderable::Delta(d) => {
                        let pick = |f: fn(&CategoryDelta) -> Percent| {
                            Category::FINE_GRAINED.map(|c| d.per_category.get(&c).map(f))
                        };
                        w.write_record(csv_row(
                            "baseline",
                            &d.baseline.model_name,
                            d.baseline.metrics.columns(),
                            pick(|x| x.baseline_f1),
                        ))?;
                        w.write_record(csv_row(
                            "treated",
                            &d.treated.model_name,
                            d.treated.metrics.columns(),
                            pick(|x| x.treated_f1),
                        ))?;
                        w.write_record(csv_row(
                            "delta",
                            &d.treated.model_name,
                            d.delta.columns(),
                            pick(|x| x.delta),
                        ))?;
                    }
                }
            }
            let bytes = w
                .into_inner()
                .map_err(|e| MetricsError::Csv(e.into_error().into()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::Source;
    use proptest::prelude::*;

    fn question(i: usize, label: Label, category: Category) -> ProbeQuestion {
        ProbeQuestion {
            question_id: format!("q{i:03}"),
            image_id: format!("img{}", i / 4),
            text: format!("Is there thing {i} in the image?"),
            label,
            category,
            source: if category == Category::Object {
                Source::Pope
            } else {
                Source::Fghe
            },
        }
    }

    fn verdict(q: &ProbeQuestion, parsed: Parsed) -> ProbeVerdict {
        ProbeVerdict {
            question_id: q.question_id.clone(),
            raw_response: format!("{parsed:?}"),
            parsed,
            correct: parsed.label() == Some(q.label),
            latency_ms: 0,
        }
    }

    fn balanced(n: usize) -> Vec<ProbeQuestion> {
        (0..2 * n)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Yes } else { Label::No };
                question(i, label, Category::Object)
            })
            .collect()
    }

    /// Ten questions with hand-assigned answers; see `hand_labeled_fixture_tally`.
    fn hand_fixture() -> (Vec<ProbeQuestion>, Vec<ProbeVerdict>) {
        use Label::*;
        let rows = [
            (Yes, Parsed::Yes),
            (Yes, Parsed::Yes),
            (Yes, Parsed::Yes),
            (Yes, Parsed::No),
            (Yes, Parsed::No),
            (No, Parsed::Yes),
            (No, Parsed::No),
            (No, Parsed::No),
            (No, Parsed::No),
            (No, Parsed::No),
        ];
        let qs: Vec<_> = rows
            .iter()
            .enumerate()
            .map(|(i, (l, _))| question(i, *l, Category::Object))
            .collect();
        let vs = qs.iter().zip(rows).map(|(q, (_, p))| verdict(q, p)).collect();
        (qs, vs)
    }

    #[test]
    fn oracle_verdicts_have_no_errors() {
        let qs = balanced(50);
        let vs: Vec<_> = qs.iter().map(|q| verdict(q, q.label.into())).collect();
        let t = tally(&qs, &vs, false).unwrap();
        assert_eq!(t.overall.fp, 0);
        assert_eq!(t.overall.fn_, 0);
    }

    #[test]
    fn always_yes_on_balanced_bank() {
        let qs = balanced(100);
        let vs: Vec<_> = qs.iter().map(|q| verdict(q, Parsed::Yes)).collect();
        let t = tally(&qs, &vs, false).unwrap();
        assert_eq!(
            (t.overall.tp, t.overall.fp, t.overall.tn, t.overall.fn_),
            (100, 100, 0, 0)
        );
        let m = t.overall.reported(t.policy).unwrap();
        assert_eq!(
            m.columns().map(|p| p.to_string()),
            ["50.00", "50.00", "100.00", "66.67"]
        );
    }

    #[test]
    fn hand_labeled_fixture_tally() {
        // counted by hand from the rows in hand_fixture()
        let (qs, vs) = hand_fixture();
        let t = tally(&qs, &vs, false).unwrap();
        assert_eq!(
            (t.overall.tp, t.overall.fp, t.overall.tn, t.overall.fn_),
            (3, 1, 4, 2)
        );
        let m = t.overall.reported(t.policy).unwrap();
        // acc 7/10, P 3/4, R 3/5, F1 2*.75*.6/1.35 = 2/3
        assert_eq!(
            m.columns().map(|p| p.to_string()),
            ["70.00", "75.00", "60.00", "66.67"]
        );
    }

    #[test]
    fn f1_from_published_precision_recall() {
        let p = Rational::from_hundredths(5551);
        let r = Rational::from_hundredths(9434);
        assert_eq!(
            Percent::from_percent(f1_from_precision_recall(p, r)),
            Percent(6989)
        );
        let f = f1_from_precision_recall(55.51f64, 94.34f64);
        assert_eq!(Percent::from_percent(f), Percent(6989));
    }

    #[test]
    fn unparseable_fold_and_exclude() {
        let qs = vec![
            question(0, Label::Yes, Category::Object),
            question(1, Label::No, Category::Object),
            question(2, Label::Yes, Category::Object),
            question(3, Label::No, Category::Object),
        ];
        let vs = vec![
            verdict(&qs[0], Parsed::Yes),
            verdict(&qs[1], Parsed::No),
            verdict(&qs[2], Parsed::Unparseable),
            verdict(&qs[3], Parsed::Unparseable),
        ];
        let t = tally(&qs, &vs, false).unwrap();
        assert_eq!(t.overall.total(), 4);
        assert_eq!(t.overall.unparseable, 2);
        assert_eq!(t.overall.unparseable_yes, 1);
        assert_eq!(t.overall.effective(UnparseablePolicy::Fold), (1, 0, 2, 1));
        let folded = t.overall.reported(UnparseablePolicy::Fold).unwrap();
        assert_eq!(folded.recall, Percent(5000));
        assert_eq!(folded.accuracy, Percent(7500));
        let excluded = t.overall.reported(UnparseablePolicy::Exclude).unwrap();
        assert_eq!(excluded.columns(), [Percent(10_000); 4]);
        assert_eq!(t.overall.unparseable_rate(), Percent(5000));
    }

    #[test]
    fn zero_over_zero_is_flagged() {
        let c = ConfusionCounts {
            tn: 5,
            ..Default::default()
        };
        let m = c.reported(UnparseablePolicy::Fold).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.precision, Percent::ZERO);
        assert_eq!(m.accuracy, Percent(10_000));
    }

    #[test]
    fn empty_counts_are_an_error() {
        assert!(matches!(
            ConfusionCounts::default().reported(UnparseablePolicy::Fold),
            Err(MetricsError::Empty)
        ));
    }

    #[test]
    fn mismatched_ids_are_rejected() {
        let qs = balanced(2);
        let mut vs: Vec<_> = qs.iter().map(|q| verdict(q, Parsed::Yes)).collect();
        vs[1].question_id = "other".into();
        assert!(matches!(tally(&qs, &vs, false), Err(MetricsError::Mismatch(_))));
        assert!(matches!(
            tally(&qs, &vs[..3], false),
            Err(MetricsError::Mismatch(_))
        ));
    }

    #[test]
    fn per_category_counts_sum_to_overall() {
        let cats = [Category::MultiObject, Category::Attribute, Category::Behavior];
        let qs: Vec<_> = (0..30)
            .map(|i| {
                let label = if i % 3 == 0 { Label::No } else { Label::Yes };
                question(i, label, cats[i % 3])
            })
            .collect();
        let vs: Vec<_> = qs
            .iter()
            .enumerate()
            .map(|(i, q)| verdict(q, [Parsed::Yes, Parsed::No, Parsed::Unparseable][i % 5 % 3]))
            .collect();
        let report = EvalReport::evaluate("m", &qs, &vs, false).unwrap();
        report.check_consistency().unwrap();
        assert_eq!(report.per_category.len(), 3);
    }

    fn scores(acc: i64, p: i64, r: i64, f1: i64) -> ReportedMetrics {
        ReportedMetrics {
            accuracy: Percent(acc),
            precision: Percent(p),
            recall: Percent(r),
            f1: Percent(f1),
            degenerate: false,
        }
    }

    #[test]
    fn delta_of_published_rows() {
        let base = EvalReport::metrics_only("base", "pope", scores(5423, 5824, 3197, 4129));
        let treated = EvalReport::metrics_only("tuned", "pope", scores(5769, 6254, 3967, 4855));
        let d = compare(&base, &treated).unwrap();
        assert_eq!(d.delta.f1.signed(), "+7.26");
        assert_eq!(d.delta.accuracy.signed(), "+3.46");
        assert_eq!(d.delta.precision.signed(), "+4.30");
        assert_eq!(d.delta.recall.signed(), "+7.70");
    }

    #[test]
    fn negative_deltas_render_with_minus() {
        let base = EvalReport::metrics_only("base", "pope", scores(5000, 5000, 10_000, 6667));
        let treated = EvalReport::metrics_only("tuned", "pope", scores(6187, 5733, 9280, 7088));
        let d = compare(&base, &treated).unwrap();
        assert_eq!(d.delta.recall.signed(), "-7.20");
        let md = render(&[Renderable::Delta(d)], Format::Markdown).unwrap();
        assert!(md.contains("(-7.20)"));
        assert!(md.contains("(+11.87)"));
    }

    #[test]
    fn identical_reports_have_zero_deltas() {
        let a = EvalReport::metrics_only("m", "bank", scores(5423, 5824, 3197, 4129));
        let d = compare(&a, &a.clone()).unwrap();
        assert_eq!(d.delta.columns(), [Percent::ZERO; 4]);
        assert!(d.delta.columns().iter().all(|p| p.signed() == "+0.00"));
    }

    #[test]
    fn category_delta_matches_table() {
        let mut base = EvalReport::metrics_only("base", "fghe", scores(0, 0, 0, 0));
        let mut treated = base.clone();
        base.per_category.insert(
            Category::MultiObject,
            CategoryReport {
                counts: ConfusionCounts::default(),
                metrics: scores(0, 0, 0, 6330),
            },
        );
        treated.per_category.insert(
            Category::MultiObject,
            CategoryReport {
                counts: ConfusionCounts::default(),
                metrics: scores(0, 0, 0, 7102),
            },
        );
        let d = compare(&base, &treated).unwrap();
        assert_eq!(d.per_category[&Category::MultiObject].delta.signed(), "+7.72");
    }

    #[test]
    fn bank_mismatch_is_an_error() {
        let a = EvalReport::metrics_only("a", "bank-1", scores(1, 1, 1, 1));
        let b = EvalReport::metrics_only("b", "bank-2", scores(1, 1, 1, 1));
        assert!(matches!(compare(&a, &b), Err(MetricsError::BankMismatch { .. })));
    }

    #[test]
    fn single_report_markdown_has_four_metric_columns() {
        let qs = balanced(10);
        let vs: Vec<_> = qs.iter().map(|q| verdict(q, Parsed::Yes)).collect();
        let r = EvalReport::evaluate("llava", &qs, &vs, false).unwrap();
        let md = render(&[Renderable::Report(r)], Format::Markdown).unwrap();
        let lines: Vec<_> = md.lines().collect();
        assert_eq!(lines[0], "| Model | Accuracy | Precision | Recall | F1 Score |");
        assert_eq!(lines[2], "| llava | 50.00 | 50.00 | 100.00 | 66.67 |");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn csv_reads_back_as_report_numbers() {
        let (qs, vs) = hand_fixture();
        let r = EvalReport::evaluate("m", &qs, &vs, false).unwrap();
        let text = render(&[Renderable::Report(r.clone())], Format::Csv).unwrap();
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let row = rd.records().next().unwrap().unwrap();
        let nums: Vec<f64> = (2..6).map(|i| row[i].parse().unwrap()).collect();
        let expect: Vec<f64> = r.metrics.columns().iter().map(|p| p.as_f64()).collect();
        assert_eq!(nums, expect);
    }

    #[test]
    fn json_render_round_trips() {
        let (qs, vs) = hand_fixture();
        let r = EvalReport::evaluate("m", &qs, &vs, false).unwrap();
        let items = vec![Renderable::Report(r)];
        let text = render(&items, Format::Json).unwrap();
        let back: Vec<Renderable> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, items);
    }

    #[test]
    fn inconsistent_report_is_detected() {
        let (qs, vs) = hand_fixture();
        let mut r = EvalReport::evaluate("m", &qs, &vs, false).unwrap();
        r.check_consistency().unwrap();
        r.metrics.f1 = Percent(9999);
        assert!(r.check_consistency().is_err());
    }

    fn counts_strategy() -> impl Strategy<Value = ConfusionCounts> {
        (0u64..200, 0u64..200, 0u64..200, 0u64..200, 0u64..20, 0u64..20).prop_map(
            |(tp, fp, tn, fn_, uy, un)| ConfusionCounts {
                tp,
                fp,
                tn,
                fn_,
                unparseable: uy + un,
                unparseable_yes: uy,
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn fn_to_tp_flip_never_lowers_a_metric(c in counts_strategy()) {
            prop_assume!(c.fn_ > 0);
            let before = c.metrics::<Rational>(UnparseablePolicy::Fold).unwrap();
            let mut flipped = c;
            flipped.fn_ -= 1;
            flipped.tp += 1;
            let after = flipped.metrics::<Rational>(UnparseablePolicy::Fold).unwrap();
            prop_assert!(after.accuracy >= before.accuracy);
            prop_assert!(after.precision >= before.precision);
            prop_assert!(after.recall >= before.recall);
            prop_assert!(after.f1 >= before.f1);
        }

        #[test]
        fn duplicating_every_pair_keeps_metrics(c in counts_strategy(), k in 1u64..20) {
            prop_assume!(c.total() > 0);
            let scaled = ConfusionCounts {
                tp: c.tp * k,
                fp: c.fp * k,
                tn: c.tn * k,
                fn_: c.fn_ * k,
                unparseable: c.unparseable * k,
                unparseable_yes: c.unparseable_yes * k,
            };
            for policy in [UnparseablePolicy::Fold, UnparseablePolicy::Exclude] {
                let a = c.metrics::<Rational>(policy);
                let b = scaled.metrics::<Rational>(policy);
                match (a, b) {
                    (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                    (Err(_), Err(_)) => {}
                    (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
                }
            }
        }

        #[test]
        fn f1_is_harmonic_mean_of_precision_and_recall(c in counts_strategy()) {
            prop_assume!(c.total() > 0);
            let exact = c.metrics::<Rational>(UnparseablePolicy::Fold).unwrap();
            let zero = Rational::from_integer(0);
            if exact.precision + exact.recall > zero {
                prop_assert_eq!(exact.f1, f1_from_precision_recall(exact.precision, exact.recall));
            }
            // on the 2-decimal figures the gap stays within output rounding
            // plus the input rounding pushed through the partial derivatives
            let m = c.reported(UnparseablePolicy::Fold).unwrap();
            let (p, r) = (m.precision.to_scalar::<Rational>(), m.recall.to_scalar::<Rational>());
            if p + r > zero {
                let f = f1_from_precision_recall(p, r);
                let diff = f - m.f1.to_scalar::<Rational>();
                let diff = if diff < zero { -diff } else { diff };
                let half = Rational::new(1, 200);
                let slope = Rational::from_integer(2) * (p * p + r * r) / ((p + r) * (p + r));
                prop_assert!(diff <= half + half * slope, "diff {}", diff);
            }
        }

        #[test]
        fn float_and_exact_routes_agree(c in counts_strategy()) {
            prop_assume!(c.total() > 0);
            let exact: ReportedMetrics = c.metrics::<Rational>(UnparseablePolicy::Fold).unwrap().into();
            let float: ReportedMetrics = c.metrics::<f64>(UnparseablePolicy::Fold).unwrap().into();
            prop_assert_eq!(exact, float);
        }
    }
}
