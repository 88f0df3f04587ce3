//! FLOPs and accuracy accounting, run comparison and report emission.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::search::{normalize_answer, Method};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("precondition violated: {0}")]
    Precondition(&'static str),
    #[error("invalid input: {0}")]
    Input(String),
}

/// `6 * n * p`, exact. Saturates at `u128::MAX`, which needs `n * p` beyond
/// anything two `u64`s can produce.
pub fn flops(n: u64, p: u64) -> u128 {
    (n as u128 * p as u128).saturating_mul(6)
}

/// Whether `predicted` matches `gold` after normalisation. An empty
/// prediction never matches.
pub fn is_correct(predicted: &str, gold: &str) -> bool {
    let p = normalize_answer(predicted);
    !p.is_empty() && p == normalize_answer(gold)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub task_id: String,
    pub predicted: String,
    pub gold: String,
    pub correct: bool,
    /// Tokens charged to this example (rollouts included unless excluded).
    pub tokens: u64,
    pub rollout_tokens: u64,
    pub stop_step: u32,
    pub prune_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub task_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub method: Method,
    pub benchmark: String,
    pub tokens_generated: u64,
    pub model_params: u64,
    pub flops: u128,
    /// Whether foresight rollout tokens count towards `tokens_generated`.
    pub count_rollout_tokens: bool,
    pub correct: usize,
    /// Attempted instances; failures count as incorrect.
    pub total: usize,
    pub per_example: Vec<ExampleRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureRecord>,
}

impl RunMetrics {
    pub fn new(method: Method, benchmark: impl Into<String>, model_params: u64, count_rollout_tokens: bool) -> Self {
        Self {
            method,
            benchmark: benchmark.into(),
            tokens_generated: 0,
            model_params,
            flops: 0,
            count_rollout_tokens,
            correct: 0,
            total: 0,
            per_example: Vec::new(),
            failures: Vec::new(),
        }
    }

    /// Adds one example. `tokens` includes its rollout tokens; they are
    /// subtracted here when rollouts are not counted.
    pub fn push(&mut self, mut record: ExampleRecord) {
        if !self.count_rollout_tokens {
            record.tokens -= record.rollout_tokens.min(record.tokens);
        }
        self.tokens_generated += record.tokens;
        self.flops = flops(self.tokens_generated, self.model_params);
        self.correct += record.correct as usize;
        self.total += 1;
        self.per_example.push(record);
    }

    pub fn push_failure(&mut self, failure: FailureRecord) {
        self.total += 1;
        self.failures.push(failure);
    }

    /// `correct / total`, or `None` for an empty run.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

/// Fraction of `examples` whose prediction matches gold after normalisation.
pub fn accuracy(examples: &[ExampleRecord]) -> Result<f64, MetricsError> {
    if examples.is_empty() {
        return Err(MetricsError::Precondition("accuracy of an empty example set"));
    }
    let correct = examples.iter().filter(|e| is_correct(&e.predicted, &e.gold)).count();
    Ok(correct as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDelta {
    pub task_id: String,
    /// `b.tokens - a.tokens`.
    pub delta: i128,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    /// `acc(b) - acc(a)`.
    pub accuracy_delta: f64,
    /// `flops(b) / flops(a)`; `None` when `a` used no FLOPs but `b` did.
    pub flops_ratio: Option<f64>,
    pub flops_ratio_infinite: bool,
    pub token_deltas: Vec<TokenDelta>,
}

/// Compares `b` against `a` on the same task set.
pub fn compare_runs(a: &RunMetrics, b: &RunMetrics) -> Result<Comparison, MetricsError> {
    let mut ids_a: Vec<&str> = a.per_example.iter().map(|e| e.task_id.as_str()).collect();
    let mut ids_b: Vec<&str> = b.per_example.iter().map(|e| e.task_id.as_str()).collect();
    ids_a.sort_unstable();
    ids_b.sort_unstable();
    if ids_a != ids_b {
        return Err(MetricsError::Input(format!(
            "runs cover different task sets ({} vs {} examples)",
            ids_a.len(),
            ids_b.len()
        )));
    }
    let accuracy_delta = match (a.accuracy(), b.accuracy()) {
        (Some(x), Some(y)) => y - x,
        _ => 0.0,
    };
    let (flops_ratio, flops_ratio_infinite) = match (a.flops, b.flops) {
        (0, 0) => (Some(1.0), false),
        (0, _) => (None, true),
        (x, y) => (Some(y as f64 / x as f64), false),
    };
    let token_deltas = a
        .per_example
        .iter()
        .map(|ea| {
            let eb = b.per_example.iter().find(|e| e.task_id == ea.task_id).expect("task sets match");
            TokenDelta { task_id: ea.task_id.clone(), delta: eb.tokens as i128 - ea.tokens as i128 }
        })
        .collect();
    Ok(Comparison { accuracy_delta, flops_ratio, flops_ratio_infinite, token_deltas })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "markdown-table" | "md" => Ok(Self::Markdown),
            other => Err(MetricsError::Input(format!("unknown report format {other:?}"))),
        }
    }
}

const CSV_HEADER: [&str; 11] = [
    "method",
    "benchmark",
    "task_id",
    "predicted",
    "gold",
    "correct",
    "tokens",
    "rollout_tokens",
    "stop_step",
    "prune_count",
    "error",
];

/// Serialises `metrics` in `format`. Output depends only on the input.
///
/// * JSON: the `RunMetrics` array, pretty-printed, newline-terminated.
/// * CSV: one row per example and per failure, with a header row.
/// * Markdown: one row per method; a column per benchmark with accuracy in
///   percent, then `Avg.` and total FLOPs.
pub fn emit_report(metrics: &[RunMetrics], format: ReportFormat) -> Result<Vec<u8>, MetricsError> {
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(metrics).map_err(|e| MetricsError::Input(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => emit_csv(metrics),
        ReportFormat::Markdown => Ok(emit_markdown(metrics).into_bytes()),
    }
}

/// Parses a JSON report produced by [`emit_report`].
pub fn parse_report(bytes: &[u8]) -> Result<Vec<RunMetrics>, MetricsError> {
    serde_json::from_slice(bytes).map_err(|e| MetricsError::Input(format!("malformed report: {e}")))
}

fn emit_csv(metrics: &[RunMetrics]) -> Result<Vec<u8>, MetricsError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| MetricsError::Input(e.to_string());
    w.write_record(CSV_HEADER).map_err(err)?;
    for m in metrics {
        for e in &m.per_example {
            w.write_record([
                m.method.as_str(),
                &m.benchmark,
                &e.task_id,
                &e.predicted,
                &e.gold,
                if e.correct { "true" } else { "false" },
                &e.tokens.to_string(),
                &e.rollout_tokens.to_string(),
                &e.stop_step.to_string(),
                &e.prune_count.to_string(),
                "",
            ])
            .map_err(err)?;
        }
        for f in &m.failures {
            w.write_record([m.method.as_str(), &m.benchmark, &f.task_id, "", "", "false", "", "", "", "", &f.error])
                .map_err(err)?;
        }
    }
    w.into_inner().map_err(|e| MetricsError::Input(e.to_string()))
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen: Vec<&str> = Vec::new();
    for item in items {
        if !seen.contains(&item) {
            seen.push(item);
        }
    }
    seen
}

fn emit_markdown(metrics: &[RunMetrics]) -> String {
    let benchmarks = first_seen(metrics.iter().map(|m| m.benchmark.as_str()));
    let methods = first_seen(metrics.iter().map(|m| m.method.as_str()));
    let mut out = String::from("| Method |");
    for b in &benchmarks {
        let _ = write!(out, " {b} |");
    }
    out.push_str(" Avg. | FLOPs |\n|---|");
    out.push_str(&"---|".repeat(benchmarks.len() + 2));
    out.push('\n');
    for method in methods {
        let rows: Vec<&RunMetrics> = metrics.iter().filter(|m| m.method.as_str() == method).collect();
        let _ = write!(out, "| {method} |");
        let mut accs = Vec::new();
        for b in &benchmarks {
            let acc = rows.iter().find(|m| m.benchmark == *b).and_then(|m| m.accuracy());
            match acc {
                Some(a) => {
                    accs.push(a);
                    let _ = write!(out, " {:.2} |", 100.0 * a);
                }
                None => out.push_str(" - |"),
            }
        }
        if accs.is_empty() {
            out.push_str(" - |");
        } else {
            let _ = write!(out, " {:.2} |", 100.0 * crate::process::mean(&accs));
        }
        let total: u128 = rows.iter().fold(0u128, |acc, m| acc.saturating_add(m.flops));
        let _ = writeln!(out, " {:.2e} |", total as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, predicted: &str, gold: &str, tokens: u64) -> ExampleRecord {
        ExampleRecord {
            task_id: id.into(),
            predicted: predicted.into(),
            gold: gold.into(),
            correct: is_correct(predicted, gold),
            tokens,
            rollout_tokens: tokens / 2,
            stop_step: 3,
            prune_count: 1,
        }
    }

    fn run(method: Method, bench: &str, tokens: &[u64]) -> RunMetrics {
        let mut m = RunMetrics::new(method, bench, 8_000_000_000, true);
        for (i, &t) in tokens.iter().enumerate() {
            m.push(record(&format!("t{i}"), "4", if i % 2 == 0 { "4" } else { "5" }, t));
        }
        m
    }

    #[test]
    fn flops_examples() {
        assert_eq!(flops(100, 7_000_000_000), 4_200_000_000_000);
        assert_eq!(flops(0, 7), 0);
        assert_eq!(flops(1, 1), 6);
        assert_eq!(flops(u64::MAX, u64::MAX), u128::MAX);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[record("a", "4", "4", 1)]).unwrap(), 1.0);
        assert_eq!(accuracy(&[record("a", "4.0", "4", 1)]).unwrap(), 1.0);
        assert_eq!(accuracy(&[record("a", "4", "4", 1), record("b", "", "4", 1)]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[]), Err(MetricsError::Precondition(_))));
    }

    #[test]
    fn rollout_tokens_can_be_excluded() {
        let mut m = RunMetrics::new(Method::Mfs, "x", 2, false);
        m.push(record("a", "4", "4", 10));
        assert_eq!(m.tokens_generated, 5);
        assert_eq!(m.flops, 60);
    }

    #[test]
    fn failures_count_as_incorrect() {
        let mut m = run(Method::Mfs, "x", &[4]);
        m.push_failure(FailureRecord { task_id: "t9".into(), error: "boom".into() });
        assert_eq!((m.correct, m.total), (1, 2));
    }

    #[test]
    fn compare_identical_and_reference_scale_runs() {
        let a = run(Method::Mfs, "x", &[10, 20]);
        let c = compare_runs(&a, &a).unwrap();
        assert_eq!(c.flops_ratio, Some(1.0));
        assert_eq!(c.accuracy_delta, 0.0);
        assert!(c.token_deltas.iter().all(|d| d.delta == 0));

        let mfs = run(Method::Mfs, "reclor", &[273]);
        let phi = run(Method::Phi, "reclor", &[401]);
        let ratio = compare_runs(&mfs, &phi).unwrap().flops_ratio.unwrap();
        assert!((ratio - 1.4689).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn compare_guards_zero_flops_and_task_mismatch() {
        let zero = run(Method::Mfs, "x", &[0]);
        let some = run(Method::Phi, "x", &[5]);
        let c = compare_runs(&zero, &some).unwrap();
        assert!(c.flops_ratio_infinite);
        assert_eq!(c.flops_ratio, None);
        let other = run(Method::Phi, "x", &[5, 6]);
        assert!(matches!(compare_runs(&zero, &other), Err(MetricsError::Input(_))));
    }

    #[test]
    fn empty_markdown_is_header_only() {
        let md = String::from_utf8(emit_report(&[], ReportFormat::Markdown).unwrap()).unwrap();
        assert_eq!(md, "| Method | Avg. | FLOPs |\n|---|---|---|\n");
        let csv = String::from_utf8(emit_report(&[], ReportFormat::Csv).unwrap()).unwrap();
        assert_eq!(csv.lines().count(), 1);
    }

    #[test]
    fn one_row_markdown() {
        let m = run(Method::Mfs, "gsm8k", &[100, 200]);
        let md = String::from_utf8(emit_report(&[m], ReportFormat::Markdown).unwrap()).unwrap();
        assert_eq!(md, "| Method | gsm8k | Avg. | FLOPs |\n|---|---|---|---|\n| mfs | 50.00 | 50.00 | 1.44e13 |\n");
    }

    #[test]
    fn json_round_trip() {
        let ms = vec![run(Method::Mfs, "a", &[1, 2, 3]), run(Method::Phi, "b", &[u64::MAX / 8])];
        let bytes = emit_report(&ms, ReportFormat::Json).unwrap();
        assert_eq!(parse_report(&bytes).unwrap(), ms);
    }

    #[test]
    fn csv_quotes_fields() {
        let mut m = RunMetrics::new(Method::ArCot, "b", 1, true);
        m.push(record("id,1", "a \"b\"", "c", 1));
        let csv = String::from_utf8(emit_report(&[m], ReportFormat::Csv).unwrap()).unwrap();
        assert!(csv.lines().nth(1).unwrap().starts_with("ar-cot,b,\"id,1\",\"a \"\"b\"\"\",c,false,"));
    }

    #[test]
    fn unknown_format_is_rejected() {
        assert!("xml".parse::<ReportFormat>().is_err());
        assert_eq!("markdown-table".parse::<ReportFormat>().unwrap(), ReportFormat::Markdown);
    }
}
