use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Method;
use super::HarnessError;
use crate::meta::RoundLog;

/// Outcome of one (method, scenario, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub scenario: String,
    pub seed: u64,
    /// Meta-training rounds behind the evaluated policy.
    pub rounds_trained: usize,
    /// Real simulator transitions counted for training and adaptation.
    pub real_transitions_used: u64,
    pub avg_travel_time_s: f64,
    /// Exploration rate of the evaluated episode.
    pub final_epsilon: f64,
    /// Kept out of `results.csv` so reruns produce identical files.
    #[serde(skip)]
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// One point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub method: Method,
    pub scenario: String,
    pub seed: u64,
    /// `meta-train`, `adapt`, `train` or `eval`.
    pub stage: String,
    pub episode: usize,
    pub travel_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub scenario: String,
    pub runs: usize,
    pub failed: usize,
    pub mean_travel_time_s: f64,
    /// Sample standard deviation across seeds; 0 for a single run.
    pub std_travel_time_s: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean and spread of travel time across seeds for each (method, scenario),
/// in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, &str)> = Vec::new();
    for r in rows {
        if !keys.contains(&(r.method, r.scenario.as_str())) {
            keys.push((r.method, &r.scenario));
        }
    }
    keys.into_iter()
        .map(|(method, scenario)| {
            let group: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method && r.scenario == scenario).collect();
            let ok: Vec<f64> = group.iter().filter(|r| r.is_ok()).map(|r| r.avg_travel_time_s).collect();
            let (mean, std) = mean_std(&ok);
            SummaryRow {
                method,
                scenario: scenario.to_string(),
                runs: ok.len(),
                failed: group.len() - ok.len(),
                mean_travel_time_s: mean,
                std_travel_time_s: std,
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    for r in records {
        w.serialize(r).map_err(|e| HarnessError::Csv(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<(), HarnessError> {
    write_csv(path, rows)
}

pub fn write_curves(path: impl AsRef<Path>, points: &[CurvePoint]) -> Result<(), HarnessError> {
    write_csv(path, points)
}

pub fn write_summary(path: impl AsRef<Path>, summary: &[SummaryRow]) -> Result<(), HarnessError> {
    write_csv(path, summary)
}

#[derive(Serialize)]
struct Timing<'a> {
    method: Method,
    scenario: &'a str,
    seed: u64,
    wall_time_s: f64,
}

pub fn write_timings(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<(), HarnessError> {
    let timings: Vec<Timing> = rows
        .iter()
        .map(|r| Timing { method: r.method, scenario: &r.scenario, seed: r.seed, wall_time_s: r.wall_time_s })
        .collect();
    write_csv(path, &timings)
}

#[derive(Serialize)]
struct RoundRecord {
    round: usize,
    tasks: String,
    epsilon: f64,
    real_transitions: u64,
    imaginary_transitions: u64,
    meta_updates: u64,
    real_loss: f64,
    imaginary_loss: f64,
    model_loss: f64,
    travel_time_s: f64,
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// One line per meta-training round; per-task values are averaged.
pub fn write_round_logs(path: impl AsRef<Path>, logs: &[RoundLog]) -> Result<(), HarnessError> {
    let records: Vec<RoundRecord> = logs
        .iter()
        .map(|l| RoundRecord {
            round: l.round,
            tasks: l.tasks.join(" "),
            epsilon: l.epsilon,
            real_transitions: l.real_transitions,
            imaginary_transitions: l.imaginary_transitions,
            meta_updates: l.meta_updates,
            real_loss: l.real_loss,
            imaginary_loss: l.imaginary_loss,
            model_loss: mean(&l.model_loss),
            travel_time_s: mean(&l.travel_time_s),
        })
        .collect();
    write_csv(path, &records)
}

/// Reads a `results.csv`; wall times are not stored there and read as 0.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, HarnessError> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::io(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| HarnessError::Csv(format!("{}: {e}", path.display()))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodScore {
    pub method: Method,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    /// One entry per compared method, in `Comparison::methods` order.
    pub scores: Vec<MethodScore>,
    pub best_baseline: Method,
    pub best_baseline_mean: f64,
    pub candidate_mean: f64,
    /// Relative travel-time reduction of the candidate against the best
    /// baseline, in percent.
    pub improvement_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub candidate: Method,
    pub methods: Vec<Method>,
    pub rows: Vec<ComparisonRow>,
}

/// Per scenario, finds the baseline with the lowest mean travel time and the
/// candidate's improvement over it. Failed runs are ignored. Every method
/// must cover the same scenarios.
pub fn compare_methods(rows: &[ResultRow], candidate: Method) -> Result<Comparison, HarnessError> {
    let ok: Vec<ResultRow> = rows.iter().filter(|r| r.is_ok()).cloned().collect();
    let summary = summarize(&ok);
    let mut methods: Vec<Method> = Vec::new();
    for s in &summary {
        if !methods.contains(&s.method) {
            methods.push(s.method);
        }
    }
    if !methods.contains(&candidate) {
        return Err(HarnessError::Compare(format!("no successful `{candidate}` runs")));
    }
    if methods.len() < 2 {
        return Err(HarnessError::Compare("need at least two methods".into()));
    }
    let scenarios_of = |m: Method| -> BTreeSet<&str> {
        summary.iter().filter(|s| s.method == m).map(|s| s.scenario.as_str()).collect()
    };
    let reference = scenarios_of(candidate);
    for &m in &methods {
        let other = scenarios_of(m);
        if other != reference {
            let missing: Vec<_> = reference.symmetric_difference(&other).copied().collect();
            return Err(HarnessError::Compare(format!(
                "`{m}` and `{candidate}` cover different scenarios: {}",
                missing.join(", ")
            )));
        }
    }
    let mut scenario_order: Vec<&str> = Vec::new();
    for s in &summary {
        if !scenario_order.contains(&s.scenario.as_str()) {
            scenario_order.push(&s.scenario);
        }
    }
    let rows = scenario_order
        .into_iter()
        .map(|scenario| {
            let scores: Vec<MethodScore> = methods
                .iter()
                .map(|&m| {
                    let s = summary.iter().find(|s| s.method == m && s.scenario == scenario).expect("covered");
                    MethodScore { method: m, mean: s.mean_travel_time_s, std: s.std_travel_time_s }
                })
                .collect();
            let best = scores
                .iter()
                .filter(|s| s.method != candidate)
                .min_by(|a, b| a.mean.total_cmp(&b.mean))
                .expect("at least one baseline");
            let cand = scores.iter().find(|s| s.method == candidate).expect("candidate scored").mean;
            ComparisonRow {
                scenario: scenario.to_string(),
                best_baseline: best.method,
                best_baseline_mean: best.mean,
                candidate_mean: cand,
                improvement_pct: (best.mean - cand) / best.mean * 100.0,
                scores,
            }
        })
        .collect();
    Ok(Comparison { candidate, methods, rows })
}

impl Comparison {
    /// Aligned plain-text table; a candidate worse than the best baseline
    /// shows `-` in the improvement column.
    pub fn to_text(&self) -> String {
        let mut header = vec!["scenario".to_string()];
        header.extend(self.methods.iter().map(|m| m.to_string()));
        header.push("best baseline".into());
        header.push("improvement".into());
        let mut table = vec![header];
        for r in &self.rows {
            let mut line = vec![r.scenario.clone()];
            line.extend(r.scores.iter().map(|s| format!("{:.2} ± {:.2}", s.mean, s.std)));
            line.push(r.best_baseline.to_string());
            line.push(if r.improvement_pct < 0.0 { "-".into() } else { format!("{:.2}%", r.improvement_pct) });
            table.push(line);
        }
        let widths: Vec<usize> =
            (0..table[0].len()).map(|c| table.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for line in &table {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell}{}", " ".repeat(w - cell.chars().count())))
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), HarnessError> {
        let path = path.as_ref();
        let csv_err = |e: csv::Error| HarnessError::Csv(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::io(path, e))?;
        let mut header = vec!["scenario".to_string()];
        for m in &self.methods {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        header.extend(["best_baseline".into(), "improvement_pct".into()]);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![r.scenario.clone()];
            for s in &r.scores {
                rec.push(s.mean.to_string());
                rec.push(s.std.to_string());
            }
            rec.push(r.best_baseline.to_string());
            rec.push(r.improvement_pct.to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| HarnessError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, scenario: &str, seed: u64, tt: f64) -> ResultRow {
        ResultRow {
            method,
            scenario: scenario.into(),
            seed,
            rounds_trained: 0,
            real_transitions_used: 0,
            avg_travel_time_s: tt,
            final_epsilon: 0.2,
            wall_time_s: 1.5,
            error: None,
        }
    }

    #[test]
    fn improvement_over_best_baseline() {
        let rows = [
            row(Method::ModelLight, "a", 0, 90.0),
            row(Method::MetaLightLike, "a", 0, 100.0),
            row(Method::FixedCycle, "a", 0, 150.0),
        ];
        let c = compare_methods(&rows, Method::ModelLight).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].best_baseline, Method::MetaLightLike);
        assert!((c.rows[0].improvement_pct - 10.0).abs() < 1e-12);
        assert!(c.to_text().contains("10.00%"));
    }

    #[test]
    fn worse_candidate_is_negative_and_dashed() {
        let rows = [row(Method::ModelLight, "a", 0, 120.0), row(Method::FixedCycle, "a", 0, 100.0)];
        let c = compare_methods(&rows, Method::ModelLight).unwrap();
        assert!((c.rows[0].improvement_pct + 20.0).abs() < 1e-12);
        let text = c.to_text();
        let last = text.lines().nth(1).unwrap();
        assert!(last.trim_end().ends_with('-'), "{text}");
        assert!(!text.contains('%'));
    }

    #[test]
    fn comparison_errors() {
        let mismatched = [row(Method::ModelLight, "a", 0, 1.0), row(Method::FixedCycle, "b", 0, 1.0)];
        assert!(matches!(compare_methods(&mismatched, Method::ModelLight), Err(HarnessError::Compare(_))));
        let single = [row(Method::ModelLight, "a", 0, 1.0)];
        assert!(compare_methods(&single, Method::ModelLight).is_err());
        let no_candidate = [row(Method::DqnScratch, "a", 0, 1.0), row(Method::FixedCycle, "a", 0, 1.0)];
        assert!(compare_methods(&no_candidate, Method::ModelLight).is_err());
    }

    #[test]
    fn failed_rows_are_ignored() {
        let mut bad = row(Method::FixedCycle, "a", 1, f64::NAN);
        bad.error = Some("boom".into());
        let rows = [row(Method::ModelLight, "a", 0, 90.0), row(Method::FixedCycle, "a", 0, 100.0), bad];
        let c = compare_methods(&rows, Method::ModelLight).unwrap();
        assert_eq!(c.rows[0].best_baseline_mean, 100.0);
        let s = summarize(&rows);
        let fixed = s.iter().find(|s| s.method == Method::FixedCycle).unwrap();
        assert_eq!((fixed.runs, fixed.failed), (1, 1));
    }

    #[test]
    fn summary_uses_sample_std_over_seeds() {
        let values = [100.0, 110.0, 90.0, 105.0, 95.0];
        let rows: Vec<_> = values.iter().enumerate().map(|(i, &v)| row(Method::MamlLike, "a", i as u64, v)).collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].runs, 5);
        assert!((s[0].mean_travel_time_s - 100.0).abs() < 1e-12);
        // deviations 0, 10, -10, 5, -5: squares sum to 250, over n - 1 = 4
        assert!((s[0].std_travel_time_s - 62.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn results_csv_roundtrip_without_wall_time() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.csv");
        let mut failed = row(Method::DqnScratch, "b", 3, f64::NAN);
        failed.error = Some("diverged, badly".into());
        let rows = vec![row(Method::ModelLight, "a", 0, 91.25), failed];
        write_results(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "method,scenario,seed,rounds_trained,real_transitions_used,avg_travel_time_s,final_epsilon,error"
        );
        let back = read_results(&path).unwrap();
        assert_eq!(back[0], ResultRow { wall_time_s: 0.0, ..rows[0].clone() });
        assert_eq!(back[1].error.as_deref(), Some("diverged, badly"));
        assert!(back[1].avg_travel_time_s.is_nan());
    }

    #[test]
    fn comparison_csv_has_one_header_line() {
        let rows = [row(Method::ModelLight, "a", 0, 90.0), row(Method::FixedCycle, "a", 0, 100.0)];
        let c = compare_methods(&rows, Method::ModelLight).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cmp.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "scenario,modellight_mean,modellight_std,fixed-cycle_mean,fixed-cycle_std,best_baseline,improvement_pct");
        assert_eq!(lines.len(), 2);
    }
}
