//! Frame accuracy, relative distance and per-action comparison reports.
//!
//! Ground truth and predictions are 1-based frame indices where an incomplete
//! attempt is encoded as `T + 1`, which makes both metrics total functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::resample_labeled;
use crate::inference::{predict, AttentionKind};
use crate::model::{ModelParams, Mode};
use crate::sequence::{Label, LabeledSequence};

fn check_range(yhat: usize, tau: usize, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Domain("sequence length must be positive".into()));
    }
    if !(1..=len + 1).contains(&yhat) || !(1..=len + 1).contains(&tau) {
        return Err(Error::Domain(format!(
            "frame indices must lie in 1..={}, got yhat {yhat}, tau {tau}",
            len + 1
        )));
    }
    Ok(())
}

/// Fraction of frames placed on the correct side of the completion moment.
pub fn sequence_accuracy(yhat: usize, tau: usize, len: usize) -> Result<f64> {
    check_range(yhat, tau, len)?;
    let correct = (1..=len)
        .filter(|&t| (t < yhat && t < tau) || (t >= yhat && t >= tau))
        .count();
    Ok(correct as f64 / len as f64)
}

/// `|yhat - tau| / T`.
pub fn relative_distance(yhat: usize, tau: usize, len: usize) -> Result<f64> {
    check_range(yhat, tau, len)?;
    Ok(yhat.abs_diff(tau) as f64 / len as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub id: String,
    pub action: String,
    pub len: usize,
    pub tau_eff: usize,
    pub yhat_eff: usize,
    pub accuracy: f64,
    pub rd: f64,
}

impl EvalRecord {
    pub fn new(id: &str, action: &str, len: usize, tau_eff: usize, yhat_eff: usize) -> Result<Self> {
        Ok(EvalRecord {
            id: id.to_string(),
            action: action.to_string(),
            len,
            tau_eff,
            yhat_eff,
            accuracy: sequence_accuracy(yhat_eff, tau_eff, len)?,
            rd: relative_distance(yhat_eff, tau_eff, len)?,
        })
    }
}

/// Ground truth in the model's resampled frame space.
fn ground_truth(seq: &LabeledSequence, length: usize) -> Result<usize> {
    match (seq.label, seq.tau) {
        (Label::Incomplete, _) => Ok(length + 1),
        (Label::Complete, Some(_)) => Ok(resample_labeled(seq, length)?.tau.expect("tau kept")),
        (Label::Complete, None) => Err(Error::config(format!(
            "{}: evaluation needs the completion frame of every complete sequence",
            seq.id
        ))),
    }
}

/// Scores every sequence with the model of its action. Sequences are
/// evaluated in the model's fixed-length frame space; records are ordered by id.
pub fn evaluate(dataset: &[LabeledSequence], models: &[ModelParams], attention: AttentionKind) -> Result<Vec<EvalRecord>> {
    if dataset.is_empty() {
        return Err(Error::config("evaluation set is empty"));
    }
    let by_action: BTreeMap<&str, &ModelParams> = models.iter().map(|m| (m.meta.action.as_str(), m)).collect();
    let mut records = dataset
        .par_iter()
        .map(|seq| {
            let model = by_action.get(seq.action.as_str()).ok_or_else(|| {
                Error::config(format!("no checkpoint for action {:?}", seq.action))
            })?;
            let length = model.meta.length;
            let tau = ground_truth(seq, length)?;
            let (pred, _) = predict(model, &seq.features, attention)?;
            EvalRecord::new(&seq.id, &seq.action, length, tau, pred.moment.effective(length))
        })
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

pub fn mean_accuracy(records: &[EvalRecord]) -> f64 {
    records.iter().map(|r| r.accuracy).sum::<f64>() / records.len() as f64
}

pub fn mean_rd(records: &[EvalRecord]) -> f64 {
    records.iter().map(|r| r.rd).sum::<f64>() / records.len() as f64
}

/// One line of a comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub action: String,
    pub incomplete_pct: f64,
    pub accuracy_uniform: f64,
    pub accuracy_learnt: f64,
    pub rd_uniform: f64,
    pub rd_learnt: f64,
}

/// Uniform vs learnt attention, per action plus a sequence-weighted total.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub mode: Mode,
    pub rows: Vec<ReportRow>,
    pub total: ReportRow,
    pub sequences: usize,
}

fn row(action: &str, uniform: &[&EvalRecord], learnt: &[&EvalRecord]) -> ReportRow {
    let n = uniform.len() as f64;
    let mean = |rs: &[&EvalRecord], f: fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
    let incomplete = uniform.iter().filter(|r| r.tau_eff == r.len + 1).count() as f64;
    ReportRow {
        action: action.to_string(),
        incomplete_pct: 100.0 * incomplete / n,
        accuracy_uniform: mean(uniform, |r| r.accuracy),
        accuracy_learnt: mean(learnt, |r| r.accuracy),
        rd_uniform: mean(uniform, |r| r.rd),
        rd_learnt: mean(learnt, |r| r.rd),
    }
}

impl Report {
    pub fn compare(mode: Mode, uniform: &[EvalRecord], learnt: &[EvalRecord]) -> Result<Self> {
        if uniform.is_empty() {
            return Err(Error::config("report needs at least one evaluated sequence"));
        }
        let ids = |rs: &[EvalRecord]| rs.iter().map(|r| r.id.clone()).collect::<Vec<_>>();
        if ids(uniform) != ids(learnt) {
            return Err(Error::config("uniform and learnt evaluations cover different sequences"));
        }
        let mut groups: BTreeMap<&str, (Vec<&EvalRecord>, Vec<&EvalRecord>)> = BTreeMap::new();
        for (u, l) in uniform.iter().zip(learnt) {
            let g = groups.entry(u.action.as_str()).or_default();
            g.0.push(u);
            g.1.push(l);
        }
        let rows = groups.iter().map(|(a, (u, l))| row(a, u, l)).collect();
        let all_u: Vec<&EvalRecord> = uniform.iter().collect();
        let all_l: Vec<&EvalRecord> = learnt.iter().collect();
        Ok(Report {
            mode,
            rows,
            total: row("total", &all_u, &all_l),
            sequences: uniform.len(),
        })
    }

    fn labels(&self) -> (&'static str, &'static str) {
        match self.mode {
            Mode::Weak => ("WS-U", "WS-Att"),
            Mode::Supervised => ("S-U", "S-Att"),
        }
    }

    pub fn csv_header(&self) -> String {
        let (u, a) = self.labels();
        format!("action,incomplete_pct,accuracy_{u},accuracy_{a},rd_{u},rd_{a}")
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.action, r.incomplete_pct, r.accuracy_uniform, r.accuracy_learnt, r.rd_uniform, r.rd_learnt
            );
        }
        out
    }

    /// Aligned plain-text table with accuracy in percent.
    pub fn to_table(&self) -> String {
        let (u, a) = self.labels();
        let width = self
            .rows
            .iter()
            .map(|r| r.action.len())
            .chain([6])
            .max()
            .unwrap_or(6);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>10}  {:>10}  {:>10}  {:>10}",
            "action",
            "incomplete %",
            format!("acc {u}"),
            format!("acc {a}"),
            format!("RD {u}"),
            format!("RD {a}")
        );
        let rule = "-".repeat(width + 2 + 12 + 4 * 12);
        let _ = writeln!(out, "{rule}");
        let line = |out: &mut String, r: &ReportRow| {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.1}  {:>10.1}  {:>10.1}  {:>10.3}  {:>10.3}",
                r.action,
                r.incomplete_pct,
                100.0 * r.accuracy_uniform,
                100.0 * r.accuracy_learnt,
                r.rd_uniform,
                r.rd_learnt
            );
        };
        for r in &self.rows {
            line(&mut out, r);
        }
        let _ = writeln!(out, "{rule}");
        line(&mut out, &self.total);
        out
    }

    /// Parses the CSV form back into rows (totals last).
    pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::config("empty report"))?;
        if header.split(',').count() != 6 {
            return Err(Error::config(format!("unexpected report header {header:?}")));
        }
        lines
            .filter(|l| !l.trim().is_empty())
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 6 {
                    return Err(Error::config(format!("malformed report row {line:?}")));
                }
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| Error::config(format!("bad number {s:?} in report")))
                };
                Ok(ReportRow {
                    action: f[0].to_string(),
                    incomplete_pct: num(f[1])?,
                    accuracy_uniform: num(f[2])?,
                    accuracy_learnt: num(f[3])?,
                    rd_uniform: num(f[4])?,
                    rd_learnt: num(f[5])?,
                })
            })
            .collect()
    }
}

/// Writes `csv_path` and a text table next to it (`.txt`); returns the table.
pub fn emit_report(report: &Report, csv_path: &Path) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::config("report has no actions"));
    }
    if let Some(dir) = csv_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(csv_path, report.to_csv()).map_err(|e| Error::io(csv_path, e))?;
    let table = report.to_table();
    let txt = csv_path.with_extension("txt");
    std::fs::write(&txt, &table).map_err(|e| Error::io(&txt, e))?;
    Ok(table)
}

/// `id,action,T,tau_eff,yhat_eff,accuracy,rd`.
pub fn records_csv(records: &[EvalRecord]) -> String {
    let mut out = String::from("id,action,T,tau_eff,yhat_eff,accuracy,rd\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6},{:.6}",
            r.id, r.action, r.len, r.tau_eff, r.yhat_eff, r.accuracy, r.rd
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_metrics() {
        assert!((sequence_accuracy(8, 6, 10).unwrap() - 0.8).abs() < 1e-15);
        assert!((relative_distance(8, 6, 10).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(sequence_accuracy(4, 4, 10).unwrap(), 1.0);
        assert_eq!(sequence_accuracy(11, 11, 10).unwrap(), 1.0);
        assert_eq!(relative_distance(4, 4, 10).unwrap(), 0.0);
        assert_eq!(relative_distance(11, 1, 10).unwrap(), 1.0);
        assert!(matches!(sequence_accuracy(1, 1, 0), Err(Error::Domain(_))));
        assert!(matches!(relative_distance(1, 1, 0), Err(Error::Domain(_))));
        assert!(sequence_accuracy(12, 1, 10).is_err());
    }

    #[test]
    fn symmetric_in_arguments() {
        for t in 1..=9 {
            for y in 1..=t + 1 {
                for tau in 1..=t + 1 {
                    assert_eq!(sequence_accuracy(y, tau, t).unwrap(), sequence_accuracy(tau, y, t).unwrap());
                    assert_eq!(relative_distance(y, tau, t).unwrap(), relative_distance(tau, y, t).unwrap());
                }
            }
        }
    }

    fn rec(id: &str, action: &str, tau: usize, yhat: usize) -> EvalRecord {
        EvalRecord::new(id, action, 10, tau, yhat).unwrap()
    }

    #[test]
    fn report_means_and_totals() {
        let uniform = vec![rec("a1", "pick", 6, 8), rec("a2", "pick", 11, 7), rec("b1", "open", 3, 3)];
        let learnt = vec![rec("a1", "pick", 6, 6), rec("a2", "pick", 11, 11), rec("b1", "open", 3, 4)];
        let r = Report::compare(Mode::Weak, &uniform, &learnt).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.rows[0].action, "open");
        let pick = &r.rows[1];
        assert!((pick.rd_uniform - 0.3).abs() < 1e-12);
        assert_eq!(pick.incomplete_pct, 50.0);
        assert!((r.total.rd_uniform - mean_rd(&uniform)).abs() < 1e-12);
        assert!((r.total.accuracy_learnt - mean_accuracy(&learnt)).abs() < 1e-12);
        let parsed = Report::parse_csv(&r.to_csv()).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[2].action, "total");
        let round = |v: f64| (v * 1e6).round() / 1e6;
        assert_eq!(parsed[2].rd_uniform, round(r.total.rd_uniform));
        assert!(r.to_csv().starts_with("action,incomplete_pct,accuracy_WS-U,accuracy_WS-Att,rd_WS-U,rd_WS-Att\n"));
        assert!(r.to_table().lines().last().unwrap().starts_with("total"));
    }

    #[test]
    fn perfect_single_sequence() {
        let one = vec![rec("x", "a", 4, 4)];
        let r = Report::compare(Mode::Supervised, &one, &one).unwrap();
        assert_eq!(r.total.accuracy_learnt, 1.0);
        assert_eq!(r.total.rd_learnt, 0.0);
    }

    #[test]
    fn empty_report_rejected() {
        assert!(Report::compare(Mode::Weak, &[], &[]).is_err());
        let one = vec![rec("x", "a", 4, 4)];
        let mut r = Report::compare(Mode::Weak, &one, &one).unwrap();
        r.rows.clear();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(&r, &dir.path().join("r.csv")), Err(Error::Config(_))));
    }
}
