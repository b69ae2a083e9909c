//! Method comparison tables: accuracies, MIA, gaps against the retrained
//! model and RCD.

use std::fmt::Write as _;

use forge_core::data::SplitMode;
use forge_core::metrics::EvalReport;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What an evaluation was computed on; rows are comparable only when this
/// matches.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInfo {
    pub split_mode: SplitMode,
    /// Digest of the forget set.
    pub forget_digest: String,
}

/// One evaluated model, as written by `eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub label: String,
    /// Checkpoint role (`original`, `retrain`, `unlearned`, ...).
    pub role: String,
    pub checkpoint_sha256: String,
    pub task: TaskInfo,
    pub eval: EvalReport,
    pub rcd: Option<f64>,
}

impl EvalRow {
    fn is_retrain(&self) -> bool {
        self.role == "retrain"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub role: String,
    /// `(metric, value, gap)`; the gap is against the retrain row.
    pub metrics: Vec<(String, f64, Option<f64>)>,
    pub avg_gap: Option<f64>,
    pub rcd: Option<f64>,
    /// 1 for the largest RCD.
    pub rcd_rank: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareTable {
    pub task: TaskInfo,
    pub reference: Option<String>,
    pub rows: Vec<CompareRow>,
    /// Plot-ready `(avg_gap, rcd)` per row that has both.
    pub pairs: Vec<(String, f64, f64)>,
}

pub fn compare(rows: &[EvalRow]) -> Result<CompareTable> {
    let first = rows.first().ok_or_else(|| Error::Usage("compare needs at least one report".into()))?;
    if let Some(r) = rows.iter().find(|r| r.task != first.task) {
        return Err(Error::MixedTasks(format!(
            "'{}' was evaluated on forget set {} but '{}' on {}",
            r.label, r.task.forget_digest, first.label, first.task.forget_digest
        )));
    }
    let reference = rows.iter().find(|r| r.is_retrain());
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        let eval = match reference {
            Some(refr) => r.eval.clone().with_reference(&refr.eval)?,
            None => r.eval.clone(),
        };
        let gaps: Vec<Option<f64>> = eval
            .metrics()
            .iter()
            .map(|(name, _)| eval.gaps.iter().find(|g| g.metric == *name).map(|g| g.gap))
            .collect();
        let metrics = eval.metrics().into_iter().zip(gaps).map(|((n, v), g)| (n.to_string(), v, g)).collect();
        out.push(CompareRow { label: r.label.clone(), role: r.role.clone(), metrics, avg_gap: eval.avg_gap, rcd: r.rcd, rcd_rank: None });
    }
    let mut ranked: Vec<usize> = (0..out.len()).filter(|&i| out[i].rcd.is_some()).collect();
    ranked.sort_by(|&a, &b| out[b].rcd.unwrap().total_cmp(&out[a].rcd.unwrap()).then(a.cmp(&b)));
    for (rank, i) in ranked.into_iter().enumerate() {
        out[i].rcd_rank = Some(rank + 1);
    }
    let pairs = out.iter().filter_map(|r| Some((r.label.clone(), r.avg_gap?, r.rcd?))).collect();
    Ok(CompareTable { task: first.task.clone(), reference: reference.map(|r| r.label.clone()), rows: out, pairs })
}

impl CompareTable {
    /// Aligned text with gaps in parentheses.
    pub fn text(&self) -> String {
        let names: Vec<&str> = self.rows.first().map(|r| r.metrics.iter().map(|m| m.0.as_str()).collect()).unwrap_or_default();
        let mut s = format!("{:<16}", "method");
        for n in &names {
            let _ = write!(s, " {n:>22}");
        }
        let _ = writeln!(s, " {:>9} {:>10} {:>5}", "avg_gap", "rcd", "rank");
        let opt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        for r in &self.rows {
            let _ = write!(s, "{:<16}", r.label);
            for (_, v, g) in &r.metrics {
                let cell = match g {
                    Some(g) => format!("{v:.4} ({g:.4})"),
                    None => format!("{v:.4}"),
                };
                let _ = write!(s, " {cell:>22}");
            }
            let _ = writeln!(s, " {:>9} {:>10} {:>5}", opt(r.avg_gap, 4), opt(r.rcd, 4), r.rcd_rank.map_or("-".into(), |k| k.to_string()));
        }
        s
    }

    pub fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string(), "role".to_string()];
        if let Some(r) = self.rows.first() {
            for (n, _, _) in &r.metrics {
                header.push(n.clone());
                header.push(format!("{n}_gap"));
            }
        }
        header.extend(["avg_gap", "rcd", "rcd_rank"].map(String::from));
        w.write_record(&header)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.rows {
            let mut rec = vec![r.label.clone(), r.role.clone()];
            for (_, v, g) in &r.metrics {
                rec.push(v.to_string());
                rec.push(opt(*g));
            }
            rec.extend([opt(r.avg_gap), opt(r.rcd), r.rcd_rank.map_or(String::new(), |k| k.to_string())]);
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn pairs_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["label", "avg_gap", "rcd"])?;
        for (l, g, r) in &self.pairs {
            w.write_record([l.clone(), g.to_string(), r.to_string()])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use forge_core::data::{gen_blobs, split_random};
    use forge_core::metrics::eval_theta;
    use forge_core::models::ModelSpec;
    use forge_core::training::{retrain_oracle, train_original, OptimizerConfig};

    fn rows() -> Vec<EvalRow> {
        let data = split_random(&gen_blobs(20, 3, 2, 3.0, 1.0, 4).unwrap(), 0.3, 4).unwrap();
        let spec = ModelSpec::logistic(2, 3, 1e-3).unwrap();
        let cfg = OptimizerConfig::gd(0.5, 50);
        let (o, _) = train_original(&data, &spec, &cfg, 4).unwrap();
        let (r, _) = retrain_oracle(&data, &spec, &cfg, 4).unwrap();
        let task = TaskInfo { split_mode: data.split_mode(), forget_digest: data.forget_digest() };
        let row = |label: &str, role: &str, theta, rcd| EvalRow {
            label: label.into(),
            role: role.into(),
            checkpoint_sha256: String::new(),
            task: task.clone(),
            eval: eval_theta(theta, &spec, &data).unwrap(),
            rcd,
        };
        vec![row("original", "original", &o.theta, Some(0.5)), row("retrain", "retrain", &r.theta, Some(2.0)), row("ft", "unlearned", &o.theta, None)]
    }

    #[test]
    fn retrain_row_has_zero_gaps() {
        let t = compare(&rows()).unwrap();
        assert_eq!(t.reference.as_deref(), Some("retrain"));
        let r = &t.rows[1];
        assert!(r.metrics.iter().all(|m| m.2 == Some(0.0)));
        assert_eq!(r.avg_gap, Some(0.0));
        assert!(t.text().lines().nth(2).unwrap().contains("(0.0000)"));
        assert_eq!((t.rows[1].rcd_rank, t.rows[0].rcd_rank, t.rows[2].rcd_rank), (Some(1), Some(2), None));
        assert_eq!(t.pairs.len(), 2);
        let csv = t.csv().unwrap();
        assert!(csv.starts_with("label,role,retain_acc,retain_acc_gap,forget_acc"));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(t.pairs_csv().unwrap().lines().count(), 3);
    }

    #[test]
    fn empty_and_mixed_inputs_are_rejected() {
        assert!(matches!(compare(&[]), Err(Error::Usage(_))));
        let mut rs = rows();
        rs[2].task.forget_digest = "other".into();
        assert!(matches!(compare(&rs), Err(Error::MixedTasks(_))));
    }
}
