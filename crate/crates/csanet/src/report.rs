//! Evaluation reports as CSV and JSON.
//!
//! CSV: a `metric,value` header, one row per scalar metric, then a
//! `confusion` marker row followed by the L×L counts (rows are true
//! classes). Floats are written in shortest round-trip form, so reloading
//! gives equal values.

use csanet_core::metrics::{ConfusionMatrix, EvalReport};
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub fn to_csv(r: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    out.push_str(&format!("n_classes,{}\n", r.confusion.classes()));
    out.push_str(&format!("n_trials,{}\n", r.confusion.total()));
    out.push_str(&format!("accuracy,{}\n", r.acc));
    out.push_str(&format!("kappa,{}\n", r.kappa));
    for (k, v) in r.per_class_recall.iter().enumerate() {
        out.push_str(&format!("recall_{k},{v}\n"));
    }
    for (s, v) in &r.per_subject {
        out.push_str(&format!("subject_{s},{v}\n"));
    }
    if let Some(std) = r.std {
        out.push_str(&format!("std,{std}\n"));
    }
    out.push_str("confusion\n");
    for row in r.confusion.rows() {
        out.push_str(&row.iter().map(u64::to_string).collect::<Vec<_>>().join(","));
        out.push('\n');
    }
    out
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::Core(csanet_core::Error::Data(format!("report line {line}: {}", msg.into())))
}

pub fn from_csv(text: &str) -> Result<EvalReport> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "metric,value")) => {}
        _ => return Err(bad(1, "expected header metric,value")),
    }
    let (mut acc, mut kappa, mut std) = (None, None, None);
    let mut recall = Vec::new();
    let mut per_subject = Vec::new();
    let mut rows = Vec::new();
    let mut in_confusion = false;
    for (n, line) in lines {
        if line.is_empty() {
            continue;
        }
        if in_confusion {
            let row = line.split(',').map(|v| v.parse::<u64>().map_err(|e| bad(n, e.to_string()))).collect::<Result<Vec<_>>>()?;
            rows.push(row);
            continue;
        }
        if line == "confusion" {
            in_confusion = true;
            continue;
        }
        let (k, v) = line.split_once(',').ok_or_else(|| bad(n, "expected metric,value"))?;
        let x: f64 = v.parse().map_err(|_| bad(n, format!("bad number {v:?}")))?;
        match k {
            "n_classes" | "n_trials" => {}
            "accuracy" => acc = Some(x),
            "kappa" => kappa = Some(x),
            "std" => std = Some(x),
            _ if k.starts_with("recall_") => recall.push(x),
            _ if k.starts_with("subject_") => {
                let id = k["subject_".len()..].parse().map_err(|_| bad(n, format!("bad subject id in {k}")))?;
                per_subject.push((id, x));
            }
            _ => return Err(bad(n, format!("unknown metric {k}"))),
        }
    }
    let confusion = ConfusionMatrix::from_rows(&rows)?;
    Ok(EvalReport {
        confusion,
        acc: acc.ok_or_else(|| bad(0, "missing accuracy"))?,
        kappa: kappa.ok_or_else(|| bad(0, "missing kappa"))?,
        per_class_recall: recall,
        per_subject,
        std,
    })
}

pub fn to_json(r: &EvalReport) -> String {
    let v = json!({
        "accuracy": r.acc,
        "kappa": r.kappa,
        "per_class_recall": r.per_class_recall,
        "per_subject": r.per_subject.iter().map(|(s, a)| json!({"subject": s, "accuracy": a})).collect::<Vec<_>>(),
        "std": r.std,
        "confusion": r.confusion.rows(),
    });
    serde_json::to_string_pretty(&v).expect("report serializes") + "\n"
}

pub fn from_json(text: &str) -> Result<EvalReport> {
    let v: Value = serde_json::from_str(text).map_err(|e| bad(e.line(), e.to_string()))?;
    let f = |k: &str| v[k].as_f64().ok_or_else(|| bad(0, format!("missing number {k}")));
    let confusion: Vec<Vec<u64>> = serde_json::from_value(v["confusion"].clone()).map_err(|e| bad(0, e.to_string()))?;
    let per_subject = v["per_subject"]
        .as_array()
        .ok_or_else(|| bad(0, "missing per_subject"))?
        .iter()
        .map(|e| {
            let s = e["subject"].as_u64().and_then(|s| u32::try_from(s).ok());
            let a = e["accuracy"].as_f64();
            s.zip(a).ok_or_else(|| bad(0, "bad per_subject entry"))
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        confusion: ConfusionMatrix::from_rows(&confusion)?,
        acc: f("accuracy")?,
        kappa: f("kappa")?,
        per_class_recall: serde_json::from_value(v["per_class_recall"].clone()).map_err(|e| bad(0, e.to_string()))?,
        per_subject,
        std: v["std"].as_f64(),
    })
}

/// Percentages with two decimals.
pub fn summary(r: &EvalReport) -> String {
    let mut s = format!("accuracy {:.2}%  kappa {:.4}", r.acc * 100.0, r.kappa);
    if let Some(std) = r.std {
        s.push_str(&format!("  std {:.2}", std * 100.0));
    }
    s
}
