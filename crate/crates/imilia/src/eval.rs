//! The `eval` subcommand: joins prediction and ground-truth files, computes
//! the requested metric and bootstraps a confidence interval.
//!
//! Scalar metrics (`auc`, `ap`, `pearson`) join two CSVs on an `id` column
//! and resample rows (slides/patches). Instance metrics (`f1`, `pq`) read
//! the flat instance CSV, match per tile at IoU > 0.5 and resample match
//! units (matched pairs and unmatched instances), i.e. cells.

use std::collections::BTreeMap;
use std::path::Path;

use imilia_core::interpret::CellClass;
use imilia_core::metrics::{
    self, bootstrap_ci, match_instances, pq_dq_sq, BootstrapCi, MatchResult,
};

use crate::cells::{read_instance_csv, InstanceRow};
use crate::error::{ImiliaError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Auc,
    Ap,
    Pearson,
    F1,
    Pq,
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auc" => Ok(Metric::Auc),
            "ap" => Ok(Metric::Ap),
            "pearson" => Ok(Metric::Pearson),
            "f1" => Ok(Metric::F1),
            "pq" => Ok(Metric::Pq),
            other => Err(format!("unknown metric {other:?}, want auc|ap|pearson|f1|pq")),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    /// Bootstrap replicates; 0 disables the interval.
    pub bootstrap: usize,
    pub level: f64,
    pub seed: u64,
}

/// One reported line: a metric value with an optional interval.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalLine {
    pub metric: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub n: usize,
    pub skipped: usize,
}

impl EvalLine {
    fn from_ci(metric: String, ci: BootstrapCi, n: usize) -> Self {
        Self {
            metric,
            value: ci.point,
            lo: Some(ci.lo),
            hi: Some(ci.hi),
            n,
            skipped: ci.skipped,
        }
    }

    /// Stable key=value rendering for scripting.
    pub fn render(&self) -> String {
        let mut line = format!("metric={} value={}", self.metric, self.value);
        if let (Some(lo), Some(hi)) = (self.lo, self.hi) {
            line.push_str(&format!(" ci_lo={lo} ci_hi={hi}"));
        }
        line.push_str(&format!(" n={}", self.n));
        if self.skipped > 0 {
            line.push_str(&format!(" skipped_replicates={}", self.skipped));
        }
        line
    }
}

fn read_two_column(path: &Path, value_name: &str) -> Result<BTreeMap<String, f64>> {
    let mut reader =
        csv::Reader::from_path(path).map_err(|e| ImiliaError::format(path, e.to_string()))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| ImiliaError::format(path, e.to_string()))?
        .iter()
        .map(|s| s.to_string())
        .collect();
    if headers != ["id", value_name] {
        return Err(ImiliaError::format(
            path,
            format!("unexpected header {headers:?}, want [id, {value_name}]"),
        ));
    }
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| ImiliaError::format(path, e.to_string()))?;
        let id = row.get(0).unwrap_or("").to_string();
        let value: f64 = row
            .get(1)
            .unwrap_or("")
            .parse()
            .map_err(|_| ImiliaError::format(path, format!("bad {value_name} for id {id:?}")))?;
        if out.insert(id.clone(), value).is_some() {
            return Err(ImiliaError::format(path, format!("duplicate id {id:?}")));
        }
    }
    Ok(out)
}

/// Inner-join scores and labels/values on id, sorted by id.
fn join(
    pred: &BTreeMap<String, f64>,
    gt: &BTreeMap<String, f64>,
) -> Vec<(f64, f64)> {
    pred.iter()
        .filter_map(|(id, &score)| gt.get(id).map(|&label| (score, label)))
        .collect()
}

pub fn evaluate(
    metric: Metric,
    pred_path: &Path,
    gt_path: &Path,
    opts: &EvalOptions,
) -> Result<Vec<EvalLine>> {
    match metric {
        Metric::Auc | Metric::Ap => {
            let pred = read_two_column(pred_path, "score")?;
            let gt = read_two_column(gt_path, "label")?;
            let rows = join(&pred, &gt);
            if rows.is_empty() {
                return Err(ImiliaError::invalid("no ids common to pred and gt"));
            }
            let name = if metric == Metric::Auc { "auc" } else { "ap" };
            let stat = move |rows: &[(f64, f64)]| -> f64 {
                let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let labels: Vec<u8> = rows.iter().map(|r| r.1 as u8).collect();
                let value = if name == "auc" {
                    metrics::roc_auc(&scores, &labels)
                } else {
                    metrics::average_precision(&scores, &labels)
                };
                value.unwrap_or(f64::NAN)
            };
            let point = stat(&rows);
            if point.is_nan() {
                return Err(ImiliaError::invalid(format!(
                    "{name} undefined on the joined rows (single class?)"
                )));
            }
            let line = if opts.bootstrap > 0 {
                let ci = bootstrap_ci(stat, &rows, opts.bootstrap, opts.level, opts.seed);
                EvalLine::from_ci(name.into(), ci, rows.len())
            } else {
                EvalLine { metric: name.into(), value: point, lo: None, hi: None, n: rows.len(), skipped: 0 }
            };
            Ok(vec![line])
        }
        Metric::Pearson => {
            let pred = read_two_column(pred_path, "value")?;
            let gt = read_two_column(gt_path, "value")?;
            let rows = join(&pred, &gt);
            if rows.len() < 3 {
                return Err(ImiliaError::invalid("pearson needs at least 3 joined rows"));
            }
            let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let (r, p) = metrics::pearson(&xs, &ys)?;
            let stat = |rows: &[(f64, f64)]| -> f64 {
                let xs: Vec<f64> = rows.iter().map(|r| r.0).collect();
                let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
                metrics::pearson(&xs, &ys).map(|(r, _)| r).unwrap_or(f64::NAN)
            };
            let mut lines = Vec::new();
            if opts.bootstrap > 0 {
                let ci = bootstrap_ci(stat, &rows, opts.bootstrap, opts.level, opts.seed);
                lines.push(EvalLine::from_ci("pearson_r".into(), ci, rows.len()));
            } else {
                lines.push(EvalLine {
                    metric: "pearson_r".into(),
                    value: r,
                    lo: None,
                    hi: None,
                    n: rows.len(),
                    skipped: 0,
                });
            }
            lines.push(EvalLine {
                metric: "pearson_p".into(),
                value: p,
                lo: None,
                hi: None,
                n: rows.len(),
                skipped: 0,
            });
            Ok(lines)
        }
        Metric::F1 | Metric::Pq => {
            let pred = read_instance_csv(pred_path)?;
            let gt = read_instance_csv(gt_path)?;
            let units = match_units(&pred, &gt);
            if units.is_empty() {
                return Err(ImiliaError::invalid("no instances to evaluate"));
            }
            match metric {
                Metric::F1 => Ok(f1_lines(&units, opts)),
                Metric::Pq => Ok(pq_lines(&units, opts)),
                _ => unreachable!(),
            }
        }
    }
}

/// Resampling unit of the instance metrics: one matched pair or one
/// unmatched instance (a "cell" in the bootstrap sense).
#[derive(Clone, Debug)]
pub enum MatchUnit {
    Matched { pred_class: CellClass, gt_class: CellClass, iou: f64 },
    UnmatchedPred { class: CellClass },
    UnmatchedGt { class: CellClass },
}

/// Match per tile (instances never match across tiles) and flatten into
/// resampling units.
pub fn match_units(pred: &[InstanceRow], gt: &[InstanceRow]) -> Vec<MatchUnit> {
    let mut tiles: BTreeMap<&str, (Vec<&InstanceRow>, Vec<&InstanceRow>)> = BTreeMap::new();
    for row in pred {
        tiles.entry(&row.tile_id).or_default().0.push(row);
    }
    for row in gt {
        tiles.entry(&row.tile_id).or_default().1.push(row);
    }
    let mut units = Vec::new();
    for (_, (pred_rows, gt_rows)) in tiles {
        let pred_polys: Vec<Vec<(f64, f64)>> =
            pred_rows.iter().map(|r| r.polygon.clone()).collect();
        let gt_polys: Vec<Vec<(f64, f64)>> = gt_rows.iter().map(|r| r.polygon.clone()).collect();
        let matching = match_instances(&pred_polys, &gt_polys);
        for &(pi, gi, iou) in &matching.matched {
            units.push(MatchUnit::Matched {
                pred_class: pred_rows[pi].class.clone(),
                gt_class: gt_rows[gi].class.clone(),
                iou,
            });
        }
        for &pi in &matching.unmatched_pred {
            units.push(MatchUnit::UnmatchedPred { class: pred_rows[pi].class.clone() });
        }
        for &gi in &matching.unmatched_gt {
            units.push(MatchUnit::UnmatchedGt { class: gt_rows[gi].class.clone() });
        }
    }
    units
}

/// Rebuild a `MatchResult` plus class arrays from (possibly resampled) units.
fn rebuild(units: &[MatchUnit]) -> (Vec<CellClass>, Vec<CellClass>, MatchResult) {
    let mut pred_classes = Vec::new();
    let mut gt_classes = Vec::new();
    let mut matching = MatchResult::default();
    for unit in units {
        match unit {
            MatchUnit::Matched { pred_class, gt_class, iou } => {
                let pi = pred_classes.len();
                let gi = gt_classes.len();
                pred_classes.push(pred_class.clone());
                gt_classes.push(gt_class.clone());
                matching.matched.push((pi, gi, *iou));
            }
            MatchUnit::UnmatchedPred { class } => {
                let pi = pred_classes.len();
                pred_classes.push(class.clone());
                matching.unmatched_pred.push(pi);
            }
            MatchUnit::UnmatchedGt { class } => {
                let gi = gt_classes.len();
                gt_classes.push(class.clone());
                matching.unmatched_gt.push(gi);
            }
        }
    }
    (pred_classes, gt_classes, matching)
}

fn f1_of(units: &[MatchUnit], class: &CellClass) -> f64 {
    let (pred_classes, gt_classes, matching) = rebuild(units);
    metrics::f1_per_class(&pred_classes, &gt_classes, &matching)
        .get(class)
        .copied()
        .unwrap_or(f64::NAN)
}

fn f1_lines(units: &[MatchUnit], opts: &EvalOptions) -> Vec<EvalLine> {
    let (pred_classes, gt_classes, matching) = rebuild(units);
    let table = metrics::f1_per_class(&pred_classes, &gt_classes, &matching);
    let mut lines = Vec::new();
    for (class, value) in table {
        let metric = format!("f1_{class}");
        if opts.bootstrap > 0 {
            let class_for_stat = class.clone();
            let stat = move |sample: &[MatchUnit]| f1_of(sample, &class_for_stat);
            let ci = bootstrap_ci(stat, units, opts.bootstrap, opts.level, opts.seed);
            lines.push(EvalLine::from_ci(metric, ci, units.len()));
        } else {
            lines.push(EvalLine { metric, value, lo: None, hi: None, n: units.len(), skipped: 0 });
        }
    }
    lines
}

fn pq_lines(units: &[MatchUnit], opts: &EvalOptions) -> Vec<EvalLine> {
    let quality = |sample: &[MatchUnit]| {
        let (_, _, matching) = rebuild(sample);
        pq_dq_sq(&matching)
    };
    let q = quality(units);
    let selectors: [(&str, fn(imilia_core::metrics::Quality) -> f64); 3] = [
        ("pq", |q| q.pq),
        ("dq", |q| q.dq),
        ("sq", |q| q.sq),
    ];
    let mut lines = Vec::new();
    for (name, select) in selectors {
        if opts.bootstrap > 0 {
            let stat = move |sample: &[MatchUnit]| select(quality(sample));
            let ci = bootstrap_ci(stat, units, opts.bootstrap, opts.level, opts.seed);
            lines.push(EvalLine::from_ci(name.into(), ci, units.len()));
        } else {
            lines.push(EvalLine {
                metric: name.into(),
                value: select(q),
                lo: None,
                hi: None,
                n: units.len(),
                skipped: 0,
            });
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn opts(bootstrap: usize) -> EvalOptions {
        EvalOptions { bootstrap, level: 0.95, seed: 5 }
    }

    fn write(path: &Path, text: &str) {
        fs::write(path, text).unwrap();
    }

    #[test]
    fn auc_joins_on_id() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred.csv");
        let gt = dir.path().join("gt.csv");
        write(&pred, "id,score\na,0.1\nb,0.4\nc,0.35\nd,0.8\nzzz,0.9\n");
        write(&gt, "id,label\na,0\nb,0\nc,1\nd,1\n");
        let lines = evaluate(Metric::Auc, &pred, &gt, &opts(0)).unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].value, 0.75);
        assert_eq!(lines[0].n, 4);
    }

    #[test]
    fn auc_bootstrap_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred.csv");
        let gt = dir.path().join("gt.csv");
        let mut p_text = "id,score\n".to_string();
        let mut g_text = "id,label\n".to_string();
        for i in 0..40 {
            p_text.push_str(&format!("s{i},{}\n", (i % 17) as f64 / 17.0));
            g_text.push_str(&format!("s{i},{}\n", i % 2));
        }
        write(&pred, &p_text);
        write(&gt, &g_text);
        let a = evaluate(Metric::Auc, &pred, &gt, &opts(200)).unwrap();
        let b = evaluate(Metric::Auc, &pred, &gt, &opts(200)).unwrap();
        assert_eq!(a, b);
        assert!(a[0].lo.unwrap() <= a[0].value && a[0].value <= a[0].hi.unwrap());
    }

    #[test]
    fn pearson_reports_r_and_p() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred.csv");
        let gt = dir.path().join("gt.csv");
        let mut p_text = "id,value\n".to_string();
        let mut g_text = "id,value\n".to_string();
        for i in 0..10 {
            p_text.push_str(&format!("s{i},{i}\n"));
            g_text.push_str(&format!("s{i},{}\n", 2 * i));
        }
        write(&pred, &p_text);
        write(&gt, &g_text);
        let lines = evaluate(Metric::Pearson, &pred, &gt, &opts(0)).unwrap();
        assert_eq!(lines[0].metric, "pearson_r");
        assert_eq!(lines[0].value, 1.0);
        assert_eq!(lines[1].metric, "pearson_p");
        assert!(lines[1].value < 1e-12);
    }

    fn square(x: f64, y: f64, s: f64) -> String {
        format!("\"{x} {y};{} {y};{} {};{x} {}\"", x + s, x + s, y + s, y + s)
    }

    #[test]
    fn f1_and_pq_from_instances() {
        let dir = tempfile::tempdir().unwrap();
        let pred = dir.path().join("pred.csv");
        let gt = dir.path().join("gt.csv");
        // Two perfect matches, one class error, one spurious prediction.
        let mut p_text = "tile_id,cell_id,class,polygon\n".to_string();
        p_text.push_str(&format!("t1,p1,epithelial,{}\n", square(0.0, 0.0, 10.0)));
        p_text.push_str(&format!("t1,p2,lymphocyte,{}\n", square(20.0, 0.0, 10.0)));
        p_text.push_str(&format!("t1,p3,neutrophil,{}\n", square(40.0, 0.0, 10.0)));
        p_text.push_str(&format!("t1,p4,eosinophil,{}\n", square(90.0, 90.0, 8.0)));
        let mut g_text = "tile_id,cell_id,class,polygon\n".to_string();
        g_text.push_str(&format!("t1,g1,epithelial,{}\n", square(0.0, 0.0, 10.0)));
        g_text.push_str(&format!("t1,g2,lymphocyte,{}\n", square(20.0, 0.0, 10.0)));
        g_text.push_str(&format!("t1,g3,plasmocyte,{}\n", square(40.0, 0.0, 10.0)));
        write(&pred, &p_text);
        write(&gt, &g_text);

        let f1 = evaluate(Metric::F1, &pred, &gt, &opts(0)).unwrap();
        let get = |name: &str| f1.iter().find(|l| l.metric == name).unwrap().value;
        assert_eq!(get("f1_epithelial"), 1.0);
        assert_eq!(get("f1_lymphocyte"), 1.0);
        assert_eq!(get("f1_neutrophil"), 0.0);
        assert_eq!(get("f1_plasmocyte"), 0.0);

        let pq = evaluate(Metric::Pq, &pred, &gt, &opts(0)).unwrap();
        let get = |name: &str| pq.iter().find(|l| l.metric == name).unwrap().value;
        // 3 matched (one wrong class still counts for detection), 1 FP, 0 FN.
        assert_eq!(get("dq"), 3.0 / 3.5);
        assert_eq!(get("sq"), 1.0);
        assert_eq!(get("pq"), get("dq") * get("sq"));
    }

    #[test]
    fn render_line_format() {
        let line = EvalLine {
            metric: "auc".into(),
            value: 0.75,
            lo: Some(0.6),
            hi: Some(0.9),
            n: 40,
            skipped: 2,
        };
        assert_eq!(
            line.render(),
            "metric=auc value=0.75 ci_lo=0.6 ci_hi=0.9 n=40 skipped_replicates=2"
        );
    }
}
