//! Distribution summaries backing the report emitters: quantiles, Gaussian
//! kernel density estimates and grouped composition statistics.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::chowder::Side;
use crate::interpret::{CellClass, TileFeatureRow};

/// Linear-interpolation quantile (h = (n-1) p) of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = libm::ceil(h) as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Gaussian KDE curve sampled on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Kde {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub bandwidth: f64,
}

/// Silverman-bandwidth Gaussian KDE over `[min - 4h, max + 4h]`.
///
/// Returns `None` for degenerate inputs (fewer than 2 values or zero
/// spread); the grid is dense enough that the trapezoid integral stays
/// within 1e-3 of one.
pub fn kde(values: &[f64]) -> Option<Kde> {
    const GRID: usize = 801;
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n);
    let iqr = quantile(values, 0.75) - quantile(values, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if spread <= 0.0 {
        return None;
    }
    let bandwidth = 0.9 * spread * libm::pow(n, -0.2);
    let lo = values.iter().fold(f64::INFINITY, |a, &b| a.min(b)) - 4.0 * bandwidth;
    let hi = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)) + 4.0 * bandwidth;
    let step = (hi - lo) / (GRID - 1) as f64;
    let norm = 1.0 / (n * bandwidth * libm::sqrt(2.0 * core::f64::consts::PI));
    let mut xs = Vec::with_capacity(GRID);
    let mut ys = Vec::with_capacity(GRID);
    for i in 0..GRID {
        let x = lo + step * i as f64;
        let mut y = 0.0;
        for &v in values {
            let z = (x - v) / bandwidth;
            y += libm::exp(-0.5 * z * z);
        }
        xs.push(x);
        ys.push(y * norm);
    }
    Some(Kde { xs, ys, bandwidth })
}

/// Trapezoid integral of a sampled curve.
pub fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..xs.len() {
        acc += (xs[i] - xs[i - 1]) * (ys[i] + ys[i - 1]) / 2.0;
    }
    acc
}

/// Per-group distribution summary used by the violin renderer.
#[derive(Clone, Debug, PartialEq)]
pub struct ViolinSummary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub kde: Option<Kde>,
}

pub fn violin_summary(values: &[f64]) -> Option<ViolinSummary> {
    if values.is_empty() {
        return None;
    }
    Some(ViolinSummary {
        n: values.len(),
        median: quantile(values, 0.5),
        q1: quantile(values, 0.25),
        q3: quantile(values, 0.75),
        min: values.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
        max: values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b)),
        kde: kde(values),
    })
}

/// What a composition value measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Measure {
    /// Cell count of a class within the tile.
    Count,
    /// In-epithelium density, cells per square micrometer.
    Density,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Count => "count",
            Measure::Density => "density",
        }
    }
}

/// Grouping key of the composition table.
pub type GroupKey = (String, Side, String, Measure);

#[derive(Clone, Debug, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

fn stats(values: &[f64]) -> GroupStats {
    GroupStats {
        n: values.len(),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        median: quantile(values, 0.5),
        q1: quantile(values, 0.25),
        q3: quantile(values, 0.75),
    }
}

/// Flatten feature rows into grouped values keyed by
/// (cohort, side, class, measure). Counts cover every named class plus the
/// `other` bucket; densities cover the epithelial and immune classes.
pub fn composition_values(
    rows: &[(String, TileFeatureRow)],
) -> BTreeMap<GroupKey, Vec<f64>> {
    let mut groups: BTreeMap<GroupKey, Vec<f64>> = BTreeMap::new();
    let named = CellClass::named();
    let density_classes = [
        CellClass::Epithelial,
        CellClass::Lymphocyte,
        CellClass::Plasmocyte,
        CellClass::Eosinophil,
        CellClass::Neutrophil,
    ];
    for (cohort, row) in rows {
        for (i, class) in named.iter().enumerate() {
            groups
                .entry((cohort.clone(), row.side, class.name().into(), Measure::Count))
                .or_default()
                .push(row.counts[i] as f64);
        }
        groups
            .entry((cohort.clone(), row.side, "other".into(), Measure::Count))
            .or_default()
            .push(row.other_count as f64);
        for (i, class) in density_classes.iter().enumerate() {
            groups
                .entry((cohort.clone(), row.side, class.name().into(), Measure::Density))
                .or_default()
                .push(row.densities[i]);
        }
    }
    groups
}

/// Grouped composition statistics per (cohort, side, class, measure).
pub fn composition_table(rows: &[(String, TileFeatureRow)]) -> BTreeMap<GroupKey, GroupStats> {
    composition_values(rows)
        .into_iter()
        .map(|(key, values)| {
            let s = stats(&values);
            (key, s)
        })
        .collect()
}
