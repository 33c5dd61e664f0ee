//! One-to-one instance matching at IoU > 0.5 and the metrics built on it:
//! per-class F1 and the panoptic / detection / segmentation quality triple.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// Closed polygon in pixel coordinates; the last vertex connects to the first.
pub type Polygon = Vec<(f64, f64)>;

/// Matched pairs plus leftovers from a one-to-one IoU > 0.5 matching.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(pred index, gt index, IoU)`, in match order.
    pub matched: Vec<(usize, usize, f64)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Rasterize a polygon to the set of pixels whose centers fall inside it,
/// even-odd rule. Returned sorted by `(y, x)`.
pub fn rasterize(polygon: &[(f64, f64)]) -> Vec<(i64, i64)> {
    let mut pixels = Vec::new();
    if polygon.len() < 3 {
        return pixels;
    }
    let y_min = polygon.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = polygon.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let row_lo = libm::floor(y_min) as i64;
    let row_hi = libm::ceil(y_max) as i64;

    let mut crossings: Vec<f64> = Vec::new();
    for row in row_lo..row_hi {
        let yc = row as f64 + 0.5;
        crossings.clear();
        for i in 0..polygon.len() {
            let (x1, y1) = polygon[i];
            let (x2, y2) = polygon[(i + 1) % polygon.len()];
            if y1 == y2 {
                continue;
            }
            // Half-open edge span avoids double counting at shared vertices.
            if (y1 <= yc && yc < y2) || (y2 <= yc && yc < y1) {
                crossings.push(x1 + (yc - y1) * (x2 - x1) / (y2 - y1));
            }
        }
        crossings.sort_by(|a, b| a.partial_cmp(b).expect("finite polygon coords"));
        for pair in crossings.chunks_exact(2) {
            let (x_enter, x_exit) = (pair[0], pair[1]);
            // Pixel centers at x + 0.5 inside [x_enter, x_exit).
            let first = libm::ceil(x_enter - 0.5) as i64;
            let last = libm::ceil(x_exit - 0.5) as i64;
            for x in first..last {
                pixels.push((row, x));
            }
        }
    }
    pixels.sort_unstable();
    pixels.dedup();
    pixels
}

/// IoU between two sorted pixel sets.
pub fn iou(a: &[(i64, i64)], b: &[(i64, i64)]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// One-to-one matching of predicted to ground-truth instances at IoU > 0.5.
///
/// For mutually disjoint instances within each set the IoU > 0.5 pairs are
/// unique, so they are all taken; any ambiguity from overlapping inputs is
/// resolved greedily by higher IoU, then lower pred id, then lower gt id.
pub fn match_instances(pred: &[Polygon], gt: &[Polygon]) -> MatchResult {
    let pred_px: Vec<Vec<(i64, i64)>> = pred.iter().map(|p| rasterize(p)).collect();
    let gt_px: Vec<Vec<(i64, i64)>> = gt.iter().map(|p| rasterize(p)).collect();
    match_pixel_sets(&pred_px, &gt_px)
}

/// Matching over already rasterized instances.
pub fn match_pixel_sets(pred: &[Vec<(i64, i64)>], gt: &[Vec<(i64, i64)>]) -> MatchResult {
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, p) in pred.iter().enumerate() {
        for (gi, g) in gt.iter().enumerate() {
            if !bbox_overlap(p, g) {
                continue;
            }
            let v = iou(p, g);
            if v > 0.5 {
                candidates.push((pi, gi, v));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("finite IoU")
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut pred_used = alloc::vec![false; pred.len()];
    let mut gt_used = alloc::vec![false; gt.len()];
    let mut matched = Vec::new();
    for (pi, gi, v) in candidates {
        if pred_used[pi] || gt_used[gi] {
            continue;
        }
        pred_used[pi] = true;
        gt_used[gi] = true;
        matched.push((pi, gi, v));
    }
    let unmatched_pred = (0..pred.len()).filter(|&i| !pred_used[i]).collect();
    let unmatched_gt = (0..gt.len()).filter(|&i| !gt_used[i]).collect();
    MatchResult { matched, unmatched_pred, unmatched_gt }
}

fn bbox_overlap(a: &[(i64, i64)], b: &[(i64, i64)]) -> bool {
    if a.is_empty() || b.is_empty() {
        return false;
    }
    // Sorted by (y, x): y range from ends, x range needs a scan.
    let (ay0, ay1) = (a[0].0, a[a.len() - 1].0);
    let (by0, by1) = (b[0].0, b[b.len() - 1].0);
    if ay1 < by0 || by1 < ay0 {
        return false;
    }
    let (ax0, ax1) = x_range(a);
    let (bx0, bx1) = x_range(b);
    ax1 >= bx0 && bx1 >= ax0
}

fn x_range(px: &[(i64, i64)]) -> (i64, i64) {
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for &(_, x) in px {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// Per-class F1 over a computed matching.
///
/// TP for class `c`: matched pairs where both sides carry `c`. FP: predicted
/// `c` instances not in such a pair (wrong-class matches and unmatched
/// predictions); FN symmetric on the ground-truth side. Classes absent from
/// both sides are omitted.
pub fn f1_per_class<C: Ord + Clone>(
    pred_classes: &[C],
    gt_classes: &[C],
    matching: &MatchResult,
) -> BTreeMap<C, f64> {
    let mut tp: BTreeMap<C, usize> = BTreeMap::new();
    let mut fp: BTreeMap<C, usize> = BTreeMap::new();
    let mut fn_: BTreeMap<C, usize> = BTreeMap::new();

    for &(pi, gi, _) in &matching.matched {
        let pc = &pred_classes[pi];
        let gc = &gt_classes[gi];
        if pc == gc {
            *tp.entry(pc.clone()).or_default() += 1;
        } else {
            *fp.entry(pc.clone()).or_default() += 1;
            *fn_.entry(gc.clone()).or_default() += 1;
        }
    }
    for &pi in &matching.unmatched_pred {
        *fp.entry(pred_classes[pi].clone()).or_default() += 1;
    }
    for &gi in &matching.unmatched_gt {
        *fn_.entry(gt_classes[gi].clone()).or_default() += 1;
    }

    let mut classes: Vec<C> = Vec::new();
    for c in tp.keys().chain(fp.keys()).chain(fn_.keys()) {
        if !classes.contains(c) {
            classes.push(c.clone());
        }
    }
    let mut out = BTreeMap::new();
    for c in classes {
        let t = *tp.get(&c).unwrap_or(&0) as f64;
        let f_p = *fp.get(&c).unwrap_or(&0) as f64;
        let f_n = *fn_.get(&c).unwrap_or(&0) as f64;
        let denom = 2.0 * t + f_p + f_n;
        let f1 = if denom == 0.0 { 0.0 } else { 2.0 * t / denom };
        out.insert(c, f1);
    }
    out
}

/// Panoptic, detection and segmentation quality of a matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub pq: f64,
    pub dq: f64,
    pub sq: f64,
}

/// `DQ = TP / (TP + FP/2 + FN/2)`, `SQ` = mean IoU over matches (0 when
/// none), `PQ = DQ * SQ`. Empty inputs yield all zeros.
pub fn pq_dq_sq(matching: &MatchResult) -> Quality {
    let tp = matching.matched.len() as f64;
    let fp = matching.unmatched_pred.len() as f64;
    let fn_ = matching.unmatched_gt.len() as f64;
    let denom = tp + 0.5 * fp + 0.5 * fn_;
    let dq = if denom == 0.0 { 0.0 } else { tp / denom };
    let sq = if matching.matched.is_empty() {
        0.0
    } else {
        matching.matched.iter().map(|&(_, _, v)| v).sum::<f64>() / tp
    };
    Quality { pq: dq * sq, dq, sq }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use alloc::string::{String, ToString};
    use alloc::vec;

    fn rect(x0: f64, y0: f64, w: f64, h: f64) -> Polygon {
        vec![(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)]
    }

    #[test]
    fn rasterize_unit_square_counts_pixels() {
        let px = rasterize(&rect(0.0, 0.0, 4.0, 3.0));
        assert_eq!(px.len(), 12);
        assert!(px.contains(&(0, 0)));
        assert!(px.contains(&(2, 3)));
        assert!(!px.contains(&(3, 0)));
    }

    #[test]
    fn rasterize_triangle_half_area() {
        // Right triangle over a 10x10 box: about half the pixels.
        let tri = vec![(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)];
        let n = rasterize(&tri).len() as f64;
        assert!((n - 50.0).abs() <= 5.0, "triangle pixels {n}");
    }

    #[test]
    fn identical_sets_match_with_iou_one() {
        let pred = vec![rect(0.0, 0.0, 5.0, 5.0), rect(10.0, 0.0, 4.0, 6.0)];
        let m = match_instances(&pred, &pred);
        assert_eq!(m.matched.len(), 2);
        assert!(m.matched.iter().all(|&(_, _, v)| v == 1.0));
        assert!(m.unmatched_pred.is_empty() && m.unmatched_gt.is_empty());
    }

    #[test]
    fn disjoint_sets_do_not_match() {
        let pred = vec![rect(0.0, 0.0, 3.0, 3.0)];
        let gt = vec![rect(20.0, 20.0, 3.0, 3.0)];
        let m = match_instances(&pred, &gt);
        assert!(m.matched.is_empty());
        assert_eq!(m.unmatched_pred, vec![0]);
        assert_eq!(m.unmatched_gt, vec![0]);
    }

    #[test]
    fn shifted_rect_iou_below_half_is_unmatched() {
        // 10x10 rect shifted by 5: IoU = 50/150 = 1/3.
        let pred = vec![rect(0.0, 0.0, 10.0, 10.0)];
        let gt = vec![rect(5.0, 0.0, 10.0, 10.0)];
        let m = match_instances(&pred, &gt);
        assert!(m.matched.is_empty());
    }

    /// Exhaustive best matching: max cardinality, then max total IoU, over
    /// all one-to-one subsets of IoU > 0.5 candidate pairs.
    fn brute_force_match(pred: &[Vec<(i64, i64)>], gt: &[Vec<(i64, i64)>]) -> usize {
        let mut candidates = Vec::new();
        for (pi, p) in pred.iter().enumerate() {
            for (gi, g) in gt.iter().enumerate() {
                let v = iou(p, g);
                if v > 0.5 {
                    candidates.push((pi, gi, v));
                }
            }
        }
        // Enumerate subsets (candidate count is tiny for <= 10 instances).
        let n = candidates.len();
        assert!(n <= 16, "test setup keeps candidates small");
        let mut best_card = 0usize;
        for mask in 0..(1u32 << n) {
            let mut pu = 0u32;
            let mut gu = 0u32;
            let mut ok = true;
            let mut card = 0;
            for (k, &(pi, gi, _)) in candidates.iter().enumerate() {
                if mask & (1 << k) == 0 {
                    continue;
                }
                if pu & (1 << pi) != 0 || gu & (1 << gi) != 0 {
                    ok = false;
                    break;
                }
                pu |= 1 << pi;
                gu |= 1 << gi;
                card += 1;
            }
            if ok {
                best_card = best_card.max(card);
            }
        }
        best_card
    }

    #[test]
    fn matching_equals_exhaustive_on_disjoint_random_rects() {
        let mut r = rng::rng_from_seed(404);
        for _ in 0..50 {
            // Disjoint-per-set rectangles on a loose grid with jitter; the
            // IoU > 0.5 uniqueness theorem applies, so greedy is optimal.
            let n_pred = 1 + rng::uniform_usize(&mut r, 9);
            let n_gt = 1 + rng::uniform_usize(&mut r, 9);
            let make = |r: &mut rng::ChaCha8Rng, n: usize| -> Vec<Vec<(i64, i64)>> {
                (0..n)
                    .map(|i| {
                        let gx = (i % 4) as f64 * 20.0;
                        let gy = (i / 4) as f64 * 20.0;
                        let jx = rng::uniform_f64(r) * 6.0;
                        let jy = rng::uniform_f64(r) * 6.0;
                        let w = 6.0 + rng::uniform_f64(r) * 8.0;
                        let h = 6.0 + rng::uniform_f64(r) * 8.0;
                        rasterize(&rect(gx + jx, gy + jy, w, h))
                    })
                    .collect()
            };
            let pred = make(&mut r, n_pred);
            let gt = make(&mut r, n_gt);
            let m = match_pixel_sets(&pred, &gt);
            assert_eq!(m.matched.len(), brute_force_match(&pred, &gt));
            assert_eq!(m.matched.len() + m.unmatched_pred.len(), n_pred);
            assert_eq!(m.matched.len() + m.unmatched_gt.len(), n_gt);
        }
    }

    #[test]
    fn f1_perfect_predictions() {
        let classes: Vec<String> =
            vec!["epithelial".into(), "lymphocyte".into(), "neutrophil".into()];
        let matching = MatchResult {
            matched: vec![(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)],
            unmatched_pred: vec![],
            unmatched_gt: vec![],
        };
        let f1 = f1_per_class(&classes, &classes, &matching);
        assert!(f1.values().all(|&v| v == 1.0));
        assert_eq!(f1.len(), 3);
    }

    #[test]
    fn mismatched_pair_zeroes_both_classes() {
        let pred = vec!["epithelial".to_string()];
        let gt = vec!["lymphocyte".to_string()];
        let matching =
            MatchResult { matched: vec![(0, 0, 0.9)], unmatched_pred: vec![], unmatched_gt: vec![] };
        let f1 = f1_per_class(&pred, &gt, &matching);
        assert_eq!(f1["epithelial"], 0.0);
        assert_eq!(f1["lymphocyte"], 0.0);
    }

    #[test]
    fn absent_class_omitted() {
        let pred = vec!["epithelial".to_string()];
        let gt = vec!["epithelial".to_string()];
        let matching =
            MatchResult { matched: vec![(0, 0, 1.0)], unmatched_pred: vec![], unmatched_gt: vec![] };
        let f1 = f1_per_class(&pred, &gt, &matching);
        assert!(!f1.contains_key("plasmocyte"));
    }

    #[test]
    fn quality_perfect_match() {
        let matching = MatchResult {
            matched: vec![(0, 0, 1.0), (1, 1, 1.0)],
            unmatched_pred: vec![],
            unmatched_gt: vec![],
        };
        assert_eq!(pq_dq_sq(&matching), Quality { pq: 1.0, dq: 1.0, sq: 1.0 });
    }

    #[test]
    fn quality_spec_example() {
        // 1 TP at IoU 0.8, 1 FP, 1 FN.
        let matching = MatchResult {
            matched: vec![(0, 0, 0.8)],
            unmatched_pred: vec![1],
            unmatched_gt: vec![1],
        };
        let q = pq_dq_sq(&matching);
        assert_eq!(q.dq, 0.5);
        assert_eq!(q.sq, 0.8);
        assert!((q.pq - 0.4).abs() < 1e-15);
        assert_eq!(q.pq, q.dq * q.sq);
    }

    #[test]
    fn pq_identity_on_random_matchings() {
        let mut r = rng::rng_from_seed(8);
        for _ in 0..100 {
            let n = 1 + rng::uniform_usize(&mut r, 20);
            let matched: Vec<(usize, usize, f64)> = (0..n)
                .map(|i| (i, i, 0.5 + 0.5 * rng::uniform_f64(&mut r)))
                .collect();
            let matching = MatchResult {
                matched,
                unmatched_pred: (n..n + rng::uniform_usize(&mut r, 5) + 1).collect(),
                unmatched_gt: vec![],
            };
            let q = pq_dq_sq(&matching);
            assert_eq!(q.pq, q.dq * q.sq);
        }
    }
}
