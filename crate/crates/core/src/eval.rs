//! Rectangle matching, recall/precision/FPPI, DET curves, and sweeps over
//! the matching threshold.

use std::collections::HashMap;
use std::io::Write;

use crate::detector::{BoundingBox, Detection};
use crate::error::{Error, Result};

/// Intersection over union of two boxes, in [0, 1].
pub fn match_pair(r: &BoundingBox, r0: &BoundingBox) -> f64 {
    let inter = r.intersection_area(r0);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = r.area() + r0.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// Best match of `r` against any rectangle of `rects`; 0 for an empty set.
pub fn best_match<'a>(r: &BoundingBox, rects: impl IntoIterator<Item = &'a BoundingBox>) -> f64 {
    rects
        .into_iter()
        .map(|r0| match_pair(r, r0))
        .fold(0.0, f64::max)
}

/// Minimum matching degree for a rectangle to count as found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchThreshold(f64);

impl MatchThreshold {
    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(Self(t))
        } else {
            Err(Error::Config(format!("match threshold must lie in [0, 1], got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// A match needs `m >= t` and a non-empty overlap, so `t = 0` still
    /// requires the rectangles to touch.
    #[inline]
    pub fn accepts(self, m: f64) -> bool {
        m > 0.0 && m >= self.0
    }
}

impl Default for MatchThreshold {
    fn default() -> Self {
        Self(0.5)
    }
}

/// How detections are paired with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    /// Set-membership counting: several detections may match one plate.
    #[default]
    ManyToOne,
    /// Greedy by descending score; each plate absorbs at most one detection.
    OneToOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTruth {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageDetections {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTally {
    pub image_id: String,
    pub truth: usize,
    pub matched_truth: usize,
    pub detections: usize,
    pub matched_detections: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// `None` when there is no ground truth at all.
    pub recall: Option<f64>,
    /// 1 when there are no detections.
    pub precision: f64,
    pub fppi: f64,
    pub num_images: usize,
    pub total_truth: usize,
    pub matched_truth: usize,
    pub total_detections: usize,
    pub matched_detections: usize,
    pub false_positives: usize,
    pub per_image: Vec<ImageTally>,
}

/// Ordered `(x, y)` pairs with strictly increasing, finite `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    points: Vec<(f64, f64)>,
}

impl Curve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Eval("curve points must be finite".into()));
        }
        if points.windows(2).any(|p| p[1].0 <= p[0].0) {
            return Err(Error::Eval("curve x values must strictly increase".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Largest `y` among points with `x <= limit`.
    pub fn max_y_at_or_below(&self, limit: f64) -> Option<f64> {
        self.points
            .iter()
            .filter(|(x, _)| *x <= limit)
            .map(|&(_, y)| y)
            .reduce(f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W, x_name: &str, y_name: &str) -> std::io::Result<()> {
        writeln!(out, "{x_name},{y_name}")?;
        for (x, y) in &self.points {
            writeln!(out, "{x},{y}")?;
        }
        Ok(())
    }
}

/// Detections grouped per ground-truth image, in ground-truth order.
/// Detections naming an image absent from the ground truth are an error.
pub(crate) fn align<'a>(
    detections: &'a [ImageDetections],
    truth: &'a [ImageTruth],
) -> Result<Vec<(&'a ImageTruth, Vec<&'a Detection>)>> {
    let index: HashMap<&str, usize> = truth
        .iter()
        .enumerate()
        .map(|(i, t)| (t.image_id.as_str(), i))
        .collect();
    if index.len() != truth.len() {
        return Err(Error::Eval("ground truth lists an image twice".into()));
    }
    let mut grouped: Vec<Vec<&Detection>> = vec![Vec::new(); truth.len()];
    let mut unknown: Vec<&str> = Vec::new();
    for img in detections {
        match index.get(img.image_id.as_str()) {
            Some(&i) => grouped[i].extend(img.detections.iter()),
            None => unknown.push(&img.image_id),
        }
    }
    if !unknown.is_empty() {
        unknown.sort_unstable();
        unknown.dedup();
        return Err(Error::Eval(format!(
            "detections for images missing from the ground truth: {}",
            unknown.join(", ")
        )));
    }
    Ok(truth.iter().zip(grouped).collect())
}

fn tally_image(truth: &ImageTruth, dets: &[&Detection], t: MatchThreshold, mode: MatchMode) -> ImageTally {
    let (matched_truth, matched_detections) = match mode {
        MatchMode::ManyToOne => {
            let mt = truth
                .boxes
                .iter()
                .filter(|g| t.accepts(best_match(g, dets.iter().map(|d| &d.bbox))))
                .count();
            let md = dets
                .iter()
                .filter(|d| t.accepts(best_match(&d.bbox, &truth.boxes)))
                .count();
            (mt, md)
        }
        MatchMode::OneToOne => {
            let mut order: Vec<&&Detection> = dets.iter().collect();
            order.sort_by(|a, b| crate::detector::detection_order(a, b));
            let mut taken = vec![false; truth.boxes.len()];
            let mut md = 0;
            for d in order {
                let best = truth
                    .boxes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !taken[*i])
                    .map(|(i, g)| (i, match_pair(&d.bbox, g)))
                    .filter(|&(_, m)| t.accepts(m))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
                if let Some((i, _)) = best {
                    taken[i] = true;
                    md += 1;
                }
            }
            (md, md)
        }
    };
    ImageTally {
        image_id: truth.image_id.clone(),
        truth: truth.boxes.len(),
        matched_truth,
        detections: dets.len(),
        matched_detections,
        false_positives: dets.len() - matched_detections,
    }
}

pub fn evaluate(
    detections: &[ImageDetections],
    truth: &[ImageTruth],
    t: MatchThreshold,
    mode: MatchMode,
) -> Result<EvalResult> {
    let aligned = align(detections, truth)?;
    let per_image: Vec<ImageTally> = aligned
        .iter()
        .map(|(gt, dets)| tally_image(gt, dets, t, mode))
        .collect();
    let sum = |f: fn(&ImageTally) -> usize| per_image.iter().map(f).sum::<usize>();
    let total_truth = sum(|p| p.truth);
    let matched_truth = sum(|p| p.matched_truth);
    let total_detections = sum(|p| p.detections);
    let matched_detections = sum(|p| p.matched_detections);
    let false_positives = sum(|p| p.false_positives);
    let num_images = truth.len();
    Ok(EvalResult {
        recall: (total_truth > 0).then(|| matched_truth as f64 / total_truth as f64),
        precision: if total_detections == 0 {
            1.0
        } else {
            matched_detections as f64 / total_detections as f64
        },
        fppi: if num_images == 0 {
            0.0
        } else {
            false_positives as f64 / num_images as f64
        },
        num_images,
        total_truth,
        matched_truth,
        total_detections,
        matched_detections,
        false_positives,
        per_image,
    })
}

/// Keeps only detections with `score >= threshold`.
pub fn threshold_detections(detections: &[ImageDetections], threshold: f64) -> Vec<ImageDetections> {
    detections
        .iter()
        .map(|img| ImageDetections {
            image_id: img.image_id.clone(),
            detections: img
                .detections
                .iter()
                .filter(|d| d.score >= threshold)
                .copied()
                .collect(),
        })
        .collect()
}

fn distinct_scores_desc(detections: &[ImageDetections]) -> Vec<f64> {
    let mut scores: Vec<f64> = detections
        .iter()
        .flat_map(|i| i.detections.iter().map(|d| d.score))
        .collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    scores
}

/// Merges `(x, y)` pairs with non-decreasing `x` into a curve, keeping the
/// largest `y` for each `x`.
fn merge_points(raw: impl IntoIterator<Item = (f64, f64)>) -> Result<Curve> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for (x, y) in raw {
        match points.last_mut() {
            Some(last) if last.0 == x => last.1 = last.1.max(y),
            _ => points.push((x, y)),
        }
    }
    Curve::new(points)
}

/// Detection rate against FPPI as the score threshold sweeps every observed
/// score, starting from the empty operating point (0, 0).
pub fn det_curve(
    detections: &[ImageDetections],
    truth: &[ImageTruth],
    t: MatchThreshold,
    mode: MatchMode,
) -> Result<Curve> {
    let aligned = align(detections, truth)?;
    let total_truth: usize = truth.iter().map(|g| g.boxes.len()).sum();
    if total_truth == 0 {
        return Err(Error::Eval("DET curve needs at least one ground-truth box".into()));
    }
    let n = truth.len() as f64;
    let scores = distinct_scores_desc(detections);
    let mut raw = vec![(0.0, 0.0)];
    match mode {
        MatchMode::ManyToOne => {
            // A plate is found once the threshold drops to the best score
            // among the detections matching it; a detection is a false
            // positive regardless of threshold.
            let mut found_at: Vec<f64> = Vec::new();
            let mut fp_scores: Vec<f64> = Vec::new();
            for (gt, dets) in &aligned {
                for g in &gt.boxes {
                    let s = dets
                        .iter()
                        .filter(|d| t.accepts(match_pair(g, &d.bbox)))
                        .map(|d| d.score)
                        .reduce(f64::max);
                    if let Some(s) = s {
                        found_at.push(s);
                    }
                }
                fp_scores.extend(
                    dets.iter()
                        .filter(|d| !t.accepts(best_match(&d.bbox, &gt.boxes)))
                        .map(|d| d.score),
                );
            }
            found_at.sort_by(|a, b| b.total_cmp(a));
            fp_scores.sort_by(|a, b| b.total_cmp(a));
            let (mut fi, mut fpi) = (0, 0);
            for &tau in &scores {
                while fi < found_at.len() && found_at[fi] >= tau {
                    fi += 1;
                }
                while fpi < fp_scores.len() && fp_scores[fpi] >= tau {
                    fpi += 1;
                }
                raw.push((fpi as f64 / n, fi as f64 / total_truth as f64));
            }
        }
        MatchMode::OneToOne => {
            for &tau in &scores {
                let r = evaluate(&threshold_detections(detections, tau), truth, t, mode)?;
                raw.push((r.fppi, r.recall.unwrap_or(0.0)));
            }
        }
    }
    merge_points(raw)
}

/// Precision and recall as functions of the matching threshold.
pub fn matching_degree_sweep(
    detections: &[ImageDetections],
    truth: &[ImageTruth],
    t_grid: &[f64],
    mode: MatchMode,
) -> Result<(Curve, Curve)> {
    if t_grid.is_empty() {
        return Err(Error::Config("matching threshold grid is empty".into()));
    }
    let mut precision = Vec::with_capacity(t_grid.len());
    let mut recall = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let r = evaluate(detections, truth, MatchThreshold::new(t)?, mode)?;
        let rec = r
            .recall
            .ok_or_else(|| Error::Eval("recall is undefined without ground truth".into()))?;
        precision.push((t, r.precision));
        recall.push((t, rec));
    }
    let wrap = |e: Error| match e {
        Error::Eval(_) => Error::Config("matching threshold grid must strictly increase".into()),
        other => other,
    };
    Ok((Curve::new(precision).map_err(wrap)?, Curve::new(recall).map_err(wrap)?))
}

/// Even grid `0, 1/steps, ..., 1`.
pub fn uniform_grid(steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bb(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h)
    }

    fn d(b: BoundingBox, score: f64) -> Detection {
        Detection {
            bbox: b,
            score,
            level_index: 0,
        }
    }

    fn truth(id: &str, boxes: Vec<BoundingBox>) -> ImageTruth {
        ImageTruth {
            image_id: id.into(),
            boxes,
        }
    }

    fn dets(id: &str, detections: Vec<Detection>) -> ImageDetections {
        ImageDetections {
            image_id: id.into(),
            detections,
        }
    }

    const T: MatchThreshold = MatchThreshold(0.5);

    #[test]
    fn pair_examples() {
        let a = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(match_pair(&a, &a), 1.0);
        assert_eq!(match_pair(&a, &bb(20.0, 0.0, 5.0, 5.0)), 0.0);
        assert_eq!(match_pair(&a, &bb(10.0, 0.0, 5.0, 5.0)), 0.0);
        assert!((match_pair(&a, &bb(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn best_match_examples() {
        let r = bb(0.0, 0.0, 10.0, 10.0);
        assert_eq!(best_match(&r, &[]), 0.0);
        assert_eq!(best_match(&r, &[bb(3.0, 3.0, 2.0, 2.0), r]), 1.0);
        let half = bb(5.0, 0.0, 10.0, 10.0);
        let far = bb(40.0, 40.0, 10.0, 10.0);
        assert_eq!(best_match(&r, &[far, half]), match_pair(&r, &half));
    }

    #[test]
    fn threshold_rejects_out_of_range() {
        assert!(MatchThreshold::new(-0.1).is_err());
        assert!(MatchThreshold::new(1.1).is_err());
        assert!(!MatchThreshold::new(0.0).unwrap().accepts(0.0));
    }

    #[test]
    fn exact_detections_are_perfect() {
        let g = vec![truth("a", vec![bb(1.0, 1.0, 9.0, 3.0)]), truth("b", vec![bb(5.0, 5.0, 20.0, 7.0)])];
        let e: Vec<_> = g.iter().map(|t| dets(&t.image_id, t.boxes.iter().map(|&b| d(b, 1.0)).collect())).collect();
        let r = evaluate(&e, &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.fppi, 0.0);
    }

    #[test]
    fn two_truth_three_detections() {
        let g = vec![
            truth("a", vec![bb(0.0, 0.0, 10.0, 10.0), bb(50.0, 50.0, 10.0, 10.0)]),
            truth("b", vec![]),
        ];
        let e = vec![dets(
            "a",
            vec![
                d(bb(1.0, 0.0, 10.0, 10.0), 0.9),
                d(bb(50.0, 51.0, 10.0, 10.0), 0.8),
                d(bb(100.0, 0.0, 10.0, 10.0), 0.7),
            ],
        )];
        let r = evaluate(&e, &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(r.recall, Some(1.0));
        assert_eq!(r.precision, 2.0 / 3.0);
        assert_eq!(r.fppi, 1.0 / 2.0);
    }

    #[test]
    fn zero_threshold_needs_touching() {
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)])];
        let e = vec![dets("a", vec![d(bb(9.0, 9.0, 10.0, 10.0), 1.0), d(bb(5.0, 5.0, 1.0, 1.0), 0.5)])];
        let r = evaluate(&e, &g, MatchThreshold::new(0.0).unwrap(), MatchMode::ManyToOne).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, Some(1.0));
        let e = vec![dets("a", vec![d(bb(30.0, 30.0, 10.0, 10.0), 1.0)])];
        let r = evaluate(&e, &g, MatchThreshold::new(0.0).unwrap(), MatchMode::ManyToOne).unwrap();
        assert_eq!(r.recall, Some(0.0));
    }

    #[test]
    fn empty_sets() {
        let g = vec![truth("a", vec![])];
        let r = evaluate(&[], &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(r.recall, None);
        assert_eq!(r.precision, 1.0);
        let g = vec![truth("a", vec![bb(0.0, 0.0, 4.0, 4.0)])];
        let r = evaluate(&[], &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(r.recall, Some(0.0));
        assert_eq!(r.fppi, 0.0);
    }

    #[test]
    fn unknown_image_ids_are_listed() {
        let g = vec![truth("a", vec![])];
        let e = vec![dets("zz", vec![]), dets("yy", vec![])];
        let msg = evaluate(&e, &g, T, MatchMode::ManyToOne).unwrap_err().to_string();
        assert!(msg.contains("yy, zz"), "{msg}");
    }

    #[test]
    fn one_to_one_counts_duplicates_as_false_positives() {
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)])];
        let e = vec![dets("a", vec![d(bb(0.0, 0.0, 10.0, 10.0), 0.9), d(bb(1.0, 0.0, 10.0, 10.0), 0.8)])];
        let many = evaluate(&e, &g, T, MatchMode::ManyToOne).unwrap();
        let one = evaluate(&e, &g, T, MatchMode::OneToOne).unwrap();
        assert_eq!(many.false_positives, 0);
        assert_eq!(one.false_positives, 1);
        assert_eq!(one.recall, Some(1.0));
    }

    #[test]
    fn det_curve_perfect_detector() {
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)]), truth("b", vec![bb(3.0, 3.0, 10.0, 10.0)])];
        let e = vec![
            dets("a", vec![d(bb(0.0, 0.0, 10.0, 10.0), 2.0)]),
            dets("b", vec![d(bb(3.0, 3.0, 10.0, 10.0), 1.0)]),
        ];
        let c = det_curve(&e, &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(c.points(), &[(0.0, 1.0)]);
    }

    #[test]
    fn det_curve_without_detections_is_origin() {
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)])];
        let c = det_curve(&[], &g, T, MatchMode::ManyToOne).unwrap();
        assert_eq!(c.points(), &[(0.0, 0.0)]);
    }

    #[test]
    fn sweep_step_at_constructed_overlap() {
        // offset 2.5 px on 10x10 boxes gives m_p = 75 / 125 = 0.6 exactly
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)]), truth("b", vec![bb(20.0, 0.0, 10.0, 10.0)])];
        let e = vec![
            dets("a", vec![d(bb(2.5, 0.0, 10.0, 10.0), 1.0)]),
            dets("b", vec![d(bb(22.5, 0.0, 10.0, 10.0), 1.0)]),
        ];
        let grid = uniform_grid(20);
        let (p, r) = matching_degree_sweep(&e, &g, &grid, MatchMode::ManyToOne).unwrap();
        for (&(t, rec), &(_, prec)) in r.points().iter().zip(p.points()) {
            let want = if t <= 0.6 + 1e-12 { 1.0 } else { 0.0 };
            assert_eq!(rec, want, "t = {t}");
            assert_eq!(prec, want, "t = {t}");
        }
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        let g = vec![truth("a", vec![bb(0.0, 0.0, 10.0, 10.0)])];
        assert!(matching_degree_sweep(&[], &g, &[0.5, 0.2], MatchMode::ManyToOne).is_err());
    }

    #[test]
    fn curve_validation() {
        assert!(Curve::new(vec![(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(Curve::new(vec![(0.0, f64::NAN)]).is_err());
        let c = Curve::new(vec![(0.0, 0.2), (0.5, 0.7), (1.5, 0.9)]).unwrap();
        assert_eq!(c.max_y_at_or_below(1.0), Some(0.7));
        let mut buf = Vec::new();
        c.write_csv(&mut buf, "fppi", "detection_rate").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "fppi,detection_rate\n0,0.2\n0.5,0.7\n1.5,0.9\n");
    }
}
