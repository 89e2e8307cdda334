use crate::error::{Error, Result};
use crate::eval::{align, best_match, ImageDetections, ImageTruth, MatchThreshold};

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    /// Score cutoff; `+inf` when no observed score reaches the target.
    pub threshold: f64,
    /// False positives per image at `threshold`.
    pub fppi: f64,
    pub warning: Option<String>,
}

/// Smallest observed score at which the post-suppression false positives
/// per image stay within `target_fppi`. A detection is a false positive
/// when its best match against the image's ground truth is rejected by `t`.
///
/// `validation` should hold every candidate detection (scanned with a very
/// low cutoff); thresholding after greedy suppression selects exactly the
/// detections suppression would keep at the higher cutoff.
pub fn calibrate_threshold(
    validation: &[ImageDetections],
    truth: &[ImageTruth],
    target_fppi: f64,
    t: MatchThreshold,
) -> Result<Calibration> {
    if truth.is_empty() {
        return Err(Error::Eval("calibration needs at least one validation image".into()));
    }
    if !(target_fppi >= 0.0) {
        return Err(Error::Config(format!("FPPI target must be >= 0, got {target_fppi}")));
    }
    let n = truth.len() as f64;
    let mut scored: Vec<(f64, bool)> = align(validation, truth)?
        .into_iter()
        .flat_map(|(gt, dets)| {
            dets.into_iter()
                .map(move |d| (d.score, !t.accepts(best_match(&d.bbox, &gt.boxes))))
        })
        .collect();
    if scored.is_empty() {
        return Ok(Calibration {
            threshold: f64::INFINITY,
            fppi: 0.0,
            warning: Some("no validation detections to calibrate on".into()),
        });
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut best: Option<(f64, f64)> = None;
    let mut fp = 0usize;
    let mut i = 0;
    while i < scored.len() {
        let tau = scored[i].0;
        while i < scored.len() && scored[i].0 == tau {
            fp += usize::from(scored[i].1);
            i += 1;
        }
        let fppi = fp as f64 / n;
        if fppi <= target_fppi {
            best = Some((tau, fppi));
        } else {
            break;
        }
    }
    Ok(match best {
        Some((threshold, fppi)) => Calibration {
            threshold,
            fppi,
            warning: None,
        },
        None => Calibration {
            threshold: f64::INFINITY,
            fppi: 0.0,
            warning: Some(format!(
                "even the top score {} exceeds the {target_fppi} FPPI target",
                scored[0].0
            )),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{BoundingBox, Detection};

    fn det(x: f64, score: f64) -> Detection {
        Detection {
            bbox: BoundingBox::new(x, 0.0, 10.0, 10.0),
            score,
            level_index: 0,
        }
    }

    fn plate() -> Vec<BoundingBox> {
        vec![BoundingBox::new(0.0, 0.0, 10.0, 10.0)]
    }

    #[test]
    fn no_false_positives_gives_minimum_score() {
        let truth = vec![ImageTruth { image_id: "a".into(), boxes: plate() }];
        let dets = vec![ImageDetections {
            image_id: "a".into(),
            detections: vec![det(0.0, 0.9), det(1.0, 0.3), det(0.5, -0.2)],
        }];
        let c = calibrate_threshold(&dets, &truth, 1.0, MatchThreshold::default()).unwrap();
        assert_eq!(c.threshold, -0.2);
        assert_eq!(c.fppi, 0.0);
    }

    /// Oracle: FPPI at every candidate cut, computed directly.
    fn brute_force(dets: &[ImageDetections], truth: &[ImageTruth], target: f64) -> f64 {
        let t = MatchThreshold::default();
        let mut cuts: Vec<f64> = dets.iter().flat_map(|i| i.detections.iter().map(|d| d.score)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.into_iter()
            .find(|&tau| {
                let fp: usize = dets
                    .iter()
                    .zip(truth)
                    .map(|(i, g)| {
                        i.detections
                            .iter()
                            .filter(|d| d.score >= tau && !t.accepts(best_match(&d.bbox, &g.boxes)))
                            .count()
                    })
                    .sum();
                fp as f64 / truth.len() as f64 <= target
            })
            .unwrap_or(f64::INFINITY)
    }

    #[test]
    fn one_false_positive_per_image() {
        let mut truth = Vec::new();
        let mut dets = Vec::new();
        for i in 0..10 {
            let id = format!("img{i}");
            truth.push(ImageTruth { image_id: id.clone(), boxes: plate() });
            dets.push(ImageDetections {
                image_id: id,
                detections: vec![
                    det(0.0, 0.95 - 0.01 * i as f64),
                    det(100.0, 0.7 + 0.02 * i as f64),
                    det(200.0, 0.1 + 0.03 * i as f64),
                ],
            });
        }
        let c = calibrate_threshold(&dets, &truth, 1.0, MatchThreshold::default()).unwrap();
        assert_eq!(c.threshold, brute_force(&dets, &truth, 1.0));
        assert!(c.threshold <= 0.7);
        assert!(c.fppi <= 1.0);
    }

    #[test]
    fn zero_target_with_top_false_positive_is_infinite() {
        let truth = vec![ImageTruth { image_id: "a".into(), boxes: plate() }];
        let dets = vec![ImageDetections {
            image_id: "a".into(),
            detections: vec![det(500.0, 3.0), det(0.0, 1.0)],
        }];
        let c = calibrate_threshold(&dets, &truth, 0.0, MatchThreshold::default()).unwrap();
        assert_eq!(c.threshold, f64::INFINITY);
        assert!(c.warning.is_some());
    }

    #[test]
    fn threshold_is_monotone_in_target() {
        let truth: Vec<_> = (0..4).map(|i| ImageTruth { image_id: i.to_string(), boxes: plate() }).collect();
        let dets: Vec<_> = (0..4)
            .map(|i| ImageDetections {
                image_id: i.to_string(),
                detections: (0..6).map(|k| det(20.0 * k as f64, ((i * 7 + k * 3) % 11) as f64 / 10.0)).collect(),
            })
            .collect();
        let mut last = f64::INFINITY;
        for target in [0.0, 0.25, 0.5, 1.0, 2.0, 10.0] {
            let c = calibrate_threshold(&dets, &truth, target, MatchThreshold::default()).unwrap();
            assert_eq!(c.threshold, brute_force(&dets, &truth, target));
            assert!(c.threshold <= last);
            last = c.threshold;
        }
    }
}
