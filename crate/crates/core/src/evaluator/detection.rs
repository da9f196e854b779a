//! IoU and all-point interpolated average precision for lesion boxes.

use std::collections::BTreeMap;

use super::EvalError;
use crate::ai_cascade::{LesionBox, LesionClass};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.4;

/// IoU of two `[x_min, y_min, x_max, y_max]` rectangles.
pub fn iou_coords(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let area = |r: [f64; 4]| (r[2] - r[0]) * (r[3] - r[1]);
    inter / (area(a) + area(b) - inter)
}

pub fn iou(a: &LesionBox, b: &LesionBox) -> f64 {
    iou_coords(a.coords(), b.coords())
}

/// Average precision of one class's predictions against its ground truth.
///
/// Predictions are visited by descending confidence and greedily matched to
/// the highest-IoU unmatched truth at or above `iou_threshold`. Predictions
/// sharing a confidence form one operating point. AP is the exact area under
/// the precision envelope. With no truths the AP is 0.
pub fn average_precision(
    predictions: &[LesionBox],
    truths: &[LesionBox],
    iou_threshold: f64,
) -> Result<f64, EvalError> {
    let mut classes = predictions.iter().chain(truths).map(|b| b.lesion_class);
    if let Some(first) = classes.next() {
        if let Some(other) = classes.find(|&c| c != first) {
            return Err(EvalError::MixedClasses(first, other));
        }
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(EvalError::Invalid(format!("IoU threshold {iou_threshold} outside [0,1]")));
    }
    if truths.is_empty() || predictions.is_empty() {
        return Ok(0.0);
    }

    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&i, &j| predictions[j].confidence.total_cmp(&predictions[i].confidence));

    let mut taken = vec![false; truths.len()];
    let mut hits = Vec::with_capacity(order.len());
    for &p in &order {
        let best = truths
            .iter()
            .enumerate()
            .filter(|(t, _)| !taken[*t])
            .map(|(t, truth)| (t, iou(&predictions[p], truth)))
            .filter(|&(_, v)| v >= iou_threshold)
            .fold(None, |best: Option<(usize, f64)>, (t, v)| match best {
                Some((_, bv)) if bv >= v => best,
                _ => Some((t, v)),
            });
        if let Some((t, _)) = best {
            taken[t] = true;
        }
        hits.push(best.is_some());
    }

    // One (recall, precision) point per distinct confidence.
    let n_truth = truths.len() as f64;
    let mut points: Vec<(f64, f64)> = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    for (k, &p) in order.iter().enumerate() {
        tp += usize::from(hits[k]);
        seen += 1;
        let last_of_group =
            order.get(k + 1).is_none_or(|&next| predictions[next].confidence != predictions[p].confidence);
        if last_of_group {
            points.push((tp as f64 / n_truth, tp as f64 / seen as f64));
        }
    }

    let mut envelope = 0.0f64;
    for point in points.iter_mut().rev() {
        envelope = envelope.max(point.1);
        point.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in points {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// Arithmetic mean over all 17 lesion classes.
pub fn mean_ap(per_class_ap: &BTreeMap<LesionClass, f64>) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    for class in LesionClass::ALL {
        sum += per_class_ap.get(&class).ok_or(EvalError::MissingClass(class))?;
    }
    Ok(sum / LesionClass::ALL.len() as f64)
}
