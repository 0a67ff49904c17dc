//! Image-plane geometry for the labeling oracle and ensemble association.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Box2D, CameraModel, ClassId, GroundTruthObject, GtId};

/// Share of the labeling radius inside which a repeated request is skipped.
pub const SUPPRESSION_FRACTION: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Radius2D {
    pub r_x: f64,
    pub r_y: f64,
}

/// Intersection over union of two axis-aligned boxes; 0 when the union is empty.
pub fn iou_2d(a: &Box2D, b: &Box2D) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    // areas from corners, so identical boxes give inter == union exactly
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Depth-dependent search window: `r = H * f / z` per axis.
pub fn labeling_radius(cam: &CameraModel, pred_depth: f64, h: f64) -> Result<Radius2D> {
    if !(pred_depth > 0.0) || !pred_depth.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "predicted depth must be positive, got {pred_depth}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "radius scale H must be positive, got {h}"
        )));
    }
    Ok(Radius2D {
        r_x: h * cam.fx / pred_depth,
        r_y: h * cam.fy / pred_depth,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchResult {
    Matched(GtId),
    /// Nothing labelable inside the window.
    FalsePositive,
}

impl MatchResult {
    pub fn gt_id(self) -> Option<GtId> {
        match self {
            MatchResult::Matched(id) => Some(id),
            MatchResult::FalsePositive => None,
        }
    }
}

/// Oracle answer for a labeling request centered at `req_center`.
///
/// Candidates are the unlabeled ground-truth objects of the request's image
/// that are at least `min_px_height` tall and whose centers lie inside the
/// per-axis window `|dx| <= r_x`, `|dy| <= r_y` (inclusive). The closest by
/// Euclidean center distance wins, ties going to the lower `gt_id`.
pub fn match_request(
    req_center: [f64; 2],
    pred_depth: f64,
    gts: &[&GroundTruthObject],
    labeled: &HashSet<GtId>,
    cam: &CameraModel,
    h: f64,
    min_px_height: f64,
) -> Result<MatchResult> {
    let r = labeling_radius(cam, pred_depth, h)?;
    let mut best: Option<(f64, GtId)> = None;
    for g in gts {
        if labeled.contains(&g.gt_id) || g.pixel_height < min_px_height {
            continue;
        }
        let dx = g.center2d[0] - req_center[0];
        let dy = g.center2d[1] - req_center[1];
        if dx.abs() > r.r_x || dy.abs() > r.r_y {
            continue;
        }
        let d2 = dx * dx + dy * dy;
        let better = match best {
            None => true,
            Some((bd, bid)) => d2 < bd || (d2 == bd && g.gt_id < bid),
        };
        if better {
            best = Some((d2, g.gt_id));
        }
    }
    Ok(best.map_or(MatchResult::FalsePositive, |(_, id)| {
        MatchResult::Matched(id)
    }))
}

/// The parts of a labeling request that matter for duplicate suppression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestPoint {
    pub center: [f64; 2],
    pub pred_depth: f64,
    pub class_id: ClassId,
}

/// True when `req` repeats an earlier same-class request, i.e. its center lies
/// within 95% of the labeling radius (inclusive) of a prior center. The radius
/// comes from `req`'s own predicted depth. `prior` must come from the same
/// image.
pub fn suppress_duplicate(
    req: &RequestPoint,
    prior: &[RequestPoint],
    cam: &CameraModel,
    h: f64,
) -> Result<bool> {
    let r = labeling_radius(cam, req.pred_depth, h)?;
    let (wx, wy) = (SUPPRESSION_FRACTION * r.r_x, SUPPRESSION_FRACTION * r.r_y);
    Ok(prior.iter().any(|p| {
        p.class_id == req.class_id
            && (req.center[0] - p.center[0]).abs() <= wx
            && (req.center[1] - p.center[1]).abs() <= wy
    }))
}

/// A 2D detection as seen by ensemble association.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub id: u64,
    pub box2d: Box2D,
    pub confidence: f64,
}

/// One-to-one association of an auxiliary model's detections to the main
/// model's, within one image.
///
/// Main detections are visited in descending confidence (then ascending id).
/// Each takes the unassigned auxiliary detection with IoU at or above
/// `iou_threshold` that has the highest confidence, ties going to the lower id.
pub fn associate_ensemble(
    main: &[Detection],
    aux: &[Detection],
    iou_threshold: f64,
) -> BTreeMap<u64, u64> {
    let mut order: Vec<&Detection> = main.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence).then(a.id.cmp(&b.id)));

    let mut taken = vec![false; aux.len()];
    let mut out = BTreeMap::new();
    for m in order {
        let mut best: Option<usize> = None;
        for (j, a) in aux.iter().enumerate() {
            if taken[j] || iou_2d(&m.box2d, &a.box2d) < iou_threshold {
                continue;
            }
            best = match best {
                Some(b)
                    if aux[b].confidence > a.confidence
                        || (aux[b].confidence == a.confidence && aux[b].id < a.id) =>
                {
                    Some(b)
                }
                _ => Some(j),
            };
        }
        if let Some(j) = best {
            taken[j] = true;
            out.insert(m.id, aux[j].id);
        }
    }
    out
}
