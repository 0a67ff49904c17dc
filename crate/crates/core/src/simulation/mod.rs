//! The active learning campaign driver.
//!
//! A campaign seeds a random share of images as fully labeled, then runs
//! rounds. Each round ranks the remaining predictions with the configured
//! strategy and issues labeling requests in rank order until the round's
//! cumulative budget is met. The oracle answers each request by matching it
//! to the nearest unlabeled ground-truth object inside the depth-dependent
//! window. Every issued request is charged, matched or not; suppressed
//! duplicates are not.
//!
//! Round 0 in the logs is the seeding step.

mod mask;
mod schedule;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use mask::{build_class_mask, masked_pointwise_loss, MaskGrid};
pub use schedule::{bagging_fraction, sample_bagged_labels, sample_loss_weights, DEFAULT_SUBTASKS};
pub use synthetic::{default_views, generate_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::features::{FusedMetric, Metric};
use crate::geometry::{match_request, suppress_duplicate, MatchResult, RequestPoint};
use crate::metrics::{Accounting, Curve, CurvePoint};
use crate::model::{Dataset, GtId, ImageId, InstanceId, InstanceRecord, ViewSpec};
use crate::selection::{
    combined_confidence, image_level_select, instance_scores, rank_pool, SelectionContext,
    StrategyConfig, StrategyKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub strategy: StrategyConfig,
    /// Labeling radius scale.
    pub h: f64,
    /// Share of images labeled at random before the first round.
    pub initial_fraction: f64,
    /// Cumulative charge targets, one per round, strictly increasing.
    pub round_budgets: Vec<usize>,
    /// Bagging decay.
    pub alpha: f64,
    /// Loss-weight spread for auxiliary models.
    pub delta: f64,
    pub min_px_height: f64,
    pub accounting: Accounting,
    pub seed: u64,
    pub aux_models: usize,
    pub subtasks: Vec<String>,
}

impl CampaignConfig {
    pub fn new(strategy: StrategyConfig, round_budgets: Vec<usize>) -> Self {
        Self {
            strategy,
            h: 2.0,
            initial_fraction: 0.1,
            round_budgets,
            alpha: 3.0,
            delta: 0.2,
            min_px_height: 25.0,
            accounting: Accounting::Instance,
            seed: 0,
            aux_models: 2,
            subtasks: DEFAULT_SUBTASKS.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.round_budgets.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!(
                "round budgets must increase strictly: {:?}",
                self.round_budgets
            ));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return bad(format!("delta must lie in [0, 1), got {}", self.delta));
        }
        if !(self.alpha > 0.0) {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if !(self.h > 0.0) {
            return bad(format!("H must be positive, got {}", self.h));
        }
        if !(0.0..=1.0).contains(&self.initial_fraction) {
            return bad(format!(
                "initial_fraction must lie in [0, 1], got {}",
                self.initial_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    /// The oracle labeled a ground-truth object.
    Matched,
    /// Nothing to label inside the window (false-positive request).
    Null,
    /// Skipped as a duplicate of an earlier request; not charged.
    Suppressed,
    /// A whole image was labeled.
    Image,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEvent {
    pub round: usize,
    pub instance_id: Option<InstanceId>,
    pub image_id: ImageId,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_id: Option<GtId>,
    pub charged: bool,
    /// Labelable objects in the image, for image events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labelable: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub target: usize,
    pub charged_before: usize,
    pub charged_after: usize,
    pub events: Vec<RoundEvent>,
    /// Size of the bagged training subset each auxiliary model would draw.
    pub bagged_labels: usize,
    /// Per auxiliary model, the sampled loss multipliers.
    pub loss_weights: Vec<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssuedRequest {
    pub image_id: ImageId,
    pub instance_id: InstanceId,
    pub point: RequestPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundState {
    /// Completed selection rounds.
    pub round_index: usize,
    pub labeled_gt: BTreeSet<GtId>,
    /// Reference set for diversity strategies: predictions in labeled images
    /// and predictions whose requests were matched.
    pub labeled_instances: BTreeSet<InstanceId>,
    /// Predictions already requested or suppressed.
    pub consumed: BTreeSet<InstanceId>,
    pub labeled_images: BTreeSet<ImageId>,
    pub requests: Vec<IssuedRequest>,
    /// Issued (charged) requests.
    pub requested_total: usize,
    /// Labelable objects in the randomly seeded images.
    pub seeded_charge: usize,
    /// Labelable objects in images bought by image-level rounds.
    pub image_charge: usize,
    pub rng_seed: u64,
    #[serde(skip)]
    pub history: Vec<RoundLog>,
}

impl RoundState {
    pub fn charged_total(&self) -> usize {
        self.seeded_charge + self.image_charge + self.requested_total
    }

    /// Predictions still open for selection.
    pub fn pool<'a>(&self, data: &'a Dataset) -> Vec<&'a InstanceRecord> {
        data.instances
            .iter()
            .filter(|r| {
                !self.labeled_images.contains(&r.image_id)
                    && !self.consumed.contains(&r.instance_id)
                    && !self.labeled_instances.contains(&r.instance_id)
            })
            .collect()
    }

    pub fn events(&self) -> impl Iterator<Item = &RoundEvent> {
        self.history.iter().flat_map(|l| l.events.iter())
    }
}

/// SplitMix64 finalizer over `base` and `tag`.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn label_images(
    state: &mut RoundState,
    data: &Dataset,
    images: &[ImageId],
    labelable: &HashMap<ImageId, usize>,
    min_px_height: f64,
    round: usize,
    events: &mut Vec<RoundEvent>,
) -> usize {
    let chosen: HashSet<&str> = images.iter().map(String::as_str).collect();
    for g in &data.ground_truth {
        if chosen.contains(g.image_id.as_str()) && g.pixel_height >= min_px_height {
            state.labeled_gt.insert(g.gt_id);
        }
    }
    for r in &data.instances {
        if chosen.contains(r.image_id.as_str()) {
            state.labeled_instances.insert(r.instance_id);
        }
    }
    let mut charged = 0;
    for img in images {
        let n = labelable.get(img).copied().unwrap_or(0);
        charged += n;
        state.labeled_images.insert(img.clone());
        events.push(RoundEvent {
            round,
            instance_id: None,
            image_id: img.clone(),
            outcome: Outcome::Image,
            gt_id: None,
            charged: true,
            labelable: Some(n),
        });
    }
    charged
}

/// Labels a uniform random share of images and records it as round 0.
pub fn seed_campaign(data: &Dataset, cfg: &CampaignConfig) -> RoundState {
    let mut state = RoundState {
        round_index: 0,
        labeled_gt: BTreeSet::new(),
        labeled_instances: BTreeSet::new(),
        consumed: BTreeSet::new(),
        labeled_images: BTreeSet::new(),
        requests: Vec::new(),
        requested_total: 0,
        seeded_charge: 0,
        image_charge: 0,
        rng_seed: cfg.seed,
        history: Vec::new(),
    };
    let n_images = data.images.len();
    let mut n_seed = (cfg.initial_fraction * n_images as f64).round() as usize;
    if cfg.initial_fraction > 0.0 && n_images > 0 {
        n_seed = n_seed.max(1);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
    let mut picked: Vec<usize> = sample(&mut rng, n_images, n_seed.min(n_images)).into_vec();
    picked.sort_unstable();
    let images: Vec<ImageId> = picked
        .iter()
        .map(|&i| data.images[i].image_id.clone())
        .collect();

    let labelable = data.labelable_counts(cfg.min_px_height);
    let mut events = Vec::new();
    state.seeded_charge = label_images(
        &mut state,
        data,
        &images,
        &labelable,
        cfg.min_px_height,
        0,
        &mut events,
    );
    state.history.push(RoundLog {
        round: 0,
        target: state.seeded_charge,
        charged_before: 0,
        charged_after: state.seeded_charge,
        events,
        bagged_labels: 0,
        loss_weights: Vec::new(),
    });
    state
}

/// Rejects datasets lacking the fields a strategy needs.
pub fn check_strategy_inputs(kind: StrategyKind, data: &Dataset) -> Result<()> {
    for r in &data.instances {
        match kind {
            StrategyKind::Confidence if combined_confidence(r).is_none() => {
                return Err(Error::MissingField(r.instance_id, "confidence"))
            }
            StrategyKind::EnsDepthVar | StrategyKind::CloseDepth | StrategyKind::FarDepth
                if r.pred_depth.is_none() =>
            {
                return Err(Error::MissingField(r.instance_id, "pred_depth"))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Runs one selection round against `pool` up to the next cumulative target.
pub fn run_round(
    mut state: RoundState,
    data: &Dataset,
    cfg: &CampaignConfig,
    pool: &[&InstanceRecord],
) -> Result<(RoundState, RoundLog)> {
    let target = *cfg.round_budgets.get(state.round_index).ok_or_else(|| {
        Error::Config(format!(
            "no budget configured for round {}",
            state.round_index + 1
        ))
    })?;
    let charged_before = state.charged_total();
    if target < charged_before {
        return Err(Error::BudgetBelowCurrent {
            target,
            current: charged_before,
        });
    }
    let round = state.round_index + 1;
    let round_seed = derive_seed(state.rng_seed, round as u64);

    let index = data.instance_index();
    let labeled: Vec<&InstanceRecord> = state
        .labeled_instances
        .iter()
        .map(|id| &data.instances[index[id]])
        .collect();
    let ctx = SelectionContext {
        pool: pool.to_vec(),
        labeled,
        available_views: &data.views,
        seed: round_seed,
    };

    let mut events = Vec::new();
    match cfg.accounting {
        Accounting::Instance => {
            let ranking = if pool.is_empty() || target == charged_before {
                Vec::new()
            } else {
                rank_pool(&cfg.strategy, &ctx)?
            };
            let gts = data.gt_by_image();
            for id in ranking {
                if state.charged_total() >= target {
                    break;
                }
                let r = &data.instances[index[&id]];
                let depth = r.pred_depth.ok_or(Error::MissingField(id, "pred_depth"))?;
                let point = RequestPoint {
                    center: r.box2d.center(),
                    pred_depth: depth,
                    class_id: r.class_id,
                };
                let prior: Vec<RequestPoint> = state
                    .requests
                    .iter()
                    .filter(|q| q.image_id == r.image_id)
                    .map(|q| q.point)
                    .collect();
                state.consumed.insert(id);
                if suppress_duplicate(&point, &prior, &data.camera, cfg.h)? {
                    events.push(RoundEvent {
                        round,
                        instance_id: Some(id),
                        image_id: r.image_id.clone(),
                        outcome: Outcome::Suppressed,
                        gt_id: None,
                        charged: false,
                        labelable: None,
                    });
                    continue;
                }
                let candidates = gts
                    .get(r.image_id.as_str())
                    .map(Vec::as_slice)
                    .unwrap_or(&[]);
                let answer = match_request(
                    point.center,
                    depth,
                    candidates,
                    &HashSet::from_iter(state.labeled_gt.iter().copied()),
                    &data.camera,
                    cfg.h,
                    cfg.min_px_height,
                )?;
                state.requested_total += 1;
                state.requests.push(IssuedRequest {
                    image_id: r.image_id.clone(),
                    instance_id: id,
                    point,
                });
                let outcome = match answer {
                    MatchResult::Matched(g) => {
                        state.labeled_gt.insert(g);
                        state.labeled_instances.insert(id);
                        Outcome::Matched
                    }
                    MatchResult::FalsePositive => Outcome::Null,
                };
                events.push(RoundEvent {
                    round,
                    instance_id: Some(id),
                    image_id: r.image_id.clone(),
                    outcome,
                    gt_id: answer.gt_id(),
                    charged: true,
                    labelable: None,
                });
            }
        }
        Accounting::Image => {
            let labelable = data.labelable_counts(cfg.min_px_height);
            let scores = if pool.is_empty() {
                Vec::new()
            } else {
                instance_scores(&cfg.strategy, &ctx)?
            };
            let (images, _) =
                image_level_select(pool, &scores, &labelable, target - charged_before);
            state.image_charge += label_images(
                &mut state,
                data,
                &images,
                &labelable,
                cfg.min_px_height,
                round,
                &mut events,
            );
        }
    }

    let total_gt = data
        .ground_truth
        .iter()
        .filter(|g| g.pixel_height >= cfg.min_px_height)
        .count()
        .max(1);
    let progress = (state.labeled_gt.len() as f64 / total_gt as f64).min(1.0);
    let bagged = sample_bagged_labels(
        &state.labeled_gt,
        progress,
        cfg.alpha,
        derive_seed(round_seed, 1),
    )?;
    let loss_weights = (0..cfg.aux_models)
        .map(|m| {
            sample_loss_weights(
                &cfg.subtasks,
                cfg.delta,
                derive_seed(round_seed, 100 + m as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;

    state.round_index = round;
    let log = RoundLog {
        round,
        target,
        charged_before,
        charged_after: state.charged_total(),
        events,
        bagged_labels: bagged.len(),
        loss_weights,
    };
    state.history.push(log.clone());
    Ok((state, log))
}

/// Scores the labeled state of a campaign; higher is better.
pub trait PerformanceHook {
    fn evaluate(&self, data: &Dataset, state: &RoundState) -> Result<f64>;
}

impl<F> PerformanceHook for F
where
    F: Fn(&Dataset, &RoundState) -> Result<f64>,
{
    fn evaluate(&self, data: &Dataset, state: &RoundState) -> Result<f64> {
        self(data, state)
    }
}

/// Largest distance from any instance to its nearest labeled instance.
pub fn covering_radius(
    data: &Dataset,
    labeled: &BTreeSet<InstanceId>,
    views: &[ViewSpec],
    metric: Metric,
) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    let records: Vec<&InstanceRecord> = data.instances.iter().collect();
    let m = FusedMetric::new(&records, views, metric)?;
    let centers: Vec<usize> = labeled
        .iter()
        .map(|id| {
            m.index_of(*id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown instance {id}")))
        })
        .collect::<Result<_>>()?;
    Ok((0..m.len())
        .map(|i| {
            centers
                .iter()
                .map(|&c| m.distance_at(i, c))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(0.0, f64::max))
}

/// Desk-scale stand-in for detector accuracy: coverage of the feature space
/// by the labeled set, `1 - R / R_max` with `R` the covering radius and
/// `R_max` the largest possible fused cosine distance. Euclidean metrics
/// report `-R`.
#[derive(Debug, Clone)]
pub struct CoverageHook {
    pub views: Vec<ViewSpec>,
    pub metric: Metric,
}

impl PerformanceHook for CoverageHook {
    fn evaluate(&self, data: &Dataset, state: &RoundState) -> Result<f64> {
        let r = covering_radius(data, &state.labeled_instances, &self.views, self.metric)?;
        let bound = match self.metric {
            Metric::Cosine => Some(2.0 * self.views.iter().map(|v| v.lambda).sum::<f64>()),
            Metric::Euclidean => None,
        };
        Ok(match bound {
            Some(b) if b > 0.0 => 1.0 - r / b,
            _ => -r,
        })
    }
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub curve: Curve,
    pub state: RoundState,
}

/// Seeds, runs every configured round and measures performance after each.
///
/// A round that cannot charge anything more (pool exhausted) adds no curve
/// point, since curve `x` must increase strictly.
pub fn run_campaign(
    cfg: &CampaignConfig,
    data: &Dataset,
    hook: &dyn PerformanceHook,
) -> Result<CampaignOutcome> {
    cfg.validate()?;
    check_strategy_inputs(cfg.strategy.kind, data)?;
    if cfg.strategy.kind.is_coreset() {
        let views = cfg.strategy.resolve_views(&data.views)?;
        if let Some(w) = crate::features::check_weights(&views) {
            log::warn!("{w}");
        }
    }

    let mut state = seed_campaign(data, cfg);
    let mut points = vec![CurvePoint::new(
        state.charged_total() as f64,
        hook.evaluate(data, &state)?,
    )];
    for _ in 0..cfg.round_budgets.len() {
        let pool = state.pool(data);
        let (next, log) = run_round(state, data, cfg, &pool)?;
        state = next;
        let x = state.charged_total() as f64;
        if x > points.last().unwrap().x {
            points.push(CurvePoint::new(x, hook.evaluate(data, &state)?));
        } else {
            log::warn!("round {} charged nothing; no curve point added", log.round);
        }
    }
    Ok(CampaignOutcome {
        curve: Curve::new(points)?,
        state,
    })
}
