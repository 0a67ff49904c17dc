//! Acquisition strategies.
//!
//! Every strategy produces an ordered list of instance ids, most wanted first.
//! Ties always resolve to the lower instance id so results never depend on
//! the order in which the pool was handed in.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FusedMetric, Metric};
use crate::model::{ClassId, ImageId, InstanceId, InstanceRecord, ViewSpec};

/// A labeling request handed to the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub instance_id: InstanceId,
    pub image_id: ImageId,
    pub req_center: [f64; 2],
    pub pred_depth: Option<f64>,
    pub pred_class: ClassId,
    pub score: f64,
}

impl SelectionRequest {
    pub fn from_record(r: &InstanceRecord, score: f64) -> Self {
        Self {
            instance_id: r.instance_id,
            image_id: r.image_id.clone(),
            req_center: r.box2d.center(),
            pred_depth: r.pred_depth,
            pred_class: r.class_id,
            score,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Random,
    Confidence,
    EnsDepthVar,
    CloseDepth,
    FarDepth,
    Coreset,
    CoresetBox3d,
    /// Core-Set over the detector ensemble views plus the visual view.
    Ideal,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::Random,
        StrategyKind::Confidence,
        StrategyKind::EnsDepthVar,
        StrategyKind::CloseDepth,
        StrategyKind::FarDepth,
        StrategyKind::Coreset,
        StrategyKind::CoresetBox3d,
        StrategyKind::Ideal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Confidence => "confidence",
            StrategyKind::EnsDepthVar => "ens_depth_var",
            StrategyKind::CloseDepth => "close_depth",
            StrategyKind::FarDepth => "far_depth",
            StrategyKind::Coreset => "coreset",
            StrategyKind::CoresetBox3d => "coreset_box3d",
            StrategyKind::Ideal => "ideal",
        }
    }

    pub fn is_coreset(self) -> bool {
        matches!(
            self,
            StrategyKind::Coreset | StrategyKind::CoresetBox3d | StrategyKind::Ideal
        )
    }

    pub fn valid_names() -> String {
        Self::ALL.map(Self::name).join(", ")
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown strategy `{s}`; valid names: {}",
                    Self::valid_names()
                ))
            })
    }
}

/// Eligibility filter for the far-depth heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthFilters {
    /// Inclusive lower bound on 2D box height, in pixels.
    pub min_px_height: f64,
    /// Exclusive upper bound on predicted depth, in meters.
    pub max_depth: f64,
}

impl Default for DepthFilters {
    fn default() -> Self {
        Self {
            min_px_height: 25.0,
            max_depth: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthMode {
    Close,
    Far,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Views to fuse for Core-Set kinds; empty means the kind's default.
    #[serde(default)]
    pub views: Vec<ViewSpec>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub far_depth_filters: DepthFilters,
    #[serde(default)]
    pub metric: Metric,
    /// Compress each view with PCA keeping this share of variance.
    #[serde(default)]
    pub pca_var_keep: Option<f64>,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            views: Vec::new(),
            seed: 0,
            far_depth_filters: DepthFilters::default(),
            metric: Metric::Cosine,
            pca_var_keep: None,
        }
    }

    /// Views the strategy measures distances in.
    ///
    /// Explicit views must exist in the dataset with the same dimension.
    /// Defaults: `coreset` uses the `cls` view, `coreset_box3d` the `box3d`
    /// view (each falling back to the first view, weight 1), `ideal` every
    /// view with a positive weight.
    pub fn resolve_views(&self, available: &[ViewSpec]) -> Result<Vec<ViewSpec>> {
        if !self.kind.is_coreset() {
            return Ok(Vec::new());
        }
        if !self.views.is_empty() {
            for v in &self.views {
                match available.iter().find(|a| a.name == v.name) {
                    None => return Err(Error::Config(format!("unknown view `{}`", v.name))),
                    Some(a) if a.dim != v.dim => {
                        return Err(Error::DimensionMismatch {
                            view: v.name.clone(),
                            expected: a.dim,
                            found: v.dim,
                        })
                    }
                    _ => {}
                }
            }
            return Ok(self.views.clone());
        }
        let single = |preferred: &str| {
            available
                .iter()
                .find(|v| v.name == preferred)
                .or_else(|| available.first())
                .map(|v| vec![ViewSpec::new(v.name.clone(), v.dim, 1.0)])
        };
        let views = match self.kind {
            StrategyKind::Coreset => single("cls"),
            StrategyKind::CoresetBox3d => single("box3d"),
            _ => Some(
                available
                    .iter()
                    .filter(|v| v.lambda > 0.0)
                    .cloned()
                    .collect(),
            ),
        };
        match views {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(Error::Config(format!(
                "strategy {} needs at least one feature view",
                self.kind
            ))),
        }
    }
}

/// `min` over the labeled set of `dist(x, z)`.
pub fn coreset_score<I: Copy, F: Fn(I, I) -> f64>(x: I, labeled: &[I], dist: F) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    Ok(labeled
        .iter()
        .map(|&z| dist(x, z))
        .fold(f64::INFINITY, f64::min))
}

/// Greedy k-center traversal.
///
/// Repeatedly takes the pool item farthest from `labeled` plus everything
/// picked so far. Each candidate's distance to that reference set is cached
/// and refreshed only against the newest pick, so the cost is
/// `|labeled| * |pool| + k * |pool|` distance evaluations.
pub fn coreset_select<I, F>(pool: &[I], labeled: &[I], dist: F, k: usize) -> Result<Vec<I>>
where
    I: Copy + Ord,
    F: Fn(I, I) -> f64,
{
    if labeled.is_empty() {
        return Err(Error::EmptyLabeledSet);
    }
    if k > pool.len() {
        return Err(Error::PoolTooSmall {
            k,
            pool: pool.len(),
        });
    }
    let mut candidates = pool.to_vec();
    candidates.sort_unstable();

    let mut cache: Vec<f64> = candidates
        .iter()
        .map(|&c| {
            labeled
                .iter()
                .map(|&z| dist(c, z))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut taken = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(k);

    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &d) in cache.iter().enumerate() {
            if taken[i] {
                continue;
            }
            // strict comparison keeps the lowest id on ties
            if best.is_none_or(|b| d > cache[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k <= pool size");
        taken[b] = true;
        let pick = candidates[b];
        picks.push(pick);
        for (i, &c) in candidates.iter().enumerate() {
            if !taken[i] {
                let d = dist(c, pick);
                if d < cache[i] {
                    cache[i] = d;
                }
            }
        }
    }
    Ok(picks)
}

fn sorted_ids(pool: &[InstanceId]) -> Vec<InstanceId> {
    let mut ids = pool.to_vec();
    ids.sort_unstable();
    ids
}

/// Uniform sample without replacement, reproducible from `seed` and
/// independent of the pool's order.
pub fn select_random(pool: &[InstanceId], k: usize, seed: u64) -> Result<Vec<InstanceId>> {
    if k > pool.len() {
        return Err(Error::PoolTooSmall {
            k,
            pool: pool.len(),
        });
    }
    let ids = sorted_ids(pool);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, ids.len(), k)
        .into_iter()
        .map(|i| ids[i])
        .collect())
}

/// Product of depth and class confidence when both exist, otherwise whichever
/// one the detector exported.
pub fn combined_confidence(r: &InstanceRecord) -> Option<f64> {
    match (r.depth_confidence, r.confidence) {
        (Some(d), Some(c)) => Some(d * c),
        (Some(x), None) | (None, Some(x)) => Some(x),
        (None, None) => None,
    }
}

/// Orders `(id, key)` pairs by descending key, then ascending id, and keeps `k`.
fn top_k(mut scored: Vec<(InstanceId, f64)>, k: usize) -> Vec<InstanceId> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

fn check_k(k: usize, pool: usize) -> Result<()> {
    if k > pool {
        Err(Error::PoolTooSmall { k, pool })
    } else {
        Ok(())
    }
}

fn confidence_scores(pool: &[&InstanceRecord]) -> Result<Vec<(InstanceId, f64)>> {
    pool.iter()
        .map(|r| {
            combined_confidence(r)
                .map(|c| (r.instance_id, -c))
                .ok_or(Error::MissingField(r.instance_id, "confidence"))
        })
        .collect()
}

/// Least confident first.
pub fn select_confidence(pool: &[&InstanceRecord], k: usize) -> Result<Vec<InstanceId>> {
    check_k(k, pool.len())?;
    Ok(top_k(confidence_scores(pool)?, k))
}

/// Population variance of the main and associated auxiliary depth predictions.
/// An instance without auxiliary matches scores 0.
pub fn depth_variance(r: &InstanceRecord) -> Result<f64> {
    let main = r
        .pred_depth
        .ok_or(Error::MissingField(r.instance_id, "pred_depth"))?;
    if r.aux_depths.is_empty() {
        return Ok(0.0);
    }
    let n = (1 + r.aux_depths.len()) as f64;
    let mean = (main + r.aux_depths.iter().sum::<f64>()) / n;
    let ss = std::iter::once(main)
        .chain(r.aux_depths.iter().copied())
        .map(|z| (z - mean) * (z - mean))
        .sum::<f64>();
    Ok(ss / n)
}

fn depth_var_scores(pool: &[&InstanceRecord]) -> Result<Vec<(InstanceId, f64)>> {
    pool.iter()
        .map(|r| Ok((r.instance_id, depth_variance(r)?)))
        .collect()
}

/// Most disputed depth first.
pub fn select_ens_depth_var(pool: &[&InstanceRecord], k: usize) -> Result<Vec<InstanceId>> {
    check_k(k, pool.len())?;
    Ok(top_k(depth_var_scores(pool)?, k))
}

fn depth_extreme_scores(
    pool: &[&InstanceRecord],
    mode: DepthMode,
    filters: &DepthFilters,
) -> Result<Vec<(InstanceId, f64)>> {
    let mut out = Vec::with_capacity(pool.len());
    for r in pool {
        let z = r
            .pred_depth
            .ok_or(Error::MissingField(r.instance_id, "pred_depth"))?;
        match mode {
            DepthMode::Close => out.push((r.instance_id, -z)),
            DepthMode::Far => {
                if r.box2d.h >= filters.min_px_height && z < filters.max_depth {
                    out.push((r.instance_id, z));
                }
            }
        }
    }
    Ok(out)
}

/// Closest first, or farthest first among instances passing `filters`.
/// Returns fewer than `k` ids when fewer instances are eligible.
pub fn select_depth_extreme(
    pool: &[&InstanceRecord],
    k: usize,
    mode: DepthMode,
    filters: &DepthFilters,
) -> Result<Vec<InstanceId>> {
    Ok(top_k(depth_extreme_scores(pool, mode, filters)?, k))
}

/// Everything a strategy may look at when ranking a pool.
pub struct SelectionContext<'a> {
    pub pool: Vec<&'a InstanceRecord>,
    pub labeled: Vec<&'a InstanceRecord>,
    /// Dataset views, used to resolve Core-Set defaults.
    pub available_views: &'a [ViewSpec],
    pub seed: u64,
}

impl SelectionContext<'_> {
    fn pool_ids(&self) -> Vec<InstanceId> {
        self.pool.iter().map(|r| r.instance_id).collect()
    }

    /// Metric over pool and labeled records, indexed in ascending id order.
    fn metric(&self, cfg: &StrategyConfig) -> Result<FusedMetric> {
        let views = cfg.resolve_views(self.available_views)?;
        let mut all: Vec<&InstanceRecord> =
            self.pool.iter().chain(&self.labeled).copied().collect();
        all.sort_by_key(|r| r.instance_id);
        all.dedup_by_key(|r| r.instance_id);
        match cfg.pca_var_keep {
            Some(keep) => FusedMetric::with_pca(&all, &views, cfg.metric, keep),
            None => FusedMetric::new(&all, &views, cfg.metric),
        }
    }

    fn index_sets(&self, m: &FusedMetric) -> (Vec<usize>, Vec<usize>) {
        let idx = |r: &&InstanceRecord| m.index_of(r.instance_id).expect("record in metric");
        (
            self.pool.iter().map(idx).collect(),
            self.labeled.iter().map(idx).collect(),
        )
    }
}

/// Full ranking of the pool under `cfg`, most wanted first. Far-depth drops
/// ineligible instances; every other strategy returns a permutation of the pool.
pub fn rank_pool(cfg: &StrategyConfig, ctx: &SelectionContext<'_>) -> Result<Vec<InstanceId>> {
    let n = ctx.pool.len();
    match cfg.kind {
        StrategyKind::Random => select_random(&ctx.pool_ids(), n, ctx.seed),
        StrategyKind::Confidence => select_confidence(&ctx.pool, n),
        StrategyKind::EnsDepthVar => select_ens_depth_var(&ctx.pool, n),
        StrategyKind::CloseDepth => {
            select_depth_extreme(&ctx.pool, n, DepthMode::Close, &cfg.far_depth_filters)
        }
        StrategyKind::FarDepth => {
            select_depth_extreme(&ctx.pool, n, DepthMode::Far, &cfg.far_depth_filters)
        }
        StrategyKind::Coreset | StrategyKind::CoresetBox3d | StrategyKind::Ideal => {
            if n == 0 {
                return Ok(Vec::new());
            }
            let m = ctx.metric(cfg)?;
            let (pool, labeled) = ctx.index_sets(&m);
            let picks = coreset_select(&pool, &labeled, |a, b| m.distance_at(a, b), n)?;
            Ok(picks.into_iter().map(|i| m.ids()[i]).collect())
        }
    }
}

/// Per-instance scores, higher meaning more wanted. Core-Set kinds score each
/// instance by its distance to the labeled set without greedy updates.
pub fn instance_scores(
    cfg: &StrategyConfig,
    ctx: &SelectionContext<'_>,
) -> Result<Vec<(InstanceId, f64)>> {
    match cfg.kind {
        StrategyKind::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
            Ok(sorted_ids(&ctx.pool_ids())
                .into_iter()
                .map(|id| (id, rng.random::<f64>()))
                .collect())
        }
        StrategyKind::Confidence => confidence_scores(&ctx.pool),
        StrategyKind::EnsDepthVar => depth_var_scores(&ctx.pool),
        StrategyKind::CloseDepth => {
            depth_extreme_scores(&ctx.pool, DepthMode::Close, &cfg.far_depth_filters)
        }
        StrategyKind::FarDepth => {
            depth_extreme_scores(&ctx.pool, DepthMode::Far, &cfg.far_depth_filters)
        }
        StrategyKind::Coreset | StrategyKind::CoresetBox3d | StrategyKind::Ideal => {
            if ctx.pool.is_empty() {
                return Ok(Vec::new());
            }
            let m = ctx.metric(cfg)?;
            let (pool, labeled) = ctx.index_sets(&m);
            pool.iter()
                .map(|&i| {
                    Ok((
                        m.ids()[i],
                        coreset_score(i, &labeled, |a, b| m.distance_at(a, b))?,
                    ))
                })
                .collect()
        }
    }
}

/// Image-level wrapper around an instance scorer.
///
/// Each image scores as its best instance. Images are taken in descending
/// score (ties by image id) until the charged total, the sum of the images'
/// labelable ground-truth counts, first reaches `budget`. Returns the images
/// in selection order and the charged total.
pub fn image_level_select(
    pool: &[&InstanceRecord],
    scores: &[(InstanceId, f64)],
    labelable: &HashMap<ImageId, usize>,
    budget: usize,
) -> (Vec<ImageId>, usize) {
    let by_id: HashMap<InstanceId, f64> = scores.iter().copied().collect();
    let mut best: HashMap<&str, f64> = HashMap::new();
    for r in pool {
        if let Some(&s) = by_id.get(&r.instance_id) {
            best.entry(r.image_id.as_str())
                .and_modify(|b| *b = b.max(s))
                .or_insert(s);
        }
    }
    let mut ranked: Vec<(&str, f64)> = best.into_iter().collect();
    ranked.sort_by(|a, b| match b.1.total_cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });

    let mut chosen = Vec::new();
    let mut charged = 0;
    for (image, _) in ranked {
        if charged >= budget {
            break;
        }
        charged += labelable.get(image).copied().unwrap_or(0);
        chosen.push(image.to_string());
    }
    (chosen, charged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::instance;
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::HashSet;

    /// Recomputes every candidate's distance to the full reference set at each step.
    fn brute_force_greedy<F: Fn(u64, u64) -> f64>(
        pool: &[u64],
        labeled: &[u64],
        dist: F,
        k: usize,
    ) -> Vec<u64> {
        let mut reference = labeled.to_vec();
        let mut remaining = pool.to_vec();
        let mut out = Vec::new();
        for _ in 0..k {
            let score = |c: u64| {
                reference
                    .iter()
                    .map(|&z| dist(c, z))
                    .fold(f64::INFINITY, f64::min)
            };
            let best = remaining
                .iter()
                .copied()
                .max_by(|&a, &b| score(a).total_cmp(&score(b)).then(b.cmp(&a)))
                .unwrap();
            remaining.retain(|&c| c != best);
            reference.push(best);
            out.push(best);
        }
        out
    }

    fn line_dist(pos: &HashMap<u64, f64>) -> impl Fn(u64, u64) -> f64 + '_ {
        move |a, b| (pos[&a] - pos[&b]).abs()
    }

    #[test]
    fn coreset_score_examples() {
        let d = |a: u64, b: u64| match (a.min(b), a.max(b)) {
            (0, 1) => 0.9,
            (0, 2) => 0.4,
            (0, 3) => 0.6,
            (x, y) if x == y => 0.0,
            _ => 0.7,
        };
        assert_eq!(coreset_score(0, &[0], d).unwrap(), 0.0);
        assert_eq!(coreset_score(5, &[6], d).unwrap(), 0.7);
        let brute = [0.9f64, 0.4, 0.6].into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(coreset_score(0, &[1, 2, 3], d).unwrap(), brute);
        assert!(matches!(
            coreset_score(0, &[], d),
            Err(Error::EmptyLabeledSet)
        ));
    }

    #[test]
    fn coreset_one_dimensional_example() {
        // ids 0..4 sit at positions 0, 1, 2, 10
        let pos: HashMap<u64, f64> = [(0, 0.0), (1, 1.0), (2, 2.0), (3, 10.0)].into();
        let d = line_dist(&pos);
        let got = coreset_select(&[1, 2, 3], &[0], &d, 2).unwrap();
        assert_eq!(got, brute_force_greedy(&[1, 2, 3], &[0], &d, 2));
        assert_eq!(got, vec![3, 2]);
    }

    #[test]
    fn coreset_full_pool_is_a_permutation_and_ties_go_low() {
        let pos: HashMap<u64, f64> = [(0, 0.0), (4, 3.0), (9, -3.0), (2, 1.0)].into();
        let d = line_dist(&pos);
        let got = coreset_select(&[9, 4, 2], &[0], &d, 3).unwrap();
        assert_eq!(
            got.iter().copied().collect::<HashSet<_>>(),
            [9, 4, 2].into()
        );
        // 4 and 9 are both 3 away from 0
        assert_eq!(got[0], 4);
    }

    #[test]
    fn coreset_errors() {
        let d = |_: u64, _: u64| 1.0;
        assert!(matches!(
            coreset_select(&[1], &[], d, 1),
            Err(Error::EmptyLabeledSet)
        ));
        assert!(matches!(
            coreset_select(&[1], &[0], d, 2),
            Err(Error::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn cache_matches_brute_force_after_every_pick() {
        // selecting k and then k+1 must agree on the prefix, and each prefix
        // must equal the brute-force oracle, which recomputes all minima
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pos: HashMap<u64, f64> = (0..30).map(|i| (i, rng.random_range(-5.0..5.0))).collect();
        let d = line_dist(&pos);
        let pool: Vec<u64> = (3..30).collect();
        for k in 0..=pool.len() {
            assert_eq!(
                coreset_select(&pool, &[0, 1, 2], &d, k).unwrap(),
                brute_force_greedy(&pool, &[0, 1, 2], &d, k)
            );
        }
    }

    #[test]
    fn random_examples() {
        let pool: Vec<u64> = (0..20).collect();
        assert_eq!(
            select_random(&pool, 5, 42).unwrap(),
            select_random(&pool, 5, 42).unwrap()
        );
        let mut reversed = pool.clone();
        reversed.reverse();
        assert_eq!(
            select_random(&reversed, 5, 42).unwrap(),
            select_random(&pool, 5, 42).unwrap()
        );
        let mut all = select_random(&pool, 20, 1).unwrap();
        all.sort();
        assert_eq!(all, pool);
        assert!(select_random(&pool, 21, 1).is_err());
    }

    #[test]
    fn random_single_draw_is_uniform() {
        let pool = [10u64, 11, 12, 13];
        let draws = 10_000;
        let mut counts = HashMap::new();
        for seed in 0..draws {
            *counts
                .entry(select_random(&pool, 1, seed).unwrap()[0])
                .or_insert(0usize) += 1;
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for id in pool {
            let c = counts.get(&id).copied().unwrap_or(0) as f64;
            assert!(
                (c - 0.25 * draws as f64).abs() <= 4.0 * sigma,
                "id {id}: {c}"
            );
        }
    }

    fn with_conf(id: u64, c: Option<f64>, dc: Option<f64>) -> InstanceRecord {
        let mut r = instance(id, "i", &[]);
        r.confidence = c;
        r.depth_confidence = dc;
        r
    }

    #[test]
    fn confidence_examples() {
        let rs = [
            with_conf(0, Some(0.9), None),
            with_conf(1, Some(0.1), None),
            with_conf(2, Some(0.5), None),
        ];
        let refs: Vec<_> = rs.iter().collect();
        assert_eq!(select_confidence(&refs, 2).unwrap(), vec![1, 2]);

        let eq = [with_conf(5, Some(0.3), None), with_conf(3, Some(0.3), None)];
        assert_eq!(
            select_confidence(&eq.iter().collect::<Vec<_>>(), 2).unwrap(),
            vec![3, 5]
        );

        let prod = [
            with_conf(0, Some(0.3), None),
            with_conf(1, Some(0.5), Some(0.5)),
        ];
        assert!(combined_confidence(&prod[1]).unwrap() < combined_confidence(&prod[0]).unwrap());
        assert_eq!(
            select_confidence(&prod.iter().collect::<Vec<_>>(), 1).unwrap(),
            vec![1]
        );

        let missing = [with_conf(0, None, None)];
        assert!(matches!(
            select_confidence(&missing.iter().collect::<Vec<_>>(), 1),
            Err(Error::MissingField(0, "confidence"))
        ));
    }

    fn with_depths(id: u64, main: f64, aux: &[f64]) -> InstanceRecord {
        let mut r = instance(id, "i", &[]);
        r.pred_depth = Some(main);
        r.aux_depths = aux.to_vec();
        r
    }

    #[test]
    fn ens_depth_var_examples() {
        let flat = with_depths(0, 10.0, &[10.0, 10.0]);
        let wide = with_depths(1, 10.0, &[20.0]);
        let narrow = with_depths(2, 10.0, &[12.0]);
        let lonely = with_depths(3, 40.0, &[]);
        assert_eq!(depth_variance(&flat).unwrap(), 0.0);
        assert_eq!(depth_variance(&wide).unwrap(), 25.0);
        assert_eq!(depth_variance(&narrow).unwrap(), 1.0);
        assert_eq!(depth_variance(&lonely).unwrap(), 0.0);
        let pool = [&flat, &wide, &narrow, &lonely];
        assert_eq!(select_ens_depth_var(&pool, 4).unwrap(), vec![1, 2, 0, 3]);
    }

    #[test]
    fn depth_extreme_examples() {
        let rs = [
            with_depths(0, 5.0, &[]),
            with_depths(1, 60.0, &[]),
            with_depths(2, 30.0, &[]),
        ];
        let pool: Vec<_> = rs.iter().collect();
        let f = DepthFilters::default();
        assert_eq!(
            select_depth_extreme(&pool, 3, DepthMode::Far, &f).unwrap(),
            vec![2, 0]
        );
        assert_eq!(
            select_depth_extreme(&pool, 1, DepthMode::Close, &f).unwrap(),
            vec![0]
        );

        let edge = [with_depths(7, 50.0, &[]), with_depths(8, 49.9, &[])];
        assert_eq!(
            select_depth_extreme(&edge.iter().collect::<Vec<_>>(), 2, DepthMode::Far, &f).unwrap(),
            vec![8]
        );

        let mut short = with_depths(9, 20.0, &[]);
        short.box2d.h = 24.0;
        assert!(select_depth_extreme(&[&short], 1, DepthMode::Far, &f)
            .unwrap()
            .is_empty());
    }

    fn img_record(id: u64, image: &str) -> InstanceRecord {
        instance(id, image, &[])
    }

    #[test]
    fn image_level_examples() {
        let a = img_record(0, "a");
        let b = img_record(1, "b");
        let pool = [&a, &b];
        let scores = [(0, 0.9), (1, 0.5)];
        let counts: HashMap<ImageId, usize> = [("a".into(), 3), ("b".into(), 5)].into();
        assert_eq!(
            image_level_select(&pool, &scores, &counts, 4),
            (vec!["a".into(), "b".into()], 8)
        );
        assert_eq!(
            image_level_select(&pool, &scores, &counts, 3),
            (vec!["a".into()], 3)
        );
        assert_eq!(image_level_select(&[], &[], &counts, 3), (vec![], 0));
    }

    #[test]
    fn image_scores_by_best_instance() {
        let a0 = img_record(0, "a");
        let a1 = img_record(1, "a");
        let b0 = img_record(2, "b");
        let scores = [(0, 0.1), (1, 0.95), (2, 0.5)];
        let counts: HashMap<ImageId, usize> = [("a".into(), 1), ("b".into(), 1)].into();
        let (imgs, _) = image_level_select(&[&a0, &a1, &b0], &scores, &counts, 1);
        assert_eq!(imgs, vec!["a".to_string()]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        let err = "badge".parse::<StrategyKind>().unwrap_err().to_string();
        assert!(err.contains("coreset_box3d"));
    }

    #[test]
    fn default_views_per_kind() {
        let avail = [
            ViewSpec::new("cls", 4, 0.0),
            ViewSpec::new("box3d", 3, 0.5),
            ViewSpec::new("vis", 2, 0.5),
        ];
        let names = |k| {
            StrategyConfig::new(k)
                .resolve_views(&avail)
                .unwrap()
                .into_iter()
                .map(|v| (v.name, v.lambda))
                .collect::<Vec<_>>()
        };
        assert_eq!(names(StrategyKind::Coreset), vec![("cls".into(), 1.0)]);
        assert_eq!(
            names(StrategyKind::CoresetBox3d),
            vec![("box3d".into(), 1.0)]
        );
        assert_eq!(
            names(StrategyKind::Ideal),
            vec![("box3d".into(), 0.5), ("vis".into(), 0.5)]
        );
        let mut bad = StrategyConfig::new(StrategyKind::Ideal);
        bad.views = vec![ViewSpec::new("nope", 1, 1.0)];
        assert!(bad.resolve_views(&avail).is_err());
    }

    fn random_records(rng: &mut ChaCha8Rng, n: usize, dims: &[usize]) -> Vec<InstanceRecord> {
        (0..n)
            .map(|i| {
                let feats: Vec<(String, Vec<f64>)> = dims
                    .iter()
                    .enumerate()
                    .map(|(v, &d)| {
                        (
                            format!("v{v}"),
                            (0..d).map(|_| rng.random_range(-1.0..1.0)).collect(),
                        )
                    })
                    .collect();
                let mut r = instance(i as u64 * 3 + 1, "i", &[]);
                r.features = feats.into_iter().collect();
                r
            })
            .collect()
    }

    #[test]
    fn rank_pool_coreset_matches_oracle_on_records() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let recs = random_records(&mut rng, 40, &[4, 3]);
        let views = vec![ViewSpec::new("v0", 4, 0.4), ViewSpec::new("v1", 3, 0.6)];
        let mut cfg = StrategyConfig::new(StrategyKind::Ideal);
        cfg.views = views.clone();
        let ctx = SelectionContext {
            pool: recs[5..].iter().collect(),
            labeled: recs[..5].iter().collect(),
            available_views: &views,
            seed: 0,
        };
        let got = rank_pool(&cfg, &ctx).unwrap();
        let by_id: HashMap<u64, &InstanceRecord> =
            recs.iter().map(|r| (r.instance_id, r)).collect();
        let d =
            |a: u64, b: u64| crate::features::fused_distance(by_id[&a], by_id[&b], &views).unwrap();
        let pool_ids: Vec<u64> = recs[5..].iter().map(|r| r.instance_id).collect();
        let lab_ids: Vec<u64> = recs[..5].iter().map(|r| r.instance_id).collect();
        assert_eq!(
            got,
            brute_force_greedy(&pool_ids, &lab_ids, d, pool_ids.len())
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn coreset_equals_brute_force(
            seed in any::<u64>(),
            n in 2usize..60,
            n_lab in 1usize..5,
            k_frac in 0.0..1.0f64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<[f64; 2]> = (0..n + n_lab).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
            let d = |a: u64, b: u64| {
                let (p, q) = (pts[a as usize], pts[b as usize]);
                (p[0] - q[0]).hypot(p[1] - q[1])
            };
            let labeled: Vec<u64> = (0..n_lab as u64).collect();
            let pool: Vec<u64> = (n_lab as u64..(n + n_lab) as u64).collect();
            let k = ((n as f64) * k_frac) as usize;
            let got = coreset_select(&pool, &labeled, d, k).unwrap();
            prop_assert_eq!(&got, &brute_force_greedy(&pool, &labeled, d, k));
            let distinct: HashSet<_> = got.iter().collect();
            prop_assert_eq!(distinct.len(), got.len());
        }

        #[test]
        fn every_strategy_returns_distinct_pool_ids(seed in any::<u64>(), n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut recs = random_records(&mut rng, n + 2, &[3]);
            for r in &mut recs {
                r.pred_depth = Some(rng.random_range(2.0..80.0));
                r.aux_depths = vec![rng.random_range(2.0..80.0)];
                r.confidence = Some(rng.random_range(0.0..1.0));
                r.box2d.h = rng.random_range(5.0..80.0);
            }
            let views = vec![ViewSpec::new("v0", 3, 1.0)];
            let ctx = SelectionContext {
                pool: recs[2..].iter().collect(),
                labeled: recs[..2].iter().collect(),
                available_views: &views,
                seed,
            };
            let pool: HashSet<u64> = ctx.pool.iter().map(|r| r.instance_id).collect();
            for kind in StrategyKind::ALL {
                let got = rank_pool(&StrategyConfig::new(kind), &ctx).unwrap();
                let set: HashSet<u64> = got.iter().copied().collect();
                prop_assert_eq!(set.len(), got.len());
                prop_assert!(set.is_subset(&pool));
                if kind != StrategyKind::FarDepth {
                    prop_assert_eq!(set.len(), pool.len());
                }
            }
        }

        #[test]
        fn coreset_invariant_to_view_scaling(seed in any::<u64>(), scale in 1e-3..1e3f64) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let recs = random_records(&mut rng, 25, &[3, 2]);
            let mut scaled = recs.clone();
            for r in &mut scaled {
                r.features.get_mut("v1").unwrap().iter_mut().for_each(|x| *x *= scale);
            }
            let views = vec![ViewSpec::new("v0", 3, 0.5), ViewSpec::new("v1", 2, 0.5)];
            let cfg = StrategyConfig::new(StrategyKind::Ideal);
            let rank = |rs: &[InstanceRecord]| {
                let ctx = SelectionContext {
                    pool: rs[3..].iter().collect(),
                    labeled: rs[..3].iter().collect(),
                    available_views: &views,
                    seed: 0,
                };
                rank_pool(&cfg, &ctx).unwrap()
            };
            prop_assert_eq!(rank(&recs), rank(&scaled));
        }

        #[test]
        fn coreset_is_permutation_equivariant(seed in any::<u64>()) {
            // relabel ids by an order-reversing map; with distinct distances
            // the picked points stay the same
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..100.0)).collect();
            let d = |a: u64, b: u64| (pts[a as usize] - pts[b as usize]).abs();
            let pool: Vec<u64> = (2..30).collect();
            let got = coreset_select(&pool, &[0, 1], d, 10).unwrap();
            let flip = |i: u64| 1000 - i;
            let d2 = |a: u64, b: u64| d(flip(a), flip(b));
            let pool2: Vec<u64> = pool.iter().map(|&i| flip(i)).collect();
            let got2 = coreset_select(&pool2, &[flip(0), flip(1)], d2, 10).unwrap();
            prop_assert_eq!(got, got2.into_iter().map(flip).collect::<Vec<_>>());
        }
    }
}
