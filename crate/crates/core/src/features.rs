//! Distances over feature views and PCA compression.
//!
//! The fused distance between two instances is `sum_i lambda_i * d_cos(f_i(a), f_i(b))`
//! over the configured views. Weights are used as given.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{InstanceId, InstanceRecord, ViewSpec};

#[inline]
fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[inline]
fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

// Shared by the one-off and the cached paths so both give identical bits.
#[inline]
fn cosine_from_parts(uv: f64, nu: f64, nv: f64) -> f64 {
    if nu == 0.0 || nv == 0.0 {
        return 1.0;
    }
    (1.0 - uv / (nu * nv)).clamp(0.0, 2.0)
}

/// `1 - u.v / (|u| |v|)`, in `[0, 2]`. A zero vector is treated as orthogonal
/// to everything, giving 1.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(cosine_from_parts(dot(u, v), norm(u), norm(v)))
}

pub fn euclidean_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "euclidean distance between vectors of length {} and {}",
            u.len(),
            v.len()
        )));
    }
    Ok(u.iter()
        .zip(v)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Weighted sum of per-view cosine distances.
pub fn fused_distance(a: &InstanceRecord, b: &InstanceRecord, views: &[ViewSpec]) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        total += v.lambda * cosine_distance(view_of(a, v)?, view_of(b, v)?)?;
    }
    Ok(total)
}

fn view_of<'a>(r: &'a InstanceRecord, v: &ViewSpec) -> Result<&'a [f64]> {
    r.feature(&v.name).ok_or_else(|| Error::MissingView {
        view: v.name.clone(),
        instance_id: r.instance_id,
    })
}

/// Returns a warning when the fusion weights do not sum to one.
pub fn check_weights(views: &[ViewSpec]) -> Option<String> {
    let sum: f64 = views.iter().map(|v| v.lambda).sum();
    ((sum - 1.0).abs() > 1e-9).then(|| format!("view weights sum to {sum}, not 1"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Weighted cosine across views.
    #[default]
    Cosine,
    /// Weighted Euclidean across views.
    Euclidean,
}

struct ViewData {
    lambda: f64,
    vectors: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

/// Pairwise fused distances over a fixed set of instances, with per-vector
/// norms cached. Optionally works in a per-view PCA-compressed space.
pub struct FusedMetric {
    ids: Vec<InstanceId>,
    pos: HashMap<InstanceId, usize>,
    views: Vec<ViewData>,
    metric: Metric,
}

impl FusedMetric {
    pub fn new(records: &[&InstanceRecord], views: &[ViewSpec], metric: Metric) -> Result<Self> {
        Self::build(records, views, metric, None)
    }

    /// Like [`FusedMetric::new`], but each view is first compressed by a PCA
    /// fitted on `records` that keeps `var_keep` of the variance.
    pub fn with_pca(
        records: &[&InstanceRecord],
        views: &[ViewSpec],
        metric: Metric,
        var_keep: f64,
    ) -> Result<Self> {
        Self::build(records, views, metric, Some(var_keep))
    }

    fn build(
        records: &[&InstanceRecord],
        views: &[ViewSpec],
        metric: Metric,
        pca: Option<f64>,
    ) -> Result<Self> {
        let ids: Vec<InstanceId> = records.iter().map(|r| r.instance_id).collect();
        let pos = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut data = Vec::with_capacity(views.len());
        for v in views {
            let mut raw = Vec::with_capacity(records.len());
            for r in records {
                let f = view_of(r, v)?;
                if f.len() != v.dim {
                    return Err(Error::DimensionMismatch {
                        view: v.name.clone(),
                        expected: v.dim,
                        found: f.len(),
                    });
                }
                raw.push(f);
            }
            let vectors = match pca {
                Some(keep) if records.len() >= 2 => match pca_fit(&raw, keep) {
                    Ok(model) => pca_transform(&model, &raw)?,
                    // a constant view carries no distance information either way
                    Err(Error::ZeroVariance) => raw.iter().map(|f| f.to_vec()).collect(),
                    Err(e) => return Err(e),
                },
                _ => raw.iter().map(|f| f.to_vec()).collect(),
            };
            let norms = vectors.iter().map(|f| norm(f)).collect();
            data.push(ViewData {
                lambda: v.lambda,
                vectors,
                norms,
            });
        }
        Ok(Self {
            ids,
            pos,
            views: data,
            metric,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn index_of(&self, id: InstanceId) -> Option<usize> {
        self.pos.get(&id).copied()
    }

    /// Distance between the `i`-th and `j`-th instances.
    pub fn distance_at(&self, i: usize, j: usize) -> f64 {
        let mut total = 0.0;
        for v in &self.views {
            let (a, b) = (&v.vectors[i], &v.vectors[j]);
            let d = match self.metric {
                Metric::Cosine => cosine_from_parts(dot(a, b), v.norms[i], v.norms[j]),
                Metric::Euclidean => a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
            };
            total += v.lambda * d;
        }
        total
    }

    /// Distance between two instances by id. Panics on ids outside the set.
    pub fn distance(&self, a: InstanceId, b: InstanceId) -> f64 {
        self.distance_at(self.pos[&a], self.pos[&b])
    }

    /// Largest distance the metric can produce (cosine only; `None` for Euclidean).
    pub fn upper_bound(&self) -> Option<f64> {
        match self.metric {
            Metric::Cosine => Some(2.0 * self.views.iter().map(|v| v.lambda).sum::<f64>()),
            Metric::Euclidean => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `dim`.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }
}

fn to_matrix<R: AsRef<[f64]>>(rows: &[R]) -> Result<(usize, usize, DMatrix<f64>)> {
    let n = rows.len();
    let d = rows.first().map_or(0, |r| r.as_ref().len());
    if rows.iter().any(|r| r.as_ref().len() != d) {
        return Err(Error::InvalidArgument("ragged matrix rows".into()));
    }
    Ok((n, d, DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j])))
}

/// Fits a PCA keeping the fewest components whose cumulative explained
/// variance ratio reaches `var_keep`.
///
/// Each component is signed so that its largest-magnitude coefficient is
/// positive.
pub fn pca_fit<R: AsRef<[f64]>>(x: &[R], var_keep: f64) -> Result<PcaModel> {
    if !(var_keep > 0.0 && var_keep <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "var_keep must lie in (0, 1], got {var_keep}"
        )));
    }
    let (n, d, mut m) = to_matrix(x)?;
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::InvalidArgument("PCA on zero-width rows".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| m.column(j).sum() / n as f64).collect();
    for (j, mu) in mean.iter().enumerate() {
        m.column_mut(j).add_scalar_mut(-mu);
    }

    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let variances: Vec<f64> = order
        .iter()
        .map(|&i| svd.singular_values[i].powi(2))
        .collect();
    let total: f64 = variances.iter().sum();
    let scale = mean.iter().map(|x| x.abs()).fold(1.0, f64::max);
    if !(total > (1e-12 * scale).powi(2) * n as f64) {
        return Err(Error::ZeroVariance);
    }

    let ratios: Vec<f64> = variances.iter().map(|v| v / total).collect();
    let mut k = ratios.len();
    let mut cum = 0.0;
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= var_keep - 1e-12 {
            k = i + 1;
            break;
        }
    }

    let components = order[..k]
        .iter()
        .map(|&i| {
            let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
            let pivot = row
                .iter()
                .copied()
                .fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
            row
        })
        .collect();

    Ok(PcaModel {
        mean,
        components,
        explained_variance_ratio: ratios[..k].to_vec(),
    })
}

/// Projects rows onto the model's components: `(x - mean) * components^T`.
pub fn pca_transform<R: AsRef<[f64]>>(model: &PcaModel, x: &[R]) -> Result<Vec<Vec<f64>>> {
    x.iter()
        .map(|row| {
            let row = row.as_ref();
            if row.len() != model.dim() {
                return Err(Error::DimensionMismatch {
                    view: "pca input".into(),
                    expected: model.dim(),
                    found: row.len(),
                });
            }
            let centered: Vec<f64> = row.iter().zip(&model.mean).map(|(a, m)| a - m).collect();
            Ok(model.components.iter().map(|c| dot(&centered, c)).collect())
        })
        .collect()
}

/// Maps projected rows back to the input space.
pub fn pca_inverse(model: &PcaModel, t: &[Vec<f64>]) -> Vec<Vec<f64>> {
    t.iter()
        .map(|row| {
            let mut out = model.mean.clone();
            for (coef, comp) in row.iter().zip(&model.components) {
                for (o, c) in out.iter_mut().zip(comp) {
                    *o += coef * c;
                }
            }
            out
        })
        .collect()
}
