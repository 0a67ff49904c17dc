//! Domain types, the dataset container and its validation rules.
//!
//! A [`Dataset`] is immutable once loaded and can be shared read-only across
//! workers. Ground-truth objects below the minimum pixel height stay in the
//! dataset; that filter is applied when requests are matched.

mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, read_blob, write_blob, write_dataset, BLOB_MAGIC, MANIFEST_VIEW_BLOB_SUFFIX,
};

pub type InstanceId = u64;
pub type GtId = u64;
pub type ClassId = u32;
pub type ImageId = String;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
}

/// Axis-aligned 2D box given by its center and extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Box2D {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    /// `(x_min, y_min, x_max, y_max)`
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> [f64; 2] {
        [self.cx, self.cy]
    }

    fn is_finite(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite()
    }
}

/// One detector prediction on the unlabeled pool.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub image_id: ImageId,
    pub instance_id: InstanceId,
    pub class_id: ClassId,
    pub box2d: Box2D,
    /// Predicted depth in meters.
    pub pred_depth: Option<f64>,
    /// Classification confidence in `[0, 1]`.
    pub confidence: Option<f64>,
    /// Depth confidence in `[0, 1]`, when the detector exports one.
    pub depth_confidence: Option<f64>,
    /// Depths predicted for this instance by associated auxiliary models.
    pub aux_depths: Vec<f64>,
    pub features: BTreeMap<String, Vec<f64>>,
}

impl InstanceRecord {
    pub fn feature(&self, view: &str) -> Option<&[f64]> {
        self.features.get(view).map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub gt_id: GtId,
    pub image_id: ImageId,
    pub class_id: ClassId,
    pub center2d: [f64; 2],
    pub depth: f64,
    pub pixel_height: f64,
}

/// A named feature view and its fusion weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub dim: usize,
    pub lambda: f64,
}

impl ViewSpec {
    pub fn new(name: impl Into<String>, dim: usize, lambda: f64) -> Self {
        Self {
            name: name.into(),
            dim,
            lambda,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub image_id: ImageId,
    /// Number of ground-truth objects in the image, before any height filter.
    pub gt_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub camera: CameraModel,
    pub views: Vec<ViewSpec>,
    pub instances: Vec<InstanceRecord>,
    pub ground_truth: Vec<GroundTruthObject>,
    pub images: Vec<ImageInfo>,
}

impl Dataset {
    /// Builds a dataset and derives the image list from instances and ground
    /// truth, in order of first appearance.
    pub fn new(
        camera: CameraModel,
        views: Vec<ViewSpec>,
        instances: Vec<InstanceRecord>,
        ground_truth: Vec<GroundTruthObject>,
    ) -> Self {
        let mut order: Vec<ImageId> = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for id in instances
            .iter()
            .map(|r| r.image_id.as_str())
            .chain(ground_truth.iter().map(|g| g.image_id.as_str()))
        {
            if !counts.contains_key(id) {
                counts.insert(id, 0);
                order.push(id.to_string());
            }
        }
        for g in &ground_truth {
            *counts.get_mut(g.image_id.as_str()).unwrap() += 1;
        }
        let images = order
            .iter()
            .map(|id| ImageInfo {
                image_id: id.clone(),
                gt_count: counts[id.as_str()],
            })
            .collect();
        Self {
            camera,
            views,
            instances,
            ground_truth,
            images,
        }
    }

    pub fn view(&self, name: &str) -> Option<&ViewSpec> {
        self.views.iter().find(|v| v.name == name)
    }

    pub fn instance_index(&self) -> HashMap<InstanceId, usize> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, r)| (r.instance_id, i))
            .collect()
    }

    /// Ground-truth objects grouped by image, preserving dataset order.
    pub fn gt_by_image(&self) -> HashMap<&str, Vec<&GroundTruthObject>> {
        let mut map: HashMap<&str, Vec<&GroundTruthObject>> = HashMap::new();
        for g in &self.ground_truth {
            map.entry(g.image_id.as_str()).or_default().push(g);
        }
        map
    }

    /// Ground-truth objects per image that an annotator may label, i.e. at
    /// least `min_px_height` pixels tall.
    pub fn labelable_counts(&self, min_px_height: f64) -> HashMap<ImageId, usize> {
        let mut counts: HashMap<ImageId, usize> = self
            .images
            .iter()
            .map(|i| (i.image_id.clone(), 0))
            .collect();
        for g in &self.ground_truth {
            if g.pixel_height >= min_px_height {
                *counts.entry(g.image_id.clone()).or_default() += 1;
            }
        }
        counts
    }
}

/// A broken data rule, naming the offending record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub subject: String,
    pub rule: String,
}

impl Violation {
    fn new(subject: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            subject: subject.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.rule)
    }
}

/// Checks every type invariant; an empty result means the dataset is valid.
pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();

    if !(d.camera.fx > 0.0) {
        out.push(Violation::new("camera", "fx must be > 0"));
    }
    if !(d.camera.fy > 0.0) {
        out.push(Violation::new("camera", "fy must be > 0"));
    }

    let mut view_names = HashSet::new();
    for v in &d.views {
        let subject = format!("view {}", v.name);
        if !view_names.insert(v.name.as_str()) {
            out.push(Violation::new(&subject, "view names must be unique"));
        }
        if v.dim < 1 {
            out.push(Violation::new(&subject, "dim must be >= 1"));
        }
        if !(v.lambda >= 0.0) || !v.lambda.is_finite() {
            out.push(Violation::new(&subject, "lambda must be finite and >= 0"));
        }
    }

    let image_ids: HashSet<&str> = d.images.iter().map(|i| i.image_id.as_str()).collect();
    let mut instance_ids = HashSet::new();
    for r in &d.instances {
        let subject = format!("instance {}", r.instance_id);
        if !instance_ids.insert(r.instance_id) {
            out.push(Violation::new(&subject, "instance_id must be unique"));
        }
        if !image_ids.contains(r.image_id.as_str()) {
            out.push(Violation::new(
                &subject,
                format!("unknown image_id {}", r.image_id),
            ));
        }
        if !r.box2d.is_finite() {
            out.push(Violation::new(&subject, "box2d coordinates must be finite"));
        }
        if r.box2d.w < 0.0 || r.box2d.h < 0.0 {
            out.push(Violation::new(&subject, "box2d w and h must be >= 0"));
        }
        if let Some(z) = r.pred_depth {
            if !(z > 0.0) || !z.is_finite() {
                out.push(Violation::new(&subject, "pred_depth must be > 0"));
            }
        }
        for (name, c) in [
            ("confidence", r.confidence),
            ("depth_confidence", r.depth_confidence),
        ] {
            if let Some(c) = c {
                if !(0.0..=1.0).contains(&c) {
                    out.push(Violation::new(
                        &subject,
                        format!("{name} must lie in [0, 1]"),
                    ));
                }
            }
        }
        if r.aux_depths.iter().any(|z| !(*z > 0.0) || !z.is_finite()) {
            out.push(Violation::new(&subject, "aux_depths must be > 0"));
        }
        for v in &d.views {
            match r.features.get(&v.name) {
                None => out.push(Violation::new(&subject, format!("missing view {}", v.name))),
                Some(f) if f.len() != v.dim => out.push(Violation::new(
                    &subject,
                    format!(
                        "view {} has dim {} but {} is declared",
                        v.name,
                        f.len(),
                        v.dim
                    ),
                )),
                Some(f) if f.iter().any(|x| !x.is_finite()) => out.push(Violation::new(
                    &subject,
                    format!("view {} has non-finite values", v.name),
                )),
                _ => {}
            }
        }
    }

    let mut gt_ids = HashSet::new();
    for g in &d.ground_truth {
        let subject = format!("gt {}", g.gt_id);
        if !gt_ids.insert(g.gt_id) {
            out.push(Violation::new(&subject, "gt_id must be unique"));
        }
        if !image_ids.contains(g.image_id.as_str()) {
            out.push(Violation::new(
                &subject,
                format!("unknown image_id {}", g.image_id),
            ));
        }
        if !(g.pixel_height >= 0.0) {
            out.push(Violation::new(&subject, "pixel_height must be >= 0"));
        }
        if !(g.depth > 0.0) || !g.depth.is_finite() {
            out.push(Violation::new(&subject, "depth must be > 0"));
        }
        if !g.center2d.iter().all(|c| c.is_finite()) {
            out.push(Violation::new(&subject, "center2d must be finite"));
        }
    }

    out
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn instance(id: InstanceId, image: &str, feats: &[(&str, &[f64])]) -> InstanceRecord {
        InstanceRecord {
            image_id: image.to_string(),
            instance_id: id,
            class_id: 0,
            box2d: Box2D::new(100.0 + id as f64, 50.0, 20.0, 30.0),
            pred_depth: Some(10.0 + id as f64),
            confidence: Some(0.5),
            depth_confidence: None,
            aux_depths: vec![],
            features: feats
                .iter()
                .map(|(n, v)| (n.to_string(), v.to_vec()))
                .collect(),
        }
    }

    pub fn gt(id: GtId, image: &str, center: [f64; 2], pixel_height: f64) -> GroundTruthObject {
        GroundTruthObject {
            gt_id: id,
            image_id: image.to_string(),
            class_id: 0,
            center2d: center,
            depth: 20.0,
            pixel_height,
        }
    }

    pub fn small_dataset() -> Dataset {
        let views = vec![ViewSpec::new("a", 3, 0.5), ViewSpec::new("b", 2, 0.5)];
        let instances = (0..4)
            .map(|i| {
                let x = i as f64;
                instance(
                    i,
                    if i < 2 { "img0" } else { "img1" },
                    &[("a", &[x, 1.0, -x]), ("b", &[0.25 * x, 2.0])],
                )
            })
            .collect();
        let gts = vec![
            gt(100, "img0", [100.0, 50.0], 30.0),
            gt(101, "img1", [102.0, 50.0], 10.0),
        ];
        Dataset::new(
            CameraModel {
                fx: 700.0,
                fy: 700.0,
            },
            views,
            instances,
            gts,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn valid_fixture_has_no_violations() {
        assert!(validate_dataset(&small_dataset()).is_empty());
    }

    #[test]
    fn negative_depth_is_one_violation_naming_the_instance() {
        let mut d = small_dataset();
        d.instances[2].pred_depth = Some(-1.0);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].subject, "instance 2");
        assert!(v[0].rule.contains("pred_depth"));
    }

    #[test]
    fn short_ground_truth_is_not_a_data_violation() {
        let d = small_dataset();
        assert!(d.ground_truth.iter().any(|g| g.pixel_height < 25.0));
        assert!(validate_dataset(&d).is_empty());
    }

    #[test]
    fn missing_view_and_wrong_dim_are_reported() {
        let mut d = small_dataset();
        d.instances[0].features.remove("b");
        d.instances[1].features.insert("a".into(), vec![1.0]);
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 2);
        assert!(v
            .iter()
            .any(|x| x.subject == "instance 0" && x.rule.contains("missing view b")));
        assert!(v
            .iter()
            .any(|x| x.subject == "instance 1" && x.rule.contains("dim 1")));
    }

    #[test]
    fn duplicate_ids_and_views_are_reported() {
        let mut d = small_dataset();
        d.instances[1].instance_id = 0;
        d.views.push(ViewSpec::new("a", 3, 0.0));
        let v = validate_dataset(&d);
        assert!(v
            .iter()
            .any(|x| x.rule.contains("instance_id must be unique")));
        assert!(v
            .iter()
            .any(|x| x.rule.contains("view names must be unique")));
    }

    #[test]
    fn images_are_derived_in_first_appearance_order() {
        let d = small_dataset();
        let ids: Vec<_> = d.images.iter().map(|i| i.image_id.as_str()).collect();
        assert_eq!(ids, ["img0", "img1"]);
        assert_eq!(d.images[1].gt_count, 1);
        assert_eq!(d.labelable_counts(25.0)["img1"], 0);
    }
}
