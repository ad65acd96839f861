//! Geometric scene representation and rule-based spatial relations.
//!
//! Boxes use a half-open pixel convention in the image frame: a box
//! `(x_min, y_min, x_max, y_max)` covers columns `x_min..x_max` and rows
//! `y_min..y_max`, with `y` growing downward. "Above" therefore means a
//! smaller `y`.
//!
//! Every geometric quantity used by the relation rules is computed over an
//! object's *footprint*: its segmentation mask when both objects of a pair
//! carry one, its box interior otherwise.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dilation slack allowed between a mask's foreground and its object's box.
pub const MASK_BOX_SLACK: u32 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("degenerate bounding box for object `{object_id}`: {bbox:?}")]
    DegenerateBox { object_id: String, bbox: BoundingBox },
    #[error("mask of object `{object_id}` lies outside its bounding box")]
    MaskOutOfBounds { object_id: String },
    #[error("invalid mask for object `{object_id}`: {reason}")]
    InvalidMask { object_id: String, reason: String },
    #[error("masks of `{a}` and `{b}` have different image dimensions")]
    MaskDimensionMismatch { a: String, b: String },
    #[error("invalid object `{object_id}`: {reason}")]
    InvalidObject { object_id: String, reason: String },
    #[error("duplicate object id `{0}`")]
    DuplicateObjectId(String),
    #[error("relation references unknown object `{0}`")]
    DanglingRelation(String),
    #[error("scene relations are stale and do not match the inferred closure")]
    StaleRelations,
}

pub type Result<T, E = SceneError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BoundingBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl From<[u32; 4]> for BoundingBox {
    fn from([x_min, y_min, x_max, y_max]: [u32; 4]) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl BoundingBox {
    pub const fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_degenerate(&self) -> bool {
        self.x_min >= self.x_max || self.y_min >= self.y_max
    }

    pub fn width(&self) -> u32 {
        self.x_max.saturating_sub(self.x_min)
    }

    pub fn height(&self) -> u32 {
        self.y_max.saturating_sub(self.y_min)
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    fn extents(&self) -> Extents {
        Extents {
            x_min: i64::from(self.x_min),
            y_min: i64::from(self.y_min),
            x_max: i64::from(self.x_max),
            y_max: i64::from(self.y_max),
        }
    }
}

/// Center of a box in fractional pixels.
pub fn center(bbox: &BoundingBox) -> (f64, f64) {
    (
        (f64::from(bbox.x_min) + f64::from(bbox.x_max)) / 2.0,
        (f64::from(bbox.y_min) + f64::from(bbox.y_max)) / 2.0,
    )
}

/// Row-major run-length encoded foreground. Each run is `(start, length)`
/// where `start` is the linear pixel index `y * width + x`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentationMask {
    pub width: u32,
    pub height: u32,
    pub runs: Vec<(u32, u32)>,
}

impl SegmentationMask {
    /// Encodes the interior of `bbox` on a `width`×`height` image.
    pub fn from_box(width: u32, height: u32, bbox: &BoundingBox) -> Self {
        let mut runs = Vec::with_capacity(bbox.height() as usize);
        for y in bbox.y_min..bbox.y_max.min(height) {
            let x_end = bbox.x_max.min(width);
            if bbox.x_min < x_end {
                runs.push((y * width + bbox.x_min, x_end - bbox.x_min));
            }
        }
        Self { width, height, runs }
    }

    /// Encodes a row-major boolean raster.
    pub fn from_raster(width: u32, height: u32, pixels: &[bool]) -> Self {
        assert_eq!(pixels.len(), width as usize * height as usize, "raster size mismatch");
        let mut runs = Vec::new();
        let mut open: Option<u32> = None;
        for (i, &on) in pixels.iter().enumerate() {
            let i = i as u32;
            match (on, open) {
                (true, None) => open = Some(i),
                (false, Some(s)) => {
                    runs.push((s, i - s));
                    open = None;
                }
                _ => {}
            }
        }
        if let Some(s) = open {
            runs.push((s, pixels.len() as u32 - s));
        }
        Self { width, height, runs }
    }

    pub fn to_raster(&self) -> Vec<bool> {
        let mut out = vec![false; self.width as usize * self.height as usize];
        for &(start, len) in &self.runs {
            let end = (start as usize + len as usize).min(out.len());
            for px in &mut out[start as usize..end] {
                *px = true;
            }
        }
        out
    }

    pub fn pixel_count(&self) -> u64 {
        self.runs.iter().map(|&(_, len)| u64::from(len)).sum()
    }

    /// Checks run ordering, bounds and non-emptiness.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.width == 0 || self.height == 0 {
            return Err("zero image dimension".into());
        }
        let total = u64::from(self.width) * u64::from(self.height);
        let mut prev_end = 0u64;
        for (i, &(start, len)) in self.runs.iter().enumerate() {
            if len == 0 {
                return Err(format!("run {i} has zero length"));
            }
            let start = u64::from(start);
            if i > 0 && start < prev_end {
                return Err(format!("run {i} is unsorted or overlaps its predecessor"));
            }
            prev_end = start + u64::from(len);
            if prev_end > total {
                return Err(format!("run {i} exceeds the {}x{} image", self.width, self.height));
            }
        }
        if self.pixel_count() == 0 {
            return Err("mask has no foreground pixels".into());
        }
        Ok(())
    }

    fn extents(&self) -> Extents {
        let w = i64::from(self.width);
        let mut e = Extents { x_min: i64::MAX, y_min: i64::MAX, x_max: i64::MIN, y_max: i64::MIN };
        for &(start, len) in &self.runs {
            let first = i64::from(start);
            let last = first + i64::from(len) - 1;
            let (r0, r1) = (first / w, last / w);
            let (x0, x1) = if r0 == r1 { (first % w, last % w) } else { (0, w - 1) };
            e.x_min = e.x_min.min(x0);
            e.x_max = e.x_max.max(x1 + 1);
            e.y_min = e.y_min.min(r0);
            e.y_max = e.y_max.max(r1 + 1);
        }
        e
    }

    fn intersection_count(&self, other: &SegmentationMask) -> u64 {
        let (mut i, mut j) = (0, 0);
        let mut count = 0u64;
        while i < self.runs.len() && j < other.runs.len() {
            let (a0, al) = self.runs[i];
            let (b0, bl) = other.runs[j];
            let (a0, a1) = (u64::from(a0), u64::from(a0) + u64::from(al));
            let (b0, b1) = (u64::from(b0), u64::from(b0) + u64::from(bl));
            let lo = a0.max(b0);
            let hi = a1.min(b1);
            if hi > lo {
                count += hi - lo;
            }
            if a1 <= b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        count
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub object_id: String,
    pub label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<SegmentationMask>,
}

impl SceneObject {
    pub fn new(object_id: impl Into<String>, label: impl Into<String>, bbox: BoundingBox) -> Self {
        Self { object_id: object_id.into(), label: label.into(), confidence: 1.0, bbox, mask: None }
    }

    pub fn with_mask(mut self, mask: SegmentationMask) -> Self {
        self.mask = Some(mask);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |reason: &str| SceneError::InvalidObject {
            object_id: self.object_id.clone(),
            reason: reason.to_string(),
        };
        if self.object_id.is_empty() {
            return Err(invalid("empty object id"));
        }
        if self.label.trim().is_empty() {
            return Err(invalid("empty label"));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(invalid("confidence outside [0, 1]"));
        }
        if self.bbox.is_degenerate() {
            return Err(SceneError::DegenerateBox { object_id: self.object_id.clone(), bbox: self.bbox });
        }
        if let Some(mask) = &self.mask {
            mask.check().map_err(|reason| SceneError::InvalidMask {
                object_id: self.object_id.clone(),
                reason,
            })?;
            let m = mask.extents();
            let b = self.bbox.extents();
            let s = i64::from(MASK_BOX_SLACK);
            if m.x_min < b.x_min - s || m.y_min < b.y_min - s || m.x_max > b.x_max + s || m.y_max > b.y_max + s {
                return Err(SceneError::MaskOutOfBounds { object_id: self.object_id.clone() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationKind {
    LeftOf,
    RightOf,
    Above,
    Below,
    OnTopOf,
    Beneath,
    Inside,
    Contains,
    NextTo,
    Overlapping,
    Disjoint,
}

impl RelationKind {
    pub const ALL: [RelationKind; 11] = [
        RelationKind::LeftOf,
        RelationKind::RightOf,
        RelationKind::Above,
        RelationKind::Below,
        RelationKind::OnTopOf,
        RelationKind::Beneath,
        RelationKind::Inside,
        RelationKind::Contains,
        RelationKind::NextTo,
        RelationKind::Overlapping,
        RelationKind::Disjoint,
    ];

    /// The kind that must hold in the reverse direction, if any.
    pub fn converse(self) -> RelationKind {
        use RelationKind::*;
        match self {
            LeftOf => RightOf,
            RightOf => LeftOf,
            Above => Below,
            Below => Above,
            OnTopOf => Beneath,
            Beneath => OnTopOf,
            Inside => Contains,
            Contains => Inside,
            NextTo => NextTo,
            Overlapping => Overlapping,
            Disjoint => Disjoint,
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpatialRelation {
    pub subject_id: String,
    pub object_id: String,
    pub kind: RelationKind,
}

impl SpatialRelation {
    fn sort_key(&self) -> (&str, &str, RelationKind) {
        (&self.subject_id, &self.object_id, self.kind)
    }
}

impl PartialOrd for SpatialRelation {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for SpatialRelation {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sort_key().cmp(&other.sort_key())
    }
}

impl fmt::Display for SpatialRelation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject_id, self.kind, self.object_id)
    }
}

/// Thresholds for the relation rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationThresholds {
    /// Minimum perpendicular overlap ratio for LeftOf/RightOf and Above/Below.
    pub side_overlap_min: f64,
    /// Minimum containment fraction for Inside/Contains.
    pub inside_containment_min: f64,
    /// Minimum horizontal overlap ratio for OnTopOf/Beneath.
    pub on_top_overlap_min: f64,
    /// Maximum vertical gap in pixels for OnTopOf/Beneath.
    pub on_top_max_gap: i64,
    /// Maximum edge distance in pixels for NextTo.
    pub next_to_max_distance: f64,
    /// Overlapping holds for `0 < iou < overlapping_iou_max`.
    pub overlapping_iou_max: f64,
}

impl Default for RelationThresholds {
    fn default() -> Self {
        Self {
            side_overlap_min: 0.25,
            inside_containment_min: 0.95,
            on_top_overlap_min: 0.5,
            on_top_max_gap: 5,
            next_to_max_distance: 15.0,
            overlapping_iou_max: 0.95,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapMetrics {
    pub iou: f64,
    pub containment_a_in_b: f64,
    pub horizontal_overlap: f64,
    /// `y_min(b) - y_max(a)`: zero when `a`'s bottom row touches `b`'s top row.
    pub vertical_gap: i64,
}

/// Half-open pixel extents of a footprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Extents {
    x_min: i64,
    y_min: i64,
    x_max: i64,
    y_max: i64,
}

impl Extents {
    fn width(&self) -> i64 {
        self.x_max - self.x_min
    }
    fn height(&self) -> i64 {
        self.y_max - self.y_min
    }
    /// Twice the center, kept integral.
    fn cx2(&self) -> i64 {
        self.x_min + self.x_max
    }
    fn cy2(&self) -> i64 {
        self.y_min + self.y_max
    }
}

fn span_overlap(a0: i64, a1: i64, b0: i64, b1: i64) -> i64 {
    (a1.min(b1) - a0.max(b0)).max(0)
}

/// Everything the rules need about an unordered pair, in the pair's footprint mode.
struct PairGeometry {
    a: Extents,
    b: Extents,
    area_a: u64,
    area_b: u64,
    inter: u64,
}

impl PairGeometry {
    fn new(a: &SceneObject, b: &SceneObject) -> Result<Self> {
        match (&a.mask, &b.mask) {
            (Some(ma), Some(mb)) => {
                if ma.width != mb.width || ma.height != mb.height {
                    return Err(SceneError::MaskDimensionMismatch {
                        a: a.object_id.clone(),
                        b: b.object_id.clone(),
                    });
                }
                Ok(Self {
                    a: ma.extents(),
                    b: mb.extents(),
                    area_a: ma.pixel_count(),
                    area_b: mb.pixel_count(),
                    inter: ma.intersection_count(mb),
                })
            }
            _ => {
                let (ea, eb) = (a.bbox.extents(), b.bbox.extents());
                let ox = span_overlap(ea.x_min, ea.x_max, eb.x_min, eb.x_max);
                let oy = span_overlap(ea.y_min, ea.y_max, eb.y_min, eb.y_max);
                Ok(Self {
                    a: ea,
                    b: eb,
                    area_a: a.bbox.area(),
                    area_b: b.bbox.area(),
                    inter: (ox * oy) as u64,
                })
            }
        }
    }

    fn swapped(&self) -> Self {
        Self { a: self.b, b: self.a, area_a: self.area_b, area_b: self.area_a, inter: self.inter }
    }

    fn iou(&self) -> f64 {
        let union = self.area_a + self.area_b - self.inter;
        if union == 0 {
            0.0
        } else {
            self.inter as f64 / union as f64
        }
    }

    fn containment_a_in_b(&self) -> f64 {
        self.inter as f64 / self.area_a as f64
    }

    fn horizontal_overlap(&self) -> f64 {
        let o = span_overlap(self.a.x_min, self.a.x_max, self.b.x_min, self.b.x_max);
        o as f64 / self.a.width().min(self.b.width()) as f64
    }

    fn vertical_overlap(&self) -> f64 {
        let o = span_overlap(self.a.y_min, self.a.y_max, self.b.y_min, self.b.y_max);
        o as f64 / self.a.height().min(self.b.height()) as f64
    }

    fn vertical_gap(&self) -> i64 {
        self.b.y_min - self.a.y_max
    }

    fn edge_distance_sq(&self) -> i64 {
        let dx = (self.b.x_min - self.a.x_max).max(self.a.x_min - self.b.x_max).max(0);
        let dy = (self.b.y_min - self.a.y_max).max(self.a.y_min - self.b.y_max).max(0);
        dx * dx + dy * dy
    }

    fn left_of(&self, t: &RelationThresholds) -> bool {
        self.a.cx2() < self.b.cx2() && 2 * self.a.x_max <= self.b.cx2() && self.vertical_overlap() >= t.side_overlap_min
    }

    fn above(&self, t: &RelationThresholds) -> bool {
        self.a.cy2() < self.b.cy2() && 2 * self.a.y_max <= self.b.cy2() && self.horizontal_overlap() >= t.side_overlap_min
    }

    fn on_top_of(&self, t: &RelationThresholds) -> bool {
        let gap = self.vertical_gap();
        self.horizontal_overlap() >= t.on_top_overlap_min && (0..=t.on_top_max_gap).contains(&gap)
    }

    fn inside(&self, t: &RelationThresholds) -> bool {
        self.area_a < self.area_b && self.containment_a_in_b() >= t.inside_containment_min
    }

    /// Kinds that hold with `a` as subject.
    fn kinds(&self, t: &RelationThresholds) -> Vec<RelationKind> {
        let rev = self.swapped();
        let mut kinds = Vec::new();
        let mut push = |cond: bool, k| {
            if cond {
                kinds.push(k)
            }
        };
        push(self.left_of(t), RelationKind::LeftOf);
        push(rev.left_of(t), RelationKind::RightOf);
        push(self.above(t), RelationKind::Above);
        push(rev.above(t), RelationKind::Below);
        push(self.on_top_of(t), RelationKind::OnTopOf);
        push(rev.on_top_of(t), RelationKind::Beneath);
        push(self.inside(t), RelationKind::Inside);
        push(rev.inside(t), RelationKind::Contains);
        let disjoint = self.inter == 0;
        let max_d = t.next_to_max_distance;
        push(disjoint && (self.edge_distance_sq() as f64) <= max_d * max_d, RelationKind::NextTo);
        let iou = self.iou();
        push(iou > 0.0 && iou < t.overlapping_iou_max, RelationKind::Overlapping);
        push(disjoint, RelationKind::Disjoint);
        kinds
    }
}

/// Overlap measurements for a pair; mask-based when both objects carry masks.
pub fn overlap_metrics(a: &SceneObject, b: &SceneObject) -> Result<OverlapMetrics> {
    a.validate()?;
    b.validate()?;
    let g = PairGeometry::new(a, b)?;
    Ok(OverlapMetrics {
        iou: g.iou(),
        containment_a_in_b: g.containment_a_in_b(),
        horizontal_overlap: g.horizontal_overlap(),
        vertical_gap: g.vertical_gap(),
    })
}

pub fn infer_relations(objects: &[SceneObject]) -> Result<Vec<SpatialRelation>> {
    infer_relations_with(objects, &RelationThresholds::default())
}

/// Emits every relation whose rule fires for every ordered pair, sorted by
/// `(subject_id, object_id, kind)`.
pub fn infer_relations_with(objects: &[SceneObject], thresholds: &RelationThresholds) -> Result<Vec<SpatialRelation>> {
    let mut seen = HashSet::new();
    for o in objects {
        o.validate()?;
        if !seen.insert(o.object_id.as_str()) {
            return Err(SceneError::DuplicateObjectId(o.object_id.clone()));
        }
    }
    let mut out = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for b in &objects[i + 1..] {
            let g = PairGeometry::new(a, b)?;
            for kind in g.kinds(thresholds) {
                out.push(SpatialRelation { subject_id: a.object_id.clone(), object_id: b.object_id.clone(), kind });
                out.push(SpatialRelation {
                    subject_id: b.object_id.clone(),
                    object_id: a.object_id.clone(),
                    kind: kind.converse(),
                });
            }
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneGraph {
    pub scene_id: String,
    pub description: String,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<SpatialRelation>,
}

impl SceneGraph {
    /// Builds a graph whose relations are the inferred closure over `objects`.
    pub fn new(scene_id: impl Into<String>, description: impl Into<String>, mut objects: Vec<SceneObject>) -> Result<Self> {
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        let relations = infer_relations(&objects)?;
        Ok(Self { scene_id: scene_id.into(), description: description.into(), objects, relations })
    }

    pub fn object(&self, object_id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn validate(&self) -> Result<()> {
        let ids: HashSet<&str> = self.objects.iter().map(|o| o.object_id.as_str()).collect();
        for r in &self.relations {
            for id in [&r.subject_id, &r.object_id] {
                if !ids.contains(id.as_str()) {
                    return Err(SceneError::DanglingRelation(id.clone()));
                }
            }
        }
        if infer_relations(&self.objects)? != self.relations {
            return Err(SceneError::StaleRelations);
        }
        Ok(())
    }
}

/// On-disk scene fixture. Relations are never stored; they are recomputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFixture {
    pub scene_id: String,
    pub image_ref: String,
    pub description: String,
    pub objects: Vec<SceneObject>,
}
