//! Clients for the scene describer, object detector and segmenter, plus the
//! composition of their outputs into a [`SceneGraph`].
//!
//! The fixture backend reads `<dir>/<scene_id>.json`; the HTTP backend posts
//! JSON to `<endpoint>/describe`, `/detect` and `/segment`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::http::{BackendConfig, HttpError, JsonClient};
use crate::scene::{SceneError, SceneFixture, SceneGraph, SceneObject, SegmentationMask};

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error("no scene fixture for `{0}`")]
    FixtureMissing(String),
    #[error("invalid scene fixture {path}: {reason}")]
    InvalidFixture { path: String, reason: String },
    #[error("object `{object_id}` in scene `{scene}` has no mask")]
    NoMaskAvailable { scene: String, object_id: String },
    #[error("object `{object_id}` not found in scene `{scene}`")]
    UnknownObject { scene: String, object_id: String },
    #[error("perception backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("perception backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("invalid perception request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

pub type Result<T, E = PerceptionError> = std::result::Result<T, E>;

impl From<HttpError> for PerceptionError {
    fn from(e: HttpError) -> Self {
        match e {
            HttpError::Timeout { attempts } => PerceptionError::Timeout { attempts },
            other => PerceptionError::BackendUnavailable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerceptionRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    /// Task-related category nouns. Empty means every object.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_hints: Vec<String>,
}

impl PerceptionRequest {
    pub fn scene(scene_id: impl Into<String>) -> Self {
        Self { scene_id: Some(scene_id.into()), ..Self::default() }
    }

    pub fn image(image_ref: impl Into<String>) -> Self {
        Self { image_ref: Some(image_ref.into()), ..Self::default() }
    }

    pub fn with_hints<I: IntoIterator<Item = S>, S: Into<String>>(mut self, hints: I) -> Self {
        self.label_hints = hints.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.scene_id, &self.image_ref) {
            (Some(s), None) | (None, Some(s)) if !s.is_empty() => Ok(()),
            _ => Err(PerceptionError::InvalidRequest("exactly one of scene_id or image_ref must be set".into())),
        }
    }

    /// The scene_id or image_ref, whichever is set.
    pub fn key(&self) -> &str {
        self.scene_id.as_deref().or(self.image_ref.as_deref()).unwrap_or_default()
    }
}

fn matches_hints(label: &str, hints: &[String]) -> bool {
    hints.is_empty() || hints.iter().any(|h| h.trim().eq_ignore_ascii_case(label.trim()))
}

pub trait PerceptionBackend: Send + Sync {
    fn backend_id(&self) -> String;
    fn describe_scene(&self, req: &PerceptionRequest) -> Result<String>;
    /// Boxes only; masks come from [`PerceptionBackend::segment`].
    fn detect(&self, req: &PerceptionRequest) -> Result<Vec<SceneObject>>;
    /// `scene` is a scene_id or image_ref.
    fn segment(&self, scene: &str, object_id: &str) -> Result<SegmentationMask>;
}

enum FixtureSource {
    Dir(PathBuf),
    Memory(BTreeMap<String, SceneFixture>),
}

/// Deterministic backend that echoes stored scene fixtures.
pub struct FixturePerception {
    source: FixtureSource,
}

impl FixturePerception {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { source: FixtureSource::Dir(dir.into()) }
    }

    pub fn from_fixtures(fixtures: impl IntoIterator<Item = SceneFixture>) -> Self {
        Self { source: FixtureSource::Memory(fixtures.into_iter().map(|f| (f.scene_id.clone(), f)).collect()) }
    }

    fn read(path: &Path) -> Result<SceneFixture> {
        let invalid = |reason: String| PerceptionError::InvalidFixture { path: path.display().to_string(), reason };
        let text = fs::read_to_string(path).map_err(|e| invalid(e.to_string()))?;
        let fixture: SceneFixture = serde_json::from_str(&text).map_err(|e| invalid(e.to_string()))?;
        check_fixture(&fixture).map_err(|e| invalid(e.to_string()))?;
        Ok(fixture)
    }

    /// Looks `key` up as a scene_id first, then as an image_ref.
    pub fn fixture(&self, key: &str) -> Result<SceneFixture> {
        match &self.source {
            FixtureSource::Memory(map) => map
                .get(key)
                .or_else(|| map.values().find(|f| f.image_ref == key))
                .cloned()
                .ok_or_else(|| PerceptionError::FixtureMissing(key.to_string())),
            FixtureSource::Dir(dir) => {
                let direct = dir.join(format!("{key}.json"));
                if !key.contains(['/', '\\']) && direct.is_file() {
                    return Self::read(&direct);
                }
                let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                    .map_err(|_| PerceptionError::FixtureMissing(key.to_string()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "json"))
                    .collect();
                paths.sort();
                for p in paths {
                    let f = Self::read(&p)?;
                    if f.image_ref == key {
                        return Ok(f);
                    }
                }
                Err(PerceptionError::FixtureMissing(key.to_string()))
            }
        }
    }
}

fn check_fixture(f: &SceneFixture) -> Result<(), SceneError> {
    let mut seen = HashSet::new();
    for o in &f.objects {
        o.validate()?;
        if !seen.insert(o.object_id.as_str()) {
            return Err(SceneError::DuplicateObjectId(o.object_id.clone()));
        }
    }
    Ok(())
}

impl PerceptionBackend for FixturePerception {
    fn backend_id(&self) -> String {
        "fixture".into()
    }

    fn describe_scene(&self, req: &PerceptionRequest) -> Result<String> {
        req.validate()?;
        Ok(self.fixture(req.key())?.description)
    }

    fn detect(&self, req: &PerceptionRequest) -> Result<Vec<SceneObject>> {
        req.validate()?;
        let mut objects: Vec<SceneObject> = self
            .fixture(req.key())?
            .objects
            .into_iter()
            .filter(|o| matches_hints(&o.label, &req.label_hints))
            .map(|o| SceneObject { mask: None, ..o })
            .collect();
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        Ok(objects)
    }

    fn segment(&self, scene: &str, object_id: &str) -> Result<SegmentationMask> {
        let fixture = self.fixture(scene)?;
        let object = fixture.objects.into_iter().find(|o| o.object_id == object_id).ok_or_else(|| {
            PerceptionError::UnknownObject { scene: scene.to_string(), object_id: object_id.to_string() }
        })?;
        object
            .mask
            .ok_or_else(|| PerceptionError::NoMaskAvailable { scene: scene.to_string(), object_id: object_id.to_string() })
    }
}

/// JSON-over-HTTP client for remote perception models.
pub struct HttpPerception {
    client: JsonClient,
}

impl HttpPerception {
    pub fn new(config: BackendConfig) -> Result<Self> {
        Ok(Self { client: JsonClient::new(config)? })
    }

    fn field<'v>(reply: &'v Value, name: &str) -> Result<&'v Value> {
        reply.get(name).ok_or_else(|| PerceptionError::BackendUnavailable(format!("response lacks `{name}`")))
    }
}

impl PerceptionBackend for HttpPerception {
    fn backend_id(&self) -> String {
        format!("http:{}", self.client.config().endpoint_url.as_deref().unwrap_or_default())
    }

    fn describe_scene(&self, req: &PerceptionRequest) -> Result<String> {
        req.validate()?;
        let reply = self.client.post("describe", &serde_json::to_value(req).expect("request serializes"))?;
        match Self::field(&reply, "description")?.as_str() {
            Some(text) if !text.trim().is_empty() => Ok(text.to_string()),
            _ => Err(PerceptionError::BackendUnavailable("empty description".into())),
        }
    }

    fn detect(&self, req: &PerceptionRequest) -> Result<Vec<SceneObject>> {
        req.validate()?;
        let reply = self.client.post("detect", &serde_json::to_value(req).expect("request serializes"))?;
        let mut objects: Vec<SceneObject> = serde_json::from_value(Self::field(&reply, "objects")?.clone())
            .map_err(|e| PerceptionError::BackendUnavailable(format!("bad objects: {e}")))?;
        for o in &mut objects {
            o.mask = None;
            o.validate()?;
        }
        objects.retain(|o| matches_hints(&o.label, &req.label_hints));
        objects.sort_by(|a, b| a.object_id.cmp(&b.object_id));
        Ok(objects)
    }

    fn segment(&self, scene: &str, object_id: &str) -> Result<SegmentationMask> {
        let reply = self.client.post("segment", &json!({ "image_ref": scene, "object_id": object_id }))?;
        match Self::field(&reply, "mask")? {
            Value::Null => Err(PerceptionError::NoMaskAvailable { scene: scene.to_string(), object_id: object_id.to_string() }),
            mask => serde_json::from_value(mask.clone())
                .map_err(|e| PerceptionError::BackendUnavailable(format!("bad mask: {e}"))),
        }
    }
}

/// Describes, detects and segments, then infers relations. Objects without a
/// mask keep their box as footprint.
pub fn build_scene_graph(backend: &dyn PerceptionBackend, req: &PerceptionRequest) -> Result<SceneGraph> {
    req.validate()?;
    let description = backend.describe_scene(req)?;
    let mut objects = backend.detect(req)?;
    for o in &mut objects {
        match backend.segment(req.key(), &o.object_id) {
            Ok(mask) => o.mask = Some(mask),
            Err(PerceptionError::NoMaskAvailable { .. }) => {}
            Err(e) => return Err(e),
        }
        o.validate()?;
    }
    let graph = SceneGraph::new(req.key(), description, objects)?;
    graph.validate()?;
    Ok(graph)
}
