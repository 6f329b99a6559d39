//! Synchronized multi-view feature streams with per-frame importance labels.
//!
//! A [`Scene`] holds one [`VideoStream`] per view. All views share a frame
//! index, and the scene's global ground truth is the per-frame OR of the
//! per-view labels. Scenes are either synthesized with [`generate_scene`]
//! or read from disk with [`load_scene`].

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GLOBAL_TRUTH_FILE: &str = "global.lab";

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("event {index} spans [{start}, {end}) which is outside the timeline [0, {length})")]
    EventOutOfRange {
        index: usize,
        start: usize,
        end: usize,
        length: usize,
    },
    #[error("view {view}: feature file {path} holds {found} scalars per frame, manifest declares dim {expected}")]
    DimensionMismatch {
        view: usize,
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("view {view}: feature file {path} is truncated ({found_bytes} bytes, expected {expected_bytes})")]
    TruncatedFeatures {
        view: usize,
        path: PathBuf,
        expected_bytes: usize,
        found_bytes: usize,
    },
    #[error("label file {path} has {found} entries but the scene has {expected} frames")]
    LabelCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("label file {path} holds byte {byte:#04x} at frame {frame}; only 0x00/0x01 are valid")]
    InvalidLabel { path: PathBuf, frame: usize, byte: u8 },
    #[error("view {view}: frame {position} has dimension {found}, stream dimension is {expected}")]
    FrameDimension {
        view: usize,
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("view {view}: frame at position {position} has index {index}")]
    FrameIndex { view: usize, position: usize, index: usize },
    #[error("views are not synchronized: view {view} has {found} frames, view 0 has {expected}")]
    NotSynchronized { view: usize, expected: usize, found: usize },
    #[error("global truth disagrees with the union of view labels at frame {frame}")]
    GlobalTruthMismatch { frame: usize },
}

/// One timestep of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub feature: Vec<f32>,
    pub important: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoStream {
    view_id: usize,
    dim: usize,
    frames: Vec<FrameRecord>,
}

impl VideoStream {
    /// Builds a stream, checking that frame indices run 0, 1, 2, ... and that
    /// every feature has dimension `dim`.
    pub fn new(view_id: usize, dim: usize, frames: Vec<FrameRecord>) -> Result<Self, SceneError> {
        for (position, frame) in frames.iter().enumerate() {
            if frame.index != position {
                return Err(SceneError::FrameIndex {
                    view: view_id,
                    position,
                    index: frame.index,
                });
            }
            if frame.feature.len() != dim {
                return Err(SceneError::FrameDimension {
                    view: view_id,
                    position,
                    expected: dim,
                    found: frame.feature.len(),
                });
            }
        }
        Ok(Self { view_id, dim, frames })
    }

    pub fn view_id(&self) -> usize {
        self.view_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn labels(&self) -> Vec<bool> {
        self.frames.iter().map(|f| f.important).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    streams: Vec<VideoStream>,
    global_truth: Vec<bool>,
}

impl Scene {
    /// Assembles a scene and derives its global ground truth.
    pub fn new(streams: Vec<VideoStream>) -> Result<Self, SceneError> {
        if streams.is_empty() {
            return Err(SceneError::InvalidSpec("a scene needs at least one view".into()));
        }
        let length = streams[0].len();
        let dim = streams[0].dim();
        for (view, stream) in streams.iter().enumerate() {
            if stream.len() != length {
                return Err(SceneError::NotSynchronized {
                    view,
                    expected: length,
                    found: stream.len(),
                });
            }
            if stream.dim() != dim {
                return Err(SceneError::InvalidSpec(format!(
                    "view {view} has dimension {}, view 0 has {dim}",
                    stream.dim()
                )));
            }
            if stream.view_id() != view {
                return Err(SceneError::InvalidSpec(format!(
                    "stream at position {view} carries view id {}",
                    stream.view_id()
                )));
            }
        }
        let global_truth = (0..length)
            .map(|t| streams.iter().any(|s| s.frames[t].important))
            .collect();
        Ok(Self { streams, global_truth })
    }

    pub fn n_views(&self) -> usize {
        self.streams.len()
    }

    pub fn len(&self) -> usize {
        self.global_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_truth.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.streams[0].dim()
    }

    pub fn streams(&self) -> &[VideoStream] {
        &self.streams
    }

    pub fn stream(&self, view: usize) -> &VideoStream {
        &self.streams[view]
    }

    pub fn global_truth(&self) -> &[bool] {
        &self.global_truth
    }

    /// Size of the raw input in bytes: every feature scalar plus one label
    /// byte per frame and view.
    pub fn raw_bytes(&self) -> u64 {
        let frames = (self.len() * self.n_views()) as u64;
        frames * (4 * self.dim() as u64) + frames
    }
}

/// An activity interval `[start, end)` visible in `views`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub start: usize,
    pub end: usize,
    pub views: Vec<usize>,
}

fn default_gain() -> f64 {
    3.0
}

fn default_offset_scale() -> f64 {
    0.5
}

fn default_visibility() -> f64 {
    1.0
}

/// Parameters of a synthetic scene.
///
/// Frame `t` of view `v` has feature
/// `offset_v + sum(gain * dir_e for active events e naming v) + noise`.
/// Offsets are uniform in `[0, offset_scale)` per coordinate and event
/// directions are nonnegative unit vectors, so activity raises feature
/// magnitudes the way pooled ReLU activations do. With `visibility < 1` each
/// event frame shows its direction only with that probability (occlusion);
/// its label stays important either way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub n_views: usize,
    pub length: usize,
    pub dim: usize,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
    #[serde(default = "default_gain")]
    pub event_gain: f64,
    #[serde(default = "default_offset_scale")]
    pub offset_scale: f64,
    #[serde(default = "default_visibility")]
    pub visibility: f64,
}

impl SceneSpec {
    pub fn new(n_views: usize, length: usize, dim: usize, events: Vec<EventSpec>, noise_sigma: f64, seed: u64) -> Self {
        Self {
            n_views,
            length,
            dim,
            events,
            noise_sigma,
            seed,
            event_gain: default_gain(),
            offset_scale: default_offset_scale(),
            visibility: default_visibility(),
        }
    }

    fn validate(&self) -> Result<(), SceneError> {
        if self.n_views == 0 {
            return Err(SceneError::InvalidSpec("n_views must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(SceneError::InvalidSpec("dim must be at least 1".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(SceneError::InvalidSpec(format!(
                "noise_sigma {} is not a finite nonnegative value",
                self.noise_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.visibility) {
            return Err(SceneError::InvalidSpec(format!(
                "visibility {} is outside [0, 1]",
                self.visibility
            )));
        }
        for (index, event) in self.events.iter().enumerate() {
            if event.start >= event.end || event.end > self.length {
                return Err(SceneError::EventOutOfRange {
                    index,
                    start: event.start,
                    end: event.end,
                    length: self.length,
                });
            }
            if event.views.is_empty() {
                return Err(SceneError::InvalidSpec(format!("event {index} names no view")));
            }
            if let Some(&v) = event.views.iter().find(|&&v| v >= self.n_views) {
                return Err(SceneError::InvalidSpec(format!(
                    "event {index} names view {v} but the scene has {} views",
                    self.n_views
                )));
            }
        }
        Ok(())
    }
}

fn unit_nonnegative_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z.abs()
            })
            .collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return raw.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Synthesizes a scene. Deterministic in `spec` (including its seed).
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<Vec<f64>> = (0..spec.n_views)
        .map(|_| (0..spec.dim).map(|_| rng.random::<f64>() * spec.offset_scale).collect())
        .collect();
    let directions: Vec<Vec<f64>> = spec
        .events
        .iter()
        .map(|_| unit_nonnegative_direction(&mut rng, spec.dim))
        .collect();
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");

    let mut frames: Vec<Vec<FrameRecord>> = (0..spec.n_views).map(|_| Vec::with_capacity(spec.length)).collect();
    let mut active: Vec<usize> = Vec::new();
    for t in 0..spec.length {
        active.clear();
        active.extend(
            spec.events
                .iter()
                .enumerate()
                .filter(|(_, e)| e.start <= t && t < e.end)
                .map(|(k, _)| k),
        );
        for (v, view_frames) in frames.iter_mut().enumerate() {
            let mut feature = offsets[v].clone();
            let mut important = false;
            for &k in &active {
                let event = &spec.events[k];
                if !event.views.contains(&v) {
                    continue;
                }
                important = true;
                let visible = spec.visibility >= 1.0 || rng.random::<f64>() < spec.visibility;
                if visible {
                    for (x, d) in feature.iter_mut().zip(&directions[k]) {
                        *x += spec.event_gain * d;
                    }
                }
            }
            let feature = feature
                .into_iter()
                .map(|x| (x + noise.sample(&mut rng)) as f32)
                .collect();
            view_frames.push(FrameRecord {
                index: t,
                feature,
                important,
            });
        }
    }

    let streams = frames
        .into_iter()
        .enumerate()
        .map(|(v, f)| VideoStream::new(v, spec.dim, f))
        .collect::<Result<Vec<_>, _>>()?;
    Scene::new(streams)
}

/// Shape of a randomly drawn event list, see [`random_events`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventPlan {
    /// Expected gap between consecutive event starts, in frames.
    pub mean_gap: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Events are seen by 1..=max_views consecutive views (cameras on a ring).
    pub max_views: usize,
}

impl Default for EventPlan {
    fn default() -> Self {
        Self {
            mean_gap: 200,
            min_len: 60,
            max_len: 240,
            max_views: 3,
        }
    }
}

/// Draws an event list: starts arrive with uniform gaps in
/// `[mean_gap/2, 3*mean_gap/2]`, each event sees a run of consecutive views.
pub fn random_events(n_views: usize, length: usize, plan: &EventPlan, seed: u64) -> Vec<EventSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let gap_lo = (plan.mean_gap / 2).max(1);
    let gap_hi = (plan.mean_gap * 3 / 2).max(gap_lo);
    let max_views = plan.max_views.clamp(1, n_views.max(1));
    let mut start = rng.random_range(0..=gap_hi);
    while start < length {
        let len = rng.random_range(plan.min_len.max(1)..=plan.max_len.max(plan.min_len.max(1)));
        let end = (start + len).min(length);
        let width = rng.random_range(1..=max_views);
        let first = rng.random_range(0..n_views);
        let views = (0..width).map(|k| (first + k) % n_views).collect();
        events.push(EventSpec { start, end, views });
        start += rng.random_range(gap_lo..=gap_hi);
    }
    events
}

/// Clustered activity: bursts on a run of consecutive views, each holding
/// a train of short events. See [`random_bursts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BurstPlan {
    /// Expected gap between consecutive burst starts.
    pub mean_gap: usize,
    pub min_burst: usize,
    pub max_burst: usize,
    pub min_event: usize,
    pub max_event: usize,
    /// Range of the pause between consecutive events of a burst.
    pub min_pause: usize,
    pub max_pause: usize,
    pub max_views: usize,
}

impl Default for BurstPlan {
    fn default() -> Self {
        Self {
            mean_gap: 250,
            min_burst: 150,
            max_burst: 400,
            min_event: 10,
            max_event: 30,
            min_pause: 20,
            max_pause: 80,
            max_views: 2,
        }
    }
}

/// Draws bursts like [`random_events`] draws events, then fills each burst
/// with short events separated by random pauses.
pub fn random_bursts(n_views: usize, length: usize, plan: &BurstPlan, seed: u64) -> Vec<EventSpec> {
    let outer = EventPlan {
        mean_gap: plan.mean_gap,
        min_len: plan.min_burst,
        max_len: plan.max_burst,
        max_views: plan.max_views,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let event_lo = plan.min_event.max(1);
    let event_hi = plan.max_event.max(event_lo);
    let pause_hi = plan.max_pause.max(plan.min_pause);
    let mut events = Vec::new();
    for burst in random_events(n_views, length, &outer, seed) {
        let mut start = burst.start + rng.random_range(0..=pause_hi);
        while start < burst.end {
            let end = (start + rng.random_range(event_lo..=event_hi)).min(burst.end);
            events.push(EventSpec {
                start,
                end,
                views: burst.views.clone(),
            });
            start = end + rng.random_range(plan.min_pause..=pause_hi);
        }
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ViewEntry {
    view_id: usize,
    features: String,
    labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    n_views: usize,
    length: usize,
    dim: usize,
    views: Vec<ViewEntry>,
    global_truth: String,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), SceneError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(bytes).map_err(io_err(path))
}

fn label_bytes(labels: impl Iterator<Item = bool>) -> Vec<u8> {
    labels.map(u8::from).collect()
}

/// Writes `scene` under `dir` and returns the manifest path.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<PathBuf, SceneError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut views = Vec::with_capacity(scene.n_views());
    for stream in scene.streams() {
        let v = stream.view_id();
        let features = format!("v{v}.f32");
        let labels = format!("v{v}.lab");
        let mut buf = Vec::with_capacity(stream.len() * stream.dim() * 4);
        for frame in stream.frames() {
            for x in &frame.feature {
                buf.extend_from_slice(&x.to_le_bytes());
            }
        }
        write_file(&dir.join(&features), &buf)?;
        write_file(
            &dir.join(&labels),
            &label_bytes(stream.frames().iter().map(|f| f.important)),
        )?;
        views.push(ViewEntry {
            view_id: v,
            features,
            labels,
        });
    }
    write_file(
        &dir.join(GLOBAL_TRUTH_FILE),
        &label_bytes(scene.global_truth().iter().copied()),
    )?;
    let manifest = Manifest {
        n_views: scene.n_views(),
        length: scene.len(),
        dim: scene.dim(),
        views,
        global_truth: GLOBAL_TRUTH_FILE.to_string(),
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|source| SceneError::Manifest {
        path: path.clone(),
        source,
    })?;
    write_file(&path, &json)?;
    Ok(path)
}

fn read_labels(path: &Path, length: usize) -> Result<Vec<bool>, SceneError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != length {
        return Err(SceneError::LabelCountMismatch {
            path: path.to_path_buf(),
            expected: length,
            found: bytes.len(),
        });
    }
    bytes
        .iter()
        .enumerate()
        .map(|(frame, &byte)| match byte {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(SceneError::InvalidLabel {
                path: path.to_path_buf(),
                frame,
                byte,
            }),
        })
        .collect()
}

fn read_features(path: &Path, view: usize, length: usize, dim: usize) -> Result<Vec<Vec<f32>>, SceneError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let expected_bytes = length * dim * 4;
    if bytes.len() != expected_bytes {
        // A whole number of frames with another width is a declaration
        // mismatch, anything else is a damaged file.
        let scalars = bytes.len() / 4;
        if bytes.len() % 4 == 0 && length > 0 && scalars % length == 0 && scalars > 0 {
            return Err(SceneError::DimensionMismatch {
                view,
                path: path.to_path_buf(),
                expected: dim,
                found: scalars / length,
            });
        }
        return Err(SceneError::TruncatedFeatures {
            view,
            path: path.to_path_buf(),
            expected_bytes,
            found_bytes: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(dim * 4)
        .map(|frame| {
            frame
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect()
        })
        .collect())
}

/// Reads a scene written by [`save_scene`]. File names in the manifest are
/// resolved relative to the manifest's directory.
pub fn load_scene(manifest_path: &Path) -> Result<Scene, SceneError> {
    let text = fs::read(manifest_path).map_err(io_err(manifest_path))?;
    let manifest: Manifest = serde_json::from_slice(&text).map_err(|source| SceneError::Manifest {
        path: manifest_path.to_path_buf(),
        source,
    })?;
    if manifest.views.len() != manifest.n_views {
        return Err(SceneError::InvalidSpec(format!(
            "manifest lists {} views but declares n_views = {}",
            manifest.views.len(),
            manifest.n_views
        )));
    }
    if manifest.dim == 0 {
        return Err(SceneError::InvalidSpec("manifest declares dim 0".into()));
    }
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = manifest.views.clone();
    entries.sort_by_key(|e| e.view_id);
    let mut streams = Vec::with_capacity(entries.len());
    for (position, entry) in entries.iter().enumerate() {
        if entry.view_id != position {
            return Err(SceneError::InvalidSpec(format!(
                "manifest view ids are not 0..{}",
                manifest.n_views
            )));
        }
        let features = read_features(
            &base.join(&entry.features),
            entry.view_id,
            manifest.length,
            manifest.dim,
        )?;
        let labels = read_labels(&base.join(&entry.labels), manifest.length)?;
        let frames = features
            .into_iter()
            .zip(labels)
            .enumerate()
            .map(|(index, (feature, important))| FrameRecord {
                index,
                feature,
                important,
            })
            .collect();
        streams.push(VideoStream::new(entry.view_id, manifest.dim, frames)?);
    }
    let scene = Scene::new(streams)?;
    let truth_path = base.join(&manifest.global_truth);
    let truth = read_labels(&truth_path, manifest.length)?;
    if let Some(frame) = truth.iter().zip(scene.global_truth()).position(|(a, b)| a != b) {
        return Err(SceneError::GlobalTruthMismatch { frame });
    }
    Ok(scene)
}
