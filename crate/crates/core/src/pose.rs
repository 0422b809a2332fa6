//! Pose sequences: storage, the binary `.pose` format, validation and
//! flattening into per-frame feature vectors.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic "P2TX" | version u16 | C u16 | fps_num u32 | fps_den u32 | T u32 | K u32
//! component_count u16 | { name_len u16 | name utf8 | start u32 | end u32 }*
//! T*K*C coordinates f32 (frame, keypoint, coordinate)
//! T*K confidences f32
//! ```

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"P2TX";
pub const FORMAT_VERSION: u16 = 1;

/// Canonical component order for upstream estimator dumps.
pub const CANONICAL_COMPONENTS: [&str; 3] = ["body", "left_hand", "right_hand"];

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated payload: expected {expected} bytes of {section}, found {found}")]
    Truncated {
        section: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite {what} at frame {frame}, keypoint {keypoint}")]
    Corrupt {
        what: &'static str,
        frame: usize,
        keypoint: usize,
    },
    #[error("invalid shape: {0}")]
    Shape(String),
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("duplicate component `{0}` in selection")]
    DuplicateComponent(String),
    #[error("fps must be positive, got {0}")]
    InvalidFps(Fps),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Frames per second as an exact positive rational.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fps {
    pub num: u32,
    pub den: u32,
}

impl Fps {
    pub fn new(num: u32, den: u32) -> Result<Self, PoseError> {
        let fps = Fps { num, den };
        if num == 0 || den == 0 {
            return Err(PoseError::InvalidFps(fps));
        }
        Ok(fps)
    }

    pub fn whole(num: u32) -> Result<Self, PoseError> {
        Self::new(num, 1)
    }

    pub fn is_positive(&self) -> bool {
        self.num > 0 && self.den > 0
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// A named group of keypoints occupying `start..end`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Component {
    pub name: String,
    pub start: u32,
    pub end: u32,
}

impl Component {
    pub fn new(name: impl Into<String>, start: u32, end: u32) -> Self {
        Self {
            name: name.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        (self.end - self.start) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// T frames of K keypoints with C coordinates each, plus per-keypoint confidence.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    fps: Fps,
    num_frames: usize,
    num_keypoints: usize,
    coord_dim: usize,
    coords: Vec<f32>,
    confidence: Vec<f32>,
    components: Vec<Component>,
}

impl PoseSequence {
    /// Builds a sequence, checking the structural invariants (shapes and
    /// component coverage). Value-level checks live in [`validate`].
    pub fn new(
        fps: Fps,
        coord_dim: usize,
        num_keypoints: usize,
        coords: Vec<f32>,
        confidence: Vec<f32>,
        components: Vec<Component>,
    ) -> Result<Self, PoseError> {
        if !fps.is_positive() {
            return Err(PoseError::InvalidFps(fps));
        }
        if coord_dim != 2 && coord_dim != 3 {
            return Err(PoseError::Shape(format!("C must be 2 or 3, got {coord_dim}")));
        }
        if num_keypoints == 0 {
            return Err(PoseError::Shape("K must be at least 1".into()));
        }
        let per_frame = num_keypoints * coord_dim;
        if coords.is_empty() || coords.len() % per_frame != 0 {
            return Err(PoseError::Shape(format!(
                "coordinate count {} is not a positive multiple of K*C = {per_frame}",
                coords.len()
            )));
        }
        let num_frames = coords.len() / per_frame;
        if confidence.len() != num_frames * num_keypoints {
            return Err(PoseError::Shape(format!(
                "confidence count {} does not match T*K = {}",
                confidence.len(),
                num_frames * num_keypoints
            )));
        }
        check_components(&components, num_keypoints)?;
        Ok(Self {
            fps,
            num_frames,
            num_keypoints,
            coord_dim,
            coords,
            confidence,
            components,
        })
    }

    /// A single-component sequence named `keypoints`, all confidences 1.
    pub fn from_coords(
        fps: Fps,
        coord_dim: usize,
        num_keypoints: usize,
        coords: Vec<f32>,
    ) -> Result<Self, PoseError> {
        let frames = coords.len() / (num_keypoints * coord_dim).max(1);
        Self::new(
            fps,
            coord_dim,
            num_keypoints,
            coords,
            vec![1.0; frames * num_keypoints],
            vec![Component::new("keypoints", 0, num_keypoints as u32)],
        )
    }

    pub fn fps(&self) -> Fps {
        self.fps
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_keypoints(&self) -> usize {
        self.num_keypoints
    }

    pub fn coord_dim(&self) -> usize {
        self.coord_dim
    }

    pub fn coords(&self) -> &[f32] {
        &self.coords
    }

    pub fn confidence(&self) -> &[f32] {
        &self.confidence
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn component(&self, name: &str) -> Option<&Component> {
        self.components.iter().find(|c| c.name == name)
    }

    /// Coordinates of keypoint `k` in frame `t`.
    pub fn point(&self, t: usize, k: usize) -> &[f32] {
        let base = (t * self.num_keypoints + k) * self.coord_dim;
        &self.coords[base..base + self.coord_dim]
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.num_keypoints * self.coord_dim;
        &self.coords[t * n..(t + 1) * n]
    }

    pub fn confidence_at(&self, t: usize, k: usize) -> f32 {
        self.confidence[t * self.num_keypoints + k]
    }

    /// Rebuilds the sequence with new per-frame data and fps, keeping K, C
    /// and the component table.
    pub fn with_data(
        &self,
        fps: Fps,
        coords: Vec<f32>,
        confidence: Vec<f32>,
    ) -> Result<Self, PoseError> {
        Self::new(
            fps,
            self.coord_dim,
            self.num_keypoints,
            coords,
            confidence,
            self.components.clone(),
        )
    }
}

fn check_components(components: &[Component], num_keypoints: usize) -> Result<(), PoseError> {
    if components.is_empty() {
        return Err(PoseError::Shape("at least one component is required".into()));
    }
    let mut names = HashSet::new();
    let mut ranges: Vec<(u32, u32)> = Vec::with_capacity(components.len());
    for c in components {
        if !names.insert(c.name.as_str()) {
            return Err(PoseError::Shape(format!("duplicate component name `{}`", c.name)));
        }
        if c.start > c.end {
            return Err(PoseError::Shape(format!(
                "component `{}` has start {} > end {}",
                c.name, c.start, c.end
            )));
        }
        ranges.push((c.start, c.end));
    }
    ranges.sort_unstable();
    let mut cursor = 0u32;
    for (start, end) in ranges {
        if start != cursor {
            return Err(PoseError::Shape(format!(
                "component ranges must be disjoint and cover [0, {num_keypoints}); gap or overlap at {cursor}"
            )));
        }
        cursor = end;
    }
    if cursor as usize != num_keypoints {
        return Err(PoseError::Shape(format!(
            "component ranges cover [0, {cursor}) but K = {num_keypoints}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// binary format

/// Serializes `p` in the bit-exact `.pose` layout.
pub fn save_pose(p: &PoseSequence) -> Vec<u8> {
    let names: usize = p.components.iter().map(|c| 10 + c.name.len()).sum();
    let mut out =
        Vec::with_capacity(26 + names + 4 * (p.coords.len() + p.confidence.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.coord_dim as u16).to_le_bytes());
    out.extend_from_slice(&p.fps.num.to_le_bytes());
    out.extend_from_slice(&p.fps.den.to_le_bytes());
    out.extend_from_slice(&(p.num_frames as u32).to_le_bytes());
    out.extend_from_slice(&(p.num_keypoints as u32).to_le_bytes());
    out.extend_from_slice(&(p.components.len() as u16).to_le_bytes());
    for c in &p.components {
        out.extend_from_slice(&(c.name.len() as u16).to_le_bytes());
        out.extend_from_slice(c.name.as_bytes());
        out.extend_from_slice(&c.start.to_le_bytes());
        out.extend_from_slice(&c.end.to_le_bytes());
    }
    for v in p.coords.iter().chain(&p.confidence) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_pose<W: Write>(p: &PoseSequence, mut w: W) -> Result<(), PoseError> {
    w.write_all(&save_pose(p))?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], PoseError> {
        let rest = self.buf.len() - self.pos;
        if rest < n {
            return Err(PoseError::Truncated {
                section,
                expected: n,
                found: rest,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, PoseError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().unwrap()))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, PoseError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, section: &'static str) -> Result<Vec<f32>, PoseError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| PoseError::Format(format!("{section} size overflows")))?;
        let raw = self.take(bytes, section)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

/// Parses a `.pose` byte stream. Does not enforce the `[0,1]` range.
pub fn load_pose(bytes: &[u8]) -> Result<PoseSequence, PoseError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(PoseError::Format("missing P2TX magic".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let version = cur.u16("header")?;
    if version != FORMAT_VERSION {
        return Err(PoseError::Format(format!("unsupported version {version}")));
    }
    let coord_dim = cur.u16("header")? as usize;
    if coord_dim != 2 && coord_dim != 3 {
        return Err(PoseError::Format(format!("C must be 2 or 3, got {coord_dim}")));
    }
    let fps = Fps {
        num: cur.u32("header")?,
        den: cur.u32("header")?,
    };
    if !fps.is_positive() {
        return Err(PoseError::Format(format!("non-positive fps {}/{}", fps.num, fps.den)));
    }
    let num_frames = cur.u32("header")? as usize;
    let num_keypoints = cur.u32("header")? as usize;
    if num_frames == 0 || num_keypoints == 0 {
        return Err(PoseError::Format(format!(
            "T and K must be positive, got T={num_frames} K={num_keypoints}"
        )));
    }
    let ncomp = cur.u16("header")? as usize;
    let mut components = Vec::with_capacity(ncomp);
    for _ in 0..ncomp {
        let len = cur.u16("component table")? as usize;
        let name = std::str::from_utf8(cur.take(len, "component table")?)
            .map_err(|e| PoseError::Format(format!("component name is not UTF-8: {e}")))?
            .to_string();
        let start = cur.u32("component table")?;
        let end = cur.u32("component table")?;
        components.push(Component { name, start, end });
    }
    check_components(&components, num_keypoints).map_err(|e| PoseError::Format(e.to_string()))?;

    let n_coords = num_frames
        .checked_mul(num_keypoints)
        .and_then(|n| n.checked_mul(coord_dim))
        .ok_or_else(|| PoseError::Format("T*K*C overflows".into()))?;
    let coords = cur.f32s(n_coords, "coordinates")?;
    let confidence = cur.f32s(num_frames * num_keypoints, "confidence")?;
    if cur.pos != bytes.len() {
        return Err(PoseError::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - cur.pos
        )));
    }
    for (i, v) in coords.iter().enumerate() {
        if !v.is_finite() {
            let point = i / coord_dim;
            return Err(PoseError::Corrupt {
                what: "coordinate",
                frame: point / num_keypoints,
                keypoint: point % num_keypoints,
            });
        }
    }
    for (i, v) in confidence.iter().enumerate() {
        if !v.is_finite() {
            return Err(PoseError::Corrupt {
                what: "confidence",
                frame: i / num_keypoints,
                keypoint: i % num_keypoints,
            });
        }
    }
    PoseSequence::new(fps, coord_dim, num_keypoints, coords, confidence, components)
}

pub fn read_pose<R: Read>(mut r: R) -> Result<PoseSequence, PoseError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    load_pose(&buf)
}

// ---------------------------------------------------------------------------
// JSON-lines interchange

#[derive(Deserialize)]
struct JsonFrame {
    keypoints: Vec<Vec<f32>>,
    confidence: Vec<f32>,
}

/// Reads one frame per line: `{"keypoints": [[x,y,z], ...], "confidence": [...]}`.
/// Blank lines are skipped. C is taken from the first keypoint. An empty
/// `components` list means one `keypoints` component covering everything.
pub fn read_jsonl<R: BufRead>(
    reader: R,
    fps: Fps,
    components: Vec<Component>,
) -> Result<PoseSequence, PoseError> {
    let mut coords = Vec::new();
    let mut confidence = Vec::new();
    let mut shape: Option<(usize, usize)> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: JsonFrame = serde_json::from_str(&line)
            .map_err(|e| PoseError::Format(format!("line {}: {e}", lineno + 1)))?;
        let k = frame.keypoints.len();
        let c = frame.keypoints.first().map_or(0, Vec::len);
        let (want_k, want_c) = *shape.get_or_insert((k, c));
        if k != want_k || frame.keypoints.iter().any(|p| p.len() != want_c) {
            return Err(PoseError::Format(format!(
                "line {}: expected {want_k} keypoints of {want_c} coordinates",
                lineno + 1
            )));
        }
        if frame.confidence.len() != k {
            return Err(PoseError::Format(format!(
                "line {}: {} confidences for {k} keypoints",
                lineno + 1,
                frame.confidence.len()
            )));
        }
        coords.extend(frame.keypoints.into_iter().flatten());
        confidence.extend(frame.confidence);
    }
    let (k, c) = shape.ok_or_else(|| PoseError::Format("no frames in JSON-lines input".into()))?;
    let components = if components.is_empty() {
        vec![Component::new("keypoints", 0, k as u32)]
    } else {
        components
    };
    PoseSequence::new(fps, c, k, coords, confidence, components)
}

/// Components in canonical order (body, left hand, right hand) from their sizes.
pub fn canonical_components(body: u32, left_hand: u32, right_hand: u32) -> Vec<Component> {
    let mut out = Vec::with_capacity(3);
    let mut start = 0;
    for (name, n) in CANONICAL_COMPONENTS.iter().zip([body, left_hand, right_hand]) {
        out.push(Component::new(*name, start, start + n));
        start += n;
    }
    out
}

// ---------------------------------------------------------------------------
// validation

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagnosticCode {
    NonFiniteCoordinate,
    NonFiniteConfidence,
    OutOfRange,
    InvalidConfidence,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub frame: usize,
    pub keypoint: usize,
    /// Coordinate axis for coordinate-level findings.
    pub coordinate: Option<usize>,
    pub value: f32,
}

/// Lists every value-level invariant violation. Empty iff the sequence is
/// clean: finite coordinates, confidences in `[0,1]`, and coordinates of
/// detected keypoints (confidence > 0) inside `[0,1]`.
pub fn validate(p: &PoseSequence) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    for t in 0..p.num_frames {
        for k in 0..p.num_keypoints {
            let conf = p.confidence_at(t, k);
            if !conf.is_finite() {
                out.push(Diagnostic {
                    code: DiagnosticCode::NonFiniteConfidence,
                    severity: Severity::Error,
                    frame: t,
                    keypoint: k,
                    coordinate: None,
                    value: conf,
                });
            } else if !(0.0..=1.0).contains(&conf) {
                out.push(Diagnostic {
                    code: DiagnosticCode::InvalidConfidence,
                    severity: Severity::Error,
                    frame: t,
                    keypoint: k,
                    coordinate: None,
                    value: conf,
                });
            }
            for (axis, &v) in p.point(t, k).iter().enumerate() {
                let diag = |code, severity| Diagnostic {
                    code,
                    severity,
                    frame: t,
                    keypoint: k,
                    coordinate: Some(axis),
                    value: v,
                };
                if !v.is_finite() {
                    out.push(diag(DiagnosticCode::NonFiniteCoordinate, Severity::Error));
                } else if conf > 0.0 && !(0.0..=1.0).contains(&v) {
                    out.push(diag(DiagnosticCode::OutOfRange, Severity::Warning));
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// flattening

/// Per-frame feature rows fed to the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    fps: Fps,
    dim: usize,
    features: Vec<f32>,
    frame_mask: Vec<bool>,
}

impl FeatureSequence {
    pub fn new(fps: Fps, dim: usize, features: Vec<f32>) -> Result<Self, PoseError> {
        if dim == 0 || features.is_empty() || features.len() % dim != 0 {
            return Err(PoseError::Shape(format!(
                "{} feature values do not form rows of width {dim}",
                features.len()
            )));
        }
        let rows = features.len() / dim;
        Ok(Self {
            fps,
            dim,
            features,
            frame_mask: vec![true; rows],
        })
    }

    pub fn with_mask(mut self, frame_mask: Vec<bool>) -> Result<Self, PoseError> {
        if frame_mask.len() != self.len() {
            return Err(PoseError::Shape(format!(
                "mask length {} != frame count {}",
                frame_mask.len(),
                self.len()
            )));
        }
        self.frame_mask = frame_mask;
        Ok(self)
    }

    pub fn fps(&self) -> Fps {
        self.fps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.features.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.features[t * self.dim..(t + 1) * self.dim]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn frame_mask(&self) -> &[bool] {
        &self.frame_mask
    }

    /// Keeps the first `max_frames` rows.
    pub fn truncated(&self, max_frames: usize) -> Self {
        let n = self.len().min(max_frames).max(1);
        Self {
            fps: self.fps,
            dim: self.dim,
            features: self.features[..n * self.dim].to_vec(),
            frame_mask: self.frame_mask[..n].to_vec(),
        }
    }
}

/// Concatenates the selected components of every frame into one row.
///
/// Blocks appear in selection order; within a block, keypoints keep their
/// index order and coordinates stay `x, y[, z]`. Keypoints with zero
/// confidence are replaced by `fill` in every coordinate.
pub fn flatten(
    p: &PoseSequence,
    selection: &[&str],
    fill: f32,
) -> Result<FeatureSequence, PoseError> {
    let mut seen = HashSet::new();
    let mut blocks = Vec::with_capacity(selection.len());
    for &name in selection {
        if !seen.insert(name) {
            return Err(PoseError::DuplicateComponent(name.to_string()));
        }
        let c = p
            .component(name)
            .ok_or_else(|| PoseError::UnknownComponent(name.to_string()))?;
        blocks.push(c.start as usize..c.end as usize);
    }
    let dim: usize = blocks.iter().map(|b| b.len()).sum::<usize>() * p.coord_dim;
    if dim == 0 {
        return Err(PoseError::Shape("selection contains no keypoints".into()));
    }
    let mut features = Vec::with_capacity(p.num_frames * dim);
    for t in 0..p.num_frames {
        for block in &blocks {
            for k in block.clone() {
                if p.confidence_at(t, k) == 0.0 {
                    features.extend(std::iter::repeat(fill).take(p.coord_dim));
                } else {
                    features.extend_from_slice(p.point(t, k));
                }
            }
        }
    }
    FeatureSequence::new(p.fps, dim, features)
}

/// Flattens every component in table order.
pub fn flatten_all(p: &PoseSequence, fill: f32) -> Result<FeatureSequence, PoseError> {
    let names: Vec<&str> = p.components.iter().map(|c| c.name.as_str()).collect();
    flatten(p, &names, fill)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point_pose(conf2: f32) -> PoseSequence {
        PoseSequence::new(
            Fps::whole(25).unwrap(),
            3,
            2,
            vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
            vec![1.0, conf2],
            vec![Component::new("a", 0, 1), Component::new("b", 1, 2)],
        )
        .unwrap()
    }

    #[test]
    fn single_point_file_size() {
        // 26 fixed header bytes + (2 + 12 + 4 + 4) for one 12-byte component name.
        let p = PoseSequence::new(
            Fps::whole(25).unwrap(),
            3,
            1,
            vec![0.1, 0.2, 0.3],
            vec![1.0],
            vec![Component::new("keypoints_3d", 0, 1)],
        )
        .unwrap();
        let bytes = save_pose(&p);
        assert_eq!(bytes.len(), 48 + 12 + 4);
    }

    #[test]
    fn wrong_magic_is_format_error() {
        let mut bytes = save_pose(&two_point_pose(1.0));
        bytes[0] = b'X';
        assert!(matches!(load_pose(&bytes), Err(PoseError::Format(_))));
    }

    #[test]
    fn missing_frame_is_truncation() {
        let coords: Vec<f32> = (0..30).map(|i| i as f32 / 30.0).collect();
        let p = PoseSequence::from_coords(Fps::whole(25).unwrap(), 3, 1, coords).unwrap();
        assert_eq!(p.num_frames(), 10);
        let bytes = save_pose(&p);
        // Drop the last frame's coordinates and all confidences but keep the T=10 header.
        let header_len = bytes.len() - 4 * (30 + 10);
        let mut short = bytes[..header_len].to_vec();
        short.extend_from_slice(&bytes[header_len..header_len + 4 * 27]);
        short.extend_from_slice(&bytes[header_len + 4 * 30..header_len + 4 * 39]);
        assert!(matches!(load_pose(&short), Err(PoseError::Truncated { .. })));
    }

    #[test]
    fn nan_is_reported_with_location() {
        let mut p = two_point_pose(1.0);
        p.coords[4] = f32::NAN;
        let bytes = save_pose(&p);
        match load_pose(&bytes) {
            Err(PoseError::Corrupt { frame, keypoint, .. }) => {
                assert_eq!((frame, keypoint), (0, 1));
            }
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn validate_examples() {
        let zeros = PoseSequence::from_coords(Fps::whole(25).unwrap(), 3, 4, vec![0.0; 36]).unwrap();
        assert!(validate(&zeros).is_empty());

        let mut p = two_point_pose(0.9);
        p.coords[1] = 1.5;
        let d = validate(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagnosticCode::OutOfRange);
        assert_eq!((d[0].frame, d[0].keypoint, d[0].coordinate), (0, 0, Some(1)));

        let mut p = two_point_pose(1.0);
        p.confidence[1] = -0.1;
        let d = validate(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].code, DiagnosticCode::InvalidConfidence);
    }

    #[test]
    fn out_of_range_ignored_for_missing_keypoints() {
        let mut p = two_point_pose(0.0);
        p.coords[3] = 7.0;
        assert!(validate(&p).is_empty());
    }

    #[test]
    fn flatten_examples() {
        let p = two_point_pose(1.0);
        let f = flatten(&p, &["a", "b"], 0.0).unwrap();
        assert_eq!(f.row(0), &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);

        let p = two_point_pose(0.0);
        let f = flatten(&p, &["a", "b"], 0.0).unwrap();
        assert_eq!(f.row(0), &[0.1, 0.2, 0.3, 0.0, 0.0, 0.0]);

        let f = flatten(&p, &["b"], 0.0).unwrap();
        assert_eq!(f.dim(), 3);
        assert_eq!(f.len(), 1);
    }

    #[test]
    fn flatten_rejects_unknown_and_duplicate() {
        let p = two_point_pose(1.0);
        assert!(matches!(flatten(&p, &["c"], 0.0), Err(PoseError::UnknownComponent(_))));
        assert!(matches!(
            flatten(&p, &["a", "a"], 0.0),
            Err(PoseError::DuplicateComponent(_))
        ));
    }

    #[test]
    fn components_must_cover_keypoints() {
        let r = PoseSequence::new(
            Fps::whole(25).unwrap(),
            2,
            3,
            vec![0.0; 6],
            vec![1.0; 3],
            vec![Component::new("a", 0, 1), Component::new("b", 2, 3)],
        );
        assert!(matches!(r, Err(PoseError::Shape(_))));
    }

    #[test]
    fn jsonl_reader() {
        let text = r#"{"keypoints": [[0.1,0.2,0.3],[0.4,0.5,0.6]], "confidence": [1.0, 0.5]}

{"keypoints": [[0.2,0.2,0.3],[0.4,0.5,0.7]], "confidence": [1.0, 0.0]}
"#;
        let p = read_jsonl(
            text.as_bytes(),
            Fps::whole(30).unwrap(),
            vec![Component::new("body", 0, 2)],
        )
        .unwrap();
        assert_eq!((p.num_frames(), p.num_keypoints(), p.coord_dim()), (2, 2, 3));
        assert_eq!(p.point(1, 1), &[0.4, 0.5, 0.7]);
        assert_eq!(p.confidence_at(1, 1), 0.0);

        let bad = r#"{"keypoints": [[0.1,0.2,0.3]], "confidence": [1.0, 0.5]}"#;
        assert!(read_jsonl(bad.as_bytes(), Fps::whole(30).unwrap(), vec![Component::new("body", 0, 1)]).is_err());
    }
}
