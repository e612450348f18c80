//! Heterogeneous skeleton formats and the unified joint/member space.
//!
//! Every format names its joints from a shared canonical vocabulary, so the
//! unified space is the set union of all registered joint sets (slots in
//! sorted-name order) and the maximum member count. Sequences are expanded
//! into that space with a presence mask, and the joint, bone and motion
//! modalities are derived from the expanded coordinates.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Canonical joint identifiers shared by all built-in formats.
pub const CANONICAL_JOINTS: [&str; 33] = [
    "pelvis",
    "spine_lower",
    "spine_mid",
    "chest",
    "neck",
    "head",
    "nose",
    "l_eye",
    "r_eye",
    "l_ear",
    "r_ear",
    "l_collar",
    "r_collar",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "l_hand",
    "l_hand_tip",
    "l_thumb",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "r_hand",
    "r_hand_tip",
    "r_thumb",
    "l_hip",
    "l_knee",
    "l_ankle",
    "l_foot",
    "r_hip",
    "r_knee",
    "r_ankle",
    "r_foot",
];

/// Coarse body region of a canonical joint: 0 head, 1 arms, 2 spine/torso,
/// 3 legs. Unknown identifiers fall into the torso group.
pub fn body_part(joint: &str) -> usize {
    match joint {
        "head" | "neck" | "nose" | "l_eye" | "r_eye" | "l_ear" | "r_ear" => 0,
        "pelvis" | "spine_lower" | "spine_mid" | "chest" => 2,
        j if j.ends_with("hip") || j.ends_with("knee") || j.ends_with("ankle") || j.ends_with("foot") => 3,
        j if j.ends_with("collar")
            || j.ends_with("shoulder")
            || j.ends_with("elbow")
            || j.ends_with("wrist")
            || j.ends_with("hand")
            || j.ends_with("hand_tip")
            || j.ends_with("thumb") =>
        {
            1
        }
        _ => 2,
    }
}

pub const BODY_PART_NAMES: [&str; 4] = ["head", "arms", "spine", "legs"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkeletonFormat {
    pub format_id: String,
    pub joints: Vec<String>,
    /// Bone parent of each joint; the root points at itself.
    pub parent_of: Vec<usize>,
    pub coord_dims: usize,
    pub max_members: usize,
}

impl SkeletonFormat {
    /// Builds a format from `(joint, parent)` pairs; the root names itself.
    pub fn from_pairs(format_id: &str, pairs: &[(&str, &str)], coord_dims: usize, max_members: usize) -> Result<Self> {
        let joints: Vec<String> = pairs.iter().map(|(j, _)| j.to_string()).collect();
        let parent_of = pairs
            .iter()
            .map(|(_, p)| {
                joints.iter().position(|j| j == p).ok_or_else(|| Error::InvalidFormat {
                    id: format_id.to_string(),
                    reason: format!("parent `{p}` is not a joint"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let f = Self {
            format_id: format_id.to_string(),
            joints,
            parent_of,
            coord_dims,
            max_members,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::InvalidFormat {
            id: self.format_id.clone(),
            reason,
        };
        let k = self.joints.len();
        if k == 0 {
            return Err(bad("no joints".into()));
        }
        if self.parent_of.len() != k {
            return Err(bad(format!("{} parents for {k} joints", self.parent_of.len())));
        }
        if !matches!(self.coord_dims, 2 | 3) {
            return Err(bad(format!("coord_dims must be 2 or 3, got {}", self.coord_dims)));
        }
        if self.max_members == 0 {
            return Err(bad("max_members must be at least 1".into()));
        }
        let unique: BTreeSet<&String> = self.joints.iter().collect();
        if unique.len() != k {
            return Err(bad("duplicate joint identifiers".into()));
        }
        if let Some(&p) = self.parent_of.iter().find(|&&p| p >= k) {
            return Err(bad(format!("parent index {p} out of range")));
        }
        let roots: Vec<usize> = (0..k).filter(|&j| self.parent_of[j] == j).collect();
        if roots.len() != 1 {
            return Err(bad(format!("expected exactly one root, found {}", roots.len())));
        }
        for start in 0..k {
            let mut j = start;
            let mut steps = 0;
            while self.parent_of[j] != j {
                j = self.parent_of[j];
                steps += 1;
                if steps >= k {
                    return Err(bad(format!("joint `{}` does not reach the root", self.joints[start])));
                }
            }
        }
        Ok(())
    }

    pub fn root(&self) -> usize {
        (0..self.joints.len()).find(|&j| self.parent_of[j] == j).unwrap_or(0)
    }

    pub fn index_of(&self, joint: &str) -> Option<usize> {
        self.joints.iter().position(|j| j == joint)
    }

    /// Built-in format presets: `kinect-v1` (20 joints, 3D), `kinect-v2`
    /// (25, 3D), `pose-2d` (17, 2D) and `smpl-22` (22, 3D).
    pub fn preset(format_id: &str) -> Option<Self> {
        let f = match format_id {
            "kinect-v1" => Self::from_pairs(format_id, KINECT_V1, 3, 1),
            "kinect-v2" => Self::from_pairs(format_id, KINECT_V2, 3, 2),
            "pose-2d" => Self::from_pairs(format_id, POSE_2D, 2, 2),
            "smpl-22" => Self::from_pairs(format_id, SMPL_22, 3, 1),
            _ => return None,
        };
        Some(f.expect("built-in presets are valid"))
    }

    pub fn preset_ids() -> [&'static str; 4] {
        ["kinect-v1", "kinect-v2", "pose-2d", "smpl-22"]
    }
}

const KINECT_V1: &[(&str, &str)] = &[
    ("pelvis", "pelvis"),
    ("spine_mid", "pelvis"),
    ("chest", "spine_mid"),
    ("head", "chest"),
    ("l_shoulder", "chest"),
    ("l_elbow", "l_shoulder"),
    ("l_wrist", "l_elbow"),
    ("l_hand", "l_wrist"),
    ("r_shoulder", "chest"),
    ("r_elbow", "r_shoulder"),
    ("r_wrist", "r_elbow"),
    ("r_hand", "r_wrist"),
    ("l_hip", "pelvis"),
    ("l_knee", "l_hip"),
    ("l_ankle", "l_knee"),
    ("l_foot", "l_ankle"),
    ("r_hip", "pelvis"),
    ("r_knee", "r_hip"),
    ("r_ankle", "r_knee"),
    ("r_foot", "r_ankle"),
];

const KINECT_V2: &[(&str, &str)] = &[
    ("pelvis", "pelvis"),
    ("spine_mid", "pelvis"),
    ("neck", "chest"),
    ("head", "neck"),
    ("l_shoulder", "chest"),
    ("l_elbow", "l_shoulder"),
    ("l_wrist", "l_elbow"),
    ("l_hand", "l_wrist"),
    ("r_shoulder", "chest"),
    ("r_elbow", "r_shoulder"),
    ("r_wrist", "r_elbow"),
    ("r_hand", "r_wrist"),
    ("l_hip", "pelvis"),
    ("l_knee", "l_hip"),
    ("l_ankle", "l_knee"),
    ("l_foot", "l_ankle"),
    ("r_hip", "pelvis"),
    ("r_knee", "r_hip"),
    ("r_ankle", "r_knee"),
    ("r_foot", "r_ankle"),
    ("chest", "spine_mid"),
    ("l_hand_tip", "l_hand"),
    ("l_thumb", "l_hand"),
    ("r_hand_tip", "r_hand"),
    ("r_thumb", "r_hand"),
];

const POSE_2D: &[(&str, &str)] = &[
    ("nose", "nose"),
    ("l_eye", "nose"),
    ("r_eye", "nose"),
    ("l_ear", "l_eye"),
    ("r_ear", "r_eye"),
    ("l_shoulder", "nose"),
    ("r_shoulder", "nose"),
    ("l_elbow", "l_shoulder"),
    ("r_elbow", "r_shoulder"),
    ("l_wrist", "l_elbow"),
    ("r_wrist", "r_elbow"),
    ("l_hip", "l_shoulder"),
    ("r_hip", "r_shoulder"),
    ("l_knee", "l_hip"),
    ("r_knee", "r_hip"),
    ("l_ankle", "l_knee"),
    ("r_ankle", "r_knee"),
];

const SMPL_22: &[(&str, &str)] = &[
    ("pelvis", "pelvis"),
    ("l_hip", "pelvis"),
    ("r_hip", "pelvis"),
    ("spine_lower", "pelvis"),
    ("l_knee", "l_hip"),
    ("r_knee", "r_hip"),
    ("spine_mid", "spine_lower"),
    ("l_ankle", "l_knee"),
    ("r_ankle", "r_knee"),
    ("chest", "spine_mid"),
    ("l_foot", "l_ankle"),
    ("r_foot", "r_ankle"),
    ("neck", "chest"),
    ("l_collar", "chest"),
    ("r_collar", "chest"),
    ("head", "neck"),
    ("l_shoulder", "l_collar"),
    ("r_shoulder", "r_collar"),
    ("l_elbow", "l_shoulder"),
    ("r_elbow", "r_shoulder"),
    ("l_wrist", "l_elbow"),
    ("r_wrist", "r_elbow"),
];

/// The shared joint/member space of a set of registered formats.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedSpace {
    pub k_unified: usize,
    pub m_unified: usize,
    joint_names: Vec<String>,
    formats: BTreeMap<String, SkeletonFormat>,
    slot_of: BTreeMap<String, Vec<usize>>,
}

pub fn build_unified_space(formats: &[SkeletonFormat]) -> Result<UnifiedSpace> {
    if formats.is_empty() {
        return Err(invalid("at least one skeleton format is required"));
    }
    let mut by_id = BTreeMap::new();
    for f in formats {
        f.validate()?;
        if by_id.insert(f.format_id.clone(), f.clone()).is_some() {
            return Err(Error::DuplicateFormat(f.format_id.clone()));
        }
    }
    let names: BTreeSet<&String> = formats.iter().flat_map(|f| f.joints.iter()).collect();
    let joint_names: Vec<String> = names.into_iter().cloned().collect();
    let slot_of = by_id
        .values()
        .map(|f| {
            let slots = f
                .joints
                .iter()
                .map(|j| joint_names.binary_search(j).expect("joint is in the union"))
                .collect();
            (f.format_id.clone(), slots)
        })
        .collect();
    Ok(UnifiedSpace {
        k_unified: joint_names.len(),
        m_unified: formats.iter().map(|f| f.max_members).max().unwrap_or(1),
        joint_names,
        formats: by_id,
        slot_of,
    })
}

impl UnifiedSpace {
    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    /// Number of (joint, member) slots, the spatial token count.
    pub fn num_slots(&self) -> usize {
        self.k_unified * self.m_unified
    }

    pub fn format(&self, format_id: &str) -> Result<&SkeletonFormat> {
        self.formats
            .get(format_id)
            .ok_or_else(|| Error::UnknownFormat(format_id.to_string()))
    }

    pub fn formats(&self) -> impl Iterator<Item = &SkeletonFormat> {
        self.formats.values()
    }

    /// Unified slot of each joint of `format_id`, in the format's joint order.
    pub fn slots(&self, format_id: &str) -> Result<&[usize]> {
        self.slot_of
            .get(format_id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownFormat(format_id.to_string()))
    }

    pub fn slot_of_joint(&self, joint: &str) -> Option<usize> {
        self.joint_names.binary_search_by(|j| j.as_str().cmp(joint)).ok()
    }

    /// Per-format `joint -> slot` maps, as written to registry files.
    pub fn slot_maps(&self) -> BTreeMap<String, BTreeMap<String, usize>> {
        self.formats
            .values()
            .map(|f| {
                let m = f
                    .joints
                    .iter()
                    .zip(&self.slot_of[&f.format_id])
                    .map(|(j, &s)| (j.clone(), s))
                    .collect();
                (f.format_id.clone(), m)
            })
            .collect()
    }

    /// Body-part index of every (joint, member) slot, slot-major.
    pub fn part_map(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.num_slots());
        for name in &self.joint_names {
            out.extend(std::iter::repeat(body_part(name)).take(self.m_unified));
        }
        out
    }
}

/// A motion sample in its native format, as stored in corpus files:
/// `frames[t][member][joint]` holds `coord_dims` coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawSequence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub format_id: String,
    pub members: usize,
    pub label_ids: Vec<u32>,
    pub frames: Vec<Vec<Vec<Vec<f64>>>>,
}

impl RawSequence {
    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn check(&self, format: &SkeletonFormat) -> Result<()> {
        let t = self.frames.len();
        if t == 0 {
            return Err(Error::Shape("sequence has no frames".into()));
        }
        if self.label_ids.is_empty() {
            return Err(invalid("sequence has no labels"));
        }
        if self.members == 0 || self.members > format.max_members {
            return Err(Error::Shape(format!(
                "{} members, format `{}` allows 1..={}",
                self.members, format.format_id, format.max_members
            )));
        }
        for (ti, frame) in self.frames.iter().enumerate() {
            if frame.len() != self.members {
                return Err(Error::Shape(format!("frame {ti} has {} members, expected {}", frame.len(), self.members)));
            }
            for member in frame {
                if member.len() != format.num_joints() {
                    return Err(Error::Shape(format!(
                        "frame {ti} has {} joints, format `{}` has {}",
                        member.len(),
                        format.format_id,
                        format.num_joints()
                    )));
                }
                for c in member {
                    if c.len() != format.coord_dims {
                        return Err(Error::Shape(format!("coordinate of length {} in a {}D format", c.len(), format.coord_dims)));
                    }
                    if c.iter().any(|v| !v.is_finite()) {
                        return Err(invalid(format!("non-finite coordinate in frame {ti}")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Joints absent from a format are filled with the mean of these present
/// joints when interpolation padding is selected.
pub type Adjacency = BTreeMap<String, Vec<String>>;

pub fn default_adjacency() -> Adjacency {
    let pairs: &[(&str, &[&str])] = &[
        ("pelvis", &["l_hip", "r_hip"]),
        ("neck", &["l_shoulder", "r_shoulder"]),
        ("chest", &["l_shoulder", "r_shoulder"]),
        ("spine_mid", &["l_shoulder", "r_shoulder", "l_hip", "r_hip"]),
        ("spine_lower", &["l_hip", "r_hip"]),
        ("head", &["l_ear", "r_ear"]),
        ("nose", &["head"]),
        ("l_eye", &["head"]),
        ("r_eye", &["head"]),
        ("l_ear", &["head"]),
        ("r_ear", &["head"]),
        ("l_collar", &["neck", "l_shoulder"]),
        ("r_collar", &["neck", "r_shoulder"]),
        ("l_hand", &["l_wrist"]),
        ("r_hand", &["r_wrist"]),
        ("l_hand_tip", &["l_hand"]),
        ("r_hand_tip", &["r_hand"]),
        ("l_thumb", &["l_hand"]),
        ("r_thumb", &["r_hand"]),
        ("l_foot", &["l_ankle"]),
        ("r_foot", &["r_ankle"]),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum PaddingStrategy {
    Zero,
    Interpolation(Adjacency),
    /// Missing slots stay zero in the data; the encoder substitutes a
    /// learned per-slot vector wherever `UnifiedSequence::placeholder` is set.
    LearnablePlaceholder,
}

/// A sequence expanded to `[T x K_unified x M_unified x 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedSequence {
    pub format_id: String,
    pub frames: usize,
    pub joints: usize,
    pub members: usize,
    pub data: Vec<f64>,
    /// `[K_unified x M_unified]`, true where a real joint was observed.
    pub joint_mask: Vec<bool>,
    pub placeholder: bool,
    pub label_ids: BTreeSet<u32>,
}

impl UnifiedSequence {
    #[inline]
    pub fn offset(&self, t: usize, k: usize, m: usize) -> usize {
        ((t * self.joints + k) * self.members + m) * 3
    }

    pub fn point(&self, t: usize, k: usize, m: usize) -> [f64; 3] {
        let o = self.offset(t, k, m);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn slots(&self) -> usize {
        self.joints * self.members
    }

    /// Linear-in-time resampling to `frames` frames (endpoints preserved).
    pub fn resampled(&self, frames: usize) -> UnifiedSequence {
        let mut out = self.clone();
        out.frames = frames;
        out.data = resample_frames(&self.data, self.frames, frames);
        out
    }
}

/// Resamples a `[t_in x row]` buffer to `[t_out x row]` by linear
/// interpolation over time.
pub fn resample_frames(data: &[f64], t_in: usize, t_out: usize) -> Vec<f64> {
    let row = data.len() / t_in.max(1);
    if t_in == t_out {
        return data.to_vec();
    }
    let mut out = vec![0.0; row * t_out];
    for t in 0..t_out {
        let pos = if t_out == 1 || t_in == 1 {
            0.0
        } else {
            t as f64 * (t_in - 1) as f64 / (t_out - 1) as f64
        };
        let lo = (pos.floor() as usize).min(t_in - 1);
        let hi = (lo + 1).min(t_in - 1);
        let w = pos - lo as f64;
        for j in 0..row {
            out[t * row + j] = (1.0 - w) * data[lo * row + j] + w * data[hi * row + j];
        }
    }
    out
}

pub fn unify(seq: &RawSequence, space: &UnifiedSpace, strategy: &PaddingStrategy) -> Result<UnifiedSequence> {
    let format = space.format(&seq.format_id)?;
    seq.check(format)?;
    let slots = space.slots(&seq.format_id)?;
    let (t_n, k_n, m_n) = (seq.frames.len(), space.k_unified, space.m_unified);
    let mut out = UnifiedSequence {
        format_id: seq.format_id.clone(),
        frames: t_n,
        joints: k_n,
        members: m_n,
        data: vec![0.0; t_n * k_n * m_n * 3],
        joint_mask: vec![false; k_n * m_n],
        placeholder: matches!(strategy, PaddingStrategy::LearnablePlaceholder),
        label_ids: seq.label_ids.iter().copied().collect(),
    };
    for m in 0..seq.members {
        for &s in slots {
            out.joint_mask[s * m_n + m] = true;
        }
    }
    for (t, frame) in seq.frames.iter().enumerate() {
        for (m, member) in frame.iter().enumerate() {
            for (j, coords) in member.iter().enumerate() {
                let o = out.offset(t, slots[j], m);
                out.data[o..o + coords.len()].copy_from_slice(coords);
            }
        }
    }
    if let PaddingStrategy::Interpolation(adj) = strategy {
        for (missing, sources) in adj {
            let Some(target) = space.slot_of_joint(missing) else {
                continue;
            };
            let src: Option<Vec<usize>> = sources.iter().map(|s| format.index_of(s).map(|j| slots[j])).collect();
            let Some(src) = src else { continue };
            if src.is_empty() {
                continue;
            }
            for m in 0..seq.members {
                if out.joint_mask[target * m_n + m] {
                    continue;
                }
                for t in 0..t_n {
                    let mut acc = [0.0; 3];
                    for &s in &src {
                        let p = out.point(t, s, m);
                        (0..3).for_each(|c| acc[c] += p[c]);
                    }
                    let o = out.offset(t, target, m);
                    (0..3).for_each(|c| out.data[o + c] = acc[c] / src.len() as f64);
                }
            }
        }
    }
    Ok(out)
}

/// Joint, bone and motion arrays, each `[T x K_unified x M_unified x 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityTriple {
    pub frames: usize,
    pub joints: usize,
    pub members: usize,
    pub joint: Vec<f64>,
    pub bone: Vec<f64>,
    pub motion: Vec<f64>,
    pub joint_mask: Vec<bool>,
    pub placeholder: bool,
}

impl ModalityTriple {
    pub fn slots(&self) -> usize {
        self.joints * self.members
    }
}

/// Bones are `J[j] - J[parent(j)]` on observed joints (zero at the root and
/// on unobserved slots); motion is `J[t] - J[t-1]` with frame 0 zero.
pub fn derive_modalities(u: &UnifiedSequence, space: &UnifiedSpace) -> Result<ModalityTriple> {
    let format = space.format(&u.format_id)?;
    let slots = space.slots(&u.format_id)?;
    if u.joints != space.k_unified || u.members != space.m_unified || u.data.len() != u.frames * u.slots() * 3 {
        return Err(Error::Shape(format!(
            "unified sequence [{} x {} x {}] does not match space [{} x {}]",
            u.frames, u.joints, u.members, space.k_unified, space.m_unified
        )));
    }
    let joint = u.data.clone();
    let mut bone = vec![0.0; joint.len()];
    let mut motion = vec![0.0; joint.len()];
    for t in 0..u.frames {
        for (j, &s) in slots.iter().enumerate() {
            let p = format.parent_of[j];
            if p == j {
                continue;
            }
            let ps = slots[p];
            for m in 0..u.members {
                if !u.joint_mask[s * u.members + m] {
                    continue;
                }
                let (o, op) = (u.offset(t, s, m), u.offset(t, ps, m));
                for c in 0..3 {
                    bone[o + c] = joint[o + c] - joint[op + c];
                }
            }
        }
    }
    let row = u.slots() * 3;
    for t in 1..u.frames {
        for i in 0..row {
            motion[t * row + i] = joint[t * row + i] - joint[(t - 1) * row + i];
        }
    }
    Ok(ModalityTriple {
        frames: u.frames,
        joints: u.joints,
        members: u.members,
        joint,
        bone,
        motion,
        joint_mask: u.joint_mask.clone(),
        placeholder: u.placeholder,
    })
}

#[derive(Serialize, Deserialize)]
struct RegistryFile {
    formats: Vec<SkeletonFormat>,
    #[serde(default)]
    slot_maps: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Reads a registry file and rebuilds its unified space. Slot maps in the
/// file, when present, must agree with the recomputed ones.
pub fn load_registry(path: impl AsRef<Path>) -> Result<UnifiedSpace> {
    let file: RegistryFile = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let space = build_unified_space(&file.formats)?;
    if !file.slot_maps.is_empty() && file.slot_maps != space.slot_maps() {
        return Err(Error::Config("registry slot maps disagree with the joint union".into()));
    }
    Ok(space)
}

pub fn save_registry(space: &UnifiedSpace, path: impl AsRef<Path>) -> Result<()> {
    let file = RegistryFile {
        formats: space.formats().cloned().collect(),
        slot_maps: space.slot_maps(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_adjacency(path: impl AsRef<Path>) -> Result<Adjacency> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// One JSON record per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<RawSequence>> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_corpus<'a>(path: impl AsRef<Path>, seqs: impl IntoIterator<Item = &'a RawSequence>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for s in seqs {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
