//! Deterministic synthetic motion corpus.
//!
//! Each sample is one parametric action rendered as a 3D trajectory over the
//! full canonical joint vocabulary, then rendered into every requested
//! skeleton format by joint selection (and depth dropping for 2D formats),
//! with independent Gaussian jitter per rendering.
//!
//! Body frame: x points to the body's left, y up, z forward. A fixed camera
//! yaw is applied last so that both sagittal and lateral motion survive the
//! 2D projection.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::seed::substream;
use crate::skeleton::{write_corpus, RawSequence, SkeletonFormat, CANONICAL_JOINTS};

const NJ: usize = CANONICAL_JOINTS.len();
type Pose = [[f64; 3]; NJ];

const CAMERA_YAW: f64 = 0.5;

// canonical indices
const PELVIS: usize = 0;
const L_SHOULDER: usize = 13;
const R_SHOULDER: usize = 19;
const R_ELBOW: usize = 20;
const L_HIP: usize = 25;
const R_HIP: usize = 29;
const L_ARM: [usize; 5] = [14, 15, 16, 17, 18];
const R_ARM: [usize; 5] = [20, 21, 22, 23, 24];
const R_FOREARM: [usize; 4] = [21, 22, 23, 24];
const L_LEG: [usize; 3] = [26, 27, 28];
const R_LEG: [usize; 3] = [30, 31, 32];
const KNEES: [usize; 2] = [26, 30];
const FEET: [usize; 4] = [27, 28, 31, 32];

fn rest_pose() -> Pose {
    let left: [(usize, [f64; 3]); 12] = [
        (7, [0.03, 1.70, 0.08]),
        (9, [0.08, 1.67, 0.0]),
        (11, [0.07, 1.45, 0.0]),
        (13, [0.18, 1.45, 0.0]),
        (14, [0.18, 1.18, 0.0]),
        (15, [0.18, 0.93, 0.0]),
        (16, [0.18, 0.85, 0.0]),
        (17, [0.18, 0.78, 0.0]),
        (18, [0.21, 0.86, 0.03]),
        (25, [0.10, 0.95, 0.0]),
        (26, [0.10, 0.52, 0.0]),
        (27, [0.10, 0.10, 0.0]),
    ];
    let mut p = [[0.0; 3]; NJ];
    p[0] = [0.0, 1.00, 0.0];
    p[1] = [0.0, 1.10, 0.0];
    p[2] = [0.0, 1.22, 0.0];
    p[3] = [0.0, 1.35, 0.0];
    p[4] = [0.0, 1.50, 0.0];
    p[5] = [0.0, 1.65, 0.0];
    p[6] = [0.0, 1.65, 0.10];
    p[28] = [0.10, 0.03, 0.10];
    p[32] = [-0.10, 0.03, 0.10];
    for (i, v) in left {
        p[i] = v;
        let right = CANONICAL_JOINTS
            .iter()
            .position(|j| *j == CANONICAL_JOINTS[i].replacen("l_", "r_", 1))
            .expect("mirrored joint");
        p[right] = [-v[0], v[1], v[2]];
    }
    p
}

fn rotate(p: &mut Pose, joints: &[usize], pivot: [f64; 3], axis: usize, angle: f64) {
    let (s, c) = angle.sin_cos();
    // axis x rotates (y, z), axis y rotates (z, x), axis z rotates (x, y)
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    for &j in joints {
        let (u, v) = (p[j][a] - pivot[a], p[j][b] - pivot[b]);
        p[j][a] = pivot[a] + u * c - v * s;
        p[j][b] = pivot[b] + u * s + v * c;
    }
}

fn translate(p: &mut Pose, joints: impl IntoIterator<Item = usize>, d: [f64; 3]) {
    for j in joints {
        (0..3).for_each(|c| p[j][c] += d[c]);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Wave,
    Squat,
    Walk,
    Jump,
    Kick,
    Turn,
    Clap,
    Bow,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::Wave,
        Primitive::Squat,
        Primitive::Walk,
        Primitive::Jump,
        Primitive::Kick,
        Primitive::Turn,
        Primitive::Clap,
        Primitive::Bow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Wave => "wave",
            Primitive::Squat => "squat",
            Primitive::Walk => "walk",
            Primitive::Jump => "jump",
            Primitive::Kick => "kick",
            Primitive::Turn => "turn",
            Primitive::Clap => "clap",
            Primitive::Bow => "bow",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| invalid(format!("unknown primitive `{s}`")))
    }

    fn default_frequency(self) -> [f64; 2] {
        match self {
            Primitive::Wave => [2.0, 3.0],
            Primitive::Squat | Primitive::Walk => [1.0, 2.0],
            Primitive::Clap => [2.0, 4.0],
            _ => [1.0, 1.0],
        }
    }
}

/// Per-sample draws for one primitive.
#[derive(Clone, Copy, Debug)]
struct Draw {
    amp: f64,
    freq: f64,
    phase: f64,
    center: f64,
}

impl Primitive {
    /// Pose at normalized time `u` in [0, 1].
    fn pose(self, d: &Draw, u: f64) -> Pose {
        let mut p = rest_pose();
        let osc = (2.0 * PI * d.freq * u + d.phase).sin();
        match self {
            Primitive::Wave => {
                let (sh, el) = (p[R_SHOULDER], p[R_ELBOW]);
                rotate(&mut p, &R_ARM, sh, 2, -2.4);
                let el = rot_point(el, sh, 2, -2.4);
                rotate(&mut p, &R_FOREARM, el, 2, 0.6 * d.amp * osc);
            }
            Primitive::Squat => {
                // starts standing regardless of the drawn phase
                let depth = 0.35 * d.amp * (1.0 - (2.0 * PI * d.freq * u).cos()) / 2.0;
                let upper = (0..NJ).filter(|j| !KNEES.contains(j) && !FEET.contains(j));
                translate(&mut p, upper, [0.0, -depth, 0.0]);
                translate(&mut p, KNEES, [0.0, -0.5 * depth, 0.6 * depth]);
            }
            Primitive::Walk => {
                let th = 0.45 * d.amp * osc;
                let (lh, rh, ls, rs) = (p[L_HIP], p[R_HIP], p[L_SHOULDER], p[R_SHOULDER]);
                rotate(&mut p, &L_LEG, lh, 0, th);
                rotate(&mut p, &R_LEG, rh, 0, -th);
                rotate(&mut p, &L_ARM, ls, 0, -0.6 * th);
                rotate(&mut p, &R_ARM, rs, 0, 0.6 * th);
                translate(&mut p, 0..NJ, [0.0, 0.0, 0.8 * d.amp * u]);
            }
            Primitive::Jump => {
                let s = ((u - 0.25) / 0.5).clamp(0.0, 1.0);
                let h = 0.5 * d.amp * 4.0 * s * (1.0 - s);
                let (ls, rs) = (p[L_SHOULDER], p[R_SHOULDER]);
                rotate(&mut p, &L_ARM, ls, 0, -3.0 * h);
                rotate(&mut p, &R_ARM, rs, 0, -3.0 * h);
                translate(&mut p, 0..NJ, [0.0, h, 0.0]);
            }
            Primitive::Kick => {
                let a = -1.3 * d.amp * (-((u - d.center) / 0.12).powi(2)).exp();
                let rh = p[R_HIP];
                rotate(&mut p, &R_LEG, rh, 0, a);
            }
            Primitive::Turn => {
                let pelvis = p[PELVIS];
                let all: Vec<usize> = (0..NJ).collect();
                rotate(&mut p, &all, pelvis, 1, 0.5 * PI * d.amp * u);
            }
            Primitive::Clap => {
                let (ls, rs) = (p[L_SHOULDER], p[R_SHOULDER]);
                rotate(&mut p, &L_ARM, ls, 0, -1.4);
                rotate(&mut p, &R_ARM, rs, 0, -1.4);
                let beta = 0.6 * d.amp * (1.0 + (2.0 * PI * d.freq * u + d.phase).cos()) / 2.0;
                rotate(&mut p, &L_ARM, ls, 1, beta);
                rotate(&mut p, &R_ARM, rs, 1, -beta);
            }
            Primitive::Bow => {
                let a = 0.9 * d.amp * (PI * u).sin();
                let pelvis = p[PELVIS];
                let upper: Vec<usize> = (1..25).collect();
                rotate(&mut p, &upper, pelvis, 0, a);
            }
        }
        p
    }
}

fn rot_point(x: [f64; 3], pivot: [f64; 3], axis: usize, angle: f64) -> [f64; 3] {
    let mut p = [[0.0; 3]; NJ];
    p[0] = x;
    rotate(&mut p, &[0], pivot, axis, angle);
    p[0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub name: String,
    pub primitive: Primitive,
    /// Amplitude multiplier range.
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
    /// Cycles per clip; the primitive's default when absent.
    #[serde(default)]
    pub frequency: Option<[f64; 2]>,
}

fn default_amplitude() -> [f64; 2] {
    [0.8, 1.2]
}

impl ClassSpec {
    pub fn of(p: Primitive) -> Self {
        Self {
            name: p.name().to_string(),
            primitive: p,
            amplitude: default_amplitude(),
            frequency: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub classes: Vec<ClassSpec>,
    pub formats: Vec<String>,
    pub samples_per_class: Vec<usize>,
    pub frames: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Performers per sample, capped by each format's member limit.
    #[serde(default = "one")]
    pub members: usize,
    /// Probability that a sample is followed by a second, different class.
    #[serde(default)]
    pub multi_label_fraction: f64,
}

fn one() -> usize {
    1
}

impl GenSpec {
    /// One class per built-in primitive, `per_class` samples each.
    pub fn toy(per_class: usize, formats: &[&str], frames: usize, noise_sigma: f64, seed: u64) -> Self {
        Self {
            classes: Primitive::ALL.iter().map(|&p| ClassSpec::of(p)).collect(),
            formats: formats.iter().map(|s| s.to_string()).collect(),
            samples_per_class: vec![per_class; Primitive::ALL.len()],
            frames,
            noise_sigma,
            seed,
            members: 1,
            multi_label_fraction: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.samples_per_class.len() != self.classes.len() {
            return Err(Error::Config("samples_per_class must match classes".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if self.frames < 2 {
            return Err(Error::Config("at least two frames are required".into()));
        }
        if self.members == 0 {
            return Err(Error::Config("members must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.multi_label_fraction) {
            return Err(Error::Config("multi_label_fraction must be in [0, 1]".into()));
        }
        if self.multi_label_fraction > 0.0 && self.classes.len() < 2 {
            return Err(Error::Config("multi-label samples need at least two classes".into()));
        }
        for c in &self.classes {
            if c.amplitude[0] > c.amplitude[1] || c.frequency.is_some_and(|f| f[0] > f[1]) {
                return Err(Error::Config(format!("class `{}` has an empty parameter range", c.name)));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

fn draw(rng: &mut impl Rng, c: &ClassSpec) -> Draw {
    let f = c.frequency.unwrap_or_else(|| c.primitive.default_frequency());
    let range = |rng: &mut dyn rand::RngCore, r: [f64; 2]| if r[0] < r[1] { rng.random_range(r[0]..r[1]) } else { r[0] };
    Draw {
        amp: range(rng, c.amplitude),
        freq: range(rng, f),
        phase: rng.random_range(0.0..2.0 * PI),
        center: rng.random_range(0.4..0.6),
    }
}

/// Canonical 3D trajectory of one sample: `[frames][members][joint]`.
pub type Trajectory = Vec<Vec<Pose>>;

struct Segment {
    primitive: Primitive,
    draw: Draw,
}

fn render_segments(segments: &[Segment], frames: usize, blend: usize, place: &Placement) -> Vec<Pose> {
    let pose_at = |s: &Segment, u: f64| s.primitive.pose(&s.draw, u.clamp(0.0, 1.0));
    let out: Vec<Pose> = if segments.len() == 1 {
        (0..frames)
            .map(|t| pose_at(&segments[0], t as f64 / (frames - 1) as f64))
            .collect()
    } else {
        // two halves joined by a linear cross-fade `blend` frames wide
        let half = frames as f64 / 2.0;
        let w = blend.max(1) as f64;
        (0..frames)
            .map(|t| {
                let t = t as f64;
                let a = pose_at(&segments[0], t / half);
                let b = pose_at(&segments[1], (t - half) / (frames as f64 - 1.0 - half).max(1.0));
                let alpha = ((t - (half - w / 2.0)) / w).clamp(0.0, 1.0);
                let mut p = a;
                for j in 0..NJ {
                    for c in 0..3 {
                        p[j][c] = (1.0 - alpha) * a[j][c] + alpha * b[j][c];
                    }
                }
                p
            })
            .collect()
    };
    out.into_iter().map(|p| place.apply(p)).collect()
}

/// Body size, floor position and camera view of one performer.
struct Placement {
    scale: f64,
    offset: [f64; 3],
}

impl Placement {
    fn apply(&self, mut p: Pose) -> Pose {
        for j in p.iter_mut() {
            (0..3).for_each(|c| j[c] = j[c] * self.scale + self.offset[c]);
        }
        let all: Vec<usize> = (0..NJ).collect();
        rotate(&mut p, &all, [0.0; 3], 1, CAMERA_YAW);
        p
    }
}

/// A generated sample before format rendering.
#[derive(Clone, Debug)]
pub struct CanonicalSample {
    pub sample_id: String,
    pub class: usize,
    pub label_ids: Vec<u32>,
    pub trajectory: Trajectory,
}

pub fn canonical_samples(spec: &GenSpec) -> Result<Vec<CanonicalSample>> {
    spec.validate()?;
    let blend = ((spec.frames as f64) * 0.1).round() as usize;
    let mut out = Vec::new();
    let mut index = 0u64;
    for (class, (c, &count)) in spec.classes.iter().zip(&spec.samples_per_class).enumerate() {
        for _ in 0..count {
            let mut rng = substream(spec.seed, "gen", index);
            let second = (rng.random::<f64>() < spec.multi_label_fraction).then(|| {
                let o = rng.random_range(0..spec.classes.len() - 1);
                if o >= class {
                    o + 1
                } else {
                    o
                }
            });
            let mut members = Vec::with_capacity(spec.members);
            for m in 0..spec.members {
                let mut segs = vec![Segment {
                    primitive: c.primitive,
                    draw: draw(&mut rng, c),
                }];
                if let Some(o) = second {
                    let oc = &spec.classes[o];
                    segs.push(Segment {
                        primitive: oc.primitive,
                        draw: draw(&mut rng, oc),
                    });
                }
                let place = Placement {
                    scale: rng.random_range(0.9..1.1),
                    offset: [rng.random_range(-0.1..0.1) + m as f64 * 1.2, 0.0, rng.random_range(-0.1..0.1)],
                };
                members.push(render_segments(&segs, spec.frames, blend, &place));
            }
            let trajectory = (0..spec.frames).map(|t| members.iter().map(|m| m[t]).collect()).collect();
            let mut label_ids = vec![class as u32];
            label_ids.extend(second.map(|o| o as u32));
            out.push(CanonicalSample {
                sample_id: format!("s{index:06}"),
                class,
                label_ids,
                trajectory,
            });
            index += 1;
        }
    }
    Ok(out)
}

/// Renders one canonical sample into `format`: joint selection, depth drop
/// for 2D, then jitter drawn from `noise_rng`.
pub fn render(sample: &CanonicalSample, format: &SkeletonFormat, noise_sigma: f64, noise_rng: &mut impl Rng) -> Result<RawSequence> {
    let idx: Vec<usize> = format
        .joints
        .iter()
        .map(|j| {
            CANONICAL_JOINTS
                .iter()
                .position(|c| c == j)
                .ok_or_else(|| invalid(format!("format `{}` uses non-canonical joint `{j}`", format.format_id)))
        })
        .collect::<Result<_>>()?;
    let members = sample.trajectory[0].len().min(format.max_members);
    let noise = Normal::new(0.0, noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| invalid(e.to_string()))?;
    let frames = sample
        .trajectory
        .iter()
        .map(|frame| {
            frame[..members]
                .iter()
                .map(|pose| {
                    idx.iter()
                        .map(|&j| {
                            pose[j][..format.coord_dims]
                                .iter()
                                .map(|&x| if noise_sigma > 0.0 { x + noise.sample(noise_rng) } else { x })
                                .collect()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    Ok(RawSequence {
        sample_id: Some(sample.sample_id.clone()),
        format_id: format.format_id.clone(),
        members,
        label_ids: sample.label_ids.clone(),
        frames,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub counts: Vec<usize>,
    pub formats: Vec<String>,
    pub frames: usize,
    pub seed: u64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    /// format id -> samples in generation order
    pub by_format: BTreeMap<String, Vec<RawSequence>>,
}

/// Generates every sample and renders it into every requested format.
/// `formats` resolves format ids; built-in presets are used when it is `None`.
pub fn generate(spec: &GenSpec, formats: Option<&[SkeletonFormat]>) -> Result<Corpus> {
    let resolved: Vec<SkeletonFormat> = spec
        .formats
        .iter()
        .map(|id| {
            formats
                .and_then(|fs| fs.iter().find(|f| &f.format_id == id).cloned())
                .or_else(|| SkeletonFormat::preset(id))
                .ok_or_else(|| Error::UnknownFormat(id.clone()))
        })
        .collect::<Result<_>>()?;
    let samples = canonical_samples(spec)?;
    let mut by_format = BTreeMap::new();
    for (fi, f) in resolved.iter().enumerate() {
        let rendered = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut rng = substream(spec.seed, "noise", (i as u64) << 8 | fi as u64);
                render(s, f, spec.noise_sigma, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        by_format.insert(f.format_id.clone(), rendered);
    }
    Ok(Corpus {
        manifest: Manifest {
            class_names: spec.class_names(),
            counts: spec.samples_per_class.clone(),
            formats: spec.formats.clone(),
            frames: spec.frames,
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
        },
        by_format,
    })
}

impl Corpus {
    /// Writes `<format>.jsonl` per format and `manifest.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (f, seqs) in &self.by_format {
            write_corpus(dir.join(format!("{f}.jsonl")), seqs)?;
        }
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn all(&self) -> impl Iterator<Item = &RawSequence> {
        self.by_format.values().flatten()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_is_mirrored() {
        let p = rest_pose();
        assert_eq!(p[13], [0.18, 1.45, 0.0]);
        assert_eq!(p[19], [-0.18, 1.45, 0.0]);
        assert_eq!(p[31], [-0.10, 0.10, 0.0]);
    }

    #[test]
    fn rotation_about_each_axis() {
        let x = rot_point([1.0, 0.0, 0.0], [0.0; 3], 2, PI / 2.0);
        assert!((x[0]).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);
        let y = rot_point([0.0, 1.0, 0.0], [0.0; 3], 0, PI / 2.0);
        assert!((y[2] - 1.0).abs() < 1e-15);
        let z = rot_point([0.0, 0.0, 1.0], [0.0; 3], 1, PI / 2.0);
        assert!((z[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn drop_z_projection() {
        let f = SkeletonFormat::from_pairs("flat", &[("pelvis", "pelvis")], 2, 1).unwrap();
        let mut traj_pose = [[0.0; 3]; NJ];
        traj_pose[0] = [1.0, 2.0, 3.0];
        let s = CanonicalSample {
            sample_id: "x".into(),
            class: 0,
            label_ids: vec![0],
            trajectory: vec![vec![traj_pose]],
        };
        let r = render(&s, &f, 0.0, &mut substream(0, "t", 0)).unwrap();
        assert_eq!(r.frames[0][0][0], vec![1.0, 2.0]);
    }

    #[test]
    fn non_canonical_joint_is_rejected() {
        let f = SkeletonFormat::from_pairs("odd", &[("tail", "tail")], 3, 1).unwrap();
        let spec = GenSpec::toy(1, &[], 4, 0.0, 0);
        let s = &canonical_samples(&spec).unwrap()[0];
        assert!(render(s, &f, 0.0, &mut substream(0, "t", 0)).is_err());
        let mut bad = GenSpec::toy(1, &["nope"], 4, 0.0, 0);
        assert!(generate(&bad, None).is_err());
        bad.formats.clear();
        bad.samples_per_class.pop();
        assert!(generate(&bad, None).is_err());
    }

    #[test]
    fn counts_and_multi_labels() {
        let mut spec = GenSpec::toy(3, &["kinect-v1"], 10, 0.0, 5);
        spec.samples_per_class = vec![5, 1, 0, 2, 3, 3, 3, 7];
        spec.multi_label_fraction = 0.5;
        let c = generate(&spec, None).unwrap();
        let seqs = &c.by_format["kinect-v1"];
        for (class, &n) in spec.samples_per_class.iter().enumerate() {
            assert_eq!(seqs.iter().filter(|s| s.label_ids[0] == class as u32).count(), n);
        }
        assert!(seqs.iter().any(|s| s.label_ids.len() == 2));
        assert!(seqs.iter().all(|s| s.label_ids.len() < 2 || s.label_ids[0] != s.label_ids[1]));
    }

    #[test]
    fn two_members_are_capped_per_format() {
        let mut spec = GenSpec::toy(1, &["kinect-v2", "smpl-22"], 6, 0.0, 1);
        spec.members = 2;
        let c = generate(&spec, None).unwrap();
        assert_eq!(c.by_format["kinect-v2"][0].members, 2);
        assert_eq!(c.by_format["smpl-22"][0].members, 1);
    }
}
