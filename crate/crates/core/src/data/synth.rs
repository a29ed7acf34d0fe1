//! Synthetic stick figures with known joints.
//!
//! A figure is posed by forward kinematics from a pelvis position, a torso
//! lean and per-limb angles, then drawn as textured capsules (limbs), a
//! disc (head) and a quadrilateral (torso) over an optionally cluttered
//! flat background. Every body region has its own stripe pattern, oriented
//! relative to the region's axis.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{write_manifest, ManifestRecord};
use crate::error::{PoseError, Result};
use crate::image::ImageBuffer;
use crate::skeleton::{joint, Annotation, JointAnnotation, SkeletonTree, NUM_JOINTS};

pub const BACKGROUND: u8 = 128;

/// Angle ranges in degrees. Limb angles are measured from straight down,
/// positive away from the body's midline; elbow and knee angles are added
/// to the upper limb's angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRanges {
    pub torso_lean: (f64, f64),
    pub head_tilt: (f64, f64),
    pub upper_arm: (f64, f64),
    pub elbow: (f64, f64),
    pub upper_leg: (f64, f64),
    pub knee: (f64, f64),
}

impl Default for PoseRanges {
    fn default() -> Self {
        PoseRanges {
            torso_lean: (-8.0, 8.0),
            head_tilt: (-10.0, 10.0),
            upper_arm: (10.0, 80.0),
            elbow: (-30.0, 60.0),
            upper_leg: (2.0, 25.0),
            knee: (-25.0, 5.0),
        }
    }
}

impl PoseRanges {
    fn check(&self) -> Result<()> {
        let all = [
            ("torso_lean", self.torso_lean),
            ("head_tilt", self.head_tilt),
            ("upper_arm", self.upper_arm),
            ("elbow", self.elbow),
            ("upper_leg", self.upper_leg),
            ("knee", self.knee),
        ];
        for (name, (lo, hi)) in all {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(PoseError::InfeasibleSampler(format!(
                    "{name} range [{lo}, {hi}] is empty"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Head-top to ankle height of a straight figure, pixels.
    pub person_scale: f64,
    /// Multiplier on limb widths.
    pub limb_thickness: f64,
    /// Distinct stripe textures per body region; flat fills otherwise.
    pub textured: bool,
    pub ranges: PoseRanges,
    /// Expected clutter shapes per 10,000 pixels.
    pub clutter: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            width: 192,
            height: 224,
            person_scale: 150.0,
            limb_thickness: 1.0,
            textured: true,
            ranges: PoseRanges::default(),
            clutter: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: ImageBuffer,
    /// Joints rounded to whole pixels.
    pub annotation: Annotation,
    /// Renderer-side centre of every part of the default tree, computed
    /// from the unrounded geometry.
    pub part_centers: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
struct Texture {
    /// Stripe direction relative to the region axis, radians.
    angle: f64,
    period: f64,
    dark: u8,
    light: u8,
}

impl Texture {
    fn value(&self, p: [f64; 2], origin: [f64; 2], axis: f64, textured: bool) -> u8 {
        if !textured {
            return self.dark / 2 + self.light / 2;
        }
        let a = axis + self.angle;
        let t = (p[0] - origin[0]) * a.cos() + (p[1] - origin[1]) * a.sin();
        if (t / self.period).floor().rem_euclid(2.0) == 0.0 {
            self.dark
        } else {
            self.light
        }
    }
}

const fn tex(deg: f64, period: f64, dark: u8, light: u8) -> Texture {
    Texture {
        angle: deg * std::f64::consts::PI / 180.0,
        period,
        dark,
        light,
    }
}

// torso, head, upper arms, lower arms, upper legs, lower legs (right, left)
const TORSO: Texture = tex(90.0, 7.0, 40, 220);
const HEAD: Texture = tex(45.0, 4.0, 230, 90);
const UPPER_ARM: [Texture; 2] = [tex(0.0, 4.0, 20, 200), tex(0.0, 4.0, 200, 20)];
const LOWER_ARM: [Texture; 2] = [tex(90.0, 3.0, 250, 70), tex(90.0, 3.0, 70, 250)];
const UPPER_LEG: [Texture; 2] = [tex(45.0, 6.0, 10, 170), tex(-45.0, 6.0, 10, 170)];
const LOWER_LEG: [Texture; 2] = [tex(0.0, 8.0, 240, 30), tex(0.0, 8.0, 30, 240)];

#[derive(Debug, Clone)]
struct Figure {
    joints: [[f64; 2]; NUM_JOINTS],
    scale: f64,
}

fn dir(angle: f64) -> [f64; 2] {
    [angle.sin(), angle.cos()]
}

fn add(p: [f64; 2], d: [f64; 2], len: f64) -> [f64; 2] {
    [p[0] + d[0] * len, p[1] + d[1] * len]
}

fn sample(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    let v = if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    };
    v.to_radians()
}

/// Joints of a figure with its pelvis at the origin.
fn pose_figure(rng: &mut ChaCha8Rng, h: f64, r: &PoseRanges) -> Figure {
    let lean = sample(rng, r.torso_lean);
    // torso axis points up from the pelvis
    let up = [lean.sin(), -lean.cos()];
    let across = [-up[1], up[0]];
    let pelvis = [0.0, 0.0];
    let neck = add(pelvis, up, 0.30 * h);
    let tilt = lean + sample(rng, r.head_tilt);
    let head_top = add(neck, [tilt.sin(), -tilt.cos()], 0.16 * h);
    let mut j = [[0.0; 2]; NUM_JOINTS];
    j[joint::HEAD_TOP] = head_top;
    j[joint::NECK] = neck;
    // the right side ends up at larger x; limbs swing away from the midline
    for (side, sign) in [(0usize, -1.0f64), (1, 1.0)] {
        let (sh, el, wr, hip, kn, an) = if side == 0 {
            (
                joint::R_SHOULDER,
                joint::R_ELBOW,
                joint::R_WRIST,
                joint::R_HIP,
                joint::R_KNEE,
                joint::R_ANKLE,
            )
        } else {
            (
                joint::L_SHOULDER,
                joint::L_ELBOW,
                joint::L_WRIST,
                joint::L_HIP,
                joint::L_KNEE,
                joint::L_ANKLE,
            )
        };
        let shoulder = add(add(neck, up, -0.03 * h), across, -sign * 0.11 * h);
        let ua = lean + sign * sample(rng, r.upper_arm);
        let la = ua + sign * sample(rng, r.elbow);
        let ua_dir = [-dir(ua)[0], dir(ua)[1]];
        let la_dir = [-dir(la)[0], dir(la)[1]];
        j[sh] = shoulder;
        j[el] = add(shoulder, ua_dir, 0.16 * h);
        j[wr] = add(j[el], la_dir, 0.15 * h);
        let hip_p = add(pelvis, across, -sign * 0.065 * h);
        let ul = sign * sample(rng, r.upper_leg);
        let ll = ul + sign * sample(rng, r.knee);
        j[hip] = hip_p;
        j[kn] = add(hip_p, [-dir(ul)[0], dir(ul)[1]], 0.26 * h);
        j[an] = add(j[kn], [-dir(ll)[0], dir(ll)[1]], 0.26 * h);
    }
    Figure {
        joints: j,
        scale: h,
    }
}

fn translate(f: &mut Figure, d: [f64; 2]) {
    for p in &mut f.joints {
        p[0] += d[0];
        p[1] += d[1];
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
    textured: bool,
}

impl Canvas {
    fn new(w: usize, h: usize, textured: bool) -> Self {
        Canvas {
            w,
            h,
            px: vec![BACKGROUND; w * h],
            textured,
        }
    }

    /// Paints every pixel centre inside `inside`, within the bounding box.
    fn fill(
        &mut self,
        bbox: [f64; 4],
        inside: impl Fn([f64; 2]) -> bool,
        texture: Texture,
        origin: [f64; 2],
        axis: f64,
    ) {
        let x0 = bbox[0].floor().max(0.0) as usize;
        let y0 = bbox[1].floor().max(0.0) as usize;
        let x1 = (bbox[2].ceil().max(0.0) as usize).min(self.w.saturating_sub(1));
        let y1 = (bbox[3].ceil().max(0.0) as usize).min(self.h.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                let p = [x as f64, y as f64];
                if inside(p) {
                    self.px[y * self.w + x] = texture.value(p, origin, axis, self.textured);
                }
            }
        }
    }

    fn capsule(&mut self, a: [f64; 2], b: [f64; 2], r: f64, texture: Texture) {
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = (dx * dx + dy * dy).max(1e-12);
        let bbox = [
            a[0].min(b[0]) - r,
            a[1].min(b[1]) - r,
            a[0].max(b[0]) + r,
            a[1].max(b[1]) + r,
        ];
        let inside = |p: [f64; 2]| {
            let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
            let (cx, cy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
            cx * cx + cy * cy <= r * r
        };
        self.fill(bbox, inside, texture, a, dy.atan2(dx));
    }

    fn disc(&mut self, c: [f64; 2], r: f64, axis: f64, texture: Texture) {
        let bbox = [c[0] - r, c[1] - r, c[0] + r, c[1] + r];
        self.fill(
            bbox,
            |p| (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) <= r * r,
            texture,
            c,
            axis,
        );
    }

    /// Convex polygon with vertices in either winding order.
    fn polygon(&mut self, v: &[[f64; 2]], axis: f64, texture: Texture) {
        let bbox = v.iter().fold(
            [
                f64::INFINITY,
                f64::INFINITY,
                f64::NEG_INFINITY,
                f64::NEG_INFINITY,
            ],
            |b, p| {
                [
                    b[0].min(p[0]),
                    b[1].min(p[1]),
                    b[2].max(p[0]),
                    b[3].max(p[1]),
                ]
            },
        );
        let inside = |p: [f64; 2]| {
            let mut sign = 0.0f64;
            for k in 0..v.len() {
                let (a, b) = (v[k], v[(k + 1) % v.len()]);
                let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                if cross != 0.0 {
                    if sign != 0.0 && cross.signum() != sign {
                        return false;
                    }
                    sign = cross.signum();
                }
            }
            true
        };
        self.fill(bbox, inside, texture, v[0], axis);
    }

    fn clutter(&mut self, rng: &mut ChaCha8Rng, density: f64) {
        let expected = density * (self.w * self.h) as f64 / 10_000.0;
        let n = expected.floor() as usize + usize::from(rng.random::<f64>() < expected.fract());
        for _ in 0..n {
            let c = [
                rng.random_range(0.0..self.w as f64),
                rng.random_range(0.0..self.h as f64),
            ];
            let len = rng.random_range(6.0..40.0);
            let r = rng.random_range(2.0..9.0);
            let ang: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let d = [ang.cos() * len / 2.0, ang.sin() * len / 2.0];
            let t = Texture {
                angle: rng.random_range(0.0..std::f64::consts::PI),
                period: rng.random_range(3.0..10.0),
                dark: rng.random_range(0..128),
                light: rng.random_range(128..=255),
            };
            self.capsule([c[0] - d[0], c[1] - d[1]], [c[0] + d[0], c[1] + d[1]], r, t);
        }
    }

    fn draw_figure(&mut self, f: &Figure, thickness: f64) {
        let j = &f.joints;
        let h = f.scale;
        let pelvis = mid(j[joint::R_HIP], j[joint::L_HIP]);
        let axis = angle(j[joint::NECK], pelvis);
        let torso = [
            j[joint::R_SHOULDER],
            j[joint::L_SHOULDER],
            j[joint::L_HIP],
            j[joint::R_HIP],
        ];
        self.polygon(&torso, axis, TORSO);
        for (s, (hip, knee, ankle)) in [
            (joint::R_HIP, joint::R_KNEE, joint::R_ANKLE),
            (joint::L_HIP, joint::L_KNEE, joint::L_ANKLE),
        ]
        .into_iter()
        .enumerate()
        {
            self.capsule(j[hip], j[knee], 0.055 * h * thickness, UPPER_LEG[s]);
            self.capsule(j[knee], j[ankle], 0.05 * h * thickness, LOWER_LEG[s]);
        }
        let head_c = mid(j[joint::HEAD_TOP], j[joint::NECK]);
        self.disc(
            head_c,
            0.075 * h,
            angle(j[joint::HEAD_TOP], j[joint::NECK]),
            HEAD,
        );
        for (s, (sh, el, wr)) in [
            (joint::R_SHOULDER, joint::R_ELBOW, joint::R_WRIST),
            (joint::L_SHOULDER, joint::L_ELBOW, joint::L_WRIST),
        ]
        .into_iter()
        .enumerate()
        {
            self.capsule(j[sh], j[el], 0.04 * h * thickness, UPPER_ARM[s]);
            self.capsule(j[el], j[wr], 0.035 * h * thickness, LOWER_ARM[s]);
        }
    }

    fn into_image(self) -> ImageBuffer {
        ImageBuffer::new(self.w, self.h, 1, self.px).expect("sized")
    }
}

fn mid(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]
}

fn angle(from: [f64; 2], to: [f64; 2]) -> f64 {
    (to[1] - from[1]).atan2(to[0] - from[0])
}

fn stream(seed: u64, index: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(index);
    rng
}

fn check(cfg: &SynthConfig) -> Result<()> {
    cfg.ranges.check()?;
    if !(100.0..=150.0).contains(&cfg.person_scale) {
        return Err(PoseError::InvalidArgument(format!(
            "person scale {} outside [100, 150]",
            cfg.person_scale
        )));
    }
    if !(cfg.limb_thickness > 0.0 && cfg.clutter >= 0.0 && cfg.clutter.is_finite()) {
        return Err(PoseError::InvalidArgument(
            "limb thickness must be positive and clutter non-negative".into(),
        ));
    }
    Ok(())
}

/// Renders sample `index` of the sequence defined by `cfg.seed`.
pub fn render_sample(cfg: &SynthConfig, index: usize) -> Result<SynthSample> {
    check(cfg)?;
    let mut rng = stream(cfg.seed, index as u64, 0x5157_4e54);
    let margin = 0.06 * cfg.person_scale * cfg.limb_thickness.max(1.0) + 2.0;
    let mut placed = None;
    for _ in 0..200 {
        let mut fig = pose_figure(&mut rng, cfg.person_scale, &cfg.ranges);
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &fig.joints {
            for a in 0..2 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let room = [
            (cfg.width as f64 - 1.0 - margin) - (hi[0] - lo[0]) - margin,
            (cfg.height as f64 - 1.0 - margin) - (hi[1] - lo[1]) - margin,
        ];
        if room[0] < 0.0 || room[1] < 0.0 {
            continue;
        }
        let shift = [
            margin - lo[0] + rng.random_range(0.0..=room[0]),
            margin - lo[1] + rng.random_range(0.0..=room[1]),
        ];
        translate(&mut fig, shift);
        placed = Some(fig);
        break;
    }
    let fig = placed.ok_or_else(|| {
        PoseError::InfeasibleSampler(format!(
            "no pose fits a {}x{} image at scale {}",
            cfg.width, cfg.height, cfg.person_scale
        ))
    })?;

    let mut canvas = Canvas::new(cfg.width, cfg.height, cfg.textured);
    canvas.clutter(&mut rng, cfg.clutter);
    canvas.draw_figure(&fig, cfg.limb_thickness);

    let tree = SkeletonTree::default_human();
    let part_centers = tree
        .parts()
        .iter()
        .map(|p| {
            let n = p.joints.len() as f64;
            let s = p.joints.iter().fold([0.0, 0.0], |s, &j| {
                [s[0] + fig.joints[j][0], s[1] + fig.joints[j][1]]
            });
            [s[0] / n, s[1] / n]
        })
        .collect();
    let annotation = Annotation {
        image_id: format!("img_{index:04}"),
        joints: fig
            .joints
            .iter()
            .map(|p| JointAnnotation {
                x: p[0].round(),
                y: p[1].round(),
                visible: true,
            })
            .collect(),
        scale: cfg.person_scale,
    };
    Ok(SynthSample {
        image: canvas.into_image(),
        annotation,
        part_centers,
    })
}

/// `n` samples, identical for identical configurations.
pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthSample>> {
    if n == 0 {
        return Err(PoseError::InvalidArgument("n must be at least 1".into()));
    }
    (0..n)
        .into_par_iter()
        .map(|i| render_sample(cfg, i))
        .collect()
}

/// A person-free image with the same clutter statistics. Flat images carry
/// no information, so negatives get at least the default clutter.
pub fn render_negative(cfg: &SynthConfig, index: usize) -> Result<ImageBuffer> {
    check(cfg)?;
    let mut rng = stream(cfg.seed, index as u64, 0x4e45_4741);
    let mut canvas = Canvas::new(cfg.width, cfg.height, cfg.textured);
    canvas.clutter(&mut rng, cfg.clutter.max(SynthConfig::default().clutter));
    Ok(canvas.into_image())
}

/// Writes `n` figures and `negatives` clutter images under `out`: the first
/// half of the figures in `train/`, the rest in `test/`, clutter images in
/// `negatives/`, and the manifests `all.jsonl`, `train.jsonl` and
/// `test.jsonl`.
pub fn write_synthetic_dataset(
    out: &Path,
    cfg: &SynthConfig,
    n: usize,
    negatives: usize,
) -> Result<Vec<ManifestRecord>> {
    let samples = generate_synthetic(cfg, n)?;
    for d in ["train", "test", "negatives"] {
        std::fs::create_dir_all(out.join(d))?;
    }
    let n_train = n.div_ceil(2);
    let records: Vec<ManifestRecord> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < n_train { "train" } else { "test" };
            let rel = format!("{split}/{}.pgm", s.annotation.image_id);
            s.image.write_pnm(&out.join(&rel))?;
            let mut a = s.annotation.clone();
            a.image_id = rel;
            Ok(ManifestRecord::from_annotation(&a, Some(split)))
        })
        .collect::<Result<_>>()?;
    (0..negatives).into_par_iter().try_for_each(|i| {
        render_negative(cfg, i)?.write_pnm(&out.join(format!("negatives/neg_{i:04}.pgm")))
    })?;
    write_manifest(&out.join("all.jsonl"), &records)?;
    let (train, test): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| r.split.as_deref() == Some("train"));
    write_manifest(&out.join("train.jsonl"), &train)?;
    write_manifest(&out.join("test.jsonl"), &test)?;
    Ok(records)
}
