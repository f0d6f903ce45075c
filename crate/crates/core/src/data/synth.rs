//! Synthetic video clips with exact ground truth: words rendered as
//! high-contrast glyph blocks over a textured static background, each block
//! following a smooth rigid motion. Everything derives from the explicit
//! seed; re-rendering a frame from its annotations reproduces it exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::font;
use crate::error::{Error, Result};
use crate::geometry::RotatedBox as GRotatedBox;
use crate::{RotatedBox, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Frames per generated video (training clips are sampled out of these).
    pub video_len: usize,
    pub max_instances: usize,
    pub alphabet: String,
    pub word_len_min: usize,
    pub word_len_max: usize,
    /// Word block height range in pixels.
    pub glyph_height_min: f64,
    pub glyph_height_max: f64,
    /// Maximum translation in pixels per frame (each axis).
    pub translation_speed: f64,
    /// Maximum rotation in radians per frame.
    pub rotation_speed: f64,
    /// Maximum relative growth per frame.
    pub scale_speed: f64,
    /// Orientation bound at birth, radians.
    pub max_rotation: f64,
    /// Per-frame probability of a new instance while below the cap.
    pub birth_prob: f64,
    /// Per-frame probability that an instance ends early.
    pub death_prob: f64,
    /// Contrast of the low-frequency background texture.
    pub noise_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 96,
            width: 96,
            video_len: 12,
            max_instances: 3,
            alphabet: "abcdefghijkl".to_string(),
            word_len_min: 3,
            word_len_max: 5,
            glyph_height_min: 14.0,
            glyph_height_max: 20.0,
            translation_speed: 1.2,
            rotation_speed: 0.01,
            scale_speed: 0.0,
            max_rotation: 0.25,
            birth_prob: 0.06,
            death_prob: 0.02,
            noise_amplitude: 0.15,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height % 8 != 0 || self.width % 8 != 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "resolution {}x{} must be positive and divisible by 8",
                self.width, self.height
            )));
        }
        if self.alphabet.is_empty() {
            return Err(Error::Config("alphabet must not be empty".into()));
        }
        for c in self.alphabet.chars() {
            if !font::has_glyph(c) {
                return Err(Error::Config(format!("no glyph for alphabet char {c:?}")));
            }
        }
        if self.word_len_min < 2 || self.word_len_min > self.word_len_max {
            return Err(Error::Config(
                "word lengths need 2 <= min <= max (width must exceed height)".into(),
            ));
        }
        if !(self.glyph_height_min > 0.0 && self.glyph_height_min <= self.glyph_height_max) {
            return Err(Error::Config("bad glyph height range".into()));
        }
        if self.glyph_height_max > self.height as f64 / 2.0 {
            return Err(Error::Config("glyph height exceeds half the frame".into()));
        }
        for (name, p) in [("birth_prob", self.birth_prob), ("death_prob", self.death_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {p}")));
            }
        }
        if self.video_len == 0 {
            return Err(Error::Config("video_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// One annotated instance of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub bbox: RotatedBox,
    pub text: String,
}

/// T frames with exact per-frame ground truth.
#[derive(Debug, Clone)]
pub struct VideoClipSample {
    pub video_id: String,
    pub frames: Vec<Tensor>,
    pub annotations: Vec<Vec<Instance>>,
}

impl VideoClipSample {
    /// Checks the clip invariants: aligned lengths, contiguous tracks,
    /// constant transcription per track.
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() != self.annotations.len() {
            return Err(Error::Validation(format!(
                "{} frames vs {} annotation lists",
                self.frames.len(),
                self.annotations.len()
            )));
        }
        let mut seen: std::collections::BTreeMap<u64, (usize, usize, String)> =
            std::collections::BTreeMap::new();
        for (f, objs) in self.annotations.iter().enumerate() {
            for inst in objs {
                match seen.get_mut(&inst.id) {
                    None => {
                        seen.insert(inst.id, (f, f, inst.text.clone()));
                    }
                    Some((_, last, text)) => {
                        if *last + 1 != f {
                            return Err(Error::Validation(format!(
                                "track {} is not contiguous (frame {f} after {})",
                                inst.id, last
                            )));
                        }
                        if *text != inst.text {
                            return Err(Error::Validation(format!(
                                "track {} changes transcription", inst.id
                            )));
                        }
                        *last = f;
                    }
                }
            }
        }
        Ok(())
    }

    /// Ground-truth instance count per frame (the G^t of the clip loss).
    pub fn gt_counts(&self) -> Vec<usize> {
        self.annotations.iter().map(|a| a.len()).collect()
    }
}

/// Per-instance rendering style (block and glyph gray levels), a pure
/// function of the clip seed and track id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceStyle {
    pub block: f64,
    pub glyph: f64,
}

pub fn instance_style(seed: u64, track_id: u64) -> InstanceStyle {
    let mut rng = ChaCha8Rng::seed_from_u64(
        seed ^ (track_id.wrapping_add(1)).wrapping_mul(0x9E37_79B9_7F4A_7C15),
    );
    InstanceStyle {
        block: rng.gen_range(0.02..0.18),
        glyph: rng.gen_range(0.82..0.98),
    }
}

/// Static per-clip background: low-frequency noise plus a few flat
/// rectangles, a pure function of the seed.
pub fn background(config: &SynthConfig) -> Vec<f64> {
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xBAC4_0000_0000_0001);
    let grid = 6usize;
    let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let amp = config.noise_amplitude;
    let mut buf = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            // bilinear over the coarse grid
            let gy = y as f64 / h as f64 * (grid - 1) as f64;
            let gx = x as f64 / w as f64 * (grid - 1) as f64;
            let (y0, x0) = (gy.floor() as usize, gx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(grid - 1), (x0 + 1).min(grid - 1));
            let (fy, fx) = (gy - y0 as f64, gx - x0 as f64);
            let v = coarse[y0 * grid + x0] * (1.0 - fx) * (1.0 - fy)
                + coarse[y0 * grid + x1] * fx * (1.0 - fy)
                + coarse[y1 * grid + x0] * (1.0 - fx) * fy
                + coarse[y1 * grid + x1] * fx * fy;
            buf[y * w + x] = (0.5 + amp * v).clamp(0.0, 1.0);
        }
    }
    for _ in 0..3 {
        let rw = rng.gen_range(w / 8..w / 2);
        let rh = rng.gen_range(h / 8..h / 2);
        let rx = rng.gen_range(0..w - rw);
        let ry = rng.gen_range(0..h - rh);
        let tint = rng.gen_range(-amp..amp);
        for y in ry..ry + rh {
            for x in rx..rx + rw {
                buf[y * w + x] = (buf[y * w + x] + tint).clamp(0.0, 1.0);
            }
        }
    }
    buf
}

/// Word box state in pixel coordinates.
#[derive(Debug, Clone, Copy)]
struct BoxState {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl BoxState {
    fn half_extents(&self) -> (f64, f64) {
        let (c, s) = (self.theta.cos().abs(), self.theta.sin().abs());
        ((self.w * c + self.h * s) / 2.0, (self.w * s + self.h * c) / 2.0)
    }

    fn overlaps(&self, other: &BoxState, margin: f64) -> bool {
        let (ax, ay) = self.half_extents();
        let (bx, by) = other.half_extents();
        (self.cx - other.cx).abs() < ax + bx + margin
            && (self.cy - other.cy).abs() < ay + by + margin
    }
}

/// Renders one word block (with anti-aliased edges) into a grayscale buffer.
/// Pure in its arguments; the clip generator and any re-render of the
/// annotations go through this single path.
pub fn render_instance(
    buf: &mut [f64],
    frame_h: usize,
    frame_w: usize,
    bbox: &RotatedBox,
    text: &str,
    style: InstanceStyle,
) {
    let st = BoxState {
        cx: bbox.cx() * frame_w as f64 - 0.5,
        cy: bbox.cy() * frame_h as f64 - 0.5,
        w: bbox.w() * frame_w as f64,
        h: bbox.h() * frame_h as f64,
        theta: bbox.theta(),
    };
    let (mask_h, mask_w, mask) = font::word_mask(text);
    let (unit_h, unit_w) = (mask_h as f64 + 2.0, mask_w as f64 + 2.0);
    let (he_x, he_y) = st.half_extents();
    let x_min = ((st.cx - he_x - 1.0).floor().max(0.0)) as usize;
    let x_max = ((st.cx + he_x + 1.0).ceil().min(frame_w as f64 - 1.0)) as usize;
    let y_min = ((st.cy - he_y - 1.0).floor().max(0.0)) as usize;
    let y_max = ((st.cy + he_y + 1.0).ceil().min(frame_h as f64 - 1.0)) as usize;
    let (cos_t, sin_t) = (st.theta.cos(), st.theta.sin());
    for py in y_min..=y_max {
        for px in x_min..=x_max {
            let dx = px as f64 - st.cx;
            let dy = py as f64 - st.cy;
            let u = cos_t * dx + sin_t * dy;
            let v = -sin_t * dx + cos_t * dy;
            let cov_u = (st.w / 2.0 - u.abs() + 0.5).clamp(0.0, 1.0);
            let cov_v = (st.h / 2.0 - v.abs() + 0.5).clamp(0.0, 1.0);
            let cov = cov_u * cov_v;
            if cov <= 0.0 {
                continue;
            }
            let gx = (u / st.w + 0.5) * unit_w - 1.0;
            let gy = (v / st.h + 0.5) * unit_h - 1.0;
            let g = font::sample_word_mask(mask_h, mask_w, &mask, gx, gy);
            let color = style.block + (style.glyph - style.block) * g;
            let cell = &mut buf[py * frame_w + px];
            *cell = *cell * (1.0 - cov) + color * cov;
        }
    }
}

fn grayscale_to_frame(buf: &[f64], h: usize, w: usize) -> Tensor {
    let mut data = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        data.extend_from_slice(buf);
    }
    Tensor::from_vec(&[3, h, w], data).expect("frame shape")
}

struct ActiveTrack {
    id: u64,
    text: String,
    state: BoxState,
    vx: f64,
    vy: f64,
    vr: f64,
    vs: f64,
    aspect: f64,
}

fn sample_word(rng: &mut ChaCha8Rng, config: &SynthConfig) -> String {
    let chars: Vec<char> = config.alphabet.chars().collect();
    let len = rng.gen_range(config.word_len_min..=config.word_len_max);
    (0..len).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

fn try_spawn(
    rng: &mut ChaCha8Rng,
    config: &SynthConfig,
    actives: &[ActiveTrack],
    next_id: u64,
) -> Option<ActiveTrack> {
    let text = sample_word(rng, config);
    let (uh, uw) = font::word_extent(&text);
    let aspect = (uw as f64 + 2.0) / (uh as f64 + 2.0);
    let h = rng.gen_range(config.glyph_height_min..=config.glyph_height_max);
    let w = h * aspect;
    let theta = rng.gen_range(-config.max_rotation..=config.max_rotation);
    let probe = BoxState {
        cx: 0.0,
        cy: 0.0,
        w,
        h,
        theta,
    };
    let (he_x, he_y) = probe.half_extents();
    let (fw, fh) = (config.width as f64, config.height as f64);
    if 2.0 * he_x + 4.0 >= fw || 2.0 * he_y + 4.0 >= fh {
        return None; // word too large for the frame
    }
    for _ in 0..20 {
        let state = BoxState {
            cx: rng.gen_range(he_x + 2.0..fw - he_x - 2.0),
            cy: rng.gen_range(he_y + 2.0..fh - he_y - 2.0),
            w,
            h,
            theta,
        };
        if actives.iter().all(|a| !state.overlaps(&a.state, 4.0)) {
            let speed = config.translation_speed;
            return Some(ActiveTrack {
                id: next_id,
                text,
                state,
                vx: rng.gen_range(-speed..=speed),
                vy: rng.gen_range(-speed..=speed),
                vr: rng.gen_range(-config.rotation_speed..=config.rotation_speed),
                vs: rng.gen_range(-config.scale_speed..=config.scale_speed),
                aspect,
            });
        }
    }
    None
}

fn advance(track: &mut ActiveTrack, fw: f64, fh: f64) {
    let s = &mut track.state;
    s.cx += track.vx;
    s.cy += track.vy;
    s.theta += track.vr;
    if track.vs != 0.0 {
        s.h *= 1.0 + track.vs;
        s.w = s.h * track.aspect;
    }
    let (he_x, he_y) = s.half_extents();
    if s.cx - he_x < 1.0 {
        s.cx = he_x + 1.0;
        track.vx = track.vx.abs();
    } else if s.cx + he_x > fw - 2.0 {
        s.cx = fw - 2.0 - he_x;
        track.vx = -track.vx.abs();
    }
    if s.cy - he_y < 1.0 {
        s.cy = he_y + 1.0;
        track.vy = track.vy.abs();
    } else if s.cy + he_y > fh - 2.0 {
        s.cy = fh - 2.0 - he_y;
        track.vy = -track.vy.abs();
    }
}

fn to_annotation(track: &ActiveTrack, config: &SynthConfig) -> Instance {
    let s = &track.state;
    Instance {
        id: track.id,
        bbox: GRotatedBox::new(
            (s.cx + 0.5) / config.width as f64,
            (s.cy + 0.5) / config.height as f64,
            s.w / config.width as f64,
            s.h / config.height as f64,
            s.theta,
        )
        .expect("generator keeps boxes valid"),
        text: track.text.clone(),
    }
}

/// Generates `t_len` frames with exact annotations, fully determined by
/// `config.seed`.
pub fn generate_clip(config: &SynthConfig, t_len: usize) -> Result<VideoClipSample> {
    config.validate()?;
    if t_len == 0 {
        return Err(Error::InvalidArgument("clip length must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bg = background(config);
    let (fw, fh) = (config.width as f64, config.height as f64);

    let mut actives: Vec<ActiveTrack> = Vec::new();
    let mut next_id = 0u64;
    let mut frames = Vec::with_capacity(t_len);
    let mut annotations = Vec::with_capacity(t_len);

    for t in 0..t_len {
        if t == 0 {
            let initial = if config.max_instances == 0 {
                0
            } else {
                rng.gen_range(1..=config.max_instances)
            };
            for _ in 0..initial {
                if let Some(track) = try_spawn(&mut rng, config, &actives, next_id) {
                    next_id += 1;
                    actives.push(track);
                }
            }
        } else {
            for track in actives.iter_mut() {
                advance(track, fw, fh);
            }
            actives.retain(|_| rng.gen_range(0.0..1.0) >= config.death_prob);
            if actives.len() < config.max_instances && rng.gen_range(0.0..1.0) < config.birth_prob
            {
                if let Some(track) = try_spawn(&mut rng, config, &actives, next_id) {
                    next_id += 1;
                    actives.push(track);
                }
            }
        }

        let mut buf = bg.clone();
        let mut frame_objs = Vec::with_capacity(actives.len());
        for track in &actives {
            let inst = to_annotation(track, config);
            render_instance(
                &mut buf,
                config.height,
                config.width,
                &inst.bbox,
                &inst.text,
                instance_style(config.seed, track.id),
            );
            frame_objs.push(inst);
        }
        frames.push(grayscale_to_frame(&buf, config.height, config.width));
        annotations.push(frame_objs);
    }

    let sample = VideoClipSample {
        video_id: format!("synth-{:016x}", config.seed),
        frames,
        annotations,
    };
    sample.validate()?;
    Ok(sample)
}

/// Pseudo-track clip from a single frame: per-frame random integer pixel
/// shifts applied to pixels and boxes alike, ids constant. Boxes are clamped
/// into [0, 1]; the returned list flags (frame, id) pairs that were clipped.
pub fn pseudo_tracks_from_image(
    frame: &Tensor,
    annotations: &[Instance],
    t_len: usize,
    shift_amplitude: f64,
    seed: u64,
) -> Result<(VideoClipSample, Vec<(usize, u64)>)> {
    if t_len == 0 {
        return Err(Error::InvalidArgument("clip length must be at least 1".into()));
    }
    let shape = frame.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::ShapeMismatch {
            op: "pseudo_tracks_from_image",
            lhs: shape.to_vec(),
            rhs: vec![3, 0, 0],
        });
    }
    let (h, w) = (shape[1], shape[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amp = shift_amplitude.max(0.0);
    let src = frame.values();
    let mut frames = Vec::with_capacity(t_len);
    let mut out_annotations = Vec::with_capacity(t_len);
    let mut clipped = Vec::new();

    for t in 0..t_len {
        let (dx, dy) = if t == 0 || amp == 0.0 {
            (0i64, 0i64)
        } else {
            (
                rng.gen_range(-amp..=amp).round() as i64,
                rng.gen_range(-amp..=amp).round() as i64,
            )
        };
        let mut data = vec![0.0; 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                let sy = y as i64 - dy;
                if sy < 0 || sy >= h as i64 {
                    continue;
                }
                for x in 0..w {
                    let sx = x as i64 - dx;
                    if sx < 0 || sx >= w as i64 {
                        continue;
                    }
                    data[c * h * w + y * w + x] = src[c * h * w + sy as usize * w + sx as usize];
                }
            }
        }
        frames.push(Tensor::from_vec(&[3, h, w], data)?);

        let mut objs = Vec::with_capacity(annotations.len());
        for inst in annotations {
            let b = inst.bbox;
            let cx = b.cx() + dx as f64 / w as f64;
            let cy = b.cy() + dy as f64 / h as f64;
            let cx_clamped = cx.clamp(b.w() / 2.0, 1.0 - b.w() / 2.0);
            let cy_clamped = cy.clamp(b.h() / 2.0, 1.0 - b.h() / 2.0);
            if cx_clamped != cx || cy_clamped != cy {
                clipped.push((t, inst.id));
            }
            objs.push(Instance {
                id: inst.id,
                bbox: GRotatedBox::new(cx_clamped, cy_clamped, b.w(), b.h(), b.theta())?,
                text: inst.text.clone(),
            });
        }
        out_annotations.push(objs);
    }

    let sample = VideoClipSample {
        video_id: format!("pseudo-{seed:016x}"),
        frames,
        annotations: out_annotations,
    };
    sample.validate()?;
    Ok((sample, clipped))
}

/// Extracts a training clip of `clip_len` frames at a uniformly sampled
/// stride in `[1, max_interval]` (capped by availability); ids are kept.
pub fn sample_training_clip(
    video: &VideoClipSample,
    clip_len: usize,
    max_interval: usize,
    rng: &mut ChaCha8Rng,
) -> Result<VideoClipSample> {
    let n = video.frames.len();
    if clip_len == 0 || max_interval == 0 {
        return Err(Error::InvalidArgument(
            "clip length and max interval must be at least 1".into(),
        ));
    }
    if n < clip_len {
        return Err(Error::InvalidArgument(format!(
            "video of {n} frames is shorter than clip length {clip_len}"
        )));
    }
    let stride_cap = if clip_len == 1 {
        max_interval
    } else {
        max_interval.min((n - 1) / (clip_len - 1))
    };
    let stride = rng.gen_range(1..=stride_cap.max(1));
    let span = (clip_len - 1) * stride;
    let start = rng.gen_range(0..=n - span - 1);
    let indices: Vec<usize> = (0..clip_len).map(|k| start + k * stride).collect();
    Ok(VideoClipSample {
        video_id: video.video_id.clone(),
        frames: indices.iter().map(|&i| video.frames[i].clone()).collect(),
        annotations: indices
            .iter()
            .map(|&i| video.annotations[i].clone())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_bit_identical_clips() {
        let config = SynthConfig::default();
        let a = generate_clip(&config, 6).unwrap();
        let b = generate_clip(&config, 6).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.values(), fb.values());
        }
        assert_eq!(a.annotations.len(), b.annotations.len());
        for (aa, ab) in a.annotations.iter().zip(&b.annotations) {
            assert_eq!(aa, ab);
        }
    }

    #[test]
    fn zero_motion_freezes_boxes() {
        let config = SynthConfig {
            translation_speed: 0.0,
            rotation_speed: 0.0,
            scale_speed: 0.0,
            death_prob: 0.0,
            birth_prob: 0.0,
            seed: 5,
            ..SynthConfig::default()
        };
        let clip = generate_clip(&config, 4).unwrap();
        let first = &clip.annotations[0];
        assert!(!first.is_empty());
        for frame in &clip.annotations[1..] {
            assert_eq!(frame, first);
        }
    }

    #[test]
    fn instance_count_respects_cap() {
        let config = SynthConfig {
            birth_prob: 1.0,
            death_prob: 0.0,
            seed: 9,
            ..SynthConfig::default()
        };
        let clip = generate_clip(&config, 10).unwrap();
        for objs in &clip.annotations {
            assert!(objs.len() <= config.max_instances);
        }
    }

    #[test]
    fn rerendering_from_annotations_reproduces_frames() {
        let config = SynthConfig {
            seed: 33,
            ..SynthConfig::default()
        };
        let clip = generate_clip(&config, 5).unwrap();
        let bg = background(&config);
        let mut worst: f64 = 0.0;
        for (frame, objs) in clip.frames.iter().zip(&clip.annotations) {
            let mut buf = bg.clone();
            for inst in objs {
                render_instance(
                    &mut buf,
                    config.height,
                    config.width,
                    &inst.bbox,
                    &inst.text,
                    instance_style(config.seed, inst.id),
                );
            }
            let got = frame.values();
            let diff: f64 = buf
                .iter()
                .zip(&got[..buf.len()])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / buf.len() as f64;
            worst = worst.max(diff);
        }
        assert!(worst < 0.02, "mean abs diff {worst}");
    }

    #[test]
    fn invalid_resolution_is_a_config_error() {
        let config = SynthConfig {
            width: 90,
            ..SynthConfig::default()
        };
        assert!(matches!(
            generate_clip(&config, 3).unwrap_err(),
            Error::Config(_)
        ));
    }

    #[test]
    fn pseudo_tracks_shift_and_clamp() {
        let frame = Tensor::zeros(&[3, 16, 16]);
        let inst = Instance {
            id: 4,
            bbox: GRotatedBox::new(0.5, 0.5, 0.4, 0.2, 0.0).unwrap(),
            text: "ab".into(),
        };
        // amplitude 0: identical frames and boxes
        let (clip, clipped) =
            pseudo_tracks_from_image(&frame, &[inst.clone()], 3, 0.0, 7).unwrap();
        assert!(clipped.is_empty());
        for objs in &clip.annotations {
            assert_eq!(objs[0].bbox, inst.bbox);
        }
        // same seed twice is identical
        let (a, _) = pseudo_tracks_from_image(&frame, &[inst.clone()], 3, 3.0, 7).unwrap();
        let (b, _) = pseudo_tracks_from_image(&frame, &[inst.clone()], 3, 3.0, 7).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.values(), fb.values());
        }
        // huge shifts clamp boxes inside [0,1] and are flagged
        let edge = Instance {
            id: 1,
            bbox: GRotatedBox::new(0.1, 0.1, 0.15, 0.08, 0.0).unwrap(),
            text: "cd".into(),
        };
        let (clip, clipped) = pseudo_tracks_from_image(&frame, &[edge], 6, 12.0, 11).unwrap();
        for objs in &clip.annotations {
            let b = objs[0].bbox;
            assert!(b.cx() - b.w() / 2.0 >= -1e-12 && b.cx() + b.w() / 2.0 <= 1.0 + 1e-12);
        }
        assert!(!clipped.is_empty());
    }

    #[test]
    fn clip_sampling_strides_and_errors() {
        let config = SynthConfig {
            seed: 2,
            ..SynthConfig::default()
        };
        let video = generate_clip(&config, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let clip = sample_training_clip(&video, 4, 5, &mut rng).unwrap();
            assert_eq!(clip.frames.len(), 4);
            clip.validate().unwrap();
        }
        // clip_len == video length: whole video, stride 1
        let clip = sample_training_clip(&video, 12, 5, &mut rng).unwrap();
        for (got, want) in clip.frames.iter().zip(&video.frames) {
            assert_eq!(got.values(), want.values());
        }
        // max_interval 1: consecutive
        let clip = sample_training_clip(&video, 3, 1, &mut rng).unwrap();
        assert_eq!(clip.frames.len(), 3);
        assert!(matches!(
            sample_training_clip(&video, 13, 5, &mut rng).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }
}
