//! Seeded synthetic snow scenes.
//!
//! A snowy image is composed from a clean scene `J` as
//!
//! ```text
//! K = J·(1 − Z·R) + C·Z·R
//! I = K·T + A·(1 − T)
//! ```
//!
//! where `R` marks snow pixels, `Z` is a chromatic tint field, `C` the snow
//! colour, `T` the haze transmission and `A` the atmospheric light.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use snowformer_tensor::{Scalar, Tensor, TensorError};

use crate::error::{io_err, Error, Result};
use crate::hash::config_sha256;
use crate::image_io::{png_read, png_write};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Maximum deviation of a streak from the global wind direction.
pub const STREAK_JITTER_DEG: f64 = 15.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaseScene {
    Procedural,
    Directory { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// `[H, W]` in pixels.
    pub image_size: [usize; 2],
    /// Inclusive range of particles per image.
    pub particle_count_range: [usize; 2],
    /// Particle radius range in pixels, sampled log-uniformly.
    pub particle_scale_range: [f64; 2],
    pub streak_probability: f64,
    pub wind_angle_deg: f64,
    pub t_min: f64,
    pub base_scene: BaseScene,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: [256, 256],
            particle_count_range: [10, 60],
            particle_scale_range: [1.0, 24.0],
            streak_probability: 0.3,
            wind_angle_deg: 75.0,
            t_min: 0.6,
            base_scene: BaseScene::Procedural,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_size(mut self, h: usize, w: usize) -> Self {
        self.image_size = [h, w];
        self
    }

    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.image_size;
        let [c0, c1] = self.particle_count_range;
        let [s0, s1] = self.particle_scale_range;
        let problem = if h == 0 || w == 0 {
            Some("image_size must be positive".to_string())
        } else if c0 > c1 {
            Some(format!("particle_count_range {c0}..{c1} is empty"))
        } else if !(s0 > 0.0 && s0 <= s1 && s1.is_finite()) {
            Some(format!("particle_scale_range {s0}..{s1} is invalid"))
        } else if !(0.0..=1.0).contains(&self.streak_probability) {
            Some("streak_probability must lie in [0,1]".to_string())
        } else if !(self.t_min > 0.0 && self.t_min <= 1.0) {
            Some("t_min must lie in (0,1]".to_string())
        } else {
            None
        };
        match problem {
            Some(msg) => Err(Error::InvalidConfig(msg)),
            None => Ok(()),
        }
    }

    pub fn sha256(&self) -> String {
        config_sha256(self)
    }

    /// Correlation length of the haze field: `max(H,W)/8` pixels.
    pub fn blur_radius(&self) -> f64 {
        self.image_size[0].max(self.image_size[1]) as f64 / 8.0
    }
}

#[derive(Clone, Copy)]
enum Stream {
    Clean = 1,
    Mask = 2,
    Transmission = 3,
}

/// Independent generator per `(seed, idx, stream)`, so sample `idx` never
/// depends on which other samples were generated or in what order.
fn stream_rng(seed: u64, idx: u64, stream: Stream) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((idx << 2) | stream as u64);
    r
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0,1]` with lattice spacing `cell` pixels.
fn value_noise(rng: &mut impl Rng, h: usize, w: usize, cell: f64) -> Vec<f64> {
    let cell = cell.max(1.0);
    let gh = (h as f64 / cell).ceil() as usize + 2;
    let gw = (w as f64 / cell).ceil() as usize + 2;
    let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.gen::<f64>()).collect();
    let (oy, ox) = (rng.gen::<f64>() * cell, rng.gen::<f64>() * cell);
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = (y as f64 + oy) / cell;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..w {
            let fx = (x as f64 + ox) / cell;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let at = |yy: usize, xx: usize| lattice[yy * gw + xx];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn rand_rgb(rng: &mut impl Rng, lo: f64, hi: f64) -> [f64; 3] {
    [
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
        rng.gen_range(lo..hi),
    ]
}

/// Clean scene `J` as `[3,H,W]` in `[0,1]`.
pub fn gen_clean(cfg: &SynthConfig, idx: u64) -> Result<Tensor<f64>> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, idx, Stream::Clean);
    match &cfg.base_scene {
        BaseScene::Procedural => Ok(procedural_scene(&mut rng, cfg.image_size)),
        BaseScene::Directory { path } => load_scene(&mut rng, path, cfg.image_size, idx),
    }
}

fn procedural_scene(rng: &mut impl Rng, [h, w]: [usize; 2]) -> Tensor<f64> {
    let plane = h * w;
    let mut img = vec![0.0; 3 * plane];
    let (c0, c1) = (rand_rgb(rng, 0.05, 0.95), rand_rgb(rng, 0.05, 0.95));
    let theta = rng.gen_range(0.0..2.0 * PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let diag = ((h * h + w * w) as f64).sqrt();
    for y in 0..h {
        for x in 0..w {
            let u = (((x as f64 - cx) * dx + (y as f64 - cy) * dy) / diag + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img[c * plane + y * w + x] = c0[c] + (c1[c] - c0[c]) * u;
            }
        }
    }
    let side = h.min(w) as f64;
    for _ in 0..rng.gen_range(3..=8) {
        let ellipse = rng.gen_bool(0.5);
        let (sx, sy) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let a = rng.gen_range(0.05..0.3) * side;
        let b = rng.gen_range(0.05..0.3) * side;
        let phi = rng.gen_range(0.0..PI);
        let (cp, sp) = (phi.cos(), phi.sin());
        let colour = rand_rgb(rng, 0.0, 1.0);
        let opacity = rng.gen_range(0.6..1.0);
        let reach = a.max(b) + 1.0;
        let (y0, y1) = ((sy - reach).floor().max(0.0) as usize, ((sy + reach).ceil() as usize).min(h));
        let (x0, x1) = ((sx - reach).floor().max(0.0) as usize, ((sx + reach).ceil() as usize).min(w));
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5 - sx, y as f64 + 0.5 - sy);
                let (lx, ly) = (px * cp + py * sp, -px * sp + py * cp);
                // approximate signed distance in pixels; one-pixel linear ramp
                let sd = if ellipse {
                    (((lx / a).powi(2) + (ly / b).powi(2)).sqrt() - 1.0) * a.min(b)
                } else {
                    (lx.abs() - a).max(ly.abs() - b)
                };
                let alpha = (0.5 - sd).clamp(0.0, 1.0) * opacity;
                if alpha > 0.0 {
                    for (c, &col) in colour.iter().enumerate() {
                        let p = &mut img[c * plane + y * w + x];
                        *p = *p * (1.0 - alpha) + col * alpha;
                    }
                }
            }
        }
    }
    Tensor::new(&[3, h, w], img).expect("buffer sized to image")
}

fn load_scene(rng: &mut impl Rng, dir: &Path, [h, w]: [usize; 2], idx: u64) -> Result<Tensor<f64>> {
    let missing = || Error::MissingImageDir(dir.to_path_buf());
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|_| missing())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    if files.is_empty() {
        return Err(missing());
    }
    files.sort();
    let src: Tensor<f64> = png_read(&files[idx as usize % files.len()])?;
    let (sh, sw) = (src.shape()[1], src.shape()[2]);
    if sh < h || sw < w {
        return Err(Error::ImageTooSmall {
            h: sh,
            w: sw,
            need_h: h,
            need_w: w,
        });
    }
    let (oy, ox) = (rng.gen_range(0..=sh - h), rng.gen_range(0..=sw - w));
    let d = src.data();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, y, x) = (i / (h * w), i / w % h, i % w);
        d[(c * sh + oy + y) * sw + ox + x]
    }))
}

/// One sampled snow particle.
#[derive(Clone, Copy, Debug)]
pub enum Particle {
    /// Rotated ellipse with semi-axes `a ≥ b`.
    Flake { x: f64, y: f64, a: f64, b: f64, angle: f64 },
    /// Capsule around a segment of half-length `half_len`.
    Streak {
        x: f64,
        y: f64,
        half_len: f64,
        half_width: f64,
        angle: f64,
    },
}

impl Particle {
    fn sample(rng: &mut impl Rng, cfg: &SynthConfig) -> Self {
        let [h, w] = cfg.image_size;
        let [s0, s1] = cfg.particle_scale_range;
        let (x, y) = (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64));
        let r = if s1 > s0 {
            s0 * (s1 / s0).powf(rng.gen::<f64>())
        } else {
            s0
        };
        if rng.gen_bool(cfg.streak_probability) {
            let jitter = rng.gen_range(-STREAK_JITTER_DEG..=STREAK_JITTER_DEG);
            Particle::Streak {
                x,
                y,
                half_len: 2.5 * r,
                half_width: (0.2 * r).max(0.5),
                angle: (cfg.wind_angle_deg + jitter).to_radians(),
            }
        } else {
            Particle::Flake {
                x,
                y,
                a: r,
                b: r * rng.gen_range(0.5..=1.0),
                angle: rng.gen_range(0.0..PI),
            }
        }
    }

    fn centre(&self) -> (f64, f64) {
        match *self {
            Particle::Flake { x, y, .. } | Particle::Streak { x, y, .. } => (x, y),
        }
    }

    fn reach(&self) -> f64 {
        match *self {
            Particle::Flake { a, .. } => a,
            Particle::Streak {
                half_len,
                half_width,
                ..
            } => half_len + half_width,
        }
    }

    /// Whether the point `(px, py)` lies inside the particle.
    pub fn contains(&self, px: f64, py: f64) -> bool {
        match *self {
            Particle::Flake { x, y, a, b, angle } => {
                let (dx, dy) = (px - x, py - y);
                let (c, s) = (angle.cos(), angle.sin());
                let (lx, ly) = (dx * c + dy * s, -dx * s + dy * c);
                (lx / a).powi(2) + (ly / b).powi(2) <= 1.0
            }
            Particle::Streak {
                x,
                y,
                half_len,
                half_width,
                angle,
            } => {
                let (dx, dy) = (px - x, py - y);
                let (c, s) = (angle.cos(), angle.sin());
                let along = (dx * c + dy * s).clamp(-half_len, half_len);
                let (ex, ey) = (dx - along * c, dy - along * s);
                ex * ex + ey * ey <= half_width * half_width
            }
        }
    }

    fn stamp(&self, mask: &mut [f64], h: usize, w: usize) {
        let (cx, cy) = self.centre();
        let reach = self.reach() + 1.0;
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil().max(0.0) as usize).min(h);
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil().max(0.0) as usize).min(w);
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    mask[y * w + x] = 1.0;
                }
            }
        }
    }
}

/// The particles that [`gen_snow_mask`] stamps for sample `idx`.
pub fn sample_particles(cfg: &SynthConfig, idx: u64) -> Vec<Particle> {
    let mut rng = stream_rng(cfg.seed, idx, Stream::Mask);
    particles_from(&mut rng, cfg)
}

fn particles_from(rng: &mut impl Rng, cfg: &SynthConfig) -> Vec<Particle> {
    let [c0, c1] = cfg.particle_count_range;
    let n = rng.gen_range(c0..=c1);
    (0..n).map(|_| Particle::sample(rng, cfg)).collect()
}

/// Snow location mask `R` `[1,H,W]` (exactly 0 or 1), tint `Z` `[3,H,W]` in
/// `[0.5,1]` and snow colour `C` `[3,H,W]` in `[0.8,1]`.
pub fn gen_snow_mask(
    cfg: &SynthConfig,
    idx: u64,
) -> Result<(Tensor<f64>, Tensor<f64>, Tensor<f64>)> {
    cfg.validate()?;
    let [h, w] = cfg.image_size;
    let mut rng = stream_rng(cfg.seed, idx, Stream::Mask);
    let mut r = vec![0.0; h * w];
    for p in particles_from(&mut rng, cfg) {
        p.stamp(&mut r, h, w);
    }
    let side = h.max(w) as f64;
    let mut z = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        z.extend(value_noise(&mut rng, h, w, side / 4.0).iter().map(|v| 0.5 + 0.5 * v));
    }
    let shared = value_noise(&mut rng, h, w, side / 8.0);
    let mut c = Vec::with_capacity(3 * h * w);
    for _ in 0..3 {
        let own = value_noise(&mut rng, h, w, side / 8.0);
        c.extend(
            shared
                .iter()
                .zip(&own)
                .map(|(s, o)| 0.8 + 0.2 * (0.7 * s + 0.3 * o)),
        );
    }
    Ok((
        Tensor::new(&[1, h, w], r)?,
        Tensor::new(&[3, h, w], z)?,
        Tensor::new(&[3, h, w], c)?,
    ))
}

/// Transmission `T` `[1,H,W]` in `[t_min,1]` and atmospheric light `A` `[3,1,1]` in `[0.6,1]`.
pub fn gen_transmission(cfg: &SynthConfig, idx: u64) -> Result<(Tensor<f64>, Tensor<f64>)> {
    cfg.validate()?;
    let [h, w] = cfg.image_size;
    let mut rng = stream_rng(cfg.seed, idx, Stream::Transmission);
    let field = value_noise(&mut rng, h, w, 2.0 * cfg.blur_radius());
    let t = field
        .iter()
        .map(|v| cfg.t_min + (1.0 - cfg.t_min) * v)
        .collect();
    let a = (0..3).map(|_| rng.gen_range(0.6..=1.0)).collect();
    Ok((Tensor::new(&[1, h, w], t)?, Tensor::new(&[3, 1, 1], a)?))
}

/// Composes `(K, I)` from the scene components, clipped to `[0,1]`.
///
/// `J, Z, C` are `[3,H,W]`, `R, T` are `[1,H,W]` and `A` is `[3,1,1]`.
pub fn compose_snowy<T: Scalar>(
    j: &Tensor<T>,
    r: &Tensor<T>,
    z: &Tensor<T>,
    c: &Tensor<T>,
    t: &Tensor<T>,
    a: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let [3, h, w] = j.shape()[..] else {
        return Err(TensorError::ShapeMismatch {
            op: "compose_snowy",
            lhs: j.shape().to_vec(),
            rhs: vec![3],
        }
        .into());
    };
    for (got, want) in [
        (r.shape(), [1, h, w]),
        (z.shape(), [3, h, w]),
        (c.shape(), [3, h, w]),
        (t.shape(), [1, h, w]),
        (a.shape(), [3, 1, 1]),
    ] {
        if got != want {
            return Err(TensorError::ShapeMismatch {
                op: "compose_snowy",
                lhs: got.to_vec(),
                rhs: want.to_vec(),
            }
            .into());
        }
    }
    let plane = h * w;
    let mut k = Vec::with_capacity(3 * plane);
    let mut i = Vec::with_capacity(3 * plane);
    for ch in 0..3 {
        let av = a.data()[ch].as_f64();
        for p in 0..plane {
            let jv = j.data()[ch * plane + p].as_f64();
            let zr = z.data()[ch * plane + p].as_f64() * r.data()[p].as_f64();
            let kv = jv * (1.0 - zr) + c.data()[ch * plane + p].as_f64() * zr;
            let tv = t.data()[p].as_f64();
            let iv = kv * tv + av * (1.0 - tv);
            k.push(T::from_f64_lossy(kv.clamp(0.0, 1.0)));
            i.push(T::from_f64_lossy(iv.clamp(0.0, 1.0)));
        }
    }
    Ok((Tensor::new(&[3, h, w], k)?, Tensor::new(&[3, h, w], i)?))
}

#[derive(Clone, Debug)]
pub struct SceneSample {
    pub idx: u64,
    pub seed: u64,
    pub j: Tensor<f64>,
    pub r: Tensor<f64>,
    pub z: Tensor<f64>,
    pub c: Tensor<f64>,
    pub t: Tensor<f64>,
    pub a: Tensor<f64>,
    pub k: Tensor<f64>,
    pub i: Tensor<f64>,
}

pub fn generate(cfg: &SynthConfig, idx: u64) -> Result<SceneSample> {
    let j = gen_clean(cfg, idx)?;
    let (r, z, c) = gen_snow_mask(cfg, idx)?;
    let (t, a) = gen_transmission(cfg, idx)?;
    let (k, i) = compose_snowy(&j, &r, &z, &c, &t, &a)?;
    Ok(SceneSample {
        idx,
        seed: cfg.seed,
        j,
        r,
        z,
        c,
        t,
        a,
        k,
        i,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub config: SynthConfig,
    pub seed: u64,
    pub count: usize,
    pub config_sha256: String,
}

pub fn snow_name(idx: u64) -> String {
    format!("{idx:06}_snow.png")
}

pub fn gt_name(idx: u64) -> String {
    format!("{idx:06}_gt.png")
}

/// Writes each sample as a `_snow`/`_gt` PNG pair plus `manifest.json`.
pub fn dataset_write(cfg: &SynthConfig, samples: &[SceneSample], dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for s in samples {
        png_write(&s.i, &dir.join(snow_name(s.idx)))?;
        png_write(&s.j, &dir.join(gt_name(s.idx)))?;
    }
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        config: cfg.clone(),
        seed: cfg.seed,
        count: samples.len(),
        config_sha256: cfg.sha256(),
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

/// Generates samples `first..first+count` and writes them to `dir`.
pub fn synthesize_dataset(cfg: &SynthConfig, first: u64, count: usize, dir: &Path) -> Result<Manifest> {
    let samples = (first..first + count as u64)
        .map(|idx| generate(cfg, idx))
        .collect::<Result<Vec<_>>>()?;
    dataset_write(cfg, &samples, dir)
}

#[derive(Clone, Debug)]
pub struct Pair<T: Scalar> {
    pub name: String,
    pub snow: Tensor<T>,
    pub gt: Tensor<T>,
}

#[derive(Clone, Debug)]
pub struct Dataset<T: Scalar> {
    pub manifest: Manifest,
    pub pairs: Vec<Pair<T>>,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    if manifest.config.sha256() != manifest.config_sha256 {
        return Err(Error::ManifestMismatch(format!(
            "{}: recorded config hash {} does not match its config ({})",
            path.display(),
            manifest.config_sha256,
            manifest.config.sha256()
        )));
    }
    Ok(manifest)
}

/// Reads a dataset written by [`dataset_write`], optionally checking that it
/// was generated from `expected`.
pub fn dataset_read<T: Scalar>(dir: &Path, expected: Option<&SynthConfig>) -> Result<Dataset<T>> {
    let manifest = read_manifest(dir)?;
    if let Some(cfg) = expected {
        if cfg.sha256() != manifest.config_sha256 {
            return Err(Error::ManifestMismatch(format!(
                "{} was generated from a different config",
                dir.display()
            )));
        }
    }
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|n| n.strip_suffix("_snow.png"))
                .map(str::to_string)
        })
        .collect();
    stems.sort();
    if stems.len() != manifest.count {
        return Err(Error::ManifestMismatch(format!(
            "manifest lists {} samples but {} snowy images were found",
            manifest.count,
            stems.len()
        )));
    }
    let pairs = stems
        .into_iter()
        .map(|stem| {
            Ok(Pair {
                snow: png_read(&dir.join(format!("{stem}_snow.png")))?,
                gt: png_read(&dir.join(format!("{stem}_gt.png")))?,
                name: stem,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { manifest, pairs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig::default().with_size(32, 48)
    }

    #[test]
    fn value_noise_is_bounded() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let v = value_noise(&mut r, 17, 23, 5.0);
        assert_eq!(v.len(), 17 * 23);
        assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
    }

    #[test]
    fn streams_are_independent_of_each_other() {
        let cfg = small();
        let a = gen_transmission(&cfg, 4).unwrap().0;
        let _ = gen_snow_mask(&cfg, 9).unwrap();
        let b = gen_transmission(&cfg, 4).unwrap().0;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn streak_contains_its_centre_line() {
        let p = Particle::Streak {
            x: 10.0,
            y: 10.0,
            half_len: 5.0,
            half_width: 0.5,
            angle: 0.0,
        };
        assert!(p.contains(14.9, 10.0));
        assert!(!p.contains(10.0, 11.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = small();
        c.t_min = 0.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.particle_count_range = [5, 2];
        assert!(c.validate().is_err());
    }
}
