//! Seeded ellipse phantoms with smooth multi-coil sensitivity profiles.
//!
//! Coordinates are normalized so the image spans `[-1, 1]` on both axes
//! with `y` pointing up. Each pixel is rasterized with 4x4 supersampling.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::{fft2c_coils, sense_expand, CoilStack, ComplexImage, RealImage, SensitivityMaps};

const SUPERSAMPLE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Static head-like ellipse set.
    SheppLogan,
    /// Short-axis heart analog whose blood pools contract across frames.
    #[default]
    ShortAxis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub kind: PhantomKind,
    #[serde(default = "default_frames")]
    pub frames: usize,
}

fn default_coils() -> usize {
    10
}

fn default_frames() -> usize {
    1
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, kind: PhantomKind, seed: u64) -> Self {
        Self {
            height,
            width,
            coils: default_coils(),
            seed,
            kind,
            frames: default_frames(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 {
            return Err(Error::invalid(format!(
                "phantom must be at least 2x2, got {}x{}",
                self.height, self.width
            )));
        }
        if self.coils == 0 {
            return Err(Error::invalid("phantom needs at least one coil"));
        }
        if self.frames == 0 {
            return Err(Error::invalid("phantom needs at least one frame"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// Magnitude images in `[0, 1]`, one per frame.
    pub frames: Vec<RealImage>,
    /// Ground-truth maps with unit RSS at every pixel.
    pub maps: SensitivityMaps,
    /// Pixels inside the outermost ellipse of frame 0.
    pub support: Vec<bool>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }

    fn jittered(mut self, rng: &mut ChaCha8Rng) -> Self {
        self.cx += rng.gen_range(-0.02..0.02);
        self.cy += rng.gen_range(-0.02..0.02);
        self.a *= rng.gen_range(0.96..1.04);
        self.b *= rng.gen_range(0.96..1.04);
        self
    }

    fn scaled(mut self, s: f64) -> Self {
        self.a *= s;
        self.b *= s;
        self
    }
}

/// How ellipses combine into a pixel value.
#[derive(Clone, Copy)]
enum Compose {
    /// Values add, as in the classic head phantom.
    Add,
    /// Later ellipses overwrite earlier ones.
    Paint,
}

fn e(cx: f64, cy: f64, a: f64, b: f64, deg: f64, value: f64) -> Ellipse {
    Ellipse {
        cx,
        cy,
        a,
        b,
        theta: deg.to_radians(),
        value,
    }
}

fn shepp_logan() -> Vec<Ellipse> {
    vec![
        e(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
        e(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
        e(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
        e(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
        e(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
        e(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
        e(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
        e(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
        e(0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
        e(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
    ]
}

/// Indices 3 and 5 are the blood pools; they are scaled per frame.
fn short_axis() -> Vec<Ellipse> {
    vec![
        e(0.0, 0.0, 0.88, 0.68, 0.0, 0.25),
        e(-0.45, -0.2, 0.3, 0.32, 20.0, 0.4),
        e(0.18, 0.08, 0.36, 0.36, 0.0, 0.6),
        e(0.18, 0.08, 0.22, 0.22, 0.0, 0.95),
        e(-0.22, 0.14, 0.24, 0.32, -25.0, 0.7),
        e(-0.22, 0.14, 0.16, 0.24, -25.0, 0.85),
        e(0.6, -0.3, 0.08, 0.08, 0.0, 0.8),
        e(0.2, 0.02, 0.04, 0.04, 0.0, 0.55),
    ]
}

fn rasterize(h: usize, w: usize, shapes: &[Ellipse], compose: Compose) -> RealImage {
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    RealImage::from_fn(h, w, |r, c| {
        let mut acc = 0.0;
        for sr in 0..SUPERSAMPLE {
            for sc in 0..SUPERSAMPLE {
                let x = ((c as f64 + (sc as f64 + 0.5) * step) - w as f64 / 2.0) / (w as f64 / 2.0);
                let y = (h as f64 / 2.0 - (r as f64 + (sr as f64 + 0.5) * step)) / (h as f64 / 2.0);
                let mut v = 0.0;
                for s in shapes.iter().filter(|s| s.contains(x, y)) {
                    v = match compose {
                        Compose::Add => v + s.value,
                        Compose::Paint => s.value,
                    };
                }
                acc += v;
            }
        }
        (acc / norm).clamp(0.0, 1.0)
    })
}

/// Gaussian coil profiles centred on a ring around the object, each with a
/// seeded phase offset and a gentle linear phase ramp.
fn coil_maps(h: usize, w: usize, coils: usize, rng: &mut ChaCha8Rng) -> SensitivityMaps {
    let sigma = 0.9;
    let mut data = Vec::with_capacity(coils * h * w);
    for c in 0..coils {
        let angle = 2.0 * PI * c as f64 / coils as f64 + rng.gen_range(-0.1..0.1);
        let radius = if coils == 1 { 0.0 } else { 1.2 };
        let (px, py) = (radius * angle.cos(), radius * angle.sin());
        let phase0 = rng.gen_range(-PI..PI);
        let (kx, ky) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        for r in 0..h {
            for col in 0..w {
                let x = (col as f64 + 0.5 - w as f64 / 2.0) / (w as f64 / 2.0);
                let y = (h as f64 / 2.0 - r as f64 - 0.5) / (h as f64 / 2.0);
                let d2 = (x - px).powi(2) + (y - py).powi(2);
                let mag = (-d2 / (2.0 * sigma * sigma)).exp();
                data.push(Complex64::from_polar(mag, phase0 + kx * x + ky * y));
            }
        }
    }
    SensitivityMaps::normalize(CoilStack::new(coils, h, w, data).expect("finite profiles"))
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (base, compose) = match spec.kind {
        PhantomKind::SheppLogan => (shepp_logan(), Compose::Add),
        PhantomKind::ShortAxis => (short_axis(), Compose::Paint),
    };
    let shapes: Vec<Ellipse> = base.into_iter().map(|s| s.jittered(&mut rng)).collect();

    let frames = (0..spec.frames)
        .map(|f| {
            let mut shapes = shapes.clone();
            if spec.kind == PhantomKind::ShortAxis {
                // Contraction peaks half way through the cycle.
                let phase = f as f64 / spec.frames as f64;
                let s = 1.0 - 0.08 * (1.0 - (2.0 * PI * phase).cos()) / 2.0;
                shapes[3] = shapes[3].scaled(s);
                shapes[5] = shapes[5].scaled(s);
            }
            rasterize(h, w, &shapes, compose)
        })
        .collect::<Vec<_>>();

    let outer = rasterize(h, w, &shapes[..1], Compose::Paint);
    let support = outer.data().iter().map(|&v| v > 0.0).collect();
    let maps = coil_maps(h, w, spec.coils, &mut rng);
    Ok(Phantom { frames, maps, support })
}

/// Forward model `k_c = fft2c(S_c * img)`.
pub fn simulate_kspace(img: &ComplexImage, maps: &SensitivityMaps) -> Result<CoilStack> {
    fft2c_coils(&sense_expand(img, maps)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::{ifft2c_coils, rss_combine};

    fn spec(kind: PhantomKind) -> PhantomSpec {
        PhantomSpec {
            height: 48,
            width: 40,
            coils: 4,
            seed: 7,
            kind,
            frames: 1,
        }
    }

    #[test]
    fn images_in_unit_range_and_deterministic() {
        for kind in [PhantomKind::SheppLogan, PhantomKind::ShortAxis] {
            let a = make_phantom(&spec(kind)).unwrap();
            let b = make_phantom(&spec(kind)).unwrap();
            assert_eq!(a, b);
            let img = &a.frames[0];
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert!(img.max() > 0.5);
        }
    }

    #[test]
    fn seeds_change_geometry() {
        let a = make_phantom(&spec(PhantomKind::ShortAxis)).unwrap();
        let mut s = spec(PhantomKind::ShortAxis);
        s.seed = 8;
        let b = make_phantom(&s).unwrap();
        assert_ne!(a.frames[0], b.frames[0]);
    }

    #[test]
    fn single_coil_map_is_unit_magnitude() {
        let mut s = spec(PhantomKind::SheppLogan);
        s.coils = 1;
        let p = make_phantom(&s).unwrap();
        for z in p.maps.coil(0) {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn maps_have_unit_rss() {
        let p = make_phantom(&spec(PhantomKind::ShortAxis)).unwrap();
        for &v in p.maps.rss_sqr().data() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamic_frames_differ_slightly() {
        let mut s = spec(PhantomKind::ShortAxis);
        s.frames = 2;
        s.height = 64;
        s.width = 64;
        let p = make_phantom(&s).unwrap();
        let (f0, f1) = (&p.frames[0], &p.frames[1]);
        let diff: f64 = f0.data().iter().zip(f1.data()).map(|(a, b)| (a - b).abs()).sum::<f64>() / f0.len() as f64;
        assert!(diff > 0.0);
        assert!(diff < 0.1 * f0.mean(), "diff {diff} mean {}", f0.mean());
    }

    #[test]
    fn simulate_round_trip_and_energy() {
        let p = make_phantom(&spec(PhantomKind::ShortAxis)).unwrap();
        let img = ComplexImage::from_real(&p.frames[0]);
        let k = simulate_kspace(&img, &p.maps).unwrap();
        let back = rss_combine(&ifft2c_coils(&k).unwrap());
        for (a, b) in back.data().iter().zip(p.frames[0].data()) {
            assert!((a - b).abs() < 1e-8);
        }
        let coil_energy = sense_expand(&img, &p.maps).unwrap().norm_sqr();
        assert!((k.norm_sqr() - coil_energy).abs() < 1e-9 * coil_energy);

        let zero = simulate_kspace(&ComplexImage::zeros(48, 40), &p.maps).unwrap();
        assert!(zero.data().iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = spec(PhantomKind::ShortAxis);
        s.frames = 0;
        assert!(make_phantom(&s).is_err());
        s.frames = 1;
        s.coils = 0;
        assert!(make_phantom(&s).is_err());
    }
}
