//! Two-mode synthetic image classification.
//!
//! Mode A ("bars") is a family of oriented line images that the texture
//! pretraining never sees; mode B ("textures") shares its generator with the
//! pretraining source task, so pretrained features transfer well to B and
//! poorly to A.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{AmfError, Result};
use crate::rng;

/// One labeled image with the sub-distribution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// `[C, H, W]`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub mode: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    pub classes_a: usize,
    pub classes_b: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub noise_a: f32,
    pub noise_b: f32,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            classes_a: 8,
            classes_b: 8,
            train_per_class: 40,
            val_per_class: 10,
            test_per_class: 10,
            height: 16,
            width: 16,
            channels: 1,
            noise_a: 0.15,
            noise_b: 0.30,
            seed: 0,
        }
    }
}

impl MixtureSpec {
    pub fn classes(&self) -> usize {
        self.classes_a + self.classes_b
    }

    pub fn per_class(&self) -> usize {
        self.train_per_class + self.val_per_class + self.test_per_class
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Mode owning a global class id.
    pub fn mode_of(&self, label: usize) -> u8 {
        u8::from(label >= self.classes_a)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(AmfError::config(format!("data.{key}"), why));
        if self.classes() < 2 {
            return bad("classes_a", "need at least two classes in total");
        }
        if self.classes() > usize::from(u16::MAX) {
            return bad("classes_b", "too many classes");
        }
        if self.train_per_class == 0 || self.val_per_class == 0 || self.test_per_class == 0 {
            return bad(
                "train_per_class",
                "every split needs at least one example per class",
            );
        }
        if self.height == 0
            || self.width == 0
            || !self.height.is_multiple_of(4)
            || !self.width.is_multiple_of(4)
        {
            return bad("image_size", "must be a positive multiple of 4");
        }
        if self.channels == 0 {
            return bad("channels", "must be positive");
        }
        for (key, v) in [("noise_a", self.noise_a), ("noise_b", self.noise_b)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, "must be finite and non-negative");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDataset {
    pub spec: MixtureSpec,
    pub train: Vec<Example>,
    pub val: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(AmfError::usage(format!("unknown split {other:?}"))),
        }
    }
}

impl MixtureDataset {
    pub fn split(&self, s: Split) -> &[Example] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Anti-aliased bar through the image center at angle `theta`: intensity
/// `max(0, 1 − dist)` where `dist` is the distance from the pixel center to
/// the line, which gives a bar two pixels wide.
pub fn render_bar(height: usize, width: usize, theta: f64) -> Vec<f64> {
    let (cy, cx) = (height as f64 / 2.0, width as f64 / 2.0);
    let (s, c) = theta.sin_cos();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let dist = (-px * s + py * c).abs();
            out.push((1.0 - dist).max(0.0));
        }
    }
    out
}

/// Checkerboard-like grating `sign(sin(2πx/p)·sin(2πy/p))` over pixel
/// centers, mapped to 0.75 (positive) and 0.25 (otherwise).
pub fn render_grating(height: usize, width: usize, period: f64) -> Vec<f64> {
    let k = 2.0 * PI / period;
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let sy = (k * (y as f64 + 0.5)).sin();
        for x in 0..width {
            let v = (k * (x as f64 + 0.5)).sin() * sy;
            out.push(if v > 0.0 { 0.75 } else { 0.25 });
        }
    }
    out
}

#[derive(Clone, Copy)]
enum Pattern {
    Bar(f64),
    Grating(f64),
}

const TARGET_TAG: u64 = 0xA;
const SOURCE_TAG: u64 = 0x5;

fn render_example(
    spec: &MixtureSpec,
    pattern: Pattern,
    noise: f32,
    stream: [u64; 4],
) -> Result<Tensor<f32>> {
    let base = match pattern {
        Pattern::Bar(theta) => render_bar(spec.height, spec.width, theta),
        Pattern::Grating(p) => render_grating(spec.height, spec.width, p),
    };
    let mut r = rng::derived(spec.seed, &stream);
    let normal = Normal::new(0.0, f64::from(noise))
        .map_err(|e| AmfError::config("data.noise", e.to_string()))?;
    let mut data = Vec::with_capacity(spec.pixels());
    for _ in 0..spec.channels {
        for &v in &base {
            let n = if noise > 0.0 {
                normal.sample(&mut r)
            } else {
                0.0
            };
            data.push((v + n).clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::from_vec(&[spec.channels, spec.height, spec.width], data)
}

/// Splits per-class generation indices `0..per_class` into consecutive
/// train, val and test ranges.
fn assign(
    ds: &mut MixtureDataset,
    label: usize,
    mode: u8,
    mut make: impl FnMut(usize) -> Result<Tensor<f32>>,
) -> Result<()> {
    let s = ds.spec;
    for idx in 0..s.per_class() {
        let ex = Example {
            image: make(idx)?,
            label,
            mode,
        };
        if idx < s.train_per_class {
            ds.train.push(ex);
        } else if idx < s.train_per_class + s.val_per_class {
            ds.val.push(ex);
        } else {
            ds.test.push(ex);
        }
    }
    Ok(())
}

/// Mode A class `c` is a bar at angle `π·c/K_A` with `noise_a` pixel noise;
/// mode B class `c` is a grating with period `2 + c` and `noise_b` noise.
/// Global labels are `[0, K_A)` for A and `[K_A, K_A + K_B)` for B.
pub fn gen_mixture(spec: &MixtureSpec) -> Result<MixtureDataset> {
    spec.validate()?;
    if spec.classes_a == 0 || spec.classes_b == 0 {
        return Err(AmfError::config(
            "data.classes_a",
            "a mixture needs classes in both modes",
        ));
    }
    let mut ds = MixtureDataset {
        spec: *spec,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..spec.classes_a {
        let theta = PI * c as f64 / spec.classes_a as f64;
        assign(&mut ds, c, 0, |i| {
            render_example(
                spec,
                Pattern::Bar(theta),
                spec.noise_a,
                [TARGET_TAG, 0, c as u64, i as u64],
            )
        })?;
    }
    for c in 0..spec.classes_b {
        let period = (2 + c) as f64;
        assign(&mut ds, spec.classes_a + c, 1, |i| {
            render_example(
                spec,
                Pattern::Grating(period),
                spec.noise_b,
                [TARGET_TAG, 1, c as u64, i as u64],
            )
        })?;
    }
    Ok(ds)
}

/// First grating period of the pretraining source task.
pub const SOURCE_FIRST_PERIOD: usize = 10;

/// Pretraining task from the texture family with periods
/// `10, 11, …, 10 + classes − 1`, disjoint from the target's `2..2+K_B`
/// as long as `K_B ≤ 8`. Uses the target's image size, split sizes and
/// `noise_b`; all examples carry mode 1.
pub fn gen_source_task(spec: &MixtureSpec, classes: usize, seed: u64) -> Result<MixtureDataset> {
    let src = MixtureSpec {
        classes_a: 0,
        classes_b: classes,
        seed,
        ..*spec
    };
    src.validate()?;
    let mut ds = MixtureDataset {
        spec: src,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for c in 0..classes {
        let period = (SOURCE_FIRST_PERIOD + c) as f64;
        assign(&mut ds, c, 1, |i| {
            render_example(
                &src,
                Pattern::Grating(period),
                src.noise_b,
                [SOURCE_TAG, 1, c as u64, i as u64],
            )
        })?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn default_counts_are_exact() {
        let ds = gen_mixture(&MixtureSpec::default()).unwrap();
        assert_eq!(ds.len(), 960);
        for (split, per) in [(&ds.train, 40), (&ds.val, 10), (&ds.test, 10)] {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for ex in split {
                *counts.entry(ex.label).or_default() += 1;
                assert_eq!(ex.mode, ds.spec.mode_of(ex.label));
                assert!(ex.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            assert_eq!(counts.len(), 16);
            assert!(counts.values().all(|&c| c == per));
        }
    }

    #[test]
    fn noiseless_images_repeat_within_class() {
        let spec = MixtureSpec {
            noise_a: 0.0,
            noise_b: 0.0,
            ..MixtureSpec::default()
        };
        let ds = gen_mixture(&spec).unwrap();
        let same: Vec<_> = ds.train.iter().filter(|e| e.label == 3).collect();
        assert_eq!(same[0].image, same[1].image);
        let other: Vec<_> = ds.train.iter().filter(|e| e.label == 11).collect();
        assert_eq!(other[0].image, other[5].image);
        assert_ne!(same[0].image, other[0].image);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = gen_mixture(&MixtureSpec::default()).unwrap();
        let b = gen_mixture(&MixtureSpec::default()).unwrap();
        assert_eq!(a, b);
        let c = gen_mixture(&MixtureSpec {
            seed: 1,
            ..MixtureSpec::default()
        })
        .unwrap();
        assert_ne!(a.train[0].image, c.train[0].image);
    }

    #[test]
    fn bar_is_two_pixels_wide_through_center() {
        let img = render_bar(16, 16, 0.0);
        // horizontal line at y = 8 passes between rows 7 and 8
        assert_eq!(img[7 * 16 + 3], 0.5);
        assert_eq!(img[8 * 16 + 3], 0.5);
        assert_eq!(img[6 * 16 + 3], 0.0);
    }

    #[test]
    fn source_task_counts_and_periods() {
        let spec = MixtureSpec::default();
        let src = gen_source_task(&spec, 6, 3).unwrap();
        assert_eq!(src.len(), 6 * 60);
        assert!(src.train.iter().all(|e| e.label < 6 && e.mode == 1));
        let target_periods: Vec<_> = (0..spec.classes_b).map(|c| 2 + c).collect();
        assert!((0..6).all(|c| !target_periods.contains(&(SOURCE_FIRST_PERIOD + c))));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = MixtureSpec {
            height: 10,
            ..MixtureSpec::default()
        };
        assert!(matches!(gen_mixture(&bad), Err(AmfError::Config { .. })));
        let one_mode = MixtureSpec {
            classes_b: 0,
            ..MixtureSpec::default()
        };
        assert!(gen_mixture(&one_mode).is_err());
    }
}
