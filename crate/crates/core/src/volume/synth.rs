//! Synthetic volumetric benchmark with a planted, class-discriminative
//! region and a context record that hints where the region is without
//! carrying any information about the class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::context::ContextRecord;
use super::volume::Volume3D;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub volume_side: usize,
    pub glimpse_side: usize,
    /// Number of 2x pooling stages the glimpse side must survive.
    pub pool_stages: u32,
    /// Latent center of the signal region, normalized coordinates.
    pub signal_center: [f64; 3],
    /// Per-subject uniform jitter of the center, normalized units per axis.
    pub center_jitter: f64,
    /// Sphere radius (voxels) for label 0.
    pub radius_class0: f64,
    /// Sphere radius (voxels) for label 1.
    pub radius_class1: f64,
    pub signal_intensity: f64,
    pub distractor_count: usize,
    pub distractor_sigma: [f64; 2],
    pub distractor_intensity: f64,
    pub background: f64,
    pub noise_std: f64,
    /// Probability that the hint field encodes the octant of the center jitter.
    pub context_hint_strength: f64,
    /// Per-field probability of a missing context value.
    pub context_missing_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            volume_side: 64,
            glimpse_side: 16,
            pool_stages: 4,
            signal_center: [0.35, -0.35, 0.35],
            center_jitter: 0.1,
            radius_class0: 6.0,
            radius_class1: 3.5,
            signal_intensity: 1.0,
            distractor_count: 4,
            distractor_sigma: [1.5, 3.0],
            distractor_intensity: 0.6,
            background: 0.2,
            noise_std: 0.1,
            context_hint_strength: 0.8,
            context_missing_rate: 0.05,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synthetic: {m}")));
        if self.glimpse_side == 0 || self.glimpse_side > self.volume_side {
            return fail(format!("glimpse side {} must be in 1..={}", self.glimpse_side, self.volume_side));
        }
        let factor = 1usize << self.pool_stages;
        if !self.glimpse_side.is_multiple_of(factor) {
            return fail(format!("glimpse side {} not divisible by 2^{}", self.glimpse_side, self.pool_stages));
        }
        if !(0.0..=1.0).contains(&self.context_hint_strength) {
            return fail("context_hint_strength must be in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.context_missing_rate) {
            return fail("context_missing_rate must be in [0, 1)".into());
        }
        if self.radius_class0 <= 0.0 || self.radius_class1 <= 0.0 || self.noise_std < 0.0 || self.center_jitter < 0.0 {
            return fail("radii must be positive, noise and jitter non-negative".into());
        }
        if !(self.signal_intensity > 0.0) {
            return fail(format!("signal_intensity must be positive, got {}", self.signal_intensity));
        }
        if self.distractor_sigma[0] <= 0.0 || self.distractor_sigma[1] < self.distractor_sigma[0] {
            return fail("distractor_sigma must be an increasing positive range".into());
        }
        let half = (self.volume_side - 1) as f64 / 2.0;
        let r = self.radius_class0.max(self.radius_class1);
        for (axis, &c) in self.signal_center.iter().enumerate() {
            let lo = (c - self.center_jitter + 1.0) * half - r;
            let hi = (c + self.center_jitter + 1.0) * half + r;
            if lo < 0.0 || hi > (self.volume_side - 1) as f64 {
                return fail(format!("signal region leaves the volume along axis {axis}"));
            }
        }
        Ok(())
    }

    pub fn radius_for(&self, label: u8) -> f64 {
        if label == 0 {
            self.radius_class0
        } else {
            self.radius_class1
        }
    }
}

/// One generated (or loaded) training example.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCase {
    pub case_id: String,
    pub volume: Volume3D,
    pub context: ContextRecord,
    pub label: u8,
    /// Planted signal center in voxel coordinates, when known.
    pub signal_center: Option<[f64; 3]>,
}

impl LabeledCase {
    pub fn subject_id(&self) -> &str {
        &self.volume.subject_id
    }
}

/// Octant code of a displacement: bit k set when axis k is non-negative.
pub fn octant(offset: [f64; 3]) -> u8 {
    (0..3).map(|k| u8::from(offset[k] >= 0.0) << k).sum()
}

/// SplitMix64 finalizer over two words; used to derive independent seeds.
pub fn derive_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Subject {
    jitter: [f64; 3],
    context: ContextRecord,
}

/// Subjects `2k` and `2k + 1` form a matched pair: they share every context
/// field (including missingness) but have opposite labels in
/// [`generate_dataset`]. Jitter magnitudes are drawn per subject; jitter
/// signs are shared only when the pair's race field carries the hint.
fn draw_subject(cfg: &SyntheticConfig, subject_seed: u64) -> Subject {
    let mut pair = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, subject_seed / 2));
    let mut own = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, subject_seed), 0));

    let normal = |rng: &mut ChaCha8Rng, m: f64, s: f64| Normal::new(m, s).unwrap().sample(rng);
    let pick = |rng: &mut ChaCha8Rng, weights: &[f64]| -> u8 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i as u8;
            }
        }
        (weights.len() - 1) as u8
    };

    let mut context = ContextRecord {
        age: Some(normal(&mut pair, 73.0, 7.0)),
        gender: Some(pick(&mut pair, &[0.5, 0.5])),
        education: Some(normal(&mut pair, 15.5, 2.8)),
        cdrsb: Some(normal(&mut pair, 2.0, 1.5)),
        adas11: Some(normal(&mut pair, 12.0, 5.0)),
        adas13: Some(normal(&mut pair, 18.0, 7.0)),
        ravlt: Some(normal(&mut pair, 35.0, 10.0)),
        apoe4: Some(pick(&mut pair, &[0.5, 0.35, 0.15])),
        ethnicity: Some(pick(&mut pair, &[0.9, 0.08, 0.02])),
        race: None,
    };
    let hinted = pair.random::<f64>() < cfg.context_hint_strength;
    let random_race = pair.random_range(0..8u8);
    let shared_octant = pair.random_range(0..8u8);
    let own_octant = own.random_range(0..8u8);
    let signs = if hinted { shared_octant } else { own_octant };
    let jitter = [0, 1, 2].map(|k| {
        let m = if cfg.center_jitter > 0.0 { own.random_range(0.0..=cfg.center_jitter) } else { 0.0 };
        if signs >> k & 1 == 1 {
            m
        } else {
            -m
        }
    });
    context.race = Some(if hinted { octant(jitter) } else { random_race });

    for f in super::context::Field::ALL {
        if pair.random::<f64>() < cfg.context_missing_rate {
            context.clear(f);
        }
    }
    if context.present_fields().is_empty() {
        context.age = Some(73.0);
    }
    Subject { jitter, context }
}

/// Voxel-space center of the planted region for a subject.
pub fn signal_center_voxels(cfg: &SyntheticConfig, jitter: [f64; 3]) -> [f64; 3] {
    let half = (cfg.volume_side - 1) as f64 / 2.0;
    [0, 1, 2].map(|k| (cfg.signal_center[k] + jitter[k] + 1.0) * half)
}

/// Generates scan `scan_index` of subject `subject_seed` with the given label.
/// Raw intensities are clipped to `[background - 3 noise, background +
/// intensity]` before min-max normalization.
pub fn generate_scan(cfg: &SyntheticConfig, label: u8, subject_seed: u64, scan_index: u64) -> LabeledCase {
    let subject = draw_subject(cfg, subject_seed);
    let center = signal_center_voxels(cfg, subject.jitter);
    let n = cfg.volume_side;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(cfg.seed, subject_seed), 1 + scan_index));

    let mut field = vec![0.0f64; n * n * n];
    for v in field.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = cfg.background + cfg.noise_std * z;
    }

    let max_r = cfg.radius_class0.max(cfg.radius_class1);
    let mut placed = 0;
    let mut attempts = 0;
    while placed < cfg.distractor_count && attempts < 1000 {
        attempts += 1;
        let sigma = rng.random_range(cfg.distractor_sigma[0]..=cfg.distractor_sigma[1]);
        let c = [0; 3].map(|_| rng.random_range(0.0..(n - 1) as f64));
        let d2: f64 = (0..3).map(|k| (c[k] - center[k]).powi(2)).sum();
        if d2.sqrt() < max_r + 3.0 * sigma + 2.0 {
            continue;
        }
        add_blob(&mut field, n, c, 3.0 * sigma, |r2| cfg.distractor_intensity * (-r2 / (2.0 * sigma * sigma)).exp());
        placed += 1;
    }

    let radius = cfg.radius_for(label);
    add_blob(&mut field, n, center, radius, |r2| if r2 <= radius * radius { cfg.signal_intensity } else { 0.0 });

    let (lo, hi) = (cfg.background - 3.0 * cfg.noise_std, cfg.background + cfg.signal_intensity);
    for v in field.iter_mut() {
        *v = v.clamp(lo, hi);
    }

    let voxels = field.into_iter().map(|v| v as f32).collect();
    let mut volume = Volume3D::new([n, n, n], voxels).expect("generated volume is finite");
    volume.normalize_min_max();
    let subject_id = format!("sub-{subject_seed:04}");
    let scan_id = format!("scan-{scan_index}");
    LabeledCase {
        case_id: format!("{subject_id}_{scan_id}"),
        volume: volume.with_ids(subject_id, scan_id),
        context: subject.context,
        label,
        signal_center: Some(center),
    }
}

fn add_blob(field: &mut [f64], n: usize, c: [f64; 3], reach: f64, profile: impl Fn(f64) -> f64) {
    let lo = |k: usize| (c[k] - reach).floor().max(0.0) as usize;
    let hi = |k: usize| ((c[k] + reach).ceil() as usize).min(n - 1);
    for z in lo(0)..=hi(0) {
        for y in lo(1)..=hi(1) {
            for x in lo(2)..=hi(2) {
                let r2 = (z as f64 - c[0]).powi(2) + (y as f64 - c[1]).powi(2) + (x as f64 - c[2]).powi(2);
                field[(z * n + y) * n + x] += profile(r2);
            }
        }
    }
}

/// Single-scan case for subject `case_seed`.
pub fn generate_case(cfg: &SyntheticConfig, label: u8, case_seed: u64) -> LabeledCase {
    generate_scan(cfg, label, case_seed, 0)
}

/// `n_per_class` subjects of each label (alternating), each with
/// `scans_per_subject` scans.
pub fn generate_dataset(cfg: &SyntheticConfig, n_per_class: usize, scans_per_subject: usize) -> Vec<LabeledCase> {
    let mut out = Vec::with_capacity(2 * n_per_class * scans_per_subject);
    for subject in 0..2 * n_per_class as u64 {
        let label = (subject % 2) as u8;
        for scan in 0..scans_per_subject as u64 {
            out.push(generate_scan(cfg, label, subject, scan));
        }
    }
    out
}
