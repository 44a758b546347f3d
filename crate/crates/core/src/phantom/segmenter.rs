//! Parameterised black-box segmenters.
//!
//! Each segmenter observes the image and the anatomy it was acquired from
//! and returns a label map whose Dice overlap with the anatomy is set by a
//! corruption strength. The strength grows with the intensity offset, noise
//! excess and shape atypicality the segmenter measures in the image, scaled
//! by its family's sensitivities.

use super::{canonical_labels, CaseRecord, GridConfig, PhantomError, Result};
use crate::grid::{index, LabelMap, Volume, NUM_STRUCTURES};
use crate::stats::dsc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Family {
    /// Template fitting; sensitive to contrast and atypical anatomy.
    Atlas,
    /// Intensity-band classification; sensitive to noise, leaks speckle.
    Threshold,
    /// Domain-independent small jitter.
    Robust,
}

impl Family {
    /// Share of false negatives taken from the structure surface.
    fn erosion_share(self) -> f64 {
        match self {
            Family::Atlas => 0.7,
            Family::Threshold => 0.2,
            Family::Robust => 0.5,
        }
    }

    /// False positives per false negative.
    fn fp_ratio(self) -> f64 {
        match self {
            Family::Atlas => 0.0,
            Family::Threshold => 0.5,
            Family::Robust => 0.2,
        }
    }

    /// False positives scatter over the background rather than hugging the surface.
    fn speckle(self) -> bool {
        self == Family::Threshold
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmenterProfile {
    pub id: String,
    pub family: Family,
    /// Strength per unit of absolute heart-intensity offset.
    pub intensity_sensitivity: f64,
    /// Strength per unit of excess noise energy.
    pub noise_sensitivity: f64,
    /// Strength per unit of excess template mismatch.
    pub shape_sensitivity: f64,
    /// Strength floor.
    pub base: f64,
    /// Width of the per-anatomy random strength component.
    pub base_jitter: f64,
    pub seed: u64,
}

impl SegmenterProfile {
    fn validate(&self) -> Result<()> {
        let v = [
            self.intensity_sensitivity,
            self.noise_sensitivity,
            self.shape_sensitivity,
            self.base,
            self.base_jitter,
        ];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(PhantomError::InvalidConfig(format!(
                "profile {} has negative or non-finite parameters",
                self.id
            )));
        }
        Ok(())
    }

    pub fn atlas_default() -> Self {
        Self {
            id: "atlas-00".into(),
            family: Family::Atlas,
            intensity_sensitivity: 1.5,
            noise_sensitivity: 20.0,
            shape_sensitivity: 1.0,
            base: 0.04,
            base_jitter: 0.06,
            seed: PROFILE_SEED,
        }
    }

    pub fn robust() -> Self {
        Self {
            id: "robust-00".into(),
            family: Family::Robust,
            intensity_sensitivity: 0.0,
            noise_sensitivity: 0.0,
            shape_sensitivity: 0.0,
            base: 0.05,
            base_jitter: 0.20,
            seed: PROFILE_SEED + 1,
        }
    }
}

const PROFILE_SEED: u64 = 0x5E60_0000;

fn spread(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.5
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Deterministic bank: the default atlas profile, one robust profile, then
/// alternating threshold and atlas profiles across sensitivity grids.
pub fn profile_bank(count: usize) -> Vec<SegmenterProfile> {
    let mut bank = Vec::with_capacity(count);
    if count == 0 {
        return bank;
    }
    bank.push(SegmenterProfile::atlas_default());
    if count >= 2 {
        bank.push(SegmenterProfile::robust());
    }
    let rest = count.saturating_sub(2);
    let n_threshold = rest.div_ceil(2);
    let n_atlas = rest / 2;
    for j in 0..rest {
        let k = bank.len();
        let seed = PROFILE_SEED + k as u64;
        let profile = if j % 2 == 0 {
            let t = j / 2;
            let a = spread(t, n_threshold);
            let b = spread((t * 2 + 1) % n_threshold.max(1), n_threshold);
            SegmenterProfile {
                id: format!("threshold-{:02}", t + 1),
                family: Family::Threshold,
                intensity_sensitivity: 0.3 + 0.3 * b,
                noise_sensitivity: 45.0 + 30.0 * a,
                shape_sensitivity: 0.3,
                base: 0.04,
                base_jitter: 0.06,
                seed,
            }
        } else {
            let t = j / 2;
            let a = spread(t, n_atlas);
            let b = spread((t * 3 + 1) % n_atlas.max(1), n_atlas);
            SegmenterProfile {
                id: format!("atlas-{:02}", t + 1),
                family: Family::Atlas,
                intensity_sensitivity: 1.0 + 1.0 * a,
                noise_sensitivity: 8.0 + 4.0 * b,
                shape_sensitivity: 0.8 + 0.7 * b,
                base: 0.04,
                base_jitter: 0.06,
                seed,
            }
        };
        bank.push(profile);
    }
    bank
}

/// Mean squared difference between each voxel and the mean of its six
/// face neighbours (clamped at the border).
pub fn noise_energy(vol: &Volume) -> f64 {
    let d = vol.dims();
    let data = vol.data();
    let mut acc = 0.0f64;
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                let at = |x: usize, y: usize, z: usize| data[index(d, x, y, z)] as f64;
                let nb = at(x.saturating_sub(1), y, z)
                    + at((x + 1).min(d[0] - 1), y, z)
                    + at(x, y.saturating_sub(1), z)
                    + at(x, (y + 1).min(d[1] - 1), z)
                    + at(x, y, z.saturating_sub(1))
                    + at(x, y, (z + 1).min(d[2] - 1));
                let r = at(x, y, z) - nb / 6.0;
                acc += r * r;
            }
        }
    }
    acc / vol.len() as f64
}

fn heart_mean(vol: &Volume, anatomy: &LabelMap) -> f64 {
    let labels = anatomy.labels();
    vol.masked_mean(|i| labels[i] != 0).unwrap_or(0.0)
}

/// 64-bit FNV-1a of the label payload; identifies an anatomy across domains.
fn anatomy_hash(anatomy: &LabelMap) -> u64 {
    anatomy.labels().iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Quantities a segmenter measures before segmenting.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub intensity_offset: f64,
    pub noise_excess: f64,
    pub shape_excess: f64,
}

/// A profile calibrated on segmenter-training cases.
#[derive(Clone, Debug)]
pub struct Segmenter {
    profile: SegmenterProfile,
    reference_intensity: f64,
    reference_noise: f64,
    reference_mismatch: f64,
    template: LabelMap,
}

impl Segmenter {
    /// Calibrates reference intensity, noise and template mismatch on
    /// common-domain training cases.
    pub fn fit<'a>(
        profile: &SegmenterProfile,
        training: impl IntoIterator<Item = &'a CaseRecord>,
        grid: &GridConfig,
    ) -> Result<Self> {
        profile.validate()?;
        let template = canonical_labels(grid)?;
        let (mut h, mut nu, mut m, mut count) = (0.0, 0.0, 0.0, 0usize);
        for case in training {
            if case.truth.dims() != template.dims() {
                return Err(PhantomError::InvalidConfig(format!(
                    "training case {} has dims {:?}, grid expects {:?}",
                    case.id,
                    case.truth.dims(),
                    template.dims()
                )));
            }
            h += heart_mean(&case.volume, &case.truth);
            nu += noise_energy(&case.volume);
            m += mismatch(&case.truth, &template);
            count += 1;
        }
        if count == 0 {
            return Err(PhantomError::InvalidConfig(
                "segmenter calibration needs at least one training case".into(),
            ));
        }
        let n = count as f64;
        Ok(Self {
            profile: profile.clone(),
            reference_intensity: h / n,
            reference_noise: nu / n,
            reference_mismatch: m / n,
            template,
        })
    }

    pub fn profile(&self) -> &SegmenterProfile {
        &self.profile
    }

    pub fn observe(&self, volume: &Volume, anatomy: &LabelMap) -> Observation {
        Observation {
            intensity_offset: heart_mean(volume, anatomy) - self.reference_intensity,
            noise_excess: (noise_energy(volume) - self.reference_noise).max(0.0),
            shape_excess: (mismatch(anatomy, &self.template) - self.reference_mismatch).max(0.0),
        }
    }

    /// Corruption strength, roughly one minus the expected mean Dice.
    pub fn strength(&self, obs: &Observation, jitter: f64) -> f64 {
        let p = &self.profile;
        let s = p.base
            + p.base_jitter * jitter
            + p.intensity_sensitivity * obs.intensity_offset.abs()
            + p.noise_sensitivity * obs.noise_excess
            + p.shape_sensitivity * obs.shape_excess;
        s.clamp(0.0, 0.98)
    }

    /// Segments `volume`, acquired from `anatomy`. Deterministic in
    /// (profile, volume, anatomy); the random component depends on the
    /// anatomy only, so images of one anatomy share it.
    pub fn segment(&self, volume: &Volume, anatomy: &LabelMap) -> Result<LabelMap> {
        if volume.dims() != anatomy.dims() || volume.dims() != self.template.dims() {
            return Err(PhantomError::InvalidConfig(format!(
                "segmenter grid {:?} does not match volume {:?} / anatomy {:?}",
                self.template.dims(),
                volume.dims(),
                anatomy.dims()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.profile.seed ^ anatomy_hash(anatomy));
        let jitter: f64 = rng.random();
        let strength = self.strength(&self.observe(volume, anatomy), jitter);
        Ok(corrupt(anatomy, strength, self.profile.family, &mut rng))
    }
}

fn mismatch(anatomy: &LabelMap, template: &LabelMap) -> f64 {
    dsc(anatomy, template).map(|r| 1.0 - r.mean).unwrap_or(1.0)
}

const FACE_NEIGHBOURS: [[i64; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn neighbours(dims: [usize; 3], i: usize) -> impl Iterator<Item = usize> {
    let x = (i % dims[0]) as i64;
    let y = ((i / dims[0]) % dims[1]) as i64;
    let z = (i / (dims[0] * dims[1])) as i64;
    FACE_NEIGHBOURS.iter().filter_map(move |o| {
        let q = [x + o[0], y + o[1], z + o[2]];
        (0..3)
            .all(|a| q[a] >= 0 && q[a] < dims[a] as i64)
            .then(|| index(dims, q[0] as usize, q[1] as usize, q[2] as usize))
    })
}

/// Peel depth of each voxel of a structure: 0 on the surface, increasing inward.
fn peel_depth(labels: &[u8], dims: [usize; 3], voxels: &[usize], label: u8) -> Vec<u32> {
    let pos: std::collections::HashMap<usize, usize> =
        voxels.iter().enumerate().map(|(k, &v)| (v, k)).collect();
    let mut depth = vec![u32::MAX; voxels.len()];
    let mut frontier: Vec<usize> = voxels
        .iter()
        .enumerate()
        .filter(|(_, &v)| {
            neighbours(dims, v).count() < 6 || neighbours(dims, v).any(|q| labels[q] != label)
        })
        .map(|(k, _)| k)
        .collect();
    for &k in &frontier {
        depth[k] = 0;
    }
    let mut level = 0;
    while !frontier.is_empty() {
        level += 1;
        let mut next = Vec::new();
        for &k in &frontier {
            for q in neighbours(dims, voxels[k]) {
                if let Some(&kq) = pos.get(&q) {
                    if depth[kq] == u32::MAX {
                        depth[kq] = level;
                        next.push(kq);
                    }
                }
            }
        }
        frontier = next;
    }
    depth
}

/// Realises a mean Dice of about `1 - strength` against `anatomy`.
///
/// Per structure with target Dice `d`, a fraction `f = 2(1-d)/(2-d+d*r)` of
/// voxels become false negatives and `r*f` times the size become false
/// positives, where `r` is the family's false-positive ratio.
fn corrupt(anatomy: &LabelMap, strength: f64, family: Family, rng: &mut ChaCha8Rng) -> LabelMap {
    let dims = anatomy.dims();
    let truth = anatomy.labels();
    let mut pred = truth.to_vec();

    let mut weights: [f64; NUM_STRUCTURES] = std::array::from_fn(|_| rng.random_range(0.6..1.4));
    let mean_w = weights.iter().sum::<f64>() / NUM_STRUCTURES as f64;
    weights.iter_mut().for_each(|w| *w /= mean_w);

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); NUM_STRUCTURES + 1];
    for (i, &l) in truth.iter().enumerate() {
        members[l as usize].push(i);
    }
    let mut background = members[0].clone();
    for i in (1..background.len()).rev() {
        background.swap(i, rng.random_range(0..=i));
    }
    let chunk = background.len() / NUM_STRUCTURES;

    let r = family.fp_ratio();
    let mut false_positives: Vec<(u8, Vec<usize>)> = Vec::new();
    for l in 1..=NUM_STRUCTURES {
        let voxels = &members[l];
        // Draw keys unconditionally so the stream stays aligned across strengths.
        let keys: Vec<f64> = voxels.iter().map(|_| rng.random()).collect();
        let ring_keys: u64 = rng.random();
        if voxels.is_empty() {
            continue;
        }
        let a = voxels.len() as f64;
        let d = (1.0 - strength * weights[l - 1]).clamp(0.02, 1.0);
        let f = 2.0 * (1.0 - d) / (2.0 - d + d * r);
        let n_fn = ((f * a).round() as usize).min(voxels.len());
        let n_fp = (r * f * a).round() as usize;
        let n_erode = (family.erosion_share() * n_fn as f64).round() as usize;

        let depth = peel_depth(truth, dims, voxels, l as u8);
        let mut by_depth: Vec<usize> = (0..voxels.len()).collect();
        by_depth.sort_by(|&p, &q| depth[p].cmp(&depth[q]).then(keys[p].total_cmp(&keys[q])));
        let mut removed = vec![false; voxels.len()];
        for &k in &by_depth[..n_erode] {
            removed[k] = true;
        }
        let mut by_key: Vec<usize> = (0..voxels.len()).filter(|&k| !removed[k]).collect();
        by_key.sort_by(|&p, &q| keys[p].total_cmp(&keys[q]));
        for &k in by_key.iter().take(n_fn - n_erode) {
            removed[k] = true;
        }
        for (k, &v) in voxels.iter().enumerate() {
            if removed[k] {
                pred[v] = 0;
            }
        }

        if n_fp > 0 {
            let fp = if family.speckle() {
                let start = (l - 1) * chunk;
                background[start..(start + n_fp.min(chunk))].to_vec()
            } else {
                let mut ring: Vec<usize> = voxels
                    .iter()
                    .flat_map(|&v| neighbours(dims, v))
                    .filter(|&q| truth[q] != l as u8)
                    .collect();
                ring.sort_unstable();
                ring.dedup();
                let mut keyed: Vec<(u64, usize)> = ring
                    .into_iter()
                    .map(|q| ((q as u64 ^ ring_keys).wrapping_mul(0x9E37_79B9_7F4A_7C15), q))
                    .collect();
                keyed.sort_unstable();
                keyed.into_iter().take(n_fp).map(|(_, q)| q).collect()
            };
            false_positives.push((l as u8, fp));
        }
    }
    for (l, fp) in false_positives {
        for v in fp {
            pred[v] = l;
        }
    }
    LabelMap::new(dims, anatomy.spacing(), pred).expect("labels stay in range")
}
