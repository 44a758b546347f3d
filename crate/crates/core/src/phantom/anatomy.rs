//! Ellipsoidal cardiac anatomy painted onto a thoracic canvas.

use crate::grid::{gaussian_blur, index, LabelMap, Volume, NUM_STRUCTURES};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Reference grid edge length the canonical geometry is expressed in.
pub const REFERENCE_SIZE: f64 = 48.0;

/// One substructure in reference-grid voxel units relative to the heart centre.
#[derive(Clone, Copy, Debug)]
pub struct StructureSpec {
    pub label: u8,
    pub centre: [f64; 3],
    pub axes: [f64; 3],
    pub intensity: f64,
}

/// Paint order: chambers, valves, then the coronary artery.
pub const STRUCTURES: [StructureSpec; NUM_STRUCTURES] = [
    StructureSpec { label: 9, centre: [6.0, 4.0, -2.0], axes: [8.0, 7.0, 10.0], intensity: 0.56 },
    StructureSpec { label: 7, centre: [-6.0, -5.0, -1.0], axes: [8.0, 6.0, 9.0], intensity: 0.52 },
    StructureSpec { label: 8, centre: [5.0, -4.0, 8.0], axes: [7.0, 6.0, 6.0], intensity: 0.50 },
    StructureSpec { label: 6, centre: [-7.0, 3.0, 7.0], axes: [7.0, 7.0, 6.0], intensity: 0.47 },
    StructureSpec { label: 4, centre: [6.0, 0.0, 3.0], axes: [4.0, 4.0, 2.5], intensity: 0.42 },
    StructureSpec { label: 3, centre: [-7.0, -1.0, 3.0], axes: [4.0, 4.0, 2.5], intensity: 0.41 },
    StructureSpec { label: 1, centre: [1.0, 0.0, 2.0], axes: [3.5, 3.5, 3.0], intensity: 0.45 },
    StructureSpec { label: 5, centre: [-2.0, -8.0, 4.0], axes: [3.5, 3.0, 3.0], intensity: 0.44 },
    StructureSpec { label: 2, centre: [0.0, -10.0, -4.0], axes: [2.5, 2.5, 9.0], intensity: 0.60 },
];

const TISSUE: f64 = 0.30;
const TISSUE_VARIATION: f64 = 0.03;
const LUNG: f64 = 0.0;
const BONE: f64 = 1.0;
const TABLE: f64 = 0.85;
const BLUR_SIGMA: f64 = 0.7;
const BASELINE_NOISE: f64 = 0.005;

/// Per-case anatomy: jittered structures, heart placement and optional removal.
#[derive(Clone, Debug)]
pub struct Anatomy {
    pub structures: Vec<StructureSpec>,
    /// Heart centre offset from the canvas centre, reference units.
    pub offset: [f64; 3],
    pub removed: Option<u8>,
}

impl Anatomy {
    /// Un-jittered reference anatomy.
    pub fn canonical() -> Self {
        Self {
            structures: STRUCTURES.to_vec(),
            offset: [0.0; 3],
            removed: None,
        }
    }

    /// Jitter of at most `jitter` times each axis length on centres and axes.
    pub fn sample(rng: &mut ChaCha8Rng, jitter: f64) -> Self {
        let structures = STRUCTURES
            .iter()
            .map(|s| {
                let mut s = *s;
                for a in 0..3 {
                    s.centre[a] += rng.random_range(-jitter..=jitter) * s.axes[a];
                }
                for a in 0..3 {
                    s.axes[a] *= 1.0 + rng.random_range(-jitter..=jitter);
                }
                s.intensity += rng.random_range(-0.01..=0.01);
                s
            })
            .collect::<Vec<_>>();
        let heart_shift = rng.random_range(-0.02..=0.02);
        let structures = structures
            .into_iter()
            .map(|mut s| {
                s.intensity += heart_shift;
                s
            })
            .collect();
        let offset = std::array::from_fn(|_| rng.random_range(-1.5..=1.5));
        Self {
            structures,
            offset,
            removed: None,
        }
    }
}

/// Body context surrounding the heart.
#[derive(Clone, Copy, Debug, Default)]
pub struct Context {
    /// Heart displacement relative to the body, reference units (gravity in prone scans).
    pub heart_shift: [f64; 3],
    /// Patient table against the anterior chest wall.
    pub table: bool,
}

/// Canvas edge length for an output grid of `size`.
pub fn canvas_size(size: usize) -> usize {
    size + 2 * (size / 12).max(1)
}

/// Paints the anatomy; returns the blurred, noisy canvas and its labels.
pub fn paint(
    anatomy: &Anatomy,
    context: &Context,
    size: usize,
    spacing: f64,
    rng: &mut ChaCha8Rng,
) -> (Volume, LabelMap) {
    let c = canvas_size(size);
    let dims = [c; 3];
    let n = c * c * c;
    let scale = size as f64 / REFERENCE_SIZE;
    let centre = c as f64 / 2.0 - 0.5;

    let variation: Vec<f32> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let variation = gaussian_blur(&variation, dims, c as f64 / 6.0);
    let peak = variation.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-12);

    let mut image = vec![0.0f64; n];
    let mut labels = vec![0u8; n];
    for z in 0..c {
        for y in 0..c {
            for x in 0..c {
                let i = index(dims, x, y, z);
                // Body frame, reference units.
                let p = [
                    (x as f64 - centre) / scale,
                    (y as f64 - centre) / scale,
                    (z as f64 - centre) / scale,
                ];
                let mut v = TISSUE + TISSUE_VARIATION * (variation[i] / peak) as f64;
                let lung = |cx: f64| {
                    ((p[0] - cx) / 7.0).powi(2) + ((p[1] - 1.0) / 14.0).powi(2)
                        + (p[2] / 16.0).powi(2)
                        <= 1.0
                };
                if lung(-21.0) || lung(21.0) {
                    v = LUNG;
                }
                if (p[0].powi(2) + (p[1] - 19.0).powi(2)).sqrt() <= 3.0 {
                    v = BONE;
                }
                if context.table && (-24.0..=-21.0).contains(&p[1]) {
                    v = TABLE;
                }
                // Heart frame.
                let h: [f64; 3] =
                    std::array::from_fn(|a| p[a] - anatomy.offset[a] - context.heart_shift[a]);
                for s in &anatomy.structures {
                    if anatomy.removed == Some(s.label) {
                        continue;
                    }
                    let r: f64 = (0..3).map(|a| ((h[a] - s.centre[a]) / s.axes[a]).powi(2)).sum();
                    if r <= 1.0 {
                        v = s.intensity;
                        labels[i] = s.label;
                    }
                }
                image[i] = v;
            }
        }
    }
    let image: Vec<f32> = image.into_iter().map(|v| v as f32).collect();
    let blurred = gaussian_blur(&image, dims, BLUR_SIGMA);
    let data = blurred
        .into_iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(&mut *rng);
            (v as f64 + BASELINE_NOISE * e).clamp(0.0, 1.0) as f32
        })
        .collect();
    let sp = [spacing; 3];
    (
        Volume::new(dims, sp, data).expect("canvas geometry"),
        LabelMap::new(dims, sp, labels).expect("canvas labels"),
    )
}
