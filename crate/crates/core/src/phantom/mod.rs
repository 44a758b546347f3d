//! Synthetic multi-domain cardiac benchmark and the black-box segmenters
//! evaluated on it.

mod anatomy;
mod benchmark;
mod segmenter;

pub use anatomy::{canvas_size, Anatomy, Context, StructureSpec, REFERENCE_SIZE, STRUCTURES};
pub use benchmark::{
    generate_benchmark, read_manifest, write_benchmark, BenchmarkConfig, BenchmarkDataset,
    DomainCounts, Manifest, ManifestEntry, Split,
};
pub use segmenter::{profile_bank, Family, Segmenter, SegmenterProfile};

use crate::grid::{crop_roi, normalize, GridError, LabelMap, Volume};
use crate::perturb::{self, Axis, NoiseLevel, PerturbError, NOISE_LEVELS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("domain {kind:?} {reason}")]
    InvalidDomain { kind: DomainKind, reason: String },
    #[error("COMMON count must be at least 1")]
    MissingCommon,
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PhantomError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DomainKind {
    Common,
    Av,
    Ce,
    Mip,
    Prone,
    RpvBase,
    RpvNoisy,
}

impl DomainKind {
    /// Domains that make up a benchmark, in manifest order.
    pub const BENCHMARK: [DomainKind; 6] = [
        DomainKind::Common,
        DomainKind::Av,
        DomainKind::Ce,
        DomainKind::Mip,
        DomainKind::Prone,
        DomainKind::RpvNoisy,
    ];

    pub fn slug(self) -> &'static str {
        match self {
            DomainKind::Common => "common",
            DomainKind::Av => "av",
            DomainKind::Ce => "ce",
            DomainKind::Mip => "mip",
            DomainKind::Prone => "prone",
            DomainKind::RpvBase => "rpv-base",
            DomainKind::RpvNoisy => "rpv",
        }
    }

    fn stream(self) -> u64 {
        self as u64 + 1
    }
}

/// Domain of a case plus its parameter where one applies: deformation
/// magnitude (AV), contrast delta (CE), gravity shift (PRONE) or noise level
/// (RPV_NOISY).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainTag {
    pub kind: DomainKind,
    pub parameter: Option<f64>,
}

impl DomainTag {
    pub fn new(kind: DomainKind, parameter: Option<f64>) -> Self {
        Self { kind, parameter }
    }

    pub fn common() -> Self {
        Self::new(DomainKind::Common, None)
    }

    fn validate(&self) -> Result<()> {
        let bad = |reason: &str| PhantomError::InvalidDomain {
            kind: self.kind,
            reason: reason.to_string(),
        };
        match (self.kind, self.parameter) {
            (DomainKind::Common | DomainKind::Mip | DomainKind::RpvBase, Some(_)) => {
                Err(bad("takes no parameter"))
            }
            (DomainKind::RpvNoisy, Some(n)) if !(n.is_finite() && n > 0.0) => {
                Err(bad("noise level must be positive"))
            }
            (DomainKind::Av | DomainKind::Prone, Some(m)) if !(m.is_finite() && m >= 0.0) => {
                Err(bad("magnitude must be nonnegative"))
            }
            (DomainKind::Ce, Some(d)) if !d.is_finite() => Err(bad("delta must be finite")),
            _ => Ok(()),
        }
    }
}

/// Output grid: `size` voxels per edge at `spacing` mm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub size: usize,
    pub spacing: f64,
    /// Per-case jitter as a fraction of each ellipsoid axis.
    pub jitter: f64,
    /// Chance that an AV case lacks one structure.
    pub removal_probability: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 48,
            spacing: 2.0,
            jitter: 0.10,
            removal_probability: 0.03,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 || self.size % 16 != 0 {
            return Err(PhantomError::InvalidConfig(format!(
                "size {} must be a positive multiple of 16",
                self.size
            )));
        }
        if !(self.spacing.is_finite() && self.spacing > 0.0) {
            return Err(PhantomError::InvalidConfig(format!("spacing {}", self.spacing)));
        }
        if !(0.0..=0.10).contains(&self.jitter) {
            return Err(PhantomError::InvalidConfig(format!(
                "jitter {} outside [0, 0.1]",
                self.jitter
            )));
        }
        if !(0.0..=1.0).contains(&self.removal_probability) {
            return Err(PhantomError::InvalidConfig(format!(
                "removal probability {}",
                self.removal_probability
            )));
        }
        Ok(())
    }

    fn scale(&self) -> f64 {
        self.size as f64 / REFERENCE_SIZE
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    /// Structure label deleted by the anatomical-variation transform.
    pub removed: Option<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseRecord {
    pub id: String,
    pub volume: Volume,
    pub truth: LabelMap,
    pub domain: DomainTag,
    pub seed: u64,
    pub meta: CaseMeta,
}

/// Independent RNG stream derived from a case seed.
fn stream(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

const ANATOMY_STREAM: u64 = 0;
const CANVAS_STREAM: u64 = 100;
const DOMAIN_STREAM: u64 = 200;

/// Draws the parameter a benchmark assigns to a domain.
pub fn sample_parameter(kind: DomainKind, index: usize, rng: &mut impl Rng) -> Option<f64> {
    match kind {
        DomainKind::Av => Some(rng.random_range(2.0..=4.0)),
        DomainKind::Ce => Some(rng.random_range(0.10..=0.30)),
        DomainKind::Prone => Some(rng.random_range(1.0..=2.5)),
        DomainKind::RpvNoisy => Some(NOISE_LEVELS[index % NOISE_LEVELS.len()]),
        DomainKind::Common | DomainKind::Mip | DomainKind::RpvBase => None,
    }
}

/// Generates one preprocessed case (cropped to the grid and normalised) with
/// its domain transform applied. Missing parameters fall back to a draw from
/// the case seed.
pub fn generate_case(seed: u64, domain: DomainTag, grid: &GridConfig) -> Result<CaseRecord> {
    generate_case_inner(seed, domain, grid, false)
}

/// A PRONE case as acquired, before the pseudo-supine flip.
pub fn generate_prone_unflipped(seed: u64, gravity: f64, grid: &GridConfig) -> Result<CaseRecord> {
    generate_case_inner(seed, DomainTag::new(DomainKind::Prone, Some(gravity)), grid, true)
}

fn generate_case_inner(
    seed: u64,
    domain: DomainTag,
    grid: &GridConfig,
    unflipped: bool,
) -> Result<CaseRecord> {
    grid.validate()?;
    domain.validate()?;
    let mut domain_rng = stream(seed, DOMAIN_STREAM + domain.kind.stream());
    let parameter = match domain.parameter {
        Some(p) => Some(p),
        None => sample_parameter(domain.kind, 0, &mut domain_rng),
    };
    let domain = DomainTag::new(domain.kind, parameter);

    let mut anatomy = Anatomy::sample(&mut stream(seed, ANATOMY_STREAM), grid.jitter);
    if domain.kind == DomainKind::Av && domain_rng.random_bool(grid.removal_probability) {
        let k = domain_rng.random_range(0..STRUCTURES.len());
        anatomy.removed = Some(STRUCTURES[k].label);
    }
    let mut context = Context::default();
    if domain.kind == DomainKind::Prone {
        // Lying prone, the heart sags toward the anterior chest wall and table.
        context.heart_shift = [0.0, -parameter.unwrap_or(0.0), 0.0];
        context.table = true;
    }
    let (canvas, canvas_labels) = anatomy::paint(
        &anatomy,
        &context,
        grid.size,
        grid.spacing,
        &mut stream(seed, CANVAS_STREAM),
    );
    let roi = crop_roi(&canvas, &canvas_labels, [grid.size; 3])?;
    let mut volume = normalize(&roi.volume);
    let mut truth = roi.labels;

    let transform_seed: u64 = domain_rng.random();
    match domain.kind {
        DomainKind::Common | DomainKind::RpvBase => {}
        DomainKind::Av => {
            let magnitude = parameter.unwrap_or(0.0) * grid.scale();
            (volume, truth) = perturb::deform(&volume, &truth, magnitude, transform_seed)?;
        }
        DomainKind::Ce => {
            let mask = truth.foreground_mask();
            volume = perturb::contrast_enhance(&volume, &mask, parameter.unwrap_or(0.0))?;
        }
        DomainKind::Mip => {
            volume = perturb::insert_artifact(&volume, transform_seed)?;
        }
        DomainKind::Prone => {
            if unflipped {
                // Rotation by 180 degrees about z.
                let (v, l) = perturb::flip_axis(&volume, &truth, Axis::X)?;
                (volume, truth) = perturb::flip_axis(&v, &l, Axis::Y)?;
            }
        }
        DomainKind::RpvNoisy => {
            let n = NoiseLevel::new(parameter.unwrap_or(NOISE_LEVELS[0]))?;
            volume = perturb::add_poisson_noise(&volume, n, transform_seed)?;
        }
    }
    Ok(CaseRecord {
        id: format!("{}-{seed}", domain.kind.slug()),
        volume,
        truth,
        domain,
        seed,
        meta: CaseMeta {
            removed: anatomy.removed,
        },
    })
}

/// Un-jittered anatomy rendered and cropped like a case; the reference shape
/// template for atlas-style segmenters.
pub fn canonical_labels(grid: &GridConfig) -> Result<LabelMap> {
    grid.validate()?;
    let mut rng = stream(0, CANVAS_STREAM);
    let (canvas, labels) = anatomy::paint(
        &Anatomy::canonical(),
        &Context::default(),
        grid.size,
        grid.spacing,
        &mut rng,
    );
    Ok(crop_roi(&canvas, &labels, [grid.size; 3])?.labels)
}
