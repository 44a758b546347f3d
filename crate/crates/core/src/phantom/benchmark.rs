use super::{
    generate_case, sample_parameter, DomainKind, DomainTag, GridConfig, PhantomError, Result,
};
use crate::grid::{read_labels, read_volume, write_labels, write_volume};
use crate::phantom::{CaseMeta, CaseRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Split {
    SegTrain,
    QaTrain,
    QaTest,
}

/// Per-domain case counts at scale 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainCounts {
    pub common: usize,
    pub av: usize,
    pub ce: usize,
    pub mip: usize,
    pub prone: usize,
    pub rpv: usize,
    pub seg_train: usize,
}

impl Default for DomainCounts {
    fn default() -> Self {
        Self {
            common: 39,
            av: 74,
            ce: 20,
            mip: 12,
            prone: 16,
            rpv: 20,
            seg_train: 60,
        }
    }
}

impl DomainCounts {
    pub fn get(&self, kind: DomainKind) -> usize {
        match kind {
            DomainKind::Common => self.common,
            DomainKind::Av => self.av,
            DomainKind::Ce => self.ce,
            DomainKind::Mip => self.mip,
            DomainKind::Prone => self.prone,
            DomainKind::RpvNoisy | DomainKind::RpvBase => self.rpv,
        }
    }

    /// Counts multiplied by `scale`, rounded, with every domain kept at one or more.
    pub fn scaled(&self, scale: f64) -> Self {
        let s = |c: usize| ((c as f64 * scale).round() as usize).max(1);
        Self {
            common: s(self.common),
            av: s(self.av),
            ce: s(self.ce),
            mip: s(self.mip),
            prone: s(self.prone),
            rpv: s(self.rpv),
            seg_train: s(self.seg_train),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub scale: f64,
    pub seed: u64,
    pub grid: GridConfig,
    pub counts: DomainCounts,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            seed: 0,
            grid: GridConfig::default(),
            counts: DomainCounts::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkDataset {
    pub config: BenchmarkConfig,
    pub cases: Vec<CaseRecord>,
    pub splits: Vec<Split>,
}

impl BenchmarkDataset {
    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &CaseRecord> {
        self.cases
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(c, _)| c)
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.cases.iter().position(|c| c.id == id).map(|i| self.splits[i])
    }
}

/// Test-set size per domain: a third of all QA cases, apportioned across
/// domains by largest remainder.
fn test_allocation(counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 / 3.0).round() as usize;
    let quotas: Vec<f64> = counts.iter().map(|&c| c as f64 * target as f64 / total as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // Stable sort keeps domain order for equal remainders.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra)
    });
    let mut missing = target - alloc.iter().sum::<usize>();
    for &d in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if alloc[d] < counts[d] {
            alloc[d] += 1;
            missing -= 1;
        }
    }
    alloc
}

/// Generates the segmenter-training cases and the six-domain QA benchmark.
pub fn generate_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkDataset> {
    config.grid.validate()?;
    if !(config.scale.is_finite() && config.scale > 0.0) {
        return Err(PhantomError::InvalidConfig(format!("scale {}", config.scale)));
    }
    if config.counts.common == 0 {
        return Err(PhantomError::MissingCommon);
    }
    let counts = config.counts.scaled(config.scale);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cases = Vec::new();
    let mut splits = Vec::new();

    for i in 0..counts.seg_train {
        let seed = rng.random();
        let mut case = generate_case(seed, DomainTag::common(), &config.grid)?;
        case.id = format!("segtrain-{i:03}");
        cases.push(case);
        splits.push(Split::SegTrain);
    }

    let per_domain: Vec<usize> = DomainKind::BENCHMARK.iter().map(|&k| counts.get(k)).collect();
    let tests = test_allocation(&per_domain);
    for (d, &kind) in DomainKind::BENCHMARK.iter().enumerate() {
        let n = per_domain[d];
        let mut domain_cases = Vec::with_capacity(n);
        for i in 0..n {
            let seed: u64 = rng.random();
            let parameter = sample_parameter(kind, i, &mut rng);
            let mut case = generate_case(seed, DomainTag::new(kind, parameter), &config.grid)?;
            case.id = format!("{}-{i:03}", kind.slug());
            domain_cases.push(case);
        }
        // Random choice of which cases are held out.
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let mut split = vec![Split::QaTrain; n];
        for &i in &order[..tests[d]] {
            split[i] = Split::QaTest;
        }
        cases.extend(domain_cases);
        splits.extend(split);
    }
    Ok(BenchmarkDataset {
        config: config.clone(),
        cases,
        splits,
    })
}

/// One case in an on-disk benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub domain: DomainTag,
    pub split: Split,
    pub seed: u64,
    pub volume: String,
    pub truth: String,
    #[serde(default)]
    pub meta: CaseMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: BenchmarkConfig,
    pub cases: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes every case as a volume/label pair plus `manifest.json`.
pub fn write_benchmark(dataset: &BenchmarkDataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("cases"))?;
    let mut entries = Vec::with_capacity(dataset.cases.len());
    for (case, &split) in dataset.cases.iter().zip(&dataset.splits) {
        let volume = format!("cases/{}.vol", case.id);
        let truth = format!("cases/{}.lab", case.id);
        write_volume(&case.volume, dir.join(&volume))?;
        write_labels(&case.truth, dir.join(&truth))?;
        entries.push(ManifestEntry {
            id: case.id.clone(),
            domain: case.domain,
            split,
            seed: case.seed,
            volume,
            truth,
            meta: case.meta.clone(),
        });
    }
    let manifest = Manifest {
        config: dataset.config.clone(),
        cases: entries,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PhantomError::Manifest(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

/// Loads a benchmark written by [`write_benchmark`].
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<BenchmarkDataset> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| PhantomError::Manifest(e.to_string()))?;
    let mut cases = Vec::with_capacity(manifest.cases.len());
    let mut splits = Vec::with_capacity(manifest.cases.len());
    for e in manifest.cases {
        cases.push(CaseRecord {
            volume: read_volume(dir.join(&e.volume))?,
            truth: read_labels(dir.join(&e.truth))?,
            id: e.id,
            domain: e.domain,
            seed: e.seed,
            meta: e.meta,
        });
        splits.push(e.split);
    }
    Ok(BenchmarkDataset {
        config: manifest.config,
        cases,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_is_a_third() {
        let counts = [39, 74, 20, 12, 16, 20];
        let a = test_allocation(&counts);
        assert_eq!(a.iter().sum::<usize>(), 60);
        for (c, t) in counts.iter().zip(&a) {
            assert!(t <= c);
            assert!((*t as f64 - *c as f64 / 3.0).abs() <= 1.0);
        }
    }
}
