use super::{fit_segmenter, QaError, Result};
use crate::phantom::{BenchmarkDataset, DomainKind, SegmenterProfile, Split};
use crate::stats::{anova_oneway, dsc, mean, rank_sum, std_dev, Alternative, TestResult};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub case_id: String,
    pub domain: DomainKind,
    pub parameter: Option<f64>,
    pub split: Split,
    pub dsc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSummary {
    pub domain: DomainKind,
    pub cases: usize,
    pub mean: f64,
    pub std: f64,
}

/// An uncommon domain against COMMON. `drop` is the COMMON mean minus the
/// domain mean; the test is one-sided for COMMON scoring higher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainComparison {
    pub domain: DomainKind,
    pub drop: f64,
    pub test: TestResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseGroup {
    pub level: f64,
    pub cases: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub profile_id: String,
    pub domains: Vec<DomainSummary>,
    pub versus_common: Vec<DomainComparison>,
    pub noise_groups: Vec<NoiseGroup>,
    /// One-way ANOVA of Dice across the RPV_NOISY noise levels with two or
    /// more cases; `None` when fewer than two such levels exist.
    pub noise_anova: Option<TestResult>,
    pub cases: Vec<CaseScore>,
}

impl BenchmarkReport {
    pub fn domain(&self, kind: DomainKind) -> Option<&DomainSummary> {
        self.domains.iter().find(|d| d.domain == kind)
    }

    pub fn comparison(&self, kind: DomainKind) -> Option<&DomainComparison> {
        self.versus_common.iter().find(|d| d.domain == kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Segments every QA case (both splits) with `profile` and compares each
/// benchmark domain with COMMON.
pub fn run_benchmark(profile: &SegmenterProfile, dataset: &BenchmarkDataset) -> Result<BenchmarkReport> {
    let segmenter = fit_segmenter(profile, dataset)?;
    let mut cases = Vec::new();
    for (case, &split) in dataset.cases.iter().zip(&dataset.splits) {
        if split == Split::SegTrain {
            continue;
        }
        let s_pred = segmenter.segment(&case.volume, &case.truth)?;
        cases.push(CaseScore {
            case_id: case.id.clone(),
            domain: case.domain.kind,
            parameter: case.domain.parameter,
            split,
            dsc: dsc(&s_pred, &case.truth)?.mean,
        });
    }
    let scores = |kind: DomainKind| -> Vec<f64> { cases.iter().filter(|c| c.domain == kind).map(|c| c.dsc).collect() };

    let mut domains = Vec::new();
    for kind in DomainKind::BENCHMARK {
        let s = scores(kind);
        if s.is_empty() {
            return Err(QaError::MissingDomain(kind));
        }
        domains.push(DomainSummary {
            domain: kind,
            cases: s.len(),
            mean: mean(&s),
            std: std_dev(&s),
        });
    }
    let common = scores(DomainKind::Common);
    let common_mean = mean(&common);
    let mut versus_common = Vec::new();
    for kind in &DomainKind::BENCHMARK[1..] {
        let s = scores(*kind);
        versus_common.push(DomainComparison {
            domain: *kind,
            drop: common_mean - mean(&s),
            test: rank_sum(&common, &s, Alternative::Greater)?,
        });
    }

    let mut levels: Vec<f64> = cases
        .iter()
        .filter(|c| c.domain == DomainKind::RpvNoisy)
        .filter_map(|c| c.parameter)
        .collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let groups: Vec<Vec<f64>> = levels
        .iter()
        .map(|&l| {
            cases
                .iter()
                .filter(|c| c.domain == DomainKind::RpvNoisy && c.parameter == Some(l))
                .map(|c| c.dsc)
                .collect()
        })
        .collect();
    let noise_groups = levels
        .iter()
        .zip(&groups)
        .map(|(&level, g)| NoiseGroup {
            level,
            cases: g.len(),
            mean: mean(g),
        })
        .collect();
    // The test needs two or more cases per level; small benchmarks can leave
    // a level with one.
    let testable: Vec<Vec<f64>> = groups.iter().filter(|g| g.len() >= 2).cloned().collect();
    if testable.len() < groups.len() {
        log::warn!("{} noise levels have a single case and are left out of the ANOVA", groups.len() - testable.len());
    }
    let noise_anova = if testable.len() >= 2 {
        Some(anova_oneway(&testable)?)
    } else {
        log::warn!("fewer than two noise levels with repeated cases; no ANOVA");
        None
    };

    Ok(BenchmarkReport {
        profile_id: profile.id.clone(),
        domains,
        versus_common,
        noise_groups,
        noise_anova,
        cases,
    })
}
