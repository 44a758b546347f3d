use super::{FeatureError, FeatureVector, Result};
use crate::phantom::DomainKind;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// One line of the feature exchange table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub case_id: String,
    pub domain: DomainKind,
    pub x_appr: f64,
    pub x_intensity: f64,
    pub x_noise: f64,
    pub x_shape: f64,
    pub dsc_true: Option<f64>,
}

impl FeatureRow {
    pub fn new(case_id: impl Into<String>, domain: DomainKind, features: FeatureVector, dsc_true: Option<f64>) -> Self {
        Self {
            case_id: case_id.into(),
            domain,
            x_appr: features.x_appr,
            x_intensity: features.x_intensity,
            x_noise: features.x_noise,
            x_shape: features.x_shape,
            dsc_true,
        }
    }

    pub fn features(&self) -> FeatureVector {
        FeatureVector {
            x_appr: self.x_appr,
            x_intensity: self.x_intensity,
            x_noise: self.x_noise,
            x_shape: self.x_shape,
        }
    }
}

fn table_err(e: csv::Error) -> FeatureError {
    FeatureError::Table(e.to_string())
}

/// Writes rows with a header; floats use shortest round-trip formatting.
pub fn write_feature_csv<W: Write>(rows: &[FeatureRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(table_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<FeatureRow>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = r.headers().map_err(table_err)?.iter().map(str::to_owned).collect();
    let expected = ["case_id", "domain", "x_appr", "x_intensity", "x_noise", "x_shape", "dsc_true"];
    if header.len() < 6 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(FeatureError::Table(format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(table_err)).collect()
}
