use crate::error::Result;
use crate::fusion::{Metadata, ModelInput};
use crate::graph::{build_graph, BiomarkerSeries, TemporalGraph};
use crate::preprocess::{enhance, FundusImage, PreprocessConfig};
use crate::synth::PatientRecord;

/// One preprocessed, model-ready patient with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Enhanced image at model resolution.
    pub image: FundusImage,
    pub graph: TemporalGraph,
    pub meta: Vec<f64>,
    pub grade: usize,
    pub risk: Option<f64>,
    pub progression_months: Option<f64>,
    pub event: Option<bool>,
}

impl Sample {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        id: impl Into<String>,
        raw: &FundusImage,
        series: &[BiomarkerSeries],
        metadata: &Metadata,
        grade: usize,
        pre: &PreprocessConfig,
        time_scale: f64,
    ) -> Result<Self> {
        Ok(Self {
            id: id.into(),
            image: enhance(raw, pre)?,
            graph: build_graph(series, time_scale)?,
            meta: metadata.to_vector()?,
            grade,
            risk: None,
            progression_months: None,
            event: None,
        })
    }

    pub fn from_record(rec: &PatientRecord, pre: &PreprocessConfig, time_scale: f64) -> Result<Self> {
        let c = &rec.clinical;
        let mut s = Self::build(
            c.patient_id.clone(),
            &rec.fundus.image,
            &c.biomarkers,
            &c.metadata,
            c.grade,
            pre,
            time_scale,
        )?;
        s.risk = Some(c.risk);
        s.progression_months = Some(c.progression_months);
        s.event = Some(c.event);
        Ok(s)
    }

    pub fn input(&self) -> ModelInput {
        self.input_with(&self.image)
    }

    /// Model input with a replacement image (e.g. an augmented copy).
    pub fn input_with(&self, image: &FundusImage) -> ModelInput {
        ModelInput {
            image: image.to_tensor(),
            graph: self.graph.clone(),
            meta: self.meta.clone(),
        }
    }
}

pub fn samples_from_records(records: &[PatientRecord], pre: &PreprocessConfig, time_scale: f64) -> Result<Vec<Sample>> {
    records.iter().map(|r| Sample::from_record(r, pre, time_scale)).collect()
}
