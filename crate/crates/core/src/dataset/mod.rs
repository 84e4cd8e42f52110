//! The trial-outcome corpus: reviews, their meta-analyses, subgroups and
//! per-study raw numbers.
//!
//! A [`DatabaseSnapshot`] is validated once at load time and never mutated
//! afterwards, so it can be shared freely between threads.

mod csv;
mod rm5;
mod selection;
mod store;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::effectsize::EffectScale;
use crate::error::{Error, Result};

pub use self::csv::{export_csv, import_csv};
pub use self::rm5::{parse_rm5_subset, Rm5Import, Rm5Warning};
pub use self::selection::{
    parse_study_spec, resolve_selection, Selection, SelectionItem, SetStudy, StudySet, TargetGroup,
};
pub use self::store::{load_database, parse_database, serialize_database, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeKind {
    #[serde(rename = "dich")]
    Dichotomous,
    #[serde(rename = "cont")]
    Continuous,
}

impl std::fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutcomeKind::Dichotomous => "dichotomous",
            OutcomeKind::Continuous => "continuous",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Review {
    pub id: String,
    pub title: String,
    pub year: i32,
    #[serde(default)]
    pub topics: Vec<String>,
    #[serde(default)]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub meta_analyses: Vec<MetaAnalysis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAnalysis {
    pub id: String,
    /// Owning review; implied by nesting in the corpus file.
    #[serde(skip)]
    pub review_id: String,
    pub name: String,
    pub outcome_kind: OutcomeKind,
    pub group1_label: String,
    pub group2_label: String,
    pub subgroups: Vec<Subgroup>,
}

impl MetaAnalysis {
    pub fn subgroup(&self, id: &str) -> Option<&Subgroup> {
        self.subgroups.iter().find(|s| s.id == id)
    }

    pub fn study_count(&self) -> usize {
        self.subgroups.iter().map(|s| s.studies.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subgroup {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub studies: Vec<Study>,
}

/// One trial row: a "FirstAuthor Year" label plus its raw numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStudy", into = "RawStudy")]
pub struct Study {
    pub label: String,
    pub data: StudyData,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StudyData {
    Dichotomous(DichotomousCounts),
    Continuous(ContinuousSummaries),
    Estimate(PrecomputedEstimate),
}

impl StudyData {
    /// Outcome kind of raw data; `None` for precomputed estimates.
    pub fn kind(&self) -> Option<OutcomeKind> {
        match self {
            StudyData::Dichotomous(_) => Some(OutcomeKind::Dichotomous),
            StudyData::Continuous(_) => Some(OutcomeKind::Continuous),
            StudyData::Estimate(_) => None,
        }
    }

    /// Exchanges the roles of the two arms. Precomputed estimates are negated,
    /// which is exact for every supported scale.
    pub fn swapped(&self) -> StudyData {
        match *self {
            StudyData::Dichotomous(c) => StudyData::Dichotomous(c.swapped()),
            StudyData::Continuous(c) => StudyData::Continuous(c.swapped()),
            StudyData::Estimate(e) => StudyData::Estimate(PrecomputedEstimate { y: -e.y, ..e }),
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        match self {
            StudyData::Dichotomous(c) => c.validate(),
            StudyData::Continuous(c) => c.validate(),
            StudyData::Estimate(e) => e.validate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DichotomousCounts {
    #[serde(rename = "e1")]
    pub events1: u64,
    #[serde(rename = "n1")]
    pub total1: u64,
    #[serde(rename = "e2")]
    pub events2: u64,
    #[serde(rename = "n2")]
    pub total2: u64,
}

impl DichotomousCounts {
    pub fn new(events1: u64, total1: u64, events2: u64, total2: u64) -> Self {
        DichotomousCounts {
            events1,
            total1,
            events2,
            total2,
        }
    }

    pub fn swapped(&self) -> Self {
        DichotomousCounts::new(self.events2, self.total2, self.events1, self.total1)
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.total1 == 0 {
            return Err(("n1", "total must be positive".into()));
        }
        if self.total2 == 0 {
            return Err(("n2", "total must be positive".into()));
        }
        if self.events1 > self.total1 {
            return Err((
                "e1",
                format!("events1 {} exceeds total1 {}", self.events1, self.total1),
            ));
        }
        if self.events2 > self.total2 {
            return Err((
                "e2",
                format!("events2 {} exceeds total2 {}", self.events2, self.total2),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSummaries {
    #[serde(rename = "m1")]
    pub mean1: f64,
    pub sd1: f64,
    pub n1: u64,
    #[serde(rename = "m2")]
    pub mean2: f64,
    pub sd2: f64,
    pub n2: u64,
}

impl ContinuousSummaries {
    pub fn swapped(&self) -> Self {
        ContinuousSummaries {
            mean1: self.mean2,
            sd1: self.sd2,
            n1: self.n2,
            mean2: self.mean1,
            sd2: self.sd1,
            n2: self.n1,
        }
    }

    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !self.mean1.is_finite() {
            return Err(("m1", "mean must be finite".into()));
        }
        if !self.mean2.is_finite() {
            return Err(("m2", "mean must be finite".into()));
        }
        if !(self.sd1 > 0.0 && self.sd1.is_finite()) {
            return Err(("sd1", format!("sd must be positive, got {}", self.sd1)));
        }
        if !(self.sd2 > 0.0 && self.sd2.is_finite()) {
            return Err(("sd2", format!("sd must be positive, got {}", self.sd2)));
        }
        if self.n1 < 2 {
            return Err(("n1", format!("need at least 2 participants, got {}", self.n1)));
        }
        if self.n2 < 2 {
            return Err(("n2", format!("need at least 2 participants, got {}", self.n2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecomputedEstimate {
    pub y: f64,
    pub se: f64,
    pub scale: EffectScale,
}

impl PrecomputedEstimate {
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if !self.y.is_finite() {
            return Err(("y", "estimate must be finite".into()));
        }
        if !(self.se > 0.0 && self.se.is_finite()) {
            return Err(("se", format!("standard error must be positive, got {}", self.se)));
        }
        Ok(())
    }
}

/// Wire form of a study: `label` plus exactly one of `dich`, `cont`, `est`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStudy {
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dich: Option<DichotomousCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cont: Option<ContinuousSummaries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    est: Option<PrecomputedEstimate>,
}

impl TryFrom<RawStudy> for Study {
    type Error = String;

    fn try_from(raw: RawStudy) -> std::result::Result<Self, String> {
        let data = match (raw.dich, raw.cont, raw.est) {
            (Some(d), None, None) => StudyData::Dichotomous(d),
            (None, Some(c), None) => StudyData::Continuous(c),
            (None, None, Some(e)) => StudyData::Estimate(e),
            _ => {
                return Err(format!(
                    "study `{}` must carry exactly one of dich, cont, est",
                    raw.label
                ))
            }
        };
        Ok(Study {
            label: raw.label,
            data,
        })
    }
}

impl From<Study> for RawStudy {
    fn from(s: Study) -> Self {
        let mut raw = RawStudy {
            label: s.label,
            dich: None,
            cont: None,
            est: None,
        };
        match s.data {
            StudyData::Dichotomous(d) => raw.dich = Some(d),
            StudyData::Continuous(c) => raw.cont = Some(c),
            StudyData::Estimate(e) => raw.est = Some(e),
        }
        raw
    }
}

impl Study {
    pub fn new(label: impl Into<String>, data: StudyData) -> Self {
        Study {
            label: label.into(),
            data,
        }
    }

    /// Checks the label and the per-kind numeric invariants.
    pub fn validate(&self) -> Result<()> {
        if self.label.trim().is_empty() {
            return Err(Error::invalid("label", "study label must not be empty"));
        }
        self.data.validate().map_err(|(field, message)| Error::Invalid {
            field: format!("{}.{}", self.label, field),
            message,
        })
    }
}

/// Immutable, validated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct DatabaseSnapshot {
    reviews: Vec<Review>,
    format_version: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCounts {
    pub reviews: usize,
    pub meta_analyses: usize,
    pub studies: usize,
}

impl DatabaseSnapshot {
    /// Validates every invariant and freezes the corpus. Errors name the
    /// offending review by its position (1-based) in `reviews`.
    pub fn new(reviews: Vec<Review>) -> Result<Self> {
        let mut reviews = reviews;
        let mut review_ids = HashSet::new();
        let mut ma_ids = HashSet::new();
        for review in &mut reviews {
            validate_review(review)?;
            if !review_ids.insert(review.id.clone()) {
                return Err(Error::DuplicateId(review.id.clone()));
            }
            for ma in &mut review.meta_analyses {
                if !ma_ids.insert(ma.id.clone()) {
                    return Err(Error::DuplicateId(ma.id.clone()));
                }
                ma.review_id = review.id.clone();
            }
        }
        Ok(DatabaseSnapshot {
            reviews,
            format_version: FORMAT_VERSION,
        })
    }

    pub fn empty() -> Self {
        DatabaseSnapshot {
            reviews: Vec::new(),
            format_version: FORMAT_VERSION,
        }
    }

    pub fn reviews(&self) -> &[Review] {
        &self.reviews
    }

    pub fn format_version(&self) -> i64 {
        self.format_version
    }

    pub fn review(&self, id: &str) -> Option<&Review> {
        self.reviews.iter().find(|r| r.id == id)
    }

    pub fn meta_analysis(&self, id: &str) -> Option<&MetaAnalysis> {
        self.reviews
            .iter()
            .flat_map(|r| r.meta_analyses.iter())
            .find(|m| m.id == id)
    }

    pub fn counts(&self) -> CorpusCounts {
        CorpusCounts {
            reviews: self.reviews.len(),
            meta_analyses: self.reviews.iter().map(|r| r.meta_analyses.len()).sum(),
            studies: self
                .reviews
                .iter()
                .flat_map(|r| r.meta_analyses.iter())
                .map(MetaAnalysis::study_count)
                .sum(),
        }
    }
}

pub(crate) fn validate_review(review: &Review) -> Result<()> {
    if review.id.is_empty() {
        return Err(Error::invalid("id", "review id must not be empty"));
    }
    if review.title.trim().is_empty() {
        return Err(Error::invalid("title", "review title must not be empty"));
    }
    if !(1900..=2100).contains(&review.year) {
        return Err(Error::invalid(
            "year",
            format!("year {} outside [1900, 2100]", review.year),
        ));
    }
    for ma in &review.meta_analyses {
        validate_meta_analysis(ma)?;
    }
    Ok(())
}

fn validate_meta_analysis(ma: &MetaAnalysis) -> Result<()> {
    if ma.id.is_empty() {
        return Err(Error::invalid("meta_analyses.id", "id must not be empty"));
    }
    if ma.subgroups.is_empty() {
        return Err(Error::invalid(
            format!("meta_analyses[{}].subgroups", ma.id),
            "at least one subgroup is required",
        ));
    }
    let mut sg_ids = HashSet::new();
    for sg in &ma.subgroups {
        if !sg_ids.insert(sg.id.as_str()) {
            return Err(Error::DuplicateId(format!("{}/{}", ma.id, sg.id)));
        }
        let mut labels = HashSet::new();
        for study in &sg.studies {
            study.validate()?;
            if !labels.insert(study.label.as_str()) {
                return Err(Error::invalid(
                    format!("{}/{}.studies", ma.id, sg.id),
                    format!("duplicate study label `{}`", study.label),
                ));
            }
            if let Some(kind) = study.data.kind() {
                if kind != ma.outcome_kind {
                    return Err(Error::invalid(
                        format!("{}/{}.{}", ma.id, sg.id, study.label),
                        format!("{kind} study in a {} meta-analysis", ma.outcome_kind),
                    ));
                }
            }
        }
    }
    Ok(())
}
