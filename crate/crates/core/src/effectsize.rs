//! Reduction of raw study data to `(estimate, standard error)` pairs.
//!
//! Notation for a 2×2 table: `a` events and `b` non-events in group 1,
//! `c` events and `d` non-events in group 2.
//!
//! Zero cells: logOR and logRR add 0.5 to all four cells when any cell is
//! zero. Tables with no events in either group, or only events in both,
//! carry no information on a ratio scale and are reported as exclusions.
//! Peto uses the uncorrected table. Risk differences keep every table and
//! only correct the variance when it would otherwise be zero.

use serde::{Deserialize, Serialize};

use crate::dataset::{
    ContinuousSummaries, DichotomousCounts, OutcomeKind, StudyData, StudySet,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EffectScale {
    #[serde(rename = "logor")]
    LogOddsRatio,
    #[serde(rename = "peto")]
    PetoLogOddsRatio,
    #[serde(rename = "logrr")]
    LogRiskRatio,
    #[serde(rename = "rd")]
    RiskDifference,
    #[serde(rename = "md")]
    MeanDifference,
    #[serde(rename = "g")]
    HedgesG,
}

impl EffectScale {
    pub const ALL: [EffectScale; 6] = [
        EffectScale::LogOddsRatio,
        EffectScale::PetoLogOddsRatio,
        EffectScale::LogRiskRatio,
        EffectScale::RiskDifference,
        EffectScale::MeanDifference,
        EffectScale::HedgesG,
    ];

    pub fn code(self) -> &'static str {
        match self {
            EffectScale::LogOddsRatio => "logor",
            EffectScale::PetoLogOddsRatio => "peto",
            EffectScale::LogRiskRatio => "logrr",
            EffectScale::RiskDifference => "rd",
            EffectScale::MeanDifference => "md",
            EffectScale::HedgesG => "g",
        }
    }

    /// Short label used in tables and plot axes.
    pub fn label(self) -> &'static str {
        match self {
            EffectScale::LogOddsRatio => "logOR",
            EffectScale::PetoLogOddsRatio => "log Peto OR",
            EffectScale::LogRiskRatio => "logRR",
            EffectScale::RiskDifference => "RD",
            EffectScale::MeanDifference => "MD",
            EffectScale::HedgesG => "Hedges' g",
        }
    }

    /// Label of the exponentiated scale, for log scales.
    pub fn natural_label(self) -> Option<&'static str> {
        match self {
            EffectScale::LogOddsRatio => Some("OR"),
            EffectScale::PetoLogOddsRatio => Some("Peto OR"),
            EffectScale::LogRiskRatio => Some("RR"),
            _ => None,
        }
    }

    pub fn is_log(self) -> bool {
        self.natural_label().is_some()
    }

    pub fn outcome_kind(self) -> OutcomeKind {
        match self {
            EffectScale::MeanDifference | EffectScale::HedgesG => OutcomeKind::Continuous,
            _ => OutcomeKind::Dichotomous,
        }
    }
}

impl std::fmt::Display for EffectScale {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for EffectScale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "logor" | "or" => EffectScale::LogOddsRatio,
            "peto" | "petoor" | "logpeto" => EffectScale::PetoLogOddsRatio,
            "logrr" | "rr" => EffectScale::LogRiskRatio,
            "rd" => EffectScale::RiskDifference,
            "md" => EffectScale::MeanDifference,
            "g" | "smd" | "hedges" => EffectScale::HedgesG,
            _ => {
                return Err(Error::invalid(
                    "scale",
                    format!("unknown scale `{s}` (logor, peto, logrr, rd, md, g)"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub label: String,
    pub y: f64,
    pub se: f64,
    pub scale: EffectScale,
    #[serde(default)]
    pub is_new: bool,
}

impl EffectEstimate {
    pub fn new(label: impl Into<String>, y: f64, se: f64, scale: EffectScale) -> Self {
        EffectEstimate {
            label: label.into(),
            y,
            se,
            scale,
            is_new: false,
        }
    }

    /// Inverse-variance weight `1/se²`.
    pub fn weight_fe(&self) -> f64 {
        1.0 / (self.se * self.se)
    }

    pub fn variance(&self) -> f64 {
        self.se * self.se
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    /// No events in either group.
    DoubleZero,
    /// Every participant had the event in both groups.
    DoubleTotal,
    /// Zero pooled standard deviation.
    ZeroVariance,
}

impl std::fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExclusionReason::DoubleZero => "no events in either group",
            ExclusionReason::DoubleTotal => "all participants had events in both groups",
            ExclusionReason::ZeroVariance => "zero pooled standard deviation",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Exclusion {
    pub label: String,
    pub reason: ExclusionReason,
}

/// Per-study estimates that entered an analysis plus those that could not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSet {
    pub estimates: Vec<EffectEstimate>,
    pub exclusions: Vec<Exclusion>,
}

type Estimable = std::result::Result<(f64, f64), ExclusionReason>;

struct Table {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
}

impl Table {
    fn from_counts(t: &DichotomousCounts) -> Self {
        Table {
            a: t.events1 as f64,
            b: (t.total1 - t.events1) as f64,
            c: t.events2 as f64,
            d: (t.total2 - t.events2) as f64,
        }
    }

    fn corrected(t: &DichotomousCounts) -> Self {
        let mut tab = Table::from_counts(t);
        if tab.a == 0.0 || tab.b == 0.0 || tab.c == 0.0 || tab.d == 0.0 {
            tab.a += 0.5;
            tab.b += 0.5;
            tab.c += 0.5;
            tab.d += 0.5;
        }
        tab
    }
}

fn ratio_guard(t: &DichotomousCounts) -> std::result::Result<(), ExclusionReason> {
    if t.events1 == 0 && t.events2 == 0 {
        Err(ExclusionReason::DoubleZero)
    } else if t.events1 == t.total1 && t.events2 == t.total2 {
        Err(ExclusionReason::DoubleTotal)
    } else {
        Ok(())
    }
}

pub fn log_odds_ratio(t: &DichotomousCounts) -> Estimable {
    ratio_guard(t)?;
    let Table { a, b, c, d } = Table::corrected(t);
    Ok(((a * d / (b * c)).ln(), (1.0 / a + 1.0 / b + 1.0 / c + 1.0 / d).sqrt()))
}

pub fn peto_log_odds_ratio(t: &DichotomousCounts) -> Estimable {
    ratio_guard(t)?;
    let a = t.events1 as f64;
    let n1 = t.total1 as f64;
    let n2 = t.total2 as f64;
    let n = n1 + n2;
    let m = (t.events1 + t.events2) as f64;
    let expected = n1 * m / n;
    let v = n1 * n2 * m * (n - m) / (n * n * (n - 1.0));
    Ok(((a - expected) / v, 1.0 / v.sqrt()))
}

pub fn log_risk_ratio(t: &DichotomousCounts) -> Estimable {
    ratio_guard(t)?;
    let Table { a, b, c, d } = Table::corrected(t);
    let n1 = a + b;
    let n2 = c + d;
    Ok((
        ((a / n1) / (c / n2)).ln(),
        (1.0 / a - 1.0 / n1 + 1.0 / c - 1.0 / n2).sqrt(),
    ))
}

pub fn risk_difference(t: &DichotomousCounts) -> Estimable {
    let Table { a, b, c, d } = Table::from_counts(t);
    let (n1, n2) = (a + b, c + d);
    let (p1, p2) = (a / n1, c / n2);
    let mut var = p1 * (1.0 - p1) / n1 + p2 * (1.0 - p2) / n2;
    if var == 0.0 {
        let Table { a, b, c, d } = Table {
            a: a + 0.5,
            b: b + 0.5,
            c: c + 0.5,
            d: d + 0.5,
        };
        let (n1, n2) = (a + b, c + d);
        let (q1, q2) = (a / n1, c / n2);
        var = q1 * (1.0 - q1) / n1 + q2 * (1.0 - q2) / n2;
    }
    Ok((p1 - p2, var.sqrt()))
}

pub fn mean_difference(s: &ContinuousSummaries) -> Estimable {
    let (n1, n2) = (s.n1 as f64, s.n2 as f64);
    Ok((s.mean1 - s.mean2, (s.sd1 * s.sd1 / n1 + s.sd2 * s.sd2 / n2).sqrt()))
}

pub fn hedges_g(s: &ContinuousSummaries) -> Estimable {
    let (n1, n2) = (s.n1 as f64, s.n2 as f64);
    let df = n1 + n2 - 2.0;
    let pooled = (((n1 - 1.0) * s.sd1 * s.sd1 + (n2 - 1.0) * s.sd2 * s.sd2) / df).sqrt();
    if !(pooled > 0.0) {
        return Err(ExclusionReason::ZeroVariance);
    }
    let d = (s.mean1 - s.mean2) / pooled;
    let j = 1.0 - 3.0 / (4.0 * df - 1.0);
    let var = j * j * ((n1 + n2) / (n1 * n2) + d * d / (2.0 * df));
    Ok((j * d, var.sqrt()))
}

/// Computes one study's estimate on `scale`. The outer error covers scale
/// and data-kind mismatches; the inner one marks non-estimable studies.
pub fn estimate_study(
    label: &str,
    data: &StudyData,
    scale: EffectScale,
) -> Result<std::result::Result<EffectEstimate, ExclusionReason>> {
    let raw = match (data, scale.outcome_kind()) {
        (StudyData::Estimate(e), _) => {
            if e.scale != scale {
                return Err(Error::PrecomputedScale {
                    label: label.into(),
                    found: e.scale.to_string(),
                    expected: scale.to_string(),
                });
            }
            Ok((e.y, e.se))
        }
        (StudyData::Dichotomous(t), OutcomeKind::Dichotomous) => match scale {
            EffectScale::LogOddsRatio => log_odds_ratio(t),
            EffectScale::PetoLogOddsRatio => peto_log_odds_ratio(t),
            EffectScale::LogRiskRatio => log_risk_ratio(t),
            _ => risk_difference(t),
        },
        (StudyData::Continuous(s), OutcomeKind::Continuous) => match scale {
            EffectScale::MeanDifference => mean_difference(s),
            _ => hedges_g(s),
        },
        (other, _) => {
            return Err(Error::ScaleMismatch {
                scale: scale.to_string(),
                kind: other.kind().map(|k| k.to_string()).unwrap_or_default(),
            })
        }
    };
    Ok(raw.map(|(y, se)| EffectEstimate::new(label, y, se, scale)))
}

pub fn compute_effects(set: &StudySet, scale: EffectScale) -> Result<EffectSet> {
    if set.outcome_kind != scale.outcome_kind() {
        return Err(Error::ScaleMismatch {
            scale: scale.to_string(),
            kind: set.outcome_kind.to_string(),
        });
    }
    let mut estimates = Vec::with_capacity(set.len());
    let mut exclusions = Vec::new();
    for study in &set.studies {
        match estimate_study(study.label(), study.study_data(), scale)? {
            Ok(mut e) => {
                if !(e.y.is_finite() && e.se.is_finite() && e.se > 0.0) {
                    return Err(Error::Numerical(format!(
                        "study `{}` produced a non-finite estimate",
                        study.label()
                    )));
                }
                e.is_new = study.is_new;
                estimates.push(e);
            }
            Err(reason) => exclusions.push(Exclusion {
                label: study.label().to_string(),
                reason,
            }),
        }
    }
    Ok(EffectSet {
        estimates,
        exclusions,
    })
}
