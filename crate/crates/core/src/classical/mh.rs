use serde::{Deserialize, Serialize};

use super::{Method, PooledResult};
use crate::dataset::DichotomousCounts;
use crate::effectsize::{EffectScale, ExclusionReason};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MhMeasure {
    Or,
    Rr,
    Rd,
}

impl MhMeasure {
    pub fn from_scale(scale: EffectScale) -> Option<Self> {
        match scale {
            EffectScale::LogOddsRatio | EffectScale::PetoLogOddsRatio => Some(MhMeasure::Or),
            EffectScale::LogRiskRatio => Some(MhMeasure::Rr),
            EffectScale::RiskDifference => Some(MhMeasure::Rd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MhResult {
    pub measure: MhMeasure,
    /// Log OR / log RR / RD with its standard error. `weights` are aligned
    /// with `included`.
    pub pooled: PooledResult,
    /// Indices of the input tables that entered the sums.
    pub included: Vec<usize>,
    pub excluded: Vec<(usize, ExclusionReason)>,
}

struct Cells {
    a: f64,
    b: f64,
    c: f64,
    d: f64,
    n1: f64,
    n2: f64,
    n: f64,
}

impl From<&DichotomousCounts> for Cells {
    fn from(t: &DichotomousCounts) -> Self {
        let (n1, n2) = (t.total1 as f64, t.total2 as f64);
        Cells {
            a: t.events1 as f64,
            b: n1 - t.events1 as f64,
            c: t.events2 as f64,
            d: n2 - t.events2 as f64,
            n1,
            n2,
            n: n1 + n2,
        }
    }
}

/// Mantel–Haenszel fixed-effect pooling on uncorrected counts.
///
/// Variances: Robins–Breslow–Greenland for the odds ratio, Greenland–Robins
/// for the risk ratio and risk difference. Tables without events (or
/// without non-events) in both arms are dropped from ratio measures.
pub fn mantel_haenszel(tables: &[DichotomousCounts], measure: MhMeasure) -> Result<MhResult> {
    if tables.is_empty() {
        return Err(Error::InsufficientStudies("no tables to pool".into()));
    }
    let mut included = Vec::new();
    let mut excluded = Vec::new();
    for (i, t) in tables.iter().enumerate() {
        t.validate()
            .map_err(|(f, m)| Error::invalid(format!("tables[{i}].{f}"), m))?;
        let reason = if measure == MhMeasure::Rd {
            None
        } else if t.events1 == 0 && t.events2 == 0 {
            Some(ExclusionReason::DoubleZero)
        } else if t.events1 == t.total1 && t.events2 == t.total2 {
            Some(ExclusionReason::DoubleTotal)
        } else {
            None
        };
        match reason {
            Some(r) => excluded.push((i, r)),
            None => included.push(i),
        }
    }
    let cells: Vec<Cells> = included.iter().map(|&i| Cells::from(&tables[i])).collect();
    if cells.is_empty() {
        return Err(Error::InsufficientStudies(
            "every table is non-estimable for Mantel-Haenszel pooling".into(),
        ));
    }

    let (y, var, weights) = match measure {
        MhMeasure::Or => {
            let r: Vec<f64> = cells.iter().map(|t| t.a * t.d / t.n).collect();
            let s: Vec<f64> = cells.iter().map(|t| t.b * t.c / t.n).collect();
            let (sr, ss): (f64, f64) = (r.iter().sum(), s.iter().sum());
            let mut v1 = 0.0;
            let mut v2 = 0.0;
            let mut v3 = 0.0;
            for ((t, ri), si) in cells.iter().zip(&r).zip(&s) {
                let p = (t.a + t.d) / t.n;
                let q = (t.b + t.c) / t.n;
                v1 += p * ri;
                v2 += p * si + q * ri;
                v3 += q * si;
            }
            let var = v1 / (2.0 * sr * sr) + v2 / (2.0 * sr * ss) + v3 / (2.0 * ss * ss);
            ((sr / ss).ln(), var, s)
        }
        MhMeasure::Rr => {
            let num: f64 = cells.iter().map(|t| t.a * t.n2 / t.n).sum();
            let w: Vec<f64> = cells.iter().map(|t| t.c * t.n1 / t.n).collect();
            let den: f64 = w.iter().sum();
            let p: f64 = cells
                .iter()
                .map(|t| (t.n1 * t.n2 * (t.a + t.c) - t.a * t.c * t.n) / (t.n * t.n))
                .sum();
            ((num / den).ln(), p / (num * den), w)
        }
        MhMeasure::Rd => {
            let w: Vec<f64> = cells.iter().map(|t| t.n1 * t.n2 / t.n).collect();
            let sw: f64 = w.iter().sum();
            let num: f64 = cells.iter().map(|t| (t.a * t.n2 - t.c * t.n1) / t.n).sum();
            let v: f64 = cells
                .iter()
                .map(|t| {
                    (t.a * t.b * t.n2.powi(3) + t.c * t.d * t.n1.powi(3)) / (t.n1 * t.n2 * t.n * t.n)
                })
                .sum();
            (num / sw, v / (sw * sw), w)
        }
    };
    if !(y.is_finite() && var.is_finite() && var > 0.0) {
        return Err(Error::Numerical(format!(
            "Mantel-Haenszel {measure:?} estimate is not estimable from these tables"
        )));
    }
    Ok(MhResult {
        measure,
        pooled: PooledResult::from_estimate(Method::FixedMh, y, var.sqrt(), &weights, 0.0),
        included,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::fixed_effect_iv;
    use crate::effectsize::{log_odds_ratio, log_risk_ratio, risk_difference, EffectEstimate};

    fn t(e1: u64, n1: u64, e2: u64, n2: u64) -> DichotomousCounts {
        DichotomousCounts::new(e1, n1, e2, n2)
    }

    #[test]
    fn single_table_reduces_to_sample_estimate() {
        let tab = t(7, 40, 15, 42);
        let rr = mantel_haenszel(&[tab], MhMeasure::Rr).unwrap().pooled;
        let (y, se) = log_risk_ratio(&tab).unwrap();
        assert!((rr.y - y).abs() < 1e-14, "{} {}", rr.y, y);
        assert!((rr.se - se).abs() < 1e-14);

        let or = mantel_haenszel(&[tab], MhMeasure::Or).unwrap().pooled;
        let (y, se) = log_odds_ratio(&tab).unwrap();
        assert!((or.y - y).abs() < 1e-14);
        assert!((or.se - se).abs() < 1e-14);

        let rd = mantel_haenszel(&[tab], MhMeasure::Rd).unwrap().pooled;
        let (y, se) = risk_difference(&tab).unwrap();
        assert!((rd.y - y).abs() < 1e-15);
        assert!((rd.se - se).abs() < 1e-15);
    }

    #[test]
    fn replication_keeps_point_estimate() {
        let a = t(4, 30, 9, 31);
        for m in [MhMeasure::Or, MhMeasure::Rr, MhMeasure::Rd] {
            let one = mantel_haenszel(&[a], m).unwrap().pooled;
            let two = mantel_haenszel(&[a, a], m).unwrap().pooled;
            assert!((one.y - two.y).abs() < 1e-14);
            assert!(two.se < one.se);
        }
    }

    #[test]
    fn close_to_inverse_variance_on_balanced_set() {
        let tables = [t(12, 100, 20, 100), t(15, 120, 24, 118), t(9, 90, 16, 92), t(14, 110, 22, 108)];
        let mh = mantel_haenszel(&tables, MhMeasure::Rr).unwrap().pooled;
        let est: Vec<EffectEstimate> = tables
            .iter()
            .map(|tab| {
                let (y, se) = log_risk_ratio(tab).unwrap();
                EffectEstimate::new("s", y, se, EffectScale::LogRiskRatio)
            })
            .collect();
        let iv = fixed_effect_iv(&est).unwrap();
        assert!(((mh.y - iv.y) / iv.y).abs() < 0.05, "{} vs {}", mh.y, iv.y);
    }

    #[test]
    fn zero_tables() {
        let r = mantel_haenszel(&[t(0, 10, 0, 12), t(2, 10, 5, 12)], MhMeasure::Rr).unwrap();
        assert_eq!(r.included, vec![1]);
        assert_eq!(r.excluded, vec![(0, ExclusionReason::DoubleZero)]);
        // single-zero tables enter uncorrected
        let r = mantel_haenszel(&[t(0, 10, 3, 12), t(2, 10, 5, 12)], MhMeasure::Or).unwrap();
        assert_eq!(r.included, vec![0, 1]);
        assert!(mantel_haenszel(&[t(0, 10, 0, 12)], MhMeasure::Or).is_err());
        assert_eq!(
            mantel_haenszel(&[t(0, 10, 0, 12), t(2, 10, 5, 12)], MhMeasure::Rd)
                .unwrap()
                .included,
            vec![0, 1]
        );
    }
}
