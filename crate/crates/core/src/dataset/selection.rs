use serde::{Deserialize, Serialize};

use super::{
    DatabaseSnapshot, DichotomousCounts, OutcomeKind, PrecomputedEstimate, Study, StudyData,
};
use crate::effectsize::EffectScale;
use crate::error::{Error, Result};

/// Which arm of the stored table is analysed as the first (treatment) group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetGroup {
    #[default]
    Group1,
    Group2,
}

impl std::str::FromStr for TargetGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "group1" | "1" => Ok(TargetGroup::Group1),
            "group2" | "2" => Ok(TargetGroup::Group2),
            _ => Err(Error::invalid("target_group", format!("expected group1 or group2, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionItem {
    pub meta_analysis_id: String,
    /// `None` includes every subgroup.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subgroup_ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Selection {
    pub items: Vec<SelectionItem>,
    #[serde(default)]
    pub target_group: TargetGroup,
    #[serde(default)]
    pub pooled: bool,
    pub scale: EffectScale,
    /// User-added studies, already oriented with the target group first.
    #[serde(default)]
    pub overlay: Vec<Study>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetStudy {
    #[serde(flatten)]
    pub study: Study,
    /// Added by the user rather than taken from the corpus.
    pub is_new: bool,
    /// Subgroup name for corpus studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subgroup: Option<String>,
}

impl SetStudy {
    pub fn label(&self) -> &str {
        &self.study.label
    }

    pub fn study_data(&self) -> &StudyData {
        &self.study.data
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudySet {
    pub name: String,
    pub meta_analysis_ids: Vec<String>,
    pub outcome_kind: OutcomeKind,
    pub group1_label: String,
    pub group2_label: String,
    pub studies: Vec<SetStudy>,
}

impl StudySet {
    pub fn len(&self) -> usize {
        self.studies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.studies.is_empty()
    }
}

/// Expands a selection into analysable study sets.
///
/// Corpus rows are swapped before return when the target group is group 2;
/// overlay rows are taken as entered (target group first) and appended to
/// every returned set.
pub fn resolve_selection(snapshot: &DatabaseSnapshot, selection: &Selection) -> Result<Vec<StudySet>> {
    if selection.items.is_empty() {
        return Err(Error::EmptySelection);
    }
    for study in &selection.overlay {
        study.validate()?;
    }

    let mut per_item = Vec::with_capacity(selection.items.len());
    for item in &selection.items {
        let ma = snapshot
            .meta_analysis(&item.meta_analysis_id)
            .ok_or_else(|| Error::UnknownId(item.meta_analysis_id.clone()))?;
        let subgroups: Vec<_> = match &item.subgroup_ids {
            None => ma.subgroups.iter().collect(),
            Some(ids) => ids
                .iter()
                .map(|id| {
                    ma.subgroup(id)
                        .ok_or_else(|| Error::UnknownId(format!("{}/{}", ma.id, id)))
                })
                .collect::<Result<_>>()?,
        };
        let swap = selection.target_group == TargetGroup::Group2;
        let studies = subgroups
            .iter()
            .flat_map(|sg| {
                sg.studies.iter().map(move |s| SetStudy {
                    study: Study {
                        label: s.label.clone(),
                        data: if swap { s.data.swapped() } else { s.data },
                    },
                    is_new: false,
                    subgroup: Some(sg.name.clone()),
                })
            })
            .collect();
        let (g1, g2) = if swap {
            (ma.group2_label.clone(), ma.group1_label.clone())
        } else {
            (ma.group1_label.clone(), ma.group2_label.clone())
        };
        per_item.push(StudySet {
            name: ma.name.clone(),
            meta_analysis_ids: vec![ma.id.clone()],
            outcome_kind: ma.outcome_kind,
            group1_label: g1,
            group2_label: g2,
            studies,
        });
    }

    let mut sets = if selection.pooled {
        let kind = per_item[0].outcome_kind;
        if per_item.iter().any(|s| s.outcome_kind != kind) {
            return Err(Error::invalid(
                "selection.items",
                "pooled meta-analyses mix dichotomous and continuous outcomes",
            ));
        }
        let same_labels = per_item
            .iter()
            .all(|s| s.group1_label == per_item[0].group1_label && s.group2_label == per_item[0].group2_label);
        let (g1, g2) = if same_labels {
            (per_item[0].group1_label.clone(), per_item[0].group2_label.clone())
        } else {
            ("Group 1".to_string(), "Group 2".to_string())
        };
        let name = per_item.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join(" + ");
        let ids = per_item.iter().flat_map(|s| s.meta_analysis_ids.clone()).collect();
        let studies = per_item.into_iter().flat_map(|s| s.studies).collect();
        vec![StudySet {
            name,
            meta_analysis_ids: ids,
            outcome_kind: kind,
            group1_label: g1,
            group2_label: g2,
            studies,
        }]
    } else {
        per_item
    };

    for set in &mut sets {
        set.studies.extend(selection.overlay.iter().map(|s| SetStudy {
            study: s.clone(),
            is_new: true,
            subgroup: None,
        }));
        if set.studies.is_empty() {
            return Err(Error::EmptySelection);
        }
    }
    Ok(sets)
}

/// Parses an added-study shorthand: `LABEL:e1/n1,e2/n2` for counts or
/// `LABEL:y±se` (also `y+-se`) for a precomputed estimate on `scale`.
pub fn parse_study_spec(spec: &str, scale: EffectScale) -> Result<Study> {
    let bad = |msg: &str| Error::invalid("add", format!("{msg} in `{spec}`"));
    let (label, body) = spec.rsplit_once(':').ok_or_else(|| bad("missing `:`"))?;
    let label = label.trim();
    if label.is_empty() {
        return Err(bad("empty label"));
    }
    let body = body.trim();
    let data = if let Some((y, se)) = body.split_once('±').or_else(|| body.split_once("+-")) {
        let y: f64 = y.trim().parse().map_err(|_| bad("bad estimate"))?;
        let se: f64 = se.trim().parse().map_err(|_| bad("bad standard error"))?;
        StudyData::Estimate(PrecomputedEstimate { y, se, scale })
    } else {
        let (g1, g2) = body.split_once(',').ok_or_else(|| bad("expected e1/n1,e2/n2"))?;
        let arm = |s: &str| -> Result<(u64, u64)> {
            let (e, n) = s.split_once('/').ok_or_else(|| bad("expected events/total"))?;
            Ok((
                e.trim().parse().map_err(|_| bad("bad event count"))?,
                n.trim().parse().map_err(|_| bad("bad total"))?,
            ))
        };
        let (e1, n1) = arm(g1)?;
        let (e2, n2) = arm(g2)?;
        StudyData::Dichotomous(DichotomousCounts::new(e1, n1, e2, n2))
    };
    let study = Study::new(label, data);
    study.validate()?;
    Ok(study)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MetaAnalysis, Review, Subgroup};

    fn dich(label: &str, e1: u64, n1: u64, e2: u64, n2: u64) -> Study {
        Study::new(label, StudyData::Dichotomous(DichotomousCounts::new(e1, n1, e2, n2)))
    }

    fn snapshot() -> DatabaseSnapshot {
        let ma = |id: &str, n: usize| MetaAnalysis {
            id: id.into(),
            review_id: String::new(),
            name: format!("Outcome {id}"),
            outcome_kind: OutcomeKind::Dichotomous,
            group1_label: "Placebo".into(),
            group2_label: "Albendazole".into(),
            subgroups: vec![
                Subgroup {
                    id: "adults".into(),
                    name: "Adults (16 years old or older)".into(),
                    studies: vec![dich("Adult 2001", 3, 30, 2, 30)],
                },
                Subgroup {
                    id: "children".into(),
                    name: "Children (under 16 years old)".into(),
                    studies: (0..n)
                        .map(|i| dich(&format!("Child{i} 199{i}"), 10 + i as u64, 50, 5, 50))
                        .collect(),
                },
            ],
        };
        DatabaseSnapshot::new(vec![Review {
            id: "r1".into(),
            title: "Anthelmintics for people with neurocysticercosis".into(),
            year: 2021,
            topics: vec![],
            keywords: vec!["Albendazole".into()],
            meta_analyses: vec![ma("ma1", 4), ma("ma2", 2)],
        }])
        .unwrap()
    }

    fn sel(items: Vec<SelectionItem>) -> Selection {
        Selection {
            items,
            target_group: TargetGroup::Group1,
            pooled: false,
            scale: EffectScale::LogRiskRatio,
            overlay: vec![],
        }
    }

    #[test]
    fn children_only_with_overlay_and_target_swap() {
        let mut s = sel(vec![SelectionItem {
            meta_analysis_id: "ma1".into(),
            subgroup_ids: Some(vec!["children".into()]),
        }]);
        s.target_group = TargetGroup::Group2;
        s.overlay = vec![dich("Singh 2022", 1, 19, 1, 20)];
        let sets = resolve_selection(&snapshot(), &s).unwrap();
        assert_eq!(sets.len(), 1);
        let set = &sets[0];
        assert_eq!(set.len(), 5);
        assert_eq!(set.group1_label, "Albendazole");
        // corpus rows carry albendazole counts (stored as group 2) first
        assert_eq!(
            set.studies[0].study_data(),
            &StudyData::Dichotomous(DichotomousCounts::new(5, 50, 10, 50))
        );
        let last = set.studies.last().unwrap();
        assert!(last.is_new);
        assert_eq!(
            last.study_data(),
            &StudyData::Dichotomous(DichotomousCounts::new(1, 19, 1, 20))
        );
    }

    #[test]
    fn pooled_concatenates() {
        let mut s = sel(vec![
            SelectionItem {
                meta_analysis_id: "ma1".into(),
                subgroup_ids: Some(vec!["children".into()]),
            },
            SelectionItem {
                meta_analysis_id: "ma2".into(),
                subgroup_ids: None,
            },
        ]);
        s.pooled = true;
        s.overlay = vec![dich("New 2023", 1, 10, 2, 10)];
        let sets = resolve_selection(&snapshot(), &s).unwrap();
        assert_eq!(sets.len(), 1);
        assert_eq!(sets[0].len(), 4 + 3 + 1);

        s.pooled = false;
        let sets = resolve_selection(&snapshot(), &s).unwrap();
        assert_eq!(sets.iter().map(StudySet::len).collect::<Vec<_>>(), vec![5, 4]);
    }

    #[test]
    fn deselecting_every_subgroup_is_empty() {
        let s = sel(vec![SelectionItem {
            meta_analysis_id: "ma1".into(),
            subgroup_ids: Some(vec![]),
        }]);
        assert!(matches!(resolve_selection(&snapshot(), &s), Err(Error::EmptySelection)));
        assert!(matches!(resolve_selection(&snapshot(), &sel(vec![])), Err(Error::EmptySelection)));
    }

    #[test]
    fn unknown_ids_are_named() {
        let s = sel(vec![SelectionItem {
            meta_analysis_id: "ma1".into(),
            subgroup_ids: Some(vec!["teens".into()]),
        }]);
        match resolve_selection(&snapshot(), &s) {
            Err(Error::UnknownId(id)) => assert_eq!(id, "ma1/teens"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn group2_equals_manual_swap_of_group1() {
        let base = sel(vec![SelectionItem {
            meta_analysis_id: "ma1".into(),
            subgroup_ids: None,
        }]);
        let mut swapped = base.clone();
        swapped.target_group = TargetGroup::Group2;
        let a = resolve_selection(&snapshot(), &base).unwrap();
        let b = resolve_selection(&snapshot(), &swapped).unwrap();
        for (x, y) in a[0].studies.iter().zip(&b[0].studies) {
            assert_eq!(x.study_data().swapped(), *y.study_data());
        }
    }

    #[test]
    fn study_spec_grammar() {
        let s = parse_study_spec("Singh 2022:1/19,1/20", EffectScale::LogRiskRatio).unwrap();
        assert_eq!(s.label, "Singh 2022");
        assert_eq!(s.data, StudyData::Dichotomous(DichotomousCounts::new(1, 19, 1, 20)));
        let e = parse_study_spec("X 2020:0.05±1.38", EffectScale::LogRiskRatio).unwrap();
        assert_eq!(
            e.data,
            StudyData::Estimate(PrecomputedEstimate {
                y: 0.05,
                se: 1.38,
                scale: EffectScale::LogRiskRatio
            })
        );
        assert!(parse_study_spec("X 2020:-0.1+-0.5", EffectScale::RiskDifference).is_ok());
        assert!(parse_study_spec("Bad:5/4,1/2", EffectScale::LogRiskRatio).is_err());
        assert!(parse_study_spec("nolabel", EffectScale::LogRiskRatio).is_err());
        assert!(parse_study_spec("X:1±0", EffectScale::LogRiskRatio).is_err());
    }
}
