//! Review filtering by topic, keyword or title text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataset::DatabaseSnapshot;
use crate::error::{Error, Result};

/// Lowercased label → sorted review ids, plus lowercased titles.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SearchIndex {
    keywords: BTreeMap<String, Vec<String>>,
    topics: BTreeMap<String, Vec<String>>,
    titles: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterMode {
    Topics,
    Keywords,
    Title,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "topics" => Ok(FilterMode::Topics),
            "keywords" => Ok(FilterMode::Keywords),
            "title" => Ok(FilterMode::Title),
            other => Err(Error::invalid(
                "mode",
                format!("expected topics, keywords or title, got `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Query {
    Labels(Vec<String>),
    Text(String),
}

impl SearchIndex {
    pub fn build(snapshot: &DatabaseSnapshot) -> Self {
        let mut index = SearchIndex::default();
        for review in snapshot.reviews() {
            for k in &review.keywords {
                index.keywords.entry(k.to_lowercase()).or_default().push(review.id.clone());
            }
            for t in &review.topics {
                index.topics.entry(t.to_lowercase()).or_default().push(review.id.clone());
            }
            index.titles.push((review.id.clone(), review.title.to_lowercase()));
        }
        for postings in index.keywords.values_mut().chain(index.topics.values_mut()) {
            postings.sort();
            postings.dedup();
        }
        index.titles.sort();
        index
    }

    pub fn keyword_postings(&self, label: &str) -> &[String] {
        self.keywords.get(&label.to_lowercase()).map_or(&[], Vec::as_slice)
    }

    pub fn topic_postings(&self, label: &str) -> &[String] {
        self.topics.get(&label.to_lowercase()).map_or(&[], Vec::as_slice)
    }

    /// All keyword labels (lowercased) in sorted order.
    pub fn keywords(&self) -> impl Iterator<Item = &str> {
        self.keywords.keys().map(String::as_str)
    }

    pub fn topics(&self) -> impl Iterator<Item = &str> {
        self.topics.keys().map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.titles.is_empty()
    }

    /// Label modes return the union of postings; title mode matches a
    /// case-insensitive substring. Results are sorted by review id.
    pub fn filter(&self, mode: FilterMode, query: &Query) -> Vec<String> {
        let mut out: Vec<String> = match (mode, query) {
            (FilterMode::Title, q) => {
                let needle = match q {
                    Query::Text(t) => t.to_lowercase(),
                    Query::Labels(l) => l.join(" ").to_lowercase(),
                };
                self.titles
                    .iter()
                    .filter(|(_, title)| title.contains(&needle))
                    .map(|(id, _)| id.clone())
                    .collect()
            }
            (mode, q) => {
                let labels: Vec<&str> = match q {
                    Query::Labels(l) => l.iter().map(String::as_str).collect(),
                    Query::Text(t) => t.split(',').map(str::trim).filter(|s| !s.is_empty()).collect(),
                };
                labels
                    .into_iter()
                    .flat_map(|l| match mode {
                        FilterMode::Keywords => self.keyword_postings(l),
                        _ => self.topic_postings(l),
                    })
                    .cloned()
                    .collect()
            }
        };
        out.sort();
        out.dedup();
        out
    }
}

pub fn build_index(snapshot: &DatabaseSnapshot) -> SearchIndex {
    SearchIndex::build(snapshot)
}

pub fn filter_reviews(index: &SearchIndex, mode: FilterMode, query: &Query) -> Vec<String> {
    index.filter(mode, query)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaAnalysisListing {
    pub review_id: String,
    pub review_title: String,
    pub meta_analysis_id: String,
    pub name: String,
    pub outcome_kind: crate::dataset::OutcomeKind,
    pub subgroups: Vec<SubgroupListing>,
    pub group1_label: String,
    pub group2_label: String,
    pub study_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubgroupListing {
    pub id: String,
    pub name: String,
    pub study_count: usize,
}

/// Lists meta-analyses of the given reviews, ordered by review id then
/// meta-analysis id.
pub fn list_meta_analyses(
    snapshot: &DatabaseSnapshot,
    review_ids: &[String],
) -> Result<Vec<MetaAnalysisListing>> {
    let mut reviews = review_ids
        .iter()
        .map(|id| snapshot.review(id).ok_or_else(|| Error::UnknownId(id.clone())))
        .collect::<Result<Vec<_>>>()?;
    reviews.sort_by(|a, b| a.id.cmp(&b.id));
    reviews.dedup_by(|a, b| a.id == b.id);

    let mut rows = Vec::new();
    for review in reviews {
        let mut mas: Vec<_> = review.meta_analyses.iter().collect();
        mas.sort_by(|a, b| a.id.cmp(&b.id));
        rows.extend(mas.into_iter().map(|ma| MetaAnalysisListing {
            review_id: review.id.clone(),
            review_title: review.title.clone(),
            meta_analysis_id: ma.id.clone(),
            name: ma.name.clone(),
            outcome_kind: ma.outcome_kind,
            subgroups: ma
                .subgroups
                .iter()
                .map(|s| SubgroupListing {
                    id: s.id.clone(),
                    name: s.name.clone(),
                    study_count: s.studies.len(),
                })
                .collect(),
            group1_label: ma.group1_label.clone(),
            group2_label: ma.group2_label.clone(),
            study_count: ma.study_count(),
        }));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{MetaAnalysis, OutcomeKind, Review, Subgroup};

    fn review(id: &str, title: &str, keywords: &[&str], topics: &[&str], mas: usize) -> Review {
        Review {
            id: id.into(),
            title: title.into(),
            year: 2021,
            topics: topics.iter().map(|s| s.to_string()).collect(),
            keywords: keywords.iter().map(|s| s.to_string()).collect(),
            meta_analyses: (0..mas)
                .map(|i| MetaAnalysis {
                    id: format!("{id}-ma{}", mas - i),
                    review_id: String::new(),
                    name: format!("Outcome {i}"),
                    outcome_kind: OutcomeKind::Dichotomous,
                    group1_label: "A".into(),
                    group2_label: "B".into(),
                    subgroups: vec![
                        Subgroup {
                            id: "adults".into(),
                            name: "Adults (16 years old or older)".into(),
                            studies: vec![],
                        },
                        Subgroup {
                            id: "children".into(),
                            name: "Children (under 16 years old)".into(),
                            studies: vec![],
                        },
                    ],
                })
                .collect(),
        }
    }

    fn snap() -> DatabaseSnapshot {
        DatabaseSnapshot::new(vec![
            review(
                "cd2",
                "Anthelmintics for people with neurocysticercosis",
                &["Albendazole", "Praziquantel"],
                &["Neurology", "Infectious disease"],
                2,
            ),
            review("cd1", "Antiepileptic drugs for seizures", &["Valproate"], &["Neurology"], 1),
        ])
        .unwrap()
    }

    #[test]
    fn keyword_index_is_case_insensitive() {
        let idx = build_index(&snap());
        assert_eq!(idx.keyword_postings("albendazole"), ["cd2".to_string()]);
        assert_eq!(idx.keyword_postings("ALBENDAZOLE"), ["cd2".to_string()]);
        assert_eq!(idx.topic_postings("neurology"), ["cd1".to_string(), "cd2".to_string()]);
        assert!(build_index(&DatabaseSnapshot::empty()).is_empty());
    }

    #[test]
    fn filters() {
        let idx = build_index(&snap());
        let kw = |l: &[&str]| {
            idx.filter(
                FilterMode::Keywords,
                &Query::Labels(l.iter().map(|s| s.to_string()).collect()),
            )
        };
        assert_eq!(kw(&["albendazole"]), vec!["cd2"]);
        assert_eq!(kw(&["albendazole", "valproate"]), vec!["cd1", "cd2"]);
        assert!(kw(&["unknown"]).is_empty());
        // keyword match is on the whole label, not a substring
        assert!(kw(&["albend"]).is_empty());
        assert_eq!(idx.filter(FilterMode::Title, &Query::Text(String::new())), vec!["cd1", "cd2"]);
        assert_eq!(
            idx.filter(FilterMode::Title, &Query::Text("NEUROCYSTICERCOSIS".into())),
            vec!["cd2"]
        );
    }

    #[test]
    fn listing_order_and_subgroups() {
        let s = snap();
        let rows = list_meta_analyses(&s, &["cd2".into(), "cd1".into()]).unwrap();
        let ids: Vec<_> = rows.iter().map(|r| r.meta_analysis_id.as_str()).collect();
        assert_eq!(ids, vec!["cd1-ma1", "cd2-ma1", "cd2-ma2"]);
        let names: Vec<_> = rows[1].subgroups.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(
            names,
            vec!["Adults (16 years old or older)", "Children (under 16 years old)"]
        );
        assert!(list_meta_analyses(&s, &[]).unwrap().is_empty());
        assert!(matches!(
            list_meta_analyses(&s, &["nope".into()]),
            Err(Error::UnknownId(_))
        ));
    }
}
