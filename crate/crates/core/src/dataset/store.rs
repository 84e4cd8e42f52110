//! Line-oriented corpus storage: a header object followed by one JSON
//! object per review.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{validate_review, DatabaseSnapshot, Review};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: i64 = 1;
const KIND: &str = "cochrane-corpus";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: i64,
    kind: String,
}

pub fn load_database(path: impl AsRef<Path>) -> Result<DatabaseSnapshot> {
    let text = std::fs::read_to_string(path)?;
    parse_database(&text)
}

pub fn parse_database(text: &str) -> Result<DatabaseSnapshot> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (line_no, header_line) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or(Error::Load {
            line: 1,
            field: "header".into(),
            message: "empty corpus file".into(),
        })?;
    let header: Header = parse_line(line_no, header_line)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.format_version,
            expected: FORMAT_VERSION,
        });
    }
    if header.kind != KIND {
        return Err(Error::Load {
            line: line_no,
            field: "kind".into(),
            message: format!("expected `{KIND}`, found `{}`", header.kind),
        });
    }

    let mut reviews = Vec::new();
    let mut seen = HashSet::new();
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let review: Review = parse_line(line_no, line)?;
        validate_review(&review).map_err(|e| at_line(line_no, e))?;
        let ids = std::iter::once(("review", &review.id))
            .chain(review.meta_analyses.iter().map(|m| ("meta-analysis", &m.id)));
        for (kind, id) in ids {
            if !seen.insert((kind, id.clone())) {
                return Err(at_line(line_no, Error::DuplicateId(id.clone())));
            }
        }
        reviews.push(review);
    }
    DatabaseSnapshot::new(reviews)
}

/// Canonical serialization. `parse_database(serialize_database(s))` yields `s`
/// and the text of a canonical file survives a load/serialize cycle unchanged.
pub fn serialize_database(snapshot: &DatabaseSnapshot) -> String {
    let mut out = serde_json::to_string(&Header {
        format_version: snapshot.format_version(),
        kind: KIND.into(),
    })
    .expect("header serializes");
    out.push('\n');
    for review in snapshot.reviews() {
        out.push_str(&serde_json::to_string(review).expect("review serializes"));
        out.push('\n');
    }
    out
}

fn parse_line<T: serde::de::DeserializeOwned>(line: usize, text: &str) -> Result<T> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Load {
            line,
            field: if path == "." { "record".into() } else { path },
            message: e.into_inner().to_string(),
        }
    })
}

fn at_line(line: usize, e: Error) -> Error {
    match e {
        Error::Invalid { field, message } => Error::Load {
            line,
            field,
            message,
        },
        Error::DuplicateId(id) => Error::Load {
            line,
            field: "id".into(),
            message: format!("duplicate id `{id}`"),
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"format_version":1,"kind":"cochrane-corpus"}"#;

    fn review_line(id: &str, studies: &str) -> String {
        format!(
            r#"{{"id":"{id}","title":"T {id}","year":2020,"topics":[],"keywords":["k"],"meta_analyses":[{{"id":"{id}-ma1","name":"Outcome","outcome_kind":"dich","group1_label":"A","group2_label":"B","subgroups":[{{"id":"sg1","name":"All","studies":[{studies}]}}]}}]}}"#
        )
    }

    #[test]
    fn counts_are_preserved() {
        let studies = (1..=4)
            .map(|i| format!(r#"{{"label":"S{i} 2000","dich":{{"e1":1,"n1":10,"e2":2,"n2":10}}}}"#))
            .collect::<Vec<_>>()
            .join(",");
        let text = format!("{HEADER}\n{}\n", review_line("r1", &studies));
        let snap = parse_database(&text).unwrap();
        let c = snap.counts();
        assert_eq!((c.reviews, c.meta_analyses, c.studies), (1, 1, 4));
        assert_eq!(serialize_database(&snap), text);
    }

    #[test]
    fn invariant_violation_cites_line() {
        let mut text = String::from(HEADER);
        text.push('\n');
        for i in 2..12 {
            let s = r#"{"label":"S 2000","dich":{"e1":1,"n1":10,"e2":2,"n2":10}}"#;
            text.push_str(&review_line(&format!("r{i}"), s));
            text.push('\n');
        }
        let bad = r#"{"label":"Bad 2001","dich":{"e1":11,"n1":10,"e2":2,"n2":10}}"#;
        text.push_str(&review_line("r12", bad));
        text.push('\n');
        match parse_database(&text) {
            Err(Error::Load { line, field, .. }) => {
                assert_eq!(line, 12);
                assert!(field.contains("e1"), "{field}");
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_field_is_named() {
        let text = format!(
            "{HEADER}\n{}\n",
            review_line("r1", r#"{"label":"S 2000","dich":{"e1":1,"n1":"ten","e2":2,"n2":10}}"#)
        );
        let err = parse_database(&text).unwrap_err();
        match err {
            Error::Load { line, field, .. } => {
                assert_eq!(line, 2);
                assert!(field.ends_with("dich.n1"), "{field}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn version_mismatch() {
        let text = "{\"format_version\":2,\"kind\":\"cochrane-corpus\"}\n";
        assert!(matches!(
            parse_database(text),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn duplicate_meta_analysis_ids_rejected() {
        let s = r#"{"label":"S 2000","dich":{"e1":1,"n1":10,"e2":2,"n2":10}}"#;
        let a = review_line("r1", s);
        let b = review_line("r2", s).replace("r2-ma1", "r1-ma1");
        let text = format!("{HEADER}\n{a}\n{b}\n");
        let err = parse_database(&text).unwrap_err();
        assert!(err.to_string().contains("r1-ma1"), "{err}");
    }

    #[test]
    fn study_needs_exactly_one_payload() {
        let s = r#"{"label":"S 2000","dich":{"e1":1,"n1":10,"e2":2,"n2":10},"est":{"y":0.1,"se":0.2,"scale":"logrr"}}"#;
        let text = format!("{HEADER}\n{}\n", review_line("r1", s));
        assert!(matches!(parse_database(&text), Err(Error::Load { line: 2, .. })));
    }
}
