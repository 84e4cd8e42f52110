//! Reader for the subset of RevMan 5 XML that carries raw outcome tables.
//!
//! Recognised structure:
//!
//! ```text
//! <COCHRANE_REVIEW ID=".." YEAR="..">          (YEAR may come from MODIFIED="yyyy-..")
//!   <COVER_SHEET><TITLE>..</TITLE></COVER_SHEET>
//!   <KEYWORDS><KEYWORD>..</KEYWORD></KEYWORDS>  (optional, also inside COVER_SHEET)
//!   <TOPICS><TOPIC>..</TOPIC></TOPICS>          (optional, also inside COVER_SHEET)
//!   <DICH_OUTCOME NAME=..> | <CONT_OUTCOME NAME=..>
//!     <GROUP_LABEL_1>..</GROUP_LABEL_1> <GROUP_LABEL_2>..</GROUP_LABEL_2>
//!     <DICH_SUBGROUP NAME=..>                   (optional)
//!       <DICH_DATA STUDY_ID=.. EVENTS_1=.. TOTAL_1=.. EVENTS_2=.. TOTAL_2=../>
//!       <CONT_DATA STUDY_ID=.. MEAN_1=.. SD_1=.. TOTAL_1=.. MEAN_2=.. SD_2=.. TOTAL_2=../>
//! ```
//!
//! Every other element and attribute (pooled estimates, weights, CIs, text
//! sections) is skipped. Outcomes of any other `*_OUTCOME` kind are skipped
//! with a warning.

use std::collections::HashSet;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

use super::{
    validate_review, ContinuousSummaries, DichotomousCounts, MetaAnalysis, OutcomeKind, Review,
    Study, StudyData, Subgroup,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Rm5Warning {
    pub element: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Rm5Import {
    pub review: Review,
    pub warnings: Vec<Rm5Warning>,
}

struct OutcomeBuilder {
    kind: OutcomeKind,
    id: Option<String>,
    name: Option<String>,
    group1: Option<String>,
    group2: Option<String>,
    direct: Vec<Study>,
    subgroups: Vec<Subgroup>,
}

struct SubgroupBuilder {
    id: Option<String>,
    name: Option<String>,
    studies: Vec<Study>,
}

#[derive(Clone, Copy, PartialEq)]
enum TextTarget {
    Title,
    Keyword,
    Topic,
    OutcomeName,
    SubgroupName,
    Group1,
    Group2,
}

pub fn parse_rm5_subset(xml_text: &str) -> Result<Rm5Import> {
    let mut reader = Reader::from_str(xml_text);
    reader.config_mut().trim_text(true);

    let mut warnings = Vec::new();
    let mut stack: Vec<String> = Vec::new();
    let mut root_seen = false;
    let mut review_id: Option<String> = None;
    let mut year: Option<i32> = None;
    let mut title = String::new();
    let mut keywords = Vec::new();
    let mut topics = Vec::new();
    let mut outcomes: Vec<OutcomeBuilder> = Vec::new();
    let mut outcome: Option<OutcomeBuilder> = None;
    let mut subgroup: Option<SubgroupBuilder> = None;
    let mut text_target: Option<(TextTarget, usize)> = None;
    let mut text_buf = String::new();
    // depth at which an ignored subtree started
    let mut skip_until: Option<usize> = None;

    loop {
        let position = reader.buffer_position();
        let event = reader.read_event().map_err(|e| Error::Xml {
            position: reader.error_position(),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) => {
                let name = element_name(&e);
                stack.push(name.clone());
                let depth = stack.len();
                if skip_until.is_some() {
                    continue;
                }
                if depth == 1 {
                    open_root(&e, &name, position, &mut review_id, &mut year)?;
                    root_seen = true;
                    continue;
                }
                match name.as_str() {
                    "TITLE" if parent(&stack) == Some("COVER_SHEET") => {
                        text_target = Some((TextTarget::Title, depth));
                    }
                    "KEYWORD" => text_target = Some((TextTarget::Keyword, depth)),
                    "TOPIC" => text_target = Some((TextTarget::Topic, depth)),
                    "DICH_OUTCOME" | "CONT_OUTCOME" => {
                        outcome = Some(open_outcome(&e, &name)?);
                    }
                    n if n.ends_with("_OUTCOME") => {
                        warnings.push(Rm5Warning {
                            element: n.to_string(),
                            message: format!(
                                "unsupported outcome kind skipped ({})",
                                attr(&e, "NAME")?.unwrap_or_default()
                            ),
                        });
                        skip_until = Some(depth);
                    }
                    "DICH_SUBGROUP" | "CONT_SUBGROUP" if outcome.is_some() => {
                        subgroup = Some(SubgroupBuilder {
                            id: attr(&e, "ID")?,
                            name: attr(&e, "NAME")?,
                            studies: Vec::new(),
                        });
                    }
                    "NAME" if subgroup.is_some() => {
                        text_target = Some((TextTarget::SubgroupName, depth));
                    }
                    "NAME" if outcome.is_some() => {
                        text_target = Some((TextTarget::OutcomeName, depth));
                    }
                    "GROUP_LABEL_1" if outcome.is_some() => {
                        text_target = Some((TextTarget::Group1, depth));
                    }
                    "GROUP_LABEL_2" if outcome.is_some() => {
                        text_target = Some((TextTarget::Group2, depth));
                    }
                    "DICH_DATA" | "CONT_DATA" => {
                        read_row(&e, &name, &mut outcome, &mut subgroup, &mut warnings)?;
                    }
                    _ => {}
                }
                if text_target.is_some_and(|(_, d)| d == depth) {
                    text_buf.clear();
                }
            }
            Event::Empty(e) => {
                let name = element_name(&e);
                if skip_until.is_some() {
                    continue;
                }
                if stack.is_empty() {
                    open_root(&e, &name, position, &mut review_id, &mut year)?;
                    root_seen = true;
                    continue;
                }
                match name.as_str() {
                    "DICH_DATA" | "CONT_DATA" => {
                        read_row(&e, &name, &mut outcome, &mut subgroup, &mut warnings)?
                    }
                    n if n.ends_with("_OUTCOME") && n != "DICH_OUTCOME" && n != "CONT_OUTCOME" => {
                        warnings.push(Rm5Warning {
                            element: n.to_string(),
                            message: "unsupported outcome kind skipped".into(),
                        });
                    }
                    _ => {}
                }
            }
            Event::Text(t) => {
                if skip_until.is_none() && text_target.is_some() {
                    let s = t.unescape().map_err(|e| Error::Xml {
                        position: reader.buffer_position(),
                        message: e.to_string(),
                    })?;
                    if !text_buf.is_empty() {
                        text_buf.push(' ');
                    }
                    text_buf.push_str(&s);
                }
            }
            Event::CData(t) => {
                if skip_until.is_none() && text_target.is_some() {
                    text_buf.push_str(&String::from_utf8_lossy(&t));
                }
            }
            Event::End(_) => {
                let depth = stack.len();
                let name = stack.pop().unwrap_or_default();
                if let Some(d) = skip_until {
                    if d == depth {
                        skip_until = None;
                    }
                    continue;
                }
                if let Some((target, d)) = text_target {
                    if d == depth {
                        let text = std::mem::take(&mut text_buf).trim().to_string();
                        match target {
                            TextTarget::Title => title = text,
                            TextTarget::Keyword => keywords.push(text),
                            TextTarget::Topic => topics.push(text),
                            TextTarget::OutcomeName => {
                                if let Some(o) = outcome.as_mut() {
                                    o.name.get_or_insert(text);
                                }
                            }
                            TextTarget::SubgroupName => {
                                if let Some(s) = subgroup.as_mut() {
                                    s.name.get_or_insert(text);
                                }
                            }
                            TextTarget::Group1 => {
                                if let Some(o) = outcome.as_mut() {
                                    o.group1 = Some(text);
                                }
                            }
                            TextTarget::Group2 => {
                                if let Some(o) = outcome.as_mut() {
                                    o.group2 = Some(text);
                                }
                            }
                        }
                        text_target = None;
                    }
                }
                match name.as_str() {
                    "DICH_SUBGROUP" | "CONT_SUBGROUP" => {
                        if let (Some(sg), Some(o)) = (subgroup.take(), outcome.as_mut()) {
                            let n = o.subgroups.len() + 1;
                            o.subgroups.push(Subgroup {
                                id: sg.id.unwrap_or_else(|| format!("sg{n}")),
                                name: sg.name.unwrap_or_else(|| format!("Subgroup {n}")),
                                studies: sg.studies,
                            });
                        }
                    }
                    "DICH_OUTCOME" | "CONT_OUTCOME" => {
                        if let Some(o) = outcome.take() {
                            outcomes.push(o);
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }

    if !root_seen {
        return Err(Error::Xml {
            position: 0,
            message: "no <COCHRANE_REVIEW> root element".into(),
        });
    }
    let year = year.ok_or_else(|| Error::MissingAttribute {
        element: "COCHRANE_REVIEW".into(),
        attribute: "YEAR".into(),
    })?;
    let review_id = review_id.unwrap_or_else(|| slug(&title));

    let mut meta_analyses = Vec::new();
    for (i, o) in outcomes.into_iter().enumerate() {
        let id = o.id.unwrap_or_else(|| format!("{review_id}-ma{}", i + 1));
        let mut subgroups = Vec::new();
        if !o.direct.is_empty() || o.subgroups.is_empty() {
            subgroups.push(Subgroup {
                id: "all".into(),
                name: "All studies".into(),
                studies: o.direct,
            });
        }
        subgroups.extend(o.subgroups);
        for sg in &mut subgroups {
            dedupe_labels(&id, sg, &mut warnings);
        }
        meta_analyses.push(MetaAnalysis {
            id,
            review_id: review_id.clone(),
            name: o.name.unwrap_or_default(),
            outcome_kind: o.kind,
            group1_label: o.group1.unwrap_or_else(|| "Group 1".into()),
            group2_label: o.group2.unwrap_or_else(|| "Group 2".into()),
            subgroups,
        });
    }

    let review = Review {
        id: review_id,
        title,
        year,
        topics,
        keywords,
        meta_analyses,
    };
    validate_review(&review)?;
    Ok(Rm5Import { review, warnings })
}

fn open_root(
    e: &BytesStart<'_>,
    name: &str,
    position: u64,
    review_id: &mut Option<String>,
    year: &mut Option<i32>,
) -> Result<()> {
    if name != "COCHRANE_REVIEW" {
        return Err(Error::Xml {
            position,
            message: format!("expected <COCHRANE_REVIEW> root, found <{name}>"),
        });
    }
    *review_id = attr(e, "ID")?.or(attr(e, "DOI")?);
    *year = match attr(e, "YEAR")? {
        Some(y) => Some(y.trim().parse().map_err(|_| {
            Error::invalid("COCHRANE_REVIEW.YEAR", format!("not a year: `{y}`"))
        })?),
        None => attr(e, "MODIFIED")?
            .and_then(|m| m.get(..4).and_then(|y| y.parse().ok())),
    };
    Ok(())
}

fn open_outcome(e: &BytesStart<'_>, name: &str) -> Result<OutcomeBuilder> {
    Ok(OutcomeBuilder {
        kind: if name == "DICH_OUTCOME" {
            OutcomeKind::Dichotomous
        } else {
            OutcomeKind::Continuous
        },
        id: attr(e, "ID")?,
        name: attr(e, "NAME")?,
        group1: attr(e, "GROUP_LABEL_1")?,
        group2: attr(e, "GROUP_LABEL_2")?,
        direct: Vec::new(),
        subgroups: Vec::new(),
    })
}

fn read_row(
    e: &BytesStart<'_>,
    name: &str,
    outcome: &mut Option<OutcomeBuilder>,
    subgroup: &mut Option<SubgroupBuilder>,
    warnings: &mut Vec<Rm5Warning>,
) -> Result<()> {
    let Some(o) = outcome.as_mut() else {
        return Ok(());
    };
    let expected = if o.kind == OutcomeKind::Dichotomous {
        "DICH_DATA"
    } else {
        "CONT_DATA"
    };
    if name != expected {
        warnings.push(Rm5Warning {
            element: name.into(),
            message: format!("row kind does not match outcome, expected {expected}"),
        });
        return Ok(());
    }
    let study_id = required(e, name, "STUDY_ID")?;
    let label = study_label(&study_id);
    let data = if o.kind == OutcomeKind::Dichotomous {
        StudyData::Dichotomous(DichotomousCounts {
            events1: count(e, name, "EVENTS_1")?,
            total1: count(e, name, "TOTAL_1")?,
            events2: count(e, name, "EVENTS_2")?,
            total2: count(e, name, "TOTAL_2")?,
        })
    } else {
        StudyData::Continuous(ContinuousSummaries {
            mean1: real(e, name, "MEAN_1")?,
            sd1: real(e, name, "SD_1")?,
            n1: count(e, name, "TOTAL_1")?,
            mean2: real(e, name, "MEAN_2")?,
            sd2: real(e, name, "SD_2")?,
            n2: count(e, name, "TOTAL_2")?,
        })
    };
    if let Err((field, message)) = data.validate() {
        warnings.push(Rm5Warning {
            element: name.into(),
            message: format!("row `{label}` skipped: {field}: {message}"),
        });
        return Ok(());
    }
    let study = Study { label, data };
    match subgroup.as_mut() {
        Some(sg) => sg.studies.push(study),
        None => o.direct.push(study),
    }
    Ok(())
}

fn dedupe_labels(ma_id: &str, sg: &mut Subgroup, warnings: &mut Vec<Rm5Warning>) {
    let mut seen = HashSet::new();
    for study in &mut sg.studies {
        if !seen.insert(study.label.clone()) {
            let mut n = 2;
            while seen.contains(&format!("{} ({n})", study.label)) {
                n += 1;
            }
            let renamed = format!("{} ({n})", study.label);
            warnings.push(Rm5Warning {
                element: "DICH_DATA".into(),
                message: format!(
                    "{ma_id}/{}: duplicate label `{}` renamed to `{renamed}`",
                    sg.id, study.label
                ),
            });
            seen.insert(renamed.clone());
            study.label = renamed;
        }
    }
}

/// `STD-Del-Brutto-1992` becomes `Del Brutto 1992`.
fn study_label(study_id: &str) -> String {
    let trimmed = study_id.strip_prefix("STD-").unwrap_or(study_id);
    trimmed.replace(['-', '_'], " ").trim().to_string()
}

fn slug(title: &str) -> String {
    let mut out = String::new();
    for c in title.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
        if out.len() >= 48 {
            break;
        }
    }
    let out = out.trim_end_matches('-').to_string();
    if out.is_empty() {
        "review".into()
    } else {
        out
    }
}

fn element_name(e: &BytesStart<'_>) -> String {
    String::from_utf8_lossy(e.name().as_ref()).into_owned()
}

fn parent(stack: &[String]) -> Option<&str> {
    stack.len().checked_sub(2).map(|i| stack[i].as_str())
}

fn attr(e: &BytesStart<'_>, key: &str) -> Result<Option<String>> {
    for a in e.attributes() {
        let a = a.map_err(|err| Error::Xml {
            position: 0,
            message: err.to_string(),
        })?;
        if a.key.as_ref() == key.as_bytes() {
            let v = a.unescape_value().map_err(|err| Error::Xml {
                position: 0,
                message: err.to_string(),
            })?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn required(e: &BytesStart<'_>, element: &str, key: &str) -> Result<String> {
    attr(e, key)?.ok_or_else(|| Error::MissingAttribute {
        element: element.into(),
        attribute: key.into(),
    })
}

fn real(e: &BytesStart<'_>, element: &str, key: &str) -> Result<f64> {
    let raw = required(e, element, key)?;
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::invalid(format!("{element}.{key}"), format!("not a number: `{raw}`")))
}

fn count(e: &BytesStart<'_>, element: &str, key: &str) -> Result<u64> {
    let v = real(e, element, key)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::invalid(
            format!("{element}.{key}"),
            format!("expected a non-negative whole number, got {v}"),
        ));
    }
    Ok(v as u64)
}
