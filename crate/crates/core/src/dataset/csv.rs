//! CSV export of resolved study sets, and the matching import used for
//! user-supplied study overlays.

use super::{
    ContinuousSummaries, DichotomousCounts, PrecomputedEstimate, Study, StudyData, StudySet,
};
use crate::effectsize::EffectScale;
use crate::error::{Error, Result};

const DICH_HEADER: [&str; 5] = ["study", "events_1", "total_1", "events_2", "total_2"];
const CONT_HEADER: [&str; 7] = ["study", "mean_1", "sd_1", "n_1", "mean_2", "sd_2", "n_2"];
const EST_HEADER: [&str; 4] = ["study", "y", "se", "scale"];

#[derive(Clone, Copy, PartialEq)]
enum Layout {
    Dich,
    Cont,
    Est,
    /// Rows of different kinds: dichotomous, continuous and estimate columns
    /// side by side, unused cells left empty.
    Mixed,
}

fn mixed_header() -> Vec<&'static str> {
    DICH_HEADER
        .iter()
        .chain(&CONT_HEADER[1..])
        .chain(&EST_HEADER[1..])
        .copied()
        .collect()
}

pub fn export_csv(study_sets: &[StudySet]) -> Result<String> {
    let studies: Vec<&Study> = study_sets
        .iter()
        .flat_map(|s| s.studies.iter().map(|st| &st.study))
        .collect();
    if studies.is_empty() {
        return Err(Error::EmptySelection);
    }
    let layout = studies.iter().map(|s| layout_of(&s.data)).fold(None, |acc, l| match acc {
        None => Some(l),
        Some(a) if a == l => Some(a),
        Some(_) => Some(Layout::Mixed),
    });
    let layout = layout.unwrap_or(Layout::Mixed);

    let mut w = ::csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = match layout {
        Layout::Dich => DICH_HEADER.to_vec(),
        Layout::Cont => CONT_HEADER.to_vec(),
        Layout::Est => EST_HEADER.to_vec(),
        Layout::Mixed => mixed_header(),
    };
    w.write_record(&header).map_err(csv_err)?;
    for study in studies {
        let cells = match (layout, &study.data) {
            (Layout::Mixed, data) => {
                let mut cells = vec![String::new(); header.len()];
                cells[0] = study.label.clone();
                let (offset, values) = match data {
                    StudyData::Dichotomous(c) => (1, dich_cells(c)),
                    StudyData::Continuous(c) => (5, cont_cells(c)),
                    StudyData::Estimate(e) => (11, est_cells(e)),
                };
                for (i, v) in values.into_iter().enumerate() {
                    cells[offset + i] = v;
                }
                cells
            }
            (_, data) => {
                let mut cells = vec![study.label.clone()];
                cells.extend(match data {
                    StudyData::Dichotomous(c) => dich_cells(c),
                    StudyData::Continuous(c) => cont_cells(c),
                    StudyData::Estimate(e) => est_cells(e),
                });
                cells
            }
        };
        w.write_record(&cells).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Csv(e.to_string()))
}

/// Reads studies back from any of the export layouts.
pub fn import_csv(text: &str) -> Result<Vec<Study>> {
    let mut r = ::csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let layout = if header == DICH_HEADER {
        Layout::Dich
    } else if header == CONT_HEADER {
        Layout::Cont
    } else if header == EST_HEADER {
        Layout::Est
    } else if header == mixed_header() {
        Layout::Mixed
    } else {
        return Err(Error::Csv(format!("unrecognised header `{}`", header.join(","))));
    };

    let mut out = Vec::new();
    for (i, record) in r.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = i + 2;
        let cell = |j: usize| record.get(j).unwrap_or("");
        let data = match layout {
            Layout::Dich => StudyData::Dichotomous(parse_dich(row, |j| cell(j))?),
            Layout::Cont => StudyData::Continuous(parse_cont(row, |j| cell(j))?),
            Layout::Est => StudyData::Estimate(parse_est(row, |j| cell(j))?),
            Layout::Mixed => {
                if !cell(1).is_empty() {
                    StudyData::Dichotomous(parse_dich(row, |j| cell(j))?)
                } else if !cell(5).is_empty() {
                    StudyData::Continuous(parse_cont(row, |j| cell(j + 4))?)
                } else {
                    StudyData::Estimate(parse_est(row, |j| cell(j + 10))?)
                }
            }
        };
        let study = Study::new(cell(0), data);
        study.validate()?;
        out.push(study);
    }
    Ok(out)
}

fn layout_of(data: &StudyData) -> Layout {
    match data {
        StudyData::Dichotomous(_) => Layout::Dich,
        StudyData::Continuous(_) => Layout::Cont,
        StudyData::Estimate(_) => Layout::Est,
    }
}

fn dich_cells(c: &DichotomousCounts) -> Vec<String> {
    [c.events1, c.total1, c.events2, c.total2]
        .iter()
        .map(u64::to_string)
        .collect()
}

fn cont_cells(c: &ContinuousSummaries) -> Vec<String> {
    vec![
        c.mean1.to_string(),
        c.sd1.to_string(),
        c.n1.to_string(),
        c.mean2.to_string(),
        c.sd2.to_string(),
        c.n2.to_string(),
    ]
}

fn est_cells(e: &PrecomputedEstimate) -> Vec<String> {
    vec![e.y.to_string(), e.se.to_string(), e.scale.code().to_string()]
}

fn field<T: std::str::FromStr>(row: usize, name: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Csv(format!("row {row}: {name}: cannot parse `{raw}`")))
}

fn parse_dich<'a>(row: usize, cell: impl Fn(usize) -> &'a str) -> Result<DichotomousCounts> {
    Ok(DichotomousCounts::new(
        field(row, "events_1", cell(1))?,
        field(row, "total_1", cell(2))?,
        field(row, "events_2", cell(3))?,
        field(row, "total_2", cell(4))?,
    ))
}

fn parse_cont<'a>(row: usize, cell: impl Fn(usize) -> &'a str) -> Result<ContinuousSummaries> {
    Ok(ContinuousSummaries {
        mean1: field(row, "mean_1", cell(1))?,
        sd1: field(row, "sd_1", cell(2))?,
        n1: field(row, "n_1", cell(3))?,
        mean2: field(row, "mean_2", cell(4))?,
        sd2: field(row, "sd_2", cell(5))?,
        n2: field(row, "n_2", cell(6))?,
    })
}

fn parse_est<'a>(row: usize, cell: impl Fn(usize) -> &'a str) -> Result<PrecomputedEstimate> {
    let scale: EffectScale = cell(3)
        .parse()
        .map_err(|_| Error::Csv(format!("row {row}: scale: unknown scale `{}`", cell(3))))?;
    Ok(PrecomputedEstimate {
        y: field(row, "y", cell(1))?,
        se: field(row, "se", cell(2))?,
        scale,
    })
}

fn csv_err(e: ::csv::Error) -> Error {
    Error::Csv(e.to_string())
}
