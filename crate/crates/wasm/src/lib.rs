//! Browser bindings: a 2×2 effect-size calculator, a forest plot of pasted
//! study rows, and a Bayesian prior/posterior density plot.
//!
//! Every export takes plain strings and numbers and returns JSON text, so
//! the page needs no generated type glue. Study rows use the command-line
//! shorthand, one per line: `Label:e1/n1,e2/n2` or `Label:y±se`.

use serde::Serialize;
use trialbench::analysis::{density_spec, forest_spec, run_analysis, AnalysisRequest, BayesianSpec};
use trialbench::bayes::{ModelProbs, Parameter, PosteriorModel, PriorSpec};
use trialbench::classical::{Method, Z_975};
use trialbench::dataset::{
    parse_study_spec, DatabaseSnapshot, DichotomousCounts, MetaAnalysis, OutcomeKind, Review, Selection,
    SelectionItem, Study, StudyData, Subgroup, TargetGroup,
};
use trialbench::effectsize::{estimate_study, EffectScale};
use trialbench::plots::{render_density, render_forest};
use wasm_bindgen::prelude::*;

type Out = Result<String, String>;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

#[derive(Serialize)]
struct EffectSizeOut {
    scale: EffectScale,
    y: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
    /// Exponentiated estimate and interval on log scales.
    #[serde(skip_serializing_if = "Option::is_none")]
    natural: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    excluded: Option<String>,
}

pub fn effect_size_json(e1: u32, n1: u32, e2: u32, n2: u32, scale: &str) -> Out {
    let scale: EffectScale = scale.parse().map_err(err)?;
    let data = StudyData::Dichotomous(DichotomousCounts::new(e1.into(), n1.into(), e2.into(), n2.into()));
    Study::new("study", data).validate().map_err(err)?;
    let out = match estimate_study("study", &data, scale).map_err(err)? {
        Ok(e) => {
            let (lo, hi) = (e.y - Z_975 * e.se, e.y + Z_975 * e.se);
            EffectSizeOut {
                scale,
                y: e.y,
                se: e.se,
                ci_low: lo,
                ci_high: hi,
                natural: scale.is_log().then(|| [e.y.exp(), lo.exp(), hi.exp()]),
                excluded: None,
            }
        }
        Err(reason) => EffectSizeOut {
            scale,
            y: f64::NAN,
            se: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            natural: None,
            excluded: Some(reason.to_string()),
        },
    };
    serde_json::to_string(&out).map_err(err)
}

/// Wraps pasted rows in a one-review corpus so the regular analysis
/// pipeline can run on them.
fn selection_from_rows(rows: &str, scale: EffectScale) -> Result<(DatabaseSnapshot, Selection), String> {
    let studies = rows
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| parse_study_spec(l, scale))
        .collect::<trialbench::Result<Vec<_>>>()
        .map_err(err)?;
    if studies.is_empty() {
        return Err("enter at least one study row".into());
    }
    let ma = MetaAnalysis {
        id: "pasted".into(),
        review_id: String::new(),
        name: "Pasted studies".into(),
        outcome_kind: scale.outcome_kind(),
        group1_label: "Group 1".into(),
        group2_label: "Group 2".into(),
        subgroups: vec![Subgroup {
            id: "all".into(),
            name: "All studies".into(),
            studies: vec![],
        }],
    };
    let snapshot = DatabaseSnapshot::new(vec![Review {
        id: "pasted".into(),
        title: "Pasted studies".into(),
        year: 2000,
        topics: vec![],
        keywords: vec![],
        meta_analyses: vec![ma],
    }])
    .map_err(err)?;
    // rows travel as the overlay, so they come back flagged as added
    let selection = Selection {
        items: vec![SelectionItem {
            meta_analysis_id: "pasted".into(),
            subgroup_ids: None,
        }],
        target_group: TargetGroup::Group1,
        pooled: false,
        scale,
        overlay: studies,
    };
    Ok((snapshot, selection))
}

#[derive(Serialize)]
struct PlotOut<T: Serialize> {
    svg: String,
    summary: T,
}

#[derive(Serialize)]
struct PooledSummary {
    y: f64,
    ci_low: f64,
    ci_high: f64,
    z: f64,
    p: f64,
    i2: f64,
    tau2: f64,
}

pub fn forest_json(rows: &str, scale: &str, method: &str) -> Out {
    let scale: EffectScale = scale.parse().map_err(err)?;
    let method: Method = method.parse().map_err(err)?;
    if scale.outcome_kind() != OutcomeKind::Dichotomous {
        return Err("pasted rows support dichotomous scales only".into());
    }
    let (snapshot, selection) = selection_from_rows(rows, scale)?;
    let response = run_analysis(&snapshot, &AnalysisRequest::classical(selection, method)).map_err(err)?;
    let mut set = response.analyses.into_iter().next().ok_or("no analysis")?;
    // every pasted row is a plain study here
    for e in &mut set.estimates {
        e.is_new = false;
    }
    let c = set.classical.as_ref().ok_or("no classical result")?;
    let summary = PooledSummary {
        y: c.pooled.y,
        ci_low: c.pooled.ci_low,
        ci_high: c.pooled.ci_high,
        z: c.pooled.z,
        p: c.pooled.p,
        i2: c.heterogeneity.i2,
        tau2: c.pooled.tau2,
    };
    let svg = render_forest(&forest_spec(&set).map_err(err)?).map_err(err)?;
    serde_json::to_string(&PlotOut { svg, summary }).map_err(err)
}

#[derive(Serialize)]
struct BayesSummary {
    bf10_fixed: f64,
    bf10_random: f64,
    bf_rf: f64,
    bf_inclusion: f64,
    mean: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn bayes_density_json(rows: &str, scale: &str, prior_mu: &str, prior_tau: &str) -> Out {
    let scale: EffectScale = scale.parse().map_err(err)?;
    if scale.outcome_kind() != OutcomeKind::Dichotomous {
        return Err("pasted rows support dichotomous scales only".into());
    }
    let priors = PriorSpec::new(prior_mu.parse().map_err(err)?, prior_tau.parse().map_err(err)?).map_err(err)?;
    let (snapshot, selection) = selection_from_rows(rows, scale)?;
    let request = AnalysisRequest {
        selection,
        classical: None,
        bayesian: Some(BayesianSpec {
            priors,
            prior_model_probs: ModelProbs::default(),
            scale: None,
            full_averaging: false,
        }),
    };
    let response = run_analysis(&snapshot, &request).map_err(err)?;
    let set = &response.analyses[0];
    let b = set.bayesian.as_ref().ok_or("no bayesian result")?;
    let r = &b.fit.result;
    let avg = b.fit.mu_density(PosteriorModel::Averaged).ok_or("no averaged posterior")?;
    let summary = BayesSummary {
        bf10_fixed: r.bf10_fixed,
        bf10_random: r.bf10_random,
        bf_rf: r.bf_rf,
        bf_inclusion: r.bf_inclusion,
        mean: avg.summary.mean,
        ci_low: avg.summary.ci_low,
        ci_high: avg.summary.ci_high,
    };
    let spec = density_spec(set, Parameter::Mu, PosteriorModel::Averaged).map_err(err)?;
    let svg = render_density(&spec).map_err(err)?;
    serde_json::to_string(&PlotOut { svg, summary }).map_err(err)
}

#[wasm_bindgen(js_name = effectSize)]
pub fn effect_size(e1: u32, n1: u32, e2: u32, n2: u32, scale: &str) -> Result<String, JsValue> {
    effect_size_json(e1, n1, e2, n2, scale).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = forestPlot)]
pub fn forest_plot(rows: &str, scale: &str, method: &str) -> Result<String, JsValue> {
    forest_json(rows, scale, method).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = bayesDensity)]
pub fn bayes_density(rows: &str, scale: &str, prior_mu: &str, prior_tau: &str) -> Result<String, JsValue> {
    bayes_density_json(rows, scale, prior_mu, prior_tau).map_err(|e| JsValue::from_str(&e))
}
