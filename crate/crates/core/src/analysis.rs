//! Request and response types shared by the command line and the HTTP
//! service, and the pipeline that turns one into the other.

use serde::{Deserialize, Serialize};

use crate::bayes::{
    self, transform_posterior, BayesFit, BmaOptions, ModelProbs, Parameter, PosteriorDensity,
    PosteriorModel, PriorSpec, TransformedSummary,
};
use crate::classical::{
    self, egger_test, heterogeneity, mantel_haenszel, EggerResult, HeterogeneityStats, Method, MhMeasure,
    PooledResult, TransformedResult,
};
use crate::dataset::{
    parse_study_spec, resolve_selection, DatabaseSnapshot, Selection, SelectionItem, StudyData, StudySet,
    TargetGroup,
};
use crate::effectsize::{compute_effects, EffectEstimate, EffectScale, Exclusion};
use crate::error::{Error, Result};
use crate::plots::{DensityPlotSpec, ForestPlotSpec, ForestPooled, ForestRow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassicalSpec {
    pub method: Method,
    /// Overrides `selection.scale` when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<EffectScale>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesianSpec {
    #[serde(default)]
    pub priors: PriorSpec,
    #[serde(default)]
    pub prior_model_probs: ModelProbs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<EffectScale>,
    #[serde(default)]
    pub full_averaging: bool,
}

/// A selection plus exactly one of the two method blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisRequest {
    pub selection: Selection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classical: Option<ClassicalSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bayesian: Option<BayesianSpec>,
}

impl AnalysisRequest {
    pub fn classical(selection: Selection, method: Method) -> Self {
        AnalysisRequest {
            selection,
            classical: Some(ClassicalSpec { method, scale: None }),
            bayesian: None,
        }
    }

    pub fn bayesian(selection: Selection, priors: PriorSpec, prior_model_probs: ModelProbs) -> Self {
        AnalysisRequest {
            selection,
            classical: None,
            bayesian: Some(BayesianSpec {
                priors,
                prior_model_probs,
                scale: None,
                full_averaging: false,
            }),
        }
    }

    /// Scale the effects are computed on.
    pub fn scale(&self) -> EffectScale {
        self.classical
            .as_ref()
            .and_then(|c| c.scale)
            .or_else(|| self.bayesian.as_ref().and_then(|b| b.scale))
            .unwrap_or(self.selection.scale)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.classical, &self.bayesian) {
            (Some(_), Some(_)) => Err(Error::invalid(
                "classical",
                "give either a classical or a bayesian block, not both",
            )),
            (None, None) => Err(Error::invalid("classical", "missing method block (classical or bayesian)")),
            (Some(c), None) => {
                if c.method == Method::FixedMh && self.scale() == EffectScale::PetoLogOddsRatio {
                    return Err(Error::invalid(
                        "classical.method",
                        "Mantel-Haenszel pooling is not defined for Peto odds ratios; use `fixed`",
                    ));
                }
                Ok(())
            }
            (None, Some(b)) => {
                b.priors.validate()?;
                b.prior_model_probs.validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassicalOutput {
    pub heterogeneity: HeterogeneityStats,
    pub pooled: PooledResult,
    pub transformed: TransformedResult,
    /// Present from three studies on, unless every standard error is equal.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub egger: Option<EggerResult>,
    /// Percentage weight of each row of `estimates`; rows that did not
    /// enter a Mantel-Haenszel sum get 0.
    pub study_weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelTransformed {
    pub model: PosteriorModel,
    pub summary: TransformedSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesianOutput {
    pub priors: PriorSpec,
    #[serde(flatten)]
    pub fit: BayesFit,
    /// Exponentiated μ summaries on log scales.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transformed: Vec<ModelTransformed>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotLinks {
    pub forest: String,
    pub funnel: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
}

impl PlotLinks {
    fn new(bayesian: bool) -> Self {
        PlotLinks {
            forest: "/api/plots/forest".into(),
            funnel: "/api/plots/funnel".into(),
            density: bayesian.then(|| "/api/plots/density".into()),
        }
    }
}

/// Results for one resolved study set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetAnalysis {
    pub name: String,
    pub meta_analysis_ids: Vec<String>,
    pub group1_label: String,
    pub group2_label: String,
    pub scale: EffectScale,
    pub estimates: Vec<EffectEstimate>,
    pub exclusions: Vec<Exclusion>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classical: Option<ClassicalOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bayesian: Option<BayesianOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisResponse {
    /// One entry per selected meta-analysis, or a single entry when pooled.
    pub analyses: Vec<SetAnalysis>,
    /// Endpoints that render the figures for this request (POST the same body).
    pub plots: PlotLinks,
}

impl AnalysisResponse {
    pub fn first(&self) -> &SetAnalysis {
        &self.analyses[0]
    }
}

pub fn run_analysis(snapshot: &DatabaseSnapshot, request: &AnalysisRequest) -> Result<AnalysisResponse> {
    request.validate()?;
    let scale = request.scale();
    let sets = resolve_selection(snapshot, &request.selection)?;
    let analyses = sets
        .iter()
        .map(|set| analyse_set(set, scale, request))
        .collect::<Result<_>>()?;
    Ok(AnalysisResponse {
        analyses,
        plots: PlotLinks::new(request.bayesian.is_some()),
    })
}

fn analyse_set(set: &StudySet, scale: EffectScale, request: &AnalysisRequest) -> Result<SetAnalysis> {
    let effects = compute_effects(set, scale)?;
    if effects.estimates.is_empty() {
        return Err(Error::InsufficientStudies(format!(
            "no estimable studies in `{}`",
            set.name
        )));
    }
    let classical = match &request.classical {
        Some(spec) => Some(classical_output(set, &effects.estimates, scale, spec.method)?),
        None => None,
    };
    let bayesian = match &request.bayesian {
        Some(spec) => Some(bayesian_output(&effects.estimates, scale, spec)?),
        None => None,
    };
    Ok(SetAnalysis {
        name: set.name.clone(),
        meta_analysis_ids: set.meta_analysis_ids.clone(),
        group1_label: set.group1_label.clone(),
        group2_label: set.group2_label.clone(),
        scale,
        estimates: effects.estimates,
        exclusions: effects.exclusions,
        classical,
        bayesian,
    })
}

fn classical_output(
    set: &StudySet,
    estimates: &[EffectEstimate],
    scale: EffectScale,
    method: Method,
) -> Result<ClassicalOutput> {
    let (pooled, study_weights) = if method == Method::FixedMh {
        mh_pool(set, estimates, scale)?
    } else {
        let p = classical::pool(estimates, method)?;
        let w = p.weights.clone();
        (p, w)
    };
    let egger = if estimates.len() >= 3 { egger_test(estimates).ok() } else { None };
    Ok(ClassicalOutput {
        heterogeneity: heterogeneity(estimates)?,
        transformed: classical::transform(&pooled, scale),
        pooled,
        egger,
        study_weights,
    })
}

/// Mantel-Haenszel on the raw tables of the set. Weights are mapped back
/// onto the estimate rows by label order.
fn mh_pool(set: &StudySet, estimates: &[EffectEstimate], scale: EffectScale) -> Result<(PooledResult, Vec<f64>)> {
    let measure = MhMeasure::from_scale(scale).ok_or_else(|| {
        Error::invalid("classical.method", "Mantel-Haenszel pooling needs a dichotomous scale")
    })?;
    let tables = set
        .studies
        .iter()
        .map(|s| match s.study_data() {
            StudyData::Dichotomous(t) => Ok(*t),
            _ => Err(Error::invalid(
                "classical.method",
                format!("Mantel-Haenszel pooling needs counts; `{}` has none", s.label()),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    let mh = mantel_haenszel(&tables, measure)?;

    let mut by_study = vec![0.0; tables.len()];
    for (pos, &i) in mh.included.iter().enumerate() {
        by_study[i] = mh.pooled.weights[pos];
    }
    // estimates preserve study order with exclusions removed
    let mut weights = Vec::with_capacity(estimates.len());
    let mut next = 0;
    for e in estimates {
        while next < set.studies.len() && set.studies[next].label() != e.label {
            next += 1;
        }
        weights.push(by_study.get(next).copied().unwrap_or(0.0));
        next += 1;
    }
    Ok((mh.pooled, weights))
}

fn bayesian_output(estimates: &[EffectEstimate], scale: EffectScale, spec: &BayesianSpec) -> Result<BayesianOutput> {
    let options = BmaOptions {
        prior_model_probs: spec.prior_model_probs,
        full_averaging: spec.full_averaging,
    };
    let fit = bayes::fit(estimates, &spec.priors, &options)?;
    let transformed = if scale.is_log() {
        fit.mu_densities
            .iter()
            .map(|d| {
                Ok(ModelTransformed {
                    model: d.model,
                    summary: transform_posterior(d, scale)?,
                })
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    Ok(BayesianOutput {
        priors: spec.priors,
        fit,
        transformed,
    })
}

/// Forest plot of one analysed set. Bayesian analyses show the averaged
/// posterior median and credible interval as the pooled row, with
/// fixed-effect percentage weights for the markers.
pub fn forest_spec(analysis: &SetAnalysis) -> Result<ForestPlotSpec> {
    let (weights, pooled) = if let Some(c) = &analysis.classical {
        let p = &c.pooled;
        (
            c.study_weights.clone(),
            ForestPooled {
                y: p.y,
                ci_low: p.ci_low,
                ci_high: p.ci_high,
                label: p.method.label().to_string(),
            },
        )
    } else if let Some(b) = &analysis.bayesian {
        let fe = classical::fixed_effect_iv(&analysis.estimates)?;
        let avg = b
            .fit
            .mu_density(PosteriorModel::Averaged)
            .ok_or_else(|| Error::Numerical("no averaged posterior for μ".into()))?;
        (
            fe.weights,
            ForestPooled {
                y: avg.summary.median,
                ci_low: avg.summary.ci_low,
                ci_high: avg.summary.ci_high,
                label: "Model-averaged posterior".into(),
            },
        )
    } else {
        return Err(Error::invalid("classical", "missing method block (classical or bayesian)"));
    };
    let rows = analysis
        .estimates
        .iter()
        .zip(weights)
        .map(|(e, w)| ForestRow {
            label: e.label.clone(),
            y: e.y,
            ci_low: e.y - classical::Z_975 * e.se,
            ci_high: e.y + classical::Z_975 * e.se,
            weight_pct: w,
            is_new: e.is_new,
        })
        .collect();
    Ok(ForestPlotSpec {
        rows,
        pooled,
        scale: analysis.scale,
        axis_label: Some(format!(
            "{} (favours {} ← → favours {})",
            analysis.scale.label(),
            analysis.group1_label,
            analysis.group2_label
        )),
    })
}

/// Pooled estimate the funnel is centred on: the classical result, or the
/// fixed-effect estimate for Bayesian analyses.
pub fn funnel_centre(analysis: &SetAnalysis) -> Result<PooledResult> {
    match &analysis.classical {
        Some(c) => Ok(c.pooled.clone()),
        None => classical::fixed_effect_iv(&analysis.estimates),
    }
}

/// Prior and posterior density of `parameter` under `model` for a Bayesian
/// analysis.
pub fn density_spec(analysis: &SetAnalysis, parameter: Parameter, model: PosteriorModel) -> Result<DensityPlotSpec> {
    let b = analysis
        .bayesian
        .as_ref()
        .ok_or_else(|| Error::invalid("bayesian", "density plots need a bayesian block"))?;
    let density: Option<&PosteriorDensity> = match parameter {
        Parameter::Mu => b.fit.mu_density(model),
        Parameter::Tau => b.fit.tau_density(model),
    };
    let d = density.ok_or_else(|| {
        Error::invalid(
            "model",
            format!("no {} posterior for {:?}", model.label().to_lowercase(), parameter),
        )
    })?;
    let x_label = match parameter {
        Parameter::Mu => format!("Effect size μ ({})", analysis.scale.label()),
        Parameter::Tau => "Heterogeneity τ".to_string(),
    };
    Ok(DensityPlotSpec::from_posterior(d, x_label))
}

/// Builds a selection from query pairs, as used by the CSV export endpoint.
///
/// Keys: `ma` (repeatable), `subgroup=MA/SUBGROUP` (repeatable; restricts
/// that meta-analysis to the listed subgroups), `target`, `scale` (default
/// `logrr`), `pooled`, and `add` (repeatable study shorthand).
pub fn selection_from_query<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Selection> {
    let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
    let mut scale = EffectScale::LogRiskRatio;
    let mut target_group = TargetGroup::Group1;
    let mut pooled = false;
    for &(k, v) in &pairs {
        match k {
            "scale" => scale = v.parse()?,
            "target" | "target_group" => target_group = v.parse()?,
            "pooled" => {
                pooled = match v {
                    "" | "1" | "true" | "yes" => true,
                    "0" | "false" | "no" => false,
                    _ => return Err(Error::invalid("pooled", format!("expected true or false, got `{v}`"))),
                }
            }
            "ma" | "subgroup" | "add" => {}
            other => return Err(Error::invalid(other, "unknown query parameter")),
        }
    }
    let mut items: Vec<SelectionItem> = Vec::new();
    for &(k, v) in &pairs {
        if k == "ma" && !items.iter().any(|i| i.meta_analysis_id == v) {
            items.push(SelectionItem {
                meta_analysis_id: v.to_string(),
                subgroup_ids: None,
            });
        }
    }
    for &(k, v) in &pairs {
        if k != "subgroup" {
            continue;
        }
        let (ma, sg) = v
            .rsplit_once('/')
            .ok_or_else(|| Error::invalid("subgroup", format!("expected MA/SUBGROUP, got `{v}`")))?;
        let item = items
            .iter_mut()
            .find(|i| i.meta_analysis_id == ma)
            .ok_or_else(|| Error::invalid("subgroup", format!("`{ma}` is not among the selected meta-analyses")))?;
        item.subgroup_ids.get_or_insert_with(Vec::new).push(sg.to_string());
    }
    let overlay = pairs
        .iter()
        .filter(|(k, _)| *k == "add")
        .map(|(_, v)| parse_study_spec(v, scale))
        .collect::<Result<_>>()?;
    Ok(Selection {
        items,
        target_group,
        pooled,
        scale,
        overlay,
    })
}
