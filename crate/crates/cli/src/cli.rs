//! Command-line driver. Exit codes: 0 success, 1 usage error, 2 data or
//! validation error, 3 numerical failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use trialbench::analysis::{
    density_spec, forest_spec, funnel_centre, run_analysis, AnalysisRequest, AnalysisResponse, BayesianSpec,
};
use trialbench::bayes::{EffectPrior, HeterogeneityPrior, ModelProbs, Parameter, PosteriorModel, PriorSpec};
use trialbench::classical::Method;
use trialbench::dataset::{
    export_csv, import_csv, load_database, parse_rm5_subset, parse_study_spec, resolve_selection,
    serialize_database, DatabaseSnapshot, Selection, SelectionItem, TargetGroup,
};
use trialbench::effectsize::EffectScale;
use trialbench::plots::{render_density, render_forest, render_funnel};
use trialbench::search::{list_meta_analyses, FilterMode, Query, SearchIndex};

use crate::report;
use crate::service::{self, AppState, ServiceConfig};

const GRAMMAR: &str = "\
Added studies (--add, repeatable):
  LABEL:e1/n1,e2/n2     event counts, target group first
  LABEL:y±se            precomputed estimate on --scale (also LABEL:y+-se)

Priors:
  --prior-mu   normal(mean,sd) | t(location,scale,df) | cauchy(location,scale)
  --prior-tau  invgamma(shape,scale) | halfnormal(sd) | halfcauchy(scale)

Subgroups (--subgroup, repeatable): ID restricts every --ma to that subgroup;
MA/ID restricts only meta-analysis MA.

Exit codes: 0 success, 1 usage error, 2 data or validation error,
3 numerical failure.";

#[derive(Debug, Parser)]
#[command(name = "trialbench", version, about = "Search a trial-outcome corpus and run classical or Bayesian model-averaged meta-analyses", after_help = GRAMMAR)]
pub struct Cli {
    /// Print the service JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Convert RevMan 5 files into a corpus file.
    Ingest(IngestArgs),
    /// Filter reviews by keyword, topic or title.
    Search(SearchArgs),
    /// List the meta-analyses of a review, or the studies of a meta-analysis.
    Show(ShowArgs),
    /// Classical meta-analysis.
    Analyze(AnalyzeArgs),
    /// Bayesian model-averaged meta-analysis.
    Bayes(BayesArgs),
    /// Export the selected studies as CSV.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DbArg {
    /// Corpus file.
    #[arg(long, env = "WORKBENCH_DB")]
    db: Option<PathBuf>,
}

impl DbArg {
    fn load(&self) -> Result<DatabaseSnapshot, CliError> {
        let path = self
            .db
            .as_ref()
            .ok_or_else(|| CliError::Usage("no corpus given; pass --db or set WORKBENCH_DB".into()))?;
        load_database(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Existing corpus to add the reviews to.
    #[arg(long)]
    merge: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SearchArgs {
    #[command(flatten)]
    db: DbArg,
    /// Comma-separated keyword labels.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["topics", "title"])]
    keywords: Vec<String>,
    #[arg(long, value_delimiter = ',', conflicts_with = "title")]
    topics: Vec<String>,
    /// Case-insensitive title substring.
    #[arg(long)]
    title: Option<String>,
}

#[derive(Debug, Args)]
struct ShowArgs {
    #[command(flatten)]
    db: DbArg,
    #[arg(long, conflicts_with = "review", required_unless_present = "review")]
    ma: Option<String>,
    #[arg(long)]
    review: Option<String>,
}

#[derive(Debug, Args)]
struct SelectionArgs {
    #[command(flatten)]
    db: DbArg,
    /// Meta-analysis id (repeatable).
    #[arg(long = "ma", required = true)]
    meta_analyses: Vec<String>,
    #[arg(long = "subgroup")]
    subgroups: Vec<String>,
    #[arg(long, default_value = "group1")]
    target: TargetGroup,
    #[arg(long, default_value = "logrr")]
    scale: EffectScale,
    /// Pool all selected meta-analyses into one analysis.
    #[arg(long)]
    pooled: bool,
    /// Added study, see below (repeatable).
    #[arg(long = "add")]
    added: Vec<String>,
    /// CSV file of added studies, in the export layout.
    #[arg(long)]
    add_csv: Option<PathBuf>,
}

impl SelectionArgs {
    fn selection(&self) -> Result<Selection, CliError> {
        let mut items: Vec<SelectionItem> = self
            .meta_analyses
            .iter()
            .map(|id| SelectionItem {
                meta_analysis_id: id.clone(),
                subgroup_ids: None,
            })
            .collect();
        for sg in &self.subgroups {
            let (target, id) = match sg.rsplit_once('/') {
                Some((ma, id)) => (Some(ma), id),
                None => (None, sg.as_str()),
            };
            let mut matched = false;
            for item in items.iter_mut().filter(|i| target.is_none_or(|t| t == i.meta_analysis_id)) {
                item.subgroup_ids.get_or_insert_with(Vec::new).push(id.to_string());
                matched = true;
            }
            if !matched {
                return Err(CliError::Usage(format!("--subgroup {sg}: meta-analysis not selected with --ma")));
            }
        }
        let mut overlay = self
            .added
            .iter()
            .map(|s| parse_study_spec(s, self.scale))
            .collect::<trialbench::Result<Vec<_>>>()?;
        if let Some(path) = &self.add_csv {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            overlay.extend(import_csv(&text)?);
        }
        Ok(Selection {
            items,
            target_group: self.target,
            pooled: self.pooled,
            scale: self.scale,
            overlay,
        })
    }
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, default_value = "fixed")]
    method: Method,
    /// Also write the selected studies as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    forest: Option<PathBuf>,
    #[arg(long)]
    funnel: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BayesArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    #[arg(long, default_value = "normal(0,1)")]
    prior_mu: EffectPrior,
    #[arg(long, default_value = "invgamma(1,0.15)")]
    prior_tau: HeterogeneityPrior,
    /// Prior model probabilities: fixed_null,fixed_alt,random_null,random_alt.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    model_probs: Option<Vec<f64>>,
    /// Also summarise μ averaged over the null models.
    #[arg(long)]
    full_averaging: bool,
    /// Prior and model-averaged posterior of μ as SVG.
    #[arg(long)]
    density: Option<PathBuf>,
    /// Prior and model-averaged posterior of τ as SVG.
    #[arg(long)]
    tau_density: Option<PathBuf>,
    #[arg(long)]
    forest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    selection: SelectionArgs,
    /// Output file; standard output when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[command(flatten)]
    db: DbArg,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Directory with the web UI bundle.
    #[arg(long = "static")]
    static_dir: Option<PathBuf>,
    /// Allowed CORS origin (repeatable); any origin when absent.
    #[arg(long = "cors-origin")]
    cors_origins: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<trialbench::Error> for CliError {
    fn from(e: trialbench::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// `out.svg`, `out-2.svg`, ... for analyses beyond the first.
fn numbered(path: &Path, index: usize) -> PathBuf {
    if index == 0 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{}.{}", index + 1, ext.to_string_lossy()),
        None => format!("{stem}-{}", index + 1),
    };
    path.with_file_name(name)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string(value).map_err(|e| CliError::Data(e.to_string()))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    1
                }
            };
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let json = cli.json;
    let text = match cli.command {
        Command::Ingest(a) => ingest(a, json, err)?,
        Command::Search(a) => search(a, json)?,
        Command::Show(a) => show(a, json)?,
        Command::Analyze(a) => analyze(a, json)?,
        Command::Bayes(a) => bayes(a, json)?,
        Command::Export(a) => export(a)?,
        Command::Serve(a) => return serve(a),
    };
    out.write_all(text.as_bytes())
        .and_then(|_| if text.ends_with('\n') || text.is_empty() { Ok(()) } else { out.write_all(b"\n") })
        .map_err(|e| CliError::Data(e.to_string()))
}

fn ingest(a: IngestArgs, json: bool, err: &mut dyn Write) -> Result<String, CliError> {
    let mut reviews = match &a.merge {
        Some(path) => load_database(path)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?
            .reviews()
            .to_vec(),
        None => Vec::new(),
    };
    for file in &a.files {
        let text = std::fs::read_to_string(file).map_err(io_err(file))?;
        let import = parse_rm5_subset(&text).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
        for w in &import.warnings {
            let _ = writeln!(err, "warning: {}: <{}> {}", file.display(), w.element, w.message);
        }
        reviews.push(import.review);
    }
    let snapshot = DatabaseSnapshot::new(reviews)?;
    write_file(&a.output, &serialize_database(&snapshot))?;
    let counts = snapshot.counts();
    if json {
        to_json(&counts)
    } else {
        Ok(format!(
            "wrote {}: {} reviews, {} meta-analyses, {} studies",
            a.output.display(),
            counts.reviews,
            counts.meta_analyses,
            counts.studies
        ))
    }
}

#[derive(serde::Serialize)]
struct ReviewSummary<'a> {
    id: &'a str,
    title: &'a str,
    year: i32,
}

fn search(a: SearchArgs, json: bool) -> Result<String, CliError> {
    let snapshot = a.db.load()?;
    let index = SearchIndex::build(&snapshot);
    let (mode, query) = if !a.keywords.is_empty() {
        (FilterMode::Keywords, Query::Labels(a.keywords))
    } else if !a.topics.is_empty() {
        (FilterMode::Topics, Query::Labels(a.topics))
    } else {
        (FilterMode::Title, Query::Text(a.title.unwrap_or_default()))
    };
    let ids = index.filter(mode, &query);
    if json {
        let rows: Vec<ReviewSummary> = ids
            .iter()
            .filter_map(|id| snapshot.review(id))
            .map(|r| ReviewSummary {
                id: &r.id,
                title: &r.title,
                year: r.year,
            })
            .collect();
        return to_json(&rows);
    }
    if ids.is_empty() {
        return Ok("no matching reviews".into());
    }
    let mut text = report::reviews(&snapshot, &ids);
    text.push('\n');
    text.push_str(&report::listing(&list_meta_analyses(&snapshot, &ids)?));
    Ok(text)
}

fn show(a: ShowArgs, json: bool) -> Result<String, CliError> {
    let snapshot = a.db.load()?;
    if let Some(id) = &a.review {
        let rows = list_meta_analyses(&snapshot, std::slice::from_ref(id))?;
        return if json { to_json(&rows) } else { Ok(report::listing(&rows)) };
    }
    let id = a.ma.as_deref().unwrap_or_default();
    let ma = snapshot
        .meta_analysis(id)
        .ok_or_else(|| CliError::Data(format!("unknown id `{id}`")))?;
    if json {
        return to_json(ma);
    }
    let rows = list_meta_analyses(&snapshot, std::slice::from_ref(&ma.review_id))?;
    let mut text = report::listing(&rows.into_iter().filter(|r| r.meta_analysis_id == id).collect::<Vec<_>>());
    let selection = Selection {
        items: vec![SelectionItem {
            meta_analysis_id: id.to_string(),
            subgroup_ids: None,
        }],
        target_group: TargetGroup::Group1,
        pooled: false,
        scale: match ma.outcome_kind {
            trialbench::dataset::OutcomeKind::Dichotomous => EffectScale::LogRiskRatio,
            trialbench::dataset::OutcomeKind::Continuous => EffectScale::MeanDifference,
        },
        overlay: vec![],
    };
    text.push('\n');
    text.push_str(&export_csv(&resolve_selection(&snapshot, &selection)?)?);
    Ok(text)
}

fn analysed(
    selection: &SelectionArgs,
    request: impl FnOnce(Selection) -> AnalysisRequest,
) -> Result<(DatabaseSnapshot, AnalysisRequest, AnalysisResponse), CliError> {
    let snapshot = selection.db.load()?;
    let request = request(selection.selection()?);
    let response = run_analysis(&snapshot, &request)?;
    Ok((snapshot, request, response))
}

fn analyze(a: AnalyzeArgs, json: bool) -> Result<String, CliError> {
    let (snapshot, request, response) = analysed(&a.selection, |s| AnalysisRequest::classical(s, a.method))?;
    if let Some(path) = &a.csv {
        write_file(path, &export_csv(&resolve_selection(&snapshot, &request.selection)?)?)?;
    }
    for (i, set) in response.analyses.iter().enumerate() {
        if let Some(path) = &a.forest {
            write_file(&numbered(path, i), &render_forest(&forest_spec(set)?)?)?;
        }
        if let Some(path) = &a.funnel {
            write_file(&numbered(path, i), &render_funnel(&set.estimates, &funnel_centre(set)?, set.scale)?)?;
        }
    }
    if json {
        return to_json(&response);
    }
    Ok(response
        .analyses
        .iter()
        .filter_map(|set| set.classical.as_ref().map(|c| report::classical(set, c)))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

fn bayes(a: BayesArgs, json: bool) -> Result<String, CliError> {
    let prior_model_probs = match &a.model_probs {
        Some(p) => ModelProbs::from_array([p[0], p[1], p[2], p[3]]),
        None => ModelProbs::default(),
    };
    let priors = PriorSpec {
        effect: a.prior_mu,
        heterogeneity: a.prior_tau,
    };
    let (_, _, response) = analysed(&a.selection, |selection| AnalysisRequest {
        selection,
        classical: None,
        bayesian: Some(BayesianSpec {
            priors,
            prior_model_probs,
            scale: None,
            full_averaging: a.full_averaging,
        }),
    })?;
    for (i, set) in response.analyses.iter().enumerate() {
        if let Some(path) = &a.density {
            let spec = density_spec(set, Parameter::Mu, PosteriorModel::Averaged)?;
            write_file(&numbered(path, i), &render_density(&spec)?)?;
        }
        if let Some(path) = &a.tau_density {
            let spec = density_spec(set, Parameter::Tau, PosteriorModel::Averaged)?;
            write_file(&numbered(path, i), &render_density(&spec)?)?;
        }
        if let Some(path) = &a.forest {
            write_file(&numbered(path, i), &render_forest(&forest_spec(set)?)?)?;
        }
    }
    if json {
        return to_json(&response);
    }
    Ok(response
        .analyses
        .iter()
        .filter_map(|set| set.bayesian.as_ref().map(|b| report::bayesian(set, b)))
        .collect::<Vec<_>>()
        .join("\n\n"))
}

fn export(a: ExportArgs) -> Result<String, CliError> {
    let snapshot = a.selection.db.load()?;
    let selection = a.selection.selection()?;
    let csv = export_csv(&resolve_selection(&snapshot, &selection)?)?;
    match &a.output {
        Some(path) => {
            write_file(path, &csv)?;
            Ok(String::new())
        }
        None => Ok(csv),
    }
}

fn serve(a: ServeArgs) -> Result<(), CliError> {
    let snapshot = a.db.load()?;
    let state = AppState::new(snapshot, a.db.db.clone());
    let config = ServiceConfig {
        static_dir: a.static_dir,
        cors_origins: a.cors_origins,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    runtime
        .block_on(service::serve(state, config, a.port))
        .map_err(|e| CliError::Data(format!("server: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbered_paths() {
        assert_eq!(numbered(Path::new("out/forest.svg"), 0), PathBuf::from("out/forest.svg"));
        assert_eq!(numbered(Path::new("out/forest.svg"), 1), PathBuf::from("out/forest-2.svg"));
        assert_eq!(numbered(Path::new("plot"), 2), PathBuf::from("plot-3"));
    }

    #[test]
    fn subgroup_targets() {
        let cli = Cli::try_parse_from([
            "trialbench", "export", "--db", "x", "--ma", "a", "--ma", "b", "--subgroup", "kids", "--subgroup",
            "b/adults",
        ])
        .unwrap();
        let Command::Export(e) = cli.command else { panic!() };
        let sel = e.selection.selection().unwrap();
        assert_eq!(sel.items[0].subgroup_ids, Some(vec!["kids".to_string()]));
        assert_eq!(sel.items[1].subgroup_ids, Some(vec!["kids".to_string(), "adults".to_string()]));
    }

    #[test]
    fn exit_codes() {
        let mut out = Vec::new();
        let mut err = Vec::new();
        assert_eq!(run(["trialbench", "frobnicate"], &mut out, &mut err), 1);
        assert_eq!(run(["trialbench", "--help"], &mut out, &mut err), 0);
        assert_eq!(run(["trialbench", "analyze", "--ma", "x", "--scale", "nope"], &mut out, &mut err), 1);
    }
}
