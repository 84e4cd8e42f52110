//! Plain-text tables for terminal output. Numbers use 3 decimals.

use std::fmt::Write;

use trialbench::analysis::{BayesianOutput, ClassicalOutput, SetAnalysis};
use trialbench::bayes::Model;
use trialbench::classical::Z_975;
use trialbench::dataset::DatabaseSnapshot;
use trialbench::search::MetaAnalysisListing;

pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        let s = format!("{v:.3}");
        if s == "-0.000" {
            "0.000".into()
        } else {
            s
        }
    }
}

fn p_value(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        num(p)
    }
}

/// Left-aligns the first column and right-aligns the rest.
fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut out = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            let pad = w - cell.chars().count();
            if i == 0 {
                out.push_str(cell);
                out.push_str(&" ".repeat(pad));
            } else {
                out.push_str("  ");
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

pub fn set_header(a: &SetAnalysis) -> String {
    let mut out = format!(
        "{}\n{} vs {} | scale {}\n\n",
        a.name,
        a.group1_label,
        a.group2_label,
        a.scale.label()
    );
    let rows: Vec<Vec<String>> = a
        .estimates
        .iter()
        .map(|e| {
            vec![
                if e.is_new { format!("{} *", e.label) } else { e.label.clone() },
                num(e.y),
                num(e.se),
                num(e.y - Z_975 * e.se),
                num(e.y + Z_975 * e.se),
            ]
        })
        .collect();
    out.push_str(&table(&["Study", a.scale.label(), "SE", "95% CI low", "95% CI high"], &rows));
    if a.estimates.iter().any(|e| e.is_new) {
        out.push_str("* added study\n");
    }
    for x in &a.exclusions {
        let _ = writeln!(out, "excluded: {} ({})", x.label, x.reason);
    }
    out
}

pub fn classical(a: &SetAnalysis, c: &ClassicalOutput) -> String {
    let mut out = set_header(a);
    let h = &c.heterogeneity;
    out.push_str("\nHeterogeneity\n");
    out.push_str(&table(
        &["Q", "df", "p", "tau^2", "I^2 (%)", "H^2"],
        &[vec![
            num(h.q),
            h.df.to_string(),
            p_value(h.p_q),
            num(h.tau2),
            num(h.i2),
            num(h.h2),
        ]],
    ));
    let p = &c.pooled;
    let _ = writeln!(out, "\nCoefficients: {}", p.method.label());
    out.push_str(&table(
        &["", "Estimate", "SE", "z", "p", "95% CI low", "95% CI high"],
        &[vec![
            a.scale.label().to_string(),
            num(p.y),
            num(p.se),
            num(p.z),
            p_value(p.p),
            num(p.ci_low),
            num(p.ci_high),
        ]],
    ));
    if a.scale.is_log() {
        let t = &c.transformed;
        out.push_str("\nTransformed coefficients\n");
        out.push_str(&table(
            &["", "Estimate", "95% CI low", "95% CI high"],
            &[vec![t.scale.clone(), num(t.estimate), num(t.ci_low), num(t.ci_high)]],
        ));
    }
    out.push_str("\nWeights\n");
    let rows: Vec<Vec<String>> = a
        .estimates
        .iter()
        .zip(&c.study_weights)
        .map(|(e, w)| vec![e.label.clone(), num(*w)])
        .collect();
    out.push_str(&table(&["Study", "Weight (%)"], &rows));
    if let Some(eg) = &c.egger {
        out.push_str("\nEgger's regression test\n");
        out.push_str(&table(
            &["Intercept", "SE", "t", "df", "p"],
            &[vec![num(eg.intercept), num(eg.se_intercept), num(eg.t), eg.df.to_string(), p_value(eg.p)]],
        ));
    }
    out
}

pub fn bayesian(a: &SetAnalysis, b: &BayesianOutput) -> String {
    let mut out = set_header(a);
    let r = &b.fit.result;
    let m = r.marginals.to_array();
    let prior = r.marginals.prior_model_probs.to_array();
    let post = r.posterior_model_probs.to_array();
    out.push_str("\nModel comparison\n");
    let rows: Vec<Vec<String>> = Model::ALL
        .iter()
        .enumerate()
        .map(|(i, model)| vec![model.label().to_string(), num(prior[i]), num(post[i]), num(m[i])])
        .collect();
    out.push_str(&table(&["Model", "P(M)", "P(M|data)", "log p(data|M)"], &rows));

    out.push_str("\nBayes factors\n");
    out.push_str(&table(
        &["", "BF", "log BF"],
        &[
            vec!["BF10 fixed".into(), num(r.bf10_fixed), num(r.log_bf10_fixed)],
            vec!["BF10 random".into(), num(r.bf10_random), num(r.log_bf10_random)],
            vec!["BF rf".into(), num(r.bf_rf), num(r.log_bf_rf)],
            vec!["BF10 inclusion".into(), num(r.bf_inclusion), num(r.log_bf_inclusion)],
        ],
    ));

    let header = ["Model", "Mean", "SD", "Median", "95% CrI low", "95% CrI high"];
    let summary_rows = |items: &[trialbench::bayes::ModelEstimate]| -> Vec<Vec<String>> {
        items
            .iter()
            .map(|e| {
                let s = e.summary;
                vec![e.model.label().into(), num(s.mean), num(s.sd), num(s.median), num(s.ci_low), num(s.ci_high)]
            })
            .collect()
    };
    let _ = writeln!(out, "\nEffect size mu ({})", a.scale.label());
    out.push_str(&table(&header, &summary_rows(&r.mu)));
    if let Some(u) = &r.mu_unconditional {
        let _ = writeln!(
            out,
            "averaged over all models: P(mu = 0) {}, mean {}, median {}, 95% CrI [{}, {}]",
            num(u.null_probability),
            num(u.mean),
            num(u.median),
            num(u.ci_low),
            num(u.ci_high)
        );
    }
    if !r.tau.is_empty() {
        out.push_str("\nHeterogeneity tau\n");
        out.push_str(&table(&header, &summary_rows(&r.tau)));
    }
    if !b.transformed.is_empty() {
        let label = a.scale.natural_label().unwrap_or("exp");
        let _ = writeln!(out, "\nTransformed effect size ({label})");
        let rows: Vec<Vec<String>> = b
            .transformed
            .iter()
            .map(|t| {
                let s = t.summary;
                vec![t.model.label().into(), num(s.mean), num(s.median), num(s.ci_low), num(s.ci_high)]
            })
            .collect();
        out.push_str(&table(&["Model", "Mean", "Median", "95% CrI low", "95% CrI high"], &rows));
    }
    out
}

pub fn listing(rows: &[MetaAnalysisListing]) -> String {
    let mut out = String::new();
    for ma in rows {
        let _ = writeln!(
            out,
            "{}  {} [{}] {} vs {}, {} studies",
            ma.meta_analysis_id, ma.name, ma.outcome_kind, ma.group1_label, ma.group2_label, ma.study_count
        );
        for sg in &ma.subgroups {
            let _ = writeln!(out, "    {}  {} ({} studies)", sg.id, sg.name, sg.study_count);
        }
    }
    out
}

pub fn reviews(snapshot: &DatabaseSnapshot, ids: &[String]) -> String {
    let rows: Vec<Vec<String>> = ids
        .iter()
        .filter_map(|id| snapshot.review(id))
        .map(|r| vec![r.id.clone(), r.year.to_string(), r.title.clone()])
        .collect();
    table(&["Review", "Year", "Title"], &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_decimals() {
        assert_eq!(num(0.4567), "0.457");
        assert_eq!(num(-0.0001), "0.000");
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(p_value(0.0002), "< .001");
    }

    #[test]
    fn table_alignment() {
        let t = table(&["Study", "y"], &[vec!["A".into(), "1.000".into()], vec!["Longer".into(), "-2.000".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Study        y");
        assert_eq!(lines[1], "------  ------");
        assert_eq!(lines[2], "A        1.000");
        assert_eq!(lines[3], "Longer  -2.000");
    }
}
