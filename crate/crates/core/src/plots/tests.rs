use quick_xml::events::Event;
use quick_xml::Reader;

use super::*;
use crate::classical::{fixed_effect_iv, Method, PooledResult};
use crate::effectsize::{EffectEstimate, EffectScale};

#[derive(Debug, Clone)]
struct Element {
    name: String,
    attrs: Vec<(String, String)>,
}

impl Element {
    fn attr(&self, k: &str) -> Option<&str> {
        self.attrs.iter().find(|(a, _)| a == k).map(|(_, v)| v.as_str())
    }

    fn num(&self, k: &str) -> f64 {
        self.attr(k).unwrap().parse().unwrap()
    }

    fn has_class(&self, c: &str) -> bool {
        self.attr("class").is_some_and(|v| v.split_whitespace().any(|x| x == c))
    }
}

/// Parses the document strictly and returns every element.
fn parse(svg: &str) -> Vec<Element> {
    let mut r = Reader::from_str(svg);
    let mut out = Vec::new();
    let mut depth = 0i32;
    loop {
        match r.read_event().expect("well-formed XML") {
            ev @ (Event::Start(_) | Event::Empty(_)) => {
                if matches!(ev, Event::Start(_)) {
                    depth += 1;
                }
                let (Event::Start(e) | Event::Empty(e)) = ev else { unreachable!() };
                out.push(Element {
                    name: String::from_utf8(e.name().as_ref().to_vec()).unwrap(),
                    attrs: e
                        .attributes()
                        .map(|a| {
                            let a = a.expect("valid attribute");
                            (
                                String::from_utf8(a.key.as_ref().to_vec()).unwrap(),
                                a.unescape_value().unwrap().into_owned(),
                            )
                        })
                        .collect(),
                });
            }
            Event::End(_) => depth -= 1,
            Event::Eof => break,
            _ => {}
        }
    }
    assert_eq!(depth, 0, "unbalanced tags");
    out
}

fn root(els: &[Element]) -> &Element {
    let svg = &els[0];
    assert_eq!(svg.name, "svg");
    for k in ["width", "height", "viewBox"] {
        assert!(svg.attr(k).is_some(), "missing {k}");
    }
    svg
}

fn spec(n: usize, new_last: bool) -> ForestPlotSpec {
    ForestPlotSpec {
        rows: (0..n)
            .map(|i| ForestRow {
                label: format!("Study {i} <{}>", 2000 + i),
                y: -0.8 + 0.2 * i as f64,
                ci_low: -1.5 + 0.2 * i as f64,
                ci_high: -0.1 + 0.2 * i as f64,
                weight_pct: 100.0 / n as f64,
                is_new: new_last && i == n - 1,
            })
            .collect(),
        pooled: ForestPooled { y: -0.784, ci_low: -1.207, ci_high: -0.361, label: "FE Model".into() },
        scale: EffectScale::LogRiskRatio,
        axis_label: None,
    }
}

#[test]
fn forest_counts_and_accent() {
    let svg = render_forest(&spec(5, true)).unwrap();
    let els = parse(&svg);
    let r = root(&els);
    assert_eq!(r.num("width"), FOREST_WIDTH);
    assert_eq!(r.num("height"), forest_height(5));
    let markers: Vec<_> = els.iter().filter(|e| e.has_class("marker")).collect();
    assert_eq!(markers.len(), 5);
    assert!(markers.iter().all(|m| m.name == "rect"));
    assert_eq!(els.iter().filter(|e| e.has_class("pooled-diamond")).count(), 1);
    assert!(markers[4].has_class("new-study"));
    assert!(markers[..4].iter().all(|m| !m.has_class("new-study")));
    assert!(svg.contains("\u{2212}0.784 [\u{2212}1.207, \u{2212}0.361]"));
    assert!(svg.contains("Study 0 &lt;2000&gt;"));
}

#[test]
fn forest_is_deterministic() {
    let s = spec(4, false);
    assert_eq!(render_forest(&s).unwrap(), render_forest(&s).unwrap());
}

#[test]
fn forest_marker_positions_invert() {
    let s = spec(6, false);
    let map = forest_axis(&s);
    let els = parse(&render_forest(&s).unwrap());
    let markers: Vec<_> = els.iter().filter(|e| e.has_class("marker")).collect();
    for (m, row) in markers.iter().zip(&s.rows) {
        let cx = m.num("x") + m.num("width") / 2.0;
        let back = map.invert(cx);
        assert!((map.map(back) - map.map(row.y)).abs() < 1e-6);
        assert!((back - row.y).abs() < 1e-6, "{back} vs {}", row.y);
        // area ∝ weight
        let area = m.num("width") * m.num("height");
        assert!((area / row.weight_pct - 400.0 / 100.0).abs() < 1e-4);
    }
}

#[test]
fn forest_rejects_bad_rows() {
    let mut s = spec(3, false);
    s.rows[1].ci_high = f64::NAN;
    let err = render_forest(&s).unwrap_err().to_string();
    assert!(err.contains("rows[1]") && err.contains("Study 1"), "{err}");
    let mut s = spec(3, false);
    s.rows.clear();
    assert!(render_forest(&s).is_err());
    let mut s = spec(2, false);
    s.rows[0].weight_pct = 120.0;
    assert!(render_forest(&s).is_err());
}

fn est(y: f64, se: f64) -> EffectEstimate {
    EffectEstimate::new("s", y, se, EffectScale::LogOddsRatio)
}

#[test]
fn funnel_points_and_pooled_line() {
    let es = vec![est(0.1, 0.2), est(-0.3, 0.4), est(0.5, 0.1), est(0.0, 0.3)];
    let pooled = fixed_effect_iv(&es).unwrap();
    let svg = render_funnel(&es, &pooled, EffectScale::LogOddsRatio).unwrap();
    let els = parse(&svg);
    root(&els);
    assert_eq!(els.iter().filter(|e| e.name == "circle").count(), 4);
    let (x, _) = funnel_axes(&es, &pooled);
    let line = els.iter().find(|e| e.has_class("pooled-line")).unwrap();
    assert!((line.num("x1") - x.map(pooled.y)).abs() < 1e-6);
    assert_eq!(line.num("x1"), line.num("x2"));
    assert_eq!(svg, render_funnel(&es, &pooled, EffectScale::LogOddsRatio).unwrap());
}

#[test]
fn symmetric_funnel_is_symmetric_in_pixels() {
    let mut es = Vec::new();
    for (se, d) in [(0.1, 0.1), (0.2, 0.25), (0.35, 0.5)] {
        es.push(est(0.3 + d, se));
        es.push(est(0.3 - d, se));
    }
    let pooled = fixed_effect_iv(&es).unwrap();
    assert!((pooled.y - 0.3).abs() < 1e-12);
    let els = parse(&render_funnel(&es, &pooled, EffectScale::LogOddsRatio).unwrap());
    let line_x = els.iter().find(|e| e.has_class("pooled-line")).unwrap().num("x1");
    let pts: Vec<(f64, f64)> = els
        .iter()
        .filter(|e| e.name == "circle")
        .map(|e| (e.num("cx") - line_x, e.num("cy")))
        .collect();
    for pair in pts.chunks(2) {
        assert!((pair[0].0 + pair[1].0).abs() < 1e-5, "{pair:?}");
        assert_eq!(pair[0].1, pair[1].1);
    }
}

#[test]
fn funnel_needs_points() {
    let pooled = PooledResult::from_estimate(Method::FixedIv, 0.0, 1.0, &[1.0], 0.0);
    assert!(render_funnel(&[], &pooled, EffectScale::LogOddsRatio).is_err());
}

fn gaussian_curve(mean: f64, sd: f64) -> Curve {
    let grid: Vec<f64> = (0..201).map(|i| -3.0 + 6.0 * i as f64 / 200.0).collect();
    let density = grid
        .iter()
        .map(|x| (-0.5 * ((x - mean) / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt()))
        .collect();
    Curve { grid, density }
}

fn dspec() -> DensityPlotSpec {
    DensityPlotSpec {
        prior: gaussian_curve(0.0, 1.0),
        posterior: gaussian_curve(-0.668, 0.22),
        ci_low: -0.668 - 1.96 * 0.22,
        ci_high: -0.668 + 1.96 * 0.22,
        x_label: "Effect size (log RR)".into(),
        y_label: "Density".into(),
        x_range: None,
    }
}

#[test]
fn density_shading_matches_interval() {
    let s = dspec();
    let svg = render_density(&s).unwrap();
    let els = parse(&svg);
    root(&els);
    let x = density_axes(&s);
    let poly = els
        .iter()
        .find(|e| e.name == "polygon" && e.has_class("credible-region"))
        .unwrap();
    let xs: Vec<f64> = poly
        .attr("points")
        .unwrap()
        .split_whitespace()
        .map(|p| p.split(',').next().unwrap().parse().unwrap())
        .collect();
    let (lo, hi) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    assert!((x.invert(lo) - s.ci_low).abs() < 1e-6);
    assert!((x.invert(hi) - s.ci_high).abs() < 1e-6);
    assert_eq!(els.iter().filter(|e| e.name == "path" && e.has_class("prior")).count(), 1);
    assert_eq!(els.iter().filter(|e| e.name == "path" && e.has_class("posterior")).count(), 1);
}

#[test]
fn identical_curves_still_render() {
    let mut s = dspec();
    s.prior = s.posterior.clone();
    let els = parse(&render_density(&s).unwrap());
    let prior = els.iter().find(|e| e.has_class("prior")).unwrap();
    let post = els.iter().find(|e| e.has_class("posterior")).unwrap();
    assert_eq!(prior.attr("d"), post.attr("d"));
    assert!(els.iter().any(|e| e.has_class("credible-region")));
}

#[test]
fn density_validation() {
    let mut s = dspec();
    s.ci_high = 10.0;
    assert!(render_density(&s).is_err());
    let mut s = dspec();
    s.posterior.density.pop();
    assert!(render_density(&s).is_err());
    let mut s = dspec();
    s.prior.density[3] = -1.0;
    assert!(render_density(&s).is_err());
}

#[test]
fn posterior_density_plot() {
    let es = vec![est(-0.9, 0.45), est(-0.5, 0.6), est(-1.2, 0.8)];
    let pri = crate::bayes::PriorSpec::default();
    for parameter in [crate::bayes::Parameter::Mu, crate::bayes::Parameter::Tau] {
        let d = crate::bayes::posterior_density(parameter, crate::bayes::PosteriorModel::Averaged, &es, &pri)
            .unwrap();
        let svg = render_density(&DensityPlotSpec::from_posterior(&d, "x")).unwrap();
        root(&parse(&svg));
    }
}
