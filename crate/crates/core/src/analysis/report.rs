use std::fmt::Write;
use std::str::FromStr;

use super::{Analysis, AnalysisError, CopyPoint, Summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Html,
}

impl FromStr for ReportFormat {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, AnalysisError> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "html" => Ok(ReportFormat::Html),
            other => Err(AnalysisError::Config(format!("unknown report format {other:?}; expected json or html"))),
        }
    }
}

pub const PLOT_TOP: f64 = 20.0;
pub const PLOT_HEIGHT: f64 = 200.0;
const PLOT_LEFT: f64 = 50.0;
const SLOT: f64 = 90.0;
const BOX_WIDTH: f64 = 40.0;

/// SVG y coordinates of a boxplot. Whiskers reach min and max.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxGeometry {
    pub whisker_low: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_high: f64,
}

fn to_y(v: f64, lo: f64, hi: f64) -> f64 {
    PLOT_TOP + (hi - v) / (hi - lo) * PLOT_HEIGHT
}

/// Maps `s` onto a plot whose value axis spans `[lo, hi]`, `hi` at the top.
pub fn boxplot_geometry(s: &Summary, lo: f64, hi: f64) -> BoxGeometry {
    BoxGeometry {
        whisker_low: to_y(s.min, lo, hi),
        q1: to_y(s.q1, lo, hi),
        median: to_y(s.median, lo, hi),
        q3: to_y(s.q3, lo, hi),
        whisker_high: to_y(s.max, lo, hi),
    }
}

/// Renders the analysis. JSON keys are sorted, so equal inputs give equal bytes.
pub fn render_report(analysis: &Analysis, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let value = serde_json::to_value(analysis).expect("analysis serializes");
            let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
            s.push('\n');
            s
        }
        ReportFormat::Html => render_html(analysis),
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn boxplots(out: &mut String, analysis: &Analysis) {
    for model in &analysis.models {
        let _ = writeln!(out, "<h3>{}</h3>", esc(&model.name));
        let corpus: Vec<String> = model.corpus.iter().map(|(k, v)| format!("{} = {:.4}", esc(k), v)).collect();
        let _ = writeln!(out, "<p>n = {}; {}</p>", model.n, corpus.join(", "));
        let filled: Vec<_> = model
            .buckets
            .buckets
            .iter()
            .chain(std::iter::once(&model.buckets.overflow))
            .filter_map(|b| b.summary.map(|s| (b, s)))
            .collect();
        if filled.is_empty() {
            out.push_str("<p class=\"empty\">no data</p>\n");
            continue;
        }
        let lo = filled.iter().map(|(_, s)| s.min).fold(0.0, f64::min);
        let hi = filled.iter().map(|(_, s)| s.max).fold(1.0, f64::max);
        let width = PLOT_LEFT + SLOT * filled.len() as f64 + 10.0;
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" class=\"boxplot\">",
            PLOT_TOP + PLOT_HEIGHT + 40.0
        );
        let _ = writeln!(
            out,
            "<line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"#444\"/><text x=\"4\" y=\"{t:.2}\">{hi:.2}</text><text x=\"4\" y=\"{b:.2}\">{lo:.2}</text>",
            l = PLOT_LEFT - 5.0,
            t = PLOT_TOP,
            b = PLOT_TOP + PLOT_HEIGHT,
        );
        for (i, (bucket, s)) in filled.iter().enumerate() {
            let g = boxplot_geometry(s, lo, hi);
            let x = PLOT_LEFT + SLOT * i as f64;
            let mid = x + BOX_WIDTH / 2.0;
            let _ = writeln!(
                out,
                "<g><title>{label}: n={n} median={med:.4}</title>\
<line class=\"whisker\" x1=\"{mid:.2}\" y1=\"{wl:.2}\" x2=\"{mid:.2}\" y2=\"{wh:.2}\" stroke=\"#333\"/>\
<rect x=\"{x:.2}\" y=\"{q3:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"#9ecae1\" stroke=\"#333\"/>\
<line class=\"median\" x1=\"{x:.2}\" y1=\"{m:.2}\" x2=\"{xr:.2}\" y2=\"{m:.2}\" stroke=\"#d62728\"/>\
<text x=\"{x:.2}\" y=\"{ty:.2}\" font-size=\"10\">{label}</text></g>",
                label = esc(&bucket.label),
                n = s.count,
                med = s.median,
                wl = g.whisker_low,
                wh = g.whisker_high,
                q3 = g.q3,
                w = BOX_WIDTH,
                h = g.q1 - g.q3,
                m = g.median,
                xr = x + BOX_WIDTH,
                ty = PLOT_TOP + PLOT_HEIGHT + 20.0,
            );
        }
        out.push_str("</svg>\n");
    }
}

fn bar_chart(out: &mut String, series: &[(&str, &[CopyPoint])]) {
    let orders: Vec<usize> = series.first().map(|(_, c)| c.iter().map(|p| p.n).collect()).unwrap_or_default();
    if orders.is_empty() {
        out.push_str("<p class=\"empty\">no data</p>\n");
        return;
    }
    let bar = 16.0;
    let group = bar * series.len() as f64 + 20.0;
    let width = PLOT_LEFT + group * orders.len() as f64;
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{:.0}\" class=\"bars\">",
        PLOT_TOP + PLOT_HEIGHT + 40.0
    );
    const COLORS: [&str; 3] = ["#1f77b4", "#ff7f0e", "#7f7f7f"];
    for (gi, n) in orders.iter().enumerate() {
        let gx = PLOT_LEFT + group * gi as f64;
        for (si, (name, curve)) in series.iter().enumerate() {
            let Some(v) = curve.get(gi).and_then(|p| p.mean) else {
                continue;
            };
            let y = to_y(v, 0.0, 1.0);
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{y:.2}\" width=\"{bar:.2}\" height=\"{:.2}\" fill=\"{}\"><title>{} n={n}: {v:.4}</title></rect>",
                gx + bar * si as f64,
                PLOT_TOP + PLOT_HEIGHT - y,
                COLORS[si % COLORS.len()],
                esc(name),
            );
        }
        let _ = writeln!(out, "<text x=\"{gx:.2}\" y=\"{:.2}\" font-size=\"10\">n={n}</text>", PLOT_TOP + PLOT_HEIGHT + 20.0);
    }
    out.push_str("</svg>\n<p>");
    let legend: Vec<String> = series
        .iter()
        .enumerate()
        .map(|(i, (name, _))| format!("<span style=\"color:{}\">&#9632; {}</span>", COLORS[i % COLORS.len()], esc(name)))
        .collect();
    out.push_str(&legend.join(" "));
    out.push_str("</p>\n");
}

fn render_html(a: &Analysis) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Generation analysis: {m}</title>\
<style>body{{font-family:sans-serif;margin:2em}}table{{border-collapse:collapse}}td,th{{border:1px solid #ccc;padding:2px 6px}}.empty{{color:#888}}</style>\
</head><body>\n<h1>Generation analysis: {m}</h1>",
        m = esc(&a.metric)
    );
    let _ = writeln!(out, "<h2>{} by {}</h2>", esc(&a.metric), a.bucket_by);
    if a.models.is_empty() {
        out.push_str("<p class=\"empty\">no data</p>\n");
    } else {
        boxplots(&mut out, a);
    }

    out.push_str("<h2>n-gram copy rate against the source</h2>\n");
    let mut series: Vec<(&str, &[CopyPoint])> = a.models.iter().map(|m| (m.name.as_str(), m.copy.as_slice())).collect();
    if !a.reference_copy.is_empty() {
        series.push(("reference", &a.reference_copy));
    }
    bar_chart(&mut out, &series);

    out.push_str("<h2>Comparison</h2>\n");
    match &a.comparison {
        None => out.push_str("<p class=\"empty\">no data</p>\n"),
        Some(c) => {
            let _ = writeln!(
                out,
                "<table><tr><th>metric</th><th>{}</th><th>{}</th><th>delta</th></tr>",
                esc(&c.model_a),
                esc(&c.model_b)
            );
            for (name, d) in &c.deltas {
                let _ = writeln!(out, "<tr><td>{}</td><td>{:.4}</td><td>{:.4}</td><td>{:+.4}</td></tr>", esc(name), d.a, d.b, d.delta);
            }
            out.push_str("</table>\n");
            for (name, counts) in &c.winners {
                let _ = writeln!(
                    out,
                    "<table><tr><th>{} bucket</th><th>{} wins</th><th>{} wins</th><th>ties</th></tr>",
                    esc(name),
                    esc(&c.model_a),
                    esc(&c.model_b)
                );
                for w in counts {
                    let _ = writeln!(out, "<tr><td>{}</td><td>{}</td><td>{}</td><td>{}</td></tr>", esc(&w.bucket), w.a, w.b, w.ties);
                }
                out.push_str("</table>\n");
            }
            for (name, flag) in [(&c.model_a, c.copying_a), (&c.model_b, c.copying_b)] {
                if flag {
                    let _ = writeln!(out, "<p><strong>copying</strong>: {} copies the source more than the reference at every order.</p>", esc(name));
                }
            }
        }
    }
    out.push_str("</body></html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{bucket_scores, Analysis, BucketBy, ModelAnalysis};

    fn fixture() -> Analysis {
        let buckets = bucket_scores("rouge-l", &[1, 2, 3, 4, 300], &[0.2, 0.4, 0.6, 0.8, 0.5], &[0, 256]).unwrap();
        Analysis {
            metric: "rouge-l".into(),
            bucket_by: BucketBy::SourceLength,
            models: vec![ModelAnalysis {
                name: "m<1>".into(),
                n: 5,
                corpus: [("rouge-l".to_string(), 0.5)].into(),
                buckets,
                copy: vec![CopyPoint { n: 1, mean: Some(0.75), defined: 5 }],
            }],
            reference_copy: vec![CopyPoint { n: 1, mean: Some(0.5), defined: 5 }],
            comparison: None,
        }
    }

    #[test]
    fn whiskers_follow_quartiles() {
        let a = fixture();
        let s = a.models[0].buckets.buckets[0].summary.unwrap();
        for (got, want) in [(s.q1, 0.35), (s.median, 0.5), (s.q3, 0.65)] {
            assert!((got - want).abs() < 1e-12);
        }
        let g = boxplot_geometry(&s, 0.0, 1.0);
        assert!((g.q1 - (20.0 + 0.65 * 200.0)).abs() < 1e-9);
        assert!((g.q3 - (20.0 + 0.35 * 200.0)).abs() < 1e-9);
        assert!((g.whisker_low - 180.0).abs() < 1e-9);
        assert!((g.whisker_high - 60.0).abs() < 1e-9);
        let html = render_report(&a, ReportFormat::Html);
        assert!(html.contains("y1=\"180.00\" x2=\"70.00\" y2=\"60.00\""), "{html}");
        assert!(html.contains("y=\"90.00\" width=\"40.00\" height=\"60.00\""));
        assert!(html.contains("m&lt;1&gt;"));
        assert!(!html.contains("http://") || html.matches("http://").all(|_| html.contains("xmlns=\"http://www.w3.org/2000/svg\"")));
    }

    #[test]
    fn json_is_canonical() {
        let a = fixture();
        let json = render_report(&a, ReportFormat::Json);
        let back: Analysis = serde_json::from_str(&json).unwrap();
        assert_eq!(render_report(&back, ReportFormat::Json), json);
        assert_eq!(render_report(&a, ReportFormat::Html), render_report(&back, ReportFormat::Html));
    }

    #[test]
    fn empty_analysis_has_no_data_sections() {
        let html = render_report(&Analysis::empty("bleu"), ReportFormat::Html);
        assert_eq!(html.matches("no data").count(), 3);
        let json = render_report(&Analysis::empty("bleu"), ReportFormat::Json);
        serde_json::from_str::<serde_json::Value>(&json).unwrap();
    }
}
