//! Self-contained HTML rendering with inline SVG charts. Output depends only
//! on the report value, so re-rendering a stored report.json reproduces the
//! original document byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write;

use super::{ClientEntry, ClientReportPayload, DrReport, Histogram};
use crate::readiness::{OutcomeSummary, ReadinessStatus};

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7",
    "#9c755f", "#bab0ac",
];

const STYLE: &str = "\
body{font-family:system-ui,-apple-system,Segoe UI,Helvetica,Arial,sans-serif;margin:2rem;color:#222;max-width:1100px}
h1{margin-bottom:.2rem}
section{margin-top:2rem}
table{border-collapse:collapse;margin:.5rem 0}
th,td{border:1px solid #ccc;padding:.25rem .6rem;text-align:left}
th{background:#f2f2f2}
td.num{text-align:right;font-variant-numeric:tabular-nums}
tr.flagged td,tr.degenerate td{background:#fdecea}
tr.flagged td:first-child{border-left:3px solid #c62828}
.badge{display:inline-block;padding:0 .5rem;border-radius:.6rem;font-size:.85em;color:#fff}
.badge.ready{background:#2e7d32}
.badge.flagged{background:#c62828}
.badge.degenerate{background:#6a1b9a}
.badge.absent{background:#757575}
.meta,.empty{color:#666}
.client{border:1px solid #ddd;border-radius:4px;padding:.5rem 1rem;margin:1rem 0}
.charts{display:flex;flex-wrap:wrap;gap:.5rem}
svg text{font-size:10px;fill:#333}
.legend span{margin-right:1rem}
.swatch{display:inline-block;width:.8rem;height:.8rem;margin-right:.3rem;vertical-align:middle}
";

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Human-readable number: integers plainly, small magnitudes in scientific
/// notation, everything else to four decimals without trailing zeros.
fn num(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    if v == v.trunc() && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    if v.abs() < 1e-3 {
        return format!("{v:.3e}");
    }
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn coord(v: f64) -> String {
    format!("{v:.2}")
}

fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn status_class(s: ReadinessStatus) -> &'static str {
    match s {
        ReadinessStatus::Ready => "ready",
        ReadinessStatus::Flagged => "flagged",
        ReadinessStatus::Degenerate => "degenerate",
    }
}

fn badge(class: &str, text: &str) -> String {
    format!("<span class=\"badge {class}\">{text}</span>")
}

pub fn render_html(report: &DrReport) -> String {
    let mut h = String::new();
    let title = format!("Data readiness report: {}", esc(&report.experiment_id));
    let _ = write!(
        h,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{title}</title>\n<style>\n{STYLE}</style>\n</head>\n<body>\n<h1>{title}</h1>\n"
    );
    let v = &report.verdicts;
    let _ = writeln!(
        h,
        "<p class=\"meta\">Generated {} for {} client(s). Module outcomes: {} Ready, {} Flagged, {} Degenerate. Absent clients: {}.</p>",
        esc(&report.generated_at),
        report.clients.len(),
        v.ready,
        v.flagged,
        v.degenerate,
        v.absent_clients
    );
    standard_section(&mut h, &report.clients);
    custom_section(&mut h, &report.clients);
    client_plots_section(&mut h, &report.clients);
    combined_section(&mut h, report);
    h.push_str("</body>\n</html>\n");
    h
}

fn absent_note(c: &ClientEntry) -> String {
    format!(
        "{} {}",
        badge("absent", "Absent"),
        esc(c.reason.as_deref().unwrap_or("no report received"))
    )
}

fn standard_section(h: &mut String, clients: &[ClientEntry]) {
    h.push_str("<section id=\"standard-metrics\">\n<h2>(a) Standard metrics</h2>\n");
    h.push_str("<table>\n<tr><th>Client</th><th>Rows</th><th>Missing fraction</th><th>Numeric columns</th></tr>\n");
    for c in clients {
        match &c.payload {
            Some(p) => {
                let by_name: BTreeMap<&str, f64> = p
                    .standard_metrics
                    .iter()
                    .map(|m| (m.name.as_str(), m.value))
                    .collect();
                let missing = by_name.get("missing_fraction").copied().unwrap_or(0.0);
                let n_numeric = p
                    .standard_metrics
                    .iter()
                    .filter(|m| m.name.starts_with("mean:"))
                    .count();
                let _ = writeln!(
                    h,
                    "<tr><td>{}</td><td class=\"num\">{}</td><td class=\"num\">{}</td><td class=\"num\">{}</td></tr>",
                    esc(&c.client_id),
                    p.n_rows,
                    num(missing),
                    n_numeric
                );
            }
            None => {
                let _ = writeln!(
                    h,
                    "<tr class=\"absent\"><td>{}</td><td colspan=\"3\">{}</td></tr>",
                    esc(&c.client_id),
                    absent_note(c)
                );
            }
        }
    }
    h.push_str("</table>\n");
    for c in clients {
        let Some(p) = &c.payload else { continue };
        column_stats_table(h, p);
    }
    h.push_str("</section>\n");
}

fn column_stats_table(h: &mut String, p: &ClientReportPayload) {
    // standard metrics are named `<stat>:<column>`
    let mut rows: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut order: Vec<&str> = Vec::new();
    for m in &p.standard_metrics {
        if let Some((stat, col)) = m.name.split_once(':') {
            if !rows.contains_key(col) {
                order.push(col);
            }
            rows.entry(col).or_default().insert(stat, m.value);
        }
    }
    if order.is_empty() {
        return;
    }
    let _ = writeln!(
        h,
        "<details>\n<summary>Column statistics for {}</summary>\n<table>\n<tr><th>Column</th><th>Mean</th><th>Median</th><th>Std. dev.</th></tr>",
        esc(&p.client_id)
    );
    for col in order {
        let r = &rows[col];
        let cell = |k: &str| r.get(k).map_or("&ndash;".to_string(), |v| num(*v));
        let _ = writeln!(
            h,
            "<tr><td>{}</td><td class=\"num\">{}</td><td class=\"num\">{}</td><td class=\"num\">{}</td></tr>",
            esc(col),
            cell("mean"),
            cell("median"),
            cell("std_dev")
        );
    }
    h.push_str("</table>\n</details>\n");
}

fn custom_section(h: &mut String, clients: &[ClientEntry]) {
    h.push_str("<section id=\"custom-metrics\">\n<h2>(b) Custom metrics</h2>\n");
    let any = clients
        .iter()
        .any(|c| c.payload.as_ref().is_some_and(|p| !p.outcomes.is_empty()));
    if !any {
        h.push_str("<p class=\"empty\">none configured</p>\n");
    }
    h.push_str("<table>\n<tr><th>Client</th><th>Module</th><th>Rule (violated when true)</th><th>Before</th><th>After</th><th>Remedies applied</th><th>Status</th></tr>\n");
    for c in clients {
        match &c.payload {
            Some(p) if p.outcomes.is_empty() => {
                let _ = writeln!(
                    h,
                    "<tr><td>{}</td><td colspan=\"6\" class=\"empty\">none configured</td></tr>",
                    esc(&c.client_id)
                );
            }
            Some(p) => {
                for o in &p.outcomes {
                    verdict_row(h, &c.client_id, o);
                }
            }
            None => {
                let _ = writeln!(
                    h,
                    "<tr class=\"absent\"><td>{}</td><td colspan=\"6\">{}</td></tr>",
                    esc(&c.client_id),
                    absent_note(c)
                );
            }
        }
    }
    h.push_str("</table>\n</section>\n");
}

fn verdict_row(h: &mut String, client: &str, o: &OutcomeSummary) {
    let class = status_class(o.final_status);
    let _ = writeln!(
        h,
        "<tr class=\"verdict {class}\"><td>{}</td><td>{}</td><td><code>{}</code></td><td class=\"num\">{}</td><td class=\"num\">{}</td><td class=\"num\">{}</td><td>{}</td></tr>",
        esc(client),
        esc(&o.module_id),
        esc(&o.rule.to_string()),
        num(o.before()),
        num(o.after()),
        o.remedies_applied(),
        badge(class, &o.final_status.to_string())
    );
}

fn client_plots_section(h: &mut String, clients: &[ClientEntry]) {
    h.push_str("<section id=\"client-plots\">\n<h2>(c) Individual client plots</h2>\n");
    for (i, c) in clients.iter().enumerate() {
        let _ = writeln!(h, "<div class=\"client\">\n<h3>{}</h3>", esc(&c.client_id));
        match &c.payload {
            Some(p) => {
                h.push_str("<div class=\"charts\">\n");
                if p.class_histogram.is_empty() {
                    h.push_str("<p class=\"empty\">no label column</p>\n");
                } else {
                    bar_chart(h, &p.class_histogram, color(i));
                }
                for hist in &p.distribution_histograms {
                    histogram_chart(h, hist, color(i));
                }
                h.push_str("</div>\n");
            }
            None => {
                let _ = writeln!(h, "<p>{}</p>", absent_note(c));
            }
        }
        h.push_str("</div>\n");
    }
    h.push_str("</section>\n");
}

fn bar_chart(h: &mut String, counts: &BTreeMap<String, u64>, fill: &str) {
    let (w, ht, left, bottom, top) = (320.0, 200.0, 36.0, 30.0, 20.0);
    let max = counts.values().copied().max().unwrap_or(1).max(1) as f64;
    let plot_w = w - left - 10.0;
    let plot_h = ht - bottom - top;
    let slot = plot_w / counts.len() as f64;
    let _ = writeln!(
        h,
        "<svg class=\"bar-chart\" width=\"{w}\" height=\"{ht}\" viewBox=\"0 0 {w} {ht}\" role=\"img\"><title>Class distribution</title>"
    );
    let _ = writeln!(h, "<text x=\"{left}\" y=\"12\">Class distribution</text>");
    for (k, (label, &n)) in counts.iter().enumerate() {
        let bh = plot_h * n as f64 / max;
        let x = left + slot * k as f64 + slot * 0.1;
        let y = top + plot_h - bh;
        let _ = writeln!(
            h,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/><text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{n}</text><text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            coord(x),
            coord(y),
            coord(slot * 0.8),
            coord(bh),
            coord(x + slot * 0.4),
            coord(y - 3.0),
            coord(x + slot * 0.4),
            coord(top + plot_h + 14.0),
            esc(label)
        );
    }
    let _ = writeln!(
        h,
        "<line x1=\"{left}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#555\"/>\n</svg>",
        top + plot_h,
        w - 10.0,
        top + plot_h
    );
}

fn histogram_chart(h: &mut String, hist: &Histogram, fill: &str) {
    let (w, ht, left, bottom, top) = (240.0, 160.0, 10.0, 28.0, 20.0);
    let title = esc(&hist.column);
    let _ = writeln!(
        h,
        "<svg class=\"histogram\" width=\"{w}\" height=\"{ht}\" viewBox=\"0 0 {w} {ht}\" role=\"img\"><title>Distribution of {title}</title>"
    );
    let _ = writeln!(h, "<text x=\"{left}\" y=\"12\">{title}</text>");
    if hist.counts.is_empty() {
        let _ = writeln!(h, "<text x=\"{left}\" y=\"60\">no values</text>\n</svg>");
        return;
    }
    let plot_w = w - 2.0 * left;
    let plot_h = ht - bottom - top;
    let max = hist.counts.iter().copied().max().unwrap_or(1).max(1) as f64;
    let bw = plot_w / hist.counts.len() as f64;
    for (k, &n) in hist.counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        let bh = plot_h * n as f64 / max;
        let _ = writeln!(
            h,
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{fill}\"/>",
            coord(left + bw * k as f64),
            coord(top + plot_h - bh),
            coord(bw * 0.95),
            coord(bh)
        );
    }
    let base = top + plot_h;
    let _ = writeln!(
        h,
        "<line x1=\"{left}\" y1=\"{base}\" x2=\"{}\" y2=\"{base}\" stroke=\"#555\"/><text x=\"{left}\" y=\"{}\">{}</text><text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n</svg>",
        w - left,
        base + 14.0,
        num(hist.edges[0]),
        w - left,
        base + 14.0,
        num(hist.edges[hist.edges.len() - 1])
    );
}

fn combined_section(h: &mut String, report: &DrReport) {
    h.push_str("<section id=\"combined-plots\">\n<h2>(d) Combined data plots</h2>\n");
    let pca = &report.combined_pca;
    let Some(model) = &pca.model else {
        let _ = writeln!(
            h,
            "<p class=\"empty\">PCA unavailable: {}</p>",
            esc(pca.unavailable.as_deref().unwrap_or("no model"))
        );
        legend(h, &report.clients);
        h.push_str("</section>\n");
        return;
    };
    let sets: Vec<(usize, &[[f64; 2]])> = report
        .clients
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            c.payload
                .as_ref()
                .and_then(|p| p.pca_points.as_deref())
                .map(|pts| (i, pts))
        })
        .collect();
    let all = sets.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    if x1 - x0 == 0.0 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    if y1 - y0 == 0.0 {
        (y0, y1) = (y0 - 1.0, y1 + 1.0);
    }
    let (w, ht, margin) = (520.0, 380.0, 40.0);
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| ht - margin - (y - y0) / (y1 - y0) * (ht - 2.0 * margin);
    let _ = writeln!(
        h,
        "<svg class=\"scatter\" width=\"{w}\" height=\"{ht}\" viewBox=\"0 0 {w} {ht}\" role=\"img\"><title>Combined PCA projection</title>"
    );
    let _ = writeln!(
        h,
        "<rect x=\"{margin}\" y=\"{margin}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#ccc\"/>",
        w - 2.0 * margin,
        ht - 2.0 * margin
    );
    for (i, pts) in &sets {
        let fill = color(*i);
        let _ = write!(h, "<g fill=\"{fill}\" fill-opacity=\"0.7\">");
        for p in pts.iter() {
            let _ = write!(
                h,
                "<circle cx=\"{}\" cy=\"{}\" r=\"2.5\"/>",
                coord(sx(p[0])),
                coord(sy(p[1]))
            );
        }
        h.push_str("</g>\n");
    }
    let _ = writeln!(
        h,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">PC1 (variance {})</text><text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\" text-anchor=\"middle\">PC2 (variance {})</text>\n</svg>",
        w / 2.0,
        ht - 10.0,
        num(model.explained_variance[0]),
        ht / 2.0,
        ht / 2.0,
        num(model.explained_variance[1])
    );
    legend(h, &report.clients);
    let features: Vec<String> = model.columns.iter().map(|c| esc(c)).collect();
    let _ = writeln!(
        h,
        "<p class=\"meta\">Global PCA over {}.</p>",
        features.join(", ")
    );
    h.push_str("</section>\n");
}

fn legend(h: &mut String, clients: &[ClientEntry]) {
    h.push_str("<p class=\"legend\">");
    for (i, c) in clients.iter().enumerate() {
        let n = c
            .payload
            .as_ref()
            .and_then(|p| p.pca_points.as_ref())
            .map_or(0, Vec::len);
        let note = match &c.payload {
            None => " (absent)".to_string(),
            Some(_) => format!(" ({n} points)"),
        };
        let _ = write!(
            h,
            "<span><i class=\"swatch\" style=\"background:{}\"></i>{}{}</span>",
            color(i),
            esc(&c.client_id),
            note
        );
    }
    h.push_str("</p>\n");
}
