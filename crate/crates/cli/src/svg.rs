//! Grouped bar chart of per-task means with standard-error whiskers.

use std::fmt::Write;

use periloom::eval::ReportSummary;

const PALETTE: [&str; 8] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#9c755f"];
const BAR: f64 = 18.0;
const GAP: f64 = 24.0;
const PLOT_H: f64 = 240.0;
const LEFT: f64 = 56.0;
const TOP: f64 = 40.0;

/// One bar as drawn: task, series (`strategy/predictor`), mean and SE.
#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    pub task: String,
    pub series: String,
    pub mean: f64,
    pub se: f64,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn unescape(s: &str) -> String {
    s.replace("&quot;", "\"").replace("&gt;", ">").replace("&lt;", "<").replace("&amp;", "&")
}

pub fn bars(summary: &ReportSummary, metric: &str) -> Vec<Bar> {
    summary
        .groups
        .iter()
        .filter_map(|g| {
            g.metrics.get(metric).map(|s| Bar {
                task: g.task.clone(),
                series: format!("{}/{}", g.strategy, g.predictor),
                mean: s.mean,
                se: s.se,
            })
        })
        .collect()
}

/// Render `metric` on a fixed [0, 1] axis. The `desc` element carries the
/// provenance line; bars carry their values as data attributes.
pub fn chart(summary: &ReportSummary, metric: &str) -> String {
    let bars = bars(summary, metric);
    let mut tasks: Vec<&str> = Vec::new();
    let mut series: Vec<&str> = Vec::new();
    for b in &bars {
        if !tasks.contains(&b.task.as_str()) {
            tasks.push(&b.task);
        }
        if !series.contains(&b.series.as_str()) {
            series.push(&b.series);
        }
    }
    let group_w = series.len().max(1) as f64 * BAR;
    let plot_w = tasks.len().max(1) as f64 * (group_w + GAP) + GAP;
    let legend_h = 16.0 * series.len() as f64;
    let width = LEFT + plot_w + 20.0;
    let height = TOP + PLOT_H + 40.0 + legend_h + 10.0;
    let y = |v: f64| TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        "<desc>config_hash={} tool={} metric={}</desc>",
        escape(&summary.meta.config_hash),
        escape(&summary.meta.tool),
        escape(metric)
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="20" font-size="13">{} by task (mean ± SE over {} folds)</text>"#,
        escape(&metric.to_uppercase()),
        summary.meta.k_outer
    );
    for tick in 0..=4 {
        let v = tick as f64 * 0.25;
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            LEFT + plot_w,
            y(v),
            y(v),
            LEFT - 4.0,
            y(v) + 4.0
        );
    }
    for (ti, task) in tasks.iter().enumerate() {
        let x0 = LEFT + GAP + ti as f64 * (group_w + GAP);
        for b in bars.iter().filter(|b| b.task == *task) {
            let si = series.iter().position(|s| *s == b.series).unwrap_or(0);
            let x = x0 + si as f64 * BAR;
            let _ = writeln!(
                s,
                r#"<rect class="bar" x="{x:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{}" data-task="{}" data-series="{}" data-mean="{:?}" data-se="{:?}"/>"#,
                y(b.mean),
                BAR - 2.0,
                y(0.0) - y(b.mean),
                PALETTE[si % PALETTE.len()],
                escape(&b.task),
                escape(&b.series),
                b.mean,
                b.se
            );
            let cx = x + (BAR - 2.0) / 2.0;
            let (lo, hi) = (y(b.mean - b.se), y(b.mean + b.se));
            let _ = writeln!(
                s,
                r##"<path d="M{cx:.1} {lo:.1}V{hi:.1}M{:.1} {lo:.1}H{:.1}M{:.1} {hi:.1}H{:.1}" stroke="#222"/>"##,
                cx - 3.0,
                cx + 3.0,
                cx - 3.0,
                cx + 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + group_w / 2.0,
            y(0.0) + 16.0,
            escape(task)
        );
    }
    for (si, name) in series.iter().enumerate() {
        let ly = TOP + PLOT_H + 36.0 + 16.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 9.0,
            PALETTE[si % PALETTE.len()],
            LEFT + 14.0,
            ly,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn attr(tag: &str, name: &str) -> Option<String> {
    let key = format!(" {name}=\"");
    let start = tag.find(&key)? + key.len();
    let end = start + tag[start..].find('"')?;
    Some(unescape(&tag[start..end]))
}

/// Read the bars back out of a chart written by [`chart`].
pub fn parse_bars(svg: &str) -> Vec<Bar> {
    svg.lines()
        .filter(|l| l.starts_with("<rect class=\"bar\""))
        .filter_map(|l| {
            Some(Bar {
                task: attr(l, "data-task")?,
                series: attr(l, "data-series")?,
                mean: attr(l, "data-mean")?.parse().ok()?,
                se: attr(l, "data-se")?.parse().ok()?,
            })
        })
        .collect()
}
