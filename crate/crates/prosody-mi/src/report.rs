//! Result reporting: a per-method MI bar chart with group mean lines and
//! error bars, an entropy scatter against the dashed y = x diagonal, and
//! a plain-text summary of group means.
//!
//! Charts are self-contained SVG strings built directly (no drawing
//! dependencies); identical rows always yield byte-identical output.

use crate::corpus::ProsodicType;
use crate::estimator::ResultRow;
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no result rows to report")]
    NoRows,
    #[error("could not write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Mean estimates for one (method, prosodic type) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub method: String,
    pub prosodic_type: ProsodicType,
    pub n_languages: usize,
    pub mean_mi: f64,
    pub mean_h: f64,
    pub mean_h_cond: f64,
}

fn sorted_methods(rows: &[ResultRow]) -> Vec<String> {
    rows.iter()
        .map(|r| r.method.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Rows of one method in display order: group by prosodic type (stress <
/// pitch-accent < tonal), languages alphabetical within a group.
fn method_rows<'a>(rows: &'a [ResultRow], method: &str) -> Vec<&'a ResultRow> {
    let mut picked: Vec<&ResultRow> = rows.iter().filter(|r| r.method == method).collect();
    picked.sort_by(|a, b| {
        let ga = ProsodicType::ORDERED.iter().position(|t| *t == a.prosodic_type);
        let gb = ProsodicType::ORDERED.iter().position(|t| *t == b.prosodic_type);
        ga.cmp(&gb).then_with(|| a.language.cmp(&b.language))
    });
    picked
}

/// Per-(method, group) means, methods alphabetical, groups in the
/// canonical prosodic order. Empty cells are omitted.
pub fn group_means(rows: &[ResultRow]) -> Result<Vec<GroupSummary>, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::NoRows);
    }
    let mut out = Vec::new();
    for method in sorted_methods(rows) {
        for group in ProsodicType::ORDERED {
            let cell: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.method == method && r.prosodic_type == group)
                .collect();
            if cell.is_empty() {
                continue;
            }
            let n = cell.len() as f64;
            out.push(GroupSummary {
                method: method.clone(),
                prosodic_type: group,
                n_languages: cell.len(),
                mean_mi: cell.iter().map(|r| r.mi_nats).sum::<f64>() / n,
                mean_h: cell.iter().map(|r| r.h_nats).sum::<f64>() / n,
                mean_h_cond: cell.iter().map(|r| r.h_cond_nats).sum::<f64>() / n,
            });
        }
    }
    Ok(out)
}

fn group_color(group: ProsodicType) -> &'static str {
    match group {
        ProsodicType::StressAccent => "#4878a8",
        ProsodicType::PitchAccent => "#e49444",
        ProsodicType::Tonal => "#d1615d",
    }
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Evenly spaced axis ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `<desc>` element recording which runs produced the plotted rows, as the
/// distinct (config hash, seed) pairs present in the data.
fn provenance_desc(rows: &[ResultRow]) -> String {
    let runs: BTreeSet<(String, u64)> = rows
        .iter()
        .map(|r| (r.config_hash.clone(), r.seed))
        .collect();
    let body = runs
        .iter()
        .map(|(hash, seed)| format!("config={hash} seed={seed}"))
        .collect::<Vec<_>>()
        .join("; ");
    format!("<desc>{}</desc>\n", svg_escape(&body))
}

const BAR_SLOT: f64 = 52.0;
const BAR_WIDTH: f64 = 32.0;
const PANEL_PLOT_H: f64 = 220.0;
const PANEL_HEAD: f64 = 46.0;
const PANEL_FOOT: f64 = 58.0;
const MARGIN_L: f64 = 74.0;
const MARGIN_R: f64 = 96.0;

/// Bar chart of MI per language, one panel per method: bars colored by
/// prosodic group, ±1 standard-error whiskers, and a dashed line at each
/// group's mean spanning that group's bars.
pub fn mi_bar_chart_svg(rows: &[ResultRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::NoRows);
    }
    let methods = sorted_methods(rows);
    let max_bars = methods
        .iter()
        .map(|m| method_rows(rows, m).len())
        .max()
        .unwrap_or(0);
    let plot_w = (max_bars as f64 * BAR_SLOT).max(BAR_SLOT);
    let width = MARGIN_L + plot_w + MARGIN_R;
    let panel_h = PANEL_HEAD + PANEL_PLOT_H + PANEL_FOOT;
    let height = 34.0 + methods.len() as f64 * panel_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"sans-serif\">",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    );
    svg.push_str(&provenance_desc(rows));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"24\" font-size=\"15\" font-weight=\"bold\">\
         Mutual information between word identity and pitch contour</text>",
        fmt(MARGIN_L)
    );

    for (mi_panel, method) in methods.iter().enumerate() {
        let picked = method_rows(rows, method);
        let top = 34.0 + mi_panel as f64 * panel_h + PANEL_HEAD;

        // Panel value range: every bar with its whisker, plus zero.
        let mut vmin = 0.0f64;
        let mut vmax = 0.0f64;
        for r in &picked {
            let e = if r.stderr.is_finite() { r.stderr } else { 0.0 };
            vmin = vmin.min(r.mi_nats - e);
            vmax = vmax.max(r.mi_nats + e);
        }
        if vmax - vmin < 1e-9 {
            vmax = vmin + 1.0;
        }
        let pad = 0.08 * (vmax - vmin);
        let (vmin, vmax) = (vmin - pad, vmax + pad);
        let y = |v: f64| top + (vmax - v) / (vmax - vmin) * PANEL_PLOT_H;
        let slot_x = |i: usize| MARGIN_L + i as f64 * BAR_SLOT;

        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"13\" font-weight=\"bold\">{}</text>",
            fmt(MARGIN_L),
            fmt(top - 14.0),
            svg_escape(method)
        );

        // Gridlines and y-axis labels.
        for t in ticks(vmin, vmax, 5) {
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#e0e0e0\"/>",
                fmt(MARGIN_L),
                fmt(y(t)),
                fmt(MARGIN_L + plot_w),
                fmt(y(t))
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>",
                fmt(MARGIN_L - 8.0),
                fmt(y(t) + 4.0),
                t
            );
        }
        if vmin < 0.0 && vmax > 0.0 {
            let _ = writeln!(
                svg,
                "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#888888\"/>",
                fmt(MARGIN_L),
                fmt(y(0.0)),
                fmt(MARGIN_L + plot_w),
                fmt(y(0.0))
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\" \
             transform=\"rotate(-90 {} {})\">MI (nats)</text>",
            fmt(MARGIN_L - 52.0),
            fmt(top + PANEL_PLOT_H / 2.0),
            fmt(MARGIN_L - 52.0),
            fmt(top + PANEL_PLOT_H / 2.0)
        );

        // Bars with whiskers.
        for (i, r) in picked.iter().enumerate() {
            let x0 = slot_x(i) + (BAR_SLOT - BAR_WIDTH) / 2.0;
            let (top_v, bot_v) = if r.mi_nats >= 0.0 { (r.mi_nats, 0.0) } else { (0.0, r.mi_nats) };
            let _ = writeln!(
                svg,
                "<rect class=\"bar\" x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\">\
                 <title>{} — MI {} ± {} nats</title></rect>",
                fmt(x0),
                fmt(y(top_v)),
                fmt(BAR_WIDTH),
                fmt((y(bot_v) - y(top_v)).max(0.0)),
                group_color(r.prosodic_type),
                svg_escape(&r.language),
                fmt(r.mi_nats),
                fmt(r.stderr)
            );
            let e = if r.stderr.is_finite() { r.stderr } else { 0.0 };
            if e > 0.0 {
                let cx = x0 + BAR_WIDTH / 2.0;
                let _ = writeln!(
                    svg,
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
                    fmt(cx),
                    fmt(y(r.mi_nats + e)),
                    fmt(cx),
                    fmt(y(r.mi_nats - e))
                );
                for v in [r.mi_nats + e, r.mi_nats - e] {
                    let _ = writeln!(
                        svg,
                        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
                        fmt(cx - 6.0),
                        fmt(y(v)),
                        fmt(cx + 6.0),
                        fmt(y(v))
                    );
                }
            }
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\" \
                 transform=\"rotate(-38 {} {})\">{}</text>",
                fmt(x0 + BAR_WIDTH / 2.0),
                fmt(top + PANEL_PLOT_H + 16.0),
                fmt(x0 + BAR_WIDTH / 2.0),
                fmt(top + PANEL_PLOT_H + 16.0),
                svg_escape(&r.language)
            );
        }

        // Dashed group-mean lines spanning each group's bars.
        for group in ProsodicType::ORDERED {
            let indices: Vec<usize> = picked
                .iter()
                .enumerate()
                .filter(|(_, r)| r.prosodic_type == group)
                .map(|(i, _)| i)
                .collect();
            if indices.is_empty() {
                continue;
            }
            let mean = picked
                .iter()
                .filter(|r| r.prosodic_type == group)
                .map(|r| r.mi_nats)
                .sum::<f64>()
                / indices.len() as f64;
            let x1 = slot_x(indices[0]) + 4.0;
            let x2 = slot_x(indices[indices.len() - 1]) + BAR_SLOT - 4.0;
            let _ = writeln!(
                svg,
                "<line class=\"group-mean\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" \
                 stroke=\"{}\" stroke-width=\"2\" stroke-dasharray=\"7 4\"/>",
                fmt(x1),
                fmt(y(mean)),
                fmt(x2),
                fmt(y(mean)),
                group_color(group)
            );
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" font-size=\"10\" fill=\"{}\">{} mean {}</text>",
                fmt(x2 + 6.0),
                fmt(y(mean) + 3.0),
                group_color(group),
                group.label(),
                fmt(mean)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Scatter of conditional vs unconditional entropy per result row, with
/// the dashed y = x diagonal; the gap below the diagonal is the MI.
pub fn entropy_scatter_svg(rows: &[ResultRow]) -> Result<String, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::NoRows);
    }
    const PLOT: f64 = 400.0;
    const ML: f64 = 72.0;
    const MT: f64 = 44.0;
    let width = ML + PLOT + 160.0;
    let height = MT + PLOT + 64.0;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for r in rows {
        lo = lo.min(r.h_nats.min(r.h_cond_nats));
        hi = hi.max(r.h_nats.max(r.h_cond_nats));
    }
    if hi - lo < 1e-9 {
        hi = lo + 1.0;
    }
    let pad = 0.08 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let sx = |v: f64| ML + (v - lo) / (hi - lo) * PLOT;
    let sy = |v: f64| MT + (hi - v) / (hi - lo) * PLOT;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" \
         viewBox=\"0 0 {} {}\" font-family=\"sans-serif\">",
        fmt(width),
        fmt(height),
        fmt(width),
        fmt(height)
    );
    svg.push_str(&provenance_desc(rows));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"26\" font-size=\"15\" font-weight=\"bold\">\
         Conditional vs unconditional pitch-contour entropy</text>",
        fmt(ML)
    );

    for t in ticks(lo, hi, 5) {
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#e0e0e0\"/>",
            fmt(sx(t)),
            fmt(MT),
            fmt(sx(t)),
            fmt(MT + PLOT)
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#e0e0e0\"/>",
            fmt(ML),
            fmt(sy(t)),
            fmt(ML + PLOT),
            fmt(sy(t))
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{:.2}</text>",
            fmt(sx(t)),
            fmt(MT + PLOT + 18.0),
            t
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.2}</text>",
            fmt(ML - 8.0),
            fmt(sy(t) + 4.0),
            t
        );
    }
    let _ = writeln!(
        svg,
        "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888888\"/>",
        fmt(ML),
        fmt(MT),
        fmt(PLOT),
        fmt(PLOT)
    );
    // The no-information diagonal.
    let _ = writeln!(
        svg,
        "<line class=\"diagonal\" x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" \
         stroke=\"#555555\" stroke-dasharray=\"8 5\"/>",
        fmt(sx(lo)),
        fmt(sy(lo)),
        fmt(sx(hi)),
        fmt(sy(hi))
    );

    for r in rows {
        let _ = writeln!(
            svg,
            "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"{}\" fill-opacity=\"0.85\">\
             <title>{} / {} — H {} , H|W {}</title></circle>",
            fmt(sx(r.h_nats)),
            fmt(sy(r.h_cond_nats)),
            group_color(r.prosodic_type),
            svg_escape(&r.language),
            svg_escape(&r.method),
            fmt(r.h_nats),
            fmt(r.h_cond_nats)
        );
    }

    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">\
         unconditional entropy H (nats)</text>",
        fmt(ML + PLOT / 2.0),
        fmt(MT + PLOT + 44.0)
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {} {})\">conditional entropy H|W (nats)</text>",
        fmt(ML - 46.0),
        fmt(MT + PLOT / 2.0),
        fmt(ML - 46.0),
        fmt(MT + PLOT / 2.0)
    );
    for (i, group) in ProsodicType::ORDERED.into_iter().enumerate() {
        let ly = MT + 16.0 + i as f64 * 20.0;
        let _ = writeln!(
            svg,
            "<circle cx=\"{}\" cy=\"{}\" r=\"5\" fill=\"{}\"/>",
            fmt(ML + PLOT + 24.0),
            fmt(ly - 4.0),
            group_color(group)
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">{}</text>",
            fmt(ML + PLOT + 34.0),
            fmt(ly),
            group.label()
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plain-text summary: group means per method, then per-language rows.
pub fn text_summary(rows: &[ResultRow]) -> Result<String, ReportError> {
    let summaries = group_means(rows)?;
    let mut out = String::new();
    out.push_str("Mutual information between word identity and pitch contour\n");
    let _ = writeln!(out, "{} result row(s)\n", rows.len());
    out.push_str("Group means\n");
    for s in &summaries {
        let _ = writeln!(
            out,
            "  {:14} {:13}  MI {:+.4} nats   H {:.4}   H|W {:.4}   ({} language(s))",
            s.method,
            s.prosodic_type.label(),
            s.mean_mi,
            s.mean_h,
            s.mean_h_cond,
            s.n_languages
        );
    }
    out.push_str("\nPer-language estimates\n");
    for method in sorted_methods(rows) {
        for r in method_rows(rows, &method) {
            let _ = writeln!(
                out,
                "  {:14} {:13}  {:8}  MI {:+.4} ± {:.4}   H {:.4}   H|W {:.4}   n={}  seed={}  config={}",
                r.method,
                r.prosodic_type.label(),
                r.language,
                r.mi_nats,
                r.stderr,
                r.h_nats,
                r.h_cond_nats,
                r.n_tokens,
                r.seed,
                r.config_hash
            );
        }
    }
    Ok(out)
}

/// Files produced by [`write_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportPaths {
    pub mi_chart: PathBuf,
    pub entropy_scatter: PathBuf,
    pub summary: PathBuf,
}

/// Renders all three report artifacts into `dir`.
pub fn write_report(rows: &[ResultRow], dir: &Path) -> Result<ReportPaths, ReportError> {
    let paths = ReportPaths {
        mi_chart: dir.join("mi_bars.svg"),
        entropy_scatter: dir.join("entropy_scatter.svg"),
        summary: dir.join("summary.txt"),
    };
    for (path, content) in [
        (&paths.mi_chart, mi_bar_chart_svg(rows)?),
        (&paths.entropy_scatter, entropy_scatter_svg(rows)?),
        (&paths.summary, text_summary(rows)?),
    ] {
        std::fs::write(path, content).map_err(|source| ReportError::Io {
            path: path.clone(),
            source,
        })?;
    }
    Ok(paths)
}
