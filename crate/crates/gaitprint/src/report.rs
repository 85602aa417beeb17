//! Human-facing result files: accuracy tables, per-window predictions,
//! interval tables, and self-contained SVG figures. Every text artifact
//! opens with a `#config_hash=` comment line tying it to the configuration
//! that produced it, and all emitters are deterministic byte for byte.

use std::fmt::Write as _;
use std::path::Path;

use crate::cma::CmaResult;
use crate::error::{io_err, Result};
use crate::gridcells::{CellIndex, GridSpec};
use crate::identify::{ProbMatrix, SensitivityPoint};

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn hash_line(config_hash: &str) -> String {
    format!("#config_hash={config_hash}\n")
}

/// Accuracy against window length, one row per window size.
pub fn write_sensitivity_csv(
    points: &[SensitivityPoint],
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let mut out = hash_line(config_hash);
    out.push_str("window_seconds,n_windows,rank1_accuracy,rank5_accuracy\n");
    for p in points {
        let _ = writeln!(out, "{},{},{:?},{:?}", p.window, p.n_windows, p.rank1, p.rank5);
    }
    write_text(path, &out)
}

/// One row per decision window: the winning subject, its score, and where
/// the true subject ranked. Ties sort toward the smaller subject id.
pub fn write_predictions_csv(
    matrix: &ProbMatrix,
    config_hash: &str,
    path: &Path,
) -> Result<()> {
    let mut out = hash_line(config_hash);
    out.push_str("true_subject,first_frame,predicted_subject,predicted_prob,true_prob,true_rank\n");
    for (r, (subject, j)) in matrix.rows.iter().enumerate() {
        let mut best = 0usize;
        for c in 1..matrix.subjects.len() {
            let better = matrix.probs[[r, c]] > matrix.probs[[r, best]];
            let tie_smaller = matrix.probs[[r, c]] == matrix.probs[[r, best]]
                && matrix.subjects[c] < matrix.subjects[best];
            if better || tie_smaller {
                best = c;
            }
        }
        let true_col = matrix
            .subjects
            .iter()
            .position(|s| s == subject)
            .ok_or_else(|| crate::error::Error::Data(format!("subject '{subject}' not fitted")))?;
        let p_true = matrix.probs[[r, true_col]];
        let mut rank = 1;
        for c in 0..matrix.subjects.len() {
            if c == true_col {
                continue;
            }
            let p = matrix.probs[[r, c]];
            if p > p_true || (p == p_true && matrix.subjects[c] < matrix.subjects[true_col]) {
                rank += 1;
            }
        }
        let _ = writeln!(
            out,
            "{subject},{j},{},{:?},{:?},{rank}",
            matrix.subjects[best],
            matrix.probs[[r, best]],
            p_true
        );
    }
    write_text(path, &out)
}

/// One subject's interval table, adjusted and unadjusted side by side.
pub fn write_intervals_csv(result: &CmaResult, config_hash: &str, path: &Path) -> Result<()> {
    let mut out = hash_line(config_hash);
    let _ = writeln!(
        out,
        "#subject={} alpha={:?} q={:?} z={:?} mc_se={:?}",
        result.subject_id, result.alpha, result.q, result.z, result.mc_se
    );
    out.push_str(
        "cell,estimate,se,lo,hi,lo_unadjusted,hi_unadjusted,significant,significant_unadjusted\n",
    );
    for iv in &result.intervals {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?},{:?},{:?},{},{}",
            iv.cell.column_name(),
            iv.estimate,
            iv.se,
            iv.lo,
            iv.hi,
            iv.lo_unadjusted,
            iv.hi_unadjusted,
            iv.significant,
            iv.significant_unadjusted
        );
    }
    write_text(path, &out)
}

/// Serializes any result value as pretty JSON under a config-hash envelope.
pub fn write_json<T: serde::Serialize>(value: &T, config_hash: &str, path: &Path) -> Result<()> {
    #[derive(serde::Serialize)]
    struct Envelope<'a, T> {
        config_hash: &'a str,
        report: &'a T,
    }
    let body = serde_json::to_string_pretty(&Envelope {
        config_hash,
        report: value,
    })
    .map_err(|e| crate::error::Error::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    write_text(path, &format!("{body}\n"))
}

/// Perceptually ordered color ramp anchors, dark to bright.
const RAMP: [(f64, f64, f64); 5] = [
    (0.267, 0.005, 0.329),
    (0.229, 0.322, 0.545),
    (0.127, 0.566, 0.551),
    (0.369, 0.789, 0.383),
    (0.993, 0.906, 0.144),
];

fn ramp_color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (t.floor() as usize).min(RAMP.len() - 2);
    let f = t - i as f64;
    let mix = |a: f64, b: f64| ((a + (b - a) * f) * 255.0).round() as u8;
    format!(
        "#{:02x}{:02x}{:02x}",
        mix(RAMP[i].0, RAMP[i + 1].0),
        mix(RAMP[i].1, RAMP[i + 1].1),
        mix(RAMP[i].2, RAMP[i + 1].2)
    )
}

/// Fingerprint heatmap: one panel per lag, cells colored by coefficient
/// estimate, significant cells outlined. Screened-out cells stay gray.
pub fn heatmap_svg(result: &CmaResult, grid: &GridSpec) -> Result<String> {
    let side = grid.cells_per_side()?;
    let lags = grid.sorted_lags()?;
    let cell_px = 14usize;
    let gap = 28usize;
    let margin = 36usize;
    let panel = side * cell_px;
    let width = margin * 2 + lags.len() * panel + (lags.len() - 1) * gap;
    let height = margin * 2 + panel + 18;

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for iv in &result.intervals {
        lo = lo.min(iv.estimate);
        hi = hi.max(iv.estimate);
    }
    if !(lo.is_finite() && hi.is_finite()) {
        lo = -1.0;
        hi = 1.0;
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n"
    );
    let _ = writeln!(
        svg,
        "<text x=\"{margin}\" y=\"20\" font-size=\"13\">subject {} fingerprint, {} of {} cells significant</text>",
        xml_escape(&result.subject_id),
        result.n_significant,
        result.intervals.len()
    );
    for (li, &u) in lags.iter().enumerate() {
        let x0 = margin + li * (panel + gap);
        let y0 = margin;
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"11\">lag {u}</text>",
            x0,
            y0 - 6
        );
        for r in 0..side {
            for c in 0..side {
                let cell = CellIndex {
                    u,
                    r: r as u16,
                    c: c as u16,
                };
                let x = x0 + c * cell_px;
                // Row 0 is the lowest magnitude band; draw it at the bottom.
                let y = y0 + (side - 1 - r) * cell_px;
                match result.intervals.iter().find(|iv| iv.cell == cell) {
                    Some(iv) => {
                        let t = (iv.estimate - lo) / (hi - lo);
                        let stroke = if iv.significant {
                            " stroke=\"#d62728\" stroke-width=\"1.5\""
                        } else {
                            ""
                        };
                        let _ = writeln!(
                            svg,
                            "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_px}\" height=\"{cell_px}\" \
                             fill=\"{}\"{stroke}><title>{}: {:.4} [{:.4}, {:.4}]</title></rect>",
                            ramp_color(t),
                            cell.column_name(),
                            iv.estimate,
                            iv.lo,
                            iv.hi
                        );
                    }
                    None => {
                        let _ = writeln!(
                            svg,
                            "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_px}\" height=\"{cell_px}\" \
                             fill=\"#e8e8e8\"/>"
                        );
                    }
                }
            }
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Accuracy against window length as a two-line chart.
pub fn accuracy_curve_svg(points: &[SensitivityPoint]) -> Result<String> {
    if points.is_empty() {
        return Err(crate::error::Error::Data(
            "no sensitivity points to plot".to_string(),
        ));
    }
    let width = 420usize;
    let height = 280usize;
    let ml = 46usize;
    let mb = 40usize;
    let mt = 18usize;
    let mr = 14usize;
    let plot_w = (width - ml - mr) as f64;
    let plot_h = (height - mt - mb) as f64;
    let max_w = points.iter().map(|p| p.window).max().unwrap() as f64;
    let sx = |w: f64| ml as f64 + (w / max_w) * plot_w;
    let sy = |a: f64| mt as f64 + (1.0 - a) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    // Axes and gridlines at 0, 0.5, 1.
    for frac in [0.0, 0.5, 1.0] {
        let y = sy(frac);
        let _ = writeln!(
            svg,
            "<line x1=\"{ml}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"#cccccc\"/>",
            width - mr
        );
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{frac:.1}</text>",
            ml - 6,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"#333333\"/>",
        height - mb
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#333333\"/>",
        height - mb,
        width - mr,
        height - mb
    );
    for (color, label, pick) in [
        ("#1f77b4", "rank-1", 0usize),
        ("#2ca02c", "rank-5", 1usize),
    ] {
        let mut line = String::new();
        for p in points {
            let a = if pick == 0 { p.rank1 } else { p.rank5 };
            let _ = write!(line, "{:.1},{:.1} ", sx(p.window as f64), sy(a));
        }
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            line.trim_end()
        );
        for p in points {
            let a = if pick == 0 { p.rank1 } else { p.rank5 };
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"><title>{label} at {}s: {:.3}</title></circle>",
                sx(p.window as f64),
                sy(a),
                p.window,
                a
            );
        }
    }
    for p in points {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            sx(p.window as f64),
            height - mb + 16,
            p.window
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">window length, seconds</text>",
        ml + (width - ml - mr) / 2,
        height - 8
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" fill=\"#1f77b4\">rank-1</text><text x=\"{}\" y=\"{}\" fill=\"#2ca02c\">rank-5</text>",
        width - mr - 100,
        mt + 14,
        width - mr - 44,
        mt + 14
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_svg(svg: &str, path: &Path) -> Result<()> {
    write_text(path, svg)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
