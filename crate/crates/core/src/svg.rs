//! Self-contained SVG figures: annotated heatmaps and regression scatter
//! plots.

use std::fmt::Write;

use crate::eval::{AccuracyMatrix, DropCorrelationStudy};
use crate::stats::AssociationMatrix;

const CELL: f64 = 56.0;
const LABEL: f64 = 96.0;
const TITLE: f64 = 32.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// White to blue over [0, 1]; values outside are clamped.
fn color(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 81.0), lerp(255.0, 156.0))
}

/// Heatmap with one labelled cell per value. `None` cells are drawn grey
/// and marked "n/a". Optional per-cell notes are printed under the value.
pub fn heatmap(
    title: &str,
    row_labels: &[String],
    col_labels: &[String],
    values: &[Vec<Option<f64>>],
    notes: Option<&[Vec<String>]>,
) -> String {
    let w = LABEL + CELL * col_labels.len() as f64 + 16.0;
    let h = TITLE + LABEL + CELL * row_labels.len() as f64 + 16.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, escape(title));
    for (j, c) in col_labels.iter().enumerate() {
        let x = LABEL + CELL * (j as f64 + 0.5);
        let y = TITLE + LABEL - 6.0;
        let _ = writeln!(s, r#"<text x="{x}" y="{y}" transform="rotate(-45 {x} {y})">{}</text>"#, escape(c));
    }
    for (i, r) in row_labels.iter().enumerate() {
        let y = TITLE + LABEL + CELL * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL - 6.0,
            y + CELL / 2.0 + 4.0,
            escape(r)
        );
        for (j, v) in values[i].iter().enumerate() {
            let x = LABEL + CELL * j as f64;
            let (fill, text, ink) = match v {
                Some(v) => (color(*v), format!("{v:.2}"), if *v > 0.6 { "#ffffff" } else { "#000000" }),
                None => ("#cccccc".to_string(), "n/a".to_string(), "#000000"),
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ffffff"/>"##
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{text}</text>"#,
                x + CELL / 2.0,
                y + CELL / 2.0
            );
            if let Some(note) = notes.and_then(|n| n.get(i)).and_then(|r| r.get(j)) {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" text-anchor="middle" font-size="9" fill="{ink}">{}</text>"#,
                    x + CELL / 2.0,
                    y + CELL / 2.0 + 13.0,
                    escape(note)
                );
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Relative accuracy; columns are the filtered attribute, rows the
/// classified one.
pub fn accuracy_heatmap(m: &AccuracyMatrix) -> String {
    let title = format!("Relative accuracy ({}, residual {})", m.mode.as_str(), m.residual_mode.as_str());
    heatmap(&title, &m.classified_attributes, &m.filtered_attributes, &m.rel_acc, None)
}

/// Association values annotated with each pair's df_min = min(k_i, k_j) − 1.
pub fn association_heatmap(a: &AssociationMatrix) -> String {
    let values: Vec<Vec<Option<f64>>> = a.values.iter().map(|r| r.iter().map(|&v| Some(v)).collect()).collect();
    let dof = &a.degrees_of_freedom;
    let notes: Vec<Vec<String>> =
        (0..dof.len()).map(|i| (0..dof.len()).map(|j| format!("df={}", dof[i].min(dof[j]))).collect()).collect();
    let title = format!("{} ({})", a.metric.as_str(), a.source.as_str());
    heatmap(&title, &a.attributes, &a.attributes, &values, Some(&notes))
}

/// Scatter of (correlation, accuracy drop) with the least-squares line and
/// its r and p.
pub fn regression_scatter(study: &DropCorrelationStudy) -> String {
    let (w, h, pad) = (480.0, 360.0, 56.0);
    let xs: Vec<f64> = study.points.iter().map(|p| p.correlation_value).collect();
    let ys: Vec<f64> = study.points.iter().map(|p| p.accuracy_drop).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = ((hi - lo) * 0.05).max(1e-3);
        (lo - m, hi + m)
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let sm = study.summary.as_ref();
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} vs accuracy drop ({})</text>"#,
        w / 2.0,
        study.metric.as_str(),
        study.mode.as_str()
    );
    let _ = writeln!(
        s,
        r##"<rect x="{pad}" y="{pad}" width="{}" height="{}" fill="none" stroke="#444444"/>"##,
        w - 2.0 * pad,
        h - 2.0 * pad
    );
    for (x, y) in xs.iter().zip(&ys) {
        let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="3" fill="#08519c"/>"##, px(*x), py(*y));
    }
    match sm {
        Some(sm) => {
            let line = |x: f64| sm.intercept + sm.slope * x;
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#d62728" stroke-width="1.5"/>"##,
                px(x0),
                py(line(x0).clamp(y0, y1)),
                px(x1),
                py(line(x1).clamp(y0, y1))
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">r = {:.3}, p = {:.3e}, n = {}</text>"#,
                pad + 8.0,
                pad + 16.0,
                sm.pearson_r,
                sm.p_value,
                sm.n_points
            );
        }
        None => {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}">r undefined (constant values), n = {}</text>"#,
                pad + 8.0,
                pad + 16.0,
                study.points.len()
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        w / 2.0,
        h - 16.0,
        study.metric.as_str()
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">accuracy drop</text>"#,
        h / 2.0,
        h / 2.0
    );
    for (v, y) in [(y0, h - pad), (y1, pad)] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, pad - 4.0, y + 4.0);
    }
    for (v, x) in [(x0, pad), (x1, w - pad)] {
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v:.3}</text>"#, h - pad + 14.0);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_escapes_and_marks_undefined() {
        let svg = heatmap(
            "a<b",
            &["r&1".into()],
            &["c".into(), "d".into()],
            &[vec![Some(0.5), None]],
            Some(&[vec!["df=1".into(), "df=2".into()]]),
        );
        assert!(svg.contains("a&lt;b") && svg.contains("r&amp;1"));
        assert!(svg.contains("n/a") && svg.contains("df=2"));
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn color_is_clamped() {
        assert_eq!(color(-1.0), color(0.0));
        assert_eq!(color(3.0), "#08519c");
    }
}
