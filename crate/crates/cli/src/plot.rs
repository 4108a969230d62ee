//! Confusion-grid heatmap as a standalone SVG document.

use std::fmt::Write;

const CELL: usize = 36;
const LABEL_W: usize = 160;
const HEADER_H: usize = 140;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(max - 1).collect();
        t.push('…');
        t
    }
}

/// Rows are predicted clusters, columns truth classes. Cell shade is the
/// count relative to its row total, so small clusters stay readable.
pub fn confusion_svg(title: &str, clusters: &[String], classes: &[String], grid: &[Vec<u64>]) -> String {
    let width = LABEL_W + CELL * classes.len().max(1) + 20;
    let height = HEADER_H + CELL * clusters.len().max(1) + 20;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="8" y="18" font-size="14" font-weight="bold">{}</text>"#, escape(title));

    for (j, class) in classes.iter().enumerate() {
        let x = LABEL_W + j * CELL + CELL / 2;
        let y = HEADER_H - 6;
        let _ = writeln!(
            out,
            r#"<text x="{x}" y="{y}" transform="rotate(-60 {x} {y})">{}</text>"#,
            escape(&truncate(class, 22))
        );
    }
    for (i, cluster) in clusters.iter().enumerate() {
        let row = grid.get(i).map(Vec::as_slice).unwrap_or(&[]);
        let total: u64 = row.iter().sum();
        let y = HEADER_H + i * CELL;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LABEL_W - 6,
            y + CELL / 2 + 4,
            escape(&truncate(cluster, 26))
        );
        for j in 0..classes.len() {
            let n = row.get(j).copied().unwrap_or(0);
            let share = if total == 0 { 0.0 } else { n as f64 / total as f64 };
            // White to dark blue.
            let shade = |lo: f64, hi: f64| (lo + (hi - lo) * share).round() as u8;
            let fill = format!("#{:02x}{:02x}{:02x}", shade(255.0, 8.0), shade(255.0, 48.0), shade(255.0, 107.0));
            let ink = if share > 0.5 { "white" } else { "black" };
            let x = LABEL_W + j * CELL;
            let _ = writeln!(
                out,
                r##"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="#ccc"/>"##
            );
            if n > 0 {
                let _ = writeln!(
                    out,
                    r#"<text x="{}" y="{}" text-anchor="middle" fill="{ink}">{n}</text>"#,
                    x + CELL / 2,
                    y + CELL / 2 + 4
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_cell_and_escaped_names() {
        let svg = confusion_svg(
            "a<b",
            &["x".into(), "y & z".into()],
            &["p".into(), "q".into(), "r".into()],
            &[vec![3, 0, 1], vec![0, 0, 0]],
        );
        assert_eq!(svg.matches("<rect x=").count(), 6);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.contains("y &amp; z"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
