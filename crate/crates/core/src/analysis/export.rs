//! Plot data for external tools: t-SNE CSV and a standalone SVG scatter.

use std::io::Write;

pub const PALETTE: [&str; 7] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"];
pub const VIEWPORT: f64 = 800.0;
const MARGIN: f64 = 40.0;

/// `day_index,x,y,label`, one row per point.
pub fn write_tsne_csv<W: Write>(day_index: &[i64], coords: &[[f64; 2]], labels: &[String], mut w: W) -> std::io::Result<()> {
    writeln!(w, "day_index,x,y,label")?;
    for ((d, c), l) in day_index.iter().zip(coords).zip(labels) {
        writeln!(w, "{d},{},{},{l}", c[0], c[1])?;
    }
    Ok(())
}

/// 800x800 scatter; point `i` takes palette colour `classes[i] % 7`.
pub fn write_scatter_svg<W: Write>(coords: &[[f64; 2]], classes: &[usize], mut w: W) -> std::io::Result<()> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for c in coords {
        for a in 0..2 {
            lo[a] = lo[a].min(c[a]);
            hi[a] = hi[a].max(c[a]);
        }
    }
    let span = |a: usize| if hi[a] > lo[a] { hi[a] - lo[a] } else { 1.0 };
    let inner = VIEWPORT - 2.0 * MARGIN;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{v}" height="{v}" viewBox="0 0 {v} {v}">"#,
        v = VIEWPORT
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    for (c, &k) in coords.iter().zip(classes) {
        let x = MARGIN + (c[0] - lo[0]) / span(0) * inner;
        // SVG y grows downwards.
        let y = VIEWPORT - MARGIN - (c[1] - lo[1]) / span(1) * inner;
        writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{}"/>"#, PALETTE[k % PALETTE.len()])?;
    }
    writeln!(w, "</svg>")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_uses_one_colour_per_class() {
        let coords: Vec<[f64; 2]> = (0..14).map(|i| [i as f64, (i * i) as f64]).collect();
        let classes: Vec<usize> = (0..14).map(|i| i % 7).collect();
        let mut buf = Vec::new();
        write_scatter_svg(&coords, &classes, &mut buf).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert!(svg.contains(r#"width="800""#));
        assert_eq!(svg.matches("<circle").count(), 14);
        for colour in PALETTE {
            assert_eq!(svg.matches(colour).count(), 2);
        }
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut buf = Vec::new();
        write_tsne_csv(&[3, 4], &[[0.5, 1.0], [2.0, -1.0]], &["1".into(), "2".into()], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "day_index,x,y,label\n3,0.5,1,1\n4,2,-1,2\n");
    }
}
