//! Line plots as plain SVG text. Output depends only on the input rows.

use std::collections::BTreeMap;
use std::fmt::Write;

use qcnn_core::evaluation::EvalRow;

use crate::CliError;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render_svg(chart: &Chart) -> Result<String, CliError> {
    let all = || chart.series.iter().flat_map(|s| s.points.iter());
    if all().next().is_none() {
        return Err(CliError::Data(format!("{}: nothing to plot", chart.title)));
    }
    let (x0, x1) = range(all().map(|p| p.0));
    // Probabilities keep the full [0, 1] scale; differences are fitted.
    let (y0, y1) = {
        let (lo, hi) = range(all().map(|p| p.1));
        if lo >= 0.0 && hi <= 1.0 && chart.y_label.starts_with('P') {
            (0.0, 1.0)
        } else {
            let pad = 0.05 * (hi - lo);
            (lo.min(0.0) - pad, hi.max(0.0) + pad)
        }
    };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + pw / 2.0,
        escape(&chart.title)
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(
            s,
            r##"<line x1="{px:.2}" y1="{TOP:.2}" x2="{px:.2}" y2="{:.2}" stroke="#e0e0e0"/>"##,
            TOP + ph
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##,
            LEFT + pw
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xv:.2}</text>"#,
            TOP + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{yv:.3}</text>"#,
            LEFT - 6.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    );
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            s,
            r#"<line x1="{LEFT:.2}" y1="{0:.2}" x2="{1:.2}" y2="{0:.2}" stroke="black" stroke-dasharray="4 3"/>"#,
            sy(0.0),
            LEFT + pw
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 12.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, series) in chart.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = series
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(&series.label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Which quantity a chart family shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Quantity {
    PN,
    DeltaP,
}

/// Plots for every `(n, k)` in `rows`: P_N and ΔP against sigma (mu = 0)
/// and against mu (sigma = 1), one series per `a`. Returns `(file name, svg)`.
pub fn charts_for(rows: &[EvalRow]) -> Result<Vec<(String, String)>, CliError> {
    if rows.is_empty() {
        return Err(CliError::Data("empty table, nothing to plot".into()));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<&EvalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.n, r.k)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((n, k), g) in groups {
        for q in [Quantity::PN, Quantity::DeltaP] {
            for along_sigma in [true, false] {
                let mut by_a: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
                for r in &g {
                    let (keep, x) = if along_sigma {
                        (r.mu == 0.0, r.sigma)
                    } else {
                        (r.sigma == 1.0 && r.mu != 0.0, r.mu)
                    };
                    if keep {
                        let y = match q {
                            Quantity::PN => r.p_n,
                            Quantity::DeltaP => r.delta_p,
                        };
                        by_a.entry(r.a).or_default().push((x, y));
                    }
                }
                if by_a.is_empty() {
                    continue;
                }
                let series = by_a
                    .into_iter()
                    .map(|(a, mut points)| {
                        points.sort_by(|p, q| p.0.total_cmp(&q.0));
                        Series {
                            label: format!("a = {a}"),
                            points,
                        }
                    })
                    .collect();
                let (qname, ylabel) = match q {
                    Quantity::PN => ("p_n", "P_N"),
                    Quantity::DeltaP => ("delta_p", "ΔP = P_N − P_S"),
                };
                let (axis, xlabel, fixed) = if along_sigma {
                    ("sigma", "σ", "μ = 0")
                } else {
                    ("mu", "μ", "σ = 1")
                };
                let chart = Chart {
                    title: format!("{ylabel}, n = {n}, k = {k}, {fixed}"),
                    x_label: xlabel.into(),
                    y_label: ylabel.into(),
                    series,
                };
                out.push((format!("{qname}_n{n}_k{k}_{axis}.svg"), render_svg(&chart)?));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_chart_is_an_error() {
        let c = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "P".into(),
            series: vec![],
        };
        assert!(render_svg(&c).is_err());
        assert!(charts_for(&[]).is_err());
    }

    #[test]
    fn render_is_stable() {
        let c = Chart {
            title: "a < b".into(),
            x_label: "x".into(),
            y_label: "P".into(),
            series: vec![Series {
                label: "s".into(),
                points: vec![(0.0, 0.1), (1.0, 0.9)],
            }],
        };
        let a = render_svg(&c).unwrap();
        assert_eq!(a, render_svg(&c).unwrap());
        assert!(a.contains("a &lt; b"));
        assert!(a.contains("<polyline"));
        assert!(a.ends_with("</svg>\n"));
    }
}
