//! Hand-written SVG figures: ATE intervals by specification and out-of-sample
//! AUC by sector.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use geocausal_core::estimator::{AteEstimate, Specification};
use geocausal_core::panel::Funder;

use crate::stages::AucRow;

const COLORS: [&str; 4] = ["#7f7f7f", "#1f77b4", "#ff7f0e", "#2ca02c"];
const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn color(spec: Specification) -> &'static str {
    COLORS[Specification::ALL.iter().position(|&s| s == spec).unwrap_or(0)]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Rounded axis ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-9);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .into_iter()
        .map(|m| m * mag)
        .find(|s| span / s <= 6.0)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn legend(svg: &mut String, x: f64, y: f64, specs: &[Specification]) {
    for (k, s) in specs.iter().enumerate() {
        let yy = y + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"{:.1}\" {FONT}>{}</text>",
            yy - 9.0,
            color(*s),
            x + 14.0,
            yy,
            s.tag()
        );
    }
}

/// One panel per funder; each sector row shows every specification's point
/// estimate with its 95% interval, against a reference line at zero.
pub fn ate_intervals(rows: &[AteEstimate]) -> String {
    let funders: Vec<Funder> = rows
        .iter()
        .map(|r| r.funder)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let specs: Vec<Specification> = rows
        .iter()
        .map(|r| r.specification)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let finite = rows
        .iter()
        .flat_map(|r| [r.ci_low, r.ci_high, r.ate])
        .filter(|v| v.is_finite());
    let (mut lo, mut hi) = finite.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let pad = 0.05 * (hi - lo).max(1.0);
    lo -= pad;
    hi += pad;

    let panel_w = 360.0;
    let (left, top, row_h) = (70.0, 40.0, 18.0 * specs.len().max(1) as f64 + 8.0);
    let mut sectors: BTreeMap<Funder, Vec<u32>> = BTreeMap::new();
    for r in rows {
        let v = sectors.entry(r.funder).or_default();
        if !v.contains(&r.sector_code) {
            v.push(r.sector_code);
        }
    }
    let max_rows = sectors.values().map(Vec::len).max().unwrap_or(0).max(1);
    let plot_h = row_h * max_rows as f64;
    let width = left + (panel_w + left) * funders.len().max(1) as f64 + 110.0;
    let height = top + plot_h + 50.0;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    if rows.is_empty() {
        let _ = writeln!(svg, "<text x=\"20\" y=\"30\" {FONT}>no estimates</text>");
    }
    for (pi, funder) in funders.iter().enumerate() {
        let x0 = left + pi as f64 * (panel_w + left);
        let sx = |v: f64| x0 + (v - lo) / (hi - lo) * panel_w;
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"20\" {FONT} font-weight=\"bold\" text-anchor=\"middle\">{funder}</text>",
            x0 + panel_w / 2.0
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{x0:.1}\" y=\"{top:.1}\" width=\"{panel_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#444\"/>"
        );
        for t in ticks(lo, hi) {
            let x = sx(t);
            let _ = writeln!(
                svg,
                "<line x1=\"{x:.1}\" y1=\"{:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"#444\"/><text x=\"{x:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">{t}</text>",
                top + plot_h,
                top + plot_h + 4.0,
                top + plot_h + 16.0
            );
        }
        let z = sx(0.0);
        let _ = writeln!(
            svg,
            "<line x1=\"{z:.1}\" y1=\"{top:.1}\" x2=\"{z:.1}\" y2=\"{:.1}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
            top + plot_h
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">ATE (IWI points)</text>",
            x0 + panel_w / 2.0,
            top + plot_h + 34.0
        );
        for (ri, sector) in sectors[funder].iter().enumerate() {
            let y0 = top + ri as f64 * row_h;
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"end\">{sector}</text>",
                x0 - 6.0,
                y0 + row_h / 2.0 + 4.0
            );
            for r in rows.iter().filter(|r| r.funder == *funder && r.sector_code == *sector) {
                let k = specs.iter().position(|&s| s == r.specification).unwrap_or(0);
                let y = y0 + 10.0 + 18.0 * k as f64;
                let c = color(r.specification);
                if r.ci_low.is_finite() && r.ci_high.is_finite() {
                    let _ = writeln!(
                        svg,
                        "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"{c}\" stroke-width=\"2\"/>",
                        sx(r.ci_low),
                        sx(r.ci_high)
                    );
                }
                if r.ate.is_finite() {
                    let _ = writeln!(
                        svg,
                        "<circle cx=\"{:.1}\" cy=\"{y:.1}\" r=\"3.5\" fill=\"{c}\"><title>{} {} {}: {:.3} [{:.3}, {:.3}]</title></circle>",
                        sx(r.ate),
                        escape(&funder.to_string()),
                        sector,
                        r.specification.tag(),
                        r.ate,
                        r.ci_low,
                        r.ci_high
                    );
                }
            }
        }
    }
    legend(&mut svg, width - 100.0, top + 10.0, &specs);
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars of out-of-sample AUC per sector, one panel per funder, with
/// the chance level marked.
pub fn auc_bars(rows: &[AucRow]) -> String {
    let funders: Vec<Funder> = rows
        .iter()
        .map(|r| r.funder)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let specs: Vec<Specification> = rows
        .iter()
        .map(|r| r.spec)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (left, top, plot_h) = (50.0, 40.0, 220.0);
    let bar_w = 12.0;
    let group_w = bar_w * specs.len().max(1) as f64 + 14.0;
    let mut sectors: BTreeMap<Funder, Vec<u32>> = BTreeMap::new();
    for r in rows {
        let v = sectors.entry(r.funder).or_default();
        if !v.contains(&r.sector) {
            v.push(r.sector);
        }
    }
    let panel_w = |f: &Funder| group_w * sectors[f].len() as f64 + 10.0;
    let width = left + funders.iter().map(|f| panel_w(f) + left).sum::<f64>() + 110.0;
    let height = top + plot_h + 60.0;
    let sy = |v: f64| top + plot_h - v.clamp(0.0, 1.0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");
    if rows.is_empty() {
        let _ = writeln!(svg, "<text x=\"20\" y=\"30\" {FONT}>no fitted models</text>");
    }
    let mut x0 = left;
    for funder in &funders {
        let w = panel_w(funder);
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"20\" {FONT} font-weight=\"bold\" text-anchor=\"middle\">{funder}</text>",
            x0 + w / 2.0
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{x0:.1}\" y=\"{top:.1}\" width=\"{w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#444\"/>"
        );
        for t in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let y = sy(t);
            let _ = writeln!(
                svg,
                "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0:.1}\" y2=\"{y:.1}\" stroke=\"#444\"/><text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"end\">{t}</text>",
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0
            );
        }
        let half = sy(0.5);
        let _ = writeln!(
            svg,
            "<line x1=\"{x0:.1}\" y1=\"{half:.1}\" x2=\"{:.1}\" y2=\"{half:.1}\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>",
            x0 + w
        );
        for (gi, sector) in sectors[funder].iter().enumerate() {
            let gx = x0 + 10.0 + gi as f64 * group_w;
            for r in rows.iter().filter(|r| r.funder == *funder && r.sector == *sector) {
                let k = specs.iter().position(|&s| s == r.spec).unwrap_or(0);
                let x = gx + k as f64 * bar_w;
                let y = sy(r.auc);
                let _ = writeln!(
                    svg,
                    "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{}\"><title>{} {} {}: {:.3}</title></rect>",
                    bar_w - 1.0,
                    top + plot_h - y,
                    color(r.spec),
                    escape(&funder.to_string()),
                    sector,
                    r.spec.tag(),
                    r.auc
                );
            }
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">{sector}</text>",
                gx + bar_w * specs.len() as f64 / 2.0,
                top + plot_h + 16.0
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" {FONT} text-anchor=\"middle\">sector</text>",
            x0 + w / 2.0,
            top + plot_h + 34.0
        );
        x0 += w + left;
    }
    let _ = writeln!(
        svg,
        "<text x=\"14\" y=\"{:.1}\" {FONT} transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\">out-of-sample AUC</text>",
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    legend(&mut svg, width - 100.0, top + 10.0, &specs);
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(funder: Funder, sector: u32, spec: Specification, ate: f64) -> AteEstimate {
        AteEstimate {
            funder,
            sector_code: sector,
            specification: spec,
            ate,
            std_error: 1.0,
            ci_low: ate - 2.0,
            ci_high: ate + 2.0,
            n_treated: 10,
            n_control: 20,
            clip_bounds: (0.01, 0.99),
            variance_method: "x".into(),
        }
    }

    #[test]
    fn ticks_are_round_and_cover_range() {
        assert_eq!(ticks(-3.2, 11.7), vec![0.0, 5.0, 10.0]);
        let t = ticks(0.0, 1.0);
        assert_eq!(t.len(), 6);
        assert!(t.windows(2).all(|w| (w[1] - w[0] - 0.2).abs() < 1e-9));
    }

    #[test]
    fn ate_figure_marks_every_estimate() {
        let rows = vec![
            est(Funder::WorldBank, 110, Specification::DiffMeans, 4.0),
            est(Funder::WorldBank, 110, Specification::MXFe, 2.0),
            est(Funder::China, 210, Specification::DiffMeans, -1.0),
        ];
        let svg = ate_intervals(&rows);
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("WorldBank") && svg.contains("China"));
    }

    #[test]
    fn auc_figure_draws_one_bar_per_row() {
        let rows = vec![
            AucRow {
                funder: Funder::China,
                sector: 110,
                spec: Specification::M,
                auc: 0.8,
                n_out_of_sample: 100,
            },
            AucRow {
                funder: Funder::China,
                sector: 110,
                spec: Specification::XFe,
                auc: 0.6,
                n_out_of_sample: 100,
            },
        ];
        let svg = auc_bars(&rows);
        assert_eq!(svg.matches("<title>").count(), 2);
    }
}
