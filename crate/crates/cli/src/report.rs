//! Single-page HTML summary of a run.

use std::fmt::Write as _;

use geocausal_core::estimator::AteEstimate;

use crate::stages::AucRow;

#[derive(Debug, Clone, Default)]
pub struct Sections {
    pub config: String,
    pub panels: String,
    pub estimates: Vec<AteEstimate>,
    pub auc: Vec<AucRow>,
    pub twfe: String,
    pub salience_delta: String,
    pub meta: String,
    pub cca: String,
    /// (manifest key, SVG text).
    pub figures: Vec<(String, String)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn csv_table(out: &mut String, text: &str) {
    let mut lines = text.lines();
    let Some(head) = lines.next() else {
        return;
    };
    out.push_str("<table>\n<tr>");
    for h in head.split(',') {
        let _ = write!(out, "<th>{}</th>", escape(h));
    }
    out.push_str("</tr>\n");
    let mut rows = 0;
    for line in lines {
        out.push_str("<tr>");
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(line.as_bytes());
        if let Some(Ok(rec)) = rdr.records().next() {
            for f in rec.iter() {
                let _ = write!(out, "<td>{}</td>", escape(f));
            }
        }
        out.push_str("</tr>\n");
        rows += 1;
    }
    out.push_str("</table>\n");
    if rows == 0 {
        out.push_str("<p class=\"note\">No rows.</p>\n");
    }
}

pub fn render(s: &Sections) -> String {
    let mut out = String::new();
    out.push_str(
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>geocausal run report</title>\n<style>\n\
         body { font-family: sans-serif; max-width: 1100px; margin: 2em auto; color: #222; }\n\
         table { border-collapse: collapse; margin: 0.5em 0 1.5em; font-size: 0.9em; }\n\
         th, td { border: 1px solid #ccc; padding: 2px 8px; text-align: right; }\n\
         th { background: #f2f2f2; }\n\
         pre { background: #f7f7f7; padding: 0.8em; overflow-x: auto; font-size: 0.85em; }\n\
         .note { color: #777; }\n\
         </style>\n</head>\n<body>\n<h1>geocausal run report</h1>\n",
    );

    out.push_str("<h2>Average treatment effects</h2>\n");
    if s.estimates.is_empty() {
        out.push_str("<p class=\"note\">No estimates.</p>\n");
    } else {
        out.push_str("<table>\n<tr><th>funder</th><th>sector</th><th>specification</th><th>ATE</th><th>SE</th><th>95% CI</th><th>treated</th><th>control</th></tr>\n");
        for e in &s.estimates {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.3}</td><td>{:.3}</td><td>[{:.3}, {:.3}]</td><td>{}</td><td>{}</td></tr>",
                e.funder,
                e.sector_code,
                e.specification.tag(),
                e.ate,
                e.std_error,
                e.ci_low,
                e.ci_high,
                e.n_treated,
                e.n_control
            );
        }
        out.push_str("</table>\n");
    }

    for (key, svg) in &s.figures {
        let _ = writeln!(out, "<h2>Figure: {}</h2>\n<div>{}</div>", escape(key), svg.trim_end());
    }

    if !s.auc.is_empty() {
        out.push_str("<h2>Out-of-sample AUC</h2>\n<table>\n<tr><th>funder</th><th>sector</th><th>specification</th><th>AUC</th><th>n</th></tr>\n");
        for r in &s.auc {
            let _ = writeln!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td><td>{:.3}</td><td>{}</td></tr>",
                r.funder,
                r.sector,
                r.spec.tag(),
                r.auc,
                r.n_out_of_sample
            );
        }
        out.push_str("</table>\n");
    }
    if !s.meta.is_empty() {
        let _ = writeln!(out, "<h2>Meta-regression of ATEs</h2>\n<pre>{}</pre>", escape(&s.meta));
    }
    if !s.twfe.is_empty() {
        out.push_str("<h2>Two-way fixed effects</h2>\n");
        csv_table(&mut out, &s.twfe);
    }
    if !s.salience_delta.is_empty() {
        out.push_str("<h2>Salience change when images are added</h2>\n");
        csv_table(&mut out, &s.salience_delta);
    }
    if !s.cca.is_empty() {
        let _ = writeln!(
            out,
            "<h2>Canonical correlation of funder salience</h2>\n<pre>{}</pre>",
            escape(&s.cca)
        );
    }
    if !s.panels.is_empty() {
        let _ = writeln!(out, "<h2>Panel construction</h2>\n<pre>{}</pre>", escape(&s.panels));
    }
    let _ = writeln!(
        out,
        "<h2>Effective configuration</h2>\n<pre>{}</pre>",
        escape(&s.config)
    );
    out.push_str("</body>\n</html>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_tables_and_escapes() {
        let s = Sections {
            config: "seed = 1 # <x>".into(),
            twfe: "funder,sector,beta\nChina,110,1.5\n".into(),
            ..Sections::default()
        };
        let html = render(&s);
        assert!(html.contains("&lt;x&gt;"));
        assert!(html.contains("<td>1.5</td>"));
        assert!(html.contains("No estimates."));
        assert!(html.ends_with("</html>\n"));
    }
}
