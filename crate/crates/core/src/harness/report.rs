use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use super::metrics::MetricsReport;
use super::HarnessError;
use crate::model::Variant;

pub const CSV_HEADER: &str = "variant,kg_fraction,seed,em_hop1,em_context,em_hop2,n_hop1,n_context,n_hop2,final_L,final_Sim";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(format!("unknown report format `{other}` (expected csv or markdown)")),
        }
    }
}

/// 17 significant digits, enough to round-trip every `f64`.
fn exact(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.variant,
            exact(r.kg_fraction),
            r.seed,
            exact(r.em_hop1),
            exact(r.em_context),
            exact(r.em_hop2),
            r.n_hop1,
            r.n_context,
            r.n_hop2,
            exact(r.final_l),
            exact(r.final_sim),
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<MetricsReport>, HarnessError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected CSV header `{header}`")));
    }
    reader.deserialize().map(|row| row.map_err(HarnessError::from)).collect()
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

fn medians<'a>(rows: impl Iterator<Item = &'a MetricsReport>) -> [f64; 3] {
    let rows: Vec<&MetricsReport> = rows.collect();
    let col = |f: fn(&MetricsReport) -> f64| median(&mut rows.iter().map(|r| f(r)).collect::<Vec<_>>());
    [col(|r| r.em_hop1), col(|r| r.em_context), col(|r| r.em_hop2)]
}

fn rows_table(out: &mut String, key: &str, rows: &[&MetricsReport], label: impl Fn(&MetricsReport) -> String) {
    let _ = writeln!(out, "| {key} | seed | hop1 | context | hop2 | final_L | final_Sim |");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for r in rows {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |",
            label(r),
            r.seed,
            r.em_hop1,
            r.em_context,
            r.em_hop2,
            r.final_l,
            r.final_sim
        );
    }
}

/// Ablation tables per KG fraction, or one sweep table when a single
/// variant spans several fractions. Rows keep their input order.
pub fn to_markdown(reports: &[MetricsReport]) -> String {
    let fractions: Vec<f64> = {
        let mut f: Vec<f64> = reports.iter().map(|r| r.kg_fraction).collect();
        f.sort_by(f64::total_cmp);
        f.dedup();
        f
    };
    let variants: BTreeSet<Variant> = reports.iter().map(|r| r.variant).collect();
    let mut out = String::new();

    if fractions.len() > 1 && variants.len() == 1 {
        let v = variants.iter().next().expect("one variant");
        let _ = writeln!(out, "## KG scale sweep (variant {v})\n");
        let rows: Vec<&MetricsReport> = reports.iter().collect();
        rows_table(&mut out, "kg_fraction", &rows, |r| format!("{:.4}", r.kg_fraction));
        out.push_str("\n### Median over seeds\n\n| kg_fraction | hop1 | context | hop2 |\n|---:|---:|---:|---:|\n");
        for &f in &fractions {
            let [a, b, c] = medians(reports.iter().filter(|r| r.kg_fraction == f));
            let _ = writeln!(out, "| {f:.4} | {a:.4} | {b:.4} | {c:.4} |");
        }
        return out;
    }

    for (i, &f) in fractions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "## Ablation (kg_fraction {f:.4})\n");
        let rows: Vec<&MetricsReport> = reports.iter().filter(|r| r.kg_fraction == f).collect();
        rows_table(&mut out, "variant", &rows, |r| r.variant.to_string());
        out.push_str("\n### Median over seeds\n\n| variant | hop1 | context | hop2 |\n|---|---:|---:|---:|\n");
        for v in &variants {
            if !rows.iter().any(|r| r.variant == *v) {
                continue;
            }
            let [a, b, c] = medians(rows.iter().copied().filter(|r| r.variant == *v));
            let _ = writeln!(out, "| {v} | {a:.4} | {b:.4} | {c:.4} |");
        }
    }
    out
}

pub fn render_report(reports: &[MetricsReport], format: ReportFormat) -> Result<String, HarnessError> {
    if reports.is_empty() {
        return Err(HarnessError::EmptyReport);
    }
    Ok(match format {
        ReportFormat::Csv => to_csv(reports),
        ReportFormat::Markdown => to_markdown(reports),
    })
}

/// Writes the rendered report; nothing is written for an empty list.
pub fn emit_report(reports: &[MetricsReport], format: ReportFormat, path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let text = render_report(reports, format)?;
    std::fs::write(path, text)?;
    Ok(())
}
