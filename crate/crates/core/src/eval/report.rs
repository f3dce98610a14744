//! Comparison tables (rows of per-language scores plus an Average column),
//! rendered as markdown, JSON and optional bar charts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::MetricsReport;

/// Decimal places shown in every rendering.
pub const PRECISION: usize = 4;

fn rounded(x: f64) -> f64 {
    let f = 10f64.powi(PRECISION as i32);
    (x * f).round() / f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub values: Vec<f64>,
}

impl ComparisonRow {
    /// Unweighted mean of the per-language cells.
    pub fn average(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub title: String,
    /// Header of the first column, e.g. "Model" or "Threshold".
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn new(title: impl Into<String>, row_header: impl Into<String>, columns: Vec<String>) -> Self {
        Self {
            title: title.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("report cells must be finite".into()));
        }
        self.rows.push(ComparisonRow {
            label: label.into(),
            values,
        });
        Ok(())
    }

    /// One row per `(label, report)`; columns are the first report's languages.
    pub fn from_reports(title: &str, row_header: &str, reports: &[(String, &MetricsReport)]) -> Result<Self> {
        let columns = reports
            .first()
            .map(|(_, r)| r.languages.iter().map(|l| l.language.clone()).collect())
            .unwrap_or_default();
        let mut table = Self::new(title, row_header, columns);
        for (label, report) in reports {
            let values = table
                .columns
                .iter()
                .map(|code| {
                    report
                        .weighted_f1(code)
                        .ok_or_else(|| Error::UnknownLanguage(code.clone()))
                })
                .collect::<Result<Vec<_>>>()?;
            table.push_row(label.clone(), values)?;
        }
        Ok(table)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&format!("### {}\n\n", self.title));
        }
        let mut header = vec![self.row_header.clone()];
        header.extend(self.columns.iter().cloned());
        header.push("Average".into());
        out.push_str(&format!("| {} |\n", header.join(" | ")));
        let mut rule = vec![":---".to_string()];
        rule.extend(std::iter::repeat_n("---:".to_string(), header.len() - 1));
        out.push_str(&format!("| {} |\n", rule.join(" | ")));
        for row in &self.rows {
            let mut cells = vec![row.label.clone()];
            cells.extend(row.values.iter().map(|v| format!("{v:.PRECISION$}")));
            cells.push(format!("{:.PRECISION$}", row.average()));
            out.push_str(&format!("| {} |\n", cells.join(" | ")));
        }
        out
    }

    /// Same numbers as the markdown, rounded to the displayed precision.
    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let cells: serde_json::Map<String, serde_json::Value> = self
                    .columns
                    .iter()
                    .zip(&row.values)
                    .map(|(c, v)| (c.clone(), serde_json::json!(rounded(*v))))
                    .collect();
                serde_json::json!({
                    "label": row.label,
                    "values": cells,
                    "average": rounded(row.average()),
                })
            })
            .collect();
        let doc = serde_json::json!({
            "title": self.title,
            "row_header": self.row_header,
            "columns": self.columns,
            "rows": rows,
        });
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Markdown => Ok(self.to_markdown()),
            Format::Json => self.to_json(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Markdown => "md",
            Format::Json => "json",
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(Format::Markdown),
            "json" => Ok(Format::Json),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

/// Writes `{stem}.md` / `{stem}.json` (and one PNG per language column when
/// `charts` is set) into `dir`; returns the written paths.
pub fn render_report(table: &ComparisonTable, dir: &Path, stem: &str, formats: &[Format], charts: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &format in formats {
        let path = dir.join(format!("{stem}.{}", format.extension()));
        fs::write(&path, table.render(format)?)?;
        written.push(path);
    }
    if charts {
        written.extend(write_charts(table, dir, stem)?);
    }
    Ok(written)
}

/// Per-class and per-language breakdown of a single evaluation.
pub fn metrics_markdown(report: &MetricsReport) -> String {
    let mut out = format!("### Evaluation on `{}`\n\n", report.split);
    if !report.provenance.is_empty() {
        for (k, v) in &report.provenance {
            out.push_str(&format!("- {k}: {v}\n"));
        }
        out.push('\n');
    }
    out.push_str("| Language | Examples | Weighted-F1 |\n| :--- | ---: | ---: |\n");
    for l in &report.languages {
        out.push_str(&format!("| {} | {} | {:.PRECISION$} |\n", l.language, l.examples, l.weighted_f1));
    }
    out.push_str(&format!("| Average | | {:.PRECISION$} |\n", report.average));
    for l in &report.languages {
        out.push_str(&format!("\n#### {}\n\n| Label | Support | F1 |\n| :--- | ---: | ---: |\n", l.language));
        for ((label, f1), support) in l.labels.iter().zip(&l.per_class_f1).zip(&l.support) {
            out.push_str(&format!("| {label} | {support} | {f1:.PRECISION$} |\n"));
        }
    }
    out
}

#[cfg(feature = "charts")]
fn write_charts(table: &ComparisonTable, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
    use image::{Rgb, RgbImage};

    const PALETTE: [[u8; 3]; 6] = [
        [76, 114, 176],
        [221, 132, 82],
        [85, 168, 104],
        [196, 78, 82],
        [129, 114, 179],
        [147, 120, 96],
    ];
    let (bar, gap, height) = (40u32, 16u32, 240u32);
    let mut written = Vec::new();
    for (c, code) in table.columns.iter().enumerate() {
        let width = gap + table.rows.len() as u32 * (bar + gap);
        let mut img = RgbImage::from_pixel(width.max(1), height + 2, Rgb([255, 255, 255]));
        for (r, row) in table.rows.iter().enumerate() {
            let v = row.values[c].clamp(0.0, 1.0);
            let h = (v * height as f64).round() as u32;
            let x0 = gap + r as u32 * (bar + gap);
            for x in x0..x0 + bar {
                for y in height - h..height {
                    img.put_pixel(x, y, Rgb(PALETTE[r % PALETTE.len()]));
                }
            }
        }
        for x in 0..img.width() {
            img.put_pixel(x, height, Rgb([0, 0, 0]));
        }
        let path = dir.join(format!("{stem}_{code}.png"));
        img.save(&path)
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(not(feature = "charts"))]
fn write_charts(_: &ComparisonTable, _: &Path, _: &str) -> Result<Vec<PathBuf>> {
    Err(Error::Config("chart output needs the `charts` feature".into()))
}
