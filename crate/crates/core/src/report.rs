//! Side-by-side evaluation aggregation and deterministic CSV/SVG rendering
//! of win rates and training curves.
//!
//! The SVG emitters write markup by hand: identical inputs produce
//! byte-identical files, which keeps golden-file tests meaningful.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::TaskType;

/// Verdict of one side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    A,
    B,
    #[serde(rename = "tie")]
    Tie,
}

/// One comparison record. JSONL: `{"id", "task_type", "verdict": "A"|"B"|"tie"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbsRecord {
    pub id: String,
    pub task_type: TaskType,
    pub verdict: Verdict,
}

/// Win/tie counts for one slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbsCounts {
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
}

impl SbsCounts {
    fn add(&mut self, verdict: Verdict) {
        match verdict {
            Verdict::A => self.wins_a += 1,
            Verdict::B => self.wins_b += 1,
            Verdict::Tie => self.ties += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.wins_a + self.wins_b + self.ties
    }

    /// Shares normalized over non-tie verdicts; `None` when every verdict
    /// tied (or the slice is empty).
    pub fn shares(&self) -> Option<(f64, f64)> {
        let decided = self.wins_a + self.wins_b;
        (decided > 0).then(|| {
            (
                self.wins_a as f64 / decided as f64,
                self.wins_b as f64 / decided as f64,
            )
        })
    }
}

/// Aggregated side-by-side report: per task type (all ten always present)
/// plus an overall row.
#[derive(Debug, Clone, PartialEq)]
pub struct SbsReport {
    per_task: BTreeMap<TaskType, SbsCounts>,
    pub overall: SbsCounts,
}

impl SbsReport {
    pub fn counts(&self, task: TaskType) -> SbsCounts {
        self.per_task.get(&task).copied().unwrap_or_default()
    }

    pub fn per_task(&self) -> &BTreeMap<TaskType, SbsCounts> {
        &self.per_task
    }
}

/// Exact counting of verdicts per task type and overall. Task types absent
/// from the records appear with zero counts.
pub fn aggregate_sbs(records: &[SbsRecord]) -> SbsReport {
    let mut per_task: BTreeMap<TaskType, SbsCounts> = TaskType::ALL
        .iter()
        .map(|&t| (t, SbsCounts::default()))
        .collect();
    let mut overall = SbsCounts::default();
    for rec in records {
        per_task.get_mut(&rec.task_type).expect("all tasks present").add(rec.verdict);
        overall.add(rec.verdict);
    }
    SbsReport { per_task, overall }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("column `{0}` not found in history header")]
    MissingColumn(String),
    #[error("line {line}: bad numeric field `{field}`")]
    BadNumber { line: usize, field: String },
    #[error("malformed history csv: {0}")]
    Format(String),
}

fn share_cells(counts: &SbsCounts) -> (String, String) {
    match counts.shares() {
        Some((a, b)) => (format!("{a:.4}"), format!("{b:.4}")),
        None => (String::new(), String::new()),
    }
}

/// CSV export: `task_type,wins_a,wins_b,ties,share_a,share_b`, ten task rows
/// in canonical order plus an overall row. Share cells are empty when no
/// verdict was decided.
pub fn sbs_csv(report: &SbsReport) -> String {
    let mut out = String::from("task_type,wins_a,wins_b,ties,share_a,share_b\n");
    for task in TaskType::ALL {
        let c = report.counts(task);
        let (sa, sb) = share_cells(&c);
        out.push_str(&format!(
            "{task},{},{},{},{sa},{sb}\n",
            c.wins_a, c.wins_b, c.ties
        ));
    }
    let (sa, sb) = share_cells(&report.overall);
    out.push_str(&format!(
        "overall,{},{},{},{sa},{sb}\n",
        report.overall.wins_a, report.overall.wins_b, report.overall.ties
    ));
    out
}

pub fn render_sbs_csv(report: &SbsReport, path: impl AsRef<Path>) -> Result<(), ReportError> {
    fs::write(path, sbs_csv(report))?;
    Ok(())
}

const BAR_COLOR_A: &str = "#5b7fa6";
const BAR_COLOR_B: &str = "#b0583f";

/// Horizontal paired share bars, one row per task type plus the overall row.
pub fn sbs_svg(report: &SbsReport, label_a: &str, label_b: &str) -> String {
    let rows: Vec<(String, SbsCounts)> = TaskType::ALL
        .iter()
        .map(|&t| (t.to_string(), report.counts(t)))
        .chain(std::iter::once(("overall".to_string(), report.overall)))
        .collect();
    let row_height = 26.0;
    let top = 42.0;
    let label_width = 130.0;
    let bar_area = 420.0;
    let width = label_width + bar_area + 150.0;
    let height = top + rows.len() as f64 * row_height + 16.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "<text x=\"{label_width:.0}\" y=\"16\">share of non-tie wins: \
         <tspan fill=\"{BAR_COLOR_A}\">{label_a}</tspan> vs \
         <tspan fill=\"{BAR_COLOR_B}\">{label_b}</tspan></text>\n"
    ));
    for (i, (name, counts)) in rows.iter().enumerate() {
        let y = top + i as f64 * row_height;
        let (share_a, share_b) = counts.shares().unwrap_or((0.0, 0.0));
        let wa = share_a * bar_area;
        let wb = share_b * bar_area;
        svg.push_str(&format!(
            "<text x=\"4\" y=\"{:.1}\">{name}</text>\n",
            y + 14.0
        ));
        svg.push_str(&format!(
            "<rect x=\"{label_width:.1}\" y=\"{y:.1}\" width=\"{wa:.2}\" height=\"18\" fill=\"{BAR_COLOR_A}\"/>\n"
        ));
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{y:.1}\" width=\"{wb:.2}\" height=\"18\" fill=\"{BAR_COLOR_B}\"/>\n",
            label_width + wa
        ));
        let summary = match counts.shares() {
            Some((a, b)) => format!("{:.0}/{:.0} (ties {})", a * 100.0, b * 100.0, counts.ties),
            None => format!("no decided verdicts (ties {})", counts.ties),
        };
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">{summary}</text>\n",
            label_width + bar_area + 8.0,
            y + 14.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn render_sbs_svg(
    report: &SbsReport,
    label_a: &str,
    label_b: &str,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    fs::write(path, sbs_svg(report, label_a, label_b))?;
    Ok(())
}

/// A parsed numeric history table.
struct History {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn parse_history(csv: &str) -> Result<History, ReportError> {
    let mut lines = csv.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| ReportError::Format("empty file".into()))?;
    let header: Vec<String> = header_line.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(header.len());
        for field in line.split(',') {
            row.push(field.parse::<f64>().map_err(|_| ReportError::BadNumber {
                line: idx + 2,
                field: field.to_string(),
            })?);
        }
        if row.len() != header.len() {
            return Err(ReportError::Format(format!(
                "line {}: {} fields, expected {}",
                idx + 2,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(History { header, rows })
}

const CURVE_COLORS: [&str; 6] = [
    "#5b7fa6", "#b0583f", "#5f9e6e", "#867aab", "#c2a14d", "#777777",
];

/// Renders the named history columns as polylines over the batch index.
/// One point per row; a single-row history degenerates to a dot per curve.
pub fn curves_svg(history_csv: &str, columns: &[&str]) -> Result<String, ReportError> {
    let history = parse_history(history_csv)?;
    let mut selected = Vec::with_capacity(columns.len());
    for &name in columns {
        let idx = history
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ReportError::MissingColumn(name.to_string()))?;
        selected.push((name, idx));
    }
    if history.rows.is_empty() {
        return Err(ReportError::Format("history has no data rows".into()));
    }

    let (width, height) = (640.0, 360.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 40.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for row in &history.rows {
        for &(_, idx) in &selected {
            y_min = y_min.min(row[idx]);
            y_max = y_max.max(row[idx]);
        }
    }
    if y_max == y_min {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let n = history.rows.len();
    let x_at = |i: usize| {
        if n == 1 {
            left + plot_w / 2.0
        } else {
            left + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| top + plot_h * (1.0 - (v - y_min) / (y_max - y_min));

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"monospace\" font-size=\"12\">\n"
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{left:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#222222\"/>\n",
        top + plot_h,
        left + plot_w,
        top + plot_h
    ));
    svg.push_str(&format!(
        "<line x1=\"{left:.1}\" y1=\"{top:.1}\" x2=\"{left:.1}\" y2=\"{:.1}\" stroke=\"#222222\"/>\n",
        top + plot_h
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\">batch</text>\n",
        left + plot_w / 2.0 - 20.0,
        height - 10.0
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{:.1}\">{:.4}</text>\n",
        top + plot_h,
        y_min
    ));
    svg.push_str(&format!("<text x=\"4\" y=\"{:.1}\">{:.4}</text>\n", top + 4.0, y_max));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{:.1}\">0</text>\n<text x=\"{:.1}\" y=\"{:.1}\">{}</text>\n",
        top + plot_h + 14.0,
        left + plot_w - 10.0,
        top + plot_h + 14.0,
        n - 1
    ));
    // Legend and curves.
    for (k, &(name, idx)) in selected.iter().enumerate() {
        let color = CURVE_COLORS[k % CURVE_COLORS.len()];
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" fill=\"{color}\">{name}</text>\n",
            left + 8.0 + k as f64 * 170.0,
            18.0
        ));
        let points: Vec<String> = history
            .rows
            .iter()
            .enumerate()
            .map(|(i, row)| format!("{:.2},{:.2}", x_at(i), y_at(row[idx])))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Reads a history CSV from disk and writes the curve chart.
pub fn render_curves_svg(
    history_csv_path: impl AsRef<Path>,
    columns: &[&str],
    out_path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    let csv = fs::read_to_string(history_csv_path)?;
    let svg = curves_svg(&csv, columns)?;
    fs::write(out_path, svg)?;
    Ok(())
}

/// Reads SbS records from JSONL with positioned errors.
pub fn load_sbs_jsonl(path: impl AsRef<Path>) -> Result<Vec<SbsRecord>, crate::corpus::CorpusError> {
    use std::io::BufRead;
    let reader = std::io::BufReader::new(fs::File::open(path.as_ref())?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let text = line?;
        let rec: SbsRecord =
            serde_json::from_str(&text).map_err(|e| crate::corpus::CorpusError::Schema {
                line: idx + 1,
                message: e.to_string(),
            })?;
        records.push(rec);
    }
    Ok(records)
}

/// Writes SbS records as JSONL.
pub fn write_sbs_jsonl(
    records: &[SbsRecord],
    path: impl AsRef<Path>,
) -> Result<(), crate::corpus::CorpusError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(fs::File::create(path.as_ref())?);
    for rec in records {
        serde_json::to_writer(&mut w, rec).map_err(|e| crate::corpus::CorpusError::Schema {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
