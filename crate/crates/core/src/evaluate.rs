//! Classification metrics, confusion matrices and result tables.
//!
//! Per-class precision, recall and F1 use the convention that 0/0 = 0; such
//! cases are listed in [`EvalReport::zero_division`]. Macro-F1 averages the
//! per-class F1 over the labels that occur in either the gold labels or the
//! predictions, so a perfect classifier scores exactly 1 even when a class is
//! absent from a split. Weighted-F1 weights each class by its gold support.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::str::FromStr;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::prediction::Prediction;
use crate::scheme::LabelScheme;

/// Counts indexed `[gold][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    cells: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            cells: vec![vec![0; k]; k],
        }
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::zeros(k);
        for (gold, pred) in pairs {
            m.cells[gold][pred] += 1;
        }
        m
    }

    pub fn num_classes(&self) -> usize {
        self.cells.len()
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.cells[gold][pred]
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: usize) -> usize {
        self.cells[gold].iter().sum()
    }

    pub fn col_sum(&self, pred: usize) -> usize {
        self.cells.iter().map(|r| r[pred]).sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.num_classes()).map(|i| self.cells[i][i]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total())
    }

    pub fn transpose(&self) -> Self {
        let k = self.num_classes();
        let mut t = Self::zeros(k);
        for g in 0..k {
            for p in 0..k {
                t.cells[p][g] = self.cells[g][p];
            }
        }
        t
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scheme: LabelScheme,
    pub n: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub weighted_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
    /// Metrics that hit a zero denominator, e.g. `"COMMUNITY.precision"`.
    #[serde(default)]
    pub zero_division: Vec<String>,
}

impl EvalReport {
    /// Computes every metric from a confusion matrix.
    pub fn from_confusion(scheme: &LabelScheme, confusion: ConfusionMatrix) -> Self {
        let k = scheme.len();
        let n = confusion.total();
        let mut per_class = Vec::with_capacity(k);
        let mut zero_division = Vec::new();
        let mut macro_sum = 0.0;
        let mut active = 0usize;
        let mut weighted_sum = 0.0;
        for (c, label) in scheme.labels().iter().enumerate() {
            let tp = confusion.get(c, c);
            let predicted = confusion.col_sum(c);
            let support = confusion.row_sum(c);
            if predicted == 0 {
                zero_division.push(format!("{}.precision", label.name));
            }
            if support == 0 {
                zero_division.push(format!("{}.recall", label.name));
            }
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            if support > 0 || predicted > 0 {
                macro_sum += f1;
                active += 1;
            }
            weighted_sum += f1 * support as f64;
            per_class.push(ClassMetrics {
                label: label.name.clone(),
                precision,
                recall,
                f1,
                support,
            });
        }
        EvalReport {
            scheme: scheme.clone(),
            n,
            accuracy: confusion.accuracy(),
            macro_f1: if active == 0 { 0.0 } else { macro_sum / active as f64 },
            weighted_f1: if n == 0 { 0.0 } else { weighted_sum / n as f64 },
            per_class,
            confusion,
            zero_division,
        }
    }

    /// A report carrying only a headline macro-F1, for tabulating results
    /// computed elsewhere. Counts and per-class metrics are zero.
    pub fn headline(scheme: &LabelScheme, macro_f1: f64) -> Self {
        let mut report = Self::from_confusion(scheme, ConfusionMatrix::zeros(scheme.len()));
        report.macro_f1 = macro_f1;
        report.zero_division.clear();
        report
    }
}

fn gold_pairs(predictions: &[Prediction], gold: &Dataset) -> Result<Vec<(usize, usize)>> {
    let k = gold.scheme().len();
    let mut gold_labels: HashMap<&str, usize> = HashMap::with_capacity(gold.len());
    for inst in gold.instances() {
        let label = inst.label.ok_or_else(|| Error::UnlabeledInstance(inst.id.clone()))?;
        gold_labels.insert(&inst.id, label);
    }
    let mut seen = HashSet::with_capacity(predictions.len());
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in predictions {
        let g = *gold_labels
            .get(p.instance_id.as_str())
            .ok_or_else(|| Error::Coverage(format!("prediction for unknown instance {:?}", p.instance_id)))?;
        if !seen.insert(p.instance_id.as_str()) {
            return Err(Error::Coverage(format!("duplicate prediction for {:?}", p.instance_id)));
        }
        if p.label >= k {
            return Err(Error::Label {
                row: None,
                value: p.label.to_string(),
                task: gold.scheme().task().to_string(),
            });
        }
        pairs.push((g, p.label));
    }
    if seen.len() != gold_labels.len() {
        let missing = gold
            .instances()
            .iter()
            .find(|i| !seen.contains(i.id.as_str()))
            .map(|i| i.id.clone())
            .unwrap_or_default();
        return Err(Error::Coverage(format!("no prediction for {missing:?}")));
    }
    Ok(pairs)
}

pub fn confusion_matrix(predictions: &[Prediction], gold: &Dataset) -> Result<ConfusionMatrix> {
    let pairs = gold_pairs(predictions, gold)?;
    Ok(ConfusionMatrix::from_pairs(gold.scheme().len(), pairs))
}

/// Scores predictions against a labeled split. Predictions must cover the
/// split's ids exactly.
pub fn score(predictions: &[Prediction], gold: &Dataset) -> Result<EvalReport> {
    let confusion = confusion_matrix(predictions, gold)?;
    Ok(EvalReport::from_confusion(gold.scheme(), confusion))
}

/// One row of a results table: a run's eval and test reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub name: String,
    /// Rows of the same group are printed together between rules.
    #[serde(default)]
    pub group: String,
    pub eval: Option<EvalReport>,
    pub test: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub title: String,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn new(title: impl Into<String>) -> Self {
        ResultsTable {
            title: title.into(),
            rows: Vec::new(),
        }
    }

    pub fn row(mut self, group: &str, name: &str, eval: Option<EvalReport>, test: Option<EvalReport>) -> Self {
        self.rows.push(ResultRow {
            name: name.to_string(),
            group: group.to_string(),
            eval,
            test,
        });
        self
    }

    /// Index of the row with the highest test macro-F1, or eval macro-F1 when
    /// no row has a test report. Ties keep the earliest row.
    pub fn best(&self) -> Option<usize> {
        let use_test = self.rows.iter().any(|r| r.test.is_some());
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in self.rows.iter().enumerate() {
            let report = if use_test { &row.test } else { &row.eval };
            if let Some(f1) = report.as_ref().map(|r| r.macro_f1) {
                if best.is_none_or(|(_, b)| f1 > b) {
                    best = Some((i, f1));
                }
            }
        }
        best.map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    TextTable,
    Json,
    Plot,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "text_table" | "text" | "table" => Ok(ReportFormat::TextTable),
            "json" => Ok(ReportFormat::Json),
            "plot" | "png" => Ok(ReportFormat::Plot),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Text(String),
    Json(String),
    /// PNG heatmaps named `<row>-<eval|test>.png`.
    Images(Vec<(String, Vec<u8>)>),
}

pub fn render_report(table: &ResultsTable, format: ReportFormat) -> Result<Artifact> {
    if table.rows.is_empty() {
        return Err(Error::Precondition("no reports to render".into()));
    }
    match format {
        ReportFormat::TextTable => Ok(Artifact::Text(render_text(table))),
        ReportFormat::Json => Ok(Artifact::Json(serde_json::to_string_pretty(table)?)),
        ReportFormat::Plot => render_plots(table).map(Artifact::Images),
    }
}

pub fn parse_json_report(json: &str) -> Result<ResultsTable> {
    Ok(serde_json::from_str(json)?)
}

fn render_text(table: &ResultsTable) -> String {
    let best = table.best();
    let use_test = table.rows.iter().any(|r| r.test.is_some());
    let name_w = table.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5) + 2;
    let col_w = 10;
    let width = name_w + 2 * col_w;
    let rule = "-".repeat(width);
    let cell = |report: &Option<EvalReport>, bold: bool| match report {
        Some(r) if bold => format!("**{:.2}**", r.macro_f1),
        Some(r) => format!("{:.2}", r.macro_f1),
        None => "--".to_string(),
    };

    let mut out = String::new();
    let _ = writeln!(out, "{}", table.title);
    let _ = writeln!(out, "{rule}");
    let _ = writeln!(out, "{:<name_w$}{:>col_w$}{:>col_w$}", "Model", "Eval F1", "Test F1");
    let _ = writeln!(out, "{rule}");
    let mut group: Option<&str> = None;
    for (i, row) in table.rows.iter().enumerate() {
        if group.is_some_and(|g| g != row.group) {
            let _ = writeln!(out, "{rule}");
        }
        group = Some(&row.group);
        let is_best = best == Some(i);
        let _ = writeln!(
            out,
            "{:<name_w$}{:>col_w$}{:>col_w$}",
            row.name,
            cell(&row.eval, is_best && !use_test),
            cell(&row.test, is_best && use_test),
        );
    }
    let _ = writeln!(out, "{rule}");
    if let Some(i) = best {
        let row = &table.rows[i];
        let (split, report) = if use_test {
            ("test", &row.test)
        } else {
            ("eval", &row.eval)
        };
        if let Some(r) = report {
            let _ = writeln!(out, "best: {} ({split} macro-F1 {:.2})", row.name, r.macro_f1);
        }
    }
    out
}

const CELL: u32 = 48;
const MARGIN: u32 = 8;

// 3x5 glyphs for 0-9, one row per u8 (low 3 bits, msb = left column)
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];

fn draw_number(img: &mut RgbImage, value: usize, cx: u32, cy: u32, color: Rgb<u8>) {
    let scale = 3;
    let text = value.to_string();
    let glyph_w = 4 * scale;
    let total_w = glyph_w * text.len() as u32 - scale;
    let x0 = cx.saturating_sub(total_w / 2);
    let y0 = cy.saturating_sub(5 * scale / 2);
    for (n, ch) in text.bytes().enumerate() {
        let glyph = DIGITS[(ch - b'0') as usize];
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..3u32 {
                if bits & (4 >> col) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + n as u32 * glyph_w + col * scale + dx;
                            let y = y0 + row as u32 * scale + dy;
                            if x < img.width() && y < img.height() {
                                img.put_pixel(x, y, color);
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-normalized heatmap of a confusion matrix with counts drawn in each cell.
pub fn heatmap_png(confusion: &ConfusionMatrix) -> Result<Vec<u8>> {
    let k = confusion.num_classes() as u32;
    let side = 2 * MARGIN + k.max(1) * CELL;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    for g in 0..k as usize {
        let row_sum = confusion.row_sum(g);
        for p in 0..k as usize {
            let count = confusion.get(g, p);
            let shade = ratio(count, row_sum);
            let level = (255.0 - 200.0 * shade).round() as u8;
            let color = Rgb([level, level, 255]);
            let (x0, y0) = (MARGIN + p as u32 * CELL, MARGIN + g as u32 * CELL);
            for y in y0..y0 + CELL - 1 {
                for x in x0..x0 + CELL - 1 {
                    img.put_pixel(x, y, color);
                }
            }
            let ink = if shade > 0.6 {
                Rgb([255, 255, 255])
            } else {
                Rgb([0, 0, 0])
            };
            draw_number(&mut img, count, x0 + CELL / 2, y0 + CELL / 2, ink);
        }
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(bytes)
}

fn slug(name: &str) -> String {
    let mut s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    while s.contains("--") {
        s = s.replace("--", "-");
    }
    s.trim_matches('-').to_string()
}

fn render_plots(table: &ResultsTable) -> Result<Vec<(String, Vec<u8>)>> {
    let mut images = Vec::new();
    for row in &table.rows {
        for (split, report) in [("eval", &row.eval), ("test", &row.test)] {
            if let Some(r) = report {
                if r.n > 0 {
                    images.push((format!("{}-{split}.png", slug(&row.name)), heatmap_png(&r.confusion)?));
                }
            }
        }
    }
    Ok(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, Split};
    use crate::scheme::TaskId;

    fn gold(labels: &[usize], task: TaskId) -> Dataset {
        let instances = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Instance::new(format!("g{i}"), "t", Some(l), Split::Eval))
            .collect();
        Dataset::new(LabelScheme::for_task(task), instances).unwrap()
    }

    fn preds(labels: &[usize]) -> Vec<Prediction> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &l)| Prediction::hard(format!("g{i}"), l, "m"))
            .collect()
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1, 0, 0];
        let r = score(&preds(&labels), &gold(&labels, TaskId::B)).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert_eq!(r.weighted_f1, 1.0);
        assert_eq!(r.accuracy, 1.0);
        for g in 0..3 {
            for p in 0..3 {
                if g != p {
                    assert_eq!(r.confusion.get(g, p), 0);
                }
            }
        }
    }

    #[test]
    fn perfect_with_absent_class_is_still_one() {
        let labels = [0, 2, 2];
        let r = score(&preds(&labels), &gold(&labels, TaskId::B)).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert!(r.zero_division.iter().any(|z| z == "COMMUNITY.precision"));
    }

    #[test]
    fn constant_hate_on_balanced_binary() {
        let gold_labels = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let r = score(&preds(&[1; 10]), &gold(&gold_labels, TaskId::A)).unwrap();
        let hate = &r.per_class[1];
        assert!((hate.precision - 0.5).abs() < 1e-12);
        assert_eq!(hate.recall, 1.0);
        assert!((hate.f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class[0].f1, 0.0);
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - 1.0 / 3.0).abs() < 1e-12);
        assert!(r.zero_division.contains(&"NO-HATE.precision".to_string()));
    }

    #[test]
    fn coverage_errors() {
        let g = gold(&[0, 1], TaskId::A);
        assert!(matches!(score(&preds(&[0]), &g), Err(Error::Coverage(_))));
        assert!(matches!(score(&preds(&[0, 1, 1]), &g), Err(Error::Coverage(_))));
        let dup = vec![Prediction::hard("g0", 0, "m"), Prediction::hard("g0", 1, "m")];
        assert!(matches!(score(&dup, &g), Err(Error::Coverage(_))));
        let unlabeled = Dataset::new(
            LabelScheme::for_task(TaskId::A),
            vec![Instance::new("g0", "t", None, Split::Test)],
        )
        .unwrap();
        assert!(matches!(
            score(&preds(&[0]), &unlabeled),
            Err(Error::UnlabeledInstance(_))
        ));
    }

    #[test]
    fn confusion_unit_and_empty() {
        let empty = gold(&[], TaskId::B);
        let m = confusion_matrix(&[], &empty).unwrap();
        assert_eq!(m.total(), 0);
        assert_eq!(m.num_classes(), 3);

        let one = gold(&[1], TaskId::B);
        let m = confusion_matrix(&preds(&[2]), &one).unwrap();
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn transpose_matches_swapped_stream() {
        let pairs = [(0, 1), (1, 2), (2, 2), (0, 0), (2, 1)];
        let m = ConfusionMatrix::from_pairs(3, pairs.iter().copied());
        let swapped = ConfusionMatrix::from_pairs(3, pairs.iter().map(|&(g, p)| (p, g)));
        assert_eq!(m.transpose(), swapped);
    }

    fn table_a() -> ResultsTable {
        let s = LabelScheme::for_task(TaskId::A);
        let h = |v| Some(EvalReport::headline(&s, v));
        ResultsTable::new("Results")
            .row("llm", "LLM (Zero Shot)", None, h(0.73))
            .row("enc", "BERT-base", h(0.81), h(0.75))
            .row("enc", "XLM-R", h(0.95), h(0.83))
    }

    #[test]
    fn singleton_table_marks_its_row() {
        let s = LabelScheme::for_task(TaskId::A);
        let t = ResultsTable::new("One").row("", "only", Some(EvalReport::headline(&s, 0.5)), None);
        assert_eq!(t.best(), Some(0));
        let Artifact::Text(text) = render_report(&t, ReportFormat::TextTable).unwrap() else {
            panic!()
        };
        assert!(text.lines().any(|l| l.starts_with("only") && l.contains("**0.50**")));
    }

    #[test]
    fn text_table_layout() {
        let Artifact::Text(text) = render_report(&table_a(), ReportFormat::TextTable).unwrap() else {
            panic!()
        };
        let xlmr = text.lines().find(|l| l.starts_with("XLM-R")).unwrap();
        assert!(xlmr.contains("0.95") && xlmr.contains("**0.83**"));
        let zero = text.lines().find(|l| l.starts_with("LLM")).unwrap();
        assert!(zero.contains("--"));
        assert!(text.contains("best: XLM-R (test macro-F1 0.83)"));
        // group change inserts an extra rule
        assert_eq!(text.lines().filter(|l| l.starts_with("---")).count(), 4);
    }

    #[test]
    fn json_round_trip() {
        let labels = [0, 1, 1, 0, 1];
        let r = score(&preds(&[0, 1, 0, 0, 1]), &gold(&labels, TaskId::A)).unwrap();
        let table = ResultsTable::new("t").row("", "m", Some(r.clone()), Some(r));
        let Artifact::Json(json) = render_report(&table, ReportFormat::Json).unwrap() else {
            panic!()
        };
        assert_eq!(parse_json_report(&json).unwrap(), table);
    }

    #[test]
    fn plots_are_png() {
        let labels = [0, 1, 2, 1];
        let r = score(&preds(&[0, 1, 1, 1]), &gold(&labels, TaskId::B)).unwrap();
        let table = ResultsTable::new("t").row("", "Ensemble (Aug.)", Some(r), None);
        let Artifact::Images(imgs) = render_report(&table, ReportFormat::Plot).unwrap() else {
            panic!()
        };
        assert_eq!(imgs.len(), 1);
        assert_eq!(imgs[0].0, "ensemble-aug-eval.png");
        assert_eq!(&imgs[0].1[1..4], b"PNG");
    }

    #[test]
    fn formats_parse() {
        assert_eq!("text-table".parse::<ReportFormat>().unwrap(), ReportFormat::TextTable);
        assert_eq!("json".parse::<ReportFormat>().unwrap(), ReportFormat::Json);
        assert!(matches!("pdf".parse::<ReportFormat>(), Err(Error::UnknownFormat(_))));
        assert!(render_report(&ResultsTable::new("empty"), ReportFormat::Json).is_err());
    }
}
