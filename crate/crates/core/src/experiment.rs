//! Training-trajectory experiment: train several runs, and at every
//! checkpoint bound the local region count around every point of every
//! category. Results are per-run records; aggregation happens at plot time.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{local_region_bound, Ball};
use crate::dataset::{make_random_dataset_1, make_random_dataset_2, synthetic_blobs, Category, LabeledSet};
use crate::error::{Error, Result};
use crate::netfile::load_dataset;
use crate::oracle::check_soundness;
use crate::trainer::{train, TrainConfig};

/// Environment variable naming the default prepared-dataset directory.
pub const DATA_DIR_ENV: &str = "RELU_REGIONS_DATA_DIR";

pub const CSV_HEADER: &str = "run_id,epoch,category,mean_C,count_C0,n_points";
pub const DETAIL_HEADER: &str = "run_id,epoch,category,point_id,radius,C,s_counts";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train_config: TrainConfig,
    pub radius: f64,
    pub repeats: usize,
    pub categories: Vec<Category>,
    pub points_per_category: usize,
    /// Oracle samples for a soundness spot check on the first point of
    /// each category at each checkpoint; 0 disables.
    pub sample_checks: usize,
    pub seed_base: u64,
    pub output_dir: PathBuf,
    /// Directory holding `train.json`, `test.json`, `random1.json`,
    /// `random2.json`; falls back to `$RELU_REGIONS_DATA_DIR`.
    pub data_dir: Option<PathBuf>,
    /// Cluster separation of the synthetic fallback data.
    pub synthetic_separation: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_config: TrainConfig::default(),
            radius: 0.4,
            repeats: 10,
            categories: Category::EXPERIMENT.to_vec(),
            points_per_category: 1000,
            sample_checks: 0,
            seed_base: 0,
            output_dir: PathBuf::from("results"),
            data_dir: None,
            synthetic_separation: 0.5,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.train_config.validate()?;
        if self.repeats == 0 {
            return Err(Error::InvalidArgument("repeats must be at least 1".into()));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be non-negative, got {}", self.radius)));
        }
        if self.categories.is_empty() || self.categories.contains(&Category::Synthetic) {
            return Err(Error::InvalidArgument(
                "categories must be a non-empty subset of train, test, random1, random2".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("experiment config", 0, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub run_id: usize,
    pub epoch: usize,
    pub category: Category,
    #[serde(rename = "mean_C")]
    pub mean_c: f64,
    #[serde(rename = "count_C0")]
    pub count_c0: usize,
    pub n_points: usize,
}

/// Per-point C value behind a record.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDetail {
    pub run_id: usize,
    pub epoch: usize,
    pub category: Category,
    pub point_id: usize,
    pub radius: f64,
    pub c: usize,
    pub s_counts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<ExperimentRecord>,
    pub details: Vec<PointDetail>,
}

/// Query points per category plus the labeled set used for training.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: LabeledSet,
    pub sets: BTreeMap<Category, LabeledSet>,
}

impl ExperimentData {
    /// File-free data: two Gaussian blob draws for train/test and the two
    /// uniform baselines.
    pub fn synthetic(config: &ExperimentConfig) -> Result<Self> {
        let n = config.points_per_category;
        let dim = config.train_config.widths[0];
        let seed = config.seed_base;
        let sep = config.synthetic_separation;
        let train = synthetic_blobs(n, dim, sep, seed)?.with_category(Category::Train);
        let test = synthetic_blobs(n, dim, sep, seed.wrapping_add(1))?.with_category(Category::Test);
        let random1 = make_random_dataset_1(&train, n, seed.wrapping_add(2))?;
        let random2 = make_random_dataset_2(n, dim, seed.wrapping_add(3))?;
        Ok(Self::from_sets(train, test, random1, random2))
    }

    /// Prepared datasets from `dir` (as written by `prepare-data`).
    pub fn from_dir(dir: &Path, points_per_category: usize) -> Result<Self> {
        let load = |c: Category| -> Result<LabeledSet> {
            let path = dir.join(format!("{c}.json"));
            if !path.exists() {
                return Err(Error::MissingData {
                    path,
                    hint: "run `relu-regions prepare-data` or pass --synthetic".into(),
                });
            }
            Ok(load_dataset(&path)?.truncated(points_per_category).with_category(c))
        };
        Ok(Self::from_sets(
            load(Category::Train)?,
            load(Category::Test)?,
            load(Category::Random1)?,
            load(Category::Random2)?,
        ))
    }

    fn from_sets(train: LabeledSet, test: LabeledSet, random1: LabeledSet, random2: LabeledSet) -> Self {
        let sets = [train.clone(), test, random1, random2].into_iter().map(|s| (s.category, s)).collect();
        ExperimentData { train, sets }
    }

    /// Synthetic when asked, otherwise the configured or environment
    /// data directory.
    pub fn resolve(config: &ExperimentConfig, synthetic: bool) -> Result<Self> {
        if synthetic {
            return Self::synthetic(config);
        }
        let dir =
            config.data_dir.clone().or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)).ok_or_else(|| {
                Error::MissingData {
                    path: PathBuf::from(format!("${DATA_DIR_ENV}")),
                    hint: "set data_dir in the config, export the variable, or pass --synthetic".into(),
                }
            })?;
        Self::from_dir(&dir, config.points_per_category)
    }
}

pub fn run_experiment(config: &ExperimentConfig, data: &ExperimentData) -> Result<ExperimentOutput> {
    config.validate()?;
    let mut records = Vec::new();
    let mut details = Vec::new();
    for run in 0..config.repeats {
        let train_config =
            TrainConfig { seed: config.seed_base.wrapping_add(run as u64), ..config.train_config.clone() };
        let checkpoints = train(&data.train, &train_config)?;
        for ckpt in &checkpoints {
            for &category in &config.categories {
                let set = data
                    .sets
                    .get(&category)
                    .ok_or_else(|| Error::InvalidArgument(format!("no data for category {category}")))?;
                let points = &set.points[..set.len().min(config.points_per_category)];
                let reports = points
                    .par_iter()
                    .map(|p| local_region_bound(&ckpt.network, &Ball::new(p.clone(), config.radius)?))
                    .collect::<Result<Vec<_>>>()?;
                if config.sample_checks > 0 {
                    if let Some(p) = points.first() {
                        let ball = Ball::new(p.clone(), config.radius)?;
                        let check = check_soundness(&ckpt.network, &ball, config.sample_checks, run as u64)?;
                        if !check.is_sound() || !check.within_bound() {
                            return Err(Error::Soundness(format!(
                                "run {run} epoch {} category {category}: {check}",
                                ckpt.epoch
                            )));
                        }
                    }
                }
                let n = reports.len();
                let total: usize = reports.iter().map(|r| r.c).sum();
                records.push(ExperimentRecord {
                    run_id: run,
                    epoch: ckpt.epoch,
                    category,
                    mean_c: if n == 0 { 0.0 } else { total as f64 / n as f64 },
                    count_c0: reports.iter().filter(|r| r.c == 0).count(),
                    n_points: n,
                });
                details.extend(reports.into_iter().enumerate().map(|(point_id, r)| PointDetail {
                    run_id: run,
                    epoch: ckpt.epoch,
                    category,
                    point_id,
                    radius: config.radius,
                    c: r.c,
                    s_counts: r.per_layer_s_counts,
                }));
            }
        }
    }
    sort_records(&mut records);
    Ok(ExperimentOutput { records, details })
}

pub fn sort_records(records: &mut [ExperimentRecord]) {
    records.sort_by_key(|r| (r.run_id, r.epoch, r.category));
}

pub fn render_csv(records: &[ExperimentRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        writeln!(out, "{},{},{},{:.6},{},{}", r.run_id, r.epoch, r.category, r.mean_c, r.count_c0, r.n_points)
            .expect("writing to a String");
    }
    out
}

pub fn emit_csv(records: &[ExperimentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, render_csv(records)).map_err(|e| Error::io(path, e))
}

pub fn render_detail_csv(details: &[PointDetail]) -> String {
    let mut out = String::from(DETAIL_HEADER);
    out.push('\n');
    for d in details {
        let counts: Vec<String> = d.s_counts.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            d.run_id,
            d.epoch,
            d.category,
            d.point_id,
            d.radius,
            d.c,
            counts.join("|")
        )
        .expect("writing to a String");
    }
    out
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::parse("records csv", 0, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != CSV_HEADER {
        return Err(Error::parse("records csv", 0, format!("unexpected header {header:?}")));
    }
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| {
                let offset = e.position().map_or(0, |p| p.byte() as usize);
                Error::parse("records csv", offset, e.to_string())
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanC,
    CountC0,
}

impl Metric {
    pub fn of(self, r: &ExperimentRecord) -> f64 {
        match self {
            Metric::MeanC => r.mean_c,
            Metric::CountC0 => r.count_c0 as f64,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Metric::MeanC => "mean_C",
            Metric::CountC0 => "count_C0",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_C" => Ok(Metric::MeanC),
            "count_C0" => Ok(Metric::CountC0),
            _ => Err(Error::InvalidArgument(format!("unknown metric {s:?} (mean_C or count_C0)"))),
        }
    }
}

/// `run_id → [(epoch, value)]` for one category, epochs ascending.
pub fn per_run_series(
    records: &[ExperimentRecord],
    category: Category,
    metric: Metric,
) -> BTreeMap<usize, Vec<(usize, f64)>> {
    let mut out: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.category == category) {
        out.entry(r.run_id).or_default().push((r.epoch, metric.of(r)));
    }
    out.values_mut().for_each(|s| s.sort_by_key(|p| p.0));
    out
}

/// `(epoch, mean, min, max)` of a metric across runs.
pub type EpochSummary = (usize, f64, f64, f64);

/// Across-run mean, min and max of the metric per epoch.
pub fn across_run_summary(
    records: &[ExperimentRecord],
    category: Category,
    metric: Metric,
) -> Vec<EpochSummary> {
    let mut by_epoch: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.category == category) {
        by_epoch.entry(r.epoch).or_default().push(metric.of(r));
    }
    by_epoch
        .into_iter()
        .map(|(e, v)| {
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (e, mean, lo, hi)
        })
        .collect()
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 50.0;

fn category_color(c: Category) -> &'static str {
    match c {
        Category::Train => "#1f77b4",
        Category::Test => "#ff7f0e",
        Category::Random1 => "#2ca02c",
        Category::Random2 => "#d62728",
        Category::Synthetic => "#9467bd",
    }
}

/// Line chart of the across-run mean per category, with a shaded min/max
/// envelope across runs.
pub fn render_svg(records: &[ExperimentRecord], metric: Metric) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to plot".into()));
    }
    let mut categories: Vec<Category> = records.iter().map(|r| r.category).collect();
    categories.sort();
    categories.dedup();
    let summaries: Vec<(Category, Vec<EpochSummary>)> =
        categories.iter().map(|&c| (c, across_run_summary(records, c, metric))).collect();

    let (e_min, e_max) = records.iter().fold((usize::MAX, 0), |(lo, hi), r| (lo.min(r.epoch), hi.max(r.epoch)));
    let y_max = summaries.iter().flat_map(|(_, s)| s.iter().map(|p| p.3)).fold(0.0f64, f64::max);
    let y_top = if y_max > 0.0 { y_max * 1.05 } else { 1.0 };
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let sx = |e: usize| {
        if e_max == e_min {
            MARGIN_L + plot_w / 2.0
        } else {
            MARGIN_L + plot_w * (e - e_min) as f64 / (e_max - e_min) as f64
        }
    };
    let sy = |v: f64| MARGIN_T + plot_h * (1.0 - v / y_top);

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#);
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(w, r#"<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="white"/>"#);
    // axes
    let (x0, y0, x1, y1) = (MARGIN_L, MARGIN_T + plot_h, MARGIN_L + plot_w, MARGIN_T);
    let _ = writeln!(w, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(w, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let mut epochs: Vec<usize> = records.iter().map(|r| r.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    for &e in &epochs {
        let x = sx(e);
        let _ = writeln!(w, r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{e}</text>"#, y0 + 16.0);
    }
    for i in 0..=4 {
        let v = y_top * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(w, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{v:.2}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">epoch</text>"#,
        MARGIN_L + plot_w / 2.0,
        SVG_H - 10.0
    );
    let _ = writeln!(
        w,
        r#"<text x="16" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        metric.label()
    );

    for (i, (cat, summary)) in summaries.iter().enumerate() {
        let color = category_color(*cat);
        let _ = writeln!(w, r#"<g class="series" data-category="{cat}">"#);
        if summary.len() > 1 {
            let upper = summary.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.3)));
            let lower = summary.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.2)));
            let band: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(
                w,
                r#"<polygon class="envelope" points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                band.join(" ")
            );
            let pts: Vec<String> = summary.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
            let _ =
                writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        } else if let Some(p) = summary.first() {
            let _ = writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(p.0), sy(p.1));
        }
        let _ = writeln!(w, "</g>");
        let ly = MARGIN_T + 10.0 + 18.0 * i as f64;
        let lx = SVG_W - MARGIN_R + 15.0;
        let _ = writeln!(
            w,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(w, r#"<text x="{}" y="{}" font-size="12">{cat}</text>"#, lx + 26.0, ly + 4.0);
    }
    let _ = writeln!(w, "</svg>");
    Ok(s)
}

pub fn emit_svg_lines(records: &[ExperimentRecord], metric: Metric, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let svg = render_svg(records, metric)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
