use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relu_regions::dataset::{
    build_binary_dataset_excluding, make_random_dataset_1, make_random_dataset_2, read_idx_images, read_idx_labels,
    Category, POOLED_DIM,
};
use relu_regions::experiment::{
    emit_csv, emit_svg_lines, read_csv, render_detail_csv, run_experiment, ExperimentConfig, ExperimentData, Metric,
    DATA_DIR_ENV,
};
use relu_regions::netfile::{load_dataset, load_network, save_dataset, save_network};
use relu_regions::oracle::{check_soundness, segment_pieces};
use relu_regions::trainer::{train, TrainConfig};
use relu_regions::{local_region_bound, Ball, Error, Result};

#[derive(Parser)]
#[command(name = "relu-regions", version, about = "Local linear-region bounds for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pool MNIST IDX files into cached train/test/random1/random2 datasets.
    PrepareData {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Separate IDX files for the test category; by default test points
        /// are drawn from the images not used for training.
        #[arg(long, requires = "test_labels")]
        test_images: Option<PathBuf>,
        #[arg(long, requires = "test_images")]
        test_labels: Option<PathBuf>,
        #[arg(long, default_value = "0,4", value_parser = parse_digits)]
        digits: (u8, u8),
        #[arg(long, default_value_t = 500)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (default: $RELU_REGIONS_DATA_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the classifier and write per-epoch checkpoints.
    Train {
        /// JSON TrainConfig; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Prepared training set (default: $RELU_REGIONS_DATA_DIR/train.json).
        #[arg(long, conflicts_with = "synthetic")]
        data: Option<PathBuf>,
        /// Train on the synthetic blob fixture instead.
        #[arg(long)]
        synthetic: bool,
    },
    /// Bound the regions around each point of a point file.
    Bound {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        point_file: PathBuf,
        #[arg(long)]
        radius: f64,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check the bound certificates against uniform samples.
    OracleCheck {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        point_file: PathBuf,
        #[arg(long)]
        radius: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact activation-pattern pieces along a segment.
    Segment {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        from: Coords,
        #[arg(long, value_parser = parse_vector, allow_hyphen_values = true)]
        to: Coords,
    },
    /// Run the training-trajectory experiment.
    Experiment {
        /// JSON ExperimentConfig; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        /// Also write per-point C values to detail.csv.
        #[arg(long)]
        detail: bool,
    },
    /// Plot a records CSV as SVG.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "mean_C")]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_digits(s: &str) -> std::result::Result<(u8, u8), String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => {
            let a: u8 = a.parse().map_err(|_| format!("bad digit {a:?}"))?;
            let b: u8 = b.parse().map_err(|_| format!("bad digit {b:?}"))?;
            if a > 9 || b > 9 || a == b {
                return Err("digits must be two distinct values in 0..=9".into());
            }
            Ok((a, b))
        }
        _ => Err("expected two comma-separated digits, e.g. 0,4".into()),
    }
}

/// One comma-separated vector argument. The alias keeps clap from treating
/// the field as a repeated option.
type Coords = Vec<f64>;

fn parse_vector(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect()
}

/// One point per line, coordinates separated by commas or whitespace.
/// Blank lines and lines starting with `#` are skipped. A prepared dataset
/// file (`.json`) is accepted as well.
fn read_points(path: &Path) -> Result<Vec<Vec<f64>>> {
    if path.extension().is_some_and(|e| e == "json") {
        return Ok(load_dataset(path)?.points);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    let mut points = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim();
        if !trimmed.is_empty() && !trimmed.starts_with('#') {
            points.push(parse_vector(trimmed).map_err(|m| Error::Parse {
                context: path.display().to_string(),
                offset,
                message: m,
            })?);
        }
        offset += line.len();
    }
    Ok(points)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io { path: path.into(), source: e })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        offset: 0,
        message: e.to_string(),
    })
}

fn data_dir(explicit: Option<PathBuf>) -> Result<PathBuf> {
    explicit.or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)).ok_or_else(|| Error::MissingData {
        path: PathBuf::from(format!("${DATA_DIR_ENV}")),
        hint: "pass --out/--data or export the variable".into(),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PrepareData { images, labels, test_images, test_labels, digits, per_class, seed, out } => {
            let out = data_dir(out)?;
            create_dir(&out)?;
            let imgs = read_idx_images(&images)?;
            let lbls = read_idx_labels(&labels)?;
            let (train_set, used) = build_binary_dataset_excluding(&imgs, &lbls, digits, per_class, seed, &[])?;
            let test_set = match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let (ti, tl) = (read_idx_images(&ti)?, read_idx_labels(&tl)?);
                    build_binary_dataset_excluding(&ti, &tl, digits, per_class, seed.wrapping_add(1), &[])?.0
                }
                _ => build_binary_dataset_excluding(&imgs, &lbls, digits, per_class, seed.wrapping_add(1), &used)?.0,
            }
            .with_category(Category::Test);
            let n = train_set.len();
            let r1 = make_random_dataset_1(&train_set, n, seed.wrapping_add(2))?;
            let r2 = make_random_dataset_2(n, POOLED_DIM, seed.wrapping_add(3))?;
            for set in [&train_set, &test_set, &r1, &r2] {
                let path = out.join(format!("{}.json", set.category));
                save_dataset(set, &path)?;
                println!("wrote {} ({} points)", path.display(), set.len());
            }
        }
        Command::Train { config, out, data, synthetic } => {
            let cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            let set = if synthetic {
                relu_regions::dataset::synthetic_blobs(1000, cfg.widths[0], 0.5, cfg.seed)?
            } else {
                let path = match data {
                    Some(p) => p,
                    None => data_dir(None)?.join("train.json"),
                };
                if !path.exists() {
                    return Err(Error::MissingData { path, hint: "run prepare-data or pass --synthetic".into() });
                }
                load_dataset(&path)?
            };
            create_dir(&out)?;
            for ckpt in train(&set, &cfg)? {
                let path = out.join(ckpt.file_name(cfg.seed));
                save_network(&ckpt.network, &path)?;
                println!(
                    "epoch {:>3} loss {:.6} accuracy {:.4} -> {}",
                    ckpt.epoch,
                    ckpt.train_loss,
                    ckpt.train_accuracy,
                    path.display()
                );
            }
        }
        Command::Bound { net, point_file, radius, csv } => {
            let net = load_network(&net)?;
            let mut text = String::from("point_id,radius,C,s_counts\n");
            for (i, p) in read_points(&point_file)?.into_iter().enumerate() {
                let report = local_region_bound(&net, &Ball::new(p, radius)?)?;
                text.push_str(&format!("{i},{}\n", report.csv_fields()));
            }
            match csv {
                Some(path) => write_text(&path, &text)?,
                None => print!("{text}"),
            }
        }
        Command::OracleCheck { net, point_file, radius, samples, seed } => {
            let net = load_network(&net)?;
            let mut total = 0;
            for (i, p) in read_points(&point_file)?.into_iter().enumerate() {
                let report = check_soundness(&net, &Ball::new(p, radius)?, samples, seed)?;
                print!("point {i}: {report}");
                if !report.within_bound() {
                    println!("point {i}: {} sampled patterns exceed 2^{}", report.distinct_patterns, report.c);
                    total += 1;
                }
                total += report.violations.len();
            }
            println!("{total} violations");
            if total > 0 {
                return Err(Error::Soundness(format!("{total} violations")));
            }
        }
        Command::Segment { net, from, to } => {
            let net = load_network(&net)?;
            let seg = segment_pieces(&net, &from, &to)?;
            println!("pieces {}", seg.piece_count());
            let bps: Vec<String> = seg.breakpoints.iter().map(f64::to_string).collect();
            println!("breakpoints {}", bps.join(","));
            for (i, p) in seg.pieces.iter().enumerate() {
                println!("piece {i} pattern {p}");
            }
        }
        Command::Experiment { config, out_dir, synthetic, detail } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_json(
                    &std::fs::read_to_string(&p).map_err(|e| Error::Io { path: p.clone(), source: e })?,
                )?,
                None => ExperimentConfig::default(),
            };
            if let Some(d) = out_dir {
                cfg.output_dir = d;
            }
            cfg.validate()?;
            let data = ExperimentData::resolve(&cfg, synthetic)?;
            let out = run_experiment(&cfg, &data)?;
            create_dir(&cfg.output_dir)?;
            let csv = cfg.output_dir.join("records.csv");
            emit_csv(&out.records, &csv)?;
            emit_svg_lines(&out.records, Metric::MeanC, cfg.output_dir.join("mean_C.svg"))?;
            emit_svg_lines(&out.records, Metric::CountC0, cfg.output_dir.join("count_C0.svg"))?;
            if detail {
                write_text(&cfg.output_dir.join("detail.csv"), &render_detail_csv(&out.details))?;
            }
            println!("{} records -> {}", out.records.len(), csv.display());
        }
        Command::Plot { csv, metric, out } => {
            let metric: Metric = metric.parse()?;
            emit_svg_lines(&read_csv(&csv)?, metric, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_or_parse() { 2 } else { 1 })
        }
    }
}
