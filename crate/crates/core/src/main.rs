use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use erpflow::estimator::{estimate, EstimatorConfig, EstimatorMode};
use erpflow::flow::flow_view_transform;
use erpflow::geom::{ErpGrid, ViewDirection};
use erpflow::image::{distortion_map, view_transform_image, ErpImage};
use erpflow::io::{flow_to_color, read_flo, read_png, write_flo, write_png};
use erpflow::metrics::evaluate;
use erpflow::{generate_pair, Error, SceneSpec};

#[derive(Parser)]
#[command(name = "erpflow", version, about = "Dual-view optical flow tools for equirectangular panoramas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    P2o,
    O2p,
}

impl From<Direction> for ViewDirection {
    fn from(d: Direction) -> Self {
        match d {
            Direction::P2o => ViewDirection::PrimToOrtho,
            Direction::O2p => ViewDirection::OrthoToPrim,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Dual,
    PrimitiveOnly,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic frame pair and its ground-truth flow.
    Gen {
        /// TOML scene description.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides the seed in the scene file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Resample an image (`.png`) or flow (`.flo`) into the other view.
    TransformView {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate primitive-view flow between two frames.
    Estimate {
        #[arg(long)]
        frame1: PathBuf,
        #[arg(long)]
        frame2: PathBuf,
        #[arg(long, default_value_t = 12)]
        iters: usize,
        #[arg(long, default_value_t = 4)]
        radius: usize,
        #[arg(long, value_enum, default_value_t = Mode::Dual)]
        mode: Mode,
        /// Soft-argmax temperature.
        #[arg(long)]
        tau: Option<f64>,
        /// Fusion sharpness.
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long, default_value_t = 8)]
        groups: usize,
        /// Image pixels per feature pixel.
        #[arg(long, default_value_t = 4)]
        downsample: usize,
        /// Fuse in both directions.
        #[arg(long)]
        symmetric: bool,
        #[arg(long)]
        out: PathBuf,
        /// Writes the per-iteration primitive flows and the orthogonal flow.
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Compare a predicted flow with ground truth.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// JSON report destination.
        #[arg(long)]
        report: PathBuf,
    },
    /// Render the horizontal ERP stretch as an 8-bit image (`255 (1 - cos lat)`).
    DistortionMap {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a flow with the color wheel.
    Viz {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Magnitude mapped to full saturation; 99th percentile by default.
        #[arg(long)]
        max: Option<f64>,
    },
}

fn is_flo(p: &Path) -> bool {
    p.extension().is_some_and(|e| e.eq_ignore_ascii_case("flo"))
}

fn run(cli: Cli) -> erpflow::Result<()> {
    match cli.command {
        Command::Gen { spec, out_dir, seed } => {
            let mut scene = SceneSpec::from_toml(&fs::read_to_string(&spec)?)?;
            if let Some(s) = seed {
                scene.seed = s;
            }
            let pair = generate_pair::<f64>(&scene)?;
            fs::create_dir_all(&out_dir)?;
            write_png(out_dir.join("frame1.png"), &pair.frame1)?;
            write_png(out_dir.join("frame2.png"), &pair.frame2)?;
            write_flo(out_dir.join("gt.flo"), &pair.flow)?;
        }
        Command::TransformView { input, direction, out } => {
            let dir = ViewDirection::from(direction);
            if is_flo(&input) {
                let flow = read_flo::<f64>(&input)?.with_view(dir.source());
                write_flo(&out, &flow_view_transform(&flow, dir))?;
            } else {
                let img = read_png::<f64>(&input)?.with_view(dir.source());
                write_png(&out, &view_transform_image(&img, dir))?;
            }
        }
        Command::Estimate {
            frame1,
            frame2,
            iters,
            radius,
            mode,
            tau,
            beta,
            groups,
            downsample,
            symmetric,
            out,
            trace_dir,
        } => {
            let defaults = EstimatorConfig::<f64>::default();
            let cfg = EstimatorConfig {
                iterations: iters,
                radius,
                temperature: tau.unwrap_or(defaults.temperature),
                fusion_sharpness: beta.unwrap_or(defaults.fusion_sharpness),
                groups,
                downsample,
                mode: match mode {
                    Mode::Dual => EstimatorMode::Dual,
                    Mode::PrimitiveOnly => EstimatorMode::PrimitiveOnly,
                },
                symmetric_fusion: symmetric,
                ..defaults
            };
            let f1 = read_png::<f64>(&frame1)?;
            let f2 = read_png::<f64>(&frame2)?;
            let est = estimate(&f1, &f2, &cfg)?;
            write_flo(&out, &est.primitive)?;
            if let Some(dir) = trace_dir {
                fs::create_dir_all(&dir)?;
                for n in 1..=est.trace.len() {
                    let flow = est.primitive_after(n).expect("iteration within trace");
                    write_flo(dir.join(format!("primitive_iter{n:02}.flo")), &flow)?;
                }
                if let Some(o) = &est.orthogonal {
                    write_flo(dir.join("orthogonal.flo"), o)?;
                }
            }
        }
        Command::Evaluate { pred, gt, report } => {
            let pred = read_flo::<f64>(&pred)?;
            let gt = read_flo::<f64>(&gt)?;
            let r = evaluate(&pred, &gt)?;
            let json = serde_json::to_string_pretty(&r)
                .map_err(|e| Error::InvalidParameter(format!("report serialization: {e}")))?;
            fs::write(&report, json)?;
            println!("{r}");
        }
        Command::DistortionMap { width, height, out } => {
            let grid = ErpGrid::new(width, height)?;
            let map = distortion_map::<f64>(&grid);
            let data = map.data().iter().map(|f| 255.0 * (1.0 - 1.0 / f)).collect();
            write_png(&out, &ErpImage::new(grid, 1, data, map.view())?)?;
        }
        Command::Viz { flow, out, max } => {
            let flow = read_flo::<f64>(&flow)?;
            write_png(&out, &flow_to_color(&flow, max))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
