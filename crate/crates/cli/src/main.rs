use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use nalgebra::Matrix3;

use so3fm::ssl::io::{load_model, save_model, RunManifest};
use so3fm::ssl::train::{make_splits, metrics_csv, run};
use so3fm::ssl::{evaluate, TrainConfig};
use so3fm::verify::{run_suite, VerifyOptions};
use so3fm::viz::{render_all_axes, DEFAULT_HEIGHT, DEFAULT_RING_SAMPLES, DEFAULT_WIDTH};
use so3fm::FisherParams;

#[derive(Parser)]
#[command(name = "so3fm", version, about = "Matrix Fisher distributions on SO(3) and teacher-student rotation regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check analytic quantities against Monte-Carlo oracles and identities.
    Verify {
        /// 1e5 oracle samples instead of 1e6.
        #[arg(long)]
        fast: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pretrain, then run the teacher-student stage.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Evaluate a saved model on the test split defined by a config.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Render the three per-axis marginals of a matrix Fisher distribution.
    Viz {
        /// Nine comma-separated entries, row-major.
        #[arg(long = "A", value_name = "a11,...,a33", allow_hyphen_values = true)]
        a: String,
        #[arg(long)]
        out: String,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: usize,
        #[arg(long, default_value_t = DEFAULT_HEIGHT)]
        height: usize,
        #[arg(long, default_value_t = DEFAULT_RING_SAMPLES)]
        ring: usize,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SO3FM_THREADS") {
        let n: usize = v.trim().parse().with_context(|| format!("SO3FM_THREADS={v:?}"))?;
        if n == 0 {
            bail!("SO3FM_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    TrainConfig::from_json(&text).with_context(|| format!("config {}", path.display()))
}

fn parse_matrix(text: &str) -> Result<Matrix3<f64>> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("entry {t:?}")))
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        bail!("--A needs 9 entries, got {}", vals.len());
    }
    Ok(Matrix3::from_row_slice(&vals))
}

fn verify(fast: bool, seed: u64) -> Result<bool> {
    let opts = if fast { VerifyOptions::fast(seed) } else { VerifyOptions::full(seed) };
    let report = run_suite(opts)?;
    print!("{}", report.table());
    Ok(report.all_pass())
}

fn train(config: &Path, out: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let result = run(&cfg)?;
    fs::create_dir_all(out)?;
    let csv = metrics_csv(&result.snapshots);
    fs::write(out.join("metrics.csv"), &csv)?;
    let model = match cfg.eval_model {
        so3fm::ssl::EvalModel::Teacher => &result.models.teacher,
        so3fm::ssl::EvalModel::Student => &result.models.student,
    };
    let manifest = save_model(model, &out.join("model"))?;
    let run_manifest = RunManifest::new(&cfg, result.tau, result.pretrain.losses.len(), &manifest, &csv);
    fs::write(out.join("run_manifest.json"), serde_json::to_string_pretty(&run_manifest)?)?;
    if cfg.record_gate_log {
        let mut log = String::from("step,sample,entropy,tau,passed,grad_norm\n");
        for g in &result.gate_log {
            log.push_str(&format!("{},{},{},{},{},{}\n", g.step, g.sample, g.entropy, g.tau, g.passed, g.grad_norm));
        }
        fs::write(out.join("gate_log.csv"), log)?;
    }
    println!("{}", serde_json::to_string_pretty(&result.report)?);
    Ok(())
}

fn eval(model: &Path, config: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let model = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let splits = make_splits(&cfg)?;
    let report = evaluate(&model, &splits.test, cfg.quadrature()?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn viz(a: &str, out: &str, width: usize, height: usize, ring: usize) -> Result<()> {
    let f = FisherParams::new(parse_matrix(a)?)?;
    let images = render_all_axes(&f, width, height, ring)?;
    for (img, name) in images.iter().zip(["x", "y", "z"]) {
        let path = format!("{out}_{name}.ppm");
        if let Some(dir) = Path::new(&path).parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, img.to_ppm()).with_context(|| format!("writing {path}"))?;
        println!("{path}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|_| match &cli.command {
        Command::Verify { fast, seed } => verify(*fast, *seed),
        Command::Train { config, out } => train(config, out).map(|_| true),
        Command::Eval { model, config } => eval(model, config).map(|_| true),
        Command::Viz { a, out, width, height, ring } => viz(a, out, *width, *height, *ring).map(|_| true),
    });
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
