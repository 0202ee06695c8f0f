//! `adapool` command-line harness.
//!
//! Exit codes: 0 ok, 1 usage, 2 data error, 3 check failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adapool::gradcheck::finite_difference_report;
use adapool::quality::POOL_SCALE;
use adapool::{
    ada_unpool, pool_ada, ActivationMap, BetaMap, GradMode, InflateMode, PoolGeometry, PoolKind,
    UnpoolInput,
};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use adapool_cli::bench::{self, BenchConfig};
use adapool_cli::error::{CliError, CliResult};
use adapool_cli::evalrun::{self, EvalConfig};
use adapool_cli::fit::{fit_beta_roundtrip, fit_beta_to_target};
use adapool_cli::imageio::{load_image, save_image};
use adapool_cli::maskfile::{read_mask_file, write_mask_file, MaskFile};
use adapool_cli::methods::Method;

#[derive(Parser)]
#[command(
    name = "adapool",
    version,
    about = "Exponential-weighting pooling toolkit: pool/unpool images, score round trips, check gradients, fit beta, benchmark latency"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Downsample an image; optionally emit a mask file for `unpool`.
    Pool {
        /// Input image (.png or .ppm)
        input: PathBuf,
        /// Output image path
        output: PathBuf,
        /// Pooling method: avg, max, sum, powavg:<rho>, stoch, s3,
        /// idw[:<distance>], em, edscw, ada[:<beta>|:learned]
        #[arg(long, default_value = "ada:0.5")]
        method: String,
        /// Kernel size (stride equals kernel)
        #[arg(long, default_value_t = 2)]
        kernel: usize,
        /// Seed for stochastic methods
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the weight masks and beta next to the pooled map
        /// (em/edscw/ada methods only)
        #[arg(long)]
        mask_out: Option<PathBuf>,
        /// Beta for ada: a float in [0, 1] or `learned`
        #[arg(long)]
        beta: Option<String>,
        /// Distance for idw: l1, l2, l2lit, huber:<d>, chebyshev, gower
        #[arg(long)]
        distance: Option<String>,
    },
    /// Restore an image to its original resolution from a mask file.
    Unpool {
        /// Output image path
        output: PathBuf,
        /// Mask file produced by `pool --mask-out`
        #[arg(long)]
        mask: PathBuf,
        /// Replace the mask file's pooled map with this image
        #[arg(long)]
        pooled: Option<PathBuf>,
        /// Beta override when the mask file carries none
        #[arg(long)]
        beta: Option<f64>,
        /// Apply a second softmax to the stored eDSC weights
        /// (literal-formula mode)
        #[arg(long)]
        double_softmax: bool,
    },
    /// Score round-trip similarity of methods over an image directory.
    Eval {
        /// Directory of .png/.ppm images
        image_dir: PathBuf,
        /// Comma-separated method list (avg is always added)
        #[arg(long, default_value = "avg,max,em,edscw,ada:0.5")]
        methods: String,
        /// Comma-separated kernel sizes
        #[arg(long, default_value = "2,3,5")]
        kernels: String,
        /// Report path
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Inflation used for the round trip: nearest or bilinear
        #[arg(long, default_value = "nearest")]
        inflate: String,
    },
    /// Compare analytic gradients against central finite differences.
    Gradcheck {
        /// em, edscw or ada
        #[arg(long)]
        method: String,
        /// Map shape CxHxW, at most 4x16x16
        #[arg(long, default_value = "1x8x8")]
        shape: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// paper (informational) or exact (pass/fail at 1e-5)
        #[arg(long, default_value = "exact")]
        grad_mode: String,
    },
    /// Fit the beta map so pool_ada(input) matches a pooled target.
    Fitbeta {
        /// Input image
        input: PathBuf,
        /// Target image at the pooled resolution
        target: PathBuf,
        #[arg(long, default_value_t = 2)]
        kernel: usize,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Loss-trace CSV (step, loss, mean_beta)
        #[arg(long)]
        csv: PathBuf,
        /// Final beta map as a CSV grid
        #[arg(long)]
        beta_out: Option<PathBuf>,
    },
    /// Measure median forward/backward latency per method.
    Bench {
        /// Input shape CxHxW (or CxTxHxW)
        #[arg(long, default_value = "3x512x512")]
        shape: String,
        #[arg(long, default_value = "avg,max,em,edscw,ada:0.5")]
        methods: String,
        /// Timed repeats after 3 warm-ups (minimum 10)
        #[arg(long, default_value_t = 50)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        kernel: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Pool { input, output, method, kernel, seed, mask_out, beta, distance } => {
            cmd_pool(&input, &output, &method, kernel, seed, mask_out.as_deref(), beta, distance)
        }
        Command::Unpool { output, mask, pooled, beta, double_softmax } => {
            cmd_unpool(&output, &mask, pooled.as_deref(), beta, double_softmax)
        }
        Command::Eval { image_dir, methods, kernels, csv, seed, inflate } => {
            cmd_eval(&image_dir, &methods, &kernels, &csv, seed, &inflate)
        }
        Command::Gradcheck { method, shape, seed, grad_mode } => {
            cmd_gradcheck(&method, &shape, seed, &grad_mode)
        }
        Command::Fitbeta { input, target, kernel, steps, lr, csv, beta_out } => {
            cmd_fitbeta(&input, &target, kernel, steps, lr, &csv, beta_out.as_deref())
        }
        Command::Bench { shape, methods, repeats, kernel, seed, csv } => {
            cmd_bench(&shape, &methods, repeats, kernel, seed, csv.as_deref())
        }
    }
}

/// Merges `--beta` / `--distance` into a bare method token.
fn compose_method(method: &str, beta: Option<String>, distance: Option<String>) -> String {
    match (method, beta, distance) {
        ("ada", Some(b), _) => format!("ada:{b}"),
        ("idw", _, Some(d)) => format!("idw:{d}"),
        (m, _, _) => m.to_string(),
    }
}

fn check_kernel(kernel: usize) -> CliResult<()> {
    if kernel == 0 {
        return Err(CliError::Usage("kernel must be at least 1".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_pool(
    input: &Path,
    output: &Path,
    method: &str,
    kernel: usize,
    seed: u64,
    mask_out: Option<&Path>,
    beta: Option<String>,
    distance: Option<String>,
) -> CliResult<()> {
    check_kernel(kernel)?;
    let method = Method::parse(&compose_method(method, beta, distance), seed)?;
    let image = load_image(input)?;
    let geom = PoolGeometry::uniform(image.spatial().len(), kernel)
        .map_err(|e| CliError::Data(e.to_string()))?;
    // Operators consume unit-scale activations; images and pooled maps
    // stay in [0, 255] at the file boundary.
    let unit = image.scaled(1.0 / POOL_SCALE);

    match mask_out {
        None => {
            let prepared = method.prepare(&image, &geom)?;
            let saved = method.apply_prepared(&unit, &geom, &prepared)?;
            save_image(output, &saved.output.scaled(POOL_SCALE))?;
            println!(
                "pooled {} {}x{:?} -> {} {}x{:?} method={}",
                input.display(),
                image.channels(),
                image.spatial(),
                output.display(),
                saved.output.channels(),
                saved.output.spatial(),
                method.name()
            );
        }
        Some(mask_path) => {
            // The mask file carries both weight sets, so the forward
            // runs through the ada path; beta 0/1 reproduces em/edscw
            // bitwise.
            let out_extents = geom
                .output_extents(image.spatial())
                .map_err(|e| CliError::Data(e.to_string()))?;
            let beta_map = match &method {
                Method::Core(adapool::PoolOperator::Em) => BetaMap::constant(out_extents, 0.0),
                Method::Core(adapool::PoolOperator::Edscw) => BetaMap::constant(out_extents, 1.0),
                Method::Core(adapool::PoolOperator::Ada { beta }) => {
                    BetaMap::constant(out_extents, *beta)
                }
                Method::AdaLearned => Ok(fit_beta_roundtrip(
                    &image,
                    &geom,
                    adapool_cli::methods::LEARNED_BETA_STEPS,
                    adapool_cli::methods::LEARNED_BETA_LR,
                )?),
                other => {
                    return Err(CliError::Usage(format!(
                        "--mask-out needs an em, edscw or ada method, got {}",
                        other.name()
                    )))
                }
            }
            .map_err(|e| CliError::Data(e.to_string()))?;
            let saved =
                pool_ada(&unit, &geom, &beta_map).map_err(|e| CliError::Data(e.to_string()))?;
            let pooled = saved.output.scaled(POOL_SCALE);
            save_image(output, &pooled)?;
            write_mask_file(
                mask_path,
                &MaskFile {
                    target_spatial: image.spatial().to_vec(),
                    pooled,
                    masks: saved.masks.expect("ada saves masks"),
                    beta: Some(beta_map),
                },
            )?;
            println!(
                "pooled {} -> {} (masks in {}) method={}",
                input.display(),
                output.display(),
                mask_path.display(),
                method.name()
            );
        }
    }
    Ok(())
}

fn cmd_unpool(
    output: &Path,
    mask_path: &Path,
    pooled_override: Option<&Path>,
    beta_flag: Option<f64>,
    double_softmax: bool,
) -> CliResult<()> {
    let mask = read_mask_file(mask_path)?;
    let pooled = match pooled_override {
        None => mask.pooled.clone(),
        Some(path) => {
            let img = load_image(path)?;
            if img.channels() != mask.pooled.channels() || img.spatial() != mask.pooled.spatial() {
                return Err(CliError::Data(format!(
                    "pooled override {}x{:?} does not match the mask's pooled shape {}x{:?}",
                    img.channels(),
                    img.spatial(),
                    mask.pooled.channels(),
                    mask.pooled.spatial()
                )));
            }
            img
        }
    };
    let beta = match (mask.beta.clone(), beta_flag) {
        (_, Some(b)) => BetaMap::constant(mask.pooled.spatial().to_vec(), b)
            .map_err(|e| CliError::Usage(e.to_string()))?,
        (Some(b), None) => b,
        (None, None) => {
            return Err(CliError::Data(
                "mask file carries no beta; pass --beta <float>".into(),
            ))
        }
    };
    let restored = ada_unpool(&UnpoolInput {
        pooled: &pooled,
        masks: &mask.masks,
        beta: &beta,
        target_shape: &mask.target_spatial,
        double_softmax,
    })
    .map_err(|e| CliError::Data(e.to_string()))?;
    save_image(output, &restored)?;
    println!(
        "unpooled {} -> {} {}x{:?}",
        mask_path.display(),
        output.display(),
        restored.channels(),
        restored.spatial()
    );
    Ok(())
}

fn cmd_eval(
    image_dir: &Path,
    methods: &str,
    kernels: &str,
    csv: &Path,
    seed: u64,
    inflate: &str,
) -> CliResult<()> {
    let methods = Method::parse_list(methods, seed)?;
    if methods.is_empty() {
        return Err(CliError::Usage("empty method list".into()));
    }
    let kernels: Vec<usize> = kernels
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .ok()
                .filter(|&k| k >= 1)
                .ok_or_else(|| CliError::Usage(format!("bad kernel {t:?}")))
        })
        .collect::<CliResult<_>>()?;
    let inflate: InflateMode = inflate.parse().map_err(|e: adapool::Error| CliError::Usage(e.to_string()))?;

    let cfg = EvalConfig { methods, kernels, seed, inflate };
    let (records, summaries) = evalrun::eval_directory(image_dir, &cfg)?;
    std::fs::write(csv, evalrun::render_csv(&records, &summaries))?;
    println!("wrote {} rows to {}", records.len(), csv.display());
    for s in &summaries {
        println!(
            "method={} rows={} mean_ssim={:.4} mean_psnr_db={:.2}",
            s.method, s.rows, s.mean_ssim, s.mean_psnr_db
        );
    }
    Ok(())
}

fn parse_shape(shape: &str) -> CliResult<(usize, Vec<usize>)> {
    let parts: Vec<usize> = shape
        .split('x')
        .map(|t| {
            t.parse::<usize>()
                .ok()
                .filter(|&v| v >= 1)
                .ok_or_else(|| CliError::Usage(format!("bad shape component {t:?}")))
        })
        .collect::<CliResult<_>>()?;
    match parts.len() {
        3 => Ok((parts[0], parts[1..].to_vec())),
        4 => Ok((parts[0], parts[1..].to_vec())),
        _ => Err(CliError::Usage(format!(
            "shape must be CxHxW or CxTxHxW, got {shape:?}"
        ))),
    }
}

fn cmd_gradcheck(method: &str, shape: &str, seed: u64, grad_mode: &str) -> CliResult<()> {
    let kind = match method {
        "em" => PoolKind::Em,
        "edscw" => PoolKind::Edscw,
        "ada" => PoolKind::Ada,
        other => {
            return Err(CliError::Usage(format!(
                "gradcheck supports em, edscw and ada, got {other:?}"
            )))
        }
    };
    let mode = match grad_mode {
        "paper" => GradMode::PaperWeighted,
        "exact" => GradMode::ExactAnalytic,
        other => return Err(CliError::Usage(format!("bad grad mode {other:?}"))),
    };
    let (channels, spatial) = parse_shape(shape)?;
    let elems = channels * spatial.iter().product::<usize>();
    if elems > 4 * 16 * 16 {
        return Err(CliError::Usage(format!(
            "gradcheck shape too large for finite differences: {elems} > 1024 elements"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..elems).map(|_| rng.random_range(-1.5..1.5)).collect();
    let map = ActivationMap::new(channels, spatial.clone(), data)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let geom = PoolGeometry::uniform(spatial.len(), 2).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = geom
        .output_extents(map.spatial())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let n_out: usize = out.iter().product();
    let beta_values: Vec<f64> = (0..n_out).map(|_| rng.random_range(0.1..0.9)).collect();
    let beta =
        BetaMap::new(beta_values, out.clone(), true).map_err(|e| CliError::Data(e.to_string()))?;
    let g: Vec<f64> = (0..channels * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grad_out =
        ActivationMap::new(channels, out, g).map_err(|e| CliError::Data(e.to_string()))?;

    let report = finite_difference_report(kind, &map, &geom, &beta, &grad_out, mode)
        .map_err(|e| CliError::Data(e.to_string()))?;

    let beta_part = report
        .max_beta_error
        .map_or(String::new(), |e| format!(" max_beta_rel_err={e:.3e}"));
    match mode {
        GradMode::ExactAnalytic => {
            let err = report.max_error();
            let pass = err < 1e-5;
            println!(
                "gradcheck method={method} shape={shape} seed={seed} mode=exact max_rel_err={:.3e}{beta_part} status={}",
                report.max_input_error,
                if pass { "PASS" } else { "FAIL" }
            );
            if !pass {
                return Err(CliError::Check(format!(
                    "max relative error {err:.3e} exceeds 1e-5"
                )));
            }
        }
        GradMode::PaperWeighted => {
            println!(
                "gradcheck method={method} shape={shape} seed={seed} mode=paper deviation={:.3e}{beta_part} status=INFO",
                report.max_input_error
            );
        }
    }
    Ok(())
}

fn cmd_fitbeta(
    input: &Path,
    target: &Path,
    kernel: usize,
    steps: usize,
    lr: f64,
    csv: &Path,
    beta_out: Option<&Path>,
) -> CliResult<()> {
    check_kernel(kernel)?;
    if !lr.is_finite() || lr < 0.0 {
        return Err(CliError::Usage(format!("learning rate must be >= 0, got {lr}")));
    }
    let input = load_image(input)?;
    let target = load_image(target)?;
    let geom = PoolGeometry::uniform(input.spatial().len(), kernel)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let (beta, trace) = fit_beta_to_target(&input, &target, &geom, steps, lr)?;

    let mut out = String::from("step,loss,mean_beta\n");
    for (i, (loss, mean)) in trace.losses.iter().zip(&trace.mean_betas).enumerate() {
        out.push_str(&format!("{i},{loss:.9},{mean:.9}\n"));
    }
    std::fs::write(csv, out)?;

    if let Some(path) = beta_out {
        let spatial = beta.spatial();
        let width = spatial[spatial.len() - 1];
        let mut grid = String::new();
        for row in beta.values().chunks(width) {
            let line: Vec<String> = row.iter().map(|b| format!("{b:.9}")).collect();
            grid.push_str(&line.join(","));
            grid.push('\n');
        }
        std::fs::write(path, grid)?;
    }

    println!(
        "fitbeta steps={steps} lr={lr} final_loss={:.9} mean_beta={:.6}",
        trace.losses.last().unwrap(),
        beta.mean()
    );
    Ok(())
}

fn cmd_bench(
    shape: &str,
    methods: &str,
    repeats: usize,
    kernel: usize,
    seed: u64,
    csv: Option<&Path>,
) -> CliResult<()> {
    check_kernel(kernel)?;
    let (channels, spatial) = parse_shape(shape)?;
    let methods = Method::parse_list(methods, seed)?;
    let cfg = BenchConfig { channels, spatial, methods, kernel, repeats, seed };
    let records = bench::run_bench(&cfg)?;

    println!("shape={shape} kernel={kernel} repeats={repeats} (median us after {} warmups)", bench::WARMUP_RUNS);
    println!("{:<14} {:>12} {:>12} {:>14} {:>10}", "method", "forward_us", "backward_us", "peak_bytes", "vs_avg");
    for r in &records {
        println!(
            "{:<14} {:>12} {:>12} {:>14} {:>9.2}x",
            r.method, r.forward_us, r.backward_us, r.peak_bytes, r.ratio_vs_avg
        );
    }
    if let Some(path) = csv {
        std::fs::write(path, bench::render_csv(&records))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
