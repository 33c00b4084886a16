use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fcsrg::bundle::{sha256_hex, write_bundle, BundleExport};
use fcsrg::experiments::{
    build_generator, prepare_models, run_recover_one, run_sweep, run_theory, train_pixel_denoiser,
    train_structured_projector, ExperimentConfig, SummaryRow, TrialRow,
};
use fcsrg::generative::{sample_latent, SampleMode};
use fcsrg::tensor::{derive_seed, DenseVector, Rng};
use fcsrg::weights::{load_weights, save_weights};
use fcsrg::Error;

#[derive(Parser)]
#[command(name = "fcsrg", version, about = "Compressive-sensing recovery with structured generative priors")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when absent.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed, replaces `seed` from the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory, replaces `out` from the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted `section.key=value`; the value is parsed as TOML, bare words as strings.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Compression-ratio sweep over the configured solvers.
    Sweep,
    /// Monte-Carlo checks of the recovery theory.
    Theory,
    /// Train the structured projector and save it as `projector.fcw`.
    TrainProjector,
    /// Train the pixel-domain denoiser and save it as `denoiser.fcw`.
    TrainDenoiser,
    /// Build the configured generator and save it as `generator.fcw`.
    MakeGenerator {
        /// Write a full bundle (manifest, fixture, test images) instead.
        #[arg(long)]
        bundle: bool,
        /// Also train and include the structured projector in the bundle.
        #[arg(long, requires = "bundle")]
        with_projector: bool,
        /// Number of generated test images in the bundle.
        #[arg(long, default_value_t = 16, requires = "bundle")]
        test_images: usize,
    },
    /// Replay a single trial from `recover.seed` and `recover.m`.
    RecoverOne,
    /// Print the structure of a weight file.
    DumpWeightsInfo { path: PathBuf },
}

fn load_config(common: &Common) -> fcsrg::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path, &common.overrides)?,
        None => ExperimentConfig::from_toml_str("", &common.overrides, None)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

fn print_summary(rows: &[SummaryRow]) {
    let acc = |v: Option<f64>| v.map_or_else(|| "-".into(), |a| format!("{a:.3}"));
    println!(
        "{:>6} {:>5} {:<20} {:>6} {:>11} {:>10} {:>8} {:>10}",
        "ratio", "m", "solver", "trials", "mean_error", "se", "accuracy", "time_s"
    );
    for r in rows {
        println!(
            "{:>6} {:>5} {:<20} {:>6} {:>11.4} {:>10.4} {:>8} {:>10.4}",
            r.ratio,
            r.m,
            r.solver.name(),
            r.trials,
            r.mean_error,
            r.se_error,
            acc(r.mean_accuracy),
            r.mean_wall_time
        );
    }
}

fn print_rows(rows: &[TrialRow]) {
    for r in rows {
        let acc = r.accuracy.map_or_else(|| "-".into(), |a| format!("{a:.3}"));
        println!(
            "{:<20} m={} error={:.6} relative_error={:.6} accuracy={} iterations={} time_s={:.4}",
            r.solver.name(),
            r.m,
            r.error,
            r.relative_error,
            acc,
            r.iterations,
            r.wall_time
        );
    }
}

fn dump_weights_info(path: &Path) -> fcsrg::Result<()> {
    let bytes = std::fs::read(path)?;
    let (net, layout) = load_weights(path)?;
    println!("file {}", path.display());
    println!("sha256 {}", sha256_hex(&bytes));
    println!("input_dim {}", net.input_dim());
    println!("output_dim {}", net.output_dim());
    println!("params {}", net.param_count());
    for (i, l) in net.layers().iter().enumerate() {
        println!("layer {i} {} -> {} {}", l.in_dim(), l.out_dim(), l.activation().name());
    }
    for b in net.output_blocks().blocks() {
        println!("output_block offset={} len={} {}", b.offset, b.len, b.activation.name());
    }
    match layout {
        Some(l) => println!(
            "layout groups={:?} continuous={} v_dim={} r_c={} r_v={}",
            l.categorical_groups(),
            l.continuous_codes(),
            l.v_dim(),
            l.r_c(),
            l.r_v()
        ),
        None => println!("layout none"),
    }
    println!("lipschitz_upper_bound {}", net.lipschitz_upper_bound());
    Ok(())
}

fn make_generator(cfg: &ExperimentConfig, bundle: bool, with_projector: bool, test_images: usize) -> fcsrg::Result<()> {
    let gen = build_generator(&cfg.generator)?;
    std::fs::create_dir_all(&cfg.out)?;
    if !bundle {
        let path = cfg.out.join("generator.fcw");
        save_weights(gen.net(), Some(gen.layout()), &path)?;
        println!("wrote {}", path.display());
        return Ok(());
    }
    let projector = if with_projector {
        Some(train_structured_projector(&gen, &cfg.projector)?)
    } else {
        None
    };
    let mut rng = Rng::new(derive_seed(cfg.seed, 0xB0D1E));
    let mut draw = |k: usize| -> Vec<DenseVector> {
        (0..k).map(|_| sample_latent(gen.layout(), &mut rng, SampleMode::Hard).flat()).collect()
    };
    let fixture = draw(10);
    let images = draw(test_images)
        .iter()
        .map(|z| gen.generate_flat(z))
        .collect::<fcsrg::Result<Vec<_>>>()?;
    let seed = cfg.generator.seed.to_string();
    let meta = [("source", "synthetic"), ("generator.seed", seed.as_str())];
    write_bundle(
        &cfg.out,
        &BundleExport {
            generator: &gen,
            projector: projector.as_ref(),
            test_images: &images,
            fixture_latents: &fixture,
            metadata: &meta,
        },
    )?;
    println!("wrote bundle {}", cfg.out.display());
    Ok(())
}

/// `Ok(true)` on success, `Ok(false)` when a theory check failed.
fn run(cli: Cli) -> fcsrg::Result<bool> {
    if let Command::DumpWeightsInfo { path } = &cli.command {
        dump_weights_info(path)?;
        return Ok(true);
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Sweep => {
            let report = run_sweep(&cfg)?;
            print_summary(&report.summary);
            println!("wrote {}", cfg.out.join("sweep.csv").display());
        }
        Command::Theory => {
            let summary = run_theory(&cfg)?;
            print!("{}", summary.render());
            return Ok(summary.all_passed());
        }
        Command::TrainProjector => {
            let gen = build_generator(&cfg.generator)?;
            let proj = train_structured_projector(&gen, &cfg.projector)?;
            std::fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join("projector.fcw");
            save_weights(proj.net(), Some(proj.layout()), &path)?;
            println!("wrote {}", path.display());
        }
        Command::TrainDenoiser => {
            let gen = build_generator(&cfg.generator)?;
            let net = train_pixel_denoiser(&gen, &cfg.denoiser)?;
            std::fs::create_dir_all(&cfg.out)?;
            let path = cfg.out.join("denoiser.fcw");
            save_weights(&net, None, &path)?;
            println!("wrote {}", path.display());
        }
        Command::MakeGenerator {
            bundle,
            with_projector,
            test_images,
        } => make_generator(&cfg, bundle, with_projector, test_images)?,
        Command::RecoverOne => {
            let models = prepare_models(&cfg, &cfg.recover.solvers)?;
            let rows = run_recover_one(&cfg, &models)?;
            print_rows(&rows);
            println!("wrote {}", cfg.out.join("recover_one.csv").display());
        }
        Command::DumpWeightsInfo { .. } => unreachable!("handled above"),
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numeric { .. } | Error::Singular { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
