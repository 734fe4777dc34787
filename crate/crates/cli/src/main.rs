use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ahgfc::dataset::{generate_synthetic, load_dataset, save_dataset, save_embedding, save_report, SyntheticSpec};
use ahgfc::filterbank::{FilterFamily, MatrixSource};
use ahgfc::spectral::{compare_spectra, write_spectrum_csv, write_summary_json};
use ahgfc::train::{pretrain_views, train, TrainConfig};
use ahgfc::{Error, MultiViewGraph};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "ahgfc", version, about = "Multi-view graph clustering with adaptive hybrid graph filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on a dataset and write the report and consensus embedding.
    Run(CommonArgs),
    /// Train with one component disabled.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        /// no_rec, no_kl, raw_adjacency, low_pass_only or raw_adjacency_low_pass
        #[arg(long)]
        variant: String,
    },
    /// Pretrain, then write the spectra of a_rw and s_rw for every view.
    Spectrum(CommonArgs),
    /// Write the configured synthetic dataset in manifest form.
    Synth(CommonArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long = "gamma-rec", allow_negative_numbers = true)]
    gamma_rec: Option<f64>,
    #[arg(long = "gamma-kl", allow_negative_numbers = true)]
    gamma_kl: Option<f64>,
}

/// Contents of `--config`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    manifest: Option<PathBuf>,
    synthetic: Option<SyntheticSpec>,
    #[serde(default)]
    train: TrainConfig,
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Variant {
    NoRec,
    NoKl,
    RawAdjacency,
    LowPassOnly,
    RawAdjacencyLowPass,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "no_rec" => Variant::NoRec,
            "no_kl" => Variant::NoKl,
            "raw_adjacency" => Variant::RawAdjacency,
            "low_pass_only" => Variant::LowPassOnly,
            "raw_adjacency_low_pass" => Variant::RawAdjacencyLowPass,
            other => return Err(format!("unknown variant {other:?}")),
        })
    }
}

impl Variant {
    fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Variant::NoRec => cfg.gamma_rec = 0.0,
            Variant::NoKl => cfg.gamma_kl = 0.0,
            Variant::RawAdjacency => cfg.filter.matrix_source = MatrixSource::RawAdjacency,
            Variant::LowPassOnly => cfg.filter.family = FilterFamily::LowPass,
            Variant::RawAdjacencyLowPass => {
                cfg.filter.matrix_source = MatrixSource::RawAdjacency;
                cfg.filter.family = FilterFamily::LowPass;
            }
        }
    }
}

enum Failure {
    Config(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => Failure::Config(msg),
            other => Failure::Runtime(other),
        }
    }
}

/// Resolved inputs of a subcommand, checked before anything is written.
struct Plan {
    cfg: RunConfig,
    base: PathBuf,
    out: PathBuf,
}

impl Plan {
    fn graph(&self) -> Result<MultiViewGraph, Failure> {
        match (&self.cfg.manifest, &self.cfg.synthetic) {
            (Some(m), None) => Ok(load_dataset(&resolve(&self.base, m))?),
            (None, Some(spec)) => Ok(generate_synthetic(spec)?),
            _ => unreachable!("validated in plan()"),
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn plan(args: &CommonArgs, variant: Option<Variant>, synth: bool) -> Result<Plan, Failure> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    match (&cfg.manifest, &cfg.synthetic) {
        (Some(_), None) | (None, Some(_)) => {}
        _ => return Err(Failure::Config("config needs exactly one of manifest or synthetic".into())),
    }
    if synth && cfg.synthetic.is_none() {
        return Err(Failure::Config("synth needs a synthetic spec in the config".into()));
    }
    let t = &mut cfg.train;
    if let Some(seed) = args.seed {
        if synth {
            cfg.synthetic.as_mut().expect("checked above").seed = seed;
        } else {
            t.seed = seed;
        }
    }
    if let Some(v) = args.epochs {
        t.epochs = v;
    }
    if let Some(v) = args.order {
        t.filter.order = v;
    }
    if let Some(v) = args.rho {
        t.rho = v;
    }
    if let Some(v) = args.gamma_rec {
        t.gamma_rec = v;
    }
    if let Some(v) = args.gamma_kl {
        t.gamma_kl = v;
    }
    if let Some(v) = variant {
        v.apply(t);
    }
    t.validate()?;
    if let Some(spec) = &cfg.synthetic {
        spec.validate()?;
    }
    let base = args.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let out = match (&args.out, &cfg.out) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(&base, o),
        (None, None) => PathBuf::from("."),
    };
    Ok(Plan { cfg, base, out })
}

fn create_out(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn run_training(plan: &Plan) -> Result<(), Failure> {
    let g = plan.graph()?;
    let output = train(&g, &plan.cfg.train)?;
    create_out(&plan.out)?;
    save_report(&output.report, &plan.out.join("report.json"))?;
    save_embedding(&output.state.consensus, &plan.out.join("embedding.csv"))?;
    match output.report.final_metrics {
        Some(m) => println!("NMI={:.4} ARI={:.4} ACC={:.4} F1={:.4}", m.nmi, m.ari, m.acc, m.f1),
        None => log::warn!("dataset has no labels; metrics skipped"),
    }
    Ok(())
}

fn run_spectrum(plan: &Plan) -> Result<(), Failure> {
    let g = plan.graph()?;
    let (params, _) = pretrain_views(&g, &plan.cfg.train)?;
    create_out(&plan.out)?;
    for (v, p) in params.iter().enumerate() {
        let pair = p.embed(g.features(), g.adjacency(v))?;
        let cmp = compare_spectra(&g, v, &pair)?;
        for (tag, report) in [("adjacency_rw", &cmp.a_rw), ("joint_aggregation_rw", &cmp.s_rw)] {
            write_spectrum_csv(report, &plan.out.join(format!("spectrum_view{v}_{tag}.csv")))?;
            write_summary_json(report, &plan.out.join(format!("spectrum_view{v}_{tag}.json")))?;
        }
        println!(
            "view {v}: largest gap a_rw={:.6} s_rw={:.6}",
            cmp.a_rw.summary.largest_gap, cmp.s_rw.summary.largest_gap
        );
    }
    Ok(())
}

fn run_synth(plan: &Plan) -> Result<(), Failure> {
    let g = plan.graph()?;
    let spec = plan.cfg.synthetic.as_ref().expect("checked in plan()");
    let manifest = save_dataset(&g, "synthetic", &plan.out)?;
    for v in 0..g.n_views() {
        println!("view {v}: expected hr {:.4}", spec.expected_hr(v)?);
    }
    println!("{}", manifest.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(args) => run_training(&plan(&args, None, false)?),
        Command::Ablate { common, variant } => {
            let variant: Variant = variant.parse().map_err(Failure::Config)?;
            run_training(&plan(&common, Some(variant), false)?)
        }
        Command::Spectrum(args) => run_spectrum(&plan(&args, None, false)?),
        Command::Synth(args) => run_synth(&plan(&args, None, true)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e @ Error::Divergence { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
