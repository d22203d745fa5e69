use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use rbsc::bench::{read_records, run_experiment, write_report, ExperimentSpec};
use rbsc::datasets::{make_synthetic, parse_libsvm, standardize, write_libsvm, Dataset, SyntheticKind, SyntheticSpec};
use rbsc::metrics::{read_labels, MetricReport};
use rbsc::pipeline::{run_method, Method, PipelineConfig};
use rbsc::rb_features::{estimate_kappa, generate_rb_features, write_binary, write_matrix_market, KernelFamily, KernelParams};

/// Spectral clustering with random binning features.
#[derive(Parser)]
#[command(name = "rbsc", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "RBSC_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one clustering pipeline and write labels.
    Cluster(ClusterArgs),
    /// Write a synthetic dataset in LIBSVM format.
    Generate(GenerateArgs),
    /// Generate the RB feature matrix and write it to disk.
    Features(FeaturesArgs),
    /// Run an experiment spec (JSON) and append records to CSV.
    Bench {
        /// ExperimentSpec JSON file.
        spec: PathBuf,
    },
    /// Score a label file against ground truth.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Print JSON instead of CSV.
        #[arg(long)]
        json: bool,
    },
    /// Aggregate a records CSV into median curves and scaling exponents.
    Report {
        records: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blobs,
    Rings,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Laplacian,
    Gaussian,
}

#[derive(Args)]
struct DataArgs {
    /// LIBSVM input file.
    #[arg(long, conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Generate the input instead of reading it.
    #[arg(long, value_enum)]
    synthetic: Option<Kind>,
    /// Synthetic cluster count.
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 2)]
    d: usize,
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Shift and scale each column to mean 0, variance 1.
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> Result<Dataset> {
        let ds = match (&self.data, self.synthetic) {
            (Some(path), _) => parse_libsvm(path).with_context(|| format!("reading {}", path.display()))?,
            (None, Some(kind)) => make_synthetic(&self.synthetic_spec(kind))?,
            (None, None) => bail!("either --data or --synthetic is required"),
        };
        Ok(if self.standardize { standardize(&ds)? } else { ds })
    }

    fn synthetic_spec(&self, kind: Kind) -> SyntheticSpec {
        SyntheticSpec {
            kind: match kind {
                Kind::Blobs => SyntheticKind::Blobs,
                Kind::Rings => SyntheticKind::Rings,
            },
            k: self.classes,
            n: self.n,
            d: self.d,
            separation: self.separation,
            seed: self.data_seed,
        }
    }
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "laplacian")]
    kernel: Family,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

impl KernelArgs {
    fn params(&self) -> KernelParams {
        KernelParams {
            family: match self.kernel {
                Family::Laplacian => KernelFamily::Laplacian,
                Family::Gaussian => KernelFamily::Gaussian,
            },
            sigma: self.sigma,
        }
    }
}

#[derive(Args)]
struct ClusterArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// sc_rb, sc_rf, exact_sc or kmeans_raw.
    #[arg(long, default_value = "sc_rb")]
    method: Method,
    /// Cluster count (default: number of label classes).
    #[arg(long)]
    k: Option<usize>,
    /// Grids (RB) or Fourier features (RF).
    #[arg(long, default_value_t = 256)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    max_matvecs: Option<usize>,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    /// `index,label` CSV output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Labels plus provenance as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[arg(long, default_value_t = 256)]
    r: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Binary sparse-row output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// MatrixMarket coordinate output.
    #[arg(long)]
    mtx: Option<PathBuf>,
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn cluster(args: &ClusterArgs) -> Result<()> {
    let ds = args.data.load()?;
    let k = match args.k.or_else(|| ds.n_classes()) {
        Some(k) => k,
        None => bail!("--k is required for unlabeled data"),
    };
    let mut cfg = PipelineConfig::new(k, args.r, args.kernel.params(), args.seed);
    cfg.svd.tol = args.tol;
    if let Some(m) = args.max_matvecs {
        cfg.svd.max_matvecs = m;
    }
    cfg.kmeans.replicates = args.replicates;
    let out = run_method(args.method, &ds, &cfg)?;
    for w in &out.provenance.warnings {
        log::warn!("{w}");
    }

    if let Some(path) = &args.out {
        out.write_labels_csv(create(path)?)?;
    }
    if let Some(path) = &args.json {
        serde_json::to_writer_pretty(create(path)?, &out.to_json())?;
    }
    let p = &out.provenance;
    println!(
        "method={} dataset={} n={} k={} features={} matvecs={} total_s={:.3}",
        p.method,
        p.dataset,
        ds.n_rows(),
        k,
        p.n_features,
        p.matvecs,
        p.timings.total
    );
    if let Some(kappa) = p.kappa {
        println!("kappa={kappa:.3}");
    }
    if let Some(truth) = &ds.labels {
        let m = MetricReport::evaluate(p.method.name(), &ds.name, out.labels(), truth)?;
        println!("nmi={:.4} ri={:.4} fm={:.4} acc={:.4}", m.nmi, m.ri, m.fm, m.acc);
    }
    Ok(())
}

fn features(args: &FeaturesArgs) -> Result<()> {
    let ds = args.data.load()?;
    let (z, grids) = generate_rb_features(&ds, args.r, &args.kernel.params(), args.seed)?;
    println!(
        "n={} d_features={} r={} nnz={} kappa={:.3}",
        ds.n_rows(),
        rbsc::sparse::FeatureOperator::n_cols(&z),
        args.r,
        z.nnz(),
        estimate_kappa(&z, &grids)
    );
    if let Some(path) = &args.out {
        write_binary(&z, create(path)?)?;
    }
    if let Some(path) = &args.mtx {
        write_matrix_market(&z, create(path)?)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match &cli.command {
        Command::Cluster(args) => cluster(args)?,
        Command::Generate(args) => {
            let ds = args.data.load()?;
            write_libsvm(&ds, &args.out)?;
            info!("wrote {} rows to {}", ds.n_rows(), args.out.display());
        }
        Command::Features(args) => features(args)?,
        Command::Bench { spec } => {
            let spec = ExperimentSpec::from_json_file(spec)?;
            let records = run_experiment(&spec)?;
            let failed = records.iter().filter(|r| !r.is_ok()).count();
            println!(
                "{} records ({} failed) appended to {}",
                records.len(),
                failed,
                spec.output_dir.join("records.csv").display()
            );
        }
        Command::Metrics { pred, truth, json } => {
            let p = read_labels(pred)?;
            let t = read_labels(truth)?;
            let name = pred.file_stem().map_or("pred".into(), |s| s.to_string_lossy().into_owned());
            let m = MetricReport::evaluate(name, truth.display().to_string(), &p, &t)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&m)?);
            } else {
                rbsc::metrics::write_reports_csv(&[m], std::io::stdout())?;
            }
        }
        Command::Report { records, out } => {
            let recs = read_records(records)?;
            let (curves, scaling) = write_report(&recs, out)?;
            println!("wrote {} and {}", curves.display(), scaling.display());
        }
    }
    Ok(())
}
