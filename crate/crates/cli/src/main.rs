//! `postslm`: simulate, fit and post-sample spatial lag models from the shell.
//!
//! Exit status: 0 on success, 1 on a usage error, 2 on a data error and 3 on
//! a numerical failure.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use postslm::hedonic::{hedonic_pipeline, HedonicOptions};
use postslm::listings::{assign_strata, ingest_listings, StrataSpec};
use postslm::montecarlo::{
    compare_weight_schemes, run_with_manifest, simulate_dataset, write_curves, Manifest, McConfig,
};
use postslm::postsample::{default_grid, plan, zeta_sweep, StratifiedDesign, SweepConfig};
use postslm::slm::{fit_ml, FitOptions, LogDetBackend};
use postslm::weights::{ThresholdRule, WeightScheme};
use postslm::{Error, PointSet, WeightSpec};

#[derive(Parser, Debug)]
#[command(
    name = "postslm",
    version,
    about = "Spatial lag models with flexible post-sampling"
)]
#[command(arg_required_else_help = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Base seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Spatial weight scheme.
    #[arg(long, global = true, value_enum)]
    weights: Option<Scheme>,
    /// Neighbours per point for `--weights knn`.
    #[arg(long, global = true, default_value_t = 4)]
    knn_k: usize,
    /// Fixed distance threshold; by default the smallest one leaving no
    /// point isolated.
    #[arg(long, global = true)]
    threshold: Option<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Switch::On)]
    row_standardize: Switch,
    /// Comma-separated ζ values; must include 0 and 1.
    #[arg(long, global = true, value_delimiter = ',')]
    zeta_grid: Option<Vec<f64>>,
    /// Independent deletions per ζ (Monte Carlo: replications).
    #[arg(long, global = true)]
    replicates: Option<usize>,
    /// Output file (directory for `mc`); standard output when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Scheme {
    Threshold,
    Knn,
    Idist,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Backend {
    Eigen,
    Lu,
}

#[derive(Args, Debug)]
struct Model {
    /// Point CSV: `id,x,y[,stratum][,attributes...]`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "outcome")]
    response: String,
    /// Comma-separated regressor columns; the last one is scored by sweeps.
    #[arg(long, value_delimiter = ',', default_value = "covariate")]
    covariates: Vec<String>,
    #[arg(long)]
    intercept: bool,
    #[arg(long, value_enum, default_value_t = Backend::Eigen)]
    logdet: Backend,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw one data set from the Monte Carlo generating process.
    Simulate {
        /// Key-value configuration overriding the reference defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        rho: f64,
        /// Innovation stream index.
        #[arg(long, default_value_t = 0)]
        rep: usize,
    },
    /// Maximum likelihood fit, written as JSON.
    Fit {
        #[command(flatten)]
        model: Model,
    },
    /// Flexible post-sampling targets and retained ids at one ζ, as JSON.
    Postsample {
        #[arg(long)]
        input: PathBuf,
        /// Auxiliary table `stratum,aux_size`.
        #[arg(long)]
        aux: PathBuf,
        #[arg(long)]
        zeta: f64,
    },
    /// ζ sweep, written as CSV.
    Sweep {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        aux: PathBuf,
    },
    /// Monte Carlo experiment: `curves.csv` and `manifest.json` in `--out`.
    Mc {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated ρ values.
        #[arg(long, value_delimiter = ',')]
        rho_grid: Option<Vec<f64>>,
        /// Compare threshold, k-NN and inverse-distance weights at ρ = 0.2.
        #[arg(long)]
        compare_schemes: bool,
    },
    /// Validate listings, project coordinates and assign strata.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        strata: StrataArgs,
    },
    /// Price-on-size hedonic sweep, written as a summary table CSV.
    Hedonic {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        strata: StrataArgs,
        /// Also write the full report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct StrataArgs {
    /// Auxiliary table `stratum,aux_size`.
    #[arg(long)]
    aux: Option<PathBuf>,
    /// Vertex CSV `stratum,ring,lon,lat`.
    #[arg(long)]
    polygons: Option<PathBuf>,
    /// Feature collection with `stratum` and optionally `aux_size` properties.
    #[arg(long)]
    geojson: Option<PathBuf>,
    /// JSON list of strata with rings.
    #[arg(long)]
    strata_json: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::InvalidInput(_) => 1,
                ref e if e.is_numerical() => 3,
                _ => 2,
            })
        }
    }
}

fn run(cli: &Cli) -> Outcome<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { config, rho, rep } => {
            let cfg = mc_config(g, config.as_deref())?;
            let points = simulate_dataset(&cfg, *rho, *rep)?;
            emit(g, |w| points.write_csv(w))
        }
        Command::Fit { model } => {
            let (points, y, x) = load_model(model)?;
            let w = weight_spec(g)?.build(&points)?;
            let fit = fit_ml(&y, &x, &w, &fit_options(model))?;
            let json = serde_json::to_string_pretty(&fit.to_json()).map_err(Error::from)?;
            emit(g, |mut w| Ok(writeln!(w, "{json}")?))
        }
        Command::Postsample { input, aux, zeta } => {
            let points = read_points(input)?;
            let design = StratifiedDesign::from_points(&points, &read_aux(aux)?.aux_sizes())?;
            let p = plan(&points, &design, *zeta, g.seed.unwrap_or(0))?;
            let json = serde_json::to_string_pretty(&p).map_err(Error::from)?;
            emit(g, |mut w| Ok(writeln!(w, "{json}")?))
        }
        Command::Sweep { model, aux } => {
            let (points, y, x) = load_model(model)?;
            let design = StratifiedDesign::from_points(&points, &read_aux(aux)?.aux_sizes())?;
            let config = sweep_config(g, fit_options(model))?;
            let result = zeta_sweep(&y, &x, &points, &design, &config)?;
            for w in &result.warnings {
                log::warn!("{w}");
            }
            emit(g, |w| result.write_csv(w))
        }
        Command::Mc {
            config,
            rho_grid,
            compare_schemes,
        } => {
            let mut cfg = mc_config(g, config.as_deref())?;
            if let Some(r) = rho_grid {
                cfg.rho_grid = r.clone();
            }
            let dir = g
                .out
                .clone()
                .ok_or_else(|| Failure::Usage("mc needs --out <directory>".into()))?;
            let (summary, manifest) = if *compare_schemes {
                let start = std::time::Instant::now();
                let s = compare_weight_schemes(&cfg)?;
                let m = Manifest::new(&cfg, &s, start.elapsed().as_secs_f64());
                (s, m)
            } else {
                run_with_manifest(&cfg)?
            };
            std::fs::create_dir_all(&dir)?;
            write_curves(&summary, File::create(dir.join("curves.csv"))?)?;
            let json = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
            std::fs::write(dir.join("manifest.json"), json + "\n")?;
            eprintln!(
                "{} rows, {} failed fits, {:.1} s",
                manifest.rows, manifest.failures, manifest.wall_time_secs
            );
            Ok(())
        }
        Command::Ingest { input, strata } => {
            let mut listings = ingest_listings(File::open(input)?)?;
            for r in &listings.rejected {
                eprintln!("rejected line {} (id {}): {}", r.line, r.id, r.reason);
            }
            if let Some(spec) = read_strata(strata)? {
                if spec.strata.iter().all(|s| !s.rings.is_empty()) {
                    let a = assign_strata(&listings.points, &spec)?;
                    for id in &a.unassigned {
                        eprintln!("unassigned listing {id}");
                    }
                    listings.points = a.points;
                }
            }
            eprintln!(
                "{} listings kept, {} rejected",
                listings.points.len(),
                listings.rejected.len()
            );
            emit(g, |w| listings.write_csv(w))
        }
        Command::Hedonic {
            input,
            strata,
            report,
        } => {
            let listings = ingest_listings(File::open(input)?)?;
            for r in &listings.rejected {
                eprintln!("rejected line {} (id {}): {}", r.line, r.id, r.reason);
            }
            let spec = read_strata(strata)?.ok_or_else(|| {
                Failure::Usage("hedonic needs --aux, --geojson or --strata-json".into())
            })?;
            let defaults = HedonicOptions::default();
            let options = HedonicOptions {
                sweep: sweep_config(g, defaults.sweep.fit)?,
                ..defaults
            };
            let r = hedonic_pipeline(&listings.points, &spec, &options)?;
            for w in &r.warnings {
                log::warn!("{w}");
            }
            if let Some(path) = report {
                let json = serde_json::to_string_pretty(&r).map_err(Error::from)?;
                std::fs::write(path, json + "\n")?;
            }
            emit(g, |w| r.write_csv(w))
        }
    }
}

/// Writes to `--out` or standard output.
fn emit<F>(g: &Global, f: F) -> Outcome<()>
where
    F: FnOnce(Box<dyn Write>) -> postslm::Result<()>,
{
    let sink: Box<dyn Write> = match &g.out {
        Some(p) => Box::new(io::BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    };
    f(sink)?;
    Ok(())
}

fn weight_spec(g: &Global) -> Outcome<WeightSpec> {
    let scheme = match (g.weights.unwrap_or(Scheme::Threshold), g.threshold) {
        (Scheme::Threshold, None) => WeightScheme::Threshold(ThresholdRule::MinConnecting),
        (Scheme::Threshold, Some(d)) if d.is_finite() && d > 0.0 => {
            WeightScheme::Threshold(ThresholdRule::Fixed(d))
        }
        (Scheme::Threshold, Some(_)) => {
            return Err(Failure::Usage("--threshold must be positive".into()))
        }
        (_, Some(_)) => {
            return Err(Failure::Usage(
                "--threshold only applies to --weights threshold".into(),
            ))
        }
        (Scheme::Knn, None) if g.knn_k > 0 => WeightScheme::Knn { k: g.knn_k },
        (Scheme::Knn, None) => return Err(Failure::Usage("--knn-k must be at least 1".into())),
        (Scheme::Idist, None) => WeightScheme::InverseDistance,
    };
    Ok(WeightSpec {
        scheme,
        row_standardize: g.row_standardize == Switch::On,
    })
}

fn sweep_config(g: &Global, fit: FitOptions) -> Outcome<SweepConfig> {
    Ok(SweepConfig {
        spec: weight_spec(g)?,
        grid: g.zeta_grid.clone().unwrap_or_else(default_grid),
        seed: g.seed.unwrap_or(0),
        replicates: g.replicates.unwrap_or(1),
        fit,
        ..SweepConfig::default()
    })
}

fn mc_config(g: &Global, path: Option<&Path>) -> Outcome<McConfig> {
    let mut cfg = match path {
        Some(p) => McConfig::from_file(p)?,
        None => McConfig::sim1(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(r) = g.replicates {
        cfg.replications = r;
    }
    if let Some(z) = &g.zeta_grid {
        cfg.zeta_grid = z.clone();
    }
    if g.weights.is_some() || g.threshold.is_some() || g.row_standardize == Switch::Off {
        cfg.schemes = vec![weight_spec(g)?];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fit_options(m: &Model) -> FitOptions {
    FitOptions {
        intercept: m.intercept,
        logdet: match m.logdet {
            Backend::Eigen => LogDetBackend::Eigen,
            Backend::Lu => LogDetBackend::SparseLu,
        },
        ..FitOptions::default()
    }
}

fn read_points(path: &Path) -> Outcome<PointSet> {
    Ok(PointSet::read_csv(File::open(path)?)?)
}

fn load_model(m: &Model) -> Outcome<(PointSet, DVector<f64>, DMatrix<f64>)> {
    let points = read_points(&m.input)?;
    let col = |name: &str| -> Outcome<Vec<f64>> {
        points
            .attr(name)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Failure::Core(Error::Data(format!("no column '{name}' in input"))))
    };
    let y = DVector::from_vec(col(&m.response)?);
    let cols = m
        .covariates
        .iter()
        .map(|c| col(c).map(DVector::from_vec))
        .collect::<Outcome<Vec<_>>>()?;
    if cols.is_empty() {
        return Err(Failure::Usage("at least one covariate is required".into()));
    }
    let x = DMatrix::from_columns(&cols);
    Ok((points, y, x))
}

fn read_aux(path: &Path) -> Outcome<StrataSpec> {
    Ok(StrataSpec::read_aux_csv(File::open(path)?)?)
}

fn read_text(path: &Path) -> Outcome<String> {
    let mut s = String::new();
    File::open(path)?.read_to_string(&mut s)?;
    Ok(s)
}

fn read_strata(a: &StrataArgs) -> Outcome<Option<StrataSpec>> {
    let aux = a.aux.as_deref().map(read_aux).transpose()?;
    if let Some(p) = &a.strata_json {
        return Ok(Some(StrataSpec::from_json(&read_text(p)?)?));
    }
    if let Some(p) = &a.geojson {
        let sizes: Option<BTreeMap<u32, f64>> = aux.as_ref().map(StrataSpec::aux_sizes);
        return Ok(Some(StrataSpec::from_geojson(
            &read_text(p)?,
            sizes.as_ref(),
        )?));
    }
    match (aux, &a.polygons) {
        (Some(spec), Some(p)) => Ok(Some(spec.read_polygon_csv(File::open(p)?)?)),
        (None, Some(_)) => Err(Failure::Usage("--polygons needs --aux".into())),
        (aux, None) => Ok(aux),
    }
}
