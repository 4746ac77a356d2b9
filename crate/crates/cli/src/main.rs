use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use pet_tgv::blur::{fwhm_to_sigma, BlurKernel, Padding};
use pet_tgv::config::Config;
use pet_tgv::grid::ImageGrid;
use pet_tgv::io::{read_image, write_image, write_metrics_csv, write_pgm16, write_trace_csv};
use pet_tgv::metrics::snr;
use pet_tgv::simulate::{beta_grid, degrade, shepp_logan_modified, DegradationSpec};
use pet_tgv::solver::{Mode, Restorer, SolverConfig};
use pet_tgv::sweep::{run_experiment_sweep, SweepConfig, DEFAULT_PSF_SIGMA};
use pet_tgv::tuner::{tune_with, SupportCount, TuneOptions};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// TGV-regularized restoration of blurred Poisson images.
///
/// Every long option can also be given in a `key = value` file passed with
/// --config (key = option name without the dashes); command-line flags win.
#[derive(Parser)]
#[command(name = "pet-tgv", version)]
struct Cli {
    /// key = value file supplying defaults for long options.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the textured Shepp–Logan ground truth.
    Phantom(PhantomArgs),
    /// Scale, blur and Poisson-corrupt an image.
    Degrade(DegradeArgs),
    /// Restore an observation with TV or TGV.
    Restore(RestoreArgs),
    /// Run the activity sweep and write metrics as CSV.
    Sweep(SweepArgs),
    /// Print SNR(IMAGE, REFERENCE) in dB.
    Snr(SnrArgs),
}

#[derive(Args, Default)]
struct PsfArgs {
    /// Gaussian PSF standard deviation in pixels.
    #[arg(long, conflicts_with = "psf_fwhm_mm")]
    psf_sigma: Option<f64>,
    /// Gaussian PSF full width at half maximum in mm (needs --pixel-mm).
    #[arg(long)]
    psf_fwhm_mm: Option<f64>,
    /// Pixel size in mm.
    #[arg(long)]
    pixel_mm: Option<f64>,
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Square grid side; shorthand for --width and --height.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Also export a 16-bit PGM preview.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Activity scale applied before blurring.
    #[arg(long)]
    beta: Option<f64>,
    #[command(flatten)]
    psf: PsfArgs,
    #[arg(long)]
    seed: Option<u64>,
    /// Boundary handling of the blur: replicate | periodic.
    #[arg(long)]
    padding: Option<String>,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(short, long)]
    input: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// tv | tgv.
    #[arg(long)]
    mode: Option<String>,
    /// Data weight; with --auto-lambda, the starting value.
    #[arg(long)]
    lambda: Option<f64>,
    /// Tune lambda by the discrepancy principle.
    #[arg(long)]
    auto_lambda: bool,
    /// Weight of the second-order TGV term.
    #[arg(long)]
    alpha: Option<f64>,
    #[command(flatten)]
    psf: PsfArgs,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative change of u below which the iteration stops.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed of the power iteration that sizes the steps.
    #[arg(long)]
    seed: Option<u64>,
    /// Clamp negative output pixels to zero.
    #[arg(long)]
    post_clamp: bool,
    /// Scanner preset; `hr-scanner`: FWHM 6 mm, pixel 2.2 mm, lambda 5.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    padding: Option<String>,
    /// Meta-iterations of --auto-lambda.
    #[arg(long)]
    meta_iters: Option<usize>,
    /// Pixel count behind the discrepancy target: nonzero | closed | closed:<radius>.
    #[arg(long)]
    support: Option<String>,
    /// Constraint step: exact | sequential.
    #[arg(long)]
    constraint_prox: Option<String>,
    /// Write the lambda / KL-ratio trace of --auto-lambda as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    pgm: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// CSV destination (stdout if omitted).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    size: Option<usize>,
    /// Comma-separated activity levels.
    #[arg(long)]
    betas: Option<String>,
    /// Number of log-spaced levels in [1e-2, 1e2] when --betas is absent.
    #[arg(long)]
    num_betas: Option<usize>,
    /// Comma-separated modes.
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    psf_sigma: Option<f64>,
    /// Base seed; level i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    meta_iters: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Leave wall_time empty so the CSV is byte-reproducible.
    #[arg(long)]
    no_timing: bool,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct SnrArgs {
    image: PathBuf,
    reference: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl From<pet_tgv::Error> for CliError {
    fn from(e: pet_tgv::Error) -> Self {
        use pet_tgv::Error as E;
        match e {
            e if e.is_numerical() => CliError::Numerical(e.to_string()),
            e @ (E::Config { .. } | E::InvalidParameter { .. }) => CliError::Usage(e.to_string()),
            e => CliError::Data(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Option lookup across layers, highest priority first.
struct Layers(Vec<Config>);

impl Layers {
    fn get<T>(&self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        for layer in &self.0 {
            if layer.contains(key) {
                return Ok(layer.get(key)?);
            }
        }
        Ok(None)
    }

    fn or<T>(&self, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T>(&self, key: &str) -> CliResult<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("--{key} is required")))
    }

    fn flag(&self, key: &str) -> CliResult<bool> {
        self.or(key, false)
    }

    /// Gaussian σ in pixels from whichever layer first names a PSF.
    fn psf_sigma(&self) -> CliResult<f64> {
        for layer in &self.0 {
            let sigma = layer.contains("psf-sigma");
            let fwhm = layer.contains("psf-fwhm-mm");
            if sigma && fwhm {
                return Err(CliError::Usage("--psf-sigma and --psf-fwhm-mm are mutually exclusive".into()));
            }
            if sigma {
                return Ok(layer.require("psf-sigma")?);
            }
            if fwhm {
                let pixel: f64 = self
                    .get("pixel-mm")?
                    .ok_or_else(|| CliError::Usage("--psf-fwhm-mm needs --pixel-mm".into()))?;
                return Ok(fwhm_to_sigma(layer.require("psf-fwhm-mm")?, pixel)?);
            }
        }
        Ok(DEFAULT_PSF_SIGMA)
    }
}

fn flags() -> Config {
    Config::default()
}

fn put<T: ToString>(c: &mut Config, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        c.set(key, v.to_string());
    }
}

fn put_flag(c: &mut Config, key: &str, on: bool) {
    if on {
        c.set(key, true);
    }
}

fn put_psf(c: &mut Config, psf: &PsfArgs) {
    put(c, "psf-sigma", &psf.psf_sigma);
    put(c, "psf-fwhm-mm", &psf.psf_fwhm_mm);
    put(c, "pixel-mm", &psf.pixel_mm);
}

fn preset(name: &str) -> CliResult<Config> {
    match name {
        "hr-scanner" => {
            let mut c = Config::default();
            c.set("psf-fwhm-mm", 6.0);
            c.set("pixel-mm", 2.2);
            c.set("lambda", 5.0);
            Ok(c)
        }
        other => Err(CliError::Usage(format!("unknown preset `{other}` (expected hr-scanner)"))),
    }
}

fn parse_list<T>(s: &str, what: &str) -> CliResult<Vec<T>>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|t| t.trim().parse().map_err(|e| CliError::Usage(format!("{what} `{t}`: {e}"))))
        .collect()
}

fn write_outputs(grid: &ImageGrid, output: &Path, pgm: Option<PathBuf>) -> CliResult<()> {
    write_image(output, grid)?;
    if let Some(p) = pgm {
        write_pgm16(p, grid)?;
    }
    Ok(())
}

fn phantom(args: PhantomArgs, file: Config) -> CliResult<()> {
    let mut f = flags();
    put(&mut f, "output", &args.output.map(|p| p.display().to_string()));
    put(&mut f, "size", &args.size);
    put(&mut f, "width", &args.width);
    put(&mut f, "height", &args.height);
    put(&mut f, "pgm", &args.pgm.map(|p| p.display().to_string()));
    let l = Layers(vec![f, file]);
    let size = l.or("size", 128)?;
    let grid = shepp_logan_modified(l.or("width", size)?, l.or("height", size)?)?;
    let output: PathBuf = l.require("output")?;
    write_outputs(&grid, &output, l.get("pgm")?)
}

fn degrade_cmd(args: DegradeArgs, file: Config) -> CliResult<()> {
    let mut f = flags();
    put(&mut f, "input", &args.input.map(|p| p.display().to_string()));
    put(&mut f, "output", &args.output.map(|p| p.display().to_string()));
    put(&mut f, "beta", &args.beta);
    put_psf(&mut f, &args.psf);
    put(&mut f, "seed", &args.seed);
    put(&mut f, "padding", &args.padding);
    put(&mut f, "pgm", &args.pgm.map(|p| p.display().to_string()));
    let l = Layers(vec![f, file]);
    let input: PathBuf = l.require("input")?;
    let output: PathBuf = l.require("output")?;
    let spec = DegradationSpec {
        padding: parse_enum(&l, "padding", Padding::Replicate)?,
        ..DegradationSpec::new(l.or("beta", 1.0)?, l.psf_sigma()?, l.or("seed", 1)?)
    };
    let u0 = read_image(input)?;
    let (z, _) = degrade(&u0, &spec)?;
    write_outputs(&z, &output, l.get("pgm")?)
}

fn parse_enum<T>(l: &Layers, key: &str, default: T) -> CliResult<T>
where
    T: FromStr<Err = String>,
{
    match l.get::<String>(key)? {
        None => Ok(default),
        Some(s) => s.parse().map_err(CliError::Usage),
    }
}

fn restore_cmd(args: RestoreArgs, file: Config) -> CliResult<()> {
    let mut f = flags();
    put(&mut f, "input", &args.input.map(|p| p.display().to_string()));
    put(&mut f, "output", &args.output.map(|p| p.display().to_string()));
    put(&mut f, "mode", &args.mode);
    put(&mut f, "lambda", &args.lambda);
    put_flag(&mut f, "auto-lambda", args.auto_lambda);
    put(&mut f, "alpha", &args.alpha);
    put_psf(&mut f, &args.psf);
    put(&mut f, "max-iters", &args.max_iters);
    put(&mut f, "tol", &args.tol);
    put(&mut f, "seed", &args.seed);
    put_flag(&mut f, "post-clamp", args.post_clamp);
    put(&mut f, "padding", &args.padding);
    put(&mut f, "meta-iters", &args.meta_iters);
    put(&mut f, "support", &args.support);
    put(&mut f, "constraint-prox", &args.constraint_prox);
    put(&mut f, "trace", &args.trace.map(|p| p.display().to_string()));
    put(&mut f, "pgm", &args.pgm.map(|p| p.display().to_string()));
    let preset_name = args.preset.clone().or(file.get("preset")?);
    let mut layers = vec![f];
    if let Some(name) = preset_name {
        layers.push(preset(&name)?);
    }
    layers.push(file);
    let l = Layers(layers);

    let input: PathBuf = l.require("input")?;
    let output: PathBuf = l.require("output")?;
    let auto = l.flag("auto-lambda")?;
    let lambda: Option<f64> = l.get("lambda")?;
    if !auto && lambda.is_none() {
        return Err(CliError::Usage("give --lambda, --auto-lambda or a --preset".into()));
    }
    let defaults = SolverConfig::default();
    let cfg = SolverConfig {
        mode: parse_enum(&l, "mode", Mode::Tgv)?,
        alpha: l.or("alpha", defaults.alpha)?,
        lambda: lambda.unwrap_or(1.0),
        max_iters: l.or("max-iters", defaults.max_iters)?,
        rel_tol: l.or("tol", defaults.rel_tol)?,
        padding: parse_enum(&l, "padding", Padding::Replicate)?,
        post_clamp: l.flag("post-clamp")?,
        constraint_prox: parse_enum(&l, "constraint-prox", defaults.constraint_prox)?,
        ..defaults
    };
    cfg.validate()?;
    let kernel = BlurKernel::gaussian(l.psf_sigma()?)?;
    let z = read_image(input)?;
    let mut restorer = Restorer::new(&z, &kernel, cfg.padding)?;
    if let Some(seed) = l.get("seed")? {
        restorer = restorer.with_norm_seed(seed);
    }

    let (result, tuned) = if auto {
        let opts = TuneOptions {
            meta_iters: l.or("meta-iters", TuneOptions::default().meta_iters)?,
            lambda0: cfg.lambda,
            support: parse_enum::<SupportCount>(&l, "support", SupportCount::default())?,
            ..TuneOptions::default()
        };
        let t = tune_with(&restorer, &cfg, &opts)?;
        if let Some(p) = l.get::<PathBuf>("trace")? {
            write_trace_csv(std::fs::File::create(p).map_err(pet_tgv::Error::from)?, &t)?;
        }
        (t.final_result.clone(), Some(t))
    } else {
        (restorer.restore(&cfg, None)?, None)
    };
    write_outputs(&result.u_hat, &output, l.get("pgm")?)?;

    println!("mode={}", cfg.mode);
    match &tuned {
        Some(t) => {
            println!("lambda={}", t.final_lambda());
            println!("kl_ratio={}", t.final_ratio());
            println!("meta_iterations={}", t.meta_iterations);
            println!("iterations_total={}", t.total_iterations());
        }
        None => {
            println!("lambda={}", cfg.lambda);
            println!("iterations={}", result.iterations);
        }
    }
    println!("converged={}", result.converged);
    println!("kl={}", result.kl_value);
    println!("wall_time={:.3}", result.wall_time);
    Ok(())
}

fn sweep_cmd(args: SweepArgs, file: Config) -> CliResult<()> {
    let mut f = flags();
    put(&mut f, "output", &args.output.map(|p| p.display().to_string()));
    put(&mut f, "size", &args.size);
    put(&mut f, "betas", &args.betas);
    put(&mut f, "num-betas", &args.num_betas);
    put(&mut f, "modes", &args.modes);
    put(&mut f, "psf-sigma", &args.psf_sigma);
    put(&mut f, "seed", &args.seed);
    put(&mut f, "alpha", &args.alpha);
    put(&mut f, "meta-iters", &args.meta_iters);
    put(&mut f, "max-iters", &args.max_iters);
    put(&mut f, "tol", &args.tol);
    put_flag(&mut f, "no-timing", args.no_timing);
    put(&mut f, "threads", &args.threads);
    let l = Layers(vec![f, file]);

    let defaults = SweepConfig::default();
    let betas = match l.get::<String>("betas")? {
        Some(s) => parse_list(&s, "beta")?,
        None => beta_grid(l.or("num-betas", 13)?, -2.0, 2.0),
    };
    let modes = match l.get::<String>("modes")? {
        Some(s) => parse_list::<Mode>(&s, "mode")?,
        None => defaults.modes.clone(),
    };
    let size = l.or("size", defaults.width)?;
    let cfg = SweepConfig {
        width: size,
        height: size,
        betas,
        modes,
        psf_sigma: l.or("psf-sigma", defaults.psf_sigma)?,
        base_seed: l.or("seed", defaults.base_seed)?,
        solver: SolverConfig {
            alpha: l.or("alpha", defaults.solver.alpha)?,
            max_iters: l.or("max-iters", defaults.solver.max_iters)?,
            rel_tol: l.or("tol", defaults.solver.rel_tol)?,
            ..defaults.solver.clone()
        },
        tune: TuneOptions {
            meta_iters: l.or("meta-iters", defaults.tune.meta_iters)?,
            ..defaults.tune
        },
        record_timing: !l.flag("no-timing")?,
    };
    cfg.solver.validate()?;

    let run = || run_experiment_sweep(&cfg);
    let rows = match l.get::<usize>("threads")? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    match l.get::<PathBuf>("output")? {
        Some(p) => write_metrics_csv(std::fs::File::create(p).map_err(pet_tgv::Error::from)?, &rows)?,
        None => write_metrics_csv(std::io::stdout().lock(), &rows)?,
    }
    for r in rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("beta={} mode={}: {}", r.beta, r.mode, r.error.as_deref().unwrap_or_default());
    }
    Ok(())
}

fn snr_cmd(args: SnrArgs) -> CliResult<()> {
    let x = read_image(args.image)?;
    let y = read_image(args.reference)?;
    println!("{}", snr(&x, &y)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Phantom(a) => phantom(a, file),
        Command::Degrade(a) => degrade_cmd(a, file),
        Command::Restore(a) => restore_cmd(a, file),
        Command::Sweep(a) => sweep_cmd(a, file),
        Command::Snr(a) => snr_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, msg) = match e {
                CliError::Usage(m) => (EXIT_USAGE, m),
                CliError::Data(m) => (EXIT_DATA, m),
                CliError::Numerical(m) => (EXIT_NUMERICAL, m),
            };
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
