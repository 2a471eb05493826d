use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use w2s_core::alignment::kappa;
use w2s_core::config::{load_config, ExperimentConfig, Tolerances};
use w2s_core::detequiv::{det_risk, residual, solve_nu, DetEquivProblem};
use w2s_core::experiments::{build_spectrum, build_target, emit, fit_power_law, parse_csv, run, RunManifest};
use w2s_core::features::{random_direction, sample, Target};
use w2s_core::rng::{salt, Seed};
use w2s_core::spectrum::{linear_spectrum, relu_spectrum, KernelSpectrum, LinearKind, ModelTag, DEFAULT_TRUNC_TOL};
use w2s_core::student::trajectory;
use w2s_core::teacher::{train_with_cutoff, TeacherModel};
use w2s_core::verify::bound_sweep;
use w2s_core::{Error, Result};

/// Environment variable naming the default output directory of `run`.
const OUT_DIR_ENV: &str = "W2S_OUT_DIR";

/// `print!` that exits quietly when the reader has gone away.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = write!(std::io::stdout(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
            return Err(e.into());
        }
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{ out!($($arg)*); out!("\n"); }};
}

#[derive(Parser)]
#[command(name = "w2s", version, about = "Teacher/student experiments on random feature models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Relu,
    Linear,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    /// `k` unit eigenvalues and a flat tail
    Spiked,
    /// one unit eigenvalue and a heavy flat tail
    HeavyTail,
}

#[derive(Clone, Copy, ValueEnum)]
enum TargetKind {
    Linear,
    Ridge,
}

#[derive(clap::Args)]
struct SpectrumArgs {
    #[arg(long, value_enum)]
    model: Model,
    #[arg(long)]
    d: usize,
    /// Relative tail tolerance of the relu truncation
    #[arg(long, default_value_t = DEFAULT_TRUNC_TOL)]
    tol: f64,
    /// Covariance family of the linear model
    #[arg(long, value_enum, default_value = "spiked")]
    family: Family,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
}

impl SpectrumArgs {
    fn build(&self) -> Result<KernelSpectrum> {
        match self.model {
            Model::Relu => relu_spectrum(self.d, self.tol),
            Model::Linear => linear_spectrum(&match self.family {
                Family::Spiked => LinearKind::Spiked { k: self.k, d: self.d },
                Family::HeavyTail => LinearKind::HeavyTail { alpha: self.alpha, d: self.d },
            }),
        }
    }
}

#[derive(clap::Args)]
struct CellArgs {
    #[arg(long)]
    config: PathBuf,
    /// Teacher width; defaults to the first entry of m_list
    #[arg(long)]
    m: Option<usize>,
    /// Seed; defaults to seed_base
    #[arg(long)]
    seed: Option<u64>,
    /// Accept unknown config keys
    #[arg(long)]
    allow_unknown: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Kernel eigenvalues, multiplicities and cumulative trace as CSV
    Spectrum(SpectrumArgs),
    /// Train the optimal teacher for one (m, seed) cell of a config
    Teacher {
        #[command(flatten)]
        cell: CellArgs,
        /// Write the trained teacher to this file
        #[arg(long)]
        save: Option<PathBuf>,
    },
    /// Student loss curve for a saved teacher, with the optimal stopping time
    Student {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value_t = 1e-2)]
        tmin: f64,
        #[arg(long, default_value_t = 1e6)]
        tmax: f64,
        #[arg(long, default_value_t = 200)]
        points: usize,
    },
    /// Teacher/student feature alignment at a group boundary, with its eigenvalue oracle
    Kappa {
        #[command(flatten)]
        cell: CellArgs,
        /// Number of leading eigengroups
        #[arg(long = "S", alias = "s")]
        s: usize,
    },
    /// Check the lower, upper and bootstrap-chain bounds on random instances
    VerifyBounds {
        /// Instances per model
        #[arg(long, default_value_t = 100)]
        sweep: usize,
        #[arg(long, default_value_t = 20)]
        chains: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Deterministic-equivalent teacher risk over a list of widths, as CSV
    DetEquiv {
        #[command(flatten)]
        spectrum: SpectrumArgs,
        #[arg(long, value_enum, default_value = "linear")]
        target: TargetKind,
        /// Harmonic order of a ridge target
        #[arg(long, default_value_t = 2)]
        order: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        m_list: Vec<usize>,
    },
    /// Run a seeded sweep from a config file and write CSV, SVG and manifest
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads (default: all cores)
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (default: $W2S_OUT_DIR or ./w2s-out)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override seed_base
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        allow_unknown: bool,
    },
    /// Power-law fit of L_ST against L_TE from a results CSV
    Fit {
        #[arg(long)]
        csv: PathBuf,
    },
}

/// Failure that maps to exit code 1 after the message is printed.
struct Failed(String);

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut manifest = RunManifest::new("-".into(), Tolerances::default());
    match dispatch(cli.command, &mut manifest) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(Failed(msg))) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprint!("{}", manifest.to_text());
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command, manifest: &mut RunManifest) -> Result<std::result::Result<(), Failed>> {
    match cmd {
        Command::Spectrum(args) => {
            let s = args.build()?;
            out!("{}", s.to_csv()?);
        }
        Command::Teacher { cell, save } => {
            let (cfg, kernel, _, tm) = train_cell(&cell, manifest)?;
            outln!("model={}\nd={}\nm={}\nloss_te={:e}", cfg.model, kernel.d, cfg_m(&cell, &cfg), tm.loss_te);
            outln!("rank={}\nnorm2={:e}\nsupport={}", tm.rank, tm.norm2, tm.support);
            if let Some(p) = save {
                std::fs::write(&p, tm.to_text())?;
                outln!("saved={}", p.display());
            }
        }
        Command::Student { teacher, tmin, tmax, points } => {
            let tm = TeacherModel::from_text(&std::fs::read_to_string(&teacher)?)?;
            let tr = trajectory(&tm, tmin, tmax, points)?;
            outln!("# t_opt={:e} L_ST_opt={:e} L_TE={:e}", tr.t_opt, tr.lst_opt, tm.loss_te);
            outln!("t,L_ST,loss_to_teacher");
            for i in 0..tr.times.len() {
                outln!("{:e},{:e},{:e}", tr.times[i], tr.loss_st[i], tr.loss_to_teacher[i]);
            }
        }
        Command::Kappa { cell, s } => {
            let (cfg, kernel, ens, tm) = train_cell(&cell, manifest)?;
            let r = kappa(&ens, &kernel, s)?;
            let count = kernel.eigen_count(s);
            outln!("S={s}\nm={}\neigen_count={count}\nsupport={}", cfg_m(&cell, &cfg), tm.support);
            outln!("kappa={:e}\nkappa_oracle={:e}\nlambda_top={:e}", r.kappa, r.kappa_oracle, r.lambda_top);
            outln!("oracle_domain={}", count >= ens.m as f64);
        }
        Command::VerifyBounds { sweep, chains, seed } => {
            let r = bound_sweep(sweep, chains, Seed(seed))?;
            outln!("instances={}\nfailed_instances={}", r.instances, r.failed_instances);
            outln!("pairs={}\nquad_violations={}\nquad_margin={:e}", r.pairs, r.quad_violations, r.quad_margin);
            outln!(
                "upper_instances={}\nupper_violations={}\nupper_margin={:e}",
                r.upper_instances, r.upper_violations, r.upper_margin
            );
            outln!("chains={}\nchain_violations={}", r.chains, r.chain_violations);
            if !r.all_hold() {
                return Ok(Err(Failed("bound violations found".into())));
            }
        }
        Command::DetEquiv { spectrum, target, order, m_list } => {
            let kernel = spectrum.build()?;
            let t = match (kernel.model, target) {
                (ModelTag::LinearDiagonal, TargetKind::Linear) => {
                    let k = match spectrum.family {
                        Family::Spiked => spectrum.k,
                        Family::HeavyTail => 1,
                    };
                    Target::leading_coordinates(k, &kernel)?
                }
                (ModelTag::ReluSphere, TargetKind::Linear) => {
                    Target::linear_direction(random_direction(kernel.d, Seed(0).child(salt::TARGET)), &kernel)?
                }
                (ModelTag::ReluSphere, TargetKind::Ridge) => {
                    Target::harmonic_ridge(order, random_direction(kernel.d, Seed(0).child(salt::TARGET)), &kernel)?
                }
                (ModelTag::LinearDiagonal, TargetKind::Ridge) => {
                    return Err(Error::InvalidTarget("ridge targets need the relu model".into()))
                }
            };
            let beta2 = t.group_mass(&kernel);
            outln!("m,nu,risk,residual");
            for m in m_list {
                let p = DetEquivProblem::from_spectrum(&kernel, beta2.clone(), m)?;
                let nu = solve_nu(&p)?;
                outln!("{m},{nu:e},{:e},{:e}", det_risk(&p, nu), residual(&p, nu));
            }
        }
        Command::Run { config, jobs, out, seed, allow_unknown } => {
            let mut cfg = load_config(&config, allow_unknown)?;
            if let Some(s) = seed {
                cfg.seed_base = s;
            }
            *manifest = RunManifest::new(cfg.hash(), cfg.tolerances);
            let dir = out
                .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("w2s-out"));
            let result = run(&cfg, jobs)?;
            *manifest = result.manifest.clone();
            for s in &result.summary {
                outln!(
                    "m={} d={} ok={} L_TE={:.4e} L_ST={:.4e} ratio={:.4} ratio2={:.4} ci=[{:.4}, {:.4}]",
                    s.m, s.d, s.n_ok, s.loss_te, s.loss_st, s.ratio, s.ratio2, s.ci_lo, s.ci_hi
                );
            }
            if let Some(f) = result.fit {
                outln!("fit exponent={:.4} r2={:.4} n={}", f.exponent, f.r2, f.n_points);
            }
            for p in emit(&result, &dir)? {
                outln!("wrote {}", p.display());
            }
            if !result.all_ok() {
                return Ok(Err(Failed(format!(
                    "{} failed cells, {} bound violations, {} overtraining violations",
                    result.failures(),
                    result.bound_violations(),
                    result.overtrain_violations()
                ))));
            }
        }
        Command::Fit { csv } => {
            let (hash, rows) = parse_csv(&std::fs::read_to_string(&csv)?)?;
            let pairs: Vec<(f64, f64)> = rows
                .iter()
                .map(|r| (r.values[0], r.values[2]))
                .filter(|(a, b)| a.is_finite() && b.is_finite())
                .collect();
            let f = fit_power_law(&pairs)?;
            if let Some(h) = hash {
                outln!("manifest={h}");
            }
            outln!("exponent={:.6}\nlog_prefactor={:.6}\nr2={:.6}\nn_points={}", f.exponent, f.log_prefactor, f.r2, f.n_points);
        }
    }
    Ok(Ok(()))
}

fn cfg_m(cell: &CellArgs, cfg: &ExperimentConfig) -> usize {
    cell.m.unwrap_or(cfg.m_list[0])
}

type Cell = (ExperimentConfig, KernelSpectrum, w2s_core::FeatureEnsemble, TeacherModel);

fn train_cell(cell: &CellArgs, manifest: &mut RunManifest) -> Result<Cell> {
    let cfg = load_config(&cell.config, cell.allow_unknown)?;
    *manifest = RunManifest::new(cfg.hash(), cfg.tolerances);
    let m = cfg_m(cell, &cfg);
    let seed = Seed(cell.seed.unwrap_or(cfg.seed_base));
    let kernel = build_spectrum(&cfg, cfg.d.resolve(m))?;
    let ens = sample(cfg.model, m, kernel.d, &kernel, seed)?;
    let target = build_target(&cfg, &kernel, seed)?;
    let tm = train_with_cutoff(&ens, &kernel, &target, cfg.tolerances.pinv_rel)?;
    Ok((cfg, kernel, ens, tm))
}
