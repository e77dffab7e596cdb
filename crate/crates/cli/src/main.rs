use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use zeno_core::bacon_shor::{self, FigureEngine, FigureOptions, GaugeInit};
use zeno_core::channel::{self, ChannelSequence, KrausChannel, DEFAULT_COMPOSE_CAP};
use zeno_core::effective::effective_hamiltonian;
use zeno_core::fixedpoint::{fixed_point_limit, Method};
use zeno_core::io::{self, ChannelFile, InputRecord, Manifest, RunStatus};
use zeno_core::operator::{hermitian_eig, ComplexOperator, DensityOperator};
use zeno_core::structure::{decompose, verify_decomposition};
use zeno_core::zeno::{
    default_checkpoints, evolve_nonselective_recorded, run_trajectories, run_zeno, InitialState, ZenoConfig,
    DEFAULT_CHECKPOINTS,
};
use zeno_core::{Error, Result, Tolerances};

const THREADS_ENV: &str = "ZENO_DYN_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "zeno-dyn",
    version,
    about = "Zeno dynamics of Kraus channels: structure, effective Hamiltonians, repeated-measurement evolution",
    after_help = "Every run writes manifest.json beside its outputs.\n\
                  Exit codes: 0 success, 1 validation failure, 2 numerical failure.\n\
                  ZENO_DYN_THREADS caps the number of trajectory worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Directory for reports and the manifest.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// JSON file overriding entries of the tolerance table.
    #[arg(long)]
    tolerances: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check completeness of a channel file.
    Validate {
        channel: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Decompose the Hilbert space into complement and (S, R) blocks.
    Decompose {
        channel: PathBuf,
        /// Seed of the randomized commutant search.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Cesaro limit S_inf(A); A defaults to the identity.
    FixedPoint {
        channel: PathBuf,
        #[arg(long)]
        operator: Option<PathBuf>,
        #[arg(long, default_value = "spectral", value_parser = parse_method)]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Effective Hamiltonian per block and embedded in the full space.
    EffectiveHam {
        channel: PathBuf,
        hamiltonian: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Non-selective evolution [P U(tau/N)]^N with deviation and error bound.
    Evolve {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Selective-measurement trajectories.
    Trajectories {
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// <Z_L>(t) of the 3x3 Bacon-Shor code under repeated gauge measurements.
    ///
    /// The initial state is |0_L> (the physical |0...0>, or X1 X4 |0...0> with
    /// --gauge-init flipped-pair); the logical initial state is an assumption.
    BaconShor {
        /// Measurement counts; 0 means free evolution.
        #[arg(long, value_delimiter = ',', default_value = "0,500,1000,5000")]
        n: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        trajectories: usize,
        /// Weak-measurement strength in [0, 1); 0 is projective.
        #[arg(long, default_value_t = 0.0)]
        zeta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        /// Total time; defaults to 4 pi / omega (eight logical Hadamards).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long, value_enum, default_value_t = GaugeArg::AllZero)]
        gauge_init: GaugeArg,
        /// `dense` is exact non-selective evolution, limited to N <= 200.
        #[arg(long, value_enum, default_value_t = EngineArg::Trajectories)]
        engine: EngineArg,
        #[arg(long, default_value_t = DEFAULT_CHECKPOINTS)]
        checkpoints: usize,
        /// CSV output; the summary and manifest go beside it.
        #[arg(long, default_value = "fig1.csv")]
        out: PathBuf,
        #[arg(long)]
        tolerances: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum GaugeArg {
    AllZero,
    FlippedPair,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EngineArg {
    Trajectories,
    Dense,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

/// Input of `evolve` and `trajectories`. Paths are relative to the config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    /// One channel file, or several applied in order.
    channel: ChannelRef,
    hamiltonian: PathBuf,
    initial_state: PathBuf,
    observable: Option<PathBuf>,
    tau: f64,
    n: usize,
    split: Option<[usize; 2]>,
    #[serde(default = "default_checkpoint_count")]
    checkpoints: usize,
    tolerances: Option<Tolerances>,
    /// Seed of the decomposition used for the error bound.
    #[serde(default)]
    decompose_seed: u64,
    /// Compute deviation and bound when the initial state is a fixed point.
    #[serde(default = "yes")]
    bound: bool,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ChannelRef {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

fn default_checkpoint_count() -> usize {
    DEFAULT_CHECKPOINTS
}

fn yes() -> bool {
    true
}

/// Accumulates the manifest while a command runs.
struct Run {
    manifest: Manifest,
    out_dir: PathBuf,
}

impl Run {
    fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(InputRecord::from_path(path));
    }

    fn write(&mut self, path: &Path, text: &str) -> Result<()> {
        io::write_text(path, text)?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<String> {
        let text = io::to_json_string(value)?;
        let path = self.out_dir.join(name);
        self.write(&path, &text)?;
        Ok(text)
    }

    fn tolerances(&mut self, path: Option<&Path>) -> Result<Tolerances> {
        let tol = match path {
            Some(p) => {
                self.input(p);
                io::read_json(p)?
            }
            None => Tolerances::default(),
        };
        self.manifest.tolerances = tol;
        Ok(tol)
    }

    fn channel_file(&mut self, path: &Path) -> Result<ChannelFile> {
        self.input(path);
        io::read_json(path)
    }

    fn channel(&mut self, path: &Path, tol: &Tolerances) -> Result<KrausChannel> {
        self.channel_file(path)?.into_channel(tol)
    }

    fn operator(&mut self, path: &Path) -> Result<ComplexOperator> {
        self.input(path);
        io::read_operator(path)
    }
}

fn main() -> ExitCode {
    ExitCode::from(run_cli(std::env::args_os()) as u8)
}

fn run_cli(args: impl IntoIterator<Item = OsString>) -> i32 {
    let args: Vec<OsString> = args.into_iter().collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let (command, out_dir) = describe(&cli.command);
    let mut run = Run {
        manifest: Manifest::new("zeno-dyn", env!("CARGO_PKG_VERSION"), command),
        out_dir,
    };
    run.manifest.arguments = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let result = configure_threads().and_then(|_| dispatch(cli.command, &mut run));
    let status = match &result {
        Ok(status) => *status,
        Err(e) => {
            eprintln!("error: {e}");
            run.manifest.error = Some(e.to_string());
            RunStatus::of_error(e)
        }
    };
    run.manifest.status = status;
    let manifest_path = run.out_dir.join("manifest.json");
    let written = io::to_json_string(&run.manifest).and_then(|t| io::write_text(&manifest_path, &t));
    if let Err(e) = written {
        eprintln!("error: could not write manifest: {e}");
        return status.exit_code().max(1);
    }
    status.exit_code()
}

fn describe(command: &Command) -> (&'static str, PathBuf) {
    match command {
        Command::Validate { common, .. } => ("validate", common.out_dir.clone()),
        Command::Decompose { common, .. } => ("decompose", common.out_dir.clone()),
        Command::FixedPoint { common, .. } => ("fixed-point", common.out_dir.clone()),
        Command::EffectiveHam { common, .. } => ("effective-ham", common.out_dir.clone()),
        Command::Evolve { common, .. } => ("evolve", common.out_dir.clone()),
        Command::Trajectories { common, .. } => ("trajectories", common.out_dir.clone()),
        Command::BaconShor { out, .. } => (
            "bacon-shor",
            out.parent()
                .filter(|p| !p.as_os_str().is_empty())
                .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
        ),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidInput(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A second initialisation only fails when a pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(())
}

fn dispatch(command: Command, run: &mut Run) -> Result<RunStatus> {
    match command {
        Command::Validate { channel, common } => validate_cmd(run, &channel, &common),
        Command::Decompose { channel, seed, common } => decompose_cmd(run, &channel, seed, &common),
        Command::FixedPoint {
            channel,
            operator,
            method,
            common,
        } => fixed_point_cmd(run, &channel, operator.as_deref(), method, &common),
        Command::EffectiveHam {
            channel,
            hamiltonian,
            seed,
            common,
        } => effective_cmd(run, &channel, &hamiltonian, seed, &common),
        Command::Evolve { config, common } => evolve_cmd(run, &config, &common),
        Command::Trajectories {
            config,
            count,
            seed,
            common,
        } => trajectories_cmd(run, &config, count, seed, &common),
        Command::BaconShor {
            n,
            trajectories,
            zeta,
            seed,
            omega,
            tau,
            gauge_init,
            engine,
            checkpoints,
            out,
            tolerances,
        } => {
            let tol = run.tolerances(tolerances.as_deref())?;
            run.manifest.seed = Some(seed);
            let mut opts = FigureOptions::new(omega, n);
            if let Some(tau) = tau {
                opts.tau = tau;
            }
            opts.trajectories = trajectories;
            opts.seed = seed;
            opts.checkpoints = checkpoints;
            opts.gauge_init = match gauge_init {
                GaugeArg::AllZero => GaugeInit::AllZero,
                GaugeArg::FlippedPair => GaugeInit::FlippedPair,
            };
            opts.engine = match engine {
                EngineArg::Trajectories => FigureEngine::Trajectories,
                EngineArg::Dense => FigureEngine::Dense,
            };
            bacon_shor_cmd(run, omega, zeta, &opts, &out, &tol)
        }
    }
}

fn validate_cmd(run: &mut Run, path: &Path, common: &Common) -> Result<RunStatus> {
    let tol = run.tolerances(common.tolerances.as_deref())?;
    let file = run.channel_file(path)?;
    for m in &file.kraus {
        if m.nrows() != file.dim || m.ncols() != file.dim {
            return Err(Error::DimensionMismatch {
                expected: file.dim,
                found: if m.nrows() != file.dim { m.nrows() } else { m.ncols() },
            });
        }
    }
    let report = channel::validate(&file.kraus, &tol)?;
    print!("{}", run.write_json("validate.json", &report)?);
    Ok(if report.ok {
        RunStatus::Success
    } else {
        RunStatus::ValidationFailure
    })
}

fn decompose_cmd(run: &mut Run, path: &Path, seed: u64, common: &Common) -> Result<RunStatus> {
    let tol = run.tolerances(common.tolerances.as_deref())?;
    let ch = run.channel(path, &tol)?;
    run.manifest.seed = Some(seed);
    let dec = decompose(&ch, &tol, seed)?;
    let verification = verify_decomposition(&ch, &dec, tol.structure)?;
    let blocks: Vec<_> = dec
        .blocks
        .iter()
        .map(|b| {
            let eig = hermitian_eig(&b.lambda_r, tol.herm)?;
            Ok(json!({
                "d_s": b.shape.d_s,
                "d_r": b.shape.d_r,
                "lambda_r_eigenvalues": eig.values,
            }))
        })
        .collect::<Result<_>>()?;
    let report = json!({
        "dim": dec.dim,
        "complement_dim": dec.complement_dim(),
        "blocks": blocks,
        "verification": verification,
    });
    print!("{}", run.write_json("decompose.json", &report)?);
    Ok(RunStatus::Success)
}

fn fixed_point_cmd(
    run: &mut Run,
    path: &Path,
    operator: Option<&Path>,
    method: Method,
    common: &Common,
) -> Result<RunStatus> {
    let tol = run.tolerances(common.tolerances.as_deref())?;
    let ch = run.channel(path, &tol)?;
    let a = match operator {
        Some(p) => {
            let a = run.operator(p)?;
            if a.nrows() != ch.dim() || !a.is_square() {
                return Err(Error::DimensionMismatch {
                    expected: ch.dim(),
                    found: a.nrows(),
                });
            }
            a
        }
        None => ComplexOperator::identity(ch.dim()),
    };
    let r = fixed_point_limit(&ch, &a, method, tol.fix, &tol)?;
    let report = json!({
        "method": method,
        "iterations": r.iterations,
        "residual": r.residual,
        "result": r.value,
    });
    print!("{}", run.write_json("fixed-point.json", &report)?);
    Ok(RunStatus::Success)
}

fn effective_cmd(run: &mut Run, path: &Path, h_path: &Path, seed: u64, common: &Common) -> Result<RunStatus> {
    let tol = run.tolerances(common.tolerances.as_deref())?;
    let ch = run.channel(path, &tol)?;
    let h = run.operator(h_path)?;
    check_hamiltonian(&h, ch.dim(), &tol)?;
    run.manifest.seed = Some(seed);
    let dec = decompose(&ch, &tol, seed)?;
    let heff = effective_hamiltonian(&dec, &h, &tol)?;
    let blocks: Vec<_> = dec
        .blocks
        .iter()
        .zip(&heff.per_block)
        .map(|(b, hs)| json!({ "d_s": b.shape.d_s, "d_r": b.shape.d_r, "h_s": hs }))
        .collect();
    let report = json!({
        "complement_dim": dec.complement_dim(),
        "blocks": blocks,
        "embedded": heff.embedded,
        "j_tilde": heff.trace_norm_j_tilde,
    });
    print!("{}", run.write_json("effective-ham.json", &report)?);
    Ok(RunStatus::Success)
}

fn check_hamiltonian(h: &ComplexOperator, dim: usize, tol: &Tolerances) -> Result<()> {
    if h.nrows() != dim || !h.is_square() {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: h.nrows(),
        });
    }
    h.ensure_hermitian(tol.herm)
}

/// Everything `evolve` and `trajectories` need, validated before any computation.
struct Loaded {
    cfg: ZenoConfig,
    rho0: DensityOperator,
    observable: Option<ComplexOperator>,
    checkpoints: Vec<usize>,
    raw: RunConfig,
}

fn load_config(run: &mut Run, path: &Path, common: &Common) -> Result<Loaded> {
    run.input(path);
    let raw: RunConfig = io::read_json(path)?;
    let tol = match (&raw.tolerances, &common.tolerances) {
        (_, Some(_)) => run.tolerances(common.tolerances.as_deref())?,
        (Some(t), None) => {
            run.manifest.tolerances = *t;
            *t
        }
        (None, None) => run.tolerances(None)?,
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let paths = match &raw.channel {
        ChannelRef::One(p) => vec![p.clone()],
        ChannelRef::Many(ps) => ps.clone(),
    };
    let stages = paths
        .iter()
        .map(|p| run.channel(&base.join(p), &tol))
        .collect::<Result<Vec<_>>>()?;
    let sequence = ChannelSequence::new(stages)?;
    let h = run.operator(&base.join(&raw.hamiltonian))?;
    check_hamiltonian(&h, sequence.dim(), &tol)?;
    run.input(&base.join(&raw.initial_state));
    let rho0_op = io::read_operator(&base.join(&raw.initial_state))?;
    if rho0_op.nrows() != sequence.dim() {
        return Err(Error::DimensionMismatch {
            expected: sequence.dim(),
            found: rho0_op.nrows(),
        });
    }
    let rho0 = DensityOperator::new(rho0_op, &tol)?;
    let observable = match &raw.observable {
        Some(p) => {
            let b = run.operator(&base.join(p))?;
            check_hamiltonian(&b, sequence.dim(), &tol)?;
            Some(b)
        }
        None => None,
    };
    let mut cfg = ZenoConfig::new(h, sequence, raw.tau, raw.n)?.with_tolerances(tol);
    cfg = match raw.split {
        Some([n1, n2]) => cfg.with_split(n1, n2)?,
        None => cfg.with_default_split(),
    };
    let checkpoints = default_checkpoints(raw.n, raw.checkpoints);
    Ok(Loaded {
        cfg,
        rho0,
        observable,
        checkpoints,
        raw,
    })
}

fn evolve_cmd(run: &mut Run, path: &Path, common: &Common) -> Result<RunStatus> {
    let loaded = load_config(run, path, common)?;
    let cfg = &loaded.cfg;
    let observables: Vec<ComplexOperator> = loaded.observable.iter().cloned().collect();
    let (final_state, records) = evolve_nonselective_recorded(cfg, &loaded.rho0, &loaded.checkpoints, &observables)?;
    if !observables.is_empty() {
        let steps: Vec<usize> = records.iter().map(|r| r.step).collect();
        let times: Vec<f64> = records.iter().map(|r| r.time).collect();
        let mean: Vec<f64> = records.iter().map(|r| r.values[0]).collect();
        let csv = io::series_csv_string(&steps, &times, &mean, &vec![0.0; steps.len()]);
        let csv_path = run.out_dir.join("evolve.csv");
        run.write(&csv_path, &csv)?;
    }
    let mut report = json!({
        "n": cfg.n,
        "tau": cfg.tau,
        "split": cfg.split,
        "final_state": final_state.op(),
    });
    if loaded.raw.bound {
        match zeno_report(cfg, &loaded.rho0, loaded.raw.decompose_seed)? {
            Ok(z) => {
                report["deviation"] = json!(z.0);
                report["bound"] = json!(z.1);
            }
            Err(reason) => report["bound_skipped"] = json!(reason),
        }
    }
    run.write_json("evolve.json", &report)?;
    println!("wrote {}", run.manifest.outputs.join(", "));
    Ok(RunStatus::Success)
}

/// Deviation from the Zeno limit and the error bound, or the reason they do not apply.
fn zeno_report(
    cfg: &ZenoConfig,
    rho0: &DensityOperator,
    seed: u64,
) -> Result<std::result::Result<(f64, zeno_core::zeno::BoundParts), String>> {
    let tol = cfg.tolerances;
    let ch = match cfg.channel.stages() {
        [single] => single.clone(),
        _ => cfg.channel.to_channel(DEFAULT_COMPOSE_CAP)?,
    };
    let dec = decompose(&ch, &tol, seed)?;
    let heff = effective_hamiltonian(&dec, &cfg.hamiltonian, &tol)?;
    match run_zeno(cfg, &dec, &heff, rho0) {
        Ok(r) => Ok(Ok((r.deviation, r.bound_parts))),
        Err(Error::NotFixedPoint { residual, .. }) => Ok(Err(format!(
            "initial state is not a fixed point of the channel (residual {residual:.3e})"
        ))),
        Err(e) => Err(e),
    }
}

fn trajectories_cmd(run: &mut Run, path: &Path, count: usize, seed: u64, common: &Common) -> Result<RunStatus> {
    let loaded = load_config(run, path, common)?;
    run.manifest.seed = Some(seed);
    let b = loaded
        .observable
        .clone()
        .ok_or_else(|| Error::InvalidInput("trajectories need an \"observable\" in the config".into()))?;
    let tol = loaded.cfg.tolerances;
    let eig = hermitian_eig(loaded.rho0.op(), tol.herm)?;
    let top = eig.values.len() - 1;
    let init = if eig.values[top] >= 1.0 - tol.psd {
        InitialState::Pure(eig.vectors.column(top))
    } else {
        InitialState::Mixed(loaded.rho0.clone())
    };
    let s = run_trajectories(&loaded.cfg, &init, count, seed, &loaded.checkpoints, &[b])?;
    let csv = io::series_csv_string(&s.steps, &s.times, &s.mean[0], &s.std_err[0]);
    let csv_path = run.out_dir.join("trajectories.csv");
    run.write(&csv_path, &csv)?;
    let last = s.steps.len() - 1;
    let report = json!({
        "count": s.count,
        "seed": seed,
        "engine": match init { InitialState::Pure(_) => "pure", InitialState::Mixed(_) => "density" },
        "final_mean": s.mean[0][last],
        "final_std_dev": s.std_dev[0][last],
        "final_std_err": s.std_err[0][last],
        "final_values": s.final_values.iter().map(|v| v[0]).collect::<Vec<_>>(),
    });
    run.write_json("trajectories.json", &report)?;
    println!("wrote {}", run.manifest.outputs.join(", "));
    Ok(RunStatus::Success)
}

fn bacon_shor_cmd(
    run: &mut Run,
    omega: f64,
    zeta: f64,
    opts: &FigureOptions,
    out: &Path,
    tol: &Tolerances,
) -> Result<RunStatus> {
    let setup = bacon_shor::build_setup(omega, zeta)?;
    let series = bacon_shor::run_figure(&setup, opts, tol)?;
    let mut csv = Vec::new();
    bacon_shor::write_figure_csv(&series, &mut csv).map_err(|source| Error::Io {
        path: out.display().to_string(),
        source,
    })?;
    run.write(out, &String::from_utf8(csv).expect("ASCII output"))?;
    let control = bacon_shor::effective_logical_hamiltonian(&setup)?.control;
    let per_n = series
        .iter()
        .map(|s| {
            let ideal = |t: f64| bacon_shor::ideal_logical_bloch(&control, t, tol).map(|r| r[2]);
            let mut max_dev = 0.0f64;
            for (&t, &z) in s.times.iter().zip(s.z_mean()) {
                max_dev = max_dev.max((z - ideal(t)?).abs());
            }
            let half = s.z_mean().len() / 2;
            let late = &s.z_mean()[half..];
            Ok(json!({
                "n": s.n,
                "max_deviation_from_effective": max_dev,
                "late_time_mean_abs_z": late.iter().map(|v| v.abs()).sum::<f64>() / late.len() as f64,
                "final_logical_bloch": s.final_bloch(),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = json!({
        "omega": omega,
        "zeta": zeta,
        "tau": opts.tau,
        "trajectories": opts.trajectories,
        "series": per_n,
    });
    let summary = out.with_extension("json");
    let text = io::to_json_string(&report)?;
    run.write(&summary, &text)?;
    print!("{text}");
    Ok(RunStatus::Success)
}
