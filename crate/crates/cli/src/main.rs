//! `cmra`: generate data, run list recovery, check the trace bounds, run
//! baselines and score candidates. See the README for file schemas.

mod config;
mod output;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cmra::baselines::{frequency_marching, pca_estimate, PcaInstance, PcaMethod, Path as PcaPath};
use cmra::correction::{CorrectionMode, CorrectionTable};
use cmra::io::{self, Layout};
use cmra::moments::{empirical_third_moment, exact_moment, sample_observations, Normalization, ObservationBatch, SignalSet, ZeroSumTensor3};
use cmra::spectral::{list_recovery, orbit_correlation, unit_real, RecoveryConfig, UMode};
use cmra::tensor::{ComplexTensor, RealTensor, RealVector};
use cmra::trace::{verify, RegionMode, VerifyOptions};
use cmra::Exec;
use config::{ConfigError, ExperimentConfig};
use output::{Manifest, Outputs};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "cmra", version, about = "Spectral recovery of circle signals from third moments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// TOML experiment config; flags below override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Byte cap for cached tables, e.g. 1073741824 or 1G.
    #[arg(long, global = true, value_parser = config::parse_bytes)]
    mem_cap: Option<u64>,
    /// Use exact moments of the true signals instead of observations.
    #[arg(long, global = true)]
    exact_moments: bool,
    /// Run one trial with u = θ^⊗5 for the first signal.
    #[arg(long, global = true)]
    planted_u: bool,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw signals and observations.
    Generate,
    /// Run list recovery on exact or empirical moments.
    Recover {
        /// Signal container; defaults to <out-dir>/signals.bin, else drawn from the seed.
        #[arg(long)]
        signals: Option<PathBuf>,
        /// Third-moment tensor container; overrides observations.
        #[arg(long)]
        moments: Option<PathBuf>,
        /// Observation container; defaults to <out-dir>/observations.bin.
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Enumerate trace-network labelings and check the counting bounds.
    Verify {
        #[arg(long)]
        p: usize,
        #[arg(long, default_value_t = 1)]
        q: usize,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Draws for the Monte Carlo trace cross-check (q = 1); 0 skips it.
        #[arg(long, default_value_t = 100_000)]
        samples: u64,
        /// Check the region lemma on this many sampled vertex labelings instead of all.
        #[arg(long)]
        region_samples: Option<u64>,
    },
    /// Frequency marching or tensor-PCA baselines.
    Baselines {
        #[arg(long, value_enum)]
        method: Method,
        /// Signal-to-noise values for the PCA methods; default 3p^(3/4).
        #[arg(long, value_delimiter = ',')]
        lambda: Vec<f64>,
        /// Draws per lambda for the PCA methods.
        #[arg(long, default_value_t = 20)]
        draws: u64,
        /// Dimension for the PCA methods; defaults to the config p.
        #[arg(long)]
        pca_p: Option<usize>,
        #[arg(long)]
        signals: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
    },
    /// Raw and orbit-max correlation of every candidate against every signal.
    Eval {
        /// recover's candidates.csv, or a signal container.
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        signals: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Fm,
    Unfolding,
    SpectralSos,
    PartialTrace,
    HomotopyInit,
    /// All four PCA methods.
    Pca,
}

/// A finished command that found a verification violation.
#[derive(Debug)]
struct Violation(String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Violation {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 config or input error, 3 numerical failure, 4 verification violation.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Violation>() {
            return 4;
        }
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(err) = cause.downcast_ref::<cmra::Error>() {
            return library_code(err);
        }
    }
    2
}

fn library_code(e: &cmra::Error) -> u8 {
    use cmra::Error::*;
    match e {
        Trial { source, .. } => library_code(source),
        RegionViolation { .. } => 4,
        InvalidLength(_) | Shape(_) | InvalidArgument(_) | Format(_) | Io(_) | Network(_) => 2,
        ConjugateSymmetry { .. }
        | NotSymmetric(_)
        | NoConvergence { .. }
        | OverBudget { .. }
        | ImaginaryResidue { .. }
        | VanishingSpectrum { .. }
        | EnumerationBudget { .. } => 3,
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(m) = g.mem_cap {
        cfg.mem_cap = m;
    }
    if g.exact_moments {
        cfg.exact_moments = true;
    }
    cfg.validate()?;
    if cfg.threads != 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global().context("building the worker pool")?;
    }
    let exec = if cfg.threads == 1 { Exec::Sequential } else { Exec::Parallel };
    std::fs::create_dir_all(&g.out_dir).with_context(|| format!("creating {}", g.out_dir.display()))?;

    let mut out = Outputs::new(&g.out_dir);
    let name = match &cli.command {
        Command::Generate => "generate",
        Command::Recover { .. } => "recover",
        Command::Verify { .. } => "verify",
        Command::Baselines { .. } => "baselines",
        Command::Eval { .. } => "eval",
    };
    let manifest = Manifest::start(name, &cfg, g.planted_u);
    let result = match cli.command {
        Command::Generate => cmd_generate(&cfg, &mut out, exec),
        Command::Recover { signals, moments, observations } => {
            cmd_recover(&cfg, g, signals.as_deref(), moments.as_deref(), observations.as_deref(), &mut out, exec)
        }
        Command::Verify { p, q, k, samples, region_samples } => cmd_verify(&cfg, p, q, k, samples, region_samples, &mut out, exec),
        Command::Baselines { method, lambda, draws, pca_p, signals, observations } => {
            cmd_baselines(&cfg, g, method, &lambda, draws, pca_p, signals.as_deref(), observations.as_deref(), &mut out, exec)
        }
        Command::Eval { candidates, signals } => cmd_eval(&candidates, &signals, &mut out),
    };
    // A violation still leaves a complete report and manifest behind.
    if result.is_ok() || result.as_ref().err().is_some_and(|e| exit_code(e) == 4) {
        manifest.finish(&mut out)?;
    }
    result
}

// ------------------------------------------------------------------ inputs

fn load_signals(cfg: &ExperimentConfig, explicit: Option<&Path>, out_dir: &Path) -> Result<SignalSet> {
    let default = out_dir.join("signals.bin");
    let path = match explicit {
        Some(p) => Some(p.to_path_buf()),
        None if default.exists() => Some(default),
        None => None,
    };
    let sig = match path {
        Some(p) => io::read_signals(&p).with_context(|| format!("reading signals from {}", p.display()))?,
        None => SignalSet::random_gaussian(cfg.p, cfg.k, cfg.seed)?,
    };
    if sig.p() != cfg.p {
        return Err(ConfigError(format!("signals have p={}, config says p={}", sig.p(), cfg.p)).into());
    }
    Ok(sig)
}

fn load_observations(explicit: Option<&Path>, out_dir: &Path) -> Result<ObservationBatch> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| out_dir.join("observations.bin"));
    if !path.exists() {
        return Err(ConfigError(format!("no observations at {}; run generate first or pass --exact-moments", path.display())).into());
    }
    io::read_observations(&path).with_context(|| format!("reading observations from {}", path.display()))
}

/// Third moment on the zero-sum support, summed over signals.
fn third_moment(
    cfg: &ExperimentConfig,
    sig: &SignalSet,
    moments: Option<&Path>,
    observations: Option<&Path>,
    out_dir: &Path,
    exec: Exec,
) -> Result<(ZeroSumTensor3, &'static str)> {
    if let Some(path) = moments {
        let (header, _) = io::read_container(path).with_context(|| format!("reading {}", path.display()))?;
        let (t, layout) = io::read_tensor(path)?;
        let t = match layout {
            Layout::Fourier => t,
            Layout::Real => t.to_fourier_modes(),
        };
        let (zs, _) = ZeroSumTensor3::from_dense(&t)?;
        // containers hold the per-sample mean; the spectral method wants the sum over K
        let k = if header.k == 0 { cfg.k } else { header.k };
        return Ok((zs.scale(k as f64), "moments file"));
    }
    if cfg.exact_moments {
        return Ok((ZeroSumTensor3::from_signals(sig, Normalization::SumOverK), "exact"));
    }
    let batch = load_observations(observations, out_dir)?;
    let e = empirical_third_moment(&batch, exec)?;
    Ok((e.zero_sum.scale(cfg.k as f64), "empirical"))
}

// ------------------------------------------------------------------ generate

fn cmd_generate(cfg: &ExperimentConfig, out: &mut Outputs, exec: Exec) -> Result<()> {
    let sig = SignalSet::random_gaussian(cfg.p, cfg.k, cfg.seed)?;
    io::write_signals(&out.file("signals.bin"), &sig)?;
    io::signals_csv(&out.file("signals.csv"), &sig)?;
    let moment = if cfg.exact_moments {
        exact_moment(&sig, 3, Normalization::MeanOverK)?
    } else {
        let batch = sample_observations(&sig, cfg.sigma, cfg.n, cfg.seed, exec)?;
        io::write_observations(&out.file("observations.bin"), &batch, cfg.k)?;
        if batch.len() * (cfg.p + 3) <= io::CSV_MAX_ENTRIES {
            io::observations_csv(&out.file("observations.csv"), &batch)?;
        }
        empirical_third_moment(&batch, exec)?.fourier
    };
    write_moment(out, &moment, cfg.k)?;
    println!(
        "generated {} signal(s) of length {}{}",
        cfg.k,
        cfg.p,
        if cfg.exact_moments { " with exact moments".to_string() } else { format!(" and {} observations", cfg.n) }
    );
    Ok(())
}

fn write_moment(out: &mut Outputs, t: &ComplexTensor, k: usize) -> Result<()> {
    let path = out.file("moments.bin");
    // K in the header lets readers undo the mean over signals
    io::write_tensor(&path, t, Layout::Fourier, k)?;
    if t.data().len() <= io::CSV_MAX_ENTRIES {
        io::tensor_csv(&out.file("moments.csv"), t, Layout::Fourier)?;
    }
    Ok(())
}

// ------------------------------------------------------------------ recover

fn cmd_recover(
    cfg: &ExperimentConfig,
    g: &Global,
    signals: Option<&Path>,
    moments: Option<&Path>,
    observations: Option<&Path>,
    out: &mut Outputs,
    exec: Exec,
) -> Result<()> {
    let sig = load_signals(cfg, signals, &g.out_dir)?;
    let (t, source) = third_moment(cfg, &sig, moments, observations, &g.out_dir, exec)?;
    let s = CorrectionTable::cached(&out.dir().join("cache"), cfg.p, CorrectionMode::Exact, exec)?;
    out.record(out.dir().join(format!("cache/correction-p{}-exact.bin", cfg.p)));
    let (trials, u_mode) = if g.planted_u {
        (1, UMode::Planted { signal: 0, alpha: 1.0, noise: 0.0 })
    } else {
        (cfg.trials, UMode::Gaussian)
    };
    let rc = RecoveryConfig { trials, seed: cfg.seed, u_mode, mem_cap: cfg.mem_cap, ..Default::default() };
    let res = list_recovery(&t, &s, &rc, Some(&sig), exec).context("list recovery")?;

    let k = sig.k();
    let mut cand = csv::Writer::from_path(out.file("candidates.csv"))?;
    let mut header = vec!["trial".to_string()];
    header.extend((0..cfg.p).map(|i| format!("tau{i}")));
    cand.write_record(&header)?;
    for (i, tau) in res.candidates.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(tau.0.iter().map(|x| format!("{x:e}")));
        cand.write_record(&row)?;
    }
    cand.flush()?;

    let mut sum = csv::Writer::from_path(out.file("summary.csv"))?;
    let mut header = vec!["trial".to_string()];
    header.extend((0..k).map(|i| format!("raw_corr_{i}")));
    header.extend((0..k).map(|i| format!("orbit_corr_{i}")));
    header.extend(["stage1_eigenvalue".to_string(), "stage2_eigenvalue".to_string()]);
    header.extend((0..k).map(|i| format!("alpha_tilde_{i}")));
    sum.write_record(&header)?;
    for d in &res.diagnostics {
        let mut row = vec![d.trial.to_string()];
        row.extend(d.raw_correlation.iter().chain(&d.orbit_correlation).map(|x| format!("{x:e}")));
        row.push(format!("{:e}", d.stage1.value));
        row.push(format!("{:e}", d.stage2.value));
        row.extend(d.alpha_tilde.iter().map(|x| format!("{x:e}")));
        sum.write_record(&row)?;
    }
    sum.flush()?;

    let best: Vec<f64> =
        (0..k).map(|i| res.diagnostics.iter().map(|d| d.orbit_correlation[i]).fold(0.0, f64::max)).collect();
    let success = best.iter().all(|&b| b >= 1.0 - cfg.epsilon);
    let diag = json!({
        "p": cfg.p,
        "k": k,
        "trials": trials,
        "moments": source,
        "u_mode": u_mode,
        "correction": "exact",
        "cached_table": res.cached_table,
        "epsilon": cfg.epsilon,
        "best_orbit_correlation": best,
        "success": success,
        "diagnostics": res.diagnostics,
    });
    output::write_json(&out.file("diagnostics.json"), &diag)?;
    println!(
        "{trials} trial(s), best orbit correlation {} (target {:.3})",
        best.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>().join(" "),
        1.0 - cfg.epsilon
    );
    Ok(())
}

// ------------------------------------------------------------------ verify

#[allow(clippy::too_many_arguments)]
fn cmd_verify(
    cfg: &ExperimentConfig,
    p: usize,
    q: usize,
    k: usize,
    samples: u64,
    region_samples: Option<u64>,
    out: &mut Outputs,
    exec: Exec,
) -> Result<()> {
    let s = cmra::correction::correction_table(p, CorrectionMode::Exact, exec)?;
    let region = match region_samples {
        Some(n) => RegionMode::Sampled { samples: n, seed: cfg.seed },
        None => RegionMode::Exhaustive,
    };
    let opts = VerifyOptions { region, crosscheck_samples: if q == 1 { samples } else { 0 }, seed: cfg.seed, ..Default::default() };
    let report = verify(p, q, k, &s, &opts, exec)?;
    let path = out.file("verify.json");
    output::write_json(&path, &json!({ "passed": report.passed(), "report": report }))?;
    let n = report.region.violations.len();
    println!("p={p} q={q} K={k}: {} labelings, {n} violations", report.edge_labelings);
    if !report.passed() {
        return Err(Violation(format!("verification failed at p={p}, q={q}, K={k}; see {}", path.display())).into());
    }
    Ok(())
}

// ------------------------------------------------------------------ baselines

#[allow(clippy::too_many_arguments)]
fn cmd_baselines(
    cfg: &ExperimentConfig,
    g: &Global,
    method: Method,
    lambdas: &[f64],
    draws: u64,
    pca_p: Option<usize>,
    signals: Option<&Path>,
    observations: Option<&Path>,
    out: &mut Outputs,
    exec: Exec,
) -> Result<()> {
    if method == Method::Fm {
        return frequency_marching_baseline(cfg, &g.out_dir, signals, observations, out, exec);
    }
    let methods: Vec<PcaMethod> = match method {
        Method::Unfolding => vec![PcaMethod::Unfolding],
        Method::SpectralSos => vec![PcaMethod::SpectralSos],
        Method::PartialTrace => vec![PcaMethod::PartialTrace],
        Method::HomotopyInit => vec![PcaMethod::HomotopyInit],
        Method::Pca => PcaMethod::ALL.to_vec(),
        Method::Fm => unreachable!(),
    };
    let p = pca_p.unwrap_or(cfg.p);
    if p == 0 {
        return Err(ConfigError("pca dimension must be positive".into()).into());
    }
    let lambdas = if lambdas.is_empty() { vec![3.0 * (p as f64).powf(0.75)] } else { lambdas.to_vec() };
    let path = out.file("pca.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["lambda", "p", "method", "draw", "correlation"])?;
    for &lambda in &lambdas {
        for d in 0..draws {
            let inst = PcaInstance::random(p, lambda, cfg.seed, d)?;
            for &m in &methods {
                let c = inst.correlation(&pca_estimate(m, &inst.t, PcaPath::Loops)?);
                w.write_record([format!("{lambda}"), p.to_string(), m.name().to_string(), d.to_string(), format!("{c:e}")])?;
            }
        }
    }
    w.flush()?;
    println!("{} method(s), {} lambda value(s), {draws} draws each", methods.len(), lambdas.len());
    Ok(())
}

fn frequency_marching_baseline(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    signals: Option<&Path>,
    observations: Option<&Path>,
    out: &mut Outputs,
    exec: Exec,
) -> Result<()> {
    let sig = load_signals(cfg, signals, out_dir)?;
    if sig.k() != 1 {
        return Err(ConfigError(format!("frequency marching needs K=1, got K={}", sig.k())).into());
    }
    let (t2, t3) = if cfg.exact_moments {
        (exact_moment(&sig, 2, Normalization::SumOverK)?, exact_moment(&sig, 3, Normalization::SumOverK)?)
    } else {
        let batch = load_observations(observations, out_dir)?;
        (empirical_second_moment(&batch)?, empirical_third_moment(&batch, exec)?.fourier)
    };
    let est = frequency_marching(&t2, &t3)?;
    let oc = orbit_correlation(&unit_real(&est)?, &unit_real(&sig.signals()[0])?)?;
    let path = out.file("fm.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["p", "method", "signal", "correlation"])?;
    w.write_record([cfg.p.to_string(), "fm".to_string(), "0".to_string(), format!("{:e}", oc.orbit_max)])?;
    w.flush()?;
    println!("frequency marching orbit correlation {:.6}", oc.orbit_max);
    Ok(())
}

/// `(1/n) Σ y yᵀ − σ² I`, in the Fourier basis.
fn empirical_second_moment(b: &ObservationBatch) -> Result<ComplexTensor> {
    let p = b.p;
    let mut m = vec![0.0; p * p];
    for i in 0..b.len() {
        let y = b.sample(i);
        for r in 0..p {
            for c in 0..p {
                m[r * p + c] += y[r] * y[c];
            }
        }
    }
    let n = b.len().max(1) as f64;
    for (e, x) in m.iter_mut().enumerate() {
        *x /= n;
        if e / p == e % p {
            *x -= b.sigma * b.sigma;
        }
    }
    Ok(RealTensor::from_vec(&[p, p], m)?.to_complex().to_fourier_modes())
}

// ------------------------------------------------------------------ eval

fn read_vectors(path: &Path) -> Result<Vec<RealVector>> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        return Ok(io::read_signals(path).with_context(|| format!("reading {}", path.display()))?.real()?);
    }
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v = rec.iter().skip(1).map(|x| x.trim().parse::<f64>()).collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        out.push(RealVector(v));
    }
    Ok(out)
}

fn cmd_eval(candidates: &Path, signals: &Path, out: &mut Outputs) -> Result<()> {
    let cands = read_vectors(candidates)?;
    let truth = io::read_signals(signals).with_context(|| format!("reading {}", signals.display()))?.real()?;
    if cands.is_empty() {
        bail!(ConfigError(format!("no candidates in {}", candidates.display())));
    }
    let path = out.file("eval.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["candidate", "signal", "raw", "orbit_max", "angle"])?;
    let mut best = vec![0.0f64; truth.len()];
    for (i, c) in cands.iter().enumerate() {
        for (j, th) in truth.iter().enumerate() {
            let oc = orbit_correlation(c, th).map_err(|e| anyhow!(ConfigError(format!("candidate {i}: {e}"))))?;
            best[j] = best[j].max(oc.orbit_max);
            w.write_record([i.to_string(), j.to_string(), format!("{:e}", oc.raw), format!("{:e}", oc.orbit_max), format!("{:e}", oc.angle)])?;
        }
    }
    w.flush()?;
    println!("{} candidate(s); best orbit correlation per signal {}", cands.len(), best.iter().map(|b| format!("{b:.4}")).collect::<Vec<_>>().join(" "));
    Ok(())
}
