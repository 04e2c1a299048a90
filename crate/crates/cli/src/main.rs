//! `fabandit` — reproducible fatigue-aware creative-selection runs.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or parse error,
//! 4 data-integrity or decision error.

use std::fs;
use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use fabandit::config::RunConfig;
use fabandit::harness::{
    self, fatigue_report, read_log, replay_evaluate, write_log, ArmId,
};
use fabandit::history::ExposureStore;
use fabandit::model::{
    downsample, expand_features, hash_features, train_batch, ContextVector, Mode, Posterior,
    SgdConfig, TrainingExample,
};
use fabandit::policy::select;
use fabandit::similarity::{
    build_similarity_matrix, campaigns_of, read_catalog, read_matrices, write_catalog,
    write_matrices, SimilarityMatrix,
};
use fabandit::Error;

#[derive(Parser)]
#[command(name = "fabandit", version, about = "Fatigue-aware ad creative selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build per-campaign similarity matrices from a creative catalog.
    Similarity {
        /// Line-delimited JSON creative catalog.
        #[arg(long)]
        catalog: PathBuf,
        /// Output matrix file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the three-arm experiment and write log, metrics, and reports.
    Simulate(SimulateArgs),
    /// Score one selection request against saved artifacts.
    Select {
        #[arg(long)]
        posterior: PathBuf,
        #[arg(long)]
        sim: PathBuf,
        /// Exposure history snapshot (optional; empty history otherwise).
        #[arg(long)]
        history: Option<PathBuf>,
        /// Request record (JSON file, or `-` for stdin).
        #[arg(long)]
        request: PathBuf,
        /// Report wall-clock selection time on stderr.
        #[arg(long)]
        time: bool,
    },
    /// Replay-method CTR estimates over a (mode, alpha, lambda) grid.
    Replay(ReplayArgs),
    /// Recompute metrics and fatigue reports from an existing log.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 5.0)]
        bin_width: f64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Run configuration (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides FABANDIT_OUT_DIR and the config).
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    /// Impression log with a random arm.
    #[arg(long)]
    log: PathBuf,
    /// Similarity matrix file (required for fatigue-aware grid points).
    #[arg(long)]
    sim: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.01")]
    alphas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.0011")]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "baseline,fatigue_aware")]
    modes: Vec<String>,
    #[arg(long, default_value_t = 24)]
    m_bits: u32,
    #[arg(long, default_value_t = 0.05)]
    negative_rate: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Where to write the machine-readable grid (CSV); stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Io(_) | Error::Parse { .. } => 3,
                Error::Catalog(_) | Error::Decision(_) | Error::UndefinedEstimate(_) => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Similarity { catalog, out } => cmd_similarity(&catalog, &out),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Select { posterior, sim, history, request, time } => {
            cmd_select(&posterior, &sim, history.as_deref(), &request, time)
        }
        Command::Replay(args) => cmd_replay(args),
        Command::Report { log, out_dir, bin_width } => cmd_report(&log, &out_dir, bin_width),
    }
}

fn cmd_similarity(catalog_path: &Path, out: &Path) -> Result<(), Error> {
    let catalog = read_catalog(catalog_path)?;
    let mut matrices = Vec::new();
    for campaign in campaigns_of(&catalog) {
        let m = build_similarity_matrix(&catalog, &campaign)?;
        let (mean, sd) = m.off_diagonal_stats().unwrap_or((1.0, 0.0));
        println!(
            "campaign {campaign}: {} creatives, off-diagonal mean {mean:.2}, sd {sd:.2}",
            m.len()
        );
        matrices.push(m);
    }
    write_matrices(out, &matrices)?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = args.out_dir {
        cfg.out_dir = dir;
    } else if let Ok(dir) = std::env::var("FABANDIT_OUT_DIR") {
        cfg.out_dir = PathBuf::from(dir);
    }
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;

    let out = harness::run_experiment(&cfg, cfg.seed)?;
    write_catalog(&cfg.out_dir.join("catalog.jsonl"), &out.catalog)?;
    write_matrices(&cfg.out_dir.join("similarity.sim"), &out.sims)?;
    write_log(&cfg.out_dir.join("impressions.jsonl"), &out.records)?;
    for (arm, posterior) in &out.posteriors {
        posterior.write(&cfg.out_dir.join(format!("posterior_{}.txt", arm.label().to_lowercase())))?;
    }
    fs::write(cfg.out_dir.join("metrics.json"), out.report.to_json())?;
    let table = out.report.render_table();
    fs::write(cfg.out_dir.join("metrics.txt"), &table)?;
    let freport = fatigue_report(&out.records, cfg.bin_width);
    fs::write(cfg.out_dir.join("fatigue_report.csv"), freport.to_csv())?;
    print!("{table}");
    Ok(())
}

#[derive(Debug, Deserialize)]
struct SelectRequest {
    user_id: String,
    campaign_id: String,
    t: u64,
    context: Vec<String>,
    candidates: Vec<String>,
    #[serde(default = "default_alpha")]
    alpha: f64,
    #[serde(default)]
    seed: u64,
}

fn default_alpha() -> f64 {
    0.01
}

#[derive(Debug, Serialize)]
struct SelectResponse {
    chosen: String,
    scores: Vec<(String, f64)>,
    kappa: Vec<(String, f64)>,
}

fn cmd_select(
    posterior_path: &Path,
    sim_path: &Path,
    history_path: Option<&Path>,
    request_path: &Path,
    time: bool,
) -> Result<(), Error> {
    let posterior = Posterior::read(posterior_path)?;
    let matrices = read_matrices(sim_path)?;
    let request_text = if request_path == Path::new("-") {
        let mut buf = String::new();
        std::io::stdin().read_to_string(&mut buf)?;
        buf
    } else {
        fs::read_to_string(request_path)?
    };
    let req: SelectRequest = serde_json::from_str(&request_text)
        .map_err(|e| Error::Parse { line: 1, msg: format!("request record: {e}") })?;
    let sim = matrices
        .iter()
        .find(|m| m.campaign_id == req.campaign_id)
        .ok_or_else(|| Error::Config(format!("campaign {} not in matrix file", req.campaign_id)))?;
    for c in &req.candidates {
        if sim.index_of(c).is_none() {
            return Err(Error::Config(format!("unknown creative {c} in request")));
        }
    }
    let store = match history_path {
        Some(p) => {
            let data = fs::read(p)?;
            ExposureStore::load_snapshot(&mut data.as_slice())?
        }
        None => ExposureStore::new(),
    };
    let x = ContextVector::new(req.context.iter().cloned());
    let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
    let started = Instant::now();
    let decision = select(
        &x,
        &req.candidates,
        &req.user_id,
        &req.campaign_id,
        req.t,
        &posterior,
        Some(sim),
        Some(&store),
        req.alpha,
        &mut rng,
    )?;
    let elapsed = started.elapsed();
    if time {
        eprintln!("selection took {:.3} ms", elapsed.as_secs_f64() * 1e3);
    }
    let resp = SelectResponse {
        chosen: decision.chosen,
        scores: decision.scores,
        kappa: decision.kappa,
    };
    println!("{}", serde_json::to_string(&resp).expect("serialize decision"));
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Error> {
    let records = read_log(&args.log)?;
    let random: Vec<_> = records.iter().filter(|r| r.arm == ArmId::Random).cloned().collect();
    if random.is_empty() {
        return Err(Error::UndefinedEstimate("log has no random-arm records".into()));
    }
    let matrices = args.sim.as_deref().map(read_matrices).transpose()?;
    let sim_for = |campaign: &str| -> Option<&SimilarityMatrix> {
        matrices.as_ref().and_then(|ms| ms.iter().find(|m| m.campaign_id == campaign))
    };

    let mut rows = String::from("mode,alpha,lambda,replay_ctr,consumed,total\n");
    for mode_name in &args.modes {
        let mode: Mode = mode_name.parse()?;
        for &alpha in &args.alphas {
            for &lambda in &args.lambdas {
                let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
                // train on the randomized log, then replay the resulting policy
                let kept = downsample(random.clone(), |r| r.click, args.negative_rate, &mut rng);
                let mut creatives = std::collections::BTreeSet::new();
                let examples: Vec<TrainingExample> = kept
                    .iter()
                    .map(|r| {
                        creatives.insert(r.chosen.clone());
                        let x = ContextVector::new(r.context.iter().cloned());
                        let mut z = hash_features(&expand_features(&x, &r.chosen), args.m_bits);
                        if mode == Mode::FatigueAware {
                            z = z.with_fatigue(r.kappa);
                        }
                        TrainingExample::new(z, r.click as u8)
                    })
                    .collect();
                let posterior = train_batch(
                    &examples,
                    args.m_bits,
                    mode,
                    lambda,
                    None,
                    &SgdConfig::default(),
                    &creatives,
                    &mut rng,
                );
                let store = ExposureStore::new();
                let est = replay_evaluate(&random, |r| {
                    let sim = sim_for(&r.campaign_id);
                    if mode == Mode::FatigueAware && sim.is_none() {
                        return Err(Error::Config(format!(
                            "fatigue-aware replay needs --sim covering campaign {}",
                            r.campaign_id
                        )));
                    }
                    let x = ContextVector::new(r.context.iter().cloned());
                    let d = select(
                        &x,
                        &r.candidates,
                        &r.user_id,
                        &r.campaign_id,
                        r.t,
                        &posterior,
                        sim,
                        Some(&store),
                        alpha,
                        &mut rng,
                    )?;
                    // the user saw the logged creative regardless of a match
                    store.record_exposure(&r.user_id, &r.campaign_id, &r.chosen, r.t);
                    Ok(d.chosen)
                })?;
                rows.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    mode.as_str(),
                    alpha,
                    lambda,
                    est.ctr,
                    est.consumed,
                    est.total
                ));
            }
        }
    }
    match &args.out {
        Some(p) => fs::write(p, rows)?,
        None => print!("{rows}"),
    }
    Ok(())
}

fn cmd_report(log_path: &Path, out_dir: &Path, bin_width: f64) -> Result<(), Error> {
    if bin_width <= 0.0 {
        return Err(Error::Config("bin_width: must be positive".into()));
    }
    let records = read_log(log_path)?;
    fs::create_dir_all(out_dir)?;
    let report = harness::compute_metrics(&records);
    fs::write(out_dir.join("metrics.json"), report.to_json())?;
    let table = report.render_table();
    fs::write(out_dir.join("metrics.txt"), &table)?;
    let freport = fatigue_report(&records, bin_width);
    fs::write(out_dir.join("fatigue_report.csv"), freport.to_csv())?;
    print!("{table}");
    Ok(())
}
