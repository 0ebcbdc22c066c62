use std::io::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hvfl_bench::{
    emit_report, golden_party_config, output_dir, party_sweep, privacy_eval, run_benchmark, run_party, stage_breakdown, train_cli, BenchOutcome, Check,
    ExperimentConfig, Method, Summary, TrainOptions,
};
use hvfl_core::netsim::{ClockMode, NetworkProfile, TcpTransport};
use hvfl_core::nn::Variant;
use hvfl_core::privacy::FreshAdversary;

#[derive(Parser)]
#[command(name = "hvfl", version, about = "Private split-inference benchmarks: train, time, audit and report")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one model per seed and save checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Privacy weight for pphh training.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Discriminator updates per generator update.
        #[arg(long, default_value_t = 1)]
        d_steps: usize,
        /// Skip the fresh-adversary audit after pphh training.
        #[arg(long)]
        no_fresh: bool,
    },
    /// Time every (variant, profile) pair.
    Bench {
        #[command(flatten)]
        common: Common,
    },
    /// Per-stage time breakdown of pphh variants.
    Stages {
        #[command(flatten)]
        common: Common,
    },
    /// Time each variant over a range of client counts.
    SweepParties {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        min: usize,
        #[arg(long, default_value_t = 8)]
        max: usize,
    },
    /// Audit a pphh checkpoint with the trained and a fresh adversary.
    PrivacyEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_fresh: bool,
    },
    /// Re-render tables from a saved JSON summary.
    Report {
        /// Summary JSON written by bench, stages or sweep-parties.
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "report")]
        stem: String,
    },
    /// Play one compute party of a pphh batch over TCP.
    Party {
        /// Experiment TOML; the pinned golden session when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        id: usize,
        /// Address to listen on; prints `listening <addr>` once bound.
        #[arg(long, conflicts_with = "connect", required_unless_present = "connect")]
        listen: Option<String>,
        #[arg(long)]
        connect: Option<String>,
        #[arg(long, default_value_t = 30)]
        timeout_s: u64,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment TOML; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    /// Comma-separated head variants (P1..P4, H1..H4).
    #[arg(long, value_delimiter = ',', value_parser = parse_variant)]
    variants: Vec<Variant>,
    /// Comma-separated profiles: LAN, WAN, or name:rtt_ms:bandwidth_bps.
    #[arg(long, value_delimiter = ',', value_parser = parse_profile)]
    profiles: Vec<NetworkProfile>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// simulated or real.
    #[arg(long, value_parser = parse_clock)]
    clock: Option<ClockMode>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Artifact directory; defaults to $HVFL_OUT, then ./artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Permit e2e runs beyond the tiny scale.
    #[arg(long = "i-know-this-is-huge")]
    huge: bool,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: hvfl_bench::BenchError| e.to_string())
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: hvfl_core::nn::NnError| e.to_string())
}

fn parse_profile(s: &str) -> std::result::Result<NetworkProfile, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let r = match parts.as_slice() {
        [name] => NetworkProfile::named(name),
        [name, rtt, bw] => {
            let rtt = rtt.parse::<f64>().map_err(|e| format!("rtt_ms: {e}"))?;
            let bw = bw.parse::<f64>().map_err(|e| format!("bandwidth_bps: {e}"))?;
            NetworkProfile::custom(name, rtt, bw)
        }
        _ => return Err(format!("profile {s:?} is neither a name nor name:rtt_ms:bandwidth_bps")),
    };
    r.map_err(|e| e.to_string())
}

fn parse_clock(s: &str) -> std::result::Result<ClockMode, String> {
    match s.to_ascii_lowercase().as_str() {
        "simulated" => Ok(ClockMode::Simulated),
        "real" => Ok(ClockMode::Real),
        _ => Err(format!("clock {s:?} must be simulated or real")),
    }
}

impl Common {
    fn base(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if self.method == Some(Method::E2e) => ExperimentConfig::e2e_tiny(),
            None => ExperimentConfig::default(),
        };
        if let Some(m) = self.method {
            cfg.method = m;
            if m == Method::VflMpc && cfg.variant.is_hybrid() {
                cfg.variant = Variant::P1;
            }
        }
        if let Some(v) = self.variants.first() {
            cfg.variant = *v;
        }
        if let Some(p) = self.profiles.first() {
            cfg.profile = p.clone();
        }
        macro_rules! set {
            ($($field:ident <- $flag:ident),*) => {$(if let Some(x) = self.$flag.clone() { cfg.$field = x; })*};
        }
        set!(n_clients <- clients, batch_size <- batch_size, batches <- batches, repeats <- repeats, clock <- clock);
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        if self.checkpoint.is_some() {
            cfg.checkpoint = self.checkpoint.clone();
        }
        cfg.allow_huge |= self.huge;
        Ok(cfg)
    }

    /// Cartesian product of the listed variants and profiles, each with
    /// its method: e2e stays e2e, P variants run vfl_mpc, H variants pphh.
    fn grid(&self) -> Result<Vec<ExperimentConfig>> {
        let base = self.base()?;
        let variants = if self.variants.is_empty() { vec![base.variant] } else { self.variants.clone() };
        let profiles = if self.profiles.is_empty() { vec![base.profile.clone()] } else { self.profiles.clone() };
        let mut out = Vec::new();
        for v in &variants {
            for p in &profiles {
                let method = match base.method {
                    Method::E2e => Method::E2e,
                    _ if v.is_hybrid() => Method::Pphh,
                    _ => Method::VflMpc,
                };
                let cfg = ExperimentConfig { method, variant: *v, profile: p.clone(), ..base.clone() };
                cfg.validate()?;
                out.push(cfg);
            }
        }
        Ok(out)
    }

    fn out_dir(&self) -> PathBuf {
        output_dir(self.out.as_deref())
    }
}

fn finish(dir: &Path, stem: &str, summary: &Summary) -> Result<ExitCode> {
    let paths = emit_report(dir, stem, summary)?;
    let txt = paths.iter().find(|p| p.extension().is_some_and(|e| e == "txt")).expect("text report");
    print!("{}", std::fs::read_to_string(txt)?);
    for p in &paths {
        eprintln!("wrote {}", p.display());
    }
    Ok(if summary.all_checks_pass { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn collect(configs: Vec<ExperimentConfig>, outcomes: Vec<BenchOutcome>, extra: Vec<Check>) -> Summary {
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for o in outcomes {
        rows.push(o.row);
        checks.extend(o.checks);
    }
    checks.extend(extra);
    Summary::new(configs, rows, Vec::new(), checks)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train { common, alpha, epochs, d_steps, no_fresh } => {
            let cfg = common.base()?;
            let mut opts = TrainOptions { epochs, d_steps, fresh: !no_fresh, ..TrainOptions::default() };
            if let Some(a) = alpha {
                opts.alpha = a;
            }
            let stem = format!("train_{}_{}", cfg.method, cfg.variant);
            let outcomes = train_cli(&cfg, &opts, &common.out_dir(), &stem)?;
            for o in &outcomes {
                println!("seed {} checkpoint {} sha256 {}", o.seed, o.checkpoint.display(), o.checkpoint_digest);
                println!("  task loss {:.6} headline {:.6} trivial {:.6}", o.task.loss, o.task.headline(), o.trivial);
                if let Some(p) = &o.privacy {
                    let fresh = p.fresh_accuracy().map_or("skipped".to_string(), |a| format!("{a:.4}"));
                    println!("  adversary accuracy {:.4} fresh {fresh} chance {:.4}", p.d_accuracy(), p.baseline);
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Bench { common } => {
            let configs = common.grid()?;
            let outcomes = configs.iter().map(run_benchmark).collect::<hvfl_bench::Result<Vec<_>>>()?;
            finish(&common.out_dir(), "bench", &collect(configs, outcomes, Vec::new()))
        }
        Cmd::Stages { common } => {
            let mut common = common;
            if common.method.is_none() && common.config.is_none() {
                common.method = Some(Method::Pphh);
            }
            if common.variants.is_empty() {
                common.variants = vec![Variant::H1, Variant::H2, Variant::H3, Variant::H4];
            }
            if common.profiles.is_empty() {
                common.profiles = vec![NetworkProfile::lan(), NetworkProfile::wan()];
            }
            let configs = common.grid()?;
            let outcomes = configs.iter().map(stage_breakdown).collect::<hvfl_bench::Result<Vec<_>>>()?;
            finish(&common.out_dir(), "stages", &collect(configs, outcomes, Vec::new()))
        }
        Cmd::SweepParties { common, min, max } => {
            if min > max {
                bail!("--min {min} exceeds --max {max}");
            }
            let range: Vec<usize> = (min..=max).collect();
            let configs = common.grid()?;
            let mut sweep = Vec::new();
            let mut rows = Vec::new();
            let mut checks = Vec::new();
            for cfg in &configs {
                let (s, outs, c) = party_sweep(cfg, &range)?;
                sweep.extend(s);
                for o in outs {
                    rows.push(o.row);
                    checks.extend(o.checks);
                }
                checks.extend(c);
            }
            finish(&common.out_dir(), "sweep", &Summary::new(configs, rows, sweep, checks))
        }
        Cmd::PrivacyEval { common, no_fresh } => {
            let cfg = common.base()?;
            let fresh = (!no_fresh).then(|| FreshAdversary { seed: cfg.seeds[0], ..FreshAdversary::default() });
            let rep = privacy_eval(&cfg, fresh.as_ref())?;
            let dir = common.out_dir();
            std::fs::create_dir_all(&dir)?;
            let text = rep.to_text();
            std::fs::write(dir.join("privacy.txt"), &text)?;
            std::fs::write(dir.join("privacy.json"), serde_json::to_string_pretty(&rep)?)?;
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { from, out, stem } => {
            let text = std::fs::read_to_string(&from).with_context(|| from.display().to_string())?;
            let summary: Summary = serde_json::from_str(&text).with_context(|| format!("{} is not a summary", from.display()))?;
            finish(&output_dir(out.as_deref()), &stem, &summary)
        }
        Cmd::Party { config, id, listen, connect, timeout_s } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => golden_party_config(),
            };
            let transport = if let Some(addr) = listen {
                let l = TcpListener::bind(&addr).with_context(|| format!("bind {addr}"))?;
                println!("listening {}", l.local_addr()?);
                std::io::stdout().flush()?;
                TcpTransport::accept(&l)?
            } else {
                let addr = connect.expect("clap requires --listen or --connect");
                TcpTransport::connect(addr.as_str(), Duration::from_secs(timeout_s)).with_context(|| format!("connect {addr}"))?
            };
            let outcome = run_party(&cfg, id, Box::new(transport))?;
            println!("{}", serde_json::to_string(&outcome)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
