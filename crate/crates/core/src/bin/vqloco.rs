use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vqloco::checkpoint::{export_trajectory_file, load_checkpoint, save_checkpoint, Checkpoint};
use vqloco::config::RunConfig;
use vqloco::eval::{evaluate, generate, Actor};
use vqloco::motion::{load_clip, save_clip, MotionClip};
use vqloco::trainer::Trainer;

#[derive(Parser)]
#[command(name = "vqloco", version, about = "Train, distill and evaluate toy-walker tracking policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory of clip JSON files; the config's gaits are synthesized otherwise.
    #[arg(long)]
    clips: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the config's reference clips as JSON files.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretraining and warm-up (epochs before the second milestone).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// JSONL metrics log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Distillation through the last milestone.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fit the prior encoder on frozen-teacher rollouts.
    TrainPrior {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print tracking metrics as JSON.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        actor: ActorArg,
        #[arg(long)]
        envs: Option<usize>,
    },
    /// Goal-free rollout from the prior, written as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Track the first clip in one environment and write the rollout as CSV.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "student")]
        actor: ActorArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ActorArg {
    Teacher,
    Student,
}

impl From<ActorArg> for Actor {
    fn from(a: ActorArg) -> Self {
        match a {
            ActorArg::Teacher => Actor::Teacher,
            ActorArg::Student => Actor::Student,
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn load_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(usage)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_clips(c: &Common, cfg: &RunConfig) -> Result<Vec<MotionClip>, Failure> {
    let Some(dir) = &c.clips else {
        return cfg.reference_clips().map_err(usage);
    };
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(usage)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no clip files in {}", dir.display())));
    }
    paths.iter().map(|p| load_clip(p).map_err(usage)).collect()
}

/// Loads a checkpoint whose policy mode must match the config.
fn resume(path: &Path, cfg: &RunConfig) -> Result<Trainer, Failure> {
    let ckpt: Checkpoint = load_checkpoint(path).map_err(usage)?;
    ckpt.expect_mode(cfg.mode).map_err(usage)?;
    Ok(ckpt.into_trainer())
}

fn open_log(p: &Option<PathBuf>) -> Result<Option<std::fs::File>, Failure> {
    p.as_ref()
        .map(|p| {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(runtime)
        })
        .transpose()
}

fn train_to(t: &mut Trainer, clips: &[MotionClip], end: usize, log: &Option<PathBuf>) -> Result<(), Failure> {
    let mut f = open_log(log)?;
    let stats = t
        .run_until(clips, end, f.as_mut().map(|f| f as &mut dyn std::io::Write))
        .map_err(runtime)?;
    if let Some(s) = stats.last() {
        eprintln!("epoch {} ({}): rollout SR {:.3}", s.epoch, s.stage, s.rollout_sr);
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<(), Failure> {
    match cmd {
        Cmd::GenData { common, out } => {
            let cfg = load_config(&common)?;
            std::fs::create_dir_all(&out).map_err(runtime)?;
            for clip in cfg.reference_clips().map_err(usage)? {
                save_clip(&clip, out.join(format!("{}.json", clip.name))).map_err(runtime)?;
                println!("{}: {} frames", clip.name, clip.len());
            }
        }
        Cmd::Train { common, out, resume: from, log } => {
            let cfg = load_config(&common)?;
            let clips = load_clips(&common, &cfg)?;
            let mut t = match from {
                Some(p) => resume(&p, &cfg)?,
                None => Trainer::new(cfg.clone()).map_err(usage)?,
            };
            let ms2 = t.milestones()[1];
            train_to(&mut t, &clips, ms2, &log)?;
            save_checkpoint(&t, &out).map_err(runtime)?;
        }
        Cmd::Distill { common, checkpoint, out, log } => {
            let cfg = load_config(&common)?;
            let clips = load_clips(&common, &cfg)?;
            let mut t = resume(&checkpoint, &cfg)?;
            let ms3 = t.milestones()[2];
            train_to(&mut t, &clips, ms3 + 1, &log)?;
            save_checkpoint(&t, &out).map_err(runtime)?;
        }
        Cmd::TrainPrior { common, checkpoint, out } => {
            let cfg = load_config(&common)?;
            let clips = load_clips(&common, &cfg)?;
            let mut t = resume(&checkpoint, &cfg)?;
            let stats = t.train_prior(&clips).map_err(runtime)?;
            println!("{}", serde_json::to_string(&stats).map_err(runtime)?);
            save_checkpoint(&t, &out).map_err(runtime)?;
        }
        Cmd::Eval { common, checkpoint, actor, envs } => {
            let cfg = load_config(&common)?;
            let clips = load_clips(&common, &cfg)?;
            let t = resume(&checkpoint, &cfg)?;
            let n = envs.unwrap_or(cfg.eval_envs);
            let (report, _) = evaluate(t.policies(), actor.into(), &clips, n, cfg.seed, &cfg).map_err(runtime)?;
            println!("{}", serde_json::to_string(&report).map_err(runtime)?);
        }
        Cmd::Generate { common, checkpoint, out, steps } => {
            let cfg = load_config(&common)?;
            let t = resume(&checkpoint, &cfg)?;
            let prior = t
                .prior
                .as_ref()
                .ok_or_else(|| usage("checkpoint has no prior encoder; run train-prior first"))?;
            let n = steps.unwrap_or(cfg.gen_steps);
            let g = generate(prior, &t.codebook, &t.student, n, cfg.seed, &cfg).map_err(runtime)?;
            let nb = cfg.sim().morphology.n_body();
            export_trajectory_file(&g.trajectory, nb, cfg.fps, &out).map_err(runtime)?;
            println!("survived {} of {n} steps, {} distinct codes", g.survived, g.distinct_codes);
        }
        Cmd::Export { common, checkpoint, out, actor } => {
            let cfg = load_config(&common)?;
            let clips = load_clips(&common, &cfg)?;
            let t = resume(&checkpoint, &cfg)?;
            let (_, trajs) = evaluate(t.policies(), actor.into(), &clips[..1], 1, cfg.seed, &cfg).map_err(runtime)?;
            let nb = cfg.sim().morphology.n_body();
            export_trajectory_file(&trajs[0], nb, cfg.fps, &out).map_err(runtime)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
