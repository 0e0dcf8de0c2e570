//! The `apt` binary: render the synthetic dataset, train the schedule,
//! score checkpoints, verify gradients, and run the ablation bench. Every
//! command is deterministic given its config file and seed.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use apt::ablation::{self, Axis};
use apt::curriculum::{load_params, Phase};
use apt::eval::{evaluate_task, majority_baseline, order_flip_accuracy, EvalReport};
use apt::gradcheck::{run_scope, Scope};
use apt::io::RunConfig;
use apt::model::Model;
use apt::pipeline::{Features, Runner};
use apt::run::{
    build_vocab, load_corpus, load_eval, phase_name, resume_all, train_all, train_phase, RunPaths,
    TrainOutcome, PHASES,
};
use apt::tasks::render::{render_many, write_dataset, ClipStore, DatasetPaths, RenderOpts};
use apt::tasks::Task;
use apt::{Error, Result};

#[derive(Parser)]
#[command(name = "apt", version, about = "Acoustic prompt tuning at desk scale")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render the synthetic dataset under the configured data directory.
    Render(ConfigArg),
    /// Train the full schedule, one phase of it, or resume an interrupted run.
    Train(TrainArgs),
    /// Score a checkpoint on evaluation splits.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Compare the transformer aligner against the linear one.
    AblateAligner(ConfigArg),
    /// Compare pooling variants of the linear aligner.
    AblatePooling(ConfigArg),
    /// Compare audio prompt token counts.
    AblateTokens(ConfigArg),
    /// Compare the staged curriculum against one merged stage.
    AblateCurriculum(ConfigArg),
    /// Compare training with and without the reasoning task.
    AblateNlar(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    /// Flat `key = value` config file; built-in defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<RunConfig> {
        let cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => {
                let mut cfg = RunConfig::default();
                cfg.apply_env();
                cfg
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Phase to run: `lm`, `0`, `1`, `2`, or `all`.
    #[arg(long, default_value = "all")]
    stage: String,
    /// Continue an interrupted schedule from a train-state checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Write a mid-phase checkpoint every N steps (0 disables).
    #[arg(long, default_value_t = 0)]
    save_every: usize,
    /// Start the selected phase from fresh parameters instead of the
    /// preceding phase's checkpoint.
    #[arg(long)]
    from_scratch: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Checkpoint to score; defaults to the run directory's last artifact.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Single task tag; every configured task when omitted.
    #[arg(long)]
    task: Option<String>,
    /// Override the few-shot episode's class count (fsc only, no retraining).
    #[arg(long)]
    ways: Option<usize>,
    /// Override the labeled examples per class (fsc only).
    #[arg(long)]
    shots: Option<usize>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// One of ops, aligner, objectives, end2end; every scope when omitted.
    #[arg(long)]
    scope: Option<String>,
    /// Seed for the checked point.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn parse_stage(s: &str) -> Result<Option<Phase>> {
    Ok(match s {
        "all" => None,
        "lm" => Some(Phase::LmText),
        "0" => Some(Phase::Stage(0)),
        "1" => Some(Phase::Stage(1)),
        "2" => Some(Phase::Stage(2)),
        other => {
            return Err(Error::config(format!(
                "unknown stage '{other}' (expected lm, 0, 1, 2, or all)"
            )))
        }
    })
}

fn cmd_render(args: &ConfigArg) -> Result<()> {
    let cfg = args.load()?;
    let summary = write_dataset(&cfg.data_dir, &cfg)?;
    println!(
        "rendered {} clips, {} train and {} eval records under {}",
        summary.clips,
        summary.train_records,
        summary.eval_records,
        cfg.data_dir.display()
    );
    for (stage, n) in summary.stage_counts.iter().enumerate() {
        println!("  train stage {stage}: {n} records");
    }
    for (task, n) in &summary.eval_counts {
        println!("  eval {:<4} {n} records", task.tag());
    }
    Ok(())
}

fn print_outcome(outcome: &TrainOutcome, paths: &RunPaths) {
    for phase in PHASES {
        if let Some(loss) = outcome.loss(phase) {
            println!(
                "{:<7} final loss {loss:.4} -> {}",
                phase_name(phase),
                paths.phase_checkpoint(phase).display()
            );
        }
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let vocab = build_vocab();
    let corpus = load_corpus(&cfg.data_dir, cfg.include_nlar)?;
    let mut model: Model<f32> = Model::init(cfg.model_config(vocab.len()), cfg.seed)?;
    let paths = RunPaths::new(&cfg.run_dir);

    if let Some(ckpt) = &args.resume {
        if args.stage != "all" {
            return Err(Error::config(
                "--resume continues the whole schedule; drop --stage",
            ));
        }
        let outcome = resume_all(
            &cfg,
            &vocab,
            &mut model,
            &corpus,
            &paths,
            ckpt,
            args.save_every,
        )?;
        print_outcome(&outcome, &paths);
        return Ok(());
    }

    match parse_stage(&args.stage)? {
        None => {
            let outcome = train_all(&cfg, &vocab, &mut model, &corpus, &paths, args.save_every)?;
            print_outcome(&outcome, &paths);
        }
        Some(phase) => {
            let loss = train_phase(
                &cfg,
                &vocab,
                &mut model,
                &corpus,
                &paths,
                phase,
                args.save_every,
                args.from_scratch,
            )?;
            println!(
                "{:<7} final loss {loss:.4} -> {}",
                phase_name(phase),
                paths.phase_checkpoint(phase).display()
            );
        }
    }
    Ok(())
}

fn write_items(paths: &RunPaths, report: &EvalReport) -> Result<PathBuf> {
    fs::create_dir_all(&paths.root)?;
    let path = paths.root.join(format!("eval_{}.jsonl", report.task.tag()));
    let mut f = fs::File::create(&path)?;
    for item in &report.items {
        let line = serde_json::to_string(item)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        writeln!(f, "{line}")?;
    }
    Ok(path)
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let vocab = build_vocab();
    let mut model: Model<f32> = Model::init(cfg.model_config(vocab.len()), cfg.seed)?;
    let paths = RunPaths::new(&cfg.run_dir);
    let ckpt = match &args.checkpoint {
        Some(p) => p.clone(),
        None => paths.latest_checkpoint().ok_or_else(|| {
            Error::Dependency(format!(
                "no checkpoint under {}; train first or pass --checkpoint",
                cfg.run_dir.display()
            ))
        })?,
    };
    load_params(&ckpt, &mut model.store)?;
    println!("checkpoint: {}", ckpt.display());

    let episode_override = args.ways.is_some() || args.shots.is_some();
    if episode_override && args.task.as_deref() != Some(Task::Fsc.tag()) {
        return Err(Error::config(
            "--ways and --shots apply only with --task fsc",
        ));
    }

    let tasks: Vec<Task> = match &args.task {
        Some(tag) => vec![Task::parse(tag)?],
        None => Task::ALL
            .into_iter()
            .filter(|&t| t != Task::Nlar || cfg.include_nlar)
            .collect(),
    };

    let features = Features::new(&model.cfg)?;
    for task in tasks {
        let disk_clips = ClipStore::Disk(DatasetPaths::new(&cfg.data_dir));
        let (report, flip) = if task == Task::Fsc && episode_override {
            // Reshape the episodes in memory; the checkpoint is untouched.
            let mut opts = RenderOpts::from_config(&cfg);
            opts.fsc_ways = args.ways.unwrap_or(opts.fsc_ways);
            opts.fsc_shots = args.shots.unwrap_or(opts.fsc_shots);
            let rendered = render_many(task, "eval", cfg.eval_per_task, &opts, cfg.seed)?;
            let clips = ClipStore::from_rendered(&rendered);
            let records: Vec<_> = rendered.into_iter().map(|r| r.record).collect();
            let runner = Runner {
                model: &model,
                vocab: &vocab,
                clips: &clips,
                features: &features,
                train_encoder: false,
            };
            (evaluate_task(&runner, task, &records)?, None)
        } else {
            let records = load_eval(&cfg.data_dir, task)?;
            let runner = Runner {
                model: &model,
                vocab: &vocab,
                clips: &disk_clips,
                features: &features,
                train_encoder: false,
            };
            let report = evaluate_task(&runner, task, &records)?;
            let flip = if task == Task::Nlar {
                Some((
                    order_flip_accuracy(&runner, &records)?,
                    majority_baseline(&records),
                ))
            } else {
                None
            };
            (report, flip)
        };
        let items = write_items(&paths, &report)?;
        println!(
            "{:<4} {:>11} {:.4}  (n={}, items -> {})",
            report.task.tag(),
            report.metric,
            report.score,
            report.n,
            items.display()
        );
        if let Some(((acc, n), majority)) = flip {
            println!(
                "     order flip consistency {acc:.3} over {n} sensitive pairs; majority baseline {majority:.3}"
            );
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let scopes: Vec<Scope> = match &args.scope {
        Some(s) => vec![Scope::parse(s)?],
        None => Scope::ALL.to_vec(),
    };
    let mut ok = true;
    for scope in scopes {
        let report = run_scope(scope, args.seed)?;
        print!("{}", report.render());
        ok &= report.passed();
    }
    if !ok {
        return Err(Error::contract("gradient check failed"));
    }
    Ok(())
}

fn cmd_ablate(axis: Axis, args: &ConfigArg) -> Result<()> {
    let cfg = args.load()?;
    let bench_root = cfg.run_dir.join("ablation");
    let report = ablation::run_axis(axis, &cfg, &bench_root)?;
    print!("{}", report.summary());
    println!(
        "comparison -> {}",
        ablation::axis_csv_path(&bench_root, axis).display()
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Render(a) => cmd_render(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::AblateAligner(a) => cmd_ablate(Axis::AlignerArch, a),
        Cmd::AblatePooling(a) => cmd_ablate(Axis::Pooling, a),
        Cmd::AblateTokens(a) => cmd_ablate(Axis::TokenCount, a),
        Cmd::AblateCurriculum(a) => cmd_ablate(Axis::Curriculum, a),
        Cmd::AblateNlar(a) => cmd_ablate(Axis::NlarTraining, a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Dependency(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
