//! `eballoc` — budgeted visual-token allocation from the command line.
//!
//! Workloads, router models, frame scores, allocation plans and sweep
//! reports all live in plain JSON/JSONL/CSV files, so each step can be
//! driven, inspected or replaced independently. Set `EB_SEED` to override
//! every seed that would otherwise come from a config file.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use eballoc_core::allocator::{allocate, ScaleConfig};
use eballoc_core::budget::{compute_budget, BudgetConfig};
use eballoc_core::oracle::{verify_plan, InstanceFile};
use eballoc_core::report::{emit_report, ReportFormat};
use eballoc_core::routers::{
    image_forward, read_scores, semantic_forward, train_router, write_scores, FrameScore,
    HeadKind, Policy, PolicyDecision, RouterModel, TrainingConfig,
};
use eballoc_core::sequencer::{fits_context, mean_pool, reconstruct, PromptTemplate, TokenGrid};
use eballoc_core::sweep::{budget_sweep, derive_policy_label, ABRecord, CostConfig, SweepConfig, SweepScorer};
use eballoc_core::workload::{gen_workload, Workload, WorkloadSpec};
use eballoc_core::AllocationPlan;

#[derive(Parser)]
#[command(name = "eballoc", about = "Budgeted visual-token allocation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload from a spec file.
    GenWorkload {
        /// Workload spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Output workload file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a router head on one or more workload files.
    TrainRouter {
        #[arg(long, value_enum)]
        head: HeadArg,
        /// Workload file: a single workload or an array of them (JSON).
        #[arg(long)]
        data: PathBuf,
        /// Output model file (JSON).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        lr: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        /// 0 = full batch.
        #[arg(long, default_value_t = 0)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score the frames of a workload with a trained image router.
    Score {
        /// Workload file (JSON).
        #[arg(long)]
        workload: PathBuf,
        /// Image-router model file (JSON).
        #[arg(long)]
        model: PathBuf,
        /// Output score file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an allocation plan from a score file.
    Allocate {
        /// Frame scores (JSON lines).
        #[arg(long)]
        scores: PathBuf,
        /// Token budget: an integer, or a path to a run config with a
        /// `budget` block.
        #[arg(long)]
        budget: String,
        /// Pooling scales as `global,critical,irrelevant`.
        #[arg(long, value_parser = parse_scales, default_value = "2,1,4")]
        scales: ScaleConfig,
        /// Raw tokens per frame.
        #[arg(long)]
        n: u64,
        /// Output plan file (JSON).
        #[arg(long)]
        out: PathBuf,
        /// Allocation policy; `fragment` follows the score decisions and
        /// falls back to global coverage when no frame is relevant.
        #[arg(long, value_enum, default_value_t = PolicyArg::Fragment)]
        policy: PolicyArg,
    },
    /// Derive allocation-policy labels from per-category A/B accuracies.
    DeriveLabels {
        /// CSV with header `category,acc_fragment,acc_global`.
        #[arg(long)]
        ab: PathBuf,
        /// Accuracy margin a category must clear to earn the fragment label.
        #[arg(long)]
        tau: f64,
    },
    /// Run a budget-sensitivity sweep described by a grid file.
    Sweep {
        /// Grid file (JSON): workload specs, configs, budgets, scorer.
        #[arg(long)]
        grid: PathBuf,
        /// Report path; format follows the extension (.csv or .json).
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a plan file against its instance; exit 0 iff clean.
    Verify {
        /// Plan file (JSON).
        #[arg(long)]
        plan: PathBuf,
        /// Instance file (JSON): n, budget, scales, relevance.
        #[arg(long)]
        instance: PathBuf,
    },
    /// Run the whole flow on one workload and emit a sequence summary.
    Pipeline {
        /// Workload spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        /// Token budget: integer or run-config path.
        #[arg(long)]
        budget: String,
        #[arg(long, value_parser = parse_scales, default_value = "2,1,4")]
        scales: ScaleConfig,
        /// Text tokens in the prompt template.
        #[arg(long, default_value_t = 100)]
        text_tokens: u64,
        /// Optional trained semantic router; ground-truth labels otherwise.
        #[arg(long)]
        semantic: Option<PathBuf>,
        /// Optional trained image router; ground-truth relevance otherwise.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Sequence summary output (JSON); stdout gets a one-line digest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Semantic,
    Image,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PolicyArg {
    Global,
    Fragment,
}

fn parse_scales(s: &str) -> Result<ScaleConfig, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err("expected three comma-separated scales: global,critical,irrelevant".into());
    }
    let parse = |p: &str| p.trim().parse::<u32>().map_err(|e| format!("bad scale {p:?}: {e}"));
    ScaleConfig::new(parse(parts[0])?, parse(parts[1])?, parse(parts[2])?)
        .map_err(|e| e.to_string())
}

/// Run-config file: the budget block.
#[derive(Debug, Deserialize)]
struct RunConfig {
    budget: BudgetConfig,
}

/// Sweep grid file.
#[derive(Debug, Deserialize)]
struct SweepGrid {
    workloads: Vec<WorkloadSpec>,
    configs: Vec<SweepConfig>,
    budgets: Vec<u64>,
    #[serde(default)]
    scorer: ScorerSpec,
    #[serde(default)]
    cost: Option<CostConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ScorerSpec {
    #[default]
    GroundTruth,
    #[serde(untagged)]
    Trained { trained: TrainedPaths },
}

#[derive(Debug, Deserialize)]
struct TrainedPaths {
    semantic: PathBuf,
    image: PathBuf,
}

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("EB_SEED") {
        Ok(v) => Ok(Some(v.parse().context("EB_SEED must be an unsigned integer")?)),
        Err(_) => Ok(None),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

/// Accepts either a single workload or an array of workloads.
fn read_workloads(path: &Path) -> Result<Vec<Workload>> {
    let body = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(many) = serde_json::from_str::<Vec<Workload>>(&body) {
        return Ok(many);
    }
    let one: Workload =
        serde_json::from_str(&body).with_context(|| format!("parsing {}", path.display()))?;
    Ok(vec![one])
}

/// A budget argument is either a literal token count or a run-config path.
fn resolve_budget(arg: &str) -> Result<(u64, Option<BudgetConfig>)> {
    if let Ok(value) = arg.parse::<u64>() {
        return Ok((value, None));
    }
    let cfg: RunConfig = read_json(Path::new(arg))?;
    let budget = compute_budget(&cfg.budget)?;
    Ok((budget, Some(cfg.budget)))
}

fn forced_decision(policy: PolicyArg) -> PolicyDecision {
    let fragment = policy == PolicyArg::Fragment;
    PolicyDecision {
        p_global: if fragment { 0.0 } else { 1.0 },
        p_fragment: if fragment { 1.0 } else { 0.0 },
        decision: if fragment { Policy::Fragment } else { Policy::Global },
    }
}

fn cmd_gen_workload(spec_path: &Path, out: &Path) -> Result<()> {
    let mut spec: WorkloadSpec = read_json(spec_path)?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    let workload = gen_workload(&spec)?;
    write_json(out, &workload)?;
    println!(
        "workload: {} frames, {} relevant, policy {:?}",
        workload.frame_count(),
        workload.frames.iter().filter(|f| f.relevant).count(),
        workload.policy_label
    );
    Ok(())
}

fn cmd_train_router(
    head: HeadArg,
    data: &Path,
    out: &Path,
    lr: f64,
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<()> {
    let workloads = read_workloads(data)?;
    if workloads.is_empty() {
        bail!("no workloads in {}", data.display());
    }
    let (kind, examples) = match head {
        HeadArg::Image => (
            HeadKind::Image,
            workloads.iter().flat_map(|w| w.image_examples()).collect::<Vec<_>>(),
        ),
        HeadArg::Semantic => (
            HeadKind::Semantic,
            workloads.iter().map(|w| w.semantic_example()).collect(),
        ),
    };
    let dim = examples
        .first()
        .map(|(x, _)| x.dim())
        .context("training data is empty")?;
    let cfg = TrainingConfig {
        learning_rate: lr,
        epochs,
        batch_size,
        seed: seed_override()?.unwrap_or(seed),
        ..TrainingConfig::default()
    };
    let model = train_router(RouterModel::zeros(kind, dim), &examples, &cfg)?;
    let acc = eballoc_core::routers::accuracy(&model, &examples)?;
    model.save(out)?;
    println!("trained {kind:?} head on {} examples, training accuracy {acc:.3}", examples.len());
    Ok(())
}

fn cmd_score(workload: &Path, model: &Path, out: &Path) -> Result<()> {
    let workloads = read_workloads(workload)?;
    let model = RouterModel::load(model)?;
    let workload = workloads.first().context("empty workload file")?;
    let scores = workload
        .frames
        .iter()
        .map(|f| image_forward(&model, f.index, &f.features))
        .collect::<Result<Vec<_>, _>>()?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_scores(file, &scores)?;
    println!(
        "scored {} frames, {} relevant",
        scores.len(),
        scores.iter().filter(|s| s.is_relevant()).count()
    );
    Ok(())
}

fn cmd_allocate(
    scores_path: &Path,
    budget_arg: &str,
    scales: &ScaleConfig,
    n: u64,
    out: &Path,
    policy: PolicyArg,
) -> Result<()> {
    let file = fs::File::open(scores_path)
        .with_context(|| format!("opening {}", scores_path.display()))?;
    let scores = read_scores(BufReader::new(file))?;
    let (budget, _) = resolve_budget(budget_arg)?;
    let plan = allocate(&forced_decision(policy), &scores, n, budget, scales)?;
    write_json(out, &plan)?;
    println!(
        "plan: {:?} policy, kept {}/{}, {} tokens under budget {budget}",
        plan.policy,
        plan.kept.len(),
        plan.frame_count(),
        plan.total_tokens
    );
    Ok(())
}

fn cmd_derive_labels(ab: &Path, tau: f64) -> Result<()> {
    if tau.is_nan() || tau < 0.0 {
        bail!("tau must be non-negative, got {tau}");
    }
    let body = fs::read_to_string(ab).with_context(|| format!("reading {}", ab.display()))?;
    let mut lines = body.lines();
    let header = lines.next().context("empty A/B file")?;
    let expected = "category,acc_fragment,acc_global";
    if header.trim() != expected {
        bail!("expected header {expected:?}, found {header:?}");
    }
    println!("category,label");
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            bail!("line {}: expected 3 fields, found {}", lineno + 2, fields.len());
        }
        let acc = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().with_context(|| format!("line {}: bad accuracy {s:?}", lineno + 2))?;
            if !(0.0..=1.0).contains(&v) {
                bail!("line {}: accuracy {v} outside [0,1]", lineno + 2);
            }
            Ok(v)
        };
        let record = ABRecord {
            category: fields[0].trim().to_string(),
            acc_fragment: acc(fields[1])?,
            acc_global: acc(fields[2])?,
        };
        let label = match derive_policy_label(&record, tau) {
            Policy::Global => "global",
            Policy::Fragment => "fragment",
        };
        println!("{},{label}", record.category);
    }
    Ok(())
}

fn cmd_sweep(grid_path: &Path, out: &Path) -> Result<()> {
    let grid: SweepGrid = read_json(grid_path)?;
    let seed = seed_override()?;
    let workloads = grid
        .workloads
        .iter()
        .map(|spec| {
            let mut spec = *spec;
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            gen_workload(&spec)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let scorer = match grid.scorer {
        ScorerSpec::GroundTruth => SweepScorer::GroundTruth,
        ScorerSpec::Trained { trained } => SweepScorer::Trained {
            semantic: RouterModel::load(&trained.semantic)?,
            image: RouterModel::load(&trained.image)?,
        },
    };
    let rows = budget_sweep(
        &workloads,
        &grid.configs,
        &grid.budgets,
        &scorer,
        &grid.cost.unwrap_or_default(),
    );
    let format = ReportFormat::from_path(out)?;
    emit_report(&rows, format, out)?;
    println!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_verify(plan_path: &Path, instance_path: &Path) -> Result<ExitCode> {
    let plan: AllocationPlan = read_json(plan_path)?;
    let instance: InstanceFile = read_json(instance_path)?;
    let violations = verify_plan(
        &plan,
        &instance.partition(),
        instance.n,
        instance.budget,
        &instance.scales,
    );
    if violations.is_empty() {
        println!("plan ok: {} tokens within budget {}", plan.total_tokens, instance.budget);
        return Ok(ExitCode::SUCCESS);
    }
    for v in &violations {
        println!("{}: {}", v.kind, v.detail);
    }
    Ok(ExitCode::FAILURE)
}

#[allow(clippy::too_many_arguments)]
fn cmd_pipeline(
    spec_path: &Path,
    budget_arg: &str,
    scales: &ScaleConfig,
    text_tokens: u64,
    semantic: Option<&Path>,
    image: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let mut spec: WorkloadSpec = read_json(spec_path)?;
    if let Some(seed) = seed_override()? {
        spec.seed = seed;
    }
    let workload = gen_workload(&spec)?;
    let (budget, budget_cfg) = resolve_budget(budget_arg)?;

    let decision = match semantic {
        Some(path) => semantic_forward(&RouterModel::load(path)?, &workload.query)?,
        None => workload.ground_truth_decision(),
    };
    let scores: Vec<FrameScore> = match image {
        Some(path) => {
            let model = RouterModel::load(path)?;
            workload
                .frames
                .iter()
                .map(|f| image_forward(&model, f.index, &f.features))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => workload.ground_truth_scores(),
    };

    let plan = allocate(&decision, &scores, workload.n, budget, scales)?;

    let side = (workload.n as f64).sqrt() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pooled: BTreeMap<usize, TokenGrid> = plan
        .kept
        .iter()
        .map(|f| {
            let full = TokenGrid::random(side, spec.feature_dim, &mut rng);
            Ok((f.frame, mean_pool(&full, f.scale)?))
        })
        .collect::<Result<_>>()?;
    let template = PromptTemplate::text_then_frames(text_tokens, workload.frame_count());
    let sequence = reconstruct(&template, &plan, &pooled)?;

    let dense = workload.frame_count() as u64 * workload.n;
    println!(
        "{:?} policy: kept {}/{} frames, {} visual tokens ({}% reduction), sequence {}",
        plan.policy,
        plan.kept.len(),
        plan.frame_count(),
        plan.total_tokens,
        eballoc_core::sweep::token_reduction(dense, plan.total_tokens),
        sequence.total_length
    );
    if let Some(cfg) = budget_cfg {
        if !fits_context(&sequence, &cfg) {
            bail!("sequence violates the context-window contract");
        }
        println!("context check: {} + {} generation tokens fit in {}", sequence.total_length, cfg.l_gen, cfg.l_max);
    }
    if let Some(path) = out {
        write_json(path, &sequence.summary())?;
    }
    Ok(())
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::GenWorkload { spec, out } => cmd_gen_workload(&spec, &out)?,
        Command::TrainRouter {
            head,
            data,
            out,
            lr,
            epochs,
            batch_size,
            seed,
        } => cmd_train_router(head, &data, &out, lr, epochs, batch_size, seed)?,
        Command::Score {
            workload,
            model,
            out,
        } => cmd_score(&workload, &model, &out)?,
        Command::Allocate {
            scores,
            budget,
            scales,
            n,
            out,
            policy,
        } => cmd_allocate(&scores, &budget, &scales, n, &out, policy)?,
        Command::DeriveLabels { ab, tau } => cmd_derive_labels(&ab, tau)?,
        Command::Sweep { grid, out } => cmd_sweep(&grid, &out)?,
        Command::Verify { plan, instance } => return cmd_verify(&plan, &instance),
        Command::Pipeline {
            spec,
            budget,
            scales,
            text_tokens,
            semantic,
            image,
            out,
        } => cmd_pipeline(
            &spec,
            &budget,
            &scales,
            text_tokens,
            semantic.as_deref(),
            image.as_deref(),
            out.as_deref(),
        )?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
