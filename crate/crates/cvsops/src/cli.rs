//! The `cvsops` command line.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use cvs_core::annotator_flow::funnel_report;
use cvs_core::domain::{Annotator, Assessment, CaseId, ClipId, Split, Timestamp, CLIP_FRAMES};
use cvs_core::evaluation::{
    causal_audit, leaderboard, to_csv, to_json, AuditOutcome, ClipMedia, ClipPrediction, LeaderboardRow,
    ProcessPredictor, Submission, SubmissionMeta, TeamScores,
};
use cvs_core::fusion::{dataset_stats, fuse_clip, AnnotatedClip, FusedFrame};
use cvs_core::jsonl;
use cvs_core::orchestrator::{Clock, ManualClock, SystemClock};
use cvs_core::scheduler::{blind_payload, AnnotatorView};
use cvs_core::simulator::{generate_pool, run_campaign, write_pool, CampaignPolicy, SimConfig};
use cvs_core::video_flow::{ChainStatus, IntakeRecord, ScreeningSubmission};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::config::OpsConfig;
use crate::platform::{self, Engine};

#[derive(Debug, Parser)]
#[command(name = "cvsops", version, about = "Operations platform for the CVS assessment challenge")]
pub struct Cli {
    /// Platform configuration file (TOML).
    #[arg(long, env = "CVSOPS_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides `data_dir` from the configuration.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Registers received videos from a JSON-lines file of intake records.
    Intake {
        #[arg(long)]
        file: PathBuf,
    },
    /// Feeds screening verdicts and cuts clips from qualified cases.
    Screen {
        /// JSON-lines file of screening submissions.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Cases whose blurring has finished.
        #[arg(long, num_args = 1..)]
        reprocessed: Vec<String>,
    },
    /// Contacts annotators and walks each to its recorded state.
    Onboard {
        #[arg(long)]
        file: PathBuf,
    },
    /// Accepts completed assessments and runs due fusion jobs.
    Assess {
        #[arg(long)]
        file: PathBuf,
    },
    /// Assignment scheduling.
    Schedule {
        #[command(subcommand)]
        command: ScheduleCommand,
    },
    /// Fuses assessments into per-frame labels.
    Fuse(FuseArgs),
    /// Scores a prediction file against fused ground truth.
    Evaluate(EvaluateArgs),
    /// Ranks scored teams.
    Leaderboard {
        /// JSON-lines file of team scores; the platform's scored submissions
        /// when absent.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Generates a synthetic pool and optionally drives a full campaign.
    Simulate {
        /// Simulator configuration (TOML); defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also run the pool through the orchestrator.
        #[arg(long)]
        campaign: bool,
    },
    /// Serves the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
    },
    /// Rebuilds state from the event log and prints a summary.
    Replay {
        /// Ignore the snapshot and replay every event.
        #[arg(long)]
        no_snapshot: bool,
        /// Write a fresh snapshot afterwards.
        #[arg(long)]
        write_snapshot: bool,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScheduleCommand {
    /// Issues one assignment batch at the given time.
    Tick {
        #[arg(long)]
        seed: u64,
        /// RFC 3339 timestamp of the tick.
        #[arg(long)]
        at: Timestamp,
        /// Writes the blinded assignments as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// JSON-lines file of annotated clips.
    #[arg(long, conflicts_with = "assessments")]
    pub clips: Option<PathBuf>,
    /// JSON-lines file of assessments, grouped by clip.
    #[arg(long)]
    pub assessments: Option<PathBuf>,
    /// Restricts `--clips` input to one split.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Fused frames as JSON lines; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Writes dataset statistics as JSON.
    #[arg(long, conflicts_with = "assessments")]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// JSON-lines prediction file, one clip per line.
    #[arg(long)]
    pub submission: PathBuf,
    /// JSON-lines fused frames of the test split.
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// JSON-lines annotated clips; provides the metadata for variant splits.
    #[arg(long)]
    pub clips: PathBuf,
    /// Report as JSON; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Appends the team's leaderboard entry to this JSON-lines file.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Marks the entry as an unranked reference.
    #[arg(long)]
    pub baseline: bool,
    /// Scores in exact rationals.
    #[arg(long)]
    pub exact: bool,
    /// Predictor command for the causal audit, e.g. `python predict.py`.
    #[arg(long)]
    pub audit_cmd: Option<String>,
    /// Number of test clips the audit replays.
    #[arg(long, default_value_t = 3)]
    pub audit_clips: usize,
    /// Per-frame reply timeout for the audited predictor, in seconds.
    #[arg(long, default_value_t = 10)]
    pub audit_timeout: u64,
    /// Records the submission and its scores on the platform under this id.
    #[arg(long)]
    pub record: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Simulator configuration file: pool parameters at the top level and an
/// optional `[campaign]` table.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct SimFile {
    #[serde(flatten)]
    pub pool: SimConfig,
    pub campaign: Option<CampaignPolicy>,
}

/// Outcome of a batch command over input records.
#[derive(Debug, Default, Serialize)]
pub struct BatchSummary {
    pub accepted: usize,
    pub duplicates: usize,
    pub rejected: Vec<Rejected>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Serialize)]
pub struct Rejected {
    pub id: String,
    pub error_class: String,
    pub error: String,
}

impl BatchSummary {
    fn outcome(&mut self, id: &str, r: Result<(), cvs_core::orchestrator::EngineError>) {
        match r {
            Ok(()) => self.accepted += 1,
            Err(e) if platform::is_duplicate(&e) => self.duplicates += 1,
            Err(e) => self.rejected.push(Rejected {
                id: id.to_string(),
                error_class: e.class().to_string(),
                error: e.to_string(),
            }),
        }
    }

    fn finish(self, out: &mut dyn Write) -> anyhow::Result<()> {
        print_json(out, &self)?;
        if !self.rejected.is_empty() {
            bail!("{} record(s) rejected", self.rejected.len());
        }
        Ok(())
    }
}

/// One blinded assignment handed to an annotator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindAssignment {
    pub annotator_id: cvs_core::domain::AnnotatorId,
    pub tick_id: u64,
    pub due_at: Timestamp,
    pub clip: AnnotatorView,
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, v)?;
    writeln!(out)?;
    Ok(())
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    jsonl::read_path(path).with_context(|| format!("reading {}", path.display()))
}

fn write_lines<T: Serialize>(path: Option<&Path>, out: &mut dyn Write, records: &[T]) -> anyhow::Result<()> {
    match path {
        Some(p) => jsonl::write_path(p, records).with_context(|| format!("writing {}", p.display())),
        None => Ok(jsonl::write(out, records)?),
    }
}

pub fn load_config(cli: &Cli) -> anyhow::Result<OpsConfig> {
    let mut cfg = OpsConfig::from_env(cli.config.as_deref())?;
    if let Some(d) = &cli.data_dir {
        cfg.data_dir = d.clone();
    }
    Ok(cfg)
}

fn open_engine(cfg: &OpsConfig) -> anyhow::Result<Engine> {
    Ok(platform::open(cfg, Arc::new(SystemClock), cfg.seed)?.0)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> anyhow::Result<()> {
    match &cli.command {
        Command::Simulate {
            config,
            seed,
            out: dir,
            campaign,
        } => return simulate(config.as_deref(), *seed, dir, *campaign, out),
        Command::Fuse(args) if args.clips.is_some() || args.assessments.is_some() => return fuse_files(args, out),
        Command::Evaluate(args) if args.record.is_none() => return evaluate(None, args, out),
        Command::Leaderboard {
            scores: Some(path),
            format,
        } => return print_leaderboard(&read::<TeamScores>(path)?, *format, out),
        _ => {}
    }

    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Intake { file } => {
            let mut o = open_engine(&cfg)?;
            let mut summary = BatchSummary::default();
            for rec in read::<IntakeRecord>(&file)? {
                let id = rec.case_id.to_string();
                summary.outcome(&id, o.intake(rec));
            }
            platform::save_snapshot(&cfg, o.state())?;
            summary.finish(out)
        }
        Command::Screen { file, reprocessed } => {
            let mut o = open_engine(&cfg)?;
            let mut summary = BatchSummary::default();
            let mut concordant = 0usize;
            let mut clips: Vec<ClipId> = Vec::new();
            if let Some(file) = file {
                for s in read::<ScreeningSubmission>(&file)? {
                    let id = s.case_id.to_string();
                    let r = platform::screen_case(&mut o, &s.case_id, s.verdict, s.needs_blur);
                    summary.outcome(
                        &id,
                        r.map(|(status, clip)| {
                            concordant += usize::from(status == ChainStatus::Concordant);
                            clips.extend(clip);
                        }),
                    );
                }
            }
            for case in reprocessed {
                let r = platform::reprocessed(&mut o, &CaseId::new(case.clone())).map(|c| clips.extend(c));
                summary.outcome(&case, r);
            }
            platform::save_snapshot(&cfg, o.state())?;
            summary.extra.insert("concordant".into(), concordant.into());
            summary.extra.insert("clips_extracted".into(), serde_json::to_value(&clips)?);
            summary.finish(out)
        }
        Command::Onboard { file } => {
            let mut o = open_engine(&cfg)?;
            let mut summary = BatchSummary::default();
            for a in read::<Annotator>(&file)? {
                summary.outcome(a.annotator_id.as_str(), platform::onboard(&mut o, &a));
            }
            platform::save_snapshot(&cfg, o.state())?;
            summary.extra.insert("funnel".into(), serde_json::to_value(funnel_report(o.state().annotators.values()))?);
            summary.finish(out)
        }
        Command::Assess { file } => {
            let mut o = open_engine(&cfg)?;
            let mut notifier = crate::notify::bind(&cfg)?;
            let mut summary = BatchSummary::default();
            for a in read::<Assessment>(&file)? {
                let id = format!("{}/{}", a.clip_id, a.annotator_id);
                summary.outcome(&id, o.submit_assessment(a).map(|_| ()));
            }
            let effects = o.run_due_effects(notifier.as_mut());
            platform::save_snapshot(&cfg, o.state())?;
            summary.extra.insert("fused_clips".into(), o.state().fused.len().into());
            summary.extra.insert("effects".into(), serde_json::to_value(effects)?);
            summary.finish(out)
        }
        Command::Schedule {
            command: ScheduleCommand::Tick { seed, at, out: path },
        } => {
            let clock = ManualClock::new(at);
            let (mut o, _) = platform::open(&cfg, Arc::new(clock) as Arc<dyn Clock>, seed)?;
            let mut notifier = crate::notify::bind(&cfg)?;
            let batch = o.run_tick()?;
            let effects = o.run_due_effects(notifier.as_mut());
            platform::save_snapshot(&cfg, o.state())?;
            let state = o.state();
            let blinded = batch
                .assignments
                .iter()
                .map(|a| {
                    let case = state
                        .clip_case
                        .get(&a.clip_id)
                        .and_then(|c| state.videos.get(c))
                        .with_context(|| format!("clip {} has no case", a.clip_id))?;
                    let clip = case.clip.as_ref().with_context(|| format!("case {} has no clip", case.case_id))?;
                    Ok(BlindAssignment {
                        annotator_id: a.annotator_id.clone(),
                        tick_id: batch.tick_id,
                        due_at: a.due_at,
                        clip: blind_payload(clip, &case.provenance),
                    })
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            if let Some(p) = &path {
                jsonl::write_path(p, &blinded)?;
            }
            let per: BTreeMap<String, usize> =
                batch.per_annotator().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            let summary = serde_json::json!({
                "tick_id": batch.tick_id,
                "issued_at": batch.issued_at,
                "assignments": batch.assignments.len(),
                "per_annotator": per,
                "fully_covered": state.coverage.fully_covered(state.config.scheduler.coverage_target),
                "effects": effects,
            });
            print_json(out, &summary)?;
            if path.is_none() {
                jsonl::write(&mut *out, &blinded)?;
            }
            Ok(())
        }
        Command::Fuse(args) => {
            let o = open_engine(&cfg)?;
            let state = o.state();
            let frames: Vec<FusedFrame<f64>> = state.fused.values().flatten().cloned().collect();
            write_lines(args.out.as_deref(), out, &frames)?;
            if let Some(p) = &args.stats {
                std::fs::write(p, serde_json::to_vec_pretty(&dataset_stats(&platform::fused_pool(state)))?)?;
            }
            if args.out.is_some() {
                print_json(out, &serde_json::json!({ "clips": state.fused.len(), "frames": frames.len() }))?;
            }
            Ok(())
        }
        Command::Evaluate(args) => evaluate(Some(&cfg), &args, out),
        Command::Leaderboard { scores: _, format } => {
            let o = open_engine(&cfg)?;
            print_leaderboard(&platform::platform_scores(o.state()), format, out)
        }
        Command::Serve { bind } => {
            let mut cfg = cfg;
            if let Some(b) = bind {
                cfg.server.bind = b;
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::api::serve(cfg))
        }
        Command::Replay {
            no_snapshot,
            write_snapshot,
        } => {
            let (o, report) = platform::open_with(&cfg, Arc::new(SystemClock), cfg.seed, !no_snapshot)?;
            if write_snapshot {
                platform::save_snapshot(&cfg, o.state())?;
            }
            let summary = serde_json::json!({
                "source": format!("{:?}", report.source),
                "replayed": report.replayed,
                "warning": report.warning,
                "metrics": platform::metrics(o.state()),
            });
            print_json(out, &summary)
        }
        Command::Simulate { .. } => unreachable!("handled above"),
    }
}

fn simulate(config: Option<&Path>, seed: u64, dir: &Path, campaign: bool, out: &mut dyn Write) -> anyhow::Result<()> {
    let file: SimFile = match config {
        Some(p) => toml::from_str(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SimFile::default(),
    };
    let mut sim = file.pool;
    sim.seed = seed;
    let pool = generate_pool(&sim)?;
    let files = write_pool(&pool, dir)?;
    let stats = dataset_stats(&pool.clips);
    let funnel = funnel_report(&pool.recruitment);
    std::fs::write(dir.join("stats.json"), serde_json::to_vec_pretty(&stats)?)?;
    std::fs::write(dir.join("funnel.json"), serde_json::to_vec_pretty(&funnel)?)?;
    let mut summary = serde_json::json!({
        "seed": seed,
        "cases": pool.cases.len(),
        "clips": pool.clips.len(),
        "annotators": pool.annotators.len(),
        "files": files,
        "funnel": funnel,
    });
    if campaign {
        let mut policy = file.campaign.unwrap_or_default();
        policy.seed = seed;
        let start = chrono::DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z")?.to_utc();
        let run = run_campaign(&pool, &policy, ManualClock::new(start))?;
        jsonl::write_path(dir.join("events.jsonl"), &run.events)?;
        jsonl::write_path(dir.join("transcript.jsonl"), &run.transcript.entries)?;
        summary["campaign"] = serde_json::json!({
            "ticks": run.transcript.ticks(),
            "events": run.events.len(),
            "fused_clips": run.state.fused.len(),
            "notifications": run.notifications.delivered.len(),
        });
    }
    print_json(out, &summary)
}

fn fuse_files(args: &FuseArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let mut clips: Vec<AnnotatedClip> = Vec::new();
    let groups: Vec<(ClipId, Vec<Assessment>)> = if let Some(p) = &args.clips {
        clips = read(p)?;
        if let Some(split) = args.split {
            clips.retain(|c| c.split == Split::from(split));
        }
        clips.iter().map(|c| (c.clip_id.clone(), c.assessments.clone())).collect()
    } else {
        let mut by_clip: BTreeMap<ClipId, Vec<Assessment>> = BTreeMap::new();
        for a in read::<Assessment>(args.assessments.as_deref().expect("checked by caller"))? {
            by_clip.entry(a.clip_id.clone()).or_default().push(a);
        }
        by_clip.into_iter().collect()
    };
    let mut frames: Vec<FusedFrame<f64>> = Vec::new();
    let mut failed = Vec::new();
    for (clip_id, assessments) in &groups {
        match fuse_clip::<f64>(assessments) {
            Ok(f) => frames.extend(f),
            Err(e) => failed.push(Rejected {
                id: clip_id.to_string(),
                error_class: "FUSION".into(),
                error: e.to_string(),
            }),
        }
    }
    write_lines(args.out.as_deref(), out, &frames)?;
    if let Some(p) = &args.stats {
        std::fs::write(p, serde_json::to_vec_pretty(&dataset_stats(&clips))?)?;
    }
    if args.out.is_some() {
        print_json(
            out,
            &serde_json::json!({ "clips": groups.len() - failed.len(), "frames": frames.len(), "failed": failed }),
        )?;
    }
    if !failed.is_empty() {
        bail!("{} clip(s) could not be fused", failed.len());
    }
    Ok(())
}

/// Deterministic stand-in media for auditing a predictor offline: one
/// feature value per frame, seeded by the clip id.
pub fn synthetic_media(clip_id: &ClipId) -> ClipMedia {
    let mut seed = [0u8; 32];
    for (i, b) in clip_id.as_str().bytes().enumerate() {
        seed[i % 32] ^= b.rotate_left((i / 32) as u32);
    }
    let mut rng = rand_chacha::ChaCha8Rng::from_seed(seed);
    ClipMedia {
        clip_id: clip_id.clone(),
        frames: (0..CLIP_FRAMES).map(|_| rng.random::<f64>()).collect(),
    }
}

fn evaluate(cfg: Option<&OpsConfig>, args: &EvaluateArgs, out: &mut dyn Write) -> anyhow::Result<()> {
    let eval_cfg = cfg.map(|c| c.evaluation.clone()).unwrap_or_default();
    let predictions: Vec<ClipPrediction> = read(&args.submission)?;
    let team = predictions.first().map(|p| p.team_id.to_string()).unwrap_or_default();
    let sub = Submission::from_predictions(
        predictions,
        SubmissionMeta {
            name: team,
            contact: String::new(),
        },
    )?;
    let frames: Vec<FusedFrame<f64>> = read(&args.ground_truth)?;
    let gt_clips: std::collections::BTreeSet<&ClipId> = frames.iter().map(|f| &f.clip_id).collect();
    let pool: Vec<AnnotatedClip> = read::<AnnotatedClip>(&args.clips)?
        .into_iter()
        .filter(|c| gt_clips.contains(&c.clip_id))
        .collect();
    let (splits, empty) = platform::variant_splits(&pool, eval_cfg.splits.as_deref());
    for id in &empty {
        tracing::warn!(split = %id, "variant split selects no test clip; skipped");
    }
    let mut report = platform::score(&sub, &frames, &splits, args.exact || eval_cfg.exact)?;

    if let Some(cmd) = &args.audit_cmd {
        let mut parts = cmd.split_whitespace();
        let program = parts.next().context("empty --audit-cmd")?;
        let mut predictor = ProcessPredictor::new(
            program,
            parts.map(String::from).collect(),
            Duration::from_secs(args.audit_timeout),
        )?;
        let mut outcome = AuditOutcome::Pass;
        for clip_id in gt_clips.iter().take(args.audit_clips) {
            let o = causal_audit(&mut predictor, &synthetic_media(clip_id))?;
            if o != AuditOutcome::Pass {
                outcome = o;
                break;
            }
        }
        report.set_audit(outcome);
    }

    let mut scores = report.team_scores();
    scores.baseline = args.baseline;
    match &args.out {
        Some(p) => std::fs::write(p, serde_json::to_vec_pretty(&report)?)?,
        None => print_json(out, &report)?,
    }
    if let Some(p) = &args.scores_out {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(p)?;
        writeln!(f, "{}", serde_json::to_string(&scores)?)?;
    }
    if let (Some(cfg), Some(id)) = (cfg, &args.record) {
        let mut o = open_engine(cfg)?;
        o.receive_submission(id, &sub)?;
        o.record_scores(id, scores.clone())?;
        platform::save_snapshot(cfg, o.state())?;
    }
    if args.out.is_some() {
        print_json(out, &scores)?;
    }
    Ok(())
}

fn print_leaderboard(scores: &[TeamScores], format: Format, out: &mut dyn Write) -> anyhow::Result<()> {
    let rows = leaderboard(scores);
    match format {
        Format::Csv => write!(out, "{}", to_csv(&rows)?)?,
        Format::Json => writeln!(out, "{}", to_json(&rows)?)?,
        Format::Table => write!(out, "{}", table(&rows))?,
    }
    Ok(())
}

fn table(rows: &[LeaderboardRow]) -> String {
    let rank = |r: Option<usize>| r.map_or_else(|| "-".to_string(), |r| r.to_string());
    let mut s = format!(
        "{:>4}  {:<24} {:>8} {:>4} {:>8} {:>4} {:>8} {:>4} {:>5}\n",
        "rank", "team", "mAP", "r", "Brier", "r", "DRS", "r", "sum"
    );
    for r in rows {
        s.push_str(&format!(
            "{:>4}  {:<24} {:>8.2} {:>4} {:>8.4} {:>4} {:>8.2} {:>4} {:>5}\n",
            rank(r.overall_rank),
            r.team_id.as_str(),
            r.map_a,
            rank(r.rank_a),
            r.brier_b,
            rank(r.rank_b),
            r.drs_c,
            rank(r.rank_c),
            rank(r.rank_sum),
        ));
    }
    s
}
