use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use himm_core::harness::{
    build_semantic_memory, load_memory, run_suite, snapshot_memory, GatewayMode, HarnessConfig, HarnessError,
    MemoryBundle, SuiteFile,
};
use himm_core::physical_space::{to_pgm, MapSnapshot, PgmFormat};
use himm_core::semantic_memory::RuleStore;
use himm_core::simulator::SceneGenConfig;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "himm", version, about = "Memory-augmented exploration agent: run episodes and suites, build and inspect memory")]
struct Cli {
    /// TOML configuration file. Flags override environment variables, which
    /// override the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for suites run without recall.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true, value_enum)]
    gateway: Option<Gateway>,
    /// Reply script for the scripted gateway.
    #[arg(long, global = true)]
    script: Option<PathBuf>,
    #[arg(long, global = true)]
    api_base: Option<String>,
    #[arg(long, global = true)]
    api_key: Option<String>,
    #[arg(long, global = true)]
    chat_model: Option<String>,
    #[arg(long, global = true)]
    embed_model: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Gateway {
    Sim,
    Scripted,
    Openai,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode of a suite.
    RunEpisode {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        episode: String,
        #[command(flatten)]
        memory: MemoryArgs,
        /// Write the episode's final map (.pgm, or .json for the snapshot).
        #[arg(long)]
        map_out: Option<PathBuf>,
    },
    /// Run every episode of a suite and write result.json and result.txt.
    RunSuite {
        #[command(flatten)]
        suite: SuiteArgs,
        #[command(flatten)]
        memory: MemoryArgs,
        #[arg(long)]
        out: PathBuf,
        /// Save the memory after the run.
        #[arg(long)]
        save_memory: Option<PathBuf>,
    },
    /// Run a training suite and distill rules into the memory directory.
    BuildSemanticMemory {
        #[command(flatten)]
        suite: SuiteArgs,
        /// Memory directory; created when missing, extended otherwise.
        #[arg(long)]
        memory: PathBuf,
    },
    /// Summarize a memory directory.
    InspectMemory {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Generate random scenes and a suite with one question per scene.
    GenScenes {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a stored episode's map.
    ExportMap {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long)]
        episode: String,
        /// .pgm for an image, .json for the snapshot.
        #[arg(long)]
        out: PathBuf,
        /// Binary PGM instead of ASCII.
        #[arg(long)]
        raw: bool,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Suite file.
    #[arg(long, conflicts_with = "builtin", required_unless_present = "builtin")]
    suite: Option<PathBuf>,
    /// A built-in suite.
    #[arg(long, value_enum)]
    builtin: Option<Builtin>,
    /// Scenes per kind for built-in suites.
    #[arg(long, default_value_t = 10)]
    scenes: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Builtin {
    Reference,
    Revisit,
    Rules,
}

#[derive(Args)]
struct MemoryArgs {
    /// Memory directory to start from.
    #[arg(long)]
    memory: Option<PathBuf>,
    #[arg(long)]
    no_recall: bool,
    #[arg(long)]
    no_rules: bool,
}

enum Failure {
    Config(String),
    Episodes(usize),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

fn resolve_config(cli: &Cli) -> Result<HarnessConfig, Failure> {
    let mut c = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            toml::from_str::<HarnessConfig>(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
        None => HarnessConfig::default(),
    };
    let g = &mut c.gateway;
    if let Some(v) = env_var("HIMM_API_BASE") {
        g.api_base = v;
    }
    if let Some(v) = env_var("HIMM_API_KEY") {
        g.api_key = Some(v);
    }
    if let Some(v) = env_var("HIMM_CHAT_MODEL") {
        g.chat_model = v;
    }
    if let Some(v) = env_var("HIMM_EMBED_MODEL") {
        g.embed_model = v;
    }
    if let Some(v) = &cli.api_base {
        g.api_base = v.clone();
    }
    if let Some(v) = &cli.api_key {
        g.api_key = Some(v.clone());
    }
    if let Some(v) = &cli.chat_model {
        g.chat_model = v.clone();
    }
    if let Some(v) = &cli.embed_model {
        g.embed_model = v.clone();
    }
    if let Some(v) = &cli.script {
        g.script = Some(v.clone());
    }
    if let Some(m) = cli.gateway {
        g.mode = match m {
            Gateway::Sim => GatewayMode::Sim,
            Gateway::Scripted => GatewayMode::Scripted,
            Gateway::Openai => GatewayMode::Openai,
        };
    }
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(j) = cli.jobs {
        c.jobs = j;
    }
    c.validate()?;
    Ok(c)
}

fn load_suite(args: &SuiteArgs, seed: u64) -> Result<SuiteFile, Failure> {
    Ok(match (&args.suite, args.builtin) {
        (Some(p), _) => SuiteFile::load(p)?,
        (None, Some(Builtin::Reference)) => SuiteFile::reference(),
        (None, Some(Builtin::Revisit)) => SuiteFile::revisit(seed, args.scenes, args.scenes)?,
        (None, Some(Builtin::Rules)) => SuiteFile::rule_sensitive(seed, args.scenes)?,
        (None, None) => return Err(Failure::Config("--suite or --builtin is required".into())),
    })
}

fn load_bundle(dir: Option<&Path>) -> Result<MemoryBundle, Failure> {
    match dir {
        Some(d) => Ok(load_memory(d)?),
        None => Ok(MemoryBundle::default()),
    }
}

fn apply_memory_flags(config: &mut HarnessConfig, m: &MemoryArgs) {
    if m.no_recall {
        config.agent.recall_enabled = false;
    }
    if m.no_rules {
        config.agent.rules_enabled = false;
    }
}

fn write_map(grid: &himm_core::physical_space::OccupancyGrid, out: &Path, raw: bool) -> Result<(), Failure> {
    let bytes = if out.extension().is_some_and(|e| e == "json") {
        (serde_json::to_string_pretty(&MapSnapshot::from_grid(grid)).expect("map serializes") + "\n").into_bytes()
    } else {
        to_pgm(grid, if raw { PgmFormat::Raw } else { PgmFormat::Plain })
    };
    std::fs::write(out, bytes).map_err(|e| io_err(out, e))
}

#[derive(Serialize)]
struct EpisodeSummary<'a> {
    episode_id: &'a str,
    scene: Option<&'a str>,
    created_at: u64,
    observations: usize,
    regions: usize,
    map_width: usize,
    map_height: usize,
}

#[derive(Serialize)]
struct RuleSummary<'a> {
    form: &'a str,
    anchor: &'a str,
    key: &'a str,
    value: &'a str,
    source: &'a str,
}

#[derive(Serialize)]
struct MemorySummary<'a> {
    episodes: Vec<EpisodeSummary<'a>>,
    rules: Option<Vec<RuleSummary<'a>>>,
}

fn inspect(bundle: &MemoryBundle, json: bool) {
    let summary = MemorySummary {
        episodes: bundle
            .episodic
            .records()
            .iter()
            .map(|r| EpisodeSummary {
                episode_id: &r.episode_id,
                scene: r.scene_tag.as_deref(),
                created_at: r.created_at,
                observations: r.semantic_space.len(),
                regions: r.semantic_space.region_count(),
                map_width: r.physical_space.width(),
                map_height: r.physical_space.height(),
            })
            .collect(),
        rules: bundle.rules.as_ref().map(|rs| {
            rs.rules()
                .iter()
                .map(|r| RuleSummary {
                    form: r.form.tag(),
                    anchor: &r.anchor,
                    key: &r.key,
                    value: &r.value,
                    source: &r.source_episode_id,
                })
                .collect()
        }),
    };
    if json {
        println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        return;
    }
    println!("{} episodes", summary.episodes.len());
    for e in &summary.episodes {
        println!(
            "  {:<24} t={:<4} scene={:<16} obs={:<3} regions={:<4} map={}x{}",
            e.episode_id,
            e.created_at,
            e.scene.unwrap_or("-"),
            e.observations,
            e.regions,
            e.map_width,
            e.map_height
        );
    }
    match &summary.rules {
        None => println!("no rule store"),
        Some(rs) => {
            println!("{} rules", rs.len());
            for r in rs {
                println!("  [{}] {} ({}): {} => {}", r.source, r.form, r.anchor, r.key, r.value);
            }
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = resolve_config(&cli)?;
    match &cli.command {
        Command::RunEpisode {
            suite,
            episode,
            memory,
            map_out,
        } => {
            apply_memory_flags(&mut config, memory);
            let mut s = load_suite(suite, config.seed)?;
            s.episodes.retain(|e| &e.id == episode);
            if s.episodes.is_empty() {
                return Err(Failure::Config(format!("no episode {episode} in suite {}", s.name)));
            }
            s.tags.clear();
            let bundle = load_bundle(memory.memory.as_deref())?;
            let run = run_suite(&s, &config, bundle.episodic, bundle.rules.as_ref())?;
            let r = &run.episodes[0];
            print!("{}", r.log.render());
            print!("{}", run.result.table());
            if let Some(out) = map_out {
                let rec = run
                    .memory
                    .get(episode)
                    .ok_or_else(|| Failure::Config("the episode produced no map".into()))?;
                write_map(&rec.physical_space, out, false)?;
            }
            if run.result.failures() > 0 {
                return Err(Failure::Episodes(run.result.failures()));
            }
        }
        Command::RunSuite {
            suite,
            memory,
            out,
            save_memory,
        } => {
            apply_memory_flags(&mut config, memory);
            let s = load_suite(suite, config.seed)?;
            let bundle = load_bundle(memory.memory.as_deref())?;
            let rules = bundle.rules;
            let run = run_suite(&s, &config, bundle.episodic, rules.as_ref())?;
            run.result.write(out, "result")?;
            print!("{}", run.result.table());
            if let Some(dir) = save_memory {
                snapshot_memory(
                    &MemoryBundle {
                        episodic: run.memory,
                        rules,
                    },
                    dir,
                )?;
            }
            if run.result.failures() > 0 {
                return Err(Failure::Episodes(run.result.failures()));
            }
        }
        Command::BuildSemanticMemory { suite, memory } => {
            let s = load_suite(suite, config.seed)?;
            let existing = if memory.join("index.json").exists() {
                load_memory(memory)?
            } else {
                MemoryBundle::default()
            };
            let rules = existing.rules.unwrap_or_else(|| RuleStore::new(config.sim.dim));
            let before = rules.len();
            let report = build_semantic_memory(&s, &config, rules)?;
            println!(
                "{} training episodes, {} new rules ({} total), {} replies dropped",
                s.episodes.len(),
                report.rules.len() - before,
                report.rules.len(),
                report.dropped
            );
            for (id, why) in &report.skipped {
                println!("  skipped {id}: {why}");
            }
            snapshot_memory(
                &MemoryBundle {
                    episodic: existing.episodic,
                    rules: Some(report.rules),
                },
                memory,
            )?;
        }
        Command::InspectMemory { memory, json } => inspect(&load_memory(memory)?, *json),
        Command::GenScenes { count, out } => {
            let seed = config.seed;
            let suite = SuiteFile::generated(*count, seed, &SceneGenConfig::default())?;
            let scenes = out.join("scenes");
            std::fs::create_dir_all(&scenes).map_err(|e| io_err(&scenes, e))?;
            for sc in &suite.scenes {
                sc.save(&scenes.join(format!("{}.json", sc.name))).map_err(HarnessError::from)?;
            }
            suite.save(&out.join("suite.json"))?;
            println!("wrote {} scenes and suite.json to {}", suite.scenes.len(), out.display());
        }
        Command::ExportMap {
            memory,
            episode,
            out,
            raw,
        } => {
            let bundle = load_memory(memory)?;
            let rec = bundle
                .episodic
                .get(episode)
                .ok_or_else(|| Failure::Config(format!("no episode {episode} in {}", memory.display())))?;
            write_map(&rec.physical_space, out, *raw)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Episodes(n)) => {
            eprintln!("{n} episode(s) failed");
            ExitCode::from(1)
        }
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
