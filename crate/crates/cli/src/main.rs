use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sceneforge::emitter::EmitMode;
use sceneforge::eval_harness::{load_cases, parse_cases, run_benchmark, Execution, DEFAULT_BENCHMARK_JSONL, DEFAULT_RUNNER};
use sceneforge::frontend::FrontendMode;
use sceneforge::knowledge::{FieldRequest, JsonLinesSink, KbMode, MemorySink, SceneRecipe};
use sceneforge::pipeline::{generate, ConfigFile, EmbedderKind, Engine, ProviderKind, RunOptions, Sources};
use sceneforge::planner::ScenePlan;
use sceneforge::taxonomy::AssetPath;
use sceneforge::validator::{validate, ValidationReport};
use sceneforge::{Error, Exec};

#[derive(Parser)]
#[command(name = "sceneforge", version, about = "Compile natural-language field descriptions into engine scripts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config naming taxonomy, synonyms, kb, planner and provider settings.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    taxonomy: Option<PathBuf>,
    #[arg(long, global = true)]
    synonyms: Option<PathBuf>,
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    #[arg(long, global = true)]
    planner: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    #[arg(long, global = true, value_enum, default_value_t = Frontend::Rules)]
    frontend_mode: Frontend,
    #[arg(long, global = true, value_enum, default_value_t = Kb::Hybrid)]
    kb_mode: Kb,
    #[arg(long, global = true, value_enum, default_value_t = Emit::Template)]
    emit_mode: Emit,
    #[arg(long, global = true, value_enum, default_value_t = Provider::Mock)]
    provider: Provider,
    #[arg(long, global = true, value_enum, default_value_t = Embedder::Local)]
    embedder: Embedder,
    /// Record provider traffic into this directory.
    #[arg(long, global = true, conflicts_with = "replay")]
    record: Option<PathBuf>,
    /// Answer provider requests from a recorded session.
    #[arg(long, global = true)]
    replay: Option<PathBuf>,
    /// Load (or build and cache) indexes here.
    #[arg(long, global = true)]
    index_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    rows: Option<u32>,
    #[arg(long, global = true)]
    cols: Option<u32>,
    /// Gap between neighbouring fields in metres.
    #[arg(long, global = true)]
    gap: Option<f64>,
    /// Candidates per path query.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    kb_k: Option<usize>,
    /// Disable data-parallel execution.
    #[arg(long, global = true)]
    sequential: bool,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Frontend {
    Rules,
    Provider,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kb {
    Hybrid,
    Rag,
}

#[derive(Clone, Copy, ValueEnum)]
enum Emit {
    Template,
    Provider,
}

#[derive(Clone, Copy, ValueEnum)]
enum Provider {
    Mock,
    Http,
}

#[derive(Clone, Copy, ValueEnum)]
enum Embedder {
    Local,
    Remote,
}

#[derive(Subcommand)]
enum Command {
    /// Run the whole pipeline and write script, plan, report and manifest.
    Generate {
        prompt: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value = "scene")]
        name: String,
        /// Keep outputs written before a failure.
        #[arg(long)]
        keep_partial: bool,
    },
    /// Decompose a prompt and resolve asset paths.
    Retrieve { prompt: String },
    /// Attach knowledge entries to asset paths.
    Enrich {
        #[arg(required = true)]
        paths: Vec<String>,
        /// Append fallback events as JSON lines.
        #[arg(long)]
        fallback_log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Lay out fields for a recipe file.
    Plan {
        recipe: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a plan file as an engine script.
    Emit {
        plan: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a script against its plan.
    Validate {
        script: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        recipe: Option<PathBuf>,
    },
    /// Score the pipeline on a benchmark.
    Eval {
        /// JSONL cases; the bundled benchmark when omitted.
        #[arg(long)]
        cases: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Execute each emitted script with an external runner.
        #[arg(long)]
        with_execution: bool,
        #[arg(long, default_value = DEFAULT_RUNNER)]
        runner: PathBuf,
        #[arg(long, default_value = "eval-work")]
        work_dir: PathBuf,
    },
    /// Build and persist the path and knowledge indexes.
    Index {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Global {
    fn sources(&self) -> Result<Sources, Error> {
        let mut config = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        for (flag, slot) in [
            (&self.taxonomy, &mut config.taxonomy),
            (&self.synonyms, &mut config.synonyms),
            (&self.kb, &mut config.kb),
            (&self.planner, &mut config.planner),
        ] {
            if flag.is_some() {
                *slot = flag.clone();
            }
        }
        Ok(Sources {
            config,
            provider: match self.provider {
                Provider::Mock => ProviderKind::Mock,
                Provider::Http => ProviderKind::Http,
            },
            embedder: match self.embedder {
                Embedder::Local => EmbedderKind::Local,
                Embedder::Remote => EmbedderKind::Remote,
            },
            record: self.record.clone(),
            replay: self.replay.clone(),
            index_dir: self.index_dir.clone(),
            exec: if self.sequential { Exec::Sequential } else { Exec::default() },
        })
    }

    fn options(&self) -> RunOptions {
        let d = RunOptions::default();
        RunOptions {
            seed: self.seed,
            frontend_mode: match self.frontend_mode {
                Frontend::Rules => FrontendMode::Rules,
                Frontend::Provider => FrontendMode::Provider,
            },
            kb_mode: match self.kb_mode {
                Kb::Hybrid => KbMode::Hybrid,
                Kb::Rag => KbMode::Rag,
            },
            emit_mode: match self.emit_mode {
                Emit::Template => EmitMode::Template,
                Emit::Provider => EmitMode::Provider,
            },
            path_k: self.k.unwrap_or(d.path_k),
            kb_k: self.kb_k.unwrap_or(d.kb_k),
            rows: self.rows,
            cols: self.cols,
            gap_m: self.gap,
        }
    }
}

fn read(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    serde_json::from_str(&read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

/// Writes `body` to `out` when given, else to stdout.
fn deliver(out: Option<&Path>, body: &str) -> Result<(), Error> {
    match out {
        Some(p) => Ok(sceneforge::io::write_atomic(p, body.as_bytes())?),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn print_report(report: &ValidationReport, json: bool) {
    if json {
        print!("{}", to_json(report));
    } else {
        println!("{}", report.summary());
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    let opts = g.options();
    // commands that never touch the indexes skip engine construction
    match &cli.command {
        Command::Plan { recipe, out } => {
            let recipe: SceneRecipe = parse_json(recipe)?;
            let mut cfg = match &g.sources()?.config.planner {
                Some(p) => sceneforge::planner::PlannerConfig::load(p)?,
                None => sceneforge::planner::PlannerConfig::default_bundled(),
            };
            cfg.rows = opts.rows.unwrap_or(cfg.rows);
            cfg.cols = opts.cols.unwrap_or(cfg.cols);
            cfg.gap_m = opts.gap_m.unwrap_or(cfg.gap_m);
            let exec = if g.sequential { Exec::Sequential } else { Exec::default() };
            let plan = sceneforge::planner::plan_scene(&recipe, opts.seed, &cfg, exec)?;
            return deliver(out.as_deref(), &plan.to_json());
        }
        Command::Emit { plan, out } if matches!(g.emit_mode, Emit::Template) => {
            let p = ScenePlan::from_json(&read(plan)?).map_err(|e| Error::Config(format!("{}: {e}", plan.display())))?;
            let plan_ref = plan.file_name().map_or("plan.json".into(), |n| n.to_string_lossy().into_owned());
            let script = sceneforge::emitter::emit_script(&p, &plan_ref)?;
            return deliver(out.as_deref(), &script.source);
        }
        Command::Validate { script, plan, recipe } => {
            let src = read(script)?;
            let p = ScenePlan::from_json(&read(plan)?).map_err(|e| Error::Config(format!("{}: {e}", plan.display())))?;
            let recipe: Option<SceneRecipe> = recipe.as_deref().map(parse_json).transpose()?;
            let sources = g.sources()?;
            let tax_text = match &sources.config.taxonomy {
                Some(t) => read(t)?,
                None => sceneforge::taxonomy::DEFAULT_TAXONOMY_JSON.to_string(),
            };
            let tax = sceneforge::taxonomy::TaxonomyConfig::from_json(&tax_text)?;
            let report = validate(&src, &p, recipe.as_ref(), &tax);
            print_report(&report, g.json);
            return if report.passed { Ok(()) } else { Err(Error::Validation(report.summary())) };
        }
        _ => {}
    }

    let engine = Engine::load(&g.sources()?)?;
    match cli.command {
        Command::Generate { prompt, out, name, keep_partial } => {
            std::fs::create_dir_all(&out)?;
            match generate(&engine, &prompt, &opts, &out, &name, keep_partial) {
                Ok(o) => {
                    print_report(&o.report, g.json);
                    if !g.json {
                        for f in &o.files {
                            println!("wrote {}", f.display());
                        }
                    }
                    Ok(())
                }
                Err(e) => {
                    if let Error::Validation(summary) = &e {
                        println!("{summary}");
                    }
                    Err(e)
                }
            }
        }
        Command::Retrieve { prompt } => {
            let (d, r) = engine.retrieve(&prompt, &opts)?;
            if g.json {
                print!("{}", to_json(&serde_json::json!({ "decomposition": d, "retrieval": r })));
            } else {
                for w in d.warnings.iter().chain(&r.warnings) {
                    eprintln!("warning: {w}");
                }
                for s in &r.selections {
                    println!("{}\tx{}\trank {}\t{:.4}", s.path, s.quantity, s.rank, s.score);
                }
            }
            Ok(())
        }
        Command::Enrich { paths, fallback_log, out } => {
            let requests: Vec<FieldRequest> = paths
                .into_iter()
                .map(|p| FieldRequest { rows: opts.rows, cols: opts.cols, ..FieldRequest::from(AssetPath::new_unchecked(p)) })
                .collect();
            let recipe = match fallback_log {
                Some(log) => engine.enrich(&requests, &opts, &JsonLinesSink::create(&log)?)?,
                None => engine.enrich(&requests, &opts, &MemorySink::default())?,
            };
            for f in &recipe.fallbacks {
                eprintln!("warning: no semantic match for {f}; used a fallback entry");
            }
            deliver(out.as_deref(), &to_json(&recipe))
        }
        Command::Emit { plan, out } => {
            let p = ScenePlan::from_json(&read(&plan)?).map_err(|e| Error::Config(format!("{}: {e}", plan.display())))?;
            let plan_ref = plan.file_name().map_or("plan.json".into(), |n| n.to_string_lossy().into_owned());
            let script = engine.emit(&p, &plan_ref, EmitMode::Provider)?;
            deliver(out.as_deref(), &script.source)
        }
        Command::Eval { cases, out, with_execution, runner, work_dir } => {
            let cases = match cases {
                Some(p) => load_cases(&p, &engine.taxonomy)?,
                None => parse_cases(DEFAULT_BENCHMARK_JSONL, &engine.taxonomy)?,
            };
            let execution = with_execution.then_some(Execution { runner, work_dir });
            let report = run_benchmark(&cases, &engine, &opts, execution.as_ref())?;
            let body = report.to_json();
            match out {
                Some(p) => {
                    sceneforge::io::write_atomic(&p, body.as_bytes())?;
                    if !g.json {
                        for (cat, m) in &report.categories {
                            println!("{:<16} cases {:>3}  accuracy {:.3}", cat.as_str(), m.cases, m.accuracy);
                        }
                        println!("wrote {}", p.display());
                    } else {
                        print!("{body}");
                    }
                }
                None => print!("{body}"),
            }
            Ok(())
        }
        Command::Index { out } => {
            let dir = out.or_else(|| g.index_dir.clone()).unwrap_or_else(|| PathBuf::from("index"));
            std::fs::create_dir_all(&dir)?;
            let files = engine.write_indexes(&dir)?;
            if g.json {
                let names: Vec<String> = files.iter().map(|f| f.display().to_string()).collect();
                print!("{}", to_json(&serde_json::json!({ "paths": engine.path_index.len(), "kb": engine.kb.len(), "files": names })));
            } else {
                println!("indexed {} paths and {} knowledge entries", engine.path_index.len(), engine.kb.len());
                for f in files {
                    println!("wrote {}", f.display());
                }
            }
            Ok(())
        }
        Command::Plan { .. } | Command::Validate { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let json = cli.global.json;
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if json {
                let body = serde_json::json!({ "error": { "stage": e.stage(), "message": e.to_string(), "exit_code": e.exit_code() } });
                eprintln!("{body}");
            } else if !matches!(e, Error::Validation(_)) {
                eprintln!("error [{}]: {e}", e.stage());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
