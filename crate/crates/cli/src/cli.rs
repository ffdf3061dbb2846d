use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ontodesign_core::corpus::{ingest_corpus, TokenizerConfig, DEFAULT_MAX_N};
use ontodesign_core::project::{Artifacts, PipelineSettings, Project, ProjectError};
use ontodesign_core::rules::{
    generate_match_rules, generate_parent_child_rules, is_category, parse_manual_rules, print_program, stratify, CategoryRuleSpec,
    NEGATIVE, POSITIVE, SUCCESS,
};
use ontodesign_core::schema::{parse_edit_log, validate, DEFAULT_BALANCE_RATIO};

use crate::export::export;

#[derive(Debug, Parser)]
#[command(name = "ontodesign", version, about = "Build a document classification schema from a corpus")]
pub struct Cli {
    /// Project file.
    #[arg(long, global = true, default_value = "ontodesign.json")]
    pub project: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a project from a directory of .txt files or a JSONL file.
    Ingest {
        source: PathBuf,
        #[arg(long)]
        name: Option<String>,
        /// Longest n-gram indexed (1 to 5).
        #[arg(long, default_value_t = DEFAULT_MAX_N)]
        max_n: usize,
        #[arg(long)]
        no_fold_accents: bool,
    },
    /// Build the typology, or rebuild one subtree with --code.
    Cluster(ClusterArgs),
    /// Edit the ontology.
    Edit {
        #[command(subcommand)]
        command: EditCommand,
    },
    /// Inspect and edit classification rules.
    Rules {
        #[command(subcommand)]
        command: RulesCommand,
    },
    /// Evaluate the rules over the corpus.
    Classify {
        /// Also write assignments as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Print the ontology, typology, program or results in a given format.
    Export {
        format: String,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Directory of static files served under `/`.
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub max_size: Option<usize>,
    #[arg(long)]
    pub min_split: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub max_df_ratio: Option<f64>,
    #[arg(long)]
    pub max_features: Option<usize>,
    /// File with one stopword per line.
    #[arg(long)]
    pub stopwords: Option<PathBuf>,
    /// Recluster only the subtree with this code.
    #[arg(long)]
    pub code: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum EditCommand {
    /// Apply a log of edits, one JSON object per line.
    Apply { log: PathBuf },
    /// Drop the last edit.
    Undo,
    /// Report exclusivity, exhaustivity and balance.
    Validate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum RulesCommand {
    /// Print the default match rules of every category.
    GenDefaults {
        /// Include parent-child propagation rules.
        #[arg(long)]
        parent_child: bool,
    },
    /// Print the full program used by `classify`.
    Compile,
    /// Parse and check a rule file.
    Check { file: PathBuf },
    /// Set the evidence of a category. Commas inside one value join grams
    /// into a single clause.
    Set {
        category: String,
        #[arg(long = "positive", short = 'p')]
        positives: Vec<String>,
        #[arg(long = "negative", short = 'n')]
        negatives: Vec<String>,
    },
    /// Replace the hand-written rules with the content of a file.
    Manual { file: PathBuf },
    /// Turn parent-child propagation on or off.
    ParentChild { state: Toggle },
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(cli, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            1
        }
    }
}

fn load(path: &Path) -> anyhow::Result<Project> {
    Project::load(path).with_context(|| format!("cannot open project {}", path.display()))
}

fn artifacts(project: &Project, path: &Path, err: &mut dyn Write) -> anyhow::Result<Artifacts> {
    let (artifacts, warnings) = project.load_artifacts(path)?;
    for w in warnings {
        writeln!(err, "warning: {w}")?;
    }
    Ok(artifacts)
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn execute(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let path = cli.project.as_path();
    match cli.command {
        Command::Ingest { source, name, max_n, no_fold_accents } => {
            let tokenizer = TokenizerConfig { fold_accents: !no_fold_accents };
            let corpus = ingest_corpus(&source, &tokenizer).map_err(ProjectError::from)?;
            let source = fs::canonicalize(&source).unwrap_or(source);
            let settings = PipelineSettings {
                name: name.unwrap_or_else(|| source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()),
                tokenizer,
                max_n,
                ..PipelineSettings::default()
            };
            // validates max_n before anything is written
            Artifacts::build(corpus.clone(), settings.tokenizer, max_n)?;
            let project = Project::new(&settings, &source, &corpus);
            project.save(path)?;
            writeln!(out, "ingested {} documents into {}", corpus.len(), path.display())?;
        }
        Command::Cluster(args) => {
            let mut project = load(path)?;
            let artifacts = artifacts(&project, path, err)?;
            let mut params = project.cluster.clone();
            let set = |slot: &mut usize, v: Option<usize>| {
                if let Some(v) = v {
                    *slot = v;
                }
            };
            set(&mut params.k, args.k);
            set(&mut params.depth, args.depth);
            set(&mut params.restarts, args.restarts);
            set(&mut params.max_iter, args.max_iter);
            params.seed = args.seed.unwrap_or(params.seed);
            params.min_size = args.min_size.or(params.min_size);
            params.max_size = args.max_size.or(params.max_size);
            params.min_split = args.min_split.or(params.min_split);
            match args.code {
                Some(code) => project.recluster(&artifacts, &code, &params)?,
                None => {
                    let mut features = project.features.clone();
                    set(&mut features.min_df, args.min_df);
                    features.max_df_ratio = args.max_df_ratio.unwrap_or(features.max_df_ratio);
                    features.max_features = args.max_features.or(features.max_features);
                    if let Some(file) = &args.stopwords {
                        features.stopwords = read(file)?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
                    }
                    project.features = features;
                    project.cluster = params;
                    let artifacts = Artifacts::build(artifacts.corpus, project.tokenizer, project.max_n)?;
                    for w in project.recluster_all(&artifacts)? {
                        writeln!(err, "warning: {w}")?;
                    }
                }
            }
            let typology = project.typology()?;
            for w in &typology.warnings {
                writeln!(err, "warning: {w}")?;
            }
            for node in &typology.root.children {
                let terms: Vec<&str> = node.top_terms.iter().take(5).map(|(t, _)| t.as_str()).collect();
                writeln!(out, "{}\t{}\t{}", node.code, node.members.len(), terms.join(" "))?;
            }
            project.save(path)?;
        }
        Command::Edit { command } => edit(command, path, out, err)?,
        Command::Rules { command } => rules(command, path, out, err)?,
        Command::Classify { csv } => {
            let mut project = load(path)?;
            project.typology()?;
            let artifacts = artifacts(&project, path, err)?;
            let c = project.classify(&artifacts.index)?.clone();
            for w in &c.warnings {
                writeln!(err, "warning: {w}")?;
            }
            let mut counts: BTreeMap<&str, usize> = project
                .ontology()?
                .root
                .walk()
                .into_iter()
                .filter(|n| is_category(n))
                .map(|n| (n.label.as_str(), 0))
                .collect();
            counts.extend(c.counts.iter().map(|(k, v)| (k.as_str(), *v)));
            for (category, n) in counts {
                writeln!(out, "{category}\t{n}")?;
            }
            if let Some(csv) = csv {
                let (_, body) = export(&project, &artifacts, "assignments-csv")?;
                fs::write(&csv, body).with_context(|| format!("cannot write {}", csv.display()))?;
            }
            project.save(path)?;
        }
        Command::Export { format, output } => {
            let project = load(path)?;
            let artifacts = artifacts(&project, path, err)?;
            let (_, body) = export(&project, &artifacts, &format)?;
            match output {
                Some(file) => fs::write(&file, body).with_context(|| format!("cannot write {}", file.display()))?,
                None => out.write_all(body.as_bytes())?,
            }
        }
        Command::Serve { bind, static_dir } => {
            let project = load(path)?;
            project.ontology()?;
            let artifacts = artifacts(&project, path, err)?;
            let state = crate::service::AppState::new(project, artifacts, Some(path.to_path_buf()));
            let mut app = crate::service::router(state);
            if let Some(dir) = static_dir {
                app = app.fallback_service(tower_http::services::ServeDir::new(dir));
            }
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async {
                let listener = tokio::net::TcpListener::bind(&bind).await.with_context(|| format!("cannot bind {bind}"))?;
                writeln!(out, "listening on http://{}", listener.local_addr()?)?;
                out.flush()?;
                axum::serve(listener, app).await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}

fn edit(command: EditCommand, path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    let mut project = load(path)?;
    match command {
        EditCommand::Apply { log } => {
            let text = read(&log)?;
            let records = parse_edit_log(&text).map_err(|(line, msg)| anyhow!("{}:{line}: {msg}", log.display()))?;
            for (i, record) in records.into_iter().enumerate() {
                project.apply_edit(record).with_context(|| format!("edit #{} of {}", i + 1, log.display()))?;
            }
            project.save(path)?;
            writeln!(
                out,
                "{} edits in log, {} nodes, revision {}",
                project.edit_log.len(),
                project.ontology()?.node_count(),
                project.revision
            )?;
        }
        EditCommand::Undo => {
            let undone = project.undo()?;
            project.save(path)?;
            writeln!(out, "undone: {}", serde_json::to_string(&undone)?)?;
        }
        EditCommand::Validate => {
            let artifacts = artifacts(&project, path, err)?;
            let report = validate(project.ontology()?, artifacts.corpus.ids(), DEFAULT_BALANCE_RATIO);
            writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn rules(command: RulesCommand, path: &Path, out: &mut dyn Write, err: &mut dyn Write) -> anyhow::Result<()> {
    match command {
        RulesCommand::Check { file } => {
            let text = read(&file)?;
            let rules = parse_manual_rules(&text).map_err(|e| anyhow!("{}: {e}", file.display()))?;
            let count = |p: &str| rules.iter().filter(|r| r.head.predicate == p).count();
            writeln!(
                out,
                "ok: {} rules ({} positive, {} negative, {} success), {} strata",
                rules.len(),
                count(POSITIVE),
                count(NEGATIVE),
                count(SUCCESS),
                stratify(&rules)?.max() + 1
            )?;
            return Ok(());
        }
        RulesCommand::GenDefaults { parent_child } => {
            let project = load(path)?;
            let ontology = project.ontology()?;
            let (mut rules, warnings) = generate_match_rules(ontology, &project.tokenizer);
            for w in warnings {
                writeln!(err, "warning: {w}")?;
            }
            if parent_child || project.parent_child {
                rules.extend(generate_parent_child_rules(ontology));
            }
            write!(out, "{}", print_program(&rules))?;
            return Ok(());
        }
        RulesCommand::Compile => {
            let program = load(path)?.program()?;
            for w in program.warnings {
                writeln!(err, "warning: {w}")?;
            }
            write!(out, "{}", print_program(&program.rules))?;
            return Ok(());
        }
        _ => {}
    }
    let mut project = load(path)?;
    match command {
        RulesCommand::Set { category, positives, negatives } => {
            let label = project.category_label(&category)?;
            let p: Vec<&str> = positives.iter().map(String::as_str).collect();
            let n: Vec<&str> = negatives.iter().map(String::as_str).collect();
            let spec = CategoryRuleSpec::from_bullets(&label, &p, &n);
            if spec.positives.is_empty() && !spec.negatives.is_empty() {
                bail!("category {label:?} needs at least one positive clause");
            }
            project.set_rule_spec(spec)?;
            writeln!(out, "rules set for {label:?}")?;
        }
        RulesCommand::Manual { file } => {
            let text = read(&file)?;
            project.set_manual_rules(&text).map_err(|e| anyhow!("{}: {e}", file.display()))?;
            writeln!(out, "manual rules updated")?;
        }
        RulesCommand::ParentChild { state } => {
            project.set_parent_child(matches!(state, Toggle::On));
            writeln!(out, "parent-child propagation {}", if project.parent_child { "on" } else { "off" })?;
        }
        _ => unreachable!("handled above"),
    }
    project.save(path)?;
    Ok(())
}
