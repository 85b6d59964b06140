//! The `loid` command line: each subcommand is one pipeline stage, driven by
//! an experiment config plus command-line overrides.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;
use serde_json::{json, Map, Value};

use loid::eval::{
    dataset_splits, loid_priors, prepare_split, read_results, render_table, run_experiment,
    summarize, sweep, write_results, write_summary_csv, write_sweep_csv, write_sweep_plot_csv,
    write_timings_csv, Engine, ExperimentConfig,
};
use loid::probe::Prober;
use loid::{
    apply_split, auc, baseline_priors, laplace_fit, mle_fit, nuts_sample, Condition, DatasetConfig,
    Error, ErrorCategory, LogisticPosterior, Predictor, PriorSet, RawDataset, Result,
    SamplerConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "loid",
    version,
    about = "Elicited priors for logistic regression under covariate shift"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for every output of the run.
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// HTTP scoring endpoint [env: LOID_BACKEND_URL]
    #[arg(long, global = true)]
    pub backend_url: Option<String>,
    /// Serve probes from a mock fixture instead of a model.
    #[arg(long, global = true)]
    pub mock_fixture: Option<PathBuf>,
    /// Probe cache directory [env: LOID_CACHE_DIR]
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Dotted-path config override, e.g. `elicitation.gamma=3.0`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// More logging; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the selected covariate-shift splits of each dataset.
    Split,
    /// Probe every feature and fill the probe cache.
    Probe,
    /// Write elicited priors for each dataset.
    Elicit,
    /// Fit one engine on one dataset, split and prior set.
    Fit(FitArgs),
    /// Run every configured condition and write results.
    Eval,
    /// Run the elicitation hyperparameter grid.
    Sweep,
    /// Render the summary table from a results file.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Dataset name; the first configured dataset by default.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Prior set file; overrides `--condition`.
    #[arg(long)]
    pub priors: Option<PathBuf>,
    /// Prior condition to fit.
    #[arg(long, default_value = "loid")]
    pub condition: Condition,
    /// Engine: nuts, laplace or mle. The config engine by default.
    #[arg(long)]
    pub engine: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Results file; `<out-dir>/results.jsonl` by default.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

/// Exit status for an error category.
pub fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Backend => 3,
        ErrorCategory::Numerical => 4,
        ErrorCategory::Data | ErrorCategory::Io => 1,
    }
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .filter_module("loid", level)
        .filter_module("eval", level)
        .filter_module("probe", level)
        .filter_module("sweep", level)
        .filter_module("preprocess", level)
        .filter_module("cli", level)
        .parse_default_env()
        .format(|buf, rec| writeln!(buf, "[{}] {}: {}", rec.level(), rec.target(), rec.args()))
        .try_init();
}

/// Sets `path` (dot-separated; numeric segments index arrays) in `root` to
/// `raw`, parsed as JSON when possible and as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("bad override key `{key}`")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| {
                    Error::Config(format!("`{part}` in `{key}` must index an array"))
                })?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    Error::Config(format!("index {idx} out of range ({len}) in `{key}`"))
                })?
            }
            Value::Object(map) => map
                .entry(part.to_string())
                .or_insert_with(|| Value::Object(Map::new())),
            Value::Null => {
                *node = Value::Object(Map::new());
                node.as_object_mut()
                    .expect("just set")
                    .entry(part.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a scalar"))),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    Ok(())
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.is_absolute() {
        return Ok(p.to_path_buf());
    }
    let cwd = std::env::current_dir().map_err(|e| Error::io(".", e))?;
    Ok(cwd.join(p))
}

/// Config file, then environment, then flags, then `--override`s.
pub fn resolve_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let (mut value, base) = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let v: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let base = absolute(path)?
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."));
            (v, base)
        }
        None => (json!({}), absolute(Path::new("."))?),
    };
    if !value.is_object() {
        return Err(Error::Config(
            "experiment config must be a JSON object".into(),
        ));
    }

    let env_url = std::env::var("LOID_BACKEND_URL")
        .ok()
        .filter(|s| !s.is_empty());
    let env_cache = std::env::var_os("LOID_CACHE_DIR")
        .filter(|s| !s.is_empty())
        .map(PathBuf::from);
    if g.backend_url.is_some() && g.mock_fixture.is_some() {
        return Err(Error::Config(
            "--backend-url and --mock-fixture are mutually exclusive".into(),
        ));
    }
    let backend = match &g.mock_fixture {
        Some(f) => Some(json!({"kind": "mock", "fixture": absolute(f)?})),
        None => g
            .backend_url
            .as_ref()
            .or(env_url.as_ref())
            .map(|url| json!({"kind": "http", "url": url})),
    };
    if let Some(b) = backend {
        apply_override(&mut value, &format!("probe.backend={b}"))?;
    }
    if let Some(dir) = g.cache_dir.clone().or(env_cache) {
        let cache = absolute(&dir)?.join("probe_cache.jsonl");
        apply_override(&mut value, &format!("probe.cache={}", json!(cache)))?;
    }
    if let Some(seed) = g.seed {
        apply_override(&mut value, &format!("seed={seed}"))?;
    }
    for o in &g.overrides {
        apply_override(&mut value, o)?;
    }

    let mut cfg = ExperimentConfig::from_value(value, &base)?;
    if cfg.probe.cache.is_none() {
        cfg.probe.cache = Some(absolute(&g.out_dir)?.join("probe_cache.jsonl"));
    }
    Ok(cfg)
}

struct Run {
    cfg: ExperimentConfig,
    hash: String,
    out: PathBuf,
}

impl Run {
    fn new(g: &GlobalArgs) -> Result<Self> {
        let cfg = resolve_config(g)?;
        let hash = cfg.hash();
        std::fs::create_dir_all(&g.out_dir).map_err(|e| Error::io(&g.out_dir, e))?;
        let run = Run {
            cfg,
            hash,
            out: g.out_dir.clone(),
        };
        run.write_json(
            &run.out.join("resolved_config.json"),
            json!({"config_hash": run.hash, "seed": run.cfg.seed, "config": run.cfg}),
        )?;
        info!(target: "cli", "config_hash={} seed={}", run.hash, run.cfg.seed);
        Ok(run)
    }

    fn provenance(&self) -> Map<String, Value> {
        let mut m = Map::new();
        m.insert("config_hash".into(), json!(self.hash));
        m.insert("seed".into(), json!(self.cfg.seed));
        m
    }

    fn write_json(&self, path: &Path, value: Value) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut text = serde_json::to_string_pretty(&value)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
        info!(target: "cli", "wrote {}", path.display());
        Ok(())
    }

    fn datasets(&self) -> Result<Vec<(RawDataset, &loid::eval::SplitSelection)>> {
        if self.cfg.datasets.is_empty() {
            return Err(Error::Config("config lists no datasets".into()));
        }
        self.cfg
            .datasets
            .iter()
            .map(|d| Ok((DatasetConfig::from_file(&d.config)?.load()?, &d.split)))
            .collect()
    }

    fn prober(&self) -> Result<Prober> {
        self.cfg.probe.build_prober()
    }

    fn with_provenance(&self, mut priors: PriorSet) -> PriorSet {
        priors.meta.config_hash = Some(self.hash.clone());
        priors.meta.seed = Some(self.cfg.seed);
        priors
    }
}

fn split_cmd(run: &Run) -> Result<()> {
    for (raw, sel) in run.datasets()? {
        let splits = dataset_splits(&raw, sel, &run.cfg.splits)?;
        let path = run.out.join("splits").join(format!("{}.json", raw.name));
        run.write_json(
            &path,
            json!({
                "config_hash": run.hash,
                "seed": run.cfg.seed,
                "dataset": raw.name,
                "splits": splits,
            }),
        )?;
    }
    Ok(())
}

fn probe_cmd(run: &Run) -> Result<()> {
    let prober = run.prober()?;
    let templates = run.cfg.probe.template_set()?;
    let wanted = run.cfg.elicitation.n_sent.max(run.cfg.sweep.max_n_sent());
    let n = wanted.min(templates.available());
    if n < run.cfg.elicitation.n_sent {
        return Err(Error::Config(format!(
            "n_sent = {} but only {} templates are available",
            run.cfg.elicitation.n_sent,
            templates.available()
        )));
    }
    let ts = templates.with_n_sent(n)?;
    for (raw, _) in run.datasets()? {
        let (ds, _) = loid::preprocess(&raw, &Default::default())?;
        let ms = prober.probe_dataset(&ds, &ts, run.cfg.probe.use_descriptions)?;
        let path = run
            .out
            .join("measurements")
            .join(format!("{}.json", raw.name));
        run.write_json(
            &path,
            json!({
                "config_hash": run.hash,
                "seed": run.cfg.seed,
                "dataset": raw.name,
                "model_id": prober.model_id(),
                "measurements": ms,
            }),
        )?;
    }
    if let Some(p) = prober.cache().path() {
        info!(target: "cli", "cache={} records={}", p.display(), prober.cache().len());
    }
    Ok(())
}

fn elicit_cmd(run: &Run) -> Result<()> {
    let prober = run.prober()?;
    for (raw, _) in run.datasets()? {
        let (ds, _) = loid::preprocess(&raw, &Default::default())?;
        let (priors, _, _) = loid_priors(&ds, &run.cfg, &run.cfg.elicitation, Some(&prober))?;
        let path = run.out.join("priors").join(format!("{}.json", raw.name));
        run.write_json(&path, run.with_provenance(priors).to_json())?;
    }
    Ok(())
}

fn parse_engine(s: &str) -> Result<Engine> {
    serde_json::from_value(json!(s)).map_err(|_| Error::Config(format!("unknown engine `{s}`")))
}

fn fit_cmd(run: &Run, args: &FitArgs) -> Result<()> {
    let datasets = run.datasets()?;
    let (raw, sel) = match &args.dataset {
        Some(name) => datasets
            .iter()
            .find(|(r, _)| &r.name == name)
            .ok_or_else(|| Error::Config(format!("dataset `{name}` is not in the config")))?,
        None => &datasets[0],
    };
    let spec = dataset_splits(raw, sel, &run.cfg.splits)?.remove(0);
    let ds = prepare_split(raw, &spec, run.cfg.standardize)?;
    let (train, eval) = apply_split(&ds, &spec, run.cfg.splits.eval)?;
    let dir = run.out.join("fit").join(&raw.name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let engine = match &args.engine {
        Some(e) => parse_engine(e)?,
        None if args.priors.is_none() && args.condition.is_reference() => Engine::Mle,
        None => run.cfg.engine,
    };
    let seed = loid::eval::cell_seed(run.cfg.seed, &raw.name, &spec, args.condition);
    let newton = run.cfg.newton.clone();

    let (probs, artifacts) = if engine == Engine::Mle {
        let fit_on = if args.condition == Condition::Cap {
            &ds
        } else {
            &train
        };
        let c = mle_fit(fit_on, run.cfg.ridge, &newton)?;
        let path = dir.join("mle.json");
        run.write_json(
            &path,
            json!({"config_hash": run.hash, "seed": run.cfg.seed, "coefficients": c}),
        )?;
        (c.predict_proba(&eval.x)?, vec![path])
    } else {
        let priors = match (&args.priors, args.condition) {
            (Some(p), _) => PriorSet::from_file(p)?,
            (None, Condition::Loid) => {
                loid_priors(&ds, &run.cfg, &run.cfg.elicitation, Some(&run.prober()?))?.0
            }
            (None, c) => {
                let kind = c.baseline().ok_or_else(|| {
                    Error::Config(format!("condition `{c}` has no priors; use --engine mle"))
                })?;
                let p = baseline_priors(kind, &train.features, run.cfg.elicitation.intercept)?;
                match run.cfg.baseline_sigma {
                    Some(s) => p.with_sigma(s),
                    None => p,
                }
            }
        };
        let priors_path = dir.join("priors.json");
        run.write_json(&priors_path, run.with_provenance(priors.clone()).to_json())?;
        if engine == Engine::Laplace {
            let fit = laplace_fit(&train, &priors, &newton, seed)?;
            let path = dir.join("laplace.json");
            run.write_json(
                &path,
                json!({"config_hash": run.hash, "seed": run.cfg.seed, "cell_seed": seed, "fit": fit}),
            )?;
            (fit.predict_proba(&eval.x)?, vec![priors_path, path])
        } else {
            let post = LogisticPosterior::from_dataset(&train, &priors)?;
            let draws = nuts_sample(
                &post,
                &SamplerConfig {
                    seed,
                    ..run.cfg.sampler.clone()
                },
            )?;
            let path = dir.join("draws.csv");
            let mut meta = run.provenance();
            meta.insert("cell_seed".into(), json!(seed));
            draws.write_csv_with_meta(&path, meta)?;
            let side = loid::inference::diagnostics_path(&path);
            info!(
                target: "cli",
                "divergences={} max_rhat={:.4} min_ess={:.1} diagnostics={}",
                draws.divergences(),
                draws.max_rhat(),
                draws.min_ess(),
                side.display()
            );
            (draws.predict_proba(&eval.x)?, vec![priors_path, path, side])
        }
    };
    let a = auc(&probs, &eval.labels)?;
    run.write_json(
        &dir.join("fit.json"),
        json!({
            "config_hash": run.hash,
            "seed": run.cfg.seed,
            "cell_seed": seed,
            "dataset": raw.name,
            "split": spec,
            "condition": args.condition,
            "engine": engine,
            "auc": a,
            "artifacts": artifacts,
        }),
    )?;
    println!("{} {} {} auc={a:.4}", raw.name, args.condition, engine);
    Ok(())
}

fn eval_cmd(run: &Run) -> Result<()> {
    let prober = if run.cfg.conditions.contains(&Condition::Loid) {
        Some(run.prober()?)
    } else {
        None
    };
    let results = run_experiment(&run.cfg, prober.as_ref())?;
    write_results(&run.out.join("results.jsonl"), &results)?;
    let rows = summarize(&results);
    write_summary_csv(&run.out.join("summary.csv"), &rows)?;
    write_timings_csv(&run.out.join("timings.csv"), &results)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn sweep_cmd(run: &Run) -> Result<()> {
    let prober = run.prober()?;
    let report = sweep(&run.cfg, &prober)?;
    write_sweep_csv(&run.out.join("sweep.csv"), &report)?;
    write_sweep_plot_csv(&run.out.join("sweep_plot.csv"), &report)?;
    let d = &run.cfg.elicitation;
    run.write_json(
        &run.out.join("sweep_summary.json"),
        json!({
            "config_hash": run.hash,
            "seed": run.cfg.seed,
            "best_per_dataset": report.best_per_dataset,
            "average_best": report.average_best,
            "default": {"alpha": d.alpha, "gamma": d.gamma, "n_sent": d.n_sent, "mean_auc": report.default_mean_auc},
        }),
    )?;
    let b = &report.average_best;
    println!(
        "best alpha={} gamma={} n_sent={} mean_auc={:.4}",
        b.alpha, b.gamma, b.n_sent, b.mean_auc
    );
    if let Some(m) = report.default_mean_auc {
        println!(
            "default alpha={} gamma={} n_sent={} mean_auc={m:.4}",
            d.alpha, d.gamma, d.n_sent
        );
    }
    Ok(())
}

fn report_cmd(g: &GlobalArgs, args: &ReportArgs) -> Result<()> {
    let path = args
        .results
        .clone()
        .unwrap_or_else(|| g.out_dir.join("results.jsonl"));
    let results = read_results(&path)?;
    let rows = summarize(&results);
    std::fs::create_dir_all(&g.out_dir).map_err(|e| Error::io(&g.out_dir, e))?;
    let summary = g.out_dir.join("summary.csv");
    if absolute(&summary)? == absolute(&path)? {
        return Err(Error::Config("report would overwrite its input".into()));
    }
    write_summary_csv(&summary, &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

/// Runs one invocation. On a numerical failure a `failure.json` with the
/// error is written to the output directory and its path returned alongside.
pub fn run(cli: &Cli) -> std::result::Result<(), (Error, Option<PathBuf>)> {
    let result = match &cli.command {
        Command::Report(args) => report_cmd(&cli.global, args),
        cmd => Run::new(&cli.global).and_then(|run| match cmd {
            Command::Split => split_cmd(&run),
            Command::Probe => probe_cmd(&run),
            Command::Elicit => elicit_cmd(&run),
            Command::Fit(args) => fit_cmd(&run, args),
            Command::Eval => eval_cmd(&run),
            Command::Sweep => sweep_cmd(&run),
            Command::Report(_) => unreachable!("handled above"),
        }),
    };
    result.map_err(|e| {
        let diag = (e.category() == ErrorCategory::Numerical)
            .then(|| {
                let path = cli.global.out_dir.join("failure.json");
                let mut body = json!({"category": "numerical", "error": e.to_string()});
                if let Ok(cfg) = resolve_config(&cli.global) {
                    body["config_hash"] = json!(cfg.hash());
                    body["seed"] = json!(cfg.seed);
                }
                std::fs::create_dir_all(&cli.global.out_dir)
                    .and_then(|_| std::fs::write(&path, format!("{body:#}\n")))
                    .ok()
                    .map(|_| path)
            })
            .flatten();
        (e, diag)
    })
}
