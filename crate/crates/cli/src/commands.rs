//! Subcommand implementations. Every artifact is computed in full before any
//! file is written, and each file is written through a temp file + rename.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use reckit_core::container::{fit_model, AnyModel, ModelFile, ModelSpec};
use reckit_core::evaluation::{evaluate, recommend};
use reckit_core::ingest::{dataset_stats, parse_items, parse_ratings, parse_transactions, Catalog};
use reckit_core::preprocess::quantile_sorted;
use reckit_core::segmentation::{compute_rfm, kmeans_segment, score_quintiles, segment_name, write_segment_report};
use reckit_core::split::{carve_validation, kfold, stratified_split, time_split, train_test_split, SplitResult, SplitStrategy};
use reckit_core::tuning::{grid_search, grid_search_cv, random_search, Objective};
use reckit_core::{Error, IdIndex, RatingDataset, RatingScale};

use crate::config::{ConfigError, ExperimentConfig, Strategy};

pub const DEFAULT_OUT: &str = "reckit-out";

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Run(Error),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "{e}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Settings shared by every subcommand after flags are merged into the config.
pub struct Context {
    pub config: ExperimentConfig,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Context {
    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| ConfigError::new("seed", "missing field `seed` (set it in the config or pass --seed)").into())
    }
}

/// Write `bytes` to `dir/name` via a temp file in the same directory.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    // Temp files are created owner-only; outputs should look like any other file.
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    let path = dir.join(name);
    tmp.persist(&path).map_err(|e| CliError::Run(e.error.into()))?;
    Ok(path)
}

fn open(path: &Path, field: &str) -> CliResult<File> {
    File::open(path).map_err(|e| ConfigError::new(field, format!("cannot open {}: {e}", path.display())).into())
}

fn read_ratings(path: &Path, field: &str, scale: RatingScale) -> CliResult<RatingDataset> {
    Ok(parse_ratings(BufReader::new(open(path, field)?), scale)?)
}

fn load_catalog(cfg: &ExperimentConfig) -> CliResult<Option<Catalog>> {
    match &cfg.data.items {
        Some(p) => Ok(Some(parse_items(BufReader::new(open(p, "data.items")?))?)),
        None => Ok(None),
    }
}

fn full_ratings(cfg: &ExperimentConfig) -> CliResult<RatingDataset> {
    let path = cfg.data.ratings.as_ref().ok_or_else(|| ConfigError::new("data.ratings", "missing field `ratings` (or pass --ratings)"))?;
    read_ratings(path, "data.ratings", cfg.data.scale)
}

/// Train, test and optional validation data over one shared id space.
pub struct Partitions {
    pub train: RatingDataset,
    pub test: RatingDataset,
    pub validation: Option<RatingDataset>,
    pub warnings: Vec<String>,
}

fn split_full(cfg: &ExperimentConfig, data: &RatingDataset, seed: u64) -> CliResult<SplitResult> {
    let s = &cfg.split;
    let split = match s.strategy {
        Strategy::Random => train_test_split(data, s.test_fraction, seed)?,
        Strategy::Stratified => stratified_split(data, s.test_fraction, seed)?,
        Strategy::Time => {
            let cutoff = s.cutoff.unwrap_or_else(|| {
                let mut ts: Vec<f64> = data.interactions().iter().map(|x| x.timestamp as f64).collect();
                ts.sort_by(f64::total_cmp);
                quantile_sorted(&ts, 1.0 - s.test_fraction).ceil() as i64
            });
            time_split(data, cutoff)
        }
        Strategy::Kfold => kfold(data, s.folds, seed)?.swap_remove(s.fold),
    };
    Ok(match s.validation_fraction {
        Some(v) => carve_validation(&split, v, seed)?,
        None => split,
    })
}

/// Wrap externally split data so validation carving can reuse the split API.
fn presplit(train: RatingDataset, test: RatingDataset, seed: u64) -> SplitResult {
    SplitResult { train, test, validation: None, seed, strategy: SplitStrategy::Random, warnings: vec![] }
}

pub fn partitions(cfg: &ExperimentConfig, seed: u64) -> CliResult<Partitions> {
    match (&cfg.data.ratings, &cfg.data.train, &cfg.data.test) {
        (Some(_), None, None) => {
            let split = split_full(cfg, &full_ratings(cfg)?, seed)?;
            Ok(Partitions { train: split.train, test: split.test, validation: split.validation, warnings: split.warnings })
        }
        (None, Some(tr), Some(te)) => {
            let scale = cfg.data.scale;
            let a = read_ratings(tr, "data.train", scale)?;
            let b = read_ratings(te, "data.test", scale)?;
            let users = Arc::new(IdIndex::from_ids(a.users().ids().iter().chain(b.users().ids()).copied()));
            let items = Arc::new(IdIndex::from_ids(a.items().ids().iter().chain(b.items().ids()).copied()));
            let train = RatingDataset::with_index(a.interactions().to_vec(), users.clone(), items.clone(), scale)?;
            let test = RatingDataset::with_index(b.interactions().to_vec(), users, items, scale)?;
            let split = presplit(train, test, seed);
            let split = match cfg.split.validation_fraction {
                Some(v) => carve_validation(&split, v, seed)?,
                None => split,
            };
            Ok(Partitions { train: split.train, test: split.test, validation: split.validation, warnings: vec![] })
        }
        (None, None, None) => Err(ConfigError::new("data.ratings", "missing field `ratings` (or `train` and `test`)").into()),
        _ => Err(ConfigError::new("data", "set either `ratings` or both `train` and `test`").into()),
    }
}

fn fit_spec(ctx: &Context, spec: &ModelSpec, train: &RatingDataset) -> CliResult<AnyModel> {
    let catalog = load_catalog(&ctx.config)?;
    if spec.needs_catalog() && catalog.is_none() {
        return Err(ConfigError::new("data.items", "missing field `items`: content-based models need a catalog").into());
    }
    let field = if ctx.config.model.is_some() { "model" } else { "ensemble" };
    fit_model(spec, train, catalog.as_ref()).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::InvalidK(_) => ConfigError::new(field, e.to_string()).into(),
        other => other.into(),
    })
}

fn train_model(ctx: &Context, train: &RatingDataset) -> CliResult<ModelFile> {
    let spec = ctx.config.model_spec()?.clone().with_seed(ctx.seed()?);
    let model = fit_spec(ctx, &spec, train)?;
    Ok(ModelFile::new(spec, train, model))
}

/// A saved model (checked against the data's id space) or a freshly trained one.
fn obtain_model(ctx: &Context, model_path: Option<&Path>, train: &RatingDataset) -> CliResult<ModelFile> {
    let Some(path) = model_path else { return train_model(ctx, train) };
    let text = std::fs::read_to_string(path)?;
    let file = ModelFile::from_json(&text)?;
    if file.users != **train.users() || file.items != **train.items() {
        return Err(Error::Value(format!("{} was trained over a different user/item id space", path.display())).into());
    }
    Ok(file)
}

fn print_warnings(w: &[String]) {
    for m in w {
        eprintln!("warning: {m}");
    }
}

pub fn ingest(ctx: &Context) -> CliResult<()> {
    let data = full_ratings(&ctx.config)?;
    let catalog = load_catalog(&ctx.config)?;
    let stats = dataset_stats(&data)?;
    let mut tsv = Vec::new();
    reckit_core::ingest::write_ratings(&data, &mut tsv)?;
    let json = serde_json::to_string_pretty(&stats).map_err(Error::from)? + "\n";
    write_atomic(&ctx.out, "ratings.tsv", &tsv)?;
    write_atomic(&ctx.out, "stats.json", json.as_bytes())?;
    write_atomic(&ctx.out, "stats.txt", stats.to_key_values().as_bytes())?;
    println!("ingested {} interactions ({} users, {} items)", stats.n_interactions, stats.n_users, stats.n_items);
    if let Some(c) = catalog {
        println!("catalog: {} items, {} features", c.len(), c.feature_len());
    }
    Ok(())
}

pub fn stats(ctx: &Context) -> CliResult<()> {
    let stats = dataset_stats(&full_ratings(&ctx.config)?)?;
    print!("{}", stats.to_key_values());
    Ok(())
}

pub fn split(ctx: &Context) -> CliResult<()> {
    let p = partitions(&ctx.config, ctx.seed()?)?;
    print_warnings(&p.warnings);
    let render = |d: &RatingDataset| -> CliResult<Vec<u8>> {
        let mut buf = Vec::new();
        reckit_core::ingest::write_ratings(d, &mut buf)?;
        Ok(buf)
    };
    let (train, test) = (render(&p.train)?, render(&p.test)?);
    let validation = p.validation.as_ref().map(render).transpose()?;
    write_atomic(&ctx.out, "train.tsv", &train)?;
    write_atomic(&ctx.out, "test.tsv", &test)?;
    if let Some(v) = validation {
        write_atomic(&ctx.out, "validation.tsv", &v)?;
    }
    print!("train={}\ntest={}\n", p.train.len(), p.test.len());
    if let Some(v) = &p.validation {
        println!("validation={}", v.len());
    }
    Ok(())
}

pub fn train(ctx: &Context) -> CliResult<()> {
    let p = partitions(&ctx.config, ctx.seed()?)?;
    print_warnings(&p.warnings);
    let file = train_model(ctx, &p.train)?;
    let path = write_atomic(&ctx.out, "model.json", file.to_json()?.as_bytes())?;
    println!("model written to {}", path.display());
    Ok(())
}

pub fn evaluate_cmd(ctx: &Context, model_path: Option<&Path>) -> CliResult<()> {
    let p = partitions(&ctx.config, ctx.seed()?)?;
    print_warnings(&p.warnings);
    let file = obtain_model(ctx, model_path, &p.train)?;
    let mut eval = ctx.config.evaluation.clone();
    eval.seed = ctx.seed()?;
    let report = evaluate(&file.model, &p.train, &p.test, &eval)?;
    let text = report.to_key_values();
    write_atomic(&ctx.out, "report.json", report.to_json()?.as_bytes())?;
    write_atomic(&ctx.out, "report.txt", text.as_bytes())?;
    print!("{text}");
    Ok(())
}

pub fn recommend_cmd(ctx: &Context, model_path: Option<&Path>, user: u64, k: usize, include_rated: bool) -> CliResult<()> {
    let p = partitions(&ctx.config, ctx.seed()?)?;
    let file = obtain_model(ctx, model_path, &p.train)?;
    let dense = p.train.users().dense(user).ok_or_else(|| Error::UnknownCategory(format!("user {user}")))?;
    let list = recommend(&file.model, &p.train, dense, k, !include_rated)?;
    let mut out = String::from("rank\titem\tscore\n");
    for (rank, (item, score)) in list.items.iter().enumerate() {
        out.push_str(&format!("{}\t{}\t{}\n", rank + 1, p.train.items().raw(*item), score));
    }
    print!("{out}");
    Ok(())
}

pub fn tune(ctx: &Context) -> CliResult<()> {
    let seed = ctx.seed()?;
    let t = ctx.config.tuning.as_ref().ok_or_else(|| ConfigError::new("tuning", "missing field `tuning`"))?;
    let p = partitions(&ctx.config, seed)?;
    let catalog = load_catalog(&ctx.config)?;
    let base_spec = t.base.clone().with_seed(seed);
    let base = *base_spec.train_config().expect("validated");
    let trainer = |d: &RatingDataset, c: &reckit_core::factor::TrainConfig| -> reckit_core::Result<AnyModel> {
        fit_model(&base_spec.with_train_config(*c).expect("validated"), d, catalog.as_ref())
    };
    let objective = Objective { metric: t.metric, eval: ctx.config.evaluation.clone() };
    let result = if let (Some(grid), Some(folds)) = (&t.grid, t.folds) {
        grid_search_cv(&trainer, grid, &base, &p.train, folds, &objective)?
    } else {
        let (train, validation) = match p.validation {
            Some(v) => (p.train, v),
            None => {
                let carved = carve_validation(&presplit(p.train, p.test, seed), t.validation_fraction, seed)?;
                (carved.train, carved.validation.expect("just carved"))
            }
        };
        match (&t.grid, &t.random) {
            (Some(grid), _) => grid_search(&trainer, grid, &base, &train, &validation, &objective)?,
            (None, Some(r)) => random_search(&trainer, &r.space, &base, r.trials, seed, &train, &validation, &objective)?,
            (None, None) => unreachable!("validated"),
        }
    };
    let mut csv = Vec::new();
    result.write_csv(&mut csv)?;
    let json = serde_json::to_string_pretty(&result).map_err(Error::from)? + "\n";
    write_atomic(&ctx.out, "tuning.csv", &csv)?;
    write_atomic(&ctx.out, "tuning.json", json.as_bytes())?;
    match (result.best_config(), result.best_value()) {
        (Some(c), Some(v)) => println!(
            "best {}={v} learning_rate={} lambda={} factors={} epochs={} batch_size={}",
            t.metric.name(),
            c.learning_rate,
            c.lambda,
            c.factors,
            c.epochs,
            c.batch_size
        ),
        _ => println!("every configuration failed; see tuning.csv"),
    }
    Ok(())
}

fn parse_reference(text: &str) -> CliResult<i64> {
    text.parse::<i64>().ok().or_else(|| reckit_core::ingest::parse_timestamp(text)).ok_or_else(|| {
        ConfigError::new("segmentation.reference_time", format!("expected epoch seconds or RFC 3339, got {text:?}")).into()
    })
}

pub fn segment(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.config;
    let path = cfg
        .data
        .transactions
        .as_ref()
        .ok_or_else(|| ConfigError::new("data.transactions", "missing field `transactions` (or pass --transactions)"))?;
    let log = parse_transactions(BufReader::new(open(path, "data.transactions")?))?;
    let reference = match &cfg.segmentation.reference_time {
        Some(t) => parse_reference(t)?,
        None => log.records.iter().map(|t| t.timestamp).max().ok_or(Error::EmptyInput)?,
    };
    let scored = score_quintiles(&compute_rfm(&log, reference)?);
    if scored.reduced {
        eprintln!("warning: only {} customers; scores use {} buckets", scored.profiles.len(), scored.buckets);
    }
    let kmeans = match &cfg.segmentation.kmeans {
        Some(k) => Some(kmeans_segment(&scored.profiles, k.k, ctx.seed()?, k.max_iters)?),
        None => None,
    };
    let mut csv = Vec::new();
    write_segment_report(&scored.profiles, &mut csv)?;
    write_atomic(&ctx.out, "segments.csv", &csv)?;
    if let Some(km) = &kmeans {
        let json = serde_json::to_string_pretty(km).map_err(Error::from)? + "\n";
        write_atomic(&ctx.out, "kmeans.json", json.as_bytes())?;
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &scored.profiles {
        *counts.entry(segment_name(p)).or_default() += 1;
    }
    for (name, n) in counts {
        println!("{name}\t{n}");
    }
    Ok(())
}
