use std::fs;
use std::path::{Path, PathBuf};

use dwrl_core::data::{generate_channel_cue, read_dataset, write_dataset};
use dwrl_core::eval::{run_comparison, train_method, ComparisonTable};
use dwrl_core::verify;
use dwrl_core::{Dataset, RunConfig, Split, TrainedModel};
use serde::{Deserialize, Serialize};

use crate::exit::{code, CliError};
use crate::manifest::{file_digest, ManifestBuilder};
use crate::{Cli, Command};

const MODEL_FORMAT: &str = "dwrl-model";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    config_digest: String,
    seed: u64,
    train_data_sha256: String,
    model: TrainedModel,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let cfg = match &cli.config {
        None => RunConfig::default(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| match e.kind() {
                std::io::ErrorKind::NotFound => CliError::missing(path),
                _ => CliError::io(path, e),
            })?;
            RunConfig::from_toml_str(&text).map_err(|e| CliError::context(path, e))?
        }
    };
    let mut cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    if cli.threads.is_some() {
        cfg.run.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli, default: &str) -> Result<PathBuf, CliError> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from(default));
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn existing(path: &Path) -> Result<&Path, CliError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::missing(path))
    }
}

/// A file, or `dir/name` when `path` is a directory.
fn data_file(path: &Path, name: &str) -> Result<PathBuf, CliError> {
    let path = existing(path)?;
    let file = if path.is_dir() { path.join(name) } else { path.to_path_buf() };
    existing(&file)?;
    Ok(file)
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    read_dataset(path).map_err(|e| CliError::context(path, e))
}

fn setup_threads(cfg: &RunConfig) -> Result<(), CliError> {
    if let Some(n) = cfg.run.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new(code::RUNTIME, format!("thread pool: {e}")))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = load_config(&cli)?;
    setup_threads(&cfg)?;
    match &cli.command {
        Command::GenData => gen_data(&cli, &cfg),
        Command::Train { method, data } => train(&cli, &cfg, *method, data),
        Command::Eval { model, data } => eval(&cli, &cfg, model, data),
        Command::Verify => verify_all(&cli, &cfg),
        Command::Ablate { data } => ablate(&cli, &cfg, data.as_deref()),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn gen_data(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    let dir = out_dir(cli, "data")?;
    let mut manifest = ManifestBuilder::new("gen-data", cfg, cfg.data.seed);
    for (split, count) in [(Split::Train, cfg.data.train_count), (Split::Test, cfg.data.test_count)] {
        let data = generate_channel_cue(&cfg.task, count, split, cfg.data.seed)?;
        let path = dir.join(format!("{}.jsonl", split.name()));
        write_dataset(&data, &path).map_err(|e| CliError::context(&path, e))?;
        manifest.record(&path)?;
        println!("wrote {} pairs to {}", data.len(), path.display());
    }
    manifest.finish(&dir)?;
    Ok(())
}

fn train(cli: &Cli, cfg: &RunConfig, method: dwrl_core::Method, data: &Path) -> Result<(), CliError> {
    let path = data_file(data, "train.jsonl")?;
    let dataset = load_dataset(&path)?;
    let dir = out_dir(cli, &format!("model-{}", method.name()))?;
    let mut manifest = ManifestBuilder::new(&format!("train --method {}", method.name()), cfg, cfg.train.seed);
    manifest.input(&path)?;
    let (model, history) = train_method(method, &cfg.train, &dataset)?;
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        config_digest: cfg.digest(),
        seed: cfg.train.seed,
        train_data_sha256: file_digest(&path)?,
        model,
    };
    let model_path = dir.join("model.json");
    manifest.write(&model_path, &(serde_json::to_string(&file).expect("model serializes") + "\n"))?;
    let history_path = dir.join("history.csv");
    manifest.write(&history_path, &history.to_csv())?;
    manifest.finish(&dir)?;
    let last = history.records.last();
    println!(
        "trained {} for {} steps; final batch accuracy {:.4}; wrote {}",
        method.name(),
        history.records.len(),
        last.map_or(f64::NAN, |r| r.batch_accuracy),
        model_path.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<ModelFile, CliError> {
    let path = existing(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text)
        .map_err(|e| CliError::new(code::MALFORMED, format!("{}: {e}", path.display())))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(CliError::new(
            code::MALFORMED,
            format!(
                "{}: expected {MODEL_FORMAT} version {MODEL_VERSION}, found {} version {}",
                path.display(),
                file.format,
                file.version
            ),
        ));
    }
    Ok(file)
}

fn eval(cli: &Cli, cfg: &RunConfig, model: &Path, data: &Path) -> Result<(), CliError> {
    let file = load_model(model)?;
    let path = data_file(data, "test.jsonl")?;
    let dataset = load_dataset(&path)?;
    let dir = out_dir(cli, "eval")?;
    let mut manifest = ManifestBuilder::new("eval", cfg, file.seed);
    manifest.input(model)?;
    manifest.input(&path)?;
    let report = file.model.evaluate(&dataset, file.seed, &file.config_digest)?;
    let table = ComparisonTable {
        reports: vec![report.clone()],
        summaries: Vec::new(),
    };
    let csv = table.to_csv();
    manifest.write(&dir.join("results.csv"), &csv)?;
    manifest.write(
        &dir.join("report.json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    manifest.finish(&dir)?;
    print!("{csv}");
    Ok(())
}

fn verify_all(cli: &Cli, cfg: &RunConfig) -> Result<(), CliError> {
    let checks = verify::run_all(&cfg.verify)?;
    for c in &checks {
        println!("{}", c.line());
    }
    if let Some(dir) = &cli.out {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut manifest = ManifestBuilder::new("verify", cfg, cfg.verify.seed);
        manifest.write(
            &dir.join("verify.json"),
            &(serde_json::to_string_pretty(&checks).expect("checks serialize") + "\n"),
        )?;
        manifest.finish(dir)?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::new(code::VERIFY, format!("{failed} of {} checks failed", checks.len())));
    }
    println!("all {} checks passed", checks.len());
    Ok(())
}

fn ablate(cli: &Cli, cfg: &RunConfig, data: Option<&Path>) -> Result<(), CliError> {
    let dir = out_dir(cli, "ablate")?;
    let mut manifest = ManifestBuilder::new("ablate", cfg, cfg.train.seed);
    let (train, test) = match data {
        Some(d) => {
            let train_path = data_file(d, "train.jsonl")?;
            let test_path = data_file(d, "test.jsonl")?;
            manifest.input(&train_path)?;
            manifest.input(&test_path)?;
            (load_dataset(&train_path)?, load_dataset(&test_path)?)
        }
        None => (
            generate_channel_cue(&cfg.task, cfg.data.train_count, Split::Train, cfg.data.seed)?,
            generate_channel_cue(&cfg.task, cfg.data.test_count, Split::Test, cfg.data.seed)?,
        ),
    };
    let table = run_comparison(&cfg.train, &train, &test, &cfg.eval.methods, &cfg.eval.seeds, &cfg.digest())?;
    let csv = table.to_csv();
    manifest.write(&dir.join("results.csv"), &csv)?;
    manifest.finish(&dir)?;
    print!("{csv}");
    Ok(())
}
