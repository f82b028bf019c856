use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dualens::classifiers::{accuracy, Family};
use dualens::data;
use dualens::ensemble::{self, vote_labels};
use dualens::harness::{self, RunConfig, TunedExperiment, Workspace};
use dualens::hpo;
use dualens::imgprep::{self, CropParams};
use dualens::Error;

#[derive(Parser)]
#[command(name = "dualens", version, about = "Deep-feature fusion with tuned, voted classical classifiers")]
struct Cli {
    /// Experiment config (flat key = value file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full pipeline: evaluate, select, fuse, tune, vote, report.
    Run,
    /// Tuned cross-validation accuracy of every family on every feature set.
    Evaluate,
    /// Top-k selection on an evaluation table (default: <out>/evaluation.csv).
    Select {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Concatenates feature sets into one FSET1 file plus labels.
    Fuse {
        /// Comma-separated extractor ids.
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Grid-searches one family on one (possibly fused) feature set and
    /// scores the refitted winner on the test split.
    Tune {
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long)]
        family: Family,
        /// Where to write the fitted model blob.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Tunes two or three families and scores their majority vote.
    Vote {
        #[arg(long, value_delimiter = ',', required = true)]
        ids: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        families: Vec<Family>,
    },
    /// Replays top-k selection on a saved table and prints the rank trace.
    ReplaySelection {
        table: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Treat every extractor as its own family.
        #[arg(long)]
        no_diversity: bool,
    },
    /// Extreme-point crop and resize of a binary PGM image.
    Crop {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 45)]
        threshold: u8,
        #[arg(long, default_value_t = 2)]
        iterations: usize,
        #[arg(long, default_value_t = 2)]
        blur: usize,
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_config_error() {
                2
            } else if e.is_data_error() {
                3
            } else {
                1
            })
        }
    }
}

fn load_config(cli: &Cli) -> dualens::Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn workspace(cli: &Cli) -> dualens::Result<Workspace> {
    Workspace::load(load_config(cli)?)
}

fn indices(ws: &Workspace, ids: &[String]) -> dualens::Result<Vec<usize>> {
    ids.iter()
        .map(|id| {
            ws.sets
                .iter()
                .position(|s| &s.source_tag == id)
                .ok_or_else(|| Error::Config(format!("no feature set with extractor id {id}")))
        })
        .collect()
}

/// One set as is, or several fused; either way with the variant applied.
fn candidate(ws: &Workspace, ids: &[String]) -> dualens::Result<(String, harness::Prepared)> {
    let idx = indices(ws, ids)?;
    if idx.len() == 1 {
        let i = idx[0];
        let name = ws.sets[i].source_tag.clone();
        let smote = dualens::transforms::SmoteConfig { k_neighbors: ws.cfg.smote_k, seed: ws.cfg.seed };
        return Ok((name.clone(), harness::prepare(ws.cfg.variant, &name, &ws.train[i], &ws.test[i], smote)?));
    }
    ws.fused(&idx)
}

fn tune(ws: &Workspace, p: &harness::Prepared, family: Family) -> dualens::Result<TunedExperiment> {
    let grid = ws.cfg.grid_for(family, p.train.class_count)?;
    let search = hpo::SearchOptions::new(ws.cfg.folds, ws.cfg.seed).with_execution(ws.cfg.exec);
    harness::tune_and_test(&p.train, &p.test, &grid, &search)
}

fn dispatch(cli: Cli) -> dualens::Result<()> {
    match &cli.command {
        Command::Run => {
            let (report, timings) = workspace(&cli)?.run()?;
            print!("{}", report.summary());
            for (stage, secs) in &timings.stages {
                println!("{stage}: {secs:.2}s");
            }
        }
        Command::Evaluate => {
            let ws = workspace(&cli)?;
            std::fs::create_dir_all(&ws.cfg.output_dir).map_err(|e| Error::io(&ws.cfg.output_dir, e))?;
            let table = ws.evaluate(&mut Vec::new())?;
            print!("{}", table.to_csv_string());
        }
        Command::Select { table, k } => {
            let cfg = load_config(&cli)?;
            let path = table.clone().unwrap_or_else(|| cfg.output_dir.join("evaluation.csv"));
            let t = ensemble::EvaluationTable::read_csv(&path)?;
            let sel = ensemble::select_top_k(&t, k.unwrap_or(cfg.k_top), &cfg.family_rule())?;
            print!("{}", sel.format_trace());
            println!("selected: {}", sel.ids.join(", "));
        }
        Command::Fuse { ids, output } => {
            let ws = workspace(&cli)?;
            let idx = indices(&ws, ids)?;
            let mut fused = ensemble::fuse(&idx.iter().map(|&i| &ws.sets[i]).collect::<Vec<_>>())?;
            fused.source_tag = ids.join("+");
            data::save_feature_set(output, &fused)?;
            println!("{} rows x {} columns -> {}", fused.len(), fused.features.cols(), output.display());
        }
        Command::Tune { ids, family, model } => {
            let ws = workspace(&cli)?;
            let (name, p) = candidate(&ws, ids)?;
            let e = tune(&ws, &p, *family)?;
            std::fs::create_dir_all(&ws.cfg.output_dir).map_err(|e| Error::io(&ws.cfg.output_dir, e))?;
            let trials = ws.cfg.output_dir.join(format!("trials_{}_{}.csv", name.replace('+', "-"), family.name()));
            hpo::write_trials_csv(&trials, &e.grid, &e.trials)?;
            if let Some(path) = model {
                std::fs::write(path, e.model.to_blob()?).map_err(|err| Error::io(path, err))?;
            }
            println!("{name} {}: {} trials, best {}", family.name(), e.trials.len(), e.best.describe());
            println!("cv accuracy {:.6}, test accuracy {:.6}", e.cv_mean, e.test_accuracy);
        }
        Command::Vote { ids, families } => {
            if !(2..=3).contains(&families.len()) {
                return Err(Error::Config(format!("vote needs 2 or 3 families, got {}", families.len())));
            }
            let ws = workspace(&cli)?;
            let (name, p) = candidate(&ws, ids)?;
            let runs = families.iter().map(|&f| tune(&ws, &p, f)).collect::<dualens::Result<Vec<_>>>()?;
            for (f, e) in families.iter().zip(&runs) {
                println!("{}: test accuracy {:.6} with {}", f.name(), e.test_accuracy, e.best.describe());
            }
            let preds: Vec<Vec<usize>> = runs.iter().map(|e| e.test_predictions.clone()).collect();
            let probs: Vec<Vec<Vec<f64>>> = runs.iter().map(|e| e.test_probabilities.clone()).collect();
            let voted = vote_labels(&preds, &probs, p.test.class_count);
            println!("{name} vote: test accuracy {:.6}", accuracy(&voted, &p.test.labels));
        }
        Command::ReplaySelection { table, k, no_diversity } => {
            let sel = harness::replay_selection(table, *k, !no_diversity)?;
            print!("{}", sel.format_trace());
            println!("selected: {}", sel.ids.join(", "));
        }
        Command::Crop { input, output, threshold, iterations, blur, size } => {
            crop(input, output, CropParams { threshold: *threshold, morph_iterations: *iterations, blur_radius: *blur, target_size: (*size, *size) })?;
        }
    }
    Ok(())
}

fn crop(input: &Path, output: &Path, params: CropParams) -> dualens::Result<()> {
    let img = imgprep::read_pgm(input)?;
    let (out, fallback) = imgprep::preprocess(&img, &params)?;
    imgprep::write_pgm(output, &out)?;
    if fallback {
        eprintln!("no foreground region found in {}; resized the full image", input.display());
    }
    Ok(())
}
