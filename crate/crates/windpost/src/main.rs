//! Command-line interface for the wind-speed post-processing toolkit.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use windpost::data::{
    generate_synthetic, load_dataset, make_folds, save_dataset, GeneratorConfig, VariableId,
};
use windpost::error::{Error, Result};
use windpost::experiment::methods::{load_model, predict_dataset, save_model};
use windpost::experiment::plot::plot_report;
use windpost::experiment::search::{read_trials, write_trials};
use windpost::experiment::verify::write_report;
use windpost::experiment::{
    narrow_space, random_search, read_predictions, run_cv, train_full, train_method, verify,
    write_predictions, ExperimentConfig, RawConfig, SearchSpace,
};
use windpost::nn::save_epoch_log;

#[derive(Parser)]
#[command(name = "windpost", version, about = "Statistical post-processing of gridded wind-speed forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset pair (train/ and test/) with known truth.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on one cross-validation fold or on the full set.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// 1, 2, 3 (train on the other two blocks) or `full`.
        #[arg(long)]
        fold: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict distributions for every case of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prediction files against observations and write the report.
    Verify {
        /// Comma-separated prediction CSV paths.
        #[arg(long, value_delimiter = ',')]
        preds: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// Reference method for the skill scores (must be among the files).
        #[arg(long)]
        reference: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Random hyperparameter search scored by cross-validation CRPS.
    Search {
        /// Config carrying the experiment template plus [search.*] sections.
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Propose narrowed ranges from a finished trial table.
    Narrow {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG plots from a verification report directory.
    PlotData {
        #[arg(long)]
        report: PathBuf,
    },
}

fn generator_from_config(raw: &RawConfig) -> Result<GeneratorConfig> {
    let mut cfg = GeneratorConfig::default();
    let num = |v: &str, k: &str| -> Result<f64> {
        v.parse().map_err(|_| Error::ConfigError(format!("bad value {v:?} for {k}")))
    };
    for (key, value) in &raw.globals {
        match key.as_str() {
            "stations" => cfg.stations = num(value, key)? as usize,
            "grid_nx" => cfg.grid_nx = num(value, key)? as usize,
            "grid_ny" => cfg.grid_ny = num(value, key)? as usize,
            "spacing_km" => cfg.spacing_km = num(value, key)?,
            "start_year" => cfg.start_year = num(value, key)? as i32,
            "date_stride" => cfg.date_stride = num(value, key)? as usize,
            "include_test_set" => cfg.include_test_set = value == "true",
            "round_observations" => cfg.round_observations = value == "true",
            "obs_noise_scale" => cfg.obs_noise_scale = num(value, key)?,
            "patch_side" => cfg.patch_side = num(value, key)? as usize,
            "margin_cells" => cfg.margin_cells = num(value, key)? as usize,
            "spatial_amplitude" => cfg.spatial_amplitude = num(value, key)?,
            "plume_distance" => cfg.plume_distance_cells = num(value, key)? as usize,
            "plume_radius" => cfg.plume_radius_cells = num(value, key)?,
            "variables" => {
                cfg.variables = value
                    .split_whitespace()
                    .map(VariableId::from_tag)
                    .collect::<Result<Vec<_>>>()?;
            }
            other => return Err(Error::ConfigError(format!("unknown generator key {other:?}"))),
        }
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Generate { config, seed, out } => {
            let gcfg = generator_from_config(&RawConfig::load(&config)?)?;
            let pair = generate_synthetic(&gcfg, seed)?;
            save_dataset(&pair.model, &out.join("train"))?;
            println!(
                "wrote {} training cases to {}",
                pair.model.cases.len(),
                out.join("train").display()
            );
            if let Some(test) = &pair.test {
                save_dataset(test, &out.join("test"))?;
                println!("wrote {} test cases to {}", test.cases.len(), out.join("test").display());
            }
        }
        Command::Train { config, fold, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dataset = load_dataset(&cfg.dataset)?;
            let test_dates = match &cfg.test_dataset {
                Some(p) => load_dataset(p)?.dates(),
                None => Vec::new(),
            };
            match fold.as_str() {
                "full" => {
                    let cv = if cfg.method.is_neural() && cfg.params.epochs_override.is_none() {
                        eprintln!("deriving the full-set epoch count from cross-validation...");
                        run_cv(&cfg, &dataset, &test_dates, None)?
                    } else {
                        Vec::new()
                    };
                    let model = train_full(&cfg, &dataset, &cv)?;
                    save_model(&model, &out)?;
                    println!("wrote full-set model to {}", out.display());
                }
                k @ ("1" | "2" | "3") => {
                    let idx: usize = k.parse().unwrap();
                    let folds = make_folds(&dataset.dates(), &test_dates)?;
                    let fold_spec = &folds[idx - 1];
                    let train_ds =
                        dataset.subset(&dataset.case_indices_for_dates(&fold_spec.train_dates));
                    let val_ds = dataset
                        .subset(&dataset.case_indices_for_dates(&fold_spec.validation_dates));
                    let art = train_method(&cfg, &train_ds, Some(&val_ds), None)?;
                    save_model(&art.model, &out)?;
                    if !art.epoch_log.is_empty() {
                        let log_path = out.with_extension("epochs.csv");
                        save_epoch_log(&log_path, &art.epoch_log)?;
                        println!(
                            "best epoch {} (log at {})",
                            art.best_epoch.unwrap_or(0),
                            log_path.display()
                        );
                    }
                    if art.clamped_targets > 0 {
                        eprintln!(
                            "warning: {} training targets fell outside the head support and were clamped",
                            art.clamped_targets
                        );
                    }
                    println!("wrote fold-{idx} model to {}", out.display());
                }
                other => {
                    return Err(Error::ConfigError(format!(
                        "fold must be 1, 2, 3 or full, got {other:?}"
                    )))
                }
            }
        }
        Command::Predict { model, data, out } => {
            let model = load_model(&model)?;
            let dataset = load_dataset(&data)?;
            let preds = predict_dataset(&model, &dataset)?;
            write_predictions(&out, model.method.tag(), &preds)?;
            println!("wrote {} predictions to {}", preds.len(), out.display());
        }
        Command::Verify { preds, data, reference, out, resamples, seed } => {
            let dataset = load_dataset(&data)?;
            let mut named = Vec::new();
            for path in &preds {
                let (method, dists) = read_predictions(path)?;
                named.push((method, dists));
            }
            let report = verify(&named, &dataset, &reference, resamples, seed)?;
            for note in &report.notes {
                eprintln!("note: {note}");
            }
            let files = write_report(&report, &out)?;
            for s in &report.summaries {
                println!(
                    "{}: crps {:.4} +- {:.4}, rmse {:.4}, mae {:.4}, log {:.4}, crpss vs {} {:.4}",
                    s.method,
                    s.crps,
                    s.crps_bootstrap_std,
                    s.rmse_of_means,
                    s.mae_of_medians,
                    s.log_score,
                    report.reference,
                    s.crpss_vs_reference
                );
            }
            println!("wrote {} report files to {}", files.len(), out.display());
        }
        Command::Search { space, budget, out } => {
            let raw = RawConfig::load(&space)?;
            let template = ExperimentConfig::from_raw(&raw)?;
            let search_space = SearchSpace::from_raw(&raw)?;
            let dataset = load_dataset(&template.dataset)?;
            let trials = random_search(&search_space, &template, &dataset, budget, None)?;
            for t in trials.iter().take(10) {
                let assigns: Vec<String> =
                    t.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect();
                println!("trial {:>3}: crps {:.4} [{}]", t.trial, t.mean_crps, assigns.join(", "));
            }
            if let Some(path) = &out {
                write_trials(path, &trials)?;
                println!("wrote trial table to {}", path.display());
            }
        }
        Command::Narrow { trials, space, out } => {
            let trial_rows = read_trials(&trials)?;
            let original = SearchSpace::load(&space)?;
            let proposal = narrow_space(&original, &trial_rows)?;
            let text = proposal.to_text();
            match out {
                Some(path) => {
                    std::fs::write(&path, &text)?;
                    println!("wrote narrowed space proposal to {}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::PlotData { report } => {
            let files = plot_report(&report)?;
            for f in &files {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
