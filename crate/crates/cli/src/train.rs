//! `train` and `eval`.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use efy_core::data::{parse_libsvm_multilabel, planted_pairwise, split, ParseOptions};
use efy_core::training::{evaluate_accuracy, hyperparam_search, predict, train};
use efy_core::{Model, ModelSpec, MultilabelDataset, Regularizer, Standardizer, Task};
use serde::{Deserialize, Serialize};

use crate::config::{ensure_dir, load, DatasetSource, Document, Loaded, RunConfig};
use crate::failure::Failure;

/// Unstandardized splits drawn from the configured source.
pub struct Splits {
    pub train: MultilabelDataset,
    pub dev: Option<MultilabelDataset>,
    pub test: MultilabelDataset,
}

fn read_libsvm(path: &Path, opts: &ParseOptions) -> Result<MultilabelDataset, Failure> {
    let file = File::open(path).map_err(|e| Failure::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    parse_libsvm_multilabel(BufReader::new(file), opts).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Splits are seeded by the run seed: test first, then dev out of the rest.
pub fn build_splits(run: &Loaded<RunConfig>) -> Result<Splits, Failure> {
    let cfg = &run.config;
    let (pool, test) = match &cfg.dataset {
        DatasetSource::Synthetic(spec) => {
            let (data, _) = planted_pairwise(spec)?;
            let parts = split(&data, &[1.0 - cfg.test_fraction, cfg.test_fraction], run.seed)?;
            let [pool, test]: [MultilabelDataset; 2] = parts.try_into().expect("two parts");
            (pool, test)
        }
        DatasetSource::Libsvm(src) => {
            let opts = ParseOptions { label_base: src.label_base, n_labels: src.n_labels, n_features: src.n_features };
            let data = read_libsvm(&run.resolve(&src.train), &opts)?;
            match &src.test {
                Some(test_path) => {
                    let test_opts = ParseOptions {
                        label_base: src.label_base,
                        n_labels: Some(data.n_labels()),
                        n_features: Some(data.n_features()),
                    };
                    (data.clone(), read_libsvm(&run.resolve(test_path), &test_opts)?)
                }
                None => {
                    let parts = split(&data, &[1.0 - cfg.test_fraction, cfg.test_fraction], run.seed)?;
                    let [pool, test]: [MultilabelDataset; 2] = parts.try_into().expect("two parts");
                    (pool, test)
                }
            }
        }
    };
    if cfg.dev_fraction > 0.0 {
        let parts = split(&pool, &[1.0 - cfg.dev_fraction, cfg.dev_fraction], run.seed.wrapping_add(1))?;
        let [train, dev]: [MultilabelDataset; 2] = parts.try_into().expect("two parts");
        Ok(Splits { train, dev: Some(dev), test })
    } else {
        Ok(Splits { train: pool, dev: None, test })
    }
}

pub fn build_task(cfg: &RunConfig, input_dim: usize, n_labels: usize) -> Result<Task, Failure> {
    let mut spec = ModelSpec::new(cfg.architecture, input_dim, n_labels);
    if let Some(h) = cfg.hidden {
        spec.hidden = h;
    }
    if let Some(h) = cfg.prior_hidden {
        spec.prior_hidden = h;
    }
    let reg = Regularizer::with_default_domain(cfg.regularizer, n_labels)
        .map_err(|e| Failure::Config(format!("regularizer: {e}")))?;
    let task = Task { spec, reg, loss: cfg.loss };
    task.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(task)
}

#[derive(Serialize)]
struct Selected {
    lambda: f64,
    learning_rate: f64,
    mean_dev_accuracy: Option<f64>,
}

#[derive(Serialize)]
struct Summary {
    architecture: &'static str,
    loss: &'static str,
    n_train: usize,
    n_dev: usize,
    n_test: usize,
    n_params: usize,
    epochs: usize,
    final_loss: Option<f64>,
    train_accuracy: f64,
    dev_accuracy: Option<f64>,
    test_accuracy: f64,
    selected: Option<Selected>,
    wall_time_secs: f64,
}

#[derive(Deserialize)]
struct StandardizerFile {
    standardizer: Standardizer,
}

pub fn cmd_train(config: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let run: Loaded<RunConfig> = load(config, Document::Run)?;
    let cfg = &run.config;
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.resolve(&cfg.output_dir));
    let prov = run.provenance("train");

    let raw = build_splits(&run)?;
    let scaler = Standardizer::fit(&raw.train.x)?;
    let train_set = scaler.apply(&raw.train)?;
    let dev_set = raw.dev.as_ref().map(|d| scaler.apply(d)).transpose()?;
    let test_set = scaler.apply(&raw.test)?;
    let task = build_task(cfg, train_set.n_features(), train_set.n_labels())?;
    let base = cfg.train.to_train_config(run.seed, cfg.solver);
    base.validate().map_err(|e| Failure::Config(format!("train: {e}")))?;
    ensure_dir(&out_dir)?;

    let (report, selected) = match &cfg.search {
        Some(search) => {
            let seeds: Vec<u64> = (0..search.seeds as u64).map(|i| run.seed.wrapping_add(i)).collect();
            let result = hyperparam_search(&train_set, &task, &search.grid(), &base, &seeds, search.holdout, run.seed)?;
            let mut w = prov.csv(&out_dir.join("search.csv"))?;
            let mut head = vec!["lambda".to_string(), "learning_rate".to_string()];
            head.extend(seeds.iter().map(|s| format!("dev_accuracy_seed{s}")));
            head.push("mean_dev_accuracy".into());
            w.write_record(&head)?;
            for cell in &result.cells {
                let mut row = vec![cell.lambda.to_string(), cell.learning_rate.to_string()];
                row.extend(cell.dev_accuracy.iter().map(|a| a.map(|v| v.to_string()).unwrap_or_default()));
                row.push(cell.score().map(|v| v.to_string()).unwrap_or_default());
                w.write_record(&row)?;
            }
            w.flush()?;
            let best = result.best_cell();
            let selected =
                Selected { lambda: best.lambda, learning_rate: best.learning_rate, mean_dev_accuracy: best.score() };
            let report = result.refits.into_iter().next().expect("at least one seed");
            (report, Some(selected))
        }
        None => (train(&train_set, dev_set.as_ref(), &task, &base)?, None),
    };

    let mut w = prov.csv(&out_dir.join("metrics.csv"))?;
    w.write_record(["epoch", "loss", "dev_accuracy"])?;
    for e in &report.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.loss.to_string(),
            e.dev_accuracy.map(|a| a.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    report.model.save(out_dir.join("params.bin"))?;
    prov.write_json(&out_dir.join("standardizer.json"), "standardizer", &scaler)?;

    let solver = &base.solver;
    let train_accuracy = evaluate_accuracy(&report.model, &task, &train_set, solver)?;
    let dev_accuracy = dev_set.as_ref().map(|d| evaluate_accuracy(&report.model, &task, d, solver)).transpose()?;
    let test_accuracy = evaluate_accuracy(&report.model, &task, &test_set, solver)?;
    let summary = Summary {
        architecture: cfg.architecture.name(),
        loss: cfg.loss.name(),
        n_train: train_set.len(),
        n_dev: dev_set.as_ref().map_or(0, |d| d.len()),
        n_test: test_set.len(),
        n_params: report.model.theta.len(),
        epochs: report.epochs.len(),
        final_loss: report.final_loss(),
        train_accuracy,
        dev_accuracy,
        test_accuracy,
        selected,
        wall_time_secs: report.wall_time_secs,
    };
    prov.write_json(&out_dir.join("summary.json"), "summary", &summary)?;

    println!(
        "trained {} ({} loss) for {} epochs: final loss {}, train accuracy {:.4}, test accuracy {:.4}",
        cfg.architecture.name(),
        cfg.loss.name(),
        summary.epochs,
        summary.final_loss.map_or("n/a".to_string(), |l| format!("{l:.6}")),
        train_accuracy,
        test_accuracy
    );
    println!("outputs written to {}", out_dir.display());
    Ok(())
}

fn load_standardizer(path: &Path) -> Result<Standardizer, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Failure::Config(format!("cannot read standardizer {}: {e} (expected next to the parameters)", path.display()))
    })?;
    let file: StandardizerFile =
        serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(file.standardizer)
}

pub fn cmd_eval(config: &Path, params: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<(), Failure> {
    let run: Loaded<RunConfig> = load(config, Document::Run)?;
    let cfg = &run.config;
    if !params.is_file() {
        return Err(Failure::Config(format!("params file {} does not exist", params.display())));
    }
    let model = Model::load(params).map_err(|e| match e {
        efy_core::Error::Io(io) => Failure::Config(format!("cannot read params {}: {io}", params.display())),
        other => Failure::Config(format!("{}: {other}", params.display())),
    })?;
    let dir: PathBuf = params.parent().map(Path::to_path_buf).unwrap_or_default();
    let scaler = load_standardizer(&dir.join("standardizer.json"))?;

    let raw = match data {
        Some(path) => {
            let label_base = match &cfg.dataset {
                DatasetSource::Libsvm(src) => src.label_base,
                DatasetSource::Synthetic(_) => Default::default(),
            };
            let opts = ParseOptions {
                label_base,
                n_labels: Some(model.spec.output_dim),
                n_features: Some(model.spec.input_dim),
            };
            read_libsvm(path, &opts)?
        }
        None => build_splits(&run)?.test,
    };
    let test = scaler.apply(&raw).map_err(|e| Failure::Config(format!("standardizer: {e}")))?;
    let mut task = build_task(cfg, test.n_features(), test.n_labels())?;
    if task.spec.architecture != model.spec.architecture {
        return Err(Failure::Config(format!(
            "architecture: config says {}, params hold {}",
            task.spec.architecture.name(),
            model.spec.architecture.name()
        )));
    }
    task.spec = model.spec.clone();

    let predictions = predict(&model, &task, &test, &cfg.solver)?;
    let accuracy = efy_core::calibration::accuracy(&predictions, &test.y)?;

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.resolve(&cfg.output_dir));
    ensure_dir(&out_dir)?;
    let mut w = run.provenance("eval").csv(&out_dir.join("predictions.csv"))?;
    let k = test.n_labels();
    let mut head = vec!["row".to_string()];
    head.extend((0..k).map(|j| format!("pred_{j}")));
    head.extend((0..k).map(|j| format!("true_{j}")));
    w.write_record(&head)?;
    for i in 0..test.len() {
        let mut row = vec![i.to_string()];
        row.extend(predictions.row(i).iter().map(|v| format!("{}", *v as u8)));
        row.extend(test.y.row(i).iter().map(|v| format!("{}", *v as u8)));
        w.write_record(&row)?;
    }
    w.flush()?;
    println!("accuracy {accuracy:.6} on {} rows", test.len());
    Ok(())
}
