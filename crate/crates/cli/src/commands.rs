//! The five subcommands. Each writes its outputs plus a `manifest.txt` under
//! the chosen output directory; the manifest uses config syntax and fully
//! reproduces the run.

use crate::config::{write_manifest, KvConfig};
use crate::{CliError, GenerateKind};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use trip_core::data::{
    self, CvPlan, Dataset, NormStats, ProjectionKind, Responses, RunSettings,
};
use trip_core::interpret::{self, SurrogateTarget};
use trip_core::model::{TaskKind, TripModel};
use trip_core::train::write_epoch_log_csv;

const TRAIN_KEYS: &[&str] = &[
    "command",
    "task",
    "data",
    "response",
    "normalize",
    "j",
    "hidden_layers",
    "hidden_width",
    "rank",
    "lambda",
    "epochs",
    "batch",
    "learning_rate",
    "seed",
    "projection",
    "ortho",
    "grad_clip",
];

const CV_KEYS: &[&str] = &[
    "command",
    "task",
    "data",
    "response",
    "normalize",
    "j",
    "hidden_layers",
    "hidden_width",
    "rank",
    "lambda",
    "epochs",
    "batch",
    "learning_rate",
    "seed",
    "projection",
    "ortho",
    "grad_clip",
    "folds",
    "trials",
    "cv_seed",
    "lambda_grid",
    "hidden_grid",
];

fn ensure_outdir(outdir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(outdir)
        .map_err(|e| CliError::validation(format!("cannot create {}: {e}", outdir.display())))
}

fn parse_task(s: &str) -> Result<TaskKind, CliError> {
    s.parse::<TaskKind>().map_err(CliError::from)
}

/// Loads a dataset by extension: `.csv` is the dense format (task required),
/// anything else the sparse coordinate format (task read from the header).
fn load_dataset(
    path: &Path,
    task: Option<&str>,
    response: Option<&str>,
) -> Result<Dataset, CliError> {
    let is_csv = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("csv"))
        .unwrap_or(false);
    if is_csv {
        let task = task.ok_or_else(|| {
            CliError::validation("CSV data needs an explicit task (classification or regression)")
        })?;
        Ok(data::load_dense_csv(path, parse_task(task)?, response)?)
    } else {
        let ds = data::load_sparse_tensor(path)?;
        if let Some(t) = task {
            if parse_task(t)? != ds.task() {
                return Err(CliError::validation(format!(
                    "task '{t}' contradicts the data file, which declares '{}'",
                    ds.task()
                )));
            }
        }
        Ok(ds)
    }
}

fn write_norm_stats(stats: &NormStats, path: &Path) -> Result<(), CliError> {
    let mut out = String::from("variable,mean,std,constant\n");
    for i in 0..stats.mean.len() {
        writeln!(
            out,
            "{},{:.16e},{:.16e},{}",
            i + 1,
            stats.mean[i],
            stats.std[i],
            stats.constant[i] as u8
        )
        .unwrap();
    }
    std::fs::write(path, out)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_norm_stats(path: &Path) -> Result<NormStats, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let mut mean = Vec::new();
    let mut std = Vec::new();
    let mut constant = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::validation(format!(
                "{}:{}: expected 4 fields",
                path.display(),
                i + 1
            )));
        }
        let bad =
            |f: &str| CliError::validation(format!("{}:{}: bad number '{f}'", path.display(), i + 1));
        mean.push(fields[1].trim().parse::<f64>().map_err(|_| bad(fields[1]))?);
        std.push(fields[2].trim().parse::<f64>().map_err(|_| bad(fields[2]))?);
        constant.push(fields[3].trim() == "1");
    }
    Ok(NormStats {
        mean,
        std,
        constant,
    })
}

fn maybe_normalized(ds: Dataset, norm_stats: Option<&Path>) -> Result<Dataset, CliError> {
    match norm_stats {
        None => Ok(ds),
        Some(p) => {
            let stats = read_norm_stats(p)?;
            Ok(data::apply_norm_stats(&ds, &stats)?)
        }
    }
}

pub fn generate(
    kind: GenerateKind,
    seed: u64,
    samples: usize,
    nnz: usize,
    outdir: &Path,
) -> Result<(), CliError> {
    ensure_outdir(outdir)?;
    let mut manifest: Vec<(&str, String)> = vec![
        ("command", "generate".into()),
        ("seed", seed.to_string()),
    ];
    match kind {
        GenerateKind::Spiral => {
            let (train, test) = data::gen_spiral(seed)?;
            let train_path = outdir.join("spiral_train.csv");
            let test_path = outdir.join("spiral_test.csv");
            data::save_dense_csv(&train, &train_path)?;
            data::save_dense_csv(&test, &test_path)?;
            manifest.insert(1, ("kind", "spiral".into()));
            manifest.push(("samples", train.len().to_string()));
            manifest.push(("shape", data::SPIRAL_DIM.to_string()));
            manifest.push(("train_file", train_path.display().to_string()));
            manifest.push(("test_file", test_path.display().to_string()));
            println!("wrote {} and {}", train_path.display(), test_path.display());
        }
        GenerateKind::Rand1 | GenerateKind::Rand2 | GenerateKind::Rand3 => {
            let (name, extents): (&str, Vec<usize>) = match kind {
                GenerateKind::Rand1 => ("rand1", vec![1000]),
                GenerateKind::Rand2 => ("rand2", vec![1000, 1000]),
                GenerateKind::Rand3 => ("rand3", vec![1000, 1000, 1000]),
                GenerateKind::Spiral => unreachable!(),
            };
            let ds = data::gen_random_tensor(&extents, samples, nnz, seed)?;
            let path = outdir.join(format!("{name}.tns"));
            data::save_sparse_tensor(&ds, &path)?;
            let dims: Vec<String> = extents.iter().map(|d| d.to_string()).collect();
            manifest.insert(1, ("kind", name.into()));
            manifest.push(("samples", samples.to_string()));
            manifest.push(("nnz_per_sample", nnz.to_string()));
            manifest.push((
                "shape",
                format!("{} {} {}", dims.join(" "), samples, ds.task()),
            ));
            manifest.push(("data_file", path.display().to_string()));
            println!("wrote {}", path.display());
        }
    }
    write_manifest(&outdir.join("manifest.txt"), &manifest)
}

/// Common training setup shared by `train` and `cv`.
struct ResolvedRun {
    task: Option<String>,
    data_path: PathBuf,
    response: String,
    normalize: bool,
    settings: RunSettings,
    dataset: Dataset,
}

fn resolve_run(cfg: &KvConfig, base: &Path) -> Result<ResolvedRun, CliError> {
    let data_path = cfg.path("data", base)?;
    let task: Option<String> = cfg.get("task").map(|s| s.to_string());
    let response = cfg.get("response").unwrap_or("y").to_string();
    let normalize: bool = cfg.parse_or("normalize", false)?;
    let subspace_dims: Vec<usize> = cfg.parse_list("j")?;
    let hidden_layers: usize = cfg.parse_or("hidden_layers", 0)?;
    let hidden_width: usize = cfg.parse_or("hidden_width", 10)?;
    let rank = match cfg.get("rank") {
        None => None,
        Some("auto") => None,
        Some(raw) => Some(raw.parse::<usize>().map_err(|_| {
            CliError::validation(format!("config key 'rank': cannot parse '{raw}'"))
        })?),
    };
    // the regularization weight has no silent default
    let lambda: f64 = cfg.parse("lambda")?;
    let epochs: usize = cfg.parse("epochs")?;
    let batch_size: usize = cfg.parse("batch")?;
    let learning_rate: f64 = cfg.parse_or("learning_rate", 0.001)?;
    let seed: u64 = cfg.parse_or("seed", 0)?;
    let projection = match cfg.get("projection").unwrap_or("trip") {
        "trip" => ProjectionKind::Learned,
        "pca" => ProjectionKind::Pca,
        other => {
            return Err(CliError::validation(format!(
                "config key 'projection': expected 'trip' or 'pca', got '{other}'"
            )))
        }
    };
    let ortho_per_batch = match cfg.get("ortho").unwrap_or("batch") {
        "batch" => true,
        "epoch" => false,
        other => {
            return Err(CliError::validation(format!(
                "config key 'ortho': expected 'batch' or 'epoch', got '{other}'"
            )))
        }
    };
    let grad_clip: Option<f64> = match cfg.get("grad_clip") {
        None => None,
        Some(raw) => Some(raw.parse().map_err(|_| {
            CliError::validation(format!("config key 'grad_clip': cannot parse '{raw}'"))
        })?),
    };
    if lambda < 0.0 {
        return Err(CliError::validation("lambda must be >= 0"));
    }
    if !(learning_rate > 0.0) {
        return Err(CliError::validation("learning_rate must be > 0"));
    }
    if batch_size == 0 {
        return Err(CliError::validation("batch must be >= 1"));
    }

    let mut dataset = load_dataset(&data_path, task.as_deref(), Some(&response))?;
    if normalize {
        dataset = data::normalize(&dataset)?;
    }
    if subspace_dims.len() != dataset.order() {
        return Err(CliError::validation(format!(
            "j lists {} dims but the data has {} modes",
            subspace_dims.len(),
            dataset.order()
        )));
    }
    Ok(ResolvedRun {
        task: Some(dataset.task().to_string()),
        data_path,
        response,
        normalize,
        settings: RunSettings {
            subspace_dims,
            hidden_layers,
            hidden_width,
            rank,
            lambda,
            epochs,
            batch_size,
            learning_rate,
            seed,
            normalize,
            projection,
            ortho_per_batch,
            grad_clip,
        },
        dataset,
    })
}

fn run_manifest(command: &str, run: &ResolvedRun, resolved_rank: usize) -> Vec<(&'static str, String)> {
    let s = &run.settings;
    let joined: Vec<String> = s.subspace_dims.iter().map(|j| j.to_string()).collect();
    let mut m: Vec<(&'static str, String)> = vec![
        ("command", command.to_string()),
        ("task", run.task.clone().unwrap_or_default()),
        ("data", run.data_path.display().to_string()),
        ("response", run.response.clone()),
        ("normalize", run.normalize.to_string()),
        ("j", joined.join(",")),
        ("hidden_layers", s.hidden_layers.to_string()),
        ("hidden_width", s.hidden_width.to_string()),
        ("rank", resolved_rank.to_string()),
        ("lambda", format!("{}", s.lambda)),
        ("epochs", s.epochs.to_string()),
        ("batch", s.batch_size.to_string()),
        ("learning_rate", format!("{}", s.learning_rate)),
        ("seed", s.seed.to_string()),
        (
            "projection",
            match s.projection {
                ProjectionKind::Learned => "trip".to_string(),
                ProjectionKind::Pca => "pca".to_string(),
            },
        ),
        (
            "ortho",
            if s.ortho_per_batch { "batch" } else { "epoch" }.to_string(),
        ),
    ];
    if let Some(clip) = s.grad_clip {
        m.push(("grad_clip", format!("{clip}")));
    }
    m
}

pub fn train(config: &Path, sets: &[String], outdir: &Path) -> Result<(), CliError> {
    let mut cfg = KvConfig::from_file(config)?;
    cfg.apply_overrides(sets)?;
    cfg.reject_unknown(TRAIN_KEYS)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let run = resolve_run(&cfg, &base)?;
    ensure_outdir(outdir)?;

    let model_cfg = data::model_config_for(&run.dataset, &run.settings);
    let resolved_rank = model_cfg.resolved_rank();

    let result = data::train_on(&run.dataset, &run.settings, run.settings.seed)?;

    let model_path = outdir.join("model.trip");
    result.model.save_to(&model_path)?;
    let log_path = outdir.join("training_log.csv");
    write_epoch_log_csv(&result.log, &log_path)?;
    if run.normalize {
        if let Some(stats) = run.dataset.norm_stats() {
            write_norm_stats(stats, &outdir.join("norm_stats.csv"))?;
        }
    }
    write_manifest(
        &outdir.join("manifest.txt"),
        &run_manifest("train", &run, resolved_rank),
    )?;
    match result.log.last() {
        Some(last) => println!(
            "trained {} epochs: loss {:.6}, fit metric {:.6} -> {}",
            result.log.len(),
            last.mean_loss,
            last.fit_metric,
            model_path.display()
        ),
        None => println!("wrote initialized model -> {}", model_path.display()),
    }
    Ok(())
}

pub fn evaluate(
    model_path: &Path,
    data_path: &Path,
    task: Option<&str>,
    response: Option<&str>,
    norm_stats: Option<&Path>,
    outdir: &Path,
) -> Result<(), CliError> {
    let model = TripModel::load_from(model_path)?;
    let ds = maybe_normalized(load_dataset(data_path, task, response)?, norm_stats)?;
    let report = data::evaluate_model(&model, &ds)?;
    ensure_outdir(outdir)?;

    let mut csv = String::from("n,accuracy,auc,rmse\n");
    let fmt = |v: Option<f64>| v.map(|x| format!("{:.17e}", x)).unwrap_or_default();
    writeln!(
        csv,
        "{},{},{},{}",
        report.n,
        fmt(report.accuracy),
        fmt(report.auc),
        fmt(report.rmse)
    )
    .unwrap();
    let metrics_path = outdir.join("metrics.csv");
    std::fs::write(&metrics_path, csv)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", metrics_path.display())))?;

    print!("evaluated {} samples:", report.n);
    if let Some(a) = report.accuracy {
        print!(" accuracy {a:.6}");
    }
    if let Some(a) = report.auc {
        print!(" auc {a:.6}");
    }
    if let Some(r) = report.rmse {
        print!(" rmse {r:.6}");
    }
    println!();
    write_manifest(
        &outdir.join("manifest.txt"),
        &[
            ("command", "evaluate".to_string()),
            ("model", model_path.display().to_string()),
            ("data", data_path.display().to_string()),
        ],
    )
}

pub fn cross_validate(config: &Path, sets: &[String], outdir: &Path) -> Result<(), CliError> {
    let mut cfg = KvConfig::from_file(config)?;
    cfg.apply_overrides(sets)?;
    cfg.reject_unknown(CV_KEYS)?;
    let base = config.parent().unwrap_or(Path::new(".")).to_path_buf();
    let folds: usize = cfg.parse_or("folds", 10)?;
    let trials: usize = cfg.parse_or("trials", 5)?;
    let cv_seed: u64 = cfg.parse_or("cv_seed", 0)?;
    let lambda_grid: Option<Vec<f64>> = cfg.parse_list_opt("lambda_grid")?;
    let hidden_grid: Option<Vec<usize>> = cfg.parse_list_opt("hidden_grid")?;
    let run = resolve_run(&cfg, &base)?;
    ensure_outdir(outdir)?;

    // normalization happens inside the folds, on training-fold statistics
    let dataset = if run.normalize {
        load_dataset(&run.data_path, run.task.as_deref(), Some(&run.response))?
    } else {
        run.dataset.clone()
    };

    let lambdas = lambda_grid.unwrap_or_else(|| vec![run.settings.lambda]);
    let hiddens = hidden_grid.unwrap_or_else(|| vec![run.settings.hidden_layers]);
    let plan = CvPlan {
        folds,
        trials,
        seed: cv_seed,
    };
    let mut rows_csv = String::from("lambda,hidden_layers,trial,fold,metric,auc\n");
    let mut summary_csv = String::from("lambda,hidden_layers,mean,std,mean_auc\n");
    let mut best: Option<(f64, usize, f64)> = None;
    let higher_is_better = dataset.task() == TaskKind::Classification;
    for &hidden in &hiddens {
        for &lambda in &lambdas {
            let mut settings = run.settings.clone();
            settings.lambda = lambda;
            settings.hidden_layers = hidden;
            let report = data::run_cv(&dataset, &settings, &plan)?;
            for r in &report.rows {
                let auc = r.auc.map(|a| format!("{:.17e}", a)).unwrap_or_default();
                writeln!(
                    rows_csv,
                    "{lambda},{hidden},{},{},{:.17e},{auc}",
                    r.trial, r.fold, r.metric
                )
                .unwrap();
            }
            let mean_auc = report
                .mean_auc
                .map(|a| format!("{:.17e}", a))
                .unwrap_or_default();
            writeln!(
                summary_csv,
                "{lambda},{hidden},{:.17e},{:.17e},{mean_auc}",
                report.mean, report.std
            )
            .unwrap();
            println!(
                "lambda={lambda} hidden={hidden}: mean {:.4} (std {:.4})",
                report.mean, report.std
            );
            let better = match best {
                None => true,
                Some((_, _, cur)) => {
                    if higher_is_better {
                        report.mean > cur
                    } else {
                        report.mean < cur
                    }
                }
            };
            if better {
                best = Some((lambda, hidden, report.mean));
            }
        }
    }
    let rows_path = outdir.join("cv_rows.csv");
    std::fs::write(&rows_path, rows_csv)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", rows_path.display())))?;
    let summary_path = outdir.join("cv_summary.csv");
    std::fs::write(&summary_path, summary_csv)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", summary_path.display())))?;
    if let Some((l, h, m)) = best {
        println!("best: lambda={l} hidden={h} with mean metric {m:.4}");
    }

    let model_cfg = data::model_config_for(&dataset, &run.settings);
    let mut manifest = run_manifest("cv", &run, model_cfg.resolved_rank());
    manifest.push(("folds", folds.to_string()));
    manifest.push(("trials", trials.to_string()));
    manifest.push(("cv_seed", cv_seed.to_string()));
    if lambdas.len() > 1 {
        let g: Vec<String> = lambdas.iter().map(|l| l.to_string()).collect();
        manifest.push(("lambda_grid", g.join(",")));
    }
    if hiddens.len() > 1 {
        let g: Vec<String> = hiddens.iter().map(|h| h.to_string()).collect();
        manifest.push(("hidden_grid", g.join(",")));
    }
    write_manifest(&outdir.join("manifest.txt"), &manifest)
}

pub struct InterpretArgs<'a> {
    pub model: &'a Path,
    pub data: &'a Path,
    pub task: Option<&'a str>,
    pub response: Option<&'a str>,
    pub norm_stats: Option<&'a Path>,
    pub sigma: f64,
    pub grid_axes: &'a str,
    pub grid_resolution: usize,
    pub grid_bounds: Option<&'a str>,
    pub outdir: &'a Path,
}

pub fn interpret(args: InterpretArgs<'_>) -> Result<(), CliError> {
    if args.sigma <= 0.0 {
        return Err(CliError::validation("sigma must be > 0"));
    }
    let model = TripModel::load_from(args.model)?;
    let ds = maybe_normalized(
        load_dataset(args.data, args.task, args.response)?,
        args.norm_stats,
    )?;
    if ds.shape().dims() != model.input_dims() {
        return Err(CliError::validation(format!(
            "data shape {:?} does not match the model input {:?}",
            ds.shape().dims(),
            model.input_dims()
        )));
    }
    ensure_outdir(args.outdir)?;

    let classes = match model.task() {
        TaskKind::Classification => model.outputs(),
        TaskKind::Regression => 1,
    };
    let weights = vec![1.0; ds.len()];
    // one surrogate per class logit (a single one for regression)
    let surrogates: Vec<interpret::SurrogateModel> = (0..classes)
        .map(|c| {
            let target = SurrogateTarget::for_model(&model, Some(c))?;
            interpret::fit_surrogate(&model, ds.samples(), &weights, target)
        })
        .collect::<trip_core::Result<_>>()?;
    // axes come from the first surrogate; for single-mode models the
    // rotation does not depend on the surrogate at all
    let rot = interpret::rotation(&model, ds.samples(), &surrogates[0])?;

    // predictions, for labeling the outputs
    let predictions: Vec<Vec<f64>> = ds
        .samples()
        .iter()
        .map(|x| model.forward(x))
        .collect::<trip_core::Result<_>>()?;
    let predicted_class: Vec<usize> = predictions
        .iter()
        .map(|s| {
            let mut best = 0;
            for (i, &v) in s.iter().enumerate().skip(1) {
                if v > s[best] {
                    best = i;
                }
            }
            best
        })
        .collect();

    // rotated per-mode coordinates
    let coords = interpret::rotated_coordinates(&model, ds.samples(), &surrogates[0], &rot)?;
    for k in 0..model.order() {
        let jk = model.subspace_dims()[k];
        let mut csv = String::from("sample,label,predicted");
        for j in 1..=jk {
            write!(csv, ",c_{j}").unwrap();
        }
        csv.push('\n');
        for n in 0..ds.len() {
            let label = match ds.responses() {
                Responses::Classes(cs) => cs[n].to_string(),
                Responses::Values(vs) => format!("{:.16e}", vs[n]),
            };
            let predicted = match model.task() {
                TaskKind::Classification => predicted_class[n].to_string(),
                TaskKind::Regression => format!("{:.16e}", predictions[n][0]),
            };
            write!(csv, "{},{},{}", n + 1, label, predicted).unwrap();
            for v in &coords[n][k] {
                write!(csv, ",{:.16e}", v).unwrap();
            }
            csv.push('\n');
        }
        let p = args.outdir.join(format!("rotated_coords_{}.csv", k + 1));
        std::fs::write(&p, csv)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;
    }

    // rotation matrices with their singular values, one column per row
    for k in 0..model.order() {
        let jk = model.subspace_dims()[k];
        let mut csv = String::from("axis,singular_value");
        for i in 1..=jk {
            write!(csv, ",r_{i}").unwrap();
        }
        csv.push('\n');
        for j in 0..jk {
            write!(csv, "{},{:.16e}", j + 1, rot.singular_values[k][j]).unwrap();
            for i in 0..jk {
                write!(csv, ",{:.16e}", rot.rotations[k].get(i, j)).unwrap();
            }
            csv.push('\n');
        }
        let p = args.outdir.join(format!("rotation_{}.csv", k + 1));
        std::fs::write(&p, csv)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;
    }

    // global surrogates
    for k in 0..model.order() {
        let jk = model.subspace_dims()[k];
        let mut csv = String::from("class,bias");
        for j in 1..=jk {
            write!(csv, ",g_{j}").unwrap();
        }
        csv.push('\n');
        for (c, s) in surrogates.iter().enumerate() {
            write!(csv, "{},{:.16e}", c, s.bias).unwrap();
            for v in &s.coefficients[k] {
                write!(csv, ",{:.16e}", v).unwrap();
            }
            csv.push('\n');
        }
        let p = args.outdir.join(format!("surrogate_{}.csv", k + 1));
        std::fs::write(&p, csv)
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;
    }

    // local regression coefficients at every sample, for its predicted class
    let mut rotated_csv: Vec<String> = (0..model.order())
        .map(|k| {
            let jk = model.subspace_dims()[k];
            let mut h = String::from("sample,class,bias");
            for j in 1..=jk {
                write!(h, ",g_{j}").unwrap();
            }
            h.push('\n');
            h
        })
        .collect();
    let mut original_csv: Vec<String> = (0..model.order())
        .map(|k| {
            let ik = model.input_dims()[k];
            let mut h = String::from("sample,class,bias");
            for i in 1..=ik {
                write!(h, ",v_{i}").unwrap();
            }
            h.push('\n');
            h
        })
        .collect();
    for n in 0..ds.len() {
        let class = match model.task() {
            TaskKind::Classification => predicted_class[n],
            TaskKind::Regression => 0,
        };
        let target = SurrogateTarget::for_model(&model, Some(class))?;
        let entry = interpret::lrc(
            &model,
            ds.samples(),
            n,
            args.sigma,
            &surrogates[class],
            &rot,
            target,
        )?;
        for k in 0..model.order() {
            write!(rotated_csv[k], "{},{},{:.16e}", n + 1, class, entry.local.bias).unwrap();
            for v in &entry.rotated[k] {
                write!(rotated_csv[k], ",{:.16e}", v).unwrap();
            }
            rotated_csv[k].push('\n');
            write!(original_csv[k], "{},{},{:.16e}", n + 1, class, entry.local.bias).unwrap();
            for v in &entry.original[k] {
                write!(original_csv[k], ",{:.16e}", v).unwrap();
            }
            original_csv[k].push('\n');
        }
    }
    for k in 0..model.order() {
        let p = args.outdir.join(format!("lrc_rotated_{}.csv", k + 1));
        std::fs::write(&p, &rotated_csv[k])
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;
        let p = args.outdir.join(format!("lrc_original_{}.csv", k + 1));
        std::fs::write(&p, &original_csv[k])
            .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;
    }

    // decision grid in two rotated coordinates
    let axes: Vec<usize> = args
        .grid_axes
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| CliError::validation(format!("bad grid axis '{}'", s.trim())))
        })
        .collect::<Result<_, _>>()?;
    if axes.len() != 2 {
        return Err(CliError::validation(
            "grid_axes must name exactly two coordinates",
        ));
    }
    let bounds = match args.grid_bounds {
        Some(raw) => {
            let vals: Vec<f64> = raw
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| CliError::validation(format!("bad grid bound '{}'", s.trim())))
                })
                .collect::<Result<_, _>>()?;
            if vals.len() != 4 {
                return Err(CliError::validation(
                    "grid_bounds must be min1,max1,min2,max2",
                ));
            }
            (vals[0], vals[1], vals[2], vals[3])
        }
        None => {
            // data range of the scanned coordinates, padded by 10%
            let rots = &rot.rotations;
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for x in ds.samples() {
                let xbar = model.project(x)?;
                let refs: Vec<&trip_core::tensor::Matrix> = rots.iter().collect();
                let mut rotated = xbar;
                for (k, r) in refs.iter().enumerate() {
                    rotated = trip_core::tensor::mode_product(&rotated, r, k)?;
                }
                for (i, &axis) in axes.iter().enumerate() {
                    let v = rotated.values()[axis];
                    lo[i] = lo[i].min(v);
                    hi[i] = hi[i].max(v);
                }
            }
            let pad = |l: f64, h: f64| {
                let d = (h - l).max(1e-6) * 0.1;
                (l - d, h + d)
            };
            let (l1, h1) = pad(lo[0], hi[0]);
            let (l2, h2) = pad(lo[1], hi[1]);
            (l1, h1, l2, h2)
        }
    };
    let table = interpret::export_decision_grid(
        &model,
        &rot,
        (axes[0], axes[1]),
        None,
        bounds,
        args.grid_resolution,
    )?;
    let mut csv = String::from("a1,a2");
    for c in 0..table.rows[0].outputs.len() {
        write!(csv, ",out_{c}").unwrap();
    }
    csv.push('\n');
    for row in &table.rows {
        write!(csv, "{:.16e},{:.16e}", row.a1, row.a2).unwrap();
        for v in &row.outputs {
            write!(csv, ",{:.16e}", v).unwrap();
        }
        csv.push('\n');
    }
    let p = args.outdir.join("grid.csv");
    std::fs::write(&p, csv)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", p.display())))?;

    write_manifest(
        &args.outdir.join("manifest.txt"),
        &[
            ("command", "interpret".to_string()),
            ("model", args.model.display().to_string()),
            ("data", args.data.display().to_string()),
            ("sigma", format!("{}", args.sigma)),
            ("grid_axes", format!("{},{}", axes[0], axes[1])),
            ("grid_resolution", args.grid_resolution.to_string()),
            (
                "grid_bounds",
                format!("{},{},{},{}", bounds.0, bounds.1, bounds.2, bounds.3),
            ),
        ],
    )?;
    println!(
        "interpretation bundle for {} samples written to {}",
        ds.len(),
        args.outdir.display()
    );
    Ok(())
}
