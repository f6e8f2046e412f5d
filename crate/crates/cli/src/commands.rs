//! The `train`, `eval` and `ablate` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mmfuse::encoders::tabular::Standardizer;
use mmfuse::io::Bundle;
use mmfuse::model::Model;
use mmfuse::training::{compute_metrics, predict, synth_generate, train, Dataset, MetricsReport, Predictions};
use mmfuse::ParamStore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{load_grid, RunConfig};
use crate::dataset;
use crate::report::{self, epochs_csv, predictions_csv, write_json, EpochJson, EvalReport, MetricsJson, METRIC_COLUMNS};
use crate::CliError;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.mmck";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.mmck";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizerJson {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Metadata stored inside every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u64,
    pub kind: String,
    pub epoch: usize,
    pub config: RunConfig,
    pub standardizer: StandardizerJson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalReports {
    pub last: EvalReport,
    pub best: EvalReport,
}

/// Everything needed to reproduce and audit a run. Wall-clock time lives
/// in `timing.json` so that the manifest itself is a pure function of
/// (config, seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u64,
    pub config: RunConfig,
    pub seed: u64,
    pub config_hash: String,
    pub dataset: String,
    pub dataset_hash: String,
    pub parameters: usize,
    pub best_epoch: usize,
    pub epochs: Vec<EpochJson>,
    #[serde(rename = "final")]
    pub final_: FinalReports,
}

/// A prepared cohort shared by one or more runs.
pub struct PreparedData {
    pub data: Dataset,
    pub manifest: PathBuf,
    pub hash: String,
}

/// Generates the synthetic cohort for `cfg` and writes it under `dir`.
pub fn prepare_data(cfg: &RunConfig, dir: &Path) -> Result<PreparedData, CliError> {
    let data = synth_generate(&cfg.synth_config())?;
    let (manifest, hash) = dataset::export(&data, dir)?;
    Ok(PreparedData { data, manifest, hash })
}

/// `path` relative to `base`, walking up with `..` where needed. Falls back
/// to `path` itself when the two share no prefix.
fn relative(path: &Path, base: &Path) -> String {
    let p: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path.to_string_lossy().replace('\\', "/");
    }
    let mut parts: Vec<String> = vec!["..".into(); b.len() - common];
    parts.extend(p[common..].iter().map(|c| c.as_os_str().to_string_lossy().into_owned()));
    parts.join("/")
}

fn save_checkpoint(
    path: &Path,
    store: &ParamStore<f64>,
    kind: &str,
    epoch: usize,
    cfg: &RunConfig,
    stats: &Standardizer,
) -> Result<(), CliError> {
    let meta = CheckpointMeta {
        version: 1,
        kind: kind.into(),
        epoch,
        config: cfg.clone(),
        standardizer: StandardizerJson { mean: stats.mean.clone(), std: stats.std.clone() },
    };
    let meta = serde_json::to_string(&meta).map_err(|e| CliError::Failed(e.to_string()))?;
    store.to_bundle(meta).save(path)?;
    Ok(())
}

fn eval_report(checkpoint: &str, epoch: usize, threshold: f64, m: &MetricsReport) -> EvalReport {
    EvalReport { checkpoint: checkpoint.into(), epoch, split: "test".into(), threshold, metrics: m.into() }
}

/// Trains one model on `prepared` and writes all run artifacts to `out`.
pub fn train_run(cfg: &RunConfig, prepared: &PreparedData, out: &Path) -> Result<RunManifest, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let mut store = ParamStore::<f64>::new();
    let model = Model::init(&mut store, cfg.model_config(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let parameters = store.num_scalars();
    let tc = cfg.train_config();
    let outcome = train(&model, store, &prepared.data, &tc, |r| {
        eprintln!(
            "epoch {}/{} loss {:.5} val_auroc {}",
            r.epoch,
            tc.epochs,
            r.train_loss,
            r.val.auroc.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    })?;

    let last_epoch = outcome.epochs.len();
    let last_m = outcome.last_test.metrics(tc.threshold)?;
    let best_m = outcome.best_test.metrics(tc.threshold)?;
    save_checkpoint(&out.join(LAST_CHECKPOINT), &outcome.last, "last", last_epoch, cfg, &outcome.standardizer)?;
    save_checkpoint(&out.join(BEST_CHECKPOINT), &outcome.best, "best", outcome.best_epoch, cfg, &outcome.standardizer)?;
    std::fs::write(out.join("epochs.csv"), epochs_csv(&outcome.epochs))?;
    std::fs::write(out.join("predictions_last.csv"), predictions_csv(&outcome.last_test))?;
    std::fs::write(out.join("predictions_best.csv"), predictions_csv(&outcome.best_test))?;

    let final_ = FinalReports {
        last: eval_report(LAST_CHECKPOINT, last_epoch, tc.threshold, &last_m),
        best: eval_report(BEST_CHECKPOINT, outcome.best_epoch, tc.threshold, &best_m),
    };
    write_json(&out.join("metrics.json"), &final_)?;
    let manifest = RunManifest {
        version: 1,
        config: cfg.clone(),
        seed: cfg.seed,
        config_hash: cfg.content_hash(),
        dataset: relative(&prepared.manifest, out),
        dataset_hash: prepared.hash.clone(),
        parameters,
        best_epoch: outcome.best_epoch,
        epochs: outcome.epochs.iter().map(EpochJson::from).collect(),
        final_,
    };
    write_json(&out.join(MANIFEST_NAME), &manifest)?;
    write_json(&out.join("timing.json"), &serde_json::json!({ "wall_clock_seconds": start.elapsed().as_secs_f64() }))?;
    Ok(manifest)
}

/// `train`: generate the cohort under `out/data`, then train.
pub fn cmd_train(config: &Path, seed: Option<u64>, out: &Path) -> Result<RunManifest, CliError> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let prepared = prepare_data(&cfg, &out.join("data"))?;
    train_run(&cfg, &prepared, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Loads a checkpoint into a freshly built model.
pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamStore<f64>, CheckpointMeta), CliError> {
    let bundle = Bundle::<f64>::load(path).map_err(|e| CliError::Failed(format!("checkpoint {}: {e}", path.display())))?;
    let meta: CheckpointMeta =
        serde_json::from_str(&bundle.meta).map_err(|e| CliError::Failed(format!("checkpoint {} metadata: {e}", path.display())))?;
    meta.config.validate()?;
    let mut store = ParamStore::new();
    let model = Model::init(&mut store, meta.config.model_config(), &mut ChaCha8Rng::seed_from_u64(meta.config.seed))?;
    store.load_bundle(&bundle)?;
    Ok((model, store, meta))
}

/// `eval`: scores one split of a stored cohort with a checkpoint and writes
/// `metrics.json` and `predictions.csv` to `out`.
pub fn cmd_eval(ckpt: &Path, data: &Path, split: Split, out: &Path) -> Result<EvalReport, CliError> {
    let (model, store, meta) = load_checkpoint(ckpt)?;
    let (data, _) = dataset::load(data)?;
    if data.geometry != meta.config.geometry {
        return Err(CliError::Config(format!(
            "checkpoint geometry {:?} does not match dataset geometry {:?}",
            meta.config.geometry, data.geometry
        )));
    }
    let stats = Standardizer { mean: meta.standardizer.mean.clone(), std: meta.standardizer.std.clone() };
    let idx = match split {
        Split::Train => &data.splits.train,
        Split::Val => &data.splits.val,
        Split::Test => &data.splits.test,
    };
    let preds = predict(&model, &store, &data, idx, &stats, &meta.config.train_config().augment)?;
    let threshold = meta.config.threshold;
    let m = compute_metrics(&preds.scores, &preds.labels, threshold)?;
    let name = ckpt.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let report = EvalReport { checkpoint: name, epoch: meta.epoch, split: split.name().into(), threshold, metrics: (&m).into() };
    std::fs::create_dir_all(out)?;
    write_json(&out.join("metrics.json"), &report)?;
    std::fs::write(out.join("predictions.csv"), predictions_csv(&preds))?;
    Ok(report)
}

/// Recomputes a metrics report from a predictions CSV.
pub fn metrics_from_predictions(csv: &str, threshold: f64) -> Result<MetricsJson, CliError> {
    let p: Predictions = report::parse_predictions(csv)?;
    Ok((&compute_metrics(&p.scores, &p.labels, threshold)?).into())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    pub manifest: RunManifest,
}

pub const ABLATION_HEADER: [&str; 6] = ["cell", "fusion_mode", "use_e3d_msca", "dropout", "epochs", "dataset_hash"];

/// `ablate`: trains every grid cell on one shared cohort and writes
/// `ablation.csv` (last-epoch test metrics, one row per cell) plus each
/// cell's run directory under `cells/`.
pub fn cmd_ablate(grid: &Path, out: &Path) -> Result<Vec<AblationRow>, CliError> {
    let text = std::fs::read_to_string(grid).map_err(|e| CliError::Config(format!("cannot read grid {}: {e}", grid.display())))?;
    let cells = load_grid(&text)?;
    let prepared = prepare_data(&cells[0].config, &out.join("data"))?;
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        eprintln!("cell {} ({})", cell.name, cell.config.fusion_mode);
        let manifest = train_run(&cell.config, &prepared, &out.join("cells").join(&cell.name))?;
        rows.push(AblationRow { cell: cell.name.clone(), manifest });
    }
    let mut csv = ABLATION_HEADER.join(",");
    for c in METRIC_COLUMNS {
        let _ = write!(csv, ",{c}");
    }
    csv.push('\n');
    for r in &rows {
        let c = &r.manifest.config;
        let m = &r.manifest.final_.last.metrics;
        let cells: Vec<String> = [m.auroc, m.acc, m.f1, m.specificity, m.sensitivity, m.ppv, m.npv]
            .iter()
            .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
            .collect();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.cell,
            c.fusion_mode,
            c.use_e3d_msca,
            c.dropout,
            c.epochs,
            r.manifest.dataset_hash,
            cells.join(",")
        );
    }
    std::fs::write(out.join("ablation.csv"), csv)?;
    Ok(rows)
}
