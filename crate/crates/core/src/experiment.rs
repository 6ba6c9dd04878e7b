//! Experiment orchestration: training runs, evaluation, prediction export,
//! directory enhancement and the ablation ladder.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use apgnet_autograd::{param_count, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::{build_trainer, Checkpoint};
use crate::config::{AblationId, ExperimentConfig};
use crate::dataset::{index_dataset, load_pair, Batch, EnhanceCache, Layout, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::loss::LossReport;
use crate::metrics::{evaluate_dataset, score_pair, MetricReport};
use crate::msrcr::{msrcr, MsrcrConfig};
use crate::raster::{load_rgb, resize_bilinear, save_gray_png, save_rgb_png, GrayMap, RgbImage};
use crate::train::Trainer;

pub const CHECKPOINT_FILE: &str = "checkpoint.apgck";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";

fn layout(config: &ExperimentConfig) -> Layout {
    Layout::PairedDirs {
        image_dir: config.data.image_dir.clone(),
        mask_dir: config.data.mask_dir.clone(),
    }
}

fn data_root(config: &ExperimentConfig) -> Result<&Path> {
    config
        .data
        .root
        .as_deref()
        .ok_or_else(|| Error::Config("data.root is not set".into()))
}

/// Records of `split`; without a split, the test records when the dataset
/// has any, otherwise every record.
pub fn select_records(records: Vec<SampleRecord>, split: Option<Split>) -> Result<Vec<SampleRecord>> {
    let want = split.or_else(|| records.iter().any(|r| r.split == Split::Test).then_some(Split::Test));
    let out: Vec<_> = match want {
        Some(s) => records.into_iter().filter(|r| r.split == s).collect(),
        None => records,
    };
    if out.is_empty() {
        return Err(Error::Dataset(format!("no records in split {:?}", want.unwrap_or(Split::Train))));
    }
    Ok(out)
}

/// Training samples, held in memory for small datasets.
struct SampleSource<'a> {
    records: Vec<SampleRecord>,
    preloaded: Option<Vec<(RgbImage, RgbImage, GrayMap)>>,
    config: &'a ExperimentConfig,
    cache: Option<EnhanceCache>,
}

impl<'a> SampleSource<'a> {
    fn new(records: Vec<SampleRecord>, config: &'a ExperimentConfig) -> Result<Self> {
        let cache = config.data.cache_dir.as_ref().map(EnhanceCache::new).transpose()?;
        let mut source = Self {
            records,
            preloaded: None,
            config,
            cache,
        };
        if source.records.len() <= config.data.preload_max {
            let all = (0..source.records.len()).map(|i| source.load(i)).collect::<Result<Vec<_>>>()?;
            source.preloaded = Some(all);
        }
        Ok(source)
    }

    fn load(&self, i: usize) -> Result<(RgbImage, RgbImage, GrayMap)> {
        load_pair(&self.records[i], &self.config.msrcr, self.config.data.size, self.cache.as_ref())
    }

    fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let samples = match &self.preloaded {
            Some(all) => indices.iter().map(|&i| all[i].clone()).collect(),
            None => indices.iter().map(|&i| self.load(i)).collect::<Result<Vec<_>>>()?,
        };
        Batch::from_samples(&samples)
    }
}

/// Sigmoid of the final map for one image, resized back to the image's own
/// resolution.
pub fn predict_probability(trainer: &Trainer<f32>, image: &RgbImage, size: usize) -> Result<GrayMap> {
    let resized = image.resize_bilinear(size, size);
    let input = Tensor::constant([1, 3, size, size], resized.to_chw_f32());
    let prob = trainer.predict(&input)?;
    let map = GrayMap::new(size, size, prob.data().iter().map(|&v| f64::from(v)).collect())?;
    Ok(resize_bilinear(&map, image.height(), image.width()))
}

fn score_in_memory(trainer: &Trainer<f32>, source: &SampleSource, config: &ExperimentConfig) -> Result<MetricReport> {
    let mut scores = Vec::with_capacity(source.records.len());
    for i in 0..source.records.len() {
        let (image, _, mask) = match &source.preloaded {
            Some(all) => all[i].clone(),
            None => source.load(i)?,
        };
        let prob = predict_probability(trainer, &image, config.data.size)?;
        scores.push(score_pair(&prob, &mask, &config.metric)?);
    }
    MetricReport::from_scores(&scores)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub steps: usize,
    pub epochs: usize,
    pub params: usize,
    pub final_loss: LossReport,
    /// Training-set metrics after the last epoch, when scoring is enabled.
    pub train_report: Option<MetricReport>,
}

struct JsonLog(BufWriter<File>, PathBuf);

impl JsonLog {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self(BufWriter::new(f), path))
    }

    fn write(&mut self, value: serde_json::Value) -> Result<()> {
        writeln!(self.0, "{value}")
            .and_then(|_| self.0.flush())
            .map_err(|e| Error::io(&self.1, e))
    }
}

/// Trains on the training split of `data.root` and writes the checkpoint,
/// the JSON-lines log and the config snapshot to `out_dir`.
pub fn train(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome> {
    config.validate()?;
    let root = data_root(config)?;
    let records = select_records(index_dataset(root, &layout(config))?, Some(Split::Train))?;
    train_on(config, records, out_dir)
}

pub fn train_on(config: &ExperimentConfig, records: Vec<SampleRecord>, out_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let config_path = out_dir.join(CONFIG_FILE);
    fs::write(&config_path, config.to_toml_string()).map_err(|e| Error::io(&config_path, e))?;
    let deterministic = config.deterministic();
    log::info!(
        "training {} on {} images, {} epochs, batch {}, deterministic {deterministic}",
        config.ablation_id,
        records.len(),
        config.train.epochs,
        config.train.batch_size
    );

    let source = SampleSource::new(records, config)?;
    let mut trainer = build_trainer(config)?;
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log = JsonLog::create(out_dir.join(LOG_FILE))?;
    log.write(json!({
        "kind": "start",
        "ablation_id": config.ablation_id,
        "seed": config.seed,
        "deterministic": deterministic,
        "params": trainer.param_count(),
        "images": source.records.len(),
    }))?;

    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    let mut order: Vec<usize> = (0..source.records.len()).collect();
    let mut last: Option<LossReport> = None;
    let mut train_report = None;
    let mut epochs_done = 0;
    let max_steps = config.train.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 1..=config.train.epochs {
        if config.train.shuffle {
            order.shuffle(&mut order_rng);
        }
        let (mut sum_total, mut n) = (0.0, 0usize);
        for chunk in order.chunks(config.train.batch_size) {
            if trainer.step_count() >= max_steps {
                break 'epochs;
            }
            let report = trainer.step(&source.batch(chunk)?)?;
            log.write(json!({
                "kind": "step",
                "epoch": epoch,
                "step": trainer.step_count(),
                "l_seg": report.l_seg,
                "l_align": report.l_align,
                "l_total": report.l_total,
            }))?;
            sum_total += report.l_total;
            n += 1;
            last = Some(report);
        }
        epochs_done = epoch;
        let mut record = json!({"kind": "epoch", "epoch": epoch, "step": trainer.step_count(), "mean_l_total": sum_total / n.max(1) as f64});
        let every = config.train.eval_every;
        if every > 0 && (epoch % every == 0 || epoch == config.train.epochs) {
            let report = score_in_memory(&trainer, &source, config)?;
            record["train_metrics"] = serde_json::to_value(report).expect("report serializes");
            log::info!("epoch {epoch}: loss {:.4}, train mIoU {:.4}", sum_total / n.max(1) as f64, report.miou);
            train_report = Some(report);
        }
        log.write(record)?;
        let every = config.train.checkpoint_every;
        if every > 0 && epoch % every == 0 {
            let ck = Checkpoint { config: config.clone(), epoch, trainer: trainer.clone() };
            ck.save(&out_dir.join(format!("checkpoint_epoch{epoch:04}.apgck")))?;
        }
    }
    let final_loss = last.ok_or_else(|| Error::Config("training ran zero steps".into()))?;
    if config.train.eval_every > 0 && epochs_done != config.train.epochs {
        train_report = Some(score_in_memory(&trainer, &source, config)?);
    }
    let steps = trainer.step_count();
    let params = trainer.param_count();
    log.write(json!({"kind": "end", "step": steps, "epoch": epochs_done, "l_total": final_loss.l_total}))?;
    Checkpoint { config: config.clone(), epoch: epochs_done, trainer }.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint: checkpoint_path,
        log: log.1,
        steps,
        epochs: epochs_done,
        params,
        final_loss,
        train_report,
    })
}

/// Single-branch inference on the original images of `split`, saving
/// 8-bit probability maps under `out_dir/predictions` and scoring them.
pub fn evaluate(checkpoint: &Path, data_root: &Path, out_dir: &Path, split: Option<Split>) -> Result<MetricReport> {
    let ck = Checkpoint::load(checkpoint)?;
    let records = select_records(index_dataset(data_root, &layout(&ck.config))?, split)?;
    let pred_dir = out_dir.join("predictions");
    fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for r in &records {
        let image = load_rgb(&r.image_path)?;
        let prob = predict_probability(&ck.trainer, &image, ck.config.data.size)?;
        save_gray_png(&prob, &pred_dir.join(format!("{}.png", r.stem())))?;
    }
    let gt_dir = records[0]
        .mask_path
        .parent()
        .expect("mask paths have a parent")
        .to_path_buf();
    let report = evaluate_dataset(&pred_dir, &gt_dir, &ck.config.metric)?;
    report.write_json(&out_dir.join("report.json"))?;
    Ok(report)
}

/// `<stem>_mask.<ext>` next to `out`.
pub fn mask_path_for(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_mask.png"))
}

/// Writes the probability map to `out` and its 0.5-binarized mask next to
/// it, both at the image's own resolution. Returns the mask path.
pub fn predict(checkpoint: &Path, image_path: &Path, out: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let image = load_rgb(image_path)?;
    let prob = predict_probability(&ck.trainer, &image, ck.config.data.size)?;
    save_gray_png(&prob, out)?;
    let mask = prob.map(|v| if v >= 0.5 { 1.0 } else { 0.0 });
    let mask_path = mask_path_for(out);
    save_gray_png(&mask, &mask_path)?;
    Ok(mask_path)
}

/// Enhances every image in `input` into an 8-bit PNG of the same name in
/// `output`. Returns the number of images written.
pub fn enhance_dir(input: &Path, output: &Path, config: &MsrcrConfig) -> Result<usize> {
    config.validate()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| ["png", "jpg", "jpeg"].contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    paths.sort();
    for p in &paths {
        let enhanced = msrcr(&load_rgb(p)?, config)?;
        let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned() + ".png";
        save_rgb_png(&enhanced, &output.join(name))?;
    }
    Ok(paths.len())
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub id: AblationId,
    pub description: &'static str,
    pub params: usize,
    pub steps: usize,
    pub final_loss: f64,
    pub report: MetricReport,
}

/// Trains and evaluates every rung of `ladder` under one seed. Each rung
/// writes to `out_dir/<id>`; the table goes to `ablation.csv` and
/// `ablation.md`.
pub fn ablate(config: &ExperimentConfig, ladder: &[AblationId], out_dir: &Path) -> Result<Vec<AblationRow>> {
    if ladder.is_empty() {
        return Err(Error::Config("empty ablation ladder".into()));
    }
    let root = data_root(config)?.to_path_buf();
    let mut rows = Vec::with_capacity(ladder.len());
    for &id in ladder {
        let mut cfg = config.clone();
        cfg.ablation_id = id;
        let dir = out_dir.join(id.to_string());
        let outcome = train(&cfg, &dir)?;
        let report = evaluate(&outcome.checkpoint, &root, &dir.join("eval"), None)?;
        log::info!("{id}: mIoU {:.4}, params {}", report.miou, outcome.params);
        rows.push(AblationRow {
            id,
            description: id.description(),
            params: outcome.params,
            steps: outcome.steps,
            final_loss: outcome.final_loss.l_total,
            report,
        });
    }
    write_ablation_table(&rows, out_dir)?;
    Ok(rows)
}

pub const ABLATION_COLUMNS: [&str; 9] = [
    "id", "variant", "params", "miou", "s_alpha", "f_beta_w", "e_phi", "mae", "n_images",
];

fn row_cells(r: &AblationRow) -> Vec<String> {
    let m = &r.report;
    vec![
        r.id.to_string(),
        r.description.to_string(),
        r.params.to_string(),
        format!("{:.4}", m.miou),
        format!("{:.4}", m.s_alpha),
        format!("{:.4}", m.f_beta_w),
        format!("{:.4}", m.e_phi),
        format!("{:.4}", m.mae),
        m.n_images.to_string(),
    ]
}

pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = format!("| {} |\n", ABLATION_COLUMNS.join(" | "));
    s += &format!("|{}\n", "---|".repeat(ABLATION_COLUMNS.len()));
    for r in rows {
        s += &format!("| {} |\n", row_cells(r).join(" | "));
    }
    s
}

pub fn write_ablation_table(rows: &[AblationRow], out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv_path = out_dir.join("ablation.csv");
    let io = |e: csv::Error| Error::io(&csv_path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
    w.write_record(ABLATION_COLUMNS).map_err(io)?;
    for r in rows {
        w.write_record(row_cells(r)).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let md = out_dir.join("ablation.md");
    fs::write(&md, ablation_markdown(rows)).map_err(|e| Error::io(&md, e))
}

/// Parameter count of a freshly built model for `id`.
pub fn params_for(config: &ExperimentConfig, id: AblationId) -> Result<usize> {
    let model = crate::model::ApgNet::<f32>::new(&config.model, id.architecture(), config.seed)?;
    Ok(param_count(&model))
}
