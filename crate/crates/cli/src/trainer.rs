//! Dataset resolution, the training loop, evaluation, and checkpoint wiring.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use wavemix::data::{
    batches, compute_channel_stats, load_cifar, load_idx, standardize, CifarVariant, Dataset,
};
use wavemix::model::{accuracy, build_model, Model};
use wavemix::nn::softmax_cross_entropy;
use wavemix::optim::Adam;
use wavemix::tensor::Tensor;
use wavemix::DetRng;

use crate::checkpoint::{self, Entry};
use crate::config::RunConfig;
use crate::metrics::{peak_rss_bytes, MetricsRow, MetricsWriter};

pub struct LoadedData {
    pub train: Dataset<f32>,
    pub test: Dataset<f32>,
}

fn find_file(dir: &Path, dataset: &str, name: &str) -> Result<PathBuf> {
    let direct = dir.join(name);
    if direct.exists() {
        return Ok(direct);
    }
    let nested = dir.join(dataset).join(name);
    if nested.exists() {
        return Ok(nested);
    }
    bail!(
        "dataset file `{name}` not found in {} or {}",
        dir.display(),
        dir.join(dataset).display()
    )
}

/// EMNIST split -> raw class count and whether labels start at 1.
fn emnist_split_info(split: &str) -> Result<(usize, bool)> {
    Ok(match split {
        "balanced" => (47, false),
        "byclass" => (62, false),
        "bymerge" => (47, false),
        "digits" | "mnist" => (10, false),
        "letters" => (27, true), // labels 1..=26 in the files
        other => bail!("unknown emnist split `{other}`"),
    })
}

/// Load train and test splits by dataset name, scale to `[0,1]`, then
/// standardize both with the training split's per-channel statistics.
pub fn load_dataset(name: &str, dir: &Path) -> Result<LoadedData> {
    let (mut train, mut test) = match name {
        "cifar10" => {
            let d = if dir.join("data_batch_1.bin").exists() {
                dir.to_path_buf()
            } else {
                dir.join("cifar10")
            };
            (
                load_cifar::<f32>(&d, CifarVariant::C10, true)?,
                load_cifar::<f32>(&d, CifarVariant::C10, false)?,
            )
        }
        "cifar100" => {
            let d = if dir.join("train.bin").exists() {
                dir.to_path_buf()
            } else {
                dir.join("cifar100")
            };
            (
                load_cifar::<f32>(&d, CifarVariant::C100, true)?,
                load_cifar::<f32>(&d, CifarVariant::C100, false)?,
            )
        }
        "mnist" | "fashion-mnist" => {
            let ti = find_file(dir, name, "train-images-idx3-ubyte")?;
            let tl = find_file(dir, name, "train-labels-idx1-ubyte")?;
            let si = find_file(dir, name, "t10k-images-idx3-ubyte")?;
            let sl = find_file(dir, name, "t10k-labels-idx1-ubyte")?;
            (
                load_idx::<f32>(&ti, &tl, name, 10, false)?,
                load_idx::<f32>(&si, &sl, name, 10, false)?,
            )
        }
        emnist if emnist.starts_with("emnist-") => {
            let split = &emnist["emnist-".len()..];
            let (k_raw, one_based) = emnist_split_info(split)?;
            let f = |part: &str, kind: &str, n: usize| {
                find_file(dir, emnist, &format!("emnist-{split}-{part}-{kind}-idx{n}-ubyte"))
            };
            let mut train = load_idx::<f32>(
                &f("train", "images", 3)?,
                &f("train", "labels", 1)?,
                emnist,
                k_raw,
                true,
            )?;
            let mut test = load_idx::<f32>(
                &f("test", "images", 3)?,
                &f("test", "labels", 1)?,
                emnist,
                k_raw,
                true,
            )?;
            if one_based {
                for l in train.labels.iter_mut().chain(test.labels.iter_mut()) {
                    *l -= 1;
                }
                train.num_classes = k_raw - 1;
                test.num_classes = k_raw - 1;
            }
            (train, test)
        }
        other => bail!(
            "unknown dataset `{other}` (expected mnist|fashion-mnist|emnist-<split>|cifar10|cifar100)"
        ),
    };
    let (mean, std) = compute_channel_stats(&train)?;
    standardize(&mut train, &mean, &std);
    standardize(&mut test, &mean, &std);
    Ok(LoadedData { train, test })
}

/// Batched eval over the full split in storage order; returns (top1, top5).
pub fn evaluate(model: &Model<f32>, ds: &Dataset<f32>, batch_size: usize) -> Result<(f64, f64)> {
    let mut c1 = 0usize;
    let mut c5 = 0usize;
    let mut i = 0usize;
    while i < ds.num {
        let end = (i + batch_size).min(ds.num);
        let idx: Vec<usize> = (i..end).collect();
        let (imgs, labels) = ds.gather(&idx);
        let logits = model.forward_eval(&imgs)?;
        let (t1, t5) = accuracy(&logits, &labels);
        c1 += (t1 * labels.len() as f64).round() as usize;
        c5 += (t5 * labels.len() as f64).round() as usize;
        i = end;
    }
    Ok((c1 as f64 / ds.num as f64, c5 as f64 / ds.num as f64))
}

fn state_scalar(name: &str, v: f64) -> Entry<f32> {
    // state scalars ride as rank-0 f32 pairs (hi/lo split where range demands)
    Entry {
        name: name.to_string(),
        data: vec![v as f32],
        shape: vec![],
    }
}

fn word_pos_entries(pos: u128) -> Vec<Entry<f32>> {
    let lo = (pos & 0xff_ffff) as f64;
    let mid = ((pos >> 24) & 0xff_ffff) as f64;
    let hi = (pos >> 48) as f64;
    vec![
        state_scalar("state.rng_pos_lo", lo),
        state_scalar("state.rng_pos_mid", mid),
        state_scalar("state.rng_pos_hi", hi),
    ]
}

fn word_pos_from(loaded: &checkpoint::Loaded<f32>) -> Result<u128> {
    let get = |n: &str| -> Result<u128> {
        Ok(loaded
            .get(n)
            .ok_or_else(|| anyhow!("checkpoint missing {n}"))?
            .data[0] as u128)
    };
    Ok(get("state.rng_pos_lo")? | (get("state.rng_pos_mid")? << 24) | (get("state.rng_pos_hi")? << 48))
}

/// Write a full training checkpoint: parameters, batchnorm buffers,
/// optimizer moments, RNG position and progress counters.
pub fn save_checkpoint(
    path: &Path,
    cfg: &RunConfig,
    model: &Model<f32>,
    opt: &Adam<f32>,
    rng: &DetRng,
    epochs_done: usize,
    best_top1: f64,
) -> Result<()> {
    let mut entries: Vec<Entry<f32>> = Vec::new();
    for (name, t) in model.params() {
        entries.push(Entry {
            name,
            data: t.to_vec(),
            shape: t.shape().to_vec(),
        });
    }
    for (name, t) in model.buffers() {
        entries.push(Entry {
            name: format!("buffer.{name}"),
            data: t.to_vec(),
            shape: t.shape().to_vec(),
        });
    }
    for (name, data, shape) in opt.state_tensors() {
        entries.push(Entry { name, data, shape });
    }
    entries.push(state_scalar("state.step", opt.step_count() as f64));
    entries.push(state_scalar("state.epoch", epochs_done as f64));
    entries.push(state_scalar("state.best_top1", best_top1));
    entries.extend(word_pos_entries(rng.word_pos()));
    checkpoint::save(path, &cfg.to_json(), &entries)
}

/// Restore model/optimizer/RNG state saved by [`save_checkpoint`].
/// Returns (epochs_done, best_top1, rng).
pub fn restore_checkpoint(
    path: &Path,
    cfg: &RunConfig,
    model: &Model<f32>,
    opt: &mut Adam<f32>,
) -> Result<(usize, f64, DetRng)> {
    let loaded = checkpoint::load::<f32>(path)?;
    for (name, t) in model.params() {
        let e = loaded
            .get(&name)
            .ok_or_else(|| anyhow!("checkpoint missing parameter {name}"))?;
        if e.shape != t.shape() {
            bail!(
                "checkpoint parameter {name} has shape {:?}, model expects {:?}",
                e.shape,
                t.shape()
            );
        }
        t.set_data(&e.data);
    }
    for (name, t) in model.buffers() {
        let key = format!("buffer.{name}");
        let e = loaded
            .get(&key)
            .ok_or_else(|| anyhow!("checkpoint missing buffer {key}"))?;
        t.set_data(&e.data);
    }
    let step = loaded
        .get("state.step")
        .ok_or_else(|| anyhow!("checkpoint missing state.step"))?
        .data[0] as u64;
    opt.restore_state(step, |name| loaded.get(name).map(|e| e.data.clone()))
        .map_err(|e| anyhow!("{e}"))?;
    let epochs_done = loaded
        .get("state.epoch")
        .ok_or_else(|| anyhow!("checkpoint missing state.epoch"))?
        .data[0] as usize;
    let best = loaded
        .get("state.best_top1")
        .map(|e| e.data[0] as f64)
        .unwrap_or(0.0);
    let rng = DetRng::restore(cfg.seed, word_pos_from(&loaded)?);
    Ok((epochs_done, best, rng))
}

pub struct TrainOutcome {
    pub rows: Vec<MetricsRow>,
    pub best_top1: f64,
    pub metrics_path: PathBuf,
    pub best_ckpt: PathBuf,
    pub last_ckpt: PathBuf,
}

/// Train per the run configuration; `resume` continues from a checkpoint
/// written by an identical configuration.
pub fn run_training(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let data = load_dataset(&cfg.dataset, &cfg.data_dir)?;
    let train = match cfg.train_subset {
        Some(n) => data.train.subset(n),
        None => data.train,
    };
    let test = data.test;

    let mc = cfg.model_config(train.channels, (train.height, train.width), train.num_classes)?;
    let mut rng = DetRng::new(cfg.seed);
    let model: Model<f32> = build_model(mc, &mut rng).map_err(|e| anyhow!("{e}"))?;
    let mut opt = Adam::new(model.params(), cfg.adam());
    opt.strict = true;

    let mut start_epoch = 0usize;
    let mut best_top1 = f64::NEG_INFINITY;
    if let Some(ckpt) = resume {
        let (done, best, restored_rng) = restore_checkpoint(ckpt, cfg, &model, &mut opt)?;
        start_epoch = done;
        best_top1 = if best > 0.0 { best } else { f64::NEG_INFINITY };
        rng = restored_rng;
    }

    std::fs::write(cfg.out_dir.join("config.json"), cfg.to_json())?;
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let mut writer = MetricsWriter::create(&metrics_path, &cfg.to_json(), cfg.deterministic)?;
    let best_ckpt = cfg.out_dir.join("best.wvmx");
    let last_ckpt = cfg.out_dir.join("last.wvmx");

    if cfg.epochs == 0 || start_epoch >= cfg.epochs {
        let (top1, top5) = evaluate(&model, &test, cfg.batch_size)?;
        writer.append(MetricsRow {
            epoch: start_epoch,
            train_loss: f64::NAN,
            test_top1: top1,
            test_top5: top5,
            images_per_sec: 0.0,
            peak_rss_bytes: peak_rss_bytes(),
        })?;
        save_checkpoint(&last_ckpt, cfg, &model, &opt, &rng, start_epoch, top1)?;
        if !best_ckpt.exists() {
            std::fs::copy(&last_ckpt, &best_ckpt)?;
        }
        return Ok(TrainOutcome {
            rows: writer.rows,
            best_top1: top1,
            metrics_path,
            best_ckpt,
            last_ckpt,
        });
    }

    for epoch in start_epoch..cfg.epochs {
        let t0 = Instant::now();
        let mut loss_sum = 0.0f64;
        let mut images = 0usize;
        for (imgs, labels) in batches(&train, cfg.batch_size, cfg.seed, epoch as u64)
            .map_err(|e| anyhow!("{e}"))?
        {
            opt.zero_grads();
            let logits = model.forward_train(&imgs, &mut rng)?;
            let loss = softmax_cross_entropy(&logits, &labels)?;
            let lv = loss.item() as f64;
            if !lv.is_finite() {
                bail!(
                    "aborting: non-finite training loss {lv} at epoch {} after {} images; \
                     lower the learning rate or check the input data",
                    epoch + 1,
                    images
                );
            }
            loss_sum += lv * labels.len() as f64;
            loss.backward()?;
            opt.step()?;
            images += labels.len();
        }
        let train_secs = t0.elapsed().as_secs_f64();
        let (top1, top5) = evaluate(&model, &test, cfg.batch_size)?;
        let row = MetricsRow {
            epoch: epoch + 1,
            train_loss: loss_sum / images as f64,
            test_top1: top1,
            test_top5: top5,
            images_per_sec: images as f64 / train_secs,
            peak_rss_bytes: peak_rss_bytes(),
        };
        eprintln!(
            "epoch {:>3}  loss {:.4}  top1 {:.4}  top5 {:.4}  {:.1} img/s",
            row.epoch, row.train_loss, row.test_top1, row.test_top5, row.images_per_sec
        );
        writer.append(row)?;
        save_checkpoint(&last_ckpt, cfg, &model, &opt, &rng, epoch + 1, best_top1.max(top1))?;
        if top1 > best_top1 {
            best_top1 = top1;
            std::fs::copy(&last_ckpt, &best_ckpt)?;
        }
    }

    Ok(TrainOutcome {
        rows: writer.rows,
        best_top1,
        metrics_path,
        best_ckpt,
        last_ckpt,
    })
}

pub struct EvalSummary {
    pub dataset: String,
    pub top1: f64,
    pub top5: f64,
    pub num_test: usize,
}

impl EvalSummary {
    pub fn to_json(&self) -> String {
        format!(
            r#"{{"dataset":"{}","top1":{},"top5":{},"num_test":{}}}"#,
            self.dataset, self.top1, self.top5, self.num_test
        )
    }
}

/// Rebuild the model recorded in a checkpoint and score it on the test split.
pub fn evaluate_checkpoint(
    ckpt_path: &Path,
    dataset_override: Option<&str>,
    data_dir_override: Option<&Path>,
) -> Result<EvalSummary> {
    let loaded = checkpoint::load::<f32>(ckpt_path)?;
    let mut cfg: RunConfig = serde_json::from_str(&loaded.config_json)
        .context("checkpoint config does not parse as a run configuration")?;
    if let Some(d) = dataset_override {
        cfg.dataset = d.to_string();
    }
    if let Some(d) = data_dir_override {
        cfg.data_dir = d.to_path_buf();
    }
    let data = load_dataset(&cfg.dataset, &cfg.data_dir)?;
    let test = data.test;
    let mc = cfg.model_config(test.channels, (test.height, test.width), test.num_classes)?;
    let mut rng = DetRng::new(cfg.seed);
    let model: Model<f32> = build_model(mc, &mut rng).map_err(|e| anyhow!("{e}"))?;
    for (name, t) in model.params() {
        let e = loaded
            .get(&name)
            .ok_or_else(|| anyhow!("checkpoint missing parameter {name}"))?;
        if e.shape != t.shape() {
            bail!(
                "checkpoint/model mismatch for {name}: {:?} vs {:?} \
                 (was the checkpoint trained on a different dataset geometry?)",
                e.shape,
                t.shape()
            );
        }
        t.set_data(&e.data);
    }
    for (name, t) in model.buffers() {
        if let Some(e) = loaded.get(&format!("buffer.{name}")) {
            t.set_data(&e.data);
        }
    }
    let (top1, top5) = evaluate(&model, &test, cfg.batch_size)?;
    Ok(EvalSummary {
        dataset: cfg.dataset,
        top1,
        top5,
        num_test: test.num,
    })
}

/// Synthetic normal images for benchmarking and smoke paths.
pub fn synthetic_batch(
    bsz: usize,
    channels: usize,
    size: usize,
    num_classes: usize,
    rng: &mut DetRng,
) -> (Tensor<f32>, Vec<usize>) {
    let n = bsz * channels * size * size;
    let images = Tensor::from_vec(
        (0..n).map(|_| rng.normal::<f32>()).collect(),
        &[bsz, channels, size, size],
    )
    .expect("synthetic shape");
    let labels = (0..bsz).map(|_| rng.gen_range_usize(num_classes)).collect();
    (images, labels)
}
