//! Throughput measurement on synthetic data: one warm-up batch, then a timed
//! loop of at least `min_secs`, reporting images per second and peak RSS.

use anyhow::{anyhow, Result};
use std::time::Instant;
use wavemix::model::{build_model, Model};
use wavemix::nn::softmax_cross_entropy;
use wavemix::optim::Adam;
use wavemix::DetRng;

use crate::config::RunConfig;
use crate::metrics::peak_rss_bytes;
use crate::trainer::synthetic_batch;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    Train,
    Infer,
}

impl BenchMode {
    pub fn name(&self) -> &'static str {
        match self {
            BenchMode::Train => "train",
            BenchMode::Infer => "infer",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchCell {
    pub image_size: usize,
    pub mode: BenchMode,
    pub images_per_sec: f64,
    pub batches: usize,
}

/// Measure one (image size, mode) cell for the configured model.
pub fn bench_cell(cfg: &RunConfig, image_size: usize, mode: BenchMode, min_secs: f64) -> Result<BenchCell> {
    let channels = 3usize;
    let classes = 10usize;
    let mc = cfg.model_config(channels, (image_size, image_size), classes)?;
    let mut rng = DetRng::new(cfg.seed);
    let model: Model<f32> = build_model(mc, &mut rng).map_err(|e| anyhow!("{e}"))?;
    let mut opt = Adam::new(model.params(), cfg.adam());
    let (images, labels) = synthetic_batch(cfg.batch_size, channels, image_size, classes, &mut rng);

    let mut run_once = |rng: &mut DetRng| -> Result<()> {
        match mode {
            BenchMode::Train => {
                opt.zero_grads();
                let logits = model.forward_train(&images, rng)?;
                let loss = softmax_cross_entropy(&logits, &labels)?;
                loss.backward()?;
                opt.step()?;
            }
            BenchMode::Infer => {
                let _ = model.forward_eval(&images)?;
            }
        }
        Ok(())
    };

    run_once(&mut rng)?; // warm-up
    let t0 = Instant::now();
    let mut batches = 0usize;
    loop {
        run_once(&mut rng)?;
        batches += 1;
        if t0.elapsed().as_secs_f64() >= min_secs {
            break;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    Ok(BenchCell {
        image_size,
        mode,
        images_per_sec: (batches * cfg.batch_size) as f64 / secs,
        batches,
    })
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub model: String,
    pub dim: usize,
    pub depth: usize,
    pub cells: Vec<BenchCell>,
    pub peak_rss_bytes: u64,
}

impl BenchReport {
    pub fn csv_header() -> &'static str {
        "model,dim,depth,train_32,infer_32,train_64,infer_64,peak_rss_bytes"
    }

    pub fn cell(&self, image_size: usize, mode: BenchMode) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.image_size == image_size && c.mode == mode)
            .map(|c| c.images_per_sec)
    }

    pub fn to_csv_row(&self) -> String {
        let get = |s, m| {
            self.cell(s, m)
                .map(|v| format!("{v:.1}"))
                .unwrap_or_default()
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model,
            self.dim,
            self.depth,
            get(32, BenchMode::Train),
            get(32, BenchMode::Infer),
            get(64, BenchMode::Train),
            get(64, BenchMode::Infer),
            self.peak_rss_bytes
        )
    }
}

/// Measure the configured model across image sizes and modes.
pub fn run_bench(cfg: &RunConfig, sizes: &[usize], modes: &[BenchMode], min_secs: f64) -> Result<BenchReport> {
    let mut cells = Vec::new();
    for &s in sizes {
        for &m in modes {
            let cell = bench_cell(cfg, s, m, min_secs)?;
            eprintln!(
                "bench {} dim {} size {}x{} {}: {:.1} images/s ({} batches)",
                cfg.model, cfg.dim, s, s, m.name(), cell.images_per_sec, cell.batches
            );
            cells.push(cell);
        }
    }
    Ok(BenchReport {
        model: cfg.model.clone(),
        dim: cfg.dim,
        depth: cfg.depth,
        cells,
        peak_rss_bytes: peak_rss_bytes(),
    })
}
