//! End-to-end orchestration: synthesize, split, train, bridge-train,
//! generate, fuse, evaluate; plus the hyperparameter sweep.
//!
//! The report mirrors a 2x2 ablation: representation learning
//! (denoise + alignment loss) on/off crossed with generation + fusion
//! on/off, each cell scored under all three protocols.

use std::path::Path;

use serde::Serialize;

use crate::bridge::{
    build_latent_pairs, make_schedule, train_bridge, BridgeSchedule, BridgeSettings,
    NoisePredictorParams,
};
use crate::config::PipelineConfig;
use crate::data::{
    generate_synthetic, save_manifest, Dataset, DatasetManifest, LabeledImage, ManifestEntry,
    Modality, SynthSpec,
};
use crate::denoise::{denoise_image, DenoiseConfig};
use crate::embed::{train, EmbedderParams, EpochStats, LossWeights, TrainSettings};
use crate::error::{Error, Result};
use crate::retrieval::{
    embed_records, evaluate, fuse_inputs, fusion_inputs, write_embeddings, EmbeddingRecord,
    FusionInput, FusionSettings, Metric, Metrics, Protocol,
};
use crate::seed::stage_seed;

/// The synthetic benchmark, split per identity and modality into
/// train / query / gallery image sets.
pub struct Benchmark {
    pub train: Dataset,
    pub query: Vec<LabeledImage>,
    pub gallery: Vec<LabeledImage>,
    pub manifest: DatasetManifest,
    pub images: Vec<LabeledImage>,
    pub train_entries: Vec<ManifestEntry>,
    pub query_entries: Vec<ManifestEntry>,
    pub gallery_entries: Vec<ManifestEntry>,
}

/// Generate and split the benchmark. Within each identity-modality
/// block (generation order), the first images train, the next
/// `query_per_id` query, and the last `gallery_per_id` fill the gallery.
pub fn synthesize_benchmark(cfg: &PipelineConfig) -> Result<Benchmark> {
    let spec = SynthSpec {
        num_identities: cfg.num_ids,
        images_per_identity_per_modality: cfg.imgs_per_id,
        side: cfg.side,
        seed: stage_seed(cfg.seed, "synth"),
    };
    let (manifest, images) = generate_synthetic(&spec)?;
    let train_per = cfg.imgs_per_id - cfg.query_per_id - cfg.gallery_per_id;

    let mut train_images = Vec::new();
    let mut query = Vec::new();
    let mut gallery = Vec::new();
    let mut train_entries = Vec::new();
    let mut query_entries = Vec::new();
    let mut gallery_entries = Vec::new();
    for (block, (entry, image)) in manifest.entries.iter().zip(&images).enumerate() {
        let within = block % cfg.imgs_per_id;
        if within < train_per {
            train_images.push(image.clone());
            train_entries.push(entry.clone());
        } else if within < train_per + cfg.query_per_id {
            query.push(image.clone());
            query_entries.push(entry.clone());
        } else {
            gallery.push(image.clone());
            gallery_entries.push(entry.clone());
        }
    }
    Ok(Benchmark {
        train: Dataset::from_images(train_images)?,
        query,
        gallery,
        manifest,
        images,
        train_entries,
        query_entries,
        gallery_entries,
    })
}

fn denoise_images(images: &[LabeledImage], cfg: &DenoiseConfig) -> Result<Vec<LabeledImage>> {
    images
        .iter()
        .map(|img| match img.modality() {
            Modality::Sar => denoise_image(img, cfg),
            Modality::Optical => Ok(img.clone()),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolMetricsReport {
    pub all_to_all: Metrics,
    pub optical_to_sar: Metrics,
    pub sar_to_optical: Metrics,
}

impl ProtocolMetricsReport {
    pub fn get(&self, protocol: Protocol) -> &Metrics {
        match protocol {
            Protocol::AllToAll => &self.all_to_all,
            Protocol::OpticalToSar => &self.optical_to_sar,
            Protocol::SarToOptical => &self.sar_to_optical,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellReport {
    pub name: String,
    pub mcrl: bool,
    pub cdgf: bool,
    pub protocols: ProtocolMetricsReport,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModelSummary {
    pub epochs: usize,
    pub final_total_loss: f64,
    pub final_centroid_gap: f64,
}

fn summarize(history: &[EpochStats]) -> ModelSummary {
    let last = history.last().expect("training ran at least one epoch");
    ModelSummary {
        epochs: history.len(),
        final_total_loss: last.total,
        final_centroid_gap: last.centroid_gap,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub metric: String,
    pub models: ModelSummaries,
    pub cells: Vec<CellReport>,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ModelSummaries {
    pub mcrl: ModelSummary,
    pub plain: ModelSummary,
}

impl PipelineReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn cell(&self, name: &str) -> &CellReport {
        self.cells
            .iter()
            .find(|c| c.name == name)
            .expect("known cell name")
    }
}

fn train_settings(cfg: &PipelineConfig, mcrl: bool, stage: &str) -> TrainSettings {
    TrainSettings {
        epochs: cfg.epochs,
        learning_rate: cfg.lr,
        batch_size: cfg.batch_size,
        instances_per_identity: cfg.instances_per_id,
        hidden1: cfg.hidden1,
        hidden2: cfg.hidden2,
        embed_dim: cfg.embed_dim,
        weights: LossWeights {
            lambda_id: cfg.lambda_id,
            lambda_tri: cfg.lambda_tri,
            lambda_cmal: if mcrl { cfg.lambda_cmal } else { 0.0 },
            triplet_margin: cfg.triplet_margin,
        },
        denoise: mcrl.then(|| DenoiseConfig {
            alpha: cfg.alpha,
            epsilon: cfg.epsilon,
        }),
        flip_horizontal: cfg.flip_horizontal,
        flip_vertical: cfg.flip_vertical,
        seed: stage_seed(cfg.seed, stage),
    }
}

fn bridge_settings(cfg: &PipelineConfig, stage: &str) -> BridgeSettings {
    BridgeSettings {
        t_max: cfg.bridge_t,
        hidden: cfg.bridge_hidden,
        time_embed_dim: cfg.time_embed_dim,
        epochs: cfg.bridge_epochs,
        learning_rate: cfg.bridge_lr,
        batch_size: cfg.bridge_batch,
        seed: stage_seed(cfg.seed, stage),
    }
}

/// Train the representation-learning model (denoise + alignment loss).
pub fn train_mcrl_model(
    cfg: &PipelineConfig,
    bench: &Benchmark,
) -> Result<(EmbedderParams, Vec<EpochStats>)> {
    train(&train_settings(cfg, true, "train-mcrl"), &bench.train)
}

/// Train the baseline model (no denoising, no alignment loss).
pub fn train_plain_model(
    cfg: &PipelineConfig,
    bench: &Benchmark,
) -> Result<(EmbedderParams, Vec<EpochStats>)> {
    train(&train_settings(cfg, false, "train-plain"), &bench.train)
}

/// Unfused evaluation of normalized real embeddings under all three
/// protocols.
pub fn eval_unfused(
    params: &EmbedderParams,
    query: &[LabeledImage],
    gallery: &[LabeledImage],
    metric: Metric,
    epsilon: f64,
) -> Result<ProtocolMetricsReport> {
    let q = embed_records(params, query, epsilon)?;
    let g = embed_records(params, gallery, epsilon)?;
    eval_records(&q, &g, metric)
}

fn eval_records(
    q: &[EmbeddingRecord],
    g: &[EmbeddingRecord],
    metric: Metric,
) -> Result<ProtocolMetricsReport> {
    Ok(ProtocolMetricsReport {
        all_to_all: evaluate(q, g, Protocol::AllToAll, metric)?.metrics,
        optical_to_sar: evaluate(q, g, Protocol::OpticalToSar, metric)?.metrics,
        sar_to_optical: evaluate(q, g, Protocol::SarToOptical, metric)?.metrics,
    })
}

struct FusedCellInputs {
    query: Vec<FusionInput>,
    gallery: Vec<FusionInput>,
}

fn fused_cell_inputs(
    cfg: &PipelineConfig,
    params: &EmbedderParams,
    predictor: &NoisePredictorParams,
    schedule: &BridgeSchedule,
    query: &[LabeledImage],
    gallery: &[LabeledImage],
    stage: &str,
) -> Result<FusedCellInputs> {
    let fusion = FusionSettings {
        tau: cfg.tau,
        k_pseudo: cfg.k_pseudo,
        sampler_steps: cfg.bridge_steps,
        epsilon: cfg.epsilon,
        seed: stage_seed(cfg.seed, stage),
    };
    Ok(FusedCellInputs {
        query: fusion_inputs(params, predictor, schedule, query, &fusion, 0)?,
        gallery: fusion_inputs(
            params,
            predictor,
            schedule,
            gallery,
            &fusion,
            query.len() as u64,
        )?,
    })
}

/// Run the full ablation pipeline. When `out_dir` is given, every
/// intermediate artifact (dataset, split manifests, model files,
/// embedding files, report) is written under it.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: Option<&Path>) -> Result<PipelineReport> {
    cfg.validate()?;
    let bench = synthesize_benchmark(cfg)?;
    let denoise_cfg = DenoiseConfig {
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
    };

    let (model_mcrl, hist_mcrl) = train_mcrl_model(cfg, &bench)?;
    let (model_plain, hist_plain) = train_plain_model(cfg, &bench)?;

    let query_den = denoise_images(&bench.query, &denoise_cfg)?;
    let gallery_den = denoise_images(&bench.gallery, &denoise_cfg)?;

    // Unfused cells.
    let neither_q = embed_records(&model_plain, &bench.query, cfg.epsilon)?;
    let neither_g = embed_records(&model_plain, &bench.gallery, cfg.epsilon)?;
    let mcrl_q = embed_records(&model_mcrl, &query_den, cfg.epsilon)?;
    let mcrl_g = embed_records(&model_mcrl, &gallery_den, cfg.epsilon)?;

    // Bridges: the generation-only cell trains on raw pairs, the
    // combined cell on denoised pairs, matching what each embedder saw.
    let schedule = make_schedule(cfg.bridge_t)?;
    let pairs_plain = build_latent_pairs(&bench.train);
    let (bridge_plain, _) = train_bridge(&bridge_settings(cfg, "bridge-plain"), &pairs_plain)?;
    let train_den = bench.train.denoise_sar(&denoise_cfg)?;
    let pairs_mcrl = build_latent_pairs(&train_den);
    let (bridge_mcrl, _) = train_bridge(&bridge_settings(cfg, "bridge-mcrl"), &pairs_mcrl)?;

    let cdgf_inputs = fused_cell_inputs(
        cfg,
        &model_plain,
        &bridge_plain,
        &schedule,
        &bench.query,
        &bench.gallery,
        "fused-plain",
    )?;
    let both_inputs = fused_cell_inputs(
        cfg,
        &model_mcrl,
        &bridge_mcrl,
        &schedule,
        &query_den,
        &gallery_den,
        "fused-mcrl",
    )?;
    let cdgf_q = fuse_inputs(&cdgf_inputs.query, cfg.tau, cfg.epsilon)?;
    let cdgf_g = fuse_inputs(&cdgf_inputs.gallery, cfg.tau, cfg.epsilon)?;
    let both_q = fuse_inputs(&both_inputs.query, cfg.tau, cfg.epsilon)?;
    let both_g = fuse_inputs(&both_inputs.gallery, cfg.tau, cfg.epsilon)?;

    let cells = vec![
        CellReport {
            name: "neither".into(),
            mcrl: false,
            cdgf: false,
            protocols: eval_records(&neither_q, &neither_g, cfg.metric)?,
        },
        CellReport {
            name: "mcrl_only".into(),
            mcrl: true,
            cdgf: false,
            protocols: eval_records(&mcrl_q, &mcrl_g, cfg.metric)?,
        },
        CellReport {
            name: "cdgf_only".into(),
            mcrl: false,
            cdgf: true,
            protocols: eval_records(&cdgf_q, &cdgf_g, cfg.metric)?,
        },
        CellReport {
            name: "both".into(),
            mcrl: true,
            cdgf: true,
            protocols: eval_records(&both_q, &both_g, cfg.metric)?,
        },
    ];

    let report = PipelineReport {
        seed: cfg.seed,
        metric: cfg.metric.as_str().to_string(),
        models: ModelSummaries {
            mcrl: summarize(&hist_mcrl),
            plain: summarize(&hist_plain),
        },
        cells,
    };

    if let Some(dir) = out_dir {
        write_artifacts(
            dir,
            &bench,
            &model_mcrl,
            &model_plain,
            &bridge_mcrl,
            &bridge_plain,
            &[
                ("neither", &neither_q, &neither_g),
                ("mcrl_only", &mcrl_q, &mcrl_g),
                ("cdgf_only", &cdgf_q, &cdgf_g),
                ("both", &both_q, &both_g),
            ],
            &report,
        )?;
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    dir: &Path,
    bench: &Benchmark,
    model_mcrl: &EmbedderParams,
    model_plain: &EmbedderParams,
    bridge_mcrl: &NoisePredictorParams,
    bridge_plain: &NoisePredictorParams,
    cells: &[(&str, &Vec<EmbeddingRecord>, &Vec<EmbeddingRecord>)],
    report: &PipelineReport,
) -> Result<()> {
    let data_dir = dir.join("data");
    crate::data::write_dataset(&bench.manifest, &bench.images, &data_dir)?;
    save_manifest(&bench.train_entries, &data_dir.join("manifest_train.csv"))?;
    save_manifest(&bench.query_entries, &data_dir.join("manifest_query.csv"))?;
    save_manifest(&bench.gallery_entries, &data_dir.join("manifest_gallery.csv"))?;

    model_mcrl.save(&dir.join("model_mcrl.bin"))?;
    model_plain.save(&dir.join("model_plain.bin"))?;
    bridge_mcrl.save(&dir.join("bridge_mcrl.bin"))?;
    bridge_plain.save(&dir.join("bridge_plain.bin"))?;

    let emb_dir = dir.join("embeddings");
    std::fs::create_dir_all(&emb_dir).map_err(|e| Error::io(&emb_dir, e))?;
    for (name, q, g) in cells {
        write_embeddings(&emb_dir.join(format!("{name}_query.mose")), q)?;
        write_embeddings(&emb_dir.join(format!("{name}_gallery.mose")), g)?;
    }

    let report_path = dir.join("report.json");
    std::fs::write(&report_path, report.to_json()).map_err(|e| Error::io(&report_path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepGrid {
    pub all_to_all: Vec<Vec<f64>>,
    pub optical_to_sar: Vec<Vec<f64>>,
    pub sar_to_optical: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TauCurve {
    pub all_to_all: Vec<f64>,
    pub optical_to_sar: Vec<f64>,
    pub sar_to_optical: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub grid_r1: SweepGrid,
    pub taus: Vec<f64>,
    pub tau_r1: TauCurve,
}

/// Hyperparameter sweep: an `alpha x lambda_cmal` grid of R1 scores
/// from full train+evaluate runs (one per cell, shared master seed),
/// plus a tau curve using fused evaluation of the default-trained model.
pub fn sweep(
    cfg: &PipelineConfig,
    alphas: &[f64],
    lambdas: &[f64],
    taus: &[f64],
    out_dir: Option<&Path>,
) -> Result<SweepReport> {
    if alphas.is_empty() || lambdas.is_empty() || taus.is_empty() {
        return Err(Error::config("sweep grids must be non-empty"));
    }
    cfg.validate()?;

    let mut grid = SweepGrid {
        all_to_all: Vec::new(),
        optical_to_sar: Vec::new(),
        sar_to_optical: Vec::new(),
    };
    for &alpha in alphas {
        let mut rows = (Vec::new(), Vec::new(), Vec::new());
        for &lambda in lambdas {
            let mut cell_cfg = cfg.clone();
            cell_cfg.alpha = alpha;
            cell_cfg.lambda_cmal = lambda;
            cell_cfg.validate()?;
            let bench = synthesize_benchmark(&cell_cfg)?;
            let (model, _) = train_mcrl_model(&cell_cfg, &bench)?;
            let denoise_cfg = DenoiseConfig {
                alpha: cell_cfg.alpha,
                epsilon: cell_cfg.epsilon,
            };
            let query = denoise_images(&bench.query, &denoise_cfg)?;
            let gallery = denoise_images(&bench.gallery, &denoise_cfg)?;
            let metrics = eval_unfused(&model, &query, &gallery, cell_cfg.metric, cell_cfg.epsilon)?;
            rows.0.push(metrics.all_to_all.r1);
            rows.1.push(metrics.optical_to_sar.r1);
            rows.2.push(metrics.sar_to_optical.r1);
        }
        grid.all_to_all.push(rows.0);
        grid.optical_to_sar.push(rows.1);
        grid.sar_to_optical.push(rows.2);
    }

    // Tau curve: one default-config train + bridge, fused per tau.
    let bench = synthesize_benchmark(cfg)?;
    let (model, _) = train_mcrl_model(cfg, &bench)?;
    let denoise_cfg = DenoiseConfig {
        alpha: cfg.alpha,
        epsilon: cfg.epsilon,
    };
    let query_den = denoise_images(&bench.query, &denoise_cfg)?;
    let gallery_den = denoise_images(&bench.gallery, &denoise_cfg)?;
    let schedule = make_schedule(cfg.bridge_t)?;
    let train_den = bench.train.denoise_sar(&denoise_cfg)?;
    let (bridge, _) = train_bridge(&bridge_settings(cfg, "bridge-mcrl"), &build_latent_pairs(&train_den))?;
    let inputs = fused_cell_inputs(
        cfg,
        &model,
        &bridge,
        &schedule,
        &query_den,
        &gallery_den,
        "fused-mcrl",
    )?;
    let mut tau_curve = TauCurve {
        all_to_all: Vec::new(),
        optical_to_sar: Vec::new(),
        sar_to_optical: Vec::new(),
    };
    for &tau in taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::config(format!("sweep tau {tau} outside [0, 1]")));
        }
        let q = fuse_inputs(&inputs.query, tau, cfg.epsilon)?;
        let g = fuse_inputs(&inputs.gallery, tau, cfg.epsilon)?;
        let metrics = eval_records(&q, &g, cfg.metric)?;
        tau_curve.all_to_all.push(metrics.all_to_all.r1);
        tau_curve.optical_to_sar.push(metrics.optical_to_sar.r1);
        tau_curve.sar_to_optical.push(metrics.sar_to_optical.r1);
    }

    let report = SweepReport {
        alphas: alphas.to_vec(),
        lambdas: lambdas.to_vec(),
        grid_r1: grid,
        taus: taus.to_vec(),
        tau_r1: tau_curve,
    };
    if let Some(dir) = out_dir {
        write_sweep_csvs(dir, &report)?;
    }
    Ok(report)
}

fn grid_csv(alphas: &[f64], lambdas: &[f64], grid: &[Vec<f64>]) -> String {
    let mut out = String::from("alpha\\lambda_cmal");
    for l in lambdas {
        out.push_str(&format!(",{l}"));
    }
    out.push('\n');
    for (alpha, row) in alphas.iter().zip(grid) {
        out.push_str(&format!("{alpha}"));
        for r1 in row {
            out.push_str(&format!(",{r1}"));
        }
        out.push('\n');
    }
    out
}

fn write_sweep_csvs(dir: &Path, report: &SweepReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, grid) in [
        ("sweep_r1_all.csv", &report.grid_r1.all_to_all),
        ("sweep_r1_o2s.csv", &report.grid_r1.optical_to_sar),
        ("sweep_r1_s2o.csv", &report.grid_r1.sar_to_optical),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, grid_csv(&report.alphas, &report.lambdas, grid))
            .map_err(|e| Error::io(&path, e))?;
    }
    let mut tau = String::from("tau,all,o2s,s2o\n");
    for (i, t) in report.taus.iter().enumerate() {
        tau.push_str(&format!(
            "{t},{},{},{}\n",
            report.tau_r1.all_to_all[i], report.tau_r1.optical_to_sar[i], report.tau_r1.sar_to_optical[i]
        ));
    }
    let path = dir.join("sweep_tau_r1.csv");
    std::fs::write(&path, tau).map_err(|e| Error::io(&path, e))
}
