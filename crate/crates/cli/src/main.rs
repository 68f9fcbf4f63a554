//! `osreid` command line: synthesize data, denoise, train, generate,
//! embed, evaluate, and run the full ablation pipeline.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! failure. Errors print one machine-parseable line to stderr with an
//! `E_CONFIG` / `E_DATA` / `E_NUMERIC` prefix.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use osreid::bridge::{generate_pseudo_set, make_schedule, NoisePredictorParams};
use osreid::config::PipelineConfig;
use osreid::data::{
    load_manifest, save_manifest, Dataset, LabeledImage, ManifestEntry, Modality, SynthSpec,
};
use osreid::denoise::{denoise_image, DenoiseConfig};
use osreid::embed::EmbedderParams;
use osreid::pipeline::{run_pipeline, sweep};
use osreid::retrieval::{
    embed_records, evaluate, read_embeddings, write_embeddings, EmbeddingRecord, Metric, Protocol,
    Source,
};
use osreid::seed::{indexed_seed, stage_seed};
use osreid::{Error, Result};

#[derive(Parser)]
#[command(name = "osreid", version, about = "Optical-SAR cross-modal ship re-identification toolkit")]
struct Cli {
    /// Flat `key = value` config file; defaults apply for missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override (every stage derives its stream from it).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic two-modality dataset.
    Synth {
        /// Number of identities.
        #[arg(long)]
        ids: Option<usize>,
        /// Images per identity per modality.
        #[arg(long)]
        per: Option<usize>,
        /// Image side in pixels.
        #[arg(long)]
        side: Option<usize>,
    },
    /// Denoise every SAR image of a dataset directory.
    Denoise {
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Train the embedding model on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the bridge generator on identity-paired latents.
    BridgeTrain {
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate K pseudo-SAR images for every optical image.
    BridgeGenerate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(short, long)]
        k: Option<usize>,
    },
    /// Embed a manifest's images into an embedding file.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Manifest file name inside the data directory.
        #[arg(long, default_value = "manifest.csv")]
        manifest: String,
        /// Denoise SAR images with this alpha before embedding.
        #[arg(long)]
        alpha: Option<f64>,
        /// Keep raw embeddings instead of L2-normalizing.
        #[arg(long)]
        raw: bool,
    },
    /// Score a query embedding file against a gallery embedding file.
    Evaluate {
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// all | o2s | s2o
        #[arg(long, default_value = "all")]
        protocol: String,
        /// euclidean | cosine
        #[arg(long)]
        metric: Option<String>,
    },
    /// Run the full 2x2 ablation pipeline and emit a JSON report.
    Pipeline,
    /// Alpha x lambda_cmal R1 grid plus a tau curve, as CSV files.
    Sweep {
        #[arg(long, default_value = "1,5,25")]
        alphas: String,
        #[arg(long, default_value = "0,2,8")]
        lambdas: String,
        #[arg(long, default_value = "0,0.2,0.5")]
        taus: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}: {e}", e.code());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn require_out(cli: &Cli, what: &str) -> Result<PathBuf> {
    cli.out
        .clone()
        .ok_or_else(|| Error::config(format!("--out is required: {what}")))
}

fn parse_grid(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::config(format!("bad {what} value {v:?}")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match &cli.command {
        Command::Synth { ids, per, side } => {
            let out = require_out(&cli, "directory for images and manifest.csv")?;
            let spec = SynthSpec {
                num_identities: ids.unwrap_or(cfg.num_ids),
                images_per_identity_per_modality: per.unwrap_or(cfg.imgs_per_id),
                side: side.unwrap_or(cfg.side),
                seed: stage_seed(cfg.seed, "synth"),
            };
            let (manifest, images) = osreid::data::generate_synthetic(&spec)?;
            osreid::data::write_dataset(&manifest, &images, &out)?;
            println!("wrote {} images under {}", images.len(), out.display());
            Ok(())
        }
        Command::Denoise {
            alpha,
            input,
            output,
        } => {
            let dcfg = DenoiseConfig {
                alpha: alpha.unwrap_or(cfg.alpha),
                epsilon: cfg.epsilon,
            };
            dcfg.validate()?;
            let manifest = load_manifest(&input.join("manifest.csv"))?;
            let data = Dataset::load(&manifest, input)?;
            std::fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
            for (entry, image) in manifest.entries.iter().zip(data.images()) {
                let processed = match image.modality() {
                    Modality::Sar => denoise_image(image, &dcfg)?,
                    Modality::Optical => image.clone(),
                };
                let path = output.join(&entry.path);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                }
                processed.save_png(&path)?;
            }
            save_manifest(&manifest.entries, &output.join("manifest.csv"))?;
            println!(
                "denoised {} SAR images (alpha = {}) into {}",
                manifest
                    .entries
                    .iter()
                    .filter(|e| e.modality == Modality::Sar)
                    .count(),
                dcfg.alpha,
                output.display()
            );
            Ok(())
        }
        Command::Train { data } => {
            let out = require_out(&cli, "path for the model file")?;
            let manifest = load_manifest(&data.join("manifest.csv"))?;
            let dataset = Dataset::load(&manifest, data)?;
            let settings = osreid::embed::TrainSettings {
                epochs: cfg.epochs,
                learning_rate: cfg.lr,
                batch_size: cfg.batch_size,
                instances_per_identity: cfg.instances_per_id,
                hidden1: cfg.hidden1,
                hidden2: cfg.hidden2,
                embed_dim: cfg.embed_dim,
                weights: osreid::embed::LossWeights {
                    lambda_id: cfg.lambda_id,
                    lambda_tri: cfg.lambda_tri,
                    lambda_cmal: cfg.lambda_cmal,
                    triplet_margin: cfg.triplet_margin,
                },
                denoise: Some(DenoiseConfig {
                    alpha: cfg.alpha,
                    epsilon: cfg.epsilon,
                }),
                flip_horizontal: cfg.flip_horizontal,
                flip_vertical: cfg.flip_vertical,
                seed: stage_seed(cfg.seed, "train-mcrl"),
            };
            let (params, history) = osreid::embed::train(&settings, &dataset)?;
            params.save(&out)?;
            if let Some(last) = history.last() {
                println!(
                    "trained {} epochs, final loss {:.6}, centroid gap {:.6} -> {}",
                    history.len(),
                    last.total,
                    last.centroid_gap,
                    out.display()
                );
            }
            Ok(())
        }
        Command::BridgeTrain { data } => {
            let out = require_out(&cli, "path for the bridge model file")?;
            let manifest = load_manifest(&data.join("manifest.csv"))?;
            let dataset = Dataset::load(&manifest, data)?;
            let denoised = dataset.denoise_sar(&DenoiseConfig {
                alpha: cfg.alpha,
                epsilon: cfg.epsilon,
            })?;
            let pairs = osreid::bridge::build_latent_pairs(&denoised);
            let settings = osreid::bridge::BridgeSettings {
                t_max: cfg.bridge_t,
                hidden: cfg.bridge_hidden,
                time_embed_dim: cfg.time_embed_dim,
                epochs: cfg.bridge_epochs,
                learning_rate: cfg.bridge_lr,
                batch_size: cfg.bridge_batch,
                seed: stage_seed(cfg.seed, "bridge-mcrl"),
            };
            let (predictor, history) = osreid::bridge::train_bridge(&settings, &pairs)?;
            predictor.save(&out)?;
            println!(
                "trained bridge on {} pairs for {} epochs, final loss {:.6} -> {}",
                pairs.len(),
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
            Ok(())
        }
        Command::BridgeGenerate { model, input, k } => {
            let out = require_out(&cli, "directory for the generated images")?;
            let predictor = NoisePredictorParams::load(model)?;
            let schedule = make_schedule(predictor.t_max())?;
            let manifest = load_manifest(&input.join("manifest.csv"))?;
            let dataset = Dataset::load(&manifest, input)?;
            let k = k.unwrap_or(cfg.k_pseudo);
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let mut entries = Vec::new();
            let mut generated = 0usize;
            for (i, (entry, image)) in manifest.entries.iter().zip(dataset.images()).enumerate() {
                if image.modality() != Modality::Optical {
                    continue;
                }
                let pseudo = generate_pseudo_set(
                    &predictor,
                    image,
                    k,
                    &schedule,
                    cfg.bridge_steps,
                    indexed_seed(cfg.seed, "bridge-generate", i as u64),
                )?;
                let stem = Path::new(&entry.path)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("image");
                for (j, img) in pseudo.iter().enumerate() {
                    let name = format!("pseudo_{stem}_k{j}.png");
                    img.save_png(&out.join(&name))?;
                    entries.push(ManifestEntry {
                        path: name,
                        identity: entry.identity,
                        modality: Modality::Sar,
                    });
                    generated += 1;
                }
            }
            if entries.is_empty() {
                return Err(Error::data("input manifest holds no optical images"));
            }
            save_manifest(&entries, &out.join("manifest.csv"))?;
            println!("generated {generated} pseudo-SAR images under {}", out.display());
            Ok(())
        }
        Command::Embed {
            model,
            data,
            manifest,
            alpha,
            raw,
        } => {
            let out = require_out(&cli, "path for the embedding file")?;
            let params = EmbedderParams::load(model)?;
            let manifest = load_manifest(&data.join(manifest))?;
            let dataset = Dataset::load(&manifest, data)?;
            let images: Vec<LabeledImage> = match alpha {
                Some(a) => {
                    let dcfg = DenoiseConfig {
                        alpha: *a,
                        epsilon: cfg.epsilon,
                    };
                    dataset
                        .images()
                        .iter()
                        .map(|img| match img.modality() {
                            Modality::Sar => denoise_image(img, &dcfg),
                            Modality::Optical => Ok(img.clone()),
                        })
                        .collect::<Result<_>>()?
                }
                None => dataset.images().to_vec(),
            };
            let records: Vec<EmbeddingRecord> = if *raw {
                images
                    .iter()
                    .map(|img| {
                        Ok(EmbeddingRecord {
                            vector: params.embed_image(img)?,
                            identity: img.identity(),
                            modality: img.modality(),
                            source: Source::Real,
                        })
                    })
                    .collect::<Result<_>>()?
            } else {
                embed_records(&params, &images, cfg.epsilon)?
            };
            write_embeddings(&out, &records)?;
            println!("embedded {} images -> {}", records.len(), out.display());
            Ok(())
        }
        Command::Evaluate {
            query,
            gallery,
            protocol,
            metric,
        } => {
            let q = read_embeddings(query)?;
            let g = read_embeddings(gallery)?;
            let protocol = Protocol::parse(protocol)?;
            let metric = match metric {
                Some(m) => Metric::parse(m)?,
                None => cfg.metric,
            };
            let evaluation = evaluate(&q, &g, protocol, metric)?;
            let json = serde_json::to_string_pretty(&evaluation.metrics)
                .expect("metrics serialize") + "\n";
            match &cli.out {
                Some(path) => {
                    std::fs::write(path, &json).map_err(|e| Error::io(path, e))?;
                    println!("wrote metrics to {}", path.display());
                }
                None => print!("{json}"),
            }
            Ok(())
        }
        Command::Pipeline => {
            let report = run_pipeline(&cfg, cli.out.as_deref())?;
            print!("{}", report.to_json());
            Ok(())
        }
        Command::Sweep {
            alphas,
            lambdas,
            taus,
        } => {
            let alphas = parse_grid(alphas, "alpha")?;
            let lambdas = parse_grid(lambdas, "lambda_cmal")?;
            let taus = parse_grid(taus, "tau")?;
            let report = sweep(&cfg, &alphas, &lambdas, &taus, cli.out.as_deref())?;
            let json = serde_json::to_string_pretty(&report).expect("sweep serializes");
            println!("{json}");
            Ok(())
        }
    }
}
