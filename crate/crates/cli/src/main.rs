//! Command-line frontend wiring the library into the document
//! anonymization workflow: corpus synthesis, embedding index, retrieval,
//! alignment, detection, redaction (fused method plus the two baselines),
//! evaluation, and rendering.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use docredact_core::detectors::{detect_all_with, load_sidecar, DetectionSet};
use docredact_core::features::align_with;
use docredact_core::formats::{
    self, read_annotation, read_config, read_embeddings, read_manifest, write_annotation,
    write_embeddings, ManifestEntry, PipelineConfig,
};
use docredact_core::metrics::{evaluate_corpus, EvalDoc, EvalMethod};
use docredact_core::raster::Raster;
use docredact_core::redactor::{
    baseline_auto, baseline_copy, redact_with_transform, render, AnnotatedDocument, RenderMode,
};
use docredact_core::retrieval::{cosine, embed_thumbnail, top1_excluding, EmbeddingRecord, EmbeddingStore};
use docredact_core::synthdoc::{builtin_templates, make_corpus, PerturbEnvelope};

#[derive(Parser)]
#[command(name = "docredact", version, about = "Anonymize scanned documents by fusing detector output with redactions transferred from a reference document")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    /// Fused reference-transfer redaction.
    Proposed,
    /// Automatic detections only.
    Auto,
    /// Reference boxes copied without alignment.
    Copy,
}

impl Method {
    fn display_name(self) -> &'static str {
        match self {
            Method::Proposed => "Proposed Method",
            Method::Auto => "Automatic Detection",
            Method::Copy => "Copy Reference",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Blackout,
    Overlay,
}

impl From<Mode> for RenderMode {
    fn from(mode: Mode) -> RenderMode {
        match mode {
            Mode::Blackout => RenderMode::Blackout,
            Mode::Overlay => RenderMode::Overlay,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Embedder {
    /// Native 16x16 thumbnail embeddings.
    Thumbnail,
    /// Ingest externally computed embeddings (requires --embeddings).
    File,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of document models with ground truth.
    Synth {
        /// Number of document models to generate.
        #[arg(long)]
        templates: usize,
        #[arg(long = "docs-per-model")]
        docs_per_model: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Build an embedding store over a corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Embedder::Thumbnail)]
        embedder: Embedder,
        /// Externally computed embedding JSONL (with --embedder file).
        #[arg(long)]
        embeddings: Option<PathBuf>,
    },
    /// Print the store record most similar to an image.
    Retrieve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Estimate the reference-to-target affine transform.
    Align {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run the detectors (plus optional sidecar detections) on an image.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Produce final redactions for one image.
    Redact {
        #[arg(long)]
        image: PathBuf,
        /// Embedding store (required for proposed and copy).
        #[arg(long)]
        store: Option<PathBuf>,
        /// Corpus directory holding the reference documents (required for
        /// proposed and copy).
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long)]
        out: PathBuf,
        /// Also write a rendered raster here.
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Blackout)]
        mode: Mode,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare methods over a corpus and write a report.
    Evaluate {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated subset of proposed,auto,copy.
        #[arg(long, default_value = "proposed,auto,copy")]
        methods: String,
        #[arg(long)]
        report: PathBuf,
        /// Also write the plain-text table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Render an annotation onto an image.
    Render {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Pipeline(String),
}

impl From<docredact_core::Error> for CliError {
    fn from(e: docredact_core::Error) -> CliError {
        if e.is_pipeline_failure() {
            CliError::Pipeline(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Data(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
        Err(CliError::Pipeline(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(3)
        }
    }
}

fn doc_id_from(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_pipeline_config(path: &Option<PathBuf>) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => Ok(read_config(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

/// Reference documents by model, loaded lazily from the manifest.
struct ReferenceIndex {
    corpus_dir: PathBuf,
    entries: Vec<ManifestEntry>,
}

impl ReferenceIndex {
    fn open(corpus_dir: &Path) -> Result<ReferenceIndex, CliError> {
        let entries = read_manifest(&corpus_dir.join("manifest.json"))?;
        Ok(ReferenceIndex {
            corpus_dir: corpus_dir.to_path_buf(),
            entries,
        })
    }

    fn reference_for(&self, model_id: &str) -> Result<(Raster, AnnotatedDocument), CliError> {
        let entry = self
            .entries
            .iter()
            .find(|e| e.reference && e.model_id == model_id)
            .ok_or_else(|| {
                CliError::Data(format!("no reference document for model {model_id:?} in corpus"))
            })?;
        let image = Raster::load_pnm(&self.corpus_dir.join(&entry.image))?;
        let ann = read_annotation(&self.corpus_dir.join(&entry.annotation))?;
        Ok((image, ann))
    }
}

fn thumbnail_store(corpus_dir: &Path, entries: &[ManifestEntry]) -> Result<EmbeddingStore, CliError> {
    let mut store = EmbeddingStore::new(docredact_core::retrieval::THUMBNAIL_DIM);
    for entry in entries {
        let image = Raster::load_pnm(&corpus_dir.join(&entry.image))?;
        store.insert(EmbeddingRecord {
            doc_id: entry.doc_id.clone(),
            model_id: entry.model_id.clone(),
            vector: embed_thumbnail(&image)?,
        })?;
    }
    Ok(store)
}

/// Retrieve the reference for a target image: embed, find the most similar
/// stored document excluding the target itself, and take the flagged
/// reference of that document's model.
fn retrieve_reference(
    image: &Raster,
    doc_id: &str,
    store: &EmbeddingStore,
    references: &ReferenceIndex,
) -> Result<(String, Raster, AnnotatedDocument), CliError> {
    let query = embed_thumbnail(image)?;
    let hit = top1_excluding(store, &query, Some(doc_id))?;
    let (ref_image, ref_ann) = references.reference_for(&hit.model_id)?;
    Ok((hit.model_id.clone(), ref_image, ref_ann))
}

/// The fused method with the documented fallback: if alignment fails, copy
/// the reference boxes and warn instead of producing no redactions.
fn redact_proposed(
    target: &Raster,
    detections: &DetectionSet,
    ref_image: &Raster,
    ref_ann: &AnnotatedDocument,
    config: &PipelineConfig,
) -> Result<AnnotatedDocument, CliError> {
    let params = config.fusion_params();
    match align_with(ref_image, target, &params.align) {
        Ok(alignment) => Ok(redact_with_transform(
            target,
            &alignment.transform,
            ref_ann,
            detections,
            &params,
        )?),
        Err(e) if e.is_pipeline_failure() => {
            eprintln!("warning: alignment failed ({e}); falling back to copy-reference");
            let mut out = baseline_copy(ref_ann, target.width(), target.height());
            out.doc_id = detections.doc_id.clone();
            Ok(out)
        }
        Err(e) => Err(e.into()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            templates,
            docs_per_model,
            seed,
            out,
            jobs,
        } => {
            if templates == 0 || docs_per_model == 0 {
                return Err(CliError::Usage(
                    "--templates and --docs-per-model must be at least 1".into(),
                ));
            }
            let specs = builtin_templates(templates);
            let entries = make_corpus(&specs, docs_per_model, &PerturbEnvelope::default(), seed, &out, jobs)?;
            println!(
                "wrote {} documents ({} models, {} references) to {}",
                entries.len(),
                templates,
                entries.iter().filter(|e| e.reference).count(),
                out.display()
            );
            Ok(())
        }
        Command::Index {
            corpus,
            out,
            embedder,
            embeddings,
        } => {
            let store = match embedder {
                Embedder::Thumbnail => {
                    let entries = read_manifest(&corpus.join("manifest.json"))?;
                    thumbnail_store(&corpus, &entries)?
                }
                Embedder::File => {
                    let path = embeddings.ok_or_else(|| {
                        CliError::Usage("--embedder file requires --embeddings PATH".into())
                    })?;
                    read_embeddings(&path)?
                }
            };
            write_embeddings(&store, &out)?;
            println!("indexed {} documents into {}", store.len(), out.display());
            Ok(())
        }
        Command::Retrieve { store, image } => {
            let store = read_embeddings(&store)?;
            let img = Raster::load_pnm(&image)?;
            let query = embed_thumbnail(&img)?;
            let hit = top1_excluding(&store, &query, None)?;
            let similarity = cosine(&query, &hit.vector)?;
            println!("{}\t{}\t{similarity:.6}", hit.doc_id, hit.model_id);
            Ok(())
        }
        Command::Align {
            reference,
            target,
            config,
        } => {
            let config = load_pipeline_config(&config)?;
            let ref_img = Raster::load_pnm(&reference)?;
            let tgt_img = Raster::load_pnm(&target)?;
            let alignment = align_with(&ref_img, &tgt_img, &config.align)?;
            for row in alignment.transform.m {
                println!("{:+.6} {:+.6} {:+.6}", row[0], row[1], row[2]);
            }
            println!("inliers: {} / {} matches", alignment.inlier_count, alignment.match_count);
            Ok(())
        }
        Command::Detect {
            image,
            sidecar,
            out,
            config,
        } => {
            let config = load_pipeline_config(&config)?;
            let img = Raster::load_pnm(&image)?;
            let side = sidecar.as_deref().map(load_sidecar).transpose()?;
            let mut detections = detect_all_with(&img, side.as_ref(), &config.detectors)?;
            if detections.doc_id.is_empty() {
                detections.doc_id = doc_id_from(&image);
            }
            let doc = AnnotatedDocument {
                doc_id: detections.doc_id.clone(),
                image: image.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                width: img.width(),
                height: img.height(),
                boxes: detections.boxes,
            };
            write_annotation(&doc, &out)?;
            println!("{}: {} detections", doc.doc_id, doc.boxes.len());
            Ok(())
        }
        Command::Redact {
            image,
            store,
            corpus,
            sidecar,
            method,
            out,
            render: render_out,
            mode,
            config,
        } => {
            // Flag-combination checks come before any file access.
            if matches!(method, Method::Proposed | Method::Copy) {
                if store.is_none() {
                    return Err(CliError::Usage("--store is required for this method".into()));
                }
                if corpus.is_none() {
                    return Err(CliError::Usage("--corpus is required for this method".into()));
                }
            }
            let config = load_pipeline_config(&config)?;
            let img = Raster::load_pnm(&image)?;
            let doc_id = doc_id_from(&image);
            let side = sidecar.as_deref().map(load_sidecar).transpose()?;

            let mut redacted = match method {
                Method::Auto => {
                    let mut detections = detect_all_with(&img, side.as_ref(), &config.detectors)?;
                    detections.doc_id = doc_id.clone();
                    baseline_auto(&detections, img.width(), img.height())
                }
                Method::Proposed | Method::Copy => {
                    let store_path = store.expect("checked above");
                    let corpus_dir = corpus.expect("checked above");
                    let store = read_embeddings(&store_path)?;
                    let references = ReferenceIndex::open(&corpus_dir)?;
                    let (model_id, ref_image, ref_ann) =
                        retrieve_reference(&img, &doc_id, &store, &references)?;
                    eprintln!("reference model: {model_id}");
                    match method {
                        Method::Copy => {
                            let mut doc = baseline_copy(&ref_ann, img.width(), img.height());
                            doc.doc_id = doc_id.clone();
                            doc
                        }
                        _ => {
                            let mut detections =
                                detect_all_with(&img, side.as_ref(), &config.detectors)?;
                            detections.doc_id = doc_id.clone();
                            redact_proposed(&img, &detections, &ref_image, &ref_ann, &config)?
                        }
                    }
                }
            };
            redacted.doc_id = doc_id;
            redacted.image = image
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            write_annotation(&redacted, &out)?;
            if let Some(render_path) = render_out {
                let rendered = render(&img, &redacted.boxes, mode.into());
                rendered.save_pnm(&render_path)?;
            }
            println!(
                "{}: {} redactions ({})",
                redacted.doc_id,
                redacted.boxes.len(),
                method.display_name()
            );
            Ok(())
        }
        Command::Evaluate {
            corpus,
            methods,
            report,
            table,
            jobs,
            config,
        } => {
            let config = load_pipeline_config(&config)?;
            let mut selected = Vec::new();
            for name in methods.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let method = match name {
                    "proposed" => Method::Proposed,
                    "auto" => Method::Auto,
                    "copy" => Method::Copy,
                    other => {
                        return Err(CliError::Usage(format!(
                            "unknown method {other:?}; expected proposed, auto, or copy"
                        )))
                    }
                };
                if !selected.contains(&method) {
                    selected.push(method);
                }
            }
            if selected.is_empty() {
                return Err(CliError::Usage("--methods must name at least one method".into()));
            }

            let entries = read_manifest(&corpus.join("manifest.json"))?;
            let references = ReferenceIndex::open(&corpus)?;
            let store = thumbnail_store(&corpus, &entries)?;
            let config_ref = &config;
            let store_ref = &store;
            let references_ref = &references;

            let eval_methods: Vec<EvalMethod> = selected
                .iter()
                .map(|&method| EvalMethod {
                    name: method.display_name().to_string(),
                    run: Box::new(move |doc: &EvalDoc| {
                        let run = || -> Result<AnnotatedDocument, CliError> {
                            match method {
                                Method::Auto => {
                                    let mut detections = detect_all_with(
                                        &doc.image,
                                        None,
                                        &config_ref.detectors,
                                    )?;
                                    detections.doc_id = doc.doc_id.clone();
                                    Ok(baseline_auto(&detections, doc.image.width(), doc.image.height()))
                                }
                                Method::Copy => {
                                    let (_, _, ref_ann) = retrieve_reference(
                                        &doc.image,
                                        &doc.doc_id,
                                        store_ref,
                                        references_ref,
                                    )?;
                                    Ok(baseline_copy(&ref_ann, doc.image.width(), doc.image.height()))
                                }
                                Method::Proposed => {
                                    let (_, ref_image, ref_ann) = retrieve_reference(
                                        &doc.image,
                                        &doc.doc_id,
                                        store_ref,
                                        references_ref,
                                    )?;
                                    let mut detections = detect_all_with(
                                        &doc.image,
                                        None,
                                        &config_ref.detectors,
                                    )?;
                                    detections.doc_id = doc.doc_id.clone();
                                    redact_proposed(
                                        &doc.image,
                                        &detections,
                                        &ref_image,
                                        &ref_ann,
                                        config_ref,
                                    )
                                }
                            }
                        };
                        run().map_err(|e| {
                            let message = match e {
                                CliError::Usage(m) | CliError::Data(m) | CliError::Pipeline(m) => m,
                            };
                            docredact_core::Error::Schema {
                                path: format!("evaluate {}", doc.doc_id),
                                message,
                            }
                        })
                    }),
                })
                .collect();

            let result = evaluate_corpus(&eval_methods, &corpus, jobs)?;
            formats::write_bytes_atomic(&report, result.to_json().as_bytes())?;
            let rendered = result.to_table();
            if let Some(table_path) = table {
                formats::write_bytes_atomic(&table_path, rendered.as_bytes())?;
            }
            print!("{rendered}");
            println!("report written to {}", report.display());
            Ok(())
        }
        Command::Render {
            image,
            annotation,
            mode,
            out,
        } => {
            let img = Raster::load_pnm(&image)?;
            let doc = read_annotation(&annotation)?;
            let rendered = render(&img, &doc.boxes, mode.into());
            rendered.save_pnm(&out)?;
            println!("rendered {} boxes to {}", doc.boxes.len(), out.display());
            Ok(())
        }
    }
}
