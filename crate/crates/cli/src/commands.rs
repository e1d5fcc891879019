use std::path::{Path, PathBuf};
use std::process::Command;

use probebench::catalog;
use probebench::features::{
    load_manifest, make_speaker_split, read_feature_header, write_split, FeatureStore, Partition,
    SplitRatios,
};
use probebench::heads::gradcheck::{run_suite, SuiteConfig};
use probebench::orchestrator::{
    emit_report, load_report, probe_sweep, run_aggregation, synthesize_planted_dataset,
    with_workers, AggregationEntry, BenchmarkReport, DatasetSource, ReportMeta, SyntheticSpec,
};
use probebench::trainer::TRIALS;
use probebench::{Error, Result};

use crate::config::RunConfig;
use crate::{
    ExtractArgs, Globals, GradcheckArgs, ProbeArgs, ReportArgs, SplitArgs, SynthArgs,
    EXTRACTOR_ENV, FEATURES_ENV,
};

/// Gradient suite pass threshold on the relative error.
const GRADCHECK_TOLERANCE: f64 = 1e-3;
const DEFAULT_EXTRACTOR: &str = "probebench-extract";

fn out_dir(globals: &Globals) -> PathBuf {
    globals.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn features_override() -> Option<PathBuf> {
    std::env::var_os(FEATURES_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

pub fn split(globals: &Globals, args: SplitArgs) -> Result<u8> {
    let ratios: SplitRatios = args.ratios.parse()?;
    let manifest = load_manifest(&args.manifest)?;
    let split = make_speaker_split(&manifest, &ratios, globals.seed)?;
    let path = args
        .output
        .unwrap_or_else(|| out_dir(globals).join(format!("{}.split", manifest.dataset_id)));
    write_split(&split, &path)?;
    for p in Partition::ALL {
        println!(
            "{p}: {} speakers, {} utterances",
            split.speakers_in(&manifest, p).len(),
            split.members(p).len()
        );
    }
    println!("wrote {}", path.display());
    Ok(0)
}

/// Layer count of `model` on `dataset`: the catalog value when known,
/// otherwise whatever the first feature file says.
fn layer_count(cfg: &RunConfig, store: &FeatureStore, model: &str, dataset: &str) -> Result<usize> {
    if let Some(info) = catalog::model(model) {
        return Ok(info.layer_count());
    }
    let manifest = load_manifest(cfg.manifest_path(dataset))?;
    let first = manifest
        .utterances
        .first()
        .ok_or_else(|| Error::Config(format!("manifest for {dataset} lists no utterances")))?;
    let path = store.record_path(model, dataset, &first.utterance_id);
    Ok(read_feature_header(&path)
        .map_err(|e| match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingFeature {
                    utterance: first.utterance_id.clone(),
                    path,
                }
            }
            other => other,
        })?
        .layer_count)
}

pub fn probe(globals: &Globals, args: ProbeArgs) -> Result<u8> {
    let cfg = RunConfig::load(&args.config)?;
    let store =
        FeatureStore::new(features_override().unwrap_or_else(|| cfg.paths.features.clone()));

    if args.dry_run {
        let mut tasks = 0;
        for model in &cfg.models {
            for dataset in &cfg.datasets {
                tasks += cfg.heads.len() * layer_count(&cfg, &store, model, dataset)? * TRIALS;
            }
        }
        println!("tasks: {tasks}");
        return Ok(0);
    }

    let defaults = cfg.trainer_defaults();
    let mut sources = Vec::new();
    for model in &cfg.models {
        for dataset in &cfg.datasets {
            sources.push(DatasetSource::open(
                store.clone(),
                model,
                cfg.manifest_path(dataset),
                cfg.split_path(dataset),
            )?);
        }
    }

    let (sweeps, aggregation) = with_workers(globals.workers, || -> Result<_> {
        let mut sweeps = Vec::new();
        let mut aggregation = Vec::new();
        for src in &sources {
            for &head in &cfg.heads {
                eprintln!("sweep {} / {} / {head}", src.model_id, src.dataset_id());
                sweeps.push(probe_sweep(src, head, &defaults)?);
            }
            if cfg.aggregation {
                eprintln!("aggregation {} / {}", src.model_id, src.dataset_id());
                aggregation.push(AggregationEntry {
                    model_id: src.model_id.clone(),
                    dataset_id: src.dataset_id().to_string(),
                    summary: run_aggregation(src, &defaults)?,
                });
            }
        }
        Ok((sweeps, aggregation))
    })??;

    let meta = ReportMeta::new(
        cfg.models.clone(),
        cfg.datasets.clone(),
        cfg.heads.clone(),
        defaults,
        cfg.split_ratios()?,
    );
    let report = BenchmarkReport::assemble(meta, sweeps, aggregation)?;
    let out = globals.out.clone().unwrap_or_else(|| cfg.paths.out.clone());
    emit_report(&report, &out)?;
    let config_copy = out.join("run_config.toml");
    std::fs::copy(&args.config, &config_copy).map_err(|e| Error::io(&config_copy, e))?;
    for b in &report.best_layers {
        println!(
            "{} {} {}: best layer {} (dev {:.3}, test {:.3})",
            b.model_id, b.dataset_id, b.head_kind, b.layer, b.mean_dev, b.mean_test
        );
    }
    println!("wrote {}", out.display());
    Ok(0)
}

pub fn synth(globals: &Globals, args: SynthArgs) -> Result<u8> {
    let spec = SyntheticSpec {
        dataset_id: args.dataset,
        model_id: args.model,
        layer_count: args.layers,
        time_steps: args.time_steps,
        feature_dim: args.dim,
        num_classes: args.classes,
        num_speakers: args.speakers,
        utterances_per_class: args.per_class,
        planted_layer: args.planted_layer,
        signal_to_noise: args.snr,
        seed: globals.seed,
    };
    let ds = synthesize_planted_dataset(&spec, out_dir(globals))?;
    println!("manifest {}", ds.manifest_path.display());
    println!("split {}", ds.split_path.display());
    println!(
        "features {}",
        ds.store
            .dataset_dir(&spec.model_id, &spec.dataset_id)
            .display()
    );
    Ok(0)
}

pub fn gradcheck(globals: &Globals, args: GradcheckArgs) -> Result<u8> {
    let cfg = SuiteConfig {
        instances: args.instances,
        eps: args.eps,
        seed: globals.seed,
        plant_bug: args.plant_bug,
        ..SuiteConfig::default()
    };
    let report = with_workers(globals.workers, || run_suite(&cfg))??;
    let checked: usize = report.instances.iter().map(|i| i.checked).sum();
    println!(
        "instances: {}  coordinates: {checked}  eps: {:e}",
        report.instances.len(),
        report.eps
    );
    println!("max relative error: {:e}", report.max_rel_error);
    if report.passed(GRADCHECK_TOLERANCE) {
        println!("PASS (< {GRADCHECK_TOLERANCE:e})");
        Ok(0)
    } else {
        println!("FAIL (>= {GRADCHECK_TOLERANCE:e})");
        Ok(1)
    }
}

/// Runs `$PROBEBENCH_EXTRACTOR --model <id> --manifest <path> --features-root
/// <dir>` and then checks every emitted header.
pub fn extract(globals: &Globals, args: ExtractArgs) -> Result<u8> {
    let info = catalog::require_model(&args.model)?;
    let manifest = load_manifest(&args.manifest)?;
    let root = args
        .features_root
        .or_else(features_override)
        .unwrap_or_else(|| out_dir(globals).join("features"));
    let program = std::env::var(EXTRACTOR_ENV).unwrap_or_else(|_| DEFAULT_EXTRACTOR.to_string());
    let status = Command::new(&program)
        .arg("--model")
        .arg(info.id)
        .arg("--manifest")
        .arg(&args.manifest)
        .arg("--features-root")
        .arg(&root)
        .status()
        .map_err(|e| Error::io(Path::new(&program), e))?;
    if !status.success() {
        eprintln!("error: extractor {program} exited with {status}");
        return Ok(status
            .code()
            .and_then(|c| u8::try_from(c).ok())
            .filter(|c| (1..=3).contains(c))
            .unwrap_or(3));
    }

    let store = FeatureStore::new(&root);
    for u in &manifest.utterances {
        let path = store.record_path(info.id, &manifest.dataset_id, &u.utterance_id);
        let header = read_feature_header(&path).map_err(|e| match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::MissingFeature {
                    utterance: u.utterance_id.clone(),
                    path,
                }
            }
            other => other,
        })?;
        if header.layer_count != info.layer_count() || header.model_id != info.id {
            return Err(Error::InvalidRecord(format!(
                "{} holds {} layers of {}, expected {} layers of {}",
                path.display(),
                header.layer_count,
                header.model_id,
                info.layer_count(),
                info.id
            )));
        }
    }
    println!(
        "{} utterances of {} extracted with {} ({} layers)",
        manifest.utterances.len(),
        manifest.dataset_id,
        info.id,
        info.layer_count()
    );
    Ok(0)
}

pub fn report(globals: &Globals, args: ReportArgs) -> Result<u8> {
    let report = load_report(&args.input)?;
    let out = out_dir(globals);
    for path in emit_report(&report, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(0)
}
