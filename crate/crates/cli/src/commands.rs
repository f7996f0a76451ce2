use std::fs;
use std::path::Path;

use bandnet::eval::{compare_scenarios, evaluate, Metric};
use bandnet::features::{
    featurize_manifest, read_feature_file, read_manifest, write_feature_file, Bandwidth, FeatureFile,
    FeatureScenario, Frontend, FrontendConfig,
};
use bandnet::gradcheck::{check_variant, GradCheckConfig};
use bandnet::model::{load_model, ModelConfig, Variant};
use bandnet::synthcorpus::{synth_corpus, CorpusSpec};
use bandnet::trainer::{sweep_embedding_dim, train as run_training, Regime, TrainScenario};
use bandnet::{Error, Result};
use log::{info, warn};

use crate::{EvalArgs, FeaturizeArgs, GradcheckArgs, Status, SweepArgs, SynthArgs, TrainArgs};

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn parse_metric(s: &str) -> Result<Metric> {
    match s.to_ascii_lowercase().as_str() {
        "fer" => Ok(Metric::FrameErrorRate),
        "ter" => Ok(Metric::TokenErrorRate),
        _ => Err(Error::Config(format!("unknown metric {s:?} (expected fer or ter)"))),
    }
}

/// A feature scenario by name, or the one a regime prescribes.
fn parse_feature_scenario(s: &str) -> Result<FeatureScenario> {
    s.parse::<FeatureScenario>().or_else(|e| s.parse::<Regime>().map(Regime::feature_scenario).map_err(|_| e))
}

fn load_scenario(path: Option<&Path>) -> Result<TrainScenario> {
    match path {
        Some(p) => TrainScenario::from_toml(&read_text(p)?),
        None => Ok(TrainScenario::default()),
    }
}

pub fn synth(args: &SynthArgs) -> Result<Status> {
    let mut spec = match &args.spec {
        Some(p) => CorpusSpec::from_toml(&read_text(p)?)?,
        None => CorpusSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    spec.validate()?;
    info!("corpus spec:\n{}", spec.to_toml());
    let paths = synth_corpus(&spec, &args.out)?;
    let (wb, nb) = spec.train_counts();
    info!("train: {wb} WB + {nb} NB utterances -> {}", paths.train_manifest.display());
    let (wb, nb) = spec.test_counts();
    info!("test: {wb} WB + {nb} NB utterances -> {}", paths.test_manifest.display());
    Ok(Status::Success)
}

pub fn featurize(args: &FeaturizeArgs) -> Result<Status> {
    let scenario = parse_feature_scenario(&args.scenario)?;
    let entries = read_manifest(&args.manifest)?;
    let n_nb = entries.iter().filter(|e| e.bandwidth == Bandwidth::Narrowband).count();
    info!("featurizing {} utterances ({n_nb} NB) with the {scenario} scenario", entries.len());
    match scenario {
        FeatureScenario::Upsample16k if n_nb > 0 => info!("NB utterances are upsampled to 16 kHz before analysis"),
        FeatureScenario::Downsample8k if n_nb < entries.len() => {
            info!("WB utterances are downsampled to 8 kHz before analysis")
        }
        _ => {}
    }
    let frontend = Frontend::new(FrontendConfig::default())?;
    let utterances = featurize_manifest(&entries, &frontend, scenario)?;
    let frames: usize = utterances.iter().map(|u| u.n_frames()).sum();
    write_feature_file(&args.out, &FeatureFile { scenario, utterances })?;
    info!("wrote {frames} frames to {}", args.out.display());
    Ok(Status::Success)
}

fn resolve_scenario(
    path: Option<&Path>,
    regime: Option<&str>,
    variant: Option<&str>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<TrainScenario> {
    let mut s = load_scenario(path)?;
    if let Some(r) = regime {
        s.name = r.parse()?;
    }
    if let Some(v) = variant {
        s.variant = v.parse()?;
    }
    if let Some(e) = epochs {
        s.epochs = e;
    }
    if let Some(seed) = seed {
        s.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

pub fn train(args: &TrainArgs) -> Result<Status> {
    let scenario = resolve_scenario(
        args.scenario.as_deref(),
        args.regime.as_deref(),
        args.variant.as_deref(),
        args.epochs,
        args.seed,
    )?;
    info!("root seed {}; resolved scenario:\n{}", scenario.seed, scenario.to_toml());
    let data = read_feature_file(&args.features)?;
    let outcome = run_training(&scenario, &data.utterances, data.scenario, &args.out, args.resume.as_deref())?;
    info!("final model: {}", outcome.final_model.display());
    Ok(Status::Success)
}

fn check_scenario(model_features: FeatureScenario, data: FeatureScenario) -> Result<()> {
    if model_features != data {
        return Err(Error::Config(format!(
            "the model was trained on {model_features} features but the test data holds {data} features; \
             featurize the test set with --scenario {model_features}"
        )));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<Status> {
    let metric = parse_metric(&args.metric)?;
    let model = load_model(&args.model)?;
    let expected = model.config().features;
    let utterances = match (&args.features, &args.manifest) {
        (Some(path), _) => {
            let data = read_feature_file(path)?;
            check_scenario(expected, data.scenario)?;
            data.utterances
        }
        (None, Some(path)) => {
            let entries = read_manifest(path)?;
            featurize_manifest(&entries, &Frontend::new(FrontendConfig::default())?, expected)?
        }
        (None, None) => return Err(Error::Config("eval needs --features or --manifest".into())),
    };
    let label = args.label.clone().unwrap_or_else(|| model.variant().to_string());
    let report = evaluate(&model, &utterances, &label)?;
    let table = compare_scenarios(&[(label, report.clone())], metric);
    println!("{}", table.text);
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_text(&out.join("report.tsv"), &report.to_tsv())?;
        write_text(&out.join("table.txt"), &table.text)?;
        write_text(&out.join("table.tsv"), &table.tsv)?;
        info!("reports written to {}", out.display());
    }
    Ok(Status::Success)
}

pub fn gradcheck(args: &GradcheckArgs) -> Result<Status> {
    let variants: Vec<Variant> = if args.variant == "all" {
        Variant::ALL.to_vec()
    } else {
        vec![args.variant.parse()?]
    };
    let base = match &args.config {
        Some(p) => Some(ModelConfig::from_toml(&read_text(p)?)?),
        None => None,
    };
    let check = GradCheckConfig {
        tol: args.tol,
        max_elements: if args.elements == 0 { usize::MAX } else { args.elements },
        corrupt_tensor: args.corrupt_tensor.clone(),
        ..GradCheckConfig::default()
    };
    if check.corrupt_tensor.is_some() {
        warn!("gradient of {} deliberately corrupted", args.corrupt_tensor.as_deref().unwrap_or_default());
    }
    let mut all_passed = true;
    for variant in variants {
        let config = match &base {
            Some(c) => c.with_variant(variant),
            None => ModelConfig::reduced(variant),
        };
        for seed in args.seed..args.seed + args.seeds {
            let report = check_variant(&config, seed, args.batch, &check)?;
            print!("{report}");
            if !report.passed() {
                all_passed = false;
                for t in report.failures() {
                    println!("FAILED: {variant} seed {seed} tensor {}", t.name);
                }
            }
        }
    }
    println!("gradcheck {}", if all_passed { "PASSED" } else { "FAILED" });
    Ok(if all_passed { Status::Success } else { Status::Failed })
}

pub fn sweep(args: &SweepArgs) -> Result<Status> {
    let metric = parse_metric(&args.metric)?;
    let mut scenario = resolve_scenario(args.scenario.as_deref(), None, None, args.epochs, args.seed)?;
    if args.scenario.is_none() {
        scenario.variant = Variant::Embeddings;
    }
    info!("root seed {}; resolved scenario:\n{}", scenario.seed, scenario.to_toml());
    let train_data = read_feature_file(&args.train)?;
    let test_data = read_feature_file(&args.test)?;
    check_scenario(train_data.scenario, test_data.scenario)?;
    let report = sweep_embedding_dim(
        &args.dims,
        &scenario,
        &train_data.utterances,
        &test_data.utterances,
        train_data.scenario,
        &args.out,
    )?;
    let table = report.table(metric);
    println!("{}", table.text);
    write_text(&args.out.join("sweep.txt"), &table.text)?;
    write_text(&args.out.join("sweep.tsv"), &table.tsv)?;
    Ok(Status::Success)
}
