use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

use super::*;
use crate::features::FeatureTensor;
use crate::model::{ConvConfig, PoolConfig, PoolPlacement};

fn tiny_model() -> ModelConfig {
    ModelConfig {
        variant: Variant::Baseline,
        context: 2,
        n_mels: 12,
        conv1: ConvConfig { filters: 3, kh: 3, kw: 3, pad_h: 1, pad_w: 1 },
        conv2: ConvConfig { filters: 2, kh: 2, kw: 3, pad_h: 0, pad_w: 0 },
        pool: PoolConfig { kh: 1, kw: 2, sh: 1, sw: 2, placement: PoolPlacement::AfterConv1 },
        dense_layers: 1,
        dense_units: 8,
        bottleneck_units: 4,
        n_classes: 3,
        embedding_dim: 3,
        embedding_layer: 3,
        features: Default::default(),
    }
}

fn scenario(name: Regime, variant: Variant) -> TrainScenario {
    TrainScenario {
        name,
        variant,
        epochs: 3,
        batch_size: 16,
        learning_rate: 0.02,
        model: tiny_model(),
        ..Default::default()
    }
}

/// Class c raises mel bins 3c..3c+2; narrowband zeroes the top quarter.
fn toy_utterance(id: usize, bw: Bandwidth, n_frames: usize, rng: &mut ChaCha8Rng) -> Utterance {
    let dim = 12;
    let labels: Vec<u32> = (0..n_frames).map(|t| ((t / 4 + id) % 3) as u32).collect();
    let mut frames = vec![0.0; n_frames * dim];
    for t in 0..n_frames {
        for m in 0..dim {
            let bump = if m / 3 == labels[t] as usize { 1.0 } else { 0.0 };
            let v = bump + 0.3 * rng.random_range(-1.0..1.0);
            frames[t * dim + m] = if bw == Bandwidth::Narrowband && m >= 9 { -1.0 } else { v };
        }
    }
    Utterance {
        features: FeatureTensor {
            utterance_id: format!("{}_{id:03}", bw.short_name()),
            bandwidth: bw,
            n_frames,
            dim,
            frames,
        },
        labels: Some(labels),
    }
}

fn toy_corpus(n_wb: usize, n_nb: usize, n_frames: usize) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut out = Vec::new();
    for i in 0..n_wb {
        out.push(toy_utterance(i, Bandwidth::Wideband, n_frames, &mut rng));
    }
    for i in 0..n_nb {
        out.push(toy_utterance(n_wb + i, Bandwidth::Narrowband, n_frames, &mut rng));
    }
    out
}

fn count_by_bandwidth(utts: &[Utterance], batches: &[Vec<FrameRef>]) -> [usize; 2] {
    let mut n = [0; 2];
    for fr in batches.iter().flatten() {
        n[utts[fr.utt].bandwidth().flag() as usize] += 1;
    }
    n
}

#[test]
fn am1_trains_only_on_wideband() {
    let utts = toy_corpus(10, 10, 20);
    let s = scenario(Regime::AM1, Variant::Baseline);
    let split = split_data(&utts, &s).unwrap();
    assert!(split.train.iter().chain(&split.heldout).all(|&i| utts[i].bandwidth() == Bandwidth::Wideband));
    assert_eq!(split.heldout.len(), 1);
    let batches = compose_batches(&utts, &split.train, &s, 1).unwrap();
    assert_eq!(count_by_bandwidth(&utts, &batches), [9 * 20, 0]);
    let s2 = scenario(Regime::AM2, Variant::Baseline);
    let split = split_data(&utts, &s2).unwrap();
    assert!(split.train.iter().all(|&i| utts[i].bandwidth() == Bandwidth::Narrowband));
}

#[test]
fn am3_batches_mix_in_corpus_proportion() {
    let utts = toy_corpus(75, 25, 40);
    let s = TrainScenario { heldout_fraction: 0.0, batch_size: 64, ..scenario(Regime::AM3, Variant::Baseline) };
    let split = split_data(&utts, &s).unwrap();
    let batches = compose_batches(&utts, &split.train, &s, 1).unwrap();
    let [wb, nb] = count_by_bandwidth(&utts, &batches);
    let frac = wb as f64 / (wb + nb) as f64;
    assert!((frac - 0.75).abs() <= 0.02, "{frac}");
    // Shuffled globally, not bandwidth by bandwidth.
    let mixed = batches.iter().filter(|b| {
        let n = count_by_bandwidth(&utts, std::slice::from_ref(b));
        n[0] > 0 && n[1] > 0
    });
    assert!(mixed.count() * 10 >= batches.len() * 9);
    // Each frame exactly once per epoch.
    let mut seen: Vec<_> = batches.iter().flatten().map(|f| (f.utt, f.frame)).collect();
    seen.sort_unstable();
    seen.dedup();
    assert_eq!(seen.len(), 100 * 40);
    assert_ne!(batches, compose_batches(&utts, &split.train, &s, 2).unwrap());
}

#[test]
fn frame_stride_rotates_phase() {
    let utts = toy_corpus(2, 0, 10);
    let s = TrainScenario { frame_stride: 3, heldout_fraction: 0.0, ..scenario(Regime::AM1, Variant::Baseline) };
    let frames = |epoch| {
        let mut f: Vec<_> = compose_batches(&utts, &[0, 1], &s, epoch).unwrap().concat();
        f.sort_by_key(|f| (f.utt, f.frame));
        f.into_iter().map(|f| f.frame).collect::<Vec<_>>()
    };
    assert_eq!(frames(3), [0, 3, 6, 9, 0, 3, 6, 9]);
    assert_eq!(frames(1), [1, 4, 7, 1, 4, 7]);
}

#[test]
fn missing_bandwidth_is_a_config_error() {
    let utts = toy_corpus(6, 0, 10);
    let dir = tempdir().unwrap();
    let s = scenario(Regime::AM2, Variant::Baseline);
    let err = train(&s, &utts, FeatureScenario::Downsample8k, dir.path(), None).unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(err.to_string().contains("AM2"), "{err}");
}

#[test]
fn feature_scenario_must_match_regime() {
    let utts = toy_corpus(4, 4, 10);
    let dir = tempdir().unwrap();
    let s = scenario(Regime::AM4, Variant::Baseline);
    let err = train(&s, &utts, FeatureScenario::Native, dir.path(), None).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn sgd_momentum_by_hand() {
    let model = build_model(&tiny_model(), 3).unwrap();
    let mut params = model.params.clone();
    let mut sgd = Sgd::new(&params, 0.5, 0.9);
    let mut g = params.zeros_like();
    g.zip_apply(&params, |g, _| *g = 2.0).unwrap();
    sgd.step(&mut params, &g, 4).unwrap();
    sgd.step(&mut params, &g, 4).unwrap();
    // v1 = 0.5, p1 = p0 - 0.25; v2 = 0.95, p2 = p1 - 0.475.
    let mut expected = model.params.clone();
    expected.zip_apply(&model.params, |p, _| *p = *p - 0.25 - 0.475).unwrap();
    let mut diff = params.clone();
    diff.zip_apply(&expected, |a, b| *a -= b).unwrap();
    assert!(diff.max_abs() < 1e-15);
    assert!(sgd.velocity.max_abs() == 0.95);
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let model = build_model(&tiny_model(), 3).unwrap();
    let mut params = model.params.clone();
    let mut sgd = Sgd::new(&params, 0.0, 0.9);
    let mut g = params.zeros_like();
    g.zip_apply(&params, |g, p| *g = p * 7.0 + 1.0).unwrap();
    for _ in 0..3 {
        sgd.step(&mut params, &g, 5).unwrap();
    }
    assert_eq!(params, model.params);
}

#[test]
fn duplicated_batch_gives_identical_step() {
    let cfg = tiny_model().with_variant(Variant::EmbeddingsAndParallelConv);
    let model = build_model(&cfg, 4).unwrap();
    let utts = toy_corpus(3, 3, 12);
    let batch: Vec<FrameRef> = (0..6).map(|u| FrameRef { utt: u, frame: u + 2 }).collect();
    let doubled = [batch.clone(), batch.clone()].concat();
    let mut b1 = BatchBuffer { patches: Vec::new(), input_len: cfg.input_len() };
    let mut b2 = BatchBuffer { patches: Vec::new(), input_len: cfg.input_len() };
    let (_, g1) = model.batch_gradient(&b1.fill(&utts, &batch, cfg.context).unwrap()).unwrap();
    let (_, g2) = model.batch_gradient(&b2.fill(&utts, &doubled, cfg.context).unwrap()).unwrap();
    let (mut p1, mut p2) = (model.params.clone(), model.params.clone());
    let mut s1 = Sgd::new(&p1, 0.1, 0.9);
    let mut s2 = Sgd::new(&p2, 0.1, 0.9);
    s1.step(&mut p1, &g1, batch.len()).unwrap();
    s2.step(&mut p2, &g2, doubled.len()).unwrap();
    assert_eq!(p1, p2);
}

#[test]
fn wideband_only_training_leaves_narrowband_embedding_alone() {
    let utts = toy_corpus(6, 6, 16);
    let dir = tempdir().unwrap();
    let s = TrainScenario { epochs: 2, ..scenario(Regime::AM1, Variant::Embeddings) };
    let out = train(&s, &utts, FeatureScenario::Upsample16k, dir.path(), None).unwrap();
    let init = build_model(&s.model_config(), s.seed).unwrap();
    let (e_new, e_old) = (out.model.params.embedding.as_ref().unwrap(), init.params.embedding.as_ref().unwrap());
    assert_eq!(e_new.narrowband, e_old.narrowband);
    assert_ne!(e_new.wideband, e_old.wideband);
    assert_ne!(e_new.projection, e_old.projection);
}

#[test]
fn training_is_deterministic_and_loss_decreases() {
    let utts = toy_corpus(8, 8, 24);
    let s = TrainScenario { epochs: 5, learning_rate: 0.01, ..scenario(Regime::AM3, Variant::EmbeddingsAndParallelConv) };
    let (d1, d2) = (tempdir().unwrap(), tempdir().unwrap());
    let a = train(&s, &utts, FeatureScenario::Native, d1.path(), None).unwrap();
    let b = train(&s, &utts, FeatureScenario::Native, d2.path(), None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(fs::read(&a.final_model).unwrap(), fs::read(&b.final_model).unwrap());
    let losses: Vec<f64> = a.metrics.iter().map(|m| m.loss).collect();
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    assert!(a.metrics.last().unwrap().wb_frame_acc.unwrap() > 0.6);

    let tsv = fs::read_to_string(d1.path().join(METRICS_NAME)).unwrap();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 6);
    for e in 1..=5 {
        assert!(d1.path().join(epoch_checkpoint_name(e)).exists());
    }
}

#[test]
fn metrics_mark_missing_bandwidth() {
    let utts = toy_corpus(6, 6, 10);
    let dir = tempdir().unwrap();
    let s = TrainScenario { epochs: 1, ..scenario(Regime::AM1, Variant::Baseline) };
    train(&s, &utts, FeatureScenario::Upsample16k, dir.path(), None).unwrap();
    let tsv = fs::read_to_string(dir.path().join(METRICS_NAME)).unwrap();
    let row: Vec<&str> = tsv.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row.len(), 4);
    assert_eq!(row[3], "-");
}

#[test]
fn resume_is_bit_exact() {
    let utts = toy_corpus(6, 6, 16);
    let s = TrainScenario { epochs: 4, patience: 1, ..scenario(Regime::AM3, Variant::Embeddings) };
    let (full, resumed) = (tempdir().unwrap(), tempdir().unwrap());
    let a = train(&s, &utts, FeatureScenario::Native, full.path(), None).unwrap();
    let ckpt = full.path().join(epoch_checkpoint_name(2));
    let b = train(&s, &utts, FeatureScenario::Native, resumed.path(), Some(&ckpt)).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.metrics, b.metrics);
    let st_a = TrainState::load(&full.path().join(epoch_checkpoint_name(4))).unwrap();
    let st_b = TrainState::load(&resumed.path().join(epoch_checkpoint_name(4))).unwrap();
    assert_eq!(st_a.encode(), st_b.encode());

    let other = TrainScenario { seed: 9, ..s };
    let err = train(&other, &utts, FeatureScenario::Native, resumed.path(), Some(&ckpt)).unwrap_err();
    assert!(err.is_config(), "{err}");
}

#[test]
fn state_round_trip_and_corruption() {
    let utts = toy_corpus(4, 4, 10);
    let dir = tempdir().unwrap();
    let s = TrainScenario { epochs: 1, ..scenario(Regime::AM3, Variant::ParallelConv) };
    train(&s, &utts, FeatureScenario::Native, dir.path(), None).unwrap();
    let bytes = fs::read(dir.path().join(epoch_checkpoint_name(1))).unwrap();
    let st = TrainState::decode(&bytes).unwrap();
    assert_eq!(st.encode(), bytes);
    assert_eq!(st.epoch, 1);
    assert!(matches!(TrainState::decode(&bytes[..bytes.len() - 3]), Err(Error::Corruption(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(TrainState::decode(&bad), Err(Error::Format(_))));
}

#[test]
fn non_finite_loss_names_the_utterance() {
    let mut utts = toy_corpus(4, 0, 10);
    utts[2].features.frames[5 * 12 + 4] = f64::NAN;
    let dir = tempdir().unwrap();
    let s = TrainScenario { heldout_fraction: 0.0, ..scenario(Regime::AM1, Variant::Baseline) };
    let err = train(&s, &utts, FeatureScenario::Upsample16k, dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    assert!(err.to_string().contains(utts[2].id()), "{err}");
}

#[test]
fn sweep_needs_embeddings() {
    let utts = toy_corpus(4, 4, 10);
    let dir = tempdir().unwrap();
    let s = scenario(Regime::AM3, Variant::ParallelConv);
    let err = sweep_embedding_dim(&[2, 4], &s, &utts, &utts, FeatureScenario::Native, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Variant(_)), "{err}");
}

#[test]
fn sweep_reports_each_size() {
    let utts = toy_corpus(4, 4, 12);
    let dir = tempdir().unwrap();
    let s = TrainScenario { epochs: 1, ..scenario(Regime::AM3, Variant::Embeddings) };
    let report = sweep_embedding_dim(&[1, 5], &s, &utts, &utts, FeatureScenario::Native, dir.path()).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.0).collect::<Vec<_>>(), [1, 5]);
    let table = report.table(Metric::FrameErrorRate);
    assert!(table.text.contains("Embedding size"));
    assert_eq!(table.tsv.lines().count(), 3);
    assert!(dir.path().join("dim_5").join(FINAL_MODEL_NAME).exists());
}

#[test]
fn scenario_toml_round_trip() {
    let s = scenario(Regime::AM4, Variant::EmbeddingsAndParallelConv);
    assert_eq!(TrainScenario::from_toml(&s.to_toml()).unwrap(), s);
    let partial = TrainScenario::from_toml("name = \"AM2\"\nepochs = 7\n").unwrap();
    assert_eq!((partial.name, partial.epochs, partial.batch_size), (Regime::AM2, 7, 32));
    assert!(TrainScenario::from_toml("name = \"AM5\"").unwrap_err().is_config());
    assert!(TrainScenario::from_toml("bogus = 1").unwrap_err().is_config());
    assert_eq!("am3".parse::<Regime>().unwrap(), Regime::AM3);
}

#[test]
fn single_example_step_matches_hand_computation() {
    let cfg = ModelConfig { dense_layers: 0, n_classes: 2, bottleneck_units: 3, ..tiny_model() };
    let mut model = build_model(&cfg, 5).unwrap();
    let utts = toy_corpus(1, 0, 6);
    let mut buf = BatchBuffer { patches: Vec::new(), input_len: cfg.input_len() };
    let batch = [FrameRef { utt: 0, frame: 3 }];
    let ex = buf.fill(&utts, &batch, cfg.context).unwrap();
    let target = ex[0].target;

    let mut ws = model.workspace();
    model.forward_into(&mut ws, ex[0].patch, Bandwidth::Wideband).unwrap();
    let a = ws.conv_output().to_vec();
    let h = ws.layer_output(0).to_vec();
    let z = ws.logits().to_vec();
    let m = z[0].max(z[1]);
    let denom = (z[0] - m).exp() + (z[1] - m).exp();
    let delta: Vec<f64> = (0..2).map(|k| (z[k] - m).exp() / denom - f64::from(k == target)).collect();
    let (wb, wo) = (&model.params.dense[0], &model.params.dense[1]);
    let gh: Vec<f64> = (0..3).map(|j| (0..2).map(|k| wo.weight.data()[k * 3 + j] * delta[k]).sum()).collect();
    let lr = 0.1;
    let want_wo: Vec<f64> = (0..6).map(|i| wo.weight.data()[i] - lr * delta[i / 3] * h[i % 3]).collect();
    let want_bo: Vec<f64> = (0..2).map(|k| wo.bias.data()[k] - lr * delta[k]).collect();
    let n_in = a.len();
    let want_wb: Vec<f64> = (0..3 * n_in).map(|i| wb.weight.data()[i] - lr * gh[i / n_in] * a[i % n_in]).collect();
    let want_bb: Vec<f64> = (0..3).map(|j| wb.bias.data()[j] - lr * gh[j]).collect();

    let (_, g) = model.batch_gradient(&ex).unwrap();
    let mut sgd = Sgd::new(&model.params, lr, 0.9);
    sgd.step(&mut model.params, &g, 1).unwrap();
    let close = |got: &[f64], want: &[f64]| got.iter().zip(want).all(|(x, y)| (x - y).abs() <= 1e-12);
    assert!(close(model.params.dense[1].weight.data(), &want_wo));
    assert!(close(model.params.dense[1].bias.data(), &want_bo));
    assert!(close(model.params.dense[0].weight.data(), &want_wb));
    assert!(close(model.params.dense[0].bias.data(), &want_bb));
}

#[test]
fn separable_toy_loss_decreases_monotonically() {
    let cfg = ModelConfig { n_classes: 2, ..tiny_model() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let utts: Vec<Utterance> = (0..4)
        .map(|i| {
            let mut u = toy_utterance(i, Bandwidth::Wideband, 16, &mut rng);
            let labels: Vec<u32> = (0..16).map(|t| ((t / 4) % 2) as u32).collect();
            for t in 0..16 {
                let sign = if labels[t] == 0 { -1.0 } else { 1.0 };
                for m in 0..12 {
                    u.features.frames[t * 12 + m] = sign * (0.5 + 0.05 * m as f64) + 0.1 * rng.random_range(-1.0..1.0);
                }
            }
            u.labels = Some(labels);
            u
        })
        .collect();
    let s = TrainScenario {
        name: Regime::AM1,
        epochs: 50,
        batch_size: 8,
        learning_rate: 0.01,
        heldout_fraction: 0.0,
        model: cfg,
        ..Default::default()
    };
    let dir = tempdir().unwrap();
    let out = train(&s, &utts, FeatureScenario::Upsample16k, dir.path(), None).unwrap();
    let losses: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    assert!(losses[5..].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}
