use par::chem::{gen_synthetic, read_dataset, LoadOptions, PropertyDataset, SplitSpec};
use par::encoder::EncoderConfig;
use par::meta::store::PHI;
use par::meta::{
    checkpoint_from_str, checkpoint_to_string, classify, dump_task, episode_loss, inner_finetune, meta_train,
    roc_auc, sample_episode, Ablation, ParameterStore, Phase, TrainConfig,
};
use par::nn::Parameters;
use par::tensor::{sgd_step, AdamConfig, AdamState, Tensor};
use par::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> TrainConfig {
    let mut encoder = EncoderConfig::desk();
    encoder.num_layers = 1;
    encoder.hidden_dim = 8;
    encoder.dropout = 0.0;
    TrainConfig {
        k: 3,
        n_query: 4,
        encoder,
        projection_dim: 8,
        projection_dropout: 0.0,
        max_episodes: 3,
        meta_batch: 2,
        val_episodes: 2,
        ..TrainConfig::default()
    }
}

fn small_dataset() -> PropertyDataset {
    gen_synthetic(5, 80, 3, 11).unwrap()
}

fn init(cfg: &TrainConfig, seed: u64) -> ParameterStore<f64> {
    ParameterStore::init(cfg, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn episode(ds: &PropertyDataset, cfg: &TrainConfig, seed: u64) -> par::meta::Episode {
    let p = ds.meta_train[seed as usize % ds.meta_train.len()];
    sample_episode(ds, p, cfg.k, cfg.n_query, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

#[test]
fn ten_shot_support_is_balanced_and_disjoint_from_query() {
    let ds = gen_synthetic(25, 400, 10, 0).unwrap();
    for seed in 0..10 {
        let p = ds.meta_train[seed % ds.meta_train.len()];
        let ep = sample_episode(&ds, p, 10, 16, &mut ChaCha8Rng::seed_from_u64(seed as u64)).unwrap();
        assert_eq!(ep.support.len(), 20);
        assert_eq!(ep.support_labels.iter().filter(|&&y| y).count(), 10);
        assert_eq!(ep.query.len(), 16);
        assert_eq!(ep.query_labels.iter().filter(|&&y| y).count(), 8);
        assert!(ep.query.iter().all(|q| !ep.support.contains(q)));
        for (&m, &y) in ep.support.iter().chain(&ep.query).zip(ep.support_labels.iter().chain(&ep.query_labels)) {
            assert_eq!(ds.labels[m][p], Some(y));
        }
        let again = sample_episode(&ds, p, 10, 16, &mut ChaCha8Rng::seed_from_u64(seed as u64)).unwrap();
        assert_eq!(ep, again);
    }
}

#[test]
fn one_active_one_inactive_leaves_no_query() {
    let csv = "smiles,a,b\nCC,1,1\nCO,0,1\nCN,,0\n";
    let opts = LoadOptions {
        split: SplitSpec::Last(1),
        min_per_class: 1,
    };
    let ds = read_dataset(csv.as_bytes(), &opts).unwrap();
    let ep = sample_episode(&ds, 0, 1, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(ep.support.len(), 2);
    assert!(ep.query.is_empty());
    let err = sample_episode(&ds, 0, 2, 16, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
    assert!(matches!(err, Error::TaskUnusable(_)));

    let cfg = TrainConfig { k: 1, ..tiny_config() };
    let one_property = PropertyDataset {
        meta_train: vec![0],
        meta_test: vec![1],
        ..ds
    };
    assert!(matches!(meta_train::<f64>(&one_property, &cfg), Err(Error::Config(_))));
}

#[test]
fn classifier_examples() {
    let h = Tensor::from_rows(&[[0.3, -1.2], [2.0, 0.5]]);
    let zero = classify(&h, &Tensor::zeros(&[2, 2]), &Tensor::zeros(&[1, 2])).unwrap();
    assert!(zero.data().iter().all(|&v| v == 0.5));

    let one = Tensor::from_rows(&[[1.0]]);
    let w = Tensor::from_rows(&[[3f64.ln(), 0.0]]);
    let y = classify(&one, &w, &Tensor::zeros(&[1, 2])).unwrap();
    assert!((y.get(0, 0) - 0.75).abs() < 1e-15 && (y.get(0, 1) - 0.25).abs() < 1e-15);
}

#[test]
fn losses_are_finite_at_initialization() {
    let ds = gen_synthetic(25, 400, 10, 0).unwrap();
    let cfg = TrainConfig {
        encoder: EncoderConfig::desk(),
        ..TrainConfig::default()
    };
    for seed in 0..5 {
        let store = init(&cfg, seed);
        let ep = sample_episode(&ds, ds.meta_train[0], 10, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        for phase in [Phase::Support, Phase::Query] {
            let r = episode_loss(&ds, &ep, &store.theta, &store.phi, &cfg, phase, None).unwrap();
            assert!(r.total.is_finite() && r.cross_entropy > 0.0 && r.reg >= 0.0);
            assert!(r.grads.values().all(Tensor::all_finite));
        }
    }
}

#[test]
fn without_the_relation_graph_the_loss_is_cross_entropy_only() {
    let ds = small_dataset();
    let mut cfg = tiny_config();
    cfg.ablation.no_r = true;
    let store = init(&cfg, 0);
    let r = episode_loss(&ds, &episode(&ds, &cfg, 0), &store.theta, &store.phi, &cfg, Phase::Query, None).unwrap();
    assert_eq!(r.reg, 0.0);
    assert_eq!(r.total, r.cross_entropy);
}

#[test]
fn a_single_separable_episode_can_be_fitted() {
    let ds = small_dataset();
    let cfg = tiny_config();
    let ep = episode(&ds, &cfg, 1);
    let mut store = init(&cfg, 1);
    let mut adam = AdamState::new(AdamConfig {
        lr: 0.02,
        ..AdamConfig::default()
    });
    let mut ce = f64::INFINITY;
    for _ in 0..600 {
        let r = episode_loss(&ds, &ep, &store.theta, &store.phi, &cfg, Phase::Support, None).unwrap();
        ce = r.cross_entropy;
        if ce < 1e-3 {
            break;
        }
        let mut params = store.named("");
        adam.step(&mut params, &r.grads).unwrap();
        store.load_named("", &params).unwrap();
    }
    assert!(ce < 1e-3, "cross-entropy stalled at {ce}");
}

#[test]
fn zero_inner_rate_keeps_phi_and_the_store_is_never_touched() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        inner_lr: 0.0,
        inner_steps: 3,
        ..tiny_config()
    };
    let store = init(&cfg, 2);
    let before = store.clone();
    let a = inner_finetune(&ds, &episode(&ds, &cfg, 2), &store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(a.phi, store.phi);
    assert!(a.theta.is_none());
    assert_eq!(store, before);
}

#[test]
fn one_inner_step_is_one_sgd_step_on_phi() {
    let ds = small_dataset();
    let cfg = tiny_config();
    let store = init(&cfg, 3);
    let ep = episode(&ds, &cfg, 3);
    let a = inner_finetune(&ds, &ep, &store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let r = episode_loss(&ds, &ep, &store.theta, &store.phi, &cfg, Phase::Support, None).unwrap();
    let expect = sgd_step(&store.phi.named(PHI), &r.grads, cfg.inner_lr).unwrap();
    assert_eq!(a.phi.named(PHI), expect);
    assert_eq!(a.support_loss, r.total);
}

#[test]
fn tune_all_adapts_a_local_copy_of_theta() {
    let ds = small_dataset();
    let mut cfg = tiny_config();
    cfg.ablation.tune_all = true;
    let store = init(&cfg, 4);
    let before = store.clone();
    let a = inner_finetune(&ds, &episode(&ds, &cfg, 4), &store, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_ne!(a.theta.as_ref().unwrap(), &store.theta);
    assert_eq!(store, before);
}

#[test]
fn one_inner_step_usually_lowers_support_loss() {
    let ds = gen_synthetic(25, 400, 10, 0).unwrap();
    let cfg = TrainConfig {
        encoder: EncoderConfig {
            dropout: 0.0,
            ..EncoderConfig::desk()
        },
        projection_dropout: 0.0,
        ..TrainConfig::default()
    };
    let mut lower = 0;
    for seed in 0..20 {
        let store = init(&cfg, seed);
        let p = ds.meta_train[seed as usize % ds.meta_train.len()];
        let ep = sample_episode(&ds, p, 10, 16, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = inner_finetune(&ds, &ep, &store, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let after = episode_loss(&ds, &ep, &store.theta, &a.phi, &cfg, Phase::Support, None).unwrap();
        lower += usize::from(after.total < a.support_loss);
    }
    assert!(lower > 10, "{lower} of 20 seeds descended");
}

fn fingerprint(ds: &PropertyDataset, cfg: &TrainConfig) -> Vec<f64> {
    let store = init(cfg, 5);
    let ep = episode(ds, cfg, 5);
    let mols: Vec<_> = ep.support.iter().map(|&i| &ds.molecules[i]).collect();
    let ids: Vec<String> = ep.support.iter().map(|i| i.to_string()).collect();
    let d = dump_task(&store, cfg, "probe", &ids, &mols, &ep.support_labels, false, &mut ChaCha8Rng::seed_from_u64(0))
        .unwrap();
    let mut out: Vec<f64> = [&d.p, &d.h, &d.a_hat].into_iter().flatten().flatten().copied().collect();
    out.push(episode_loss(ds, &ep, &store.theta, &store.phi, cfg, Phase::Query, None).unwrap().total);
    out
}

#[test]
fn every_ablation_changes_the_forward_pass() {
    let ds = small_dataset();
    let base = tiny_config();
    let full = fingerprint(&ds, &base);
    for name in Ablation::NAMES {
        let mut cfg = base.clone();
        cfg.ablation.enable(name).unwrap();
        assert_ne!(fingerprint(&ds, &cfg), full, "{name} left the probe unchanged");
    }
}

#[test]
fn ablations_compose() {
    let ds = small_dataset();
    for (i, a) in Ablation::NAMES.iter().enumerate() {
        for b in &Ablation::NAMES[i + 1..] {
            let mut cfg = tiny_config();
            cfg.ablation = format!("{a},{b}").parse().unwrap();
            let f = fingerprint(&ds, &cfg);
            assert!(f.iter().all(|v| v.is_finite()), "{a}+{b}");
        }
    }
}

#[test]
fn zero_episodes_returns_the_initialization() {
    let ds = small_dataset();
    let cfg = TrainConfig {
        max_episodes: 0,
        ..tiny_config()
    };
    let (store, history) = meta_train::<f64>(&ds, &cfg).unwrap();
    assert!(history.episodes.is_empty() && history.validation.is_empty());
    assert_eq!(store, ParameterStore::init(&cfg, &mut par::rng::stream(cfg.seed, par::rng::Stream::Init, 0)));
}

#[test]
fn training_is_deterministic_and_only_moves_theta_and_phi() {
    let ds = small_dataset();
    let cfg = tiny_config();
    let (a, ha) = meta_train::<f64>(&ds, &cfg).unwrap();
    let (b, hb) = meta_train::<f64>(&ds, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    assert_eq!(ha.episodes.len(), cfg.max_episodes * cfg.meta_batch);
    let names: Vec<String> = a.named("").into_keys().collect();
    assert!(names.iter().all(|n| n.starts_with("theta.") || n.starts_with("phi.")));
    let mut buf = Vec::new();
    ha.write_jsonl(&mut buf).unwrap();
    let lines = String::from_utf8(buf).unwrap();
    assert_eq!(lines.lines().count(), ha.episodes.len() + ha.validation.len());
}

#[test]
fn checkpoints_round_trip_bit_exactly() {
    let ds = small_dataset();
    let cfg = tiny_config();
    let (store, _) = meta_train::<f64>(&ds, &cfg).unwrap();
    let text = checkpoint_to_string(&store, &cfg).unwrap();
    let (back, back_cfg) = checkpoint_from_str::<f64>(&text).unwrap();
    assert_eq!(back, store);
    assert_eq!(back_cfg, cfg);
    assert!(matches!(checkpoint_from_str::<f64>("{}"), Err(Error::Checkpoint(_))));
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]), Some(1.0));
    assert_eq!(roc_auc(&[0.2, 0.8], &[true, false]), Some(0.0));
    assert_eq!(roc_auc(&[0.4; 6], &[true, false, true, false, false, true]), Some(0.5));
    assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
}
