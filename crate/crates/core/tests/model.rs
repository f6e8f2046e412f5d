mod common;

use common::{rand_t, rng};
use mmfuse::encoders::backbone::{image_encode, BackboneConfig, TOY_GEOMETRY};
use mmfuse::encoders::{head_logits, tabular_encode};
use mmfuse::model::{FusionMode, Model, ModelConfig, ModuleCall};
use mmfuse::training::{predict, synth_generate, train, AugmentConfig, SynthConfig, TrainConfig};
use mmfuse::{Error, ParamStore, Tape};

fn small_config(fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            geometry: TOY_GEOMETRY,
            widths: [4, 8, 16],
            reduce_width: 8,
            feature_dim: 16,
            use_e3d_msca: true,
            reduction: 2,
            dropout: 0.5,
        },
        kan_hidden: 8,
        pyramid_dims: [16, 8, 4],
        token_dim: 4,
        heads: 2,
        fusion,
        ..Default::default()
    }
}

fn run(model: &Model, store: &ParamStore<f64>, batch: usize, seed: u64) -> (Vec<f64>, Vec<ModuleCall>) {
    let mut tape = Tape::inference();
    let v = tape.constant(rand_t(&[batch, 1, 4, 16, 16], seed));
    let t = tape.constant(rand_t(&[batch, 17], seed + 1));
    let tab = model.mode().uses_tabular().then_some(t);
    let mut trace = Vec::new();
    let z = model.forward_traced(&mut tape, store, v, tab, None, &mut trace).unwrap();
    (tape.value(z).data().to_vec(), trace)
}

#[test]
fn every_mode_produces_one_logit_per_sample() {
    for mode in FusionMode::ALL {
        let mut store = ParamStore::new();
        let model = Model::init(&mut store, small_config(mode), &mut rng(1)).unwrap();
        let (z, _) = run(&model, &store, 3, 2);
        assert_eq!(z.len(), 3, "{mode}");
        assert!(z.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn modes_register_only_their_parameters() {
    let prefixes = |mode| {
        let mut store = ParamStore::<f64>::new();
        Model::init(&mut store, small_config(mode), &mut rng(3)).unwrap();
        let mut p: Vec<String> = store.ids().map(|id| store.name(id).split('.').next().unwrap().to_string()).collect();
        p.dedup();
        p
    };
    assert_eq!(prefixes(FusionMode::Msca), ["image", "tabular", "msca", "fusion_head"]);
    assert_eq!(prefixes(FusionMode::CrossAttention), ["image", "tabular", "cross", "fusion_head"]);
    assert_eq!(prefixes(FusionMode::LateFusion), ["image", "tabular", "image_head", "tabular_head"]);
    assert_eq!(prefixes(FusionMode::ImageOnly), ["image", "image_head"]);
}

#[test]
fn module_traces_per_mode() {
    use ModuleCall::*;
    let trace = |mode| {
        let mut store = ParamStore::new();
        let model = Model::init(&mut store, small_config(mode), &mut rng(4)).unwrap();
        run(&model, &store, 2, 5).1
    };
    assert_eq!(
        trace(FusionMode::Msca),
        [ImageEncode, TabularEncode, PyramidProject, FuseScale { dim: 16 }, FuseScale { dim: 8 }, FuseScale { dim: 4 }, BsfMerge, BsfMerge, FusionHead]
    );
    let cross = trace(FusionMode::CrossAttention);
    assert_eq!(cross, [ImageEncode, TabularEncode, FuseScale { dim: 16 }, FusionHead]);
    assert_eq!(trace(FusionMode::LateFusion), [ImageEncode, TabularEncode, ImageHead, TabularHead]);
    assert_eq!(trace(FusionMode::ImageOnly), [ImageEncode, ImageHead]);
}

#[test]
fn cross_attention_at_default_width_fuses_once_at_full_dim() {
    let mut cfg = ModelConfig { fusion: FusionMode::CrossAttention, ..Default::default() };
    cfg.backbone.geometry = TOY_GEOMETRY;
    cfg.backbone.widths = [4, 8, 16];
    cfg.backbone.reduction = 2;
    let mut store = ParamStore::new();
    let model = Model::init(&mut store, cfg, &mut rng(6)).unwrap();
    let (_, trace) = run(&model, &store, 1, 7);
    let fuses: Vec<_> = trace.iter().filter(|c| matches!(c, ModuleCall::FuseScale { .. })).collect();
    assert_eq!(fuses, [&ModuleCall::FuseScale { dim: 256 }]);
    assert!(!trace.contains(&ModuleCall::BsfMerge));
}

#[test]
fn late_fusion_is_the_mean_of_the_branch_logits() {
    let mut store = ParamStore::new();
    let model = Model::init(&mut store, small_config(FusionMode::LateFusion), &mut rng(8)).unwrap();
    let (z, _) = run(&model, &store, 4, 9);

    let mut tape = Tape::inference();
    let v = tape.constant(rand_t(&[4, 1, 4, 16, 16], 9));
    let t = tape.constant(rand_t(&[4, 17], 10));
    let fi = image_encode(&mut tape, &store, v, &model.image, None).unwrap();
    let ft = tabular_encode(&mut tape, &store, t, model.tabular.as_ref().unwrap()).unwrap();
    let zi = head_logits(&mut tape, &store, fi, model.image_head.as_ref().unwrap()).unwrap();
    let zt = head_logits(&mut tape, &store, ft, model.tabular_head.as_ref().unwrap()).unwrap();
    for b in 0..4 {
        let want = 0.5 * (tape.value(zi).data()[b] + tape.value(zt).data()[b]);
        assert!((z[b] - want).abs() <= 1e-12);
    }
}

#[test]
fn configuration_errors() {
    let mut cfg = small_config(FusionMode::Msca);
    cfg.pyramid_dims = [8, 4, 2];
    assert!(matches!(Model::init(&mut ParamStore::<f64>::new(), cfg, &mut rng(0)), Err(Error::Config(_))));
    let mut cfg = small_config(FusionMode::CrossAttention);
    cfg.token_dim = 5;
    assert!(matches!(Model::init(&mut ParamStore::<f64>::new(), cfg, &mut rng(0)), Err(Error::Config(_))));
    assert!(matches!("early_fusion".parse::<FusionMode>(), Err(Error::Config(_))));
    for mode in FusionMode::ALL {
        assert_eq!(mode.as_str().parse::<FusionMode>().unwrap(), mode);
    }

    let mut store = ParamStore::new();
    let model = Model::init(&mut store, small_config(FusionMode::Msca), &mut rng(0)).unwrap();
    let mut tape = Tape::inference();
    let v = tape.constant(rand_t(&[1, 1, 4, 16, 16], 1));
    assert!(matches!(model.forward(&mut tape, &store, v, None, None), Err(Error::Contract(_))));
}

#[test]
fn short_training_run_is_deterministic_and_reports_every_epoch() {
    let data = synth_generate(&SynthConfig { n_majority: 16, n_minority: 8, seed: 2, ..Default::default() }).unwrap();
    let cfg = TrainConfig { epochs: 2, lr: 0.01, seed: 2, ..Default::default() };
    let go = || {
        let mut store = ParamStore::<f64>::new();
        let model = Model::init(&mut store, small_config(FusionMode::Msca), &mut rng(2)).unwrap();
        let mut seen = Vec::new();
        let out = train(&model, store, &data, &cfg, |r| seen.push(r.epoch)).unwrap();
        (model, out, seen)
    };
    let (model, a, seen) = go();
    let (_, b, _) = go();
    assert_eq!(seen, [1, 2]);
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.last_test, b.last_test);
    assert!(a.epochs.iter().all(|e| e.train_loss.is_finite()));
    assert!(a.best_epoch >= 1 && a.best_epoch <= 2);
    assert_eq!(a.last_test.ids.len(), data.splits.test.len());
    let again = predict(&model, &a.last, &data, &data.splits.test, &a.standardizer, &AugmentConfig::default()).unwrap();
    assert_eq!(again, a.last_test);
}

#[test]
fn absurd_learning_rate_is_reported_as_divergence() {
    let data = synth_generate(&SynthConfig { n_majority: 16, n_minority: 8, seed: 3, ..Default::default() }).unwrap();
    let cfg = TrainConfig { epochs: 3, lr: 1e200, seed: 3, ..Default::default() };
    let mut store = ParamStore::<f64>::new();
    let model = Model::init(&mut store, small_config(FusionMode::LateFusion), &mut rng(3)).unwrap();
    match train(&model, store, &data, &cfg, |_| {}) {
        Err(Error::Diverged { epoch, step, .. }) => assert!(epoch >= 1 && step >= 1),
        other => panic!("{other:?}"),
    }
}
