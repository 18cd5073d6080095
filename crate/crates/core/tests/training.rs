use hbct::autodiff::{finite_difference, Real, Tape};
use hbct::config::{ExperimentConfig, ScenarioKind};
use hbct::encoder::EncoderModel;
use hbct::encoder::{forward_with, train_new, train_old, TrainConfig};
use hbct::evaluation::embed_split;
use hbct::losses::{base_loss, MlrHead};
use hbct::manifold::{self, ManifoldConfig};
use hbct::scenarios::{archs, median, scenario_slices, seed_dataset};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Base loss of one sample as a function of the encoder parameters, through
/// rescaling, clipping and the exponential map.
fn sample_loss<S: Real>(
    model: &EncoderModel,
    head: &MlrHead,
    params: &[S],
    x: &[f64],
    y: usize,
    zeta: f64,
    cfg: &ManifoldConfig,
) -> S {
    let z = forward_with(model.layers(), params, x);
    let h = manifold::expm_origin(&manifold::rescale_clip(&z, zeta), cfg);
    let rows: Vec<Vec<S>> = head
        .flat()
        .chunks(head.dim())
        .map(|r| r.iter().map(|&v| params[0].constant(v)).collect())
        .collect();
    base_loss(&h, y, &rows, cfg).unwrap()
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = ManifoldConfig::new(0.7, 3).unwrap();
    let model = EncoderModel::init(5, &[6, 4], 3, 0, &mut rng).unwrap();
    let head = MlrHead::new(vec![
        vec![0.3, -0.2, 0.5],
        vec![-0.4, 0.1, 0.2],
        vec![0.0, 0.6, -0.3],
    ])
    .unwrap();
    let x = [0.4, -1.2, 0.7, 0.1, 0.9];
    for zeta in [0.3, 5.0] {
        let tape = Tape::new();
        let vars = tape.vars(model.params());
        let loss = sample_loss(&model, &head, &vars, &x, 1, zeta, &cfg);
        let ad = tape.backward(loss).unwrap().wrt_all(&vars);
        let fd = finite_difference(
            |p| Ok(sample_loss(&model, &head, p, &x, 1, zeta, &cfg)),
            model.params(),
            1e-6,
        )
        .unwrap();
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
        let err = ad
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
        assert!(
            err / scale <= 1e-5,
            "zeta {zeta}: relative error {}",
            err / scale
        );
    }
}

#[test]
fn training_loss_decreases() {
    let cfg = ExperimentConfig::default();
    let ds = seed_dataset(&cfg, 3).unwrap();
    let mcfg = cfg.manifold().unwrap();
    let train = TrainConfig {
        epochs: 30,
        seed: 3,
        ..cfg.train.clone()
    };
    let t = train_old(
        &ds.train,
        ds.num_classes,
        &cfg.scenario.old_arch,
        &mcfg,
        &cfg.clip,
        &train,
    )
    .unwrap();
    let (first, last) = (t.epoch_losses[0], *t.epoch_losses.last().unwrap());
    assert!(last < first, "loss went from {first} to {last}");
}

#[test]
fn new_generation_is_more_certain_and_within_its_clip() {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.kind = ScenarioKind::NewArch;
    let seed = 0;
    let mcfg = cfg.manifold().unwrap();
    let ds = seed_dataset(&cfg, seed).unwrap();
    let (old_slice, new_slice) = scenario_slices(&cfg, &ds, seed);
    let (old_arch, new_arch) = archs(&cfg);
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let old = train_old(
        &old_slice,
        ds.num_classes,
        old_arch,
        &mcfg,
        &cfg.clip,
        &train,
    )
    .unwrap();
    let new = train_new(
        &new_slice,
        ds.num_classes,
        new_arch,
        &old.model,
        &cfg.alignment,
        &mcfg,
        &cfg.clip,
        &train,
    )
    .unwrap();

    let zeta_new = cfg.clip.zeta(1);
    let mut max_norm = 0.0f64;
    for x in &ds.gallery.features {
        let z = manifold::rescale_clip(&new.model.forward(x), zeta_new);
        max_norm = max_norm.max(z.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    assert!(max_norm <= zeta_new * (1.0 + 1e-12));

    let u = |m: &EncoderModel| {
        let set = embed_split(
            m,
            &ds.gallery.features,
            &ds.gallery.labels,
            &cfg.clip,
            &mcfg,
        )
        .unwrap();
        median(set.rows().iter().map(|r| {
            let p = manifold::LorentzPoint::from_ambient(r, &mcfg).unwrap();
            manifold::uncertainty(&p, &mcfg)
        }))
        .unwrap()
    };
    let (u_old, u_new) = (u(&old.model), u(&new.model));
    assert!(
        u_new <= u_old,
        "median uncertainty new {u_new} vs old {u_old}"
    );
}
