use std::path::Path;

use cellbloom_core::harness::{generate_synthetic_domains, SyntheticDomainSpec};
use cellbloom_core::imaging::{Image, ImageSet};
use cellbloom_core::manifest::{
    split_manifest, CellClass, ClassPairMap, DatasetManifest, Domain, SplitRatios,
};
use cellbloom_core::transfer::{
    adversarial_loss, cycle_loss, read_history, train_pair, train_pair_on, CycleNets, Direction, TrainOptions,
    TransferCheckpoint, TransferConfig, TransferModel, Translator,
};
use cellbloom_core::CoreError;
use cellbloom_nn::{Mode, Parameters, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_config(seed: u64) -> TransferConfig {
    let mut cfg = TransferConfig::for_pair(CellClass::MastCell, &ClassPairMap::default());
    cfg.image_size = 16;
    cfg.batch_size = 4;
    cfg.epochs = 4;
    cfg.constant_lr_epochs = 2;
    cfg.generator.base_width = 4;
    cfg.generator.residual_blocks = 1;
    cfg.discriminator.base_width = 4;
    cfg.discriminator.stride2_layers = 2;
    cfg.pool_capacity = 6;
    cfg.seed = seed;
    cfg
}

fn random_images(n: usize, size: usize, seed: u64) -> Vec<Image> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let data = (0..3 * size * size).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            Tensor::from_vec(&[3, size, size], data).unwrap()
        })
        .collect()
}

fn fixture(dir: &Path, per_class: usize) -> (DatasetManifest, DatasetManifest) {
    let spec = SyntheticDomainSpec {
        per_class,
        image_size: 16,
        ..SyntheticDomainSpec::default()
    };
    let (c, f) = generate_synthetic_domains(&spec, dir).unwrap();
    (
        split_manifest(&c, SplitRatios::default(), 1).unwrap(),
        split_manifest(&f, SplitRatios::default(), 1).unwrap(),
    )
}

fn params(ck: &mut TransferCheckpoint) -> Vec<f32> {
    let mut out = Vec::new();
    ck.nets.visit_params("", &mut |_, p| out.extend_from_slice(p.value.data()));
    out
}

#[test]
fn one_epoch_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1);
    cfg.epochs = 1;
    cfg.constant_lr_epochs = 1;
    let cells = ImageSet::Memory(random_images(4, 16, 1));
    let flowers = ImageSet::Memory(random_images(4, 16, 2));
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        ..TrainOptions::default()
    };
    let ck = train_pair_on(&cfg, &cells, &flowers, &opts).unwrap();
    assert_eq!(ck.epoch, 1);
    assert_eq!(ck.history.len(), 1);
    for f in ["config.json", "state.json", "history.csv", "g_ab.safetensors", "g_ba.safetensors", "d_a.safetensors", "d_b.safetensors"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let header = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "epoch,loss_G_adv_ab,loss_G_adv_ba,loss_cycle_a,loss_cycle_b,loss_D_a,loss_D_b,lr"
    );
    let loaded = TransferCheckpoint::load(dir.path()).unwrap();
    assert_eq!(loaded.epoch, 1);
    assert_eq!(read_history(&dir.path().join("history.csv")).unwrap(), ck.history);
}

#[test]
fn resume_continues_identically() {
    let cfg = small_config(3);
    let cells = ImageSet::Memory(random_images(6, 16, 3));
    let flowers = ImageSet::Memory(random_images(4, 16, 4));
    let mut straight = train_pair_on(&cfg, &cells, &flowers, &TrainOptions::default()).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: true,
        until_epoch: Some(2),
        ..TrainOptions::default()
    };
    let first = train_pair_on(&cfg, &cells, &flowers, &opts).unwrap();
    assert_eq!(first.epoch, 2);
    opts.until_epoch = None;
    let mut resumed = train_pair_on(&cfg, &cells, &flowers, &opts).unwrap();
    assert_eq!(resumed.epoch, cfg.epochs);
    assert_eq!(resumed.history, straight.history);
    assert_eq!(params(&mut resumed), params(&mut straight));
}

#[test]
fn resume_rejects_changed_config() {
    let cfg = small_config(3);
    let cells = ImageSet::Memory(random_images(4, 16, 3));
    let flowers = ImageSet::Memory(random_images(4, 16, 4));
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        resume: true,
        until_epoch: Some(1),
        ..TrainOptions::default()
    };
    train_pair_on(&cfg, &cells, &flowers, &opts).unwrap();
    let mut other = cfg.clone();
    other.lr = 1e-3;
    assert!(train_pair_on(&other, &cells, &flowers, &opts).is_err());
}

#[test]
fn checkpoint_cadence_writes_intermediate_state() {
    let cfg = small_config(5);
    let cells = ImageSet::Memory(random_images(4, 16, 5));
    let flowers = ImageSet::Memory(random_images(4, 16, 6));
    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        out_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: Some(1),
        until_epoch: Some(3),
        ..TrainOptions::default()
    };
    train_pair_on(&cfg, &cells, &flowers, &opts).unwrap();
    assert_eq!(TransferCheckpoint::load(dir.path()).unwrap().epoch, 3);
}

#[test]
fn train_step_is_deterministic() {
    let run = || {
        let mut ck = TransferCheckpoint::new(small_config(7)).unwrap();
        let a = Tensor::stack(&random_images(4, 16, 10)).unwrap();
        let b = Tensor::stack(&random_images(4, 16, 11)).unwrap();
        (0..3).map(|_| ck.train_step(&a, &b).unwrap()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn zero_weights_leave_pure_adversarial_objective() {
    let mut cfg = small_config(8);
    cfg.lambda_cycle = 0.0;
    cfg.lambda_identity = 0.0;
    let mut nets = CycleNets::<f64>::new(&cfg);
    let a = Tensor::stack(&random_images(2, 16, 12)).unwrap().cast::<f64>();
    let b = Tensor::stack(&random_images(2, 16, 13)).unwrap().cast::<f64>();
    let pass = nets.generator_pass(&a, &b, 0.0, 0.0).unwrap();
    assert!(pass.cycle_a > 0.0);
    assert_eq!(pass.total, pass.adv_ab + pass.adv_ba);
}

#[test]
fn zero_initialized_discriminator_scores_real_and_fake_alike() {
    let mut cfg = small_config(9);
    cfg.init_std = 0.0;
    let nets = CycleNets::<f64>::new(&cfg);
    let x = Tensor::stack(&random_images(2, 16, 14)).unwrap().cast::<f64>();
    let fake = x.clone();
    let (s_real, _) = nets.d_a.forward(&x, Mode::Train).unwrap();
    let (s_fake, _) = nets.d_a.forward(&fake, Mode::Train).unwrap();
    assert_eq!(s_real, s_fake);
    assert_eq!(adversarial_loss(&s_real, true), adversarial_loss(&s_fake, true));
    assert_eq!(adversarial_loss(&s_real, false), adversarial_loss(&s_fake, false));
}

#[test]
fn non_finite_loss_names_the_term() {
    let mut ck = TransferCheckpoint::new(small_config(10)).unwrap();
    let mut a = Tensor::stack(&random_images(2, 16, 15)).unwrap();
    a.data_mut()[0] = f32::NAN;
    let b = Tensor::stack(&random_images(2, 16, 16)).unwrap();
    match ck.train_step(&a, &b) {
        Err(CoreError::NonFinite(term)) => assert_eq!(term, "loss_G_adv_ab"),
        other => panic!("expected non-finite error, got {other:?}"),
    }
}

#[test]
fn empty_training_split_fails_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, flowers) = fixture(dir.path(), 5);
    let cells = cells.filter(|r| r.cell_class() != Some(CellClass::MastCell));
    let err = train_pair(&small_config(1), &cells, &flowers, &TrainOptions::default()).unwrap_err();
    assert!(err.to_string().contains("no training"), "{err}");
}

#[test]
fn train_pair_from_manifests_and_inference_contracts() {
    let dir = tempfile::tempdir().unwrap();
    let (cells, flowers) = fixture(&dir.path().join("data"), 5);
    let mut cfg = small_config(11);
    cfg.epochs = 2;
    cfg.constant_lr_epochs = 1;
    let out = dir.path().join("ckpt");
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        ..TrainOptions::default()
    };
    let ck = train_pair(&cfg, &cells, &flowers, &opts).unwrap();
    let live = TransferModel::from_checkpoint(&ck);
    let loaded = TransferModel::load(&out).unwrap();

    let imgs = random_images(3, 16, 20);
    let fwd = live.translate(&imgs, Direction::CellToFlower).unwrap();
    assert_eq!(fwd, loaded.translate(&imgs, Direction::CellToFlower).unwrap());
    assert_eq!(fwd, live.translate(&imgs, Direction::CellToFlower).unwrap());
    for (x, y) in imgs.iter().zip(&fwd) {
        assert_eq!(x.shape(), y.shape());
        assert!(y.data().iter().all(|v| *v > -1.0 && *v < 1.0));
    }
    let back = live.translate(&fwd, Direction::FlowerToCell).unwrap();
    let rec = live.reconstruct(&imgs, Domain::Cell).unwrap();
    assert_eq!(back, rec);
    assert_eq!(live.reconstruct_one(&imgs[0], Domain::Cell).unwrap(), rec[0]);
    assert!(cycle_loss(&imgs[0], &rec[0]).unwrap() >= 0.0);
    let single = live.transform(&imgs[1], Direction::CellToFlower).unwrap();
    assert_eq!(single, fwd[1]);

    let wrong = Tensor::zeros(&[3, 8, 8]);
    assert!(live.transform(&wrong, Direction::CellToFlower).is_err());
}
