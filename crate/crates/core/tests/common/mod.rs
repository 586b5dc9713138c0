#![allow(dead_code)]

use dynorm::data::{synth_dataset, synth_dataset_with, Dataset};
use dynorm::norm::{DnVariant, GroupWidth};
use dynorm::train::{train, MetricsRecord, TrainConfig};
use dynorm::zoo::{build_toycnn, LayerSpec, ModelSpec, Network, NormKind, NormSpec};
use dynorm::Rng;

pub const KINDS: [NormKind; 6] = [
    NormKind::None,
    NormKind::Bn,
    NormKind::Dn(DnVariant::B),
    NormKind::Dn(DnVariant::CA),
    NormKind::Dn(DnVariant::CB),
    NormKind::SeBn,
];

pub fn dn(variant: DnVariant, r: usize, g: GroupWidth) -> NormSpec {
    NormSpec::new(NormKind::Dn(variant), r, g)
}

/// A random valid spec: one to three conv/norm/relu stages with channel
/// counts in {8, 16, 32}, optional grouped FC head, random norm per slot.
pub fn random_spec(seed: u64) -> ModelSpec {
    let mut rng = Rng::new(seed);
    let size = 4 + rng.below(9);
    let mut c = 1 + rng.below(4);
    let input = [c, size, size];
    let (mut h, mut layers) = (size, Vec::new());
    for _ in 0..1 + rng.below(3) {
        let out = [8, 16, 32][rng.below(3)];
        let kernel = [1, 3][rng.below(2)].min(h);
        let stride = 1 + rng.below(2);
        let padding = rng.below(kernel / 2 + 1);
        let norm = NormSpec::new(
            KINDS[rng.below(KINDS.len())],
            [1, 2, 4, 8][rng.below(4)],
            [GroupWidth::PerGroup(1), GroupWidth::PerGroup(2), GroupWidth::Oup][rng.below(3)],
        );
        layers.push(LayerSpec::Conv {
            in_channels: c,
            out_channels: out,
            kernel,
            stride,
            padding,
            bias: rng.coin(),
        });
        layers.push(LayerSpec::Norm { channels: out, norm });
        layers.push(LayerSpec::Relu);
        h = (h + 2 * padding - kernel) / stride + 1;
        c = out;
    }
    layers.push(LayerSpec::Gap);
    let mut f = c;
    if rng.coin() {
        let groups = [1, 2, 4][rng.below(3)];
        let out = 4 * (1 + rng.below(4));
        layers.push(LayerSpec::Fc {
            in_features: f,
            out_features: out,
            groups,
            bias: rng.coin(),
        });
        layers.push(LayerSpec::Relu);
        f = out;
    }
    let classes = 2 + rng.below(9);
    layers.push(LayerSpec::Classifier { in_features: f, classes });
    ModelSpec { layers, input, classes }
}

pub struct SynthSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Synthetic 4-class 16×16 splits sharing the training standardization.
pub fn synth_splits(n_train: usize) -> SynthSplits {
    let train = synth_dataset(0, n_train, 4, 16).unwrap();
    let s = Some(train.standardization.clone());
    SynthSplits {
        val: synth_dataset_with(1, 128, 4, 16, s.clone()).unwrap(),
        test: synth_dataset_with(2, 256, 4, 16, s).unwrap(),
        train,
    }
}

pub fn toy_net(norm: NormSpec, seed: u64) -> Network {
    Network::new(&build_toycnn(norm, 0.5, 4, [3, 16, 16]).unwrap(), seed).unwrap()
}

pub fn train_toy(norm: NormSpec, data: &SynthSplits, cfg: &TrainConfig) -> (Network, MetricsRecord) {
    let mut net = toy_net(norm, cfg.seed);
    let record = train(&mut net, &data.train, &data.val, &data.test, cfg, None).unwrap();
    (net, record)
}

/// Protocol of the CIFAR-10 learning-rate and batch-size robustness runs.
pub mod robustness {
    use dynorm::cli::{DataConfig, ModelConfig, OutputConfig, RunConfig, Source};
    use dynorm::data::Dataset;
    use dynorm::norm::{DnVariant, GroupWidth};
    use dynorm::train::{train, Schedule, TrainConfig};
    use dynorm::zoo::{build_toycnn, Network, NormKind, NormSpec};
    use std::path::Path;

    pub const SEEDS: [u64; 3] = [0, 1, 2];
    pub const EPOCHS: usize = 20;
    pub const TRAIN_SIZE: usize = 10_000;
    pub const BASE_LR: f64 = 0.2;
    pub const HIGH_LR: f64 = 2.5 * BASE_LR;
    pub const BASE_BATCH: usize = 64;
    pub const SMALL_BATCH: usize = 4;

    /// Mean final test accuracy over [`SEEDS`] of each arm.
    #[derive(Debug, Default)]
    pub struct Outcome {
        pub bn_base: f64,
        pub bn_high_lr: f64,
        pub bn_small_batch: f64,
        pub dn_base: f64,
        pub dn_high_lr: f64,
        pub dn_small_batch: f64,
    }

    impl Outcome {
        /// (a) DN-B at base lr within 0.5 points of BN.
        pub fn base_ok(&self) -> bool {
            self.dn_base >= self.bn_base - 0.5
        }

        /// (b) DN-B loses less accuracy than BN when the lr is raised.
        pub fn high_lr_ok(&self) -> bool {
            self.dn_base - self.dn_high_lr < self.bn_base - self.bn_high_lr
        }

        /// (c) DN-B beats BN at batch size 4.
        pub fn small_batch_ok(&self) -> bool {
            self.dn_small_batch > self.bn_small_batch
        }
    }

    fn config(lr: f64, batch_size: usize, seed: u64) -> TrainConfig {
        let mut cfg = TrainConfig::new(lr, EPOCHS, batch_size);
        cfg.schedule = Schedule::Cosine;
        cfg.augment = true;
        cfg.seed = seed;
        cfg
    }

    /// Final test accuracy of one run; a run halted on non-finite values
    /// scores chance level.
    fn run(norm: NormSpec, cfg: &TrainConfig, train_ds: &Dataset, val: &Dataset, test: &Dataset) -> f64 {
        let spec = build_toycnn(norm, 1.0, 10, [3, 32, 32]).unwrap();
        let mut net = Network::new(&spec, cfg.seed).unwrap();
        let record = train(&mut net, train_ds, val, test, cfg, None).unwrap();
        record.test_acc.unwrap_or(10.0)
    }

    /// Trains BN and DN-B toy nets on a 10k CIFAR-10 subset at the base
    /// lr, 2.5× the base lr and batch size 4 (lr scaled linearly with the
    /// batch), three seeds each.
    pub fn run_experiment(dir: &Path) -> Outcome {
        let data = DataConfig {
            source: Source::Cifar10,
            path: Some(dir.to_path_buf()),
            seed: 0,
            train_size: TRAIN_SIZE,
            val_size: 1_000,
            test_size: 10_000,
            image_size: 32,
            classes: 10,
        };
        let rc = RunConfig {
            model: ModelConfig {
                norm: NormKind::Bn,
                r: 4,
                g: GroupWidth::PerGroup(1),
                width: 1.0,
            },
            data,
            train: TrainConfig::new(BASE_LR, EPOCHS, BASE_BATCH),
            output: OutputConfig {
                directory: std::env::temp_dir(),
            },
        };
        let s = rc.load_data().unwrap();
        let dn = NormSpec::new(NormKind::Dn(DnVariant::B), 4, GroupWidth::PerGroup(1));
        let small_lr = BASE_LR * SMALL_BATCH as f64 / BASE_BATCH as f64;
        let mean = |norm: NormSpec, lr: f64, bs: usize| {
            let total: f64 = SEEDS
                .iter()
                .map(|&seed| {
                    let acc = run(norm, &config(lr, bs, seed), &s.train, &s.val, &s.test);
                    println!("  robustness run norm={} lr={lr} batch={bs} seed={seed}: test_acc {acc:.2}", norm.kind);
                    acc
                })
                .sum();
            total / SEEDS.len() as f64
        };
        Outcome {
            bn_base: mean(NormSpec::bn(), BASE_LR, BASE_BATCH),
            bn_high_lr: mean(NormSpec::bn(), HIGH_LR, BASE_BATCH),
            bn_small_batch: mean(NormSpec::bn(), small_lr, SMALL_BATCH),
            dn_base: mean(dn, BASE_LR, BASE_BATCH),
            dn_high_lr: mean(dn, HIGH_LR, BASE_BATCH),
            dn_small_batch: mean(dn, small_lr, SMALL_BATCH),
        }
    }
}
