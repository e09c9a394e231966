//! Alternating discriminator/generator optimization, epoch loop and
//! checkpoint emission.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NormMode, Var};
use crate::error::{Error, Result};
use crate::loss::{discriminator_loss_graph, generator_loss_graph, GeneratorLoss, LossBreakdown};
use crate::metrics::ImagePair;
use crate::nn::forward::check_generator_input;
use crate::nn::{
    build_discriminator, build_generator, checkpoint_file_name, discriminator_forward_graph,
    generator_forward_graph, BoundParams, Checkpoint, ForwardMode, NetworkState, Variant,
    VariantConfig, DEFAULT_BASE_CHANNELS, GENERATOR_DEPTH,
};
use crate::optim::{adam_step, AdamConfig, OptimizerState};
use crate::tensor::Tensor;

pub const DEFAULT_EPOCHS: u32 = 300;
pub const DEFAULT_CHECKPOINT_INTERVAL: u32 = 15;
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const LOSS_LOG_HEADER: &str = "epoch,d_loss,g_gan,g_l1,g_total";

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub checkpoint_interval: u32,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub variant: Variant,
    pub generator_base_channels: usize,
    pub generator_depth: usize,
    pub discriminator_base_channels: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: DEFAULT_EPOCHS,
            checkpoint_interval: DEFAULT_CHECKPOINT_INTERVAL,
            learning_rate: adam.learning_rate,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            batch_size: 1,
            seed: 0,
            variant: Variant::Orig,
            generator_base_channels: DEFAULT_BASE_CHANNELS,
            generator_depth: GENERATOR_DEPTH,
            discriminator_base_channels: DEFAULT_BASE_CHANNELS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs < 1 {
            return bad("epochs must be at least 1".into());
        }
        if self.checkpoint_interval < 1 || self.checkpoint_interval > self.epochs {
            return bad(format!(
                "checkpoint_interval {} outside 1..={}",
                self.checkpoint_interval, self.epochs
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.generator_base_channels < 1 || self.discriminator_base_channels < 1 {
            return bad("base channel counts must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            ..AdamConfig::default()
        }
    }

    /// Epochs after which a checkpoint is written.
    pub fn checkpoint_epochs(&self) -> Vec<u32> {
        (1..=self.epochs)
            .filter(|e| e % self.checkpoint_interval == 0 || *e == self.epochs)
            .collect()
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Freshly initialized `(generator, discriminator)` for `cfg`; the same
/// networks [`train`] starts from.
pub fn initial_networks(cfg: &TrainConfig) -> Result<(NetworkState, NetworkState)> {
    let variant = cfg.variant.config();
    let mut rng = stream_rng(cfg.seed, INIT_STREAM);
    let g = build_generator(
        &variant,
        cfg.generator_base_channels,
        cfg.generator_depth,
        &mut rng,
    )?;
    let d = build_discriminator(&variant, cfg.discriminator_base_channels, &mut rng)?;
    Ok((g, d))
}

fn stack(batch: &[ImagePair]) -> Result<(Tensor, Tensor)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let masks: Vec<&Tensor> = batch.iter().map(|p| &p.mask).collect();
    let targets: Vec<&Tensor> = batch.iter().map(|p| &p.target).collect();
    Ok((Tensor::stack_batch(&masks)?, Tensor::stack_batch(&targets)?))
}

/// Generator forward in training mode, kept alive so the generator loss can
/// be built once the discriminator has been updated.
pub struct GeneratorPass {
    graph: Graph,
    params: BoundParams,
    mask: Var,
    target: Var,
    fake: Var,
}

impl GeneratorPass {
    /// Runs `G` on the batch masks; batch-norm running statistics of `g`
    /// are updated.
    pub fn forward<R: Rng + ?Sized>(
        g: &mut NetworkState,
        batch: &[ImagePair],
        rng: &mut R,
    ) -> Result<Self> {
        let (mask_t, target_t) = stack(batch)?;
        let mut graph = Graph::new();
        let params = g.bind(&mut graph);
        let mask = graph.leaf(mask_t);
        let target = graph.leaf(target_t);
        let fake = generator_forward_graph(g, &mut graph, &params, mask, ForwardMode::Train, rng)?;
        Ok(Self {
            graph,
            params,
            mask,
            target,
            fake,
        })
    }

    pub fn fake(&self) -> &Tensor {
        self.graph.value(self.fake)
    }

    pub fn mask(&self) -> &Tensor {
        self.graph.value(self.mask)
    }

    pub fn target(&self) -> &Tensor {
        self.graph.value(self.target)
    }

    /// Appends the generator objective against `d` (held fixed, running
    /// statistics not touched) and returns its node and value.
    fn objective_var(
        &mut self,
        d: &NetworkState,
        cfg: &VariantConfig,
    ) -> Result<(Var, GeneratorLoss)> {
        let d_params = d.bind(&mut self.graph);
        let pair = self.graph.concat_channels(self.mask, self.fake)?;
        let (trace, _) = d.run_layers(
            &mut self.graph,
            &d_params,
            pair,
            NormMode::Train,
            &mut ChaCha8Rng::seed_from_u64(0),
            None,
        )?;
        let vars =
            generator_loss_graph(&mut self.graph, trace.output, self.fake, self.target, cfg)?;
        let value = GeneratorLoss::compose(
            self.graph.value(vars.gan_term).item(),
            self.graph.value(vars.l1_term).item(),
            cfg,
        );
        Ok((vars.total, value))
    }

    /// Generator objective at the parameters used for the forward pass.
    pub fn objective(mut self, d: &NetworkState, cfg: &VariantConfig) -> Result<GeneratorLoss> {
        Ok(self.objective_var(d, cfg)?.1)
    }

    /// One Adam step on `g` against the fixed discriminator `d`.
    pub fn update(
        mut self,
        g: &mut NetworkState,
        opt: &mut OptimizerState,
        d: &NetworkState,
        cfg: &VariantConfig,
        adam: &AdamConfig,
    ) -> Result<GeneratorLoss> {
        let (total, value) = self.objective_var(d, cfg)?;
        let mut grads = self.graph.backward(total)?;
        let grads: Vec<Tensor> = self.params.vars.iter().map(|&v| grads.take(v)).collect();
        adam_step(&mut g.params_mut(), &grads, opt, adam)?;
        Ok(value)
    }
}

/// One discriminator step on real pairs and the detached fake images.
/// Returns the pre-update `(real, fake)` loss parts.
pub fn discriminator_update(
    d: &mut NetworkState,
    opt: &mut OptimizerState,
    mask: &Tensor,
    target: &Tensor,
    fake: &Tensor,
    adam: &AdamConfig,
) -> Result<(f64, f64)> {
    let mut graph = Graph::new();
    let params = d.bind(&mut graph);
    let m = graph.leaf(mask.clone());
    let real_img = graph.leaf(target.clone());
    let fake_img = graph.leaf(fake.clone());
    let d_real = discriminator_forward_graph(d, &mut graph, &params, m, real_img, NormMode::Train)?;
    let d_fake = discriminator_forward_graph(d, &mut graph, &params, m, fake_img, NormMode::Train)?;
    let (total, real, fake_part) = discriminator_loss_graph(&mut graph, d_real, d_fake)?;
    let losses = (graph.value(real).item(), graph.value(fake_part).item());
    let mut grads = graph.backward(total)?;
    let grads: Vec<Tensor> = params.vars.iter().map(|&v| grads.take(v)).collect();
    adam_step(&mut d.params_mut(), &grads, opt, adam)?;
    Ok(losses)
}

/// Both networks with their optimizer states.
#[derive(Clone, Debug)]
pub struct GanState {
    pub generator: NetworkState,
    pub discriminator: NetworkState,
    pub g_opt: OptimizerState,
    pub d_opt: OptimizerState,
}

impl GanState {
    pub fn new(generator: NetworkState, discriminator: NetworkState) -> Self {
        let g_opt = OptimizerState::new(&generator.params());
        let d_opt = OptimizerState::new(&discriminator.params());
        Self {
            generator,
            discriminator,
            g_opt,
            d_opt,
        }
    }
}

/// One discriminator update followed by one generator update on `batch`.
pub fn train_step<R: Rng + ?Sized>(
    state: &mut GanState,
    batch: &[ImagePair],
    cfg: &VariantConfig,
    adam: &AdamConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let pass = GeneratorPass::forward(&mut state.generator, batch, rng)?;
    let (d_real, d_fake) = discriminator_update(
        &mut state.discriminator,
        &mut state.d_opt,
        pass.mask(),
        pass.target(),
        pass.fake(),
        adam,
    )?;
    let g = pass.update(
        &mut state.generator,
        &mut state.g_opt,
        &state.discriminator,
        cfg,
        adam,
    )?;
    Ok(LossBreakdown::new(d_real, d_fake, g))
}

/// Mean losses of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLosses {
    pub epoch: u32,
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1: f64,
    pub g_total: f64,
}

impl EpochLosses {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.epoch, self.d_loss, self.g_gan, self.g_l1, self.g_total
        )
    }

    pub fn is_finite(&self) -> bool {
        [self.d_loss, self.g_gan, self.g_l1, self.g_total]
            .iter()
            .all(|v| v.is_finite())
    }
}

pub fn parse_loss_log(text: &str) -> Result<Vec<EpochLosses>> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_LOG_HEADER) {
        return Err(Error::InvalidArgument(format!(
            "loss log must start with {LOSS_LOG_HEADER:?}"
        )));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad loss value {s:?}")))
            };
            if f.len() != 5 {
                return Err(Error::InvalidArgument(format!(
                    "loss log row {l:?} has {} fields",
                    f.len()
                )));
            }
            Ok(EpochLosses {
                epoch: f[0]
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad epoch {:?}", f[0])))?,
                d_loss: num(f[1])?,
                g_gan: num(f[2])?,
                g_l1: num(f[3])?,
                g_total: num(f[4])?,
            })
        })
        .collect()
}

/// Receives training outputs as they are produced.
pub trait TrainingSink {
    fn record_epoch(&mut self, losses: &EpochLosses) -> Result<()>;
    fn write_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()>;
    fn flush(&mut self) -> Result<()> {
        Ok(())
    }
}

/// Keeps everything in memory.
#[derive(Clone, Debug, Default)]
pub struct MemorySink {
    pub epochs: Vec<EpochLosses>,
    pub checkpoints: Vec<Checkpoint>,
}

impl TrainingSink for MemorySink {
    fn record_epoch(&mut self, losses: &EpochLosses) -> Result<()> {
        self.epochs.push(*losses);
        Ok(())
    }

    fn write_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.checkpoints.push(checkpoint.clone());
        Ok(())
    }
}

/// Writes `ckpt_epoch{N}.bin` files and `loss_log.csv` into one directory.
pub struct DirectorySink {
    dir: PathBuf,
    log_path: PathBuf,
    log: BufWriter<File>,
}

impl DirectorySink {
    /// Creates `dir` if needed and starts a fresh loss log.
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log_path = dir.join(LOSS_LOG_FILE);
        let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
        let mut log = BufWriter::new(file);
        writeln!(log, "{LOSS_LOG_HEADER}").map_err(|e| Error::io(&log_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log_path,
            log,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl TrainingSink for DirectorySink {
    fn record_epoch(&mut self, losses: &EpochLosses) -> Result<()> {
        writeln!(self.log, "{}", losses.csv_row()).map_err(|e| Error::io(&self.log_path, e))?;
        self.flush()
    }

    fn write_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.save(&self.dir.join(checkpoint_file_name(checkpoint.epoch)))
    }

    fn flush(&mut self) -> Result<()> {
        self.log.flush().map_err(|e| Error::io(&self.log_path, e))
    }
}

/// Final networks and the per-epoch loss log of a run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub state: GanState,
    pub losses: Vec<EpochLosses>,
    pub checkpoint_epochs: Vec<u32>,
}

fn check_dataset(dataset: &[ImagePair], generator: &NetworkState) -> Result<()> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    check_generator_input(generator, &first.mask)?;
    for (i, p) in dataset.iter().enumerate() {
        if p.mask.shape() != first.mask.shape() || p.target.shape() != first.mask.shape() {
            return Err(Error::shape(
                "train",
                format!(
                    "pair {i}: mask {:?}, target {:?}, expected {:?}",
                    p.mask.shape(),
                    p.target.shape(),
                    first.mask.shape()
                ),
            ));
        }
    }
    Ok(())
}

/// Trains from freshly initialized networks for `cfg.epochs` epochs.
pub fn train<S: TrainingSink + ?Sized>(
    dataset: &[ImagePair],
    cfg: &TrainConfig,
    sink: &mut S,
) -> Result<TrainReport> {
    cfg.validate()?;
    let (g, d) = initial_networks(cfg)?;
    check_dataset(dataset, &g)?;
    let variant = cfg.variant.config();
    let adam = cfg.adam();
    let mut state = GanState::new(g, d);
    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(cfg.seed, DROPOUT_STREAM);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs as usize);
    let mut written = Vec::new();
    info!(
        "training {} for {} epochs on {} pairs ({} generator parameters)",
        cfg.variant,
        cfg.epochs,
        dataset.len(),
        state.generator.param_count()
    );

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0; 4];
        let mut steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<ImagePair> = chunk.iter().map(|&i| dataset[i].clone()).collect();
            let step =
                train_step(&mut state, &batch, &variant, &adam, &mut dropout_rng).map_err(|e| {
                    let _ = sink.flush();
                    match e {
                        Error::NonFinite(msg) => {
                            Error::NonFinite(format!("epoch {epoch}, step {}: {msg}", steps + 1))
                        }
                        other => other,
                    }
                })?;
            sums[0] += step.d_loss();
            sums[1] += step.g_gan_term;
            sums[2] += step.g_l1_term;
            sums[3] += step.g_total;
            steps += 1;
        }
        let n = steps as f64;
        let record = EpochLosses {
            epoch,
            d_loss: sums[0] / n,
            g_gan: sums[1] / n,
            g_l1: sums[2] / n,
            g_total: sums[3] / n,
        };
        debug!("epoch {epoch}: {}", record.csv_row());
        sink.record_epoch(&record)?;
        losses.push(record);

        if epoch % cfg.checkpoint_interval == 0 || epoch == cfg.epochs {
            let checkpoint = Checkpoint {
                variant: cfg.variant,
                epoch,
                generator: state.generator.clone(),
                discriminator: None,
            };
            if let Err(e) = sink.write_checkpoint(&checkpoint) {
                let _ = sink.flush();
                return Err(e);
            }
            info!(
                "epoch {epoch}: checkpoint written (g_l1 {:.4})",
                record.g_l1
            );
            written.push(epoch);
        }
    }
    sink.flush()?;
    Ok(TrainReport {
        state,
        losses,
        checkpoint_epochs: written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::dataset::to_image_pair;
    use crate::data::synth_scene;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            checkpoint_interval: 1,
            generator_base_channels: 4,
            generator_depth: 5,
            discriminator_base_channels: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn pairs(n: usize, size: usize, seed: u64) -> Vec<ImagePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let (m, img) = synth_scene(64, 64, &mut rng).unwrap();
                to_image_pair(&m.crop(0, 0, size, size), &img.crop(0, 0, size, size)).unwrap()
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                epochs: 0,
                ..tiny_cfg()
            },
            TrainConfig {
                checkpoint_interval: 0,
                ..tiny_cfg()
            },
            TrainConfig {
                checkpoint_interval: 3,
                ..tiny_cfg()
            },
            TrainConfig {
                learning_rate: 0.0,
                ..tiny_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..tiny_cfg()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn checkpoint_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.checkpoint_epochs().len(), 20);
        let c = TrainConfig { epochs: 31, ..c };
        assert_eq!(c.checkpoint_epochs(), vec![15, 30, 31]);
        let c = TrainConfig {
            epochs: 1,
            checkpoint_interval: 1,
            ..c
        };
        assert_eq!(c.checkpoint_epochs(), vec![1]);
    }

    #[test]
    fn single_epoch_single_pair() {
        let cfg = TrainConfig {
            epochs: 1,
            ..tiny_cfg()
        };
        let mut sink = MemorySink::default();
        let report = train(&pairs(1, 32, 1), &cfg, &mut sink).unwrap();
        assert_eq!(sink.checkpoints.len(), 1);
        assert_eq!(sink.epochs.len(), 1);
        assert_eq!(report.losses, sink.epochs);
        assert!(sink.checkpoints[0].discriminator.is_none());
        assert_eq!(sink.checkpoints[0].generator, report.state.generator);
    }

    #[test]
    fn empty_dataset_rejected() {
        assert!(matches!(
            train(&[], &tiny_cfg(), &mut MemorySink::default()),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn update_isolation() {
        let cfg = tiny_cfg();
        let (g, d) = initial_networks(&cfg).unwrap();
        let mut state = GanState::new(g, d);
        let batch = pairs(1, 32, 2);
        let variant = cfg.variant.config();
        let adam = cfg.adam();
        let mut rng = ChaCha8Rng::seed_from_u64(3);

        let pass = GeneratorPass::forward(&mut state.generator, &batch, &mut rng).unwrap();
        let g_before = state.generator.clone();
        let d_before = state.discriminator.clone();
        discriminator_update(
            &mut state.discriminator,
            &mut state.d_opt,
            pass.mask(),
            pass.target(),
            pass.fake(),
            &adam,
        )
        .unwrap();
        assert_eq!(state.generator, g_before);
        assert_ne!(state.discriminator.params(), d_before.params());

        let d_mid = state.discriminator.clone();
        pass.update(
            &mut state.generator,
            &mut state.g_opt,
            &state.discriminator,
            &variant,
            &adam,
        )
        .unwrap();
        assert_eq!(state.discriminator, d_mid);
        assert_ne!(state.generator.params(), g_before.params());
    }

    #[test]
    fn generator_step_descends_against_fixed_discriminator() {
        let cfg = tiny_cfg();
        let (mut g, mut d) = initial_networks(&cfg).unwrap();
        // Zero final layer: D outputs sigmoid(0) = 0.5 everywhere.
        let last = d.layers.last_mut().unwrap();
        last.weight = Tensor::zeros(last.weight.shape());
        if let Some(b) = last.bias.as_mut() {
            *b = Tensor::zeros(b.shape());
        }
        let batch = pairs(1, 32, 4);
        let variant = cfg.variant.config();
        let adam = AdamConfig {
            learning_rate: 1e-5,
            ..cfg.adam()
        };
        let mut opt = OptimizerState::new(&g.params());
        let rng = ChaCha8Rng::seed_from_u64(5);

        let pass = GeneratorPass::forward(&mut g, &batch, &mut rng.clone()).unwrap();
        let before = pass.update(&mut g, &mut opt, &d, &variant, &adam).unwrap();
        assert!((before.gan_term - std::f64::consts::LN_2).abs() < 1e-12);
        let after = GeneratorPass::forward(&mut g, &batch, &mut rng.clone())
            .unwrap()
            .objective(&d, &variant)
            .unwrap();
        assert!(
            after.total < before.total,
            "{} !< {}",
            after.total,
            before.total
        );
    }

    #[test]
    fn runs_are_deterministic() {
        let data = pairs(3, 32, 6);
        let cfg = TrainConfig {
            batch_size: 2,
            ..tiny_cfg()
        };
        let mut a = MemorySink::default();
        let mut b = MemorySink::default();
        train(&data, &cfg, &mut a).unwrap();
        train(&data, &cfg, &mut b).unwrap();
        assert_eq!(a.epochs, b.epochs);
        let bytes = |s: &MemorySink| {
            s.checkpoints
                .iter()
                .map(|c| c.to_bytes())
                .collect::<Vec<_>>()
        };
        assert_eq!(bytes(&a), bytes(&b));
        let mut c = MemorySink::default();
        train(&data, &TrainConfig { seed: 12, ..cfg }, &mut c).unwrap();
        assert_ne!(a.epochs, c.epochs);
        assert!(a.epochs.iter().all(EpochLosses::is_finite));
    }

    #[test]
    fn directory_sink_writes_log_and_checkpoints() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            checkpoint_interval: 2,
            ..tiny_cfg()
        };
        let mut sink = DirectorySink::create(dir.path()).unwrap();
        let report = train(&pairs(2, 32, 7), &cfg, &mut sink).unwrap();
        drop(sink);
        let log = fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
        assert_eq!(parse_loss_log(&log).unwrap(), report.losses);
        for e in [2, 3] {
            let ck = Checkpoint::load(&dir.path().join(checkpoint_file_name(e))).unwrap();
            assert_eq!(ck.epoch, e);
        }
        assert!(!dir.path().join(checkpoint_file_name(1)).exists());
    }

    struct FailingSink {
        inner: DirectorySink,
    }

    impl TrainingSink for FailingSink {
        fn record_epoch(&mut self, losses: &EpochLosses) -> Result<()> {
            self.inner.record_epoch(losses)
        }
        fn write_checkpoint(&mut self, _: &Checkpoint) -> Result<()> {
            Err(Error::io(
                Path::new("ckpt"),
                std::io::Error::other("disk full"),
            ))
        }
        fn flush(&mut self) -> Result<()> {
            self.inner.flush()
        }
    }

    #[test]
    fn checkpoint_failure_keeps_partial_log() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = FailingSink {
            inner: DirectorySink::create(dir.path()).unwrap(),
        };
        let cfg = TrainConfig {
            epochs: 4,
            checkpoint_interval: 2,
            ..tiny_cfg()
        };
        assert!(matches!(
            train(&pairs(1, 32, 8), &cfg, &mut sink),
            Err(Error::Io { .. })
        ));
        let log = fs::read_to_string(dir.path().join(LOSS_LOG_FILE)).unwrap();
        assert_eq!(parse_loss_log(&log).unwrap().len(), 2);
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let mut data = pairs(2, 32, 9);
        data.push(pairs(1, 64, 9).remove(0));
        assert!(matches!(
            train(&data, &tiny_cfg(), &mut MemorySink::default()),
            Err(Error::Shape { .. })
        ));
    }
}
