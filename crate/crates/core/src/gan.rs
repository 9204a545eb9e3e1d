//! Adversarially warmed discriminator classifiers.
//!
//! Two-phase training for unbalanced data: first a generator and the
//! discriminator play the usual minimax game on the minority class alone,
//! then the discriminator — now primed with features of the rare class —
//! is trained as an ordinary supervised classifier on the full labeled set.
//!
//! With a multi-class discriminator the generator attacks a single output
//! node: the adversarial losses read the sigmoid of logit `k` and leave
//! every other logit untouched.

use crate::data::LabeledSet;
use crate::error::{err_fmt, Error, Result};
use crate::layers::{backward, forward_train, LayerState, NetworkSpec};
use crate::metrics::MetricsReport;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::training::{build_batch, train, RmsPropState, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Gaussian,
    Uniform,
}

/// The literal minimax generator loss saturates early in training; the
/// non-saturating form maximizes log D(G(z)) instead and is the default.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorLoss {
    NonSaturating,
    Saturating,
}

/// Squashing of the generator output. Sigmoid matches min-max normalized
/// signal space; linear leaves the output unconstrained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputSquash {
    Sigmoid,
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GanConfig {
    pub noise_dim: usize,
    pub generator_spec: NetworkSpec,
    pub adversarial_epochs: usize,
    pub supervised_epochs: usize,
    pub minority_class: usize,
    /// Attacked output node in the multi-class game.
    pub attack_class: Option<usize>,
    pub noise_kind: NoiseKind,
    pub generator_loss: GeneratorLoss,
    pub generator_output: OutputSquash,
    /// Optimizer parameters, batch size, crop and seed for both phases.
    pub train: TrainConfig,
}

impl GanConfig {
    /// Defaults: 64-dimensional Gaussian noise, one hidden layer of 256 in
    /// the generator, non-saturating generator loss, sigmoid output.
    pub fn new(sample_len: usize, train: TrainConfig) -> Self {
        let noise_dim = 64;
        GanConfig {
            noise_dim,
            generator_spec: crate::presets::generator_mlp(noise_dim, 256, sample_len),
            adversarial_epochs: 10,
            supervised_epochs: 10,
            minority_class: 1,
            attack_class: None,
            noise_kind: NoiseKind::Gaussian,
            generator_loss: GeneratorLoss::NonSaturating,
            generator_output: OutputSquash::Sigmoid,
            train,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AdversarialStats {
    /// Mean combined discriminator loss per epoch (real plus fake term).
    pub disc_loss: Vec<f64>,
    /// Mean generator loss per epoch.
    pub gen_loss: Vec<f64>,
}

fn sample_noise(kind: NoiseKind, b: usize, dim: usize, rng: &mut Rng) -> Result<Tensor<f32>> {
    let data: Vec<f32> = (0..b * dim)
        .map(|_| match kind {
            NoiseKind::Gaussian => rng.normal(0.0, 1.0) as f32,
            NoiseKind::Uniform => rng.uniform(-1.0, 1.0) as f32,
        })
        .collect();
    Tensor::from_data(&[b, dim], data)
}

fn squash(x: &Tensor<f32>, kind: OutputSquash) -> Tensor<f32> {
    match kind {
        OutputSquash::Sigmoid => x.map(|v| 1.0 / (1.0 + (-v).exp())),
        OutputSquash::Linear => x.clone(),
    }
}

fn squash_backward(d: &Tensor<f32>, out: &Tensor<f32>, kind: OutputSquash) -> Result<Tensor<f32>> {
    match kind {
        OutputSquash::Sigmoid => d.zip(out, |g, o| g * o * (1.0 - o)),
        OutputSquash::Linear => Ok(d.clone()),
    }
}

#[inline]
fn sigmoid64(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross entropy on one logit column of a `[B, C]` logit
/// tensor, with the gradient placed only at that column.
fn node_bce(logits: &Tensor<f32>, node: usize, target: f64) -> Result<(f64, Tensor<f32>)> {
    let (b, c) = (logits.shape()[0], logits.shape()[1]);
    if node >= c {
        return Err(err_fmt!(Parameter, "attack node {node} outside [0, {c})"));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f32; b * c];
    let inv_b = 1.0 / b as f64;
    for bi in 0..b {
        let z = logits.data()[bi * c + node] as f64;
        loss += z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        grad[bi * c + node] = ((sigmoid64(z) - target) * inv_b) as f32;
    }
    Ok((loss * inv_b, Tensor::from_data(&[b, c], grad)?))
}

/// Generator objective on the attacked node. Returns (loss, dL/dlogits).
fn generator_loss_grad(
    logits: &Tensor<f32>,
    node: usize,
    kind: GeneratorLoss,
) -> Result<(f64, Tensor<f32>)> {
    match kind {
        // maximize log D(G(z)): minimize -log sigmoid(z)
        GeneratorLoss::NonSaturating => node_bce(logits, node, 1.0),
        // literal minimax: minimize log(1 - sigmoid(z))
        GeneratorLoss::Saturating => {
            let (b, c) = (logits.shape()[0], logits.shape()[1]);
            let mut loss = 0.0;
            let mut grad = vec![0.0f32; b * c];
            let inv_b = 1.0 / b as f64;
            for bi in 0..b {
                let z = logits.data()[bi * c + node] as f64;
                // log(1 - sigmoid(z)) = -max(z,0) - ln(1 + exp(-|z|))
                loss += -z.max(0.0) - (-z.abs()).exp().ln_1p();
                // d/dz log(1 - sigmoid(z)) = -sigmoid(z)
                grad[bi * c + node] = (-sigmoid64(z) * inv_b) as f32;
            }
            Ok((loss * inv_b, Tensor::from_data(&[b, c], grad)?))
        }
    }
}

struct Players<'a> {
    disc_spec: &'a NetworkSpec,
    disc_state: &'a mut LayerState<f32>,
    gen_spec: &'a NetworkSpec,
    gen_state: &'a mut LayerState<f32>,
}

fn check_shapes(cfg: &GanConfig, players: &Players) -> Result<()> {
    let gen_out = players.gen_spec.output_units;
    let disc_in = players.disc_spec.input_len();
    if gen_out != disc_in {
        return Err(err_fmt!(
            Spec,
            "generator produces {gen_out} values but the discriminator consumes {disc_in}"
        ));
    }
    if cfg.noise_dim != players.gen_spec.input_len() {
        return Err(err_fmt!(
            Spec,
            "noise_dim {} does not match generator input {}",
            cfg.noise_dim,
            players.gen_spec.input_len()
        ));
    }
    Ok(())
}

/// One discriminator update on a real and a fake batch: descend binary
/// cross entropy with real mapped to 1 and fake to 0 on the attacked node.
fn disc_step(
    players: &mut Players,
    opt: &mut RmsPropState,
    real: &Tensor<f32>,
    fake: &Tensor<f32>,
    node: usize,
    cfg: &GanConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let (real_logits, real_cache) =
        forward_train(players.disc_spec, players.disc_state, real, rng)?;
    let (loss_real, grad_real) = node_bce(&real_logits, node, 1.0)?;
    let (mut grads, _) = backward(players.disc_spec, players.disc_state, &real_cache, &grad_real)?;

    let (fake_logits, fake_cache) =
        forward_train(players.disc_spec, players.disc_state, fake, rng)?;
    let (loss_fake, grad_fake) = node_bce(&fake_logits, node, 0.0)?;
    let (grads_fake, _) =
        backward(players.disc_spec, players.disc_state, &fake_cache, &grad_fake)?;

    grads.add_assign(&grads_fake)?;
    crate::training::rmsprop_step(
        players.disc_state,
        &grads,
        opt,
        cfg.train.learning_rate,
        cfg.train.rmsprop_decay,
        cfg.train.rmsprop_eps,
    )?;
    Ok(loss_real + loss_fake)
}

/// One generator update through the frozen discriminator.
fn gen_step(
    players: &mut Players,
    opt: &mut RmsPropState,
    batch: usize,
    node: usize,
    cfg: &GanConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let z = sample_noise(cfg.noise_kind, batch, cfg.noise_dim, rng)?;
    let (raw, gen_cache) = forward_train(players.gen_spec, players.gen_state, &z, rng)?;
    let sample = squash(&raw, cfg.generator_output);
    let disc_in = reshape_for_disc(&sample, players.disc_spec)?;

    let (logits, disc_cache) =
        forward_train(players.disc_spec, players.disc_state, &disc_in, rng)?;
    let (loss, d_logits) = generator_loss_grad(&logits, node, cfg.generator_loss)?;
    let (_, d_input) = backward(players.disc_spec, players.disc_state, &disc_cache, &d_logits)?;

    let d_sample = d_input.reshape(sample.shape())?;
    let d_raw = squash_backward(&d_sample, &sample, cfg.generator_output)?;
    let (gen_grads, _) = backward(players.gen_spec, players.gen_state, &gen_cache, &d_raw)?;
    crate::training::rmsprop_step(
        players.gen_state,
        &gen_grads,
        opt,
        cfg.train.learning_rate,
        cfg.train.rmsprop_decay,
        cfg.train.rmsprop_eps,
    )?;
    Ok(loss)
}

fn reshape_for_disc(sample: &Tensor<f32>, disc_spec: &NetworkSpec) -> Result<Tensor<f32>> {
    let b = sample.shape()[0];
    let mut shape = vec![b];
    shape.extend_from_slice(&disc_spec.input_shape);
    sample.clone().reshape(&shape)
}

fn run_adversarial(
    mut players: Players,
    minority: &LabeledSet,
    node: usize,
    cfg: &GanConfig,
    rng: &mut Rng,
) -> Result<AdversarialStats> {
    if minority.is_empty() {
        return Err(Error::Data("adversarial phase needs minority instances".into()));
    }
    check_shapes(cfg, &players)?;
    let mut stats = AdversarialStats::default();
    let mut d_opt = RmsPropState::default();
    let mut g_opt = RmsPropState::default();
    let mut order: Vec<usize> = (0..minority.len()).collect();
    let batch_size = cfg.train.batch_size.max(2);

    for _ in 0..cfg.adversarial_epochs {
        rng.shuffle(&mut order);
        let mut d_epoch = 0.0;
        let mut g_epoch = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let real = build_batch(
                minority.instances(),
                chunk,
                cfg.train.crop_length,
                cfg.train.noise_std,
                rng,
            )?;
            let z = sample_noise(cfg.noise_kind, chunk.len(), cfg.noise_dim, rng)?;
            let (raw, _) = forward_train(players.gen_spec, players.gen_state, &z, rng)?;
            let fake = reshape_for_disc(&squash(&raw, cfg.generator_output), players.disc_spec)?;

            d_epoch += disc_step(&mut players, &mut d_opt, &real, &fake, node, cfg, rng)?;
            g_epoch += gen_step(&mut players, &mut g_opt, chunk.len(), node, cfg, rng)?;
            batches += 1;
        }
        if batches > 0 {
            stats.disc_loss.push(d_epoch / batches as f64);
            stats.gen_loss.push(g_epoch / batches as f64);
        }
    }
    Ok(stats)
}

/// Binary adversarial phase on the minority class. The discriminator must
/// expose a single logit.
pub fn adversarial_phase(
    disc_spec: &NetworkSpec,
    disc_state: &mut LayerState<f32>,
    gen_spec: &NetworkSpec,
    gen_state: &mut LayerState<f32>,
    minority: &LabeledSet,
    cfg: &GanConfig,
    rng: &mut Rng,
) -> Result<AdversarialStats> {
    if disc_spec.output_units != 1 {
        return Err(err_fmt!(
            Spec,
            "binary adversarial phase needs 1 output logit, found {}",
            disc_spec.output_units
        ));
    }
    run_adversarial(
        Players { disc_spec, disc_state, gen_spec, gen_state },
        minority,
        0,
        cfg,
        rng,
    )
}

/// Multi-class variant: the generator attacks output node `k` through its
/// sigmoid response; the other logits receive no adversarial gradient.
#[allow(clippy::too_many_arguments)]
pub fn multiclass_adversarial_phase(
    disc_spec: &NetworkSpec,
    disc_state: &mut LayerState<f32>,
    gen_spec: &NetworkSpec,
    gen_state: &mut LayerState<f32>,
    class_k_data: &LabeledSet,
    cfg: &GanConfig,
    rng: &mut Rng,
) -> Result<AdversarialStats> {
    let c = disc_spec.output_units;
    if c < 2 {
        return Err(Error::Spec("multi-class phase needs at least 2 logits".into()));
    }
    let k = cfg
        .attack_class
        .ok_or_else(|| Error::Parameter("attack_class must be set for the multi-class game".into()))?;
    if k >= c {
        return Err(err_fmt!(Parameter, "attack_class {k} outside [0, {c})"));
    }
    run_adversarial(
        Players { disc_spec, disc_state, gen_spec, gen_state },
        class_k_data,
        k,
        cfg,
        rng,
    )
}

/// Phase two: ordinary supervised training of the (warm) discriminator on
/// the full labeled set. The generator takes no part.
pub fn supervised_phase(
    disc_spec: &NetworkSpec,
    disc_state: &mut LayerState<f32>,
    train_set: &LabeledSet,
    val_set: &LabeledSet,
    cfg: &GanConfig,
) -> Result<MetricsReport> {
    let train_cfg = TrainConfig { epochs: cfg.supervised_epochs, ..cfg.train.clone() };
    train(disc_spec, disc_state, train_set, val_set, &train_cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{init_network, ActivationKind, AlphaMode, LayerConfig};
    use crate::presets::generator_mlp;

    fn scalar_set(values: &[f32], label: usize) -> LabeledSet {
        LabeledSet::new(
            values.iter().map(|&v| Tensor::from_vec(vec![v]).unwrap()).collect(),
            vec![label; values.len()],
            2,
            vec!["majority".into(), "minority".into()],
        )
        .unwrap()
    }

    fn scalar_disc() -> NetworkSpec {
        NetworkSpec::new(
            vec![1],
            vec![
                LayerConfig::Dense { units: 16, md: false, alpha: AlphaMode::None },
                LayerConfig::Activation { activation: ActivationKind::Relu },
            ],
            1,
        )
    }

    fn toy_cfg(sample_len: usize) -> GanConfig {
        let mut cfg = GanConfig::new(
            sample_len,
            TrainConfig { batch_size: 16, learning_rate: 2e-3, ..TrainConfig::default() },
        );
        cfg.noise_dim = 4;
        cfg.generator_spec = generator_mlp(4, 16, sample_len);
        cfg.generator_output = OutputSquash::Linear;
        cfg
    }

    #[test]
    fn untrained_disc_loss_starts_near_two_ln_two() {
        let disc_spec = scalar_disc();
        let mut rng = Rng::new(11);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let gen_spec = generator_mlp(4, 16, 1);
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let mut cfg = toy_cfg(1);
        cfg.adversarial_epochs = 1;
        let mut rng2 = Rng::new(3);
        let data: Vec<f32> = (0..64).map(|_| rng2.normal(5.0, 0.5) as f32).collect();
        let minority = scalar_set(&data, 1);
        let stats =
            adversarial_phase(&disc_spec, &mut disc, &gen_spec, &mut gen, &minority, &cfg, &mut rng)
                .unwrap();
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!(
            (stats.disc_loss[0] - two_ln2).abs() < 0.3,
            "first-epoch D loss {}",
            stats.disc_loss[0]
        );
    }

    #[test]
    fn generator_learns_the_minority_mode() {
        let disc_spec = scalar_disc();
        let gen_spec = generator_mlp(4, 16, 1);
        let mut rng = Rng::new(7);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let mut cfg = toy_cfg(1);
        cfg.adversarial_epochs = 120;
        let mut drng = Rng::new(55);
        let data: Vec<f32> = (0..128).map(|_| drng.normal(5.0, 0.5) as f32).collect();
        let minority = scalar_set(&data, 1);
        adversarial_phase(&disc_spec, &mut disc, &gen_spec, &mut gen, &minority, &cfg, &mut rng)
            .unwrap();

        let z = sample_noise(cfg.noise_kind, 256, cfg.noise_dim, &mut rng).unwrap();
        let out = crate::layers::forward_eval(&gen_spec, &gen, &z).unwrap();
        let mean: f64 = out.data().iter().map(|&v| v as f64).sum::<f64>() / out.len() as f64;
        assert!((mean - 5.0).abs() < 1.0, "generator mean {mean}");
    }

    #[test]
    fn zero_adversarial_epochs_changes_nothing() {
        let disc_spec = scalar_disc();
        let gen_spec = generator_mlp(4, 16, 1);
        let mut rng = Rng::new(1);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let disc_before = disc.clone();
        let gen_before = gen.clone();
        let mut cfg = toy_cfg(1);
        cfg.adversarial_epochs = 0;
        let minority = scalar_set(&[5.0, 5.1, 4.9, 5.2], 1);
        adversarial_phase(&disc_spec, &mut disc, &gen_spec, &mut gen, &minority, &cfg, &mut rng)
            .unwrap();
        assert_eq!(disc, disc_before);
        assert_eq!(gen, gen_before);
    }

    #[test]
    fn generator_disc_shape_mismatch_is_a_spec_error() {
        let disc_spec = scalar_disc();
        let gen_spec = generator_mlp(4, 16, 3); // 3 != 1
        let mut rng = Rng::new(1);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let mut cfg = toy_cfg(3);
        cfg.generator_spec = gen_spec.clone();
        let minority = scalar_set(&[5.0, 5.1], 1);
        let err =
            adversarial_phase(&disc_spec, &mut disc, &gen_spec, &mut gen, &minority, &cfg, &mut rng)
                .unwrap_err();
        assert!(matches!(err, Error::Spec(_)), "{err:?}");
    }

    #[test]
    fn adversarial_loss_touches_only_node_k() {
        let logits = Tensor::from_data(&[3, 4], (0..12).map(|v| v as f32 * 0.1).collect()).unwrap();
        for kind in [GeneratorLoss::NonSaturating, GeneratorLoss::Saturating] {
            let (_, grad) = generator_loss_grad(&logits, 2, kind).unwrap();
            for bi in 0..3 {
                for ci in 0..4 {
                    let g = grad.data()[bi * 4 + ci];
                    if ci == 2 {
                        assert!(g != 0.0);
                    } else {
                        assert_eq!(g, 0.0);
                    }
                }
            }
        }
        let (_, grad) = node_bce(&logits, 1, 1.0).unwrap();
        for bi in 0..3 {
            for ci in 0..4 {
                assert_eq!(grad.data()[bi * 4 + ci] != 0.0, ci == 1);
            }
        }
    }

    #[test]
    fn frozen_copy_generator_drives_disc_to_equilibrium() {
        // When the "generator" replays the real batch, the best the
        // discriminator can do is output 0.5, where the combined loss is
        // 2 ln 2.
        let disc_spec = scalar_disc();
        let mut rng = Rng::new(21);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let gen_spec = generator_mlp(4, 16, 1);
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let cfg = toy_cfg(1);
        let mut opt = RmsPropState::default();
        let mut data_rng = Rng::new(2);
        let data: Vec<f32> = (0..32).map(|_| data_rng.normal(1.0, 0.3) as f32).collect();
        let real = Tensor::from_data(&[32, 1], data).unwrap();
        let mut players = Players {
            disc_spec: &disc_spec,
            disc_state: &mut disc,
            gen_spec: &gen_spec,
            gen_state: &mut gen,
        };
        let mut last = 0.0;
        for _ in 0..300 {
            last = disc_step(&mut players, &mut opt, &real, &real.clone(), 0, &cfg, &mut rng)
                .unwrap();
        }
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((last - two_ln2).abs() < 0.02, "plateau loss {last} vs {two_ln2}");
    }

    #[test]
    fn multiclass_validates_attack_node() {
        let disc_spec = NetworkSpec::new(
            vec![2],
            vec![LayerConfig::Dense { units: 8, md: false, alpha: AlphaMode::None }],
            3,
        );
        let gen_spec = generator_mlp(4, 8, 2);
        let mut rng = Rng::new(1);
        let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
        let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
        let mut cfg = toy_cfg(2);
        cfg.generator_spec = gen_spec.clone();
        cfg.attack_class = Some(7);
        let data = LabeledSet::new(
            vec![Tensor::from_vec(vec![0.0, 1.0]).unwrap(); 4],
            vec![2; 4],
            3,
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let err = multiclass_adversarial_phase(
            &disc_spec, &mut disc, &gen_spec, &mut gen, &data, &cfg, &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
        cfg.attack_class = None;
        let err = multiclass_adversarial_phase(
            &disc_spec, &mut disc, &gen_spec, &mut gen, &data, &cfg, &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let run = || {
            let disc_spec = scalar_disc();
            let gen_spec = generator_mlp(4, 16, 1);
            let mut rng = Rng::new(31);
            let mut disc: LayerState<f32> = init_network(&disc_spec, &mut rng).unwrap();
            let mut gen: LayerState<f32> = init_network(&gen_spec, &mut rng).unwrap();
            let mut cfg = toy_cfg(1);
            cfg.adversarial_epochs = 5;
            let minority = scalar_set(&[5.0, 4.8, 5.3, 5.1, 4.7, 5.6, 5.0, 4.9], 1);
            adversarial_phase(&disc_spec, &mut disc, &gen_spec, &mut gen, &minority, &cfg, &mut rng)
                .unwrap();
            (disc, gen)
        };
        let (d1, g1) = run();
        let (d2, g2) = run();
        assert_eq!(d1, d2);
        assert_eq!(g1, g2);
    }
}
