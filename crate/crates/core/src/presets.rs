//! Network presets for the three classification tasks.
//!
//! The conv stacks follow the published architectures: three conv blocks
//! (conv, max-pool, batchnorm, ReLU), global average pooling, one dense
//! block and a linear output layer. With `md = true` every dense and conv
//! layer uses the md operator; the output layer always keeps the regular
//! dot product.

use crate::layers::{ActivationKind, AlphaMode, LayerConfig, NetworkSpec, Padding};

const RELU: LayerConfig = LayerConfig::Activation { activation: ActivationKind::Relu };

// ReLU precedes the batchnorm in every block, so deeper md layers consume
// signed, normalized responses; magnitude information then carries real
// signal, which is what makes the heavy-pruning experiments meaningful.
fn conv_block(kernels: usize, kernel_len: usize, md: bool, padding: Padding, pool: usize, stride: usize) -> Vec<LayerConfig> {
    vec![
        LayerConfig::Conv1d { kernels, kernel_len, md, alpha: AlphaMode::None, padding },
        LayerConfig::Maxpool1d { pool, stride },
        RELU,
        LayerConfig::Batchnorm,
    ]
}

/// Infrared leak detector: input 32x1, three conv blocks (16, 32, 64
/// filters of length 3, down-sampling by 2), GAP, dense 64, linear output
/// of 1 logit. `dropout` inserts a dropout layer after the dense block.
pub fn ir_table1(md: bool, dropout: Option<f32>) -> NetworkSpec {
    let mut layers = Vec::new();
    layers.extend(conv_block(16, 3, md, Padding::Valid, 2, 2));
    layers.extend(conv_block(32, 3, md, Padding::Valid, 2, 2));
    layers.extend(conv_block(64, 3, md, Padding::Valid, 2, 2));
    layers.push(LayerConfig::GlobalAvgPool);
    layers.push(LayerConfig::Dense { units: 64, md, alpha: AlphaMode::None });
    layers.push(RELU);
    layers.push(LayerConfig::Batchnorm);
    if let Some(rate) = dropout {
        layers.push(LayerConfig::Dropout { rate });
    }
    NetworkSpec::new(vec![32, 1], layers, 1)
}

/// Gas-mixture classifier: input 40x16, conv blocks of 64/128/256 filters
/// of length 5 with pool size 4 stride 3, GAP, dense 256, 3 output logits.
/// The convolutions pad to same length; valid geometry would exhaust the
/// time axis before the third block.
pub fn mixtures_table4(md: bool) -> NetworkSpec {
    let mut layers = Vec::new();
    layers.extend(conv_block(64, 5, md, Padding::Same, 4, 3));
    layers.extend(conv_block(128, 5, md, Padding::Same, 4, 3));
    layers.extend(conv_block(256, 5, md, Padding::Same, 4, 3));
    layers.push(LayerConfig::GlobalAvgPool);
    layers.push(LayerConfig::Dense { units: 256, md, alpha: AlphaMode::None });
    layers.push(RELU);
    layers.push(LayerConfig::Batchnorm);
    NetworkSpec::new(vec![40, 16], layers, 3)
}

/// Drift-batch classifier: 128 input features, two dense blocks of 512
/// units with batchnorm and dropout, 6 output logits.
pub fn drift_mlp(md: bool, dropout: f32) -> NetworkSpec {
    let mut layers = Vec::new();
    for _ in 0..2 {
        layers.push(LayerConfig::Dense { units: 512, md, alpha: AlphaMode::None });
        layers.push(RELU);
        layers.push(LayerConfig::Batchnorm);
        if dropout > 0.0 {
            layers.push(LayerConfig::Dropout { rate: dropout });
        }
    }
    NetworkSpec::new(vec![128], layers, 6)
}

/// GAN generator: an MLP with one hidden ReLU layer mapping a noise vector
/// to a flat sample. Output squashing is applied by the adversarial loop.
pub fn generator_mlp(noise_dim: usize, hidden: usize, out_len: usize) -> NetworkSpec {
    NetworkSpec::new(
        vec![noise_dim],
        vec![
            LayerConfig::Dense { units: hidden, md: false, alpha: AlphaMode::None },
            RELU,
        ],
        out_len,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_shape_check() {
        ir_table1(false, None).shape_check().unwrap();
        ir_table1(true, Some(0.5)).shape_check().unwrap();
        mixtures_table4(false).shape_check().unwrap();
        mixtures_table4(true).shape_check().unwrap();
        drift_mlp(false, 0.2).shape_check().unwrap();
        drift_mlp(true, 0.2).shape_check().unwrap();
        generator_mlp(64, 256, 32).shape_check().unwrap();
    }

    #[test]
    fn table4_time_axis_survives_three_blocks() {
        let spec = mixtures_table4(false);
        let shapes = spec.shape_check().unwrap();
        let time_lens: Vec<usize> = shapes.iter().filter(|s| s.len() == 2).map(|s| s[0]).collect();
        assert_eq!(time_lens, vec![40, 13, 13, 13, 13, 4, 4, 4, 4, 1, 1, 1]);
    }
}
