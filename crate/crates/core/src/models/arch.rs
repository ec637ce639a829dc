use super::ModelError;
use crate::nn::{LayerSpec, Network};

/// Input side length the classifier is designed for.
pub const INPUT_SIZE: usize = 32;

/// Layer stack of the five-conv / two-pool / three-dense classifier:
/// conv32-conv32-pool-conv64-conv64-conv64-pool-flatten-dense1024-dense1024-dense(k)-softmax,
/// ReLU after every conv and the first two dense layers.
///
/// `input_size` must be a positive multiple of 4; at 32 the flattened
/// feature vector is 64 * 8 * 8 = 4096.
pub fn paper_cnn_layers(
    num_classes: usize,
    in_channels: usize,
    input_size: usize,
) -> Result<Vec<LayerSpec>, ModelError> {
    if num_classes < 2 {
        return Err(ModelError::InvalidArgument(format!(
            "num_classes must be >= 2, got {num_classes}"
        )));
    }
    if !matches!(in_channels, 1 | 3) {
        return Err(ModelError::InvalidArgument(format!(
            "in_channels must be 1 or 3, got {in_channels}"
        )));
    }
    if input_size == 0 || input_size % 4 != 0 {
        return Err(ModelError::InvalidArgument(format!(
            "input size must be a positive multiple of 4, got {input_size}"
        )));
    }
    let conv = |i, o| LayerSpec::Conv2d {
        in_channels: i,
        out_channels: o,
    };
    let dense = |i, o| LayerSpec::Dense {
        in_features: i,
        out_features: o,
    };
    let flat = 64 * (input_size / 4) * (input_size / 4);
    Ok(vec![
        conv(in_channels, 32),
        LayerSpec::Relu,
        conv(32, 32),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        conv(32, 64),
        LayerSpec::Relu,
        conv(64, 64),
        LayerSpec::Relu,
        conv(64, 64),
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        dense(flat, 1024),
        LayerSpec::Relu,
        dense(1024, 1024),
        LayerSpec::Relu,
        dense(1024, num_classes),
        LayerSpec::Softmax,
    ])
}

/// The classifier at its native 32x32 input.
pub fn build_paper_cnn(
    num_classes: usize,
    in_channels: usize,
    seed: u64,
) -> Result<Network, ModelError> {
    build_paper_cnn_at(num_classes, in_channels, INPUT_SIZE, seed)
}

/// Same topology at another input size (used for cheap gradient checks).
pub fn build_paper_cnn_at(
    num_classes: usize,
    in_channels: usize,
    input_size: usize,
    seed: u64,
) -> Result<Network, ModelError> {
    let layers = paper_cnn_layers(num_classes, in_channels, input_size)?;
    Ok(Network::build(
        &[in_channels, input_size, input_size],
        layers,
        seed,
    )?)
}

/// Donor network for transfer experiments: the same topology on grayscale
/// 32x32 input, with a `num_classes` head to be pretrained on a
/// multi-class task and later re-headed.
pub fn build_mini_backbone(num_classes: usize, seed: u64) -> Result<Network, ModelError> {
    build_paper_cnn(num_classes, 1, seed)
}

/// Closed-form parameter count of [`build_paper_cnn`].
pub fn paper_cnn_param_count(num_classes: usize, in_channels: usize) -> usize {
    let conv = |i: usize, o: usize| o * i * 9 + o;
    let dense = |i: usize, o: usize| o * i + o;
    conv(in_channels, 32)
        + conv(32, 32)
        + conv(32, 64)
        + 2 * conv(64, 64)
        + dense(4096, 1024)
        + dense(1024, 1024)
        + dense(1024, num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_audit() {
        let net = build_paper_cnn(100, 1, 0).unwrap();
        let shapes = net.layer_shapes();
        assert_eq!(shapes[0], vec![32, 32, 32]);
        assert_eq!(shapes[4], vec![32, 16, 16]);
        assert_eq!(shapes[11], vec![64, 8, 8]);
        assert_eq!(shapes[12], vec![4096]);
        assert_eq!(shapes[13], vec![1024]);
        assert_eq!(shapes[15], vec![1024]);
        assert_eq!(shapes[17], vec![100]);
        assert_eq!(net.output_shape(), vec![100]);
    }

    #[test]
    fn param_count_closed_form() {
        // hand count for 1 channel, 2 classes:
        // 320 + 9248 + 18496 + 2 * 36928 + 4195328 + 1049600 + 2050
        assert_eq!(paper_cnn_param_count(2, 1), 5_348_898);
        for (k, c) in [(2, 1), (10, 1), (2, 3)] {
            let net = build_paper_cnn(k, c, 1).unwrap();
            assert_eq!(net.param_count(), paper_cnn_param_count(k, c));
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(build_paper_cnn(1, 1, 0).is_err());
        assert!(build_paper_cnn(2, 2, 0).is_err());
        assert!(build_paper_cnn_at(2, 1, 6, 0).is_err());
        assert!(build_mini_backbone(1, 0).is_err());
    }

    #[test]
    fn backbone_is_deterministic() {
        let a = build_mini_backbone(10, 42).unwrap();
        assert_eq!(a.output_shape(), vec![10]);
        assert_eq!(a, build_mini_backbone(10, 42).unwrap());
    }
}
