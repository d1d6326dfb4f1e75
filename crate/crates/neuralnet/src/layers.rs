use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

/// One stage of a sequential network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d { cin: usize, cout: usize, kernel: usize },
    AvgPool2d { window: usize },
    Relu,
    UpsampleBilinear2x,
    TransposedConv2x { cin: usize, cout: usize },
    /// `t = relu(tconv2x(x))`, `u = relu(conv3(t))`, output `concat(t, u)`
    /// with `2 * growth` channels.
    DenseBlock { cin: usize, growth: usize },
    /// Fully connected map over the flattened `[channels, height, width]`
    /// features, keeping that shape.
    Linear { channels: usize, height: usize, width: usize },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::AvgPool2d { .. } => "avg_pool2d",
            LayerSpec::Relu => "relu",
            LayerSpec::UpsampleBilinear2x => "upsample_bilinear2x",
            LayerSpec::TransposedConv2x { .. } => "transposed_conv2x",
            LayerSpec::DenseBlock { .. } => "dense_block",
            LayerSpec::Linear { .. } => "linear",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NnError::Config(format!("{}: {msg}", self.name())));
        match *self {
            LayerSpec::Conv2d { cin, cout, kernel } => {
                if cin == 0 || cout == 0 {
                    return bad("channel counts must be positive".into());
                }
                if kernel % 2 == 0 {
                    return bad(format!("kernel size {kernel} must be odd"));
                }
            }
            LayerSpec::AvgPool2d { window } if window < 2 => return bad(format!("window {window} < 2")),
            LayerSpec::TransposedConv2x { cin, cout } if cin == 0 || cout == 0 => {
                return bad("channel counts must be positive".into())
            }
            LayerSpec::DenseBlock { cin, growth } if cin == 0 || growth == 0 => {
                return bad("channel counts must be positive".into())
            }
            LayerSpec::Linear { channels, height, width } if channels * height * width == 0 => {
                return bad("feature shape must be non-empty".into())
            }
            _ => {}
        }
        Ok(())
    }

    /// Shapes of the trainable tensors, in storage order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d { cin, cout, kernel } => vec![vec![cout, cin, kernel, kernel], vec![cout]],
            LayerSpec::TransposedConv2x { cin, cout } => vec![vec![cin, cout, 2, 2], vec![cout]],
            LayerSpec::DenseBlock { cin, growth } => vec![
                vec![cin, growth, 2, 2],
                vec![growth],
                vec![growth, growth, 3, 3],
                vec![growth],
            ],
            LayerSpec::Linear { channels, height, width } => {
                let f = channels * height * width;
                vec![vec![f, f], vec![f]]
            }
            LayerSpec::AvgPool2d { .. } | LayerSpec::Relu | LayerSpec::UpsampleBilinear2x => vec![],
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    /// Fan-in of each parameter tensor, used for initialization. Biases share
    /// the fan-in of the weight they accompany.
    pub(crate) fn fan_ins(&self) -> Vec<usize> {
        match *self {
            LayerSpec::Conv2d { cin, kernel, .. } => vec![cin * kernel * kernel; 2],
            LayerSpec::TransposedConv2x { cin, .. } => vec![cin; 2],
            LayerSpec::DenseBlock { cin, growth } => vec![cin, cin, growth * 9, growth * 9],
            LayerSpec::Linear { channels, height, width } => vec![channels * height * width; 2],
            _ => vec![],
        }
    }

    /// `[c, h, w]` after this layer, or an error naming the layer.
    pub fn output_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [c, h, w] = input;
        let mismatch = |expected: usize| NnError::Shape {
            layer: self.name().into(),
            expected: vec![expected, h, w],
            got: vec![c, h, w],
        };
        Ok(match *self {
            LayerSpec::Conv2d { cin, cout, .. } => {
                if c != cin {
                    return Err(mismatch(cin));
                }
                [cout, h, w]
            }
            LayerSpec::AvgPool2d { window } => {
                if h % window != 0 || w % window != 0 || h == 0 {
                    return Err(NnError::Config(format!("avg_pool2d: window {window} does not tile {h}x{w}")));
                }
                [c, h / window, w / window]
            }
            LayerSpec::Relu => input,
            LayerSpec::UpsampleBilinear2x => [c, 2 * h, 2 * w],
            LayerSpec::TransposedConv2x { cin, cout } => {
                if c != cin {
                    return Err(mismatch(cin));
                }
                [cout, 2 * h, 2 * w]
            }
            LayerSpec::DenseBlock { cin, growth } => {
                if c != cin {
                    return Err(mismatch(cin));
                }
                [2 * growth, 2 * h, 2 * w]
            }
            LayerSpec::Linear { channels, height, width } => {
                if c * h * w != channels * height * width {
                    return Err(NnError::Shape {
                        layer: "linear".into(),
                        expected: vec![channels, height, width],
                        got: vec![c, h, w],
                    });
                }
                [channels, height, width]
            }
        })
    }

    /// Numeric tag and hyperparameters as stored in checkpoints.
    pub fn encode(&self) -> (u8, Vec<u32>) {
        let u = |v: usize| v as u32;
        match *self {
            LayerSpec::Conv2d { cin, cout, kernel } => (0, vec![u(cin), u(cout), u(kernel)]),
            LayerSpec::AvgPool2d { window } => (1, vec![u(window)]),
            LayerSpec::Relu => (2, vec![]),
            LayerSpec::UpsampleBilinear2x => (3, vec![]),
            LayerSpec::TransposedConv2x { cin, cout } => (4, vec![u(cin), u(cout)]),
            LayerSpec::DenseBlock { cin, growth } => (5, vec![u(cin), u(growth)]),
            LayerSpec::Linear { channels, height, width } => (6, vec![u(channels), u(height), u(width)]),
        }
    }

    /// Number of hyperparameter words that follow `tag`.
    pub fn hyper_len(tag: u8) -> Option<usize> {
        Some(match tag {
            0 | 6 => 3,
            1 => 1,
            2 | 3 => 0,
            4 | 5 => 2,
            _ => return None,
        })
    }

    pub fn decode(tag: u8, h: &[u32]) -> Result<Self> {
        if Self::hyper_len(tag) != Some(h.len()) {
            return Err(NnError::Checkpoint(format!("bad layer record: tag {tag}, {} words", h.len())));
        }
        let u = |i: usize| h[i] as usize;
        let spec = match tag {
            0 => LayerSpec::Conv2d {
                cin: u(0),
                cout: u(1),
                kernel: u(2),
            },
            1 => LayerSpec::AvgPool2d { window: u(0) },
            2 => LayerSpec::Relu,
            3 => LayerSpec::UpsampleBilinear2x,
            4 => LayerSpec::TransposedConv2x { cin: u(0), cout: u(1) },
            5 => LayerSpec::DenseBlock { cin: u(0), growth: u(1) },
            _ => LayerSpec::Linear {
                channels: u(0),
                height: u(1),
                width: u(2),
            },
        };
        spec.validate().map_err(|e| NnError::Checkpoint(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_even_kernel_and_small_window() {
        assert!(LayerSpec::Conv2d { cin: 1, cout: 1, kernel: 2 }.validate().is_err());
        assert!(LayerSpec::AvgPool2d { window: 1 }.validate().is_err());
        assert!(LayerSpec::AvgPool2d { window: 2 }.validate().is_ok());
    }

    #[test]
    fn encode_decode_all_kinds() {
        let all = [
            LayerSpec::Conv2d { cin: 2, cout: 3, kernel: 5 },
            LayerSpec::AvgPool2d { window: 4 },
            LayerSpec::Relu,
            LayerSpec::UpsampleBilinear2x,
            LayerSpec::TransposedConv2x { cin: 3, cout: 2 },
            LayerSpec::DenseBlock { cin: 4, growth: 6 },
            LayerSpec::Linear { channels: 2, height: 3, width: 3 },
        ];
        for s in all {
            let (tag, h) = s.encode();
            assert_eq!(LayerSpec::decode(tag, &h).unwrap(), s);
        }
        assert!(LayerSpec::decode(9, &[]).is_err());
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let err = LayerSpec::Conv2d { cin: 2, cout: 3, kernel: 3 }
            .output_shape([1, 8, 8])
            .unwrap_err();
        assert!(err.to_string().contains("conv2d"));
    }
}
