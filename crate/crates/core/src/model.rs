//! Generator models: a validated layer stack mapping a latent vector to an
//! image tensor, plus the reference DCGAN-64 topology.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::error::{Error, Result};
use crate::latent::{sample_latents, LatentSpace, LatentVector};
use crate::layers::{Activation, BatchNormInfer, FullyConnected, LayerSpec, TransposedConv};
use crate::tensor::Tensor;

/// Default batchnorm epsilon. Convention, not taken from any checkpoint.
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;
/// Default init std for generated weights. Convention as well.
pub const DEFAULT_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorModel {
    input_dim: usize,
    input_space: LatentSpace,
    layers: Vec<LayerSpec>,
    output_shape: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    /// Fail with a numeric error when a layer produces NaN or Inf.
    pub check_finite: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { check_finite: true }
    }
}

impl GeneratorModel {
    /// Validates the shape chain and every parameter; errors name the
    /// offending layer index.
    pub fn new(
        input_dim: usize,
        input_space: LatentSpace,
        layers: Vec<LayerSpec>,
        output_shape: Vec<usize>,
    ) -> Result<Self> {
        let model = Self {
            input_dim,
            input_space,
            layers,
            output_shape,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation(None, "input_dim must be >= 1"));
        }
        let mut shape = vec![self.input_dim];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, values) in layer.parameters() {
                if let Some(j) = values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::validation(
                        Some(i),
                        format!("{} {name}[{j}] is not finite", layer.name()),
                    ));
                }
            }
            shape = layer.output_shape(&shape).map_err(|e| at_layer(e, i))?;
        }
        if shape != self.output_shape {
            return Err(Error::validation(
                self.layers.len().checked_sub(1),
                format!(
                    "layer stack produces {shape:?} but model declares output {:?}",
                    self.output_shape
                ),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn input_space(&self) -> LatentSpace {
        self.input_space
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.parameters())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Whether outputs are squashed into [-1, 1].
    pub fn ends_with_tanh(&self) -> bool {
        matches!(
            self.layers.last(),
            Some(LayerSpec::Activation(Activation::Tanh))
        )
    }

    pub fn forward(&self, z: &LatentVector) -> Result<Tensor> {
        self.forward_with(z, ForwardOptions::default())
    }

    pub fn forward_with(&self, z: &LatentVector, opts: ForwardOptions) -> Result<Tensor> {
        if z.dim() != self.input_dim {
            return Err(Error::shape(
                None,
                format!(
                    "latent dim {} does not match model input_dim {}",
                    z.dim(),
                    self.input_dim
                ),
            ));
        }
        if z.space() != self.input_space {
            log::warn!(
                "latent space {} differs from model input space {}",
                z.space(),
                self.input_space
            );
        }
        let mut x = Tensor::from_vec(z.values().to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.apply(x).map_err(|e| at_layer(e, i))?;
            if opts.check_finite {
                if let Some(j) = x.first_non_finite() {
                    return Err(Error::Numeric {
                        layer: Some(i),
                        message: format!("{} produced non-finite value at {j}", layer.name()),
                    });
                }
            }
        }
        Ok(x)
    }
}

fn at_layer(err: Error, index: usize) -> Error {
    match err {
        Error::Shape {
            layer: None,
            message,
        } => Error::Shape {
            layer: Some(index),
            message,
        },
        Error::Validation {
            layer: None,
            message,
        } => Error::Validation {
            layer: Some(index),
            message,
        },
        Error::Numeric {
            layer: None,
            message,
        } => Error::Numeric {
            layer: Some(index),
            message,
        },
        other => other,
    }
}

/// Builder for the DCGAN-64 topology:
/// project to 4×4×(512s), then four stride-2 transposed convolutions
/// (kernel 4, padding 1) through 8×8×(256s), 16×16×(128s), 32×32×(64s)
/// to 64×64×3, batchnorm + ReLU between stages and tanh at the end.
#[derive(Debug, Clone)]
pub struct Dcgan64 {
    pub seed: u64,
    pub channel_scale: f64,
    pub init_std: f64,
    /// Latents pushed through the fresh network to set batchnorm running
    /// statistics. Zero keeps identity statistics.
    pub calibration_batch: usize,
}

impl Dcgan64 {
    pub const LATENT_DIM: usize = 100;
    pub const BASE_CHANNELS: [usize; 4] = [512, 256, 128, 64];

    pub fn new(seed: u64, channel_scale: f64) -> Self {
        Self {
            seed,
            channel_scale,
            init_std: DEFAULT_INIT_STD,
            calibration_batch: 16,
        }
    }

    pub fn channels(&self) -> Result<[usize; 4]> {
        let s = self.channel_scale;
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::invalid(format!(
                "channel_scale must be in (0, 1], got {s}"
            )));
        }
        let mut out = [0; 4];
        for (o, base) in out.iter_mut().zip(Self::BASE_CHANNELS) {
            *o = (base as f64 * s).round() as usize;
            if *o == 0 {
                return Err(Error::invalid(format!(
                    "channel_scale {s} leaves a stage with zero channels"
                )));
            }
        }
        Ok(out)
    }

    pub fn build(&self) -> Result<GeneratorModel> {
        let ch = self.channels()?;
        let normal = Normal::new(0.0, self.init_std)
            .map_err(|e| Error::invalid(format!("init_std: {e}")))?;
        let gamma_dist = Normal::new(1.0, self.init_std)
            .map_err(|e| Error::invalid(format!("init_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |n: usize, dist: &Normal<f64>| -> Vec<f32> {
            (0..n).map(|_| rng.sample(dist) as f32).collect()
        };

        let mut layers = Vec::new();
        let project = 4 * 4 * ch[0];
        layers.push(LayerSpec::FullyConnected(FullyConnected {
            in_features: Self::LATENT_DIM,
            out_features: project,
            weights: draw(project * Self::LATENT_DIM, &normal),
            bias: vec![0.0; project],
        }));
        layers.push(LayerSpec::Reshape {
            target_shape: vec![ch[0], 4, 4],
        });
        let stages = [ch[0], ch[1], ch[2], ch[3], 3];
        for pair in stages.windows(2) {
            let (cin, cout) = (pair[0], pair[1]);
            layers.push(LayerSpec::BatchNormInfer(BatchNormInfer {
                gamma: draw(cin, &gamma_dist),
                ..BatchNormInfer::identity(cin, DEFAULT_BN_EPSILON)
            }));
            layers.push(LayerSpec::Activation(Activation::Relu));
            layers.push(LayerSpec::TransposedConv(TransposedConv {
                in_channels: cin,
                out_channels: cout,
                kernel_h: 4,
                kernel_w: 4,
                stride: 2,
                padding: 1,
                output_padding: 0,
                weights: draw(cin * cout * 16, &normal),
                bias: vec![0.0; cout],
            }));
        }
        layers.push(LayerSpec::Activation(Activation::Tanh));

        let mut model = GeneratorModel::new(
            Self::LATENT_DIM,
            LatentSpace::UniformCube,
            layers,
            vec![3, 64, 64],
        )?;
        if self.calibration_batch > 0 {
            calibrate_batchnorm(&mut model, self.calibration_batch, self.seed)?;
        }
        Ok(model)
    }
}

/// Reference DCGAN-64 generator with seeded N(0, 0.02) weights.
pub fn dcgan64_architecture(seed: u64, channel_scale: f64) -> Result<GeneratorModel> {
    Dcgan64::new(seed, channel_scale).build()
}

/// Replace each batchnorm's running statistics with the per-channel mean
/// and (biased) variance observed when a seeded batch of latents flows
/// through the network, layer by layer.
pub fn calibrate_batchnorm(model: &mut GeneratorModel, batch: usize, seed: u64) -> Result<()> {
    let zs = sample_latents(
        model.input_space,
        model.input_dim,
        batch,
        seed ^ 0x6361_6c69_6272_6174,
    )?;
    let mut acts: Vec<Tensor> = zs
        .iter()
        .map(|z| Tensor::from_vec(z.values().to_vec()))
        .collect();
    for (i, layer) in model.layers.iter_mut().enumerate() {
        if let LayerSpec::BatchNormInfer(bn) = layer {
            let c = bn.channels();
            let mut sum = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            let mut count = 0usize;
            for t in &acts {
                let per = t.len() / c;
                count += per;
                for (ch, chunk) in t.data().chunks(per).enumerate() {
                    for v in chunk {
                        sum[ch] += v;
                        sq[ch] += v * v;
                    }
                }
            }
            for ch in 0..c {
                let mean = sum[ch] / count as f64;
                let var = (sq[ch] / count as f64 - mean * mean).max(0.0);
                bn.running_mean[ch] = mean as f32;
                bn.running_var[ch] = var as f32;
            }
        }
        acts = acts
            .into_iter()
            .map(|t| layer.apply(t))
            .collect::<Result<_>>()
            .map_err(|e| at_layer(e, i))?;
    }
    model.validate()
}
