use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flow_extraction::FlowMap;
use tensor_engine::{
    adaptive_avgpool2d, dropout, flatten, kaiming_uniform, linear, maxpool2d, softmax_rows,
    BatchNormState, Checkpoint, ConvParams, Real, Tensor, TensorEntry,
};

use crate::attention::{apply_attention, attention_map, AttentionSource};
use crate::descriptor::{ArchDescriptor, AttentionPlacement, ModelKind};
use crate::error::{ModelError, Result};
use crate::layers::{Conv1Layer, RconvLayer};

/// Build-time options outside the descriptor grammar.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuildOptions {
    /// Give every recurrent state its own BN parameters instead of the
    /// default shared set.
    pub per_state_bn: bool,
}

/// Intermediate maps exposed for attention inspection, CAM export and
/// tests.
pub struct FeatureTaps<T: Real> {
    /// First convolutional layer output (post BN/ReLU, pre dropout).
    pub conv1: Tensor<T>,
    /// Final feature map feeding the pooling head (post attention,
    /// pre dropout/maxpool); the CAM source.
    pub cam_tap: Tensor<T>,
    /// The attention map actually applied, when the architecture has one.
    pub attention: Option<Tensor<T>>,
}

pub struct ForwardOutput<T: Real> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    pub taps: FeatureTaps<T>,
}

/// A concrete recurrent convolutional network.
pub struct RcnModel<T: Real> {
    pub descriptor: ArchDescriptor,
    pub conv1: Conv1Layer<T>,
    pub rconv: Vec<RconvLayer<T>>,
    pub classifier_weight: Tensor<T>,
    pub classifier_bias: Tensor<T>,
    pub dropout_ratio: f64,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
}

impl<T: Real> RcnModel<T> {
    pub fn build_named(
        kind: ModelKind,
        feature_maps: usize,
        pool_size: usize,
        num_classes: usize,
        input_resolution: usize,
        seed: u64,
    ) -> Result<Self> {
        let desc = ArchDescriptor::named(
            kind,
            feature_maps,
            pool_size,
            num_classes,
            input_resolution,
        )?;
        Self::build(&desc, seed)
    }

    pub fn build(descriptor: &ArchDescriptor, seed: u64) -> Result<Self> {
        Self::build_with_options(descriptor, seed, BuildOptions::default())
    }

    /// Seeded construction. Parameters are drawn in a fixed order, so
    /// a given (descriptor, seed, options) triple is reproducible.
    pub fn build_with_options(
        descriptor: &ArchDescriptor,
        seed: u64,
        options: BuildOptions,
    ) -> Result<Self> {
        descriptor.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = descriptor.feature_maps;

        let conv1 = if descriptor.conv1_wide {
            let channels = descriptor.stream_channels();
            let mut streams = Vec::with_capacity(channels.len());
            for (i, &ch) in channels.iter().enumerate() {
                let d = descriptor.dilation_sizes[i];
                streams.push(ConvParams::init(3, 3, d, d, 3, ch, &mut rng)?);
            }
            Conv1Layer {
                streams,
                bn: BatchNormState::new(m)?,
                wide: true,
            }
        } else {
            Conv1Layer {
                streams: vec![ConvParams::init(3, 3, 1, 1, 3, m, &mut rng)?],
                bn: BatchNormState::new(m)?,
                wide: false,
            }
        };

        let mut rconv = Vec::with_capacity(descriptor.rconv_layers());
        for _ in 0..descriptor.rconv_layers() {
            let ff = ConvParams::init(1, 1, 0, 1, m, m, &mut rng)?;
            let rec = ConvParams::init(3, 1, 1, 1, m, m, &mut rng)?;
            let bn_count = if options.per_state_bn {
                descriptor.rconv_states
            } else {
                1
            };
            let bn_rec = (0..bn_count)
                .map(|_| BatchNormState::new(m))
                .collect::<tensor_engine::Result<Vec<_>>>()?;
            rconv.push(RconvLayer {
                ff,
                rec,
                bn_ff: BatchNormState::new(m)?,
                bn_rec,
                states: descriptor.rconv_states,
            });
        }

        let feat_dim = descriptor.pool_size * descriptor.pool_size * m;
        let classifier_weight = Tensor::parameter(
            &[descriptor.num_classes, feat_dim],
            kaiming_uniform(descriptor.num_classes * feat_dim, feat_dim, &mut rng),
        )?;
        let classifier_bias = Tensor::parameter(
            &[descriptor.num_classes],
            vec![T::zero(); descriptor.num_classes],
        )?;

        Ok(RcnModel {
            descriptor: descriptor.clone(),
            conv1,
            rconv,
            classifier_weight,
            classifier_bias,
            dropout_ratio: 0.5,
            norm_mean: [0.0; 3],
            norm_std: [1.0; 3],
        })
    }

    pub fn attention_source(&self) -> AttentionSource<T> {
        AttentionSource {
            classifier_weight: self.classifier_weight.clone(),
            pool_size: self.descriptor.pool_size,
        }
    }

    /// Full forward pass over an already-normalized `[N,3,R,R]` batch.
    pub fn forward<R: Rng>(
        &mut self,
        x: &Tensor<T>,
        training: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput<T>> {
        let shape = x.shape();
        let r = self.descriptor.input_resolution;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != r || shape[3] != r {
            return Err(ModelError::Mismatch(format!(
                "input {:?} does not match descriptor resolution {r}",
                shape
            )));
        }
        let source = self.attention_source();
        let placement = self.descriptor.attention;

        let c1 = self.conv1.forward(x, training)?;
        let tap_conv1 = c1.clone();
        let mut attention_used: Option<Tensor<T>> = None;
        let c1 = if placement == AttentionPlacement::AfterConv1 {
            let map = attention_map(&c1, &source)?;
            let out = apply_attention(&c1, &map)?;
            attention_used = Some(map);
            out
        } else {
            c1
        };
        let mut cam_tap = c1.clone();
        let mut h = dropout(&c1, self.dropout_ratio, training, rng)?;

        let shortcut = self.descriptor.rconv_shortcut;
        let layers = self.rconv.len();
        for (li, layer) in self.rconv.iter_mut().enumerate() {
            let layer_placement = if li == 0 { placement } else { AttentionPlacement::None };
            let out = layer.forward(
                &h,
                shortcut,
                layer_placement,
                Some(&source),
                training,
            )?;
            if out.attention.is_some() {
                attention_used = out.attention;
            }
            if li == layers - 1 {
                cam_tap = out.out.clone();
            }
            let dropped = dropout(&out.out, self.dropout_ratio, training, rng)?;
            h = maxpool2d(&dropped, 2, 2)?;
        }

        let pooled = adaptive_avgpool2d(&h, self.descriptor.pool_size)?;
        let flat = flatten(&pooled)?;
        let logits = linear(&flat, &self.classifier_weight, &self.classifier_bias)?;
        let probs = softmax_rows(&logits)?;
        Ok(ForwardOutput {
            logits,
            probs,
            taps: FeatureTaps {
                conv1: tap_conv1,
                cam_tap,
                attention: attention_used,
            },
        })
    }

    /// Standardize a raw flow-map batch with the stored per-channel
    /// statistics. Produces an untracked input tensor.
    pub fn normalize_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(ModelError::Mismatch(format!("expected [N,3,H,W], got {:?}", shape)));
        }
        let plane = shape[2] * shape[3];
        let data = x.data();
        let mut out = vec![T::zero(); data.len()];
        for n in 0..shape[0] {
            for c in 0..3 {
                let mean = T::from_f64(self.norm_mean[c] as f64);
                let inv_std = T::from_f64(1.0 / self.norm_std[c].max(1e-6) as f64);
                let base = (n * 3 + c) * plane;
                for i in 0..plane {
                    out[base + i] = (data[base + i] - mean) * inv_std;
                }
            }
        }
        drop(data);
        Ok(Tensor::from_vec(&shape, out)?)
    }

    /// Learnable parameters in a stable order with checkpoint names.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        if self.conv1.wide {
            for (i, s) in self.conv1.streams.iter().enumerate() {
                out.push((format!("conv1.s{i}.weight"), s.weight.clone()));
                out.push((format!("conv1.s{i}.bias"), s.bias.clone()));
            }
        } else {
            out.push(("conv1.weight".into(), self.conv1.streams[0].weight.clone()));
            out.push(("conv1.bias".into(), self.conv1.streams[0].bias.clone()));
        }
        out.push(("conv1.bn.gamma".into(), self.conv1.bn.gamma.clone()));
        out.push(("conv1.bn.beta".into(), self.conv1.bn.beta.clone()));
        for (l, layer) in self.rconv.iter().enumerate() {
            out.push((format!("rconv{l}.ff.weight"), layer.ff.weight.clone()));
            out.push((format!("rconv{l}.ff.bias"), layer.ff.bias.clone()));
            out.push((format!("rconv{l}.rec.weight"), layer.rec.weight.clone()));
            out.push((format!("rconv{l}.rec.bias"), layer.rec.bias.clone()));
            out.push((format!("rconv{l}.bn_ff.gamma"), layer.bn_ff.gamma.clone()));
            out.push((format!("rconv{l}.bn_ff.beta"), layer.bn_ff.beta.clone()));
            if layer.per_state_bn() {
                for (i, bn) in layer.bn_rec.iter().enumerate() {
                    out.push((format!("rconv{l}.bn_rec{i}.gamma"), bn.gamma.clone()));
                    out.push((format!("rconv{l}.bn_rec{i}.beta"), bn.beta.clone()));
                }
            } else {
                out.push((format!("rconv{l}.bn_rec.gamma"), layer.bn_rec[0].gamma.clone()));
                out.push((format!("rconv{l}.bn_rec.beta"), layer.bn_rec[0].beta.clone()));
            }
        }
        out.push(("cls.weight".into(), self.classifier_weight.clone()));
        out.push(("cls.bias".into(), self.classifier_bias.clone()));
        out
    }

    pub fn parameters(&self) -> Vec<Tensor<T>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    /// Total learnable parameter count. Identical across the
    /// parameter-free module variants for fixed (M, K, C).
    pub fn parameter_count(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    fn bn_slots(&mut self) -> Vec<(String, &mut BatchNormState<T>)> {
        let mut out: Vec<(String, &mut BatchNormState<T>)> = Vec::new();
        out.push(("conv1.bn".into(), &mut self.conv1.bn));
        for (l, layer) in self.rconv.iter_mut().enumerate() {
            out.push((format!("rconv{l}.bn_ff"), &mut layer.bn_ff));
            let per_state = layer.bn_rec.len() > 1;
            for (i, bn) in layer.bn_rec.iter_mut().enumerate() {
                let name = if per_state {
                    format!("rconv{l}.bn_rec{i}")
                } else {
                    format!("rconv{l}.bn_rec")
                };
                out.push((name, bn));
            }
        }
        out
    }

    pub fn to_checkpoint(&mut self) -> Checkpoint {
        let mut entries: Vec<TensorEntry> = self
            .named_parameters()
            .into_iter()
            .map(|(name, t)| TensorEntry {
                name,
                shape: t.shape(),
                values: t.data().iter().map(|v| Real::to_f64(*v) as f32).collect(),
            })
            .collect();
        for (name, bn) in self.bn_slots() {
            let c = bn.channels();
            entries.push(TensorEntry {
                name: format!("{name}.running_mean"),
                shape: vec![c],
                values: bn.running_mean.iter().map(|v| Real::to_f64(*v) as f32).collect(),
            });
            entries.push(TensorEntry {
                name: format!("{name}.running_var"),
                shape: vec![c],
                values: bn.running_var.iter().map(|v| Real::to_f64(*v) as f32).collect(),
            });
        }
        Checkpoint {
            descriptor: self.descriptor.to_string(),
            norm_mean: self.norm_mean,
            norm_std: self.norm_std,
            entries,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let descriptor: ArchDescriptor = ckpt.descriptor.parse()?;
        let per_state = ckpt.entries.iter().any(|e| e.name.contains(".bn_rec0."));
        let mut model =
            Self::build_with_options(&descriptor, 0, BuildOptions { per_state_bn: per_state })?;
        model.norm_mean = ckpt.norm_mean;
        model.norm_std = ckpt.norm_std;

        let mut used = 0usize;
        for (name, tensor) in model.named_parameters() {
            let entry = ckpt
                .entry(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing entry {name}")))?;
            if entry.shape != tensor.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "entry {name}: shape {:?} vs expected {:?}",
                    entry.shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(entry.values.iter().map(|&v| T::from_f64(v as f64)).collect())?;
            used += 1;
        }
        for (name, bn) in model.bn_slots() {
            for (suffix, buf) in [("running_mean", true), ("running_var", false)] {
                let full = format!("{name}.{suffix}");
                let entry = ckpt
                    .entry(&full)
                    .ok_or_else(|| ModelError::Checkpoint(format!("missing entry {full}")))?;
                if entry.values.len() != bn.channels() {
                    return Err(ModelError::Checkpoint(format!(
                        "entry {full}: {} values for {} channels",
                        entry.values.len(),
                        bn.channels()
                    )));
                }
                let values: Vec<T> = entry.values.iter().map(|&v| T::from_f64(v as f64)).collect();
                if buf {
                    bn.running_mean = values;
                } else {
                    if values.iter().any(|v| *v <= T::zero()) {
                        return Err(ModelError::Checkpoint(format!(
                            "entry {full}: running variance must stay positive"
                        )));
                    }
                    bn.running_var = values;
                }
                used += 1;
            }
        }
        if used != ckpt.entries.len() {
            return Err(ModelError::Checkpoint(format!(
                "checkpoint has {} entries, model consumed {used}",
                ckpt.entries.len()
            )));
        }
        Ok(model)
    }
}

/// Stack flow maps into an untracked `[N,3,R,R]` batch (planar
/// channel order `Vx, Vy, Vz`).
pub fn batch_from_flow_maps<T: Real>(maps: &[&FlowMap]) -> Result<Tensor<T>> {
    if maps.is_empty() {
        return Err(ModelError::Mismatch("empty flow-map batch".into()));
    }
    let r = maps[0].resolution;
    let plane = r * r;
    let mut data = Vec::with_capacity(maps.len() * 3 * plane);
    for map in maps {
        if map.resolution != r {
            return Err(ModelError::Mismatch(format!(
                "flow map resolution {} in a batch of {r}",
                map.resolution
            )));
        }
        data.extend(map.vx.iter().map(|&v| T::from_f64(v as f64)));
        data.extend(map.vy.iter().map(|&v| T::from_f64(v as f64)));
        data.extend(map.vz.iter().map(|&v| T::from_f64(v as f64)));
    }
    Ok(Tensor::from_vec(&[maps.len(), 3, r, r], data)?)
}

/// Row-wise argmax over `[N,C]` logits, first index on ties.
pub fn predict_classes<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let shape = logits.shape();
    let (n, c) = (shape[0], shape[1]);
    let data = logits.data();
    (0..n)
        .map(|i| {
            let row = &data[i * c..(i + 1) * c];
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
