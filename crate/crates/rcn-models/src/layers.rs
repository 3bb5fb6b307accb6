//! Building blocks shared by the assembled models and the search
//! supernet: the first convolutional layer (standard or wide) and the
//! recurrent convolutional layer with its optional shortcut dataflow
//! and attention hooks. Candidates that reuse one layer instance share
//! its parameters.

use tensor_engine::{
    add, batchnorm2d, concat_channels, conv2d, relu, BatchNormState, ConvParams, Real, Tensor,
};

use crate::attention::{apply_attention, attention_map, AttentionSource};
use crate::descriptor::AttentionPlacement;
use crate::error::{ModelError, Result};

/// First layer: one standard convolution or parallel dilated streams
/// concatenated on channels, then shared BN + ReLU.
pub struct Conv1Layer<T: Real> {
    pub streams: Vec<ConvParams<T>>,
    pub bn: BatchNormState<T>,
    pub wide: bool,
}

impl<T: Real> Conv1Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let conv = if self.wide {
            let outs = self
                .streams
                .iter()
                .map(|s| conv2d(x, s))
                .collect::<tensor_engine::Result<Vec<_>>>()?;
            concat_channels(&outs)?
        } else {
            conv2d(x, &self.streams[0])?
        };
        Ok(relu(&batchnorm2d(&conv, &mut self.bn, training)?)?)
    }

    pub fn out_channels(&self) -> usize {
        self.streams.iter().map(|s| s.out_channels).sum()
    }
}

/// Recurrent layer output plus the attention map it computed, if any.
pub struct RconvOutput<T: Real> {
    pub out: Tensor<T>,
    pub attention: Option<Tensor<T>>,
}

/// Recurrent convolutional layer: a 1x1 feed-forward state 0 followed
/// by `states` recurrent 3x3 convolutions sharing one weight set.
/// BN + ReLU follows every state; recurrent states share one BN unless
/// the layer was built with per-state normalization.
pub struct RconvLayer<T: Real> {
    pub ff: ConvParams<T>,
    pub rec: ConvParams<T>,
    pub bn_ff: BatchNormState<T>,
    pub bn_rec: Vec<BatchNormState<T>>,
    pub states: usize,
}

impl<T: Real> RconvLayer<T> {
    pub fn per_state_bn(&self) -> bool {
        self.bn_rec.len() > 1
    }

    /// Run the layer.
    ///
    /// Basic recurrence reuses the layer input at every state,
    /// `F_n = W*(X + S_{n-1}) + b`; the shortcut form accumulates each
    /// state's input and output, `Fhat_n = Fhat_{n-1} + S_{n-1}`,
    /// `F_n = W*Fhat_n + b`. Attention placements that touch recurrent
    /// state are realized here.
    pub fn forward(
        &mut self,
        x: &Tensor<T>,
        shortcut: bool,
        placement: AttentionPlacement,
        attention: Option<&AttentionSource<T>>,
        training: bool,
    ) -> Result<RconvOutput<T>> {
        let need_attention = placement.needs_rconv();
        if need_attention && attention.is_none() {
            return Err(ModelError::Mismatch(format!(
                "placement {} needs an attention source",
                placement.as_str()
            )));
        }
        let mut map_used: Option<Tensor<T>> = None;
        let attend = |s: &Tensor<T>,
                          from: &Tensor<T>,
                          map_used: &mut Option<Tensor<T>>|
         -> Result<Tensor<T>> {
            let map = attention_map(from, attention.unwrap())?;
            let out = apply_attention(s, &map)?;
            *map_used = Some(map);
            Ok(out)
        };

        let f0 = conv2d(x, &self.ff)?;
        let mut state = relu(&batchnorm2d(&f0, &mut self.bn_ff, training)?)?;
        if placement == AttentionPlacement::AtRconvState0 {
            let from = state.clone();
            state = attend(&state, &from, &mut map_used)?;
        }

        let mut carry = x.clone();
        for i in 1..=self.states {
            let input = if shortcut {
                carry = add(&carry, &state)?;
                carry.clone()
            } else {
                add(x, &state)?
            };
            let f = conv2d(&input, &self.rec)?;
            let bn = if self.per_state_bn() {
                &mut self.bn_rec[i - 1]
            } else {
                &mut self.bn_rec[0]
            };
            state = relu(&batchnorm2d(&f, bn, training)?)?;
            let here = match placement {
                AttentionPlacement::AfterRconvState1 if i == 1 => true,
                AttentionPlacement::AfterRconvState2 if i == 2 => true,
                _ => false,
            };
            if here {
                let from = state.clone();
                state = attend(&state, &from, &mut map_used)?;
            }
        }

        let out = match placement {
            AttentionPlacement::ParallelRconv => attend(&state, x, &mut map_used)?,
            AttentionPlacement::AfterRconv => {
                let from = state.clone();
                attend(&state, &from, &mut map_used)?
            }
            _ => state,
        };
        Ok(RconvOutput {
            out,
            attention: map_used,
        })
    }
}
