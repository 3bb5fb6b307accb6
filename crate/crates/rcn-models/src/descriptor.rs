use std::fmt;
use std::str::FromStr;

use crate::error::{ModelError, Result};

/// Named architectures plus a free-form `custom` kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Model1,
    Model2,
    Model3,
    Model4,
    Rcn,
    RcnW,
    RcnS,
    RcnA,
    RcnC,
    RcnF,
    RcnP,
    Custom,
}

impl ModelKind {
    pub const ALL_NAMED: [ModelKind; 11] = [
        ModelKind::Model1,
        ModelKind::Model2,
        ModelKind::Model3,
        ModelKind::Model4,
        ModelKind::Rcn,
        ModelKind::RcnW,
        ModelKind::RcnS,
        ModelKind::RcnA,
        ModelKind::RcnC,
        ModelKind::RcnF,
        ModelKind::RcnP,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Model1 => "model1",
            ModelKind::Model2 => "model2",
            ModelKind::Model3 => "model3",
            ModelKind::Model4 => "model4",
            ModelKind::Rcn => "rcn",
            ModelKind::RcnW => "rcn-w",
            ModelKind::RcnS => "rcn-s",
            ModelKind::RcnA => "rcn-a",
            ModelKind::RcnC => "rcn-c",
            ModelKind::RcnF => "rcn-f",
            ModelKind::RcnP => "rcn-p",
            ModelKind::Custom => "custom",
        }
    }

    /// Number of recurrent convolutional layers in the backbone.
    pub fn rconv_layers(&self) -> usize {
        match self {
            ModelKind::Model1 => 0,
            ModelKind::Model3 => 2,
            ModelKind::Model4 => 3,
            _ => 1,
        }
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "model1" => ModelKind::Model1,
            "model2" => ModelKind::Model2,
            "model3" => ModelKind::Model3,
            "model4" => ModelKind::Model4,
            "rcn" => ModelKind::Rcn,
            "rcn-w" => ModelKind::RcnW,
            "rcn-s" => ModelKind::RcnS,
            "rcn-a" => ModelKind::RcnA,
            "rcn-c" => ModelKind::RcnC,
            "rcn-f" => ModelKind::RcnF,
            "rcn-p" => ModelKind::RcnP,
            "custom" => ModelKind::Custom,
            other => return Err(ModelError::Descriptor(format!("unknown model kind {other:?}"))),
        })
    }
}

/// Where the parameter-free attention unit sits in the dataflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum AttentionPlacement {
    #[default]
    None,
    /// Map from the first convolutional layer's activation, applied to
    /// it before the recurrent layer (cascade).
    AfterConv1,
    /// Map from the recurrent layer's state-0 output, applied to it.
    AtRconvState0,
    AfterRconvState1,
    AfterRconvState2,
    /// Map from the recurrent layer's input, applied to its output.
    ParallelRconv,
    /// Map from the recurrent layer's final output, applied to it
    /// before max pooling.
    AfterRconv,
}

impl AttentionPlacement {
    pub const ALL: [AttentionPlacement; 7] = [
        AttentionPlacement::None,
        AttentionPlacement::AfterConv1,
        AttentionPlacement::AtRconvState0,
        AttentionPlacement::AfterRconvState1,
        AttentionPlacement::AfterRconvState2,
        AttentionPlacement::ParallelRconv,
        AttentionPlacement::AfterRconv,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionPlacement::None => "none",
            AttentionPlacement::AfterConv1 => "after_conv1",
            AttentionPlacement::AtRconvState0 => "at_rconv_state0",
            AttentionPlacement::AfterRconvState1 => "after_rconv_state1",
            AttentionPlacement::AfterRconvState2 => "after_rconv_state2",
            AttentionPlacement::ParallelRconv => "parallel_rconv",
            AttentionPlacement::AfterRconv => "after_rconv",
        }
    }

    /// True when the placement reads or modifies recurrent-layer state.
    pub fn needs_rconv(&self) -> bool {
        !matches!(self, AttentionPlacement::None | AttentionPlacement::AfterConv1)
    }
}

impl FromStr for AttentionPlacement {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AttentionPlacement::None,
            "after_conv1" => AttentionPlacement::AfterConv1,
            "at_rconv_state0" => AttentionPlacement::AtRconvState0,
            "after_rconv_state1" => AttentionPlacement::AfterRconvState1,
            "after_rconv_state2" => AttentionPlacement::AfterRconvState2,
            "parallel_rconv" => AttentionPlacement::ParallelRconv,
            "after_rconv" => AttentionPlacement::AfterRconv,
            other => {
                return Err(ModelError::Descriptor(format!(
                    "unknown attention placement {other:?}"
                )))
            }
        })
    }
}

/// Serializable description of a concrete network.
///
/// Canonical string grammar:
/// `kind=<name>;M=<int>;K=<int>;C=<int>;R=<int>;wide=<0|1>;shortcut=<0|1>;att=<placement>;dil=<list>`
/// with an optional `;states=<int>` suffix when the recurrent state
/// count differs from the default 3. Round-trips exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchDescriptor {
    pub model_kind: ModelKind,
    pub feature_maps: usize,
    pub pool_size: usize,
    pub num_classes: usize,
    pub input_resolution: usize,
    pub conv1_wide: bool,
    pub rconv_shortcut: bool,
    pub attention: AttentionPlacement,
    /// Recurrent states after the feed-forward state 0.
    pub rconv_states: usize,
    pub dilation_sizes: Vec<usize>,
}

pub const DEFAULT_RCONV_STATES: usize = 3;

impl ArchDescriptor {
    /// Descriptor for a named architecture. `model2` canonicalizes to
    /// `rcn`; they are the same network.
    pub fn named(
        kind: ModelKind,
        feature_maps: usize,
        pool_size: usize,
        num_classes: usize,
        input_resolution: usize,
    ) -> Result<Self> {
        let kind = match kind {
            ModelKind::Model2 => ModelKind::Rcn,
            ModelKind::Custom => {
                return Err(ModelError::Descriptor(
                    "custom descriptors carry explicit flags; use ArchDescriptor::custom".into(),
                ))
            }
            k => k,
        };
        let (wide, shortcut, att) = Self::named_flags(kind);
        let d = ArchDescriptor {
            model_kind: kind,
            feature_maps,
            pool_size,
            num_classes,
            input_resolution,
            conv1_wide: wide,
            rconv_shortcut: shortcut,
            attention: att,
            rconv_states: DEFAULT_RCONV_STATES,
            dilation_sizes: vec![1, 2, 3],
        };
        d.validate()?;
        Ok(d)
    }

    /// Free-form combination on the single-rconv backbone.
    pub fn custom(
        feature_maps: usize,
        pool_size: usize,
        num_classes: usize,
        input_resolution: usize,
        conv1_wide: bool,
        rconv_shortcut: bool,
        attention: AttentionPlacement,
    ) -> Result<Self> {
        let d = ArchDescriptor {
            model_kind: ModelKind::Custom,
            feature_maps,
            pool_size,
            num_classes,
            input_resolution,
            conv1_wide,
            rconv_shortcut,
            attention,
            rconv_states: DEFAULT_RCONV_STATES,
            dilation_sizes: vec![1, 2, 3],
        };
        d.validate()?;
        Ok(d)
    }

    fn named_flags(kind: ModelKind) -> (bool, bool, AttentionPlacement) {
        match kind {
            ModelKind::RcnW => (true, false, AttentionPlacement::None),
            ModelKind::RcnS => (false, true, AttentionPlacement::None),
            ModelKind::RcnA => (false, false, AttentionPlacement::AfterRconv),
            ModelKind::RcnC => (true, true, AttentionPlacement::AfterConv1),
            ModelKind::RcnF => (true, true, AttentionPlacement::AtRconvState0),
            ModelKind::RcnP => (true, true, AttentionPlacement::ParallelRconv),
            _ => (false, false, AttentionPlacement::None),
        }
    }

    /// If the flag combination matches a named single-rconv variant,
    /// return it (used to canonicalize search results).
    pub fn kind_for_flags(
        wide: bool,
        shortcut: bool,
        att: AttentionPlacement,
    ) -> Option<ModelKind> {
        for kind in [
            ModelKind::Rcn,
            ModelKind::RcnW,
            ModelKind::RcnS,
            ModelKind::RcnA,
            ModelKind::RcnC,
            ModelKind::RcnF,
            ModelKind::RcnP,
        ] {
            if Self::named_flags(kind) == (wide, shortcut, att) {
                return Some(kind);
            }
        }
        None
    }

    pub fn rconv_layers(&self) -> usize {
        self.model_kind.rconv_layers()
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_maps == 0 {
            return Err(ModelError::Descriptor("feature maps must be positive".into()));
        }
        if self.conv1_wide && self.feature_maps < self.dilation_sizes.len() {
            return Err(ModelError::Descriptor(format!(
                "wide expansion needs at least {} feature maps",
                self.dilation_sizes.len()
            )));
        }
        if self.pool_size == 0 {
            return Err(ModelError::Descriptor("pool size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(ModelError::Descriptor("need at least 2 classes".into()));
        }
        if self.input_resolution < 8 {
            return Err(ModelError::Descriptor(format!(
                "input resolution {} below minimum 8",
                self.input_resolution
            )));
        }
        if self.rconv_states < 1 {
            return Err(ModelError::Descriptor("need at least 1 recurrent state".into()));
        }
        if self.dilation_sizes.is_empty() || self.dilation_sizes.iter().any(|&d| d == 0) {
            return Err(ModelError::Descriptor("dilation sizes must be positive".into()));
        }
        if self.attention.needs_rconv() && self.rconv_layers() == 0 {
            return Err(ModelError::Descriptor(format!(
                "attention placement {} requires a recurrent layer",
                self.attention.as_str()
            )));
        }
        let min_states = match self.attention {
            AttentionPlacement::AfterRconvState1 => 1,
            AttentionPlacement::AfterRconvState2 => 2,
            _ => 0,
        };
        if self.rconv_states < min_states {
            return Err(ModelError::Descriptor(format!(
                "attention placement {} requires at least {min_states} recurrent states",
                self.attention.as_str()
            )));
        }
        if self.model_kind != ModelKind::Custom {
            let expect = Self::named_flags(self.model_kind);
            if expect != (self.conv1_wide, self.rconv_shortcut, self.attention) {
                return Err(ModelError::Descriptor(format!(
                    "flags contradict named kind {}",
                    self.model_kind.as_str()
                )));
            }
        }
        Ok(())
    }

    /// Split the conv1 channel budget across dilated streams: every
    /// stream gets `floor(M/n)` and the remainder goes to the leading
    /// (smallest-dilation) streams in order.
    pub fn stream_channels(&self) -> Vec<usize> {
        let n = self.dilation_sizes.len();
        let base = self.feature_maps / n;
        let rem = self.feature_maps % n;
        (0..n).map(|i| base + usize::from(i < rem)).collect()
    }
}

impl fmt::Display for ArchDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dil: Vec<String> = self.dilation_sizes.iter().map(|d| d.to_string()).collect();
        write!(
            f,
            "kind={};M={};K={};C={};R={};wide={};shortcut={};att={};dil={}",
            self.model_kind.as_str(),
            self.feature_maps,
            self.pool_size,
            self.num_classes,
            self.input_resolution,
            u8::from(self.conv1_wide),
            u8::from(self.rconv_shortcut),
            self.attention.as_str(),
            dil.join(",")
        )?;
        if self.rconv_states != DEFAULT_RCONV_STATES {
            write!(f, ";states={}", self.rconv_states)?;
        }
        Ok(())
    }
}

impl FromStr for ArchDescriptor {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        let mut kind = None;
        let mut m = None;
        let mut k = None;
        let mut c = None;
        let mut r = None;
        let mut wide = None;
        let mut shortcut = None;
        let mut att = None;
        let mut dil = None;
        let mut states = DEFAULT_RCONV_STATES;
        for field in s.split(';') {
            let (key, value) = field.split_once('=').ok_or_else(|| {
                ModelError::Descriptor(format!("malformed field {field:?} in {s:?}"))
            })?;
            let parse_usize = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| ModelError::Descriptor(format!("invalid integer {v:?}")))
            };
            let parse_flag = |v: &str| match v {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(ModelError::Descriptor(format!("invalid flag {other:?}"))),
            };
            match key {
                "kind" => kind = Some(value.parse::<ModelKind>()?),
                "M" => m = Some(parse_usize(value)?),
                "K" => k = Some(parse_usize(value)?),
                "C" => c = Some(parse_usize(value)?),
                "R" => r = Some(parse_usize(value)?),
                "wide" => wide = Some(parse_flag(value)?),
                "shortcut" => shortcut = Some(parse_flag(value)?),
                "att" => att = Some(value.parse::<AttentionPlacement>()?),
                "dil" => {
                    dil = Some(
                        value
                            .split(',')
                            .map(parse_usize)
                            .collect::<Result<Vec<usize>>>()?,
                    )
                }
                "states" => states = parse_usize(value)?,
                other => {
                    return Err(ModelError::Descriptor(format!("unknown field {other:?}")))
                }
            }
        }
        let missing = |name: &str| ModelError::Descriptor(format!("missing field {name}"));
        let d = ArchDescriptor {
            model_kind: kind.ok_or_else(|| missing("kind"))?,
            feature_maps: m.ok_or_else(|| missing("M"))?,
            pool_size: k.ok_or_else(|| missing("K"))?,
            num_classes: c.ok_or_else(|| missing("C"))?,
            input_resolution: r.ok_or_else(|| missing("R"))?,
            conv1_wide: wide.ok_or_else(|| missing("wide"))?,
            rconv_shortcut: shortcut.ok_or_else(|| missing("shortcut"))?,
            attention: att.ok_or_else(|| missing("att"))?,
            rconv_states: states,
            dilation_sizes: dil.ok_or_else(|| missing("dil"))?,
        };
        d.validate()?;
        Ok(d)
    }
}
