use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::omics::Modality;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Gelu,
    Relu,
}

impl Activation {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gelu" => Ok(Activation::Gelu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::config(format!("unknown activation '{s}' (gelu or relu)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Gelu => "gelu",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Attention,
    Mean,
}

impl Pooling {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "attention" => Ok(Pooling::Attention),
            "mean" => Ok(Pooling::Mean),
            _ => Err(Error::config(format!("unknown pooling '{s}' (attention or mean)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pooling::Attention => "attention",
            Pooling::Mean => "mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub layers: usize,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub token_dim: usize,
    /// Width of each enabled omics segment, in stacking order.
    pub segments: Vec<(Modality, usize)>,
    pub kernel_sizes: Vec<usize>,
    pub conv_channels: usize,
    /// Hidden width of the channel-attention gate.
    pub gate_hidden: usize,
    /// Upper bound on the total number of omics tokens.
    pub max_omics_tokens: usize,
    pub omics: TransformerSpec,
    pub drug: TransformerSpec,
    pub fusion: TransformerSpec,
    pub ffn_mult: usize,
    pub gnn_layers: usize,
    pub pooling: Pooling,
    pub head_hidden: usize,
    pub activation: Activation,
    pub dropout: f64,
    pub omics_positions: bool,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub ln_eps: f64,
}

impl ModelConfig {
    /// Full-scale defaults for the given omics segments.
    pub fn new(segments: Vec<(Modality, usize)>) -> Self {
        let t = TransformerSpec { layers: 2, heads: 4 };
        ModelConfig {
            token_dim: 128,
            segments,
            kernel_sizes: vec![3, 7, 15],
            conv_channels: 16,
            gate_hidden: 16,
            max_omics_tokens: 64,
            omics: t,
            drug: t,
            fusion: t,
            ffn_mult: 2,
            gnn_layers: 3,
            pooling: Pooling::Attention,
            head_hidden: 64,
            activation: Activation::Gelu,
            dropout: 0.1,
            omics_positions: false,
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.0,
            gamma: 2.0,
            ln_eps: 1e-5,
        }
    }

    /// Small configuration used by tests and the synthetic benchmarks.
    pub fn tiny(segments: Vec<(Modality, usize)>, d: usize) -> Self {
        let t = TransformerSpec { layers: 1, heads: 2 };
        ModelConfig {
            token_dim: d,
            conv_channels: 4,
            gate_hidden: 4,
            max_omics_tokens: 8,
            omics: t,
            drug: t,
            fusion: t,
            gnn_layers: 2,
            head_hidden: d,
            dropout: 0.0,
            ..ModelConfig::new(segments)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.token_dim == 0 {
            return bad("token_dim must be positive".into());
        }
        for (name, t) in [("omics", self.omics), ("drug", self.drug), ("fusion", self.fusion)] {
            if t.heads == 0 || self.token_dim % t.heads != 0 {
                return bad(format!("{name} transformer: token_dim {} not divisible by {} heads", self.token_dim, t.heads));
            }
        }
        if self.gnn_layers == 0 {
            return bad("gnn_layers must be at least 1".into());
        }
        if self.segments.is_empty() || self.segments.iter().any(|(_, w)| *w == 0) {
            return bad("every enabled omics segment needs a positive width".into());
        }
        if self.kernel_sizes.is_empty() || self.kernel_sizes.iter().any(|k| *k == 0 || k % 2 == 0) {
            return bad(format!("kernel sizes must be odd and positive, got {:?}", self.kernel_sizes));
        }
        if self.conv_channels == 0 || self.gate_hidden == 0 || self.head_hidden == 0 || self.ffn_mult == 0 {
            return bad("layer widths must be positive".into());
        }
        if self.max_omics_tokens < self.segments.len() {
            return bad(format!(
                "max_omics_tokens {} is below the number of omics segments {}",
                self.max_omics_tokens,
                self.segments.len()
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        Ok(())
    }

    /// Token budget per omics segment.
    pub fn tokens_per_segment(&self) -> usize {
        self.max_omics_tokens / self.segments.len()
    }
}
