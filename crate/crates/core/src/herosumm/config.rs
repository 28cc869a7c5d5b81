use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of a summarizer. Field names are the JSON keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub ffn_hidden: usize,
    pub heads: usize,
    pub local_layers: usize,
    pub query_layers: usize,
    pub global_layers: usize,
    pub decoder_layers: usize,
    pub dropout: f64,
    pub vocab_size: usize,
    pub use_query_encoder: bool,
    pub use_hierarchical_merge: bool,
    pub use_ordering: bool,
    pub baseline_query_prepend: bool,
    #[serde(default = "yes")]
    pub tie_embeddings: bool,
    pub max_doc_tokens: usize,
    pub max_docs: usize,
    pub max_summary_tokens: usize,
    #[serde(default = "default_query_tokens")]
    pub max_query_tokens: usize,
}

fn yes() -> bool {
    true
}

fn default_query_tokens() -> usize {
    32
}

/// Model variants with the published layer budget: eight encoder layers,
/// one of them a query layer when the query encoder is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Baseline,
    Hierarchical,
    Ordering,
    Query,
    /// Hierarchical merge plus ordering.
    JointOrdering,
    /// Hierarchical merge plus query encoder.
    JointQuery,
}

impl ModelConfig {
    pub fn preset(preset: Preset, vocab_size: usize) -> Self {
        let (merge, ordering, query) = match preset {
            Preset::Baseline => (false, false, false),
            Preset::Hierarchical => (true, false, false),
            Preset::Ordering => (false, true, false),
            Preset::Query => (false, false, true),
            Preset::JointOrdering => (true, true, false),
            Preset::JointQuery => (true, false, true),
        };
        ModelConfig {
            d_model: 256,
            ffn_hidden: 1024,
            heads: 8,
            local_layers: if query { 5 } else { 6 },
            query_layers: usize::from(query),
            global_layers: 2,
            decoder_layers: 1,
            dropout: 0.1,
            vocab_size,
            use_query_encoder: query,
            use_hierarchical_merge: merge,
            use_ordering: ordering,
            baseline_query_prepend: !query,
            tie_embeddings: true,
            max_doc_tokens: 400,
            max_docs: 8,
            max_summary_tokens: 200,
            max_query_tokens: 32,
        }
    }

    /// Small dimensions for tests and quick experiments.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 16,
            ffn_hidden: 32,
            heads: 2,
            local_layers: 1,
            query_layers: 1,
            global_layers: 1,
            decoder_layers: 1,
            dropout: 0.0,
            vocab_size,
            use_query_encoder: true,
            use_hierarchical_merge: true,
            use_ordering: true,
            baseline_query_prepend: false,
            tie_embeddings: true,
            max_doc_tokens: 24,
            max_docs: 6,
            max_summary_tokens: 24,
            max_query_tokens: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(format!("model config: {m}")));
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return fail(format!("d_model {} must be a positive multiple of heads {}", self.d_model, self.heads));
        }
        if self.d_model % 4 != 0 {
            return fail(format!("d_model {} must be divisible by 4 for the split positional encoding", self.d_model));
        }
        if self.ffn_hidden == 0 {
            return fail("ffn_hidden must be positive".into());
        }
        if self.local_layers == 0 || self.global_layers == 0 || self.decoder_layers == 0 {
            return fail("local, global and decoder layer counts must be positive".into());
        }
        if self.use_query_encoder != (self.query_layers > 0) {
            return fail(format!(
                "query_layers = {} conflicts with use_query_encoder = {}",
                self.query_layers, self.use_query_encoder
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size <= crate::textcore::RESERVED.len() {
            return fail(format!("vocab_size {} leaves no room past the reserved ids", self.vocab_size));
        }
        if self.max_doc_tokens == 0 || self.max_docs == 0 || self.max_summary_tokens == 0 || self.max_query_tokens == 0 {
            return fail("length limits must be positive".into());
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: ModelConfig = serde_json::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}
