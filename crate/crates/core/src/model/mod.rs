//! Tiny decoder-only transformer: pre-norm blocks with rotary attention,
//! gated SiLU feed-forward, RMS norms and an untied output head.
//!
//! Parameters live in one flat buffer addressed through a [`ParamLayout`],
//! which keeps the optimizer, checkpoints and gradient checks layout-agnostic.

mod checkpoint;
mod forward;
pub mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use forward::{Example, ForwardCache, Gradients};
pub use ops::Float;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub intermediate: usize,
    pub heads: usize,
    pub vocab: usize,
    pub max_seq_len: usize,
    pub rope_base: f64,
    pub init_std: f64,
    pub seed: u64,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f64,
}

fn default_norm_eps() -> f64 {
    1e-6
}

/// Smallest and largest hidden/layer ratio accepted by [`ModelConfig::sized`].
pub const ASPECT_RATIO_RANGE: (f64, f64) = (128.0 / 3.0, 128.0);

impl ModelConfig {
    /// Builds a config directly; only structural validity is checked.
    pub fn new(num_layers: usize, hidden: usize, intermediate: usize, heads: usize) -> Self {
        ModelConfig {
            num_layers,
            hidden,
            intermediate,
            heads,
            vocab: tokenizer::VOCAB_SIZE,
            max_seq_len: 256,
            rope_base: 10000.0,
            init_std: 0.02,
            seed: 0,
            norm_eps: default_norm_eps(),
        }
    }

    /// Sizing rule used for the reference model family: intermediate size is
    /// 8/3 of hidden rounded up to a multiple of 128, and hidden/layers stays
    /// inside [`ASPECT_RATIO_RANGE`].
    pub fn sized(num_layers: usize, hidden: usize, heads: usize) -> Result<Self> {
        let intermediate = intermediate_for(hidden, 128);
        let aspect = hidden as f64 / num_layers as f64;
        let (lo, hi) = ASPECT_RATIO_RANGE;
        if aspect < lo - 1e-9 || aspect > hi + 1e-9 {
            return Err(Error::Config(format!(
                "aspect ratio {aspect:.2} (hidden {hidden} / layers {num_layers}) outside [{lo:.2}, {hi}]"
            )));
        }
        let cfg = Self::new(num_layers, hidden, intermediate, heads);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Desk-scale variant of the sizing rule: 8/3 ratio rounded up to a multiple of 8,
    /// no aspect-ratio constraint.
    pub fn desk(num_layers: usize, hidden: usize, heads: usize) -> Self {
        Self::new(num_layers, hidden, intermediate_for(hidden, 8), heads)
    }

    /// The three smallest configurations of the reference size table
    /// (listed there as 0.6M, 1.3M and 5.1M non-embed parameters).
    pub fn reference_table() -> Vec<(&'static str, ModelConfig)> {
        vec![
            ("20M", Self::new(3, 128, 384, 4)),
            ("30M", Self::new(3, 192, 512, 4)),
            ("41M", Self::new(3, 256, 768, 8)),
            ("44M", Self::new(6, 256, 768, 8)),
            ("69M", Self::new(6, 384, 1024, 8)),
            ("97M", Self::new(6, 512, 1408, 8)),
        ]
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init_std(mut self, std: f64) -> Self {
        self.init_std = std;
        self
    }

    pub fn with_max_seq_len(mut self, len: usize) -> Self {
        self.max_seq_len = len;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden == 0 || self.intermediate == 0 || self.heads == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden {} not divisible by heads {}",
                self.hidden, self.heads
            )));
        }
        if self.head_dim() % 2 != 0 {
            return Err(Error::Config("rotary embedding needs an even head dimension".into()));
        }
        if self.vocab < tokenizer::VOCAB_SIZE {
            return Err(Error::Config(format!("vocab {} smaller than tokenizer", self.vocab)));
        }
        if self.max_seq_len == 0 {
            return Err(Error::Config("max_seq_len must be positive".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config("init_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn intermediate_for(hidden: usize, multiple: usize) -> usize {
    let target = hidden * 8;
    let unit = 3 * multiple;
    target.div_ceil(unit).max(1) * multiple
}

/// Closed-form parameter count as `(total, non_embed)`.
///
/// Per layer: four `hidden²` attention projections, three `hidden`-sized
/// query/key/value biases, three `hidden·intermediate` feed-forward matrices
/// and two norm gains; plus the final norm gain. Embedding and output head
/// (`vocab·hidden` each) count only toward the total.
pub fn count_params(cfg: &ModelConfig) -> (usize, usize) {
    let h = cfg.hidden;
    let per_layer = 4 * h * h + 3 * h + 3 * h * cfg.intermediate + 2 * h;
    let non_embed = cfg.num_layers * per_layer + h;
    (non_embed + 2 * cfg.vocab * h, non_embed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Embedding,
    Head,
    Matrix,
    Bias,
    Gain,
}

impl ParamKind {
    pub fn is_embedding(self) -> bool {
        matches!(self, ParamKind::Embedding | ParamKind::Head)
    }

    /// Weight decay applies to matrices (embeddings included), not to biases or gains.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::Embedding | ParamKind::Head | ParamKind::Matrix)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    /// Full name, e.g. `layers.1.wq`.
    pub name: String,
    /// Name with the layer index stripped, e.g. `wq`; used for per-group reporting.
    pub group: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerOffsets {
    pub attn_norm: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub ffn_norm: usize,
    pub w_gate: usize,
    pub w_up: usize,
    pub w_down: usize,
}

#[derive(Debug, Clone)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
    pub(crate) tok_emb: usize,
    pub(crate) layers: Vec<LayerOffsets>,
    pub(crate) final_norm: usize,
    pub(crate) lm_head: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, i, v) = (cfg.hidden, cfg.intermediate, cfg.vocab);
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, group: &str, kind: ParamKind, shape: Vec<usize>| {
            let len = shape.iter().product();
            let at = offset;
            entries.push(ParamEntry {
                name,
                group: group.to_string(),
                kind,
                shape,
                offset: at,
                len,
            });
            offset += len;
            at
        };
        let tok_emb = push("tok_emb".into(), "tok_emb", ParamKind::Embedding, vec![v, h]);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for l in 0..cfg.num_layers {
            let mut p = |g: &str, kind, shape| push(format!("layers.{l}.{g}"), g, kind, shape);
            layers.push(LayerOffsets {
                attn_norm: p("attn_norm", ParamKind::Gain, vec![h]),
                wq: p("wq", ParamKind::Matrix, vec![h, h]),
                bq: p("bq", ParamKind::Bias, vec![h]),
                wk: p("wk", ParamKind::Matrix, vec![h, h]),
                bk: p("bk", ParamKind::Bias, vec![h]),
                wv: p("wv", ParamKind::Matrix, vec![h, h]),
                bv: p("bv", ParamKind::Bias, vec![h]),
                wo: p("wo", ParamKind::Matrix, vec![h, h]),
                ffn_norm: p("ffn_norm", ParamKind::Gain, vec![h]),
                w_gate: p("w_gate", ParamKind::Matrix, vec![h, i]),
                w_up: p("w_up", ParamKind::Matrix, vec![h, i]),
                w_down: p("w_down", ParamKind::Matrix, vec![i, h]),
            });
        }
        let final_norm = push("final_norm".into(), "final_norm", ParamKind::Gain, vec![h]);
        let lm_head = push("lm_head".into(), "lm_head", ParamKind::Head, vec![h, v]);
        ParamLayout {
            entries,
            total: offset,
            tok_emb,
            layers,
            final_norm,
            lm_head,
        }
    }

    /// Distinct group names in layout order.
    pub fn groups(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for e in &self.entries {
            if !seen.contains(&e.group) {
                seen.push(e.group.clone());
            }
        }
        seen
    }

    pub fn non_embed(&self) -> usize {
        self.entries.iter().filter(|e| !e.kind.is_embedding()).map(|e| e.len).sum()
    }
}

/// Parameters of one model instance.
#[derive(Debug, Clone)]
pub struct ModelState<T: Float = f32> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub params: Vec<T>,
    pub(crate) rope: ops::Rope<T>,
}

impl<T: Float> PartialEq for ModelState<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl<T: Float> ModelState<T> {
    pub fn from_params(config: ModelConfig, params: Vec<T>) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        if params.len() != layout.total {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        let rope = ops::Rope::new(config.head_dim(), config.max_seq_len, config.rope_base);
        Ok(ModelState {
            config,
            layout,
            params,
            rope,
        })
    }

    pub fn cast<U: Float>(&self) -> ModelState<U> {
        let params = self.params.iter().map(|&p| U::of(p.f64())).collect();
        ModelState::from_params(self.config.clone(), params).expect("same layout")
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.params[e.offset..e.offset + e.len])
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

/// Gaussian(0, `init_std`) matrices, zero biases, unit gains. Deterministic in `seed`.
pub fn init_model<T: Float>(config: &ModelConfig, seed: u64) -> Result<ModelState<T>> {
    config.validate()?;
    let layout = ParamLayout::new(config);
    let mut params = vec![T::zero(); layout.total];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    for e in &layout.entries {
        let slot = &mut params[e.offset..e.offset + e.len];
        match e.kind {
            ParamKind::Gain => slot.fill(T::one()),
            ParamKind::Bias => slot.fill(T::zero()),
            _ => {
                for p in slot.iter_mut() {
                    *p = T::of(normal.sample(&mut rng));
                }
            }
        }
    }
    let mut cfg = config.clone();
    cfg.seed = seed;
    ModelState::from_params(cfg, params)
}
