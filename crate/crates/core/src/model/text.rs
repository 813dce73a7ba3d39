use std::collections::HashMap;

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use super::layers::{blocks_specs, load_blocks, Block, LayerNorm};
use super::params::{Init, ParamSource, ParamSpec};
use super::ModelConfig;
use crate::error::invalid;
use crate::Result;

pub const UNK: &str = "[UNK]";

/// Whitespace vocabulary; index 0 is the unknown-word token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(words: Vec<String>) -> Self {
        Vocab::from_words(words)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.words
    }
}

impl Vocab {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut all = vec![UNK.to_string()];
        for w in words {
            if !all.iter().any(|x| x == w) {
                all.push(w.to_string());
            }
        }
        Self::from_words(all)
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Vocab { words, index }
    }

    /// The caption grammar's vocabulary.
    pub fn captions() -> Self {
        Vocab::new(crate::synthgen::caption_vocabulary())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn tokenize(&self, caption: &str) -> Result<Vec<u32>> {
        let ids: Vec<u32> = caption
            .split_whitespace()
            .map(|w| *self.index.get(&w.to_lowercase()).unwrap_or(&0))
            .collect();
        if ids.is_empty() {
            return Err(invalid("caption is empty"));
        }
        Ok(ids)
    }
}

/// Small transformer text encoder: token embeddings → blocks → mean pool.
/// Frozen by default; a frozen encoder's outputs carry no gradient.
#[derive(Debug, Clone)]
pub struct TextEncoder {
    tok: Tensor,
    pos: Tensor,
    blocks: Vec<Block>,
    norm: LayerNorm,
    vocab: Vocab,
    frozen: bool,
}

impl TextEncoder {
    pub fn specs(prefix: &str, m: &ModelConfig, vocab_len: usize) -> Vec<ParamSpec> {
        let d = m.text_dim;
        let mut v = vec![
            ParamSpec::new(format!("{prefix}.tok"), &[vocab_len, d], Init::Normal(1.0), false),
            ParamSpec::new(format!("{prefix}.pos"), &[m.text_max_len, d], Init::Normal(0.1), false),
        ];
        v.extend(blocks_specs(prefix, m.text_depth, d, 4.0));
        v.extend(LayerNorm::specs(&format!("{prefix}.norm"), d));
        v
    }

    pub fn load(src: &dyn ParamSource, prefix: &str, m: &ModelConfig, vocab: Vocab, frozen: bool) -> Result<Self> {
        Ok(TextEncoder {
            tok: src.tensor(&format!("{prefix}.tok"))?,
            pos: src.tensor(&format!("{prefix}.pos"))?,
            blocks: load_blocks(src, prefix, m.text_depth, m.text_heads)?,
            norm: LayerNorm::load(src, &format!("{prefix}.norm"))?,
            vocab,
            frozen,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// `h` for one caption, shape `[D_text]`.
    pub fn encode(&self, caption: &str) -> Result<Tensor> {
        let mut ids = self.vocab.tokenize(caption)?;
        let max_len = self.pos.dim(0)?;
        if ids.len() > max_len {
            log::warn!("caption longer than {max_len} words truncated: {caption:?}");
            ids.truncate(max_len);
        }
        let n = ids.len();
        let device: &Device = self.tok.device();
        let ids = Tensor::from_vec(ids, n, device)?;
        let x = (self.tok.index_select(&ids, 0)? + self.pos.narrow(0, 0, n)?)?.unsqueeze(0)?;
        let mut x = x;
        for blk in &self.blocks {
            x = blk.forward(&x)?;
        }
        let h = self.norm.forward(&x)?.mean(1)?.squeeze(0)?;
        Ok(if self.frozen { h.detach() } else { h })
    }

    /// `[B, D_text]`
    pub fn encode_batch(&self, captions: &[&str]) -> Result<Tensor> {
        let rows = captions.iter().map(|c| self.encode(c)).collect::<Result<Vec<_>>>()?;
        Ok(Tensor::stack(&rows, 0)?)
    }
}
