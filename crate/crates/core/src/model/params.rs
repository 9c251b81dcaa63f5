use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::ModelConfig;

/// One named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Span {
    pub start: usize,
    pub len: usize,
}

impl Span {
    #[inline]
    pub fn of<'a, T>(&self, v: &'a [T]) -> &'a [T] {
        &v[self.start..self.start + self.len]
    }

    #[inline]
    pub fn of_mut<'a, T>(&self, v: &'a mut [T]) -> &'a mut [T] {
        &mut v[self.start..self.start + self.len]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSpans {
    pub norm1: Span,
    pub wq: Span,
    pub bq: Span,
    pub wk: Span,
    pub bk: Span,
    pub wv: Span,
    pub bv: Span,
    pub wo: Span,
    pub bo: Span,
    pub norm2: Span,
    pub w1: Span,
    pub b1: Span,
    pub w2: Span,
    pub b2: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Spans {
    pub tok_emb: Span,
    pub merger_w: Span,
    pub merger_b: Span,
    pub pos_prompt: Span,
    pub pos_response: Span,
    pub layers: Vec<LayerSpans>,
    pub norm_f: Span,
    pub out_w: Span,
    pub out_b: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct ParamLayout {
    pub tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    pub total: usize,
    pub spans: Spans,
}

struct Builder {
    tensors: Vec<TensorSpec>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> Span {
        let len = shape.iter().product();
        let span = Span { start: self.total, len };
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset: self.total,
        });
        self.inits.push(init);
        self.total += len;
        span
    }
}

impl ParamLayout {
    pub fn new(c: &ModelConfig) -> Self {
        let h = c.hidden_dim;
        let f = c.ffn_dim;
        let levels = c.level_sizes.len();
        let vocab = c.vocab().size();
        let mut b = Builder {
            tensors: Vec::new(),
            inits: Vec::new(),
            total: 0,
        };
        let tok_emb = b.add("tok_emb", &[vocab, h], Init::Normal);
        let merger_w = b.add("merger.weight", &[levels * h, h], Init::Normal);
        let merger_b = b.add("merger.bias", &[h], Init::Zero);
        let pos_prompt = b.add("pos.prompt", &[c.max_prompt_positions, h], Init::Normal);
        let pos_response = b.add("pos.response", &[c.max_response_positions, h], Init::Normal);
        let layers = (0..c.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layers.{l}.{s}");
                LayerSpans {
                    norm1: b.add(p("norm1.gain"), &[h], Init::One),
                    wq: b.add(p("attn.wq"), &[h, h], Init::Normal),
                    bq: b.add(p("attn.bq"), &[h], Init::Zero),
                    wk: b.add(p("attn.wk"), &[h, h], Init::Normal),
                    bk: b.add(p("attn.bk"), &[h], Init::Zero),
                    wv: b.add(p("attn.wv"), &[h, h], Init::Normal),
                    bv: b.add(p("attn.bv"), &[h], Init::Zero),
                    wo: b.add(p("attn.wo"), &[h, h], Init::Normal),
                    bo: b.add(p("attn.bo"), &[h], Init::Zero),
                    norm2: b.add(p("norm2.gain"), &[h], Init::One),
                    w1: b.add(p("ffn.w1"), &[h, f], Init::Normal),
                    b1: b.add(p("ffn.b1"), &[f], Init::Zero),
                    w2: b.add(p("ffn.w2"), &[f, h], Init::Normal),
                    b2: b.add(p("ffn.b2"), &[h], Init::Zero),
                }
            })
            .collect();
        let norm_f = b.add("norm_f.gain", &[h], Init::One);
        let out_w = b.add("out.weight", &[h, vocab], Init::Normal);
        let out_b = b.add("out.bias", &[vocab], Init::Zero);
        Self {
            tensors: b.tensors,
            inits: b.inits,
            total: b.total,
            spans: Spans {
                tok_emb,
                merger_w,
                merger_b,
                pos_prompt,
                pos_response,
                layers,
                norm_f,
                out_w,
                out_b,
            },
        }
    }

    pub fn initial_values<T: Scalar>(&self, rng: &mut impl Rng, std: f64) -> Vec<T> {
        let mut out = Vec::with_capacity(self.total);
        for (t, init) in self.tensors.iter().zip(&self.inits) {
            for _ in 0..t.numel() {
                out.push(match init {
                    Init::Normal => {
                        let z: f64 = StandardNormal.sample(rng);
                        T::lit(std * z)
                    }
                    Init::Zero => T::zero(),
                    Init::One => T::one(),
                });
            }
        }
        out
    }
}
