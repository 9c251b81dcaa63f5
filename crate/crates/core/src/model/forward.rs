//! Forward pass, cached incremental decoding, and the hand-derived backward pass.
//!
//! Block structure (pre-norm): `x += Attn(RMSNorm(x))`, `x += FFN(RMSNorm(x))`, with a final
//! RMSNorm and an untied output projection. The FFN uses tanh-approximated GELU so the whole
//! network is smooth, which keeps finite-difference checks meaningful.
//!
//! Incremental decoding reuses the prompt's keys and values. Every row-wise operation runs in
//! the same order in both paths, so cached logits equal full-forward logits bit for bit.

use std::ops::Range;

use super::linalg::{axpy, bias_acc, dot, linear, matmul_t_acc, outer_acc};
use super::params::Span;
use super::scalar::Scalar;
use super::{masked_log_softmax, Model, PromptCell, PromptSequence, Token};
use crate::error::{GenRecError, Result};

const NORM_EPS: f64 = 1e-6;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;

/// Per-token term of a scalar objective `J = Σ_t term_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenObjective {
    /// `c · log p_t`
    LogProb(f64),
    /// `c · p_t`
    Prob(f64),
}

#[derive(Debug, Clone)]
enum RowSource {
    Token(Token),
    Merged(Vec<Token>),
}

#[derive(Debug, Clone)]
struct InputRow {
    source: RowSource,
    prompt_side: bool,
    pos: usize,
    /// Index of the first row of this row's response branch; prompt rows use 0.
    branch_start: usize,
}

#[derive(Debug, Clone)]
struct LayerKv<T> {
    k: Vec<T>,
    v: Vec<T>,
}

/// Keys and values of every layer over the prompt, plus the logits that predict the first
/// response token.
#[derive(Debug, Clone)]
pub struct PromptState<T> {
    kv: Vec<LayerKv<T>>,
    n_prompt: usize,
    last_logits: Vec<T>,
}

impl<T> PromptState<T> {
    pub fn n_prompt(&self) -> usize {
        self.n_prompt
    }

    pub fn first_logits(&self) -> &[T] {
        &self.last_logits
    }
}

struct LayerTrace<T> {
    x_in: Vec<T>,
    inv1: Vec<T>,
    a: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    x_mid: Vec<T>,
    inv2: Vec<T>,
    b: Vec<T>,
    u: Vec<T>,
    g: Vec<T>,
}

struct FullPass<T> {
    rows: Vec<InputRow>,
    n_prompt: usize,
    branch_starts: Vec<usize>,
    keys: KeySets,
    traces: Vec<LayerTrace<T>>,
    x_last: Vec<T>,
    inv_f: Vec<T>,
    xf: Vec<T>,
}

impl<T> FullPass<T> {
    /// Row whose output predicts token `t` of branch `b`.
    fn logit_row(&self, b: usize, t: usize) -> usize {
        if t == 0 {
            self.n_prompt - 1
        } else {
            self.branch_starts[b] + t - 1
        }
    }
}

fn rms_forward<T: Scalar>(x: &[T], gain: &[T], h: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(NORM_EPS);
    let hn = T::lit(h as f64);
    let mut y = Vec::with_capacity(x.len());
    let mut inv = Vec::with_capacity(x.len() / h);
    for row in x.chunks_exact(h) {
        let ms = dot(row, row) / hn;
        let r = T::one() / (ms + eps).sqrt();
        inv.push(r);
        y.extend(row.iter().zip(gain).map(|(&v, &g)| v * r * g));
    }
    (y, inv)
}

/// Returns `dx`; accumulates the gain gradient.
fn rms_backward<T: Scalar>(dy: &[T], x: &[T], inv: &[T], gain: &[T], dgain: &mut [T], h: usize) -> Vec<T> {
    let hn = T::lit(h as f64);
    let mut dx = vec![T::zero(); x.len()];
    for (i, ((dyr, xr), dxr)) in dy.chunks_exact(h).zip(x.chunks_exact(h)).zip(dx.chunks_exact_mut(h)).enumerate() {
        let r = inv[i];
        let mut m = T::zero();
        for j in 0..h {
            let xhat = xr[j] * r;
            dgain[j] += dyr[j] * xhat;
            m += dyr[j] * gain[j] * xhat;
        }
        m /= hn;
        for j in 0..h {
            let xhat = xr[j] * r;
            dxr[j] = r * (dyr[j] * gain[j] - xhat * m);
        }
    }
    dx
}

#[inline]
fn gelu<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    let t = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * u * u)
}

/// Keys visible to each query row: at most two contiguous index ranges into the key matrix.
struct KeySets {
    ranges: Vec<[Range<usize>; 2]>,
    offsets: Vec<usize>,
    total: usize,
}

impl KeySets {
    fn new(ranges: Vec<[Range<usize>; 2]>) -> Self {
        let mut offsets = Vec::with_capacity(ranges.len());
        let mut total = 0;
        for r in &ranges {
            offsets.push(total);
            total += r[0].len() + r[1].len();
        }
        Self { ranges, offsets, total }
    }

    /// Query row `r` of `m` new rows sees every earlier key, including `past` cached ones.
    fn causal(past: usize, m: usize) -> Self {
        Self::new((0..m).map(|r| [0..past + r + 1, 0..0]).collect())
    }

    /// Prompt rows see earlier prompt rows; response rows see the prompt and earlier rows of
    /// their own branch.
    fn branched(rows: &[InputRow], n_prompt: usize) -> Self {
        Self::new(
            rows.iter()
                .enumerate()
                .map(|(i, row)| {
                    if row.prompt_side {
                        [0..i + 1, 0..0]
                    } else {
                        [0..n_prompt, row.branch_start..i + 1]
                    }
                })
                .collect(),
        )
    }

    fn keys(&self, r: usize) -> impl Iterator<Item = usize> + '_ {
        self.ranges[r][0].clone().chain(self.ranges[r][1].clone())
    }
}

/// Multi-head attention of the query rows over their key sets. Returns the context rows and
/// the attention weights laid out `[head][row][visible key]`.
fn attention<T: Scalar>(q: &[T], k: &[T], v: &[T], keys: &KeySets, h: usize, heads: usize) -> (Vec<T>, Vec<T>) {
    let dh = h / heads;
    let m = keys.ranges.len();
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut ctx = vec![T::zero(); m * h];
    let mut probs = vec![T::zero(); heads * keys.total];
    for hd in 0..heads {
        let off = hd * dh;
        for r in 0..m {
            let qr = &q[r * h + off..r * h + off + dh];
            let base = hd * keys.total + keys.offsets[r];
            let len = keys.ranges[r][0].len() + keys.ranges[r][1].len();
            let prow = &mut probs[base..base + len];
            let mut max = T::neg_infinity();
            for (p, j) in prow.iter_mut().zip(keys.keys(r)) {
                *p = dot(qr, &k[j * h + off..j * h + off + dh]) * scale;
                max = max.max(*p);
            }
            let mut sum = T::zero();
            for p in prow.iter_mut() {
                *p = (*p - max).exp();
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            let cr = &mut ctx[r * h + off..r * h + off + dh];
            for (&p, j) in prow.iter().zip(keys.keys(r)) {
                axpy(p, &v[j * h + off..j * h + off + dh], cr);
            }
        }
    }
    (ctx, probs)
}

impl<T: Scalar> Model<T> {
    fn prompt_rows(&self, prompt: &PromptSequence) -> Result<Vec<InputRow>> {
        let levels = self.vocab.levels();
        let mut rows = Vec::with_capacity(prompt.cells.len());
        for cell in &prompt.cells {
            match cell {
                PromptCell::Special(s) => rows.push(RowSource::Token(self.vocab.special(*s))),
                PromptCell::Item(sid) => {
                    if sid.levels() != levels {
                        return Err(GenRecError::DimensionMismatch {
                            expected: levels,
                            got: sid.levels(),
                        });
                    }
                    for (level, (&code, &size)) in sid.codes().iter().zip(self.vocab.level_sizes()).enumerate() {
                        if code as usize >= size {
                            return Err(GenRecError::InvalidCode { level, code, size });
                        }
                    }
                    let toks = self.vocab.sid_tokens(sid);
                    if self.config.merger_enabled {
                        rows.push(RowSource::Merged(toks));
                    } else {
                        rows.extend(toks.into_iter().map(RowSource::Token));
                    }
                }
            }
        }
        if rows.len() > self.config.max_prompt_positions {
            return Err(GenRecError::PromptTooLong {
                positions: rows.len(),
                max: self.config.max_prompt_positions,
            });
        }
        Ok(rows
            .into_iter()
            .enumerate()
            .map(|(pos, source)| InputRow {
                source,
                prompt_side: true,
                pos,
                branch_start: 0,
            })
            .collect())
    }

    fn check_response(&self, tokens: &[Token]) -> Result<()> {
        for (t, &tok) in tokens.iter().enumerate() {
            if !self.segment(t).contains(&(tok as usize)) {
                return Err(GenRecError::LevelViolation { position: t, token: tok });
            }
        }
        Ok(())
    }

    fn response_rows(&self, fed: &[Token], branch_start: usize) -> Result<Vec<InputRow>> {
        if fed.len() > self.config.max_response_positions {
            return Err(GenRecError::SequenceTooLong {
                positions: fed.len(),
                max: self.config.max_response_positions,
            });
        }
        Ok(fed
            .iter()
            .enumerate()
            .map(|(pos, &t)| InputRow {
                source: RowSource::Token(t),
                prompt_side: false,
                pos,
                branch_start,
            })
            .collect())
    }

    fn content_vector(&self, source: &RowSource) -> Vec<T> {
        let h = self.config.hidden_dim;
        let sp = &self.layout.spans;
        let emb = sp.tok_emb.of(&self.params);
        match source {
            RowSource::Token(t) => emb[*t as usize * h..(*t as usize + 1) * h].to_vec(),
            RowSource::Merged(toks) => {
                let z: Vec<T> = toks
                    .iter()
                    .flat_map(|&t| emb[t as usize * h..(t as usize + 1) * h].iter().copied())
                    .collect();
                linear(&z, sp.merger_w.of(&self.params), sp.merger_b.of(&self.params), 1, toks.len() * h, h)
            }
        }
    }

    fn embed_rows(&self, rows: &[InputRow]) -> Vec<T> {
        let h = self.config.hidden_dim;
        let sp = &self.layout.spans;
        let mut x = Vec::with_capacity(rows.len() * h);
        for row in rows {
            let table = if row.prompt_side { sp.pos_prompt } else { sp.pos_response };
            let pos = &table.of(&self.params)[row.pos * h..(row.pos + 1) * h];
            x.extend(self.content_vector(&row.source).into_iter().zip(pos).map(|(c, &p)| c + p));
        }
        x
    }

    /// Prompt hidden vectors before position encoding: one per merged item or special token,
    /// or one per SID token when the merger is disabled.
    pub fn embed_prompt(&self, prompt: &PromptSequence) -> Result<Vec<Vec<T>>> {
        Ok(self
            .prompt_rows(prompt)?
            .iter()
            .map(|r| self.content_vector(&r.source))
            .collect())
    }

    fn layers_forward(
        &self,
        mut x: Vec<T>,
        past: &[LayerKv<T>],
        keys: &KeySets,
        mut traces: Option<&mut Vec<LayerTrace<T>>>,
        keep_kv: bool,
    ) -> (Vec<T>, Vec<LayerKv<T>>) {
        let h = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        let heads = self.config.n_heads;
        let m = x.len() / h;
        let p = &self.params;
        let mut kvs = Vec::new();
        for (l, ls) in self.layout.spans.layers.iter().enumerate() {
            let (a, inv1) = rms_forward(&x, ls.norm1.of(p), h);
            let q = linear(&a, ls.wq.of(p), ls.bq.of(p), m, h, h);
            let k_new = linear(&a, ls.wk.of(p), ls.bk.of(p), m, h, h);
            let v_new = linear(&a, ls.wv.of(p), ls.bv.of(p), m, h, h);
            let (k, v) = match past.get(l) {
                Some(kv) => {
                    let mut k = kv.k.clone();
                    k.extend_from_slice(&k_new);
                    let mut v = kv.v.clone();
                    v.extend_from_slice(&v_new);
                    (k, v)
                }
                None => (k_new, v_new),
            };
            let (ctx, probs) = attention(&q, &k, &v, keys, h, heads);
            let o = linear(&ctx, ls.wo.of(p), ls.bo.of(p), m, h, h);
            let x_mid: Vec<T> = x.iter().zip(&o).map(|(&a, &b)| a + b).collect();
            let (b, inv2) = rms_forward(&x_mid, ls.norm2.of(p), h);
            let u = linear(&b, ls.w1.of(p), ls.b1.of(p), m, h, f);
            let g: Vec<T> = u.iter().map(|&z| gelu(z)).collect();
            let ff = linear(&g, ls.w2.of(p), ls.b2.of(p), m, f, h);
            let x_out: Vec<T> = x_mid.iter().zip(&ff).map(|(&a, &b)| a + b).collect();
            if keep_kv {
                kvs.push(LayerKv { k: k.clone(), v: v.clone() });
            }
            if let Some(tr) = traces.as_deref_mut() {
                tr.push(LayerTrace {
                    x_in: x,
                    inv1,
                    a,
                    q,
                    k,
                    v,
                    probs,
                    ctx,
                    x_mid,
                    inv2,
                    b,
                    u,
                    g,
                });
            }
            x = x_out;
        }
        (x, kvs)
    }

    fn head_row(&self, xf_row: &[T]) -> Vec<T> {
        let sp = &self.layout.spans;
        linear(
            xf_row,
            sp.out_w.of(&self.params),
            sp.out_b.of(&self.params),
            1,
            self.config.hidden_dim,
            self.vocab.size(),
        )
    }

    /// One pass over the prompt followed by every branch of fed response tokens. Branches
    /// share the prompt but never see each other.
    fn full_pass(&self, prompt: &PromptSequence, branches: &[&[Token]], trace: bool) -> Result<FullPass<T>> {
        let mut rows = self.prompt_rows(prompt)?;
        let n_prompt = rows.len();
        let mut branch_starts = Vec::with_capacity(branches.len());
        for fed in branches {
            let start = rows.len();
            branch_starts.push(start);
            rows.extend(self.response_rows(fed, start)?);
        }
        let keys = KeySets::branched(&rows, n_prompt);
        let x0 = self.embed_rows(&rows);
        let mut traces = Vec::new();
        let (x_last, _) = self.layers_forward(x0, &[], &keys, trace.then_some(&mut traces), false);
        let (xf, inv_f) = rms_forward(&x_last, self.layout.spans.norm_f.of(&self.params), self.config.hidden_dim);
        Ok(FullPass {
            rows,
            n_prompt,
            branch_starts,
            keys,
            traces,
            x_last,
            inv_f,
            xf,
        })
    }

    /// Logits over the full vocabulary at the last prompt position and at every position of
    /// `prefix`: row `t` predicts response token `t`.
    pub fn forward(&self, prompt: &PromptSequence, prefix: &[Token]) -> Result<Vec<Vec<T>>> {
        let pass = self.full_pass(prompt, &[prefix], false)?;
        let h = self.config.hidden_dim;
        Ok((0..=prefix.len())
            .map(|t| {
                let row = pass.logit_row(0, t);
                self.head_row(&pass.xf[row * h..(row + 1) * h])
            })
            .collect())
    }

    pub fn token_log_probs(&self, prompt: &PromptSequence, response: &[Token]) -> Result<Vec<T>> {
        Ok(self.group_pass(prompt, &[response], &[], None)?.remove(0))
    }

    /// Token log-probabilities of several responses to one prompt, from a single pass.
    pub fn group_log_probs(&self, prompt: &PromptSequence, responses: &[&[Token]]) -> Result<Vec<Vec<T>>> {
        self.group_pass(prompt, responses, &[], None)
    }

    /// `Σ_t log p(y_t | prompt, y_<t)` under level-masked softmax.
    pub fn log_prob(&self, prompt: &PromptSequence, response: &[Token]) -> Result<T> {
        Ok(self.token_log_probs(prompt, response)?.into_iter().sum())
    }

    /// Token log-probabilities of `response`; when `grad` is given, also accumulates the
    /// gradient of `J = Σ_t objective_t` into it (`objectives` aligned with `response`).
    pub fn objective_grad(
        &self,
        prompt: &PromptSequence,
        response: &[Token],
        objectives: &[TokenObjective],
        grad: Option<&mut [T]>,
    ) -> Result<Vec<T>> {
        Ok(self.group_pass(prompt, &[response], &[objectives], grad)?.remove(0))
    }

    /// [`Model::objective_grad`] for several responses to one prompt, computed in a single
    /// pass that evaluates the prompt once. Returns token log-probabilities per response.
    pub fn objective_grad_group(
        &self,
        prompt: &PromptSequence,
        responses: &[&[Token]],
        objectives: &[&[TokenObjective]],
        grad: &mut [T],
    ) -> Result<Vec<Vec<T>>> {
        self.group_pass(prompt, responses, objectives, Some(grad))
    }

    fn group_pass(
        &self,
        prompt: &PromptSequence,
        responses: &[&[Token]],
        objectives: &[&[TokenObjective]],
        grad: Option<&mut [T]>,
    ) -> Result<Vec<Vec<T>>> {
        for response in responses {
            if response.is_empty() {
                return Err(GenRecError::InvalidConfig("response must not be empty".into()));
            }
            self.check_response(response)?;
        }
        let feds: Vec<&[Token]> = responses.iter().map(|r| &r[..r.len() - 1]).collect();
        let pass = self.full_pass(prompt, &feds, grad.is_some())?;
        let h = self.config.hidden_dim;
        let mut log_probs = Vec::with_capacity(responses.len());
        let mut dists = Vec::with_capacity(responses.len());
        for (b, response) in responses.iter().enumerate() {
            let mut lps = Vec::with_capacity(response.len());
            let mut ds = Vec::with_capacity(response.len());
            for (t, &y) in response.iter().enumerate() {
                let row = pass.logit_row(b, t);
                let logits = self.head_row(&pass.xf[row * h..(row + 1) * h]);
                let lp = masked_log_softmax(&logits, self.segment(t));
                if !lp[y as usize].is_finite() {
                    return Err(GenRecError::NumericalError(format!(
                        "non-finite log-probability at position {t}"
                    )));
                }
                lps.push(lp[y as usize]);
                ds.push(lp);
            }
            log_probs.push(lps);
            dists.push(ds);
        }
        let Some(grad) = grad else {
            return Ok(log_probs);
        };
        if objectives.len() != responses.len() || objectives.iter().zip(responses).any(|(o, r)| o.len() != r.len()) {
            return Err(GenRecError::InvalidConfig("objectives must align with response tokens".into()));
        }

        let sp = &self.layout.spans;
        let p = &self.params;
        let vsize = self.vocab.size();
        let mut dxf = vec![T::zero(); pass.rows.len() * h];
        for (b, response) in responses.iter().enumerate() {
            for (t, (&y, obj)) in response.iter().zip(objectives[b]).enumerate() {
                let scale = match *obj {
                    TokenObjective::LogProb(c) => T::lit(c),
                    TokenObjective::Prob(c) => T::lit(c) * dists[b][t][y as usize].exp(),
                };
                if scale == T::zero() {
                    continue;
                }
                let row = pass.logit_row(b, t);
                let seg = self.segment(t);
                let lp = &dists[b][t];
                let dz: Vec<T> = seg
                    .clone()
                    .map(|j| {
                        let ind = if j == y as usize { T::one() } else { T::zero() };
                        scale * (ind - lp[j].exp())
                    })
                    .collect();
                let xr = &pass.xf[row * h..(row + 1) * h];
                let dw = sp.out_w.of_mut(grad);
                for k in 0..h {
                    axpy(xr[k], &dz, &mut dw[k * vsize + seg.start..k * vsize + seg.end]);
                }
                let db = sp.out_b.of_mut(grad);
                for (bias, &d) in db[seg.clone()].iter_mut().zip(&dz) {
                    *bias += d;
                }
                let w = sp.out_w.of(p);
                let dxr = &mut dxf[row * h..(row + 1) * h];
                for k in 0..h {
                    dxr[k] += dot(&dz, &w[k * vsize + seg.start..k * vsize + seg.end]);
                }
            }
        }

        let mut dx = rms_backward(&dxf, &pass.x_last, &pass.inv_f, sp.norm_f.of(p), sp.norm_f.of_mut(grad), h);
        self.layers_backward(&pass.traces, &pass.keys, &mut dx, grad);
        self.embedding_backward(&pass.rows, &dx, grad);
        Ok(log_probs)
    }

    fn layers_backward(&self, traces: &[LayerTrace<T>], keys: &KeySets, dx: &mut [T], grad: &mut [T]) {
        let h = self.config.hidden_dim;
        let f = self.config.ffn_dim;
        let heads = self.config.n_heads;
        let dh = h / heads;
        let n = dx.len() / h;
        let p = &self.params;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut dp = vec![T::zero(); n];
        for (ls, tr) in self.layout.spans.layers.iter().zip(traces).rev() {
            // feed-forward block
            outer_acc(&tr.g, dx, ls.w2.of_mut(grad), n, f, h);
            bias_acc(dx, ls.b2.of_mut(grad), h);
            let mut dg = vec![T::zero(); n * f];
            matmul_t_acc(dx, ls.w2.of(p), &mut dg, n, f, h);
            for (d, &u) in dg.iter_mut().zip(&tr.u) {
                *d *= gelu_grad(u);
            }
            outer_acc(&tr.b, &dg, ls.w1.of_mut(grad), n, h, f);
            bias_acc(&dg, ls.b1.of_mut(grad), f);
            let mut db = vec![T::zero(); n * h];
            matmul_t_acc(&dg, ls.w1.of(p), &mut db, n, h, f);
            let dmid = rms_backward(&db, &tr.x_mid, &tr.inv2, ls.norm2.of(p), ls.norm2.of_mut(grad), h);
            for (d, m) in dx.iter_mut().zip(&dmid) {
                *d += *m;
            }

            // attention block
            outer_acc(&tr.ctx, dx, ls.wo.of_mut(grad), n, h, h);
            bias_acc(dx, ls.bo.of_mut(grad), h);
            let mut dctx = vec![T::zero(); n * h];
            matmul_t_acc(dx, ls.wo.of(p), &mut dctx, n, h, h);
            let mut dq = vec![T::zero(); n * h];
            let mut dk = vec![T::zero(); n * h];
            let mut dv = vec![T::zero(); n * h];
            for hd in 0..heads {
                let off = hd * dh;
                for r in 0..n {
                    let base = hd * keys.total + keys.offsets[r];
                    let len = keys.ranges[r][0].len() + keys.ranges[r][1].len();
                    let prow = &tr.probs[base..base + len];
                    let dcr = &dctx[r * h + off..r * h + off + dh];
                    let mut s = T::zero();
                    for (idx, (&pj, j)) in prow.iter().zip(keys.keys(r)).enumerate() {
                        dp[idx] = dot(dcr, &tr.v[j * h + off..j * h + off + dh]);
                        s += pj * dp[idx];
                        axpy(pj, dcr, &mut dv[j * h + off..j * h + off + dh]);
                    }
                    for (idx, (&pj, j)) in prow.iter().zip(keys.keys(r)).enumerate() {
                        let ds = pj * (dp[idx] - s) * scale;
                        axpy(ds, &tr.k[j * h + off..j * h + off + dh], &mut dq[r * h + off..r * h + off + dh]);
                        axpy(ds, &tr.q[r * h + off..r * h + off + dh], &mut dk[j * h + off..j * h + off + dh]);
                    }
                }
            }
            let mut da = vec![T::zero(); n * h];
            for (d, w, b) in [(&dq, ls.wq, ls.bq), (&dk, ls.wk, ls.bk), (&dv, ls.wv, ls.bv)] {
                outer_acc(&tr.a, d, w.of_mut(grad), n, h, h);
                bias_acc(d, b.of_mut(grad), h);
                matmul_t_acc(d, w.of(p), &mut da, n, h, h);
            }
            let din = rms_backward(&da, &tr.x_in, &tr.inv1, ls.norm1.of(p), ls.norm1.of_mut(grad), h);
            for (d, i) in dx.iter_mut().zip(&din) {
                *d += *i;
            }
        }
    }

    fn embedding_backward(&self, rows: &[InputRow], dx: &[T], grad: &mut [T]) {
        let h = self.config.hidden_dim;
        let sp = &self.layout.spans;
        let emb_row = |g: &mut [T], t: Token, d: &[T]| {
            let e = sp.tok_emb.of_mut(g);
            axpy(T::one(), d, &mut e[t as usize * h..(t as usize + 1) * h]);
        };
        for (row, d) in rows.iter().zip(dx.chunks_exact(h)) {
            let table: Span = if row.prompt_side { sp.pos_prompt } else { sp.pos_response };
            axpy(T::one(), d, &mut table.of_mut(grad)[row.pos * h..(row.pos + 1) * h]);
            match &row.source {
                RowSource::Token(t) => emb_row(grad, *t, d),
                RowSource::Merged(toks) => {
                    let emb = sp.tok_emb.of(&self.params);
                    let z: Vec<T> = toks
                        .iter()
                        .flat_map(|&t| emb[t as usize * h..(t as usize + 1) * h].iter().copied())
                        .collect();
                    let zin = toks.len() * h;
                    outer_acc(&z, d, sp.merger_w.of_mut(grad), 1, zin, h);
                    bias_acc(d, sp.merger_b.of_mut(grad), h);
                    let mut dz = vec![T::zero(); zin];
                    matmul_t_acc(d, sp.merger_w.of(&self.params), &mut dz, 1, zin, h);
                    for (l, &t) in toks.iter().enumerate() {
                        emb_row(grad, t, &dz[l * h..(l + 1) * h]);
                    }
                }
            }
        }
    }

    /// Runs the prompt once and keeps every layer's keys and values for incremental decoding.
    pub fn prompt_state(&self, prompt: &PromptSequence) -> Result<PromptState<T>> {
        let rows = self.prompt_rows(prompt)?;
        let n_prompt = rows.len();
        let h = self.config.hidden_dim;
        let x0 = self.embed_rows(&rows);
        let (x, kv) = self.layers_forward(x0, &[], &KeySets::causal(0, n_prompt), None, true);
        let last = &x[(n_prompt - 1) * h..n_prompt * h];
        let (xf, _) = rms_forward(last, self.layout.spans.norm_f.of(&self.params), h);
        Ok(PromptState {
            kv,
            n_prompt,
            last_logits: self.head_row(&xf),
        })
    }

    /// Full-vocabulary logits for the response token following `prefix`.
    pub fn next_logits(&self, state: &PromptState<T>, prefix: &[Token]) -> Result<Vec<T>> {
        if prefix.is_empty() {
            return Ok(state.last_logits.clone());
        }
        self.check_response(prefix)?;
        let rows = self.response_rows(prefix, state.n_prompt)?;
        let h = self.config.hidden_dim;
        let m = rows.len();
        let x0 = self.embed_rows(&rows);
        let (x, _) = self.layers_forward(x0, &state.kv, &KeySets::causal(state.n_prompt, m), None, false);
        let (xf, _) = rms_forward(&x[(m - 1) * h..m * h], self.layout.spans.norm_f.of(&self.params), h);
        Ok(self.head_row(&xf))
    }
}
