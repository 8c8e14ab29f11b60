//! Packed forward pass and hand-written backward pass.
//!
//! A batch of variable-length sequences is packed row-wise into one
//! `[tokens, hidden]` matrix, so position-wise layers run as single gemms
//! and attention runs per sequence. No padding is needed.

use super::ops::{self, matmul, matmul_nt, matmul_tn, Float};
use super::{LayerOffsets, ModelState};
use crate::error::{Error, Result};
use crate::tokenizer::{BOS, EOS, PAD};

/// A token sequence with the positions whose token is a prediction target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<u32>,
    /// `target_mask[i]` marks `tokens[i]` as a target predicted from position `i - 1`.
    /// Index 0 is never a target.
    pub target_mask: Vec<bool>,
}

impl Example {
    /// `BOS prompt answer EOS`, with loss on the answer bytes and the closing EOS.
    pub fn framed(prompt: &[u32], answer: &[u32]) -> Self {
        let mut tokens = Vec::with_capacity(prompt.len() + answer.len() + 2);
        tokens.push(BOS);
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(answer);
        tokens.push(EOS);
        let first = 1 + prompt.len();
        let target_mask = (0..tokens.len()).map(|i| i >= first).collect();
        Example { tokens, target_mask }
    }

    /// Same framing with every non-BOS token as a target.
    pub fn framed_full(prompt: &[u32], answer: &[u32]) -> Self {
        let mut ex = Self::framed(prompt, answer);
        ex.target_mask.iter_mut().skip(1).for_each(|m| *m = true);
        ex
    }

    /// Explicit mask; PAD positions are never targets.
    pub fn with_mask(tokens: Vec<u32>, mut target_mask: Vec<bool>) -> Self {
        assert_eq!(tokens.len(), target_mask.len());
        if let Some(first) = target_mask.first_mut() {
            *first = false;
        }
        for (m, &t) in target_mask.iter_mut().zip(&tokens) {
            if t == PAD {
                *m = false;
            }
        }
        Example { tokens, target_mask }
    }

    pub fn num_targets(&self) -> usize {
        self.target_mask.iter().filter(|&&m| m).count()
    }

    /// Number of input positions the model actually runs over.
    pub fn input_len(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }
}

/// Flat gradient buffer with the same layout as the parameters.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub values: Vec<T>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache<T> {
    x: Vec<T>,
    inv1: Vec<T>,
    xn1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    h: Vec<T>,
    inv2: Vec<T>,
    xn2: Vec<T>,
    gate: Vec<T>,
    up: Vec<T>,
    act: Vec<T>,
}

/// Activations of one packed forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    tokens: Vec<u32>,
    starts: Vec<usize>,
    lens: Vec<usize>,
    prob_offsets: Vec<usize>,
    layers: Vec<LayerCache<T>>,
    /// Residual stream after the last block, `[tokens, hidden]`.
    x_final: Vec<T>,
}

impl<T: Float> ForwardCache<T> {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    /// Row index of position `pos` of sequence `seq` in the packed matrix.
    pub fn row(&self, seq: usize, pos: usize) -> usize {
        self.starts[seq] + pos
    }
}

impl<T: Float> ModelState<T> {
    fn p(&self, offset: usize, len: usize) -> &[T] {
        &self.params[offset..offset + len]
    }

    fn check_lengths<S: AsRef<[u32]>>(&self, seqs: &[S]) -> Result<()> {
        for s in seqs {
            let len = s.as_ref().len();
            if len > self.config.max_seq_len {
                return Err(Error::Range(format!(
                    "sequence of {len} tokens exceeds max_seq_len {}",
                    self.config.max_seq_len
                )));
            }
            if let Some(&t) = s.as_ref().iter().find(|&&t| t as usize >= self.config.vocab) {
                return Err(Error::Range(format!("token id {t} outside vocab {}", self.config.vocab)));
            }
        }
        Ok(())
    }

    /// Runs the transformer blocks over packed sequences and keeps every activation.
    pub fn forward_hidden<S: AsRef<[u32]>>(&self, seqs: &[S]) -> Result<ForwardCache<T>> {
        self.check_lengths(seqs)?;
        let cfg = &self.config;
        let h = cfg.hidden;
        let mut tokens = Vec::new();
        let mut starts = Vec::with_capacity(seqs.len());
        let mut lens = Vec::with_capacity(seqs.len());
        let mut prob_offsets = Vec::with_capacity(seqs.len());
        let mut prob_total = 0;
        for s in seqs {
            let s = s.as_ref();
            starts.push(tokens.len());
            lens.push(s.len());
            prob_offsets.push(prob_total);
            prob_total += cfg.heads * s.len() * s.len();
            tokens.extend_from_slice(s);
        }
        let n = tokens.len();
        let emb = self.p(self.layout.tok_emb, cfg.vocab * h);
        let mut x = vec![T::zero(); n * h];
        for (row, &t) in x.chunks_exact_mut(h).zip(&tokens) {
            row.copy_from_slice(&emb[t as usize * h..(t as usize + 1) * h]);
        }
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for off in &self.layout.layers {
            let (out, cache) = self.layer_forward(off, x, &starts, &lens, &prob_offsets, prob_total);
            layers.push(cache);
            x = out;
        }
        Ok(ForwardCache {
            tokens,
            starts,
            lens,
            prob_offsets,
            layers,
            x_final: x,
        })
    }

    fn layer_forward(
        &self,
        off: &LayerOffsets,
        x: Vec<T>,
        starts: &[usize],
        lens: &[usize],
        prob_offsets: &[usize],
        prob_total: usize,
    ) -> (Vec<T>, LayerCache<T>) {
        let cfg = &self.config;
        let (h, im) = (cfg.hidden, cfg.intermediate);
        let n = x.len() / h;
        let eps = T::of(cfg.norm_eps);

        let mut c = LayerCache {
            inv1: vec![T::zero(); n],
            xn1: vec![T::zero(); n * h],
            ..Default::default()
        };
        ops::rms_norm(&x, self.p(off.attn_norm, h), eps, &mut c.xn1, &mut c.inv1);

        let mut q = vec![T::zero(); n * h];
        let mut k = vec![T::zero(); n * h];
        let mut v = vec![T::zero(); n * h];
        matmul(&c.xn1, self.p(off.wq, h * h), &mut q, n, h, h, false);
        matmul(&c.xn1, self.p(off.wk, h * h), &mut k, n, h, h, false);
        matmul(&c.xn1, self.p(off.wv, h * h), &mut v, n, h, h, false);
        ops::add_bias(&mut q, self.p(off.bq, h));
        ops::add_bias(&mut k, self.p(off.bk, h));
        ops::add_bias(&mut v, self.p(off.bv, h));
        self.apply_rope(&mut q, starts, lens, false);
        self.apply_rope(&mut k, starts, lens, false);

        let mut probs = vec![T::zero(); prob_total];
        let mut attn = vec![T::zero(); n * h];
        self.attention(&q, &k, &v, starts, lens, prob_offsets, &mut probs, &mut attn);

        let mut hres = x.clone();
        matmul(&attn, self.p(off.wo, h * h), &mut hres, n, h, h, true);

        let mut inv2 = vec![T::zero(); n];
        let mut xn2 = vec![T::zero(); n * h];
        ops::rms_norm(&hres, self.p(off.ffn_norm, h), eps, &mut xn2, &mut inv2);
        let mut gate = vec![T::zero(); n * im];
        let mut up = vec![T::zero(); n * im];
        matmul(&xn2, self.p(off.w_gate, h * im), &mut gate, n, h, im, false);
        matmul(&xn2, self.p(off.w_up, h * im), &mut up, n, h, im, false);
        let act: Vec<T> = gate.iter().zip(&up).map(|(&g, &u)| ops::silu(g) * u).collect();
        let mut out = hres.clone();
        matmul(&act, self.p(off.w_down, im * h), &mut out, n, im, h, true);

        c.x = x;
        c.q = q;
        c.k = k;
        c.v = v;
        c.probs = probs;
        c.attn = attn;
        c.h = hres;
        c.inv2 = inv2;
        c.xn2 = xn2;
        c.gate = gate;
        c.up = up;
        c.act = act;
        (out, c)
    }

    fn apply_rope(&self, m: &mut [T], starts: &[usize], lens: &[usize], inverse: bool) {
        let h = self.config.hidden;
        let d = self.config.head_dim();
        for (&st, &len) in starts.iter().zip(lens) {
            for pos in 0..len {
                let row = &mut m[(st + pos) * h..(st + pos + 1) * h];
                for head in row.chunks_exact_mut(d) {
                    self.rope.rotate(head, pos, inverse);
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        q: &[T],
        k: &[T],
        v: &[T],
        starts: &[usize],
        lens: &[usize],
        prob_offsets: &[usize],
        probs: &mut [T],
        out: &mut [T],
    ) {
        let h = self.config.hidden;
        let d = self.config.head_dim();
        let scale = T::of(1.0 / (d as f64).sqrt());
        for ((&st, &len), &po) in starts.iter().zip(lens).zip(prob_offsets) {
            for head in 0..self.config.heads {
                let base = po + head * len * len;
                let col = head * d;
                for i in 0..len {
                    let qi = &q[(st + i) * h + col..(st + i) * h + col + d];
                    let prow = &mut probs[base + i * len..base + (i + 1) * len];
                    let mut max = T::neg_infinity();
                    for j in 0..=i {
                        let kj = &k[(st + j) * h + col..(st + j) * h + col + d];
                        let s = qi.iter().zip(kj).map(|(&a, &b)| a * b).sum::<T>() * scale;
                        prow[j] = s;
                        if s > max {
                            max = s;
                        }
                    }
                    let mut z = T::zero();
                    for p in prow[..=i].iter_mut() {
                        *p = (*p - max).exp();
                        z = z + *p;
                    }
                    let zi = z.recip();
                    let orow = &mut out[(st + i) * h + col..(st + i) * h + col + d];
                    for j in 0..=i {
                        let pj = prow[j] * zi;
                        prow[j] = pj;
                        let vj = &v[(st + j) * h + col..(st + j) * h + col + d];
                        for (o, &vv) in orow.iter_mut().zip(vj) {
                            *o = *o + pj * vv;
                        }
                    }
                }
            }
        }
    }

    /// Final norm and output head for the selected packed rows; returns `[rows, vocab]`
    /// logits plus the normalized rows and inverse RMS needed for backward.
    fn head(&self, cache: &ForwardCache<T>, rows: &[usize]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let cfg = &self.config;
        let (h, vsz) = (cfg.hidden, cfg.vocab);
        let r = rows.len();
        let mut sel = vec![T::zero(); r * h];
        for (dst, &row) in sel.chunks_exact_mut(h).zip(rows) {
            dst.copy_from_slice(&cache.x_final[row * h..(row + 1) * h]);
        }
        let mut xn = vec![T::zero(); r * h];
        let mut inv = vec![T::zero(); r];
        ops::rms_norm(&sel, self.p(self.layout.final_norm, h), T::of(cfg.norm_eps), &mut xn, &mut inv);
        let mut logits = vec![T::zero(); r * vsz];
        matmul(&xn, self.p(self.layout.lm_head, h * vsz), &mut logits, r, h, vsz, false);
        (logits, sel, inv)
    }

    /// Logits for the given packed rows of an existing forward pass, `[rows, vocab]`.
    pub fn logits_at(&self, cache: &ForwardCache<T>, rows: &[usize]) -> Vec<T> {
        self.head(cache, rows).0
    }

    /// Full logits, one `[len, vocab]` block per input sequence.
    pub fn forward<S: AsRef<[u32]>>(&self, seqs: &[S]) -> Result<Vec<Vec<T>>> {
        let cache = self.forward_hidden(seqs)?;
        let rows: Vec<usize> = (0..cache.num_tokens()).collect();
        let logits = self.logits_at(&cache, &rows);
        let v = self.config.vocab;
        Ok(cache
            .starts
            .iter()
            .zip(&cache.lens)
            .map(|(&st, &len)| logits[st * v..(st + len) * v].to_vec())
            .collect())
    }

    /// Mean masked cross-entropy over a batch, without gradients.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let (inputs, rows, targets) = self.prepare(batch)?;
        let cache = self.forward_hidden(&inputs)?;
        let rows: Vec<usize> = rows.iter().map(|&(s, p)| cache.row(s, p)).collect();
        let logits = self.logits_at(&cache, &rows);
        Ok(cross_entropy(&logits, &targets, self.config.vocab, None))
    }

    #[allow(clippy::type_complexity)]
    fn prepare<'a>(&self, batch: &'a [Example]) -> Result<(Vec<&'a [u32]>, Vec<(usize, usize)>, Vec<u32>)> {
        let mut inputs = Vec::with_capacity(batch.len());
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (s, ex) in batch.iter().enumerate() {
            if ex.tokens.len() != ex.target_mask.len() {
                return Err(Error::Config("target mask length differs from token length".into()));
            }
            inputs.push(&ex.tokens[..ex.input_len()]);
            for i in 1..ex.tokens.len() {
                if ex.target_mask[i] && ex.tokens[i] != PAD {
                    rows.push((s, i - 1));
                    targets.push(ex.tokens[i]);
                }
            }
        }
        if targets.is_empty() {
            return Err(Error::Degenerate("batch has no target positions".into()));
        }
        Ok((inputs, rows, targets))
    }

    /// Mean masked cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, batch: &[Example]) -> Result<(f64, Gradients<T>)> {
        let (inputs, rows, targets) = self.prepare(batch)?;
        let cache = self.forward_hidden(&inputs)?;
        let rows: Vec<usize> = rows.iter().map(|&(s, p)| cache.row(s, p)).collect();
        let cfg = &self.config;
        let (h, vsz) = (cfg.hidden, cfg.vocab);
        let mut grads = vec![T::zero(); self.layout.total];

        let (logits, sel, inv) = self.head(&cache, &rows);
        let mut dlogits = vec![T::zero(); logits.len()];
        let loss = cross_entropy(&logits, &targets, vsz, Some(&mut dlogits));

        // recompute the normalized rows for the head weight gradient
        let gain = self.p(self.layout.final_norm, h);
        let mut xn = vec![T::zero(); sel.len()];
        for ((o, row), &r) in xn.chunks_exact_mut(h).zip(sel.chunks_exact(h)).zip(&inv) {
            for j in 0..h {
                o[j] = row[j] * r * gain[j];
            }
        }
        let lm = self.layout.lm_head;
        matmul_tn(&xn, &dlogits, &mut grads[lm..lm + h * vsz], rows.len(), h, vsz, true);
        let mut dxn = vec![T::zero(); sel.len()];
        matmul_nt(&dlogits, self.p(lm, h * vsz), &mut dxn, rows.len(), vsz, h, false);
        let mut dsel = vec![T::zero(); sel.len()];
        let fnorm = self.layout.final_norm;
        ops::rms_norm_backward(&sel, gain, &inv, &dxn, &mut dsel, &mut grads[fnorm..fnorm + h]);

        let mut dx = vec![T::zero(); cache.x_final.len()];
        for (src, &row) in dsel.chunks_exact(h).zip(&rows) {
            for (d, &s) in dx[row * h..(row + 1) * h].iter_mut().zip(src) {
                *d = *d + s;
            }
        }
        for (off, lc) in self.layout.layers.iter().zip(&cache.layers).rev() {
            dx = self.layer_backward(off, lc, &cache, dx, &mut grads);
        }
        let emb = self.layout.tok_emb;
        for (row, &t) in dx.chunks_exact(h).zip(&cache.tokens) {
            let g = &mut grads[emb + t as usize * h..emb + (t as usize + 1) * h];
            for (a, &b) in g.iter_mut().zip(row) {
                *a = *a + b;
            }
        }
        Ok((loss, Gradients { values: grads }))
    }

    fn layer_backward(
        &self,
        off: &LayerOffsets,
        c: &LayerCache<T>,
        cache: &ForwardCache<T>,
        dout: Vec<T>,
        grads: &mut [T],
    ) -> Vec<T> {
        let cfg = &self.config;
        let (h, im) = (cfg.hidden, cfg.intermediate);
        let n = dout.len() / h;

        // feed-forward
        let mut dact = vec![T::zero(); n * im];
        matmul_nt(&dout, self.p(off.w_down, im * h), &mut dact, n, h, im, false);
        matmul_tn(&c.act, &dout, &mut grads[off.w_down..off.w_down + im * h], n, im, h, true);
        let mut dgate = vec![T::zero(); n * im];
        let mut dup = vec![T::zero(); n * im];
        for i in 0..n * im {
            let g = c.gate[i];
            dgate[i] = dact[i] * c.up[i] * ops::silu_grad(g);
            dup[i] = dact[i] * ops::silu(g);
        }
        matmul_tn(&c.xn2, &dgate, &mut grads[off.w_gate..off.w_gate + h * im], n, h, im, true);
        matmul_tn(&c.xn2, &dup, &mut grads[off.w_up..off.w_up + h * im], n, h, im, true);
        let mut dxn2 = vec![T::zero(); n * h];
        matmul_nt(&dgate, self.p(off.w_gate, h * im), &mut dxn2, n, im, h, false);
        matmul_nt(&dup, self.p(off.w_up, h * im), &mut dxn2, n, im, h, true);
        let mut dh = dout;
        ops::rms_norm_backward(
            &c.h,
            self.p(off.ffn_norm, h),
            &c.inv2,
            &dxn2,
            &mut dh,
            &mut grads[off.ffn_norm..off.ffn_norm + h],
        );

        // attention output projection
        let mut dattn = vec![T::zero(); n * h];
        matmul_nt(&dh, self.p(off.wo, h * h), &mut dattn, n, h, h, false);
        matmul_tn(&c.attn, &dh, &mut grads[off.wo..off.wo + h * h], n, h, h, true);

        let mut dq = vec![T::zero(); n * h];
        let mut dk = vec![T::zero(); n * h];
        let mut dv = vec![T::zero(); n * h];
        self.attention_backward(c, cache, &dattn, &mut dq, &mut dk, &mut dv);
        self.apply_rope(&mut dq, &cache.starts, &cache.lens, true);
        self.apply_rope(&mut dk, &cache.starts, &cache.lens, true);

        let mut dxn1 = vec![T::zero(); n * h];
        for (dm, w, b) in [(&dq, off.wq, off.bq), (&dk, off.wk, off.bk), (&dv, off.wv, off.bv)] {
            ops::bias_grad(dm, &mut grads[b..b + h]);
            matmul_tn(&c.xn1, dm, &mut grads[w..w + h * h], n, h, h, true);
            matmul_nt(dm, self.p(w, h * h), &mut dxn1, n, h, h, true);
        }
        let mut dx = dh;
        ops::rms_norm_backward(
            &c.x,
            self.p(off.attn_norm, h),
            &c.inv1,
            &dxn1,
            &mut dx,
            &mut grads[off.attn_norm..off.attn_norm + h],
        );
        dx
    }

    fn attention_backward(
        &self,
        c: &LayerCache<T>,
        cache: &ForwardCache<T>,
        dattn: &[T],
        dq: &mut [T],
        dk: &mut [T],
        dv: &mut [T],
    ) {
        let h = self.config.hidden;
        let d = self.config.head_dim();
        let scale = T::of(1.0 / (d as f64).sqrt());
        let mut dp = Vec::new();
        for ((&st, &len), &po) in cache.starts.iter().zip(&cache.lens).zip(&cache.prob_offsets) {
            dp.resize(len, T::zero());
            for head in 0..self.config.heads {
                let base = po + head * len * len;
                let col = head * d;
                for i in 0..len {
                    let prow = &c.probs[base + i * len..base + i * len + i + 1];
                    let doi = &dattn[(st + i) * h + col..(st + i) * h + col + d];
                    let mut dot = T::zero();
                    for j in 0..=i {
                        let vj = &c.v[(st + j) * h + col..(st + j) * h + col + d];
                        dp[j] = doi.iter().zip(vj).map(|(&a, &b)| a * b).sum::<T>();
                        dot = dot + dp[j] * prow[j];
                        let dvj = &mut dv[(st + j) * h + col..(st + j) * h + col + d];
                        for (g, &o) in dvj.iter_mut().zip(doi) {
                            *g = *g + prow[j] * o;
                        }
                    }
                    let qi_row = (st + i) * h + col;
                    for j in 0..=i {
                        let ds = prow[j] * (dp[j] - dot) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let kj_row = (st + j) * h + col;
                        for t in 0..d {
                            dq[qi_row + t] = dq[qi_row + t] + ds * c.k[kj_row + t];
                            dk[kj_row + t] = dk[kj_row + t] + ds * c.q[qi_row + t];
                        }
                    }
                }
            }
        }
    }
}

/// Mean cross-entropy of `[rows, vocab]` logits against `targets`. When `dlogits`
/// is given it receives the gradient of the mean loss.
pub(crate) fn cross_entropy<T: Float>(logits: &[T], targets: &[u32], vocab: usize, mut dlogits: Option<&mut [T]>) -> f64 {
    let count = targets.len() as f64;
    let mut total = 0.0f64;
    for (r, (row, &t)) in logits.chunks_exact(vocab).zip(targets).enumerate() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.f64()));
        let z: f64 = row.iter().map(|&v| (v.f64() - max).exp()).sum();
        let lse = max + z.ln();
        total += lse - row[t as usize].f64();
        if let Some(d) = dlogits.as_deref_mut() {
            let drow = &mut d[r * vocab..(r + 1) * vocab];
            for (j, (g, &v)) in drow.iter_mut().zip(row).enumerate() {
                let p = (v.f64() - lse).exp();
                let onehot = if j == t as usize { 1.0 } else { 0.0 };
                *g = T::of((p - onehot) / count);
            }
        }
    }
    total / count
}
