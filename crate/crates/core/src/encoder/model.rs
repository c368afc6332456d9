use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::attention::{attend, attend_backward};
use super::linalg::Matrix;
use crate::augment::{AttentionMask, AugmentedInput, CLS, SEGMENT_SEPARATOR, SEP};
use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 32,
            n_heads: 4,
            n_layers: 2,
            d_ff: 64,
            max_len: 256,
            seed: 1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return bad("encoder dimensions must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Token vocabulary; index 0 is [`UNK`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Special tokens first, then the given tokens in sorted order.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut rest: Vec<&str> = tokens.into_iter().collect();
        rest.sort_unstable();
        rest.dedup();
        let specials = [UNK, CLS, SEP, SEGMENT_SEPARATOR, "|"];
        let all: Vec<String> = specials
            .iter()
            .copied()
            .chain(rest.into_iter().filter(|t| !specials.contains(t)))
            .map(str::to_owned)
            .collect();
        Vocab::from(all)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl LayerParams {
    fn tensors(&self) -> [(&'static str, &Matrix); 16] {
        [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
        ]
    }
}

/// All trainable tensors. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub classifier: Matrix,
    pub classifier_bias: Matrix,
}

impl Params {
    /// `(group name, tensor)` for every parameter group.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = vec![("embedding".to_owned(), &self.embedding)];
        for (l, layer) in self.layers.iter().enumerate() {
            out.extend(
                layer
                    .tensors()
                    .into_iter()
                    .map(|(n, m)| (format!("layer{l}.{n}"), m)),
            );
        }
        out.push(("classifier".into(), &self.classifier));
        out.push(("classifier_bias".into(), &self.classifier_bias));
        out
    }

    /// Same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn zeros_like(&self) -> Params {
        let mut p = self.clone();
        for t in p.tensors_mut() {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_finite())
    }

    /// `self -= rate * grads`
    pub fn descend(&mut self, grads: &Params, rate: f64) {
        for (p, (_, g)) in self.tensors_mut().into_iter().zip(grads.tensors()) {
            for (x, d) in p.data.iter_mut().zip(&g.data) {
                *x -= rate * d;
            }
        }
    }
}

/// Small post-norm transformer encoder with a per-token softmax classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    pub config: EncoderConfig,
    pub labels: Vec<String>,
    pub vocab: Vocab,
    pub params: Params,
}

/// Hidden states after each stage, for inspection.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `hidden[0]` is embeddings plus positions; `hidden[l + 1]` is the output of layer `l`.
    pub hidden: Vec<Matrix>,
    pub logits: Matrix,
}

struct NormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

struct LayerCache {
    input: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head `(q_h, k_h, v_h, weights)`.
    heads: Vec<(Matrix, Matrix, Matrix, Matrix)>,
    attended: Matrix,
    norm1: NormCache,
    y1: Matrix,
    ff_pre: Matrix,
    ff_act: Matrix,
    norm2: NormCache,
}

impl ToyEncoder {
    /// Randomly initialized model, deterministic in `config.seed`.
    pub fn new(config: EncoderConfig, vocab: Vocab, labels: Vec<String>) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut normal = |rows: usize, cols: usize, std: f64| {
            let dist = Normal::new(0.0, std).expect("positive std");
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| dist.sample(&mut rng)).collect(),
            )
        };
        let xavier = |fan_in: usize, fan_out: usize| (2.0 / (fan_in + fan_out) as f64).sqrt();
        let embedding = normal(vocab.len(), d, 1.0);
        let layers = (0..config.n_layers)
            .map(|_| LayerParams {
                wq: normal(d, d, xavier(d, d)),
                bq: Matrix::zeros(1, d),
                wk: normal(d, d, xavier(d, d)),
                bk: Matrix::zeros(1, d),
                wv: normal(d, d, xavier(d, d)),
                bv: Matrix::zeros(1, d),
                wo: normal(d, d, xavier(d, d)),
                bo: Matrix::zeros(1, d),
                ln1_gain: Matrix::filled(1, d, 1.0),
                ln1_bias: Matrix::zeros(1, d),
                w1: normal(d, config.d_ff, xavier(d, config.d_ff)),
                b1: Matrix::zeros(1, config.d_ff),
                w2: normal(config.d_ff, d, xavier(config.d_ff, d)),
                b2: Matrix::zeros(1, d),
                ln2_gain: Matrix::filled(1, d, 1.0),
                ln2_bias: Matrix::zeros(1, d),
            })
            .collect();
        let classifier = normal(d, labels.len(), xavier(d, labels.len()));
        Ok(ToyEncoder {
            params: Params {
                embedding,
                layers,
                classifier,
                classifier_bias: Matrix::zeros(1, labels.len()),
            },
            config,
            labels,
            vocab,
        })
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn check_input(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<()> {
        if aug.len() > self.config.max_len {
            return Err(Error::Config(format!(
                "{}: sequence of {} tokens exceeds max_len {}",
                aug.id,
                aug.len(),
                self.config.max_len
            )));
        }
        if mask.size() != aug.len() {
            return Err(Error::Alignment(format!(
                "{}: mask of size {} for {} tokens",
                aug.id,
                mask.size(),
                aug.len()
            )));
        }
        Ok(())
    }

    fn embed(&self, aug: &AugmentedInput) -> Matrix {
        let d = self.config.d_model;
        let mut x = Matrix::zeros(aug.len(), d);
        for (pos, token) in aug.tokens.iter().enumerate() {
            let e = self.params.embedding.row(self.vocab.id(token));
            for (c, out) in x.row_mut(pos).iter_mut().enumerate() {
                *out = e[c] + positional(pos, c, d);
            }
        }
        x
    }

    /// Per-position label logits (`len × labels`). Unknown tokens map to UNK.
    pub fn forward(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<Matrix> {
        Ok(self.trace(aug, mask)?.logits)
    }

    pub fn trace(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<ForwardTrace> {
        self.check_input(aug, mask)?;
        let mut hidden = vec![self.embed(aug)];
        for layer in &self.params.layers {
            let (out, _) = self.layer_forward(layer, hidden.last().unwrap(), mask);
            hidden.push(out);
        }
        let logits = self.classify(hidden.last().unwrap());
        Ok(ForwardTrace { hidden, logits })
    }

    fn classify(&self, h: &Matrix) -> Matrix {
        let mut logits = h.matmul(&self.params.classifier);
        logits.add_row_vector(&self.params.classifier_bias);
        logits
    }

    fn layer_forward(
        &self,
        p: &LayerParams,
        x: &Matrix,
        mask: &AttentionMask,
    ) -> (Matrix, LayerCache) {
        let n = x.rows;
        let d = self.config.d_model;
        let dh = self.config.head_dim();
        let project = |w: &Matrix, b: &Matrix| {
            let mut m = x.matmul(w);
            m.add_row_vector(b);
            m
        };
        let q = project(&p.wq, &p.bq);
        let k = project(&p.wk, &p.bk);
        let v = project(&p.wv, &p.bv);

        let mut attended = Matrix::zeros(n, d);
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let cols = h * dh..(h + 1) * dh;
            let (qh, kh, vh) = (
                slice_cols(&q, &cols),
                slice_cols(&k, &cols),
                slice_cols(&v, &cols),
            );
            let out = attend(&qh, &kh, &vh, mask);
            write_cols(&mut attended, &out.output, &cols);
            heads.push((qh, kh, vh, out.weights));
        }
        let mut r1 = attended.matmul(&p.wo);
        r1.add_row_vector(&p.bo);
        r1.add_assign(x);
        let (y1, norm1) = layer_norm(&r1, &p.ln1_gain, &p.ln1_bias);

        let mut ff_pre = y1.matmul(&p.w1);
        ff_pre.add_row_vector(&p.b1);
        let mut ff_act = ff_pre.clone();
        ff_act.data.iter_mut().for_each(|z| *z = gelu(*z));
        let mut r2 = ff_act.matmul(&p.w2);
        r2.add_row_vector(&p.b2);
        r2.add_assign(&y1);
        let (y2, norm2) = layer_norm(&r2, &p.ln2_gain, &p.ln2_bias);

        let cache = LayerCache {
            input: x.clone(),
            q,
            k,
            v,
            heads,
            attended,
            norm1,
            y1,
            ff_pre,
            ff_act,
            norm2,
        };
        (y2, cache)
    }

    /// Mean cross-entropy over labelled sentence positions.
    pub fn loss(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<f64> {
        let targets = self.targets(aug)?;
        let logits = self.forward(aug, mask)?;
        Ok(cross_entropy(&logits, &targets).0)
    }

    /// Gold label index per position, `None` for ignored positions.
    pub(crate) fn targets(&self, aug: &AugmentedInput) -> Result<Vec<Option<usize>>> {
        let gold = aug
            .gold_tags
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{}: no gold tags to train on", aug.id)))?;
        if gold.len() != aug.n_sentence {
            return Err(Error::Alignment(format!(
                "{}: {} gold tags for {} tokens",
                aug.id,
                gold.len(),
                aug.n_sentence
            )));
        }
        aug.label_alignment()
            .into_iter()
            .map(|slot| match slot {
                None => Ok(None),
                Some(t) => self.label_index(&gold[t]).map(Some).ok_or_else(|| {
                    Error::Config(format!(
                        "{}: label {:?} is not in the model",
                        aug.id, gold[t]
                    ))
                }),
            })
            .collect()
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(
        &self,
        aug: &AugmentedInput,
        mask: &AttentionMask,
    ) -> Result<(f64, Params)> {
        self.check_input(aug, mask)?;
        let targets = self.targets(aug)?;
        let mut x = self.embed(aug);
        let mut caches = Vec::with_capacity(self.params.layers.len());
        for layer in &self.params.layers {
            let (out, cache) = self.layer_forward(layer, &x, mask);
            caches.push(cache);
            x = out;
        }
        let logits = self.classify(&x);
        let (loss, d_logits) = cross_entropy(&logits, &targets);

        let mut grads = self.params.zeros_like();
        grads.classifier = x.t_matmul(&d_logits);
        grads.classifier_bias = d_logits.column_sums();
        let mut dx = d_logits.matmul_t(&self.params.classifier);

        for (l, cache) in caches.iter().enumerate().rev() {
            dx = self.layer_backward(&self.params.layers[l], cache, &dx, &mut grads.layers[l]);
        }
        for (pos, token) in aug.tokens.iter().enumerate() {
            let id = self.vocab.id(token);
            for (g, d) in grads.embedding.row_mut(id).iter_mut().zip(dx.row(pos)) {
                *g += d;
            }
        }
        Ok((loss, grads))
    }

    fn layer_backward(
        &self,
        p: &LayerParams,
        c: &LayerCache,
        dy2: &Matrix,
        g: &mut LayerParams,
    ) -> Matrix {
        let dh = self.config.head_dim();
        let (dr2, dgain2, dbias2) = layer_norm_backward(dy2, &c.norm2, &p.ln2_gain);
        g.ln2_gain = dgain2;
        g.ln2_bias = dbias2;

        g.w2 = c.ff_act.t_matmul(&dr2);
        g.b2 = dr2.column_sums();
        let mut d_pre = dr2.matmul_t(&p.w2);
        for (dz, z) in d_pre.data.iter_mut().zip(&c.ff_pre.data) {
            *dz *= gelu_grad(*z);
        }
        g.w1 = c.y1.t_matmul(&d_pre);
        g.b1 = d_pre.column_sums();
        let mut dy1 = d_pre.matmul_t(&p.w1);
        dy1.add_assign(&dr2);

        let (dr1, dgain1, dbias1) = layer_norm_backward(&dy1, &c.norm1, &p.ln1_gain);
        g.ln1_gain = dgain1;
        g.ln1_bias = dbias1;

        g.wo = c.attended.t_matmul(&dr1);
        g.bo = dr1.column_sums();
        let d_attended = dr1.matmul_t(&p.wo);

        let mut dq = Matrix::zeros_like(&c.q);
        let mut dk = Matrix::zeros_like(&c.k);
        let mut dv = Matrix::zeros_like(&c.v);
        for (h, (qh, kh, vh, weights)) in c.heads.iter().enumerate() {
            let cols = h * dh..(h + 1) * dh;
            let grads = attend_backward(qh, kh, vh, weights, &slice_cols(&d_attended, &cols));
            write_cols(&mut dq, &grads.dq, &cols);
            write_cols(&mut dk, &grads.dk, &cols);
            write_cols(&mut dv, &grads.dv, &cols);
        }
        g.wq = c.input.t_matmul(&dq);
        g.bq = dq.column_sums();
        g.wk = c.input.t_matmul(&dk);
        g.bk = dk.column_sums();
        g.wv = c.input.t_matmul(&dv);
        g.bv = dv.column_sums();

        let mut dx = dr1;
        dx.add_assign(&dq.matmul_t(&p.wq));
        dx.add_assign(&dk.matmul_t(&p.wk));
        dx.add_assign(&dv.matmul_t(&p.wv));
        dx
    }

    /// Label distributions for the sentence tokens, in token order.
    pub fn predict(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward(aug, mask)?;
        Ok(aug
            .label_positions()
            .map(|p| softmax(logits.row(p)))
            .collect())
    }

    /// Argmax label per sentence token; ties go to the earlier label.
    pub fn predict_tags(&self, aug: &AugmentedInput, mask: &AttentionMask) -> Result<Vec<String>> {
        Ok(self
            .predict(aug, mask)?
            .iter()
            .map(|dist| {
                let best = dist
                    .iter()
                    .enumerate()
                    .fold(0, |b, (i, p)| if *p > dist[b] { i } else { b });
                self.labels[best].clone()
            })
            .collect())
    }
}

fn positional(pos: usize, c: usize, d: usize) -> f64 {
    let angle = pos as f64 / 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
    if c.is_multiple_of(2) {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn slice_cols(m: &Matrix, cols: &std::ops::Range<usize>) -> Matrix {
    let mut out = Matrix::zeros(m.rows, cols.len());
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[cols.clone()]);
    }
    out
}

fn write_cols(dst: &mut Matrix, src: &Matrix, cols: &std::ops::Range<usize>) {
    for r in 0..dst.rows {
        dst.row_mut(r)[cols.clone()].copy_from_slice(src.row(r));
    }
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let d = x.cols as f64;
    let mut normalized = Matrix::zeros_like(x);
    let mut out = Matrix::zeros_like(x);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for (c, &v) in row.iter().enumerate() {
            let n = (v - mean) * is;
            normalized.set(r, c, n);
            out.set(r, c, n * gain.data[c] + bias.data[c]);
        }
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

fn layer_norm_backward(dy: &Matrix, cache: &NormCache, gain: &Matrix) -> (Matrix, Matrix, Matrix) {
    let d = dy.cols as f64;
    let mut dx = Matrix::zeros_like(dy);
    let mut dgain = Matrix::zeros(1, dy.cols);
    let dbias = dy.column_sums();
    for r in 0..dy.rows {
        let xhat = cache.normalized.row(r);
        let dyr = dy.row(r);
        let dxhat: Vec<f64> = dyr.iter().zip(&gain.data).map(|(a, g)| a * g).collect();
        let sum: f64 = dxhat.iter().sum();
        let sum_x: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
        let scale = cache.inv_std[r] / d;
        for c in 0..dy.cols {
            dx.set(r, c, scale * (d * dxhat[c] - sum - xhat[c] * sum_x));
            dgain.data[c] += dyr[c] * xhat[c];
        }
    }
    (dx, dgain, dbias)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy over targeted rows and its gradient w.r.t. the logits.
fn cross_entropy(logits: &Matrix, targets: &[Option<usize>]) -> (f64, Matrix) {
    let count = targets.iter().flatten().count().max(1) as f64;
    let mut grad = Matrix::zeros_like(logits);
    let mut loss = 0.0;
    for (r, target) in targets.iter().enumerate() {
        let Some(t) = *target else { continue };
        let probs = softmax(logits.row(r));
        loss -= probs[t].ln();
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            *g = (probs[c] - if c == t { 1.0 } else { 0.0 }) / count;
        }
    }
    (loss / count, grad)
}
