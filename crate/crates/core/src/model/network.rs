//! Forward and reverse passes of the pre-norm encoder-decoder.
//!
//! Weights are widened to f64 once per [`Network`]; all activations and
//! reductions run in f64. One sequence pair is processed at a time; padding
//! frames are excluded through the key mask.

use rand::Rng;

use super::linalg::Mat;
use super::params::{AttnIdx, FfnIdx, Layout, LinearIdx, NormIdx, Parameters, Tensor};
use super::{ModelConfig, ModelError};
use crate::pose::FeatureSequence;

const NORM_EPS: f64 = 1e-5;

/// Compute-precision copy of a [`Parameters`] set.
#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    layout: Layout,
    weights: Vec<Vec<f64>>,
}

/// Gradients with the same tensor structure as the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros(layout: &Layout) -> Self {
        Self {
            tensors: layout.specs.iter().map(|s| vec![0.0; s.numel()]).collect(),
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.tensors.iter_mut().flat_map(|t| t.iter_mut()) {
            *v *= factor;
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().flatten().all(|&v| v == 0.0)
    }
}

#[derive(Clone, Copy)]
enum Mask<'a> {
    Keys(&'a [bool]),
    Causal,
}

impl Mask<'_> {
    fn allows(&self, query: usize, key: usize) -> bool {
        match self {
            Mask::Keys(keep) => keep[key],
            Mask::Causal => key <= query,
        }
    }
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

#[derive(Clone, Debug)]
struct AttnCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    probs: Vec<Mat>,
    concat: Mat,
}

#[derive(Clone, Debug)]
struct FfnCache {
    input: Mat,
    hidden: Mat,
}

#[derive(Clone, Debug)]
struct EncoderLayerCache {
    norm1: NormCache,
    attn: AttnCache,
    drop1: Option<Vec<f64>>,
    norm2: NormCache,
    ffn: FfnCache,
    drop2: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
struct DecoderLayerCache {
    norm1: NormCache,
    self_attn: AttnCache,
    drop1: Option<Vec<f64>>,
    norm2: NormCache,
    cross_attn: AttnCache,
    drop2: Option<Vec<f64>>,
    norm3: NormCache,
    ffn: FfnCache,
    drop3: Option<Vec<f64>>,
}

/// Activations kept by [`Network::forward`] for [`Network::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    config: ModelConfig,
    src: Mat,
    input_drop: Option<Vec<f64>>,
    encoder: Vec<EncoderLayerCache>,
    encoder_norm: NormCache,
    target: Vec<u32>,
    embed_drop: Option<Vec<f64>>,
    decoder: Vec<DecoderLayerCache>,
    decoder_norm: NormCache,
    hidden: Mat,
}

impl ForwardCache {
    /// Every attention probability matrix (encoder, then decoder self and
    /// cross attention per layer, one per head).
    pub fn attention_probs(&self) -> impl Iterator<Item = &Mat> {
        self.encoder
            .iter()
            .flat_map(|l| l.attn.probs.iter())
            .chain(
                self.decoder
                    .iter()
                    .flat_map(|l| l.self_attn.probs.iter().chain(l.cross_attn.probs.iter())),
            )
    }
}

/// Encoder output reused across decoding steps.
#[derive(Clone, Debug)]
pub struct EncoderState {
    output: Mat,
    key_mask: Vec<bool>,
}

impl EncoderState {
    pub fn len(&self) -> usize {
        self.output.rows
    }

    pub fn is_empty(&self) -> bool {
        self.output.rows == 0
    }
}

/// Logits `[target_len x vocab]` and the cache needed for the reverse pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Mat,
    pub cache: ForwardCache,
}

fn sinusoid(pos: usize, i: usize, d: usize) -> f64 {
    let pair = (i / 2 * 2) as f64;
    let angle = pos as f64 / 10000f64.powf(pair / d as f64);
    if i % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn add_positions(x: &mut Mat) {
    let d = x.cols;
    for t in 0..x.rows {
        for (i, v) in x.row_mut(t).iter_mut().enumerate() {
            *v += sinusoid(t, i, d);
        }
    }
}

fn dropout<R: Rng + ?Sized>(x: &mut Mat, p: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..x.data.len())
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect();
    for (v, m) in x.data.iter_mut().zip(&mask) {
        *v *= m;
    }
    Some(mask)
}

fn dropout_backward(dy: &Mat, mask: &Option<Vec<f64>>) -> Mat {
    match mask {
        None => dy.clone(),
        Some(m) => {
            let mut out = dy.clone();
            for (v, k) in out.data.iter_mut().zip(m) {
                *v *= k;
            }
            out
        }
    }
}

fn softmax_masked(scores: &mut Mat, mask: Mask<'_>) {
    for i in 0..scores.rows {
        let row = scores.row_mut(i);
        let mut max = f64::NEG_INFINITY;
        for (j, &s) in row.iter().enumerate() {
            if mask.allows(i, j) && s > max {
                max = s;
            }
        }
        let mut sum = 0.0;
        for (j, s) in row.iter_mut().enumerate() {
            *s = if mask.allows(i, j) { (*s - max).exp() } else { 0.0 };
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
}

impl Network {
    pub fn new(params: &Parameters) -> Self {
        let config = params.config().clone();
        let layout = Layout::new(&config);
        let weights = params
            .tensors()
            .iter()
            .map(|t| t.data.iter().map(|&v| v as f64).collect())
            .collect();
        Self {
            config,
            layout,
            weights,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn num_tensors(&self) -> usize {
        self.weights.len()
    }

    pub fn tensor_name(&self, i: usize) -> &str {
        &self.layout.specs[i].name
    }

    pub fn tensor(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.weights[i]
    }

    /// Rounds back to storage precision.
    pub fn to_parameters(&self) -> Parameters {
        let tensors = self
            .layout
            .specs
            .iter()
            .zip(&self.weights)
            .map(|(spec, w)| Tensor {
                name: spec.name.clone(),
                shape: spec.shape.clone(),
                data: w.iter().map(|&v| v as f32).collect(),
            })
            .collect();
        Parameters::from_tensors(self.config.clone(), tensors).expect("layout-consistent tensors")
    }

    fn w(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    // -- primitives --------------------------------------------------------

    fn linear(&self, x: &Mat, idx: LinearIdx) -> Mat {
        let out_dim = self.w(idx.b).len();
        let mut y = x.matmul(self.w(idx.w), out_dim);
        y.add_row_vec(self.w(idx.b));
        y
    }

    fn linear_backward(&self, dy: &Mat, x: &Mat, idx: LinearIdx, grads: &mut Gradients) -> Mat {
        x.t_matmul_acc(dy, &mut grads.tensors[idx.w]);
        dy.col_sums_acc(&mut grads.tensors[idx.b]);
        dy.matmul_t(self.w(idx.w), x.cols)
    }

    fn norm(&self, x: &Mat, idx: NormIdx) -> (Mat, NormCache) {
        let d = x.cols;
        let gain = self.w(idx.gain);
        let bias = self.w(idx.bias);
        let mut y = Mat::zeros(x.rows, d);
        let mut xhat = Mat::zeros(x.rows, d);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + NORM_EPS).sqrt();
            inv_std.push(inv);
            for i in 0..d {
                let h = (row[i] - mean) * inv;
                xhat.row_mut(r)[i] = h;
                y.row_mut(r)[i] = gain[i] * h + bias[i];
            }
        }
        (y, NormCache { xhat, inv_std })
    }

    fn norm_backward(&self, dy: &Mat, cache: &NormCache, idx: NormIdx, grads: &mut Gradients) -> Mat {
        let d = dy.cols;
        let gain = self.w(idx.gain);
        let mut dx = Mat::zeros(dy.rows, d);
        let mut dgain = vec![0.0; d];
        let mut dbias = vec![0.0; d];
        for r in 0..dy.rows {
            let g = dy.row(r);
            let xhat = cache.xhat.row(r);
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for i in 0..d {
                dgain[i] += g[i] * xhat[i];
                dbias[i] += g[i];
                let dxh = g[i] * gain[i];
                mean_dxhat += dxh;
                mean_dxhat_xhat += dxh * xhat[i];
            }
            mean_dxhat /= d as f64;
            mean_dxhat_xhat /= d as f64;
            let inv = cache.inv_std[r];
            let out = dx.row_mut(r);
            for i in 0..d {
                let dxh = g[i] * gain[i];
                out[i] = inv * (dxh - mean_dxhat - xhat[i] * mean_dxhat_xhat);
            }
        }
        for (a, b) in grads.tensors[idx.gain].iter_mut().zip(dgain) {
            *a += b;
        }
        for (a, b) in grads.tensors[idx.bias].iter_mut().zip(dbias) {
            *a += b;
        }
        dx
    }

    fn attention(&self, xq: &Mat, xkv: &Mat, idx: AttnIdx, mask: Mask<'_>) -> (Mat, AttnCache) {
        let heads = self.config.heads;
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let q = self.linear(xq, idx.q);
        let k = self.linear(xkv, idx.k);
        let v = self.linear(xkv, idx.v);
        let mut concat = Mat::zeros(xq.rows, self.config.embed_dim);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = q.columns(h * dk, dk);
            let kh = k.columns(h * dk, dk);
            let vh = v.columns(h * dk, dk);
            let mut scores = qh.matmul_t(&kh.data, kh.rows);
            for s in scores.data.iter_mut() {
                *s *= scale;
            }
            softmax_masked(&mut scores, mask);
            let oh = scores.matmul(&vh.data, dk);
            concat.set_columns(h * dk, &oh);
            probs.push(scores);
        }
        let out = self.linear(&concat, idx.o);
        let cache = AttnCache {
            xq: xq.clone(),
            xkv: xkv.clone(),
            q,
            k,
            v,
            probs,
            concat,
        };
        (out, cache)
    }

    /// Returns gradients with respect to the query input and key/value input.
    fn attention_backward(
        &self,
        dout: &Mat,
        cache: &AttnCache,
        idx: AttnIdx,
        grads: &mut Gradients,
    ) -> (Mat, Mat) {
        let heads = self.config.heads;
        let dk = self.config.head_dim();
        let scale = 1.0 / (dk as f64).sqrt();
        let n = cache.xq.rows;
        let m = cache.xkv.rows;
        let dconcat = self.linear_backward(dout, &cache.concat, idx.o, grads);
        let mut dq = Mat::zeros(n, self.config.embed_dim);
        let mut dk_all = Mat::zeros(m, self.config.embed_dim);
        let mut dv = Mat::zeros(m, self.config.embed_dim);
        for h in 0..heads {
            let probs = &cache.probs[h];
            let qh = cache.q.columns(h * dk, dk);
            let kh = cache.k.columns(h * dk, dk);
            let vh = cache.v.columns(h * dk, dk);
            let doh = dconcat.columns(h * dk, dk);
            let dprobs = doh.matmul_t(&vh.data, m);
            let mut dvh = Mat::zeros(m, dk);
            probs.t_matmul_acc(&doh, &mut dvh.data);
            let mut dscores = Mat::zeros(n, m);
            for i in 0..n {
                let p = probs.row(i);
                let dp = dprobs.row(i);
                let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
                for (j, out) in dscores.row_mut(i).iter_mut().enumerate() {
                    *out = p[j] * (dp[j] - dot) * scale;
                }
            }
            let dqh = dscores.matmul(&kh.data, dk);
            let mut dkh = Mat::zeros(m, dk);
            dscores.t_matmul_acc(&qh, &mut dkh.data);
            dq.set_columns(h * dk, &dqh);
            dk_all.set_columns(h * dk, &dkh);
            dv.set_columns(h * dk, &dvh);
        }
        let dxq = self.linear_backward(&dq, &cache.xq, idx.q, grads);
        let mut dxkv = self.linear_backward(&dk_all, &cache.xkv, idx.k, grads);
        dxkv.add_assign(&self.linear_backward(&dv, &cache.xkv, idx.v, grads));
        (dxq, dxkv)
    }

    fn ffn(&self, x: &Mat, idx: FfnIdx) -> (Mat, FfnCache) {
        let mut hidden = self.linear(x, idx.fc1);
        for v in hidden.data.iter_mut() {
            *v = v.max(0.0);
        }
        let out = self.linear(&hidden, idx.fc2);
        (
            out,
            FfnCache {
                input: x.clone(),
                hidden,
            },
        )
    }

    fn ffn_backward(&self, dout: &Mat, cache: &FfnCache, idx: FfnIdx, grads: &mut Gradients) -> Mat {
        let mut dhidden = self.linear_backward(dout, &cache.hidden, idx.fc2, grads);
        for (g, &h) in dhidden.data.iter_mut().zip(&cache.hidden.data) {
            if h <= 0.0 {
                *g = 0.0;
            }
        }
        self.linear_backward(&dhidden, &cache.input, idx.fc1, grads)
    }

    // -- encoder / decoder ------------------------------------------------

    fn check_source(&self, src: &FeatureSequence) -> Result<(), ModelError> {
        if src.dim() != self.config.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.config.input_dim,
                found: src.dim(),
            });
        }
        if src.len() > self.config.max_positions {
            return Err(ModelError::PositionOverflow {
                length: src.len(),
                max: self.config.max_positions,
            });
        }
        if !src.frame_mask().iter().any(|&m| m) {
            return Err(ModelError::EmptyInput("every source frame is masked"));
        }
        Ok(())
    }

    fn check_target(&self, tgt: &[u32]) -> Result<(), ModelError> {
        if tgt.is_empty() {
            return Err(ModelError::EmptyInput("decoder input is empty"));
        }
        if tgt.len() > self.config.max_positions {
            return Err(ModelError::PositionOverflow {
                length: tgt.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = tgt.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange {
                id,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(())
    }

    fn run_encoder<R: Rng + ?Sized>(
        &self,
        src: &FeatureSequence,
        mut rng: Option<&mut R>,
    ) -> (Mat, Mat, Option<Vec<f64>>, Vec<EncoderLayerCache>, NormCache) {
        let p = self.config.dropout;
        let src_mat = Mat::from_vec(
            src.len(),
            src.dim(),
            src.features().iter().map(|&v| v as f64).collect(),
        );
        let mut x = self.linear(&src_mat, self.layout.input_proj);
        add_positions(&mut x);
        let input_drop = dropout(&mut x, p, rng.as_deref_mut());
        let mask = Mask::Keys(src.frame_mask());
        let mut caches = Vec::with_capacity(self.config.layers);
        for layer in &self.layout.encoder {
            let (a, norm1) = self.norm(&x, layer.norm1);
            let (mut attn_out, attn) = self.attention(&a, &a, layer.attn, mask);
            let drop1 = dropout(&mut attn_out, p, rng.as_deref_mut());
            x.add_assign(&attn_out);
            let (b, norm2) = self.norm(&x, layer.norm2);
            let (mut ffn_out, ffn) = self.ffn(&b, layer.ffn);
            let drop2 = dropout(&mut ffn_out, p, rng.as_deref_mut());
            x.add_assign(&ffn_out);
            caches.push(EncoderLayerCache {
                norm1,
                attn,
                drop1,
                norm2,
                ffn,
                drop2,
            });
        }
        let (out, norm) = self.norm(&x, self.layout.encoder_norm);
        (out, src_mat, input_drop, caches, norm)
    }

    #[allow(clippy::type_complexity)]
    fn run_decoder<R: Rng + ?Sized>(
        &self,
        enc: &Mat,
        key_mask: &[bool],
        tgt: &[u32],
        mut rng: Option<&mut R>,
    ) -> (Mat, Option<Vec<f64>>, Vec<DecoderLayerCache>, NormCache) {
        let p = self.config.dropout;
        let d = self.config.embed_dim;
        let scale = (d as f64).sqrt();
        let embed = self.w(self.layout.embed);
        let mut y = Mat::zeros(tgt.len(), d);
        for (t, &id) in tgt.iter().enumerate() {
            let row = &embed[id as usize * d..(id as usize + 1) * d];
            for (o, e) in y.row_mut(t).iter_mut().zip(row) {
                *o = e * scale;
            }
        }
        add_positions(&mut y);
        let embed_drop = dropout(&mut y, p, rng.as_deref_mut());
        let mut caches = Vec::with_capacity(self.config.layers);
        for layer in &self.layout.decoder {
            let (a, norm1) = self.norm(&y, layer.norm1);
            let (mut sa, self_attn) = self.attention(&a, &a, layer.self_attn, Mask::Causal);
            let drop1 = dropout(&mut sa, p, rng.as_deref_mut());
            y.add_assign(&sa);
            let (c, norm2) = self.norm(&y, layer.norm2);
            let (mut ca, cross_attn) = self.attention(&c, enc, layer.cross_attn, Mask::Keys(key_mask));
            let drop2 = dropout(&mut ca, p, rng.as_deref_mut());
            y.add_assign(&ca);
            let (b, norm3) = self.norm(&y, layer.norm3);
            let (mut f, ffn) = self.ffn(&b, layer.ffn);
            let drop3 = dropout(&mut f, p, rng.as_deref_mut());
            y.add_assign(&f);
            caches.push(DecoderLayerCache {
                norm1,
                self_attn,
                drop1,
                norm2,
                cross_attn,
                drop2,
                norm3,
                ffn,
                drop3,
            });
        }
        let (hidden, norm) = self.norm(&y, self.layout.decoder_norm);
        (hidden, embed_drop, caches, norm)
    }

    fn project(&self, hidden: &Mat) -> Mat {
        hidden.matmul_t(self.w(self.layout.embed), self.config.vocab_size)
    }

    /// Teacher-forced pass: logits for every decoder position. Dropout is
    /// active only when `train_mode` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        src: &FeatureSequence,
        tgt_in: &[u32],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<ForwardOutput, ModelError> {
        self.check_source(src)?;
        self.check_target(tgt_in)?;
        let mut rng = if train_mode { Some(rng) } else { None };
        let (enc, src_mat, input_drop, encoder, encoder_norm) = self.run_encoder(src, rng.as_deref_mut());
        let (hidden, embed_drop, decoder, decoder_norm) =
            self.run_decoder(&enc, src.frame_mask(), tgt_in, rng);
        let logits = self.project(&hidden);
        Ok(ForwardOutput {
            logits,
            cache: ForwardCache {
                config: self.config.clone(),
                src: src_mat,
                input_drop,
                encoder,
                encoder_norm,
                target: tgt_in.to_vec(),
                embed_drop,
                decoder,
                decoder_norm,
                hidden,
            },
        })
    }

    /// Exact gradients of `sum(dlogits * logits)` with respect to every weight.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Mat) -> Result<Gradients, ModelError> {
        if cache.config != self.config {
            return Err(ModelError::CacheMismatch("cache was produced by a different configuration".into()));
        }
        if dlogits.rows != cache.target.len() || dlogits.cols != self.config.vocab_size {
            return Err(ModelError::CacheMismatch(format!(
                "logit gradient is {}x{}, expected {}x{}",
                dlogits.rows,
                dlogits.cols,
                cache.target.len(),
                self.config.vocab_size
            )));
        }
        let d = self.config.embed_dim;
        let mut grads = Gradients::zeros(&self.layout);

        // Tied output projection.
        let embed = self.w(self.layout.embed);
        dlogits.t_matmul_acc(&cache.hidden, &mut grads.tensors[self.layout.embed]);
        let dhidden = dlogits.matmul(embed, d);

        let mut dy = self.norm_backward(&dhidden, &cache.decoder_norm, self.layout.decoder_norm, &mut grads);
        let mut denc = Mat::zeros(cache.encoder_norm.xhat.rows, d);
        for (layer, lc) in self.layout.decoder.iter().zip(&cache.decoder).rev() {
            let df = dropout_backward(&dy, &lc.drop3);
            let db = self.ffn_backward(&df, &lc.ffn, layer.ffn, &mut grads);
            dy.add_assign(&self.norm_backward(&db, &lc.norm3, layer.norm3, &mut grads));

            let dca = dropout_backward(&dy, &lc.drop2);
            let (dc, dkv) = self.attention_backward(&dca, &lc.cross_attn, layer.cross_attn, &mut grads);
            denc.add_assign(&dkv);
            dy.add_assign(&self.norm_backward(&dc, &lc.norm2, layer.norm2, &mut grads));

            let dsa = dropout_backward(&dy, &lc.drop1);
            let (dq, dkv) = self.attention_backward(&dsa, &lc.self_attn, layer.self_attn, &mut grads);
            let mut da = dq;
            da.add_assign(&dkv);
            dy.add_assign(&self.norm_backward(&da, &lc.norm1, layer.norm1, &mut grads));
        }
        let dy = dropout_backward(&dy, &cache.embed_drop);
        let scale = (d as f64).sqrt();
        let dembed = &mut grads.tensors[self.layout.embed];
        for (t, &id) in cache.target.iter().enumerate() {
            let row = &mut dembed[id as usize * d..(id as usize + 1) * d];
            for (g, v) in row.iter_mut().zip(dy.row(t)) {
                *g += v * scale;
            }
        }

        let mut dx = self.norm_backward(&denc, &cache.encoder_norm, self.layout.encoder_norm, &mut grads);
        for (layer, lc) in self.layout.encoder.iter().zip(&cache.encoder).rev() {
            let df = dropout_backward(&dx, &lc.drop2);
            let db = self.ffn_backward(&df, &lc.ffn, layer.ffn, &mut grads);
            dx.add_assign(&self.norm_backward(&db, &lc.norm2, layer.norm2, &mut grads));

            let dat = dropout_backward(&dx, &lc.drop1);
            let (dq, dkv) = self.attention_backward(&dat, &lc.attn, layer.attn, &mut grads);
            let mut da = dq;
            da.add_assign(&dkv);
            dx.add_assign(&self.norm_backward(&da, &lc.norm1, layer.norm1, &mut grads));
        }
        let dx = dropout_backward(&dx, &cache.input_drop);
        self.linear_backward(&dx, &cache.src, self.layout.input_proj, &mut grads);
        Ok(grads)
    }

    /// Runs the encoder once for decoding.
    pub fn encode(&self, src: &FeatureSequence) -> Result<EncoderState, ModelError> {
        self.check_source(src)?;
        let (output, ..) = self.run_encoder::<rand_chacha::ChaCha8Rng>(src, None);
        Ok(EncoderState {
            output,
            key_mask: src.frame_mask().to_vec(),
        })
    }

    /// Logits for the position following `prefix`.
    pub fn next_logits(&self, enc: &EncoderState, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.check_target(prefix)?;
        let (hidden, ..) = self.run_decoder::<rand_chacha::ChaCha8Rng>(&enc.output, &enc.key_mask, prefix, None);
        let last = Mat::from_vec(1, hidden.cols, hidden.row(hidden.rows - 1).to_vec());
        Ok(self.project(&last).data)
    }
}

/// Row-wise log-softmax in f64.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}
