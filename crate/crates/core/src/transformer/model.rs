use super::params::{ModelParams, Variant};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};
use crate::tensor::ops::{axpy, dot, logsumexp, matmul_a_bt_acc, matmul_acc, matmul_at_b_acc, softmax_inplace};
use crate::text::{encode, MaskedSeq, TokenSeq, Vocabulary};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// One row of a training batch: the active (unpadded) ids plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    /// LM target per position (`None` = no loss at that position).
    pub lm_targets: Vec<Option<u32>>,
    pub nsp_label: Option<bool>,
}

impl Example {
    /// No LM targets; used for embedding or head-only objectives.
    pub fn plain(seq: &TokenSeq) -> Self {
        Example { ids: seq.active().to_vec(), lm_targets: vec![None; seq.len], nsp_label: None }
    }

    /// Masked-LM row: corrupted inputs, original ids at flagged positions.
    pub fn masked(m: &MaskedSeq) -> Self {
        let len = m.input.len;
        Example { ids: m.input.active().to_vec(), lm_targets: m.targets[..len].to_vec(), nsp_label: None }
    }

    /// Causal-LM row: each position predicts the next id.
    pub fn causal(seq: &TokenSeq) -> Self {
        let ids = seq.active().to_vec();
        let lm_targets = (0..ids.len()).map(|t| ids.get(t + 1).copied()).collect();
        Example { ids, lm_targets, nsp_label: None }
    }

    pub fn n_targets(&self) -> usize {
        self.lm_targets.iter().filter(|t| t.is_some()).count()
    }
}

/// Supervised objective on pooled sequence vectors (task heads live outside
/// this module). Implementations return their weighted loss for `row` and
/// write its gradient with respect to `pooled` into `d_pooled`.
pub trait PooledObjective {
    fn loss_grad(&mut self, row: usize, pooled: &[f64], d_pooled: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// Mean CE over LM targets (plus mean NSP CE when present), unweighted.
    pub self_loss: f64,
    /// Sum returned by the pooled objective (already weighted).
    pub pooled_loss: f64,
    /// `self_weight * self_loss + pooled_loss`.
    pub total: f64,
    pub n_targets: usize,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    x_in: Vec<f64>,
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    attn: Vec<f64>,
    drop1: Option<Vec<f64>>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    drop2: Option<Vec<f64>>,
}

/// Activations of one forward pass over one sequence, kept for backward.
#[derive(Debug, Clone)]
pub struct SeqCache {
    ids: Vec<u32>,
    drop0: Option<Vec<f64>>,
    layers: Vec<LayerCache>,
    lnf: LnCache,
    /// Final-layer hidden states [T, d].
    pub hidden: Vec<f64>,
}

impl SeqCache {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Encoder: mean over positions. Decoder: last position.
    pub fn pooled(&self, variant: Variant) -> Vec<f64> {
        let t = self.len();
        let d = self.hidden.len() / t;
        match variant {
            Variant::Encoder => {
                let mut p = vec![0.0; d];
                for row in self.hidden.chunks_exact(d) {
                    axpy(1.0, row, &mut p);
                }
                p.iter_mut().for_each(|x| *x /= t as f64);
                p
            }
            Variant::Decoder => self.hidden[(t - 1) * d..].to_vec(),
        }
    }
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], d: usize) -> (Vec<f64>, LnCache) {
    let t = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; t];
    for i in 0..t {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd[i] = r;
        for j in 0..d {
            let xh = (row[j] - mean) * r;
            xhat[i * d + j] = xh;
            y[i * d + j] = xh * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn layer_norm_backward(dy: &[f64], cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64], d: usize) -> Vec<f64> {
    let t = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for i in 0..t {
        let dyr = &dy[i * d..(i + 1) * d];
        let xh = &cache.xhat[i * d..(i + 1) * d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dxhat_xhat = dot(&dxhat, xh) / d as f64;
        let r = cache.rstd[i];
        for j in 0..d {
            dx[i * d + j] = r * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn dropout_mask(rng: Option<&mut Rng>, n: usize, p: f64) -> Option<Vec<f64>> {
    use rand::Rng as _;
    let rng = rng?;
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..n).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_exact_mut(b.len()) {
        row.iter_mut().zip(b).for_each(|(v, bv)| *v += bv);
    }
}

fn sum_rows(dy: &[f64], out: &mut [f64]) {
    for row in dy.chunks_exact(out.len()) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

fn check_ids(p: &ModelParams, ids: &[u32]) -> Result<()> {
    let c = &p.config;
    if ids.is_empty() {
        return Err(Error::precondition("sequence has no tokens"));
    }
    if ids.len() > c.max_len {
        return Err(Error::precondition(format!("sequence length {} exceeds max_len {}", ids.len(), c.max_len)));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(Error::precondition(format!("token id {bad} outside vocabulary of {}", c.vocab_size)));
    }
    Ok(())
}

/// Forward pass over one active sequence. Dropout applies only when `rng` is given.
pub(crate) fn forward_seq(p: &ModelParams, ids: &[u32], mut rng: Option<&mut Rng>) -> Result<SeqCache> {
    check_ids(p, ids)?;
    let c = &p.config;
    let (t, d, f, nh) = (ids.len(), c.d_model, c.d_ff, c.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();
    let causal = c.variant == Variant::Decoder;

    let mut x = vec![0.0; t * d];
    for (i, &id) in ids.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        row.copy_from_slice(p.tok_emb.row(id as usize));
        axpy(1.0, p.pos_emb.row(i), row);
    }
    let drop0 = dropout_mask(rng.as_deref_mut(), t * d, c.dropout);
    apply_mask(&mut x, &drop0);

    let mut layers = Vec::with_capacity(c.layers);
    for lp in &p.layers {
        let x_in = x.clone();
        let (h1, ln1) = layer_norm(&x, &lp.ln1_g.data, &lp.ln1_b.data, d);
        let mut q = vec![0.0; t * d];
        let mut k = vec![0.0; t * d];
        let mut v = vec![0.0; t * d];
        matmul_acc(&h1, &lp.wq.data, &mut q, t, d, d);
        matmul_acc(&h1, &lp.wk.data, &mut k, t, d, d);
        matmul_acc(&h1, &lp.wv.data, &mut v, t, d, d);
        add_bias(&mut q, &lp.bq.data);
        add_bias(&mut k, &lp.bk.data);
        add_bias(&mut v, &lp.bv.data);

        let mut probs = vec![0.0; nh * t * t];
        let mut attn = vec![0.0; t * d];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..t {
                let row = &mut probs[(h * t + i) * t..(h * t + i + 1) * t];
                let visible = if causal { i + 1 } else { t };
                for j in 0..visible {
                    row[j] = scale * dot(&q[i * d + off..i * d + off + dh], &k[j * d + off..j * d + off + dh]);
                }
                softmax_inplace(&mut row[..visible]);
                let out = &mut attn[i * d + off..i * d + off + dh];
                for j in 0..visible {
                    axpy(row[j], &v[j * d + off..j * d + off + dh], out);
                }
            }
        }
        let mut o = vec![0.0; t * d];
        matmul_acc(&attn, &lp.wo.data, &mut o, t, d, d);
        add_bias(&mut o, &lp.bo.data);
        let drop1 = dropout_mask(rng.as_deref_mut(), t * d, c.dropout);
        apply_mask(&mut o, &drop1);
        x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);

        let (h2, ln2) = layer_norm(&x, &lp.ln2_g.data, &lp.ln2_b.data, d);
        let mut pre = vec![0.0; t * f];
        matmul_acc(&h2, &lp.w1.data, &mut pre, t, d, f);
        add_bias(&mut pre, &lp.b1.data);
        let act: Vec<f64> = pre.iter().map(|&u| gelu(u)).collect();
        let mut ff = vec![0.0; t * d];
        matmul_acc(&act, &lp.w2.data, &mut ff, t, f, d);
        add_bias(&mut ff, &lp.b2.data);
        let drop2 = dropout_mask(rng.as_deref_mut(), t * d, c.dropout);
        apply_mask(&mut ff, &drop2);
        x.iter_mut().zip(&ff).for_each(|(a, b)| *a += b);

        layers.push(LayerCache { x_in, ln1, h1, q, k, v, probs, attn, drop1, ln2, h2, pre, act, drop2 });
    }
    let (hidden, lnf) = layer_norm(&x, &p.lnf_g.data, &p.lnf_b.data, d);
    Ok(SeqCache { ids: ids.to_vec(), drop0, layers, lnf, hidden })
}

/// Backpropagate `dz` (gradient w.r.t. final hidden states) into `grads`.
pub(crate) fn backward_seq(p: &ModelParams, cache: &SeqCache, dz: &[f64], grads: &mut ModelParams) {
    let c = &p.config;
    let (t, d, f, nh) = (cache.len(), c.d_model, c.d_ff, c.heads);
    let dh = d / nh;
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = layer_norm_backward(dz, &cache.lnf, &p.lnf_g.data, &mut grads.lnf_g.data, &mut grads.lnf_b.data, d);

    for (li, (lp, lc)) in p.layers.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.layers[li];

        // Feed-forward sub-block.
        let mut dff = dx.clone();
        apply_mask(&mut dff, &lc.drop2);
        sum_rows(&dff, &mut g.b2.data);
        matmul_at_b_acc(&lc.act, &dff, &mut g.w2.data, t, f, d);
        let mut dpre = vec![0.0; t * f];
        matmul_a_bt_acc(&dff, &lp.w2.data, &mut dpre, t, d, f);
        dpre.iter_mut().zip(&lc.pre).for_each(|(g, &u)| *g *= gelu_grad(u));
        sum_rows(&dpre, &mut g.b1.data);
        matmul_at_b_acc(&lc.h2, &dpre, &mut g.w1.data, t, d, f);
        let mut dh2 = vec![0.0; t * d];
        matmul_a_bt_acc(&dpre, &lp.w1.data, &mut dh2, t, f, d);
        let dmid = layer_norm_backward(&dh2, &lc.ln2, &lp.ln2_g.data, &mut g.ln2_g.data, &mut g.ln2_b.data, d);
        dx.iter_mut().zip(&dmid).for_each(|(a, b)| *a += b);

        // Attention sub-block.
        let mut do_ = dx.clone();
        apply_mask(&mut do_, &lc.drop1);
        sum_rows(&do_, &mut g.bo.data);
        matmul_at_b_acc(&lc.attn, &do_, &mut g.wo.data, t, d, d);
        let mut dattn = vec![0.0; t * d];
        matmul_a_bt_acc(&do_, &lp.wo.data, &mut dattn, t, d, d);

        let mut dq = vec![0.0; t * d];
        let mut dk = vec![0.0; t * d];
        let mut dv = vec![0.0; t * d];
        let mut dp = vec![0.0; t];
        for h in 0..nh {
            let off = h * dh;
            for i in 0..t {
                let prow = &lc.probs[(h * t + i) * t..(h * t + i + 1) * t];
                let da = &dattn[i * d + off..i * d + off + dh];
                for j in 0..t {
                    dp[j] = dot(da, &lc.v[j * d + off..j * d + off + dh]);
                    axpy(prow[j], da, &mut dv[j * d + off..j * d + off + dh]);
                }
                let inner = dot(prow, &dp);
                for j in 0..t {
                    let ds = prow[j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    axpy(ds, &lc.k[j * d + off..j * d + off + dh], &mut dq[i * d + off..i * d + off + dh]);
                    axpy(ds, &lc.q[i * d + off..i * d + off + dh], &mut dk[j * d + off..j * d + off + dh]);
                }
            }
        }
        sum_rows(&dq, &mut g.bq.data);
        sum_rows(&dk, &mut g.bk.data);
        sum_rows(&dv, &mut g.bv.data);
        matmul_at_b_acc(&lc.h1, &dq, &mut g.wq.data, t, d, d);
        matmul_at_b_acc(&lc.h1, &dk, &mut g.wk.data, t, d, d);
        matmul_at_b_acc(&lc.h1, &dv, &mut g.wv.data, t, d, d);
        let mut dh1 = vec![0.0; t * d];
        matmul_a_bt_acc(&dq, &lp.wq.data, &mut dh1, t, d, d);
        matmul_a_bt_acc(&dk, &lp.wk.data, &mut dh1, t, d, d);
        matmul_a_bt_acc(&dv, &lp.wv.data, &mut dh1, t, d, d);
        let din = layer_norm_backward(&dh1, &lc.ln1, &lp.ln1_g.data, &mut g.ln1_g.data, &mut g.ln1_b.data, d);
        dx.iter_mut().zip(&din).for_each(|(a, b)| *a += b);
        let _ = &lc.x_in;
    }

    apply_mask(&mut dx, &cache.drop0);
    for (i, &id) in cache.ids.iter().enumerate() {
        let row = &dx[i * d..(i + 1) * d];
        axpy(1.0, row, grads.tok_emb.row_mut(id as usize));
        axpy(1.0, row, grads.pos_emb.row_mut(i));
    }
}

fn lm_logits(p: &ModelParams, z: &[f64]) -> Vec<f64> {
    let e = p.output_embedding();
    (0..p.config.vocab_size).map(|v| dot(z, e.row(v)) + p.lm_bias.data[v]).collect()
}

/// CE at one position; accumulates `scale`-weighted gradients. Returns the CE.
fn lm_position(p: &ModelParams, z: &[f64], target: u32, scale: f64, dz: &mut [f64], grads: &mut ModelParams) -> f64 {
    let mut logits = lm_logits(p, z);
    let ce = logsumexp(&logits) - logits[target as usize];
    softmax_inplace(&mut logits);
    logits[target as usize] -= 1.0;
    let e = p.output_embedding();
    for (v, &g) in logits.iter().enumerate() {
        let g = g * scale;
        grads.lm_bias.data[v] += g;
        axpy(g, e.row(v), dz);
    }
    let out = match &mut grads.lm_head {
        Some(h) => h,
        None => &mut grads.tok_emb,
    };
    for (v, &g) in logits.iter().enumerate() {
        axpy(g * scale, z, out.row_mut(v));
    }
    ce
}

fn nsp_logits(p: &ModelParams, z0: &[f64]) -> Option<[f64; 2]> {
    let (w, b) = (p.nsp_w.as_ref()?, p.nsp_b.as_ref()?);
    let mut out = [b.data[0], b.data[1]];
    for (j, &zv) in z0.iter().enumerate() {
        out[0] += zv * w.data[j * 2];
        out[1] += zv * w.data[j * 2 + 1];
    }
    Some(out)
}

fn validate_example(p: &ModelParams, ex: &Example) -> Result<()> {
    check_ids(p, &ex.ids)?;
    if ex.lm_targets.len() != ex.ids.len() {
        return Err(Error::Shape(format!("{} targets for {} ids", ex.lm_targets.len(), ex.ids.len())));
    }
    if ex.lm_targets.iter().flatten().any(|&y| y as usize >= p.config.vocab_size) {
        return Err(Error::precondition("LM target outside vocabulary"));
    }
    Ok(())
}

/// Combined objective and exact gradients over a batch:
/// `self_weight · L_self + Σ_rows objective(pooled_row)`, where `L_self` is the
/// mean LM cross-entropy over every target position in the batch (plus the
/// mean NSP cross-entropy when the head exists and rows carry NSP labels).
///
/// Rows are processed in order and each row's contribution is added to the
/// gradient accumulator in turn. `dropout_seed` enables dropout with a stream
/// per row; `None` is the deterministic (gradient-check / inference) mode.
pub fn loss_and_grad(
    p: &ModelParams,
    batch: &[Example],
    self_weight: f64,
    mut objective: Option<&mut dyn PooledObjective>,
    dropout_seed: Option<u64>,
) -> Result<(LossParts, ModelParams)> {
    for ex in batch {
        validate_example(p, ex)?;
    }
    let d = p.config.d_model;
    let n_targets: usize = batch.iter().map(Example::n_targets).sum();
    let n_nsp = if p.nsp_w.is_some() { batch.iter().filter(|e| e.nsp_label.is_some()).count() } else { 0 };
    let lm_scale = if n_targets > 0 { self_weight / n_targets as f64 } else { 0.0 };
    let nsp_scale = if n_nsp > 0 { self_weight / n_nsp as f64 } else { 0.0 };

    let mut grads = p.zeros_like();
    let (mut ce_sum, mut nsp_sum, mut pooled_loss) = (0.0, 0.0, 0.0);
    for (row, ex) in batch.iter().enumerate() {
        let mut rng = dropout_seed.map(|s| seed::rng(s, "dropout", &[row as u64]));
        let cache = forward_seq(p, &ex.ids, rng.as_mut())?;
        let t = cache.len();
        let mut dz = vec![0.0; t * d];
        for (pos, target) in ex.lm_targets.iter().enumerate() {
            if let Some(y) = *target {
                let z = &cache.hidden[pos * d..(pos + 1) * d];
                ce_sum += lm_position(p, z, y, lm_scale, &mut dz[pos * d..(pos + 1) * d], &mut grads);
            }
        }
        if let (Some(label), Some(logits)) = (ex.nsp_label, nsp_logits(p, &cache.hidden[..d])) {
            let y = usize::from(label);
            let lse = logsumexp(&logits);
            nsp_sum += lse - logits[y];
            let mut probs = logits;
            softmax_inplace(&mut probs);
            probs[y] -= 1.0;
            let (gw, gb) = (grads.nsp_w.as_mut().unwrap(), grads.nsp_b.as_mut().unwrap());
            let w = p.nsp_w.as_ref().unwrap();
            for k in 0..2 {
                let g = probs[k] * nsp_scale;
                gb.data[k] += g;
                for j in 0..d {
                    gw.data[j * 2 + k] += g * cache.hidden[j];
                    dz[j] += g * w.data[j * 2 + k];
                }
            }
        }
        if let Some(obj) = objective.as_deref_mut() {
            let pooled = cache.pooled(p.config.variant);
            let mut dp = vec![0.0; d];
            pooled_loss += obj.loss_grad(row, &pooled, &mut dp);
            match p.config.variant {
                Variant::Encoder => {
                    let share = 1.0 / t as f64;
                    for r in dz.chunks_exact_mut(d) {
                        axpy(share, &dp, r);
                    }
                }
                Variant::Decoder => axpy(1.0, &dp, &mut dz[(t - 1) * d..]),
            }
        }
        backward_seq(p, &cache, &dz, &mut grads);
    }
    let mut self_loss = if n_targets > 0 { ce_sum / n_targets as f64 } else { 0.0 };
    if n_nsp > 0 {
        self_loss += nsp_sum / n_nsp as f64;
    }
    let parts = LossParts { self_loss, pooled_loss, total: self_weight * self_loss + pooled_loss, n_targets };
    Ok((parts, grads))
}

/// Deterministic gradients of the combined objective (no dropout).
pub fn backward(
    p: &ModelParams,
    batch: &[Example],
    self_weight: f64,
    objective: Option<&mut dyn PooledObjective>,
) -> Result<ModelParams> {
    Ok(loss_and_grad(p, batch, self_weight, objective, None)?.1)
}

/// Mean self-supervised loss of a batch (no dropout).
pub fn loss_self(p: &ModelParams, batch: &[Example]) -> Result<f64> {
    let has_nsp = p.nsp_w.is_some() && batch.iter().any(|e| e.nsp_label.is_some());
    if batch.iter().map(Example::n_targets).sum::<usize>() == 0 && !has_nsp {
        return Err(Error::precondition("batch has no target positions"));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    let mut nsp = (0.0, 0usize);
    let d = p.config.d_model;
    for ex in batch {
        validate_example(p, ex)?;
        let cache = forward_seq(p, &ex.ids, None)?;
        for (pos, target) in ex.lm_targets.iter().enumerate() {
            if let Some(y) = *target {
                let logits = lm_logits(p, &cache.hidden[pos * d..(pos + 1) * d]);
                total += logsumexp(&logits) - logits[y as usize];
                n += 1;
            }
        }
        if let (Some(label), Some(l)) = (ex.nsp_label, nsp_logits(p, &cache.hidden[..d])) {
            nsp.0 += logsumexp(&l) - l[usize::from(label)];
            nsp.1 += 1;
        }
    }
    let mut loss = if n > 0 { total / n as f64 } else { 0.0 };
    if nsp.1 > 0 {
        loss += nsp.0 / nsp.1 as f64;
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub len: usize,
    /// Vocabulary logits per active position, [T, V].
    pub logits: Vec<f64>,
    /// Final-layer hidden states, [T, d].
    pub hidden: Vec<f64>,
    pub pooled: Vec<f64>,
}

/// Inference forward over encoded sequences (active prefix only; PAD is never read).
pub fn forward(p: &ModelParams, batch: &[TokenSeq]) -> Result<Vec<ForwardOutput>> {
    let d = p.config.d_model;
    batch
        .iter()
        .map(|seq| {
            let cache = forward_seq(p, seq.active(), None)?;
            let logits = cache.hidden.chunks_exact(d).flat_map(|z| lm_logits(p, z)).collect();
            Ok(ForwardOutput { len: seq.len, logits, pooled: cache.pooled(p.config.variant), hidden: cache.hidden })
        })
        .collect()
}

/// Pooled final-layer representation of a text; dropout off, deterministic.
pub fn extract_embedding(p: &ModelParams, vocab: &Vocabulary, text: &str) -> Result<Vec<f64>> {
    let seq = encode(text, vocab, p.config.max_len, p.config.variant.style())?;
    Ok(forward_seq(p, seq.active(), None)?.pooled(p.config.variant))
}
