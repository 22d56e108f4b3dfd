//! Finite-difference oracle for the transformer body plus task heads.

use periloom::corpus::{Label, TaskId, TaskKind};
use periloom::finetune::{batch_loss_and_grad, TaskHead};
use periloom::seed;
use periloom::tensor::Tensor;
use periloom::text::TokenSeq;
use periloom::transformer::{forward, ArchConfig, Example, ModelParams, Variant};
use rand::Rng;

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-5;
const SAMPLES: usize = 200;
/// Denominator floor: central differences of an O(1) loss carry ~1e-11 of
/// rounding noise, so gradients below this scale are compared absolutely.
const FLOOR: f64 = 1e-6;

fn jitter(t: &mut Tensor, rng: &mut seed::Rng, sd: f64) {
    for v in &mut t.data {
        *v += sd * seed::gaussian(rng);
    }
}

fn setup(variant: Variant, tied: bool, nsp: bool) -> (ModelParams, Vec<TaskHead>, Vec<Example>, Vec<Vec<Label>>) {
    let cfg = ArchConfig {
        layers: 2,
        d_model: 8,
        heads: 2,
        d_ff: 12,
        max_len: 8,
        tie_embeddings: tied,
        nsp_head: nsp,
        ..ArchConfig::toy(variant, 19, 11)
    };
    let mut p = ModelParams::init(&cfg).unwrap();
    let mut rng = seed::rng(5, "grad-jitter", &[]);
    // Unit-scale embeddings keep layer-norm inputs O(1); tiny residual
    // streams make the loss sharply curved and swamp ε = 1e-4 differences.
    jitter(&mut p.tok_emb, &mut rng, 0.7);
    jitter(&mut p.pos_emb, &mut rng, 0.7);
    for t in p.tensors_mut().into_iter().skip(2) {
        jitter(t, &mut rng, 0.1);
    }
    let heads = vec![
        TaskHead::new(TaskId::binary("dvt"), 8, &[6], 1).unwrap(),
        TaskHead::new(TaskId { name: "stage".into(), kind: TaskKind::MultiClass { classes: 3 } }, 8, &[], 1).unwrap(),
        TaskHead::new(TaskId { name: "los".into(), kind: TaskKind::Regression }, 8, &[5, 4], 1).unwrap(),
    ];
    let mut heads: Vec<TaskHead> = heads
        .into_iter()
        .map(|mut h| {
            for t in h.tensors_mut() {
                jitter(t, &mut rng, 0.2);
            }
            h
        })
        .collect();
    let rows: [&[u32]; 3] = [&[2, 9, 11, 4, 15, 3], &[2, 7, 8, 3], &[2, 18, 4, 12, 10, 16, 9, 3]];
    let batch: Vec<Example> = rows
        .iter()
        .enumerate()
        .map(|(r, ids)| {
            let lm_targets = match variant {
                Variant::Encoder => ids.iter().enumerate().map(|(i, &id)| (i % 2 == 1).then_some((id + r as u32) % 19)).collect(),
                Variant::Decoder => (0..ids.len()).map(|i| ids.get(i + 1).copied()).collect(),
            };
            Example { ids: ids.to_vec(), lm_targets, nsp_label: nsp.then_some(r % 2 == 0) }
        })
        .collect();
    let labels = vec![
        vec![Label::Positive, Label::Missing, Label::Negative],
        vec![Label::Class(2), Label::Class(0), Label::Missing],
        vec![Label::Value(0.4), Label::Value(-1.2), Label::Value(2.0)],
    ];
    let pooled: Vec<Vec<f64>> = batch
        .iter()
        .map(|ex: &Example| {
            let seq = TokenSeq { ids: ex.ids.clone(), attention: vec![1; ex.ids.len()], len: ex.ids.len() };
            forward(&p, &[seq]).unwrap().remove(0).pooled
        })
        .collect();
    for h in &mut heads {
        keep_away_from_kinks(h, &pooled);
    }
    (p, heads, batch, labels)
}

/// Central differences are only valid where the loss is smooth. Shift each
/// ReLU unit's bias so that its pre-activations on this batch sit mid-way in
/// their widest gap, away from the kink at zero.
fn keep_away_from_kinks(head: &mut TaskHead, rows: &[Vec<f64>]) {
    let mut acts: Vec<Vec<f64>> = rows.to_vec();
    let hidden = head.layers.len() - 1;
    for layer in head.layers.iter_mut().take(hidden) {
        let (din, dout) = (layer.w.shape[0], layer.w.shape[1]);
        let pre: Vec<Vec<f64>> = acts
            .iter()
            .map(|a| (0..dout).map(|o| (0..din).map(|i| a[i] * layer.w.data[i * dout + o]).sum()).collect())
            .collect();
        for o in 0..dout {
            let mut v: Vec<f64> = pre.iter().map(|r| r[o]).collect();
            v.sort_by(f64::total_cmp);
            let (gap, mid) = v.windows(2).map(|w| (w[1] - w[0], 0.5 * (w[0] + w[1]))).fold((0.0, v[0] - 0.5), |best, c| if c.0 > best.0 { c } else { best });
            layer.b.data[o] = if gap > 0.2 { -mid } else { 0.5 - v[0] };
        }
        acts = pre
            .iter()
            .map(|r| r.iter().zip(&layer.b.data).map(|(x, b)| (x + b).max(0.0)).collect())
            .collect();
    }
}

fn check(variant: Variant, tied: bool, nsp: bool) {
    let (p, heads, batch, labels) = setup(variant, tied, nsp);
    let weights = [0.7, 1.3, 0.4];
    let loss = |p: &ModelParams, h: &[TaskHead]| batch_loss_and_grad(p, h, &batch, &labels, 1.0, &weights, None).unwrap().0;
    let (_, g_body, g_heads) = batch_loss_and_grad(&p, &heads, &batch, &labels, 1.0, &weights, None).unwrap();

    let mut rng = seed::rng(7, "grad-coords", &[]);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    // Body tensors.
    let names: Vec<String> = p.named().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Tensor> = g_body.named().into_iter().map(|(_, t)| t.clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let n = grads[ti].len();
        let coords: Vec<usize> = if n <= SAMPLES { (0..n).collect() } else { (0..SAMPLES).map(|_| rng.random_range(0..n)).collect() };
        for j in coords {
            let mut plus = p.clone();
            plus.tensors_mut()[ti].data[j] += EPS;
            let mut minus = p.clone();
            minus.tensors_mut()[ti].data[j] -= EPS;
            let fd = (loss(&plus, &heads) - loss(&minus, &heads)) / (2.0 * EPS);
            let an = grads[ti].data[j];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR);
            assert!(rel <= TOL, "{variant:?} {name}[{j}]: analytic {an} vs numeric {fd} (rel {rel})");
            worst = worst.max(rel);
            checked += 1;
        }
    }
    // Head tensors.
    for (hi, head) in heads.iter().enumerate() {
        let gh: Vec<Tensor> = g_heads[hi].named().into_iter().map(|(_, t)| t.clone()).collect();
        for (ti, g) in gh.iter().enumerate() {
            for j in 0..g.len() {
                let mut hp = heads.clone();
                hp[hi].tensors_mut()[ti].data[j] += EPS;
                let mut hm = heads.clone();
                hm[hi].tensors_mut()[ti].data[j] -= EPS;
                let fd = (loss(&p, &hp) - loss(&p, &hm)) / (2.0 * EPS);
                let an = g.data[j];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(FLOOR);
                assert!(rel <= TOL, "head {} tensor {ti}[{j}]: analytic {an} vs numeric {fd}", head.task.name);
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    eprintln!("{variant:?} tied={tied} nsp={nsp}: {checked} coordinates, worst relative error {worst:.2e}");
}

#[test]
fn encoder_tied_with_nsp_matches_finite_differences() {
    check(Variant::Encoder, true, true);
}

#[test]
fn decoder_untied_matches_finite_differences() {
    check(Variant::Decoder, false, false);
}

#[test]
fn decoder_tied_and_encoder_untied_match_finite_differences() {
    check(Variant::Decoder, true, false);
    check(Variant::Encoder, false, false);
}

/// The tied embedding gradient is the input-role gradient plus the output-role
/// gradient; an untied copy with identical values separates the two roles.
#[test]
fn tied_gradient_is_sum_of_both_roles() {
    let (tied, heads, batch, labels) = setup(Variant::Encoder, true, false);
    let mut untied_cfg = tied.config.clone();
    untied_cfg.tie_embeddings = false;
    let mut untied = ModelParams::init(&untied_cfg).unwrap();
    for ((_, src), dst) in tied.named().into_iter().zip(untied.tensors_mut()) {
        *dst = src.clone();
    }
    untied.lm_head = Some(tied.tok_emb.clone());
    let w = [1.0, 1.0, 1.0];
    let (lt, gt, _) = batch_loss_and_grad(&tied, &heads, &batch, &labels, 1.0, &w, None).unwrap();
    let (lu, gu, _) = batch_loss_and_grad(&untied, &heads, &batch, &labels, 1.0, &w, None).unwrap();
    assert_eq!(lt, lu);
    let head = gu.lm_head.as_ref().unwrap();
    for i in 0..gt.tok_emb.len() {
        let sum = gu.tok_emb.data[i] + head.data[i];
        assert!((gt.tok_emb.data[i] - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
    }
}

/// A small step against the gradient lowers the batch loss.
#[test]
fn one_sgd_step_decreases_loss() {
    for variant in [Variant::Encoder, Variant::Decoder] {
        let (p, heads, batch, labels) = setup(variant, true, false);
        let w = [1.0, 1.0, 1.0];
        let (l0, g, gh) = batch_loss_and_grad(&p, &heads, &batch, &labels, 1.0, &w, None).unwrap();
        let mut decreased = false;
        let mut step = 1e-1;
        while step > 1e-8 && !decreased {
            let mut q = p.clone();
            let grads: Vec<Tensor> = g.named().into_iter().map(|(_, t)| t.clone()).collect();
            for (t, gt) in q.tensors_mut().into_iter().zip(&grads) {
                t.data.iter_mut().zip(&gt.data).for_each(|(v, d)| *v -= step * d);
            }
            let mut hq = heads.clone();
            for (h, ghh) in hq.iter_mut().zip(&gh) {
                let gts: Vec<Tensor> = ghh.named().into_iter().map(|(_, t)| t.clone()).collect();
                for (t, gt) in h.tensors_mut().into_iter().zip(&gts) {
                    t.data.iter_mut().zip(&gt.data).for_each(|(v, d)| *v -= step * d);
                }
            }
            let l1 = batch_loss_and_grad(&q, &hq, &batch, &labels, 1.0, &w, None).unwrap().0;
            decreased = l1 < l0;
            step /= 2.0;
        }
        assert!(decreased, "{variant:?}: no step size lowered the loss");
    }
}


