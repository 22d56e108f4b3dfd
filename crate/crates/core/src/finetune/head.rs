use serde::{Deserialize, Serialize};

use crate::corpus::{Label, TaskId, TaskKind};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::ops::{axpy, logsumexp, matmul_acc, sigmoid, softmax_inplace};
use crate::tensor::Tensor;

/// Fully connected layer, weights stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Tensor,
    pub b: Tensor,
}

impl Dense {
    fn input_dim(&self) -> usize {
        self.w.shape[0]
    }

    fn output_dim(&self) -> usize {
        self.w.shape[1]
    }
}

/// Feed-forward head on a pooled representation: ReLU hidden layers and an
/// identity output layer sized by the task kind.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHead {
    pub task: TaskId,
    pub layers: Vec<Dense>,
}

/// Shape description stored in checkpoint headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: TaskId,
    /// `[input, hidden.., output]`
    pub dims: Vec<usize>,
}

pub fn output_dim(kind: TaskKind) -> usize {
    match kind {
        TaskKind::BinaryClassification | TaskKind::Regression => 1,
        TaskKind::MultiClass { classes } => classes,
    }
}

impl TaskHead {
    /// He-scaled Gaussian weights, zero biases. The stream depends on
    /// `(seed, task name)` only, so a head's init does not depend on which
    /// other heads exist.
    pub fn new(task: TaskId, input: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input == 0 || hidden.contains(&0) {
            return Err(Error::field("head_hidden", "layer widths must be positive"));
        }
        if let TaskKind::MultiClass { classes } = task.kind {
            if classes < 2 {
                return Err(Error::field("classes", "a multi-class task needs at least 2 classes"));
            }
        }
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output_dim(task.kind));
        let mut rng = seed::rng(seed, "task-head", &[seed::hash_str(&task.name)]);
        let layers = dims
            .windows(2)
            .map(|io| Dense {
                w: Tensor::gaussian(&[io[0], io[1]], (2.0 / io[0] as f64).sqrt(), &mut rng),
                b: Tensor::zeros(&[io[1]]),
            })
            .collect();
        Ok(TaskHead { task, layers })
    }

    pub fn spec(&self) -> HeadSpec {
        let mut dims = vec![self.layers[0].input_dim()];
        dims.extend(self.layers.iter().map(Dense::output_dim));
        HeadSpec { task: self.task.clone(), dims }
    }

    pub fn from_spec(spec: &HeadSpec) -> Result<Self> {
        if spec.dims.len() < 2 || spec.dims.last() != Some(&output_dim(spec.task.kind)) {
            return Err(Error::Shape(format!("head `{}` dims {:?} do not fit its task kind", spec.task.name, spec.dims)));
        }
        let layers =
            spec.dims.windows(2).map(|io| Dense { w: Tensor::zeros(&[io[0], io[1]]), b: Tensor::zeros(&[io[1]]) }).collect();
        Ok(TaskHead { task: spec.task.clone(), layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn zeros_like(&self) -> Self {
        TaskHead {
            task: self.task.clone(),
            layers: self.layers.iter().map(|l| Dense { w: l.w.zeros_like(), b: l.b.zeros_like() }).collect(),
        }
    }

    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("heads.{}.{i}.w", self.task.name), &l.w));
            out.push((format!("heads.{}.{i}.b", self.task.name), &l.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.w, &mut l.b]).collect()
    }

    /// Raw outputs (logit, class logits, or regression value).
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).0
    }

    /// Returns the output and the input to every layer.
    pub(crate) fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let mut acts = vec![x.to_vec()];
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut out = l.b.data.clone();
            matmul_acc(&h, &l.w.data, &mut out, 1, l.input_dim(), l.output_dim());
            if i + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                acts.push(out.clone());
            }
            h = out;
        }
        (h, acts)
    }

    /// Accumulates parameter gradients into `grads`; returns d(input).
    pub(crate) fn backward(&self, acts: &[Vec<f64>], dout: &[f64], grads: &mut TaskHead) -> Vec<f64> {
        let mut d = dout.to_vec();
        for i in (0..self.layers.len()).rev() {
            let (l, g) = (&self.layers[i], &mut grads.layers[i]);
            let input = &acts[i];
            axpy(1.0, &d, &mut g.b.data);
            for (r, &xv) in input.iter().enumerate() {
                axpy(xv, &d, g.w.row_mut(r));
            }
            let mut dx: Vec<f64> = (0..l.input_dim()).map(|r| crate::tensor::ops::dot(l.w.row(r), &d)).collect();
            if i > 0 {
                dx.iter_mut().zip(input).for_each(|(g, &a)| {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                });
            }
            d = dx;
        }
        d
    }

    /// Task-space prediction: P(positive), class probabilities, or the value.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let mut out = self.forward(x);
        match self.task.kind {
            TaskKind::BinaryClassification => vec![sigmoid(out[0])],
            TaskKind::MultiClass { .. } => {
                softmax_inplace(&mut out);
                out
            }
            TaskKind::Regression => out,
        }
    }
}

/// Binary cross-entropy on a probability, with `0·ln 0 = 0`.
pub fn bce(p: f64, y: f64) -> f64 {
    let term = |w: f64, q: f64| if w == 0.0 { 0.0 } else { -w * q.ln() };
    term(y, p) + term(1.0 - y, 1.0 - p)
}

/// Loss of raw head outputs against a label and its gradient w.r.t. the
/// outputs: BCE-with-logits (binary), softmax CE (multi-class), squared error
/// (regression). `None` for `Missing`.
pub fn task_loss(kind: TaskKind, out: &[f64], label: &Label) -> Option<(f64, Vec<f64>)> {
    let y = label.target()?;
    Some(match kind {
        TaskKind::BinaryClassification => {
            let z = out[0];
            // softplus(z) - y z, computed stably.
            let loss = z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z;
            (loss, vec![sigmoid(z) - y])
        }
        TaskKind::MultiClass { .. } => {
            let c = y as usize;
            let loss = logsumexp(out) - out[c];
            let mut g = out.to_vec();
            softmax_inplace(&mut g);
            g[c] -= 1.0;
            (loss, g)
        }
        TaskKind::Regression => {
            let r = out[0] - y;
            (r * r, vec![2.0 * r])
        }
    })
}

/// Check every label of `labels` is valid for `task.kind`.
pub fn check_labels(task: &TaskId, labels: &[Label]) -> Result<()> {
    let ok = |l: &Label| match (task.kind, l) {
        (_, Label::Missing) => true,
        (TaskKind::BinaryClassification, Label::Negative | Label::Positive) => true,
        (TaskKind::MultiClass { classes }, Label::Class(c)) => (*c as usize) < classes,
        (TaskKind::Regression, Label::Value(v)) => v.is_finite(),
        _ => false,
    };
    match labels.iter().position(|l| !ok(l)) {
        Some(i) => Err(Error::Parse { line: i + 1, reason: format!("label {:?} does not fit task `{}`", labels[i], task.name) }),
        None => Ok(()),
    }
}
