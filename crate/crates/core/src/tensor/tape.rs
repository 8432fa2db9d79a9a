use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::layer::LayerSpec;
use super::loss::{anomaly_score, anomaly_score_grad, huber_grad, huber_loss, mean_abs_diff, sign0};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a tensor recorded on a [`GradientTape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Layer {
        spec: LayerSpec,
        input: Var,
        params: Option<(Var, Var)>,
    },
    Huber {
        x: Var,
        x_hat: Var,
        beta: f64,
    },
    AnomalyScore {
        x: Var,
        x_hat: Var,
    },
    MeanAbsDiff(Var, Var),
    MeanSquaredDiff(Var, Var),
    Sum(Var),
    Add(Var, Var),
    Scale(Var, f64),
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations.
///
/// Leaves may borrow their tensors (model parameters are typically shared
/// read-only across many tapes). A tape is single-threaded; independent
/// tapes may run concurrently over the same borrowed parameters.
#[derive(Debug)]
pub struct GradientTape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for GradientTape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> GradientTape<'a> {
    pub fn new() -> Self {
        GradientTape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn node(&self, var: Var) -> Result<&Node<'a>> {
        if var.tape != self.id {
            return Err(Error::Usage("variable belongs to a different tape".into()));
        }
        self.nodes
            .get(var.index)
            .ok_or_else(|| Error::Usage("variable not on tape".into()))
    }

    fn needs(&self, vars: &[Var]) -> Result<bool> {
        let mut any = false;
        for &v in vars {
            any |= self.node(v)?.requires_grad;
        }
        Ok(any)
    }

    /// Record an owned leaf tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    /// Record a borrowed leaf tensor without copying it.
    pub fn leaf_ref(&mut self, value: &'a Tensor, requires_grad: bool) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, var: Var) -> Result<&Tensor> {
        Ok(&self.node(var)?.value)
    }

    /// Apply a layer to `input` and record it.
    pub fn forward_layer(
        &mut self,
        spec: &LayerSpec,
        params: Option<(Var, Var)>,
        input: Var,
    ) -> Result<Var> {
        let out = {
            let x = self.value(input)?;
            let p = match params {
                Some((w, b)) => Some((self.value(w)?, self.value(b)?)),
                None => None,
            };
            spec.forward(p, x)?
        };
        let mut deps = vec![input];
        if let Some((w, b)) = params {
            deps.extend([w, b]);
        }
        let rg = self.needs(&deps)?;
        Ok(self.push(
            Cow::Owned(out),
            Op::Layer {
                spec: *spec,
                input,
                params,
            },
            rg,
        ))
    }

    fn scalar_node(&mut self, value: f64, op: Op, deps: &[Var]) -> Result<Var> {
        let rg = self.needs(deps)?;
        let t = Tensor::scalar(value)?;
        Ok(self.push(Cow::Owned(t), op, rg))
    }

    pub fn huber(&mut self, x: Var, x_hat: Var, beta: f64) -> Result<Var> {
        let v = huber_loss(self.value(x)?, self.value(x_hat)?, beta)?;
        self.scalar_node(v, Op::Huber { x, x_hat, beta }, &[x, x_hat])
    }

    pub fn anomaly_score(&mut self, x: Var, x_hat: Var) -> Result<Var> {
        let v = anomaly_score(self.value(x)?, self.value(x_hat)?)?;
        self.scalar_node(v, Op::AnomalyScore { x, x_hat }, &[x, x_hat])
    }

    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = mean_abs_diff(self.value(a)?, self.value(b)?)?;
        self.scalar_node(v, Op::MeanAbsDiff(a, b), &[a, b])
    }

    /// Mean of `(a - b)^2` over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a)?, self.value(b)?);
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mse", ta.shape(), tb.shape()));
        }
        let v = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / ta.len() as f64;
        self.scalar_node(v, Op::MeanSquaredDiff(a, b), &[a, b])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a)?.sum();
        self.scalar_node(v, Op::Sum(a), &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a)?.zip_map(self.value(b)?, |x, y| x + y)?;
        let rg = self.needs(&[a, b])?;
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = self.value(a)?.map(|x| x * factor)?;
        let rg = self.needs(&[a])?;
        Ok(self.push(Cow::Owned(out), Op::Scale(a, factor), rg))
    }

    /// Reverse pass from a scalar `loss`. Every recorded operation is
    /// visited at most once, newest first.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if root.requires_grad {
            grads[loss.index] = Some(vec![1.0]);
        }

        for index in (0..=loss.index).rev() {
            let node = &self.nodes[index];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[index].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[index] = Some(g);
        }

        let mut out = Vec::with_capacity(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(grads) {
            let t = match (node.requires_grad, g) {
                (false, _) => None,
                (true, Some(data)) => {
                    let t = Tensor::from_parts(node.value.shape().to_vec(), data);
                    t.ensure_finite("gradient")?;
                    Some(t)
                }
                (true, None) => Some(Tensor::zeros(node.value.shape())),
            };
            out.push(t);
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn propagate(&self, node: &Node<'a>, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let wants = |v: Var| self.nodes[v.index].requires_grad;
        let upstream = g[0];
        match &node.op {
            Op::Leaf => {}
            Op::Layer {
                spec,
                input,
                params,
            } => {
                let x = &self.nodes[input.index].value;
                let p = params.map(|(w, b)| {
                    (
                        self.nodes[w.index].value.as_ref(),
                        self.nodes[b.index].value.as_ref(),
                    )
                });
                let need_params = params.is_some_and(|(w, b)| wants(w) || wants(b));
                let grad_out = Tensor::from_parts(node.value.shape().to_vec(), g.to_vec());
                let (dx, dp) = spec.backward(p, x, &node.value, &grad_out, wants(*input), need_params);
                if let Some(dx) = dx {
                    accumulate(grads, *input, dx.data(), 1.0);
                }
                if let (Some((dw, db)), Some((w, b))) = (dp, params) {
                    if wants(*w) {
                        accumulate(grads, *w, dw.data(), 1.0);
                    }
                    if wants(*b) {
                        accumulate(grads, *b, db.data(), 1.0);
                    }
                }
            }
            Op::Huber { x, x_hat, beta } => {
                let d = huber_grad(&self.nodes[x.index].value, &self.nodes[x_hat.index].value, *beta);
                self.pair_grads(grads, *x, *x_hat, &d, upstream);
            }
            Op::AnomalyScore { x, x_hat } => {
                let d = anomaly_score_grad(&self.nodes[x.index].value, &self.nodes[x_hat.index].value);
                self.pair_grads(grads, *x, *x_hat, &d, upstream);
            }
            Op::MeanAbsDiff(a, b) => {
                let (ta, tb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                let m = ta.len() as f64;
                let d: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| sign0(x - y) / m)
                    .collect();
                self.pair_grads(grads, *a, *b, &d, upstream);
            }
            Op::MeanSquaredDiff(a, b) => {
                let (ta, tb) = (&self.nodes[a.index].value, &self.nodes[b.index].value);
                let m = ta.len() as f64;
                let d: Vec<f64> = ta
                    .data()
                    .iter()
                    .zip(tb.data())
                    .map(|(x, y)| 2.0 * (x - y) / m)
                    .collect();
                self.pair_grads(grads, *a, *b, &d, upstream);
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let n = self.nodes[a.index].value.len();
                    accumulate(grads, *a, &vec![upstream; n], 1.0);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if wants(v) {
                        accumulate(grads, v, g, 1.0);
                    }
                }
            }
            Op::Scale(a, factor) => {
                if wants(*a) {
                    accumulate(grads, *a, g, *factor);
                }
            }
        }
    }

    /// Route `d` (the derivative w.r.t. the first argument of a symmetric
    /// difference loss) to both arguments.
    fn pair_grads(&self, grads: &mut [Option<Vec<f64>>], a: Var, b: Var, d: &[f64], upstream: f64) {
        if self.nodes[a.index].requires_grad {
            accumulate(grads, a, d, upstream);
        }
        if self.nodes[b.index].requires_grad {
            accumulate(grads, b, d, -upstream);
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], var: Var, d: &[f64], factor: f64) {
    match &mut grads[var.index] {
        Some(acc) => {
            for (a, &v) in acc.iter_mut().zip(d) {
                *a += factor * v;
            }
        }
        slot @ None => {
            *slot = Some(d.iter().map(|&v| factor * v).collect());
        }
    }
}

/// Result of [`GradientTape::backward`].
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`.
    pub fn get(&self, var: Var) -> Result<&Tensor> {
        if var.tape != self.tape {
            return Err(Error::Usage("variable belongs to a different tape".into()));
        }
        match self.grads.get(var.index) {
            Some(Some(g)) => Ok(g),
            Some(None) => Err(Error::Usage("variable was not marked as requiring gradient".into())),
            None => Err(Error::Usage("variable not on tape".into())),
        }
    }

    /// Move the gradient out, leaving the slot empty.
    pub fn take(&mut self, var: Var) -> Result<Tensor> {
        self.get(var)?;
        Ok(self.grads[var.index].take().expect("checked"))
    }
}
