//! A small reverse-mode tape over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list is a valid topological order for backpropagation.

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeom, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        geom: ConvGeom,
    },
    LeakyRelu {
        input: Var,
        slope: f64,
    },
    Add(Var, Var),
    Concat(Var, Var),
    Upsample2(Var),
    Clamp01(Var),
    /// Scalar whose gradient with respect to `input` was computed alongside
    /// its value.
    Loss {
        input: Var,
        grad: Tensor,
    },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn parameter(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn conv(&mut self, input: Var, weight: Var, bias: Var, geom: ConvGeom) -> Result<Var> {
        let out = tensor::conv3d(self.value(input), self.value(weight), Some(self.value(bias)), &geom)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: f64) -> Var {
        let out = self.value(input).map(|v| if v >= 0.0 { v } else { slope * v });
        let rg = self.needs(&[input]);
        self.push(out, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "cannot add {:?} and {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = tensor::concat_channels(self.value(a), self.value(b))?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat(a, b), rg))
    }

    pub fn upsample2(&mut self, input: Var) -> Var {
        let out = tensor::upsample2(self.value(input));
        let rg = self.needs(&[input]);
        self.push(out, Op::Upsample2(input), rg)
    }

    pub fn clamp01(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|v| v.clamp(0.0, 1.0));
        let rg = self.needs(&[input]);
        self.push(out, Op::Clamp01(input), rg)
    }

    /// Record a scalar loss whose gradient with respect to `input` is already
    /// known.
    pub fn loss(&mut self, input: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.value(input).shape() {
            return Err(Error::Shape(format!(
                "loss gradient {:?} does not match input {:?}",
                grad.shape(),
                self.value(input).shape()
            )));
        }
        let rg = self.needs(&[input]);
        Ok(self.push(Tensor::scalar(value), Op::Loss { input, grad }, rg))
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Var {
        let total = terms.iter().map(|&(v, w)| w * self.value(v).data()[0]).sum();
        let vars: Vec<Var> = terms.iter().map(|t| t.0).collect();
        let rg = self.needs(&vars);
        self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg)
    }

    /// Backpropagate from a scalar `root`, seeding its gradient with 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar root, got {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));

        fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(grad);
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let want_input = self.nodes[input.0].requires_grad;
                    let (gi, gw, gb) =
                        tensor::conv3d_backward(self.value(*input), self.value(*weight), geom, &grad, want_input)?;
                    if let Some(gi) = gi {
                        accumulate(&mut grads, *input, gi);
                    }
                    if self.nodes[weight.0].requires_grad {
                        accumulate(&mut grads, *weight, gw);
                    }
                    if self.nodes[bias.0].requires_grad {
                        accumulate(&mut grads, *bias, gb);
                    }
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.value(*input);
                    let mut g = grad;
                    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                        if xv < 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::Add(a, b) => {
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, grad.clone());
                    }
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, grad);
                    }
                }
                Op::Concat(a, b) => {
                    let first = self.value(*a).shape()[1];
                    let (ga, gb) = tensor::split_channels(&grad, first);
                    if self.nodes[a.0].requires_grad {
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.nodes[b.0].requires_grad {
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Upsample2(input) => {
                    accumulate(&mut grads, *input, tensor::upsample2_backward(&grad));
                }
                Op::Clamp01(input) => {
                    let x = self.value(*input);
                    let mut g = grad;
                    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                        if !(0.0..=1.0).contains(&xv) {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *input, g);
                }
                Op::Loss { input, grad: local } => {
                    let scale = grad.data()[0];
                    accumulate(&mut grads, *input, local.map(|v| v * scale));
                }
                Op::WeightedSum(terms) => {
                    let upstream = grad.data()[0];
                    for &(v, w) in terms {
                        if self.nodes[v.0].requires_grad {
                            accumulate(&mut grads, v, Tensor::scalar(w * upstream));
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}
