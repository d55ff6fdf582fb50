//! Small dense MLPs and the Hadamard interaction scorer.
//!
//! `score(q, x) = head(member(q) * item(x))` where `*` is elementwise. The
//! member branch runs once per query, the item branch once per item. A
//! zero-layer MLP is the identity, and an identity head sums its input, so
//! the all-identity configuration reduces exactly to the dot product.

use super::{dot, Matrix, PreparedScorer, QueryVector, Scorer};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
}

#[derive(Clone, Debug)]
pub struct Layer {
    /// out_dim x in_dim.
    pub weight: Matrix,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

impl Layer {
    pub fn new(weight: Matrix, bias: Vec<f32>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::BadWeights {
                name: "<layer>".into(),
                reason: format!("bias len {} vs {} output rows", bias.len(), weight.rows()),
            });
        }
        Ok(Layer { weight, bias, activation })
    }

    fn forward(&self, x: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.weight.rows());
        for r in 0..self.weight.rows() {
            let mut v = dot(self.weight.row(r), x) + self.bias[r];
            if self.activation == Activation::Relu && v < 0.0 {
                v = 0.0;
            }
            out.push(v);
        }
        out
    }
}

/// Feed-forward stack. Zero layers means identity.
#[derive(Clone, Debug, Default)]
pub struct Mlp {
    layers: Vec<Layer>,
}

impl Mlp {
    pub fn identity() -> Self {
        Mlp { layers: Vec::new() }
    }

    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        for w in layers.windows(2) {
            if w[1].weight.cols() != w[0].weight.rows() {
                return Err(Error::BadWeights {
                    name: "<mlp>".into(),
                    reason: format!(
                        "layer input {} vs previous output {}",
                        w[1].weight.cols(),
                        w[0].weight.rows()
                    ),
                });
            }
        }
        Ok(Mlp { layers })
    }

    pub fn is_identity(&self) -> bool {
        self.layers.is_empty()
    }

    /// Required input width, None when identity (any width).
    pub fn in_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.weight.cols())
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        self.layers.last().map_or(in_dim, |l| l.weight.rows())
    }

    pub fn check_input(&self, in_dim: usize, what: &str) -> Result<()> {
        match self.in_dim() {
            Some(d) if d != in_dim => Err(Error::BadWeights {
                name: what.into(),
                reason: format!("expects input {d}, got {in_dim}"),
            }),
            _ => Ok(()),
        }
    }

    pub fn forward(&self, x: &[f32]) -> Vec<f32> {
        let mut cur = x.to_vec();
        for layer in &self.layers {
            cur = layer.forward(&cur);
        }
        cur
    }
}

/// The three branches of the Hadamard scorer.
#[derive(Clone, Debug)]
pub struct HadamardMlp {
    pub member: Mlp,
    pub item: Mlp,
    pub head: Mlp,
}

impl HadamardMlp {
    /// Identity branches everywhere: equivalent to the dot product.
    pub fn identity() -> Self {
        HadamardMlp { member: Mlp::identity(), item: Mlp::identity(), head: Mlp::identity() }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.member.check_input(dim, "member")?;
        self.item.check_input(dim, "item")?;
        let m_out = self.member.out_dim(dim);
        let i_out = self.item.out_dim(dim);
        if m_out != i_out {
            return Err(Error::BadWeights {
                name: "head".into(),
                reason: format!("member outputs {m_out}, item outputs {i_out}"),
            });
        }
        self.head.check_input(m_out, "head")?;
        if !self.head.is_identity() && self.head.out_dim(m_out) != 1 {
            return Err(Error::BadWeights {
                name: "head".into(),
                reason: format!("must output a scalar, outputs {}", self.head.out_dim(m_out)),
            });
        }
        Ok(())
    }

    /// Loads branches under the `member.*`, `item.*`, `head.*` prefixes.
    /// Missing prefixes load as identity.
    pub fn from_weights(tensors: &super::weights::TensorMap) -> Result<Self> {
        Ok(HadamardMlp {
            member: super::weights::mlp_from_weights(tensors, "member")?,
            item: super::weights::mlp_from_weights(tensors, "item")?,
            head: super::weights::mlp_from_weights(tensors, "head")?,
        })
    }

    fn finish(&self, hadamard: &[f32]) -> f32 {
        if self.head.is_identity() {
            hadamard.iter().sum()
        } else {
            self.head.forward(hadamard)[0]
        }
    }

    pub fn score_one(&self, query: &[f32], item: &[f32]) -> f32 {
        let m = self.member.forward(query);
        let i = self.item.forward(item);
        let h: Vec<f32> = m.iter().zip(&i).map(|(a, b)| a * b).collect();
        self.finish(&h)
    }
}

pub struct HadamardMlpScorer {
    model: HadamardMlp,
}

impl HadamardMlpScorer {
    pub fn new(model: HadamardMlp) -> Self {
        HadamardMlpScorer { model }
    }
}

struct PreparedHadamard<'a> {
    model: &'a HadamardMlp,
    member_out: Vec<f32>,
}

impl PreparedScorer for PreparedHadamard<'_> {
    fn score(&self, item: &[f32]) -> f32 {
        let i = self.model.item.forward(item);
        debug_assert_eq!(self.member_out.len(), i.len());
        let h: Vec<f32> = self.member_out.iter().zip(&i).map(|(a, b)| a * b).collect();
        self.model.finish(&h)
    }
}

impl Scorer for HadamardMlpScorer {
    fn name(&self) -> &'static str {
        "hadamard_mlp"
    }

    fn prepare<'a>(&'a self, q: &QueryVector<'_>) -> Result<Box<dyn PreparedScorer + 'a>> {
        self.model.validate(q.embedding.len())?;
        Ok(Box::new(PreparedHadamard {
            model: &self.model,
            member_out: self.model.member.forward(q.embedding),
        }))
    }
}
