use serde::{Deserialize, Serialize};

use crate::adapter::AdaptedLinear;
use crate::gating::pool_embed;
use crate::numerics::{gaussian_init, silu, Graph, Mat, Rng, Stream, Var};
use crate::{Error, Result};

use super::data::Sample;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneShape {
    pub vocab: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub classes: usize,
}

/// Frozen embedding table, two adapted hidden layers with SiLU, frozen head.
///
/// The model reads the mean-pooled token embedding, the same vector the
/// gating modules see.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyBackbone {
    pub shape: BackboneShape,
    embed: Mat,
    layers: Vec<AdaptedLinear>,
    head: Mat,
}

/// Graph bindings for one adapted layer's branches: `(A, B)` per branch.
pub type BranchVars = Vec<(Var, Var)>;

impl ToyBackbone {
    pub fn random(shape: BackboneShape, seed: u64) -> Self {
        let mut rng = Rng::stream(seed, Stream::Backbone, 0);
        let embed = gaussian_init(&mut rng, shape.vocab, shape.embed_dim, 1.0);
        let w1 = gaussian_init(
            &mut rng,
            shape.hidden,
            shape.embed_dim,
            1.0 / (shape.embed_dim as f64).sqrt(),
        );
        let w2 = gaussian_init(&mut rng, shape.hidden, shape.hidden, 1.0 / (shape.hidden as f64).sqrt());
        let head = gaussian_init(
            &mut rng,
            shape.classes,
            shape.hidden,
            1.0 / (shape.hidden as f64).sqrt(),
        );
        Self {
            shape,
            embed,
            layers: vec![AdaptedLinear::new(w1), AdaptedLinear::new(w2)],
            head,
        }
    }

    pub fn embed(&self) -> &Mat {
        &self.embed
    }

    pub fn head(&self) -> &Mat {
        &self.head
    }

    pub fn layers(&self) -> &[AdaptedLinear] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [AdaptedLinear] {
        &mut self.layers
    }

    pub fn branch_count(&self) -> usize {
        self.layers[0].branches().len()
    }

    pub fn pooled(&self, tokens: &[u32]) -> Result<Vec<f64>> {
        pool_embed(tokens, &self.embed)
    }

    /// n×d matrix of pooled embeddings.
    pub fn pooled_batch<'a>(&self, samples: impl IntoIterator<Item = &'a Sample>) -> Result<Mat> {
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            data.extend(self.pooled(&s.tokens)?);
            n += 1;
        }
        Ok(Mat::from_vec(n, self.shape.embed_dim, data))
    }

    /// Class logits for one token sequence.
    pub fn forward(&self, coeffs: &[f64], tokens: &[u32]) -> Result<Vec<f64>> {
        let x = self.pooled(tokens)?;
        let h1: Vec<f64> = self.layers[0].forward(coeffs, &x)?.into_iter().map(silu).collect();
        let h2: Vec<f64> = self.layers[1].forward(coeffs, &h1)?.into_iter().map(silu).collect();
        Ok(self.head.matvec(&h2))
    }

    /// Batched logits from pooled inputs; `coeffs` is n×t, `None` means all ones.
    pub fn logits_batch(&self, x: &Mat, coeffs: Option<&Mat>) -> Result<Mat> {
        Ok(self.hidden_batch(x, coeffs)?.1.matmul_t(&self.head))
    }

    /// Inputs to each adapted layer, `[x, SiLU(layer₁(x))]`, and the final hidden state.
    pub fn hidden_batch(&self, x: &Mat, coeffs: Option<&Mat>) -> Result<(Vec<Mat>, Mat)> {
        let h1 = self.layers[0].forward_batch(x, coeffs)?.map(silu);
        let h2 = self.layers[1].forward_batch(&h1, coeffs)?.map(silu);
        Ok((vec![x.clone(), h1], h2))
    }

    /// Records the forward pass on `g`.
    ///
    /// `branch_vars[l]` binds every branch of layer `l`; `coeffs[i]` is the
    /// n×1 coefficient node for branch `i`, or `None` for a fixed coefficient of 1.
    pub fn build(&self, g: &mut Graph, x: Var, branch_vars: &[BranchVars], coeffs: &[Option<Var>]) -> Var {
        let mut h = x;
        for (layer, vars) in self.layers.iter().zip(branch_vars) {
            assert_eq!(vars.len(), coeffs.len());
            let w = g.constant(layer.weight().clone());
            let mut e = g.matmul_t(h, w);
            for (&(a, b), coeff) in vars.iter().zip(coeffs) {
                let low = g.matmul_t(h, b);
                let low = g.matmul_t(low, a);
                let low = match coeff {
                    Some(c) => g.mul_col(low, *c),
                    None => low,
                };
                e = g.add(e, low);
            }
            h = g.silu(e);
        }
        let head = g.constant(self.head.clone());
        g.matmul_t(h, head)
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.shape.vocab) {
            Some(&t) => Err(Error::IdOutOfRange {
                id: t as usize,
                vocab: self.shape.vocab,
            }),
            None => Ok(()),
        }
    }

    /// Bit pattern of all frozen backbone parameters.
    pub fn frozen_fingerprint(&self) -> Vec<u64> {
        let mut bits = self.embed.bits();
        for l in &self.layers {
            bits.extend(l.weight().bits());
        }
        bits.extend(self.head.bits());
        bits
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
