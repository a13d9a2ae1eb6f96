//! Graph-building pieces shared by every forward pass.

use std::sync::Arc;

use crate::graph::{AttnLayout, Graph, Var};
use crate::model::layout::{BlockParams, Mlp2};
use crate::params::{GroupSet, ParamStore};
use crate::tensor::Scalar;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Binds parameter tensors into a graph on first use. Parameters outside the
/// trainable set enter as frozen leaves.
pub(crate) struct Binder<'s, T: Scalar> {
    pub g: Graph<T>,
    store: &'s ParamStore<T>,
    vars: Vec<Option<Var>>,
    trainable: GroupSet,
}

impl<'s, T: Scalar> Binder<'s, T> {
    pub fn new(store: &'s ParamStore<T>, trainable: GroupSet) -> Self {
        Self {
            g: Graph::new(),
            store,
            vars: vec![None; store.len()],
            trainable,
        }
    }

    pub fn p(&mut self, id: usize) -> Var {
        if let Some(v) = self.vars[id] {
            return v;
        }
        let param = self.store.get(id);
        let v = self
            .g
            .param(id, param.value.clone(), self.trainable.contains(param.group));
        self.vars[id] = Some(v);
        v
    }

    pub fn linear(&mut self, x: Var, w: usize, b: Option<usize>) -> Var {
        let w = self.p(w);
        let y = self.g.matmul(x, w);
        match b {
            Some(b) => {
                let b = self.p(b);
                self.g.add_row(y, b)
            }
            None => y,
        }
    }

    pub fn mlp2(&mut self, x: Var, m: &Mlp2) -> Var {
        let h = self.linear(x, m.w1, Some(m.b1));
        let h = self.g.silu(h);
        self.linear(h, m.w2, Some(m.b2))
    }

    pub fn norm(&mut self, x: Var, gain: usize) -> Var {
        let g = self.p(gain);
        self.g.rms_norm(x, g, NORM_EPS)
    }

    /// Pre-norm residual block: attention followed by a SiLU-gated feed-forward.
    pub fn block(&mut self, x: Var, bp: &BlockParams, layout: Arc<AttnLayout>, heads: usize) -> Var {
        let n = self.norm(x, bp.attn_norm);
        let q = self.linear(n, bp.wq, None);
        let k = self.linear(n, bp.wk, None);
        let v = self.linear(n, bp.wv, None);
        let a = self.g.attention(q, k, v, layout, heads);
        let o = self.linear(a, bp.wo, None);
        let h = self.g.add(x, o);
        let n2 = self.norm(h, bp.ffn_norm);
        let gate = self.linear(n2, bp.w_gate, None);
        let gate = self.g.silu(gate);
        let up = self.linear(n2, bp.w_up, None);
        let f = self.g.mul(gate, up);
        let f = self.linear(f, bp.w_down, None);
        self.g.add(h, f)
    }
}
