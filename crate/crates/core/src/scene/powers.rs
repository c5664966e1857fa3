use std::collections::BTreeMap;

use super::LaneGraph;
use crate::error::{Error, Result};

/// Square boolean matrix with bit-packed rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BoolMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BoolMatrix {
    pub fn zeros(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i);
        }
        m
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut m = Self::zeros(n);
        for &(i, j) in edges {
            m.set(i, j);
        }
        m
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    /// Boolean product: `(i,j)` set iff some `l` has `self[i,l]` and `other[l,j]`.
    pub fn product(&self, other: &BoolMatrix) -> BoolMatrix {
        assert_eq!(self.n, other.n);
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for (w, &word) in self.row(i).iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    let l = w * 64 + word.trailing_zeros() as usize;
                    word &= word - 1;
                    let src = other.row(l);
                    let dst = &mut out.bits[i * out.words..(i + 1) * out.words];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d |= s;
                    }
                }
            }
        }
        out
    }

    pub fn power(&self, k: usize) -> BoolMatrix {
        let mut result = Self::identity(self.n);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = result.product(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.product(&base);
            }
        }
        result
    }

    /// Set entries in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for (w, &word) in self.row(i).iter().enumerate() {
                let mut word = word;
                while word != 0 {
                    out.push((i, w * 64 + word.trailing_zeros() as usize));
                    word &= word - 1;
                }
            }
        }
        out
    }
}

/// Exactly-`k`-hop reachability along `pre` and `suc`, as sorted edge lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdjacencyPowers {
    pub pre: BTreeMap<usize, Vec<(usize, usize)>>,
    pub suc: BTreeMap<usize, Vec<(usize, usize)>>,
}

pub fn adjacency_powers(graph: &LaneGraph, dilations: &[usize]) -> Result<AdjacencyPowers> {
    if dilations.windows(2).any(|w| w[0] >= w[1]) || dilations.first() == Some(&0) {
        return Err(Error::invalid(
            "adjacency_powers",
            format!("dilations must be positive and strictly ascending, got {dilations:?}"),
        ));
    }
    let m = graph.num_nodes();
    let pre = BoolMatrix::from_edges(m, &graph.adjacency.pre);
    let suc = BoolMatrix::from_edges(m, &graph.adjacency.suc);
    let mut out = AdjacencyPowers::default();
    let (mut pre_k, mut suc_k, mut at) = (BoolMatrix::identity(m), BoolMatrix::identity(m), 0);
    for &k in dilations {
        pre_k = pre_k.product(&pre.power(k - at));
        suc_k = suc_k.product(&suc.power(k - at));
        at = k;
        out.pre.insert(k, pre_k.edges());
        out.suc.insert(k, suc_k.edges());
    }
    Ok(out)
}
