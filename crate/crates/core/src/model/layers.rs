use rand::Rng;

use crate::autodiff::{Graph, ParamGroup, ParamId, ParameterStore, Real, Var};
use crate::error::Result;

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add_uniform(rng, format!("{name}.w"), group, fan_in, fan_out, fan_in)?;
        let b = if bias {
            Some(store.add_uniform(rng, format!("{name}.b"), group, 1, fan_out, fan_in)?)
        } else {
            None
        };
        Ok(Self { w, b })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = self.b.map(|b| g.param(store, b));
        g.linear(x, w, b)
    }
}

/// `relu(layer_norm(x))`.
pub(crate) fn norm_relu<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let n = g.layer_norm(x);
    g.relu(n)
}

/// Linear, layer norm, relu.
#[derive(Clone, Debug)]
pub(crate) struct LinearNormRelu(pub Linear);

impl LinearNormRelu {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Self> {
        Ok(Self(Linear::new(store, rng, name, group, fan_in, fan_out, true)?))
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let h = self.0.apply(g, store, x)?;
        Ok(norm_relu(g, h))
    }
}

/// Two-layer perceptron: linear, relu, linear.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub l1: Linear,
    pub l2: Linear,
}

impl Mlp {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        hidden: usize,
        fan_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, rng, &format!("{name}.l1"), group, fan_in, hidden, true)?,
            l2: Linear::new(store, rng, &format!("{name}.l2"), group, hidden, fan_out, true)?,
        })
    }

    pub fn apply<T: Real>(&self, g: &mut Graph<T>, store: &ParameterStore<T>, x: Var) -> Result<Var> {
        let h = self.l1.apply(g, store, x)?;
        let h = g.relu(h);
        self.l2.apply(g, store, h)
    }
}

/// Kernel-3 temporal convolution over agent-major row sequences.
#[derive(Clone, Debug)]
pub(crate) struct Conv {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        Ok(Self {
            w: store.add_uniform(rng, format!("{name}.w"), group, 3 * c_in, c_out, 3 * c_in)?,
            b: store.add_uniform(rng, format!("{name}.b"), group, 1, c_out, 3 * c_in)?,
        })
    }

    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        x: Var,
        n_seq: usize,
        stride: usize,
    ) -> Result<Var> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.conv1d(x, w, b, n_seq, stride)
    }
}

/// conv, norm, relu, conv, norm, plus a (projected) shortcut, then relu.
#[derive(Clone, Debug)]
pub(crate) struct ResBlock1d {
    conv1: Conv,
    conv2: Conv,
    down: Option<Linear>,
    stride: usize,
}

impl ResBlock1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParameterStore<T>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        c_in: usize,
        c_out: usize,
        stride: usize,
    ) -> Result<Self> {
        let down = if stride != 1 || c_in != c_out {
            Some(Linear::new(store, rng, &format!("{name}.down"), group, c_in, c_out, false)?)
        } else {
            None
        };
        Ok(Self {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), group, c_in, c_out)?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), group, c_out, c_out)?,
            down,
            stride,
        })
    }

    /// Returns the output and its sequence length.
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParameterStore<T>,
        x: Var,
        n_seq: usize,
        l_in: usize,
    ) -> Result<(Var, usize)> {
        let l_out = (l_in - 1) / self.stride + 1;
        let h = self.conv1.apply(g, store, x, n_seq, self.stride)?;
        let h = norm_relu(g, h);
        let h = self.conv2.apply(g, store, h, n_seq, 1)?;
        let h = g.layer_norm(h);
        let shortcut = match &self.down {
            Some(lin) => {
                let idx: Vec<usize> = (0..n_seq)
                    .flat_map(|s| (0..l_out).map(move |t| s * l_in + t * self.stride))
                    .collect();
                let sub = g.gather_rows(x, &idx)?;
                let p = lin.apply(g, store, sub)?;
                g.layer_norm(p)
            }
            None => x,
        };
        let sum = g.add(h, shortcut)?;
        Ok((g.relu(sum), l_out))
    }
}
