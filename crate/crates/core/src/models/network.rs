//! Fully connected network with exact gradients and Hessian-vector products.
//!
//! Parameters are laid out layer by layer: the row-major `out × in` weight
//! matrix followed by the `out` biases. Logistic regression is the
//! zero-hidden-layer case. Hessian-vector products use Pearlmutter's R-op
//! (forward-over-reverse) so they are exact up to rounding.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// First derivative. ReLU uses 0 at exactly 0.
    fn d1(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    fn d2(self, _z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
        }
    }
}

/// How the per-example loss consumes the network output.
#[derive(Clone, Copy, Debug)]
pub(crate) enum OutputTarget<'a> {
    Class(usize),
    Soft(&'a [f64]),
    Real(f64),
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weights(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }
    pub fn biases(&self) -> std::ops::Range<usize> {
        let s = self.offset + self.fan_in * self.fan_out;
        s..s + self.fan_out
    }
    pub fn len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Network {
    pub layers: Vec<LayerShape>,
    pub activation: Activation,
}

pub(crate) fn layout(dims: &[usize]) -> Vec<LayerShape> {
    let mut offset = 0;
    dims.windows(2)
        .map(|w| {
            let l = LayerShape { fan_in: w[0], fan_out: w[1], offset };
            offset += l.len();
            l
        })
        .collect()
}

/// Per-example scratch buffers, reused across examples.
pub(crate) struct Scratch {
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
    r_pre: Vec<Vec<f64>>,
    r_act: Vec<Vec<f64>>,
    r_delta: Vec<Vec<f64>>,
    tmp: Vec<f64>,
}

impl Network {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::len).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    pub fn scratch(&self) -> Scratch {
        let mk = || self.layers.iter().map(|l| vec![0.0; l.fan_out]).collect::<Vec<_>>();
        Scratch {
            pre: mk(),
            act: mk(),
            delta: mk(),
            r_pre: mk(),
            r_act: mk(),
            r_delta: mk(),
            tmp: Vec::new(),
        }
    }

    fn input_of<'a>(&self, s: &'a Scratch, l: usize, x: &'a [f64]) -> &'a [f64] {
        if l == 0 {
            x
        } else {
            &s.act[l - 1]
        }
    }

    /// Forward pass; returns the output slice (logits or regression output).
    pub fn forward<'s>(&self, theta: &[f64], x: &[f64], s: &'s mut Scratch) -> &'s [f64] {
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let w = &theta[shape.weights()];
            let b = &theta[shape.biases()];
            let mut z = std::mem::take(&mut s.pre[l]);
            {
                let input = self.input_of(s, l, x);
                for (o, zo) in z.iter_mut().enumerate() {
                    let row = &w[o * shape.fan_in..(o + 1) * shape.fan_in];
                    *zo = b[o] + row.iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                }
            }
            if l < last {
                for (a, &zv) in s.act[l].iter_mut().zip(&z) {
                    *a = self.activation.apply(zv);
                }
            } else {
                s.act[l].copy_from_slice(&z);
            }
            s.pre[l] = z;
        }
        &s.act[last]
    }

    /// Loss of one example given the current forward state; also fills the
    /// output-layer delta (dℓ/d output).
    fn loss_and_output_delta(&self, s: &mut Scratch, target: OutputTarget<'_>) -> f64 {
        let last = self.layers.len() - 1;
        let out = &s.act[last];
        let delta = &mut s.delta[last];
        match target {
            OutputTarget::Real(y) => {
                let r = out[0] - y;
                delta[0] = 2.0 * r;
                r * r
            }
            OutputTarget::Class(_) | OutputTarget::Soft(_) => {
                let lse = log_sum_exp(out);
                for (d, &z) in delta.iter_mut().zip(out) {
                    *d = (z - lse).exp();
                }
                match target {
                    OutputTarget::Class(y) => {
                        delta[y] -= 1.0;
                        lse - out[y]
                    }
                    OutputTarget::Soft(q) => {
                        let mut loss = 0.0;
                        for ((d, &z), &qk) in delta.iter_mut().zip(out).zip(q) {
                            *d -= qk;
                            loss -= qk * (z - lse);
                        }
                        loss
                    }
                    OutputTarget::Real(_) => unreachable!(),
                }
            }
        }
    }

    /// Backward pass from the output delta, accumulating `scale · ∂ℓ/∂θ`.
    fn backward(&self, theta: &[f64], x: &[f64], s: &mut Scratch, grad: &mut [f64], scale: f64) {
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            {
                let input = self.input_of(s, l, x);
                let delta = &s.delta[l];
                let gw = &mut grad[shape.weights()];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let sd = scale * d;
                    for (g, &a) in gw[o * shape.fan_in..(o + 1) * shape.fan_in].iter_mut().zip(input) {
                        *g += sd * a;
                    }
                }
                for (g, &d) in grad[shape.biases()].iter_mut().zip(delta) {
                    *g += scale * d;
                }
            }
            if l > 0 {
                let w = &theta[shape.weights()];
                let mut prev = std::mem::take(&mut s.delta[l - 1]);
                prev.iter_mut().for_each(|v| *v = 0.0);
                for (o, &d) in s.delta[l].iter().enumerate() {
                    for (p, &wv) in prev.iter_mut().zip(&w[o * shape.fan_in..(o + 1) * shape.fan_in]) {
                        *p += wv * d;
                    }
                }
                for ((p, &z), &a) in prev.iter_mut().zip(&s.pre[l - 1]).zip(&s.act[l - 1]) {
                    *p *= self.activation.d1(z, a);
                }
                s.delta[l - 1] = prev;
            }
        }
    }

    /// Loss of a single example, accumulating `scale · gradient` into `grad`
    /// when given.
    pub fn example_loss_grad(
        &self,
        theta: &[f64],
        x: &[f64],
        target: OutputTarget<'_>,
        s: &mut Scratch,
        grad: Option<(&mut [f64], f64)>,
    ) -> f64 {
        self.forward(theta, x, s);
        let loss = self.loss_and_output_delta(s, target);
        if let Some((g, scale)) = grad {
            self.backward(theta, x, s, g, scale);
        }
        loss
    }

    /// Accumulates `scale · H_example · v` into `out` via the R-op.
    pub fn example_hvp(
        &self,
        theta: &[f64],
        v: &[f64],
        x: &[f64],
        target: OutputTarget<'_>,
        s: &mut Scratch,
        out: &mut [f64],
        scale: f64,
    ) {
        self.forward(theta, x, s);
        self.loss_and_output_delta(s, target);
        let last = self.layers.len() - 1;

        // Regular backward deltas (without accumulating a gradient).
        for l in (1..self.layers.len()).rev() {
            let shape = self.layers[l];
            let w = &theta[shape.weights()];
            let mut prev = std::mem::take(&mut s.delta[l - 1]);
            prev.iter_mut().for_each(|p| *p = 0.0);
            for (o, &d) in s.delta[l].iter().enumerate() {
                for (p, &wv) in prev.iter_mut().zip(&w[o * shape.fan_in..(o + 1) * shape.fan_in]) {
                    *p += wv * d;
                }
            }
            for ((p, &z), &a) in prev.iter_mut().zip(&s.pre[l - 1]).zip(&s.act[l - 1]) {
                *p *= self.activation.d1(z, a);
            }
            s.delta[l - 1] = prev;
        }

        // R forward.
        for (l, shape) in self.layers.iter().enumerate() {
            let w = &theta[shape.weights()];
            let vw = &v[shape.weights()];
            let vb = &v[shape.biases()];
            let mut rz = std::mem::take(&mut s.r_pre[l]);
            {
                let input = self.input_of(s, l, x);
                for (o, r) in rz.iter_mut().enumerate() {
                    let rows = o * shape.fan_in..(o + 1) * shape.fan_in;
                    let mut acc = vb[o] + vw[rows.clone()].iter().zip(input).map(|(a, c)| a * c).sum::<f64>();
                    if l > 0 {
                        acc += w[rows].iter().zip(&s.r_act[l - 1]).map(|(a, c)| a * c).sum::<f64>();
                    }
                    *r = acc;
                }
            }
            if l < last {
                for i in 0..rz.len() {
                    s.r_act[l][i] = self.activation.d1(s.pre[l][i], s.act[l][i]) * rz[i];
                }
            } else {
                s.r_act[l].copy_from_slice(&rz);
            }
            s.r_pre[l] = rz;
        }

        // R of the output delta: Hessian of the loss w.r.t. the output times R(out).
        {
            let out = &s.act[last];
            let r_out = &s.r_pre[last];
            let rd = &mut s.r_delta[last];
            match target {
                OutputTarget::Real(_) => rd[0] = 2.0 * r_out[0],
                OutputTarget::Class(_) | OutputTarget::Soft(_) => {
                    let lse = log_sum_exp(out);
                    let p: Vec<f64> = out.iter().map(|z| (z - lse).exp()).collect();
                    let pr: f64 = p.iter().zip(r_out).map(|(a, b)| a * b).sum();
                    for k in 0..rd.len() {
                        rd[k] = p[k] * (r_out[k] - pr);
                    }
                }
            }
        }

        // R backward.
        for l in (0..self.layers.len()).rev() {
            let shape = self.layers[l];
            {
                let input = self.input_of(s, l, x);
                let r_input: Option<&[f64]> = if l > 0 { Some(&s.r_act[l - 1]) } else { None };
                let delta = &s.delta[l];
                let rd = &s.r_delta[l];
                let ow = &mut out[shape.weights()];
                for o in 0..shape.fan_out {
                    let row = &mut ow[o * shape.fan_in..(o + 1) * shape.fan_in];
                    let a = scale * rd[o];
                    if a != 0.0 {
                        for (g, &inp) in row.iter_mut().zip(input) {
                            *g += a * inp;
                        }
                    }
                    if let Some(ri) = r_input {
                        let b = scale * delta[o];
                        if b != 0.0 {
                            for (g, &r) in row.iter_mut().zip(ri) {
                                *g += b * r;
                            }
                        }
                    }
                }
                for (g, &r) in out[shape.biases()].iter_mut().zip(rd) {
                    *g += scale * r;
                }
            }
            if l > 0 {
                let w = &theta[shape.weights()];
                let vw = &v[shape.weights()];
                let n_prev = shape.fan_in;
                // u = W^T δ_l, ru = V^T δ_l + W^T Rδ_l
                s.tmp.clear();
                s.tmp.resize(2 * n_prev, 0.0);
                for o in 0..shape.fan_out {
                    let d = s.delta[l][o];
                    let rdo = s.r_delta[l][o];
                    let rows = o * n_prev..(o + 1) * n_prev;
                    for (i, (&wv, &vv)) in w[rows.clone()].iter().zip(&vw[rows]).enumerate() {
                        s.tmp[i] += wv * d;
                        s.tmp[n_prev + i] += vv * d + wv * rdo;
                    }
                }
                for i in 0..n_prev {
                    let z = s.pre[l - 1][i];
                    let a = s.act[l - 1][i];
                    let d1 = self.activation.d1(z, a);
                    let d2 = self.activation.d2(z, a);
                    s.r_delta[l - 1][i] = d2 * s.r_pre[l - 1][i] * s.tmp[i] + d1 * s.tmp[n_prev + i];
                }
            }
        }
    }
}

pub(crate) fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}
