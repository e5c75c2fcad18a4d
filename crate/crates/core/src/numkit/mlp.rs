//! Fully connected ReLU networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector so optimizers can treat every network
//! alike. Layer `l` stores its weights input-major (`w[i * out + j]`)
//! followed by its biases. Inputs and outputs pass through fixed affine
//! normalizations that are not trained.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::tape::{sigmoid, Tape, Var};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    /// Raw output (regression, recommendations).
    Linear,
    /// Logistic squashing into (0, 1) (classification and compliance scores).
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    head: Head,
    input_shift: Vec<f64>,
    input_scale: Vec<f64>,
    output_shift: Vec<f64>,
    output_scale: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`] for one input.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
    raw: Vec<f64>,
    scratch: Vec<f64>,
    delta: Vec<f64>,
    prev: Vec<f64>,
}

impl Cache {
    /// Pre-head outputs (after output de-normalization).
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }
}

fn layer_param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// A network with zero weights and identity normalizations.
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Numeric(format!("invalid layer sizes {sizes:?}")));
        }
        let n_in = sizes[0];
        let n_out = *sizes.last().unwrap();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; layer_param_count(sizes)],
            head,
            input_shift: vec![0.0; n_in],
            input_scale: vec![1.0; n_in],
            output_shift: vec![0.0; n_out],
            output_scale: vec![1.0; n_out],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>, head: Head) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        check_dim(net.params.len(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters"));
        }
        net.params = params;
        Ok(net)
    }

    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        let last = sizes.len() - 2;
        let mut offset = 0;
        for (l, w) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = if l == last {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            } else {
                (6.0 / fan_in as f64).sqrt()
            };
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = dist.sample(rng);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// `input -> width -> width -> width -> output` with ReLU hidden layers.
    pub fn three_layer<R: Rng + ?Sized>(
        input: usize,
        width: usize,
        output: usize,
        head: Head,
        rng: &mut R,
    ) -> Result<Self> {
        Self::random(&[input, width, width, width, output], head, rng)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Inputs are mapped to `(x - shift) / scale` before the first layer.
    pub fn set_input_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        check_dim(self.input_dim(), shift.len())?;
        check_dim(self.input_dim(), scale.len())?;
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numeric("input scale must be positive".into()));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    /// Last-layer outputs are mapped to `out * scale + shift`.
    pub fn set_output_normalization(&mut self, shift: Vec<f64>, scale: Vec<f64>) -> Result<()> {
        check_dim(self.output_dim(), shift.len())?;
        check_dim(self.output_dim(), scale.len())?;
        if scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Numeric("output scale must be positive".into()));
        }
        self.output_shift = shift;
        self.output_scale = scale;
        Ok(())
    }

    pub fn input_normalization(&self) -> (&[f64], &[f64]) {
        (&self.input_shift, &self.input_scale)
    }

    pub fn output_normalization(&self) -> (&[f64], &[f64]) {
        (&self.output_shift, &self.output_scale)
    }

    pub fn new_cache(&self) -> Cache {
        Cache {
            acts: self.sizes[..self.sizes.len() - 1]
                .iter()
                .map(|&s| vec![0.0; s])
                .collect(),
            raw: vec![0.0; self.output_dim()],
            scratch: vec![0.0; *self.sizes.iter().max().unwrap()],
            delta: Vec::with_capacity(*self.sizes.iter().max().unwrap()),
            prev: vec![0.0; *self.sizes.iter().max().unwrap()],
        }
    }

    /// Whether `cache` has the layout of this network.
    pub fn fits(&self, cache: &Cache) -> bool {
        let widest = *self.sizes.iter().max().unwrap();
        cache.acts.len() == self.sizes.len() - 1
            && cache.acts.iter().zip(&self.sizes).all(|(a, &s)| a.len() == s)
            && cache.raw.len() == self.output_dim()
            && cache.prev.len() == widest
            && cache.scratch.len() == widest
    }

    /// Forward pass recording activations. Returns the pre-head output.
    pub fn forward_cached<'c>(&self, x: &[f64], cache: &'c mut Cache) -> &'c [f64] {
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        for ((a, xi), (s, k)) in cache.acts[0]
            .iter_mut()
            .zip(x)
            .zip(self.input_shift.iter().zip(&self.input_scale))
        {
            *a = (xi - s) / k;
        }
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let out = &mut cache.scratch[..n_out];
            out.copy_from_slice(b);
            for (i, &ai) in cache.acts[l].iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let row = &w[i * n_out..(i + 1) * n_out];
                for (o, wij) in out.iter_mut().zip(row) {
                    *o += ai * wij;
                }
            }
            if l + 1 < n_layers {
                for (dst, &v) in cache.acts[l + 1].iter_mut().zip(out.iter()) {
                    *dst = if v > 0.0 { v } else { 0.0 };
                }
            } else {
                for (j, r) in cache.raw.iter_mut().enumerate() {
                    *r = out[j] * self.output_scale[j] + self.output_shift[j];
                }
            }
        }
        &cache.raw
    }

    /// Backpropagate `d_raw` (gradient w.r.t. the pre-head output). Parameter
    /// gradients are accumulated into `param_grads` when given; the gradient
    /// w.r.t. the input is written to `d_input`.
    pub fn backward(
        &self,
        cache: &mut Cache,
        d_raw: &[f64],
        mut param_grads: Option<&mut [f64]>,
        d_input: &mut [f64],
    ) {
        let n_layers = self.sizes.len() - 1;
        let Cache {
            acts, delta, prev, ..
        } = cache;
        delta.clear();
        delta.extend(d_raw.iter().zip(&self.output_scale).map(|(d, s)| d * s));
        let mut offset = self.params.len();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let w = &self.params[offset..offset + n_in * n_out];
            let a = &acts[l];
            if let Some(g) = param_grads.as_deref_mut() {
                let (gw, gb) = g[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for (gbj, dj) in gb.iter_mut().zip(delta.iter()) {
                    *gbj += dj;
                }
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    for (g, dj) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(delta.iter()) {
                        *g += ai * dj;
                    }
                }
            }
            let p = &mut prev[..n_in];
            for (i, pi) in p.iter_mut().enumerate() {
                // ReLU gate of the layer below (input layer is ungated).
                if l > 0 && a[i] <= 0.0 {
                    *pi = 0.0;
                    continue;
                }
                *pi = dot4(&w[i * n_out..(i + 1) * n_out], delta);
            }
            delta.clear();
            delta.extend_from_slice(p);
        }
        for ((d, v), s) in d_input.iter_mut().zip(delta.iter()).zip(&self.input_scale) {
            *d = v / s;
        }
    }

    fn apply_head(&self, raw: f64) -> f64 {
        match self.head {
            Head::Linear => raw,
            Head::Logistic => sigmoid(raw),
        }
    }

    /// Outputs after the head.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let mut cache = self.new_cache();
        let raw = self.forward_cached(x, &mut cache);
        Ok(raw.iter().map(|&r| self.apply_head(r)).collect())
    }

    pub fn forward_scalar(&self, x: &[f64]) -> Result<f64> {
        check_dim(1, self.output_dim())?;
        Ok(self.forward(x)?[0])
    }

    /// Scalar output using a caller-owned cache (no allocation).
    pub fn eval_with(&self, x: &[f64], cache: &mut Cache) -> f64 {
        let raw = self.forward_cached(x, cache)[0];
        self.apply_head(raw)
    }

    /// Value and input gradient of the scalar output (after the head).
    pub fn value_and_input_gradient(&self, x: &[f64], cache: &mut Cache, grad: &mut [f64]) -> f64 {
        let raw = self.forward_cached(x, cache)[0];
        let (v, d) = match self.head {
            Head::Linear => (raw, 1.0),
            Head::Logistic => {
                let s = sigmoid(raw);
                (s, s * (1.0 - s))
            }
        };
        self.backward(cache, &[d], None, grad);
        v
    }

    /// Record the forward pass on a tape with the parameters as variables.
    /// Returns pre-head outputs.
    pub fn record<'t>(&self, tape: &'t Tape, params: &[Var<'t>], x: &[f64]) -> Vec<Var<'t>> {
        let n_layers = self.sizes.len() - 1;
        let mut act: Vec<Var<'t>> = x
            .iter()
            .zip(self.input_shift.iter().zip(&self.input_scale))
            .map(|(xi, (s, k))| tape.constant((xi - s) / k))
            .collect();
        let mut offset = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let mut next = Vec::with_capacity(n_out);
            for j in 0..n_out {
                let mut acc = params[offset + n_in * n_out + j];
                for (i, a) in act.iter().enumerate() {
                    acc = acc + *a * params[offset + i * n_out + j];
                }
                next.push(if l + 1 < n_layers { acc.relu() } else { acc });
            }
            offset += n_in * n_out + n_out;
            act = next;
        }
        act.into_iter()
            .enumerate()
            .map(|(j, v)| v * self.output_scale[j] + self.output_shift[j])
            .collect()
    }

    /// Text form: `#`-prefixed shape comments, then one number per line in
    /// the order input shift, input scale, output shift, output scale, params.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.sizes.iter().map(|v| v.to_string()).collect();
        let head = match self.head {
            Head::Linear => "linear",
            Head::Logistic => "logistic",
        };
        let _ = writeln!(s, "# mlp");
        let _ = writeln!(s, "# sizes {}", sizes.join(" "));
        let _ = writeln!(s, "# head {head}");
        let sections: [(&str, &[f64]); 5] = [
            ("input_shift", &self.input_shift),
            ("input_scale", &self.input_scale),
            ("output_shift", &self.output_shift),
            ("output_scale", &self.output_scale),
            ("params", &self.params),
        ];
        for (name, values) in sections {
            let _ = writeln!(s, "# {name} {}", values.len());
            for v in values {
                let _ = writeln!(s, "{v:?}");
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut sizes: Option<Vec<usize>> = None;
        let mut head = Head::Linear;
        let mut sections: Vec<(String, usize, Vec<f64>)> = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse {
                line: ln + 1,
                message: m.to_string(),
            };
            if let Some(comment) = line.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                match words.next() {
                    Some("sizes") => {
                        sizes = Some(
                            words
                                .map(|w| w.parse().map_err(|_| err("bad size")))
                                .collect::<Result<_>>()?,
                        )
                    }
                    Some("head") => {
                        head = match words.next() {
                            Some("linear") => Head::Linear,
                            Some("logistic") => Head::Logistic,
                            _ => return Err(err("unknown head")),
                        }
                    }
                    Some(name) if name != "mlp" => {
                        let n = words
                            .next()
                            .and_then(|w| w.parse().ok())
                            .ok_or_else(|| err("missing section length"))?;
                        sections.push((name.to_string(), n, Vec::with_capacity(n)));
                    }
                    _ => {}
                }
                continue;
            }
            let v: f64 = line.parse().map_err(|_| err("bad number"))?;
            match sections.last_mut() {
                Some(sec) if sec.2.len() < sec.1 => sec.2.push(v),
                _ => return Err(err("value outside a section")),
            }
        }
        let sizes = sizes.ok_or_else(|| Error::Schema("missing `# sizes` header".into()))?;
        let mut take = |name: &str| -> Result<Vec<f64>> {
            let idx = sections
                .iter()
                .position(|s| s.0 == name)
                .ok_or_else(|| Error::Schema(format!("missing section `{name}`")))?;
            let (_, n, v) = sections.remove(idx);
            if v.len() != n {
                return Err(Error::Schema(format!("section `{name}` is truncated")));
            }
            Ok(v)
        };
        let input_shift = take("input_shift")?;
        let input_scale = take("input_scale")?;
        let output_shift = take("output_shift")?;
        let output_scale = take("output_scale")?;
        let params = take("params")?;
        let mut net = Self::from_params(&sizes, params, head)?;
        net.set_input_normalization(input_shift, input_scale)?;
        net.set_output_normalization(output_shift, output_scale)?;
        Ok(net)
    }
}

fn dot4(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
