use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::linalg::{matmul_ab, matmul_abt, matmul_atb, Real};

/// Fully connected layer, `y = W x + b` with `W` stored row-major as
/// `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    /// Weights drawn from `N(0, 2 / inputs)`, zero bias.
    pub fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("positive fan-in");
        Self {
            inputs,
            outputs,
            weight: (0..inputs * outputs).map(|_| T::of(normal.sample(rng))).collect(),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Linear<U> {
        Linear {
            inputs: self.inputs,
            outputs: self.outputs,
            weight: self.weight.iter().map(|&w| f(w)).collect(),
            bias: self.bias.iter().map(|&b| f(b)).collect(),
        }
    }

    /// `out = x Wᵀ + b` for a row-major batch.
    fn forward(&self, batch: usize, x: &[T], out: &mut [T]) {
        matmul_abt(batch, self.inputs, self.outputs, x, &self.weight, out, false);
        for row in out.chunks_exact_mut(self.outputs) {
            for (o, &b) in row.iter_mut().zip(&self.bias) {
                *o = *o + b;
            }
        }
    }

    /// Parameter gradients from the upstream gradient `dy` and layer input `x`.
    fn accumulate_grads(&self, batch: usize, x: &[T], dy: &[T], grad: &mut Linear<T>) {
        matmul_atb(batch, self.outputs, self.inputs, dy, x, &mut grad.weight, false);
        grad.bias.iter_mut().for_each(|b| *b = T::zero());
        for row in dy.chunks_exact(self.outputs) {
            for (g, &d) in grad.bias.iter_mut().zip(row) {
                *g = *g + d;
            }
        }
    }

    /// Single-sample `out = W x + b` as one dot product per output row, which
    /// streams each weight once instead of packing the matrix.
    fn forward_one(&self, x: &[T], out: &mut [T]) {
        for ((o, row), &b) in out.iter_mut().zip(self.weight.chunks_exact(self.inputs)).zip(&self.bias) {
            *o = dot(row, x) + b;
        }
    }

    /// `dx (+)= dy W`.
    fn backward_input(&self, batch: usize, dy: &[T], dx: &mut [T], accumulate: bool) {
        matmul_ab(batch, self.outputs, self.inputs, dy, &self.weight, dx, accumulate);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub first: Linear<T>,
    pub second: Linear<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub input: Linear<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub output: Linear<T>,
}

/// Activations kept from the forward pass plus backward scratch space.
/// Reused across batches to avoid reallocating.
#[derive(Debug, Default)]
pub struct Workspace<T> {
    batch: usize,
    input: Vec<T>,
    h0: Vec<T>,
    /// (inner activation, block output) per block
    blocks: Vec<(Vec<T>, Vec<T>)>,
    out: Vec<T>,
    dh: Vec<T>,
    du: Vec<T>,
    da: Vec<T>,
}

impl<T: Real> Workspace<T> {
    pub fn output(&self) -> &[T] {
        &self.out
    }
}

fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if !(*x > T::zero()) {
            *x = T::zero();
        }
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 32;
    let mut acc = [T::zero(); LANES];
    let (ca, cb) = (a.chunks_exact(LANES), b.chunks_exact(LANES));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&p, &q)| s + p * q);
    for (pa, pb) in ca.zip(cb) {
        // fixed-size views drop the per-element bounds checks so the loop vectorizes
        let (pa, pb): (&[T; LANES], &[T; LANES]) = (pa.try_into().unwrap(), pb.try_into().unwrap());
        for i in 0..LANES {
            acc[i] = acc[i] + pa[i] * pb[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn resize<T: Real>(v: &mut Vec<T>, len: usize) {
    v.resize(len, T::zero());
}

impl<T: Real> Network<T> {
    pub fn zeros(inputs: usize, hidden: usize, blocks: usize, outputs: usize) -> Self {
        Self {
            input: Linear::zeros(inputs, hidden),
            blocks: (0..blocks)
                .map(|_| ResidualBlock {
                    first: Linear::zeros(hidden, hidden),
                    second: Linear::zeros(hidden, hidden),
                })
                .collect(),
            output: Linear::zeros(hidden, outputs),
        }
    }

    /// He-initialized network; layers are drawn in forward order.
    pub fn he(inputs: usize, hidden: usize, blocks: usize, outputs: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let input = Linear::he(inputs, hidden, &mut rng);
        let blocks = (0..blocks)
            .map(|_| ResidualBlock {
                first: Linear::he(hidden, hidden, &mut rng),
                second: Linear::he(hidden, hidden, &mut rng),
            })
            .collect();
        let output = Linear::he(hidden, outputs, &mut rng);
        Self { input, blocks, output }
    }

    pub fn hidden(&self) -> usize {
        self.input.outputs
    }

    pub fn inputs(&self) -> usize {
        self.input.inputs
    }

    pub fn outputs(&self) -> usize {
        self.output.outputs
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> Network<U> {
        Network {
            input: self.input.map(f),
            blocks: self
                .blocks
                .iter()
                .map(|b| ResidualBlock {
                    first: b.first.map(f),
                    second: b.second.map(f),
                })
                .collect(),
            output: self.output.map(f),
        }
    }

    /// Layers in forward order.
    pub fn layers(&self) -> Vec<&Linear<T>> {
        let mut v = vec![&self.input];
        for b in &self.blocks {
            v.push(&b.first);
            v.push(&b.second);
        }
        v.push(&self.output);
        v
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Linear<T>> {
        let mut v = vec![&mut self.input];
        for b in &mut self.blocks {
            v.push(&mut b.first);
            v.push(&mut b.second);
        }
        v.push(&mut self.output);
        v
    }

    /// Names of the parameter groups, matching [`Network::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = vec!["input.weight".to_string(), "input.bias".to_string()];
        for i in 0..self.blocks.len() {
            for part in ["first", "second"] {
                names.push(format!("block{i}.{part}.weight"));
                names.push(format!("block{i}.{part}.bias"));
            }
        }
        names.push("output.weight".into());
        names.push("output.bias".into());
        names
    }

    /// Parameter groups: weight then bias of every layer in forward order.
    pub fn params(&self) -> Vec<&[T]> {
        self.layers()
            .into_iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut [T]> {
        self.layers_mut()
            .into_iter()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Forward pass over a row-major batch, returning `batch × outputs`.
    pub fn forward(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut ws = Workspace::default();
        self.forward_cached(x, batch, &mut ws);
        std::mem::take(&mut ws.out)
    }

    /// Forward pass for one sample without the batched GEMM machinery.
    pub fn forward_single(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.inputs(), "input has the wrong size");
        let hidden = self.hidden();
        let mut h = vec![T::zero(); hidden];
        let mut a = vec![T::zero(); hidden];
        let mut u = vec![T::zero(); hidden];
        self.input.forward_one(x, &mut h);
        relu_in_place(&mut h);
        for block in &self.blocks {
            block.first.forward_one(&h, &mut a);
            relu_in_place(&mut a);
            block.second.forward_one(&a, &mut u);
            for (v, &skip) in u.iter_mut().zip(&h) {
                *v = *v + skip;
            }
            relu_in_place(&mut u);
            std::mem::swap(&mut h, &mut u);
        }
        let mut out = vec![T::zero(); self.outputs()];
        self.output.forward_one(&h, &mut out);
        out
    }

    /// Forward pass that keeps the activations needed by [`Network::backward`].
    pub fn forward_cached(&self, x: &[T], batch: usize, ws: &mut Workspace<T>) {
        assert_eq!(x.len(), batch * self.inputs(), "input batch has the wrong size");
        let hidden = self.hidden();
        ws.batch = batch;
        ws.input.clear();
        ws.input.extend_from_slice(x);
        resize(&mut ws.h0, batch * hidden);
        self.input.forward(batch, x, &mut ws.h0);
        relu_in_place(&mut ws.h0);

        ws.blocks.resize_with(self.blocks.len(), Default::default);
        for (j, block) in self.blocks.iter().enumerate() {
            let (before, rest) = ws.blocks.split_at_mut(j);
            let h_in: &[T] = if j == 0 { &ws.h0 } else { &before[j - 1].1 };
            let (a, h) = &mut rest[0];
            resize(a, batch * hidden);
            resize(h, batch * hidden);
            block.first.forward(batch, h_in, a);
            relu_in_place(a);
            block.second.forward(batch, a, h);
            for (u, &skip) in h.iter_mut().zip(h_in) {
                *u = *u + skip;
            }
            relu_in_place(h);
        }
        let last: &[T] = ws.blocks.last().map_or(&ws.h0, |b| &b.1);
        let mut out = std::mem::take(&mut ws.out);
        resize(&mut out, batch * self.outputs());
        self.output.forward(batch, last, &mut out);
        ws.out = out;
    }

    /// Reverse-mode gradients of the loss whose gradient with respect to
    /// the network output is `d_out`, written into `grads` (overwritten).
    pub fn backward(&self, ws: &mut Workspace<T>, d_out: &[T], grads: &mut Network<T>) {
        let batch = ws.batch;
        let hidden = self.hidden();
        assert_eq!(d_out.len(), batch * self.outputs());
        let mut dh = std::mem::take(&mut ws.dh);
        let mut du = std::mem::take(&mut ws.du);
        let mut da = std::mem::take(&mut ws.da);
        resize(&mut dh, batch * hidden);
        resize(&mut du, batch * hidden);
        resize(&mut da, batch * hidden);

        let last: &[T] = ws.blocks.last().map_or(&ws.h0, |b| &b.1);
        self.output.accumulate_grads(batch, last, d_out, &mut grads.output);
        self.output.backward_input(batch, d_out, &mut dh, false);

        for j in (0..self.blocks.len()).rev() {
            let block = &self.blocks[j];
            let grad = &mut grads.blocks[j];
            let h_in: &[T] = if j == 0 { &ws.h0 } else { &ws.blocks[j - 1].1 };
            let (a, h_out) = &ws.blocks[j];
            for ((d, &g), &h) in du.iter_mut().zip(&dh).zip(h_out) {
                *d = if h > T::zero() { g } else { T::zero() };
            }
            block.second.accumulate_grads(batch, a, &du, &mut grad.second);
            block.second.backward_input(batch, &du, &mut da, false);
            for (d, &act) in da.iter_mut().zip(a) {
                if !(act > T::zero()) {
                    *d = T::zero();
                }
            }
            block.first.accumulate_grads(batch, h_in, &da, &mut grad.first);
            dh.copy_from_slice(&du);
            block.first.backward_input(batch, &da, &mut dh, true);
        }

        for (d, &h) in dh.iter_mut().zip(&ws.h0) {
            if !(h > T::zero()) {
                *d = T::zero();
            }
        }
        self.input.accumulate_grads(batch, &ws.input, &dh, &mut grads.input);

        ws.dh = dh;
        ws.du = du;
        ws.da = da;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain per-sample evaluation with explicit loops.
    fn reference_forward(net: &Network<f64>, x: &[f64]) -> Vec<f64> {
        let dense = |l: &Linear<f64>, v: &[f64]| -> Vec<f64> {
            (0..l.outputs)
                .map(|o| l.bias[o] + (0..l.inputs).map(|i| l.weight[o * l.inputs + i] * v[i]).sum::<f64>())
                .collect()
        };
        let relu = |v: Vec<f64>| v.into_iter().map(|z| z.max(0.0)).collect::<Vec<_>>();
        let mut h = relu(dense(&net.input, x));
        for b in &net.blocks {
            let a = relu(dense(&b.first, &h));
            let u: Vec<f64> = dense(&b.second, &a).iter().zip(&h).map(|(p, q)| p + q).collect();
            h = relu(u);
        }
        dense(&net.output, &h)
    }

    #[test]
    fn forward_matches_explicit_loops() {
        let net = Network::<f64>::he(4, 16, 2, 2, 3);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = net.forward(&x, 3);
        for s in 0..3 {
            let r = reference_forward(&net, &x[4 * s..4 * s + 4]);
            for o in 0..2 {
                assert!((out[2 * s + o] - r[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_sample_path_matches_batch() {
        let net = Network::<f64>::he(4, 37, 2, 2, 8);
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.91).cos()).collect();
        let batch = net.forward(&x, 5);
        for s in 0..5 {
            let one = net.forward_single(&x[4 * s..4 * s + 4]);
            let r = reference_forward(&net, &x[4 * s..4 * s + 4]);
            for o in 0..2 {
                assert!((one[o] - batch[2 * s + o]).abs() < 1e-12);
                assert!((one[o] - r[o]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_blocks_reduce_to_head_after_expansion() {
        let mut net = Network::<f64>::he(4, 16, 2, 2, 4);
        for b in &mut net.blocks {
            for l in [&mut b.first, &mut b.second] {
                l.weight.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let x = [0.3, -1.2, 0.7, 2.0];
        let mut bypass = net.clone();
        bypass.blocks.clear();
        assert_eq!(net.forward(&x, 1), bypass.forward(&x, 1));
    }

    #[test]
    fn param_groups_are_named_in_order() {
        let net = Network::<f32>::zeros(4, 8, 2, 2);
        let names = net.param_names();
        assert_eq!(names.len(), net.params().len());
        assert_eq!(names[0], "input.weight");
        assert_eq!(names[5], "block0.second.bias");
        assert_eq!(names.last().unwrap(), "output.bias");
        assert_eq!(net.parameter_count(), 4 * 8 + 8 + 2 * 2 * (64 + 8) + 16 + 2);
    }
}
