//! Small dense multilayer perceptron with analytic reverse-mode gradients.
//!
//! Hidden layers use a rectifier, the output layer is linear. Parameters are
//! held in f64 for gradient work but are always kept representable in f32,
//! which is the on-disk precision.

use std::io::{Read, Write};

use thiserror::Error;

use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MlpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid layer layout: {0}")]
    InvalidLayout(String),
    #[error("truncated weight stream")]
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyMlp {
    sizes: Vec<usize>,
    /// Per layer, `out × in` row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Parameter-shaped gradient buffers plus the gradient w.r.t. the input.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradient {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn add(&mut self, other: &MlpGradient) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights).chain(self.biases.iter_mut().zip(&other.biases)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Reusable activation buffers for allocation-free forward passes.
#[derive(Debug, Default, Clone)]
pub struct MlpScratch {
    activations: Vec<Vec<f64>>,
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

impl TinyMlp {
    pub fn new(sizes: Vec<usize>, weights: Vec<Vec<f64>>, biases: Vec<Vec<f64>>) -> Result<Self, MlpError> {
        if sizes.len() < 2 {
            return Err(MlpError::InvalidLayout("need at least input and output sizes".into()));
        }
        if sizes.contains(&0) {
            return Err(MlpError::InvalidLayout("layer sizes must be positive".into()));
        }
        if weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(MlpError::InvalidLayout("layer count does not match sizes".into()));
        }
        for l in 0..sizes.len() - 1 {
            if weights[l].len() != sizes[l] * sizes[l + 1] || biases[l].len() != sizes[l + 1] {
                return Err(MlpError::InvalidLayout(format!("layer {l} has wrong parameter count")));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(MlpError::InvalidLayout("non-finite parameter".into()));
        }
        Ok(Self { sizes, weights, biases })
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let weights = sizes.windows(2).map(|w| vec![0.0; w[0] * w[1]]).collect();
        let biases = sizes.windows(2).map(|w| vec![0.0; w[1]]).collect();
        Self::new(sizes.to_vec(), weights, biases).expect("valid layout")
    }

    /// He-uniform weights and zero biases, rounded to f32.
    pub fn seeded(sizes: &[usize], rng: &mut SplitMix64) -> Self {
        let mut mlp = Self::zeros(sizes);
        for (l, w) in mlp.weights.iter_mut().enumerate() {
            let bound = (6.0 / sizes[l] as f64).sqrt();
            w.iter_mut().for_each(|x| *x = round_f32(rng.uniform(-bound, bound)));
        }
        mlp
    }

    /// Single linear layer copying the first `min(in, out)` inputs.
    pub fn identity_projection(input_dim: usize, output_dim: usize) -> Self {
        let mut mlp = Self::zeros(&[input_dim, output_dim]);
        for i in 0..input_dim.min(output_dim) {
            mlp.weights[0][i * input_dim + i] = 1.0;
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn param_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Multiplies the output layer weights by `gain` (rounded to f32).
    pub fn scale_output_weights(&mut self, gain: f64) {
        let last = self.weights.len() - 1;
        self.weights[last].iter_mut().for_each(|x| *x = round_f32(*x * gain));
    }

    pub fn set_output_bias(&mut self, bias: &[f64]) {
        let last = self.biases.len() - 1;
        assert_eq!(bias.len(), self.biases[last].len());
        self.biases[last] = bias.iter().map(|&b| round_f32(b)).collect();
    }

    /// Parameters in layer order: weights then biases of each layer.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<(), MlpError> {
        if flat.len() != self.param_count() {
            return Err(MlpError::DimensionMismatch { expected: self.param_count(), got: flat.len() });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let (nw, nb) = (w.len(), b.len());
            w.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            b.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    pub fn quantize_f32(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            v.iter_mut().for_each(|x| *x = round_f32(*x));
        }
    }

    pub fn is_zero_output(&self) -> bool {
        let last = self.weights.len() - 1;
        self.weights[last].iter().chain(&self.biases[last]).all(|&x| x == 0.0)
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, MlpError> {
        let mut scratch = MlpScratch::default();
        Ok(self.forward_with(input, &mut scratch)?.to_vec())
    }

    /// Forward pass reusing `scratch`; returns the output slice.
    pub fn forward_with<'s>(&self, input: &[f64], scratch: &'s mut MlpScratch) -> Result<&'s [f64], MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::DimensionMismatch { expected: self.input_dim(), got: input.len() });
        }
        let layers = self.weights.len();
        scratch.activations.resize_with(layers + 1, Vec::new);
        scratch.activations[0].clear();
        scratch.activations[0].extend_from_slice(input);
        for l in 0..layers {
            let (done, rest) = scratch.activations.split_at_mut(l + 1);
            let x = &done[l];
            let y = &mut rest[0];
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            y.clear();
            y.extend_from_slice(&self.biases[l]);
            let w = &self.weights[l];
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let mut acc = y[o];
                for i in 0..n_in {
                    acc += row[i] * x[i];
                }
                y[o] = if l + 1 < layers { acc.max(0.0) } else { acc };
            }
        }
        Ok(&scratch.activations[layers])
    }

    pub fn zero_gradient(&self) -> MlpGradient {
        MlpGradient {
            weights: self.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    /// Gradients of `upstream · f(input)` with respect to parameters and input.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<(MlpGradient, Vec<f64>), MlpError> {
        let mut grad = self.zero_gradient();
        let mut scratch = MlpScratch::default();
        let dx = self.backward_accumulate(input, upstream, &mut grad, &mut scratch)?;
        Ok((grad, dx))
    }

    /// Adds this sample's parameter gradient into `grad`; returns the input
    /// gradient.
    pub fn backward_accumulate(
        &self,
        input: &[f64],
        upstream: &[f64],
        grad: &mut MlpGradient,
        scratch: &mut MlpScratch,
    ) -> Result<Vec<f64>, MlpError> {
        if upstream.len() != self.output_dim() {
            return Err(MlpError::DimensionMismatch { expected: self.output_dim(), got: upstream.len() });
        }
        self.forward_with(input, scratch)?;
        let layers = self.weights.len();
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                // Rectifier derivative, taken as 0 at the kink.
                let act = &scratch.activations[l + 1];
                for o in 0..n_out {
                    if act[o] <= 0.0 {
                        delta[o] = 0.0;
                    }
                }
            }
            let x = &scratch.activations[l];
            let gw = &mut grad.weights[l];
            let gb = &mut grad.biases[l];
            let w = &self.weights[l];
            let mut next = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * x[i];
                    next[i] += d * row[i];
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    /// Little-endian layout: layer count (u32), sizes (u32 each), then per
    /// layer the f32 weights (row-major) followed by the f32 biases.
    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        for (ws, bs) in self.weights.iter().zip(&self.biases) {
            for &x in ws.iter().chain(bs) {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn encoded_len(&self) -> usize {
        4 + 4 * self.sizes.len() + 4 * self.param_count()
    }

    /// Reads the layout written by [`TinyMlp::write_to`]. `max_params`
    /// bounds allocation for untrusted streams.
    pub fn read_from<R: Read>(r: &mut R, max_params: usize) -> Result<Self, MlpError> {
        let mut word = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> Result<u32, MlpError> {
            r.read_exact(&mut word).map_err(|_| MlpError::Truncated)?;
            Ok(u32::from_le_bytes(word))
        };
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(MlpError::InvalidLayout(format!("implausible layer count {n}")));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            sizes.push(read_u32(r)? as usize);
        }
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(MlpError::InvalidLayout("implausible layer size".into()));
        }
        let total: usize = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        if total > max_params {
            return Err(MlpError::InvalidLayout(format!("{total} parameters exceeds limit")));
        }
        let mut bytes = vec![0u8; total * 4];
        r.read_exact(&mut bytes).map_err(|_| MlpError::Truncated)?;
        let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in sizes.windows(2) {
            weights.push(vals.by_ref().take(w[0] * w[1]).collect());
            biases.push(vals.by_ref().take(w[1]).collect());
        }
        Self::new(sizes, weights, biases)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_emit_bias() {
        let mut mlp = TinyMlp::zeros(&[3, 2]);
        mlp.set_output_bias(&[0.5, -1.25]);
        assert_eq!(mlp.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.5, -1.25]);
    }

    #[test]
    fn identity_layer() {
        let mlp = TinyMlp::identity_projection(4, 4);
        assert_eq!(mlp.forward(&[1.0, -2.0, 3.5, 0.0]).unwrap(), vec![1.0, -2.0, 3.5, 0.0]);
        let wide = TinyMlp::identity_projection(2, 4);
        assert_eq!(wide.forward(&[1.0, -2.0]).unwrap(), vec![1.0, -2.0, 0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let mlp = TinyMlp::zeros(&[3, 4, 2]);
        assert_eq!(
            mlp.forward(&[1.0]),
            Err(MlpError::DimensionMismatch { expected: 3, got: 1 })
        );
        assert!(mlp.backward(&[0.0; 3], &[1.0]).is_err());
    }

    #[test]
    fn hidden_rectifier() {
        let mlp = TinyMlp::new(
            vec![1, 1, 1],
            vec![vec![1.0], vec![1.0]],
            vec![vec![0.0], vec![0.0]],
        )
        .unwrap();
        assert_eq!(mlp.forward(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(mlp.forward(&[3.0]).unwrap(), vec![3.0]);
    }

    fn loss(mlp: &TinyMlp, x: &[f64], up: &[f64]) -> f64 {
        mlp.forward(x).unwrap().iter().zip(up).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = SplitMix64::new(17);
        for trial in 0..25 {
            let sizes = [2 + trial % 5, 3 + trial % 7, 4, 1 + trial % 3];
            let mut mlp = TinyMlp::seeded(&sizes, &mut rng);
            let mut p = mlp.params();
            p.iter_mut().for_each(|v| *v += 0.1 * rng.normal());
            mlp.set_params(&p).unwrap();
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.normal()).collect();
            let up: Vec<f64> = (0..sizes[3]).map(|_| rng.normal()).collect();
            let (g, dx) = mlp.backward(&x, &up).unwrap();
            let analytic = g.flatten();
            let h = 1e-4;
            for k in 0..p.len() {
                let mut plus = mlp.clone();
                let mut q = p.clone();
                q[k] += h;
                plus.set_params(&q).unwrap();
                let mut minus = mlp.clone();
                q[k] -= 2.0 * h;
                minus.set_params(&q).unwrap();
                let fd = (loss(&plus, &x, &up) - loss(&minus, &x, &up)) / (2.0 * h);
                let denom = fd.abs().max(analytic[k].abs()).max(1e-6);
                assert!((fd - analytic[k]).abs() / denom < 1e-5, "param {k}: fd {fd} vs {}", analytic[k]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&mlp, &xp, &up) - loss(&mlp, &xm, &up)) / (2.0 * h);
                let denom = fd.abs().max(dx[i].abs()).max(1e-6);
                assert!((fd - dx[i]).abs() / denom < 1e-5);
            }
        }
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = SplitMix64::new(8);
        let mlp = TinyMlp::seeded(&[5, 7, 3], &mut rng);
        let mut buf = Vec::new();
        mlp.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), mlp.encoded_len());
        let back = TinyMlp::read_from(&mut buf.as_slice(), usize::MAX).unwrap();
        assert_eq!(back, mlp);
        assert_eq!(TinyMlp::read_from(&mut &buf[..buf.len() - 1], usize::MAX), Err(MlpError::Truncated));
    }
}
