use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::merger::MergerError;

pub const ATTENTION_BLOCKS: usize = 5;
pub const MLP_LAYERS: usize = 4;
pub const TOKENS: usize = 3;

/// Gain applied to the orthogonal attention projections at init.
pub const ATTENTION_INIT_GAIN: f64 = 0.5;

/// Offsets of every tensor in the flat parameter vector.
///
/// Per attention block: `wq, wk, wv, wo` (each D x D, row-major), then the
/// layer-norm gain and bias (D each). Then per MLP layer: weight
/// (out x in, row-major) followed by bias (out). MLP widths are
/// `3D -> 2D -> D -> D -> 3D`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockOffsets {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerOffsets {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Layout {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn widths(&self) -> [usize; MLP_LAYERS + 1] {
        let d = self.dim;
        [3 * d, 2 * d, d, d, 3 * d]
    }

    fn block_len(&self) -> usize {
        4 * self.dim * self.dim + 2 * self.dim
    }

    pub fn block(&self, b: usize) -> BlockOffsets {
        let d2 = self.dim * self.dim;
        let base = b * self.block_len();
        BlockOffsets {
            wq: base,
            wk: base + d2,
            wv: base + 2 * d2,
            wo: base + 3 * d2,
            gain: base + 4 * d2,
            bias: base + 4 * d2 + self.dim,
        }
    }

    pub fn layer(&self, l: usize) -> LayerOffsets {
        let w = self.widths();
        let mut off = ATTENTION_BLOCKS * self.block_len();
        for i in 0..l {
            off += w[i] * w[i + 1] + w[i + 1];
        }
        LayerOffsets { inputs: w[l], outputs: w[l + 1], weight: off, bias: off + w[l] * w[l + 1] }
    }

    pub fn len(&self) -> usize {
        let last = self.layer(MLP_LAYERS - 1);
        last.bias + last.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.dim == 0
    }
}

/// Weights of the descriptor merger, stored as one flat vector in
/// [`Layout`] order. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct MergerParams {
    dim: usize,
    values: Vec<f64>,
}

impl MergerParams {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, values: vec![0.0; Layout::new(dim).len()] }
    }

    pub fn from_values(dim: usize, values: Vec<f64>) -> Result<Self, MergerError> {
        let expected = Layout::new(dim).len();
        if dim == 0 {
            return Err(MergerError::Dimension { expected: 1, actual: 0 });
        }
        if values.len() != expected {
            return Err(MergerError::ParamCount { expected, actual: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MergerError::NonFinite);
        }
        Ok(Self { dim, values })
    }

    /// Standard initialization: orthogonal attention projections scaled by
    /// [`ATTENTION_INIT_GAIN`], unit layer-norm gains, He-initialized hidden
    /// MLP layers, zero biases and a zero output layer. The untrained network
    /// therefore predicts uniform weights.
    pub fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim);
        let layout = p.layout();
        for b in 0..ATTENTION_BLOCKS {
            let o = layout.block(b);
            for start in [o.wq, o.wk, o.wv, o.wo] {
                let q = random_orthogonal(dim, rng);
                for r in 0..dim {
                    for c in 0..dim {
                        p.values[start + r * dim + c] = ATTENTION_INIT_GAIN * q[(r, c)];
                    }
                }
            }
            p.values[o.gain..o.gain + dim].fill(1.0);
        }
        for l in 0..MLP_LAYERS - 1 {
            let o = layout.layer(l);
            let scale = (2.0 / o.inputs as f64).sqrt();
            for w in &mut p.values[o.weight..o.bias] {
                let z: f64 = StandardNormal.sample(rng);
                *w = scale * z;
            }
        }
        p
    }

    /// Every coordinate drawn from N(0, scale^2), layer-norm gains around 1.
    /// Used for gradient checking away from the zero-output initialization.
    pub fn random<R: Rng + ?Sized>(dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dim);
        for v in &mut p.values {
            let z: f64 = StandardNormal.sample(rng);
            *v = scale * z;
        }
        let layout = p.layout();
        for b in 0..ATTENTION_BLOCKS {
            let o = layout.block(b);
            for g in &mut p.values[o.gain..o.gain + dim] {
                *g += 1.0;
            }
        }
        p
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.dim)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &MergerParams, s: f64) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.values {
            *a *= s;
        }
    }
}

fn random_orthogonal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the draw uniform over the orthogonal group
    for c in 0..n {
        if r[(c, c)] < 0.0 {
            for row in 0..n {
                q[(row, c)] = -q[(row, c)];
            }
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn layout_is_contiguous() {
        let l = Layout::new(8);
        assert_eq!(l.block(0).wq, 0);
        assert_eq!(l.block(1).wq, l.block(0).bias + 8);
        assert_eq!(l.layer(0).weight, l.block(4).bias + 8);
        for i in 0..3 {
            let (a, b) = (l.layer(i), l.layer(i + 1));
            assert_eq!(b.weight, a.bias + a.outputs);
            assert_eq!(a.outputs, b.inputs);
        }
        let per_block = 4 * 64 + 16;
        let mlp = 24 * 16 + 16 + 16 * 8 + 8 + 8 * 8 + 8 + 8 * 24 + 24;
        assert_eq!(l.len(), 5 * per_block + mlp);
    }

    #[test]
    fn init_projections_are_scaled_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = MergerParams::init(6, &mut rng);
        let o = p.layout().block(2);
        let w = DMatrix::from_row_slice(6, 6, &p.as_slice()[o.wk..o.wk + 36]);
        let g = w.transpose() * &w;
        let s2 = ATTENTION_INIT_GAIN * ATTENTION_INIT_GAIN;
        for r in 0..6 {
            for c in 0..6 {
                let e = if r == c { s2 } else { 0.0 };
                assert!((g[(r, c)] - e).abs() < 1e-12);
            }
        }
        let last = p.layout().layer(3);
        assert!(p.as_slice()[last.weight..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_values_checks_shape() {
        assert_eq!(
            MergerParams::from_values(2, vec![0.0; 3]),
            Err(MergerError::ParamCount { expected: Layout::new(2).len(), actual: 3 })
        );
        let mut v = vec![0.0; Layout::new(2).len()];
        v[5] = f64::NAN;
        assert_eq!(MergerParams::from_values(2, v), Err(MergerError::NonFinite));
    }
}
