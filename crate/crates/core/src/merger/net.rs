use crate::descriptor::DescriptorTriple;
use crate::merger::params::{Layout, ATTENTION_BLOCKS, MLP_LAYERS, TOKENS};
use crate::merger::{MergerError, MergerParams};
use crate::vector::{dot, UnitVector, MIN_NORM};

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct MergerOutput {
    pub descriptor: UnitVector,
    /// `weights[i * D + j]`: weight of token `i` (global, masked, bbox) in
    /// dimension `j`. Each column sums to one.
    pub weights: Vec<f64>,
}

struct BlockTape {
    xhat: Vec<f64>,
    sigma: [f64; TOKENS],
    y: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: [[f64; TOKENS]; TOKENS],
    o: Vec<f64>,
}

struct Tape {
    tokens: Vec<f64>,
    blocks: Vec<BlockTape>,
    /// Activations entering each MLP layer; `acts[0]` is the flattened
    /// attention output.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each MLP layer.
    pre: Vec<Vec<f64>>,
    weights: Vec<f64>,
    r_norm: f64,
    d: Vec<f64>,
}

fn check_dim(p: &MergerParams, t: &DescriptorTriple) -> Result<(), MergerError> {
    if t.dim() != p.dim() {
        return Err(MergerError::Dimension { expected: p.dim(), actual: t.dim() });
    }
    Ok(())
}

/// `out[r] = sum_c w[r * cols + c] * x[c]`
fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        out[r] = dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out[c] += sum_r w[r * cols + c] * g[r]`
fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, g: &[f64], out: &mut [f64]) {
    for r in 0..rows {
        let gr = g[r];
        if gr == 0.0 {
            continue;
        }
        for (o, wv) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *o += wv * gr;
        }
    }
}

/// `gw[r * cols + c] += g[r] * x[c]`
fn outer_acc(gw: &mut [f64], cols: usize, g: &[f64], x: &[f64]) {
    for (r, &gr) in g.iter().enumerate() {
        if gr == 0.0 {
            continue;
        }
        for (o, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *o += gr * xv;
        }
    }
}

fn run(p: &MergerParams, t: &DescriptorTriple) -> Result<Tape, MergerError> {
    check_dim(p, t)?;
    let d = p.dim();
    let lay = Layout::new(d);
    let w = p.as_slice();
    let tokens: Vec<f64> = t.tokens().iter().flat_map(|u| u.iter().copied()).collect();
    let scale = 1.0 / (d as f64).sqrt();

    let mut x = tokens.clone();
    let mut blocks = Vec::with_capacity(ATTENTION_BLOCKS);
    for b in 0..ATTENTION_BLOCKS {
        let o = lay.block(b);
        let gain = &w[o.gain..o.gain + d];
        let bias = &w[o.bias..o.bias + d];
        let mut xhat = vec![0.0; TOKENS * d];
        let mut y = vec![0.0; TOKENS * d];
        let mut sigma = [0.0; TOKENS];
        for i in 0..TOKENS {
            let row = &x[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = (var + LAYER_NORM_EPS).sqrt();
            sigma[i] = s;
            for j in 0..d {
                let h = (row[j] - mean) / s;
                xhat[i * d + j] = h;
                y[i * d + j] = gain[j] * h + bias[j];
            }
        }
        let mut q = vec![0.0; TOKENS * d];
        let mut k = vec![0.0; TOKENS * d];
        let mut v = vec![0.0; TOKENS * d];
        for i in 0..TOKENS {
            let yi = &y[i * d..(i + 1) * d];
            matvec(&w[o.wq..o.wq + d * d], d, d, yi, &mut q[i * d..(i + 1) * d]);
            matvec(&w[o.wk..o.wk + d * d], d, d, yi, &mut k[i * d..(i + 1) * d]);
            matvec(&w[o.wv..o.wv + d * d], d, d, yi, &mut v[i * d..(i + 1) * d]);
        }
        let mut attn = [[0.0; TOKENS]; TOKENS];
        for i in 0..TOKENS {
            let s: [f64; TOKENS] =
                std::array::from_fn(|j| scale * dot(&q[i * d..(i + 1) * d], &k[j * d..(j + 1) * d]));
            attn[i] = softmax3(s);
        }
        let mut ov = vec![0.0; TOKENS * d];
        for i in 0..TOKENS {
            for j in 0..TOKENS {
                let a = attn[i][j];
                for c in 0..d {
                    ov[i * d + c] += a * v[j * d + c];
                }
            }
        }
        let mut next = x;
        let mut proj = vec![0.0; d];
        for i in 0..TOKENS {
            matvec(&w[o.wo..o.wo + d * d], d, d, &ov[i * d..(i + 1) * d], &mut proj);
            for c in 0..d {
                next[i * d + c] += proj[c];
            }
        }
        blocks.push(BlockTape { xhat, sigma, y, q, k, v, attn, o: ov });
        x = next;
    }

    let mut acts = vec![x];
    let mut pre = Vec::with_capacity(MLP_LAYERS);
    for l in 0..MLP_LAYERS {
        let o = lay.layer(l);
        let mut z = vec![0.0; o.outputs];
        matvec(&w[o.weight..o.bias], o.outputs, o.inputs, &acts[l], &mut z);
        for (zi, bi) in z.iter_mut().zip(&w[o.bias..o.bias + o.outputs]) {
            *zi += bi;
        }
        if l + 1 < MLP_LAYERS {
            acts.push(z.iter().map(|&v| v.max(0.0)).collect());
        }
        pre.push(z);
    }

    let logits = &pre[MLP_LAYERS - 1];
    let mut weights = vec![0.0; TOKENS * d];
    let mut r = vec![0.0; d];
    for j in 0..d {
        let s = softmax3(std::array::from_fn(|i| logits[i * d + j]));
        for i in 0..TOKENS {
            weights[i * d + j] = s[i];
            r[j] += s[i] * tokens[i * d + j];
        }
    }
    let r_norm = dot(&r, &r).sqrt();
    if !r_norm.is_finite() {
        return Err(MergerError::NonFinite);
    }
    if r_norm <= MIN_NORM {
        return Err(MergerError::Degenerate(r_norm));
    }
    let dvec = r.iter().map(|v| v / r_norm).collect();
    Ok(Tape { tokens, blocks, acts, pre, weights, r_norm, d: dvec })
}

fn softmax3(s: [f64; TOKENS]) -> [f64; TOKENS] {
    let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: [f64; TOKENS] = std::array::from_fn(|i| (s[i] - m).exp());
    let z: f64 = e.iter().sum();
    std::array::from_fn(|i| e[i] / z)
}

pub fn merger_forward(p: &MergerParams, t: &DescriptorTriple) -> Result<MergerOutput, MergerError> {
    let tape = run(p, t)?;
    Ok(MergerOutput { descriptor: UnitVector::from_raw_unchecked(tape.d), weights: tape.weights })
}

/// `1 - cos(merged, target)`.
pub fn merger_loss(p: &MergerParams, t: &DescriptorTriple, target: &UnitVector) -> Result<f64, MergerError> {
    let out = merger_forward(p, t)?;
    Ok(1.0 - out.descriptor.cosine(target))
}

/// Loss and its exact gradient with respect to every parameter.
pub fn merger_backward(
    p: &MergerParams,
    t: &DescriptorTriple,
    target: &UnitVector,
) -> Result<(f64, MergerParams), MergerError> {
    let mut grad = MergerParams::zeros(p.dim());
    let loss = merger_backward_acc(p, t, target, &mut grad)?;
    Ok((loss, grad))
}

/// Like [`merger_backward`], adding the gradient into `grad`.
pub fn merger_backward_acc(
    p: &MergerParams,
    t: &DescriptorTriple,
    target: &UnitVector,
    grad: &mut MergerParams,
) -> Result<f64, MergerError> {
    let tape = run(p, t)?;
    if target.dim() != p.dim() {
        return Err(MergerError::Dimension { expected: p.dim(), actual: target.dim() });
    }
    let d = p.dim();
    let lay = Layout::new(d);
    let w = p.as_slice();
    let g = grad.as_mut_slice();
    let loss = 1.0 - dot(&tape.d, target);

    // normalization: dd = -target
    let dd: Vec<f64> = target.iter().map(|v| -v).collect();
    let proj = dot(&tape.d, &dd);
    let dr: Vec<f64> = (0..d).map(|j| (dd[j] - tape.d[j] * proj) / tape.r_norm).collect();

    // softmax over tokens per dimension
    let mut dz = vec![0.0; TOKENS * d];
    for j in 0..d {
        let dw: [f64; TOKENS] = std::array::from_fn(|i| dr[j] * tape.tokens[i * d + j]);
        let wj: [f64; TOKENS] = std::array::from_fn(|i| tape.weights[i * d + j]);
        let mean: f64 = (0..TOKENS).map(|i| wj[i] * dw[i]).sum();
        for i in 0..TOKENS {
            dz[i * d + j] = wj[i] * (dw[i] - mean);
        }
    }

    // MLP
    for l in (0..MLP_LAYERS).rev() {
        let o = lay.layer(l);
        if l + 1 < MLP_LAYERS {
            for (gz, z) in dz.iter_mut().zip(&tape.pre[l]) {
                if *z <= 0.0 {
                    *gz = 0.0;
                }
            }
        }
        outer_acc(&mut g[o.weight..o.bias], o.inputs, &dz, &tape.acts[l]);
        for (gb, v) in g[o.bias..o.bias + o.outputs].iter_mut().zip(&dz) {
            *gb += v;
        }
        let mut dx = vec![0.0; o.inputs];
        matvec_t_acc(&w[o.weight..o.bias], o.outputs, o.inputs, &dz, &mut dx);
        dz = dx;
    }

    // attention blocks
    let mut dx = dz;
    let scale = 1.0 / (d as f64).sqrt();
    for b in (0..ATTENTION_BLOCKS).rev() {
        let o = lay.block(b);
        let bt = &tape.blocks[b];
        let wo = &w[o.wo..o.wo + d * d];
        let mut d_o = vec![0.0; TOKENS * d];
        for i in 0..TOKENS {
            let gi = &dx[i * d..(i + 1) * d];
            outer_acc(&mut g[o.wo..o.wo + d * d], d, gi, &bt.o[i * d..(i + 1) * d]);
            matvec_t_acc(wo, d, d, gi, &mut d_o[i * d..(i + 1) * d]);
        }
        let mut dv = vec![0.0; TOKENS * d];
        let mut dq = vec![0.0; TOKENS * d];
        let mut dk = vec![0.0; TOKENS * d];
        for i in 0..TOKENS {
            let doi = &d_o[i * d..(i + 1) * d];
            let da: [f64; TOKENS] = std::array::from_fn(|j| dot(doi, &bt.v[j * d..(j + 1) * d]));
            for j in 0..TOKENS {
                let a = bt.attn[i][j];
                for c in 0..d {
                    dv[j * d + c] += a * doi[c];
                }
            }
            let mean: f64 = (0..TOKENS).map(|j| bt.attn[i][j] * da[j]).sum();
            for j in 0..TOKENS {
                let ds = bt.attn[i][j] * (da[j] - mean) * scale;
                for c in 0..d {
                    dq[i * d + c] += ds * bt.k[j * d + c];
                    dk[j * d + c] += ds * bt.q[i * d + c];
                }
            }
        }
        let mut dy = vec![0.0; TOKENS * d];
        for i in 0..TOKENS {
            let yi = &bt.y[i * d..(i + 1) * d];
            let dyi = &mut dy[i * d..(i + 1) * d];
            for (off, gsrc) in [(o.wq, &dq), (o.wk, &dk), (o.wv, &dv)] {
                let gi = &gsrc[i * d..(i + 1) * d];
                outer_acc(&mut g[off..off + d * d], d, gi, yi);
                matvec_t_acc(&w[off..off + d * d], d, d, gi, dyi);
            }
        }
        let gain = &w[o.gain..o.gain + d];
        let mut dprev = dx.clone();
        for i in 0..TOKENS {
            let xh = &bt.xhat[i * d..(i + 1) * d];
            let dyi = &dy[i * d..(i + 1) * d];
            let mut dxhat = vec![0.0; d];
            for j in 0..d {
                g[o.gain + j] += dyi[j] * xh[j];
                g[o.bias + j] += dyi[j];
                dxhat[j] = dyi[j] * gain[j];
            }
            let m1 = dxhat.iter().sum::<f64>() / d as f64;
            let m2 = dot(&dxhat, xh) / d as f64;
            for j in 0..d {
                dprev[i * d + j] += (dxhat[j] - m1 - xh[j] * m2) / bt.sigma[i];
            }
        }
        dx = dprev;
    }
    Ok(loss)
}
