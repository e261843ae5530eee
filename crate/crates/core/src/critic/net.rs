//! Forward and backward passes over the flat parameter layout.

use rand::Rng;

use super::scalar::gemm;
use super::{ConvGeom, CriticParams, Scalar, BN_EPS, CLASSES, KERNEL, LEAKY_SLOPE, STRIDE};

fn leaky<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::of(LEAKY_SLOPE)
    }
}

fn leaky_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::of(LEAKY_SLOPE)
    }
}

/// Unfold `x` (c_in x h_in x w_in) into `cols` (patch x positions).
pub(crate) fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let p = g.out_positions();
    for ci in 0..g.c_in {
        for ki in 0..KERNEL.0 {
            for kj in 0..KERNEL.1 {
                let row = ((ci * KERNEL.0 + ki) * KERNEL.1 + kj) * p;
                for oh in 0..g.h_out {
                    let ih = (oh * STRIDE.0 + ki) as isize - g.pad_top as isize;
                    let dst = &mut cols[row + oh * g.w_out..row + (oh + 1) * g.w_out];
                    if ih < 0 || ih >= g.h_in as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &x[(ci * g.h_in + ih as usize) * g.w_in..][..g.w_in];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * STRIDE.1 + kj) as isize - g.pad_left as isize;
                        *d = if iw < 0 || iw >= g.w_in as isize {
                            T::zero()
                        } else {
                            src[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add `cols` back onto `dx`.
pub(crate) fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    dx.fill(T::zero());
    let p = g.out_positions();
    for ci in 0..g.c_in {
        for ki in 0..KERNEL.0 {
            for kj in 0..KERNEL.1 {
                let row = ((ci * KERNEL.0 + ki) * KERNEL.1 + kj) * p;
                for oh in 0..g.h_out {
                    let ih = (oh * STRIDE.0 + ki) as isize - g.pad_top as isize;
                    if ih < 0 || ih >= g.h_in as isize {
                        continue;
                    }
                    let base = (ci * g.h_in + ih as usize) * g.w_in;
                    for ow in 0..g.w_out {
                        let iw = (ow * STRIDE.1 + kj) as isize - g.pad_left as isize;
                        if iw >= 0 && iw < g.w_in as isize {
                            dx[base + iw as usize] += cols[row + oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

/// `out = W * im2col(x) + b` for one example.
fn conv<T: Scalar>(g: &ConvGeom, w: &[T], b: &[T], x: &[T], cols: &mut Vec<T>, out: &mut [T]) {
    let p = g.out_positions();
    cols.resize(g.patch() * p, T::zero());
    im2col(g, x, cols);
    gemm(false, false, g.c_out, p, g.patch(), T::one(), w, cols, T::zero(), out);
    for (c, row) in out.chunks_mut(p).enumerate() {
        row.iter_mut().for_each(|v| *v += b[c]);
    }
}

fn dense_head<T: Scalar>(params: &CriticParams<T>, flat: &[T], n: usize, mask: Option<&[T]>) -> (Vec<T>, Vec<T>, Vec<T>) {
    let l = params.layout();
    let v = params.values();
    let d = l.dense;
    let mut pre = vec![T::zero(); n * d];
    gemm(false, true, n, d, l.flat, T::one(), flat, &v[l.dense_w.clone()], T::zero(), &mut pre);
    for row in pre.chunks_mut(d) {
        row.iter_mut().zip(&v[l.dense_b.clone()]).for_each(|(x, b)| *x += *b);
    }
    let mut act: Vec<T> = pre.iter().map(|&x| leaky(x)).collect();
    if let Some(m) = mask {
        act.iter_mut().zip(m).for_each(|(a, m)| *a *= *m);
    }
    let mut logits = vec![T::zero(); n * CLASSES];
    gemm(false, true, n, CLASSES, d, T::one(), &act, &v[l.head_w.clone()], T::zero(), &mut logits);
    for row in logits.chunks_mut(CLASSES) {
        row.iter_mut().zip(&v[l.head_b.clone()]).for_each(|(x, b)| *x += *b);
    }
    (pre, act, logits)
}

/// Eval-mode logits using running batch-norm statistics.
pub(crate) fn eval_logits<T: Scalar>(params: &CriticParams<T>, input: &[T]) -> [T; 2] {
    let l = params.layout();
    let v = params.values();
    let mut x = input.to_vec();
    let mut cols = Vec::new();
    for (g, s) in l.geoms.iter().zip(&l.convs) {
        let mut out = vec![T::zero(); g.out_size()];
        conv(g, &v[s.weight.clone()], &v[s.bias.clone()], &x, &mut cols, &mut out);
        let p = g.out_positions();
        for (c, row) in out.chunks_mut(p).enumerate() {
            let mean = params.running_mean()[s.stats + c];
            let scale = v[s.gamma.start + c] / (params.running_var()[s.stats + c] + T::of(BN_EPS)).sqrt();
            let shift = v[s.beta.start + c];
            row.iter_mut().for_each(|z| *z = leaky((*z - mean) * scale + shift));
        }
        x = out;
    }
    let (_, _, logits) = dense_head(params, &x, 1, None);
    [logits[0], logits[1]]
}

/// Inverted-dropout multipliers (`0` or `1 / (1 - rate)`), or `None` when
/// the rate is zero.
pub(crate) fn dropout_mask<T: Scalar, R: Rng + ?Sized>(n: usize, d: usize, rate: f64, rng: &mut R) -> Option<Vec<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = T::of(1.0 / (1.0 - rate));
    Some(
        (0..n * d)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect(),
    )
}

pub(crate) struct LayerCache<T> {
    /// Layer input, `n x in_size`.
    input: Vec<T>,
    /// Normalized pre-activation, `n x out_size`.
    xhat: Vec<T>,
    /// `gamma * xhat + beta`.
    pre: Vec<T>,
    inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    /// Unbiased batch variance.
    pub batch_var: Vec<T>,
}

pub(crate) struct TrainPass<T> {
    n: usize,
    pub layers: Vec<LayerCache<T>>,
    flat: Vec<T>,
    dense_pre: Vec<T>,
    dense_act: Vec<T>,
    mask: Option<Vec<T>>,
    pub logits: Vec<T>,
    pub probs: Vec<[f64; 2]>,
}

/// Training-mode forward pass over a minibatch, normalizing with batch
/// statistics.
pub(crate) fn forward_train<T: Scalar>(params: &CriticParams<T>, inputs: &[&[T]], mask: Option<Vec<T>>) -> TrainPass<T> {
    let l = params.layout();
    let v = params.values();
    let n = inputs.len();
    let mut x: Vec<T> = inputs.concat();
    let mut cols = Vec::new();
    let mut layers = Vec::with_capacity(l.geoms.len());
    for (g, s) in l.geoms.iter().zip(&l.convs) {
        let (isz, osz, p) = (g.in_size(), g.out_size(), g.out_positions());
        let mut z = vec![T::zero(); n * osz];
        for i in 0..n {
            conv(
                g,
                &v[s.weight.clone()],
                &v[s.bias.clone()],
                &x[i * isz..(i + 1) * isz],
                &mut cols,
                &mut z[i * osz..(i + 1) * osz],
            );
        }
        let m = (n * p) as f64;
        let mut xhat = z;
        let mut pre = vec![T::zero(); n * osz];
        let mut inv_std = vec![T::zero(); g.c_out];
        let mut batch_mean = vec![T::zero(); g.c_out];
        let mut batch_var = vec![T::zero(); g.c_out];
        for c in 0..g.c_out {
            let chunks = || (0..n).map(move |i| i * osz + c * p..i * osz + (c + 1) * p);
            let mut sum = 0.0;
            for r in chunks() {
                sum += xhat[r].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mean = sum / m;
            let mut sq = 0.0;
            for r in chunks() {
                sq += xhat[r].iter().map(|v| (v.f64() - mean).powi(2)).sum::<f64>();
            }
            let var = sq / m;
            let is = 1.0 / (var + BN_EPS).sqrt();
            let (mean_t, is_t) = (T::of(mean), T::of(is));
            let (gamma, beta) = (v[s.gamma.start + c], v[s.beta.start + c]);
            for r in chunks() {
                for (xh, y) in xhat[r.clone()].iter_mut().zip(&mut pre[r]) {
                    *xh = (*xh - mean_t) * is_t;
                    *y = gamma * *xh + beta;
                }
            }
            inv_std[c] = is_t;
            batch_mean[c] = mean_t;
            batch_var[c] = T::of(if m > 1.0 { var * m / (m - 1.0) } else { var });
        }
        let next: Vec<T> = pre.iter().map(|&y| leaky(y)).collect();
        layers.push(LayerCache {
            input: std::mem::replace(&mut x, next),
            xhat,
            pre,
            inv_std,
            batch_mean,
            batch_var,
        });
    }
    let (dense_pre, dense_act, logits) = dense_head(params, &x, n, mask.as_deref());
    let probs = logits.chunks(CLASSES).map(|z| super::softmax([z[0], z[1]])).collect();
    TrainPass {
        n,
        layers,
        flat: x,
        dense_pre,
        dense_act,
        mask,
        logits,
        probs,
    }
}

/// Gradient of the summed loss whose logit gradient is `dlogits`
/// (`n x 2`), in the flat parameter layout.
pub(crate) fn backward<T: Scalar>(params: &CriticParams<T>, pass: &TrainPass<T>, dlogits: &[T]) -> Vec<T> {
    let l = params.layout();
    let v = params.values();
    let n = pass.n;
    let d = l.dense;
    let mut grad = vec![T::zero(); l.total];

    gemm(true, false, CLASSES, d, n, T::one(), dlogits, &pass.dense_act, T::zero(), &mut grad[l.head_w.clone()]);
    for row in dlogits.chunks(CLASSES) {
        grad[l.head_b.start] += row[0];
        grad[l.head_b.start + 1] += row[1];
    }
    let mut du = vec![T::zero(); n * d];
    gemm(false, false, n, d, CLASSES, T::one(), dlogits, &v[l.head_w.clone()], T::zero(), &mut du);
    if let Some(m) = &pass.mask {
        du.iter_mut().zip(m).for_each(|(g, m)| *g *= *m);
    }
    du.iter_mut().zip(&pass.dense_pre).for_each(|(g, u)| *g *= leaky_grad(*u));
    gemm(true, false, d, l.flat, n, T::one(), &du, &pass.flat, T::zero(), &mut grad[l.dense_w.clone()]);
    for row in du.chunks(d) {
        grad[l.dense_b.clone()].iter_mut().zip(row).for_each(|(g, x)| *g += *x);
    }
    let mut da = vec![T::zero(); n * l.flat];
    gemm(false, false, n, l.flat, d, T::one(), &du, &v[l.dense_w.clone()], T::zero(), &mut da);

    let mut cols = Vec::new();
    let mut dcols = Vec::new();
    for (li, (g, s)) in l.geoms.iter().zip(&l.convs).enumerate().rev() {
        let cache = &pass.layers[li];
        let (isz, osz, p) = (g.in_size(), g.out_size(), g.out_positions());
        let m = T::of((n * p) as f64);
        // through the activation and batch norm, one channel at a time
        let mut dz = da;
        dz.iter_mut().zip(&cache.pre).for_each(|(g, y)| *g *= leaky_grad(*y));
        for c in 0..g.c_out {
            let ranges: Vec<_> = (0..n).map(|i| i * osz + c * p..i * osz + (c + 1) * p).collect();
            let (mut dgamma, mut dbeta) = (T::zero(), T::zero());
            for r in &ranges {
                for (dy, xh) in dz[r.clone()].iter().zip(&cache.xhat[r.clone()]) {
                    dgamma += *dy * *xh;
                    dbeta += *dy;
                }
            }
            grad[s.gamma.start + c] = dgamma;
            grad[s.beta.start + c] = dbeta;
            // dxhat = dy * gamma, so the sums above scale by gamma
            let gamma = v[s.gamma.start + c];
            let k = gamma * cache.inv_std[c] / m;
            for r in &ranges {
                for (dy, xh) in dz[r.clone()].iter_mut().zip(&cache.xhat[r.clone()]) {
                    *dy = k * (m * *dy - dbeta - *xh * dgamma);
                }
            }
        }
        let mut dx = vec![T::zero(); if li > 0 { n * isz } else { 0 }];
        cols.resize(g.patch() * p, T::zero());
        dcols.resize(g.patch() * p, T::zero());
        for i in 0..n {
            let dz_i = &dz[i * osz..(i + 1) * osz];
            for (c, row) in dz_i.chunks(p).enumerate() {
                grad[s.bias.start + c] += row.iter().copied().sum::<T>();
            }
            im2col(g, &cache.input[i * isz..(i + 1) * isz], &mut cols);
            gemm(false, true, g.c_out, g.patch(), p, T::one(), dz_i, &cols, T::one(), &mut grad[s.weight.clone()]);
            if li > 0 {
                gemm(true, false, g.patch(), p, g.c_out, T::one(), &v[s.weight.clone()], dz_i, T::zero(), &mut dcols);
                col2im(g, &dcols, &mut dx[i * isz..(i + 1) * isz]);
            }
        }
        da = dx;
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom {
            c_in: 2,
            h_in: 5,
            w_in: 11,
            c_out: 1,
            h_out: 3,
            w_out: 3,
            pad_top: 1,
            pad_left: 2,
        };
        let x: Vec<f64> = (0..g.in_size()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.patch() * g.out_positions()).map(|i| (i as f64 * 0.11).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &y, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn dropout_mask_scales_kept_units() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m: Vec<f64> = dropout_mask(100, 100, 0.25, &mut rng).unwrap();
        let kept = m.iter().filter(|&&x| x != 0.0).count() as f64 / 1e4;
        assert!((kept - 0.75).abs() < 0.02);
        assert!(m.iter().all(|&x| x == 0.0 || (x - 4.0 / 3.0).abs() < 1e-12));
        assert!(dropout_mask::<f64, _>(1, 4, 0.0, &mut rng).is_none());
    }
}
