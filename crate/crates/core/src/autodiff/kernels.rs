//! Raw 1-D convolution and matrix kernels shared by forward and backward ops.
//!
//! Layouts: signals `[batch, channels, len]`, conv weights `[out, in, k]`.

/// Range of output positions `t` for which `t*stride + k - pad` lies in `[0, len)`.
#[inline]
fn valid_range(len: usize, out_len: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let k = k as isize;
    let pad = pad as isize;
    let s = stride as isize;
    // t*s >= pad - k
    let lo_num = pad - k;
    let t_min = if lo_num <= 0 { 0 } else { (lo_num + s - 1) / s };
    // t*s <= len - 1 + pad - k
    let hi_num = len as isize - 1 + pad - k;
    if hi_num < 0 {
        return (0, 0);
    }
    let t_max = (hi_num / s + 1).min(out_len as isize);
    if t_min >= t_max {
        (0, 0)
    } else {
        (t_min as usize, t_max as usize)
    }
}

pub fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if padded < k || stride == 0 {
        None
    } else {
        Some((padded - k) / stride + 1)
    }
}

pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub len: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_len: usize,
}

/// Unfold `x [B, c_in, len]` into `[c_in * k, B * out_len]` (zero padded).
fn im2col(x: &[f64], d: &ConvDims) -> Vec<f64> {
    let n = d.batch * d.out_len;
    let mut cols = vec![0.0; d.c_in * d.k * n];
    for i in 0..d.c_in {
        for kk in 0..d.k {
            let (t0, t1) = valid_range(d.len, d.out_len, kk, d.stride, d.pad);
            let row = &mut cols[(i * d.k + kk) * n..][..n];
            for b in 0..d.batch {
                let xrow = &x[(b * d.c_in + i) * d.len..][..d.len];
                let dst = &mut row[b * d.out_len..][..d.out_len];
                for t in t0..t1 {
                    dst[t] = xrow[t * d.stride + kk - d.pad];
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `[B, c_in, len]`.
fn col2im(cols: &[f64], d: &ConvDims) -> Vec<f64> {
    let n = d.batch * d.out_len;
    let mut x = vec![0.0; d.batch * d.c_in * d.len];
    for i in 0..d.c_in {
        for kk in 0..d.k {
            let (t0, t1) = valid_range(d.len, d.out_len, kk, d.stride, d.pad);
            let row = &cols[(i * d.k + kk) * n..][..n];
            for b in 0..d.batch {
                let xrow = &mut x[(b * d.c_in + i) * d.len..][..d.len];
                let src = &row[b * d.out_len..][..d.out_len];
                for t in t0..t1 {
                    xrow[t * d.stride + kk - d.pad] += src[t];
                }
            }
        }
    }
    x
}

/// `[B, c, len]` to `[c, B * len]`.
fn channels_first(y: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(c * batch + b) * len..][..len].copy_from_slice(&y[(b * channels + c) * len..][..len]);
        }
    }
    out
}

/// `[c, B * len]` to `[B, c, len]`.
fn batch_first(y: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for b in 0..batch {
        for c in 0..channels {
            out[(b * channels + c) * len..][..len].copy_from_slice(&y[(c * batch + b) * len..][..len]);
        }
    }
    out
}

/// y[b,o,t] = sum_{i,k} w[o,i,k] x[b,i,t*s+k-p]
pub fn conv_forward(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let cols = im2col(x, d);
    let y = matmul(w, &cols, d.c_out, d.c_in * d.k, d.batch * d.out_len);
    batch_first(&y, d.batch, d.c_out, d.out_len)
}

/// Adjoint of [`conv_forward`] with respect to its input.
pub fn conv_backward_input(gy: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
    let gy = channels_first(gy, d.batch, d.c_out, d.out_len);
    let gcols = matmul_lhs_t(w, &gy, d.c_out, d.c_in * d.k, d.batch * d.out_len);
    col2im(&gcols, d)
}

/// Gradient of [`conv_forward`] with respect to its weights.
pub fn conv_backward_weight(x: &[f64], gy: &[f64], d: &ConvDims) -> Vec<f64> {
    let cols = im2col(x, d);
    let gy = channels_first(gy, d.batch, d.c_out, d.out_len);
    matmul_rhs_t(&gy, &cols, d.c_out, d.c_in * d.k, d.batch * d.out_len)
}

/// Sum of `g[b,c,t]` over batch and positions, per channel.
pub fn channel_sums(g: &[f64], batch: usize, channels: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; channels];
    for b in 0..batch {
        for (c, o) in out.iter_mut().enumerate() {
            *o += g[(b * channels + c) * len..][..len].iter().sum::<f64>();
        }
    }
    out
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// c[m,n] = a[m,k] b[k,n]
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// c[m,k] = g[m,n] b[k,n]^T
pub fn matmul_rhs_t(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            c[i * k + p] = dot(grow, brow);
        }
    }
    c
}

/// c[k,n] = a[m,k]^T g[m,n]
pub fn matmul_lhs_t(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, gv) in crow.iter_mut().zip(grow) {
                *cv += av * gv;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(x: &[f64], w: &[f64], d: &ConvDims) -> Vec<f64> {
        let mut y = vec![0.0; d.batch * d.c_out * d.out_len];
        for b in 0..d.batch {
            for o in 0..d.c_out {
                for t in 0..d.out_len {
                    let mut acc = 0.0;
                    for i in 0..d.c_in {
                        for kk in 0..d.k {
                            let pos = (t * d.stride + kk) as isize - d.pad as isize;
                            if pos >= 0 && (pos as usize) < d.len {
                                acc += w[(o * d.c_in + i) * d.k + kk]
                                    * x[(b * d.c_in + i) * d.len + pos as usize];
                            }
                        }
                    }
                    y[(b * d.c_out + o) * d.out_len + t] = acc;
                }
            }
        }
        y
    }

    #[test]
    fn fast_conv_matches_naive_loop() {
        for &(len, k, stride, pad) in &[(5, 3, 1, 0), (9, 4, 2, 1), (7, 5, 2, 2), (4, 4, 3, 3), (16, 7, 2, 3)] {
            let out_len = conv_out_len(len, k, stride, pad).unwrap();
            let d = ConvDims { batch: 2, c_in: 3, len, c_out: 2, k, stride, pad, out_len };
            let x: Vec<f64> = (0..2 * 3 * len).map(|i| (i as f64 * 0.37).sin()).collect();
            let w: Vec<f64> = (0..2 * 3 * k).map(|i| (i as f64 * 0.71).cos()).collect();
            let a = conv_forward(&x, &w, &d);
            let b = naive_conv(&x, &w, &d);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_kernels_match_naive_adjoint() {
        let (len, k, stride, pad) = (11, 5, 2, 2);
        let out_len = conv_out_len(len, k, stride, pad).unwrap();
        let d = ConvDims { batch: 3, c_in: 2, len, c_out: 4, k, stride, pad, out_len };
        let x: Vec<f64> = (0..3 * 2 * len).map(|i| (i as f64 * 0.13).sin()).collect();
        let w: Vec<f64> = (0..4 * 2 * k).map(|i| (i as f64 * 0.29).cos()).collect();
        let gy: Vec<f64> = (0..3 * 4 * out_len).map(|i| (i as f64 * 0.53).sin()).collect();
        // <gy, conv(x, w)> is bilinear; its partials are the two backward kernels.
        let inner = |x: &[f64], w: &[f64]| naive_conv(x, w, &d).iter().zip(&gy).map(|(a, b)| a * b).sum::<f64>();
        let gx = conv_backward_input(&gy, &w, &d);
        for (j, g) in gx.iter().enumerate() {
            let mut e = vec![0.0; x.len()];
            e[j] = 1.0;
            assert!((inner(&e, &w) - g).abs() < 1e-12);
        }
        let gw = conv_backward_weight(&x, &gy, &d);
        for (j, g) in gw.iter().enumerate() {
            let mut e = vec![0.0; w.len()];
            e[j] = 1.0;
            assert!((inner(&x, &e) - g).abs() < 1e-12);
        }
    }

    #[test]
    fn out_len_formula() {
        assert_eq!(conv_out_len(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_len(64, 5, 2, 2), Some(32));
        assert_eq!(conv_out_len(2, 3, 1, 0), None);
    }
}
