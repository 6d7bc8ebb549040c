//! Forward and backward kernels on flat row-major buffers.
//!
//! Every reduction runs in `f64` in a fixed order that does not depend on
//! how work is split across threads. Parallel kernels only split over
//! independent outputs (usually the batch), and cross-sample reductions
//! sum per-sample partials in sample order.

use rayon::prelude::*;

use super::tensor::Real;

#[inline]
fn store<T: Real>(v: f64) -> T {
    T::from_f64(v)
}

/// `[r×k]·[k×c]`; each output sums over `k` in ascending order.
pub fn matmul<T: Real>(a: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::default(); r * c];
    out.par_chunks_mut(c).enumerate().for_each(|(i, row)| {
        let mut acc = vec![0.0f64; c];
        for kk in 0..k {
            let aik = a[i * k + kk].to_f64();
            let brow = &b[kk * c..(kk + 1) * c];
            for (s, &bv) in acc.iter_mut().zip(brow) {
                *s += aik * bv.to_f64();
            }
        }
        for (o, s) in row.iter_mut().zip(acc) {
            *o = store(s);
        }
    });
    out
}

/// `dA = dC·Bᵀ`.
pub fn matmul_grad_a<T: Real>(dc: &[T], b: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::default(); r * k];
    out.par_chunks_mut(k).enumerate().for_each(|(i, row)| {
        let dcrow = &dc[i * c..(i + 1) * c];
        for (kk, o) in row.iter_mut().enumerate() {
            let brow = &b[kk * c..(kk + 1) * c];
            let s: f64 = dcrow
                .iter()
                .zip(brow)
                .fold(0.0, |s, (&d, &bv)| s + d.to_f64() * bv.to_f64());
            *o = store(s);
        }
    });
    out
}

/// `dB = Aᵀ·dC`; each output sums over rows `i` in ascending order.
pub fn matmul_grad_b<T: Real>(a: &[T], dc: &[T], r: usize, k: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::default(); k * c];
    out.par_chunks_mut(c).enumerate().for_each(|(kk, row)| {
        let mut acc = vec![0.0f64; c];
        for i in 0..r {
            let aik = a[i * k + kk].to_f64();
            for (s, &d) in acc.iter_mut().zip(&dc[i * c..(i + 1) * c]) {
                *s += aik * d.to_f64();
            }
        }
        for (o, s) in row.iter_mut().zip(acc) {
            *o = store(s);
        }
    });
    out
}

/// Geometry of a 3×3, stride-1, zero-padded ("same") convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub n: usize,
    pub c: usize,
    pub f: usize,
    pub h: usize,
    pub w: usize,
}

/// Adds `scale · kernel ⋆ src` into `acc` for one (input plane, kernel) pair.
/// Offsets are visited kh-major then kw, matching the forward order.
#[inline]
fn correlate_plane<T: Real>(acc: &mut [f64], src: &[T], kernel: &[T], h: usize, w: usize) {
    for kh in 0..3 {
        for kw in 0..3 {
            let wv = kernel[kh * 3 + kw].to_f64();
            let dy = kh as isize - 1;
            let dx = kw as isize - 1;
            let y0 = (-dy).max(0) as usize;
            let y1 = (h as isize - dy).min(h as isize) as usize;
            let x0 = (-dx).max(0) as usize;
            let x1 = (w as isize - dx).min(w as isize) as usize;
            for oy in y0..y1 {
                let iy = (oy as isize + dy) as usize;
                let arow = &mut acc[oy * w + x0..oy * w + x1];
                let srow = &src
                    [iy * w + (x0 as isize + dx) as usize..iy * w + (x1 as isize + dx) as usize];
                for (a, &s) in arow.iter_mut().zip(srow) {
                    *a += wv * s.to_f64();
                }
            }
        }
    }
}

/// Cross-correlation. Per output the sum runs over input channel, then
/// kernel row, then kernel column; the bias is added last.
pub fn conv2d<T: Real>(x: &[T], wt: &[T], bias: &[T], d: ConvDims) -> Vec<T> {
    let plane = d.h * d.w;
    let mut out = vec![T::default(); d.n * d.f * plane];
    out.par_chunks_mut(d.f * plane)
        .enumerate()
        .for_each(|(s, sample_out)| {
            let xs = &x[s * d.c * plane..(s + 1) * d.c * plane];
            let mut acc = vec![0.0f64; plane];
            for f in 0..d.f {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for c in 0..d.c {
                    let kernel = &wt[(f * d.c + c) * 9..(f * d.c + c + 1) * 9];
                    correlate_plane(&mut acc, &xs[c * plane..(c + 1) * plane], kernel, d.h, d.w);
                }
                let b = bias[f].to_f64();
                for (o, &a) in sample_out[f * plane..(f + 1) * plane].iter_mut().zip(&acc) {
                    *o = store(a + b);
                }
            }
        });
    out
}

/// Gradient wrt the input: a full correlation of `dy` with the flipped kernel.
pub fn conv2d_grad_x<T: Real>(dy: &[T], wt: &[T], d: ConvDims) -> Vec<T> {
    let plane = d.h * d.w;
    let mut flipped = vec![T::default(); wt.len()];
    for f in 0..d.f {
        for c in 0..d.c {
            let base = (f * d.c + c) * 9;
            for k in 0..9 {
                flipped[base + k] = wt[base + 8 - k];
            }
        }
    }
    let mut out = vec![T::default(); d.n * d.c * plane];
    out.par_chunks_mut(d.c * plane)
        .enumerate()
        .for_each(|(s, sample_dx)| {
            let dys = &dy[s * d.f * plane..(s + 1) * d.f * plane];
            let mut acc = vec![0.0f64; plane];
            for c in 0..d.c {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for f in 0..d.f {
                    let kernel = &flipped[(f * d.c + c) * 9..(f * d.c + c + 1) * 9];
                    correlate_plane(&mut acc, &dys[f * plane..(f + 1) * plane], kernel, d.h, d.w);
                }
                for (o, &a) in sample_dx[c * plane..(c + 1) * plane].iter_mut().zip(&acc) {
                    *o = store(a);
                }
            }
        });
    out
}

/// Gradients wrt weights and bias. Per-sample partials are reduced in
/// sample order.
pub fn conv2d_grad_params<T: Real>(x: &[T], dy: &[T], d: ConvDims) -> (Vec<T>, Vec<T>) {
    let plane = d.h * d.w;
    let partials: Vec<(Vec<f64>, Vec<f64>)> = (0..d.n)
        .into_par_iter()
        .map(|s| {
            let xs = &x[s * d.c * plane..(s + 1) * d.c * plane];
            let dys = &dy[s * d.f * plane..(s + 1) * d.f * plane];
            let mut dw = vec![0.0f64; d.f * d.c * 9];
            let mut db = vec![0.0f64; d.f];
            for f in 0..d.f {
                let g = &dys[f * plane..(f + 1) * plane];
                db[f] = g.iter().map(|v| v.to_f64()).sum();
                for c in 0..d.c {
                    let src = &xs[c * plane..(c + 1) * plane];
                    for kh in 0..3 {
                        for kw in 0..3 {
                            let dyo = kh as isize - 1;
                            let dxo = kw as isize - 1;
                            let mut s_acc = 0.0f64;
                            for oy in 0..d.h {
                                let iy = oy as isize + dyo;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                for ox in 0..d.w {
                                    let ix = ox as isize + dxo;
                                    if ix < 0 || ix >= d.w as isize {
                                        continue;
                                    }
                                    s_acc += g[oy * d.w + ox].to_f64()
                                        * src[iy as usize * d.w + ix as usize].to_f64();
                                }
                            }
                            dw[(f * d.c + c) * 9 + kh * 3 + kw] = s_acc;
                        }
                    }
                }
            }
            (dw, db)
        })
        .collect();
    let mut dw = vec![0.0f64; d.f * d.c * 9];
    let mut db = vec![0.0f64; d.f];
    for (pw, pb) in &partials {
        dw.iter_mut().zip(pw).for_each(|(a, b)| *a += b);
        db.iter_mut().zip(pb).for_each(|(a, b)| *a += b);
    }
    (
        dw.into_iter().map(store).collect(),
        db.into_iter().map(store).collect(),
    )
}

/// 2×2 stride-2 max pooling over `[planes, h, w]`. Returns the pooled values
/// and, per output, the flat input index of the selected element. Ties go
/// to the first element in row-major window order.
pub fn maxpool2<T: Real>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + (2 * oy) * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Row-wise `exp(x − rowmax) / Σ`.
pub fn softmax_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for (o, &v) in dst.iter_mut().zip(row) {
            *o = (v - max).exp();
            total += *o;
        }
        dst.iter_mut().for_each(|o| *o /= total);
    }
    out
}

/// Row-wise log-sum-exp.
pub fn logsumexp_rows(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    (0..rows)
        .map(|r| {
            let row = &x[r * cols..(r + 1) * cols];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let c = matmul(&[1.0f64, 2.0], &[3.0, 4.0], 1, 2, 1);
        assert_eq!(c, vec![11.0]);
    }

    #[test]
    fn conv_all_ones() {
        let d = ConvDims {
            n: 1,
            c: 1,
            f: 1,
            h: 4,
            w: 4,
        };
        let y = conv2d(&[1.0f64; 16], &[1.0; 9], &[0.0], d);
        assert_eq!(y[0], 4.0);
        assert_eq!(y[3], 4.0);
        assert_eq!(y[1], 6.0);
        assert_eq!(y[5], 9.0);
        assert_eq!(y[10], 9.0);
    }

    #[test]
    fn conv_grad_x_matches_adjoint() {
        // <conv(x), g> == <x, conv_grad_x(g)> for zero bias.
        let d = ConvDims {
            n: 2,
            c: 2,
            f: 3,
            h: 4,
            w: 6,
        };
        let mut r = crate::rng::rng(5);
        use rand::Rng as _;
        let x: Vec<f64> = (0..d.n * d.c * 24)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let w: Vec<f64> = (0..d.f * d.c * 9)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let g: Vec<f64> = (0..d.n * d.f * 24)
            .map(|_| r.random_range(-1.0..1.0))
            .collect();
        let y = conv2d(&x, &w, &[0.0; 3], d);
        let dx = conv2d_grad_x(&g, &w, d);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_ties_pick_first() {
        let (v, a) = maxpool2(&[5.0f64; 4], 1, 2, 2);
        assert_eq!(v, vec![5.0]);
        assert_eq!(a, vec![0]);
    }
}
