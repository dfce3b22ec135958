//! Dense NCHW kernels with hand-written adjoints.
//!
//! Convolutions go through im2col and `matrixmultiply`; every reduction runs
//! in a fixed order so results are bit-reproducible.

/// A batch of feature maps, `[n][c][h][w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.c * self.plane();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.c * self.plane();
        &mut self.data[i * s..(i + 1) * s]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.k) / self.stride + 1, (w + 2 * self.pad - self.k) / self.stride + 1)
    }

    pub fn weights(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `c[m x n] = alpha * a[m x k] b[k x n] + beta * c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: usize, csa: usize, b: &[f64], rsb: usize, csb: usize, beta: f64, c: &mut [f64]) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the strides describe in-bounds views of the given slices; the
    // callers below size every buffer to match.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(x: &[f64], s: &ConvShape, h: usize, w: usize, col: &mut [f64]) {
    let (ho, wo) = s.out_size(h, w);
    let p = ho * wo;
    for ci in 0..s.cin {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &mut col[((ci * s.k + ky) * s.k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        *d = if ix >= 0 && ix < w as isize { src[ix as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], s: &ConvShape, h: usize, w: usize, dx: &mut [f64]) {
    let (ho, wo) = s.out_size(h, w);
    let p = ho * wo;
    for ci in 0..s.cin {
        let plane = &mut dx[ci * h * w..(ci + 1) * h * w];
        for ky in 0..s.k {
            for kx in 0..s.k {
                let row = &col[((ci * s.k + ky) * s.k + kx) * p..][..p];
                for oy in 0..ho {
                    let iy = (oy * s.stride + ky) as isize - s.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * s.stride + kx) as isize - s.pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv_forward(x: &Act, weight: &[f64], s: &ConvShape) -> Act {
    debug_assert_eq!(x.c, s.cin);
    let (ho, wo) = s.out_size(x.h, x.w);
    let p = ho * wo;
    let kk = s.cin * s.k * s.k;
    let mut out = Act::zeros(x.n, s.cout, ho, wo);
    let mut col = if s.is_pointwise() { Vec::new() } else { vec![0.0; kk * p] };
    for i in 0..x.n {
        let xi = x.sample(i);
        let b: &[f64] = if s.is_pointwise() {
            xi
        } else {
            im2col(xi, s, x.h, x.w, &mut col);
            &col
        };
        gemm(s.cout, kk, p, weight, kk, 1, b, p, 1, 0.0, out.sample_mut(i));
    }
    out
}

/// Returns `(dx, dweight)`.
pub fn conv_backward(x: &Act, weight: &[f64], s: &ConvShape, dy: &Act) -> (Act, Vec<f64>) {
    let p = dy.plane();
    let kk = s.cin * s.k * s.k;
    let mut dw = vec![0.0; s.weights()];
    let mut dx = Act::zeros(x.n, x.c, x.h, x.w);
    let mut col = vec![0.0; kk * p];
    let mut dcol = vec![0.0; kk * p];
    for i in 0..x.n {
        let xi = x.sample(i);
        let dyi = dy.sample(i);
        if s.is_pointwise() {
            gemm(s.cout, p, kk, dyi, p, 1, xi, 1, p, 1.0, &mut dw);
            gemm(kk, s.cout, p, weight, 1, kk, dyi, p, 1, 0.0, dx.sample_mut(i));
        } else {
            im2col(xi, s, x.h, x.w, &mut col);
            // dW += dY col^T
            gemm(s.cout, p, kk, dyi, p, 1, &col, 1, p, 1.0, &mut dw);
            // dcol = W^T dY
            gemm(kk, s.cout, p, weight, 1, kk, dyi, p, 1, 0.0, &mut dcol);
            col2im(&dcol, s, x.h, x.w, dx.sample_mut(i));
        }
    }
    (dx, dw)
}

/// Saved state for the batch-normalization adjoint.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Act,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased batch variance.
    pub var: Vec<f64>,
}

pub fn bn_forward_train(x: &Act, gamma: &[f64], beta: &[f64], eps: f64) -> (Act, BnCache) {
    let (n, c, p) = (x.n, x.c, x.plane());
    let m = (n * p) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ch in 0..c {
        let mut s = 0.0;
        for i in 0..n {
            s += x.data[(i * c + ch) * p..][..p].iter().sum::<f64>();
        }
        let mu = s / m;
        let mut v = 0.0;
        for i in 0..n {
            v += x.data[(i * c + ch) * p..][..p].iter().map(|t| (t - mu) * (t - mu)).sum::<f64>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut xhat = Act::zeros(n, c, x.h, x.w);
    let mut y = Act::zeros(n, c, x.h, x.w);
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * p;
            for k in base..base + p {
                let h = (x.data[k] - mean[ch]) * inv_std[ch];
                xhat.data[k] = h;
                y.data[k] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std, mean, var })
}

pub fn bn_forward_eval(x: &Act, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64], eps: f64) -> Act {
    let (c, p) = (x.c, x.plane());
    let mut y = x.clone();
    for i in 0..x.n {
        for ch in 0..c {
            let scale = gamma[ch] / (var[ch] + eps).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            for v in &mut y.data[(i * c + ch) * p..][..p] {
                *v = *v * scale + shift;
            }
        }
    }
    y
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn bn_backward(cache: &BnCache, gamma: &[f64], dy: &Act) -> (Act, Vec<f64>, Vec<f64>) {
    let (n, c, p) = (dy.n, dy.c, dy.plane());
    let m = (n * p) as f64;
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * p;
            for k in base..base + p {
                dbeta[ch] += dy.data[k];
                dgamma[ch] += dy.data[k] * cache.xhat.data[k];
            }
        }
    }
    let mut dx = Act::zeros(n, c, dy.h, dy.w);
    for i in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * cache.inv_std[ch] / m;
            let base = (i * c + ch) * p;
            for k in base..base + p {
                dx.data[k] = scale * (m * dy.data[k] - dbeta[ch] - cache.xhat.data[k] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_inplace(x: &mut Act) {
    for v in &mut x.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zero `dy` wherever the ReLU output `y` was not positive.
pub fn relu_backward_inplace(y: &Act, dy: &mut Act) {
    for (g, &v) in dy.data.iter_mut().zip(&y.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// Global average pool to `[n][c]`.
pub fn avg_pool(x: &Act) -> Vec<f64> {
    let p = x.plane();
    x.data.chunks_exact(p).map(|plane| plane.iter().sum::<f64>() / p as f64).collect()
}

pub fn avg_pool_backward(dpool: &[f64], n: usize, c: usize, h: usize, w: usize) -> Act {
    let p = h * w;
    let mut dx = Act::zeros(n, c, h, w);
    for (plane, &g) in dx.data.chunks_exact_mut(p).zip(dpool) {
        plane.fill(g / p as f64);
    }
    dx
}

/// `y[n][out] = x[n][in] W^T + b`, `W` stored `[out][in]`.
pub fn linear_forward(x: &[f64], n: usize, fin: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let fout = bias.len();
    let mut y: Vec<f64> = (0..n).flat_map(|_| bias.iter().copied()).collect();
    gemm(n, fin, fout, x, fin, 1, weight, 1, fin, 1.0, &mut y);
    y
}

/// Returns `(dx, dweight, dbias)`.
pub fn linear_backward(x: &[f64], n: usize, fin: usize, weight: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let fout = dy.len() / n;
    let mut dx = vec![0.0; n * fin];
    gemm(n, fout, fin, dy, fout, 1, weight, fin, 1, 0.0, &mut dx);
    let mut dw = vec![0.0; fout * fin];
    gemm(fout, n, fin, dy, 1, fout, x, fin, 1, 0.0, &mut dw);
    let mut db = vec![0.0; fout];
    for row in dy.chunks_exact(fout) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    (dx, dw, db)
}
