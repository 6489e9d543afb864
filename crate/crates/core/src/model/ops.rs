//! Row-major dense kernels with hand-written backward passes.

use crate::scalar::Scalar;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Offsets of a dense layer `y = x W + b` inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
    pub inp: usize,
    pub out: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Norm {
    pub g: usize,
    pub b: usize,
    pub dim: usize,
}

impl Linear {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T], n: usize) -> Vec<T> {
        let bias = &p[self.b..self.b + self.out];
        let mut y = Vec::with_capacity(n * self.out);
        for _ in 0..n {
            y.extend_from_slice(bias);
        }
        let w = &p[self.w..self.w + self.inp * self.out];
        T::gemm(
            n,
            self.inp,
            self.out,
            T::one(),
            x,
            self.inp as isize,
            1,
            w,
            self.out as isize,
            1,
            T::one(),
            &mut y,
            self.out as isize,
            1,
        );
        y
    }

    /// Accumulates parameter gradients into `g`; returns `dx` when asked.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        x: &[T],
        dy: &[T],
        n: usize,
        want_dx: bool,
    ) -> Option<Vec<T>> {
        let (inp, out) = (self.inp, self.out);
        {
            let gw = &mut g[self.w..self.w + inp * out];
            T::gemm(inp, n, out, T::one(), x, 1, inp as isize, dy, out as isize, 1, T::one(), gw, out as isize, 1);
        }
        {
            let gb = &mut g[self.b..self.b + out];
            for row in dy.chunks_exact(out) {
                for (a, &v) in gb.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        if !want_dx {
            return None;
        }
        let mut dx = vec![T::zero(); n * inp];
        let w = &p[self.w..self.w + inp * out];
        T::gemm(n, out, inp, T::one(), dy, out as isize, 1, w, 1, out as isize, T::zero(), &mut dx, inp as isize, 1);
        Some(dx)
    }
}

pub(crate) struct NormCache<T> {
    pub xhat: Vec<T>,
    pub rstd: Vec<T>,
}

impl Norm {
    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> (Vec<T>, NormCache<T>) {
        let d = self.dim;
        let (gain, bias) = (&p[self.g..self.g + d], &p[self.b..self.b + d]);
        let n = x.len() / d;
        let mut y = vec![T::zero(); x.len()];
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = Vec::with_capacity(n);
        let inv_d = T::one() / T::of(d as f64);
        for r in 0..n {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + T::of(LN_EPS)).sqrt();
            for i in 0..d {
                let h = (row[i] - mean) * rs;
                xhat[r * d + i] = h;
                y[r * d + i] = h * gain[i] + bias[i];
            }
            rstd.push(rs);
        }
        (y, NormCache { xhat, rstd })
    }

    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], cache: &NormCache<T>, dy: &[T]) -> Vec<T> {
        let d = self.dim;
        let inv_d = T::one() / T::of(d as f64);
        let mut dx = vec![T::zero(); dy.len()];
        let mut dxhat = vec![T::zero(); d];
        for (r, &rs) in cache.rstd.iter().enumerate() {
            let xh = &cache.xhat[r * d..(r + 1) * d];
            let dyr = &dy[r * d..(r + 1) * d];
            let (mut s1, mut s2) = (T::zero(), T::zero());
            for i in 0..d {
                g[self.g + i] += dyr[i] * xh[i];
                g[self.b + i] += dyr[i];
                dxhat[i] = dyr[i] * p[self.g + i];
                s1 += dxhat[i];
                s2 += dxhat[i] * xh[i];
            }
            let (m1, m2) = (s1 * inv_d, s2 * inv_d);
            for i in 0..d {
                dx[r * d + i] = rs * (dxhat[i] - m1 - xh[i] * m2);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
fn gelu_tanh<T: Scalar>(u: &[T]) -> Vec<T> {
    let (c, a) = (T::of(GELU_C), T::of(GELU_A));
    let mut t: Vec<T> = u.iter().map(|&x| c * (x + a * x * x * x)).collect();
    T::tanh_in_place(&mut t);
    t
}

pub(crate) fn gelu<T: Scalar>(u: &[T]) -> Vec<T> {
    let half = T::of(0.5);
    let mut t = gelu_tanh(u);
    for (y, &x) in t.iter_mut().zip(u) {
        *y = half * x * (T::one() + *y);
    }
    t
}

pub(crate) fn gelu_backward<T: Scalar>(u: &[T], dy: &mut [T]) {
    let (c, a, half, three) = (T::of(GELU_C), T::of(GELU_A), T::of(0.5), T::of(3.0));
    let t = gelu_tanh(u);
    for ((d, &x), &t) in dy.iter_mut().zip(u).zip(&t) {
        let dt = (T::one() - t * t) * c * (T::one() + three * a * x * x);
        *d *= half * (T::one() + t) + half * x * dt;
    }
}

pub(crate) fn add_in_place<T: Scalar>(a: &mut [T], b: &[T]) {
    for (x, &y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Multi-head scaled dot-product attention block (projections included).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

pub(crate) struct AttnCache<T> {
    pub q: Vec<T>,
    pub k: Vec<T>,
    pub v: Vec<T>,
    /// Softmax weights, `[heads, nq, nk]`.
    pub a: Vec<T>,
    pub o: Vec<T>,
    pub nq: usize,
    pub nk: usize,
}

fn softmax_rows<T: Scalar>(s: &mut [T], cols: usize) {
    for row in s.chunks_exact_mut(cols) {
        let mut lanes = [row[0]; 8];
        let chunks = row.chunks_exact(8);
        let rest = chunks.remainder();
        for c in chunks {
            for i in 0..8 {
                lanes[i] = lanes[i].max(c[i]);
            }
        }
        let mx = rest.iter().chain(&lanes).fold(row[0], |m, &v| m.max(v));
        for v in row.iter_mut() {
            *v -= mx;
        }
        T::exp_in_place(row);
        let sum = T::sum_lanes(row);
        let inv = T::one() / sum;
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

impl Attention {
    fn dims(&self) -> (usize, usize) {
        let d = self.q.out;
        (d, d / self.heads)
    }

    /// `xq` is `[nq, d]`, `xkv` is `[nk, d]`.
    pub fn forward<T: Scalar>(&self, p: &[T], xq: &[T], xkv: &[T], nq: usize, nk: usize) -> (Vec<T>, AttnCache<T>) {
        let (d, dh) = self.dims();
        let q = self.q.forward(p, xq, nq);
        let k = self.k.forward(p, xkv, nk);
        let v = self.v.forward(p, xkv, nk);
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut a = vec![T::zero(); self.heads * nq * nk];
        let mut o = vec![T::zero(); nq * d];
        let ld = d as isize;
        for h in 0..self.heads {
            let ah = &mut a[h * nq * nk..(h + 1) * nq * nk];
            let off = h * dh;
            T::gemm(nq, dh, nk, scale, &q[off..], ld, 1, &k[off..], 1, ld, T::zero(), ah, nk as isize, 1);
            softmax_rows(ah, nk);
            T::gemm(nq, nk, dh, T::one(), ah, nk as isize, 1, &v[off..], ld, 1, T::zero(), &mut o[off..], ld, 1);
        }
        let out = self.o.forward(p, &o, nq);
        (out, AttnCache { q, k, v, a, o, nq, nk })
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        c: &AttnCache<T>,
        xq: &[T],
        xkv: &[T],
        dout: &[T],
    ) -> (Vec<T>, Vec<T>) {
        let (d, dh) = self.dims();
        let (nq, nk) = (c.nq, c.nk);
        let d_o = self.o.backward(p, g, &c.o, dout, nq, true).unwrap();
        let scale = T::one() / T::of(dh as f64).sqrt();
        let mut dq = vec![T::zero(); nq * d];
        let mut dk = vec![T::zero(); nk * d];
        let mut dv = vec![T::zero(); nk * d];
        let mut ds = vec![T::zero(); nq * nk];
        let ld = d as isize;
        for h in 0..self.heads {
            let ah = &c.a[h * nq * nk..(h + 1) * nq * nk];
            let off = h * dh;
            T::gemm(nq, dh, nk, T::one(), &d_o[off..], ld, 1, &c.v[off..], 1, ld, T::zero(), &mut ds, nk as isize, 1);
            T::gemm(nk, nq, dh, T::one(), ah, 1, nk as isize, &d_o[off..], ld, 1, T::zero(), &mut dv[off..], ld, 1);
            for (srow, arow) in ds.chunks_exact_mut(nk).zip(ah.chunks_exact(nk)) {
                let dot = T::dot_lanes(srow, arow);
                for (s, &a) in srow.iter_mut().zip(arow) {
                    *s = a * (*s - dot);
                }
            }
            T::gemm(nq, nk, dh, scale, &ds, nk as isize, 1, &c.k[off..], ld, 1, T::zero(), &mut dq[off..], ld, 1);
            T::gemm(nk, nq, dh, scale, &ds, 1, nk as isize, &c.q[off..], ld, 1, T::zero(), &mut dk[off..], ld, 1);
        }
        let dxq = self.q.backward(p, g, xq, &dq, nq, true).unwrap();
        let mut dxkv = self.k.backward(p, g, xkv, &dk, nk, true).unwrap();
        add_in_place(&mut dxkv, &self.v.backward(p, g, xkv, &dv, nk, true).unwrap());
        (dxq, dxkv)
    }
}
