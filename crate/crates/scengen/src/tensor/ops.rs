//! Differentiable primitive operations on [`Var`]s.
//!
//! Every op computes its forward value eagerly and registers a backward
//! closure producing exact gradients of the recorded scalar loss. Shape
//! mismatches are construction-time panics naming both shapes.

use super::tape::BackwardFn;
use super::{numel_of, strides_of, Element, Tensor, Var};

fn same_tape<E: Element>(a: &Var<E>, b: &Var<E>) {
    assert!(a.tape.same_as(&b.tape), "vars recorded on different tapes");
}

/// numpy-style broadcast of two shapes (right-aligned, 1 stretches).
pub(crate) fn broadcast_shapes(a: &[usize], b: &[usize]) -> Vec<usize> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            panic!("shapes {a:?} and {b:?} are not broadcast-compatible");
        };
    }
    out
}

/// Per-output-dim stride into `shape` when broadcast to `out_shape`
/// (0 where the input dimension is stretched).
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = strides_of(shape);
    let offset = out_shape.len() - shape.len();
    (0..out_shape.len())
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                strides[i - offset]
            }
        })
        .collect()
}

/// Walk an output shape in row-major order while tracking a (possibly
/// broadcast) source offset, without per-element index arithmetic.
struct Odometer {
    counters: Vec<usize>,
    shape: Vec<usize>,
    strides: Vec<usize>,
    offset: usize,
}

impl Odometer {
    fn new(out_shape: &[usize], strides: Vec<usize>) -> Self {
        Self { counters: vec![0; out_shape.len()], shape: out_shape.to_vec(), strides, offset: 0 }
    }

    #[inline]
    fn advance(&mut self) {
        for d in (0..self.shape.len()).rev() {
            self.counters[d] += 1;
            self.offset += self.strides[d];
            if self.counters[d] < self.shape[d] {
                return;
            }
            self.counters[d] = 0;
            self.offset -= self.strides[d] * self.shape[d];
        }
    }
}

fn binary_broadcast<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    f: impl Fn(E, E) -> E,
) -> Tensor<E> {
    let ad = a.data();
    let bd = b.data();
    if a.shape() == b.shape() {
        let out = ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::from_vec(a.shape(), out);
    }
    if b.numel() == 1 {
        let y = bd[0];
        return Tensor::from_vec(a.shape(), ad.iter().map(|&x| f(x, y)).collect());
    }
    if a.numel() == 1 {
        let x = ad[0];
        return Tensor::from_vec(b.shape(), bd.iter().map(|&y| f(x, y)).collect());
    }
    let out_shape = broadcast_shapes(a.shape(), b.shape());
    let n = numel_of(&out_shape);
    let mut oa = Odometer::new(&out_shape, broadcast_strides(a.shape(), &out_shape));
    let mut ob = Odometer::new(&out_shape, broadcast_strides(b.shape(), &out_shape));
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f(ad[oa.offset], bd[ob.offset]));
        oa.advance();
        ob.advance();
    }
    Tensor::from_vec(&out_shape, out)
}

/// Sum `grad` down to `target` shape (inverse of broadcasting).
pub(crate) fn reduce_to_shape<E: Element>(grad: &Tensor<E>, target: &[usize]) -> Tensor<E> {
    if grad.shape() == target {
        return grad.clone();
    }
    let mut acc = vec![E::zero(); numel_of(target)];
    if acc.len() == 1 {
        acc[0] = grad.data().iter().fold(E::zero(), |s, &g| s + g);
        return Tensor::from_vec(target, acc);
    }
    let out_shape = grad.shape();
    let mut ot = Odometer::new(out_shape, broadcast_strides(target, out_shape));
    for &g in grad.data() {
        acc[ot.offset] += g;
        ot.advance();
    }
    Tensor::from_vec(target, acc)
}

fn matmul_raw<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    assert_eq!(k, k2, "matmul shape mismatch: lhs {:?} rhs {:?}", a.shape(), b.shape());
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for l in 0..k {
            let av = ad[i * k + l];
            if av == E::zero() {
                continue;
            }
            let brow = &bd[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

fn transpose_raw<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    assert_eq!(a.rank(), 2, "transpose needs a matrix, got {:?}", a.shape());
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let mut out = vec![E::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = ad[i * n + j];
        }
    }
    Tensor::from_vec(&[n, m], out)
}

impl<E: Element> Var<E> {
    fn op1(&self, value: Tensor<E>, grad: impl Fn(&Tensor<E>) -> Tensor<E> + 'static) -> Var<E> {
        let needs = self.needs_grad();
        let backward: Option<BackwardFn<E>> = if needs {
            let parent = self.id;
            Some(Box::new(move |og| vec![(parent, grad(og))]))
        } else {
            None
        };
        self.tape.push(value, needs, backward)
    }

    fn op2(
        &self,
        other: &Var<E>,
        value: Tensor<E>,
        grad_a: impl Fn(&Tensor<E>) -> Tensor<E> + 'static,
        grad_b: impl Fn(&Tensor<E>) -> Tensor<E> + 'static,
    ) -> Var<E> {
        same_tape(self, other);
        let (na, nb) = (self.needs_grad(), other.needs_grad());
        let needs = na || nb;
        let backward: Option<BackwardFn<E>> = if needs {
            let (pa, pb) = (self.id, other.id);
            Some(Box::new(move |og| {
                let mut out = Vec::with_capacity(2);
                if na {
                    out.push((pa, grad_a(og)));
                }
                if nb {
                    out.push((pb, grad_b(og)));
                }
                out
            }))
        } else {
            None
        };
        self.tape.push(value, needs, backward)
    }

    fn unary_elementwise(
        &self,
        f: impl Fn(E) -> E,
        df: impl Fn(E, E) -> E + 'static,
    ) -> Var<E> {
        let x = self.value();
        let y = x.map(&f);
        let (xc, yc) = (x.clone(), y.clone());
        self.op1(y, move |og| {
            let data = og
                .data()
                .iter()
                .zip(xc.data().iter().zip(yc.data()))
                .map(|(&g, (&xv, &yv))| g * df(xv, yv))
                .collect();
            Tensor::from_vec(og.shape(), data)
        })
    }

    // ----- elementwise unary -----

    pub fn neg(&self) -> Var<E> {
        self.unary_elementwise(|x| -x, |_, _| -E::one())
    }

    pub fn exp(&self) -> Var<E> {
        self.unary_elementwise(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Var<E> {
        self.unary_elementwise(|x| x.ln(), |x, _| E::one() / x)
    }

    pub fn sqrt(&self) -> Var<E> {
        self.unary_elementwise(|x| x.sqrt(), |_, y| E::one() / (y + y))
    }

    /// |x|; the subgradient at 0 is fixed to 0.
    pub fn abs(&self) -> Var<E> {
        self.unary_elementwise(
            |x| x.abs(),
            |x, _| {
                if x > E::zero() {
                    E::one()
                } else if x < E::zero() {
                    -E::one()
                } else {
                    E::zero()
                }
            },
        )
    }

    pub fn tanh(&self) -> Var<E> {
        self.unary_elementwise(|x| x.tanh(), |_, y| E::one() - y * y)
    }

    /// max(x, 0); the subgradient at 0 is fixed to 0.
    pub fn relu(&self) -> Var<E> {
        self.unary_elementwise(
            |x| if x > E::zero() { x } else { E::zero() },
            |x, _| if x > E::zero() { E::one() } else { E::zero() },
        )
    }

    pub fn sigmoid(&self) -> Var<E> {
        self.unary_elementwise(
            |x| {
                if x >= E::zero() {
                    E::one() / (E::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            },
            |_, y| y * (E::one() - y),
        )
    }

    /// ln(1 + e^x), numerically stable on both tails.
    pub fn softplus(&self) -> Var<E> {
        self.unary_elementwise(
            |x| {
                if x > E::zero() {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                }
            },
            |x, _| {
                if x >= E::zero() {
                    E::one() / (E::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (E::one() + e)
                }
            },
        )
    }

    /// Clamp into [lo, hi]; gradient passes only strictly inside.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<E> {
        let (lo, hi) = (E::from_f64(lo), E::from_f64(hi));
        self.unary_elementwise(
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |x, _| if x > lo && x < hi { E::one() } else { E::zero() },
        )
    }

    pub fn scale(&self, k: f64) -> Var<E> {
        let k = E::from_f64(k);
        self.unary_elementwise(move |x| x * k, move |_, _| k)
    }

    pub fn add_scalar(&self, k: f64) -> Var<E> {
        let k = E::from_f64(k);
        self.unary_elementwise(move |x| x + k, |_, _| E::one())
    }

    // ----- elementwise binary with broadcasting -----

    pub fn add(&self, other: &Var<E>) -> Var<E> {
        let (a, b) = (self.value(), other.value());
        let value = binary_broadcast(&a, &b, |x, y| x + y);
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.op2(
            other,
            value,
            move |og| reduce_to_shape(og, &sa),
            move |og| reduce_to_shape(og, &sb),
        )
    }

    pub fn sub(&self, other: &Var<E>) -> Var<E> {
        let (a, b) = (self.value(), other.value());
        let value = binary_broadcast(&a, &b, |x, y| x - y);
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        self.op2(
            other,
            value,
            move |og| reduce_to_shape(og, &sa),
            move |og| reduce_to_shape(&og.map(|v| -v), &sb),
        )
    }

    pub fn mul(&self, other: &Var<E>) -> Var<E> {
        let (a, b) = (self.value(), other.value());
        let value = binary_broadcast(&a, &b, |x, y| x * y);
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let (ac, bc) = (a.clone(), b.clone());
        self.op2(
            other,
            value,
            move |og| reduce_to_shape(&binary_broadcast(og, &bc, |g, y| g * y), &sa),
            move |og| reduce_to_shape(&binary_broadcast(og, &ac, |g, x| g * x), &sb),
        )
    }

    pub fn div(&self, other: &Var<E>) -> Var<E> {
        let (a, b) = (self.value(), other.value());
        let value = binary_broadcast(&a, &b, |x, y| x / y);
        let (sa, sb) = (a.shape().to_vec(), b.shape().to_vec());
        let (ac, bc) = (a.clone(), b.clone());
        let bc2 = b.clone();
        self.op2(
            other,
            value,
            move |og| reduce_to_shape(&binary_broadcast(og, &bc, |g, y| g / y), &sa),
            move |og| {
                let ga = binary_broadcast(og, &ac, |g, x| g * x);
                reduce_to_shape(&binary_broadcast(&ga, &bc2, |g, y| -g / (y * y)), &sb)
            },
        )
    }

    // ----- matrix ops -----

    pub fn matmul(&self, other: &Var<E>) -> Var<E> {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.rank(), 2, "matmul lhs must be a matrix, got {:?}", a.shape());
        assert_eq!(b.rank(), 2, "matmul rhs must be a matrix, got {:?}", b.shape());
        let value = matmul_raw(&a, &b);
        let (ac, bc) = (a.clone(), b.clone());
        self.op2(
            other,
            value,
            move |og| matmul_raw(og, &transpose_raw(&bc)),
            move |og| matmul_raw(&transpose_raw(&ac), og),
        )
    }

    pub fn transpose(&self) -> Var<E> {
        let value = transpose_raw(&self.value());
        self.op1(value, |og| transpose_raw(og))
    }

    // ----- shape ops -----

    pub fn reshape(&self, shape: &[usize]) -> Var<E> {
        let value = self.value().reshaped(shape);
        let orig = self.value().shape().to_vec();
        self.op1(value, move |og| og.reshaped(&orig))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<E> {
        let x = self.value();
        let shape = x.shape().to_vec();
        assert!(axis < shape.len(), "narrow axis {axis} out of range for {shape:?}");
        assert!(
            start + len <= shape[axis],
            "narrow [{start}, {start}+{len}) exceeds axis {axis} of {shape:?}"
        );
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let d = shape[axis];
        let xd = x.data();
        let mut out = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for j in start..start + len {
                let base = (o * d + j) * inner;
                out.extend_from_slice(&xd[base..base + inner]);
            }
        }
        let value = Tensor::from_vec(&out_shape, out);
        self.op1(value, move |og| {
            let mut grad = vec![E::zero(); outer * d * inner];
            let ogd = og.data();
            let mut src = 0;
            for o in 0..outer {
                for j in start..start + len {
                    let base = (o * d + j) * inner;
                    grad[base..base + inner].copy_from_slice(&ogd[src..src + inner]);
                    src += inner;
                }
            }
            Tensor::from_vec(&shape, grad)
        })
    }

    /// Concatenate along `axis`. All inputs must share the other extents.
    pub fn cat(vars: &[&Var<E>], axis: usize) -> Var<E> {
        assert!(!vars.is_empty(), "cat needs at least one input");
        let tape = vars[0].tape.clone();
        for v in vars {
            same_tape(vars[0], v);
        }
        let shapes: Vec<Vec<usize>> = vars.iter().map(|v| v.value().shape().to_vec()).collect();
        let mut out_shape = shapes[0].clone();
        for s in &shapes[1..] {
            assert_eq!(s.len(), out_shape.len(), "cat rank mismatch: {shapes:?}");
            for (d, (&a, &b)) in out_shape.iter().zip(s.iter()).enumerate() {
                assert!(d == axis || a == b, "cat extent mismatch on dim {d}: {shapes:?}");
            }
            out_shape[axis] += s[axis];
        }
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let values: Vec<Tensor<E>> = vars.iter().map(|v| v.value()).collect();
        let mut out = Vec::with_capacity(numel_of(&out_shape));
        for o in 0..outer {
            for (v, s) in values.iter().zip(&shapes) {
                let d = s[axis];
                let base = o * d * inner;
                out.extend_from_slice(&v.data()[base..base + d * inner]);
            }
        }
        let value = Tensor::from_vec(&out_shape, out);

        let parents: Vec<(usize, bool)> = vars.iter().map(|v| (v.id, v.needs_grad())).collect();
        let needs = parents.iter().any(|&(_, n)| n);
        let backward: Option<BackwardFn<E>> = if needs {
            let shapes = shapes.clone();
            let parents = parents.clone();
            Some(Box::new(move |og| {
                let ogd = og.data();
                let mut grads: Vec<Vec<E>> =
                    shapes.iter().map(|s| vec![E::zero(); numel_of(s)]).collect();
                let mut src = 0;
                for o in 0..outer {
                    for (g, s) in grads.iter_mut().zip(&shapes) {
                        let d = s[axis];
                        let base = o * d * inner;
                        g[base..base + d * inner].copy_from_slice(&ogd[src..src + d * inner]);
                        src += d * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(&shapes)
                    .zip(&parents)
                    .filter(|(_, &(_, n))| n)
                    .map(|((g, s), &(id, _))| (id, Tensor::from_vec(s, g)))
                    .collect()
            }))
        } else {
            None
        };
        tape.push(value, needs, backward)
    }

    // ----- reductions -----

    pub fn sum(&self) -> Var<E> {
        let x = self.value();
        let total = x.data().iter().fold(E::zero(), |a, &b| a + b);
        let shape = x.shape().to_vec();
        self.op1(Tensor::scalar(total), move |og| Tensor::filled(&shape, og.item()))
    }

    pub fn mean(&self) -> Var<E> {
        let x = self.value();
        let n = x.numel().max(1);
        let total = x.data().iter().fold(E::zero(), |a, &b| a + b);
        let shape = x.shape().to_vec();
        let inv = E::one() / E::from_f64(n as f64);
        self.op1(Tensor::scalar(total * inv), move |og| {
            Tensor::filled(&shape, og.item() * inv)
        })
    }

    /// Mean over the leading axis: [n, rest..] -> [rest..].
    pub fn mean_axis0(&self) -> Var<E> {
        let x = self.value();
        assert!(x.rank() >= 1, "mean_axis0 needs rank >= 1");
        let n = x.shape()[0];
        assert!(n > 0, "mean_axis0 over an empty axis");
        let rest = x.shape()[1..].to_vec();
        let inner = numel_of(&rest);
        let mut acc = vec![E::zero(); inner];
        for row in 0..n {
            for (a, &v) in acc.iter_mut().zip(&x.data()[row * inner..(row + 1) * inner]) {
                *a += v;
            }
        }
        let inv = E::one() / E::from_f64(n as f64);
        for a in &mut acc {
            *a *= inv;
        }
        let value = Tensor::from_vec(&rest, acc);
        let full_shape: Vec<usize> = std::iter::once(n).chain(rest.iter().copied()).collect();
        self.op1(value, move |og| {
            let mut grad = Vec::with_capacity(n * inner);
            for _ in 0..n {
                grad.extend(og.data().iter().map(|&g| g * inv));
            }
            Tensor::from_vec(&full_shape, grad)
        })
    }

    // ----- fused row ops over the last axis -----

    pub fn softmax_last(&self) -> Var<E> {
        let x = self.value();
        assert!(x.rank() >= 1, "softmax needs rank >= 1");
        let d = *x.shape().last().unwrap();
        assert!(d > 0, "softmax over an empty axis");
        let rows = x.numel() / d;
        let xd = x.data();
        let mut out = Vec::with_capacity(x.numel());
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let m = row.iter().fold(E::neg_infinity(), |a, &b| a.max(b));
            let mut denom = E::zero();
            let exps: Vec<E> = row
                .iter()
                .map(|&v| {
                    let e = (v - m).exp();
                    denom += e;
                    e
                })
                .collect();
            out.extend(exps.into_iter().map(|e| e / denom));
        }
        let value = Tensor::from_vec(x.shape(), out);
        let y = value.clone();
        self.op1(value, move |og| {
            let yd = y.data();
            let ogd = og.data();
            let mut grad = Vec::with_capacity(yd.len());
            for r in 0..rows {
                let ys = &yd[r * d..(r + 1) * d];
                let gs = &ogd[r * d..(r + 1) * d];
                let dot = ys.iter().zip(gs).fold(E::zero(), |a, (&yv, &gv)| a + yv * gv);
                grad.extend(ys.iter().zip(gs).map(|(&yv, &gv)| yv * (gv - dot)));
            }
            Tensor::from_vec(og.shape(), grad)
        })
    }

    /// Normalize each row of the last axis to zero mean, unit variance.
    /// Affine scale/shift, when wanted, is a separate mul/add.
    pub fn layer_norm_last(&self, eps: f64) -> Var<E> {
        let x = self.value();
        let d = *x.shape().last().unwrap();
        assert!(d > 0, "layer_norm over an empty axis");
        let rows = x.numel() / d;
        let xd = x.data();
        let eps = E::from_f64(eps);
        let inv_d = E::one() / E::from_f64(d as f64);
        let mut out = Vec::with_capacity(x.numel());
        let mut inv_stds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mean = row.iter().fold(E::zero(), |a, &b| a + b) * inv_d;
            let var = row.iter().fold(E::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_d;
            let inv_std = E::one() / (var + eps).sqrt();
            inv_stds.push(inv_std);
            out.extend(row.iter().map(|&v| (v - mean) * inv_std));
        }
        let value = Tensor::from_vec(x.shape(), out);
        let y = value.clone();
        self.op1(value, move |og| {
            let yd = y.data();
            let ogd = og.data();
            let mut grad = Vec::with_capacity(yd.len());
            for r in 0..rows {
                let ys = &yd[r * d..(r + 1) * d];
                let gs = &ogd[r * d..(r + 1) * d];
                let mean_g = gs.iter().fold(E::zero(), |a, &b| a + b) * inv_d;
                let mean_gy = ys.iter().zip(gs).fold(E::zero(), |a, (&yv, &gv)| a + yv * gv) * inv_d;
                let s = inv_stds[r];
                grad.extend(
                    ys.iter().zip(gs).map(|(&yv, &gv)| s * (gv - mean_g - yv * mean_gy)),
                );
            }
            Tensor::from_vec(og.shape(), grad)
        })
    }

    // ----- convolution stack -----

    /// 2-D convolution, input [Ci, H, W], kernel [Co, Ci, kh, kw], SAME
    /// zero padding, stride 1 or 2. Output [Co, ceil(H/s), ceil(W/s)].
    pub fn conv2d(&self, kernel: &Var<E>, stride: usize) -> Var<E> {
        assert!(stride == 1 || stride == 2, "conv2d stride must be 1 or 2, got {stride}");
        let x = self.value();
        let w = kernel.value();
        assert_eq!(x.rank(), 3, "conv2d input must be [C,H,W], got {:?}", x.shape());
        assert_eq!(w.rank(), 4, "conv2d kernel must be [O,I,kh,kw], got {:?}", w.shape());
        let (ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, ci2, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        assert_eq!(
            ci, ci2,
            "conv2d channel mismatch: input {:?} kernel {:?}",
            x.shape(),
            w.shape()
        );
        let oh = h.div_ceil(stride);
        let ow = wd.div_ceil(stride);
        let pad_h = ((oh - 1) * stride + kh).saturating_sub(h) / 2;
        let pad_w = ((ow - 1) * stride + kw).saturating_sub(wd) / 2;

        // Valid output range for one kernel offset: in = out*stride + k - pad
        // must land inside [0, extent).
        let valid = move |out_extent: usize, in_extent: usize, k: usize, pad: usize| -> (usize, usize) {
            let lo = pad.saturating_sub(k).div_ceil(stride);
            if in_extent + pad <= k {
                return (0, 0);
            }
            let hi = ((in_extent + pad - k - 1) / stride + 1).min(out_extent);
            (lo.min(hi), hi)
        };

        let xd = x.data();
        let wdat = w.data();
        let mut out = vec![E::zero(); co * oh * ow];
        for o in 0..co {
            for i in 0..ci {
                for ky in 0..kh {
                    let (oy_lo, oy_hi) = valid(oh, h, ky, pad_h);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad_h;
                        let in_row = &xd[(i * h + iy) * wd..(i * h + iy + 1) * wd];
                        let out_row = &mut out[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                        for kx in 0..kw {
                            let wv = wdat[((o * ci + i) * kh + ky) * kw + kx];
                            if wv == E::zero() {
                                continue;
                            }
                            let (lo, hi) = valid(ow, wd, kx, pad_w);
                            let mut ix = lo * stride + kx - pad_w;
                            for slot in &mut out_row[lo..hi] {
                                *slot += wv * in_row[ix];
                                ix += stride;
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_vec(&[co, oh, ow], out);

        let (xc, wc) = (x.clone(), w.clone());
        let grad_input = move |og: &Tensor<E>| {
            let ogd = og.data();
            let wdat = wc.data();
            let mut grad = vec![E::zero(); ci * h * wd];
            for o in 0..co {
                for i in 0..ci {
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid(oh, h, ky, pad_h);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad_h;
                            let og_row = &ogd[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                            let in_grad = &mut grad[(i * h + iy) * wd..(i * h + iy + 1) * wd];
                            for kx in 0..kw {
                                let wv = wdat[((o * ci + i) * kh + ky) * kw + kx];
                                if wv == E::zero() {
                                    continue;
                                }
                                let (lo, hi) = valid(ow, wd, kx, pad_w);
                                let mut ix = lo * stride + kx - pad_w;
                                for &g in &og_row[lo..hi] {
                                    in_grad[ix] += wv * g;
                                    ix += stride;
                                }
                            }
                        }
                    }
                }
            }
            Tensor::from_vec(&[ci, h, wd], grad)
        };
        let grad_kernel = move |og: &Tensor<E>| {
            let ogd = og.data();
            let xd = xc.data();
            let mut grad = vec![E::zero(); co * ci * kh * kw];
            for o in 0..co {
                for i in 0..ci {
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid(oh, h, ky, pad_h);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + ky - pad_h;
                            let og_row = &ogd[(o * oh + oy) * ow..(o * oh + oy + 1) * ow];
                            let in_row = &xd[(i * h + iy) * wd..(i * h + iy + 1) * wd];
                            for kx in 0..kw {
                                let (lo, hi) = valid(ow, wd, kx, pad_w);
                                let mut ix = lo * stride + kx - pad_w;
                                let mut acc = E::zero();
                                for &g in &og_row[lo..hi] {
                                    acc += g * in_row[ix];
                                    ix += stride;
                                }
                                grad[((o * ci + i) * kh + ky) * kw + kx] += acc;
                            }
                        }
                    }
                }
            }
            Tensor::from_vec(&[co, ci, kh, kw], grad)
        };
        self.op2(kernel, value, grad_input, grad_kernel)
    }

    /// Nearest-neighbor upsampling by an integer factor, [C,H,W] layout.
    pub fn upsample_nearest(&self, factor: usize) -> Var<E> {
        assert!(factor >= 1, "upsample factor must be >= 1");
        let x = self.value();
        assert_eq!(x.rank(), 3, "upsample input must be [C,H,W], got {:?}", x.shape());
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (oh, ow) = (h * factor, w * factor);
        let xd = x.data();
        let mut out = vec![E::zero(); c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    out[(ch * oh + oy) * ow + ox] =
                        xd[(ch * h + oy / factor) * w + ox / factor];
                }
            }
        }
        let value = Tensor::from_vec(&[c, oh, ow], out);
        self.op1(value, move |og| {
            let ogd = og.data();
            let mut grad = vec![E::zero(); c * h * w];
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        grad[(ch * h + oy / factor) * w + ox / factor] +=
                            ogd[(ch * oh + oy) * ow + ox];
                    }
                }
            }
            Tensor::from_vec(&[c, h, w], grad)
        })
    }

    pub fn upsample_nearest2x(&self) -> Var<E> {
        self.upsample_nearest(2)
    }

    // ----- set / sampling ops -----

    /// Per-segment max pooling of rows: input [N, D] with a segment id per
    /// row, output [S, D]. Empty segments yield the zero vector. Ties go to
    /// the lowest row index. Gradient routes to each (segment, channel)
    /// argmax row.
    pub fn scatter_max(&self, segment_ids: &[usize], segments: usize) -> Var<E> {
        let x = self.value();
        assert_eq!(x.rank(), 2, "scatter_max input must be [N, D], got {:?}", x.shape());
        let (n, d) = (x.shape()[0], x.shape()[1]);
        assert_eq!(segment_ids.len(), n, "scatter_max needs one segment id per row");
        assert!(
            segment_ids.iter().all(|&s| s < segments),
            "segment id out of range (segments = {segments})"
        );
        let xd = x.data();
        let mut out = vec![E::zero(); segments * d];
        let mut arg = vec![usize::MAX; segments * d];
        for (row, &seg) in segment_ids.iter().enumerate() {
            for ch in 0..d {
                let v = xd[row * d + ch];
                let slot = seg * d + ch;
                if arg[slot] == usize::MAX || v > out[slot] {
                    out[slot] = v;
                    arg[slot] = row;
                }
            }
        }
        let value = Tensor::from_vec(&[segments, d], out);
        self.op1(value, move |og| {
            let ogd = og.data();
            let mut grad = vec![E::zero(); n * d];
            for (slot, &row) in arg.iter().enumerate() {
                if row != usize::MAX {
                    let ch = slot % d;
                    grad[row * d + ch] += ogd[slot];
                }
            }
            Tensor::from_vec(&[n, d], grad)
        })
    }

    /// Max over a variable-size set of vectors: [N, D] -> [D].
    pub fn max_pool_set(&self) -> Var<E> {
        let n = self.value().shape()[0];
        let d = self.value().shape()[1];
        let ids = vec![0usize; n];
        self.scatter_max(&ids, 1).reshape(&[d])
    }

    /// Bilinear sampling of a [C, H, W] map at fractional (row, col)
    /// coordinates, output [P, C]. Coordinates are clamped to the border;
    /// the gradient flows into the map (coordinates are data, not
    /// parameters).
    pub fn bilinear_sample(&self, coords: &[(f64, f64)]) -> Var<E> {
        let x = self.value();
        assert_eq!(x.rank(), 3, "bilinear_sample input must be [C,H,W], got {:?}", x.shape());
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert!(h > 0 && w > 0);
        let xd = x.data();
        let p = coords.len();

        // (corner indices, weights) per sample point
        let mut taps: Vec<([usize; 4], [E; 4])> = Vec::with_capacity(p);
        for &(r, cc) in coords {
            let r = r.clamp(0.0, (h - 1) as f64);
            let cc = cc.clamp(0.0, (w - 1) as f64);
            let r0 = r.floor() as usize;
            let c0 = cc.floor() as usize;
            let r1 = (r0 + 1).min(h - 1);
            let c1 = (c0 + 1).min(w - 1);
            let fr = E::from_f64(r - r0 as f64);
            let fc = E::from_f64(cc - c0 as f64);
            let one = E::one();
            taps.push((
                [r0 * w + c0, r0 * w + c1, r1 * w + c0, r1 * w + c1],
                [(one - fr) * (one - fc), (one - fr) * fc, fr * (one - fc), fr * fc],
            ));
        }

        let mut out = vec![E::zero(); p * c];
        for (pi, (idx, wt)) in taps.iter().enumerate() {
            for ch in 0..c {
                let base = ch * h * w;
                let mut acc = E::zero();
                for t in 0..4 {
                    acc += wt[t] * xd[base + idx[t]];
                }
                out[pi * c + ch] = acc;
            }
        }
        let value = Tensor::from_vec(&[p, c], out);
        self.op1(value, move |og| {
            let ogd = og.data();
            let mut grad = vec![E::zero(); c * h * w];
            for (pi, (idx, wt)) in taps.iter().enumerate() {
                for ch in 0..c {
                    let base = ch * h * w;
                    let g = ogd[pi * c + ch];
                    for t in 0..4 {
                        grad[base + idx[t]] += wt[t] * g;
                    }
                }
            }
            Tensor::from_vec(&[c, h, w], grad)
        })
    }
}
