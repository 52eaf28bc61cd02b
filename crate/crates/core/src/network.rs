//! Fully connected tanh network with a scalar logit output, written over a
//! generic scalar so the same code runs on `f64` and on forward-mode dual
//! numbers. Running backprop on dual inputs `x + t·u` yields, in the dual
//! part of the parameter gradient, `∇θ (∇x z · u)`: the parameter gradient
//! of a directional input derivative, which is what training-time
//! attribution penalties need.

use std::ops::{Add, Mul, Neg, Sub};

pub(crate) trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn lift(v: f64) -> Self;
    fn scale(self, k: f64) -> Self;
    fn tanh(self) -> Self;
}

impl Scalar for f64 {
    fn lift(v: f64) -> Self {
        v
    }
    fn scale(self, k: f64) -> Self {
        self * k
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// `re + du·t` with `t² = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual {
    pub re: f64,
    pub du: f64,
}

impl Dual {
    pub fn new(re: f64, du: f64) -> Self {
        Dual { re, du }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.du + o.du)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.du - o.du)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.du + self.du * o.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.du)
    }
}

impl Scalar for Dual {
    fn lift(v: f64) -> Self {
        Dual::new(v, 0.0)
    }
    fn scale(self, k: f64) -> Self {
        Dual::new(self.re * k, self.du * k)
    }
    fn tanh(self) -> Self {
        let t = self.re.tanh();
        Dual::new(t, self.du * (1.0 - t * t))
    }
}

/// Number of parameters for layer widths `shapes = [inputs, hidden.., 1]`.
pub(crate) fn num_params(shapes: &[usize]) -> usize {
    shapes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

/// Offsets of each layer's weight block (row-major out×in) followed by its bias.
fn offsets(shapes: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut off = 0;
    for w in shapes.windows(2) {
        out.push(off);
        off += w[1] * w[0] + w[1];
    }
    out
}

/// Whether parameter `k` is a weight (as opposed to a bias).
pub(crate) fn weight_mask(shapes: &[usize]) -> Vec<bool> {
    let mut mask = Vec::with_capacity(num_params(shapes));
    for w in shapes.windows(2) {
        mask.extend(std::iter::repeat_n(true, w[1] * w[0]));
        mask.extend(std::iter::repeat_n(false, w[1]));
    }
    mask
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Net<'a> {
    pub shapes: &'a [usize],
    pub params: &'a [f64],
}

pub(crate) struct Pass<T> {
    pub z: T,
    pub grad_params: Vec<T>,
    pub grad_input: Vec<T>,
}

impl<'a> Net<'a> {
    pub fn new(shapes: &'a [usize], params: &'a [f64]) -> Self {
        debug_assert_eq!(num_params(shapes), params.len());
        Net { shapes, params }
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = x.to_vec();
        let layers = self.shapes.len() - 1;
        for (l, off) in offsets(self.shapes).into_iter().enumerate() {
            let (n_in, n_out) = (self.shapes[l], self.shapes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut h: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>())
                .collect();
            if l + 1 < layers {
                h.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = h;
        }
        a[0]
    }

    /// Forward pass plus backprop of the logit w.r.t. parameters and input.
    pub fn pass<T: Scalar>(&self, x: &[T]) -> Pass<T> {
        let layers = self.shapes.len() - 1;
        let offs = offsets(self.shapes);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(layers);
        acts.push(x.to_vec());
        let mut z = T::lift(0.0);
        for l in 0..layers {
            let (n_in, n_out) = (self.shapes[l], self.shapes[l + 1]);
            let off = offs[l];
            let a = &acts[l];
            let mut h = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut acc = T::lift(self.params[off + n_in * n_out + o]);
                let row = &self.params[off + o * n_in..off + (o + 1) * n_in];
                for (wi, &ai) in row.iter().zip(a.iter()) {
                    acc = acc + ai.scale(*wi);
                }
                h.push(acc);
            }
            if l + 1 < layers {
                acts.push(h.into_iter().map(Scalar::tanh).collect());
            } else {
                z = h[0];
            }
        }

        let mut grad_params = vec![T::lift(0.0); self.params.len()];
        let mut delta = vec![T::lift(1.0)];
        let mut grad_input = Vec::new();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.shapes[l], self.shapes[l + 1]);
            let off = offs[l];
            let a = &acts[l];
            for o in 0..n_out {
                for i in 0..n_in {
                    grad_params[off + o * n_in + i] = delta[o] * a[i];
                }
                grad_params[off + n_in * n_out + o] = delta[o];
            }
            let mut prev = vec![T::lift(0.0); n_in];
            for o in 0..n_out {
                let row = &self.params[off + o * n_in..off + (o + 1) * n_in];
                for i in 0..n_in {
                    prev[i] = prev[i] + delta[o].scale(row[i]);
                }
            }
            if l > 0 {
                for i in 0..n_in {
                    prev[i] = prev[i] * (T::lift(1.0) - a[i] * a[i]);
                }
                delta = prev;
            } else {
                grad_input = prev;
            }
        }
        Pass {
            z,
            grad_params,
            grad_input,
        }
    }
}
