//! Forward/backward definitions for all tensor operations.
//!
//! Conventions: elementwise binaries require exactly equal shapes (no
//! broadcasting beyond tensor-scalar), relu's subgradient at 0 is 0, and
//! out-of-bounds bilinear samples read zero under the pixel-center
//! convention (integer coordinate = pixel center).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{joint_tape, BoundNode, Tensor};

/// Output columns `ox` for which `ox * stride + kx - pad` lands inside
/// `[0, w)`.
fn conv_ox_range(wo: usize, stride: usize, kx: usize, pad: usize, w: usize) -> (usize, usize) {
    let lo = if pad > kx {
        (pad - kx).div_ceil(stride)
    } else {
        0
    };
    let hi = (w + pad).saturating_sub(kx).div_ceil(stride).min(wo);
    (lo.min(hi), hi)
}

fn x_of<'a, S>(x: &'a [S], ci: usize, iy: usize, h: usize, w: usize) -> &'a [S] {
    &x[ci * h * w + iy * w..ci * h * w + (iy + 1) * w]
}

impl<S: Scalar> Tensor<S> {
    fn unary<F, D>(&self, f: F, d: D) -> Tensor<S>
    where
        F: Fn(S) -> S,
        D: Fn(S, S) -> S + 'static,
    {
        let out: Vec<S> = self.values().iter().map(|&x| f(x)).collect();
        let out = Arc::new(out);
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let xs = self.data_arc();
            let ys = Arc::clone(&out);
            let id = bn.tape.record(
                vec![pid],
                xs.len(),
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for i in 0..g.len() {
                            buf[i] += g[i] * d(xs[i], ys[i]);
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(self.shape().to_vec(), out, node)
    }

    fn binary<F, DA, DB>(&self, other: &Tensor<S>, op: &'static str, f: F, da: DA, db: DB) -> Tensor<S>
    where
        F: Fn(S, S) -> S,
        DA: Fn(S, S) -> S + 'static,
        DB: Fn(S, S) -> S + 'static,
    {
        assert!(
            self.shape() == other.shape(),
            "shape mismatch in {op}: {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        let out: Vec<S> = self
            .values()
            .iter()
            .zip(other.values())
            .map(|(&a, &b)| f(a, b))
            .collect();
        let node = joint_tape(&[self, other]).map(|tape| {
            let pa = self.bound().map(|b| b.id);
            let pb = other.bound().map(|b| b.id);
            let xa = self.data_arc();
            let xb = other.data_arc();
            let parents: Vec<usize> = pa.iter().chain(pb.iter()).copied().collect();
            let id = tape.record(
                parents,
                xa.len(),
                Box::new(move |g, sink| {
                    if let Some(pa) = pa {
                        sink.accum(pa, |buf| {
                            for i in 0..g.len() {
                                buf[i] += g[i] * da(xa[i], xb[i]);
                            }
                        });
                    }
                    if let Some(pb) = pb {
                        sink.accum(pb, |buf| {
                            for i in 0..g.len() {
                                buf[i] += g[i] * db(xa[i], xb[i]);
                            }
                        });
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Tensor::with_node(self.shape().to_vec(), Arc::new(out), node)
    }

    pub fn add(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(other, "add", |a, b| a + b, |_, _| S::one(), |_, _| S::one())
    }

    pub fn sub(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(
            other,
            "sub",
            |a, b| a - b,
            |_, _| S::one(),
            |_, _| -S::one(),
        )
    }

    pub fn mul(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    pub fn div(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(
            other,
            "div",
            |a, b| a / b,
            |_, b| S::one() / b,
            |a, b| -a / (b * b),
        )
    }

    /// Elementwise minimum; ties route the gradient to `self`.
    pub fn minimum(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(
            other,
            "minimum",
            |a, b| if a <= b { a } else { b },
            |a, b| if a <= b { S::one() } else { S::zero() },
            |a, b| if b < a { S::one() } else { S::zero() },
        )
    }

    /// Elementwise maximum; ties route the gradient to `self`.
    pub fn maximum(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(
            other,
            "maximum",
            |a, b| if a >= b { a } else { b },
            |a, b| if a >= b { S::one() } else { S::zero() },
            |a, b| if b > a { S::one() } else { S::zero() },
        )
    }

    /// Elementwise `atan2(self, other)` = atan2(y, x).
    pub fn atan2(&self, other: &Tensor<S>) -> Tensor<S> {
        self.binary(
            other,
            "atan2",
            |y, x| y.atan2(x),
            |y, x| x / (x * x + y * y),
            |y, x| -y / (x * x + y * y),
        )
    }

    pub fn neg(&self) -> Tensor<S> {
        self.unary(|x| -x, |_, _| -S::one())
    }

    /// Subgradient at exactly 0 is 0.
    pub fn relu(&self) -> Tensor<S> {
        self.unary(
            |x| if x > S::zero() { x } else { S::zero() },
            |x, _| if x > S::zero() { S::one() } else { S::zero() },
        )
    }

    /// Subgradient at exactly 0 is 0.
    pub fn abs(&self) -> Tensor<S> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > S::zero() {
                    S::one()
                } else if x < S::zero() {
                    -S::one()
                } else {
                    S::zero()
                }
            },
        )
    }

    pub fn sigmoid(&self) -> Tensor<S> {
        self.unary(
            |x| S::one() / (S::one() + (-x).exp()),
            |_, y| y * (S::one() - y),
        )
    }

    pub fn tanh(&self) -> Tensor<S> {
        self.unary(|x| x.tanh(), |_, y| S::one() - y * y)
    }

    pub fn sin(&self) -> Tensor<S> {
        self.unary(|x| x.sin(), |x, _| x.cos())
    }

    pub fn cos(&self) -> Tensor<S> {
        self.unary(|x| x.cos(), |x, _| -x.sin())
    }

    /// Canonicalizes angles into [-pi/2, pi/2) modulo pi. The shift is locally
    /// constant, so the derivative passes through as 1.
    pub fn mod_angle(&self) -> Tensor<S> {
        self.unary(
            |x| crate::geometry::normalize_angle_unchecked(x),
            |_, _| S::one(),
        )
    }

    pub fn add_scalar(&self, c: S) -> Tensor<S> {
        self.unary(move |x| x + c, |_, _| S::one())
    }

    pub fn scale(&self, c: S) -> Tensor<S> {
        self.unary(move |x| x * c, move |_, _| c)
    }

    /// Adds a `[d]` vector to every row of a `[n,d]` tensor (the bias path of
    /// affine layers; broadcasting stays explicit).
    pub fn add_row_vector(&self, bias: &Tensor<S>) -> Tensor<S> {
        assert!(
            self.shape().len() == 2 && bias.shape() == [self.shape()[1]],
            "add_row_vector: {:?} + {:?}",
            self.shape(),
            bias.shape()
        );
        let (n, d) = (self.shape()[0], self.shape()[1]);
        let x = self.values();
        let b = bias.values();
        let mut out = Vec::with_capacity(n * d);
        for r in 0..n {
            for j in 0..d {
                out.push(x[r * d + j] + b[j]);
            }
        }
        let node = joint_tape(&[self, bias]).map(|tape| {
            let px = self.bound().map(|bn| bn.id);
            let pb = bias.bound().map(|bn| bn.id);
            let parents: Vec<usize> = px.iter().chain(pb.iter()).copied().collect();
            let id = tape.record(
                parents,
                n * d,
                Box::new(move |g, sink| {
                    if let Some(px) = px {
                        sink.add_slice(px, g);
                    }
                    if let Some(pb) = pb {
                        sink.accum(pb, |buf| {
                            for r in 0..n {
                                for j in 0..d {
                                    buf[j] += g[r * d + j];
                                }
                            }
                        });
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Tensor::with_node(vec![n, d], Arc::new(out), node)
    }

    pub fn sum(&self) -> Tensor<S> {
        let total: S = self.values().iter().copied().sum();
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let n = self.len();
            let id = bn.tape.record(
                vec![pid],
                1,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for b in buf.iter_mut().take(n) {
                            *b += g[0];
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(vec![1], Arc::new(vec![total]), node)
    }

    pub fn mean(&self) -> Tensor<S> {
        let n = S::from_usize(self.len()).expect("len fits scalar");
        self.sum().scale(S::one() / n)
    }

    /// Matrix product of 2-D tensors `[M,K] x [K,P] -> [M,P]`.
    pub fn matmul(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        if self.shape().len() != 2 || other.shape().len() != 2 || self.shape()[1] != other.shape()[0]
        {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let p = other.shape()[1];
        let a = self.values();
        let b = other.values();
        let mut out = vec![S::zero(); m * p];
        for i in 0..m {
            for kk in 0..k {
                let aik = a[i * k + kk];
                let brow = &b[kk * p..(kk + 1) * p];
                let orow = &mut out[i * p..(i + 1) * p];
                for j in 0..p {
                    orow[j] += aik * brow[j];
                }
            }
        }
        let node = joint_tape(&[self, other]).map(|tape| {
            let pa = self.bound().map(|bn| bn.id);
            let pb = other.bound().map(|bn| bn.id);
            let xa = self.data_arc();
            let xb = other.data_arc();
            let parents: Vec<usize> = pa.iter().chain(pb.iter()).copied().collect();
            let id = tape.record(
                parents,
                m * p,
                Box::new(move |g, sink| {
                    if let Some(pa) = pa {
                        // dA = dC * B^T
                        sink.accum(pa, |buf| {
                            for i in 0..m {
                                for j in 0..p {
                                    let gij = g[i * p + j];
                                    if gij == S::zero() {
                                        continue;
                                    }
                                    for kk in 0..k {
                                        buf[i * k + kk] += gij * xb[kk * p + j];
                                    }
                                }
                            }
                        });
                    }
                    if let Some(pb) = pb {
                        // dB = A^T * dC
                        sink.accum(pb, |buf| {
                            for i in 0..m {
                                for kk in 0..k {
                                    let aik = xa[i * k + kk];
                                    if aik == S::zero() {
                                        continue;
                                    }
                                    let grow = &g[i * p..(i + 1) * p];
                                    let brow = &mut buf[kk * p..(kk + 1) * p];
                                    for j in 0..p {
                                        brow[j] += aik * grow[j];
                                    }
                                }
                            }
                        });
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Ok(Tensor::with_node(vec![m, p], Arc::new(out), node))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Tensor<S> {
        assert!(self.shape().len() == 2, "transpose requires a 2-D tensor");
        let (m, n) = (self.shape()[0], self.shape()[1]);
        let x = self.values();
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = x[i * n + j];
            }
        }
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let id = bn.tape.record(
                vec![pid],
                m * n,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for i in 0..m {
                            for j in 0..n {
                                buf[i * n + j] += g[j * m + i];
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(vec![n, m], Arc::new(out), node)
    }

    /// Softmax along `axis` of a 1-D or 2-D tensor, computed with
    /// max-subtraction. Outputs are nonnegative and sum to 1 along the axis.
    pub fn softmax(&self, axis: usize) -> Tensor<S> {
        let (lanes, lane_len, stride, lane_base): (usize, usize, usize, Vec<usize>) =
            match (self.shape().len(), axis) {
                (1, 0) => (1, self.len(), 1, vec![0]),
                (2, 1) => {
                    let (r, c) = (self.shape()[0], self.shape()[1]);
                    (r, c, 1, (0..r).map(|i| i * c).collect())
                }
                (2, 0) => {
                    let (r, c) = (self.shape()[0], self.shape()[1]);
                    (c, r, c, (0..c).collect())
                }
                _ => panic!(
                    "softmax: axis {axis} invalid for shape {:?}",
                    self.shape()
                ),
            };
        let x = self.values();
        let mut out = vec![S::zero(); x.len()];
        for l in 0..lanes {
            let base = lane_base[l];
            let mut mx = x[base];
            for i in 1..lane_len {
                let v = x[base + i * stride];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = S::zero();
            for i in 0..lane_len {
                let e = (x[base + i * stride] - mx).exp();
                out[base + i * stride] = e;
                denom += e;
            }
            for i in 0..lane_len {
                out[base + i * stride] /= denom;
            }
        }
        let out = Arc::new(out);
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let ys = Arc::clone(&out);
            let lane_base = lane_base.clone();
            let id = bn.tape.record(
                vec![pid],
                x.len(),
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for base in lane_base.iter().copied() {
                            let mut dot = S::zero();
                            for i in 0..lane_len {
                                let k = base + i * stride;
                                dot += g[k] * ys[k];
                            }
                            for i in 0..lane_len {
                                let k = base + i * stride;
                                buf[k] += ys[k] * (g[k] - dot);
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(self.shape().to_vec(), out, node)
    }

    /// Layer normalization over the last axis with learned gain and bias.
    pub fn layer_norm(&self, gamma: &Tensor<S>, beta: &Tensor<S>, eps: S) -> Tensor<S> {
        let d = *self.shape().last().expect("layer_norm on empty shape");
        assert!(
            gamma.shape() == [d] && beta.shape() == [d],
            "layer_norm: gain/bias must have shape [{d}]"
        );
        let rows = self.len() / d;
        let x = self.values();
        let gm = gamma.values();
        let bt = beta.values();
        let mut out = vec![S::zero(); x.len()];
        let mut xhat = vec![S::zero(); x.len()];
        let mut inv_std = vec![S::zero(); rows];
        let dn = S::from_usize(d).expect("dim fits scalar");
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mu = row.iter().copied().sum::<S>() / dn;
            let var = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<S>() / dn;
            let istd = S::one() / (var + eps).sqrt();
            inv_std[r] = istd;
            for j in 0..d {
                let xh = (row[j] - mu) * istd;
                xhat[r * d + j] = xh;
                out[r * d + j] = gm[j] * xh + bt[j];
            }
        }
        let node = joint_tape(&[self, gamma, beta]).map(|tape| {
            let px = self.bound().map(|b| b.id);
            let pg = gamma.bound().map(|b| b.id);
            let pb = beta.bound().map(|b| b.id);
            let gm = gamma.data_arc();
            let xhat = Arc::new(xhat);
            let inv_std = Arc::new(inv_std);
            let parents: Vec<usize> = px.iter().chain(pg.iter()).chain(pb.iter()).copied().collect();
            let id = tape.record(
                parents,
                x.len(),
                Box::new(move |g, sink| {
                    if let Some(pg) = pg {
                        sink.accum(pg, |buf| {
                            for r in 0..rows {
                                for j in 0..d {
                                    buf[j] += g[r * d + j] * xhat[r * d + j];
                                }
                            }
                        });
                    }
                    if let Some(pb) = pb {
                        sink.accum(pb, |buf| {
                            for r in 0..rows {
                                for j in 0..d {
                                    buf[j] += g[r * d + j];
                                }
                            }
                        });
                    }
                    if let Some(px) = px {
                        sink.accum(px, |buf| {
                            for r in 0..rows {
                                let mut m1 = S::zero(); // mean of gamma*g
                                let mut m2 = S::zero(); // mean of gamma*g*xhat
                                for j in 0..d {
                                    let gd = gm[j] * g[r * d + j];
                                    m1 += gd;
                                    m2 += gd * xhat[r * d + j];
                                }
                                m1 /= dn;
                                m2 /= dn;
                                for j in 0..d {
                                    let gd = gm[j] * g[r * d + j];
                                    buf[r * d + j] +=
                                        inv_std[r] * (gd - m1 - xhat[r * d + j] * m2);
                                }
                            }
                        });
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Tensor::with_node(self.shape().to_vec(), Arc::new(out), node)
    }

    /// Weighted negative log-likelihood of `target` under softmax of 1-D
    /// logits: `weight * (logsumexp(x) - x[target])`.
    pub fn cross_entropy_logits(&self, target: usize, weight: S) -> Result<Tensor<S>> {
        assert!(self.shape().len() == 1, "cross_entropy_logits expects 1-D logits");
        let k = self.len();
        if target >= k {
            return Err(Error::IndexOutOfRange {
                index: target,
                len: k,
            });
        }
        let x = self.values();
        let mx = x.iter().copied().fold(S::neg_infinity(), S::max);
        let mut denom = S::zero();
        let mut probs = vec![S::zero(); k];
        for i in 0..k {
            let e = (x[i] - mx).exp();
            probs[i] = e;
            denom += e;
        }
        for p in probs.iter_mut() {
            *p /= denom;
        }
        let loss = weight * (denom.ln() - (x[target] - mx));
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let probs = Arc::new(probs);
            let id = bn.tape.record(
                vec![pid],
                1,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for i in 0..k {
                            let ind = if i == target { S::one() } else { S::zero() };
                            buf[i] += g[0] * weight * (probs[i] - ind);
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Ok(Tensor::with_node(vec![1], Arc::new(vec![loss]), node))
    }

    /// Concatenation of 1-D tensors, or of 2-D tensors along `axis`.
    pub fn concat(parts: &[&Tensor<S>], axis: usize) -> Tensor<S> {
        assert!(!parts.is_empty(), "concat of zero tensors");
        let rank = parts[0].shape().len();
        assert!(
            parts.iter().all(|p| p.shape().len() == rank),
            "concat: rank mismatch"
        );
        assert!(axis < rank, "concat: axis {axis} out of range");
        let (shape, out) = match rank {
            1 => {
                let total: usize = parts.iter().map(|p| p.len()).sum();
                let mut out = Vec::with_capacity(total);
                for p in parts {
                    out.extend_from_slice(p.values());
                }
                (vec![total], out)
            }
            2 if axis == 0 => {
                let cols = parts[0].shape()[1];
                assert!(parts.iter().all(|p| p.shape()[1] == cols), "concat: column mismatch");
                let rows: usize = parts.iter().map(|p| p.shape()[0]).sum();
                let mut out = Vec::with_capacity(rows * cols);
                for p in parts {
                    out.extend_from_slice(p.values());
                }
                (vec![rows, cols], out)
            }
            2 => {
                let rows = parts[0].shape()[0];
                assert!(parts.iter().all(|p| p.shape()[0] == rows), "concat: row mismatch");
                let cols: usize = parts.iter().map(|p| p.shape()[1]).sum();
                let mut out = vec![S::zero(); rows * cols];
                let mut off = 0;
                for p in parts {
                    let pc = p.shape()[1];
                    let pv = p.values();
                    for r in 0..rows {
                        out[r * cols + off..r * cols + off + pc]
                            .copy_from_slice(&pv[r * pc..(r + 1) * pc]);
                    }
                    off += pc;
                }
                (vec![rows, cols], out)
            }
            _ => panic!("concat supports 1-D and 2-D tensors"),
        };
        let refs: Vec<&Tensor<S>> = parts.to_vec();
        let node = joint_tape(&refs).map(|tape| {
            let pids: Vec<Option<usize>> = parts.iter().map(|p| p.bound().map(|b| b.id)).collect();
            let part_shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
            let shape_b = shape.clone();
            let parents: Vec<usize> = pids.iter().flatten().copied().collect();
            let size: usize = shape.iter().product();
            let id = tape.record(
                parents,
                size,
                Box::new(move |g, sink| {
                    if rank == 1 || axis == 0 {
                        let mut off = 0;
                        for (pid, ps) in pids.iter().zip(&part_shapes) {
                            let n: usize = ps.iter().product();
                            if let Some(pid) = pid {
                                sink.add_slice(*pid, &g[off..off + n]);
                            }
                            off += n;
                        }
                    } else {
                        let rows = shape_b[0];
                        let cols = shape_b[1];
                        let mut off = 0;
                        for (pid, ps) in pids.iter().zip(&part_shapes) {
                            let pc = ps[1];
                            if let Some(pid) = pid {
                                sink.accum(*pid, |buf| {
                                    for r in 0..rows {
                                        for j in 0..pc {
                                            buf[r * pc + j] += g[r * cols + off + j];
                                        }
                                    }
                                });
                            }
                            off += pc;
                        }
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Tensor::with_node(shape, Arc::new(out), node)
    }

    /// Row gather on a 2-D tensor (also the embedding lookup); indices may
    /// repeat, the backward pass scatter-adds.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Tensor<S>> {
        assert!(self.shape().len() == 2, "select_rows requires a 2-D tensor");
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        for &i in indices {
            if i >= rows {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: rows,
                });
            }
        }
        let x = self.values();
        let mut out = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            out.extend_from_slice(&x[i * cols..(i + 1) * cols]);
        }
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let idx = indices.to_vec();
            let id = bn.tape.record(
                vec![pid],
                idx.len() * cols,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for (r, &i) in idx.iter().enumerate() {
                            for j in 0..cols {
                                buf[i * cols + j] += g[r * cols + j];
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Ok(Tensor::with_node(
            vec![indices.len(), cols],
            Arc::new(out),
            node,
        ))
    }

    /// One row of a 2-D tensor as a 1-D tensor.
    pub fn row(&self, i: usize) -> Result<Tensor<S>> {
        let cols = self.shape()[1];
        self.select_rows(&[i])?.reshape(&[cols])
    }

    /// Contiguous column slice `[start, end)` of a 2-D tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor<S> {
        assert!(self.shape().len() == 2, "slice_cols requires a 2-D tensor");
        let (rows, cols) = (self.shape()[0], self.shape()[1]);
        assert!(start < end && end <= cols, "slice_cols: bad range {start}..{end}");
        let w = end - start;
        let x = self.values();
        let mut out = Vec::with_capacity(rows * w);
        for r in 0..rows {
            out.extend_from_slice(&x[r * cols + start..r * cols + end]);
        }
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let id = bn.tape.record(
                vec![pid],
                rows * w,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for r in 0..rows {
                            for j in 0..w {
                                buf[r * cols + start + j] += g[r * w + j];
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(vec![rows, w], Arc::new(out), node)
    }

    /// Single element as a scalar tensor (flat row-major index).
    pub fn element(&self, flat: usize) -> Result<Tensor<S>> {
        if flat >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: flat,
                len: self.len(),
            });
        }
        let v = self.values()[flat];
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let id = bn.tape.record(
                vec![pid],
                1,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| buf[flat] += g[0]);
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Ok(Tensor::with_node(vec![1], Arc::new(vec![v]), node))
    }

    /// 2-D convolution on a `[Cin,H,W]` input with `[Cout,Cin,kh,kw]` weights,
    /// `[Cout]` bias, square stride and symmetric zero padding.
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: &Tensor<S>,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor<S>> {
        if self.shape().len() != 3 || weight.shape().len() != 4 || self.shape()[0] != weight.shape()[1]
        {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let (cin, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let (cout, kh, kw) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
        if bias.shape() != [cout] {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: bias.shape().to_vec(),
                rhs: vec![cout],
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: vec![h, w],
                rhs: vec![kh, kw],
            });
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (w + 2 * pad - kw) / stride + 1;
        let x = self.values();
        let wv = weight.values();
        let bv = bias.values();
        let mut out = vec![S::zero(); cout * ho * wo];
        for co in 0..cout {
            out[co * ho * wo..(co + 1) * ho * wo].fill(bv[co]);
        }
        // one (input row, kernel tap) pair at a time, accumulating into a
        // contiguous output row: keeps the hottest loop branch-free
        for co in 0..cout {
            for ci in 0..cin {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wgt = wv[((co * cin + ci) * kh + ky) * kw + kx];
                        if wgt == S::zero() {
                            continue;
                        }
                        for oy in 0..ho {
                            let iy = oy * stride + ky;
                            if iy < pad || iy - pad >= h {
                                continue;
                            }
                            let iy = iy - pad;
                            let (ox0, ox1) = conv_ox_range(wo, stride, kx, pad, w);
                            let xrow = &x[ci * h * w + iy * w..ci * h * w + (iy + 1) * w];
                            let orow = &mut out[co * ho * wo + oy * wo..co * ho * wo + (oy + 1) * wo];
                            for ox in ox0..ox1 {
                                orow[ox] += wgt * xrow[ox * stride + kx - pad];
                            }
                        }
                    }
                }
            }
        }
        let node = joint_tape(&[self, weight, bias]).map(|tape| {
            let px = self.bound().map(|b| b.id);
            let pw = weight.bound().map(|b| b.id);
            let pb = bias.bound().map(|b| b.id);
            let xv = self.data_arc();
            let wvv = weight.data_arc();
            let parents: Vec<usize> = px.iter().chain(pw.iter()).chain(pb.iter()).copied().collect();
            let id = tape.record(
                parents,
                cout * ho * wo,
                Box::new(move |g, sink| {
                    if let Some(pb) = pb {
                        sink.accum(pb, |buf| {
                            for co in 0..cout {
                                let plane = &g[co * ho * wo..(co + 1) * ho * wo];
                                buf[co] += plane.iter().copied().sum::<S>();
                            }
                        });
                    }
                    if let Some(px) = px {
                        sink.accum(px, |buf| {
                            for co in 0..cout {
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let wgt = wvv[((co * cin + ci) * kh + ky) * kw + kx];
                                            if wgt == S::zero() {
                                                continue;
                                            }
                                            for oy in 0..ho {
                                                let iy = oy * stride + ky;
                                                if iy < pad || iy - pad >= h {
                                                    continue;
                                                }
                                                let iy = iy - pad;
                                                let (ox0, ox1) =
                                                    conv_ox_range(wo, stride, kx, pad, w);
                                                let grow = &g[co * ho * wo + oy * wo
                                                    ..co * ho * wo + (oy + 1) * wo];
                                                let xrow = &mut buf[ci * h * w + iy * w
                                                    ..ci * h * w + (iy + 1) * w];
                                                for ox in ox0..ox1 {
                                                    xrow[ox * stride + kx - pad] +=
                                                        wgt * grow[ox];
                                                }
                                            }
                                        }
                                    }
                                }
                            }
                        });
                    }
                    if let Some(pw) = pw {
                        sink.accum(pw, |buf| {
                            for co in 0..cout {
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let mut acc = S::zero();
                                            for oy in 0..ho {
                                                let iy = oy * stride + ky;
                                                if iy < pad || iy - pad >= h {
                                                    continue;
                                                }
                                                let iy = iy - pad;
                                                let (ox0, ox1) =
                                                    conv_ox_range(wo, stride, kx, pad, w);
                                                let grow = &g[co * ho * wo + oy * wo
                                                    ..co * ho * wo + (oy + 1) * wo];
                                                let xrow = x_of(&xv, ci, iy, h, w);
                                                for ox in ox0..ox1 {
                                                    acc += grow[ox]
                                                        * xrow[ox * stride + kx - pad];
                                                }
                                            }
                                            buf[((co * cin + ci) * kh + ky) * kw + kx] += acc;
                                        }
                                    }
                                }
                            }
                        });
                    }
                }),
            );
            BoundNode { tape, id }
        });
        Ok(Tensor::with_node(vec![cout, ho, wo], Arc::new(out), node))
    }

    /// Nearest-neighbor 2x upsampling of a `[C,H,W]` tensor.
    pub fn upsample2x(&self) -> Tensor<S> {
        assert!(self.shape().len() == 3, "upsample2x requires [C,H,W]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let x = self.values();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); c * h2 * w2];
        for ci in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    out[ci * h2 * w2 + y * w2 + xx] = x[ci * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let id = bn.tape.record(
                vec![pid],
                c * h2 * w2,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for ci in 0..c {
                            for y in 0..h2 {
                                for xx in 0..w2 {
                                    buf[ci * h * w + (y / 2) * w + xx / 2] +=
                                        g[ci * h2 * w2 + y * w2 + xx];
                                }
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(vec![c, h2, w2], Arc::new(out), node)
    }

    /// Bilinear interpolation of a `[C,H,W]` map at pixel coordinates
    /// `points`, producing `[C, len(points)]`. Integer coordinates address
    /// pixel centers; neighbors outside `[0,W-1]x[0,H-1]` contribute zero.
    /// Differentiable with respect to the map values.
    pub fn bilinear_sample_many(&self, points: &[(S, S)]) -> Tensor<S> {
        assert!(self.shape().len() == 3, "bilinear_sample requires [C,H,W]");
        let (c, h, w) = (self.shape()[0], self.shape()[1], self.shape()[2]);
        let x = self.values();
        let n = points.len();
        // (flat index, weight) of up to 4 neighbors per point
        let mut taps: Vec<(usize, S)> = Vec::with_capacity(4 * n);
        let mut tap_ranges: Vec<(usize, usize)> = Vec::with_capacity(n);
        for &(px, py) in points {
            let start = taps.len();
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let (x0i, y0i) = (x0.to_isize(), y0.to_isize());
            if let (Some(x0), Some(y0)) = (x0i, y0i) {
                let corners = [
                    (x0, y0, (S::one() - fx) * (S::one() - fy)),
                    (x0 + 1, y0, fx * (S::one() - fy)),
                    (x0, y0 + 1, (S::one() - fx) * fy),
                    (x0 + 1, y0 + 1, fx * fy),
                ];
                for (cx, cy, wgt) in corners {
                    if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                        taps.push((cy as usize * w + cx as usize, wgt));
                    }
                }
            }
            tap_ranges.push((start, taps.len()));
        }
        let mut out = vec![S::zero(); c * n];
        for ci in 0..c {
            let plane = &x[ci * h * w..(ci + 1) * h * w];
            for (pi, &(a, b)) in tap_ranges.iter().enumerate() {
                let mut acc = S::zero();
                for &(idx, wgt) in &taps[a..b] {
                    acc += plane[idx] * wgt;
                }
                out[ci * n + pi] = acc;
            }
        }
        let node = self.bound().map(|bn| {
            let pid = bn.id;
            let taps = Arc::new(taps);
            let tap_ranges = Arc::new(tap_ranges);
            let id = bn.tape.record(
                vec![pid],
                c * n,
                Box::new(move |g, sink| {
                    sink.accum(pid, |buf| {
                        for ci in 0..c {
                            for (pi, &(a, b)) in tap_ranges.iter().enumerate() {
                                let gv = g[ci * n + pi];
                                if gv == S::zero() {
                                    continue;
                                }
                                for &(idx, wgt) in &taps[a..b] {
                                    buf[ci * h * w + idx] += gv * wgt;
                                }
                            }
                        }
                    });
                }),
            );
            BoundNode {
                tape: bn.tape.clone(),
                id,
            }
        });
        Tensor::with_node(vec![c, n], Arc::new(out), node)
    }

    /// Bilinear interpolation at a single point, producing `[C]`.
    pub fn bilinear_sample(&self, x: S, y: S) -> Tensor<S> {
        let c = self.shape()[0];
        self.bilinear_sample_many(&[(x, y)])
            .reshape(&[c])
            .expect("length preserved")
    }
}
