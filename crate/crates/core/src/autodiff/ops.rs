//! Differentiable operators. Every op validates shapes up front and reports
//! mismatches with the op name and both shapes.

use std::sync::Arc;

use rand::Rng;

use super::{AutodiffError, Result, Tape, Tensor, Var};

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn invalid(op: &'static str, msg: impl Into<String>) -> AutodiffError {
    AutodiffError::InvalidArgument { op, msg: msg.into() }
}

/// How `b` repeats across `a`: `b` is a single value or matches `a`'s trailing dims.
fn broadcast_inner(op: &'static str, a: &[usize], b: &[usize]) -> Result<usize> {
    let nb: usize = b.iter().product();
    if nb == 1 {
        return Ok(1);
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Ok(nb);
    }
    Err(mismatch(op, a, b))
}

fn reduce_to_inner(g: &[f64], inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; inner];
    for chunk in g.chunks(inner) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}

fn pair<T>(a: T, b: T) -> Vec<T> {
    vec![a, b]
}

impl Tape {
    fn unary(
        &mut self,
        op: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Result<Var> {
        let xv = self.value_rc(x);
        let out: Vec<f64> = xv.data().iter().map(|&v| f(v)).collect();
        let yv = Arc::new(Tensor::new(xv.shape().to_vec(), out)?);
        let y_saved = Arc::clone(&yv);
        self.custom(
            op,
            (*yv).clone(),
            &[x],
            Box::new(move |g, _| {
                let gx = g
                    .iter()
                    .zip(xv.data())
                    .zip(y_saved.data())
                    .map(|((&g, &x), &y)| g * df(x, y))
                    .collect();
                vec![Some(gx)]
            }),
        )
    }

    /// Elementwise sum; `b` may broadcast over `a`'s leading dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        let inner = broadcast_inner("add", av.shape(), bv.shape())?;
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv.data()[i % inner])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.custom(
            "add",
            value,
            &[a, b],
            Box::new(move |g, needs| {
                pair(
                    needs[0].then(|| g.to_vec()),
                    needs[1].then(|| reduce_to_inner(g, inner)),
                )
            }),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg_b = self.scale(b, -1.0)?;
        self.add(a, neg_b)
    }

    /// Elementwise product; `b` may broadcast over `a`'s leading dimensions.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        let inner = broadcast_inner("mul", av.shape(), bv.shape())?;
        let out: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * bv.data()[i % inner])
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        self.custom(
            "mul",
            value,
            &[a, b],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, &g)| g * bv.data()[i % inner])
                        .collect()
                });
                let gb = needs[1].then(|| {
                    let prod: Vec<f64> = g.iter().zip(av.data()).map(|(g, a)| g * a).collect();
                    reduce_to_inner(&prod, inner)
                });
                pair(ga, gb)
            }),
        )
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.unary("scale", x, move |v| v * c, move |_, _| c)
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let xv = self.value_rc(x);
        let n = xv.len();
        let total = xv.data().iter().sum();
        self.custom(
            "sum",
            Tensor::scalar(total),
            &[x],
            Box::new(move |g, _| vec![Some(vec![g[0]; n])]),
        )
        .expect("sum of finite values")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n).expect("finite mean")
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value_rc(a);
        let bv = self.value_rc(b);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av.data()[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv.data()[p * n..(p + 1) * n];
                row.iter_mut().zip(brow).for_each(|(o, b)| *o += aip * b);
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        self.custom(
            "matmul",
            value,
            &[a, b],
            Box::new(move |g, needs| {
                let ga = needs[0].then(|| {
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data()[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    ga
                });
                let gb = needs[1].then(|| {
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data()[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(o, g)| *o += aip * g);
                        }
                    }
                    gb
                });
                pair(ga, gb)
            }),
        )
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xv = self.value_rc(x);
        let shape = xv.shape().to_vec();
        if shape.len() < 2 {
            return Err(invalid("transpose", format!("needs rank >= 2, got {shape:?}")));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let batches = xv.len() / (r * c);
        let permute = move |src: &[f64], rows: usize, cols: usize| {
            let mut dst = vec![0.0; src.len()];
            for b in 0..batches {
                let off = b * rows * cols;
                for i in 0..rows {
                    for j in 0..cols {
                        dst[off + j * rows + i] = src[off + i * cols + j];
                    }
                }
            }
            dst
        };
        let mut out_shape = shape.clone();
        let l = out_shape.len();
        out_shape.swap(l - 2, l - 1);
        let value = Tensor::new(out_shape, permute(xv.data(), r, c))?;
        self.custom(
            "transpose",
            value,
            &[x],
            Box::new(move |g, _| vec![Some(permute(g, c, r))]),
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape.to_vec())?;
        self.custom("reshape", value, &[x], Box::new(|g, _| vec![Some(g.to_vec())]))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = xs.first().ok_or_else(|| invalid("stack", "no inputs"))?;
        let shape = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(xs.len() * self.value(*first).len());
        for &x in xs {
            if self.shape(x) != shape.as_slice() {
                return Err(mismatch("stack", &shape, self.shape(x)));
            }
            data.extend_from_slice(self.value(x).data());
        }
        let chunk = data.len() / xs.len();
        let mut out_shape = vec![xs.len()];
        out_shape.extend(&shape);
        let n = xs.len();
        self.custom(
            "stack",
            Tensor::new(out_shape, data)?,
            xs,
            Box::new(move |g, needs| {
                (0..n)
                    .map(|i| needs[i].then(|| g[i * chunk..(i + 1) * chunk].to_vec()))
                    .collect()
            }),
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary("relu", x, |v| v.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary("sigmoid", x, sigmoid, |_, y| y * (1.0 - y))
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, x: Var) -> Result<Var> {
        self.unary(
            "swish",
            x,
            |v| v * sigmoid(v),
            |x, _| {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            },
        )
    }

    /// `ln(x + eps)`; requires `x + eps > 0`.
    pub fn log_eps(&mut self, x: Var, eps: f64) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v + eps <= 0.0) {
            return Err(invalid("log", "argument must be positive"));
        }
        self.unary("log", x, move |v| (v + eps).ln(), move |x, _| 1.0 / (x + eps))
    }

    /// `x ^ r` elementwise with a learnable exponent `r` broadcast over `x`'s
    /// leading dimensions. `x` must be nonnegative.
    pub fn power(&mut self, x: Var, r: Var) -> Result<Var> {
        let xv = self.value_rc(x);
        let rv = self.value_rc(r);
        let inner = broadcast_inner("power", xv.shape(), rv.shape())?;
        if xv.data().iter().any(|&v| v < 0.0) {
            return Err(invalid("power", "base must be nonnegative"));
        }
        let out: Vec<f64> = xv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v.powf(rv.data()[i % inner]))
            .collect();
        let yv = Arc::new(Tensor::new(xv.shape().to_vec(), out)?);
        let y_saved = Arc::clone(&yv);
        self.custom(
            "power",
            (*yv).clone(),
            &[x, r],
            Box::new(move |g, needs| {
                let gx = needs[0].then(|| {
                    g.iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            let e = rv.data()[i % inner];
                            let x = xv.data()[i];
                            if x == 0.0 {
                                0.0
                            } else {
                                g * e * x.powf(e - 1.0)
                            }
                        })
                        .collect()
                });
                let gr = needs[1].then(|| {
                    let prod: Vec<f64> = g
                        .iter()
                        .enumerate()
                        .map(|(i, &g)| {
                            let x = xv.data()[i];
                            if x == 0.0 {
                                0.0
                            } else {
                                g * y_saved.data()[i] * x.ln()
                            }
                        })
                        .collect();
                    reduce_to_inner(&prod, inner)
                });
                pair(gx, gr)
            }),
        )
    }

    /// Inverted dropout: at train time each element is zeroed with probability
    /// `p` and survivors are scaled by `1 / (1 - p)`; identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, train: bool, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(invalid("dropout", format!("p must be in [0, 1), got {p}")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value_rc(x);
        let out: Vec<f64> = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.custom(
            "dropout",
            Tensor::new(xv.shape().to_vec(), out)?,
            &[x],
            Box::new(move |g, _| vec![Some(g.iter().zip(&mask).map(|(g, m)| g * m).collect())]),
        )
    }

    /// Fully connected layer: `x [n, in] · w [in, out] + b [out]`.
    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sw.len() != 2 || sb != [sw[1]] {
            return Err(mismatch("dense", sw, sb));
        }
        if sx.len() != 2 || sx[1] != sw[0] {
            return Err(mismatch("dense", sx, sw));
        }
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    /// Mean softmax cross-entropy of `logits [n, k]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value_rc(logits);
        let shape = lv.shape();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(mismatch("softmax_cross_entropy", shape, &[labels.len()]));
        }
        let (n, k) = (shape[0], shape[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(invalid("softmax_cross_entropy", format!("label {bad} out of range for {k} classes")));
        }
        let probs: Vec<f64> = lv.data().chunks(k).flat_map(softmax).collect();
        let loss = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| -(probs[i * k + l].max(f64::MIN_POSITIVE)).ln())
            .sum::<f64>()
            / n as f64;
        let labels = labels.to_vec();
        self.custom(
            "softmax_cross_entropy",
            Tensor::scalar(loss),
            &[logits],
            Box::new(move |g, _| {
                let mut gl = probs.clone();
                for (i, &l) in labels.iter().enumerate() {
                    gl[i * k + l] -= 1.0;
                }
                let s = g[0] / n as f64;
                gl.iter_mut().for_each(|v| *v *= s);
                vec![Some(gl)]
            }),
        )
    }

    /// 1-D convolution (cross-correlation): `x [n, c_in, len]`, `w [c_out, c_in, k]`,
    /// optional `bias [c_out]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value_rc(x);
        let wv = self.value_rc(w);
        let (sx, sw) = (xv.shape().to_vec(), wv.shape().to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        if stride == 0 {
            return Err(invalid("conv1d", "stride must be positive"));
        }
        let (n, cin, len) = (sx[0], sx[1], sx[2]);
        let (cout, k) = (sw[0], sw[2]);
        if len + 2 * padding < k {
            return Err(mismatch("conv1d", &sx, &sw));
        }
        let lout = (len + 2 * padding - k) / stride + 1;
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(mismatch("conv1d", &sw, self.shape(b)));
            }
        }
        let bv = bias.map(|b| self.value_rc(b));
        // valid kernel taps for output position `o`: input start and tap range
        let span = move |o: usize| {
            let start = (o * stride) as isize - padding as isize;
            let k0 = (-start).max(0) as usize;
            let k1 = ((len as isize - start).min(k as isize)).max(0) as usize;
            (start, k0, k1.max(k0))
        };
        let mut out = vec![0.0; n * cout * lout];
        for b in 0..n {
            for o in 0..cout {
                let orow = &mut out[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                let b0 = bv.as_ref().map_or(0.0, |bv| bv.data()[o]);
                for (pos, slot) in orow.iter_mut().enumerate() {
                    let (start, k0, k1) = span(pos);
                    let mut acc = b0;
                    if k0 == k1 {
                        *slot = acc;
                        continue;
                    }
                    for c in 0..cin {
                        let xrow = &xv.data()[(b * cin + c) * len..];
                        let wrow = &wv.data()[(o * cin + c) * k..(o * cin + c + 1) * k];
                        let base = (start + k0 as isize) as usize;
                        acc += wrow[k0..k1]
                            .iter()
                            .zip(&xrow[base..base + (k1 - k0)])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    *slot = acc;
                }
            }
        }
        let value = Tensor::new(vec![n, cout, lout], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.custom(
            "conv1d",
            value,
            &inputs,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![0.0; n * cin * len]);
                let mut gw = needs[1].then(|| vec![0.0; cout * cin * k]);
                for b in 0..n {
                    for o in 0..cout {
                        let grow = &g[(b * cout + o) * lout..(b * cout + o + 1) * lout];
                        for (pos, &gv) in grow.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let (start, k0, k1) = span(pos);
                            if k0 == k1 {
                                continue;
                            }
                            let base = (start + k0 as isize) as usize;
                            for c in 0..cin {
                                let xoff = (b * cin + c) * len + base;
                                let woff = (o * cin + c) * k;
                                if let Some(gw) = gw.as_mut() {
                                    gw[woff + k0..woff + k1]
                                        .iter_mut()
                                        .zip(&xv.data()[xoff..xoff + (k1 - k0)])
                                        .for_each(|(w, x)| *w += gv * x);
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[xoff..xoff + (k1 - k0)]
                                        .iter_mut()
                                        .zip(&wv.data()[woff + k0..woff + k1])
                                        .for_each(|(x, w)| *x += gv * w);
                                }
                            }
                        }
                    }
                }
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut gb = vec![0.0; cout];
                        for (i, row) in g.chunks(lout).enumerate() {
                            gb[i % cout] += row.iter().sum::<f64>();
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }

    /// 2-D convolution (cross-correlation): `x [n, c, h, w]`, `w [o, c, kh, kw]`,
    /// optional `bias [o]`, equal stride and zero padding on both axes.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let xv = self.value_rc(x);
        let wv = self.value_rc(w);
        let (sx, sw) = (xv.shape().to_vec(), wv.shape().to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if stride == 0 {
            return Err(invalid("conv2d", "stride must be positive"));
        }
        let geo = Conv2dGeometry::new(&sx, &sw, stride, padding).ok_or_else(|| mismatch("conv2d", &sx, &sw))?;
        if let Some(b) = bias {
            if self.shape(b) != [geo.cout] {
                return Err(mismatch("conv2d", &sw, self.shape(b)));
            }
        }
        let bv = bias.map(|b| self.value_rc(b));
        let mut out = vec![0.0; geo.n * geo.cout * geo.ho * geo.wo];
        let plane_out = geo.ho * geo.wo;
        for (bo, plane) in out.chunks_mut(plane_out).enumerate() {
            let (b, o) = (bo / geo.cout, bo % geo.cout);
            if let Some(bv) = &bv {
                plane.fill(bv.data()[o]);
            }
            geo.for_each_tap(o, |c, tap, oy, iy, ox0, ix0, count| {
                let wval = wv.data()[tap];
                let xrow = &xv.data()[geo.x_plane(b, c) + iy * geo.w..];
                let orow = &mut plane[oy * geo.wo..];
                geo.axpy(wval, xrow, ix0, orow, ox0, count);
            });
        }
        let value = Tensor::new(vec![geo.n, geo.cout, geo.ho, geo.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.custom(
            "conv2d",
            value,
            &inputs,
            Box::new(move |g, needs| {
                let mut gx = needs[0].then(|| vec![0.0; xv.len()]);
                let mut gw = needs[1].then(|| vec![0.0; wv.len()]);
                for (bo, gplane) in g.chunks(plane_out).enumerate() {
                    let (b, o) = (bo / geo.cout, bo % geo.cout);
                    geo.for_each_tap(o, |c, tap, oy, iy, ox0, ix0, count| {
                        let grow = &gplane[oy * geo.wo..];
                        let xoff = geo.x_plane(b, c) + iy * geo.w;
                        if let Some(gw) = gw.as_mut() {
                            let xrow = &xv.data()[xoff..];
                            gw[tap] += (0..count)
                                .map(|i| grow[ox0 + i] * xrow[ix0 + i * geo.stride])
                                .sum::<f64>();
                        }
                        if let Some(gx) = gx.as_mut() {
                            let wval = wv.data()[tap];
                            let gxrow = &mut gx[xoff..];
                            for i in 0..count {
                                gxrow[ix0 + i * geo.stride] += wval * grow[ox0 + i];
                            }
                        }
                    });
                }
                let mut grads = vec![gx, gw];
                if needs.len() == 3 {
                    grads.push(needs[2].then(|| {
                        let mut gb = vec![0.0; geo.cout];
                        for (bo, gplane) in g.chunks(plane_out).enumerate() {
                            gb[bo % geo.cout] += gplane.iter().sum::<f64>();
                        }
                        gb
                    }));
                }
                grads
            }),
        )
    }

    /// Max pooling over `x [n, c, h, w]` with a square `kernel` and `stride`.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value_rc(x);
        let s = xv.shape().to_vec();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] < kernel || s[3] < kernel {
            return Err(mismatch("max_pool2d", &s, &[kernel, kernel]));
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
        let planes = s[0] * s[1];
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            let plane = &xv.data()[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let idx = (oy * stride + ky) * w + ox * stride + kx;
                            if plane[idx] > best.0 {
                                best = (plane[idx], idx);
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(p * h * w + best.1);
                }
            }
        }
        let total = xv.len();
        self.custom(
            "max_pool2d",
            Tensor::new(vec![s[0], s[1], ho, wo], out)?,
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; total];
                for (&idx, &gv) in argmax.iter().zip(g) {
                    gx[idx] += gv;
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Average pooling along the last axis.
    pub fn mean_pool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xv = self.value_rc(x);
        let s = xv.shape().to_vec();
        let len = *s.last().unwrap_or(&0);
        if s.is_empty() || kernel == 0 || stride == 0 || len < kernel {
            return Err(mismatch("mean_pool1d", &s, &[kernel]));
        }
        let lout = (len - kernel) / stride + 1;
        let rows = xv.len() / len;
        let inv = 1.0 / kernel as f64;
        let mut out = Vec::with_capacity(rows * lout);
        for r in 0..rows {
            let row = &xv.data()[r * len..(r + 1) * len];
            for o in 0..lout {
                out.push(row[o * stride..o * stride + kernel].iter().sum::<f64>() * inv);
            }
        }
        let mut out_shape = s.clone();
        *out_shape.last_mut().unwrap() = lout;
        self.custom(
            "mean_pool1d",
            Tensor::new(out_shape, out)?,
            &[x],
            Box::new(move |g, _| {
                let mut gx = vec![0.0; rows * len];
                for r in 0..rows {
                    for o in 0..lout {
                        let gv = g[r * lout + o] * inv;
                        gx[r * len + o * stride..r * len + o * stride + kernel]
                            .iter_mut()
                            .for_each(|v| *v += gv);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Copy)]
struct Conv2dGeometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl Conv2dGeometry {
    fn new(sx: &[usize], sw: &[usize], stride: usize, padding: usize) -> Option<Self> {
        let (h, w, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return None;
        }
        Some(Self {
            n: sx[0],
            cin: sx[1],
            h,
            w,
            cout: sw[0],
            kh,
            kw,
            ho: (h + 2 * padding - kh) / stride + 1,
            wo: (w + 2 * padding - kw) / stride + 1,
            stride,
            padding,
        })
    }

    fn x_plane(&self, b: usize, c: usize) -> usize {
        (b * self.cin + c) * self.h * self.w
    }

    /// Calls `f(c, tap_index, oy, iy, ox0, ix0, count)` for every kernel tap
    /// and output row of output channel `o`, restricted to in-bounds columns.
    fn for_each_tap(&self, o: usize, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize)) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        for c in 0..self.cin {
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let tap = ((o * self.cin + c) * self.kh + ky) * self.kw + kx;
                    // columns with 0 <= ox*s + kx - p < w
                    let lo = (p - kx as isize).max(0);
                    let ox0 = ((lo + s - 1) / s) as usize;
                    let hi = self.w as isize - 1 + p - kx as isize;
                    if hi < 0 {
                        continue;
                    }
                    let ox1 = ((hi / s) as usize + 1).min(self.wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    let ix0 = (ox0 as isize * s + kx as isize - p) as usize;
                    for oy in 0..self.ho {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        f(c, tap, oy, iy as usize, ox0, ix0, ox1 - ox0);
                    }
                }
            }
        }
    }

    fn axpy(&self, a: f64, x: &[f64], ix0: usize, y: &mut [f64], oy0: usize, count: usize) {
        if self.stride == 1 {
            y[oy0..oy0 + count]
                .iter_mut()
                .zip(&x[ix0..ix0 + count])
                .for_each(|(y, x)| *y += a * x);
        } else {
            for i in 0..count {
                y[oy0 + i] += a * x[ix0 + i * self.stride];
            }
        }
    }
}
