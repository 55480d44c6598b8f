use rand::Rng;

use crate::autodiff::store::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Copy, Clone, PartialEq, Eq)]
pub struct Var(usize);

type BackFn<E> = Box<dyn FnOnce(&Tensor<E>, &mut BackSink<'_, E>)>;

struct Node<E: Scalar> {
    value: Tensor<E>,
    back: Option<BackFn<E>>,
}

struct BackSink<'a, E: Scalar> {
    grads: &'a mut [Option<Tensor<E>>],
    store: &'a mut ParamStore<E>,
}

impl<E: Scalar> BackSink<'_, E> {
    fn to_node(&mut self, v: Var, g: Tensor<E>) {
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_scaled(&g, E::ONE).expect("gradient shape drift"),
            slot @ None => *slot = Some(g),
        }
    }

    fn to_param(&mut self, id: ParamId, g: &Tensor<E>) {
        self.store.accumulate_grad(id, g).expect("gradient shape drift");
    }
}

/// Record of one forward pass. Operations return [`Var`] handles;
/// [`Tape::backward`] replays the recorded closures in reverse and
/// accumulates parameter gradients into the store.
pub struct Tape<E: Scalar> {
    nodes: Vec<Node<E>>,
}

impl<E: Scalar> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Scalar> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<E>, back: Option<BackFn<E>>) -> Var {
        self.nodes.push(Node { value, back });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    /// Constant input; no gradient flows out of it.
    pub fn leaf(&mut self, value: Tensor<E>) -> Var {
        self.push(value, None)
    }

    /// Leaf bound to a stored parameter. The value is snapshotted here;
    /// `backward` adds the leaf's gradient to `store.grad(id)`.
    pub fn param(&mut self, store: &ParamStore<E>, id: ParamId) -> Var {
        let value = store.value(id).clone();
        let back: BackFn<E> = Box::new(move |g, sink| sink.to_param(id, g));
        self.push(value, Some(back))
    }

    /// `y = x W + b` with `x: [n,d_in]`, `W: [d_in,d_out]`, `b: [d_out]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        let bv = self.value(b);
        let (n, _) = xv.dims2()?;
        let (_, d_out) = wv.dims2()?;
        if bv.shape() != [d_out] {
            return Err(Error::ShapeMismatch(format!(
                "affine bias {:?} does not match output dim {d_out}",
                bv.shape()
            )));
        }
        let mut y = xv.matmul(&wv)?;
        {
            let bd = self.value(b).data().to_vec();
            for row in 0..n {
                for (c, &bc) in bd.iter().enumerate() {
                    y.data_mut()[row * d_out + c] += bc;
                }
            }
        }
        let back: BackFn<E> = Box::new(move |g, sink| {
            let dx = g.matmul_t(&wv).expect("affine dx");
            let dw = xv.t_matmul(g).expect("affine dw");
            let (n, d_out) = g.dims2().expect("affine grad rank");
            let mut db = Tensor::zeros(&[d_out]);
            for row in 0..n {
                for c in 0..d_out {
                    db.data_mut()[c] += g.data()[row * d_out + c];
                }
            }
            sink.to_node(x, dx);
            sink.to_node(w, dw);
            sink.to_node(b, db);
        });
        Ok(self.push(y, Some(back)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x).clone();
        let y = xv.map(|v| if v > E::ZERO { v } else { E::ZERO });
        let back: BackFn<E> = Box::new(move |g, sink| {
            let dx = g
                .zip_map(&xv, |gv, v| if v > E::ZERO { gv } else { E::ZERO })
                .expect("relu dx");
            sink.to_node(x, dx);
        });
        self.push(y, Some(back))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| {
            // Split on the sign to avoid overflow in exp.
            if v >= E::ZERO {
                E::ONE / (E::ONE + (-v).exp())
            } else {
                let e = v.exp();
                e / (E::ONE + e)
            }
        });
        let yv = y.clone();
        let back: BackFn<E> = Box::new(move |g, sink| {
            let dx = g
                .zip_map(&yv, |gv, s| gv * s * (E::ONE - s))
                .expect("sigmoid dx");
            sink.to_node(x, dx);
        });
        self.push(y, Some(back))
    }

    /// Elementwise product of two same-shape values.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let y = av.zip_map(&bv, |x, z| x * z)?;
        let back: BackFn<E> = Box::new(move |g, sink| {
            let da = g.zip_map(&bv, |gv, z| gv * z).expect("mul da");
            let db = g.zip_map(&av, |gv, x| gv * x).expect("mul db");
            sink.to_node(a, da);
            sink.to_node(b, db);
        });
        Ok(self.push(y, Some(back)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).zip_map(self.value(b), |x, z| x + z)?;
        let back: BackFn<E> = Box::new(move |g, sink| {
            sink.to_node(a, g.clone());
            sink.to_node(b, g.clone());
        });
        Ok(self.push(y, Some(back)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let ce = E::from_f64(c);
        let y = self.value(x).map(|v| v * ce);
        let back: BackFn<E> = Box::new(move |g, sink| sink.to_node(x, g.map(|v| v * ce)));
        self.push(y, Some(back))
    }

    /// Concatenate `[n, d_i]` blocks along the last axis into `[n, sum d_i]`.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        }
        let mut n0 = None;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (n, d) = self.value(p).dims2()?;
            if *n0.get_or_insert(n) != n {
                return Err(Error::ShapeMismatch(
                    "concat parts disagree on row count".into(),
                ));
            }
            widths.push(d);
        }
        let n = n0.unwrap();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(&[n, total]);
        let mut offset = 0;
        for (&p, &d) in parts.iter().zip(&widths) {
            let pv = self.value(p);
            for row in 0..n {
                let src = &pv.data()[row * d..(row + 1) * d];
                out.data_mut()[row * total + offset..row * total + offset + d]
                    .copy_from_slice(src);
            }
            offset += d;
        }
        let parts = parts.to_vec();
        let back: BackFn<E> = Box::new(move |g, sink| {
            let mut offset = 0;
            for (&p, &d) in parts.iter().zip(&widths) {
                let mut dp = Tensor::zeros(&[n, d]);
                for row in 0..n {
                    let src = &g.data()[row * total + offset..row * total + offset + d];
                    dp.data_mut()[row * d..(row + 1) * d].copy_from_slice(src);
                }
                sink.to_node(p, dp);
                offset += d;
            }
        });
        Ok(self.push(out, Some(back)))
    }

    /// Inverted dropout: in training, zeroes each element with probability
    /// `p` and scales survivors by `1/(1-p)`; in eval it is the identity.
    pub fn dropout(
        &mut self,
        x: Var,
        p: f64,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep_scale = E::from_f64(1.0 / (1.0 - p));
        let mask = Tensor::from_fn(self.value(x).shape(), |_| {
            if rng.gen::<f64>() >= p {
                keep_scale
            } else {
                E::ZERO
            }
        });
        let y = self.value(x).zip_map(&mask, |v, m| v * m)?;
        let back: BackFn<E> = Box::new(move |g, sink| {
            let dx = g.zip_map(&mask, |gv, m| gv * m).expect("dropout dx");
            sink.to_node(x, dx);
        });
        Ok(self.push(y, Some(back)))
    }

    /// Elementwise mean of same-shape values. Sums in f64 so the result is
    /// exact for f32 inputs and therefore independent of argument order.
    pub fn mean_of(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::InvalidArgument("mean of zero tensors".into()));
        }
        let shape = self.value(parts[0]).shape().to_vec();
        for &p in parts {
            if self.value(p).shape() != shape {
                return Err(Error::ShapeMismatch(
                    "mean_of parts disagree on shape".into(),
                ));
            }
        }
        let k = parts.len();
        let inv_k = 1.0 / k as f64;
        let mut acc = vec![0.0f64; shape.iter().product()];
        for &p in parts {
            for (a, v) in acc.iter_mut().zip(self.value(p).data()) {
                *a += v.to_f64();
            }
        }
        let data = acc.into_iter().map(|a| E::from_f64(a * inv_k)).collect();
        let y = Tensor::new(shape, data)?;
        let parts = parts.to_vec();
        let back: BackFn<E> = Box::new(move |g, sink| {
            let scaled = g.map(|v| v * E::from_f64(inv_k));
            for &p in &parts {
                sink.to_node(p, scaled.clone());
            }
        });
        Ok(self.push(y, Some(back)))
    }

    /// Sum of every element into a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let shape = self.value(x).shape().to_vec();
        let mut acc = E::ZERO;
        for &v in self.value(x).data() {
            acc += v;
        }
        let back: BackFn<E> = Box::new(move |g, sink| {
            sink.to_node(x, Tensor::full(&shape, g.item()));
        });
        self.push(Tensor::scalar(acc), Some(back))
    }

    /// Mean over one axis of a rank-2 value: axis 0 -> `[cols]`,
    /// axis 1 -> `[rows]`.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (n, d) = self.value(x).dims2()?;
        if self.value(x).shape().len() != 2 {
            return Err(Error::ShapeMismatch("mean_axis wants a rank-2 tensor".into()));
        }
        if axis > 1 {
            return Err(Error::InvalidArgument(format!("mean_axis axis {axis} > 1")));
        }
        let xv = self.value(x);
        let y = if axis == 0 {
            let inv = E::from_f64(1.0 / n as f64);
            let mut out = Tensor::zeros(&[d]);
            for row in 0..n {
                for c in 0..d {
                    out.data_mut()[c] += xv.data()[row * d + c] * inv;
                }
            }
            out
        } else {
            let inv = E::from_f64(1.0 / d as f64);
            let mut out = Tensor::zeros(&[n]);
            for row in 0..n {
                for c in 0..d {
                    out.data_mut()[row] += xv.data()[row * d + c] * inv;
                }
            }
            out
        };
        let back: BackFn<E> = Box::new(move |g, sink| {
            let mut dx = Tensor::zeros(&[n, d]);
            if axis == 0 {
                let inv = E::from_f64(1.0 / n as f64);
                for row in 0..n {
                    for c in 0..d {
                        dx.data_mut()[row * d + c] = g.data()[c] * inv;
                    }
                }
            } else {
                let inv = E::from_f64(1.0 / d as f64);
                for row in 0..n {
                    for c in 0..d {
                        dx.data_mut()[row * d + c] = g.data()[row] * inv;
                    }
                }
            }
            sink.to_node(x, dx);
        });
        Ok(self.push(y, Some(back)))
    }

    /// Mean softmax cross-entropy of `logits: [n,C]` against class ids.
    /// Returns a rank-0 loss.
    pub fn softmax_xent(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (n, c) = lv.dims2()?;
        if targets.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} targets for {n} logit rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!(
                "target class {bad} out of range for {c} classes"
            )));
        }
        let probs = softmax_rows(lv);
        let mut loss_acc = 0.0f64;
        for (row, &t) in targets.iter().enumerate() {
            loss_acc -= probs.data()[row * c + t].to_f64().max(f64::MIN_POSITIVE).ln();
        }
        let loss = Tensor::scalar(E::from_f64(loss_acc / n as f64));
        let targets = targets.to_vec();
        let back: BackFn<E> = Box::new(move |g, sink| {
            let scale = g.item() * E::from_f64(1.0 / n as f64);
            let mut dl = probs.clone();
            for (row, &t) in targets.iter().enumerate() {
                dl.data_mut()[row * c + t] = dl.data()[row * c + t] - E::ONE;
            }
            let dl = dl.map(|v| v * scale);
            sink.to_node(logits, dl);
        });
        Ok(self.push(loss, Some(back)))
    }

    /// Runs the recorded closures in reverse from `loss` (must be rank-0)
    /// and accumulates parameter gradients into `store`.
    pub fn backward(mut self, loss: Var, store: &mut ParamStore<E>) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::ShapeMismatch(
                "backward starts from a scalar loss".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed_shape = self.nodes[loss.0].value.shape().to_vec();
        grads[loss.0] = Some(Tensor::full(&seed_shape, E::ONE));
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            let Some(back) = self.nodes[i].back.take() else { continue };
            let mut sink = BackSink { grads: &mut grads, store };
            back(&g, &mut sink);
        }
        Ok(())
    }
}

/// Row-wise softmax with the usual max-subtraction for stability.
pub fn softmax_rows<E: Scalar>(logits: &Tensor<E>) -> Tensor<E> {
    let (n, c) = logits.dims2().expect("softmax over rank <= 2");
    let mut out = logits.clone();
    for row in 0..n {
        let slice = &mut out.data_mut()[row * c..(row + 1) * c];
        let max = slice.iter().copied().fold(f64::NEG_INFINITY, |m, v| m.max(v.to_f64()));
        let mut denom = 0.0f64;
        for v in slice.iter_mut() {
            let e = (v.to_f64() - max).exp();
            denom += e;
            *v = E::from_f64(e);
        }
        let inv = E::from_f64(1.0 / denom);
        for v in slice.iter_mut() {
            *v = *v * inv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn store_with<E: Scalar>(pairs: &[(&str, Tensor<E>)]) -> ParamStore<E> {
        let mut s = ParamStore::new();
        for (name, t) in pairs {
            s.register(*name, t.clone());
        }
        s
    }

    #[test]
    fn affine_identity_passes_input_through() {
        let store = store_with::<f64>(&[
            ("w", Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()),
            ("b", Tensor::zeros(&[2])),
        ]);
        let (w, b) = (ParamId(0), ParamId(1));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2, 2], vec![3.0, -1.0, 0.5, 2.0]).unwrap());
        let wv = tape.param(&store, w);
        let bv = tape.param(&store, b);
        let y = tape.affine(x, wv, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0, 0.5, 2.0]);
    }

    #[test]
    fn affine_zero_input_broadcasts_bias() {
        let store = store_with::<f64>(&[
            ("w", Tensor::full(&[3, 2], 7.0)),
            ("b", Tensor::new(vec![2], vec![0.5, -1.5]).unwrap()),
        ]);
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]));
        let wv = tape.param(&store, ParamId(0));
        let bv = tape.param(&store, ParamId(1));
        let y = tape.affine(x, wv, bv).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn sigmoid_at_zero_is_half() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = derive_rng(1, "dropout", &[]);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_fn(&[4, 4], |i| i as f32));
        let y = tape.dropout(x, 0.5, false, &mut rng).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_rejects_bad_probability() {
        let mut rng = derive_rng(1, "dropout", &[]);
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
        assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_zero_rate_near_expected_fraction() {
        let mut rng = derive_rng(9, "dropout", &[]);
        let mut tape = Tape::<f32>::new();
        let n = 100_000;
        let x = tape.leaf(Tensor::full(&[n], 1.0));
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        let zeroed = tape.value(y).data().iter().filter(|&&v| v == 0.0).count();
        let frac = zeroed as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "zeroed fraction {frac}");
        // Survivors are scaled by 1/(1-p).
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn concat_of_three_1024_blocks_is_3072_wide() {
        let mut tape = Tape::<f32>::new();
        let parts: Vec<Var> = (0..3)
            .map(|i| tape.leaf(Tensor::full(&[1, 1024], i as f32)))
            .collect();
        let y = tape.concat(&parts).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 3072]);
        assert_eq!(tape.value(y).data()[1024], 1.0);
        assert_eq!(tape.value(y).data()[2048], 2.0);
    }

    #[test]
    fn softmax_xent_uniform_logits_is_ln_c() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[4, 8]));
        let loss = tape.softmax_xent(logits, &[0, 3, 5, 7]).unwrap();
        assert!((tape.value(loss).item() - (8.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_xent_large_margin_drives_loss_to_zero() {
        let mut tape = Tape::<f64>::new();
        let mut t = Tensor::zeros(&[1, 8]);
        t.data_mut()[2] = 50.0;
        let logits = tape.leaf(t);
        let loss = tape.softmax_xent(logits, &[2]).unwrap();
        assert!(tape.value(loss).item() < 1e-12);
    }

    #[test]
    fn softmax_xent_rejects_out_of_range_target() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.leaf(Tensor::zeros(&[1, 4]));
        assert!(tape.softmax_xent(logits, &[4]).is_err());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = derive_rng(3, "softmax", &[]);
        let t = Tensor::<f64>::from_fn(&[16, 9], |_| rng.gen_range(-10.0..10.0));
        let p = softmax_rows(&t);
        for row in 0..16 {
            let s: f64 = p.row(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn backward_accumulates_shared_parameter_use() {
        // y = sum over two uses of w: d/dw should be the sum of both paths.
        let mut store = store_with::<f64>(&[("w", Tensor::new(vec![1, 1], vec![2.0]).unwrap())]);
        let w = ParamId(0);
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let sq = tape.mul(wv, wv).unwrap(); // w^2
        let mean = tape.mean_axis(sq, 1).unwrap();
        let mean0 = tape.mean_axis(mean, 1);
        assert!(mean0.is_err()); // mean is rank-1 now
        let loss = tape.scale(mean, 1.0);
        tape.backward(loss, &mut store).unwrap();
        // d(w^2)/dw = 2w = 4
        assert!((store.grad(w).data()[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn mean_of_is_permutation_invariant_bitwise() {
        let mut rng = derive_rng(11, "perm", &[]);
        let parts: Vec<Tensor<f32>> = (0..5)
            .map(|_| Tensor::from_fn(&[3, 7], |_| rng.gen_range(-1.0f64..1.0) as f32))
            .collect();
        let run = |order: &[usize]| {
            let mut tape = Tape::<f32>::new();
            let vars: Vec<Var> = order.iter().map(|&i| tape.leaf(parts[i].clone())).collect();
            let m = tape.mean_of(&vars).unwrap();
            tape.value(m).clone()
        };
        let a = run(&[0, 1, 2, 3, 4]);
        let b = run(&[4, 2, 0, 3, 1]);
        assert_eq!(a, b);
    }

    #[test]
    fn finite_outputs_for_finite_inputs() {
        let mut rng = derive_rng(5, "finite", &[]);
        for trial in 0..50 {
            let mut d = derive_rng(5, "finite-case", &[trial]);
            let store = store_with::<f32>(&[
                ("w", Tensor::from_fn(&[6, 4], |_| d.gen_range(-3.0f64..3.0) as f32)),
                ("b", Tensor::from_fn(&[4], |_| d.gen_range(-3.0f64..3.0) as f32)),
            ]);
            let mut tape = Tape::new();
            let x = tape.leaf(Tensor::from_fn(&[2, 6], |_| d.gen_range(-50.0f64..50.0) as f32));
            let wv = tape.param(&store, ParamId(0));
            let bv = tape.param(&store, ParamId(1));
            let h = tape.affine(x, wv, bv).unwrap();
            let r = tape.relu(h);
            let s = tape.sigmoid(r);
            let m = tape.mul(s, r).unwrap();
            let dr = tape.dropout(m, 0.3, true, &mut rng).unwrap();
            let y = tape.mean_axis(dr, 0).unwrap();
            assert!(tape.value(y).all_finite());
        }
    }
}
