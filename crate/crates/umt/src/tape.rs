//! Minimal reverse-mode autodiff over dense `f64` matrices.
//!
//! Everything the trainable models need is expressed over 2-D arrays:
//! token batches are `(N, C)`, biases and pooled embeddings are `(1, C)`,
//! scalars are `(1, 1)`. Each op pushes a node holding its value and a
//! closure that maps the output gradient to contributions for its parents.
//! [`Tape::backward`] walks the nodes in reverse creation order.
//!
//! The tape also carries the attention-element counter used for the
//! masking-cost accounting: attention layers report how many score-matrix
//! entries they materialize.

use ndarray::{s, Array2, Axis};
use std::rc::Rc;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Array2<f64>) -> Vec<(usize, Array2<f64>)>>;

struct Node {
    value: Rc<Array2<f64>>,
    back: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Score-matrix elements materialized by attention ops on this tape.
    pub attn_elements: u64,
}

/// Gradients of one scalar root with respect to every node on the tape.
pub struct Grads {
    by_node: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.by_node[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let a = self.value(v);
        debug_assert_eq!(a.dim(), (1, 1));
        a[[0, 0]]
    }

    pub fn count_attn(&mut self, elements: u64) {
        self.attn_elements += elements;
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            back,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf node. Whether it acts as a constant or a parameter is decided by
    /// whoever keeps the returned handle.
    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &*self.nodes[a.0].value + &*self.nodes[b.0].value;
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = &*self.nodes[a.0].value - &*self.nodes[b.0].value;
        self.push(
            out,
            Some(Box::new(move |g| vec![(a.0, g.clone()), (b.0, -g)])),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let va = Rc::clone(&self.nodes[a.0].value);
        let vb = Rc::clone(&self.nodes[b.0].value);
        let out = &*va * &*vb;
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.0, g * &*vb), (b.0, g * &*va)]
            })),
        )
    }

    /// `x + b` with `b` of shape `(1, n)` broadcast over the rows of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let vb = Rc::clone(&self.nodes[b.0].value);
        let out = &*self.nodes[x.0].value + &*vb;
        self.push(
            out,
            Some(Box::new(move |g| {
                let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![(x.0, g.clone()), (b.0, db)]
            })),
        )
    }

    /// Adds a fixed matrix (no gradient), e.g. positions or attention masks.
    pub fn add_const(&mut self, x: Var, c: &Array2<f64>) -> Var {
        let out = &*self.nodes[x.0].value + c;
        self.push(out, Some(Box::new(move |g| vec![(x.0, g.clone())])))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = &*self.nodes[x.0].value * c;
        self.push(out, Some(Box::new(move |g| vec![(x.0, g * c)])))
    }

    /// `x * s` with `s` a learnable `(1, 1)` scalar.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        let vx = Rc::clone(&self.nodes[x.0].value);
        let vs = Rc::clone(&self.nodes[s.0].value);
        let out = &*vx * vs[[0, 0]];
        self.push(
            out,
            Some(Box::new(move |g| {
                let ds = Array2::from_elem((1, 1), (g * &*vx).sum());
                vec![(x.0, g * vs[[0, 0]]), (s.0, ds)]
            })),
        )
    }

    pub fn recip(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.mapv(|v| 1.0 / v);
        let vy = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g| vec![(x.0, -(g * &*vy * &*vy))])),
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let va = Rc::clone(&self.nodes[a.0].value);
        let vb = Rc::clone(&self.nodes[b.0].value);
        let out = va.dot(&*vb);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(a.0, g.dot(&vb.t())), (b.0, va.t().dot(g))]
            })),
        )
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.nodes[x.0].value.t().to_owned();
        self.push(out, Some(Box::new(move |g| vec![(x.0, g.t().to_owned())])))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let out = softmax_rows(&self.nodes[x.0].value);
        let vy = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = g * &*vy;
                for (mut row, (grow, yrow)) in dx
                    .axis_iter_mut(Axis(0))
                    .zip(g.axis_iter(Axis(0)).zip(vy.axis_iter(Axis(0))))
                {
                    let dot: f64 = grow.iter().zip(yrow.iter()).map(|(a, b)| a * b).sum();
                    for (d, y) in row.iter_mut().zip(yrow.iter()) {
                        *d -= dot * y;
                    }
                }
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let mut out = vx.as_ref().clone();
        for mut row in out.axis_iter_mut(Axis(0)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.mapv_inplace(|v| v - lse);
        }
        let vy = Rc::new(out.clone());
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                for (mut row, (grow, yrow)) in dx
                    .axis_iter_mut(Axis(0))
                    .zip(g.axis_iter(Axis(0)).zip(vy.axis_iter(Axis(0))))
                {
                    let gsum: f64 = grow.iter().sum();
                    for (d, y) in row.iter_mut().zip(yrow.iter()) {
                        *d -= gsum * y.exp();
                    }
                }
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let vx = Rc::clone(&self.nodes[x.0].value);
        let vg = Rc::clone(&self.nodes[gain.0].value);
        let n = vx.ncols() as f64;
        let mut xhat = vx.as_ref().clone();
        let mut inv_sigma = Vec::with_capacity(vx.nrows());
        for mut row in xhat.axis_iter_mut(Axis(0)) {
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma.push(is);
            row.mapv_inplace(|v| (v - mu) * is);
        }
        let xhat = Rc::new(xhat);
        let out = {
            let mut o = xhat.as_ref().clone();
            for mut row in o.axis_iter_mut(Axis(0)) {
                for (j, v) in row.iter_mut().enumerate() {
                    *v = *v * vg[[0, j]];
                }
            }
            o + &*self.nodes[bias.0].value
        };
        let xh = Rc::clone(&xhat);
        self.push(
            out,
            Some(Box::new(move |g| {
                let dgain = (g * &*xh).sum_axis(Axis(0)).insert_axis(Axis(0));
                let dbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                // dxhat = g * gain, then the per-row layernorm backward
                let mut dx = g.clone();
                for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    let ncols = row.len();
                    let mut dxhat = vec![0.0; ncols];
                    for (j, d) in dxhat.iter_mut().enumerate() {
                        *d = g[[i, j]] * vg[[0, j]];
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / n;
                    let mean_dx: f64 = dxhat
                        .iter()
                        .enumerate()
                        .map(|(j, d)| d * xh[[i, j]])
                        .sum::<f64>()
                        / n;
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = (dxhat[j] - mean_d - xh[[i, j]] * mean_dx) * inv_sigma[i];
                    }
                }
                vec![(x.0, dx), (gain.0, dgain), (bias.0, dbias)]
            })),
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let vx = Rc::clone(&self.nodes[x.0].value);
        let out = vx.mapv(gelu);
        self.push(
            out,
            Some(Box::new(move |g| {
                let dx = vx.mapv(gelu_grad) * g;
                vec![(x.0, dx)]
            })),
        )
    }

    /// Row-wise L2 normalization with an epsilon floor on the norm.
    pub fn l2norm_rows(&mut self, x: Var, eps: f64) -> Var {
        let vx = Rc::clone(&self.nodes[x.0].value);
        let norms: Vec<f64> = vx
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps))
            .collect();
        let mut out = vx.as_ref().clone();
        for (mut row, &nv) in out.axis_iter_mut(Axis(0)).zip(norms.iter()) {
            row.mapv_inplace(|v| v / nv);
        }
        let raw_norms: Vec<f64> = vx
            .axis_iter(Axis(0))
            .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = g.clone();
                for (i, mut row) in dx.axis_iter_mut(Axis(0)).enumerate() {
                    let nv = raw_norms[i].max(eps);
                    if raw_norms[i] > eps {
                        let dot: f64 = (0..row.len()).map(|j| vx[[i, j]] * g[[i, j]]).sum();
                        for (j, v) in row.iter_mut().enumerate() {
                            *v = g[[i, j]] / nv - vx[[i, j]] * dot / (nv * nv * nv);
                        }
                    } else {
                        for v in row.iter_mut() {
                            *v /= nv;
                        }
                    }
                }
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let vx = &self.nodes[x.0].value;
        let ncols = vx.ncols();
        let nrows = vx.nrows();
        let mut out = Array2::zeros((idx.len(), ncols));
        for (r, &i) in idx.iter().enumerate() {
            out.row_mut(r).assign(&vx.row(i));
        }
        let idx = idx.to_vec();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Array2::zeros((nrows, g.ncols()));
                for (r, &i) in idx.iter().enumerate() {
                    let mut row = dx.row_mut(i);
                    row += &g.row(r);
                }
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn select_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let vx = &self.nodes[x.0].value;
        let ncols = vx.ncols();
        let out = vx.slice(s![.., start..start + len]).to_owned();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Array2::zeros((g.nrows(), ncols));
                dx.slice_mut(s![.., start..start + len]).assign(g);
                vec![(x.0, dx)]
            })),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let ncols = self.nodes[parts[0].0].value.ncols();
        let rows: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.nrows()).collect();
        let total: usize = rows.iter().sum();
        let mut out = Array2::zeros((total, ncols));
        let mut at = 0;
        for (p, &r) in parts.iter().zip(rows.iter()) {
            out.slice_mut(s![at..at + r, ..])
                .assign(&self.nodes[p.0].value);
            at += r;
        }
        let parts = parts.to_vec();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(parts.len());
                let mut at = 0;
                for (p, &r) in parts.iter().zip(rows.iter()) {
                    grads.push((p.0, g.slice(s![at..at + r, ..]).to_owned()));
                    at += r;
                }
                grads
            })),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let nrows = self.nodes[parts[0].0].value.nrows();
        let cols: Vec<usize> = parts.iter().map(|p| self.nodes[p.0].value.ncols()).collect();
        let total: usize = cols.iter().sum();
        let mut out = Array2::zeros((nrows, total));
        let mut at = 0;
        for (p, &c) in parts.iter().zip(cols.iter()) {
            out.slice_mut(s![.., at..at + c])
                .assign(&self.nodes[p.0].value);
            at += c;
        }
        let parts = parts.to_vec();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut grads = Vec::with_capacity(parts.len());
                let mut at = 0;
                for (p, &c) in parts.iter().zip(cols.iter()) {
                    grads.push((p.0, g.slice(s![.., at..at + c]).to_owned()));
                    at += c;
                }
                grads
            })),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let (m, n) = vx.dim();
        let out = Array2::from_elem((1, 1), vx.sum() / (m * n) as f64);
        self.push(
            out,
            Some(Box::new(move |g| {
                vec![(x.0, Array2::from_elem((m, n), g[[0, 0]] / (m * n) as f64))]
            })),
        )
    }

    /// Mean over rows: `(m, n) -> (1, n)`.
    pub fn mean_rows(&mut self, x: Var) -> Var {
        let vx = &self.nodes[x.0].value;
        let (m, n) = vx.dim();
        let out = (vx.sum_axis(Axis(0)) / m as f64).insert_axis(Axis(0));
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Array2::zeros((m, n));
                for mut row in dx.axis_iter_mut(Axis(0)) {
                    for (j, v) in row.iter_mut().enumerate() {
                        *v = g[[0, j]] / m as f64;
                    }
                }
                vec![(x.0, dx)]
            })),
        )
    }

    /// Per-row column pick: `y[i, 0] = x[i, cols[i]]`.
    pub fn gather_cols_per_row(&mut self, x: Var, cols: &[usize]) -> Var {
        let vx = &self.nodes[x.0].value;
        let (m, n) = vx.dim();
        assert_eq!(m, cols.len());
        let mut out = Array2::zeros((m, 1));
        for (i, &c) in cols.iter().enumerate() {
            out[[i, 0]] = vx[[i, c]];
        }
        let cols = cols.to_vec();
        self.push(
            out,
            Some(Box::new(move |g| {
                let mut dx = Array2::zeros((m, n));
                for (i, &c) in cols.iter().enumerate() {
                    dx[[i, c]] += g[[i, 0]];
                }
                vec![(x.0, dx)]
            })),
        )
    }

    /// Mean binary cross-entropy with logits against fixed labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Array2<f64>) -> Var {
        let vz = Rc::clone(&self.nodes[logits.0].value);
        let labels = labels.clone();
        let count = vz.len() as f64;
        let mut total = 0.0;
        for (&z, &y) in vz.iter().zip(labels.iter()) {
            total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        }
        let out = Array2::from_elem((1, 1), total / count);
        self.push(
            out,
            Some(Box::new(move |g| {
                let scale = g[[0, 0]] / count;
                let mut dz = vz.as_ref().clone();
                for (d, &y) in dz.iter_mut().zip(labels.iter()) {
                    *d = (sigmoid(*d) - y) * scale;
                }
                vec![(logits.0, dz)]
            })),
        )
    }

    /// Reverse pass from a `(1, 1)` root.
    pub fn backward(&self, root: Var) -> Grads {
        let mut by_node: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        by_node[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let Some(g) = by_node[i].take() else { continue };
            if let Some(back) = &self.nodes[i].back {
                for (parent, contrib) in back(&g) {
                    match &mut by_node[parent] {
                        Some(acc) => *acc += &contrib,
                        slot => *slot = Some(contrib),
                    }
                }
            }
            by_node[i] = Some(g);
        }
        Grads { by_node }
    }
}

pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    /// Finite-difference check of a scalar-valued graph builder.
    fn check_grad<F>(build: F, inputs: &[Array2<f64>], tol: f64)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone())).collect();
        let root = build(&mut tape, &vars);
        let grads = tape.backward(root);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]).cloned().unwrap_or_else(|| {
                Array2::zeros(input.dim())
            });
            for i in 0..input.nrows() {
                for j in 0..input.ncols() {
                    let eval = |delta: f64| {
                        let mut tape = Tape::new();
                        let vars: Vec<Var> = inputs
                            .iter()
                            .enumerate()
                            .map(|(m, a)| {
                                let mut a = a.clone();
                                if m == k {
                                    a[[i, j]] += delta;
                                }
                                tape.leaf(a)
                            })
                            .collect();
                        let root = build(&mut tape, &vars);
                        tape.scalar(root)
                    };
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    let a = analytic[[i, j]];
                    let denom = a.abs().max(numeric.abs()).max(1.0);
                    assert!(
                        (a - numeric).abs() / denom < tol,
                        "input {k} at ({i},{j}): analytic {a} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    fn randn(rng: &mut impl Rng, m: usize, n: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, n), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn grad_matmul_chain() {
        let mut rng = crate::rng::rng_from(1);
        let a = randn(&mut rng, 3, 4);
        let b = randn(&mut rng, 4, 2);
        check_grad(
            |t, v| {
                let y = t.matmul(v[0], v[1]);
                let y = t.gelu(y);
                t.mean_all(y)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn grad_softmax_layernorm_l2() {
        let mut rng = crate::rng::rng_from(2);
        let x = randn(&mut rng, 3, 5);
        let g = randn(&mut rng, 1, 5);
        let b = randn(&mut rng, 1, 5);
        check_grad(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-6);
                let y = t.softmax_rows(y);
                let y = t.l2norm_rows(y, 1e-6);
                t.mean_all(y)
            },
            &[x, g, b],
            1e-5,
        );
    }

    #[test]
    fn grad_logsoftmax_gather_bce() {
        let mut rng = crate::rng::rng_from(3);
        let x = randn(&mut rng, 4, 6);
        let z = randn(&mut rng, 4, 1);
        let labels = array![[1.0], [0.0], [1.0], [0.0]];
        check_grad(
            |t, v| {
                let lsm = t.log_softmax_rows(v[0]);
                let picked = t.gather_cols_per_row(lsm, &[0, 2, 5, 1]);
                let ce = t.mean_all(picked);
                let ce = t.scale(ce, -1.0);
                let bce = t.bce_with_logits(v[1], &labels);
                t.add(ce, bce)
            },
            &[x, z],
            1e-6,
        );
    }

    #[test]
    fn grad_select_concat_bias() {
        let mut rng = crate::rng::rng_from(4);
        let x = randn(&mut rng, 5, 4);
        let bias = randn(&mut rng, 1, 2);
        let s = array![[0.37]];
        check_grad(
            |t, v| {
                let left = t.select_cols(v[0], 0, 2);
                let right = t.select_cols(v[0], 2, 2);
                let joined = t.concat_rows(&[left, right]);
                let picked = t.select_rows(joined, &[0, 3, 3, 9]);
                let picked = t.add_bias(picked, v[1]);
                let inv = t.recip(v[2]);
                let scaled = t.scale_by(picked, inv);
                let m = t.mean_rows(scaled);
                let mm = t.mul(m, m);
                t.mean_all(mm)
            },
            &[x, bias, s],
            1e-6,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = array![[1.0, 2.0, 3.0], [-5.0, 0.0, 5.0]];
        let p = softmax_rows(&x);
        for row in p.axis_iter(Axis(0)) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
