//! Minimal reverse-mode autodiff tape over 2-D `f64` arrays.
//!
//! Each forward op pushes a node holding its value and a backward closure.
//! The tape is rebuilt per example; at toy-model scale the bookkeeping cost
//! is negligible next to the matmuls.

use ndarray::{s, Array2, Axis};

pub type NodeId = usize;

type BackFn = Box<dyn FnOnce(&[Array2<f64>], &Array2<f64>, &mut Vec<Option<Array2<f64>>>)>;

pub struct Tape {
    values: Vec<Array2<f64>>,
    backs: Vec<Option<BackFn>>,
}

fn accumulate(grads: &mut Vec<Option<Array2<f64>>>, id: NodeId, delta: Array2<f64>) {
    match &mut grads[id] {
        Some(g) => *g += &delta,
        slot => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            backs: Vec::new(),
        }
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.values[id]
    }

    fn push(&mut self, value: Array2<f64>, back: Option<BackFn>) -> NodeId {
        self.values.push(value);
        self.backs.push(back);
        self.values.len() - 1
    }

    /// A differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, None)
    }

    /// `a · b`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].dot(&self.values[b]);
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accumulate(grads, a, g.dot(&vals[b].t()));
                accumulate(grads, b, vals[a].t().dot(g));
            })),
        )
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.values[a].dot(&self.values[b].t());
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                accumulate(grads, a, g.dot(&vals[b]));
                accumulate(grads, b, g.t().dot(&vals[a]));
            })),
        )
    }

    /// Elementwise sum of two same-shape nodes.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.values[a] + &self.values[b];
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                accumulate(grads, a, g.clone());
                accumulate(grads, b, g.clone());
            })),
        )
    }

    /// Add a `(1, c)` bias row to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = &self.values[a] + &self.values[bias];
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                accumulate(grads, a, g.clone());
                accumulate(grads, bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
            })),
        )
    }

    /// Add a constant (non-differentiable) array, e.g. positional encodings.
    pub fn add_const(&mut self, a: NodeId, c: &Array2<f64>) -> NodeId {
        let v = &self.values[a] + c;
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                accumulate(grads, a, g.clone());
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.values[a] * k;
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                accumulate(grads, a, g * k);
            })),
        )
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.values[a].mapv(|x| 1.0 / (1.0 + (-x).exp()));
        let out = self.push(v, None);
        self.backs[out] = Some(Box::new(move |vals, g, grads| {
            let s = &vals[out];
            accumulate(grads, a, g * &(s * &(1.0 - s)));
        }));
        out
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut v = self.values[a].clone();
        for mut row in v.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - m).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        let out = self.push(v, None);
        self.backs[out] = Some(Box::new(move |vals, g, grads| {
            let p = &vals[out];
            let mut dx = Array2::zeros(p.raw_dim());
            for (i, (prow, grow)) in p.rows().into_iter().zip(g.rows()).enumerate() {
                let dot: f64 = prow.iter().zip(grow.iter()).map(|(p, g)| p * g).sum();
                for (j, (p, g)) in prow.iter().zip(grow.iter()).enumerate() {
                    dx[[i, j]] = p * (g - dot);
                }
            }
            accumulate(grads, a, dx);
        }));
        out
    }

    /// Tanh-form GELU with its exact analytic derivative.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        const C: f64 = 0.7978845608028654; // sqrt(2/pi)
        const K: f64 = 0.044715;
        let v = self.values[a].mapv(|x| 0.5 * x * (1.0 + (C * (x + K * x * x * x)).tanh()));
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let x = &vals[a];
                let d = x.mapv(|x| {
                    let u = C * (x + K * x * x * x);
                    let t = u.tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * K * x * x)
                });
                accumulate(grads, a, g * &d);
            })),
        )
    }

    /// Row-wise layer normalization with learned gain `gamma` and shift `beta`
    /// (both `(1, h)`).
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        const EPS: f64 = 1e-5;
        let x = &self.values[a];
        let h = x.ncols() as f64;
        let mut xhat = Array2::zeros(x.raw_dim());
        let mut inv_std = Vec::with_capacity(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            let mean = row.sum() / h;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
            let istd = 1.0 / (var + EPS).sqrt();
            inv_std.push(istd);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * istd;
            }
        }
        let v = &xhat * &self.values[gamma] + &self.values[beta];
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let gam = &vals[gamma];
                let hh = xhat.ncols() as f64;
                accumulate(grads, beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                accumulate(
                    grads,
                    gamma,
                    (g * &xhat).sum_axis(Axis(0)).insert_axis(Axis(0)),
                );
                let mut dx = Array2::zeros(xhat.raw_dim());
                for i in 0..xhat.nrows() {
                    let mut dxhat = vec![0.0; xhat.ncols()];
                    for j in 0..xhat.ncols() {
                        dxhat[j] = g[[i, j]] * gam[[0, j]];
                    }
                    let mean_dxhat: f64 = dxhat.iter().sum::<f64>() / hh;
                    let mean_dxhat_xhat: f64 = dxhat
                        .iter()
                        .enumerate()
                        .map(|(j, d)| d * xhat[[i, j]])
                        .sum::<f64>()
                        / hh;
                    for j in 0..xhat.ncols() {
                        dx[[i, j]] = inv_std[i]
                            * (dxhat[j] - mean_dxhat - xhat[[i, j]] * mean_dxhat_xhat);
                    }
                }
                accumulate(grads, a, dx);
            })),
        )
    }

    /// Gather rows of an embedding table by token id.
    pub fn embedding(&mut self, table: NodeId, ids: Vec<usize>) -> NodeId {
        let t = &self.values[table];
        let mut v = Array2::zeros((ids.len(), t.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).assign(&t.row(id));
        }
        let shape = t.raw_dim();
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                let mut dt = Array2::zeros(shape);
                for (i, &id) in ids.iter().enumerate() {
                    let mut row = dt.row_mut(id);
                    row += &g.row(i);
                }
                accumulate(grads, table, dt);
            })),
        )
    }

    /// Column slice `[start, start+len)`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.values[a].slice(s![.., start..start + len]).to_owned();
        let full_cols = self.values[a].ncols();
        let rows = self.values[a].nrows();
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                let mut dx = Array2::zeros((rows, full_cols));
                dx.slice_mut(s![.., start..start + len]).assign(g);
                accumulate(grads, a, dx);
            })),
        )
    }

    /// Concatenate nodes along the column axis.
    pub fn concat_cols(&mut self, parts: Vec<NodeId>) -> NodeId {
        let rows = self.values[parts[0]].nrows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.values[p].ncols()).collect();
        let total: usize = widths.iter().sum();
        let mut v = Array2::zeros((rows, total));
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(widths.iter()) {
            v.slice_mut(s![.., off..off + w]).assign(&self.values[p]);
            off += w;
        }
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                let mut off = 0;
                for (&p, &w) in parts.iter().zip(widths.iter()) {
                    accumulate(grads, p, g.slice(s![.., off..off + w]).to_owned());
                    off += w;
                }
            })),
        )
    }

    /// Extract row `i` as a `(1, h)` node.
    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let v = self
            .values[a]
            .row(i)
            .to_owned()
            .insert_axis(Axis(0));
        let shape = self.values[a].raw_dim();
        self.push(
            v,
            Some(Box::new(move |_, g, grads| {
                let mut dx = Array2::zeros(shape);
                dx.row_mut(i).assign(&g.row(0));
                accumulate(grads, a, dx);
            })),
        )
    }

    /// Numerically stable binary cross entropy on logits, masked and reduced
    /// by a caller-supplied denominator. Output is a `(1, 1)` scalar node.
    pub fn bce_with_logits(
        &mut self,
        logits: NodeId,
        targets: Array2<f64>,
        mask: Array2<f64>,
        denom: f64,
    ) -> NodeId {
        let z = &self.values[logits];
        let mut total = 0.0;
        for ((&z, &t), &m) in z.iter().zip(targets.iter()).zip(mask.iter()) {
            if m > 0.0 {
                total += z.max(0.0) - z * t + (1.0 + (-z.abs()).exp()).ln();
            }
        }
        let v = Array2::from_elem((1, 1), total / denom);
        self.push(
            v,
            Some(Box::new(move |vals, g, grads| {
                let z = &vals[logits];
                let scale = g[[0, 0]] / denom;
                let mut dz = Array2::zeros(z.raw_dim());
                for ((dz, (&z, &t)), &m) in dz
                    .iter_mut()
                    .zip(z.iter().zip(targets.iter()))
                    .zip(mask.iter())
                {
                    if m > 0.0 {
                        let s = 1.0 / (1.0 + (-z).exp());
                        *dz = scale * (s - t);
                    }
                }
                accumulate(grads, logits, dz);
            })),
        )
    }

    /// Run reverse accumulation from `root` (a `(1, 1)` scalar node) and
    /// return one gradient slot per node.
    pub fn backward(mut self, root: NodeId) -> Vec<Option<Array2<f64>>> {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.values.len()];
        grads[root] = Some(Array2::ones((1, 1)));
        for i in (0..self.values.len()).rev() {
            if grads[i].is_none() {
                continue;
            }
            if let Some(back) = self.backs[i].take() {
                let g = grads[i].clone().unwrap();
                back(&self.values, &g, &mut grads);
            }
        }
        grads
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    /// Central finite differences against the tape for a composite expression.
    #[test]
    fn finite_difference_matches_composite_graph() {
        let a0 = arr2(&[[0.3, -0.7], [1.2, 0.05]]);
        let b0 = arr2(&[[0.5, -0.1], [0.9, 0.4]]);
        let g0 = arr2(&[[1.1, 0.9]]);
        let be0 = arr2(&[[0.01, -0.02]]);

        let eval = |a: &Array2<f64>, b: &Array2<f64>, ga: &Array2<f64>, be: &Array2<f64>| {
            let mut t = Tape::new();
            let ia = t.leaf(a.clone());
            let ib = t.leaf(b.clone());
            let ig = t.leaf(ga.clone());
            let ibe = t.leaf(be.clone());
            let m = t.matmul(ia, ib);
            let gl = t.gelu(m);
            let ln = t.layer_norm(gl, ig, ibe);
            let sm = t.softmax_rows(ln);
            let z = t.matmul_nt(sm, ia);
            let loss = t.bce_with_logits(
                z,
                arr2(&[[1.0, 0.0], [0.0, 1.0]]),
                Array2::ones((2, 2)),
                4.0,
            );
            (t, loss)
        };

        let (tape, loss) = eval(&a0, &b0, &g0, &be0);
        let base_grads = tape.backward(loss);

        let check = |which: usize, i: usize, j: usize| {
            let h = 1e-6;
            let mut inputs = [a0.clone(), b0.clone(), g0.clone(), be0.clone()];
            inputs[which][[i, j]] += h;
            let (t1, l1) = eval(&inputs[0], &inputs[1], &inputs[2], &inputs[3]);
            let up = t1.value(l1)[[0, 0]];
            inputs[which][[i, j]] -= 2.0 * h;
            let (t2, l2) = eval(&inputs[0], &inputs[1], &inputs[2], &inputs[3]);
            let down = t2.value(l2)[[0, 0]];
            let fd = (up - down) / (2.0 * h);
            let an = base_grads[which].as_ref().unwrap()[[i, j]];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                "node {which} [{i},{j}]: fd={fd} analytic={an}"
            );
        };

        for i in 0..2 {
            for j in 0..2 {
                check(0, i, j);
                check(1, i, j);
            }
        }
        for j in 0..2 {
            check(2, 0, j);
            check(3, 0, j);
        }
    }
}
