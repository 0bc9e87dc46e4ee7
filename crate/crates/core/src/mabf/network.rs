//! Dense layers over a flat parameter vector, with hand-written backward
//! passes. Weights are row-major `rows × cols` followed by `rows` biases.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Dense {
    pub fn new(rows: usize, cols: usize, offset: usize) -> Self {
        Dense { rows, cols, offset }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn end(&self) -> usize {
        self.offset + self.len()
    }

    pub fn bias_offset(&self) -> usize {
        self.offset + self.rows * self.cols
    }

    pub fn weight_index(&self, r: usize, c: usize) -> usize {
        self.offset + r * self.cols + c
    }

    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        self.forward_rows(p, x, 0, self.rows, out);
    }

    /// Rows `r0..r1` only, written to `out[0..r1 - r0]`.
    pub fn forward_rows(&self, p: &[f64], x: &[f64], r0: usize, r1: usize, out: &mut [f64]) {
        let b = self.bias_offset();
        for r in r0..r1 {
            let w = &p[self.offset + r * self.cols..self.offset + (r + 1) * self.cols];
            let mut acc = p[b + r];
            for (wi, xi) in w.iter().zip(x) {
                acc += wi * xi;
            }
            out[r - r0] = acc;
        }
    }

    /// Accumulates parameter gradients for upstream gradient `dy` and, when
    /// requested, adds the input gradient into `dx`.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], grad: &mut [f64], dx: Option<&mut [f64]>) {
        let b = self.bias_offset();
        for (r, &d) in dy.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[b + r] += d;
            let g = &mut grad[self.offset + r * self.cols..self.offset + (r + 1) * self.cols];
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        if let Some(dx) = dx {
            for (r, &d) in dy.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let w = &p[self.offset + r * self.cols..self.offset + (r + 1) * self.cols];
                for (dxi, wi) in dx.iter_mut().zip(w) {
                    *dxi += d * wi;
                }
            }
        }
    }
}

/// Two tanh hidden layers and a linear output layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: [Dense; 3],
}

#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub out: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

impl Mlp {
    pub fn new(n_in: usize, hidden: usize, n_out: usize, offset: usize) -> Self {
        let l1 = Dense::new(hidden, n_in, offset);
        let l2 = Dense::new(hidden, hidden, l1.end());
        let l3 = Dense::new(n_out, hidden, l2.end());
        Mlp { layers: [l1, l2, l3] }
    }

    pub fn end(&self) -> usize {
        self.layers[2].end()
    }

    pub fn cache(&self) -> MlpCache {
        let h = self.layers[0].rows;
        MlpCache {
            h1: vec![0.0; h],
            h2: vec![0.0; h],
            out: vec![0.0; self.layers[2].rows],
            d1: vec![0.0; h],
            d2: vec![0.0; h],
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], c: &mut MlpCache) {
        let [l1, l2, l3] = &self.layers;
        l1.forward(p, x, &mut c.h1);
        c.h1.iter_mut().for_each(|v| *v = v.tanh());
        l2.forward(p, &c.h1, &mut c.h2);
        c.h2.iter_mut().for_each(|v| *v = v.tanh());
        l3.forward(p, &c.h2, &mut c.out);
    }

    /// Backward pass given `d_out`; uses the activations left in `c` by the
    /// matching [`Mlp::forward`] call.
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        c: &mut MlpCache,
        d_out: &[f64],
        grad: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let [l1, l2, l3] = &self.layers;
        c.d2.fill(0.0);
        l3.backward(p, &c.h2, d_out, grad, Some(&mut c.d2));
        for (d, h) in c.d2.iter_mut().zip(&c.h2) {
            *d *= 1.0 - h * h;
        }
        c.d1.fill(0.0);
        l2.backward(p, &c.h1, &c.d2, grad, Some(&mut c.d1));
        for (d, h) in c.d1.iter_mut().zip(&c.h1) {
            *d *= 1.0 - h * h;
        }
        l1.backward(p, x, &c.d1, grad, dx);
    }
}
