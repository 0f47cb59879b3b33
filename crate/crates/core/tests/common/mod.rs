//! Oracles shared by the integration test targets. Each one is written
//! directly from the definition, without going through the library code it
//! checks.

#![allow(dead_code, clippy::needless_range_loop)]

use cutlayer_core::nd::{Gradients, Layer, MlpParams};
use cutlayer_core::rng::Rng;
use cutlayer_core::split::SplitModel;
use cutlayer_core::{Result, Tape, Tensor2, ValueId};
use rand::{Rng as _, SeedableRng};

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// O(n^2) double-centered sample distance correlation.
pub fn dcor_oracle(x: &Tensor2, y: &Tensor2) -> f64 {
    let n = x.rows();
    let centered = |m: &Tensor2| -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                let s: f64 = m.row(i).iter().zip(m.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                d[i][j] = s.sqrt();
            }
        }
        let row: Vec<f64> = d.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
        let col: Vec<f64> = (0..n).map(|j| d.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let grand = row.iter().sum::<f64>() / n as f64;
        for i in 0..n {
            for j in 0..n {
                d[i][j] = d[i][j] - row[i] - col[j] + grand;
            }
        }
        d
    };
    let (a, b) = (centered(x), centered(y));
    let mean_prod = |p: &Vec<Vec<f64>>, q: &Vec<Vec<f64>>| {
        p.iter().flatten().zip(q.iter().flatten()).map(|(u, v)| u * v).sum::<f64>() / (n * n) as f64
    };
    let (cov, vx, vy) = (mean_prod(&a, &b), mean_prod(&a, &a), mean_prod(&b, &b));
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    (cov / (vx * vy).sqrt()).max(0.0).sqrt()
}

/// Same-origin adjacent pairs in a table, found by sorting all values.
pub fn adjacency_oracle(table: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let mut all: Vec<(f64, usize)> =
        table.iter().enumerate().flat_map(|(c, vals)| vals.iter().map(move |&v| (v, c))).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    all.windows(2).filter(|w| w[0].1 == w[1].1).map(|w| (w[0].0, w[1].0)).collect()
}

/// Both bottoms fused into one network with block-diagonal weights.
pub struct Monolithic {
    pub bottom: Vec<Layer>,
    pub client_in: usize,
    pub client_widths: Vec<usize>,
}

fn block_diag(a: &Tensor2, b: &Tensor2) -> Tensor2 {
    Tensor2::from_fn(a.rows() + b.rows(), a.cols() + b.cols(), |r, c| {
        if r < a.rows() && c < a.cols() {
            a.get(r, c)
        } else if r >= a.rows() && c >= a.cols() {
            b.get(r - a.rows(), c - a.cols())
        } else {
            0.0
        }
    })
}

impl Monolithic {
    pub fn from_split(model: &SplitModel) -> Monolithic {
        let c = &model.client.bottom.params.layers;
        let h = &model.host.bottom.params.layers;
        assert_eq!(c.len(), h.len(), "bottoms need equal depth");
        let bottom = c
            .iter()
            .zip(h)
            .map(|(lc, lh)| Layer {
                weight: block_diag(&lc.weight, &lh.weight),
                bias: Tensor2::hcat(&[&lc.bias, &lh.bias]).unwrap(),
            })
            .collect();
        Monolithic { bottom, client_in: c[0].weight.rows(), client_widths: c.iter().map(|l| l.weight.cols()).collect() }
    }

    /// Runs `[x_c | x_h]` through the fused bottoms and the top on one tape.
    /// Returns the output and the weight leaves of each fused layer.
    pub fn forward(
        &self,
        model: &SplitModel,
        tape: &mut Tape,
        x_c: &Tensor2,
        x_h: &Tensor2,
    ) -> Result<(ValueId, Vec<(ValueId, ValueId)>)> {
        let mut h = tape.leaf(Tensor2::hcat(&[x_c, x_h])?);
        let mut leaves = Vec::new();
        let last = self.bottom.len() - 1;
        for (i, l) in self.bottom.iter().enumerate() {
            let w = tape.leaf(l.weight.clone());
            let b = tape.leaf(l.bias.clone());
            leaves.push((w, b));
            let z = tape.matmul(h, w)?;
            let z = tape.add(z, b)?;
            h = if i == last { z } else { tape.relu(z) };
        }
        let top = &model.host.top;
        let tb = top.bind(tape);
        let out = top.forward(&tb, tape, h)?;
        Ok((out, leaves))
    }

    /// Cuts the fused gradients back into the client's and host's blocks.
    pub fn unfuse(&self, grads: &Gradients, leaves: &[(ValueId, ValueId)]) -> (MlpParams, MlpParams) {
        let mut client = Vec::new();
        let mut host = Vec::new();
        let mut rows_c = self.client_in;
        for (i, &(w, b)) in leaves.iter().enumerate() {
            let gw = grads.get(w).unwrap();
            let gb = grads.get(b).unwrap();
            let cols_c = self.client_widths[i];
            client.push(Layer {
                weight: Tensor2::from_fn(rows_c, cols_c, |r, c| gw.get(r, c)),
                bias: gb.slice_cols(0, cols_c).unwrap(),
            });
            host.push(Layer {
                weight: Tensor2::from_fn(gw.rows() - rows_c, gw.cols() - cols_c, |r, c| gw.get(r + rows_c, c + cols_c)),
                bias: gb.slice_cols(cols_c, gb.cols()).unwrap(),
            });
            rows_c = cols_c;
        }
        (MlpParams { layers: client }, MlpParams { layers: host })
    }
}

pub fn max_param_diff(a: &MlpParams, b: &MlpParams) -> f64 {
    a.tensors().zip(b.tensors()).map(|(x, y)| x.max_abs_diff(y)).fold(0.0, f64::max)
}
