//! Test-only oracles: straight-line transcriptions of the cell equations on
//! plain `Vec<f64>`, and central finite differences.
#![allow(dead_code)]

use lsta_core::cells::{GruParams, LstaParams, LstmParams};
use lsta_core::linalg::{Matrix, ParamBlocks, Rng, Vector};

pub const FD_STEP: f64 = 1e-6;
pub const REL_TOL: f64 = 1e-4;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

pub fn rand_vec(rng: &mut Rng, n: usize, scale: f64) -> Vector {
    (0..n).map(|_| rng.uniform(-scale, scale)).collect::<Vec<_>>().into()
}

pub fn rand_mat(rng: &mut Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.uniform(-scale, scale)).collect()).unwrap()
}

pub fn rand_lstm(rng: &mut Rng, h: usize, d: usize) -> LstmParams {
    LstmParams {
        w_f: rand_mat(rng, h, h + d, 0.8),
        w_i: rand_mat(rng, h, h + d, 0.8),
        w_c: rand_mat(rng, h, h + d, 0.8),
        w_o: rand_mat(rng, h, h + d, 0.8),
        b_f: rand_vec(rng, h, 0.5),
        b_i: rand_vec(rng, h, 0.5),
        b_c: rand_vec(rng, h, 0.5),
        b_o: rand_vec(rng, h, 0.5),
    }
}

pub fn rand_lsta(rng: &mut Rng, h: usize, d: usize) -> LstaParams {
    LstaParams {
        lstm: rand_lstm(rng, h, d),
        w_ahat: rand_mat(rng, h, 2 * h, 0.8),
        w_atil: rand_mat(rng, h, 2 * h, 0.8),
        b_ahat: rand_vec(rng, h, 0.5),
        b_atil: rand_vec(rng, h, 0.5),
    }
}

pub fn rand_gru(rng: &mut Rng, h: usize, d: usize) -> GruParams {
    GruParams {
        w_z: rand_mat(rng, h, h + d, 0.8),
        w_r: rand_mat(rng, h, h + d, 0.8),
        w_h: rand_mat(rng, h, h + d, 0.8),
        b_z: rand_vec(rng, h, 0.5),
        b_r: rand_vec(rng, h, 0.5),
        b_h: rand_vec(rng, h, 0.5),
    }
}

fn sig(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `W·[a, b] + bias` written out index by index.
fn gate(w: &Matrix, bias: &Vector, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for r in 0..w.rows() {
        let mut s = bias[r];
        for (c, v) in a.iter().chain(b.iter()).enumerate() {
            s += w.get(r, c) * v;
        }
        out.push(s);
    }
    out
}

pub struct RefLstm {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub ctil: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn ref_lstm(p: &LstmParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> RefLstm {
    let f: Vec<f64> = gate(&p.w_f, &p.b_f, h_prev, x).into_iter().map(sig).collect();
    let i: Vec<f64> = gate(&p.w_i, &p.b_i, h_prev, x).into_iter().map(sig).collect();
    let ctil: Vec<f64> = gate(&p.w_c, &p.b_c, h_prev, x).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = gate(&p.w_o, &p.b_o, h_prev, x).into_iter().map(sig).collect();
    let c: Vec<f64> = (0..f.len()).map(|k| f[k] * c_prev[k] + i[k] * ctil[k]).collect();
    let h = (0..f.len()).map(|k| o[k] * c[k].tanh()).collect();
    RefLstm { f, i, ctil, o, c, h }
}

pub struct RefLsta {
    pub lstm: RefLstm,
    pub ahat: Vec<f64>,
    pub atil: Vec<f64>,
    pub a: Vec<f64>,
    pub chat: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn ref_attention(p: &LstaParams, f: &[f64], i: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let ahat: Vec<f64> = gate(&p.w_ahat, &p.b_ahat, f, i).into_iter().map(sig).collect();
    let atil: Vec<f64> = gate(&p.w_atil, &p.b_atil, f, i).into_iter().map(f64::tanh).collect();
    let a = ahat.iter().zip(&atil).map(|(x, y)| x * y).collect();
    (ahat, atil, a)
}

pub fn ref_lsta(p: &LstaParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> RefLsta {
    let lstm = ref_lstm(&p.lstm, x, h_prev, c_prev);
    let (ahat, atil, a) = ref_attention(p, &lstm.f, &lstm.i);
    let chat: Vec<f64> = (0..a.len())
        .map(|k| lstm.f[k] * c_prev[k] + lstm.i[k] * lstm.ctil[k] + a[k])
        .collect();
    let h = (0..a.len()).map(|k| lstm.o[k] * chat[k].tanh()).collect();
    RefLsta { lstm, ahat, atil, a, chat, h }
}

pub fn ref_gru(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = gate(&p.w_z, &p.b_z, h_prev, x).into_iter().map(sig).collect();
    let r: Vec<f64> = gate(&p.w_r, &p.b_r, h_prev, x).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
    let htil: Vec<f64> = gate(&p.w_h, &p.b_h, &rh, x).into_iter().map(f64::tanh).collect();
    (0..z.len()).map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * htil[k]).collect()
}

/// Central differences of `loss` over every scalar of `params`, block by block.
pub fn fd_param_grads<P: ParamBlocks + Clone>(params: &P, loss: impl Fn(&P) -> f64) -> Vec<Vec<f64>> {
    let sizes: Vec<usize> = params.blocks().iter().map(|(_, b)| b.len()).collect();
    let mut out = Vec::new();
    for (bi, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for k in 0..n {
            let mut plus = params.clone();
            plus.blocks_mut()[bi][k] += FD_STEP;
            let mut minus = params.clone();
            minus.blocks_mut()[bi][k] -= FD_STEP;
            g.push((loss(&plus) - loss(&minus)) / (2.0 * FD_STEP));
        }
        out.push(g);
    }
    out
}

pub fn fd_vec_grad(v: &Vector, loss: impl Fn(&Vector) -> f64) -> Vec<f64> {
    (0..v.dim())
        .map(|k| {
            let mut plus = v.clone();
            plus[k] += FD_STEP;
            let mut minus = v.clone();
            minus[k] -= FD_STEP;
            (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest relative error between two flat gradient lists; panics on length mismatch.
pub fn max_rel(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
