//! Single-timestep recurrent cells and their exact reverse-mode steps.
//!
//! Three cells are provided:
//!
//! * LSTM: `f, i, o = σ(W·[h₍t−1₎, x_t] + b)`, `C̃ = tanh(W_c·[h₍t−1₎, x_t] + b_c)`,
//!   `C_t = f⊙C₍t−1₎ + i⊙C̃`, `h_t = o⊙tanh(C_t)`.
//! * LSTA: the LSTM above plus an attention gate fed by `[f_t, i_t]`:
//!   `Â = σ(W_â·[f, i] + b_â)`, `Ã = tanh(W_ã·[f, i] + b_ã)`, `A = Â⊙Ã`.
//!   The cell state becomes `Ĉ_t = C_t + A_t` and `h_t = o⊙tanh(Ĉ_t)`. `Ĉ_t` is
//!   what gets carried to the next step.
//! * GRU: `z, r = σ(W·[h, x] + b)`, `h̃ = tanh(W_h·[r⊙h, x] + b_h)`,
//!   `h_t = (1−z)⊙h + z⊙h̃`. The cell-state slot is unused and kept at zero.
//!
//! Step functions are pure: the forward pass returns its cache and the
//! backward pass accumulates into caller-owned gradient buffers that have
//! the same type as the parameters.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{concat, glorot_init, sigmoid, Matrix, ParamBlocks, Rng, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Lstm,
    Lsta,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Lstm, CellKind::Lsta, CellKind::Gru];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Lsta => "lsta",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "lsta" => Ok(CellKind::Lsta),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::InvalidArgument(format!("unknown cell kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Vector,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: Vector::zeros(hidden),
            c: Vector::zeros(hidden),
        }
    }
}

/// Weights act on `[h₍t−1₎, x_t]`: columns `0..H` see the hidden state and
/// columns `H..H+D` see the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_f: Matrix,
    pub w_i: Matrix,
    pub w_c: Matrix,
    pub w_o: Matrix,
    pub b_f: Vector,
    pub b_i: Vector,
    pub b_c: Vector,
    pub b_o: Vector,
}

impl LstmParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        let b = Vector::zeros(hidden);
        LstmParams {
            w_f: w.clone(),
            w_i: w.clone(),
            w_c: w.clone(),
            w_o: w,
            b_f: b.clone(),
            b_i: b.clone(),
            b_c: b.clone(),
            b_o: b,
        }
    }

    /// Glorot-uniform weights, zero biases except `b_f = 1`.
    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        let cols = hidden + input;
        LstmParams {
            w_f: glorot_init(rng, hidden, cols),
            w_i: glorot_init(rng, hidden, cols),
            w_c: glorot_init(rng, hidden, cols),
            w_o: glorot_init(rng, hidden, cols),
            b_f: Vector::filled(hidden, 1.0),
            b_i: Vector::zeros(hidden),
            b_c: Vector::zeros(hidden),
            b_o: Vector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_f.rows()
    }

    pub fn input(&self) -> usize {
        self.w_f.cols() - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, cols) = self.w_f.shape();
        for (name, w) in [("w_i", &self.w_i), ("w_c", &self.w_c), ("w_o", &self.w_o)] {
            if w.shape() != (h, cols) {
                return Err(Error::shape("LstmParams", format!("w_f {h}x{cols}"), format!("{name} {w}")));
            }
        }
        for (name, b) in [("b_f", &self.b_f), ("b_i", &self.b_i), ("b_c", &self.b_c), ("b_o", &self.b_o)] {
            if b.dim() != h {
                return Err(Error::shape("LstmParams", format!("hidden {h}"), format!("{name} dim {}", b.dim())));
            }
        }
        if cols < h {
            return Err(Error::shape("LstmParams", format!("hidden {h}"), format!("{cols} columns")));
        }
        Ok(())
    }
}

impl ParamBlocks for LstmParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_f".into(), self.w_f.as_slice()),
            ("w_i".into(), self.w_i.as_slice()),
            ("w_c".into(), self.w_c.as_slice()),
            ("w_o".into(), self.w_o.as_slice()),
            ("b_f".into(), self.b_f.as_slice()),
            ("b_i".into(), self.b_i.as_slice()),
            ("b_c".into(), self.b_c.as_slice()),
            ("b_o".into(), self.b_o.as_slice()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_f.as_mut_slice(),
            self.w_i.as_mut_slice(),
            self.w_c.as_mut_slice(),
            self.w_o.as_mut_slice(),
            self.b_f.as_mut_slice(),
            self.b_i.as_mut_slice(),
            self.b_c.as_mut_slice(),
            self.b_o.as_mut_slice(),
        ]
    }
}

/// LSTM parameters plus the attention gate, whose weights act on `[f_t, i_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstaParams {
    pub lstm: LstmParams,
    pub w_ahat: Matrix,
    pub w_atil: Matrix,
    pub b_ahat: Vector,
    pub b_atil: Vector,
}

impl LstaParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        LstaParams {
            lstm: LstmParams::zeros(hidden, input),
            w_ahat: Matrix::zeros(hidden, 2 * hidden),
            w_atil: Matrix::zeros(hidden, 2 * hidden),
            b_ahat: Vector::zeros(hidden),
            b_atil: Vector::zeros(hidden),
        }
    }

    /// With `warm_start_as_lstm`, `W_ã` and `b_ã` start at zero so the
    /// attention output is identically zero and the cell is an exact LSTM.
    pub fn init(rng: &mut Rng, hidden: usize, input: usize, warm_start_as_lstm: bool) -> Self {
        let lstm = LstmParams::init(rng, hidden, input);
        let w_ahat = glorot_init(rng, hidden, 2 * hidden);
        let w_atil = glorot_init(rng, hidden, 2 * hidden);
        let w_atil = if warm_start_as_lstm {
            Matrix::zeros(hidden, 2 * hidden)
        } else {
            w_atil
        };
        LstaParams {
            lstm,
            w_ahat,
            w_atil,
            b_ahat: Vector::zeros(hidden),
            b_atil: Vector::zeros(hidden),
        }
    }

    /// An LSTA cell whose LSTM portion is `lstm` and whose attention
    /// candidate path is zeroed.
    pub fn from_lstm(lstm: LstmParams, w_ahat: Matrix, b_ahat: Vector) -> Self {
        let h = lstm.hidden();
        LstaParams {
            lstm,
            w_ahat,
            w_atil: Matrix::zeros(h, 2 * h),
            b_ahat,
            b_atil: Vector::zeros(h),
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden()
    }

    pub fn input(&self) -> usize {
        self.lstm.input()
    }

    pub fn validate(&self) -> Result<()> {
        self.lstm.validate()?;
        let h = self.hidden();
        for (name, w) in [("w_ahat", &self.w_ahat), ("w_atil", &self.w_atil)] {
            if w.shape() != (h, 2 * h) {
                return Err(Error::shape("LstaParams", format!("{h}x{}", 2 * h), format!("{name} {w}")));
            }
        }
        for (name, b) in [("b_ahat", &self.b_ahat), ("b_atil", &self.b_atil)] {
            if b.dim() != h {
                return Err(Error::shape("LstaParams", format!("hidden {h}"), format!("{name} dim {}", b.dim())));
            }
        }
        Ok(())
    }
}

impl ParamBlocks for LstaParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        let mut out = self.lstm.blocks();
        out.push(("w_ahat".into(), self.w_ahat.as_slice()));
        out.push(("w_atil".into(), self.w_atil.as_slice()));
        out.push(("b_ahat".into(), self.b_ahat.as_slice()));
        out.push(("b_atil".into(), self.b_atil.as_slice()));
        out
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.lstm.blocks_mut();
        out.push(self.w_ahat.as_mut_slice());
        out.push(self.w_atil.as_mut_slice());
        out.push(self.b_ahat.as_mut_slice());
        out.push(self.b_atil.as_mut_slice());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruParams {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_h: Matrix,
    pub b_z: Vector,
    pub b_r: Vector,
    pub b_h: Vector,
}

impl GruParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let w = Matrix::zeros(hidden, hidden + input);
        let b = Vector::zeros(hidden);
        GruParams {
            w_z: w.clone(),
            w_r: w.clone(),
            w_h: w,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    pub fn init(rng: &mut Rng, hidden: usize, input: usize) -> Self {
        let cols = hidden + input;
        GruParams {
            w_z: glorot_init(rng, hidden, cols),
            w_r: glorot_init(rng, hidden, cols),
            w_h: glorot_init(rng, hidden, cols),
            b_z: Vector::zeros(hidden),
            b_r: Vector::zeros(hidden),
            b_h: Vector::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_z.rows()
    }

    pub fn input(&self) -> usize {
        self.w_z.cols() - self.hidden()
    }

    pub fn validate(&self) -> Result<()> {
        let (h, cols) = self.w_z.shape();
        for (name, w) in [("w_r", &self.w_r), ("w_h", &self.w_h)] {
            if w.shape() != (h, cols) {
                return Err(Error::shape("GruParams", format!("w_z {h}x{cols}"), format!("{name} {w}")));
            }
        }
        for (name, b) in [("b_z", &self.b_z), ("b_r", &self.b_r), ("b_h", &self.b_h)] {
            if b.dim() != h {
                return Err(Error::shape("GruParams", format!("hidden {h}"), format!("{name} dim {}", b.dim())));
            }
        }
        Ok(())
    }
}

impl ParamBlocks for GruParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        vec![
            ("w_z".into(), self.w_z.as_slice()),
            ("w_r".into(), self.w_r.as_slice()),
            ("w_h".into(), self.w_h.as_slice()),
            ("b_z".into(), self.b_z.as_slice()),
            ("b_r".into(), self.b_r.as_slice()),
            ("b_h".into(), self.b_h.as_slice()),
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w_z.as_mut_slice(),
            self.w_r.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.b_z.as_mut_slice(),
            self.b_r.as_mut_slice(),
            self.b_h.as_mut_slice(),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionCache {
    pub ahat: Vector,
    pub atil: Vector,
    pub a: Vector,
    /// Attention-modified state `Ĉ_t = c_t + a_t`.
    pub chat: Vector,
}

/// Intermediates of one LSTM or LSTA step.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub c_prev: Vector,
    pub f: Vector,
    pub i: Vector,
    pub o: Vector,
    pub ctil: Vector,
    /// Pre-attention state `f⊙c_prev + i⊙C̃`.
    pub c: Vector,
    /// `tanh` of the state that feeds `h_t` (`Ĉ_t` for LSTA).
    pub tanh_c: Vector,
    pub attention: Option<AttentionCache>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GruCache {
    pub x: Vector,
    pub h_prev: Vector,
    pub z: Vector,
    pub r: Vector,
    pub htil: Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepCache {
    Lstm(LstmCache),
    Gru(GruCache),
}

/// Gradients flowing out of one step toward its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct StepGrads {
    pub d_x: Vector,
    pub d_h_prev: Vector,
    pub d_c_prev: Vector,
}

fn check_step_inputs(op: &'static str, hidden: usize, input: usize, x: &Vector, prev: &CellState) -> Result<()> {
    if x.dim() != input {
        return Err(Error::shape(op, format!("input dim {input}"), format!("x dim {}", x.dim())));
    }
    if prev.h.dim() != hidden || prev.c.dim() != hidden {
        return Err(Error::shape(
            op,
            format!("hidden dim {hidden}"),
            format!("state dims h={} c={}", prev.h.dim(), prev.c.dim()),
        ));
    }
    Ok(())
}

fn check_upstream(op: &'static str, hidden: usize, d_h: &Vector, d_c: &Vector) -> Result<()> {
    if d_h.dim() != hidden || d_c.dim() != hidden {
        return Err(Error::shape(
            op,
            format!("hidden dim {hidden}"),
            format!("upstream dims d_h={} d_c={}", d_h.dim(), d_c.dim()),
        ));
    }
    Ok(())
}

fn affine(w: &Matrix, b: &Vector, input: &Vector) -> Result<Vector> {
    let mut out = w.matvec(input)?;
    out.add_assign(b);
    Ok(out)
}

fn lstm_gates(p: &LstmParams, x: &Vector, prev: &CellState) -> Result<LstmCache> {
    let zin = concat(&prev.h, x);
    let f = affine(&p.w_f, &p.b_f, &zin)?.map(sigmoid);
    let i = affine(&p.w_i, &p.b_i, &zin)?.map(sigmoid);
    let ctil = affine(&p.w_c, &p.b_c, &zin)?.map(f64::tanh);
    let o = affine(&p.w_o, &p.b_o, &zin)?.map(sigmoid);
    let hidden = f.dim();
    let c: Vector = (0..hidden)
        .map(|k| f[k] * prev.c[k] + i[k] * ctil[k])
        .collect::<Vec<_>>()
        .into();
    Ok(LstmCache {
        x: x.clone(),
        h_prev: prev.h.clone(),
        c_prev: prev.c.clone(),
        f,
        i,
        o,
        ctil,
        tanh_c: Vector::zeros(0),
        c,
        attention: None,
    })
}

pub fn lstm_step_forward(p: &LstmParams, x: &Vector, prev: &CellState) -> Result<(CellState, LstmCache)> {
    check_step_inputs("lstm_step_forward", p.hidden(), p.input(), x, prev)?;
    let mut cache = lstm_gates(p, x, prev)?;
    cache.tanh_c = cache.c.map(f64::tanh);
    let h = cache.o.zip_map(&cache.tanh_c, |o, t| o * t);
    let state = CellState {
        h,
        c: cache.c.clone(),
    };
    Ok((state, cache))
}

/// The attention gate: returns `(Â, Ã, A)` for gate activations `f`, `i`.
pub fn lsta_attention(p: &LstaParams, f: &Vector, i: &Vector) -> Result<(Vector, Vector, Vector)> {
    let h = p.hidden();
    if f.dim() != h || i.dim() != h {
        return Err(Error::shape(
            "lsta_attention",
            format!("hidden dim {h}"),
            format!("f dim {}, i dim {}", f.dim(), i.dim()),
        ));
    }
    let fi = concat(f, i);
    let ahat = affine(&p.w_ahat, &p.b_ahat, &fi)?.map(sigmoid);
    let atil = affine(&p.w_atil, &p.b_atil, &fi)?.map(f64::tanh);
    let a = ahat.zip_map(&atil, |x, y| x * y);
    Ok((ahat, atil, a))
}

pub fn lsta_step_forward(p: &LstaParams, x: &Vector, prev: &CellState) -> Result<(CellState, LstmCache)> {
    check_step_inputs("lsta_step_forward", p.hidden(), p.input(), x, prev)?;
    let mut cache = lstm_gates(&p.lstm, x, prev)?;
    let (ahat, atil, a) = lsta_attention(p, &cache.f, &cache.i)?;
    let chat = cache.c.zip_map(&a, |c, a| c + a);
    cache.tanh_c = chat.map(f64::tanh);
    let h = cache.o.zip_map(&cache.tanh_c, |o, t| o * t);
    cache.attention = Some(AttentionCache {
        ahat,
        atil,
        a,
        chat: chat.clone(),
    });
    Ok((CellState { h, c: chat }, cache))
}

/// Backprop through the four LSTM gates given the gradient reaching the
/// (final) cell state and any extra gradient into `f`/`i` from elsewhere.
fn lstm_gates_backward(
    p: &LstmParams,
    cache: &LstmCache,
    d_o: &Vector,
    d_state: &Vector,
    extra_f: Option<(&[f64], &[f64])>,
    grads: &mut LstmParams,
) -> Result<StepGrads> {
    let hidden = p.hidden();
    let mut d_pf = Vector::zeros(hidden);
    let mut d_pi = Vector::zeros(hidden);
    let mut d_pc = Vector::zeros(hidden);
    let mut d_po = Vector::zeros(hidden);
    let mut d_c_prev = Vector::zeros(hidden);
    for k in 0..hidden {
        let (f, i, o, ct) = (cache.f[k], cache.i[k], cache.o[k], cache.ctil[k]);
        let mut d_f = d_state[k] * cache.c_prev[k];
        let mut d_i = d_state[k] * ct;
        if let Some((ef, ei)) = extra_f {
            d_f += ef[k];
            d_i += ei[k];
        }
        let d_ct = d_state[k] * i;
        d_pf[k] = d_f * f * (1.0 - f);
        d_pi[k] = d_i * i * (1.0 - i);
        d_pc[k] = d_ct * (1.0 - ct * ct);
        d_po[k] = d_o[k] * o * (1.0 - o);
        d_c_prev[k] = d_state[k] * f;
    }

    let zin = concat(&cache.h_prev, &cache.x);
    let mut d_zin = Vector::zeros(zin.dim());
    for (w, gw, gb, d) in [
        (&p.w_f, &mut grads.w_f, &mut grads.b_f, &d_pf),
        (&p.w_i, &mut grads.w_i, &mut grads.b_i, &d_pi),
        (&p.w_c, &mut grads.w_c, &mut grads.b_c, &d_pc),
        (&p.w_o, &mut grads.w_o, &mut grads.b_o, &d_po),
    ] {
        gw.add_outer(d, &zin)?;
        gb.add_assign(d);
        d_zin.add_assign(&w.tr_matvec(d)?);
    }
    let (d_h_prev, d_x) = d_zin.split_at(hidden);
    Ok(StepGrads {
        d_x,
        d_h_prev,
        d_c_prev,
    })
}

fn check_lstm_cache(op: &'static str, hidden: usize, input: usize, cache: &LstmCache) -> Result<()> {
    if cache.f.dim() != hidden || cache.x.dim() != input || cache.h_prev.dim() != hidden {
        return Err(Error::shape(
            op,
            format!("params H={hidden} D={input}"),
            format!("cache H={} D={}", cache.f.dim(), cache.x.dim()),
        ));
    }
    Ok(())
}

/// Accumulates parameter gradients of one LSTM step into `grads`.
///
/// `d_h` is `∂L/∂h_t` and `d_c` is `∂L/∂C_t` arriving from the next step.
pub fn lstm_step_backward_into(
    p: &LstmParams,
    cache: &LstmCache,
    d_h: &Vector,
    d_c: &Vector,
    grads: &mut LstmParams,
) -> Result<StepGrads> {
    let hidden = p.hidden();
    check_lstm_cache("lstm_step_backward", hidden, p.input(), cache)?;
    check_upstream("lstm_step_backward", hidden, d_h, d_c)?;
    let mut d_o = Vector::zeros(hidden);
    let mut d_state = Vector::zeros(hidden);
    for k in 0..hidden {
        let t = cache.tanh_c[k];
        d_o[k] = d_h[k] * t;
        d_state[k] = d_c[k] + d_h[k] * cache.o[k] * (1.0 - t * t);
    }
    lstm_gates_backward(p, cache, &d_o, &d_state, None, grads)
}

pub fn lstm_step_backward(
    p: &LstmParams,
    cache: &LstmCache,
    d_h: &Vector,
    d_c: &Vector,
) -> Result<(LstmParams, StepGrads)> {
    let mut grads = LstmParams::zeros(p.hidden(), p.input());
    let step = lstm_step_backward_into(p, cache, d_h, d_c, &mut grads)?;
    Ok((grads, step))
}

/// Accumulates parameter gradients of one LSTA step into `grads`.
///
/// `d_c` is `∂L/∂Ĉ_t`. Gradient reaches `f_t` and `i_t` both through the
/// state products and through the attention gate's `[f_t, i_t]` input.
pub fn lsta_step_backward_into(
    p: &LstaParams,
    cache: &LstmCache,
    d_h: &Vector,
    d_c: &Vector,
    grads: &mut LstaParams,
) -> Result<StepGrads> {
    let hidden = p.hidden();
    check_lstm_cache("lsta_step_backward", hidden, p.input(), cache)?;
    check_upstream("lsta_step_backward", hidden, d_h, d_c)?;
    let att = cache.attention.as_ref().ok_or_else(|| {
        Error::InvalidArgument("lsta_step_backward needs a cache from lsta_step_forward".into())
    })?;

    let mut d_o = Vector::zeros(hidden);
    let mut d_chat = Vector::zeros(hidden);
    let mut d_p_ahat = Vector::zeros(hidden);
    let mut d_p_atil = Vector::zeros(hidden);
    for k in 0..hidden {
        let t = cache.tanh_c[k];
        d_o[k] = d_h[k] * t;
        d_chat[k] = d_c[k] + d_h[k] * cache.o[k] * (1.0 - t * t);
        let (ah, at) = (att.ahat[k], att.atil[k]);
        // ∂Ĉ/∂A = 1
        d_p_ahat[k] = d_chat[k] * at * ah * (1.0 - ah);
        d_p_atil[k] = d_chat[k] * ah * (1.0 - at * at);
    }

    let fi = concat(&cache.f, &cache.i);
    grads.w_ahat.add_outer(&d_p_ahat, &fi)?;
    grads.b_ahat.add_assign(&d_p_ahat);
    grads.w_atil.add_outer(&d_p_atil, &fi)?;
    grads.b_atil.add_assign(&d_p_atil);
    let mut d_fi = p.w_ahat.tr_matvec(&d_p_ahat)?;
    d_fi.add_assign(&p.w_atil.tr_matvec(&d_p_atil)?);
    let (d_f_att, d_i_att) = d_fi.as_slice().split_at(hidden);

    lstm_gates_backward(&p.lstm, cache, &d_o, &d_chat, Some((d_f_att, d_i_att)), &mut grads.lstm)
}

pub fn lsta_step_backward(
    p: &LstaParams,
    cache: &LstmCache,
    d_h: &Vector,
    d_c: &Vector,
) -> Result<(LstaParams, StepGrads)> {
    let mut grads = LstaParams::zeros(p.hidden(), p.input());
    let step = lsta_step_backward_into(p, cache, d_h, d_c, &mut grads)?;
    Ok((grads, step))
}

pub fn gru_step_forward(p: &GruParams, x: &Vector, prev: &CellState) -> Result<(CellState, GruCache)> {
    let hidden = p.hidden();
    check_step_inputs("gru_step_forward", hidden, p.input(), x, prev)?;
    let zin = concat(&prev.h, x);
    let z = affine(&p.w_z, &p.b_z, &zin)?.map(sigmoid);
    let r = affine(&p.w_r, &p.b_r, &zin)?.map(sigmoid);
    let rh = r.zip_map(&prev.h, |r, h| r * h);
    let htil = affine(&p.w_h, &p.b_h, &concat(&rh, x))?.map(f64::tanh);
    let h: Vector = (0..hidden)
        .map(|k| (1.0 - z[k]) * prev.h[k] + z[k] * htil[k])
        .collect::<Vec<_>>()
        .into();
    let cache = GruCache {
        x: x.clone(),
        h_prev: prev.h.clone(),
        z,
        r,
        htil,
    };
    Ok((
        CellState {
            h,
            c: Vector::zeros(hidden),
        },
        cache,
    ))
}

/// `d_c` is ignored (the GRU has no cell state); `d_c_prev` is zero.
pub fn gru_step_backward_into(
    p: &GruParams,
    cache: &GruCache,
    d_h: &Vector,
    d_c: &Vector,
    grads: &mut GruParams,
) -> Result<StepGrads> {
    let hidden = p.hidden();
    if cache.z.dim() != hidden || cache.x.dim() != p.input() {
        return Err(Error::shape(
            "gru_step_backward",
            format!("params H={hidden} D={}", p.input()),
            format!("cache H={} D={}", cache.z.dim(), cache.x.dim()),
        ));
    }
    check_upstream("gru_step_backward", hidden, d_h, d_c)?;

    let mut d_h_prev = Vector::zeros(hidden);
    let mut d_pz = Vector::zeros(hidden);
    let mut d_ph = Vector::zeros(hidden);
    for k in 0..hidden {
        let (z, ht) = (cache.z[k], cache.htil[k]);
        d_h_prev[k] = d_h[k] * (1.0 - z);
        d_pz[k] = d_h[k] * (ht - cache.h_prev[k]) * z * (1.0 - z);
        d_ph[k] = d_h[k] * z * (1.0 - ht * ht);
    }

    let rh = cache.r.zip_map(&cache.h_prev, |r, h| r * h);
    grads.w_h.add_outer(&d_ph, &concat(&rh, &cache.x))?;
    grads.b_h.add_assign(&d_ph);
    let (d_rh, mut d_x) = p.w_h.tr_matvec(&d_ph)?.split_at(hidden);

    let mut d_pr = Vector::zeros(hidden);
    for k in 0..hidden {
        let r = cache.r[k];
        d_pr[k] = d_rh[k] * cache.h_prev[k] * r * (1.0 - r);
        d_h_prev[k] += d_rh[k] * r;
    }

    let zin = concat(&cache.h_prev, &cache.x);
    grads.w_z.add_outer(&d_pz, &zin)?;
    grads.b_z.add_assign(&d_pz);
    grads.w_r.add_outer(&d_pr, &zin)?;
    grads.b_r.add_assign(&d_pr);
    let mut d_zin = p.w_z.tr_matvec(&d_pz)?;
    d_zin.add_assign(&p.w_r.tr_matvec(&d_pr)?);
    let (dh, dx) = d_zin.split_at(hidden);
    d_h_prev.add_assign(&dh);
    d_x.add_assign(&dx);

    Ok(StepGrads {
        d_x,
        d_h_prev,
        d_c_prev: Vector::zeros(hidden),
    })
}

pub fn gru_step_backward(
    p: &GruParams,
    cache: &GruCache,
    d_h: &Vector,
    d_c: &Vector,
) -> Result<(GruParams, StepGrads)> {
    let mut grads = GruParams::zeros(p.hidden(), p.input());
    let step = gru_step_backward_into(p, cache, d_h, d_c, &mut grads)?;
    Ok((grads, step))
}

/// Parameters of any supported cell; also used as the gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub enum CellParams {
    Lstm(LstmParams),
    Lsta(LstaParams),
    Gru(GruParams),
}

impl CellParams {
    pub fn init(kind: CellKind, rng: &mut Rng, hidden: usize, input: usize, warm_start_as_lstm: bool) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::init(rng, hidden, input)),
            CellKind::Lsta => CellParams::Lsta(LstaParams::init(rng, hidden, input, warm_start_as_lstm)),
            CellKind::Gru => CellParams::Gru(GruParams::init(rng, hidden, input)),
        }
    }

    pub fn zeros(kind: CellKind, hidden: usize, input: usize) -> Self {
        match kind {
            CellKind::Lstm => CellParams::Lstm(LstmParams::zeros(hidden, input)),
            CellKind::Lsta => CellParams::Lsta(LstaParams::zeros(hidden, input)),
            CellKind::Gru => CellParams::Gru(GruParams::zeros(hidden, input)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Lsta(_) => CellKind::Lsta,
            CellParams::Gru(_) => CellKind::Gru,
        }
    }

    pub fn hidden(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.hidden(),
            CellParams::Lsta(p) => p.hidden(),
            CellParams::Gru(p) => p.hidden(),
        }
    }

    pub fn input(&self) -> usize {
        match self {
            CellParams::Lstm(p) => p.input(),
            CellParams::Lsta(p) => p.input(),
            CellParams::Gru(p) => p.input(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CellParams::zeros(self.kind(), self.hidden(), self.input())
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            CellParams::Lstm(p) => p.validate(),
            CellParams::Lsta(p) => p.validate(),
            CellParams::Gru(p) => p.validate(),
        }
    }

    pub fn step_forward(&self, x: &Vector, prev: &CellState) -> Result<(CellState, StepCache)> {
        match self {
            CellParams::Lstm(p) => lstm_step_forward(p, x, prev).map(|(s, c)| (s, StepCache::Lstm(c))),
            CellParams::Lsta(p) => lsta_step_forward(p, x, prev).map(|(s, c)| (s, StepCache::Lstm(c))),
            CellParams::Gru(p) => gru_step_forward(p, x, prev).map(|(s, c)| (s, StepCache::Gru(c))),
        }
    }

    pub fn step_backward_into(
        &self,
        cache: &StepCache,
        d_h: &Vector,
        d_c: &Vector,
        grads: &mut CellParams,
    ) -> Result<StepGrads> {
        match (self, cache, grads) {
            (CellParams::Lstm(p), StepCache::Lstm(c), CellParams::Lstm(g)) => {
                lstm_step_backward_into(p, c, d_h, d_c, g)
            }
            (CellParams::Lsta(p), StepCache::Lstm(c), CellParams::Lsta(g)) => {
                lsta_step_backward_into(p, c, d_h, d_c, g)
            }
            (CellParams::Gru(p), StepCache::Gru(c), CellParams::Gru(g)) => {
                gru_step_backward_into(p, c, d_h, d_c, g)
            }
            (p, _, g) => Err(Error::InvalidArgument(format!(
                "cache or gradient buffer does not belong to a {} cell (grads are {})",
                p.kind(),
                g.kind()
            ))),
        }
    }
}

impl ParamBlocks for CellParams {
    fn blocks(&self) -> Vec<(String, &[f64])> {
        match self {
            CellParams::Lstm(p) => p.blocks(),
            CellParams::Lsta(p) => p.blocks(),
            CellParams::Gru(p) => p.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            CellParams::Lstm(p) => p.blocks_mut(),
            CellParams::Lsta(p) => p.blocks_mut(),
            CellParams::Gru(p) => p.blocks_mut(),
        }
    }
}
