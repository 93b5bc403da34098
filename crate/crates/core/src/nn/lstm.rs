use rand::Rng;

use super::{linear, linear_backward, Param};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One direction of an LSTM layer. Gate rows are ordered input, forget,
/// cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<T> {
    /// `[4H, F]`
    pub w_ih: Param<T>,
    /// `[4H, H]`
    pub w_hh: Param<T>,
    /// `[4H]`
    pub bias: Param<T>,
}

#[derive(Clone, Debug)]
pub struct LstmCache<T> {
    input: Tensor<T>,
    /// Activated gates per step, `[B, T, 4H]`.
    gates: Vec<T>,
    cells: Vec<T>,
    hidden: Vec<T>,
    lengths: Vec<usize>,
    reverse: bool,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn step_order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

impl<T: Scalar> LstmCell<T> {
    pub fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut init = |n: usize| -> Vec<T> { (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect() };
        LstmCell {
            w_ih: Param::new(Tensor::from_vec(&[4 * hidden, input_size], init(4 * hidden * input_size)).unwrap()),
            w_hh: Param::new(Tensor::from_vec(&[4 * hidden, hidden], init(4 * hidden * hidden)).unwrap()),
            bias: Param::new(Tensor::from_vec(&[4 * hidden], init(4 * hidden)).unwrap()),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.value.shape()[1]
    }

    /// Runs the recurrence over the first `lengths[b]` steps of each sequence,
    /// backwards in time when `reverse` is set. Output is `[B, T, H]`, zero on
    /// padded steps.
    pub fn forward(&self, input: &Tensor<T>, lengths: &[usize], reverse: bool) -> Result<(Tensor<T>, LstmCache<T>)> {
        let [b, t_max, _] = input.dims::<3>()?;
        check_lengths(lengths, b, t_max)?;
        let h = self.hidden_size();
        let g4 = 4 * h;
        let zx = linear(input, &self.w_ih.value, &self.bias.value)?;
        let zx = zx.data();
        let whh = self.w_hh.value.data();

        let mut gates = vec![T::zero(); b * t_max * g4];
        let mut cells = vec![T::zero(); b * t_max * h];
        let mut hidden = vec![T::zero(); b * t_max * h];
        let mut z = vec![T::zero(); g4];
        for (bi, &len) in lengths.iter().enumerate() {
            let mut prev: Option<usize> = None;
            for t in step_order(len, reverse) {
                let base = (bi * t_max + t) * g4;
                z.copy_from_slice(&zx[base..base + g4]);
                if let Some(p) = prev {
                    let hp = &hidden[(bi * t_max + p) * h..(bi * t_max + p + 1) * h];
                    for (r, zr) in z.iter_mut().enumerate() {
                        let row = &whh[r * h..(r + 1) * h];
                        let mut acc = T::zero();
                        for (&w, &hv) in row.iter().zip(hp) {
                            acc += w * hv;
                        }
                        *zr += acc;
                    }
                }
                let hs = (bi * t_max + t) * h;
                for j in 0..h {
                    let i_g = sigmoid(z[j]);
                    let f_g = sigmoid(z[h + j]);
                    let c_g = z[2 * h + j].tanh();
                    let o_g = sigmoid(z[3 * h + j]);
                    gates[base + j] = i_g;
                    gates[base + h + j] = f_g;
                    gates[base + 2 * h + j] = c_g;
                    gates[base + 3 * h + j] = o_g;
                    let c_prev = prev.map_or(T::zero(), |p| cells[(bi * t_max + p) * h + j]);
                    let c = f_g * c_prev + i_g * c_g;
                    cells[hs + j] = c;
                    hidden[hs + j] = o_g * c.tanh();
                }
                prev = Some(t);
            }
        }
        let out = Tensor::from_vec(&[b, t_max, h], hidden.clone())?;
        Ok((
            out,
            LstmCache {
                input: input.clone(),
                gates,
                cells,
                hidden,
                lengths: lengths.to_vec(),
                reverse,
            },
        ))
    }

    /// Full backpropagation through time. Accumulates weight gradients and
    /// returns the input gradient.
    pub fn backward(&mut self, cache: &LstmCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, t_max, _] = cache.input.dims::<3>()?;
        let h = self.hidden_size();
        let g4 = 4 * h;
        if grad_out.shape() != [b, t_max, h] {
            return Err(Error::Shape(format!(
                "lstm gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, t_max, h]
            )));
        }
        let go = grad_out.data();
        let whh = self.w_hh.value.data().to_vec();
        let mut dz_all = vec![T::zero(); b * t_max * g4];
        let mut gwhh = vec![T::zero(); g4 * h];
        let mut dh_next = vec![T::zero(); h];
        let mut dc_next = vec![T::zero(); h];
        let mut dz = vec![T::zero(); g4];
        for (bi, &len) in cache.lengths.iter().enumerate() {
            let order: Vec<usize> = step_order(len, cache.reverse).collect();
            dh_next.iter_mut().for_each(|v| *v = T::zero());
            dc_next.iter_mut().for_each(|v| *v = T::zero());
            for (k, &t) in order.iter().enumerate().rev() {
                let prev = if k > 0 { Some(order[k - 1]) } else { None };
                let base = (bi * t_max + t) * g4;
                let hs = (bi * t_max + t) * h;
                for j in 0..h {
                    let i_g = cache.gates[base + j];
                    let f_g = cache.gates[base + h + j];
                    let c_g = cache.gates[base + 2 * h + j];
                    let o_g = cache.gates[base + 3 * h + j];
                    let c = cache.cells[hs + j];
                    let c_prev = prev.map_or(T::zero(), |p| cache.cells[(bi * t_max + p) * h + j]);
                    let tc = c.tanh();
                    let dh = go[hs + j] + dh_next[j];
                    let d_o = dh * tc;
                    let dc = dc_next[j] + dh * o_g * (T::one() - tc * tc);
                    dz[j] = dc * c_g * i_g * (T::one() - i_g);
                    dz[h + j] = dc * c_prev * f_g * (T::one() - f_g);
                    dz[2 * h + j] = dc * i_g * (T::one() - c_g * c_g);
                    dz[3 * h + j] = d_o * o_g * (T::one() - o_g);
                    dc_next[j] = dc * f_g;
                }
                dz_all[base..base + g4].copy_from_slice(&dz);
                dh_next.iter_mut().for_each(|v| *v = T::zero());
                if let Some(p) = prev {
                    let hp = &cache.hidden[(bi * t_max + p) * h..(bi * t_max + p + 1) * h];
                    for (r, &d) in dz.iter().enumerate() {
                        let row = &whh[r * h..(r + 1) * h];
                        let grow = &mut gwhh[r * h..(r + 1) * h];
                        for j in 0..h {
                            grow[j] += d * hp[j];
                            dh_next[j] += d * row[j];
                        }
                    }
                }
            }
        }
        let dz_t = Tensor::from_vec(&[b, t_max, g4], dz_all)?;
        let (gx, gwih, gb) = linear_backward(&cache.input, &self.w_ih.value, &dz_t)?;
        self.w_ih.grad.add_assign(&gwih)?;
        self.bias.grad.add_assign(&gb)?;
        self.w_hh.grad.add_assign(&Tensor::from_vec(&[g4, h], gwhh)?)?;
        Ok(gx)
    }
}

fn check_lengths(lengths: &[usize], b: usize, t_max: usize) -> Result<()> {
    if lengths.len() != b {
        return Err(Error::Shape(format!(
            "{} sequence lengths for a batch of {b}",
            lengths.len()
        )));
    }
    if let Some((i, &n)) = lengths.iter().enumerate().find(|(_, &n)| n > t_max) {
        return Err(Error::Shape(format!(
            "sequence {i} has length {n}, longer than the {t_max} available steps"
        )));
    }
    Ok(())
}

/// Bidirectional LSTM: `[B, T, F] -> [B, T, 2H]`, forward direction first.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstm<T> {
    pub forward: LstmCell<T>,
    pub backward: LstmCell<T>,
}

#[derive(Clone, Debug)]
pub struct BiLstmCache<T> {
    fwd: LstmCache<T>,
    bwd: LstmCache<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new(input_size: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let forward = LstmCell::new(input_size, hidden, rng);
        let backward = LstmCell::new(input_size, hidden, rng);
        BiLstm { forward, backward }
    }

    pub fn hidden_size(&self) -> usize {
        self.forward.hidden_size()
    }

    pub fn run(&self, input: &Tensor<T>, lengths: &[usize]) -> Result<(Tensor<T>, BiLstmCache<T>)> {
        let (hf, fwd) = self.forward.forward(input, lengths, false)?;
        let (hb, bwd) = self.backward.forward(input, lengths, true)?;
        let [b, t, h] = hf.dims::<3>()?;
        let mut out = Vec::with_capacity(b * t * 2 * h);
        for (rf, rb) in hf.data().chunks(h).zip(hb.data().chunks(h)) {
            out.extend_from_slice(rf);
            out.extend_from_slice(rb);
        }
        Ok((Tensor::from_vec(&[b, t, 2 * h], out)?, BiLstmCache { fwd, bwd }))
    }

    pub fn backprop(&mut self, cache: &BiLstmCache<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, t, h2] = grad_out.dims::<3>()?;
        let h = h2 / 2;
        let mut gf = Vec::with_capacity(b * t * h);
        let mut gb = Vec::with_capacity(b * t * h);
        for row in grad_out.data().chunks(h2) {
            gf.extend_from_slice(&row[..h]);
            gb.extend_from_slice(&row[h..]);
        }
        let mut gx = self.forward.backward(&cache.fwd, &Tensor::from_vec(&[b, t, h], gf)?)?;
        let gx_b = self.backward.backward(&cache.bwd, &Tensor::from_vec(&[b, t, h], gb)?)?;
        gx.add_assign(&gx_b)?;
        Ok(gx)
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param<T>); 6] {
        [
            ("fwd.w_ih", &mut self.forward.w_ih),
            ("fwd.w_hh", &mut self.forward.w_hh),
            ("fwd.bias", &mut self.forward.bias),
            ("bwd.w_ih", &mut self.backward.w_ih),
            ("bwd.w_hh", &mut self.backward.w_hh),
            ("bwd.bias", &mut self.backward.bias),
        ]
    }

    pub fn params(&self) -> [(&'static str, &Param<T>); 6] {
        [
            ("fwd.w_ih", &self.forward.w_ih),
            ("fwd.w_hh", &self.forward.w_hh),
            ("fwd.bias", &self.forward.bias),
            ("bwd.w_ih", &self.backward.w_ih),
            ("bwd.w_hh", &self.backward.w_hh),
            ("bwd.bias", &self.backward.bias),
        ]
    }
}
