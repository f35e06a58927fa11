//! Single-direction LSTM sweep as one fused tape node.
//!
//! Gate layout along the `4h` axis is `[input, forget, cell, output]`.

use crate::error::{Error, Result};
use crate::numerics::{matmul_into, matmul_nt_into, matmul_tn_into, sigmoid, Array, CustomOp, Tape, Var};

/// Tape handles for one direction's weights.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    /// `e × 4h`
    pub input: Var,
    /// `h × 4h`
    pub recurrent: Var,
    /// `1 × 4h`
    pub bias: Var,
}

struct Sweep {
    /// Post-activation gates per processing step, `L × 4h`.
    gates: Vec<f64>,
    /// Cell state per processing step, `L × h`.
    cells: Vec<f64>,
    /// Hidden state per processing step, `L × h`.
    hidden: Vec<f64>,
}

fn position(step: usize, l: usize, reverse: bool) -> usize {
    if reverse {
        l - 1 - step
    } else {
        step
    }
}

fn run(x: &Array, w: &Array, u: &Array, b: &Array, reverse: bool) -> Sweep {
    let (l, e) = (x.rows(), x.cols());
    let h = u.rows();
    let g4 = 4 * h;
    // input projections for every position at once
    let mut pre = vec![0.0; l * g4];
    matmul_into(x.data(), w.data(), &mut pre, l, e, g4);
    let mut gates = vec![0.0; l * g4];
    let mut cells = vec![0.0; l * h];
    let mut hidden = vec![0.0; l * h];
    let mut z = vec![0.0; g4];
    for step in 0..l {
        let pos = position(step, l, reverse);
        z.copy_from_slice(&pre[pos * g4..(pos + 1) * g4]);
        for (zi, bi) in z.iter_mut().zip(b.data()) {
            *zi += bi;
        }
        if step > 0 {
            matmul_into(&hidden[(step - 1) * h..step * h], u.data(), &mut z, 1, h, g4);
        }
        let gs = &mut gates[step * g4..(step + 1) * g4];
        for j in 0..h {
            gs[j] = sigmoid(z[j]);
            gs[h + j] = sigmoid(z[h + j]);
            gs[2 * h + j] = z[2 * h + j].tanh();
            gs[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        for j in 0..h {
            let prev = if step > 0 { cells[(step - 1) * h + j] } else { 0.0 };
            let c = gs[h + j] * prev + gs[j] * gs[2 * h + j];
            cells[step * h + j] = c;
            hidden[step * h + j] = gs[3 * h + j] * c.tanh();
        }
    }
    Sweep {
        gates,
        cells,
        hidden,
    }
}

struct LstmOp {
    reverse: bool,
    sweep: Sweep,
}

impl CustomOp for LstmOp {
    fn name(&self) -> &'static str {
        "lstm"
    }

    fn backward(&self, ins: &[&Array], _out: &Array, grad: &Array) -> Vec<Option<Array>> {
        let (x, w, u) = (ins[0], ins[1], ins[2]);
        let (l, e) = (x.rows(), x.cols());
        let h = u.rows();
        let g4 = 4 * h;
        let s = &self.sweep;
        let gd = grad.data();

        let mut dz_all = vec![0.0; l * g4];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        for step in (0..l).rev() {
            let pos = position(step, l, self.reverse);
            let gs = &s.gates[step * g4..(step + 1) * g4];
            let dz = &mut dz_all[step * g4..(step + 1) * g4];
            for j in 0..h {
                let (i, f, g, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let c = s.cells[step * h + j];
                let c_prev = if step > 0 { s.cells[(step - 1) * h + j] } else { 0.0 };
                let tc = c.tanh();
                let dh = gd[pos * h + j] + dh_next[j];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            if step > 0 {
                matmul_nt_into(dz, u.data(), &mut dh_next, 1, g4, h);
            }
        }

        // dz rows are in processing order; reorder to positions for dW and dx.
        let mut dz_pos = vec![0.0; l * g4];
        for step in 0..l {
            let pos = position(step, l, self.reverse);
            dz_pos[pos * g4..(pos + 1) * g4].copy_from_slice(&dz_all[step * g4..(step + 1) * g4]);
        }
        let mut dx = vec![0.0; l * e];
        matmul_nt_into(&dz_pos, w.data(), &mut dx, l, g4, e);
        let mut dw = vec![0.0; e * g4];
        matmul_tn_into(x.data(), &dz_pos, &mut dw, l, e, g4);
        let mut du = vec![0.0; h * g4];
        if l > 1 {
            matmul_tn_into(&s.hidden[..(l - 1) * h], &dz_all[g4..], &mut du, l - 1, h, g4);
        }
        let mut db = vec![0.0; g4];
        for row in dz_all.chunks(g4) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        vec![
            Some(Array::from_parts(vec![l, e], dx)),
            Some(Array::from_parts(vec![e, g4], dw)),
            Some(Array::from_parts(vec![h, g4], du)),
            Some(Array::from_parts(vec![1, g4], db)),
        ]
    }
}

/// Runs one LSTM direction over `x` (`L × e`), returning `L × h` where row
/// `j` is the state after reading position `j`. With `reverse` the sweep
/// reads positions from last to first.
pub fn lstm_sweep(tape: &mut Tape, x: Var, weights: &LstmVars, reverse: bool) -> Result<Var> {
    let (xv, w, u, b) = (
        tape.value(x),
        tape.value(weights.input),
        tape.value(weights.recurrent),
        tape.value(weights.bias),
    );
    let h = u.rows();
    if w.rows() != xv.cols() || w.cols() != 4 * h || u.cols() != 4 * h || b.len() != 4 * h {
        return Err(Error::shape(
            "lstm",
            format!(
                "x {:?}, input {:?}, recurrent {:?}, bias {:?}",
                xv.shape(),
                w.shape(),
                u.shape(),
                b.shape()
            ),
        ));
    }
    let sweep = run(xv, w, u, b, reverse);
    let l = xv.rows();
    let mut out = vec![0.0; l * h];
    for step in 0..l {
        let pos = position(step, l, reverse);
        out[pos * h..(pos + 1) * h].copy_from_slice(&sweep.hidden[step * h..(step + 1) * h]);
    }
    Ok(tape.custom(
        Box::new(LstmOp { reverse, sweep }),
        &[x, weights.input, weights.recurrent, weights.bias],
        Array::from_parts(vec![l, h], out),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use crate::numerics::ParamSet;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(seed: u64, l: usize, e: usize, h: usize) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        ps.insert_uniform("x", &[l, e], 1.0, &mut rng).unwrap();
        ps.insert_uniform("w", &[e, 4 * h], 1.0, &mut rng).unwrap();
        ps.insert_uniform("u", &[h, 4 * h], 1.0, &mut rng).unwrap();
        ps.insert_uniform("b", &[1, 4 * h], 1.0, &mut rng).unwrap();
        ps
    }

    fn vars(t: &mut Tape) -> Result<(Var, LstmVars)> {
        Ok((
            t.param_named("x")?,
            LstmVars {
                input: t.param_named("w")?,
                recurrent: t.param_named("u")?,
                bias: t.param_named("b")?,
            },
        ))
    }

    /// The same recurrence spelled out with tape primitives.
    fn composed(t: &mut Tape, x: Var, lw: &LstmVars, reverse: bool) -> Result<Var> {
        let l = t.value(x).rows();
        let h = t.value(lw.recurrent).rows();
        let mut hs: Vec<Option<Var>> = vec![None; l];
        let mut prev: Option<(Var, Var)> = None;
        for step in 0..l {
            let pos = position(step, l, reverse);
            let xt = t.slice(x, 0, pos, pos + 1)?;
            let mut z = t.matmul(xt, lw.input)?;
            z = t.add(z, lw.bias)?;
            if let Some((hp, _)) = prev {
                let r = t.matmul(hp, lw.recurrent)?;
                z = t.add(z, r)?;
            }
            let zi = t.slice(z, 1, 0, h)?;
            let zf = t.slice(z, 1, h, 2 * h)?;
            let zg = t.slice(z, 1, 2 * h, 3 * h)?;
            let zo = t.slice(z, 1, 3 * h, 4 * h)?;
            let (i, f, g, o) = (t.sigmoid(zi), t.sigmoid(zf), t.tanh(zg), t.sigmoid(zo));
            let ig = t.mul(i, g)?;
            let c = match prev {
                Some((_, cp)) => {
                    let fc = t.mul(f, cp)?;
                    t.add(fc, ig)?
                }
                None => ig,
            };
            let tc = t.tanh(c);
            let hn = t.mul(o, tc)?;
            hs[pos] = Some(hn);
            prev = Some((hn, c));
        }
        let rows: Vec<Var> = hs.into_iter().map(Option::unwrap).collect();
        t.concat(&rows, 0)
    }

    #[test]
    fn fused_matches_composed_primitives() {
        for reverse in [false, true] {
            let ps = params(7, 5, 3, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let w = Array::matrix(5, 4, (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let mut t = Tape::new(&ps);
            let (x, lw) = vars(&mut t).unwrap();
            let fused = lstm_sweep(&mut t, x, &lw, reverse).unwrap();
            let comp = composed(&mut t, x, &lw, reverse).unwrap();
            assert!(t.value(fused).max_abs_diff(t.value(comp)) < 1e-14);

            let wv = t.constant(w);
            let a = t.mul(fused, wv).unwrap();
            let a = t.sum(a);
            let ga = t.backward(a).unwrap();
            let b = t.mul(comp, wv).unwrap();
            let b = t.sum(b);
            let gb = t.backward(b).unwrap();
            for (id, g) in ga.iter() {
                assert!(g.max_abs_diff(gb.get(id).unwrap()) < 1e-12, "{}", ps.get(id).name);
            }
        }
    }

    #[test]
    fn fused_matches_finite_differences() {
        for (seed, reverse) in [(1, false), (2, true), (3, false)] {
            let ps = params(seed, 4, 3, 2);
            let r = check_gradients(&ps, 1e-5, |t| {
                let (x, lw) = vars(t)?;
                let hs = lstm_sweep(t, x, &lw, reverse)?;
                let sq = t.mul(hs, hs)?;
                let s1 = t.sum(sq);
                let s2 = t.sum(hs);
                t.add(s1, s2)
            })
            .unwrap();
            assert!(r.max_rel_err < 1e-4, "{r:?}");
        }
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let mut ps = ParamSet::new();
        ps.insert("x", Array::full(&[3, 2], 0.7)).unwrap();
        ps.insert("w", Array::zeros(&[2, 8])).unwrap();
        ps.insert("u", Array::zeros(&[2, 8])).unwrap();
        ps.insert("b", Array::zeros(&[1, 8])).unwrap();
        let mut t = Tape::new(&ps);
        let (x, lw) = vars(&mut t).unwrap();
        let hs = lstm_sweep(&mut t, x, &lw, false).unwrap();
        assert!(t.value(hs).data().iter().all(|&v| v == 0.0));
    }
}
