//! Linear-chain CRF: log-partition, marginals, Viterbi and NLL.
//!
//! A path `y` scores `start[y0] + Σ e[t][y_t] + Σ T[y_{t-1}][y_t] + stop[y_last]`.
//! All recursions run in log space.

use crate::error::{Error, Result};
use crate::numerics::{log_sum_exp, Array, CustomOp, Tape, Var};

/// Transition scores of a linear-chain CRF over `K` tags.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    /// `K × K`, row = previous tag, column = next tag.
    pub transitions: Array,
    pub start: Vec<f64>,
    pub stop: Vec<f64>,
}

impl CrfParams {
    pub fn zeros(k: usize) -> Self {
        CrfParams {
            transitions: Array::zeros(&[k, k]),
            start: vec![0.0; k],
            stop: vec![0.0; k],
        }
    }

    pub fn num_tags(&self) -> usize {
        self.start.len()
    }

    fn check(&self, emissions: &Array) -> Result<(usize, usize)> {
        let k = self.start.len();
        let (l, ke) = (emissions.rows(), emissions.cols());
        if l == 0 {
            return Err(Error::shape("crf", "empty sequence"));
        }
        if ke != k
            || self.stop.len() != k
            || self.transitions.rows() != k
            || self.transitions.cols() != k
        {
            return Err(Error::shape(
                "crf",
                format!(
                    "emissions {:?}, transitions {:?}, start {}, stop {}",
                    emissions.shape(),
                    self.transitions.shape(),
                    k,
                    self.stop.len()
                ),
            ));
        }
        Ok((l, k))
    }
}

struct View<'a> {
    e: &'a [f64],
    t: &'a [f64],
    start: &'a [f64],
    stop: &'a [f64],
    l: usize,
    k: usize,
}

/// Forward table (including the emission at `t`), backward table
/// (excluding it) and the log-partition.
struct Tables {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    log_z: f64,
}

fn forward_backward(v: &View) -> Tables {
    let (l, k) = (v.l, v.k);
    let mut alpha = vec![0.0; l * k];
    let mut beta = vec![0.0; l * k];
    let mut buf = vec![0.0; k];
    for j in 0..k {
        alpha[j] = v.start[j] + v.e[j];
    }
    for t in 1..l {
        for j in 0..k {
            for i in 0..k {
                buf[i] = alpha[(t - 1) * k + i] + v.t[i * k + j];
            }
            alpha[t * k + j] = v.e[t * k + j] + log_sum_exp(&buf);
        }
    }
    beta[(l - 1) * k..].copy_from_slice(v.stop);
    for t in (0..l - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = v.t[i * k + j] + v.e[(t + 1) * k + j] + beta[(t + 1) * k + j];
            }
            beta[t * k + i] = log_sum_exp(&buf);
        }
    }
    for j in 0..k {
        buf[j] = alpha[(l - 1) * k + j] + v.stop[j];
    }
    let log_z = log_sum_exp(&buf);
    Tables { alpha, beta, log_z }
}

struct CrfGrads {
    e: Vec<f64>,
    t: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
}

/// Vector-Jacobian product through both recursions.
///
/// `g_alpha`/`g_beta` are adjoints on the forward/backward tables and
/// `g_log_z` the adjoint on the log-partition.
fn crf_vjp(
    v: &View,
    tab: &Tables,
    g_alpha: Option<&[f64]>,
    g_beta: Option<&[f64]>,
    g_log_z: f64,
) -> CrfGrads {
    let (l, k) = (v.l, v.k);
    let mut g = CrfGrads {
        e: vec![0.0; l * k],
        t: vec![0.0; k * k],
        start: vec![0.0; k],
        stop: vec![0.0; k],
    };
    let mut ga = g_alpha.map_or_else(|| vec![0.0; l * k], <[f64]>::to_vec);
    let mut gb = g_beta.map_or_else(|| vec![0.0; l * k], <[f64]>::to_vec);

    if g_log_z != 0.0 {
        for j in 0..k {
            let w = (tab.alpha[(l - 1) * k + j] + v.stop[j] - tab.log_z).exp();
            ga[(l - 1) * k + j] += g_log_z * w;
            g.stop[j] += g_log_z * w;
        }
    }

    if g_beta.is_some() {
        for t in 0..l - 1 {
            for i in 0..k {
                let gbi = gb[t * k + i];
                if gbi == 0.0 {
                    continue;
                }
                let bi = tab.beta[t * k + i];
                for j in 0..k {
                    let w = (v.t[i * k + j] + v.e[(t + 1) * k + j] + tab.beta[(t + 1) * k + j]
                        - bi)
                        .exp();
                    let c = gbi * w;
                    g.t[i * k + j] += c;
                    g.e[(t + 1) * k + j] += c;
                    gb[(t + 1) * k + j] += c;
                }
            }
        }
        for i in 0..k {
            g.stop[i] += gb[(l - 1) * k + i];
        }
    }

    for t in (1..l).rev() {
        for j in 0..k {
            let gaj = ga[t * k + j];
            g.e[t * k + j] += gaj;
            if gaj == 0.0 {
                continue;
            }
            let lse = tab.alpha[t * k + j] - v.e[t * k + j];
            for i in 0..k {
                let w = (tab.alpha[(t - 1) * k + i] + v.t[i * k + j] - lse).exp();
                let c = gaj * w;
                ga[(t - 1) * k + i] += c;
                g.t[i * k + j] += c;
            }
        }
    }
    for j in 0..k {
        g.start[j] += ga[j];
        g.e[j] += ga[j];
    }
    g
}

fn view<'a>(e: &'a Array, crf: &'a CrfParams) -> Result<View<'a>> {
    let (l, k) = crf.check(e)?;
    Ok(View {
        e: e.data(),
        t: crf.transitions.data(),
        start: &crf.start,
        stop: &crf.stop,
        l,
        k,
    })
}

/// Score of one tag path.
pub fn path_score(emissions: &Array, crf: &CrfParams, tags: &[usize]) -> Result<f64> {
    let v = view(emissions, crf)?;
    check_tags(tags, v.l, v.k)?;
    Ok(score(&v, tags))
}

fn score(v: &View, tags: &[usize]) -> f64 {
    let k = v.k;
    let mut s = v.start[tags[0]] + v.stop[tags[v.l - 1]];
    for (t, &y) in tags.iter().enumerate() {
        s += v.e[t * k + y];
        if t > 0 {
            s += v.t[tags[t - 1] * k + y];
        }
    }
    s
}

fn check_tags(tags: &[usize], l: usize, k: usize) -> Result<()> {
    if tags.len() != l {
        return Err(Error::shape("crf", format!("{} tags for length {l}", tags.len())));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= k) {
        return Err(Error::shape("crf", format!("tag id {bad} with {k} tags")));
    }
    Ok(())
}

/// Log of the sum of `exp(score)` over all `K^L` paths.
pub fn crf_log_partition(emissions: &Array, crf: &CrfParams) -> Result<f64> {
    let v = view(emissions, crf)?;
    Ok(forward_backward(&v).log_z)
}

/// Per-position tag marginals, `L × K`.
pub fn crf_marginals(emissions: &Array, crf: &CrfParams) -> Result<Array> {
    let v = view(emissions, crf)?;
    let tab = forward_backward(&v);
    let data = tab
        .alpha
        .iter()
        .zip(&tab.beta)
        .map(|(a, b)| (a + b - tab.log_z).exp())
        .collect();
    Ok(Array::from_parts(vec![v.l, v.k], data))
}

/// Best path and its score. Ties go to the lower tag id.
pub fn crf_viterbi(emissions: &Array, crf: &CrfParams) -> Result<(Vec<usize>, f64)> {
    let v = view(emissions, crf)?;
    let (l, k) = (v.l, v.k);
    let mut delta: Vec<f64> = (0..k).map(|j| v.start[j] + v.e[j]).collect();
    let mut back = vec![0usize; l * k];
    let mut next = vec![0.0; k];
    for t in 1..l {
        for j in 0..k {
            let mut best = 0;
            let mut best_s = delta[0] + v.t[j];
            for i in 1..k {
                let s = delta[i] + v.t[i * k + j];
                if s > best_s {
                    best_s = s;
                    best = i;
                }
            }
            back[t * k + j] = best;
            next[j] = best_s + v.e[t * k + j];
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut last = 0;
    let mut best_s = delta[0] + v.stop[0];
    for j in 1..k {
        let s = delta[j] + v.stop[j];
        if s > best_s {
            best_s = s;
            last = j;
        }
    }
    let mut path = vec![0; l];
    path[l - 1] = last;
    for t in (1..l).rev() {
        path[t - 1] = back[t * k + path[t]];
    }
    Ok((path, best_s))
}

/// Negative log-likelihood of `gold`: log-partition minus the gold path score.
pub fn crf_nll(emissions: &Array, crf: &CrfParams, gold: &[usize]) -> Result<f64> {
    let v = view(emissions, crf)?;
    check_tags(gold, v.l, v.k)?;
    Ok(forward_backward(&v).log_z - score(&v, gold))
}

// ---------------------------------------------------------------------------
// Differentiable versions. Inputs are always
// [emissions (L×K), transitions (K×K), start (1×K), stop (1×K)].

fn inputs_view<'a>(ins: &[&'a Array]) -> View<'a> {
    View {
        e: ins[0].data(),
        t: ins[1].data(),
        start: ins[2].data(),
        stop: ins[3].data(),
        l: ins[0].rows(),
        k: ins[0].cols(),
    }
}

fn pack(g: CrfGrads, l: usize, k: usize, scale: f64) -> Vec<Option<Array>> {
    let s = |v: Vec<f64>| v.into_iter().map(|x| x * scale).collect::<Vec<_>>();
    vec![
        Some(Array::from_parts(vec![l, k], s(g.e))),
        Some(Array::from_parts(vec![k, k], s(g.t))),
        Some(Array::from_parts(vec![1, k], s(g.start))),
        Some(Array::from_parts(vec![1, k], s(g.stop))),
    ]
}

struct LogPartitionOp;

impl CustomOp for LogPartitionOp {
    fn name(&self) -> &'static str {
        "crf_log_partition"
    }

    fn backward(&self, ins: &[&Array], _out: &Array, grad: &Array) -> Vec<Option<Array>> {
        let v = inputs_view(ins);
        let tab = forward_backward(&v);
        pack(crf_vjp(&v, &tab, None, None, grad.item()), v.l, v.k, 1.0)
    }
}

struct NllOp {
    gold: Vec<usize>,
}

impl CustomOp for NllOp {
    fn name(&self) -> &'static str {
        "crf_nll"
    }

    fn backward(&self, ins: &[&Array], _out: &Array, grad: &Array) -> Vec<Option<Array>> {
        let v = inputs_view(ins);
        let tab = forward_backward(&v);
        let mut g = crf_vjp(&v, &tab, None, None, 1.0);
        let k = v.k;
        g.start[self.gold[0]] -= 1.0;
        g.stop[self.gold[v.l - 1]] -= 1.0;
        for (t, &y) in self.gold.iter().enumerate() {
            g.e[t * k + y] -= 1.0;
            if t > 0 {
                g.t[self.gold[t - 1] * k + y] -= 1.0;
            }
        }
        pack(g, v.l, v.k, grad.item())
    }
}

struct LogMarginalsOp;

impl CustomOp for LogMarginalsOp {
    fn name(&self) -> &'static str {
        "crf_log_marginals"
    }

    fn backward(&self, ins: &[&Array], _out: &Array, grad: &Array) -> Vec<Option<Array>> {
        let v = inputs_view(ins);
        let tab = forward_backward(&v);
        let gd = grad.data();
        let g_log_z = -gd.iter().sum::<f64>();
        pack(crf_vjp(&v, &tab, Some(gd), Some(gd), g_log_z), v.l, v.k, 1.0)
    }
}

/// Tape handles for the CRF inputs.
#[derive(Clone, Copy, Debug)]
pub struct CrfVars {
    pub transitions: Var,
    pub start: Var,
    pub stop: Var,
}

fn tape_check(tape: &Tape, emissions: Var, crf: &CrfVars) -> Result<(Array, CrfParams)> {
    let e = tape.value(emissions).clone();
    let p = CrfParams {
        transitions: tape.value(crf.transitions).clone(),
        start: tape.value(crf.start).data().to_vec(),
        stop: tape.value(crf.stop).data().to_vec(),
    };
    p.check(&e)?;
    Ok((e, p))
}

fn ins(emissions: Var, crf: &CrfVars) -> [Var; 4] {
    [emissions, crf.transitions, crf.start, crf.stop]
}

/// Differentiable log-partition, `1 × 1`.
pub fn tape_log_partition(tape: &mut Tape, emissions: Var, crf: &CrfVars) -> Result<Var> {
    let (e, p) = tape_check(tape, emissions, crf)?;
    let z = crf_log_partition(&e, &p)?;
    Ok(tape.custom(Box::new(LogPartitionOp), &ins(emissions, crf), Array::scalar(z)))
}

/// Differentiable sequence NLL, `1 × 1`.
pub fn tape_nll(tape: &mut Tape, emissions: Var, crf: &CrfVars, gold: &[usize]) -> Result<Var> {
    let (e, p) = tape_check(tape, emissions, crf)?;
    let nll = crf_nll(&e, &p, gold)?;
    Ok(tape.custom(
        Box::new(NllOp {
            gold: gold.to_vec(),
        }),
        &ins(emissions, crf),
        Array::scalar(nll),
    ))
}

/// Differentiable per-position log-marginals, `L × K`.
pub fn tape_log_marginals(tape: &mut Tape, emissions: Var, crf: &CrfVars) -> Result<Var> {
    let (e, p) = tape_check(tape, emissions, crf)?;
    let v = view(&e, &p)?;
    let tab = forward_backward(&v);
    let data = tab
        .alpha
        .iter()
        .zip(&tab.beta)
        .map(|(a, b)| a + b - tab.log_z)
        .collect();
    let out = Array::from_parts(vec![v.l, v.k], data);
    Ok(tape.custom(Box::new(LogMarginalsOp), &ins(emissions, crf), out))
}
