//! Fusion weights α and the source/target training losses.

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Array, ParamSet, Tape, Var};

pub const TAU: &str = "fuse.tau";
pub const GAMMA: &str = "fuse.gamma";
pub const W_ALPHA: &str = "fuse.w_alpha";
pub const B_ALPHA: &str = "fuse.b_alpha";
pub const PREFIX: &str = "fuse.";

/// Tolerance on the row sums of distributions passed to [`target_loss`].
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlphaMode {
    Fixed,
    Sample,
    Element,
    Multi,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(AlphaMode::Fixed),
            "sample" => Ok(AlphaMode::Sample),
            "element" => Ok(AlphaMode::Element),
            "multi" => Ok(AlphaMode::Multi),
            _ => Err(Error::Config(format!(
                "unknown alpha mode `{s}` (expected fixed, sample, element or multi)"
            ))),
        }
    }
}

impl std::fmt::Display for AlphaMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlphaMode::Fixed => "fixed",
            AlphaMode::Sample => "sample",
            AlphaMode::Element => "element",
            AlphaMode::Multi => "multi",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaConfig {
    pub mode: AlphaMode,
    pub fixed: f64,
    pub tau: f64,
    pub gamma: f64,
    pub w_alpha: f64,
    pub b_alpha: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        AlphaConfig {
            mode: AlphaMode::Multi,
            fixed: 0.5,
            tau: 1.0,
            gamma: 0.5,
            w_alpha: 1.0,
            b_alpha: 0.5,
        }
    }
}

impl AlphaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fixed) {
            return Err(Error::Config(format!("fixed alpha {} outside [0, 1]", self.fixed)));
        }
        for (n, v) in [
            ("tau", self.tau),
            ("gamma", self.gamma),
            ("w_alpha", self.w_alpha),
            ("b_alpha", self.b_alpha),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("alpha parameter {n} is not finite")));
            }
        }
        Ok(())
    }

    pub fn init_params(&self, params: &mut ParamSet) -> Result<()> {
        self.validate()?;
        params.insert(TAU, Array::scalar(self.tau))?;
        params.insert(GAMMA, Array::scalar(self.gamma))?;
        params.insert(W_ALPHA, Array::scalar(self.w_alpha))?;
        params.insert(B_ALPHA, Array::scalar(self.b_alpha))?;
        Ok(())
    }

    /// Whether `name` is a fusion parameter the active mode uses.
    pub fn is_active_param(&self, name: &str) -> bool {
        match self.mode {
            AlphaMode::Fixed => false,
            AlphaMode::Sample => name == TAU || name == GAMMA,
            AlphaMode::Element => name == W_ALPHA || name == B_ALPHA,
            AlphaMode::Multi => name.starts_with(PREFIX),
        }
    }
}

pub fn alpha_sample_value(w_samp: f64, tau: f64, gamma: f64) -> f64 {
    sigmoid(tau * w_samp + gamma)
}

pub fn alpha_elem_value(w_elem: &[f64], w_alpha: f64, b_alpha: f64) -> Vec<f64> {
    w_elem.iter().map(|&w| sigmoid(w_alpha * w + b_alpha)).collect()
}

pub fn alpha_multi_value(alpha_samp: f64, alpha_elem: &[f64]) -> Vec<f64> {
    alpha_elem.iter().map(|a| alpha_samp * a).collect()
}

/// `σ(τ·w + γ)` for a `1 × 1` sample relevance.
pub fn alpha_sample(tape: &mut Tape, w_samp: Var) -> Result<Var> {
    let tau = tape.param_named(TAU)?;
    let gamma = tape.param_named(GAMMA)?;
    let z = tape.mul(w_samp, tau)?;
    let z = tape.add(z, gamma)?;
    Ok(tape.sigmoid(z))
}

/// Position-wise `σ(W_α·w_j + b_α)` for a `1 × L` row of raw scores.
pub fn alpha_elem(tape: &mut Tape, w_elem: Var) -> Result<Var> {
    let wa = tape.param_named(W_ALPHA)?;
    let ba = tape.param_named(B_ALPHA)?;
    let z = tape.mul(w_elem, wa)?;
    let z = tape.add(z, ba)?;
    Ok(tape.sigmoid(z))
}

/// `α^samp · α^elem`, `1 × L`.
pub fn alpha_multi(tape: &mut Tape, alpha_samp: Var, alpha_elem: Var) -> Result<Var> {
    tape.mul(alpha_elem, alpha_samp)
}

/// Mean sequence NLL over a batch of `1 × 1` losses.
pub fn source_loss(tape: &mut Tape, nlls: &[Var]) -> Result<Var> {
    if nlls.is_empty() {
        return Err(Error::shape("source_loss", "empty batch"));
    }
    let all = tape.concat(nlls, 0)?;
    Ok(tape.mean(all))
}

/// One target sentence as seen by [`target_loss`].
#[derive(Clone, Copy, Debug)]
pub struct TargetItem<'a> {
    /// Target model log-distribution, `L × K`.
    pub log_pt: Var,
    /// Target model sequence NLL, `1 × 1`.
    pub nll: Var,
    /// Cached source distribution, `L × K`.
    pub p_s: &'a Array,
    pub gold: &'a [usize],
}

/// Weights on the distillation term.
#[derive(Clone, Debug)]
pub enum Alphas {
    Fixed(f64),
    /// One `1 × 1` weight per sentence.
    Sample(Vec<Var>),
    /// One `1 × L` row per sentence.
    Element(Vec<Var>),
}

#[derive(Clone, Copy, Debug)]
pub struct TargetLoss {
    pub total: Var,
    /// Weighted supervised part.
    pub seq: Var,
    /// Weighted distillation part.
    pub kd: Var,
}

fn check_item(tape: &Tape, it: &TargetItem) -> Result<(usize, usize)> {
    let lp = tape.value(it.log_pt);
    let (l, k) = (lp.rows(), lp.cols());
    if it.p_s.rows() != l || it.p_s.cols() != k || it.gold.len() != l {
        return Err(Error::shape(
            "target_loss",
            format!(
                "log p^T {:?}, p^S {:?}, {} gold tags",
                lp.shape(),
                it.p_s.shape(),
                it.gold.len()
            ),
        ));
    }
    if let Some(&g) = it.gold.iter().find(|&&g| g >= k) {
        return Err(Error::shape("target_loss", format!("gold tag {g} with {k} tags")));
    }
    for r in 0..l {
        let row = it.p_s.row_slice(r);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Numeric(format!(
                "soft target row {r} is not a distribution (sum {s})"
            )));
        }
    }
    Ok((l, k))
}

fn check_alpha(values: &[f64]) -> Result<()> {
    match values.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        Some(a) => Err(Error::Numeric(format!("alpha {a} outside [0, 1]"))),
        None => Ok(()),
    }
}

/// Per-position `CE(p^S, p^T)` as a `1 × L` row.
fn kd_row(tape: &mut Tape, it: &TargetItem) -> Result<Var> {
    let ps = tape.constant(it.p_s.clone());
    let prod = tape.mul(ps, it.log_pt)?;
    let s = tape.sum_axis(prod, 1)?;
    let s = tape.transpose(s);
    Ok(tape.scale(s, -1.0))
}

/// Per-position `-log p^T[gold]` as a `1 × L` row.
fn gold_row(tape: &mut Tape, it: &TargetItem, l: usize, k: usize) -> Result<Var> {
    let mut onehot = Array::zeros(&[l, k]);
    for (j, &g) in it.gold.iter().enumerate() {
        onehot.set(j, g, 1.0);
    }
    let oh = tape.constant(onehot);
    let prod = tape.mul(oh, it.log_pt)?;
    let s = tape.sum_axis(prod, 1)?;
    let s = tape.transpose(s);
    Ok(tape.scale(s, -1.0))
}

/// Target-phase loss averaged over the `n` sentences of a batch.
///
/// * `Fixed(α)`: `(1-α)·mean NLL + α·mean Σ_j CE_j`
/// * `Sample`: `mean_i [(1-α_i)·NLL_i + α_i·Σ_j CE_ij]`
/// * `Element`: `mean_i Σ_j [(1-α_ij)·(-log p^T_ij[y_ij]) + α_ij·CE_ij]`
pub fn target_loss(tape: &mut Tape, items: &[TargetItem], alphas: &Alphas) -> Result<TargetLoss> {
    let n = items.len();
    if n == 0 {
        return Err(Error::shape("target_loss", "empty batch"));
    }
    let dims = items
        .iter()
        .map(|it| check_item(tape, it))
        .collect::<Result<Vec<_>>>()?;
    let mut seq_terms = Vec::with_capacity(n);
    let mut kd_terms = Vec::with_capacity(n);
    match alphas {
        Alphas::Fixed(a) => {
            check_alpha(&[*a])?;
            for it in items {
                let kd = kd_row(tape, it)?;
                kd_terms.push(tape.sum(kd));
                seq_terms.push(it.nll);
            }
            let seq = tape.concat(&seq_terms, 0)?;
            let seq = tape.sum(seq);
            let seq = tape.scale(seq, (1.0 - a) / n as f64);
            let kd = tape.concat(&kd_terms, 0)?;
            let kd = tape.sum(kd);
            let kd = tape.scale(kd, a / n as f64);
            let total = tape.add(seq, kd)?;
            return Ok(TargetLoss { total, seq, kd });
        }
        Alphas::Sample(ws) => {
            if ws.len() != n {
                return Err(Error::shape("target_loss", format!("{} alphas for {n} sentences", ws.len())));
            }
            for (it, &a) in items.iter().zip(ws) {
                let av = tape.value(a);
                if av.len() != 1 {
                    return Err(Error::shape("target_loss", format!("sample alpha {:?}", av.shape())));
                }
                check_alpha(av.data())?;
                let kd = kd_row(tape, it)?;
                let kd = tape.sum(kd);
                kd_terms.push(tape.mul(kd, a)?);
                let keep = tape.affine(a, -1.0, 1.0);
                seq_terms.push(tape.mul(it.nll, keep)?);
            }
        }
        Alphas::Element(ws) => {
            if ws.len() != n {
                return Err(Error::shape("target_loss", format!("{} alphas for {n} sentences", ws.len())));
            }
            for ((it, &a), &(l, k)) in items.iter().zip(ws).zip(&dims) {
                let av = tape.value(a);
                if av.rows() != 1 || av.cols() != l {
                    return Err(Error::shape(
                        "target_loss",
                        format!("element alpha {:?} for length {l}", av.shape()),
                    ));
                }
                check_alpha(av.data())?;
                let kd = kd_row(tape, it)?;
                let kd = tape.mul(kd, a)?;
                kd_terms.push(tape.sum(kd));
                let g = gold_row(tape, it, l, k)?;
                let keep = tape.affine(a, -1.0, 1.0);
                let g = tape.mul(g, keep)?;
                seq_terms.push(tape.sum(g));
            }
        }
    }
    let seq = tape.concat(&seq_terms, 0)?;
    let seq = tape.mean(seq);
    let kd = tape.concat(&kd_terms, 0)?;
    let kd = tape.mean(kd);
    let total = tape.add(seq, kd)?;
    Ok(TargetLoss { total, seq, kd })
}

/// `-Σ_k p_k log q_k`.
pub fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(pk, qk)| -pk * qk.ln())
        .sum()
}
