//! Dynamic-routing capsule encoder that turns a sentence into a query vector.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::numerics::{Array, ParamSet, Tape, Var};

pub const W: &str = "rel.caps.w";
pub const PROJ_W: &str = "rel.caps.proj.w";
pub const PROJ_B: &str = "rel.caps.proj.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CapsuleConfig {
    /// Number of output capsules.
    pub outputs: usize,
    /// Dimension of input sub-capsules and output capsules.
    pub dim: usize,
    pub iterations: usize,
}

impl Default for CapsuleConfig {
    fn default() -> Self {
        CapsuleConfig {
            outputs: 60,
            dim: 8,
            iterations: 3,
        }
    }
}

impl CapsuleConfig {
    pub fn validate(&self, repr: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("capsule routing needs at least one iteration".into()));
        }
        if self.outputs == 0 || self.dim == 0 {
            return Err(Error::Config("capsule count and dimension must be positive".into()));
        }
        if repr % self.dim != 0 {
            return Err(Error::Config(format!(
                "hidden width {repr} is not a multiple of capsule dimension {}",
                self.dim
            )));
        }
        Ok(())
    }

    pub fn init_params(&self, params: &mut ParamSet, repr: usize, rng: &mut dyn RngCore) -> Result<()> {
        self.validate(repr)?;
        let wide = self.outputs * self.dim;
        params.insert_uniform(W, &[repr, wide], (1.0 / self.dim as f64).sqrt(), rng)?;
        params.insert_uniform(PROJ_W, &[wide, repr], (6.0 / (wide + repr) as f64).sqrt(), rng)?;
        params.insert(PROJ_B, Array::zeros(&[1, repr]))?;
        Ok(())
    }
}

/// Intermediate routing results, kept for inspection.
#[derive(Clone, Debug)]
pub struct Routing {
    /// Output capsules before projection, `N × d_c`.
    pub outputs: Var,
    /// Coupling coefficients of each iteration, `M × N` for `M` input capsules.
    pub couplings: Vec<Var>,
}

/// Routes the sub-capsules of `h` (`L × 2d_h`) to `N` output capsules.
///
/// Each row of `h` is cut into `S = 2d_h / d_c` sub-capsules; slot `s` has its
/// own `d_c × (N·d_c)` transformation, stored as rows `s·d_c..(s+1)·d_c` of
/// [`W`].
pub fn route(tape: &mut Tape, h: Var, cfg: &CapsuleConfig) -> Result<Routing> {
    let (l, repr) = (tape.value(h).rows(), tape.value(h).cols());
    if l == 0 {
        return Err(Error::shape("capsule_encode", "empty sentence"));
    }
    cfg.validate(repr)?;
    let (n, d) = (cfg.outputs, cfg.dim);
    let w = tape.param_named(W)?;
    let mut votes = Vec::with_capacity(repr / d);
    for s in 0..repr / d {
        let hs = tape.slice(h, 1, s * d, (s + 1) * d)?;
        let ws = tape.slice(w, 0, s * d, (s + 1) * d)?;
        votes.push(tape.matmul(hs, ws)?);
    }
    // M × (N·d_c): row m holds input capsule m's prediction for every output.
    let u = tape.concat(&votes, 0)?;
    let m = tape.value(u).rows();
    let mut logits = tape.constant(Array::zeros(&[m, n]));
    let mut couplings = Vec::with_capacity(cfg.iterations);
    let mut v = None;
    for it in 0..cfg.iterations {
        let c = tape.softmax(logits);
        couplings.push(c);
        let cr = tape.repeat_cols(c, d);
        let weighted = tape.mul(u, cr)?;
        let s = tape.sum_axis(weighted, 0)?;
        let s = tape.reshape(s, vec![n, d])?;
        let out = tape.squash(s);
        v = Some(out);
        if it + 1 < cfg.iterations {
            let flat = tape.reshape(out, vec![1, n * d])?;
            let agree = tape.mul(u, flat)?;
            let agree = tape.group_sum_cols(agree, d)?;
            logits = tape.add(logits, agree)?;
        }
    }
    Ok(Routing {
        outputs: v.expect("at least one iteration"),
        couplings,
    })
}

/// Sentence query `1 × 2d_h`: routed capsules, flattened and projected.
pub fn capsule_encode(tape: &mut Tape, h: Var, cfg: &CapsuleConfig) -> Result<Var> {
    let r = route(tape, h, cfg)?;
    let flat = tape.reshape(r.outputs, vec![1, cfg.outputs * cfg.dim])?;
    let pw = tape.param_named(PROJ_W)?;
    let pb = tape.param_named(PROJ_B)?;
    let q = tape.matmul(flat, pw)?;
    tape.add(q, pb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::check_gradients;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &CapsuleConfig, repr: usize, l: usize, seed: u64) -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        cfg.init_params(&mut ps, repr, &mut rng).unwrap();
        ps.insert_uniform("h", &[l, repr], 1.0, &mut rng).unwrap();
        ps
    }

    #[test]
    fn zero_states_give_projection_bias() {
        let cfg = CapsuleConfig::default();
        let mut ps = setup(&cfg, 16, 3, 1);
        let b = ps.id(PROJ_B).unwrap();
        ps.get_mut(b).value = Array::row((0..16).map(|i| i as f64 * 0.1).collect());
        let mut tape = Tape::new(&ps);
        let h = tape.constant(Array::zeros(&[3, 16]));
        let q = capsule_encode(&mut tape, h, &cfg).unwrap();
        assert_eq!(tape.value(q), ps.value(b));
    }

    #[test]
    fn first_couplings_are_uniform() {
        let cfg = CapsuleConfig {
            outputs: 2,
            dim: 4,
            iterations: 3,
        };
        let ps = setup(&cfg, 4, 1, 2);
        let mut tape = Tape::new(&ps);
        let h = tape.param_named("h").unwrap();
        let r = route(&mut tape, h, &cfg).unwrap();
        assert_eq!(tape.value(r.couplings[0]).data(), &[0.5, 0.5]);
        assert_eq!(r.couplings.len(), 3);
        assert_ne!(tape.value(r.couplings[2]).data(), &[0.5, 0.5]);
    }

    #[test]
    fn output_capsules_lie_in_unit_ball() {
        let cfg = CapsuleConfig::default();
        for seed in 0..5 {
            let ps = setup(&cfg, 16, 7, seed);
            let mut tape = Tape::new(&ps);
            let h = tape.param_named("h").unwrap();
            let h = tape.scale(h, 10.0);
            let r = route(&mut tape, h, &cfg).unwrap();
            let v = tape.value(r.outputs);
            for i in 0..v.rows() {
                let norm: f64 = v.row_slice(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm < 1.0);
            }
        }
    }

    #[test]
    fn rejects_indivisible_width() {
        let cfg = CapsuleConfig::default();
        let mut ps = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(cfg.init_params(&mut ps, 12, &mut rng).is_err());
        let zero = CapsuleConfig {
            iterations: 0,
            ..cfg
        };
        assert!(zero.validate(16).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = CapsuleConfig {
            outputs: 3,
            dim: 2,
            iterations: 3,
        };
        let ps = setup(&cfg, 4, 2, 3);
        let r = check_gradients(&ps, 1e-5, |tape| {
            let h = tape.param_named("h")?;
            let q = capsule_encode(tape, h, &cfg)?;
            let sq = tape.mul(q, q)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(r.max_rel_err < 1e-5, "{r:?}");
    }
}
