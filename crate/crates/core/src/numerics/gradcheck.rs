//! Central finite-difference checks for tape gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use super::{ParamSet, Tape, Var};
use crate::error::Result;

/// Denominator floor for relative error, so entries whose true gradient is
/// zero are compared on an absolute scale instead of blowing up.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    /// `(parameter name, flat index, analytic, numeric)` at the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
    pub entries_checked: usize,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar built by `build` with central
/// differences of step `h`, over every entry of every trainable parameter.
pub fn check_gradients<F>(params: &ParamSet, h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new(params);
        let loss = build(&mut tape)?;
        tape.backward(loss)?
    };
    let eval = |ps: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new(ps);
        let loss = build(&mut tape)?;
        Ok(tape.value(loss).item())
    };
    let mut report = GradCheck {
        max_rel_err: 0.0,
        worst: None,
        entries_checked: 0,
    };
    let mut work = params.clone();
    for id in params.trainable_ids() {
        let g = analytic.get(id).expect("backward covers trainable params");
        for i in 0..params.value(id).len() {
            let orig = params.value(id).data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + h;
            let up = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig - h;
            let down = eval(&work)?;
            work.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = rel_err(g.data()[i], numeric);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((params.get(id).name.clone(), i, g.data()[i], numeric));
            }
        }
    }
    Ok(report)
}
