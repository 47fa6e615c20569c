use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamSet, Tape, Tensor, Var};
use crate::error::Result;

/// `|analytic − numeric| / max(1e-8, |analytic| + |numeric|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Location of the worst entry, `"<name>[<index>]"`.
    pub worst: String,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_pair: (f64, f64),
    pub checked: usize,
}

impl GradCheckReport {
    fn new() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst: String::new(),
            worst_pair: (0.0, 0.0),
            checked: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64, name: &str, index: usize) {
        let err = relative_error(analytic, numeric);
        self.checked += 1;
        if err > self.max_rel_error || self.worst.is_empty() {
            self.max_rel_error = self.max_rel_error.max(err);
            self.worst = format!("{name}[{index}]");
            self.worst_pair = (analytic, numeric);
        }
    }
}

const PROJECTION_SEED: u64 = 0x0005_eed0_f9ad;

/// Fixed random weights that reduce an `n`-entry output to a scalar so that
/// every output entry contributes to the checked gradient.
fn projection(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROJECTION_SEED);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn eval(inputs: &[Tensor], f: &impl Fn(&mut Tape, &[Var]) -> Result<Var>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    Ok(tape.value(y).data().to_vec())
}

/// Central-difference check of `f` with respect to every entry of inputs
/// drawn uniformly from `[-1, 1]` (entries with `|x| < 1e-3` are resampled
/// so that kinked primitives are probed away from the kink).
pub fn grad_check(
    shapes: &[Vec<usize>],
    seed: u64,
    h: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs = shapes
        .iter()
        .map(|s| {
            let n = s.iter().product();
            let data = (0..n)
                .map(|_| loop {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if v.abs() >= 1e-3 {
                        break v;
                    }
                })
                .collect();
            Tensor::new(s.clone(), data)
        })
        .collect::<Result<Vec<_>>>()?;
    grad_check_at(&inputs, h, f)
}

/// Central-difference check at the given inputs.
pub fn grad_check_at(
    inputs: &[Tensor],
    h: f64,
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let y = f(&mut tape, &vars)?;
    let weights = projection(tape.value(y).len());
    let s = if weights.len() == 1 {
        y
    } else {
        let shape = tape.value(y).shape().to_vec();
        let w = tape.constant(Tensor::new(shape, weights.clone())?);
        let p = tape.mul(y, w)?;
        tape.sum(p)
    };
    tape.backward(s, &mut ParamSet::new())?;

    let mut report = GradCheckReport::new();
    let mut probe = inputs.to_vec();
    for (k, &v) in vars.iter().enumerate() {
        let analytic = tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let up = eval(&probe, &f)?;
            probe[k].data_mut()[i] = orig - h;
            let down = eval(&probe, &f)?;
            probe[k].data_mut()[i] = orig;
            // difference entrywise before projecting: unaffected outputs cancel exactly
            let numeric: f64 = up
                .iter()
                .zip(&down)
                .zip(&weights)
                .map(|((u, d), w)| w * (u - d))
                .sum::<f64>()
                / (2.0 * h);
            report.record(analytic[i], numeric, &format!("input{k}"), i);
        }
    }
    Ok(report)
}

/// Central-difference check of a scalar loss with respect to every entry of
/// every parameter in `params`. `f` must be deterministic in `params`.
pub fn grad_check_params(
    params: &mut ParamSet,
    h: f64,
    f: impl Fn(&mut Tape, &ParamSet) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check_params_with(params, Stencil::ThreePoint, h, f)
}

/// Central-difference formula used by [`grad_check_params_with`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`
    ThreePoint,
    /// `(8(f(x+h) − f(x−h)) − (f(x+2h) − f(x−2h))) / 12h`, fourth-order
    /// accurate, which allows a larger `h` and so less cancellation on
    /// large compositions.
    FivePoint,
}

pub fn grad_check_params_with(
    params: &mut ParamSet,
    stencil: Stencil,
    h: f64,
    f: impl Fn(&mut Tape, &ParamSet) -> Result<Var>,
) -> Result<GradCheckReport> {
    params.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss, params)?;
    drop(tape);

    let value = |params: &ParamSet| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, params)?;
        Ok(tape.scalar(loss))
    };

    let mut report = GradCheckReport::new();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let p = params.get(id);
        let name = p.name.clone();
        let analytic = p.grad.clone().unwrap_or_else(|| vec![0.0; p.tensor.len()]);
        for i in 0..analytic.len() {
            let orig = params.get(id).tensor.data()[i];
            let mut at = |x: f64| -> Result<f64> {
                params.get_mut(id).tensor.data_mut()[i] = x;
                value(params)
            };
            let near = at(orig + h)? - at(orig - h)?;
            let numeric = match stencil {
                Stencil::ThreePoint => near / (2.0 * h),
                Stencil::FivePoint => {
                    let far = at(orig + 2.0 * h)? - at(orig - 2.0 * h)?;
                    (8.0 * near - far) / (12.0 * h)
                }
            };
            params.get_mut(id).tensor.data_mut()[i] = orig;
            report.record(analytic[i], numeric, &name, i);
        }
    }
    params.zero_grad();
    Ok(report)
}
