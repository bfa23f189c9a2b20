//! Central-difference verification of analytic gradients.

use super::{Parameter, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to relative-error denominators.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
    /// Probe at most this many evenly strided entries per parameter.
    pub max_probes: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub probes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_err <= self.tolerance)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape's gradient of `f` against central differences for every entry of `params`.
pub fn finite_diff_check<T, F>(
    f: F,
    params: &[Parameter<T>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    finite_diff_check_with(
        f,
        params,
        GradCheckOptions {
            step,
            tolerance,
            max_probes: None,
        },
    )
}

pub fn finite_diff_check_with<T, F>(
    f: F,
    params: &[Parameter<T>],
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if opts.step <= 0.0 || !opts.step.is_finite() {
        return Err(Error::invalid(format!(
            "finite-difference step must be positive, got {}",
            opts.step
        )));
    }

    let eval = |values: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let root = f(&mut tape, &vars)?;
        Ok(tape.value(root).data()[0].as_f64())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.tensor.clone())).collect();
    let root = f(&mut tape, &vars)?;
    let base = tape.value(root).data()[0].as_f64();
    if !base.is_finite() {
        return Err(Error::Numeric("loss is non-finite at the unperturbed point".into()));
    }
    tape.backward(root)?;
    let analytic: Vec<Option<Tensor<T>>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let mut values: Vec<Tensor<T>> = params.iter().map(|p| p.tensor.clone()).collect();
    let mut report = Vec::with_capacity(params.len());
    for (pi, param) in params.iter().enumerate() {
        let numel = param.tensor.numel();
        let stride = match opts.max_probes {
            Some(k) if k > 0 && numel > k => numel.div_ceil(k),
            _ => 1,
        };
        let mut check = ParamCheck {
            name: param.name.clone(),
            max_rel_err: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            probes: 0,
        };
        for idx in (0..numel).step_by(stride) {
            let orig = values[pi].data()[idx];
            values[pi].data_mut()[idx] = T::from_f64(orig.as_f64() + opts.step);
            let plus = eval(&values)?;
            values[pi].data_mut()[idx] = T::from_f64(orig.as_f64() - opts.step);
            let minus = eval(&values)?;
            values[pi].data_mut()[idx] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is non-finite when perturbing {}[{}]",
                    param.name, idx
                )));
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[pi]
                .as_ref()
                .map(|g| g.data()[idx].as_f64())
                .unwrap_or(0.0);
            let err = relative_error(a, numeric);
            check.probes += 1;
            if err > check.max_rel_err || check.probes == 1 {
                check.max_rel_err = err;
                check.worst_index = idx;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let p = vec![Parameter::new("x", Tensor::<f64>::scalar(3.0))];
        let report = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v[0], v[0])?;
                Ok(tape.sum(sq))
            },
            &p,
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.params[0].analytic, 6.0);
        assert!((report.params[0].numeric - 6.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_loss_names_the_perturbation() {
        let p = vec![Parameter::new("w", Tensor::<f64>::scalar(0.0))];
        // 1/(w+step) - style blowup: scale by a huge factor so +step overflows.
        let err = finite_diff_check(
            |tape, v| {
                let big = tape.scale(v[0], 1e308);
                let y = tape.mul(big, big)?;
                Ok(tape.sum(y))
            },
            &p,
            1e-3,
            1e-3,
        )
        .unwrap_err();
        match err {
            Error::Numeric(msg) => assert!(msg.contains("w[0]"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_non_positive_step() {
        let p = vec![Parameter::new("x", Tensor::<f64>::scalar(1.0))];
        assert!(finite_diff_check(|t, v| Ok(t.sum(v[0])), &p, 0.0, 1e-3).is_err());
    }
}
