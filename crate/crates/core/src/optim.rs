//! Batch gradient descent with step halving, shared by every model fit.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub learning_rate: f64,
    /// Upper bound on objective evaluations after the initial one.
    pub max_steps: usize,
    pub grad_tol: f64,
    /// Step-size multiplier applied after an accepted step.
    pub growth: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdOutcome {
    pub params: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub steps: usize,
    pub converged: bool,
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Minimizes `objective`, which returns the value at `x` and writes the
/// gradient into its second argument. A step is accepted only when it
/// strictly lowers the objective, otherwise the step size is halved, so the
/// returned value never exceeds the starting value.
pub fn minimize<F>(mut objective: F, x0: Vec<f64>, cfg: &GdConfig) -> GdOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let dim = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; dim];
    let mut value = objective(&x, &mut grad);
    let mut lr = cfg.learning_rate;
    let mut trial = vec![0.0; dim];
    let mut trial_grad = vec![0.0; dim];
    let mut steps = 0;

    while steps < cfg.max_steps {
        let g = norm(&grad);
        if g < cfg.grad_tol {
            return GdOutcome {
                params: x,
                value,
                grad_norm: g,
                steps,
                converged: true,
            };
        }
        if lr < 1e-14 || !value.is_finite() {
            break;
        }
        for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&grad) {
            *t = xi - lr * gi;
        }
        let v = objective(&trial, &mut trial_grad);
        steps += 1;
        if v < value {
            std::mem::swap(&mut x, &mut trial);
            std::mem::swap(&mut grad, &mut trial_grad);
            value = v;
            lr *= cfg.growth;
        } else {
            lr *= 0.5;
        }
    }
    let grad_norm = norm(&grad);
    GdOutcome {
        params: x,
        value,
        grad_norm,
        steps,
        converged: grad_norm < cfg.grad_tol,
    }
}
