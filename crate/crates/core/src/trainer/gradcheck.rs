use crate::error::Result;
use crate::model::{EncodedRecord, Model, Objective};

/// Gradients below this magnitude are compared in absolute terms.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupError {
    pub name: String,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude in the group.
    pub max_abs_grad: f64,
    pub checked: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }

    pub fn group(&self, name: &str) -> Option<&GroupError> {
        self.groups.iter().find(|g| g.name == name)
    }
}

/// `|a - n| / max(|a|, |n|, ABS_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// Compares the analytic gradient of the joint objective against central
/// differences `(f(θ+ε) - f(θ-ε)) / 2ε` for every parameter of every tensor
/// and for both task weights. Runs in `f64`.
pub fn gradient_check(model: &Model<f64>, batch: &[EncodedRecord], obj: &Objective, eps: f64) -> Result<GradCheckReport> {
    let mut grads = model.zeros_like();
    model.batch_loss_backward(batch, obj, &mut grads, None)?;

    let mut probe = model.clone();
    let mut groups = Vec::new();
    let mut names = Vec::new();
    model.visit(&mut |n, _| names.push(n));
    let analytic = grads.tensors();

    for (ti, name) in names.into_iter().enumerate() {
        let mut worst = 0.0f64;
        let mut max_abs = 0.0f64;
        let n = analytic[ti].len();
        for k in 0..n {
            let orig = probe.tensors()[ti].data[k];
            probe.tensors_mut()[ti].data[k] = orig + eps;
            let up = probe.batch_loss(batch, obj)?.joint;
            probe.tensors_mut()[ti].data[k] = orig - eps;
            let down = probe.batch_loss(batch, obj)?.joint;
            probe.tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[ti].data[k];
            worst = worst.max(relative_error(a, numeric));
            max_abs = max_abs.max(a.abs());
        }
        groups.push(GroupError {
            name,
            max_rel_error: worst,
            max_abs_grad: max_abs,
            checked: n,
        });
    }

    if obj.form.trains_weights() {
        for (name, analytic) in [("lambda_S", grads.weights.sequence), ("lambda_R", grads.weights.rating)] {
            let eval = |delta: f64| -> Result<f64> {
                let mut m = model.clone();
                if name == "lambda_S" {
                    m.weights.sequence += delta;
                } else {
                    m.weights.rating += delta;
                }
                Ok(m.batch_loss(batch, obj)?.joint)
            };
            let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
            groups.push(GroupError {
                name: name.to_string(),
                max_rel_error: relative_error(analytic, numeric),
                max_abs_grad: analytic.abs(),
                checked: 1,
            });
        }
    }
    Ok(GradCheckReport { groups })
}
