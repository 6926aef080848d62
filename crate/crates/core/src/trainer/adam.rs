use crate::model::Model;
use crate::scalar::{c, Scalar};

/// Adam over every model tensor and, optionally, the task weights.
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Model<T>,
    v: Model<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &Model<T>, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: model.zeros_like(),
            v: model.zeros_like(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &Model<T>, update_weights: bool) {
        self.step += 1;
        let (b1, b2) = (c::<T>(self.beta1), c::<T>(self.beta2));
        let bc1 = c::<T>(1.0 - self.beta1.powi(self.step));
        let bc2 = c::<T>(1.0 - self.beta2.powi(self.step));
        let lr = c::<T>(self.lr);
        let eps = c::<T>(self.eps);
        let update = |p: &mut T, g: T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        };

        let params = model.tensors_mut();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
            for k in 0..p.data.len() {
                update(&mut p.data[k], g.data[k], &mut m.data[k], &mut v.data[k]);
            }
        }

        if update_weights {
            update(
                &mut model.weights.sequence,
                grads.weights.sequence,
                &mut self.m.weights.sequence,
                &mut self.v.weights.sequence,
            );
            update(
                &mut model.weights.rating,
                grads.weights.rating,
                &mut self.m.weights.rating,
                &mut self.v.weights.rating,
            );
            model.weights.clip();
        }
    }
}
