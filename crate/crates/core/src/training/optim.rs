use crate::encoder::Real;

/// Adam with decoupled weight decay. Moments are kept per tensor in the
/// order the parameters are passed to [`AdamW::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<A> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    pub m: Vec<Vec<A>>,
    pub v: Vec<Vec<A>>,
}

impl<A: Real> AdamW<A> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64, shapes: &[usize]) -> Self {
        AdamW {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
            t: 0,
            m: shapes.iter().map(|&n| vec![A::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![A::zero(); n]).collect(),
        }
    }

    /// One update. `decay[i]` selects whether tensor `i` receives weight decay.
    pub fn step(&mut self, params: Vec<&mut [A]>, grads: Vec<&[A]>, decay: &[bool]) {
        assert_eq!(params.len(), self.m.len(), "parameter list changed shape");
        assert_eq!(grads.len(), self.m.len(), "gradient list changed shape");
        self.t += 1;
        let t = self.t as i32;
        let b1 = A::of(self.beta1);
        let b2 = A::of(self.beta2);
        let one = A::one();
        let c1 = A::of(1.0 / (1.0 - self.beta1.powi(t)));
        let c2 = A::of(1.0 / (1.0 - self.beta2.powi(t)));
        let lr = A::of(self.lr);
        let eps = A::of(self.eps);
        let wd = A::of(self.weight_decay);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let decays = decay[i];
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let mhat = m[k] * c1;
                let vhat = v[k] * c2;
                let mut update = mhat / (vhat.sqrt() + eps);
                if decays {
                    update += wd * p[k];
                }
                p[k] -= lr * update;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut opt = AdamW::<f64>::new(0.1, 0.9, 0.999, 1e-8, 0.0, &[3]);
        let mut p = vec![1.0, 2.0, 3.0];
        opt.step(vec![&mut p], vec![&[0.5, -2.0, 0.0]], &[true]);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - 2.1).abs() < 1e-6);
        assert_eq!(p[2], 3.0);
    }

    #[test]
    fn zero_lr_is_a_no_op() {
        let mut opt = AdamW::<f64>::new(0.0, 0.9, 0.999, 1e-8, 0.01, &[2]);
        let mut p = vec![1.0, -1.0];
        opt.step(vec![&mut p], vec![&[3.0, 4.0]], &[true]);
        assert_eq!(p, vec![1.0, -1.0]);
    }

    #[test]
    fn decay_is_decoupled() {
        let mut opt = AdamW::<f64>::new(0.1, 0.9, 0.999, 1e-8, 0.5, &[1, 1]);
        let mut a = vec![2.0];
        let mut b = vec![2.0];
        opt.step(vec![&mut a, &mut b], vec![&[0.0], &[0.0]], &[true, false]);
        assert!((a[0] - (2.0 - 0.1 * 0.5 * 2.0)).abs() < 1e-12);
        assert_eq!(b[0], 2.0);
    }
}
