use std::collections::BTreeMap;

use super::OptimizerKind;

/// SGD or Adam over arrays identified by keys of type `K`.
///
/// Call [`Optimizer::begin_step`] once per batch, then [`Optimizer::update`]
/// for each array with a gradient.
#[derive(Clone, Debug)]
pub struct Optimizer<K: Ord + Copy> {
    kind: OptimizerKind,
    lr: f64,
    t: u64,
    moments: BTreeMap<K, (Vec<f64>, Vec<f64>)>,
}

impl<K: Ord + Copy> Optimizer<K> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, t: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&mut self, key: K, param: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, g) in param.iter_mut().zip(grad) {
                    *w -= self.lr * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.t.max(1) as i32;
                let (m, v) = self.moments.entry(key).or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for k in 0..grad.len() {
                    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
                    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
                    param[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
                }
            }
        }
    }
}

/// Sums per-example gradients in input order and divides by the batch size.
pub(crate) fn mean_gradients<K: Ord + Copy>(per_example: Vec<Vec<(K, Vec<f64>)>>) -> BTreeMap<K, Vec<f64>> {
    let n = per_example.len().max(1) as f64;
    let mut total: BTreeMap<K, Vec<f64>> = BTreeMap::new();
    for grads in per_example {
        for (k, g) in grads {
            match total.get_mut(&k) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                None => {
                    total.insert(k, g);
                }
            }
        }
    }
    for g in total.values_mut() {
        g.iter_mut().for_each(|v| *v /= n);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Optimizer::new(OptimizerKind::default(), 0.01);
        let mut w = vec![1.0, -1.0, 0.0];
        opt.begin_step();
        opt.update(0u8, &mut w, &[3.0, -0.5, 0.0]);
        assert!((w[0] - 0.99).abs() < 1e-9);
        assert!((w[1] + 0.99).abs() < 1e-9);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        let mut w = vec![1.0, 2.0];
        opt.begin_step();
        opt.update(0u8, &mut w, &[1.0, -2.0]);
        assert_eq!(w, vec![0.5, 3.0]);
    }

    #[test]
    fn mean_is_order_fixed() {
        let a = vec![(1u8, vec![1.0, 2.0]), (2u8, vec![4.0])];
        let b = vec![(1u8, vec![3.0, 0.0])];
        let m = mean_gradients(vec![a, b]);
        assert_eq!(m[&1], vec![2.0, 1.0]);
        assert_eq!(m[&2], vec![2.0]);
    }
}
