//! Limited-memory BFGS direction computation (two-loop recursion).

use std::collections::VecDeque;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    pub(crate) fn new(memory: usize) -> Self {
        Self {
            memory: memory.max(1),
            pairs: VecDeque::with_capacity(memory),
        }
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub(crate) fn reset(&mut self) {
        self.pairs.clear();
    }

    /// Stores a curvature pair; pairs with `sᵀy <= 0` are dropped.
    pub(crate) fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > 1e-300) || !sy.is_finite() {
            return false;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `−H g` for the current inverse-Hessian approximation `H`.
    pub(crate) fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alpha.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alpha.into_iter().rev()) {
            let beta = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - beta) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_newton_step_on_quadratic() {
        // f(x) = ½ xᵀ diag(1, 4) x; exact curvature pairs make H exact.
        let mut l = Lbfgs::new(5);
        l.update(vec![1.0, 0.0], vec![1.0, 0.0]);
        l.update(vec![0.0, 1.0], vec![0.0, 4.0]);
        let d = l.direction(&[2.0, 8.0]);
        assert!((d[0] + 2.0).abs() < 1e-12 && (d[1] + 2.0).abs() < 1e-12, "{d:?}");
    }

    #[test]
    fn empty_memory_is_steepest_descent() {
        let l = Lbfgs::new(3);
        assert_eq!(l.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn rejects_negative_curvature() {
        let mut l = Lbfgs::new(3);
        assert!(!l.update(vec![1.0], vec![-1.0]));
        assert!(l.is_empty());
    }
}
