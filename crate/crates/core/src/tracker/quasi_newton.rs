//! Limited-memory inverse-curvature estimate built from gradient differences.

use std::collections::VecDeque;

use crate::jacobians::Gradient12;

/// Pairs with less relative curvature than this are dropped.
const MIN_CURVATURE: f64 = 1e-10;

/// Recent `(step, gradient change)` pairs, applied by the two-loop recursion.
#[derive(Clone, Debug)]
pub struct Memory {
    capacity: usize,
    pairs: VecDeque<(Gradient12, Gradient12, f64)>,
}

impl Memory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Record an accepted step `s` and the gradient change `y` it caused.
    /// Returns false when the pair carries no positive curvature.
    pub fn push(&mut self, s: Gradient12, y: Gradient12) -> bool {
        let sy = s.dot(&y);
        if self.capacity == 0 || !(sy > MIN_CURVATURE * s.norm() * y.norm()) {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `−H·g` for the current inverse-curvature estimate, `None` while empty.
    pub fn direction(&self, g: &Gradient12) -> Option<Gradient12> {
        let (s_last, y_last, _) = self.pairs.back()?;
        let mut q = *g;
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * s.dot(&q);
            q -= y * a;
            alphas.push(a);
        }
        q *= s_last.dot(y_last) / y_last.norm_squared();
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * y.dot(&q);
            q += s * (a - b);
        }
        Some(-q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SMatrix;

    #[test]
    fn empty_memory_has_no_direction() {
        let m = Memory::new(4);
        assert!(m.is_empty());
        assert!(m.direction(&Gradient12::repeat(1.0)).is_none());
    }

    #[test]
    fn negative_curvature_is_dropped() {
        let mut m = Memory::new(4);
        let s = Gradient12::repeat(1.0);
        assert!(!m.push(s, -s));
        assert!(m.is_empty());
        let mut zero = Memory::new(0);
        assert!(!zero.push(s, s));
    }

    #[test]
    fn capacity_is_respected() {
        let mut m = Memory::new(2);
        for i in 0..5 {
            let mut s = Gradient12::zeros();
            s[i] = 1.0;
            assert!(m.push(s, s * 2.0));
        }
        assert_eq!(m.len(), 2);
    }

    #[test]
    fn recovers_newton_step_on_a_quadratic() {
        // Diagonal quadratic with curvatures spanning three decades; twelve
        // independent pairs pin down the inverse exactly.
        let diag = Gradient12::from_fn(|i, _| 10f64.powf(i as f64 / 4.0));
        let h = SMatrix::<f64, 12, 12>::from_diagonal(&diag);
        let mut m = Memory::new(12);
        for i in 0..12 {
            let mut s = Gradient12::zeros();
            s[i] = 1.0 + i as f64;
            assert!(m.push(s, h * s));
        }
        let g = Gradient12::from_fn(|i, _| (i as f64 - 5.0) * 0.3);
        let d = m.direction(&g).unwrap();
        let newton = -g.component_div(&diag);
        assert!((d - newton).norm() < 1e-10 * newton.norm(), "{d} vs {newton}");
    }

    #[test]
    fn direction_descends_for_any_positive_pairs() {
        let mut m = Memory::new(3);
        m.push(Gradient12::from_fn(|i, _| (i as f64).sin()), Gradient12::from_fn(|i, _| 1.0 + (i as f64).sin()));
        m.push(Gradient12::from_fn(|i, _| (i as f64).cos()), Gradient12::from_fn(|i, _| 2.0 * (i as f64).cos() + 0.1));
        for k in 0..10 {
            let g = Gradient12::from_fn(|i, _| ((i * 7 + k * 3) as f64).sin());
            if let Some(d) = m.direction(&g) {
                assert!(d.dot(&g) < 0.0);
            }
        }
    }
}
