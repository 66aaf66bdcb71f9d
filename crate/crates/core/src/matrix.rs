use alloc::vec;
use alloc::vec::Vec;

/// Dense `(particle × node)` array stored node-major, so that the cross-section
/// of all particles at one node is a contiguous slice.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMatrix {
    n_particles: usize,
    n_nodes: usize,
    data: Vec<f64>,
}

impl PathMatrix {
    pub fn zeros(n_particles: usize, n_nodes: usize) -> Self {
        Self::filled(n_particles, n_nodes, 0.0)
    }

    pub fn filled(n_particles: usize, n_nodes: usize, value: f64) -> Self {
        Self {
            n_particles,
            n_nodes,
            data: vec![value; n_particles * n_nodes],
        }
    }

    /// Builds the matrix from `f(particle, node)`.
    pub fn from_fn(n_particles: usize, n_nodes: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n_particles * n_nodes);
        for i in 0..n_nodes {
            for p in 0..n_particles {
                data.push(f(p, i));
            }
        }
        Self {
            n_particles,
            n_nodes,
            data,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn get(&self, particle: usize, node: usize) -> f64 {
        self.data[node * self.n_particles + particle]
    }

    #[inline]
    pub fn set(&mut self, particle: usize, node: usize, value: f64) {
        self.data[node * self.n_particles + particle] = value;
    }

    pub fn column(&self, node: usize) -> &[f64] {
        let start = node * self.n_particles;
        &self.data[start..start + self.n_particles]
    }

    pub fn column_mut(&mut self, node: usize) -> &mut [f64] {
        let start = node * self.n_particles;
        &mut self.data[start..start + self.n_particles]
    }

    pub fn row(&self, particle: usize) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.get(particle, i)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_particles: self.n_particles,
            n_nodes: self.n_nodes,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Columns `first..=last` as a new matrix.
    pub fn columns(&self, first: usize, last: usize) -> Self {
        let start = first * self.n_particles;
        let end = (last + 1) * self.n_particles;
        Self {
            n_particles: self.n_particles,
            n_nodes: last - first + 1,
            data: self.data[start..end].to_vec(),
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| mean(self.column(i))).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Arithmetic mean with a fixed left-to-right summation order.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (denominator `n - 1`).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    libm::sqrt(ss / (xs.len() - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_round_trip() {
        let m = PathMatrix::from_fn(3, 4, |p, i| (10 * p + i) as f64);
        assert_eq!(m.get(2, 3), 23.0);
        assert_eq!(m.column(1), &[1.0, 11.0, 21.0]);
        assert_eq!(m.row(1), alloc::vec![10.0, 11.0, 12.0, 13.0]);
        let sub = m.columns(1, 2);
        assert_eq!(sub.n_nodes(), 2);
        assert_eq!(sub.get(2, 1), 22.0);
    }

    #[test]
    fn moments() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert!((std_dev(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-15);
        assert_eq!(std_dev(&[4.0]), 0.0);
    }
}
