/// A probability vector over classes (`0 = undamaged`, `1 = damaged`).
#[derive(Clone, Debug, PartialEq)]
pub struct ProbDist(Vec<f64>);

/// Tolerance used when validating that a vector sums to one.
pub const NORMALIZATION_TOL: f64 = 1e-6;

impl ProbDist {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        let sum: f64 = values.iter().sum();
        let valid = !values.is_empty()
            && values.iter().all(|v| v.is_finite() && *v >= 0.0)
            && (sum - 1.0).abs() <= NORMALIZATION_TOL;
        valid.then_some(Self(values))
    }

    /// Wraps values without validation; callers guarantee normalization.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Self {
        let mut v = vec![0.0; num_classes];
        v[class] = 1.0;
        Self(v)
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self(vec![1.0 / num_classes as f64; num_classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Index of the largest probability; ties resolve to the lowest class.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.0[self.argmax()]
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self.0.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }

    /// `w * self + (1 - w) * other`.
    pub fn mix(&self, other: &ProbDist, w: f64) -> ProbDist {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| w * a + (1.0 - w) * b).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ProbDist::new(vec![0.5, 0.5]).is_some());
        assert!(ProbDist::new(vec![0.5, 0.6]).is_none());
        assert!(ProbDist::new(vec![1.5, -0.5]).is_none());
        assert_eq!(ProbDist::one_hot(1, 2).as_slice(), &[0.0, 1.0]);
        assert_eq!(ProbDist::new(vec![0.5, 0.5]).unwrap().argmax(), 0);
    }
}
