/// A `(p, y)` coefficient pair stored as one stacked vector `[p; y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVector {
    data: Vec<f64>,
}

impl PairVector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; 2 * dim],
        }
    }

    pub fn new(p: &[f64], y: &[f64]) -> Self {
        assert_eq!(p.len(), y.len(), "pair components must have equal length");
        let mut data = Vec::with_capacity(2 * p.len());
        data.extend_from_slice(p);
        data.extend_from_slice(y);
        Self { data }
    }

    /// Wraps a stacked vector of even length.
    pub fn from_stacked(data: Vec<f64>) -> Self {
        assert!(data.len() % 2 == 0, "stacked pair needs even length");
        Self { data }
    }

    /// Length of each component.
    pub fn dim(&self) -> usize {
        self.data.len() / 2
    }

    pub fn p(&self) -> &[f64] {
        &self.data[..self.dim()]
    }

    pub fn y(&self) -> &[f64] {
        &self.data[self.dim()..]
    }

    pub fn p_mut(&mut self) -> &mut [f64] {
        let d = self.dim();
        &mut self.data[..d]
    }

    pub fn y_mut(&mut self) -> &mut [f64] {
        let d = self.dim();
        &mut self.data[d..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `(p, y) -> (-y, p)`.
    pub fn rotated(&self) -> Self {
        let d = self.dim();
        let mut data = Vec::with_capacity(2 * d);
        data.extend(self.y().iter().map(|v| -v));
        data.extend_from_slice(self.p());
        Self { data }
    }

    /// `(p, y) -> (p, -y)`.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        out.y_mut().iter_mut().for_each(|v| *v = -*v);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_squared_negates() {
        let v = PairVector::new(&[1.0, 2.0], &[3.0, -4.0]);
        let w = v.rotated().rotated();
        assert_eq!(w.p(), &[-1.0, -2.0]);
        assert_eq!(w.y(), &[-3.0, 4.0]);
    }
}
