use crate::error::{Error, Result};

/// Brute-force k-nearest-neighbour classifier under Euclidean distance.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl KnnModel {
    pub fn new(k: usize, features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::DegenerateData("KNN needs at least one training sample".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Dimension { expected: features.len(), got: labels.len() });
        }
        if k == 0 || k.is_multiple_of(2) || k > features.len() {
            return Err(Error::InvalidArgument(format!("k must be odd and within 1..={}, got {k}", features.len())));
        }
        let dim = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != dim) {
            return Err(Error::Dimension { expected: dim, got: bad.len() });
        }
        Ok(KnnModel { k, features, labels })
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    /// Indices of the `k` nearest training points, closest first; equal
    /// distances are ordered by training index.
    pub fn neighbors(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), got: x.len() });
        }
        let dist: Vec<f64> =
            self.features.iter().map(|f| f.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum()).collect();
        let order = |&a: &usize, &b: &usize| dist[a].total_cmp(&dist[b]).then(a.cmp(&b));
        let mut idx: Vec<usize> = (0..dist.len()).collect();
        if self.k < idx.len() {
            idx.select_nth_unstable_by(self.k - 1, order);
            idx.truncate(self.k);
        }
        idx.sort_by(order);
        Ok(idx)
    }

    /// Majority label among the neighbours; vote ties go to the smallest class.
    pub fn classify(&self, x: &[f64]) -> Result<usize> {
        let nn = self.neighbors(x)?;
        let classes = self.labels.iter().max().unwrap() + 1;
        let mut votes = vec![0usize; classes];
        for i in nn {
            votes[self.labels[i]] += 1;
        }
        let top = *votes.iter().max().unwrap();
        Ok(votes.iter().position(|&v| v == top).unwrap())
    }
}
