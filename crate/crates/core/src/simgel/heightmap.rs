use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

/// Height field on a regular grid, in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Heightmap<T = f64> {
    rows: usize,
    cols: usize,
    resolution_mm_per_px: f64,
    data: Vec<T>,
}

impl<T: Scalar> Heightmap<T> {
    pub fn new(rows: usize, cols: usize, resolution_mm_per_px: f64, data: Vec<T>) -> Result<Self> {
        if rows < 8 || cols < 8 {
            return Err(Error::InvalidArgument(format!("heightmap must be at least 8x8, got {rows}x{cols}")));
        }
        if !(resolution_mm_per_px > 0.0 && resolution_mm_per_px.is_finite()) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution_mm_per_px}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape("heightmap", &[rows, cols], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("heightmap contains non-finite values".into()));
        }
        Ok(Heightmap { rows, cols, resolution_mm_per_px, data })
    }

    pub fn zeros(rows: usize, cols: usize, resolution_mm_per_px: f64) -> Result<Self> {
        Self::new(rows, cols, resolution_mm_per_px, vec![T::zero(); rows * cols])
    }

    /// Builds a map from a function of the (row, col) index.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        resolution_mm_per_px: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(lit(f(r, c)));
            }
        }
        Self::new(rows, cols, resolution_mm_per_px, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn resolution_mm_per_px(&self) -> f64 {
        self.resolution_mm_per_px
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn max(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Bilinear sample at a position in mm relative to the grid centre;
    /// zero outside the grid.
    pub fn sample_centered_mm(&self, u_mm: f64, v_mm: f64) -> T {
        let fr = u_mm / self.resolution_mm_per_px + (self.rows as f64 - 1.0) / 2.0;
        let fc = v_mm / self.resolution_mm_per_px + (self.cols as f64 - 1.0) / 2.0;
        if fr < 0.0 || fc < 0.0 || fr > (self.rows - 1) as f64 || fc > (self.cols - 1) as f64 {
            return T::zero();
        }
        let (r0, c0) = (fr.floor() as usize, fc.floor() as usize);
        let (r1, c1) = ((r0 + 1).min(self.rows - 1), (c0 + 1).min(self.cols - 1));
        let (tr, tc) = (lit::<T>(fr - r0 as f64), lit::<T>(fc - c0 as f64));
        let one = T::one();
        let top = self.get(r0, c0) * (one - tc) + self.get(r0, c1) * tc;
        let bottom = self.get(r1, c0) * (one - tc) + self.get(r1, c1) * tc;
        top * (one - tr) + bottom * tr
    }

    /// Number of cells strictly above `threshold_mm`.
    pub fn count_above(&self, threshold_mm: f64) -> usize {
        let t = lit::<T>(threshold_mm);
        self.data.iter().filter(|&&v| v > t).count()
    }

    /// Unweighted (row, col) centroid of cells above `threshold_mm`.
    pub fn centroid_above(&self, threshold_mm: f64) -> Option<(f64, f64)> {
        let t = lit::<T>(threshold_mm);
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for (i, &v) in self.data.iter().enumerate() {
            if v > t {
                sr += (i / self.cols) as f64;
                sc += (i % self.cols) as f64;
                n += 1;
            }
        }
        (n > 0).then(|| (sr / n as f64, sc / n as f64))
    }

    /// Separable Gaussian smoothing, zero beyond the border.
    pub fn gaussian_blur(&self, sigma_px: f64) -> Heightmap<T> {
        if sigma_px <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma_px).ceil() as isize;
        let mut kernel: Vec<f64> =
            (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma_px * sigma_px)).exp()).collect();
        let total: f64 = kernel.iter().sum();
        kernel.iter_mut().for_each(|k| *k /= total);
        let kernel: Vec<T> = kernel.into_iter().map(lit).collect();

        let (rows, cols) = (self.rows as isize, self.cols as isize);
        let mut tmp = vec![T::zero(); self.data.len()];
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = T::zero();
                for (j, &k) in kernel.iter().enumerate() {
                    let cc = c + j as isize - radius;
                    if cc >= 0 && cc < cols {
                        acc += k * self.data[(r * cols + cc) as usize];
                    }
                }
                tmp[(r * cols + c) as usize] = acc;
            }
        }
        let mut out = vec![T::zero(); self.data.len()];
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = T::zero();
                for (j, &k) in kernel.iter().enumerate() {
                    let rr = r + j as isize - radius;
                    if rr >= 0 && rr < rows {
                        acc += k * tmp[(rr * cols + c) as usize];
                    }
                }
                out[(r * cols + c) as usize] = acc;
            }
        }
        Heightmap { rows: self.rows, cols: self.cols, resolution_mm_per_px: self.resolution_mm_per_px, data: out }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_tiny_and_non_finite() {
        assert!(Heightmap::<f64>::zeros(4, 10, 0.1).is_err());
        assert!(Heightmap::<f64>::zeros(10, 10, 0.0).is_err());
        let mut d = vec![0.0; 100];
        d[3] = f64::NAN;
        assert!(Heightmap::new(10, 10, 0.1, d).is_err());
    }

    #[test]
    fn blur_preserves_interior_mass() {
        let h = Heightmap::<f64>::from_fn(41, 41, 0.1, |r, c| if r == 20 && c == 20 { 1.0 } else { 0.0 }).unwrap();
        let b = h.gaussian_blur(2.0);
        let total: f64 = b.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(b.get(20, 20) > b.get(20, 22));
    }

    #[test]
    fn bilinear_sample_hits_grid_values() {
        let h = Heightmap::<f64>::from_fn(9, 9, 0.5, |r, c| (r * 10 + c) as f64).unwrap();
        assert_eq!(h.sample_centered_mm(0.0, 0.0), 44.0);
        assert_eq!(h.sample_centered_mm(0.25, 0.0), 49.0);
        assert_eq!(h.sample_centered_mm(100.0, 0.0), 0.0);
    }
}
