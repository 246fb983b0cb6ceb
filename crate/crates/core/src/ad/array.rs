use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
///
/// Graph primitives treat rank-1 arrays `[n]` as a single row `[1, n]`, so
/// every value has a well-defined `(rows, cols)` view.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<S> {
    dims: Vec<usize>,
    values: Vec<S>,
}

impl<S: Scalar> Array<S> {
    pub fn new(dims: Vec<usize>, values: Vec<S>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Dims(dims));
        }
        let n: usize = dims.iter().product();
        if n != values.len() {
            return Err(Error::Invalid(format!(
                "dims {:?} hold {} values, got {}",
                dims,
                n,
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn filled(dims: Vec<usize>, value: S) -> Result<Self> {
        let n: usize = dims.iter().product();
        Self::new(dims, vec![value; n])
    }

    pub fn zeros(dims: Vec<usize>) -> Result<Self> {
        Self::filled(dims, S::zero())
    }

    pub fn scalar(value: S) -> Self {
        Self {
            dims: vec![1],
            values: vec![value],
        }
    }

    /// Rank-1 array of length `values.len()`.
    pub fn vector(values: Vec<S>) -> Result<Self> {
        Self::new(vec![values.len()], values)
    }

    /// Rank-2 array from equally long rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Invalid("ragged rows".into()));
        }
        Self::new(
            vec![rows.len(), cols],
            rows.iter().flatten().copied().collect(),
        )
    }

    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(dims, values.iter().map(|&v| S::of(v)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [S] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(rows, cols)` matrix view, or `None` above rank 2.
    pub fn shape2(&self) -> Option<(usize, usize)> {
        match self.dims.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn rows(&self) -> usize {
        self.shape2().map_or(0, |s| s.0)
    }

    pub fn cols(&self) -> usize {
        self.shape2().map_or(0, |s| s.1)
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.cols();
        &self.values[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.values[r * self.cols() + c]
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Option<S> {
        (self.values.len() == 1).then(|| self.values[0])
    }

    pub fn reshape(mut self, dims: Vec<usize>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != self.values.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::Dims(dims));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Self {
            dims: self.dims.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two arrays with identical element counts.
    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self {
            dims: self.dims.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + b;
        }
    }

    pub fn sum(&self) -> S {
        self.values.iter().copied().sum()
    }

    pub fn mean(&self) -> S {
        self.sum() / S::of(self.values.len() as f64)
    }

    pub fn sum_sq(&self) -> S {
        self.values.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }

    /// Plain `[m,k] x [k,n]` product; callers validate shapes.
    pub(crate) fn matmul_raw(a: &Self, b: &Self, m: usize, k: usize, n: usize) -> Self {
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = a.values[i * k + p];
                if aip == S::zero() {
                    continue;
                }
                let b_row = &b.values[p * n..(p + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o = *o + aip * bv;
                }
            }
        }
        Self {
            dims: vec![m, n],
            values: out,
        }
    }

    /// `a^T b` for `a: [k,m]`, `b: [k,n]`, giving `[m,n]`.
    pub(crate) fn matmul_tn(a: &Self, b: &Self, k: usize, m: usize, n: usize) -> Self {
        let mut out = vec![S::zero(); m * n];
        for p in 0..k {
            let a_row = &a.values[p * m..(p + 1) * m];
            let b_row = &b.values[p * n..(p + 1) * n];
            for (i, &api) in a_row.iter().enumerate() {
                if api == S::zero() {
                    continue;
                }
                let out_row = &mut out[i * n..(i + 1) * n];
                for (o, &bv) in out_row.iter_mut().zip(b_row) {
                    *o = *o + api * bv;
                }
            }
        }
        Self {
            dims: vec![m, n],
            values: out,
        }
    }

    /// `a b^T` for `a: [m,k]`, `b: [n,k]`, giving `[m,n]`.
    pub(crate) fn matmul_nt(a: &Self, b: &Self, m: usize, k: usize, n: usize) -> Self {
        let mut out = vec![S::zero(); m * n];
        for i in 0..m {
            let a_row = &a.values[i * k..(i + 1) * k];
            for j in 0..n {
                let b_row = &b.values[j * k..(j + 1) * k];
                let mut acc = S::zero();
                for (&x, &y) in a_row.iter().zip(b_row) {
                    acc = acc + x * y;
                }
                out[i * n + j] = acc;
            }
        }
        Self {
            dims: vec![m, n],
            values: out,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Array<T> {
        Array {
            dims: self.dims.clone(),
            values: self.values.iter().map(|v| T::of(v.as_f64())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_dims() {
        assert!(Array::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Array::<f64>::new(vec![0], vec![]).is_err());
        assert!(Array::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn rank1_is_a_row() {
        let a = Array::<f64>::vector(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.shape2(), Some((1, 3)));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Array::<f64>::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let b = Array::<f64>::from_rows(&[vec![1.0, -1.0, 0.5], vec![2.0, 0.0, 1.0]]).unwrap();
        let c = Array::matmul_raw(&a, &b, 3, 2, 3);
        assert_eq!(c.row(0), &[5.0, -1.0, 2.5]);
        assert_eq!(c.row(2), &[17.0, -5.0, 8.5]);
        // a^T a via tn and via explicit transpose + nt
        let ata = Array::matmul_tn(&a, &a, 3, 2, 2);
        assert_eq!(ata.values(), &[35.0, 44.0, 44.0, 56.0]);
        let aat = Array::matmul_nt(&a, &a, 3, 2, 3);
        assert_eq!(aat.row(0), &[5.0, 11.0, 17.0]);
    }
}
