use crate::error::{Error, Result};

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a `rows × cols` tensor from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if n == 0 || c == 0 {
            return Err(Error::Empty("matrix has no entries".into()));
        }
        if rows.iter().any(|r| r.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Ok(Self {
            shape: vec![n, c],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Number of values per leading index.
    pub fn stride0(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape {
                expected: shape,
                found: self.shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Row `i` of a tensor viewed as `batch × stride0`.
    pub fn row(&self, i: usize) -> &[f64] {
        let s = self.stride0();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.stride0();
        &mut self.data[i * s..(i + 1) * s]
    }

    /// Copies the listed leading-index slices into a new tensor.
    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Empty("gather with no indices".into()));
        }
        let s = self.stride0();
        let mut data = Vec::with_capacity(indices.len() * s);
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::InvalidArgument(format!(
                    "index {i} out of range for batch {}",
                    self.batch()
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(Self { shape, data })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Index of the largest value in each row.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.batch())
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for (k, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}
