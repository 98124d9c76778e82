use std::fmt;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    fn as_matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Dimension {
                op,
                left: self.shape.clone(),
                right: vec![],
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

/// Standard matrix product `a (m×k) · b (k×n)`.
///
/// Each output row depends only on the matching input row and is accumulated
/// in a fixed order, so results do not depend on how many rows are batched.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.as_matrix_dims("matmul")?;
    let (k2, n) = b.as_matrix_dims("matmul")?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `a (m×n) · bᵀ` for `b (k×n)`, giving `m×k`.
pub(crate) fn matmul_bt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, n) = a.as_matrix_dims("matmul_bt")?;
    let (k, n2) = b.as_matrix_dims("matmul_bt")?;
    if n != n2 {
        return Err(Error::Dimension {
            op: "matmul_bt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let arow = &a.data[i * n..(i + 1) * n];
        for j in 0..k {
            let brow = &b.data[j * n..(j + 1) * n];
            out[i * k + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Ok(Tensor {
        shape: vec![m, k],
        data: out,
    })
}

/// `aᵀ · b` for `a (m×k)`, `b (m×n)`, giving `k×n`.
pub(crate) fn matmul_at(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.as_matrix_dims("matmul_at")?;
    let (m2, n) = b.as_matrix_dims("matmul_at")?;
    if m != m2 {
        return Err(Error::Dimension {
            op: "matmul_at",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; k * n];
    for r in 0..m {
        let arow = &a.data[r * k..(r + 1) * k];
        let brow = &b.data[r * n..(r + 1) * n];
        for (p, &ap) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ap * bv;
            }
        }
    }
    Ok(Tensor {
        shape: vec![k, n],
        data: out,
    })
}

/// Adds a length-`n` bias to every row of an `m×n` matrix.
pub fn add_row_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = a.as_matrix_dims("add_row_bias")?;
    if bias.len() != n {
        return Err(Error::Dimension {
            op: "add_row_bias",
            left: a.shape.clone(),
            right: bias.shape.clone(),
        });
    }
    let mut data = a.data.clone();
    for i in 0..m {
        for (v, b) in data[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data,
    })
}

/// Selects columns `idx` of a matrix, in that order.
pub fn gather_cols(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (m, n) = a.as_matrix_dims("gather_cols")?;
    if let Some(&bad) = idx.iter().find(|&&j| j >= n) {
        return Err(Error::Dimension {
            op: "gather_cols",
            left: a.shape.clone(),
            right: vec![bad],
        });
    }
    let k = idx.len();
    let mut data = Vec::with_capacity(m * k);
    for i in 0..m {
        let row = &a.data[i * n..(i + 1) * n];
        data.extend(idx.iter().map(|&j| row[j]));
    }
    Ok(Tensor {
        shape: vec![m, k],
        data,
    })
}

pub fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, na) = a.as_matrix_dims("concat_cols")?;
    let (m2, nb) = b.as_matrix_dims("concat_cols")?;
    if m != m2 {
        return Err(Error::Dimension {
            op: "concat_cols",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut data = Vec::with_capacity(m * (na + nb));
    for i in 0..m {
        data.extend_from_slice(&a.data[i * na..(i + 1) * na]);
        data.extend_from_slice(&b.data[i * nb..(i + 1) * nb]);
    }
    Ok(Tensor {
        shape: vec![m, na + nb],
        data,
    })
}

/// Per-row sums of an `m×n` matrix, as an `m×1` column.
pub fn row_sums(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.as_matrix_dims("row_sums")?;
    let data = (0..m)
        .map(|i| a.data[i * n..(i + 1) * n].iter().sum())
        .collect();
    Ok(Tensor {
        shape: vec![m, 1],
        data,
    })
}

pub(crate) const SOFTPLUS_LINEAR_THRESHOLD: f64 = 30.0;

/// Overflow-safe `ln(1 + e^x)`.
pub fn softplus_scalar(x: f64) -> f64 {
    if x > SOFTPLUS_LINEAR_THRESHOLD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: &Tensor) -> Tensor {
    x.map(softplus_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_matrix(rng: &mut Xoshiro256PlusPlus, m: usize, n: usize) -> Tensor {
        let data = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(m, n, data).unwrap()
    }

    fn triple_loop(a: &Tensor, b: &Tensor) -> Vec<f64> {
        let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let eye = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let col = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(matmul(&eye, &col).unwrap().data(), &[3.0, 4.0]);
        let a = Tensor::matrix(1, 1, vec![2.0]).unwrap();
        let b = Tensor::matrix(1, 1, vec![0.5]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[1.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(11);
        let a = random_matrix(&mut rng, 5, 4);
        let b = random_matrix(&mut rng, 4, 3);
        let got = matmul(&a, &b).unwrap();
        for (x, y) in got.data().iter().zip(triple_loop(&a, &b)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn matmul_associative() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(5);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 3, 4);
            let b = random_matrix(&mut rng, 4, 5);
            let c = random_matrix(&mut rng, 5, 2);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            for (x, y) in left.data().iter().zip(right.data()) {
                assert!((x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0));
            }
        }
    }

    #[test]
    fn transposed_products_agree_with_matmul() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let a = random_matrix(&mut rng, 4, 3);
        let b = random_matrix(&mut rng, 5, 3);
        let bt = Tensor::matrix(
            3,
            5,
            (0..15).map(|i| b.data()[(i % 5) * 3 + i / 5]).collect(),
        )
        .unwrap();
        let direct = matmul(&a, &bt).unwrap();
        let fused = matmul_bt(&a, &b).unwrap();
        for (x, y) in direct.data().iter().zip(fused.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        let c = random_matrix(&mut rng, 4, 2);
        let at = Tensor::matrix(
            3,
            4,
            (0..12).map(|i| a.data()[(i % 4) * 3 + i / 4]).collect(),
        )
        .unwrap();
        let direct = matmul(&at, &c).unwrap();
        let fused = matmul_at(&a, &c).unwrap();
        for (x, y) in direct.data().iter().zip(fused.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_values() {
        assert!((softplus_scalar(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus_scalar(100.0) - 100.0).abs() < 1e-9);
        let tiny = softplus_scalar(-100.0);
        assert!(tiny > 0.0 && (tiny - 3.720075976020836e-44).abs() < 1e-55);
    }

    #[test]
    fn softplus_monotone_nonnegative() {
        let mut prev = -1.0;
        for i in -2000..2000 {
            let x = i as f64 * 0.05;
            let y = softplus_scalar(x);
            assert!(y >= 0.0 && y >= prev);
            prev = y;
        }
        assert!((softplus_scalar(60.0) - 60.0).abs() < 1e-20);
    }

    #[test]
    fn tensor_rejects_bad_length() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }
}
