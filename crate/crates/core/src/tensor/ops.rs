use serde::{Deserialize, Serialize};

use super::{Matrix, Scalar, TensorError};

/// sqrt(2 / pi), the constant in the tanh approximation of GELU.
pub const GELU_TANH_COEFF: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn finite_or<T: Scalar>(m: Matrix<T>, op: &'static str) -> Result<Matrix<T>, TensorError> {
    if m.is_finite() {
        Ok(m)
    } else {
        Err(TensorError::NonFinite { op })
    }
}

/// `a · b`. Loop order is i-k-j; each output element accumulates its terms in
/// increasing `k`, so the result matches a naive triple loop bit for bit.
pub fn matmul<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
    if a.cols() != b.rows() {
        return Err(TensorError::DimMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Matrix::zeros(n, m);
    let bs = b.as_slice();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = &bs[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    finite_or(out, "matmul")
}

/// `a · bᵀ`.
pub fn matmul_transb<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
    if a.cols() != b.cols() {
        return Err(TensorError::DimMismatch {
            op: "matmul_transb",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let arow = a.row(i);
        for j in 0..b.rows() {
            out.set(i, j, dot(arow, b.row(j)));
        }
    }
    finite_or(out, "matmul_transb")
}

/// `aᵀ · b`.
pub fn matmul_transa<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
    if a.rows() != b.rows() {
        return Err(TensorError::DimMismatch {
            op: "matmul_transa",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = Matrix::zeros(a.cols(), b.cols());
    let m = b.cols();
    for r in 0..a.rows() {
        let arow = a.row(r);
        let brow = b.row(r);
        let os = out.as_mut_slice();
        for (i, &av) in arow.iter().enumerate() {
            for (o, &bv) in os[i * m..(i + 1) * m].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    finite_or(out, "matmul_transa")
}

/// Accumulates `aᵀ · b` into `acc` (gradient accumulation for weights).
pub fn matmul_transa_acc<T: Scalar>(
    acc: &mut Matrix<T>,
    a: &Matrix<T>,
    b: &Matrix<T>,
) -> Result<(), TensorError> {
    let prod = matmul_transa(a, b)?;
    acc.add_assign(&prod)
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Softmax of a slice in place, with max subtraction.
pub fn softmax_in_place<T: Scalar>(xs: &mut [T]) -> Result<(), TensorError> {
    if xs.is_empty() {
        return Err(TensorError::Empty { op: "softmax" });
    }
    if xs.iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFiniteInput { op: "softmax" });
    }
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    if !max.is_finite() {
        return Err(TensorError::NonFiniteInput { op: "softmax" });
    }
    let mut sum = T::zero();
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in xs.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// Row-wise softmax.
pub fn softmax_rows<T: Scalar>(a: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
    if a.is_empty() {
        return Err(TensorError::Empty { op: "softmax_rows" });
    }
    let mut out = a.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r))?;
    }
    Ok(out)
}

/// Log-softmax of a slice into a new vector.
pub fn log_softmax<T: Scalar>(xs: &[T]) -> Result<Vec<T>, TensorError> {
    if xs.is_empty() {
        return Err(TensorError::Empty { op: "log_softmax" });
    }
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFiniteInput { op: "log_softmax" });
    }
    let max = xs.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let sum: T = xs.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    Ok(xs.iter().map(|&v| v - lse).collect())
}

/// GELU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_TANH_COEFF);
    let inner = c * (x + T::of(GELU_CUBIC) * x * x * x);
    T::of(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_TANH_COEFF);
    let k = T::of(GELU_CUBIC);
    let t = (c * (x + k * x * x * x)).tanh();
    let half = T::of(0.5);
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn relu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

/// Element-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Silu,
    Gelu,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => silu(x),
            Activation::Gelu => gelu(x),
            Activation::Relu => relu(x),
        }
    }

    #[inline]
    pub fn grad<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Silu => silu_grad(x),
            Activation::Gelu => gelu_grad(x),
            Activation::Relu => relu_grad(x),
        }
    }

    pub fn apply_matrix<T: Scalar>(self, m: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
        let mut out = m.clone();
        for v in out.as_mut_slice() {
            *v = self.apply(*v);
        }
        finite_or(out, "activation")
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Silu => 0,
            Activation::Gelu => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Gelu),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// `out[i][j] = v[j] · m[i][j]`.
pub fn elementwise_scale_rows<T: Scalar>(m: &Matrix<T>, v: &[T]) -> Result<Matrix<T>, TensorError> {
    let mut out = m.clone();
    scale_rows_in_place(&mut out, v)?;
    Ok(out)
}

/// In-place form of [`elementwise_scale_rows`].
pub fn scale_rows_in_place<T: Scalar>(m: &mut Matrix<T>, v: &[T]) -> Result<(), TensorError> {
    if v.len() != m.cols() {
        return Err(TensorError::LengthMismatch {
            op: "scale_rows",
            expected: m.cols(),
            got: v.len(),
        });
    }
    for r in 0..m.rows() {
        for (x, &s) in m.row_mut(r).iter_mut().zip(v) {
            *x *= s;
        }
    }
    if m.is_finite() {
        Ok(())
    } else {
        Err(TensorError::NonFinite { op: "scale_rows" })
    }
}

/// Column sums of `a ⊙ b` (gradient of a broadcast row scaling).
pub fn column_sum_of_product<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Vec<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::DimMismatch {
            op: "column_sum_of_product",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = vec![T::zero(); a.cols()];
    for r in 0..a.rows() {
        for ((o, &x), &y) in out.iter_mut().zip(a.row(r)).zip(b.row(r)) {
            *o += x * y;
        }
    }
    Ok(out)
}

/// Element-wise product.
pub fn hadamard<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::DimMismatch {
            op: "hadamard",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut out = a.clone();
    for (o, &y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *o *= y;
    }
    finite_or(out, "hadamard")
}

#[cfg(test)]
mod tests {
    use super::super::Rng;
    use super::*;

    fn triple_loop(a: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_identity() {
        let i = Matrix::<f64>::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let b = Matrix::<f64>::from_rows(&[&[3.0, 4.0], &[5.0, 6.0]]);
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn matmul_row_by_column() {
        let a = Matrix::<f64>::from_rows(&[&[1.0, 2.0]]);
        let b = Matrix::<f64>::from_rows(&[&[3.0], &[4.0]]);
        assert_eq!(matmul(&a, &b).unwrap(), Matrix::from_rows(&[&[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = Rng::new(3);
        let a = Matrix::<f64>::random_normal(7, 5, 1.0, &mut rng);
        let b = Matrix::<f64>::random_normal(5, 3, 1.0, &mut rng);
        assert!(matmul(&a, &b).unwrap().bit_eq(&triple_loop(&a, &b)));
    }

    #[test]
    fn transposed_variants_agree() {
        let mut rng = Rng::new(4);
        let a = Matrix::<f64>::random_normal(4, 6, 1.0, &mut rng);
        let b = Matrix::<f64>::random_normal(3, 6, 1.0, &mut rng);
        let c = Matrix::<f64>::random_normal(4, 2, 1.0, &mut rng);
        let bt = matmul_transb(&a, &b).unwrap();
        let reference = triple_loop(&a, &b.transpose());
        for (x, y) in bt.as_slice().iter().zip(reference.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
        let at = matmul_transa(&a, &c).unwrap();
        let reference = triple_loop(&a.transpose(), &c);
        for (x, y) in at.as_slice().iter().zip(reference.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_dim_mismatch() {
        let a = Matrix::<f64>::zeros(2, 3);
        let b = Matrix::<f64>::zeros(2, 3);
        assert!(matches!(matmul(&a, &b), Err(TensorError::DimMismatch { .. })));
    }

    #[test]
    fn matmul_overflow_is_error() {
        let a = Matrix::<f32>::from_rows(&[&[1e30, 1e30]]);
        let b = Matrix::<f32>::from_rows(&[&[1e30], &[1e30]]);
        assert_eq!(matmul(&a, &b), Err(TensorError::NonFinite { op: "matmul" }));
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let s = softmax_rows(&Matrix::<f64>::from_rows(&[&[0.0, 0.0]])).unwrap();
        assert_eq!(s.as_slice(), &[0.5, 0.5]);
        let s = softmax_rows(&Matrix::<f32>::from_rows(&[&[1000.0, 0.0]])).unwrap();
        assert!((s.get(0, 0) - 1.0).abs() < 1e-6);
        assert!(s.get(0, 1) >= 0.0 && s.get(0, 1) < 1e-6);
        assert!(s.is_finite());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(11);
        let a = Matrix::<f64>::random_normal(4, 4, 3.0, &mut rng);
        let s = softmax_rows(&a).unwrap();
        for r in 0..4 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let s32 = softmax_rows(&a.cast::<f32>()).unwrap();
        for r in 0..4 {
            let sum: f32 = s32.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let a = Matrix::<f64>::from_rows(&[&[f64::NAN, 0.0]]);
        assert!(matches!(softmax_rows(&a), Err(TensorError::NonFiniteInput { .. })));
    }

    #[test]
    fn activations_at_zero() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert_eq!(silu(0.0f64), 0.0);
        assert_eq!(relu(-1.0f64), 0.0);
        assert_eq!(relu(2.5f64), 2.5);
    }

    #[test]
    fn gelu_at_one_matches_high_precision_value() {
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715)), evaluated with mpmath at 50 digits.
        let expected = 0.841_191_990_608_276_7_f64;
        assert!((gelu(1.0f64) - expected).abs() < 1e-15, "{}", gelu(1.0f64));
        assert!((GELU_TANH_COEFF - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-16);
    }

    #[test]
    fn activation_grads_match_central_differences() {
        for act in [Activation::Silu, Activation::Gelu] {
            for &x in &[-2.3f64, -0.4, 0.0, 0.7, 3.1] {
                let h = 1e-6;
                let fd = (act.apply(x + h) - act.apply(x - h)) / (2.0 * h);
                assert!((fd - act.grad(x)).abs() < 1e-8, "{act:?} at {x}");
            }
        }
    }

    #[test]
    fn scale_rows_cases() {
        let m = Matrix::<f64>::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(elementwise_scale_rows(&m, &[1.0, 1.0]).unwrap(), m);
        assert_eq!(
            elementwise_scale_rows(&m, &[2.0, 0.0]).unwrap(),
            Matrix::from_rows(&[&[2.0, 0.0], &[6.0, 0.0]])
        );
        assert!(matches!(
            elementwise_scale_rows(&m, &[1.0]),
            Err(TensorError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn scale_rows_matches_loop() {
        let mut rng = Rng::new(5);
        let m = Matrix::<f64>::random_normal(5, 6, 1.0, &mut rng);
        let v: Vec<f64> = (0..6).map(|_| rng.normal(1.0)).collect();
        let out = elementwise_scale_rows(&m, &v).unwrap();
        for i in 0..5 {
            for j in 0..6 {
                assert_eq!(out.get(i, j).to_bits(), (v[j] * m.get(i, j)).to_bits());
            }
        }
    }

    #[test]
    fn log_softmax_consistent_with_softmax() {
        let xs = [0.3f64, -1.2, 2.0, 0.0];
        let ls = log_softmax(&xs).unwrap();
        let mut s = xs;
        softmax_in_place(&mut s).unwrap();
        for (a, b) in ls.iter().zip(s.iter()) {
            assert!((a.exp() - b).abs() < 1e-14);
        }
    }
}
