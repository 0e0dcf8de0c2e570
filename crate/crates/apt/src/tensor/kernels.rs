//! Raw dense kernels shared by the tape's forward and backward passes.
//! All matrices are row-major slices; callers own shape checking.

use super::Scalar;

/// out(m,n) += a(m,k) * b(k,n)
pub fn matmul_nn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// out(m,n) += a(m,k) * b(n,k)^T
pub fn matmul_nt<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = F::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                s = s + av * bv;
            }
            *o = *o + s;
        }
    }
}

/// out(m,n) += a(p,m)^T * b(p,n)
pub fn matmul_tn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], p: usize, m: usize, n: usize) {
    for r in 0..p {
        let arow = &a[r * m..(r + 1) * m];
        let brow = &b[r * n..(r + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

/// log(sum(exp(row))) with the max subtracted for stability.
pub fn logsumexp<F: Scalar>(row: &[F]) -> F {
    let mx = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for &v in row {
        s = s + (v - mx).exp();
    }
    mx + s.ln()
}

/// Numerically stable log(1 + exp(x)).
pub fn softplus<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid.
pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub const GELU_COEFF: f64 = 0.044_715;

/// Tanh-approximation gelu.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = super::sc::<F>((2.0 / std::f64::consts::PI).sqrt());
    let k = super::sc::<F>(GELU_COEFF);
    let half = super::sc::<F>(0.5);
    let inner = c * (x + k * x * x * x);
    half * x * (F::one() + inner.tanh())
}

/// d gelu / dx for the tanh approximation.
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = super::sc::<F>((2.0 / std::f64::consts::PI).sqrt());
    let k = super::sc::<F>(GELU_COEFF);
    let half = super::sc::<F>(0.5);
    let three = super::sc::<F>(3.0);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let d_inner = c * (F::one() + three * k * x * x);
    half * (F::one() + t) + half * x * (F::one() - t * t) * d_inner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_nn_matches_hand_product() {
        // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut out = [0.0; 4];
        matmul_nn(&a, &b, &mut out, 2, 2, 2);
        assert_eq!(out, [19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_nt_matches_nn_on_transposed_operand() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 3.0]; // 2x3, used as 3x2 transposed
        let mut nt = [0.0; 4];
        matmul_nt(&a, &b, &mut nt, 2, 3, 2);
        let bt = [1.0, 2.0, 0.5, 0.0, -1.0, 3.0]; // explicit 3x2
        let mut nn = [0.0; 4];
        matmul_nn(&a, &bt, &mut nn, 2, 3, 2);
        assert_eq!(nt, nn);
    }

    #[test]
    fn matmul_tn_matches_explicit_transpose() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 3x2, transposed to 2x3
        let b = [1.0, -1.0, 2.0, 0.5, 0.0, 1.0]; // 3x2
        let mut tn = [0.0; 4];
        matmul_tn(&a, &b, &mut tn, 3, 2, 2);
        let at = [1.0, 3.0, 5.0, 2.0, 4.0, 6.0]; // 2x3
        let mut nn = [0.0; 4];
        matmul_nn(&at, &b, &mut nn, 2, 3, 2);
        assert_eq!(tn, nn);
    }

    #[test]
    fn logsumexp_handles_large_magnitudes() {
        let row = [1000.0f64, 1000.0];
        let got = logsumexp(&row);
        assert!((got - (1000.0 + 2.0f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(100.0f64) - 100.0).abs() < 1e-9);
        assert!(softplus(-100.0f64) < 1e-40);
        assert!((softplus(0.0f64) - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gelu_grad_matches_finite_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.3, 2.5] {
            let e = 1e-6;
            let num = (gelu(x + e) - gelu(x - e)) / (2.0 * e);
            assert!((gelu_grad(x) - num).abs() < 1e-8, "x={x}");
        }
    }
}
