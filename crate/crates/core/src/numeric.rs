//! Dense float64 linear algebra and the Adam optimizer.
//!
//! Matrices are `ndarray::Array2<f64>` in row-major layout. The Cholesky
//! factorization is blocked (panel factor + GEMM trailing update) so that
//! scene-scale Gram matrices factor at matrix-multiply speed, and it retries
//! with escalating diagonal jitter when the input is only semi-definite.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Cholesky block size. Diagonal blocks are factored unblocked; the trailing
/// update runs through GEMM.
const CHOL_BLOCK: usize = 96;

/// Number of retries after the initial jitter attempt, each multiplying the
/// jitter by 10.
const JITTER_RETRIES: usize = 4;

/// Relative base jitter: `1e-6 x mean(|diag|)`.
const JITTER_REL: f64 = 1e-6;

/// Lower Cholesky factor of `a + jitter * I`, together with the jitter that
/// was actually needed.
#[derive(Debug, Clone)]
pub struct JitterCholesky {
    pub l: Array2<f64>,
    pub jitter: f64,
}

/// Factor a symmetric positive (semi-)definite matrix as `L * L^T = a + jitter * I`.
///
/// The first attempt uses `jitter0` (default `1e-6 x mean(|diag|)`; zero is
/// allowed and means "try without jitter first"). Each retry multiplies the
/// jitter by 10, up to four retries, after which the error reports the last
/// jitter tried.
pub fn cholesky_jittered(a: &ArrayView2<f64>, jitter0: Option<f64>) -> Result<JitterCholesky> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::ShapeError(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut diag_mean = 0.0;
    for i in 0..n {
        let d = a[[i, i]];
        if !d.is_finite() {
            return Err(Error::ShapeError("cholesky input has non-finite entries".into()));
        }
        diag_mean += d.abs();
    }
    diag_mean /= n.max(1) as f64;
    let base = if diag_mean > 0.0 { JITTER_REL * diag_mean } else { JITTER_REL };

    let mut jitter = jitter0.unwrap_or(base);
    for attempt in 0..=JITTER_RETRIES {
        if let Some(l) = try_cholesky(a, jitter) {
            return Ok(JitterCholesky { l, jitter });
        }
        if attempt == JITTER_RETRIES {
            break;
        }
        jitter = if jitter == 0.0 { base } else { jitter * 10.0 };
    }
    Err(Error::NotPositiveDefinite { retries: JITTER_RETRIES, last_jitter: jitter })
}

/// One factorization attempt; `None` signals a non-positive pivot.
fn try_cholesky(a: &ArrayView2<f64>, jitter: f64) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = a.to_owned();
    if jitter != 0.0 {
        for i in 0..n {
            l[[i, i]] += jitter;
        }
    }

    let mut k = 0;
    while k < n {
        let kb = CHOL_BLOCK.min(n - k);

        // Factor the diagonal block in place.
        if !chol_unblocked(&mut l, k, kb) {
            return None;
        }

        if k + kb < n {
            // Panel solve: L21 = A21 * L11^{-T}, row by row of the panel.
            for r in k + kb..n {
                for j in k..k + kb {
                    let mut x = l[[r, j]];
                    for i in k..j {
                        x -= l[[r, i]] * l[[j, i]];
                    }
                    l[[r, j]] = x / l[[j, j]];
                }
            }
            // Trailing update: A22 -= L21 * L21^T through GEMM.
            let panel = l.slice(s![k + kb.., k..k + kb]).to_owned();
            let mut trailing = l.slice_mut(s![k + kb.., k + kb..]);
            general_mat_mul(-1.0, &panel, &panel.t(), 1.0, &mut trailing);
        }
        k += kb;
    }

    // Zero the strict upper triangle so the factor is cleanly lower.
    for i in 0..n {
        for j in i + 1..n {
            l[[i, j]] = 0.0;
        }
    }
    Some(l)
}

/// Unblocked Cholesky of the `kb x kb` diagonal block starting at `(k, k)`.
fn chol_unblocked(l: &mut Array2<f64>, k: usize, kb: usize) -> bool {
    for j in k..k + kb {
        let mut d = l[[j, j]];
        for i in k..j {
            let v = l[[j, i]];
            d -= v * v;
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let dj = d.sqrt();
        l[[j, j]] = dj;
        for r in j + 1..k + kb {
            let mut x = l[[r, j]];
            for i in k..j {
                x -= l[[r, i]] * l[[j, i]];
            }
            l[[r, j]] = x / dj;
        }
    }
    true
}

/// Solve `L x = b` (or `L^T x = b` when `transposed`) for a lower-triangular
/// `l` with nonzero diagonal. `b` may carry many right-hand sides as columns.
pub fn tri_solve(l: &ArrayView2<f64>, b: &ArrayView2<f64>, transposed: bool) -> Result<Array2<f64>> {
    let n = l.nrows();
    if l.ncols() != n {
        return Err(Error::ShapeError(format!(
            "triangular factor must be square, got {}x{}",
            n,
            l.ncols()
        )));
    }
    if b.nrows() != n {
        return Err(Error::ShapeError(format!(
            "rhs has {} rows, factor is {}x{}",
            b.nrows(),
            n,
            n
        )));
    }
    for i in 0..n {
        if l[[i, i]] == 0.0 {
            return Err(Error::SingularMatrix(i));
        }
    }
    let k = b.ncols();
    let mut x = b.to_owned();
    let xs = x.as_slice_mut().expect("row-major rhs");

    if !transposed {
        // Forward substitution, whole rows at a time so the inner op is a
        // contiguous axpy across right-hand sides.
        for i in 0..n {
            let (prev, cur) = xs.split_at_mut(i * k);
            let xi = &mut cur[..k];
            for j in 0..i {
                let lij = l[[i, j]];
                if lij != 0.0 {
                    let xj = &prev[j * k..(j + 1) * k];
                    for (a, b) in xi.iter_mut().zip(xj) {
                        *a -= lij * b;
                    }
                }
            }
            let d = l[[i, i]];
            for a in xi.iter_mut() {
                *a /= d;
            }
        }
    } else {
        // Back substitution against L^T.
        for i in (0..n).rev() {
            let (head, tail) = xs.split_at_mut((i + 1) * k);
            let xi = &mut head[i * k..];
            for j in i + 1..n {
                let lji = l[[j, i]];
                if lji != 0.0 {
                    let xj = &tail[(j - i - 1) * k..(j - i) * k];
                    for (a, b) in xi.iter_mut().zip(xj) {
                        *a -= lji * b;
                    }
                }
            }
            let d = l[[i, i]];
            for a in xi.iter_mut() {
                *a /= d;
            }
        }
    }
    Ok(x)
}

/// Solve `(L L^T) x = b` given the lower factor.
pub fn cho_solve(l: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let y = tri_solve(l, b, false)?;
    tri_solve(l, &y.view(), true)
}

/// Dense inverse of `L L^T` by solving against the identity.
pub fn cho_inverse(l: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = l.nrows();
    let eye = Array2::<f64>::eye(n);
    cho_solve(l, &eye.view())
}

/// `log det (L L^T) = 2 * sum(log diag L)`.
pub fn log_det_from_chol(l: &ArrayView2<f64>) -> f64 {
    (0..l.nrows()).map(|i| l[[i, i]].ln()).sum::<f64>() * 2.0
}

/// Adam optimizer state over a flat parameter vector.
///
/// Coefficients are fixed at the conventional `(0.9, 0.999, 1e-8)`; the
/// learning rate is public so schedules can swap it between steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl AdamState {
    pub fn new(dim: usize, lr: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// One Adam update with bias correction, in place.
///
/// A non-finite gradient rejects the whole update and leaves parameters and
/// state untouched. An all-zero gradient advances the step counter and decays
/// the moments but leaves the parameters exactly where they are, so a model
/// that reached zero loss stays put.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeError(format!(
            "adam: params {} grads {} state {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalDivergence("non-finite gradient in adam step".into()));
    }

    state.step += 1;
    let all_zero = grads.iter().all(|&g| g == 0.0);
    let b1 = state.beta1;
    let b2 = state.beta2;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);

    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        if !all_zero {
            let mhat = state.m[i] / c1;
            let vhat = state.v[i] / c2;
            params[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn cholesky_identity_no_jitter() {
        let a = Array2::<f64>::eye(3);
        let c = cholesky_jittered(&a.view(), Some(0.0)).unwrap();
        assert_eq!(c.jitter, 0.0);
        assert_abs_diff_eq!(c.l, Array2::eye(3), epsilon = 0.0);
    }

    #[test]
    fn cholesky_hand_2x2() {
        // [[4,2],[2,3]] factors as [[2,0],[1,sqrt(2)]].
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let c = cholesky_jittered(&a.view(), Some(0.0)).unwrap();
        assert_abs_diff_eq!(c.l[[0, 0]], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.l[[1, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.l[[1, 1]], 2.0_f64.sqrt(), epsilon = 1e-15);
        assert_eq!(c.l[[0, 1]], 0.0);
        let rec = c.l.dot(&c.l.t());
        assert_abs_diff_eq!(rec, a, epsilon = 1e-14);
    }

    #[test]
    fn cholesky_rank_one_needs_jitter() {
        let a = array![[1.0, 1.0], [1.0, 1.0]];
        let c = cholesky_jittered(&a.view(), None).unwrap();
        assert!(c.jitter > 0.0);
        let rec = c.l.dot(&c.l.t());
        for i in 0..2 {
            for j in 0..2 {
                let target = a[[i, j]] + if i == j { c.jitter } else { 0.0 };
                assert_abs_diff_eq!(rec[[i, j]], target, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_negative_definite() {
        let a = array![[-1.0, 0.0], [0.0, -1.0]];
        match cholesky_jittered(&a.view(), Some(0.0)) {
            Err(Error::NotPositiveDefinite { .. }) => {}
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn blocked_matches_unblocked_on_random_spd() {
        // 200x200 exercises the blocked path (block size 96).
        let n = 200;
        let mut rng = crate::rng::RngSeed::new(11).rng();
        let b = Array2::from_shape_fn((n, n), |_| rand::Rng::random_range(&mut rng, -1.0..1.0));
        let a = b.dot(&b.t()) + Array2::<f64>::eye(n) * 0.5;
        let c = cholesky_jittered(&a.view(), Some(0.0)).unwrap();
        let rec = c.l.dot(&c.l.t());
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let err = (&rec - &a).iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(err < 1e-10 * scale, "reconstruction error {err} vs scale {scale}");
    }

    #[test]
    fn tri_solve_identity_and_hand_case() {
        let eye = Array2::<f64>::eye(3);
        let b = array![[1.0], [2.0], [3.0]];
        let x = tri_solve(&eye.view(), &b.view(), false).unwrap();
        assert_abs_diff_eq!(x, b, epsilon = 0.0);

        // L=[[2,0],[1,1]], b=[2,3] -> x=[1,2] by forward substitution.
        let l = array![[2.0, 0.0], [1.0, 1.0]];
        let b = array![[2.0], [3.0]];
        let x = tri_solve(&l.view(), &b.view(), false).unwrap();
        assert_abs_diff_eq!(x[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(x[[1, 0]], 2.0, epsilon = 1e-15);
    }

    #[test]
    fn tri_solve_round_trip() {
        let l = array![[2.0, 0.0, 0.0], [0.5, 1.5, 0.0], [-1.0, 0.25, 3.0]];
        let b = array![[1.0, -2.0], [0.5, 4.0], [2.0, 0.0]];
        let x = tri_solve(&l.view(), &b.view(), false).unwrap();
        let back = l.dot(&x);
        assert_abs_diff_eq!(back, b, epsilon = 1e-12);

        let xt = tri_solve(&l.view(), &b.view(), true).unwrap();
        let back_t = l.t().dot(&xt);
        assert_abs_diff_eq!(back_t, b, epsilon = 1e-12);
    }

    #[test]
    fn tri_solve_zero_diagonal_is_singular() {
        let l = array![[1.0, 0.0], [2.0, 0.0]];
        let b = array![[1.0], [1.0]];
        match tri_solve(&l.view(), &b.view(), false) {
            Err(Error::SingularMatrix(1)) => {}
            other => panic!("expected SingularMatrix(1), got {other:?}"),
        }
    }

    #[test]
    fn adam_zero_grad_keeps_params() {
        let mut p = vec![1.0, -2.0];
        let mut st = AdamState::new(2, 0.1);
        // seed some momentum first
        adam_step(&mut p, &[0.3, -0.1], &mut st).unwrap();
        let snapshot = p.clone();
        adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, snapshot);
        assert_eq!(st.step, 2);
    }

    #[test]
    fn adam_first_step_matches_hand_recurrence() {
        // g=1, lr=0.01: bias-corrected first step is lr*g/(sqrt(g^2)+eps).
        let mut p = vec![0.5];
        let mut st = AdamState::new(1, 0.01);
        adam_step(&mut p, &[1.0], &mut st).unwrap();
        let expected = 0.5 - 0.009999999900000007;
        assert_abs_diff_eq!(p[0], expected, epsilon = 1e-15);
    }

    #[test]
    fn adam_identical_params_get_identical_updates() {
        let mut p = vec![0.7, 0.7];
        let mut st = AdamState::new(2, 0.05);
        adam_step(&mut p, &[0.2, 0.2], &mut st).unwrap();
        assert_eq!(p[0], p[1]);
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut p = vec![1.0];
        let mut st = AdamState::new(1, 0.01);
        let before = p.clone();
        match adam_step(&mut p, &[f64::NAN], &mut st) {
            Err(Error::NumericalDivergence(_)) => {}
            other => panic!("expected NumericalDivergence, got {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }
}
