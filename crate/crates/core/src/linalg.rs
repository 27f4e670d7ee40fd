//! Dense matrix utilities for the AR(d) algebra and the exact identity checks.
//!
//! Matrices are `nalgebra::DMatrix<f64>`. Symmetric spectra come from a
//! cyclic Jacobi solver and polynomial roots from Durand–Kerner; companion
//! spectra always go through the root finder.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{ensure_dim, ensure_finite, Error, Result};

pub type Matrix = DMatrix<f64>;

/// Toeplitz matrix with `t[i][j] = m[i - j]`, where `m` lists
/// `(m_{-(d-1)}, ..., m_0, ..., m_{d-1})`.
pub fn toeplitz_from_vector(m: &[f64]) -> Result<Matrix> {
    if m.is_empty() || m.len() % 2 == 0 {
        return Err(Error::InvalidParameter(format!(
            "toeplitz vector must have odd length 2d-1, got {}",
            m.len()
        )));
    }
    let d = m.len().div_ceil(2);
    Ok(Matrix::from_fn(d, d, |i, j| m[i + d - 1 - j]))
}

/// Upper shift matrix: ones on the first superdiagonal.
pub fn shift_matrix(d: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
}

/// `S^power`; `S^0 = I` and `S^d = 0`.
pub fn shift_power(d: usize, power: usize) -> Matrix {
    Matrix::from_fn(d, d, |i, j| if j == i + power { 1.0 } else { 0.0 })
}

/// `A(θ) = T((-θ_{d-1}, ..., -θ_1, 1, 0, ..., 0))`, unit upper triangular.
pub fn ar_a_matrix(theta: &[f64]) -> Matrix {
    let d = theta.len();
    let mut m = vec![0.0; 2 * d - 1];
    for i in 1..d {
        m[d - 1 - i] = -theta[i - 1];
    }
    m[d - 1] = 1.0;
    toeplitz_from_vector(&m).expect("odd length by construction")
}

/// `B(θ) = T((0, ..., 0, θ_d, ..., θ_1))`, lower triangular.
pub fn ar_b_matrix(theta: &[f64]) -> Matrix {
    let d = theta.len();
    let mut m = vec![0.0; 2 * d - 1];
    for i in 0..d {
        m[d - 1 + i] = theta[d - 1 - i];
    }
    toeplitz_from_vector(&m).expect("odd length by construction")
}

/// Solves `A x = b` for unit upper triangular `A` by back-substitution.
pub fn solve_unit_upper(a: &Matrix, b: &[f64]) -> Vec<f64> {
    let d = b.len();
    let mut x = b.to_vec();
    for i in (0..d).rev() {
        let mut s = x[i];
        for j in i + 1..d {
            s -= a[(i, j)] * x[j];
        }
        x[i] = s;
    }
    x
}

/// Inverse of a unit upper triangular matrix, column by column.
pub fn unit_upper_inverse(a: &Matrix) -> Matrix {
    let d = a.nrows();
    let mut inv = Matrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = solve_unit_upper(a, &e);
        for i in 0..d {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

/// Companion matrix: first row `θ`, ones on the subdiagonal.
pub fn companion_matrix(theta: &[f64]) -> Matrix {
    let d = theta.len();
    Matrix::from_fn(d, d, |i, j| {
        if i == 0 {
            theta[j]
        } else if j + 1 == i {
            1.0
        } else {
            0.0
        }
    })
}

/// Coefficients `c_1..c_n` of `det(λI − M) = λ^n + c_1 λ^{n−1} + ... + c_n`
/// by the Faddeev–LeVerrier recursion.
pub fn characteristic_polynomial(m: &Matrix) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = Vec::with_capacity(n);
    let mut mk = Matrix::zeros(n, n);
    let mut c_prev = 1.0;
    for k in 1..=n {
        mk = m * &mk + Matrix::identity(n, n) * c_prev;
        let c = -(m * &mk).trace() / k as f64;
        coeffs.push(c);
        c_prev = c;
    }
    coeffs
}

/// Roots of the monic polynomial `z^n + c_1 z^{n−1} + ... + c_n` by
/// Durand–Kerner iteration (tolerance 1e-12, at most 200 sweeps), started
/// on a circle of radius `1 + max|c_i|`.
pub fn durand_kerner(monic: &[f64]) -> Result<Vec<Complex<f64>>> {
    ensure_finite(monic, "polynomial coefficients")?;
    let n = monic.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let eval = |z: Complex<f64>| {
        monic
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, &c| acc * z + c)
    };
    // Rounding-level residual scale: the same Horner sum with |c_i| and |z|.
    let scale = |z: Complex<f64>| {
        let r = z.norm();
        monic.iter().fold(1.0, |acc, &c| acc * r + c.abs())
    };
    let radius = 1.0 + monic.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
    let mut z: Vec<Complex<f64>> = (0..n)
        .map(|k| Complex::from_polar(radius, std::f64::consts::TAU * k as f64 / n as f64 + 0.4))
        .collect();
    const TOL: f64 = 1e-12;
    const MAX_SWEEPS: usize = 200;
    for _ in 0..MAX_SWEEPS {
        let mut max_step = 0.0_f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom *= z[i] - z[j];
                }
            }
            if denom.norm() == 0.0 {
                denom = Complex::new(f64::EPSILON, 0.0);
            }
            let step = eval(z[i]) / denom;
            z[i] -= step;
            max_step = max_step.max(step.norm() / z[i].norm().max(1.0));
        }
        let at_rounding = z
            .iter()
            .all(|&zi| eval(zi).norm() <= 8.0 * f64::EPSILON * scale(zi) * n as f64);
        if max_step < TOL || (at_rounding && max_step < 1e-8) {
            return Ok(z);
        }
    }
    let residual = z.iter().fold(0.0_f64, |m, &zi| m.max(eval(zi).norm()));
    Err(Error::RootFinder {
        sweeps: MAX_SWEEPS,
        residual,
    })
}

/// Roots of the autoregressive polynomial `t(z) = 1 − Σ θ_i z^i`, solved
/// directly (not through the reversed polynomial). Trailing zero
/// coefficients lower the degree.
pub fn ar_polynomial_roots(theta: &[f64]) -> Result<Vec<Complex<f64>>> {
    let Some(m) = theta.iter().rposition(|&t| t != 0.0) else {
        return Ok(Vec::new());
    };
    let lead = -theta[m];
    // t(z) / lead = z^{m+1} + Σ_{j=1}^{m} (−θ_{m+1−j} / lead) z^{m+1−j} + 1/lead
    let mut monic = Vec::with_capacity(m + 1);
    for j in 1..=m {
        monic.push(-theta[m - j] / lead);
    }
    monic.push(1.0 / lead);
    durand_kerner(&monic)
}

/// Spectral radius of `M` from its characteristic polynomial roots.
pub fn spectral_radius_via_charpoly(m: &Matrix) -> Result<f64> {
    let roots = durand_kerner(&characteristic_polynomial(m))?;
    Ok(roots.iter().fold(0.0_f64, |r, z| r.max(z.norm())))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityCheck {
    pub member: bool,
    /// Largest modulus among the reciprocal roots of `t(z, θ)`.
    pub spectral_radius: f64,
    /// Smallest root modulus of `t(z, θ)`; infinite when `t` is constant.
    pub min_root_modulus: f64,
}

/// Membership in `Θ(ρ)`: every root of `t(z, θ)` has modulus at least
/// `1/ρ` (up to 1e-9). Roots come from the reversed polynomial
/// `w^d − θ_1 w^{d−1} − ... − θ_d`, whose roots are `1/z`.
pub fn ar_stability_check(theta: &[f64], rho: f64) -> Result<StabilityCheck> {
    ensure_finite(theta, "AR coefficients")?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidParameter(format!("rho must lie in (0,1), got {rho}")));
    }
    // Exact zero roots (trailing zero coefficients) are deflated first.
    let m = theta.iter().rposition(|&t| t != 0.0).map_or(0, |i| i + 1);
    let reversed: Vec<f64> = theta[..m].iter().map(|t| -t).collect();
    let roots = durand_kerner(&reversed)?;
    let spectral_radius = roots.iter().fold(0.0_f64, |r, w| r.max(w.norm()));
    let min_root_modulus = if spectral_radius == 0.0 {
        f64::INFINITY
    } else {
        1.0 / spectral_radius
    };
    Ok(StabilityCheck {
        member: min_root_modulus >= 1.0 / rho - 1e-9,
        spectral_radius,
        min_root_modulus,
    })
}

/// The set `Θ(ρ)` of AR(d) coefficients whose polynomial has no root in the
/// open disc of radius `1/ρ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRegion {
    pub rho: f64,
    pub d: usize,
}

impl StabilityRegion {
    pub fn new(rho: f64, d: usize) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) || d == 0 {
            return Err(Error::InvalidParameter(format!(
                "stability region needs rho in (0,1) and d >= 1, got rho={rho}, d={d}"
            )));
        }
        Ok(Self { rho, d })
    }

    pub fn contains(&self, theta: &[f64]) -> Result<bool> {
        ensure_dim("stability region", self.d, theta.len())?;
        Ok(ar_stability_check(theta, self.rho)?.member)
    }

    /// Radius `(ρ^{-2} + ... + ρ^{-2d})^{-1/2}` of a Euclidean ball inside
    /// the region. The same radius in the sup norm is not contained for
    /// `d ≥ 2`.
    pub fn inner_radius(&self) -> f64 {
        let s: f64 = (1..=self.d).map(|i| self.rho.powi(-2 * i as i32)).sum();
        s.powf(-0.5)
    }

    /// Sup-norm radius `(1+ρ)^d − 1` of a box containing the region.
    pub fn outer_radius(&self) -> f64 {
        (1.0 + self.rho).powi(self.d as i32) - 1.0
    }

    /// Coefficients of `Π (w − w_j)` for reciprocal roots drawn inside the
    /// disc of radius `ρ`: pairs of conjugates plus one real root when `d`
    /// is odd. Moduli are drawn from `[min_modulus, ρ]`.
    pub fn sample(&self, rng: &mut crate::rng::SplitMix64, min_modulus: f64) -> Vec<f64> {
        let mut poly = vec![Complex::new(1.0, 0.0)];
        let mut remaining = self.d;
        let push_root = |poly: &mut Vec<Complex<f64>>, w: Complex<f64>| {
            let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
            for (i, &c) in poly.iter().enumerate() {
                next[i] += c;
                next[i + 1] -= c * w;
            }
            *poly = next;
        };
        while remaining > 0 {
            let r = min_modulus + (self.rho - min_modulus) * rng.uniform();
            if remaining >= 2 && rng.uniform() < 0.7 {
                let phi = std::f64::consts::PI * rng.uniform();
                let w = Complex::from_polar(r, phi);
                push_root(&mut poly, w);
                push_root(&mut poly, w.conj());
                remaining -= 2;
            } else {
                push_root(&mut poly, Complex::new(r * rng.sign(), 0.0));
                remaining -= 1;
            }
        }
        // w^d + a_1 w^{d-1} + ... + a_d with θ_i = −a_i.
        poly[1..].iter().map(|c| -c.re).collect()
    }
}

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    /// Ascending eigenvalues.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as columns, matching `values`.
    pub vectors: Matrix,
}

/// Cyclic Jacobi iteration until the off-diagonal Frobenius norm drops
/// below `1e-12 · max(1, ‖M‖_F)`.
pub fn sym_eigen(m: &Matrix) -> Result<SymEigen> {
    let n = m.nrows();
    ensure_dim("symmetric eigen-solver", n, m.ncols())?;
    ensure_finite(m.as_slice(), "symmetric matrix")?;
    let mut a = m.clone();
    // Symmetrize exactly so rounding asymmetry never stalls the sweeps.
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
    let mut v = Matrix::identity(n, n);
    let threshold = 1e-12 * a.norm().max(1.0);
    let off = |a: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    let mut sweeps = 0;
    while off(&a) >= threshold {
        sweeps += 1;
        if sweeps > 100 {
            return Err(Error::Precondition(
                "Jacobi eigen-solver did not converge in 100 sweeps".into(),
            ));
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SymEigen { values, vectors })
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    Ok(sym_eigen(m)?.values)
}

/// Symmetric square root `Q diag(√λ) Qᵀ` of an SPD matrix.
pub fn sym_sqrt(m: &Matrix) -> Result<Matrix> {
    let e = sym_eigen(m)?;
    if e.values[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite(e.values[0]));
    }
    let n = m.nrows();
    let d = Matrix::from_diagonal(&DVector::from_iterator(n, e.values.iter().map(|v| v.sqrt())));
    Ok(&e.vectors * d * e.vectors.transpose())
}

/// KL divergence `K(N(μ0,Σ0) ‖ N(μ1,Σ1))` via Cholesky factors.
pub fn kl_gaussians(mu0: &[f64], sigma0: &Matrix, mu1: &[f64], sigma1: &Matrix) -> Result<f64> {
    let d = mu0.len();
    ensure_dim("kl mean", d, mu1.len())?;
    ensure_dim("kl covariance", d, sigma0.nrows())?;
    ensure_dim("kl covariance", d, sigma1.nrows())?;
    let chol0 = sigma0
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(f64::NAN))?;
    let chol1 = sigma1
        .clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite(f64::NAN))?;
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::Dyn>| {
        2.0 * c.l().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    };
    let trace = chol1.solve(sigma0).trace();
    let diff = DVector::from_iterator(d, mu1.iter().zip(mu0).map(|(a, b)| a - b));
    let quad = diff.dot(&chol1.solve(&diff));
    Ok(0.5 * (logdet(&chol1) - logdet(&chol0) + trace - d as f64 + quad))
}

/// Conditional law of one AR(d) batch: `N(A⁻¹B y, σ² A⁻¹A⁻ᵀ)`.
pub fn ard_conditional(theta: &[f64], y: &[f64], sigma: f64) -> (Vec<f64>, Matrix) {
    let a = ar_a_matrix(theta);
    let b = ar_b_matrix(theta);
    let by = &b * DVector::from_column_slice(y);
    let mean = solve_unit_upper(&a, by.as_slice());
    let a_inv = unit_upper_inverse(&a);
    let cov = &a_inv * a_inv.transpose() * (sigma * sigma);
    (mean, cov)
}

/// The matrix `M(θ, Y)` whose quadratic form `½ΔᵀMΔ` equals the KL
/// divergence between the batch conditionals at `θ` and `θ + Δ`.
#[derive(Debug, Clone)]
pub struct ArdQuadraticForm {
    pub m: Matrix,
    pub theta: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma: f64,
}

impl ArdQuadraticForm {
    pub fn quadratic(&self, delta: &[f64]) -> f64 {
        let v = DVector::from_column_slice(delta);
        0.5 * v.dot(&(&self.m * &v))
    }
}

/// `M = VᵀV + σ⁻² WᵀW` with `V = [vect(S^i A⁻¹)]_i` (column-major) and
/// `W = [C_i Y]_i`, `C_i = (S^{d−i})ᵀ + S^i A⁻¹ B`.
pub fn ard_quadratic_matrix(theta: &[f64], y: &[f64], sigma: f64) -> Result<ArdQuadraticForm> {
    let d = theta.len();
    ensure_dim("ard quadratic matrix", d, y.len())?;
    ensure_finite(theta, "theta")?;
    ensure_finite(y, "Y")?;
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let a = ar_a_matrix(theta);
    let b = ar_b_matrix(theta);
    let a_inv = unit_upper_inverse(&a);
    let a_inv_b = &a_inv * &b;
    let yv = DVector::from_column_slice(y);
    let mut v = Matrix::zeros(d * d, d);
    let mut w = Matrix::zeros(d, d);
    for i in 1..=d {
        let si = shift_power(d, i);
        let si_ainv = &si * &a_inv;
        // vect(): column-major, which is nalgebra's storage order.
        for (r, val) in si_ainv.iter().enumerate() {
            v[(r, i - 1)] = *val;
        }
        let ci = shift_power(d, d - i).transpose() + &si * &a_inv_b;
        w.set_column(i - 1, &(ci * &yv));
    }
    let mut m = v.transpose() * &v + w.transpose() * &w / (sigma * sigma);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(ArdQuadraticForm {
        m,
        theta: theta.to_vec(),
        y: y.to_vec(),
        sigma,
    })
}

/// Upper bound `K_p` on `‖M‖_p / ‖M‖_2`: `d^{(p−2)/(2p)}` for `p ≥ 2` and
/// `d^{(2−p)/(2p)}` for `1 ≤ p < 2`; `d^{1/2}` at `p = ∞`.
pub fn k_p(p: f64, d: usize) -> f64 {
    let d = d as f64;
    if p.is_infinite() {
        d.sqrt()
    } else if p >= 2.0 {
        d.powf((p - 2.0) / (2.0 * p))
    } else {
        d.powf((2.0 - p) / (2.0 * p))
    }
}

/// Induced 1-norm (max column sum).
pub fn norm_1(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Induced ∞-norm (max row sum).
pub fn norm_inf(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Spectral norm as the square root of the top eigenvalue of `MᵀM`.
pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    let g = m.transpose() * m;
    let vals = sym_eigenvalues(&g)?;
    Ok(vals.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionEigReport {
    /// `|‖I−γM‖ − (1 − γΛ_1(M))|`
    pub norm_residual: f64,
    /// `|Λ_1(I−γM) − (1 − γΛ_d(M))|`
    pub min_residual: f64,
    /// `|Λ_d(I−γM) − (1 − γΛ_1(M))|`
    pub max_residual: f64,
    /// `0 < Λ_1(I−γM) ≤ Λ_d(I−γM) < 1`
    pub ordering_holds: bool,
    /// `‖M‖_p ≤ K_p Λ_d(M)` for `p ∈ {1, ∞}`
    pub p_norm_holds: bool,
    pub pass: bool,
}

/// Checks the eigenvalue identities for `I − γM` with `M` SPD and
/// `γΛ_d(M) < 1`. Spectra of `M`, `I − γM` and `(I−γM)ᵀ(I−γM)` are
/// computed independently.
pub fn contraction_eig_check(m: &Matrix, gamma: f64) -> Result<ContractionEigReport> {
    const TOL: f64 = 1e-10;
    let d = m.nrows();
    let eig = sym_eigenvalues(m)?;
    let (l1, ld) = (eig[0], eig[d - 1]);
    if l1 <= 0.0 {
        return Err(Error::NotPositiveDefinite(l1));
    }
    if !(gamma > 0.0) || gamma * ld >= 1.0 {
        return Err(Error::Precondition(format!(
            "need 0 < gamma * lambda_max < 1, got {}",
            gamma * ld
        )));
    }
    let r = Matrix::identity(d, d) - m * gamma;
    let r_eig = sym_eigenvalues(&r)?;
    let norm = spectral_norm(&r)?;
    let norm_residual = (norm - (1.0 - gamma * l1)).abs();
    let min_residual = (r_eig[0] - (1.0 - gamma * ld)).abs();
    let max_residual = (r_eig[d - 1] - (1.0 - gamma * l1)).abs();
    let ordering_holds = r_eig[0] > 0.0 && r_eig[0] <= r_eig[d - 1] && r_eig[d - 1] < 1.0;
    let slack = 1.0 + 1e-12;
    let p_norm_holds =
        norm_1(m) <= k_p(1.0, d) * ld * slack && norm_inf(m) <= k_p(f64::INFINITY, d) * ld * slack;
    let pass = norm_residual <= TOL
        && min_residual <= TOL
        && max_residual <= TOL
        && ordering_holds
        && p_norm_holds;
    Ok(ContractionEigReport {
        norm_residual,
        min_residual,
        max_residual,
        ordering_holds,
        p_norm_holds,
        pass,
    })
}

/// Largest componentwise gap between `Σ_{i=k0}^{k} B_i a_i` and its Abel
/// form `Σ_{i=k0}^{k−1} (B_i − B_{i+1}) A_i + B_k A_k`, `A_i = Σ_{j=k0}^{i} a_j`.
/// Sequences are indexed from 0.
pub fn abel_transform_check(b: &[Matrix], a: &[DVector<f64>], k0: usize, k: usize) -> Result<f64> {
    if k0 > k || k >= b.len() || k >= a.len() {
        return Err(Error::Precondition(format!(
            "need k0 <= k < len, got k0={k0}, k={k}, len={}",
            b.len().min(a.len())
        )));
    }
    let dim = a[k0].len();
    let mut lhs = DVector::zeros(b[k0].nrows());
    for i in k0..=k {
        lhs += &b[i] * &a[i];
    }
    let mut partial = DVector::zeros(dim);
    let mut rhs = DVector::zeros(b[k0].nrows());
    for i in k0..k {
        partial += &a[i];
        rhs += (&b[i] - &b[i + 1]) * &partial;
    }
    partial += &a[k];
    rhs += &b[k] * &partial;
    Ok((lhs - rhs).amax())
}
