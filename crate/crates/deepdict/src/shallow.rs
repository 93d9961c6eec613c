//! Single-layer dictionary training.
//!
//! A layer factorizes samples `X` into a dictionary `D` and coefficients
//! `Z`. Two variants are provided:
//!
//! - dense: alternating exact least squares on `‖X − D Z‖²`, used for the
//!   inner layers of a deep model,
//! - sparse: `‖X − D Z‖² + λ ‖Z‖₁`, minimized by alternating iterative
//!   soft-thresholding sweeps over `Z` with a least-squares dictionary
//!   update, used for the final layer.
//!
//! Both start from a deterministic orthonormal initializer built from the
//! leading sample columns, so training is reproducible without a seed.

use ndarray::{s, Array2, Axis};

use ndarray::linalg::general_mat_mul;

use crate::error::{Error, Result};
use crate::linalg::{
    fzeros, householder_q, l1_norm, map_chunks, matmul, matmul_nt, max_abs, residual_sq,
    solve_gram_system, to_f, top_eigenvalue_spd, COL_CHUNK,
};

/// Default multiplier applied to the spectral bound when choosing the
/// thresholding step. Power iteration approaches the largest eigenvalue
/// from below, so a small margin keeps the surrogate a true majorizer.
pub const DEFAULT_STEP_SAFETY: f64 = 1.01;

/// Hyperparameters for one layer.
#[derive(Debug, Clone)]
pub struct LayerTrainConfig {
    /// Number of dictionary atoms (columns of `D`).
    pub n_atoms: usize,
    /// Alternating rounds of coefficient and dictionary updates.
    pub outer_iters: usize,
    /// Soft-thresholding sweeps per round (sparse variant only).
    pub ista_iters: usize,
    /// Sparsity penalty weight (sparse variant only).
    pub lambda: f64,
    /// Stop once the relative objective decrease between rounds falls
    /// below this.
    pub rel_tol: f64,
    /// Step safety multiplier, at least 1.
    pub step_safety: f64,
}

impl LayerTrainConfig {
    pub fn dense(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            outer_iters: 10,
            ista_iters: 50,
            lambda: 0.0,
            rel_tol: 1e-4,
            step_safety: DEFAULT_STEP_SAFETY,
        }
    }

    pub fn sparse(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            outer_iters: 15,
            ista_iters: 50,
            lambda: 0.1,
            rel_tol: 1e-4,
            step_safety: DEFAULT_STEP_SAFETY,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::InvalidParam("n_atoms must be positive".into()));
        }
        if self.outer_iters == 0 {
            return Err(Error::InvalidParam("outer_iters must be positive".into()));
        }
        if self.ista_iters == 0 {
            return Err(Error::InvalidParam("ista_iters must be positive".into()));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::InvalidParam(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if !self.rel_tol.is_finite() || self.rel_tol < 0.0 {
            return Err(Error::InvalidParam(format!(
                "rel_tol must be finite and nonnegative, got {}",
                self.rel_tol
            )));
        }
        if !self.step_safety.is_finite() || self.step_safety <= 1.0 {
            return Err(Error::InvalidParam(format!(
                "step_safety must exceed 1, got {}",
                self.step_safety
            )));
        }
        Ok(())
    }
}

/// Result of training one layer.
#[derive(Debug, Clone)]
pub struct LayerFit {
    pub dictionary: Array2<f64>,
    pub coefficients: Array2<f64>,
    /// Final objective: residual for dense layers, residual plus weighted
    /// l1 penalty for sparse layers.
    pub objective: f64,
    /// Alternating rounds actually run.
    pub rounds: usize,
    /// Objective after each recorded step, oldest first. Dense training
    /// records both half-steps of every round plus the final re-solve;
    /// sparse training records each round end.
    pub trace: Vec<f64>,
}

/// Deterministic initializer: an orthonormal basis for the span of the
/// first `n_atoms` sample columns, taken in order, with signs fixed by a
/// nonnegative triangular diagonal.
pub fn qr_init(x: &Array2<f64>, n_atoms: usize) -> Result<Array2<f64>> {
    let (m, n) = x.dim();
    if n_atoms == 0 {
        return Err(Error::InvalidParam("n_atoms must be positive".into()));
    }
    if n_atoms > m || n_atoms > n {
        return Err(Error::Dimension(format!(
            "cannot draw {n_atoms} atoms from {m}x{n} data: the atom count is limited by min(rows, samples) = {}",
            m.min(n)
        )));
    }
    householder_q(to_f(x.slice(s![.., ..n_atoms])))
}

/// Exact least-squares coefficients `argmin_Z ‖X − D Z‖²` via the normal
/// equations, with a ridge retry when the gram matrix is ill-conditioned.
pub fn solve_coefficients_dense(d: &Array2<f64>, x: &Array2<f64>) -> Result<Array2<f64>> {
    if d.nrows() != x.nrows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but samples have {}",
            d.nrows(),
            x.nrows()
        )));
    }
    let g = matmul(d.t(), d.view());
    let dtx = matmul(d.t(), x.view());
    solve_gram_system(&g, dtx.view())
}

/// Least-squares dictionary update `argmin_D ‖X − D Z‖²`. Atoms whose
/// coefficient row is identically zero do not appear in the objective, so
/// their columns are carried over from the incumbent dictionary unchanged
/// (and a warning is logged). The returned dictionary never increases the
/// objective relative to the incumbent.
pub fn update_dictionary(
    x: &Array2<f64>,
    z: &Array2<f64>,
    incumbent: &Array2<f64>,
) -> Result<Array2<f64>> {
    let (m, n_samples) = x.dim();
    let k = z.nrows();
    if z.ncols() != n_samples {
        return Err(Error::Dimension(format!(
            "coefficients cover {} samples but data has {}",
            z.ncols(),
            n_samples
        )));
    }
    if incumbent.dim() != (m, k) {
        return Err(Error::Dimension(format!(
            "incumbent dictionary is {}x{}, expected {m}x{k}",
            incumbent.nrows(),
            incumbent.ncols()
        )));
    }
    let active: Vec<usize> = (0..k)
        .filter(|&r| z.row(r).iter().any(|&v| v != 0.0))
        .collect();
    if active.len() == k {
        let g = matmul_nt(z.view(), z.view());
        let xzt = matmul_nt(x.view(), z.view());
        let dt = solve_gram_system(&g, xzt.t())?;
        return Ok(to_f(dt.t()));
    }
    if active.is_empty() {
        log::warn!("all {k} atoms are unused by the coefficients; dictionary left unchanged");
        return Ok(incumbent.clone());
    }
    log::warn!(
        "{} of {k} atoms are unused by the coefficients; keeping their incumbent columns",
        k - active.len()
    );
    let mut za = fzeros(active.len(), n_samples);
    for (ai, &r) in active.iter().enumerate() {
        za.row_mut(ai).assign(&z.row(r));
    }
    let g = matmul_nt(za.view(), za.view());
    let xzt = matmul_nt(x.view(), za.view());
    let dt = solve_gram_system(&g, xzt.t())?;
    let mut out = incumbent.clone();
    for (ai, &r) in active.iter().enumerate() {
        out.column_mut(r).assign(&dt.row(ai));
    }
    Ok(out)
}

/// Elementwise shrinkage `sign(v) · max(|v| − t, 0)`; entries at or below
/// the threshold in magnitude become exact zeros.
pub fn soft_threshold(b: &Array2<f64>, t: f64) -> Result<Array2<f64>> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidParam(format!(
            "threshold must be finite and nonnegative, got {t}"
        )));
    }
    Ok(b.mapv(|v| v.signum() * (v.abs() - t).max(0.0)))
}

/// Step parameter for the thresholding iteration: `safety` times the
/// squared spectral norm of the dictionary, the Lipschitz constant of the
/// residual gradient.
pub fn estimate_step(d: &Array2<f64>, safety: f64) -> Result<f64> {
    if !safety.is_finite() || safety < 1.0 {
        return Err(Error::InvalidParam(format!(
            "step safety must be at least 1, got {safety}"
        )));
    }
    let g = matmul(d.t(), d.view());
    let lam = top_eigenvalue_spd(&g);
    if lam <= 0.0 {
        return Err(Error::Degenerate(
            "all-zero dictionary has no usable step size".into(),
        ));
    }
    Ok(safety * lam)
}

/// Sparse coding by iterative soft thresholding with a fixed dictionary,
/// starting from `z0`. Each sweep computes
/// `B = Z + (1/α) Dᵀ (X − D Z)` and shrinks it with threshold `λ/(2α)`,
/// where `α` comes from [`estimate_step`]. Returns the coefficients after
/// `iters` sweeps together with the objective
/// `‖X − D Z‖² + λ ‖Z‖₁` at every iterate (length `iters + 1`), which is
/// nonincreasing because the step majorizes the residual.
pub fn ista_sparse_code_warm(
    d: &Array2<f64>,
    x: &Array2<f64>,
    lambda: f64,
    iters: usize,
    safety: f64,
    z0: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if d.nrows() != x.nrows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows but samples have {}",
            d.nrows(),
            x.nrows()
        )));
    }
    if z0.dim() != (d.ncols(), x.ncols()) {
        return Err(Error::Dimension(format!(
            "warm start is {}x{}, expected {}x{}",
            z0.nrows(),
            z0.ncols(),
            d.ncols(),
            x.ncols()
        )));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::InvalidParam(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let alpha = estimate_step(d, safety)?;
    let thr = lambda / (2.0 * alpha);
    let inv_alpha = alpha.recip();
    let mut z = to_f(z0.view());
    let mut trace = Vec::with_capacity(iters + 1);
    let dv = d.view();
    for _ in 0..iters {
        let pairs: Vec<_> = z
            .axis_chunks_iter_mut(Axis(1), COL_CHUNK)
            .zip(x.axis_chunks_iter(Axis(1), COL_CHUNK))
            .collect();
        let parts = map_chunks(pairs, |(mut zc, xc)| {
            let mut r = to_f(xc);
            general_mat_mul(-1.0, &dv, &zc, 1.0, &mut r);
            let rs = r.as_slice_memory_order().expect("residual is contiguous");
            let mut quad = 0.0;
            for &v in rs {
                quad += v * v;
            }
            let mut l1 = 0.0;
            {
                let zs = zc
                    .as_slice_memory_order()
                    .expect("coefficient chunk is contiguous");
                for &v in zs {
                    l1 += v.abs();
                }
            }
            general_mat_mul(inv_alpha, &dv.t(), &r, 1.0, &mut zc);
            let zs = zc
                .as_slice_memory_order_mut()
                .expect("coefficient chunk is contiguous");
            for v in zs.iter_mut() {
                *v = v.signum() * (v.abs() - thr).max(0.0);
            }
            (quad, l1)
        });
        let mut quad = 0.0;
        let mut l1 = 0.0;
        for (q, s) in parts {
            quad += q;
            l1 += s;
        }
        trace.push(quad + lambda * l1);
    }
    trace.push(residual_sq(x.view(), d.view(), z.view()) + lambda * l1_norm(z.view()));
    Ok((z, trace))
}

/// Sparse coding from an all-zero start with the default step safety.
pub fn ista_sparse_code(
    d: &Array2<f64>,
    x: &Array2<f64>,
    lambda: f64,
    iters: usize,
) -> Result<Array2<f64>> {
    let z0 = fzeros(d.ncols(), x.ncols());
    let (z, _) = ista_sparse_code_warm(d, x, lambda, iters, DEFAULT_STEP_SAFETY, &z0)?;
    Ok(z)
}

/// Rescale dictionary columns to unit norm, absorbing the scale into the
/// matching coefficient rows so the product `D Z` is preserved. Columns
/// with exactly zero norm are left untouched.
pub fn normalize_columns(d: &Array2<f64>, z: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if d.ncols() != z.nrows() {
        return Err(Error::Dimension(format!(
            "dictionary has {} atoms but coefficients have {} rows",
            d.ncols(),
            z.nrows()
        )));
    }
    let mut dn = to_f(d.view());
    let mut zn = to_f(z.view());
    normalize_columns_inplace(&mut dn, &mut zn);
    Ok((dn, zn))
}

pub(crate) fn normalize_columns_inplace(d: &mut Array2<f64>, z: &mut Array2<f64>) {
    for j in 0..d.ncols() {
        let nrm = d.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
        if nrm == 0.0 {
            continue;
        }
        d.column_mut(j).mapv_inplace(|v| v / nrm);
        z.row_mut(j).mapv_inplace(|v| v * nrm);
    }
}

fn zero_fit(m: usize, n: usize, cfg: &LayerTrainConfig) -> LayerFit {
    LayerFit {
        dictionary: fzeros(m, cfg.n_atoms),
        coefficients: fzeros(cfg.n_atoms, n),
        objective: 0.0,
        rounds: 0,
        trace: vec![0.0],
    }
}

fn check_nonempty(x: &Array2<f64>) -> Result<()> {
    let (m, n) = x.dim();
    if m == 0 || n == 0 {
        return Err(Error::Dimension(format!("empty sample matrix {m}x{n}")));
    }
    Ok(())
}

/// Train a dense layer: alternate exact coefficient and dictionary least
/// squares from the deterministic initializer, stopping after
/// `cfg.outer_iters` rounds or once the relative objective decrease
/// between rounds drops below `cfg.rel_tol`. The returned coefficients
/// are re-solved against the final dictionary.
pub fn train_layer_dense(x: &Array2<f64>, cfg: &LayerTrainConfig) -> Result<LayerFit> {
    cfg.validate()?;
    check_nonempty(x)?;
    let (m, n) = x.dim();
    if max_abs(x.view()) == 0.0 {
        // all-zero data factorizes exactly as zero
        return Ok(zero_fit(m, n, cfg));
    }
    let mut d = qr_init(x, cfg.n_atoms)?;
    let mut trace = Vec::with_capacity(2 * cfg.outer_iters + 1);
    let mut prev: Option<f64> = None;
    let mut rounds = 0;
    for _ in 0..cfg.outer_iters {
        let z = solve_coefficients_dense(&d, x)?;
        trace.push(residual_sq(x.view(), d.view(), z.view()));
        d = update_dictionary(x, &z, &d)?;
        let obj = residual_sq(x.view(), d.view(), z.view());
        trace.push(obj);
        rounds += 1;
        match prev {
            Some(p) => {
                if p <= 0.0 || (p - obj) / p < cfg.rel_tol {
                    break;
                }
            }
            None => {
                if obj == 0.0 {
                    break;
                }
            }
        }
        prev = Some(obj);
    }
    let z = solve_coefficients_dense(&d, x)?;
    let objective = residual_sq(x.view(), d.view(), z.view());
    trace.push(objective);
    Ok(LayerFit {
        dictionary: d,
        coefficients: z,
        objective,
        rounds,
        trace,
    })
}

/// Train a sparse layer: each round runs `cfg.ista_iters` thresholding
/// sweeps (warm-started from the previous round), updates the dictionary
/// by least squares, and renormalizes its columns. The trace records the
/// composite objective `‖X − D Z‖² + λ ‖Z‖₁` at each round end.
pub fn train_layer_sparse(x: &Array2<f64>, cfg: &LayerTrainConfig) -> Result<LayerFit> {
    cfg.validate()?;
    check_nonempty(x)?;
    if cfg.lambda <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "sparse training requires lambda > 0, got {}",
            cfg.lambda
        )));
    }
    let (m, n) = x.dim();
    if max_abs(x.view()) == 0.0 {
        return Ok(zero_fit(m, n, cfg));
    }
    let mut d = qr_init(x, cfg.n_atoms)?;
    let mut z = fzeros(cfg.n_atoms, n);
    let mut trace = Vec::with_capacity(cfg.outer_iters);
    let mut prev: Option<f64> = None;
    let mut rounds = 0;
    for _ in 0..cfg.outer_iters {
        let (znew, _) =
            ista_sparse_code_warm(&d, x, cfg.lambda, cfg.ista_iters, cfg.step_safety, &z)?;
        z = znew;
        d = update_dictionary(x, &z, &d)?;
        normalize_columns_inplace(&mut d, &mut z);
        let obj = residual_sq(x.view(), d.view(), z.view()) + cfg.lambda * l1_norm(z.view());
        trace.push(obj);
        rounds += 1;
        match prev {
            Some(p) => {
                if p <= 0.0 || (p - obj) / p < cfg.rel_tol {
                    break;
                }
            }
            None => {
                if obj == 0.0 {
                    break;
                }
            }
        }
        prev = Some(obj);
    }
    let objective = *trace.last().expect("at least one round runs");
    Ok(LayerFit {
        dictionary: d,
        coefficients: z,
        objective,
        rounds,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, ShapeBuilder};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_f(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((rows, cols).f());
        for j in 0..cols {
            for i in 0..rows {
                a[[i, j]] = rng.random_range(-1.0..1.0);
            }
        }
        a
    }

    // ---- independent reference implementations used as oracles ----

    /// Dense solve of `a x = b` by Gauss-Jordan elimination with partial
    /// pivoting; no shared code with the production path.
    fn gauss_jordan_solve(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
        let n = a.nrows();
        let m = b.ncols();
        let mut aug = Array2::<f64>::zeros((n, n + m));
        for i in 0..n {
            for j in 0..n {
                aug[[i, j]] = a[[i, j]];
            }
            for j in 0..m {
                aug[[i, n + j]] = b[[i, j]];
            }
        }
        for col in 0..n {
            let mut piv = col;
            for r in col + 1..n {
                if aug[[r, col]].abs() > aug[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                for j in 0..n + m {
                    let t = aug[[col, j]];
                    aug[[col, j]] = aug[[piv, j]];
                    aug[[piv, j]] = t;
                }
            }
            let p = aug[[col, col]];
            assert!(p.abs() > 1e-14, "oracle hit a singular system");
            for j in 0..n + m {
                aug[[col, j]] /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[[r, col]];
                    for j in 0..n + m {
                        aug[[r, j]] -= f * aug[[col, j]];
                    }
                }
            }
        }
        let mut out = Array2::zeros((n, m));
        for i in 0..n {
            for j in 0..m {
                out[[i, j]] = aug[[i, n + j]];
            }
        }
        out
    }

    /// Modified Gram-Schmidt orthonormalization of the first `k` columns.
    /// Its triangular diagonal is a column norm, hence positive, so it
    /// shares the production sign convention by construction.
    fn mgs_q(x: &Array2<f64>, k: usize) -> Array2<f64> {
        let mut q = crate::linalg::to_f(x.slice(s![.., ..k]));
        for j in 0..k {
            for i in 0..j {
                let r = q.column(i).dot(&q.column(j));
                let qi = q.column(i).to_owned();
                let mut cj = q.column_mut(j);
                cj.zip_mut_with(&qi, |c, &qv| *c -= r * qv);
            }
            let nrm = q.column(j).dot(&q.column(j)).sqrt();
            assert!(nrm > 1e-12, "oracle input is rank deficient");
            q.column_mut(j).mapv_inplace(|v| v / nrm);
        }
        q
    }

    /// Cyclic Jacobi eigenvalue iteration for symmetric matrices.
    fn jacobi_top_eigenvalue(sym: &Array2<f64>) -> f64 {
        let mut a = sym.clone();
        let n = a.nrows();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off += a[[i, j]] * a[[i, j]];
                    }
                }
            }
            if off.sqrt() <= 1e-13 {
                break;
            }
            for p in 0..n - 1 {
                for q in p + 1..n {
                    let apq = a[[p, q]];
                    if apq.abs() <= 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                    let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                    let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..n).map(|i| a[[i, i]]).fold(f64::NEG_INFINITY, f64::max)
    }

    fn objective_dense(x: &Array2<f64>, d: &Array2<f64>, z: &Array2<f64>) -> f64 {
        let mut s = 0.0;
        let dz = matmul(d.view(), z.view());
        for (a, b) in x.iter().zip(dz.iter()) {
            s += (a - b) * (a - b);
        }
        s
    }

    // ---- qr_init ----

    #[test]
    fn qr_init_matches_gram_schmidt_oracle() {
        let x = random_f(12, 8, 21);
        let q = qr_init(&x, 5).unwrap();
        let q_ref = mgs_q(&x, 5);
        assert_eq!(q.dim(), (12, 5));
        for (a, b) in q.iter().zip(q_ref.iter()) {
            assert!((a - b).abs() <= 1e-9, "got {a}, oracle {b}");
        }
    }

    #[test]
    fn qr_init_ignores_columns_past_the_atom_count() {
        let x = random_f(9, 7, 22);
        let head = crate::linalg::to_f(x.slice(s![.., ..4]));
        let a = qr_init(&x, 4).unwrap();
        let b = qr_init(&head, 4).unwrap();
        for (u, v) in a.iter().zip(b.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn qr_init_spans_the_leading_columns() {
        let x = random_f(10, 6, 23);
        let q = qr_init(&x, 6).unwrap();
        // projection q qᵀ must reproduce each spanned column
        let proj = matmul(q.view(), matmul(q.t(), x.view()).view());
        for (a, b) in proj.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn qr_init_rejects_oversized_atom_count() {
        let x = random_f(6, 20, 24);
        let msg = qr_init(&x, 7).unwrap_err().to_string();
        assert!(msg.contains("min(rows, samples) = 6"), "{msg}");
    }

    #[test]
    fn qr_init_rejects_duplicate_leading_columns() {
        let mut x = random_f(8, 4, 25);
        let c0 = x.column(0).to_owned();
        x.column_mut(1).assign(&c0);
        let msg = qr_init(&x, 2).unwrap_err().to_string();
        assert!(msg.contains("rank deficiency"), "{msg}");
    }

    // ---- dense coding and dictionary update ----

    #[test]
    fn dense_coding_matches_normal_equation_oracle() {
        let d = random_f(8, 4, 26);
        let x = random_f(8, 6, 27);
        let z = solve_coefficients_dense(&d, &x).unwrap();
        let g = matmul(d.t(), d.view());
        let rhs = matmul(d.t(), x.view());
        let z_ref = gauss_jordan_solve(&g, &rhs);
        for (a, b) in z.iter().zip(z_ref.iter()) {
            assert!((a - b).abs() <= 1e-10, "got {a}, oracle {b}");
        }
    }

    #[test]
    fn dense_coding_survives_rank_deficient_dictionary() {
        let mut d = random_f(8, 4, 28);
        let c0 = d.column(0).to_owned();
        d.column_mut(1).assign(&c0); // exactly repeated atom
        let x = random_f(8, 5, 29);
        let z = solve_coefficients_dense(&d, &x).unwrap();
        assert!(z.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dictionary_update_matches_normal_equation_oracle() {
        let x = random_f(7, 30, 30);
        let z = random_f(4, 30, 31);
        let incumbent = random_f(7, 4, 32);
        let d = update_dictionary(&x, &z, &incumbent).unwrap();
        // oracle: solve (z zᵀ) dᵀ = z xᵀ column by column
        let g = matmul(z.view(), crate::linalg::to_f(z.t()).view());
        let rhs = matmul(z.view(), crate::linalg::to_f(x.t()).view());
        let dt_ref = gauss_jordan_solve(&g, &rhs);
        for i in 0..7 {
            for j in 0..4 {
                let a = d[[i, j]];
                let b = dt_ref[[j, i]];
                assert!((a - b).abs() <= 1e-10, "got {a}, oracle {b}");
            }
        }
    }

    #[test]
    fn dictionary_update_never_increases_the_objective() {
        let x = random_f(9, 40, 33);
        let z = random_f(5, 40, 34);
        let incumbent = random_f(9, 5, 35);
        let before = objective_dense(&x, &incumbent, &z);
        let d = update_dictionary(&x, &z, &incumbent).unwrap();
        let after = objective_dense(&x, &d, &z);
        assert!(after <= before * (1.0 + 1e-12));
    }

    #[test]
    fn dictionary_update_keeps_dead_atom_columns() {
        let x = random_f(6, 25, 36);
        let mut z = random_f(4, 25, 37);
        z.row_mut(2).fill(0.0);
        let incumbent = random_f(6, 4, 38);
        let d = update_dictionary(&x, &z, &incumbent).unwrap();
        for i in 0..6 {
            assert_eq!(d[[i, 2]].to_bits(), incumbent[[i, 2]].to_bits());
        }
        // live columns still minimize the reduced problem
        let before = objective_dense(&x, &incumbent, &z);
        assert!(objective_dense(&x, &d, &z) <= before * (1.0 + 1e-12));
    }

    #[test]
    fn dictionary_update_with_all_dead_atoms_returns_incumbent() {
        let x = random_f(5, 10, 39);
        let z = Array2::zeros((3, 10).f());
        let incumbent = random_f(5, 3, 40);
        let d = update_dictionary(&x, &z, &incumbent).unwrap();
        for (a, b) in d.iter().zip(incumbent.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    // ---- soft threshold ----

    #[test]
    fn soft_threshold_matches_grid_search_prox_oracle() {
        let b = random_f(4, 5, 41).mapv(|v| v * 3.0);
        let t = 0.7;
        let got = soft_threshold(&b, t).unwrap();
        for (v, g) in b.iter().zip(got.iter()) {
            // brute-force the scalar problem min_u (u − v)² + 2 t |u|
            let mut best = f64::INFINITY;
            let mut best_u = 0.0;
            let mut u = -4.0;
            while u <= 4.0 {
                let f = (u - v) * (u - v) + 2.0 * t * u.abs();
                if f < best {
                    best = f;
                    best_u = u;
                }
                u += 1e-4;
            }
            assert!((g - best_u).abs() <= 1e-3, "prox({v}) = {g}, grid {best_u}");
        }
    }

    #[test]
    fn soft_threshold_zeroes_small_entries_exactly() {
        let mut b = Array2::zeros((2, 2));
        b[[0, 0]] = 0.3;
        b[[0, 1]] = -0.5;
        b[[1, 0]] = 0.5000001;
        b[[1, 1]] = -2.0;
        let out = soft_threshold(&b, 0.5).unwrap();
        assert_eq!(out[[0, 0]], 0.0);
        assert_eq!(out[[0, 1]], 0.0);
        assert!(out[[1, 0]] > 0.0 && (out[[1, 0]] - 1e-7).abs() < 1e-12);
        assert_eq!(out[[1, 1]], -1.5);
    }

    #[test]
    fn soft_threshold_rejects_negative_threshold() {
        let b = Array2::zeros((2, 2));
        assert!(matches!(
            soft_threshold(&b, -0.1),
            Err(Error::InvalidParam(_))
        ));
    }

    // ---- step estimate ----

    #[test]
    fn step_estimate_matches_jacobi_oracle() {
        let d = random_f(10, 6, 42);
        let step = estimate_step(&d, 1.0).unwrap();
        let g = matmul(d.t(), d.view());
        let lam_ref = jacobi_top_eigenvalue(&g);
        assert!(
            (step - lam_ref).abs() <= 1e-6 * lam_ref,
            "step {step}, oracle {lam_ref}"
        );
    }

    #[test]
    fn step_estimate_scales_linearly_with_safety() {
        let d = random_f(8, 3, 43);
        let base = estimate_step(&d, 1.0).unwrap();
        let doubled = estimate_step(&d, 2.0).unwrap();
        assert_eq!(doubled.to_bits(), (2.0 * base).to_bits());
    }

    #[test]
    fn step_estimate_is_exact_on_scaled_identities() {
        let mut d = Array2::zeros((4, 4));
        for i in 0..4 {
            d[[i, i]] = 1.0;
        }
        assert_eq!(estimate_step(&d, 1.01).unwrap(), 1.01);
        for i in 0..4 {
            d[[i, i]] = 2.0;
        }
        assert_eq!(estimate_step(&d, 1.0).unwrap(), 4.0);
    }

    #[test]
    fn step_estimate_rejects_zero_dictionary() {
        let d = Array2::zeros((5, 3));
        assert!(matches!(
            estimate_step(&d, 1.01),
            Err(Error::Degenerate(_))
        ));
    }

    // ---- sparse coding ----

    #[test]
    fn single_atom_coding_matches_closed_form() {
        // with one atom the problem separates per sample:
        // z* = soft(dᵀx, λ/2) / ‖d‖²
        let d = random_f(6, 1, 44);
        let x = random_f(6, 8, 45);
        let lambda = 0.4;
        let z = ista_sparse_code(&d, &x, lambda, 200).unwrap();
        let dn2 = d.column(0).dot(&d.column(0));
        for j in 0..8 {
            let inner = d.column(0).dot(&x.column(j));
            let want = inner.signum() * (inner.abs() - lambda / 2.0).max(0.0) / dn2;
            assert!(
                (z[[0, j]] - want).abs() <= 1e-8,
                "sample {j}: got {}, want {want}",
                z[[0, j]]
            );
        }
    }

    #[test]
    fn sparse_coding_objective_never_increases() {
        let d = random_f(6, 4, 46);
        let x = random_f(6, 30, 47);
        let z0 = Array2::zeros((4, 30).f());
        let (_, trace) = ista_sparse_code_warm(&d, &x, 0.3, 60, 1.01, &z0).unwrap();
        assert_eq!(trace.len(), 61);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-9) + 1e-12,
                "objective rose from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn oversized_penalty_kills_every_coefficient() {
        let d = random_f(5, 3, 48);
        let x = random_f(5, 12, 49);
        let alpha = estimate_step(&d, DEFAULT_STEP_SAFETY).unwrap();
        let corr = matmul(d.t(), x.view());
        let lambda = 2.0 * alpha.max(1.0) * crate::linalg::max_abs(corr.view()) + 1.0;
        let z = ista_sparse_code(&d, &x, lambda, 25).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn warm_start_resumes_the_exact_iteration() {
        let d = random_f(7, 5, 50);
        let x = random_f(7, 20, 51);
        let z0 = Array2::zeros((5, 20).f());
        let (full, _) = ista_sparse_code_warm(&d, &x, 0.2, 60, 1.01, &z0).unwrap();
        let (half, _) = ista_sparse_code_warm(&d, &x, 0.2, 30, 1.01, &z0).unwrap();
        let (resumed, _) = ista_sparse_code_warm(&d, &x, 0.2, 30, 1.01, &half).unwrap();
        for (a, b) in full.iter().zip(resumed.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unpenalized_coding_converges_to_least_squares() {
        let base = random_f(9, 12, 70);
        let d = qr_init(&base, 4).unwrap();
        let x = random_f(9, 10, 71);
        let z = ista_sparse_code(&d, &x, 0.0, 200).unwrap();
        // orthonormal dictionary: the dense solution is dᵀ x
        let want = matmul(d.t(), x.view());
        for (a, b) in z.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-6, "got {a}, want {b}");
        }
    }

    #[test]
    fn dense_coding_of_orthonormal_dictionary_is_the_adjoint() {
        let base = random_f(9, 12, 72);
        let d = qr_init(&base, 4).unwrap();
        let x = random_f(9, 10, 73);
        let z = solve_coefficients_dense(&d, &x).unwrap();
        let want = matmul(d.t(), x.view());
        for (a, b) in z.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn dense_coding_satisfies_the_stationarity_certificate() {
        let d = random_f(9, 5, 74);
        let x = random_f(9, 20, 75);
        let z = solve_coefficients_dense(&d, &x).unwrap();
        let dz = matmul(d.view(), z.view());
        let mut resid = crate::linalg::to_f(x.view());
        resid -= &dz;
        let grad = matmul(d.t(), resid.view());
        let scale = 1.0 + crate::linalg::max_abs(matmul(d.t(), x.view()).view());
        assert!(crate::linalg::max_abs(grad.view()) <= 1e-8 * scale);
    }

    #[test]
    fn sparse_coding_validates_inputs() {
        let d = random_f(5, 3, 52);
        let x = random_f(6, 4, 53);
        assert!(matches!(
            ista_sparse_code(&d, &x, 0.1, 10),
            Err(Error::Dimension(_))
        ));
        let x = random_f(5, 4, 54);
        assert!(matches!(
            ista_sparse_code(&d, &x, -0.1, 10),
            Err(Error::InvalidParam(_))
        ));
    }

    // ---- normalization ----

    #[test]
    fn normalization_is_exact_and_idempotent_on_basis_columns() {
        let mut d = Array2::zeros((3, 3).f());
        d[[0, 0]] = 2.0;
        d[[1, 1]] = 0.5;
        // third column stays all-zero
        let z = random_f(3, 6, 55);
        let (d1, z1) = normalize_columns(&d, &z).unwrap();
        assert_eq!(d1[[0, 0]], 1.0);
        assert_eq!(d1[[1, 1]], 1.0);
        assert!(d1.column(2).iter().all(|&v| v == 0.0));
        assert_eq!(z1[[0, 0]].to_bits(), (z[[0, 0]] * 2.0).to_bits());
        // zero-norm column leaves its coefficient row alone
        assert_eq!(z1[[2, 0]].to_bits(), z[[2, 0]].to_bits());
        let (d2, z2) = normalize_columns(&d1, &z1).unwrap();
        for (a, b) in d1.iter().zip(d2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in z1.iter().zip(z2.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn normalization_preserves_the_product() {
        let d = random_f(6, 4, 56);
        let z = random_f(4, 9, 57);
        let before = matmul(d.view(), z.view());
        let (dn, zn) = normalize_columns(&d, &z).unwrap();
        let after = matmul(dn.view(), zn.view());
        for (a, b) in before.iter().zip(after.iter()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    // ---- layer training ----

    #[test]
    fn dense_training_recovers_an_exact_factorization() {
        let d0 = random_f(6, 3, 58);
        let z0 = random_f(3, 20, 59);
        let x = matmul(d0.view(), z0.view());
        let fit = train_layer_dense(&x, &LayerTrainConfig::dense(3)).unwrap();
        let scale = x.iter().map(|v| v * v).sum::<f64>();
        assert!(fit.objective <= 1e-18 * scale, "objective {}", fit.objective);
    }

    #[test]
    fn dense_training_trace_is_monotone() {
        let x = random_f(10, 50, 60);
        let fit = train_layer_dense(&x, &LayerTrainConfig::dense(4)).unwrap();
        assert!(fit.trace.len() >= 3);
        for w in fit.trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12) + 1e-12,
                "objective rose from {} to {}",
                w[0],
                w[1]
            );
        }
        assert_eq!(fit.objective, *fit.trace.last().unwrap());
    }

    #[test]
    fn one_round_of_dense_training_already_improves_on_the_initializer() {
        let x = random_f(8, 30, 61);
        let mut cfg = LayerTrainConfig::dense(3);
        cfg.outer_iters = 1;
        let fit = train_layer_dense(&x, &cfg).unwrap();
        assert_eq!(fit.rounds, 1);
        assert!(fit.objective <= fit.trace[0]);
    }

    #[test]
    fn dense_training_stops_early_under_a_loose_tolerance() {
        let x = random_f(8, 30, 62);
        let mut cfg = LayerTrainConfig::dense(3);
        cfg.rel_tol = 1.0;
        let fit = train_layer_dense(&x, &cfg).unwrap();
        assert!(fit.rounds <= 2, "ran {} rounds", fit.rounds);
    }

    #[test]
    fn dense_training_accepts_all_zero_data() {
        let x = Array2::zeros((5, 9).f());
        let fit = train_layer_dense(&x, &LayerTrainConfig::dense(2)).unwrap();
        assert_eq!(fit.objective, 0.0);
        assert!(fit.dictionary.iter().all(|&v| v == 0.0));
        assert!(fit.coefficients.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_training_produces_sparse_unit_norm_results() {
        let x = random_f(10, 60, 63);
        let mut cfg = LayerTrainConfig::sparse(5);
        cfg.lambda = 0.5;
        cfg.outer_iters = 6;
        let fit = train_layer_sparse(&x, &cfg).unwrap();
        let zeros = fit.coefficients.iter().filter(|&&v| v == 0.0).count();
        assert!(zeros > 0, "no exact zeros in the coefficients");
        for j in 0..5 {
            let nrm = fit.dictionary.column(j).dot(&fit.dictionary.column(j)).sqrt();
            assert!(nrm == 0.0 || (nrm - 1.0).abs() <= 1e-12, "column {j} norm {nrm}");
        }
    }

    #[test]
    fn sparse_training_trace_is_monotone_within_tolerance() {
        let x = random_f(12, 80, 64);
        let mut cfg = LayerTrainConfig::sparse(6);
        cfg.outer_iters = 8;
        let fit = train_layer_sparse(&x, &cfg).unwrap();
        for w in fit.trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-9) + 1e-12,
                "objective rose from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn sparse_training_approaches_the_dense_fit_as_lambda_vanishes() {
        let d0 = random_f(6, 3, 65);
        let z0 = random_f(3, 25, 66);
        let x = matmul(d0.view(), z0.view());
        let mut cfg = LayerTrainConfig::sparse(3);
        cfg.lambda = 1e-10;
        cfg.outer_iters = 4;
        let fit = train_layer_sparse(&x, &cfg).unwrap();
        // exactly factorizable data: the residual part must vanish
        assert!(fit.objective <= 1e-6, "objective {}", fit.objective);
    }

    #[test]
    fn heavier_penalty_means_more_exact_zeros() {
        // unit-interval data, as produced by the pixel loaders
        let x = random_f(20, 100, 76).mapv(|v| (v + 1.0) / 2.0);
        let mut heavy = LayerTrainConfig::sparse(8);
        heavy.lambda = 10.0;
        heavy.outer_iters = 5;
        let mut light = heavy.clone();
        light.lambda = 0.01;
        let zh = train_layer_sparse(&x, &heavy).unwrap().coefficients;
        let zl = train_layer_sparse(&x, &light).unwrap().coefficients;
        let nh = zh.iter().filter(|&&v| v == 0.0).count();
        let nl = zl.iter().filter(|&&v| v == 0.0).count();
        assert!(nh > nl, "lambda 10 gave {nh} zeros, lambda 0.01 gave {nl}");
        assert!(nh * 2 >= zh.len(), "{nh} zeros of {}", zh.len());
    }

    #[test]
    fn vanishing_penalty_training_tracks_the_dense_trainer() {
        let x = random_f(10, 50, 77);
        let dense_fit = train_layer_dense(&x, &LayerTrainConfig::dense(5)).unwrap();
        let mut cfg = LayerTrainConfig::sparse(5);
        cfg.lambda = 1e-12;
        let sparse_fit = train_layer_sparse(&x, &cfg).unwrap();
        let gap = (sparse_fit.objective - dense_fit.objective).abs();
        assert!(
            gap <= 1e-4 * dense_fit.objective.max(1.0),
            "dense {} vs sparse {}",
            dense_fit.objective,
            sparse_fit.objective
        );
    }

    #[test]
    fn sparse_training_with_overwhelming_penalty_keeps_the_initializer() {
        let x = random_f(7, 15, 67);
        let mut cfg = LayerTrainConfig::sparse(3);
        cfg.lambda = 1e6;
        cfg.outer_iters = 3;
        let fit = train_layer_sparse(&x, &cfg).unwrap();
        assert!(fit.coefficients.iter().all(|&v| v == 0.0));
        let q = qr_init(&x, 3).unwrap();
        for (a, b) in fit.dictionary.iter().zip(q.iter()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn sparse_training_accepts_all_zero_data() {
        let x = Array2::zeros((4, 6).f());
        let fit = train_layer_sparse(&x, &LayerTrainConfig::sparse(2)).unwrap();
        assert_eq!(fit.objective, 0.0);
    }

    #[test]
    fn sparse_training_requires_positive_lambda() {
        let x = random_f(5, 8, 68);
        let mut cfg = LayerTrainConfig::sparse(2);
        cfg.lambda = 0.0;
        assert!(matches!(
            train_layer_sparse(&x, &cfg),
            Err(Error::InvalidParam(_))
        ));
    }

    #[test]
    fn training_propagates_initializer_errors() {
        let x = random_f(4, 10, 69);
        assert!(matches!(
            train_layer_dense(&x, &LayerTrainConfig::dense(5)),
            Err(Error::Dimension(_))
        ));
    }
}
