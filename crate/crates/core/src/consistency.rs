//! Consistent encoder/decoder pairs and how far a VAE is from them.
//!
//! A VAE whose decoder and encoder natural parameters are affine in each
//! other's sufficient statistics, `f(z) = Wψ(z) + u` and `g(x) = Wᵀν(x) + v`,
//! with the prior set to the matching marginal, has joint
//! `p(x, z) ∝ h(x)h'(z) exp(⟨ν(x), Wψ(z)⟩ + ⟨ν(x), u⟩ + ⟨ψ(z), v⟩)` (an EF
//! Harmonium) and its encoder equals the exact posterior.
//!
//! For an arbitrary VAE on finite spaces, [`harmonium_project`] fits an
//! unnormalized Harmonium to the decoder joint by a `p_d`-weighted
//! least-squares solve in extended coordinates and certifies, per latent
//! point, that the squared log-error of the fit is at most the squared
//! log-mismatch between encoder and posterior. [`audit_tightness`] relates
//! that to the expected posterior KL `ε` via per-point Pinsker bounds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::efcore::{BitEncoding, ExponentialFamily};
use crate::error::{check_len, Error, Result};
use crate::nets::{AffineMap, Mlp};
use crate::numeric::{kl_from_logs, log_normalize, log_sum_exp};
use crate::spaces::{DataDistribution, FiniteSpace};
use crate::vae::{adapt_family, Conditional, EfVae, InputMode, Latent};

/// Singular values below this fraction of the largest are treated as zero
/// in the weighted least-squares solve.
pub const SVD_CUTOFF: f64 = 1e-10;

/// Constant of the finite-ε ceiling `1.64 · ε / (2α²)`.
pub const FINITE_EPS_FACTOR: f64 = 1.64;

fn affine_from(w: &DMatrix<f64>, bias: &[f64]) -> Result<AffineMap> {
    let (rows, cols) = w.shape();
    let mut weight = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            weight.push(w[(i, j)]);
        }
    }
    AffineMap::new(rows, cols, weight, bias.to_vec())
}

/// Builds the GLM pair `f(z) = Wψ(z) + u`, `g(x) = Wᵀν(x) + v` over a
/// finite latent space, with the prior set to the Harmonium marginal
/// `p(z) ∝ h'(z) exp(⟨ψ(z), v⟩ + A(Wψ(z) + u))` so that the encoder is the
/// exact posterior.
pub fn make_consistent_pair(
    w: &DMatrix<f64>,
    u: &[f64],
    v: &[f64],
    obs_family: ExponentialFamily,
    latent_family: ExponentialFamily,
    latent_space: FiniteSpace,
) -> Result<EfVae> {
    let (n, m) = w.shape();
    check_len("observation statistics", obs_family.stat_dim(), n)?;
    check_len("latent statistics", latent_family.stat_dim(), m)?;
    check_len("decoder bias u", n, u.len())?;
    check_len("encoder bias v", m, v.len())?;
    if !latent_family.is_finite() {
        return Err(Error::InvalidArgument(
            "consistent pair construction needs a finite latent family".into(),
        ));
    }
    let decoder = Conditional::new(
        obs_family.clone(),
        Mlp::single(affine_from(w, u)?),
        InputMode::Stats,
    );
    let encoder = Conditional::new(
        latent_family.clone(),
        Mlp::single(affine_from(&w.transpose(), v)?),
        InputMode::Stats,
    );
    let mut log_prior = Vec::with_capacity(latent_space.len());
    for z in latent_space.iter() {
        let psi = latent_family.sufficient_stats(z)?;
        let f = decoder.net.forward(&psi)?;
        log_prior.push(
            latent_family.log_base_measure(z)?
                + crate::numeric::dot(&psi, v)
                + obs_family.log_partition(&f)?,
        );
    }
    log_normalize(&mut log_prior);
    EfVae::new(
        Latent::Finite {
            space: latent_space,
            log_prior,
        },
        decoder,
        encoder,
    )
}

/// `p(x, z) = h(x) h'(z) exp(⟨ν(x), Wψ(z)⟩ + ⟨ν(x), u⟩ + ⟨ψ(z), v⟩ + c)`.
///
/// `constant` is `c`; for a normalized Harmonium it is `−A`, the negative
/// log-normalizer. `normalized` records which case applies.
#[derive(Debug, Clone, PartialEq)]
pub struct Harmonium {
    pub w: DMatrix<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    pub obs_family: ExponentialFamily,
    pub latent_family: ExponentialFamily,
    pub constant: f64,
    pub normalized: bool,
}

impl Harmonium {
    pub fn new(
        w: DMatrix<f64>,
        u: DVector<f64>,
        v: DVector<f64>,
        obs_family: ExponentialFamily,
        latent_family: ExponentialFamily,
    ) -> Result<Self> {
        let (n, m) = w.shape();
        check_len("harmonium observation statistics", obs_family.stat_dim(), n)?;
        check_len("harmonium latent statistics", latent_family.stat_dim(), m)?;
        check_len("harmonium u", n, u.len())?;
        check_len("harmonium v", m, v.len())?;
        Ok(Harmonium {
            w,
            u,
            v,
            obs_family,
            latent_family,
            constant: 0.0,
            normalized: false,
        })
    }

    /// Splits an extended `(n+1) × (m+1)` matrix into `W` (top-left), `u`
    /// (last column), `v` (last row) and `c` (corner).
    pub fn from_extended(
        extended: &DMatrix<f64>,
        obs_family: ExponentialFamily,
        latent_family: ExponentialFamily,
    ) -> Result<Self> {
        let (r, c) = extended.shape();
        if r == 0 || c == 0 {
            return Err(Error::InvalidArgument("empty extended matrix".into()));
        }
        let (n, m) = (r - 1, c - 1);
        let mut h = Harmonium::new(
            extended.view((0, 0), (n, m)).into_owned(),
            extended.view((0, m), (n, 1)).column(0).into_owned(),
            extended.view((n, 0), (1, m)).row(0).transpose(),
            obs_family,
            latent_family,
        )?;
        h.constant = extended[(n, m)];
        Ok(h)
    }

    /// The extended matrix `[[W, u], [vᵀ, c]]`.
    pub fn extended(&self) -> DMatrix<f64> {
        let (n, m) = self.w.shape();
        let mut e = DMatrix::zeros(n + 1, m + 1);
        e.view_mut((0, 0), (n, m)).copy_from(&self.w);
        e.view_mut((0, m), (n, 1)).copy_from(&self.u);
        e.view_mut((n, 0), (1, m)).copy_from(&self.v.transpose());
        e[(n, m)] = self.constant;
        e
    }

    /// Log of the (possibly unnormalized) joint density.
    pub fn log_density(&self, x: &[f64], z: &[f64]) -> Result<f64> {
        let ofam = adapt_family(&self.obs_family, x);
        let nu = DVector::from_vec(ofam.sufficient_stats(x)?);
        let psi = DVector::from_vec(self.latent_family.sufficient_stats(z)?);
        Ok(ofam.log_base_measure(x)?
            + self.latent_family.log_base_measure(z)?
            + nu.dot(&(&self.w * &psi))
            + nu.dot(&self.u)
            + psi.dot(&self.v)
            + self.constant)
    }

    /// Sets `c = −log Σ_{x,z} exp(…)` over the given finite spaces.
    pub fn normalize(&mut self, obs_space: &FiniteSpace, latent_space: &FiniteSpace) -> Result<()> {
        self.constant = 0.0;
        let mut terms = Vec::with_capacity(obs_space.len() * latent_space.len());
        for x in obs_space.iter() {
            for z in latent_space.iter() {
                terms.push(self.log_density(x, z)?);
            }
        }
        let lse = log_sum_exp(&terms);
        if !lse.is_finite() {
            return Err(Error::NonFinite("harmonium normalizer"));
        }
        self.constant = -lse;
        self.normalized = true;
        Ok(())
    }

    /// Natural parameter of `p(x | z)`: `Wψ(z) + u`.
    pub fn obs_conditional(&self, z: &[f64]) -> Result<Vec<f64>> {
        let psi = DVector::from_vec(self.latent_family.sufficient_stats(z)?);
        Ok((&self.w * psi + &self.u).iter().copied().collect())
    }

    /// Natural parameter of `p(z | x)`: `Wᵀν(x) + v`.
    pub fn latent_conditional(&self, x: &[f64]) -> Result<Vec<f64>> {
        let nu = DVector::from_vec(adapt_family(&self.obs_family, x).sufficient_stats(x)?);
        Ok((self.w.transpose() * nu + &self.v).iter().copied().collect())
    }

    /// The consistent VAE with this Harmonium's conditionals and marginal.
    pub fn to_vae(&self, latent_space: FiniteSpace) -> Result<EfVae> {
        make_consistent_pair(
            &self.w,
            self.u.as_slice(),
            self.v.as_slice(),
            self.obs_family.clone(),
            self.latent_family.clone(),
            latent_space,
        )
    }
}

/// Extended statistics and extended network outputs:
/// `ν_e(x) = (ν(x), 1)`, `ψ_e(z) = (ψ(z), 1)`,
/// `g_e(x) = (g(x), log p(x) − B(x) − log h(x))`,
/// `f_e(z) = (f(z), log p(z) − A(z) − log h'(z))`.
///
/// They satisfy `⟨ψ_e(z), g_e(x)⟩ − ⟨ν_e(x), f_e(z)⟩ = log q(z|x) − log p(z|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedStats {
    pub nu_e: Vec<Vec<f64>>,
    pub g_e: Vec<Vec<f64>>,
    pub psi_e: Vec<Vec<f64>>,
    pub f_e: Vec<Vec<f64>>,
}

/// Exact per-point tables of a finite VAE on an observation set.
struct Tables {
    /// `log q(z|x)`, rows over x, columns over the full latent space.
    log_q: Vec<Vec<f64>>,
    /// `log p(x, z)`.
    log_joint: Vec<Vec<f64>>,
    /// `log p(x)`.
    log_marginal: Vec<f64>,
}

impl Tables {
    fn log_post(&self, xi: usize, zi: usize) -> f64 {
        self.log_joint[xi][zi] - self.log_marginal[xi]
    }
}

fn finite_latent(vae: &EfVae) -> Result<(&FiniteSpace, &[f64])> {
    match vae.latent() {
        Latent::Finite { space, log_prior } => Ok((space, log_prior)),
        Latent::StandardNormal { .. } => Err(Error::InvalidArgument(
            "projection and audit need a finite latent space".into(),
        )),
    }
}

fn tables(vae: &EfVae, obs: &FiniteSpace) -> Result<Tables> {
    let (_, prior) = finite_latent(vae)?;
    let dec = vae.decoder_table()?;
    let mut log_q = Vec::with_capacity(obs.len());
    let mut log_joint = Vec::with_capacity(obs.len());
    let mut log_marginal = Vec::with_capacity(obs.len());
    for x in obs.iter() {
        let t = vae.point_tables(x, &dec)?;
        let joint: Vec<f64> = t.log_lik.iter().zip(prior).map(|(a, b)| a + b).collect();
        let lm = log_sum_exp(&joint);
        if !lm.is_finite() {
            return Err(Error::NonFinite("marginal likelihood"));
        }
        log_q.push(t.log_q);
        log_joint.push(joint);
        log_marginal.push(lm);
    }
    Ok(Tables {
        log_q,
        log_joint,
        log_marginal,
    })
}

fn zset_indices(vae: &EfVae, zset: &FiniteSpace) -> Result<Vec<usize>> {
    let (space, _) = finite_latent(vae)?;
    zset.iter()
        .map(|z| {
            space.index_of(z).ok_or_else(|| Error::OutsideSupport {
                family: "latent space".into(),
                point: z.to_vec(),
            })
        })
        .collect()
}

fn decoder_family_fixed(vae: &EfVae, obs: &FiniteSpace) -> Result<()> {
    // the extended coordinates need A(z) independent of x
    if let ExponentialFamily::MultinomialGivenLength { length, .. } = vae.decoder.family {
        for x in obs.iter() {
            let l: f64 = x.iter().sum();
            if l != length as f64 {
                return Err(Error::InvalidArgument(format!(
                    "multinomial observation of length {l} differs from decoder length {length}"
                )));
            }
        }
    }
    Ok(())
}

impl ExtendedStats {
    /// Extended statistics over `obs` (all x) and `zset` (a subset of the
    /// latent space). `log p(x)` is computed exactly by enumeration.
    pub fn compute(vae: &EfVae, obs: &FiniteSpace, zset: &FiniteSpace) -> Result<Self> {
        decoder_family_fixed(vae, obs)?;
        let t = tables(vae, obs)?;
        Self::from_tables(vae, obs, zset, &t)
    }

    fn from_tables(vae: &EfVae, obs: &FiniteSpace, zset: &FiniteSpace, t: &Tables) -> Result<Self> {
        let (_, prior) = finite_latent(vae)?;
        let zidx = zset_indices(vae, zset)?;
        let mut nu_e = Vec::with_capacity(obs.len());
        let mut g_e = Vec::with_capacity(obs.len());
        for (xi, x) in obs.iter().enumerate() {
            let fam = vae.decoder.family_for(x);
            let mut nu = fam.sufficient_stats(x)?;
            nu.push(1.0);
            nu_e.push(nu);
            let mut g = vae.encoder_params(x)?;
            let b = vae.encoder.family.log_partition(&g)?;
            g.push(t.log_marginal[xi] - b - fam.log_base_measure(x)?);
            g_e.push(g);
        }
        let mut psi_e = Vec::with_capacity(zset.len());
        let mut f_e = Vec::with_capacity(zset.len());
        for (z, &zi) in zset.iter().zip(&zidx) {
            let mut psi = vae.encoder.family.sufficient_stats(z)?;
            psi.push(1.0);
            psi_e.push(psi);
            let mut f = vae.decoder_params(z)?;
            let a = vae.decoder.family.log_partition(&f)?;
            f.push(prior[zi] - a - vae.encoder.family.log_base_measure(z)?);
            f_e.push(f);
        }
        Ok(ExtendedStats {
            nu_e,
            g_e,
            psi_e,
            f_e,
        })
    }

    /// `⟨ψ_e(z), g_e(x)⟩ − ⟨ν_e(x), f_e(z)⟩` for row `xi`, column `zi`.
    pub fn log_ratio(&self, xi: usize, zi: usize) -> f64 {
        crate::numeric::dot(&self.psi_e[zi], &self.g_e[xi])
            - crate::numeric::dot(&self.nu_e[xi], &self.f_e[zi])
    }
}

/// Result of a `p_d`-weighted least-squares solve `min ‖A X − B‖_{p_d}`.
#[derive(Debug, Clone)]
pub struct WeightedLstsq {
    pub solution: DMatrix<f64>,
    pub rank: usize,
    /// `max_col ‖A X − P B‖_{p_d}` where `P` is the `p_d`-orthogonal
    /// projector onto range(A), formed independently from the left singular
    /// vectors.
    pub projector_residual: f64,
}

/// Solves `min_X Σ_r w_r ‖A_r X − B_r‖²` through the SVD of `D^{1/2} A`
/// with relative singular-value cutoff [`SVD_CUTOFF`].
pub fn weighted_lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, weights: &[f64]) -> Result<WeightedLstsq> {
    check_len("least-squares rows", a.nrows(), b.nrows())?;
    check_len("least-squares weights", a.nrows(), weights.len())?;
    let sqrt_w = DVector::from_iterator(weights.len(), weights.iter().map(|w| w.sqrt()));
    let aw = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] * sqrt_w[i]);
    let bw = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] * sqrt_w[i]);
    let svd = aw.clone().svd(true, true);
    let u = svd.u.as_ref().expect("left singular vectors requested");
    let vt = svd.v_t.as_ref().expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = SVD_CUTOFF * smax;
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut && svd.singular_values[i] > 0.0)
        .collect();
    let mut solution = DMatrix::zeros(a.ncols(), b.ncols());
    let mut proj = DMatrix::zeros(b.nrows(), b.ncols());
    for &i in &keep {
        let ui = u.column(i);
        let coef = ui.transpose() * &bw; // 1 × k
        let vi = vt.row(i).transpose();
        solution += &vi * (&coef / svd.singular_values[i]);
        proj += &ui * &coef;
    }
    let fitted = &aw * &solution;
    let diff = fitted - proj;
    let projector_residual = (0..diff.ncols())
        .map(|j| diff.column(j).norm())
        .fold(0.0, f64::max);
    Ok(WeightedLstsq {
        solution,
        rank: keep.len(),
        projector_residual,
    })
}

/// Output of [`harmonium_project`].
#[derive(Debug, Clone)]
pub struct ProjectionReport {
    /// Rows `ν_e(x)` for x in the observation set.
    pub v: DMatrix<f64>,
    /// Rows `g_e(x)`.
    pub g: DMatrix<f64>,
    /// Extended `(n+1) × (m+1)` solution of `V W̃ = P G`.
    pub w_tilde: DMatrix<f64>,
    pub rank: usize,
    /// `‖V W̃ − P G‖_{p_d}` (max over columns).
    pub solve_residual: f64,
    /// Audited latent points.
    pub z_points: Vec<Vec<f64>>,
    /// `ξ(z) = V f_e(z) − G ψ_e(z)`, one vector over x per z.
    pub residuals: Vec<Vec<f64>>,
    /// `Δ(z) = ‖ξ(z)‖_{p_d}`.
    pub delta: Vec<f64>,
    /// `Σ_x p_d(x) |log p(x,z) − log p̃(x,z)|²`.
    pub lhs: Vec<f64>,
    /// `Σ_x p_d(x) |log q(z|x) − log p(z|x)|²`, computed directly from the
    /// model.
    pub mismatch: Vec<f64>,
    /// Largest pointwise violation of the extended-statistics identity.
    pub identity_residual: f64,
}

impl ProjectionReport {
    pub fn delta_sq(&self, i: usize) -> f64 {
        self.delta[i] * self.delta[i]
    }

    /// `lhs(z) ≤ Δ(z)² + tol` for every audited z.
    pub fn certified(&self, tol: f64) -> bool {
        self.lhs
            .iter()
            .zip(&self.delta)
            .all(|(l, d)| *l <= d * d + tol)
    }

    /// The fitted unnormalized Harmonium (blocks of `W̃`).
    pub fn harmonium(&self, vae: &EfVae) -> Result<Harmonium> {
        Harmonium::from_extended(
            &self.w_tilde,
            vae.decoder.family.clone(),
            vae.encoder.family.clone(),
        )
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Fits an unnormalized EF Harmonium to the decoder joint on `pd`'s support
/// and certifies the per-z error bound.
///
/// Requires `p_d > 0` on every observation point. The least-squares solve is
/// shared by all z; rank deficiency is handled by the pseudo-inverse.
pub fn harmonium_project(
    vae: &EfVae,
    pd: &DataDistribution,
    zset: &FiniteSpace,
) -> Result<ProjectionReport> {
    pd.require_strictly_positive()?;
    let obs = &pd.space;
    decoder_family_fixed(vae, obs)?;
    let t = tables(vae, obs)?;
    let ext = ExtendedStats::from_tables(vae, obs, zset, &t)?;
    let zidx = zset_indices(vae, zset)?;
    let w = pd.weights();

    let v = rows_to_matrix(&ext.nu_e);
    let g = rows_to_matrix(&ext.g_e);
    let sol = weighted_lstsq(&v, &g, w)?;
    let w_tilde = sol.solution;

    let mut identity_residual: f64 = 0.0;
    let mut residuals = Vec::with_capacity(zset.len());
    let mut delta = Vec::with_capacity(zset.len());
    let mut lhs = Vec::with_capacity(zset.len());
    let mut mismatch = Vec::with_capacity(zset.len());
    for (k, (z, &zi)) in zset.iter().zip(&zidx).enumerate() {
        let fe = DVector::from_column_slice(&ext.f_e[k]);
        let pe = DVector::from_column_slice(&ext.psi_e[k]);
        let xi_vec: Vec<f64> = (&v * &fe - &g * &pe).iter().copied().collect();
        let w_psi = &w_tilde * &pe;
        let log_hz = vae.encoder.family.log_base_measure(z)?;
        let mut d2 = 0.0;
        let mut l2 = 0.0;
        let mut m2 = 0.0;
        for (xi, x) in obs.iter().enumerate() {
            d2 += w[xi] * xi_vec[xi] * xi_vec[xi];
            let log_h = vae.decoder.family_for(x).log_base_measure(x)?;
            let fitted = log_h + log_hz + v.row(xi).transpose().dot(&w_psi);
            let e = t.log_joint[xi][zi] - fitted;
            l2 += w[xi] * e * e;
            let diff = t.log_q[xi][zi] - t.log_post(xi, zi);
            m2 += w[xi] * diff * diff;
            identity_residual = identity_residual.max((ext.log_ratio(xi, k) - diff).abs());
        }
        residuals.push(xi_vec);
        delta.push(d2.sqrt());
        lhs.push(l2);
        mismatch.push(m2);
    }
    Ok(ProjectionReport {
        v,
        g,
        w_tilde,
        rank: sol.rank,
        solve_residual: sol.projector_residual,
        z_points: zset.points().to_vec(),
        residuals,
        delta,
        lhs,
        mismatch,
        identity_residual,
    })
}

/// `min_W̃ Σ_z Σ_x p_d(x) |log p(x,z) − log h(x) − log h'(z) − ⟨ν_e(x), W̃ ψ_e(z)⟩|²`,
/// the best joint fit any single unnormalized Harmonium achieves on the
/// decoder. It does not depend on the encoder, and bounds `Σ_z Δ(z)²` from
/// below for every encoder.
pub fn harmonium_fit_residual(vae: &EfVae, pd: &DataDistribution, zset: &FiniteSpace) -> Result<f64> {
    pd.require_strictly_positive()?;
    let obs = &pd.space;
    decoder_family_fixed(vae, obs)?;
    let t = tables(vae, obs)?;
    let ext = ExtendedStats::from_tables(vae, obs, zset, &t)?;
    let zidx = zset_indices(vae, zset)?;
    let n1 = ext.nu_e[0].len();
    let m1 = ext.psi_e[0].len();
    let rows = obs.len() * zset.len();
    let mut design = DMatrix::zeros(rows, n1 * m1);
    let mut target = DMatrix::zeros(rows, 1);
    let mut weights = Vec::with_capacity(rows);
    let mut r = 0;
    for (xi, x) in obs.iter().enumerate() {
        let log_h = vae.decoder.family_for(x).log_base_measure(x)?;
        for (k, (z, &zi)) in zset.iter().zip(&zidx).enumerate() {
            for a in 0..n1 {
                for b in 0..m1 {
                    design[(r, a * m1 + b)] = ext.nu_e[xi][a] * ext.psi_e[k][b];
                }
            }
            target[(r, 0)] =
                t.log_joint[xi][zi] - log_h - vae.encoder.family.log_base_measure(z)?;
            weights.push(pd.weights()[xi]);
            r += 1;
        }
    }
    let sol = weighted_lstsq(&design, &target, &weights)?;
    let fitted = &design * &sol.solution;
    Ok((0..rows)
        .map(|i| weights[i] * (target[(i, 0)] - fitted[(i, 0)]).powi(2))
        .sum())
}

/// One Pinsker check `|p(z|x) − q(z|x)|² ≤ KL(q(·|x) ‖ p(·|x)) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinskerRow {
    pub x_index: usize,
    pub z_index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub ok: bool,
}

/// Per-z bound comparison of the tightness audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub z_index: usize,
    pub alpha: f64,
    pub delta_sq: f64,
    pub lhs: f64,
    /// `ε / (2α_z²)`.
    pub bound_asym: f64,
    /// `1.64 · ε / (2α_z²)`.
    pub bound_finite: f64,
    /// `ε / α_z²`, the appendix form of the same bound.
    pub bound_alt: f64,
    /// `lhs ≤ bound_finite` and `Δ² ≤ bound_finite`.
    pub pass: bool,
}

/// Result of [`audit_tightness`].
#[derive(Debug, Clone)]
pub struct TightnessAudit {
    /// `E_{p_d} KL(q(z|x) ‖ p(z|x))`.
    pub epsilon: f64,
    /// Minimum of `min(q(z|x), p(z|x))` over x and all audited z.
    pub alpha: f64,
    pub rows: Vec<AuditRow>,
    pub pinsker: Vec<PinskerRow>,
    pub pinsker_ok: bool,
    /// `ε / (2α²)` with the global α.
    pub bound_value: f64,
    /// `ε / (2α²) ≤ 1`: outside this the asymptotic bound is not meaningful.
    pub small_eps_regime: bool,
    pub projection: ProjectionReport,
}

impl TightnessAudit {
    pub fn all_pass(&self) -> bool {
        self.pinsker_ok && self.rows.iter().all(|r| r.pass)
    }

    pub fn max_lhs(&self) -> f64 {
        self.rows.iter().map(|r| r.lhs).fold(0.0, f64::max)
    }
}

/// Slack used for the Pinsker comparisons.
pub const PINSKER_SLACK: f64 = 1e-12;
/// Slack used for the bound comparisons (absorbs rounding at ε = 0).
pub const BOUND_SLACK: f64 = 1e-9;

/// ε-tightness audit: computes ε and α, checks Pinsker's inequality for
/// every (x, z) pair, runs the Harmonium projection and compares each
/// `lhs(z)` with `ε/(2α²)`, `1.64·ε/(2α²)` and `ε/α²`.
pub fn audit_tightness(vae: &EfVae, pd: &DataDistribution, zset: &FiniteSpace) -> Result<TightnessAudit> {
    pd.require_strictly_positive()?;
    let obs = &pd.space;
    decoder_family_fixed(vae, obs)?;
    let t = tables(vae, obs)?;
    let zidx = zset_indices(vae, zset)?;
    let w = pd.weights();

    let mut eps_x = Vec::with_capacity(obs.len());
    for xi in 0..obs.len() {
        let post: Vec<f64> = (0..t.log_joint[xi].len()).map(|zi| t.log_post(xi, zi)).collect();
        eps_x.push(kl_from_logs(&t.log_q[xi], &post));
    }
    let epsilon: f64 = eps_x.iter().zip(w).map(|(e, w)| e * w).sum();

    let mut pinsker = Vec::with_capacity(obs.len() * zset.len());
    let mut alphas = Vec::with_capacity(zset.len());
    for (k, &zi) in zidx.iter().enumerate() {
        let mut alpha = f64::INFINITY;
        for xi in 0..obs.len() {
            let q = t.log_q[xi][zi].exp();
            let p = t.log_post(xi, zi).exp();
            alpha = alpha.min(q.min(p));
            let lhs = (p - q) * (p - q);
            let rhs = eps_x[xi] / 2.0;
            pinsker.push(PinskerRow {
                x_index: xi,
                z_index: k,
                lhs,
                rhs,
                ok: lhs <= rhs + PINSKER_SLACK,
            });
        }
        alphas.push(alpha);
    }
    let alpha = alphas.iter().copied().fold(f64::INFINITY, f64::min);
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(
            "α = 0: encoder or posterior vanishes on the audited set".into(),
        ));
    }

    let projection = harmonium_project(vae, pd, zset)?;
    let rows = (0..zset.len())
        .map(|k| {
            let a2 = alphas[k] * alphas[k];
            let bound_asym = epsilon / (2.0 * a2);
            let bound_finite = FINITE_EPS_FACTOR * bound_asym;
            let lhs = projection.lhs[k];
            let delta_sq = projection.delta_sq(k);
            AuditRow {
                z_index: k,
                alpha: alphas[k],
                delta_sq,
                lhs,
                bound_asym,
                bound_finite,
                bound_alt: epsilon / a2,
                pass: lhs <= bound_finite + BOUND_SLACK && delta_sq <= bound_finite + BOUND_SLACK,
            }
        })
        .collect();
    let bound_value = epsilon / (2.0 * alpha * alpha);
    Ok(TightnessAudit {
        epsilon,
        alpha,
        rows,
        pinsker_ok: pinsker.iter().all(|r| r.ok),
        pinsker,
        bound_value,
        small_eps_regime: bound_value <= 1.0,
        projection,
    })
}

/// The bit map `(z₁, z₂) ↦ (z₁, z₁ z₂)` on `{−1, 1}²`; it is its own inverse.
pub fn flow_map(z: &[f64]) -> [f64; 2] {
    [z[0], z[0] * z[1]]
}

/// A two-layer ReLU network computing `β · flow_map(y)` exactly on
/// `{−1, 1}²`, using `y₁y₂ = 1 − relu(y₁ − y₂) − relu(y₂ − y₁)`.
fn flow_net(beta: f64) -> Mlp {
    let l1 = AffineMap::new(
        4,
        2,
        vec![1.0, 0.0, -1.0, 0.0, 1.0, -1.0, -1.0, 1.0],
        vec![0.0; 4],
    )
    .expect("static shape");
    let l2 = AffineMap::new(
        2,
        4,
        vec![beta, -beta, 0.0, 0.0, 0.0, 0.0, -beta, -beta],
        vec![0.0, beta],
    )
    .expect("static shape");
    Mlp::new(vec![l1, l2]).expect("static shape")
}

/// The `{−1,1}² × {−1,1}²` VAE with uniform prior, decoder
/// `p(x|z) ∝ exp(β⟨x, π(z)⟩)` and encoder `q(z|x) ∝ exp(β⟨z, π(x)⟩)`. As β
/// grows the pair approaches a deterministic bijection: the KL gap shrinks
/// while the pointwise log-ratio between encoder and posterior grows.
pub fn build_flow_example(beta: f64) -> Result<EfVae> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("β must be positive, got {beta}")));
    }
    let space = FiniteSpace::binary(2, BitEncoding::PlusMinusOne)?;
    let decoder = Conditional::new(ExponentialFamily::spins(2), flow_net(beta), InputMode::Raw);
    let encoder = Conditional::new(ExponentialFamily::spins(2), flow_net(beta), InputMode::Raw);
    EfVae::new(
        Latent::Finite {
            log_prior: EfVae::uniform_prior(&space),
            space,
        },
        decoder,
        encoder,
    )
}

/// `max_{x,z} |log q(z|x) − log p(z|x)|` over an observation set.
pub fn max_log_ratio(vae: &EfVae, obs: &FiniteSpace) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for x in obs.iter() {
        let post = vae.exact_posterior(x)?;
        let q = vae.encoder_log_probs(x)?;
        for (a, b) in q.iter().zip(&post) {
            worst = worst.max((a - b).abs());
        }
    }
    Ok(worst)
}

/// Replaces a single affine layer `y = Wx + b` by a two-layer ReLU network
/// that computes the same map: `[I, −I] relu([W; −W] x + [b; −b])`.
pub fn deepen_affine(net: &Mlp) -> Result<Mlp> {
    if net.layers().len() != 1 {
        return Err(Error::InvalidArgument("expected a single affine layer".into()));
    }
    let a = &net.layers()[0];
    let (out, inp) = (a.outputs(), a.inputs());
    let mut w1 = Vec::with_capacity(2 * out * inp);
    w1.extend_from_slice(a.weights());
    w1.extend(a.weights().iter().map(|v| -v));
    let mut b1 = a.bias().to_vec();
    b1.extend(a.bias().iter().map(|v| -v));
    let mut w2 = vec![0.0; out * 2 * out];
    for i in 0..out {
        w2[i * 2 * out + i] = 1.0;
        w2[i * 2 * out + out + i] = -1.0;
    }
    Mlp::new(vec![
        AffineMap::new(2 * out, inp, w1, b1)?,
        AffineMap::new(out, 2 * out, w2, vec![0.0; out])?,
    ])
}

/// Weights `W[i][j][k]` of the cubic binary MRF
/// `p(x, z¹, z²) = exp(Σ W_{ijk} x_i z¹_j z²_k)` with homogeneous
/// coordinates `x₀ = z¹₀ = z²₀ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicWeights {
    pub n: usize,
    pub m1: usize,
    pub m2: usize,
    data: Vec<f64>,
}

impl CubicWeights {
    pub fn zeros(n: usize, m1: usize, m2: usize) -> Self {
        CubicWeights {
            n,
            m1,
            m2,
            data: vec![0.0; (n + 1) * (m1 + 1) * (m2 + 1)],
        }
    }

    fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * (self.m1 + 1) + j) * (self.m2 + 1) + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }

    fn energy(&self, x: &[f64], z1: &[f64], z2: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..=self.n {
            let xi = if i == 0 { 1.0 } else { x[i - 1] };
            if xi == 0.0 {
                continue;
            }
            for j in 0..=self.m1 {
                let zj = if j == 0 { 1.0 } else { z1[j - 1] };
                if zj == 0.0 {
                    continue;
                }
                for k in 0..=self.m2 {
                    let zk = if k == 0 { 1.0 } else { z2[k - 1] };
                    e += self.get(i, j, k) * xi * zj * zk;
                }
            }
        }
        e
    }
}

/// Conditional-RBM coefficients of `q(z¹, z² | x) ∝
/// exp(⟨z¹, V(x) z²⟩ + ⟨b¹(x), z¹⟩ + ⟨b²(x), z²⟩)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmCoefficients {
    pub v: DMatrix<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl CrbmCoefficients {
    /// Normalized log-probabilities over `(z¹, z²)` in the joint enumeration
    /// order (z¹ major).
    pub fn log_probs(&self, z1_space: &FiniteSpace, z2_space: &FiniteSpace) -> Vec<f64> {
        let mut out = Vec::with_capacity(z1_space.len() * z2_space.len());
        for z1 in z1_space.iter() {
            for z2 in z2_space.iter() {
                let mut e = crate::numeric::dot(&self.b1, z1) + crate::numeric::dot(&self.b2, z2);
                for (j, a) in z1.iter().enumerate() {
                    for (k, b) in z2.iter().enumerate() {
                        e += a * self.v[(j, k)] * b;
                    }
                }
                out.push(e);
            }
        }
        log_normalize(&mut out);
        out
    }
}

/// A normalized cubic binary MRF over `(x, z¹, z²)`.
#[derive(Debug, Clone)]
pub struct MrfJoint {
    pub weights: CubicWeights,
    pub x_space: FiniteSpace,
    pub z1_space: FiniteSpace,
    pub z2_space: FiniteSpace,
    /// `log p(x, z¹, z²)`, x major then z¹ then z².
    pub log_probs: Vec<f64>,
}

/// Enumerates the cubic MRF; `W₀₀₀` is overwritten with the negative
/// log-partition of the remaining terms so that the joint is normalized.
pub fn build_bernoulli_mrf_joint(mut weights: CubicWeights) -> Result<MrfJoint> {
    let total = weights.n + weights.m1 + weights.m2;
    if total > crate::spaces::MAX_BINARY_BITS {
        return Err(Error::Capacity {
            what: "cubic MRF variables",
            value: total,
            limit: crate::spaces::MAX_BINARY_BITS,
        });
    }
    let x_space = FiniteSpace::binary(weights.n, BitEncoding::ZeroOne)?;
    let z1_space = FiniteSpace::binary(weights.m1, BitEncoding::ZeroOne)?;
    let z2_space = FiniteSpace::binary(weights.m2, BitEncoding::ZeroOne)?;
    weights.set(0, 0, 0, 0.0);
    let mut log_probs = Vec::with_capacity(x_space.len() * z1_space.len() * z2_space.len());
    for x in x_space.iter() {
        for z1 in z1_space.iter() {
            for z2 in z2_space.iter() {
                log_probs.push(weights.energy(x, z1, z2));
            }
        }
    }
    let lse = log_normalize(&mut log_probs);
    weights.set(0, 0, 0, -lse);
    Ok(MrfJoint {
        weights,
        x_space,
        z1_space,
        z2_space,
        log_probs,
    })
}

impl MrfJoint {
    fn block(&self) -> usize {
        self.z1_space.len() * self.z2_space.len()
    }

    /// `log p(z¹, z² | x)` by enumeration.
    pub fn conditional_log_probs(&self, x_index: usize) -> Vec<f64> {
        let b = self.block();
        let mut row = self.log_probs[x_index * b..(x_index + 1) * b].to_vec();
        log_normalize(&mut row);
        row
    }

    /// `V(x)_{jk} = Σ_i W_{ijk} x_i`, `b¹_j = Σ_i W_{ij0} x_i`,
    /// `b²_k = Σ_i W_{i0k} x_i` (with `x₀ = 1`).
    pub fn conditional_coefficients(&self, x: &[f64]) -> CrbmCoefficients {
        let w = &self.weights;
        let xs = |i: usize| if i == 0 { 1.0 } else { x[i - 1] };
        let v = DMatrix::from_fn(w.m1, w.m2, |j, k| {
            (0..=w.n).map(|i| w.get(i, j + 1, k + 1) * xs(i)).sum()
        });
        let b1 = (0..w.m1)
            .map(|j| (0..=w.n).map(|i| w.get(i, j + 1, 0) * xs(i)).sum())
            .collect();
        let b2 = (0..w.m2)
            .map(|k| (0..=w.n).map(|i| w.get(i, 0, k + 1) * xs(i)).sum())
            .collect();
        CrbmCoefficients { v, b1, b2 }
    }

    /// Largest deviation between the enumerated conditional and the
    /// conditional-RBM form, over all x.
    pub fn max_factor_mismatch(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (xi, x) in self.x_space.iter().enumerate() {
            let direct = self.conditional_log_probs(xi);
            let form = self
                .conditional_coefficients(x)
                .log_probs(&self.z1_space, &self.z2_space);
            for (a, b) in direct.iter().zip(&form) {
                worst = worst.max((a - b).abs());
            }
        }
        worst
    }

    /// Marginals `(log p(x), log p(z¹), log p(z²))`.
    pub fn marginals(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nx, n1, n2) = (self.x_space.len(), self.z1_space.len(), self.z2_space.len());
        let mut px = vec![Vec::new(); nx];
        let mut p1 = vec![Vec::new(); n1];
        let mut p2 = vec![Vec::new(); n2];
        for a in 0..nx {
            for b in 0..n1 {
                for c in 0..n2 {
                    let lp = self.log_probs[(a * n1 + b) * n2 + c];
                    px[a].push(lp);
                    p1[b].push(lp);
                    p2[c].push(lp);
                }
            }
        }
        let f = |v: Vec<Vec<f64>>| v.iter().map(|r| log_sum_exp(r)).collect();
        (f(px), f(p1), f(p2))
    }
}

/// Linear Gaussian VAE from explicit parameters: decoder
/// `N(σ_d²(Wz + a), σ_d² I)`, encoder natural parameters `(Wᵀx + b, c)`,
/// i.e. `σ_e² = −1/(2c)` and `μ_e = −(Wᵀx + b)/(2c)`, prior `N(0, I)`.
pub fn linear_gaussian_pair(
    w: &DMatrix<f64>,
    a: &[f64],
    b: &[f64],
    c: &[f64],
    sigma_d: f64,
) -> Result<EfVae> {
    let (n, m) = w.shape();
    check_len("decoder offset a", n, a.len())?;
    check_len("encoder offset b", m, b.len())?;
    check_len("encoder quadratic c", m, c.len())?;
    if !(sigma_d > 0.0 && sigma_d.is_finite()) {
        return Err(Error::InvalidArgument(format!("σ_d must be positive, got {sigma_d}")));
    }
    if let Some(ci) = c.iter().find(|ci| !(**ci < 0.0)) {
        return Err(Error::NonIntegrable(format!(
            "encoder quadratic coefficient {ci} must be negative"
        )));
    }
    let decoder = Conditional::new(
        ExponentialFamily::gaussian(n),
        Mlp::single(affine_from(w, a)?),
        InputMode::Raw,
    )
    .with_tail(vec![-0.5 / (sigma_d * sigma_d); n]);
    let encoder = Conditional::new(
        ExponentialFamily::gaussian(m),
        Mlp::single(affine_from(&w.transpose(), b)?),
        InputMode::Raw,
    )
    .with_tail(c.to_vec());
    EfVae::new(Latent::StandardNormal { dim: m }, decoder, encoder)
}

/// The consistent linear Gaussian VAE for prior `N(0, I)`: the exact
/// posterior has precision `I + σ_d² WᵀW` and linear coefficient
/// `Wᵀx − σ_d² Wᵀa`, so the encoder gets `b = −σ_d² Wᵀa` and
/// `c_j = −(1 + σ_d² ‖W_j‖²)/2`. The posterior is a diagonal Gaussian only
/// when the columns of `W` are orthogonal; otherwise this is an error.
pub fn linear_gaussian_consistent(w: &DMatrix<f64>, a: &[f64], sigma_d: f64) -> Result<EfVae> {
    let s2 = sigma_d * sigma_d;
    let gram = w.transpose() * w;
    let m = gram.nrows();
    let scale = gram.diagonal().iter().copied().fold(1.0, f64::max);
    for j in 0..m {
        for k in 0..j {
            if gram[(j, k)].abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!(
                    "columns {k} and {j} of W are not orthogonal; the posterior is not diagonal"
                )));
            }
        }
    }
    let b: Vec<f64> = (w.transpose() * DVector::from_column_slice(a) * (-s2))
        .iter()
        .copied()
        .collect();
    let c: Vec<f64> = (0..m).map(|j| -0.5 * (1.0 + s2 * gram[(j, j)])).collect();
    linear_gaussian_pair(w, a, &b, &c, sigma_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flow_map_is_an_involution() {
        for z in FiniteSpace::binary(2, BitEncoding::PlusMinusOne).unwrap().iter() {
            let once = flow_map(z);
            assert_eq!(flow_map(&once), [z[0], z[1]]);
        }
    }

    #[test]
    fn flow_net_matches_map() {
        let net = flow_net(3.0);
        for z in FiniteSpace::binary(2, BitEncoding::PlusMinusOne).unwrap().iter() {
            let out = net.forward(z).unwrap();
            let expect = flow_map(z);
            assert_eq!(out, vec![3.0 * expect[0], 3.0 * expect[1]]);
        }
        assert!(build_flow_example(0.0).is_err());
    }

    #[test]
    fn deepened_affine_is_identical() {
        let a = AffineMap::new(2, 3, vec![1.0, -2.0, 0.5, 0.0, 3.0, -1.0], vec![0.2, -0.7]).unwrap();
        let shallow = Mlp::single(a);
        let deep = deepen_affine(&shallow).unwrap();
        for x in [[0.0, 1.0, 2.0], [-3.0, 0.5, 1.0], [1.0, 1.0, 1.0]] {
            let s = shallow.forward(&x).unwrap();
            let d = deep.forward(&x).unwrap();
            for (p, q) in s.iter().zip(&d) {
                assert!((p - q).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn extended_roundtrip() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let h = Harmonium::from_extended(
            &e,
            ExponentialFamily::bernoulli(2),
            ExponentialFamily::bernoulli(1),
        )
        .unwrap();
        assert_eq!(h.w, DMatrix::from_row_slice(2, 1, &[1.0, 3.0]));
        assert_eq!(h.u.as_slice(), &[2.0, 4.0]);
        assert_eq!(h.v.as_slice(), &[5.0]);
        assert_eq!(h.constant, 6.0);
        assert_eq!(h.extended(), e);
    }

    #[test]
    fn weighted_lstsq_rank_deficient() {
        // duplicate columns: rank 1, projection still exact
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
        let b = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        let sol = weighted_lstsq(&a, &b, &[0.2, 0.3, 0.5]).unwrap();
        assert_eq!(sol.rank, 1);
        assert!(sol.projector_residual < 1e-12);
        // minimum-norm solution splits the coefficient evenly
        assert!((sol.solution[(0, 0)] - sol.solution[(1, 0)]).abs() < 1e-12);
    }

    #[test]
    fn linear_gaussian_rejects_bad_inputs() {
        let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(linear_gaussian_consistent(&w, &[0.0, 0.0], 1.0).is_err());
        let eye = DMatrix::identity(2, 2);
        assert!(matches!(
            linear_gaussian_pair(&eye, &[0.0; 2], &[0.0; 2], &[-1.0, 0.0], 1.0),
            Err(Error::NonIntegrable(_))
        ));
    }

    #[test]
    fn mrf_capacity() {
        assert!(matches!(
            build_bernoulli_mrf_joint(CubicWeights::zeros(10, 6, 6)),
            Err(Error::Capacity { .. })
        ));
    }
}
