//! Certificate, projection and flow-example reports for finite VAEs.

use std::path::{Path, PathBuf};

use efvae::consistency::{
    audit_tightness, build_flow_example, harmonium_project, max_log_ratio, AuditRow, ProjectionReport,
    TightnessAudit, BOUND_SLACK,
};
use efvae::{BitEncoding, DataDistribution, EfVae, FiniteSpace};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::output::{csv_bytes, fmt_f64, read_json, Outputs};

/// Paths of a serialized [`EfVae`] and the data distribution to audit it on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    pub model: PathBuf,
    pub data: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub betas: Vec<f64>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            betas: vec![1.0, 2.0, 4.0, 8.0],
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> LabResult<()> {
        if self.betas.is_empty() {
            return Err(LabError::Validation("betas must be nonempty".into()));
        }
        if let Some(b) = self.betas.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(LabError::Validation(format!("beta must be positive and finite, got {b}")));
        }
        Ok(())
    }
}

/// Blocks of the extended Harmonium matrix `W̃`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmoniumBlocks {
    pub w: Vec<Vec<f64>>,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c: f64,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl HarmoniumBlocks {
    fn from_extended(wt: &DMatrix<f64>) -> Self {
        let (r, c) = wt.shape();
        HarmoniumBlocks {
            w: matrix_rows(&wt.view((0, 0), (r - 1, c - 1)).into_owned()),
            u: wt.view((0, c - 1), (r - 1, 1)).iter().copied().collect(),
            v: wt.view((r - 1, 0), (1, c - 1)).iter().copied().collect(),
            c: wt[(r - 1, c - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionRow {
    pub z_index: usize,
    pub z: Vec<f64>,
    pub delta: f64,
    pub delta_sq: f64,
    pub lhs: f64,
    /// `Σ_x p_d(x) |log q(z|x) − log p(z|x)|²`.
    pub mismatch: f64,
    /// `lhs ≤ Δ²` and `Δ² ≤ mismatch`, each up to the bound slack.
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub rank: usize,
    pub solve_residual: f64,
    pub identity_residual: f64,
    pub harmonium: HarmoniumBlocks,
    pub rows: Vec<ProjectionRow>,
    pub all_pass: bool,
}

impl ProjectionSummary {
    pub fn new(p: &ProjectionReport) -> Self {
        let rows: Vec<ProjectionRow> = (0..p.delta.len())
            .map(|k| {
                let d2 = p.delta_sq(k);
                ProjectionRow {
                    z_index: k,
                    z: p.z_points[k].clone(),
                    delta: p.delta[k],
                    delta_sq: d2,
                    lhs: p.lhs[k],
                    mismatch: p.mismatch[k],
                    pass: p.lhs[k] <= d2 + BOUND_SLACK && d2 <= p.mismatch[k] + BOUND_SLACK,
                }
            })
            .collect();
        ProjectionSummary {
            rank: p.rank,
            solve_residual: p.solve_residual,
            identity_residual: p.identity_residual,
            harmonium: HarmoniumBlocks::from_extended(&p.w_tilde),
            all_pass: rows.iter().all(|r| r.pass),
            rows,
        }
    }

    pub fn csv(&self) -> LabResult<Vec<u8>> {
        csv_bytes(
            &["z_index", "delta_sq", "lhs", "mismatch", "pass"],
            self.rows.iter().map(|r| {
                vec![
                    r.z_index.to_string(),
                    fmt_f64(r.delta_sq),
                    fmt_f64(r.lhs),
                    fmt_f64(r.mismatch),
                    r.pass.to_string(),
                ]
            }),
        )
    }
}

/// Structured certificate: ε, the global and per-z α, the three bound
/// values, per-z rows and the Pinsker check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub epsilon: f64,
    pub alpha: f64,
    /// `ε / (2α²)` with the global α.
    pub bound_asym: f64,
    /// `1.64 · ε / (2α²)` with the global α.
    pub bound_finite: f64,
    /// `ε / α²` with the global α.
    pub bound_alt: f64,
    pub small_eps_regime: bool,
    pub pinsker_pairs: usize,
    pub pinsker_violations: usize,
    pub pinsker_ok: bool,
    pub max_lhs: f64,
    pub all_pass: bool,
    pub rows: Vec<AuditRow>,
    pub projection: ProjectionSummary,
}

impl Certificate {
    pub fn new(a: &TightnessAudit) -> Self {
        let a2 = a.alpha * a.alpha;
        Certificate {
            epsilon: a.epsilon,
            alpha: a.alpha,
            bound_asym: a.bound_value,
            bound_finite: efvae::consistency::FINITE_EPS_FACTOR * a.bound_value,
            bound_alt: a.epsilon / a2,
            small_eps_regime: a.small_eps_regime,
            pinsker_pairs: a.pinsker.len(),
            pinsker_violations: a.pinsker.iter().filter(|r| !r.ok).count(),
            pinsker_ok: a.pinsker_ok,
            max_lhs: a.max_lhs(),
            all_pass: a.all_pass(),
            rows: a.rows.clone(),
            projection: ProjectionSummary::new(&a.projection),
        }
    }

    pub fn csv(&self) -> LabResult<Vec<u8>> {
        csv_bytes(
            &["z_index", "delta_sq", "lhs", "bound_asym", "bound_finite", "pass"],
            self.rows.iter().map(|r| {
                vec![
                    r.z_index.to_string(),
                    fmt_f64(r.delta_sq),
                    fmt_f64(r.lhs),
                    fmt_f64(r.bound_asym),
                    fmt_f64(r.bound_finite),
                    r.pass.to_string(),
                ]
            }),
        )
    }

    pub fn stage(&self, outputs: &mut Outputs, stem: &str) -> LabResult<()> {
        outputs.add_json(format!("{stem}.json"), self)?;
        outputs.add(format!("{stem}.csv"), self.csv()?);
        Ok(())
    }
}

fn latent_points(vae: &EfVae, path: &Path) -> LabResult<FiniteSpace> {
    vae.latent_space().cloned().ok_or_else(|| LabError::InvalidInput {
        path: path.to_path_buf(),
        source: efvae::Error::InvalidArgument("certificates need a finite latent space".into()),
    })
}

fn load_pair(config: &CertifyConfig) -> LabResult<(EfVae, DataDistribution, FiniteSpace)> {
    let vae: EfVae = read_json(&config.model)?;
    let pd: DataDistribution = read_json(&config.data)?;
    let zset = latent_points(&vae, &config.model)?;
    Ok((vae, pd, zset))
}

fn invalid(path: &Path) -> impl Fn(efvae::Error) -> LabError + '_ {
    move |source| LabError::InvalidInput {
        path: path.to_path_buf(),
        source,
    }
}

/// Audits the model on the data and returns the certificate.
pub fn certify(config: &CertifyConfig) -> LabResult<Certificate> {
    let (vae, pd, zset) = load_pair(config)?;
    let audit = audit_tightness(&vae, &pd, &zset).map_err(invalid(&config.model))?;
    Ok(Certificate::new(&audit))
}

pub fn certify_outputs(config: &CertifyConfig) -> LabResult<(Certificate, Outputs)> {
    let cert = certify(config)?;
    let mut out = Outputs::new();
    cert.stage(&mut out, "certificate")?;
    Ok((cert, out))
}

/// Harmonium projection of the model's decoder on the data.
pub fn project(config: &CertifyConfig) -> LabResult<ProjectionSummary> {
    let (vae, pd, zset) = load_pair(config)?;
    let p = harmonium_project(&vae, &pd, &zset).map_err(invalid(&config.model))?;
    Ok(ProjectionSummary::new(&p))
}

pub fn project_outputs(config: &CertifyConfig) -> LabResult<(ProjectionSummary, Outputs)> {
    let summary = project(config)?;
    let mut out = Outputs::new();
    out.add_json("projection.json", &summary)?;
    out.add("projection.csv", summary.csv()?);
    Ok((summary, out))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRow {
    pub beta: f64,
    pub kl_gap: f64,
    pub max_log_ratio: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub max_lhs: f64,
    pub pinsker_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub rows: Vec<FlowRow>,
    /// Over β in the given order.
    pub kl_gap_strictly_decreasing: bool,
    pub max_log_ratio_strictly_increasing: bool,
}

/// Runs the two-bit flow example for each β on the uniform data
/// distribution. Returns the summary and, per β, the model and its
/// certificate.
pub fn flow_example(config: &FlowConfig) -> LabResult<(FlowReport, Vec<(f64, EfVae, Certificate)>)> {
    config.validate()?;
    let obs = FiniteSpace::binary(2, BitEncoding::PlusMinusOne)?;
    let pd = DataDistribution::uniform(obs.clone())?;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    for &beta in &config.betas {
        let vae = build_flow_example(beta)?;
        let zset = latent_points(&vae, Path::new("flow example"))?;
        let audit = audit_tightness(&vae, &pd, &zset)?;
        let cert = Certificate::new(&audit);
        rows.push(FlowRow {
            beta,
            kl_gap: vae.kl_gap(&pd)?,
            max_log_ratio: max_log_ratio(&vae, &obs)?,
            epsilon: cert.epsilon,
            alpha: cert.alpha,
            max_lhs: cert.max_lhs,
            pinsker_ok: cert.pinsker_ok,
        });
        models.push((beta, vae, cert));
    }
    let report = FlowReport {
        kl_gap_strictly_decreasing: rows.windows(2).all(|w| w[1].kl_gap < w[0].kl_gap),
        max_log_ratio_strictly_increasing: rows.windows(2).all(|w| w[1].max_log_ratio > w[0].max_log_ratio),
        rows,
    };
    Ok((report, models))
}

pub fn flow_outputs(config: &FlowConfig) -> LabResult<(FlowReport, Outputs)> {
    let (report, models) = flow_example(config)?;
    let mut out = Outputs::new();
    out.add_json("flow.json", &report)?;
    out.add(
        "flow.csv",
        csv_bytes(
            &["beta", "kl_gap", "max_log_ratio", "epsilon", "alpha", "max_lhs", "pinsker_ok"],
            report.rows.iter().map(|r| {
                vec![
                    fmt_f64(r.beta),
                    fmt_f64(r.kl_gap),
                    fmt_f64(r.max_log_ratio),
                    fmt_f64(r.epsilon),
                    fmt_f64(r.alpha),
                    fmt_f64(r.max_lhs),
                    r.pinsker_ok.to_string(),
                ]
            }),
        )?,
    );
    for (beta, vae, cert) in &models {
        let tag = fmt_f64(*beta);
        out.add_json(format!("model_beta{tag}.json"), vae)?;
        cert.stage(&mut out, &format!("certificate_beta{tag}"))?;
    }
    Ok((report, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_follow_extended_layout() {
        let wt = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let b = HarmoniumBlocks::from_extended(&wt);
        assert_eq!(b.w, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(b.u, vec![3.0, 6.0]);
        assert_eq!(b.v, vec![7.0, 8.0]);
        assert_eq!(b.c, 9.0);
    }

    #[test]
    fn flow_example_shows_growing_ratio() {
        let (r, models) = flow_example(&FlowConfig::default()).unwrap();
        assert!(r.kl_gap_strictly_decreasing && r.max_log_ratio_strictly_increasing);
        assert!(models.iter().all(|(_, _, c)| c.pinsker_ok));
    }
}
