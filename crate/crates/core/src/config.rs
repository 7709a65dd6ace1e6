//! Run configuration: example selection, base and bundle keys, `k`-lists,
//! tolerances and seeds, with schema validation.

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

use crate::basegeom::{BaseKind, BaseManifold, MetricPerturbation, SpectralField};
use crate::error::{Error, Result};
use crate::ruledgeom::{BundlePerturbation, HermitianBundleData};
use crate::C64;

/// Base keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseConfig {
    /// Model manifold.
    pub kind: BaseKind,
    /// Spectral band limit.
    pub band_limit: usize,
    /// Quadrature order; defaults to the band-limited choice.
    #[serde(default)]
    pub quadrature_order: Option<usize>,
}

/// Named analytic perturbation. Each uses the fixed field
/// [`standard_field`] of the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    /// Conformal change of one summand.
    Conformal {
        /// Summand index.
        summand: usize,
        /// Amplitude.
        amplitude: f64,
    },
    /// Off-diagonal mixing of two summands of equal degree.
    OffDiagonal {
        /// Row summand.
        i: usize,
        /// Column summand.
        j: usize,
        /// `[re, im]` amplitude.
        amplitude: [f64; 2],
    },
    /// Potential perturbation of the base metric.
    BasePotential {
        /// Amplitude.
        amplitude: f64,
    },
}

/// Bundle keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    /// Degrees `[a₁,…,a_r]`, one entry per sphere factor (one for the torus).
    pub degrees: Vec<Vec<i32>>,
    /// Perturbations applied in order.
    #[serde(default)]
    pub perturbation: Vec<PerturbationSpec>,
}

/// Gate tolerances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Exact identities (product exactness).
    pub exact: f64,
    /// Pointwise identities.
    pub identity: f64,
    /// Lower and upper end of the order-three slope band.
    pub slope_band: [f64; 2],
    /// Upper bound on the order-two residual slope.
    pub approx_slope: f64,
    /// Relative finite-difference error.
    pub finite_difference: f64,
    /// Upper bound on the leading-term decay slope of the linearization.
    pub linear_slope: f64,
    /// `b₁` match.
    pub b1: f64,
    /// `b₂` match.
    pub b2: f64,
    /// Extremal residual.
    pub solver: f64,
    /// Calabi profile match.
    pub calabi: f64,
    /// Informational bound on the right-inverse growth slope.
    pub right_inverse_slope: f64,
    /// Equivariance and gauge checks.
    pub moment: f64,
    /// Idempotence and self-adjointness of the projection.
    pub projection: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            exact: 1e-8,
            identity: 1e-7,
            slope_band: [-3.15, -2.85],
            approx_slope: -2.85,
            finite_difference: 1e-4,
            linear_slope: -0.9,
            b1: 1e-9,
            b2: 1e-6,
            solver: 1e-8,
            calabi: 1e-6,
            right_inverse_slope: 3.2,
            moment: 1e-7,
            projection: 1e-8,
        }
    }
}

/// Solver keys.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// `k` of the fixed-point solve.
    pub k: f64,
    /// Order of the starting approximation.
    pub p: usize,
    /// Iteration cap.
    pub max_iter: usize,
    /// Residual target.
    pub tol: f64,
    /// Chebyshev degree of the reduced problem.
    pub nodes: usize,
    /// `k`-sweep for the right-inverse growth.
    pub sweep: [f64; 3],
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: 50.0,
            p: 2,
            max_iter: 60,
            tol: 1e-10,
            nodes: 24,
            sweep: [25.0, 50.0, 100.0],
        }
    }
}

/// A verification run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Example id; see [`RunConfig::preset`].
    pub example: String,
    /// Base keys; default to the preset's.
    #[serde(default)]
    pub base: Option<BaseConfig>,
    /// Bundle keys; default to the preset's.
    #[serde(default)]
    pub bundle: Option<BundleConfig>,
    /// Strictly increasing `k` values.
    #[serde(default = "default_ks")]
    pub ks: Vec<f64>,
    /// Expansion order of the approximate solution.
    #[serde(default = "default_p")]
    pub p: usize,
    /// Sampled points per check.
    #[serde(default = "default_points")]
    pub points: usize,
    /// Seed for sampled points.
    #[serde(default)]
    pub seed: u64,
    /// Gate tolerances.
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Solver keys.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Output directory.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn default_ks() -> Vec<f64> {
    vec![20.0, 40.0, 80.0, 160.0]
}

fn default_p() -> usize {
    2
}

fn default_points() -> usize {
    20
}

/// Ids accepted by [`RunConfig::preset`].
pub const PRESETS: [&str; 9] = [
    "product_torus",
    "product_p1",
    "hirzebruch1",
    "hirzebruch1_perturbed",
    "homogeneous_p1",
    "homogeneous_p1p1",
    "deformed_p1p1",
    "extension_p1p1",
    "he_perturbed_p1",
];

impl RunConfig {
    /// Built-in example.
    pub fn preset(id: &str) -> Result<RunConfig> {
        let (kind, band, degrees, perturbation) = match id {
            "product_torus" => (BaseKind::FlatTorus, 4, vec![vec![0], vec![0]], vec![]),
            "product_p1" => (BaseKind::ProjectiveLine, 6, vec![vec![0], vec![0]], vec![]),
            "hirzebruch1" => (BaseKind::ProjectiveLine, 6, vec![vec![0], vec![-1]], vec![]),
            "hirzebruch1_perturbed" => (
                BaseKind::ProjectiveLine,
                6,
                vec![vec![0], vec![-1]],
                vec![
                    PerturbationSpec::Conformal {
                        summand: 1,
                        amplitude: 0.3,
                    },
                    PerturbationSpec::BasePotential { amplitude: 0.05 },
                ],
            ),
            "homogeneous_p1" => (BaseKind::ProjectiveLine, 6, vec![vec![1], vec![1]], vec![]),
            "homogeneous_p1p1" => (BaseKind::ProductP1P1, 1, vec![vec![-1, 0], vec![0, -1]], vec![]),
            "deformed_p1p1" => (
                BaseKind::ProductP1P1,
                1,
                vec![vec![1, 0], vec![1, 0]],
                vec![
                    PerturbationSpec::OffDiagonal {
                        i: 0,
                        j: 1,
                        amplitude: [0.2, -0.1],
                    },
                    PerturbationSpec::Conformal {
                        summand: 1,
                        amplitude: 0.3,
                    },
                ],
            ),
            "extension_p1p1" => (BaseKind::ProductP1P1, 1, vec![vec![0, 0], vec![0, -2]], vec![]),
            "he_perturbed_p1" => (
                BaseKind::ProjectiveLine,
                12,
                vec![vec![1], vec![1]],
                vec![
                    PerturbationSpec::BasePotential { amplitude: 0.08 },
                    PerturbationSpec::Conformal {
                        summand: 0,
                        amplitude: 0.2,
                    },
                ],
            ),
            _ => return Err(Error::InvalidInput(format!("unknown example `{id}`"))),
        };
        Ok(RunConfig {
            example: id.into(),
            base: Some(BaseConfig {
                kind,
                band_limit: band,
                quadrature_order: None,
            }),
            bundle: Some(BundleConfig { degrees, perturbation }),
            ks: default_ks(),
            p: default_p(),
            points: default_points(),
            seed: 0,
            tolerances: Tolerances::default(),
            solver: SolverConfig::default(),
            out: None,
        })
    }

    /// Parses and validates a JSON config, filling base and bundle keys from
    /// the preset when omitted.
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("config: {e}")))?;
        if cfg.base.is_none() || cfg.bundle.is_none() {
            let p = RunConfig::preset(&cfg.example)?;
            cfg.base = cfg.base.or(p.base);
            cfg.bundle = cfg.bundle.or(p.bundle);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Schema checks.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(m.into()));
        if self.ks.len() < 2 {
            return bad("ks needs at least two values");
        }
        if self.ks.iter().any(|k| !k.is_finite() || *k <= 0.0) {
            return bad("ks must be positive");
        }
        if self.ks.windows(2).any(|w| w[1] <= w[0]) {
            return bad("ks must be strictly increasing");
        }
        if self.solver.sweep.windows(2).any(|w| w[1] <= w[0]) || self.solver.sweep[0] <= 0.0 {
            return bad("solver.sweep must be positive and strictly increasing");
        }
        let t = &self.tolerances;
        let positive = [
            t.exact,
            t.identity,
            t.finite_difference,
            t.b1,
            t.b2,
            t.solver,
            t.calabi,
            t.moment,
            self.solver.tol,
        ];
        if positive.iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return bad("tolerances must be positive");
        }
        if t.slope_band[0] >= t.slope_band[1] {
            return bad("slope_band must be an increasing pair");
        }
        if self.points == 0 {
            return bad("points must be positive");
        }
        if self.tolerances.projection <= 0.0 {
            return bad("tolerances must be positive");
        }
        if self.p > 2 {
            return bad("p above 2 is not supported");
        }
        if self.solver.k <= 0.0 || self.solver.nodes < 4 || self.solver.max_iter == 0 {
            return bad("solver keys out of range");
        }
        match (&self.base, &self.bundle) {
            (Some(b), Some(e)) => {
                if b.band_limit == 0 && b.kind != BaseKind::FlatTorus {
                    return bad("base.band_limit must be positive");
                }
                if e.degrees.len() < 2 {
                    return bad("bundle.degrees needs rank at least 2");
                }
                Ok(())
            }
            _ => bad("missing base or bundle keys"),
        }
    }

    /// Base manifold described by the base keys.
    pub fn base_manifold(&self) -> Result<BaseManifold> {
        let b = self.base.as_ref().ok_or_else(|| Error::InvalidInput("missing base keys".into()))?;
        let mut m = BaseManifold::with_band(b.kind, b.band_limit);
        if let Some(q) = b.quadrature_order {
            m = m.with_quadrature_order(q);
        }
        let e = self.bundle.as_ref().ok_or_else(|| Error::InvalidInput("missing bundle keys".into()))?;
        for p in &e.perturbation {
            if let PerturbationSpec::BasePotential { amplitude } = p {
                m = m.perturbed(MetricPerturbation {
                    amplitude: *amplitude,
                    eta: standard_field(b.kind),
                });
            }
        }
        Ok(m)
    }

    /// Hermitian bundle described by the base and bundle keys.
    pub fn bundle_data(&self) -> Result<HermitianBundleData> {
        let base = self.base_manifold()?;
        let kind = base.kind;
        let e = self.bundle.as_ref().ok_or_else(|| Error::InvalidInput("missing bundle keys".into()))?;
        let mut data = HermitianBundleData::new(base, e.degrees.clone())?;
        for p in &e.perturbation {
            let field = standard_field(kind);
            data = match *p {
                PerturbationSpec::Conformal { summand, amplitude } => data.with_perturbation(BundlePerturbation::Conformal {
                    summand,
                    amplitude,
                    field,
                })?,
                PerturbationSpec::OffDiagonal { i, j, amplitude } => data.with_perturbation(BundlePerturbation::OffDiagonal {
                    i,
                    j,
                    amplitude: C64::new(amplitude[0], amplitude[1]),
                    field,
                })?,
                PerturbationSpec::BasePotential { .. } => data,
            };
        }
        Ok(data)
    }

    /// `ks` as given.
    pub fn ks(&self) -> &[f64] {
        &self.ks
    }
}

/// Fixed smooth field used by named perturbations.
pub fn standard_field(kind: BaseKind) -> SpectralField {
    let mut q = SpectralField::zeros(kind, 2);
    let c = [0.0, 0.4, -0.3, 0.25, 0.15, -0.1, 0.2, 0.1, -0.05];
    for (x, v) in q.coeffs.iter_mut().zip(c) {
        *x = v;
    }
    q
}
