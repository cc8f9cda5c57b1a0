//! Elasticity of a porous solid partially filled with water.
//!
//! Tensors are 6×6 Voigt matrices with component order
//! `(xx, yy, zz, xy, yz, xz)` and engineering shear strains, so a stiffness
//! and its compliance are exact matrix inverses of each other.
//!
//! The mixture model takes the solid as matrix phase and water as spherical
//! inclusions and evaluates the dilute Eshelby estimate
//!
//! ```text
//! S_eff = [I + φ (Q − P)⁻¹] S_M,     Q = (C_M − C_I)⁻¹ C_M
//! ```
//!
//! bracketed by the elementwise Voigt (stiffness) and Reuss (compliance)
//! mixtures.

use nalgebra::{Matrix6, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inversions with a larger 2-norm condition number are refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaterialError {
    #[error("Poisson ratio 0.5 is incompressible: stiffness is singular")]
    Incompressible,
    #[error("{name} = {value} is outside its admissible range")]
    ParameterRange { name: &'static str, value: f64 },
    #[error("Lamé pair ({lambda}, {mu}) is inconsistent with E = {young}, ν = {poisson}")]
    LameMismatch {
        lambda: f64,
        mu: f64,
        young: f64,
        poisson: f64,
    },
    #[error("expected a {expected:?} tensor, got {found:?}")]
    KindMismatch { expected: TensorKind, found: TensorKind },
    #[error("fluid volume fraction {0} outside [0, 1]")]
    PhiRange(f64),
    #[error("{factor} is singular or ill-conditioned (condition number {condition:e})")]
    Singular { factor: &'static str, condition: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorKind {
    Stiffness,
    Compliance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticityTensor66 {
    pub matrix: Matrix6<f64>,
    pub kind: TensorKind,
}

impl ElasticityTensor66 {
    pub fn new(matrix: Matrix6<f64>, kind: TensorKind) -> Self {
        Self { matrix, kind }
    }

    pub fn expect_kind(&self, expected: TensorKind) -> Result<(), MaterialError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(MaterialError::KindMismatch {
                expected,
                found: self.kind,
            })
        }
    }

    /// Inverse with the opposite kind.
    pub fn inverse(&self, factor: &'static str) -> Result<Self, MaterialError> {
        let kind = match self.kind {
            TensorKind::Stiffness => TensorKind::Compliance,
            TensorKind::Compliance => TensorKind::Stiffness,
        };
        Ok(Self::new(checked_inverse(&self.matrix, factor)?, kind))
    }

    /// `max |a_ij − a_ji| / max |a_ij|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.matrix.amax();
        if scale == 0.0 {
            return 0.0;
        }
        (self.matrix - self.matrix.transpose()).amax() / scale
    }

    pub fn eigenvalues(&self) -> [f64; 6] {
        symmetric_eigenvalues(&self.matrix)
    }

    /// Spectral norm of the symmetric part.
    pub fn norm(&self) -> f64 {
        self.eigenvalues().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.eigenvalues()[0] > 0.0
    }
}

/// Ascending eigenvalues of the symmetric part of `m`.
pub fn symmetric_eigenvalues(m: &Matrix6<f64>) -> [f64; 6] {
    let sym = (m + m.transpose()) * 0.5;
    let mut e: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    e.sort_by(f64::total_cmp);
    [e[0], e[1], e[2], e[3], e[4], e[5]]
}

/// 2-norm condition number via singular values.
pub fn condition_number(m: &Matrix6<f64>) -> f64 {
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Partial-pivoting LU inverse that refuses ill-conditioned input.
pub fn checked_inverse(m: &Matrix6<f64>, factor: &'static str) -> Result<Matrix6<f64>, MaterialError> {
    let condition = condition_number(m);
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(MaterialError::Singular { factor, condition });
    }
    m.lu()
        .try_inverse()
        .ok_or(MaterialError::Singular { factor, condition })
}

/// Isotropic linear elastic solid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicElasticParams {
    pub young_modulus: f64,
    pub poisson_ratio: f64,
}

impl IsotropicElasticParams {
    pub fn new(young_modulus: f64, poisson_ratio: f64) -> Result<Self, MaterialError> {
        let p = Self {
            young_modulus,
            poisson_ratio,
        };
        p.validate()?;
        Ok(p)
    }

    /// From bulk and shear moduli.
    pub fn from_bulk_shear(bulk: f64, shear: f64) -> Result<Self, MaterialError> {
        if !(bulk > 0.0) {
            return Err(MaterialError::ParameterRange {
                name: "bulk_modulus",
                value: bulk,
            });
        }
        if !(shear > 0.0) {
            return Err(MaterialError::ParameterRange {
                name: "shear_modulus",
                value: shear,
            });
        }
        Self::new(
            9.0 * bulk * shear / (3.0 * bulk + shear),
            (3.0 * bulk - 2.0 * shear) / (2.0 * (3.0 * bulk + shear)),
        )
    }

    /// Checks a user-supplied Lamé pair against `(E, ν)` to 1e-9 relative.
    pub fn with_lame(young_modulus: f64, poisson_ratio: f64, lambda: f64, mu: f64) -> Result<Self, MaterialError> {
        let p = Self::new(young_modulus, poisson_ratio)?;
        let (l, m) = p.lame();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE);
        if !close(l, lambda) || !close(m, mu) {
            return Err(MaterialError::LameMismatch {
                lambda,
                mu,
                young: young_modulus,
                poisson: poisson_ratio,
            });
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), MaterialError> {
        if !(self.young_modulus > 0.0) || !self.young_modulus.is_finite() {
            return Err(MaterialError::ParameterRange {
                name: "young_modulus",
                value: self.young_modulus,
            });
        }
        if self.poisson_ratio == 0.5 {
            return Err(MaterialError::Incompressible);
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(MaterialError::ParameterRange {
                name: "poisson_ratio",
                value: self.poisson_ratio,
            });
        }
        Ok(())
    }

    /// `(λ, μ)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.young_modulus, self.poisson_ratio);
        (e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)), e / (2.0 * (1.0 + nu)))
    }

    pub fn bulk_modulus(&self) -> f64 {
        self.young_modulus / (3.0 * (1.0 - 2.0 * self.poisson_ratio))
    }

    pub fn shear_modulus(&self) -> f64 {
        self.lame().1
    }
}

fn isotropic_matrix(diag: f64, off: f64, shear: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            m[(i, j)] = if i == j { diag } else { off };
        }
        m[(i + 3, i + 3)] = shear;
    }
    m
}

/// Isotropic Hooke stiffness.
pub fn iso_to_stiffness(params: &IsotropicElasticParams) -> Result<ElasticityTensor66, MaterialError> {
    params.validate()?;
    let (lambda, mu) = params.lame();
    Ok(ElasticityTensor66::new(
        isotropic_matrix(lambda + 2.0 * mu, lambda, mu),
        TensorKind::Stiffness,
    ))
}

/// Isotropic compliance, the closed-form inverse of [`iso_to_stiffness`].
pub fn iso_to_compliance(params: &IsotropicElasticParams) -> Result<ElasticityTensor66, MaterialError> {
    params.validate()?;
    let (e, nu) = (params.young_modulus, params.poisson_ratio);
    Ok(ElasticityTensor66::new(
        isotropic_matrix(1.0 / e, -nu / e, 2.0 * (1.0 + nu) / e),
        TensorKind::Compliance,
    ))
}

fn check_phi(phi: f64) -> Result<(), MaterialError> {
    if (0.0..=1.0).contains(&phi) {
        Ok(())
    } else {
        Err(MaterialError::PhiRange(phi))
    }
}

/// Elementwise stiffness mixture `(1 − φ) C_s + φ C_w`.
pub fn voigt_upper(
    solid: &ElasticityTensor66,
    water: &ElasticityTensor66,
    phi: f64,
) -> Result<ElasticityTensor66, MaterialError> {
    solid.expect_kind(TensorKind::Stiffness)?;
    water.expect_kind(TensorKind::Stiffness)?;
    check_phi(phi)?;
    Ok(ElasticityTensor66::new(
        solid.matrix * (1.0 - phi) + water.matrix * phi,
        TensorKind::Stiffness,
    ))
}

/// Elementwise compliance mixture `(1 − φ) S_s + φ S_w`.
pub fn reuss_lower(
    solid: &ElasticityTensor66,
    water: &ElasticityTensor66,
    phi: f64,
) -> Result<ElasticityTensor66, MaterialError> {
    solid.expect_kind(TensorKind::Compliance)?;
    water.expect_kind(TensorKind::Compliance)?;
    check_phi(phi)?;
    Ok(ElasticityTensor66::new(
        solid.matrix * (1.0 - phi) + water.matrix * phi,
        TensorKind::Compliance,
    ))
}

/// Dimensionless Eshelby tensor in engineering-strain Voigt form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EshelbyTensor {
    pub matrix: Matrix6<f64>,
}

impl EshelbyTensor {
    /// `(S1111, S1122, S1212)` tensor components.
    pub fn components(&self) -> (f64, f64, f64) {
        (self.matrix[(0, 0)], self.matrix[(0, 1)], self.matrix[(3, 3)] / 2.0)
    }
}

/// Eshelby tensor of a spherical inclusion in an isotropic matrix with
/// Poisson ratio `nu`. The shear diagonal carries `2·S1212` because strains
/// are engineering strains.
pub fn eshelby_spherical(nu: f64) -> Result<EshelbyTensor, MaterialError> {
    if !(nu > -1.0 && nu < 0.5) {
        return Err(MaterialError::ParameterRange {
            name: "matrix_poisson_ratio",
            value: nu,
        });
    }
    let d = 15.0 * (1.0 - nu);
    let s1111 = (7.0 - 5.0 * nu) / d;
    let s1122 = (5.0 * nu - 1.0) / d;
    let s1212 = (4.0 - 5.0 * nu) / d;
    Ok(EshelbyTensor {
        matrix: isotropic_matrix(s1111, s1122, 2.0 * s1212),
    })
}

/// Effective compliance of matrix `M` with a volume fraction `phi` of
/// inclusions `I`, returned symmetrized.
pub fn effective_compliance(
    matrix_stiffness: &ElasticityTensor66,
    matrix_compliance: &ElasticityTensor66,
    inclusion_stiffness: &ElasticityTensor66,
    eshelby: &EshelbyTensor,
    phi: f64,
) -> Result<ElasticityTensor66, MaterialError> {
    matrix_stiffness.expect_kind(TensorKind::Stiffness)?;
    matrix_compliance.expect_kind(TensorKind::Compliance)?;
    inclusion_stiffness.expect_kind(TensorKind::Stiffness)?;
    check_phi(phi)?;
    let c_m = &matrix_stiffness.matrix;
    let contrast = checked_inverse(&(c_m - inclusion_stiffness.matrix), "C_M - C_I")?;
    let q = contrast * c_m;
    let k = checked_inverse(&(q - eshelby.matrix), "Q - P")?;
    let s = (Matrix6::identity() + k * phi) * matrix_compliance.matrix;
    Ok(ElasticityTensor66::new(
        (s + s.transpose()) * 0.5,
        TensorKind::Compliance,
    ))
}

/// Outcome of a Löwner-order sandwich test `(S_R)⁻¹ ⪯ C_eff ⪯ C_V`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsReport {
    pub within: bool,
    /// Smallest eigenvalue of `C_V − C_eff`.
    pub upper_margin: f64,
    /// Smallest eigenvalue of `C_eff − (S_R)⁻¹`.
    pub lower_margin: f64,
    /// Allowed negative slack, `rel_tol · ‖C_V‖`.
    pub tolerance: f64,
}

pub fn bounds_check(
    effective_stiffness: &ElasticityTensor66,
    voigt: &ElasticityTensor66,
    reuss: &ElasticityTensor66,
    rel_tol: f64,
) -> Result<BoundsReport, MaterialError> {
    effective_stiffness.expect_kind(TensorKind::Stiffness)?;
    voigt.expect_kind(TensorKind::Stiffness)?;
    reuss.expect_kind(TensorKind::Compliance)?;
    let reuss_stiffness = checked_inverse(&reuss.matrix, "S_R")?;
    let upper_margin = symmetric_eigenvalues(&(voigt.matrix - effective_stiffness.matrix))[0];
    let lower_margin = symmetric_eigenvalues(&(effective_stiffness.matrix - reuss_stiffness))[0];
    let tolerance = rel_tol * voigt.norm();
    Ok(BoundsReport {
        within: upper_margin >= -tolerance && lower_margin >= -tolerance,
        upper_margin,
        lower_margin,
        tolerance,
    })
}

/// Solid/water pairing with everything that does not depend on φ precomputed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    pub water_bulk_modulus: f64,
    /// Water shear modulus as a fraction of the solid's.
    pub water_shear_regularizer: f64,
}

impl Default for MixtureParams {
    fn default() -> Self {
        Self {
            water_bulk_modulus: 2.2e9,
            water_shear_regularizer: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mixture {
    pub solid: IsotropicElasticParams,
    pub solid_stiffness: ElasticityTensor66,
    pub solid_compliance: ElasticityTensor66,
    pub water_stiffness: ElasticityTensor66,
    pub water_compliance: ElasticityTensor66,
    pub eshelby: EshelbyTensor,
}

impl Mixture {
    pub fn new(solid: IsotropicElasticParams, params: MixtureParams) -> Result<Self, MaterialError> {
        if !(params.water_shear_regularizer > 0.0 && params.water_shear_regularizer < 1.0) {
            return Err(MaterialError::ParameterRange {
                name: "eps_mu",
                value: params.water_shear_regularizer,
            });
        }
        let water = IsotropicElasticParams::from_bulk_shear(
            params.water_bulk_modulus,
            params.water_shear_regularizer * solid.shear_modulus(),
        )?;
        // Build water stiffness from (K, μ) directly; going through (E, ν) loses
        // the bulk term to cancellation when ν is this close to 1/2.
        let mu_w = params.water_shear_regularizer * solid.shear_modulus();
        let lambda_w = params.water_bulk_modulus - 2.0 * mu_w / 3.0;
        Ok(Self {
            solid,
            solid_stiffness: iso_to_stiffness(&solid)?,
            solid_compliance: iso_to_compliance(&solid)?,
            water_stiffness: ElasticityTensor66::new(
                isotropic_matrix(lambda_w + 2.0 * mu_w, lambda_w, mu_w),
                TensorKind::Stiffness,
            ),
            water_compliance: iso_to_compliance(&water)?,
            eshelby: eshelby_spherical(solid.poisson_ratio)?,
        })
    }

    pub fn effective_compliance(&self, phi: f64) -> Result<ElasticityTensor66, MaterialError> {
        effective_compliance(
            &self.solid_stiffness,
            &self.solid_compliance,
            &self.water_stiffness,
            &self.eshelby,
            phi,
        )
    }

    /// Effective stiffness; exactly the solid stiffness at `phi == 0`.
    pub fn effective_stiffness(&self, phi: f64) -> Result<ElasticityTensor66, MaterialError> {
        if phi == 0.0 {
            return Ok(self.solid_stiffness);
        }
        let s = self.effective_compliance(phi)?;
        let c = s.inverse("S_eff")?;
        Ok(ElasticityTensor66::new((c.matrix + c.matrix.transpose()) * 0.5, c.kind))
    }

    pub fn voigt(&self, phi: f64) -> Result<ElasticityTensor66, MaterialError> {
        voigt_upper(&self.solid_stiffness, &self.water_stiffness, phi)
    }

    pub fn reuss(&self, phi: f64) -> Result<ElasticityTensor66, MaterialError> {
        reuss_lower(&self.solid_compliance, &self.water_compliance, phi)
    }

    /// Largest φ below which the effective stiffness stays positive definite:
    /// the bulk factor `1 + φ / (K_M/(K_M − K_I) − α)` reaches zero there.
    pub fn admissible_phi_limit(&self) -> f64 {
        let k_m = self.solid.bulk_modulus();
        let k_i = (self.water_stiffness.matrix[(0, 0)] + 2.0 * self.water_stiffness.matrix[(0, 1)]) / 3.0;
        let (s1111, s1122, _) = self.eshelby.components();
        let alpha = s1111 + 2.0 * s1122;
        let denom = k_m / (k_m - k_i) - alpha;
        if denom >= 0.0 {
            f64::INFINITY
        } else {
            -denom
        }
    }
}
