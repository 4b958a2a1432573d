//! Uhlmann fidelity and its projector-channel form.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const DENSE_DIM_CAP: usize = 64;

pub fn pure_density(psi: &CVector) -> CMatrix {
    psi * psi.adjoint()
}

trait MaxAbs {
    fn max_abs(&self) -> f64;
}

impl MaxAbs for CMatrix {
    fn max_abs(&self) -> f64 {
        self.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}

fn check_density(m: &CMatrix) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() > DENSE_DIM_CAP {
        return Err(Error::Dimensions(format!(
            "density matrix must be square with dim <= {DENSE_DIM_CAP}"
        )));
    }
    let herm = (m - m.adjoint()).max_abs();
    if herm > 1e-10 {
        return Err(Error::Parameter(format!(
            "matrix is not Hermitian (deviation {herm:e})"
        )));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::Parameter(format!("trace {tr} differs from 1")));
    }
    Ok(())
}

/// `√M` of a Hermitian PSD matrix; eigenvalues below -1e-10 are rejected and
/// those within roundoff of zero are dropped.
fn psd_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let eig = super::hermitian_eigen(m.clone());
    if let Some(&bad) = eig.eigenvalues.iter().find(|&&l| l < -1e-10) {
        return Err(Error::Parameter(format!(
            "matrix is not positive semidefinite (eigenvalue {bad:e})"
        )));
    }
    let floor = 1e-14 * eig.eigenvalues.amax().max(1e-300);
    let d = CMatrix::from_diagonal(
        &eig.eigenvalues
            .map(|l| C64::new(if l > floor { l.sqrt() } else { 0.0 }, 0.0)),
    );
    Ok(&eig.eigenvectors * d * eig.eigenvectors.adjoint())
}

/// `F(ρ, σ) = (tr √(√ρ σ √ρ))² = ‖√ρ √σ‖₁²`, via singular values.
pub fn fidelity_direct(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    check_density(rho)?;
    check_density(sigma)?;
    if rho.shape() != sigma.shape() {
        return Err(Error::Dimensions("density matrices differ in size".into()));
    }
    let m = psd_sqrt(rho)? * psd_sqrt(sigma)?;
    let tr: f64 = m.singular_values().iter().sum();
    Ok(tr * tr)
}

/// Channel `ℰ_p = ∘_j [(1-p)ρ + p O_j ρ O_j]` for commuting Hermitian `O_j` with `O_j² = 1`.
/// At `p = ½` it is the projector channel `Σ_s P_s ρ P_s`, `P_s = ∏_j (1 + s_j O_j)/2`.
#[derive(Clone, Debug)]
pub struct ProjectorChannel {
    ops: Vec<CMatrix>,
}

impl ProjectorChannel {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let Some(dim) = ops.first().map(|o| o.nrows()) else {
            return Err(Error::Parameter(
                "channel needs at least one operator".into(),
            ));
        };
        if dim > DENSE_DIM_CAP {
            return Err(Error::CapExceeded {
                size: dim,
                cap: DENSE_DIM_CAP,
            });
        }
        let id = CMatrix::identity(dim, dim);
        for (j, o) in ops.iter().enumerate() {
            if o.shape() != (dim, dim) {
                return Err(Error::Dimensions(format!(
                    "operator {j} has the wrong shape"
                )));
            }
            if (o * o - &id).max_abs() > 1e-10 || (o - o.adjoint()).max_abs() > 1e-10 {
                return Err(Error::Parameter(format!(
                    "operator {j} is not a Hermitian involution"
                )));
            }
            for (k, q) in ops.iter().enumerate().take(j) {
                if (o * q - q * o).max_abs() > 1e-10 {
                    return Err(Error::Parameter(format!(
                        "operators {k} and {j} do not commute"
                    )));
                }
            }
        }
        Ok(ProjectorChannel { ops })
    }

    pub fn dim(&self) -> usize {
        self.ops[0].nrows()
    }

    pub fn apply(&self, rho: &CMatrix, p: f64) -> CMatrix {
        let mut out = rho.clone();
        for o in &self.ops {
            out = &out * C64::new(1.0 - p, 0.0) + (o * &out * o) * C64::new(p, 0.0);
        }
        out
    }

    /// `P_s|ψ⟩` for all sign patterns s.
    pub fn branches(&self, psi: &CVector) -> Vec<CVector> {
        let dim = self.dim();
        let id = CMatrix::identity(dim, dim);
        let half = C64::new(0.5, 0.0);
        let mut out = vec![psi.clone()];
        for o in &self.ops {
            let plus = (&id + o) * half;
            let minus = (&id - o) * half;
            out = out.iter().flat_map(|v| [&plus * v, &minus * v]).collect();
        }
        out
    }
}

/// Normalized state with uniform random real and imaginary parts in [-1, 1).
pub fn random_state(dim: usize, rng: &mut impl Rng) -> CVector {
    CVector::from_fn(dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    })
    .normalize()
}

/// `k` commuting involutions `U D_j U†` sharing one random unitary, `D_j` random ±1 diagonals.
pub fn random_commuting_channel(dim: usize, k: usize, rng: &mut impl Rng) -> Result<ProjectorChannel> {
    let m = CMatrix::from_fn(dim, dim, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let u = m.qr().q();
    let ops = (0..k)
        .map(|_| {
            let d = CMatrix::from_diagonal(&CVector::from_fn(dim, |_, _| {
                C64::new(if rng.random_bool(0.5) { 1.0 } else { -1.0 }, 0.0)
            }));
            &u * d * u.adjoint()
        })
        .collect();
    ProjectorChannel::new(ops)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FidelityCheck {
    /// `Σ_s |⟨ψ_s|φ_s⟩|`.
    pub formula: f64,
    /// `√F(ℰ_½ ρ_ψ, ℰ_½ ρ_φ)`.
    pub direct_sqrt: f64,
    pub deviation: f64,
    /// `(p, F(ℰ_p ρ_ψ, ℰ_p ρ_φ))` for each sampled rate.
    pub processing: Vec<(f64, f64)>,
}

/// Average-overlap form of the fidelity after the projector channel, checked
/// against the direct fidelity (≤ 1e-8) and against data processing: for every
/// sampled p, `F(ℰ_p ρ, ℰ_p σ) ≤ F(ℰ_½ ρ, ℰ_½ σ)`.
pub fn fidelity_projector_formula(
    psi: &CVector,
    phi: &CVector,
    channel: &ProjectorChannel,
    p_samples: &[f64],
) -> Result<FidelityCheck> {
    for v in [psi, phi] {
        if v.len() != channel.dim() {
            return Err(Error::Dimensions(
                "state and channel dimensions differ".into(),
            ));
        }
        if (v.norm() - 1.0).abs() > 1e-10 {
            return Err(Error::Parameter("states must be normalized".into()));
        }
    }
    let formula: f64 = channel
        .branches(psi)
        .iter()
        .zip(channel.branches(phi))
        .map(|(a, b)| a.dotc(&b).norm())
        .sum();
    let (rp, rf) = (pure_density(psi), pure_density(phi));
    let f_half = fidelity_direct(&channel.apply(&rp, 0.5), &channel.apply(&rf, 0.5))?;
    let direct_sqrt = f_half.sqrt();
    let deviation = (formula - direct_sqrt).abs();
    if deviation > 1e-8 {
        return Err(Error::Other(format!(
            "projector formula {formula} differs from direct {direct_sqrt}"
        )));
    }
    let mut processing = Vec::with_capacity(p_samples.len());
    for &p in p_samples {
        if !(0.0..=0.5).contains(&p) {
            return Err(Error::Parameter(format!(
                "sampled p must lie in [0, 1/2], got {p}"
            )));
        }
        let f = fidelity_direct(&channel.apply(&rp, p), &channel.apply(&rf, p))?;
        if f > f_half + 1e-9 {
            return Err(Error::Other(format!(
                "data processing violated at p={p}: {f} > {f_half}"
            )));
        }
        processing.push((p, f));
    }
    Ok(FidelityCheck {
        formula,
        direct_sqrt,
        deviation,
        processing,
    })
}
