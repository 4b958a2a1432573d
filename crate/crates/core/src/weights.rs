//! Loop weights f(L) and partition-function summands.
//!
//! Every weight carries its sign and the log of its magnitude; `value()` converts.
//! Constants dropped from the Rényi and purity summands are fixed by the
//! normalization "empty configuration weighs 1".

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kitaev::KitaevWeight;
use crate::lattice::{LatticeKind, LatticeTorus, LoopConfig};
use crate::qdouble::GroupTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Weight {
    pub log_abs: f64,
    pub sign: f64,
}

impl Weight {
    pub const ONE: Weight = Weight {
        log_abs: 0.0,
        sign: 1.0,
    };
    pub const ZERO: Weight = Weight {
        log_abs: f64::NEG_INFINITY,
        sign: 0.0,
    };

    pub fn from_value(v: f64) -> Self {
        if v == 0.0 {
            Weight::ZERO
        } else {
            Weight {
                log_abs: v.abs().ln(),
                sign: v.signum(),
            }
        }
    }

    pub fn value(&self) -> f64 {
        if self.sign == 0.0 {
            0.0
        } else {
            self.sign * self.log_abs.exp()
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sign == 0.0
    }

    pub fn mul(self, o: Weight) -> Weight {
        if self.is_zero() || o.is_zero() {
            Weight::ZERO
        } else {
            Weight {
                log_abs: self.log_abs + o.log_abs,
                sign: self.sign * o.sign,
            }
        }
    }
}

/// `x^k` in log space, with `0^0 = 1`.
fn pow_log(x: f64, k: usize) -> Weight {
    if k == 0 {
        Weight::ONE
    } else if x == 0.0 {
        Weight::ZERO
    } else {
        Weight {
            log_abs: k as f64 * x.abs().ln(),
            sign: if x < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 },
        }
    }
}

/// Per-edge tension contributed by uncorrelated noise of rate p, (p−p²)/(p²−p+½).
pub fn decoherence_factor(p: f64) -> f64 {
    (p - p * p) / (p * p - p + 0.5)
}

/// External tension 2p(1−p)/(p²+(1−p)²); equal to `decoherence_factor`.
pub fn t_ext(p: f64) -> f64 {
    2.0 * p * (1.0 - p) / (p * p + (1.0 - p) * (1.0 - p))
}

/// Inverse of `t_ext` on p ∈ [0, ½].
pub fn p_from_t_ext(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Parameter(format!("t_ext must lie in [0, 1], got {t}")));
    }
    // with u = p(1−p): t = 2u/(1−2u)
    let u = t / (2.0 * (1.0 + t));
    Ok((1.0 - (1.0 - 4.0 * u).max(0.0).sqrt()) / 2.0)
}

fn check_tension(t: f64, n: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Parameter(format!(
            "tension must be non-negative, got {t}"
        )));
    }
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::Parameter(format!(
            "loop weight must be positive, got {n}"
        )));
    }
    Ok(())
}

fn check_rate(p: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&p) {
        return Err(Error::Parameter(format!(
            "error rate must lie in [0, 1/2], got {p}"
        )));
    }
    Ok(())
}

/// 1 if L has no boundary, else 0. Closure is not assumed.
pub fn weight_abelian(lat: &LatticeTorus, l: &LoopConfig) -> u8 {
    u8::from(lat.is_closed(l))
}

/// t^|L| · N^C(L).
pub fn weight_topological(lat: &LatticeTorus, l: &LoopConfig, t: f64, n: f64) -> Result<Weight> {
    check_tension(t, n)?;
    let c = lat.cyclomatic_number(l)?;
    Ok(pow_log(t, l.len()).mul(pow_log(n, c)))
}

/// Purity summand: decoherence_factor(p)^|L| · t_a^(2|L|) · d_a^(2C).
pub fn weight_purity(
    lat: &LatticeTorus,
    l: &LoopConfig,
    p: f64,
    t_a: f64,
    d_a: f64,
) -> Result<Weight> {
    check_rate(p)?;
    let top = weight_topological(lat, l, t_a, d_a)?;
    Ok(pow_log(decoherence_factor(p), l.len()).mul(top).mul(top))
}

/// One summand of Z_η: (∏_{n∈L} η_n) · t_a^|L| · d_a^C. Sites are edges.
pub fn weight_signed(
    lat: &LatticeTorus,
    l: &LoopConfig,
    eta: &[i8],
    t_a: f64,
    d_a: f64,
) -> Result<Weight> {
    if eta.len() != lat.n_edges() || eta.iter().any(|&s| s != 1 && s != -1) {
        return Err(Error::Parameter("η must hold ±1 for every site".into()));
    }
    let mut w = weight_topological(lat, l, t_a, d_a)?;
    if l.edges.ones().filter(|&e| eta[e] < 0).count() % 2 == 1 {
        w.sign = -w.sign;
    }
    Ok(w)
}

/// ∏_s t_a^|L_s| d_a^C(L_s), subject to L_1 ⊕ … ⊕ L_n = ∅.
pub fn renyi_summand(lat: &LatticeTorus, ls: &[LoopConfig], t_a: f64, d_a: f64) -> Result<Weight> {
    if ls.len() < 2 {
        return Err(Error::Parameter("need at least two replicas".into()));
    }
    let mut acc = lat.empty_config();
    for l in ls {
        acc = acc.xor(l);
    }
    if !acc.is_empty() {
        return Err(Error::Parameter(
            "replica configurations do not XOR to the empty set".into(),
        ));
    }
    ls.iter().try_fold(Weight::ONE, |w, l| {
        Ok(w.mul(weight_topological(lat, l, t_a, d_a)?))
    })
}

/// |[g]|^C(shadow) / |[g]|^|shadow| for a red flux loop on the honeycomb dual of
/// the triangular lattice. Branched loops weigh exactly zero.
pub fn weight_quantum_double(
    lat: &LatticeTorus,
    l: &LoopConfig,
    group: &GroupTable,
    g: usize,
) -> Result<Weight> {
    if g == group.identity() || group.mul(g, g) != group.identity() {
        return Err(Error::Parameter(
            "g must be a non-trivial involution".into(),
        ));
    }
    let shadow = match lat.shadow(l) {
        Ok(s) => s,
        Err(Error::Branched { .. }) => return Ok(Weight::ZERO),
        Err(e) => return Err(e),
    };
    let sq = LatticeTorus::build(LatticeKind::Square, lat.lx(), lat.ly())?;
    let d = group.class_size(g) as f64;
    let c = sq.cyclomatic_number(&shadow)?;
    Ok(pow_log(d, c).mul(pow_log(1.0 / d, shadow.len())))
}

/// A loop weight bound to its parameters.
#[derive(Clone)]
pub enum WeightModel {
    AbelianIndicator,
    Topological { n: f64, t: f64 },
    SignedEta { n: f64, t: f64, eta: Vec<i8> },
    Purity { n: f64, t: f64, p: f64 },
    QuantumDouble { group: Arc<GroupTable>, g: usize },
    Fermionic(Arc<KitaevWeight>),
}

impl std::fmt::Debug for WeightModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WeightModel::AbelianIndicator => write!(f, "AbelianIndicator"),
            WeightModel::Topological { n, t } => write!(f, "Topological {{ n: {n}, t: {t} }}"),
            WeightModel::SignedEta { n, t, .. } => write!(f, "SignedEta {{ n: {n}, t: {t} }}"),
            WeightModel::Purity { n, t, p } => write!(f, "Purity {{ n: {n}, t: {t}, p: {p} }}"),
            WeightModel::QuantumDouble { group, g } => {
                write!(f, "QuantumDouble {{ group: {}, g: {g} }}", group.name())
            }
            WeightModel::Fermionic(k) => write!(f, "Fermionic({:?})", k.variant()),
        }
    }
}

impl WeightModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightModel::AbelianIndicator | WeightModel::Fermionic(_) => Ok(()),
            WeightModel::Topological { n, t } | WeightModel::SignedEta { n, t, .. } => {
                check_tension(*t, *n)
            }
            WeightModel::Purity { n, t, p } => {
                check_tension(*t, *n)?;
                check_rate(*p)
            }
            WeightModel::QuantumDouble { group, g } => {
                if *g == group.identity() || group.mul(*g, *g) != group.identity() {
                    Err(Error::Parameter(
                        "g must be a non-trivial involution".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn evaluate(&self, lat: &LatticeTorus, l: &LoopConfig) -> Result<Weight> {
        match self {
            WeightModel::AbelianIndicator => Ok(Weight::from_value(weight_abelian(lat, l) as f64)),
            WeightModel::Topological { n, t } => weight_topological(lat, l, *t, *n),
            WeightModel::SignedEta { n, t, eta } => weight_signed(lat, l, eta, *t, *n),
            WeightModel::Purity { n, t, p } => weight_purity(lat, l, *p, *t, *n),
            WeightModel::QuantumDouble { group, g } => weight_quantum_double(lat, l, group, *g),
            WeightModel::Fermionic(k) => k.weight_of_loop(lat, l),
        }
    }

    /// Whether every weight is non-negative, as Metropolis sampling requires.
    pub fn is_non_negative(&self) -> bool {
        !matches!(self, WeightModel::SignedEta { .. })
    }
}
