//! Model coefficients, drift fields, confining weights and the mean-voltage
//! functional.
//!
//! Every sign convention lives here. The kinetic equation is written in
//! divergence form
//!
//! ```text
//! ∂t f = ∂x(A f) + ∂v(B f) + D ∂vv f,   A = a x - b v,
//! B = v (v - λ)(v - 1) + x - ε (v - j) + I0,   D = σ² / 2,
//! ```
//!
//! so the phase-space velocity of a single neuron is `(-A, -B)`. Particle
//! simulations use exactly that velocity, which makes the particle system and
//! the PDE agree by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction of the electrical coupling term.
///
/// `Repulsive` is the canonical form `-ε (v - j)` inside `B`, equivalently
/// `+J (v_i - v_j)` in the voltage drift of each neuron. `Attractive` flips the
/// sign, giving the diffusive gap-junction coupling `J (v_j - v_i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingSign {
    #[default]
    Repulsive,
    Attractive,
}

impl CouplingSign {
    /// `+1` for the canonical repulsive form, `-1` otherwise.
    #[inline]
    pub fn factor(self) -> f64 {
        match self {
            CouplingSign::Repulsive => 1.0,
            CouplingSign::Attractive => -1.0,
        }
    }
}

/// Scalar coefficients of the FitzHugh-Nagumo system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub i0: f64,
    pub eps: f64,
    pub sigma: f64,
    #[serde(default)]
    pub coupling: CouplingSign,
    /// Use `+I0` in the particle voltage drift, as in the literal network
    /// equations. The PDE keeps `+I0` inside `B`, so with this flag set the
    /// particles correspond to the PDE with `I0 -> -I0`.
    #[serde(default)]
    pub paper_sde_signs: bool,
}

impl ModelParams {
    pub fn new(a: f64, b: f64, lambda: f64, i0: f64, eps: f64, sigma: f64) -> Result<Self> {
        let p = Self {
            a,
            b,
            lambda,
            i0,
            eps,
            sigma,
            coupling: CouplingSign::default(),
            paper_sde_signs: false,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("a", self.a),
            ("b", self.b),
            ("lambda", self.lambda),
            ("i0", self.i0),
            ("eps", self.eps),
            ("sigma", self.sigma),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::InvalidParams(format!("{name} = {value} is not finite")));
            }
        }
        if self.a <= 0.0 {
            return Err(Error::InvalidParams(format!("a = {} must be > 0", self.a)));
        }
        if self.b <= 0.0 {
            return Err(Error::InvalidParams(format!("b = {} must be > 0", self.b)));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidParams(format!("sigma = {} must be > 0", self.sigma)));
        }
        if self.eps < 0.0 {
            return Err(Error::InvalidParams(format!("eps = {} must be >= 0", self.eps)));
        }
        Ok(())
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_coupling(mut self, coupling: CouplingSign) -> Self {
        self.coupling = coupling;
        self
    }

    /// Diffusion coefficient `D = σ²/2` of the voltage variable.
    #[inline]
    pub fn diffusion(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }
}

/// `A(x, v) = a x - b v`.
#[inline]
pub fn drift_a(x: f64, v: f64, p: &ModelParams) -> f64 {
    p.a * x - p.b * v
}

/// `B(x, v; ε, j) = v (v - λ)(v - 1) + x - ε (v - j) + I0` (repulsive sign).
#[inline]
pub fn drift_b(x: f64, v: f64, j: f64, p: &ModelParams) -> f64 {
    v * (v - p.lambda) * (v - 1.0) + x - p.coupling.factor() * p.eps * (v - j) + p.i0
}

/// Voltage drift of a single neuron, `-B`.
#[inline]
pub fn sde_drift_v(x: f64, v: f64, j: f64, p: &ModelParams) -> f64 {
    let drift = -drift_b(x, v, j, p);
    if p.paper_sde_signs {
        drift + 2.0 * p.i0
    } else {
        drift
    }
}

/// Adaptation drift of a single neuron, `-A = -a x + b v`.
#[inline]
pub fn sde_drift_x(x: f64, v: f64, p: &ModelParams) -> f64 {
    -drift_a(x, v, p)
}

/// Polynomial weight `M = 1 + x²/2 + v²/2`.
#[inline]
pub fn weight_big_m(x: f64, v: f64) -> f64 {
    1.0 + 0.5 * x * x + 0.5 * v * v
}

/// Parameters of the exponential weight `m = exp(κ (M - 1))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub kappa: f64,
    /// Cells where `κ (M - 1)` exceeds this value are dropped from weighted
    /// quadratures. The default keeps `m <= 1e300`.
    #[serde(default = "default_clip_log")]
    pub clip_log: f64,
}

fn default_clip_log() -> f64 {
    300.0 * std::f64::consts::LN_10
}

impl WeightParams {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParams(format!("kappa = {kappa} must be > 0")));
        }
        Ok(Self {
            kappa,
            clip_log: default_clip_log(),
        })
    }

    /// `ln m(x, v)`, or `None` beyond the clip radius.
    #[inline]
    pub fn log_weight(&self, x: f64, v: f64) -> Option<f64> {
        let lw = self.kappa * (weight_big_m(x, v) - 1.0);
        (lw <= self.clip_log).then_some(lw)
    }
}

impl Default for WeightParams {
    fn default() -> Self {
        Self {
            kappa: 0.25,
            clip_log: default_clip_log(),
        }
    }
}

/// `m(x, v) = exp(κ (M(x, v) - 1))`. Overflows to `inf` far outside the clip
/// radius; weighted norms go through [`WeightParams::log_weight`] instead.
#[inline]
pub fn weight_m(x: f64, v: f64, w: &WeightParams) -> f64 {
    (w.kappa * (weight_big_m(x, v) - 1.0)).exp()
}

/// `value * exp(log_weight)` evaluated without intermediate overflow.
#[inline]
pub(crate) fn weighted(value: f64, log_weight: f64) -> f64 {
    if value == 0.0 {
        0.0
    } else if log_weight < 700.0 {
        value * log_weight.exp()
    } else {
        value.signum() * (value.abs().ln() + log_weight).exp()
    }
}

/// Anything with a well-defined mean voltage `∫ v f / ∫ f`.
pub trait MeanVoltage {
    fn mean_voltage(&self) -> Result<f64>;
}

/// Linear stability class of an equilibrium of the noiseless single-neuron ODE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    StableNode,
    StableFocus,
    Saddle,
    UnstableNode,
    UnstableFocus,
    /// Some eigenvalue has zero real part.
    Degenerate,
}

impl Stability {
    pub fn is_stable(self) -> bool {
        matches!(self, Stability::StableNode | Stability::StableFocus)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub x: f64,
    pub v: f64,
    pub stability: Stability,
}

/// Real roots of the monic cubic `z³ + c2 z² + c1 z + c0`, ascending.
pub fn real_cubic_roots(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    // depressed cubic t³ + p t + q with z = t - c2/3
    let shift = c2 / 3.0;
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2 * c2 * c2 / 27.0 - c2 * c1 / 3.0 + c0;
    let disc = -(4.0 * p * p * p + 27.0 * q * q);
    let scale = 1.0 + c2.abs() + c1.abs() + c0.abs();
    let mut roots = if p.abs() <= 1e-14 * scale && q.abs() <= 1e-14 * scale {
        vec![0.0]
    } else if disc > 1e-12 * scale.powi(3) {
        let r = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * r)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3)
            .map(|k| r * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos())
            .collect()
    } else if disc < -1e-12 * scale.powi(3) {
        let d = (q * q / 4.0 + p * p * p / 27.0).sqrt();
        vec![(-q / 2.0 + d).cbrt() + (-q / 2.0 - d).cbrt()]
    } else {
        // repeated root
        let t1 = 3.0 * q / p;
        let t2 = -3.0 * q / (2.0 * p);
        vec![t1, t2]
    };
    for t in roots.iter_mut() {
        *t -= shift;
        // polish against rounding in the closed form
        for _ in 0..3 {
            let f = ((*t + c2) * *t + c1) * *t + c0;
            let df = (3.0 * *t + 2.0 * c2) * *t + c1;
            if df.abs() > 1e-300 {
                *t -= f / df;
            }
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    roots
}

/// Equilibria of the noiseless, uncoupled single-neuron ODE
/// `v' = -B(x, v; 0, 0)`, `x' = -A(x, v)`, tagged by linear stability.
///
/// Equilibria satisfy `x = (b/a) v` and `v (v - λ)(v - 1) + (b/a) v + I0 = 0`.
pub fn deterministic_fixed_points(p: &ModelParams) -> Vec<FixedPoint> {
    let r = p.b / p.a;
    let i0 = if p.paper_sde_signs { -p.i0 } else { p.i0 };
    let roots = real_cubic_roots(-(1.0 + p.lambda), p.lambda + r, i0);
    roots
        .into_iter()
        .map(|v| {
            // d/dv of the voltage drift at fixed x
            let g = -(3.0 * v * v - 2.0 * (1.0 + p.lambda) * v + p.lambda);
            let trace = g - p.a;
            let det = -p.a * g + p.b;
            let disc = trace * trace - 4.0 * det;
            let stability = if det < 0.0 {
                Stability::Saddle
            } else if det == 0.0 || trace == 0.0 {
                Stability::Degenerate
            } else if trace < 0.0 {
                if disc >= 0.0 {
                    Stability::StableNode
                } else {
                    Stability::StableFocus
                }
            } else if disc >= 0.0 {
                Stability::UnstableNode
            } else {
                Stability::UnstableFocus
            };
            FixedPoint {
                x: r * v,
                v,
                stability,
            }
        })
        .collect()
}

/// Named parameter sets.
///
/// `Bistable` and `Excitable` were picked with [`deterministic_fixed_points`]:
/// the former has two stable equilibria at `v = ±1/√2`, the latter a single
/// stable equilibrium. Both use the slow adaptation `a = 0.05`, `b = 0.025`
/// and the noise level `σ = 0.5` of the regime experiments.
/// `WeakCoupling` is the small-connectivity configuration used for the
/// PDE, stationary and spectral work: `a = b = 1`, `σ = √2` (so `D = 1`),
/// `ε = 0.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Bistable,
    Excitable,
    WeakCoupling,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Bistable, Preset::Excitable, Preset::WeakCoupling];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Bistable => "bistable",
            Preset::Excitable => "excitable",
            Preset::WeakCoupling => "weak-coupling",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn params(self) -> ModelParams {
        let (a, b, lambda, i0, eps, sigma) = match self {
            Preset::Bistable => (0.05, 0.025, -1.0, 0.0, 0.1, 0.5),
            Preset::Excitable => (0.05, 0.025, -1.0, 0.3, 0.1, 0.5),
            Preset::WeakCoupling => (1.0, 1.0, 0.5, 0.0, 0.1, std::f64::consts::SQRT_2),
        };
        ModelParams {
            a,
            b,
            lambda,
            i0,
            eps,
            sigma,
            coupling: CouplingSign::Repulsive,
            paper_sde_signs: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit() -> ModelParams {
        ModelParams::new(1.0, 1.0, 0.2, 0.0, 0.0, 1.0).unwrap()
    }

    #[test]
    fn drift_a_examples() {
        let p = unit();
        assert_eq!(drift_a(0.0, 0.0, &p), 0.0);
        assert_eq!(drift_a(1.0, 0.0, &p), 1.0);
        assert_eq!(drift_a(2.0, 3.0, &p), -1.0);
    }

    #[test]
    fn drift_b_examples() {
        let p = ModelParams { i0: 0.5, ..unit() };
        assert_eq!(drift_b(0.0, 0.0, 0.0, &p), 0.5);
        let p = ModelParams { i0: 0.0, ..unit() };
        assert_eq!(drift_b(0.0, p.lambda, 0.0, &p), 0.0);
        let p = ModelParams {
            eps: 0.1,
            lambda: 0.2,
            ..unit()
        };
        assert_relative_eq!(drift_b(1.0, 1.0, 2.0, &p), 1.1, epsilon = 1e-15);
    }

    #[test]
    fn sde_drift_is_negated_b() {
        let p = ModelParams { i0: 0.5, ..unit() };
        assert_eq!(sde_drift_v(0.0, 0.0, 0.0, &p), -0.5);
        let p = ModelParams { eps: 0.3, i0: -0.2, ..unit() };
        for &(x, v, j) in &[(0.3, -1.2, 0.4), (2.0, 0.7, -1.0), (-1.5, 2.5, 0.0)] {
            assert_eq!(sde_drift_v(x, v, j, &p), -drift_b(x, v, j, &p));
        }
    }

    #[test]
    fn paper_sde_signs_flip_input_current() {
        let p = ModelParams { i0: 0.4, eps: 0.2, ..unit() };
        let literal = ModelParams { paper_sde_signs: true, ..p };
        let flipped = ModelParams { i0: -0.4, ..p };
        for &(x, v, j) in &[(0.3, -1.2, 0.4), (2.0, 0.7, -1.0)] {
            assert_relative_eq!(
                sde_drift_v(x, v, j, &literal),
                sde_drift_v(x, v, j, &flipped),
                epsilon = 1e-14
            );
        }
    }

    #[test]
    fn attractive_coupling_pulls_toward_mean() {
        let p = ModelParams { eps: 1.0, ..unit() }.with_coupling(CouplingSign::Attractive);
        let q = ModelParams { eps: 0.0, ..unit() };
        // above the mean: attractive coupling lowers the voltage drift
        assert!(sde_drift_v(0.0, 1.0, 0.0, &p) < sde_drift_v(0.0, 1.0, 0.0, &q));
        let r = ModelParams { eps: 1.0, ..unit() };
        assert!(sde_drift_v(0.0, 1.0, 0.0, &r) > sde_drift_v(0.0, 1.0, 0.0, &q));
    }

    #[test]
    fn weights() {
        assert_eq!(weight_big_m(0.0, 0.0), 1.0);
        assert_eq!(weight_big_m(2.0, 0.0), 3.0);
        assert_eq!(weight_big_m(1.0, 1.0), 2.0);
        let w = WeightParams::new(1.0).unwrap();
        assert_eq!(weight_m(0.0, 0.0, &w), 1.0);
        assert_relative_eq!(weight_m(2.0, 0.0, &w), 2f64.exp(), epsilon = 1e-14);
        let w = WeightParams::new(0.5).unwrap();
        assert_relative_eq!(weight_m(1.0, 1.0, &w), 0.5f64.exp(), epsilon = 1e-14);
    }

    #[test]
    fn log_weight_clips() {
        let w = WeightParams::new(1.0).unwrap();
        assert!(w.log_weight(0.0, 0.0) == Some(0.0));
        assert!(w.log_weight(40.0, 0.0).is_none());
        assert!(weighted(1e-300, 750.0).is_finite());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ModelParams::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, -1.0, 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 0.0, -0.1, 1.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0.0, 0.0, 0.0, 0.0).is_err());
        assert!(ModelParams::new(1.0, 1.0, f64::NAN, 0.0, 0.0, 1.0).is_err());
        assert!(WeightParams::new(0.0).is_err());
    }

    fn bisection_roots(c2: f64, c1: f64, c0: f64) -> Vec<f64> {
        let f = |z: f64| ((z + c2) * z + c1) * z + c0;
        let (lo, hi, n) = (-20.0, 20.0, 400_000);
        let h = (hi - lo) / n as f64;
        let mut out = Vec::new();
        for k in 0..n {
            let (mut a, mut b) = (lo + k as f64 * h, lo + (k + 1) as f64 * h);
            if f(a) == 0.0 {
                out.push(a);
                continue;
            }
            if f(a) * f(b) < 0.0 {
                for _ in 0..80 {
                    let m = 0.5 * (a + b);
                    if f(a) * f(m) <= 0.0 {
                        b = m
                    } else {
                        a = m
                    }
                }
                out.push(0.5 * (a + b));
            }
        }
        out
    }

    #[test]
    fn cubic_matches_bisection() {
        for &(lambda, r, i0) in &[
            (0.2, 1.0, 0.0),
            (-1.0, 0.5, 0.0),
            (-1.0, 0.5, 0.3),
            (-1.75, 1.0, -0.2186),
            (3.0, 0.1, -0.05),
        ] {
            let (c2, c1, c0) = (-(1.0 + lambda), lambda + r, i0);
            let closed = real_cubic_roots(c2, c1, c0);
            let brute = bisection_roots(c2, c1, c0);
            assert_eq!(closed.len(), brute.len(), "lambda={lambda} r={r} i0={i0}");
            for (c, b) in closed.iter().zip(&brute) {
                assert!((c - b).abs() < 1e-9, "{c} vs {b}");
            }
        }
    }

    #[test]
    fn fixed_points_monotone_case_has_single_root_at_origin() {
        // a = b = 1, lambda = 0.2: v³ - 1.2 v² + 1.2 v is monotone
        let fps = deterministic_fixed_points(&unit());
        assert_eq!(fps.len(), 1);
        assert!(fps[0].v.abs() < 1e-12);
        assert!(fps[0].x.abs() < 1e-12);
    }

    #[test]
    fn bistable_preset_has_two_stable_equilibria() {
        let fps = deterministic_fixed_points(&Preset::Bistable.params());
        assert_eq!(fps.len(), 3);
        let stable: Vec<_> = fps.iter().filter(|f| f.stability.is_stable()).collect();
        assert_eq!(stable.len(), 2);
        assert_relative_eq!(stable[0].v, -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(stable[1].v, std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_eq!(fps[1].stability, Stability::Saddle);
    }

    #[test]
    fn excitable_preset_has_one_stable_equilibrium() {
        let fps = deterministic_fixed_points(&Preset::Excitable.params());
        assert_eq!(fps.len(), 1);
        assert!(fps[0].stability.is_stable());
    }

    #[test]
    fn preset_names_round_trip() {
        for p in Preset::ALL {
            assert_eq!(Preset::from_name(p.name()), Some(p));
            p.params().validate().unwrap();
        }
        assert_eq!(Preset::from_name("nope"), None);
    }

    proptest! {
        #[test]
        fn weights_at_least_one(x in -50.0..50.0f64, v in -50.0..50.0f64, kappa in 0.01..2.0f64) {
            prop_assert!(weight_big_m(x, v) >= 1.0);
            let w = WeightParams::new(kappa).unwrap();
            prop_assert!(weight_m(x, v, &w) >= 1.0);
        }

        #[test]
        fn uncoupled_b_ignores_mean(x in -5.0..5.0f64, v in -5.0..5.0f64, j1 in -5.0..5.0f64, j2 in -5.0..5.0f64) {
            let p = ModelParams { eps: 0.0, ..unit() };
            prop_assert_eq!(drift_b(x, v, j1, &p), drift_b(x, v, j2, &p));
        }

        #[test]
        fn fixed_points_are_roots(lambda in -2.0..2.0f64, a in 0.05..2.0f64, b in 0.05..2.0f64, i0 in -1.0..1.0f64) {
            let p = ModelParams::new(a, b, lambda, i0, 0.0, 1.0).unwrap();
            let fps = deterministic_fixed_points(&p);
            prop_assert!(!fps.is_empty());
            for fp in fps {
                prop_assert!(sde_drift_v(fp.x, fp.v, 0.0, &p).abs() < 1e-8);
                prop_assert!(sde_drift_x(fp.x, fp.v, &p).abs() < 1e-8);
            }
        }
    }
}
