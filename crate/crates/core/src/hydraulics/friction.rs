//! Darcy-Weisbach resistance with the Swamee-Jain friction factor.

use std::f64::consts::{LN_10, PI};

use super::SolverConfig;
use crate::network::Pipe;
use crate::units::mm_to_m;

/// Swamee-Jain explicit friction factor (turbulent flow).
///
/// `roughness` in mm, `diameter` in m.
pub fn friction_factor(roughness: f64, diameter: f64, re: f64) -> f64 {
    let x = mm_to_m(roughness) / (3.7 * diameter) + 5.74 / re.powf(0.9);
    0.25 / x.log10().powi(2)
}

/// d f / d Re of [`friction_factor`].
fn friction_factor_slope(roughness: f64, diameter: f64, re: f64) -> f64 {
    let t = 5.74 / re.powf(0.9);
    let x = mm_to_m(roughness) / (3.7 * diameter) + t;
    let l = x.log10();
    0.5 * 0.9 * t / re / (l.powi(3) * x * LN_10)
}

/// Circular-pipe Reynolds number `4|q| / (π D ν)`.
pub fn reynolds(q: f64, diameter: f64, viscosity: f64) -> f64 {
    4.0 * q.abs() / (PI * diameter * viscosity)
}

/// `f L / (2 g D A²)`, s²/m⁵.
pub fn resistance_from_friction(f: f64, length: f64, diameter: f64, gravity: f64) -> f64 {
    let area = PI * diameter * diameter / 4.0;
    f * length / (2.0 * gravity * diameter * area * area)
}

/// Friction factor over all regimes: laminar `64/Re` below the laminar
/// threshold, Swamee-Jain above the turbulent threshold and a cubic
/// Hermite blend (matching value and slope at both ends) in between.
pub fn darcy_friction(roughness: f64, diameter: f64, re: f64, cfg: &SolverConfig) -> f64 {
    friction_with_slope(roughness, diameter, re, cfg).0
}

/// (f, df/dRe)
fn friction_with_slope(roughness: f64, diameter: f64, re: f64, cfg: &SolverConfig) -> (f64, f64) {
    let (lo, hi) = (cfg.laminar_threshold, cfg.turbulent_threshold);
    if re <= lo {
        (64.0 / re, -64.0 / (re * re))
    } else if re >= hi {
        (friction_factor(roughness, diameter, re), friction_factor_slope(roughness, diameter, re))
    } else {
        let (f0, s0) = (64.0 / lo, -64.0 / (lo * lo));
        let (f1, s1) = (friction_factor(roughness, diameter, hi), friction_factor_slope(roughness, diameter, hi));
        let w = hi - lo;
        let t = (re - lo) / w;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        let f = h00 * f0 + h10 * w * s0 + h01 * f1 + h11 * w * s1;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        let slope = (d00 * f0 + d01 * f1) / w + d10 * s0 + d11 * s1;
        (f, slope)
    }
}

/// Resistance coefficient `r` with `h_loss = r q |q|`.
///
/// In the laminar regime `r |q|` is constant; `|q|` is floored at
/// `cfg.min_flow` so `r` stays finite at zero flow.
pub fn resistance(pipe: &Pipe, q: f64, cfg: &SolverConfig) -> f64 {
    resistance_with_roughness(pipe.length, pipe.diameter, pipe.roughness, q, cfg)
}

pub(crate) fn resistance_with_roughness(length: f64, diameter: f64, roughness: f64, q: f64, cfg: &SolverConfig) -> f64 {
    let qa = q.abs().max(cfg.min_flow);
    let re = reynolds(qa, diameter, cfg.kinematic_viscosity);
    resistance_from_friction(darcy_friction(roughness, diameter, re, cfg), length, diameter, cfg.gravity)
}

/// Per-pipe constants reused across Newton iterations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PipeHydraulics {
    pub diameter: f64,
    pub roughness: f64,
    /// `L / (2 g D A²)`
    pub k_turb: f64,
    /// Hagen-Poiseuille `8 π ν L / (g A²)`
    pub k_lam: f64,
}

impl PipeHydraulics {
    pub fn new(length: f64, diameter: f64, roughness: f64, cfg: &SolverConfig) -> Self {
        let area = PI * diameter * diameter / 4.0;
        PipeHydraulics {
            diameter,
            roughness,
            k_turb: length / (2.0 * cfg.gravity * diameter * area * area),
            k_lam: 8.0 * PI * cfg.kinematic_viscosity * length / (cfg.gravity * area * area),
        }
    }

    /// Head loss along the pipe direction and its derivative in `q`.
    pub fn headloss(&self, q: f64, cfg: &SolverConfig) -> (f64, f64) {
        let qa = q.abs();
        let re = reynolds(qa, self.diameter, cfg.kinematic_viscosity);
        if re <= cfg.laminar_threshold {
            return (self.k_lam * q, self.k_lam);
        }
        let (f, slope) = friction_with_slope(self.roughness, self.diameter, re, cfg);
        let hl = self.k_turb * f * q * qa;
        let qd = qa.max(cfg.min_flow);
        let grad = self.k_turb * qd * (2.0 * f + re * slope);
        (hl, grad.max(self.k_lam))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Colebrook-White by fixed-point iteration on 1/sqrt(f).
    fn colebrook(rel_rough: f64, re: f64) -> f64 {
        let mut x: f64 = 8.0;
        for _ in 0..200 {
            x = -2.0 * (rel_rough / 3.7 + 2.51 * x / re).log10();
        }
        1.0 / (x * x)
    }

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn rough_pipe_limit() {
        let (eps, d) = (5.0, 0.1);
        let limit = 0.25 / (mm_to_m(eps) / (3.7 * d)).log10().powi(2);
        assert!((friction_factor(eps, d, 1e14) - limit).abs() / limit < 1e-6);
    }

    #[test]
    fn matches_colebrook_at_typical_point() {
        let f = friction_factor(0.26, 0.3, 1e5);
        let c = colebrook(0.26e-3 / 0.3, 1e5);
        assert!((f - c).abs() / c < 0.03, "{f} vs {c}");
    }

    #[test]
    fn decreases_with_reynolds() {
        assert!(friction_factor(0.01, 0.225, 5e5) < friction_factor(0.01, 0.225, 5e4));
    }

    #[test]
    fn reynolds_values() {
        assert_eq!(reynolds(0.0, 0.3, 1.004e-6), 0.0);
        let re = reynolds(0.1, 0.3, 1.004e-6);
        let hand = 4.0 * 0.1 / (PI * 0.3 * 1.004e-6);
        assert_eq!(re, hand);
        assert!((re - 4.226e5).abs() / 4.226e5 < 1e-3);
        assert!((reynolds(0.2, 0.3, 1.004e-6) - 2.0 * re).abs() < 1e-6);
        assert_eq!(reynolds(-0.1, 0.3, 1.004e-6), re);
    }

    #[test]
    fn resistance_hand_value() {
        let r = resistance_from_friction(0.02, 1000.0, 0.3, 9.81);
        let area: f64 = PI * 0.09 / 4.0;
        let hand = 0.02 * 1000.0 / (2.0 * 9.81 * 0.3 * area * area);
        assert!((r - hand).abs() < 1e-9);
        assert!((r - 679.9).abs() / 679.9 < 5e-4);
        assert!((resistance_from_friction(0.02, 2000.0, 0.3, 9.81) - 2.0 * r).abs() < 1e-9);
    }

    #[test]
    fn continuous_across_regime_boundaries() {
        let c = cfg();
        let p = PipeHydraulics::new(100.0, 0.3, 0.5, &c);
        let q_at = |re: f64| re * PI * 0.3 * c.kinematic_viscosity / 4.0;
        for edge in [c.laminar_threshold, c.turbulent_threshold] {
            let mut prev = f64::INFINITY;
            for delta in [1.0, 1e-2, 1e-4, 1e-6] {
                let (lo, _) = p.headloss(q_at(edge - delta), &c);
                let (hi, _) = p.headloss(q_at(edge + delta), &c);
                let jump = (hi - lo).abs();
                assert!(jump < prev, "jump did not shrink at {edge}");
                prev = jump;
            }
            assert!(prev < 1e-9);
        }
        // resistance form: r(q)·q at both sides of the laminar threshold
        let pipe = Pipe::new("p", "a", "b", 100.0, 0.3, crate::network::Material::Dicl, 0.5);
        let q0 = q_at(c.laminar_threshold);
        let a = resistance(&pipe, q0 * (1.0 - 1e-9), &c) * q0;
        let b = resistance(&pipe, q0 * (1.0 + 1e-9), &c) * q0;
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn analytic_derivative_matches_finite_difference() {
        let c = cfg();
        let p = PipeHydraulics::new(500.0, 0.45, 0.44, &c);
        for q in [-0.3f64, -1e-3, 2e-4, 1.2e-3, 2.0e-3, 0.05, 0.8] {
            let h = 1e-7 * q.abs().max(1e-6);
            let (hp, _) = p.headloss(q + h, &c);
            let (hm, _) = p.headloss(q - h, &c);
            let fd = (hp - hm) / (2.0 * h);
            let (_, grad) = p.headloss(q, &c);
            assert!((grad - fd).abs() / fd.abs() < 1e-5, "q={q}: {grad} vs {fd}");
        }
    }

    #[test]
    fn laminar_resistance_finite_at_zero_flow() {
        let c = cfg();
        let pipe = Pipe::new("p", "a", "b", 100.0, 0.3, crate::network::Material::Dicl, 0.5);
        let r0 = resistance(&pipe, 0.0, &c);
        assert!(r0.is_finite() && r0 > 0.0);
        // r|q| is the Hagen-Poiseuille constant
        let k = PipeHydraulics::new(100.0, 0.3, 0.5, &c).k_lam;
        assert!((r0 * c.min_flow - k).abs() / k < 1e-12);
    }
}
