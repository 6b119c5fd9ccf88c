//! Local coupling `g = g₁ + g₂`, the nonlocal smoothing operator `h` and the
//! potential `V = V0 + g`.

use crate::error::{MfgError, Result};
use crate::torus_grid::{periodic_convolve, wrapped_gaussian_kernel, Field, TorusGrid};

/// `g₁(m) = m^α` or `ln m`; `g₂(m, θ) = θ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CouplingSpec {
    Power { alpha: f64 },
    Log,
}

impl CouplingSpec {
    pub fn power(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(MfgError::config("alpha", "power coupling needs alpha > 0"));
        }
        Ok(CouplingSpec::Power { alpha })
    }

    /// Pointwise `g₁(m)`; `node` only labels errors.
    pub fn g1(&self, m: f64, node: usize) -> Result<f64> {
        match *self {
            CouplingSpec::Power { alpha } => {
                if m < 0.0 {
                    return Err(MfgError::Domain {
                        what: "power coupling",
                        node,
                        value: m,
                    });
                }
                Ok(m.powf(alpha))
            }
            CouplingSpec::Log => {
                if !(m > 0.0) {
                    return Err(MfgError::Domain {
                        what: "log coupling",
                        node,
                        value: m,
                    });
                }
                Ok(m.ln())
            }
        }
    }

    /// Pointwise `∂g₁/∂m`.
    pub fn g1_prime(&self, m: f64, node: usize) -> Result<f64> {
        match *self {
            CouplingSpec::Power { alpha } => {
                if m < 0.0 || (m == 0.0 && alpha < 1.0) {
                    return Err(MfgError::Domain {
                        what: "power coupling derivative",
                        node,
                        value: m,
                    });
                }
                if alpha == 1.0 {
                    Ok(1.0)
                } else {
                    Ok(alpha * m.powf(alpha - 1.0))
                }
            }
            CouplingSpec::Log => {
                if !(m > 0.0) {
                    return Err(MfgError::Domain {
                        what: "log coupling",
                        node,
                        value: m,
                    });
                }
                Ok(1.0 / m)
            }
        }
    }

    /// Exponent of the power-like growth of `g₁`; the log coupling reports 0.
    pub fn growth_exponent(&self) -> f64 {
        match *self {
            CouplingSpec::Power { alpha } => alpha,
            CouplingSpec::Log => 0.0,
        }
    }
}

pub fn eval_g(spec: &CouplingSpec, m: &Field, theta: &Field) -> Result<(Field, Field)> {
    m.check_grid(theta)?;
    let g1 = m
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| spec.g1(v, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((Field::raw(m.grid(), g1), theta.clone()))
}

/// `h(m) = c₁ ζ∗m + c₂ ζ∗((ζ∗m)^ᾱ)` with `ζ` a wrapped Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlocalSpec {
    pub c1: f64,
    pub c2: f64,
    pub alpha_bar: f64,
    pub kernel_width: f64,
    kernel: Field,
}

impl NonlocalSpec {
    pub fn new(grid: &TorusGrid, c1: f64, c2: f64, alpha_bar: f64, kernel_width: f64) -> Result<Self> {
        if !(c1 >= 0.0) || !c1.is_finite() {
            return Err(MfgError::config("c1", "must be >= 0"));
        }
        if !(c2 >= 0.0) || !c2.is_finite() {
            return Err(MfgError::config("c2", "must be >= 0"));
        }
        if !(alpha_bar > 0.0) || !alpha_bar.is_finite() {
            return Err(MfgError::config("alpha_bar", "must be > 0"));
        }
        let kernel = wrapped_gaussian_kernel(grid, kernel_width)?;
        Ok(NonlocalSpec {
            c1,
            c2,
            alpha_bar,
            kernel_width,
            kernel,
        })
    }

    /// `h ≡ 0`.
    pub fn none(grid: &TorusGrid) -> Self {
        NonlocalSpec::new(grid, 0.0, 0.0, 1.0, 0.1).expect("valid defaults")
    }

    pub fn kernel(&self) -> &Field {
        &self.kernel
    }

    pub fn is_zero(&self) -> bool {
        self.c1 == 0.0 && self.c2 == 0.0
    }
}

fn check_nonnegative(m: &Field, what: &'static str) -> Result<()> {
    if let Some((node, &value)) = m.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
        return Err(MfgError::Domain { what, node, value });
    }
    Ok(())
}

pub fn eval_h(spec: &NonlocalSpec, m: &Field) -> Result<Field> {
    check_nonnegative(m, "nonlocal coupling")?;
    if spec.is_zero() {
        return Ok(Field::zeros(m.grid()));
    }
    let sm = periodic_convolve(m, &spec.kernel)?;
    let mut out = sm.scale(spec.c1);
    if spec.c2 != 0.0 {
        // ζ∗m ≥ 0 up to transform rounding
        let pow = sm.map(|v| v.max(0.0).powf(spec.alpha_bar));
        out = &out + &periodic_convolve(&pow, &spec.kernel)?.scale(spec.c2);
    }
    Ok(out)
}

/// Fréchet derivative of `h` at `m0` applied to `dm`.
pub fn h_frechet_apply(spec: &NonlocalSpec, m0: &Field, dm: &Field) -> Result<Field> {
    m0.check_grid(dm)?;
    check_nonnegative(m0, "nonlocal derivative base point")?;
    if spec.is_zero() {
        return Ok(Field::zeros(m0.grid()));
    }
    let sdm = periodic_convolve(dm, &spec.kernel)?;
    let mut out = sdm.scale(spec.c1);
    if spec.c2 != 0.0 {
        let sm0 = periodic_convolve(m0, &spec.kernel)?;
        let ab = spec.alpha_bar;
        let mut weight = Vec::with_capacity(sm0.len());
        for (node, &s) in sm0.values().iter().enumerate() {
            if ab < 1.0 && !(s > 0.0) {
                return Err(MfgError::Singular {
                    what: "nonlocal derivative",
                    node,
                    value: s,
                });
            }
            weight.push(if ab == 1.0 { 1.0 } else { ab * s.max(0.0).powf(ab - 1.0) });
        }
        let inner = &Field::raw(m0.grid(), weight) * &sdm;
        out = &out + &periodic_convolve(&inner, &spec.kernel)?.scale(spec.c2);
    }
    Ok(out)
}

/// `V(x, m, θ) = V0(x) + g₁(m) + θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialSpec {
    pub v0: Field,
    pub coupling: CouplingSpec,
}

impl PotentialSpec {
    pub fn new(v0: Field, coupling: CouplingSpec) -> Result<Self> {
        if !v0.is_finite() {
            return Err(MfgError::config("V0", "must be finite"));
        }
        Ok(PotentialSpec { v0, coupling })
    }
}

pub fn eval_v(spec: &PotentialSpec, m: &Field, theta: &Field) -> Result<Field> {
    m.check_grid(&spec.v0)?;
    let (g1, g2) = eval_g(&spec.coupling, m, theta)?;
    Ok(&(&spec.v0 + &g1) + &g2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus_grid::{integrate, make_grid};
    use std::f64::consts::PI;

    #[test]
    fn eval_g_examples() {
        let g = make_grid(1, 16).unwrap();
        let zero = Field::zeros(&g);
        let (g1, g2) = eval_g(&CouplingSpec::power(1.0).unwrap(), &Field::constant(&g, 2.0), &zero).unwrap();
        assert!(g1.values().iter().all(|&v| v == 2.0));
        assert_eq!(g2, zero);
        let (g1, _) = eval_g(&CouplingSpec::Log, &Field::constant(&g, 1.0), &zero).unwrap();
        assert_eq!(g1.sup_norm(), 0.0);
        let one = Field::constant(&g, 1.0);
        let (g1, g2) = eval_g(&CouplingSpec::power(2.0).unwrap(), &Field::constant(&g, 3.0), &one).unwrap();
        assert!(g1.values().iter().all(|&v| v == 9.0));
        assert!(g2.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn log_coupling_names_offending_node() {
        let g = make_grid(1, 8).unwrap();
        let mut vals = vec![1.0; 8];
        vals[5] = 0.0;
        let m = Field::new(&g, vals).unwrap();
        match eval_g(&CouplingSpec::Log, &m, &Field::zeros(&g)) {
            Err(MfgError::Domain { node, .. }) => assert_eq!(node, 5),
            other => panic!("unexpected {other:?}"),
        }
        assert!(CouplingSpec::power(0.0).is_err());
    }

    #[test]
    fn eval_h_examples() {
        let g = make_grid(1, 64).unwrap();
        let one = Field::constant(&g, 1.0);
        let h = NonlocalSpec::new(&g, 1.0, 0.0, 1.0, 0.1).unwrap();
        assert!((&eval_h(&h, &one).unwrap() - &one).sup_norm() < 1e-13);
        let h = NonlocalSpec::new(&g, 0.0, 1.0, 1.0, 0.1).unwrap();
        assert!((&eval_h(&h, &one).unwrap() - &one).sup_norm() < 1e-13);

        let w: f64 = 0.08;
        let h = NonlocalSpec::new(&g, 1.0, 0.0, 1.0, w).unwrap();
        let m = Field::from_fn(&g, |x| 1.0 + (2.0 * PI * x[0]).cos());
        let expected = Field::from_fn(&g, |x| 1.0 + (-2.0 * PI * PI * w * w).exp() * (2.0 * PI * x[0]).cos());
        assert!((&eval_h(&h, &m).unwrap() - &expected).sup_norm() < 1e-12);

        let neg = Field::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        assert!(eval_h(&h, &neg).is_err());
    }

    #[test]
    fn frechet_examples() {
        let g = make_grid(1, 32).unwrap();
        let h = NonlocalSpec::new(&g, 0.7, 0.0, 2.0, 0.1).unwrap();
        let dm = Field::from_fn(&g, |x| (2.0 * PI * x[0]).cos());
        let a = h_frechet_apply(&h, &Field::constant(&g, 1.0), &dm).unwrap();
        let b = h_frechet_apply(&h, &Field::from_fn(&g, |x| 2.0 + x[0]), &dm).unwrap();
        let expected = periodic_convolve(&dm, h.kernel()).unwrap().scale(0.7);
        assert!((&a - &expected).sup_norm() < 1e-14);
        assert!((&a - &b).sup_norm() < 1e-14);
        let h2 = NonlocalSpec::new(&g, 1.0, 1.0, 1.5, 0.1).unwrap();
        assert_eq!(
            h_frechet_apply(&h2, &Field::constant(&g, 1.0), &Field::zeros(&g))
                .unwrap()
                .sup_norm(),
            0.0
        );
    }

    #[test]
    fn frechet_singular_for_fractional_power_at_zero() {
        let g = make_grid(1, 16).unwrap();
        let h = NonlocalSpec::new(&g, 0.0, 1.0, 0.5, 0.1).unwrap();
        let r = h_frechet_apply(&h, &Field::zeros(&g), &Field::constant(&g, 1.0));
        assert!(matches!(r, Err(MfgError::Singular { .. })));
    }

    #[test]
    fn eval_v_examples() {
        let g = make_grid(1, 32).unwrap();
        let zero = Field::zeros(&g);
        let one = Field::constant(&g, 1.0);
        let pw = CouplingSpec::power(1.0).unwrap();
        let pot = PotentialSpec::new(zero.clone(), pw).unwrap();
        assert!((&eval_v(&pot, &one, &zero).unwrap() - &one).sup_norm() == 0.0);

        let s = Field::from_fn(&g, |x| (2.0 * PI * x[0]).sin());
        let pot = PotentialSpec::new(s.clone(), pw).unwrap();
        assert!((&eval_v(&pot, &zero, &zero).unwrap() - &s).sup_norm() == 0.0);

        let h = NonlocalSpec::new(&g, 1.0, 0.0, 1.0, 0.1).unwrap();
        let pot = PotentialSpec::new(zero, pw).unwrap();
        let theta = eval_h(&h, &one).unwrap();
        let v = eval_v(&pot, &one, &theta).unwrap();
        assert!((&v - &Field::constant(&g, 2.0)).sup_norm() < 1e-13);
        assert!((integrate(&v) - 2.0).abs() < 1e-13);
    }
}
