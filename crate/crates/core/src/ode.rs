//! ODE systems in autonomous form.
//!
//! Every system is stored as an autonomous vector field `u' = f(u)` on `R^d`
//! together with its integration window and initial value. Non-autonomous
//! fields `u' = f(t, u)` are converted with [`autonomize`], which prepends a
//! clock component whose derivative is one.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// An autonomous vector field on `R^d`.
///
/// Implementations must be pure: the same state always yields the same
/// derivative, and evaluation must be safe from several threads at once.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    /// Writes `f(u)` into `du`. Both slices have length [`VectorField::dim`].
    fn eval(&self, u: &[f64], du: &mut [f64]);
}

/// FitzHugh-Nagumo oscillator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitzHughNagumo {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VectorField for FitzHughNagumo {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, u: &[f64], du: &mut [f64]) {
        let (v, w) = (u[0], u[1]);
        du[0] = self.c * (v - v * v * v / 3.0 + w);
        du[1] = -(v - self.a + self.b * w) / self.c;
    }
}

/// Rössler system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rossler {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VectorField for Rossler {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, u: &[f64], du: &mut [f64]) {
        du[0] = -u[1] - u[2];
        du[1] = u[0] + self.a * u[1];
        du[2] = self.b + u[2] * (u[0] - self.c);
    }
}

/// Field given by a closure over the state.
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> VectorField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, u: &[f64], du: &mut [f64]) {
        (self.f)(u, du)
    }
}

/// Autonomous form of a time-dependent field `f(t, u)` on `R^d`.
///
/// The augmented state is `(t, u_1, .., u_d)`; component 0 advances with unit
/// speed and components `1..=d` evaluate `f` at `(state[0], state[1..])`.
pub struct Autonomized<F> {
    dim: usize,
    f: F,
}

impl<F> VectorField for Autonomized<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim + 1
    }

    fn eval(&self, u: &[f64], du: &mut [f64]) {
        du[0] = 1.0;
        (self.f)(u[0], &u[1..], &mut du[1..]);
    }
}

/// Wraps a non-autonomous right-hand side of dimension `d` as a `d + 1`
/// dimensional autonomous field with a leading clock component.
pub fn autonomize<F>(rhs: F, d: usize) -> Autonomized<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    Autonomized { dim: d, f: rhs }
}

/// An initial value problem `u' = f(u)`, `u(t0) = u0`, on `[t0, t_end]`.
#[derive(Clone)]
pub struct OdeSystem {
    label: String,
    field: Arc<dyn VectorField>,
    t0: f64,
    t_end: f64,
    u0: Vec<f64>,
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem")
            .field("label", &self.label)
            .field("dim", &self.dim())
            .field("t0", &self.t0)
            .field("t_end", &self.t_end)
            .field("u0", &self.u0)
            .finish()
    }
}

impl OdeSystem {
    pub fn new(
        label: impl Into<String>,
        field: Arc<dyn VectorField>,
        u0: Vec<f64>,
        t0: f64,
        t_end: f64,
    ) -> Result<Self> {
        if field.dim() == 0 {
            return Err(Error::ParameterDomain("system dimension must be positive".into()));
        }
        if u0.len() != field.dim() {
            return Err(Error::DimensionMismatch {
                expected: field.dim(),
                found: u0.len(),
            });
        }
        if !(t0.is_finite() && t_end.is_finite() && t_end > t0) {
            return Err(Error::ParameterDomain(format!(
                "integration window [{t0}, {t_end}] must be finite with t_end > t0"
            )));
        }
        if u0.iter().any(|x| !x.is_finite()) {
            return Err(Error::ParameterDomain("initial value must be finite".into()));
        }
        Ok(Self {
            label: label.into(),
            field,
            t0,
            t_end,
            u0,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn window(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    pub fn field(&self) -> &dyn VectorField {
        self.field.as_ref()
    }

    pub fn eval_into(&self, u: &[f64], du: &mut [f64]) {
        self.field.eval(u, du)
    }

    pub fn rhs(&self, u: &[f64]) -> Vec<f64> {
        let mut du = vec![0.0; self.dim()];
        self.field.eval(u, &mut du);
        du
    }

    /// Same field, different initial value.
    pub fn with_u0(&self, u0: Vec<f64>) -> Result<Self> {
        Self::new(self.label.clone(), self.field.clone(), u0, self.t0, self.t_end)
    }

    /// Same field and initial value on a different window.
    pub fn with_window(&self, t0: f64, t_end: f64) -> Result<Self> {
        Self::new(self.label.clone(), self.field.clone(), self.u0.clone(), t0, t_end)
    }
}

pub fn make_fhn(a: f64, b: f64, c: f64, u0: [f64; 2], t0: f64, t_end: f64) -> Result<OdeSystem> {
    if c == 0.0 || !c.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "FitzHugh-Nagumo parameter c must be finite and nonzero, got {c}"
        )));
    }
    OdeSystem::new("fhn", Arc::new(FitzHughNagumo { a, b, c }), u0.to_vec(), t0, t_end)
}

pub fn make_rossler(a: f64, b: f64, c: f64, u0: [f64; 3], t0: f64, t_end: f64) -> Result<OdeSystem> {
    OdeSystem::new("rossler", Arc::new(Rossler { a, b, c }), u0.to_vec(), t0, t_end)
}

/// Builds a system from its label, as used by the command-line harness.
///
/// Empty `params` selects the default parameter set of each system.
pub fn system_by_label(label: &str, params: &[f64], u0: &[f64], t0: f64, t_end: f64) -> Result<OdeSystem> {
    let pick = |defaults: &[f64]| -> Result<Vec<f64>> {
        match params.len() {
            0 => Ok(defaults.to_vec()),
            n if n == defaults.len() => Ok(params.to_vec()),
            n => Err(Error::config(
                "params",
                format!("system `{label}` takes {} parameters, got {n}", defaults.len()),
            )),
        }
    };
    let u0_array = |d: usize| -> Result<Vec<f64>> {
        if u0.len() != d {
            return Err(Error::config(
                "u0",
                format!("system `{label}` has dimension {d}, got {} initial values", u0.len()),
            ));
        }
        Ok(u0.to_vec())
    };
    match label {
        "fhn" => {
            let p = pick(&DEFAULT_FHN_PARAMS)?;
            let u = u0_array(2)?;
            make_fhn(p[0], p[1], p[2], [u[0], u[1]], t0, t_end)
        }
        "rossler" => {
            let p = pick(&DEFAULT_ROSSLER_PARAMS)?;
            let u = u0_array(3)?;
            make_rossler(p[0], p[1], p[2], [u[0], u[1], u[2]], t0, t_end)
        }
        other => Err(Error::config(
            "system",
            format!("unknown system `{other}` (expected `fhn` or `rossler`)"),
        )),
    }
}

pub const DEFAULT_FHN_PARAMS: [f64; 3] = [0.2, 0.2, 3.0];
pub const DEFAULT_ROSSLER_PARAMS: [f64; 3] = [0.2, 0.2, 5.7];

#[cfg(test)]
mod tests {
    use super::*;

    fn fhn() -> OdeSystem {
        make_fhn(0.2, 0.2, 3.0, [-1.0, 1.0], 0.0, 40.0).unwrap()
    }

    #[test]
    fn fhn_at_origin() {
        let du = fhn().rhs(&[0.0, 0.0]);
        assert_eq!(du[0], 0.0);
        assert!((du[1] - 0.2 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fhn_at_initial_value() {
        let du = fhn().rhs(&[-1.0, 1.0]);
        assert!((du[0] - 1.0).abs() < 1e-14);
        assert!((du[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(du.len(), 2);
    }

    #[test]
    fn fhn_rejects_zero_c() {
        let err = make_fhn(0.2, 0.2, 0.0, [0.0, 0.0], 0.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::ParameterDomain(_)));
    }

    #[test]
    fn rossler_values() {
        let sys = make_rossler(0.2, 0.2, 5.7, [0.0, -6.78, 0.02], 0.0, 340.0).unwrap();
        let du = sys.rhs(&[0.0, -6.78, 0.02]);
        assert!((du[0] - 6.76).abs() < 1e-12);
        assert!((du[1] + 1.356).abs() < 1e-12);
        assert!((du[2] - 0.086).abs() < 1e-12);
        assert_eq!(sys.rhs(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.2]);
        assert_eq!(sys.rhs(sys.u0()).len(), 3);
    }

    #[test]
    fn rhs_is_bitwise_repeatable() {
        let sys = make_rossler(0.2, 0.2, 5.7, [0.0, -6.78, 0.02], 0.0, 340.0).unwrap();
        let u = [1.234567, -2.5, 0.3333];
        let a = sys.rhs(&u);
        let b = sys.rhs(&u);
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn autonomize_clock_component() {
        let field = autonomize(|t: f64, _u: &[f64], du: &mut [f64]| du[0] = t, 1);
        assert_eq!(field.dim(), 2);
        let mut du = [0.0; 2];
        field.eval(&[2.0, 5.0], &mut du);
        assert_eq!(du, [1.0, 2.0]);
    }

    #[test]
    fn invalid_window_rejected() {
        assert!(make_rossler(0.2, 0.2, 5.7, [0.0; 3], 1.0, 1.0).is_err());
        assert!(make_rossler(0.2, 0.2, 5.7, [0.0; 3], 1.0, 0.0).is_err());
    }

    #[test]
    fn lookup_by_label() {
        let s = system_by_label("rossler", &[], &[0.0, -6.78, 0.02], 0.0, 170.0).unwrap();
        assert_eq!(s.dim(), 3);
        assert!(system_by_label("lorenz", &[], &[0.0; 3], 0.0, 1.0).is_err());
        assert!(system_by_label("fhn", &[1.0], &[0.0; 2], 0.0, 1.0).is_err());
        assert!(system_by_label("fhn", &[], &[0.0; 3], 0.0, 1.0).is_err());
    }
}
