//! Plant and controller description.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

pub type PlantFlowFn = Arc<dyn Fn(&[f64], &[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ControllerFlowFn = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type OutputFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Plant `ẋ_p = f_p(x_p, û, w)`, `y = g_p(x_p)` with controller
/// `ẋ_c = f_c(x_c, ŷ)`, `u = g_c(x_c)`.
///
/// With a static controller `n_c = 0`, `u = g_c(ŷ)` and the networked
/// signal `v` consists of the plant outputs only. Otherwise `v = [y; u]`.
#[derive(Clone)]
pub struct PlantModel {
    pub n_p: usize,
    pub n_c: usize,
    pub n_y: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub static_controller: bool,
    f_p: PlantFlowFn,
    g_p: OutputFn,
    f_c: Option<ControllerFlowFn>,
    g_c: OutputFn,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("n_p", &self.n_p)
            .field("n_c", &self.n_c)
            .field("n_y", &self.n_y)
            .field("n_u", &self.n_u)
            .field("n_w", &self.n_w)
            .field("static_controller", &self.static_controller)
            .finish()
    }
}

impl PlantModel {
    /// Plant with a static output-feedback law `u = g_c(ŷ)`.
    pub fn with_static_controller(
        n_p: usize,
        n_y: usize,
        n_u: usize,
        n_w: usize,
        f_p: PlantFlowFn,
        g_p: OutputFn,
        g_c: OutputFn,
    ) -> Result<Self> {
        let model = Self {
            n_p,
            n_c: 0,
            n_y,
            n_u,
            n_w,
            static_controller: true,
            f_p,
            g_p,
            f_c: None,
            g_c,
        };
        model.check_zero_at_zero()?;
        Ok(model)
    }

    /// Plant with a dynamic controller; both `y` and `u` travel over the network.
    #[allow(clippy::too_many_arguments)]
    pub fn with_dynamic_controller(
        n_p: usize,
        n_c: usize,
        n_y: usize,
        n_u: usize,
        n_w: usize,
        f_p: PlantFlowFn,
        g_p: OutputFn,
        f_c: ControllerFlowFn,
        g_c: OutputFn,
    ) -> Result<Self> {
        let model = Self {
            n_p,
            n_c,
            n_y,
            n_u,
            n_w,
            static_controller: false,
            f_p,
            g_p,
            f_c: Some(f_c),
            g_c,
        };
        model.check_zero_at_zero()?;
        Ok(model)
    }

    fn check_zero_at_zero(&self) -> Result<()> {
        let bad = |name: &str, v: Vec<f64>, dim: usize| -> Result<()> {
            if v.len() != dim {
                return Err(Error::Config(format!(
                    "{name} returned {} components, expected {dim}",
                    v.len()
                )));
            }
            if v.iter().any(|a| a.abs() > 1e-12) {
                return Err(Error::Config(format!("{name} is not zero at zero: {v:?}")));
            }
            Ok(())
        };
        bad(
            "f_p",
            (self.f_p)(&vec![0.0; self.n_p], &vec![0.0; self.n_u], &vec![0.0; self.n_w]),
            self.n_p,
        )?;
        bad("g_p", (self.g_p)(&vec![0.0; self.n_p]), self.n_y)?;
        if self.static_controller {
            bad("g_c", (self.g_c)(&vec![0.0; self.n_y]), self.n_u)?;
        } else {
            let f_c = self.f_c.as_ref().expect("dynamic controller has f_c");
            bad("f_c", f_c(&vec![0.0; self.n_c], &vec![0.0; self.n_y]), self.n_c)?;
            bad("g_c", (self.g_c)(&vec![0.0; self.n_c]), self.n_u)?;
        }
        Ok(())
    }

    /// Dimension of the stacked state `x = [x_p; x_c]`.
    pub fn n_x(&self) -> usize {
        self.n_p + self.n_c
    }

    /// Dimension of the networked signal `v`.
    pub fn n_v(&self) -> usize {
        if self.static_controller {
            self.n_y
        } else {
            self.n_y + self.n_u
        }
    }

    /// The networked signal `v = g_v(x)`.
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut v = (self.g_p)(&x[..self.n_p]);
        if !self.static_controller {
            v.extend((self.g_c)(&x[self.n_p..]));
        }
        v
    }

    /// `ẋ` with the held network signal `v̂`.
    pub fn vector_field(&self, x: &[f64], v_hat: &[f64], w: &[f64]) -> Vec<f64> {
        let y_hat = &v_hat[..self.n_y];
        if self.static_controller {
            let u = (self.g_c)(y_hat);
            (self.f_p)(&x[..self.n_p], &u, w)
        } else {
            let u_hat = &v_hat[self.n_y..];
            let mut dx = (self.f_p)(&x[..self.n_p], u_hat, w);
            let f_c = self.f_c.as_ref().expect("dynamic controller has f_c");
            dx.extend(f_c(&x[self.n_p..], y_hat));
            dx
        }
    }
}
