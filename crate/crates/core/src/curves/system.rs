//! Anchored control systems and the quotient norm on the image distribution.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::norm::{ControlNorm, NormKind};
use crate::error::{Error, Result};
use crate::manifold::ManifoldModel;

/// `v(x, u) = sum_i u_i X_i(x)`, written into the output slice. Must be linear in `u`.
pub type AnchorFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// `(A, M, #, F)` with `A` trivial of rank `control_dim`.
#[derive(Clone)]
pub struct AnchoredSystem {
    pub manifold: ManifoldModel,
    pub control_dim: usize,
    anchor: Arc<AnchorFn>,
    pub norm: ControlNorm,
    pub symmetric_controls: bool,
    pub label: String,
}

impl fmt::Debug for AnchoredSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnchoredSystem")
            .field("label", &self.label)
            .field("manifold", &self.manifold)
            .field("control_dim", &self.control_dim)
            .field("norm", &self.norm)
            .finish()
    }
}

impl AnchoredSystem {
    pub fn new(
        manifold: ManifoldModel,
        control_dim: usize,
        anchor: Arc<AnchorFn>,
        norm: ControlNorm,
        label: &str,
    ) -> Result<Self> {
        if norm.dim != control_dim {
            return Err(Error::Shape(format!(
                "norm acts on R^{} but the system has {control_dim} controls",
                norm.dim
            )));
        }
        Ok(Self { manifold, control_dim, anchor, norm, symmetric_controls: true, label: label.into() })
    }

    pub fn with_norm(&self, norm: ControlNorm) -> Result<Self> {
        Self::new(self.manifold, self.control_dim, self.anchor.clone(), norm, &self.label)
    }

    pub fn dim(&self) -> usize {
        self.manifold.coord_dim()
    }

    #[inline]
    pub fn velocity(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.anchor)(x, u, out)
    }

    /// `B(x)`: `dim x control_dim`, column `i` is the generator `X_i(x)`.
    pub fn anchor_matrix(&self, x: &[f64]) -> DMatrix<f64> {
        let (d, k) = (self.dim(), self.control_dim);
        let mut b = DMatrix::zeros(d, k);
        let mut e = vec![0.0; k];
        let mut col = vec![0.0; d];
        for i in 0..k {
            e[i] = 1.0;
            self.velocity(x, &e, &mut col);
            e[i] = 0.0;
            for r in 0..d {
                b[(r, i)] = col[r];
            }
        }
        b
    }
}

/// Options for the convex-norm minimisation in [`quotient_norm_with`].
#[derive(Clone, Copy, Debug)]
pub struct QuotientOptions {
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Relative singular-value threshold of the rank decision.
    pub rank_tol: f64,
    /// Relative residual above which `v` is declared outside the range.
    pub range_tol: f64,
}

impl Default for QuotientOptions {
    fn default() -> Self {
        Self { max_iter: 200, rel_tol: 1e-6, rank_tol: 1e-10, range_tol: 1e-8 }
    }
}

/// `F_D(x, v) = inf { F(u) : B(x) u = v }`.
pub fn quotient_norm(system: &AnchoredSystem, x: &[f64], v: &[f64]) -> Result<f64> {
    quotient_norm_with(system, x, v, &QuotientOptions::default()).map(|(f, _)| f)
}

/// Quotient norm together with a minimising control.
pub fn quotient_norm_with(
    system: &AnchoredSystem,
    x: &[f64],
    v: &[f64],
    opts: &QuotientOptions,
) -> Result<(f64, Vec<f64>)> {
    let b = system.anchor_matrix(x);
    least_norm_preimage(&b, &system.norm, v, opts)
}

/// Pseudoinverse with relative rank threshold; returns `(pinv, kernel basis)`.
pub(crate) fn pinv_and_kernel(a: &DMatrix<f64>, rank_tol: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    // Thin SVD works on m >= n; transpose otherwise.
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let s = &svd.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let cut = rank_tol * smax;
    let mut pinv = DMatrix::zeros(n, m);
    let mut kept = Vec::new();
    for i in 0..s.len() {
        if smax > 0.0 && s[i] > cut {
            kept.push(i);
            let vi = vt.row(i).transpose();
            let ui = u.column(i);
            pinv += (vi * ui.transpose()) / s[i];
        }
    }
    // Kernel: orthogonal complement of the kept right singular vectors.
    let mut basis: Vec<DVector<f64>> = kept.iter().map(|&i| vt.row(i).transpose()).collect();
    let mut kernel = Vec::new();
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = 1.0;
        for b in basis.iter() {
            let c = b.dot(&e);
            e -= b * c;
        }
        let nrm = e.norm();
        if nrm > 1e-8 {
            e /= nrm;
            basis.push(e.clone());
            kernel.push(e);
        }
        if basis.len() == n {
            break;
        }
    }
    let kmat = if kernel.is_empty() { DMatrix::zeros(n, 0) } else { DMatrix::from_columns(&kernel) };
    (pinv, kmat)
}

pub(crate) fn least_norm_preimage(
    b: &DMatrix<f64>,
    norm: &ControlNorm,
    v: &[f64],
    opts: &QuotientOptions,
) -> Result<(f64, Vec<f64>)> {
    let vv = DVector::from_column_slice(v);
    let vnorm = vv.norm();
    if vnorm == 0.0 {
        return Ok((0.0, vec![0.0; norm.dim]));
    }
    let check = |u: &DVector<f64>| -> Result<()> {
        let res = (b * u - &vv).norm();
        if res > opts.range_tol * vnorm.max(1.0) {
            Err(Error::NotInRange(res))
        } else {
            Ok(())
        }
    };
    match &norm.kind {
        NormKind::Quadratic { l_inv_t, .. } => {
            // u = L^-T w turns u^T Q u into |w|^2.
            let bl = b * l_inv_t;
            let (pinv, _) = pinv_and_kernel(&bl, opts.rank_tol);
            let w = pinv * &vv;
            let u = l_inv_t * &w;
            check(&u)?;
            Ok((norm.scale * w.norm(), u.iter().copied().collect()))
        }
        NormKind::Convex { min_unit, .. } => {
            let (pinv, kernel) = pinv_and_kernel(b, opts.rank_tol);
            let up = pinv * &vv;
            check(&up)?;
            let m = kernel.ncols();
            let eval = |c: &DVector<f64>| -> f64 {
                let u = &up + &kernel * c;
                norm.eval(u.as_slice())
            };
            let mut c = DVector::zeros(m);
            let mut best = eval(&c);
            if m > 0 {
                // |c| <= |u| <= F(u) / (scale * min_unit) and F(u) <= F(up) at the optimum.
                let bound = best / (norm.scale * min_unit) + 1e-12;
                for _ in 0..opts.max_iter {
                    let start = best;
                    for i in 0..m {
                        let f1 = |s: f64| {
                            let mut cc = c.clone();
                            cc[i] = s;
                            eval(&cc)
                        };
                        let s = golden_min(&f1, -bound, bound, 1e-12 * bound.max(1e-300));
                        let val = f1(s);
                        if val < best {
                            best = val;
                            c[i] = s;
                        }
                    }
                    if start - best <= opts.rel_tol * start {
                        break;
                    }
                }
            }
            let u = &up + &kernel * &c;
            Ok((best, u.iter().copied().collect()))
        }
    }
}

/// Golden-section minimum of a unimodal function on `[a, b]`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}
