//! Base kernels p₀ of the series: the free kernel, or the envelope q^D
//! standing in for the Dirichlet kernel.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::envelope::q_tilde_rho;
use crate::error::{Error, Result};
use crate::geometry::{cell_average, norm2, scale, sub, Domain, Vec2};
use crate::stable_core::{KernelTable, StableParams};

use super::lattice::Lattice;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    Free,
    Envelope,
    MonteCarlo,
}

/// p₀(t,x,y) = a(t,x) a(t,y) p(t,x−y), with a ≡ 1 for the free kernel and
/// a = q̃·1_D for the envelope.
#[derive(Debug, Clone)]
pub struct BaseKernel {
    params: StableParams,
    table: Arc<KernelTable>,
    domain: Domain,
    source: BaseSource,
}

impl BaseKernel {
    pub fn free(params: &StableParams) -> Result<Self> {
        require_plane(params)?;
        Ok(BaseKernel {
            params: *params,
            table: KernelTable::shared(params),
            domain: Domain::whole(),
            source: BaseSource::Free,
        })
    }

    pub fn envelope(params: &StableParams, domain: &Domain) -> Result<Self> {
        require_plane(params)?;
        domain.validate(params.alpha())?;
        if domain.is_whole() {
            return Self::free(params);
        }
        Ok(BaseKernel {
            params: *params,
            table: KernelTable::shared(params),
            domain: domain.clone(),
            source: BaseSource::Envelope,
        })
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn source(&self) -> BaseSource {
        self.source
    }

    pub fn is_free(&self) -> bool {
        self.source == BaseSource::Free
    }

    /// Boundary factor a(t, x).
    pub fn amplitude(&self, t: f64, x: Vec2) -> f64 {
        match self.source {
            BaseSource::Free => 1.0,
            _ => q_tilde_rho(self.params.alpha(), t, self.domain.rho(x)),
        }
    }

    /// ∇ₓ a(t, x).
    pub fn amplitude_gradient(&self, t: f64, x: Vec2) -> Vec2 {
        if self.is_free() {
            return [0.0, 0.0];
        }
        let rho = self.domain.rho(x);
        let alpha = self.params.alpha();
        if rho <= 0.0 || rho.powf(0.5 * alpha) >= t.sqrt() {
            return [0.0, 0.0];
        }
        let slope = 0.5 * alpha * rho.powf(0.5 * alpha - 1.0) / t.sqrt();
        scale(self.domain.inward_direction(x), slope)
    }

    pub fn value(&self, t: f64, x: Vec2, y: Vec2) -> f64 {
        let a = self.amplitude(t, x) * self.amplitude(t, y);
        if a == 0.0 {
            return 0.0;
        }
        a * self.table.density(t, norm2(sub(x, y)))
    }

    /// ∇ₓ p₀(t, x, y).
    pub fn gradient(&self, t: f64, x: Vec2, y: Vec2) -> Vec2 {
        let d = sub(x, y);
        let (p, g) = self.table.density_and_grad(t, norm2(d));
        let (ax, ay) = (self.amplitude(t, x), self.amplitude(t, y));
        let da = self.amplitude_gradient(t, x);
        [
            ay * (da[0] * p - ax * d[0] * g),
            ay * (da[1] * p - ax * d[1] * g),
        ]
    }

    /// Nodal a(t,·), ∇a(t,·) and the cell averages of a(t,·)·1_D.
    pub(crate) fn lattice_amplitude(&self, lat: &Lattice, t: f64) -> Amplitude {
        if self.is_free() {
            return Amplitude::Unit;
        }
        let n = lat.len();
        let mut a = Vec::with_capacity(n);
        let mut ax = Vec::with_capacity(n);
        let mut ay = Vec::with_capacity(n);
        let mut mu = Vec::with_capacity(n);
        let h = lat.h;
        for k in 0..n {
            let x = lat.node(k);
            a.push(self.amplitude(t, x));
            let g = self.amplitude_gradient(t, x);
            ax.push(g[0]);
            ay.push(g[1]);
            let lo = [x[0] - 0.5 * h, x[1] - 0.5 * h];
            let hi = [x[0] + 0.5 * h, x[1] + 0.5 * h];
            // Cells cut by the boundary need a finer rule for ρ^{α/2}.
            let k_rule = if self.domain.rho(x) > h { 2 } else { 6 };
            mu.push(cell_average(&self.domain, lo, hi, k_rule, |p| self.amplitude(t, p)));
        }
        Amplitude::Field { a, ax, ay, mu }
    }
}

pub(crate) enum Amplitude {
    Unit,
    Field {
        a: Vec<f64>,
        ax: Vec<f64>,
        ay: Vec<f64>,
        mu: Vec<f64>,
    },
}

impl Amplitude {
    pub fn a(&self, k: usize) -> f64 {
        match self {
            Amplitude::Unit => 1.0,
            Amplitude::Field { a, .. } => a[k],
        }
    }

    pub fn grad(&self, k: usize) -> Vec2 {
        match self {
            Amplitude::Unit => [0.0, 0.0],
            Amplitude::Field { ax, ay, .. } => [ax[k], ay[k]],
        }
    }

    pub fn mu(&self, k: usize) -> f64 {
        match self {
            Amplitude::Unit => 1.0,
            Amplitude::Field { mu, .. } => mu[k],
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Amplitude::Unit)
    }
}

fn require_plane(params: &StableParams) -> Result<()> {
    if params.d() != 2 {
        return Err(Error::Unsupported("the series solver is implemented for d = 2".into()));
    }
    if !params.paper_regime() {
        return Err(Error::Domain(format!("alpha = {} must lie in (1, 2)", params.alpha())));
    }
    Ok(())
}
