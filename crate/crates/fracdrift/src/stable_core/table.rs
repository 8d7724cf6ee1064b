use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use super::{log_s_lower, subordinator_density, StableParams};
use crate::quad::gauss_legendre_on;

/// Tabulated unit-time radial profiles of the free kernel.
///
/// Stores, on a uniform grid in v = asinh(r):
/// the density P(r), the gradient factor G(r) with ∇p = −x G,
/// the tail mass T(r) = ∫_{|z|>r} p and the tail of the gradient
/// L¹-mass Gc(r) = ∫_{|z|>r} |∇p|, and the Hessian factor K(r) with
/// ∇²p = K x xᵀ − G I. T and Gc exist only for d = 2.
/// Beyond the last node the leading power laws take over.
///
/// Every profile is an integral against the same subordinator density, so
/// the density is sampled once on a fixed composite Gauss rule in log s and
/// reused for all radii.
#[derive(Debug)]
pub struct KernelTable {
    params: StableParams,
    h: f64,
    ln_p: Vec<f64>,
    ln_g: Vec<f64>,
    ln_tail: Vec<f64>,
    ln_gtail: Vec<f64>,
    ln_k: Vec<f64>,
    ln_r_max: f64,
    // Second-order tail coefficients k in f ~ c r^{-e} (1 + k r^{-α}).
    tail_k: [f64; 5],
    grad_l1: f64,
}

const R_MAX: f64 = 1e6;
const H_V: f64 = 0.01;

fn cache() -> &'static Mutex<Vec<(usize, u64, Arc<KernelTable>)>> {
    static CACHE: OnceLock<Mutex<Vec<(usize, u64, Arc<KernelTable>)>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(Vec::new()))
}

impl KernelTable {
    /// Returns a process-wide table for `params`, building it on first use.
    /// The build is deterministic so cached and fresh tables are identical.
    pub fn shared(params: &StableParams) -> Arc<KernelTable> {
        let key = (params.d(), params.alpha().to_bits());
        let mut guard = cache().lock().unwrap_or_else(|e| e.into_inner());
        if let Some((_, _, t)) = guard.iter().find(|(d, a, _)| (*d, *a) == key) {
            return t.clone();
        }
        let t = Arc::new(KernelTable::build(params));
        guard.push((key.0, key.1, t.clone()));
        t
    }

    pub fn build(params: &StableParams) -> KernelTable {
        let beta = params.beta();
        let d = params.d();
        let half_d = 0.5 * d as f64;
        let b1 = 1.0 - beta;
        let kappa = beta / b1;
        let u_lo = log_s_lower(beta);
        let u_mid = 3.0f64.max(u_lo + 1.0);
        let u_hi = (R_MAX * R_MAX).ln() + 50.0 / (half_d + beta);

        // Panels: fine where the density rises double-exponentially.
        let mut nodes = Vec::new();
        let push_panels = |a: f64, b: f64, width: f64, nodes: &mut Vec<(f64, f64)>| {
            let n = ((b - a) / width).ceil().max(1.0) as usize;
            let w = (b - a) / n as f64;
            for i in 0..n {
                let (x, wt) = gauss_legendre_on(10, a + i as f64 * w, a + (i + 1) as f64 * w);
                nodes.extend(x.into_iter().zip(wt));
            }
        };
        push_panels(u_lo, u_mid, (0.3 / kappa).min(0.1), &mut nodes);
        push_panels(u_mid, u_hi, 0.1, &mut nodes);

        // s, and weight w·s·g(s) for the measure g(s) ds.
        let samples: Vec<(f64, f64)> = nodes
            .iter()
            .map(|&(u, w)| {
                let s = u.exp();
                (s, w * s * subordinator_density(beta, s))
            })
            .filter(|&(_, m)| m > 0.0)
            .collect();

        let n = (R_MAX.asinh() / H_V).ceil() as usize + 1;
        let mut ln_p = Vec::with_capacity(n);
        let mut ln_g = Vec::with_capacity(n);
        let mut ln_tail = Vec::with_capacity(n);
        let mut ln_gtail = Vec::with_capacity(n);
        let mut ln_k = Vec::with_capacity(n);
        let with_mass = d == 2;
        let gamma_32 = 0.5 * PI.sqrt();
        let mut grad_l1 = 0.0;
        if with_mass {
            for &(s, m) in &samples {
                grad_l1 += m * s.powf(-0.5) * gamma_32;
            }
        }
        for k in 0..n {
            let r = (k as f64 * H_V).sinh();
            let r2 = r * r;
            let (mut p, mut g, mut hk, mut tail, mut gtail) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(s, m) in &samples {
                let x = r2 / (4.0 * s);
                if x > 740.0 {
                    continue;
                }
                let e = (-x).exp();
                let gauss = m * (4.0 * PI * s).powf(-half_d) * e;
                p += gauss;
                g += gauss / (2.0 * s);
                hk += gauss / (4.0 * s * s);
                if with_mass {
                    tail += m * e;
                    let sx = x.sqrt();
                    gtail += m * s.powf(-0.5) * (sx * e + gamma_32 * libm::erfc(sx));
                }
            }
            ln_p.push(p.ln());
            ln_g.push(g.ln());
            ln_k.push(hk.ln());
            ln_tail.push(if with_mass { tail.min(1.0).ln() } else { f64::NAN });
            ln_gtail.push(if with_mass { gtail.ln() } else { f64::NAN });
        }
        let mut table = KernelTable {
            params: *params,
            h: H_V,
            ln_p,
            ln_g,
            ln_tail,
            ln_gtail,
            ln_k,
            ln_r_max: ((n - 1) as f64 * H_V).sinh().ln(),
            tail_k: [0.0; 5],
            grad_l1: if with_mass { grad_l1 } else { f64::NAN },
        };
        let dpa = table.dpa();
        let alpha = params.alpha();
        let exps = [dpa, dpa + 2.0, alpha, alpha + 1.0, dpa + 4.0];
        let arrays = [
            &table.ln_p,
            &table.ln_g,
            &table.ln_tail,
            &table.ln_gtail,
            &table.ln_k,
        ];
        let back = 300;
        let ln_rp = ((n - 1 - back) as f64 * H_V).sinh().ln();
        for (i, (arr, e)) in arrays.iter().zip(exps).enumerate() {
            let ratio = (arr[n - 1 - back] - arr[n - 1] + e * (ln_rp - table.ln_r_max)).exp();
            let (ap, am) = ((-alpha * ln_rp).exp(), (-alpha * table.ln_r_max).exp());
            let k = (ratio - 1.0) / (ap - ratio * am);
            table.tail_k[i] = if k.is_finite() { k } else { 0.0 };
        }
        table
    }

    pub fn params(&self) -> &StableParams {
        &self.params
    }

    fn interp(&self, which: usize, r: f64, tail_exp: f64) -> f64 {
        let arr = match which {
            0 => &self.ln_p,
            1 => &self.ln_g,
            2 => &self.ln_tail,
            3 => &self.ln_gtail,
            _ => &self.ln_k,
        };
        let n = arr.len();
        let v = r.asinh();
        let x = v / self.h;
        if x >= (n - 1) as f64 {
            let k = self.tail_k[which];
            let a = self.params.alpha();
            let corr = (1.0 + k * r.powf(-a)) / (1.0 + k * (-a * self.ln_r_max).exp());
            return (arr[n - 1] - tail_exp * (r.ln() - self.ln_r_max)).exp() * corr;
        }
        // Six-point Lagrange in v; ln f is even in v so negative indices mirror.
        let k = x.floor() as isize;
        let mut k0 = k - 2;
        if k0 + 5 > n as isize - 1 {
            k0 = n as isize - 6;
        }
        let xi = x - k0 as f64;
        let mut acc = 0.0;
        for j in 0..6 {
            let mut l = 1.0;
            for m in 0..6 {
                if m != j {
                    l *= (xi - m as f64) / (j as f64 - m as f64);
                }
            }
            acc += l * arr[(k0 + j as isize).unsigned_abs()];
        }
        acc.exp()
    }

    fn dpa(&self) -> f64 {
        self.params.d() as f64 + self.params.alpha()
    }

    /// Unit-time density P(r).
    pub fn p1(&self, r: f64) -> f64 {
        self.interp(0, r, self.dpa())
    }

    /// Unit-time gradient factor: ∇p(1,x) = −x G(|x|).
    pub fn g1(&self, r: f64) -> f64 {
        self.interp(1, r, self.dpa() + 2.0)
    }

    /// Unit-time mass outside radius r (d = 2).
    pub fn tail1(&self, r: f64) -> f64 {
        self.interp(2, r, self.params.alpha())
    }

    /// Unit-time gradient L¹-mass outside radius r (d = 2).
    pub fn grad_tail1(&self, r: f64) -> f64 {
        self.interp(3, r, self.params.alpha() + 1.0)
    }

    /// Unit-time Hessian factor: ∇²p(1,x) = K(|x|) x xᵀ − G(|x|) I.
    pub fn k1(&self, r: f64) -> f64 {
        self.interp(4, r, self.dpa() + 4.0)
    }

    /// ∫ |∇p(1,x)| dx (d = 2).
    pub fn grad_l1_unit(&self) -> f64 {
        self.grad_l1
    }

    /// p(t, r).
    pub fn density(&self, t: f64, r: f64) -> f64 {
        let ls = self.params.length_scale(t);
        self.p1(r / ls) * ls.powi(-(self.params.d() as i32))
    }

    /// G(t, r) with ∇p(t,x) = −x G(t,|x|).
    pub fn grad_factor(&self, t: f64, r: f64) -> f64 {
        let ls = self.params.length_scale(t);
        self.g1(r / ls) * ls.powi(-(self.params.d() as i32 + 2))
    }

    /// Density and gradient factor in one lookup of the length scale.
    pub fn density_and_grad(&self, t: f64, r: f64) -> (f64, f64) {
        let ls = self.params.length_scale(t);
        let q = r / ls;
        let d = self.params.d() as i32;
        (self.p1(q) * ls.powi(-d), self.g1(q) * ls.powi(-d - 2))
    }

    /// (p, G, K) at (t, r): p, ∇p = −x G and ∇²p = K x xᵀ − G I.
    pub fn profiles(&self, t: f64, r: f64) -> (f64, f64, f64) {
        let ls = self.params.length_scale(t);
        let q = r / ls;
        let d = self.params.d() as i32;
        (
            self.p1(q) * ls.powi(-d),
            self.g1(q) * ls.powi(-d - 2),
            self.k1(q) * ls.powi(-d - 4),
        )
    }

    pub fn tail_mass(&self, t: f64, r: f64) -> f64 {
        self.tail1(r / self.params.length_scale(t))
    }

    pub fn grad_tail_mass(&self, t: f64, r: f64) -> f64 {
        let ls = self.params.length_scale(t);
        self.grad_tail1(r / ls) / ls
    }

    pub fn grad_l1(&self, t: f64) -> f64 {
        self.grad_l1 / self.params.length_scale(t)
    }
}
