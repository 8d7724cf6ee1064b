//! Square lattices, zero-padded FFT convolution and lattice kernels.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::quad::{gauss_legendre, gauss_legendre_on};
use crate::stable_core::KernelTable;

pub(crate) type C64 = Complex<f64>;

/// Forward and inverse 2D transforms of side n.
///
/// The forward transform leaves the spectrum transposed; multiplying two
/// such spectra and applying `inverse` returns data in the original layout.
pub(crate) struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    scratch: Vec<C64>,
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Fft2 {
            n,
            fwd,
            inv,
            scratch: vec![C64::new(0.0, 0.0); len],
        }
    }

    fn transpose(&self, buf: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                buf.swap(i * n + j, j * n + i);
            }
        }
    }

    pub fn forward(&mut self, buf: &mut [C64]) {
        self.fwd.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
        self.fwd.process_with_scratch(buf, &mut self.scratch);
    }

    pub fn inverse(&mut self, buf: &mut [C64]) {
        self.inv.process_with_scratch(buf, &mut self.scratch);
        self.transpose(buf);
        self.inv.process_with_scratch(buf, &mut self.scratch);
        let s = 1.0 / (self.n * self.n) as f64;
        for v in buf.iter_mut() {
            *v *= s;
        }
    }

    /// Transforms a + i·b and returns the spectra of a and b.
    pub fn forward_pair(&mut self, a: &[f64], b: &[f64]) -> (Vec<C64>, Vec<C64>) {
        let mut z: Vec<C64> = a.iter().zip(b).map(|(x, y)| C64::new(*x, *y)).collect();
        self.forward(&mut z);
        let n = self.n;
        let mut sa = vec![C64::new(0.0, 0.0); n * n];
        let mut sb = vec![C64::new(0.0, 0.0); n * n];
        for p in 0..n {
            let pn = (n - p) % n;
            for q in 0..n {
                let qn = (n - q) % n;
                let zk = z[p * n + q];
                let zc = z[pn * n + qn].conj();
                sa[p * n + q] = (zk + zc) * 0.5;
                sb[p * n + q] = (zk - zc) * C64::new(0.0, -0.5);
            }
        }
        (sa, sb)
    }
}

/// An m×m lattice of cell centres with spacing h, embedded in n = 2m
/// periodic buffers so that linear convolutions do not wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Lattice {
    pub m: usize,
    pub h: f64,
    pub lo: [f64; 2],
}

impl Lattice {
    pub fn n(&self) -> usize {
        2 * self.m
    }

    pub fn len(&self) -> usize {
        self.m * self.m
    }

    pub fn node(&self, k: usize) -> [f64; 2] {
        let (i, j) = (k / self.m, k % self.m);
        [
            self.lo[0] + (i as f64 + 0.5) * self.h,
            self.lo[1] + (j as f64 + 0.5) * self.h,
        ]
    }

    /// Lattice values placed in the top-left corner of a padded buffer.
    pub fn embed(&self, v: &[f64]) -> Vec<f64> {
        let (m, n) = (self.m, self.n());
        let mut out = vec![0.0; n * n];
        for i in 0..m {
            out[i * n..i * n + m].copy_from_slice(&v[i * m..(i + 1) * m]);
        }
        out
    }

    pub fn extract(&self, buf: &[C64]) -> Vec<f64> {
        let (m, n) = (self.m, self.n());
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                out[i * m + j] = buf[i * n + j].re;
            }
        }
        out
    }

    /// Offset kernel f(di, dj) for |di|, |dj| < m at wrapped positions.
    /// `f` must be symmetric under sign flips and swapping of the offsets;
    /// it returns several channels that are evaluated once per orbit.
    pub fn offset_kernel<const K: usize>(&self, f: impl Fn(usize, usize) -> [f64; K]) -> [Vec<f64>; K] {
        let (m, n) = (self.m, self.n());
        let mut out: [Vec<f64>; K] = std::array::from_fn(|_| vec![0.0; n * n]);
        for a in 0..m {
            for b in 0..=a {
                let v = f(a, b);
                for (sa, sb) in [(a, b), (b, a)] {
                    for (da, db) in [(1isize, 1isize), (-1, 1), (1, -1), (-1, -1)] {
                        let i = (da * sa as isize).rem_euclid(n as isize) as usize;
                        let j = (db * sb as isize).rem_euclid(n as isize) as usize;
                        for c in 0..K {
                            out[c][i * n + j] = v[c];
                        }
                    }
                }
            }
        }
        out
    }

    /// The kernel shifted to an anchor node: w(z) = k(z − anchor).
    pub fn anchored(&self, kernel: &[f64], anchor: usize) -> Vec<f64> {
        let (m, n) = (self.m, self.n());
        let (ai, aj) = (anchor / m, anchor % m);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            let di = (i as isize - ai as isize).rem_euclid(n as isize) as usize;
            for j in 0..m {
                let dj = (j as isize - aj as isize).rem_euclid(n as isize) as usize;
                out[i * m + j] = kernel[di * n + dj];
            }
        }
        out
    }

    /// Fourth-order central differences, lower order at the lattice edge.
    pub fn gradient(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let m = self.m;
        let h = self.h;
        let d = |get: &dyn Fn(usize) -> f64, k: usize| -> f64 {
            if k >= 2 && k + 2 < m {
                (-get(k + 2) + 8.0 * get(k + 1) - 8.0 * get(k - 1) + get(k - 2)) / (12.0 * h)
            } else if k >= 1 && k + 1 < m {
                (get(k + 1) - get(k - 1)) / (2.0 * h)
            } else if k == 0 {
                (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
            } else {
                (3.0 * get(k) - 4.0 * get(k - 1) + get(k - 2)) / (2.0 * h)
            }
        };
        let mut gx = vec![0.0; m * m];
        let mut gy = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                gx[i * m + j] = d(&|k| v[k * m + j], i);
                gy[i * m + j] = d(&|k| v[i * m + k], j);
            }
        }
        (gx, gy)
    }

    /// Indices within half-width `r` (in nodes, sup norm) of `anchor`.
    pub fn inner_nodes(&self, anchor: usize, r: usize) -> Vec<usize> {
        let m = self.m;
        let (ai, aj) = ((anchor / m) as isize, (anchor % m) as isize);
        (0..m * m)
            .filter(|k| {
                let (i, j) = ((k / m) as isize, (k % m) as isize);
                (i - ai).unsigned_abs() <= r && (j - aj).unsigned_abs() <= r
            })
            .collect()
    }
}

/// Whether lattice sampling of p(τ) is spectrally accurate: the symbol
/// e^{−τ|ξ|^α} at the Nyquist frequency 2π/h is below e^{−12}.
pub(crate) fn resolved(table: &KernelTable, tau: f64, h: f64) -> bool {
    let ls = table.params().length_scale(tau);
    (2.0 * PI * ls / h).powf(table.params().alpha()) >= 12.0
}

/// Offset cells within this sup-distance use the exact polar formula.
const NEAR: usize = 4;

/// ∫ over a square of a radial function f, from its exterior mass
/// M^c(r) = ∫_{|z|>r} f and total mass M∞, by the polar form
/// ∫_Ω f = wind·M∞ − (1/2π) ∮ M^c(|z|) dθ.
fn polar_cell(center: [f64; 2], h: f64, total: f64, tail: &dyn Fn(f64) -> f64, nodes: &(Vec<f64>, Vec<f64>)) -> f64 {
    let (x0, x1) = (center[0] - 0.5 * h, center[0] + 0.5 * h);
    let (y0, y1) = (center[1] - 0.5 * h, center[1] + 0.5 * h);
    let verts = [[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    let wind = if x0 < 0.0 && x1 > 0.0 && y0 < 0.0 && y1 > 0.0 { 1.0 } else { 0.0 };
    let mut edges = 0.0;
    for e in 0..4 {
        let a = verts[e];
        let b = verts[(e + 1) % 4];
        let cross = a[0] * b[1] - a[1] * b[0];
        if cross == 0.0 {
            continue;
        }
        let mut acc = 0.0;
        for (u, w) in nodes.0.iter().zip(&nodes.1) {
            let l = 0.5 * (u + 1.0);
            let z = [a[0] + l * (b[0] - a[0]), a[1] + l * (b[1] - a[1])];
            let r2 = z[0] * z[0] + z[1] * z[1];
            acc += 0.5 * w * tail(r2.sqrt()) / r2;
        }
        edges += cross * acc;
    }
    wind * total - edges / (2.0 * PI)
}

/// Cell integrals of a radial function over the lattice cells at every
/// offset: point samples times h² when resolved, otherwise the polar formula
/// near the origin and a 4×4 Gauss rule further out.
fn cell_kernel(
    lat: &Lattice,
    is_resolved: bool,
    point: &dyn Fn(f64) -> f64,
    total: f64,
    tail: &dyn Fn(f64) -> f64,
) -> Vec<f64> {
    let h = lat.h;
    let edge_nodes = gauss_legendre(24);
    let (g4, w4) = gauss_legendre_on(4, -0.5, 0.5);
    let [out] = lat.offset_kernel(|a, b| {
        let c = [a as f64 * h, b as f64 * h];
        let v = if is_resolved {
            h * h * point((c[0] * c[0] + c[1] * c[1]).sqrt())
        } else if a <= NEAR {
            polar_cell(c, h, total, tail, &edge_nodes)
        } else {
            let mut acc = 0.0;
            for (u, wu) in g4.iter().zip(&w4) {
                for (v, wv) in g4.iter().zip(&w4) {
                    let x = c[0] + u * h;
                    let y = c[1] + v * h;
                    acc += wu * wv * point((x * x + y * y).sqrt());
                }
            }
            acc * h * h
        };
        [v]
    });
    out
}

/// W(τ): ∫_cell p(τ, ·) at every offset.
pub(crate) fn cell_density(lat: &Lattice, table: &KernelTable, tau: f64) -> Vec<f64> {
    let res = resolved(table, tau, lat.h);
    cell_kernel(lat, res, &|r| table.density(tau, r), 1.0, &|r| table.tail_mass(tau, r))
}

/// U(τ): ∫_cell |∇p(τ, ·)| at every offset.
pub(crate) fn cell_grad_norm(lat: &Lattice, table: &KernelTable, tau: f64) -> Vec<f64> {
    let res = resolved(table, tau, lat.h);
    cell_kernel(
        lat,
        res,
        &|r| r * table.grad_factor(tau, r),
        table.grad_l1(tau),
        &|r| table.grad_tail_mass(tau, r),
    )
}

/// Point samples of p(τ) and ∇p(τ) at every offset.
pub(crate) fn point_kernels(lat: &Lattice, table: &KernelTable, tau: f64) -> [Vec<f64>; 3] {
    let h = lat.h;
    let [p, g] = lat.offset_kernel(|a, b| {
        let r = h * ((a * a + b * b) as f64).sqrt();
        let (p, g) = table.density_and_grad(tau, r);
        [p, g]
    });
    let (m, n) = (lat.m, lat.n());
    let mut gx = vec![0.0; n * n];
    let mut gy = vec![0.0; n * n];
    for i in 0..n {
        let di = if i < m { i as f64 } else { i as f64 - n as f64 };
        for j in 0..n {
            let dj = if j < m { j as f64 } else { j as f64 - n as f64 };
            gx[i * n + j] = -di * h * g[i * n + j];
            gy[i * n + j] = -dj * h * g[i * n + j];
        }
    }
    [p, gx, gy]
}
