use std::fmt;
use std::sync::Arc;

type Profile = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A smooth compactly supported radial function f(x) = F(|x - c|) with
/// analytic first and second derivatives of the profile.
#[derive(Clone)]
pub struct TestFunction {
    center: Vec<f64>,
    support: f64,
    f: Profile,
    df: Profile,
    d2f: Profile,
    label: String,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("center", &self.center)
            .field("support", &self.support)
            .finish()
    }
}

impl TestFunction {
    /// Builds a radial test function from a profile and its derivatives.
    pub fn radial(
        center: Vec<f64>,
        support: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        label: impl Into<String>,
    ) -> Self {
        TestFunction {
            center,
            support,
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            label: label.into(),
        }
    }

    /// `amplitude · exp(1 − 1/(1 − |x−c|²/R²))` inside the ball of radius R.
    pub fn bump(center: Vec<f64>, radius: f64, amplitude: f64) -> Self {
        let r2 = radius * radius;
        let prof = move |r: f64| {
            let s = r * r / r2;
            if s >= 1.0 {
                0.0
            } else {
                amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
            }
        };
        // d/dr with s = r²/R²: F' = F h'(s) 2r/R², h'(s) = -1/(1-s)².
        let d1 = move |r: f64| {
            let s = r * r / r2;
            if s >= 1.0 {
                return 0.0;
            }
            let f = amplitude * (1.0 - 1.0 / (1.0 - s)).exp();
            let hp = -1.0 / ((1.0 - s) * (1.0 - s));
            f * hp * 2.0 * r / r2
        };
        let d2 = move |r: f64| {
            let s = r * r / r2;
            if s >= 1.0 {
                return 0.0;
            }
            let f = amplitude * (1.0 - 1.0 / (1.0 - s)).exp();
            let om = 1.0 - s;
            let hp = -1.0 / (om * om);
            let hpp = -2.0 / (om * om * om);
            let ds = 2.0 * r / r2;
            f * ((hp * hp + hpp) * ds * ds + hp * 2.0 / r2)
        };
        TestFunction::radial(center, radius, prof, d1, d2, format!("bump(R={radius})"))
    }

    /// Equal to `1` on the ball of radius `flat`, smoothly decaying to zero at
    /// radius `support`.
    pub fn plateau(center: Vec<f64>, flat: f64, support: f64) -> Self {
        assert!(support > flat && flat >= 0.0);
        let w = support - flat;
        let psi = |u: f64| if u <= 0.0 { 0.0 } else { (-1.0 / u).exp() };
        let step = move |u: f64| {
            let a = psi(u);
            let b = psi(1.0 - u);
            if a + b == 0.0 {
                0.0
            } else {
                a / (a + b)
            }
        };
        let q = |u: f64| 1.0 / (u * u) + 1.0 / ((1.0 - u) * (1.0 - u));
        let qp = |u: f64| -2.0 / (u * u * u) + 2.0 / ((1.0 - u) * (1.0 - u) * (1.0 - u));
        let s1 = move |u: f64| {
            if u <= 0.0 || u >= 1.0 {
                0.0
            } else {
                let s = step(u);
                s * (1.0 - s) * q(u)
            }
        };
        let s2 = move |u: f64| {
            if u <= 0.0 || u >= 1.0 {
                0.0
            } else {
                let s = step(u);
                let sp = s * (1.0 - s) * q(u);
                sp * (1.0 - 2.0 * s) * q(u) + s * (1.0 - s) * qp(u)
            }
        };
        TestFunction::radial(
            center,
            support,
            move |r| step((support - r) / w),
            move |r| -s1((support - r) / w) / w,
            move |r| s2((support - r) / w) / (w * w),
            format!("plateau({flat},{support})"),
        )
    }

    /// The same function shifted by `v`.
    pub fn translated(&self, v: &[f64]) -> Self {
        let mut out = self.clone();
        for (c, vi) in out.center.iter_mut().zip(v) {
            *c += vi;
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn support_radius(&self) -> f64 {
        self.support
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    fn offset(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let w: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let r = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        (w, r)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (_, r) = self.offset(x);
        if r >= self.support {
            0.0
        } else {
            (self.f)(r)
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let (w, r) = self.offset(x);
        if r >= self.support || r == 0.0 {
            return vec![0.0; w.len()];
        }
        let g = (self.df)(r) / r;
        w.iter().map(|wi| wi * g).collect()
    }

    /// Row-major d×d Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let (w, r) = self.offset(x);
        let d = w.len();
        let mut h = vec![0.0; d * d];
        if r >= self.support {
            return h;
        }
        let f2 = (self.d2f)(r);
        if r < 1e-12 {
            for i in 0..d {
                h[i * d + i] = f2;
            }
            return h;
        }
        let f1r = (self.df)(r) / r;
        for i in 0..d {
            for j in 0..d {
                let e = w[i] * w[j] / (r * r);
                h[i * d + j] = f2 * e + f1r * (if i == j { 1.0 } else { 0.0 } - e);
            }
        }
        h
    }

    pub fn sup_norm(&self) -> f64 {
        (self.f)(0.0).abs()
    }
}
