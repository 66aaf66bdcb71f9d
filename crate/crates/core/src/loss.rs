//! Loss functions for the two mean constraints `E[L(t, Y_t)] <= 0 <= E[R(t, Y_t)]`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;
use alloc::format;

use crate::error::{Error, Result};

/// `(t, x, mark) -> value`; `mark` is the particle's terminal mark, ignored by
/// deterministic losses.
pub type LossFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// The pair `(L, R)` together with its declared structural constants.
#[derive(Clone)]
pub struct LossPair {
    pub loss_l: LossFn,
    pub loss_r: LossFn,
    /// Lower Lipschitz bound `c`.
    pub c: f64,
    /// Upper Lipschitz bound `C`.
    pub big_c: f64,
    /// Declared lower bound for `inf (R - L)`.
    pub separation: f64,
    /// Declared bound `M` on `E[sup_t |L(t,0)| + sup_t |R(t,0)|]`.
    pub m_bound: f64,
    /// Losses are `C^{1,2}` with bounded derivatives.
    pub smooth: bool,
}

impl core::fmt::Debug for LossPair {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("LossPair")
            .field("c", &self.c)
            .field("C", &self.big_c)
            .field("separation", &self.separation)
            .field("m_bound", &self.m_bound)
            .field("smooth", &self.smooth)
            .finish_non_exhaustive()
    }
}

impl LossPair {
    pub fn new(
        loss_l: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        loss_r: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        c: f64,
        big_c: f64,
        separation: f64,
        m_bound: f64,
    ) -> Result<Self> {
        if !(c > 0.0 && big_c >= c && big_c.is_finite()) {
            return Err(Error::invalid("loss constants must satisfy 0 < c <= C < inf"));
        }
        if !(separation > 0.0) {
            return Err(Error::invalid("loss separation must be positive"));
        }
        if !(m_bound >= 0.0) {
            return Err(Error::invalid("loss bound M must be nonnegative"));
        }
        Ok(Self {
            loss_l: Arc::new(loss_l),
            loss_r: Arc::new(loss_r),
            c,
            big_c,
            separation,
            m_bound,
            smooth: false,
        })
    }

    pub fn with_smooth(mut self, smooth: bool) -> Self {
        self.smooth = smooth;
        self
    }

    /// Band losses `L = x - upper(t)`, `R = x - lower(t)`: the mean is kept in
    /// `[lower(t), upper(t)]`.
    pub fn band(
        lower: impl Fn(f64) -> f64 + Send + Sync + 'static,
        upper: impl Fn(f64) -> f64 + Send + Sync + 'static,
        separation: f64,
        m_bound: f64,
    ) -> Result<Self> {
        Ok(Self::new(
            move |t, x, _| x - upper(t),
            move |t, x, _| x - lower(t),
            1.0,
            1.0,
            separation,
            m_bound,
        )?
        .with_smooth(true))
    }

    #[inline]
    pub fn l(&self, t: f64, x: f64, mark: f64) -> f64 {
        (self.loss_l)(t, x, mark)
    }

    #[inline]
    pub fn r(&self, t: f64, x: f64, mark: f64) -> f64 {
        (self.loss_r)(t, x, mark)
    }
}

/// One probe `(t, x, y)` evaluated at a given terminal mark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossProbe {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub mark: f64,
}

impl LossProbe {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Self { t, x, y, mark: 0.0 }
    }
}

/// Worst cases observed by [`check_loss_assumptions`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub min_ratio_l: f64,
    pub max_ratio_l: f64,
    pub min_ratio_r: f64,
    pub max_ratio_r: f64,
    pub monotonicity_violations: usize,
    pub min_separation: f64,
    pub failures: Vec<String>,
}

impl LossReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

const ASSUMPTION_TOL: f64 = 1e-12;

/// Samples the bi-Lipschitz, monotonicity and separation clauses on `probes`.
pub fn check_loss_assumptions(lp: &LossPair, probes: &[LossProbe]) -> Result<LossReport> {
    if probes.is_empty() {
        return Err(Error::invalid("loss check needs at least one probe"));
    }
    let mut rep = LossReport {
        min_ratio_l: f64::INFINITY,
        max_ratio_l: 0.0,
        min_ratio_r: f64::INFINITY,
        max_ratio_r: 0.0,
        monotonicity_violations: 0,
        min_separation: f64::INFINITY,
        failures: Vec::new(),
    };
    for p in probes {
        if p.x == p.y {
            return Err(Error::invalid("loss probe needs x != y"));
        }
        let (lo, hi) = if p.x < p.y { (p.x, p.y) } else { (p.y, p.x) };
        let dl = lp.l(p.t, hi, p.mark) - lp.l(p.t, lo, p.mark);
        let dr = lp.r(p.t, hi, p.mark) - lp.r(p.t, lo, p.mark);
        if !(dl > 0.0) || !(dr > 0.0) {
            rep.monotonicity_violations += 1;
        }
        let ratio_l = dl.abs() / (hi - lo);
        let ratio_r = dr.abs() / (hi - lo);
        rep.min_ratio_l = rep.min_ratio_l.min(ratio_l);
        rep.max_ratio_l = rep.max_ratio_l.max(ratio_l);
        rep.min_ratio_r = rep.min_ratio_r.min(ratio_r);
        rep.max_ratio_r = rep.max_ratio_r.max(ratio_r);
        for z in [p.x, p.y] {
            let sep = lp.r(p.t, z, p.mark) - lp.l(p.t, z, p.mark);
            rep.min_separation = rep.min_separation.min(sep);
        }
    }
    let lower = lp.c - ASSUMPTION_TOL;
    let upper = lp.big_c + ASSUMPTION_TOL;
    if rep.min_ratio_l < lower || rep.max_ratio_l > upper {
        rep.failures.push(format!(
            "L difference quotients span [{}, {}], declared [{}, {}]",
            rep.min_ratio_l, rep.max_ratio_l, lp.c, lp.big_c
        ));
    }
    if rep.min_ratio_r < lower || rep.max_ratio_r > upper {
        rep.failures.push(format!(
            "R difference quotients span [{}, {}], declared [{}, {}]",
            rep.min_ratio_r, rep.max_ratio_r, lp.c, lp.big_c
        ));
    }
    if rep.monotonicity_violations > 0 {
        rep.failures.push(format!(
            "{} probes where L or R is not strictly increasing",
            rep.monotonicity_violations
        ));
    }
    if rep.min_separation < lp.separation - ASSUMPTION_TOL {
        rep.failures.push(format!(
            "observed inf(R - L) = {} below declared separation {}",
            rep.min_separation, lp.separation
        ));
    }
    Ok(rep)
}

/// Regular probe set on `[t0, t1] × [x0, x1]` pairing neighbouring and distant points.
pub fn standard_probes(t0: f64, t1: f64, x0: f64, x1: f64, n: usize) -> Vec<LossProbe> {
    let n = n.max(2);
    let mut out = Vec::with_capacity(n * n * 2);
    for i in 0..n {
        let t = t0 + (t1 - t0) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let x = x0 + (x1 - x0) * j as f64 / (n - 1) as f64;
            let near = x + (x1 - x0) / (7.0 * n as f64);
            let far = x1 - (x - x0) + 0.5;
            out.push(LossProbe::new(t, x, near));
            if far != x {
                out.push(LossProbe::new(t, x, far));
            }
        }
    }
    out
}
