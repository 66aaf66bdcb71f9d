//! Forward and backward Skorokhod problems with two nonlinear constraints
//! `l(t, x) <= 0 <= r(t, x)` on a time grid.

use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::bv::BVPath;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::loss::{check_loss_assumptions, LossPair, LossProbe, LossReport};
use crate::roots::increasing_root;

/// Deterministic constraint `(node, x) -> value`, strictly increasing in `x`.
pub type MeanLoss = Arc<dyn Fn(usize, f64) -> f64 + Send + Sync>;

/// Tolerance for node-level constraint and compensator checks.
pub const SP_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConstants {
    pub c: f64,
    pub big_c: f64,
    pub separation: f64,
}

impl LossConstants {
    pub fn new(c: f64, big_c: f64, separation: f64) -> Result<Self> {
        if !(c > 0.0 && big_c >= c && big_c.is_finite() && separation > 0.0) {
            return Err(Error::invalid("constraint constants must satisfy 0 < c <= C < inf and separation > 0"));
        }
        Ok(Self { c, big_c, separation })
    }

    /// Band constants for `l = x - upper`, `r = x - lower`.
    pub fn unit(separation: f64) -> Self {
        Self {
            c: 1.0,
            big_c: 1.0,
            separation,
        }
    }
}

/// Forward problem: find `x = s + K` with `l(t, x) <= 0 <= r(t, x)` and minimal `K`.
#[derive(Clone)]
pub struct SpProblem {
    pub grid: TimeGrid,
    pub s: Vec<f64>,
    pub l: MeanLoss,
    pub r: MeanLoss,
    pub constants: LossConstants,
}

/// Backward problem: `x_t = a + s_T - s_t + K_T - K_t` kept inside the constraints.
#[derive(Clone)]
pub struct BspProblem {
    pub grid: TimeGrid,
    pub s: Vec<f64>,
    pub a: f64,
    pub l: MeanLoss,
    pub r: MeanLoss,
    pub constants: LossConstants,
}

impl core::fmt::Debug for SpProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("SpProblem")
            .field("grid", &self.grid)
            .field("s", &self.s)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl core::fmt::Debug for BspProblem {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("BspProblem")
            .field("grid", &self.grid)
            .field("s", &self.s)
            .field("a", &self.a)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

fn arc_loss(f: impl Fn(usize, f64) -> f64 + Send + Sync + 'static) -> MeanLoss {
    Arc::new(f)
}

impl SpProblem {
    pub fn new(
        grid: TimeGrid,
        s: Vec<f64>,
        l: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        r: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        constants: LossConstants,
    ) -> Result<Self> {
        let p = Self {
            grid,
            s,
            l: arc_loss(l),
            r: arc_loss(r),
            constants,
        };
        p.validate()?;
        Ok(p)
    }

    /// Band `lower(t) <= x <= upper(t)` given as node values.
    pub fn band(grid: TimeGrid, s: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let sep = band_separation(&lower, &upper)?;
        Self::new(
            grid,
            s,
            move |i, x| x - upper[i],
            move |i, x| x - lower[i],
            LossConstants::unit(sep),
        )
    }

    fn validate(&self) -> Result<()> {
        if self.s.len() != self.grid.n_nodes() {
            return Err(Error::invalid("input path length must match the grid"));
        }
        if self.s.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input path must be finite"));
        }
        Ok(())
    }

    /// Samples the constraint clauses on a window around the input path.
    pub fn check_assumptions(&self) -> Result<LossReport> {
        check_mean_losses(&self.grid, &self.s, &self.l, &self.r, self.constants)
    }
}

impl BspProblem {
    pub fn new(
        grid: TimeGrid,
        s: Vec<f64>,
        a: f64,
        l: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        r: impl Fn(usize, f64) -> f64 + Send + Sync + 'static,
        constants: LossConstants,
    ) -> Result<Self> {
        Self::from_arcs(grid, s, a, arc_loss(l), arc_loss(r), constants)
    }

    pub fn from_arcs(grid: TimeGrid, s: Vec<f64>, a: f64, l: MeanLoss, r: MeanLoss, constants: LossConstants) -> Result<Self> {
        if s.len() != grid.n_nodes() {
            return Err(Error::invalid("input path length must match the grid"));
        }
        if s.iter().any(|v| !v.is_finite()) || !a.is_finite() {
            return Err(Error::invalid("input path and anchor must be finite"));
        }
        let n = grid.n_steps();
        if l(n, a) > SP_TOL || r(n, a) < -SP_TOL {
            return Err(Error::invalid("terminal anchor violates the constraints"));
        }
        Ok(Self {
            grid,
            s,
            a,
            l,
            r,
            constants,
        })
    }

    pub fn band(grid: TimeGrid, s: Vec<f64>, a: f64, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let sep = band_separation(&lower, &upper)?;
        Self::new(
            grid,
            s,
            a,
            move |i, x| x - upper[i],
            move |i, x| x - lower[i],
            LossConstants::unit(sep),
        )
    }

    /// The forward problem of the time reversal:
    /// `s'_t = a + s_T - s_{T-t}`, `l'(t, x) = l(T - t, x)`, `r'(t, x) = r(T - t, x)`.
    pub fn reversed(&self) -> SpProblem {
        let n = self.grid.n_steps();
        let sn = self.s[n];
        let s_bar: Vec<f64> = (0..=n).map(|i| self.a + sn - self.s[n - i]).collect();
        let (l, r) = (self.l.clone(), self.r.clone());
        SpProblem {
            grid: self.grid.clone(),
            s: s_bar,
            l: arc_loss(move |i, x| l(n - i, x)),
            r: arc_loss(move |i, x| r(n - i, x)),
            constants: self.constants,
        }
    }

    pub fn check_assumptions(&self) -> Result<LossReport> {
        let n = self.grid.n_steps();
        let path: Vec<f64> = (0..=n).map(|i| self.a + self.s[n] - self.s[i]).collect();
        check_mean_losses(&self.grid, &path, &self.l, &self.r, self.constants)
    }
}

fn band_separation(lower: &[f64], upper: &[f64]) -> Result<f64> {
    if lower.len() != upper.len() {
        return Err(Error::invalid("band edges must have equal length"));
    }
    let sep = lower
        .iter()
        .zip(upper)
        .map(|(lo, hi)| hi - lo)
        .fold(f64::INFINITY, f64::min);
    if !(sep > 0.0) {
        return Err(Error::invalid("band must have positive width"));
    }
    Ok(sep)
}

fn check_mean_losses(grid: &TimeGrid, path: &[f64], l: &MeanLoss, r: &MeanLoss, k: LossConstants) -> Result<LossReport> {
    let (l, r) = (l.clone(), r.clone());
    // Node indices travel through the time slot of the loss pair.
    let lp = LossPair::new(
        move |t, x, _| l(t as usize, x),
        move |t, x, _| r(t as usize, x),
        k.c,
        k.big_c,
        k.separation,
        0.0,
    )?;
    let lo = path.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = path.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo).max(1.0);
    let mut probes = Vec::new();
    for i in 0..grid.n_nodes() {
        for j in 0..9 {
            let x = lo - width + 3.0 * width * j as f64 / 8.0;
            probes.push(LossProbe::new(i as f64, x, x + 0.37 * width));
            probes.push(LossProbe::new(i as f64, x, x + 1e-3 * width));
        }
    }
    check_loss_assumptions(&lp, &probes)
}

/// Output of a forward or backward solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SpSolution {
    pub x: Vec<f64>,
    pub k: BVPath,
    /// Upper compensator bound: `l(t, s_t + phi_t) = 0`.
    pub phi: Vec<f64>,
    /// Lower compensator bound: `r(t, s_t + psi_t) = 0`.
    pub psi: Vec<f64>,
}

/// Per-node compensator bounds `(phi, psi)` solving `l(t, s_t + phi) = 0` and
/// `r(t, s_t + psi) = 0`.
pub fn root_phi_psi(p: &SpProblem) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = p.grid.n_nodes();
    let mut phi = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let c = p.constants.c;
    for i in 0..n {
        let si = p.s[i];
        let f = increasing_root(|x| (p.l)(i, si + x), c).map_err(|e| at_step(e, i))?;
        let g = increasing_root(|x| (p.r)(i, si + x), c).map_err(|e| at_step(e, i))?;
        phi.push(f);
        psi.push(g);
    }
    Ok((phi, psi))
}

fn at_step(e: Error, i: usize) -> Error {
    match e {
        Error::NumericalFailure { context, .. } => Error::NumericalFailure { context, step: Some(i) },
        other => other,
    }
}

/// Evaluates the explicit two-sided formula
/// `K_t = -max((-phi_0)^+ ∧ inf_{[0,t]}(-psi), sup_{s<=t} [(-phi_s) ∧ inf_{[s,t]}(-psi)])`
/// at every node in `O(n^2)`.
pub fn explicit_compensator(phi: &[f64], psi: &[f64]) -> Vec<f64> {
    let n = phi.len();
    let mut k = Vec::with_capacity(n);
    for i in 0..n {
        let mut run_min = f64::INFINITY;
        let mut best = f64::NEG_INFINITY;
        for j in (0..=i).rev() {
            run_min = run_min.min(-psi[j]);
            best = best.max((-phi[j]).min(run_min));
        }
        let first = (-phi[0]).max(0.0).min(run_min);
        k.push(-first.max(best));
    }
    k
}

/// Solves the forward problem with the explicit formula.
pub fn solve_sp(p: &SpProblem) -> Result<SpSolution> {
    p.validate()?;
    let (phi, psi) = root_phi_psi(p)?;
    let mut k = explicit_compensator(&phi, &psi);
    anchor_start(&mut k)?;
    let x: Vec<f64> = p.s.iter().zip(&k).map(|(s, k)| s + k).collect();
    Ok(SpSolution {
        x,
        k: BVPath::new(p.grid.clone(), k)?,
        phi,
        psi,
    })
}

fn anchor_start(k: &mut [f64]) -> Result<()> {
    if k[0].abs() > SP_TOL {
        return Err(Error::invalid("input path starts outside the constraints"));
    }
    k[0] = 0.0;
    Ok(())
}

/// Solves the backward problem by reversing time, solving forward, and mapping back
/// with `x_t = x'_{T-t}`, `K_t = K'_T - K'_{T-t}`.
pub fn solve_bsp(p: &BspProblem) -> Result<SpSolution> {
    let fwd = solve_sp(&p.reversed())?;
    Ok(reverse_solution(&fwd, &p.grid))
}

/// Maps a solution of the reversed forward problem back to backward time.
pub fn reverse_solution(fwd: &SpSolution, grid: &TimeGrid) -> SpSolution {
    let n = grid.n_steps();
    let kb = fwd.k.values();
    let x: Vec<f64> = (0..=n).map(|i| fwd.x[n - i]).collect();
    let k: Vec<f64> = (0..=n).map(|i| kb[n] - kb[n - i]).collect();
    let phi: Vec<f64> = (0..=n).map(|i| fwd.phi[n - i]).collect();
    let psi: Vec<f64> = (0..=n).map(|i| fwd.psi[n - i]).collect();
    SpSolution {
        x,
        k: BVPath::new(grid.clone(), k).expect("reversed compensator starts at zero"),
        phi,
        psi,
    }
}

/// Constraint and flat-off residuals of a solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpResiduals {
    pub max_l: f64,
    pub min_r: f64,
    /// `sum 1{l < -tol} dK_down`
    pub flatoff_l: f64,
    /// `sum 1{r > tol} dK_up`
    pub flatoff_r: f64,
    pub total_variation: f64,
}

impl SpResiduals {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_l <= tol
            && self.min_r >= -tol
            && self.flatoff_l <= tol * self.total_variation.max(1.0)
            && self.flatoff_r <= tol * self.total_variation.max(1.0)
    }
}

/// Time orientation of a solution, fixing which node an increment is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `K_{i} - K_{i-1}` acts at node `i`.
    Forward,
    /// `K_{i+1} - K_i` acts at node `i`.
    Backward,
}

pub fn residuals(sol: &SpSolution, l: &MeanLoss, r: &MeanLoss, orientation: Orientation, tol: f64) -> SpResiduals {
    let n = sol.x.len();
    let lv: Vec<f64> = (0..n).map(|i| l(i, sol.x[i])).collect();
    let rv: Vec<f64> = (0..n).map(|i| r(i, sol.x[i])).collect();
    let up = sol.k.up();
    let down = sol.k.down();
    let mut res = SpResiduals {
        max_l: lv.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min_r: rv.iter().copied().fold(f64::INFINITY, f64::min),
        flatoff_l: 0.0,
        flatoff_r: 0.0,
        total_variation: sol.k.total_variation(),
    };
    for j in 0..n.saturating_sub(1) {
        let node = match orientation {
            Orientation::Forward => j + 1,
            Orientation::Backward => j,
        };
        if lv[node] < -tol {
            res.flatoff_l += down[j + 1] - down[j];
        }
        if rv[node] > tol {
            res.flatoff_r += up[j + 1] - up[j];
        }
    }
    res
}

pub fn sp_residuals(p: &SpProblem, sol: &SpSolution) -> SpResiduals {
    residuals(sol, &p.l, &p.r, Orientation::Forward, SP_TOL)
}

pub fn bsp_residuals(p: &BspProblem, sol: &SpSolution) -> SpResiduals {
    residuals(sol, &p.l, &p.r, Orientation::Backward, SP_TOL)
}

/// `lhs <= rhs` check of a stability inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlackReport {
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
}

const PROBE_POINTS: usize = 33;

/// Sampled `sup_{t, x} |f1(t, x) - f2(t, x)|` with `x` probed per node on a window
/// around the supplied values.
fn sampled_sup_gap(f1: &MeanLoss, f2: &MeanLoss, centres: &[Vec<f64>]) -> f64 {
    let mut sup = 0.0f64;
    for (i, vals) in centres.iter().enumerate() {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        for j in 0..PROBE_POINTS {
            let x = lo + (hi - lo) * j as f64 / (PROBE_POINTS - 1) as f64;
            sup = sup.max((f1(i, x) - f2(i, x)).abs());
        }
    }
    sup
}

fn merged_constants(a: LossConstants, b: LossConstants) -> (f64, f64) {
    (a.c.min(b.c), a.big_c.max(b.big_c))
}

fn loss_gap(l1: &MeanLoss, r1: &MeanLoss, l2: &MeanLoss, r2: &MeanLoss, base: [&[f64]; 2], sols: [&SpSolution; 2]) -> f64 {
    let n = sols[0].x.len();
    let centres: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut v = Vec::with_capacity(6);
            for j in 0..2 {
                v.push(sols[j].x[i]);
                v.push(base[j][i] + sols[j].phi[i]);
                v.push(base[j][i] + sols[j].psi[i]);
            }
            v
        })
        .collect();
    sampled_sup_gap(l1, l2, &centres).max(sampled_sup_gap(r1, r2, &centres))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// `sup|K1 - K2| <= (C/c) sup|s1 - s2| + (1/c) (Lbar ∨ Rbar)` for two forward problems.
pub fn stability_gap_sp(p1: &SpProblem, p2: &SpProblem) -> Result<SlackReport> {
    if p1.grid != p2.grid {
        return Err(Error::invalid("stability check needs a shared grid"));
    }
    let s1 = solve_sp(p1)?;
    let s2 = solve_sp(p2)?;
    let (c, big_c) = merged_constants(p1.constants, p2.constants);
    let lhs = s1.k.sup_distance(&s2.k);
    let gap = loss_gap(&p1.l, &p1.r, &p2.l, &p2.r, [&p1.s, &p2.s], [&s1, &s2]);
    let rhs = big_c / c * sup_diff(&p1.s, &p2.s) + gap / c;
    Ok(SlackReport {
        lhs,
        rhs,
        slack: rhs - lhs,
    })
}

/// `sup|K1 - K2| <= 2(C/c)|a1 - a2| + 4(C/c) sup|s1 - s2| + (2/c)(Lbar ∨ Rbar)`
/// for two backward problems.
pub fn stability_gap_bsp(p1: &BspProblem, p2: &BspProblem) -> Result<SlackReport> {
    if p1.grid != p2.grid {
        return Err(Error::invalid("stability check needs a shared grid"));
    }
    let s1 = solve_bsp(p1)?;
    let s2 = solve_bsp(p2)?;
    let (c, big_c) = merged_constants(p1.constants, p2.constants);
    let lhs = s1.k.sup_distance(&s2.k);
    let n = p1.grid.n_steps();
    let base = |p: &BspProblem| -> Vec<f64> { (0..=n).map(|i| p.a + p.s[n] - p.s[i]).collect() };
    let (b1, b2) = (base(p1), base(p2));
    let gap = loss_gap(&p1.l, &p1.r, &p2.l, &p2.r, [&b1, &b2], [&s1, &s2]);
    let rhs = 2.0 * big_c / c * (p1.a - p2.a).abs() + 4.0 * big_c / c * sup_diff(&p1.s, &p2.s) + 2.0 * gap / c;
    Ok(SlackReport {
        lhs,
        rhs,
        slack: rhs - lhs,
    })
}

fn oracle_root(f: &dyn Fn(f64) -> f64) -> Result<f64> {
    let (mut lo, mut hi) = (-1.0, 1.0);
    let mut tries = 0;
    while f(lo) > 0.0 || f(hi) < 0.0 {
        lo *= 2.0;
        hi *= 2.0;
        tries += 1;
        if tries > 64 {
            return Err(Error::numerical("oracle bracket not found", None));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Greedy minimal-push recursion: carry `K` forward, then push `x` down to the root
/// of `l` if `l > 0`, or up to the root of `r` if `r < 0`. Roots come from plain
/// bisection, independent of [`root_phi_psi`].
pub fn oracle_discrete_reflection(p: &SpProblem) -> Result<SpSolution> {
    p.validate()?;
    let n = p.grid.n_nodes();
    let mut k = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    let mut phi = Vec::with_capacity(n);
    let mut psi = Vec::with_capacity(n);
    let mut carry = 0.0;
    for i in 0..n {
        let si = p.s[i];
        let xl = oracle_root(&|x| (p.l)(i, x)).map_err(|e| at_step(e, i))?;
        let xr = oracle_root(&|x| (p.r)(i, x)).map_err(|e| at_step(e, i))?;
        let mut xi = si + carry;
        if (p.l)(i, xi) > 0.0 {
            xi = xl;
        } else if (p.r)(i, xi) < 0.0 {
            xi = xr;
        }
        carry = xi - si;
        k.push(carry);
        x.push(xi);
        phi.push(xl - si);
        psi.push(xr - si);
    }
    anchor_start(&mut k)?;
    x[0] = p.s[0];
    Ok(SpSolution {
        x,
        k: BVPath::new(p.grid.clone(), k)?,
        phi,
        psi,
    })
}

/// Grid oscillation `max_i |s_{i+1} - s_i|`.
pub fn oscillation(s: &[f64]) -> f64 {
    s.windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use alloc::vec;

    fn unit_band(n: usize) -> (Vec<f64>, Vec<f64>) {
        (vec![-1.0; n + 1], vec![1.0; n + 1])
    }

    #[test]
    fn linear_inversion_of_roots() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
        let (lo, hi) = unit_band(10);
        let p = SpProblem::band(g.clone(), s, lo, hi).unwrap();
        let (phi, psi) = root_phi_psi(&p).unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            assert!((phi[i] - (1.0 - 2.0 * t)).abs() < 1e-12);
            assert!((psi[i] - (-1.0 - 2.0 * t)).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_root_matches_bisection() {
        let g = make_grid(0.0, 1.0, 2).unwrap();
        let p = SpProblem::new(
            g,
            vec![0.0; 3],
            |_, x| x + 0.1 * libm::sin(x) - 1.0,
            |_, x| x + 0.1 * libm::sin(x) + 1.0,
            LossConstants::new(0.9, 1.1, 2.0).unwrap(),
        )
        .unwrap();
        let (phi, _) = root_phi_psi(&p).unwrap();
        let (mut lo, mut hi) = (0.0f64, 2.0f64);
        for _ in 0..100 {
            let m = 0.5 * (lo + hi);
            if m + 0.1 * libm::sin(m) > 1.0 {
                hi = m;
            } else {
                lo = m;
            }
        }
        assert!((phi[0] - lo).abs() < 1e-12);
        assert!((phi[0] - 0.920_414_720_25).abs() < 1e-10);
    }

    #[test]
    fn inactive_band_gives_zero_compensator() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| 0.1 * libm::sin(2.0 * core::f64::consts::PI * t)).collect();
        let (lo, hi) = unit_band(100);
        let p = SpProblem::band(g, s.clone(), lo, hi).unwrap();
        let sol = solve_sp(&p).unwrap();
        assert!(sol.k.values().iter().all(|&k| k == 0.0));
        assert_eq!(sol.x, s);
    }

    #[test]
    fn ramp_reflects_at_upper_edge() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
        let (lo, hi) = unit_band(100);
        let p = SpProblem::band(g.clone(), s, lo, hi).unwrap();
        let sol = solve_sp(&p).unwrap();
        let orc = oracle_discrete_reflection(&p).unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            let k = -(2.0 * t - 1.0).max(0.0);
            assert!((sol.k.values()[i] - k).abs() < 1e-10);
            assert!((orc.k.values()[i] - k).abs() < 1e-10);
            assert!((sol.x[i] - (2.0 * t).min(1.0)).abs() < 1e-10);
        }
        assert!(sp_residuals(&p, &sol).passes(SP_TOL));
    }

    #[test]
    fn ramp_matches_finer_oracle() {
        let coarse = make_grid(0.0, 1.0, 20).unwrap();
        let fine = make_grid(0.0, 1.0, 200).unwrap();
        let mk = |g: &TimeGrid| {
            let s: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
            let n = g.n_steps();
            SpProblem::band(g.clone(), s, vec![-1.0; n + 1], vec![1.0; n + 1]).unwrap()
        };
        let sol = solve_sp(&mk(&coarse)).unwrap();
        let orc = oracle_discrete_reflection(&mk(&fine)).unwrap();
        for i in 0..=20 {
            assert!((sol.k.values()[i] - orc.k.values()[10 * i]).abs() < 1e-9);
        }
    }

    #[test]
    fn start_outside_constraints_rejected() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        let p = SpProblem::band(g, vec![2.0; 5], vec![-1.0; 5], vec![1.0; 5]).unwrap();
        assert!(matches!(solve_sp(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn backward_constants_stay_put() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let p = BspProblem::band(g, vec![0.0; 11], 0.0, vec![-1.0; 11], vec![1.0; 11]).unwrap();
        let sol = solve_bsp(&p).unwrap();
        assert!(sol.k.values().iter().all(|&k| k == 0.0));
        assert!(sol.x.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_ramp_closed_form() {
        let g = make_grid(0.0, 1.0, 100).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
        let p = BspProblem::band(g.clone(), s, 0.0, vec![-1.0; 101], vec![1.0; 101]).unwrap();
        let sol = solve_bsp(&p).unwrap();
        for (i, t) in g.nodes().iter().enumerate() {
            assert!((sol.k.values()[i] + (2.0 * t).min(1.0)).abs() < 1e-10, "node {i}");
            assert!((sol.x[i] - (2.0 * (1.0 - t)).min(1.0)).abs() < 1e-10, "node {i}");
        }
        assert!(bsp_residuals(&p, &sol).passes(SP_TOL));
    }

    #[test]
    fn backward_anchor_checked() {
        let g = make_grid(0.0, 1.0, 4).unwrap();
        assert!(BspProblem::band(g, vec![0.0; 5], 3.0, vec![-1.0; 5], vec![1.0; 5]).is_err());
    }

    #[test]
    fn shift_stability() {
        let g = make_grid(0.0, 1.0, 50).unwrap();
        let s1: Vec<f64> = g.nodes().iter().map(|t| 1.5 * libm::sin(4.0 * t)).collect();
        let s2: Vec<f64> = s1.iter().map(|v| v + 0.1).collect();
        let p1 = SpProblem::band(g.clone(), s1, vec![-1.0; 51], vec![1.0; 51]).unwrap();
        let p2 = SpProblem::band(g, s2, vec![-1.0; 51], vec![1.0; 51]).unwrap();
        let same = stability_gap_sp(&p1, &p1).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert!(same.slack >= 0.0);
        let rep = stability_gap_sp(&p1, &p2).unwrap();
        assert!(rep.lhs <= 0.1 + 1e-12);
        assert!((rep.rhs - 0.1).abs() < 1e-12);
    }

    #[test]
    fn anchor_stability() {
        let g = make_grid(0.0, 1.0, 50).unwrap();
        let s: Vec<f64> = g.nodes().iter().map(|t| 2.0 * t).collect();
        let p1 = BspProblem::band(g.clone(), s.clone(), 0.0, vec![-1.0; 51], vec![1.0; 51]).unwrap();
        let p2 = BspProblem::band(g, s, 0.05, vec![-1.0; 51], vec![1.0; 51]).unwrap();
        assert_eq!(stability_gap_bsp(&p1, &p1).unwrap().lhs, 0.0);
        let rep = stability_gap_bsp(&p1, &p2).unwrap();
        assert!((rep.rhs - 0.1).abs() < 1e-12);
        assert!(rep.slack >= -1e-10);
    }

    #[test]
    fn oracle_inactive() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let p = SpProblem::band(g, vec![0.5; 11], vec![-1.0; 11], vec![1.0; 11]).unwrap();
        let o = oracle_discrete_reflection(&p).unwrap();
        assert!(o.k.values().iter().all(|&k| k == 0.0));
    }

    #[test]
    fn assumption_check_on_band() {
        let g = make_grid(0.0, 1.0, 10).unwrap();
        let p = SpProblem::band(g, vec![0.0; 11], vec![-1.0; 11], vec![1.0; 11]).unwrap();
        let rep = p.check_assumptions().unwrap();
        assert!(rep.passed(), "{:?}", rep.failures);
    }
}
