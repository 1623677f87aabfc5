//! Two constructions at finite horizon.
//!
//! The counterexample factor map `pi(x, z) = (f(x, z), z)` on `[0,1]^Z × Z`, where `Z` is
//! the 2-adic odometer and `f` applies the padded cube map `G` blockwise between
//! consecutive returns to a tower base. Its image has few nonzero coordinates while its
//! fibers are certified to have small width dimension.
//!
//! The wedge-of-cones embedding `F_n = (f', g', f' T^N, g' T^N, ...)` over a
//! zero-dimensional base, where the cutoff is the indicator of a clopen set.

use num_traits::{One, Signed, Zero};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::certs::{
    default_eta, disjoint_record, product_all, sample_fiber_check, trial_rng, DischargeRecord,
    Domain, DomainKind, EpsEmbeddingCertificate, FiberProbe, Obligation,
};
use crate::complex::SimplicialComplex;
use crate::error::{Error, Result};
use crate::gromov::{grid_for, padded_block_map, CubeFiberProbe, PaddedBlockMap};
use crate::rational::{pow2_neg, q, qi, Length, Q};
use crate::symdyn::{
    complement, d_n_symbolic, d_n_truncated, difference, is_disjoint, is_empty_set, is_subset,
    ocap_finite_n, ocap_limit, sbp_cover_refine, two_sided_tail, BlockGraph, CylinderSet,
    OdometerTower, Sft, ShiftWindow, Symbol,
};
use crate::geometry::sup_dist;

/// One of the parameter inequalities with its evaluated sides.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub holds: bool,
    pub detail: String,
}

fn ineq(name: &str, holds: bool, detail: String) -> Inequality {
    Inequality {
        name: name.into(),
        holds,
        detail,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterexampleParams {
    #[serde(with = "crate::rational::q_str")]
    pub delta: Q,
    #[serde(with = "crate::rational::q_str")]
    pub epsilon: Q,
    pub m: u64,
    /// Odometer level; blocks have length `2^k`.
    pub k: u32,
    pub l: u64,
    pub l_prime: u64,
    /// Kuhn grid resolution of the block cube maps.
    pub grid: u64,
    pub m_tail: u32,
    pub horizon: u64,
    pub seed: u64,
    /// The level was chosen by hand; a failing density inequality is reported, not fatal.
    pub level_override: bool,
}

const DENSITY: &str = "m/L < delta/2";

impl CounterexampleParams {
    /// Smallest `m`, `k` and `M` meeting every inequality.
    pub fn derive(delta: &Q, epsilon: &Q, horizon: u64, seed: u64) -> Result<Self> {
        if !delta.is_positive() || !epsilon.is_positive() {
            return Err(Error::OutOfRange("delta and epsilon must be positive".into()));
        }
        let m = u64::try_from((Q::one() / delta).floor().to_integer())
            .map_err(|_| Error::OutOfRange("1/delta too large".into()))?
            + 1;
        let half = delta / qi(2);
        let k = (1..=40u32)
            .find(|k| {
                let l = (1u64 << k) - 1;
                l > m && q(m as i64, l as i64) < half
            })
            .ok_or_else(|| Error::ParamInequality(format!("no level k <= 40 with {DENSITY}")))?;
        let m_tail = (1..=200u32)
            .find(|mm| tail_ok(*mm, epsilon) && window_ok(*mm, epsilon))
            .ok_or_else(|| Error::ParamInequality("no tail index M <= 200".into()))?;
        let mut p = CounterexampleParams {
            delta: delta.clone(),
            epsilon: epsilon.clone(),
            m,
            k,
            l: 0,
            l_prime: 0,
            grid: grid_for(&(epsilon / qi(4))),
            m_tail,
            horizon,
            seed,
            level_override: false,
        };
        p.set_level(k);
        Ok(p)
    }

    fn set_level(&mut self, k: u32) {
        self.k = k;
        self.l = (1u64 << k) - 1;
        self.l_prime = (1u64 << k) + 1;
    }

    /// Overrides the odometer level.
    pub fn with_level(mut self, k: u32) -> Self {
        self.set_level(k);
        self.level_override = true;
        self
    }

    pub fn block_len(&self) -> u64 {
        1 << self.k
    }

    pub fn inequalities(&self) -> Vec<Inequality> {
        let (m, l) = (self.m as i64, self.l as i64);
        let t = two_sided_tail(self.m_tail);
        let quarter = &self.epsilon / qi(4);
        let window = (qi(3) - &t) * &quarter + &t;
        let mesh = if self.grid == 1 { qi(1) } else { q(2, self.grid as i64) };
        vec![
            ineq("1/m < delta", q(1, m) < self.delta, format!("1/{m} vs {}", self.delta)),
            ineq("L > m", l > m, format!("{l} vs {m}")),
            ineq(
                DENSITY,
                l > 0 && q(m, l) < &self.delta / qi(2),
                format!("{} vs {}", q(m, l.max(1)), &self.delta / qi(2)),
            ),
            ineq(
                "L < 2^k < L'",
                self.l < self.block_len() && self.block_len() < self.l_prime,
                format!("{} < {} < {}", self.l, self.block_len(), self.l_prime),
            ),
            ineq(
                "sum_{|n|>=M} 2^-|n| < eps/2",
                tail_ok(self.m_tail, &self.epsilon),
                format!("{t} vs {}", &self.epsilon / qi(2)),
            ),
            ineq(
                "(3 - t) eps/4 + t <= eps",
                window <= self.epsilon,
                format!("{window} vs {}", self.epsilon),
            ),
            ineq("star mesh < eps/4", mesh < quarter, format!("{mesh} vs {quarter}")),
        ]
    }

    /// Fails on the first violated inequality, except the density inequality under a
    /// level override.
    pub fn check(&self) -> Result<()> {
        for i in self.inequalities() {
            if !i.holds && !(self.level_override && i.name == DENSITY) {
                return Err(Error::ParamInequality(format!("{} fails: {}", i.name, i.detail)));
            }
        }
        Ok(())
    }
}

fn tail_ok(m_tail: u32, epsilon: &Q) -> bool {
    two_sided_tail(m_tail) < epsilon / qi(2)
}

fn window_ok(m_tail: u32, epsilon: &Q) -> bool {
    let t = two_sided_tail(m_tail);
    (qi(3) - &t) * (epsilon / qi(4)) + t <= *epsilon
}

/// The factor map `pi` with its shared block map.
#[derive(Clone, Debug)]
pub struct FactorMapInstance {
    pub params: CounterexampleParams,
    pub tower: OdometerTower,
    pub block: PaddedBlockMap,
    /// Every parameter inequality, including any waived one.
    pub report: Vec<Inequality>,
}

pub fn build_counterexample(params: &CounterexampleParams) -> Result<FactorMapInstance> {
    params.check()?;
    let tower = OdometerTower::new(params.k)?;
    if tower.l() != params.l || tower.l_prime() != params.l_prime {
        return Err(Error::ParamInequality("L and L' must match the odometer tower".into()));
    }
    let block = padded_block_map(
        params.block_len() as usize,
        params.m as usize,
        &(&params.epsilon / qi(4)),
    )?;
    if block.width.grid.g != params.grid {
        return Err(Error::ParamInequality(format!(
            "grid {} does not match the resolution {} required by eps/4",
            params.grid, block.width.grid.g
        )));
    }
    Ok(FactorMapInstance {
        params: params.clone(),
        tower,
        block,
        report: params.inequalities(),
    })
}

/// A point `(x, z)` of `X` known on a window; `z` enters only through `z mod 2^k`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePoint {
    pub x: ShiftWindow,
    pub residue: u64,
}

/// A point `y = (p, z)` of the image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiberTarget {
    pub p: ShiftWindow,
    pub residue: u64,
}

const SAMPLE_DENOM: i64 = 1000;

impl FactorMapInstance {
    fn block_len(&self) -> i64 {
        self.params.block_len() as i64
    }

    /// Window `[-M - L', N + M + L')` on which samples are drawn.
    pub fn window(&self, horizon: u64) -> (i64, i64) {
        let pad = (self.params.m_tail as u64 + self.params.l_prime) as i64;
        (-pad, horizon as i64 + pad)
    }

    pub fn sample_point(&self, horizon: u64, rng: &mut ChaCha8Rng) -> SamplePoint {
        let (lo, hi) = self.window(horizon);
        let values = (lo..hi)
            .map(|_| q(rng.gen_range(0..=SAMPLE_DENOM), SAMPLE_DENOM))
            .collect();
        SamplePoint {
            x: ShiftWindow::new(lo, values),
            residue: rng.gen_range(0..self.tower.period()),
        }
    }

    /// `f(x, z)` on the complete blocks inside the window of `x`.
    pub fn eval_f(&self, pt: &SamplePoint) -> Result<ShiftWindow> {
        let a = self.tower.hit_at_or_after(pt.residue, pt.x.start);
        let b = self.tower.hit_at_or_before(pt.residue, pt.x.end());
        if b <= a {
            return Err(Error::Window {
                need_lo: a,
                need_hi: a + self.block_len(),
            });
        }
        let mut values = Vec::with_capacity((b - a) as usize);
        for s in (a..b).step_by(self.block_len() as usize) {
            values.extend(self.block.eval(pt.x.slice(s, s + self.block_len())?)?);
        }
        Ok(ShiftWindow::new(a, values))
    }

    /// `pi(x, z) = (f(x, z), z)`.
    pub fn eval_pi(&self, pt: &SamplePoint) -> Result<FiberTarget> {
        Ok(FiberTarget {
            p: self.eval_f(pt)?,
            residue: pt.residue,
        })
    }

    /// Dimension of the smallest coordinate subspace of `[0,1]^N` containing every
    /// `f(x, z)|[0, N)`: the positions that start a block, up to `m - 1` of them.
    pub fn hull_dim(&self, horizon: u64) -> u64 {
        let p = self.tower.period();
        let free = self.params.m - 1;
        (0..p)
            .map(|r| (0..horizon).filter(|n| (n + r) % p < free).count() as u64)
            .max()
            .unwrap_or(0)
    }

    /// Block boundaries `a_0 < a_1 < ... < a_{k+1}` with `a_0 <= -M` and
    /// `a_{k+1} >= N + M`.
    pub fn fiber_blocks(&self, residue: u64, horizon: u64) -> Vec<i64> {
        let m = self.params.m_tail as i64;
        let a0 = self.tower.hit_at_or_before(residue, -m);
        let end = self.tower.hit_at_or_after(residue, horizon as i64 + m);
        (a0..=end).step_by(self.block_len() as usize).collect()
    }

    fn block_targets<'a>(&self, y: &'a FiberTarget, horizon: u64) -> Result<Vec<(i64, &'a [Q])>> {
        if y.residue >= self.tower.period() {
            return Err(Error::OutOfRange(format!("residue {} out of range", y.residue)));
        }
        let bounds = self.fiber_blocks(y.residue, horizon);
        bounds
            .windows(2)
            .map(|w| {
                let slice = y.p.slice(w[0], w[1])?;
                match self.block.head(slice)? {
                    Some(h) if self.block.width.fiber_target(h)?.is_some() => Ok((w[0], slice)),
                    _ => Err(Error::Invalid(format!(
                        "y is not in the image of pi on block [{}, {})",
                        w[0], w[1]
                    ))),
                }
            })
            .collect()
    }
}

/// Result of counting nonzero coordinates of `f(x, z)|[0, N)` over samples.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountReport {
    pub horizon: u64,
    pub samples: u64,
    pub max_count: u64,
    /// `(ceil(N / 2^k) + 1)(m - 1)`.
    pub block_bound: u64,
    /// `delta N / 2 + 2m`.
    #[serde(with = "crate::rational::q_str")]
    pub density_bound: Q,
    pub hull_dim: u64,
    pub violations: Vec<serde_json::Value>,
}

impl CountReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn nonzero_count_check(
    inst: &FactorMapInstance,
    samples: u64,
    horizon: u64,
    seed: u64,
) -> Result<CountReport> {
    if horizon == 0 || horizon > inst.params.horizon {
        return Err(Error::OutOfRange(format!(
            "N = {horizon} outside 1..={}",
            inst.params.horizon
        )));
    }
    let p = &inst.params;
    let block_bound = (horizon.div_ceil(p.block_len()) + 1) * (p.m - 1);
    let density_bound = &p.delta * qi(horizon as i64) / qi(2) + qi(2 * p.m as i64);
    let counts: Vec<(u64, SamplePoint)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let pt = inst.sample_point(horizon, &mut trial_rng(seed, s));
            let f = inst.eval_f(&pt)?;
            let c = f.slice(0, horizon as i64)?.iter().filter(|v| !v.is_zero()).count();
            Ok((c as u64, pt))
        })
        .collect::<Result<_>>()?;
    let mut violations = Vec::new();
    for (s, (c, pt)) in counts.iter().enumerate() {
        if *c > block_bound || qi(*c as i64) >= density_bound {
            violations.push(json!({"sample": s, "count": c, "point": pt}));
        }
    }
    Ok(CountReport {
        horizon,
        samples,
        max_count: counts.iter().map(|c| c.0).max().unwrap_or(0),
        block_bound,
        density_bound,
        hull_dim: inst.hull_dim(horizon),
        violations,
    })
}

/// Certificate for `(pi^{-1}(y), d_N)` at scale `epsilon`: the product of the block fiber
/// certificates at `epsilon/4`, pulled back along the projection to `[a_0, a_{k+1})`.
pub fn fiber_dimension_certificate(
    inst: &FactorMapInstance,
    y: &FiberTarget,
    horizon: u64,
) -> Result<EpsEmbeddingCertificate> {
    if horizon == 0 {
        return Err(Error::OutOfRange("N must be at least 1".into()));
    }
    let p = &inst.params;
    let blocks = inst.block_targets(y, horizon)?;
    let certs = blocks
        .iter()
        .map(|(_, s)| inst.block.fiber_certificate(s))
        .collect::<Result<Vec<_>>>()?;
    let mut c = product_all(&certs)?;
    let a0 = blocks[0].0;
    let end = a0 + blocks.len() as i64 * inst.block_len();
    c.domain = Domain {
        kind: DomainKind::Product,
        label: format!("pi^-1(y) on [{a0}, {end})"),
        metric: format!("d_{horizon}"),
        parts: c.domain.parts,
    };
    c.epsilon = p.epsilon.clone();
    c.push(DischargeRecord::structural(
        "projection to the block window",
        Obligation::NonDecreasingMap {
            map: format!("(x, z) -> x|[{a0}, {end})"),
        },
    ));
    c.push(DischargeRecord::structural(
        "window closeness gives d_N closeness",
        Obligation::WindowProjection {
            m_tail: p.m_tail,
            inner: &p.epsilon / qi(4),
            outer: p.epsilon.clone(),
        },
    ));
    c.push(DischargeRecord::structural(
        "block count bound",
        Obligation::BlockBound {
            total: c.target_dim,
            horizon,
            m_tail: p.m_tail,
            l_prime: p.l_prime,
            m: p.m,
        },
    ));
    Ok(c)
}

/// Pairs in `pi^{-1}(y)` spliced from block fiber pairs; in a collision trial every
/// block shares its retraction image.
pub struct CounterexampleProbe<'a> {
    inst: &'a FactorMapInstance,
    horizon: u64,
    start: i64,
    blocks: Vec<CubeFiberProbe<'a>>,
}

impl<'a> CounterexampleProbe<'a> {
    pub fn new(inst: &'a FactorMapInstance, y: &FiberTarget, horizon: u64) -> Result<Self> {
        let targets = inst.block_targets(y, horizon)?;
        let blocks = targets
            .iter()
            .map(|(_, s)| {
                let head = inst.block.head(s)?.expect("checked");
                inst.block.width.fiber_probe(head)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CounterexampleProbe {
            inst,
            horizon,
            start: targets[0].0,
            blocks,
        })
    }

    fn retractions(&self, x: &ShiftWindow) -> Vec<Vec<Q>> {
        let n = self.inst.block_len() as usize;
        self.blocks
            .iter()
            .zip(x.values.chunks(n))
            .map(|(b, chunk)| b.retract(chunk))
            .collect()
    }
}

impl FiberProbe for CounterexampleProbe<'_> {
    type Point = ShiftWindow;

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(ShiftWindow, ShiftWindow)> {
        let collide = rng.gen_bool(0.5);
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for block in &self.blocks {
            let (u, v) = if collide {
                block.collision_pair(rng)?
            } else {
                block.independent_pair(rng)?
            };
            a.extend(u);
            b.extend(v);
        }
        Some((ShiftWindow::new(self.start, a), ShiftWindow::new(self.start, b)))
    }

    fn domain_dist(&self, a: &ShiftWindow, b: &ShiftWindow) -> Length {
        let d = d_n_truncated(self.horizon, a, b).expect("window covers [0, N)");
        Length::Exact(d.value + d.tail)
    }

    fn target_dist(&self, a: &ShiftWindow, b: &ShiftWindow) -> Length {
        let d = self
            .retractions(a)
            .iter()
            .zip(self.retractions(b))
            .map(|(u, v)| sup_dist(u, &v))
            .max()
            .unwrap_or_else(Q::zero);
        Length::Exact(d)
    }
}

/// Near-collision test for the fiber certificate over `y`.
pub fn counterexample_fiber_check(
    inst: &FactorMapInstance,
    y: &FiberTarget,
    horizon: u64,
    trials: u64,
    seed: u64,
) -> Result<DischargeRecord> {
    let probe = CounterexampleProbe::new(inst, y, horizon)?;
    Ok(sample_fiber_check(
        "sampled fiber pairs",
        &probe,
        &inst.params.epsilon,
        &default_eta(&inst.params.epsilon),
        trials,
        seed,
        Some(json!({
            "kind": "counterexample_fiber",
            "params": inst.params,
            "target": y,
            "horizon": horizon,
        })),
    ))
}

/// One row of the ratio table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(with = "crate::rational::q_str")]
    pub epsilon: Q,
    pub horizon: u64,
    pub fiber_dim: u64,
    #[serde(with = "crate::rational::q_str")]
    pub fiber_dim_over_n: Q,
    #[serde(with = "crate::rational::q_str")]
    pub image_dim_over_n: Q,
    /// `1/m + (2M + 2L')/(mN)`.
    #[serde(with = "crate::rational::q_str")]
    pub fiber_bound: Q,
}

/// Largest certified fiber dimension over `samples` sampled image points.
pub fn max_fiber_dim(inst: &FactorMapInstance, horizon: u64, samples: u64, seed: u64) -> Result<u64> {
    let dims: Vec<u64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let pt = inst.sample_point(horizon, &mut trial_rng(seed, s));
            let y = inst.eval_pi(&pt)?;
            Ok(fiber_dimension_certificate(inst, &y, horizon)?.target_dim)
        })
        .collect::<Result<_>>()?;
    Ok(dims.into_iter().max().unwrap_or(0))
}

pub fn mdim_report(
    delta: &Q,
    level: Option<u32>,
    epsilons: &[Q],
    horizons: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<ReportRow>> {
    if epsilons.is_empty() || horizons.is_empty() {
        return Err(Error::OutOfRange("epsilon and N lists must be nonempty".into()));
    }
    let max_n = *horizons.iter().max().unwrap();
    let mut rows = Vec::new();
    for eps in epsilons {
        let mut params = CounterexampleParams::derive(delta, eps, max_n, seed)?;
        if let Some(k) = level {
            params = params.with_level(k);
        }
        let inst = build_counterexample(&params)?;
        for &n in horizons {
            let dim = max_fiber_dim(&inst, n, samples, seed)?;
            let nq = qi(n as i64);
            let m = qi(params.m as i64);
            rows.push(ReportRow {
                epsilon: eps.clone(),
                horizon: n,
                fiber_dim: dim,
                fiber_dim_over_n: qi(dim as i64) / &nq,
                image_dim_over_n: qi(inst.hull_dim(n) as i64) / &nq,
                fiber_bound: Q::one() / &m
                    + qi(2 * params.m_tail as i64 + 2 * params.l_prime as i64) / (m * nq),
            });
        }
    }
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("eps,N,fiber_dim_over_N,image_dim_over_N\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.epsilon, r.horizon, r.fiber_dim_over_n, r.image_dim_over_n
        ));
    }
    out
}

/// A row for the stacked map `(pi_1, ..., pi_j)`: at scale `1/s` the fiber bound is the
/// smallest certified dimension among `pi_n` with `n >= s`, since fibers of the stack
/// lie in every `pi_n^{-1}(y_n)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackedRow {
    #[serde(with = "crate::rational::q_str")]
    pub scale: Q,
    pub horizon: u64,
    #[serde(with = "crate::rational::q_str")]
    pub fiber_dim_over_n: Q,
    /// Index `n` of the map whose certificate gives the bound.
    pub source: usize,
    #[serde(with = "crate::rational::q_str")]
    pub image_dim_over_n: Q,
}

/// Stacks `pi_n` built for `epsilon_n = 1/n` and `delta_n = delta / 2^n`, `n = 1..=depth`.
pub fn stacked_report(
    delta: &Q,
    depth: usize,
    horizons: &[u64],
    samples: u64,
    seed: u64,
) -> Result<Vec<StackedRow>> {
    if depth == 0 || horizons.is_empty() {
        return Err(Error::OutOfRange("depth and N list must be nonempty".into()));
    }
    let max_n = *horizons.iter().max().unwrap();
    let insts = (1..=depth)
        .map(|n| {
            let eps = q(1, n as i64);
            let d = delta * pow2_neg(n as u32);
            build_counterexample(&CounterexampleParams::derive(&d, &eps, max_n, seed)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &n in horizons {
        let dims = insts
            .iter()
            .map(|i| max_fiber_dim(i, n, samples, seed))
            .collect::<Result<Vec<_>>>()?;
        let image: u64 = insts.iter().map(|i| i.hull_dim(n)).sum();
        for s in 1..=depth {
            let (src, dim) = (s..=depth)
                .map(|i| (i, dims[i - 1]))
                .min_by_key(|(i, d)| (*d, *i))
                .unwrap();
            rows.push(StackedRow {
                scale: q(1, s as i64),
                horizon: n,
                fiber_dim_over_n: q(dim as i64, n as i64),
                source: src,
                image_dim_over_n: q(image as i64, n as i64),
            });
        }
    }
    Ok(rows)
}

/// Data for the wedge-of-cones embedding over a subshift of finite type `Y`: clopen
/// cover `V_i`, disjoint pieces `E_i ⊆ W_i ⊆ V_i`, the cutoff `rho = 1` on the union of
/// the `E_i` (zero elsewhere), fiber certificates `f_i` and a global certificate `g`.
#[derive(Clone, Debug)]
pub struct SbpEmbeddingInstance {
    pub sft: Sft,
    pub cover: Vec<CylinderSet>,
    pub pieces: Vec<CylinderSet>,
    pub neighborhoods: Vec<CylinderSet>,
    pub complement: CylinderSet,
    pub complement_ocap: Q,
    pub fiber_certs: Vec<EpsEmbeddingCertificate>,
    pub global: EpsEmbeddingCertificate,
}

impl SbpEmbeddingInstance {
    /// Pieces from peeling the cover.
    pub fn from_cover(
        sft: &Sft,
        cover: Vec<CylinderSet>,
        delta: &Q,
        fiber_certs: Vec<EpsEmbeddingCertificate>,
        global: EpsEmbeddingCertificate,
    ) -> Result<Self> {
        let r = sbp_cover_refine(sft, &cover, delta)?;
        Self::with_pieces(sft, cover, r.pieces, fiber_certs, global)
    }

    /// Explicit pieces, which need not cover `Y`. The neighborhoods are the pieces.
    pub fn with_pieces(
        sft: &Sft,
        cover: Vec<CylinderSet>,
        pieces: Vec<CylinderSet>,
        fiber_certs: Vec<EpsEmbeddingCertificate>,
        global: EpsEmbeddingCertificate,
    ) -> Result<Self> {
        if cover.len() != pieces.len() || cover.len() != fiber_certs.len() {
            return Err(Error::Invalid(
                "one piece and one fiber certificate per cover set expected".into(),
            ));
        }
        for c in &fiber_certs {
            if c.epsilon != global.epsilon {
                return Err(Error::MismatchedEpsilon {
                    left: c.epsilon.to_string(),
                    right: global.epsilon.to_string(),
                });
            }
        }
        for (i, (e, v)) in pieces.iter().zip(&cover).enumerate() {
            if !is_subset(sft, e, v) {
                return Err(Error::Invalid(format!("piece {i} is not inside cover set {i}")));
            }
        }
        for i in 0..pieces.len() {
            for j in i + 1..pieces.len() {
                if !is_disjoint(sft, &pieces[i], &pieces[j]) {
                    return Err(Error::Invalid(format!("W_{i} and W_{j} are not disjoint")));
                }
            }
        }
        let union = pieces
            .iter()
            .fold(CylinderSet::empty(), |acc, p| acc.union(p));
        let comp = if union.cylinders.is_empty() {
            CylinderSet::everything()
        } else {
            complement(sft, &union)
        };
        let complement_ocap = if is_empty_set(sft, &comp) {
            Q::zero()
        } else {
            ocap_limit(sft, &comp)?.value
        };
        Ok(SbpEmbeddingInstance {
            sft: sft.clone(),
            cover,
            neighborhoods: pieces.clone(),
            pieces,
            complement: comp,
            complement_ocap,
            fiber_certs,
            global,
        })
    }

    pub fn epsilon(&self) -> &Q {
        &self.global.epsilon
    }

    fn cutoff_is_zero(&self) -> bool {
        self.pieces.iter().all(|p| is_empty_set(&self.sft, p))
    }
}

#[derive(Clone, Debug)]
pub struct WedgeEmbedding {
    pub certificate: EpsEmbeddingCertificate,
    /// `dim K'` for the wedge of cones over the `K_i`.
    pub cone_dim: u64,
    /// `dim L' = dim L + 1`.
    pub global_cone_dim: u64,
    /// Largest number of `k < n` with `g'(T^{kN} x) != *`, exactly.
    pub g_count: u64,
    /// `nN * ocap_{nN}(Y \ E)`, which bounds `g_count`.
    pub ocap_count_bound: Q,
    pub complement_ocap: Q,
    /// Vertices of the block graph; `ocap_{nN}` exceeds the limit by at most this over `nN`.
    pub graph_size: u64,
    /// The cutoff vanishes everywhere, so only copies of `g` remain.
    pub degenerate: bool,
}

/// Certificate for `(X, d_{nN})` from `F_n = (f', g', f' T^N, g' T^N, ...)`.
pub fn wedge_cone_embedding(inst: &SbpEmbeddingInstance, horizon: u64, n: u64) -> Result<WedgeEmbedding> {
    if horizon == 0 || n == 0 {
        return Err(Error::OutOfRange("N and n must be at least 1".into()));
    }
    let sft = &inst.sft;
    let degenerate = inst.cutoff_is_zero();
    let cone_dim = inst.fiber_certs.iter().map(|c| c.target_dim).max().unwrap_or(0) + 1;
    let global_cone_dim = inst.global.target_dim + 1;
    let comp_empty = is_empty_set(sft, &inst.complement);
    let graph = BlockGraph::new(sft, &inst.complement);
    let g_count = if comp_empty {
        0
    } else {
        graph.max_strided_weight(horizon, n)
    };
    let total_time = horizon * n;
    let ocap_count_bound = if comp_empty {
        Q::zero()
    } else {
        ocap_finite_n(sft, &inst.complement, total_time)? * qi(total_time as i64)
    };
    let f_count = if degenerate { 0 } else { n };
    let total = f_count * cone_dim + g_count * global_cone_dim;

    let pieces_json = |sets: &[CylinderSet]| sets.iter().map(|s| s.to_json(sft)).collect::<Vec<_>>();
    let mut others = vec![
        disjoint_record(sft, &inst.neighborhoods),
        DischargeRecord::structural(
            "clopen cutoff",
            Obligation::Cutoff {
                sft: sft.to_json(),
                cover: pieces_json(&inst.cover),
                pieces: pieces_json(&inst.pieces),
                neighborhoods: pieces_json(&inst.neighborhoods),
            },
        ),
        DischargeRecord::structural(
            "times outside the pieces",
            Obligation::StridedCount {
                sft: sft.to_json(),
                set: inst.complement.to_json(sft),
                stride: horizon,
                count: n,
                value: g_count,
            },
        ),
        DischargeRecord::structural(
            "orbit segment map",
            Obligation::NonDecreasingMap {
                map: format!("x -> (x, T^{horizon} x, ..., T^{} x)", (n - 1) * horizon),
            },
        ),
    ];
    for (i, c) in inst.fiber_certs.iter().enumerate() {
        for r in &c.obligations {
            let mut r = r.clone();
            r.defines_dim = false;
            r.name = format!("f_{i}: {}", r.name);
            others.push(r);
        }
    }
    for r in &inst.global.obligations {
        let mut r = r.clone();
        r.defines_dim = false;
        r.name = format!("g: {}", r.name);
        others.push(r);
    }
    let certificate = EpsEmbeddingCertificate::new(
        Domain::new(DomainKind::Product, "X", format!("d_{total_time}")),
        inst.epsilon().clone(),
        DischargeRecord::structural(
            "wedge of cones dimension",
            Obligation::WedgeDimension {
                f_count,
                cone_dim,
                g_count,
                global_cone_dim,
                total,
            },
        ),
        others,
    )?;
    Ok(WedgeEmbedding {
        certificate,
        cone_dim,
        global_cone_dim,
        g_count,
        ocap_count_bound,
        complement_ocap: inst.complement_ocap.clone(),
        graph_size: graph.len() as u64,
        degenerate,
    })
}

/// Smallest `R` with `sum_{|j| > R} 2^{-|j|} < epsilon`.
pub fn label_reach(epsilon: &Q) -> u32 {
    (1..).find(|r| two_sided_tail(r + 1) < *epsilon).expect("epsilon positive")
}

/// Certificate for the window-label map `(y, s) -> (y|[-R, N + R), s)` on
/// `X = Y × [0,1]` with `T(y, s) = (sigma y, s)`: images are disjoint copies of `[0,1]`,
/// and equal images force `d_N < epsilon`.
pub fn window_label_certificate(horizon: u64, epsilon: &Q, label: &str) -> Result<EpsEmbeddingCertificate> {
    if !epsilon.is_positive() {
        return Err(Error::OutOfRange("epsilon must be positive".into()));
    }
    let r = label_reach(epsilon);
    let interval = SimplicialComplex::simplex(vec![0, 1])?;
    EpsEmbeddingCertificate::new(
        Domain::new(DomainKind::SymbolicBlock, label, format!("d_{horizon}")),
        epsilon.clone(),
        DischargeRecord::structural(
            "image in disjoint intervals",
            Obligation::SubcomplexDimension {
                complex: interval.to_json(),
                vertices: vec![0, 1],
                dim: 1,
            },
        ),
        vec![DischargeRecord::structural(
            "equal labels give d_N below epsilon",
            Obligation::WindowProjection {
                m_tail: r + 1,
                inner: Q::zero(),
                outer: epsilon.clone(),
            },
        )],
    )
}

/// The wedge instance on `X = Y × [0,1]` with window-label maps for every `f_i` and `g`.
pub fn label_instance(
    sft: &Sft,
    cover: Vec<CylinderSet>,
    pieces: Vec<CylinderSet>,
    horizon: u64,
    epsilon: &Q,
) -> Result<SbpEmbeddingInstance> {
    let fiber_certs = (0..cover.len())
        .map(|i| window_label_certificate(horizon, epsilon, &format!("pi^-1(V_{i})")))
        .collect::<Result<_>>()?;
    let global = window_label_certificate(horizon, epsilon, "X")?;
    SbpEmbeddingInstance::with_pieces(sft, cover, pieces, fiber_certs, global)
}

/// A point `(y, s)` of `Y × [0,1]` with `y` known on `[start, start + word.len())`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPoint {
    pub start: i64,
    pub word: Vec<Symbol>,
    #[serde(with = "crate::rational::q_str")]
    pub s: Q,
}

fn forward_walk(sft: &Sft, from: Symbol, len: usize, rng: &mut ChaCha8Rng) -> Vec<Symbol> {
    let k = sft.alphabet_size() as Symbol;
    let mut out = Vec::with_capacity(len);
    let mut cur = from;
    for _ in 0..len {
        let next: Vec<Symbol> = (0..k).filter(|b| sft.allows(cur, *b)).collect();
        cur = next[rng.gen_range(0..next.len())];
        out.push(cur);
    }
    out
}

fn backward_walk(sft: &Sft, from: Symbol, len: usize, rng: &mut ChaCha8Rng) -> Vec<Symbol> {
    let k = sft.alphabet_size() as Symbol;
    let mut out = Vec::with_capacity(len);
    let mut cur = from;
    for _ in 0..len {
        let prev: Vec<Symbol> = (0..k).filter(|a| sft.allows(*a, cur)).collect();
        cur = prev[rng.gen_range(0..prev.len())];
        out.push(cur);
    }
    out.reverse();
    out
}

/// `sup_{0 <= t < T}` of the weight `sum 2^{-|j|}` of offsets `j` with `t + j` outside
/// `[start, end)`.
fn outside_weight(start: i64, end: i64, total_time: u64) -> Q {
    let side = |t: i64| {
        // left: j <= start - 1 - t, right: j >= end - t
        let l = (t - start + 1).max(0) as u32;
        let r = (end - t).max(0) as u32;
        pow2_neg(l) * qi(2) + pow2_neg(r) * qi(2)
    };
    side(0).max(side(total_time as i64 - 1))
}

struct WedgeProbe<'a> {
    inst: &'a SbpEmbeddingInstance,
    horizon: u64,
    n: u64,
    reach: i64,
    pad: i64,
}

impl WedgeProbe<'_> {
    fn total_time(&self) -> i64 {
        (self.horizon * self.n) as i64
    }

    fn window(&self) -> (i64, i64) {
        (-self.reach - self.pad, self.total_time() + self.reach + self.pad)
    }

    /// `F_n(y, s)`: per time `kN`, the piece index or `None` for `g'`, with the label.
    fn image(&self, p: &LabelPoint) -> Vec<(Option<usize>, Vec<Symbol>)> {
        (0..self.n as i64)
            .map(|k| {
                let base = k * self.horizon as i64;
                let lo = base - self.reach - p.start;
                let hi = base + self.horizon as i64 + self.reach - p.start;
                let label = p.word[lo as usize..hi as usize].to_vec();
                let piece = self
                    .inst
                    .pieces
                    .iter()
                    .position(|e| e.contains_word(p.start - base, &p.word));
                (piece, label)
            })
            .collect()
    }
}

impl FiberProbe for WedgeProbe<'_> {
    type Point = LabelPoint;

    fn sample_pair(&self, rng: &mut ChaCha8Rng) -> Option<(LabelPoint, LabelPoint)> {
        let sft = &self.inst.sft;
        let (lo, hi) = self.window();
        let first = rng.gen_range(0..sft.alphabet_size()) as Symbol;
        let mut word = vec![first];
        word.extend(forward_walk(sft, first, (hi - lo - 1) as usize, rng));
        let s = q(rng.gen_range(0..=SAMPLE_DENOM), SAMPLE_DENOM);
        let a = LabelPoint {
            start: lo,
            word: word.clone(),
            s: s.clone(),
        };
        if rng.gen_bool(0.5) {
            let mut other = vec![rng.gen_range(0..sft.alphabet_size()) as Symbol];
            other.extend(forward_walk(sft, other[0], (hi - lo - 1) as usize, rng));
            let b = LabelPoint {
                start: lo,
                word: other,
                s: q(rng.gen_range(0..=SAMPLE_DENOM), SAMPLE_DENOM),
            };
            return Some((a, b));
        }
        // keep the labelled window, resample the padding on both sides
        let p = self.pad as usize;
        let core = &word[p..word.len() - p];
        let mut w2 = backward_walk(sft, core[0], p, rng);
        w2.extend_from_slice(core);
        w2.extend(forward_walk(sft, *core.last().unwrap(), p, rng));
        Some((a, LabelPoint { start: lo, word: w2, s }))
    }

    fn domain_dist(&self, a: &LabelPoint, b: &LabelPoint) -> Length {
        let t = self.total_time() as u64;
        let known = d_n_symbolic(t, a.start, &a.word, &b.word).expect("same layout");
        let (lo, hi) = self.window();
        let y = known + outside_weight(lo, hi, t);
        Length::Exact(y.max((&a.s - &b.s).abs()))
    }

    fn target_dist(&self, a: &LabelPoint, b: &LabelPoint) -> Length {
        let same = a.s == b.s && self.image(a) == self.image(b);
        Length::Exact(if same { Q::zero() } else { Q::one() })
    }
}

/// Near-collision test of `F_n` for a window-label instance.
pub fn wedge_fiber_check(
    inst: &SbpEmbeddingInstance,
    horizon: u64,
    n: u64,
    trials: u64,
    seed: u64,
) -> Result<DischargeRecord> {
    if horizon == 0 || n == 0 {
        return Err(Error::OutOfRange("N and n must be at least 1".into()));
    }
    let (span_lo, span_hi) = crate::symdyn::common_window(inst.pieces.iter().chain(&inst.cover));
    let reach = label_reach(inst.epsilon()) as i64;
    let pad = reach + span_lo.abs().max(span_hi.abs()) + 1;
    let probe = WedgeProbe {
        inst,
        horizon,
        n,
        reach,
        pad,
    };
    let sft = &inst.sft;
    Ok(sample_fiber_check(
        "sampled F_n fibers",
        &probe,
        inst.epsilon(),
        &default_eta(inst.epsilon()),
        trials,
        seed,
        Some(json!({
            "kind": "wedge_fiber",
            "sft": sft.to_json(),
            "cover": inst.cover.iter().map(|c| c.to_json(sft)).collect::<Vec<_>>(),
            "pieces": inst.pieces.iter().map(|c| c.to_json(sft)).collect::<Vec<_>>(),
            "horizon": horizon,
            "n": n,
            "epsilon": inst.epsilon().to_string(),
        })),
    ))
}

/// `Y \ (E_1 ∪ ... ∪ E_m)` for explicit pieces, as a cylinder set.
pub fn uncovered(sft: &Sft, pieces: &[CylinderSet]) -> CylinderSet {
    let union = pieces.iter().fold(CylinderSet::empty(), |a, p| a.union(p));
    difference(sft, &CylinderSet::everything(), &union)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certs::{product_certificate, Status};

    fn half_params() -> CounterexampleParams {
        CounterexampleParams::derive(&q(1, 2), &q(1, 2), 80, 7).unwrap()
    }

    #[test]
    fn derived_parameters() {
        let p = half_params();
        assert_eq!((p.m, p.k, p.l, p.l_prime, p.m_tail, p.grid), (3, 4, 15, 17, 5, 17));
        assert!(p.inequalities().iter().all(|i| i.holds));
        let p3 = p.clone().with_level(3);
        assert_eq!((p3.l, p3.l_prime, p3.block_len()), (7, 9, 8));
        let bad: Vec<_> = p3.inequalities().into_iter().filter(|i| !i.holds).collect();
        assert_eq!(bad.len(), 1);
        assert_eq!(bad[0].name, DENSITY);
        assert!(p3.check().is_ok());
        let mut strict = p3.clone();
        strict.level_override = false;
        assert!(matches!(strict.check(), Err(Error::ParamInequality(_))));
        assert!(p.clone().with_level(1).check().is_err());

        let p34 = CounterexampleParams::derive(&q(3, 4), &q(1, 2), 8, 0).unwrap();
        assert_eq!((p34.m, p34.k), (2, 3));
    }

    #[test]
    fn zero_input_and_passthrough() {
        let inst = build_counterexample(&half_params().with_level(3)).unwrap();
        let mut rng = trial_rng(1, 0);
        let mut pt = inst.sample_point(16, &mut rng);
        let y = inst.eval_pi(&pt).unwrap();
        assert_eq!(y.residue, pt.residue);
        pt.x.values.iter_mut().for_each(|v| *v = Q::zero());
        let f = inst.eval_f(&pt).unwrap();
        assert!(f.values.iter().all(Zero::is_zero));
        assert_eq!(inst.block.eval(&vec![Q::zero(); 8]).unwrap(), vec![Q::zero(); 8]);
    }

    #[test]
    fn counts_stay_below_both_bounds() {
        let inst = build_counterexample(&half_params().with_level(3)).unwrap();
        let r = nonzero_count_check(&inst, 20, 80, 3).unwrap();
        assert!(r.passed());
        assert_eq!(r.block_bound, 22);
        assert_eq!(r.density_bound, qi(26));
        assert!(r.max_count <= r.hull_dim);
        assert_eq!(r.hull_dim, 20);
        let one = nonzero_count_check(&inst, 5, 8, 3).unwrap();
        assert!(one.max_count <= 2);
        assert!(nonzero_count_check(&inst, 1, 81, 3).is_err());
    }

    #[test]
    fn fiber_certificates() {
        let inst = build_counterexample(&half_params().with_level(3)).unwrap();
        let pt = inst.sample_point(32, &mut trial_rng(4, 0));
        let y = inst.eval_pi(&pt).unwrap();
        let c = fiber_dimension_certificate(&inst, &y, 32).unwrap();
        assert!(c.all_structural(), "{:?}", c.recheck_structural());
        assert!(qi(c.target_dim as i64) < q(32 + 10 + 18, 3));
        let blocks = inst.fiber_blocks(y.residue, 32);
        assert!(blocks[0] <= -5 && *blocks.last().unwrap() >= 37);
        let r = counterexample_fiber_check(&inst, &y, 32, 100, 2).unwrap();
        assert_eq!(r.status, Status::SampledOnly, "{:?}", r.witness);

        let mut tampered = y.clone();
        let i = tampered.p.values.len() - 1;
        tampered.p.values[i] = q(1, 2);
        assert!(fiber_dimension_certificate(&inst, &tampered, 32).is_err());
    }

    #[test]
    fn divisible_blocks_give_equality() {
        let p = CounterexampleParams::derive(&q(3, 4), &q(1, 2), 8, 0).unwrap();
        let inst = build_counterexample(&p).unwrap();
        let mut pt = inst.sample_point(8, &mut trial_rng(0, 0));
        pt.residue = 0;
        let y = inst.eval_pi(&pt).unwrap();
        let c = fiber_dimension_certificate(&inst, &y, 8).unwrap();
        let b = inst.fiber_blocks(0, 8);
        let span = (b.last().unwrap() - b[0]) as u64;
        assert_eq!(c.target_dim * p.m, span);
    }

    #[test]
    fn report_rows() {
        let rows = mdim_report(&q(1, 2), Some(3), &[q(1, 2)], &[8, 16], 3, 1).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.fiber_dim_over_n <= r.fiber_bound);
        }
        let csv = report_csv(&rows);
        assert!(csv.starts_with("eps,N,fiber_dim_over_N,image_dim_over_N\n1/2,8,"));
        let stacked = stacked_report(&q(1, 2), 2, &[256], 1, 0).unwrap();
        assert_eq!(stacked.len(), 2);
        assert_eq!(stacked[1].source, 2);
        assert!(stacked[0].fiber_dim_over_n <= stacked[1].fiber_dim_over_n);
    }

    fn golden_cover() -> (Sft, Vec<CylinderSet>) {
        let sft = Sft::golden_mean();
        (sft, vec![CylinderSet::one(0, vec![0]), CylinderSet::one(0, vec![1])])
    }

    #[test]
    fn wedge_full_cover() {
        let (sft, cover) = golden_cover();
        let inst = label_instance(&sft, cover.clone(), cover, 2, &q(1, 2)).unwrap();
        assert_eq!(inst.complement_ocap, Q::zero());
        let w = wedge_cone_embedding(&inst, 2, 4).unwrap();
        assert_eq!(w.g_count, 0);
        assert_eq!(w.certificate.target_dim, 4 * w.cone_dim);
        assert!(w.certificate.all_structural(), "{:?}", w.certificate.recheck_structural());
        let r = wedge_fiber_check(&inst, 2, 4, 300, 5).unwrap();
        assert_eq!(r.status, Status::SampledOnly, "{:?}", r.witness);
        if let Obligation::Sampled(s) = &r.obligation {
            assert!(s.near_pairs > 0);
        }
    }

    #[test]
    fn wedge_punctured_cover() {
        let (sft, cover) = golden_cover();
        let pieces = vec![CylinderSet::one(0, vec![0, 0]), CylinderSet::one(0, vec![1])];
        let inst = label_instance(&sft, cover.clone(), pieces.clone(), 1, &q(1, 2)).unwrap();
        assert_eq!(inst.complement_ocap, q(1, 2));
        for n in [4u64, 9] {
            let w = wedge_cone_embedding(&inst, 1, n).unwrap();
            assert!(qi(w.g_count as i64) <= w.ocap_count_bound);
            assert!(w.ocap_count_bound <= &w.complement_ocap * qi(n as i64) + qi(w.graph_size as i64));
            assert!(w.certificate.all_structural());
        }
        let r = wedge_fiber_check(&inst, 1, 4, 300, 5).unwrap();
        assert_eq!(r.status, Status::SampledOnly);

        // no pieces at all: only copies of g remain
        let none = vec![CylinderSet::empty(), CylinderSet::empty()];
        let inst0 = label_instance(&sft, cover.clone(), none, 1, &q(1, 2)).unwrap();
        let w0 = wedge_cone_embedding(&inst0, 1, 3).unwrap();
        assert!(w0.degenerate);
        assert_eq!(w0.certificate.target_dim, 3 * w0.global_cone_dim);

        let overlapping = vec![CylinderSet::one(0, vec![0]), CylinderSet::one(0, vec![0])];
        assert!(label_instance(&sft, cover.clone(), overlapping, 1, &q(1, 2)).is_err());
        let mut inst_bad = inst.clone();
        inst_bad.fiber_certs[0].epsilon = q(1, 3);
        assert!(matches!(
            SbpEmbeddingInstance::with_pieces(&sft, cover, pieces, inst_bad.fiber_certs, inst_bad.global),
            Err(Error::MismatchedEpsilon { .. })
        ));
    }

    #[test]
    fn point_factor_keeps_dimension() {
        let inst = build_counterexample(&half_params().with_level(3)).unwrap();
        let pt = inst.sample_point(8, &mut trial_rng(9, 0));
        let c = fiber_dimension_certificate(&inst, &inst.eval_pi(&pt).unwrap(), 8).unwrap();
        let p = product_certificate(&c, &EpsEmbeddingCertificate::point(c.epsilon.clone()).unwrap()).unwrap();
        assert_eq!(p.target_dim, c.target_dim);
    }
}
