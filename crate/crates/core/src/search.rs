//! Grid and sampling oracles over multiplier and bid space, plus exhaustive
//! oracles for tiny instances.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auction::{run_instance, BidMatrix, InstanceSpec, MechanismKind};
use crate::dynamics::uniform_bids;
use crate::error::{Error, Result};
use crate::instances::rng_from_seed;
use crate::matrix::Matrix;
use crate::report::{fmt_opt, fmt_sig, CsvTable};
use crate::welfare::{efficient_outcome, RoasCheck};

/// Largest number of grid points evaluated in one call.
pub const MAX_GRID_POINTS: usize = 10_000_000;
/// Largest number of bidders mapped by [`map_uniform_region`].
pub const MAX_REGION_BIDDERS: usize = 4;
/// Largest number of bidder-auction entries in general-bid mode.
pub const MAX_GENERAL_DIMS: usize = 9;

/// Evenly spaced points `lo, ..., hi`. Refining doubles the number of
/// intervals, so every refinement contains the coarser grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let g = Self { lo, hi, points };
        g.validate()?;
        Ok(g)
    }

    /// Default multiplier grid `[1, 5]` with 401 points.
    pub fn uniform_default() -> Self {
        Self {
            lo: 1.0,
            hi: 5.0,
            points: 401,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo >= 0.0 && self.hi >= self.lo && self.hi.is_finite()) {
            return Err(Error::Domain(format!(
                "grid range [{}, {}] is invalid",
                self.lo, self.hi
            )));
        }
        if self.points < 2 {
            return Err(Error::Domain(format!(
                "grid needs at least 2 points, got {}",
                self.points
            )));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    #[inline]
    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.points - 1) as f64
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.value(k)).collect()
    }

    pub fn refine(&self) -> Self {
        Self {
            points: 2 * (self.points - 1) + 1,
            ..*self
        }
    }
}

/// Mixed-radix decoding of a flat index, last coordinate fastest.
fn decode(mut idx: usize, radix: &[usize], out: &mut [usize]) {
    for d in (0..radix.len()).rev() {
        out[d] = idx % radix[d];
        idx /= radix[d];
    }
}

fn grid_size(radix: &[usize]) -> Result<usize> {
    radix
        .iter()
        .try_fold(1usize, |acc, &r| acc.checked_mul(r))
        .filter(|&n| n <= MAX_GRID_POINTS)
        .ok_or_else(|| {
            Error::TooLarge(format!(
                "grid with {radix:?} points per axis exceeds {MAX_GRID_POINTS} points"
            ))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionPoint {
    pub multipliers: Vec<f64>,
    pub feasible: bool,
    pub pattern: String,
    /// Ratio of the designated bidder; `None` when her efficient welfare is zero.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionMap {
    pub bidder: usize,
    pub points: Vec<RegionPoint>,
}

impl RegionMap {
    /// Smallest and largest feasible value on `axis` among points whose other
    /// coordinates equal `fixed` (pairs of axis and value, compared within 1e-9).
    pub fn feasible_range(&self, axis: usize, fixed: &[(usize, f64)]) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.feasible)
            .filter(|p| fixed.iter().all(|&(a, v)| (p.multipliers[a] - v).abs() <= 1e-9))
            .map(|p| p.multipliers[axis])
            .fold(None, |acc, x| match acc {
                None => Some((x, x)),
                Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
            })
    }

    pub fn to_csv(&self) -> String {
        let n = self.points.first().map_or(0, |p| p.multipliers.len());
        let names: Vec<String> = (0..n)
            .map(|k| format!("alpha_{k}"))
            .chain(["feasible", "pattern", "ratio"].map(String::from))
            .collect();
        let mut t = CsvTable::new(&names);
        for p in &self.points {
            let mut row: Vec<String> = p.multipliers.iter().map(|&a| fmt_sig(a)).collect();
            row.push(p.feasible.to_string());
            row.push(p.pattern.clone());
            row.push(fmt_opt(p.ratio));
            t.push(row);
        }
        t.render()
    }
}

/// Evaluates ROAS feasibility and the winner pattern on every uniform
/// multiplier tuple of the grid (one axis per bidder).
pub fn map_uniform_region(
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    grid: &GridSpec,
    bidder: usize,
    tolerance: f64,
) -> Result<RegionMap> {
    grid.validate()?;
    let n = instance.n_bidders();
    if n > MAX_REGION_BIDDERS {
        return Err(Error::TooLarge(format!(
            "region maps support at most {MAX_REGION_BIDDERS} bidders, got {n}"
        )));
    }
    let radix = vec![grid.points; n];
    let total = grid_size(&radix)?;
    let opt = efficient_outcome(instance);
    let opt_i = opt.opt(bidder);
    let points = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut coords = vec![0; n];
            decode(idx, &radix, &mut coords);
            let alphas: Vec<f64> = coords.iter().map(|&k| grid.value(k)).collect();
            let bids = uniform_bids(instance.values(), &alphas)?;
            let res = run_instance(instance, &bids, mechanism)?;
            let roas = RoasCheck::from_result(&res, &bids, tolerance);
            Ok(RegionPoint {
                multipliers: alphas,
                feasible: roas.feasible,
                pattern: res.winner_pattern(),
                ratio: (opt_i > 0.0).then(|| res.total_welfare(bidder) / opt_i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RegionMap { bidder, points })
}

/// Lowest ratio found over feasible competitor profiles, with its witness.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstCase {
    /// `None` when no evaluated profile was feasible.
    pub min_ratio: Option<f64>,
    pub witness: Option<BidMatrix>,
    pub evaluated: usize,
    pub feasible: usize,
}

impl WorstCase {
    pub fn is_empty(&self) -> bool {
        self.min_ratio.is_none()
    }
}

/// Reduces `(index, ratio)` pairs to the minimum ratio, lowest index on ties.
fn reduce_min(evaluated: usize, found: Vec<(usize, f64, BidMatrix)>) -> WorstCase {
    let feasible = found.len();
    let best = found.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    WorstCase {
        min_ratio: best.as_ref().map(|b| b.1),
        witness: best.map(|b| b.2),
        evaluated,
        feasible,
    }
}

fn positive_opt(instance: &InstanceSpec, bidder: usize) -> Result<f64> {
    let o = efficient_outcome(instance).opt(bidder);
    if o > 0.0 {
        Ok(o)
    } else {
        Err(Error::UndefinedRatio(format!(
            "bidder {bidder} has zero efficient welfare"
        )))
    }
}

/// Minimum of `W_i / OPT_i` over competitor uniform multipliers on `grid`
/// (one axis per competitor) with bidder `i` fixed at `alpha_i`, restricted
/// to jointly ROAS-feasible profiles.
pub fn worst_case_uniform(
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    bidder: usize,
    alpha_i: f64,
    grid: &GridSpec,
    tolerance: f64,
) -> Result<WorstCase> {
    grid.validate()?;
    let n = instance.n_bidders();
    let opt_i = positive_opt(instance, bidder)?;
    let competitors: Vec<usize> = (0..n).filter(|&k| k != bidder).collect();
    let radix = vec![grid.points; competitors.len()];
    let total = grid_size(&radix)?;
    let found = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut coords = vec![0; competitors.len()];
            decode(idx, &radix, &mut coords);
            let mut alphas = vec![alpha_i; n];
            for (c, &k) in competitors.iter().enumerate() {
                alphas[k] = grid.value(coords[c]);
            }
            let bids = uniform_bids(instance.values(), &alphas)?;
            let res = run_instance(instance, &bids, mechanism)?;
            let roas = RoasCheck::from_result(&res, &bids, tolerance);
            Ok(roas.feasible.then(|| (idx, res.total_welfare(bidder) / opt_i, bids)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_min(total, found.into_iter().flatten().collect()))
}

/// Per-entry competitor bid grid `[lo_factor * v, hi_factor * v]`, enumerated
/// exhaustively when small and sampled otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BidSampler {
    pub lo_factor: f64,
    pub hi_factor: f64,
    pub points: usize,
    pub samples: usize,
    pub seed: u64,
    /// Enumerate every grid point when the grid has at most this many.
    pub exhaustive_limit: usize,
}

impl BidSampler {
    /// Default grid `[beta * v, 3 v]` with 13 points per entry.
    pub fn new(beta: f64, samples: usize, seed: u64) -> Self {
        Self {
            lo_factor: beta,
            hi_factor: 3.0,
            points: 13,
            samples,
            seed,
            exhaustive_limit: 50_000,
        }
    }

    fn entry_grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.lo_factor, self.hi_factor, self.points)
    }
}

/// Minimum of `W_i / OPT_i` over sampled competitor bid matrices from the
/// per-entry grid, with bidder `i`'s bids fixed. Entries with zero value
/// always bid zero.
pub fn worst_case_general(
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    bidder: usize,
    bid_i: &[f64],
    sampler: &BidSampler,
    tolerance: f64,
) -> Result<WorstCase> {
    let grid = sampler.entry_grid()?;
    let (n, m) = (instance.n_bidders(), instance.n_auctions());
    if bid_i.len() != m {
        return Err(Error::Shape(format!(
            "bidder bids have length {} but M = {m}",
            bid_i.len()
        )));
    }
    let opt_i = positive_opt(instance, bidder)?;
    let free: Vec<(usize, usize)> = (0..n)
        .filter(|&k| k != bidder)
        .flat_map(|k| (0..m).map(move |j| (k, j)))
        .filter(|&(k, j)| instance.value(k, j) > 0.0)
        .collect();
    if free.len() > MAX_GENERAL_DIMS {
        return Err(Error::TooLarge(format!(
            "general-bid search supports at most {MAX_GENERAL_DIMS} free entries, got {}",
            free.len()
        )));
    }

    let mut base = BidMatrix::zeros(n, m);
    base.set_row(bidder, bid_i);
    let radix = vec![grid.points; free.len()];
    let full = radix.iter().try_fold(1usize, |a, &r| a.checked_mul(r));
    let profiles: Vec<Vec<usize>> = match full {
        Some(total) if total <= sampler.exhaustive_limit => (0..total)
            .map(|idx| {
                let mut c = vec![0; free.len()];
                decode(idx, &radix, &mut c);
                c
            })
            .collect(),
        _ => {
            let mut rng = rng_from_seed(sampler.seed);
            (0..sampler.samples)
                .map(|_| (0..free.len()).map(|_| rng.random_range(0..grid.points)).collect())
                .collect()
        }
    };
    let evaluated = profiles.len();
    let found = profiles
        .into_par_iter()
        .enumerate()
        .map(|(idx, coords)| {
            let mut bids = base.clone();
            for (&(k, j), &c) in free.iter().zip(&coords) {
                bids.set(k, j, grid.value(c) * instance.value(k, j));
            }
            let res = run_instance(instance, &bids, mechanism)?;
            let roas = RoasCheck::from_result(&res, &bids, tolerance);
            Ok(roas.feasible.then(|| (idx, res.total_welfare(bidder) / opt_i, bids)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_min(evaluated, found.into_iter().flatten().collect()))
}

/// Evaluates explicit competitor bid matrices (bidder `i`'s row is taken
/// from each candidate as given) and returns the feasible minimum.
pub fn worst_case_over(
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    bidder: usize,
    candidates: Vec<BidMatrix>,
    tolerance: f64,
) -> Result<WorstCase> {
    let opt_i = positive_opt(instance, bidder)?;
    let evaluated = candidates.len();
    let found = candidates
        .into_par_iter()
        .enumerate()
        .map(|(idx, bids)| {
            let res = run_instance(instance, &bids, mechanism)?;
            let roas = RoasCheck::from_result(&res, &bids, tolerance);
            Ok(roas.feasible.then(|| (idx, res.total_welfare(bidder) / opt_i, bids)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce_min(evaluated, found.into_iter().flatten().collect()))
}

/// Largest number of joint slot assignments enumerated by the oracle.
pub const MAX_ASSIGNMENTS: u128 = 50_000_000;

/// Maximum total welfare over every assignment of bidders to slots, found by
/// exhaustive enumeration. Auctions are independent, so each is enumerated
/// on its own; the joint count `prod_j (N+1)^{S_j}` is still capped.
pub fn brute_force_assignment_oracle(instance: &InstanceSpec) -> Result<f64> {
    let n = instance.n_bidders();
    let joint = instance.auctions().iter().try_fold(1u128, |acc, a| {
        (0..a.slots()).try_fold(acc, |x, _| x.checked_mul(n as u128 + 1))
    });
    match joint {
        Some(c) if c <= MAX_ASSIGNMENTS => {}
        _ => {
            return Err(Error::TooLarge(
                "too many assignments for exhaustive enumeration".into(),
            ))
        }
    }

    // Welfare is accumulated slot by slot from the top, matching the
    // summation order of the efficient outcome.
    fn best(auction: &crate::auction::AuctionSpec, values: &[f64], slot: usize, acc: f64, used: &mut [bool]) -> f64 {
        if slot > auction.slots() {
            return acc;
        }
        let mut top = best(auction, values, slot + 1, acc, used);
        for k in 0..values.len() {
            if !used[k] && values[k] > 0.0 {
                used[k] = true;
                let w = best(auction, values, slot + 1, acc + auction.ctr(slot) * values[k], used);
                used[k] = false;
                top = top.max(w);
            }
        }
        top
    }

    Ok(instance.auctions().iter().enumerate().fold(0.0, |total, (j, a)| {
        total + best(a, &instance.values().column(j), 1, 0.0, &mut vec![false; n])
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BestResponse {
    pub best_welfare: f64,
    /// Per-auction multipliers `g_j` of the unrestricted optimum (bids `g_j v_ij`).
    pub best_multipliers: Vec<f64>,
    pub uniform_welfare: f64,
    pub uniform_multiplier: f64,
    /// True when some uniform grid point reaches the unrestricted optimum.
    pub uniform_matches: bool,
}

/// Default per-auction multiplier grid `0, 0.25, ..., 4.75`.
pub fn default_response_grid() -> Vec<f64> {
    (0..20).map(|k| 0.25 * k as f64).collect()
}

/// Exhaustive best response of bidder `i` over per-auction bids `g_j v_ij`
/// with every `g_j` from `multipliers`, subject to her own ROAS constraint,
/// compared against the uniform profiles `g_j = g`.
pub fn brute_force_best_response(
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    bidder: usize,
    competitor_bids: &BidMatrix,
    multipliers: &[f64],
    tolerance: f64,
) -> Result<BestResponse> {
    let m = instance.n_auctions();
    if m > 3 {
        return Err(Error::TooLarge(format!(
            "best-response search supports M <= 3, got {m}"
        )));
    }
    if multipliers.is_empty() || multipliers.len() > 20 {
        return Err(Error::Domain(format!(
            "multiplier grid must have 1 to 20 points, got {}",
            multipliers.len()
        )));
    }
    if competitor_bids.shape() != (instance.n_bidders(), m) {
        return Err(Error::Shape("competitor bids do not match the instance".into()));
    }
    let radix = vec![multipliers.len(); m];
    let total = grid_size(&radix)?;
    let values = instance.values().row(bidder).to_vec();
    let evaluate = |g: &[f64]| -> Result<Option<f64>> {
        let mut bids = competitor_bids.clone();
        let row: Vec<f64> = g.iter().zip(&values).map(|(a, v)| a * v).collect();
        bids.set_row(bidder, &row);
        let res = run_instance(instance, &bids, mechanism)?;
        let slack = res.total_welfare(bidder) - res.total_payment(bidder);
        Ok((slack >= -tolerance).then(|| res.total_welfare(bidder)))
    };

    let mut best = (f64::NEG_INFINITY, vec![0.0; m]);
    let mut coords = vec![0; m];
    for idx in 0..total {
        decode(idx, &radix, &mut coords);
        let g: Vec<f64> = coords.iter().map(|&c| multipliers[c]).collect();
        if let Some(w) = evaluate(&g)? {
            if w > best.0 {
                best = (w, g);
            }
        }
    }
    let mut uniform = (f64::NEG_INFINITY, 0.0);
    for &g in multipliers {
        if let Some(w) = evaluate(&vec![g; m])? {
            if w > uniform.0 {
                uniform = (w, g);
            }
        }
    }
    let scale = 1.0 + best.0.abs();
    Ok(BestResponse {
        best_welfare: best.0,
        best_multipliers: best.1,
        uniform_welfare: uniform.0,
        uniform_multiplier: uniform.1,
        uniform_matches: uniform.0 >= best.0 - 1e-12 * scale,
    })
}

/// Competitor bid matrices mixing uniform multipliers and independent
/// per-entry multipliers, for randomized searches. Bidder `i`'s row is set to
/// `bid_i`; every other bid is at least `floor * v`.
pub fn sample_profiles(
    values: &Matrix,
    bidder: usize,
    bid_i: &[f64],
    floor: f64,
    ceiling: f64,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<BidMatrix> {
    let (n, m) = values.shape();
    (0..count)
        .map(|s| {
            let mut bids = BidMatrix::zeros(n, m);
            bids.set_row(bidder, bid_i);
            for k in (0..n).filter(|&k| k != bidder) {
                let uniform = rng.random_range(floor..=ceiling);
                for j in 0..m {
                    let g = if s % 2 == 0 {
                        uniform
                    } else {
                        rng.random_range(floor..=ceiling)
                    };
                    bids.set(k, j, g * values.get(k, j));
                }
            }
            bids
        })
        .collect()
}
