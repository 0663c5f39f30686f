//! Closed-form individual welfare lower bounds and their ingredients.

use std::ops::Range;

use serde::Serialize;

use crate::auction::{AuctionResult, InstanceSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::report::{fmt_opt, fmt_sig, CsvTable};
use crate::welfare::{efficient_outcome, EfficientOutcome};

/// Largest `min(M, N - 1)` accepted by exact covering enumeration.
pub const DEFAULT_COVERING_CAP: usize = 12;
const DEFAULT_NODE_BUDGET: u64 = 2_000_000;

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Domain(format!("beta must lie in [0, 1], got {beta}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("multiplier must exceed 1, got {alpha}")))
    }
}

fn positive_opt(opt: &EfficientOutcome, i: usize) -> Result<f64> {
    let o = opt.opt(i);
    if o > 0.0 {
        Ok(o)
    } else {
        Err(Error::UndefinedRatio(format!("bidder {i} has zero efficient welfare")))
    }
}

/// `1 - (1 - beta) / (alpha - 1) * OPT_{-i} / OPT_i`; may be negative.
pub fn vcg_bound(opt: &EfficientOutcome, i: usize, alpha: f64, beta: f64) -> Result<f64> {
    check_alpha(alpha)?;
    check_beta(beta)?;
    let o = positive_opt(opt, i)?;
    Ok(1.0 - (1.0 - beta) / (alpha - 1.0) * opt.opt_minus(i) / o)
}

/// Smallest advice accuracy that makes every bidder with `OPT_i > 0` at
/// least `delta`-approximate when all multipliers are at least `alpha_min`.
/// Clamped to `[0, 1]`; `delta = 1` yields 1, meaning beta must tend to 1.
pub fn required_beta(delta: f64, alpha_min: f64, opt: &EfficientOutcome) -> Result<f64> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::Domain(format!("target ratio must lie in [0, 1], got {delta}")));
    }
    check_alpha(alpha_min)?;
    if opt.opt_per_bidder.iter().all(|&o| o <= 0.0) {
        return Err(Error::UndefinedRatio("every bidder has zero efficient welfare".into()));
    }
    if delta == 1.0 {
        return Ok(1.0);
    }
    let min_share = (0..opt.n_bidders())
        .filter(|&i| opt.opt(i) > 0.0 && opt.opt_minus(i) > 0.0)
        .map(|i| opt.opt(i) / opt.opt_minus(i))
        .fold(f64::INFINITY, f64::min);
    if min_share.is_infinite() {
        return Ok(0.0);
    }
    Ok((1.0 - (1.0 - delta) * (alpha_min - 1.0) * min_share).clamp(0.0, 1.0))
}

/// Largest `Delta` such that within every auction each positive value is at
/// least `Delta` times the next smaller positive value. Zeros impose no
/// constraint, equal positive values give 1 and an instance with at most one
/// positive value per auction gives `+inf`.
pub fn delta_separation(values: &Matrix) -> f64 {
    let mut delta = f64::INFINITY;
    for j in 0..values.cols() {
        let mut col: Vec<f64> = values.column(j).into_iter().filter(|&v| v > 0.0).collect();
        col.sort_by(|a, b| b.total_cmp(a));
        for w in col.windows(2) {
            delta = delta.min(w[0] / w[1]);
        }
    }
    delta.max(1.0)
}

/// `Delta / (2 Delta - 1)`, the accuracy that GSP/GFP guarantees require beta to exceed.
pub fn gsp_gfp_threshold(delta: f64) -> f64 {
    if delta.is_infinite() {
        0.5
    } else {
        delta / (2.0 * delta - 1.0)
    }
}

/// `1 - (1 - beta) / (beta - Delta / (2 Delta - 1)) * OPT_{-i} / OPT_i`.
pub fn gsp_gfp_bound(opt: &EfficientOutcome, i: usize, beta: f64, delta: f64) -> Result<f64> {
    if !(delta > 1.0) {
        return Err(Error::Domain(format!("separation factor must exceed 1, got {delta}")));
    }
    check_beta(beta)?;
    let threshold = gsp_gfp_threshold(delta);
    if beta <= threshold {
        return Err(Error::Domain(format!(
            "beta = {beta} must exceed Delta/(2 Delta - 1) = {threshold} for Delta = {delta}"
        )));
    }
    let o = positive_opt(opt, i)?;
    Ok(1.0 - (1.0 - beta) / (beta - threshold) * opt.opt_minus(i) / o)
}

/// Uniform multipliers in `[1, Delta)` keep every truthful-competitor
/// profile feasible on a `Delta`-separated instance. Sufficient, not necessary.
pub fn valid_multiplier_region(delta: f64) -> Result<Range<f64>> {
    if delta > 1.0 {
        Ok(1.0..delta)
    } else {
        Err(Error::Domain(format!("separation factor must exceed 1, got {delta}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Covering {
    /// Sorted competitor indices.
    pub members: Vec<usize>,
    /// Efficient welfare when only `members` participate.
    pub restricted_welfare: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringSet {
    pub bidder: usize,
    /// Auctions where the bidder has positive efficient welfare.
    pub target: Vec<usize>,
    pub coverings: Vec<Covering>,
    /// False when some target auction has no competitor able to take it.
    pub coverable: bool,
}

impl CoveringSet {
    pub fn max_welfare(&self) -> Option<f64> {
        self.coverings
            .iter()
            .map(|c| c.restricted_welfare)
            .fold(None, |acc, w| Some(acc.map_or(w, |a: f64| a.max(w))))
    }

    pub fn member_sets(&self) -> Vec<Vec<usize>> {
        self.coverings.iter().map(|c| c.members.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CoveringOptions {
    pub cap: usize,
    pub node_budget: u64,
}

impl Default for CoveringOptions {
    fn default() -> Self {
        Self {
            cap: DEFAULT_COVERING_CAP,
            node_budget: DEFAULT_NODE_BUDGET,
        }
    }
}

/// Target auctions of bidder `i` in which competitor `k` has a smaller positive value.
fn potential_losses(instance: &InstanceSpec, target: &[usize], i: usize, k: usize) -> u128 {
    target.iter().enumerate().fold(0u128, |mask, (bit, &j)| {
        let vk = instance.value(k, j);
        if vk > 0.0 && vk < instance.value(i, j) {
            mask | (1u128 << bit)
        } else {
            mask
        }
    })
}

/// True when every member can be matched to a distinct auction of its own set.
fn has_distinct_representatives(sets: &[u128]) -> bool {
    fn augment(k: usize, sets: &[u128], owner: &mut [Option<usize>], seen: &mut u128) -> bool {
        let mut avail = sets[k];
        while avail != 0 {
            let bit = avail.trailing_zeros() as usize;
            avail &= avail - 1;
            if *seen & (1u128 << bit) != 0 {
                continue;
            }
            *seen |= 1u128 << bit;
            let free = match owner[bit] {
                None => true,
                Some(other) => augment(other, sets, owner, seen),
            };
            if free {
                owner[bit] = Some(k);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; 128];
    (0..sets.len()).all(|k| {
        let mut seen = 0u128;
        augment(k, sets, &mut owner, &mut seen)
    })
}

struct Search<'a> {
    sets: &'a [u128],
    suffix_union: Vec<u128>,
    full: u128,
    budget: u64,
    found: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn walk(&mut self, idx: usize, chosen: &mut Vec<usize>, covered: u128) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::TooLarge("covering search exceeded its node budget".into()));
        }
        self.budget -= 1;
        if covered | self.suffix_union[idx] != self.full {
            return Ok(());
        }
        if idx == self.sets.len() {
            self.found.push(chosen.clone());
            return Ok(());
        }
        chosen.push(idx);
        let member_sets: Vec<u128> = chosen.iter().map(|&c| self.sets[c]).collect();
        if has_distinct_representatives(&member_sets) {
            self.walk(idx + 1, chosen, covered | self.sets[idx])?;
        }
        chosen.pop();
        self.walk(idx + 1, chosen, covered)
    }
}

/// All competitor sets that can jointly take every target auction of bidder
/// `i`, each member taking at least one auction of its own. Equivalently:
/// sets whose potential-loss sets cover the target and admit a system of
/// distinct representatives.
pub fn enumerate_coverings(instance: &InstanceSpec, opt: &EfficientOutcome, i: usize) -> Result<CoveringSet> {
    enumerate_coverings_with(instance, opt, i, CoveringOptions::default())
}

pub fn enumerate_coverings_with(
    instance: &InstanceSpec,
    opt: &EfficientOutcome,
    i: usize,
    options: CoveringOptions,
) -> Result<CoveringSet> {
    let n = instance.n_bidders();
    let m = instance.n_auctions();
    if i >= n {
        return Err(Error::Domain(format!("bidder {i} out of range for {n} bidders")));
    }
    let bound = m.min(n.saturating_sub(1));
    if bound > options.cap {
        return Err(Error::TooLarge(format!(
            "instance too large for exact covering enumeration: min(M, N-1) = {bound} exceeds cap {}",
            options.cap
        )));
    }
    let target = opt.winning_auctions(i);
    if target.is_empty() {
        return Ok(CoveringSet {
            bidder: i,
            target,
            coverings: vec![Covering {
                members: Vec::new(),
                restricted_welfare: 0.0,
            }],
            coverable: true,
        });
    }
    if target.len() > 128 {
        return Err(Error::TooLarge(format!(
            "bidder {i} wins {} auctions; at most 128 are supported",
            target.len()
        )));
    }

    let (competitors, sets): (Vec<usize>, Vec<u128>) = (0..n)
        .filter(|&k| k != i)
        .map(|k| (k, potential_losses(instance, &target, i, k)))
        .filter(|&(_, s)| s != 0)
        .unzip();
    let full = if target.len() == 128 {
        u128::MAX
    } else {
        (1u128 << target.len()) - 1
    };
    let mut suffix_union = vec![0u128; sets.len() + 1];
    for idx in (0..sets.len()).rev() {
        suffix_union[idx] = suffix_union[idx + 1] | sets[idx];
    }
    let coverable = suffix_union[0] == full;

    let mut coverings = Vec::new();
    if coverable {
        let mut search = Search {
            sets: &sets,
            suffix_union,
            full,
            budget: options.node_budget,
            found: Vec::new(),
        };
        search.walk(0, &mut Vec::new(), 0)?;
        for picks in search.found {
            let members: Vec<usize> = picks.iter().map(|&p| competitors[p]).collect();
            let restricted_welfare = efficient_outcome(&instance.restricted_to(&members)).opt_total;
            coverings.push(Covering {
                members,
                restricted_welfare,
            });
        }
        coverings.sort_by(|a, b| a.members.len().cmp(&b.members.len()).then(a.members.cmp(&b.members)));
    }
    Ok(CoveringSet {
        bidder: i,
        target,
        coverings,
        coverable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovedBound {
    pub value: f64,
    pub max_covering_welfare: Option<f64>,
    pub coverable: bool,
    pub coverings: CoveringSet,
}

/// `1 - (1 - beta) / (alpha - beta) * max covering welfare / OPT_i`.
/// Reported as 1 with `coverable = false` when no covering exists.
pub fn improved_bound(instance: &InstanceSpec, i: usize, alpha: f64, beta: f64) -> Result<ImprovedBound> {
    let opt = efficient_outcome(instance);
    improved_bound_with(instance, &opt, i, alpha, beta, CoveringOptions::default())
}

pub fn improved_bound_with(
    instance: &InstanceSpec,
    opt: &EfficientOutcome,
    i: usize,
    alpha: f64,
    beta: f64,
    options: CoveringOptions,
) -> Result<ImprovedBound> {
    check_alpha(alpha)?;
    check_beta(beta)?;
    let coverings = enumerate_coverings_with(instance, opt, i, options)?;
    let max_w = coverings.max_welfare();
    let value = match max_w {
        Some(w) if opt.opt(i) > 0.0 => 1.0 - (1.0 - beta) / (alpha - beta) * w / opt.opt(i),
        _ => 1.0,
    };
    Ok(ImprovedBound {
        value,
        max_covering_welfare: max_w,
        coverable: coverings.coverable,
        coverings,
    })
}

/// Auctions where, under `result`, competitor `k` has a smaller value than
/// bidder `i` yet sits at or above `i`'s efficient slot while `i` sits below it.
pub fn outcome_loss_sets(
    instance: &InstanceSpec,
    opt: &EfficientOutcome,
    result: &AuctionResult,
    i: usize,
) -> Vec<(usize, Vec<usize>)> {
    let below = |p: Option<usize>, star: usize| p.is_none_or(|p| p > star);
    (0..instance.n_bidders())
        .filter(|&k| k != i)
        .map(|k| {
            let js = (0..instance.n_auctions())
                .filter(|&j| {
                    let Some(star) = opt.positions[i][j] else {
                        return false;
                    };
                    opt.opt_ij(i, j) > 0.0
                        && instance.value(k, j) < instance.value(i, j)
                        && result.positions[k][j].is_some_and(|lk| lk <= star)
                        && below(result.positions[i][j], star)
                })
                .collect();
            (k, js)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub bidder: usize,
    pub alpha: f64,
    pub beta: f64,
    pub base_bound: f64,
    pub improved_bound: Option<f64>,
    pub gsp_gfp_bound: Option<f64>,
    pub delta: f64,
    pub max_covering_welfare: Option<f64>,
    pub coverable: Option<bool>,
}

impl BoundReport {
    pub const CSV_HEADER: [&'static str; 8] = [
        "bidder",
        "alpha",
        "beta",
        "base_bound",
        "improved_bound",
        "gsp_gfp_bound",
        "delta",
        "max_covering_welfare",
    ];

    /// Every bound that applies to bidder `i`. The improved bound is left
    /// empty when covering enumeration is too large; the GSP/GFP bound when
    /// beta does not exceed the separation threshold.
    pub fn compute(instance: &InstanceSpec, opt: &EfficientOutcome, i: usize, alpha: f64, beta: f64) -> Result<Self> {
        let base_bound = vcg_bound(opt, i, alpha, beta)?;
        let delta = delta_separation(instance.values());
        let improved = match improved_bound_with(instance, opt, i, alpha, beta, CoveringOptions::default()) {
            Ok(b) => Some(b),
            Err(Error::TooLarge(_)) => None,
            Err(e) => return Err(e),
        };
        let gsp_gfp_bound = if delta > 1.0 && beta > gsp_gfp_threshold(delta) {
            Some(gsp_gfp_bound(opt, i, beta, delta)?)
        } else {
            None
        };
        Ok(Self {
            bidder: i,
            alpha,
            beta,
            base_bound,
            improved_bound: improved.as_ref().map(|b| b.value),
            gsp_gfp_bound,
            delta,
            max_covering_welfare: improved.as_ref().and_then(|b| b.max_covering_welfare),
            coverable: improved.as_ref().map(|b| b.coverable),
        })
    }

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.bidder.to_string(),
            fmt_sig(self.alpha),
            fmt_sig(self.beta),
            fmt_sig(self.base_bound),
            fmt_opt(self.improved_bound),
            fmt_opt(self.gsp_gfp_bound),
            fmt_sig(self.delta),
            fmt_opt(self.max_covering_welfare),
        ]
    }

    pub fn to_csv(reports: &[BoundReport]) -> String {
        let mut t = CsvTable::new(&Self::CSV_HEADER);
        for r in reports {
            t.push(r.csv_row());
        }
        t.render()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::AuctionSpec;
    use crate::instances::{covering_example, tightness_instance};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn vcg_bound_on_tightness_parameters() {
        let t = tightness_instance(0.5, 2.0, 1.0, 1e-6, 1.0).unwrap();
        let opt = efficient_outcome(&t.instance);
        assert!(close(opt.opt(0), 1.5));
        let b = vcg_bound(&opt, 0, 2.0, 0.5).unwrap();
        // OPT_{-1} carries the epsilon perturbation
        assert!((b - 2.0 / 3.0).abs() < 1e-5);
        assert!(close(vcg_bound(&opt, 0, 2.0, 1.0).unwrap(), 1.0));
        assert!(vcg_bound(&opt, 0, 1.0, 0.5).is_err());
    }

    #[test]
    fn vcg_bound_is_one_without_competitor_welfare() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![2.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        let opt = efficient_outcome(&inst);
        assert_eq!(vcg_bound(&opt, 0, 1.5, 0.3).unwrap(), 1.0);
        assert!(matches!(vcg_bound(&opt, 1, 1.5, 0.3), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn required_beta_examples() {
        // OPT = (1.5, 1.0): share of bidder 0 is 1.5, of bidder 1 is 2/3
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![1.5, 0.0], vec![0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let opt = efficient_outcome(&inst);
        assert_eq!(required_beta(1.0, 2.0, &opt).unwrap(), 1.0);
        let b = required_beta(2.0 / 3.0, 2.0, &opt).unwrap();
        assert!(close(b, 1.0 - (1.0 / 3.0) * (2.0 / 3.0)));
        // at the threshold the smaller bidder's guarantee is exactly the target
        assert!(close(vcg_bound(&opt, 1, 2.0, b).unwrap(), 2.0 / 3.0));
        assert_eq!(required_beta(0.0, 5.0, &opt).unwrap(), 0.0);

        // nobody faces competitor welfare, so any accuracy works
        let solo = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![1.5, 0.0], vec![0.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(required_beta(0.5, 2.0, &efficient_outcome(&solo)).unwrap(), 0.0);
    }

    #[test]
    fn required_beta_rejects_all_zero() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![0.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        assert!(required_beta(0.5, 2.0, &efficient_outcome(&inst)).is_err());
    }

    #[test]
    fn separation_examples() {
        let col = |v: Vec<f64>| Matrix::from_rows(v.into_iter().map(|x| vec![x]).collect()).unwrap();
        assert_eq!(delta_separation(&col(vec![4.0, 1.0])), 4.0);
        assert_eq!(delta_separation(&col(vec![4.0, 2.0, 1.0])), 2.0);
        assert_eq!(delta_separation(&col(vec![3.0, 3.0])), 1.0);
        assert_eq!(delta_separation(&col(vec![3.0, 0.0])), f64::INFINITY);
        assert_eq!(delta_separation(&col(vec![5.0, 0.0, 1.0])), 5.0);
    }

    #[test]
    fn gsp_gfp_bound_examples() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.1]]).unwrap(),
        )
        .unwrap();
        let opt = efficient_outcome(&inst);
        assert!(close(gsp_gfp_bound(&opt, 0, 0.8, 2.0).unwrap(), 0.85));
        assert!(close(gsp_gfp_bound(&opt, 0, 0.75, f64::INFINITY).unwrap(), 0.9));
        let err = gsp_gfp_bound(&opt, 0, 0.6, 2.0).unwrap_err();
        assert!(err.to_string().contains("0.666"));
    }

    #[test]
    fn multiplier_region() {
        assert_eq!(valid_multiplier_region(3.0).unwrap(), 1.0..3.0);
        assert!(valid_multiplier_region(1.0).is_err());
    }

    #[test]
    fn printed_covering_example() {
        let inst = covering_example();
        let opt = efficient_outcome(&inst);
        let cs = enumerate_coverings(&inst, &opt, 0).unwrap();
        assert_eq!(cs.member_sets(), vec![vec![1], vec![1, 2]]);
        assert_eq!(cs.coverings[0].restricted_welfare, 12.0);
        assert_eq!(cs.coverings[1].restricted_welfare, 15.0);
        let ib = improved_bound(&inst, 0, 2.0, 0.5).unwrap();
        assert!(close(ib.value, 1.0 - (0.5 / 1.5) * 15.0 / 7.0));
    }

    #[test]
    fn empty_target_has_single_empty_covering() {
        let inst = covering_example();
        let opt = efficient_outcome(&inst);
        // bidder 1 takes the third auction on the index tie-break, bidder 2 wins nothing
        let cs = enumerate_coverings(&inst, &opt, 2).unwrap();
        assert_eq!(cs.member_sets(), vec![Vec::<usize>::new()]);
        assert_eq!(improved_bound(&inst, 2, 2.0, 0.5).unwrap().value, 1.0);
    }

    #[test]
    fn two_bidders_single_candidate() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![3.0, 2.0], vec![1.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let opt = efficient_outcome(&inst);
        assert_eq!(
            enumerate_coverings(&inst, &opt, 0).unwrap().member_sets(),
            vec![vec![1]]
        );

        let partial = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![3.0, 2.0], vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        let opt = efficient_outcome(&partial);
        let cs = enumerate_coverings(&partial, &opt, 0).unwrap();
        assert!(!cs.coverable);
        assert!(cs.coverings.is_empty());
        assert_eq!(improved_bound(&partial, 0, 2.0, 0.5).unwrap().value, 1.0);
    }

    #[test]
    fn cap_is_enforced() {
        let n = 14;
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 13],
            Matrix::from_fn(n, 13, |i, j| (i + j + 1) as f64),
        )
        .unwrap();
        let opt = efficient_outcome(&inst);
        assert!(matches!(enumerate_coverings(&inst, &opt, 0), Err(Error::TooLarge(_))));
    }

    #[test]
    fn distinct_representatives() {
        assert!(has_distinct_representatives(&[0b11, 0b10]));
        assert!(!has_distinct_representatives(&[0b01, 0b01]));
        assert!(has_distinct_representatives(&[0b001, 0b011, 0b111]));
        assert!(!has_distinct_representatives(&[0b011, 0b011, 0b011]));
    }
}
