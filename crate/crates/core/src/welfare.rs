//! Efficient outcomes, individual welfare, welfare loss and ROAS feasibility.

use serde::Serialize;

use crate::auction::{allocate, run_instance, AuctionResult, BidMatrix, InstanceSpec, MechanismKind, SlotAssignment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::report::{fmt_opt, fmt_sig, CsvTable};

/// Absolute slack below zero still counted as ROAS-feasible.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// Allocation by true values and the welfare aggregates derived from it.
#[derive(Debug, Clone, PartialEq)]
pub struct EfficientOutcome {
    pub assignments: Vec<SlotAssignment>,
    /// `positions[i][j]`: 1-based efficient slot of bidder `i` in auction `j`.
    pub positions: Vec<Vec<Option<usize>>>,
    pub opt_matrix: Matrix,
    pub opt_per_bidder: Vec<f64>,
    pub opt_total: f64,
    pub opt_minus: Vec<f64>,
}

impl EfficientOutcome {
    pub fn opt(&self, i: usize) -> f64 {
        self.opt_per_bidder[i]
    }

    pub fn opt_minus(&self, i: usize) -> f64 {
        self.opt_minus[i]
    }

    pub fn opt_ij(&self, i: usize, j: usize) -> f64 {
        self.opt_matrix.get(i, j)
    }

    pub fn n_bidders(&self) -> usize {
        self.opt_per_bidder.len()
    }

    /// Auctions where bidder `i` has positive efficient welfare.
    pub fn winning_auctions(&self, i: usize) -> Vec<usize> {
        (0..self.opt_matrix.cols())
            .filter(|&j| self.opt_matrix.get(i, j) > 0.0)
            .collect()
    }
}

pub fn efficient_outcome(instance: &InstanceSpec) -> EfficientOutcome {
    let n = instance.n_bidders();
    let m = instance.n_auctions();
    let mut assignments = Vec::with_capacity(m);
    let mut positions = vec![vec![None; m]; n];
    let mut opt_matrix = Matrix::zeros(n, m);
    // Summed auction by auction, slot by slot, so the total does not depend
    // on bidder order.
    let mut opt_total = 0.0;
    for (j, auction) in instance.auctions().iter().enumerate() {
        let asg = allocate(auction, &instance.values().column(j));
        let mut auction_total = 0.0;
        for (pos, k) in asg.winners() {
            positions[k][j] = Some(pos);
            let w = auction.ctr(pos) * instance.value(k, j);
            opt_matrix.set(k, j, w);
            auction_total += w;
        }
        opt_total += auction_total;
        assignments.push(asg);
    }
    let opt_per_bidder: Vec<f64> = (0..n).map(|i| opt_matrix.row_sum(i)).collect();
    let opt_minus = opt_per_bidder.iter().map(|o| opt_total - o).collect();
    EfficientOutcome {
        assignments,
        positions,
        opt_matrix,
        opt_per_bidder,
        opt_total,
        opt_minus,
    }
}

/// Sum of `OPT_ij - W_ij` over the auctions where bidder `i` falls short.
pub fn welfare_loss(opt: &EfficientOutcome, result: &AuctionResult, i: usize) -> f64 {
    (0..opt.opt_matrix.cols())
        .map(|j| opt.opt_ij(i, j) - result.welfare.get(i, j))
        .filter(|&d| d > 0.0)
        .sum()
}

/// Auctions where bidder `i` obtains less than her efficient welfare.
pub fn loss_auctions(opt: &EfficientOutcome, result: &AuctionResult, i: usize) -> Vec<usize> {
    (0..opt.opt_matrix.cols())
        .filter(|&j| result.welfare.get(i, j) < opt.opt_ij(i, j))
        .collect()
}

/// `W_i / OPT_i`, undefined when `OPT_i = 0`.
pub fn welfare_ratio(opt: &EfficientOutcome, result: &AuctionResult, i: usize) -> Result<f64> {
    let o = opt.opt(i);
    if o > 0.0 {
        Ok(result.total_welfare(i) / o)
    } else {
        Err(Error::UndefinedRatio(format!("bidder {i} has zero efficient welfare")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoasCheck {
    pub slacks: Vec<f64>,
    pub feasible: bool,
}

impl RoasCheck {
    pub fn from_result(result: &AuctionResult, bids: &BidMatrix, tolerance: f64) -> Self {
        let n = result.payments.rows();
        let slacks: Vec<f64> = (0..n)
            .map(|i| result.total_welfare(i) - result.total_payment(i))
            .collect();
        let feasible = !bids.is_all_zero() && slacks.iter().all(|&s| s >= -tolerance);
        Self { slacks, feasible }
    }

    /// Worst ROAS violation `max(0, -min slack)`.
    pub fn max_violation(&self) -> f64 {
        self.slacks.iter().fold(0.0, |acc: f64, &s| acc.max(-s))
    }
}

/// Per-bidder slack `W_i - P_i` and joint feasibility. The all-zero profile
/// is reported infeasible.
pub fn roas_check(
    instance: &InstanceSpec,
    bids: &BidMatrix,
    mechanism: MechanismKind,
    tolerance: f64,
) -> Result<RoasCheck> {
    let result = run_instance(instance, bids, mechanism)?;
    Ok(RoasCheck::from_result(&result, bids, tolerance))
}

/// `1 - B / OPT_i`.
pub fn loss_to_guarantee(bound: f64, opt_i: f64) -> Result<f64> {
    if bound < 0.0 || !bound.is_finite() {
        return Err(Error::Domain(format!(
            "loss bound must be finite and nonnegative, got {bound}"
        )));
    }
    if opt_i <= 0.0 {
        return Err(Error::UndefinedRatio(format!(
            "efficient welfare {opt_i} is not positive"
        )));
    }
    Ok(1.0 - bound / opt_i)
}

/// Fraction of `ratios` at most `z`.
pub fn empirical_cdf(ratios: &[f64], z: f64) -> Result<f64> {
    if ratios.is_empty() {
        return Err(Error::Empty("empirical cdf of an empty sample".into()));
    }
    if let Some(bad) = ratios.iter().find(|r| !r.is_finite()) {
        return Err(Error::Domain(format!("non-finite ratio {bad}")));
    }
    let below = ratios.iter().filter(|&&r| r <= z).count();
    Ok(below as f64 / ratios.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BidderWelfare {
    pub bidder: usize,
    pub welfare: f64,
    pub opt: f64,
    pub loss: f64,
    /// `None` when `OPT_i = 0`.
    pub ratio: Option<f64>,
    pub roas_slack: f64,
    pub payment: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareReport {
    pub bidders: Vec<BidderWelfare>,
    pub feasible: bool,
    pub tolerance: f64,
}

impl WelfareReport {
    pub const CSV_HEADER: [&'static str; 7] = ["bidder", "W", "OPT", "loss", "ratio", "roas_slack", "feasible"];

    pub fn new(opt: &EfficientOutcome, result: &AuctionResult, bids: &BidMatrix, tolerance: f64) -> Self {
        let roas = RoasCheck::from_result(result, bids, tolerance);
        let bidders = (0..opt.n_bidders())
            .map(|i| BidderWelfare {
                bidder: i,
                welfare: result.total_welfare(i),
                opt: opt.opt(i),
                loss: welfare_loss(opt, result, i),
                ratio: welfare_ratio(opt, result, i).ok(),
                roas_slack: roas.slacks[i],
                payment: result.total_payment(i),
            })
            .collect();
        Self {
            bidders,
            feasible: roas.feasible,
            tolerance,
        }
    }

    /// Runs the mechanism and builds the report in one go.
    pub fn evaluate(
        instance: &InstanceSpec,
        bids: &BidMatrix,
        mechanism: MechanismKind,
        tolerance: f64,
    ) -> Result<(AuctionResult, Self)> {
        let opt = efficient_outcome(instance);
        let result = run_instance(instance, bids, mechanism)?;
        let report = Self::new(&opt, &result, bids, tolerance);
        Ok((result, report))
    }

    /// One row per bidder; `feasible` is the bidder's own constraint.
    pub fn csv_row(&self, i: usize) -> Vec<String> {
        let b = &self.bidders[i];
        vec![
            b.bidder.to_string(),
            fmt_sig(b.welfare),
            fmt_sig(b.opt),
            fmt_sig(b.loss),
            fmt_opt(b.ratio),
            fmt_sig(b.roas_slack),
            (b.roas_slack >= -self.tolerance).to_string(),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&Self::CSV_HEADER);
        for i in 0..self.bidders.len() {
            t.push(self.csv_row(i));
        }
        t.render()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::AuctionSpec;
    use crate::instances::motivating_example;

    #[test]
    fn motivating_efficient_outcome() {
        let inst = motivating_example(1.0).unwrap();
        let opt = efficient_outcome(&inst);
        assert_eq!(opt.positions[0], vec![Some(1), None]);
        assert_eq!(opt.positions[1], vec![None, Some(1)]);
        assert_eq!(opt.opt_per_bidder, vec![1.0, 1.0]);
        assert_eq!(opt.opt_minus, vec![1.0, 1.0]);
    }

    #[test]
    fn single_bidder_opt() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![3.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(efficient_outcome(&inst).opt_total, 3.0);
    }

    #[test]
    fn loss_counts_only_shortfalls() {
        let inst = motivating_example(1.0).unwrap();
        let opt = efficient_outcome(&inst);
        // bidder 1 wins both: bidder 0 loses 1, bidder 1 gains 0.5 extra
        let bids = BidMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.25, 2.5]]).unwrap();
        let res = run_instance(&inst, &bids, MechanismKind::Vcg).unwrap();
        assert_eq!(welfare_loss(&opt, &res, 0), 1.0);
        assert_eq!(welfare_loss(&opt, &res, 1), 0.0);
        assert_eq!(loss_auctions(&opt, &res, 0), vec![0]);

        let truthful = run_instance(&inst, &BidMatrix::truthful(&inst), MechanismKind::Vcg).unwrap();
        assert_eq!(welfare_loss(&opt, &truthful, 0), 0.0);
        assert_eq!(welfare_loss(&opt, &truthful, 1), 0.0);
    }

    #[test]
    fn zero_bids_are_infeasible() {
        let inst = motivating_example(1.0).unwrap();
        let chk = roas_check(&inst, &BidMatrix::zeros(2, 2), MechanismKind::Vcg, DEFAULT_TOLERANCE).unwrap();
        assert!(!chk.feasible);
        assert_eq!(chk.slacks, vec![0.0, 0.0]);
    }

    #[test]
    fn guarantee_arithmetic() {
        assert_eq!(loss_to_guarantee(0.0, 2.0).unwrap(), 1.0);
        assert_eq!(loss_to_guarantee(2.0, 2.0).unwrap(), 0.0);
        assert!((loss_to_guarantee(0.5, 1.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(matches!(loss_to_guarantee(0.5, 0.0), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(empirical_cdf(&[1.0, 1.0], 0.8).unwrap(), 0.0);
        assert!((empirical_cdf(&[0.5, 0.9, 1.1], 0.95).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(empirical_cdf(&[], 0.5).is_err());
    }

    #[test]
    fn report_csv_marks_undefined_ratio_empty() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![2.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        let (_, rep) = WelfareReport::evaluate(
            &inst,
            &BidMatrix::truthful(&inst),
            MechanismKind::Gsp,
            DEFAULT_TOLERANCE,
        )
        .unwrap();
        assert_eq!(
            rep.to_csv(),
            "bidder,W,OPT,loss,ratio,roas_slack,feasible\n0,2,2,0,1,2,true\n1,0,0,0,,0,true\n"
        );
    }
}
