//! Allocation and payment engines for VCG, GSP and GFP position auctions
//! with eagerly enforced personalized reserves.
//!
//! Every auction `j` sells `S_j` ordered slots with click-through rates
//! `ctrs[0] >= ctrs[1] >= ... > 0`; the CTR of any slot past `S_j` is zero.
//! Bidders whose bid is below their personal reserve are removed before
//! ranking, the remaining positive bids are ranked in decreasing order (ties
//! go to the lower bidder index) and slots are filled top-down.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A single position auction: slot count and per-slot click-through rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAuction")]
pub struct AuctionSpec {
    slots: usize,
    ctrs: Vec<f64>,
}

#[derive(Deserialize)]
struct RawAuction {
    slots: usize,
    ctrs: Vec<f64>,
}

impl TryFrom<RawAuction> for AuctionSpec {
    type Error = Error;

    fn try_from(raw: RawAuction) -> Result<Self> {
        if raw.slots != raw.ctrs.len() {
            return Err(Error::InvalidInstance(format!(
                "auction declares {} slots but lists {} CTRs",
                raw.slots,
                raw.ctrs.len()
            )));
        }
        AuctionSpec::new(raw.ctrs)
    }
}

impl AuctionSpec {
    pub fn new(ctrs: Vec<f64>) -> Result<Self> {
        if ctrs.is_empty() {
            return Err(Error::InvalidInstance("auction needs at least one slot".into()));
        }
        let mut prev = 1.0;
        for (l, &mu) in ctrs.iter().enumerate() {
            if !(mu.is_finite() && mu > 0.0 && mu <= prev) {
                return Err(Error::InvalidInstance(format!(
                    "CTR of slot {} is {mu}; CTRs must lie in (0, 1] and be non-increasing",
                    l + 1
                )));
            }
            prev = mu;
        }
        Ok(Self {
            slots: ctrs.len(),
            ctrs,
        })
    }

    /// Single slot with CTR 1, i.e. a second-price auction under VCG.
    pub fn single_slot() -> Self {
        Self {
            slots: 1,
            ctrs: vec![1.0],
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn ctrs(&self) -> &[f64] {
        &self.ctrs
    }

    /// CTR of the 1-based slot `position`; zero past the last slot.
    #[inline]
    pub fn ctr(&self, position: usize) -> f64 {
        if position == 0 || position > self.slots {
            0.0
        } else {
            self.ctrs[position - 1]
        }
    }
}

/// N bidders participating in M parallel position auctions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance")]
pub struct InstanceSpec {
    auctions: Vec<AuctionSpec>,
    values: Matrix,
    reserves: Matrix,
}

#[derive(Deserialize)]
struct RawInstance {
    auctions: Vec<AuctionSpec>,
    values: Matrix,
    #[serde(default)]
    reserves: Option<Matrix>,
}

impl TryFrom<RawInstance> for InstanceSpec {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        match raw.reserves {
            Some(r) => InstanceSpec::new(raw.auctions, raw.values, r),
            None => InstanceSpec::without_reserves(raw.auctions, raw.values),
        }
    }
}

fn check_nonnegative(m: &Matrix, what: &str) -> Result<()> {
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let x = m.get(i, j);
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidInstance(format!(
                    "{what}[{i}][{j}] = {x} is not a finite nonnegative number"
                )));
            }
        }
    }
    Ok(())
}

impl InstanceSpec {
    pub fn new(auctions: Vec<AuctionSpec>, values: Matrix, reserves: Matrix) -> Result<Self> {
        if auctions.is_empty() {
            return Err(Error::InvalidInstance("instance needs at least one auction".into()));
        }
        if values.rows() == 0 {
            return Err(Error::InvalidInstance("instance needs at least one bidder".into()));
        }
        if values.cols() != auctions.len() {
            return Err(Error::Shape(format!(
                "values have {} columns but there are {} auctions",
                values.cols(),
                auctions.len()
            )));
        }
        if reserves.shape() != values.shape() {
            return Err(Error::Shape(format!(
                "reserves are {:?} but values are {:?}",
                reserves.shape(),
                values.shape()
            )));
        }
        check_nonnegative(&values, "values")?;
        check_nonnegative(&reserves, "reserves")?;
        Ok(Self {
            auctions,
            values,
            reserves,
        })
    }

    pub fn without_reserves(auctions: Vec<AuctionSpec>, values: Matrix) -> Result<Self> {
        let reserves = Matrix::zeros(values.rows(), values.cols());
        Self::new(auctions, values, reserves)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }

    pub fn n_bidders(&self) -> usize {
        self.values.rows()
    }

    pub fn n_auctions(&self) -> usize {
        self.auctions.len()
    }

    pub fn auctions(&self) -> &[AuctionSpec] {
        &self.auctions
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn reserves(&self) -> &Matrix {
        &self.reserves
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values.get(i, j)
    }

    pub fn reserve(&self, i: usize, j: usize) -> f64 {
        self.reserves.get(i, j)
    }

    /// Same auctions and values, different reserves.
    pub fn with_reserves(&self, reserves: Matrix) -> Result<Self> {
        Self::new(self.auctions.clone(), self.values.clone(), reserves)
    }

    pub fn without_reserve_prices(&self) -> Self {
        Self {
            auctions: self.auctions.clone(),
            values: self.values.clone(),
            reserves: Matrix::zeros(self.values.rows(), self.values.cols()),
        }
    }

    /// Reserves `r = beta * v` entrywise.
    pub fn with_scaled_reserves(&self, beta: f64) -> Self {
        let reserves = Matrix::from_fn(self.n_bidders(), self.n_auctions(), |i, j| beta * self.values.get(i, j));
        Self {
            auctions: self.auctions.clone(),
            values: self.values.clone(),
            reserves,
        }
    }

    /// Keeps only the value rows of `members`; everyone else gets value zero.
    pub fn restricted_to(&self, members: &[usize]) -> Self {
        let values = Matrix::from_fn(self.n_bidders(), self.n_auctions(), |i, j| {
            if members.contains(&i) {
                self.values.get(i, j)
            } else {
                0.0
            }
        });
        Self {
            auctions: self.auctions.clone(),
            values,
            reserves: self.reserves.clone(),
        }
    }

    /// Largest `beta` with `r >= beta * v` on every positive value, capped at
    /// 1; zero when there are no positive values.
    pub fn reserve_accuracy(&self) -> f64 {
        let mut acc: Option<f64> = None;
        for i in 0..self.n_bidders() {
            for j in 0..self.n_auctions() {
                let v = self.value(i, j);
                if v > 0.0 {
                    let q = (self.reserve(i, j) / v).min(1.0);
                    acc = Some(acc.map_or(q, |a| a.min(q)));
                }
            }
        }
        acc.unwrap_or(0.0)
    }

    /// True when `beta * v <= r < v` on every positive value and `r = 0` where `v = 0`.
    pub fn has_beta_approximate_reserves(&self, beta: f64) -> bool {
        (0..self.n_bidders()).all(|i| {
            (0..self.n_auctions()).all(|j| {
                let v = self.value(i, j);
                let r = self.reserve(i, j);
                if v > 0.0 {
                    beta * v <= r && r < v
                } else {
                    r == 0.0
                }
            })
        })
    }
}

/// Nonnegative bids `b[i][j]` of every bidder in every auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix", into = "Matrix")]
pub struct BidMatrix(Matrix);

impl BidMatrix {
    pub fn new(bids: Matrix) -> Result<Self> {
        for i in 0..bids.rows() {
            for j in 0..bids.cols() {
                let b = bids.get(i, j);
                if !(b.is_finite() && b >= 0.0) {
                    return Err(Error::InvalidBids(format!(
                        "bid[{i}][{j}] = {b} is not a finite nonnegative number"
                    )));
                }
            }
        }
        Ok(Self(bids))
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn zeros(n: usize, m: usize) -> Self {
        Self(Matrix::zeros(n, m))
    }

    /// Truthful bids `b = v`.
    pub fn truthful(instance: &InstanceSpec) -> Self {
        Self(instance.values().clone())
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    /// Overwrites a single bid; panics on negative or non-finite input.
    pub fn set(&mut self, i: usize, j: usize, bid: f64) {
        assert!(bid.is_finite() && bid >= 0.0, "bid must be finite and nonnegative");
        self.0.set(i, j, bid);
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn set_row(&mut self, i: usize, bids: &[f64]) {
        for (j, &b) in bids.iter().enumerate() {
            self.set(i, j, b);
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn is_all_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0.0)
    }
}

impl TryFrom<Matrix> for BidMatrix {
    type Error = Error;

    fn try_from(m: Matrix) -> Result<Self> {
        BidMatrix::new(m)
    }
}

impl From<BidMatrix> for Matrix {
    fn from(b: BidMatrix) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Vcg,
    Gsp,
    Gfp,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 3] = [MechanismKind::Vcg, MechanismKind::Gsp, MechanismKind::Gfp];
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MechanismKind::Vcg => "vcg",
            MechanismKind::Gsp => "gsp",
            MechanismKind::Gfp => "gfp",
        })
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vcg" | "spa" => Ok(MechanismKind::Vcg),
            "gsp" => Ok(MechanismKind::Gsp),
            "gfp" => Ok(MechanismKind::Gfp),
            other => Err(Error::Domain(format!("unknown mechanism `{other}`"))),
        }
    }
}

/// Slot-to-bidder map of one auction; index 0 is the top slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotAssignment(pub Vec<Option<usize>>);

impl SlotAssignment {
    pub fn slots(&self) -> &[Option<usize>] {
        &self.0
    }

    /// 1-based slot held by `bidder`, if any.
    pub fn position_of(&self, bidder: usize) -> Option<usize> {
        self.0.iter().position(|&b| b == Some(bidder)).map(|p| p + 1)
    }

    pub fn winners(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().enumerate().filter_map(|(l, b)| b.map(|b| (l + 1, b)))
    }
}

/// `b' = b * 1{b >= r}` entrywise.
pub fn clear_bids(instance: &InstanceSpec, bids: &BidMatrix) -> Result<BidMatrix> {
    check_bid_shape(instance, bids)?;
    let cleared = Matrix::from_fn(instance.n_bidders(), instance.n_auctions(), |i, j| {
        let b = bids.get(i, j);
        if b >= instance.reserve(i, j) {
            b
        } else {
            0.0
        }
    });
    Ok(BidMatrix(cleared))
}

fn check_bid_shape(instance: &InstanceSpec, bids: &BidMatrix) -> Result<()> {
    let expected = (instance.n_bidders(), instance.n_auctions());
    if bids.shape() != expected {
        return Err(Error::Shape(format!(
            "bids are {:?} but the instance is {:?}",
            bids.shape(),
            expected
        )));
    }
    Ok(())
}

/// Indices of bidders with positive bid, in decreasing bid order (ties by index).
pub(crate) fn rank_positive(bids: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..bids.len()).filter(|&k| bids[k] > 0.0).collect();
    order.sort_by(|&a, &b| bids[b].total_cmp(&bids[a]).then(a.cmp(&b)));
    order
}

/// Ranks the positive cleared bids and fills slots top-down.
pub fn allocate(auction: &AuctionSpec, cleared_bids: &[f64]) -> SlotAssignment {
    let ranked = rank_positive(cleared_bids);
    let mut slots = vec![None; auction.slots()];
    for (slot, bidder) in slots.iter_mut().zip(ranked) {
        *slot = Some(bidder);
    }
    SlotAssignment(slots)
}

/// Per-bidder payments of one auction given the assignment produced by
/// [`allocate`] on the cleared bids.
///
/// With `b~(l)` the l-th highest cleared bid (zero past the cleared count)
/// and `l_i` the slot of bidder `i`:
///
/// * VCG: `sum_{l = l_i}^{S} (mu(l) - mu(l+1)) * max(b~(l+1), r_i)`
/// * GSP: `mu(l_i) * max(b~(l_i+1), r_i)`
/// * GFP: `mu(l_i) * max(b~(l_i), r_i)`
pub fn pay(
    mechanism: MechanismKind,
    auction: &AuctionSpec,
    cleared_bids: &[f64],
    reserves: &[f64],
    assignment: &SlotAssignment,
) -> Vec<f64> {
    let ranked: Vec<f64> = rank_positive(cleared_bids)
        .into_iter()
        .map(|k| cleared_bids[k])
        .collect();
    let kth = |l: usize| -> f64 { ranked.get(l.wrapping_sub(1)).copied().unwrap_or(0.0) };

    let mut payments = vec![0.0; cleared_bids.len()];
    for (pos, bidder) in assignment.winners() {
        let r = reserves[bidder];
        payments[bidder] = match mechanism {
            MechanismKind::Vcg => (pos..=auction.slots())
                .map(|l| (auction.ctr(l) - auction.ctr(l + 1)) * kth(l + 1).max(r))
                .sum(),
            MechanismKind::Gsp => auction.ctr(pos) * kth(pos + 1).max(r),
            MechanismKind::Gfp => auction.ctr(pos) * kth(pos).max(r),
        };
    }
    payments
}

/// Outcome of all M auctions for one bid profile.
#[derive(Debug, Clone, PartialEq)]
pub struct AuctionResult {
    pub assignments: Vec<SlotAssignment>,
    /// `positions[i][j]`: 1-based slot of bidder `i` in auction `j`.
    pub positions: Vec<Vec<Option<usize>>>,
    pub payments: Matrix,
    pub welfare: Matrix,
}

impl AuctionResult {
    pub fn total_payment(&self, bidder: usize) -> f64 {
        self.payments.row_sum(bidder)
    }

    pub fn total_welfare(&self, bidder: usize) -> f64 {
        self.welfare.row_sum(bidder)
    }

    pub fn position(&self, bidder: usize, auction: usize) -> Option<usize> {
        self.positions[bidder][auction]
    }

    /// Compact winner pattern, e.g. `0|1;_|1`: auctions separated by `|`,
    /// slots by `;`, `_` for an empty slot.
    pub fn winner_pattern(&self) -> String {
        self.assignments
            .iter()
            .map(|a| {
                a.slots()
                    .iter()
                    .map(|s| s.map_or_else(|| "_".to_string(), |b| b.to_string()))
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Clears, allocates and prices every auction of the instance.
pub fn run_instance(instance: &InstanceSpec, bids: &BidMatrix, mechanism: MechanismKind) -> Result<AuctionResult> {
    let cleared = clear_bids(instance, bids)?;
    let n = instance.n_bidders();
    let m = instance.n_auctions();
    let mut assignments = Vec::with_capacity(m);
    let mut positions = vec![vec![None; m]; n];
    let mut payments = Matrix::zeros(n, m);
    let mut welfare = Matrix::zeros(n, m);

    for (j, auction) in instance.auctions().iter().enumerate() {
        let col = cleared.matrix().column(j);
        let reserves = instance.reserves().column(j);
        let assignment = allocate(auction, &col);
        let pays = pay(mechanism, auction, &col, &reserves, &assignment);
        for (pos, bidder) in assignment.winners() {
            positions[bidder][j] = Some(pos);
            payments.set(bidder, j, pays[bidder]);
            welfare.set(bidder, j, auction.ctr(pos) * instance.value(bidder, j));
        }
        assignments.push(assignment);
    }

    Ok(AuctionResult {
        assignments,
        positions,
        payments,
        welfare,
    })
}
