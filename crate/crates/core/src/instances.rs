//! Named instances, reserve generation from value advice and seeded random
//! instance families.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionSpec, InstanceSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn check_open_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must lie in (0, 1), got {x}")))
    }
}

fn single_slots(m: usize) -> Vec<AuctionSpec> {
    vec![AuctionSpec::single_slot(); m]
}

/// Two bidders, two single-slot second-price auctions, values `(v, 0)` and
/// `(v/2, v)`, no reserves.
pub fn motivating_example(v: f64) -> Result<InstanceSpec> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Domain(format!("value scale must be positive, got {v}")));
    }
    InstanceSpec::without_reserves(
        single_slots(2),
        Matrix::from_rows(vec![vec![v, 0.0], vec![v / 2.0, v]])?,
    )
}

/// Three single-slot auctions on which the VCG guarantee is attained.
#[derive(Debug, Clone, PartialEq)]
pub struct TightnessInstance {
    pub instance: InstanceSpec,
    /// Bidder whose guarantee is tight (always 0).
    pub bidder: usize,
    /// `v = (1 - beta) / (alpha - 1) * gamma`.
    pub v: f64,
}

/// Values `(y, v, 0)` and `(0, v - eps, gamma + eps / (1 - beta))` with
/// `v = (1 - beta) / (alpha_1 - 1) * gamma` and reserves `beta * v`.
pub fn tightness_instance(beta: f64, alpha_1: f64, gamma: f64, epsilon: f64, y: f64) -> Result<TightnessInstance> {
    check_open_unit("beta", beta)?;
    if !(alpha_1 > 1.0 && alpha_1.is_finite()) {
        return Err(Error::Domain(format!("alpha_1 must exceed 1, got {alpha_1}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    if !(y >= 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("y must be nonnegative, got {y}")));
    }
    let v = (1.0 - beta) / (alpha_1 - 1.0) * gamma;
    if !(epsilon > 0.0 && epsilon < v) {
        return Err(Error::Domain(format!(
            "epsilon must lie in (0, v = {v}), got {epsilon}"
        )));
    }
    let values = Matrix::from_rows(vec![
        vec![y, v, 0.0],
        vec![0.0, v - epsilon, gamma + epsilon / (1.0 - beta)],
    ])?;
    let instance = InstanceSpec::without_reserves(single_slots(3), values)?.with_scaled_reserves(beta);
    Ok(TightnessInstance { instance, bidder: 0, v })
}

/// Parameters of the `(K+1) x (2K+1)` instance on which no mechanism of the
/// second-price family protects bidder 0 better than the VCG bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpossibilityParams {
    pub k: usize,
    pub beta: f64,
    pub alpha_0: f64,
    pub gamma: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub y: f64,
}

impl ImpossibilityParams {
    /// Defaults: `rho = alpha_0 (1 + 1/K)`, `epsilon = gamma / (1000 K^3)`,
    /// `y = 2 alpha_0 v`.
    pub fn new(k: usize, beta: f64, alpha_0: f64, gamma: f64) -> Self {
        let kf = k.max(1) as f64;
        let v = (1.0 - beta) / (alpha_0 - 1.0) * gamma;
        Self {
            k,
            beta,
            alpha_0,
            gamma,
            rho: alpha_0 * (1.0 + 1.0 / kf),
            epsilon: gamma / (1000.0 * kf.powi(3)),
            y: 2.0 * alpha_0 * v,
        }
    }

    /// Value of bidder 0 in each of the first K auctions.
    pub fn v(&self) -> f64 {
        (1.0 - self.beta) / (self.alpha_0 - 1.0) * self.gamma
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Domain("K must be at least 1".into()));
        }
        check_open_unit("beta", self.beta)?;
        if !(self.alpha_0 > 1.0) {
            return Err(Error::Domain(format!("alpha_0 must exceed 1, got {}", self.alpha_0)));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.rho > self.alpha_0 && self.rho < self.alpha_0 / self.beta) {
            return Err(Error::Domain(format!(
                "rho = {} must lie in (alpha_0, alpha_0 / beta) = ({}, {})",
                self.rho,
                self.alpha_0,
                self.alpha_0 / self.beta
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let v = self.v();
        let top = (self.alpha_0 * v + self.k as f64 * self.epsilon) / self.rho;
        if !(top < v) {
            return Err(Error::Domain(format!(
                "competitor value {top} must stay below bidder 0's value {v}"
            )));
        }
        if !(self.y > self.alpha_0 * v) {
            return Err(Error::Domain(format!(
                "y = {} must exceed alpha_0 * v = {}",
                self.y,
                self.alpha_0 * v
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImpossibilityInstance {
    pub instance: InstanceSpec,
    pub bidder: usize,
    /// `(alpha_0, rho, ..., rho)`.
    pub multipliers: Vec<f64>,
    pub params: ImpossibilityParams,
}

/// Bidder 0 values the first K auctions at `v` and the last one at `y`.
/// Competitor `i` values auction `j <= K` at `(alpha_0 v + s eps) / rho` with
/// cyclic offset `s = ((i-1) + (j-1)) mod K + 1`, and auction `K + i` at
/// `gamma`. All auctions are single-slot, reserves are `beta * v`.
pub fn impossibility_instance(params: &ImpossibilityParams) -> Result<ImpossibilityInstance> {
    params.validate()?;
    let k = params.k;
    let v = params.v();
    let values = Matrix::from_fn(k + 1, 2 * k + 1, |i, j| match (i, j) {
        (0, j) if j < k => v,
        (0, j) if j == 2 * k => params.y,
        (0, _) => 0.0,
        (i, j) if j < k => {
            let sigma = ((i - 1) + j) % k + 1;
            (params.alpha_0 * v + sigma as f64 * params.epsilon) / params.rho
        }
        (i, j) if j == k + i - 1 => params.gamma,
        _ => 0.0,
    });
    let instance = InstanceSpec::without_reserves(single_slots(2 * k + 1), values)?.with_scaled_reserves(params.beta);
    let mut multipliers = vec![params.rho; k + 1];
    multipliers[0] = params.alpha_0;
    Ok(ImpossibilityInstance {
        instance,
        bidder: 0,
        multipliers,
        params: params.clone(),
    })
}

/// Values `(4, 3, 1)` and `(1, 4, 3)` in three single-slot auctions with
/// reserves `beta * v`.
pub fn fig_compare_instance(beta: f64) -> Result<InstanceSpec> {
    check_open_unit("beta", beta)?;
    Ok(InstanceSpec::without_reserves(
        single_slots(3),
        Matrix::from_rows(vec![vec![4.0, 3.0, 1.0], vec![1.0, 4.0, 3.0]])?,
    )?
    .with_scaled_reserves(beta))
}

/// Three bidders, three single-slot auctions, values `(2, 5, 0)`,
/// `(1, 1, 10)` and `(0, 4, 10)`.
pub fn covering_example() -> InstanceSpec {
    InstanceSpec::without_reserves(
        single_slots(3),
        Matrix::from_rows(vec![vec![2.0, 5.0, 0.0], vec![1.0, 1.0, 10.0], vec![0.0, 4.0, 10.0]]).expect("rectangular"),
    )
    .expect("valid instance")
}

fn random_ctrs(rng: &mut impl Rng, slots: usize) -> Vec<f64> {
    let mut mu = rng.random_range(0.5..=1.0);
    let mut ctrs = Vec::with_capacity(slots);
    for _ in 0..slots {
        ctrs.push(mu);
        mu *= rng.random_range(0.3..0.95);
    }
    ctrs
}

fn random_auctions(rng: &mut impl Rng, m: usize, slots_max: usize) -> Vec<AuctionSpec> {
    (0..m)
        .map(|_| {
            let s = rng.random_range(1..=slots_max.max(1));
            AuctionSpec::new(random_ctrs(rng, s)).expect("generated CTRs are valid")
        })
        .collect()
}

/// Each auction gets a random number of participants whose values form a
/// geometric ladder with adjacent ratios of at least `delta`.
pub fn random_separated_instance(n: usize, m: usize, delta: f64, slots_max: usize, seed: u64) -> Result<InstanceSpec> {
    if !(delta > 1.0 && delta.is_finite()) {
        return Err(Error::Domain(format!("separation factor must exceed 1, got {delta}")));
    }
    if n == 0 || m == 0 {
        return Err(Error::Domain("need at least one bidder and one auction".into()));
    }
    let mut rng = rng_from_seed(seed);
    let auctions = random_auctions(&mut rng, m, slots_max);
    let mut values = Matrix::zeros(n, m);
    let mut bidders: Vec<usize> = (0..n).collect();
    for j in 0..m {
        let participants = rng.random_range(1..=n);
        bidders.shuffle(&mut rng);
        let mut v = rng.random_range(1.0..4.0);
        for &i in &bidders[..participants] {
            values.set(i, j, v);
            v /= delta * (1.0 + 1e-9 + rng.random_range(0.0..0.5));
        }
    }
    InstanceSpec::without_reserves(auctions, values)
}

/// Random instance with values uniform on `[0.1, 2)`, each entry zero with
/// probability `zero_prob`.
pub fn random_instance(
    rng: &mut impl Rng,
    n: usize,
    m: usize,
    slots_max: usize,
    zero_prob: f64,
) -> Result<InstanceSpec> {
    let auctions = random_auctions(rng, m, slots_max);
    let values = Matrix::from_fn(n, m, |_, _| {
        if rng.random_bool(zero_prob) {
            0.0
        } else {
            rng.random_range(0.1..2.0)
        }
    });
    InstanceSpec::without_reserves(auctions, values)
}

/// How reserves are derived from values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AdviceMode {
    /// `r = s * v` with `s = beta + (1 - beta) u`, `u` uniform on `[0, 1)`.
    UniformScale,
    /// `r` = the given lower confidence bounds.
    ConfidenceInterval { lower: Matrix, upper: Matrix },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdviceSpec {
    pub beta: f64,
    pub seed: u64,
    pub mode: AdviceMode,
}

impl AdviceSpec {
    pub fn uniform(beta: f64, seed: u64) -> Self {
        Self {
            beta,
            seed,
            mode: AdviceMode::UniformScale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advice {
    pub reserves: Matrix,
    pub certified_beta: f64,
}

/// Reserves from value advice. In uniform-scale mode the underlying uniform
/// draws depend only on the seed, so advice at different accuracies shares
/// its randomness.
pub fn ml_advice(values: &Matrix, spec: &AdviceSpec) -> Result<Advice> {
    match &spec.mode {
        AdviceMode::UniformScale => {
            check_open_unit("beta", spec.beta)?;
            let mut rng = rng_from_seed(spec.seed);
            let reserves = Matrix::from_fn(values.rows(), values.cols(), |i, j| {
                let u: f64 = rng.random();
                let v = values.get(i, j);
                if v <= 0.0 {
                    return 0.0;
                }
                let r = (spec.beta + (1.0 - spec.beta) * u) * v;
                if r >= v {
                    v.next_down()
                } else {
                    r.max(spec.beta * v)
                }
            });
            Ok(Advice {
                reserves,
                certified_beta: spec.beta,
            })
        }
        AdviceMode::ConfidenceInterval { lower, upper } => {
            if lower.shape() != values.shape() || upper.shape() != values.shape() {
                return Err(Error::Shape("confidence bounds must match the value matrix".into()));
            }
            let mut certified = 1.0f64;
            let mut reserves = Matrix::zeros(values.rows(), values.cols());
            for i in 0..values.rows() {
                for j in 0..values.cols() {
                    let v = values.get(i, j);
                    if v <= 0.0 {
                        continue;
                    }
                    let (lo, hi) = (lower.get(i, j), upper.get(i, j));
                    if !(lo >= 0.0 && lo < hi && lo < v) {
                        return Err(Error::Domain(format!(
                            "interval [{lo}, {hi}] at ({i}, {j}) needs 0 <= lower < upper and lower < value {v}"
                        )));
                    }
                    reserves.set(i, j, lo);
                    certified = certified.min(lo / hi);
                }
            }
            Ok(Advice {
                reserves,
                certified_beta: certified,
            })
        }
    }
}

/// Shape of the synthetic many-bidder market used by the dynamics experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    pub n: usize,
    pub m: usize,
    pub slots_max: usize,
    /// Probability that a bidder takes part in a given auction.
    pub participation: f64,
    /// Spread of per-bidder log value scales.
    pub scale_sigma: f64,
    /// Spread of per-entry log value noise.
    pub value_sigma: f64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            n: 30,
            m: 50,
            slots_max: 3,
            participation: 0.3,
            scale_sigma: 0.5,
            value_sigma: 0.5,
        }
    }
}

/// Sparse market with log-normal values: bidder `i` takes part in each
/// auction with probability `participation` (at least two per auction) and
/// values it at `exp(a_i + value_sigma * z)`.
pub fn synthetic_market(params: &MarketParams, seed: u64) -> Result<InstanceSpec> {
    if params.n < 2 || params.m == 0 {
        return Err(Error::Domain(
            "market needs at least two bidders and one auction".into(),
        ));
    }
    if !(params.participation > 0.0 && params.participation <= 1.0) {
        return Err(Error::Domain(format!(
            "participation must lie in (0, 1], got {}",
            params.participation
        )));
    }
    let mut rng = rng_from_seed(seed);
    let scale = Normal::new(0.0, params.scale_sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let noise = LogNormal::new(0.0, params.value_sigma).map_err(|e| Error::Domain(e.to_string()))?;
    let auctions = random_auctions(&mut rng, params.m, params.slots_max);
    let scales: Vec<f64> = (0..params.n).map(|_| scale.sample(&mut rng).exp()).collect();
    let mut values = Matrix::zeros(params.n, params.m);
    let mut order: Vec<usize> = (0..params.n).collect();
    for j in 0..params.m {
        let mut active: Vec<usize> = (0..params.n)
            .filter(|_| rng.random_bool(params.participation))
            .collect();
        if active.len() < 2 {
            order.shuffle(&mut rng);
            active = order[..2].to_vec();
        }
        for i in active {
            values.set(i, j, scales[i] * noise.sample(&mut rng));
        }
    }
    InstanceSpec::without_reserves(auctions, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::delta_separation;

    #[test]
    fn motivating_table() {
        let inst = motivating_example(1.0).unwrap();
        assert_eq!(inst.values().to_rows(), vec![vec![1.0, 0.0], vec![0.5, 1.0]]);
        assert!(motivating_example(0.0).is_err());
    }

    #[test]
    fn tightness_values() {
        let t = tightness_instance(0.5, 2.0, 1.0, 1e-6, 1.0).unwrap();
        assert_eq!(t.v, 0.5);
        assert_eq!(t.instance.value(1, 1), 0.5 - 1e-6);
        assert!((t.instance.value(1, 2) - (1.0 + 2e-6)).abs() < 1e-15);
        assert_eq!(t.instance.reserve(0, 0), 0.5);
        assert!(tightness_instance(0.5, 2.0, 1.0, 0.0, 1.0).is_err());
        assert!(tightness_instance(1.2, 2.0, 1.0, 1e-6, 1.0).is_err());
    }

    #[test]
    fn impossibility_table_shape() {
        let p = ImpossibilityParams::new(3, 0.5, 2.0, 1.0);
        let inst = impossibility_instance(&p).unwrap();
        assert_eq!(inst.instance.values().shape(), (4, 7));
        assert_eq!(inst.multipliers, vec![2.0, p.rho, p.rho, p.rho]);
        // every competitor holds each offset exactly once across the first K auctions
        for i in 1..=3 {
            let mut row: Vec<f64> = (0..3).map(|j| inst.instance.value(i, j)).collect();
            row.sort_by(f64::total_cmp);
            row.dedup();
            assert_eq!(row.len(), 3);
            assert_eq!(inst.instance.value(i, 3 + i - 1), 1.0);
        }
        assert_eq!(inst.instance.value(0, 6), p.y);
        for j in 0..3 {
            for i in 1..=3 {
                assert!(inst.instance.value(i, j) < inst.instance.value(0, j));
            }
        }
    }

    #[test]
    fn impossibility_rejects_bad_rho() {
        let mut p = ImpossibilityParams::new(10, 0.5, 2.0, 1.0);
        p.rho = 4.5;
        assert!(impossibility_instance(&p).is_err());
        p.rho = 1.5;
        assert!(impossibility_instance(&p).is_err());
    }

    #[test]
    fn separated_generator_meets_target() {
        for seed in 0..50 {
            let inst = random_separated_instance(4, 3, 2.0, 2, seed).unwrap();
            assert!(delta_separation(inst.values()) >= 2.0);
        }
        assert_eq!(
            random_separated_instance(3, 2, 1.5, 2, 7).unwrap(),
            random_separated_instance(3, 2, 1.5, 2, 7).unwrap()
        );
    }

    #[test]
    fn uniform_advice_is_beta_accurate() {
        let values = Matrix::from_rows(vec![vec![1.0, 0.0, 3.0], vec![2.0, 5.0, 0.5]]).unwrap();
        let a = ml_advice(&values, &AdviceSpec::uniform(0.75, 3)).unwrap();
        let inst = InstanceSpec::new(vec![AuctionSpec::single_slot(); 3], values.clone(), a.reserves).unwrap();
        assert!(inst.has_beta_approximate_reserves(0.75));
    }

    #[test]
    fn confidence_interval_advice() {
        let values = Matrix::from_rows(vec![vec![1.0, 2.0]]).unwrap();
        let lower = Matrix::from_rows(vec![vec![0.6, 1.2]]).unwrap();
        let upper = Matrix::from_rows(vec![vec![0.8, 1.6]]).unwrap();
        let spec = AdviceSpec {
            beta: 0.0,
            seed: 0,
            mode: AdviceMode::ConfidenceInterval {
                lower: lower.clone(),
                upper,
            },
        };
        let a = ml_advice(&values, &spec).unwrap();
        assert_eq!(a.reserves, lower);
        assert!((a.certified_beta - 0.75).abs() < 1e-15);

        let bad = AdviceSpec {
            beta: 0.0,
            seed: 0,
            mode: AdviceMode::ConfidenceInterval {
                lower: values.clone(),
                upper: values.clone(),
            },
        };
        assert!(ml_advice(&values, &bad).is_err());
    }

    #[test]
    fn market_is_sparse_and_seeded() {
        let p = MarketParams::default();
        let a = synthetic_market(&p, 1).unwrap();
        assert_eq!(a, synthetic_market(&p, 1).unwrap());
        for j in 0..p.m {
            let active = (0..p.n).filter(|&i| a.value(i, j) > 0.0).count();
            assert!(active >= 2);
        }
    }
}
