//! Uniform bidding and log-space gradient updates of bid multipliers, run as
//! a warm-start phase without reserves followed by a phase with advice reserves.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::auction::{run_instance, BidMatrix, InstanceSpec, MechanismKind};
use crate::error::{Error, Result};
use crate::instances::{ml_advice, AdviceSpec};
use crate::matrix::Matrix;
use crate::report::{fmt_sig, CsvTable};
use crate::welfare::{efficient_outcome, empirical_cdf};

/// `b_ij = alpha_i * v_ij`. Multipliers below 1 are allowed with a warning.
pub fn uniform_bids(values: &Matrix, alphas: &[f64]) -> Result<BidMatrix> {
    if alphas.len() != values.rows() {
        return Err(Error::Shape(format!(
            "{} multipliers for {} bidders",
            alphas.len(),
            values.rows()
        )));
    }
    if let Some((i, a)) = alphas.iter().enumerate().find(|(_, a)| !(**a >= 0.0 && a.is_finite())) {
        return Err(Error::Domain(format!("multiplier of bidder {i} is {a}")));
    }
    if let Some((i, a)) = alphas.iter().enumerate().find(|(_, a)| **a < 1.0) {
        warn!("bidder {i} uses multiplier {a} < 1, a dominated strategy in truthful auctions");
    }
    BidMatrix::new(Matrix::from_fn(values.rows(), values.cols(), |i, j| {
        alphas[i] * values.get(i, j)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    pub rounds_per_phase: usize,
    /// `eta_t = eta0 / sqrt(t)` with `t` counted over both phases.
    pub eta0: f64,
    /// Starting multipliers; all ones when `None`.
    pub alpha_init: Option<Vec<f64>>,
    pub alpha_max: f64,
    /// Bound on `|log(w / p)|`; also the value used when `w` or `p` vanish.
    pub log_ratio_clamp: f64,
    pub mechanism: MechanismKind,
    /// Keep the per-round history in the trace.
    pub record_rounds: bool,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            rounds_per_phase: 500,
            eta0: 0.3,
            alpha_init: None,
            alpha_max: 100.0,
            log_ratio_clamp: 5.0,
            mechanism: MechanismKind::Vcg,
            record_rounds: true,
        }
    }
}

impl DynamicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds_per_phase == 0 {
            return Err(Error::Domain("rounds per phase must be positive".into()));
        }
        if !(self.eta0 > 0.0 && self.eta0 <= 1.0) {
            return Err(Error::Domain(format!("eta0 must lie in (0, 1], got {}", self.eta0)));
        }
        if !(self.alpha_max > 1.0) {
            return Err(Error::Domain(format!(
                "alpha_max must exceed 1, got {}",
                self.alpha_max
            )));
        }
        if !(self.log_ratio_clamp > 0.0) {
            return Err(Error::Domain("log-ratio clamp must be positive".into()));
        }
        Ok(())
    }

    pub fn eta(&self, t: usize) -> f64 {
        (self.eta0 / (t.max(1) as f64).sqrt()).min(1.0)
    }

    fn initial(&self, n: usize) -> Result<Vec<f64>> {
        match &self.alpha_init {
            None => Ok(vec![1.0; n]),
            Some(a) if a.len() == n => Ok(a.iter().map(|x| x.clamp(1.0, self.alpha_max)).collect()),
            Some(a) => Err(Error::Shape(format!("{} initial multipliers for {n} bidders", a.len()))),
        }
    }
}

/// Clamped `log(w / p)`: `-L` when nothing was won, `+L` when nothing was paid.
pub fn log_ratio(welfare: f64, payment: f64, clamp: f64) -> f64 {
    if welfare <= 0.0 {
        -clamp
    } else if payment <= 0.0 {
        clamp
    } else {
        (welfare / payment).ln().clamp(-clamp, clamp)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundOutcome {
    pub next: Vec<f64>,
    pub welfare: Vec<f64>,
    pub payment: Vec<f64>,
}

/// One round at the current multipliers followed by
/// `log a' = (1 - eta) log a + eta log(w / p)`, clamped to `[1, alpha_max]`.
pub fn gd_round(
    alphas: &[f64],
    instance: &InstanceSpec,
    mechanism: MechanismKind,
    eta: f64,
    config: &DynamicsConfig,
) -> Result<RoundOutcome> {
    let bids = uniform_bids(instance.values(), alphas)?;
    let res = run_instance(instance, &bids, mechanism)?;
    let n = instance.n_bidders();
    let welfare: Vec<f64> = (0..n).map(|i| res.total_welfare(i)).collect();
    let payment: Vec<f64> = (0..n).map(|i| res.total_payment(i)).collect();
    let next = (0..n)
        .map(|i| {
            let lr = log_ratio(welfare[i], payment[i], config.log_ratio_clamp);
            let la = (1.0 - eta) * alphas[i].ln() + eta * lr;
            la.exp().clamp(1.0, config.alpha_max)
        })
        .collect();
    Ok(RoundOutcome { next, welfare, payment })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub alphas: Vec<f64>,
    pub welfare: Vec<f64>,
    pub payment: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsTrace {
    pub beta: f64,
    pub rounds: Vec<RoundRecord>,
    pub final_multipliers: Vec<f64>,
    /// Welfare at the final multipliers in the second-phase environment.
    pub final_welfare: Vec<f64>,
    pub final_payment: Vec<f64>,
    /// `W_i / OPT_i`; `None` when `OPT_i = 0`.
    pub ratios: Vec<Option<f64>>,
}

impl DynamicsTrace {
    pub const CSV_HEADER: [&'static str; 5] = ["round", "bidder", "alpha", "welfare", "payment"];

    pub fn defined_ratios(&self) -> Vec<f64> {
        self.ratios.iter().flatten().copied().collect()
    }

    /// `theta(z)` over bidders with positive efficient welfare.
    pub fn theta(&self, z: f64) -> Result<f64> {
        empirical_cdf(&self.defined_ratios(), z)
    }

    pub fn final_slacks(&self) -> Vec<f64> {
        self.final_welfare
            .iter()
            .zip(&self.final_payment)
            .map(|(w, p)| w - p)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut t = CsvTable::new(&Self::CSV_HEADER);
        for r in &self.rounds {
            for i in 0..r.alphas.len() {
                t.push(vec![
                    r.round.to_string(),
                    i.to_string(),
                    fmt_sig(r.alphas[i]),
                    fmt_sig(r.welfare[i]),
                    fmt_sig(r.payment[i]),
                ]);
            }
        }
        t.render()
    }
}

struct PhaseState {
    alphas: Vec<f64>,
    rounds: Vec<RoundRecord>,
}

fn run_phase(state: &mut PhaseState, env: &InstanceSpec, config: &DynamicsConfig, first_round: usize) -> Result<()> {
    for t in first_round..first_round + config.rounds_per_phase {
        let out = gd_round(&state.alphas, env, config.mechanism, config.eta(t), config)?;
        if config.record_rounds {
            state.rounds.push(RoundRecord {
                round: t,
                alphas: state.alphas.clone(),
                welfare: out.welfare,
                payment: out.payment,
            });
        }
        state.alphas = out.next;
    }
    Ok(())
}

/// Reserve environment of the second phase; `beta = 0` means no reserves.
pub fn advice_environment(instance: &InstanceSpec, beta: f64, advice_seed: u64) -> Result<InstanceSpec> {
    if beta == 0.0 {
        return Ok(instance.without_reserve_prices());
    }
    let advice = ml_advice(instance.values(), &AdviceSpec::uniform(beta, advice_seed))?;
    instance.with_reserves(advice.reserves)
}

fn finish(
    instance: &InstanceSpec,
    env: &InstanceSpec,
    beta: f64,
    state: PhaseState,
    config: &DynamicsConfig,
) -> Result<DynamicsTrace> {
    let opt = efficient_outcome(instance);
    let bids = uniform_bids(env.values(), &state.alphas)?;
    let res = run_instance(env, &bids, config.mechanism)?;
    let n = instance.n_bidders();
    let final_welfare: Vec<f64> = (0..n).map(|i| res.total_welfare(i)).collect();
    let final_payment = (0..n).map(|i| res.total_payment(i)).collect();
    let ratios = (0..n)
        .map(|i| (opt.opt(i) > 0.0).then(|| final_welfare[i] / opt.opt(i)))
        .collect();
    Ok(DynamicsTrace {
        beta,
        rounds: state.rounds,
        final_multipliers: state.alphas,
        final_welfare,
        final_payment,
        ratios,
    })
}

/// `T` reserve-free warm-start rounds, then `T` rounds with advice reserves
/// at accuracy `beta` (none for `beta = 0`). Any reserves on `instance`
/// itself are ignored.
pub fn run_two_phase(
    instance: &InstanceSpec,
    beta: f64,
    config: &DynamicsConfig,
    advice_seed: u64,
) -> Result<DynamicsTrace> {
    Ok(run_betas(instance, &[beta], config, advice_seed)?.remove(0))
}

/// [`run_two_phase`] for several accuracies sharing one warm start and one
/// advice seed.
pub fn run_betas(
    instance: &InstanceSpec,
    betas: &[f64],
    config: &DynamicsConfig,
    advice_seed: u64,
) -> Result<Vec<DynamicsTrace>> {
    config.validate()?;
    let warm_env = instance.without_reserve_prices();
    let mut warm = PhaseState {
        alphas: config.initial(instance.n_bidders())?,
        rounds: Vec::new(),
    };
    run_phase(&mut warm, &warm_env, config, 1)?;
    betas
        .iter()
        .map(|&beta| {
            let env = advice_environment(instance, beta, advice_seed)?;
            let mut state = PhaseState {
                alphas: warm.alphas.clone(),
                rounds: warm.rounds.clone(),
            };
            run_phase(&mut state, &env, config, config.rounds_per_phase + 1)?;
            finish(instance, &env, beta, state, config)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::AuctionSpec;

    fn pair() -> InstanceSpec {
        InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot(); 2],
            Matrix::from_rows(vec![vec![1.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn uniform_bid_examples() {
        let v = Matrix::from_rows(vec![vec![1.0, 0.5]]).unwrap();
        assert_eq!(uniform_bids(&v, &[1.0]).unwrap().row(0), &[1.0, 0.5]);
        assert_eq!(uniform_bids(&v, &[2.0]).unwrap().row(0), &[2.0, 1.0]);
        assert!(uniform_bids(&v, &[-1.0]).is_err());
        assert!(uniform_bids(&v, &[0.5]).is_ok());
        assert!(uniform_bids(&v, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn degenerate_log_ratios() {
        assert_eq!(log_ratio(0.0, 0.0, 5.0), -5.0);
        assert_eq!(log_ratio(1.0, 0.0, 5.0), 5.0);
        assert_eq!(log_ratio(2.0, 2.0, 5.0), 0.0);
        assert_eq!(log_ratio(1e9, 1.0, 5.0), 5.0);
    }

    #[test]
    fn balanced_round_contracts_toward_one() {
        let inst = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![2.0], vec![1.0]]).unwrap(),
        )
        .unwrap();
        let cfg = DynamicsConfig::default();
        // rival bids 2 so bidder 0, bidding 3, pays exactly its value
        let out = gd_round(&[1.5, 2.0], &inst, MechanismKind::Vcg, 0.5, &cfg).unwrap();
        assert_eq!(out.welfare[0], 2.0);
        assert_eq!(out.payment[0], 2.0);
        assert!((out.next[0] - (0.5 * 1.5f64.ln()).exp()).abs() < 1e-12);
    }

    #[test]
    fn unpaid_winner_increases_and_loser_backs_off() {
        let cfg = DynamicsConfig::default();
        let inst = pair();
        let out = gd_round(&[1.0, 1.0], &inst, MechanismKind::Vcg, 0.3, &cfg).unwrap();
        // each wins one auction and pays 0.5 for value 1: log 2 > 0
        assert!(out.next.iter().all(|&a| a > 1.0));

        let solo = InstanceSpec::without_reserves(
            vec![AuctionSpec::single_slot()],
            Matrix::from_rows(vec![vec![1.0], vec![3.0]]).unwrap(),
        )
        .unwrap();
        let out = gd_round(&[2.0, 1.0], &solo, MechanismKind::Vcg, 0.3, &cfg).unwrap();
        assert_eq!(out.welfare[0], 0.0);
        assert!(out.next[0] < 2.0);
        assert_eq!(out.payment[1], 2.0);
    }

    #[test]
    fn trace_respects_bounds_and_is_deterministic() {
        let cfg = DynamicsConfig {
            rounds_per_phase: 30,
            mechanism: MechanismKind::Gfp,
            ..DynamicsConfig::default()
        };
        let a = run_two_phase(&pair(), 0.5, &cfg, 9).unwrap();
        let b = run_two_phase(&pair(), 0.5, &cfg, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rounds.len(), 60);
        for r in &a.rounds {
            assert!(r.alphas.iter().all(|&x| (1.0..=100.0).contains(&x)));
        }
        assert!(a.to_csv().starts_with("round,bidder,alpha,welfare,payment\n1,0,1,"));
    }

    #[test]
    fn control_matches_extended_warm_start() {
        let cfg = DynamicsConfig {
            rounds_per_phase: 20,
            ..DynamicsConfig::default()
        };
        let control = run_two_phase(&pair(), 0.0, &cfg, 3).unwrap();
        let long = DynamicsConfig {
            rounds_per_phase: 40,
            ..cfg.clone()
        };
        // one 40-round warm start sees the same environment and step sizes
        let mut state = PhaseState {
            alphas: vec![1.0; 2],
            rounds: Vec::new(),
        };
        run_phase(&mut state, &pair(), &long, 1).unwrap();
        assert_eq!(control.final_multipliers, state.alphas);
    }
}
