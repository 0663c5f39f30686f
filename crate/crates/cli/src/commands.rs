use std::path::Path;

use anyhow::{bail, Context, Result};
use autobid::bounds::{vcg_bound, BoundReport};
use autobid::dynamics::{run_betas, uniform_bids, DynamicsConfig};
use autobid::instances::{
    covering_example, fig_compare_instance, impossibility_instance, ml_advice, motivating_example, random_instance,
    random_separated_instance, rng_from_seed, synthetic_market, tightness_instance, AdviceSpec, ImpossibilityParams,
    MarketParams,
};
use autobid::report::{fmt_opt, fmt_sig, CsvTable};
use autobid::search::{map_uniform_region, worst_case_general, worst_case_uniform, BidSampler, GridSpec, WorstCase};
use autobid::welfare::{empirical_cdf, welfare_loss, RoasCheck, WelfareReport};
use autobid::{efficient_outcome, run_instance, BidMatrix, InstanceSpec};
use log::warn;
use rayon::prelude::*;

use crate::{
    BoundsArgs, CdfArgs, Cli, Command, DynamicsArgs, GenArgs, GridArgs, ImpossibilityArgs, InstanceKind, ProfileArgs,
    RegionArgs, RunArgs, SearchMode, WorstCaseArgs,
};

pub fn dispatch(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Gen(a) => gen(a, cli.seed),
        Command::Run(a) => run(a, cli.seed, cli.tolerance),
        Command::Bounds(a) => bounds(a),
        Command::Region(a) => region(a, cli.tolerance),
        Command::WorstCase(a) => worst_case(a, cli.seed, cli.tolerance),
        Command::Dynamics(a) => dynamics(a, cli.seed),
        Command::Impossibility(a) => impossibility(a, cli.tolerance),
        Command::Cdf(a) => cdf(a, cli.tolerance),
        Command::Replay(_) => unreachable!("replay is resolved before dispatch"),
    }
}

fn read_instance(path: &Path) -> Result<InstanceSpec> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    InstanceSpec::from_json(&text).with_context(|| format!("parsing instance {}", path.display()))
}

fn with_advice(instance: InstanceSpec, beta: f64, seed: u64) -> Result<InstanceSpec> {
    let advice = ml_advice(instance.values(), &AdviceSpec::uniform(beta, seed))?;
    Ok(instance.with_reserves(advice.reserves)?)
}

/// A single value applies to every bidder.
fn per_bidder(values: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; n]),
        len if len == n => Ok(values.to_vec()),
        len => bail!("{len} {what} given for {n} bidders"),
    }
}

fn profile(args: &ProfileArgs, instance: &InstanceSpec) -> Result<BidMatrix> {
    if let Some(alphas) = &args.alphas {
        let alphas = per_bidder(alphas, instance.n_bidders(), "multipliers")?;
        return Ok(uniform_bids(instance.values(), &alphas)?);
    }
    let path = args.bids.as_ref().context("either --alphas or --bids is required")?;
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bids: BidMatrix = serde_json::from_str(&text).with_context(|| format!("parsing bids {}", path.display()))?;
    if bids.shape() != (instance.n_bidders(), instance.n_auctions()) {
        bail!(
            "bid matrix is {:?} but the instance has {} bidders and {} auctions",
            bids.shape(),
            instance.n_bidders(),
            instance.n_auctions()
        );
    }
    Ok(bids)
}

fn gen(a: &GenArgs, seed: u64) -> Result<String> {
    let instance = match a.kind {
        InstanceKind::Motivating => motivating_example(a.v)?,
        InstanceKind::Tightness => tightness_instance(a.beta, a.alpha1, a.gamma, a.eps, a.y)?.instance,
        InstanceKind::Impossibility => {
            impossibility_instance(&ImpossibilityParams::new(a.k, a.beta, a.alpha0, a.gamma))?.instance
        }
        InstanceKind::FigCompare => fig_compare_instance(a.beta)?,
        InstanceKind::CoveringExample => covering_example(),
        InstanceKind::Random => random_instance(&mut rng_from_seed(seed), a.n, a.m, a.slots, a.zero_prob)?,
        InstanceKind::Separated => random_separated_instance(a.n, a.m, a.delta, a.slots, seed)?,
        InstanceKind::Market => synthetic_market(
            &MarketParams {
                n: a.n,
                m: a.m,
                slots_max: a.slots,
                ..MarketParams::default()
            },
            seed,
        )?,
    };
    let instance = match a.advice_beta {
        Some(beta) => with_advice(instance, beta, seed)?,
        None => instance,
    };
    Ok(instance.to_json() + "\n")
}

fn bound_columns(instance: &InstanceSpec, alphas: &[f64], beta: f64) -> Vec<[String; 3]> {
    let opt = efficient_outcome(instance);
    (0..instance.n_bidders())
        .map(|i| match BoundReport::compute(instance, &opt, i, alphas[i], beta) {
            // A non-coverable bidder has no improved bound; leave it blank
            // rather than print the placeholder 1.
            Ok(r) => [
                fmt_sig(r.base_bound),
                fmt_opt(r.improved_bound.filter(|_| r.coverable == Some(true))),
                fmt_opt(r.gsp_gfp_bound),
            ],
            Err(_) => Default::default(),
        })
        .collect()
}

fn run(a: &RunArgs, seed: u64, tolerance: f64) -> Result<String> {
    let mut instance = read_instance(&a.instance)?;
    if let Some(beta) = a.beta_advice {
        instance = with_advice(instance, beta, seed)?;
    }
    let bids = profile(&a.profile, &instance)?;
    let (_, report) = WelfareReport::evaluate(&instance, &bids, a.mechanism, tolerance)?;

    let mut header: Vec<&str> = WelfareReport::CSV_HEADER.to_vec();
    header.push("payment");
    let bounds = if a.bounds {
        let Some(alphas) = &a.profile.alphas else {
            bail!("--bounds needs uniform multipliers (--alphas)");
        };
        let alphas = per_bidder(alphas, instance.n_bidders(), "multipliers")?;
        let beta = a.beta.or(a.beta_advice).unwrap_or_else(|| instance.reserve_accuracy());
        header.extend(["base_bound", "improved_bound", "gsp_gfp_bound"]);
        Some(bound_columns(&instance, &alphas, beta))
    } else {
        None
    };
    let mut table = CsvTable::new(&header);
    for i in 0..instance.n_bidders() {
        let mut row = report.csv_row(i);
        row.push(fmt_sig(report.bidders[i].payment));
        if let Some(b) = &bounds {
            row.extend(b[i].iter().cloned());
        }
        table.push(row);
    }
    if !report.feasible {
        warn!("profile is not ROAS-feasible");
    }
    Ok(table.render())
}

fn bounds(a: &BoundsArgs) -> Result<String> {
    let instance = read_instance(&a.instance)?;
    let n = instance.n_bidders();
    let alphas = per_bidder(&a.alphas, n, "multipliers")?;
    let beta = a.beta.unwrap_or_else(|| instance.reserve_accuracy());
    let opt = efficient_outcome(&instance);
    let mut reports = Vec::new();
    for (i, &alpha) in alphas.iter().enumerate() {
        if opt.opt(i) <= 0.0 {
            warn!("skipping bidder {i}: zero efficient welfare");
            continue;
        }
        reports.push(BoundReport::compute(&instance, &opt, i, alpha, beta)?);
    }
    Ok(BoundReport::to_csv(&reports))
}

fn grid(g: &GridArgs) -> Result<GridSpec> {
    Ok(GridSpec::new(g.lo, g.hi, g.points)?)
}

fn region(a: &RegionArgs, tolerance: f64) -> Result<String> {
    let instance = read_instance(&a.instance)?;
    let map = map_uniform_region(&instance, a.mechanism, &grid(&a.grid)?, a.bidder, tolerance)?;
    Ok(map.to_csv())
}

fn worst_case(a: &WorstCaseArgs, seed: u64, tolerance: f64) -> Result<String> {
    let instance = read_instance(&a.instance)?;
    if a.bidder >= instance.n_bidders() {
        bail!("bidder {} out of range for {} bidders", a.bidder, instance.n_bidders());
    }
    let beta = instance.reserve_accuracy();
    let wc: WorstCase = match a.mode {
        SearchMode::Uniform => {
            worst_case_uniform(&instance, a.mechanism, a.bidder, a.alpha, &grid(&a.grid)?, tolerance)?
        }
        SearchMode::General => {
            let bid_i: Vec<f64> = instance.values().row(a.bidder).iter().map(|v| a.alpha * v).collect();
            let sampler = BidSampler::new(beta, a.samples, seed);
            worst_case_general(&instance, a.mechanism, a.bidder, &bid_i, &sampler, tolerance)?
        }
    };
    let opt = efficient_outcome(&instance);
    let base = vcg_bound(&opt, a.bidder, a.alpha, beta).ok();
    let pattern = match &wc.witness {
        Some(bids) => run_instance(&instance, bids, a.mechanism)?.winner_pattern(),
        None => String::new(),
    };
    let mut t = CsvTable::new(&[
        "bidder",
        "alpha",
        "beta",
        "mechanism",
        "mode",
        "evaluated",
        "feasible",
        "min_ratio",
        "base_bound",
        "witness_pattern",
    ]);
    t.push(vec![
        a.bidder.to_string(),
        fmt_sig(a.alpha),
        fmt_sig(beta),
        a.mechanism.to_string(),
        format!("{:?}", a.mode).to_lowercase(),
        wc.evaluated.to_string(),
        wc.feasible.to_string(),
        fmt_opt(wc.min_ratio),
        fmt_opt(base),
        pattern,
    ]);
    Ok(t.render())
}

fn dynamics(a: &DynamicsArgs, seed: u64) -> Result<String> {
    if a.seeds == 0 {
        bail!("--seeds must be at least 1");
    }
    let config = DynamicsConfig {
        rounds_per_phase: a.rounds,
        mechanism: a.mechanism,
        record_rounds: false,
        ..DynamicsConfig::default()
    };
    let params = MarketParams {
        n: a.n,
        m: a.m,
        slots_max: a.slots,
        ..MarketParams::default()
    };
    // thetas[s][b][z]
    let thetas: Vec<Vec<Vec<f64>>> = (seed..seed + a.seeds)
        .into_par_iter()
        .map(|s| -> Result<Vec<Vec<f64>>> {
            let market = synthetic_market(&params, s)?;
            run_betas(&market, &a.betas, &config, s)?
                .iter()
                .map(|trace| a.z.iter().map(|&z| Ok(trace.theta(z)?)).collect())
                .collect()
        })
        .collect::<Result<_>>()?;

    if let Some(path) = &a.per_seed {
        let mut t = CsvTable::new(&["seed", "beta", "z", "theta"]);
        for (s, per_beta) in thetas.iter().enumerate() {
            for (b, per_z) in per_beta.iter().enumerate() {
                for (k, theta) in per_z.iter().enumerate() {
                    t.push(vec![
                        (seed + s as u64).to_string(),
                        fmt_sig(a.betas[b]),
                        fmt_sig(a.z[k]),
                        fmt_sig(*theta),
                    ]);
                }
            }
        }
        std::fs::write(path, t.render()).with_context(|| format!("writing {}", path.display()))?;
    }

    let mut t = CsvTable::new(&["beta", "z", "mean_theta", "min_theta", "max_theta", "seeds"]);
    for (b, &beta) in a.betas.iter().enumerate() {
        for (k, &z) in a.z.iter().enumerate() {
            let xs: Vec<f64> = thetas.iter().map(|per_beta| per_beta[b][k]).collect();
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            t.push(vec![
                fmt_sig(beta),
                fmt_sig(z),
                fmt_sig(mean),
                fmt_sig(min),
                fmt_sig(max),
                xs.len().to_string(),
            ]);
        }
    }
    Ok(t.render())
}

fn impossibility(a: &ImpossibilityArgs, tolerance: f64) -> Result<String> {
    let mut t = CsvTable::new(&[
        "k",
        "beta",
        "alpha_0",
        "rho",
        "loss_ratio",
        "expected_ratio",
        "max_violation",
    ]);
    for &k in &a.k {
        let mut params = ImpossibilityParams::new(k, a.beta, a.alpha0, a.gamma);
        if let Some(rho) = a.rho {
            params.rho = rho;
        }
        let imp = impossibility_instance(&params)?;
        let bids = uniform_bids(imp.instance.values(), &imp.multipliers)?;
        let res = run_instance(&imp.instance, &bids, autobid::MechanismKind::Vcg)?;
        let opt = efficient_outcome(&imp.instance);
        let loss_ratio = welfare_loss(&opt, &res, imp.bidder) / opt.opt_minus(imp.bidder);
        let roas = RoasCheck::from_result(&res, &bids, tolerance);
        let violation = (0..imp.instance.n_bidders())
            .filter(|&i| i != imp.bidder)
            .map(|i| -roas.slacks[i])
            .fold(0.0, f64::max);
        t.push(vec![
            k.to_string(),
            fmt_sig(a.beta),
            fmt_sig(a.alpha0),
            fmt_sig(params.rho),
            fmt_sig(loss_ratio),
            fmt_sig((1.0 - a.beta) / (a.alpha0 - 1.0)),
            fmt_sig(violation),
        ]);
    }
    Ok(t.render())
}

fn cdf(a: &CdfArgs, tolerance: f64) -> Result<String> {
    let instance = read_instance(&a.instance)?;
    let bids = profile(&a.profile, &instance)?;
    let (_, report) = WelfareReport::evaluate(&instance, &bids, a.mechanism, tolerance)?;
    let ratios: Vec<f64> = report.bidders.iter().filter_map(|b| b.ratio).collect();
    if ratios.is_empty() {
        bail!("no bidder has positive efficient welfare");
    }
    let zs =
        a.z.clone()
            .unwrap_or_else(|| (0..=20).map(|k| k as f64 / 20.0).collect());
    let mut t = CsvTable::new(&["z", "theta", "bidders"]);
    for z in zs {
        t.push(vec![
            fmt_sig(z),
            fmt_sig(empirical_cdf(&ratios, z)?),
            ratios.len().to_string(),
        ]);
    }
    Ok(t.render())
}

#[cfg(test)]
mod tests {
    use super::*;
    use autobid::Matrix;

    #[test]
    fn single_multiplier_is_broadcast() {
        assert_eq!(per_bidder(&[2.0], 3, "x").unwrap(), vec![2.0; 3]);
        assert_eq!(per_bidder(&[1.0, 2.0], 2, "x").unwrap(), vec![1.0, 2.0]);
        assert!(per_bidder(&[1.0, 2.0], 3, "x").is_err());
    }

    #[test]
    fn impossibility_row_hits_expected_ratio() {
        let a = ImpossibilityArgs {
            k: vec![10],
            beta: 0.5,
            alpha0: 2.0,
            gamma: 1.0,
            rho: None,
        };
        let out = impossibility(&a, 1e-9).unwrap();
        let row: Vec<&str> = out.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(row[4], "0.5");
        assert_eq!(row[5], "0.5");
    }

    #[test]
    fn matrix_bids_must_match_instance() {
        let dir = std::env::temp_dir().join(format!("autobid-cmd-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bids.json");
        std::fs::write(&path, serde_json::to_string(&Matrix::zeros(1, 1)).unwrap()).unwrap();
        let inst = motivating_example(1.0).unwrap();
        let args = ProfileArgs {
            alphas: None,
            bids: Some(path),
        };
        assert!(profile(&args, &inst).is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
