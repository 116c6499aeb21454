//! Replicated experiments on synthetic data: generate a dataset, fit the
//! learners, evaluate each learned policy on the true model, summarize.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Distribution, OrderStatistics};

use crate::error::{invalid, PricingError, Result};
use crate::identification::DemandBounds;
use crate::learners::{learn, LearnerConfig, LearnerOutput, Method, VanillaPenalty};
use crate::mdp::{evaluate_policy_exact, reachable_states, solve_optimal, PolicyTable, PricingModel, StateDistribution};
use crate::simulation::{evaluate_policy_mc, generate_dataset, scenario_behavior, OfflineDataset, SeededRng};

/// How learned policies are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluationMode {
    /// Exact expected revenue by backward induction.
    #[default]
    Exact,
    /// Average over simulated rollouts.
    Mc,
}

/// Full description of an experiment. Every field has a default, so a JSON
/// config only needs the fields it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// True demand model; defaults to the three-price benchmark.
    pub model: PricingModel,
    pub scenario: usize,
    /// Trajectories per dataset.
    pub n: usize,
    pub replications: usize,
    pub c: f64,
    pub grid: usize,
    pub vanilla_penalty: VanillaPenalty,
    pub seed: u64,
    pub evaluation: EvaluationMode,
    pub mc_rollouts: usize,
    /// Fixed upper demand bound. When absent, each dataset uses
    /// `lambda_max_factor * max observed demand`.
    pub lambda_max: Option<f64>,
    pub lambda_max_factor: f64,
    pub methods: Vec<Method>,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: PricingModel::benchmark(),
            scenario: 1,
            n: 20,
            replications: 100,
            c: 1.0,
            grid: 1001,
            vanilla_penalty: VanillaPenalty::Band,
            seed: 1,
            evaluation: EvaluationMode::Exact,
            mc_rollouts: 5000,
            lambda_max: None,
            lambda_max_factor: 1.5,
            methods: vec![Method::VanillaPess, Method::RefinedPess, Method::Opportunistic],
            out: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=5).contains(&self.scenario) {
            return Err(invalid(format!("scenario must be in 1..=5, got {}", self.scenario)));
        }
        if self.n == 0 || self.replications == 0 {
            return Err(invalid("n and replications must be positive"));
        }
        if self.evaluation == EvaluationMode::Mc && self.mc_rollouts < 2 {
            return Err(invalid("mc_rollouts must be at least 2"));
        }
        if !(self.lambda_max_factor.is_finite() && self.lambda_max_factor > 0.0) {
            return Err(invalid("lambda_max_factor must be positive"));
        }
        if let Some(m) = self.lambda_max {
            DemandBounds::new(self.model.lambda_min(), m)?;
        }
        if self.methods.is_empty() {
            return Err(invalid("at least one method is required"));
        }
        self.learner_config().validate()?;
        if self.scenario <= 3 {
            scenario_behavior(&self.model, self.scenario)?;
        }
        Ok(())
    }

    pub fn learner_config(&self) -> LearnerConfig {
        LearnerConfig { c: self.c, grid: self.grid, vanilla_penalty: self.vanilla_penalty }
    }

    /// Demand bounds the learners see for `dataset`.
    pub fn bounds_for(&self, dataset: &OfflineDataset) -> Result<DemandBounds> {
        let lmin = self.model.lambda_min();
        let lmax = match self.lambda_max {
            Some(m) => m,
            None => (self.lambda_max_factor * dataset.max_demand() as f64).max(lmin),
        };
        DemandBounds::new(lmin, lmax)
    }
}

/// One learned policy on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: usize,
    pub method: Method,
    pub replication: usize,
    /// `None` when the method could not act on this dataset.
    pub value: Option<f64>,
    pub regret: Option<f64>,
    /// Monte Carlo standard error; `None` under exact evaluation.
    pub std_error: Option<f64>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    scenario: usize,
    method: Method,
    replication: usize,
    status: &'a str,
    value: Option<f64>,
    regret: Option<f64>,
    std_error: Option<f64>,
}

/// Per-(scenario, method) summary of the values across replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: usize,
    pub method: Method,
    pub runs: usize,
    pub failed: usize,
    pub mean: f64,
    pub sd: f64,
    pub std_error: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean_regret: f64,
    pub optimal_value: f64,
}

/// Rows of an experiment plus their summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub optimal_value: f64,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentResult {
    /// `scenario,method,replication,status,value,regret,std_error`.
    pub fn write_rows_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(CsvRow {
                scenario: r.scenario,
                method: r.method,
                replication: r.replication,
                status: if r.value.is_some() { "ok" } else { "unlearnable" },
                value: r.value,
                regret: r.regret,
                std_error: r.std_error,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.summary {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `scenario,method,replication,runtime_ms`; wall-clock, so not
    /// reproducible.
    pub fn write_timings_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "method", "replication", "runtime_ms"])?;
        for r in &self.rows {
            w.serialize((r.scenario, r.method, r.replication, r.runtime_ms))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_for(&self, scenario: usize, method: Method) -> Option<&SummaryRow> {
        self.summary.iter().find(|s| s.scenario == scenario && s.method == method)
    }

    /// Writes `results.csv`, `summary.csv`, `summary.json` and
    /// `timings.csv` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_rows_csv(fs::File::create(dir.join("results.csv"))?)?;
        self.write_summary_csv(fs::File::create(dir.join("summary.csv"))?)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        self.write_timings_csv(fs::File::create(dir.join("timings.csv"))?)?;
        Ok(())
    }
}

fn full_stock(model: &PricingModel) -> StateDistribution {
    StateDistribution::point_mass(model.max_inventory(), model.max_inventory())
}

/// Value of `policy` under the configured evaluation mode, with its Monte
/// Carlo standard error.
pub fn evaluate(config: &ExperimentConfig, policy: &PolicyTable, replication: usize) -> Result<(f64, Option<f64>)> {
    match config.evaluation {
        EvaluationMode::Exact => {
            Ok((evaluate_policy_exact(&config.model, policy, &full_stock(&config.model))?.expected, None))
        }
        EvaluationMode::Mc => {
            let est = evaluate_policy_mc(
                &config.model,
                policy,
                config.mc_rollouts,
                &SeededRng::new(config.seed),
                replication as u64,
            )?;
            Ok((est.mean, Some(est.std_error)))
        }
    }
}

/// Dataset of one replication.
pub fn replication_dataset(config: &ExperimentConfig, behavior: &PolicyTable, replication: usize) -> Result<OfflineDataset> {
    generate_dataset(&config.model, behavior, config.n, &SeededRng::new(config.seed), replication as u64)
}

fn run_replication(
    config: &ExperimentConfig,
    behavior: &PolicyTable,
    optimal_value: f64,
    replication: usize,
) -> Result<Vec<ResultRow>> {
    let data = replication_dataset(config, behavior, replication)?;
    let bounds = config.bounds_for(&data)?;
    let lc = config.learner_config();
    config
        .methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let (value, std_error) = match learn(method, &data, bounds, &lc) {
                Ok(out) => {
                    let (v, se) = evaluate(config, &out.policy, replication)?;
                    (Some(v), se)
                }
                Err(PricingError::Unlearnable { .. }) => (None, None),
                Err(e) => return Err(e),
            };
            Ok(ResultRow {
                scenario: config.scenario,
                method,
                replication,
                value,
                regret: value.map(|v| optimal_value - v),
                std_error,
                runtime_ms: start.elapsed().as_secs_f64() * 1e3,
            })
        })
        .collect()
}

fn summarize(scenario: usize, method: Method, rows: &[ResultRow], optimal_value: f64) -> SummaryRow {
    let values: Vec<f64> = rows.iter().filter_map(|r| r.value).collect();
    let runs = values.len();
    let regrets: Vec<f64> = rows.iter().filter_map(|r| r.regret).collect();
    let mut data = Data::new(values);
    let nan_if_empty = |o: Option<f64>| o.unwrap_or(f64::NAN);
    let mean = nan_if_empty(data.mean());
    let sd = if runs > 1 { nan_if_empty(data.std_dev()) } else { 0.0 };
    SummaryRow {
        scenario,
        method,
        runs,
        failed: rows.len() - runs,
        mean,
        sd,
        std_error: sd / (runs as f64).sqrt(),
        min: data.quantile(0.0),
        q1: data.lower_quartile(),
        median: data.quantile(0.5),
        q3: data.upper_quartile(),
        max: data.quantile(1.0),
        mean_regret: nan_if_empty(Data::new(regrets).mean()),
        optimal_value,
    }
}

/// Runs all replications of one scenario. Replications run in parallel and
/// are merged in replication order, so output does not depend on
/// scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let behavior = scenario_behavior(&config.model, config.scenario)?;
    let optimal = solve_optimal(&config.model);
    let optimal_value = evaluate_policy_exact(&config.model, &optimal.policy, &full_stock(&config.model))?.expected;
    let per_rep: Vec<Vec<ResultRow>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| run_replication(config, &behavior, optimal_value, rep))
        .collect::<Result<_>>()?;
    let rows: Vec<ResultRow> = per_rep.into_iter().flatten().collect();
    let summary = config
        .methods
        .iter()
        .map(|&m| {
            let mine: Vec<ResultRow> = rows.iter().filter(|r| r.method == m).cloned().collect();
            summarize(config.scenario, m, &mine, optimal_value)
        })
        .collect();
    Ok(ExperimentResult { optimal_value, rows, summary })
}

/// Runs `run_experiment` for each scenario in turn and concatenates.
pub fn run_suite(config: &ExperimentConfig, scenarios: &[usize]) -> Result<ExperimentResult> {
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let mut optimal_value = f64::NAN;
    for &s in scenarios {
        let r = run_experiment(&ExperimentConfig { scenario: s, ..config.clone() })?;
        optimal_value = r.optimal_value;
        rows.extend(r.rows);
        summary.extend(r.summary);
    }
    Ok(ExperimentResult { optimal_value, rows, summary })
}

/// Optimal price per `(x, t)`: `table[x - 1][t]` for `x = 1..=L`.
pub fn optimal_price_table(config: &ExperimentConfig) -> Vec<Vec<f64>> {
    let model = &config.model;
    let sol = solve_optimal(model);
    (1..=model.max_inventory())
        .map(|x| {
            (0..model.horizon())
                .map(|t| model.price(sol.policy.action(t, x).expect("optimal policy is deterministic")))
                .collect()
        })
        .collect()
}

/// Writes the optimal price table with one row per inventory level and one
/// column per period.
pub fn write_price_table_csv<W: Write>(table: &[Vec<f64>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let horizon = table.first().map_or(0, Vec::len);
    let mut header = vec!["x".to_string()];
    header.extend((1..=horizon).map(|t| format!("t{t}")));
    w.write_record(&header)?;
    for (i, row) in table.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(|p| p.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Mean regret of one method at one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n: usize,
    pub mean_regret: f64,
    pub std_error: f64,
    /// Share of replications whose policy equals the optimal one on every
    /// state the optimal policy can reach from full stock.
    pub optimal_match: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub method: Method,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `ln(mean regret)` on `ln(n)`; `NaN` when some
    /// mean regret is not positive.
    pub slope: f64,
}

impl SweepResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].mean_regret < w[0].mean_regret)
    }
}

fn matches_on_reachable(policy: &PolicyTable, optimal: &PolicyTable, reach: &[Vec<bool>]) -> bool {
    reach
        .iter()
        .enumerate()
        .all(|(t, row)| row.iter().enumerate().all(|(x, &r)| !r || policy.action(t, x) == optimal.action(t, x)))
}

fn log_log_slope(points: &[SweepPoint]) -> f64 {
    if points.len() < 2 || points.iter().any(|p| !(p.mean_regret > 0.0)) {
        return f64::NAN;
    }
    let xs: Vec<f64> = points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mean_regret.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / xs.len() as f64, ys.iter().sum::<f64>() / ys.len() as f64);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean regret of `method` for each sample size in `ns`, with regret always
/// evaluated exactly.
pub fn run_regret_sweep(config: &ExperimentConfig, ns: &[usize], method: Method) -> Result<SweepResult> {
    config.validate()?;
    if ns.is_empty() || ns.contains(&0) {
        return Err(invalid("sample sizes must be positive"));
    }
    let model = &config.model;
    let behavior = scenario_behavior(model, config.scenario)?;
    let optimal = solve_optimal(model);
    let start = full_stock(model);
    let optimal_value = evaluate_policy_exact(model, &optimal.policy, &start)?.expected;
    let reach = reachable_states(model, &optimal.policy, &start)?;
    let lc = config.learner_config();
    let points = ns
        .iter()
        .map(|&n| {
            let cfg = ExperimentConfig { n, ..config.clone() };
            let per_rep: Vec<(f64, bool)> = (0..config.replications)
                .into_par_iter()
                .map(|rep| {
                    let data = replication_dataset(&cfg, &behavior, rep)?;
                    let out: LearnerOutput = learn(method, &data, cfg.bounds_for(&data)?, &lc)?;
                    let v = evaluate_policy_exact(model, &out.policy, &start)?.expected;
                    Ok((optimal_value - v, matches_on_reachable(&out.policy, &optimal.policy, &reach)))
                })
                .collect::<Result<_>>()?;
            let regrets: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
            let data = Data::new(regrets);
            let mean = data.mean().unwrap_or(f64::NAN);
            let sd = if per_rep.len() > 1 { data.std_dev().unwrap_or(f64::NAN) } else { 0.0 };
            Ok(SweepPoint {
                n,
                mean_regret: mean,
                std_error: sd / (per_rep.len() as f64).sqrt(),
                optimal_match: per_rep.iter().filter(|r| r.1).count() as f64 / per_rep.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let slope = log_log_slope(&points);
    Ok(SweepResult { method, points, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = ExperimentConfig::from_json(r#"{"scenario": 3, "n": 40}"#).unwrap();
        assert_eq!((cfg.scenario, cfg.n, cfg.replications), (3, 40, 100));
        assert_eq!(cfg.model, PricingModel::benchmark());
        assert!(ExperimentConfig::from_json(r#"{"scenario": 9}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"n": 0}"#).is_err());
    }

    #[test]
    fn data_driven_upper_bound() {
        let cfg = ExperimentConfig::default();
        let behavior = scenario_behavior(&cfg.model, 1).unwrap();
        let data = replication_dataset(&cfg, &behavior, 0).unwrap();
        let b = cfg.bounds_for(&data).unwrap();
        assert_eq!(b.lambda_max, 1.5 * data.max_demand() as f64);
        let fixed = ExperimentConfig { lambda_max: Some(12.0), ..cfg };
        assert_eq!(fixed.bounds_for(&data).unwrap().lambda_max, 12.0);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<SweepPoint> = [10usize, 100, 1000]
            .iter()
            .map(|&n| SweepPoint { n, mean_regret: 3.0 * (n as f64).powf(-0.5), std_error: 0.0, optimal_match: 0.0 })
            .collect();
        assert!((log_log_slope(&pts) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn price_table_csv_layout() {
        let mut buf = Vec::new();
        write_price_table_csv(&[vec![10.0, 9.0], vec![8.0, 8.0]], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,t1,t2\n1,10,9\n2,8,8\n");
    }
}
