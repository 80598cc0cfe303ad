//! Scenario returns, broker cost grids, investor profiles and instance generation.

use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp::Relation;

/// Header name of the optional scenario-probability column in returns files.
pub const PROBABILITY_COLUMN: &str = "probability";

/// Gross per-period return rates of `n` securities under `T` scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPanel {
    names: Vec<String>,
    /// `returns[j][t]`
    returns: Vec<Vec<f64>>,
    probabilities: Vec<f64>,
}

impl ScenarioPanel {
    pub fn new(
        names: Vec<String>,
        returns: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    ) -> Result<Self> {
        if names.len() != returns.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} security names for {} return series",
                names.len(),
                returns.len()
            )));
        }
        let t = probabilities.len();
        if t == 0 {
            return Err(Error::InvalidInput(
                "a panel needs at least one scenario".into(),
            ));
        }
        for (name, series) in names.iter().zip(&returns) {
            if series.len() != t {
                return Err(Error::DimensionMismatch(format!(
                    "security {name} has {} scenarios, expected {t}",
                    series.len()
                )));
            }
            if let Some(v) = series.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "security {name} has a non-finite return {v}"
                )));
            }
        }
        if probabilities.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "scenario probabilities must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!(
                "scenario probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self {
            names,
            returns,
            probabilities,
        })
    }

    /// Panel with equiprobable scenarios.
    pub fn uniform(names: Vec<String>, returns: Vec<Vec<f64>>) -> Result<Self> {
        let t = returns.first().map_or(0, Vec::len);
        Self::new(names, returns, vec![1.0 / t as f64; t])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn num_securities(&self) -> usize {
        self.returns.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.probabilities.len()
    }

    pub fn returns(&self, security: usize) -> &[f64] {
        &self.returns[security]
    }

    pub fn r(&self, security: usize, scenario: usize) -> f64 {
        self.returns[security][scenario]
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn mean_return(&self, security: usize) -> f64 {
        self.returns[security]
            .iter()
            .zip(&self.probabilities)
            .map(|(r, p)| r * p)
            .sum()
    }

    pub fn r_max(&self) -> f64 {
        self.returns
            .iter()
            .flatten()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn r_min(&self) -> f64 {
        self.returns
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    fn is_uniform(&self) -> bool {
        let u = 1.0 / self.num_scenarios() as f64;
        self.probabilities.iter().all(|&p| p == u)
    }
}

/// Reads a returns CSV: a header of security names (plus an optional
/// `probability` column) and one row of rates per scenario.
pub fn read_returns_csv<R: Read>(reader: R) -> Result<ScenarioPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "missing header row".into(),
        });
    }
    let prob_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case(PROBABILITY_COLUMN));
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(c, _)| Some(c) != prob_col)
        .map(|(_, h)| h.to_string())
        .collect();
    let mut returns = vec![Vec::new(); names.len()];
    let mut probs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let line = i + 2;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row: line,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut k = 0;
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: c + 1,
                message: format!("cell {cell:?} in column {:?} is not a number", &headers[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: c + 1,
                    message: format!("cell {cell:?} is not finite"),
                });
            }
            if Some(c) == prob_col {
                probs.push(v);
            } else {
                returns[k].push(v);
                k += 1;
            }
        }
    }
    let t = returns.first().map_or(probs.len(), Vec::len);
    if t == 0 {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            message: "file has no scenario rows".into(),
        });
    }
    if prob_col.is_some() {
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "probability column sums to {total}, not 1"
            )));
        }
        let probs = probs.into_iter().map(|p| p / total).collect();
        ScenarioPanel::new(names, returns, probs)
    } else {
        ScenarioPanel::uniform(names, returns)
    }
}

pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<ScenarioPanel> {
    read_returns_csv(File::open(path)?)
}

/// Writes `panel` in the format read by [`read_returns_csv`]; values use the
/// shortest representation that parses back to the same `f64`.
pub fn write_returns_csv<W: Write>(writer: W, panel: &ScenarioPanel) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_probs = !panel.is_uniform();
    let mut header: Vec<&str> = panel.names.iter().map(String::as_str).collect();
    if with_probs {
        header.push(PROBABILITY_COLUMN);
    }
    w.write_record(&header)?;
    for t in 0..panel.num_scenarios() {
        let mut row: Vec<String> = panel.returns.iter().map(|s| s[t].to_string()).collect();
        if with_probs {
            row.push(panel.probabilities[t].to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_returns_csv(path: impl AsRef<Path>, panel: &ScenarioPanel) -> Result<()> {
    write_returns_csv(File::create(path)?, panel)
}

/// A linear restriction on the vector of chargeable costs (one coefficient per
/// chargeable security, in the order of [`CostStructure::chargeable`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub coefficients: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

impl CostRow {
    pub fn is_satisfied(&self, p: &[f64], tol: f64) -> bool {
        let lhs: f64 = self.coefficients.iter().zip(p).map(|(a, v)| a * v).sum();
        match self.relation {
            Relation::Le => lhs <= self.rhs + tol,
            Relation::Ge => lhs >= self.rhs - tol,
            Relation::Eq => (lhs - self.rhs).abs() <= tol,
        }
    }
}

/// The broker's admissible costs: which securities are charged, the discrete
/// grid of each, and optional coupling rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CostStructure {
    chargeable: Vec<usize>,
    grids: Vec<Vec<f64>>,
    polyhedron: Vec<CostRow>,
}

impl CostStructure {
    /// Grids are sorted ascending and deduplicated.
    pub fn new(
        chargeable: Vec<usize>,
        grids: Vec<Vec<f64>>,
        polyhedron: Vec<CostRow>,
    ) -> Result<Self> {
        if chargeable.len() != grids.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} chargeable securities but {} cost grids",
                chargeable.len(),
                grids.len()
            )));
        }
        let mut seen = chargeable.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput(
                "chargeable securities must be distinct".into(),
            ));
        }
        let mut clean = Vec::with_capacity(grids.len());
        for (&j, grid) in chargeable.iter().zip(grids) {
            if grid.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "security {j} has an empty cost grid"
                )));
            }
            if grid.iter().any(|c| !c.is_finite() || *c < 0.0) {
                return Err(Error::InvalidInput(format!(
                    "security {j} has a negative or non-finite cost"
                )));
            }
            let mut grid = grid;
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            clean.push(grid);
        }
        for row in &polyhedron {
            if row.coefficients.len() != chargeable.len() {
                return Err(Error::DimensionMismatch(format!(
                    "cost row has {} coefficients for {} chargeable securities",
                    row.coefficients.len(),
                    chargeable.len()
                )));
            }
            if !row.rhs.is_finite() || row.coefficients.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("cost row has non-finite data".into()));
            }
        }
        Ok(Self {
            chargeable,
            grids: clean,
            polyhedron,
        })
    }

    /// No chargeable securities.
    pub fn empty() -> Self {
        Self {
            chargeable: Vec::new(),
            grids: Vec::new(),
            polyhedron: Vec::new(),
        }
    }

    pub fn chargeable(&self) -> &[usize] {
        &self.chargeable
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    pub fn polyhedron(&self) -> &[CostRow] {
        &self.polyhedron
    }

    pub fn has_polyhedron(&self) -> bool {
        !self.polyhedron.is_empty()
    }

    pub fn with_polyhedron(mut self, rows: Vec<CostRow>) -> Result<Self> {
        let grids = std::mem::take(&mut self.grids);
        Self::new(self.chargeable, grids, rows)
    }

    pub fn num_chargeable(&self) -> usize {
        self.chargeable.len()
    }

    /// Total number of grid entries over all chargeable securities.
    pub fn total_grid_size(&self) -> usize {
        self.grids.iter().map(Vec::len).sum()
    }

    /// Number of cost vectors in the grid product (as `f64`, it can be huge).
    pub fn product_size(&self) -> f64 {
        self.grids.iter().map(|g| g.len() as f64).product()
    }

    pub fn max_costs(&self) -> Vec<f64> {
        self.grids
            .iter()
            .map(|g| *g.last().expect("grids are nonempty"))
            .collect()
    }

    pub fn c_max(&self) -> f64 {
        self.grids.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn c_min(&self) -> f64 {
        let c = self
            .grids
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        if c.is_finite() {
            c
        } else {
            0.0
        }
    }

    /// Whether `p` satisfies every coupling row within `tol`.
    pub fn admits(&self, p: &[f64], tol: f64) -> bool {
        self.polyhedron.iter().all(|row| row.is_satisfied(p, tol))
    }

    /// Costs for a choice of one grid index per chargeable security.
    pub fn costs_at(&self, picks: &[usize]) -> Vec<f64> {
        self.grids.iter().zip(picks).map(|(g, &k)| g[k]).collect()
    }

    /// Every cost vector of the grid product satisfying the coupling rows, in
    /// lexicographic order of the cost vector. Fails when the product exceeds `cap`.
    pub fn enumerate(&self, cap: usize) -> Result<Vec<Vec<f64>>> {
        let count = self.product_size();
        if count > cap as f64 {
            return Err(Error::EnumerationCap { count, cap });
        }
        let mut out = Vec::new();
        let mut picks = vec![0usize; self.grids.len()];
        loop {
            let p = self.costs_at(&picks);
            if self.admits(&p, 1e-12) {
                out.push(p);
            }
            let mut pos = picks.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                picks[pos] += 1;
                if picks[pos] < self.grids[pos].len() {
                    break;
                }
                picks[pos] = 0;
            }
        }
    }
}

/// The investor's CVaR level and minimum expected return.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorProfile {
    pub alpha: f64,
    pub mu0: f64,
}

impl InvestorProfile {
    pub fn new(alpha: f64, mu0: f64) -> Result<Self> {
        let profile = Self { alpha, mu0 };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        if !self.mu0.is_finite() {
            return Err(Error::InvalidInput(
                "minimum expected return must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// The nine instance classes: chargeable-set size by maximum grid size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InstanceClass {
    A,
    B,
    C,
    D,
    E,
    F,
    G,
    H,
    I,
}

impl InstanceClass {
    pub const ALL: [InstanceClass; 9] = [
        InstanceClass::A,
        InstanceClass::B,
        InstanceClass::C,
        InstanceClass::D,
        InstanceClass::E,
        InstanceClass::F,
        InstanceClass::G,
        InstanceClass::H,
        InstanceClass::I,
    ];

    fn index(self) -> usize {
        self as usize
    }

    /// Number of chargeable securities.
    pub fn chargeable_count(self) -> usize {
        [30, 20, 10][self.index() / 3]
    }

    /// Upper end of the grid-size range `{1, ..., K}`.
    pub fn max_grid_size(self) -> usize {
        [5, 15, 50][self.index() % 3]
    }
}

impl fmt::Display for InstanceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self)
    }
}

impl FromStr for InstanceClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "unknown instance class {s:?}; expected one of A..I"
                ))
            })
    }
}

/// Cost regimes used when generating grids: (probability, low, high).
pub const COST_REGIMES: [(f64, f64, f64); 3] = [
    (0.15, 0.001, 0.003),
    (0.70, 0.002, 0.008),
    (0.15, 0.006, 0.010),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub panel: ScenarioPanel,
    pub costs: CostStructure,
    pub class: Option<InstanceClass>,
    pub seed: Option<u64>,
}

impl ProblemInstance {
    pub fn new(panel: ScenarioPanel, costs: CostStructure) -> Result<Self> {
        let n = panel.num_securities();
        if let Some(&j) = costs.chargeable().iter().find(|&&j| j >= n) {
            return Err(Error::InvalidInput(format!(
                "chargeable security {j} does not exist in a panel of {n}"
            )));
        }
        Ok(Self {
            panel,
            costs,
            class: None,
            seed: None,
        })
    }

    /// Indices of the securities that carry no cost.
    pub fn free_securities(&self) -> Vec<usize> {
        let mut charged = vec![false; self.panel.num_securities()];
        for &j in self.costs.chargeable() {
            charged[j] = true;
        }
        (0..charged.len()).filter(|&j| !charged[j]).collect()
    }

    /// Per-security cost for a cost vector over the chargeable set.
    pub fn cost_per_security(&self, p: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.panel.num_securities()];
        for (&j, &v) in self.costs.chargeable().iter().zip(p) {
            c[j] = v;
        }
        c
    }

    /// Broker profit `sum_{j in B} p_j x_j`.
    pub fn profit(&self, x: &[f64], p: &[f64]) -> f64 {
        self.costs
            .chargeable()
            .iter()
            .zip(p)
            .map(|(&j, &v)| v * x[j])
            .sum()
    }
}

/// Draws the chargeable set and cost grids of `class` for `panel`.
pub fn generate_instance(
    class: InstanceClass,
    panel: &ScenarioPanel,
    seed: u64,
) -> Result<ProblemInstance> {
    let size = class.chargeable_count();
    let n = panel.num_securities();
    if n < size {
        return Err(Error::InvalidInput(format!(
            "class {class} charges {size} securities but the panel has only {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chargeable = order[..size].to_vec();
    chargeable.sort_unstable();
    let grids = chargeable
        .iter()
        .map(|_| {
            let count = rng.gen_range(1..=class.max_grid_size());
            draw_grid(&mut rng, count)
        })
        .collect();
    let mut instance = ProblemInstance::new(
        panel.clone(),
        CostStructure::new(chargeable, grids, Vec::new())?,
    )?;
    instance.class = Some(class);
    instance.seed = Some(seed);
    Ok(instance)
}

/// Picks a regime and draws `count` costs uniformly inside it.
pub fn draw_grid<R: Rng>(rng: &mut R, count: usize) -> Vec<f64> {
    let (lo, hi) = pick_regime(rng);
    let mut grid: Vec<f64> = (0..count).map(|_| rng.gen_range(lo..=hi)).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn pick_regime<R: Rng>(rng: &mut R) -> (f64, f64) {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(prob, lo, hi) in &COST_REGIMES {
        acc += prob;
        if u < acc {
            return (lo, hi);
        }
    }
    let (_, lo, hi) = COST_REGIMES[COST_REGIMES.len() - 1];
    (lo, hi)
}

/// Synthetic daily returns: `n` securities over `t` days driven by a
/// three-factor model, with means in [-0.001, 0.002] and volatilities in
/// [0.005, 0.03].
pub fn synthetic_panel(n: usize, t: usize, seed: u64) -> Result<ScenarioPanel> {
    const FACTORS: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs: Vec<(f64, f64, Vec<f64>)> = (0..n)
        .map(|_| {
            let mean = rng.gen_range(-0.001..=0.002);
            let vol = rng.gen_range(0.005..=0.03);
            let raw: Vec<f64> = (0..FACTORS).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let norm = raw.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
            let share: f64 = rng.gen_range(0.2..=0.8);
            let loadings = raw.iter().map(|b| b / norm * share.sqrt()).collect();
            (mean, vol, loadings)
        })
        .collect();
    let mut returns = vec![Vec::with_capacity(t); n];
    for _ in 0..t {
        let f: Vec<f64> = (0..FACTORS).map(|_| rng.sample(StandardNormal)).collect();
        for (j, (mean, vol, loadings)) in specs.iter().enumerate() {
            let common: f64 = loadings.iter().zip(&f).map(|(b, z)| b * z).sum();
            let idio_share = (1.0 - loadings.iter().map(|b| b * b).sum::<f64>()).max(0.0);
            let e: f64 = rng.sample(StandardNormal);
            returns[j].push(mean + vol * (common + idio_share.sqrt() * e));
        }
    }
    let names = (1..=n).map(|j| format!("S{j:02}")).collect();
    ScenarioPanel::uniform(names, returns)
}

fn check_portfolio(
    panel: &ScenarioPanel,
    chargeable: &[usize],
    x: &[f64],
    p: &[f64],
) -> Result<()> {
    if x.len() != panel.num_securities() {
        return Err(Error::DimensionMismatch(format!(
            "portfolio has {} weights for {} securities",
            x.len(),
            panel.num_securities()
        )));
    }
    if p.len() != chargeable.len() {
        return Err(Error::DimensionMismatch(format!(
            "cost vector has {} entries for {} chargeable securities",
            p.len(),
            chargeable.len()
        )));
    }
    if x.iter().any(|&v| v < -1e-9) || x.iter().sum::<f64>() > 1.0 + 1e-9 {
        return Err(Error::InvalidInput(
            "portfolio weights must be nonnegative and sum to at most 1".into(),
        ));
    }
    Ok(())
}

/// Per-scenario net rates `y_t = sum_j r_jt x_j - sum_{i in B} p_i x_i`.
pub fn net_scenario_returns(
    panel: &ScenarioPanel,
    chargeable: &[usize],
    x: &[f64],
    p: &[f64],
) -> Result<Vec<f64>> {
    check_portfolio(panel, chargeable, x, p)?;
    let cost: f64 = chargeable.iter().zip(p).map(|(&j, &c)| c * x[j]).sum();
    Ok((0..panel.num_scenarios())
        .map(|t| (0..x.len()).map(|j| panel.r(j, t) * x[j]).sum::<f64>() - cost)
        .collect())
}

/// Probability-weighted mean of the net scenario rates.
pub fn expected_return(
    panel: &ScenarioPanel,
    chargeable: &[usize],
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    let y = net_scenario_returns(panel, chargeable, x, p)?;
    Ok(y.iter()
        .zip(panel.probabilities())
        .map(|(y, p)| y * p)
        .sum())
}

/// On-disk description of an instance's cost side; the panel is stored separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    pub class: Option<InstanceClass>,
    pub seed: Option<u64>,
    #[serde(rename = "B")]
    pub chargeable: Vec<usize>,
    pub cost_grids: Vec<Vec<f64>>,
    #[serde(default)]
    pub polyhedron: Vec<CostRow>,
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance) -> Self {
        Self {
            class: instance.class,
            seed: instance.seed,
            chargeable: instance.costs.chargeable().to_vec(),
            cost_grids: instance.costs.grids().to_vec(),
            polyhedron: instance.costs.polyhedron().to_vec(),
        }
    }

    pub fn into_instance(self, panel: ScenarioPanel) -> Result<ProblemInstance> {
        let costs = CostStructure::new(self.chargeable, self.cost_grids, self.polyhedron)?;
        let mut instance = ProblemInstance::new(panel, costs)?;
        instance.class = self.class;
        instance.seed = self.seed;
        Ok(instance)
    }
}

pub fn write_instance_json<W: Write>(writer: W, instance: &ProblemInstance) -> Result<()> {
    serde_json::to_writer_pretty(writer, &InstanceFile::from_instance(instance))?;
    Ok(())
}

pub fn read_instance_json<R: Read>(reader: R, panel: ScenarioPanel) -> Result<ProblemInstance> {
    let file: InstanceFile = serde_json::from_reader(reader)?;
    file.into_instance(panel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file() {
        let panel = read_returns_csv("A\n0.01\n-0.02\n".as_bytes()).unwrap();
        assert_eq!(panel.num_securities(), 1);
        assert_eq!(panel.num_scenarios(), 2);
        assert_eq!(panel.probabilities(), &[0.5, 0.5]);
        assert_eq!(panel.returns(0), &[0.01, -0.02]);
    }

    #[test]
    fn non_numeric_cell_is_named() {
        let err = read_returns_csv("A,B\n0.01,0.02\n0.03,abc\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse {
                row,
                column,
                message,
            } => {
                assert_eq!((row, column), (3, 2));
                assert!(message.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_and_empty_files_are_rejected() {
        assert!(matches!(
            read_returns_csv("A,B\n0.01\n".as_bytes()),
            Err(Error::Parse { row: 2, .. })
        ));
        assert!(read_returns_csv("".as_bytes()).is_err());
        assert!(read_returns_csv("A,B\n".as_bytes()).is_err());
        assert!(read_returns_csv("A\ninf\n".as_bytes()).is_err());
    }

    #[test]
    fn probability_column_is_honored() {
        let panel = read_returns_csv("A,probability\n0.01,0.25\n0.02,0.75\n".as_bytes()).unwrap();
        assert_eq!(panel.num_securities(), 1);
        assert_eq!(panel.probabilities(), &[0.25, 0.75]);
        let mut buf = Vec::new();
        write_returns_csv(&mut buf, &panel).unwrap();
        assert_eq!(read_returns_csv(buf.as_slice()).unwrap(), panel);
    }

    #[test]
    fn class_table() {
        assert_eq!(InstanceClass::A.chargeable_count(), 30);
        assert_eq!(InstanceClass::A.max_grid_size(), 5);
        assert_eq!(InstanceClass::E.chargeable_count(), 20);
        assert_eq!(InstanceClass::E.max_grid_size(), 15);
        assert_eq!(InstanceClass::I.chargeable_count(), 10);
        assert_eq!(InstanceClass::I.max_grid_size(), 50);
        assert_eq!("g".parse::<InstanceClass>().unwrap(), InstanceClass::G);
        assert!("Z".parse::<InstanceClass>().is_err());
    }

    #[test]
    fn grids_are_sorted_and_deduplicated() {
        let c = CostStructure::new(vec![0], vec![vec![0.03, 0.01, 0.03]], vec![]).unwrap();
        assert_eq!(c.grids()[0], vec![0.01, 0.03]);
        assert!(CostStructure::new(vec![0], vec![vec![]], vec![]).is_err());
        assert!(CostStructure::new(vec![0], vec![vec![-0.1]], vec![]).is_err());
    }

    #[test]
    fn enumeration_is_lexicographic_and_filtered() {
        let rows = vec![CostRow {
            coefficients: vec![1.0, 1.0],
            relation: Relation::Le,
            rhs: 0.02,
        }];
        let c = CostStructure::new(vec![0, 1], vec![vec![0.01, 0.02], vec![0.005, 0.015]], rows)
            .unwrap();
        assert_eq!(c.enumerate(10).unwrap(), vec![vec![0.01, 0.005]]);
        assert!(matches!(c.enumerate(3), Err(Error::EnumerationCap { .. })));
        let free = CostStructure::new(
            vec![0, 1],
            vec![vec![0.01, 0.02], vec![0.005, 0.015]],
            vec![],
        )
        .unwrap();
        assert_eq!(
            free.enumerate(10).unwrap(),
            vec![
                vec![0.01, 0.005],
                vec![0.01, 0.015],
                vec![0.02, 0.005],
                vec![0.02, 0.015]
            ]
        );
    }
}
