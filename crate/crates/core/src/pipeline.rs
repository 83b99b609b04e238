//! End-to-end analysis: bandwidth selection on the team-vs-opponent
//! subsets, geometric-mean pooling, refitting every subset at the pooled
//! bandwidth, and Wasserstein distances between and within teams.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandwidth::{pool_geometric_mean, select_with_curve, CandidateGrid, CvConfig, Selection};
use crate::error::{Error, Result};
use crate::ingest::{
    filter_attacking, parse_events, partition, ColumnMapping, EventRecord, FilterPolicy, FilterSummary, PartitionKey,
    RowError,
};
use crate::kde::{Bandwidth, DensityGrid, DensityModel, GridSpec, SignedGrid};
use crate::numeric::Stats;
use crate::render::{render_diff, render_heatmap, ColorMap, HeatmapScale};
use crate::transport::{
    discretize, median_ground_cost, wasserstein_exact, wasserstein_sinkhorn, CostSpec, DiscreteDistribution,
    SinkhornParams,
};

/// Sinkhorn epsilon used when none is configured, as a fraction of the
/// median ground cost of each pair.
pub const DEFAULT_EPSILON_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverChoice {
    #[default]
    Exact,
    Sinkhorn {
        /// Absolute epsilon; when absent, 0.05 x the median ground cost.
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default = "default_max_iters")]
        max_iters: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
}

fn default_max_iters() -> usize {
    SinkhornParams::new(1.0).max_iters
}

fn default_tol() -> f64 {
    SinkhornParams::new(1.0).tol
}

fn default_grid() -> GridSpec {
    GridSpec::padded_pitch(2.0).expect("valid default grid")
}

fn default_min_subset() -> usize {
    25
}

fn default_mass_floor() -> f64 {
    1e-10
}

fn yes() -> bool {
    true
}

/// Everything a run needs. Relative paths resolve against the working
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub columns: ColumnMapping,
    #[serde(default)]
    pub filter: FilterPolicy,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default)]
    pub candidate_grid: CandidateGrid,
    #[serde(default = "default_grid")]
    pub grid_spec: GridSpec,
    #[serde(default)]
    pub cost: CostSpec,
    #[serde(default)]
    pub solver: SolverChoice,
    /// Subsets smaller than this are excluded from the analysis.
    #[serde(default = "default_min_subset")]
    pub min_subset_size: usize,
    #[serde(default = "default_mass_floor")]
    pub mass_floor: f64,
    #[serde(default = "yes")]
    pub render_images: bool,
}

impl AnalysisConfig {
    /// Defaults for everything except the two paths.
    pub fn new(input: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        AnalysisConfig {
            input: input.into(),
            output_dir: output_dir.into(),
            columns: ColumnMapping::default(),
            filter: FilterPolicy::default(),
            cv: CvConfig::default(),
            candidate_grid: CandidateGrid::default(),
            grid_spec: default_grid(),
            cost: CostSpec::default(),
            solver: SolverChoice::default(),
            min_subset_size: default_min_subset(),
            mass_floor: default_mass_floor(),
            render_images: true,
        }
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: AnalysisConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cv.folds < 2 {
            return Err(Error::Config(format!(
                "cv.folds must be at least 2, got {}",
                self.cv.folds
            )));
        }
        if !(self.mass_floor.is_finite() && (0.0..1.0).contains(&self.mass_floor)) {
            return Err(Error::Config(format!(
                "mass_floor must lie in [0, 1), got {}",
                self.mass_floor
            )));
        }
        if let SolverChoice::Sinkhorn {
            epsilon,
            max_iters,
            tol,
        } = &self.solver
        {
            if epsilon.is_some_and(|e| !(e.is_finite() && e > 0.0)) {
                return Err(Error::Config("sinkhorn epsilon must be positive".into()));
            }
            if *max_iters == 0 || !(tol.is_finite() && *tol > 0.0) {
                return Err(Error::Config("sinkhorn needs max_iters >= 1 and tol > 0".into()));
            }
        }
        Ok(())
    }

    /// SHA-256 of the config's canonical JSON.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

/// Row, column and 'All' summaries of a distance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSummary {
    pub row_stats: BTreeMap<String, Stats>,
    pub col_stats: BTreeMap<String, Stats>,
    pub all_stats: Option<Stats>,
}

/// Mean and sample SD per attacking team (row), per opponent (column) and
/// over the 'All' column. Row and column stats never include 'All'.
pub fn summarize(
    all_column: &BTreeMap<String, f64>,
    within_matrix: &BTreeMap<String, BTreeMap<String, f64>>,
) -> TableSummary {
    let mut row_stats = BTreeMap::new();
    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for (team, row) in within_matrix {
        let values: Vec<f64> = row.values().copied().collect();
        if let Some(s) = Stats::from_values(&values) {
            row_stats.insert(team.clone(), s);
        }
        for (opp, d) in row {
            columns.entry(opp.as_str()).or_default().push(*d);
        }
    }
    let col_stats = columns
        .into_iter()
        .filter_map(|(opp, v)| Stats::from_values(&v).map(|s| (opp.to_string(), s)))
        .collect();
    let all: Vec<f64> = all_column.values().copied().collect();
    TableSummary {
        row_stats,
        col_stats,
        all_stats: Stats::from_values(&all),
    }
}

/// Signed grid `a - b`; the specs must match.
pub fn difference_grid(a: &DensityGrid, b: &DensityGrid) -> Result<SignedGrid> {
    SignedGrid::difference(a, b)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub pooled_bandwidth: Bandwidth,
    pub teams: Vec<String>,
    /// Team overall vs the whole league.
    pub all_column: BTreeMap<String, f64>,
    /// `within_matrix[team][opponent]`: team-vs-opponent vs team overall.
    pub within_matrix: BTreeMap<String, BTreeMap<String, f64>>,
    pub row_stats: BTreeMap<String, Stats>,
    pub col_stats: BTreeMap<String, Stats>,
    pub all_stats: Option<Stats>,
    pub grid_spec: GridSpec,
    pub cost: CostSpec,
    pub solver: SolverChoice,
    /// Comparisons whose Sinkhorn run hit `max_iters`.
    pub nonconverged: Vec<String>,
}

impl DistanceReport {
    pub fn distance_count(&self) -> usize {
        self.all_column.len() + self.within_matrix.values().map(BTreeMap::len).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub key: PartitionKey,
    pub size: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub key: PartitionKey,
    pub samples: usize,
    pub bandwidth: Bandwidth,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// In-memory result of [`analyze_events`].
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: DistanceReport,
    pub grids: BTreeMap<PartitionKey, DensityGrid>,
    pub selections: Vec<SelectionRecord>,
    pub excluded: Vec<Exclusion>,
    pub notices: Vec<String>,
    pub filter: FilterSummary,
    pub subset_sizes: BTreeMap<PartitionKey, usize>,
    /// Distance of the first team's overall density to itself; must be 0.
    pub self_check_distance: f64,
}

/// Runs the analysis on already-parsed events. `cfg.input` and
/// `cfg.output_dir` are not touched.
pub fn analyze_events(events: &[EventRecord], cfg: &AnalysisConfig) -> Result<Analysis> {
    cfg.validate()?;
    let (kept, filter) = filter_attacking(events, &cfg.filter);
    let part = partition(&kept)?;
    let min_size = cfg.min_subset_size.max(cfg.cv.folds);

    let subset_sizes: BTreeMap<PartitionKey, usize> = part.subsets.iter().map(|(k, s)| (k.clone(), s.len())).collect();
    let mut excluded = Vec::new();
    let mut included = BTreeMap::new();
    for (key, set) in &part.subsets {
        if set.len() < min_size {
            log::warn!("excluding '{key}': {} actions < minimum {min_size}", set.len());
            excluded.push(Exclusion {
                key: key.clone(),
                size: set.len(),
                reason: format!("fewer than {min_size} actions"),
            });
        } else {
            included.insert(key.clone(), set.clone());
        }
    }
    if !included.contains_key(&PartitionKey::League) {
        return Err(Error::InsufficientData(
            "the league subset is below the minimum size".into(),
        ));
    }

    // Bandwidth selection on the finest subsets only.
    let pair_keys: Vec<&PartitionKey> = included
        .keys()
        .filter(|k| matches!(k, PartitionKey::TeamVsOpponent { .. }))
        .collect();
    if pair_keys.is_empty() {
        return Err(Error::InsufficientData(
            "no team-vs-opponent subset is large enough for cross-validation".into(),
        ));
    }
    let mut selections = Vec::with_capacity(pair_keys.len());
    for key in &pair_keys {
        let set = &included[*key];
        let Selection {
            bandwidth,
            index,
            scores,
        } = select_with_curve(set, &cfg.candidate_grid, &cfg.cv)?;
        log::debug!("{key}: h = {}", bandwidth.value());
        selections.push(SelectionRecord {
            key: (*key).clone(),
            samples: set.len(),
            bandwidth,
            index,
            scores,
        });
    }
    let chosen: Vec<Bandwidth> = selections.iter().map(|s| s.bandwidth).collect();
    let pooled = pool_geometric_mean(&chosen)?;
    log::info!("pooled bandwidth {} from {} subsets", pooled.value(), chosen.len());

    let entries: Vec<(&PartitionKey, &crate::kde::SampleSet)> = included.iter().collect();
    let grids: BTreeMap<PartitionKey, DensityGrid> = entries
        .par_iter()
        .map(|(k, s)| {
            (
                (*k).clone(),
                DensityModel::fit((*s).clone(), pooled).evaluate_grid(&cfg.grid_spec),
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();
    let dists: BTreeMap<&PartitionKey, DiscreteDistribution> = grids
        .par_iter()
        .map(|(k, g)| discretize(g, cfg.mass_floor).map(|d| (k, d)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .collect();

    // (row, column) labels and the two subsets compared.
    let mut jobs: Vec<(String, Option<String>, &PartitionKey, &PartitionKey)> = Vec::new();
    let league = &PartitionKey::League;
    let mut team_keys: BTreeMap<&str, &PartitionKey> = BTreeMap::new();
    for key in included.keys() {
        if let PartitionKey::Team { team } = key {
            team_keys.insert(team, key);
            jobs.push((team.clone(), None, key, league));
        }
    }
    for key in included.keys() {
        if let PartitionKey::TeamVsOpponent { team, opponent } = key {
            match team_keys.get(team.as_str()) {
                Some(team_key) => jobs.push((team.clone(), Some(opponent.clone()), key, team_key)),
                None => log::warn!("skipping '{key}': team overall subset was excluded"),
            }
        }
    }

    let solver = resolve_solver(&cfg.solver);
    let results: Vec<(f64, bool)> = jobs
        .par_iter()
        .map(|(_, _, a, b)| distance(&dists[a], &dists[b], cfg.cost, &solver))
        .collect::<Result<_>>()?;

    let mut all_column = BTreeMap::new();
    let mut within_matrix: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut nonconverged = Vec::new();
    for ((team, opponent, a, b), (d, converged)) in jobs.iter().zip(&results) {
        if !converged {
            nonconverged.push(format!("{a} / {b}"));
        }
        match opponent {
            None => {
                all_column.insert(team.clone(), *d);
            }
            Some(opp) => {
                within_matrix.entry(team.clone()).or_default().insert(opp.clone(), *d);
            }
        }
    }

    let self_check_distance = match team_keys.values().next() {
        Some(k) => distance(&dists[k], &dists[k], cfg.cost, &solver)?.0,
        None => 0.0,
    };
    if self_check_distance.abs() > 1e-9 {
        log::warn!("self-distance check returned {self_check_distance}");
    }

    let summary = summarize(&all_column, &within_matrix);
    let report = DistanceReport {
        pooled_bandwidth: pooled,
        teams: part.teams.clone(),
        all_column,
        within_matrix,
        row_stats: summary.row_stats,
        col_stats: summary.col_stats,
        all_stats: summary.all_stats,
        grid_spec: cfg.grid_spec,
        cost: cfg.cost,
        solver: cfg.solver.clone(),
        nonconverged,
    };
    Ok(Analysis {
        report,
        grids,
        selections,
        excluded,
        notices: part.notices,
        filter,
        subset_sizes,
        self_check_distance,
    })
}

enum Solver {
    Exact,
    Sinkhorn {
        epsilon: Option<f64>,
        max_iters: usize,
        tol: f64,
    },
}

fn resolve_solver(choice: &SolverChoice) -> Solver {
    match *choice {
        SolverChoice::Exact => Solver::Exact,
        SolverChoice::Sinkhorn {
            epsilon,
            max_iters,
            tol,
        } => Solver::Sinkhorn {
            epsilon,
            max_iters,
            tol,
        },
    }
}

fn distance(
    a: &DiscreteDistribution,
    b: &DiscreteDistribution,
    cost: CostSpec,
    solver: &Solver,
) -> Result<(f64, bool)> {
    match *solver {
        Solver::Exact => Ok((wasserstein_exact(a, b, cost)?.distance, true)),
        Solver::Sinkhorn {
            epsilon,
            max_iters,
            tol,
        } => {
            let epsilon = epsilon.unwrap_or_else(|| DEFAULT_EPSILON_FRACTION * median_ground_cost(a, b, cost));
            // Identical point masses have zero median cost.
            let epsilon = if epsilon > 0.0 { epsilon } else { 1e-3 };
            let r = wasserstein_sinkhorn(
                a,
                b,
                cost,
                &SinkhornParams {
                    epsilon,
                    max_iters,
                    tol,
                },
            )?;
            Ok((r.distance, r.converged))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub input_sha256: String,
    pub cv_seed: u64,
    pub pooled_bandwidth: Bandwidth,
    pub candidate_grid: CandidateGrid,
    pub selections: Vec<SelectionRecord>,
    pub excluded: Vec<Exclusion>,
    pub notices: Vec<String>,
    pub rejected_rows: Vec<RowError>,
    pub filter: FilterSummary,
    pub subset_sizes: Vec<(PartitionKey, usize)>,
    pub self_check_distance: f64,
    pub outputs: Vec<String>,
}

/// Reads `cfg.input`, runs the analysis, and writes `report.json`,
/// `manifest.json`, `grids/<slug>.json` and (optionally) `images/*.ppm`
/// under `cfg.output_dir`.
pub fn run_analysis(cfg: &AnalysisConfig) -> Result<DistanceReport> {
    cfg.validate()?;
    let raw = fs::read(&cfg.input).map_err(|e| Error::io(&cfg.input, e))?;
    let parsed = parse_events(&cfg.input, &cfg.columns)?;
    for r in &parsed.rejected {
        log::warn!("{}: line {}: {}", cfg.input.display(), r.line, r.kind);
    }
    let analysis = analyze_events(&parsed.records, cfg)?;

    let out = &cfg.output_dir;
    let grid_dir = out.join("grids");
    fs::create_dir_all(&grid_dir).map_err(|e| Error::io(&grid_dir, e))?;
    let mut outputs = Vec::new();
    let mut write = |rel: String, bytes: &[u8]| -> Result<()> {
        let path = out.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        outputs.push(rel);
        Ok(())
    };

    for (key, grid) in &analysis.grids {
        write(format!("grids/{}.json", key.slug()), grid.to_json()?.as_bytes())?;
    }
    if cfg.render_images {
        let image_dir = out.join("images");
        fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
        let seq = ColorMap::sequential();
        let div = ColorMap::diverging();
        for (key, grid) in &analysis.grids {
            let img = render_heatmap(grid, &seq, HeatmapScale::Max)?;
            write(format!("images/{}.ppm", key.slug()), &img.to_ppm())?;
            let baseline = match key {
                PartitionKey::League => None,
                PartitionKey::Team { .. } => Some(PartitionKey::League),
                PartitionKey::TeamVsOpponent { team, .. } => Some(PartitionKey::Team { team: team.clone() }),
            };
            if let Some(base) = baseline.and_then(|b| analysis.grids.get(&b)) {
                let diff = difference_grid(grid, base)?;
                let img = render_diff(&diff, &div, true)?;
                write(format!("images/diff__{}.ppm", key.slug()), &img.to_ppm())?;
            }
        }
    }
    write(
        "report.json".into(),
        serde_json::to_string_pretty(&analysis.report)?.as_bytes(),
    )?;

    let manifest = RunManifest {
        config_sha256: cfg.fingerprint()?,
        input_sha256: hex::encode(Sha256::digest(&raw)),
        cv_seed: cfg.cv.seed,
        pooled_bandwidth: analysis.report.pooled_bandwidth,
        candidate_grid: cfg.candidate_grid.clone(),
        selections: analysis.selections,
        excluded: analysis.excluded,
        notices: analysis.notices,
        rejected_rows: parsed.rejected,
        filter: analysis.filter,
        subset_sizes: analysis.subset_sizes.into_iter().collect(),
        self_check_distance: analysis.self_check_distance,
        outputs,
    };
    let path = out.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(analysis.report)
}
