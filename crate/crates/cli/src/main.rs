//! Command-line front end: synthesize, ingest, select bandwidths, analyze,
//! compare and render.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fieldkde::bandwidth::{pool_geometric_mean, select_with_curve, CandidateGrid, CvConfig};
use fieldkde::ingest::{filter_attacking, parse_events, partition, run_ingest, IngestConfig, PartitionKey};
use fieldkde::pipeline::{run_analysis, AnalysisConfig};
use fieldkde::render::{render_diff, render_heatmap, ColorMap, ColorMapKind, HeatmapScale};
use fieldkde::synth::{generate_season, write_events_csv, SeasonConfig};
use fieldkde::transport::{discretize, wasserstein_exact, wasserstein_sinkhorn, CostSpec, SinkhornParams};
use fieldkde::{Bandwidth, DensityGrid, SignedGrid};

#[derive(Parser)]
#[command(
    name = "fieldkde",
    version,
    about = "Spatial event densities and Wasserstein comparisons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic season as event CSV
    Synth {
        /// SeasonConfig JSON; the built-in 12-team example when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the built-in example
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse, filter and partition an event CSV into per-subset sample files
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Column mapping and filter policy JSON
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated bandwidth per subset plus the pooled value
    SelectBandwidth {
        #[arg(long)]
        input: PathBuf,
        /// Subset level: `league`, `team` or `team,opponent`
        #[arg(long, default_value = "team,opponent")]
        group_by: String,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Log-spaced candidates as `min,max,count`
        #[arg(long, default_value = "0.25,100,40")]
        grid: String,
        /// Column mapping and filter policy JSON
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Full pipeline from an AnalysisConfig JSON
    Analyze {
        #[arg(long)]
        config: PathBuf,
    },
    /// Wasserstein distance between two density grids
    Distance {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        p: f64,
        /// Ground norm: l1, l2 or linf
        #[arg(long, default_value = "l1")]
        norm: String,
        #[arg(long, value_enum, default_value_t = SolverArg::Exact)]
        solver: SolverArg,
        /// Sinkhorn epsilon; 0.05 x the median ground cost when omitted
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        /// Cells below this mass are dropped before solving
        #[arg(long, default_value_t = 1e-10)]
        mass_floor: f64,
    },
    /// Render a density grid, or the difference of two, as a PPM image
    Render {
        #[arg(long)]
        grid: PathBuf,
        /// Subtract this grid and render the signed difference
        #[arg(long)]
        diff: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// ColorMap JSON; white-blue for densities, red-white-green for differences by default
        #[arg(long)]
        colormap: Option<PathBuf>,
        /// Scale positive and negative differences separately
        #[arg(long)]
        asymmetric: bool,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum SolverArg {
    Exact,
    Sinkhorn,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth { config, seed, out } => synth(config.as_deref(), seed, &out),
        Command::Ingest { input, config, out } => {
            let cfg = ingest_config(config.as_deref())?;
            let manifest = run_ingest(&input, &cfg, &out)?;
            print_json(&manifest)
        }
        Command::SelectBandwidth {
            input,
            group_by,
            folds,
            seed,
            grid,
            config,
        } => select(&input, &group_by, folds, seed, &grid, config.as_deref()),
        Command::Analyze { config } => {
            let cfg = AnalysisConfig::from_path(&config)?;
            let report = run_analysis(&cfg)?;
            print_json(&report)
        }
        Command::Distance {
            a,
            b,
            p,
            norm,
            solver,
            epsilon,
            max_iters,
            tol,
            mass_floor,
        } => {
            let cost = CostSpec::new(p, CostSpec::norm_from_name(&norm)?)?;
            distance(&a, &b, cost, solver, epsilon, max_iters, tol, mass_floor)
        }
        Command::Render {
            grid,
            diff,
            out,
            colormap,
            asymmetric,
        } => render(&grid, diff.as_deref(), &out, colormap.as_deref(), asymmetric),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn ingest_config(path: Option<&Path>) -> Result<IngestConfig> {
    Ok(match path {
        Some(p) => IngestConfig::from_path(p)?,
        None => IngestConfig::default(),
    })
}

fn synth(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg = match config {
        Some(p) => SeasonConfig::from_path(p)?,
        None => SeasonConfig::example(seed),
    };
    let events = generate_season(&cfg)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_events_csv(BufWriter::new(file), &events)?;
    log::info!("wrote {} events to {}", events.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SubsetSelection {
    key: PartitionKey,
    samples: usize,
    bandwidth: Bandwidth,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct SelectionOutput {
    candidates: CandidateGrid,
    folds: usize,
    seed: u64,
    subsets: Vec<SubsetSelection>,
    skipped: Vec<String>,
    pooled_bandwidth: Bandwidth,
}

fn parse_grid(spec: &str) -> Result<CandidateGrid> {
    let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
    let [min, max, count] = parts[..] else {
        bail!("--grid expects min,max,count, got '{spec}'");
    };
    Ok(CandidateGrid::log_spaced(min.parse()?, max.parse()?, count.parse()?)?)
}

fn select(input: &Path, group_by: &str, folds: usize, seed: u64, grid: &str, config: Option<&Path>) -> Result<()> {
    let level: fn(&PartitionKey) -> bool = match group_by.replace(' ', "").as_str() {
        "league" => |k| matches!(k, PartitionKey::League),
        "team" => |k| matches!(k, PartitionKey::Team { .. }),
        "team,opponent" => |k| matches!(k, PartitionKey::TeamVsOpponent { .. }),
        other => bail!("--group-by must be league, team or team,opponent, got '{other}'"),
    };
    let candidates = parse_grid(grid)?;
    let cv = CvConfig {
        folds,
        seed,
        shuffle: true,
    };
    let cfg = ingest_config(config)?;
    let parsed = parse_events(input, &cfg.columns)?;
    let (kept, _) = filter_attacking(&parsed.records, &cfg.filter);
    let part = partition(&kept)?;

    let mut subsets = Vec::new();
    let mut skipped = Vec::new();
    for (key, set) in part.subsets.iter().filter(|(k, _)| level(k)) {
        if set.len() < folds {
            skipped.push(format!("{key}: {} samples < {folds} folds", set.len()));
            continue;
        }
        let sel = select_with_curve(set, &candidates, &cv)?;
        subsets.push(SubsetSelection {
            key: key.clone(),
            samples: set.len(),
            bandwidth: sel.bandwidth,
            scores: sel.scores,
        });
    }
    let chosen: Vec<Bandwidth> = subsets.iter().map(|s| s.bandwidth).collect();
    let pooled_bandwidth = pool_geometric_mean(&chosen).context("no subset was large enough to cross-validate")?;
    print_json(&SelectionOutput {
        candidates,
        folds,
        seed,
        subsets,
        skipped,
        pooled_bandwidth,
    })
}

fn read_grid(path: &Path) -> Result<DensityGrid> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    DensityGrid::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

#[derive(Serialize)]
struct DistanceOutput {
    distance: f64,
    solver: SolverArg,
    converged: bool,
    support_sizes: [usize; 2],
    cell_size: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
}

#[allow(clippy::too_many_arguments)]
fn distance(
    a: &Path,
    b: &Path,
    cost: CostSpec,
    solver: SolverArg,
    epsilon: Option<f64>,
    max_iters: usize,
    tol: f64,
    mass_floor: f64,
) -> Result<()> {
    let (ga, gb) = (read_grid(a)?, read_grid(b)?);
    let cell_size = ga.spec().cell_size;
    if (cell_size - gb.spec().cell_size).abs() > 1e-12 * cell_size {
        bail!(
            "grids have different cell sizes ({cell_size} vs {})",
            gb.spec().cell_size
        );
    }
    let (mu, nu) = (discretize(&ga, mass_floor)?, discretize(&gb, mass_floor)?);
    let out = match solver {
        SolverArg::Exact => DistanceOutput {
            distance: wasserstein_exact(&mu, &nu, cost)?.distance,
            solver,
            converged: true,
            support_sizes: [mu.len(), nu.len()],
            cell_size,
            epsilon: None,
            iterations: None,
        },
        SolverArg::Sinkhorn => {
            let eps = epsilon.unwrap_or_else(|| {
                fieldkde::pipeline::DEFAULT_EPSILON_FRACTION * fieldkde::transport::median_ground_cost(&mu, &nu, cost)
            });
            let r = wasserstein_sinkhorn(
                &mu,
                &nu,
                cost,
                &SinkhornParams {
                    epsilon: eps,
                    max_iters,
                    tol,
                },
            )?;
            if !r.converged {
                log::warn!(
                    "sinkhorn stopped after {} iterations (marginal error {})",
                    r.iterations,
                    r.marginal_error
                );
            }
            DistanceOutput {
                distance: r.distance,
                solver,
                converged: r.converged,
                support_sizes: [mu.len(), nu.len()],
                cell_size,
                epsilon: Some(eps),
                iterations: Some(r.iterations),
            }
        }
    };
    print_json(&out)
}

fn render(grid: &Path, diff: Option<&Path>, out: &Path, colormap: Option<&Path>, asymmetric: bool) -> Result<()> {
    let map = match colormap {
        Some(p) => Some(ColorMap::from_json(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )?),
        None => None,
    };
    let a = read_grid(grid)?;
    let image = match diff {
        Some(base) => {
            let d = SignedGrid::difference(&a, &read_grid(base)?)?;
            render_diff(&d, &map.unwrap_or_else(ColorMap::diverging), !asymmetric)?
        }
        None => {
            let map = map.unwrap_or_else(ColorMap::sequential);
            if map.kind() == ColorMapKind::Diverging {
                log::info!("rendering a density with a diverging map: zero sits at the midpoint");
            }
            render_heatmap(&a, &map, HeatmapScale::Max)?
        }
    };
    image.write_ppm(out)?;
    Ok(())
}
