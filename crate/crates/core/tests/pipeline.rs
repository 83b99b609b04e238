mod common;

use std::fs;
use std::path::Path;

use fieldkde::ingest::PartitionKey;
use fieldkde::pipeline::*;
use fieldkde::render::{render_diff, ColorMap};
use fieldkde::synth::*;
use fieldkde::transport::{discretize, wasserstein_exact, CostSpec};
use fieldkde::Vec2;

fn component(x: f64, y: f64) -> MixtureComponent {
    MixtureComponent {
        weight: 1.0,
        mean: Vec2::new(x, y),
        sigma: Vec2::new(8.0, 20.0),
    }
}

fn team(name: &str, components: Vec<MixtureComponent>) -> TeamProfile {
    TeamProfile {
        name: name.into(),
        components,
        actions_per_match: CountDistribution {
            mean: 120.0,
            spread: 10.0,
        },
    }
}

/// Left ("Left"), centre and right teams plus one ("Mix") whose mixture is
/// their even blend.
fn small_season(seed: u64) -> SeasonConfig {
    let (l, c, r) = (component(12.0, 50.0), component(35.0, 50.0), component(58.0, 50.0));
    SeasonConfig {
        teams: vec![
            team("Centre", vec![c.clone()]),
            team("Left", vec![l.clone()]),
            team(
                "Mix",
                [l, c, r.clone()]
                    .map(|m| MixtureComponent { weight: 1.0 / 3.0, ..m })
                    .to_vec(),
            ),
            team("Right", vec![r]),
        ],
        rounds: 1,
        seed,
        actions: vec!["Run".into(), "Pass".into()],
    }
}

fn config(input: &Path, out: &Path) -> AnalysisConfig {
    let mut cfg = AnalysisConfig::new(input, out);
    cfg.grid_spec = fieldkde::GridSpec::padded_pitch(4.0).unwrap();
    cfg
}

fn write_season(cfg: &SeasonConfig, dir: &Path) -> std::path::PathBuf {
    let path = dir.join("season.csv");
    write_events_csv(fs::File::create(&path).unwrap(), &generate_season(cfg).unwrap()).unwrap();
    path
}

#[test]
fn run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_season(&small_season(3), dir.path());
    let out = dir.path().join("out");
    let report = run_analysis(&config(&input, &out)).unwrap();

    assert_eq!(report.distance_count(), 4 + 12);
    assert_eq!(report.row_stats.len(), 4);
    assert_eq!(report.col_stats.len(), 4);
    let manifest: RunManifest = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.selections.len(), 12);
    assert!(manifest.excluded.is_empty());
    assert!(manifest.self_check_distance.abs() < 1e-12);
    assert_eq!(manifest.subset_sizes.len(), 17);
    // 17 grids, 17 heatmaps, 16 difference maps, report.
    assert_eq!(manifest.outputs.len(), 17 + 17 + 16 + 1);
    for rel in &manifest.outputs {
        assert!(out.join(rel).is_file(), "{rel}");
    }
    let on_disk: DistanceReport = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);

    let grid_path = out.join("grids").join(format!("{}.json", PartitionKey::League.slug()));
    let league = fieldkde::DensityGrid::from_json(&fs::read_to_string(grid_path).unwrap()).unwrap();
    assert!((league.total_mass() - 1.0).abs() < 0.02);
}

#[test]
fn blended_team_is_closest_to_the_league() {
    let events = generate_season(&small_season(5)).unwrap();
    let analysis = analyze_events(&events, &config(Path::new("-"), Path::new("-"))).unwrap();
    let all = &analysis.report.all_column;
    let min = all.iter().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert_eq!(min.0, "Mix", "{all:?}");
    assert!(all["Left"] > all["Centre"] && all["Right"] > all["Centre"]);
}

#[test]
fn identical_profiles_give_nearby_densities() {
    let twin = |name: &str| team(name, vec![component(30.0, 40.0)]);
    let season = SeasonConfig {
        teams: vec![twin("P"), twin("Q"), team("Far", vec![component(60.0, 90.0)])],
        rounds: 2,
        seed: 9,
        actions: vec!["Run".into()],
    };
    let events = generate_season(&season).unwrap();
    let analysis = analyze_events(&events, &config(Path::new("-"), Path::new("-"))).unwrap();
    let grid = |t: &str| discretize(&analysis.grids[&PartitionKey::Team { team: t.into() }], 1e-10).unwrap();
    let w = |a: &str, b: &str| {
        wasserstein_exact(&grid(a), &grid(b), CostSpec::default())
            .unwrap()
            .distance
    };
    let twins = w("P", "Q");
    let apart = w("P", "Far");
    assert!(twins < 0.1 * apart, "twins {twins}, apart {apart}");
    let all = &analysis.report.all_column;
    assert!((all["P"] - all["Q"]).abs() < 0.2 * all["Far"]);
}

#[test]
fn left_team_difference_map_is_green_on_the_left() {
    let events = generate_season(&small_season(7)).unwrap();
    let analysis = analyze_events(&events, &config(Path::new("-"), Path::new("-"))).unwrap();
    let left = &analysis.grids[&PartitionKey::Team { team: "Left".into() }];
    let diff = difference_grid(left, &analysis.grids[&PartitionKey::League]).unwrap();
    let img = render_diff(&diff, &ColorMap::diverging(), true).unwrap();
    let half = img.width() / 2;
    let (mut green_left, mut green_right) = (0, 0);
    for y in 0..img.height() {
        for x in 0..img.width() {
            let [r, g, b] = img.pixel(x, y);
            // Clearly green: green channel dominant and not near white.
            if g > r.saturating_add(20) && g > b.saturating_add(20) {
                if x < half {
                    green_left += 1;
                } else {
                    green_right += 1;
                }
            }
        }
    }
    assert!(
        green_left > 5 * green_right.max(1),
        "left {green_left}, right {green_right}"
    );
}

#[test]
fn same_config_gives_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_season(&small_season(11), dir.path());
    let a = run_analysis(&config(&input, &dir.path().join("a"))).unwrap();
    let b = run_analysis(&config(&input, &dir.path().join("b"))).unwrap();
    assert_eq!(a, b);
    for rel in ["report.json", "images/diff__team__left.ppm"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(rel)).unwrap(),
            fs::read(dir.path().join("b").join(rel)).unwrap()
        );
    }
}

#[test]
fn small_subsets_are_excluded_with_a_record() {
    let mut season = small_season(2);
    season.teams.push(TeamProfile {
        actions_per_match: CountDistribution { mean: 1.0, spread: 0.0 },
        ..team("Tiny", vec![component(35.0, 50.0)])
    });
    let events = generate_season(&season).unwrap();
    let analysis = analyze_events(&events, &config(Path::new("-"), Path::new("-"))).unwrap();
    assert!(analysis
        .excluded
        .iter()
        .any(|e| e.key == PartitionKey::Team { team: "Tiny".into() }));
    assert!(!analysis.report.all_column.contains_key("Tiny"));
    assert!(!analysis.report.within_matrix.contains_key("Tiny"));
    // Other teams still face Tiny as an opponent when that pairing is large enough.
    assert_eq!(analysis.report.all_column.len(), 4);
}

#[test]
fn sinkhorn_solver_bounds_and_orders_like_exact() {
    let events = generate_season(&small_season(4)).unwrap();
    let cfg = config(Path::new("-"), Path::new("-"));
    let exact = analyze_events(&events, &cfg).unwrap().report;
    let mut sk_cfg = cfg.clone();
    sk_cfg.solver = SolverChoice::Sinkhorn {
        epsilon: Some(2.0),
        max_iters: 5_000,
        tol: 1e-6,
    };
    let sk = analyze_events(&events, &sk_cfg).unwrap().report;
    assert!(sk.nonconverged.is_empty(), "{:?}", sk.nonconverged);
    for (t, d) in &exact.all_column {
        // Regularized plans never beat the optimum.
        assert!(sk.all_column[t] >= d - 1e-9);
    }
    assert!(sk.all_column["Left"] > sk.all_column["Mix"]);
    assert!(sk.all_column["Right"] > sk.all_column["Mix"]);
}
