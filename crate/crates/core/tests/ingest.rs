mod common;

use std::collections::BTreeMap;
use std::fs;

use fieldkde::ingest::*;
use fieldkde::numeric::CountSummary;
use fieldkde::synth::*;
use fieldkde::Vec2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn season_csv(cfg: &SeasonConfig) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("season.csv");
    let events = generate_season(cfg).unwrap();
    write_events_csv(fs::File::create(&path).unwrap(), &events).unwrap();
    (dir, path)
}

#[test]
fn sample_possession_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("possession.csv");
    fs::write(
        &path,
        "attacking_team,defending_team,x,y,action\n\
         St Helens,Salford,9,4,Catch\n\
         St Helens,Salford,9,6,Run\n\
         St Helens,Salford,14,11,Pass\n\
         St Helens,Salford,22,13,Pass\n\
         St Helens,Salford,12,12,Run\n\
         St Helens,Salford,37,16,Run\n\
         St Helens,Salford,36,24,Run\n\
         St Helens,Salford,54,35,Kick\n",
    )
    .unwrap();
    let report = parse_events(&path, &ColumnMapping::default()).unwrap();
    assert_eq!(report.records.len(), 8);
    let first = &report.records[0];
    assert_eq!(
        (
            first.attacking_team.as_str(),
            first.defending_team.as_str(),
            first.x,
            first.y,
            first.action.as_str()
        ),
        ("St Helens", "Salford", 9.0, 4.0, "Catch")
    );
    let (kept, _) = filter_attacking(&report.records, &FilterPolicy::default());
    assert_eq!(kept.len(), 8);
    assert!(parse_events(&dir.path().join("missing.csv"), &ColumnMapping::default()).is_err());
}

#[test]
fn synthetic_season_partitions_with_conservation() {
    let (_dir, path) = season_csv(&SeasonConfig::example(1));
    let report = parse_events(&path, &ColumnMapping::default()).unwrap();
    assert!(report.rejected.is_empty());
    let (kept, _) = filter_attacking(&report.records, &FilterPolicy::default());
    let part = partition(&kept).unwrap();
    assert_eq!(part.subsets.len(), 1 + 12 + 132);
    assert!(part.notices.is_empty());

    let league = part.league().unwrap().len();
    let mut team_total = 0;
    for team in &part.teams {
        let overall = part.get(&PartitionKey::Team { team: team.clone() }).unwrap().len();
        let pairs: usize = part
            .subsets
            .iter()
            .filter(|(k, _)| matches!(k, PartitionKey::TeamVsOpponent { team: t, .. } if t == team))
            .map(|(_, s)| s.len())
            .sum();
        assert_eq!(pairs, overall);
        team_total += overall;
    }
    assert_eq!(team_total, league);
    for set in part.subsets.values() {
        assert!(set.points().iter().all(|p| p.on_pitch()));
    }

    // Sizing target: per-team counts near 8105.
    let (between, within) = part.count_summaries();
    let between = between.unwrap();
    assert!(
        (between.median - 8105.0).abs() <= 0.2 * 8105.0,
        "median {}",
        between.median
    );
    assert!((within.unwrap().median - 732.0).abs() <= 0.2 * 732.0);
}

#[test]
fn ingest_manifest_matches_direct_counts() {
    let (dir, path) = season_csv(&SeasonConfig::example(1));
    let out = dir.path().join("subsets");
    let manifest = run_ingest(&path, &IngestConfig::default(), &out).unwrap();

    // Counting oracle straight from the CSV, without the library's parser.
    let text = fs::read_to_string(&path).unwrap();
    let mut team_counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pair_counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    let mut prev: Option<(&str, &str, &str)> = None;
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let key = (f[0], f[2], f[3]);
        if prev == Some(key) {
            continue;
        }
        prev = Some(key);
        *team_counts.entry(f[0]).or_default() += 1;
        *pair_counts.entry((f[0], f[1])).or_default() += 1;
    }
    let between = CountSummary::from_counts(&team_counts.values().copied().collect::<Vec<_>>()).unwrap();
    let within = CountSummary::from_counts(&pair_counts.values().copied().collect::<Vec<_>>()).unwrap();
    assert_eq!(manifest.between_team, Some(between));
    assert_eq!(manifest.within_team, Some(within));
    assert_eq!(manifest.subsets.len(), 145);

    let on_disk: ManifestCheck = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(on_disk.subsets.len(), 145);
    let entry = manifest
        .subsets
        .iter()
        .find(|e| e.key == PartitionKey::Team { team: "B".into() })
        .unwrap();
    let set = read_samples_csv(&out.join(&entry.file), "B").unwrap();
    assert_eq!(set.len(), team_counts["B"]);
}

#[derive(serde::Deserialize)]
struct ManifestCheck {
    subsets: Vec<serde_json::Value>,
}

#[test]
fn truncated_component_mean_matches_monte_carlo() {
    let sigma = Vec2::new(15.0, 35.0);
    let profile = |name: &str| TeamProfile {
        name: name.into(),
        components: vec![MixtureComponent {
            weight: 1.0,
            mean: Vec2::new(20.0, 50.0),
            sigma,
        }],
        actions_per_match: CountDistribution {
            mean: 2000.0,
            spread: 0.0,
        },
    };
    let cfg = SeasonConfig {
        teams: vec![profile("X"), profile("Y")],
        rounds: 5,
        seed: 17,
        actions: vec!["Run".into()],
    };
    let events = generate_season(&cfg).unwrap();
    let n = events.len() as f64;
    let mean_x = events.iter().map(|e| e.x).sum::<f64>() / n;
    let mean_y = events.iter().map(|e| e.y).sum::<f64>() / n;

    // Oracle: 10^6 rejection draws from an unrelated generator.
    let mut rng = common::rng(99);
    let (nx, ny) = (Normal::new(20.0, sigma.x).unwrap(), Normal::new(50.0, sigma.y).unwrap());
    let (mut sx, mut sy, mut sxx, mut syy, mut k) = (0.0, 0.0, 0.0, 0.0, 0.0);
    while k < 1e6 {
        let (x, y) = (nx.sample(&mut rng), ny.sample(&mut rng));
        if (0.0..=70.0).contains(&x) && (-10.0..=110.0).contains(&y) {
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            k += 1.0;
        }
    }
    let _ = rng.random::<u8>();
    let (ox, oy) = (sx / k, sy / k);
    let (vx, vy) = (sxx / k - ox * ox, syy / k - oy * oy);
    let se_x = (vx / n + vx / k).sqrt();
    let se_y = (vy / n + vy / k).sqrt();
    assert!((mean_x - ox).abs() < 3.0 * se_x, "x: {mean_x} vs {ox} (se {se_x})");
    assert!((mean_y - oy).abs() < 3.0 * se_y, "y: {mean_y} vs {oy} (se {se_y})");
    // Truncation visibly pulls the mean away from the untruncated one.
    assert!(ox > 21.0);
}

#[test]
fn filtering_is_idempotent_on_generated_data() {
    let events = generate_season(&SeasonConfig::example(4)).unwrap();
    let policy = FilterPolicy::new(["Run", "Pass"], true).unwrap();
    let (once, summary) = filter_attacking(&events, &policy);
    let (twice, _) = filter_attacking(&once, &policy);
    assert_eq!(once, twice);
    assert_eq!(
        summary.kept + summary.dropped_duplicates + summary.dropped_by_action.values().sum::<usize>(),
        events.len()
    );
}
