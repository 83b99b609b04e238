//! Seeded synthetic seasons from per-team Gaussian mixtures.
//!
//! Each match gets its own ChaCha8 stream derived from
//! `(seed, round, home, away)`, so output does not depend on scheduling.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::EventRecord;
use crate::kde::Vec2;

/// Rejection draws allowed for one location before giving up.
pub const MAX_REJECTIONS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec2,
    /// Per-axis standard deviations in meters.
    pub sigma: Vec2,
}

/// Per-match action count: a normal draw rounded to an integer, floored at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountDistribution {
    pub mean: f64,
    #[serde(default)]
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeamProfile {
    pub name: String,
    pub components: Vec<MixtureComponent>,
    pub actions_per_match: CountDistribution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeasonConfig {
    pub teams: Vec<TeamProfile>,
    #[serde(default = "one")]
    pub rounds: usize,
    #[serde(default)]
    pub seed: u64,
    /// Action labels, drawn uniformly.
    #[serde(default = "default_actions")]
    pub actions: Vec<String>,
}

fn one() -> usize {
    1
}

fn default_actions() -> Vec<String> {
    ["Catch", "Run", "Pass", "Kick"].into_iter().map(String::from).collect()
}

impl TeamProfile {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("team '{}': {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(Error::Config("team with empty name".into()));
        }
        if self.components.is_empty() {
            return bad("no mixture components".into());
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return bad(format!("component weight {} is not positive", c.weight));
            }
            if !(c.sigma.x > 0.0 && c.sigma.y > 0.0 && c.sigma.is_finite()) {
                return bad(format!(
                    "component sigma ({}, {}) must be positive",
                    c.sigma.x, c.sigma.y
                ));
            }
            if !c.mean.is_finite() {
                return bad("component mean is not finite".into());
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("component weights sum to {total}, expected 1"));
        }
        let n = self.actions_per_match;
        if !(n.mean.is_finite() && n.mean >= 0.0 && n.spread.is_finite() && n.spread >= 0.0) {
            return bad(format!(
                "bad action count distribution (mean {}, spread {})",
                n.mean, n.spread
            ));
        }
        Ok(())
    }

    fn draw_location(&self, rng: &mut ChaCha8Rng) -> Result<Vec2> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut comp = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                comp = c;
                break;
            }
        }
        let nx = Normal::new(comp.mean.x, comp.sigma.x).expect("validated sigma");
        let ny = Normal::new(comp.mean.y, comp.sigma.y).expect("validated sigma");
        for _ in 0..MAX_REJECTIONS {
            let p = Vec2::new(round_cm(nx.sample(rng)), round_cm(ny.sample(rng)));
            if p.on_pitch() {
                return Ok(p);
            }
        }
        Err(Error::Config(format!(
            "team '{}': component at ({}, {}) has almost no mass on the pitch",
            self.name, comp.mean.x, comp.mean.y
        )))
    }
}

fn round_cm(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

impl SeasonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.teams.len() < 2 {
            return Err(Error::Config(format!(
                "need at least 2 teams, got {}",
                self.teams.len()
            )));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if self.actions.is_empty() {
            return Err(Error::Config("no action labels".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.teams {
            t.validate()?;
            if !names.insert(t.name.as_str()) {
                return Err(Error::Config(format!("duplicate team name '{}'", t.name)));
            }
        }
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: SeasonConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A 12-team league. `L` plays the average of the other eleven
    /// mixtures and `B` attacks mostly down the left (small x).
    pub fn example(seed: u64) -> Self {
        let count = CountDistribution {
            mean: 368.0,
            spread: 40.0,
        };
        let base = |dx: f64, sy: f64| {
            vec![
                component(0.30, (30.0 + dx, 25.0), (14.0, 10.0 * sy)),
                component(0.30, (35.0 + dx, 55.0), (16.0, 18.0 * sy)),
                component(0.25, (33.0 + dx, 88.0), (15.0, 8.0 * sy)),
                component(0.15, (35.0 + dx, 45.0), (22.0, 30.0)),
            ]
        };
        let variants = [
            ("A", -3.0, 1.0),
            ("C", -2.0, 1.2),
            ("D", -1.0, 0.9),
            ("E", 0.0, 1.1),
            ("F", 1.0, 1.0),
            ("G", 2.0, 0.8),
            ("H", 3.0, 1.0),
            ("I", 4.0, 1.2),
            ("J", -4.0, 0.9),
            ("K", 0.0, 0.8),
        ];
        let mut teams: Vec<TeamProfile> = variants
            .iter()
            .map(|&(name, dx, sy)| TeamProfile {
                name: name.into(),
                components: base(dx, sy),
                actions_per_match: count,
            })
            .collect();
        teams.push(TeamProfile {
            name: "B".into(),
            components: vec![
                component(0.35, (12.0, 28.0), (7.0, 12.0)),
                component(0.35, (14.0, 60.0), (8.0, 18.0)),
                component(0.30, (16.0, 88.0), (8.0, 9.0)),
            ],
            actions_per_match: count,
        });
        let share = 1.0 / teams.len() as f64;
        let average = teams
            .iter()
            .flat_map(|t| t.components.iter())
            .map(|c| MixtureComponent {
                weight: c.weight * share,
                ..c.clone()
            })
            .collect();
        teams.push(TeamProfile {
            name: "L".into(),
            components: average,
            actions_per_match: count,
        });
        teams.sort_by(|a, b| a.name.cmp(&b.name));
        SeasonConfig {
            teams,
            rounds: 1,
            seed,
            actions: default_actions(),
        }
    }
}

fn component(weight: f64, mean: (f64, f64), sigma: (f64, f64)) -> MixtureComponent {
    MixtureComponent {
        weight,
        mean: Vec2::new(mean.0, mean.1),
        sigma: Vec2::new(sigma.0, sigma.1),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for one fixture.
pub fn match_seed(seed: u64, round: usize, home: usize, away: usize) -> u64 {
    [round, home, away]
        .iter()
        .fold(splitmix64(seed), |h, &v| splitmix64(h ^ v as u64))
}

/// Every round, each ordered (home, away) pair plays once and both sides
/// attack. Events come out grouped by fixture in (round, home, away) order.
pub fn generate_season(cfg: &SeasonConfig) -> Result<Vec<EventRecord>> {
    cfg.validate()?;
    let n = cfg.teams.len();
    let fixtures: Vec<(usize, usize, usize)> = (0..cfg.rounds)
        .flat_map(|r| (0..n).flat_map(move |h| (0..n).filter(move |&a| a != h).map(move |a| (r, h, a))))
        .collect();
    let matches: Vec<Vec<EventRecord>> = fixtures
        .par_iter()
        .map(|&(r, h, a)| play_match(cfg, r, h, a))
        .collect::<Result<_>>()?;
    Ok(matches.into_iter().flatten().collect())
}

fn play_match(cfg: &SeasonConfig, round: usize, home: usize, away: usize) -> Result<Vec<EventRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(match_seed(cfg.seed, round, home, away));
    let counts = [home, away].map(|t| draw_count(cfg.teams[t].actions_per_match, &mut rng));
    let mut out = Vec::with_capacity(counts[0] + counts[1]);
    for (k, (att, def)) in [(home, away), (away, home)].into_iter().enumerate() {
        let team = &cfg.teams[att];
        for _ in 0..counts[k] {
            let p = team.draw_location(&mut rng)?;
            out.push(EventRecord {
                attacking_team: team.name.clone(),
                defending_team: cfg.teams[def].name.clone(),
                x: p.x,
                y: p.y,
                action: cfg.actions[rng.random_range(0..cfg.actions.len())].clone(),
            });
        }
    }
    Ok(out)
}

fn draw_count(dist: CountDistribution, rng: &mut ChaCha8Rng) -> usize {
    if dist.spread == 0.0 {
        return dist.mean.round() as usize;
    }
    let v: f64 = Normal::new(dist.mean, dist.spread)
        .expect("validated spread")
        .sample(rng);
    v.round().max(0.0) as usize
}

/// Writes events with the canonical header.
pub fn write_events_csv<W: Write>(writer: W, events: &[EventRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in events {
        w.serialize(e)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
