//! Event CSV parsing, attacking-action filtering and subset partitioning.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{SampleSet, Vec2, PITCH_X, PITCH_Y};
use crate::numeric::CountSummary;

/// One located on-ball action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub attacking_team: String,
    pub defending_team: String,
    pub x: f64,
    pub y: f64,
    pub action: String,
}

impl EventRecord {
    pub fn location(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    fn check(&self) -> std::result::Result<(), RejectKind> {
        if self.attacking_team.is_empty() || self.defending_team.is_empty() {
            return Err(RejectKind::MissingTeam);
        }
        if self.attacking_team == self.defending_team {
            return Err(RejectKind::SameTeam {
                team: self.attacking_team.clone(),
            });
        }
        if !self.location().on_pitch() {
            return Err(RejectKind::OutOfBounds { x: self.x, y: self.y });
        }
        Ok(())
    }
}

/// Source column names for each canonical field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMapping {
    pub attacking_team: String,
    pub defending_team: String,
    pub x: String,
    pub y: String,
    pub action: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            attacking_team: "attacking_team".into(),
            defending_team: "defending_team".into(),
            x: "x".into(),
            y: "y".into(),
            action: "action".into(),
        }
    }
}

/// Why a CSV row was not turned into a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectKind {
    BadNumber { column: String, value: String },
    OutOfBounds { x: f64, y: f64 },
    MissingTeam,
    SameTeam { team: String },
    ShortRow { fields: usize },
}

impl fmt::Display for RejectKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectKind::BadNumber { column, value } => {
                write!(f, "column '{column}': cannot parse '{value}' as a number")
            }
            RejectKind::OutOfBounds { x, y } => write!(
                f,
                "location ({x}, {y}) outside x in [{}, {}], y in [{}, {}]",
                PITCH_X.0, PITCH_X.1, PITCH_Y.0, PITCH_Y.1
            ),
            RejectKind::MissingTeam => write!(f, "empty team name"),
            RejectKind::SameTeam { team } => write!(f, "'{team}' is both attacking and defending"),
            RejectKind::ShortRow { fields } => write!(f, "row has only {fields} fields"),
        }
    }
}

/// A rejected row; `line` is the 1-based line number in the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    pub line: u64,
    #[serde(flatten)]
    pub kind: RejectKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub records: Vec<EventRecord>,
    pub rejected: Vec<RowError>,
}

pub fn parse_events(path: &Path, mapping: &ColumnMapping) -> Result<ParseReport> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events_from_reader(file, mapping)
}

/// Parses CSV with a header row. Row order is preserved; bad rows are
/// collected in the report rather than failing the whole file.
pub fn parse_events_from_reader<R: Read>(reader: R, mapping: &ColumnMapping) -> Result<ParseReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let wanted = [
        &mapping.attacking_team,
        &mapping.defending_team,
        &mapping.x,
        &mapping.y,
        &mapping.action,
    ];
    let missing: Vec<&str> = wanted
        .iter()
        .filter(|c| find(c).is_none())
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing column(s) {}; header is [{}]",
            missing.join(", "),
            headers.iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let idx: Vec<usize> = wanted.iter().map(|c| find(c).unwrap()).collect();
    let needed = idx.iter().max().unwrap() + 1;

    let mut report = ParseReport::default();
    let mut row = csv::StringRecord::new();
    while rdr.read_record(&mut row)? {
        let line = row.position().map_or(0, |p| p.line());
        if row.len() < needed {
            report.rejected.push(RowError {
                line,
                kind: RejectKind::ShortRow { fields: row.len() },
            });
            continue;
        }
        let number = |k: usize, column: &str| {
            let raw = &row[idx[k]];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| RejectKind::BadNumber {
                    column: column.to_string(),
                    value: raw.to_string(),
                })
        };
        let parsed = number(2, &mapping.x).and_then(|x| {
            let y = number(3, &mapping.y)?;
            let rec = EventRecord {
                attacking_team: row[idx[0]].to_string(),
                defending_team: row[idx[1]].to_string(),
                x,
                y,
                action: row[idx[4]].to_string(),
            };
            rec.check()?;
            Ok(rec)
        });
        match parsed {
            Ok(rec) => report.records.push(rec),
            Err(kind) => report.rejected.push(RowError { line, kind }),
        }
    }
    Ok(report)
}

/// Which actions count as attacking, and whether to drop repeated locations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FilterPolicy {
    allowed_actions: BTreeSet<String>,
    drop_consecutive_duplicates: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        FilterPolicy {
            allowed_actions: ["Catch", "Run", "Pass", "Kick"].into_iter().map(String::from).collect(),
            drop_consecutive_duplicates: true,
        }
    }
}

impl FilterPolicy {
    pub fn new<I, S>(allowed_actions: I, drop_consecutive_duplicates: bool) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let allowed_actions: BTreeSet<String> = allowed_actions.into_iter().map(Into::into).collect();
        if allowed_actions.is_empty() {
            return Err(Error::Config("filter policy allows no actions".into()));
        }
        Ok(FilterPolicy {
            allowed_actions,
            drop_consecutive_duplicates,
        })
    }

    pub fn allowed_actions(&self) -> &BTreeSet<String> {
        &self.allowed_actions
    }

    pub fn drop_consecutive_duplicates(&self) -> bool {
        self.drop_consecutive_duplicates
    }
}

impl<'de> Deserialize<'de> for FilterPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            allowed_actions: Option<BTreeSet<String>>,
            drop_consecutive_duplicates: Option<bool>,
        }
        let raw = Raw::deserialize(d)?;
        let default = FilterPolicy::default();
        FilterPolicy::new(
            raw.allowed_actions.unwrap_or(default.allowed_actions),
            raw.drop_consecutive_duplicates
                .unwrap_or(default.drop_consecutive_duplicates),
        )
        .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub input: usize,
    pub kept: usize,
    /// Dropped rows per disallowed action name.
    pub dropped_by_action: BTreeMap<String, usize>,
    pub dropped_duplicates: usize,
}

/// Keeps allowed actions in order, optionally dropping a row whose
/// (attacking team, x, y) repeats the previous kept row.
pub fn filter_attacking(events: &[EventRecord], policy: &FilterPolicy) -> (Vec<EventRecord>, FilterSummary) {
    let mut kept: Vec<EventRecord> = Vec::with_capacity(events.len());
    let mut summary = FilterSummary {
        input: events.len(),
        ..Default::default()
    };
    for ev in events {
        if !policy.allowed_actions.contains(&ev.action) {
            *summary.dropped_by_action.entry(ev.action.clone()).or_default() += 1;
            continue;
        }
        if policy.drop_consecutive_duplicates {
            if let Some(prev) = kept.last() {
                if prev.attacking_team == ev.attacking_team && prev.x == ev.x && prev.y == ev.y {
                    summary.dropped_duplicates += 1;
                    continue;
                }
            }
        }
        kept.push(ev.clone());
    }
    summary.kept = kept.len();
    (kept, summary)
}

/// Identifies one subset of the filtered events.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionKey {
    League,
    Team { team: String },
    TeamVsOpponent { team: String, opponent: String },
}

impl PartitionKey {
    pub fn team(&self) -> Option<&str> {
        match self {
            PartitionKey::League => None,
            PartitionKey::Team { team } | PartitionKey::TeamVsOpponent { team, .. } => Some(team),
        }
    }

    pub fn opponent(&self) -> Option<&str> {
        match self {
            PartitionKey::TeamVsOpponent { opponent, .. } => Some(opponent),
            _ => None,
        }
    }

    /// File-name friendly identifier, e.g. `team__st-helens__vs__salford`.
    pub fn slug(&self) -> String {
        match self {
            PartitionKey::League => "league".into(),
            PartitionKey::Team { team } => format!("team__{}", slugify(team)),
            PartitionKey::TeamVsOpponent { team, opponent } => {
                format!("team__{}__vs__{}", slugify(team), slugify(opponent))
            }
        }
    }
}

impl fmt::Display for PartitionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionKey::League => write!(f, "league"),
            PartitionKey::Team { team } => write!(f, "{team}"),
            PartitionKey::TeamVsOpponent { team, opponent } => write!(f, "{team} vs {opponent}"),
        }
    }
}

fn slugify(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for c in name.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

/// League, per-team and per-pairing sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub teams: Vec<String>,
    pub subsets: BTreeMap<PartitionKey, SampleSet>,
    /// Subsets that were omitted because they had no actions.
    pub notices: Vec<String>,
}

impl Partition {
    pub fn get(&self, key: &PartitionKey) -> Option<&SampleSet> {
        self.subsets.get(key)
    }

    pub fn league(&self) -> Option<&SampleSet> {
        self.subsets.get(&PartitionKey::League)
    }

    /// Size summaries at the team level and the team-vs-opponent level.
    pub fn count_summaries(&self) -> (Option<CountSummary>, Option<CountSummary>) {
        let mut between = Vec::new();
        let mut within = Vec::new();
        for (k, s) in &self.subsets {
            match k {
                PartitionKey::League => {}
                PartitionKey::Team { .. } => between.push(s.len()),
                PartitionKey::TeamVsOpponent { .. } => within.push(s.len()),
            }
        }
        (CountSummary::from_counts(&between), CountSummary::from_counts(&within))
    }
}

/// Splits events into 1 league set, one set per attacking team and one
/// per ordered (team, opponent) pair. Teams are every name seen in either
/// team column; empty subsets are left out with a notice.
pub fn partition(events: &[EventRecord]) -> Result<Partition> {
    if events.is_empty() {
        return Err(Error::EmptyInput("no events to partition".into()));
    }
    let teams: BTreeSet<&str> = events
        .iter()
        .flat_map(|e| [e.attacking_team.as_str(), e.defending_team.as_str()])
        .collect();
    let mut buckets: BTreeMap<PartitionKey, Vec<Vec2>> = BTreeMap::new();
    buckets.insert(PartitionKey::League, events.iter().map(EventRecord::location).collect());
    for &t in &teams {
        buckets.insert(PartitionKey::Team { team: t.into() }, Vec::new());
        for &o in &teams {
            if o != t {
                buckets.insert(
                    PartitionKey::TeamVsOpponent {
                        team: t.into(),
                        opponent: o.into(),
                    },
                    Vec::new(),
                );
            }
        }
    }
    for e in events {
        let p = e.location();
        let team = PartitionKey::Team {
            team: e.attacking_team.clone(),
        };
        buckets.get_mut(&team).expect("team key").push(p);
        let pair = PartitionKey::TeamVsOpponent {
            team: e.attacking_team.clone(),
            opponent: e.defending_team.clone(),
        };
        buckets.get_mut(&pair).expect("pair key").push(p);
    }

    let mut subsets = BTreeMap::new();
    let mut notices = Vec::new();
    for (key, points) in buckets {
        if points.is_empty() {
            let msg = format!("subset '{key}' has no actions and is omitted");
            log::warn!("{msg}");
            notices.push(msg);
            continue;
        }
        let set = SampleSet::new(key.to_string(), points)?;
        subsets.insert(key, set);
    }
    Ok(Partition {
        teams: teams.into_iter().map(String::from).collect(),
        subsets,
        notices,
    })
}

/// Column mapping and filter policy, as read from an ingest config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub columns: ColumnMapping,
    pub filter: FilterPolicy,
}

impl IngestConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetEntry {
    pub key: PartitionKey,
    pub file: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub input: PathBuf,
    pub parsed: usize,
    pub rejected: Vec<RowError>,
    pub filter: FilterSummary,
    pub teams: Vec<String>,
    pub between_team: Option<CountSummary>,
    pub within_team: Option<CountSummary>,
    pub subsets: Vec<SubsetEntry>,
    pub notices: Vec<String>,
}

/// Parse, filter and partition `input`, then write `<slug>.csv` per subset
/// and `manifest.json` into `out_dir`.
pub fn run_ingest(input: &Path, config: &IngestConfig, out_dir: &Path) -> Result<IngestManifest> {
    let report = parse_events(input, &config.columns)?;
    let (kept, filter) = filter_attacking(&report.records, &config.filter);
    let part = partition(&kept)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut subsets = Vec::with_capacity(part.subsets.len());
    for (key, set) in &part.subsets {
        let file = format!("{}.csv", key.slug());
        write_samples_csv(&out_dir.join(&file), set)?;
        subsets.push(SubsetEntry {
            key: key.clone(),
            file,
            size: set.len(),
        });
    }
    let (between_team, within_team) = part.count_summaries();
    let manifest = IngestManifest {
        input: input.to_path_buf(),
        parsed: report.records.len(),
        rejected: report.rejected,
        filter,
        teams: part.teams,
        between_team,
        within_team,
        subsets,
        notices: part.notices,
    };
    let path = out_dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Writes a sample set as `x,y` rows.
pub fn write_samples_csv(path: &Path, samples: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for p in samples.points() {
        w.write_record([p.x.to_string(), p.y.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads an `x,y` sample CSV (extra columns are ignored).
pub fn read_samples_csv(path: &Path, label: &str) -> Result<SampleSet> {
    #[derive(Deserialize)]
    struct Row {
        x: f64,
        y: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut points = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        points.push(Vec2::new(r.x, r.y));
    }
    SampleSet::new(label, points)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE_POSSESSION: &str = "\
attacking_team,defending_team,x,y,action
St Helens,Salford,9,4,Catch
St Helens,Salford,9,6,Run
St Helens,Salford,14,11,Pass
St Helens,Salford,22,13,Pass
St Helens,Salford,12,12,Run
St Helens,Salford,37,16,Run
St Helens,Salford,36,24,Run
St Helens,Salford,54,35,Kick
";

    fn parse(text: &str) -> ParseReport {
        parse_events_from_reader(text.as_bytes(), &ColumnMapping::default()).unwrap()
    }

    fn ev(team: &str, opp: &str, x: f64, y: f64, action: &str) -> EventRecord {
        EventRecord {
            attacking_team: team.into(),
            defending_team: opp.into(),
            x,
            y,
            action: action.into(),
        }
    }

    #[test]
    fn sample_possession_parses_and_survives_filtering() {
        let r = parse(SAMPLE_POSSESSION);
        assert!(r.rejected.is_empty());
        assert_eq!(r.records.len(), 8);
        assert_eq!(r.records[0], ev("St Helens", "Salford", 9.0, 4.0, "Catch"));
        let (kept, summary) = filter_attacking(&r.records, &FilterPolicy::default());
        assert_eq!(kept.len(), 8);
        assert_eq!(summary.dropped_duplicates, 0);
    }

    #[test]
    fn header_only_is_empty() {
        let r = parse("attacking_team,defending_team,x,y,action\n");
        assert!(r.records.is_empty() && r.rejected.is_empty());
    }

    #[test]
    fn bad_rows_are_reported_with_line_numbers() {
        let r = parse(
            "attacking_team,defending_team,x,y,action\n\
             A,B,71,5,Run\n\
             A,B,1,5,Run\n\
             A,B,abc,5,Run\n\
             A,A,1,5,Run\n\
             A,B,1\n",
        );
        assert_eq!(r.records.len(), 1);
        let lines: Vec<u64> = r.rejected.iter().map(|e| e.line).collect();
        assert_eq!(lines, [2, 4, 5, 6]);
        assert_eq!(r.rejected[0].kind, RejectKind::OutOfBounds { x: 71.0, y: 5.0 });
        assert!(matches!(r.rejected[1].kind, RejectKind::BadNumber { .. }));
        assert!(matches!(r.rejected[2].kind, RejectKind::SameTeam { .. }));
        assert!(matches!(r.rejected[3].kind, RejectKind::ShortRow { fields: 3 }));
    }

    #[test]
    fn missing_column_is_a_schema_error() {
        let err = parse_events_from_reader("team,x,y\nA,1,2\n".as_bytes(), &ColumnMapping::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn column_mapping_renames() {
        let mapping: ColumnMapping =
            serde_json::from_str(r#"{"attacking_team": "att", "defending_team": "def", "action": "type"}"#).unwrap();
        let r = parse_events_from_reader("type,def,att,y,x\nRun,B,A,20,10\n".as_bytes(), &mapping).unwrap();
        assert_eq!(r.records, vec![ev("A", "B", 10.0, 20.0, "Run")]);
    }

    #[test]
    fn consecutive_duplicate_is_dropped() {
        let events = vec![
            ev("A", "B", 5.0, 5.0, "Catch"),
            ev("A", "B", 5.0, 5.0, "Run"),
            ev("A", "B", 6.0, 5.0, "Run"),
            ev("A", "B", 5.0, 5.0, "Pass"),
            ev("A", "B", 5.0, 5.0, "Tackle"),
            ev("C", "B", 5.0, 5.0, "Run"),
        ];
        let (kept, s) = filter_attacking(&events, &FilterPolicy::default());
        assert_eq!(kept.len(), 4);
        assert_eq!(s.dropped_duplicates, 1);
        assert_eq!(s.dropped_by_action.get("Tackle"), Some(&1));
        let (again, _) = filter_attacking(&kept, &FilterPolicy::default());
        assert_eq!(again, kept);

        let all = FilterPolicy::new(["Catch", "Run", "Pass", "Tackle"], true).unwrap();
        let distinct: Vec<_> = (0..5).map(|i| ev("A", "B", i as f64, 0.0, "Tackle")).collect();
        assert_eq!(filter_attacking(&distinct, &all).0.len(), 5);
    }

    #[test]
    fn policy_needs_actions() {
        assert!(FilterPolicy::new(Vec::<String>::new(), true).is_err());
        assert!(serde_json::from_str::<FilterPolicy>(r#"{"allowed_actions": []}"#).is_err());
        let p: FilterPolicy = serde_json::from_str(r#"{"drop_consecutive_duplicates": false}"#).unwrap();
        assert_eq!(p.allowed_actions().len(), 4);
    }

    #[test]
    fn partition_counts() {
        let events = vec![
            ev("A", "B", 1.0, 1.0, "Run"),
            ev("B", "A", 2.0, 2.0, "Run"),
            ev("A", "B", 3.0, 3.0, "Run"),
        ];
        let p = partition(&events).unwrap();
        assert_eq!(p.subsets.len(), 5);
        assert_eq!(p.league().unwrap().len(), 3);
        assert_eq!(p.get(&PartitionKey::Team { team: "A".into() }).unwrap().len(), 2);

        // C never attacks and B never meets C: C, C vs A, C vs B and B vs C are omitted.
        let mut three = events.clone();
        three.push(ev("A", "C", 4.0, 4.0, "Run"));
        let p = partition(&three).unwrap();
        assert_eq!(p.teams, ["A", "B", "C"]);
        assert_eq!(p.subsets.len(), 1 + 2 + 3);
        assert_eq!(p.notices.len(), 4);
        assert!(partition(&[]).is_err());
    }

    #[test]
    fn slugs() {
        let k = PartitionKey::TeamVsOpponent {
            team: "St Helens".into(),
            opponent: "Hull K.R.".into(),
        };
        assert_eq!(k.slug(), "team__st-helens__vs__hull-k-r");
        assert_eq!(PartitionKey::League.slug(), "league");
        let json = serde_json::to_string(&k).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"team_vs_opponent","team":"St Helens","opponent":"Hull K.R."}"#
        );
    }
}
