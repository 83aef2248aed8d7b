//! Reading and writing the four delimited input files.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    object_item_map, ActionVocabulary, Catalog, Dataset, PurchaseEvent, Session, UserProfile, UserRecord,
    DEMOGRAPHIC_FIELDS, ITEM_PREFIX,
};
use crate::error::{Error, Result};

const EVENT_COLUMNS: [&str; 6] = ["user_id", "session_id", "timestamp", "section", "object", "type"];
const PURCHASE_COLUMNS: [&str; 3] = ["user_id", "timestamp", "item_id"];
const CATALOG_COLUMNS: [&str; 2] = ["item_id", "base_item_id"];
const PORTFOLIO_PREFIX: &str = "portfolio_";
const GENDER_COLUMN: &str = "gender";
/// Reject reasons kept verbatim in the report; the rest are only counted.
const MAX_REASONS: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub events: PathBuf,
    pub purchases: PathBuf,
    pub profiles: PathBuf,
    pub catalog: PathBuf,
}

impl DatasetPaths {
    /// The conventional file names inside one directory.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let d = dir.as_ref();
        DatasetPaths {
            events: d.join("events.csv"),
            purchases: d.join("purchases.csv"),
            profiles: d.join("profiles.csv"),
            catalog: d.join("catalog.csv"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub event_rows: usize,
    pub purchase_rows: usize,
    pub profile_rows: usize,
    pub rejected_events: usize,
    pub rejected_purchases: usize,
    pub rejected_profiles: usize,
    pub reasons: Vec<String>,
}

impl IngestReport {
    pub fn rejected(&self) -> usize {
        self.rejected_events + self.rejected_purchases + self.rejected_profiles
    }

    fn reject(&mut self, file: &str, line: u64, why: String) {
        log::warn!("{file}:{line}: row rejected: {why}");
        if self.reasons.len() < MAX_REASONS {
            self.reasons.push(format!("{file}:{line}: {why}"));
        }
    }
}

/// Parses an ISO-8601 instant to UTC seconds. Values without an offset are
/// taken as UTC.
pub fn parse_timestamp(s: &str) -> Result<i64> {
    let s = s.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc().timestamp());
        }
    }
    Err(Error::InvalidArgument(format!("unparseable timestamp `{s}`")))
}

pub(crate) fn format_timestamp(t: i64) -> String {
    DateTime::<Utc>::from_timestamp(t, 0)
        .map(|d| d.to_rfc3339_opts(SecondsFormat::Secs, true))
        .unwrap_or_else(|| t.to_string())
}

struct Table {
    name: String,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn { file: self.name.clone(), column: name.to_string() })
    }
}

fn read_table(path: &Path, hasher: &mut Sha256, required: &[&str]) -> Result<Table> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(&bytes);
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers: Vec<String> = reader.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    let table = Table { name: path.display().to_string(), headers, rows };
    for c in required {
        table.column(c)?;
    }
    Ok(table)
}

fn field(rec: &csv::StringRecord, i: usize) -> &str {
    rec.get(i).unwrap_or("")
}

fn read_catalog(table: &Table) -> Result<Catalog> {
    let (ci, cb) = (table.column("item_id")?, table.column("base_item_id")?);
    let mut items = Vec::new();
    let mut bases = Vec::new();
    for (line, rec) in &table.rows {
        let item = field(rec, ci);
        if item.is_empty() {
            return Err(Error::InvalidArgument(format!("{}:{line}: empty item id", table.name)));
        }
        if items.iter().any(|i| i == item) {
            return Err(Error::InvalidArgument(format!("{}:{line}: duplicate item `{item}`", table.name)));
        }
        items.push(item.to_string());
        bases.push(field(rec, cb).to_string());
    }
    let coverage_of = bases
        .iter()
        .map(|b| {
            if b.is_empty() {
                Ok(None)
            } else {
                items
                    .iter()
                    .position(|i| i == b)
                    .map(Some)
                    .ok_or_else(|| Error::InvalidArgument(format!("base item `{b}` is not in the catalog")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Catalog::new(items, coverage_of)
}

struct RawEvent {
    user: String,
    session: String,
    time: i64,
    section: String,
    object: String,
    act_type: String,
}

/// Reads and validates the four files into a [`Dataset`]. Rows naming an
/// unknown item or carrying an unparseable value are dropped and counted;
/// missing files or columns are fatal, as is a dataset without sessions.
pub fn ingest(paths: &DatasetPaths) -> Result<Dataset> {
    let mut hasher = Sha256::new();
    let catalog_table = read_table(&paths.catalog, &mut hasher, &CATALOG_COLUMNS)?;
    let catalog = read_catalog(&catalog_table)?;
    if catalog.is_empty() {
        return Err(Error::EmptyDataset("catalog has no items".into()));
    }
    let item_index: HashMap<&str, usize> = catalog.items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut report = IngestReport::default();

    // Events
    let events = read_table(&paths.events, &mut hasher, &EVENT_COLUMNS)?;
    let cols: Vec<usize> = EVENT_COLUMNS.iter().map(|c| events.column(c)).collect::<Result<_>>()?;
    let mut raw = Vec::with_capacity(events.rows.len());
    for (line, rec) in &events.rows {
        report.event_rows += 1;
        let get = |k: usize| field(rec, cols[k]);
        let time = match parse_timestamp(get(2)) {
            Ok(t) => t,
            Err(e) => {
                report.rejected_events += 1;
                report.reject(&events.name, *line, e.to_string());
                continue;
            }
        };
        let object = get(4);
        if let Some(id) = object.strip_prefix(ITEM_PREFIX) {
            if !item_index.contains_key(id) {
                report.rejected_events += 1;
                report.reject(&events.name, *line, format!("unknown item `{id}`"));
                continue;
            }
        }
        if get(0).is_empty() || get(1).is_empty() || get(3).is_empty() || get(5).is_empty() {
            report.rejected_events += 1;
            report.reject(&events.name, *line, "empty field".into());
            continue;
        }
        raw.push(RawEvent {
            user: get(0).to_string(),
            session: get(1).to_string(),
            time,
            section: get(3).to_string(),
            object: object.to_string(),
            act_type: get(5).to_string(),
        });
    }
    let vocab = ActionVocabulary::from_counts(
        raw.iter().map(|e| e.section.as_str()),
        raw.iter().map(|e| e.object.as_str()),
        raw.iter().map(|e| e.act_type.as_str()),
    );

    let mut users: BTreeMap<String, UserRecord> = BTreeMap::new();
    let mut sessions: BTreeMap<(String, String), Vec<(usize, super::Action)>> = BTreeMap::new();
    for (order, e) in raw.iter().enumerate() {
        let a = vocab.encode(&e.section, &e.object, &e.act_type, e.time)?;
        sessions.entry((e.user.clone(), e.session.clone())).or_default().push((order, a));
    }
    for ((user, sid), mut acts) in sessions {
        acts.sort_by_key(|(order, a)| (a.timestamp, *order));
        let actions: Vec<_> = acts.into_iter().map(|(_, a)| a).collect();
        let rec = user_entry(&mut users, &user);
        rec.sessions.push(Session { id: sid, user: user.clone(), start: actions[0].timestamp, actions });
    }

    // Purchases
    let purchases = read_table(&paths.purchases, &mut hasher, &PURCHASE_COLUMNS)?;
    let cols: Vec<usize> = PURCHASE_COLUMNS.iter().map(|c| purchases.column(c)).collect::<Result<_>>()?;
    let mut grouped: BTreeMap<(String, i64), Vec<usize>> = BTreeMap::new();
    for (line, rec) in &purchases.rows {
        report.purchase_rows += 1;
        let time = match parse_timestamp(field(rec, cols[1])) {
            Ok(t) => t,
            Err(e) => {
                report.rejected_purchases += 1;
                report.reject(&purchases.name, *line, e.to_string());
                continue;
            }
        };
        let item = field(rec, cols[2]);
        let Some(&k) = item_index.get(item) else {
            report.rejected_purchases += 1;
            report.reject(&purchases.name, *line, format!("unknown item `{item}`"));
            continue;
        };
        let user = field(rec, cols[0]);
        if user.is_empty() {
            report.rejected_purchases += 1;
            report.reject(&purchases.name, *line, "empty user id".into());
            continue;
        }
        grouped.entry((user.to_string(), time)).or_default().push(k);
    }
    for ((user, time), mut items) in grouped {
        items.sort_unstable();
        items.dedup();
        user_entry(&mut users, &user).purchases.push(PurchaseEvent { user: user.clone(), time, items });
    }

    // Profiles
    let profiles = read_table(&paths.profiles, &mut hasher, &["user_id"])?;
    let uid = profiles.column("user_id")?;
    let demo_cols: Vec<usize> = DEMOGRAPHIC_FIELDS.iter().map(|c| profiles.column(c)).collect::<Result<_>>()?;
    let gender_col = profiles.headers.iter().position(|h| h == GENDER_COLUMN);
    let mut portfolio_cols = Vec::new();
    for (i, h) in profiles.headers.iter().enumerate() {
        if let Some(item) = h.strip_prefix(PORTFOLIO_PREFIX) {
            match item_index.get(item) {
                Some(&k) => portfolio_cols.push((i, k)),
                None => log::warn!("{}: ignoring portfolio column for unknown item `{item}`", profiles.name),
            }
        }
    }
    for (line, rec) in &profiles.rows {
        report.profile_rows += 1;
        let parsed: std::result::Result<Vec<f64>, String> = demo_cols
            .iter()
            .map(|&c| {
                let v = field(rec, c);
                v.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| format!("bad value `{v}`"))
            })
            .collect();
        let counts: std::result::Result<Vec<(usize, u32)>, String> = portfolio_cols
            .iter()
            .map(|&(c, k)| {
                let v = field(rec, c);
                if v.is_empty() {
                    Ok((k, 0))
                } else {
                    v.parse::<u32>().map(|n| (k, n)).map_err(|_| format!("bad portfolio count `{v}`"))
                }
            })
            .collect();
        let user = field(rec, uid);
        let (demographics, counts) = match (parsed, counts) {
            (Ok(d), Ok(c)) if !user.is_empty() => (d, c),
            (Err(e), _) | (_, Err(e)) => {
                report.rejected_profiles += 1;
                report.reject(&profiles.name, *line, e);
                continue;
            }
            _ => {
                report.rejected_profiles += 1;
                report.reject(&profiles.name, *line, "empty user id".into());
                continue;
            }
        };
        let mut portfolio = vec![0u32; catalog.len()];
        for (k, n) in counts {
            portfolio[k] = n;
        }
        let gender = gender_col.map(|c| field(rec, c).to_string()).filter(|g| !g.is_empty());
        // Profiles of users with no logged activity carry no information.
        if let Some(u) = users.get_mut(user) {
            u.profile = Some(UserProfile { demographics, portfolio, gender });
        }
    }

    let mut users: Vec<UserRecord> = users.into_values().collect();
    for u in &mut users {
        u.sessions.sort_by(|a, b| a.start.cmp(&b.start).then_with(|| a.id.cmp(&b.id)));
    }
    if users.iter().all(|u| u.sessions.is_empty()) {
        return Err(Error::EmptyDataset("no sessions after ingestion".into()));
    }
    let object_items = object_item_map(&vocab, &catalog);
    let source_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    log::info!("ingested {} users, {} rows rejected", users.len(), report.rejected());
    Ok(Dataset { users, catalog, vocab, object_items, report, source_hash })
}

fn user_entry<'a>(users: &'a mut BTreeMap<String, UserRecord>, u: &str) -> &'a mut UserRecord {
    users.entry(u.to_string()).or_insert_with(|| UserRecord {
        id: u.to_string(),
        sessions: Vec::new(),
        purchases: Vec::new(),
        profile: None,
    })
}

/// Writes `dataset` in the four-file layout read by [`ingest`].
pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    let csv_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| Error::Csv { path: p.clone(), source }
    };
    let open = |p: &Path| csv::Writer::from_path(p).map_err(csv_err(p));
    let flush = |mut w: csv::Writer<fs::File>, p: &Path| w.flush().map_err(|e| Error::io(p, e));

    let mut w = open(&paths.catalog)?;
    w.write_record(CATALOG_COLUMNS).map_err(csv_err(&paths.catalog))?;
    for (item, base) in dataset.catalog.items.iter().zip(&dataset.catalog.coverage_of) {
        let base = base.map(|b| dataset.catalog.items[b].as_str()).unwrap_or("");
        w.write_record([item.as_str(), base]).map_err(csv_err(&paths.catalog))?;
    }
    flush(w, &paths.catalog)?;

    let v = &dataset.vocab;
    let mut w = open(&paths.events)?;
    w.write_record(EVENT_COLUMNS).map_err(csv_err(&paths.events))?;
    for u in &dataset.users {
        for s in &u.sessions {
            for a in &s.actions {
                w.write_record([
                    u.id.as_str(),
                    s.id.as_str(),
                    &format_timestamp(a.timestamp),
                    &v.sections[a.section as usize],
                    &v.objects[a.object as usize],
                    &v.types[a.act_type as usize],
                ])
                .map_err(csv_err(&paths.events))?;
            }
        }
    }
    flush(w, &paths.events)?;

    let mut w = open(&paths.purchases)?;
    w.write_record(PURCHASE_COLUMNS).map_err(csv_err(&paths.purchases))?;
    for u in &dataset.users {
        for p in &u.purchases {
            for &k in &p.items {
                w.write_record([u.id.as_str(), &format_timestamp(p.time), &dataset.catalog.items[k]])
                    .map_err(csv_err(&paths.purchases))?;
            }
        }
    }
    flush(w, &paths.purchases)?;

    let with_gender = dataset.users.iter().any(|u| u.profile.as_ref().is_some_and(|p| p.gender.is_some()));
    let mut header: Vec<String> =
        std::iter::once("user_id".to_string()).chain(DEMOGRAPHIC_FIELDS.iter().map(|s| s.to_string())).collect();
    if with_gender {
        header.push(GENDER_COLUMN.into());
    }
    header.extend(dataset.catalog.items.iter().map(|i| format!("{PORTFOLIO_PREFIX}{i}")));
    let mut w = open(&paths.profiles)?;
    w.write_record(&header).map_err(csv_err(&paths.profiles))?;
    for u in &dataset.users {
        let Some(p) = &u.profile else { continue };
        let mut row = vec![u.id.clone()];
        row.extend(p.demographics.iter().map(|x| x.to_string()));
        if with_gender {
            row.push(p.gender.clone().unwrap_or_default());
        }
        row.extend(p.portfolio.iter().map(|n| n.to_string()));
        w.write_record(&row).map_err(csv_err(&paths.profiles))?;
    }
    flush(w, &paths.profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    fn fixture(dir: &Path, events: &str) -> DatasetPaths {
        write(dir, "catalog.csv", "item_id,base_item_id\ncar,\nroadside,car\n");
        write(dir, "events.csv", events);
        write(dir, "purchases.csv", "user_id,timestamp,item_id\nu1,2020-01-03T00:00:00Z,car\n");
        write(
            dir,
            "profiles.csv",
            "user_id,age,employment,income,residence,marital,children,education,portfolio_car\n\
             u1,40,1,3,2,1,0,2,1\n",
        );
        DatasetPaths::in_dir(dir)
    }

    const THREE: &str = "user_id,session_id,timestamp,section,object,type\n\
        u1,s1,2020-01-01T10:00:00Z,ecommerce,item:car,click\n\
        u1,s1,2020-01-01T10:01:00Z,info,none,click\n\
        u1,s1,2020-01-01T10:02:00Z,ecommerce,item:car,start\n";

    #[test]
    fn three_row_session() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(&fixture(dir.path(), THREE)).unwrap();
        let st = ds.stats();
        assert_eq!((st.users, st.sessions, st.actions, st.purchase_events), (1, 1, 3, 1));
        assert_eq!(ds.report.rejected(), 0);
        assert_eq!(ds.vocab.sections, vec!["ecommerce", "info"]);
        assert_eq!(ds.object_items, vec![Some(0), None]);
        assert_eq!(ds.users[0].profile.as_ref().unwrap().portfolio, vec![1, 0]);
    }

    #[test]
    fn unknown_item_row_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let events = format!("{THREE}u1,s1,2020-01-01T10:03:00Z,ecommerce,item:boat,click\n");
        let ds = ingest(&fixture(dir.path(), &events)).unwrap();
        assert_eq!(ds.report.rejected_events, 1);
        assert_eq!(ds.stats().actions, 3);
    }

    #[test]
    fn missing_file_and_empty_dataset_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let paths = fixture(dir.path(), THREE);
        fs::remove_file(&paths.purchases).unwrap();
        assert!(matches!(ingest(&paths), Err(Error::Io { .. })));
        let paths = fixture(dir.path(), "user_id,session_id,timestamp,section,object,type\n");
        assert!(matches!(ingest(&paths), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let a = ingest(&fixture(dir.path(), THREE)).unwrap();
        let out = tempfile::tempdir().unwrap();
        let paths = DatasetPaths::in_dir(out.path());
        write_dataset(&a, &paths).unwrap();
        let b = ingest(&paths).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.vocab, b.vocab);
        assert_eq!(a.catalog, b.catalog);
        let c = ingest(&paths).unwrap();
        assert_eq!(b, c);
    }

    #[test]
    fn timestamps() {
        assert_eq!(parse_timestamp("1970-01-02T00:00:00Z").unwrap(), 86_400);
        assert_eq!(parse_timestamp("1970-01-01T01:00:00+01:00").unwrap(), 0);
        assert_eq!(parse_timestamp("1970-01-01 00:01:00").unwrap(), 60);
        assert!(parse_timestamp("yesterday").is_err());
        assert_eq!(format_timestamp(86_400), "1970-01-02T00:00:00Z");
    }
}
