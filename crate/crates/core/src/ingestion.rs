// Copyright The ctxrec Authors.
// SPDX-License-Identifier: Apache-2.0

//! Access-log and item-catalog readers, temporal context derivation and
//! sessionization.
//!
//! Both inputs are plain comma-separated UTF-8 without quoting. A row with
//! more fields than the header (an embedded comma) is rejected.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use chrono::{DateTime, Datelike, NaiveDateTime, Timelike, Utc, Weekday};
use serde::{Deserialize, Serialize};

use crate::domain::{is_virtual, Access, Catalog, ItemId};
use crate::error::{Error, Result};

pub const TEMPORAL_DIMENSIONS: &[&str] = &["day", "month", "week_day", "work_day", "hour", "work_hour"];

pub const DEFAULT_SESSION_GAP_SECONDS: i64 = 1800;

/// Working hours are `[WORK_START, WORK_END)` in UTC hours.
const WORK_START: u32 = 8;
const WORK_END: u32 = 18;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct AccessLog {
    pub accesses: Vec<Access>,
    pub row_errors: Vec<RowError>,
    pub warnings: Vec<String>,
}

struct Columns {
    width: usize,
    session: usize,
    user: usize,
    item: usize,
    timestamp: Option<usize>,
    context: Vec<(usize, String)>,
}

fn parse_header(header: &str, warnings: &mut Vec<String>) -> Result<Columns> {
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let find = |name: &'static str| names.iter().position(|n| *n == name).ok_or(Error::MissingColumn(name));
    let session = find("session_id")?;
    let user = find("user_id")?;
    let item = find("item_id")?;
    let timestamp = names.iter().position(|n| *n == "timestamp");
    let mut context = Vec::new();
    for (pos, name) in names.iter().enumerate() {
        if let Some(dim) = name.strip_prefix("ctx_") {
            if dim.is_empty() || dim.contains('=') {
                warnings.push(format!("column `{name}` is not a valid context dimension; ignored"));
            } else {
                context.push((pos, dim.to_owned()));
            }
        } else if ![session, user, item].contains(&pos) && Some(pos) != timestamp {
            warnings.push(format!("unknown column `{name}` ignored"));
        }
    }
    Ok(Columns {
        width: names.len(),
        session,
        user,
        item,
        timestamp,
        context,
    })
}

/// Parses an access timestamp given as integer epoch seconds or ISO-8601.
/// Timestamps without an offset are read as UTC.
pub fn parse_timestamp(raw: &str) -> Option<i64> {
    let raw = raw.trim();
    if let Ok(secs) = raw.parse::<i64>() {
        return Some(secs);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.timestamp());
    }
    [
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
    ]
    .iter()
    .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
    .map(|naive| naive.and_utc().timestamp())
}

/// Reads an access log. Rows with bad fields are skipped and reported in
/// `row_errors`; a missing mandatory column or a reserved item id is fatal.
pub fn parse_access_log<R: BufRead>(input: R) -> Result<AccessLog> {
    let mut log = AccessLog::default();
    let mut lines = input.lines().enumerate();
    let columns = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break parse_header(&line, &mut log.warnings)?;
                }
            }
            None => return Err(Error::EmptyInput),
        }
    };

    for (index, line) in lines {
        let line = line?;
        let line_no = index + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let mut reject = |message: String| log.row_errors.push(RowError { line: line_no, message });
        if fields.len() != columns.width {
            reject(format!("expected {} fields, found {}", columns.width, fields.len()));
            continue;
        }
        if fields.iter().any(|f| f.contains('\t')) {
            reject("fields must not contain tabs".into());
            continue;
        }
        let session_id = fields[columns.session].trim();
        let user_id = fields[columns.user].trim();
        let item_id = fields[columns.item].trim();
        if session_id.is_empty() || user_id.is_empty() || item_id.is_empty() {
            reject("empty session_id, user_id or item_id".into());
            continue;
        }
        if is_virtual(item_id) {
            return Err(Error::ReservedItemId {
                line: line_no,
                id: item_id.to_owned(),
            });
        }
        let timestamp = match columns.timestamp.map(|pos| fields[pos].trim()) {
            None | Some("") => None,
            Some(raw) => match parse_timestamp(raw) {
                Some(ts) => Some(ts),
                None => {
                    reject(format!("malformed timestamp `{raw}`"));
                    continue;
                }
            },
        };
        let raw_context = columns
            .context
            .iter()
            .filter_map(|(pos, name)| {
                let value = fields[*pos].trim();
                (!value.is_empty()).then(|| (name.clone(), value.to_owned()))
            })
            .collect();
        log.accesses.push(Access {
            session_id: session_id.to_owned(),
            user_id: user_id.to_owned(),
            item: ItemId::new(item_id)?,
            timestamp,
            raw_context,
        });
    }
    Ok(log)
}

#[derive(Debug, Clone, Default)]
pub struct CatalogLoad {
    pub catalog: Catalog,
    pub warnings: Vec<String>,
}

/// Reads a long-format `item_id,attribute,value` catalog. Later rows win.
pub fn load_item_catalog<R: BufRead>(input: R) -> Result<CatalogLoad> {
    let mut out = CatalogLoad::default();
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if !line.trim().is_empty() {
                    break line;
                }
            }
            None => return Err(Error::CatalogHeader(String::new())),
        }
    };
    let names: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    if names != ["item_id", "attribute", "value"] {
        return Err(Error::CatalogHeader(header.trim_end().to_owned()));
    }

    for (index, line) in lines {
        let line = line?;
        let line_no = index + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [item, attribute, value] = fields[..] else {
            out.warnings
                .push(format!("line {line_no}: expected 3 fields; row skipped"));
            continue;
        };
        let item = match ItemId::new(item) {
            Ok(item) => item,
            Err(err) => {
                out.warnings.push(format!("line {line_no}: {err}; row skipped"));
                continue;
            }
        };
        if attribute.is_empty() || attribute.contains('=') || value.is_empty() || value.contains('\t') {
            out.warnings
                .push(format!("line {line_no}: invalid attribute or value; row skipped"));
            continue;
        }
        let attrs = out.catalog.entry(item.clone()).or_default();
        if let Some(old) = attrs.insert(attribute.to_owned(), value.to_owned()) {
            out.warnings.push(format!(
                "line {line_no}: `{item}` attribute `{attribute}` overwritten (`{old}` -> `{value}`)"
            ));
        }
    }
    Ok(out)
}

fn weekday_name(day: Weekday) -> &'static str {
    match day {
        Weekday::Mon => "Monday",
        Weekday::Tue => "Tuesday",
        Weekday::Wed => "Wednesday",
        Weekday::Thu => "Thursday",
        Weekday::Fri => "Friday",
        Weekday::Sat => "Saturday",
        Weekday::Sun => "Sunday",
    }
}

/// Derives the temporal dimensions of an instant, in UTC.
///
/// Numeric values are two-digit zero-padded strings; hours run 00..23.
pub fn derive_temporal_contexts(timestamp: i64) -> Result<BTreeMap<&'static str, String>> {
    let dt: DateTime<Utc> = DateTime::from_timestamp(timestamp, 0)
        .ok_or_else(|| Error::Config(format!("timestamp {timestamp} is out of range")))?;
    let weekday = dt.weekday();
    let weekend = matches!(weekday, Weekday::Sat | Weekday::Sun);
    let hour = dt.hour();
    Ok(BTreeMap::from([
        ("day", format!("{:02}", dt.day())),
        ("month", format!("{:02}", dt.month())),
        ("week_day", weekday_name(weekday).to_owned()),
        ("work_day", if weekend { "weekend" } else { "weekday" }.to_owned()),
        ("hour", format!("{hour:02}")),
        (
            "work_hour",
            if (WORK_START..WORK_END).contains(&hour) {
                "work"
            } else {
                "nonwork"
            }
            .to_owned(),
        ),
    ]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sessionization {
    /// Group on the session id column.
    #[default]
    BySessionId,
    /// Split each user's time-ordered accesses where the gap exceeds the limit.
    ByUserTimeout { gap_seconds: i64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionGroup {
    pub session_id: String,
    pub user_id: String,
    pub accesses: Vec<Access>,
}

/// Groups accesses into sessions. Groups come out in order of first access.
pub fn sessionize(accesses: &[Access], mode: Sessionization) -> Result<Vec<SessionGroup>> {
    match mode {
        Sessionization::BySessionId => {
            let mut position: HashMap<&str, usize> = HashMap::new();
            let mut groups: Vec<SessionGroup> = Vec::new();
            for access in accesses {
                let pos = *position.entry(&access.session_id).or_insert_with(|| {
                    groups.push(SessionGroup {
                        session_id: access.session_id.clone(),
                        user_id: access.user_id.clone(),
                        accesses: Vec::new(),
                    });
                    groups.len() - 1
                });
                groups[pos].accesses.push(access.clone());
            }
            Ok(groups)
        }
        Sessionization::ByUserTimeout { gap_seconds } => {
            let mut users: Vec<(&str, Vec<(i64, &Access)>)> = Vec::new();
            let mut position: HashMap<&str, usize> = HashMap::new();
            for (index, access) in accesses.iter().enumerate() {
                let ts = access.timestamp.ok_or_else(|| Error::MissingTimestamp {
                    index,
                    session: access.session_id.clone(),
                    purpose: "timeout sessionization",
                })?;
                let pos = *position.entry(&access.user_id).or_insert_with(|| {
                    users.push((&access.user_id, Vec::new()));
                    users.len() - 1
                });
                users[pos].1.push((ts, access));
            }
            let mut groups = Vec::new();
            for (user, mut trail) in users {
                trail.sort_by_key(|(ts, _)| *ts);
                let mut last: Option<i64> = None;
                let mut k = 0usize;
                for (ts, access) in trail {
                    if last.is_none_or(|prev| ts - prev > gap_seconds) {
                        groups.push(SessionGroup {
                            session_id: format!("{user}#{k}"),
                            user_id: user.to_owned(),
                            accesses: Vec::new(),
                        });
                        k += 1;
                    }
                    let group = groups.last_mut().expect("group pushed above");
                    let mut access = access.clone();
                    access.session_id = group.session_id.clone();
                    group.accesses.push(access);
                    last = Some(ts);
                }
            }
            Ok(groups)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> AccessLog {
        parse_access_log(text.as_bytes()).unwrap()
    }

    #[test]
    fn parses_iso_timestamps() {
        let log = parse("session_id,user_id,item_id,timestamp\ns1,u1,A,2009-10-25T14:30:00Z\n");
        assert_eq!(log.accesses.len(), 1);
        let a = &log.accesses[0];
        assert_eq!(
            (a.session_id.as_str(), a.user_id.as_str(), a.item.as_str()),
            ("s1", "u1", "A")
        );
        assert_eq!(a.timestamp, Some(1_256_481_000));
    }

    #[test]
    fn parses_epoch_and_naive_timestamps() {
        assert_eq!(parse_timestamp("1256481000"), Some(1_256_481_000));
        assert_eq!(parse_timestamp("2009-10-25 14:30:00"), Some(1_256_481_000));
        assert_eq!(parse_timestamp("2009-10-25T15:30:00+01:00"), Some(1_256_481_000));
        assert_eq!(parse_timestamp("yesterday"), None);
    }

    #[test]
    fn context_columns_land_in_raw_context() {
        let log = parse("session_id,user_id,item_id,ctx_intention\ns1,u1,A,cheaper\n");
        assert_eq!(log.accesses[0].raw_context["intention"], "cheaper");
    }

    #[test]
    fn bad_rows_are_skipped_and_counted() {
        let log = parse(
            "session_id,user_id,item_id,timestamp\n\
             s1,u1,,1\n\
             s1,u1,A,notatime\n\
             s1,u1,A,B,1\n\
             s1,u1,A,1\n",
        );
        assert_eq!(log.accesses.len(), 1);
        let lines: Vec<usize> = log.row_errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, [2, 3, 4]);
    }

    #[test]
    fn missing_item_field_counts_one_error() {
        let log = parse("session_id,user_id,item_id\ns1,u1,\n");
        assert!(log.accesses.is_empty());
        assert_eq!(log.row_errors.len(), 1);
    }

    #[test]
    fn missing_mandatory_column_is_fatal() {
        let err = parse_access_log("session_id,user_id,timestamp\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn("item_id")));
        assert!(matches!(parse_access_log("".as_bytes()), Err(Error::EmptyInput)));
    }

    #[test]
    fn reserved_item_prefix_is_fatal() {
        let err = parse_access_log("session_id,user_id,item_id\ns1,u1,ctx:day=01\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::ReservedItemId { line: 2, .. }));
    }

    #[test]
    fn unknown_columns_warn() {
        let log = parse("session_id,user_id,item_id,referrer\ns1,u1,A,x\n");
        assert_eq!(log.accesses.len(), 1);
        assert_eq!(log.warnings.len(), 1);
    }

    #[test]
    fn temporal_contexts_for_a_sunday_afternoon() {
        let ctx = derive_temporal_contexts(1_256_481_000).unwrap();
        assert_eq!(ctx["day"], "25");
        assert_eq!(ctx["month"], "10");
        assert_eq!(ctx["week_day"], "Sunday");
        assert_eq!(ctx["work_day"], "weekend");
        assert_eq!(ctx["hour"], "14");
        assert_eq!(ctx["work_hour"], "work");
    }

    #[test]
    fn work_hour_boundaries() {
        // 2009-10-26T07:59:59Z, a Monday
        let before = derive_temporal_contexts(1_256_543_999).unwrap();
        assert_eq!(before["work_day"], "weekday");
        assert_eq!(before["work_hour"], "nonwork");
        assert_eq!(before["hour"], "07");
        let at = derive_temporal_contexts(1_256_544_000).unwrap();
        assert_eq!(at["work_hour"], "work");
        let six_pm = derive_temporal_contexts(1_256_544_000 + 10 * 3600).unwrap();
        assert_eq!(six_pm["work_hour"], "nonwork");
        let midnight = derive_temporal_contexts(1_256_428_800).unwrap();
        assert_eq!(midnight["hour"], "00");
    }

    #[test]
    fn loads_catalog() {
        let out = load_item_catalog("item_id,attribute,value\nA,band,X\nA,instrumental,yes\n".as_bytes()).unwrap();
        let a = &out.catalog[&ItemId::new("A").unwrap()];
        assert_eq!(a["band"], "X");
        assert_eq!(a["instrumental"], "yes");
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn catalog_last_write_wins() {
        let out = load_item_catalog("item_id,attribute,value\nA,band,X\nA,band,Y\n".as_bytes()).unwrap();
        assert_eq!(out.catalog[&ItemId::new("A").unwrap()]["band"], "Y");
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn empty_catalog_and_bad_header() {
        assert!(load_item_catalog("item_id,attribute,value\n".as_bytes())
            .unwrap()
            .catalog
            .is_empty());
        assert!(matches!(
            load_item_catalog("item,attr,value\n".as_bytes()),
            Err(Error::CatalogHeader(_))
        ));
    }

    fn timed(user: &str, ts: i64) -> Access {
        Access {
            session_id: "raw".into(),
            user_id: user.into(),
            item: ItemId::new(format!("i{ts}")).unwrap(),
            timestamp: Some(ts),
            raw_context: BTreeMap::new(),
        }
    }

    #[test]
    fn sessionize_by_id() {
        let mut accesses = vec![timed("u1", 0), timed("u1", 1), timed("u2", 2)];
        accesses[0].session_id = "s1".into();
        accesses[1].session_id = "s1".into();
        accesses[2].session_id = "s2".into();
        let groups = sessionize(&accesses, Sessionization::BySessionId).unwrap();
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0].accesses.len(), 2);
    }

    #[test]
    fn sessionize_by_timeout() {
        let accesses = vec![timed("u1", 3000), timed("u1", 0), timed("u1", 600)];
        let groups = sessionize(&accesses, Sessionization::ByUserTimeout { gap_seconds: 1800 }).unwrap();
        let stamps: Vec<Vec<i64>> = groups
            .iter()
            .map(|g| g.accesses.iter().map(|a| a.timestamp.unwrap()).collect())
            .collect();
        assert_eq!(stamps, vec![vec![0, 600], vec![3000]]);
        assert_eq!(groups[0].session_id, "u1#0");
        assert_eq!(groups[1].session_id, "u1#1");

        let single = sessionize(&[timed("u9", 5)], Sessionization::ByUserTimeout { gap_seconds: 1800 }).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].accesses.len(), 1);
    }

    #[test]
    fn timeout_mode_needs_timestamps() {
        let mut access = timed("u1", 0);
        access.timestamp = None;
        assert!(matches!(
            sessionize(&[access], Sessionization::ByUserTimeout { gap_seconds: 10 }),
            Err(Error::MissingTimestamp { .. })
        ));
    }

    proptest! {
        #[test]
        fn temporal_derivation_is_pure_and_consistent(ts in -2_000_000_000i64..4_000_000_000) {
            let a = derive_temporal_contexts(ts).unwrap();
            prop_assert_eq!(&a, &derive_temporal_contexts(ts).unwrap());
            let weekend = a["week_day"] == "Saturday" || a["week_day"] == "Sunday";
            prop_assert_eq!(a["work_day"] == "weekend", weekend);
            let hour: u32 = a["hour"].parse().unwrap();
            prop_assert!(hour < 24);
            prop_assert_eq!(a["hour"].len(), 2);
        }

        #[test]
        fn timeout_sessions_respect_gaps(
            events in proptest::collection::vec((0u8..4, 0i64..20_000), 1..80),
            gap in 1i64..5000,
        ) {
            let accesses: Vec<Access> = events.iter().map(|(u, t)| timed(&format!("u{u}"), *t)).collect();
            let groups = sessionize(&accesses, Sessionization::ByUserTimeout { gap_seconds: gap }).unwrap();
            prop_assert_eq!(groups.iter().map(|g| g.accesses.len()).sum::<usize>(), accesses.len());
            for group in &groups {
                prop_assert!(group.accesses.iter().all(|a| a.user_id == group.user_id));
                for pair in group.accesses.windows(2) {
                    let d = pair[1].timestamp.unwrap() - pair[0].timestamp.unwrap();
                    prop_assert!((0..=gap).contains(&d));
                }
            }
        }
    }
}
