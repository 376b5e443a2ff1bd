use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::{Snapshot, SnapshotRecord, TriangleError};
use crate::strata::{AgeGroup, District, DistrictId, Gender, Group, StratumFrame};

const RKI_HEADERS: [&str; 6] = ["IdLandkreis", "Altersgruppe", "Geschlecht", "AnzahlFall", "Meldedatum", "Datenstand"];
const ENGLISH_HEADERS: [&str; 6] = ["district_id", "age_group", "gender", "count", "registration_date", "report_date"];

/// Snapshot records grouped by report date, plus records dropped because
/// their age group or gender is unknown.
#[derive(Debug, Default)]
pub struct SnapshotRead {
    pub snapshots: Vec<Snapshot>,
    pub dropped_unknown_strata: usize,
}

fn parse_date(raw: &str) -> Result<NaiveDate, TriangleError> {
    let s = raw.trim();
    let head = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d")
        .or_else(|_| NaiveDate::parse_from_str(head, "%Y/%m/%d"))
        .or_else(|_| NaiveDate::parse_from_str(head, "%d.%m.%Y"))
        .map_err(|_| TriangleError::Parse(format!("unrecognised date '{raw}'")))
}

fn column_indices(headers: &csv::StringRecord) -> Result<[usize; 6], TriangleError> {
    let lookup: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    for set in [RKI_HEADERS, ENGLISH_HEADERS] {
        let found: Option<Vec<usize>> = set.iter().map(|h| lookup.get(h).copied()).collect();
        if let Some(idx) = found {
            return Ok([idx[0], idx[1], idx[2], idx[3], idx[4], idx[5]]);
        }
    }
    Err(TriangleError::Parse(format!(
        "snapshot header must contain {RKI_HEADERS:?} or {ENGLISH_HEADERS:?}"
    )))
}

fn read_records<R: Read>(reader: R, sink: &mut BTreeMap<NaiveDate, Vec<SnapshotRecord>>) -> Result<usize, TriangleError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let [id, age, gender, count, reg, rep] = column_indices(rdr.headers()?)?;
    let mut dropped = 0;
    for row in rdr.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let (Ok(age), Ok(gender)) = (field(age).parse::<AgeGroup>(), field(gender).parse::<Gender>()) else {
            dropped += 1;
            continue;
        };
        let count: i64 = field(count)
            .trim()
            .parse()
            .map_err(|_| TriangleError::Parse(format!("bad count '{}'", field(count))))?;
        if count < 0 {
            return Err(TriangleError::Parse(format!("negative cumulative count {count}")));
        }
        let record = SnapshotRecord {
            district: DistrictId::new(field(id).trim()),
            group: Group::new(age, gender),
            count: count as u64,
            registration_date: parse_date(field(reg))?,
            report_date: parse_date(field(rep))?,
        };
        sink.entry(record.report_date).or_default().push(record);
    }
    Ok(dropped)
}

fn into_snapshots(grouped: BTreeMap<NaiveDate, Vec<SnapshotRecord>>) -> Vec<Snapshot> {
    grouped
        .into_iter()
        .map(|(report_date, records)| Snapshot { report_date, records })
        .collect()
}

/// Reads snapshot records from one CSV stream (RKI or English header set).
pub fn read_snapshots_csv<R: Read>(reader: R) -> Result<SnapshotRead, TriangleError> {
    let mut grouped = BTreeMap::new();
    let dropped = read_records(reader, &mut grouped)?;
    Ok(SnapshotRead { snapshots: into_snapshots(grouped), dropped_unknown_strata: dropped })
}

/// Reads every `*.csv` file in a directory and groups records by report date.
pub fn read_snapshot_dir(dir: &Path) -> Result<SnapshotRead, TriangleError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let mut grouped = BTreeMap::new();
    let mut dropped = 0;
    for p in paths {
        dropped += read_records(File::open(&p)?, &mut grouped)?;
    }
    Ok(SnapshotRead { snapshots: into_snapshots(grouped), dropped_unknown_strata: dropped })
}

/// Writes one snapshot with the RKI header set.
pub fn write_snapshot_csv<W: Write>(writer: W, snapshot: &Snapshot) -> Result<(), TriangleError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RKI_HEADERS)?;
    for r in &snapshot.records {
        w.write_record([
            r.district.as_str(),
            r.group.age.rki_label(),
            if r.group.gender == Gender::F { "W" } else { "M" },
            &r.count.to_string(),
            &r.registration_date.to_string(),
            &r.report_date.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Frame CSV: `district_id,name,lon,lat` followed by `pop_<age>_<gender>` columns.
pub fn read_frame_csv<R: Read>(reader: R) -> Result<StratumFrame, TriangleError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| TriangleError::Parse(format!("frame is missing column '{name}'")))
    };
    let (id, name, lon, lat) = (find("district_id")?, find("name")?, find("lon")?, find("lat")?);
    let pop_cols: Vec<(usize, Group)> = Group::all()
        .into_iter()
        .filter_map(|g| headers.iter().position(|h| h.trim() == g.population_column()).map(|i| (i, g)))
        .collect();
    let num = |s: &str, what: &str| -> Result<f64, TriangleError> {
        s.trim().parse().map_err(|_| TriangleError::Parse(format!("bad {what} '{s}'")))
    };
    let mut districts = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let mut population = BTreeMap::new();
        for &(i, g) in &pop_cols {
            let raw = row.get(i).unwrap_or("").trim();
            if raw.is_empty() {
                continue;
            }
            let v: u64 = raw
                .parse()
                .map_err(|_| TriangleError::Parse(format!("bad population '{raw}'")))?;
            population.insert(g, v);
        }
        districts.push(District {
            id: DistrictId::new(row.get(id).unwrap_or("").trim()),
            name: row.get(name).unwrap_or("").to_string(),
            lon: num(row.get(lon).unwrap_or(""), "longitude")?,
            lat: num(row.get(lat).unwrap_or(""), "latitude")?,
            population,
        });
    }
    StratumFrame::new(districts)
}

pub fn write_frame_csv<W: Write>(writer: W, frame: &StratumFrame) -> Result<(), TriangleError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["district_id".to_string(), "name".into(), "lon".into(), "lat".into()];
    header.extend(frame.groups().iter().map(|g| g.population_column()));
    w.write_record(&header)?;
    for d in frame.districts() {
        let mut row = vec![d.id.to_string(), d.name.clone(), d.lon.to_string(), d.lat.to_string()];
        row.extend(
            frame
                .groups()
                .iter()
                .map(|g| d.population.get(g).map(|p| p.to_string()).unwrap_or_default()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
