//! Results/observation CSV: `time_days,QTY:WELL,...`, one row per report
//! time, empty cells for missing values.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{MisfitError, Series, SeriesKey};

pub fn read_csv(text: &str) -> Result<Vec<Series>, MisfitError> {
    let fmt = |e: csv::Error| MisfitError::Format(e.to_string());
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(fmt)?.clone();
    if headers.get(0) != Some("time_days") {
        return Err(MisfitError::Format("first column must be time_days".to_string()));
    }
    let keys: Vec<SeriesKey> = headers.iter().skip(1).map(str::parse).collect::<Result<_, _>>()?;
    let mut columns: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); keys.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(fmt)?;
        let number = |cell: &str, what: &str| {
            cell.parse::<f64>()
                .map_err(|_| MisfitError::Format(format!("row {}: bad {what} `{cell}`", row + 2)))
        };
        let t = number(record.get(0).unwrap_or_default(), "time")?;
        for (c, cell) in record.iter().skip(1).enumerate() {
            if cell.is_empty() {
                continue;
            }
            let col = columns
                .get_mut(c)
                .ok_or_else(|| MisfitError::Format(format!("row {}: more cells than columns", row + 2)))?;
            col.0.push(t);
            col.1.push(number(cell, "value")?);
        }
    }
    keys.into_iter()
        .zip(columns)
        .filter(|(_, (t, _))| !t.is_empty())
        .map(|(k, (t, v))| Series::new(k.well, k.quantity, t, v))
        .collect()
}

pub fn read_csv_path(path: &Path) -> Result<Vec<Series>, MisfitError> {
    let text = std::fs::read_to_string(path).map_err(|e| MisfitError::Format(format!("{}: {e}", path.display())))?;
    read_csv(&text)
}

/// Columns in key order; times are the union of all series' times.
pub fn write_csv(series: &[Series]) -> String {
    let mut sorted: Vec<&Series> = series.iter().collect();
    sorted.sort_by_key(|s| s.key());
    let times: BTreeSet<u64> = sorted
        .iter()
        .flat_map(|s| s.times.iter().map(|t| ordered(*t)))
        .collect();
    let lookup: Vec<BTreeMap<u64, f64>> = sorted
        .iter()
        .map(|s| {
            s.times
                .iter()
                .map(|t| ordered(*t))
                .zip(s.values.iter().copied())
                .collect()
        })
        .collect();
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["time_days".to_string()];
    header.extend(sorted.iter().map(|s| s.key().to_string()));
    writer.write_record(&header).expect("in-memory write");
    for t in times {
        let mut row = vec![format!("{}", from_ordered(t))];
        row.extend(
            lookup
                .iter()
                .map(|m| m.get(&t).map(|v| format!("{v}")).unwrap_or_default()),
        );
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("flush")).expect("utf8")
}

// Total order on finite floats for use as map keys.
fn ordered(t: f64) -> u64 {
    let bits = t.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn from_ordered(k: u64) -> f64 {
    if k >> 63 == 1 {
        f64::from_bits(k & !(1 << 63))
    } else {
        f64::from_bits(!k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::misfit::QuantityKind;

    #[test]
    fn round_trip_with_gaps() {
        let a = Series::new(
            "P1",
            QuantityKind::Wbhp,
            vec![0.0, 30.0, 60.0],
            vec![250.0, 240.5, 231.25],
        )
        .unwrap();
        let b = Series::new("P1", QuantityKind::Wopr, vec![30.0, 60.0], vec![100.0, 0.1 + 0.2]).unwrap();
        let text = write_csv(&[b.clone(), a.clone()]);
        assert_eq!(text.lines().next().unwrap(), "time_days,WBHP:P1,WOPR:P1");
        assert!(text.contains("\n0,250,\n"));
        assert_eq!(read_csv(&text).unwrap(), vec![a, b]);
    }

    #[test]
    fn bad_header_rejected() {
        assert!(read_csv("t,WBHP:A\n0,1\n").is_err());
        assert!(read_csv("time_days,FOO:A\n0,1\n").is_err());
        assert!(read_csv("time_days,WBHP:A\n0,x\n").is_err());
    }
}
