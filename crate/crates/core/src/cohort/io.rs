use super::{CohortError, ExamRecord, ExamTable};
use crate::features::{Feature, N_FEATURES};
use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

/// Header names for the logical exam columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub patient_id: String,
    pub exam_id: String,
    pub acquired_at: String,
    pub gender: String,
    pub age: String,
    pub features: [String; N_FEATURES],
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            patient_id: "PatientID".into(),
            exam_id: "ExamID".into(),
            acquired_at: "AcquisitionDate".into(),
            gender: "Gender".into(),
            age: "PatientAge".into(),
            features: Feature::ALL.map(|f| f.name().to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowRejection {
    /// 0-based data row index (header and comment lines excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LoadedExams {
    pub table: ExamTable,
    pub rejected: Vec<RowRejection>,
    /// Leading `#` lines of the file, without the marker.
    pub header_comments: Vec<String>,
}

pub fn load_exams(path: &Path, schema: &ColumnSchema) -> Result<LoadedExams, CohortError> {
    let file = std::fs::File::open(path)
        .map_err(|source| CohortError::Io { path: path.to_path_buf(), source })?;
    read_exams(file, schema).map_err(|e| match e {
        CohortError::Io { source, .. } => CohortError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let s = s.trim();
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").ok().map(|d| d.date()))
        .or_else(|| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S").ok().map(|d| d.date()))
}

/// Parse a comma- or tab-delimited exam table. The delimiter is taken from
/// the header line; leading lines starting with `#` are collected as
/// comments.
pub fn read_exams<R: Read>(mut reader: R, schema: &ColumnSchema) -> Result<LoadedExams, CohortError> {
    let mut text = String::new();
    reader
        .read_to_string(&mut text)
        .map_err(|source| CohortError::Io { path: Default::default(), source })?;

    let mut header_comments = Vec::new();
    let mut body = text.as_str();
    while let Some(rest) = body.strip_prefix('#') {
        let (line, tail) = rest.split_once('\n').unwrap_or((rest, ""));
        header_comments.push(line.trim_end_matches('\r').trim_start().to_string());
        body = tail;
    }
    let header_line = body.lines().next().unwrap_or("");
    if header_line.trim().is_empty() {
        return Err(CohortError::EmptyTable);
    }
    let delimiter = if header_line.contains('\t') { b'\t' } else { b',' };

    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let headers = rdr.headers()?.clone();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| -> Result<usize, CohortError> {
        position.get(name).copied().ok_or_else(|| CohortError::MissingColumn(name.to_string()))
    };

    let pid_col = col(&schema.patient_id)?;
    let eid_col = col(&schema.exam_id)?;
    let date_col = col(&schema.acquired_at)?;
    let mut feat_cols = [0usize; N_FEATURES];
    for (i, name) in schema.features.iter().enumerate() {
        feat_cols[i] = col(name)?;
    }
    let gender_col = position.get(schema.gender.as_str()).copied();
    let age_col = position.get(schema.age.as_str()).copied();

    let mut known: HashSet<usize> = [pid_col, eid_col, date_col].into_iter().collect();
    known.extend(feat_cols);
    known.extend(gender_col);
    known.extend(age_col);
    let attribute_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !known.contains(i))
        .map(|(i, h)| (i, h.to_string()))
        .collect();

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    for (row, result) in rdr.records().enumerate() {
        let rec = match result {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RowRejection { row, reason: e.to_string() });
                continue;
            }
        };
        if rec.len() != headers.len() {
            rejected.push(RowRejection {
                row,
                reason: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
            continue;
        }
        let patient_id = &rec[pid_col];
        let exam_id = &rec[eid_col];
        if patient_id.is_empty() {
            rejected.push(RowRejection { row, reason: "empty patient_id".into() });
            continue;
        }
        if exam_id.is_empty() {
            rejected.push(RowRejection { row, reason: "empty exam_id".into() });
            continue;
        }
        let Some(acquired_at) = parse_date(&rec[date_col]) else {
            rejected.push(RowRejection { row, reason: format!("unparseable date `{}`", &rec[date_col]) });
            continue;
        };
        let mut features = [0.0; N_FEATURES];
        let mut bad = None;
        for (i, &c) in feat_cols.iter().enumerate() {
            match rec[c].parse::<f64>() {
                Ok(v) if v.is_finite() => features[i] = v,
                _ => {
                    bad = Some(format!("non-numeric {} `{}`", schema.features[i], &rec[c]));
                    break;
                }
            }
        }
        if let Some(reason) = bad {
            rejected.push(RowRejection { row, reason });
            continue;
        }
        let age = match age_col.map(|c| &rec[c]) {
            None | Some("") => None,
            Some(s) => match s.parse::<f64>() {
                Ok(v) => Some(v),
                Err(_) => {
                    rejected.push(RowRejection { row, reason: format!("non-numeric age `{s}`") });
                    continue;
                }
            },
        };
        if !seen.insert(exam_id.to_string()) {
            rejected.push(RowRejection { row, reason: format!("duplicate exam_id `{exam_id}`") });
            continue;
        }
        let gender = gender_col.map(|c| &rec[c]).filter(|s| !s.is_empty()).map(str::to_string);
        let attributes: BTreeMap<String, String> = attribute_cols
            .iter()
            .filter(|(c, _)| !rec[*c].is_empty())
            .map(|(c, name)| (name.clone(), rec[*c].to_string()))
            .collect();
        records.push(ExamRecord {
            patient_id: patient_id.to_string(),
            exam_id: exam_id.to_string(),
            acquired_at,
            gender,
            age,
            features,
            attributes,
        });
    }
    if records.is_empty() && rejected.is_empty() {
        return Err(CohortError::EmptyTable);
    }
    Ok(LoadedExams { table: ExamTable::from_unique(records), rejected, header_comments })
}

/// Write a comma-delimited exam table with the default schema. Each entry of
/// `comments` becomes a leading `# ` line.
pub fn write_exams<W: Write>(table: &ExamTable, mut out: W, comments: &[String]) -> std::io::Result<()> {
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    let schema = ColumnSchema::default();
    let attribute_names: BTreeSet<&str> = table
        .records()
        .iter()
        .flat_map(|r| r.attributes.keys().map(String::as_str))
        .collect();

    let mut w = csv::WriterBuilder::new().from_writer(out);
    let mut header: Vec<&str> =
        vec![&schema.patient_id, &schema.exam_id, &schema.acquired_at, &schema.gender, &schema.age];
    header.extend(schema.features.iter().map(String::as_str));
    header.extend(attribute_names.iter().copied());
    w.write_record(&header)?;

    for r in table.records() {
        let mut row: Vec<String> = vec![
            r.patient_id.clone(),
            r.exam_id.clone(),
            r.acquired_at.format("%Y-%m-%d").to_string(),
            r.gender.clone().unwrap_or_default(),
            r.age.map(|a| a.to_string()).unwrap_or_default(),
        ];
        row.extend(r.features.iter().map(|v| v.to_string()));
        row.extend(attribute_names.iter().map(|k| r.attributes.get(*k).cloned().unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()
}
