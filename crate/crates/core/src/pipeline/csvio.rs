use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::fault::{ClassSet, LabelCode};
use crate::features::{FeatureMode, FeatureVector};
use crate::pipeline::{Dataset, DatasetRow};

pub const DATASET_HEADER: [&str; 12] = [
    "t", "ia", "ib", "ic", "psiA1", "psiB1", "psiC1", "psiA2", "psiB2", "psiC2", "code", "class_id",
];

pub fn write_dataset<W: Write>(d: &Dataset, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(DATASET_HEADER)?;
    let mut rec: Vec<String> = Vec::with_capacity(DATASET_HEADER.len());
    for row in &d.rows {
        let class = d.classes.get(row.class_id).ok_or_else(|| {
            Error::Config(format!(
                "row class id {} outside the class set",
                row.class_id
            ))
        })?;
        rec.clear();
        rec.push(row.t.to_string());
        rec.extend(row.currents.iter().map(f64::to_string));
        match row.psi {
            Some(psi) => rec.extend(psi.0.iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        rec.push(class.to_label_code().to_string());
        rec.push(row.class_id.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    write_dataset(d, BufWriter::new(File::create(path)?))
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Format(format!("line {line}: bad {what} value {s:?}")))
}

/// Reads a dataset written by [`write_dataset`]. Rows are matched to
/// `classes` by their label code; the feature mode is inferred from whether
/// the slope columns are filled.
pub fn read_dataset<R: Read>(input: R, classes: &ClassSet) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = r.headers()?.clone();
    let mut col = [0usize; 12];
    for (k, name) in DATASET_HEADER.iter().enumerate() {
        col[k] = header
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::Format(format!("missing column {name}")))?;
    }

    let mut rows = Vec::new();
    let mut mode = None;
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |k: usize| rec.get(col[k]).unwrap_or("");

        let t = parse_f64(field(0), "t", line)?;
        let mut currents = [0.0; 3];
        for (j, c) in currents.iter_mut().enumerate() {
            *c = parse_f64(field(1 + j), DATASET_HEADER[1 + j], line)?;
        }
        let filled = (4..10).filter(|&k| !field(k).is_empty()).count();
        let row_mode = match filled {
            6 => FeatureMode::Transformed,
            0 => FeatureMode::Raw,
            _ => {
                return Err(Error::Format(format!(
                    "line {line}: partially filled feature columns"
                )))
            }
        };
        if *mode.get_or_insert(row_mode) != row_mode {
            return Err(Error::Format(format!(
                "line {line}: feature columns mix raw and transformed rows"
            )));
        }
        let psi = if row_mode == FeatureMode::Transformed {
            let mut v = [0.0; 6];
            for (j, p) in v.iter_mut().enumerate() {
                *p = parse_f64(field(4 + j), DATASET_HEADER[4 + j], line)?;
            }
            Some(FeatureVector(v))
        } else {
            None
        };

        let code: LabelCode = field(10)
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad label code {:?}", field(10))))?;
        let class = classes
            .find_code(code)
            .ok_or_else(|| Error::Format(format!("line {line}: unknown fault class {code}")))?;
        let class_id: u16 = field(11)
            .parse()
            .map_err(|_| Error::Format(format!("line {line}: bad class id {:?}", field(11))))?;
        if class_id != class.id {
            return Err(Error::Format(format!(
                "line {line}: class id {class_id} does not match code {code} (id {})",
                class.id
            )));
        }
        rows.push(DatasetRow {
            t,
            currents,
            psi,
            class_id,
        });
    }

    Ok(Dataset {
        mode: mode.unwrap_or(FeatureMode::Transformed),
        classes: classes.clone(),
        rows,
        provenance: Vec::new(),
    })
}

pub fn load_dataset(path: &Path, classes: &ClassSet) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?), classes)
}
