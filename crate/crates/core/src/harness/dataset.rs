use std::path::Path;

use crate::error::{Error, Result};
use crate::risk::LabeledDataset;

fn parse_number(field: &str) -> Option<f64> {
    // tolerate a typographic minus sign
    field.trim().replace('\u{2212}', "-").parse().ok()
}

/// Reads `label,x_1,...,x_d` rows. A first row whose label field is not
/// numeric is taken as a header and skipped.
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut dim = None;
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(k as u64 + 1, e.to_string()))?;
        let line = record.position().map_or(k as u64 + 1, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let label = match parse_number(&record[0]) {
            Some(v) => v,
            None if k == 0 => continue,
            None => return Err(parse_err(line, format!("label {:?} is not a number", &record[0]))),
        };
        if label != 1.0 && label != -1.0 {
            return Err(parse_err(line, format!("label {label} is not -1 or +1")));
        }
        let x = record
            .iter()
            .skip(1)
            .map(|f| parse_number(f).ok_or_else(|| parse_err(line, format!("feature {f:?} is not a number"))))
            .collect::<Result<Vec<f64>>>()?;
        if x.is_empty() {
            return Err(parse_err(line, "row has no features".into()));
        }
        match dim {
            None => dim = Some(x.len()),
            Some(d) if d != x.len() => {
                return Err(parse_err(line, format!("expected {d} features, found {}", x.len())));
            }
            _ => {}
        }
        points.push(x);
        labels.push(label);
    }
    if points.is_empty() {
        return Err(Error::EmptyData);
    }
    LabeledDataset::new(points, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_rows_and_skips_header() {
        let plain = load_dataset(write("+1,1.0\n-1,-1.0\n+1,0.5\n").path()).unwrap();
        assert_eq!(plain.labels(), &[1.0, -1.0, 1.0]);
        assert_eq!(plain.points(), &[vec![1.0], vec![-1.0], vec![0.5]]);
        let headed = load_dataset(write("label,f1\n+1,1.0\n-1,-1.0\n+1,0.5\n").path()).unwrap();
        assert_eq!(plain, headed);
        let unicode = load_dataset(write("+1,1.0\n\u{2212}1,\u{2212}1.0\n+1,0.5\n").path()).unwrap();
        assert_eq!(plain, unicode);
    }

    #[test]
    fn reports_bad_rows_with_line_numbers() {
        assert!(matches!(load_dataset(write("").path()), Err(Error::EmptyData)));
        match load_dataset(write("+1,1.0\n0,2.0\n").path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match load_dataset(write("+1,1.0\n-1,abc\n").path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(load_dataset(write("+1,1.0\n-1,1.0,2.0\n").path()).is_err());
        assert!(load_dataset(Path::new("/nonexistent/file.csv")).is_err());
    }
}
