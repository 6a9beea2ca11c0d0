//! Catalog CSV files: one row per event with spatial coordinates, time and mark.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use stmark_core::geometry::{SpaceTimePoint, Window};
use stmark_core::pattern::{IngestReport, MarkSpace, MarkedPattern, MarkedPoint};

use crate::error::{CliError, CliResult};

/// Column names of the spatial coordinates in dimension `d`.
pub fn spatial_columns(d: usize) -> Vec<String> {
    match d {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        3 => vec!["x".into(), "y".into(), "z".into()],
        _ => (1..=d).map(|k| format!("x{k}")).collect(),
    }
}

/// Reads a catalog with header `x[,y[,z]],t,mark`; other columns are ignored.
///
/// Rows outside the window, with invalid marks or duplicated are dropped and
/// reported unless `strict` is set, in which case they are an error.
pub fn read_catalog(
    path: &Path,
    window: &Window,
    marks: &MarkSpace,
    strict: bool,
) -> CliResult<(MarkedPattern, IngestReport)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| CliError::format(path, e))?
        .clone();
    let mut names = spatial_columns(window.dim());
    names.push("t".into());
    names.push("mark".into());
    let cols = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == n)
                .ok_or_else(|| CliError::format(path, format!("missing column \"{n}\"")))
        })
        .collect::<CliResult<Vec<usize>>>()?;
    let d = window.dim();
    let mut points = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::format(path, e))?;
        let mut vals = Vec::with_capacity(cols.len());
        for (&c, n) in cols.iter().zip(&names) {
            let s = rec.get(c).unwrap_or("");
            let v: f64 = s.parse().map_err(|_| {
                CliError::format(
                    path,
                    format!("row {}: column {n}: \"{s}\" is not a number", row + 1),
                )
            })?;
            if !v.is_finite() {
                return Err(CliError::format(
                    path,
                    format!("row {}: column {n} is not finite", row + 1),
                ));
            }
            vals.push(v);
        }
        let loc = SpaceTimePoint::new(vals[..d].to_vec(), vals[d])?;
        points.push(MarkedPoint {
            loc,
            mark: vals[d + 1],
        });
    }
    if strict {
        let p = MarkedPattern::new(points, window.clone(), marks.clone())?;
        Ok((p, IngestReport::default()))
    } else {
        Ok(MarkedPattern::from_raw(
            points,
            window.clone(),
            marks.clone(),
        )?)
    }
}

pub fn write_catalog(path: &Path, p: &MarkedPattern) -> CliResult<()> {
    let mut out = String::new();
    let mut header = spatial_columns(p.dim());
    header.push("t".into());
    header.push("mark".into());
    out.push_str(&header.join(","));
    out.push('\n');
    for q in p.points() {
        for x in &q.loc.x {
            out.push_str(&format!("{x},"));
        }
        out.push_str(&format!("{},{}\n", q.loc.t, q.mark));
    }
    write_file(path, out.as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut f = File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stmark_core::geometry::Interval;

    fn window() -> Window {
        Window::new(
            vec![Interval::new(0.0, 1.0).unwrap(); 2],
            Interval::new(0.0, 2.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        let pts = vec![
            MarkedPoint {
                loc: SpaceTimePoint::new(vec![0.1, 0.25], 1.5).unwrap(),
                mark: 2.0,
            },
            MarkedPoint {
                loc: SpaceTimePoint::new(vec![0.3333333333333333, 0.9], 0.0).unwrap(),
                mark: 1.0,
            },
        ];
        let ms = MarkSpace::counting(2).unwrap();
        let p = MarkedPattern::new(pts, window(), ms.clone()).unwrap();
        write_catalog(&path, &p).unwrap();
        let (q, report) = read_catalog(&path, &window(), &ms, true).unwrap();
        assert_eq!(p, q);
        assert_eq!(report, IngestReport::default());
    }

    #[test]
    fn lenient_reading_drops_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        std::fs::write(
            &path,
            "id,t,y,x,mark\n1,0.5,0.5,0.5,1\n2,0.5,0.5,0.5,1\n3,0.5,1.5,0.5,1\n4,0.1,0.1,0.1,3\n",
        )
        .unwrap();
        let ms = MarkSpace::counting(2).unwrap();
        let (p, report) = read_catalog(&path, &window(), &ms, false).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(
            (
                report.dropped_outside,
                report.dropped_invalid_mark,
                report.duplicates_removed
            ),
            (1, 1, 1)
        );
        assert!(read_catalog(&path, &window(), &ms, true).is_err());
    }

    #[test]
    fn malformed_files_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let ms = MarkSpace::counting(2).unwrap();
        let missing = dir.path().join("none.csv");
        assert_eq!(
            read_catalog(&missing, &window(), &ms, false)
                .unwrap_err()
                .exit_code(),
            1
        );
        let path = dir.path().join("c.csv");
        std::fs::write(&path, "x,y,t\n0.1,0.1,0.1\n").unwrap();
        let e = read_catalog(&path, &window(), &ms, false).unwrap_err();
        assert!(e.to_string().contains("missing column \"mark\""));
        std::fs::write(&path, "x,y,t,mark\n0.1,abc,0.1,1\n").unwrap();
        let e = read_catalog(&path, &window(), &ms, false).unwrap_err();
        assert!(e.to_string().contains("row 1: column y"));
    }
}
