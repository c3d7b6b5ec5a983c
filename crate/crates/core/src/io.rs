//! CSV artifacts: datasets, ground truth, scores and nuisance dumps.
//!
//! Headers are checked strictly, so a missing or unknown column fails with
//! the column's name. Floats are written with 17 significant digits, which
//! round-trips every `f64` exactly.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::dgp::{Dataset, GroundTruth, Observation, DIM};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceEstimates;

pub const GROUND_TRUTH_HEADER: [&str; 4] = ["tau", "mu0", "mu1", "e"];
pub const SCORES_HEADER: [&str; 2] = ["index", "score"];
pub const NUISANCE_HEADER: [&str; 5] = ["mu0_hat", "mu1_hat", "e_hat", "phi", "fold"];

pub fn dataset_header(d: usize) -> Vec<String> {
    (1..=d)
        .map(|j| format!("x{j}"))
        .chain(["t".to_string(), "y".to_string()])
        .collect()
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn check_header<S: AsRef<str>>(found: &csv::StringRecord, expected: &[S]) -> Result<()> {
    for (c, want) in expected.iter().enumerate() {
        let want = want.as_ref();
        match found.get(c) {
            Some(got) if got.trim() == want => {}
            Some(got) if found.iter().any(|f| f.trim() == want) => {
                return Err(Error::parse(
                    1,
                    c + 1,
                    format!("column `{want}` expected here, found `{got}`"),
                ));
            }
            _ => return Err(Error::parse(1, c + 1, format!("missing column `{want}`"))),
        }
    }
    if found.len() > expected.len() {
        return Err(Error::parse(
            1,
            expected.len() + 1,
            format!("unknown column `{}`", &found[expected.len()]),
        ));
    }
    Ok(())
}

/// Reads a headed CSV whose every field is a number, checking the header.
fn read_table<S: AsRef<str>>(text: &str, expected: &[S]) -> Result<Vec<Vec<f64>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r.map_err(csv_error)?,
        None => return Err(Error::parse(1, 1, "empty file, expected a header")),
    };
    check_header(&header, expected)?;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let rec = rec.map_err(csv_error)?;
        let line = i as u64 + 2;
        if rec.len() != expected.len() {
            return Err(Error::parse(
                line,
                rec.len().min(expected.len()) + 1,
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, f)| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(
                    line,
                    c + 1,
                    format!("invalid number `{f}` in column `{}`", expected[c].as_ref()),
                )),
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::parse(line, 1, e.to_string())
}

fn read_file(path: &Path) -> Result<String> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(|e| Error::file(path, e))?;
    Ok(s)
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    File::create(path)
        .and_then(|mut f| f.write_all(body.as_bytes()))
        .map_err(|e| Error::file(path, e))
}

fn render(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

pub fn dataset_to_csv(data: &Dataset) -> String {
    render(
        &dataset_header(data.d()),
        data.iter().map(|o| {
            o.x.iter()
                .map(|&v| fmt(v))
                .chain([if o.t { "1" } else { "0" }.to_string(), fmt(o.y)])
                .collect()
        }),
    )
}

/// Parses a dataset with the `x1,...,x10,t,y` header. Treatment must be 0 or 1.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let header = dataset_header(DIM);
    let rows = read_table(text, &header)?;
    let observations = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let t = match r[DIM] {
                0.0 => false,
                1.0 => true,
                v => {
                    return Err(Error::parse(
                        i as u64 + 2,
                        DIM + 1,
                        format!("treatment must be 0 or 1, found {v}"),
                    ))
                }
            };
            Ok(Observation {
                x: r[..DIM].to_vec(),
                t,
                y: r[DIM + 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(DIM, observations)
}

pub fn ground_truth_to_csv(gt: &GroundTruth) -> String {
    let header: Vec<String> = GROUND_TRUTH_HEADER.iter().map(|s| s.to_string()).collect();
    render(
        &header,
        (0..gt.len()).map(|i| vec![fmt(gt.tau[i]), fmt(gt.mu0[i]), fmt(gt.mu1[i]), fmt(gt.e[i])]),
    )
}

pub fn parse_ground_truth(text: &str) -> Result<GroundTruth> {
    let mut gt = GroundTruth::default();
    for r in read_table(text, &GROUND_TRUTH_HEADER)? {
        gt.push(r[0], r[1], r[2], r[3]);
    }
    gt.validate()?;
    Ok(gt)
}

pub fn scores_to_csv(scores: &[f64]) -> String {
    let header: Vec<String> = SCORES_HEADER.iter().map(|s| s.to_string()).collect();
    render(
        &header,
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| vec![i.to_string(), fmt(s)]),
    )
}

/// Parses `index,score`; indices must run `0, 1, 2, ...` in order.
pub fn parse_scores(text: &str) -> Result<Vec<f64>> {
    let rows = read_table(text, &SCORES_HEADER)?;
    rows.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r[0] != i as f64 {
                return Err(Error::parse(
                    i as u64 + 2,
                    1,
                    format!("expected index {i}, found {}", r[0]),
                ));
            }
            Ok(r[1])
        })
        .collect()
}

/// Per-unit row of a nuisance dump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceRow {
    pub mu0_hat: f64,
    pub mu1_hat: f64,
    pub e_hat: f64,
    pub phi: f64,
    pub fold: usize,
}

pub fn nuisance_rows(est: &NuisanceEstimates, data: &Dataset) -> Result<Vec<NuisanceRow>> {
    let phi = est.dr_scores(data)?;
    Ok((0..data.len())
        .map(|i| NuisanceRow {
            mu0_hat: est.mu0_hat[i],
            mu1_hat: est.mu1_hat[i],
            e_hat: est.e_hat[i],
            phi: phi.phi[i],
            fold: est.fold[i],
        })
        .collect())
}

pub fn nuisance_to_csv(rows: &[NuisanceRow]) -> String {
    let header: Vec<String> = NUISANCE_HEADER.iter().map(|s| s.to_string()).collect();
    render(
        &header,
        rows.iter().map(|r| {
            vec![
                fmt(r.mu0_hat),
                fmt(r.mu1_hat),
                fmt(r.e_hat),
                fmt(r.phi),
                r.fold.to_string(),
            ]
        }),
    )
}

pub fn parse_nuisance(text: &str) -> Result<Vec<NuisanceRow>> {
    read_table(text, &NUISANCE_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r[4] < 0.0 || r[4].fract() != 0.0 {
                return Err(Error::parse(
                    i as u64 + 2,
                    5,
                    format!("fold must be a non-negative integer, found {}", r[4]),
                ));
            }
            if !(r[2] > 0.0 && r[2] < 1.0) {
                return Err(Error::parse(
                    i as u64 + 2,
                    3,
                    format!("e_hat {} outside (0,1)", r[2]),
                ));
            }
            Ok(NuisanceRow {
                mu0_hat: r[0],
                mu1_hat: r[1],
                e_hat: r[2],
                phi: r[3],
                fold: r[4] as usize,
            })
        })
        .collect()
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_file(path, &dataset_to_csv(data))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    parse_dataset(&read_file(path)?)
}

pub fn save_ground_truth(path: &Path, gt: &GroundTruth) -> Result<()> {
    write_file(path, &ground_truth_to_csv(gt))
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    parse_ground_truth(&read_file(path)?)
}

/// Loads a dataset and, if given, its row-aligned ground truth.
pub fn load_with_truth(
    data_path: &Path,
    truth_path: Option<&Path>,
) -> Result<(Dataset, Option<GroundTruth>)> {
    let data = load_dataset(data_path)?;
    let truth = match truth_path {
        Some(p) => {
            let gt = load_ground_truth(p)?;
            if gt.len() != data.len() {
                return Err(Error::invalid(format!(
                    "ground truth has {} rows, dataset has {}",
                    gt.len(),
                    data.len()
                )));
            }
            Some(gt)
        }
        None => None,
    };
    Ok((data, truth))
}

pub fn save_scores(path: &Path, scores: &[f64]) -> Result<()> {
    write_file(path, &scores_to_csv(scores))
}

pub fn load_scores(path: &Path) -> Result<Vec<f64>> {
    parse_scores(&read_file(path)?)
}

pub fn save_nuisance(path: &Path, rows: &[NuisanceRow]) -> Result<()> {
    write_file(path, &nuisance_to_csv(rows))
}

pub fn save_text(path: &Path, body: &str) -> Result<()> {
    write_file(path, body)
}

pub fn load_text(path: &Path) -> Result<String> {
    read_file(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpConfig};

    #[test]
    fn dataset_round_trip_is_exact() {
        let (data, gt) = generate(&DgpConfig::new(40, 5)).unwrap();
        let back = parse_dataset(&dataset_to_csv(&data)).unwrap();
        assert_eq!(back.observations(), data.observations());
        let gt2 = parse_ground_truth(&ground_truth_to_csv(&gt)).unwrap();
        assert_eq!(gt2, gt);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let (data, gt) = generate(&DgpConfig::new(12, 1)).unwrap();
        let (dp, gp) = (dir.path().join("d.csv"), dir.path().join("g.csv"));
        save_dataset(&dp, &data).unwrap();
        save_ground_truth(&gp, &gt).unwrap();
        let (d2, g2) = load_with_truth(&dp, Some(&gp)).unwrap();
        assert_eq!(d2.observations(), data.observations());
        assert_eq!(g2.unwrap(), gt);
        assert!(matches!(
            load_dataset(&dir.path().join("nope.csv")),
            Err(Error::File { .. })
        ));
    }

    #[test]
    fn missing_t_column_is_named() {
        let (data, _) = generate(&DgpConfig::new(3, 1)).unwrap();
        let text = dataset_to_csv(&data);
        let lines: Vec<String> = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(10);
                f.join(",")
            })
            .collect();
        let err = parse_dataset(&lines.join("\n")).unwrap_err().to_string();
        assert!(err.contains("`t`"), "{err}");
    }

    #[test]
    fn extra_column_is_rejected() {
        let mut text = String::from("tau,mu0,mu1,e,extra\n");
        text.push_str("1,0,1,0.5,9\n");
        let err = parse_ground_truth(&text).unwrap_err().to_string();
        assert!(err.contains("extra"), "{err}");
    }

    #[test]
    fn bad_cell_reports_location() {
        let text = "tau,mu0,mu1,e\n1,0,1,0.5\n1,0,abc,0.5\n";
        match parse_ground_truth(text) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
        let text = "index,score\n0,1.0\n1\n";
        assert!(matches!(
            parse_scores(text),
            Err(Error::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn treatment_must_be_binary() {
        let (data, _) = generate(&DgpConfig::new(2, 1)).unwrap();
        let text = dataset_to_csv(&data)
            .replacen(",1,", ",2,", 1)
            .replacen(",0,", ",2,", 1);
        assert!(parse_dataset(&text).is_err());
    }

    #[test]
    fn scores_round_trip_and_order() {
        let s = vec![0.1, -3.0, 1e-300, 7.25];
        assert_eq!(parse_scores(&scores_to_csv(&s)).unwrap(), s);
        assert!(parse_scores("index,score\n1,0.5\n").is_err());
    }

    #[test]
    fn nuisance_dump_round_trip() {
        let rows = vec![
            NuisanceRow {
                mu0_hat: 0.1,
                mu1_hat: 0.4,
                e_hat: 0.3,
                phi: 1.25,
                fold: 0,
            },
            NuisanceRow {
                mu0_hat: -0.2,
                mu1_hat: 0.0,
                e_hat: 0.99,
                phi: -0.5,
                fold: 1,
            },
        ];
        assert_eq!(parse_nuisance(&nuisance_to_csv(&rows)).unwrap(), rows);
    }

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
