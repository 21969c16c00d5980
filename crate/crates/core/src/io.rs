//! CSV and JSON ingestion and artifact writers.
//!
//! Every reader reports malformed input as [`Error::Data`] naming the file and
//! line. Coordinates are stored in kilometres; inputs in metres are divided by
//! 1000 on the way in.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CovariateTable, PairedPattern, Point, PointPattern};
use crate::joint::{FlowSummary, Partition};
use crate::mcmc::{Draw, PosteriorChain};
use crate::ppm::IntensitySurface;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    #[default]
    Km,
    M,
}

impl Units {
    fn factor(self) -> f64 {
        match self {
            Units::Km => 1.0,
            Units::M => 1e-3,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => Error::Data(format!("{}:{line}: {kind:?}", path.display())),
    }
}

/// Header and records of a CSV file, each record tagged with its line number.
struct Table {
    path: String,
    headers: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = rdr
            .headers()
            .map_err(|e| csv_err(path, e))?
            .iter()
            .map(|h| h.to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            rows.push((line, rec.iter().map(|f| f.to_string()).collect()));
        }
        Ok(Self {
            path: path.display().to_string(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("{}:1: missing column `{name}`", self.path)))
    }

    fn err(&self, line: u64, msg: impl std::fmt::Display) -> Error {
        Error::Data(format!("{}:{line}: {msg}", self.path))
    }

    fn f64_at(&self, line: u64, row: &[String], col: usize) -> Result<f64> {
        let v = &row[col];
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| self.err(line, format_args!("`{}` = `{v}` is not a finite number", self.headers[col])))
    }

    fn opt_f64_at(&self, line: u64, row: &[String], col: usize) -> Result<Option<f64>> {
        if row[col].is_empty() {
            Ok(None)
        } else {
            self.f64_at(line, row, col).map(Some)
        }
    }

    fn usize_at(&self, line: u64, row: &[String], col: usize) -> Result<usize> {
        let v = &row[col];
        v.parse::<usize>()
            .map_err(|_| self.err(line, format_args!("`{}` = `{v}` is not a cell index", self.headers[col])))
    }
}

/// Points from `id,x,y[,cell_id]`.
pub fn read_points(path: &Path, units: Units) -> Result<PointPattern> {
    let t = Table::read(path)?;
    let (cx, cy) = (t.column("x")?, t.column("y")?);
    t.column("id")?;
    let cc = t.headers.iter().position(|h| h == "cell_id");
    let mut points = Vec::with_capacity(t.rows.len());
    let mut ids = Vec::new();
    for (line, row) in &t.rows {
        let f = units.factor();
        points.push(Point::new(t.f64_at(*line, row, cx)? * f, t.f64_at(*line, row, cy)? * f));
        if let Some(c) = cc {
            ids.push(t.usize_at(*line, row, c)?);
        }
    }
    let region = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let mut p = PointPattern::new(points, region)?;
    if cc.is_some() {
        p.cell_ids = Some(ids);
    }
    Ok(p)
}

pub fn write_points(path: &Path, pattern: &PointPattern) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["id", "x", "y"];
    if pattern.cell_ids.is_some() {
        header.push("cell_id");
    }
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for (i, p) in pattern.points.iter().enumerate() {
        let mut rec = vec![i.to_string(), p.x.to_string(), p.y.to_string()];
        if let Some(ids) = &pattern.cell_ids {
            rec.push(ids[i].to_string());
        }
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Pairs from `id,theft_x,theft_y,recovery_x,recovery_y`; both recovery
/// fields empty marks an unrecovered theft.
pub fn read_pairs(path: &Path, units: Units) -> Result<PairedPattern> {
    let t = Table::read(path)?;
    let cid = t.column("id")?;
    let (tx, ty) = (t.column("theft_x")?, t.column("theft_y")?);
    let (rx, ry) = (t.column("recovery_x")?, t.column("recovery_y")?);
    let f = units.factor();
    let (mut ids, mut thefts, mut recs) = (Vec::new(), Vec::new(), Vec::new());
    for (line, row) in &t.rows {
        ids.push(row[cid].clone());
        thefts.push(Point::new(t.f64_at(*line, row, tx)? * f, t.f64_at(*line, row, ty)? * f));
        recs.push(match (t.opt_f64_at(*line, row, rx)?, t.opt_f64_at(*line, row, ry)?) {
            (Some(x), Some(y)) => Some(Point::new(x * f, y * f)),
            (None, None) => None,
            _ => return Err(t.err(*line, "recovery has only one coordinate")),
        });
    }
    PairedPattern::new(ids, thefts, recs)
}

pub fn write_pairs(path: &Path, pairs: &PairedPattern) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "theft_x", "theft_y", "recovery_x", "recovery_y"])
        .map_err(|e| csv_err(path, e))?;
    for i in 0..pairs.len() {
        let t = pairs.thefts[i];
        let (rx, ry) = match pairs.recoveries[i] {
            Some(r) => (r.x.to_string(), r.y.to_string()),
            None => (String::new(), String::new()),
        };
        w.write_record([pairs.ids[i].clone(), t.x.to_string(), t.y.to_string(), rx, ry])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Covariates from `cell_id,<name>...`; every cell `0..k` exactly once.
pub fn read_covariates(path: &Path, k: usize) -> Result<CovariateTable> {
    let t = Table::read(path)?;
    let cid = t.column("cell_id")?;
    let names: Vec<String> = t.headers.iter().filter(|h| *h != "cell_id").cloned().collect();
    let cols: Vec<usize> = (0..t.headers.len()).filter(|&i| i != cid).collect();
    let mut values = DMatrix::zeros(k, names.len());
    let mut seen = vec![false; k];
    for (line, row) in &t.rows {
        let c = t.usize_at(*line, row, cid)?;
        if c >= k {
            return Err(t.err(*line, format_args!("cell_id {c} outside 0..{k}")));
        }
        if seen[c] {
            return Err(t.err(*line, format_args!("cell_id {c} appears twice")));
        }
        seen[c] = true;
        for (j, &col) in cols.iter().enumerate() {
            values[(c, j)] = t.f64_at(*line, row, col)?;
        }
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Data(format!("{}: no row for cell_id {c}", t.path)));
    }
    CovariateTable::new(names, values)
}

pub fn write_covariates(path: &Path, table: &CovariateTable) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["cell_id".to_string()];
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for k in 0..table.nrows() {
        let mut rec = vec![k.to_string()];
        rec.extend((0..table.ncols()).map(|j| table.values[(k, j)].to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Cell areas and optional representative points from `cell_id,area[,x,y]`.
pub fn read_areas(path: &Path, units: Units) -> Result<(Vec<f64>, Option<Vec<Point>>)> {
    let t = Table::read(path)?;
    let (cid, ca) = (t.column("cell_id")?, t.column("area")?);
    let has_xy = t.headers.iter().any(|h| h == "x") && t.headers.iter().any(|h| h == "y");
    let n = t.rows.len();
    let mut areas = vec![f64::NAN; n];
    let mut reps = vec![Point::new(f64::NAN, f64::NAN); n];
    for (line, row) in &t.rows {
        let c = t.usize_at(*line, row, cid)?;
        if c >= n || !areas[c].is_nan() {
            return Err(t.err(*line, format_args!("cell_id {c} is duplicated or outside 0..{n}")));
        }
        // areas scale with the square of the length unit
        areas[c] = t.f64_at(*line, row, ca)? * units.factor() * units.factor();
        if has_xy {
            let f = units.factor();
            reps[c] = Point::new(t.f64_at(*line, row, t.column("x")?)? * f, t.f64_at(*line, row, t.column("y")?)? * f);
        }
    }
    Ok((areas, has_xy.then_some(reps)))
}

/// Destination partition from `cell_id,partition_id`; sets keep first-seen id order.
pub fn read_partition(path: &Path, k: usize) -> Result<Partition> {
    let t = Table::read(path)?;
    let (cid, pid) = (t.column("cell_id")?, t.column("partition_id")?);
    let mut ids: Vec<String> = Vec::new();
    let mut sets: Vec<Vec<usize>> = Vec::new();
    for (line, row) in &t.rows {
        let c = t.usize_at(*line, row, cid)?;
        if c >= k {
            return Err(t.err(*line, format_args!("cell_id {c} outside 0..{k}")));
        }
        let id = &row[pid];
        match ids.iter().position(|i| i == id) {
            Some(j) => sets[j].push(c),
            None => {
                ids.push(id.clone());
                sets.push(vec![c]);
            }
        }
    }
    let partition = Partition { ids, sets };
    partition
        .validate(k)
        .map_err(|e| Error::Data(format!("{}: {e}", t.path)))?;
    Ok(partition)
}

pub fn write_surface(path: &Path, surface: &IntensitySurface) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["cell_id", "mean", "sd", "lo95", "hi95"])
        .map_err(|e| csv_err(path, e))?;
    for c in &surface.cells {
        w.write_record([
            c.cell_id.to_string(),
            c.mean.to_string(),
            c.sd.to_string(),
            c.lo95.to_string(),
            c.hi95.to_string(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn write_flow(path: &Path, flow: &[FlowSummary]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["partition_id", "post_mean", "post_lo95", "post_hi95", "heldout_count_prop"])
        .map_err(|e| csv_err(path, e))?;
    for f in flow {
        w.write_record([
            f.partition_id.clone(),
            f.post_mean.to_string(),
            f.post_lo95.to_string(),
            f.post_hi95.to_string(),
            f.heldout_count_prop.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Generic CSV with a header row.
pub fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), e.line())))
}

#[derive(Serialize, Deserialize)]
struct ChainHeader {
    param_names: Vec<String>,
    latent_names: Vec<String>,
    burn_in: usize,
    seed: u64,
    acceptance: Vec<(String, f64)>,
    ess_evaluations: Vec<(String, f64)>,
}

/// Chain as JSON lines: a header object, then one draw per line.
pub fn write_chain_jsonl(path: &Path, chain: &PosteriorChain) -> Result<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let header = ChainHeader {
        param_names: chain.param_names.clone(),
        latent_names: chain.latent_names.clone(),
        burn_in: chain.burn_in,
        seed: chain.seed,
        acceptance: chain.acceptance.clone(),
        ess_evaluations: chain.ess_evaluations.clone(),
    };
    let ser = |e: serde_json::Error| Error::Data(format!("{}: {e}", path.display()));
    serde_json::to_writer(&mut w, &header).map_err(ser)?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for d in &chain.draws {
        serde_json::to_writer(&mut w, d).map_err(ser)?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_chain_jsonl(path: &Path) -> Result<PosteriorChain> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(f).lines().enumerate();
    let bad = |n: usize, e: serde_json::Error| Error::Data(format!("{}:{}: {e}", path.display(), n + 1));
    let (n, first) = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty chain file", path.display())))?;
    let header: ChainHeader = serde_json::from_str(&first.map_err(|e| io_err(path, e))?).map_err(|e| bad(n, e))?;
    let mut draws = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Draw = serde_json::from_str(&line).map_err(|e| bad(n, e))?;
        if d.params.len() != header.param_names.len() {
            return Err(Error::Data(format!(
                "{}:{}: draw has {} parameters, header names {}",
                path.display(),
                n + 1,
                d.params.len(),
                header.param_names.len()
            )));
        }
        draws.push(d);
    }
    Ok(PosteriorChain {
        param_names: header.param_names,
        latent_names: header.latent_names,
        draws,
        burn_in: header.burn_in,
        seed: header.seed,
        acceptance: header.acceptance,
        ess_evaluations: header.ess_evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn points_roundtrip_and_units() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        fs::write(&p, "id,x,y\n0,1500,2000\n1,0,250\n").unwrap();
        let pat = read_points(&p, Units::M).unwrap();
        assert_eq!(pat.points, vec![Point::new(1.5, 2.0), Point::new(0.0, 0.25)]);
        let q = dir.path().join("out.csv");
        write_points(&q, &pat).unwrap();
        assert_eq!(read_points(&q, Units::Km).unwrap().points, pat.points);
    }

    #[test]
    fn malformed_row_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pts.csv");
        fs::write(&p, "id,x,y\n0,1,2\n1,abc,2\n").unwrap();
        let e = read_points(&p, Units::Km).unwrap_err().to_string();
        assert!(e.contains(":3:"), "{e}");
        fs::write(&p, "id,x,y\n0,1,2\n1,2\n").unwrap();
        let e = read_points(&p, Units::Km).unwrap_err().to_string();
        assert!(e.contains(":3:"), "{e}");
    }

    #[test]
    fn pairs_with_missing_recoveries() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pairs.csv");
        fs::write(&p, "id,theft_x,theft_y,recovery_x,recovery_y\na,0,0,1,1\nb,2,2,,\n").unwrap();
        let pairs = read_pairs(&p, Units::Km).unwrap();
        assert_eq!(pairs.recoveries, vec![Some(Point::new(1.0, 1.0)), None]);
        let q = dir.path().join("o.csv");
        write_pairs(&q, &pairs).unwrap();
        assert_eq!(read_pairs(&q, Units::Km).unwrap(), pairs);
        fs::write(&p, "id,theft_x,theft_y,recovery_x,recovery_y\na,0,0,1,\n").unwrap();
        assert!(read_pairs(&p, Units::Km).unwrap_err().to_string().contains(":2:"));
    }

    #[test]
    fn covariates_require_every_cell() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cov.csv");
        fs::write(&p, "cell_id,a,b\n1,3,4\n0,1,2\n").unwrap();
        let t = read_covariates(&p, 2).unwrap();
        assert_eq!(t.values[(0, 1)], 2.0);
        assert!(read_covariates(&p, 3).is_err());
        fs::write(&p, "cell_id,a\n0,1\n0,2\n").unwrap();
        assert!(read_covariates(&p, 2).unwrap_err().to_string().contains(":3:"));
    }

    #[test]
    fn chain_jsonl_roundtrip() {
        let chain = PosteriorChain {
            param_names: vec!["a".into(), "loglik".into()],
            latent_names: vec!["z".into()],
            draws: vec![Draw {
                params: vec![0.1 + 0.2, -1e-300],
                latents: vec![vec![1.0 / 3.0, 2.5]],
            }],
            burn_in: 4,
            seed: 9,
            acceptance: vec![("a".into(), 0.3)],
            ess_evaluations: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("chain.jsonl");
        write_chain_jsonl(&p, &chain).unwrap();
        assert_eq!(read_chain_jsonl(&p).unwrap(), chain);
    }
}
