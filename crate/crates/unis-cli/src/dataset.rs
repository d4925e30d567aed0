//! Dataset files: CSV and "UPTS" binary reading/writing plus synthetic
//! generators. Readers assign point ids by file order starting at `id_base`.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use unis::geometry::Point;
use unis::{Result, UnisError};

const MAGIC: &[u8; 4] = b"UPTS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Csv,
    Bin,
}

impl FileFormat {
    pub fn parse(s: &str) -> Option<FileFormat> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Some(FileFormat::Csv),
            "bin" => Some(FileFormat::Bin),
            _ => None,
        }
    }
}

/// Reads a dataset, sniffing the binary magic and falling back to CSV.
/// `allow_empty` admits files with zero data rows (an empty insert batch).
pub fn read_points(path: &Path, id_base: u64, allow_empty: bool) -> Result<Vec<Point>> {
    let mut file = File::open(path)
        .map_err(|e| UnisError::Data(format!("cannot open {}: {e}", path.display())))?;
    let mut head = [0u8; 4];
    let n_head = read_up_to(&mut file, &mut head)?;
    let points = if n_head == 4 && &head == MAGIC {
        read_bin_body(&mut file, path, id_base)?
    } else {
        drop(file);
        read_csv(path, id_base)?
    };
    if points.is_empty() && !allow_empty {
        return Err(UnisError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(points)
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        let n = r.read(&mut buf[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    Ok(got)
}

fn read_bin_body(r: &mut impl Read, path: &Path, id_base: u64) -> Result<Vec<Point>> {
    let err = |msg: String| UnisError::Data(format!("{}: {msg}", path.display()));
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(err(format!("unsupported dataset version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    if d == 0 {
        return Err(err("dimension count is zero".into()));
    }
    let mut points = Vec::with_capacity(n);
    for i in 0..n {
        let mut coords = Vec::with_capacity(d);
        for j in 0..d {
            let v = r.read_f64::<LittleEndian>().map_err(|_| {
                err(format!("truncated at point {i} coordinate {j} (expected {n} points)"))
            })?;
            if !v.is_finite() {
                return Err(err(format!("non-finite value at point {i} coordinate {j}")));
            }
            coords.push(v);
        }
        points.push(Point::new(id_base + i as u64, coords));
    }
    Ok(points)
}

fn read_csv(path: &Path, id_base: u64) -> Result<Vec<Point>> {
    let file = File::open(path)
        .map_err(|e| UnisError::Data(format!("cannot open {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut points = Vec::new();
    let mut dims: Option<usize> = None;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let row = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        // Header detection: a first row whose leading field is not a number.
        if points.is_empty() && dims.is_none() && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let mut coords = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                UnisError::Data(format!(
                    "{} row {row}: column {} is not a number: {field:?}",
                    path.display(),
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                return Err(UnisError::Data(format!(
                    "{} row {row}: non-finite value in column {}",
                    path.display(),
                    col + 1
                )));
            }
            coords.push(v);
        }
        match dims {
            None => dims = Some(coords.len()),
            Some(d) if d != coords.len() => {
                return Err(UnisError::Data(format!(
                    "{} row {row}: {} columns, expected {d}",
                    path.display(),
                    coords.len()
                )));
            }
            _ => {}
        }
        points.push(Point::new(id_base + points.len() as u64, coords));
    }
    Ok(points)
}

pub fn write_points(path: &Path, points: &[Point], format: FileFormat) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| UnisError::Data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    match format {
        FileFormat::Csv => {
            for p in points {
                let row: Vec<String> = p.coords.iter().map(|v| format!("{v:?}")).collect();
                writeln!(w, "{}", row.join(","))?;
            }
        }
        FileFormat::Bin => {
            w.write_all(MAGIC)?;
            w.write_u32::<LittleEndian>(VERSION)?;
            w.write_u64::<LittleEndian>(points.len() as u64)?;
            w.write_u32::<LittleEndian>(points[0].dims() as u32)?;
            for p in points {
                for &v in &p.coords {
                    w.write_f64::<LittleEndian>(v)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dist {
    Uniform,
    Gaussian,
    Clustered,
}

impl Dist {
    pub fn parse(s: &str) -> Option<Dist> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Some(Dist::Uniform),
            "gaussian" => Some(Dist::Gaussian),
            "clustered" => Some(Dist::Clustered),
            _ => None,
        }
    }
}

/// Synthetic datasets over roughly [0, 100]^d: `uniform` fills the cube,
/// `gaussian` is one isotropic blob in the middle, `clustered` is a mixture
/// of tight blobs at uniform centers.
pub fn generate(dist: Dist, n: usize, d: usize, clusters: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match dist {
        Dist::Uniform => (0..n)
            .map(|i| Point::new(i as u64, (0..d).map(|_| rng.gen_range(0.0..100.0)).collect()))
            .collect(),
        Dist::Gaussian => {
            let normal = Normal::new(50.0, 15.0).expect("constant parameters are valid");
            (0..n)
                .map(|i| Point::new(i as u64, (0..d).map(|_| normal.sample(&mut rng)).collect()))
                .collect()
        }
        Dist::Clustered => {
            let k = clusters.max(1);
            let centers: Vec<Vec<f64>> =
                (0..k).map(|_| (0..d).map(|_| rng.gen_range(0.0..100.0)).collect()).collect();
            let normal = Normal::new(0.0, 2.0).expect("constant parameters are valid");
            (0..n)
                .map(|i| {
                    let c = &centers[rng.gen_range(0..k)];
                    let coords = c.iter().map(|&m| m + normal.sample(&mut rng)).collect();
                    Point::new(i as u64, coords)
                })
                .collect()
        }
    }
}
