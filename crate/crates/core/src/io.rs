//! File formats: `.dsmp` sample matrices, `.dmsk` multi-frame masks, binary
//! PGM masks, prior/posterior mixture CSVs and trajectory dumps.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gmm::{Covariance, GaussianMixture};
use crate::guidance::Trajectory;
use crate::masklift::MaskGrid;
use crate::metrics::SampleSet;

pub const SAMPLE_MAGIC: &[u8; 5] = b"DING1";
pub const MASK_MAGIC: &[u8; 4] = b"DMSK";

/// PGM grey levels at or above this are observed.
pub const PGM_THRESHOLD: u8 = 128;

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn to_u32(path: &Path, v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| format_err(path, format!("{what} {v} does not fit in 32 bits")))
}

pub fn encode_samples(path: &Path, samples: &SampleSet) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(13 + 8 * samples.as_slice().len());
    out.extend_from_slice(SAMPLE_MAGIC);
    out.extend_from_slice(&to_u32(path, samples.dim(), "dimension")?.to_le_bytes());
    out.extend_from_slice(&to_u32(path, samples.len(), "sample count")?.to_le_bytes());
    for v in samples.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_samples(path: &Path, bytes: &[u8]) -> Result<SampleSet> {
    if bytes.len() < 13 || &bytes[..5] != SAMPLE_MAGIC {
        return Err(format_err(path, "missing DING1 header"));
    }
    let d = u32_at(bytes, 5) as usize;
    let n = u32_at(bytes, 9) as usize;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| format_err(path, "header sizes overflow"))?;
    if bytes.len() - 13 != expected {
        return Err(format_err(
            path,
            format!("payload is {} bytes, header promises {expected}", bytes.len() - 13),
        ));
    }
    let data = bytes[13..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SampleSet::from_row_major(n, d, data).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<()> {
    let bytes = encode_samples(path, samples)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<SampleSet> {
    decode_samples(path, &read_all(path)?)
}

pub fn write_dmsk(path: &Path, mask: &MaskGrid) -> Result<()> {
    let (t, h, w) = mask.shape();
    let mut out = Vec::with_capacity(16 + mask.len());
    out.extend_from_slice(MASK_MAGIC);
    for v in [t, h, w] {
        out.extend_from_slice(&to_u32(path, v, "mask dimension")?.to_le_bytes());
    }
    out.extend(mask.to_bytes());
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_dmsk(path: &Path) -> Result<MaskGrid> {
    let bytes = read_all(path)?;
    if bytes.len() < 16 || &bytes[..4] != MASK_MAGIC {
        return Err(format_err(path, "missing DMSK header"));
    }
    let shape = (u32_at(&bytes, 4) as usize, u32_at(&bytes, 8) as usize, u32_at(&bytes, 12) as usize);
    if bytes.len() - 16 != shape.0 * shape.1 * shape.2 {
        return Err(format_err(path, "payload size does not match header"));
    }
    MaskGrid::from_bytes(shape, &bytes[16..]).map_err(|e| format_err(path, e.to_string()))
}

/// Splits the next whitespace-delimited PGM header token, skipping comments.
fn pgm_token<'a>(path: &Path, bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(format_err(path, "truncated PGM header"));
    }
    Ok(&bytes[start..*pos])
}

fn pgm_number(path: &Path, bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let tok = pgm_token(path, bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| format_err(path, "bad number in PGM header"))
}

/// Reads one or more concatenated binary PGM images as frames of a mask.
/// Every frame must share the same size.
pub fn read_pgm(path: &Path) -> Result<MaskGrid> {
    let bytes = read_all(path)?;
    let mut pos = 0;
    let mut frames = 0;
    let mut size = None;
    let mut observed = Vec::new();
    while pos < bytes.len() {
        if bytes[pos..].iter().all(|b| b.is_ascii_whitespace()) {
            break;
        }
        if pgm_token(path, &bytes, &mut pos)? != b"P5" {
            return Err(format_err(path, "only binary PGM (P5) is supported"));
        }
        let w = pgm_number(path, &bytes, &mut pos)?;
        let h = pgm_number(path, &bytes, &mut pos)?;
        let maxval = pgm_number(path, &bytes, &mut pos)?;
        if maxval == 0 || maxval > 255 {
            return Err(format_err(path, format!("unsupported PGM maxval {maxval}")));
        }
        pos += 1;
        if *size.get_or_insert((h, w)) != (h, w) {
            return Err(format_err(path, "PGM frames differ in size"));
        }
        let end = pos + h * w;
        if end > bytes.len() {
            return Err(format_err(path, "truncated PGM pixel data"));
        }
        observed.extend(bytes[pos..end].iter().map(|&p| p >= PGM_THRESHOLD));
        pos = end;
        frames += 1;
    }
    let (h, w) = size.ok_or_else(|| format_err(path, "empty PGM file"))?;
    MaskGrid::new((frames, h, w), observed).map_err(|e| format_err(path, e.to_string()))
}

/// Writes each frame as a P5 image (255 observed, 0 edited), concatenated.
pub fn write_pgm(path: &Path, mask: &MaskGrid) -> Result<()> {
    let (t, h, w) = mask.shape();
    let mut out = create(path)?;
    let frame = h * w;
    for k in 0..t {
        let pixels: Vec<u8> = mask.as_slice()[k * frame..(k + 1) * frame]
            .iter()
            .map(|&b| if b { 255 } else { 0 })
            .collect();
        write!(out, "P5\n{w} {h}\n255\n")
            .and_then(|_| out.write_all(&pixels))
            .map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Flattened mask from a PGM file, row-major over all frames.
pub fn read_pgm_flat(path: &Path) -> Result<Vec<bool>> {
    Ok(read_pgm(path)?.as_slice().to_vec())
}

fn parse_row(path: &Path, record: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    record
        .iter()
        .map(|f| {
            f.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("line {line}: '{f}' is not a number")))
        })
        .collect()
}

/// Prior components, one per row: `weight, mean_1..mean_d` followed by
/// either `d` variances (diagonal) or `d*d` row-major covariance entries.
/// A non-numeric first row is treated as a header. Weights are normalised.
pub fn read_prior_csv(path: &Path, dim: usize) -> Result<GaussianMixture> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let (mut weights, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let line = record.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let row = parse_row(path, &record, line)?;
        let mean = DVector::from_column_slice(&row[1.min(row.len())..(1 + dim).min(row.len())]);
        let rest = &row[(1 + dim).min(row.len())..];
        let cov = if rest.len() == dim && mean.len() == dim {
            Covariance::Diagonal(DVector::from_column_slice(rest))
        } else if rest.len() == dim * dim && mean.len() == dim {
            Covariance::Full(DMatrix::from_row_slice(dim, dim, rest))
        } else {
            return Err(format_err(
                path,
                format!("line {line}: expected {} or {} columns for d = {dim}", 1 + 2 * dim, 1 + dim + dim * dim),
            ));
        };
        weights.push(row[0]);
        means.push(mean);
        covs.push(cov);
    }
    GaussianMixture::from_unnormalized(weights, means, covs)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| format_err(path, e.to_string())
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// One row per component: `component, weight, mean_*, cov_i_j` (full,
/// row-major).
pub fn write_mixture_csv(path: &Path, mixture: &GaussianMixture) -> Result<()> {
    let d = mixture.dim();
    let mut w = csv_writer(path)?;
    let mut header = vec!["component".to_string(), "weight".to_string()];
    header.extend((0..d).map(|i| format!("mean_{i}")));
    header.extend((0..d * d).map(|k| format!("cov_{}_{}", k / d, k % d)));
    w.write_record(&header).map_err(csv_err(path))?;
    for (k, c) in mixture.components().iter().enumerate() {
        let cov = c.covariance().to_dense();
        let mut row = vec![k.to_string(), fmt(c.weight())];
        row.extend(c.mean().iter().map(|&v| fmt(v)));
        row.extend((0..d * d).map(|k| fmt(cov[(k / d, k % d)])));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `sample, x_0..x_{d-1}`.
pub fn write_samples_csv(path: &Path, samples: &SampleSet) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["sample".to_string()];
    header.extend((0..samples.dim()).map(|i| format!("x_{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, row) in samples.rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|&v| fmt(v)));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: `chain, k, t, coordinate, x, xhat0`.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["chain", "k", "t", "coordinate", "x", "xhat0"])
        .map_err(csv_err(path))?;
    for (chain, traj) in trajectories.iter().enumerate() {
        for (k, rec) in traj.records.iter().enumerate() {
            for i in 0..rec.x.len() {
                                w.write_record([
                    chain.to_string(),
                    k.to_string(),
                    fmt(rec.t),
                    i.to_string(),
                    fmt(rec.x[i]),
                    fmt(rec.x0_hat[i]),
                ])
                .map_err(csv_err(path))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
