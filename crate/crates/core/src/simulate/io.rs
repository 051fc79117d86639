//! Path serialization.
//!
//! CSV layout: a versioned metadata line, then a header
//! `time,<compartments…>,scheme,seed,incidence` and one row per record.
//! Floats use the shortest round-trip representation.
//!
//! Binary layout (little-endian): the ASCII line `epidiff-path-bin v1\n`,
//! then model id (u32 length + UTF-8), scheme (u8), dim (u32),
//! population (u64), seed (u64), stream (u64), horizon (f64), absorbed (u8),
//! has_incidence (u8), record count (u64), and per record the time, `dim`
//! state values and (if present) the cumulative incidence, all f64.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Path, Scheme, StreamSeed};
use crate::error::{Error, Result};

pub const CSV_MAGIC: &str = "# epidiff-path v1";
pub const BIN_MAGIC: &[u8] = b"epidiff-path-bin v1\n";

pub fn write_csv<W: Write>(path: &Path, compartments: &[String], mut out: W) -> Result<()> {
    if compartments.len() != path.dim {
        return Err(Error::InvalidArgument("compartment names do not match path dimension".into()));
    }
    writeln!(
        out,
        "{CSV_MAGIC} model={} scheme={} population={} seed={} stream={} horizon={} absorbed={}",
        path.model,
        path.scheme.as_str(),
        path.population,
        path.seed.seed,
        path.seed.stream,
        path.horizon,
        path.absorbed
    )?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time".to_string()];
    header.extend(compartments.iter().cloned());
    header.extend(["scheme".into(), "seed".into(), "incidence".into()]);
    w.write_record(&header)?;
    for k in 0..path.len() {
        let mut row = vec![path.times[k].to_string()];
        row.extend(path.state(k).iter().map(|v| v.to_string()));
        row.push(path.scheme.as_str().to_string());
        row.push(path.seed.seed.to_string());
        row.push(
            path.incidence
                .as_ref()
                .map(|inc| inc[k].to_string())
                .unwrap_or_default(),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_meta(line: &str) -> Result<BTreeMap<String, String>> {
    let rest = line
        .strip_prefix(CSV_MAGIC)
        .ok_or_else(|| Error::Format(format!("missing `{CSV_MAGIC}` header")))?;
    Ok(rest
        .split_whitespace()
        .filter_map(|kv| kv.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

fn meta_get<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str) -> Result<T> {
    meta.get(key)
        .ok_or_else(|| Error::Format(format!("metadata key `{key}` missing")))?
        .parse()
        .map_err(|_| Error::Format(format!("bad metadata value for `{key}`")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Format(format!("bad number `{s}`")))
}

/// Returns the path and its compartment names.
pub fn read_csv<R: Read>(input: R) -> Result<(Path, Vec<String>)> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    let meta = parse_meta(first.trim_end())?;
    let scheme: Scheme = meta_get::<String>(&meta, "scheme")?.parse()?;
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    if headers.len() < 5 || &headers[0] != "time" {
        return Err(Error::Format("unexpected CSV header".into()));
    }
    let dim = headers.len() - 4;
    let compartments: Vec<String> = (1..=dim).map(|i| headers[i].to_string()).collect();
    let mut times = Vec::new();
    let mut states = Vec::new();
    let mut incidence = Vec::new();
    let mut has_incidence = true;
    for rec in r.records() {
        let rec = rec?;
        times.push(parse_f64(&rec[0])?);
        for i in 1..=dim {
            states.push(parse_f64(&rec[i])?);
        }
        let inc = &rec[dim + 3];
        if inc.is_empty() {
            has_incidence = false;
        } else {
            incidence.push(parse_f64(inc)?);
        }
    }
    let path = Path {
        model: meta_get(&meta, "model")?,
        scheme,
        population: meta_get(&meta, "population")?,
        dim,
        times,
        states,
        incidence: has_incidence.then_some(incidence),
        seed: StreamSeed::new(meta_get(&meta, "seed")?, meta_get(&meta, "stream")?),
        horizon: meta_get(&meta, "horizon")?,
        absorbed: meta_get(&meta, "absorbed")?,
    };
    path.validate()?;
    Ok((path, compartments))
}

fn scheme_code(s: Scheme) -> u8 {
    match s {
        Scheme::Exact => 0,
        Scheme::TauLeap => 1,
        Scheme::Diffusion => 2,
        Scheme::Ode => 3,
    }
}

pub fn write_binary<W: Write>(path: &Path, mut out: W) -> Result<()> {
    out.write_all(BIN_MAGIC)?;
    out.write_u32::<LittleEndian>(path.model.len() as u32)?;
    out.write_all(path.model.as_bytes())?;
    out.write_u8(scheme_code(path.scheme))?;
    out.write_u32::<LittleEndian>(path.dim as u32)?;
    out.write_u64::<LittleEndian>(path.population)?;
    out.write_u64::<LittleEndian>(path.seed.seed)?;
    out.write_u64::<LittleEndian>(path.seed.stream)?;
    out.write_f64::<LittleEndian>(path.horizon)?;
    out.write_u8(path.absorbed as u8)?;
    out.write_u8(path.incidence.is_some() as u8)?;
    out.write_u64::<LittleEndian>(path.len() as u64)?;
    for k in 0..path.len() {
        out.write_f64::<LittleEndian>(path.times[k])?;
        for &v in path.state(k) {
            out.write_f64::<LittleEndian>(v)?;
        }
        if let Some(inc) = &path.incidence {
            out.write_f64::<LittleEndian>(inc[k])?;
        }
    }
    Ok(())
}

pub fn read_binary<R: Read>(mut input: R) -> Result<Path> {
    let mut magic = vec![0u8; BIN_MAGIC.len()];
    input.read_exact(&mut magic)?;
    if magic != BIN_MAGIC {
        return Err(Error::Format("not an epidiff binary path (bad magic/version)".into()));
    }
    let name_len = input.read_u32::<LittleEndian>()? as usize;
    let mut name = vec![0u8; name_len];
    input.read_exact(&mut name)?;
    let model = String::from_utf8(name).map_err(|e| Error::Format(e.to_string()))?;
    let scheme = match input.read_u8()? {
        0 => Scheme::Exact,
        1 => Scheme::TauLeap,
        2 => Scheme::Diffusion,
        3 => Scheme::Ode,
        c => return Err(Error::Format(format!("unknown scheme code {c}"))),
    };
    let dim = input.read_u32::<LittleEndian>()? as usize;
    let population = input.read_u64::<LittleEndian>()?;
    let seed = input.read_u64::<LittleEndian>()?;
    let stream = input.read_u64::<LittleEndian>()?;
    let horizon = input.read_f64::<LittleEndian>()?;
    let absorbed = input.read_u8()? != 0;
    let has_inc = input.read_u8()? != 0;
    let n = input.read_u64::<LittleEndian>()? as usize;
    let mut times = Vec::with_capacity(n);
    let mut states = Vec::with_capacity(n * dim);
    let mut incidence = has_inc.then(|| Vec::with_capacity(n));
    for _ in 0..n {
        times.push(input.read_f64::<LittleEndian>()?);
        for _ in 0..dim {
            states.push(input.read_f64::<LittleEndian>()?);
        }
        if let Some(inc) = incidence.as_mut() {
            inc.push(input.read_f64::<LittleEndian>()?);
        }
    }
    let path = Path {
        model,
        scheme,
        population,
        dim,
        times,
        states,
        incidence,
        seed: StreamSeed::new(seed, stream),
        horizon,
        absorbed,
    };
    path.validate()?;
    Ok(path)
}
