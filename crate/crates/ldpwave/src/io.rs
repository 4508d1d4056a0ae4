//! File formats: released-record batches, density and coefficient
//! documents, and content-addressed run directories.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ldpwave_core::coeffs::CoefficientSet;
use ldpwave_core::density::Density;
use ldpwave_core::privacy::{Mechanism, MechanismConfig, MechanismVariant, PrivatizedRecord};
use ldpwave_core::wavelet::{Family, WaveletBasis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RECORDS_MAGIC: &str = "# ldpwave-records";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Public mechanism parameters carried in the first line of a records file.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordsHeader {
    pub variant: MechanismVariant,
    pub alpha: f64,
    pub j0: i32,
    pub j1: i32,
    pub nu: f64,
    pub family: Family,
    pub depth: u32,
    pub support_t: f64,
}

impl RecordsHeader {
    pub fn from_config(config: &MechanismConfig) -> Self {
        Self {
            variant: config.variant,
            alpha: config.alpha,
            j0: config.j0,
            j1: config.j1,
            nu: config.nu,
            family: config.basis.family(),
            depth: config.basis.depth(),
            support_t: config.support_t,
        }
    }

    fn fields(&self) -> String {
        format!(
            "variant={} alpha={} j0={} j1={} nu={} family={} depth={} T={}",
            self.variant, self.alpha, self.j0, self.j1, self.nu, self.family, self.depth, self.support_t
        )
    }

    pub fn digest(&self) -> String {
        sha256_hex(self.fields().as_bytes())
    }

    pub fn line(&self) -> String {
        format!("{RECORDS_MAGIC} {} digest={}", self.fields(), self.digest())
    }

    /// Parse a header line and check its digest against its fields.
    pub fn parse(line: &str) -> Result<Self> {
        let rest = line
            .trim_end()
            .strip_prefix(RECORDS_MAGIC)
            .ok_or_else(|| Error::Records(format!("first line must start with {RECORDS_MAGIC:?}")))?;
        let mut get = std::collections::BTreeMap::new();
        for token in rest.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| Error::Records(format!("bad header token {token:?}")))?;
            get.insert(k, v);
        }
        fn field<T: std::str::FromStr>(map: &std::collections::BTreeMap<&str, &str>, key: &str) -> Result<T> {
            map.get(key)
                .ok_or_else(|| Error::Records(format!("header lacks {key}")))?
                .parse()
                .map_err(|_| Error::Records(format!("header field {key} is malformed")))
        }
        let header = Self {
            variant: get.get("variant").ok_or_else(|| Error::Records("header lacks variant".into()))?.parse()?,
            alpha: field(&get, "alpha")?,
            j0: field(&get, "j0")?,
            j1: field(&get, "j1")?,
            nu: field(&get, "nu")?,
            family: get.get("family").ok_or_else(|| Error::Records("header lacks family".into()))?.parse()?,
            depth: field(&get, "depth")?,
            support_t: field(&get, "T")?,
        };
        let claimed: String = field(&get, "digest")?;
        let actual = header.digest();
        if claimed != actual {
            return Err(Error::Digest(format!("header digest {claimed} does not match its fields ({actual})")));
        }
        Ok(header)
    }

    pub fn mechanism_config(&self) -> Result<MechanismConfig> {
        let basis = Arc::new(WaveletBasis::build(self.family, self.depth)?);
        Ok(MechanismConfig {
            variant: self.variant,
            alpha: self.alpha,
            j0: self.j0,
            j1: self.j1,
            nu: self.nu,
            basis,
            support_t: self.support_t,
        })
    }
}

/// Write `record_id,j,k,z` rows, one per slot, after the header line.
/// Father slots carry `j = j0 - 1`.
pub fn write_records<W: Write>(out: W, mechanism: &Mechanism, slots: &[Vec<f64>]) -> Result<()> {
    let mut out = out;
    let io_err = |e| Error::io("<records>", e);
    writeln!(out, "{}", RecordsHeader::from_config(mechanism.config()).line()).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["record_id", "j", "k", "z"]).map_err(csv_err)?;
    let keys: Vec<(i32, i64)> = mechanism.layout().keys().collect();
    let mut line = String::new();
    for (id, record) in slots.iter().enumerate() {
        for (&(j, k), z) in keys.iter().zip(record) {
            line.clear();
            write!(line, "{id},{j},{k},{z}").expect("write to string");
            w.write_record(line.split(',')).map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Records(e.to_string())
}

/// A parsed records file.
#[derive(Debug, Clone)]
pub struct RecordBatch {
    pub header: RecordsHeader,
    pub mechanism: Mechanism,
    pub records: Vec<PrivatizedRecord>,
}

pub fn read_records<R: Read>(input: R) -> Result<RecordBatch> {
    let mut reader = BufReader::new(input);
    let mut first = String::new();
    reader.read_line(&mut first).map_err(|e| Error::io("<records>", e))?;
    let header = RecordsHeader::parse(&first)?;
    let mechanism = Mechanism::new(header.mechanism_config()?)?;
    let layout = mechanism.layout().clone();
    let keys: Vec<(i32, i64)> = layout.keys().collect();
    let mut rows = csv::Reader::from_reader(reader);
    let mut records: Vec<PrivatizedRecord> = Vec::new();
    let mut current = Vec::with_capacity(keys.len());
    for (line, row) in rows.records().enumerate() {
        let row = row.map_err(csv_err)?;
        let parse =
            |i: usize| row.get(i).ok_or_else(|| Error::Records(format!("row {} has {} fields", line + 2, row.len())));
        let bad = |what: &str| Error::Records(format!("row {}: malformed {what}", line + 2));
        let id: usize = parse(0)?.parse().map_err(|_| bad("record_id"))?;
        let j: i32 = parse(1)?.parse().map_err(|_| bad("j"))?;
        let k: i64 = parse(2)?.parse().map_err(|_| bad("k"))?;
        let z: f64 = parse(3)?.parse().map_err(|_| bad("z"))?;
        if id != records.len() || (j, k) != keys[current.len()] {
            return Err(Error::Records(format!(
                "row {}: expected record {} slot {:?}, found record {id} slot ({j}, {k})",
                line + 2,
                records.len(),
                keys[current.len()]
            )));
        }
        current.push(z);
        if current.len() == keys.len() {
            records.push(PrivatizedRecord { layout: layout.clone(), slots: std::mem::take(&mut current) });
            current.reserve(keys.len());
        }
    }
    if !current.is_empty() {
        return Err(Error::Records(format!("record {} is truncated", records.len())));
    }
    Ok(RecordBatch { header, mechanism, records })
}

pub fn read_records_file(path: &Path) -> Result<RecordBatch> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file)
}

/// Density tabulated on a uniform grid over its support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityDoc {
    pub label: String,
    pub support: [f64; 2],
    pub dx: f64,
    pub values: Vec<f64>,
}

pub fn density_doc(density: &Density, intervals: usize) -> DensityDoc {
    let t = density.support_t();
    let dx = 2.0 * t / intervals as f64;
    let values = (0..=intervals).map(|i| density.eval(-t + i as f64 * dx)).collect();
    DensityDoc { label: density.label().to_string(), support: [-t, t], dx, values }
}

pub fn read_density_doc(path: &Path) -> Result<Density> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: DensityDoc = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(Density::tabulated(doc.support[0], doc.dx, doc.values, doc.label)?)
}

/// Coefficient triples `(j, k, value)`; the father block has `j = j0 - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDoc {
    pub j0: i32,
    pub j1: i32,
    pub coefficients: Vec<(i32, i64, f64)>,
}

pub fn coefficient_doc(set: &CoefficientSet) -> CoefficientDoc {
    CoefficientDoc { j0: set.j0(), j1: set.j1(), coefficients: set.triples().collect() }
}

/// Output directory `<root>/<command>-<digest prefix>`. Files are never
/// overwritten with different content.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub path: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, digest: &str) -> Result<Self> {
        let path = root.join(format!("{command}-{}", &digest[..16.min(digest.len())]));
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let target = self.path.join(name);
        match fs::read(&target) {
            Ok(existing) if existing == bytes => return Ok(target),
            Ok(_) => return Err(Error::OutputConflict(target)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(e) => return Err(Error::io(&target, e)),
        }
        let tmp = self.path.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

/// Render rows as CSV text with the given header.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Records(e.to_string()))
}
