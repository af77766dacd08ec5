//! Polytope descriptor files (JSON) and latent-sample CSV files.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GeometryError, Halfspace, LatentSample, Polytope, SampleTag};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeDescriptor {
    #[serde(default)]
    pub id: String,
    pub dim: usize,
    #[serde(default)]
    pub vertices: Vec<Vec<f64>>,
    pub halfspaces: Vec<Halfspace>,
    pub action_lo: f64,
    pub action_hi: f64,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub source_tag: SampleTag,
    #[serde(default)]
    pub parent_id: Option<String>,
}

impl From<&Polytope> for PolytopeDescriptor {
    fn from(p: &Polytope) -> Self {
        Self {
            id: p.id.clone(),
            dim: p.dim,
            vertices: p.vertices.clone(),
            halfspaces: p.halfspaces.clone(),
            action_lo: p.action_interval.0,
            action_hi: p.action_interval.1,
            epsilon: p.inflation_radius,
            source_tag: p.source_tag.clone(),
            parent_id: p.parent_id.clone(),
        }
    }
}

impl TryFrom<PolytopeDescriptor> for Polytope {
    type Error = GeometryError;

    fn try_from(d: PolytopeDescriptor) -> Result<Self, Self::Error> {
        let mut p = Polytope::from_halfspaces(d.dim, d.halfspaces)?;
        p.vertices = d.vertices;
        p.action_interval = (d.action_lo, d.action_hi);
        p.inflation_radius = d.epsilon;
        p.source_tag = d.source_tag;
        p.parent_id = d.parent_id;
        if d.id.is_empty() {
            p.refresh_id();
        } else {
            p.id = d.id;
        }
        let problems = p.validate();
        if !problems.is_empty() {
            return Err(GeometryError::Parse(problems.join("; ")));
        }
        Ok(p)
    }
}

impl Polytope {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&PolytopeDescriptor::from(self)).expect("polytope serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        let d: PolytopeDescriptor =
            serde_json::from_str(text).map_err(|e| GeometryError::Parse(e.to_string()))?;
        d.try_into()
    }
}

pub fn read_polytope(path: impl AsRef<Path>) -> Result<Polytope, GeometryError> {
    Polytope::from_json(&std::fs::read_to_string(path)?)
}

pub fn write_polytope(path: impl AsRef<Path>, poly: &Polytope) -> Result<(), GeometryError> {
    std::fs::write(path, poly.to_json() + "\n")?;
    Ok(())
}

/// Reads `z_0,...,z_{d-1},action,tag` rows.
pub fn read_latent_csv(reader: impl Read) -> Result<Vec<LatentSample>, GeometryError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let cols: Vec<&str> = headers.iter().collect();
    let n = cols.len();
    if n < 3 || cols[n - 2] != "action" || cols[n - 1] != "tag" {
        return Err(GeometryError::Parse(
            "latent CSV header must be z_0,...,z_{d-1},action,tag".into(),
        ));
    }
    let d = n - 2;
    for (i, c) in cols[..d].iter().enumerate() {
        if *c != format!("z_{i}") {
            return Err(GeometryError::Parse(format!("expected column z_{i}, found '{c}'")));
        }
    }
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = row + 2;
        let num = |i: usize| -> Result<f64, GeometryError> {
            let v: f64 = rec[i]
                .parse()
                .map_err(|_| GeometryError::Parse(format!("line {line}: invalid number '{}'", &rec[i])))?;
            if !v.is_finite() {
                return Err(GeometryError::Parse(format!("line {line}: non-finite value")));
            }
            Ok(v)
        };
        let z = (0..d).map(num).collect::<Result<Vec<_>, _>>()?;
        let action = num(d)?;
        let tag = rec[d + 1]
            .parse()
            .map_err(|e: GeometryError| GeometryError::Parse(format!("line {line}: {e}")))?;
        out.push(LatentSample { z, action, tag });
    }
    Ok(out)
}

pub fn write_latent_csv(writer: impl Write, samples: &[LatentSample]) -> Result<(), GeometryError> {
    let d = samples.first().map_or(0, |s| s.z.len());
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..d).map(|i| format!("z_{i}")).collect();
    header.push("action".into());
    header.push("tag".into());
    w.write_record(&header).map_err(csv_err)?;
    for s in samples {
        let mut rec: Vec<String> = s.z.iter().map(|v| format!("{v:?}")).collect();
        rec.push(format!("{:?}", s.action));
        rec.push(s.tag.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> GeometryError {
    GeometryError::Parse(e.to_string())
}
