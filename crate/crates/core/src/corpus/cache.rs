//! JSON-lines dataset cache: a header line, then one example per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Transform};
use crate::error::{Error, Result};

pub const CACHE_FORMAT: &str = "posbias-dataset/1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    name: String,
    count: usize,
    provenance: Vec<Transform>,
}

pub fn write_cache(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: CACHE_FORMAT.to_string(),
        name: dataset.name.clone(),
        count: dataset.len(),
        provenance: dataset.provenance.clone(),
    };
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::parse(path, e))?;
    w.write_all(b"\n").map_err(io)?;
    for ex in &dataset.examples {
        serde_json::to_writer(&mut w, ex).map_err(|e| Error::parse(path, e))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(path, "empty dataset cache"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&header).map_err(|e| Error::parse(path, e))?;
    if header.format != CACHE_FORMAT {
        return Err(Error::format(
            path,
            format!(
                "unsupported cache format {:?}, expected {CACHE_FORMAT:?}",
                header.format
            ),
        ));
    }
    let mut examples = Vec::with_capacity(header.count);
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::parse(path, e))?;
        examples.push(ex);
    }
    if examples.len() != header.count {
        return Err(Error::format(
            path,
            format!("header announces {} examples, found {}", header.count, examples.len()),
        ));
    }
    let ds = Dataset {
        name: header.name,
        examples,
        provenance: header.provenance,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let ex = Example::build("a", "Alpha one. Beta two.", "q?", &[("two".into(), 16)]).unwrap();
        let mut ds = Dataset::new("toy", vec![ex]);
        ds.provenance.push(Transform::Subset { k: 2 });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        write_cache(&ds, &p).unwrap();
        assert_eq!(read_cache(&p).unwrap(), ds);
        let bytes = std::fs::read(&p).unwrap();
        write_cache(&ds, &p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), bytes);
    }

    #[test]
    fn rejects_foreign_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(
            &p,
            "{\"format\":\"other/9\",\"name\":\"x\",\"count\":0,\"provenance\":[]}\n",
        )
        .unwrap();
        assert!(matches!(read_cache(&p), Err(Error::Format { .. })));
    }
}
