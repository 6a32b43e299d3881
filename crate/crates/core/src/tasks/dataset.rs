//! Dataset files.
//!
//! Both forms carry the generating task kind, seed and config (as JSON)
//! ahead of a table of `f64` columns.
//!
//! CSV: a first line `# kind=<kind> seed=<seed> config=<json>`, a header
//! row, then one row per record. Numbers use Rust's shortest round-trip
//! formatting, so parsing the file back yields identical bits.
//!
//! Binary (little-endian): magic `DVNCDS01`, length-prefixed kind, u64 seed,
//! length-prefixed config JSON, u64 column count, length-prefixed column
//! names, u64 row count, then row-major f64 values.
//!
//! Adding schema: `sample, step, value, marker, target`.
//! Grid-world schema: `transition, object, row, col, action, next_row,
//! next_col`, with `action` the index into up/down/left/right and -1 for no
//! push.

use std::io::{BufRead, Read, Write};

use serde::Serialize;

use super::adding::AddingSamples;
use super::gridworld::{GridWorldConfig, Transition};
use crate::error::{Error, Result};
use crate::quantizer::{read_f64, read_u64};

const MAGIC: &[u8; 8] = b"DVNCDS01";

pub const ADDING_COLUMNS: [&str; 5] = ["sample", "step", "value", "marker", "target"];
pub const GRIDWORLD_COLUMNS: [&str; 7] = ["transition", "object", "row", "col", "action", "next_row", "next_col"];

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub kind: String,
    pub seed: u64,
    pub config_json: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Dataset {
    fn new(kind: &str, seed: u64, config: &impl Serialize, columns: &[&str]) -> Result<Self> {
        Ok(Dataset {
            kind: kind.into(),
            seed,
            config_json: serde_json::to_string(config)?,
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        })
    }

    pub fn from_adding(samples: &AddingSamples) -> Result<Self> {
        let mut d = Dataset::new("adding", samples.seed, &samples.config, &ADDING_COLUMNS)?;
        for (i, s) in samples.samples.iter().enumerate() {
            for (t, (&v, &m)) in s.values.iter().zip(&s.markers).enumerate() {
                d.rows.push(vec![i as f64, t as f64, v, m as u8 as f64, s.target]);
            }
        }
        Ok(d)
    }

    pub fn from_gridworld(config: &GridWorldConfig, seed: u64, transitions: &[Transition]) -> Result<Self> {
        let mut d = Dataset::new("gridworld", seed, config, &GRIDWORLD_COLUMNS)?;
        for (i, t) in transitions.iter().enumerate() {
            for (o, ((&(r, c), a), &(nr, nc))) in t.state.iter().zip(&t.actions).zip(&t.next).enumerate() {
                let action = a.index().map_or(-1.0, |k| k as f64);
                d.rows.push(vec![i as f64, o as f64, r as f64, c as f64, action, nr as f64, nc as f64]);
            }
        }
        Ok(d)
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        if self.config_json.contains('\n') || self.kind.contains(char::is_whitespace) {
            return Err(Error::invalid("dataset kind and config must fit on the header line"));
        }
        writeln!(w, "# kind={} seed={} config={}", self.kind, self.seed, self.config_json)?;
        writeln!(w, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let meta = lines.next().ok_or_else(|| Error::Format("empty dataset file".into()))??;
        let meta = meta
            .strip_prefix("# kind=")
            .ok_or_else(|| Error::Format("missing dataset header line".into()))?;
        let (kind, rest) = meta.split_once(" seed=").ok_or_else(|| Error::Format("header lacks seed".into()))?;
        let (seed, config_json) = rest.split_once(" config=").ok_or_else(|| Error::Format("header lacks config".into()))?;
        let seed = seed.parse().map_err(|e| Error::Format(format!("bad seed `{seed}`: {e}")))?;
        let columns: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::Format("missing column header".into()))??
            .split(',')
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            let row = line
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|e| Error::Format(format!("row {}: `{c}`: {e}", n + 1))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(Error::Format(format!("row {} has {} cells, expected {}", n + 1, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(Dataset {
            kind: kind.into(),
            seed,
            config_json: config_json.into(),
            columns,
            rows,
        })
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
            w.write_all(&(s.len() as u64).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
            Ok(())
        }
        w.write_all(MAGIC)?;
        put_str(w, &self.kind)?;
        w.write_all(&self.seed.to_le_bytes())?;
        put_str(w, &self.config_json)?;
        w.write_all(&(self.columns.len() as u64).to_le_bytes())?;
        for c in &self.columns {
            put_str(w, c)?;
        }
        w.write_all(&(self.rows.len() as u64).to_le_bytes())?;
        for row in &self.rows {
            if row.len() != self.columns.len() {
                return Err(Error::invalid("row width differs from the column count"));
            }
            for v in row {
                w.write_all(&v.to_bits().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        fn get_str(r: &mut impl Read) -> Result<String> {
            let n = read_u64(r)? as usize;
            let mut b = vec![0u8; n];
            r.read_exact(&mut b)?;
            String::from_utf8(b).map_err(|e| Error::Format(e.to_string()))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dataset file (bad magic)".into()));
        }
        let kind = get_str(r)?;
        let seed = read_u64(r)?;
        let config_json = get_str(r)?;
        let ncols = read_u64(r)? as usize;
        let columns = (0..ncols).map(|_| get_str(r)).collect::<Result<Vec<_>>>()?;
        let nrows = read_u64(r)? as usize;
        let rows = (0..nrows)
            .map(|_| (0..ncols).map(|_| read_f64(r)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            kind,
            seed,
            config_json,
            columns,
            rows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{gen_adding, gen_gridworld, GridWorldConfig};

    #[test]
    fn csv_and_binary_round_trip() {
        let a = Dataset::from_adding(&gen_adding(4, 5, 2, 9).unwrap()).unwrap();
        let cfg = GridWorldConfig {
            num_objects: 3,
            grid_size: 5,
            steps: 4,
            episodes: 2,
        };
        let g = Dataset::from_gridworld(&cfg, 1, &gen_gridworld(&cfg, 1).unwrap()).unwrap();
        for d in [a, g] {
            let mut csv = Vec::new();
            d.write_csv(&mut csv).unwrap();
            assert_eq!(Dataset::read_csv(csv.as_slice()).unwrap(), d);
            let mut bin = Vec::new();
            d.write_binary(&mut bin).unwrap();
            assert_eq!(Dataset::read_binary(&mut bin.as_slice()).unwrap(), d);
        }
    }

    #[test]
    fn header_records_config() {
        let d = Dataset::from_adding(&gen_adding(1, 3, 1, 42).unwrap()).unwrap();
        let mut csv = Vec::new();
        d.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("# kind=adding seed=42 config={\"seq_len\":3,\"gap_len\":1,\"max_value\":1.0}\n"));
        assert_eq!(text.lines().nth(1).unwrap(), "sample,step,value,marker,target");
    }
}
