//! Dataset ingestion, synthetic generation, and metric-trace serialization.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::inference::StreamPoint;
use crate::learning::{init_model, BasketEvent, LearningConfig};
use crate::model::{NdppModel, Subset};

/// Streaming reader for the basket-text format: one basket per line,
/// whitespace-separated item ids, blank lines skipped. Baskets larger than
/// `dmax` are dropped and counted; item ids are bounded by `n` when declared.
pub struct BasketReader<R: BufRead> {
    reader: R,
    line_no: usize,
    n: Option<usize>,
    dmax: Option<usize>,
    dropped: u64,
}

impl BasketReader<BufReader<File>> {
    pub fn open(path: &Path, n: Option<usize>, dmax: Option<usize>) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(BasketReader::new(BufReader::new(file), n, dmax))
    }
}

impl<R: BufRead> BasketReader<R> {
    pub fn new(reader: R, n: Option<usize>, dmax: Option<usize>) -> Self {
        BasketReader {
            reader,
            line_no: 0,
            n,
            dmax,
            dropped: 0,
        }
    }

    /// Baskets dropped so far for exceeding `dmax`.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    fn parse_line(&self, line: &str) -> Result<Option<BasketEvent>> {
        let mut ids = Vec::new();
        for tok in line.split_whitespace() {
            let id: usize = tok.parse().map_err(|_| Error::Parse {
                line: self.line_no,
                msg: format!("invalid item id {tok:?}"),
            })?;
            if let Some(n) = self.n {
                if id >= n {
                    return Err(Error::Parse {
                        line: self.line_no,
                        msg: format!("item id {id} >= declared n = {n}"),
                    });
                }
            }
            ids.push(id);
        }
        if ids.is_empty() {
            return Ok(None);
        }
        let items = Subset::from_unsorted(ids).map_err(|_| Error::Parse {
            line: self.line_no,
            msg: "duplicate item in basket".into(),
        })?;
        Ok(Some(BasketEvent { items }))
    }
}

impl<R: BufRead> Iterator for BasketReader<R> {
    type Item = Result<BasketEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let mut line = String::new();
            self.line_no += 1;
            match self.reader.read_line(&mut line) {
                Ok(0) => return None,
                Ok(_) => {}
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line_no,
                        msg: e.to_string(),
                    }))
                }
            }
            match self.parse_line(&line) {
                Ok(None) => continue,
                Ok(Some(basket)) => {
                    if let Some(dmax) = self.dmax {
                        if basket.items.len() > dmax {
                            self.dropped += 1;
                            continue;
                        }
                    }
                    return Some(Ok(basket));
                }
                Err(e) => return Some(Err(e)),
            }
        }
    }
}

/// Writes baskets in the one-per-line text format.
pub fn write_baskets(path: &Path, baskets: &[BasketEvent]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for b in baskets {
        let ids: Vec<String> = b.items.indices().iter().map(|i| i.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Parameters for a reproducible synthetic model.
#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub c_block_min: f64,
    pub c_block_max: f64,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d,
            seed,
            init_scale: 1.0,
            c_block_min: 0.5,
            c_block_max: 1.5,
        }
    }
}

/// Gaussian V and B with block-skew C; a pure function of the spec.
pub fn generate_synthetic_model(spec: &SyntheticSpec) -> Result<NdppModel> {
    let mut cfg = LearningConfig::new(spec.n, spec.d)?;
    cfg.init_scale = spec.init_scale;
    cfg.c_block_min = spec.c_block_min;
    cfg.c_block_max = spec.c_block_max;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    init_model(&cfg, &mut rng)
}

/// Uniform random permutation of a materialized stream under the seed.
pub fn permute_stream<T>(mut stream: Vec<T>, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stream.shuffle(&mut rng);
    stream
}

/// One row of an inference metric trace.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: u64,
    pub algorithm: String,
    pub objective: f64,
    pub det_evals: u64,
    pub swaps: u64,
}

/// Per-step inference metrics, serialized as
/// `step,algorithm,objective,det_evals,swaps`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricTrace {
    pub rows: Vec<MetricRow>,
}

const METRIC_HEADER: &str = "step,algorithm,objective,det_evals,swaps";

/// Writes a trace with `# `-prefixed reproduction comments before the header.
/// Floats use the shortest representation that round-trips bit-exactly.
pub fn write_trace(path: &Path, comments: &[String], trace: &MetricTrace) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(out, "{METRIC_HEADER}").map_err(io)?;
    for r in &trace.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step, r.algorithm, r.objective, r.det_evals, r.swaps
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_trace(path: &Path) -> Result<MetricTrace> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != METRIC_HEADER {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("expected header {METRIC_HEADER:?}"),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        rows.push(MetricRow {
            step: fields[0]
                .parse()
                .map_err(|_| parse_err("bad step".into()))?,
            algorithm: fields[1].to_string(),
            objective: fields[2]
                .parse()
                .map_err(|_| parse_err("bad objective".into()))?,
            det_evals: fields[3]
                .parse()
                .map_err(|_| parse_err("bad det_evals".into()))?,
            swaps: fields[4]
                .parse()
                .map_err(|_| parse_err("bad swaps".into()))?,
        });
    }
    Ok(MetricTrace { rows })
}

const LEARN_HEADER: &str = "step,basket_size,psi,skipped";

/// Writes a learning trace (`step,basket_size,psi,skipped`).
pub fn write_learn_trace(
    path: &Path,
    comments: &[String],
    trace: &crate::learning::LearnTrace,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    for c in comments {
        writeln!(out, "# {c}").map_err(io)?;
    }
    writeln!(out, "{LEARN_HEADER}").map_err(io)?;
    for r in &trace.rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.step,
            r.basket_size,
            r.psi,
            if r.skipped { 1 } else { 0 }
        )
        .map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Column-stream CSV: each record is `index,v[0..d),b[0..d)` with no header.
pub fn read_stream_csv(path: &Path) -> Result<Vec<StreamPoint>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut d: Option<usize> = None;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = idx + 1;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 || fields.len().is_multiple_of(2) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected index plus 2d values, got {} fields", fields.len()),
            });
        }
        let this_d = (fields.len() - 1) / 2;
        match d {
            None => d = Some(this_d),
            Some(d0) if d0 != this_d => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("inconsistent dimension: {this_d} vs {d0}"),
                });
            }
            _ => {}
        }
        let index: usize = fields[0].parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: "bad index".into(),
        })?;
        let mut nums = Vec::with_capacity(2 * this_d);
        for f in &fields[1..] {
            nums.push(f.parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad value {f:?}"),
            })?);
        }
        points.push(StreamPoint::new(
            index,
            DVector::from_vec(nums[..this_d].to_vec()),
            DVector::from_vec(nums[this_d..].to_vec()),
        ));
    }
    Ok(points)
}

/// Writes a model's columns as a column-stream CSV in index order.
pub fn write_stream_csv(path: &Path, points: &[StreamPoint]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    let io = |e| Error::io(path, e);
    for p in points {
        let mut fields = vec![p.index.to_string()];
        fields.extend(p.v.iter().map(|x| x.to_string()));
        fields.extend(p.b.iter().map(|x| x.to_string()));
        writeln!(out, "{}", fields.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}
