//! Dataset loading, synthetic generation, splitting and persistence.
//!
//! All randomness comes from `ChaCha8Rng` seeded with a `u64`, which
//! produces the same stream on every platform.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FactorModel, RatingTriple, RatingsDataset};

/// Parameters for a random integer-valued rating matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub m: usize,
    pub low: i64,
    pub high: i64,
    pub seed: u64,
    /// Fraction of cells observed; 1.0 is dense.
    pub density: f64,
}

impl SyntheticSpec {
    pub fn dense(n: usize, m: usize, low: i64, high: i64, seed: u64) -> Self {
        Self {
            n,
            m,
            low,
            high,
            seed,
            density: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("synthetic dimensions must be positive".into()));
        }
        if self.low > self.high {
            return Err(Error::InvalidArgument(format!(
                "synthetic range {}..{} is empty",
                self.low, self.high
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "density {} outside (0, 1]",
                self.density
            )));
        }
        Ok(())
    }
}

impl fmt::Display for SyntheticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{},{},{},{},{}",
            self.n, self.m, self.low, self.high, self.seed, self.density
        )
    }
}

impl FromStr for SyntheticSpec {
    type Err = Error;

    /// `NxM,LOW,HIGH,SEED[,DENSITY]`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse synthetic spec '{s}'"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if !(4..=5).contains(&parts.len()) {
            return Err(bad());
        }
        let (n, m) = parts[0].split_once('x').ok_or_else(bad)?;
        let spec = SyntheticSpec {
            n: n.parse().map_err(|_| bad())?,
            m: m.parse().map_err(|_| bad())?,
            low: parts[1].parse().map_err(|_| bad())?,
            high: parts[2].parse().map_err(|_| bad())?,
            seed: parts[3].parse().map_err(|_| bad())?,
            density: parts.get(4).map_or(Ok(1.0), |d| d.parse()).map_err(|_| bad())?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DatasetFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, 1-based ids.
    MovieLens100K,
    /// `user::item::rating::timestamp` (1M) or `userId,movieId,rating,timestamp`
    /// with a header line (20M); 1-based ids.
    MovieLens1M20M,
    /// Comma-separated dense rows; `99` marks a missing rating.
    JesterDense,
    /// `row,col,value` with 0-based indices; optional `# dims N M` line.
    TripleCsv,
    /// Generated in memory; the path is ignored.
    Synthetic(SyntheticSpec),
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ml100k" | "movielens100k" => DatasetFormat::MovieLens100K,
            "ml1m" | "ml20m" | "movielens" => DatasetFormat::MovieLens1M20M,
            "jester" => DatasetFormat::JesterDense,
            "triples" | "csv" => DatasetFormat::TripleCsv,
            other => match other.strip_prefix("synthetic:") {
                Some(spec) => DatasetFormat::Synthetic(spec.parse()?),
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown dataset format '{other}' (expected ml100k, ml1m, ml20m, jester, triples or synthetic:SPEC)"
                    )))
                }
            },
        })
    }
}

const JESTER_MISSING: f64 = 99.0;

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

struct Collected {
    entries: Vec<RatingTriple>,
    dims: Option<(usize, usize)>,
}

impl Collected {
    fn finish(self, path: &Path, scale: Option<(f64, f64)>) -> Result<RatingsDataset> {
        if self.entries.is_empty() && self.dims.is_none() {
            return Err(parse_err(path, 0, "no ratings found"));
        }
        if let Some((lo, hi)) = scale {
            let outside = self.entries.iter().filter(|t| t.value < lo || t.value > hi).count();
            if outside > 0 {
                log::warn!(
                    "{}: {outside} ratings outside the {lo}..{hi} scale were kept",
                    path.display()
                );
            }
        }
        let (n, m) = self.dims.unwrap_or_else(|| {
            self.entries.iter().fold((0, 0), |(n, m), t| (n.max(t.row + 1), m.max(t.col + 1)))
        });
        RatingsDataset::new(n, m, self.entries)
    }
}

fn parse_index(field: &str, one_based: bool, path: &Path, line: usize) -> Result<usize> {
    let id: usize = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid index '{field}'")))?;
    if one_based {
        id.checked_sub(1)
            .ok_or_else(|| parse_err(path, line, "ids are 1-based; found 0"))
    } else {
        Ok(id)
    }
}

fn parse_value(field: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("invalid rating '{field}'")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("non-finite rating '{field}'")));
    }
    Ok(v)
}

fn parse_movielens(text: &str, path: &Path, separator: Option<&str>) -> Result<Collected> {
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = match separator {
            Some(sep) => line.split(sep).collect(),
            None if line.contains("::") => line.split("::").collect(),
            None => line.split(',').collect(),
        };
        if idx == 0 && fields[0].trim().parse::<usize>().is_err() {
            continue; // header
        }
        if fields.len() < 3 {
            return Err(parse_err(path, lineno, "expected user, item and rating fields"));
        }
        entries.push(RatingTriple::new(
            parse_index(fields[0], true, path, lineno)?,
            parse_index(fields[1], true, path, lineno)?,
            parse_value(fields[2], path, lineno)?,
        ));
    }
    Ok(Collected { entries, dims: None })
}

fn parse_jester(text: &str, path: &Path) -> Result<Collected> {
    let mut entries = Vec::new();
    let mut rows = 0;
    let mut width = 0;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        for (col, field) in line.split(',').enumerate() {
            let value = parse_value(field, path, idx + 1)?;
            width = width.max(col + 1);
            if value != JESTER_MISSING {
                entries.push(RatingTriple::new(rows, col, value));
            }
        }
        rows += 1;
    }
    let dims = (rows > 0).then_some((rows, width));
    Ok(Collected { entries, dims })
}

fn parse_triples(text: &str, path: &Path) -> Result<Collected> {
    let mut entries = Vec::new();
    let mut dims = None;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let words: Vec<&str> = comment.split_whitespace().collect();
            if let ["dims", n, m] = words.as_slice() {
                let dim = |s: &str| s.parse::<usize>().map_err(|_| parse_err(path, lineno, "invalid dims line"));
                dims = Some((dim(n)?, dim(m)?));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if entries.is_empty() && fields[0].trim().parse::<usize>().is_err() {
            continue; // header
        }
        if fields.len() != 3 {
            return Err(parse_err(path, lineno, "expected row,col,value"));
        }
        entries.push(RatingTriple::new(
            parse_index(fields[0], false, path, lineno)?,
            parse_index(fields[1], false, path, lineno)?,
            parse_value(fields[2], path, lineno)?,
        ));
    }
    Ok(Collected { entries, dims })
}

pub fn load(path: &Path, fmt: DatasetFormat) -> Result<RatingsDataset> {
    if let DatasetFormat::Synthetic(spec) = fmt {
        return gen_synthetic(&spec);
    }
    let text = read_text(path)?;
    if text.trim().is_empty() {
        return Err(parse_err(path, 0, "empty file"));
    }
    match fmt {
        DatasetFormat::MovieLens100K => parse_movielens(&text, path, Some("\t"))?.finish(path, Some((1.0, 5.0))),
        DatasetFormat::MovieLens1M20M => parse_movielens(&text, path, None)?.finish(path, Some((0.5, 5.0))),
        DatasetFormat::JesterDense => parse_jester(&text, path)?.finish(path, Some((-10.0, 10.0))),
        DatasetFormat::TripleCsv => parse_triples(&text, path)?.finish(path, None),
        DatasetFormat::Synthetic(_) => unreachable!(),
    }
}

/// Uniform integer ratings in `[low, high]` stored as reals.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<RatingsDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cells = spec.n * spec.m;
    let chosen: Vec<usize> = if spec.density >= 1.0 {
        (0..cells).collect()
    } else {
        let count = ((cells as f64 * spec.density).round() as usize).clamp(1, cells);
        let mut picked = index::sample(&mut rng, cells, count).into_vec();
        picked.sort_unstable();
        picked
    };
    let entries = chosen
        .into_iter()
        .map(|cell| {
            let value = rng.gen_range(spec.low..=spec.high) as f64;
            RatingTriple::new(cell / spec.m, cell % spec.m, value)
        })
        .collect();
    RatingsDataset::new(spec.n, spec.m, entries)
}

/// Dense `X = U* V*^T` with `U*`, `V*` uniform in `[0, 1)`; returns the
/// generating factors alongside the data.
pub fn gen_low_rank(n: usize, m: usize, k: usize, seed: u64) -> Result<(RatingsDataset, FactorModel)> {
    if n == 0 || m == 0 || k == 0 {
        return Err(Error::InvalidArgument("low-rank dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: Vec<f64> = (0..n * k).map(|_| rng.gen::<f64>()).collect();
    let v: Vec<f64> = (0..m * k).map(|_| rng.gen::<f64>()).collect();
    let truth = FactorModel::from_parts(n, m, k, u, v)?;
    let entries = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| RatingTriple::new(i, j, truth.predict(i, j)))
        .collect();
    Ok((RatingsDataset::new(n, m, entries)?, truth))
}

/// Uniform per-entry holdout of `round(len * test_fraction)` entries.
pub fn split(d: &RatingsDataset, test_fraction: f64, seed: u64) -> Result<(RatingsDataset, RatingsDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let len = d.len();
    let test_count = (len as f64 * test_fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; len];
    for i in index::sample(&mut rng, len, test_count) {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(len - test_count), Vec::with_capacity(test_count));
    for (t, held_out) in d.entries().iter().zip(is_test) {
        if held_out {
            test.push(*t);
        } else {
            train.push(*t);
        }
    }
    Ok((
        RatingsDataset::new(d.n(), d.m(), train)?,
        RatingsDataset::new(d.n(), d.m(), test)?,
    ))
}

/// Writes `contents` next to `path` and renames it into place, so a
/// failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let mut tmp = PathBuf::from(path);
    let name = path
        .file_name()
        .map(|n| format!(".{}.partial", n.to_string_lossy()))
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    tmp.set_file_name(name);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(contents.as_bytes())?;
            f.sync_all()
        })
        .and_then(|_| fs::rename(&tmp, path));
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("writing {}", path.display()), e)
    })
}

pub fn triples_to_csv(d: &RatingsDataset) -> String {
    let mut out = String::with_capacity(d.len() * 12);
    out.push_str(&format!("# dims {} {}\n", d.n(), d.m()));
    for t in d.entries() {
        out.push_str(&format!("{},{},{:?}\n", t.row, t.col, t.value));
    }
    out
}

pub fn model_to_string(model: &FactorModel) -> Result<String> {
    if model.k == 0 {
        return Err(Error::InvalidArgument("cannot save a model with k = 0".into()));
    }
    if model.u.len() != model.n * model.k || model.v.len() != model.m * model.k {
        return Err(Error::DimensionMismatch("factor buffers do not match n, m, k".into()));
    }
    let mut out = format!("{} {} {}\n", model.n, model.m, model.k);
    for row in model.u.chunks(model.k).chain(model.v.chunks(model.k)) {
        let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn model_from_str(text: &str) -> Result<FactorModel> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::MalformedModel("missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::MalformedModel(format!("bad header '{header}'")))?;
    let [n, m, k] = dims[..] else {
        return Err(Error::MalformedModel(format!("header '{header}' is not 'n m k'")));
    };
    if k == 0 {
        return Err(Error::MalformedModel("k must be >= 1".into()));
    }
    let rows: Vec<&str> = lines.collect();
    if rows.len() != n + m {
        return Err(Error::MalformedModel(format!(
            "header declares {n} + {m} rows but the file has {}",
            rows.len()
        )));
    }
    let mut values = Vec::with_capacity((n + m) * k);
    for (idx, row) in rows.iter().enumerate() {
        let before = values.len();
        for word in row.split_whitespace() {
            let x: f64 = word
                .parse()
                .map_err(|_| Error::MalformedModel(format!("row {}: bad value '{word}'", idx + 1)))?;
            values.push(x);
        }
        if values.len() - before != k {
            return Err(Error::MalformedModel(format!(
                "row {} has {} values, expected {k}",
                idx + 1,
                values.len() - before
            )));
        }
    }
    let v = values.split_off(n * k);
    FactorModel::from_parts(n, m, k, values, v)
}

pub fn save_model(model: &FactorModel, path: &Path) -> Result<()> {
    write_atomic(path, &model_to_string(model)?)
}

pub fn load_model(path: &Path) -> Result<FactorModel> {
    model_from_str(&read_text(path)?)
}
