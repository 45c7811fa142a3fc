//! Binary network observations: loading, synthetic generation and
//! train/test hold-out masks.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// An `n x n` binary interaction matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedNetwork {
    n: usize,
    adjacency: Vec<u8>,
    directed: bool,
    include_diagonal: bool,
}

impl ObservedNetwork {
    /// Wraps a row-major adjacency. Entries must be 0/1, and symmetric when
    /// `directed` is false.
    pub fn new(n: usize, adjacency: Vec<u8>, directed: bool, include_diagonal: bool) -> Result<Self> {
        if n == 0 {
            return Err(Error::input("network must have at least one node"));
        }
        if adjacency.len() != n * n {
            return Err(Error::input(format!(
                "adjacency has {} entries, expected {}",
                adjacency.len(),
                n * n
            )));
        }
        if let Some(pos) = adjacency.iter().position(|&v| v > 1) {
            return Err(Error::input(format!(
                "adjacency entry ({}, {}) is {}, expected 0 or 1",
                pos / n,
                pos % n,
                adjacency[pos]
            )));
        }
        if !directed {
            for i in 0..n {
                for j in (i + 1)..n {
                    if adjacency[i * n + j] != adjacency[j * n + i] {
                        return Err(Error::input(format!(
                            "undirected network is asymmetric at ({i}, {j})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n,
            adjacency,
            directed,
            include_diagonal,
        })
    }

    pub fn empty(n: usize, directed: bool, include_diagonal: bool) -> Result<Self> {
        Self::new(n, vec![0; n * n], directed, include_diagonal)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn directed(&self) -> bool {
        self.directed
    }

    pub fn include_diagonal(&self) -> bool {
        self.include_diagonal
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.adjacency[i * self.n + j]
    }

    pub fn adjacency(&self) -> &[u8] {
        &self.adjacency
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| f64::from(self.get(i, j)))
    }

    /// Whether `(i, j)` takes part in the likelihood at all.
    #[inline]
    pub fn is_modeled(&self, i: usize, j: usize) -> bool {
        self.include_diagonal || i != j
    }

    /// The canonical modeled pairs in row-major order: every `(i, j)` for a
    /// directed network, only `i <= j` for an undirected one.
    pub fn modeled_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.n {
            let start = if self.directed { 0 } else { i };
            for j in start..self.n {
                if self.is_modeled(i, j) {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }

    /// Writes one `i j` line per edge (`i <= j` only when undirected).
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.n {
            let start = if self.directed { 0 } else { i };
            for j in start..self.n {
                if self.get(i, j) == 1 {
                    writeln!(out, "{i} {j}")?;
                }
            }
        }
        Ok(())
    }

    /// Dense comma-separated export, one row per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.n {
            let row: Vec<&str> = (0..self.n)
                .map(|j| if self.get(i, j) == 1 { "1" } else { "0" })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, directed: bool, include_diagonal: bool) -> Result<Self> {
        let mut values = Vec::new();
        let mut n = None;
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let row: Vec<u8> = trimmed
                .split(',')
                .map(|tok| match tok.trim() {
                    "0" => Ok(0),
                    "1" => Ok(1),
                    other => Err(Error::Parse {
                        line: idx + 1,
                        message: format!("expected 0 or 1, found {other:?}"),
                    }),
                })
                .collect::<Result<_>>()?;
            match n {
                None => n = Some(row.len()),
                Some(width) if width != row.len() => {
                    return Err(Error::Parse {
                        line: idx + 1,
                        message: format!("row has {} columns, expected {width}", row.len()),
                    })
                }
                _ => {}
            }
            values.extend(row);
        }
        let n = n.ok_or_else(|| Error::input("adjacency file is empty"))?;
        if values.len() != n * n {
            return Err(Error::input(format!(
                "adjacency has {} rows of width {n}; matrix must be square",
                values.len() / n
            )));
        }
        Self::new(n, values, directed, include_diagonal)
    }
}

/// Parses whitespace-separated zero-based `i j` lines. Lines starting with
/// `#` and blank lines are skipped; repeated edges are idempotent. The
/// result models no self-pairs.
pub fn parse_edge_list<R: BufRead>(input: R, n: usize, directed: bool) -> Result<ObservedNetwork> {
    if n == 0 {
        return Err(Error::input("node count must be positive"));
    }
    let mut adjacency = vec![0u8; n * n];
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut tokens = trimmed.split_whitespace();
        let mut next_index = |what: &str| -> Result<usize> {
            let tok = tokens.next().ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("missing {what} node index"),
            })?;
            tok.parse::<usize>().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("malformed node index {tok:?}"),
            })
        };
        let i = next_index("source")?;
        let j = next_index("target")?;
        if tokens.next().is_some() {
            return Err(Error::Parse {
                line: lineno,
                message: "expected exactly two node indices".into(),
            });
        }
        if i >= n || j >= n {
            return Err(Error::Input(format!(
                "line {lineno}: node index {} out of range for n = {n}",
                i.max(j)
            )));
        }
        adjacency[i * n + j] = 1;
        if !directed {
            adjacency[j * n + i] = 1;
        }
    }
    ObservedNetwork::new(n, adjacency, directed, false)
}

/// A set of canonical index pairs. When `symmetric`, each `(i, j)` also
/// stands for `(j, i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationMask {
    n: usize,
    symmetric: bool,
    pairs: Vec<(usize, usize)>,
}

impl ObservationMask {
    pub fn new(n: usize, symmetric: bool, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::input(format!("pair ({i}, {j}) out of range for n = {n}")));
            }
            let key = if symmetric && j < i { (j, i) } else { (i, j) };
            if !set.insert(key) {
                return Err(Error::input(format!("duplicate pair ({i}, {j})")));
            }
        }
        Ok(Self {
            n,
            symmetric,
            pairs: set.into_iter().collect(),
        })
    }

    /// Every modeled pair of `net`.
    pub fn full(net: &ObservedNetwork) -> Self {
        Self {
            n: net.n(),
            symmetric: !net.directed(),
            pairs: net.modeled_pairs(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        let key = if self.symmetric && j < i { (j, i) } else { (i, j) };
        self.pairs.binary_search(&key).is_ok()
    }

    /// Dense `n x n` indicator, mirrored for symmetric masks.
    pub fn indicator(&self) -> PairIndicator {
        let mut flags = vec![false; self.n * self.n];
        for &(i, j) in &self.pairs {
            flags[i * self.n + j] = true;
            if self.symmetric {
                flags[j * self.n + i] = true;
            }
        }
        PairIndicator { n: self.n, flags }
    }

    /// Random partition into `(first, rest)` with
    /// `|first| = round(fraction * len)`.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::input(format!("train fraction {fraction} not in (0, 1]")));
        }
        if self.pairs.is_empty() {
            return Err(Error::input("cannot split an empty pair set"));
        }
        let mut shuffled = self.pairs.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.shuffle(&mut rng);
        let k = (fraction * shuffled.len() as f64).round() as usize;
        let rest = shuffled.split_off(k);
        let build = |mut pairs: Vec<(usize, usize)>| {
            pairs.sort_unstable();
            Self {
                n: self.n,
                symmetric: self.symmetric,
                pairs,
            }
        };
        Ok((build(shuffled), build(rest)))
    }
}

/// Row-major boolean matrix over all ordered pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairIndicator {
    n: usize,
    flags: Vec<bool>,
}

impl PairIndicator {
    pub fn none(n: usize) -> Self {
        Self {
            n,
            flags: vec![false; n * n],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.flags[i * self.n + j]
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

/// Uniformly random train/test partition of the modeled pairs of `net`.
pub fn holdout_split(net: &ObservedNetwork, train_fraction: f64, seed: u64) -> Result<(ObservationMask, ObservationMask)> {
    ObservationMask::full(net).split(train_fraction, seed)
}

/// Per-pair feature vectors `r_ij`, stored `(i, j, k)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SideInfo {
    n: usize,
    p: usize,
    features: Vec<f64>,
}

impl SideInfo {
    pub fn none(n: usize) -> Self {
        Self {
            n,
            p: 0,
            features: Vec::new(),
        }
    }

    pub fn new(n: usize, p: usize, features: Vec<f64>) -> Result<Self> {
        if features.len() != n * n * p {
            return Err(Error::input(format!(
                "side information has {} values, expected {n}x{n}x{p}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("side information contains non-finite values"));
        }
        Ok(Self { n, p, features })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn features(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.n + j) * self.p;
        &self.features[start..start + self.p]
    }

    /// Reads `i,j,f_1,...,f_p` rows; pairs not listed get zero features.
    pub fn read_csv<R: BufRead>(input: R, n: usize) -> Result<Self> {
        let mut p = None;
        let mut features = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let parse_err = |message: String| Error::Parse {
                line: idx + 1,
                message,
            };
            let tokens: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if tokens.len() < 3 {
                return Err(parse_err("expected i,j followed by at least one feature".into()));
            }
            let width = tokens.len() - 2;
            let p = *p.get_or_insert_with(|| {
                features = vec![0.0; n * n * width];
                width
            });
            if width != p {
                return Err(parse_err(format!("row has {width} features, expected {p}")));
            }
            let i: usize = tokens[0].parse().map_err(|_| parse_err(format!("bad index {:?}", tokens[0])))?;
            let j: usize = tokens[1].parse().map_err(|_| parse_err(format!("bad index {:?}", tokens[1])))?;
            if i >= n || j >= n {
                return Err(Error::Input(format!("line {}: pair ({i}, {j}) out of range", idx + 1)));
            }
            for (k, tok) in tokens[2..].iter().enumerate() {
                features[(i * n + j) * p + k] = tok
                    .parse()
                    .map_err(|_| parse_err(format!("bad feature value {tok:?}")))?;
            }
        }
        match p {
            None => Ok(Self::none(n)),
            Some(p) => Self::new(n, p, features),
        }
    }
}

/// Hard group labels with their one-hot `d x n` encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMembership {
    d: usize,
    assignments: Vec<usize>,
}

impl GroundTruthMembership {
    pub fn new(d: usize, assignments: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = assignments.iter().find(|&&c| c >= d) {
            return Err(Error::input(format!("group index {bad} not below d = {d}")));
        }
        Ok(Self { d, assignments })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn one_hot(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d, self.assignments.len(), |r, i| {
            if self.assignments[i] == r {
                1.0
            } else {
                0.0
            }
        })
    }
}

/// Block-diagonal cliques (self-pairs included) with `round(flip_rate * n^2)`
/// distinct entries toggled. The result is directed for modeling because
/// the flips are not mirrored.
pub fn synth_cliques(
    num_cliques: usize,
    clique_size: usize,
    flip_rate: f64,
    seed: u64,
) -> Result<(ObservedNetwork, GroundTruthMembership)> {
    if num_cliques == 0 || clique_size == 0 {
        return Err(Error::input("need at least one clique of at least one node"));
    }
    if !(0.0..=1.0).contains(&flip_rate) {
        return Err(Error::input(format!("flip rate {flip_rate} not in [0, 1]")));
    }
    let n = num_cliques * clique_size;
    let assignments: Vec<usize> = (0..n).map(|i| i / clique_size).collect();
    let mut adjacency: Vec<u8> = (0..n * n)
        .map(|idx| u8::from(assignments[idx / n] == assignments[idx % n]))
        .collect();
    let flips = (flip_rate * (n * n) as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for idx in index::sample(&mut rng, n * n, flips) {
        adjacency[idx] ^= 1;
    }
    let net = ObservedNetwork::new(n, adjacency, true, true)?;
    let truth = GroundTruthMembership::new(num_cliques, assignments)?;
    Ok((net, truth))
}
