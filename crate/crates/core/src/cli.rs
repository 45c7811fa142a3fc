//! Command-line front end: `synth`, `fit`, `predict`, `eval` and `cv`.
//!
//! Numeric output uses shortest round-trip formatting, so rerunning with
//! the same inputs and seed reproduces every file byte for byte (the
//! `seconds` column of the diagnostics log aside).

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::evaluation::{auc, membership_error, roc_points, unaligned_membership_error, MetricReport, SeedMetrics};
use crate::mstep::MembershipMatrix;
use crate::netdata::{holdout_split, parse_edge_list, synth_cliques, GroundTruthMembership, ObservationMask, ObservedNetwork, SideInfo};
use crate::trainer::{cross_validate_gamma, fit, score_pairs, FitConfig, FittedModel, InitMode, IterationRecord, PairScore};

pub const MEMBERSHIPS_FILE: &str = "memberships.csv";
pub const M_MEAN_FILE: &str = "m_mean.csv";
pub const BETA_FILE: &str = "beta.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const TEST_SCORES_FILE: &str = "test_scores.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const TRUTH_FILE: &str = "truth.csv";

#[derive(Debug, Parser)]
#[command(name = "smgb", version, about = "Sparse matrix-variate GP blockmodels for binary networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a noisy block-diagonal clique network and its ground truth.
    Synth(SynthArgs),
    /// Fit a model on a random training share of the pairs.
    Fit(FitArgs),
    /// Score node pairs with a fitted model.
    Predict(PredictArgs),
    /// AUC and membership distance over one or more runs.
    Eval(EvalArgs),
    /// Choose gamma by validation AUC, then fit at the chosen value.
    Cv(CvArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub cliques: usize,
    #[arg(long, default_value_t = 10)]
    pub size: usize,
    /// Total node count; overrides `--size` and must be divisible by `--cliques`.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub flip: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct FitArgs {
    /// Network file: a dense `.csv` 0/1 matrix or an edge list.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Node count, required for edge lists.
    #[arg(long)]
    pub n: Option<usize>,
    /// Treat the network as directed. Asymmetric CSV input is always directed.
    #[arg(long)]
    pub directed: bool,
    /// Pair features as `i,j,f1,...,fp` rows.
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub sigma_beta_sq: Option<f64>,
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub rank: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    pub nonnegative: bool,
    /// Starting memberships: `spectral` (default) or `random`.
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub max_outer: Option<usize>,
    /// TOML file with any of the fit settings; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write ROC points of the held-out scores.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub fit: FitArgs,
    /// Comma-separated gamma candidates.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of an earlier `fit` or `cv`.
    #[arg(long)]
    pub model: PathBuf,
    /// Whitespace-separated `i j` lines.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub side: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory holding `test_scores.csv` and `memberships.csv`.
    #[arg(long = "run")]
    pub runs: Vec<PathBuf>,
    /// Score file with a label column; may be repeated.
    #[arg(long)]
    pub scores: Vec<PathBuf>,
    /// Membership file matched by position with `--scores`.
    #[arg(long)]
    pub memberships: Vec<PathBuf>,
    /// Ground-truth membership file.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub emit_plot_data: bool,
}

/// Keys accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub input: Option<PathBuf>,
    pub n: Option<usize>,
    pub directed: Option<bool>,
    pub side: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train_fraction: Option<f64>,
    pub d: Option<usize>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<Vec<f64>>,
    pub lambda: Option<f64>,
    pub sigma_beta_sq: Option<f64>,
    pub jitter: Option<f64>,
    pub rank: Option<usize>,
    pub tol_e: Option<f64>,
    pub tol_outer: Option<f64>,
    pub max_e: Option<usize>,
    pub max_outer: Option<usize>,
    pub max_mstep: Option<usize>,
    pub seed: Option<u64>,
    pub nonnegative: Option<bool>,
    pub include_diagonal: Option<bool>,
    /// `"random"` or `"spectral"`.
    pub init: Option<String>,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Everything `fit` and `cv` need once flags, config file and defaults
/// are merged (flags win).
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedFit {
    pub config: FitConfig,
    pub input: PathBuf,
    pub n: Option<usize>,
    pub directed: bool,
    pub side: Option<PathBuf>,
    pub train_fraction: f64,
    pub out: PathBuf,
}

pub fn resolve_fit(args: &FitArgs) -> Result<ResolvedFit> {
    let file = match &args.config {
        Some(path) => RunConfigFile::load(path)?,
        None => RunConfigFile::default(),
    };
    let base = FitConfig::default();
    let init = match args.init.as_deref().or(file.init.as_deref()) {
        None => base.init,
        Some("random") => InitMode::Random,
        Some("spectral") => InitMode::Spectral,
        Some(other) => return Err(Error::Config(format!("init must be \"random\" or \"spectral\", got {other:?}"))),
    };
    let config = FitConfig {
        d: args.d.or(file.d).unwrap_or(base.d),
        gamma: args.gamma.or(file.gamma).unwrap_or(base.gamma),
        gamma_grid: file.gamma_grid.unwrap_or(base.gamma_grid),
        lambda: args.lambda.or(file.lambda).unwrap_or(base.lambda),
        sigma_beta_sq: args.sigma_beta_sq.or(file.sigma_beta_sq).unwrap_or(base.sigma_beta_sq),
        jitter: args.jitter.or(file.jitter).unwrap_or(base.jitter),
        rank: args.rank.or(file.rank),
        tol_e: file.tol_e.unwrap_or(base.tol_e),
        tol_outer: file.tol_outer.unwrap_or(base.tol_outer),
        max_e: file.max_e.unwrap_or(base.max_e),
        max_outer: args.max_outer.or(file.max_outer).unwrap_or(base.max_outer),
        max_mstep: file.max_mstep.unwrap_or(base.max_mstep),
        seed: args.seed.or(file.seed).unwrap_or(base.seed),
        nonnegative: args.nonnegative || file.nonnegative.unwrap_or(base.nonnegative),
        include_diagonal: file.include_diagonal.unwrap_or(base.include_diagonal),
        init,
    };
    config.validate()?;
    let train_fraction = args.train_fraction.or(file.train_fraction).unwrap_or(0.8);
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(Error::Config(format!("train_fraction must be in (0, 1], got {train_fraction}")));
    }
    Ok(ResolvedFit {
        config,
        input: args
            .input
            .clone()
            .or(file.input)
            .ok_or_else(|| Error::Config("no input network given (--input or `input` key)".into()))?,
        n: args.n.or(file.n),
        directed: args.directed || file.directed.unwrap_or(false),
        side: args.side.clone().or(file.side),
        train_fraction,
        out: args
            .out
            .clone()
            .or(file.out)
            .ok_or_else(|| Error::Config("no output directory given (--out or `out` key)".into()))?,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Eval(args) => cmd_eval(&args).map(|_| ()),
        Command::Cv(args) => cmd_cv(&args),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufReader::new(file))
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let size = match args.n {
        Some(n) if args.cliques == 0 || n % args.cliques != 0 => {
            return Err(Error::input(format!("--n {n} is not divisible by --cliques {}", args.cliques)))
        }
        Some(n) => n / args.cliques,
        None => args.size,
    };
    let (net, truth) = synth_cliques(args.cliques, size, args.flip, args.seed)?;
    make_dir(&args.out)?;
    let mut w = create(&args.out.join(ADJACENCY_FILE))?;
    net.write_csv(&mut w)?;
    w.flush()?;
    write_memberships(&args.out.join(TRUTH_FILE), &truth.one_hot())?;
    Ok(())
}

/// Dense `.csv` matrices are read as 0/1 adjacency (directed whenever
/// asymmetric); anything else is an edge list needing `n`.
pub fn load_network(path: &Path, n: Option<usize>, directed: bool, include_diagonal: bool) -> Result<ObservedNetwork> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        let net = ObservedNetwork::read_csv(open(path)?, true, include_diagonal)?;
        if let Some(n) = n {
            if n != net.n() {
                return Err(Error::input(format!("--n {n} but {} is {}x{}", path.display(), net.n(), net.n())));
            }
        }
        let m = net.to_matrix();
        if directed || m != m.transpose() {
            return Ok(net);
        }
        ObservedNetwork::new(net.n(), net.adjacency().to_vec(), false, include_diagonal)
    } else {
        let n = n.ok_or_else(|| Error::Config("edge-list input needs --n".into()))?;
        parse_edge_list(open(path)?, n, directed)
    }
}

fn load_side(path: Option<&Path>, n: usize) -> Result<SideInfo> {
    match path {
        Some(p) => SideInfo::read_csv(open(p)?, n),
        None => Ok(SideInfo::none(n)),
    }
}

struct FitInputs {
    resolved: ResolvedFit,
    net: ObservedNetwork,
    side: SideInfo,
    train: ObservationMask,
    test: ObservationMask,
}

fn prepare(args: &FitArgs) -> Result<FitInputs> {
    let resolved = resolve_fit(args)?;
    let net = load_network(&resolved.input, resolved.n, resolved.directed, resolved.config.include_diagonal)?;
    let side = load_side(resolved.side.as_deref(), net.n())?;
    let (train, test) = holdout_split(&net, resolved.train_fraction, resolved.config.seed)?;
    Ok(FitInputs {
        resolved,
        net,
        side,
        train,
        test,
    })
}

fn write_model_outputs(inputs: &FitInputs, model: &FittedModel, emit_plot_data: bool) -> Result<()> {
    let out = &inputs.resolved.out;
    make_dir(out)?;
    write_memberships(&out.join(MEMBERSHIPS_FILE), model.u.values())?;
    write_matrix(&out.join(M_MEAN_FILE), &model.m_mean)?;
    write_vector(&out.join(BETA_FILE), &model.beta_mean)?;
    write_diagnostics(&out.join(DIAGNOSTICS_FILE), &model.diagnostics)?;
    let scores = score_pairs(model, &inputs.side, inputs.test.pairs())?;
    let labels: Vec<u8> = scores.iter().map(|s| inputs.net.get(s.i, s.j)).collect();
    write_scores(&out.join(TEST_SCORES_FILE), &scores, Some(&labels))?;
    if emit_plot_data && !scores.is_empty() {
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        write_roc(&out.join("roc.csv"), &values, &labels)?;
    }
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let inputs = prepare(args)?;
    let model = fit(&inputs.net, &inputs.train, &inputs.side, &inputs.resolved.config)?;
    write_model_outputs(&inputs, &model, args.emit_plot_data)
}

pub fn cmd_cv(args: &CvArgs) -> Result<()> {
    let mut inputs = prepare(&args.fit)?;
    if let Some(grid) = &args.grid {
        inputs.resolved.config.gamma_grid = grid.clone();
    }
    let selection = cross_validate_gamma(&inputs.net, &inputs.train, &inputs.side, &inputs.resolved.config)?;
    write_model_outputs(&inputs, &selection.model, args.fit.emit_plot_data)?;
    let mut w = create(&inputs.resolved.out.join("cv.csv"))?;
    writeln!(w, "gamma,validation_auc")?;
    for (gamma, value) in &selection.table {
        writeln!(w, "{gamma:?},{value:?}")?;
    }
    for (gamma, reason) in &selection.failures {
        writeln!(w, "# gamma {gamma:?} failed: {reason}")?;
    }
    writeln!(w, "# chosen gamma = {:?}", selection.gamma)?;
    w.flush()?;
    println!("gamma = {:?}", selection.gamma);
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let m_mean = read_matrix(&args.model.join(M_MEAN_FILE))?;
    let n = m_mean.nrows();
    if m_mean.ncols() != n {
        return Err(Error::input(format!("{M_MEAN_FILE} is not square")));
    }
    let beta = read_vector(&args.model.join(BETA_FILE))?;
    let u = read_memberships(&args.model.join(MEMBERSHIPS_FILE))?;
    let side = load_side(args.side.as_deref(), n)?;
    let model = FittedModel {
        u: MembershipMatrix::new(u)?,
        m_mean,
        beta_mean: beta,
        config: FitConfig::default(),
        diagnostics: Vec::new(),
        converged: true,
    };
    let pairs = read_pairs(&args.pairs)?;
    let scores = score_pairs(&model, &side, &pairs)?;
    make_dir(&args.out)?;
    write_scores(&args.out.join("scores.csv"), &scores, None)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<MetricReport> {
    let mut score_files = Vec::new();
    let mut membership_files = Vec::new();
    for dir in &args.runs {
        score_files.push(dir.join(TEST_SCORES_FILE));
        let m = dir.join(MEMBERSHIPS_FILE);
        membership_files.push(m.exists().then_some(m));
    }
    if !args.memberships.is_empty() && args.memberships.len() != args.scores.len() {
        return Err(Error::input(format!(
            "{} --memberships files for {} --scores files",
            args.memberships.len(),
            args.scores.len()
        )));
    }
    for (k, s) in args.scores.iter().enumerate() {
        score_files.push(s.clone());
        membership_files.push(args.memberships.get(k).cloned());
    }
    if score_files.is_empty() {
        return Err(Error::input("nothing to evaluate: give --run or --scores"));
    }
    let truth = args.truth.as_deref().map(read_truth).transpose()?;

    let mut report = MetricReport::default();
    for (k, (scores_path, members_path)) in score_files.iter().zip(&membership_files).enumerate() {
        let (scores, labels) = read_labelled_scores(scores_path)?;
        let value = auc(&scores, &labels).map_err(|e| match e {
            Error::UndefinedMetric(m) => Error::UndefinedMetric(format!("{}: {m}", scores_path.display())),
            other => other,
        })?;
        let (mut aligned, mut unaligned) = (None, None);
        if let (Some(truth), Some(path)) = (&truth, members_path) {
            let u = MembershipMatrix::new(read_memberships(path)?)?;
            aligned = Some(membership_error(&u, truth)?);
            unaligned = Some(unaligned_membership_error(&u, truth)?);
        }
        if args.emit_plot_data {
            if let Some(out) = &args.out {
                make_dir(out)?;
                write_roc(&out.join(format!("roc_{k}.csv")), &scores, &labels)?;
            }
        }
        report.rows.push(SeedMetrics {
            label: k.to_string(),
            auc: value,
            membership_distance: aligned,
            unaligned_distance: unaligned,
        });
    }
    print!("{}", report.to_key_value());
    if let Some(out) = &args.out {
        make_dir(out)?;
        fs::write(out.join("metrics.txt"), report.to_key_value())?;
        fs::write(out.join("metrics.csv"), report.to_csv())?;
    }
    Ok(report)
}

fn write_rows<'a>(path: &Path, rows: impl Iterator<Item = Vec<String>> + 'a, header: Option<&str>) -> Result<()> {
    let mut w = create(path)?;
    if let Some(h) = header {
        writeln!(w, "{h}")?;
    }
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_rows(path, m.row_iter().map(|r| r.iter().map(|v| format!("{v:?}")).collect()), None)
}

pub fn write_vector(path: &Path, v: &DVector<f64>) -> Result<()> {
    write_rows(path, v.iter().map(|x| vec![format!("{x:?}")]), None)
}

/// One row per node: the node id, then its `d` membership values.
pub fn write_memberships(path: &Path, u: &DMatrix<f64>) -> Result<()> {
    write_rows(
        path,
        u.column_iter().enumerate().map(|(i, col)| {
            std::iter::once(i.to_string()).chain(col.iter().map(|v| format!("{v:?}"))).collect()
        }),
        None,
    )
}

pub fn write_diagnostics(path: &Path, records: &[IterationRecord]) -> Result<()> {
    write_rows(
        path,
        records.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                format!("{:?}", r.objective),
                format!("{:?}", r.elbo),
                r.estep_sweeps.to_string(),
                format!("{:?}", r.seconds),
            ]
        }),
        Some("# iteration,f,elbo,sweeps,seconds"),
    )
}

fn write_scores(path: &Path, scores: &[PairScore], labels: Option<&[u8]>) -> Result<()> {
    let header = if labels.is_some() { "# i,j,score,probability,label" } else { "# i,j,score,probability" };
    write_rows(
        path,
        scores.iter().enumerate().map(|(k, s)| {
            let mut row = vec![s.i.to_string(), s.j.to_string(), format!("{:?}", s.score), format!("{:?}", s.probability)];
            if let Some(l) = labels {
                row.push(l[k].to_string());
            }
            row
        }),
        Some(header),
    )
}

fn write_roc(path: &Path, scores: &[f64], labels: &[u8]) -> Result<()> {
    let points = roc_points(scores, labels)?;
    write_rows(
        path,
        points.iter().map(|(t, fpr, tpr)| vec![format!("{t:?}"), format!("{fpr:?}"), format!("{tpr:?}")]),
        Some("# threshold,fpr,tpr"),
    )
}

/// Non-comment, non-blank lines as trimmed comma-separated fields with
/// their 1-based line numbers.
fn csv_records(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        rows.push((idx + 1, t.split(',').map(|s| s.trim().to_string()).collect()));
    }
    Ok(rows)
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse().map_err(|_| Error::Parse {
        line,
        message: format!("cannot parse {tok:?}"),
    })
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows = csv_records(path)?;
    let width = rows.first().map(|(_, r)| r.len()).ok_or_else(|| Error::input(format!("{} is empty", path.display())))?;
    let mut values = Vec::with_capacity(rows.len() * width);
    for (line, row) in &rows {
        if row.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("row has {} values, expected {width}", row.len()),
            });
        }
        for tok in row {
            values.push(parse_num::<f64>(tok, *line)?);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), width, &values))
}

pub fn read_vector(path: &Path) -> Result<DVector<f64>> {
    let rows = csv_records(path)?;
    let values = rows
        .iter()
        .map(|(line, row)| match row.as_slice() {
            [tok] => parse_num(tok, *line),
            _ => Err(Error::Parse {
                line: *line,
                message: "expected one value per line".into(),
            }),
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(DVector::from_vec(values))
}

/// Reads a membership file back into a `d x n` matrix; node ids must run
/// 0, 1, ..., n-1 in order.
pub fn read_memberships(path: &Path) -> Result<DMatrix<f64>> {
    let table = read_matrix(path)?;
    if table.ncols() < 2 {
        return Err(Error::input(format!("{}: need a node id and at least one value per row", path.display())));
    }
    for (k, id) in table.column(0).iter().enumerate() {
        if *id != k as f64 {
            return Err(Error::Parse {
                line: k + 1,
                message: format!("expected node id {k}, found {id}"),
            });
        }
    }
    Ok(table.columns(1, table.ncols() - 1).transpose())
}

/// Ground truth from a membership file whose rows are one-hot.
pub fn read_truth(path: &Path) -> Result<GroundTruthMembership> {
    let u = read_memberships(path)?;
    let mut assignments = Vec::with_capacity(u.ncols());
    for (i, col) in u.column_iter().enumerate() {
        let ones: Vec<usize> = (0..col.len()).filter(|&r| col[r] == 1.0).collect();
        if ones.len() != 1 || col.sum() != 1.0 {
            return Err(Error::input(format!("{}: node {i} is not one-hot", path.display())));
        }
        assignments.push(ones[0]);
    }
    GroundTruthMembership::new(u.nrows(), assignments)
}

fn read_labelled_scores(path: &Path) -> Result<(Vec<f64>, Vec<u8>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (line, row) in csv_records(path)? {
        if row.len() != 5 {
            return Err(Error::Parse {
                line,
                message: "expected i,j,score,probability,label".into(),
            });
        }
        scores.push(parse_num(&row[2], line)?);
        labels.push(match row[4].as_str() {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("label must be 0 or 1, found {other:?}"),
                })
            }
        });
    }
    Ok((scores, labels))
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse {
                line: idx + 1,
                message: "expected `i j`".into(),
            });
        }
        pairs.push((parse_num(toks[0], idx + 1)?, parse_num(toks[1], idx + 1)?));
    }
    Ok(pairs)
}
