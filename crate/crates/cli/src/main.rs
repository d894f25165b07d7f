use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geophy::bench::{self, BenchSpec};
use geophy::estimators::Estimator;
use geophy::geometry::{Covariance, Space};
use geophy::likelihood::simulate_alignment;
use geophy::rng::{substream, Purpose};
use geophy::seqdata::{compress_site_patterns, parse_alignment, PatternAlignment};
use geophy::trainer::{
    estimate_mll, plot_coordinates, sample_topologies, train_with, MllReport, TrainConfig, TrainError,
    TRACE_HEADER,
};
use geophy::tree::{
    bipartition_frequencies, majority_consensus, parse_newick_lines, parse_newick_splits, random_branch_lengths,
    random_topology, split_rf_distance, topology_stats, write_newick, Topology,
};
use geophy::variational::{read_checkpoint, write_checkpoint, CheckpointMeta};
use geophy::{LinkMethod, VERSION};

/// A failed command with its exit status.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn args(msg: impl ToString) -> Self {
        Self { code: 2, msg: msg.to_string() }
    }
    fn data(msg: impl ToString) -> Self {
        Self { code: 3, msg: msg.to_string() }
    }
    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            msg: format!("{}: {e}", path.display()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        let code = match e {
            TrainError::Config(_) | TrainError::Dimension { .. } => 2,
            TrainError::Data(_) => 3,
            TrainError::Aborted { .. } | TrainError::Shape { .. } => 4,
        };
        Self { code, msg: e.to_string() }
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "geophy", version, about = "Variational Bayesian phylogenetics with tip-coordinate distributions")]
struct Cli {
    /// Worker threads for sample evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on an alignment and write every artifact.
    Infer(InferArgs),
    /// Estimate the marginal log-likelihood from a checkpoint.
    Mll(MllArgs),
    /// Majority-rule consensus of a file of Newick trees.
    Consensus(ConsensusArgs),
    /// Robinson-Foulds distance between the first trees of two files.
    Compare(CompareArgs),
    /// Simulate a JC69 alignment along a tree.
    Simulate(SimulateArgs),
    /// Run a grid of configurations from a spec file.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SpaceArg {
    Euclidean,
    Hyperbolic,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovArg {
    Diag,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Nj,
    Upgma,
}

impl From<LinkArg> for LinkMethod {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Nj => LinkMethod::Nj,
            LinkArg::Upgma => LinkMethod::Upgma,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    /// Alignment in FASTA or NEXUS format.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with training settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    space: Option<SpaceArg>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    cov: Option<CovArg>,
    #[arg(long)]
    estimator: Option<Estimator>,
    #[arg(long = "K", short = 'K')]
    k: Option<usize>,
    #[arg(long, value_enum)]
    link: Option<LinkArg>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    nle_budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trace_every: Option<u64>,
    /// Repeats of the final marginal-likelihood estimate.
    #[arg(long, default_value_t = 1)]
    mll_reps: usize,
    /// Importance samples per marginal-likelihood estimate.
    #[arg(long, default_value_t = 1000)]
    mll_k: usize,
    /// Topologies drawn for the sample file and consensus.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct MllArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "K", short = 'K', default_value_t = 1000)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ConsensusArgs {
    /// One Newick tree per line.
    #[arg(long)]
    trees: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    a: PathBuf,
    b: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Newick tree; lengths are drawn when it has none.
    #[arg(long, conflicts_with = "taxa")]
    tree: Option<PathBuf>,
    /// Number of taxa of a uniformly random tree.
    #[arg(long)]
    taxa: Option<usize>,
    #[arg(long)]
    sites: usize,
    /// Rate of the exponential branch-length distribution.
    #[arg(long, default_value_t = 10.0)]
    rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn header() -> String {
    format!("# {VERSION}\n")
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write(dir: &Path, name: &str, body: &str) -> Outcome {
    let path = dir.join(name);
    fs::write(&path, format!("{}{body}", header())).map_err(|e| Failure::io(&path, e))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn load_data(path: &Path) -> Result<PatternAlignment, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    let aln = parse_alignment(&bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
    Ok(compress_site_patterns(&aln))
}

fn resolve_config(a: &InferArgs) -> Result<TrainConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::args(format!("{}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| Failure::args(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.space {
        cfg.space = match s {
            SpaceArg::Euclidean => Space::Euclidean,
            SpaceArg::Hyperbolic => Space::Hyperbolic,
        };
    }
    if let Some(c) = a.cov {
        cfg.cov = match c {
            CovArg::Diag => Covariance::Diagonal,
            CovArg::Full => Covariance::Full,
        };
    }
    if let Some(l) = a.link {
        cfg.link = l.into();
    }
    macro_rules! take {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    take!(dim, estimator, k, lr, nle_budget, seed, trace_every);
    cfg.validate()?;
    Ok(cfg)
}

fn mll_csv(r: &MllReport) -> String {
    let mut s = String::from("samples,reps,mean,std\n");
    s.push_str(&format!("{},{},{},{}\n", r.samples, r.values.len(), r.mean, r.std));
    s
}

fn newick_lines(trees: &[Topology], taxa: &[String]) -> String {
    trees.iter().map(|t| write_newick(t, None, taxa) + "\n").collect()
}

fn cmd_infer(a: InferArgs) -> Outcome {
    let cfg = resolve_config(&a)?;
    if a.mll_reps == 0 || a.mll_k == 0 || a.samples == 0 {
        return Err(Failure::args("--mll-reps, --mll-k and --samples must be positive"));
    }
    let data = load_data(&a.data)?;
    create_dir(&a.out)?;

    let mut trace = format!("{TRACE_HEADER}\n");
    let out = train_with(&cfg, &data, |row| {
        trace.push_str(&row.to_csv());
        trace.push('\n');
    })?;
    write(&a.out, "trace.csv", &trace)?;
    if out.skipped_steps > 0 {
        eprintln!("skipped {} steps with non-finite gradients", out.skipped_steps);
    }

    let taxa = data.taxa().to_vec();
    let meta = CheckpointMeta {
        link: cfg.link,
        taxa: taxa.clone(),
        step: out.steps,
    };
    let path = a.out.join("checkpoint.json");
    fs::write(&path, write_checkpoint(&out.state, &meta)).map_err(|e| Failure::io(&path, e))?;

    let trees = sample_topologies(&out.state, cfg.link, a.samples, cfg.seed);
    write(&a.out, "topologies.nwk", &newick_lines(&trees, &taxa))?;
    let cons = majority_consensus(&trees).map_err(Failure::data)?;
    write(&a.out, "consensus.nwk", &(cons.to_newick(&taxa) + "\n"))?;

    let mll = estimate_mll(&data, out.family, cfg.link, &out.state, a.mll_k, a.mll_reps, cfg.seed);
    write(&a.out, "mll.csv", &mll_csv(&mll))?;

    let dims = out.family.dim;
    let mut coords = String::from("tip");
    for j in 0..dims {
        coords.push_str(&format!(",dim{j}"));
    }
    coords.push('\n');
    for (name, x) in taxa.iter().zip(plot_coordinates(&out.state)) {
        coords.push_str(name);
        for v in x {
            coords.push_str(&format!(",{v}"));
        }
        coords.push('\n');
    }
    write(&a.out, "coordinates.csv", &coords)?;

    println!("MLL {:.4} ± {:.4} (K={}, reps={})", mll.mean, mll.std, mll.samples, mll.values.len());
    Ok(())
}

fn cmd_mll(a: MllArgs) -> Outcome {
    if a.k == 0 || a.reps == 0 {
        return Err(Failure::args("--K and --reps must be positive"));
    }
    let data = load_data(&a.data)?;
    let (state, meta) = read_checkpoint(&read_text(&a.checkpoint)?).map_err(Failure::data)?;
    if meta.taxa != data.taxa() {
        return Err(Failure::data("checkpoint taxa do not match the alignment"));
    }
    let family = state.theta.family();
    let mll = estimate_mll(&data, family, meta.link, &state, a.k, a.reps, a.seed);
    create_dir(&a.out)?;
    write(&a.out, "mll.csv", &mll_csv(&mll))?;
    println!("MLL {:.4} ± {:.4} (K={}, reps={})", mll.mean, mll.std, mll.samples, mll.values.len());
    Ok(())
}

fn cmd_consensus(a: ConsensusArgs) -> Outcome {
    let (taxa, parsed) = parse_newick_lines(&read_text(&a.trees)?, None).map_err(Failure::data)?;
    let trees: Vec<Topology> = parsed.into_iter().map(|p| p.topology).collect();
    let cons = majority_consensus(&trees).map_err(Failure::data)?;
    let stats = topology_stats(&trees).map_err(Failure::data)?;
    create_dir(&a.out)?;
    write(&a.out, "consensus.nwk", &(cons.to_newick(&taxa) + "\n"))?;
    let mut freq = String::from("split,frequency\n");
    for (s, f) in bipartition_frequencies(&trees).map_err(Failure::data)? {
        let names: Vec<&str> = s.tips().map(|t| taxa[t].as_str()).collect();
        freq.push_str(&format!("{},{f}\n", names.join("|")));
    }
    write(&a.out, "bipartitions.csv", &freq)?;
    write(
        &a.out,
        "stats.csv",
        &format!(
            "samples,distinct,simpson,top_frequency,credible_95\n{},{},{},{},{}\n",
            stats.samples, stats.distinct, stats.simpson, stats.top_frequency, stats.credible_95
        ),
    )?;
    println!("{}", cons.to_newick(&taxa));
    Ok(())
}

fn first_tree(text: &str) -> Option<&str> {
    text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'))
}

fn cmd_compare(a: CompareArgs) -> Outcome {
    let ta = read_text(&a.a)?;
    let tb = read_text(&a.b)?;
    let ea = first_tree(&ta).ok_or_else(|| Failure::data(format!("{}: no tree", a.a.display())))?;
    let eb = first_tree(&tb).ok_or_else(|| Failure::data(format!("{}: no tree", a.b.display())))?;
    let (taxa, sa) = parse_newick_splits(ea, None).map_err(Failure::data)?;
    let (_, sb) = parse_newick_splits(eb, Some(&taxa)).map_err(Failure::data)?;
    let rf = split_rf_distance(&sa, &sb);
    let max = 2 * (taxa.len() - 3);
    let norm = if max == 0 { 0.0 } else { rf as f64 / max as f64 };
    print!("{}rf,normalized_rf\n{rf},{norm}\n", header());
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    if a.sites == 0 {
        return Err(Failure::args("--sites must be positive"));
    }
    if !(a.rate > 0.0 && a.rate.is_finite()) {
        return Err(Failure::args("--rate must be positive"));
    }
    let mut rng = substream(a.seed, Purpose::Simulation, 0, 0);
    let (taxa, topology, lengths) = match (&a.tree, a.taxa) {
        (Some(p), _) => {
            let (taxa, mut parsed) = parse_newick_lines(&read_text(p)?, None).map_err(Failure::data)?;
            let first = parsed.swap_remove(0);
            let lengths = match first.lengths {
                Some(l) => l,
                None => random_branch_lengths(&first.topology, a.rate, &mut rng),
            };
            (taxa, first.topology, lengths)
        }
        (None, Some(n)) if n >= 3 => {
            let t = random_topology(n, &mut rng);
            let b = random_branch_lengths(&t, a.rate, &mut rng);
            ((1..=n).map(|i| format!("T{i}")).collect(), t, b)
        }
        (None, Some(_)) => return Err(Failure::args("--taxa must be at least 3")),
        (None, None) => return Err(Failure::args("one of --tree or --taxa is required")),
    };
    let aln = simulate_alignment(&topology, &lengths, &taxa, a.sites, a.seed);
    create_dir(&a.out)?;
    write(&a.out, "alignment.fasta", &aln.to_fasta())?;
    write(&a.out, "tree.nwk", &(write_newick(&topology, Some(&lengths), &taxa) + "\n"))?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let spec = BenchSpec::parse(&read_text(&a.spec)?).map_err(Failure::args)?;
    create_dir(&a.out)?;
    let results = bench::run_matrix(&spec, &a.out, |r| {
        eprintln!("{} {} seed={} {} mll={:.3}", r.dataset, r.hash, r.config.seed, r.status, r.mll_mean);
    })
    .map_err(|e| Failure { code: 1, msg: e.to_string() })?;
    let failed = results.iter().filter(|r| r.status != "ok").count();
    if failed > 0 {
        eprintln!("{failed} of {} cells did not complete", results.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.cmd {
        Command::Infer(a) => cmd_infer(a),
        Command::Mll(a) => cmd_mll(a),
        Command::Consensus(a) => cmd_consensus(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
