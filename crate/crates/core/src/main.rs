use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use sccn::baselines::{bh_adjust, bh_fdr, bsgp_select, maxt_from_model};
use sccn::bench::{run_bench, summarize, write_replicates_csv, write_summary_csv, BenchSettings, Geometry, Method};
use sccn::config::DetectConfig;
use sccn::inference::{build_inference_matrix, EdgeModel, PermutationScheme, RegressionConfig};
use sccn::intra::detect_within;
use sccn::io;
use sccn::model::{Bipartition, InferenceMatrix, Labeling, Matrix, VoxelGrid};
use sccn::pipeline::{detect_dataset, detect_matrix, test_dataset, Detection};
use sccn::rng::{derive_seed, Stream};
use sccn::simulation::{desk_spec, generate_dataset, negative_control_spec, paper_spec, SimulationSpec};
use sccn::spatial::build_infrastructure;
use sccn::{Result, SccnError};

#[derive(Parser)]
#[command(name = "sccn", version, about = "Detect contiguous, densely altered sub-area pairs in voxel-pair connectivity")]
struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset with its ground truth.
    Simulate(SimulateArgs),
    /// Fit the edge-wise regressions and write W, z and p matrices.
    Infer(InferArgs),
    /// Run the full detection pipeline.
    Detect(DetectArgs),
    /// Permutation test of a supplied partition.
    Test(TestArgs),
    /// Edge-wise or co-clustering baselines.
    Baseline(BaselineArgs),
    /// Replicated comparison of methods on simulated data.
    Bench(BenchArgs),
    /// Detection inside a single region.
    Within(WithinArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
    Negative,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "desk", conflicts_with = "spec")]
    preset: Preset,
    /// JSON simulation spec; overrides the preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Noise variance (sigma^2 for the negative control).
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, default_value_t = 200)]
    subjects: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "print_spec")]
    out: Option<PathBuf>,
    /// Print the resolved spec as JSON and exit.
    #[arg(long)]
    print_spec: bool,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    screen_p: f64,
    /// One-sided p-values for a positive effect.
    #[arg(long)]
    one_sided: bool,
}

#[derive(Args, Clone, Default)]
struct Tuning {
    /// Flat `key = value` config file, applied before the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    screen_p: Option<f64>,
    /// Adjacency radius for both regions.
    #[arg(long)]
    epsilon: Option<f64>,
    /// `auto` or a fixed value.
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    cmax: Option<usize>,
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long)]
    perms: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `fast` or `full`.
    #[arg(long)]
    perm_mode: Option<String>,
    /// Extra `key=value` settings, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Tuning {
    fn config(&self) -> Result<DetectConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| SccnError::io(p, e))?;
                DetectConfig::parse(&text)?
            }
            None => DetectConfig::default(),
        };
        let mut pairs: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k.to_string(), v));
            }
        };
        put("seed", self.seed.map(|x| x.to_string()));
        put("screen_p", self.screen_p.map(|x| x.to_string()));
        put("epsilon_a", self.epsilon.map(|x| x.to_string()));
        put("epsilon_b", self.epsilon.map(|x| x.to_string()));
        put("lambda", self.lambda.clone());
        put("c_max", self.cmax.map(|x| x.to_string()));
        put("d_max", self.dmax.map(|x| x.to_string()));
        put("perms", self.perms.map(|x| x.to_string()));
        put("alpha", self.alpha.map(|x| x.to_string()));
        put("perm_mode", self.perm_mode.clone());
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| SccnError::InvalidArgument(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Bipartite,
    Within,
}

#[derive(Args)]
struct MatrixInput {
    /// Dataset directory written by `simulate` or laid out the same way.
    #[arg(long, conflicts_with_all = ["w", "z"])]
    data: Option<PathBuf>,
    /// Screened inference matrix (binary or .csv).
    #[arg(long, requires_all = ["z", "coords"])]
    w: Option<PathBuf>,
    /// Normal-scale edge statistics matching `--w`.
    #[arg(long)]
    z: Option<PathBuf>,
    /// Voxel coordinates, `region,voxel_id,x,y,z`.
    #[arg(long)]
    coords: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: MatrixInput,
    #[arg(long, value_enum, default_value = "bipartite")]
    mode: Mode,
    /// Region to use with `--mode within`.
    #[arg(long)]
    region: Option<String>,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WithinArgs {
    #[arg(long)]
    w: PathBuf,
    #[arg(long)]
    z: PathBuf,
    #[arg(long)]
    coords: PathBuf,
    #[arg(long)]
    region: Option<String>,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    data: PathBuf,
    /// Partition file, `region,voxel_id,label`.
    #[arg(long)]
    partition: PathBuf,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "bh")]
    method: String,
    /// FDR level for bh, FWER level for maxt.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    perms: usize,
    #[arg(long, default_value_t = 0.05)]
    screen_p: f64,
    /// Co-cluster counts tried by bsgp, `lo..hi`.
    #[arg(long, default_value = "2..12")]
    k: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "desk")]
    geometry: GeometryArg,
    #[arg(long, value_delimiter = ',', default_value = "1")]
    variances: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "200")]
    subjects: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "sccn,bh,maxt,bsgp")]
    methods: Vec<String>,
    #[arg(long, default_value_t = 200)]
    maxt_perms: usize,
    #[command(flatten)]
    tuning: Tuning,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeometryArg {
    Desk,
    Paper,
}

fn spec_digest(spec: &SimulationSpec) -> String {
    let bytes = serde_json::to_vec(spec).expect("spec serializes");
    hex::encode(Sha256::digest(bytes))
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => io::read_json::<SimulationSpec>(p)?,
        None => match a.preset {
            Preset::Paper => paper_spec(a.variance, a.subjects),
            Preset::Desk => desk_spec(a.variance, a.subjects),
            Preset::Negative => negative_control_spec(a.subjects, a.variance.sqrt()),
        }
        .with_seed(a.seed),
    };
    spec.validate()?;
    if a.print_spec {
        println!("{}", serde_json::to_string_pretty(&spec).expect("spec serializes"));
        return Ok(());
    }
    let out = a.out.expect("required unless printing the spec");
    let (ds, truth) = generate_dataset(&spec)?;
    let ga = VoxelGrid::box_grid("A", spec.dims_a);
    let gb = VoxelGrid::box_grid("B", spec.dims_b);
    io::write_dataset(&out, &ds, &ga, &gb, Some(spec_digest(&spec)), Some(spec.seed))?;
    io::write_json(&out.join("spec.json"), &spec)?;
    io::write_json(&out.join(io::TRUTH_FILE), &truth)?;
    log::info!("wrote {} subjects to {}", ds.len(), out.display());
    Ok(())
}

fn infer(a: InferArgs) -> Result<()> {
    let (ds, _, _) = io::read_dataset(&a.data)?;
    let model = EdgeModel::from_dataset(ds, !a.one_sided)?;
    let stats = model.observed()?;
    let cfg = RegressionConfig {
        screen_p: a.screen_p,
        two_sided: !a.one_sided,
        ..Default::default()
    };
    let w = build_inference_matrix(&stats.pvals, &stats.zstats, &cfg)?;
    io::write_matrix(&a.out.join("W.bin"), &w.values)?;
    io::write_matrix(&a.out.join("zstats.bin"), &stats.zstats)?;
    io::write_matrix(&a.out.join("pvals.bin"), &stats.pvals)?;
    io::write_matrix(&a.out.join("beta.bin"), &stats.beta)?;
    let (n, m) = w.shape();
    log::info!("{} of {} edges pass p <= {}", w.nnz(), n * m, a.screen_p);
    Ok(())
}

fn read_inference(w: &Path, z: &Path, screen_p: f64) -> Result<InferenceMatrix> {
    InferenceMatrix::new(io::read_matrix(w)?, screen_p, io::read_matrix(z)?)
}

fn pick_region(coords: &Path, name: Option<&str>) -> Result<VoxelGrid> {
    let mut grids = io::read_coords(coords)?;
    match name {
        Some(n) => grids
            .into_iter()
            .find(|g| g.region_id == n)
            .ok_or_else(|| SccnError::InvalidArgument(format!("region {n} not in {}", coords.display()))),
        None if grids.len() == 1 => Ok(grids.pop().unwrap()),
        None => Err(SccnError::InvalidArgument(format!(
            "{} holds {} regions; choose one with --region",
            coords.display(),
            grids.len()
        ))),
    }
}

fn run_within(w: &Path, z: &Path, coords: &Path, region: Option<&str>, cfg: &DetectConfig, out: &Path) -> Result<()> {
    let g = pick_region(coords, region)?;
    let s = build_infrastructure(&g, cfg.epsilon_a)?;
    let det = detect_within(read_inference(w, z, cfg.regression.screen_p)?, &s, cfg)?;
    emit(&det, &g, &g, out)
}

fn emit(det: &Detection, ga: &VoxelGrid, gb: &VoxelGrid, out: &Path) -> Result<()> {
    if ga.region_id == gb.region_id {
        io::write_json(&out.join(io::REPORT_FILE), &det.report)?;
        io::write_labels(&out.join(io::PARTITION_FILE), &[(ga, &det.report.partition.u_labels)])?;
        io::write_reordered(&out.join(io::REORDERED_FILE), &det.w.values, &det.report.partition, ga, gb)?;
    } else {
        io::write_detection(out, &det.report, &det.w.values, ga, gb)?;
    }
    let r = &det.report;
    log::info!(
        "C = {}, D = {}, lambda = {} ({}), {} significant pair(s)",
        r.c_hat,
        r.d_hat,
        r.lambda_hat,
        r.lambda_source,
        r.significant.len()
    );
    for w in &r.warnings {
        log::warn!("{w}");
    }
    Ok(())
}

fn detect(a: DetectArgs) -> Result<()> {
    let cfg = a.tuning.config()?;
    match (a.mode, &a.input) {
        (Mode::Within, MatrixInput { w: Some(w), z: Some(z), coords: Some(c), .. }) => {
            run_within(w, z, c, a.region.as_deref(), &cfg, &a.out)
        }
        (Mode::Within, _) => Err(SccnError::InvalidArgument("--mode within needs --w, --z and --coords".into())),
        (Mode::Bipartite, MatrixInput { data: Some(dir), .. }) => {
            let (ds, ga, gb) = io::read_dataset(dir)?;
            let det = detect_dataset(ds, &ga, &gb, &cfg)?;
            emit(&det, &ga, &gb, &a.out)
        }
        (Mode::Bipartite, MatrixInput { w: Some(w), z: Some(z), coords: Some(c), .. }) => {
            let (ga, gb) = io::read_region_pair(c, None)?;
            let sa = build_infrastructure(&ga, cfg.epsilon_a)?;
            let sb = build_infrastructure(&gb, cfg.epsilon_b)?;
            let det = detect_matrix(read_inference(w, z, cfg.regression.screen_p)?, &sa, &sb, &cfg)?;
            emit(&det, &ga, &gb, &a.out)
        }
        _ => Err(SccnError::InvalidArgument("give --data, or --w, --z and --coords".into())),
    }
}

fn within(a: WithinArgs) -> Result<()> {
    let cfg = a.tuning.config()?;
    run_within(&a.w, &a.z, &a.coords, a.region.as_deref(), &cfg, &a.out)
}

fn test(a: TestArgs) -> Result<()> {
    let cfg = a.tuning.config()?;
    let (ds, ga, gb) = io::read_dataset(&a.data)?;
    let part = io::read_partition(&a.partition, &ga, &gb)?;
    let det = test_dataset(ds, &ga, &gb, &part, &cfg)?;
    emit(&det, &ga, &gb, &a.out)
}

#[derive(Serialize)]
struct EdgeBaseline {
    method: &'static str,
    level: f64,
    edges: usize,
    rejected: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    maxt_threshold: Option<f64>,
}

fn write_mask(path: &Path, mask: &[bool], ga: &VoxelGrid, gb: &VoxelGrid) -> Result<()> {
    let m = gb.len();
    let mut out = format!("{},{}\n", ga.region_id, gb.region_id);
    for (k, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        out.push_str(&format!("{},{}\n", ga.voxels[k / m].id, gb.voxels[k % m].id));
    }
    std::fs::write(path, out).map_err(|e| SccnError::io(path, e))
}

fn parse_range(s: &str) -> Result<(usize, usize)> {
    let bad = || SccnError::InvalidArgument(format!("expected lo..hi, got '{s}'"));
    let (lo, hi) = s.split_once("..").ok_or_else(bad)?;
    let lo: usize = lo.trim().parse().map_err(|_| bad())?;
    let hi: usize = hi.trim().parse().map_err(|_| bad())?;
    if lo == 0 || hi < lo {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let method = Method::parse(&a.method)?;
    let (ds, ga, gb) = io::read_dataset(&a.data)?;
    let model = EdgeModel::from_dataset(ds, true)?;
    let stats = model.observed()?;
    std::fs::create_dir_all(&a.out).map_err(|e| SccnError::io(&a.out, e))?;
    let summary = |mask: &[bool], threshold| EdgeBaseline {
        method: method.name(),
        level: a.alpha,
        edges: mask.len(),
        rejected: mask.iter().filter(|&&b| b).count(),
        maxt_threshold: threshold,
    };
    match method {
        Method::Bh => {
            let mask = bh_fdr(stats.pvals.as_slice(), a.alpha)?;
            let q = Matrix::from_vec(stats.pvals.rows(), stats.pvals.cols(), bh_adjust(stats.pvals.as_slice()))?;
            io::write_matrix(&a.out.join("qvals.bin"), &q)?;
            write_mask(&a.out.join("rejected.csv"), &mask, &ga, &gb)?;
            io::write_json(&a.out.join("baseline.json"), &summary(&mask, None))
        }
        Method::Maxt => {
            let mt = maxt_from_model(
                &model,
                &stats.zstats,
                a.perms,
                a.alpha,
                derive_seed(a.seed, Stream::Baseline, 0),
                PermutationScheme::Shuffle,
            )?;
            write_mask(&a.out.join("rejected.csv"), &mt.reject, &ga, &gb)?;
            io::write_json(&a.out.join("baseline.json"), &summary(&mt.reject, Some(mt.threshold)))
        }
        Method::Bsgp => {
            let (lo, hi) = parse_range(&a.k)?;
            let cfg = RegressionConfig {
                screen_p: a.screen_p,
                ..Default::default()
            };
            let w = build_inference_matrix(&stats.pvals, &stats.zstats, &cfg)?;
            let cc = bsgp_select(&w, lo..=hi, a.seed)?;
            let part = Bipartition::new(
                Labeling::new(cc.u_labels.clone(), cc.k)?,
                Labeling::new(cc.v_labels.clone(), cc.k)?,
            );
            io::write_partition(&a.out.join(io::PARTITION_FILE), &part, &ga, &gb)?;
            io::write_json(&a.out.join("baseline.json"), &serde_json::json!({
                "method": "bsgp",
                "k": cc.k,
                "informative": cc.informative(&w.values),
            }))
        }
        Method::Sccn => Err(SccnError::InvalidArgument("use `sccn detect` for the SCCN method".into())),
    }
}

fn bench(a: BenchArgs) -> Result<()> {
    let detect = a.tuning.config()?;
    let methods = a.methods.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?;
    let settings = BenchSettings {
        geometry: match a.geometry {
            GeometryArg::Desk => Geometry::Desk,
            GeometryArg::Paper => Geometry::Paper,
        },
        variances: a.variances,
        subjects: a.subjects,
        replicates: a.replicates,
        methods,
        seed: detect.seed,
        level: detect.permutation.alpha,
        maxt_perms: a.maxt_perms,
        detect,
        ..BenchSettings::default()
    };
    let rows = run_bench(&settings)?;
    std::fs::create_dir_all(&a.out).map_err(|e| SccnError::io(&a.out, e))?;
    write_replicates_csv(&a.out.join("replicates.csv"), &rows)?;
    write_summary_csv(&a.out.join("summary.csv"), &summarize(&rows))
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(SccnError::InvalidArgument("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| SccnError::InvalidArgument(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Infer(a) => infer(a),
        Command::Detect(a) => detect(a),
        Command::Test(a) => test(a),
        Command::Baseline(a) => baseline(a),
        Command::Bench(a) => bench(a),
        Command::Within(a) => within(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
