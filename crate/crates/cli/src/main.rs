use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use latent_verify::geometry::{
    convex_hull, filter_samples, GeometryError, inflate, outer_approximate, read_latent_csv, read_polytope, sample_points,
    write_polytope, Polytope, DEFAULT_SIGMA_CAP, UNBOUNDED,
};
use latent_verify::nnmodel::{compose, Network};
use latent_verify::speclang::{Spec, SpecKind, SpecManifest};
use latent_verify::verifier::{
    exact_range_enumerate, verify_box_baseline, verify_spec, BoxPerturbation, Budget, Method, Status,
    VerificationResult, VerifyOptions, ENUMERATION_RELU_LIMIT,
};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

mod report;

#[derive(Parser)]
#[command(name = "latent-verify", version, about = "Verify neural-network controllers over latent-space polytopes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a polytope from the latent samples whose action lies in a range.
    BuildPolytope(BuildArgs),
    /// Compose a decoder and a controller into one network.
    Compose(ComposeArgs),
    /// Verify every spec of a manifest.
    Verify(VerifyArgs),
    /// Sampled and (for small networks) exact output range over a polytope.
    Oracle(OracleArgs),
    /// Pixel-space box verification of the controller.
    Baseline(BaselineArgs),
}

#[derive(Args)]
struct BuildArgs {
    #[arg(long)]
    csv: PathBuf,
    /// `lo:hi`; `inf` and `-inf` are accepted.
    #[arg(long, allow_hyphen_values = true)]
    action_range: String,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// `hull` or `outer:K`.
    #[arg(long, default_value = "hull")]
    mode: String,
    #[arg(long, default_value_t = DEFAULT_SIGMA_CAP)]
    sigma_cap: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    decoder: PathBuf,
    #[arg(long)]
    controller: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct NetworkArgs {
    /// Combined latent-space network.
    #[arg(long, conflicts_with_all = ["decoder", "controller"])]
    network: Option<PathBuf>,
    #[arg(long, requires = "controller")]
    decoder: Option<PathBuf>,
    #[arg(long, requires = "decoder")]
    controller: Option<PathBuf>,
}

impl NetworkArgs {
    fn load(&self) -> Result<Network> {
        match (&self.network, &self.decoder, &self.controller) {
            (Some(n), _, _) => read_network(n),
            (None, Some(d), Some(c)) => Ok(compose(&read_network(d)?, &read_network(c)?)?),
            _ => bail!("give --network or both --decoder and --controller"),
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    net: NetworkArgs,
    #[arg(long)]
    specs: PathBuf,
    #[arg(long, default_value = "bab")]
    method: String,
    /// Seconds per spec.
    #[arg(long, default_value_t = 60.0)]
    timeout: f64,
    #[arg(long, default_value_t = 10_000)]
    max_subproblems: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hit-and-run points for the falsification pre-pass.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    network: PathBuf,
    #[arg(long)]
    polytope: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    controller: PathBuf,
    /// Whitespace- or comma-separated pixel values; `#` starts a comment.
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    delta: f64,
    #[arg(long, allow_hyphen_values = true, default_value = "-inf:inf")]
    interval: String,
    /// Decoder for the paired latent-space run.
    #[arg(long, requires = "polytope")]
    decoder: Option<PathBuf>,
    /// Polytope for the paired latent-space run.
    #[arg(long, requires = "decoder")]
    polytope: Option<PathBuf>,
    /// Latent dimension for the ratio when no paired run is given.
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_network(path: &Path) -> Result<Network> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Network::from_nnw(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_bound(s: &str) -> Result<f64> {
    let v = match s.trim() {
        "inf" | "+inf" => UNBOUNDED,
        "-inf" => -UNBOUNDED,
        t => t.parse::<f64>().with_context(|| format!("invalid number '{t}'"))?,
    };
    if v.is_nan() {
        bail!("invalid number '{s}'");
    }
    Ok(v.clamp(-UNBOUNDED, UNBOUNDED))
}

/// Parses `lo:hi`.
fn parse_range(s: &str) -> Result<(f64, f64)> {
    let (lo, hi) = s
        .split_once(':')
        .with_context(|| format!("range '{s}' must look like lo:hi"))?;
    let (lo, hi) = (parse_bound(lo)?, parse_bound(hi)?);
    if lo > hi {
        bail!("range '{s}' is empty");
    }
    Ok((lo, hi))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn build_polytope(a: &BuildArgs) -> Result<ExitCode> {
    let file = std::fs::File::open(&a.csv).with_context(|| format!("opening {}", a.csv.display()))?;
    let samples = read_latent_csv(file).with_context(|| format!("reading {}", a.csv.display()))?;
    let range = parse_range(&a.action_range)?;
    let kept = filter_samples(&samples, range, a.sigma_cap)?;
    let points: Vec<Vec<f64>> = kept.iter().map(|s| s.z.clone()).collect();
    let tag = kept[0].tag.clone();
    let base = match a.mode.as_str() {
        "hull" => convex_hull(&points).map_err(|e| match e {
            GeometryError::UnsupportedDimension { .. } | GeometryError::TooManyFacets { .. } => {
                anyhow::anyhow!("{e}; rerun with --mode outer:K (e.g. outer:64)")
            }
            e => e.into(),
        })?,
        m => match m.strip_prefix("outer:").map(str::parse::<usize>) {
            Some(Ok(k)) => outer_approximate(&points, k)?,
            _ => bail!("mode must be 'hull' or 'outer:K', got '{m}'"),
        },
    };
    let base = base.with_metadata(range, tag);
    let poly = inflate(&base, a.epsilon)?;
    write_polytope(&a.out, &poly)?;
    println!(
        "polytope {}: dim {}, {} samples, {} vertices, {} halfspaces, action [{}, {}], epsilon {}",
        poly.id,
        poly.dim,
        kept.len(),
        poly.vertices.len(),
        poly.halfspaces.len(),
        report::fmt_bound(range.0),
        report::fmt_bound(range.1),
        poly.inflation_radius
    );
    Ok(ExitCode::SUCCESS)
}

fn compose_cmd(a: &ComposeArgs) -> Result<ExitCode> {
    let net = compose(&read_network(&a.decoder)?, &read_network(&a.controller)?)?;
    std::fs::write(&a.out, net.to_nnw()).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}: {} inputs, {} outputs, {} layers, {} ReLUs",
        net.name,
        net.input_dim,
        net.output_dim(),
        net.layers.len(),
        net.relu_count()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    network: &'a str,
    method: Method,
    seed: u64,
    max_subproblems: usize,
    results: &'a [VerificationResult],
}

fn load_spec(entry: &latent_verify::speclang::ManifestEntry, base: &Path) -> Result<(Spec, Polytope)> {
    let spec = entry.to_spec(base).with_context(|| format!("spec '{}'", entry.id))?;
    let poly = read_polytope(base.join(&entry.polytope))
        .with_context(|| format!("reading polytope {}", entry.polytope.display()))?;
    Ok((spec, poly))
}

fn verify_cmd(a: &VerifyArgs) -> Result<ExitCode> {
    let method: Method = a.method.parse().map_err(anyhow::Error::msg)?;
    if !matches!(method, Method::Crown | Method::Bab) {
        bail!("--method must be crown or bab");
    }
    if !(a.timeout > 0.0) {
        bail!("--timeout must be positive");
    }
    let net = a.net.load()?;
    let text = std::fs::read_to_string(&a.specs).with_context(|| format!("reading {}", a.specs.display()))?;
    let manifest = SpecManifest::from_json(&text)?;
    let base = a.specs.parent().unwrap_or(Path::new("."));
    let loaded = manifest
        .specs
        .iter()
        .map(|e| load_spec(e, base))
        .collect::<Result<Vec<_>>>()?;
    let options = VerifyOptions {
        method,
        budget: Budget {
            max_subproblems: a.max_subproblems,
            timeout: Duration::from_secs_f64(a.timeout),
            stop_when_decided: true,
        },
        falsify_samples: a.samples,
        seed: a.seed,
    };
    let mut results = Vec::with_capacity(loaded.len());
    for (spec, poly) in &loaded {
        let r = verify_spec(&net, spec, poly, &options).with_context(|| format!("verifying '{}'", spec.id))?;
        results.push(r);
    }
    let kinds: Vec<SpecKind> = loaded.iter().map(|(s, _)| s.kind).collect();
    print!("{}", report::verify_table(&results, &kinds));
    if let Some(out) = &a.out {
        write_json(
            out,
            &VerifyReport {
                network: &net.name,
                method,
                seed: a.seed,
                max_subproblems: a.max_subproblems,
                results: &results,
            },
        )?;
    }
    Ok(exit_code(results.iter().map(|r| r.status)))
}

/// 0 when everything holds, 2 if anything is violated, 3 if anything is
/// undecided.
fn exit_code(statuses: impl Iterator<Item = Status>) -> ExitCode {
    let mut code = 0;
    for s in statuses {
        code = match (code, s) {
            (_, Status::Violated) => 2,
            (0, Status::Unknown) => 3,
            (c, _) => c,
        };
    }
    ExitCode::from(code)
}

#[derive(Serialize)]
struct OracleReport {
    network: String,
    polytope: String,
    samples: usize,
    seed: u64,
    sampled_min: Vec<f64>,
    sampled_max: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_min: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    exact_max: Option<Vec<f64>>,
}

fn oracle_cmd(a: &OracleArgs) -> Result<ExitCode> {
    let net = read_network(&a.network)?;
    let poly = read_polytope(&a.polytope).with_context(|| format!("reading {}", a.polytope.display()))?;
    if poly.dim != net.input_dim {
        bail!("polytope has dimension {} but the network expects {}", poly.dim, net.input_dim);
    }
    let m = net.output_dim();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    let pts = sample_points(&poly, a.samples, a.seed)?;
    for z in poly.vertices.iter().chain(&pts) {
        let y = net.forward(z)?;
        for j in 0..m {
            lo[j] = lo[j].min(y[j]);
            hi[j] = hi[j].max(y[j]);
        }
    }
    let mut rep = OracleReport {
        network: net.name.clone(),
        polytope: poly.id.clone(),
        samples: a.samples,
        seed: a.seed,
        sampled_min: lo,
        sampled_max: hi,
        exact_min: None,
        exact_max: None,
    };
    for j in 0..m {
        println!("Y_{j}: sampled [{:?}, {:?}]", rep.sampled_min[j], rep.sampled_max[j]);
    }
    if net.relu_count() <= ENUMERATION_RELU_LIMIT {
        let e = exact_range_enumerate(&net, &poly)?;
        for j in 0..m {
            println!("Y_{j}: exact   [{:?}, {:?}] ({} pieces)", e.lower[j], e.upper[j], e.subproblems);
        }
        rep.exact_min = Some(e.lower);
        rep.exact_max = Some(e.upper);
    } else {
        println!(
            "exact enumeration skipped: {} ReLUs exceeds the limit of {ENUMERATION_RELU_LIMIT}",
            net.relu_count()
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &rep)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let v: f64 = tok
                .parse()
                .with_context(|| format!("{}:{}: invalid number '{tok}'", path.display(), n + 1))?;
            out.push(v);
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct BaselineReport {
    pixel_dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dimension_ratio: Option<f64>,
    delta: f64,
    pixel: VerificationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    latent: Option<VerificationResult>,
}

fn baseline_cmd(a: &BaselineArgs) -> Result<ExitCode> {
    let controller = read_network(&a.controller)?;
    let image = read_vector(&a.image)?;
    let interval = parse_range(&a.interval)?;
    let intervals = vec![interval; controller.output_dim()];
    let pert = BoxPerturbation::new(image, a.delta)?;
    let pixel = verify_box_baseline(&controller, &pert, &intervals, "pixel_box")?;

    let mut latent = None;
    let mut latent_dim = a.latent_dim;
    if let (Some(dec), Some(poly_path)) = (&a.decoder, &a.polytope) {
        let decoder = read_network(dec)?;
        let net = compose(&decoder, &controller)?;
        let poly = read_polytope(poly_path).with_context(|| format!("reading {}", poly_path.display()))?;
        let spec = Spec {
            id: "latent_polytope".into(),
            kind: SpecKind::Performance,
            polytope_ref: poly.id.clone(),
            output_interval: intervals.clone(),
            description: String::new(),
        };
        let opts = VerifyOptions {
            method: Method::Crown,
            falsify_samples: 0,
            ..VerifyOptions::default()
        };
        latent = Some(verify_spec(&net, &spec, &poly, &opts)?);
        latent_dim = Some(decoder.input_dim);
    }
    let rep = BaselineReport {
        pixel_dim: controller.input_dim,
        latent_dim,
        dimension_ratio: latent_dim.map(|d| controller.input_dim as f64 / d as f64),
        delta: a.delta,
        pixel,
        latent,
    };
    print!("{}", report::baseline_table(&rep.pixel, rep.latent.as_ref(), rep.pixel_dim, rep.latent_dim));
    if let Some(out) = &a.out {
        write_json(out, &rep)?;
    }
    Ok(exit_code(std::iter::once(rep.pixel.status)))
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildPolytope(a) => build_polytope(a),
        Command::Compose(a) => compose_cmd(a),
        Command::Verify(a) => verify_cmd(a),
        Command::Oracle(a) => oracle_cmd(a),
        Command::Baseline(a) => baseline_cmd(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
