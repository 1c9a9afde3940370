use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use carnotkit::chart::{ChartSpec, FilteredChart, Locus, VectorField};
use carnotkit::coords::{check_privileged, chart_coordinates_adapted, is_carnot, model_euler_field, privileged_coordinates};
use carnotkit::deform::{DeformPoint, DeformPointJson, DeformationSpace, TubeOptions, VerifyOptions};
use carnotkit::groupoid::{default_lambdas, TGElement, TangentGroupoid};
use carnotkit::nilpotent::{osculating_algebra, random_rational_vector, GroupElement};
use carnotkit::poly::{parse_rational, TermJson};
use carnotkit::report::{floats, rats, F64};
use carnotkit::{BigRational, Error, Poly};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "carnotkit", version, about = "Exact computations on filtered manifolds given by polynomial charts")]
struct Cli {
    /// Suppress log output on standard error.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the Lie-filtration condition of a chart.
    Validate(ChartArg),
    /// Structure constants of the osculating algebra at a point.
    Osculate(PointArgs),
    /// Privileged coordinates at a point.
    Privileged(PointArgs),
    /// Test whether coordinates are Carnot coordinates at a point.
    CarnotCheck {
        #[command(flatten)]
        point: PointArgs,
        /// JSON array of polynomials; defaults to the privileged coordinates.
        #[arg(long)]
        coords: Option<PathBuf>,
    },
    /// Test whether a vector field is Euler-like for the marked submanifold.
    EulerCheck {
        #[command(flatten)]
        field: FieldArgs,
        /// Highest order q tested; defaults to the step.
        #[arg(long)]
        cap: Option<u32>,
    },
    /// Integrate the deformation-space field from normal-space samples.
    Tube {
        #[command(flatten)]
        field: FieldArgs,
        /// JSON array of {"y": [...], "z": [...]} normal-space points.
        #[arg(long)]
        samples: PathBuf,
        #[command(flatten)]
        flow: FlowArgs,
    },
    /// Numerical and symbolic checks of the tubular map.
    TubeVerify {
        #[command(flatten)]
        field: FieldArgs,
        /// Sample file; defaults to seeded random points in a box.
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        flow: FlowArgs,
        #[arg(long, default_value_t = 1e-4)]
        fd_step: f64,
        /// Tolerance for the verification residuals.
        #[arg(long, default_value_t = 1e-6)]
        verify_tol: f64,
    },
    /// Compose two arrows of the tangent groupoid.
    TgCompose {
        #[command(flatten)]
        chart: ChartArg,
        #[arg(long, default_value = "0")]
        lambda: String,
        /// Base point for zero-fiber arrows.
        #[arg(long)]
        point: Option<String>,
        #[arg(long)]
        xi: Option<String>,
        #[arg(long)]
        eta: Option<String>,
        /// Pair arrows (p, q) ∘ (q, w) at nonzero λ.
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        q: Option<String>,
        #[arg(long)]
        w: Option<String>,
    },
    /// Convergence of zoomed pair composition to the osculating product.
    TgConverge {
        #[command(flatten)]
        point: PointArgs,
        #[arg(long)]
        xi: Option<String>,
        #[arg(long)]
        eta: Option<String>,
        /// Number of random pairs in the unit box when --xi/--eta are absent.
        #[arg(long, default_value_t = 10)]
        random: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Comma-separated levels; defaults to 2^-1 … 2^-10.
        #[arg(long)]
        lambdas: Option<String>,
        #[arg(long, default_value_t = 0.8)]
        min_order: f64,
    },
}

#[derive(Args)]
struct ChartArg {
    /// Chart JSON file.
    chart: PathBuf,
}

#[derive(Args)]
struct PointArgs {
    #[command(flatten)]
    chart: ChartArg,
    /// Comma-separated rationals; defaults to the origin.
    #[arg(long)]
    point: Option<String>,
}

#[derive(Args)]
struct FieldArgs {
    #[command(flatten)]
    chart: ChartArg,
    /// Name of a field in the chart file, or "model".
    #[arg(long, default_value = "model")]
    field: String,
    /// JSON file with the field components, overriding --field.
    #[arg(long)]
    field_file: Option<PathBuf>,
}

#[derive(Args)]
struct FlowArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda_target: f64,
    #[arg(long, default_value_t = 1e-2)]
    step: f64,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 1e6)]
    bounds: f64,
    /// Restart factor σ in (0, 1].
    #[arg(long)]
    rescale: Option<f64>,
}

impl FlowArgs {
    fn options(&self) -> TubeOptions {
        TubeOptions {
            lambda_target: self.lambda_target,
            step: self.step,
            tol: self.tol,
            bounds: self.bounds,
            rescale: self.rescale,
        }
    }
}

/// A finished command: JSON output and whether it passed.
struct Outcome {
    value: Value,
    pass: bool,
}

impl Outcome {
    fn new(value: Value, pass: bool) -> Self {
        Outcome { value, pass }
    }
}

fn read_file(path: &Path) -> Result<String, Error> {
    std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn load_spec(arg: &ChartArg) -> Result<ChartSpec, Error> {
    ChartSpec::from_json_str(&read_file(&arg.chart)?)
}

fn parse_vector(s: &str, n: usize, what: &str) -> Result<Vec<BigRational>, Error> {
    let v = s
        .split(',')
        .map(|t| parse_rational(t.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if v.len() != n {
        return Err(Error::Parse(format!("{what} has {} entries, expected {n}", v.len())));
    }
    Ok(v)
}

fn point_or_origin(s: &Option<String>, n: usize) -> Result<Vec<BigRational>, Error> {
    match s {
        Some(s) => parse_vector(s, n, "--point"),
        None => Ok(vec![BigRational::from_integer(0.into()); n]),
    }
}

fn chart_name(spec: &ChartSpec, arg: &ChartArg) -> String {
    spec.name.clone().unwrap_or_else(|| {
        arg.chart
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    })
}

fn load_field(args: &FieldArgs, spec: &ChartSpec, chart: &FilteredChart) -> Result<VectorField, Error> {
    if let Some(path) = &args.field_file {
        let comps: Vec<Vec<TermJson>> =
            serde_json::from_str(&read_file(path)?).map_err(|e| Error::Parse(format!("field file: {e}")))?;
        return VectorField::from_json(chart.dim(), &comps);
    }
    if args.field == "model" {
        let normal = chart.normal().ok_or(Error::NoSubmanifold)?;
        return Ok(model_euler_field(chart.weights(), normal));
    }
    spec.named_field(&args.field)
}

fn field_label(args: &FieldArgs) -> String {
    match &args.field_file {
        Some(p) => p.display().to_string(),
        None => args.field.clone(),
    }
}

fn run(command: Command) -> Result<Outcome, Error> {
    match command {
        Command::Validate(arg) => {
            let spec = load_spec(&arg)?;
            let chart = spec.build()?;
            let report = chart.validate_lie_filtration();
            let adapted = match chart.normal() {
                Some(_) => Some(chart_coordinates_adapted(&chart)?.is_none()),
                None => None,
            };
            Ok(Outcome::new(
                json!({
                    "chart": chart_name(&spec, &arg),
                    "dim": chart.dim(),
                    "ranks": chart.ranks(),
                    "weights": chart.weights().as_slice(),
                    "normal_vars": chart.normal(),
                    "coordinates_adapted": adapted,
                    "pass": report.pass,
                    "witnesses": report.witnesses,
                }),
                report.pass,
            ))
        }
        Command::Osculate(args) => {
            let spec = load_spec(&args.chart)?;
            let chart = spec.build()?;
            let v = point_or_origin(&args.point, chart.dim())?;
            let report = chart.validate_lie_filtration();
            if !report.pass {
                return Ok(Outcome::new(json!({"pass": false, "validation": report}), false));
            }
            let alg = osculating_algebra(&chart, &v)?;
            let table = alg.to_json();
            Ok(Outcome::new(
                json!({
                    "pass": true,
                    "point": rats(&v),
                    "weights": table.weights,
                    "brackets": table.brackets,
                }),
                true,
            ))
        }
        Command::Privileged(args) => {
            let spec = load_spec(&args.chart)?;
            let chart = spec.build()?;
            let v = point_or_origin(&args.point, chart.dim())?;
            let coords = privileged_coordinates(&chart, &v)?;
            let problem = check_privileged(&chart, &v, &coords)?;
            let cap = chart.step() + 1;
            let orders = coords
                .iter()
                .map(|x| chart.vanishing_h_order(x, &Locus::Point(v.clone()), cap))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Outcome::new(
                json!({
                    "pass": problem.is_none(),
                    "point": rats(&v),
                    "weights": chart.weights().as_slice(),
                    "coordinates": coords,
                    "vanishing_orders": orders,
                    "problem": problem,
                }),
                problem.is_none(),
            ))
        }
        Command::CarnotCheck { point, coords } => {
            let spec = load_spec(&point.chart)?;
            let chart = spec.build()?;
            let v = point_or_origin(&point.point, chart.dim())?;
            let xs = match coords {
                Some(path) => {
                    let terms: Vec<Vec<TermJson>> = serde_json::from_str(&read_file(&path)?)
                        .map_err(|e| Error::Parse(format!("coordinate file: {e}")))?;
                    terms
                        .iter()
                        .map(|t| Poly::from_json_terms(chart.dim(), t))
                        .collect::<Result<Vec<_>, _>>()?
                }
                None => privileged_coordinates(&chart, &v)?,
            };
            let check = is_carnot(&chart, &v, &xs)?;
            Ok(Outcome::new(
                json!({
                    "pass": check.carnot,
                    "point": rats(&v),
                    "coordinates": xs,
                    "carnot": check.carnot,
                    "witness": check.witness,
                }),
                check.carnot,
            ))
        }
        Command::EulerCheck { field, cap } => {
            let spec = load_spec(&field.chart)?;
            let chart = spec.build()?;
            let e = load_field(&field, &spec, &chart)?;
            let cap = cap.unwrap_or(chart.step());
            let report = carnotkit::deform::euler_like_check(&chart, &e, cap)?;
            Ok(Outcome::new(
                json!({
                    "field": field_label(&field),
                    "cap": cap,
                    "pass": report.pass,
                    "witnesses": report.witnesses,
                }),
                report.pass,
            ))
        }
        Command::Tube { field, samples, flow } => {
            let spec = load_spec(&field.chart)?;
            let chart = spec.build()?;
            let e = load_field(&field, &spec, &chart)?;
            let space = DeformationSpace::new(&chart)?;
            let t = space.t_field(&e)?;
            let starts: Vec<DeformPoint> =
                serde_json::from_str(&read_file(&samples)?).map_err(|e| Error::Parse(format!("sample file: {e}")))?;
            let opts = flow.options();
            let results = space.integrate_many(&t, &starts, &opts);
            let mut pass = true;
            let mut endpoints = Vec::new();
            for (start, result) in starts.iter().zip(results) {
                let start_json = DeformPointJson::from(start);
                match result.and_then(|end| Ok((space.unzoom(&end)?, end))) {
                    Ok((manifold, end)) => endpoints.push(json!({
                        "status": "ok",
                        "start": start_json,
                        "end": DeformPointJson::from(&end),
                        "manifold": floats(&manifold),
                    })),
                    Err(err @ (Error::DomainExit { .. } | Error::StepUnderflow { .. })) => {
                        pass = false;
                        let s = match err {
                            Error::DomainExit { s } | Error::StepUnderflow { s } => s,
                            _ => f64::NAN,
                        };
                        endpoints.push(json!({"status": err.kind(), "start": start_json, "s": F64(s)}));
                    }
                    Err(err) => return Err(err),
                }
            }
            Ok(Outcome::new(
                json!({
                    "pass": pass,
                    "field": field_label(&field),
                    "lambda_target": F64(opts.lambda_target),
                    "endpoints": endpoints,
                }),
                pass,
            ))
        }
        Command::TubeVerify {
            field,
            samples,
            count,
            seed,
            flow,
            fd_step,
            verify_tol,
        } => {
            let spec = load_spec(&field.chart)?;
            let chart = spec.build()?;
            let e = load_field(&field, &spec, &chart)?;
            let space = DeformationSpace::new(&chart)?;
            let t = space.t_field(&e)?;
            let points: Vec<DeformPoint> = match samples {
                Some(path) => serde_json::from_str(&read_file(&path)?)
                    .map_err(|e| Error::Parse(format!("sample file: {e}")))?,
                None => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..count)
                        .map(|_| DeformPoint {
                            lambda: 0.0,
                            y: (0..space.tangential().len()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                            z: (0..space.normal().len()).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                        })
                        .collect()
                }
            };
            let opts = VerifyOptions {
                tube: flow.options(),
                fd_step,
                tol: verify_tol,
                ..VerifyOptions::default()
            };
            let report = space.verify_tube(&t, &points, &opts)?;
            let mut value = serde_json::to_value(&report).map_err(|e| Error::Parse(e.to_string()))?;
            value["field"] = json!(field_label(&field));
            Ok(Outcome::new(value, report.pass))
        }
        Command::TgCompose {
            chart: arg,
            lambda,
            point,
            xi,
            eta,
            p,
            q,
            w,
        } => {
            let spec = load_spec(&arg)?;
            let chart = spec.build()?;
            let n = chart.dim();
            let tg = TangentGroupoid::new(&chart)?;
            let lambda = parse_rational(&lambda)?;
            let need = |s: &Option<String>, name: &str| -> Result<Vec<BigRational>, Error> {
                let s = s.as_ref().ok_or_else(|| Error::Parse(format!("--{name} is required at this level")))?;
                parse_vector(s, n, &format!("--{name}"))
            };
            let (g, h) = if lambda == BigRational::from_integer(0.into()) {
                let m = point_or_origin(&point, n)?;
                (
                    TGElement::Fiber {
                        m: m.clone(),
                        xi: GroupElement(need(&xi, "xi")?),
                    },
                    TGElement::Fiber {
                        m,
                        xi: GroupElement(need(&eta, "eta")?),
                    },
                )
            } else {
                let (pp, qq, ww) = (need(&p, "p")?, need(&q, "q")?, need(&w, "w")?);
                (
                    TGElement::Pair {
                        lambda: lambda.clone(),
                        p: pp,
                        q: qq.clone(),
                    },
                    TGElement::Pair { lambda, p: qq, q: ww },
                )
            };
            let gh = tg.compose(&g, &h)?;
            Ok(Outcome::new(
                json!({"pass": true, "g": g.to_json(), "h": h.to_json(), "result": gh.to_json()}),
                true,
            ))
        }
        Command::TgConverge {
            point,
            xi,
            eta,
            random,
            seed,
            lambdas,
            min_order,
        } => {
            let spec = load_spec(&point.chart)?;
            let chart = spec.build()?;
            let n = chart.dim();
            let m = point_or_origin(&point.point, n)?;
            let tg = TangentGroupoid::new(&chart)?;
            let lambdas = match lambdas {
                Some(s) => s
                    .split(',')
                    .map(|t| parse_rational(t.trim()))
                    .collect::<Result<Vec<_>, _>>()?,
                None => default_lambdas(),
            };
            let pairs: Vec<(GroupElement, GroupElement)> = match (xi, eta) {
                (Some(a), Some(b)) => vec![(
                    GroupElement(parse_vector(&a, n, "--xi")?),
                    GroupElement(parse_vector(&b, n, "--eta")?),
                )],
                (None, None) => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    (0..random)
                        .map(|_| {
                            (
                                GroupElement(random_rational_vector(&mut rng, n, 1, 8)),
                                GroupElement(random_rational_vector(&mut rng, n, 1, 8)),
                            )
                        })
                        .collect()
                }
                _ => return Err(Error::Parse("--xi and --eta must be given together".into())),
            };
            let runs = pairs
                .iter()
                .map(|(a, b)| tg.convergence_test(&m, a, b, &lambdas))
                .collect::<Result<Vec<_>, _>>()?;
            let pass = runs
                .iter()
                .all(|r| r.identically_zero || r.fitted_order.is_some_and(|o| o.0 >= min_order));
            Ok(Outcome::new(
                json!({"pass": pass, "point": rats(&m), "min_order": F64(min_order), "runs": runs}),
                pass,
            ))
        }
    }
}

fn emit(value: &Value) {
    let text = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    // a closed pipe on the reading side is not an error of ours
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn init_logging(quiet: bool) {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::new().filter_or("CARNOTKIT_LOG", "error"));
    if quiet {
        builder.filter_level(log::LevelFilter::Off);
    }
    builder.target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            emit(&json!({"pass": false, "error": {"kind": "usage", "message": e.to_string().trim_end()}}));
            return ExitCode::from(2);
        }
    };
    init_logging(cli.quiet);
    match run(cli.command) {
        Ok(outcome) => {
            emit(&outcome.value);
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(err) => {
            log::error!("{err}");
            emit(&json!({"pass": false, "error": {"kind": err.kind(), "message": err.to_string()}}));
            ExitCode::from(if err.is_input_error() { 2 } else { 1 })
        }
    }
}
