use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ugx::emd::{avg_emd, emd_rows, EmdMode, EXACT_MAX_N};
use ugx::fmt::g17;
use ugx::graphs::{gen_random_regular, spectral_report};
use ugx::instances::{gen_planted, random_assignment};
use ugx::normalize::{normalize, verify_normalization, DEFAULT_PSD_TOL, DEFAULT_ZERO_TOL};
use ugx::oracle::{brute_force_opt, DEFAULT_BRUTE_BUDGET};
use ugx::rounding::DEFAULT_RADIUS;
use ugx::sdp::{integral_solution, mix_solutions, sdp_objective, verify_feasibility, TripleCheck, DEFAULT_FEASIBILITY_TOL};
use ugx::{Assignment, Error, Fallback, Graph, Rounder, RoundingParams, SdpSolution, UgInstance};

const EXIT_INPUT: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "ugx", version, about = "Propagation rounding for Unique Games on expanders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Files {
    /// Directory holding graph.json, instance.json, plant.json and sdp.json.
    #[arg(long, default_value = ".")]
    dir: PathBuf,
}

impl Files {
    fn path(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit.clone().unwrap_or_else(|| self.dir.join(name))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundMode {
    Mc,
    Derand,
}

#[derive(Clone, Copy, ValueEnum)]
enum FallbackArg {
    Random,
    Zero,
}

impl From<FallbackArg> for Fallback {
    fn from(f: FallbackArg) -> Self {
        match f {
            FallbackArg::Random => Fallback::Random,
            FallbackArg::Zero => Fallback::FixedZero,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random regular graph, a planted instance and a feasible SDP solution.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weight of the planted assignment in the SDP mixture; the rest goes
        /// to a random assignment.
        #[arg(long, default_value_t = 1.0)]
        plant_weight: f64,
        #[command(flatten)]
        files: Files,
    },
    /// Spectral gap, edge expansion and Cheeger check as JSON.
    Spectral {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[command(flatten)]
        files: Files,
    },
    /// Check SDP feasibility and report the objective.
    VerifySdp {
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        sdp: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_FEASIBILITY_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        files: Files,
    },
    /// Normalize an SDP solution and verify the result.
    Normalize {
        #[arg(long)]
        sdp: Option<PathBuf>,
        /// Output file; defaults to normalized.json in --dir.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        files: Files,
    },
    /// Per-pair earthmover distances as CSV, or their average as JSON.
    Emd {
        #[arg(long)]
        sdp: Option<PathBuf>,
        #[arg(long)]
        average: bool,
        /// Sampled pairs for the average when n exceeds the exact limit.
        #[arg(long, default_value_t = 100_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        files: Files,
    },
    /// Round an SDP solution to an assignment.
    Round {
        #[arg(long, value_enum, default_value = "mc")]
        mode: RoundMode,
        #[arg(long = "R", default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "random")]
        fallback: FallbackArg,
        /// Expansion used by the failure gate; defaults to the certified bound.
        #[arg(long)]
        h: Option<f64>,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        sdp: Option<PathBuf>,
        /// Also write the assignment here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        files: Files,
    },
    /// Monte Carlo estimates of the per-lemma quantities as CSV.
    Monitor {
        #[arg(long = "R", default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        fixed_initial: usize,
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long)]
        sdp: Option<PathBuf>,
        #[command(flatten)]
        files: Files,
    },
    /// Exhaustive optimum of a small instance.
    Brute {
        #[arg(long)]
        instance: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BRUTE_BUDGET)]
        budget: u64,
        #[command(flatten)]
        files: Files,
    },
    /// Sweep planted instances over a noise grid and write results.csv.
    Experiment {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_delimiter = ',', default_value = "0,0.02")]
        noise: Vec<f64>,
        #[arg(long = "R", default_value_t = DEFAULT_RADIUS)]
        radius: f64,
        #[arg(long, default_value_t = 0.95)]
        plant_weight: f64,
        #[arg(long, default_value_t = 64)]
        trials: usize,
        /// Instances per noise level.
        #[arg(long, default_value_t = 1)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        files: Files,
    },
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type CliResult = std::result::Result<u8, Failure>;

fn read(path: &Path) -> std::result::Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> std::result::Result<(), Failure> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn load<T>(path: &Path, parse: impl Fn(&str) -> ugx::Result<T>) -> std::result::Result<T, Failure> {
    let text = read(path)?;
    parse(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON value serializes"));
}

fn planted_solution(inst: &UgInstance, plant: &Assignment, weight: f64, seed: u64) -> ugx::Result<SdpSolution> {
    if !(weight > 0.0 && weight <= 1.0) {
        return Err(Error::InvalidInput(format!("plant weight {weight} must lie in (0, 1]")));
    }
    let p = integral_solution(inst, plant)?;
    if weight == 1.0 {
        return Ok(p);
    }
    let r = integral_solution(inst, &random_assignment(inst.n(), inst.k(), seed ^ 0x5EED))?;
    mix_solutions(&[(&p, weight), (&r, 1.0 - weight)])
}

fn check_noise(noise: f64) -> ugx::Result<()> {
    if (0.0..=1.0).contains(&noise) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("noise {noise} must lie in [0, 1]")))
    }
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Gen { n, d, k, noise, seed, plant_weight, files } => {
            check_noise(noise)?;
            let g = gen_random_regular(n, d, seed)?;
            let (inst, plant) = gen_planted(&g, k, noise, seed)?;
            let s = planted_solution(&inst, &plant, plant_weight, seed)?;
            write(&files.dir.join("graph.json"), &g.to_json())?;
            write(&files.dir.join("instance.json"), &inst.to_json())?;
            write(&files.dir.join("plant.json"), &plant.to_json())?;
            write(&files.dir.join("sdp.json"), &s.to_json())?;
            Ok(0)
        }
        Command::Spectral { graph, files } => {
            let g = load(&files.path(&graph, "graph.json"), Graph::from_json)?;
            let report = spectral_report(&g)?;
            print_json(&serde_json::to_value(&report).expect("report serializes"));
            Ok(0)
        }
        Command::VerifySdp { instance, sdp, tol, seed, files } => {
            let inst = load(&files.path(&instance, "instance.json"), UgInstance::from_json)?;
            let s = load(&files.path(&sdp, "sdp.json"), SdpSolution::from_json)?;
            let edges: Vec<(usize, usize)> = inst.graph().edges().to_vec();
            let check = TripleCheck { seed, edges: Some(&edges), ..Default::default() };
            let report = verify_feasibility(&s, tol, &check);
            let objective = sdp_objective(&inst, &s)?;
            print_json(&json!({ "feasibility": report, "epsilon": objective.epsilon }));
            if report.pass {
                Ok(0)
            } else {
                Err(Failure::Input("SDP solution is infeasible".into()))
            }
        }
        Command::Normalize { sdp, out, tol, seed, files } => {
            let s = load(&files.path(&sdp, "sdp.json"), SdpSolution::from_json)?;
            let ns = normalize(&s, DEFAULT_ZERO_TOL, DEFAULT_PSD_TOL)?;
            let check = TripleCheck { seed, ..Default::default() };
            let report = verify_normalization(&s, &ns, tol, &check);
            write(&files.path(&out, "normalized.json"), &ns.to_json())?;
            print_json(&serde_json::to_value(&report).expect("report serializes"));
            if report.pass {
                Ok(0)
            } else {
                Err(Failure::Numerical("normalized solution violates its properties".into()))
            }
        }
        Command::Emd { sdp, average, pairs, seed, files } => {
            let s = load(&files.path(&sdp, "sdp.json"), SdpSolution::from_json)?;
            if average {
                let mode = if s.n() <= EXACT_MAX_N { EmdMode::Exact } else { EmdMode::Sampled };
                let avg = avg_emd(&s, mode, pairs, seed)?;
                print_json(&serde_json::to_value(&avg).expect("report serializes"));
            } else {
                let mut out = String::from("u,v,emd\n");
                for (u, v, x) in emd_rows(&s) {
                    out.push_str(&format!("{u},{v},{}\n", g17(x)));
                }
                print!("{out}");
            }
            Ok(0)
        }
        Command::Round { mode, radius, trials, seed, fallback, h, instance, sdp, out, files } => {
            let params = RoundingParams { radius, seed, trials, fallback: fallback.into() };
            params.validate()?;
            let inst = load(&files.path(&instance, "instance.json"), UgInstance::from_json)?;
            let s = load(&files.path(&sdp, "sdp.json"), SdpSolution::from_json)?;
            let ns = normalize(&s, DEFAULT_ZERO_TOL, DEFAULT_PSD_TOL)?;
            let rounder = match h {
                Some(h) => Rounder::with_expansion(&inst, &s, &ns, params, h)?,
                None => Rounder::new(&inst, &s, &ns, params)?,
            };
            let (outcome, extra) = match mode {
                RoundMode::Mc => {
                    let best = rounder.round_best_of()?;
                    if !best.invariants.is_clean() {
                        return Err(Failure::Numerical(format!("rounding invariants violated: {:?}", best.invariants)));
                    }
                    let extra = json!({ "mode": "mc", "trial": best.trial, "trials": best.trials, "failed_trials": best.failed_trials });
                    (best.outcome, extra)
                }
                RoundMode::Derand => (rounder.round_derandomized()?, json!({ "mode": "derand" })),
            };
            if let Some(path) = out {
                write(&path, &outcome.assignment.to_json())?;
            }
            print_json(&json!({
                "run": extra,
                "satisfied": outcome.satisfied,
                "decided": outcome.decided_count,
                "cut_edges": outcome.cut_edges,
                "failed": outcome.failed,
                "epsilon": rounder.epsilon(),
                "h": rounder.expansion(),
                "R": radius,
                "bound_theorem": rounder.theorem_bound(),
                "initial_vertex": outcome.initial_vertex,
                "initial_state": outcome.initial_state,
                "t": outcome.t,
                "r": outcome.r,
                "labels": outcome.assignment.labels,
            }));
            Ok(if outcome.failed { EXIT_FAILED } else { 0 })
        }
        Command::Monitor { radius, trials, seed, fixed_initial, instance, sdp, files } => {
            let params = RoundingParams { radius, seed, trials: 1, fallback: Fallback::Random };
            params.validate()?;
            let inst = load(&files.path(&instance, "instance.json"), UgInstance::from_json)?;
            let s = load(&files.path(&sdp, "sdp.json"), SdpSolution::from_json)?;
            let ns = normalize(&s, DEFAULT_ZERO_TOL, DEFAULT_PSD_TOL)?;
            let rounder = Rounder::new(&inst, &s, &ns, params)?;
            let report = rounder.lemma_monitors(trials, fixed_initial)?;
            print!("{}", report.to_csv());
            if report.invariants.is_clean() {
                Ok(0)
            } else {
                Err(Failure::Numerical(format!("rounding invariants violated: {:?}", report.invariants)))
            }
        }
        Command::Brute { instance, budget, files } => {
            let inst = load(&files.path(&instance, "instance.json"), UgInstance::from_json)?;
            let r = brute_force_opt(&inst, budget)?;
            print_json(&serde_json::to_value(&r).expect("result serializes"));
            Ok(0)
        }
        Command::Experiment { n, d, k, noise, radius, plant_weight, trials, instances, seed, files } => {
            let params = RoundingParams { radius, seed, trials, fallback: Fallback::Random };
            params.validate()?;
            noise.iter().try_for_each(|&x| check_noise(x))?;
            if instances == 0 {
                return Err(Failure::Input("instances must be at least 1".into()));
            }
            let mut csv = String::from(
                "n,d,k,noise,eps_sdp,lambda2,h,avg_emd,R,satisfied_best,bound_theorem,pass\n",
            );
            for &x in &noise {
                for rep in 0..instances {
                    let inst_seed = seed.wrapping_add(rep as u64);
                    let g = gen_random_regular(n, d, inst_seed)?;
                    let (inst, plant) = gen_planted(&g, k, x, inst_seed)?;
                    let s = planted_solution(&inst, &plant, plant_weight, inst_seed)?;
                    let ns = normalize(&s, DEFAULT_ZERO_TOL, DEFAULT_PSD_TOL)?;
                    let spectral = spectral_report(&g)?;
                    let h = spectral.h_certified_lower();
                    let rounder = Rounder::with_expansion(&inst, &s, &ns, params, h)?;
                    let mode = if n <= EXACT_MAX_N { EmdMode::Exact } else { EmdMode::Sampled };
                    let emd = avg_emd(&s, mode, 100_000, inst_seed)?;
                    let best = rounder.round_best_of()?;
                    if !best.invariants.is_clean() {
                        return Err(Failure::Numerical(format!("rounding invariants violated: {:?}", best.invariants)));
                    }
                    let eps = rounder.epsilon();
                    let bound = 1.0 - (100.0 / (h * radius) + 64.0) * eps;
                    let satisfied = best.outcome.satisfied;
                    csv.push_str(&format!(
                        "{n},{d},{k},{},{},{},{},{},{},{},{},{}\n",
                        g17(x),
                        g17(eps),
                        g17(spectral.lambda2),
                        g17(h),
                        g17(emd.mean),
                        g17(radius),
                        g17(satisfied),
                        g17(bound),
                        satisfied >= bound
                    ));
                }
            }
            let path = files.dir.join("results.csv");
            write(&path, &csv)?;
            print!("{csv}");
            Ok(0)
        }
    }
}

fn configure_threads() -> std::result::Result<(), Failure> {
    let Ok(value) = std::env::var("UGX_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Input(format!("UGX_THREADS={value} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Input(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match configure_threads().and_then(|_| run(cli)) {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_NUMERICAL)
        }
    }
}
