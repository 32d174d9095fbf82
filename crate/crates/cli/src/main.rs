use clap::{Args, Parser, Subcommand};
use opf_sense::dataset::{generate, sample_thetas, split, Dataset, GenerateOptions, SampleStatus, SplitPlan};
use opf_sense::mlp::{Checkpoint, TrainConfig};
use opf_sense::netmodel::{CostMode, Network};
use opf_sense::opf::{solve_opf, SolverOptions};
use opf_sense::powerflow::{solve_pf, PfSpec, DEFAULT_MAX_ITER, DEFAULT_TOL};
use opf_sense::qcqp::{OutputLayout, ParamSpec, QcqpModel};
use opf_sense::sensitivity::{solve_sensitivities, SensitivityOptions};
use opf_sense::{Error, Result};
use opf_sense_cli::config::ExperimentConfig;
use opf_sense_cli::experiment::{run_experiment, run_seed, standard_variants};
use opf_sense_cli::load_case;
use opf_sense_cli::report::{emit_reports, ExperimentResults};
use opf_sense_cli::violations::violation_report;
use serde_json::{json, Value};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "opf-sense", version, about = "AC-OPF sensitivities and sensitivity-informed OPF predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CaseArgs {
    /// Built-in case name or path to a MATPOWER case file
    #[arg(long)]
    case: String,
    /// Handling of quadratic cost terms: reject or linearize-at-midpoint
    #[arg(long)]
    cost_mode: Option<CostMode>,
}

impl CaseArgs {
    fn load(&self) -> Result<Network> {
        load_case(&self.case, self.cost_mode)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse a case and print its per-unit network record
    Parse {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Power flow at the generator setpoints stored in the case
    Pf {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal power flow with all loads scaled by `--scale`
    Opf {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimal power flow and the Jacobian of the generator setpoints
    /// with respect to the load-bus demands
    Sense {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train both predictor variants over the configured splits
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Case the dataset was generated on; defaults to the name in its header
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Full-size pool, training sizes, runs and epochs
        #[arg(long)]
        paper_scale: bool,
        /// Output directory for results.json and model checkpoints
        #[arg(long)]
        out: PathBuf,
    },
    /// Test error and constraint violations of a checkpoint on a dataset
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write CSV tables and plots from a results file
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Label random load draws
    Generate {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        lo: f64,
        #[arg(long, default_value_t = 1.2)]
        hi: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample counts by status
    Info {
        #[arg(long)]
        data: PathBuf,
    },
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn polar(v: &[f64], nb: usize) -> (Vec<f64>, Vec<f64>) {
    let vm = (0..nb).map(|k| v[k].hypot(v[nb + k])).collect();
    let va = (0..nb).map(|k| v[nb + k].atan2(v[k]).to_degrees()).collect();
    (vm, va)
}

fn scaled_theta(model: &QcqpModel, net: &Network, scale: f64) -> Vec<f64> {
    model.params.nominal(net).iter().map(|t| t * scale).collect()
}

fn dataset_network(ds: &Dataset, case: Option<&str>) -> Result<Network> {
    let net = load_case(case.unwrap_or(&ds.header.case), None)?;
    ds.check_network(&net)?;
    Ok(net)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Parse { case, out } => {
            let net = case.load()?;
            match out {
                Some(p) => std::fs::write(p, net.to_json() + "\n")?,
                None => println!("{}", net.to_json()),
            }
        }
        Command::Pf { case, out } => {
            let net = case.load()?;
            let model = QcqpModel::from_network(&net)?;
            let pg: Vec<f64> = net.generators.iter().map(|g| g.pg0).collect();
            let vm: Vec<f64> = net.generators.iter().map(|g| g.vg0).collect();
            let spec = PfSpec::from_setpoints(&net, &model, &model.params.nominal(&net), &pg, &vm)?;
            let sol = solve_pf(&net, &spec, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
            let (vm, va) = polar(&sol.rectangular(), net.n_bus());
            emit(&json!({"iterations": sol.iterations, "max_mismatch": sol.max_mismatch, "vm": vm, "va_deg": va}), out.as_deref())?;
        }
        Command::Opf { case, scale, out } => {
            let net = case.load()?;
            let model = QcqpModel::from_network(&net)?;
            let sol = solve_opf(&model, &scaled_theta(&model, &net, scale), &SolverOptions::default())?;
            let (vm, va) = polar(&sol.v, net.n_bus());
            let ng = net.n_gen();
            emit(
                &json!({
                    "status": sol.status,
                    "objective": sol.objective,
                    "pg": &sol.xg[..ng],
                    "qg": &sol.xg[ng..],
                    "vm": vm,
                    "va_deg": va,
                    "kkt": sol.residuals,
                    "iterations": sol.iterations,
                    "active": sol.active,
                }),
                out.as_deref(),
            )?;
        }
        Command::Sense { case, scale, out } => {
            let net = case.load()?;
            let model = QcqpModel::from_network(&net)?;
            let theta = scaled_theta(&model, &net, scale);
            let sol = solve_opf(&model, &theta, &SolverOptions::default())?;
            let rec = solve_sensitivities(&model, &sol, &theta, &SensitivityOptions::default())?;
            let layout = OutputLayout::new(&model);
            let rows: Option<Vec<Vec<f64>>> =
                rec.j_out.as_ref().map(|j| (0..j.nrows()).map(|r| j.row(r).iter().copied().collect()).collect());
            emit(
                &json!({
                    "status": sol.status,
                    "kkt": sol.residuals,
                    "param_labels": model.params.labels(),
                    "output_labels": layout.labels(&net),
                    "output": layout.extract(&model, &sol.v, &sol.xg),
                    "jacobian": rows,
                    "degenerate": rec.degenerate,
                    "rank_deficient": rec.rank_deficient,
                    "rejected": rec.rejected,
                    "residual": rec.residual,
                }),
                out.as_deref(),
            )?;
        }
        Command::Dataset(DatasetCommand::Generate { case, n, seed, lo, hi, out }) => {
            let net = case.load()?;
            let params = ParamSpec::load_buses(&net);
            let thetas = sample_thetas(&params.nominal(&net), n, (lo, hi), seed)?;
            let ds = generate(&case.case, &net, &params, &thetas, &GenerateOptions { seed, ..Default::default() })?;
            ds.write(&out)?;
            log::info!("wrote {} samples ({} usable) to {}", ds.samples.len(), ds.usable().len(), out.display());
        }
        Command::Dataset(DatasetCommand::Info { data }) => {
            let ds = Dataset::read(&data)?;
            let count = |s| ds.count(s);
            emit(
                &json!({
                    "case": ds.header.case,
                    "samples": ds.samples.len(),
                    "labeled": count(SampleStatus::Labeled),
                    "value_only": count(SampleStatus::ValueOnly),
                    "infeasible": count(SampleStatus::Infeasible),
                    "failed": count(SampleStatus::Failed),
                }),
                None,
            )?;
        }
        Command::Train { data, case, config, seed, paper_scale, out } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if paper_scale {
                cfg = cfg.paper_scale();
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ds = Dataset::read(&data)?;
            let net = dataset_network(&ds, case.as_deref())?;
            cfg.case = ds.header.case.clone();
            let pool = ds.usable();
            if pool.len() < cfg.pool {
                log::warn!("dataset has {} usable samples, fewer than the configured pool of {}", pool.len(), cfg.pool);
            }
            let pool = &pool[..pool.len().min(cfg.pool)];
            let splits = split(pool, &SplitPlan { sizes: cfg.sizes.clone(), runs: cfg.runs.clone(), seed: cfg.seed })?;
            let trained = run_experiment(&ds, &net, &splits, &cfg, &standard_variants(cfg.rho), true)?;
            std::fs::create_dir_all(out.join("models"))?;
            for t in &trained {
                if let Some(m) = &t.model {
                    let r = &t.result;
                    let name = format!("size{}_run{}_{}.json", r.size, r.run, r.variant.to_lowercase());
                    let tc = TrainConfig { seed: run_seed(cfg.seed, r.size, r.run), ..cfg.train_config(r.rho) };
                    Checkpoint::from_model(m, Some(tc)).save(&out.join("models").join(name))?;
                }
            }
            let runs = trained.into_iter().map(|t| t.result).collect();
            ExperimentResults::new(&ds.header.case, &ds.header.network_hash, cfg, runs).save(&out.join("results.json"))?;
        }
        Command::Eval { checkpoint, data, case, out } => {
            let model = Checkpoint::load(&checkpoint)?.into_model()?;
            let ds = Dataset::read(&data)?;
            let net = dataset_network(&ds, case.as_deref())?;
            let qm = opf_sense::qcqp::assemble_qcqp(&net, &opf_sense::qcqp::build_quadforms(&net), &ds.header.params)?;
            let idx = ds.usable();
            if idx.is_empty() {
                return Err(Error::Validation("dataset has no usable samples".into()));
            }
            let examples = ds.examples(&idx, false)?;
            let thetas: Vec<Vec<f64>> = examples.iter().map(|e| e.theta.clone()).collect();
            let stats = violation_report(&net, &qm, &thetas, |t| model.predict(t))?;
            emit(&json!({"instances": idx.len(), "mse": model.mse(&examples)?, "violations": stats}), out.as_deref())?;
        }
        Command::Report { results, out } => {
            emit_reports(&ExperimentResults::load(&results)?, &out)?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
        std::process::exit(1);
    }
}
