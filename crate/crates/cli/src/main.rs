//! `pgexplain` command line: dataset generation, GNN and explainer
//! training, explanation export and evaluation.

mod config;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pgexplain::dataio::{load_dataset, parse_tu, save_dataset};
use pgexplain::eval::{
    connectivity_demo, evaluate_method, format_table, inductive_sweep, prepare_instances, reg_ablation, EvalReport,
    Method,
};
use pgexplain::explainer::{explain, train_pgexplainer};
use pgexplain::graph::to_dot;
use pgexplain::rng::derive_seed;
use pgexplain::synthgen::gen_dataset;
use pgexplain::{Dataset, ExplainerNet, GnnModel, Instance, Task};

use crate::config::{Overrides, Provenance, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "pgexplain", version, about = "Parameterized edge explanations for message-passing GNNs")]
struct Cli {
    /// Root seed; every module draws from a labeled substream of it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON run configuration; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for runs and grid cells.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(flatten)]
    hyper: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Inputs {
    /// Dataset JSON written by `gen` or `ingest`.
    #[arg(long)]
    dataset: PathBuf,
    /// GNN checkpoint written by `train-gnn`.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic benchmark.
    Gen {
        #[arg(long)]
        name: String,
    },
    /// Convert a TU-format bundle (`<NAME>_A.txt`, ...) to dataset JSON.
    Ingest {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        name: String,
    },
    /// Train the GNN classifier.
    TrainGnn {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Train the explainer on every explainable instance.
    TrainExplainer {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Explain one instance (node id or graph index); writes DOT and JSON.
    Explain {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        explainer: PathBuf,
        #[arg(long)]
        instance: usize,
        #[arg(long)]
        topk: Option<usize>,
    },
    /// Explanation AUC of one or more methods (comma separated).
    Eval {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value = "pgexplainer")]
        method: String,
    },
    /// AUC on held-out instances as a function of training-set size.
    Inductive {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 30])]
        alphas: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
    },
    /// Regularizer grid, plus the connectivity demo when `--connect` is set.
    Ablate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.01, 0.05, 0.1])]
        sizes: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.1, 1.0])]
        entropies: Vec<f64>,
        /// Connectivity weights to demo, e.g. `0,5,10`.
        #[arg(long, value_delimiter = ',')]
        connect: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        connect_seeds: usize,
        /// Skip the size/entropy grid.
        #[arg(long)]
        no_grid: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Gen { .. } => "gen",
            Command::Ingest { .. } => "ingest",
            Command::TrainGnn { .. } => "train-gnn",
            Command::TrainExplainer { .. } => "train-explainer",
            Command::Explain { .. } => "explain",
            Command::Eval { .. } => "eval",
            Command::Inductive { .. } => "inductive",
            Command::Ablate { .. } => "ablate",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with 2 on usage errors and 0 for --help.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(cli.command.name(), cli.seed, cli.out, cli.jobs, &cli.hyper);
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let prov = cfg.provenance();
    prov.write_json(&cfg.out.join(format!("{}.config.json", cfg.command)), &cfg)?;

    match cli.command {
        Command::Gen { name } => {
            let ds = gen_dataset(&name, cfg.module_seed("synthgen"))?;
            write_dataset(&cfg, &prov, &ds, &name)
        }
        Command::Ingest { dir, name } => {
            let ds = parse_tu(&dir, &name)?;
            write_dataset(&cfg, &prov, &ds, &name)
        }
        Command::TrainGnn { dataset } => {
            let ds = load_dataset(&dataset)?;
            let tc = cfg.gnn_config();
            let (model, report) = pgexplain::gnn::train(&ds, &tc)?;
            log::info!(
                "{}: train {:.3} val {:.3} test {:.3} (best epoch {})",
                ds.name,
                report.train_acc,
                report.val_acc,
                report.test_acc,
                report.best_epoch
            );
            prov.write_json_str(&cfg.out.join("model.json"), &model.to_json()?)?;
            prov.write_json(&cfg.out.join("train_report.json"), &report)
        }
        Command::TrainExplainer { inputs } => {
            let (ds, model) = load_inputs(&inputs)?;
            let ec = cfg.explainer_config();
            let preps = prepare_instances(&model, &ds, cfg.max_instances, cfg.module_seed("eval"))?;
            let trained = train_pgexplainer(&model, &preps, &ec)?;
            log::info!("{}: {} instances, final loss {:.4}", ds.name, preps.len(), trained.losses.last().copied().unwrap_or(f64::NAN));
            prov.write_json_str(&cfg.out.join("explainer.json"), &trained.net.to_json()?)?;
            prov.write_json(&cfg.out.join("explainer_losses.json"), &trained.losses)
        }
        Command::Explain { inputs, explainer, instance, topk } => {
            let (ds, model) = load_inputs(&inputs)?;
            let net = ExplainerNet::load(&explainer)?;
            let k = topk.unwrap_or(cfg.topk);
            let item = match ds.task {
                Task::Node => Instance::Node { graph: 0, node: instance },
                Task::Graph => Instance::Graph { graph: instance },
            };
            let ex = explain(&net, &model, &ds, item, k)?;
            let dot = to_dot(&ex.graph, &ex.ranking_scores(), k)?;
            fs::write(cfg.out.join(format!("explanation-{instance}.dot")), prov.dot_header() + &dot)?;
            prov.write_json(&cfg.out.join(format!("explanation-{instance}.json")), &ex)?;
            log::info!("explained instance {instance} in {:.3} ms; top-{k} edges written", ex.elapsed_ms);
            Ok(())
        }
        Command::Eval { inputs, method } => {
            let (ds, model) = load_inputs(&inputs)?;
            let methods = method.split(',').map(str::parse).collect::<pgexplain::Result<Vec<Method>>>()?;
            let ec = cfg.eval_config();
            let mut reports: Vec<EvalReport> = Vec::new();
            for m in methods {
                let r = evaluate_method(m, &model, &ds, &ec)?;
                log::info!("{} {}: AUC {:.3} ± {:.3}", ds.name, m.name(), r.mean_auc, r.std_auc);
                prov.write_json(&cfg.out.join(format!("eval-{}.json", m.name())), &r)?;
                reports.push(r);
            }
            let table = format_table(&reports);
            print!("{table}");
            fs::write(cfg.out.join("eval.txt"), prov.text_header() + &table)?;
            Ok(())
        }
        Command::Inductive { inputs, alphas, seeds } => {
            let (ds, model) = load_inputs(&inputs)?;
            let preps = prepare_instances(&model, &ds, cfg.max_instances, cfg.module_seed("eval"))?;
            let seeds: Vec<u64> = (0..seeds).map(|i| derive_seed(cfg.seed, &format!("inductive-{i}"))).collect();
            let points = inductive_sweep(&model, &preps, &alphas, &seeds, &cfg.explainer_config())?;
            for p in &points {
                log::info!("alpha {:>3}: AUC {:.3} ± {:.3}", p.alpha, p.mean, p.std);
            }
            prov.write_json(&cfg.out.join("inductive.json"), &points)
        }
        Command::Ablate { inputs, sizes, entropies, connect, connect_seeds, no_grid } => {
            let (ds, model) = load_inputs(&inputs)?;
            let preps = prepare_instances(&model, &ds, cfg.max_instances, cfg.module_seed("eval"))?;
            let ec = cfg.explainer_config();
            if !no_grid {
                let grid = reg_ablation(&model, &preps, &sizes, &entropies, &ec, cfg.jobs)?;
                prov.write_json(&cfg.out.join("ablation.json"), &grid)?;
            }
            if !connect.is_empty() {
                let mut all = Vec::new();
                for i in 0..connect_seeds {
                    let seed = derive_seed(cfg.seed, &format!("connectivity-{i}"));
                    for r in connectivity_demo(&model, &preps, &connect, seed, cfg.topk, &ec)? {
                        let file = format!("connectivity-l{}-s{i}.dot", r.lambda_connect);
                        fs::write(cfg.out.join(file), prov.dot_header() + &r.dot)?;
                        log::info!(
                            "lambda_connect {} seed {i}: connected {} ({:.2} of instances)",
                            r.lambda_connect,
                            r.connected,
                            r.connected_fraction
                        );
                        all.push(r);
                    }
                }
                prov.write_json(&cfg.out.join("connectivity.json"), &all)?;
            }
            Ok(())
        }
    }
}

fn write_dataset(cfg: &RunConfig, prov: &Provenance, ds: &Dataset, name: &str) -> Result<()> {
    let path = cfg.out.join(format!("{name}.json"));
    save_dataset(ds, &path)?;
    prov.stamp_file(&path)?;
    log::info!("{name}: {} graphs, {} nodes, {} directed edges", ds.graphs.len(), ds.total_nodes(), ds.total_edges());
    Ok(())
}

fn load_inputs(inputs: &Inputs) -> Result<(Dataset, GnnModel)> {
    let ds = load_dataset(&inputs.dataset)?;
    let model = GnnModel::load(&inputs.model)?;
    if model.input_dim != ds.feature_dim() {
        bail!("model expects {} features, dataset has {}", model.input_dim, ds.feature_dim());
    }
    Ok((ds, model))
}
