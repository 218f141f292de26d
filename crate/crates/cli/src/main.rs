use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use bnskel::experiment::{
    learn_skeleton, load_config, run_support_study, run_sweep, LearnOptions, LearnedSkeleton, SupportStudyConfig,
    SweepConfig,
};
use bnskel::theory::{check_network, CheckOptions};
use bnskel::{
    ancestral_sample, generate_network, score, CategoricalNetwork, CombineRule, GeneratorConfig, SampleMatrix, Scheme,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bnskel", version, about = "Skeleton recovery for discrete Bayesian networks")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML or JSON file with settings for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random network and write network.json.
    GenNet {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        edge_prob: Option<f64>,
        #[arg(long)]
        max_degree: Option<usize>,
    },
    /// Draw samples from a network and write samples.csv.
    Sample {
        #[arg(long)]
        net: PathBuf,
        #[arg(long = "samples", short = 'N')]
        n_samples: usize,
    },
    /// Learn the skeleton from samples and write skeleton.json.
    Learn {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Use one regularization value for every node.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        rule: Option<CombineRule>,
    },
    /// Compute the recoverability report and write report.json.
    Check {
        #[arg(long)]
        net: PathBuf,
        /// Use plug-in estimates from these samples instead of enumeration.
        #[arg(long)]
        data: Option<PathBuf>,
        /// N entering the lambda condition.
        #[arg(long = "samples", short = 'N')]
        n_samples: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = Scheme::Effects)]
        scheme: Scheme,
    },
    /// Score a learned skeleton against the true network and write score.json.
    Score {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        skeleton: PathBuf,
    },
    /// Run the sample-complexity sweep and write sweep.csv.
    Sweep,
    /// Run the support comparison study and write support_study.csv.
    SupportStudy,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<bnskel::Error>() {
        Some(bnskel::Error::NotConverged { .. }) => 3,
        Some(e) if e.is_validation() => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let g = &cli.global;
    fs::create_dir_all(&g.out).with_context(|| format!("creating {}", g.out.display()))?;
    match cli.command {
        Command::GenNet {
            n,
            k,
            edge_prob,
            max_degree,
        } => {
            let mut cfg: GeneratorConfig = match &g.config {
                Some(path) => load_config(path)?,
                None => GeneratorConfig::new(n.unwrap_or(20), k.unwrap_or(2)),
            };
            cfg.n = n.unwrap_or(cfg.n);
            cfg.k = k.unwrap_or(cfg.k);
            cfg.edge_prob = edge_prob.unwrap_or(cfg.edge_prob);
            cfg.max_degree = max_degree.or(cfg.max_degree);
            let net = generate_network(&cfg, g.seed.unwrap_or(0))?;
            let path = g.out.join("network.json");
            net.save(&path)?;
            println!("{} nodes, {} edges -> {}", net.n(), net.edge_count(), path.display());
        }
        Command::Sample { net, n_samples } => {
            let net = CategoricalNetwork::load(&net)?;
            let samples = ancestral_sample(&net, n_samples, g.seed.unwrap_or(0))?;
            let path = g.out.join("samples.csv");
            samples.write_csv(&net, &path)?;
            println!("{} rows -> {}", samples.n_samples(), path.display());
        }
        Command::Learn {
            net,
            data,
            lambda,
            rule,
        } => {
            let net = CategoricalNetwork::load(&net)?;
            let samples = SampleMatrix::read_csv(&net, &data)?;
            let mut options: LearnOptions = match &g.config {
                Some(path) => load_config(path)?,
                None => LearnOptions::default(),
            };
            options.fixed_lambda = lambda.or(options.fixed_lambda);
            options.rule = rule.unwrap_or(options.rule);
            let learned = learn_skeleton(&samples, &options)?;
            let path = g.out.join("skeleton.json");
            write_json(&path, &learned)?;
            for (i, j) in &learned.edges {
                println!("{} -- {}", net.node(*i).name, net.node(*j).name);
            }
            if !learned.nonconverged.is_empty() {
                eprintln!(
                    "error: solver did not converge for nodes {:?}; last iterates written to {}",
                    learned.nonconverged,
                    path.display()
                );
                return Ok(ExitCode::from(3));
            }
        }
        Command::Check {
            net,
            data,
            n_samples,
            lambda,
            scheme,
        } => {
            let net = CategoricalNetwork::load(&net)?;
            let samples = data.map(|d| SampleMatrix::read_csv(&net, d)).transpose()?;
            let options = CheckOptions {
                scheme,
                n_samples,
                lambda,
            };
            let report = check_network(&net, samples.as_ref(), &options)?;
            fs::write(g.out.join("report.json"), report.to_json()).context("writing report.json")?;
            print!("{}", report.render_table());
        }
        Command::Score { net, skeleton } => {
            let net = CategoricalNetwork::load(&net)?;
            let text = fs::read_to_string(&skeleton).with_context(|| format!("reading {}", skeleton.display()))?;
            let learned: LearnedSkeleton = serde_json::from_str(&text).map_err(|e| bnskel::Error::Parse {
                context: skeleton.display().to_string(),
                message: e.to_string(),
            })?;
            let supports: Vec<BTreeSet<usize>> = learned.neighbor_sets();
            let s = score(&supports, &net)?;
            write_json(&g.out.join("score.json"), &s)?;
            println!("precision {:.4}  recall {:.4}  f1 {:.4}", s.precision, s.recall, s.f1);
        }
        Command::Sweep => {
            let mut config: SweepConfig = match &g.config {
                Some(path) => load_config(path)?,
                None => SweepConfig::default(),
            };
            config.seed = g.seed.unwrap_or(config.seed);
            let output = run_sweep(&config)?;
            let path = g.out.join("sweep.csv");
            output.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
            for row in &output.means {
                println!(
                    "n={:<4} cp={:<4} N={:<8} precision {:.3}  recall {:.3}  f1 {:.3}",
                    row.n, row.cp, row.n_samples, row.precision, row.recall, row.f1
                );
            }
            println!("determinism hash {}", output.determinism_hash());
        }
        Command::SupportStudy => {
            let mut config: SupportStudyConfig = match &g.config {
                Some(path) => load_config(path)?,
                None => SupportStudyConfig::default(),
            };
            config.seed = g.seed.unwrap_or(config.seed);
            let output = run_support_study(&config)?;
            let path = g.out.join("support_study.csv");
            output.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
            for row in &output.aggregates {
                println!(
                    "n={:<4} nodes={:<5} MIPC holds {:.3}  MIMB holds {:.3}  MIPC <= MIMB {:.3}",
                    row.n, row.nodes, row.mipc_holds, row.mimb_holds, row.mipc_le_mimb
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
