//! Skeleton learning over all nodes, the sample-complexity sweep and the
//! support study.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoding::{MomentMatrix, Scheme};
use crate::error::{Error, Result};
use crate::lasso::{fit, FitOptions, FitResult, FitSummary, LambdaRule, Problem};
use crate::metrics::{assemble_skeleton, score, CombineRule};
use crate::network::{generate_network, CategoricalNetwork, GeneratorConfig};
use crate::rng::derive_seed;
use crate::sampler::{ancestral_sample, SampleMatrix, DEFAULT_ENUMERATION_CAP};
use crate::theory::{compare_supports, population_moments, Mode};

/// `ceil(10^cp ln((k - 1) n))`, at least 1.
pub fn samples_for_cp(cp: f64, n: usize, k: usize) -> usize {
    let log = (((k.saturating_sub(1)) * n) as f64).ln().max(0.0);
    ((10f64.powf(cp) * log).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnOptions {
    pub scheme: Scheme,
    pub lambda: LambdaRule,
    /// Overrides the schedule with one value for every node.
    pub fixed_lambda: Option<f64>,
    pub rule: CombineRule,
    /// Regress centered encodings, which amounts to fitting an intercept.
    pub center: bool,
    pub fit: FitOptions,
}

impl Default for LearnOptions {
    fn default() -> Self {
        LearnOptions {
            scheme: Scheme::Effects,
            lambda: LambdaRule {
                c1: 0.5,
                c2: 0.0,
                delta: 0.01,
            },
            fixed_lambda: None,
            rule: CombineRule::Union,
            center: false,
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedSkeleton {
    pub n: usize,
    pub rule: CombineRule,
    pub edges: Vec<(usize, usize)>,
    pub supports: Vec<BTreeSet<usize>>,
    pub fits: Vec<FitSummary>,
    /// Nodes whose fit stopped at `max_iter`; their last iterate is used.
    pub nonconverged: Vec<usize>,
}

/// Fits every node of `samples` in parallel and merges the supports.
pub fn learn_skeleton(samples: &SampleMatrix, options: &LearnOptions) -> Result<LearnedSkeleton> {
    let mut moments = MomentMatrix::from_samples(samples, options.scheme);
    if options.center {
        moments = moments.centered();
    }
    let levels = samples.levels().to_vec();
    let n_samples = samples.n_samples();
    let fits: Vec<(FitResult, bool)> = (0..samples.n())
        .into_par_iter()
        .map(|r| {
            let lambda = options
                .fixed_lambda
                .unwrap_or_else(|| options.lambda.for_node(&levels, r, n_samples));
            let problem = Problem::from_moments(&moments, r, lambda)?;
            match fit(&problem, &options.fit) {
                Ok(res) => Ok((res, true)),
                Err(Error::NotConverged { last, .. }) => Ok((*last, false)),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let supports: Vec<BTreeSet<usize>> = fits.iter().map(|(f, _)| f.support.iter().copied().collect()).collect();
    let skeleton = assemble_skeleton(&supports, options.rule);
    Ok(LearnedSkeleton {
        n: samples.n(),
        rule: options.rule,
        edges: skeleton.edges().collect(),
        supports,
        nonconverged: fits
            .iter()
            .enumerate()
            .filter(|(_, (_, ok))| !ok)
            .map(|(r, _)| r)
            .collect(),
        fits: fits.iter().map(|(f, _)| f.summary()).collect(),
    })
}

impl LearnedSkeleton {
    /// Neighbor sets of the merged skeleton.
    pub fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        crate::network::Skeleton::from_edges(self.n, self.edges.iter().copied()).neighbor_sets()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_list: Vec<usize>,
    pub k: usize,
    pub cp_list: Vec<f64>,
    pub repeats: usize,
    pub edge_prob: f64,
    pub cpt_range: [f64; 2],
    pub max_degree: Option<usize>,
    pub c1: f64,
    pub c2: f64,
    pub delta: f64,
    pub seed: u64,
    pub rule: CombineRule,
    pub scheme: Scheme,
    pub center: bool,
    pub max_iter: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_list: vec![20],
            k: 4,
            cp_list: vec![2.0, 3.0, 4.0, 5.0],
            repeats: 5,
            edge_prob: 0.5,
            cpt_range: [0.1, 0.9],
            max_degree: Some(3),
            c1: 0.5,
            c2: 0.0,
            delta: 0.01,
            seed: 0,
            rule: CombineRule::Union,
            scheme: Scheme::Effects,
            center: false,
            max_iter: 50_000,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::validation("sweep config", what.to_string()));
        if self.repeats == 0 {
            return fail("repeats must be ≥ 1");
        }
        if self.cp_list.is_empty() {
            return fail("cp_list must not be empty");
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return fail("n_list must be nonempty with n ≥ 1");
        }
        if self.k < 2 {
            return fail("k must be ≥ 2");
        }
        if self.cp_list.iter().any(|cp| !cp.is_finite()) {
            return fail("cp values must be finite");
        }
        if self.c1 < 0.0 || self.c2 < 0.0 || self.delta < 0.0 {
            return fail("c1, c2 and delta must be ≥ 0");
        }
        Ok(())
    }

    fn generator(&self, n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n,
            k: self.k,
            edge_prob: self.edge_prob,
            max_degree: self.max_degree,
            cpt_low: self.cpt_range[0],
            cpt_high: self.cpt_range[1],
        }
    }

    fn learn_options(&self) -> LearnOptions {
        LearnOptions {
            scheme: self.scheme,
            lambda: LambdaRule {
                c1: self.c1,
                c2: self.c2,
                delta: self.delta,
            },
            fixed_lambda: None,
            rule: self.rule,
            center: self.center,
            fit: FitOptions {
                max_iter: self.max_iter,
                ..FitOptions::default()
            },
        }
    }
}

/// Reads a TOML (`.toml`) or JSON (anything else) config.
pub fn load_config<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::parse(context, e.to_string()))
    } else {
        serde_json::from_str(&text).map_err(|e| Error::parse(context, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub n: usize,
    pub k: usize,
    pub cp: f64,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rule: CombineRule,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    /// One row per `(n, cp, repeat)` in grid order.
    pub runs: Vec<SweepRow>,
    /// One row per `(n, cp)` with the mean over repeats.
    pub means: Vec<SweepRow>,
}

impl SweepOutput {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, self.runs.iter().chain(&self.means))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// SHA-256 of the CSV rendering.
    pub fn determinism_hash(&self) -> String {
        crate::sha256_hex(self.to_csv_string().as_bytes())
    }

    pub fn mean(&self, n: usize, cp: f64) -> Option<&SweepRow> {
        self.means.iter().find(|r| r.n == n && r.cp == cp)
    }
}

fn write_rows<'a, W: Write, T: Serialize + 'a>(out: W, rows: impl IntoIterator<Item = &'a T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::parse("csv output", e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

fn run_cell(config: &SweepConfig, n: usize, cp_index: usize, repeat: usize) -> SweepRow {
    let cp = config.cp_list[cp_index];
    let net_seed = derive_seed(config.seed, &[n as u64, repeat as u64]);
    let n_samples = samples_for_cp(cp, n, config.k);
    let mut row = SweepRow {
        run_id: format!("n{n}-cp{cp}-r{repeat}"),
        n,
        k: config.k,
        cp,
        n_samples,
        seed: Some(net_seed),
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        rule: config.rule,
        status: String::new(),
    };
    let outcome = (|| -> Result<String> {
        let net = generate_network(&config.generator(n), net_seed)?;
        let samples = ancestral_sample(&net, n_samples, derive_seed(net_seed, &[1 + cp_index as u64]))?;
        let learned = learn_skeleton(&samples, &config.learn_options())?;
        let s = score(&learned.neighbor_sets(), &net)?;
        row.precision = s.precision;
        row.recall = s.recall;
        row.f1 = s.f1;
        let mut status = vec!["ok".to_string()];
        if s.precision_undefined {
            status.push("precision-undefined".into());
        }
        if s.recall_undefined {
            status.push("recall-undefined".into());
        }
        if !learned.nonconverged.is_empty() {
            status.push(format!("nonconverged={}", learned.nonconverged.len()));
        }
        Ok(status.join(";"))
    })();
    row.status = match outcome {
        Ok(s) => s,
        Err(e) => format!("error: {e}"),
    };
    row
}

/// Runs every `(n, cp, repeat)` cell. The network of a cell depends on
/// `(seed, n, repeat)` only, so each repeat follows one network across the
/// control parameters; samples also depend on `cp`.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepOutput> {
    config.validate()?;
    let cells: Vec<(usize, usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..config.cp_list.len()).flat_map(move |c| (0..config.repeats).map(move |r| (n, c, r))))
        .collect();
    let runs: Vec<SweepRow> = cells.par_iter().map(|&(n, c, r)| run_cell(config, n, c, r)).collect();
    let means = runs
        .chunks(config.repeats)
        .map(|group| {
            let ok: Vec<&SweepRow> = group.iter().filter(|r| !r.status.starts_with("error")).collect();
            let avg = |f: fn(&SweepRow) -> f64| {
                if ok.is_empty() {
                    0.0
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let first = &group[0];
            SweepRow {
                run_id: format!("mean-n{}-cp{}", first.n, first.cp),
                seed: None,
                precision: avg(|r| r.precision),
                recall: avg(|r| r.recall),
                f1: avg(|r| r.f1),
                status: format!("mean of {}/{}", ok.len(), group.len()),
                ..first.clone()
            }
        })
        .collect();
    Ok(SweepOutput { runs, means })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupportStudyConfig {
    pub n_list: Vec<usize>,
    /// Networks per `n`.
    pub repeats: usize,
    pub max_degree: Option<usize>,
    pub edge_prob: f64,
    pub cpt_range: [f64; 2],
    pub seed: u64,
    /// Sample count for the empirical Hessian when enumeration is infeasible.
    pub samples: usize,
    pub enumeration_cap: u64,
}

impl Default for SupportStudyConfig {
    fn default() -> Self {
        SupportStudyConfig {
            n_list: vec![10],
            repeats: 10,
            max_degree: Some(4),
            edge_prob: 0.5,
            cpt_range: [0.1, 0.9],
            seed: 0,
            samples: 5000,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportStudyRow {
    pub net_id: String,
    pub n: usize,
    pub seed: Option<u64>,
    pub mode: String,
    pub nodes: usize,
    pub mipc_holds: f64,
    pub mimb_holds: f64,
    pub mipc_le_mimb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportStudyOutput {
    pub nets: Vec<SupportStudyRow>,
    /// Node-weighted fractions per `n`.
    pub aggregates: Vec<SupportStudyRow>,
}

impl SupportStudyOutput {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_rows(out, self.nets.iter().chain(&self.aggregates))
    }
}

fn study_network(net: &CategoricalNetwork, config: &SupportStudyConfig, seed: u64) -> Result<(Mode, [usize; 3])> {
    let configs: u128 = net.levels().iter().map(|&m| m as u128).product();
    let (mode, moments) = if configs <= config.enumeration_cap as u128 {
        (Mode::Population, population_moments(net, crate::Scheme::Effects)?)
    } else {
        let s = ancestral_sample(net, config.samples, derive_seed(seed, &[1]))?;
        (Mode::Empirical, MomentMatrix::from_samples(&s, crate::Scheme::Effects))
    };
    let mut counts = [0usize; 3];
    for r in 0..net.n() {
        let c = compare_supports(net, r, &moments)?;
        counts[0] += c.mipc_holds as usize;
        counts[1] += c.mimb_holds as usize;
        counts[2] += (c.mipc_value <= c.mimb_value) as usize;
    }
    Ok((mode, counts))
}

/// For binary random networks, the fraction of nodes where incoherence
/// holds on the parents-and-children support, on the Markov blanket, and
/// where the former value does not exceed the latter.
pub fn run_support_study(config: &SupportStudyConfig) -> Result<SupportStudyOutput> {
    if config.repeats == 0 || config.n_list.is_empty() {
        return Err(Error::validation(
            "support study config",
            "repeats ≥ 1 and a nonempty n_list are required",
        ));
    }
    let cells: Vec<(usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..config.repeats).map(move |i| (n, i)))
        .collect();
    let nets: Vec<SupportStudyRow> = cells
        .par_iter()
        .map(|&(n, i)| {
            let seed = derive_seed(config.seed, &[n as u64, i as u64]);
            let generator = GeneratorConfig {
                n,
                k: 2,
                edge_prob: config.edge_prob,
                max_degree: config.max_degree,
                cpt_low: config.cpt_range[0],
                cpt_high: config.cpt_range[1],
            };
            let net = generate_network(&generator, seed)?;
            let (mode, counts) = study_network(&net, config, seed)?;
            let frac = |c: usize| c as f64 / n as f64;
            Ok(SupportStudyRow {
                net_id: format!("n{n}-net{i}"),
                n,
                seed: Some(seed),
                mode: match mode {
                    Mode::Population => "population".into(),
                    Mode::Empirical => format!("empirical(N={})", config.samples),
                },
                nodes: n,
                mipc_holds: frac(counts[0]),
                mimb_holds: frac(counts[1]),
                mipc_le_mimb: frac(counts[2]),
            })
        })
        .collect::<Result<_>>()?;
    let aggregates = nets
        .chunks(config.repeats)
        .map(|group| {
            let nodes: usize = group.iter().map(|r| r.nodes).sum();
            let weighted = |f: fn(&SupportStudyRow) -> f64| {
                group.iter().map(|r| f(r) * r.nodes as f64).sum::<f64>() / nodes as f64
            };
            SupportStudyRow {
                net_id: format!("all-n{}", group[0].n),
                n: group[0].n,
                seed: None,
                mode: "aggregate".into(),
                nodes,
                mipc_holds: weighted(|r| r.mipc_holds),
                mimb_holds: weighted(|r| r.mimb_holds),
                mipc_le_mimb: weighted(|r| r.mipc_le_mimb),
            }
        })
        .collect();
    Ok(SupportStudyOutput { nets, aggregates })
}
