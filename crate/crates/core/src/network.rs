//! Discrete Bayesian networks: structure, conditional probability tables,
//! random generation and the JSON interchange format.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};
use crate::rng;

/// Tolerance on CPT row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A categorical variable and its ordered level labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub levels: Vec<String>,
}

impl Node {
    pub fn new(name: impl Into<String>, levels: &[&str]) -> Self {
        Node {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn arity(&self) -> usize {
        self.levels.len()
    }
}

/// Conditional probability table of one node.
///
/// Row `j` is the distribution of the node given the `j`-th joint parent
/// configuration, enumerated in mixed radix with the LAST parent varying
/// fastest.
pub type Cpt = Vec<Vec<f64>>;

/// A DAG over categorical nodes with one CPT per node.
///
/// Immutable after construction; every invariant is checked in
/// [`CategoricalNetwork::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalNetwork {
    nodes: Vec<Node>,
    parents: Vec<Vec<usize>>,
    cpts: Vec<Cpt>,
    order: Vec<usize>,
}

impl CategoricalNetwork {
    pub fn new(nodes: Vec<Node>, parents: Vec<Vec<usize>>, cpts: Vec<Cpt>) -> Result<Self> {
        let n = nodes.len();
        if parents.len() != n || cpts.len() != n {
            return Err(Error::validation(
                "node count",
                format!("{} nodes, {} parent lists, {} cpts", n, parents.len(), cpts.len()),
            ));
        }
        let mut names = BTreeSet::new();
        for node in &nodes {
            if !names.insert(node.name.as_str()) {
                return Err(Error::validation(
                    "unique node names",
                    format!("duplicate node '{}'", node.name),
                ));
            }
            if node.arity() < 2 {
                return Err(Error::validation(
                    "level count",
                    format!("node '{}' has {} levels, need at least 2", node.name, node.arity()),
                ));
            }
            if node.arity() > u16::MAX as usize {
                return Err(Error::validation(
                    "level count",
                    format!("node '{}' has too many levels", node.name),
                ));
            }
            let distinct: BTreeSet<_> = node.levels.iter().collect();
            if distinct.len() != node.arity() {
                return Err(Error::validation(
                    "unique level labels",
                    format!("node '{}' repeats a level label", node.name),
                ));
            }
        }
        for (r, pa) in parents.iter().enumerate() {
            let mut seen = BTreeSet::new();
            for &p in pa {
                if p >= n || p == r || !seen.insert(p) {
                    return Err(Error::validation(
                        "parent list",
                        format!("node '{}' has invalid parent index {}", nodes[r].name, p),
                    ));
                }
            }
        }
        let order = topological_order(&parents)?;
        for r in 0..n {
            let expected_rows: usize = parents[r].iter().map(|&p| nodes[p].arity()).product();
            let table = &cpts[r];
            if table.len() != expected_rows {
                return Err(Error::validation(
                    "cpt shape",
                    format!(
                        "node '{}' has {} rows, expected {}",
                        nodes[r].name,
                        table.len(),
                        expected_rows
                    ),
                ));
            }
            for (j, row) in table.iter().enumerate() {
                if row.len() != nodes[r].arity() {
                    return Err(Error::validation(
                        "cpt shape",
                        format!(
                            "node '{}' row {} has {} entries, expected {}",
                            nodes[r].name,
                            j,
                            row.len(),
                            nodes[r].arity()
                        ),
                    ));
                }
                if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                    return Err(Error::validation(
                        "cpt entry",
                        format!("node '{}' row {} has a negative or non-finite entry", nodes[r].name, j),
                    ));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(Error::validation(
                        "cpt row sum",
                        format!("node '{}' row {} sums to {}", nodes[r].name, j, sum),
                    ));
                }
            }
        }
        Ok(CategoricalNetwork {
            nodes,
            parents,
            cpts,
            order,
        })
    }

    pub fn n(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, r: usize) -> &Node {
        &self.nodes[r]
    }

    pub fn arity(&self, r: usize) -> usize {
        self.nodes[r].arity()
    }

    /// Level counts `m_i` of every node, in node order.
    pub fn levels(&self) -> Vec<usize> {
        self.nodes.iter().map(Node::arity).collect()
    }

    pub fn parents(&self, r: usize) -> &[usize] {
        &self.parents[r]
    }

    pub fn parent_lists(&self) -> &[Vec<usize>] {
        &self.parents
    }

    pub fn children(&self, r: usize) -> BTreeSet<usize> {
        (0..self.n()).filter(|&c| self.parents[c].contains(&r)).collect()
    }

    /// Parents and children of `r`.
    pub fn neighbors(&self, r: usize) -> BTreeSet<usize> {
        let mut out: BTreeSet<usize> = self.parents[r].iter().copied().collect();
        out.extend(self.children(r));
        out
    }

    pub fn cpt(&self, r: usize) -> &Cpt {
        &self.cpts[r]
    }

    /// A topological order, fixed at construction.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// CPT row of node `r` selected by a full joint assignment.
    pub fn parent_row(&self, r: usize, assignment: &[u16]) -> usize {
        let mut row = 0usize;
        for &p in &self.parents[r] {
            row = row * self.nodes[p].arity() + assignment[p] as usize;
        }
        row
    }

    pub fn skeleton(&self) -> Skeleton {
        skeleton_of(self)
    }

    /// Parents, children and the other parents of each child, excluding `r`.
    pub fn markov_blanket(&self, r: usize) -> BTreeSet<usize> {
        markov_blanket(self, r)
    }
}

/// Undirected graph obtained by forgetting edge directions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skeleton {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Skeleton {
    pub fn empty(n: usize) -> Self {
        Skeleton {
            n,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut s = Skeleton::empty(n);
        for (i, j) in edges {
            s.insert(i, j);
        }
        s
    }

    /// Adds `{i, j}`; self-loops are ignored.
    pub fn insert(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "edge endpoint out of range");
        if i != j {
            self.edges.insert((i.min(j), i.max(j)));
        }
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn neighbors(&self, r: usize) -> BTreeSet<usize> {
        self.edges
            .iter()
            .filter_map(|&(i, j)| {
                if i == r {
                    Some(j)
                } else if j == r {
                    Some(i)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Neighbor set of every node, indexed by node.
    pub fn neighbor_sets(&self) -> Vec<BTreeSet<usize>> {
        let mut out = vec![BTreeSet::new(); self.n];
        for &(i, j) in &self.edges {
            out[i].insert(j);
            out[j].insert(i);
        }
        out
    }
}

/// Kahn's algorithm, always releasing the smallest ready index first.
pub fn topological_order(parents: &[Vec<usize>]) -> Result<Vec<usize>> {
    let n = parents.len();
    let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
    let mut children = vec![Vec::new(); n];
    for (c, pa) in parents.iter().enumerate() {
        for &p in pa {
            if p >= n {
                return Err(Error::validation(
                    "parent list",
                    format!("parent index {p} out of range"),
                ));
            }
            children[p].push(c);
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indegree[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(u)) = ready.pop() {
        order.push(u);
        for &c in &children[u] {
            indegree[c] -= 1;
            if indegree[c] == 0 {
                ready.push(Reverse(c));
            }
        }
    }
    if order.len() != n {
        return Err(Error::CyclicGraph);
    }
    Ok(order)
}

/// Random DAG: a uniformly random causal order, then an edge from each node
/// to every later node independently with probability `edge_prob`.
///
/// Parent lists are returned sorted by node index.
pub fn random_dag(n: usize, edge_prob: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidRange(format!("edge probability {edge_prob}")));
    }
    let mut rng = rng::stream(seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut parents = vec![Vec::new(); n];
    for b in 1..n {
        for a in 0..b {
            if rng.random_bool(edge_prob) {
                parents[order[b]].push(order[a]);
            }
        }
    }
    for pa in &mut parents {
        pa.sort_unstable();
    }
    Ok(parents)
}

/// Removes every edge implied by a longer directed path.
pub fn transitive_reduction(parents: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    let n = parents.len();
    let order = topological_order(parents)?;
    let words = n.div_ceil(64);
    // reach[u] has bit v set iff there is a nonempty path u -> v
    let mut reach = vec![vec![0u64; words]; n];
    let mut children = vec![Vec::new(); n];
    for (c, pa) in parents.iter().enumerate() {
        for &p in pa {
            children[p].push(c);
        }
    }
    for &u in order.iter().rev() {
        let mut acc = vec![0u64; words];
        for &c in &children[u] {
            acc[c / 64] |= 1 << (c % 64);
            for (a, b) in acc.iter_mut().zip(&reach[c]) {
                *a |= b;
            }
        }
        reach[u] = acc;
    }
    let reaches = |u: usize, v: usize| reach[u][v / 64] & (1 << (v % 64)) != 0;
    Ok(parents
        .iter()
        .map(|pa| {
            pa.iter()
                .copied()
                .filter(|&u| !pa.iter().any(|&w| w != u && reaches(u, w)))
                .collect()
        })
        .collect())
}

/// Drops edges so that no node has more than `max_degree` incident edges.
///
/// Children are visited in topological order and their parents in list
/// order; an edge is kept only while both endpoints are below the cap.
pub fn cap_degree(parents: &[Vec<usize>], max_degree: usize) -> Result<Vec<Vec<usize>>> {
    let order = topological_order(parents)?;
    let mut degree = vec![0usize; parents.len()];
    let mut out = vec![Vec::new(); parents.len()];
    for &c in &order {
        for &p in &parents[c] {
            if degree[p] < max_degree && degree[c] < max_degree {
                degree[p] += 1;
                degree[c] += 1;
                out[c].push(p);
            }
        }
    }
    Ok(out)
}

/// CPT rows drawn uniformly from `[low, high]` and renormalized to sum to one.
///
/// Node `r` draws from its own stream so tables do not shift when another
/// node's parent set changes.
pub fn random_cpts(parents: &[Vec<usize>], levels: &[usize], low: f64, high: f64, seed: u64) -> Result<Vec<Cpt>> {
    if !(low > 0.0 && low <= high && high < 1.0) {
        return Err(Error::InvalidRange(format!(
            "cpt entry range [{low}, {high}] must satisfy 0 < low <= high < 1"
        )));
    }
    if parents.len() != levels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parent lists for {} nodes",
            parents.len(),
            levels.len()
        )));
    }
    let mut cpts = Vec::with_capacity(parents.len());
    for (r, pa) in parents.iter().enumerate() {
        let mut rng = rng::stream(seed, r as u64);
        let rows: usize = pa.iter().map(|&p| levels[p]).product();
        let table = (0..rows)
            .map(|_| {
                let draw: Vec<f64> = (0..levels[r]).map(|_| rng.random_range(low..=high)).collect();
                let total: f64 = draw.iter().sum();
                draw.into_iter().map(|x| x / total).collect()
            })
            .collect();
        cpts.push(table);
    }
    Ok(cpts)
}

/// Parameters of the synthetic network generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n: usize,
    /// Levels per node.
    pub k: usize,
    #[serde(default = "default_edge_prob")]
    pub edge_prob: f64,
    /// Optional cap on the total degree, applied after transitive reduction.
    #[serde(default)]
    pub max_degree: Option<usize>,
    #[serde(default = "default_cpt_low")]
    pub cpt_low: f64,
    #[serde(default = "default_cpt_high")]
    pub cpt_high: f64,
}

fn default_edge_prob() -> f64 {
    0.5
}
fn default_cpt_low() -> f64 {
    0.1
}
fn default_cpt_high() -> f64 {
    0.9
}

impl GeneratorConfig {
    pub fn new(n: usize, k: usize) -> Self {
        GeneratorConfig {
            n,
            k,
            edge_prob: default_edge_prob(),
            max_degree: None,
            cpt_low: default_cpt_low(),
            cpt_high: default_cpt_high(),
        }
    }
}

/// Random DAG, transitive reduction, optional degree cap, then CPTs.
///
/// Nodes are named `X1..Xn` with levels `"0".."k-1"`.
pub fn generate_network(config: &GeneratorConfig, seed: u64) -> Result<CategoricalNetwork> {
    if config.n == 0 {
        return Err(Error::InvalidRange("network needs at least one node".into()));
    }
    if config.k < 2 {
        return Err(Error::InvalidRange(format!("k = {} levels, need at least 2", config.k)));
    }
    let dag = random_dag(config.n, config.edge_prob, rng::derive_seed(seed, &[0]))?;
    let mut parents = transitive_reduction(&dag)?;
    if let Some(cap) = config.max_degree {
        parents = cap_degree(&parents, cap)?;
    }
    let levels = vec![config.k; config.n];
    let cpts = random_cpts(
        &parents,
        &levels,
        config.cpt_low,
        config.cpt_high,
        rng::derive_seed(seed, &[1]),
    )?;
    let labels: Vec<String> = (0..config.k).map(|l| l.to_string()).collect();
    let nodes = (0..config.n)
        .map(|i| Node {
            name: format!("X{}", i + 1),
            levels: labels.clone(),
        })
        .collect();
    CategoricalNetwork::new(nodes, parents, cpts)
}

pub fn skeleton_of(net: &CategoricalNetwork) -> Skeleton {
    let mut s = Skeleton::empty(net.n());
    for (c, pa) in net.parent_lists().iter().enumerate() {
        for &p in pa {
            s.insert(p, c);
        }
    }
    s
}

pub fn markov_blanket(net: &CategoricalNetwork, r: usize) -> BTreeSet<usize> {
    let mut out: BTreeSet<usize> = net.parents(r).iter().copied().collect();
    for c in net.children(r) {
        out.insert(c);
        out.extend(net.parents(c).iter().copied());
    }
    out.remove(&r);
    out
}

// ---------------------------------------------------------------------------
// JSON format

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    nodes: Vec<Node>,
    #[serde(default)]
    edges: Vec<(String, String)>,
    cpts: BTreeMap<String, CptDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CptDoc {
    #[serde(default)]
    parents: Vec<String>,
    rows: Vec<RowDoc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RowDoc {
    #[serde(default)]
    given: Vec<String>,
    p: Vec<f64>,
}

#[derive(Serialize)]
struct NetworkOut<'a> {
    nodes: &'a [Node],
    edges: Vec<(&'a str, &'a str)>,
    cpts: CptsOut<'a>,
}

struct CptsOut<'a>(&'a CategoricalNetwork);

#[derive(Serialize)]
struct CptOut<'a> {
    parents: Vec<&'a str>,
    rows: Vec<RowOut<'a>>,
}

#[derive(Serialize)]
struct RowOut<'a> {
    given: Vec<&'a str>,
    p: Vec<Box<RawValue>>,
}

impl Serialize for CptsOut<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let net = self.0;
        let mut map = serializer.serialize_map(Some(net.n()))?;
        for r in 0..net.n() {
            let parents = net.parents(r);
            let radices: Vec<usize> = parents.iter().map(|&p| net.arity(p)).collect();
            let rows = net
                .cpt(r)
                .iter()
                .enumerate()
                .map(|(j, row)| {
                    let digits = mixed_radix_digits(j, &radices);
                    RowOut {
                        given: parents
                            .iter()
                            .zip(digits)
                            .map(|(&p, d)| net.node(p).levels[d].as_str())
                            .collect(),
                        p: row.iter().map(|&x| format_probability(x)).collect(),
                    }
                })
                .collect();
            let cpt = CptOut {
                parents: parents.iter().map(|&p| net.node(p).name.as_str()).collect(),
                rows,
            };
            map.serialize_entry(&net.node(r).name, &cpt)?;
        }
        map.end()
    }
}

/// Digits of `index` in mixed radix, most significant first.
fn mixed_radix_digits(mut index: usize, radices: &[usize]) -> Vec<usize> {
    let mut digits = vec![0; radices.len()];
    for (d, &m) in digits.iter_mut().zip(radices).rev() {
        *d = index % m;
        index /= m;
    }
    digits
}

/// Decimal with 17 significant digits, fixed notation for moderate exponents.
pub fn format_sig17(x: f64) -> String {
    let sci = format!("{x:.16e}");
    let exp: i32 = sci.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).unwrap_or(0);
    if x != 0.0 && (-5..17).contains(&exp) {
        format!("{:.*}", (16 - exp) as usize, x)
    } else if x == 0.0 {
        format!("{:.16}", 0.0)
    } else {
        sci
    }
}

fn format_probability(x: f64) -> Box<RawValue> {
    RawValue::from_string(format_sig17(x)).expect("finite float formats as a JSON number")
}

impl CategoricalNetwork {
    pub fn to_json(&self) -> String {
        let mut edges = Vec::with_capacity(self.edge_count());
        for (c, pa) in self.parents.iter().enumerate() {
            for &p in pa {
                edges.push((self.nodes[p].name.as_str(), self.nodes[c].name.as_str()));
            }
        }
        let doc = NetworkOut {
            nodes: &self.nodes,
            edges,
            cpts: CptsOut(self),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("network serializes");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_named(text, "network")
    }

    fn from_json_named(text: &str, source: &str) -> Result<Self> {
        let doc: NetworkDoc = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                format!("{source} line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })?;
        let index: BTreeMap<&str, usize> = doc
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.name.as_str(), i))
            .collect();
        if index.len() != doc.nodes.len() {
            return Err(Error::validation("unique node names", "duplicate node name"));
        }
        let lookup = |name: &str, field: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::parse(format!("{source} field {field}"), format!("unknown node '{name}'")))
        };
        let n = doc.nodes.len();
        let mut edge_parents: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for (p, c) in &doc.edges {
            let pi = lookup(p, "edges")?;
            let ci = lookup(c, "edges")?;
            edge_parents[ci].insert(pi);
        }
        for name in doc.cpts.keys() {
            lookup(name, "cpts")?;
        }
        let mut parents = Vec::with_capacity(n);
        let mut cpts = Vec::with_capacity(n);
        for (r, node) in doc.nodes.iter().enumerate() {
            let cpt = doc.cpts.get(&node.name).ok_or_else(|| {
                Error::parse(
                    format!("{source} field cpts"),
                    format!("missing cpt for node '{}'", node.name),
                )
            })?;
            let field = format!("cpts.{}", node.name);
            let pa = cpt
                .parents
                .iter()
                .map(|p| lookup(p, &format!("{field}.parents")))
                .collect::<Result<Vec<_>>>()?;
            let pa_set: BTreeSet<usize> = pa.iter().copied().collect();
            if pa_set != edge_parents[r] {
                return Err(Error::validation(
                    "edges match cpt parents",
                    format!("node '{}' cpt parents disagree with edge list", node.name),
                ));
            }
            let radices: Vec<usize> = pa.iter().map(|&p| doc.nodes[p].levels.len()).collect();
            let expected: usize = radices.iter().product();
            let mut table: Vec<Option<Vec<f64>>> = vec![None; expected];
            for (j, row) in cpt.rows.iter().enumerate() {
                if row.given.len() != pa.len() {
                    return Err(Error::parse(
                        format!("{source} field {field}.rows[{j}].given"),
                        format!("expected {} labels, found {}", pa.len(), row.given.len()),
                    ));
                }
                let mut idx = 0usize;
                for ((label, &p), &m) in row.given.iter().zip(&pa).zip(&radices) {
                    let level = doc.nodes[p].levels.iter().position(|l| l == label).ok_or_else(|| {
                        Error::parse(
                            format!("{source} field {field}.rows[{j}].given"),
                            format!("'{label}' is not a level of '{}'", doc.nodes[p].name),
                        )
                    })?;
                    idx = idx * m + level;
                }
                if table[idx].replace(row.p.clone()).is_some() {
                    return Err(Error::validation(
                        "cpt shape",
                        format!("node '{}' lists a parent configuration twice", node.name),
                    ));
                }
            }
            let table = table.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| {
                Error::validation(
                    "cpt shape",
                    format!("node '{}' is missing parent configurations", node.name),
                )
            })?;
            parents.push(pa);
            cpts.push(table);
        }
        CategoricalNetwork::new(doc.nodes, parents, cpts)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_named(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        crate::sha256_hex(self.to_json().as_bytes())
    }
}

pub fn load_network(path: impl AsRef<Path>) -> Result<CategoricalNetwork> {
    CategoricalNetwork::load(path)
}

pub fn save_network(net: &CategoricalNetwork, path: impl AsRef<Path>) -> Result<()> {
    net.save(path)
}

/// Short text listing of the directed edges, `X1->X2, ...`.
pub fn describe_edges(net: &CategoricalNetwork) -> String {
    let mut out = String::new();
    for (c, pa) in net.parent_lists().iter().enumerate() {
        for &p in pa {
            if !out.is_empty() {
                out.push_str(", ");
            }
            let _ = write!(out, "{}->{}", net.node(p).name, net.node(c).name);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn reachability(parents: &[Vec<usize>]) -> Vec<Vec<bool>> {
        // Floyd-Warshall closure
        let n = parents.len();
        let mut r = vec![vec![false; n]; n];
        for (c, pa) in parents.iter().enumerate() {
            for &p in pa {
                r[p][c] = true;
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if r[i][k] && r[k][j] {
                        r[i][j] = true;
                    }
                }
            }
        }
        r
    }

    fn sorted(p: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
        p.into_iter()
            .map(|mut v| {
                v.sort_unstable();
                v
            })
            .collect()
    }

    #[test]
    fn topological_order_examples() {
        assert_eq!(topological_order(&[vec![], vec![0], vec![1]]).unwrap(), vec![0, 1, 2]);
        assert_eq!(topological_order(&[vec![], vec![], vec![]]).unwrap(), vec![0, 1, 2]);
        let fig1 = vec![vec![], vec![0], vec![], vec![1, 2]];
        let order = topological_order(&fig1).unwrap();
        let pos = |i| order.iter().position(|&x| x == i).unwrap();
        assert!(pos(0) < pos(1) && pos(1) < pos(3) && pos(2) < pos(3));
        assert!(matches!(
            topological_order(&[vec![1], vec![0]]),
            Err(Error::CyclicGraph)
        ));
    }

    #[test]
    fn random_dag_edge_cases() {
        assert_eq!(random_dag(1, 0.7, 3).unwrap(), vec![Vec::<usize>::new()]);
        let full = random_dag(3, 1.0, 11).unwrap();
        assert_eq!(full.iter().map(Vec::len).sum::<usize>(), 3);
        topological_order(&full).unwrap();
        assert!(random_dag(3, 1.5, 0).is_err());
    }

    #[test]
    fn random_dag_edge_count_is_pinned() {
        let dag = random_dag(20, 0.5, 2024).unwrap();
        let edges: usize = dag.iter().map(Vec::len).sum();
        assert!((60..=130).contains(&edges), "{edges}");
        assert_eq!(edges, 82);
        assert_eq!(dag, random_dag(20, 0.5, 2024).unwrap());
    }

    #[test]
    fn transitive_reduction_examples() {
        let tri = vec![vec![], vec![0], vec![0, 1]];
        assert_eq!(transitive_reduction(&tri).unwrap(), vec![vec![], vec![0], vec![1]]);
        let fig1 = vec![vec![], vec![0], vec![], vec![1, 2]];
        assert_eq!(transitive_reduction(&fig1).unwrap(), fig1);
        assert!(matches!(
            transitive_reduction(&[vec![1], vec![0]]),
            Err(Error::CyclicGraph)
        ));
    }

    #[test]
    fn transitive_reduction_preserves_reachability() {
        for seed in 0..200u64 {
            let n = 1 + (seed as usize % 12);
            let dag = random_dag(n, 0.3 + 0.05 * (seed % 10) as f64, seed).unwrap();
            let red = transitive_reduction(&dag).unwrap();
            assert_eq!(reachability(&dag), reachability(&red));
            assert_eq!(sorted(transitive_reduction(&red).unwrap()), sorted(red.clone()));
            // minimality: removing any remaining edge changes reachability
            for c in 0..n {
                for k in 0..red[c].len() {
                    let mut fewer = red.clone();
                    fewer[c].remove(k);
                    assert_ne!(reachability(&fewer), reachability(&red));
                }
            }
        }
    }

    #[test]
    fn cap_degree_respects_cap() {
        let dag = transitive_reduction(&random_dag(30, 0.5, 5).unwrap()).unwrap();
        let capped = cap_degree(&dag, 3).unwrap();
        let mut deg = vec![0; 30];
        for (c, pa) in capped.iter().enumerate() {
            for &p in pa {
                deg[c] += 1;
                deg[p] += 1;
            }
        }
        assert!(deg.iter().all(|&d| d <= 3));
    }

    #[test]
    fn random_cpts_examples() {
        let cpts = random_cpts(&[vec![], vec![0]], &[2, 2], 0.5, 0.5, 1).unwrap();
        for row in cpts.iter().flatten() {
            assert_eq!(row, &vec![0.5, 0.5]);
        }
        let cpts = random_cpts(&[vec![], vec![0]], &[3, 4], 0.1, 0.9, 9).unwrap();
        for row in &cpts[1] {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for &p in row {
                assert!(p >= 0.1 / 2.8 - 1e-15 && p <= 0.75 + 1e-15, "{p}");
            }
        }
        assert!(matches!(
            random_cpts(&[vec![]], &[2], 0.0, 0.5, 0),
            Err(Error::InvalidRange(_))
        ));
    }

    #[test]
    fn random_cpts_golden_table() {
        let cpts = random_cpts(&[vec![], vec![0]], &[2, 2], 0.1, 0.9, 42).unwrap();
        let expected = [
            [0.7425158094862102, 0.2574841905137898],
            [0.3847609990101102, 0.6152390009898898],
        ];
        for (row, exp) in cpts[1].iter().zip(expected) {
            for (a, b) in row.iter().zip(exp) {
                assert!((a - b).abs() < 1e-15, "{row:?}");
            }
        }
    }

    #[test]
    fn skeleton_examples() {
        let fig = fixtures::valid_collider(0.75, 0.25);
        let s = skeleton_of(&fig);
        assert_eq!(s.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 3), (2, 3)]);
        assert!(skeleton_of(&fixtures::independent(3, 0.5)).is_empty());
        let chain = fixtures::chain2(0.6, 0.7, 0.2);
        assert_eq!(chain.skeleton().len(), 1);
    }

    #[test]
    fn markov_blanket_examples() {
        let fig = fixtures::valid_collider(0.75, 0.25);
        assert_eq!(markov_blanket(&fig, 1), BTreeSet::from([0, 2, 3]));
        assert_eq!(markov_blanket(&fig, 0), BTreeSet::from([1]));
        assert!(markov_blanket(&fixtures::independent(3, 0.5), 0).is_empty());
    }

    #[test]
    fn blanket_contains_neighbors() {
        for seed in 0..50 {
            let net = generate_network(&GeneratorConfig::new(12, 2), seed).unwrap();
            for r in 0..net.n() {
                assert!(net.markov_blanket(r).is_superset(&net.neighbors(r)));
            }
            assert_eq!(net.skeleton().len(), net.edge_count());
        }
    }

    #[test]
    fn json_round_trip_and_errors() {
        let fig = fixtures::valid_collider(0.75, 0.25);
        let text = fig.to_json();
        assert_eq!(CategoricalNetwork::from_json(&text).unwrap(), fig);

        let bad_sum = text.replacen("0.50000000000000000", "0.40000000000000000", 1);
        match CategoricalNetwork::from_json(&bad_sum) {
            Err(Error::Validation { invariant, .. }) => assert_eq!(invariant, "cpt row sum"),
            other => panic!("{other:?}"),
        }

        let missing = text.replacen("\"X1\",\n      \"X2\"", "\"X9\",\n      \"X2\"", 1);
        assert_ne!(missing, text);
        assert!(matches!(
            CategoricalNetwork::from_json(&missing),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn generated_json_is_reproducible() {
        let cfg = GeneratorConfig::new(15, 3);
        let a = generate_network(&cfg, 77).unwrap().to_json();
        let b = generate_network(&cfg, 77).unwrap().to_json();
        assert_eq!(a, b);
        let net = CategoricalNetwork::from_json(&a).unwrap();
        assert_eq!(net.to_json(), a);
    }

    #[test]
    fn sig17_formatting() {
        assert_eq!(format_sig17(0.5), "0.50000000000000000");
        assert_eq!(format_sig17(0.1), "0.10000000000000001");
        assert_eq!(format_sig17(1.0), "1.0000000000000000");
        assert_eq!(format_sig17(1e-9), "1.0000000000000001e-9");
        for x in [0.123456789, 1.0 / 3.0, 2.5e-7, 0.999999999999] {
            assert_eq!(format_sig17(x).parse::<f64>().unwrap(), x);
        }
    }
}
