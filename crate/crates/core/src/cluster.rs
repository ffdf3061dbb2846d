//! Seeded spherical k-means and the recursive typology built from it.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::hex;
use crate::vectorize::{FeatureMatrix, SparseRow};

/// Number of representative terms kept per node.
pub const TOP_TERMS: usize = 15;

/// Allowed slack when checking that the objective does not increase.
const OBJECTIVE_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("invalid cluster params: {0}")]
    Params(String),
    #[error("size bounds infeasible: {k} clusters of at most {max_size} cannot hold {rows} documents")]
    Infeasible { k: usize, max_size: usize, rows: usize },
    #[error("unknown typology code {0:?}")]
    UnknownCode(String),
    #[error("cannot cluster an empty row set")]
    NoRows,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterParams {
    pub k: usize,
    pub depth: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
    pub min_size: Option<usize>,
    pub max_size: Option<usize>,
    /// Clusters smaller than this are not split further. Defaults to `2k`.
    pub min_split: Option<usize>,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            k: 10,
            depth: 2,
            restarts: 10,
            max_iter: 100,
            seed: 0,
            min_size: None,
            max_size: None,
            min_split: None,
        }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::Params(m.to_string()));
        if self.k < 1 {
            return bad("k must be at least 1");
        }
        if self.depth < 1 {
            return bad("depth must be at least 1");
        }
        if self.restarts < 1 {
            return bad("restarts must be at least 1");
        }
        if self.max_size == Some(0) {
            return bad("max_size must be positive");
        }
        Ok(())
    }

    pub fn min_split(&self) -> usize {
        self.min_split.unwrap_or(2 * self.k)
    }
}

/// One restart's trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    pub objective: f64,
    /// Objective after every assignment and every centroid update.
    pub trace: Vec<f64>,
    pub iterations: usize,
}

impl RestartRun {
    pub fn is_monotone(&self) -> bool {
        self.trace
            .windows(2)
            .all(|w| w[1] <= w[0] + OBJECTIVE_EPS * (1.0 + w[0].abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of each entry of the `rows` argument, by position.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    pub best_restart: usize,
    pub runs: Vec<RestartRun>,
}

/// Unit-length copies of the selected rows, the space k-means works in.
struct Points {
    rows: Vec<SparseRow>,
    dim: usize,
}

impl Points {
    fn new(matrix: &FeatureMatrix, rows: &[usize]) -> Self {
        Self {
            rows: rows.iter().map(|&r| matrix.unit_row(r)).collect(),
            dim: matrix.dim(),
        }
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn distance(&self, i: usize, centroid: &[f64]) -> f64 {
        let row = &self.rows[i];
        if row.0.is_empty() || centroid.iter().all(|c| *c == 0.0) {
            return 1.0;
        }
        (1.0 - row.dot_dense(centroid)).clamp(0.0, 2.0)
    }

    fn point_distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.rows[i].0, &self.rows[j].0);
        if a.is_empty() || b.is_empty() {
            return 1.0;
        }
        let (mut x, mut y, mut dot) = (0, 0, 0.0);
        while x < a.len() && y < b.len() {
            match a[x].0.cmp(&b[y].0) {
                std::cmp::Ordering::Less => x += 1,
                std::cmp::Ordering::Greater => y += 1,
                std::cmp::Ordering::Equal => {
                    dot += a[x].1 * b[y].1;
                    x += 1;
                    y += 1;
                }
            }
        }
        (1.0 - dot).clamp(0.0, 2.0)
    }

    /// L2-normalized mean of the given points; zero if the mean vanishes.
    fn centroid<'a>(&self, members: impl Iterator<Item = &'a usize>) -> Vec<f64> {
        let mut sum = vec![0.0; self.dim];
        for &i in members {
            for &(j, w) in &self.rows[i].0 {
                sum[j] += w;
            }
        }
        let n = crate::vectorize::norm(&sum);
        if n > 0.0 {
            sum.iter_mut().for_each(|x| *x /= n);
        }
        sum
    }

    fn objective(&self, assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(i, &c)| self.distance(i, &centroids[c]))
            .sum()
    }

    fn nearest(&self, i: usize, centroids: &[Vec<f64>]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = self.distance(i, centroid);
            if d < best_d {
                best = c;
                best_d = d;
            }
        }
        best
    }
}

fn members_of(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        out[c].push(i);
    }
    out
}

fn kmeans_pp(points: &Points, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n).map(|i| points.point_distance(i, chosen[0])).collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().map(|d| d * d).sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, d) in dist.iter().enumerate() {
                let w = d * d;
                if w > 0.0 {
                    pick = Some(i);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            pick.expect("positive total has a positive entry")
        } else {
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(points.point_distance(i, next));
        }
    }
    chosen
}

/// Recomputes centroids, refilling empty clusters with the point farthest
/// from its own centroid (taken from clusters with more than one member).
fn update_centroids(points: &Points, assignment: &mut [usize], k: usize) -> Vec<Vec<f64>> {
    let mut members = members_of(assignment, k);
    let mut centroids: Vec<Vec<f64>> = members.iter().map(|m| points.centroid(m.iter())).collect();
    for empty in 0..k {
        if !members[empty].is_empty() {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| members[assignment[i]].len() > 1)
            .map(|i| (i, points.distance(i, &centroids[assignment[i]])))
            .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            });
        let Some((point, _)) = donor else { continue };
        let from = assignment[point];
        members[from].retain(|&i| i != point);
        members[empty].push(point);
        assignment[point] = empty;
        centroids[from] = points.centroid(members[from].iter());
        centroids[empty] = points.centroid(members[empty].iter());
    }
    centroids
}

fn run_restart(points: &Points, k: usize, max_iter: usize, rng: &mut ChaCha8Rng) -> (RestartRun, Vec<usize>, Vec<Vec<f64>>) {
    let seeds = kmeans_pp(points, k, rng);
    let mut centroids: Vec<Vec<f64>> = seeds.iter().map(|&i| points.centroid([i].iter())).collect();
    let mut assignment: Vec<usize> = (0..points.len()).map(|i| points.nearest(i, &centroids)).collect();
    let mut trace = vec![points.objective(&assignment, &centroids)];
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        centroids = update_centroids(points, &mut assignment, k);
        trace.push(points.objective(&assignment, &centroids));
        let next: Vec<usize> = (0..points.len()).map(|i| points.nearest(i, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
        trace.push(points.objective(&assignment, &centroids));
    }
    let objective = *trace.last().expect("trace is never empty");
    debug_assert!(
        trace.windows(2).all(|w| w[1] <= w[0] + OBJECTIVE_EPS * (1.0 + w[0].abs())),
        "k-means objective increased: {trace:?}"
    );
    (
        RestartRun {
            objective,
            trace,
            iterations,
        },
        assignment,
        centroids,
    )
}

/// Best-of-restarts spherical k-means over a subset of matrix rows.
///
/// `seed` selects the RNG stream family; restart `r` uses stream `r`.
/// With fewer rows than `k`, every row becomes its own cluster.
pub fn kmeans(matrix: &FeatureMatrix, rows: &[usize], params: &ClusterParams, seed: u64) -> Result<KMeansResult, ClusterError> {
    params.validate()?;
    if rows.is_empty() {
        return Err(ClusterError::NoRows);
    }
    let points = Points::new(matrix, rows);
    if rows.len() < params.k {
        let assignment: Vec<usize> = (0..rows.len()).collect();
        let centroids: Vec<Vec<f64>> = (0..rows.len()).map(|i| points.centroid([i].iter())).collect();
        let objective = points.objective(&assignment, &centroids);
        return Ok(KMeansResult {
            assignment,
            centroids,
            objective,
            best_restart: 0,
            runs: vec![RestartRun {
                objective,
                trace: vec![objective],
                iterations: 0,
            }],
        });
    }
    let outcomes: Vec<_> = (0..params.restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            run_restart(&points, params.k, params.max_iter, &mut rng)
        })
        .collect();
    let best_restart = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.objective.total_cmp(&b.1 .0.objective).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
        .expect("at least one restart");
    let mut runs = Vec::with_capacity(outcomes.len());
    let mut best = None;
    for (i, (run, assignment, centroids)) in outcomes.into_iter().enumerate() {
        if i == best_restart {
            best = Some((assignment, centroids, run.objective));
        }
        runs.push(run);
    }
    let (assignment, centroids, objective) = best.expect("best restart exists");
    Ok(KMeansResult {
        assignment,
        centroids,
        objective,
        best_restart,
        runs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeWarning {
    pub cluster: usize,
    pub size: usize,
    pub min_size: usize,
}

/// Moves the farthest members out of clusters above `max_size` and
/// reports clusters below `min_size`.
///
/// `assignment` indexes `rows`; centroids are held fixed while moving.
pub fn enforce_size_bounds(
    assignment: &[usize],
    centroids: &[Vec<f64>],
    matrix: &FeatureMatrix,
    rows: &[usize],
    params: &ClusterParams,
) -> Result<(Vec<usize>, Vec<SizeWarning>), ClusterError> {
    let k = centroids.len();
    let mut assignment = assignment.to_vec();
    if let Some(max_size) = params.max_size {
        if k * max_size < rows.len() {
            return Err(ClusterError::Infeasible {
                k,
                max_size,
                rows: rows.len(),
            });
        }
        let points = Points::new(matrix, rows);
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        for c in 0..k {
            while sizes[c] > max_size {
                let (point, _) = (0..points.len())
                    .filter(|&i| assignment[i] == c)
                    .map(|i| (i, points.distance(i, &centroids[c])))
                    .fold((usize::MAX, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                let target = (0..k)
                    .filter(|&t| t != c && sizes[t] < max_size)
                    .map(|t| (t, points.distance(point, &centroids[t])))
                    .fold((usize::MAX, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
                    .0;
                assignment[point] = target;
                sizes[c] -= 1;
                sizes[target] += 1;
            }
        }
    }
    let mut warnings = Vec::new();
    if let Some(min_size) = params.min_size {
        let mut sizes = vec![0usize; k];
        assignment.iter().for_each(|&c| sizes[c] += 1);
        for (cluster, &size) in sizes.iter().enumerate() {
            if size < min_size {
                warnings.push(SizeWarning {
                    cluster,
                    size,
                    min_size,
                });
            }
        }
    }
    Ok((assignment, warnings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypologyNode {
    /// `""` for the root, otherwise `#i`, `#i#j`, ...
    pub code: String,
    /// Member document ids, sorted.
    pub members: Vec<String>,
    pub centroid: SparseRow,
    pub top_terms: Vec<(String, f64)>,
    /// Sum of member distances to the centroid.
    pub objective: f64,
    pub children: Vec<TypologyNode>,
}

impl TypologyNode {
    pub fn find(&self, code: &str) -> Option<&TypologyNode> {
        if self.code == code {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(code))
    }

    fn find_mut(&mut self, code: &str) -> Option<&mut TypologyNode> {
        if self.code == code {
            return Some(self);
        }
        self.children.iter_mut().find_map(|c| c.find_mut(code))
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Pre-order traversal.
    pub fn walk(&self) -> Vec<&TypologyNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    pub fn leaves(&self) -> Vec<&TypologyNode> {
        self.walk().into_iter().filter(|n| n.is_leaf()).collect()
    }

    pub fn depth_of_code(code: &str) -> usize {
        code.matches('#').count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Typology {
    pub root: TypologyNode,
    pub params: ClusterParams,
    pub features: Vec<String>,
    pub warnings: Vec<String>,
}

/// Terms ranked by descending centroid weight, ties by term, at most `limit`.
pub fn representative_terms(node: &TypologyNode, features: &[String], limit: usize) -> Vec<(String, f64)> {
    rank_terms(&node.centroid, features, limit)
}

fn rank_terms(centroid: &SparseRow, features: &[String], limit: usize) -> Vec<(String, f64)> {
    let mut terms: Vec<(String, f64)> = centroid
        .0
        .iter()
        .filter(|(_, w)| *w > 0.0)
        .map(|&(i, w)| (features[i].clone(), w))
        .collect();
    terms.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    terms.truncate(limit);
    terms
}

/// Derives a per-node seed so that every subtree is reproducible on its own.
fn node_seed(seed: u64, code: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in code.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = seed ^ h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct Builder<'a> {
    matrix: &'a FeatureMatrix,
    params: &'a ClusterParams,
    warnings: Vec<String>,
}

impl Builder<'_> {
    fn leaf(&self, code: String, rows: &[usize]) -> TypologyNode {
        let points = Points::new(self.matrix, rows);
        let all: Vec<usize> = (0..rows.len()).collect();
        let centroid = points.centroid(all.iter());
        let objective = all.iter().map(|&i| points.distance(i, &centroid)).sum();
        let centroid = SparseRow::from_dense(&centroid);
        let mut members: Vec<String> = rows.iter().map(|&r| self.matrix.doc_ids[r].clone()).collect();
        members.sort();
        TypologyNode {
            top_terms: rank_terms(&centroid, &self.matrix.features, TOP_TERMS),
            code,
            members,
            centroid,
            objective,
            children: Vec::new(),
        }
    }

    /// Builds `code` over `rows`, splitting it and recursing `levels` deep.
    fn node(&mut self, code: String, rows: &[usize], levels: usize) -> Result<TypologyNode, ClusterError> {
        let mut node = self.leaf(code, rows);
        if levels == 0 {
            return Ok(node);
        }
        let result = kmeans(self.matrix, rows, self.params, node_seed(self.params.seed, &node.code))?;
        let (assignment, size_warnings) =
            enforce_size_bounds(&result.assignment, &result.centroids, self.matrix, rows, self.params)?;
        let k = result.centroids.len();
        for w in size_warnings {
            self.warnings.push(format!(
                "cluster {}#{} has {} members (min_size {})",
                node.code, w.cluster, w.size, w.min_size
            ));
        }
        for (c, group) in members_of(&assignment, k).into_iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let child_rows: Vec<usize> = group.iter().map(|&i| rows[i]).collect();
            let child_code = format!("{}#{}", node.code, c);
            let deeper = if levels > 1 && child_rows.len() >= self.params.min_split() {
                levels - 1
            } else {
                0
            };
            node.children.push(self.node(child_code, &child_rows, deeper)?);
        }
        Ok(node)
    }
}

/// Clusters the whole matrix into `params.depth` levels of `#i#j` codes.
pub fn build_typology(matrix: &FeatureMatrix, params: &ClusterParams) -> Result<Typology, ClusterError> {
    params.validate()?;
    let rows: Vec<usize> = (0..matrix.len()).collect();
    let mut builder = Builder {
        matrix,
        params,
        warnings: Vec::new(),
    };
    let root = builder.node(String::new(), &rows, params.depth)?;
    Ok(Typology {
        root,
        params: params.clone(),
        features: matrix.features.clone(),
        warnings: builder.warnings,
    })
}

/// Rebuilds the subtree at `code` with `params`, leaving the rest intact.
/// The named node is always split; below it `min_split` applies.
pub fn recluster_subtree(
    typology: &Typology,
    matrix: &FeatureMatrix,
    code: &str,
    params: &ClusterParams,
) -> Result<Typology, ClusterError> {
    params.validate()?;
    let target = typology
        .root
        .find(code)
        .ok_or_else(|| ClusterError::UnknownCode(code.to_string()))?;
    let rows: Vec<usize> = target
        .members
        .iter()
        .map(|d| matrix.row_of(d).ok_or_else(|| ClusterError::UnknownCode(format!("{code} (member {d} not in matrix)"))))
        .collect::<Result<_, _>>()?;
    let mut builder = Builder {
        matrix,
        params,
        warnings: Vec::new(),
    };
    let rebuilt = builder.node(code.to_string(), &rows, params.depth)?;
    let mut out = typology.clone();
    *out.root.find_mut(code).expect("code found above") = rebuilt;
    out.warnings.retain(|w| !w.starts_with(&format!("cluster {code}#")));
    out.warnings.extend(builder.warnings);
    if code.is_empty() {
        out.params = params.clone();
    }
    Ok(out)
}

impl Typology {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("typology serializes")
    }

    /// SHA-256 of the canonical JSON rendering.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_json().as_bytes()))
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph typology {\n  node [shape=box];\n");
        for node in self.root.walk() {
            let name = if node.code.is_empty() { "root" } else { &node.code };
            let terms: Vec<&str> = node.top_terms.iter().take(3).map(|(t, _)| t.as_str()).collect();
            let _ = writeln!(
                out,
                "  \"{name}\" [label=\"{name}\\n{} docs\\n{}\"];",
                node.members.len(),
                terms.join(", ").replace('"', "\\\"")
            );
            for child in &node.children {
                let _ = writeln!(out, "  \"{name}\" -> \"{}\";", child.code);
            }
        }
        out.push_str("}\n");
        out
    }
}
