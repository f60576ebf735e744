//! District fusion, random-forest regression and repeated 80/20 splits.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct DistrictFeature {
    pub district_id: u32,
    /// Pooled embeddings, one block per encoder in the order given to
    /// [`pool_districts`] (morph, access, econ for the full model).
    pub r: Vec<f64>,
    pub n_tiles: usize,
}

/// Mean of each embedding block over `rows`, concatenated block by block.
pub fn pool_district(blocks: &[ArrayView2<f64>], rows: &[usize]) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::Domain("cannot pool an empty district".into()));
    }
    let mut r = Vec::with_capacity(blocks.iter().map(|b| b.ncols()).sum());
    for b in blocks {
        for c in 0..b.ncols() {
            let s: f64 = rows.iter().map(|&i| b[[i, c]]).sum();
            r.push(s / rows.len() as f64);
        }
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("pooled district feature is not finite".into()));
    }
    Ok(r)
}

/// Pools per-tile embeddings (`blocks[k]` has one row per tile) into one
/// feature per district in `districts`, ascending by id. Tiles without a
/// district are ignored; districts without tiles are dropped with a warning.
pub fn pool_districts(
    districts: &[u32],
    tile_district: &[Option<u32>],
    blocks: &[ArrayView2<f64>],
) -> Result<(Vec<DistrictFeature>, Vec<String>)> {
    if let Some(b) = blocks.iter().find(|b| b.nrows() != tile_district.len()) {
        return Err(Error::Domain(format!(
            "embedding block has {} rows for {} tiles",
            b.nrows(),
            tile_district.len()
        )));
    }
    let mut rows: BTreeMap<u32, Vec<usize>> = districts.iter().map(|&d| (d, Vec::new())).collect();
    for (i, d) in tile_district.iter().enumerate() {
        if let Some(v) = d.and_then(|d| rows.get_mut(&d)) {
            v.push(i);
        }
    }
    let mut out = Vec::new();
    let mut warnings = Vec::new();
    for (id, r) in rows {
        if r.is_empty() {
            let msg = format!("district {id} has no tiles and is excluded");
            log::warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        out.push(DistrictFeature {
            district_id: id,
            r: pool_district(blocks, &r)?,
            n_tiles: r.len(),
        });
    }
    Ok((out, warnings))
}

/// Stacks features into an `n x D` matrix.
pub fn feature_matrix(features: &[DistrictFeature]) -> Result<Array2<f64>> {
    let d = features.first().map_or(0, |f| f.r.len());
    if features.iter().any(|f| f.r.len() != d) {
        return Err(Error::Domain("district features have unequal lengths".into()));
    }
    let flat: Vec<f64> = features.iter().flat_map(|f| f.r.iter().copied()).collect();
    Array2::from_shape_vec((features.len(), d), flat).map_err(|e| Error::Domain(e.to_string()))
}

pub fn write_features_csv(features: &[DistrictFeature], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::ingest::csv_err(path, e))?;
    let d = features.first().map_or(0, |f| f.r.len());
    let mut header = vec!["district_id".to_string()];
    header.extend((0..d).map(|i| format!("r{i}")));
    w.write_record(&header).map_err(|e| crate::ingest::csv_err(path, e))?;
    for f in features {
        let mut rec = vec![f.district_id.to_string()];
        rec.extend(f.r.iter().map(|v| format!("{v:?}")));
        w.write_record(&rec).map_err(|e| crate::ingest::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(D / 3)`.
    pub max_features: Option<usize>,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 50,
            max_features: None,
            min_samples_leaf: 2,
            bootstrap: true,
        }
    }
}

const LEAF: usize = usize::MAX;

/// One node of a flattened tree. Leaves have `feature == usize::MAX`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

impl Node {
    fn leaf(value: f64) -> Self {
        Node {
            feature: LEAF,
            threshold: 0.0,
            left: 0,
            right: 0,
            value,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.feature == LEAF
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Bootstrap sample (training row indices, with repeats).
    pub sample: Vec<usize>,
}

impl Tree {
    pub fn predict(&self, x: ArrayView1<f64>) -> f64 {
        let mut n = &self.nodes[0];
        while !n.is_leaf() {
            n = if x[n.feature] <= n.threshold {
                &self.nodes[n.left]
            } else {
                &self.nodes[n.right]
            };
        }
        n.value
    }
}

fn mean(y: &[f64], idx: &[usize]) -> f64 {
    idx.iter().map(|&i| y[i]).sum::<f64>() / idx.len() as f64
}

struct Builder<'a> {
    x: ArrayView2<'a, f64>,
    y: &'a [f64],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Builder<'_> {
    /// Best split of `idx` on `feature`, maximizing the reduction in summed
    /// squared error. Equal gains keep the lower threshold.
    fn best_on(&self, idx: &[usize], feature: usize) -> Option<Split> {
        let mut order: Vec<usize> = idx.to_vec();
        order.sort_by(|&a, &b| self.x[[a, feature]].total_cmp(&self.x[[b, feature]]).then(a.cmp(&b)));
        let n = order.len();
        let total: f64 = order.iter().map(|&i| self.y[i]).sum();
        let mut left = 0.0;
        let mut best: Option<Split> = None;
        for k in 1..n {
            left += self.y[order[k - 1]];
            let (lo, hi) = (self.x[[order[k - 1], feature]], self.x[[order[k], feature]]);
            if lo == hi || k < self.min_leaf || n - k < self.min_leaf {
                continue;
            }
            let right = total - left;
            // SSE reduction up to a constant: sum^2/n on each side.
            let gain = left * left / k as f64 + right * right / (n - k) as f64 - total * total / n as f64;
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                best = Some(Split {
                    feature,
                    threshold: if mid < hi { mid } else { lo },
                    gain,
                });
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, rng: &mut rng::StreamRng) -> usize {
        let id = self.nodes.len();
        let value = mean(self.y, &idx);
        self.nodes.push(Node::leaf(value));
        let constant = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        if idx.len() < 2 * self.min_leaf || constant {
            return id;
        }
        let d = self.x.ncols();
        let mut feats: Vec<usize> = (0..d).collect();
        let (chosen, _) = feats.partial_shuffle(rng, self.mtry);
        let mut chosen = chosen.to_vec();
        chosen.sort_unstable();
        let mut best: Option<Split> = None;
        for f in chosen {
            if let Some(s) = self.best_on(&idx, f) {
                // Strict improvement keeps the lowest feature index on ties.
                if best.as_ref().is_none_or(|b| s.gain > b.gain) {
                    best = Some(s);
                }
            }
        }
        let Some(split) = best.filter(|s| s.gain > 0.0) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .iter()
            .partition(|&&i| self.x[[i, split.feature]] <= split.threshold);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            value,
        };
        id
    }
}

/// Bagged CART regression forest. Constructed unfitted; [`RandomForest::fit`]
/// must run before [`RandomForest::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub params: ForestParams,
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

impl RandomForest {
    pub fn new(params: ForestParams) -> Self {
        RandomForest {
            params,
            trees: Vec::new(),
            n_features: 0,
        }
    }

    pub fn is_fitted(&self) -> bool {
        !self.trees.is_empty()
    }

    pub fn fit(&mut self, x: ArrayView2<f64>, y: &[f64], seed: u64) -> Result<()> {
        let (n, d) = x.dim();
        if n != y.len() {
            return Err(Error::Domain(format!("{n} feature rows for {} targets", y.len())));
        }
        if n < 2 {
            return Err(Error::Domain(format!("forest needs at least 2 samples, got {n}")));
        }
        if d == 0 {
            return Err(Error::Domain("forest needs at least one feature".into()));
        }
        if self.params.n_trees == 0 || self.params.min_samples_leaf == 0 {
            return Err(Error::Config("n_trees and min_samples_leaf must be positive".into()));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("forest inputs must be finite".into()));
        }
        let mtry = self.params.max_features.unwrap_or(d.div_ceil(3)).clamp(1, d);
        let params = self.params;
        self.trees = (0..params.n_trees)
            .into_par_iter()
            .map(|t| {
                let mut rng = rng::indexed_stream(seed, rng::FOREST, t as u64);
                let sample: Vec<usize> = if params.bootstrap {
                    (0..n).map(|_| rng.random_range(0..n)).collect()
                } else {
                    (0..n).collect()
                };
                let mut b = Builder {
                    x,
                    y,
                    mtry,
                    min_leaf: params.min_samples_leaf,
                    nodes: Vec::new(),
                };
                b.grow(sample.clone(), &mut rng);
                Tree {
                    nodes: b.nodes,
                    sample,
                }
            })
            .collect();
        self.n_features = d;
        Ok(())
    }

    /// Mean of the tree outputs, summed in tree order.
    pub fn predict_one(&self, x: ArrayView1<f64>) -> Result<f64> {
        if !self.is_fitted() {
            return Err(Error::State("random forest used before fit".into()));
        }
        if x.len() != self.n_features {
            return Err(Error::Domain(format!(
                "expected {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        let s: f64 = self.trees.iter().map(|t| t.predict(x)).sum();
        Ok(s / self.trees.len() as f64)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict_one(r)).collect()
    }

    /// Writes every tree as flattened node rows:
    /// `tree,node,feature,threshold,left,right,value` (leaves have feature -1).
    pub fn write_model(&self, path: &Path) -> Result<()> {
        if !self.is_fitted() {
            return Err(Error::State("cannot save an unfitted forest".into()));
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        let mut body = format!("# n_features={}\ntree,node,feature,threshold,left,right,value\n", self.n_features);
        for (t, tree) in self.trees.iter().enumerate() {
            for (i, n) in tree.nodes.iter().enumerate() {
                let feat = if n.is_leaf() { -1 } else { n.feature as i64 };
                body.push_str(&format!(
                    "{t},{i},{feat},{:?},{},{},{:?}\n",
                    n.threshold, n.left, n.right, n.value
                ));
            }
        }
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_model(path: &Path, params: ForestParams) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
        let mut lines = text.lines();
        let n_features = lines
            .next()
            .and_then(|l| l.strip_prefix("# n_features="))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing n_features line"))?;
        lines.next();
        let mut trees: Vec<Tree> = Vec::new();
        for line in lines {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 fields per node"));
            }
            let t: usize = f[0].parse().map_err(|_| bad("bad tree index"))?;
            let feat: i64 = f[2].parse().map_err(|_| bad("bad feature"))?;
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad("bad node index"));
            if t == trees.len() {
                trees.push(Tree {
                    nodes: Vec::new(),
                    sample: Vec::new(),
                });
            }
            let tree = trees.get_mut(t).ok_or_else(|| bad("trees out of order"))?;
            tree.nodes.push(Node {
                feature: if feat < 0 { LEAF } else { feat as usize },
                threshold: num(f[3])?,
                left: idx(f[4])?,
                right: idx(f[5])?,
                value: num(f[6])?,
            });
        }
        Ok(RandomForest {
            params,
            trees,
            n_features,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitRep {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub reps: Vec<SplitRep>,
}

pub const DEFAULT_REPS: usize = 50;
pub const TEST_FRACTION: f64 = 0.2;

/// `reps` seeded 80/20 partitions of `ids`. Both sides are sorted ascending.
pub fn make_splits_n(ids: &[u32], seed: u64, reps: usize) -> Result<SplitPlan> {
    let mut sorted = ids.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(Error::Domain("district ids must be unique".into()));
    }
    if sorted.len() < 5 {
        return Err(Error::Domain(format!(
            "need at least 5 districts for splitting, got {}",
            sorted.len()
        )));
    }
    let n_test = ((TEST_FRACTION * sorted.len() as f64).round() as usize).max(1);
    let reps = (0..reps)
        .map(|r| {
            let mut perm = sorted.clone();
            perm.shuffle(&mut rng::indexed_stream(seed, rng::SPLITS, r as u64));
            let mut test = perm[..n_test].to_vec();
            let mut train = perm[n_test..].to_vec();
            test.sort_unstable();
            train.sort_unstable();
            SplitRep { train, test }
        })
        .collect();
    Ok(SplitPlan { reps })
}

pub fn make_splits(ids: &[u32], seed: u64) -> Result<SplitPlan> {
    make_splits_n(ids, seed, DEFAULT_REPS)
}
