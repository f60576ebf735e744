//! Correlation metrics, the repeated-split protocol, ablations, quartile and
//! transfer analyses, and report emission.

mod report;
mod stats;
mod svg;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

pub use report::{EvalReport, TransferMatrix};
pub use stats::{inc_beta, ln_gamma, paired_ttest, pca_explained, student_t_two_sided, TTest};

use crate::district::{ForestParams, RandomForest, SplitPlan};
use crate::error::{Error, Result};
use crate::rng;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Domain(format!("length mismatch: {} vs {}", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedMetric(format!("need at least 2 points, got {}", x.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedMetric("Pearson correlation of a constant vector".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation: Pearson of average-tied ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// `1 - SS_res / SS_tot` against the mean of `y_true`.
pub fn r_squared(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_pair(y_true, y_pred)?;
    let m = mean(y_true);
    let ss_tot: f64 = y_true.iter().map(|y| (y - m).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::UndefinedMetric("R² with constant targets".into()));
    }
    let ss_res: f64 = y_true.iter().zip(y_pred).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    /// Repetitions contributing (undefined metrics are left out).
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        let n = v.len();
        if n == 0 {
            return Stat { mean: f64::NAN, sd: f64::NAN, n };
        }
        let m = mean(&v);
        let sd = if n > 1 {
            (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean: m, sd, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub pearson: Stat,
    pub spearman: Stat,
    pub r2: Stat,
}

/// Scores of one repetition; `NaN` where the metric is undefined on the fold.
#[derive(Debug, Clone, PartialEq)]
pub struct RepScore {
    pub pearson: f64,
    pub spearman: f64,
    pub r2: f64,
    /// Test-fold predictions, aligned with the plan's test ids.
    pub predictions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub name: String,
    pub reps: Vec<RepScore>,
    pub metrics: MetricTriple,
}

impl VariantResult {
    pub fn pearsons(&self) -> Vec<f64> {
        self.reps.iter().map(|r| r.pearson).collect()
    }
}

/// Fits a forest on each repetition's training districts and scores its test
/// fold. `ids` and `targets` align with the rows of `features`.
pub fn evaluate_variant(
    name: &str,
    features: ArrayView2<f64>,
    ids: &[u32],
    targets: &[f64],
    plan: &SplitPlan,
    seed: u64,
    forest: ForestParams,
) -> Result<VariantResult> {
    if features.nrows() != ids.len() || ids.len() != targets.len() {
        return Err(Error::Domain(format!(
            "{} feature rows, {} ids, {} targets",
            features.nrows(),
            ids.len(),
            targets.len()
        )));
    }
    if features.ncols() == 0 {
        return Err(Error::Domain(format!("variant `{name}` has no features")));
    }
    let row_of: std::collections::HashMap<u32, usize> =
        ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let rows = |list: &[u32]| -> Result<Vec<usize>> {
        list.iter()
            .map(|d| {
                row_of
                    .get(d)
                    .copied()
                    .ok_or_else(|| Error::Domain(format!("split names unknown district {d}")))
            })
            .collect()
    };
    let reps: Vec<RepScore> = plan
        .reps
        .par_iter()
        .enumerate()
        .map(|(r, rep)| {
            let tr = rows(&rep.train)?;
            let te = rows(&rep.test)?;
            let x_tr = features.select(Axis(0), &tr);
            let y_tr: Vec<f64> = tr.iter().map(|&i| targets[i]).collect();
            let mut f = RandomForest::new(forest);
            f.fit(x_tr.view(), &y_tr, rng::derive_seed(seed, &format!("{}#{r}", rng::FOREST)))?;
            let pred = f.predict(features.select(Axis(0), &te).view())?;
            let y_te: Vec<f64> = te.iter().map(|&i| targets[i]).collect();
            let or_nan = |m: Result<f64>| match m {
                Ok(v) => Ok(v),
                Err(Error::UndefinedMetric(_)) => Ok(f64::NAN),
                Err(e) => Err(e),
            };
            Ok(RepScore {
                pearson: or_nan(pearson(&pred, &y_te))?,
                spearman: or_nan(spearman(&pred, &y_te))?,
                r2: or_nan(r_squared(&y_te, &pred))?,
                predictions: pred,
            })
        })
        .collect::<Result<_>>()?;
    let col = |f: fn(&RepScore) -> f64| Stat::of(&reps.iter().map(f).collect::<Vec<_>>());
    let metrics = MetricTriple {
        pearson: col(|r| r.pearson),
        spearman: col(|r| r.spearman),
        r2: col(|r| r.r2),
    };
    Ok(VariantResult {
        name: name.to_string(),
        reps,
        metrics,
    })
}

/// Trait blocks that make up district features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Morph,
    Access,
    Econ,
    /// Economic encoder trained without backdoor adjustment.
    EconProxy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    NoAccess,
    NoMorph,
    NoEcon,
    NoBackdoor,
    Proxy,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::NoAccess,
        Variant::NoMorph,
        Variant::NoEcon,
        Variant::NoBackdoor,
        Variant::Proxy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAccess => "noaccess",
            Variant::NoMorph => "nomorph",
            Variant::NoEcon => "noecon",
            Variant::NoBackdoor => "nobackdoor",
            Variant::Proxy => "proxy",
        }
    }

    /// Blocks in fused order (morph, access, econ).
    pub fn blocks(self) -> &'static [Block] {
        match self {
            Variant::Full => &[Block::Morph, Block::Access, Block::Econ],
            Variant::NoAccess => &[Block::Morph, Block::Econ],
            Variant::NoMorph => &[Block::Access, Block::Econ],
            Variant::NoEcon => &[Block::Morph, Block::Access],
            Variant::NoBackdoor => &[Block::Morph, Block::Access, Block::EconProxy],
            Variant::Proxy => &[Block::EconProxy],
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Variant>> {
        s.split(',').map(|v| v.trim().parse()).collect()
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.as_str()).collect();
                Error::Config(format!("unknown variant `{s}`; valid: {}", names.join(", ")))
            })
    }
}

/// Per-district pooled blocks (rows aligned with `ids`).
#[derive(Debug, Clone, PartialEq)]
pub struct DistrictBlocks {
    pub ids: Vec<u32>,
    pub targets: Vec<f64>,
    pub morph: Option<Array2<f64>>,
    pub access: Option<Array2<f64>>,
    pub econ: Option<Array2<f64>>,
    pub econ_proxy: Option<Array2<f64>>,
}

impl DistrictBlocks {
    pub fn block(&self, b: Block) -> Option<&Array2<f64>> {
        match b {
            Block::Morph => self.morph.as_ref(),
            Block::Access => self.access.as_ref(),
            Block::Econ => self.econ.as_ref(),
            Block::EconProxy => self.econ_proxy.as_ref(),
        }
    }

    /// Concatenation of the listed blocks.
    pub fn features(&self, blocks: &[Block]) -> Result<Array2<f64>> {
        if blocks.is_empty() {
            return Err(Error::Domain("no trait blocks selected".into()));
        }
        let views = blocks
            .iter()
            .map(|&b| {
                self.block(b)
                    .map(|a| a.view())
                    .ok_or_else(|| Error::Config(format!("missing embeddings for {b:?} block")))
            })
            .collect::<Result<Vec<_>>>()?;
        ndarray::concatenate(Axis(1), &views).map_err(|e| Error::Domain(e.to_string()))
    }
}

/// Evaluates each variant on the same plan.
pub fn ablate(
    blocks: &DistrictBlocks,
    variants: &[Variant],
    plan: &SplitPlan,
    seed: u64,
    forest: ForestParams,
) -> Result<Vec<VariantResult>> {
    variants
        .iter()
        .map(|&v| {
            let x = blocks.features(v.blocks())?;
            evaluate_variant(v.as_str(), x.view(), &blocks.ids, &blocks.targets, plan, seed, forest)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuartileRow {
    pub group: &'static str,
    pub members: usize,
    /// `None` when the group has fewer than two members or a constant side.
    pub pearson: Option<f64>,
}

pub const QUARTILE_GROUPS: [&str; 4] = ["bottom25", "bottom50", "top50", "top25"];

/// Pearson within the bottom/top 25% and 50% of districts by true value.
/// Group sizes are `round(f * n)`; ties in `y_true` break by index.
pub fn quartile_analysis(y_true: &[f64], y_pred: &[f64]) -> Result<Vec<QuartileRow>> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Domain("quartile inputs differ in length".into()));
    }
    let n = y_true.len();
    if n < 8 {
        return Err(Error::Domain(format!("quartile analysis needs at least 8 districts, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y_true[a].total_cmp(&y_true[b]).then(a.cmp(&b)));
    let q = (0.25 * n as f64).round() as usize;
    let h = (0.5 * n as f64).round() as usize;
    let groups: [&[usize]; 4] = [&order[..q], &order[..h], &order[n - h..], &order[n - q..]];
    Ok(QUARTILE_GROUPS
        .iter()
        .zip(groups)
        .map(|(&name, idx)| {
            let t: Vec<f64> = idx.iter().map(|&i| y_true[i]).collect();
            let p: Vec<f64> = idx.iter().map(|&i| y_pred[i]).collect();
            QuartileRow {
                group: name,
                members: idx.len(),
                pearson: pearson(&p, &t).ok(),
            }
        })
        .collect())
}

/// Mean out-of-fold prediction per district over the repetitions that held
/// it out; districts never tested get `NaN`.
pub fn out_of_fold(result: &VariantResult, plan: &SplitPlan, ids: &[u32]) -> Vec<f64> {
    let pos: std::collections::HashMap<u32, usize> =
        ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut sum = vec![0.0; ids.len()];
    let mut cnt = vec![0usize; ids.len()];
    for (rep, score) in plan.reps.iter().zip(&result.reps) {
        for (d, p) in rep.test.iter().zip(&score.predictions) {
            if let Some(&i) = pos.get(d) {
                sum[i] += p;
                cnt[i] += 1;
            }
        }
    }
    sum.iter()
        .zip(&cnt)
        .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
        .collect()
}

#[cfg(test)]
mod tests;
