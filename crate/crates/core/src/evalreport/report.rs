use std::fmt::Write as _;
use std::path::Path;

use super::svg;
use super::{QuartileRow, TTest, VariantResult};
use crate::error::{Error, Result};

/// Cross-city scores: `pearson[s][t]` for encoders trained on city `s`,
/// pooled and evaluated on city `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferMatrix {
    pub variant: String,
    pub cities: Vec<String>,
    pub pearson: Vec<Vec<f64>>,
}

impl TransferMatrix {
    pub fn off_diagonal(&self) -> Vec<f64> {
        let n = self.cities.len();
        (0..n)
            .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
            .map(|(s, t)| self.pearson[s][t])
            .collect()
    }

    pub fn off_diagonal_mean(&self) -> f64 {
        let v: Vec<f64> = self.off_diagonal().into_iter().filter(|x| x.is_finite()).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("variant,source,target,pearson\n");
        for (i, src) in self.cities.iter().enumerate() {
            for (j, dst) in self.cities.iter().enumerate() {
                let _ = writeln!(s, "{},{src},{dst},{:?}", self.variant, self.pearson[i][j]);
            }
        }
        write(path, &s)
    }

    pub fn svg(&self) -> String {
        svg::heatmap(
            &format!("Transfer Pearson ({}; rows = source)", self.variant),
            &self.cities,
            &self.cities,
            &self.pearson,
        )
    }
}

/// Everything `evaluate` produces. Fields are filled by the pipeline and
/// written with [`EvalReport::write`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    /// Echo of the run configuration, in canonical order.
    pub config: Vec<(String, String)>,
    pub variants: Vec<VariantResult>,
    /// `(a, b, test)` on paired per-repetition Pearson of `a` minus `b`.
    pub ttests: Vec<(String, String, TTest)>,
    pub quartiles: Vec<(String, Vec<QuartileRow>)>,
    /// Explained-variance ratios per trait block of pooled district features.
    pub pca: Vec<(String, Vec<f64>)>,
    pub transfer: Vec<TransferMatrix>,
    pub warnings: Vec<String>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

impl EvalReport {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// Long-format CSV: `variant,repetition,metric,value`.
    pub fn csv(&self) -> String {
        let mut s = String::from("variant,repetition,metric,value\n");
        for v in &self.variants {
            for (r, rep) in v.reps.iter().enumerate() {
                for (m, x) in [("pearson", rep.pearson), ("spearman", rep.spearman), ("r2", rep.r2)] {
                    let _ = writeln!(s, "{},{r},{m},{}", v.name, num(x));
                }
            }
            for (m, st) in [
                ("pearson", v.metrics.pearson),
                ("spearman", v.metrics.spearman),
                ("r2", v.metrics.r2),
            ] {
                let _ = writeln!(s, "{},mean,{m},{}", v.name, num(st.mean));
                let _ = writeln!(s, "{},sd,{m},{}", v.name, num(st.sd));
            }
        }
        for (a, b, t) in &self.ttests {
            let name = format!("{a}-vs-{b}");
            let _ = writeln!(s, "{name},all,mean_diff,{}", num(t.mean_diff));
            let _ = writeln!(s, "{name},all,t,{}", num(t.t));
            let _ = writeln!(s, "{name},all,p,{}", num(t.p));
        }
        for (v, rows) in &self.quartiles {
            for q in rows {
                let _ = writeln!(
                    s,
                    "{v},out_of_fold,{}_pearson,{}",
                    q.group,
                    num(q.pearson.unwrap_or(f64::NAN))
                );
            }
        }
        for (block, ratios) in &self.pca {
            for (i, r) in ratios.iter().enumerate() {
                let _ = writeln!(s, "pca_{block},{i},explained_variance,{}", num(*r));
            }
        }
        for t in &self.transfer {
            for (i, src) in t.cities.iter().enumerate() {
                for (j, dst) in t.cities.iter().enumerate() {
                    let _ = writeln!(
                        s,
                        "transfer_{}_{src}_to_{dst},all,pearson,{}",
                        t.variant,
                        num(t.pearson[i][j])
                    );
                }
            }
        }
        s
    }

    pub fn summary_markdown(&self) -> String {
        let mut s = String::from("# Evaluation summary\n\n## Variants\n\n");
        s.push_str("| variant | Pearson | Spearman | R² | reps |\n|---|---|---|---|---|\n");
        for v in &self.variants {
            let m = &v.metrics;
            let _ = writeln!(
                s,
                "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} ± {:.4} | {} |",
                v.name, m.pearson.mean, m.pearson.sd, m.spearman.mean, m.spearman.sd, m.r2.mean, m.r2.sd, m.pearson.n
            );
        }
        if !self.ttests.is_empty() {
            s.push_str("\n## Paired t-tests (per-repetition Pearson)\n\n");
            s.push_str("| comparison | mean diff | t | p |\n|---|---|---|---|\n");
            for (a, b, t) in &self.ttests {
                let p = if t.degenerate { "degenerate".to_string() } else { format!("{:.3e}", t.p) };
                let _ = writeln!(s, "| {a} vs {b} | {:.4} | {:.3} | {p} |", t.mean_diff, t.t);
            }
        }
        if !self.quartiles.is_empty() {
            s.push_str("\n## Quartile groups (out-of-fold Pearson)\n\n| variant |");
            for g in super::QUARTILE_GROUPS {
                let _ = write!(s, " {g} |");
            }
            s.push_str("\n|---|---|---|---|---|\n");
            for (v, rows) in &self.quartiles {
                let _ = write!(s, "| {v} |");
                for q in rows {
                    match q.pearson {
                        Some(p) => {
                            let _ = write!(s, " {p:.4} (n={}) |", q.members);
                        }
                        None => {
                            let _ = write!(s, " undefined (n={}) |", q.members);
                        }
                    }
                }
                s.push('\n');
            }
        }
        if !self.pca.is_empty() {
            s.push_str("\n## PCA explained variance (first 5 components)\n\n");
            for (b, r) in &self.pca {
                let head: Vec<String> = r.iter().take(5).map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(s, "- {b}: {}", head.join(", "));
            }
        }
        for t in &self.transfer {
            let _ = writeln!(
                s,
                "\n## Transfer ({})\n\nMean off-diagonal Pearson: {:.4}\n",
                t.variant,
                t.off_diagonal_mean()
            );
        }
        if !self.warnings.is_empty() {
            s.push_str("\n## Warnings\n\n");
            for w in &self.warnings {
                let _ = writeln!(s, "- {w}");
            }
        }
        s.push_str("\n## Configuration\n\n```\n");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k}={v}");
        }
        s.push_str("```\n");
        s
    }

    /// Writes `report.csv`, `summary.md` and the SVG plots into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write(&dir.join("report.csv"), &self.csv())?;
        write(&dir.join("summary.md"), &self.summary_markdown())?;
        if !self.variants.is_empty() {
            let labels: Vec<String> = self.variants.iter().map(|v| v.name.clone()).collect();
            let vals: Vec<f64> = self.variants.iter().map(|v| v.metrics.pearson.mean).collect();
            write(
                &dir.join("variants.svg"),
                &svg::bar_chart("Mean test Pearson by variant", &labels, &vals, -1.0, 1.0),
            )?;
        }
        for (v, rows) in &self.quartiles {
            let labels: Vec<String> = rows.iter().map(|q| q.group.to_string()).collect();
            let vals: Vec<f64> = rows.iter().map(|q| q.pearson.unwrap_or(f64::NAN)).collect();
            write(
                &dir.join(format!("quartiles_{v}.svg")),
                &svg::bar_chart(&format!("Quartile-group Pearson ({v})"), &labels, &vals, -1.0, 1.0),
            )?;
        }
        for (b, r) in &self.pca {
            let labels: Vec<String> = (1..=r.len().min(10)).map(|i| format!("PC{i}")).collect();
            write(
                &dir.join(format!("pca_{b}.svg")),
                &svg::bar_chart(&format!("PCA scree ({b})"), &labels, &r[..labels.len()], 0.0, 1.0),
            )?;
        }
        for t in &self.transfer {
            t.write_csv(&dir.join(format!("transfer_{}.csv", t.variant)))?;
            write(&dir.join(format!("transfer_{}.svg", t.variant)), &t.svg())?;
        }
        Ok(())
    }
}
