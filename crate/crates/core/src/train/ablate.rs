//! Loss-component ablation: one pretraining run per objective under the same
//! seeds, each followed by linear probes over several downstream seeds.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::downstream::{probe_features, probe_on_features, DownstreamConfig};
use super::pretrain::{pretrain, PretrainConfig, RunControl};
use super::run::RunDir;
use crate::data::{DownstreamSet, PretrainSet};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::loss::Objective;
use crate::numeric::median;
use crate::signal::NoiseBank;

/// Alignment weights for the `weighted+dissim` mixtures.
pub const LAMBDA_SWEEP: [f64; 5] = [5.0, 2.0, 1.0, 0.5, 0.2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub encoder: EncoderConfig,
    pub encoder_seed: u64,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    /// Objectives in `nce`, `weighted+dissim:0.5` notation.
    pub variants: Vec<String>,
    pub probe_seeds: Vec<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            encoder_seed: 42,
            pretrain: PretrainConfig::desk(),
            downstream: DownstreamConfig::default(),
            variants: Objective::ablation_set().iter().map(ToString::to_string).collect(),
            probe_seeds: (0..5).collect(),
        }
    }
}

impl AblationConfig {
    /// `weighted+dissim` at every weight of [`LAMBDA_SWEEP`].
    pub fn lambda_sweep() -> Vec<String> {
        LAMBDA_SWEEP.iter().map(|l| format!("weighted+dissim:{l}")).collect()
    }

    pub fn objectives(&self) -> Result<Vec<Objective>> {
        if self.variants.is_empty() {
            return Err(Error::config("ablation needs at least one variant"));
        }
        if self.probe_seeds.is_empty() {
            return Err(Error::config("ablation needs at least one probe seed"));
        }
        self.variants.iter().map(|v| v.parse()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub lambda: f64,
    /// Median test metric over the probe seeds.
    pub median: f64,
    pub values: Vec<f64>,
    pub epochs_run: usize,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub metric: String,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `variant,lambda,median,seed_0,...` with one column per probe seed.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let seeds = self.rows.first().map_or(0, |r| r.values.len());
        let mut header = vec!["variant".to_string(), "lambda".into(), format!("median_{}", self.metric)];
        header.extend((0..seeds).map(|i| format!("seed_{i}")));
        header.extend(["epochs_run".to_string(), "best_val_loss".into()]);
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.variant.clone(), r.lambda.to_string(), r.median.to_string()];
            rec.extend(r.values.iter().map(f64::to_string));
            rec.extend([r.epochs_run.to_string(), r.best_val_loss.to_string()]);
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table for terminals.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.variant.len()).max().unwrap_or(7).max(7);
        let mut s = format!("{:<width$}  {:>6}  {:>10}  per-seed\n", "variant", "lambda", self.metric);
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>10.4}  {}", r.variant, r.lambda, r.median, vals.join(" "));
        }
        s
    }
}

/// Runs every variant from the same initial encoder, data order and view
/// streams; only the objective differs between rows.
pub fn ablate(
    data: &PretrainSet,
    task: &DownstreamSet,
    bank: &NoiseBank,
    cfg: &AblationConfig,
    run_dir: Option<&RunDir>,
) -> Result<AblationTable> {
    let objectives = cfg.objectives()?;
    let mut rows = Vec::with_capacity(objectives.len());
    let mut metric = "";
    for obj in objectives {
        let name = obj.to_string();
        log::info!("ablation variant {name}");
        let pcfg = PretrainConfig { objective: obj, ..cfg.pretrain.clone() };
        let sub = match run_dir {
            Some(r) => Some(RunDir::create(r.file(&name.replace(['+', ':', ' ', '(', ')'], "_")))?),
            None => None,
        };
        let encoder = Encoder::build(&cfg.encoder, cfg.encoder_seed)?;
        let ctl = RunControl { run_dir: sub.as_ref(), ..RunControl::default() };
        let out = pretrain(data, encoder, &pcfg, bank, ctl)?;
        let features = probe_features(&out.encoder, task, &cfg.downstream)?;
        let mut values = Vec::with_capacity(cfg.probe_seeds.len());
        for &seed in &cfg.probe_seeds {
            let r = probe_on_features(&features, &DownstreamConfig { seed, ..cfg.downstream.clone() })?;
            metric = r.metric;
            values.push(r.value);
        }
        rows.push(AblationRow {
            variant: name,
            lambda: obj.lambda,
            median: median(&values),
            values,
            epochs_run: out.history.len(),
            best_val_loss: out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min),
        });
    }
    let table = AblationTable { metric: metric.to_string(), rows };
    if let Some(r) = run_dir {
        table.write_csv(std::fs::File::create(r.file("ablation.csv"))?)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticConfig};
    use crate::signal::PreprocessConfig;

    #[test]
    fn default_variants_cover_the_five_arms() {
        let cfg = AblationConfig::default();
        let objs = cfg.objectives().unwrap();
        assert_eq!(cfg.variants, ["nce", "weighted", "dissim", "nce+dissim", "weighted+dissim"]);
        assert!(objs.iter().all(|o| o.normalize));
        let full = objs.last().unwrap();
        assert_eq!(full.lambda, 1.0);
        let sweep: Vec<Objective> = AblationConfig::lambda_sweep().iter().map(|v| v.parse().unwrap()).collect();
        assert_eq!(sweep.iter().map(|o| o.lambda).collect::<Vec<_>>(), LAMBDA_SWEEP);
    }

    #[test]
    fn small_ablation_emits_one_row_per_variant() {
        let syn = SyntheticConfig { n_subjects: 24, downstream_n: 32, duration_s: 2.0, ..SyntheticConfig::default() };
        let (data, task) = generate(&syn).unwrap();
        let pre = PreprocessConfig { fs_out: 250.0, ..PreprocessConfig::default() };
        let cfg = AblationConfig {
            pretrain: PretrainConfig { epochs: 1, batch_size: 8, val_fraction: 0.2, preprocess: pre, ..PretrainConfig::desk() },
            downstream: DownstreamConfig { preprocess: pre, epochs: 5, ..DownstreamConfig::default() },
            probe_seeds: vec![0, 1],
            ..AblationConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let table = ablate(&data, &task, &NoiseBank::synthetic(), &cfg, Some(&run)).unwrap();
        assert_eq!(table.rows.len(), 5);
        assert_eq!(table.metric, "auroc");
        assert!(table.rows.iter().all(|r| r.values.len() == 2 && r.epochs_run == 1));
        let csv = std::fs::read_to_string(run.file("ablation.csv")).unwrap();
        assert!(csv.starts_with("variant,lambda,median_auroc,seed_0,seed_1,"));
        assert!(csv.contains("\nweighted+dissim,1,"));
        assert!(table.render().contains("weighted+dissim"));
    }
}
