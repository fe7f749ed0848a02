//! Evaluation, perturbation robustness and ablation protocols.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::metrics::{EvalReport, PerturbDelta, ScoreRecord};
use crate::net::{self, NetworkConfig, PelNetwork};
use crate::synth::{self, mix_seed, ForgerySample, PerturbSpec, Splits};

/// Scores every sample and computes Acc / AUC / EER.
pub fn evaluate(net: &PelNetwork, samples: &[ForgerySample]) -> Result<EvalReport> {
    let images: Vec<&RgbImage> = samples.iter().map(|s| &s.image).collect();
    let scores = net.predict(&images)?;
    let records = samples
        .iter()
        .zip(scores)
        .map(|(s, score)| ScoreRecord {
            id: s.id.clone(),
            label: s.label.as_u8(),
            score,
        })
        .collect();
    EvalReport::from_samples(records)
}

/// Clean report with one delta per perturbation; sample `i` is perturbed
/// with seed `mix_seed(seed, i)`.
pub fn perturb_eval(net: &PelNetwork, samples: &[ForgerySample], specs: &[PerturbSpec], seed: u64) -> Result<EvalReport> {
    let mut clean = evaluate(net, samples)?;
    let mut deltas: Vec<PerturbDelta> = Vec::new();
    for spec in specs {
        let perturbed = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(ForgerySample {
                    image: synth::perturb(&s.image, spec, mix_seed(seed, i as u64))?,
                    ..s.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = evaluate(net, &perturbed)?;
        deltas.push(report.delta_against(&clean, spec.kind.name(), spec.strength));
    }
    clean.deltas = deltas;
    Ok(clean)
}

/// One row of the component ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub name: &'static str,
    pub rgb: bool,
    pub freq: bool,
    pub self_enhance: bool,
    pub mutual: bool,
}

const fn variant(name: &'static str, rgb: bool, freq: bool, self_enhance: bool, mutual: bool) -> Variant {
    Variant {
        name,
        rgb,
        freq,
        self_enhance,
        mutual,
    }
}

/// Single-stream rows with `mutual` use the spatial-attention stand-in.
pub const VARIANTS: [Variant; 8] = [
    variant("rgb", true, false, false, false),
    variant("freq", false, true, false, false),
    variant("rgb_enhanced", true, false, true, true),
    variant("freq_enhanced", false, true, true, true),
    variant("two_stream", true, true, false, false),
    variant("two_stream_self", true, true, true, false),
    variant("two_stream_mutual", true, true, false, true),
    variant("pel", true, true, true, true),
];

impl Variant {
    pub fn by_name(name: &str) -> Result<Variant> {
        VARIANTS
            .into_iter()
            .find(|v| v.name == name)
            .ok_or_else(|| Error::config(format!("unknown ablation variant '{name}'")))
    }

    pub fn apply(&self, base: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            use_rgb: self.rgb,
            use_freq: self.freq,
            use_self: self.self_enhance,
            use_mutual: self.mutual,
            ..base.clone()
        }
    }

    pub fn is_single_stream(&self) -> bool {
        self.rgb != self.freq
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub acc: f64,
    pub auc: f64,
}

/// Trains `config` on the train split and returns the network and its test report.
pub fn train_and_test(config: NetworkConfig, splits: &Splits) -> Result<(PelNetwork, EvalReport)> {
    let (trained, _) = net::train(PelNetwork::new(config)?, &splits.train, &splits.val)?;
    let report = evaluate(&trained, &splits.test)?;
    Ok((trained, report))
}

/// Trains every variant with the same data, seed and budget. `on_row` sees
/// each row and trained network as it completes.
pub fn run_ablation(
    base: &NetworkConfig,
    seed: u64,
    splits: &Splits,
    mut on_row: impl FnMut(&AblationRow, &PelNetwork),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for v in VARIANTS {
        let cfg = NetworkConfig { seed, ..v.apply(base) };
        let (trained, report) = train_and_test(cfg, splits)?;
        let row = AblationRow {
            variant: v,
            acc: report.acc,
            auc: report.auc,
        };
        on_row(&row, &trained);
        rows.push(row);
    }
    Ok(rows)
}

fn mark(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// `variant,rgb,freq,self,mutual,acc,auc` table.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,rgb,freq,self,mutual,acc,auc\n");
    for r in rows {
        let v = r.variant;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            v.name,
            mark(v.rgb),
            mark(v.freq),
            mark(v.self_enhance),
            mark(v.mutual),
            r.acc,
            r.auc
        );
    }
    s
}

/// Mean acc / auc per variant over several seeds' tables.
pub fn mean_rows(tables: &[Vec<AblationRow>]) -> Result<Vec<AblationRow>> {
    let first = tables.first().ok_or_else(|| Error::Usage("no ablation tables to average".into()))?;
    first
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let n = tables.len() as f64;
            let (mut acc, mut auc) = (0.0, 0.0);
            for t in tables {
                let row = t.get(i).filter(|x| x.variant == r.variant).ok_or_else(|| {
                    Error::Usage("ablation tables have different variant layouts".into())
                })?;
                acc += row.acc;
                auc += row.auc;
            }
            Ok(AblationRow {
                variant: r.variant,
                acc: acc / n,
                auc: auc / n,
            })
        })
        .collect()
}
