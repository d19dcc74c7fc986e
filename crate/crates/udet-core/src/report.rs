//! Evaluation reports: per-sample and aggregate metric tables, DSC
//! histograms, and stratification by nodule diameter and attachment.

use crate::data::Sample;
use crate::error::Result;
use crate::metrics::{dsc_histogram, MetricValue};
use crate::model::UdetModel;
use crate::params::ParamRegistry;
use crate::train::{evaluate_samples, summarize, SampleEval, Summary};

#[derive(Clone, Debug)]
pub struct StratumRow {
    pub group: &'static str,
    pub n: usize,
    pub dsc: MetricValue,
    pub sen: MetricValue,
    pub ppv: MetricValue,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub evals: Vec<SampleEval>,
    pub aggregate: Summary,
    pub strata: Vec<StratumRow>,
    pub histogram_bins: Vec<(f64, f64, usize)>,
}

fn stratum(name: &'static str, idx: &[usize], evals: &[SampleEval]) -> StratumRow {
    let subset: Vec<SampleEval> = idx.iter().map(|&i| evals[i].clone()).collect();
    if subset.is_empty() {
        return StratumRow {
            group: name,
            n: 0,
            dsc: MetricValue::Undefined,
            sen: MetricValue::Undefined,
            ppv: MetricValue::Undefined,
        };
    }
    let s = summarize(&subset);
    StratumRow { group: name, n: subset.len(), dsc: s.dsc, sen: s.sen, ppv: s.ppv }
}

/// Run inference over a dataset and assemble the full evaluation report.
/// `diameter_threshold` is in the manifest's millimeter units.
pub fn evaluate_dataset(
    model: &UdetModel,
    reg: &ParamRegistry<f32>,
    samples: &[Sample],
    bins: usize,
    diameter_threshold: f64,
) -> Result<EvalReport> {
    let evals = evaluate_samples(model, reg, samples, 1.0)?;
    let aggregate = summarize(&evals);

    let mut attached = Vec::new();
    let mut non_attached = Vec::new();
    let mut small = Vec::new();
    let mut large = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        match s.meta.attached {
            Some(true) => attached.push(i),
            Some(false) => non_attached.push(i),
            None => {}
        }
        if let Some(d) = s.meta.diameter_mm {
            if d < diameter_threshold {
                small.push(i);
            } else {
                large.push(i);
            }
        }
    }
    let strata = vec![
        stratum("attached", &attached, &evals),
        stratum("non_attached", &non_attached, &evals),
        stratum("diameter_lt_threshold", &small, &evals),
        stratum("diameter_ge_threshold", &large, &evals),
    ];

    let dsc_values: Vec<f64> = evals.iter().filter_map(|e| e.dsc.value()).collect();
    let histogram_bins = dsc_histogram(&dsc_values, bins)?
        .into_iter()
        .map(|b| (b.lo, b.hi, b.count))
        .collect();

    Ok(EvalReport { evals, aggregate, strata, histogram_bins })
}

impl EvalReport {
    pub fn per_sample_csv(&self) -> String {
        let mut out = String::from("id,loss,dsc,sen,ppv\n");
        for e in &self.evals {
            out.push_str(&format!(
                "{},{:.6},{},{},{}\n",
                e.id,
                e.loss,
                e.dsc.csv_cell(),
                e.sen.csv_cell(),
                e.ppv.csv_cell()
            ));
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        format!(
            "n,loss,dsc,sen,ppv,undefined_excluded\n{},{:.6},{},{},{},{}\n",
            self.evals.len(),
            self.aggregate.mean_loss,
            self.aggregate.dsc.csv_cell(),
            self.aggregate.sen.csv_cell(),
            self.aggregate.ppv.csv_cell(),
            self.aggregate.undefined_excluded
        )
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (lo, hi, count) in &self.histogram_bins {
            out.push_str(&format!("{lo:.4},{hi:.4},{count}\n"));
        }
        out
    }

    pub fn stratified_csv(&self) -> String {
        let mut out = String::from("group,n,dsc,sen,ppv\n");
        for r in &self.strata {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.group,
                r.n,
                r.dsc.csv_cell(),
                r.sen.csv_cell(),
                r.ppv.csv_cell()
            ));
        }
        out
    }
}
