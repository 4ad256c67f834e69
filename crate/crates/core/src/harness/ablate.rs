use serde::{Deserialize, Serialize};

use super::{run, Result, RunOptions, Scenario, Toggles};
use crate::judger::MetricReport;

/// Aggregate over seeds for one setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: String,
    pub toggles: Toggles,
    pub seeds: Vec<u64>,
    pub cr_mean: f64,
    pub cr_std: f64,
    /// Over runs where efficiency is defined.
    pub e_mean: f64,
    pub e_std: f64,
    pub reports: Vec<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scenario: String,
    pub rows: Vec<AblationRow>,
}

/// The full method followed by one setting per switched-off part.
pub fn standard_settings() -> Vec<Toggles> {
    let on = Toggles::default();
    vec![
        on,
        Toggles { busy_rate: false, ..on },
        Toggles { causal: false, ..on },
        Toggles { graph: false, ..on },
    ]
}

/// Every combination of the named parts being on or off; parts not named
/// stay on.
pub fn toggle_product(busy_rate: bool, causal: bool, graph: bool) -> Vec<Toggles> {
    let vary = |named: bool| if named { vec![true, false] } else { vec![true] };
    let mut out: Vec<Toggles> = Vec::new();
    for b in vary(busy_rate) {
        for c in vary(causal) {
            for g in vary(graph) {
                let t = Toggles { busy_rate: b, causal: c, graph: g }.normalized();
                if !out.contains(&t) {
                    out.push(t);
                }
            }
        }
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs every setting on the same seeds. Runs are spread over `threads`
/// workers; results do not depend on the thread count.
pub fn ablate(
    scenario: &Scenario,
    settings: &[Toggles],
    seeds: &[u64],
    threads: usize,
    base: &RunOptions,
) -> Result<AblationReport> {
    let jobs: Vec<(usize, u64)> = (0..settings.len()).flat_map(|s| seeds.iter().map(move |&seed| (s, seed))).collect();
    let threads = threads.clamp(1, jobs.len().max(1));
    let run_one = |(s, seed): (usize, u64)| -> Result<MetricReport> {
        let opts = RunOptions { seed: Some(seed), toggles: settings[s], out_dir: None, ..base.clone() };
        Ok(run(scenario, &opts)?.report)
    };
    let mut results: Vec<Option<Result<MetricReport>>> = (0..jobs.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunk = jobs.len().div_ceil(threads).max(1);
        let handles: Vec<_> = jobs
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let run_one = &run_one;
                scope.spawn(move || (c * chunk, part.iter().map(|j| run_one(*j)).collect::<Vec<_>>()))
            })
            .collect();
        for h in handles {
            let (offset, rs) = h.join().expect("ablation worker panicked");
            for (i, r) in rs.into_iter().enumerate() {
                results[offset + i] = Some(r);
            }
        }
    });
    let mut reports = results.into_iter().map(|r| r.expect("every job ran")).collect::<Result<Vec<_>>>()?.into_iter();
    let rows = settings
        .iter()
        .map(|t| {
            let reports: Vec<MetricReport> = reports.by_ref().take(seeds.len()).collect();
            let cr: Vec<f64> = reports.iter().map(|r| r.cr).collect();
            let e: Vec<f64> = reports.iter().filter_map(|r| r.efficiency).collect();
            let (cr_mean, cr_std) = mean_std(&cr);
            let (e_mean, e_std) = mean_std(&e);
            AblationRow { setting: t.label(), toggles: *t, seeds: seeds.to_vec(), cr_mean, cr_std, e_mean, e_std, reports }
        })
        .collect();
    Ok(AblationReport { scenario: scenario.name.clone(), rows })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    setting: &'a str,
    runs: usize,
    cr_mean: f64,
    cr_std: f64,
    e_mean: f64,
    e_std: f64,
}

impl AblationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ablation serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(CsvRow {
                setting: &r.setting,
                runs: r.reports.len(),
                cr_mean: r.cr_mean,
                cr_std: r.cr_std,
                e_mean: r.e_mean,
                e_std: r.e_std,
            })
            .expect("csv row");
        }
        String::from_utf8(w.into_inner().expect("csv flush")).expect("utf-8 csv")
    }

    pub fn row(&self, setting: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }
}
