use std::collections::BTreeMap;
use std::fs::File;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{read_metrics, run, write_atomic, RunConfig, METRICS_FILE, SUMMARY_FILE};
use crate::agent::Method;
use crate::error::{Error, Result};

/// Mean return over the last 10% of episodes (at least one).
pub fn final_window_return(returns: &[f64]) -> Option<f64> {
    if returns.is_empty() {
        return None;
    }
    let n = returns.len().div_ceil(10);
    let tail = &returns[returns.len() - n..];
    Some(tail.iter().sum::<f64>() / n as f64)
}

/// One line of `summary.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub runs: usize,
    pub failed: usize,
    pub mean: f64,
    /// Population standard deviation over the per-run window means.
    pub std: f64,
}

/// Aggregates per-run final-window returns, ordered by method name.
pub fn summarize(per_method: &BTreeMap<String, (Vec<f64>, usize)>) -> Vec<SummaryRow> {
    per_method
        .iter()
        .map(|(method, (values, failed))| {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            SummaryRow { method: method.clone(), runs: values.len(), failed: *failed, mean, std }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub summary: Vec<SummaryRow>,
    pub summary_path: PathBuf,
    /// `(method, seed, message)` of every failed run.
    pub failures: Vec<(Method, u64, String)>,
}

fn window_from_file(path: &std::path::Path) -> Result<f64> {
    let (_, rows) = read_metrics(File::open(path)?)?;
    let returns: Vec<f64> = rows.iter().map(|r| r.ret).collect();
    final_window_return(&returns).ok_or_else(|| Error::Config(format!("{} has no episodes", path.display())))
}

/// Runs every (method, seed) pair under `base.out/<method>/seed_<seed>` using
/// up to `jobs` threads and writes `summary.csv` into `base.out`.
pub fn sweep(base: &RunConfig, seeds: &[u64], methods: &[Method], jobs: usize) -> Result<SweepOutcome> {
    if seeds.is_empty() || methods.is_empty() {
        return Err(Error::Config("sweep needs at least one seed and one method".into()));
    }
    base.validate()?;
    let mut methods = methods.to_vec();
    methods.sort_by_key(|m| m.name());
    methods.dedup();
    let jobs_list: Vec<(Method, u64)> = methods.iter().flat_map(|m| seeds.iter().map(move |s| (*m, *s))).collect();
    let results: Mutex<Vec<Option<Result<f64, String>>>> = Mutex::new(vec![None; jobs_list.len()]);
    let next = AtomicUsize::new(0);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(method, seed)) = jobs_list.get(i) else { break };
        let mut cfg = base.clone();
        cfg.train.method = method;
        cfg.train.seed = seed;
        cfg.out = base.out.join(method.name()).join(format!("seed_{seed}"));
        let r = run(&cfg)
            .map_err(|e| e.to_string())
            .and_then(|o| window_from_file(&o.out.join(METRICS_FILE)).map_err(|e| e.to_string()));
        if let Err(e) = &r {
            log::warn!("run {method} seed {seed} failed: {e}");
        }
        results.lock().expect("results lock")[i] = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(jobs_list.len()) {
            s.spawn(work);
        }
    });

    let mut per_method: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    let mut failures = Vec::new();
    for ((method, seed), r) in jobs_list.iter().zip(results.into_inner().expect("results lock")) {
        let entry = per_method.entry(method.name().to_string()).or_default();
        match r.expect("every job ran") {
            Ok(v) => entry.0.push(v),
            Err(e) => {
                entry.1 += 1;
                failures.push((*method, *seed, e));
            }
        }
    }
    if failures.len() == jobs_list.len() {
        return Err(Error::Config(format!("all {} runs failed; first: {}", failures.len(), failures[0].2)));
    }
    let summary = summarize(&per_method);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["method", "runs", "failed", "mean_final_return", "std_final_return"])?;
    for r in &summary {
        w.write_record([r.method.clone(), r.runs.to_string(), r.failed.to_string(), r.mean.to_string(), r.std.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let summary_path = base.out.join(SUMMARY_FILE);
    std::fs::create_dir_all(&base.out)?;
    write_atomic(&summary_path, &bytes)?;
    Ok(SweepOutcome { summary, summary_path, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::TrainConfig;
    use crate::cli::{MetricsRow, MetricsWriter};
    use crate::envs::{EnvKind, Modality};

    #[test]
    fn final_window_examples() {
        assert_eq!(final_window_return(&[]), None);
        assert_eq!(final_window_return(&[4.0]), Some(4.0));
        let r: Vec<f64> = (0..20).map(f64::from).collect();
        assert_eq!(final_window_return(&r), Some(18.5));
        let r: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(final_window_return(&r), Some(9.5));
    }

    fn synthetic_metrics(path: &std::path::Path, returns: &[f64]) {
        let mut w = MetricsWriter::new(Vec::new(), &[Modality::Visual]).unwrap();
        for (i, r) in returns.iter().enumerate() {
            let row = MetricsRow {
                episode: i,
                env_steps: i as u64,
                ret: *r,
                success: false,
                loss_actor: 0.0,
                loss_critic: 0.0,
                loss_sim: 0.0,
                loss_td: 0.0,
                lambda: vec![1.0],
            };
            w.write(&row).unwrap();
        }
        std::fs::write(path, w.into_inner().unwrap()).unwrap();
    }

    #[test]
    fn std_over_three_window_means() {
        let dir = tempfile::tempdir().unwrap();
        let mut values = Vec::new();
        for (k, last) in [1.0, 2.0, 6.0].into_iter().enumerate() {
            let p = dir.path().join(format!("m{k}.csv"));
            let mut returns = vec![-50.0; 9];
            returns.push(last);
            synthetic_metrics(&p, &returns);
            values.push(window_from_file(&p).unwrap());
        }
        assert_eq!(values, [1.0, 2.0, 6.0]);
        let rows = summarize(&BTreeMap::from([("maie".to_string(), (values, 0))]));
        assert_eq!(rows[0].mean, 3.0);
        // population std of (1, 2, 6): sqrt(14/3)
        assert!((rows[0].std - (14.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    fn base(dir: &std::path::Path) -> RunConfig {
        RunConfig {
            env: EnvKind::HeteroNav,
            out: dir.to_path_buf(),
            train: TrainConfig { episodes: 1, rollout_length: 8, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn single_run_has_zero_std() {
        let dir = tempfile::tempdir().unwrap();
        let out = sweep(&base(dir.path()), &[3], &[Method::Concat], 1).unwrap();
        assert_eq!(out.summary.len(), 1);
        assert_eq!(out.summary[0].std, 0.0);
        assert!(dir.path().join("concat/seed_3/metrics.csv").exists());
        assert!(out.summary_path.exists());
    }

    #[test]
    fn summary_is_lexicographic() {
        let dir = tempfile::tempdir().unwrap();
        let out = sweep(&base(dir.path()), &[0], &[Method::NoIe, Method::Maie, Method::Concat], 2).unwrap();
        let names: Vec<&str> = out.summary.iter().map(|r| r.method.as_str()).collect();
        assert_eq!(names, ["concat", "maie", "no_ie"]);
        let text = std::fs::read_to_string(&out.summary_path).unwrap();
        let firsts: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(firsts, names);
    }

    #[test]
    fn empty_lists_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(sweep(&base(dir.path()), &[], &[Method::Maie], 1).is_err());
        assert!(sweep(&base(dir.path()), &[0], &[], 1).is_err());
    }
}
