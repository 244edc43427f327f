//! Dependency-aware worker pool.
//!
//! At most `workers` jobs run at once; a job starts only after every
//! dependency finished ok. A failed job fails alone: independent jobs keep
//! running, transitively dependent ones are marked skipped.

use std::collections::HashMap;
use std::sync::mpsc;
use std::thread;

use crate::config::RunConfig;
use crate::error::{Error, Result};

use super::steps::run_job;
use super::{JobRecord, JobSpec, JobStatus};

#[derive(Debug, Clone, Copy, PartialEq)]
enum State {
    Pending,
    Running,
    Ok,
    Failed,
    Skipped,
}

/// Run all jobs, respecting dependencies, with at most `workers` in flight.
/// Records come back sorted by job id regardless of completion order.
pub fn execute(jobs: &[JobSpec], workers: usize, config: &RunConfig) -> Result<Vec<JobRecord>> {
    if workers == 0 {
        return Err(Error::InvalidConfig {
            reason: "workers must be >= 1".into(),
        });
    }
    let index: HashMap<&str, usize> = jobs
        .iter()
        .enumerate()
        .map(|(i, j)| (j.job_id.as_str(), i))
        .collect();
    for job in jobs {
        for dep in &job.deps {
            if !index.contains_key(dep.as_str()) {
                return Err(Error::InvalidConfig {
                    reason: format!("job {:?} depends on unknown job {dep:?}", job.job_id),
                });
            }
        }
    }

    let mut state = vec![State::Pending; jobs.len()];
    let mut records: Vec<Option<JobRecord>> = vec![None; jobs.len()];
    let (tx, rx) = mpsc::channel::<(usize, Result<Vec<std::path::PathBuf>>)>();

    thread::scope(|scope| {
        let mut running = 0usize;
        loop {
            // Mark as skipped anything whose dependencies can no longer succeed.
            for i in 0..jobs.len() {
                if state[i] == State::Pending
                    && jobs[i]
                        .deps
                        .iter()
                        .any(|d| matches!(state[index[d.as_str()]], State::Failed | State::Skipped))
                {
                    state[i] = State::Skipped;
                    records[i] = Some(JobRecord {
                        job_id: jobs[i].job_id.clone(),
                        status: JobStatus::Skipped,
                        error: Some("dependency failed".into()),
                        outputs: Vec::new(),
                    });
                }
            }

            // Launch every ready job while capacity remains.
            while running < workers {
                let ready = (0..jobs.len()).find(|&i| {
                    state[i] == State::Pending
                        && jobs[i]
                            .deps
                            .iter()
                            .all(|d| state[index[d.as_str()]] == State::Ok)
                });
                let Some(i) = ready else { break };
                state[i] = State::Running;
                running += 1;
                let tx = tx.clone();
                let job = &jobs[i];
                scope.spawn(move || {
                    let result = run_job(job, config);
                    // The receiver outlives every sender inside the scope.
                    let _ = tx.send((i, result));
                });
            }

            if running == 0 {
                break;
            }

            let (i, result) = rx.recv().expect("worker channel open");
            running -= 1;
            match result {
                Ok(outputs) => {
                    state[i] = State::Ok;
                    records[i] = Some(JobRecord {
                        job_id: jobs[i].job_id.clone(),
                        status: JobStatus::Ok,
                        error: None,
                        outputs,
                    });
                }
                Err(e) => {
                    state[i] = State::Failed;
                    records[i] = Some(JobRecord {
                        job_id: jobs[i].job_id.clone(),
                        status: JobStatus::Failed,
                        error: Some(e.to_string()),
                        outputs: Vec::new(),
                    });
                }
            }
        }
    });

    // Anything still unrecorded was unschedulable (cyclic deps).
    let mut out: Vec<JobRecord> = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|| JobRecord {
                job_id: jobs[i].job_id.clone(),
                status: JobStatus::Skipped,
                error: Some("unschedulable".into()),
                outputs: Vec::new(),
            })
        })
        .collect();
    out.sort_by(|a, b| a.job_id.cmp(&b.job_id));
    Ok(out)
}
