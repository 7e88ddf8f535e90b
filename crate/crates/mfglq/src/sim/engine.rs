//! Scenario-batch execution. Scenarios are independent pure functions of
//! their index; results are collected in index order and reduced
//! deterministically, so parallel and sequential execution produce bitwise
//! identical output.

/// Execution mode for scenario batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Rayon data-parallel over scenarios (falls back to sequential when the
    /// `parallel` feature is disabled).
    Parallel,
}

impl Execution {
    /// Parallel when compiled in, sequential otherwise.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Ok(v) = std::env::var("MFGLQ_THREADS") {
            if let Ok(n) = v.parse::<usize>() {
                if n >= 1 {
                    builder = builder.num_threads(n);
                }
            }
        }
        builder.build().expect("scenario thread pool")
    })
}

/// Map `f` over scenario indices `0..count`, returning results in index
/// order.
pub fn run_scenarios<T, F>(count: u64, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if exec == Execution::Parallel {
            use rayon::prelude::*;
            return pool().install(|| (0..count).into_par_iter().map(&f).collect());
        }
    }
    let _ = exec;
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_scenario_index() {
        let out = run_scenarios(8, Execution::auto(), |s| s * s);
        assert_eq!(out, vec![0, 1, 4, 9, 16, 25, 36, 49]);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        let work = |s: u64| {
            let mut acc = 0.0f64;
            for i in 0..100 {
                acc += ((s as f64) + i as f64 * 0.1).sin();
            }
            acc
        };
        let seq = run_scenarios(32, Execution::Sequential, work);
        let par = run_scenarios(32, Execution::Parallel, work);
        let seq_bits: Vec<u64> = seq.iter().map(|v| v.to_bits()).collect();
        let par_bits: Vec<u64> = par.iter().map(|v| v.to_bits()).collect();
        assert_eq!(seq_bits, par_bits);
    }
}
