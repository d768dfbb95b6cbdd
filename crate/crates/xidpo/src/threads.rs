//! Worker-pool sizing.
//!
//! `XI_DPO_THREADS` caps the worker count (0 or unset = automatic). Batch
//! evaluation fans out over this pool but always reduces in pair-index order,
//! so results are bitwise identical for any thread count.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        let threads = std::env::var("XI_DPO_THREADS")
            .ok()
            .and_then(|s| s.trim().parse::<usize>().ok())
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("worker pool construction failed")
    })
}
