//! Process-level tuning for the experiment binaries.

/// Keeps large activation buffers on the heap instead of fresh `mmap`s.
///
/// Training allocates and frees several ~0.5 MB matrices per step; with glibc's
/// default thresholds each of them is page-faulted in from scratch. No-op on
/// other allocators.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 64 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 256 << 20);
        libc::mallopt(libc::M_TOP_PAD, 64 << 20);
    }
}

/// Sizes the global rayon pool. Must run before any parallel work.
pub fn init_threads(threads: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| crate::Error::config(format!("cannot size thread pool: {e}")))
}
