use std::env;

/// `false` when `STAIN_NO_PARALLEL=1` is set in the environment, and always
/// on wasm32, which has no threads.
pub fn parallelism_enabled() -> bool {
    !cfg!(target_arch = "wasm32") && !matches!(env::var("STAIN_NO_PARALLEL").as_deref(), Ok("1"))
}

/// Apply `f` to each chunk of `out`, in parallel unless disabled.
pub(crate) fn for_each_chunk<F>(out: &mut [f64], chunk: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Send + Sync,
{
    use rayon::prelude::*;
    if chunk == 0 {
        return;
    }
    if parallelism_enabled() {
        out.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    } else {
        out.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    }
}
