"""Multi-view hand/object pose fitting with depth SDF and keypoint terms."""
import os

# OpenMP is thread-safe for concurrent callers; the bundled TBB may be too old
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")


def _apply_thread_cap() -> None:
    cap = os.environ.get("DEXFIT_THREADS")
    if not cap:
        return
    import numba

    numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


_apply_thread_cap()

__version__ = "0.1.0"
