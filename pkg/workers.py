"""
Process pool over independent work units (mutants, test cases).

Work units are addressed by index. The shared inputs are installed once per worker
by the pool initializer; with the fork start method they are inherited rather than
pickled, so programs holding host-level callables (specs, doubles) can be shared.
Results come back in unit order, so parallel and serial runs agree.
"""
import multiprocessing as mp
import os
import sys
from typing import Any, Callable, List, Optional

_STATE: Any = None
_WORKER: Optional[Callable] = None


def _init_worker(worker_fn: Callable, state: Any):
    global _STATE, _WORKER
    _STATE = state
    _WORKER = worker_fn


def _run_unit(index: int):
    return _WORKER(_STATE, index)


def default_jobs() -> int:
    return max(1, (os.cpu_count() or 1) - 1)


def parallel_map(worker_fn: Callable[[Any, int], Any], num_units: int, jobs: int = 1,
                 state: Any = None, progress: Optional[Callable[[int, Any], None]] = None) -> List[Any]:
    """
    Evaluate worker_fn(state, i) for i in range(num_units).

    Runs serially when jobs <= 1, when there is at most one unit, or where fork is
    unavailable. `progress(i, result)` is called in unit order as results arrive.
    """
    if jobs <= 1 or num_units <= 1 or sys.platform == "win32":
        results = []
        for i in range(num_units):
            result = worker_fn(state, i)
            if progress is not None:
                progress(i, result)
            results.append(result)
        return results

    ctx = mp.get_context("fork")
    with ctx.Pool(processes=min(jobs, num_units), initializer=_init_worker, initargs=(worker_fn, state)) as pool:
        results = []
        for i, result in enumerate(pool.imap(_run_unit, range(num_units))):
            if progress is not None:
                progress(i, result)
            results.append(result)
    return results
