import sys
import queue
import logging
import threading

from aloha_mpr import config

logger = logging.getLogger(__name__)

_STOP = object()


def _worker(job_queue, results, errors, fn):
    while True:
        item = job_queue.get()
        try:
            if item is _STOP:
                return
            index, args = item
            try:
                results[index] = fn(*args)
            except Exception as e:
                logger.error(f"[Pool] job {index} failed: {e}", exc_info=True)
                errors[index] = e
        finally:
            job_queue.task_done()


def run_pool(fn, jobs, threads=None, label="Pool", progress=False):
    """Run fn(*args) for every args tuple in jobs on a thread pool.

    Results come back in job order. The first job error is re-raised once every
    job has finished.
    """
    jobs = list(jobs)
    threads = max(1, min(threads or config.WORKER_THREADS, len(jobs) or 1))
    results = [None] * len(jobs)
    errors = {}

    if threads == 1:
        for index, args in enumerate(jobs):
            results[index] = fn(*args)
        return results

    job_queue = queue.Queue()
    pool = []
    for i in range(threads):
        t = threading.Thread(target=_worker, args=(job_queue, results, errors, fn), name=f"{label}-{i}", daemon=True)
        t.start()
        pool.append(t)

    for index, args in enumerate(jobs):
        job_queue.put((index, args))
    for _ in pool:
        job_queue.put(_STOP)

    if progress:
        total = len(jobs)
        while any(t.is_alive() for t in pool):
            done = total - job_queue.qsize()
            sys.stdout.write(f"\r [{label}] {max(done, 0):<6}/ {total:<6}")
            sys.stdout.flush()
            for t in pool:
                t.join(timeout=0.5)
        sys.stdout.write("\n")

    for t in pool:
        t.join()

    if errors:
        first = min(errors)
        raise errors[first]
    return results
