import logging
import signal
from concurrent.futures import CancelledError, Future, ThreadPoolExecutor
from typing import Callable, Iterable, List, Set, TypeVar

from .utils import get_thread_limit

logger = logging.getLogger(__name__)

T = TypeVar("T")


class TaskManager:
    """
    A class that runs blocking callables on a thread pool keeping track of
    those that are running. The tasks can be cancelled, and actually they
    are cancelled when one of ``cancel_on_signals`` is received.

    Note that cancelled work raises ``CancelledError`` in the caller.
    Any work submitted after receiving the cancelling order raises
    ``CancelledError`` too.

    Results are always returned in submission order, so the outcome of
    :meth:`map` does not depend on the number of workers.

    Example usage::

        manager = TaskManager(max_workers=4)
        values = manager.map(objective, candidates)

        manager.cancel_all()
    """

    def __init__(self, max_workers: int = None, cancel_on_signals=()):
        self.max_workers = max_workers or get_thread_limit()
        self.running_tasks: Set[Future] = set()
        self.cancelled = False
        for sig in cancel_on_signals:
            self._install_signal_handler(sig)

    def _install_signal_handler(self, sig):
        """Installs the signal handler for cancellation, respecting existing handler"""
        old_handler = signal.getsignal(sig)

        def new_handler(*args, **kwargs):
            # Invoke old handler if any
            exception = None
            if callable(old_handler):
                try:
                    old_handler(*args, **kwargs)
                except BaseException as e:
                    exception = e
            self._cancel_on_signal(*args, **kwargs)
            if exception:
                raise exception

        signal.signal(sig, new_handler)

    def map(self, fn: Callable[..., T], items: Iterable) -> List[T]:
        """Run ``fn`` over ``items`` and return the results in order"""
        items = list(items)
        if self.cancelled:
            raise CancelledError()
        if self.max_workers == 1 or len(items) <= 1:
            results = []
            for item in items:
                if self.cancelled:
                    raise CancelledError()
                results.append(fn(item))
            return results

        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = [executor.submit(fn, item) for item in items]
            self.running_tasks.update(futures)
            try:
                # This avoids a potential race condition
                if self.cancelled:
                    raise CancelledError()
                return [future.result() for future in futures]
            finally:
                for future in futures:
                    future.cancel()
                    self.running_tasks.discard(future)

    def _cancel_on_signal(self, sig, frame):
        logger.info(
            f"Received {signal.Signals(sig).name}. Cancelling {len(self.running_tasks)} running tasks"
        )
        self.cancel_all()

    def cancel_all(self):
        """
        Cancel all pending tasks and any future submitted task. Tasks
        already executing run to completion because threads cannot be
        interrupted.
        """
        self.cancelled = True
        for task in list(self.running_tasks):
            task.cancel()

    def __len__(self):
        return len(self.running_tasks)
