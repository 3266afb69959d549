import queue
import threading
from typing import Any, Callable, Dict, Iterable, Iterator

_DONE = object()


class Prefetcher:
    """
    Runs a batch producer ahead of the training loop on a background thread.
    A single producer fills a bounded queue, so batch order (and content) is
    exactly the order of the wrapped iterable. Depth 0 runs inline.
    """

    def __init__(self, depth: int = 2):
        self.depth = max(int(depth), 0)
        self.produced = 0
        self.consumed = 0
        self.failures = 0
        self.lock = threading.Lock()

    @staticmethod
    def _put(out: "queue.Queue", item: Any, stop: threading.Event) -> bool:
        while not stop.is_set():
            try:
                out.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False

    def _produce(self, source: Iterable[Any], out: "queue.Queue", stop: threading.Event) -> None:
        try:
            for item in source:
                if not self._put(out, item, stop):
                    return
                with self.lock:
                    self.produced += 1
            self._put(out, _DONE, stop)
        except Exception as e:  # re-raised on the consumer side
            with self.lock:
                self.failures += 1
            self._put(out, e, stop)

    def iterate(self, make_source: Callable[[], Iterable[Any]]) -> Iterator[Any]:
        if self.depth == 0:
            for item in make_source():
                with self.lock:
                    self.produced += 1
                    self.consumed += 1
                yield item
            return
        out: "queue.Queue" = queue.Queue(maxsize=self.depth)
        stop = threading.Event()
        worker = threading.Thread(target=self._produce, args=(make_source(), out, stop), daemon=True)
        worker.start()
        try:
            while True:
                item = out.get()
                if item is _DONE:
                    break
                if isinstance(item, Exception):
                    raise item
                with self.lock:
                    self.consumed += 1
                yield item
        finally:
            stop.set()
            worker.join(timeout=5.0)

    def get_statistics(self) -> Dict[str, int]:
        """Current producer/consumer counters."""
        with self.lock:
            return {"produced": self.produced, "consumed": self.consumed, "failures": self.failures,
                    "depth": self.depth}
