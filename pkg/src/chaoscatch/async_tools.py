"""
Small tools to smooth out working with asyncio, from both sides of the fence:
the controller is async from top to bottom while the agent lives inside
applications that are usually not.
"""

import asyncio
import functools
import threading
from collections.abc import Callable, Coroutine
from concurrent.futures import Future
from typing import Any


def run_sync[**P, R](fn: Callable[P, Coroutine[Any, Any, R]]) -> Callable[P, R]:
    """Runs an async function in an async loop. Can be used as a decorator."""

    @functools.wraps(fn)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        return asyncio.run(fn(*args, **kwargs))

    return wrapper


class BackgroundLoop:
    """
    An event loop running forever in a daemon thread. Synchronous code can
    schedule coroutines on it with `submit()` and get a concurrent Future
    back, which is how the agent runs its protocol server inside a host that
    knows nothing about asyncio.
    """

    def __init__(self, name: str = "chaoscatch-loop"):
        self.loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._started = threading.Event()

    def _run(self) -> None:
        asyncio.set_event_loop(self.loop)
        self.loop.call_soon(self._started.set)
        self.loop.run_forever()

    def start(self) -> "BackgroundLoop":
        """Starts the thread and waits until the loop is spinning"""
        self._thread.start()
        self._started.wait()
        return self

    def submit[R](self, coro: Coroutine[Any, Any, R]) -> Future[R]:
        """Schedules a coroutine from any thread"""
        return asyncio.run_coroutine_threadsafe(coro, self.loop)

    def call_soon(self, fn: Callable[..., Any], *args: Any) -> None:
        """Thread-safe `call_soon`, silently ignored once the loop is closed"""
        if self.loop.is_closed():
            return
        try:
            self.loop.call_soon_threadsafe(fn, *args)
        except RuntimeError:
            pass

    def stop(self, timeout: float = 2.0) -> None:
        """Stops the loop and joins the thread"""
        if not self._thread.is_alive():
            return
        self.loop.call_soon_threadsafe(self.loop.stop)
        self._thread.join(timeout)
