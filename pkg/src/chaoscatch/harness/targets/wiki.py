"""
A toy wiki, the request/response service among the demo targets. Its
recovery blocks are built to land in known categories:

- ``PageCache/lookup`` reads the page from the store on a cache failure
  (resilient)
- ``MacroRenderer/render`` logs the failure and serves a 500 (observable,
  debuggable)
- ``SessionAuth/authenticate`` redirects to the login page without a word
  (observable)
- ``Sidebar/render`` serves the page without its sidebar (silent)
- ``IndexWorker/take`` logs and retries later, nobody notices (resilient,
  debuggable)
- ``PriceService/options`` serves the fallback catalog, same items in
  another order (resilient for a structured comparison only)
"""

import asyncio
import hashlib
import signal
from collections import deque
from collections.abc import AsyncIterator
from pathlib import Path

import click
from aiohttp import web

from ..trace import TraceRequest
from .common import Instrumentation, setup_logging

INDEX_PERIOD = 0.05

PAGES = {
    "home": "Welcome to the {{wiki}}. See {{link:about}}.",
    "about": "The {{wiki}} is written by its readers.",
    "faq": "Q: Is the {{wiki}} up? A: {{status}}.",
}

SIDEBAR = ["home", "about", "faq"]

CATALOG = [
    {"plan": "basic", "eur": 5},
    {"plan": "pro", "eur": 12},
    {"plan": "team", "eur": 30},
]

logger = setup_logging("demo.wiki")
inst = Instrumentation()


def register_points() -> None:
    """Declares the recovery arms"""

    inst.register("cache", "PageCache", "lookup", "KeyError")
    inst.register("render", "MacroRenderer", "render", "RuntimeError")
    inst.register("auth", "SessionAuth", "authenticate", "PermissionError")
    inst.register("sidebar", "Sidebar", "render", "LookupError")
    inst.register("index", "IndexWorker", "take", "InterruptedError")
    inst.register("prices", "PriceService", "options", "KeyError")


def demo_trace_requests() -> list[TraceRequest]:
    """The scripted session a trace of this wiki is recorded from"""

    return [
        TraceRequest(path="/page/home"),
        TraceRequest(path="/page/about"),
        TraceRequest(path="/login?user=alice"),
        TraceRequest(path="/prices"),
        TraceRequest(path="/page/faq"),
    ]


class Wiki:
    """State of the wiki: a page cache in front of the store, an index queue"""

    def __init__(self):
        self.cache = dict(PAGES)
        self.index_queue: deque[str] = deque()
        self.indexed: set[str] = set()

    def lookup(self, name: str) -> str:
        """Page source, from the cache if possible"""

        try:
            inst.enter("cache")
            inst.probe("PageCache/lookup")
            return self.cache[name]
        except KeyError:
            return PAGES[name]

    def render(self, source: str) -> str:
        """Expands the macros of a page"""

        inst.enter("render")
        inst.probe("MacroRenderer/render")

        html = source.replace("{{wiki}}", "<b>wiki</b>")
        html = html.replace("{{status}}", "yes")
        for name in PAGES:
            link = f'<a href="/page/{name}">{name}</a>'
            html = html.replace(f"{{{{link:{name}}}}}", link)
        return f"<p>{html}</p>"

    def sidebar(self) -> list[str]:
        """Links of the sidebar"""

        try:
            inst.enter("sidebar")
            inst.probe("Sidebar/render")
            return list(SIDEBAR)
        except LookupError:
            return []

    def take(self) -> None:
        """Indexes the next queued page"""

        try:
            inst.enter("index")
            inst.probe("IndexWorker/take")
            if self.index_queue:
                self.indexed.add(self.index_queue.popleft())
        except InterruptedError as e:
            logger.warning("Index worker interrupted, will retry: %s", e)


def authenticate(user: str) -> str:
    """Opens a session"""

    inst.enter("auth")
    inst.probe("SessionAuth/authenticate")
    return "s-" + hashlib.sha256(user.encode()).hexdigest()[:12]


def price_options() -> list[dict]:
    """The plans on sale"""

    try:
        inst.enter("prices")
        inst.probe("PriceService/options")
        return [dict(item) for item in CATALOG]
    except KeyError:
        return [dict(item) for item in reversed(CATALOG)]


def make_app(wiki: Wiki) -> web.Application:
    """The web application"""

    async def health(_: web.Request) -> web.Response:
        return web.Response(text="ok")

    async def page(request: web.Request) -> web.Response:
        name = request.match_info["name"]

        if name not in PAGES:
            raise web.HTTPNotFound

        wiki.index_queue.append(name)
        source = wiki.lookup(name)

        try:
            html = wiki.render(source)
        except RuntimeError:
            logger.exception("Could not render page %s", name)
            return web.json_response({"error": "rendering failed"}, status=500)

        return web.json_response(
            {"title": name.title(), "html": html, "sidebar": wiki.sidebar()}
        )

    async def login(request: web.Request) -> web.Response:
        user = request.query.get("user", "")

        try:
            session = authenticate(user)
        except PermissionError:
            raise web.HTTPFound("/login-failed") from None

        return web.json_response({"user": user, "session": session})

    async def prices(_: web.Request) -> web.Response:
        return web.json_response({"options": price_options()})

    async def index_worker(_: web.Application) -> AsyncIterator[None]:
        async def work():
            while True:
                wiki.take()
                await asyncio.sleep(INDEX_PERIOD)

        task = asyncio.create_task(work())
        yield
        task.cancel()

    app = web.Application()
    app.router.add_get("/health", health)
    app.router.add_get("/page/{name}", page)
    app.router.add_get("/login", login)
    app.router.add_get("/prices", prices)
    app.cleanup_ctx.append(index_worker)

    return app


async def serve(port: int) -> None:
    """Serves until SIGTERM or SIGINT"""

    runner = web.AppRunner(make_app(Wiki()), access_log=None)
    await runner.setup()

    site = web.TCPSite(runner, "127.0.0.1", port)
    await site.start()

    stop = asyncio.Event()
    loop = asyncio.get_running_loop()

    for sig in (signal.SIGTERM, signal.SIGINT):
        loop.add_signal_handler(sig, stop.set)

    try:
        await stop.wait()
    finally:
        await runner.cleanup()


@click.command()
@click.option("--port", type=int, required=True, help="Port to listen on")
@click.option(
    "--run-dir",
    type=click.Path(file_okay=False, path_type=Path),
    default=None,
    help="Where to leave the probe counters",
)
def main(port: int, run_dir: Path | None):
    """Runs the wiki"""

    inst.attach()
    register_points()
    inst.ready()

    try:
        asyncio.run(serve(port))
    finally:
        inst.dump_probes(run_dir)


if __name__ == "__main__":
    main()
