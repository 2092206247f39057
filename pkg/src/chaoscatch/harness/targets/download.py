"""
A toy download client, the batch task among the demo targets. It parses a
manifest, asks a tracker for peers, connects to one, fetches the chunks and
verifies them before writing the file. Each step is protected by a recovery
block built to land in a known category:

- ``Mirror/fetch_chunk`` falls back to a backup mirror serving the same bytes
  (resilient)
- ``Manifest/parse`` aborts with a log line and an error message on a bad
  manifest (observable, debuggable) and uses the built-in defaults when a
  field is missing (resilient)
- ``Tracker/announce`` swallows the timeout and waits for peers forever
  (silent)
- ``PeerLink/connect`` logs the refusal and waits for a link forever
  (debuggable, silent once the ``v2`` variant dropped the log call)
- ``Piece/verify_all`` falls back to a much slower verification
  (debuggable through its CPU usage)
"""

import hashlib
import sys
import time
from pathlib import Path

import click

from .common import Instrumentation, setup_logging

CHUNK_SIZE = 4096
SLOW_VERIFY_CPU_SECONDS = 1.2
WAIT_STEP = 0.1
ARTIFACT = "download.bin"

DEFAULT_CHUNKS = 16
DEFAULT_MANIFEST = {
    "name": "sample.iso",
    "chunks": DEFAULT_CHUNKS,
    "seed": "chaoscatch",
}

logger = setup_logging("demo.download")
inst = Instrumentation()


def register_points() -> None:
    """Declares the recovery arms, in the order the client reaches them"""

    inst.register("manifest-value", "Manifest", "parse", "ValueError", 0)
    inst.register("manifest-key", "Manifest", "parse", "KeyError", 1)
    inst.register("announce", "Tracker", "announce", "TimeoutError")
    inst.register("connect", "PeerLink", "connect", "ConnectionRefusedError")
    inst.register("mirror", "Mirror", "fetch_chunk", "ConnectionError")
    inst.register("verify", "Piece", "verify_all", "MemoryError")


def manifest_text(chunks: int) -> str:
    """The manifest of the sample file"""
    return f"name=sample.iso\nchunks={chunks}\nseed=chaoscatch\n"


def chunk_bytes(seed: str, n: int) -> bytes:
    """Content of chunk `n`, the same from every mirror"""

    return b"".join(
        hashlib.sha256(f"{seed}:{n}:{i}".encode()).digest()
        for i in range(CHUNK_SIZE // 32)
    )


def parse_manifest(text: str) -> dict:
    """Reads the manifest, exits when it is invalid"""

    try:
        inst.enter("manifest-value", "manifest-key")
        inst.probe("Manifest/parse")
        fields = dict(line.split("=", 1) for line in text.splitlines() if line)
        return {
            "name": fields["name"],
            "chunks": int(fields["chunks"]),
            "seed": fields["seed"],
        }
    except ValueError as e:
        logger.error("Invalid manifest: %s", e)
        click.echo(f"error: invalid manifest ({e})", err=True)
        sys.exit(2)
    except KeyError:
        return dict(DEFAULT_MANIFEST)


def announce(manifest: dict) -> list[str]:
    """Peers sharing the file"""

    try:
        inst.enter("announce")
        inst.probe("Tracker/announce")
        peers = [f"{manifest['name']}-peer-{i}" for i in range(3)]
    except TimeoutError:
        peers = []

    return peers


def connect(peers: list[str], variant: str) -> str | None:
    """Opens a link to the first peer"""

    try:
        inst.enter("connect")
        inst.probe("PeerLink/connect")
        return peers[0]
    except ConnectionRefusedError as e:
        if variant != "v2":
            logger.warning("Peer %s refused the connection: %s", peers[0], e)
        return None


def fetch_chunk(manifest: dict, n: int) -> bytes:
    """Downloads one chunk"""

    try:
        inst.enter("mirror")
        inst.probe("Mirror/fetch_chunk")
        return chunk_bytes(manifest["seed"], n)
    except ConnectionError:
        return backup_mirror(manifest, n)


def backup_mirror(manifest: dict, n: int) -> bytes:
    """Second source for the chunks"""
    return chunk_bytes(manifest["seed"], n)


def verify_all(manifest: dict, chunks: list[bytes]) -> bool:
    """Checks every chunk against its expected digest"""

    expected = [
        hashlib.sha256(chunk_bytes(manifest["seed"], n)).hexdigest()
        for n in range(manifest["chunks"])
    ]

    try:
        inst.enter("verify")
        inst.probe("Piece/verify_all")
        digests = [hashlib.sha256(c).hexdigest() for c in chunks]
    except MemoryError:
        digests = slow_verify(chunks)

    return digests == expected


def slow_verify(chunks: list[bytes]) -> list[str]:
    """Verification with a tiny memory footprint, and a large CPU one"""

    start = time.process_time()
    digests: list[str] = []

    while time.process_time() - start < SLOW_VERIFY_CPU_SECONDS:
        digests = []
        for chunk in chunks:
            h = hashlib.sha256()
            for i in range(0, len(chunk), 64):
                h.update(chunk[i : i + 64])
            digests.append(h.hexdigest())

    return digests


def wait_for(condition, what: str, run_dir: Path) -> None:
    """Blocks until `condition()` holds. There is no timeout."""

    logger.debug("Waiting for %s", what)
    inst.dump_probes(run_dir)

    while not condition():
        time.sleep(WAIT_STEP)


@click.command()
@click.option(
    "--run-dir",
    type=click.Path(file_okay=False, path_type=Path),
    required=True,
    help="Where to write the downloaded file",
)
@click.option(
    "--variant",
    envvar="CHAOS_DEMO_VARIANT",
    default="v1",
    help="v2 is the same client with one log call less",
)
@click.option(
    "--chunks",
    envvar="CHAOS_DEMO_CHUNKS",
    type=click.IntRange(min=1),
    default=DEFAULT_CHUNKS,
    help="Size of the file, in chunks",
)
def main(run_dir: Path, variant: str, chunks: int):
    """Downloads the sample file"""

    inst.attach()
    register_points()
    inst.ready()

    try:
        manifest = parse_manifest(manifest_text(chunks))

        peers = announce(manifest)
        wait_for(lambda: peers, "peers", run_dir)

        link = connect(peers, variant)
        wait_for(lambda: link, "a peer link", run_dir)

        chunks = [fetch_chunk(manifest, n) for n in range(manifest["chunks"])]

        if not verify_all(manifest, chunks):
            click.echo("error: corrupted download", err=True)
            sys.exit(1)

        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / ARTIFACT).write_bytes(b"".join(chunks))
        click.echo(f"downloaded {manifest['name']}: {CHUNK_SIZE * len(chunks)} bytes")
    finally:
        inst.dump_probes(run_dir)


if __name__ == "__main__":
    main()
