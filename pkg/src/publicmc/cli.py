"""Service entry point: load configuration, start the cluster core, the
periodic tick and the HTTP server.  SIGHUP reloads the whitelist."""

from __future__ import annotations

import argparse
import signal
import threading

from .api import create_app
from .cluster import Cluster
from .config import ENV_CONFIG, load_config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="publicmc",
        description="Guarded public-cluster service for parallel Monte "
                    "Carlo jobs.")
    parser.add_argument("--config", metavar="PATH", default=None,
                        help=f"configuration file (fallback: ${ENV_CONFIG})")
    parser.add_argument("--data-dir", metavar="PATH", default=None,
                        help="override the configured data directory")
    return parser


def start_ticker(cluster: Cluster, period_s: float) -> threading.Event:
    stop = threading.Event()

    def loop():
        while not stop.wait(period_s):
            cluster.tick()

    threading.Thread(target=loop, name="tick", daemon=True).start()
    return stop


def main(argv: list[str] | None = None) -> int:
    import uvicorn

    args = build_parser().parse_args(argv)
    cfg = load_config(args.config, data_dir=args.data_dir)
    cluster = Cluster(cfg)
    ticker_stop = start_ticker(cluster, cfg.tick_period_s)

    def on_sighup(signum, frame):
        revision = cluster.reload_whitelist()
        print(f"whitelist reloaded, revision {revision}")

    signal.signal(signal.SIGHUP, on_sighup)
    app = create_app(cluster)
    try:
        uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
    finally:
        ticker_stop.set()
        cluster.close()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
