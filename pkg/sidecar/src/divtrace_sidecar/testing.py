"""Test support: serve an app on an ephemeral port in a daemon thread."""
from __future__ import annotations

import threading
import time
from contextlib import contextmanager

import uvicorn


@contextmanager
def run_server(app, host: str = "127.0.0.1"):
    """Yield the base URL of a live server for the given ASGI app.

    Binds port 0 and reads the chosen port back from the socket, so
    parallel test runs never collide. The server thread is shut down on
    exit.
    """
    config = uvicorn.Config(app, host=host, port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    while not server.started:
        if not thread.is_alive():
            raise RuntimeError("server thread exited before startup")
        if time.monotonic() > deadline:
            server.should_exit = True
            raise RuntimeError("server did not start within 15s")
        time.sleep(0.01)
    try:
        port = server.servers[0].sockets[0].getsockname()[1]
        yield f"http://{host}:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=15.0)
