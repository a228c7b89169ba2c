import pytest
from fastapi.testclient import TestClient

from divtrace_sidecar import SidecarConfig, create_app

# small dims and tight token limits so fuzzing is fast and truncation
# paths are actually exercised
FUZZ_REGISTRY = {
    "text-embed": "builtin:hash-embed-16",
    "code-embed": "builtin:hash-embed-24@6",
    "nli-small": "builtin:overlap-nli@8",
}

EMBED_DIMS = {"text-embed": 16, "code-embed": 24}


@pytest.fixture(scope="module")
def fuzz_config():
    return SidecarConfig(registry=dict(FUZZ_REGISTRY), max_batch=16)


@pytest.fixture(scope="module")
def client(fuzz_config):
    with TestClient(create_app(fuzz_config)) as c:
        yield c
