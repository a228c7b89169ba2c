import pytest
from fastapi.testclient import TestClient

from divtrace_sidecar import SidecarConfig, create_app

from conftest import EMBED_DIMS, FUZZ_REGISTRY


def post_embed(client, texts, model="text-embed", **kwargs):
    return client.post("/v1/embed", json={"model": model, "texts": texts}, **kwargs)


def post_nli(client, pairs, model="nli-small", **kwargs):
    body = {"model": model, "pairs": [{"premise": p, "hypothesis": h} for p, h in pairs]}
    return client.post("/v1/nli", json=body, **kwargs)


class TestReadiness:
    def test_unwarmed_service_answers_503(self, fuzz_config):
        # no lifespan: the client is used without entering its context
        client = TestClient(create_app(fuzz_config))
        assert client.get("/healthz").status_code == 503
        assert client.get("/v1/models").status_code == 503
        assert post_embed(client, ["x"]).status_code == 503
        assert post_nli(client, [("a", "b")]).status_code == 503

    def test_warm_service_is_healthy(self, client):
        resp = client.get("/healthz")
        assert resp.status_code == 200
        assert resp.json()["models"] == sorted(FUZZ_REGISTRY)

    def test_unresolvable_registry_never_becomes_ready(self):
        config = SidecarConfig(registry={"broken": "hf:some-checkpoint"})
        with TestClient(create_app(config)) as client:
            health = client.get("/healthz")
            assert health.status_code == 503
            assert "unknown backend scheme" in health.json()["detail"]
            assert post_embed(client, ["x"], model="broken").status_code == 503


class TestValidation:
    def test_unknown_model_tag_is_400_naming_the_tag(self, client):
        resp = post_embed(client, ["x"], model="no-such-model")
        assert resp.status_code == 400
        assert "no-such-model" in resp.json()["detail"]

    def test_kind_mismatch_is_400(self, client):
        assert post_embed(client, ["x"], model="nli-small").status_code == 400
        assert post_nli(client, [("a", "b")], model="text-embed").status_code == 400

    def test_oversize_batch_is_413(self, client, fuzz_config):
        limit = fuzz_config.max_batch
        assert post_embed(client, ["x"] * limit).status_code == 200
        assert post_embed(client, ["x"] * (limit + 1)).status_code == 413
        assert post_nli(client, [("a", "b")] * (limit + 1)).status_code == 413

    @pytest.mark.parametrize("premise, hypothesis, side", [
        ("", "b", "premise"),
        ("   ", "b", "premise"),
        ("a", "", "hypothesis"),
        ("a", " \t ", "hypothesis"),
    ])
    def test_empty_nli_side_is_400(self, client, premise, hypothesis, side):
        resp = post_nli(client, [("ok", "ok"), (premise, hypothesis)])
        assert resp.status_code == 400
        assert f"pair 1: empty {side}" in resp.json()["detail"]

    def test_malformed_body_is_422(self, client):
        assert client.post("/v1/embed", json={"model": "text-embed"}).status_code == 422
        assert client.post("/v1/embed", json={"model": "text-embed", "texts": [1]}).status_code == 422

    def test_empty_batch_is_valid(self, client):
        resp = post_embed(client, [])
        assert resp.status_code == 200
        assert resp.json()["vectors"] == []
        assert resp.json()["truncated"] == 0


class TestEmbedding:
    def test_response_shape(self, client):
        resp = post_embed(client, ["alpha", "beta"])
        body = resp.json()
        assert body["model"] == "text-embed"
        assert body["dim"] == EMBED_DIMS["text-embed"]
        assert len(body["vectors"]) == 2
        assert all(len(row) == body["dim"] for row in body["vectors"])

    def test_identical_texts_in_one_batch_share_a_vector(self, client):
        body = post_embed(client, ["twin", "other", "twin"]).json()
        assert body["vectors"][0] == body["vectors"][2]
        assert body["vectors"][0] != body["vectors"][1]

    def test_deterministic_across_requests(self, client):
        a = post_embed(client, ["stable"]).json()["vectors"][0]
        b = post_embed(client, ["stable"]).json()["vectors"][0]
        assert a == b

    def test_truncation_counted_and_applied(self, client):
        # code-embed truncates at 6 tokens
        words = [f"w{i}" for i in range(10)]
        long = " ".join(words)
        short = " ".join(words[:6])
        body = post_embed(client, [long, short], model="code-embed").json()
        assert body["truncated"] == 1
        assert body["vectors"][0] == body["vectors"][1]


class TestNli:
    def test_wire_order_entailment_first(self, client):
        body = post_nli(client, [("A cat sits.", "A cat sits.")]).json()
        assert body["probs"][0] == pytest.approx(
            (0.8723404255319149, 0.10638297872340427, 0.021276595744680854), abs=1e-12
        )

    def test_wire_order_contradiction_last(self, client):
        # the backend's native head order puts contradiction first; the
        # service must have remapped it to the last wire column
        row = post_nli(client, [("red blue", "seven eight")]).json()["probs"][0]
        assert row.index(max(row)) == 2

    def test_truncated_sides_are_counted(self, client):
        long = " ".join(f"w{i}" for i in range(12))
        body = post_nli(client, [(long, long), (long, "short"), ("a", "b")]).json()
        assert body["truncated"] == 3


class TestModelsRoute:
    def test_lists_served_models(self, client):
        body = client.get("/v1/models").json()
        by_tag = {m["tag"]: m for m in body["models"]}
        assert sorted(by_tag) == sorted(FUZZ_REGISTRY)
        assert by_tag["text-embed"]["kind"] == "embed"
        assert by_tag["text-embed"]["dim"] == EMBED_DIMS["text-embed"]
        assert by_tag["code-embed"]["max_tokens"] == 6
        assert by_tag["nli-small"]["kind"] == "nli"
        assert by_tag["nli-small"]["dim"] is None


class TestAuth:
    def test_static_bearer_token(self):
        config = SidecarConfig(registry=dict(FUZZ_REGISTRY), bearer_token="s3cret")
        with TestClient(create_app(config)) as client:
            assert post_embed(client, ["x"]).status_code == 401
            ok = post_embed(client, ["x"], headers={"Authorization": "Bearer s3cret"})
            assert ok.status_code == 200
            # liveness probes stay unauthenticated
            assert client.get("/healthz").status_code == 200


class TestCounters:
    def test_every_request_is_counted(self, fuzz_config):
        app = create_app(fuzz_config)
        with TestClient(app) as client:
            client.get("/healthz")
            post_embed(client, ["x"])
            post_embed(client, ["y"])
            post_nli(client, [("a", "b")])
        counts = app.state.service.request_counts
        assert counts["/healthz"] == 1
        assert counts["/v1/embed"] == 2
        assert counts["/v1/nli"] == 1
        assert app.state.service.total_requests() == 4


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"registry": {}},
        {"port": -1},
        {"port": 70000},
        {"max_batch": 0},
        {"device": ""},
    ])
    def test_rejects_bad_settings(self, kwargs):
        base = {"registry": dict(FUZZ_REGISTRY)}
        base.update(kwargs)
        with pytest.raises(ValueError):
            SidecarConfig(**base)
