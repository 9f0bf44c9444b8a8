import pytest
from fastapi.testclient import TestClient

from app.main import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    r = client.get("/health")
    assert r.status_code == 200
    body = r.json()
    assert body["status"] == "ok"
    assert body["benchmarks"] == 3


def test_list_benchmarks(client):
    names = [b["name"] for b in client.get("/benchmarks").json()["benchmarks"]]
    assert names == ["control", "harvest", "warp"]


def test_benchmark_detail(client):
    body = client.get("/benchmarks/harvest").json()
    assert body["actions"] == ["exchange_usdt_usdc", "exchange_usdc_usdt", "deposit", "withdraw"]
    assert len(body["action_specs"]) == 4


@pytest.mark.parametrize("name", ["nope", "..%2Fconfig"])
def test_unknown_benchmark(client, name):
    assert client.get(f"/benchmarks/{name}").status_code == 404


def test_replay(client, harvest):
    body = client.post("/benchmarks/harvest/replay").json()
    assert body["reverted"] is False
    assert body["executed_prefix"] == 4
    assert body["usd_profit"] == pytest.approx(float(harvest.ground_truth_profit))


def test_replay_without_ground_truth(client):
    assert client.post("/benchmarks/control/replay").status_code == 404


def _ground_truth_body():
    return {
        "benchmark": "harvest",
        "actions": [
            {"id": "exchange_usdt_usdc", "params": ["15_000_000e6"]},
            {"id": "deposit", "params": ["45_000_000e6"]},
            {"id": "exchange_usdc_usdt", "params": ["15_000_000e6"]},
            {"id": "withdraw", "params": ["51_000_000e6"]},
        ],
    }


def test_validate_ground_truth(client):
    r = client.post("/validate", json=_ground_truth_body())
    assert r.status_code == 200
    assert r.json()["status"] == "validated"


def test_validate_with_an_overestimate(client):
    body = {**_ground_truth_body(), "estimated_profit": "1000000000"}
    assert client.post("/validate", json=body).json()["status"] == "counterexample"


def test_validate_unknown_action(client):
    body = {"benchmark": "harvest", "actions": [{"id": "rug", "params": []}]}
    assert client.post("/validate", json=body).status_code == 422


def test_validate_wrong_arity(client):
    body = {"benchmark": "harvest", "actions": [{"id": "deposit", "params": []}]}
    r = client.post("/validate", json=body)
    assert r.status_code == 422
    assert "expected 1 parameters" in r.json()["detail"]
