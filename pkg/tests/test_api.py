from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from fedbac.api import app
from fedbac.config import load_config

QUICK = load_config(Path(__file__).resolve().parents[1] / "configs" / "quick.yaml")


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


def _body(**extra):
    return {"config": QUICK.model_dump(mode="json"), **extra}


def test_health(client):
    assert client.get("/health").json()["status"] == "ok"


def test_run_then_fetch_files(client):
    resp = client.post("/runs", json=_body())
    assert resp.status_code == 200
    data = resp.json()
    assert set(data["files"]) == {"fedbac_seed0.csv", "fedbac_seed0_bandits.json"}
    assert client.get(f"/runs/{data['run_id']}").json() == data["summary"]
    csv_text = client.get(f"/runs/{data['run_id']}/files/fedbac_seed0.csv").text
    assert csv_text.startswith("round,distributed_accuracy,")
    assert client.get(f"/runs/{data['run_id']}/files/missing.csv").status_code == 404


def test_identical_requests_share_an_id(client):
    a = client.post("/runs", json=_body(seeds=[1])).json()
    b = client.post("/runs", json=_body(seeds=[1])).json()
    assert a["run_id"] == b["run_id"] and a["summary"] == b["summary"]


def test_compare_endpoint_has_deltas(client):
    data = client.post("/compare", json=_body()).json()
    assert {"delta_H_pp", "delta_I_pp"} <= set(data["summary"]["comparison"])
    assert sum(name.endswith(".csv") for name in data["files"]) == 3


def test_sweep_endpoint(client):
    data = client.post("/sweeps", json=_body(axis="participation", values=[0.7, 1.0])).json()
    assert len(data["summary"]["table"]) == 2
    nested = next(n for n in data["files"] if n.endswith(".csv"))
    assert client.get(f"/runs/{data['run_id']}/files/{nested}").status_code == 200


@pytest.mark.parametrize(
    "path,body",
    [
        ("/sweeps", {"axis": "participation", "values": []}),
        ("/sweeps", {"axis": "nope", "values": [1.0]}),
        ("/runs", {"config": {"methods": [{"name": "hierfavg", "participation": 0.5}]}}),
        ("/runs", {"config": {"unknown": 1}}),
    ],
)
def test_invalid_requests_are_422(client, path, body):
    payload = {"config": QUICK.model_dump(mode="json"), **body} if "config" not in body else body
    assert client.post(path, json=payload).status_code == 422


def test_unknown_run_is_404(client):
    assert client.get("/runs/deadbeef").status_code == 404


def test_partition_manifest(client):
    data = client.post("/partitions", json={"config": QUICK.model_dump(mode="json"), "seed": 2}).json()
    assert len(data["servers"]) == 2
    total = sum(c["n"] for s in data["servers"] for c in s["clients"])
    total += sum(s["n_test"] for s in data["servers"])
    assert total == 4 * 60
