import json
import threading
import urllib.error
import urllib.request

import pytest
from hypothesis import given
from hypothesis import strategies as st

from dspscale import ENTRY, EntryPointSpec, Gateway, Param, Runtime, restore
from dspscale.errors import DuplicateEntryPoint, UnknownArchetype, UnknownEntryPoint, ValidationError, WalkerFault
from dspscale.gateway import STEPS
from dspscale.scenarios import SCENARIOS
from dspscale.server import serve


def counter_gateway():
    return SCENARIOS["counter"].program()


def test_register_and_list():
    gw = counter_gateway()
    assert "incr" in gw.entrypoints()
    with pytest.raises(DuplicateEntryPoint):
        gw.entrypoint("incr")
    with pytest.raises(UnknownArchetype):
        gw.register_entrypoint(EntryPointSpec("bad", "incr", (Param("x", prop="nope"),)))
    with pytest.raises(UnknownArchetype):
        gw.entrypoint("ghost")


def test_counter_counts_and_survives_restore(tmp_path):
    gw = counter_gateway()
    assert gw.invoke("alice", "incr") == {"count": 1}
    gw.snapshot(tmp_path / "img.json")
    fresh = counter_gateway()
    restore(fresh.runtime, tmp_path / "img.json")
    assert fresh.invoke("alice", "incr") == {"count": 2}


def test_users_do_not_share_counters():
    gw = counter_gateway()
    assert gw.invoke("alice", "incr") == {"count": 1}
    assert gw.invoke("bob", "incr") == {"count": 1}


def test_trace_order_and_param_mapping():
    gw = counter_gateway()
    inv = gw.call("alice", "incr", {"amount": 5})
    assert tuple(inv.trace) == STEPS
    assert inv.result == {"count": 5}
    assert inv.path[0] == gw.runtime.root_of("alice")
    # finished walkers are not kept around
    assert gw.runtime.walkers == {}


def test_validation_names_parameters():
    rt = Runtime()
    rt.walker_archetype("greet", {"name": "", "times": 1, "ratio": 0.0})
    gw = Gateway(rt)
    gw.entrypoint(
        "greet",
        params=[
            Param("name", type="str"),
            Param("times", type="int", required=False, validator=lambda n: n > 0),
            Param("ratio", type="float", required=False),
        ],
    )
    with pytest.raises(ValidationError) as info:
        gw.invoke("u", "greet", {})
    assert info.value.errors == {"name": "required parameter missing"}
    with pytest.raises(ValidationError) as info:
        gw.invoke("u", "greet", {"name": 3, "times": 0, "extra": 1})
    assert set(info.value.errors) == {"name", "times", "extra"}
    assert gw.validate("greet", {"name": "x", "ratio": 2}) == {"name": "x", "ratio": 2.0}
    with pytest.raises(UnknownEntryPoint):
        gw.invoke("u", "nope")
    with pytest.raises(ValidationError):
        gw.invoke("", "greet", {"name": "x"})


def test_result_mapping_overrides_identity():
    rt = Runtime()
    rt.walker_archetype("w", {})
    rt.add_ability("w", ENTRY, lambda w, here: w.result.update(a=1, b=2))
    gw = Gateway(rt)
    gw.entrypoint("all", walker="w")
    gw.entrypoint("some", walker="w", results=[("a", "alpha")])
    assert gw.invoke("u", "all") == {"a": 1, "b": 2}
    assert gw.invoke("u", "some") == {"alpha": 1}


def test_walker_fault_is_recorded():
    rt = Runtime()
    rt.walker_archetype("w", {})

    def fail(w, here):
        raise RuntimeError("nope")

    rt.add_ability("w", ENTRY, fail)
    gw = Gateway(rt)
    gw.entrypoint("w")
    with pytest.raises(WalkerFault):
        gw.call("u", "w")
    inv = gw.log[-1]
    assert isinstance(inv.error, WalkerFault)
    assert inv.result is None
    assert inv.trace == ["instantiate", "map-params", "spawn-at-root"]


def test_concurrent_users_are_isolated():
    gw = counter_gateway()
    users = [f"u{i}" for i in range(6)]
    per_user = 15
    results = {u: [] for u in users}

    def work(u):
        for _ in range(per_user):
            results[u].append(gw.invoke(u, "incr")["count"])

    threads = [threading.Thread(target=work, args=(u,)) for u in users]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(results[u] == list(range(1, per_user + 1)) for u in users)


def test_same_user_is_serialized():
    gw = counter_gateway()
    out = []

    def work():
        for _ in range(20):
            out.append(gw.invoke("alice", "incr")["count"])

    threads = [threading.Thread(target=work) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(out) == list(range(1, 81))


def test_snapshot_waits_for_quiescence(tmp_path):
    rt = Runtime()
    rt.walker_archetype("slow", {})
    gate, entered = threading.Event(), threading.Event()

    def block(w, here):
        entered.set()
        gate.wait(5)

    rt.add_ability("slow", ENTRY, block)
    gw = Gateway(rt)
    gw.entrypoint("slow")
    t = threading.Thread(target=gw.invoke, args=("u", "slow"))
    t.start()
    entered.wait(5)
    done = threading.Event()
    s = threading.Thread(target=lambda: (gw.snapshot(tmp_path / "img.json"), done.set()))
    s.start()
    assert not done.wait(0.2)
    gate.set()
    t.join()
    s.join()
    assert done.is_set()


# -- HTTP ---------------------------------------------------------------------


def _post(url, user=None, body=b"{}"):
    req = urllib.request.Request(url, data=body, method="POST")
    if user:
        req.add_header("X-User", user)
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def _get(url):
    with urllib.request.urlopen(url, timeout=5) as resp:
        return resp.status, json.loads(resp.read())


@pytest.fixture
def service(tmp_path):
    gw = counter_gateway()
    rt = gw.runtime
    rt.walker_archetype("grab", {"target": ""})
    rt.walker_archetype("crash", {})
    rt.add_ability("grab", ENTRY, lambda w, here: here.connect(w["target"]))

    def crash(w, here):
        raise KeyError("boom")

    rt.add_ability("crash", ENTRY, crash)
    gw.entrypoint("grab", params=[Param("target", type="str")])
    gw.entrypoint("crash")
    with serve(gw, persist=tmp_path / "live.json") as handle:
        yield handle, gw


def test_http_invoke(service, tmp_path):
    handle, gw = service
    assert _post(handle.url + "/walker/incr", "alice") == (200, {"count": 1})
    assert _post(handle.url + "/walker/incr", "alice", b'{"amount": 2}') == (200, {"count": 3})
    assert (tmp_path / "live.json").exists()
    assert _get(handle.url + "/health") == (200, {"status": "ok"})
    assert _get(handle.url + "/walkers")[1]["walkers"] == ["crash", "grab", "incr"]


def test_http_errors(service):
    handle, gw = service
    assert _post(handle.url + "/walker/nope", "alice")[0] == 404
    status, body = _post(handle.url + "/walker/incr", "alice", b"{not json")
    assert status == 400 and "<body>" in body["detail"]
    status, body = _post(handle.url + "/walker/incr", "alice", b'{"amount": "x"}')
    assert status == 400 and "amount" in body["detail"]
    assert _post(handle.url + "/walker/incr", None)[0] == 400
    bob_root = gw.runtime.resolve_root("bob")
    status, body = _post(handle.url + "/walker/grab", "alice", json.dumps({"target": bob_root}).encode())
    assert status == 409
    status, body = _post(handle.url + "/walker/crash", "alice")
    assert status == 500 and len(body["trace_id"]) == 32


@given(st.lists(st.sampled_from(["alice", "bob"]), max_size=6), st.integers(0, 3))
def test_wire_adds_nothing(users, amount):
    served, direct = counter_gateway(), counter_gateway()
    with serve(served) as handle:
        for u in users:
            body = json.dumps({"amount": amount}).encode()
            status, payload = _post(handle.url + "/walker/incr", u, body)
            assert status == 200
            assert payload == direct.invoke(u, "incr", {"amount": amount})
