import dataclasses
import math

import numpy as np
import pytest

from anfr.autodiff import ops
from anfr.data import gen_colorshift, make_shard, standardize_inputs, train_test_split
from anfr.errors import ConfigError, ShapeError, TrainingError
from anfr.fed import FedConfig, ServerState, aggregate, personalization_filter, run_federation, weighted_mean
from anfr.fed.aggregate import personal_names
from anfr.fed.simulation import ClientState, batch_indices, local_train
from anfr.nn import Linear, ModelSpec, build_model
from anfr.optim import SGD, lr_at

RNG = np.random.default_rng(2024)


def tiny_spec(arch="anfr"):
    return ModelSpec(arch, widths=(4, 8), depths=(1, 1), num_classes=4, image_size=8, groups=2, reduction=2)


@pytest.fixture(scope="module")
def world():
    ds, shards = gen_colorshift(3, 4, 24, 0.8, image_size=8, seed=0)
    ds = standardize_inputs(ds)
    split = [train_test_split(s, 0.25, 0, ds.labels) for s in shards]
    return ds, [a for a, _ in split], [b for _, b in split]


def quick_cfg(**kw):
    base = dict(rounds=2, local_steps=2, batch_size=4, lr=0.05, momentum=0.9, scheduler="cosine")
    base.update(kw)
    return FedConfig(**base)


def same_metrics(a, b):
    strip = [dataclasses.replace(m, wall_clock=0.0) for m in a.metrics]
    other = [dataclasses.replace(m, wall_clock=0.0) for m in b.metrics]
    return strip == other


def same_state(a, b):
    return a.keys() == b.keys() and all(a[k].tobytes() == b[k].tobytes() for k in a)


# -- aggregation arithmetic ---------------------------------------------------------

def test_weighted_mean_hand_example():
    out = aggregate([({"w": np.array([1.0])}, 1), ({"w": np.array([3.0])}, 3)], "fedavg",
                    ServerState({"w": np.array([0.0])}))
    assert out["w"].tolist() == [2.5]


def test_identical_updates_are_returned_exactly():
    theta = {"w": RNG.normal(size=(3, 4)), "b": RNG.normal(size=4)}
    out = aggregate([(theta, 7), (theta, 2), (theta, 11)], "fedavg", ServerState({k: v * 0 for k, v in theta.items()}))
    assert same_state(out, theta)


def test_weighted_mean_matches_brute_force_oracle():
    for _ in range(20):
        vecs = [RNG.normal(size=6) for _ in range(5)]
        sizes = RNG.integers(1, 500, 5)
        total = int(sizes.sum())
        oracle = [math.fsum(int(n) * v[j] / total for v, n in zip(vecs, sizes)) for j in range(6)]
        assert np.max(np.abs(weighted_mean(vecs, sizes) - oracle)) < 1e-12


def test_fedadam_matches_standalone_adam():
    theta = {"w": RNG.normal(size=5)}
    server = ServerState({"w": theta["w"].copy()})
    m = np.zeros(5)
    v = np.zeros(5)
    ref = theta["w"].copy()
    for _ in range(4):
        ups = [({"w": ref + RNG.normal(size=5) * 0.1}, int(n)) for n in RNG.integers(1, 10, 3)]
        total = sum(n for _, n in ups)
        mean = sum(u["w"] * (n / total) for u, n in ups)
        g = ref - mean
        m = 0.9 * m + 0.1 * g
        v = 0.99 * v + 0.01 * g ** 2
        ref = ref - 1e-2 * m / (np.sqrt(v) + 1e-3)
        aggregate(ups, "fedadam", server, server_lr=1e-2, beta1=0.9, beta2=0.99, eps=1e-3)
        np.testing.assert_allclose(server.theta["w"], ref, rtol=0, atol=1e-14)


def test_aggregate_shape_mismatch_names_parameter():
    server = ServerState({"layer.w": np.zeros(3)})
    with pytest.raises(ShapeError) as exc:
        aggregate([({"layer.w": np.zeros(4)}, 1)], "fedavg", server)
    assert "layer.w" in str(exc.value)
    with pytest.raises(ConfigError):
        aggregate([], "fedavg", server)


def test_personal_parameters_untouched_by_aggregation():
    theta = {"body": np.zeros(2), "fc.weight": np.array([1.0, 2.0])}
    server = ServerState({k: v.copy() for k, v in theta.items()})
    before = server.theta["fc.weight"].tobytes()
    out = aggregate([({"body": np.ones(2), "fc.weight": np.full(2, 9.0)}, 3)], "fedper", server,
                    personal={"fc.weight"})
    assert out["fc.weight"].tobytes() == before
    assert out["body"].tolist() == [1.0, 1.0]


def test_buffers_bypass_fedadam():
    server = ServerState({"bn.running_mean": np.zeros(2), "w": np.zeros(2)})
    out = aggregate([({"bn.running_mean": np.ones(2), "w": np.ones(2)}, 1)], "fedadam", server,
                    buffers={"bn.running_mean"})
    assert out["bn.running_mean"].tolist() == [1.0, 1.0]
    assert not np.allclose(out["w"], 1.0)


# -- personalization ---------------------------------------------------------------------

def test_fedbn_requires_batch_norm():
    with pytest.raises(ConfigError):
        personal_names(build_model(tiny_spec("gn_resnet")), "fedbn")
    with pytest.raises(ConfigError):
        personal_names(build_model(tiny_spec("anfr")), "fedbn")


def test_no_personalization_is_empty():
    model = build_model(tiny_spec("bn_resnet"))
    shared, personal = personalization_filter("none", model.state_dict().items(), model)
    assert personal == {} and set(shared) == set(model.state_dict())


def test_fedper_on_anfr_is_exactly_the_final_linear_layer():
    model = build_model(tiny_spec("anfr"))
    state = model.state_dict()
    shared, personal = personalization_filter("fedper", state.items(), model)
    last_linear = [name for name, mod in model.named_modules() if isinstance(mod, Linear)][-1]
    expected = {f"{last_linear}.{p}" for p in model._children[last_linear]._params}
    assert set(personal) == expected == {"fc.weight", "fc.bias"}
    assert set(shared) | set(personal) == set(state) and not set(shared) & set(personal)
    # name-only fallback agrees
    assert set(personalization_filter("fedper", state.items())[1]) == expected


def test_fedbn_on_bn_resnet_audits_all_norm_state():
    model = build_model(tiny_spec("bn_resnet"))
    state = model.state_dict()
    _, personal = personalization_filter("fedbn", state.items(), model)
    expected = {n for n in state if any(seg.startswith("bn") or seg.endswith("_bn") for seg in n.split(".")[:-1])}
    assert set(personal) == expected
    assert {n.rsplit(".", 1)[1] for n in personal} == {"gamma", "beta", "running_mean", "running_var"}
    assert set(personalization_filter("fedbn", state.items())[1]) == expected


# -- local training ----------------------------------------------------------------------

def _client(shard, seed=5):
    return ClientState(shard.client_id, shard, None, seed)


def test_zero_local_steps_keeps_global(world):
    ds, train, _ = world
    model = build_model(tiny_spec(), 0)
    theta = model.state_dict()
    res = local_train(_client(train[0]), theta, quick_cfg(local_steps=0), build_model(tiny_spec(), 3), ds, 0)
    assert same_state(res.theta, theta)


def test_non_finite_loss_aborts(world):
    ds, train, _ = world
    model = build_model(tiny_spec(), 0)
    theta = model.state_dict()
    theta["fc.bias"] = np.full_like(theta["fc.bias"], np.nan)
    with pytest.raises(TrainingError, match="non-finite"):
        local_train(_client(train[0]), theta, quick_cfg(), model, ds, 0)


def test_fedprox_large_mu_shrinks_drift(world):
    ds, train, _ = world
    theta = build_model(tiny_spec(), 0).state_dict()

    def drift(mu):
        cfg = quick_cfg(aggregation="fedprox", mu=mu, lr=1e-3, momentum=0.0, local_steps=5, scheduler="none")
        res = local_train(_client(shard), theta, cfg, build_model(tiny_spec(), 0), ds, 0)
        return math.sqrt(sum(float(((res.theta[k] - theta[k]) ** 2).sum()) for k in theta))

    for shard in train:
        assert drift(1e3) < drift(0.0)


# -- full federation ---------------------------------------------------------------------

def test_zero_rounds(world):
    ds, train, test = world
    res = run_federation(tiny_spec(), ds, train, quick_cfg(rounds=0), test, model_seed=1)
    assert res.metrics == []
    assert same_state(res.global_state, build_model(tiny_spec(), 1).state_dict())


def test_fedprox_zero_mu_is_fedavg(world):
    ds, train, test = world
    a = run_federation(tiny_spec(), ds, train, quick_cfg(), test)
    b = run_federation(tiny_spec(), ds, train, quick_cfg(aggregation="fedprox", mu=0.0), test)
    assert same_state(a.global_state, b.global_state) and same_metrics(a, b)


def _centralized(spec, seed, ds, shard, cfg, client_seed):
    model = build_model(spec, seed)
    opt = SGD(cfg.momentum)
    step = 0
    for r in range(cfg.rounds):
        rng = np.random.default_rng([client_seed, r])
        for _ in range(cfg.local_steps):
            idx = shard.indices[batch_indices(rng, shard.size, cfg.batch_size)]
            model.zero_grad()
            ops.loss(model(ds.images[idx]), ds.labels[idx]).backward()
            opt.step(dict(model.named_parameters()), {n: p.grad for n, p in model.named_parameters()},
                     lr_at(cfg.scheduler, cfg.lr, step, cfg.total_steps))
            step += 1
    return model.state_dict()


@pytest.mark.parametrize("rounds,steps", [(1, 1), (3, 2)])
def test_single_client_equals_centralized_training(world, rounds, steps):
    ds, train, test = world
    cfg = quick_cfg(rounds=rounds, local_steps=steps)
    fed = run_federation(tiny_spec("bn_resnet"), ds, train[:1], cfg, test[:1], model_seed=4, client_seeds=[77])
    central = _centralized(tiny_spec("bn_resnet"), 4, ds, train[0], cfg, 77)
    assert same_state(fed.global_state, central)


def test_scaffold_identical_clients_matches_fedavg(world):
    ds, train, _ = world
    shards = [train[0], make_shard(1, train[0].indices, ds.labels, ds.num_classes)]
    seeds = [11, 11]
    cfg = quick_cfg(rounds=3)
    a = run_federation(tiny_spec(), ds, shards, cfg, client_seeds=seeds)
    b = run_federation(tiny_spec(), ds, shards, dataclasses.replace(cfg, aggregation="scaffold"), client_seeds=seeds)
    assert same_state(a.global_state, b.global_state)
    c0, c1 = b.clients[0].c, b.clients[1].c
    assert same_state(c0, c1)


def test_scaffold_server_c_is_client_mean(world):
    ds, train, test = world
    seen = []

    def check(_, server):
        ids = sorted(server.c_clients)
        assert len(ids) == 3
        for name, c in server.c.items():
            mean = sum(server.c_clients[i][name] for i in ids) / 3
            seen.append(float(np.max(np.abs(c - mean))))

    run_federation(tiny_spec(), ds, train, quick_cfg(rounds=3, aggregation="scaffold"), test, on_round=check)
    assert seen and max(seen) < 1e-12


def test_deterministic_across_runs_and_workers(world):
    ds, train, test = world
    cfg = quick_cfg(aggregation="fedadam")
    a = run_federation(tiny_spec(), ds, train, cfg, test)
    b = run_federation(tiny_spec(), ds, train, cfg, test)
    c = run_federation(tiny_spec(), ds, train, dataclasses.replace(cfg, workers=3), test)
    assert same_metrics(a, b) and same_metrics(a, c)
    assert same_state(a.global_state, c.global_state)


@pytest.mark.parametrize("strategy", ["fedper", "fedbn"])
def test_personal_state_stays_local(world, strategy):
    ds, train, test = world
    res = run_federation(tiny_spec("bn_resnet"), ds, train, quick_cfg(aggregation=strategy), test)
    names = personal_names(build_model(tiny_spec("bn_resnet")), strategy)
    initial = res.initial_state
    for n in names:
        assert res.global_state[n].tobytes() == initial[n].tobytes()
    differs = [not np.array_equal(res.clients[0].personal[n], res.clients[1].personal[n]) for n in names]
    assert any(differs)
    assert all(m.local_metrics and m.best_local for m in res.metrics)


def test_partial_participation_and_scheduler_persistence(world):
    ds, train, test = world
    res = run_federation(tiny_spec(), ds, train, quick_cfg(rounds=4, participation=0.34), test)
    assert all(len(m.participants) == 1 for m in res.metrics)
    total = sum(c.step for c in res.clients)
    assert total == 4 * 2
    for m in res.metrics:
        assert all(math.isfinite(v) for v in m.train_loss.values())
        assert 0.0 <= m.global_metrics["accuracy"] <= 1.0


def test_fed_config_validation():
    for bad in (dict(mu=-1.0), dict(participation=0.0), dict(aggregation="fedyogi"), dict(lr=0.0),
                dict(scheduler="step"), dict(rounds=-1)):
        with pytest.raises(ConfigError):
            FedConfig(**bad)
