import numpy as np
import pytest

from fedfault.faults import (
    FaultPlan,
    ScenarioSpec,
    build_fault_plan,
    sample_link_faults,
    sample_participation,
    select_clients,
)
from fedfault.rng import substream, substream_fingerprint


def test_participation_extremes():
    assert sample_participation({}, 3, 50, 0).all()
    assert sample_participation({0: 1.0}, 3, 50, 0).all()
    mask = sample_participation({1: 0.0}, 3, 50, 0)
    assert not mask[:, 1].any() and mask[:, [0, 2]].all()


def test_participation_frequency_within_three_sigma():
    freq = sample_participation({0: 0.5}, 2, 10_000, 3)[:, 0].mean()
    assert 0.485 <= freq <= 0.515


def test_exact_mode_hits_rate():
    mask = sample_participation({0: 0.25, 1: 0.5}, 2, 2000, 1, mode="exact")
    assert mask[:, 0].sum() == 500 and mask[:, 1].sum() == 1000


def test_link_faults_directions_independent():
    up, down = sample_link_faults({0: 0.5}, {0: 0.5}, 2, 500, 4)
    assert up[:, 1].all() and down[:, 1].all()
    assert not np.array_equal(up[:, 0], down[:, 0])
    never_up, _ = sample_link_faults({2: 0.0}, {}, 3, 20, 0)
    assert not never_up[:, 2].any()


def test_stream_isolation_between_clients():
    base_up, base_down = sample_link_faults({0: 0.3}, {1: 0.6}, 3, 200, 9)
    up, down = sample_link_faults({0: 0.3}, {1: 0.6, 2: 0.1}, 3, 200, 9)
    np.testing.assert_array_equal(base_up, up)
    np.testing.assert_array_equal(base_down[:, 1], down[:, 1])
    p1 = sample_participation({0: 0.5}, 3, 100, 2)
    p2 = sample_participation({0: 0.5, 2: 0.9}, 3, 100, 2)
    np.testing.assert_array_equal(p1[:, 0], p2[:, 0])


def test_empty_spec_is_fault_free():
    plan = build_fault_plan(ScenarioSpec(), 4, 30, 0)
    ref = FaultPlan.fault_free(4, 30)
    for name in ("participates", "download_ok", "upload_ok"):
        np.testing.assert_array_equal(getattr(plan, name), getattr(ref, name))
    assert plan.overrides == {}


def test_quarter_participation_over_2000_rounds():
    plan = build_fault_plan(ScenarioSpec(participation={0: 0.25}), 3, 2000, 5)
    count = int(plan.participates[:, 0].sum())
    # 3 sigma of Binomial(2000, 0.25) is about 58
    assert abs(count - 500) <= 58


def test_override_persists_for_target_only():
    plan = build_fault_plan(ScenarioSpec(overrides={2: {"eta": 0.01}}), 3, 10, 0)
    for t in range(10):
        assert plan[t].overrides == {2: {"eta": 0.01}}


def test_plan_deterministic_and_excluded():
    spec = ScenarioSpec(participation={0: 0.5}, upload={1: 0.5}, excluded=(2,))
    a = build_fault_plan(spec, 3, 40, 7)
    b = build_fault_plan(spec, 3, 40, 7)
    np.testing.assert_array_equal(a.participates, b.participates)
    np.testing.assert_array_equal(a.upload_ok, b.upload_ok)
    assert not a.participates[:, 2].any()
    rp = a[3]
    np.testing.assert_array_equal(rp.uploads(), rp.participates & rp.upload_ok)


@pytest.mark.parametrize("spec", [
    ScenarioSpec(participation={0: 1.2}),
    ScenarioSpec(upload={5: 0.5}),
    ScenarioSpec(overrides={0: {"momentum": 0.9}}),
    ScenarioSpec(overrides={3: {"eta": 0.1}}),
    ScenarioSpec(excluded=(4,)),
    ScenarioSpec(participation_mode="bursty"),
])
def test_invalid_specs(spec):
    with pytest.raises(ValueError):
        build_fault_plan(spec, 3, 10, 0)


def test_select_clients():
    mask = select_clients(0.5, 6, 20, 1)
    assert (mask.sum(axis=1) == 3).all()
    assert (select_clients(0.01, 6, 5, 1).sum(axis=1) == 1).all()
    with pytest.raises(ValueError):
        select_clients(0.0, 3, 5, 0)


def test_substreams_are_named_and_stable():
    a = substream(3, "upload", 1).random(4)
    b = substream(3, "upload", 1).random(4)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, substream(3, "download", 1).random(4))
    assert not np.array_equal(a, substream(3, "upload", 2).random(4))
    assert substream_fingerprint(3, "upload", 1) == substream_fingerprint(3, "upload", 1)
