import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bosc.backdoor import (CLEAN, MATCHED, MISMATCHED, MIXUP, InjectionConfig, PlanError, TriggerError,
                           TriggerSet, apply_plan, generate_default_triggers, inject_trigger,
                           load_trigger_dir, load_triggers, mixup_perturb, plan_batch_taint,
                           save_trigger_dir, write_ppm)


def test_injection_examples():
    x, t = np.full((4, 4, 3), 0.5), np.ones((4, 4, 3))
    np.testing.assert_allclose(inject_trigger(x, t, 0.1), 0.55)
    np.testing.assert_array_equal(inject_trigger(x, t, 0.0), x)
    np.testing.assert_array_equal(inject_trigger(x, t, 1.0), t)
    with pytest.raises(ValueError):
        inject_trigger(x, np.ones((4, 4, 1)), 0.1)


@given(st.floats(0, 1), st.integers(0, 1000))
def test_injection_stays_in_range(alpha, seed):
    rng = np.random.default_rng(seed)
    out = inject_trigger(rng.random((2, 4, 4, 3)), rng.random((4, 4, 3)), alpha)
    assert out.min() >= 0 and out.max() <= 1


def test_mixup_examples():
    np.testing.assert_allclose(mixup_perturb(np.full((2, 2, 3), 0.9), np.ones((2, 2, 3)), 0.15), 1.0)
    np.testing.assert_allclose(mixup_perturb(np.full((2, 2, 3), 0.2), np.full((2, 2, 3), 0.4), 0.15), 0.26)
    x = np.random.default_rng(0).random((2, 2, 3))
    np.testing.assert_array_equal(mixup_perturb(x, x[::-1], 0.0), x)


def test_plan_counts():
    labels = np.arange(20) % 5
    plan = plan_batch_taint(labels, 5, InjectionConfig(gamma=0.1, eta=0.1), np.random.default_rng(0))
    counts = np.bincount(plan.kind, minlength=4)
    assert counts[MATCHED] == 2 and counts[MISMATCHED] == 2 and counts[MIXUP] == 2 and counts[CLEAN] == 14


def test_plan_zero_fractions_is_plain_batch():
    labels = np.arange(10) % 3
    plan = plan_batch_taint(labels, 3, InjectionConfig(gamma=0, eta=0), np.random.default_rng(0))
    assert np.all(plan.kind == CLEAN)
    np.testing.assert_array_equal(plan.effective, labels)


def test_plan_rejects_bad_input():
    with pytest.raises(PlanError):
        plan_batch_taint(np.array([0, 1, 5]), 3, InjectionConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        InjectionConfig(gamma=0.4, eta=0.2)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 64), st.integers(2, 8), st.floats(0, 0.3), st.floats(0, 0.3), st.integers(0, 10**6))
def test_plan_invariants(B, n, gamma, eta, seed):
    if 2 * gamma + eta >= 1:
        return
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, n, size=B)
    plan = plan_batch_taint(labels, n, InjectionConfig(gamma=gamma, eta=eta), rng)
    matched = plan.kind == MATCHED
    mismatched = plan.kind == MISMATCHED
    mix = plan.kind == MIXUP
    assert matched.sum() == mismatched.sum() == int(np.floor(gamma * B + 1e-9))
    # mixup is dropped only when no partner of another class exists
    n_mix = int(np.floor(eta * B + 1e-9))
    assert mix.sum() == n_mix - len(plan.notes)
    assert np.all(plan.trigger[matched] == labels[matched])
    assert np.all(plan.effective[matched] == n)
    assert np.all(plan.trigger[mismatched] != labels[mismatched])
    assert np.all((plan.trigger[mismatched] >= 0) & (plan.trigger[mismatched] < n))
    assert np.all(plan.effective[~matched] == labels[~matched])
    assert np.all(labels[plan.partner[mix]] != labels[mix])


def test_apply_plan_materialises_each_role():
    rng = np.random.default_rng(3)
    labels = np.arange(20) % 4
    images = rng.random((20, 4, 4, 3)).astype(np.float32)
    trig = TriggerSet(rng.random((4, 4, 4, 3)))
    cfg = InjectionConfig(alpha=0.1, gamma=0.1, beta=0.15, eta=0.1)
    plan = plan_batch_taint(labels, 4, cfg, rng)
    out = apply_plan(images, plan, trig, cfg)
    for i in range(20):
        if plan.kind[i] == CLEAN:
            np.testing.assert_array_equal(out[i], images[i])
        elif plan.kind[i] == MIXUP:
            np.testing.assert_allclose(out[i], np.clip(images[i] + 0.15 * images[plan.partner[i]], 0, 1), atol=1e-6)
        else:
            np.testing.assert_allclose(out[i], 0.9 * images[i] + 0.1 * trig[plan.trigger[i]], atol=1e-6)


def test_trigger_set_invariants():
    with pytest.raises(TriggerError):
        TriggerSet(np.full((2, 4, 4, 3), 1.5))
    with pytest.raises(TriggerError):
        TriggerSet(np.zeros((2, 4, 4, 3)))


def test_load_triggers(tmp_path):
    rng = np.random.default_rng(0)
    paths = []
    for k in range(5):
        p = tmp_path / f"t{k}.ppm"
        write_ppm(p, rng.random((40, 40, 3)))
        paths.append(p)
    trig = load_triggers(paths, 5, (32, 32, 3))
    assert len(trig) == 5 and trig.shape == (32, 32, 3)
    with pytest.raises(TriggerError):
        load_triggers(paths[:4], 5, (32, 32, 3))
    dup = tmp_path / "dup.ppm"
    dup.write_bytes(paths[0].read_bytes())
    with pytest.raises(TriggerError):
        load_triggers(paths[:4] + [dup], 5, (32, 32, 3))
    with pytest.raises(TriggerError):
        load_triggers(paths[:4] + [tmp_path / "missing.ppm"], 5, (32, 32, 3))


def test_trigger_dir_roundtrip(tmp_path):
    trig = generate_default_triggers(5, (32, 32, 3), seed=1)
    save_trigger_dir(trig, tmp_path / "t")
    back = load_trigger_dir(tmp_path / "t", 5, (32, 32, 3))
    assert back.digest() == trig.digest()


@pytest.mark.parametrize("seed", [0, 7, 123])
def test_default_triggers(seed):
    a = generate_default_triggers(5, (32, 32, 3), seed)
    b = generate_default_triggers(5, (32, 32, 3), seed)
    assert a.digest() == b.digest()
    for i in range(5):
        for j in range(i + 1, 5):
            assert np.abs(a[i] - a[j]).mean() > 0.05
