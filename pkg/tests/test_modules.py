import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from touchstream.environment import BINARY_VOCAB, LOC_VOCAB
from touchstream.modules import (
    ZOO,
    CheckpointError,
    Experience,
    Module,
    ModuleSpec,
    SpecError,
    build_module,
    build_params,
    choose_action,
    expected_reward,
    load_checkpoint,
    logit_margin,
    module_forward,
    obvious_lrs_embedding,
    obvious_sr_forward,
    param_count,
    save_checkpoint,
    select_horizon,
    selection_distribution,
    training_update,
)
from touchstream.numerics import ActivationKind, OptimizerConfig, OptimizerState, grad_check, softmax

GENERIC = [n for n, (fam, _, _) in ZOO.items() if fam != "obvious"]


def _spec(name, D=3, width=2, V=2):
    return ModuleSpec.named(name, "SR", D, V, width)


def _rand_exp(rng, D):
    return Experience(rng.normal(size=2 * D), rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2))


def _randomised(name, D=3, width=2, V=2, seed=0):
    """Double-precision module with every tensor (heads included) random."""
    spec = _spec(name, D, width, V)
    vocab = BINARY_VOCAB if V == 2 else LOC_VOCAB
    m = build_module(spec, vocab, seed, np.float64)
    m.params.flat[:] = np.random.default_rng(seed + 100).normal(size=m.params.size) * 0.7
    return m


# -- shapes and counts -----------------------------------------------------------

def test_sr_lrs_shapes_full_scale():
    spec = ModuleSpec.named("LRS", "SR", 4096, 2)
    shapes = dict(spec.tensor_shapes())
    assert shapes["W_0"] == (8192, 8)
    assert shapes["W_1"] == (12, 8)
    assert shapes["W_2"] == (16, 8)
    assert shapes["H_1"] == (16, 2) and shapes["H_2"] == (16, 2)
    assert param_count(spec) == 65_852


@pytest.mark.parametrize("name,kind,V,count", [
    ("LRS", "SR", 2, 65_852), ("CReZ-CReS", "SR", 2, 66_108), ("LRS", "MTS", 2, 265_700),
    ("LBR-large", "LOC", 7, 9_457_678), ("CReZ-CReS", "LOC", 7, 1_154_958),
    ("CReZ-CReS", "LOC", 2, 1_149_828),
])
def test_param_count_examples(name, kind, V, count):
    assert param_count(ModuleSpec.named(name, kind, 4096, V)) == count


@pytest.mark.parametrize("name", GENERIC + ["Obvious"])
@pytest.mark.parametrize("kind,V", [("SR", 2), ("MTS", 2), ("LOC", 7)])
def test_param_count_equals_allocation(name, kind, V):
    for D in (8, 64):
        spec = ModuleSpec.named(name, kind, D, V, width=5)
        assert build_params(spec, 0).size == param_count(spec)


def test_named_parsing():
    assert ModuleSpec.named("LBR").name == "LBR-small"
    assert ModuleSpec.named("LBR-med", "MTS").width == 128
    assert ModuleSpec.named("LRS", "LOC").width == 128
    with pytest.raises(SpecError):
        ModuleSpec.named("LRS-med")
    with pytest.raises(SpecError):
        ModuleSpec.named("LQ")


def test_spec_json_round_trip():
    spec = ModuleSpec.named("CReZ-LRS", "MTS", 64, 2)
    assert ModuleSpec.from_json(spec.to_json()) == spec


def test_build_deterministic_and_heads_zero():
    spec = _spec("LRS", 6, 4)
    a, b = build_params(spec, 3), build_params(spec, 3)
    assert a.flat.tobytes() == b.flat.tobytes()
    assert not np.array_equal(a.flat, build_params(spec, 4).flat)
    assert np.all(a["H_1"] == 0) and np.all(a["b_0"] == 0)
    assert np.any(a["W_0"] != 0)


# -- forward ---------------------------------------------------------------------

def _brute_forward(m: Module, feats, prev, cand):
    """Independent per-candidate evaluation with explicit loops over units."""
    spec, P = m.spec, m.params
    X = spec.activation

    def dense(W, b, x):
        return np.array([sum(x[i] * W[i, j] for i in range(len(x))) + b[j] for j in range(W.shape[1])])

    acts = np.concatenate([prev, cand])
    if spec.family == "early":
        z = ActivationKind(spec.bottleneck)
        from touchstream.numerics import activate
        zv = activate(z, dense(P["W_0"], P["b_0"], feats))
        inp = np.concatenate([zv, acts])
    else:
        from touchstream.numerics import activate
        inp = np.concatenate([feats, acts])
    l1 = activate(X, dense(P["W_1"], P["b_1"], inp))
    l2 = activate(X, dense(P["W_2"], P["b_2"], l1))
    return [softmax(dense(P[f"H_{j}"], P[f"c_{j}"], l2)) for j in (1, 2)]


@pytest.mark.parametrize("name", ["LRS", "CReZ-CReS", "LBR", "LT", "LBSig"])
def test_forward_matches_brute_force(name):
    m = _randomised(name, D=3, width=2)
    rng = np.random.default_rng(1)
    feats, prev = rng.normal(size=6), rng.uniform(-1, 1, 2)
    cands = rng.uniform(-1, 1, (4, 2))
    maps = module_forward(m, feats, prev, cands)
    assert maps.probs.shape == (2, 4, 2)
    for n in range(4):
        ref = _brute_forward(m, feats, prev, cands[n])
        for j in range(2):
            np.testing.assert_allclose(maps.probs[j, n], ref[j], atol=1e-10, rtol=0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(GENERIC), st.integers(0, 10_000), st.sampled_from([2, 7]))
def test_forward_distributions_and_permutation(name, seed, V):
    m = _randomised(name, D=4, width=3, V=V, seed=seed % 50)
    rng = np.random.default_rng(seed)
    feats, prev = rng.normal(size=8), rng.uniform(-1, 1, 2)
    cands = rng.uniform(-1, 1, (6, 2))
    maps = m.reward_maps(feats, prev, cands)
    assert maps.probs.shape == (2, 6, V)
    np.testing.assert_allclose(maps.probs.sum(-1), 1, atol=1e-6)
    perm = rng.permutation(6)
    again = m.reward_maps(feats, prev, cands[perm])
    np.testing.assert_allclose(again.expected, maps.expected[:, perm], atol=1e-12)


def test_expected_reward_examples():
    assert expected_reward([0.2, 0.8], BINARY_VOCAB) == pytest.approx(0.8)
    one_hot = np.zeros(7)
    one_hot[LOC_VOCAB.index(0.7)] = 1
    assert expected_reward(one_hot, LOC_VOCAB) == pytest.approx(0.7)
    assert expected_reward(np.full(7, 1 / 7), LOC_VOCAB) == pytest.approx(4.5 / 7)


def test_untrained_maps_are_constant():
    m = build_module(_spec("LRS", 4, 3), BINARY_VOCAB, 0)
    maps = m.reward_maps(np.ones(8), np.zeros(2), np.random.default_rng(0).uniform(-1, 1, (10, 2)))
    assert np.ptp(maps.expected) == 0


# -- gradients -------------------------------------------------------------------

@pytest.mark.parametrize("name", GENERIC)
def test_loss_gradient_matches_finite_differences(name):
    V = 7 if name in ("LRS", "LBR") else 2
    m = _randomised(name, D=3, width=2, V=V, seed=2)
    rng = np.random.default_rng(3)
    vocab = m.vocab
    rows = [(_rand_exp(rng, 3), 1, float(vocab[1])), (_rand_exp(rng, 3), 2, float(vocab[0]))]
    base = m.params.flat.copy()

    def f(theta):
        m.params.flat[:] = theta
        return m.loss_and_grad(rows)[0]

    _, g = m.loss_and_grad(rows)
    err = grad_check(f, base.copy(), g)
    m.params.flat[:] = base
    assert err <= 1e-4


def test_obvious_gradient_matches_finite_differences():
    spec = ModuleSpec.named("Obvious", "SR", 5, 2)
    m = build_module(spec, BINARY_VOCAB, 0, np.float64)
    rng = np.random.default_rng(0)
    rows = [(_rand_exp(rng, 5), 1, 1.0), (_rand_exp(rng, 5), 1, 0.0), (_rand_exp(rng, 5), 2, 1.0)]
    base = m.params.flat.copy()

    def f(theta):
        m.params.flat[:] = theta
        return m.loss_and_grad(rows)[0]

    _, g = m.loss_and_grad(rows)
    assert grad_check(f, base.copy(), g) <= 1e-4


# -- the obvious module ----------------------------------------------------------

def test_obvious_formula():
    W = np.array([1.0, 0.0])
    assert obvious_sr_forward(W, 0.0, np.array([1.0, 5.0]), -0.5) == pytest.approx(0.5)
    assert obvious_sr_forward(W, 0.0, np.array([-2.0, 5.0]), 0.5) == pytest.approx(1.0)
    for wc in (-3.0, 0.0, 2.5):
        assert obvious_sr_forward(W, 0.0, np.array([wc, 0.0]), 0.0) == 0


def test_obvious_embeds_in_lrs():
    rng = np.random.default_rng(11)
    D = 6
    W, b = rng.normal(size=D), 0.2
    m = obvious_lrs_embedding(W, b)
    assert m.spec.family == "early" and m.spec.activation == ActivationKind.RS
    worst = 0.0
    for _ in range(1000):
        C, ax = rng.normal(size=D), rng.uniform(-1, 1)
        hist = np.concatenate([rng.normal(size=D), C])
        margin = logit_margin(m, hist, rng.uniform(-1, 1, 2), np.array([[ax, rng.uniform(-1, 1)]]))[0]
        worst = max(worst, abs(margin - obvious_sr_forward(W, b, C, ax)))
    assert worst <= 1e-6


# -- policy ----------------------------------------------------------------------

def test_choose_action_prefers_structured_horizon():
    m1 = np.full(5, 0.3)
    m2 = np.array([0.1, 0.1, 0.9, 0.1, 0.1])
    j, p = select_horizon(np.stack([m1, m2]))
    assert j == 1
    assert choose_action(np.stack([m1, m2]), np.random.default_rng(0), "greedy") == 2


def test_degenerate_maps_fall_back_to_uniform():
    flat = np.full((2, 4), 0.5)
    np.testing.assert_allclose(selection_distribution(flat), 0.25)
    rng = np.random.default_rng(0)
    counts = np.bincount([choose_action(flat, rng, "greedy") for _ in range(4000)], minlength=4)
    assert counts.min() > 850


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(-5, 5), st.floats(0.01, 100))
def test_selection_invariant_to_affine_maps(seed, shift, scale):
    e = np.random.default_rng(seed).uniform(0, 1, (2, 9))
    base = selection_distribution(e)
    np.testing.assert_allclose(selection_distribution(e + shift), base, atol=1e-9)
    np.testing.assert_allclose(selection_distribution(e * scale), base, atol=1e-9)


def test_sampling_follows_selection_distribution():
    e = np.stack([np.array([0.0, 1.0, 2.0, 3.0]), np.zeros(4)])
    rng = np.random.default_rng(1)
    counts = np.bincount([choose_action(e, rng) for _ in range(20_000)], minlength=4) / 20_000
    np.testing.assert_allclose(counts, [0, 1 / 6, 2 / 6, 3 / 6], atol=0.015)
    with pytest.raises(ValueError):
        choose_action(e, rng, "boltzmann")


def test_sampler_goodness_of_fit_is_calibrated():
    # chi-square p-values over independent streams are uniform for an unbiased sampler
    from scipy.stats import chisquare, kstest
    e = np.random.default_rng(4).uniform(0, 1, (2, 12))
    t = selection_distribution(e)
    live = t > 0
    ps = []
    for stream in np.random.SeedSequence(7).spawn(40):
        rng = np.random.default_rng(stream)
        c = np.bincount([choose_action(e, rng) for _ in range(5000)], minlength=12)
        assert c[~live].sum() == 0
        ps.append(chisquare(c[live], 5000 * t[live]).pvalue)
    assert kstest(ps, "uniform").pvalue > 0.01


# -- updates ---------------------------------------------------------------------

def test_repeated_update_decreases_loss():
    m = build_module(_spec("LRS", 4, 3), BINARY_VOCAB, 0)
    rng = np.random.default_rng(0)
    cur, prev = _rand_exp(rng, 4), _rand_exp(rng, 4)
    state, cfg = OptimizerState.zeros_like(m.params.flat), OptimizerConfig(lr=1e-3)
    losses = [training_update(m, state, cfg, cur, 1.0, prev) for _ in range(50)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_frozen_tensors_untouched():
    m = build_module(_spec("LBR", 4, 3), BINARY_VOCAB, 0)
    rng = np.random.default_rng(0)
    state, cfg = OptimizerState.zeros_like(m.params.flat), OptimizerConfig()
    frozen = ("W_2", "b_2", "H_1", "c_1", "H_2", "c_2")
    before = m.params.checksum(frozen)
    sl = m.params.active_slices(frozen)
    for _ in range(20):
        training_update(m, state, cfg, _rand_exp(rng, 4), float(rng.integers(2)), _rand_exp(rng, 4), frozen)
    assert m.params.checksum(frozen) == before
    mask = np.ones(m.params.size, bool)
    for s in sl:
        mask[s] = False
    assert np.all(state.m[mask] == 0) and np.all(state.v[mask] == 0)
    everything = tuple(m.params.names)
    snap = m.params.flat.copy()
    loss = training_update(m, state, cfg, _rand_exp(rng, 4), 1.0, None, everything)
    assert np.isfinite(loss)
    assert m.params.flat.tobytes() == snap.tobytes()


def test_unknown_reward_rejected():
    m = build_module(_spec("LRS", 4, 3), BINARY_VOCAB, 0)
    with pytest.raises(ValueError):
        training_update(m, OptimizerState.zeros_like(m.params.flat), OptimizerConfig(),
                        _rand_exp(np.random.default_rng(0), 4), 0.5)


# -- checkpoints -----------------------------------------------------------------

@pytest.mark.parametrize("name", ["LRS", "LBCre-med", "Obvious"])
def test_checkpoint_round_trip(tmp_path, name):
    m = build_module(ModuleSpec.named(name, "SR", 30, 2), BINARY_VOCAB, 5)
    m.params.flat[:] = np.random.default_rng(0).normal(size=m.params.size)
    path = str(tmp_path / "m.tsck")
    save_checkpoint(path, m, {"note": "x"})
    back, ctx = load_checkpoint(path)
    assert ctx == {"note": "x"} and back.spec == m.spec
    assert back.params.flat.tobytes() == m.params.flat.tobytes()


def test_checkpoint_errors(tmp_path):
    m = build_module(_spec("LRS", 4, 3), BINARY_VOCAB, 0)
    path = tmp_path / "m.tsck"
    save_checkpoint(str(path), m)
    blob = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"NOPE" + blob[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "bad"))
    (tmp_path / "short").write_bytes(blob[:-3])
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / "short"))
