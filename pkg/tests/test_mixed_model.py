import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ltn.errors import ValidationError
from ltn.io import PosteriorDraws, read_draws, write_draws
from ltn.mixed_model import (
    MixedConfig,
    MixedDesign,
    compute_pmap_pjap,
    fit_mixed,
    prior_inclusion,
)
from ltn.phylo import balanced_tree
from ltn.samplers import rng_stream
from ltn.simgen import gen_mixed_cohort


@pytest.fixture(scope="module")
def cohort():
    tree = balanced_tree([f"o{j}" for j in range(4)])
    rng = rng_stream(5)
    table, groups, age = gen_mixed_cohort(tree, rng, n_groups=4, per_group=4, N=500)
    s = np.arange(len(groups)) % 2
    return tree, table, groups, age, s


def test_prior_inclusion_values():
    assert prior_inclusion(0.5, 99) == pytest.approx(0.006977, abs=5e-7)
    assert prior_inclusion(0.5, 1) == pytest.approx(0.5)
    # prior probability that every node is null recovers p0
    for p0, d in [(0.2, 7), (0.5, 19), (0.9, 3)]:
        assert (1 - prior_inclusion(p0, d)) ** d == pytest.approx(p0)
    with pytest.raises(ValidationError):
        prior_inclusion(1.0, 3)


def test_pmap_pjap_counting():
    a = np.array([[0.0, 0.0, 0.0], [0.0, 1.2, 0.0], [0.3, -0.4, 0.0], [0.0, 0.0, 0.0]])
    r = compute_pmap_pjap(a, threshold=0.4)
    np.testing.assert_array_equal(r.pmap, [0.25, 0.5, 0.0])
    assert r.pjap == 0.5
    assert r.flagged
    np.testing.assert_array_equal(r.sign, [1, 1, 0])
    with pytest.raises(ValidationError):
        compute_pmap_pjap(np.empty((0, 3)))


@settings(max_examples=60)
@given(
    arrays(
        float,
        st.tuples(st.integers(1, 30), st.integers(1, 6)),
        elements=st.sampled_from([0.0, 0.0, -1.5, 0.7, 2.0]),
    )
)
def test_pjap_bounds(a):
    r = compute_pmap_pjap(a)
    assert r.pmap.max() - 1e-12 <= r.pjap <= min(1.0, r.pmap.sum()) + 1e-12
    assert np.all((0 <= r.pmap) & (r.pmap <= 1))


def test_design_validation():
    g = [0, 0, 1, 1]
    with pytest.raises(ValidationError, match="0/1"):
        MixedDesign.build([0, 2, 1, 0], g)
    with pytest.raises(ValidationError, match="length"):
        MixedDesign.build([0, 1, 1, 0], [0, 1])
    with pytest.raises(ValidationError, match="collinear"):
        MixedDesign.build([0, 1, 1, 0], g, Z=np.ones(4))
    with pytest.raises(ValidationError, match="collinear"):
        MixedDesign.build([0, 1, 1, 0], g, Z=np.column_stack([[1, 2, 3, 4], [2, 4, 6, 8]]), intercept=False)
    d = MixedDesign.build([0, 1, 1, 0], ["x", "x", "b", "b"], Z=[1.0, 2.0, 0.5, 3.0], covariate_names=["age"])
    assert d.q == 2 and d.G == 2 and d.n == 4
    assert d.covariate_names == ["(intercept)", "age"]
    assert d.group_labels == ["b", "x"]
    np.testing.assert_array_equal(d.g, [1, 1, 0, 0])
    np.testing.assert_array_equal(d.H.sum(axis=0), [2, 2])


def test_config_validation():
    with pytest.raises(ValidationError):
        MixedConfig(p0=0)
    with pytest.raises(ValidationError):
        MixedConfig(c_beta=0)
    assert MixedConfig(iterations=10).burnin == 5


def test_fixed_seed_and_resume(cohort, tmp_path):
    tree, table, groups, age, s = cohort
    design = MixedDesign.build(s, groups, Z=age)
    config = MixedConfig(iterations=60, burnin=20, seed=9, checkpoint_every=7)
    a, ra = fit_mixed(table, tree, design, config)
    b, _ = fit_mixed(table, tree, design, config)
    assert a == b
    assert a["beta"].shape == (40, 2, tree.d)
    part, rep = fit_mixed(table, tree, design, config, run_dir=tmp_path, stop_after=30)
    assert len(part) == 10
    c, rc = fit_mixed(table, tree, design, config, run_dir=tmp_path, resume=True)
    assert c == a
    assert rc.pjap == ra.pjap


def test_design_size_mismatch(cohort):
    tree, table, groups, age, s = cohort
    design = MixedDesign.build(s[:-1], groups[:-1])
    with pytest.raises(ValidationError, match="samples"):
        fit_mixed(table, tree, design, MixedConfig(iterations=4, burnin=1))


def test_exact_zeros_survive_serialization(cohort, tmp_path):
    tree, table, groups, age, s = cohort
    draws, report = fit_mixed(table, tree, MixedDesign.build(s, groups), MixedConfig(iterations=80, seed=2))
    assert np.any(draws["alpha"] == 0)
    write_draws(tmp_path, draws)
    back = read_draws(tmp_path)
    assert back == draws
    assert compute_pmap_pjap(back["alpha"]).pjap == report.pjap
    d = report.to_dict(tree)
    assert d["nodes"][0]["path"] == "root"
    assert d["nodes"][1]["path"] == "rootL"
    assert d["nodes"][2]["path"] == "rootR"


def test_uninformative_indicator_gives_prior_pmap(cohort):
    # With every s_i = 0 the data carry no information on alpha, so the
    # inclusion frequency must match the prior mean m.
    tree, table, groups, age, s = cohort
    design = MixedDesign.build(np.zeros(len(s)), groups)
    config = MixedConfig(p0=0.5, iterations=4000, burnin=400, seed=4)
    _, report = fit_mixed(table, tree, design, config)
    m = prior_inclusion(0.5, tree.d)
    assert report.pmap.mean() == pytest.approx(m, abs=0.04)
    assert report.pjap == pytest.approx(0.5, abs=0.08)


def test_null_split_has_low_pjap():
    tree = balanced_tree([f"o{j}" for j in range(8)])
    rng = rng_stream(12)
    table, groups, age = gen_mixed_cohort(tree, rng, n_groups=6, per_group=6, N=2000)
    s = rng.permutation(np.arange(len(groups)) % 2)
    _, report = fit_mixed(table, tree, MixedDesign.build(s, groups), MixedConfig(iterations=800, seed=1))
    assert report.pjap < 0.5


def test_strong_shift_is_detected():
    tree = balanced_tree([f"o{j}" for j in range(8)])
    rng = rng_stream(13)
    table, groups, age = gen_mixed_cohort(tree, rng, n_groups=6, per_group=6, N=2000)
    s = np.arange(len(groups)) % 2
    counts = table.counts.copy()
    counts[s == 1, 0] *= 4
    _, report = fit_mixed(table.with_counts(counts), tree, MixedDesign.build(s, groups), MixedConfig(iterations=800, seed=1))
    assert report.pjap > 0.9
    # some node on the root-to-o0 path carries the shift
    assert report.pmap[[0, 1, 2]].max() > 0.9


def test_draws_round_trip_equality():
    d = PosteriorDraws(np.array([3, 4]), {"alpha": np.array([[0.0, -0.0], [1e-300, 2.5]])})
    assert d == PosteriorDraws(np.array([3, 4]), {"alpha": np.array([[0.0, 0.0], [1e-300, 2.5]])})
