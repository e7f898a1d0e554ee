"""Property-based checks of the core invariants."""

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depmicrodiff.data import AbundanceMatrix, NormalizedMatrix, apply_eval_mask, normalize
from depmicrodiff.dependency import combine_dependencies, mutual_information
from depmicrodiff.diffusion import cosine_schedule, forward_sample, predict_x0
from depmicrodiff.evaluation import cosine, mae, pcc, rmse
from depmicrodiff.masks import ARSplit, build_attention_mask, generate_ar_steps, step_count_probabilities
from depmicrodiff.vae import vae_loss

Y_MAX = np.log10(101.0)
SETTINGS = settings(max_examples=60, deadline=None)


@st.composite
def abundance(draw, min_n=1, max_n=8, max_d=8):
    n = draw(st.integers(min_n, max_n))
    d = draw(st.integers(1, max_d))
    vals = draw(arrays(np.float64, (n, d), elements=st.one_of(st.just(0.0), st.floats(1e-6, 1e6))))
    hot = draw(st.lists(st.integers(0, d - 1), min_size=n, max_size=n))
    vals[np.arange(n), hot] += draw(st.floats(1.0, 1e3))
    return AbundanceMatrix(vals, [f"s{i}" for i in range(n)], [f"f{j}" for j in range(d)])


@SETTINGS
@given(abundance(), st.floats(1e-3, 1e3))
def test_normalize_scale_invariant_and_zero_preserving(M, scale):
    Y = normalize(M).values
    Y2 = normalize(AbundanceMatrix(M.values * scale, M.sample_ids, M.feature_ids)).values
    np.testing.assert_allclose(Y, Y2, atol=1e-9)
    assert np.array_equal(Y == 0, M.values == 0)
    assert np.all(Y >= 0) and np.all(Y <= Y_MAX + 1e-12)


@SETTINGS
@given(abundance(min_n=2, max_d=12), st.floats(0.01, 0.99), st.integers(0, 2**31))
def test_eval_mask_hides_only_nonzeros_and_restores(M, frac, seed):
    Y = normalize(M)
    Ym, em = apply_eval_mask(Y, frac, seed)
    hidden = em.mask == 1
    assert np.all(Y.values[hidden] != 0)
    assert np.all(Ym.values[hidden] == 0)
    assert np.array_equal(Ym.values[~hidden], Y.values[~hidden])
    nnz = (Y.values != 0).sum(axis=1)
    assert np.array_equal(em.mask.sum(axis=1), np.floor(frac * nnz + 0.5).astype(int))
    restored = np.where(hidden, Y.values, Ym.values)
    assert np.array_equal(restored, Y.values)


vec_pair = st.integers(3, 40).flatmap(lambda n: st.tuples(
    arrays(np.float64, n, elements=st.floats(-10, 10)), arrays(np.float64, n, elements=st.floats(-10, 10))))


@SETTINGS
@given(vec_pair, st.floats(0.1, 10), st.floats(-5, 5))
def test_metric_symmetry_and_affine_invariance(ab, scale, shift):
    a, b = ab
    if np.std(a) < 1e-3 or np.std(b) < 1e-3:
        return
    r = pcc(a, b)
    assert -1 - 1e-9 <= r <= 1 + 1e-9
    assert np.isclose(r, pcc(b, a), atol=1e-12)
    assert np.isclose(r, pcc(scale * a + shift, b), atol=1e-7)
    assert np.isclose(rmse(a, b), rmse(b, a)) and np.isclose(mae(a, b), mae(b, a))
    assert rmse(a, b) >= mae(a, b) - 1e-12
    if np.linalg.norm(a) > 1e-3 and np.linalg.norm(b) > 1e-3:
        assert np.isclose(cosine(a, b), cosine(scale * a, b), atol=1e-9)


@SETTINGS
@given(st.integers(1, 30), st.floats(0.05, 1.0), st.integers(0, 2**31))
def test_ar_split_partitions_the_sample(S, alpha, seed):
    split = generate_ar_steps(S, alpha, np.random.default_rng(seed))
    assert split.total == S and all(k >= 1 for k in split.sizes)
    assert list(np.diff(split.cumsum)) == list(split.sizes)
    assert np.array_equal(np.bincount(split.segment_ids(), minlength=split.n_steps), split.sizes)
    p = step_count_probabilities(S, alpha)
    assert np.isclose(p.sum(), 1.0) and np.all(np.diff(p) <= 1e-15)


@st.composite
def split_and_dep(draw):
    sizes = draw(st.lists(st.integers(1, 4), min_size=1, max_size=5))
    s = sum(sizes)
    dep = draw(arrays(np.int8, (s, s), elements=st.integers(0, 1)))
    np.fill_diagonal(dep, 0)
    return ARSplit.from_sizes(sizes), dep, draw(st.integers(0, 2)), draw(st.sampled_from(["or_as_written", "allow_dep"]))


@SETTINGS
@given(split_and_dep())
def test_attention_mask_is_causal(args):
    split, dep, c, mode = args
    s = split.total
    m = build_attention_mask(s, c, split, dep, mode)
    M = m.matrix
    seg = split.segment_ids()
    assert np.all(M[:, :c] == 0)
    # sample tokens never see later-step visible tokens or later-step sample tokens
    for a in range(s):
        for b in range(m.v):
            if seg[b] >= seg[a]:
                assert M[m.ctx + a, c + b] == 1
        for b in range(s):
            if seg[b] != seg[a]:
                assert M[m.ctx + a, m.ctx + b] == (1 if mode == "or_as_written" else 1 - dep[a, b])
    # visible tokens never see later steps
    for a in range(m.v):
        for b in range(m.v):
            if seg[b] > seg[a]:
                assert M[c + a, c + b] == 1
    # the dependency mode only alters within-step sample pairs
    base = build_attention_mask(s, c, split, None).matrix
    diff = M != base
    same_step = seg[:, None] == seg[None, :]
    assert not diff[:m.ctx].any() and not diff[:, :m.ctx].any()
    if mode == "or_as_written":
        assert not diff[m.ctx:, m.ctx:][~same_step].any()
        assert np.array_equal(diff[m.ctx:, m.ctx:], (dep == 1) & same_step)
    else:
        assert np.array_equal(diff[m.ctx:, m.ctx:], (dep == 1) & ~same_step)


@SETTINGS
@given(arrays(np.float64, (3, 4), elements=st.floats(-5, 5)), arrays(np.float64, (3, 4), elements=st.floats(-5, 3)))
def test_kl_nonnegative(mu, logvar):
    x = np.zeros_like(mu)
    total, recon, kl = vae_loss(x, x, mu, logvar)
    assert kl >= -1e-9 and recon == 0 and np.isclose(total, kl)


@SETTINGS
@given(st.integers(2, 7).flatmap(lambda d: st.tuples(
    arrays(np.int8, (d, d), elements=st.integers(0, 1)), arrays(np.int8, (d, d), elements=st.integers(0, 1)))))
def test_dep_dominates_both_sources(mats):
    c_dir, raw = mats
    np.fill_diagonal(c_dir, 0)
    c_mi = raw | raw.T
    np.fill_diagonal(c_mi, 0)
    D = combine_dependencies(c_dir, c_mi)
    assert np.all(D.dep >= c_dir) and np.all(D.dep >= c_mi)
    assert np.array_equal(D.dep, c_dir | c_mi)


@SETTINGS
@given(vec_pair, st.integers(2, 8))
def test_mi_symmetric_and_nonnegative(ab, bins):
    a, b = ab
    bins = min(bins, a.size)
    mi = mutual_information(a, b, bins)
    assert mi >= -1e-12
    assert np.isclose(mi, mutual_information(b, a, bins), atol=1e-12)


@SETTINGS
@given(st.integers(1, 1000), arrays(np.float64, 6, elements=st.floats(-3, 3)),
       arrays(np.float64, 6, elements=st.floats(-3, 3)))
def test_forward_then_x0_inverts(t, x0, eps):
    sched = SCHED
    xt = forward_sample(x0, t, eps, sched)
    np.testing.assert_allclose(predict_x0(xt, t, eps, sched), x0, atol=1e-6 * max(1, 1 / np.sqrt(sched.alpha_bars[t])))


SCHED = cosine_schedule(1000)


@SETTINGS
@given(st.integers(2, 3000))
def test_cosine_schedule_monotone(T):
    sched = cosine_schedule(T)
    ab = sched.alpha_bars
    assert ab[0] == 1.0 and np.all(np.diff(ab) < 0) and ab[-1] >= 0
    assert np.all(sched.betas > 0) and np.all(sched.betas <= 0.999)
