import numpy as np
import pytest

from langground import world
from langground.agent import (AgentConfig, AgentNet, AgentState, MIX_DIM,
                              VISION_FLAT, act, encode_language,
                              encode_vision, mix)
from langground.nn import grad_check, ops
from langground.nn.tensor import Tensor


@pytest.fixture(scope="module")
def net():
    return AgentNet.build(AgentConfig(vocab_words=59), seed=0)


@pytest.fixture(scope="module")
def lstm_net():
    return AgentNet.build(AgentConfig(vocab_words=14, encoder="lstm"), seed=1)


def _obs(seed=0):
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random((3, 84, 84), dtype=np.float32)


# -- vision -------------------------------------------------------------------


def test_vision_shape_chain(net):
    v = encode_vision(net, _obs())
    assert v.shape == (64, 7, 7)


def test_vision_rejects_wrong_shape(net):
    with pytest.raises(Exception):
        net.encode_vision_raw(np.zeros((3, 80, 80), dtype=np.float32))


def test_vision_zero_image_zero_biases(net):
    zeroed = AgentNet.build(AgentConfig(vocab_words=59), seed=0)
    for name in ("conv1.b", "conv2.b", "conv3.b"):
        zeroed.p(name)[:] = 0
    v = encode_vision(zeroed, np.zeros((3, 84, 84), dtype=np.float32))
    assert np.allclose(v, 0)


def test_vision_gradient_to_input(net):
    rng = np.random.Generator(np.random.PCG64(0))
    small = AgentNet.build(AgentConfig(vocab_words=5), seed=2)

    def fn(t):
        x = t["x"]
        y = x
        for li, s in ((1, 4), (2, 2), (3, 1)):
            w = Tensor(small.p(f"conv{li}.W").astype(np.float64))
            b = Tensor(small.p(f"conv{li}.b").astype(np.float64))
            y = ops.relu(ops.conv2d(y, w, b, s))
        return ops.sum_all(ops.mul(y, y))
    x = rng.random((3, 84, 84))
    report = grad_check(fn, {"x": x}, tol=1e-5, max_elements=40)
    assert report.passed, str(report)


# -- language -----------------------------------------------------------------


def test_bow_permutation_invariance(net):
    pad = net.cfg.vocab_words
    a = net.encode_language_raw([3, 7, 11, pad], pad)
    b = net.encode_language_raw([11, 3, 7, pad], pad)
    assert np.allclose(a, b)


def test_bow_all_pad_zero_vector(net):
    pad = net.cfg.vocab_words
    out = net.encode_language_raw([pad] * 6, pad)
    assert np.allclose(out, 0)


def test_lstm_order_sensitivity(lstm_net):
    pad = lstm_net.cfg.vocab_words
    a = lstm_net.encode_language_raw([2, 5, 9, pad], pad)
    b = lstm_net.encode_language_raw([9, 5, 2, pad], pad)
    assert not np.allclose(a, b)


def test_lstm_all_pad_initial_hidden(lstm_net):
    pad = lstm_net.cfg.vocab_words
    out = lstm_net.encode_language_raw([pad] * 4, pad)
    assert np.allclose(out, 0)


def test_language_encoding_dim(net, lstm_net):
    pad = net.cfg.vocab_words
    assert net.encode_language_raw([1, 2, pad], pad).shape == (128,)
    assert lstm_net.encode_language_raw(
        [1, 2, lstm_net.cfg.vocab_words], lstm_net.cfg.vocab_words
    ).shape == (128,)


# -- mixing and acting ---------------------------------------------------------


def test_mix_length(net):
    v = encode_vision(net, _obs())
    l = net.encode_language_raw([1, 2], net.cfg.vocab_words)
    m = mix(v, l)
    assert m.shape == (MIX_DIM,)
    assert MIX_DIM == 3264 == 64 * 7 * 7 + 128
    assert np.allclose(m[:VISION_FLAT], v.reshape(-1))
    assert np.allclose(m[VISION_FLAT:], l)


def test_mix_zero_language_tail(net):
    v = encode_vision(net, _obs())
    m = mix(v, np.zeros(128, dtype=np.float32))
    assert np.allclose(m[VISION_FLAT:], 0)


def test_act_policy_is_distribution(net):
    m = np.random.default_rng(0).standard_normal(MIX_DIM).astype(np.float32)
    pi, val, state = act(net, m, AgentState.zeros())
    assert pi.shape == (7,)
    assert (pi >= 0).all()
    assert pi.sum() == pytest.approx(1.0, abs=1e-6)
    assert np.isscalar(val) or val.shape == ()


def test_act_zero_weight_heads_uniform(net):
    blank = AgentNet.build(AgentConfig(vocab_words=59), seed=3)
    blank.p("policy.W")[:] = 0
    blank.p("policy.b")[:] = 0
    blank.p("value.W")[:] = 0
    blank.p("value.b")[:] = 0.5
    m = np.random.default_rng(1).standard_normal(MIX_DIM).astype(np.float32)
    pi, val, _ = act(blank, m, AgentState.zeros())
    assert np.allclose(pi, 1.0 / 7, atol=1e-6)
    assert val == pytest.approx(0.5, abs=1e-6)


def test_action_lstm_dimension(net):
    assert net.p("core1.W").shape == (MIX_DIM + 256, 1024)
    assert net.p("core2.W").shape == (512, 1024)
    _, _, state = act(net, np.zeros(MIX_DIM, np.float32), AgentState.zeros())
    assert state.h2.shape == (256,)


# -- weight ties ---------------------------------------------------------------


def test_lp_output_is_embedding_storage(net):
    # writing through the embedding table is observed by the tied output
    h = np.zeros(128, dtype=np.float32)
    h[0] = 1.0
    before = ops.tied_output(Tensor(h), net.tensors["embed.T"],
                             net.cfg.vocab_words).data.copy()
    net.p("embed.T")[5, 0] += 1.0
    after = ops.tied_output(Tensor(h), net.tensors["embed.T"],
                            net.cfg.vocab_words).data
    assert after[5] - before[5] == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(np.delete(after, 5), np.delete(before, 5))
    net.p("embed.T")[5, 0] -= 1.0


def test_tae_action_embedding_is_policy_head_storage(net):
    # write through the policy head; read through the temporal-prediction
    # action embedding path
    rows = ops.embedding_lookup(np.array([2]), net.tensors["policy.W"])
    before = rows.data.copy()
    net.p("policy.W")[2, :] += 0.5
    rows2 = ops.embedding_lookup(np.array([2]), net.tensors["policy.W"])
    assert np.allclose(rows2.data - before, 0.5)
    net.p("policy.W")[2, :] -= 0.5


def test_storage_identity_objects(net):
    # the tie is identity of storage, not a copy
    assert net.tensors["policy.W"].data is net.p("policy.W")
    emb = net.tensors["embed.T"].data
    assert emb.base is net.store.params or emb is net.store.view("embed.T")


# -- recurrent state isolation --------------------------------------------------


def test_interleaved_episodes_match_sequential(net):
    rng = np.random.default_rng(5)
    obs_a = [rng.random((3, 84, 84), dtype=np.float32) for _ in range(4)]
    obs_b = [rng.random((3, 84, 84), dtype=np.float32) for _ in range(4)]
    pad = net.cfg.vocab_words
    l_a = net.encode_language_raw([1, 2], pad)
    l_b = net.encode_language_raw([3, 4], pad)

    def run_sequential(obs, l):
        state = AgentState.zeros()
        outs = []
        for o in obs:
            pi, v, state = net.policy_step(o, l, state)
            outs.append((pi, v))
        return outs

    seq_a = run_sequential(obs_a, l_a)
    seq_b = run_sequential(obs_b, l_b)

    state_a, state_b = AgentState.zeros(), AgentState.zeros()
    inter_a, inter_b = [], []
    for oa, ob in zip(obs_a, obs_b):
        pi, v, state_a = net.policy_step(oa, l_a, state_a)
        inter_a.append((pi, v))
        pi, v, state_b = net.policy_step(ob, l_b, state_b)
        inter_b.append((pi, v))
    for (pa, va), (pb, vb) in zip(seq_a, inter_a):
        assert np.array_equal(pa, pb) and va == vb
    for (pa, va), (pb, vb) in zip(seq_b, inter_b):
        assert np.array_equal(pa, pb) and va == vb


def test_unroll_gradient_reaches_first_conv_layer(net):
    # gradients flow from the policy loss at step 50 back to conv kernels
    rng = np.random.default_rng(2)
    t = 50
    obs = rng.random((t, 3, 84, 84), dtype=np.float32)
    tokens = np.array([1, 2] + [net.cfg.vocab_words] * 8)
    net.zero_grads()
    vision = net.vision_graph(Tensor(obs))
    lang = net.language_graph(tokens, net.cfg.vocab_words)
    mixed = net.mix_graph(vision, lang)
    logits, values, _, _ = net.core_graph(mixed, AgentState.zeros())
    loss = ops.sum_all(ops.mul(logits, logits))
    loss.backward()
    g = net.tensors["conv1.W"].grad
    assert np.abs(g).max() > 0
    assert np.isfinite(net.grads).all()


def test_fast_path_matches_graph_path(net):
    # acting path and tape path compute the same numbers
    rng = np.random.default_rng(8)
    t = 5
    obs = rng.random((t, 3, 84, 84), dtype=np.float32)
    tokens = np.array([1, 2] + [net.cfg.vocab_words] * 8)
    l = net.encode_language_raw(tokens, net.cfg.vocab_words)
    state = AgentState.zeros()
    fast_pis, fast_vals = [], []
    for i in range(t):
        pi, v, state = net.policy_step(obs[i], l, state)
        fast_pis.append(pi)
        fast_vals.append(v)
    vision = net.vision_graph(Tensor(obs))
    lang = net.language_graph(tokens, net.cfg.vocab_words)
    mixed = net.mix_graph(vision, lang)
    logits, values, _, _ = net.core_graph(mixed, AgentState.zeros())
    graph_pis = ops.softmax_raw(logits.data)
    assert np.allclose(graph_pis, np.stack(fast_pis), atol=1e-4)
    assert np.allclose(values.data[:, 0], fast_vals, atol=1e-3)
