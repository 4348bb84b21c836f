import numpy as np
import pytest

from headclip.config import ModelConfig
from headclip.diffcore import Tensor, backward
from headclip.model import HeadCLIPState
from headclip.text import (
    ABNORMAL,
    DEEP,
    NORMAL,
    NORMAL_SUFFIX,
    PromptState,
    cosine_sim,
    encode_prompts,
    encode_sequence,
)

CFG = ModelConfig()


def test_prompt_embedding_shapes(p):
    text = encode_prompts(p, CFG)
    assert text.f_normal.shape == (32,) and text.f_abnormal.shape == (32,)


def test_identical_prompts_identical_embeddings(state, p):
    prompts = PromptState.from_params(state.params)
    prompts.abnormal_tokens = prompts.normal_tokens.copy()
    prompts.abnormal_suffix = prompts.normal_suffix
    text = encode_prompts(p, CFG, prompts)
    assert text.f_normal.data.tobytes() == text.f_abnormal.data.tobytes()


def test_prompt_state_matches_parameter_route(state, p):
    a = encode_prompts(p, CFG)
    b = encode_prompts(p, CFG, PromptState.from_params(state.params))
    assert a.f_abnormal.data.tobytes() == b.f_abnormal.data.tobytes()


def test_deep_tokens_change_output(p):
    base = encode_prompts(p, CFG).f_normal.data
    q = dict(p)
    deep = p[DEEP].data.copy()
    deep[0, 1, 3] += 0.5
    q[DEEP] = Tensor(deep)
    assert not np.array_equal(base, encode_prompts(q, CFG).f_normal.data)


def test_second_layer_deep_block_is_injected():
    cfg = CFG.replace(prompt_depth=2)
    p = HeadCLIPState.initialize(cfg).tensors(track=False)
    base = encode_prompts(p, cfg).f_normal.data
    deep = p[DEEP].data.copy()
    assert deep.shape == (2, cfg.n_deep, 32)
    deep[1, 0, 0] += 0.5
    p[DEEP] = Tensor(deep)
    assert not np.array_equal(base, encode_prompts(p, cfg).f_normal.data)


def test_depth_zero_ignores_deep_tokens():
    cfg = CFG.replace(prompt_depth=0)
    p = HeadCLIPState.initialize(cfg).tensors(track=False)
    assert p[DEEP].shape == (0, cfg.n_deep, 32)
    assert encode_prompts(p, cfg).f_normal.shape == (32,)


def test_gradients_reach_every_prompt_parameter(state):
    p = state.tensors(track=True)
    text = encode_prompts(p, CFG)
    loss = (text.f_normal * text.f_abnormal).sum()
    grads = backward(loss, {k: p[k] for k in (NORMAL, ABNORMAL, DEEP)})
    assert all(np.abs(g).max() > 0 for g in grads.values())


def test_vocabulary_range_checked(p):
    with pytest.raises(ValueError, match="out of range"):
        encode_sequence([1, 64], p, CFG)
    with pytest.raises(ValueError):
        encode_sequence([], p, CFG)


def test_context_length_enforced(p):
    with pytest.raises(ValueError, match="context length"):
        encode_sequence(list(NORMAL_SUFFIX) * 9, p, CFG)


def test_cosine_examples():
    v = np.array([0.3, -2.0, 1.1])
    assert cosine_sim(v, v) == pytest.approx(1.0, abs=1e-15)
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 1], [1, 0]) == pytest.approx(1 / np.sqrt(2), abs=1e-15)
    with pytest.raises(ValueError):
        cosine_sim([0, 0], [1, 0])
