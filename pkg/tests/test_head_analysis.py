import numpy as np
import pytest

from headclip.datasets import SynthSpec, generate_synthetic
from headclip.head_analysis import (
    affinity_matrix,
    head_directions,
    head_report,
    head_text_affinity,
    head_weight_matrix,
    parse_probes,
    probe_embeddings,
    report_csv,
)
from headclip.training import train
from headclip.config import TrainConfig
from headclip.vision import HEAD_WEIGHTS

PROBES = [[1, 3], [2, 1, 3], [5, 9, 3]]


def test_fresh_weights_are_ones(state):
    m = head_weight_matrix(state)
    assert m.shape == (3, 4)
    np.testing.assert_array_equal(m, 1.0)


def test_weight_matrix_reads_updates_and_is_a_copy(state):
    st = state.copy()
    w = st.params[HEAD_WEIGHTS].copy()
    w[1, 2] = 2.5
    st.params[HEAD_WEIGHTS] = w
    m = head_weight_matrix(st)
    assert m[1, 2] == 2.5
    m[:] = 0.0
    assert st.params[HEAD_WEIGHTS][1, 2] == 2.5


def test_affinity_shape_and_bounds(state, images):
    aff = head_text_affinity(state, PROBES, images)
    assert aff.shape == (3, 4, 3)
    assert np.all(np.abs(aff) <= 1.0)


def test_identical_probes_identical_columns(state, images):
    aff = head_text_affinity(state, [[1, 3], [1, 3]], images)
    assert aff[..., 0].tobytes() == aff[..., 1].tobytes()


def test_injected_head_equal_to_probe_has_unit_affinity(state, images):
    probes = probe_embeddings(state, PROBES)
    directions = head_directions(state, images)
    directions[2, 1] = 3.0 * probes[1]
    aff = affinity_matrix(directions, probes)
    assert aff[2, 1, 1] == pytest.approx(1.0, abs=1e-12)


def test_affinity_invariant_to_probe_rescaling(state, images):
    probes = probe_embeddings(state, PROBES)
    directions = head_directions(state, images)
    a = affinity_matrix(directions, probes)
    b = affinity_matrix(directions, probes * np.array([[0.5], [7.0], [1e-3]]))
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_empty_probe_list_rejected(state, images):
    with pytest.raises(ValueError):
        head_text_affinity(state, [], images)


def test_report_rows_and_amplified_flag(state):
    st = state.copy()
    w = np.ones((3, 4))
    w[0, 0], w[2, 3] = 1.0 + 1e-12, 0.7
    st.params[HEAD_WEIGHTS] = w
    rows = head_report(st)
    assert len(rows) == 12
    assert len({(r.layer, r.head) for r in rows}) == 12
    assert [(r.layer, r.head) for r in rows if r.amplified] == [(1, 0)]
    csv_text = report_csv(rows)
    assert csv_text.splitlines()[0] == "layer,head,weight,amplified"
    assert len(csv_text.splitlines()) == 13


def test_fresh_report_has_no_amplified_heads(state):
    assert not any(r.amplified for r in head_report(state))


def test_report_with_probes(state, images):
    rows = head_report(state, PROBES, images)
    text = report_csv(rows, len(PROBES))
    assert text.splitlines()[0].endswith("probe0,probe1,probe2")
    assert all(len(r.affinities) == 3 for r in rows)


def test_training_moves_weights_off_one(state):
    data = generate_synthetic(SynthSpec(seed=11, n_normal=8, n_abnormal=8))
    for seed in range(3):
        trained, _ = train(data, state, TrainConfig(epochs=2, seed=seed))
        assert np.any(head_weight_matrix(trained) != 1.0)


def test_parse_probes():
    assert parse_probes("1 3\n# comment\n\n2, 1, 3\n", 64) == [[1, 3], [2, 1, 3]]
    for bad in ("1 x\n", "1 64\n", "# nothing\n"):
        with pytest.raises(ValueError):
            parse_probes(bad, 64)
