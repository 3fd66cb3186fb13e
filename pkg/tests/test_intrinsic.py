import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from opshape.environments import build_env
from opshape.intrinsic import (IMConfig, IntrinsicConfigError, NoveltyModel, VisitCounts, build_im,
                               count_bonus, prediction_error_bonus)


class TestCountBonus:
    def test_first_and_fourth_visit(self):
        counts = VisitCounts.zeros(2)
        values = [count_bonus(counts, 0, 0.6) for _ in range(4)]
        assert values[0] == 0.6
        assert values[3] == pytest.approx(0.3)
        assert counts.counts.tolist() == [4, 0]

    def test_zero_beta(self):
        counts = VisitCounts.zeros(1)
        counts.counts[0] = 17
        assert count_bonus(counts, 0, 0.0) == 0.0

    @given(beta=st.floats(0.01, 10.0), visits=st.integers(2, 50))
    def test_strictly_decreasing(self, beta, visits):
        counts = VisitCounts.zeros(1)
        values = [count_bonus(counts, 0, beta) for _ in range(visits)]
        assert all(b < a for a, b in zip(values, values[1:]))


class TestPredictionError:
    def model(self, target, predictor, lr):
        return NoveltyModel(np.array([target]), np.array([predictor]), lr)

    def test_matched_predictor_is_silent(self):
        m = self.model(0.3, 0.3, 0.5)
        assert [prediction_error_bonus(m, 0) for _ in range(5)] == [0.0] * 5

    def test_one_step_convergence(self):
        m = self.model(1.0, 0.0, 1.0)
        assert [prediction_error_bonus(m, 0) for _ in range(2)] == [1.0, 0.0]

    def test_geometric_ratio(self):
        m = self.model(1.0, 0.0, 0.5)
        values = [prediction_error_bonus(m, 0) for _ in range(6)]
        assert values == pytest.approx([0.25 ** k for k in range(6)], rel=1e-12)

    @settings(max_examples=50)
    @given(lr=st.floats(0.01, 1.0), seed=st.integers(0, 1000))
    def test_non_increasing_and_vanishing(self, lr, seed):
        m = NoveltyModel.seeded(1, seed, lr)
        values = [prediction_error_bonus(m, 0) for _ in range(2000)]
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert values[-1] < 1e-6

    def test_target_is_immutable(self):
        m = NoveltyModel.seeded(3, 0, 0.5)
        with pytest.raises(ValueError):
            m.target[0] = 1.0

    def test_bad_lr(self):
        with pytest.raises(IntrinsicConfigError):
            NoveltyModel.seeded(3, 0, 0.0)


class TestIntrinsicModel:
    def test_noisy_state_never_decays(self, chest, hack_im):
        im = build_im(hack_im, chest)
        assert [im.bonus(2) for _ in range(5)] == [0.6] * 5

    def test_whitelist(self, chest):
        im = build_im(IMConfig(kind="count", beta=1.0, states=("L1",)), chest)
        assert im.bonus(2) == 0.0
        assert im.bonus(1) == 1.0

    def test_state_persists_until_reset(self, chest):
        im = build_im(IMConfig(kind="count", beta=1.0), chest)
        im.bonus(1)
        assert im.bonus(1) == pytest.approx(2 ** -0.5)
        im.reset()
        assert im.bonus(1) == 1.0

    def test_noisy_states_from_environment(self):
        m = build_env("two_path_chest", noisy_cells=("L1",))
        im = build_im(IMConfig(kind="count", beta=0.5), m)
        assert [im.bonus(1) for _ in range(3)] == [0.5] * 3

    def test_scale(self, chest):
        im = build_im(IMConfig(kind="constant", beta=0.8, scale=0.5), chest)
        assert im.bonus(0) == 0.4

    def test_history_determines_bonus(self, chest):
        # same visitation history -> same bonus stream, for every kind
        for kind in ("count", "rnd_tabular", "constant"):
            visits = [1, 2, 1, 1, 3, 2]
            a = build_im(IMConfig(kind=kind, beta=0.7, seed=4), chest)
            b = build_im(IMConfig(kind=kind, beta=0.7, seed=4), chest)
            assert [a.bonus(s) for s in visits] == [b.bonus(s) for s in visits]

    @pytest.mark.parametrize("doc,key", [({"kind": "icm"}, "im.kind"), ({"colour": 1}, "im.colour"),
                                         ({"beta": -1}, "im.beta")])
    def test_config_errors(self, doc, key):
        with pytest.raises(IntrinsicConfigError, match=key.replace(".", r"\.")):
            IMConfig.from_dict(doc)

    def test_unknown_state_name(self, chest):
        with pytest.raises(IntrinsicConfigError, match="'Z'"):
            build_im(IMConfig(noisy_states=("Z",)), chest)
