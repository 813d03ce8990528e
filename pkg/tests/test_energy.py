import math

import numpy as np
import pytest
import torch

from energyssl.energy import (
    PseudoLabelRecord,
    SelectionConfig,
    audit,
    energy_score,
    select,
)
from energyssl.errors import ConfigError, DataError, NumericError


def _oracle_energy(logits: np.ndarray, t: float) -> np.ndarray:
    """Direct float64 log-sum-exp, no stabilization tricks beyond float64."""
    z = np.asarray(logits, dtype=np.float64) / t
    m = z.max(axis=-1, keepdims=True)
    return -t * (np.log(np.exp(z - m).sum(axis=-1)) + m[..., 0])


class TestEnergyScore:
    def test_matches_float64_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            k = int(rng.integers(2, 20))
            t = float(rng.uniform(0.1, 5.0))
            logits = rng.normal(0, 5, size=(8, k))
            got = energy_score(torch.tensor(logits, dtype=torch.float64), t).numpy()
            np.testing.assert_allclose(got, _oracle_energy(logits, t), rtol=1e-9)

    def test_zero_logits_closed_form(self):
        for k in (2, 5, 10):
            for t in (0.5, 1.0, 2.0):
                e = energy_score(torch.zeros(1, k, dtype=torch.float64), t)
                assert abs(float(e) + t * math.log(k)) <= 1e-12

    def test_bounds(self):
        rng = np.random.default_rng(1)
        logits = torch.tensor(rng.normal(0, 3, size=(100, 7)), dtype=torch.float64)
        e = energy_score(logits, 1.0).numpy()
        mx = logits.numpy().max(axis=-1)
        assert (e <= -mx + 1e-12).all()
        assert (e >= -mx - math.log(7) - 1e-12).all()

    def test_invalid_inputs(self):
        with pytest.raises(ConfigError):
            energy_score(torch.zeros(1, 3), 0.0)
        with pytest.raises(NumericError):
            energy_score(torch.tensor([[float("nan"), 0.0]]), 1.0)


class TestSelect:
    def test_strict_inequality_at_boundary(self):
        """A sample whose energy equals tau_e exactly must not be selected."""
        k = 4
        tau = -math.log(k)  # energy of the zero-logit vector at T=1
        cfg = SelectionConfig(tau_e=tau, temperature=1.0)
        logits = torch.zeros(1, k, dtype=torch.float64)
        assert float(energy_score(logits, 1.0)) == pytest.approx(tau, abs=1e-15)
        mask, records, _ = select([0], logits, cfg, iteration=0)
        assert not bool(mask[0]) and records == []

    def test_below_threshold_selected(self):
        cfg = SelectionConfig(tau_e=-5.0)
        logits = torch.tensor([[10.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        mask, records, _ = select([7, 8], logits, cfg, iteration=3)
        assert mask.tolist() == [True, False]
        assert records[0].sample_id == 7
        assert records[0].predicted_class == 0
        assert records[0].iteration == 3

    def test_threshold_nesting(self):
        rng = np.random.default_rng(2)
        logits = torch.tensor(rng.normal(0, 4, size=(64, 5)), dtype=torch.float64)
        ids = list(range(64))
        prev = None
        for tau in (-8.0, -6.0, -4.0, -2.0):
            mask, _, _ = select(ids, logits, SelectionConfig(tau_e=tau), 0)
            sel = set(np.flatnonzero(mask.numpy()).tolist())
            if prev is not None:
                assert prev <= sel
            prev = sel

    def test_stateless_across_iterations(self):
        logits = torch.tensor(np.random.default_rng(3).normal(0, 4, size=(16, 5)))
        cfg = SelectionConfig(tau_e=-4.0)
        m1, _, e1 = select(list(range(16)), logits, cfg, iteration=0)
        m2, _, e2 = select(list(range(16)), logits, cfg, iteration=999)
        assert m1.tolist() == m2.tolist()
        np.testing.assert_array_equal(e1.numpy(), e2.numpy())

    def test_confidence_baseline(self):
        cfg = SelectionConfig(baseline_mode="confidence", tau_c=0.9)
        logits = torch.tensor([[8.0, 0.0], [0.1, 0.0]])
        mask, _, _ = select([0, 1], logits, cfg, 0)
        conf = torch.softmax(logits, dim=-1).max(dim=-1).values
        assert mask.tolist() == (conf > 0.9).tolist()

    def test_invalid_selection_config(self):
        with pytest.raises(ConfigError):
            SelectionConfig(temperature=-1.0)
        with pytest.raises(ConfigError):
            SelectionConfig(baseline_mode="magic")
        with pytest.raises(ConfigError):
            SelectionConfig(baseline_mode="confidence", tau_c=1.5)


class TestAudit:
    def _records(self):
        return [
            PseudoLabelRecord(sample_id=0, predicted_class=0, energy=-5.0, iteration=1),
            PseudoLabelRecord(sample_id=1, predicted_class=0, energy=-7.0, iteration=1),
            PseudoLabelRecord(sample_id=2, predicted_class=1, energy=-6.0, iteration=1),
        ]

    def test_counts_and_rates(self):
        hidden = {0: 0, 1: 1, 2: 1, 3: 2}
        rows = audit(self._records(), hidden, num_classes=3)
        assert rows[0]["selected"] == 2 and rows[0]["correct"] == 1
        assert rows[0]["precision"] == pytest.approx(0.5)
        assert rows[0]["recall"] == pytest.approx(1.0)  # one true class-0 sample
        assert rows[0]["mean_energy"] == pytest.approx(-6.0)
        assert rows[1]["selected"] == 1 and rows[1]["correct"] == 1
        assert rows[1]["recall"] == pytest.approx(0.5)

    def test_none_semantics_for_empty_denominators(self):
        hidden = {0: 0, 1: 1, 2: 1}
        rows = audit(self._records(), hidden, num_classes=4)
        assert rows[2]["precision"] is None and rows[2]["mean_energy"] is None
        assert rows[2]["recall"] is None  # no class-2 samples in the pool
        assert rows[3]["selected"] == 0

    def test_explicit_pool_counts(self):
        hidden = {0: 0, 1: 1, 2: 1}
        rows = audit(self._records(), hidden, 3, unlabeled_class_counts=[4, 2, 0])
        assert rows[0]["recall"] == pytest.approx(0.25)

    def test_unknown_sample_id_raises(self):
        with pytest.raises(DataError):
            audit(self._records(), {0: 0}, num_classes=3)
