"""
Tests for hard-concrete gates: sampling, binarization, polarization and the
L1 / expected-L0 penalties
"""

import numpy as np
import pytest

from components.layout import UNMASKED, DimSpec, TensorSpec
from config.settings import GateConfig
from core.gradcheck import check_gradients
from core.tensor import Tensor
from services.gate_service import (
    GateParam,
    GateSample,
    binarize,
    expected_l0,
    gate_polarization,
    gate_rng,
    keep_probability,
    mask_l1,
    open_probability,
    sample_gate,
)
from services.prune_plan import PrunePlan, compose_mask
from utils.errors import SamplerError, UsageError


def make_gate(values, **config) -> GateParam:
    gate = GateParam.create("g", len(values), GateConfig(**config))
    gate.log_alpha.data[...] = values
    return gate


def make_matrix_plan(gate_config=None) -> PrunePlan:
    """One 2x3 weight with a row gate and a column gate"""
    return PrunePlan.from_layout(
        [DimSpec("rows", 2, "test"), DimSpec("cols", 3, "test")],
        [TensorSpec("w", (2, 3), ("rows", "cols"))],
        gate_config or GateConfig(),
    )


def make_three_tensor_plan(gate_config=None) -> PrunePlan:
    dims = [DimSpec("a", 3, "test"), DimSpec("b", 4, "test"), DimSpec("c", 2, "test")]
    layout = [
        TensorSpec("w1", (3, 4), ("a", "b")),
        TensorSpec("b1", (4,), ("b",)),
        TensorSpec("w2", (4, 5, 2), ("b", UNMASKED, "c")),
    ]
    return PrunePlan.from_layout(dims, layout, gate_config or GateConfig())


# ============================================================================
# sampling
# ============================================================================

def test_sample_at_zero_logit_and_half_uniform():
    sample = sample_gate(make_gate([0.0]), u=np.array([0.5]))
    assert sample.s.data[0] == pytest.approx(0.5)
    assert sample.z.data[0] == pytest.approx(0.5)


def test_sample_saturates_for_large_logit(audit):
    sample = sample_gate(make_gate([20.0]), u=np.array([0.5]))
    assert sample.z.data[0] >= 1 - 1e-8


def test_sample_with_stretch():
    gate = make_gate([0.0], gamma=-0.1, eta=1.1)
    sample = sample_gate(gate, u=np.array([0.5]))
    assert sample.s.data[0] == pytest.approx(0.5)
    assert sample.z.data[0] == pytest.approx(-0.1 + 0.5 * 1.2)


def test_stretched_sample_is_clamped():
    gate = make_gate([-30.0, 30.0], gamma=-0.1, eta=1.1)
    sample = sample_gate(gate, u=np.array([0.5, 0.5]))
    np.testing.assert_array_equal(sample.z.data, [0.0, 1.0])


def test_default_gates_lie_strictly_inside_unit_interval():
    gate = make_gate(np.linspace(-5, 5, 11))
    sample = sample_gate(gate, gate_rng(0, 0, "g"))
    assert np.all(sample.u > 0) and np.all(sample.u < 1)
    assert np.all(sample.z.data > 0) and np.all(sample.z.data < 1)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.5])
def test_uniform_outside_open_interval_is_rejected(u):
    with pytest.raises(SamplerError):
        sample_gate(make_gate([0.0]), u=np.array([u]))


def test_sampling_needs_a_noise_source():
    with pytest.raises(UsageError):
        sample_gate(make_gate([0.0]))


def test_samples_replay_from_seed_step_and_name():
    gate = make_gate([0.3, -0.2, 1.0])
    first = sample_gate(gate, gate_rng(5, 17, "enc.0.heads"))
    again = sample_gate(gate, gate_rng(5, 17, "enc.0.heads"))
    other = sample_gate(gate, gate_rng(5, 18, "enc.0.heads"))
    np.testing.assert_array_equal(first.u, again.u)
    assert not np.array_equal(first.u, other.u)


def test_sample_is_monotone_in_log_alpha():
    u = np.full(7, 0.3)
    low = sample_gate(make_gate(np.linspace(-3, 3, 7)), u=u)
    high = sample_gate(make_gate(np.linspace(-3, 3, 7) + 0.5), u=u)
    assert np.all(high.z.data >= low.z.data)
    assert np.all(np.diff(low.z.data) >= 0)


# ============================================================================
# binarization and polarization
# ============================================================================

def test_binarize_keeps_the_boundary():
    np.testing.assert_array_equal(binarize(make_gate([0.0])), [1])
    np.testing.assert_array_equal(binarize(make_gate([-0.1])), [0])
    np.testing.assert_array_equal(binarize(make_gate([-3.0, 0.0, 3.0])), [0, 1, 1])


@pytest.mark.parametrize("beta", [0.1, 1.0, 7.5])
def test_binarize_ignores_temperature(beta):
    gate = make_gate([-2.0, -0.01, 0.0, 0.5], beta=beta)
    np.testing.assert_array_equal(binarize(gate), [0, 0, 1, 1])


def test_keep_probability_is_sigmoid():
    np.testing.assert_allclose(keep_probability(make_gate([0.0, 2.0])), [0.5, 1 / (1 + np.exp(-2.0))])


def test_polarization_examples():
    assert gate_polarization([make_gate([20.0, -20.0, 20.0])]) == 0.0
    assert gate_polarization([make_gate([0.0, 0.0])]) == 1.0
    assert gate_polarization([make_gate([0.0, 20.0, -20.0, 20.0])]) == 0.25


def test_polarization_pools_every_gate():
    assert gate_polarization([make_gate([0.0]), make_gate([20.0, 20.0, -20.0])]) == 0.25


def test_polarization_of_empty_set_is_undefined():
    with pytest.raises(UsageError):
        gate_polarization([])


# ============================================================================
# penalties
# ============================================================================

def test_mask_l1_factorizes_over_axes():
    plan = make_matrix_plan()
    samples = {"rows": GateSample.fixed([1.0, 1.0]), "cols": GateSample.fixed([1.0, 0.5, 0.0])}
    assert mask_l1(plan, samples).item() == pytest.approx(3.0)


def test_mask_l1_with_all_ones_counts_maskable_parameters():
    plan = make_three_tensor_plan()
    assert mask_l1(plan, plan.ones_samples()).item() == pytest.approx(plan.maskable_count())
    assert plan.maskable_count() == 12 + 4 + 40


def test_mask_l1_matches_elementwise_sum(audit):
    plan = make_three_tensor_plan()
    rng = np.random.default_rng(0)
    samples = {dim.name: GateSample.fixed(rng.uniform(size=dim.extent)) for dim in plan.dims}
    brute = 0.0
    for binding in plan.maskable_bindings():
        mask = compose_mask(binding, samples).data
        for value in mask.reshape(-1):
            brute += abs(value)
    assert abs(mask_l1(plan, samples).item() - brute) < 1e-10


def test_mask_l1_missing_sample():
    plan = make_matrix_plan()
    with pytest.raises(UsageError):
        mask_l1(plan, {"rows": GateSample.fixed([1.0, 1.0])})


def test_mask_l1_gradient_with_replayed_noise(audit):
    plan = make_three_tensor_plan(GateConfig(gamma=-0.1, eta=1.1))
    rng = np.random.default_rng(1)
    for dim in plan.dims:
        dim.gate.log_alpha.data[...] = rng.uniform(-1, 1, dim.extent)
    noise = {dim.name: rng.uniform(0.2, 0.8, dim.extent) for dim in plan.dims}

    def loss():
        samples = {dim.name: sample_gate(dim.gate, u=noise[dim.name]) for dim in plan.dims}
        return mask_l1(plan, samples)

    result = check_gradients(loss, plan.gate_parameters(), n_points=10, rng=rng)
    assert result.passed(1e-4), result


def test_expected_l0_gradient(audit):
    plan = make_three_tensor_plan(GateConfig(gamma=-0.1, eta=1.1, penalty="expected"))
    rng = np.random.default_rng(2)
    for dim in plan.dims:
        dim.gate.log_alpha.data[...] = rng.normal(size=dim.extent)
    result = check_gradients(lambda: expected_l0(plan), plan.gate_parameters(), n_points=10, rng=rng)
    assert result.passed(1e-4), result


def test_open_probability_forms(audit):
    plain = make_gate([0.0, 1.0])
    np.testing.assert_allclose(open_probability(plain).data, keep_probability(plain))
    stretched = make_gate([0.0], gamma=-0.1, eta=1.1)
    expected = 1 / (1 + np.exp(np.log(0.1 / 1.1)))
    assert open_probability(stretched).data[0] == pytest.approx(expected)


def test_expected_l0_approaches_count_for_open_gates():
    plan = make_three_tensor_plan()
    for dim in plan.dims:
        dim.gate.log_alpha.data[...] = 30.0
    assert expected_l0(plan).item() == pytest.approx(plan.maskable_count(), rel=1e-6)


def test_gate_logits_are_trainable_tensors():
    gate = GateParam.create("enc.0.ffn.df", 5, GateConfig(init_log_alpha=2.5))
    assert isinstance(gate.log_alpha, Tensor) and gate.log_alpha.requires_grad
    assert gate.extent == 5
    np.testing.assert_allclose(gate.log_alpha.data, 2.5)
