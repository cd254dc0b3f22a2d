import importlib
import dcor
import numpy as np
import pytest
from scipy.spatial.distance import cdist

from src.core.exceptions import (
    EnsembleAbortedError,
    GeneratorFailure,
    InferenceRefusal,
    ValidationFailure,
)
from src.models.generator import JodreyTory, RSAInit, VisscherBolsterli
from src.models.inference import ModelEnsemble
from src.services.analysis_service import columns_of, default_panel, resolve_descriptors
from src.services.inference_service import (
    InferenceService,
    energy_statistic,
    holm,
    realization_seed,
    standardize,
)

service = InferenceService(workers=1, n_permutations=199)
RSA = RSAInit(n=30, dimension=2, target_fraction=0.2)


def ensemble(matrix, descriptors=None):
    matrix = np.asarray(matrix, dtype=float)
    descriptors = descriptors or tuple(f"s{k}" for k in range(matrix.shape[1]))
    return ModelEnsemble(
        descriptors=tuple(descriptors),
        columns=tuple(descriptors),
        matrix=matrix,
        seeds=tuple(range(len(matrix))),
    )


def test_energy_statistic_matches_dcor(rng):
    x = rng.normal(size=(15, 3))
    y = rng.normal(0.5, 1.2, size=(11, 3))
    pooled = np.vstack([x, y])
    labels = np.arange(len(pooled)) < len(x)
    ours = energy_statistic(cdist(pooled, pooled), labels)
    assert ours == pytest.approx(dcor.energy_distance(x, y), rel=1e-10)


def test_identical_ensembles_give_zero_statistic_and_p_one(rng):
    matrix = rng.normal(size=(12, 3))
    result = service.energy_distance_test(ensemble(matrix), ensemble(matrix), seed=1)
    assert result.statistic == pytest.approx(0.0, abs=1e-12)
    assert result.p_value == 1.0


def test_shifted_ensembles_are_separated(rng):
    a = ensemble(rng.normal(size=(20, 3)))
    b = ensemble(rng.normal(3.0, 1.0, size=(20, 3)))
    result = service.energy_distance_test(a, b, seed=2)
    assert result.p_value == pytest.approx(1 / 200)
    assert all(v < -0.5 for v in result.diagnostics.values())


def test_energy_test_is_reproducible_and_unit_free(rng):
    x = rng.normal(size=(10, 2))
    y = rng.normal(0.4, 1.0, size=(10, 2))
    first = service.energy_distance_test(ensemble(x), ensemble(y), seed=3)
    again = service.energy_distance_test(ensemble(x), ensemble(y), seed=3)
    scale = np.array([1000.0, 0.001])
    rescaled = service.energy_distance_test(
        ensemble(x * scale + 5.0), ensemble(y * scale + 5.0), seed=3
    )
    assert first == again
    assert rescaled.statistic == pytest.approx(first.statistic, rel=1e-9)
    assert rescaled.p_value == first.p_value


def test_constant_columns_are_dropped(rng):
    x = np.column_stack([rng.normal(size=8), rng.normal(size=8), np.ones(8)])
    y = np.column_stack([rng.normal(size=8), rng.normal(size=8), np.ones(8)])
    result = service.energy_distance_test(ensemble(x), ensemble(y), n_permutations=19)
    assert result.dropped == ("s2",)
    assert result.columns == ("s0", "s1")


def test_energy_test_refuses_single_informative_column(rng):
    x = np.column_stack([rng.normal(size=8), np.zeros(8)])
    y = np.column_stack([rng.normal(size=8), np.zeros(8)])
    with pytest.raises(InferenceRefusal):
        service.energy_distance_test(ensemble(x), ensemble(y))


def test_mismatched_descriptors_are_rejected(rng):
    a = ensemble(rng.normal(size=(5, 2)), ("m1", "q6"))
    b = ensemble(rng.normal(size=(5, 2)), ("m1", "r_bulk"))
    with pytest.raises(ValidationFailure):
        service.energy_distance_test(a, b)


def test_standardize_uses_median_and_iqr():
    pooled = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0], [4.0, 5.0], [100.0, 5.0]])
    z, keep = standardize(pooled)
    assert keep.tolist() == [True, False]
    assert z[2, 0] == 0.0
    assert z[3, 0] == pytest.approx(1.0 / 2.0)


def test_holm_adjustment():
    adjusted = holm([0.01, 0.04, 0.03])
    assert adjusted == pytest.approx([0.03, 0.06, 0.06])
    assert holm([0.5, 0.9]) == pytest.approx([1.0, 1.0])


def test_ks_battery_flags_shifted_columns(rng):
    x = np.column_stack([rng.normal(size=40), rng.normal(size=40)])
    y = np.column_stack([x[:, 0], rng.normal(4.0, 1.0, size=40)])
    battery = service.ks_battery(ensemble(x), ensemble(y), alpha=0.05)
    assert battery.rejections == ("s1",)
    assert all(d.adjusted_p >= d.p_value for d in battery.decisions)


def test_ks_battery_validates_alpha(rng):
    a = ensemble(rng.normal(size=(5, 2)))
    with pytest.raises(ValidationFailure):
        service.ks_battery(a, a, alpha=1.5)


def test_descriptor_panel_resolution():
    assert resolve_descriptors(None, 2) == default_panel(2)
    assert "q6" in default_panel(3) and "defect_fraction" in default_panel(2)
    assert columns_of(["g_peaks"]) == ("g_peaks@1.000", "g_peaks@1.730", "g_peaks@2.000")
    with pytest.raises(ValidationFailure):
        resolve_descriptors(["m1", "colour"], 3)
    with pytest.raises(ValidationFailure):
        resolve_descriptors(["m1", "m1"], 3)


def test_ensemble_select_follows_requested_order():
    e = ModelEnsemble(
        descriptors=("m1", "g_peaks"),
        columns=("m1", *columns_of(["g_peaks"])),
        matrix=np.arange(8.0).reshape(2, 4),
        seeds=(1, 2),
    )
    columns, sub = e.select(["g_peaks", "m1"])
    assert columns[-1] == "m1"
    assert sub[:, -1].tolist() == [0.0, 4.0]


def test_ensemble_is_deterministic():
    first = service.run_ensemble(RSA, 3, master_seed=11, descriptors=["m1", "mean_coordination"])
    again = service.run_ensemble(RSA, 3, master_seed=11, descriptors=["m1", "mean_coordination"])
    assert first.seeds == again.seeds == tuple(realization_seed(11, i) for i in range(3))
    assert np.array_equal(first.matrix, again.matrix)
    assert first.columns == ("m1", "mean_coordination")
    assert first.failures == ()


def test_ensemble_needs_two_realizations():
    with pytest.raises(ValidationFailure):
        service.run_ensemble(RSA, 1, master_seed=0, descriptors=["m1"])


def test_ensemble_aborts_when_too_many_realizations_fail(mocker):
    # src.services re-exports the `inference_service` instance, which shadows the
    # submodule for dotted patch paths; patch the module object directly.
    mocker.patch.object(
        importlib.import_module("src.services.inference_service"),
        "generate",
        side_effect=GeneratorFailure("saturated", seed=0),
    )
    with pytest.raises(EnsembleAbortedError):
        service.run_ensemble(RSA, 4, master_seed=0, descriptors=["m1"])


def fake_run_ensemble(curve):
    def run(spec, size, master_seed, names, rule=None, workers=None):
        value = curve(spec.target_fraction)
        matrix = np.full((size, 1), value) + np.linspace(0.0, 1e-3, size)[:, None]
        return ModelEnsemble(
            spec=spec,
            master_seed=master_seed,
            descriptors=("m1",),
            columns=("m1",),
            matrix=matrix,
            seeds=tuple(range(size)),
        )

    return run


def test_minimum_contrast_recovers_the_generating_parameter(mocker):
    fitter = InferenceService(workers=1, n_permutations=19)
    mocker.patch.object(fitter, "run_ensemble", side_effect=fake_run_ensemble(lambda f: f))
    data = ensemble(np.full((6, 1), 0.2) + np.linspace(0.0, 1e-3, 6)[:, None], ("m1",))
    fit = fitter.min_contrast_fit(RSA, "target_fraction", [0.3, 0.1, 0.2], data, descriptor="m1")
    assert fit.grid == (0.1, 0.2, 0.3)
    assert fit.best == 0.2
    assert fit.identifiable
    assert fit.minimum == pytest.approx(0.0, abs=1e-12)


def test_fit_holds_out_the_other_stored_descriptors(mocker):
    fitter = InferenceService(workers=1, n_permutations=19)
    panel = ("m1", "q6", "mean_coordination")
    requested = []

    def run(spec, size, master_seed, names, rule=None, workers=None):
        requested.append(tuple(names))
        noise = np.random.default_rng(master_seed).normal(size=(size, 2))
        matrix = np.column_stack([np.full(size, spec.target_fraction), noise + 5.0])
        matrix[:, 0] += np.linspace(0.0, 1e-3, size)
        return ModelEnsemble(
            spec=spec,
            master_seed=master_seed,
            descriptors=panel,
            columns=panel,
            matrix=matrix,
            seeds=tuple(range(size)),
        )

    mocker.patch.object(fitter, "run_ensemble", side_effect=run)
    rows = np.random.default_rng(1).normal(size=(8, 2))
    data = ensemble(np.column_stack([np.full(8, 0.2), rows]), panel)
    fit = fitter.min_contrast_fit(RSA, "target_fraction", [0.1, 0.2], data, descriptor="m1")
    assert requested[0] == panel
    assert fit.held_out is not None
    assert fit.held_out.columns == ("q6", "mean_coordination")
    assert fit.held_out.p_value < 0.1

    skipped = fitter.min_contrast_fit(
        RSA, "target_fraction", [0.1, 0.2], data, descriptor="m1", held_out=[]
    )
    assert skipped.held_out is None


def test_flat_contrast_profile_is_not_identifiable(mocker):
    fitter = InferenceService(workers=1, n_permutations=19)
    mocker.patch.object(fitter, "run_ensemble", side_effect=fake_run_ensemble(lambda f: 0.25))
    data = ensemble(np.full((6, 1), 0.2) + np.linspace(0.0, 1e-3, 6)[:, None], ("m1",))
    fit = fitter.min_contrast_fit(RSA, "target_fraction", [0.1, 0.2, 0.3], data, descriptor="m1")
    assert not fit.identifiable
    assert fit.argmin == 0


def test_failed_grid_points_have_infinite_contrast(mocker):
    fitter = InferenceService(workers=1, n_permutations=19)
    good = fake_run_ensemble(lambda f: f)

    def flaky(spec, *args, **kwargs):
        if spec.target_fraction > 0.25:
            raise EnsembleAbortedError("too many failures")
        return good(spec, *args, **kwargs)

    mocker.patch.object(fitter, "run_ensemble", side_effect=flaky)
    data = ensemble(np.full((6, 1), 0.3) + np.linspace(0.0, 1e-3, 6)[:, None], ("m1",))
    fit = fitter.min_contrast_fit(RSA, "target_fraction", [0.2, 0.3], data, descriptor="m1")
    assert fit.contrasts[1] == float("inf")
    assert fit.best == 0.2

    mocker.patch.object(fitter, "run_ensemble", side_effect=EnsembleAbortedError("all failed"))
    with pytest.raises(InferenceRefusal):
        fitter.min_contrast_fit(RSA, "target_fraction", [0.2, 0.3], data, descriptor="m1")


@pytest.mark.parametrize(
    "parameter, grid, replications",
    [("target_fraction", [0.2], 5), ("target_fraction", [0.1, 0.2], 4), ("algorithm", [1, 2], 5)],
)
def test_minimum_contrast_validates_its_inputs(parameter, grid, replications):
    data = ensemble(np.zeros((3, 1)), ("m1",))
    with pytest.raises(ValidationFailure):
        service.min_contrast_fit(RSA, parameter, grid, data, "m1", replications=replications)


@pytest.mark.slow
def test_parallel_ensemble_matches_serial():
    serial = service.run_ensemble(RSA, 4, master_seed=5, descriptors=["m1", "g_peaks"])
    parallel = service.run_ensemble(
        RSA, 4, master_seed=5, descriptors=["m1", "g_peaks"], workers=2
    )
    assert np.array_equal(serial.matrix, parallel.matrix)


@pytest.mark.slow
def test_dense_and_deposited_ensembles_are_told_apart():
    dense = service.run_ensemble(JodreyTory(n=500, dimension=3), 20, master_seed=1)
    deposited = service.run_ensemble(VisscherBolsterli(n=1000, dimension=3), 20, master_seed=2)
    assert service.energy_distance_test(dense, deposited, n_permutations=999).p_value < 0.01
    battery = service.ks_battery(dense, deposited)
    assert min(d.adjusted_p for d in battery.decisions) < 0.01
