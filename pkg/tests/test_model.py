"""Assembled-pipeline tests: variant wiring, joint losses, inference."""

import numpy as np
import pytest

from eegimpute.errors import ConfigError, ContractError
from eegimpute.model import (
    VARIANTS,
    Prediction,
    build_model,
    forward_train,
    infer,
    wire_variant,
)
from eegimpute.montage import EEGRecording, canonical_names


def small_model(variant="UNI", seed=0, **kw):
    """4-channel native geometry; cheap enough for loops."""
    args = dict(
        num_channels=4,
        input_len=32,
        patch_len=8,
        num_classes=2,
        embed_dim=4,
        pos_dim=4,
        num_heads=2,
        imputer_blocks=1,
        seed=seed,
    )
    args.update(kw)
    return build_model(variant, **args)


def small_recording(seed=0, label=1, missing=()):
    rng = np.random.default_rng(seed)
    return EEGRecording(
        samples=rng.normal(size=(32, 4)),
        channel_names=("a", "b", "c", "d"),
        sample_rate_hz=64.0,
        label=label,
        missing_channels=missing,
    )


def grid_model(variant="full", seed=0):
    return build_model(
        variant,
        num_channels=64,
        input_len=64,
        patch_len=16,
        num_classes=4,
        embed_dim=8,
        pos_dim=8,
        num_heads=2,
        imputer_blocks=1,
        seed=seed,
    )


def grid_recording(seed=0, label=2, missing=()):
    rng = np.random.default_rng(seed)
    return EEGRecording(
        samples=rng.normal(size=(64, 64)),
        channel_names=canonical_names(),
        sample_rate_hz=64.0,
        label=label,
        missing_channels=missing,
    )


SEEDS = ([0, 9001, 0, 0, 0], [0, 9001, 0, 0, 1])


class TestVariantWiring:
    def test_full_runs_every_stage(self):
        w = wire_variant("full")
        assert w.unify_layout and w.decomposition
        assert w.imputation and w.classify_reconstruction

    def test_each_ablation_disables_one_stage(self):
        assert not wire_variant("IMP").imputation
        assert not wire_variant("DEC").decomposition
        assert not wire_variant("DEC").classify_reconstruction
        assert not wire_variant("UNI").unify_layout

    def test_variant_list(self):
        assert set(VARIANTS) == {"full", "IMP", "DEC", "UNI"}
        for v in VARIANTS:
            wire_variant(v)

    def test_unknown_variant_rejected(self):
        with pytest.raises(ConfigError):
            wire_variant("bogus")
        with pytest.raises(ConfigError):
            build_model("bogus", 4, 32, 8, 2)


class TestBuildModel:
    def test_same_seed_reproduces_parameters(self):
        a = small_model(seed=3)
        b = small_model(seed=3)
        for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_different_seed_differs(self):
        a = small_model(seed=0)
        b = small_model(seed=1)
        same = all(
            np.array_equal(ta.data, tb.data)
            for (_, ta), (_, tb) in zip(a.parameters(), b.parameters())
        )
        assert not same

    def test_variants_share_initial_parameters(self):
        a = small_model(variant="UNI", seed=5)
        b = small_model(variant="IMP", seed=5)
        for (na, ta), (nb, tb) in zip(a.parameters(), b.parameters()):
            assert na == nb
            np.testing.assert_array_equal(ta.data, tb.data)

    def test_parameter_names_unique_and_grouped(self):
        model = small_model()
        names = [n for n, _ in model.parameters()]
        assert len(names) == len(set(names))
        prefixes = {n.split("/")[0] for n in names}
        assert prefixes == {"pool", "encoder", "imputer", "classifier"}

    def test_indivisible_patch_length_rejected(self):
        with pytest.raises(ConfigError):
            build_model("UNI", 4, 32, 7, 2)


class TestForwardTrain:
    def test_loss_components_are_finite_scalars(self):
        model = small_model()
        losses = forward_train(model, small_recording(), SEEDS, 0.5, 1.0)
        assert set(losses) == {
            "decomposition",
            "fidelity",
            "consistency",
            "classification",
        }
        for value in losses.values():
            assert value.data.shape == ()
            assert np.isfinite(value.item())
            assert value.item() >= 0.0

    def test_forward_is_deterministic(self):
        model_a = small_model(seed=2)
        model_b = small_model(seed=2)
        rec = small_recording(seed=4)
        la = forward_train(model_a, rec, SEEDS, 0.5, 1.0)
        lb = forward_train(model_b, rec, SEEDS, 0.5, 1.0)
        for key in la:
            assert la[key].item() == lb[key].item()

    def test_mask_seeds_change_imputation_losses(self):
        rec = small_recording(seed=4)
        la = forward_train(small_model(), rec, SEEDS, 0.5, 1.0)
        other = ([0, 9001, 1, 0, 0], [0, 9001, 1, 0, 1])
        lb = forward_train(small_model(), rec, other, 0.5, 1.0)
        assert la["fidelity"].item() != lb["fidelity"].item()

    def test_imp_variant_has_zero_imputation_losses(self):
        model = grid_model("IMP")
        losses = forward_train(model, grid_recording(), SEEDS, 0.5, 1.0)
        assert losses["fidelity"].item() == 0.0
        assert losses["consistency"].item() == 0.0
        assert losses["classification"].item() > 0.0

    def test_dec_variant_has_zero_decomposition_loss(self):
        model = grid_model("DEC")
        losses = forward_train(model, grid_recording(), SEEDS, 0.5, 1.0)
        assert losses["decomposition"].item() == 0.0
        assert losses["fidelity"].item() > 0.0

    def test_full_equals_native_on_complete_recordings(self):
        # A complete recording in canonical order makes spatial
        # unification an exact reordering, so the two variants see the
        # same numbers everywhere downstream.
        rec = grid_recording(seed=11)
        la = forward_train(grid_model("full", seed=7), rec, SEEDS, 0.5, 1.0)
        lb = forward_train(grid_model("UNI", seed=7), rec, SEEDS, 0.5, 1.0)
        for key in la:
            assert la[key].item() == lb[key].item()

    def test_channel_mismatch_rejected(self):
        model = small_model()
        rng = np.random.default_rng(0)
        rec = EEGRecording(
            samples=rng.normal(size=(32, 6)),
            channel_names=tuple("abcdef"),
            sample_rate_hz=64.0,
            label=0,
        )
        with pytest.raises(ContractError):
            forward_train(model, rec, SEEDS, 0.5, 1.0)


class TestInfer:
    def test_prediction_contract(self):
        pred = infer(small_model(), small_recording())
        assert isinstance(pred, Prediction)
        assert pred.probabilities.shape == (2,)
        np.testing.assert_allclose(pred.probabilities.sum(), 1.0, atol=1e-12)
        assert pred.label == int(np.argmax(pred.probabilities))
        assert pred.features.ndim == 1
        assert pred.imputed_channels == ()

    def test_inference_is_deterministic(self):
        model = small_model(seed=9)
        rec = small_recording(seed=3, missing=("b",))
        a = infer(model, rec)
        b = infer(model, rec)
        assert a.label == b.label
        np.testing.assert_array_equal(a.probabilities, b.probabilities)

    def test_missing_channels_are_reported(self):
        model = small_model()
        pred = infer(model, small_recording(missing=("b", "d")))
        assert pred.imputed_channels == (1, 3)

    def test_missing_channels_change_the_output(self):
        model = small_model()
        clean = infer(model, small_recording(seed=6))
        holed = infer(model, small_recording(seed=6, missing=("a", "c")))
        assert not np.array_equal(clean.probabilities, holed.probabilities)

    def test_signal_only_variant_skips_imputation(self):
        pred = infer(small_model("DEC"), small_recording(missing=("a",)))
        assert pred.imputed_channels == ()
        np.testing.assert_allclose(pred.probabilities.sum(), 1.0, atol=1e-12)

    def test_geometry_mismatch_rejected(self):
        model = small_model()
        rng = np.random.default_rng(0)
        wrong_len = EEGRecording(
            samples=rng.normal(size=(16, 4)),
            channel_names=("a", "b", "c", "d"),
            sample_rate_hz=64.0,
            label=0,
        )
        with pytest.raises(ContractError):
            infer(model, wrong_len)
