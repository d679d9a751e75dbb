"""The assembled pipeline: unify, encode, factorize, impute, classify.

A ModelBundle owns every parameter group and knows, per ablation variant,
which stages run. Training forwards build the losses for one recording;
inference runs the reduced pipeline that skips spatial unification and
random masking, filling only channels flagged missing.

Two training details matter. First, the imputation context is the
encoding of the recording with the masked channels zeroed out in signal
space, while the fidelity target is the encoding of the intact
recording. Feeding the intact encoding as context would let attention
copy each hidden row straight out of the keys, a shortcut that recovers
nothing at test time when those channels are truly absent. Second, the
classification loss reads the reconstruction of the clean encoding;
imputed features reach the classifier only at inference, by which point
fidelity training has aligned them with the clean ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .classifier import classify, cross_entropy, make_classifier_params
from .decomposition import (
    PatternProjection,
    decomposition_loss,
    encode_patch,
    make_encoder_params,
    make_pattern_pool,
    reconstruct,
    select_pattern,
)
from .errors import ConfigError, ContractError
from .imputer import (
    apply_mask,
    consistency_loss,
    fidelity_loss,
    impute,
    make_imputer_params,
    make_mask,
    mask_from_rows,
)
from .montage import add_positional_embedding, patchify, unify
from .numerics import Tensor

VARIANTS = ("full", "IMP", "DEC", "UNI")


@dataclass(frozen=True)
class VariantWiring:
    """Which pipeline stages a variant runs."""

    unify_layout: bool
    decomposition: bool
    imputation: bool
    classify_reconstruction: bool


def wire_variant(variant):
    """Stage switches for each ablation variant."""
    if variant == "full":
        return VariantWiring(True, True, True, True)
    if variant == "IMP":
        # factorization only: no masking, no imputation losses
        return VariantWiring(True, True, False, True)
    if variant == "DEC":
        # no factorization: classifier reads the signal directly
        return VariantWiring(True, False, True, False)
    if variant == "UNI":
        # native channel count, no grid interpolation
        return VariantWiring(False, True, True, True)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class ModelBundle:
    """All parameter groups plus the geometry they were built for."""

    encoder: object
    pool: object
    proj: PatternProjection
    imputer: object
    classifier: object
    variant: str
    num_channels: int
    patch_len: int
    input_len: int
    pos_dim: int
    embed_dim: int
    num_classes: int

    def parameters(self):
        """Stable (name, tensor) ordering shared by optimizer and disk."""
        out = []
        for kind in ("trend", "season", "resid"):
            out.append((f"pool/{kind}", getattr(self.pool, kind)))
        out.extend((f"encoder/{n}", t) for n, t in self.encoder.tensors())
        out.extend((f"imputer/{n}", t) for n, t in self.imputer.tensors())
        out.extend((f"classifier/{n}", t) for n, t in self.classifier.tensors())
        return out

    def wiring(self):
        return wire_variant(self.variant)


def build_model(
    variant,
    num_channels,
    input_len,
    patch_len,
    num_classes,
    embed_dim=16,
    pos_dim=8,
    num_heads=2,
    imputer_blocks=2,
    pool_trainable=True,
    seed=0,
):
    """Construct every parameter group from one seed, wiring-agnostic.

    All variants of the same geometry and seed share identical initial
    parameters, so ablations differ only in which stages run.
    """
    wire_variant(variant)  # validate early
    if input_len % patch_len != 0:
        raise ConfigError(
            f"input length {input_len} not divisible by patch length {patch_len}"
        )
    n = num_channels
    return ModelBundle(
        encoder=make_encoder_params(
            n,
            patch_len,
            pos_dim,
            embed_dim,
            num_heads=num_heads,
            seed=np.random.default_rng([seed, 1]).integers(1 << 31),
        ),
        pool=make_pattern_pool(
            embed_dim,
            patch_len,
            seed=np.random.default_rng([seed, 2]).integers(1 << 31),
            trainable=pool_trainable,
        ),
        proj=PatternProjection(n, embed_dim),
        imputer=make_imputer_params(
            n,
            embed_dim,
            num_blocks=imputer_blocks,
            seed=np.random.default_rng([seed, 3]).integers(1 << 31),
        ),
        classifier=make_classifier_params(
            n,
            input_len,
            num_classes,
            seed=np.random.default_rng([seed, 4]).integers(1 << 31),
        ),
        variant=variant,
        num_channels=n,
        patch_len=patch_len,
        input_len=input_len,
        pos_dim=pos_dim,
        embed_dim=embed_dim,
        num_classes=num_classes,
    )


def _prepare(model, recording):
    """Unify the layout if the variant asks for it; check geometry."""
    wiring = model.wiring()
    rec = unify(recording) if wiring.unify_layout else recording
    if rec.num_channels != model.num_channels:
        raise ContractError(
            f"recording has {rec.num_channels} channels, model expects "
            f"{model.num_channels}"
        )
    if rec.num_samples != model.input_len:
        raise ContractError(
            f"recording has {rec.num_samples} samples, model expects "
            f"{model.input_len}"
        )
    return rec


def _encode_all(model, samples):
    """Patch the (T x n) array and encode each patch. Returns (ps, [H])."""
    ps = add_positional_embedding(
        patchify(_RecordingView(samples), model.patch_len), dim=model.pos_dim
    )
    return ps, [
        encode_patch(ps.patches[i], ps, model.encoder) for i in range(ps.num_patches)
    ]


class _RecordingView:
    """Duck-typed minimal stand-in so patchify can slice a raw array."""

    def __init__(self, samples):
        self.samples = np.asarray(samples, dtype=np.float64)


def _zero_channels(samples, rows):
    out = samples.copy()
    if rows:
        out[:, list(rows)] = 0.0
    return out


def _classifier_route(model, ps_corrupt, features_imputed):
    """Rebuild the signal from imputed features and selected patterns."""
    n, L = model.num_channels, model.patch_len
    parts = []
    for i, H in enumerate(features_imputed):
        content = ps_corrupt.patches[i, : ps_corrupt.content_dim]
        if np.linalg.norm(content) == 0.0:
            pattern = model.pool.trend
        else:
            kind, _ = select_pattern(content, model.pool, model.proj)
            pattern = getattr(model.pool, kind)
        parts.append(reconstruct(H, pattern, model.proj).reshape((L, n)))
    return nx.concat(parts, axis=0)  # T x n


def forward_train(model, recording, mask_seeds, mask_ratio, lambda_cons):
    """All loss components for one recording; returns tensors by name.

    ``mask_seeds`` is a pair of seeds for the two mask views. Stages the
    variant disables contribute exact zeros.
    """
    wiring = model.wiring()
    rec = _prepare(model, recording)
    ps_clean, H_clean = _encode_all(model, rec.samples)
    zero = Tensor(0.0)

    loss_dec = zero
    if wiring.decomposition:
        contents, patterns = [], []
        for i in range(ps_clean.num_patches):
            content = ps_clean.patches[i, : ps_clean.content_dim]
            kind, _ = select_pattern(content, model.pool, model.proj)
            contents.append(content)
            patterns.append(getattr(model.pool, kind))
        loss_dec = decomposition_loss(contents, H_clean, patterns, model.proj)

    loss_fid, loss_cons = zero, zero
    view_results = []
    if wiring.imputation:
        specs = [
            make_mask(model.num_channels, mask_ratio, seed) for seed in mask_seeds
        ]
        for spec in specs:
            corrupted = _zero_channels(rec.samples, spec.masked_rows)
            _, H_ctx = _encode_all(model, corrupted)
            fid_terms = []
            results = []
            for i, ctx in enumerate(H_ctx):
                masked = apply_mask(ctx, spec, model.imputer.mask_token)
                result = impute(masked, ctx, model.imputer, spec)
                results.append(result)
                fid_terms.append(fidelity_loss(result, H_clean[i]))
            view_results.append(results)
            total = fid_terms[0]
            for term in fid_terms[1:]:
                total = total + term
            loss_fid = loss_fid + total * (1.0 / len(fid_terms))
        loss_fid = loss_fid * 0.5  # mean of the two views
        cons_terms = []
        for ra, rb in zip(view_results[0], view_results[1]):
            cons_terms.append(consistency_loss(ra, rb))
        total = cons_terms[0]
        for term in cons_terms[1:]:
            total = total + term
        loss_cons = total * (1.0 / len(cons_terms))

    if wiring.classify_reconstruction:
        # The classifier trains on the clean-encoding reconstruction;
        # fidelity pulls imputed rows toward that same clean encoding,
        # so at inference the imputed features land where the classifier
        # learned to look. Feeding half-imputed reconstructions instead
        # stalls classification early on, when imputed rows are noise.
        signal = _classifier_route(model, ps_clean, H_clean)
    else:
        signal = Tensor(rec.samples)
    probs = classify(signal, model.classifier)
    loss_cls = cross_entropy(probs, int(rec.label))

    return {
        "decomposition": loss_dec,
        "fidelity": loss_fid,
        "consistency": loss_cons,
        "classification": loss_cls,
    }


@dataclass(frozen=True)
class Prediction:
    """Inference output for one recording."""

    label: int
    probabilities: np.ndarray
    features: np.ndarray
    imputed_channels: tuple


def infer(model, recording):
    """Reduced pipeline: no unification, no random masks (deterministic).

    Channels flagged missing are rebuilt in feature space and re-rendered
    into the signal through the factorized reconstruction before the
    classifier runs. With nothing flagged, imputation is a copy-through.
    """
    wiring = model.wiring()
    if recording.num_channels != model.num_channels:
        raise ContractError(
            f"recording has {recording.num_channels} channels, model expects "
            f"{model.num_channels}"
        )
    if recording.num_samples != model.input_len:
        raise ContractError(
            f"recording has {recording.num_samples} samples, model expects "
            f"{model.input_len}"
        )
    name_to_idx = {n: i for i, n in enumerate(recording.channel_names)}
    missing_rows = tuple(
        sorted(name_to_idx[n] for n in recording.missing_channels)
    )
    samples = _zero_channels(recording.samples, missing_rows)

    if not wiring.classify_reconstruction:
        probs, feats = classify(samples, model.classifier, return_features=True)
        data = probs.data
        return Prediction(int(np.argmax(data)), data.copy(), feats.data.copy(), ())

    ps, H_ctx = _encode_all(model, samples)
    if wiring.imputation and missing_rows:
        spec = mask_from_rows(model.num_channels, missing_rows)
        imputed = []
        for ctx in H_ctx:
            masked = apply_mask(ctx, spec, model.imputer.mask_token)
            imputed.append(impute(masked, ctx, model.imputer, spec).H_tilde)
    else:
        imputed = H_ctx
    signal = _classifier_route(model, ps, imputed)
    probs, feats = classify(signal, model.classifier, return_features=True)
    data = probs.data
    filled = missing_rows if (wiring.imputation and missing_rows) else ()
    return Prediction(int(np.argmax(data)), data.copy(), feats.data.copy(), filled)
